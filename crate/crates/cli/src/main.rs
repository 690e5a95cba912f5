mod func;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use quasimiura::catalog::{get_entry, CatalogEntry, Params, ENTRY_NAMES};
use quasimiura::expr::{Expr, Q};
use quasimiura::hodograph::KdvStudy;
use quasimiura::io::{export_entry, read_pencil, read_transform, write_transform};
use quasimiura::lame::{casimir, chi_residual, reconstruct, solve_chi, solve_lame_n2, Grid2};
use quasimiura::miura::{pencil_residual, reduce_pencil, reduce_system, AnsatzConfig, MiuraError, MiuraTransform};
use quasimiura::pencil::{BasePoint, PoissonPencil};

use func::LineFn;
use report::{Format, Report};

#[derive(Parser, Debug)]
#[command(name = "quasimiura", version, about = "Check, classify and reduce deformed bihamiltonian pencils")]
struct Cli {
    /// Truncation order in the deformation parameter (meaning depends on the command).
    #[arg(long, global = true)]
    order: Option<usize>,
    /// Point used for numerical root finding, e.g. "w=1, c=0.5".
    #[arg(long, global = true)]
    base_point: Option<String>,
    /// Tolerance of the numerical verdicts.
    #[arg(long, global = true, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Where to write the main artifact of the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Source {
    /// Pencil file.
    file: Option<PathBuf>,
    /// Catalog entry instead of a file, e.g. `kdv`, `kdv(1/24)`, `kdv-ch(1,0,1,1,2)`.
    #[arg(long, conflicts_with = "file")]
    entry: Option<String>,
    /// Catalog parameter `name=value` (rational), repeatable.
    #[arg(long = "param")]
    params: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Antisymmetry, Jacobi identity, compatibility and grading of a pencil.
    Check(Source),
    /// Canonical coordinates and central invariants.
    Invariants(Source),
    /// Search for a reducing transformation through `--order` (default 2).
    Reduce {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        ansatz_jet: Option<u32>,
        #[arg(long)]
        ansatz_den: Option<u32>,
        #[arg(long, value_enum, default_value_t = Switch::On)]
        ansatz_logs: Switch,
    },
    /// Apply a transformation to a pencil (and the entry's system) and report the residual order.
    VerifyTransform {
        #[command(flatten)]
        source: Source,
        /// Transform file; defaults to the transformation stored with `--entry`.
        #[arg(long)]
        transform: Option<PathBuf>,
    },
    /// List catalog entries or export one as pencil and transform files.
    Catalog {
        /// Entry to export; with `--out DIR` both files are written there.
        #[arg(long)]
        export: Option<String>,
        #[arg(long = "param")]
        params: Vec<String>,
        /// Which file goes to standard output when `--out` is absent.
        #[arg(long, value_enum, default_value_t = Part::Pencil)]
        part: Part,
    },
    /// Perturbative KdV solutions from the hodograph field against a reference integrator.
    Hodograph {
        /// Dispersion parameter of the KdV pencil.
        #[arg(long, default_value = "1/24")]
        c: String,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.025")]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 0.5)]
        t: f64,
        /// Initial data `slope * x + amplitude * sin x` on a 2 pi window.
        #[arg(long, default_value_t = 1.0)]
        slope: f64,
        #[arg(long, default_value_t = 0.5)]
        amplitude: f64,
        #[arg(long, default_value_t = 512)]
        grid: usize,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
    },
    /// Two-component pencils from Lamé data: rotation coefficients, metrics, flat coordinates.
    Lame {
        #[arg(long, value_delimiter = ',', default_value = "4,1.5")]
        u0: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,1")]
        extent: Vec<f64>,
        /// Nodes per axis.
        #[arg(long, default_value_t = 129)]
        n: usize,
        /// gamma_12 along u1 = u1_0, in `u2`.
        #[arg(long, default_value = "0.3*sin(2*u2) + 0.1")]
        gamma12: String,
        /// gamma_21 along u2 = u2_0, in `u1`.
        #[arg(long, default_value = "0.2*cos(u1) - 0.05*u1")]
        gamma21: String,
        /// chi_1 along u2 = u2_0, in `u1`.
        #[arg(long, default_value = "1")]
        chi1: String,
        /// chi_2 along u1 = u1_0, in `u2`.
        #[arg(long, default_value = "1")]
        chi2: String,
        /// Spectral values at which Casimirs are checked.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-1")]
        lambda: Vec<f64>,
        /// Also write the rotation coefficients as CSV.
        #[arg(long)]
        rotation_out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Part {
    Pencil,
    Transform,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<bool> {
    if cli.tol.is_nan() || cli.tol <= 0.0 {
        bail!("--tol must be positive");
    }
    let report = match &cli.cmd {
        Cmd::Check(src) => check(cli, src)?,
        Cmd::Invariants(src) => invariants(cli, src)?,
        Cmd::Reduce { source, ansatz_jet, ansatz_den, ansatz_logs } => {
            let cfg = AnsatzConfig { jet_bound: *ansatz_jet, den_bound: *ansatz_den, logs: *ansatz_logs == Switch::On, ..Default::default() };
            reduce(cli, source, &cfg)?
        }
        Cmd::VerifyTransform { source, transform } => verify(cli, source, transform.as_deref())?,
        Cmd::Catalog { export, params, part } => match export {
            None => {
                print!("{}", catalog_list());
                return Ok(true);
            }
            Some(spec) => {
                catalog_export(cli, spec, params, *part)?;
                return Ok(true);
            }
        },
        Cmd::Hodograph { c, eps, t, slope, amplitude, grid, steps } => {
            let study = KdvStudy { c: 0.0, eps: eps.clone(), t: *t, slope: *slope, amplitude: *amplitude, grid: *grid, steps: *steps };
            hodograph(cli, c, study)?
        }
        Cmd::Lame { u0, extent, n, gamma12, gamma21, chi1, chi2, lambda, rotation_out } => {
            let data = LameData { u0, extent, n: *n, gamma12, gamma21, chi1, chi2, lambda, rotation_out: rotation_out.as_deref() };
            lame(cli, &data)?
        }
    };
    Ok(report)
}

/// Prints the report (or writes it to `--out` when the command has no other artifact).
fn emit(cli: &Cli, r: &Report, out_is_report: bool) -> Result<bool> {
    let text = r.render(cli.format);
    match (&cli.out, out_is_report) {
        (Some(path), true) => write(path, &text)?,
        _ => print!("{text}"),
    }
    Ok(r.passed())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn parse_params(items: &[String]) -> Result<Params> {
    let mut p = Params::new();
    for it in items {
        let (k, v) = it.split_once('=').ok_or_else(|| anyhow!("parameter `{it}` is not of the form name=value"))?;
        let q: Q = v.trim().parse().map_err(|e| anyhow!("parameter `{it}`: {e}"))?;
        p.insert(k.trim().to_string(), q);
    }
    Ok(p)
}

fn parse_base_point(text: &str) -> Result<BasePoint> {
    let mut bp = BasePoint::new();
    for it in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = it.split_once('=').ok_or_else(|| anyhow!("base point item `{it}` is not of the form name=value"))?;
        let x: f64 = v.trim().parse().with_context(|| format!("base point item `{it}`"))?;
        bp.insert(k.trim().to_string(), x);
    }
    Ok(bp)
}

struct Loaded {
    label: String,
    pencil: PoissonPencil,
    expected: Option<Vec<Expr>>,
    entry: Option<CatalogEntry>,
}

fn load(cli: &Cli, src: &Source) -> Result<Loaded> {
    let mut l = match (&src.file, &src.entry) {
        (Some(path), None) => {
            if !src.params.is_empty() {
                bail!("--param applies to catalog entries only");
            }
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            let pf = read_pencil(&text).with_context(|| format!("{}", path.display()))?;
            Loaded { label: path.display().to_string(), pencil: pf.pencil, expected: pf.expected, entry: None }
        }
        (None, Some(spec)) => {
            let e = get_entry(spec, &parse_params(&src.params)?)?;
            Loaded { label: format!("catalog entry {}", e.name), pencil: e.pencil.clone(), expected: Some(e.expected_invariants.clone()), entry: Some(e) }
        }
        _ => bail!("give a pencil file or --entry NAME"),
    };
    if let Some(bp) = &cli.base_point {
        let bp = parse_base_point(bp)?;
        let target = match &mut l.pencil.coords {
            Some(h) => &mut h.base_point,
            None => &mut l.pencil.base_point,
        };
        target.extend(bp);
    }
    Ok(l)
}

fn eps_pow(k: usize) -> String {
    const SUP: [char; 10] = ['⁰', '¹', '²', '³', '⁴', '⁵', '⁶', '⁷', '⁸', '⁹'];
    let digits: String = k.to_string().chars().map(|c| SUP[c.to_digit(10).unwrap() as usize]).collect();
    format!("ε{digits}")
}

fn check(cli: &Cli, src: &Source) -> Result<bool> {
    let l = load(cli, src)?;
    let p = &l.pencil;
    let top = cli.order.unwrap_or(p.top());
    let mut r = Report::new("check");
    r.row("input", &l.label);
    r.row("variables", p.vars().join(", "));
    if !p.params.is_empty() {
        r.row("parameters", p.params.join(", "));
    }
    r.row("through", eps_pow(top));
    r.row("grading", "ok");
    for a in [1usize, 2] {
        let b = p.bracket(a);
        let anti = b.antisymmetry_failures();
        r.row(format!("P{a} antisymmetry failures"), anti.len());
        r.verdict(format!("P{a} antisymmetric"), anti.is_empty());
        let jac = b.jacobi(top);
        let bad: Vec<String> = jac.iter().enumerate().filter(|(_, t)| !t.is_zero()).map(|(m, _)| eps_pow(m)).collect();
        r.row(format!("P{a} Jacobi residual nonzero at"), if bad.is_empty() { "none".into() } else { bad.join(" ") });
        r.verdict(format!("P{a} Jacobi identity"), bad.is_empty());
    }
    let comp = p.p1.compatibility(&p.p2, top);
    let bad: Vec<String> = comp.iter().enumerate().filter(|(_, t)| !t.is_zero()).map(|(m, _)| eps_pow(m)).collect();
    r.row("[P1, P2] nonzero at", if bad.is_empty() { "none".into() } else { bad.join(" ") });
    r.verdict("compatibility", bad.is_empty());
    emit(cli, &r, true)
}

fn invariants(cli: &Cli, src: &Source) -> Result<bool> {
    let l = load(cli, src)?;
    let ci = l.pencil.central_invariants()?;
    let mut r = Report::new("invariants");
    r.row("input", &l.label);
    r.row("working coordinates", ci.diag.vars.join(", "));
    for (name, u) in ci.u_names.iter().zip(&ci.diag.u) {
        r.row("canonical coordinate", format!("{name} = {u}"));
    }
    for line in ci.describe() {
        r.row("central invariant", line);
    }
    if let Some(exp) = &l.expected {
        r.verdict("central invariants match the expected values", ci.matches(exp)?);
    }
    emit(cli, &r, true)
}

fn reduce(cli: &Cli, src: &Source, cfg: &AnsatzConfig) -> Result<bool> {
    let l = load(cli, src)?;
    let top = cli.order.unwrap_or(2);
    let mut r = Report::new("reduce");
    r.row("input", &l.label);
    r.row("target", eps_pow(top));
    r.row("ansatz", format!("jet bound {}, denominator bound {}, logs {}", opt(cfg.jet_bound), opt(cfg.den_bound), if cfg.logs { "on" } else { "off" }));
    match reduce_pencil(&l.pencil, top, cfg) {
        Ok(rep) => {
            for s in &rep.solves {
                r.row(
                    format!("order {}", s.k),
                    format!(
                        "{} unknowns, {} equations, kernel dimension {}, zero admissible {}, logarithm {}",
                        s.unknowns(),
                        s.equations,
                        s.kernel_dim(),
                        yes(s.zero_admissible),
                        yes(s.log_used)
                    ),
                );
            }
            let check = pencil_residual(&rep.transform, &l.pencil, top)?;
            r.row("achieved", eps_pow(rep.achieved));
            r.verdict(format!("reduced through {}", eps_pow(top)), rep.achieved >= top);
            r.verdict("transformed pencil residual vanishes", check.first_nonzero.is_none());
            let file = write_transform(&rep.transform);
            match &cli.out {
                Some(path) => {
                    write(path, &file)?;
                    r.row("transform written to", path.display());
                }
                None if cli.format == Format::Text => r.tail(&file),
                None => {}
            }
        }
        Err(e @ (MiuraError::AnsatzTooSmall { .. } | MiuraError::JetOrder { .. })) => {
            r.row("failure", e);
            r.verdict(format!("reduced through {}", eps_pow(top)), false);
        }
        Err(e) => return Err(e.into()),
    }
    emit(cli, &r, false)
}

fn opt(x: Option<u32>) -> String {
    x.map_or("default".into(), |v| v.to_string())
}

fn yes(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn verify(cli: &Cli, src: &Source, transform: Option<&Path>) -> Result<bool> {
    let l = load(cli, src)?;
    let t: MiuraTransform = match (transform, &l.entry) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            read_transform(&text).with_context(|| format!("{}", path.display()))?
        }
        (None, Some(e)) => e.transform.clone().ok_or_else(|| anyhow!("entry {} has no stored transformation", e.name))?,
        (None, None) => bail!("give --transform FILE"),
    };
    let top = cli.order.unwrap_or(t.top() + 2);
    let mut r = Report::new("verify-transform");
    r.row("input", &l.label);
    r.row("transform order", eps_pow(t.top()));
    r.row("checked through", eps_pow(top));
    let pr = pencil_residual(&t, &l.pencil, top)?;
    match pr.first_nonzero {
        Some(k) => r.row("pencil", format!("residual first nonzero at {}", eps_pow(k))),
        None => r.row("pencil", format!("residual zero through {}", eps_pow(top))),
    }
    r.verdict(
        format!("pencil reduced through {}", eps_pow(t.top().min(top))),
        pr.first_nonzero.is_none_or(|k| k > t.top()),
    );
    if let Some(sys) = l.entry.as_ref().and_then(|e| e.system.as_ref()) {
        let st = t.top().min(sys.top());
        let sr = reduce_system(sys, &t, st)?;
        match sr.first_nonzero {
            Some(k) => r.row("system", format!("residual first nonzero at {}", eps_pow(k))),
            None => r.row("system", format!("residual zero through {}", eps_pow(st))),
        }
        r.verdict(format!("system reduced through {}", eps_pow(st)), sr.first_nonzero.is_none());
    }
    emit(cli, &r, true)
}

const CATALOG_HELP: &[(&str, &str)] = &[
    ("kdv", "kdv or kdv(c); KdV pencil, c symbolic when omitted"),
    ("ch", "ch; Camassa-Holm pencil"),
    ("kdv-ch", "kdv-ch(n,k,l,a0,...,an); multicomponent KdV/CH family"),
    ("nls", "nls; two-component pencil of NLS type"),
    ("two-ch", "two-ch; two-component Camassa-Holm pencil"),
    ("boussinesq", "boussinesq; two-component Boussinesq pencil"),
    ("ito-variant", "ito-variant; two-component Ito-type pencil"),
    ("gas", "gas or gas(kappa); polytropic gas pencil, kappa symbolic when omitted"),
];

fn catalog_list() -> String {
    debug_assert_eq!(CATALOG_HELP.len(), ENTRY_NAMES.len());
    CATALOG_HELP.iter().map(|(n, d)| format!("{n:<12} {d}\n")).collect()
}

fn catalog_export(cli: &Cli, spec: &str, params: &[String], part: Part) -> Result<()> {
    let e = get_entry(spec, &parse_params(params)?)?;
    let (pencil, transform) = export_entry(&e);
    let Some(dir) = &cli.out else {
        match part {
            Part::Pencil => print!("{pencil}"),
            Part::Transform => print!("{}", transform.ok_or_else(|| anyhow!("entry {} has no stored transformation", e.name))?),
        }
        return Ok(());
    };
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut r = Report::new("catalog");
    let pp = dir.join(format!("{}.pencil", e.name));
    write(&pp, &pencil)?;
    r.row("pencil", pp.display());
    if let Some(t) = transform {
        let tp = dir.join(format!("{}.transform", e.name));
        write(&tp, &t)?;
        r.row("transform", tp.display());
    }
    print!("{}", r.render(cli.format));
    Ok(())
}

fn hodograph(cli: &Cli, c: &str, mut study: KdvStudy) -> Result<bool> {
    let cq: Q = c.trim().parse().map_err(|e| anyhow!("--c: {e}"))?;
    study.c = cq.to_f64();
    let top = cli.order.unwrap_or(2);
    let entry = quasimiura::catalog::kdv(Some(cq))?;
    let t = entry.transform.ok_or_else(|| anyhow!("KdV entry without transformation"))?;
    if top > t.top() {
        bail!("the stored KdV transformation stops at {}", eps_pow(t.top()));
    }
    let rep = study.run(&t, top)?;
    let csv = format!("{}# fitted order p = {:.6}, C = {:.6e}\n", rep.to_csv(), rep.p, rep.c);
    if let Some(path) = &cli.out {
        write(path, &csv)?;
    }
    let target = top as f64 + 1.5;
    if cli.format == Format::Csv && cli.out.is_none() {
        print!("{csv}");
        return Ok(rep.p >= target);
    }
    let mut r = Report::new("hodograph");
    r.row("equation", format!("w_t + w w_x + {} eps^2 w_xxx = 0", 2.0 * study.c));
    r.row("data", format!("{} x + {} sin x at t = 0, compared at t = {}", study.slope, study.amplitude, study.t));
    r.row("transformation truncated at", eps_pow(top));
    for row in &rep.rows {
        r.row(format!("eps = {}", row.eps), format!("error {:.6e}, reference self-convergence {:.2e}", row.error, row.reference_self_convergence));
    }
    r.row("fitted order", format!("{:.4}", rep.p));
    r.verdict(format!("order at least {target}"), rep.p >= target);
    if let Some(path) = &cli.out {
        r.row("csv written to", path.display());
    }
    emit(cli, &r, false)
}

struct LameData<'a> {
    u0: &'a [f64],
    extent: &'a [f64],
    n: usize,
    gamma12: &'a str,
    gamma21: &'a str,
    chi1: &'a str,
    chi2: &'a str,
    lambda: &'a [f64],
    rotation_out: Option<&'a Path>,
}

/// Fixed bound on the Lamé residual; the geometric checks use `--tol`.
const LAME_TOL: f64 = 1e-8;

fn pair(v: &[f64], what: &str) -> Result<[f64; 2]> {
    match v {
        [a, b] => Ok([*a, *b]),
        _ => bail!("--{what} takes two comma-separated numbers"),
    }
}

fn lame(cli: &Cli, d: &LameData) -> Result<bool> {
    let grid = Grid2::new(pair(d.u0, "u0")?, pair(d.extent, "extent")?, [d.n, d.n])?;
    let g12 = LineFn::parse(d.gamma12, "u2")?;
    let g21 = LineFn::parse(d.gamma21, "u1")?;
    let c1 = LineFn::parse(d.chi1, "u1")?;
    let c2 = LineFn::parse(d.chi2, "u2")?;
    let rot = solve_lame_n2(grid, |x| g12.eval(x), |x| g21.eval(x))?;
    let res = rot.residual();
    let chi = solve_chi(&rot, |x| c1.eval(x), |x| c2.eval(x))?;
    let chi_res = chi_residual(&rot, &chi);
    let mut cas = Vec::new();
    for &lam in d.lambda {
        let (_, h) = casimir(&rot, &chi, lam, [1.0, 0.0])?;
        cas.push((lam, h));
    }
    let rec = reconstruct(&rot, chi)?;
    let tol = cli.tol;
    let mut r = Report::new("lame");
    r.row("grid", format!("u0 = ({}, {}), extent = ({}, {}), {} x {} nodes", grid.u0[0], grid.u0[1], d.extent[0], d.extent[1], d.n, d.n));
    r.row("Lamé residual", format!("{:.3e} (flat), {:.3e} (homogeneous)", res.flat, res.homogeneous));
    r.row("chi residual", format!("{chi_res:.3e}"));
    r.row("curvature", format!("{:.3e} (g1), {:.3e} (g2)", rec.curvature[0], rec.curvature[1]));
    r.row("flat coordinates", format!("constancy {:.3e}, {:.3e}; hessian {:.3e}, {:.3e}", rec.constancy[0], rec.constancy[1], rec.hessian[0], rec.hessian[1]));
    r.verdict(format!("Lamé residual below {LAME_TOL:e}"), res.flat < LAME_TOL && res.homogeneous < LAME_TOL);
    r.verdict(format!("metrics flat to {tol:e}"), rec.curvature[0] < tol && rec.curvature[1] < tol);
    r.verdict(
        format!("flat coordinates to {tol:e}"),
        rec.constancy.iter().chain(&rec.hessian).all(|x| *x < tol),
    );
    for (lam, h) in cas {
        r.row(format!("Casimir at lambda = {lam}"), format!("hessian {h:.3e}"));
        r.verdict(format!("Casimir at lambda = {lam}"), h < tol);
    }
    if let Some(path) = d.rotation_out {
        write(path, &rot.to_csv())?;
        r.row("rotation coefficients written to", path.display());
    }
    let csv = rec.to_csv();
    if let Some(path) = &cli.out {
        write(path, &csv)?;
        r.row("pencil written to", path.display());
    } else if cli.format == Format::Csv {
        print!("{csv}");
        return Ok(r.passed());
    }
    emit(cli, &r, false)
}
