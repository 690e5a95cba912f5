//! Acceptance checks, one line per criterion. Runs without the test harness so the
//! lines always reach the output; exits nonzero on any failure outside `KNOWN_FAILURES`.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::*;
use quasimiura::catalog::{ch, get_entry, gas, kdv, CatalogEntry, Params};
use quasimiura::expr::{parse, Expr, Q};
use quasimiura::hodograph::{pde_residual, solve_hodograph, Jets, KdvStudy, NumMap, Pipeline, Taylor1};
use quasimiura::lame::{reconstruct, solve_chi, solve_lame_n2, Grid2, RotationField};
use quasimiura::miura::{apply_to_pencil, pencil_residual, reduce_pencil, reduce_system, AnsatzConfig};
use quasimiura::pencil::{BasePoint, PoissonPencil};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Criteria that fail for reasons recorded in the notes: the gas eps^4 first
/// bracket needs a second-order generator that is not available in usable form.
const KNOWN_FAILURES: &[usize] = &[6];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn entry(spec: &str) -> CatalogEntry {
    get_entry(spec, &Params::new()).unwrap_or_else(|e| panic!("{spec}: {e}"))
}

fn bracket_entries() -> Vec<CatalogEntry> {
    let mut v = vec![kdv(None).unwrap(), ch().unwrap()];
    for s in [
        "kdv-ch(1,1,0,0,1)",
        "kdv-ch(1,1,0,-1,0)",
        "kdv-ch(2,2,1,0,0,-8)",
        "kdv-ch(2,2,1,1,2,3)",
        "kdv-ch(2,1,0,0,1,0)",
        "kdv-ch(2,0,2,1,0,1)",
        "nls",
        "two-ch",
        "boussinesq",
        "ito-variant",
    ] {
        v.push(entry(s));
    }
    v.push(gas(None).unwrap());
    v
}

fn all_zero(r: &[quasimiura::localgeom::TrivectorResidual]) -> bool {
    r.iter().all(|t| t.is_zero())
}

fn c1_brackets() -> Outcome {
    let start = Instant::now();
    let mut bad = Vec::new();
    let mut n = 0;
    for e in bracket_entries() {
        let p = &e.pencil;
        n += 1;
        for (a, b) in [(1, &p.p1), (2, &p.p2)] {
            if !b.antisymmetry_failures().is_empty() {
                bad.push(format!("{} P{a} antisymmetry", e.name));
            }
            if !all_zero(&b.jacobi(e.truncation)) {
                bad.push(format!("{} P{a} Jacobi", e.name));
            }
        }
    }
    let g = gas(None).unwrap();
    let mixed = g.pencil.p1.compatibility(&g.pencil.p2, 4);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        bad.is_empty() && secs < 300.0,
        format!(
            "{n} entries, every transcribed order; gas mixed compatibility at eps^4 {}; {secs:.1} s{}",
            if mixed[4].is_zero() { "vanishes" } else { "nonzero" },
            if bad.is_empty() { String::new() } else { format!("; failures: {}", bad.join(", ")) }
        ),
    )
}

fn c2_compatibility() -> Outcome {
    let mut ok = true;
    for e in [kdv(None).unwrap(), ch().unwrap()] {
        ok &= all_zero(&e.pencil.p1.compatibility(&e.pencil.p2, e.truncation));
    }
    outcome(ok, "kdv (symbolic c) and ch, exact")
}

fn c3_invariants() -> Outcome {
    let mut bad = Vec::new();
    let mut shown = Vec::new();
    let entries = [
        kdv(None).unwrap(),
        ch().unwrap(),
        entry("nls"),
        entry("boussinesq"),
        entry("two-ch"),
        entry("ito-variant"),
        entry("kdv-ch(2,2,1,1,2,3)"),
        entry("kdv-ch(2,0,2,1,0,1)"),
        gas(None).unwrap(),
    ];
    for e in &entries {
        let ci = e.pencil.central_invariants().unwrap();
        if !ci.matches(&e.expected_invariants).unwrap() {
            bad.push(e.name.clone());
        }
        if ["kdv", "ch", "gas"].contains(&e.name.as_str()) {
            shown.push(format!("{}: {}", e.name, ci.describe().join(", ")));
        }
    }
    outcome(bad.is_empty(), format!("{} entries ({}){}", entries.len(), shown.join("; "), fail_list(&bad)))
}

fn fail_list(bad: &[String]) -> String {
    if bad.is_empty() {
        String::new()
    } else {
        format!("; mismatches: {}", bad.join(", "))
    }
}

fn c4_transforms() -> Outcome {
    let k = kdv(None).unwrap();
    let kr = pencil_residual(k.transform.as_ref().unwrap(), &k.pencil, 6).unwrap();
    let c = ch().unwrap();
    let cr = pencil_residual(c.transform.as_ref().unwrap(), &c.pencil, 4).unwrap();
    let g = gas(None).unwrap();
    let gt = g.transform.as_ref().unwrap();
    let gs = reduce_system(g.system.as_ref().unwrap(), gt, 2).unwrap();
    let gp = pencil_residual(gt, &g.pencil, 2).unwrap();
    let pass = kr.first_nonzero == Some(6) && cr.first_nonzero.is_none() && gs.first_nonzero.is_none() && gp.first_nonzero.is_none();
    outcome(
        pass,
        format!(
            "kdv first nonzero at eps^{}; ch {} through eps^4; gas system and pencil {} through eps^2",
            kr.first_nonzero.map_or("-".into(), |k| k.to_string()),
            if cr.first_nonzero.is_none() { "zero" } else { "nonzero" },
            if gs.first_nonzero.is_none() && gp.first_nonzero.is_none() { "zero" } else { "nonzero" },
        ),
    )
}

fn c5_reduction() -> Outcome {
    let start = Instant::now();
    let p = kdv(None).unwrap().pencil;
    let rep = match reduce_pencil(&p, 4, &AnsatzConfig::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("reduction failed: {e}")),
    };
    let f2 = parse("c*(v#3/v#1 - v#2^2/v#1^2)", &["v"], &["c"]).unwrap();
    let member = rep.solves[1].contains(&[f2]);
    let odd = rep.solves[2].zero_admissible;
    let res = pencil_residual(&rep.transform, &p, 4).unwrap().first_nonzero.is_none();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        member && odd && res && secs < 1800.0,
        format!("c d_x^2 log v_x in order-2 space: {member}; zero admissible at order 3: {odd}; residual zero through eps^4: {res}; {secs:.1} s"),
    )
}

fn c6_gas_hamiltonian() -> Outcome {
    let g = gas(None).unwrap();
    let h = g.hamiltonians.as_ref().unwrap();
    let sys = g.system.as_ref().unwrap();
    let r = g.pencil.p1.flow_residual(sys, &h.h[0], &h.factor[0].0, &h.factor[0].1, 4);
    let status: Vec<(usize, bool)> = [0usize, 2, 4].iter().map(|&m| (m, r[m].iter().all(|e| e.is_zero()))).collect();
    let text: Vec<String> = status.iter().map(|(m, ok)| format!("eps^{m} {}", if *ok { "holds" } else { "fails" })).collect();
    outcome(status.iter().all(|(_, ok)| *ok), format!("H1 flow with symbolic kappa: {}", text.join(", ")))
}

fn c7_sl2() -> Outcome {
    let mats = [("identity", [1, 0, 0, 1]), ("swap", [0, 1, 1, 0]), ("scaling", [2, 0, 0, 1])];
    let mut bad = Vec::new();
    for e in [kdv(None).unwrap(), ch().unwrap()] {
        for (name, m) in mats {
            let [a, b, c, d] = m.map(Q::from_int);
            match e.pencil.sl2_change(&a, &b, &c, &d) {
                Ok((_, rep)) if rep.holds => {}
                Ok(_) => bad.push(format!("{} {name}", e.name)),
                Err(err) => bad.push(format!("{} {name}: {err}", e.name)),
            }
        }
    }
    outcome(bad.is_empty(), format!("kdv and ch, three matrices each{}", fail_list(&bad)))
}

fn c8_miura_invariance() -> Outcome {
    let p = kdv(None).unwrap().pencil;
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let mut bad = Vec::new();
    for i in 0..5 {
        let t = random_transform(&mut r, &["w"], &["v"], 2);
        let q: PoissonPencil = apply_to_pencil(&t, &p, 2).unwrap();
        let ci = q.central_invariants().unwrap();
        if !ci.matches(&[Expr::param("c")]).unwrap() {
            bad.push(format!("map {i}: {}", ci.describe().join(", ")));
        }
    }
    outcome(bad.is_empty(), format!("5 random graded polynomial maps through eps^2, c1 = c{}", fail_list(&bad)))
}

fn c9_perturbation_order() -> Outcome {
    let k = kdv(Some(Q::new(1, 24))).unwrap();
    let t = k.transform.unwrap();
    let study = KdvStudy::default();
    let two = study.run(&t, 2).unwrap();
    let four = study.run(&t, 4).unwrap();
    let pass = two.p >= 3.5 && four.p - two.p >= 1.5;
    outcome(pass, format!("eps in {:?}: p = {:.3} (eps^2 transform), p = {:.3} (eps^4 transform)", study.eps, two.p, four.p))
}

fn c10_hodograph() -> Outcome {
    let id = NumMap::new(1, |u| vec![u[0]], |_| vec![vec![1.0]]);
    let xs: Vec<f64> = (0..41).map(|j| -1.0 + 0.05 * j as f64).collect();
    let ts: Vec<f64> = (0..21).map(|k| 0.05 * k as f64).collect();
    let hopf = solve_hodograph(&id, &id, &xs, &ts, (0.0, 0.0, &[0.0])).unwrap();
    let vars = sv(&["r1", "r2"]);
    let p = |t: &str| parse(t, &["r1", "r2"], &[]).unwrap();
    let bp = BasePoint::new();
    let v = NumMap::from_exprs(&[p("3/4*r1 + 1/4*r2"), p("1/4*r1 + 3/4*r2")], &vars, &bp).unwrap();
    let w = NumMap::from_exprs(&[p("5*r1^2 + 2*r1*r2 + r2^2 + r1"), p("r1^2 + 2*r1*r2 + 5*r2^2 + r2")], &vars, &bp).unwrap();
    let xs2: Vec<f64> = (0..41).map(|j| 0.2 + 0.01 * j as f64).collect();
    let ts2: Vec<f64> = (0..21).map(|k| 0.005 * k as f64).collect();
    let x0 = w.eval(&[0.3, 0.1])[0];
    let sw = solve_hodograph(&v, &w, &xs2, &ts2, (x0, 0.0, &[0.3, 0.1])).unwrap();
    let res = hopf.max_residual().max(sw.max_residual());
    let pde = pde_residual(&hopf, &id).unwrap().max(pde_residual(&sw, &v).unwrap());

    let k = kdv(Some(Q::new(1, 24))).unwrap();
    let t = k.transform.unwrap();
    let vf = Taylor1::from_expr(&parse("v", &["v"], &[]).unwrap(), "v", &BasePoint::new(), 8);
    let wf = Taylor1::arcsin();
    let xs3: Vec<f64> = (0..21).map(|j| -0.5 + 0.05 * j as f64).collect();
    let hd = solve_hodograph(&vf.to_map(), &wf.to_map(), &xs3, &[0.0, 0.25], (0.0, 0.0, &[0.0])).unwrap();
    let pl = Pipeline { transform: &t, params: BasePoint::new(), q: None };
    let jets = Jets::Exact { v: &vf, w: &wf };
    let exact = (0..2).all(|row| pl.row(&hd, row, 0.0, &jets).unwrap()[0] == hd.row(row, 0).unwrap());
    outcome(
        res < 1e-12 && pde < 1e-6 && exact,
        format!("pointwise residual {res:.1e}, PDE residual {pde:.1e}, eps = 0 pipeline identical to the field: {exact}"),
    )
}

fn generic(g: Grid2) -> RotationField {
    solve_lame_n2(g, |u2| 0.3 * (u2 * 2.0).sin() + 0.1, |u1| 0.2 * u1.cos() - 0.05 * u1).unwrap()
}

fn c11_lame() -> Outcome {
    let grid = |n: usize| Grid2::new([4.0, 1.5], [1.0, 1.0], [n, n]).unwrap();
    let g = grid(129);
    let rot = generic(g);
    let lr = rot.residual();
    let chi = solve_chi(&rot, |u1| 1.0 + 0.1 * u1, |u2| 0.8 + 0.05 * u2 * u2).unwrap();
    let rec = reconstruct(&rot, chi).unwrap();
    let curv = rec.curvature[0].max(rec.curvature[1]);

    let run = |g: Grid2| {
        let rot = generic(g);
        let chi = solve_chi(&rot, |u1| 1.0 + 0.1 * u1, |_| 1.0).unwrap();
        reconstruct(&rot, chi).unwrap()
    };
    let c = grid(33);
    let (a, b, d) = (run(c), run(c.refine()), run(c.refine().refine()));
    let mut order = f64::INFINITY;
    for s in 0..2 {
        for (fa, fb, fd) in [(&a.flat1[s], &b.flat1[s], &d.flat1[s]), (&a.flat2[s], &b.flat2[s], &d.flat2[s])] {
            let e1 = fa.zip(&fb.restrict(&c), |x, y| x - y).max_abs();
            let e2 = fb.restrict(&c).zip(&fd.restrict(&c), |x, y| x - y).max_abs();
            order = order.min((e1 / e2).log2());
        }
    }

    let z = solve_lame_n2(g, |_| 0.0, |_| 0.0).unwrap();
    let zchi = solve_chi(&z, |_| 1.0, |_| 1.0).unwrap();
    let trivial_data = z.g12.v.iter().chain(&z.g21.v).all(|x| *x == 0.0) && zchi[0].v.iter().chain(&zchi[1].v).all(|x| *x == 1.0);
    let zr = reconstruct(&z, zchi).unwrap();
    let trivial = trivial_data && zr.curvature[0] == 0.0 && zr.constancy[0] < 1e-12;

    outcome(
        lr.flat < 1e-8 && lr.homogeneous < 1e-8 && curv < 1e-6 && order > 3.5 && trivial,
        format!(
            "Lamé residual {:.1e}, curvature {curv:.1e}, flat-coordinate self-convergence order {order:.2} (scheme order 4), zero data trivial: {trivial}",
            lr.flat.max(lr.homogeneous)
        ),
    )
}

fn c12_properties() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(12);
    let mut bad = Vec::new();
    for _ in 0..50 {
        let vars: &[&str] = if rand::Rng::gen_bool(&mut r, 0.5) { &["w"] } else { &["w1", "w2"] };
        let (a, b, c) = (any_expr(&mut r, vars), any_expr(&mut r, vars), any_expr(&mut r, vars));
        if let Err(e) = ring_laws(&a, &b, &c) {
            bad.push(e);
        }
        let f = density(&mut r, vars);
        if !total_derivatives_are_null(&f, vars) {
            bad.push(format!("delta d_x ({f}) != 0"));
        }
        if let Err(e) = helmholtz_round_trip(&f, vars) {
            bad.push(e);
        }
        let p = random_skew(&mut r, vars);
        let g = density(&mut r, vars);
        if !schouten_pf_adjoint(&p, &f, &g) {
            bad.push("schouten_pf adjointness".into());
        }
    }
    for _ in 0..5 {
        let a = random_transform(&mut r, &["w"], &["v"], 3);
        let b = random_transform(&mut r, &["v"], &["z"], 3);
        let c = random_transform(&mut r, &["z"], &["y"], 3);
        if let Err(e) = group_laws(&a, &b, &c, 3) {
            bad.push(e);
        }
    }
    let off = graded_poly(&mut r, &["v"], 3, 2, false);
    let misgraded = quasimiura::miura::MiuraTransform::new(sv(&["w"]), sv(&["v"]), vec![], vec![vec![Expr::jet("v", 0)], vec![Expr::zero()], vec![off]]);
    if misgraded.is_ok() {
        bad.push("misgraded transform accepted".into());
    }
    outcome(
        bad.is_empty(),
        format!(
            "50 ring-law triples, 50 densities for delta d_x = 0 and Helmholtz round trip, 50 adjointness samples, 5 group-law triples, grading rejection{}",
            if bad.is_empty() { String::new() } else { format!("; {}", bad.join("; ")) }
        ),
    )
}

fn main() -> ExitCode {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check); 12] = [
        ("bracket validity", c1_brackets),
        ("pencil compatibility", c2_compatibility),
        ("central invariants", c3_invariants),
        ("transform verification", c4_transforms),
        ("quasi-Miura solver", c5_reduction),
        ("gas Hamiltonian structure", c6_gas_hamiltonian),
        ("SL(2) covariance", c7_sl2),
        ("Miura invariance", c8_miura_invariance),
        ("numerical perturbation order", c9_perturbation_order),
        ("hodograph correctness", c10_hodograph),
        ("Lamé pipeline", c11_lame),
        ("property suites", c12_properties),
    ];
    let mut unexpected = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let k = i + 1;
        let o = f();
        println!("criterion {k:>2} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if o.pass == KNOWN_FAILURES.contains(&k) {
            unexpected.push(k);
        }
    }
    for k in KNOWN_FAILURES {
        println!("criterion {k:>2} is a recorded deviation, see the README");
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected outcome for criteria {unexpected:?}");
        ExitCode::FAILURE
    }
}
