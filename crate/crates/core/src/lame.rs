//! Semisimple pencils of hydrodynamic type for two components, rebuilt from
//! rotation coefficients: Lamé system, velocities, metrics, flat coordinates and
//! Casimirs, all sampled on a rectangle in canonical coordinates.

use rayon::prelude::*;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LameError {
    #[error("grid touches the diagonal u1 = u2")]
    Diagonal,
    #[error("grid touches u{0} = 0")]
    Axis(usize),
    #[error("grid needs at least 5 nodes per direction and positive steps")]
    Grid,
    #[error("chi_{0} vanishes on the grid")]
    ChiVanishes(usize),
    #[error("lambda = {0} lies in the range of a canonical coordinate")]
    Lambda(f64),
    #[error("Picard iteration did not converge")]
    NoConvergence,
    #[error("fundamental system is degenerate at the base point")]
    Degenerate,
}

/// Tensor grid `u0 + (i h1, j h2)`; the base point is the corner `u0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid2 {
    pub u0: [f64; 2],
    pub h: [f64; 2],
    pub n: [usize; 2],
}

impl Grid2 {
    pub fn new(u0: [f64; 2], extent: [f64; 2], n: [usize; 2]) -> Result<Grid2, LameError> {
        if n[0] < 5 || n[1] < 5 || extent[0] <= 0.0 || extent[1] <= 0.0 {
            return Err(LameError::Grid);
        }
        let g = Grid2 { u0, h: [extent[0] / (n[0] - 1) as f64, extent[1] / (n[1] - 1) as f64], n };
        for a in 0..2 {
            let (lo, hi) = (u0[a], u0[a] + extent[a]);
            if lo <= 0.0 && hi >= 0.0 {
                return Err(LameError::Axis(a + 1));
            }
        }
        // u1 - u2 is extremal at the corners
        let d: Vec<f64> = [(0, 0), (1, 0), (0, 1), (1, 1)].iter().map(|&(i, j)| g.u(0, i * (n[0] - 1)) - g.u(1, j * (n[1] - 1))).collect();
        if d.contains(&0.0) || d.iter().any(|x| x.signum() != d[0].signum()) {
            return Err(LameError::Diagonal);
        }
        Ok(g)
    }

    /// Coordinate `a` at node index `i`.
    pub fn u(&self, a: usize, i: usize) -> f64 {
        self.u0[a] + i as f64 * self.h[a]
    }

    /// The grid with steps halved.
    pub fn refine(&self) -> Grid2 {
        Grid2 { u0: self.u0, h: [self.h[0] / 2.0, self.h[1] / 2.0], n: [2 * self.n[0] - 1, 2 * self.n[1] - 1] }
    }

    fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }
}

/// Samples on a [`Grid2`], row-major in `(i1, i2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Field2 {
    pub grid: Grid2,
    pub v: Vec<f64>,
}

impl Field2 {
    pub fn zeros(grid: Grid2) -> Field2 {
        Field2 { grid, v: vec![0.0; grid.len()] }
    }

    pub fn from_fn(grid: Grid2, f: impl Fn(f64, f64) -> f64) -> Field2 {
        let mut v = Vec::with_capacity(grid.len());
        for i in 0..grid.n[0] {
            for j in 0..grid.n[1] {
                v.push(f(grid.u(0, i), grid.u(1, j)));
            }
        }
        Field2 { grid, v }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.v[i * self.grid.n[1] + j]
    }

    fn line(&self, a: usize, k: usize) -> Vec<f64> {
        let n = self.grid.n;
        if a == 0 {
            (0..n[0]).map(|i| self.v[i * n[1] + k]).collect()
        } else {
            self.v[k * n[1]..(k + 1) * n[1]].to_vec()
        }
    }

    /// Assembles a field from lines along direction `a`, indexed by the other coordinate.
    fn from_lines(grid: Grid2, a: usize, lines: Vec<Vec<f64>>) -> Field2 {
        let mut f = Field2::zeros(grid);
        for (k, l) in lines.into_iter().enumerate() {
            for (m, x) in l.into_iter().enumerate() {
                let (i, j) = if a == 0 { (m, k) } else { (k, m) };
                f.v[i * grid.n[1] + j] = x;
            }
        }
        f
    }

    fn map_lines(&self, a: usize, f: impl Fn(usize, Vec<f64>) -> Vec<f64> + Sync) -> Field2 {
        let lines: Vec<Vec<f64>> = (0..self.grid.n[1 - a]).into_par_iter().map(|k| f(k, self.line(a, k))).collect();
        Field2::from_lines(self.grid, a, lines)
    }

    /// Fourth-order derivative along direction `a`.
    pub fn deriv(&self, a: usize) -> Field2 {
        let h = self.grid.h[a];
        self.map_lines(a, |_, l| deriv4(&l, h))
    }

    /// Antiderivative along `a` vanishing on the line through the base point.
    pub fn cumulative(&self, a: usize) -> Field2 {
        let h = self.grid.h[a];
        self.map_lines(a, |_, l| cumint4(&l, h))
    }

    pub fn zip(&self, o: &Field2, f: impl Fn(f64, f64) -> f64) -> Field2 {
        Field2 { grid: self.grid, v: self.v.iter().zip(&o.v).map(|(a, b)| f(*a, *b)).collect() }
    }

    /// `f(u1, u2, value)` pointwise.
    pub fn map_xy(&self, f: impl Fn(f64, f64, f64) -> f64) -> Field2 {
        let n = self.grid.n;
        Field2 { grid: self.grid, v: (0..self.v.len()).map(|p| f(self.grid.u(0, p / n[1]), self.grid.u(1, p % n[1]), self.v[p])).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.v.iter().fold(0.0, |a: f64, b| a.max(b.abs()))
    }

    /// Max over nodes at least `m` away from the edges (all nodes if none are).
    pub fn interior_max_abs(&self, m: usize) -> f64 {
        let n = self.grid.n;
        if n[0] <= 2 * m || n[1] <= 2 * m {
            return self.max_abs();
        }
        let mut worst = 0.0f64;
        for i in m..n[0] - m {
            for j in m..n[1] - m {
                worst = worst.max(self.at(i, j).abs());
            }
        }
        worst
    }

    /// Values on the nodes shared with the coarser grid `g` (this grid refines `g`).
    pub fn restrict(&self, g: &Grid2) -> Field2 {
        let s0 = (self.grid.n[0] - 1) / (g.n[0] - 1);
        let s1 = (self.grid.n[1] - 1) / (g.n[1] - 1);
        Field2::from_fn(*g, |_, _| 0.0).map_index(|i, j| self.at(i * s0, j * s1))
    }

    fn map_index(mut self, f: impl Fn(usize, usize) -> f64) -> Field2 {
        for i in 0..self.grid.n[0] {
            for j in 0..self.grid.n[1] {
                self.v[i * self.grid.n[1] + j] = f(i, j);
            }
        }
        self
    }
}

/// Fourth-order first derivative on a uniform grid (one-sided near the ends).
pub fn deriv4(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 5);
    let s = 1.0 / (12.0 * h);
    (0..n)
        .map(|i| {
            s * match i {
                0 => -25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4],
                1 => -3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4],
                _ if i == n - 2 => 3.0 * f[n - 1] + 10.0 * f[n - 2] - 18.0 * f[n - 3] + 6.0 * f[n - 4] - f[n - 5],
                _ if i == n - 1 => 25.0 * f[n - 1] - 48.0 * f[n - 2] + 36.0 * f[n - 3] - 16.0 * f[n - 4] + 3.0 * f[n - 5],
                _ => f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2],
            }
        })
        .collect()
}

/// Fourth-order cumulative integral from the first node (cubic interpolation per panel).
pub fn cumint4(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 4);
    let mut out = vec![0.0; n];
    for i in 0..n - 1 {
        let panel = if i == 0 {
            9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3]
        } else if i == n - 2 {
            f[n - 4] - 5.0 * f[n - 3] + 19.0 * f[n - 2] + 9.0 * f[n - 1]
        } else {
            -f[i - 1] + 13.0 * f[i] + 13.0 * f[i + 1] - f[i + 2]
        };
        out[i + 1] = out[i] + h * panel / 24.0;
    }
    out
}

const PICARD_MAX: usize = 400;

fn picard(mut step: impl FnMut() -> f64) -> Result<(), LameError> {
    for _ in 0..PICARD_MAX {
        if step() <= 1e-15 {
            return Ok(());
        }
    }
    Err(LameError::NoConvergence)
}

fn change(old: &Field2, new: &Field2) -> f64 {
    let scale = new.max_abs().max(1.0);
    old.v.iter().zip(&new.v).fold(0.0f64, |a, (x, y)| a.max((x - y).abs())) / scale
}

// ---------------------------------------------------------------- rotation coefficients

/// Rotation coefficients `gamma_12`, `gamma_21` on a grid.
#[derive(Clone, Debug)]
pub struct RotationField {
    pub g12: Field2,
    pub g21: Field2,
}

#[derive(Clone, Copy, Debug)]
pub struct LameResidual {
    /// `d1 g12 + d2 g21`.
    pub flat: f64,
    /// `u1 d1 g12 + u2 d2 g21 + (g12 + g21)/2`.
    pub homogeneous: f64,
}

/// Solves the two-component Lamé system with `gamma_12` given along the line
/// `u1 = u1_0` (as a function of `u2`) and `gamma_21` along `u2 = u2_0` (as a
/// function of `u1`). In two components the system is linear and reduces to
/// `d1 g12 = -(g12 + g21) / (2 (u1 - u2)) = -d2 g21`, integrated as a Volterra system.
pub fn solve_lame_n2(grid: Grid2, g12_line: impl Fn(f64) -> f64, g21_line: impl Fn(f64) -> f64) -> Result<RotationField, LameError> {
    let a0 = Field2::from_fn(grid, |_, u2| g12_line(u2));
    let b0 = Field2::from_fn(grid, |u1, _| g21_line(u1));
    let (mut a, mut b) = (a0.clone(), b0.clone());
    picard(|| {
        let s = a.zip(&b, |x, y| x + y).map_xy(|u1, u2, v| v / (2.0 * (u1 - u2)));
        let na = a0.zip(&s.cumulative(0), |x, y| x - y);
        let nb = b0.zip(&s.cumulative(1), |x, y| x + y);
        let c = change(&a, &na).max(change(&b, &nb));
        a = na;
        b = nb;
        c
    })?;
    Ok(RotationField { g12: a, g21: b })
}

impl RotationField {
    pub fn grid(&self) -> Grid2 {
        self.g12.grid
    }

    pub fn residual(&self) -> LameResidual {
        let d1 = self.g12.deriv(0);
        let d2 = self.g21.deriv(1);
        let flat = d1.zip(&d2, |x, y| x + y).max_abs();
        let mut hom = 0.0f64;
        let g = self.grid();
        for i in 0..g.n[0] {
            for j in 0..g.n[1] {
                let r = g.u(0, i) * d1.at(i, j) + g.u(1, j) * d2.at(i, j) + 0.5 * (self.g12.at(i, j) + self.g21.at(i, j));
                hom = hom.max(r.abs());
            }
        }
        LameResidual { flat, homogeneous: hom }
    }

    pub fn to_csv(&self) -> String {
        let g = self.grid();
        let r = self.residual();
        let mut s = format!(
            "# grid u0 = ({}, {}), h = ({}, {}), n = ({}, {})\n# residual flat = {:.3e}, homogeneous = {:.3e}\nu1,u2,gamma12,gamma21\n",
            g.u0[0], g.u0[1], g.h[0], g.h[1], g.n[0], g.n[1], r.flat, r.homogeneous
        );
        for i in 0..g.n[0] {
            for j in 0..g.n[1] {
                let _ = writeln!(s, "{:.17e},{:.17e},{:.17e},{:.17e}", g.u(0, i), g.u(1, j), self.g12.at(i, j), self.g21.at(i, j));
            }
        }
        s
    }
}

// ---------------------------------------------------------------- velocities

/// Solution of `d2 chi_1 = g21 chi_2`, `d1 chi_2 = g12 chi_1` with `chi_1` given
/// along `u2 = u2_0` and `chi_2` along `u1 = u1_0`.
pub fn solve_chi(rot: &RotationField, chi1_line: impl Fn(f64) -> f64, chi2_line: impl Fn(f64) -> f64) -> Result<[Field2; 2], LameError> {
    let grid = rot.grid();
    let c1 = Field2::from_fn(grid, |u1, _| chi1_line(u1));
    let c2 = Field2::from_fn(grid, |_, u2| chi2_line(u2));
    let (mut x1, mut x2) = (c1.clone(), c2.clone());
    picard(|| {
        let n1 = c1.zip(&rot.g21.zip(&x2, |g, x| g * x).cumulative(1), |x, y| x + y);
        let n2 = c2.zip(&rot.g12.zip(&x1, |g, x| g * x).cumulative(0), |x, y| x + y);
        let c = change(&x1, &n1).max(change(&x2, &n2));
        x1 = n1;
        x2 = n2;
        c
    })?;
    for (i, x) in [&x1, &x2].iter().enumerate() {
        if x.v.contains(&0.0) || x.v.iter().any(|v| v.signum() != x.v[0].signum()) {
            return Err(LameError::ChiVanishes(i + 1));
        }
    }
    Ok([x1, x2])
}

/// Residual of the velocity system for `chi`.
pub fn chi_residual(rot: &RotationField, chi: &[Field2; 2]) -> f64 {
    let r1 = chi[0].deriv(1).zip(&rot.g21.zip(&chi[1], |g, x| g * x), |a, b| a - b).max_abs();
    let r2 = chi[1].deriv(0).zip(&rot.g12.zip(&chi[0], |g, x| g * x), |a, b| a - b).max_abs();
    r1.max(r2)
}

/// Characteristic velocities `V^i = chi_i / H_i` of the flow given by `chi`.
pub fn velocities(chi: &[Field2; 2], lame: &[Field2; 2]) -> [Field2; 2] {
    [chi[0].zip(&lame[0], |a, b| a / b), chi[1].zip(&lame[1], |a, b| a / b)]
}

// ---------------------------------------------------------------- Lax system

/// Solves the Lax system at spectral parameter `lambda` (`None` for infinity) with
/// `psi(u0) = psi0`, integrating along `u2 = u2_0` and then along each `u1`.
pub fn solve_lax(rot: &RotationField, lambda: Option<f64>, psi0: [f64; 2]) -> Result<[Field2; 2], LameError> {
    let g = rot.grid();
    if let Some(l) = lambda {
        for a in 0..2 {
            let (lo, hi) = (g.u0[a], g.u(a, g.n[a] - 1));
            if l >= lo.min(hi) && l <= lo.max(hi) {
                return Err(LameError::Lambda(l));
            }
        }
    }
    // ratio (u^k - lambda)/(u^i - lambda) and 1/(2 (u^i - lambda))
    let ratio = |uk: f64, ui: f64| lambda.map_or(1.0, |l| (uk - l) / (ui - l));
    let half = |ui: f64| lambda.map_or(0.0, |l| 0.5 / (ui - l));
    let u20 = g.u0[1];
    let base_line: Vec<f64> = (0..g.n[0]).map(|i| rot.g21.at(i, 0)).collect();
    let xs: Vec<f64> = (0..g.n[0]).map(|i| g.u(0, i)).collect();
    // along u1: d1 psi1 = -g21 r psi2 - psi1 half(u1), d1 psi2 = g21 psi1
    let (p1, p2) = line_system(&xs, g.h[0], psi0, |k, y| {
        let (u1, gm) = (xs[k], base_line[k]);
        [-gm * ratio(u20, u1) * y[1] - half(u1) * y[0], gm * y[0]]
    })?;
    let cols: Vec<(Vec<f64>, Vec<f64>)> = (0..g.n[0])
        .into_par_iter()
        .map(|i| {
            let u1 = g.u(0, i);
            let ys: Vec<f64> = (0..g.n[1]).map(|j| g.u(1, j)).collect();
            let gl: Vec<f64> = (0..g.n[1]).map(|j| rot.g12.at(i, j)).collect();
            // along u2: d2 psi1 = g12 psi2, d2 psi2 = -g12 r psi1 - psi2 half(u2)
            line_system(&ys, g.h[1], [p1[i], p2[i]], |k, y| {
                let u2 = ys[k];
                [gl[k] * y[1], -gl[k] * ratio(u1, u2) * y[0] - half(u2) * y[1]]
            })
        })
        .collect::<Result<_, _>>()?;
    let (c1, c2): (Vec<Vec<f64>>, Vec<Vec<f64>>) = cols.into_iter().unzip();
    Ok([Field2::from_lines(g, 1, c1), Field2::from_lines(g, 1, c2)])
}

/// Linear system `y' = M(s) y` along a grid line by Picard iteration on the
/// cumulative quadrature.
fn line_system(
    s: &[f64],
    h: f64,
    y0: [f64; 2],
    rhs: impl Fn(usize, [f64; 2]) -> [f64; 2],
) -> Result<(Vec<f64>, Vec<f64>), LameError> {
    let n = s.len();
    let mut y = (vec![y0[0]; n], vec![y0[1]; n]);
    for _ in 0..PICARD_MAX {
        let (mut f1, mut f2) = (vec![0.0; n], vec![0.0; n]);
        for k in 0..n {
            let r = rhs(k, [y.0[k], y.1[k]]);
            f1[k] = r[0];
            f2[k] = r[1];
        }
        let (i1, i2) = (cumint4(&f1, h), cumint4(&f2, h));
        let ny: (Vec<f64>, Vec<f64>) = ((0..n).map(|k| y0[0] + i1[k]).collect(), (0..n).map(|k| y0[1] + i2[k]).collect());
        let scale = ny.0.iter().chain(&ny.1).fold(1.0f64, |a, b| a.max(b.abs()));
        let c = (0..n).fold(0.0f64, |a, k| a.max((ny.0[k] - y.0[k]).abs()).max((ny.1[k] - y.1[k]).abs())) / scale;
        y = ny;
        if c <= 1e-15 {
            return Ok(y);
        }
    }
    Err(LameError::NoConvergence)
}

/// Potential `P` with `dP = chi_1 psi_1 du1 + chi_2 psi_2 du2`, `P(u0) = 0`.
pub fn quadrature(chi: &[Field2; 2], psi: &[Field2; 2]) -> Field2 {
    let w1 = chi[0].zip(&psi[0], |a, b| a * b);
    let w2 = chi[1].zip(&psi[1], |a, b| a * b);
    // along u1 at u2_0, then along u2
    let g = w1.grid;
    let base = cumint4(&w1.line(0, 0), g.h[0]);
    let up = w2.cumulative(1);
    up.map_index_shift(|i, _, v| v + base[i])
}

impl Field2 {
    fn map_index_shift(mut self, f: impl Fn(usize, usize, f64) -> f64) -> Field2 {
        for i in 0..self.grid.n[0] {
            for j in 0..self.grid.n[1] {
                let p = i * self.grid.n[1] + j;
                self.v[p] = f(i, j, self.v[p]);
            }
        }
        self
    }
}

// ---------------------------------------------------------------- reconstruction

/// Second derivatives are first derivatives applied twice; near the edges this
/// loses an order, so checks involving them skip this many boundary layers.
pub const SECOND_ORDER_MARGIN: usize = 4;

/// Diagonal metric through its covariant components `e_i`.
#[derive(Clone, Debug)]
pub struct DiagonalMetric {
    pub e: [Field2; 2],
}

impl DiagonalMetric {
    /// Gaussian curvature at every node, from fourth-order differences.
    pub fn curvature(&self) -> Field2 {
        let [e, g] = &self.e;
        let (e1, e2) = (e.deriv(0), e.deriv(1));
        let (g1, g2) = (g.deriv(0), g.deriv(1));
        let (g11, e22) = (g1.deriv(0), e2.deriv(1));
        let mut k = Field2::zeros(e.grid);
        for p in 0..k.v.len() {
            let (ev, gv) = (e.v[p], g.v[p]);
            let r = -0.5 * (g11.v[p] + e22.v[p]) + 0.25 * (g1.v[p] * e1.v[p] / ev + g1.v[p] * g1.v[p] / gv + e2.v[p] * e2.v[p] / ev + e2.v[p] * g2.v[p] / gv);
            k.v[p] = r / (ev * gv);
        }
        k
    }

    /// Max over interior nodes of the covariant Hessian of `f`, relative to its gradient.
    pub fn hessian_residual(&self, f: &Field2) -> f64 {
        let [e, g] = &self.e;
        let (e1, e2) = (e.deriv(0), e.deriv(1));
        let (g1, g2) = (g.deriv(0), g.deriv(1));
        let (f1, f2) = (f.deriv(0), f.deriv(1));
        let (f11, f12, f22) = (f1.deriv(0), f1.deriv(1), f2.deriv(1));
        let mut r = Field2::zeros(f.grid);
        for p in 0..f.v.len() {
            let (ev, gv) = (e.v[p], g.v[p]);
            // Christoffel symbols of ds^2 = e du1^2 + g du2^2
            let c1_11 = e1.v[p] / (2.0 * ev);
            let c2_11 = -e2.v[p] / (2.0 * gv);
            let c1_12 = e2.v[p] / (2.0 * ev);
            let c2_12 = g1.v[p] / (2.0 * gv);
            let c1_22 = -g1.v[p] / (2.0 * ev);
            let c2_22 = g2.v[p] / (2.0 * gv);
            let h11 = f11.v[p] - c1_11 * f1.v[p] - c2_11 * f2.v[p];
            let h12 = f12.v[p] - c1_12 * f1.v[p] - c2_12 * f2.v[p];
            let h22 = f22.v[p] - c1_22 * f1.v[p] - c2_22 * f2.v[p];
            let scale = f1.v[p].abs().max(f2.v[p].abs()).max(1e-300);
            r.v[p] = h11.abs().max(h12.abs()).max(h22.abs()) / scale;
        }
        r.interior_max_abs(SECOND_ORDER_MARGIN)
    }
}

/// The pencil `g1^ii = chi_i^-2`, `g2^ii = u^i chi_i^-2` with flat coordinates and checks.
#[derive(Clone, Debug)]
pub struct ReconstructedPencil {
    pub chi: [Field2; 2],
    /// Covariant metrics.
    pub g1: DiagonalMetric,
    pub g2: DiagonalMetric,
    pub curvature: [f64; 2],
    /// Flat coordinates of `g1` (from the Lax system at infinity) and of `g2` (at 0).
    pub flat1: [Field2; 2],
    pub flat2: [Field2; 2],
    /// Deviation of `g^{alpha beta}` in the flat coordinates from its value at `u0`.
    pub constancy: [f64; 2],
    /// Covariant Hessians of the flat coordinates.
    pub hessian: [f64; 2],
}

/// Builds the pencil from `chi`, flat coordinates from the fundamental systems with
/// `psi(u0) = identity`, and the curvature and flatness checks.
pub fn reconstruct(rot: &RotationField, chi: [Field2; 2]) -> Result<ReconstructedPencil, LameError> {
    for (i, x) in chi.iter().enumerate() {
        if x.v.contains(&0.0) {
            return Err(LameError::ChiVanishes(i + 1));
        }
    }
    let sq = |x: &Field2| x.zip(x, |a, b| a * b);
    let g1 = DiagonalMetric { e: [sq(&chi[0]), sq(&chi[1])] };
    let g2 = DiagonalMetric { e: [sq(&chi[0]).map_xy(|u1, _, v| v / u1), sq(&chi[1]).map_xy(|_, u2, v| v / u2)] };
    let curvature = [g1.curvature().interior_max_abs(SECOND_ORDER_MARGIN), g2.curvature().interior_max_abs(SECOND_ORDER_MARGIN)];
    let flat = |lambda: Option<f64>| -> Result<([Field2; 2], [Field2; 2]), LameError> {
        let a = solve_lax(rot, lambda, [1.0, 0.0])?;
        let b = solve_lax(rot, lambda, [0.0, 1.0])?;
        Ok(([quadrature(&chi, &a), quadrature(&chi, &b)], [a[0].clone(), b[0].clone()]))
    };
    let (flat1, _) = flat(None)?;
    let (flat2, _) = flat(Some(0.0))?;
    let constancy = [gram_constancy(&g1, &flat1), gram_constancy(&g2, &flat2)];
    let hessian = [
        g1.hessian_residual(&flat1[0]).max(g1.hessian_residual(&flat1[1])),
        g2.hessian_residual(&flat2[0]).max(g2.hessian_residual(&flat2[1])),
    ];
    Ok(ReconstructedPencil { chi, g1, g2, curvature, flat1, flat2, constancy, hessian })
}

/// `max |g^{ab}(u) - g^{ab}(u0)|` for the contravariant metric in the coordinates `v`.
fn gram_constancy(g: &DiagonalMetric, v: &[Field2; 2]) -> f64 {
    let d: Vec<[Field2; 2]> = v.iter().map(|f| [f.deriv(0), f.deriv(1)]).collect();
    let gram = |p: usize, a: usize, b: usize| (0..2).map(|i| d[a][i].v[p] * d[b][i].v[p] / g.e[i].v[p]).sum::<f64>();
    let mut worst = 0.0f64;
    for a in 0..2 {
        for b in a..2 {
            let g0 = gram(0, a, b);
            for p in 0..v[0].v.len() {
                worst = worst.max((gram(p, a, b) - g0).abs());
            }
        }
    }
    worst
}

/// Casimir density of the pencil `g2 - lambda g1` with `psi(u0) = psi0`, and the
/// covariant Hessian residual of `P` in that metric (zero for a Casimir).
pub fn casimir(rot: &RotationField, chi: &[Field2; 2], lambda: f64, psi0: [f64; 2]) -> Result<(Field2, f64), LameError> {
    let psi = solve_lax(rot, Some(lambda), psi0)?;
    let p = quadrature(chi, &psi);
    let sq = |x: &Field2| x.zip(x, |a, b| a * b);
    let m = DiagonalMetric { e: [sq(&chi[0]).map_xy(|u1, _, v| v / (u1 - lambda)), sq(&chi[1]).map_xy(|_, u2, v| v / (u2 - lambda))] };
    let r = m.hessian_residual(&p);
    Ok((p, r))
}

impl ReconstructedPencil {
    pub fn to_csv(&self) -> String {
        let g = self.chi[0].grid;
        let mut s = format!(
            "# grid u0 = ({}, {}), h = ({}, {}), n = ({}, {})\n# curvature g1 = {:.3e}, g2 = {:.3e}\n# flat coordinates: constancy {:.3e}, {:.3e}; hessian {:.3e}, {:.3e}\n",
            g.u0[0], g.u0[1], g.h[0], g.h[1], g.n[0], g.n[1], self.curvature[0], self.curvature[1], self.constancy[0], self.constancy[1], self.hessian[0], self.hessian[1]
        );
        s.push_str("u1,u2,chi1,chi2,g1_11,g1_22,g2_11,g2_22,v1,v2,w1,w2\n");
        for i in 0..g.n[0] {
            for j in 0..g.n[1] {
                let c = [self.chi[0].at(i, j), self.chi[1].at(i, j)];
                let (u1, u2) = (g.u(0, i), g.u(1, j));
                let _ = writeln!(
                    s,
                    "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                    u1,
                    u2,
                    c[0],
                    c[1],
                    1.0 / (c[0] * c[0]),
                    1.0 / (c[1] * c[1]),
                    u1 / (c[0] * c[0]),
                    u2 / (c[1] * c[1]),
                    self.flat1[0].at(i, j),
                    self.flat1[1].at(i, j),
                    self.flat2[0].at(i, j),
                    self.flat2[1].at(i, j)
                );
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Grid2 {
        Grid2::new([4.0, 1.5], [1.0, 1.0], [n, n]).unwrap()
    }

    fn generic(g: Grid2) -> RotationField {
        solve_lame_n2(g, |u2| 0.3 * (u2 * 2.0).sin() + 0.1, |u1| 0.2 * u1.cos() - 0.05 * u1).unwrap()
    }

    #[test]
    fn quadrature_rules_are_fourth_order() {
        let err = |n: usize| {
            let h = 1.0 / (n - 1) as f64;
            let xs: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
            let f: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
            let i = cumint4(&f, h);
            let d = deriv4(&f, h);
            let ei = xs.iter().zip(&i).fold(0.0f64, |a, (x, v)| a.max((v - (x.exp() - 1.0)).abs()));
            let ed = xs.iter().zip(&d).fold(0.0f64, |a, (x, v)| a.max((v - x.exp()).abs()));
            (ei, ed)
        };
        let (a, b) = (err(33), err(65));
        assert!(a.0 / b.0 > 12.0 && a.1 / b.1 > 12.0, "{a:?} {b:?}");
    }

    #[test]
    fn grid_validation() {
        assert!(matches!(Grid2::new([0.5, 0.2], [1.0, 1.0], [9, 9]), Err(LameError::Diagonal)));
        assert!(matches!(Grid2::new([-0.5, 2.0], [1.0, 1.0], [9, 9]), Err(LameError::Axis(1))));
        assert!(Grid2::new([2.0, 0.5], [1.0, 1.0], [4, 9]).is_err());
    }

    #[test]
    fn zero_data_gives_trivial_pencil() {
        let g = grid(65);
        let rot = solve_lame_n2(g, |_| 0.0, |_| 0.0).unwrap();
        assert!(rot.g12.v.iter().chain(&rot.g21.v).all(|x| *x == 0.0));
        let chi = solve_chi(&rot, |_| 1.0, |_| 1.0).unwrap();
        assert!(chi[0].v.iter().chain(&chi[1].v).all(|x| *x == 1.0));
        let p = reconstruct(&rot, chi).unwrap();
        assert_eq!(p.curvature[0], 0.0);
        assert!(p.curvature[1] < 1e-10);
        // flat coordinates of g1 = identity are u - u0
        for i in 0..g.n[0] {
            for j in 0..g.n[1] {
                assert!((p.flat1[0].at(i, j) - (g.u(0, i) - g.u0[0])).abs() < 1e-14);
                assert!((p.flat1[1].at(i, j) - (g.u(1, j) - g.u0[1])).abs() < 1e-14);
            }
        }
        assert!(p.constancy[0] < 1e-12 && p.constancy[1] < 1e-6, "{:?}", p.constancy);
    }

    #[test]
    fn lame_residual_and_linearity() {
        let g = grid(129);
        let rot = generic(g);
        let r = rot.residual();
        assert!(r.flat < 1e-8 && r.homogeneous < 1e-8, "{r:?}");
        let twice = solve_lame_n2(g, |u2| 2.0 * (0.3 * (u2 * 2.0).sin() + 0.1), |u1| 2.0 * (0.2 * u1.cos() - 0.05 * u1)).unwrap();
        let a = solve_lame_n2(g, |u2| 0.3 * (u2 * 2.0).sin(), |u1| 0.2 * u1.cos()).unwrap();
        let b = solve_lame_n2(g, |_| 0.1, |u1| -0.05 * u1).unwrap();
        for p in 0..rot.g12.v.len() {
            assert!((twice.g12.v[p] - 2.0 * rot.g12.v[p]).abs() < 1e-12);
            assert!((a.g12.v[p] + b.g12.v[p] - rot.g12.v[p]).abs() < 1e-10);
            assert!((a.g21.v[p] + b.g21.v[p] - rot.g21.v[p]).abs() < 1e-10);
        }
    }

    #[test]
    fn chi_and_metrics() {
        let g = grid(129);
        let rot = generic(g);
        let chi = solve_chi(&rot, |u1| 1.0 + 0.1 * u1, |u2| 0.8 + 0.05 * u2 * u2).unwrap();
        assert!(chi_residual(&rot, &chi) < 1e-8);
        let v = velocities(&chi, &chi);
        assert!(v[0].v.iter().chain(&v[1].v).all(|x| *x == 1.0));
        let p = reconstruct(&rot, chi).unwrap();
        assert!(p.curvature[0] < 1e-6 && p.curvature[1] < 1e-6, "{:?}", p.curvature);
        assert!(p.constancy[0] < 1e-6 && p.constancy[1] < 1e-6, "{:?}", p.constancy);
        assert!(p.hessian[0] < 1e-6 && p.hessian[1] < 1e-6, "{:?}", p.hessian);
    }

    #[test]
    fn unrelated_metric_is_curved() {
        // chi not solving the velocity system: curvature visible
        let g = grid(65);
        let rot = generic(g);
        let bad = [Field2::from_fn(g, |u1, u2| 1.0 + 0.3 * u1 * u2), Field2::from_fn(g, |_, u2| 1.0 + u2)];
        let p = reconstruct(&rot, bad).unwrap();
        assert!(p.curvature[0] > 1e-3);
    }

    #[test]
    fn casimirs() {
        let g = grid(129);
        let rot = generic(g);
        let chi = solve_chi(&rot, |_| 1.0, |_| 1.0).unwrap();
        for lambda in [-1.0, 6.5] {
            let (_, r) = casimir(&rot, &chi, lambda, [1.0, 0.5]).unwrap();
            assert!(r < 1e-6, "{lambda}: {r}");
        }
        assert!(matches!(casimir(&rot, &chi, 4.5, [1.0, 0.0]), Err(LameError::Lambda(_))));
    }

    #[test]
    fn flat_coordinates_self_converge() {
        let coarse = grid(33);
        let fine = coarse.refine();
        let finer = fine.refine();
        let run = |g: Grid2| {
            let rot = generic(g);
            let chi = solve_chi(&rot, |u1| 1.0 + 0.1 * u1, |_| 1.0).unwrap();
            reconstruct(&rot, chi).unwrap().flat2[0].clone()
        };
        let (a, b, c) = (run(coarse), run(fine), run(finer));
        let e1 = a.zip(&b.restrict(&coarse), |x, y| x - y).max_abs();
        let e2 = b.restrict(&coarse).zip(&c.restrict(&coarse), |x, y| x - y).max_abs();
        let order = (e1 / e2).log2();
        assert!(order > 3.5, "{e1:e} {e2:e} {order}");
    }
}
