//! Finite-difference solver for the semilinear `psi` equation and the linear
//! pricing equation on a rectangle in `(x, y)`.
//!
//! The linear part is treated with Crank–Nicolson after a Rannacher start of
//! four implicit half steps; the gradient-square term is explicit, extrapolated
//! from the last two levels. The
//! boundary rows are eliminated: zero second x-derivative on the x edges and
//! zero y-flux on the y edges.

use serde::Serialize;

use super::banded::Banded;
use crate::error::{invalid, IsrError, Result};
use crate::model::{Family, ModelSpec};
use crate::sharpe::Scenario;

const BLOW_UP: f64 = 1e10;
const MIN_NODES: usize = 41;
const MIN_PAD: f64 = 4.0;

/// Spatial and temporal discretization. The scenario state is always a grid
/// node, and [`Grid2D::refined`] halves every step while keeping the ranges.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid2D {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
}

impl Grid2D {
    pub const DEFAULT_PAD_X: f64 = 6.0;
    pub const DEFAULT_PAD_Y: f64 = 5.0;

    /// Grid centred on the scenario state with the default paddings.
    pub fn around(model: &ModelSpec, sc: &Scenario, nx: usize, ny: usize, nt: usize) -> Result<Self> {
        Self::with_padding(model, sc, nx, ny, nt, Self::DEFAULT_PAD_X, Self::DEFAULT_PAD_Y)
    }

    /// Grid whose x half-width is `pad_x` standard deviations `sigma0 sqrt(tau)`
    /// and whose y half-width is `pad_y` standard deviations of `Y` plus the
    /// drift displacement over the horizon. Models with positive `y` keep
    /// the lower edge above `y / 50`.
    pub fn with_padding(
        model: &ModelSpec,
        sc: &Scenario,
        nx: usize,
        ny: usize,
        nt: usize,
        pad_x: f64,
        pad_y: f64,
    ) -> Result<Self> {
        sc.validate()?;
        if !(pad_x >= MIN_PAD) {
            return Err(invalid("pad_x", pad_x, "padding must be at least 4 standard deviations"));
        }
        if !(pad_y >= MIN_PAD) {
            return Err(invalid("pad_y", pad_y, "padding must be at least 4 standard deviations"));
        }
        let tau = sc.tau();
        let sd_x = model.sigma(sc.x, sc.y).abs() * tau.sqrt();
        let half_x = pad_x * sd_x;
        let (x_min, x_max) = place(sc.x, half_x, half_x, nx)?;

        let sd_y = model.beta(sc.x, sc.y).abs() * tau.sqrt();
        let drift = model.family(Family::HattedDrift, sc.x, sc.y).abs().max(model.family(Family::Drift, sc.x, sc.y).abs());
        let mut half_y = pad_y * sd_y + 2.0 * drift * tau;
        if half_y <= 0.0 {
            half_y = 0.1 * sc.y.abs().max(1.0);
        }
        let mut below = half_y;
        if model.positive_y() {
            below = below.min(sc.y - sc.y / 50.0);
        }
        let (y_min, y_max) = place(sc.y, below, half_y, ny)?;
        let grid = Self {
            x_min,
            x_max,
            y_min,
            y_max,
            nx,
            ny,
            nt,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < MIN_NODES || self.ny < MIN_NODES {
            return Err(invalid("grid", self.nx.min(self.ny) as f64, "need at least 41 nodes per axis"));
        }
        if self.nt < 4 {
            return Err(invalid("nt", self.nt as f64, "need at least 4 time steps"));
        }
        if !(self.x_max > self.x_min && self.y_max > self.y_min) {
            return Err(invalid("grid", self.x_max - self.x_min, "empty range"));
        }
        Ok(())
    }

    /// Same ranges with every step halved.
    pub fn refined(&self) -> Self {
        Self {
            nx: 2 * self.nx - 1,
            ny: 2 * self.ny - 1,
            nt: 2 * self.nt,
            ..self.clone()
        }
    }

    pub fn hx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.ny - 1) as f64
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x_min + i as f64 * self.hx()).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        (0..self.ny).map(|j| self.y_min + j as f64 * self.hy()).collect()
    }
}

/// Range of `n` nodes reaching at least `below`/`above` around `c` with `c`
/// on a node.
fn place(c: f64, below: f64, above: f64, n: usize) -> Result<(f64, f64)> {
    if n < 2 || !(below > 0.0 && above > 0.0) {
        return Err(invalid("grid", n as f64, "degenerate grid range"));
    }
    let h = (below + above) / (n - 1) as f64;
    let i0 = ((below / h).round() as usize).clamp(1, n - 2);
    let lo = c - i0 as f64 * h;
    Ok((lo, lo + (n - 1) as f64 * h))
}

/// Values at the initial time on the full grid, indexed `ix * ny + iy`.
#[derive(Debug, Clone, Serialize)]
pub struct PdeSolution {
    pub grid: Grid2D,
    pub t: f64,
    pub values: Vec<f64>,
}

impl PdeSolution {
    /// Bilinear interpolation.
    pub fn value_at(&self, x: f64, y: f64) -> Result<f64> {
        let g = &self.grid;
        if !(x >= g.x_min && x <= g.x_max && y >= g.y_min && y <= g.y_max) {
            return Err(IsrError::Domain {
                x,
                y,
                reason: "outside the finite-difference grid",
            });
        }
        let fx = (x - g.x_min) / g.hx();
        let fy = (y - g.y_min) / g.hy();
        let i = (fx.floor() as usize).min(g.nx - 2);
        let j = (fy.floor() as usize).min(g.ny - 2);
        let (wx, wy) = (fx - i as f64, fy - j as f64);
        let v = |a: usize, b: usize| self.values[a * g.ny + b];
        Ok((1.0 - wx) * ((1.0 - wy) * v(i, j) + wy * v(i, j + 1)) + wx * ((1.0 - wy) * v(i + 1, j) + wy * v(i + 1, j + 1)))
    }
}

/// Values of a refinement study: `values[l]` on the grid refined `l` times.
#[derive(Debug, Clone, Serialize)]
pub struct Refinement {
    pub values: Vec<f64>,
    pub ratios: Vec<f64>,
}

impl Refinement {
    /// Minimum ratio required between successive differences.
    pub const MIN_RATIO: f64 = 1.7;

    /// Study from values on successively refined grids.
    pub fn from_values(values: Vec<f64>) -> Self {
        let diffs: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        let ratios = diffs.windows(2).map(|d| d[0] / d[1]).collect();
        Self { values, ratios }
    }

    /// The finest value.
    pub fn best(&self) -> f64 {
        *self.values.last().expect("at least one level")
    }

    /// Every successive difference shrinks by [`Self::MIN_RATIO`], or is
    /// already at round-off.
    pub fn certified(&self) -> bool {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let diffs: Vec<f64> = self.values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        !self.ratios.is_empty()
            && diffs.windows(2).all(|d| d[1] <= 1e-12 * scale || d[0] >= Self::MIN_RATIO * d[1])
    }
}

/// Evaluates `solve` on `base` and `levels` successive refinements.
pub fn certify_refinement(base: &Grid2D, levels: usize, solve: impl Fn(&Grid2D) -> Result<f64>) -> Result<Refinement> {
    let mut grid = base.clone();
    let mut values = vec![solve(&grid)?];
    for _ in 0..levels {
        grid = grid.refined();
        values.push(solve(&grid)?);
    }
    Ok(Refinement::from_values(values))
}

/// Solves `0 = (d_t + A~) psi + (1 - rho^2)(beta^2 / 2)(d_y psi)^2 - lambda^2 / 2`
/// with `psi(T) = -gamma nu phi(x)`.
pub fn solve_psi_pde(model: &ModelSpec, sc: &Scenario, grid: &Grid2D) -> Result<PdeSolution> {
    let scale = -sc.gamma * sc.nu;
    solve(model, sc, grid, Family::Drift, scale, true)
}

/// Solves `0 = (d_t + A^) p` with `p(T) = phi(x)`.
pub fn solve_price_pde(model: &ModelSpec, sc: &Scenario, grid: &Grid2D) -> Result<PdeSolution> {
    solve(model, sc, grid, Family::HattedDrift, 1.0, false)
}

/// Call payoff `(e^x - e^k)^+` averaged over `[x - h/2, x + h/2]`.
fn cell_payoff(x: f64, k: f64, h: f64) -> f64 {
    let hi = x + 0.5 * h;
    let lo = (x - 0.5 * h).max(k);
    if hi <= k {
        return 0.0;
    }
    (hi.exp() - lo.exp() - k.exp() * (hi - lo)) / h
}

struct Stencil {
    /// Per interior node: reduced-index contributions of `L`.
    rows: Vec<Vec<(usize, f64)>>,
    /// Per interior node: `(1 - rho^2) beta^2 / 2` and `lambda^2 / 2`.
    penalty: Vec<f64>,
    source: Vec<f64>,
}

fn solve(model: &ModelSpec, sc: &Scenario, grid: &Grid2D, drift: Family, scale: f64, nonlinear: bool) -> Result<PdeSolution> {
    sc.validate()?;
    grid.validate()?;
    let (nx, ny) = (grid.nx, grid.ny);
    if !(sc.x > grid.x_min && sc.x < grid.x_max && sc.y >= grid.y_min && sc.y <= grid.y_max) {
        return Err(IsrError::Domain {
            x: sc.x,
            y: sc.y,
            reason: "scenario state outside the grid",
        });
    }
    let (hx, hy) = (grid.hx(), grid.hy());
    let xs = grid.xs();
    let ys = grid.ys();
    let m = ny - 2;
    let red = |i: usize, j: usize| (i - 1) * m + (j - 1);
    // Boundary nodes expressed through interior unknowns.
    let reduce = |i: usize, j: usize| -> [(usize, f64); 2] {
        let jj = j.clamp(1, ny - 2);
        if i == 0 {
            [(red(1, jj), 2.0), (red(2, jj), -1.0)]
        } else if i == nx - 1 {
            [(red(nx - 2, jj), 2.0), (red(nx - 3, jj), -1.0)]
        } else {
            [(red(i, jj), 1.0), (usize::MAX, 0.0)]
        }
    };

    let rho2 = model.rho() * model.rho();
    let mut st = Stencil {
        rows: Vec::with_capacity((nx - 2) * m),
        penalty: Vec::with_capacity((nx - 2) * m),
        source: Vec::with_capacity((nx - 2) * m),
    };
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            let (x, y) = (xs[i], ys[j]);
            let a = model.family(Family::HalfSigmaSq, x, y);
            let b = model.family(drift, x, y);
            let r = model.family(Family::Cross, x, y);
            let q = model.family(Family::HalfBetaSq, x, y);
            let l = model.family(Family::HalfLambdaSq, x, y);
            if ![a, b, r, q, l].iter().all(|v| v.is_finite()) {
                return Err(IsrError::NonFinite {
                    context: "finite-difference coefficients".into(),
                });
            }
            let mut full: Vec<(usize, usize, f64)> = Vec::with_capacity(12);
            // a (d_xx - d_x), central in x.
            let (cxm, cxp) = (a / (hx * hx) + a / (2.0 * hx), a / (hx * hx) - a / (2.0 * hx));
            full.push((i - 1, j, cxm));
            full.push((i + 1, j, cxp));
            let mut centre = -2.0 * a / (hx * hx);
            // q d_yy + b d_y, upwinded where the cell Peclet number exceeds one.
            let (mut cym, mut cyp) = (q / (hy * hy), q / (hy * hy));
            if b.abs() * hy > 2.0 * q {
                if b > 0.0 {
                    cyp += b / hy;
                    centre -= b / hy;
                } else {
                    cym -= b / hy;
                    centre += b / hy;
                }
            } else {
                cyp += b / (2.0 * hy);
                cym -= b / (2.0 * hy);
            }
            centre -= 2.0 * q / (hy * hy);
            full.push((i, j - 1, cym));
            full.push((i, j + 1, cyp));
            full.push((i, j, centre));
            let cr = r / (4.0 * hx * hy);
            if cr != 0.0 {
                full.push((i + 1, j + 1, cr));
                full.push((i - 1, j - 1, cr));
                full.push((i + 1, j - 1, -cr));
                full.push((i - 1, j + 1, -cr));
            }
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(16);
            for (fi, fj, c) in full {
                for (k, w) in reduce(fi, fj) {
                    if w != 0.0 {
                        row.push((k, c * w));
                    }
                }
            }
            row.sort_by_key(|e| e.0);
            row.dedup_by(|next, prev| {
                if next.0 == prev.0 {
                    prev.1 += next.1;
                    true
                } else {
                    false
                }
            });
            st.rows.push(row);
            st.penalty.push(if nonlinear { (1.0 - rho2) * q } else { 0.0 });
            st.source.push(if nonlinear { -l } else { 0.0 });
        }
    }

    let n = (nx - 2) * m;
    let dt = sc.tau() / grid.nt as f64;
    let half = 0.5 * dt;
    let mut mat = Banded::zeros(n, m + 1);
    for (k, row) in st.rows.iter().enumerate() {
        mat.add(k, k, 1.0);
        for &(c, v) in row {
            mat.add(k, c, -half * v);
        }
    }
    let lu = mat.factor()?;

    let mut u: Vec<f64> = Vec::with_capacity(n);
    for i in 1..nx - 1 {
        for _ in 1..ny - 1 {
            u.push(scale * cell_payoff(xs[i], sc.k, hx));
        }
    }
    let apply = |u: &[f64], out: &mut [f64]| {
        for (k, row) in st.rows.iter().enumerate() {
            out[k] = row.iter().map(|&(c, v)| v * u[c]).sum();
        }
    };
    let forcing = |u: &[f64], out: &mut [f64]| {
        for k in 0..n {
            let j = k % m + 1;
            let g = if st.penalty[k] != 0.0 {
                let up = if j < ny - 2 { u[k + 1] } else { u[k] };
                let dn = if j > 1 { u[k - 1] } else { u[k] };
                let d = (up - dn) / (2.0 * hy);
                st.penalty[k] * d * d
            } else {
                0.0
            };
            out[k] = g + st.source[k];
        }
    };

    let mut lu_buf = vec![0.0; n];
    let mut f_buf = vec![0.0; n];
    let mut f_prev = vec![0.0; n];
    // Rannacher start: four implicit half steps replace two CN steps.
    for step in 0..4 {
        forcing(&u, &mut f_buf);
        if step == 2 {
            f_prev.copy_from_slice(&f_buf);
        }
        for k in 0..n {
            u[k] += half * f_buf[k];
        }
        lu.solve(&mut u);
        check(&u)?;
    }
    // Crank–Nicolson with the explicit term extrapolated from two levels.
    for _ in 2..grid.nt {
        apply(&u, &mut lu_buf);
        forcing(&u, &mut f_buf);
        for k in 0..n {
            u[k] += half * lu_buf[k] + dt * (1.5 * f_buf[k] - 0.5 * f_prev[k]);
        }
        std::mem::swap(&mut f_prev, &mut f_buf);
        lu.solve(&mut u);
        check(&u)?;
    }

    let mut values = vec![0.0; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            values[i * ny + j] = reduce(i, j)
                .iter()
                .filter(|(_, w)| *w != 0.0)
                .map(|&(k, w)| w * u[k])
                .sum();
        }
    }
    Ok(PdeSolution {
        grid: grid.clone(),
        t: sc.t,
        values,
    })
}

fn check(u: &[f64]) -> Result<()> {
    if u.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP) {
        return Err(IsrError::Oracle("finite-difference solution blew up; refine the time step".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bskernel::{bs_price, BsInputs};
    use crate::model::{HestonParams, ModelSpec};
    use approx::assert_relative_eq;

    fn bs_scenario(nu: f64) -> Scenario {
        Scenario::at_state(0.0, 6.0 / 52.0, 100f64.ln(), 0.0, 100f64.ln(), nu, 1.0)
    }

    #[test]
    fn black_scholes_price_and_psi() {
        let model = ModelSpec::black_scholes(0.05, 0.2).unwrap();
        let sc = bs_scenario(1.0);
        let grid = Grid2D::around(&model, &sc, 201, 41, 100).unwrap();
        let exact = bs_price(&BsInputs::new(sc.t, sc.maturity, sc.x, sc.k, 0.2).unwrap()).unwrap();
        let p = solve_price_pde(&model, &sc, &grid).unwrap().value_at(sc.x, sc.y).unwrap();
        assert_relative_eq!(p, exact, max_relative = 1e-4);
        let psi = solve_psi_pde(&model, &sc, &grid).unwrap().value_at(sc.x, sc.y).unwrap();
        let lam: f64 = 0.05 / 0.2;
        assert_relative_eq!(psi, -0.5 * lam * lam * sc.tau() - exact, max_relative = 1e-4);
    }

    #[test]
    fn constant_solution_is_preserved() {
        let model = ModelSpec::black_scholes(0.05, 0.2).unwrap();
        let sc = bs_scenario(0.0);
        let grid = Grid2D::around(&model, &sc, 41, 41, 8).unwrap();
        let sol = solve_psi_pde(&model, &sc, &grid).unwrap();
        let lam: f64 = 0.25;
        for v in &sol.values {
            assert_relative_eq!(*v, -0.5 * lam * lam * sc.tau(), max_relative = 1e-12);
        }
    }

    #[test]
    fn heston_price_dominates_payoff_and_refines() {
        let model = ModelSpec::heston(HestonParams::standard()).unwrap();
        let sc = Scenario::at_state(0.0, 6.0 / 52.0, 100f64.ln(), 0.04, 100f64.ln(), 1.0, 1.0);
        let grid = Grid2D::around(&model, &sc, 41, 41, 20).unwrap();
        let sol = solve_price_pde(&model, &sc, &grid).unwrap();
        let xs = grid.xs();
        // interior: away from the linear-extrapolation edges in x
        for i in 8..grid.nx - 8 {
            for j in 0..grid.ny {
                let intrinsic = (xs[i].exp() - sc.k.exp()).max(0.0);
                assert!(sol.values[i * grid.ny + j] >= intrinsic - 1e-6 * sc.k.exp());
            }
        }
        let r = certify_refinement(&grid, 2, |g| solve_psi_pde(&model, &sc, g)?.value_at(sc.x, sc.y)).unwrap();
        assert!(r.certified(), "{r:?}");
    }

    #[test]
    fn grid_validation() {
        let model = ModelSpec::black_scholes(0.05, 0.2).unwrap();
        let sc = bs_scenario(0.0);
        assert!(Grid2D::around(&model, &sc, 21, 41, 10).is_err());
        assert!(Grid2D::with_padding(&model, &sc, 41, 41, 10, 3.0, 5.0).is_err());
        let g = Grid2D::around(&model, &sc, 41, 41, 10).unwrap();
        let xs = g.refined().xs();
        assert!(xs.iter().any(|x| (x - sc.x).abs() < 1e-12));
        assert!(g.xs().iter().any(|x| (x - sc.x).abs() < 1e-12));
    }
}
