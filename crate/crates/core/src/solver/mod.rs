//! Joint optimization of feature codes and dual correlation filter.
//!
//! The problem solved per patch is
//!
//! ```text
//! min_{Z,u}  1/(4 lambda) sum_d ||S(Z_c,d)^T u||^2 + 1/4 ||u||^2 - u^T y
//!            + gamma tr(Z L Z^T)          s.t.  X = B Z
//! ```
//!
//! where `Z_c` is every code channel multiplied by the cosine window `c`.
//! ADMM splits it through an auxiliary `p = Z_c` and sweeps
//! `Z -> p -> u -> multipliers`. The `Z` block is minimized with
//! accelerated gradient steps; the `p` and `u` blocks have per-frequency
//! closed forms.

pub mod nag;

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coding::{Codebook, FeatureStack, LaplacianGraph};
use crate::dcf::{spectral_energy, train_from_spectra, DualFilter};
use crate::error::{Error, Result};
use crate::signal::{dft2, idft2, Grid2D, Plane, Spectrum};

pub use nag::NagReport;

const POWER_ITERATIONS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Filter ridge weight.
    pub lambda: f64,
    /// Laplacian weight.
    pub gamma: f64,
    /// Initial penalty.
    pub mu0: f64,
    /// Penalty ceiling.
    pub mu_max: f64,
    /// Penalty growth factor per sweep.
    pub rho: f64,
    pub admm_iters: usize,
    pub nag_iters: usize,
    /// Initial NAG step; `None` uses the inverse of the curvature bound
    /// `mu ||B||^2 + mu max(c)^2 + 2 gamma ||L||`.
    pub nag_step: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            gamma: 0.8,
            mu0: 1.0,
            mu_max: 1e6,
            rho: 3.0,
            admm_iters: 2,
            nag_iters: 3,
            nag_step: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return bad("gamma must be non-negative");
        }
        if !(self.mu0 > 0.0) || !(self.mu_max >= self.mu0) || !self.mu_max.is_finite() {
            return bad("need 0 < mu0 <= mu_max < inf");
        }
        if !(self.rho > 1.0) {
            return bad("rho must exceed 1");
        }
        if self.admm_iters == 0 || self.nag_iters == 0 {
            return bad("admm_iters and nag_iters must be at least 1");
        }
        if let Some(step) = self.nag_step {
            if !(step > 0.0) {
                return bad("nag_step must be positive");
            }
        }
        Ok(())
    }
}

/// Per-sweep diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    /// Augmented Lagrangian entering the sweep.
    pub lagrangian_start: f64,
    /// Augmented Lagrangian after the `u` block, same multipliers and penalty.
    pub lagrangian_end: f64,
    /// Model objective at `(Z, u)` with `p` replaced by `Z_c`.
    pub objective: f64,
    /// `||X - B Z||_F`.
    pub coding_residual: f64,
    /// `||p - Z_c||`.
    pub window_residual: f64,
    pub mu: f64,
}

#[derive(Clone, Debug)]
pub struct FofSolution {
    pub codes: FeatureStack,
    pub window_codes: FeatureStack,
    pub filter: DualFilter,
    pub trace: Vec<SweepRecord>,
}

impl FofSolution {
    pub fn objective_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.objective).collect()
    }

    pub fn residual_trace(&self) -> Vec<(f64, f64)> {
        self.trace.iter().map(|r| (r.coding_residual, r.window_residual)).collect()
    }
}

/// Writes one CSV row per sweep.
pub fn write_trace_csv<W: Write>(out: &mut W, trace: &[SweepRecord]) -> std::io::Result<()> {
    writeln!(out, "sweep,lagrangian_start,lagrangian_end,objective,coding_residual,window_residual,mu")?;
    for (i, r) in trace.iter().enumerate() {
        writeln!(
            out,
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.6e}",
            i + 1,
            r.lagrangian_start,
            r.lagrangian_end,
            r.objective,
            r.coding_residual,
            r.window_residual,
            r.mu
        )?;
    }
    Ok(())
}

/// Iterates of one ADMM run.
#[derive(Clone, Debug)]
pub struct FofState {
    pub z: FeatureStack,
    pub p: FeatureStack,
    /// Multiplier of `X = B Z` (`D` channels).
    pub y1: FeatureStack,
    /// Multiplier of `p = Z_c` (`k` channels).
    pub y2: FeatureStack,
    pub filter: DualFilter,
    pub mu: f64,
}

/// Fixed data of one solve plus precomputed products.
pub struct FofProblem<'a> {
    x: &'a FeatureStack,
    book: &'a Codebook,
    laplacian: Option<&'a LaplacianGraph>,
    window: &'a Plane,
    y: &'a Plane,
    y_hat: Spectrum,
    cfg: SolverConfig,
    book_norm_sq: f64,
    laplacian_norm: f64,
    window_max_sq: f64,
}

impl<'a> FofProblem<'a> {
    pub fn new(
        x: &'a FeatureStack,
        book: &'a Codebook,
        laplacian: Option<&'a LaplacianGraph>,
        y: &'a Plane,
        c: &'a Plane,
        cfg: &SolverConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let grid = x.grid();
        if x.channels() != book.dim() {
            return Err(Error::DimensionMismatch(format!(
                "features have {} channels, codebook dimension is {}",
                x.channels(),
                book.dim()
            )));
        }
        grid.ensure_same(y.grid())?;
        grid.ensure_same(c.grid())?;
        if let Some(lap) = laplacian {
            if lap.size() != grid.len() {
                return Err(Error::DimensionMismatch(format!(
                    "laplacian over {} nodes, patch has {} pixels",
                    lap.size(),
                    grid.len()
                )));
            }
        }
        // gamma = 0 switches the graph off entirely.
        let laplacian = laplacian.filter(|_| cfg.gamma > 0.0);
        Ok(Self {
            x,
            book,
            laplacian,
            window: c,
            y,
            y_hat: dft2(y),
            cfg: cfg.clone(),
            book_norm_sq: book.spectral_norm_sq(POWER_ITERATIONS),
            laplacian_norm: laplacian.map_or(0.0, |l| l.spectral_norm(POWER_ITERATIONS)),
            window_max_sq: c.values().iter().map(|v| v * v).fold(0.0, f64::max),
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn grid(&self) -> Grid2D {
        self.x.grid()
    }

    /// `Z = B^T X`, `p = Z_c`, `u = 0`, zero multipliers, `mu = mu0`.
    pub fn initial_state(&self) -> Result<FofState> {
        let z = self.book.project(self.x)?;
        let p = z.windowed(self.window)?;
        let grid = self.grid();
        Ok(FofState {
            y1: FeatureStack::zeros(grid, self.book.dim()),
            y2: FeatureStack::zeros(grid, self.book.atoms()),
            filter: DualFilter::zeros(grid),
            mu: self.cfg.mu0,
            z,
            p,
        })
    }

    /// Runs the configured number of sweeps from the projection start.
    pub fn solve(&self) -> Result<FofSolution> {
        let mut state = self.initial_state()?;
        let mut trace = Vec::with_capacity(self.cfg.admm_iters);
        for _ in 0..self.cfg.admm_iters {
            trace.push(self.sweep(&mut state)?);
            self.update_multipliers(&mut state)?;
        }
        Ok(FofSolution { codes: state.z, window_codes: state.p, filter: state.filter, trace })
    }

    /// One `Z -> p -> u` block pass (multipliers untouched).
    pub fn sweep(&self, state: &mut FofState) -> Result<SweepRecord> {
        let lagrangian_start = self.lagrangian(state)?;
        self.solve_z(state)?;
        self.solve_p(state)?;
        self.solve_u(state)?;
        if !state.z.is_finite() || !state.p.is_finite() {
            return Err(Error::NonFinite("fof sweep"));
        }
        if state.filter.spatial().values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dual filter"));
        }
        let (coding_residual, window_residual) = self.residuals(state)?;
        Ok(SweepRecord {
            lagrangian_start,
            lagrangian_end: self.lagrangian(state)?,
            objective: self.objective(state)?,
            coding_residual,
            window_residual,
            mu: state.mu,
        })
    }

    /// Curvature bound used as the first NAG inverse step.
    pub fn lipschitz_estimate(&self, mu: f64) -> f64 {
        match self.cfg.nag_step {
            Some(step) => 1.0 / step,
            None => {
                mu * self.book_norm_sq
                    + mu * self.window_max_sq
                    + 2.0 * self.cfg.gamma * self.laplacian_norm
            }
        }
    }

    /// `f(Z)` of the code subproblem, with the gradient written into `grad` if given.
    pub fn z_objective(&self, state: &FofState, z: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let grid = self.grid();
        let n = grid.len();
        let (dim, k) = (self.book.dim(), self.book.atoms());
        let mu = state.mu;
        let inv_mu = 1.0 / mu;
        let c = self.window.values();

        // r1 = X - B Z + Y1 / mu
        let mut r1 = vec![0.0; dim * n];
        for d in 0..dim {
            let row = &mut r1[d * n..(d + 1) * n];
            for ((o, x), y) in row.iter_mut().zip(self.x.channel(d)).zip(state.y1.channel(d)) {
                *o = x + y * inv_mu;
            }
            for j in 0..k {
                let b = self.book.get(d, j);
                if b != 0.0 {
                    for (o, zv) in row.iter_mut().zip(&z[j * n..(j + 1) * n]) {
                        *o -= b * zv;
                    }
                }
            }
        }
        // r2 = p - Z_c + y2 / mu
        let mut r2 = vec![0.0; k * n];
        for j in 0..k {
            let (p, y2) = (state.p.channel(j), state.y2.channel(j));
            for i in 0..n {
                r2[j * n + i] = p[i] - z[j * n + i] * c[i] + y2[i] * inv_mu;
            }
        }
        let mut value = 0.5 * mu * (sq_norm(&r1) + sq_norm(&r2));

        let mut lz = vec![0.0; if self.laplacian.is_some() { n } else { 0 }];
        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        for j in 0..k {
            let zj = &z[j * n..(j + 1) * n];
            if let Some(lap) = self.laplacian {
                lap.apply_into(zj, &mut lz);
                value += self.cfg.gamma * zj.iter().zip(&lz).map(|(a, b)| a * b).sum::<f64>();
            }
            if let Some(g) = grad.as_deref_mut() {
                let gj = &mut g[j * n..(j + 1) * n];
                for d in 0..dim {
                    let b = self.book.get(d, j);
                    if b != 0.0 {
                        for (o, r) in gj.iter_mut().zip(&r1[d * n..(d + 1) * n]) {
                            *o -= mu * b * r;
                        }
                    }
                }
                for i in 0..n {
                    gj[i] -= mu * r2[j * n + i] * c[i];
                }
                if self.laplacian.is_some() {
                    for (o, l) in gj.iter_mut().zip(&lz) {
                        *o += 2.0 * self.cfg.gamma * l;
                    }
                }
            }
        }
        value
    }

    /// Accelerated-gradient pass on the code block.
    pub fn solve_z(&self, state: &mut FofState) -> Result<NagReport> {
        let lip = self.lipschitz_estimate(state.mu);
        let start = state.z.values().to_vec();
        let snapshot = state.clone();
        let (z, report) = nag::minimize(
            |z, g| self.z_objective(&snapshot, z, Some(g)),
            |z| self.z_objective(&snapshot, z, None),
            &start,
            lip,
            self.cfg.nag_iters,
        );
        state.z = FeatureStack::from_vec(self.grid(), self.book.atoms(), z)
            .map_err(|_| Error::NonFinite("code update"))?;
        Ok(report)
    }

    /// `p_hat_d = (mu Z_hat_c,d - y2_hat_d) / (|u_hat|^2 / (2 lambda) + mu)` per channel.
    pub fn solve_p(&self, state: &mut FofState) -> Result<()> {
        let grid = self.grid();
        let mu = state.mu;
        let inv = 1.0 / (2.0 * self.cfg.lambda);
        let denom: Vec<f64> = state
            .filter
            .spectrum()
            .values()
            .iter()
            .map(|u| inv * u.norm_sqr() + mu)
            .collect();
        let zc = state.z.windowed(self.window)?;
        let mut planes = Vec::with_capacity(zc.channels());
        for j in 0..zc.channels() {
            let zh = dft2(&zc.channel_plane(j));
            let yh = dft2(&state.y2.channel_plane(j));
            let values: Vec<Complex64> = zh
                .values()
                .iter()
                .zip(yh.values())
                .zip(&denom)
                .map(|((z, y), d)| (z * mu - y) / d)
                .collect();
            planes.push(idft2(&Spectrum::from_vec(grid, values)?)?);
        }
        state.p = FeatureStack::from_planes(&planes)?;
        Ok(())
    }

    /// `u_hat = y_hat / (sum_d |p_hat_d|^2 / (2 lambda) + 1/2)`.
    pub fn solve_u(&self, state: &mut FofState) -> Result<()> {
        state.filter = train_from_spectra(&state.p.spectra(), &self.y_hat, self.cfg.lambda)?;
        Ok(())
    }

    /// Dual ascent on both constraints, then `mu <- min(mu_max, rho mu)`.
    pub fn update_multipliers(&self, state: &mut FofState) -> Result<()> {
        let mu = state.mu;
        let bz = self.book.reconstruct(&state.z)?;
        for ((y, x), b) in state.y1.values_mut().iter_mut().zip(self.x.values()).zip(bz.values()) {
            *y += mu * (x - b);
        }
        let zc = state.z.windowed(self.window)?;
        for ((y, p), z) in state.y2.values_mut().iter_mut().zip(state.p.values()).zip(zc.values()) {
            *y += mu * (p - z);
        }
        state.mu = (self.cfg.rho * mu).min(self.cfg.mu_max);
        Ok(())
    }

    /// `(||X - B Z||_F, ||p - Z_c||)`.
    pub fn residuals(&self, state: &FofState) -> Result<(f64, f64)> {
        let bz = self.book.reconstruct(&state.z)?;
        let coding: f64 = self.x.values().iter().zip(bz.values()).map(|(a, b)| (a - b).powi(2)).sum();
        let zc = state.z.windowed(self.window)?;
        let win: f64 = state.p.values().iter().zip(zc.values()).map(|(a, b)| (a - b).powi(2)).sum();
        Ok((coding.sqrt(), win.sqrt()))
    }

    fn filter_terms(&self, filter: &DualFilter, channels: &FeatureStack) -> f64 {
        let n = self.grid().len() as f64;
        let energy = spectral_energy(&channels.spectra());
        let u_hat = filter.spectrum().values();
        // ||S(p)^T u||^2 = (1/MN) sum |p_hat|^2 |u_hat|^2
        let quad: f64 = energy.iter().zip(u_hat).map(|(e, u)| e * u.norm_sqr()).sum::<f64>() / n;
        let u = filter.spatial();
        quad / (4.0 * self.cfg.lambda) + 0.25 * u.norm_sq()
            - u.values().iter().zip(self.y.values()).map(|(a, b)| a * b).sum::<f64>()
    }

    fn laplacian_term(&self, z: &FeatureStack) -> f64 {
        self.laplacian.map_or(0.0, |l| self.cfg.gamma * l.trace_form(z))
    }

    /// Augmented Lagrangian at the current iterate.
    pub fn lagrangian(&self, state: &FofState) -> Result<f64> {
        let mu = state.mu;
        let bz = self.book.reconstruct(&state.z)?;
        let mut coupling = 0.0;
        for ((x, b), y) in self.x.values().iter().zip(bz.values()).zip(state.y1.values()) {
            let r = x - b;
            coupling += y * r + 0.5 * mu * r * r;
        }
        let zc = state.z.windowed(self.window)?;
        for ((p, z), y) in state.p.values().iter().zip(zc.values()).zip(state.y2.values()) {
            let r = p - z;
            coupling += y * r + 0.5 * mu * r * r;
        }
        Ok(self.filter_terms(&state.filter, &state.p) + self.laplacian_term(&state.z) + coupling)
    }

    /// Model objective with `p` replaced by `Z_c` (constraint terms dropped).
    pub fn objective(&self, state: &FofState) -> Result<f64> {
        let zc = state.z.windowed(self.window)?;
        Ok(self.filter_terms(&state.filter, &zc) + self.laplacian_term(&state.z))
    }
}

/// Convenience wrapper: build the problem and run all sweeps.
pub fn fof_solve(
    x: &FeatureStack,
    book: &Codebook,
    laplacian: Option<&LaplacianGraph>,
    y: &Plane,
    c: &Plane,
    cfg: &SolverConfig,
) -> Result<FofSolution> {
    FofProblem::new(x, book, laplacian, y, c, cfg)?.solve()
}

/// Codes from the coding terms alone:
/// `min_Z 1/2 ||X - B Z||_F^2 + gamma tr(Z L Z^T)`, started at `B^T X`.
pub fn laplacian_coding(
    x: &FeatureStack,
    book: &Codebook,
    laplacian: Option<&LaplacianGraph>,
    gamma: f64,
    iterations: usize,
) -> Result<FeatureStack> {
    let grid = x.grid();
    let n = grid.len();
    let (dim, k) = (book.dim(), book.atoms());
    let start = book.project(x)?;
    let lap = laplacian.filter(|_| gamma > 0.0);
    let value_grad = |z: &[f64], grad: Option<&mut [f64]>| -> f64 {
        let mut r = x.values().to_vec();
        for d in 0..dim {
            for j in 0..k {
                let b = book.get(d, j);
                for i in 0..n {
                    r[d * n + i] -= b * z[j * n + i];
                }
            }
        }
        let mut value = 0.5 * sq_norm(&r);
        let mut lz = vec![0.0; n];
        let mut grad = grad;
        for j in 0..k {
            let zj = &z[j * n..(j + 1) * n];
            if let Some(l) = lap {
                l.apply_into(zj, &mut lz);
                value += gamma * zj.iter().zip(&lz).map(|(a, b)| a * b).sum::<f64>();
            }
            if let Some(g) = grad.as_deref_mut() {
                let gj = &mut g[j * n..(j + 1) * n];
                gj.iter_mut().for_each(|v| *v = 0.0);
                for d in 0..dim {
                    let b = book.get(d, j);
                    for i in 0..n {
                        gj[i] -= b * r[d * n + i];
                    }
                }
                if lap.is_some() {
                    for (o, l) in gj.iter_mut().zip(&lz) {
                        *o += 2.0 * gamma * l;
                    }
                }
            }
        }
        value
    };
    let lip = book.spectral_norm_sq(POWER_ITERATIONS)
        + 2.0 * gamma * lap.map_or(0.0, |l| l.spectral_norm(POWER_ITERATIONS));
    let (z, _) = nag::minimize(
        |z, g| value_grad(z, Some(g)),
        |z| value_grad(z, None),
        start.values(),
        lip,
        iterations,
    );
    FeatureStack::from_vec(grid, k, z).map_err(|_| Error::NonFinite("laplacian coding"))
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::build_laplacian;
    use crate::dcf::dcf_train;
    use crate::signal::{gaussian_labels, hann_window};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Instance {
        x: FeatureStack,
        book: Codebook,
        lap: LaplacianGraph,
        y: Plane,
        c: Plane,
    }

    fn instance(grid: Grid2D, dim: usize, k: usize, seed: u64) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> =
            (0..k).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let book = Codebook::from_columns(&cols).unwrap();
        let x = FeatureStack::from_vec(
            grid,
            dim,
            (0..grid.len() * dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let lap = build_laplacian(&x, 3.min(grid.len() - 1)).unwrap();
        Instance {
            x,
            book,
            lap,
            y: gaussian_labels(grid, 1.0).unwrap(),
            c: hann_window(grid).unwrap(),
        }
    }

    fn random_state(problem: &FofProblem<'_>, seed: u64) -> FofState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = problem.initial_state().unwrap();
        for v in s.p.values_mut().iter_mut().chain(s.y1.values_mut()).chain(s.y2.values_mut()) {
            *v = rng.random_range(-1.0..1.0);
        }
        s.filter = DualFilter::from_spatial(Plane::from_fn(problem.grid(), |_, _| rng.random_range(-1.0..1.0)));
        s.mu = 2.5;
        s
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = SolverConfig::default();
        assert_eq!((cfg.lambda, cfg.gamma), (0.5, 0.8));
        assert_eq!((cfg.admm_iters, cfg.nag_iters), (2, 3));
        cfg.validate().unwrap();
        assert!(SolverConfig { rho: 1.0, ..cfg.clone() }.validate().is_err());
        assert!(SolverConfig { admm_iters: 0, ..cfg.clone() }.validate().is_err());
        assert!(SolverConfig { lambda: 0.0, ..cfg }.validate().is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let inst = instance(Grid2D::new(3, 4).unwrap(), 3, 2, 1);
        let cfg = SolverConfig { gamma: 0.7, ..Default::default() };
        let problem = FofProblem::new(&inst.x, &inst.book, Some(&inst.lap), &inst.y, &inst.c, &cfg).unwrap();
        let state = random_state(&problem, 2);
        let z0 = state.z.values().to_vec();
        let mut grad = vec![0.0; z0.len()];
        problem.z_objective(&state, &z0, Some(&mut grad));
        let h = 1e-5;
        for i in 0..z0.len() {
            let mut zp = z0.clone();
            let mut zm = z0.clone();
            zp[i] += h;
            zm[i] -= h;
            let fd = (problem.z_objective(&state, &zp, None) - problem.z_objective(&state, &zm, None)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-5 * grad[i].abs().max(1.0), "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn orthonormal_codebook_without_window_has_closed_form() {
        let grid = Grid2D::square(4).unwrap();
        let inst = instance(grid, 3, 3, 4);
        let book = Codebook::identity(3);
        let zero_window = Plane::zeros(grid);
        let cfg = SolverConfig { gamma: 0.0, nag_iters: 50, ..Default::default() };
        let problem = FofProblem::new(&inst.x, &book, None, &inst.y, &zero_window, &cfg).unwrap();
        let mut state = random_state(&problem, 5);
        state.mu = 1.0;
        problem.solve_z(&mut state).unwrap();
        for (j, d) in (0..3).zip(0..3) {
            for i in 0..grid.len() {
                let expected = inst.x.get(d, i) + state.y1.get(d, i);
                assert!((state.z.get(j, i) - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn empty_graph_makes_gamma_irrelevant() {
        let grid = Grid2D::square(4).unwrap();
        let inst = instance(grid, 2, 2, 6);
        let empty = LaplacianGraph::from_edges(grid.len(), &[]).unwrap();
        let run = |gamma: f64| {
            let cfg = SolverConfig { gamma, ..Default::default() };
            fof_solve(&inst.x, &inst.book, Some(&empty), &inst.y, &inst.c, &cfg).unwrap()
        };
        let (a, b) = (run(0.1), run(25.0));
        for (p, q) in a.codes.values().iter().zip(b.codes.values()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn nag_steps_never_increase_f() {
        let inst = instance(Grid2D::square(5).unwrap(), 4, 3, 9);
        let cfg = SolverConfig { nag_iters: 25, ..Default::default() };
        let problem = FofProblem::new(&inst.x, &inst.book, Some(&inst.lap), &inst.y, &inst.c, &cfg).unwrap();
        let mut state = random_state(&problem, 3);
        let report = problem.solve_z(&mut state).unwrap();
        for w in report.values.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs());
        }
    }

    #[test]
    fn p_update_special_cases() {
        let inst = instance(Grid2D::square(4).unwrap(), 3, 2, 10);
        let cfg = SolverConfig::default();
        let problem = FofProblem::new(&inst.x, &inst.book, Some(&inst.lap), &inst.y, &inst.c, &cfg).unwrap();
        let mut state = random_state(&problem, 11);
        state.filter = DualFilter::zeros(problem.grid());
        problem.solve_p(&mut state).unwrap();
        let zc = state.z.windowed(&inst.c).unwrap();
        for ((p, z), y) in state.p.values().iter().zip(zc.values()).zip(state.y2.values()) {
            assert!((p - (z - y / state.mu)).abs() < 1e-12);
        }

        let mut state = random_state(&problem, 12);
        state.y2 = FeatureStack::zeros(problem.grid(), 2);
        state.mu = 1e8;
        problem.solve_p(&mut state).unwrap();
        let zc = state.z.windowed(&inst.c).unwrap();
        let num: f64 = state.p.values().iter().zip(zc.values()).map(|(a, b)| (a - b).powi(2)).sum();
        assert!((num / zc.norm_sq()).sqrt() <= 1e-6);
    }

    #[test]
    fn u_update_special_cases() {
        let inst = instance(Grid2D::square(4).unwrap(), 3, 2, 13);
        let cfg = SolverConfig::default();
        let problem = FofProblem::new(&inst.x, &inst.book, None, &inst.y, &inst.c, &cfg).unwrap();
        let mut state = problem.initial_state().unwrap();
        state.p = FeatureStack::zeros(problem.grid(), 2);
        problem.solve_u(&mut state).unwrap();
        for (u, y) in state.filter.spatial().values().iter().zip(inst.y.values()) {
            assert!((u - 2.0 * y).abs() < 1e-12);
        }
        let mut state = random_state(&problem, 1);
        let base = spectral_energy(&state.p.spectra());
        for v in state.p.values_mut() {
            *v *= 3.0;
        }
        let scaled = spectral_energy(&state.p.spectra());
        for (a, b) in base.iter().zip(&scaled) {
            assert!((9.0 * a - b).abs() <= 1e-10 * b.max(1.0));
        }
    }

    #[test]
    fn multiplier_update_rules() {
        let inst = instance(Grid2D::square(4).unwrap(), 2, 2, 14);
        let book = Codebook::identity(2);
        let cfg = SolverConfig { mu_max: 5.0, ..Default::default() };
        let problem = FofProblem::new(&inst.x, &book, None, &inst.y, &inst.c, &cfg).unwrap();
        // Initial state is feasible: X = B Z and p = Z_c.
        let mut state = problem.initial_state().unwrap();
        state.y1.values_mut()[0] = 0.5;
        let before = state.clone();
        problem.update_multipliers(&mut state).unwrap();
        assert_eq!(state.y1, before.y1);
        assert_eq!(state.y2, before.y2);
        assert_eq!(state.mu, 3.0);
        problem.update_multipliers(&mut state).unwrap();
        assert_eq!(state.mu, 5.0);
        problem.update_multipliers(&mut state).unwrap();
        assert_eq!(state.mu, 5.0);
    }

    #[test]
    fn identity_codebook_without_graph_recovers_baseline_filter() {
        let grid = Grid2D::square(6).unwrap();
        let inst = instance(grid, 3, 3, 15);
        let book = Codebook::identity(3);
        let cfg = SolverConfig { gamma: 0.0, mu0: 1e3, admm_iters: 30, nag_iters: 10, ..Default::default() };
        let sol = fof_solve(&inst.x, &book, None, &inst.y, &inst.c, &cfg).unwrap();
        let baseline = dcf_train(&inst.x, &inst.y, &inst.c, cfg.lambda).unwrap();
        let num: f64 = sol.filter.spatial().values().iter().zip(baseline.spatial().values())
            .map(|(a, b)| (a - b).powi(2)).sum();
        let rel = (num / baseline.spatial().norm_sq()).sqrt();
        assert!(rel <= 1e-3, "relative error {rel}");
    }

    #[test]
    fn trace_has_one_row_per_sweep() {
        let inst = instance(Grid2D::square(4).unwrap(), 3, 2, 16);
        let cfg = SolverConfig { admm_iters: 4, ..Default::default() };
        let sol = fof_solve(&inst.x, &inst.book, Some(&inst.lap), &inst.y, &inst.c, &cfg).unwrap();
        assert_eq!(sol.trace.len(), 4);
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &sol.trace).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }

    #[test]
    fn laplacian_coding_decreases_coding_objective() {
        let inst = instance(Grid2D::square(5).unwrap(), 4, 3, 17);
        let z0 = inst.book.project(&inst.x).unwrap();
        let z = laplacian_coding(&inst.x, &inst.book, Some(&inst.lap), 0.5, 20).unwrap();
        let energy = |z: &FeatureStack| {
            let bz = inst.book.reconstruct(z).unwrap();
            let r: f64 = inst.x.values().iter().zip(bz.values()).map(|(a, b)| (a - b).powi(2)).sum();
            0.5 * r + 0.5 * inst.lap.trace_form(z)
        };
        assert!(energy(&z) < energy(&z0));
    }
}
