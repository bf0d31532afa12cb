//! Penalized binomial regression solvers.
//!
//! All four penalties minimize the scaled negative log-likelihood plus a
//! penalty on the non-intercept coefficients:
//!
//!   ridge            f(b) + lambda * ||b||_2^2
//!   lasso            f(b) + lambda * ||b||_1
//!   group lasso      f(b) + lambda * sum_l sqrt(p_l) ||b_l||_2
//!   exclusive lasso  f(b) + (lambda/2) * sum_l ||b_l||_1^2
//!
//! The intercept is never penalized. Ridge is solved by damped Newton with
//! conjugate-gradient inner solves; the lasso and exclusive lasso by cyclic
//! coordinate descent with a global curvature majorization (the logistic
//! Hessian is bounded by X'X/(4n)); the group lasso by block coordinate
//! descent with group soft-thresholding. Every converged fit is certified by
//! its penalty-specific subgradient (KKT) residual.

use crate::design::GroupingScheme;
use crate::error::{Error, Result};
use crate::genlasso::{self, DMatrixSpec};
use crate::objective::{gradient_from_eta, nll_from_eta, sigmoid};
use crate::sparse::SparseColMatrix;

/// Maximum full sweeps / outer iterations per fit.
pub const MAX_SWEEPS: usize = 10_000;
/// Relative objective-change convergence threshold per sweep.
pub const OBJ_TOL: f64 = 1e-10;

pub const RIDGE_KKT_TOL: f64 = 1e-8;
pub const LASSO_KKT_TOL: f64 = 1e-8;
pub const GROUP_KKT_TOL: f64 = 1e-8;
pub const EXCLUSIVE_KKT_TOL: f64 = 1e-7;

/// Penalty structure attached to a fit.
#[derive(Debug, Clone)]
pub enum Penalty {
    Ridge,
    Lasso,
    GroupLasso { grouping: GroupingScheme },
    ExclusiveLasso { grouping: GroupingScheme },
    GeneralizedLasso { d_spec: DMatrixSpec },
}

impl Penalty {
    pub fn kind(&self) -> PenaltyKind {
        match self {
            Penalty::Ridge => PenaltyKind::Ridge,
            Penalty::Lasso => PenaltyKind::Lasso,
            Penalty::GroupLasso { .. } => PenaltyKind::GroupLasso,
            Penalty::ExclusiveLasso { .. } => PenaltyKind::ExclusiveLasso,
            Penalty::GeneralizedLasso { .. } => PenaltyKind::GeneralizedLasso,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyKind {
    Ridge,
    Lasso,
    GroupLasso,
    ExclusiveLasso,
    GeneralizedLasso,
}

impl PenaltyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PenaltyKind::Ridge => "ridge",
            PenaltyKind::Lasso => "lasso",
            PenaltyKind::GroupLasso => "group_lasso",
            PenaltyKind::ExclusiveLasso => "exclusive_lasso",
            PenaltyKind::GeneralizedLasso => "generalized_lasso",
        }
    }

    pub fn parse(s: &str) -> Result<PenaltyKind> {
        match s {
            "ridge" => Ok(PenaltyKind::Ridge),
            "lasso" => Ok(PenaltyKind::Lasso),
            "group_lasso" => Ok(PenaltyKind::GroupLasso),
            "exclusive_lasso" => Ok(PenaltyKind::ExclusiveLasso),
            "generalized_lasso" => Ok(PenaltyKind::GeneralizedLasso),
            other => Err(Error::Config(format!("unknown penalty kind '{other}'"))),
        }
    }
}

/// A penalty with its shrinkage level.
#[derive(Debug, Clone)]
pub struct PenaltySpec {
    pub penalty: Penalty,
    pub lambda: f64,
}

impl PenaltySpec {
    pub fn new(penalty: Penalty, lambda: f64) -> Result<PenaltySpec> {
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        if let Penalty::GroupLasso { grouping } | Penalty::ExclusiveLasso { grouping } = &penalty {
            grouping.validate()?;
        }
        Ok(PenaltySpec { penalty, lambda })
    }
}

/// Result of a single fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub kind: PenaltyKind,
    pub lambda: f64,
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
}

impl FitResult {
    /// Coefficient vector of length N+1, intercept first.
    pub fn full_coefficients(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.beta.len() + 1);
        out.push(self.intercept);
        out.extend_from_slice(&self.beta);
        out
    }
}

/// Per-player coefficient pair extracted from a fit over X = (X_inv, X_of).
#[derive(Debug, Clone, PartialEq)]
pub struct PlayerPair {
    pub player_id: String,
    pub beta_inv: f64,
    pub beta_of: f64,
}

pub fn player_pairs(fit: &FitResult, pm: &crate::design::PossessionMatrix) -> Vec<PlayerPair> {
    pm.players
        .iter()
        .enumerate()
        .map(|(i, p)| PlayerPair {
            player_id: p.clone(),
            beta_inv: fit.beta[pm.inv_col(i)],
            beta_of: fit.beta[pm.of_col(i)],
        })
        .collect()
}

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Penalty term value on the non-intercept block.
pub fn penalty_value(spec: &PenaltySpec, beta: &[f64]) -> f64 {
    match &spec.penalty {
        Penalty::Ridge => spec.lambda * beta.iter().map(|b| b * b).sum::<f64>(),
        Penalty::Lasso => spec.lambda * beta.iter().map(|b| b.abs()).sum::<f64>(),
        Penalty::GroupLasso { grouping } => {
            let mut norms = vec![0.0; grouping.n_groups];
            for (j, &g) in grouping.assignment.iter().enumerate() {
                norms[g] += beta[j] * beta[j];
            }
            let sizes = grouping.sizes();
            spec.lambda
                * norms
                    .iter()
                    .zip(&sizes)
                    .map(|(&n2, &p)| (p as f64).sqrt() * n2.sqrt())
                    .sum::<f64>()
        }
        Penalty::ExclusiveLasso { grouping } => {
            let mut mass = vec![0.0; grouping.n_groups];
            for (j, &g) in grouping.assignment.iter().enumerate() {
                mass[g] += beta[j].abs();
            }
            0.5 * spec.lambda * mass.iter().map(|m| m * m).sum::<f64>()
        }
        Penalty::GeneralizedLasso { d_spec } => {
            let d = d_spec.materialize().expect("validated spec");
            let mut db = vec![0.0; d.nrows()];
            d.mul_vec(beta, &mut db);
            spec.lambda * db.iter().map(|v| v.abs()).sum::<f64>()
        }
    }
}

fn initial_intercept(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let clipped = mean.clamp(1e-8, 1.0 - 1e-8);
    (clipped / (1.0 - clipped)).ln().clamp(-15.0, 15.0)
}

struct SolveState {
    intercept: f64,
    beta: Vec<f64>,
    eta: Vec<f64>,
}

impl SolveState {
    fn new(x: &SparseColMatrix, y: &[f64], warm: Option<(f64, Vec<f64>)>) -> SolveState {
        let (intercept, beta) = match warm {
            Some((i0, b)) => (i0, b),
            None => (initial_intercept(y), vec![0.0; x.ncols()]),
        };
        let mut eta = vec![0.0; x.nrows()];
        x.mul_vec(&beta, &mut eta);
        for e in eta.iter_mut() {
            *e += intercept;
        }
        SolveState { intercept, beta, eta }
    }

    fn refresh_eta(&mut self, x: &SparseColMatrix) {
        x.mul_vec(&self.beta, &mut self.eta);
        for e in self.eta.iter_mut() {
            *e += self.intercept;
        }
    }

    /// Exact 1-D intercept descent step (Newton with halving safeguard).
    fn intercept_step(&mut self, y: &[f64]) {
        let n = y.len() as f64;
        let mut g0 = 0.0;
        let mut w0 = 0.0;
        for (&e, &yi) in self.eta.iter().zip(y) {
            let h = sigmoid(e);
            g0 += h - yi;
            w0 += h * (1.0 - h);
        }
        g0 /= n;
        w0 /= n;
        if g0 == 0.0 {
            return;
        }
        let mut step = -g0 / w0.max(1e-10);
        let f_before = nll_from_eta(&self.eta, y);
        for _ in 0..40 {
            let trial: Vec<f64> = self.eta.iter().map(|&e| e + step).collect();
            if nll_from_eta(&trial, y) <= f_before + 1e-16 {
                self.eta = trial;
                self.intercept += step;
                return;
            }
            step *= 0.5;
        }
    }
}

fn check_inputs(x: &SparseColMatrix, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Config(format!(
            "matrix has {} rows but response has {}",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::Config("empty design matrix".into()));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Config("response must be 0/1".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// KKT residuals
// ---------------------------------------------------------------------------

/// Penalty-specific subgradient residual at (intercept, beta).
/// The intercept stationarity |g0| always participates.
pub fn kkt_residual(
    x: &SparseColMatrix,
    y: &[f64],
    spec: &PenaltySpec,
    intercept: f64,
    beta: &[f64],
) -> f64 {
    let mut eta = vec![0.0; x.nrows()];
    x.mul_vec(beta, &mut eta);
    for e in eta.iter_mut() {
        *e += intercept;
    }
    let (g0, g) = gradient_from_eta(x, &eta, y);
    let lambda = spec.lambda;
    let mut res: f64 = g0.abs();
    match &spec.penalty {
        Penalty::Ridge => {
            for (gj, bj) in g.iter().zip(beta) {
                res = res.max((gj + 2.0 * lambda * bj).abs());
            }
        }
        Penalty::Lasso => {
            for (gj, bj) in g.iter().zip(beta) {
                if *bj != 0.0 {
                    res = res.max((gj + lambda * bj.signum()).abs());
                } else {
                    res = res.max((gj.abs() - lambda).max(0.0));
                }
            }
        }
        Penalty::GroupLasso { grouping } => {
            let members = grouping.members();
            for group in &members {
                let p_l = (group.len() as f64).sqrt();
                let norm: f64 = group.iter().map(|&j| beta[j] * beta[j]).sum::<f64>().sqrt();
                if norm == 0.0 {
                    let gnorm: f64 = group.iter().map(|&j| g[j] * g[j]).sum::<f64>().sqrt();
                    res = res.max((gnorm - lambda * p_l).max(0.0));
                } else {
                    let r2: f64 = group
                        .iter()
                        .map(|&j| {
                            let v = g[j] + lambda * p_l * beta[j] / norm;
                            v * v
                        })
                        .sum();
                    res = res.max(r2.sqrt());
                }
            }
        }
        Penalty::ExclusiveLasso { grouping } => {
            let mut mass = vec![0.0; grouping.n_groups];
            for (j, &gid) in grouping.assignment.iter().enumerate() {
                mass[gid] += beta[j].abs();
            }
            for (j, &gid) in grouping.assignment.iter().enumerate() {
                let s = mass[gid];
                let r = if beta[j] != 0.0 {
                    (g[j] + lambda * s * beta[j].signum()).abs()
                } else if s > 0.0 {
                    (g[j].abs() - lambda * s).max(0.0)
                } else {
                    g[j].abs()
                };
                res = res.max(r);
            }
        }
        Penalty::GeneralizedLasso { d_spec } => {
            let d = d_spec.materialize().expect("validated spec");
            return genlasso::kkt_residual_genlasso(x, y, lambda, &d, intercept, beta);
        }
    }
    res
}

fn kkt_tolerance(kind: PenaltyKind) -> f64 {
    match kind {
        PenaltyKind::Ridge => RIDGE_KKT_TOL,
        PenaltyKind::Lasso => LASSO_KKT_TOL,
        PenaltyKind::GroupLasso => GROUP_KKT_TOL,
        PenaltyKind::ExclusiveLasso => EXCLUSIVE_KKT_TOL,
        PenaltyKind::GeneralizedLasso => genlasso::GENLASSO_KKT_TOL,
    }
}

// ---------------------------------------------------------------------------
// Ridge: damped Newton with conjugate-gradient inner solves
// ---------------------------------------------------------------------------

/// Hessian-vector product for F = nll + lambda ||beta||^2:
/// H [v0; v] = [(1/n) 1'W u ; (1/n) X'W u + 2 lambda v],  u = v0 1 + X v.
fn ridge_hessian_apply(
    x: &SparseColMatrix,
    w: &[f64],
    lambda: f64,
    v0: f64,
    v: &[f64],
    out_v: &mut [f64],
    scratch: &mut [f64],
) -> f64 {
    x.mul_vec(v, scratch);
    let n = w.len() as f64;
    let mut wu_sum = 0.0;
    for (ui, &wi) in scratch.iter_mut().zip(w) {
        *ui += v0;
        *ui *= wi;
        wu_sum += *ui;
    }
    x.tr_mul_vec(scratch, 1.0 / n, out_v);
    for (o, &vj) in out_v.iter_mut().zip(v) {
        *o += 2.0 * lambda * vj;
    }
    wu_sum / n
}

pub fn fit_ridge(x: &SparseColMatrix, y: &[f64], lambda: f64) -> Result<FitResult> {
    fit_ridge_warm(x, y, lambda, None)
}

pub fn fit_ridge_warm(
    x: &SparseColMatrix,
    y: &[f64],
    lambda: f64,
    warm: Option<(f64, Vec<f64>)>,
) -> Result<FitResult> {
    check_inputs(x, y)?;
    let spec = PenaltySpec::new(Penalty::Ridge, lambda)?;
    let p = x.ncols();
    let n = x.nrows();
    let mut st = SolveState::new(x, y, warm);
    let mut objective = nll_from_eta(&st.eta, y) + penalty_value(&spec, &st.beta);
    let mut converged = false;
    let mut iterations = 0;

    for outer in 0..500 {
        iterations = outer + 1;
        let (g0, mut g) = gradient_from_eta(x, &st.eta, y);
        for (gj, bj) in g.iter_mut().zip(&st.beta) {
            *gj += 2.0 * lambda * bj;
        }
        let grad_norm = g
            .iter()
            .fold(g0.abs(), |acc, v| acc.max(v.abs()));
        if grad_norm <= RIDGE_KKT_TOL {
            converged = true;
            break;
        }

        let w: Vec<f64> = st
            .eta
            .iter()
            .map(|&e| {
                let h = sigmoid(e);
                h * (1.0 - h)
            })
            .collect();

        // CG on H d = -grad
        let mut d0 = 0.0;
        let mut d = vec![0.0; p];
        let mut r0 = -g0;
        let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut p0 = r0;
        let mut pd = r.clone();
        let mut rs_old = r0 * r0 + r.iter().map(|v| v * v).sum::<f64>();
        let rs_init = rs_old;
        let mut hv = vec![0.0; p];
        let mut scratch = vec![0.0; n];
        let cg_tol = (rs_init * 1e-8).max(1e-28);
        for _ in 0..(2 * (p + 1)).max(30) {
            if rs_old <= cg_tol {
                break;
            }
            let h0 = ridge_hessian_apply(x, &w, lambda, p0, &pd, &mut hv, &mut scratch);
            let php = p0 * h0 + pd.iter().zip(&hv).map(|(a, b)| a * b).sum::<f64>();
            if php <= 1e-300 {
                break; // singular curvature: stop CG, use current direction
            }
            let alpha = rs_old / php;
            d0 += alpha * p0;
            for (dj, pj) in d.iter_mut().zip(&pd) {
                *dj += alpha * pj;
            }
            r0 -= alpha * h0;
            for (rj, hj) in r.iter_mut().zip(&hv) {
                *rj -= alpha * hj;
            }
            let rs_new = r0 * r0 + r.iter().map(|v| v * v).sum::<f64>();
            let ratio = rs_new / rs_old;
            p0 = r0 + ratio * p0;
            for (pj, rj) in pd.iter_mut().zip(&r) {
                *pj = rj + ratio * *pj;
            }
            rs_old = rs_new;
        }

        // Armijo backtracking on the Newton direction
        let descent = g0 * d0 + g.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
        if descent >= 0.0 {
            // not a descent direction (degenerate curvature); fall back to -grad
            d0 = -g0;
            for (dj, gj) in d.iter_mut().zip(&g) {
                *dj = -gj;
            }
        }
        let descent = g0 * d0 + g.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial_beta: Vec<f64> = st.beta.iter().zip(&d).map(|(b, dj)| b + t * dj).collect();
            let trial_i = st.intercept + t * d0;
            let mut trial_eta = vec![0.0; n];
            x.mul_vec(&trial_beta, &mut trial_eta);
            for e in trial_eta.iter_mut() {
                *e += trial_i;
            }
            let trial_obj = nll_from_eta(&trial_eta, y)
                + lambda * trial_beta.iter().map(|b| b * b).sum::<f64>();
            if trial_obj <= objective + 1e-4 * t * descent {
                let improved = objective - trial_obj;
                st.beta = trial_beta;
                st.intercept = trial_i;
                st.eta = trial_eta;
                objective = trial_obj;
                accepted = true;
                if improved <= OBJ_TOL * (1.0 + objective.abs()) && grad_norm <= RIDGE_KKT_TOL {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break; // line search failed; curvature exhausted at this precision
        }
    }

    let kkt = kkt_residual(x, y, &spec, st.intercept, &st.beta);
    let converged = converged || kkt <= RIDGE_KKT_TOL;
    Ok(FitResult {
        kind: PenaltyKind::Ridge,
        lambda,
        intercept: st.intercept,
        beta: st.beta,
        objective,
        iterations,
        converged,
        kkt_residual: kkt,
    })
}

// ---------------------------------------------------------------------------
// Lasso and exclusive lasso: cyclic coordinate descent
// ---------------------------------------------------------------------------

/// Per-coordinate curvature bounds a_j = ||x_j||^2 / (4n).
fn coordinate_bounds(x: &SparseColMatrix) -> Vec<f64> {
    let n = x.nrows() as f64;
    (0..x.ncols())
        .map(|j| (x.col_sq_norm(j) / (4.0 * n)).max(1e-300))
        .collect()
}

fn coordinate_gradient(x: &SparseColMatrix, j: usize, eta: &[f64], y: &[f64]) -> f64 {
    let n = x.nrows() as f64;
    x.col(j)
        .iter()
        .map(|&(r, v)| v * (sigmoid(eta[r as usize]) - y[r as usize]))
        .sum::<f64>()
        / n
}

pub fn fit_lasso(x: &SparseColMatrix, y: &[f64], lambda: f64) -> Result<FitResult> {
    fit_lasso_warm(x, y, lambda, None)
}

pub fn fit_lasso_warm(
    x: &SparseColMatrix,
    y: &[f64],
    lambda: f64,
    warm: Option<(f64, Vec<f64>)>,
) -> Result<FitResult> {
    check_inputs(x, y)?;
    let spec = PenaltySpec::new(Penalty::Lasso, lambda)?;
    let bounds = coordinate_bounds(x);
    let mut st = SolveState::new(x, y, warm);
    let mut objective = nll_from_eta(&st.eta, y) + penalty_value(&spec, &st.beta);
    let mut converged = false;
    let mut sweeps = 0;

    for sweep in 0..MAX_SWEEPS {
        sweeps = sweep + 1;
        for j in 0..x.ncols() {
            let gj = coordinate_gradient(x, j, &st.eta, y);
            let z = bounds[j] * st.beta[j] - gj;
            let new = soft_threshold(z, lambda) / bounds[j];
            let delta = new - st.beta[j];
            if delta != 0.0 {
                st.beta[j] = new;
                x.add_col_scaled(j, delta, &mut st.eta);
            }
        }
        st.intercept_step(y);
        if sweep % 50 == 49 {
            st.refresh_eta(x);
        }
        let new_obj = nll_from_eta(&st.eta, y) + penalty_value(&spec, &st.beta);
        let rel = (objective - new_obj).abs() / (1.0 + new_obj.abs());
        objective = new_obj;
        if rel < OBJ_TOL {
            let kkt = kkt_residual(x, y, &spec, st.intercept, &st.beta);
            if kkt <= LASSO_KKT_TOL {
                converged = true;
                break;
            }
            if rel == 0.0 && sweep > 100 {
                break; // stalled at floating-point resolution
            }
        }
    }

    st.refresh_eta(x);
    let objective = nll_from_eta(&st.eta, y) + penalty_value(&spec, &st.beta);
    let kkt = kkt_residual(x, y, &spec, st.intercept, &st.beta);
    Ok(FitResult {
        kind: PenaltyKind::Lasso,
        lambda,
        intercept: st.intercept,
        beta: st.beta,
        objective,
        iterations: sweeps,
        converged: converged && kkt <= LASSO_KKT_TOL,
        kkt_residual: kkt,
    })
}

pub fn fit_exclusive_lasso(
    x: &SparseColMatrix,
    y: &[f64],
    lambda: f64,
    grouping: &GroupingScheme,
) -> Result<FitResult> {
    fit_exclusive_lasso_warm(x, y, lambda, grouping, None)
}

pub fn fit_exclusive_lasso_warm(
    x: &SparseColMatrix,
    y: &[f64],
    lambda: f64,
    grouping: &GroupingScheme,
    warm: Option<(f64, Vec<f64>)>,
) -> Result<FitResult> {
    check_inputs(x, y)?;
    if grouping.assignment.len() != x.ncols() {
        return Err(Error::Config("grouping does not cover the matrix columns".into()));
    }
    let spec = PenaltySpec::new(
        Penalty::ExclusiveLasso {
            grouping: grouping.clone(),
        },
        lambda,
    )?;
    let bounds = coordinate_bounds(x);
    let mut st = SolveState::new(x, y, warm);
    let mut mass = vec![0.0; grouping.n_groups];
    for (j, &g) in grouping.assignment.iter().enumerate() {
        mass[g] += st.beta[j].abs();
    }
    let mut objective = nll_from_eta(&st.eta, y) + penalty_value(&spec, &st.beta);
    let mut converged = false;
    let mut sweeps = 0;

    for sweep in 0..MAX_SWEEPS {
        sweeps = sweep + 1;
        for j in 0..x.ncols() {
            let gid = grouping.assignment[j];
            let others = mass[gid] - st.beta[j].abs();
            let gj = coordinate_gradient(x, j, &st.eta, y);
            let z = bounds[j] * st.beta[j] - gj;
            // minimizes g*d + (a_j/2)d^2 + (lambda/2)(|b_j + d| + others)^2
            let new = soft_threshold(z, lambda * others) / (bounds[j] + lambda);
            let delta = new - st.beta[j];
            if delta != 0.0 {
                mass[gid] = others + new.abs();
                st.beta[j] = new;
                x.add_col_scaled(j, delta, &mut st.eta);
            }
        }
        st.intercept_step(y);
        if sweep % 50 == 49 {
            st.refresh_eta(x);
        }
        let new_obj = nll_from_eta(&st.eta, y) + penalty_value(&spec, &st.beta);
        let rel = (objective - new_obj).abs() / (1.0 + new_obj.abs());
        objective = new_obj;
        if rel < OBJ_TOL {
            let kkt = kkt_residual(x, y, &spec, st.intercept, &st.beta);
            if kkt <= EXCLUSIVE_KKT_TOL {
                converged = true;
                break;
            }
            if rel == 0.0 && sweep > 100 {
                break;
            }
        }
    }

    st.refresh_eta(x);
    let objective = nll_from_eta(&st.eta, y) + penalty_value(&spec, &st.beta);
    let kkt = kkt_residual(x, y, &spec, st.intercept, &st.beta);
    Ok(FitResult {
        kind: PenaltyKind::ExclusiveLasso,
        lambda,
        intercept: st.intercept,
        beta: st.beta,
        objective,
        iterations: sweeps,
        converged: converged && kkt <= EXCLUSIVE_KKT_TOL,
        kkt_residual: kkt,
    })
}

// ---------------------------------------------------------------------------
// Group lasso: block coordinate descent with group soft-thresholding
// ---------------------------------------------------------------------------

/// Blockwise curvature bound nu_l >= sigma_max^2(X_l) / (4n), by power
/// iteration on X_l' X_l.
fn block_bounds(x: &SparseColMatrix, members: &[Vec<usize>]) -> Vec<f64> {
    let n = x.nrows() as f64;
    members
        .iter()
        .map(|group| {
            if group.len() == 1 {
                return (x.col_sq_norm(group[0]) / (4.0 * n)).max(1e-300);
            }
            let mut v = vec![1.0 / (group.len() as f64).sqrt(); group.len()];
            let mut xv = vec![0.0; x.nrows()];
            let mut sigma2 = 0.0;
            for _ in 0..60 {
                xv.fill(0.0);
                for (k, &j) in group.iter().enumerate() {
                    if v[k] != 0.0 {
                        x.add_col_scaled(j, v[k], &mut xv);
                    }
                }
                let mut w: Vec<f64> = group.iter().map(|&j| x.col_dot(j, &xv)).collect();
                sigma2 = w.iter().map(|a| a * a).sum::<f64>().sqrt();
                if sigma2 == 0.0 {
                    break;
                }
                for wi in w.iter_mut() {
                    *wi /= sigma2;
                }
                v = w;
            }
            (sigma2 * 1.02 / (4.0 * n)).max(1e-300)
        })
        .collect()
}

pub fn fit_group_lasso(
    x: &SparseColMatrix,
    y: &[f64],
    lambda: f64,
    grouping: &GroupingScheme,
) -> Result<FitResult> {
    fit_group_lasso_warm(x, y, lambda, grouping, None)
}

pub fn fit_group_lasso_warm(
    x: &SparseColMatrix,
    y: &[f64],
    lambda: f64,
    grouping: &GroupingScheme,
    warm: Option<(f64, Vec<f64>)>,
) -> Result<FitResult> {
    check_inputs(x, y)?;
    if grouping.assignment.len() != x.ncols() {
        return Err(Error::Config("grouping does not cover the matrix columns".into()));
    }
    let spec = PenaltySpec::new(
        Penalty::GroupLasso {
            grouping: grouping.clone(),
        },
        lambda,
    )?;
    let members = grouping.members();
    let weights: Vec<f64> = members.iter().map(|g| (g.len() as f64).sqrt()).collect();
    let nus = block_bounds(x, &members);
    let mut st = SolveState::new(x, y, warm);
    let mut objective = nll_from_eta(&st.eta, y) + penalty_value(&spec, &st.beta);
    let mut converged = false;
    let mut sweeps = 0;

    for sweep in 0..MAX_SWEEPS {
        sweeps = sweep + 1;
        for (l, group) in members.iter().enumerate() {
            let nu = nus[l];
            // gradient step within the block, then group soft-threshold
            let mut target = Vec::with_capacity(group.len());
            for &j in group {
                let gj = coordinate_gradient(x, j, &st.eta, y);
                target.push(st.beta[j] - gj / nu);
            }
            let norm: f64 = target.iter().map(|v| v * v).sum::<f64>().sqrt();
            let threshold = lambda * weights[l] / nu;
            let scale = if norm > threshold {
                1.0 - threshold / norm
            } else {
                0.0
            };
            for (k, &j) in group.iter().enumerate() {
                let new = scale * target[k];
                let delta = new - st.beta[j];
                if delta != 0.0 {
                    st.beta[j] = new;
                    x.add_col_scaled(j, delta, &mut st.eta);
                }
            }
        }
        st.intercept_step(y);
        if sweep % 50 == 49 {
            st.refresh_eta(x);
        }
        let new_obj = nll_from_eta(&st.eta, y) + penalty_value(&spec, &st.beta);
        let rel = (objective - new_obj).abs() / (1.0 + new_obj.abs());
        objective = new_obj;
        if rel < OBJ_TOL {
            let kkt = kkt_residual(x, y, &spec, st.intercept, &st.beta);
            if kkt <= GROUP_KKT_TOL {
                converged = true;
                break;
            }
            if rel == 0.0 && sweep > 100 {
                break;
            }
        }
    }

    st.refresh_eta(x);
    let objective = nll_from_eta(&st.eta, y) + penalty_value(&spec, &st.beta);
    let kkt = kkt_residual(x, y, &spec, st.intercept, &st.beta);
    Ok(FitResult {
        kind: PenaltyKind::GroupLasso,
        lambda,
        intercept: st.intercept,
        beta: st.beta,
        objective,
        iterations: sweeps,
        converged: converged && kkt <= GROUP_KKT_TOL,
        kkt_residual: kkt,
    })
}

// ---------------------------------------------------------------------------
// Dispatch, lambda grids, and paths
// ---------------------------------------------------------------------------

/// Fit under any penalty at a single lambda.
pub fn fit(x: &SparseColMatrix, y: &[f64], spec: &PenaltySpec) -> Result<FitResult> {
    fit_warm(x, y, spec, None)
}

pub fn fit_warm(
    x: &SparseColMatrix,
    y: &[f64],
    spec: &PenaltySpec,
    warm: Option<(f64, Vec<f64>)>,
) -> Result<FitResult> {
    match &spec.penalty {
        Penalty::Ridge => fit_ridge_warm(x, y, spec.lambda, warm),
        Penalty::Lasso => fit_lasso_warm(x, y, spec.lambda, warm),
        Penalty::GroupLasso { grouping } => {
            fit_group_lasso_warm(x, y, spec.lambda, grouping, warm)
        }
        Penalty::ExclusiveLasso { grouping } => {
            fit_exclusive_lasso_warm(x, y, spec.lambda, grouping, warm)
        }
        Penalty::GeneralizedLasso { d_spec } => genlasso::fit_generalized_lasso_warm(
            x,
            y,
            spec.lambda,
            d_spec,
            genlasso::Backend::Splitting,
            warm,
        ),
    }
}

/// Gradient of the unpenalized scaled NLL at the null model (intercept-only
/// fit), used by the lambda_max rules.
fn null_gradient(x: &SparseColMatrix, y: &[f64]) -> Result<Vec<f64>> {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    if mean <= 0.0 || mean >= 1.0 {
        return Err(Error::Config(
            "constant response: lambda grid is undefined".into(),
        ));
    }
    let resid: Vec<f64> = y.iter().map(|&yi| mean - yi).collect();
    let mut g = vec![0.0; x.ncols()];
    x.tr_mul_vec(&resid, 1.0 / n, &mut g);
    Ok(g)
}

/// Smallest lambda annihilating the penalized block. Ridge and the exclusive
/// lasso admit no finite such value; their grids anchor at the lasso bound.
pub fn lambda_max(x: &SparseColMatrix, y: &[f64], penalty: &Penalty) -> Result<f64> {
    let g = null_gradient(x, y)?;
    let lasso_bound = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let value = match penalty {
        Penalty::Ridge | Penalty::Lasso | Penalty::ExclusiveLasso { .. } => lasso_bound,
        Penalty::GroupLasso { grouping } => {
            let members = grouping.members();
            members
                .iter()
                .map(|group| {
                    let norm: f64 = group.iter().map(|&j| g[j] * g[j]).sum::<f64>().sqrt();
                    norm / (group.len() as f64).sqrt()
                })
                .fold(0.0f64, f64::max)
        }
        Penalty::GeneralizedLasso { d_spec } => genlasso::lambda_max_genlasso(x, y, d_spec)?,
    };
    if value <= 0.0 {
        return Err(Error::Numeric("degenerate lambda_max of zero".into()));
    }
    Ok(value)
}

/// Default 50-point grid, log-spaced from lambda_max down to 1e-4 lambda_max.
pub fn default_grid(lambda_max: f64) -> Vec<f64> {
    log_grid(lambda_max, 1e-4 * lambda_max, 50)
}

pub fn log_grid(top: f64, bottom: f64, points: usize) -> Vec<f64> {
    assert!(top > 0.0 && bottom > 0.0 && top >= bottom && points >= 1);
    if points == 1 {
        return vec![top];
    }
    let (lt, lb) = (top.ln(), bottom.ln());
    (0..points)
        .map(|k| (lt + (lb - lt) * k as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Warm-started sequential fits along a descending lambda grid.
pub fn fit_path(
    x: &SparseColMatrix,
    y: &[f64],
    penalty: &Penalty,
    grid: &[f64],
) -> Result<Vec<FitResult>> {
    if grid.is_empty() {
        return Err(Error::Config("empty lambda grid".into()));
    }
    if grid.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Config("lambda grid must be sorted descending".into()));
    }
    let mut results = Vec::with_capacity(grid.len());
    let mut warm: Option<(f64, Vec<f64>)> = None;
    for &lambda in grid {
        let spec = PenaltySpec::new(penalty.clone(), lambda)?;
        let fit = fit_warm(x, y, &spec, warm.clone())?;
        warm = Some((fit.intercept, fit.beta.clone()));
        results.push(fit);
    }
    Ok(results)
}

/// True when the fit satisfies its penalty's KKT tolerance.
pub fn passes_kkt(fit: &FitResult) -> bool {
    fit.kkt_residual <= kkt_tolerance(fit.kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim;
    use approx::assert_abs_diff_eq;

    fn instance(seed: u64, rows: usize, cols: usize) -> (SparseColMatrix, Vec<f64>) {
        sim::random_instance(seed, rows, cols)
    }

    #[test]
    fn ridge_penalty_dominance() {
        let (x, y) = instance(7, 60, 8);
        let fit = fit_ridge(&x, &y, 1e6).unwrap();
        let norm: f64 = fit.beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(norm <= 1e-4, "norm {norm}");
        assert!(fit.converged);
    }

    #[test]
    fn ridge_matches_oracle_objective() {
        let (x, y) = instance(11, 80, 10);
        let fit = fit_ridge(&x, &y, 0.1).unwrap();
        let spec = PenaltySpec::new(Penalty::Ridge, 0.1).unwrap();
        let oracle = sim::reference_solve(&x, &y, &spec).unwrap();
        assert!(
            (fit.objective - oracle.objective).abs() <= 1e-6,
            "{} vs {}",
            fit.objective,
            oracle.objective
        );
    }

    #[test]
    fn ridge_norm_monotone_in_lambda() {
        let (x, y) = instance(13, 70, 6);
        let f1 = fit_ridge(&x, &y, 0.01).unwrap();
        let f2 = fit_ridge(&x, &y, 0.5).unwrap();
        let n1: f64 = f1.beta.iter().map(|b| b * b).sum();
        let n2: f64 = f2.beta.iter().map(|b| b * b).sum();
        assert!(n1 >= n2 - 1e-12);
    }

    #[test]
    fn lasso_lambda_max_yields_zero() {
        let (x, y) = instance(17, 90, 12);
        let lmax = lambda_max(&x, &y, &Penalty::Lasso).unwrap();
        let fit = fit_lasso(&x, &y, lmax * 1.0001).unwrap();
        assert!(fit.beta.iter().all(|&b| b == 0.0), "beta {:?}", fit.beta);
        assert!(fit.converged);
    }

    #[test]
    fn lasso_matches_oracle_objective() {
        let (x, y) = instance(19, 100, 12);
        let lmax = lambda_max(&x, &y, &Penalty::Lasso).unwrap();
        let lambda = 0.3 * lmax;
        let fit = fit_lasso(&x, &y, lambda).unwrap();
        let spec = PenaltySpec::new(Penalty::Lasso, lambda).unwrap();
        let oracle = sim::reference_solve(&x, &y, &spec).unwrap();
        assert!(
            (fit.objective - oracle.objective).abs() <= 1e-6,
            "{} vs {}",
            fit.objective,
            oracle.objective
        );
        assert!(passes_kkt(&fit));
    }

    #[test]
    fn duplicated_columns_share_weight_with_collapsed_fit() {
        // two identical columns: sum of their coefficients must match the
        // single-column coefficient of the collapsed instance
        let (x, y) = instance(23, 120, 6);
        let mut rows = x.to_dense();
        for r in rows.iter_mut() {
            let first = r[0];
            r.push(first);
        }
        let xdup = SparseColMatrix::from_dense(&rows);
        let lambda = 0.02;
        let fit_dup = fit_lasso(&xdup, &y, lambda).unwrap();
        let fit_single = fit_lasso(&x, &y, lambda).unwrap();
        let merged = fit_dup.beta[0] + fit_dup.beta[6];
        assert_abs_diff_eq!(merged, fit_single.beta[0], epsilon = 2e-5);
        assert_abs_diff_eq!(
            fit_dup.objective,
            fit_single.objective,
            epsilon = 1e-8
        );
    }

    #[test]
    fn group_lasso_singletons_equal_lasso() {
        let (x, y) = instance(29, 90, 9);
        let grouping = GroupingScheme::singletons(9);
        let lambda = 0.03;
        let gl = fit_group_lasso(&x, &y, lambda, &grouping).unwrap();
        let l = fit_lasso(&x, &y, lambda).unwrap();
        for (a, b) in gl.beta.iter().zip(&l.beta) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
        assert_abs_diff_eq!(gl.objective, l.objective, epsilon = 1e-9);
    }

    #[test]
    fn group_lasso_single_group_matches_oracle() {
        let (x, y) = instance(31, 80, 8);
        let grouping = GroupingScheme::single_group(8);
        let lambda = 0.05;
        let fit = fit_group_lasso(&x, &y, lambda, &grouping).unwrap();
        let spec = PenaltySpec::new(
            Penalty::GroupLasso { grouping },
            lambda,
        )
        .unwrap();
        let oracle = sim::reference_solve(&x, &y, &spec).unwrap();
        assert!(
            (fit.objective - oracle.objective).abs() <= 1e-6,
            "{} vs {}",
            fit.objective,
            oracle.objective
        );
    }

    #[test]
    fn group_lasso_kills_whole_groups_monotonically() {
        let (x, y) = instance(37, 120, 12);
        let grouping = GroupingScheme::new(
            "quads",
            vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2],
        )
        .unwrap();
        let lmax = lambda_max(
            &x,
            &y,
            &Penalty::GroupLasso {
                grouping: grouping.clone(),
            },
        )
        .unwrap();
        let grid = log_grid(lmax * 1.0001, 1e-3 * lmax, 8);
        let path = fit_path(
            &x,
            &y,
            &Penalty::GroupLasso {
                grouping: grouping.clone(),
            },
            &grid,
        )
        .unwrap();
        let survivors: Vec<usize> = path
            .iter()
            .map(|f| {
                grouping
                    .members()
                    .iter()
                    .filter(|g| g.iter().any(|&j| f.beta[j] != 0.0))
                    .count()
            })
            .collect();
        assert_eq!(survivors[0], 0, "top of grid must kill all groups");
        for w in survivors.windows(2) {
            assert!(w[1] >= w[0], "survivors {survivors:?} not monotone");
        }
    }

    #[test]
    fn exclusive_singletons_equal_ridge_at_half_lambda() {
        let (x, y) = instance(41, 80, 7);
        let lambda = 0.08;
        let grouping = GroupingScheme::singletons(7);
        let ex = fit_exclusive_lasso(&x, &y, lambda, &grouping).unwrap();
        let ridge = fit_ridge(&x, &y, lambda / 2.0).unwrap();
        for (a, b) in ex.beta.iter().zip(&ridge.beta) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn exclusive_correlated_pair_selects_one() {
        // two identical columns in one group: the within-group L1^2 penalty
        // keeps at most one active
        let (x, y) = instance(43, 150, 1);
        let mut rows = x.to_dense();
        for r in rows.iter_mut() {
            let v = r[0];
            r.push(v);
        }
        let xdup = SparseColMatrix::from_dense(&rows);
        let grouping = GroupingScheme::single_group(2);
        let fit = fit_exclusive_lasso(&xdup, &y, 0.25, &grouping).unwrap();
        let active = fit.beta.iter().filter(|b| b.abs() > 1e-9).count();
        assert!(active <= 1, "beta {:?}", fit.beta);
        // objective must match the fine-grid oracle over the restricted
        // 2-d problem
        let spec = PenaltySpec::new(
            Penalty::ExclusiveLasso { grouping },
            0.25,
        )
        .unwrap();
        let oracle = sim::reference_solve(&xdup, &y, &spec).unwrap();
        assert!((fit.objective - oracle.objective).abs() <= 1e-6);
    }

    #[test]
    fn exclusive_matches_oracle_on_three_groups() {
        let (x, y) = instance(47, 100, 9);
        let grouping =
            GroupingScheme::new("trios", vec![0, 0, 0, 1, 1, 1, 2, 2, 2]).unwrap();
        let lambda = 0.15;
        let fit = fit_exclusive_lasso(&x, &y, lambda, &grouping).unwrap();
        let spec = PenaltySpec::new(
            Penalty::ExclusiveLasso {
                grouping: grouping.clone(),
            },
            lambda,
        )
        .unwrap();
        let oracle = sim::reference_solve(&x, &y, &spec).unwrap();
        assert!(
            (fit.objective - oracle.objective).abs() <= 1e-6,
            "{} vs {}",
            fit.objective,
            oracle.objective
        );
        // strong lambda keeps a dominant representative per active group
        let strong = fit_exclusive_lasso(&x, &y, 5.0, &grouping).unwrap();
        for group in grouping.members() {
            let active = group.iter().filter(|&&j| strong.beta[j].abs() > 1e-7).count();
            assert!(active <= 1, "group {group:?} has {active} active");
        }
    }

    #[test]
    fn path_top_is_null_and_singleton_path_equals_direct() {
        let (x, y) = instance(53, 70, 8);
        let lmax = lambda_max(&x, &y, &Penalty::Lasso).unwrap();
        let path = fit_path(&x, &y, &Penalty::Lasso, &[lmax, 0.5 * lmax]).unwrap();
        assert!(path[0].beta.iter().all(|&b| b == 0.0));
        for f in &path {
            assert!(passes_kkt(f), "kkt {}", f.kkt_residual);
        }

        let single = fit_path(&x, &y, &Penalty::Lasso, &[0.5 * lmax]).unwrap();
        let direct = fit_lasso(&x, &y, 0.5 * lmax).unwrap();
        assert!((single[0].objective - direct.objective).abs() <= 1e-9);
    }

    #[test]
    fn ascending_grid_rejected() {
        let (x, y) = instance(59, 40, 4);
        assert!(fit_path(&x, &y, &Penalty::Lasso, &[0.1, 0.2]).is_err());
    }

    #[test]
    fn objective_never_worse_than_null() {
        let (x, y) = instance(61, 60, 6);
        for lambda in [0.0, 0.05, 0.4] {
            let fit = fit_lasso(&x, &y, lambda).unwrap();
            let spec = PenaltySpec::new(Penalty::Lasso, lambda).unwrap();
            let null_obj =
                crate::objective::nll(&x, initial_intercept(&y), &vec![0.0; 6], &y).unwrap()
                    + penalty_value(&spec, &vec![0.0; 6]);
            assert!(fit.objective <= null_obj + 1e-12);
        }
    }

    #[test]
    fn permutation_equivariance() {
        let (x, y) = instance(67, 80, 6);
        let grouping = GroupingScheme::new("pairs", vec![0, 0, 1, 1, 2, 2]).unwrap();
        let fit = fit_group_lasso(&x, &y, 0.04, &grouping).unwrap();

        let perm = [3usize, 0, 5, 1, 4, 2];
        let xp = x.select_cols(&perm);
        let permuted_assignment: Vec<usize> =
            perm.iter().map(|&j| grouping.assignment[j]).collect();
        let gp = GroupingScheme::new("pairs_permuted", permuted_assignment).unwrap();
        let fit_p = fit_group_lasso(&xp, &y, 0.04, &gp).unwrap();
        for (k, &j) in perm.iter().enumerate() {
            assert_abs_diff_eq!(fit_p.beta[k], fit.beta[j], epsilon = 1e-7);
        }
    }

    #[test]
    fn constant_response_grid_rejected() {
        let x = SparseColMatrix::from_dense(&[vec![1.0], vec![0.5]]);
        let y = vec![1.0, 1.0];
        assert!(lambda_max(&x, &y, &Penalty::Lasso).is_err());
    }

    #[test]
    fn separable_unpenalized_reports_nonconvergence() {
        // perfectly separable single column, lambda = 0: coefficients diverge
        let x = SparseColMatrix::from_dense(&[
            vec![1.0],
            vec![2.0],
            vec![-1.0],
            vec![-2.0],
        ]);
        let y = vec![1.0, 1.0, 0.0, 0.0];
        let fit = fit_ridge(&x, &y, 0.0).unwrap();
        assert!(!fit.converged);
        assert!(fit.beta[0].is_finite());
    }
}
