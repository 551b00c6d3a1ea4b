//! Girsanov parameters of the f-divergence minimal equivalent martingale
//! measure that preserves the Lévy property.
//!
//! The second Girsanov parameter has the form
//!
//! ```text
//! Y(y) = (f')⁻¹( f'(1) + Σ θ_i (e^{y_i} − 1) ),   θ = f''(1)·β + V,   cV = 0
//! ```
//!
//! and `(β, Y)` must solve the martingale drift condition
//!
//! ```text
//! b + ½ diag(c) + cβ + ∫ [ (e^y − 1) Y(y) − h(y) ] ν(dy) = 0.
//! ```
//!
//! The drift only sees `cβ` and `θ`, so [`solve`] first runs a damped Newton
//! iteration on the `d` unknowns (range(c)-part of `β`, ker(c)-part of `θ`).
//! The split of the ker(c)-part of `θ` into `f''(1)·β_ker` and `V` does not
//! change the measure; it is fixed afterwards by a linear least-squares fit of
//! the fundamental equation
//! `f'(xY(y)) − f'(x) = x f''(x) Σ β_i (e^{y_i}−1) + Σ V_j (e^{y_j}−1)`
//! over an x-grid and the nodes of ν.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::divergence::DivergenceSpec;
use crate::error::{Error, Result};
use crate::levy_model::{
    dot, levy_integral, norm, tail_finite, validate_triplet, LevyMeasure, LevyTriplet, WeightedNodes,
};

/// `Y` at or below this value counts as a positivity failure.
pub const Y_POSITIVITY_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub max_restarts: usize,
    pub fd_step: f64,
    /// x-grid for fitting the `β_ker`/`V` split.
    pub split_grid: Vec<f64>,
    /// Set `V = 0` and put the whole ker(c)-part of `θ` into `β`
    /// (diagnostic override; the result is still a martingale measure).
    pub force_v_zero: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-10,
            max_iter: 100,
            max_restarts: 16,
            fd_step: 1e-7,
            split_grid: vec![0.25, 0.5, 0.75, 1.5, 2.0, 3.0, 4.0],
            force_v_zero: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GirsanovParams {
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    pub v: Vec<f64>,
}

impl GirsanovParams {
    pub fn zero(dim: usize) -> Self {
        GirsanovParams {
            beta: vec![0.0; dim],
            theta: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    /// Builds parameters from `β` and `V` with the coupling `θ = f''(1)β + V`.
    pub fn coupled(spec: &DivergenceSpec, beta: Vec<f64>, v: Vec<f64>) -> Self {
        let f2 = spec.second_unchecked(1.0);
        let theta = beta.iter().zip(&v).map(|(b, v)| f2 * b + v).collect();
        GirsanovParams { beta, theta, v }
    }

    pub fn jump_multiplier(&self, spec: &DivergenceSpec, y: &[f64]) -> Result<f64> {
        y_candidate(spec, &self.theta, y)
    }

    /// Atom-wise representation; requires a finite atomic measure.
    pub fn to_measure_change(&self, spec: &DivergenceSpec, t: &LevyTriplet) -> Result<MeasureChange> {
        let atoms = t.nu().atoms().ok_or_else(|| {
            Error::UnsupportedMeasure("atom-wise measure change needs a finite atomic measure".into())
        })?;
        let jump_multipliers = atoms
            .iter()
            .map(|a| self.jump_multiplier(spec, &a.location))
            .collect::<Result<_>>()?;
        Ok(MeasureChange {
            beta: self.beta.clone(),
            jump_multipliers,
        })
    }
}

/// Lévy-preserving measure change on a finite atomic model, given by `β` and
/// the value of `Y` at each atom. Not restricted to the `(f')⁻¹` form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureChange {
    pub beta: Vec<f64>,
    pub jump_multipliers: Vec<f64>,
}

/// `(f')⁻¹(f'(1) + Σ θ_i (e^{y_i} − 1))`.
pub fn y_candidate(spec: &DivergenceSpec, theta: &[f64], y: &[f64]) -> Result<f64> {
    let arg = spec.prime_unchecked(1.0) + shift(theta, y);
    spec.prime_inverse(arg).map_err(|e| match e {
        Error::OutOfRange { value, lo, hi } => Error::CandidateInvalid {
            location: y.to_vec(),
            argument: value,
            lo,
            hi,
        },
        other => other,
    })
}

#[inline]
fn shift(theta: &[f64], y: &[f64]) -> f64 {
    theta.iter().zip(y).map(|(t, y)| t * y.exp_m1()).sum()
}

/// Left-hand side of the drift condition; zero iff every `e^{X^i}` is a
/// martingale under the measure.
pub fn drift_residual(t: &LevyTriplet, spec: &DivergenceSpec, params: &GirsanovParams) -> Result<Vec<f64>> {
    let nodes = t.nu().nodes(t.nu().working_level()?);
    let ys = nodes
        .iter()
        .map(|(y, _)| y_candidate(spec, &params.theta, y))
        .collect::<Result<Vec<_>>>()?;
    Ok(drift_with_multipliers(t, &nodes, &params.beta, &ys))
}

/// Drift condition for an atom-wise measure change.
pub fn measure_change_drift(t: &LevyTriplet, change: &MeasureChange) -> Result<Vec<f64>> {
    let nodes = t.nu().nodes(0);
    if t.nu().atoms().is_none() || nodes.len() != change.jump_multipliers.len() {
        return Err(Error::Dimension {
            what: "jump multipliers",
            expected: nodes.len(),
            found: change.jump_multipliers.len(),
        });
    }
    Ok(drift_with_multipliers(t, &nodes, &change.beta, &change.jump_multipliers))
}

fn drift_with_multipliers(t: &LevyTriplet, nodes: &WeightedNodes, beta: &[f64], ys: &[f64]) -> Vec<f64> {
    let cov = t.covariance();
    let cb = cov.apply(beta);
    let diag = cov.diag();
    let trunc = t.truncation();
    let mut out: Vec<f64> = (0..t.dim()).map(|i| t.b()[i] + 0.5 * diag[i] + cb[i]).collect();
    for ((y, w), &yv) in nodes.iter().zip(ys) {
        let k = trunc.factor(y);
        for i in 0..t.dim() {
            out[i] += w * (y[i].exp_m1() * yv - k * y[i]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExistenceReport {
    /// Y > 0 at every atom / node.
    pub y_positive: bool,
    /// `Σ_i ∫_{|y|≥1} (e^{y_i} − 1) Y ν(dy) < ∞`
    pub exp_integrable: bool,
    /// `∫ (√Y − 1)² ν(dy) < ∞`
    pub hellinger_finite: bool,
    /// `∫ [f(Y) − f(1) − f'(1)(Y − 1)] ν(dy) < ∞`
    pub predictable_integrable: bool,
    pub overall: bool,
    pub min_y: f64,
    pub hellinger_integral: f64,
    pub predictable_integral: f64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinimalMeasureSolution {
    pub params: GirsanovParams,
    pub drift_residual: Vec<f64>,
    pub drift_residual_norm: f64,
    pub existence: ExistenceReport,
    pub hellinger_rate: f64,
    /// Closed-form `E_P f(Z_1)`; `None` on overflow.
    pub divergence_per_t: Option<f64>,
    pub iterations: usize,
    pub starts_tried: usize,
}

impl MinimalMeasureSolution {
    /// `Y` at each atom of a finite atomic measure.
    pub fn y_at_atoms(&self, spec: &DivergenceSpec, t: &LevyTriplet) -> Result<Vec<f64>> {
        Ok(self.params.to_measure_change(spec, t)?.jump_multipliers)
    }
}

struct DriftSystem<'a> {
    t: &'a LevyTriplet,
    spec: &'a DivergenceSpec,
    nodes: WeightedNodes,
    range: DMatrix<f64>,
    kernel: DMatrix<f64>,
    base: Vec<f64>,
    f2_at_1: f64,
}

enum NewtonOutcome {
    Converged { u: Vec<f64>, iters: usize },
    Failed { u: Vec<f64>, residual: f64, range_violation: bool },
}

impl<'a> DriftSystem<'a> {
    fn new(t: &'a LevyTriplet, spec: &'a DivergenceSpec) -> Result<Self> {
        let nodes = t.nu().nodes(t.nu().working_level()?);
        let (range, kernel) = t.covariance().range_kernel();
        let diag = t.covariance().diag();
        let trunc = t.truncation();
        let mut base: Vec<f64> = (0..t.dim()).map(|i| t.b()[i] + 0.5 * diag[i]).collect();
        for (y, w) in nodes.iter() {
            let k = trunc.factor(y);
            for i in 0..t.dim() {
                base[i] -= w * k * y[i];
            }
        }
        Ok(DriftSystem {
            t,
            spec,
            nodes,
            range,
            kernel,
            base,
            f2_at_1: spec.second_unchecked(1.0),
        })
    }

    fn rank(&self) -> usize {
        self.range.ncols()
    }

    /// `(β_range, θ)` from the unknown vector `u = (p, w)`.
    fn unpack(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let r = self.rank();
        let p = DVector::from_column_slice(&u[..r]);
        let w = DVector::from_column_slice(&u[r..]);
        let beta_r = &self.range * p;
        let theta_k = &self.kernel * w;
        let beta: Vec<f64> = beta_r.iter().copied().collect();
        let theta = beta
            .iter()
            .zip(theta_k.iter())
            .map(|(b, tk)| self.f2_at_1 * b + tk)
            .collect();
        (beta, theta)
    }

    fn multipliers(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.nodes
            .iter()
            .map(|(y, _)| y_candidate(self.spec, theta, y))
            .collect()
    }

    fn residual(&self, u: &[f64]) -> Result<Vec<f64>> {
        let (beta, theta) = self.unpack(u);
        let cb = self.t.covariance().apply(&beta);
        let mut out: Vec<f64> = self.base.iter().zip(&cb).map(|(a, b)| a + b).collect();
        for (y, w) in self.nodes.iter() {
            let yv = y_candidate(self.spec, &theta, y)?;
            for i in 0..out.len() {
                out[i] += w * y[i].exp_m1() * yv;
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NoSolution { best_residual: f64::INFINITY });
        }
        Ok(out)
    }

    fn jacobian(&self, u: &[f64], r0: &[f64], fd_step: f64) -> Option<DMatrix<f64>> {
        let d = u.len();
        let mut jac = DMatrix::zeros(d, d);
        let mut probe = u.to_vec();
        for j in 0..d {
            let h = fd_step * u[j].abs().max(1.0);
            probe[j] = u[j] + h;
            let (col, step) = match self.residual(&probe) {
                Ok(r) => (r, h),
                Err(_) => {
                    probe[j] = u[j] - h;
                    match self.residual(&probe) {
                        Ok(r) => (r, -h),
                        Err(_) => return None,
                    }
                }
            };
            probe[j] = u[j];
            for i in 0..d {
                jac[(i, j)] = (col[i] - r0[i]) / step;
            }
        }
        Some(jac)
    }

    fn newton(&self, u0: Vec<f64>, cfg: &SolverConfig) -> NewtonOutcome {
        let mut u = u0;
        let mut range_violation = false;
        let mut r = match self.residual(&u) {
            Ok(r) => r,
            Err(e) => {
                return NewtonOutcome::Failed {
                    u,
                    residual: f64::INFINITY,
                    range_violation: matches!(e, Error::CandidateInvalid { .. }),
                }
            }
        };
        for iter in 0..cfg.max_iter {
            let rmax = max_abs(&r);
            if rmax <= cfg.tol {
                return NewtonOutcome::Converged { u, iters: iter };
            }
            let jac = match self.jacobian(&u, &r, cfg.fd_step) {
                Some(j) => j,
                None => {
                    range_violation = true;
                    break;
                }
            };
            let rhs = -DVector::from_column_slice(&r);
            let delta = match jac.clone().lu().solve(&rhs) {
                Some(d) if d.iter().all(|v| v.is_finite()) => d,
                _ => match jac.svd(true, true).solve(&rhs, 1e-14) {
                    Ok(d) => d,
                    Err(_) => break,
                },
            };
            let norm0 = l2(&r);
            let mut lambda = 1.0;
            let mut accepted = false;
            while lambda > 1e-12 {
                let trial: Vec<f64> = u.iter().zip(delta.iter()).map(|(a, d)| a + lambda * d).collect();
                match self.residual(&trial) {
                    Ok(rt) if l2(&rt) < norm0 => {
                        u = trial;
                        r = rt;
                        accepted = true;
                        break;
                    }
                    Ok(_) => {}
                    Err(Error::CandidateInvalid { .. }) => range_violation = true,
                    Err(_) => {}
                }
                lambda *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let residual = max_abs(&r);
        if residual <= cfg.tol {
            return NewtonOutcome::Converged {
                u,
                iters: cfg.max_iter,
            };
        }
        NewtonOutcome::Failed {
            u,
            residual,
            range_violation,
        }
    }

    /// Splits the ker(c)-part of `θ` into `f''(1) β_ker` and `V`.
    fn split(&self, u: &[f64], cfg: &SolverConfig) -> Result<GirsanovParams> {
        let (beta_r, theta) = self.unpack(u);
        let d = self.t.dim();
        let k = self.kernel.ncols();
        if k == 0 {
            return Ok(GirsanovParams {
                beta: beta_r,
                theta,
                v: vec![0.0; d],
            });
        }
        let w = DVector::from_column_slice(&u[self.rank()..]);
        let theta_k = &self.kernel * &w;
        let s = if cfg.force_v_zero {
            w.clone() / self.f2_at_1
        } else {
            self.fit_split(&beta_r, &theta, &theta_k, cfg)?
        };
        let beta_k = &self.kernel * s;
        let beta: Vec<f64> = beta_r.iter().zip(beta_k.iter()).map(|(a, b)| a + b).collect();
        let v: Vec<f64> = theta_k
            .iter()
            .zip(beta_k.iter())
            .map(|(tk, bk)| tk - self.f2_at_1 * bk)
            .collect();
        Ok(GirsanovParams { beta, theta, v })
    }

    fn fit_split(
        &self,
        beta_r: &[f64],
        theta: &[f64],
        theta_k: &DVector<f64>,
        cfg: &SolverConfig,
    ) -> Result<DVector<f64>> {
        let k = self.kernel.ncols();
        let ys = self.multipliers(theta)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        for &x in &cfg.split_grid {
            let fx = self.spec.prime(x)?;
            let xf2 = x * self.spec.second(x)?;
            for ((y, _), &yv) in self.nodes.iter().zip(&ys) {
                let e: Vec<f64> = y.iter().map(|v| v.exp_m1()).collect();
                let lhs = self.spec.prime(x * yv)? - fx;
                let r0 = lhs - xf2 * dot(beta_r, &e) - dot(theta_k.as_slice(), &e);
                let ke = self.kernel.transpose() * DVector::from_column_slice(&e);
                rows.push(ke.iter().map(|v| (xf2 - self.f2_at_1) * v).collect());
                rhs.push(r0);
            }
        }
        if rows.is_empty() {
            return Ok(DVector::zeros(k));
        }
        let a = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
        let svd = a.svd(true, true);
        let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
        if smax == 0.0 {
            return Ok(DVector::zeros(k));
        }
        svd.solve(&DVector::from_vec(rhs), 1e-10 * smax)
            .map_err(|e| Error::Degenerate(format!("split least squares: {e}")))
    }
}

fn start_points(d: usize, max_restarts: usize) -> Vec<Vec<f64>> {
    let mut starts = vec![vec![0.0; d]];
    for scale in [0.5, 1.0, 2.0, 0.25] {
        for i in 0..d {
            for sign in [1.0, -1.0] {
                let mut s = vec![0.0; d];
                s[i] = sign * scale;
                starts.push(s);
            }
        }
        if d > 1 {
            starts.push(vec![scale; d]);
            starts.push(vec![-scale; d]);
        }
    }
    starts.truncate(max_restarts + 1);
    starts
}

/// Finds the Girsanov parameters of the minimal martingale measure.
pub fn solve(t: &LevyTriplet, spec: &DivergenceSpec, cfg: &SolverConfig) -> Result<MinimalMeasureSolution> {
    let report = validate_triplet(t);
    if !report.ok {
        let failed: Vec<String> = report.failures().iter().map(|i| i.name.clone()).collect();
        return Err(Error::InvalidModel(format!("failed checks: {}", failed.join(", "))));
    }
    let sys = DriftSystem::new(t, spec)?;
    let d = t.dim();

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut all_range_violations = true;
    let mut converged = None;
    let starts = start_points(d, cfg.max_restarts);
    let mut tried = 0;
    for u0 in starts {
        tried += 1;
        match sys.newton(u0, cfg) {
            NewtonOutcome::Converged { u, iters } => {
                converged = Some((u, iters));
                break;
            }
            NewtonOutcome::Failed {
                u,
                residual,
                range_violation,
            } => {
                all_range_violations &= range_violation;
                if best.as_ref().map_or(true, |(r, _)| residual < *r) {
                    best = Some((residual, u));
                }
            }
        }
    }

    let (u, iters) = match converged {
        Some(c) => c,
        None => {
            if let Some((_, u)) = &best {
                let (_, theta) = sys.unpack(u);
                if let Some((min_y, loc)) = min_multiplier(&sys, &theta) {
                    if min_y <= Y_POSITIVITY_FLOOR {
                        return Err(Error::ExistenceViolation { min_y, location: loc });
                    }
                }
            }
            if all_range_violations {
                return Err(Error::ExistenceViolation {
                    min_y: 0.0,
                    location: Vec::new(),
                });
            }
            return Err(Error::NoSolution {
                best_residual: best.map_or(f64::INFINITY, |(r, _)| r),
            });
        }
    };

    let params = sys.split(&u, cfg)?;
    if let Some((min_y, loc)) = min_multiplier(&sys, &params.theta) {
        if min_y <= Y_POSITIVITY_FLOOR {
            return Err(Error::ExistenceViolation { min_y, location: loc });
        }
    }
    let residual = drift_residual(t, spec, &params)?;
    let existence = check_existence(t, spec, &params);
    let hellinger = hellinger_rate(t, spec, &params);
    let divergence = divergence_closed_form(t, spec, &params, 1.0).ok();
    Ok(MinimalMeasureSolution {
        drift_residual_norm: max_abs(&residual),
        drift_residual: residual,
        params,
        existence,
        hellinger_rate: hellinger,
        divergence_per_t: divergence,
        iterations: iters,
        starts_tried: tried,
    })
}

/// Points where `Y` must clear [`Y_POSITIVITY_FLOOR`]: every atom, and the
/// unit ball for densities. Far in a density tail a valid candidate may
/// underflow while staying positive analytically.
fn floor_applies(nu: &LevyMeasure, y: &[f64]) -> bool {
    matches!(nu, LevyMeasure::FiniteAtomic(_)) || norm(y) <= 1.0
}

fn min_multiplier(sys: &DriftSystem<'_>, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
    let mut out: Option<(f64, Vec<f64>)> = None;
    for (y, _) in sys.nodes.iter().filter(|(y, _)| floor_applies(sys.t.nu(), y)) {
        let yv = y_candidate(sys.spec, theta, y).unwrap_or(0.0);
        if out.as_ref().map_or(true, |(m, _)| yv < *m) {
            out = Some((yv, y.to_vec()));
        }
    }
    out
}

/// Evaluates the existence conditions for the given parameters.
pub fn check_existence(t: &LevyTriplet, spec: &DivergenceSpec, params: &GirsanovParams) -> ExistenceReport {
    let mut notes = Vec::new();
    let yfun = |y: &[f64]| y_candidate(spec, &params.theta, y).unwrap_or(f64::NAN);
    let f1 = spec.prime_unchecked(1.0);
    let fval1 = spec.value(1.0).unwrap_or(0.0);
    let bregman = |yv: f64| {
        if yv >= 0.0 {
            // Y = 0 only by underflow far in a density tail; use f(0+).
            spec.value(yv.max(f64::MIN_POSITIVE)).unwrap_or(f64::NAN) - fval1 - f1 * (yv - 1.0)
        } else {
            f64::NAN
        }
    };

    let level = t.nu().working_level().unwrap_or(0);
    let nodes = t.nu().nodes(level);
    let mut min_y = f64::INFINITY;
    for (y, _) in nodes.iter() {
        match y_candidate(spec, &params.theta, y) {
            Ok(v) if floor_applies(t.nu(), y) => min_y = min_y.min(v),
            Ok(_) => {}
            Err(e) => {
                notes.push(e.to_string());
                min_y = f64::NAN;
                break;
            }
        }
    }
    if min_y == f64::INFINITY {
        min_y = 1.0;
    }
    let y_positive = min_y > Y_POSITIVITY_FLOOR;

    let exp_sum = levy_integral(t.nu(), |y| {
        if norm(y) >= 1.0 {
            y.iter().map(|v| v.exp_m1()).sum::<f64>() * yfun(y)
        } else {
            0.0
        }
    });
    let hell = levy_integral(t.nu(), |y| (yfun(y).sqrt() - 1.0).powi(2));
    let pred = levy_integral(t.nu(), |y| bregman(yfun(y)));

    let mut exp_integrable = exp_sum.as_ref().map_or(false, |v| v.is_finite());
    let mut hellinger_finite = hell.as_ref().map_or(false, |v| v.is_finite());
    let mut predictable_integrable = pred.as_ref().map_or(false, |v| v.is_finite());
    for (name, r) in [("exp moment", &exp_sum), ("hellinger", &hell), ("predictable", &pred)] {
        if let Err(e) = r {
            notes.push(format!("{name}: {e}"));
        }
    }

    if let LevyMeasure::RadialDensity(rd) = t.nu() {
        for i in 0..t.dim() {
            let tc = tail_finite(rd, |y| y[i].exp_m1() * yfun(y));
            if !tc.finite {
                exp_integrable = false;
                notes.push(format!("exp moment tail, coordinate {i}: {}", tc.detail));
            }
        }
        let tc = tail_finite(rd, |y| (yfun(y).sqrt() - 1.0).powi(2));
        if !tc.finite {
            hellinger_finite = false;
            notes.push(format!("hellinger tail: {}", tc.detail));
        }
        let tc = tail_finite(rd, |y| bregman(yfun(y)));
        if !tc.finite {
            predictable_integrable = false;
            notes.push(format!("predictable tail: {}", tc.detail));
        }
    }

    let overall = y_positive && exp_integrable && hellinger_finite && predictable_integrable;
    ExistenceReport {
        y_positive,
        exp_integrable,
        hellinger_finite,
        predictable_integrable,
        overall,
        min_y,
        hellinger_integral: hell.unwrap_or(f64::INFINITY),
        predictable_integral: pred.unwrap_or(f64::INFINITY),
        notes,
    }
}

/// Per-unit-time Hellinger rate `½ ᵀβcβ + ⅛ ∫(√Y − 1)² ν(dy)`; `+∞` when
/// the integral diverges.
pub fn hellinger_rate(t: &LevyTriplet, spec: &DivergenceSpec, params: &GirsanovParams) -> f64 {
    let q = t.covariance().quad_form(&params.beta);
    let jump = levy_integral(t.nu(), |y| {
        let yv = y_candidate(spec, &params.theta, y).unwrap_or(f64::NAN);
        (yv.sqrt() - 1.0).powi(2)
    });
    match jump {
        Ok(j) if j.is_finite() => 0.5 * q + 0.125 * j,
        _ => f64::INFINITY,
    }
}

/// Hellinger rate for an atom-wise measure change.
pub fn hellinger_rate_atomic(t: &LevyTriplet, change: &MeasureChange) -> f64 {
    let q = t.covariance().quad_form(&change.beta);
    let nodes = t.nu().nodes(0);
    let jump: f64 = nodes
        .iter()
        .zip(&change.jump_multipliers)
        .map(|((_, w), y)| w * (y.sqrt() - 1.0).powi(2))
        .sum();
    0.5 * q + 0.125 * jump
}

/// Contribution of one power term to `E_P f(Z_T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TermMoment {
    /// `E[Z ln Z]` or `E[-ln Z]`, linear in `T`.
    Linear { gamma: f64, value: f64 },
    /// `ln E[Z^α]`, linear in `T`.
    LogMoment { gamma: f64, alpha: f64, log_value: f64 },
}

/// `ln E_P[Z_T^p] = T[½p(p−1) ᵀβcβ + ∫(Y^p − 1 − p(Y − 1)) ν(dy)]`; `+∞` when
/// the integral diverges.
pub fn log_power_moment(
    t: &LevyTriplet,
    spec: &DivergenceSpec,
    params: &GirsanovParams,
    p: f64,
    horizon: f64,
) -> Result<f64> {
    let q = t.covariance().quad_form(&params.beta);
    let j = levy_integral(t.nu(), |y| {
        let v = y_candidate(spec, &params.theta, y).unwrap_or(f64::NAN);
        v.powf(p) - 1.0 - p * (v - 1.0)
    });
    match j {
        Ok(j) => Ok(horizon * (0.5 * p * (p - 1.0) * q + j)),
        Err(Error::NonFiniteIntegrand { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Term-wise moments of `Z_T` entering `E_P f(Z_T)`.
pub fn divergence_terms(
    t: &LevyTriplet,
    spec: &DivergenceSpec,
    params: &GirsanovParams,
    horizon: f64,
) -> Result<Vec<TermMoment>> {
    if !(horizon > 0.0) {
        return Err(Error::Domain {
            what: "horizon",
            value: horizon,
        });
    }
    let q = t.covariance().quad_form(&params.beta);
    let yfun = |y: &[f64]| y_candidate(spec, &params.theta, y);
    // Evaluate Y once per node and fail loudly on an invalid candidate.
    let nodes = t.nu().nodes(t.nu().working_level()?);
    for (y, _) in nodes.iter() {
        yfun(y)?;
    }
    let yv = |y: &[f64]| yfun(y).unwrap_or(f64::NAN);
    let mut out = Vec::with_capacity(spec.terms().len());
    for term in spec.terms() {
        let g = term.gamma;
        if g == -1.0 {
            let j = levy_integral(t.nu(), |y| {
                let v = yv(y);
                v * v.ln() - v + 1.0
            })?;
            out.push(TermMoment::Linear {
                gamma: g,
                value: horizon * (0.5 * q + j),
            });
        } else if g == -2.0 {
            let j = levy_integral(t.nu(), |y| {
                let v = yv(y);
                -v.ln() + v - 1.0
            })?;
            out.push(TermMoment::Linear {
                gamma: g,
                value: horizon * (0.5 * q + j),
            });
        } else {
            let alpha = g + 2.0;
            let j = levy_integral(t.nu(), |y| {
                let v = yv(y);
                v.powf(alpha) - 1.0 - alpha * (v - 1.0)
            })?;
            out.push(TermMoment::LogMoment {
                gamma: g,
                alpha,
                log_value: horizon * (0.5 * alpha * (alpha - 1.0) * q + j),
            });
        }
    }
    Ok(out)
}

/// Closed-form `E_P f(Z_T)`.
pub fn divergence_closed_form(
    t: &LevyTriplet,
    spec: &DivergenceSpec,
    params: &GirsanovParams,
    horizon: f64,
) -> Result<f64> {
    let terms = divergence_terms(t, spec, params, horizon)?;
    let mut total = spec.linear() + spec.constant();
    for (term, m) in spec.terms().iter().zip(terms) {
        let v = match m {
            TermMoment::Linear { value, .. } => value,
            TermMoment::LogMoment { log_value, gamma, .. } => {
                if log_value > f64::MAX.ln() {
                    return Err(Error::Overflow { exponent: log_value });
                }
                ((gamma + 1.0) / (gamma + 2.0)).signum() * log_value.exp()
            }
        };
        total += term.weight * v;
    }
    Ok(total)
}

/// Closed form of `Y` for single-term specs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum EsscherForm {
    /// `Y(y) = exp(Σ θ_i (e^{y_i} − 1) / A)`
    Exponential { weight: f64, theta: Vec<f64> },
    /// `Y(y) = (1 + ((γ+1)/a) Σ θ_i (e^{y_i} − 1))^{1/(γ+1)}`
    Power { gamma: f64, a: f64, theta: Vec<f64> },
}

impl EsscherForm {
    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            EsscherForm::Exponential { weight, theta } => (shift(theta, y) / weight).exp(),
            EsscherForm::Power { gamma, a, theta } => {
                let g1 = gamma + 1.0;
                (1.0 + g1 / a * shift(theta, y)).powf(1.0 / g1)
            }
        }
    }
}

pub fn esscher_form(spec: &DivergenceSpec, theta: &[f64]) -> Option<EsscherForm> {
    let (a, gamma) = spec.power_family()?;
    if gamma == -1.0 {
        Some(EsscherForm::Exponential {
            weight: a,
            theta: theta.to_vec(),
        })
    } else {
        Some(EsscherForm::Power {
            gamma,
            a,
            theta: theta.to_vec(),
        })
    }
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_model::{Atom, TruncationRule};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::E;

    fn ln(x: f64) -> f64 {
        x.ln()
    }

    fn single_atom(b: f64, trunc: TruncationRule) -> LevyTriplet {
        let nu = LevyMeasure::FiniteAtomic(vec![Atom::new(vec![ln(2.0)], 1.0)]);
        LevyTriplet::new(vec![b], vec![0.0], nu, trunc).unwrap()
    }

    #[test]
    fn y_candidate_examples() {
        let y = [ln(2.0)];
        for spec in [DivergenceSpec::entropy(), DivergenceSpec::quadratic(), DivergenceSpec::worked_example()] {
            assert_abs_diff_eq!(y_candidate(&spec, &[0.0], &y).unwrap(), 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(y_candidate(&DivergenceSpec::entropy(), &[1.0], &y).unwrap(), E, epsilon = 1e-14);
        assert_abs_diff_eq!(y_candidate(&DivergenceSpec::quadratic(), &[1.0], &y).unwrap(), 1.5, epsilon = 1e-15);
        assert!(matches!(
            y_candidate(&DivergenceSpec::quadratic(), &[-2.0], &y),
            Err(Error::CandidateInvalid { .. })
        ));
    }

    #[test]
    fn drift_examples() {
        let bm = LevyTriplet::diffusion(vec![0.0], vec![1.0]).unwrap();
        let spec = DivergenceSpec::entropy();
        let p = GirsanovParams {
            beta: vec![-0.5],
            theta: vec![0.0],
            v: vec![0.0],
        };
        assert_abs_diff_eq!(drift_residual(&bm, &spec, &p).unwrap()[0], 0.0, epsilon = 1e-15);
        let p0 = GirsanovParams::zero(1);
        assert_abs_diff_eq!(drift_residual(&bm, &spec, &p0).unwrap()[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn solves_pure_diffusion_for_every_spec() {
        let bm = LevyTriplet::diffusion(vec![0.0], vec![1.0]).unwrap();
        for spec in [
            DivergenceSpec::entropy(),
            DivergenceSpec::reverse_entropy(),
            DivergenceSpec::quadratic(),
            DivergenceSpec::power(-3.0),
            DivergenceSpec::worked_example(),
        ] {
            let s = solve(&bm, &spec, &SolverConfig::default()).unwrap();
            assert_abs_diff_eq!(s.params.beta[0], -0.5, epsilon = 1e-12);
            assert_abs_diff_eq!(s.params.theta[0], spec.second(1.0).unwrap() * -0.5, epsilon = 1e-12);
            assert_eq!(s.params.v[0], 0.0);
            assert!(s.existence.overall);
        }
    }

    #[test]
    fn solves_single_atom_entropy() {
        // b + Y(ln 2) - ln 2 = 0 with b = ln 2 - e  ⇒  Y = e, θ = 1
        let t = single_atom(ln(2.0) - E, TruncationRule::Canonical);
        let s = solve(&t, &DivergenceSpec::entropy(), &SolverConfig::default()).unwrap();
        assert_abs_diff_eq!(s.params.theta[0], 1.0, epsilon = 1e-10);
        let y = s.y_at_atoms(&DivergenceSpec::entropy(), &t).unwrap();
        assert_abs_diff_eq!(y[0], E, epsilon = 1e-10);
        assert!(s.drift_residual_norm <= 1e-10);
    }

    #[test]
    fn existence_violation_when_y_is_forced_to_zero() {
        let t = single_atom(ln(2.0), TruncationRule::Canonical);
        for spec in [DivergenceSpec::entropy(), DivergenceSpec::quadratic()] {
            match solve(&t, &spec, &SolverConfig::default()) {
                Err(Error::ExistenceViolation { min_y, .. }) => assert!(min_y <= Y_POSITIVITY_FLOOR),
                other => panic!("expected existence violation, got {other:?}"),
            }
        }
    }

    #[test]
    fn no_solution_without_randomness() {
        let t = LevyTriplet::new(vec![1.0], vec![0.0], LevyMeasure::empty(), TruncationRule::Canonical).unwrap();
        assert!(matches!(
            solve(&t, &DivergenceSpec::entropy(), &SolverConfig::default()),
            Err(Error::NoSolution { .. })
        ));
    }

    #[test]
    fn hellinger_examples() {
        let bm = LevyTriplet::diffusion(vec![0.0], vec![1.0]).unwrap();
        let spec = DivergenceSpec::entropy();
        assert_eq!(hellinger_rate(&bm, &spec, &GirsanovParams::zero(1)), 0.0);
        let p = GirsanovParams::coupled(&spec, vec![-0.5], vec![0.0]);
        assert_abs_diff_eq!(hellinger_rate(&bm, &spec, &p), 0.125, epsilon = 1e-15);
        let t = single_atom(0.0, TruncationRule::Zero);
        let p = GirsanovParams {
            beta: vec![0.0],
            theta: vec![1.0],
            v: vec![0.0],
        };
        let expected = 0.125 * (E.sqrt() - 1.0).powi(2);
        assert_abs_diff_eq!(hellinger_rate(&t, &spec, &p), expected, epsilon = 1e-14);
        assert_abs_diff_eq!(expected, 0.05261, epsilon = 1e-5);
    }

    #[test]
    fn closed_form_divergences_on_diffusion() {
        let bm = LevyTriplet::diffusion(vec![0.0], vec![1.0]).unwrap();
        let e = DivergenceSpec::entropy();
        let p = GirsanovParams::coupled(&e, vec![-0.5], vec![0.0]);
        assert_abs_diff_eq!(divergence_closed_form(&bm, &e, &p, 1.0).unwrap(), 0.125, epsilon = 1e-15);
        let q = DivergenceSpec::quadratic();
        assert_abs_diff_eq!(
            divergence_closed_form(&bm, &q, &p, 1.0).unwrap(),
            0.25f64.exp(),
            epsilon = 1e-14
        );
        assert_eq!(divergence_closed_form(&bm, &e, &GirsanovParams::zero(1), 3.0).unwrap(), 0.0);
        assert!(matches!(
            divergence_closed_form(&bm, &q, &p, 1e4),
            Err(Error::Overflow { .. })
        ));
    }

    #[test]
    fn esscher_examples() {
        let y = [0.3];
        let e = esscher_form(&DivergenceSpec::entropy(), &[0.7]).unwrap();
        assert_abs_diff_eq!(e.eval(&y), (0.7 * 0.3f64.exp_m1()).exp(), epsilon = 1e-15);
        let q = esscher_form(&DivergenceSpec::quadratic(), &[0.7]).unwrap();
        assert_abs_diff_eq!(q.eval(&y), 1.0 + 0.5 * 0.7 * 0.3f64.exp_m1(), epsilon = 1e-15);
        let p = esscher_form(&DivergenceSpec::power(-3.0), &[0.7]).unwrap();
        assert_abs_diff_eq!(p.eval(&y), (1.0 - 0.7 * 0.3f64.exp_m1()).powf(-0.5), epsilon = 1e-15);
        assert!(esscher_form(&DivergenceSpec::worked_example(), &[0.7]).is_none());
    }

    #[test]
    fn existence_report_for_trivial_params() {
        let t = single_atom(0.3, TruncationRule::Canonical);
        let r = check_existence(&t, &DivergenceSpec::entropy(), &GirsanovParams::zero(1));
        assert!(r.overall);
        assert_eq!(r.hellinger_integral, 0.0);
        assert_eq!(r.predictable_integral, 0.0);
    }
}
