//! Structural checks on a computed minimal measure: the fundamental equation
//! and its rank-1 factorization, support classification of `Z_T`, a
//! statistical minimality certificate, and scale/time invariance.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::divergence::DivergenceSpec;
use crate::error::{Error, Result};
use crate::levy_model::{LevyMeasure, LevyTriplet, RANK_CUTOFF};
use crate::mmm_solver::{
    divergence_terms, max_abs, measure_change_drift, solve, y_candidate, GirsanovParams, MeasureChange,
    SolverConfig, TermMoment,
};
use crate::montecarlo::{density_terminal, estimate, simulate, Estimate, SimulationConfig};

pub const DEFAULT_X_GRID: [f64; 4] = [0.5, 1.0, 2.0, 5.0];
pub const SUPPORT_TOL: f64 = 1e-12;
pub const MARTINGALE_TOL: f64 = 1e-8;
pub const SCALE_TOL: f64 = 1e-10;
pub const TIME_TOL: f64 = 1e-9;

/// Generic pass/fail line used by reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    pub fn below(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            passed: measured.is_finite() && measured < tolerance,
            measured,
            tolerance,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FundamentalCheckReport {
    /// `max |LHS − RHS| / (1 + |LHS|)` over grid × jump points.
    pub max_residual_equ: f64,
    /// `σ₂/σ₁` of the matrix `[f'(xY(y)) − f'(x)]`.
    pub rank1_defect: f64,
    pub grid: Vec<f64>,
    pub jump_points: usize,
    /// Density nodes left out because `Y` underflows there.
    pub underflow_points: usize,
}

/// Residual of `f'(xY(y)) − f'(x) = x f''(x) Σβᵢ(e^{yᵢ}−1) + ΣVᵢ(e^{yᵢ}−1)`.
///
/// Atomic measures use every atom; densities use their coarsest quadrature
/// nodes as sample points.
pub fn fundamental_residual(
    spec: &DivergenceSpec,
    params: &GirsanovParams,
    x_grid: &[f64],
    nu: &LevyMeasure,
) -> Result<FundamentalCheckReport> {
    if let Some(&x) = x_grid.iter().find(|&&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::Domain {
            what: "fundamental-equation grid point",
            value: x,
        });
    }
    let nodes = nu.nodes(0);
    let mut points: Vec<&[f64]> = Vec::new();
    let mut ys = Vec::new();
    let mut underflow_points = 0;
    for (y, _) in nodes.iter() {
        let yv = y_candidate(spec, &params.theta, y)?;
        // Clamped underflow far in a density tail; f' cannot be inverted there.
        if yv <= f64::MIN_POSITIVE {
            underflow_points += 1;
            continue;
        }
        points.push(y);
        ys.push(yv);
    }
    let mut lhs = DMatrix::zeros(x_grid.len(), points.len());
    let mut worst = 0.0f64;
    for (i, &x) in x_grid.iter().enumerate() {
        let fx = spec.prime(x)?;
        let xf2 = x * spec.second(x)?;
        for (j, (y, &yv)) in points.iter().zip(&ys).enumerate() {
            let l = spec.prime(x * yv).map_err(|_| Error::NonFiniteIntegrand {
                location: [vec![x], y.to_vec()].concat(),
                value: x * yv,
            })? - fx;
            let mut r = 0.0;
            for k in 0..y.len() {
                r += (xf2 * params.beta[k] + params.v[k]) * y[k].exp_m1();
            }
            lhs[(i, j)] = l;
            worst = worst.max((l - r).abs() / (1.0 + l.abs()));
        }
    }
    let rank1_defect = if lhs.nrows() < 2 || lhs.ncols() < 2 {
        0.0
    } else {
        let sv = lhs.singular_values();
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        if s[0] > 0.0 {
            s[1] / s[0]
        } else {
            0.0
        }
    };
    Ok(FundamentalCheckReport {
        max_residual_equ: worst,
        rank1_defect,
        grid: x_grid.to_vec(),
        jump_points: points.len(),
        underflow_points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SupportClass {
    /// `supp Z_T = [0, ∞)`
    WholePositiveLine,
    /// `supp Z_T = [A, ∞)` for some `A > 0`
    RayUpward,
    /// `supp Z_T = (0, A]` for some `A > 0`
    RayDownward,
}

/// Classifies the support of `Z_T` for parameters of the `(f')⁻¹` form.
pub fn classify_support(t: &LevyTriplet, spec: &DivergenceSpec, params: &GirsanovParams) -> Result<SupportClass> {
    let nodes = t.nu().nodes(0);
    let log_y = nodes
        .iter()
        .map(|(y, _)| y_candidate(spec, &params.theta, y).map(f64::ln))
        .collect::<Result<Vec<_>>>()?;
    classify(t.covariance().quad_form(&params.beta), &log_y)
}

/// Same classification for an atom-wise measure change.
pub fn classify_support_change(t: &LevyTriplet, change: &MeasureChange) -> Result<SupportClass> {
    let log_y: Vec<f64> = change.jump_multipliers.iter().map(|y| y.ln()).collect();
    classify(t.covariance().quad_form(&change.beta), &log_y)
}

fn classify(q: f64, log_y: &[f64]) -> Result<SupportClass> {
    if q.abs() > SUPPORT_TOL {
        return Ok(SupportClass::WholePositiveLine);
    }
    let up = log_y.iter().any(|&l| l > SUPPORT_TOL);
    let down = log_y.iter().any(|&l| l < -SUPPORT_TOL);
    match (up, down) {
        (true, true) => Ok(SupportClass::WholePositiveLine),
        (true, false) => Ok(SupportClass::RayUpward),
        (false, true) => Ok(SupportClass::RayDownward),
        (false, false) => Err(Error::Degenerate(
            "Y = 1 on the support of nu and beta' c beta = 0: Z_T = 1".into(),
        )),
    }
}

/// Atom-wise perturbations of `base` along the null space of the (linear)
/// drift map `(p, Y) ↦ c R p + Σ m_j (e^{y_j} − 1) Y_j`, where `β = β* + R p`
/// and `R` spans the range of `c`. Each null direction is stepped by every
/// entry of `steps`; steps that would make some `Y_j ≤ 0` are skipped.
pub fn null_space_alternatives(t: &LevyTriplet, base: &MeasureChange, steps: &[f64]) -> Result<Vec<MeasureChange>> {
    let atoms = t
        .nu()
        .atoms()
        .ok_or_else(|| Error::UnsupportedMeasure("alternatives need a finite atomic measure".into()))?;
    let d = t.dim();
    let (range, _) = t.covariance().range_kernel();
    let c_range = t.covariance().matrix() * &range;
    let r = range.ncols();
    let m = atoms.len();
    let map = DMatrix::from_fn(d, r + m, |i, j| {
        if j < r {
            c_range[(i, j)]
        } else {
            let a = &atoms[j - r];
            a.mass * a.location[i].exp_m1()
        }
    });
    let gram = map.transpose() * &map;
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut dirs: Vec<usize> = (0..r + m)
        .filter(|&k| eig.eigenvalues[k].abs() <= RANK_CUTOFF * top.max(1.0))
        .collect();
    dirs.sort_by(|&a, &b| eig.eigenvalues[a].abs().total_cmp(&eig.eigenvalues[b].abs()));
    let mut out = Vec::new();
    for &s in steps {
        for &k in &dirs {
            let n = eig.eigenvectors.column(k);
            let p = &range * n.rows(0, r) * s;
            let beta: Vec<f64> = base.beta.iter().enumerate().map(|(i, b)| b + p[i]).collect();
            let ys: Vec<f64> = (0..m).map(|j| base.jump_multipliers[j] + s * n[r + j]).collect();
            if ys.iter().all(|&y| y > 0.0) {
                out.push(MeasureChange {
                    beta,
                    jump_multipliers: ys,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlternativeResult {
    pub index: usize,
    pub drift_residual: f64,
    /// `E_Q[f'(Z*_T)]`
    pub expectation: Estimate,
    /// Paired `E_Q[f'(Z*_T)] − E_{Q*}[f'(Z*_T)]`.
    pub difference: Estimate,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinimalityReport {
    /// `E_{Q*}[f'(Z*_T)]`
    pub baseline: Estimate,
    pub alternatives: Vec<AlternativeResult>,
    pub passed: bool,
    pub n_paths: usize,
    pub seed: u64,
}

/// Compares `E_Q[f'(Z*_T)]` with `E_{Q*}[f'(Z*_T)]` on common random numbers.
/// An alternative fails if it beats the candidate by more than 3 SE.
pub fn minimality_certificate(
    t: &LevyTriplet,
    spec: &DivergenceSpec,
    candidate: &MeasureChange,
    alternatives: &[MeasureChange],
    mc: &SimulationConfig,
) -> Result<MinimalityReport> {
    let mut drifts = Vec::with_capacity(alternatives.len());
    for (index, alt) in alternatives.iter().enumerate() {
        let residual = max_abs(&measure_change_drift(t, alt)?);
        if !(residual <= MARTINGALE_TOL) {
            return Err(Error::NotMartingale { index, residual });
        }
        drifts.push(residual);
    }
    let batch = simulate(t, mc)?;
    let z_star = density_terminal(&batch, t, candidate)?;
    let fp = z_star.iter().map(|&z| spec.prime(z)).collect::<Result<Vec<_>>>()?;
    let base_samples: Vec<f64> = z_star.iter().zip(&fp).map(|(z, f)| z * f).collect();
    let baseline = estimate(&base_samples)?;
    let mut results = Vec::with_capacity(alternatives.len());
    for (index, alt) in alternatives.iter().enumerate() {
        let z = density_terminal(&batch, t, alt)?;
        let weighted: Vec<f64> = z.iter().zip(&fp).map(|(z, f)| z * f).collect();
        let paired: Vec<f64> = weighted.iter().zip(&base_samples).map(|(a, b)| a - b).collect();
        let difference = estimate(&paired)?;
        results.push(AlternativeResult {
            index,
            drift_residual: drifts[index],
            expectation: estimate(&weighted)?,
            passed: difference.mean.is_finite() && difference.mean >= -3.0 * difference.se,
            difference,
        });
    }
    Ok(MinimalityReport {
        baseline,
        passed: results.iter().all(|r| r.passed),
        alternatives: results,
        n_paths: batch.n_paths(),
        seed: batch.seed(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleEntry {
    pub scale: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleReport {
    pub entries: Vec<ScaleEntry>,
    pub grid: Vec<f64>,
    pub passed: bool,
}

const SCALE_GRID: [f64; 9] = [0.01, 0.1, 0.3, 0.7, 1.0, 1.5, 3.0, 10.0, 100.0];

/// Checks `f(ux) = A f(x) + Bx + C` on a grid for each scale `u`.
pub fn scale_invariance_check(spec: &DivergenceSpec, scales: &[f64]) -> Result<ScaleReport> {
    let mut entries = Vec::with_capacity(scales.len());
    for &u in scales {
        let (a, b, c) = spec.affine_scale_decomposition(u)?.ok_or_else(|| {
            Error::NotApplicable("scale identity needs a single-term divergence".into())
        })?;
        let mut worst = 0.0f64;
        for &x in &SCALE_GRID {
            let lhs = spec.value(u * x)?;
            let rhs = a * spec.value(x)? + b * x + c;
            worst = worst.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
        }
        entries.push(ScaleEntry {
            scale: u,
            a,
            b,
            c,
            max_rel_error: worst,
        });
    }
    Ok(ScaleReport {
        passed: entries.iter().all(|e| e.max_rel_error < SCALE_TOL),
        entries,
        grid: SCALE_GRID.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeEntry {
    pub horizon: f64,
    pub params: GirsanovParams,
    /// Max deviation of `(β, θ, V)` from the first horizon.
    pub param_deviation: f64,
    /// Max relative deviation of term-wise rates (value / T) from the first horizon.
    pub rate_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeReport {
    pub entries: Vec<TimeEntry>,
    pub passed: bool,
}

/// Re-solves at each horizon and checks that parameters do not depend on `T`
/// and that each divergence term scales linearly in `T` (the value for
/// `γ ∈ {−1, −2}`, the log-moment otherwise).
pub fn time_invariance_check(
    t: &LevyTriplet,
    spec: &DivergenceSpec,
    horizons: &[f64],
    cfg: &SolverConfig,
) -> Result<TimeReport> {
    let mut entries: Vec<TimeEntry> = Vec::with_capacity(horizons.len());
    let mut first: Option<(GirsanovParams, Vec<f64>)> = None;
    for &h in horizons {
        let sol = solve(t, spec, cfg)?;
        let rates: Vec<f64> = divergence_terms(t, spec, &sol.params, h)?
            .into_iter()
            .map(|m| match m {
                TermMoment::Linear { value, .. } => value / h,
                TermMoment::LogMoment { log_value, .. } => log_value / h,
            })
            .collect();
        let (param_deviation, rate_deviation) = match &first {
            None => (0.0, 0.0),
            Some((p0, r0)) => (
                param_distance(p0, &sol.params),
                r0.iter()
                    .zip(&rates)
                    .map(|(a, b)| (a - b).abs() / a.abs().max(1e-300).max(1.0f64.min(a.abs().max(b.abs()))))
                    .fold(0.0, f64::max),
            ),
        };
        if first.is_none() {
            first = Some((sol.params.clone(), rates));
        }
        entries.push(TimeEntry {
            horizon: h,
            params: sol.params,
            param_deviation,
            rate_deviation,
        });
    }
    Ok(TimeReport {
        passed: entries
            .iter()
            .all(|e| e.param_deviation < TIME_TOL && e.rate_deviation < TIME_TOL),
        entries,
    })
}

fn param_distance(a: &GirsanovParams, b: &GirsanovParams) -> f64 {
    let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    diff(&a.beta, &b.beta).max(diff(&a.theta, &b.theta)).max(diff(&a.v, &b.v))
}
