//! Exact terminal-law simulation of finite-activity Lévy models and the
//! Monte Carlo estimators used to cross-check the closed forms.
//!
//! Each path `i` draws from its own ChaCha8 stream (`seed`, stream `i`), so a
//! batch is bit-identical regardless of thread count or scheduling.
//! Aggregates use fixed-order pairwise summation.

use std::io::{self, Write};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::DivergenceSpec;
use crate::error::{Error, Result};
use crate::levy_model::{dot, LevyTriplet};
use crate::mmm_solver::{GirsanovParams, MeasureChange};

pub const GENERATOR_NAME: &str = "ChaCha8Rng(seed_from_u64(seed), stream = path index)";

/// Stream ids at or above this offset are used for auxiliary draws.
const AUX_STREAM: u64 = 1 << 62;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Steps of the optional discretized Gaussian path; terminal laws are exact.
    pub brownian_steps: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            horizon: 1.0,
            n_paths: 100_000,
            seed: 20_091_984,
            brownian_steps: 1,
        }
    }
}

impl SimulationConfig {
    pub fn new(horizon: f64, n_paths: usize, seed: u64) -> Self {
        SimulationConfig {
            horizon,
            n_paths,
            seed,
            brownian_steps: 1,
        }
    }
}

/// Simulated terminal values. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    dim: usize,
    n_atoms: usize,
    n_paths: usize,
    horizon: f64,
    seed: u64,
    gaussian: Vec<f64>,
    jump_counts: Vec<u32>,
    jumps: Vec<Vec<(f64, u32)>>,
    terminal_x: Vec<f64>,
}

impl PathBatch {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Continuous martingale part `G ~ N(0, cT)` of path `i`.
    pub fn gaussian(&self, i: usize) -> &[f64] {
        &self.gaussian[i * self.dim..(i + 1) * self.dim]
    }

    pub fn jump_counts(&self, i: usize) -> &[u32] {
        &self.jump_counts[i * self.n_atoms..(i + 1) * self.n_atoms]
    }

    /// `(time, atom index)` of every jump of path `i`, sorted by time.
    pub fn jumps(&self, i: usize) -> &[(f64, u32)] {
        &self.jumps[i]
    }

    pub fn terminal_x(&self, i: usize) -> &[f64] {
        &self.terminal_x[i * self.dim..(i + 1) * self.dim]
    }

    /// Gaussian part on `steps` equidistant times, as a Brownian bridge pinned
    /// at the stored terminal value (auxiliary stream, so terminal draws are
    /// unaffected).
    pub fn gaussian_path(&self, t: &LevyTriplet, i: usize, steps: usize) -> Vec<Vec<f64>> {
        let steps = steps.max(1);
        let d = self.dim;
        let sqrt = t.covariance().sqrt_factor();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(AUX_STREAM + i as u64);
        let dt = self.horizon / steps as f64;
        // Free Brownian path, then pin: B_t − (t/T)(B_T − G)
        let mut free = vec![vec![0.0; d]; steps + 1];
        for k in 1..=steps {
            let xi: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let inc = &sqrt * DVector::from_vec(xi) * dt.sqrt();
            for j in 0..d {
                free[k][j] = free[k - 1][j] + inc[j];
            }
        }
        let g = self.gaussian(i);
        (0..=steps)
            .map(|k| {
                let frac = k as f64 / steps as f64;
                (0..d).map(|j| free[k][j] - frac * (free[steps][j] - g[j])).collect()
            })
            .collect()
    }
}

struct SimulatedPath {
    gaussian: Vec<f64>,
    counts: Vec<u32>,
    jumps: Vec<(f64, u32)>,
    x: Vec<f64>,
}

/// Exact samples of `X_T` for a finite atomic model.
pub fn simulate(t: &LevyTriplet, cfg: &SimulationConfig) -> Result<PathBatch> {
    let atoms = t.nu().atoms().ok_or_else(|| {
        Error::UnsupportedMeasure(
            "simulation needs a finite atomic Levy measure; discretize the density into atoms first".into(),
        )
    })?;
    if !(cfg.horizon > 0.0) || !cfg.horizon.is_finite() {
        return Err(Error::Domain {
            what: "simulation horizon",
            value: cfg.horizon,
        });
    }
    if cfg.n_paths == 0 {
        return Err(Error::Config("n_paths must be at least 1".into()));
    }
    let d = t.dim();
    let horizon = cfg.horizon;
    let sqrt = t.covariance().sqrt_factor() * horizon.sqrt();
    let trunc = t.truncation();
    let mut drift: Vec<f64> = t.b().iter().map(|b| b * horizon).collect();
    for a in atoms {
        let k = trunc.factor(&a.location);
        for j in 0..d {
            drift[j] -= horizon * a.mass * k * a.location[j];
        }
    }
    let poissons: Vec<Option<Poisson<f64>>> = atoms
        .iter()
        .map(|a| Poisson::new(a.mass * horizon).ok())
        .collect();

    let paths: Vec<SimulatedPath> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let xi: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let g = &sqrt * DVector::from_vec(xi);
            let gaussian: Vec<f64> = g.iter().copied().collect();
            let mut x: Vec<f64> = drift.iter().zip(&gaussian).map(|(a, b)| a + b).collect();
            let mut counts = Vec::with_capacity(atoms.len());
            let mut jumps = Vec::new();
            for (j, (atom, pois)) in atoms.iter().zip(&poissons).enumerate() {
                let n = pois.as_ref().map_or(0, |p| p.sample(&mut rng) as u32);
                for _ in 0..n {
                    jumps.push((rng.random::<f64>() * horizon, j as u32));
                }
                for k in 0..d {
                    x[k] += n as f64 * atom.location[k];
                }
                counts.push(n);
            }
            jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
            SimulatedPath {
                gaussian,
                counts,
                jumps,
                x,
            }
        })
        .collect();

    let n_atoms = atoms.len();
    let mut batch = PathBatch {
        dim: d,
        n_atoms,
        n_paths: cfg.n_paths,
        horizon,
        seed: cfg.seed,
        gaussian: Vec::with_capacity(cfg.n_paths * d),
        jump_counts: Vec::with_capacity(cfg.n_paths * n_atoms),
        jumps: Vec::with_capacity(cfg.n_paths),
        terminal_x: Vec::with_capacity(cfg.n_paths * d),
    };
    for p in paths {
        batch.gaussian.extend(p.gaussian);
        batch.jump_counts.extend(p.counts);
        batch.jumps.push(p.jumps);
        batch.terminal_x.extend(p.x);
    }
    Ok(batch)
}

/// Terminal density
/// `Z_T = exp(ᵀβG − ½T ᵀβcβ) · Π_jumps Y(y) · exp(−T ∫(Y − 1) dν)` per path.
pub fn density_terminal(batch: &PathBatch, t: &LevyTriplet, change: &MeasureChange) -> Result<Vec<f64>> {
    let atoms = t
        .nu()
        .atoms()
        .ok_or_else(|| Error::UnsupportedMeasure("density needs a finite atomic measure".into()))?;
    if atoms.len() != batch.n_atoms || change.jump_multipliers.len() != batch.n_atoms {
        return Err(Error::Dimension {
            what: "atoms in path batch",
            expected: batch.n_atoms,
            found: change.jump_multipliers.len(),
        });
    }
    if change.beta.len() != batch.dim {
        return Err(Error::Dimension {
            what: "beta",
            expected: batch.dim,
            found: change.beta.len(),
        });
    }
    for &y in &change.jump_multipliers {
        if !(y > 0.0) {
            return Err(Error::Domain {
                what: "jump multiplier Y",
                value: y,
            });
        }
    }
    let horizon = batch.horizon;
    let q = t.covariance().quad_form(&change.beta);
    let comp: f64 = atoms
        .iter()
        .zip(&change.jump_multipliers)
        .map(|(a, y)| a.mass * (y - 1.0))
        .sum();
    let log_y: Vec<f64> = change.jump_multipliers.iter().map(|y| y.ln()).collect();
    let base = -0.5 * horizon * q - horizon * comp;
    Ok((0..batch.n_paths)
        .into_par_iter()
        .map(|i| {
            let jumps: f64 = batch
                .jump_counts(i)
                .iter()
                .zip(&log_y)
                .map(|(&n, ly)| n as f64 * ly)
                .sum();
            (dot(&change.beta, batch.gaussian(i)) + base + jumps).exp()
        })
        .collect())
}

/// [`density_terminal`] for parameters of the `(f')⁻¹` form.
pub fn density_for_params(
    batch: &PathBatch,
    t: &LevyTriplet,
    spec: &DivergenceSpec,
    params: &GirsanovParams,
) -> Result<Vec<f64>> {
    density_terminal(batch, t, &params.to_measure_change(spec, t)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
    /// Non-finite samples seen (excluded only on request).
    pub non_finite: usize,
}

impl Estimate {
    /// `|mean − target| ≤ k·SE`
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }

    /// Deviation from `target` in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        if self.se > 0.0 {
            (self.mean - target) / self.se
        } else if self.mean == target {
            0.0
        } else {
            f64::INFINITY.copysign(self.mean - target)
        }
    }
}

/// Fixed-order pairwise sum.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 64 {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Sample mean and standard error (`stdev/√n`). Non-finite samples propagate
/// into the mean unless `exclude_non_finite` is set; either way they are
/// counted.
pub fn estimate_with(samples: &[f64], exclude_non_finite: bool) -> Result<Estimate> {
    let non_finite = samples.iter().filter(|v| !v.is_finite()).count();
    let filtered: Vec<f64>;
    let xs = if exclude_non_finite && non_finite > 0 {
        filtered = samples.iter().copied().filter(|v| v.is_finite()).collect();
        &filtered[..]
    } else {
        samples
    };
    let n = xs.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("estimator needs at least 2 samples, got {n}")));
    }
    let mean = pairwise_sum(xs) / n as f64;
    let sq: Vec<f64> = xs.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    Ok(Estimate {
        mean,
        se: (var / n as f64).sqrt(),
        n,
        non_finite,
    })
}

pub fn estimate(samples: &[f64]) -> Result<Estimate> {
    estimate_with(samples, false)
}

/// Estimate of `E[g(x_i)]` over per-path values.
pub fn estimate_map<F: Fn(usize) -> f64 + Sync + Send>(n: usize, g: F) -> Result<Estimate> {
    let samples: Vec<f64> = (0..n).into_par_iter().map(g).collect();
    estimate(&samples)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssetCheck {
    pub asset: usize,
    pub estimate: Estimate,
    pub z_score: f64,
    pub passed: bool,
    pub overflow_paths: usize,
}

/// `E_P[Z_T e^{X^i_T}]` per asset; passes within 4 SE of 1.
pub fn mc_martingale_check(batch: &PathBatch, densities: &[f64]) -> Result<Vec<AssetCheck>> {
    check_len(batch, densities)?;
    (0..batch.dim)
        .map(|i| {
            let samples: Vec<f64> = (0..batch.n_paths)
                .into_par_iter()
                .map(|p| densities[p] * batch.terminal_x(p)[i].exp())
                .collect();
            let est = estimate(&samples)?;
            Ok(AssetCheck {
                asset: i,
                z_score: est.z_score(1.0),
                passed: est.mean.is_finite() && est.within(1.0, 4.0),
                overflow_paths: est.non_finite,
                estimate: est,
            })
        })
        .collect()
}

/// Sample mean of `f(Z_T)`.
pub fn mc_divergence(densities: &[f64], spec: &DivergenceSpec) -> Result<Estimate> {
    let samples = densities
        .par_iter()
        .map(|&z| spec.value(z))
        .collect::<Result<Vec<_>>>()?;
    estimate(&samples)
}

/// Empirical `E[e^{i⟨u, X_T⟩}]` as (real, imaginary) estimates.
pub fn empirical_characteristic(batch: &PathBatch, u: &[f64]) -> Result<(Estimate, Estimate)> {
    let phase: Vec<f64> = (0..batch.n_paths)
        .into_par_iter()
        .map(|p| dot(u, batch.terminal_x(p)))
        .collect();
    let re = estimate(&phase.iter().map(|a| a.cos()).collect::<Vec<_>>())?;
    let im = estimate(&phase.iter().map(|a| a.sin()).collect::<Vec<_>>())?;
    Ok((re, im))
}

fn check_len(batch: &PathBatch, densities: &[f64]) -> Result<()> {
    if densities.len() != batch.n_paths {
        return Err(Error::Dimension {
            what: "densities",
            expected: batch.n_paths,
            found: densities.len(),
        });
    }
    Ok(())
}

/// Delimited dump: one row per path with index, G, jump counts, X_T and Z_T.
pub fn write_path_dump<W: Write>(mut w: W, batch: &PathBatch, densities: Option<&[f64]>) -> io::Result<()> {
    writeln!(
        w,
        "# generator={GENERATOR_NAME} seed={} n_paths={} horizon={}",
        batch.seed, batch.n_paths, batch.horizon
    )?;
    let mut header = vec!["path".to_string()];
    header.extend((0..batch.dim).map(|i| format!("g{i}")));
    header.extend((0..batch.n_atoms).map(|j| format!("n{j}")));
    header.extend((0..batch.dim).map(|i| format!("x{i}")));
    header.push("z".into());
    writeln!(w, "{}", header.join(","))?;
    for p in 0..batch.n_paths {
        let mut row = vec![p.to_string()];
        row.extend(batch.gaussian(p).iter().map(|v| format!("{v:e}")));
        row.extend(batch.jump_counts(p).iter().map(|v| v.to_string()));
        row.extend(batch.terminal_x(p).iter().map(|v| format!("{v:e}")));
        row.push(densities.map_or_else(|| "nan".into(), |z| format!("{:e}", z[p])));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
