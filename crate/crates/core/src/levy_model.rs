//! Lévy triplets `(b, c, ν)` with a truncation rule, the Lévy–Khintchine
//! exponent, and integration against the Lévy measure.
//!
//! Every `∫ … ν(dy)` in the crate goes through [`levy_integral`] or through a
//! [`WeightedNodes`] set obtained from [`LevyMeasure::nodes`]. Atomic measures
//! integrate exactly; radial densities use a tensor Gauss–Legendre grid with
//! geometric panels along each axis and an exclusion ball around the origin.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

/// Symmetry tolerance for `c`.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues of `c` down to `-PSD_TOL` are clamped to zero.
pub const PSD_TOL: f64 = 1e-10;
/// Eigenvalues at or below this split `R^d` into range and kernel of `c`.
pub const RANK_CUTOFF: f64 = 1e-10;
/// Relative change allowed when doubling the quadrature nodes.
pub const REFINEMENT_TOL: f64 = 1e-6;

const GL_ORDER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationRule {
    /// `h(y) = y·1{|y| ≤ 1}`
    Canonical,
    /// `h ≡ 0`; only meaningful for finite-variation jump parts.
    Zero,
}

impl Default for TruncationRule {
    fn default() -> Self {
        TruncationRule::Canonical
    }
}

impl TruncationRule {
    /// Scalar factor `k(y)` with `h(y) = k(y)·y`.
    #[inline]
    pub fn factor(&self, y: &[f64]) -> f64 {
        match self {
            TruncationRule::Canonical => {
                if norm(y) <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            TruncationRule::Zero => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Atom {
    pub location: Vec<f64>,
    pub mass: f64,
}

impl Atom {
    pub fn new(location: Vec<f64>, mass: f64) -> Self {
        Atom { location, mass }
    }
}

/// Radial tempered-stable profile `scale · e^{-decay·r} · r^{-(d+alpha)}`.
///
/// `alpha < 2` is needed near the origin, `decay > 0` or `alpha > 0` in the
/// tail. `alpha = -1` in one dimension gives a pure exponential density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TemperedStable {
    pub scale: f64,
    pub decay: f64,
    pub alpha: f64,
}

/// Lévy density on `R^d \ {0}` depending only on `|y|`, together with the
/// quadrature domain used to integrate against it: the box `[-cutoff, cutoff]^d`
/// minus the ball of radius `exclusion` around the origin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialDensity {
    pub dim: usize,
    pub profile: TemperedStable,
    pub cutoff: f64,
    pub exclusion: f64,
    /// Geometric panels per half-axis at refinement level 0.
    pub panels: usize,
    pub max_doublings: usize,
}

impl RadialDensity {
    pub fn new(dim: usize, profile: TemperedStable) -> Self {
        let cutoff = if profile.decay > 0.0 {
            (50.0 / profile.decay).min(200.0)
        } else {
            50.0
        };
        RadialDensity {
            dim,
            profile,
            cutoff,
            exclusion: 1e-6,
            panels: 12,
            max_doublings: 4,
        }
    }

    pub fn with_cutoff(mut self, cutoff: f64) -> Self {
        self.cutoff = cutoff;
        self
    }

    pub fn with_exclusion(mut self, exclusion: f64) -> Self {
        self.exclusion = exclusion;
        self
    }

    #[inline]
    pub fn at_radius(&self, r: f64) -> f64 {
        let p = &self.profile;
        p.scale * (-p.decay * r).exp() * r.powf(-(self.dim as f64 + p.alpha))
    }

    #[inline]
    pub fn density(&self, y: &[f64]) -> f64 {
        self.at_radius(norm(y))
    }

    /// Tensor grid at a refinement level (level `l` uses `panels · 2^l`
    /// panels per half-axis).
    pub fn nodes(&self, level: usize) -> WeightedNodes {
        let panels = self.panels << level;
        // |y| = 1 is a panel edge: truncation and `1 ∧ |y|²` both kink there.
        let mut half = Vec::new();
        if self.exclusion < 1.0 && self.cutoff > 1.0 {
            half.extend(quadrature::geometric_panels(self.exclusion, 1.0, panels, GL_ORDER));
            half.extend(quadrature::geometric_panels(1.0, self.cutoff, panels, GL_ORDER));
        } else {
            half.extend(quadrature::geometric_panels(self.exclusion, self.cutoff, panels, GL_ORDER));
        }
        let mut axis: Vec<(f64, f64)> = Vec::with_capacity(2 * half.len() + GL_ORDER);
        for &(r, w) in half.iter().rev() {
            axis.push((-r, w));
        }
        if self.dim > 1 {
            axis.extend(quadrature::mapped_rule(-self.exclusion, self.exclusion, GL_ORDER));
        }
        axis.extend(half.iter().copied());

        let d = self.dim;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut idx = vec![0usize; d];
        let mut y = vec![0.0; d];
        'outer: loop {
            let mut w = 1.0;
            for (k, &i) in idx.iter().enumerate() {
                y[k] = axis[i].0;
                w *= axis[i].1;
            }
            if norm(&y) >= self.exclusion {
                let dens = self.density(&y);
                if dens > 0.0 && dens.is_finite() {
                    points.extend_from_slice(&y);
                    weights.push(w * dens);
                }
            }
            for k in 0..d {
                idx[k] += 1;
                if idx[k] < axis.len() {
                    continue 'outer;
                }
                idx[k] = 0;
            }
            break;
        }
        WeightedNodes {
            dim: d,
            points,
            weights,
        }
    }

    fn node_count(&self, level: usize) -> usize {
        let pieces = if self.exclusion < 1.0 && self.cutoff > 1.0 { 2 } else { 1 };
        let per_axis =
            2 * pieces * (self.panels << level) * GL_ORDER + if self.dim > 1 { GL_ORDER } else { 0 };
        per_axis.pow(self.dim as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum LevyMeasure {
    FiniteAtomic(Vec<Atom>),
    RadialDensity(RadialDensity),
}

impl LevyMeasure {
    pub fn empty() -> Self {
        LevyMeasure::FiniteAtomic(Vec::new())
    }

    pub fn atoms(&self) -> Option<&[Atom]> {
        match self {
            LevyMeasure::FiniteAtomic(a) => Some(a),
            LevyMeasure::RadialDensity(_) => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, LevyMeasure::FiniteAtomic(a) if a.is_empty())
    }

    /// Node set at a refinement level; atoms ignore the level.
    pub fn nodes(&self, level: usize) -> WeightedNodes {
        match self {
            LevyMeasure::FiniteAtomic(atoms) => {
                let dim = atoms.first().map_or(0, |a| a.location.len());
                WeightedNodes {
                    dim,
                    points: atoms.iter().flat_map(|a| a.location.iter().copied()).collect(),
                    weights: atoms.iter().map(|a| a.mass).collect(),
                }
            }
            LevyMeasure::RadialDensity(rd) => rd.nodes(level),
        }
    }

    /// Refinement level at which `∫(1∧|y|²)ν` is stable under node doubling.
    /// Solvers work on the node set of this level.
    pub fn working_level(&self) -> Result<usize> {
        match self {
            LevyMeasure::FiniteAtomic(_) => Ok(0),
            LevyMeasure::RadialDensity(rd) => {
                refine(rd, |y| {
                    let r2 = y.iter().map(|v| v * v).sum::<f64>();
                    r2.min(1.0)
                })
                .map(|(_, level)| level)
            }
        }
    }
}

/// Weighted point set representing ν: `∫g dν ≈ Σ w_k g(y_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedNodes {
    pub dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedNodes {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        (0..self.len()).map(move |k| (self.point(k), self.weights[k]))
    }

    /// `Σ w_k g(y_k)`, failing on the first non-finite `g` value.
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, g: F) -> Result<f64> {
        let mut acc = 0.0;
        for (y, w) in self.iter() {
            let v = g(y);
            if !v.is_finite() {
                return Err(Error::NonFiniteIntegrand {
                    location: y.to_vec(),
                    value: v,
                });
            }
            acc += w * v;
        }
        Ok(acc)
    }
}

/// Symmetrized Gaussian covariance with its clamped eigendecomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    matrix: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    raw_min_eigenvalue: f64,
    max_asymmetry: f64,
}

impl Covariance {
    fn new(raw: DMatrix<f64>) -> Self {
        let d = raw.nrows();
        let mut max_asymmetry: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                max_asymmetry = max_asymmetry.max((raw[(i, j)] - raw[(j, i)]).abs());
            }
        }
        let matrix = (&raw + raw.transpose()) * 0.5;
        let (eigenvalues, eigenvectors, raw_min) = if d == 0 {
            (Vec::new(), DMatrix::zeros(0, 0), 0.0)
        } else {
            let eig = SymmetricEigen::new(matrix.clone());
            let raw_min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            let vals = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
            (vals, eig.eigenvectors, raw_min)
        };
        Covariance {
            matrix,
            eigenvalues,
            eigenvectors,
            raw_min_eigenvalue: raw_min,
            max_asymmetry,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.raw_min_eigenvalue
    }

    pub fn max_asymmetry(&self) -> f64 {
        self.max_asymmetry
    }

    pub fn is_zero(&self) -> bool {
        self.eigenvalues.iter().all(|&l| l <= RANK_CUTOFF)
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.matrix[(i, i)]).collect()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let out = &self.matrix * DVector::from_column_slice(v);
        out.iter().copied().collect()
    }

    /// `ᵀv c v`
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let cv = self.apply(v);
        dot(v, &cv)
    }

    /// `S` with `S Sᵀ = c`, built from the clamped eigendecomposition so that
    /// singular `c` needs no pivoting.
    pub fn sqrt_factor(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut s = self.eigenvectors.clone();
        for j in 0..d {
            let root = self.eigenvalues[j].sqrt();
            for i in 0..d {
                s[(i, j)] *= root;
            }
        }
        s
    }

    /// Orthonormal bases `(range, kernel)` of `c` as `d×r` and `d×k` matrices.
    pub fn range_kernel(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.dim();
        let range: Vec<usize> = (0..d).filter(|&j| self.eigenvalues[j] > RANK_CUTOFF).collect();
        let kernel: Vec<usize> = (0..d).filter(|&j| self.eigenvalues[j] <= RANK_CUTOFF).collect();
        let pick = |cols: &[usize]| {
            DMatrix::from_fn(d, cols.len(), |i, j| self.eigenvectors[(i, cols[j])])
        };
        (pick(&range), pick(&kernel))
    }
}

/// Lévy triplet `(b, c, ν)` relative to a truncation rule.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyTriplet {
    dim: usize,
    b: Vec<f64>,
    c_raw: Vec<f64>,
    cov: Covariance,
    nu: LevyMeasure,
    trunc: TruncationRule,
}

impl LevyTriplet {
    /// Builds a triplet from a drift, a row-major `d×d` covariance and a Lévy
    /// measure. Only shapes are checked here; see [`validate_triplet`] for the
    /// model invariants.
    pub fn new(b: Vec<f64>, c: Vec<f64>, nu: LevyMeasure, trunc: TruncationRule) -> Result<Self> {
        let dim = b.len();
        if dim == 0 {
            return Err(Error::InvalidModel("dimension must be positive".into()));
        }
        if c.len() != dim * dim {
            return Err(Error::Dimension {
                what: "covariance (row-major d*d)",
                expected: dim * dim,
                found: c.len(),
            });
        }
        match &nu {
            LevyMeasure::FiniteAtomic(atoms) => {
                for a in atoms {
                    if a.location.len() != dim {
                        return Err(Error::Dimension {
                            what: "atom location",
                            expected: dim,
                            found: a.location.len(),
                        });
                    }
                }
            }
            LevyMeasure::RadialDensity(rd) => {
                if rd.dim != dim {
                    return Err(Error::Dimension {
                        what: "Levy density",
                        expected: dim,
                        found: rd.dim,
                    });
                }
            }
        }
        let cov = Covariance::new(DMatrix::from_row_slice(dim, dim, &c));
        Ok(LevyTriplet {
            dim,
            b,
            c_raw: c,
            cov,
            nu,
            trunc,
        })
    }

    /// Brownian motion with drift `b` and covariance `c`, no jumps.
    pub fn diffusion(b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        Self::new(b, c, LevyMeasure::empty(), TruncationRule::Canonical)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c_row_major(&self) -> &[f64] {
        &self.c_raw
    }

    pub fn covariance(&self) -> &Covariance {
        &self.cov
    }

    pub fn nu(&self) -> &LevyMeasure {
        &self.nu
    }

    pub fn truncation(&self) -> TruncationRule {
        self.trunc
    }

    pub fn with_b(&self, b: Vec<f64>) -> Result<Self> {
        Self::new(b, self.c_raw.clone(), self.nu.clone(), self.trunc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckItem {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub detail: String,
}

impl CheckItem {
    fn new(name: &str, passed: bool, measured: f64, detail: impl Into<String>) -> Self {
        CheckItem {
            name: name.to_string(),
            passed,
            measured,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub items: Vec<CheckItem>,
    pub ok: bool,
}

impl ValidationReport {
    pub fn failures(&self) -> Vec<&CheckItem> {
        self.items.iter().filter(|i| !i.passed).collect()
    }

    pub fn item(&self, name: &str) -> Option<&CheckItem> {
        self.items.iter().find(|i| i.name == name)
    }
}

/// Checks every triplet invariant and reports measured values. Never fails.
pub fn validate_triplet(t: &LevyTriplet) -> ValidationReport {
    let mut items = Vec::new();
    let cov = t.covariance();

    let finite = t.b.iter().chain(&t.c_raw).all(|v| v.is_finite());
    items.push(CheckItem::new(
        "finite_entries",
        finite,
        if finite { 0.0 } else { 1.0 },
        "b and c entries are finite",
    ));

    let asym = cov.max_asymmetry();
    items.push(CheckItem::new(
        "c_symmetric",
        asym <= SYMMETRY_TOL,
        asym,
        format!("max |c_ij - c_ji| <= {SYMMETRY_TOL:e}"),
    ));

    let min_eig = cov.min_eigenvalue();
    items.push(CheckItem::new(
        "c_psd",
        min_eig >= -PSD_TOL,
        min_eig,
        format!("min eigenvalue >= -{PSD_TOL:e} (eigenvalues {:?})", cov.eigenvalues()),
    ));

    match &t.nu {
        LevyMeasure::FiniteAtomic(atoms) => {
            let min_mass = atoms.iter().map(|a| a.mass).fold(f64::INFINITY, f64::min);
            let masses_ok = atoms.iter().all(|a| a.mass > 0.0 && a.mass.is_finite());
            items.push(CheckItem::new(
                "masses_positive",
                masses_ok,
                if atoms.is_empty() { 0.0 } else { min_mass },
                "every atom mass is finite and > 0",
            ));
            let min_norm = atoms
                .iter()
                .map(|a| norm(&a.location))
                .fold(f64::INFINITY, f64::min);
            let loc_ok = atoms
                .iter()
                .all(|a| norm(&a.location) > 0.0 && a.location.iter().all(|v| v.is_finite()));
            items.push(CheckItem::new(
                "no_mass_at_origin",
                loc_ok,
                if atoms.is_empty() { f64::INFINITY } else { min_norm },
                "every atom location is finite and nonzero",
            ));
            let total: f64 = atoms.iter().map(|a| a.mass).sum();
            let integ: f64 = atoms
                .iter()
                .map(|a| a.mass * norm2(&a.location).min(1.0))
                .sum();
            items.push(CheckItem::new(
                "levy_integrability",
                integ.is_finite() && total.is_finite(),
                integ,
                format!("int (1 ^ |y|^2) nu(dy) finite; total mass {total}"),
            ));
            items.push(CheckItem::new(
                "truncation",
                true,
                0.0,
                format!("{:?} truncation with finite-activity measure", t.trunc),
            ));
        }
        LevyMeasure::RadialDensity(rd) => {
            let p = rd.profile;
            let params_ok = p.scale > 0.0
                && p.scale.is_finite()
                && p.decay >= 0.0
                && rd.exclusion > 0.0
                && rd.cutoff > rd.exclusion;
            items.push(CheckItem::new(
                "masses_positive",
                params_ok,
                p.scale,
                "density scale > 0, decay >= 0, 0 < exclusion < cutoff",
            ));
            items.push(CheckItem::new(
                "no_mass_at_origin",
                rd.exclusion > 0.0,
                rd.exclusion,
                "quadrature excludes a ball around 0",
            ));
            let small_ok = p.alpha < 2.0;
            let tail_ok = p.decay > 0.0 || p.alpha > 0.0;
            let (integ, conv) = match refine(rd, |y| norm2(y).min(1.0)) {
                Ok((v, level)) => (v, format!("converged at level {level}")),
                Err(e) => (f64::NAN, e.to_string()),
            };
            items.push(CheckItem::new(
                "levy_integrability",
                small_ok && tail_ok && integ.is_finite(),
                integ,
                format!(
                    "alpha < 2 near 0: {small_ok}; tail integrable: {tail_ok}; quadrature {conv}"
                ),
            ));
            let fv = p.alpha < 1.0;
            let trunc_ok = match t.trunc {
                TruncationRule::Canonical => true,
                TruncationRule::Zero => fv,
            };
            items.push(CheckItem::new(
                "truncation",
                trunc_ok,
                p.alpha,
                "Zero truncation requires finite variation (alpha < 1)",
            ));
        }
    }

    let ok = items.iter().all(|i| i.passed);
    ValidationReport { items, ok }
}

/// Lévy–Khintchine exponent
/// `ψ(u) = i⟨u,b⟩ − ½ᵀucu + ∫[e^{i⟨u,y⟩} − 1 − i⟨u,h(y)⟩] ν(dy)`.
pub fn characteristic_exponent(t: &LevyTriplet, u: &[f64]) -> Result<Complex64> {
    if u.len() != t.dim {
        return Err(Error::Dimension {
            what: "characteristic exponent argument",
            expected: t.dim,
            found: u.len(),
        });
    }
    if u.iter().all(|&v| v == 0.0) {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let trunc = t.trunc;
    let re_jump = levy_integral(&t.nu, |y| dot(u, y).cos() - 1.0)?;
    let im_jump = levy_integral(&t.nu, |y| {
        let uy = dot(u, y);
        uy.sin() - trunc.factor(y) * uy
    })?;
    let re = -0.5 * t.cov.quad_form(u) + re_jump;
    let im = dot(u, &t.b) + im_jump;
    Ok(Complex64::new(re, im))
}

/// `∫ g dν`: exact weighted sum for atoms, refined quadrature for densities.
pub fn levy_integral<F: Fn(&[f64]) -> f64>(nu: &LevyMeasure, g: F) -> Result<f64> {
    match nu {
        LevyMeasure::FiniteAtomic(_) => nu.nodes(0).integrate(g),
        LevyMeasure::RadialDensity(rd) => refine(rd, g).map(|(v, _)| v),
    }
}

fn refine<F: Fn(&[f64]) -> f64>(rd: &RadialDensity, g: F) -> Result<(f64, usize)> {
    let mut counts = Vec::new();
    let mut prev = rd.nodes(0).integrate(&g)?;
    counts.push(rd.node_count(0));
    let mut change = f64::INFINITY;
    for level in 1..=rd.max_doublings {
        let cur = rd.nodes(level).integrate(&g)?;
        counts.push(rd.node_count(level));
        change = (cur - prev).abs() / cur.abs().max(1e-300);
        if (cur - prev).abs() <= REFINEMENT_TOL * cur.abs() + 1e-14 {
            return Ok((cur, level));
        }
        prev = cur;
    }
    Err(Error::NumericIntegration {
        node_counts: counts,
        last_change: change,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailCheck {
    pub finite: bool,
    pub detail: String,
}

/// Whether `∫_{|y|≥1} e^{y_i} ν(dy)` is finite.
pub fn exp_moment_finite(nu: &LevyMeasure, i: usize) -> TailCheck {
    match nu {
        LevyMeasure::FiniteAtomic(atoms) => {
            let v: f64 = atoms
                .iter()
                .filter(|a| norm(&a.location) >= 1.0)
                .map(|a| a.mass * a.location.get(i).copied().unwrap_or(0.0).exp())
                .sum();
            TailCheck {
                finite: v.is_finite(),
                detail: format!("finite sum over atoms = {v}"),
            }
        }
        LevyMeasure::RadialDensity(rd) => tail_finite(rd, |y| y[i].exp()),
    }
}

/// Tail-growth test for `∫_{|y|≥1} |g| ν(dy)` along the signed coordinate
/// rays: the masses of the dyadic shells `[2^k, 2^{k+1}]`, `k = 0..8`, must
/// be finite and shrink by a factor below 0.99 over the last three doublings.
pub fn tail_finite<F: Fn(&[f64]) -> f64>(rd: &RadialDensity, g: F) -> TailCheck {
    let d = rd.dim;
    let rule = quadrature::gauss_legendre(16);
    let mut worst_ratio: f64 = 0.0;
    let mut y = vec![0.0; d];
    for axis in 0..d {
        for sign in [-1.0, 1.0] {
            let mut shells = Vec::with_capacity(9);
            for k in 0..9 {
                let lo = (2.0f64).powi(k);
                let hi = 2.0 * lo;
                let half = 0.5 * (hi - lo);
                let mid = 0.5 * (hi + lo);
                let mut m = 0.0;
                for (x, w) in rule.0.iter().zip(&rule.1) {
                    let r = mid + half * x;
                    y.iter_mut().for_each(|v| *v = 0.0);
                    y[axis] = sign * r;
                    m += half * w * g(&y).abs() * rd.at_radius(r) * r.powi(d as i32 - 1);
                }
                shells.push(m);
            }
            if shells.iter().any(|m| !m.is_finite()) {
                return TailCheck {
                    finite: false,
                    detail: format!("non-finite shell mass along axis {axis} sign {sign}"),
                };
            }
            for k in 6..9 {
                let ratio = if shells[k - 1] > 0.0 {
                    shells[k] / shells[k - 1]
                } else if shells[k] > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                };
                worst_ratio = worst_ratio.max(ratio);
            }
        }
    }
    TailCheck {
        finite: worst_ratio < 0.99,
        detail: format!("worst dyadic shell ratio {worst_ratio:.4}"),
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum()
}

#[inline]
pub fn norm(y: &[f64]) -> f64 {
    norm2(y).sqrt()
}
