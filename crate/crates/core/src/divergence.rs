//! Convex divergence generators built from the power family
//!
//! ```text
//! f_γ(x) = c_γ x^{γ+2}   (γ ∉ {-1, -2}),   c_γ = sign((γ+1)/(γ+2))
//!        = x ln x        (γ = -1)
//!        = -ln x         (γ = -2)
//! ```
//!
//! with `f_γ''(x) = a(γ) x^γ`. A [`DivergenceSpec`] is a positive combination
//! `Σ A_k f_{γ_k} + Bx + C`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerTerm {
    pub weight: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceSpec {
    terms: Vec<PowerTerm>,
    linear: f64,
    constant: f64,
    range: (f64, f64),
}

/// `a(γ) = |(γ+1)(γ+2)|`, with `a(-1) = a(-2) = 1`.
pub fn a_of_gamma(gamma: f64) -> f64 {
    if is_entropy(gamma) || is_reverse_entropy(gamma) {
        1.0
    } else {
        ((gamma + 1.0) * (gamma + 2.0)).abs()
    }
}

fn c_of_gamma(gamma: f64) -> f64 {
    ((gamma + 1.0) / (gamma + 2.0)).signum()
}

#[inline]
fn is_entropy(gamma: f64) -> bool {
    gamma == -1.0
}

#[inline]
fn is_reverse_entropy(gamma: f64) -> bool {
    gamma == -2.0
}

impl PowerTerm {
    fn value(&self, x: f64) -> f64 {
        let g = self.gamma;
        let v = if is_entropy(g) {
            x * x.ln()
        } else if is_reverse_entropy(g) {
            -x.ln()
        } else {
            c_of_gamma(g) * x.powf(g + 2.0)
        };
        self.weight * v
    }

    fn first(&self, x: f64) -> f64 {
        let g = self.gamma;
        let v = if is_entropy(g) {
            x.ln() + 1.0
        } else if is_reverse_entropy(g) {
            -1.0 / x
        } else {
            c_of_gamma(g) * (g + 2.0) * x.powf(g + 1.0)
        };
        self.weight * v
    }

    fn second(&self, x: f64) -> f64 {
        self.weight * a_of_gamma(self.gamma) * x.powf(self.gamma)
    }

    /// Limits of the derivative at `0+` and `+∞`.
    fn first_limits(&self) -> (f64, f64) {
        let g = self.gamma;
        if is_entropy(g) {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else if g > -1.0 {
            (0.0, f64::INFINITY)
        } else {
            (f64::NEG_INFINITY, 0.0)
        }
    }
}

impl DivergenceSpec {
    pub fn new(terms: Vec<PowerTerm>, linear: f64, constant: f64) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidDivergence("at least one power term is required".into()));
        }
        for (i, t) in terms.iter().enumerate() {
            if !(t.weight > 0.0) || !t.weight.is_finite() {
                return Err(Error::InvalidDivergence(format!(
                    "term {i}: weight must be positive and finite, got {}",
                    t.weight
                )));
            }
            if !t.gamma.is_finite() {
                return Err(Error::InvalidDivergence(format!("term {i}: gamma must be finite")));
            }
            if terms[..i].iter().any(|o| o.gamma == t.gamma) {
                return Err(Error::InvalidDivergence(format!(
                    "term {i}: duplicate gamma {}",
                    t.gamma
                )));
            }
        }
        if !linear.is_finite() || !constant.is_finite() {
            return Err(Error::InvalidDivergence("linear and constant parts must be finite".into()));
        }
        let (mut lo, mut hi) = (linear, linear);
        for t in &terms {
            let (l, h) = t.first_limits();
            lo += t.weight * l;
            hi += t.weight * h;
        }
        Ok(DivergenceSpec {
            terms,
            linear,
            constant,
            range: (lo, hi),
        })
    }

    pub fn single(gamma: f64, weight: f64) -> Self {
        Self::new(vec![PowerTerm { weight, gamma }], 0.0, 0.0).expect("valid single term")
    }

    /// `x ln x`
    pub fn entropy() -> Self {
        Self::single(-1.0, 1.0)
    }

    /// `-ln x`
    pub fn reverse_entropy() -> Self {
        Self::single(-2.0, 1.0)
    }

    /// `x²`
    pub fn quadratic() -> Self {
        Self::single(0.0, 1.0)
    }

    pub fn power(gamma: f64) -> Self {
        Self::single(gamma, 1.0)
    }

    /// `x²/2 + x ln x − x`
    pub fn worked_example() -> Self {
        Self::new(
            vec![
                PowerTerm {
                    weight: 0.5,
                    gamma: 0.0,
                },
                PowerTerm {
                    weight: 1.0,
                    gamma: -1.0,
                },
            ],
            -1.0,
            0.0,
        )
        .expect("valid spec")
    }

    pub fn terms(&self) -> &[PowerTerm] {
        &self.terms
    }

    pub fn linear(&self) -> f64 {
        self.linear
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// Open interval `(f'(0+), f'(∞))`.
    pub fn prime_range(&self) -> (f64, f64) {
        self.range
    }

    pub fn value(&self, x: f64) -> Result<f64> {
        check_positive("f", x)?;
        Ok(self.terms.iter().map(|t| t.value(x)).sum::<f64>() + self.linear * x + self.constant)
    }

    pub fn prime(&self, x: f64) -> Result<f64> {
        check_positive("f'", x)?;
        Ok(self.prime_unchecked(x))
    }

    pub fn second(&self, x: f64) -> Result<f64> {
        check_positive("f''", x)?;
        Ok(self.second_unchecked(x))
    }

    #[inline]
    pub(crate) fn prime_unchecked(&self, x: f64) -> f64 {
        self.terms.iter().map(|t| t.first(x)).sum::<f64>() + self.linear
    }

    #[inline]
    pub(crate) fn second_unchecked(&self, x: f64) -> f64 {
        self.terms.iter().map(|t| t.second(x)).sum()
    }

    /// `(f')⁻¹(u)`: closed form for a single term, safeguarded Newton on a
    /// doubling bracket otherwise.
    pub fn prime_inverse(&self, u: f64) -> Result<f64> {
        let (lo, hi) = self.range;
        if !(u > lo && u < hi) {
            return Err(Error::OutOfRange { value: u, lo, hi });
        }
        if let [t] = self.terms.as_slice() {
            let s = (u - self.linear) / t.weight;
            let g = t.gamma;
            let x = if is_entropy(g) {
                (s - 1.0).exp()
            } else if is_reverse_entropy(g) {
                -1.0 / s
            } else {
                (s / (c_of_gamma(g) * (g + 2.0))).powf(1.0 / (g + 1.0))
            };
            if x >= 0.0 && x.is_finite() {
                // `u` is inside the open range, so `x = 0` is underflow.
                return Ok(x.max(f64::MIN_POSITIVE));
            }
            return Err(Error::OutOfRange { value: u, lo, hi });
        }
        self.invert_numeric(u)
    }

    fn invert_numeric(&self, u: f64) -> Result<f64> {
        let (lo_r, hi_r) = self.range;
        let g = |x: f64| self.prime_unchecked(x) - u;
        let mut a = 1.0;
        let mut b = 1.0;
        while g(a) > 0.0 {
            a *= 0.5;
            if a < 1e-300 {
                return Err(Error::OutOfRange { value: u, lo: lo_r, hi: hi_r });
            }
        }
        while g(b) < 0.0 {
            b *= 2.0;
            if b > 1e300 {
                return Err(Error::OutOfRange { value: u, lo: lo_r, hi: hi_r });
            }
        }
        let tol = 1e-12 * (1.0 + u.abs());
        let mut x = if a == b { a } else { (a * b).sqrt() };
        for _ in 0..200 {
            let gx = g(x);
            if gx.abs() <= tol {
                return Ok(x);
            }
            if gx < 0.0 {
                a = x;
            } else {
                b = x;
            }
            let step = x - gx / self.second_unchecked(x);
            x = if step > a && step < b {
                step
            } else {
                0.5 * (a + b)
            };
            if (b - a) <= 4.0 * f64::EPSILON * b {
                return Ok(x);
            }
        }
        Ok(x)
    }

    /// `(a, γ)` when `f'' = a x^γ`, i.e. for a single term.
    pub fn power_family(&self) -> Option<(f64, f64)> {
        match self.terms.as_slice() {
            [t] => Some((t.weight * a_of_gamma(t.gamma), t.gamma)),
            _ => None,
        }
    }

    /// `(A, B, C)` with `f(u x) = A f(x) + B x + C` for all `x > 0`; `None`
    /// for multi-term specs.
    pub fn affine_scale_decomposition(&self, u: f64) -> Result<Option<(f64, f64, f64)>> {
        check_positive("scale decomposition", u)?;
        let t = match self.terms.as_slice() {
            [t] => *t,
            _ => return Ok(None),
        };
        let (bs, cs) = (self.linear, self.constant);
        let g = t.gamma;
        let out = if is_entropy(g) {
            (u, t.weight * u * u.ln(), cs * (1.0 - u))
        } else if is_reverse_entropy(g) {
            (1.0, bs * (u - 1.0), -t.weight * u.ln())
        } else {
            let a = u.powf(g + 2.0);
            (a, bs * (u - a), cs * (1.0 - a))
        };
        Ok(Some(out))
    }
}

fn check_positive(what: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain { what, value: x })
    }
}

/// Second derivative family
/// `f''(x) = a x^γ + x^γ Σ b_i (ln x)^i + (1/x) Σ b̃_i (ln x)^{i-1}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtendedShapeParams {
    pub gamma: f64,
    pub a: f64,
    pub b: Vec<f64>,
    pub btilde: Vec<f64>,
}

impl ExtendedShapeParams {
    pub fn second_derivative(&self, x: f64) -> Result<f64> {
        check_positive("extended f''", x)?;
        let l = x.ln();
        let xg = x.powf(self.gamma);
        let mut v = self.a * xg;
        for (i, bi) in self.b.iter().enumerate() {
            v += xg * bi * l.powi(i as i32 + 1);
        }
        for (i, bt) in self.btilde.iter().enumerate() {
            v += bt * l.powi(i as i32) / x;
        }
        Ok(v)
    }

    /// True iff `f'' > 0` at every grid point.
    pub fn convexity_scan(&self, grid: &[f64]) -> Result<bool> {
        for &x in grid {
            if !(self.second_derivative(x)? > 0.0) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::E;

    #[test]
    fn values() {
        assert_eq!(DivergenceSpec::entropy().value(1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(DivergenceSpec::reverse_entropy().value(E).unwrap(), -1.0, epsilon = 1e-15);
        assert_eq!(DivergenceSpec::quadratic().value(2.0).unwrap(), 4.0);
    }

    #[test]
    fn gamma_coefficients() {
        assert_eq!(a_of_gamma(0.0), 2.0);
        assert_eq!(a_of_gamma(-3.0), 2.0);
        assert_eq!(a_of_gamma(-1.5), 0.25);
        assert_eq!(c_of_gamma(-1.5), -1.0);
        assert_eq!(c_of_gamma(-3.0), 1.0);
        assert_eq!(c_of_gamma(1.0), 1.0);
    }

    #[test]
    fn derivatives() {
        let e = DivergenceSpec::entropy();
        assert_eq!(e.prime(1.0).unwrap(), 1.0);
        let q = DivergenceSpec::quadratic();
        assert_eq!(q.prime(3.0).unwrap(), 6.0);
        assert_eq!(q.second(5.0).unwrap(), 2.0);
        let w = DivergenceSpec::worked_example();
        assert_abs_diff_eq!(w.prime(2.0).unwrap(), 2.0 + 2f64.ln(), epsilon = 1e-15);
        assert_eq!(w.second(1.0).unwrap(), 2.0);
        assert_abs_diff_eq!(w.value(2.0).unwrap(), 2.0 + 2.0 * 2f64.ln() - 2.0, epsilon = 1e-15);
    }

    #[test]
    fn domain_errors() {
        let e = DivergenceSpec::entropy();
        assert!(matches!(e.value(0.0), Err(Error::Domain { .. })));
        assert!(matches!(e.prime(-1.0), Err(Error::Domain { .. })));
        assert!(matches!(e.second(f64::NAN), Err(Error::Domain { .. })));
    }

    #[test]
    fn inverse() {
        assert_abs_diff_eq!(DivergenceSpec::entropy().prime_inverse(1.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(DivergenceSpec::quadratic().prime_inverse(4.0).unwrap(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            DivergenceSpec::worked_example().prime_inverse(1.0).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn range_errors_report_interval() {
        match DivergenceSpec::quadratic().prime_inverse(-1.0) {
            Err(Error::OutOfRange { lo, hi, .. }) => {
                assert_eq!(lo, 0.0);
                assert_eq!(hi, f64::INFINITY);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(DivergenceSpec::reverse_entropy().prime_range(), (f64::NEG_INFINITY, 0.0));
        assert_eq!(DivergenceSpec::power(-3.0).prime_range(), (f64::NEG_INFINITY, 0.0));
        assert_eq!(DivergenceSpec::power(-1.5).prime_range(), (f64::NEG_INFINITY, 0.0));
        assert!(DivergenceSpec::reverse_entropy().prime_inverse(0.5).is_err());
    }

    #[test]
    fn power_family_detection() {
        assert_eq!(DivergenceSpec::entropy().power_family(), Some((1.0, -1.0)));
        assert_eq!(DivergenceSpec::worked_example().power_family(), None);
        assert_eq!(DivergenceSpec::single(0.0, 3.0).power_family(), Some((6.0, 0.0)));
    }

    #[test]
    fn invalid_specs() {
        assert!(DivergenceSpec::new(vec![], 0.0, 0.0).is_err());
        assert!(DivergenceSpec::new(vec![PowerTerm { weight: -1.0, gamma: 0.0 }], 0.0, 0.0).is_err());
        let dup = vec![PowerTerm { weight: 1.0, gamma: 0.0 }, PowerTerm { weight: 2.0, gamma: 0.0 }];
        assert!(DivergenceSpec::new(dup, 0.0, 0.0).is_err());
    }

    #[test]
    fn extended_family() {
        let p = ExtendedShapeParams { gamma: 0.0, a: 2.0, b: vec![], btilde: vec![] };
        assert_eq!(p.second_derivative(7.0).unwrap(), 2.0);
        let p = ExtendedShapeParams { gamma: 0.0, a: 1.0, b: vec![1.0], btilde: vec![] };
        assert_abs_diff_eq!(p.second_derivative(E).unwrap(), 2.0, epsilon = 1e-15);
        let p = ExtendedShapeParams { gamma: 0.0, a: 1.0, b: vec![-10.0], btilde: vec![] };
        assert!(!p.convexity_scan(&[0.5, 1.0, E]).unwrap());
        assert!(p.convexity_scan(&[1.0]).unwrap());
        let p = ExtendedShapeParams { gamma: -1.0, a: 1.0, b: vec![], btilde: vec![0.5, 0.0] };
        assert_abs_diff_eq!(p.second_derivative(2.0).unwrap(), 0.5 + 0.25, epsilon = 1e-15);
        assert!(p.second_derivative(0.0).is_err());
    }

    #[test]
    fn scale_decomposition_examples() {
        assert_eq!(DivergenceSpec::entropy().affine_scale_decomposition(1.0).unwrap(), Some((1.0, 0.0, 0.0)));
        assert_eq!(DivergenceSpec::quadratic().affine_scale_decomposition(2.0).unwrap(), Some((4.0, 0.0, 0.0)));
        let (a, b, c) = DivergenceSpec::entropy().affine_scale_decomposition(E).unwrap().unwrap();
        assert_abs_diff_eq!(a, E, epsilon = 1e-15);
        assert_abs_diff_eq!(b, E, epsilon = 1e-15);
        assert_eq!(c, 0.0);
        assert_eq!(DivergenceSpec::worked_example().affine_scale_decomposition(2.0).unwrap(), None);
        assert!(DivergenceSpec::entropy().affine_scale_decomposition(0.0).is_err());
    }
}
