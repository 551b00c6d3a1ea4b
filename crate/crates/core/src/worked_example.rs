//! Two-asset model driven by one Brownian motion and one Poisson process,
//! with `f(x) = x²/2 + x ln x − x`, which is not of the form `f'' = a x^γ`
//! but still has a Lévy-preserving minimal measure.
//!
//! The model is `c = [[1, 1], [1, 1]]` (singular), a unit-mass atom at
//! `a = (ln 2, ln 3)` and drift `b = (ln 2, ln 3 − 1)` under zero truncation,
//! for which the drift condition reads
//!
//! ```text
//! ln 2 + 1/2 + β₁ + β₂ + Y(a) = 0
//! ln 3 − 1/2 + β₁ + β₂ + 2Y(a) = 0
//! ```

use serde::Serialize;

use crate::divergence::DivergenceSpec;
use crate::levy_model::{Atom, LevyMeasure, LevyTriplet, TruncationRule};

pub fn triplet() -> LevyTriplet {
    let (ln2, ln3) = (2f64.ln(), 3f64.ln());
    LevyTriplet::new(
        vec![ln2, ln3 - 1.0],
        vec![1.0, 1.0, 1.0, 1.0],
        LevyMeasure::FiniteAtomic(vec![Atom::new(vec![ln2, ln3], 1.0)]),
        TruncationRule::Zero,
    )
    .expect("valid built-in model")
}

pub fn spec() -> DivergenceSpec {
    DivergenceSpec::worked_example()
}

/// Closed-form Girsanov parameters of the minimal measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosedForms {
    pub beta1: f64,
    pub beta2: f64,
    pub y_a: f64,
    pub v1: f64,
}

pub fn closed_forms() -> ClosedForms {
    let (ln2, ln3, ln32) = (2f64.ln(), 3f64.ln(), 1.5f64.ln());
    ClosedForms {
        beta1: 3.0 * ln3 - 5.0 * ln2 - 3.0,
        beta2: 1.5 + 3.0 * ln2 - 2.0 * ln3,
        y_a: 1.0 - ln32,
        v1: -(1.0 - ln32).ln() - ln32,
    }
}
