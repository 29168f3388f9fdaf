//! Pointwise loss kernels for a single probability `x` assigned to the
//! preferred outcome.
//!
//! | kernel        | value            | d/dx           |
//! |---------------|------------------|----------------|
//! | BCE           | `-ln x`          | `-1/x`         |
//! | MAE           | `1 - x`          | `-1`           |
//! | Box-Cox (`q`) | `(1 - x^q) / q`  | `-x^(q-1)`     |
//!
//! For `q` in `(0, 1]` the Box-Cox kernel sits between the other two:
//! `mae <= box_cox < bce`, equal to MAE at `q = 1` and tending to BCE as
//! `q -> 0`. `q = 0` itself is rejected; call [`bce_point`] instead.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Lower bound applied to probabilities before `ln` or `powf`.
pub const PROB_FLOOR: f64 = 1e-12;

/// A member of the loss family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    Mae,
    BoxCox { q: f64 },
}

impl LossKind {
    /// Builds a Box-Cox kind, checking `q`.
    pub fn box_cox(q: f64) -> Result<Self> {
        check_q(q)?;
        Ok(LossKind::BoxCox { q })
    }

    /// Loss of assigning probability `x` to the labelled outcome.
    pub fn point(&self, x: f64) -> Result<f64> {
        match *self {
            LossKind::Bce => bce_point(x),
            LossKind::Mae => mae_point(x),
            LossKind::BoxCox { q } => box_cox_point(x, q),
        }
    }
}

pub(crate) fn check_q(q: f64) -> Result<()> {
    if q.is_finite() && q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("q must lie in (0, 1], got {q}")))
    }
}

fn check_open_prob(x: f64) -> Result<()> {
    if x > 0.0 && x <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("probability must lie in (0, 1], got {x}")))
    }
}

#[inline]
fn floor_prob(x: f64) -> f64 {
    x.clamp(PROB_FLOOR, 1.0)
}

/// `-ln x` for `x` in `(0, 1]`.
pub fn bce_point(x: f64) -> Result<f64> {
    check_open_prob(x)?;
    Ok(-floor_prob(x).ln())
}

/// `1 - x` for `x` in `[0, 1]`.
pub fn mae_point(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!(
            "probability must lie in [0, 1], got {x}"
        )));
    }
    Ok(1.0 - x)
}

/// Negative Box-Cox transform `(1 - x^q) / q`.
pub fn box_cox_point(x: f64, q: f64) -> Result<f64> {
    check_open_prob(x)?;
    check_q(q)?;
    Ok(box_cox_unchecked(floor_prob(x), q))
}

/// `d/dx` of [`box_cox_point`], i.e. `-x^(q-1)`.
pub fn box_cox_deriv(x: f64, q: f64) -> Result<f64> {
    check_open_prob(x)?;
    check_q(q)?;
    Ok(-floor_prob(x).powf(q - 1.0))
}

// `-expm1(q ln x)` keeps full precision when q ln x is tiny, which is where
// the kernel approaches BCE.
#[inline]
pub(crate) fn box_cox_unchecked(x: f64, q: f64) -> f64 {
    -(q * x.ln()).exp_m1() / q
}

/// `L(f, y=1) + L(f, y=0)` over a grid of predictions, using the binary form
/// of each loss. Constant output means the loss is symmetric.
pub fn symmetry_defect(kind: LossKind, grid: &[f64]) -> Result<Vec<f64>> {
    if let LossKind::BoxCox { q } = kind {
        check_q(q)?;
    }
    grid.iter()
        .map(|&f| {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Domain(format!(
                    "symmetry grid values must lie in (0, 1), got {f}"
                )));
            }
            let v = match kind {
                // |1 - f| + |0 - f|
                LossKind::Mae => (1.0 - f) + f,
                LossKind::Bce => -(f.ln() + (1.0 - f).ln()),
                LossKind::BoxCox { q } => {
                    box_cox_unchecked(f, q) + box_cox_unchecked(1.0 - f, q)
                }
            };
            Ok(v)
        })
        .collect()
}

/// Logistic sigmoid, evaluated without overflow for large `|z|`.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln sigmoid(z)` without cancellation: `-softplus(-z)`.
#[inline]
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn bce_examples() {
        assert_eq!(bce_point(1.0).unwrap(), 0.0);
        assert!(close(bce_point(0.5).unwrap(), 0.693147, 1e-6));
        assert!(close(bce_point((-1.0f64).exp()).unwrap(), 1.0, 1e-15));
        assert!(bce_point(0.0).is_err());
        assert!(bce_point(1.5).is_err());
        assert!(bce_point(-0.1).is_err());
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae_point(1.0).unwrap(), 0.0);
        assert!(close(mae_point(0.3).unwrap(), 0.7, 1e-15));
        assert_eq!(mae_point(0.0).unwrap(), 1.0);
        assert!(mae_point(-1e-9).is_err());
        assert!(mae_point(1.0 + 1e-9).is_err());
    }

    #[test]
    fn box_cox_examples() {
        assert!(close(box_cox_point(0.3, 1.0).unwrap(), 0.7, 1e-15));
        assert!(close(box_cox_point(0.5, 0.01).unwrap(), 0.690750, 1e-6));
        assert!(close(box_cox_point(0.5, 0.5).unwrap(), 0.585786, 1e-6));
        assert!(box_cox_point(0.5, 0.0).is_err());
        assert!(box_cox_point(0.5, 1.1).is_err());
        assert!(box_cox_point(0.5, f64::NAN).is_err());
        assert!(box_cox_point(0.0, 0.5).is_err());
    }

    #[test]
    fn box_cox_deriv_examples() {
        assert!(close(box_cox_deriv(0.5, 1.0).unwrap(), -1.0, 1e-15));
        assert!(close(box_cox_deriv(0.5, 0.5).unwrap(), -1.414214, 1e-6));
        for q in [0.1, 0.3, 0.77, 1.0] {
            assert_eq!(box_cox_deriv(1.0, q).unwrap(), -1.0);
        }
    }

    #[test]
    fn kind_dispatch() {
        let k = LossKind::box_cox(0.5).unwrap();
        assert_eq!(k.point(0.5).unwrap(), box_cox_point(0.5, 0.5).unwrap());
        assert!(LossKind::box_cox(0.0).is_err());
        assert_eq!(LossKind::Mae.point(0.25).unwrap(), 0.75);
    }

    #[test]
    fn symmetry_examples() {
        let mae = symmetry_defect(LossKind::Mae, &[0.1, 0.5, 0.9]).unwrap();
        assert_eq!(mae, vec![1.0, 1.0, 1.0]);
        let bce = symmetry_defect(LossKind::Bce, &[0.5]).unwrap();
        assert!(close(bce[0], 1.386294, 1e-6));
        let pair = symmetry_defect(LossKind::Bce, &[0.2, 0.5]).unwrap();
        assert!(pair[0] != pair[1]);
        assert!(symmetry_defect(LossKind::Mae, &[0.0]).is_err());
        assert!(symmetry_defect(LossKind::Mae, &[1.0]).is_err());
    }

    #[test]
    fn limit_on_coarse_grid() {
        for i in 1..=19 {
            let x = i as f64 * 0.05;
            let diff = box_cox_point(x, 1e-6).unwrap() - bce_point(x).unwrap();
            assert!(diff.abs() < 1e-4, "x={x} diff={diff}");
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) == 1.0 && sigmoid(-800.0) >= 0.0);
        assert!(close(log_sigmoid(0.0), -std::f64::consts::LN_2, 1e-15));
        assert!(log_sigmoid(-800.0).is_finite());
        assert!(close(log_sigmoid(3.0), sigmoid(3.0).ln(), 1e-15));
    }

    proptest! {
        #[test]
        fn ordering_mae_le_box_cox_lt_bce(x in 0.001f64..0.999, q in 0.001f64..=1.0) {
            let mae = mae_point(x).unwrap();
            let bc = box_cox_point(x, q).unwrap();
            let bce = bce_point(x).unwrap();
            prop_assert!(mae <= bc + 1e-15);
            prop_assert!(bc < bce);
        }

        #[test]
        fn strictly_decreasing_in_q(x in 0.01f64..0.99, q1 in 0.01f64..1.0, dq in 0.01f64..0.5) {
            let q2 = (q1 + dq).min(1.0);
            prop_assume!(q2 > q1);
            prop_assert!(box_cox_point(x, q1).unwrap() > box_cox_point(x, q2).unwrap());
        }

        #[test]
        fn derivative_matches_central_difference(x in 0.05f64..0.95, q in 0.01f64..=1.0) {
            let h = 1e-6;
            let fd = (box_cox_point(x + h, q).unwrap() - box_cox_point(x - h, q).unwrap()) / (2.0 * h);
            let an = box_cox_deriv(x, q).unwrap();
            prop_assert!(((fd - an) / an).abs() < 1e-6, "fd={fd} an={an}");
        }
    }
}
