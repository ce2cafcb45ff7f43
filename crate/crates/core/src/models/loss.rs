use crate::error::{Error, Result};
use crate::nn::sigmoid;
use crate::tensor::{Scalar, Tensor};

/// Predictions are clamped to `[BCE_CLAMP, 1 − BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

/// Data term of the training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// Sum of squared differences on an unbounded output.
    L2,
    /// Binary cross-entropy on a sigmoid output.
    Bce,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::L2 => "l2",
            LossKind::Bce => "bce",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "l2" => Some(LossKind::L2),
            "bce" => Some(LossKind::Bce),
            _ => None,
        }
    }

    /// Maps decoder output to a frame prediction.
    pub fn head<T: Scalar>(self, logits: &Tensor<T>) -> Tensor<T> {
        match self {
            LossKind::L2 => logits.clone(),
            LossKind::Bce => logits.map(sigmoid),
        }
    }

    /// Summed data loss of `prediction` (the output of [`LossKind::head`])
    /// and its gradient w.r.t. the decoder output.
    pub fn evaluate<T: Scalar>(self, prediction: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
        match self {
            LossKind::L2 => Ok((loss_l2(prediction, target)?, l2_gradient(prediction, target)?)),
            LossKind::Bce => Ok((loss_bce(prediction, target)?, bce_logit_gradient(prediction, target)?)),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

fn check(prediction: &Tensor<impl Scalar>, target: &Tensor<impl Scalar>, what: &str) -> Result<()> {
    if prediction.shape() != target.shape() {
        return Err(Error::shape(what, target.shape(), prediction.shape()));
    }
    Ok(())
}

/// `‖ŷ − y‖²`.
pub fn loss_l2<T: Scalar>(prediction: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    check(prediction, target, "l2 loss")?;
    Ok(prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &y)| {
            let d = to_f64(p) - to_f64(y);
            d * d
        })
        .sum())
}

/// `2(ŷ − y)`.
pub fn l2_gradient<T: Scalar>(prediction: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    check(prediction, target, "l2 gradient")?;
    let two = T::one() + T::one();
    Ok(prediction.zip_map(target, |p, y| two * (p - y)))
}

/// Squared-error data term plus an already weighted smoothness term.
pub fn loss_l2_huber<T: Scalar>(prediction: &Tensor<T>, target: &Tensor<T>, smoothness: f64) -> Result<f64> {
    Ok(loss_l2(prediction, target)? + smoothness)
}

/// `−Σ [y ln p + (1 − y) ln(1 − p)]` with `p` clamped away from 0 and 1.
pub fn loss_bce<T: Scalar>(prediction: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    check(prediction, target, "bce loss")?;
    Ok(prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &y)| {
            let p = to_f64(p).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let y = to_f64(y);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum())
}

/// Gradient of [`loss_bce`] w.r.t. the pre-sigmoid logits: `p − y`.
pub fn bce_logit_gradient<T: Scalar>(prediction: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    check(prediction, target, "bce gradient")?;
    Ok(prediction.zip_map(target, |p, y| p - y))
}

/// Per-pixel mean absolute error.
pub fn mean_abs_error<T: Scalar>(prediction: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    check(prediction, target, "mean absolute error")?;
    let n = prediction.len().max(1) as f64;
    Ok(prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &y)| (to_f64(p) - to_f64(y)).abs())
        .sum::<f64>()
        / n)
}
