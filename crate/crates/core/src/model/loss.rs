use super::config::LossKind;
use crate::numerics::ops::{sigmoid_scalar, softplus};
use crate::numerics::Real;

/// `-log sigmoid(y_pos - y_neg)`, evaluated as `softplus(y_neg - y_pos)`.
pub fn bpr_loss<T: Real>(y_pos: T, y_neg: T) -> T {
    softplus(y_neg - y_pos)
}

/// Derivatives of [`bpr_loss`] with respect to `(y_pos, y_neg)`.
pub fn bpr_loss_grad<T: Real>(y_pos: T, y_neg: T) -> (T, T) {
    let g = sigmoid_scalar(y_neg - y_pos);
    (-g, g)
}

/// Binary cross-entropy with target 1 for the positive and 0 for the
/// negative: `softplus(-y_pos) + softplus(y_neg)`.
pub fn bce_loss<T: Real>(y_pos: T, y_neg: T) -> T {
    softplus(-y_pos) + softplus(y_neg)
}

pub fn bce_loss_grad<T: Real>(y_pos: T, y_neg: T) -> (T, T) {
    (-sigmoid_scalar(-y_pos), sigmoid_scalar(y_neg))
}

/// Loss and its gradient for one positive/negative score pair.
pub fn pair_loss<T: Real>(kind: LossKind, y_pos: T, y_neg: T) -> (T, T, T) {
    match kind {
        LossKind::Bpr => {
            let (gp, gn) = bpr_loss_grad(y_pos, y_neg);
            (bpr_loss(y_pos, y_neg), gp, gn)
        }
        LossKind::Bce => {
            let (gp, gn) = bce_loss_grad(y_pos, y_neg);
            (bce_loss(y_pos, y_neg), gp, gn)
        }
    }
}
