//! Imputation error and energy diagnostics.

use glpn_core::missing::ScalingRecord;
use glpn_core::{DenseMatrix, Error, Result, SpectralCache};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Errors {
    pub rmse: f64,
    pub mae: f64,
}

/// RMSE and MAE over the missing entries (`mask == 0`), after mapping the
/// scaled prediction `x_hat` back through `record`. `x_true` is in original
/// units.
pub fn evaluate(x_hat: &DenseMatrix, x_true: &DenseMatrix, mask: &DenseMatrix, record: &ScalingRecord) -> Result<Errors> {
    if x_hat.shape() != x_true.shape() || mask.shape() != x_true.shape() {
        return Err(Error::Dimension {
            op: "evaluate",
            left: x_true.shape(),
            right: x_hat.shape(),
        });
    }
    let pred = record.unscale(x_hat)?;
    let (mut sq, mut abs, mut count) = (0.0, 0.0, 0usize);
    for ((&p, &t), &m) in pred.data().iter().zip(x_true.data()).zip(mask.data()) {
        if m == 0.0 {
            let e = p - t;
            sq += e * e;
            abs += e.abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(Errors {
        rmse: (sq / count as f64).sqrt(),
        mae: abs / count as f64,
    })
}

/// `(E(X̂) − E(X)) / E(X)`; negative values mean energy was lost.
pub fn relative_energy_gap(x_hat: &DenseMatrix, x: &DenseMatrix, cache: &SpectralCache) -> Result<f64> {
    glpn_core::energy::relative_energy_gap(x_hat, x, cache)
}
