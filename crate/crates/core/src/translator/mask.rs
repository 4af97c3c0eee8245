use crate::data::layout::MaskLayout;
use crate::error::{ensure, Result};
use crate::tensor::Matrix;

/// Row-wise softmax of `[pixels, 2]` logits: `(non-hand, hand)` probabilities.
pub fn mask_probabilities(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
        for x in row.iter_mut() {
            *x = (*x - max).exp() / sum;
        }
    }
    out
}

/// Mean per-pixel cross-entropy of raster-order `[H * W, 2]` logits against a mask.
pub fn mask_ce_loss(logits: &Matrix, gt: &MaskLayout) -> Result<f64> {
    let n = gt.height() * gt.width();
    ensure!(
        logits.shape() == (n, 2),
        InvalidInput,
        "logits {:?} do not match a {}x{} mask",
        logits.shape(),
        gt.height(),
        gt.width()
    );
    let mut total = 0.0;
    for (r, &label) in gt.data().iter().enumerate() {
        let row = logits.row(r);
        let max = row[0].max(row[1]);
        let lse = max + ((row[0] - max).exp() + (row[1] - max).exp()).ln();
        total += lse - row[usize::from(label)];
    }
    Ok(total / n as f64)
}
