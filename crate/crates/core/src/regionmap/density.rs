use crate::error::{Error, Result};
use crate::numkernel::Tensor2D;

/// Mean of `m` over a `window × window` neighbourhood of every cell, with the
/// window clipped at the matrix edges.
pub fn vicinity_density(m: &Tensor2D, window: usize) -> Result<Tensor2D> {
    if window % 2 == 0 {
        return Err(Error::Input(format!("window {window} must be odd")));
    }
    let h = window / 2;
    let (rows, cols) = (m.rows(), m.cols());
    let mut out = Tensor2D::zeros(rows, cols);
    for r in 0..rows {
        let (r0, r1) = (r.saturating_sub(h), (r + h).min(rows - 1));
        for c in 0..cols {
            let (c0, c1) = (c.saturating_sub(h), (c + h).min(cols - 1));
            let mut sum = 0.0;
            for i in r0..=r1 {
                sum += m.row(i)[c0..=c1].iter().sum::<f64>();
            }
            out.set(r, c, sum / ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64);
        }
    }
    Ok(out)
}
