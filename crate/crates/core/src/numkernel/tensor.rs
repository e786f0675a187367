use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "buffer of {} values cannot form a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Tensor2D) -> Result<()> {
        check_same_shape(self, other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

fn check_same_shape(a: &Tensor2D, b: &Tensor2D) -> Result<()> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(Error::Dimension(format!(
            "shape {}x{} vs {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(())
}

/// `a · b`. The k-loop order is fixed, so every output element is summed in
/// ascending k regardless of vector width.
pub fn matmul(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if a.cols != b.rows {
        return Err(Error::Dimension(format!(
            "matmul {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Tensor2D::zeros(a.rows, b.cols);
    matmul_acc(a, b, &mut out);
    Ok(out)
}

/// `out += a · b` (shapes assumed checked by the caller).
pub(crate) fn matmul_acc(a: &Tensor2D, b: &Tensor2D, out: &mut Tensor2D) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!((out.rows, out.cols), (a.rows, b.cols));
    let n = b.cols;
    for i in 0..a.rows {
        let arow = &a.data[i * a.cols..(i + 1) * a.cols];
        let orow = &mut out.data[i * n..(i + 1) * n];
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * n..(k + 1) * n];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
}

/// `out += aᵀ · b`, summing over the shared leading dimension in ascending order.
pub(crate) fn matmul_at_b_acc(a: &Tensor2D, b: &Tensor2D, out: &mut Tensor2D) {
    debug_assert_eq!(a.rows, b.rows);
    debug_assert_eq!((out.rows, out.cols), (a.cols, b.cols));
    let n = b.cols;
    for t in 0..a.rows {
        let arow = &a.data[t * a.cols..(t + 1) * a.cols];
        let brow = &b.data[t * n..(t + 1) * n];
        for (i, &ati) in arow.iter().enumerate() {
            if ati == 0.0 {
                continue;
            }
            let orow = &mut out.data[i * n..(i + 1) * n];
            for (o, &btj) in orow.iter_mut().zip(brow) {
                *o += ati * btj;
            }
        }
    }
}

/// `a · bᵀ`, computed through an explicit transpose so the inner loop stays contiguous.
pub(crate) fn matmul_a_bt(a: &Tensor2D, b: &Tensor2D) -> Tensor2D {
    debug_assert_eq!(a.cols, b.cols);
    let bt = b.transpose();
    let mut out = Tensor2D::zeros(a.rows, b.rows);
    matmul_acc(a, &bt, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_m_is_m() {
        let m = Tensor2D::from_rows(&[&[1.0, -2.0, 3.5], &[0.0, 4.0, 1.0], &[7.0, 8.0, 9.0]]).unwrap();
        assert_eq!(matmul(&Tensor2D::identity(3), &m).unwrap(), m);
    }

    #[test]
    fn zeros_times_m_is_zero() {
        let m = Tensor2D::from_vec(3, 4, (0..12).map(f64::from).collect()).unwrap();
        let out = matmul(&Tensor2D::zeros(2, 3), &m).unwrap();
        assert_eq!(out, Tensor2D::zeros(2, 4));
    }

    #[test]
    fn hand_worked_product() {
        let a = Tensor2D::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Tensor2D::from_rows(&[&[5.0], &[6.0]]).unwrap();
        let out = matmul(&a, &b).unwrap();
        assert_eq!(out.data(), &[17.0, 39.0]);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let a = Tensor2D::zeros(2, 3);
        let b = Tensor2D::zeros(2, 3);
        assert!(matches!(matmul(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn transposed_products_agree_with_plain_matmul() {
        let a = Tensor2D::from_vec(3, 2, vec![1.0, 2.0, -1.0, 0.5, 3.0, 4.0]).unwrap();
        let b = Tensor2D::from_vec(3, 4, (0..12).map(|x| x as f64 * 0.25).collect()).unwrap();
        let mut atb = Tensor2D::zeros(2, 4);
        matmul_at_b_acc(&a, &b, &mut atb);
        assert_eq!(atb, matmul(&a.transpose(), &b).unwrap());

        let c = Tensor2D::from_vec(4, 2, vec![1.0, 0.0, 2.0, 1.0, -1.0, 3.0, 0.5, 0.5]).unwrap();
        assert_eq!(matmul_a_bt(&a, &c), matmul(&a, &c.transpose()).unwrap());
    }
}
