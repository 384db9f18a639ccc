use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Tensor2::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// First `r` rows, contiguous.
    pub fn top_rows(&self, r: usize) -> &[f64] {
        &self.data[..r * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

/// Borrowed strided matrix view.
#[derive(Debug, Clone, Copy)]
pub struct MatRef<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> MatRef<'a> {
    pub fn dense(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols, 1)
    }

    pub fn strided(data: &'a [f64], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        if rows > 0 && cols > 0 {
            assert!(
                (rows - 1) * rs + (cols - 1) * cs < data.len(),
                "matrix view {rows}x{cols} (rs {rs}, cs {cs}) exceeds buffer of {}",
                data.len()
            );
        }
        Self { data, rows, cols, rs, cs }
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    /// Columns `c0..c1`.
    pub fn cols(self, c0: usize, c1: usize) -> Self {
        let data = if self.rows == 0 || c1 == c0 { &self.data[..0] } else { &self.data[c0 * self.cs..] };
        Self::strided(data, self.rows, c1 - c0, self.rs, self.cs)
    }

    /// Rows `r0..r1`.
    pub fn rows(self, r0: usize, r1: usize) -> Self {
        let data = if self.cols == 0 || r1 == r0 { &self.data[..0] } else { &self.data[r0 * self.rs..] };
        Self::strided(data, r1 - r0, self.cols, self.rs, self.cs)
    }
}

impl<'a> From<&'a Tensor2> for MatRef<'a> {
    fn from(t: &'a Tensor2) -> Self {
        MatRef::dense(&t.data, t.rows, t.cols)
    }
}

/// Mutable strided matrix view.
#[derive(Debug)]
pub struct MatMut<'a> {
    data: &'a mut [f64],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> MatMut<'a> {
    pub fn dense(data: &'a mut [f64], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols, 1)
    }

    pub fn strided(data: &'a mut [f64], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        if rows > 0 && cols > 0 {
            assert!(
                (rows - 1) * rs + (cols - 1) * cs < data.len(),
                "matrix view {rows}x{cols} (rs {rs}, cs {cs}) exceeds buffer of {}",
                data.len()
            );
        }
        Self { data, rows, cols, rs, cs }
    }

    /// Columns `c0..c1`.
    pub fn cols(self, c0: usize, c1: usize) -> Self {
        let (rows, rs, cs) = (self.rows, self.rs, self.cs);
        let data = if rows == 0 || c1 == c0 { &mut self.data[..0] } else { &mut self.data[c0 * cs..] };
        Self::strided(data, rows, c1 - c0, rs, cs)
    }
}

impl<'a> From<&'a mut Tensor2> for MatMut<'a> {
    fn from(t: &'a mut Tensor2) -> Self {
        MatMut::dense(&mut t.data, t.rows, t.cols)
    }
}

/// `c = a · b + beta · c`
pub fn gemm(a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: MatMut<'_>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "gemm output shape");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let x = &mut c.data[i * c.rs + j * c.cs];
                *x *= beta;
            }
        }
        return;
    }
    // SAFETY: every view was bounds-checked against its buffer on construction.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

/// Adds `bias` to every row of `c`.
pub fn add_row_bias(c: &mut [f64], bias: &[f64]) {
    for row in c.chunks_exact_mut(bias.len()) {
        row.iter_mut().zip(bias).for_each(|(x, b)| *x += b);
    }
}

/// `acc[j] += Σ_rows c[row, j]`
pub fn sum_rows_acc(c: &[f64], cols: usize, acc: &mut [f64]) {
    for row in c.chunks_exact(cols) {
        acc.iter_mut().zip(row).for_each(|(a, x)| *a += x);
    }
}
