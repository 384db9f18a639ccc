//! Batched GRU cell:
//!
//! ```text
//! z  = σ(x·W_z + h·U_z + b_z)
//! r  = σ(x·W_r + h·U_r + b_r)
//! ĥ  = tanh(x·W_h + (r ⊙ h)·U_h + b_h)
//! h' = (1 − z) ⊙ h + z ⊙ ĥ
//! ```
//!
//! `W = [W_z | W_r | W_h]` is stored as one `input × 3H` tensor, `U_zr` as
//! `H × 2H`, `U_h` as `H × H` and the three biases as one `1 × 3H` row.

use rand::Rng;

use super::fastmath;
use super::params::{GradStore, ParamId, ParamStore};
use super::tensor::{add_row_bias, gemm, sum_rows_acc, MatMut, MatRef};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub w_x: ParamId,
    pub u_zr: ParamId,
    pub u_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// Gate activations of one batched step: `gates` is `rows × 3H` holding
/// `[z | r | ĥ]`, `h` is the new hidden state.
#[derive(Debug, Clone)]
pub struct GruStep {
    pub rows: usize,
    pub gates: Vec<f64>,
    pub h: Vec<f64>,
}

impl GruCell {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bx = 1.0 / (input.max(1) as f64).sqrt();
        let bh = 1.0 / (hidden.max(1) as f64).sqrt();
        Ok(Self {
            w_x: store.add_uniform(format!("{prefix}.w_x"), input, 3 * hidden, bx, rng)?,
            u_zr: store.add_uniform(format!("{prefix}.u_zr"), hidden, 2 * hidden, bh, rng)?,
            u_h: store.add_uniform(format!("{prefix}.u_h"), hidden, hidden, bh, rng)?,
            b: store.add_uniform(format!("{prefix}.b"), 1, 3 * hidden, bh, rng)?,
            input,
            hidden,
        })
    }

    pub fn forward(&self, params: &ParamStore, x: &[f64], h_prev: &[f64], rows: usize) -> Result<GruStep> {
        let (n_in, hd) = (self.input, self.hidden);
        if x.len() != rows * n_in {
            return Err(Error::shape("gru input", rows * n_in, x.len()));
        }
        if h_prev.len() != rows * hd {
            return Err(Error::shape("gru hidden", rows * hd, h_prev.len()));
        }
        let h3 = 3 * hd;
        let mut gates = vec![0.0; rows * h3];
        gemm(
            MatRef::dense(x, rows, n_in),
            params.get(self.w_x).into(),
            0.0,
            MatMut::dense(&mut gates, rows, h3),
        );
        add_row_bias(&mut gates, params.get(self.b).data());
        gemm(
            MatRef::dense(h_prev, rows, hd),
            params.get(self.u_zr).into(),
            1.0,
            MatMut::dense(&mut gates, rows, h3).cols(0, 2 * hd),
        );
        let mut rh = vec![0.0; rows * hd];
        for i in 0..rows {
            let g = &mut gates[i * h3..(i + 1) * h3];
            let hp = &h_prev[i * hd..(i + 1) * hd];
            let out = &mut rh[i * hd..(i + 1) * hd];
            fastmath::sigmoid_slice(&mut g[..2 * hd]);
            for j in 0..hd {
                out[j] = g[hd + j] * hp[j];
            }
        }
        gemm(
            MatRef::dense(&rh, rows, hd),
            params.get(self.u_h).into(),
            1.0,
            MatMut::dense(&mut gates, rows, h3).cols(2 * hd, h3),
        );
        let mut h = vec![0.0; rows * hd];
        for i in 0..rows {
            let g = &mut gates[i * h3..(i + 1) * h3];
            let hp = &h_prev[i * hd..(i + 1) * hd];
            let out = &mut h[i * hd..(i + 1) * hd];
            fastmath::tanh_slice(&mut g[2 * hd..]);
            for j in 0..hd {
                let (z, c) = (g[j], g[2 * hd + j]);
                out[j] = (1.0 - z) * hp[j] + z * c;
            }
        }
        Ok(GruStep { rows, gates, h })
    }

    /// Accumulates parameter gradients and writes input and previous-state
    /// gradients (`dx`: rows × input, `dh_prev`: rows × H; overwritten).
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        params: &ParamStore,
        x: &[f64],
        h_prev: &[f64],
        step: &GruStep,
        dh: &[f64],
        grads: &mut GradStore,
        dx: &mut [f64],
        dh_prev: &mut [f64],
    ) {
        let rows = step.rows;
        let (n_in, hd) = (self.input, self.hidden);
        let h3 = 3 * hd;
        // dpre = [daz | dar | dah]
        let mut dpre = vec![0.0; rows * h3];
        for i in 0..rows {
            let g = &step.gates[i * h3..(i + 1) * h3];
            let hp = &h_prev[i * hd..(i + 1) * hd];
            let d = &dh[i * hd..(i + 1) * hd];
            let dp = &mut dpre[i * h3..(i + 1) * h3];
            let dhp = &mut dh_prev[i * hd..(i + 1) * hd];
            for j in 0..hd {
                let (z, c) = (g[j], g[2 * hd + j]);
                dp[j] = d[j] * (c - hp[j]) * z * (1.0 - z);
                dp[2 * hd + j] = d[j] * z * (1.0 - c * c);
                dhp[j] = d[j] * (1.0 - z);
            }
        }
        // d(r⊙h) = dah · U_hᵀ
        let mut drh = vec![0.0; rows * hd];
        gemm(
            MatRef::dense(&dpre, rows, h3).cols(2 * hd, h3),
            MatRef::from(params.get(self.u_h)).t(),
            0.0,
            MatMut::dense(&mut drh, rows, hd),
        );
        let mut rh = vec![0.0; rows * hd];
        for i in 0..rows {
            let g = &step.gates[i * h3..(i + 1) * h3];
            let hp = &h_prev[i * hd..(i + 1) * hd];
            let drow = &drh[i * hd..(i + 1) * hd];
            let dp = &mut dpre[i * h3..(i + 1) * h3];
            let dhp = &mut dh_prev[i * hd..(i + 1) * hd];
            let rrow = &mut rh[i * hd..(i + 1) * hd];
            for j in 0..hd {
                let r = g[hd + j];
                rrow[j] = r * hp[j];
                dp[hd + j] = drow[j] * hp[j] * r * (1.0 - r);
                dhp[j] += drow[j] * r;
            }
        }
        // dh_prev += [daz | dar] · U_zrᵀ
        gemm(
            MatRef::dense(&dpre, rows, h3).cols(0, 2 * hd),
            MatRef::from(params.get(self.u_zr)).t(),
            1.0,
            MatMut::dense(dh_prev, rows, hd),
        );
        gemm(
            MatRef::dense(&dpre, rows, h3),
            MatRef::from(params.get(self.w_x)).t(),
            0.0,
            MatMut::dense(dx, rows, n_in),
        );
        gemm(
            MatRef::dense(x, rows, n_in).t(),
            MatRef::dense(&dpre, rows, h3),
            1.0,
            grads.get_mut(self.w_x).into(),
        );
        gemm(
            MatRef::dense(h_prev, rows, hd).t(),
            MatRef::dense(&dpre, rows, h3).cols(0, 2 * hd),
            1.0,
            grads.get_mut(self.u_zr).into(),
        );
        gemm(
            MatRef::dense(&rh, rows, hd).t(),
            MatRef::dense(&dpre, rows, h3).cols(2 * hd, h3),
            1.0,
            grads.get_mut(self.u_h).into(),
        );
        sum_rows_acc(&dpre, h3, grads.get_mut(self.b).data_mut());
    }
}

/// Single-vector GRU update.
pub fn gru_cell(params: &ParamStore, cell: &GruCell, h_prev: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    Ok(cell.forward(params, x, h_prev, 1)?.h)
}
