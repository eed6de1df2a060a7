//! Label-aware bidirectional contrastive loss.
//!
//! For a batch of `n` image and `n` text embeddings with similarities
//! `S[i][j] = dot(image_i, text_j) / tau`, the positives of anchor `i` are all
//! items sharing its target. The image-to-text term is
//!
//! ```text
//! L_i2t = 1/n * sum_i [ -1/|P(i)| * sum_{j in P(i)} log softmax_row(S)[i][j] ]
//! ```
//!
//! the text-to-image term is the same over columns, and the loss is their
//! mean. With all targets distinct it is the symmetric InfoNCE loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod precise;
pub mod train;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    actual: r.len(),
                    context: Some(format!("row {i}")),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self * other^T`, each entry a [`crate::dot`] of two rows.
    pub fn mul_transposed(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols);
        Matrix::from_fn(self.rows, other.rows, |i, j| crate::dot(self.row(i), other.row(j)))
    }
}

/// Paired image and text embeddings with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct UniclBatch {
    image: Matrix,
    text: Matrix,
    targets: Vec<i64>,
    temperature: f64,
}

impl UniclBatch {
    pub fn new(image: Matrix, text: Matrix, targets: Vec<i64>, temperature: f64) -> Result<Self> {
        if image.rows == 0 || image.cols == 0 {
            return Err(Error::invalid("batch needs n >= 1 and d >= 1"));
        }
        if image.rows != text.rows || image.cols != text.cols {
            return Err(Error::invalid(format!(
                "image batch is {}x{}, text batch is {}x{}",
                image.rows, image.cols, text.rows, text.cols
            )));
        }
        if targets.len() != image.rows {
            return Err(Error::invalid(format!(
                "{} targets for {} pairs",
                targets.len(),
                image.rows
            )));
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if image.data.iter().chain(&text.data).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("batch embeddings".into()));
        }
        Ok(UniclBatch {
            image,
            text,
            targets,
            temperature,
        })
    }

    pub fn from_rows(image: &[Vec<f64>], text: &[Vec<f64>], targets: Vec<i64>, temperature: f64) -> Result<Self> {
        UniclBatch::new(Matrix::from_rows(image)?, Matrix::from_rows(text)?, targets, temperature)
    }

    pub fn len(&self) -> usize {
        self.image.rows
    }

    pub fn is_empty(&self) -> bool {
        self.image.rows == 0
    }

    pub fn image(&self) -> &Matrix {
        &self.image
    }

    pub fn text(&self) -> &Matrix {
        &self.text
    }

    pub fn targets(&self) -> &[i64] {
        &self.targets
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub(crate) fn image_mut(&mut self) -> &mut Matrix {
        &mut self.image
    }

    pub(crate) fn text_mut(&mut self) -> &mut Matrix {
        &mut self.text
    }
}

/// `S[i][j] = dot(image_i, text_j) / tau`.
pub fn similarity_matrix(batch: &UniclBatch) -> Matrix {
    let mut s = batch.image.mul_transposed(&batch.text);
    s.data.iter_mut().for_each(|v| *v /= batch.temperature);
    s
}

/// Loss and its exact gradients with respect to both embedding matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub image_grad: Matrix,
    pub text_grad: Matrix,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

struct Forward {
    sim: Matrix,
    row_lse: Vec<f64>,
    col_lse: Vec<f64>,
    positives: Vec<usize>,
    loss: f64,
}

fn forward(batch: &UniclBatch) -> Forward {
    let n = batch.len();
    let sim = similarity_matrix(batch);
    let t = &batch.targets;
    let positives: Vec<usize> = t.iter().map(|a| t.iter().filter(|b| *b == a).count()).collect();
    let row_lse: Vec<f64> = (0..n).map(|i| log_sum_exp(sim.row(i).iter().copied())).collect();
    let col_lse: Vec<f64> = (0..n)
        .map(|j| log_sum_exp((0..n).map(|i| sim.get(i, j))))
        .collect();

    let mut i2t = 0.0;
    let mut t2i = 0.0;
    for a in 0..n {
        let mut row_pos = 0.0;
        let mut col_pos = 0.0;
        for b in (0..n).filter(|&b| t[b] == t[a]) {
            row_pos += sim.get(a, b);
            col_pos += sim.get(b, a);
        }
        let p = positives[a] as f64;
        i2t += row_lse[a] - row_pos / p;
        t2i += col_lse[a] - col_pos / p;
    }
    let loss = (0.5 * (i2t / n as f64 + t2i / n as f64)).max(0.0);
    Forward {
        sim,
        row_lse,
        col_lse,
        positives,
        loss,
    }
}

/// Loss only.
pub fn unicl_loss_value(batch: &UniclBatch) -> f64 {
    forward(batch).loss
}

/// Loss plus analytic gradients.
pub fn unicl_loss(batch: &UniclBatch) -> LossValue {
    let n = batch.len();
    let d = batch.image.cols;
    let f = forward(batch);
    let t = &batch.targets;
    let scale = 0.5 / n as f64;

    // dL/dS: row softmax minus row target distribution, plus the same per column
    let g = Matrix::from_fn(n, n, |i, j| {
        let row_soft = (f.sim.get(i, j) - f.row_lse[i]).exp();
        let col_soft = (f.sim.get(i, j) - f.col_lse[j]).exp();
        let (row_target, col_target) = if t[i] == t[j] {
            (1.0 / f.positives[i] as f64, 1.0 / f.positives[j] as f64)
        } else {
            (0.0, 0.0)
        };
        scale * (row_soft - row_target + col_soft - col_target)
    });

    let inv_tau = 1.0 / batch.temperature;
    let mut image_grad = Matrix::zeros(n, d);
    let mut text_grad = Matrix::zeros(n, d);
    for i in 0..n {
        for j in 0..n {
            let w = g.get(i, j) * inv_tau;
            if w == 0.0 {
                continue;
            }
            let (img_i, txt_j) = (batch.image.row(i), batch.text.row(j));
            for (out, v) in image_grad.row_mut(i).iter_mut().zip(txt_j) {
                *out += w * v;
            }
            for (out, v) in text_grad.row_mut(j).iter_mut().zip(img_i) {
                *out += w * v;
            }
        }
    }
    LossValue {
        loss: f.loss,
        image_grad,
        text_grad,
    }
}

/// Default step for [`finite_diff_check`].
pub const FINITE_DIFF_EPSILON: f64 = 1e-5;

/// Largest relative gap between analytic gradients and central finite
/// differences, with denominator `max(|analytic|, |numeric|, 1e-8)`.
///
/// The loss differences are taken in double-double arithmetic, so the
/// numeric side carries only the `O(eps^2)` truncation error.
pub fn finite_diff_check(batch: &UniclBatch, epsilon: f64) -> f64 {
    let analytic = unicl_loss(batch);
    let mut probe = batch.clone();
    let mut worst: f64 = 0.0;
    for image_side in [true, false] {
        let grads = if image_side { &analytic.image_grad } else { &analytic.text_grad };
        for (idx, &a) in grads.as_slice().iter().enumerate() {
            let mut at = |delta: f64| {
                let m = if image_side { probe.image_mut() } else { probe.text_mut() };
                let original = m.as_slice()[idx];
                m.as_mut_slice()[idx] = original + delta;
                let value = precise::loss(&probe);
                let m = if image_side { probe.image_mut() } else { probe.text_mut() };
                m.as_mut_slice()[idx] = original;
                value
            };
            let numeric = ((at(epsilon) - at(-epsilon)) / precise::Dd::from_f64(2.0 * epsilon)).to_f64();
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}
