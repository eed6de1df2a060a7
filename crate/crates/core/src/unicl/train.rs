//! Toy two-tower trainer.
//!
//! Images are samples from a [`ClusterSpec`]; the text side of each pair is
//! the one-hot id of its cluster. Two linear maps project both sides into a
//! shared embedding space and are fitted by plain gradient descent on the
//! contrastive loss over freshly drawn class-stratified batches.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{unicl_loss, unicl_loss_value, Matrix, UniclBatch};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::knn::ClassifierHead;
use crate::synthetic::ClusterSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub embedding_dim: usize,
    /// Pairs drawn from each cluster per batch. Above one, same-cluster
    /// pairs become extra positives and the loss cannot fall below
    /// `ln(samples_per_class)`.
    pub samples_per_class: usize,
    /// Standard deviation of the initial map entries.
    pub init_scale: f64,
    pub weight_decay: f64,
    /// Fixed batches used to measure loss before and after training.
    pub eval_batches: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            learning_rate: 0.05,
            temperature: 0.5,
            embedding_dim: 8,
            samples_per_class: 1,
            init_scale: 0.1,
            weight_decay: 0.0,
            eval_batches: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.embedding_dim == 0 || self.samples_per_class == 0 {
            return Err(Error::invalid(
                "steps, embedding_dim and samples_per_class must be positive",
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::invalid("init scale must be non-negative"));
        }
        Ok(())
    }
}

/// Linear image and text projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoTower {
    /// `embedding_dim x feature_dim`
    pub image_map: Matrix,
    /// `embedding_dim x clusters`
    pub text_map: Matrix,
}

impl TwoTower {
    pub fn embed_image(&self, features: &[f64]) -> Vec<f64> {
        (0..self.image_map.rows())
            .map(|r| crate::dot(self.image_map.row(r), features))
            .collect()
    }

    /// Text embedding of cluster `c`: column `c` of the text map.
    pub fn embed_class(&self, c: usize) -> Vec<f64> {
        (0..self.text_map.rows()).map(|r| self.text_map.get(r, c)).collect()
    }

    /// One anchor per cluster, in cluster order.
    pub fn classifier_head(&self, spec: &ClusterSpec, temperature: f64) -> Result<ClassifierHead> {
        let anchors = (0..spec.clusters).map(|c| self.embed_class(c)).collect();
        ClassifierHead::new(spec.class_names(), anchors, temperature)
    }

    /// Maps every record vector through the image tower, keeping all other
    /// record fields.
    pub fn embed_corpus(&self, corpus: &Corpus) -> Result<Corpus> {
        if corpus.dimension() != self.image_map.cols() {
            return Err(Error::dimension(self.image_map.cols(), corpus.dimension()));
        }
        let records = corpus
            .records()
            .iter()
            .map(|r| {
                let mut out = r.clone();
                out.vector = self.embed_image(&r.vector);
                out
            })
            .collect();
        Corpus::new(corpus.name(), self.image_map.rows(), records)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub model: TwoTower,
    /// Training-batch loss before each update.
    pub trace: Vec<f64>,
    /// Exponential moving average of `trace`, made non-increasing by a
    /// running minimum.
    pub smoothed: Vec<f64>,
    /// Mean loss over the fixed evaluation batches at initialization.
    pub initial_loss: f64,
    /// Same batches after the last step.
    pub final_loss: f64,
}

impl TrainResult {
    pub fn reduction(&self) -> f64 {
        1.0 - self.final_loss / self.initial_loss
    }

    /// `step\tloss\tsmoothed` lines with a header.
    pub fn trace_tsv(&self) -> String {
        let mut out = String::from("step\tloss\tsmoothed\n");
        for (step, (raw, smooth)) in self.trace.iter().zip(&self.smoothed).enumerate() {
            let _ = writeln!(out, "{step}\t{raw:.16e}\t{smooth:.16e}");
        }
        out
    }
}

const SMOOTHING: f64 = 0.1;

pub fn smooth_trace(trace: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(trace.len());
    let mut ema = None;
    let mut floor = f64::INFINITY;
    for &v in trace {
        let next = match ema {
            None => v,
            Some(prev) => prev + SMOOTHING * (v - prev),
        };
        ema = Some(next);
        floor = floor.min(next);
        out.push(floor);
    }
    out
}

struct Sample {
    features: Matrix,
    classes: Vec<usize>,
}

fn draw(spec: &ClusterSpec, per_class: usize, rng: &mut ChaCha8Rng) -> Sample {
    let mut rows = Vec::with_capacity(spec.clusters * per_class);
    let mut classes = Vec::with_capacity(rows.capacity());
    for c in 0..spec.clusters {
        for _ in 0..per_class {
            rows.push(spec.sample(c, rng));
            classes.push(c);
        }
    }
    Sample {
        features: Matrix::from_rows(&rows).expect("uniform rows"),
        classes,
    }
}

fn batch_for(model: &TwoTower, sample: &Sample, temperature: f64) -> Result<UniclBatch> {
    let image = sample.features.mul_transposed(&model.image_map);
    let e = model.text_map.rows();
    let text = Matrix::from_fn(sample.classes.len(), e, |i, r| model.text_map.get(r, sample.classes[i]));
    let targets = sample.classes.iter().map(|&c| c as i64).collect();
    UniclBatch::new(image, text, targets, temperature)
}

/// Trains both towers. Identical inputs give bit-identical results.
pub fn toy_train(spec: &ClusterSpec, config: &TrainConfig) -> Result<TrainResult> {
    spec.validate()?;
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut init = |rows, cols| {
        Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal) * config.init_scale)
    };
    let mut model = TwoTower {
        image_map: init(config.embedding_dim, spec.dimension),
        text_map: init(config.embedding_dim, spec.clusters),
    };

    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_e7a1);
    let eval: Vec<Sample> = (0..config.eval_batches.max(1))
        .map(|_| draw(spec, config.samples_per_class, &mut eval_rng))
        .collect();
    let eval_loss = |model: &TwoTower| -> Result<f64> {
        let mut total = 0.0;
        for s in &eval {
            total += unicl_loss_value(&batch_for(model, s, config.temperature)?);
        }
        Ok(total / eval.len() as f64)
    };
    let initial_loss = eval_loss(&model)?;

    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let sample = draw(spec, config.samples_per_class, &mut rng);
        let batch = batch_for(&model, &sample, config.temperature)?;
        let lv = unicl_loss(&batch);
        if !lv.loss.is_finite() {
            return Err(Error::NonFiniteLoss(step));
        }
        trace.push(lv.loss);

        // image embedding i = image_map * x_i, so dL/dW = sum_i g_i x_i^T
        let mut grad_image = Matrix::zeros(config.embedding_dim, spec.dimension);
        let mut grad_text = Matrix::zeros(config.embedding_dim, spec.clusters);
        for i in 0..batch.len() {
            let x = sample.features.row(i);
            let c = sample.classes[i];
            for r in 0..config.embedding_dim {
                let g = lv.image_grad.get(i, r);
                for (out, xv) in grad_image.row_mut(r).iter_mut().zip(x) {
                    *out += g * xv;
                }
                let cur = grad_text.get(r, c);
                grad_text.set(r, c, cur + lv.text_grad.get(i, r));
            }
        }
        let lr = config.learning_rate;
        let wd = config.weight_decay;
        for (w, g) in model.image_map.as_mut_slice().iter_mut().zip(grad_image.as_slice()) {
            *w -= lr * (g + wd * *w);
        }
        for (w, g) in model.text_map.as_mut_slice().iter_mut().zip(grad_text.as_slice()) {
            *w -= lr * (g + wd * *w);
        }
    }
    let final_loss = eval_loss(&model)?;
    if !final_loss.is_finite() {
        return Err(Error::NonFiniteLoss(config.steps));
    }
    let smoothed = smooth_trace(&trace);
    Ok(TrainResult {
        model,
        trace,
        smoothed,
        initial_loss,
        final_loss,
    })
}
