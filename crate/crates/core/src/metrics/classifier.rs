use rand::Rng;

use super::{to_f64, MetricsError};
use crate::autodiff::{Graph, Tensor};
use crate::games::{Activation, LabeledDataset, Mlp};
use crate::losses::label_log_prob;
use crate::rng::{self, Stream};
use crate::trainers::{adam_step, AdamConfig, AdamState};
use crate::Scalar;

const WIDTH: usize = 32;
const STEPS: usize = 1500;
const BATCH: usize = 128;
const LR: f64 = 1e-2;

/// Small MLP classifier fitted once to a labelled dataset and then frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenClassifier {
    pub net: Mlp<f64>,
}

impl FrozenClassifier {
    /// Cross-entropy training with Adam on batches drawn from the classifier stream of `seed`.
    pub fn train<T: Scalar>(dataset: &LabeledDataset<T>, seed: u64) -> Result<Self, MetricsError> {
        let mut rng = rng::stream(seed, Stream::Classifier);
        let d = dataset.dim();
        let c = dataset.class_count;
        let mut net = Mlp::new(&[d, WIDTH, WIDTH, c], Activation::LeakyRelu(0.2), false, &mut rng);
        let samples = to_f64(&dataset.samples);
        let cfg = AdamConfig { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 };
        let mut adam = AdamState::new(net.params());
        for _ in 0..STEPS {
            let idx: Vec<usize> = (0..BATCH).map(|_| rng.random_range(0..dataset.len())).collect();
            let x: Vec<f64> = idx.iter().flat_map(|&i| samples.data()[i * d..(i + 1) * d].to_vec()).collect();
            let y: Vec<usize> = idx.iter().map(|&i| dataset.labels[i]).collect();
            let mut g = Graph::first_order();
            let bound = net.bind(&mut g);
            let xv = g.constant(Tensor::new(vec![BATCH, d], x)?);
            let logits = bound.forward(&mut g, xv)?;
            let lp = label_log_prob(&mut g, logits, &y)?;
            let nll = g.mean(lp)?;
            let nll = g.neg(nll)?;
            let grads = g.grad_values(nll, &bound.vars())?.into_tensors();
            for (p, s) in net.params_mut().into_iter().zip(adam_step(&mut adam, &grads, LR, &cfg)) {
                *p = p.sub(&s);
            }
        }
        Ok(Self { net })
    }

    /// Row-wise class posteriors `[n, C]`.
    pub fn probs(&self, samples: &Tensor<f64>) -> Result<Tensor<f64>, MetricsError> {
        let mut g = Graph::first_order();
        let bound = self.net.bind(&mut g);
        let x = g.constant(samples.clone());
        let logits = bound.forward(&mut g, x)?;
        let p = g.softmax(logits)?;
        Ok(g.value(p).clone())
    }

    /// Fraction of dataset samples whose most probable class is their label.
    pub fn accuracy<T: Scalar>(&self, dataset: &LabeledDataset<T>) -> Result<f64, MetricsError> {
        let p = self.probs(&to_f64(&dataset.samples))?;
        let c = dataset.class_count;
        let hits = p
            .data()
            .chunks(c)
            .zip(&dataset.labels)
            .filter(|(row, &l)| row.iter().enumerate().all(|(k, &v)| k == l || v < row[l]))
            .count();
        Ok(hits as f64 / dataset.len() as f64)
    }
}
