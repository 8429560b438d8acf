use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Classifier, ToyDataset};
use crate::attacks::{pgd_untargeted, PgdConfig};
use crate::autodiff::{Graph, Tensor};
use crate::error::{invalid, shape_err, Error, Result};
use crate::optim::Adam;
use crate::seeding::{derive_seed, rng_from};

/// Normal training, or min-max training against PGD examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum TrainMode {
    Normal,
    Adversarial(PgdConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            learning_rate: 2e-3,
            seed: 0,
        }
    }
}

/// Clean-data losses before and after training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs: usize,
}

/// Mean cross-entropy on clean images.
pub fn mean_loss(classifier: &Classifier, data: &ToyDataset) -> Result<f64> {
    let mut total = 0.0;
    for (x, &y) in data.images.iter().zip(&data.labels) {
        let mut g = Graph::new();
        let xi = g.constant(x.clone());
        let (out, _) = classifier.build_graph(&mut g, xi, false)?;
        let l = g.softmax_cross_entropy(out, y)?;
        total += g.value(l).data()[0];
    }
    Ok(total / data.len() as f64)
}

/// Fraction of images whose prediction equals the label.
pub fn accuracy(classifier: &Classifier, data: &ToyDataset) -> Result<f64> {
    let mut hits = 0;
    for (x, &y) in data.images.iter().zip(&data.labels) {
        hits += (classifier.predict(x)? == y) as usize;
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Accuracy on PGD examples, one per image.
pub fn robust_accuracy(
    classifier: &Classifier,
    data: &ToyDataset,
    pgd: &PgdConfig,
    seed: u64,
) -> Result<f64> {
    let mut rng = rng_from(seed);
    let mut hits = 0;
    for (x, &y) in data.images.iter().zip(&data.labels) {
        let adv = pgd_untargeted(classifier, x, y, pgd, &mut rng)?;
        hits += (classifier.predict(&adv)? == y) as usize;
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Trains a copy of `classifier` with Adam on mini-batches.
///
/// Shuffling and PGD draw from separate seeded streams, so adversarial
/// training with `eps = 0` reproduces normal training bit for bit.
pub fn train(
    classifier: &Classifier,
    data: &ToyDataset,
    mode: &TrainMode,
    config: &TrainConfig,
) -> Result<(Classifier, TrainReport)> {
    if data.is_empty() {
        return Err(invalid("training set is empty"));
    }
    if config.batch_size == 0 {
        return Err(invalid("batch size must be positive"));
    }
    let dims = classifier.input_shape().dims();
    if let Some(x) = data.images.iter().find(|x| x.shape() != dims) {
        return Err(shape_err("train", format!("image {:?}, classifier {:?}", x.shape(), dims)));
    }
    let mut model = classifier.clone();
    let initial_loss = mean_loss(&model, data)?;
    if !initial_loss.is_finite() {
        return Err(Error::Diverged { epoch: 0 });
    }
    let sizes: Vec<usize> = model.params().iter().map(|t| t.numel()).collect();
    let mut opt = Adam::new(config.learning_rate, &sizes);
    let mut order_rng = rng_from(derive_seed(config.seed, &[0]));
    let mut adv_rng = rng_from(derive_seed(config.seed, &[1]));
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut order_rng);
        for batch in order.chunks(config.batch_size) {
            let mut acc: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
            for &i in batch {
                let x = match mode {
                    TrainMode::Normal => data.images[i].clone(),
                    TrainMode::Adversarial(pgd) => {
                        pgd_untargeted(&model, &data.images[i], data.labels[i], pgd, &mut adv_rng)?
                    }
                };
                let mut g = Graph::new();
                let xi = g.constant(x);
                let (out, ids) = model.build_graph(&mut g, xi, true)?;
                let loss = g.softmax_cross_entropy(out, data.labels[i])?;
                if !g.value(loss).data()[0].is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                let grads = g.backward(loss)?;
                for (a, id) in acc.iter_mut().zip(&ids) {
                    let gt = grads.get_or_zeros(*id);
                    for (s, v) in a.iter_mut().zip(gt.data()) {
                        *s += v;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for a in &mut acc {
                a.iter_mut().for_each(|v| *v *= scale);
            }
            let mut params = model.params_mut();
            let mut bufs: Vec<&mut [f64]> = params.iter_mut().map(|t| t.data_mut()).collect();
            let grads: Vec<&[f64]> = acc.iter().map(|a| a.as_slice()).collect();
            opt.update(&mut bufs, &grads);
        }
        if model.params().iter().any(|t: &&Tensor| !t.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
    }
    let final_loss = mean_loss(&model, data)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged { epoch: config.epochs });
    }
    Ok((
        model,
        TrainReport {
            initial_loss,
            final_loss,
            epochs: config.epochs,
        },
    ))
}
