use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{backward, forward_batch, update_running_stats, Mode};
use super::{predict_batch, ClassifierError, MceConfig, MceParams, TrainConfig};
use crate::matrix::Matrix;
use crate::preprocess::ProcessedWindow;
use crate::scalar::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adaptive-moment optimizer state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub step: u64,
    m: MceParams<T>,
    v: MceParams<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: &MceConfig, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            step: 0,
            m: MceParams::zeros(cfg),
            v: MceParams::zeros(cfg),
        }
    }

    pub fn update(&mut self, params: &mut MceParams<T>, grads: &MceParams<T>) {
        self.step += 1;
        let (b1, b2) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let bc1 = T::lit(1.0 - ADAM_BETA1.powi(self.step as i32));
        let bc2 = T::lit(1.0 - ADAM_BETA2.powi(self.step as i32));
        let lr = T::lit(self.learning_rate);
        let eps = T::lit(ADAM_EPS);
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(ms).zip(vs) {
            let it = p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m.as_mut_slice()).zip(v.as_mut_slice());
            for (((p, &g), m), v) in it {
                *m = b1 * *m + c1 * g;
                *v = b2 * *v + c2 * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            }
        }
        params.version += 1;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Label probabilities clamped inside the log loss.
    pub clamp_warnings: usize,
    /// Epoch at which training diverged; the returned parameters are then
    /// those at the end of the previous epoch.
    pub diverged_at: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub params: MceParams<T>,
    pub history: History,
}

/// Shuffled index batches; a trailing singleton joins the previous batch so
/// batch statistics are never taken over one sample.
fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

fn labels_of<T>(windows: &[ProcessedWindow<T>]) -> Result<Vec<usize>, ClassifierError> {
    windows
        .iter()
        .map(|w| w.label.ok_or(ClassifierError::MissingLabel))
        .collect()
}

pub fn accuracy<T: Scalar>(params: &MceParams<T>, windows: &[ProcessedWindow<T>]) -> Result<f64, ClassifierError> {
    let labels = labels_of(windows)?;
    let preds = predict_batch(params, windows)?;
    let hits = preds.iter().zip(&labels).filter(|(p, &y)| p.class == y).count();
    Ok(hits as f64 / labels.len().max(1) as f64)
}

pub fn train<T: Scalar>(
    train_set: &[ProcessedWindow<T>],
    val_set: Option<&[ProcessedWindow<T>]>,
    cfg: &MceConfig,
    tc: &TrainConfig,
) -> Result<TrainOutcome<T>, ClassifierError> {
    let params = MceParams::init(cfg, tc.seed)?;
    train_from(params, train_set, val_set, tc)
}

/// Continues training from existing parameters.
pub fn train_from<T: Scalar>(
    mut params: MceParams<T>,
    train_set: &[ProcessedWindow<T>],
    val_set: Option<&[ProcessedWindow<T>]>,
    tc: &TrainConfig,
) -> Result<TrainOutcome<T>, ClassifierError> {
    tc.validate()?;
    params.validate()?;
    if train_set.is_empty() {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    let labels = labels_of(train_set)?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= params.config.n_classes) {
        return Err(ClassifierError::InvalidLabel(bad));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x7a11_7a11);
    let mut adam = Adam::new(&params.config, tc.learning_rate);
    let mut history = History::default();
    let mut last_good = params.clone();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    'epochs: for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for batch in batches(&order, tc.batch_size) {
            let inputs: Vec<&Matrix<T>> = batch.iter().map(|&i| &train_set[i].data).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mode = Mode::Train { dropout_seed: rng.random() };
            let step = forward_batch(&params, &inputs, mode).and_then(|out| {
                let cache = out.cache.expect("training mode keeps a cache");
                let bw = backward(&params, &cache, &ys, &tc.class_weights)?;
                Ok((cache, bw))
            });
            let (cache, bw) = match step {
                Ok(s) if s.1.loss.is_finite() && s.1.grads.is_finite() => s,
                Ok(_) | Err(ClassifierError::NonFinite { .. }) => {
                    tracing::warn!(epoch, "training diverged, restoring last good parameters");
                    history.diverged_at = Some(epoch);
                    params = last_good;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            history.clamp_warnings += bw.clamped;
            loss_sum += bw.loss * batch.len() as f64;
            let probs = cache.probs();
            for (r, &y) in ys.iter().enumerate() {
                if argmax(probs.row(r)) == y {
                    hits += 1;
                }
            }
            update_running_stats(&mut params, &cache, tc.bn_momentum);
            adam.update(&mut params, &bw.grads);
        }
        if !params.is_finite() {
            tracing::warn!(epoch, "parameters became non-finite, restoring last good parameters");
            history.diverged_at = Some(epoch);
            params = last_good;
            break;
        }
        let val_accuracy = match val_set {
            Some(v) if !v.is_empty() => Some(accuracy(&params, v)?),
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: hits as f64 / train_set.len() as f64,
            val_accuracy,
        };
        tracing::debug!(
            epoch,
            loss = record.train_loss,
            train_acc = record.train_accuracy,
            val_acc = ?record.val_accuracy,
            "epoch done"
        );
        history.epochs.push(record);
        last_good = params.clone();
    }
    Ok(TrainOutcome { params, history })
}

pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_tail_is_merged() {
        let order: Vec<usize> = (0..17).collect();
        let b = batches(&order, 16);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].len(), 17);
        let b = batches(&order[..1], 16);
        assert_eq!(b, vec![vec![0]]);
        let b = batches(&(0..20).collect::<Vec<_>>(), 8);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [8, 8, 4]);
    }

    #[test]
    fn argmax_takes_first_maximum() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5, 0.2]), 1);
        assert_eq!(argmax(&[3.0f32]), 0);
    }
}
