//! Loss, optimizer, the epoch loop with dev-set early stopping, evaluation
//! and prediction.

mod adam;
mod loss;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use loss::{cross_entropy, softmax};

use crate::embeddings::{Coverage, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::model::checkpoint::Checkpoint;
use crate::model::{forward, ModelConfig, ModelParams};
use crate::scalar::Scalar;
use crate::tensor::{Rng, Tensor};
use crate::text::{split_train_dev, Dataset, EncodedBatch, LabeledExample, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without dev improvement tolerated before stopping.
    pub patience: usize,
    pub dev_fraction: f64,
    pub seed: u64,
    pub min_freq: usize,
    pub max_vocab: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 1e-3,
            max_epochs: 50,
            patience: 5,
            dev_fraction: 0.10,
            seed: 0,
            min_freq: 1,
            max_vocab: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return Err(Error::Config(format!(
                "dev_fraction must lie in (0, 1), got {}",
                self.dev_fraction
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Where the embedding matrix comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingInit {
    /// Uniform init bound for random rows.
    pub scale: f64,
    /// Pretrained vectors in word2vec/GloVe text format.
    pub vectors: Option<PathBuf>,
    /// Defaults to `true` for random init and `false` for pretrained vectors.
    pub trainable: Option<bool>,
}

impl Default for EmbeddingInit {
    fn default() -> Self {
        EmbeddingInit {
            scale: 0.1,
            vectors: None,
            trainable: None,
        }
    }
}

impl EmbeddingInit {
    pub fn build<T: Scalar>(
        &self,
        vocab: &Vocabulary,
        d: usize,
        rng: &mut Rng,
    ) -> Result<(EmbeddingMatrix<T>, Option<Coverage>)> {
        let (mut emb, coverage) = match &self.vectors {
            Some(path) => {
                let (emb, cov) = EmbeddingMatrix::load_pretrained(path, vocab, d, rng, self.scale)?;
                (emb, Some(cov))
            }
            None => (EmbeddingMatrix::init_random(vocab.len(), d, rng, self.scale)?, None),
        };
        emb.trainable = self.trainable.unwrap_or(self.vectors.is_none());
        Ok((emb, coverage))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub dev_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_acc: f64,
    pub wall_time: Duration,
    pub coverage: Option<Coverage>,
}

impl TrainReport {
    /// `epoch,train_loss,train_acc,dev_acc` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,dev_acc\n");
        for r in &self.epochs {
            writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.train_acc, r.dev_acc).expect("string write");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Result of [`train`]: the report and the best-dev checkpoint.
///
/// Checkpoint parameters are rounded to `f32` so that saving and reloading
/// reproduces them exactly.
#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Scalar> {
    pub report: TrainReport,
    pub checkpoint: Checkpoint<T>,
}

/// Owns the parameters and optimizer state for mini-batch updates.
pub struct Trainer<T: Scalar> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
    optimizer: Adam<T>,
}

/// Loss and number of correct argmax predictions on one batch.
#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: ModelConfig, params: ModelParams<T>, learning_rate: f64) -> Self {
        Trainer {
            config,
            params,
            optimizer: Adam::new(learning_rate),
        }
    }

    /// Forward in training mode, backward, one Adam update.
    pub fn step(&mut self, batch: &EncodedBatch, rng: &mut Rng) -> Result<StepStats> {
        let mut pass = forward(&self.params, &self.config, batch, true, rng)?;
        let correct = count_correct(pass.logits(), batch.labels());
        let loss = cross_entropy(&mut pass.tape, pass.stages.logits, batch.labels())?;
        let loss_value = pass.tape.value(loss).data()[0].as_f64();
        let mut grads = pass.tape.backward(loss)?;
        let named: HashMap<String, Tensor<T>> = pass
            .params
            .iter()
            .filter_map(|(name, var)| grads.remove(*var).map(|g| (name.clone(), g)))
            .collect();
        self.optimizer.step(&mut self.params, &named)?;
        Ok(StepStats {
            loss: loss_value,
            correct,
        })
    }
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn count_correct<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let classes = logits.shape()[1];
    logits
        .data()
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count()
}

/// Class probabilities (eval mode, no dropout) for every row of `batch`.
pub fn predict_probabilities<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    batch: &EncodedBatch,
) -> Result<Vec<Vec<T>>> {
    let mut rng = Rng::new(0);
    let pass = forward(params, config, batch, false, &mut rng)?;
    Ok(pass.logits().data().chunks(config.num_classes).map(softmax).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Mean cross-entropy.
    pub loss: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

const EVAL_CHUNK: usize = 64;

/// Argmax accuracy with dropout off.
pub fn evaluate<T: Scalar>(params: &ModelParams<T>, config: &ModelConfig, data: &EncodedBatch) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let classes = config.num_classes;
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut loss = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let batch = select(data, chunk);
        let probs = predict_probabilities(params, config, &batch)?;
        for (p, &y) in probs.iter().zip(batch.labels()) {
            if y >= classes {
                return Err(Error::LabelMismatch(format!(
                    "label {y} out of range for {classes} classes"
                )));
            }
            confusion[y][argmax(p)] += 1;
            loss -= p[y].as_f64().max(f64::MIN_POSITIVE).ln();
        }
    }
    let correct = (0..classes).map(|c| confusion[c][c]).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        correct,
        total: data.len(),
        loss: loss / data.len() as f64,
        confusion,
    })
}

/// Evaluates a checkpoint on a labelled dataset, matching labels by name.
pub fn evaluate_dataset<T: Scalar>(checkpoint: &Checkpoint<T>, data: &Dataset) -> Result<Evaluation> {
    let examples = data.remap(&checkpoint.labels)?;
    let refs: Vec<&LabeledExample> = examples.iter().collect();
    let batch = EncodedBatch::encode(&refs, &checkpoint.vocab, checkpoint.config.n_max);
    evaluate(&checkpoint.params, &checkpoint.config, &batch)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T: Scalar> {
    pub class: usize,
    pub label: String,
    pub probabilities: Vec<T>,
}

/// Classifies one sentence. Ties go to the lowest class id.
pub fn predict<T: Scalar>(checkpoint: &Checkpoint<T>, text: &str) -> Result<Prediction<T>> {
    let example = LabeledExample {
        text: text.to_string(),
        label: 0,
    };
    let batch = EncodedBatch::encode(&[&example], &checkpoint.vocab, checkpoint.config.n_max);
    let probabilities = predict_probabilities(&checkpoint.params, &checkpoint.config, &batch)?
        .pop()
        .expect("one row");
    let class = argmax(&probabilities);
    Ok(Prediction {
        class,
        label: checkpoint.labels[class].clone(),
        probabilities,
    })
}

fn select(data: &EncodedBatch, rows: &[usize]) -> EncodedBatch {
    let mut ids = Vec::with_capacity(rows.len() * data.n_max());
    let mut labels = Vec::with_capacity(rows.len());
    for &r in rows {
        ids.extend_from_slice(data.row(r));
        labels.push(data.labels()[r]);
    }
    EncodedBatch::new(ids, labels, data.n_max()).expect("rows have n_max entries")
}

// RNG stream ids under the run seed.
const STREAM_SPLIT: u64 = 0;
const STREAM_INIT: u64 = 1;
fn stream_shuffle(epoch: usize) -> u64 {
    2 * epoch as u64
}
fn stream_dropout(epoch: usize) -> u64 {
    2 * epoch as u64 + 1
}

/// Trains on `data` with a seeded dev split and dev-accuracy early stopping.
///
/// `model.num_classes` is taken from the dataset. An epoch improves when dev
/// accuracy rises, or stays equal while dev loss falls; the best epoch's
/// parameters are returned. Training stops after `patience` consecutive
/// epochs without improvement or at `max_epochs`.
pub fn train<T: Scalar>(
    model: &ModelConfig,
    cfg: &TrainConfig,
    data: &Dataset,
    embeddings: &EmbeddingInit,
) -> Result<TrainOutcome<T>> {
    let started = Instant::now();
    cfg.validate()?;
    let config = ModelConfig {
        num_classes: data.num_classes(),
        ..model.clone()
    };
    config.validate()?;

    let (train_set, dev_set) = split_train_dev(
        &data.examples,
        cfg.dev_fraction,
        &mut Rng::stream(cfg.seed, STREAM_SPLIT),
    )?;
    let vocab = Vocabulary::build(&train_set, cfg.min_freq, cfg.max_vocab)?;
    let encode = |set: &[LabeledExample]| {
        let refs: Vec<&LabeledExample> = set.iter().collect();
        EncodedBatch::encode(&refs, &vocab, config.n_max)
    };
    let (train_batch, dev_batch) = (encode(&train_set), encode(&dev_set));

    let mut init_rng = Rng::stream(cfg.seed, STREAM_INIT);
    let (embedding, coverage) = embeddings.build(&vocab, config.d, &mut init_rng)?;
    let params = ModelParams::with_embedding(&config, embedding, &mut init_rng)?;
    let mut trainer = Trainer::new(config.clone(), params, cfg.learning_rate);

    let snapshot = |p: &ModelParams<T>| p.cast::<f32>().cast::<T>();
    let mut best = snapshot(&trainer.params);
    let mut best_key = (f64::NEG_INFINITY, f64::INFINITY);
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut epochs = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let order = Rng::stream(cfg.seed, stream_shuffle(epoch)).permutation(train_batch.len());
        let mut dropout_rng = Rng::stream(cfg.seed, stream_dropout(epoch));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = select(&train_batch, chunk);
            let stats = trainer.step(&batch, &mut dropout_rng)?;
            loss_sum += stats.loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_batch.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        let train_eval = evaluate(&trainer.params, &config, &train_batch)?;
        let dev_eval = evaluate(&trainer.params, &config, &dev_batch)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            train_acc: train_eval.accuracy,
            dev_acc: dev_eval.accuracy,
        });

        let improved =
            dev_eval.accuracy > best_key.0 || (dev_eval.accuracy == best_key.0 && dev_eval.loss < best_key.1);
        if improved {
            best_key = (dev_eval.accuracy, dev_eval.loss);
            best = snapshot(&trainer.params);
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        report: TrainReport {
            epochs,
            best_epoch,
            best_dev_acc: best_key.0,
            wall_time: started.elapsed(),
            coverage,
        },
        checkpoint: Checkpoint {
            config,
            labels: data.labels.clone(),
            vocab,
            params: best,
        },
    })
}
