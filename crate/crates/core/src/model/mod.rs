//! The SECNN network: parallel depthwise convolution branches, channel
//! stacking, squeeze-and-excitation re-weighting, piecewise max-pooling,
//! dropout and a dense classifier.

pub mod checkpoint;
pub mod layers;

use serde::{Deserialize, Serialize};

pub use layers::Padding;

use crate::embeddings::{lookup, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Rng, Tape, Tensor, Var};
use crate::text::EncodedBatch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
}

/// Network hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Sentence length after padding/truncation.
    pub n_max: usize,
    /// Embedding width; also the feature-map width `W`.
    pub d: usize,
    /// One entry per convolution branch.
    pub filter_sizes: Vec<usize>,
    pub maps_per_branch: usize,
    pub padding: Padding,
    /// Increasing ratio of the excitation hidden layer (`M·r` units).
    pub r: usize,
    pub pieces: usize,
    pub dropout_rate: f64,
    pub num_classes: usize,
    pub conv_activation: Activation,
}

impl Default for ModelConfig {
    /// Desk-scale setup: 3 branches of 8 width-3 maps, `r = 4`, 3 pieces.
    fn default() -> Self {
        ModelConfig {
            n_max: 50,
            d: 50,
            filter_sizes: vec![3, 3, 3],
            maps_per_branch: 8,
            padding: Padding::Valid,
            r: 4,
            pieces: 3,
            dropout_rate: 0.5,
            num_classes: 2,
            conv_activation: Activation::Identity,
        }
    }
}

impl ModelConfig {
    /// Full-size setup: 3 branches × 128 maps of width 3, `r = 16`,
    /// 3 pieces, dropout 0.5, 300-d embeddings.
    pub fn full_size(n_max: usize, num_classes: usize) -> Self {
        ModelConfig {
            n_max,
            d: 300,
            maps_per_branch: 128,
            r: 16,
            num_classes,
            ..Self::default()
        }
    }

    /// Mixed-width variant: widths 3, 4 and 5 with same padding.
    pub fn mixed_widths(self) -> Self {
        ModelConfig {
            filter_sizes: vec![3, 4, 5],
            padding: Padding::Same,
            ..self
        }
    }

    /// Small network used by the gradient check.
    pub fn gradcheck() -> Self {
        ModelConfig {
            n_max: 7,
            d: 4,
            filter_sizes: vec![2, 3],
            maps_per_branch: 2,
            padding: Padding::Same,
            r: 2,
            pieces: 2,
            dropout_rate: 0.0,
            num_classes: 2,
            conv_activation: Activation::Identity,
        }
    }

    /// Total stacked channels `M`.
    pub fn channels(&self) -> usize {
        self.filter_sizes.len() * self.maps_per_branch
    }

    /// Feature-map height `H` (for valid padding all widths are equal).
    pub fn height(&self) -> usize {
        match self.padding {
            Padding::Same => self.n_max,
            Padding::Valid => self.n_max + 1 - self.filter_sizes.first().copied().unwrap_or(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_max == 0 || self.d == 0 {
            return fail(format!(
                "n_max and d must be positive (n_max={}, d={})",
                self.n_max, self.d
            ));
        }
        if self.filter_sizes.is_empty() || self.filter_sizes.contains(&0) {
            return fail(format!(
                "filter sizes must be non-empty and positive: {:?}",
                self.filter_sizes
            ));
        }
        if self.maps_per_branch == 0 {
            return fail("maps_per_branch must be positive".into());
        }
        if self.padding == Padding::Valid {
            let k = self.filter_sizes[0];
            if self.filter_sizes.iter().any(|&x| x != k) {
                return fail(format!(
                    "valid padding needs equal filter sizes, got {:?} (use same padding)",
                    self.filter_sizes
                ));
            }
            if k > self.n_max {
                return fail(format!("filter size {k} exceeds n_max {}", self.n_max));
            }
        }
        if self.r == 0 {
            return fail("r must be at least 1".into());
        }
        if self.pieces == 0 || self.pieces > self.height() {
            return fail(format!("pieces must lie in 1..={}, got {}", self.height(), self.pieces));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        Ok(())
    }
}

/// Trainable tensors of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Scalar> {
    pub embedding: EmbeddingMatrix<T>,
    /// Per branch, `m_b × k_b × d`.
    pub filters: Vec<Tensor<T>>,
    /// `(M·r) × M`.
    pub se_w1: Tensor<T>,
    /// `M × (M·r)`.
    pub se_w2: Tensor<T>,
    /// `(p·d) × C`.
    pub dense_w: Tensor<T>,
    pub dense_b: Tensor<T>,
}

pub const EMBEDDING: &str = "embedding";
pub const SE_W1: &str = "se.w1";
pub const SE_W2: &str = "se.w2";
pub const DENSE_W: &str = "dense.w";
pub const DENSE_B: &str = "dense.b";

pub fn filter_name(branch: usize) -> String {
    format!("conv{branch}.filters")
}

impl<T: Scalar> ModelParams<T> {
    /// Random parameters with a freshly initialized trainable embedding.
    pub fn init(config: &ModelConfig, vocab_size: usize, embed_scale: f64, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let embedding = EmbeddingMatrix::init_random(vocab_size, config.d, rng, embed_scale)?;
        Self::with_embedding(config, embedding, rng)
    }

    /// Random network weights around a given embedding.
    ///
    /// Filters and dense weights are uniform(−0.1, 0.1); SE weights are
    /// uniform(−1/√M, 1/√M); the dense bias starts at zero.
    pub fn with_embedding(config: &ModelConfig, embedding: EmbeddingMatrix<T>, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if embedding.dim() != config.d {
            return Err(Error::Config(format!(
                "embedding width {} does not match d = {}",
                embedding.dim(),
                config.d
            )));
        }
        let (d, m) = (config.d, config.channels());
        let filters = config
            .filter_sizes
            .iter()
            .map(|&k| Tensor::uniform(&[config.maps_per_branch, k, d], 0.1, rng))
            .collect();
        let se_bound = 1.0 / (m as f64).sqrt();
        let se_w1 = Tensor::uniform(&[m * config.r, m], se_bound, rng);
        let se_w2 = Tensor::uniform(&[m, m * config.r], se_bound, rng);
        let dense_w = Tensor::uniform(&[config.pieces * d, config.num_classes], 0.1, rng);
        let dense_b = Tensor::zeros(&[config.num_classes]);
        Ok(ModelParams {
            embedding,
            filters,
            se_w1,
            se_w2,
            dense_w,
            dense_b,
        })
    }

    /// Tensors in canonical order with their names and trainability.
    pub fn named(&self) -> Vec<(String, &Tensor<T>, bool)> {
        let mut out = vec![(EMBEDDING.to_string(), &self.embedding.weights, self.embedding.trainable)];
        out.extend(self.filters.iter().enumerate().map(|(i, f)| (filter_name(i), f, true)));
        out.push((SE_W1.into(), &self.se_w1, true));
        out.push((SE_W2.into(), &self.se_w2, true));
        out.push((DENSE_W.into(), &self.dense_w, true));
        out.push((DENSE_B.into(), &self.dense_b, true));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>, bool)> {
        let trainable = self.embedding.trainable;
        let mut out = vec![(EMBEDDING.to_string(), &mut self.embedding.weights, trainable)];
        out.extend(
            self.filters
                .iter_mut()
                .enumerate()
                .map(|(i, f)| (filter_name(i), f, true)),
        );
        out.push((SE_W1.into(), &mut self.se_w1, true));
        out.push((SE_W2.into(), &mut self.se_w2, true));
        out.push((DENSE_W.into(), &mut self.dense_w, true));
        out.push((DENSE_B.into(), &mut self.dense_b, true));
        out
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.named_mut()
            .into_iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, t, _)| t)
    }

    pub fn num_parameters(&self) -> usize {
        self.named().iter().map(|(_, t, _)| t.numel()).sum()
    }

    /// Expected tensor shapes for `config` and a vocabulary of `vocab_size`.
    pub fn expected_shapes(config: &ModelConfig, vocab_size: usize) -> Vec<(String, Vec<usize>)> {
        let (d, m) = (config.d, config.channels());
        let mut out = vec![(EMBEDDING.to_string(), vec![vocab_size, d])];
        for (i, &k) in config.filter_sizes.iter().enumerate() {
            out.push((filter_name(i), vec![config.maps_per_branch, k, d]));
        }
        out.push((SE_W1.into(), vec![m * config.r, m]));
        out.push((SE_W2.into(), vec![m, m * config.r]));
        out.push((DENSE_W.into(), vec![config.pieces * d, config.num_classes]));
        out.push((DENSE_B.into(), vec![config.num_classes]));
        out
    }

    /// Element-type conversion (e.g. to the `f32` checkpoint precision).
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            embedding: EmbeddingMatrix {
                weights: self.embedding.weights.cast(),
                trainable: self.embedding.trainable,
            },
            filters: self.filters.iter().map(Tensor::cast).collect(),
            se_w1: self.se_w1.cast(),
            se_w2: self.se_w2.cast(),
            dense_w: self.dense_w.cast(),
            dense_b: self.dense_b.cast(),
        }
    }
}

/// Intermediate values of one forward pass, in execution order.
#[derive(Clone, Debug)]
pub struct Stages {
    /// `B × n × d`
    pub embedded: Var,
    /// Per branch, `B × H × W × m_b`.
    pub branches: Vec<Var>,
    /// `C`: `B × H × W × M`
    pub stacked: Var,
    /// `z`: `B × M`
    pub squeezed: Var,
    /// `s`: `B × M`
    pub excited: Var,
    /// `C̃`: `B × H × W × M`
    pub scaled: Var,
    /// `Ĉ`: `B × H × W`
    pub summed: Var,
    /// `B × p × W`
    pub pooled: Var,
    /// `B × (p·W)`
    pub flattened: Var,
    pub dropped: Var,
    /// `B × C`
    pub logits: Var,
}

/// A recorded forward pass: the tape, parameter handles and stage outputs.
pub struct ForwardPass<T: Scalar> {
    pub tape: Tape<T>,
    /// Parameter name → tape handle, in [`ModelParams::named`] order.
    pub params: Vec<(String, Var)>,
    pub stages: Stages,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn logits(&self) -> &Tensor<T> {
        self.tape.value(self.stages.logits)
    }
}

/// Runs the network on a batch, recording every op on a fresh tape.
///
/// `rng` is only consumed by dropout in training mode.
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    batch: &EncodedBatch,
    training: bool,
    rng: &mut Rng,
) -> Result<ForwardPass<T>> {
    config.validate()?;
    if batch.n_max() != config.n_max {
        return Err(Error::InvalidArgument(format!(
            "batch rows have length {}, model expects {}",
            batch.n_max(),
            config.n_max
        )));
    }
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut tape = Tape::new();
    let handles: Vec<(String, Var)> = params
        .named()
        .into_iter()
        .map(|(name, t, trainable)| (name, tape.leaf(t.clone().with_grad(trainable))))
        .collect();
    let var = |name: &str| {
        handles
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .expect("known parameter")
    };

    let embedded = lookup(&mut tape, var(EMBEDDING), batch)?;
    let mut branches = Vec::with_capacity(config.filter_sizes.len());
    for i in 0..config.filter_sizes.len() {
        let mut maps = layers::conv1d(&mut tape, embedded, var(&filter_name(i)), config.padding)?;
        if config.conv_activation == Activation::Relu {
            maps = tape.relu(maps)?;
        }
        branches.push(maps);
    }
    let stacked = layers::concat_channels(&mut tape, &branches)?;
    let squeezed = layers::se_squeeze(&mut tape, stacked)?;
    let excited = layers::se_excite(&mut tape, squeezed, var(SE_W1), var(SE_W2))?;
    let scaled = layers::se_scale(&mut tape, stacked, excited)?;
    let summed = layers::se_sum(&mut tape, scaled)?;
    let pooled = layers::piecewise_maxpool(&mut tape, summed, config.pieces)?;
    let flattened = tape.reshape(pooled, &[batch.len(), config.pieces * config.d])?;
    let dropped = layers::dropout(&mut tape, flattened, config.dropout_rate, training, rng)?;
    let logits = layers::dense(&mut tape, dropped, var(DENSE_W), var(DENSE_B))?;

    Ok(ForwardPass {
        tape,
        params: handles,
        stages: Stages {
            embedded,
            branches,
            stacked,
            squeezed,
            excited,
            scaled,
            summed,
            pooled,
            flattened,
            dropped,
            logits,
        },
    })
}
