//! Whole-model gradient check: backprop gradients of the training loss
//! against central finite differences, per parameter tensor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, ModelConfig, ModelParams, EMBEDDING};
use crate::tensor::{relative_error, Rng, Tensor};
use crate::text::{EncodedBatch, PAD};
use crate::training::cross_entropy;

/// Larger models make the finite-difference sweep too slow to be useful.
pub const MAX_GRADCHECK_PARAMS: usize = 5000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckOptions {
    pub vocab_size: usize,
    pub batch: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Test hook: scales the backprop gradient of the named tensor so the
    /// check has something to catch.
    #[serde(skip)]
    pub corrupt: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            vocab_size: 12,
            batch: 2,
            seed: 0,
            step: 1e-5,
            tolerance: 1e-4,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Elements compared. The PAD embedding row is excluded since its
    /// gradient is masked on purpose.
    pub checked: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_error < self.tolerance)
    }

    pub fn worst(&self) -> &TensorCheck {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
            .expect("at least one tensor")
    }
}

/// A batch of sentences with varied lengths using only non-PAD ids.
fn probe_batch(config: &ModelConfig, opts: &GradcheckOptions, rng: &mut Rng) -> Result<EncodedBatch> {
    let n = config.n_max;
    let mut ids = Vec::with_capacity(opts.batch * n);
    let mut labels = Vec::with_capacity(opts.batch);
    for b in 0..opts.batch {
        let len = if b == 0 { n } else { 1 + rng.below(n) };
        ids.extend((0..n).map(|j| {
            if j < len {
                1 + rng.below(opts.vocab_size - 1)
            } else {
                PAD
            }
        }));
        labels.push(b % config.num_classes);
    }
    EncodedBatch::new(ids, labels, n)
}

fn loss_and_grads(
    params: &ModelParams<f64>,
    config: &ModelConfig,
    batch: &EncodedBatch,
    seed: u64,
) -> Result<(f64, Vec<(String, Option<Tensor<f64>>)>)> {
    // Same dropout mask on every evaluation.
    let mut rng = Rng::new(seed);
    let mut pass = forward(params, config, batch, true, &mut rng)?;
    let loss = cross_entropy(&mut pass.tape, pass.stages.logits, batch.labels())?;
    let value = pass.tape.value(loss).data()[0];
    let mut grads = pass.tape.backward(loss)?;
    let named = pass.params.iter().map(|(n, v)| (n.clone(), grads.remove(*v))).collect();
    Ok((value, named))
}

/// Checks every parameter tensor of a randomly initialized model.
pub fn run(config: &ModelConfig, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    config.validate()?;
    if opts.vocab_size < 3 || opts.batch == 0 {
        return Err(Error::Config("gradcheck needs vocab_size >= 3 and batch >= 1".into()));
    }
    let mut rng = Rng::new(opts.seed);
    let mut params = ModelParams::<f64>::init(config, opts.vocab_size, 0.5, &mut rng)?;
    // At training-scale init the SE gradients sit near 1e-9, where central
    // differences carry ~1e-11 of roundoff. Unit-scale weights keep every
    // gradient well above that floor.
    for (name, tensor, _) in params.named_mut() {
        let skip = if name == EMBEDDING { config.d } else { 0 };
        for v in &mut tensor.data_mut()[skip..] {
            *v = rng.uniform_open(1.0);
        }
    }
    let total = params.num_parameters();
    if total > MAX_GRADCHECK_PARAMS {
        return Err(Error::Config(format!(
            "gradcheck model has {total} parameters, limit is {MAX_GRADCHECK_PARAMS}"
        )));
    }
    let batch = probe_batch(config, opts, &mut rng)?;
    let dropout_seed = opts.seed ^ 0x5eed;
    let (_, analytic) = loss_and_grads(&params, config, &batch, dropout_seed)?;

    let mut tensors = Vec::new();
    for (name, grad) in analytic {
        let mut grad = grad.ok_or_else(|| Error::MissingGradient(name.clone()))?;
        if opts.corrupt.as_deref() == Some(name.as_str()) {
            grad = grad.map(|g| g * 1.5 + 1e-3);
        }
        let original = params
            .named()
            .into_iter()
            .find(|(n, _, _)| *n == name)
            .expect("named")
            .1
            .clone();
        let skip = if name == EMBEDDING { config.d } else { 0 };

        let mut probe = params.clone();
        let mut max_err = 0.0f64;
        for i in skip..original.numel() {
            let mut eval = |v: f64| -> Result<f64> {
                probe.get_mut(&name).expect("named").data_mut()[i] = v;
                let mut rng = Rng::new(dropout_seed);
                let mut pass = forward(&probe, config, &batch, true, &mut rng)?;
                let loss = cross_entropy(&mut pass.tape, pass.stages.logits, batch.labels())?;
                Ok(pass.tape.value(loss).data()[0])
            };
            let x = original.data()[i];
            let plus = eval(x + opts.step)?;
            let minus = eval(x - opts.step)?;
            eval(x)?;
            let numeric = (plus - minus) / (2.0 * opts.step);
            if !numeric.is_finite() {
                return Err(Error::NonFinite(format!("finite difference for {name}[{i}]")));
            }
            max_err = max_err.max(relative_error(grad.data()[i], numeric));
        }
        tensors.push(TensorCheck {
            name,
            max_rel_error: max_err,
            checked: original.numel() - skip,
        });
    }
    Ok(GradcheckReport {
        tensors,
        tolerance: opts.tolerance,
    })
}
