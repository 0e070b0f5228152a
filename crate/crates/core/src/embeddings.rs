//! Word embedding matrices: random trainable initialization, static vectors
//! loaded from word2vec/GloVe text files, and the batched lookup op.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Rng, Tape, Tensor, Var};
use crate::text::{EncodedBatch, Vocabulary, PAD};

/// `V × d` embedding weights. Row [`PAD`] is zero and never updated.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix<T: Scalar> {
    pub weights: Tensor<T>,
    pub trainable: bool,
}

/// How much of a vocabulary a pretrained vector file covered.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coverage {
    pub found: usize,
    pub missed: usize,
}

impl Coverage {
    /// Fraction of non-reserved vocabulary entries found in the file.
    pub fn fraction(&self) -> f64 {
        let total = self.found + self.missed;
        if total == 0 {
            0.0
        } else {
            self.found as f64 / total as f64
        }
    }
}

impl<T: Scalar> EmbeddingMatrix<T> {
    /// Uniform(−scale, scale) rows for every id except PAD, which is zero.
    pub fn init_random(vocab_size: usize, d: usize, rng: &mut Rng, scale: f64) -> Result<Self> {
        if vocab_size < 2 || d == 0 {
            return Err(Error::Config(format!(
                "embedding needs vocab_size >= 2 and d >= 1, got {vocab_size} x {d}"
            )));
        }
        if !(scale > 0.0) {
            return Err(Error::Config(format!("init scale must be positive, got {scale}")));
        }
        let mut weights = Tensor::uniform(&[vocab_size, d], scale, rng);
        weights.data_mut()[PAD * d..(PAD + 1) * d].fill(T::zero());
        Ok(EmbeddingMatrix {
            weights,
            trainable: true,
        })
    }

    /// Loads vectors in text format (`token v_1 … v_d` per line, optional
    /// `count dim` header). Vocabulary tokens are matched exactly; misses
    /// and UNK get uniform(−scale, scale) rows. The result is frozen.
    pub fn load_pretrained(
        path: &Path,
        vocab: &Vocabulary,
        d_expected: usize,
        rng: &mut Rng,
        scale: f64,
    ) -> Result<(Self, Coverage)> {
        let mut emb = Self::init_random(vocab.len(), d_expected, rng, scale)?;
        emb.trainable = false;
        let d = d_expected;
        let mut filled = vec![false; vocab.len()];

        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: u64, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line_no = i as u64 + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<u64>().is_ok()) {
                continue;
            }
            if fields.len() - 1 != d {
                return Err(parse_err(
                    line_no,
                    format!("vector has dimension {}, expected {d}", fields.len() - 1),
                ));
            }
            let Some(id) = vocab.id(fields[0]) else {
                continue;
            };
            if id == PAD || filled[id] {
                continue;
            }
            let row = &mut emb.weights.data_mut()[id * d..(id + 1) * d];
            for (slot, raw) in row.iter_mut().zip(&fields[1..]) {
                let v: f64 = raw
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("`{raw}` is not a number")))?;
                if !v.is_finite() {
                    return Err(parse_err(line_no, format!("non-finite component `{raw}`")));
                }
                *slot = T::of(v);
            }
            filled[id] = true;
        }
        let found = filled[2..].iter().filter(|&&f| f).count();
        let coverage = Coverage {
            found,
            missed: vocab.len().saturating_sub(2) - found,
        };
        Ok((emb, coverage))
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.weights.shape()[1]
    }

    /// Puts the weights on the tape; frozen matrices become constants.
    pub fn record(&self, tape: &mut Tape<T>) -> Var {
        tape.leaf(self.weights.clone().with_grad(self.trainable))
    }
}

/// Gathers rows: `out[b, j, :] = weights[ids[b, j], :]`, shape `B × n × d`.
///
/// The backward pass scatter-adds into the looked-up rows and drops the
/// gradient of the PAD row.
pub fn lookup<T: Scalar>(tape: &mut Tape<T>, weights: Var, batch: &EncodedBatch) -> Result<Var> {
    let w = tape.value(weights);
    if w.rank() != 2 {
        return Err(Error::InvalidArgument(format!(
            "embedding weights must be V x d, got {:?}",
            w.shape()
        )));
    }
    let (vocab_size, d) = (w.shape()[0], w.shape()[1]);
    if let Some(&bad) = batch.ids().iter().find(|&&id| id >= vocab_size) {
        return Err(Error::InvalidArgument(format!(
            "token id {bad} out of range for vocabulary of size {vocab_size}"
        )));
    }
    let mut out = Vec::with_capacity(batch.ids().len() * d);
    for &id in batch.ids() {
        out.extend_from_slice(&w.data()[id * d..(id + 1) * d]);
    }
    let value = Tensor::new(&[batch.len(), batch.n_max(), d], out)?;
    let ids = batch.ids().to_vec();
    tape.custom(
        "embedding_lookup",
        value,
        &[weights],
        Box::new(move |g, ins, _| {
            let mut dw = Tensor::zeros(ins[0].shape());
            let gd = g.data();
            let dwd = dw.data_mut();
            for (pos, &id) in ids.iter().enumerate() {
                if id == PAD {
                    continue;
                }
                for l in 0..d {
                    dwd[id * d + l] += gd[pos * d + l];
                }
            }
            vec![Some(dw)]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::LabeledExample;
    use std::io::Write;

    fn vocab(words: &str) -> Vocabulary {
        Vocabulary::build(
            &[LabeledExample {
                text: words.into(),
                label: 0,
            }],
            1,
            None,
        )
        .unwrap()
    }

    #[test]
    fn random_init_contract() {
        let e = EmbeddingMatrix::<f64>::init_random(10, 4, &mut Rng::new(1), 0.1).unwrap();
        assert!(e.trainable);
        assert_eq!(&e.weights.data()[..4], &[0.0; 4]);
        assert!(e.weights.data()[4..].iter().all(|&x| x > -0.1 && x < 0.1 && x != 0.0));
        let again = EmbeddingMatrix::<f64>::init_random(10, 4, &mut Rng::new(1), 0.1).unwrap();
        assert_eq!(e, again);
        assert!(EmbeddingMatrix::<f64>::init_random(1, 4, &mut Rng::new(1), 0.1).is_err());
    }

    #[test]
    fn pretrained_parse_header_and_misses() {
        let v = vocab("cat dog");
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "3 2").unwrap();
        writeln!(f, "cat 0.1 0.2").unwrap();
        writeln!(f, "zebra 9 9").unwrap();
        let (e, cov) = EmbeddingMatrix::<f64>::load_pretrained(f.path(), &v, 2, &mut Rng::new(0), 0.1).unwrap();
        assert!(!e.trainable);
        let cat = v.id("cat").unwrap();
        assert_eq!(&e.weights.data()[cat * 2..cat * 2 + 2], &[0.1, 0.2]);
        assert_eq!(cov, Coverage { found: 1, missed: 1 });
        assert_eq!(cov.fraction(), 0.5);
        assert_eq!(&e.weights.data()[..2], &[0.0, 0.0]);
    }

    #[test]
    fn pretrained_errors_report_line() {
        let v = vocab("cat");
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "cat 0.1 0.2").unwrap();
        writeln!(f, "dog 0.1").unwrap();
        let err = EmbeddingMatrix::<f64>::load_pretrained(f.path(), &v, 2, &mut Rng::new(0), 0.1).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");

        let mut g = tempfile::NamedTempFile::new().unwrap();
        writeln!(g, "cat 0.1 abc").unwrap();
        let err = EmbeddingMatrix::<f64>::load_pretrained(g.path(), &v, 2, &mut Rng::new(0), 0.1).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn lookup_values_and_gradients() {
        let e = EmbeddingMatrix::<f64>::init_random(5, 3, &mut Rng::new(2), 0.1).unwrap();
        let batch = EncodedBatch::new(vec![0, 0, 3, 3, 2, 0], vec![0, 1, 0], 2).unwrap();
        let mut tape = Tape::new();
        let w = e.record(&mut tape);
        let out = lookup(&mut tape, w, &batch).unwrap();
        assert_eq!(tape.shape(out), &[3, 2, 3]);
        assert_eq!(&tape.value(out).data()[..6], &[0.0; 6]);
        let loss = tape.sum_all(out).unwrap();
        let g = tape.backward(loss).unwrap();
        let dw = g.get(w).unwrap();
        assert_eq!(&dw.data()[9..12], &[2.0; 3]);
        assert_eq!(&dw.data()[6..9], &[1.0; 3]);
        assert_eq!(&dw.data()[..3], &[0.0; 3]);
        assert_eq!(&dw.data()[3..6], &[0.0; 3]);
    }

    #[test]
    fn frozen_matrix_gets_no_gradient() {
        let mut e = EmbeddingMatrix::<f64>::init_random(5, 3, &mut Rng::new(2), 0.1).unwrap();
        e.trainable = false;
        let batch = EncodedBatch::new(vec![2, 3], vec![0], 2).unwrap();
        let mut tape = Tape::new();
        let w = e.record(&mut tape);
        let scale = tape.leaf(Tensor::scalar(2.0).with_grad(true));
        let out = lookup(&mut tape, w, &batch).unwrap();
        let y = tape.mul(out, scale).unwrap();
        let loss = tape.sum_all(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(w).is_none());
        assert!(g.get(scale).is_some());
    }

    #[test]
    fn lookup_rejects_out_of_range_ids() {
        let e = EmbeddingMatrix::<f64>::init_random(4, 2, &mut Rng::new(2), 0.1).unwrap();
        let batch = EncodedBatch::new(vec![4], vec![0], 1).unwrap();
        let mut tape = Tape::new();
        let w = e.record(&mut tape);
        assert!(lookup(&mut tape, w, &batch).is_err());
    }
}
