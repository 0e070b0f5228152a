//! Tokenization, vocabulary, fixed-length encoding and dataset files.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Rng;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercases, strips ASCII punctuation and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledExample {
    pub text: String,
    pub label: usize,
}

/// Token ↔ id bijection. Ids 0 and 1 are reserved for padding and unknowns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    /// Builds a vocabulary from corpus text.
    ///
    /// Tokens seen at least `min_freq` times are ordered by descending
    /// frequency, ties by first occurrence, and numbered from 2. `max_size`
    /// caps the total size including the two reserved entries.
    pub fn build(corpus: &[LabeledExample], min_freq: usize, max_size: Option<usize>) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
        let mut order = 0;
        for example in corpus {
            for tok in tokenize(&example.text) {
                let entry = counts.entry(tok).or_insert_with(|| {
                    order += 1;
                    (0, order)
                });
                entry.0 += 1;
            }
        }
        let mut ranked: Vec<(String, usize, usize)> = counts
            .into_iter()
            .filter(|(_, (c, _))| *c >= min_freq.max(1))
            .map(|(t, (c, first))| (t, c, first))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));

        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let limit = max_size.map_or(usize::MAX, |m| m.saturating_sub(2));
        tokens.extend(ranked.into_iter().take(limit).map(|(t, _, _)| t));
        Ok(Self::from_tokens(tokens))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        for line in BufReader::new(file).lines() {
            tokens.push(line.map_err(|e| Error::io(path, e))?);
        }
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("vocabulary must start with `{PAD_TOKEN}` and `{UNK_TOKEN}`"),
            });
        }
        let vocab = Self::from_tokens(tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: "duplicate token in vocabulary".into(),
            });
        }
        Ok(vocab)
    }
}

/// Maps text to exactly `n_max` ids: unknown tokens become UNK, the tail is
/// right-padded with PAD, and longer sentences keep their prefix.
pub fn encode(text: &str, vocab: &Vocabulary, n_max: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = tokenize(text)
        .iter()
        .take(n_max)
        .map(|t| vocab.id(t).unwrap_or(UNK))
        .collect();
    ids.resize(n_max, PAD);
    ids
}

/// Row-major `batch × n_max` id matrix with one label per row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedBatch {
    ids: Vec<usize>,
    labels: Vec<usize>,
    n_max: usize,
}

impl EncodedBatch {
    pub fn new(ids: Vec<usize>, labels: Vec<usize>, n_max: usize) -> Result<Self> {
        if n_max == 0 || ids.len() != labels.len() * n_max {
            return Err(Error::InvalidArgument(format!(
                "{} ids do not form {} rows of length {n_max}",
                ids.len(),
                labels.len()
            )));
        }
        Ok(EncodedBatch { ids, labels, n_max })
    }

    pub fn encode(examples: &[&LabeledExample], vocab: &Vocabulary, n_max: usize) -> Self {
        let mut ids = Vec::with_capacity(examples.len() * n_max);
        for ex in examples {
            ids.extend(encode(&ex.text, vocab, n_max));
        }
        EncodedBatch {
            ids,
            labels: examples.iter().map(|e| e.label).collect(),
            n_max,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.ids[b * self.n_max..(b + 1) * self.n_max]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Examples plus the class names; `labels[i]` is the name of class id `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub examples: Vec<LabeledExample>,
    pub labels: Vec<String>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    /// Re-numbers labels against another label map (e.g. a checkpoint's).
    pub fn remap(&self, labels: &[String]) -> Result<Vec<LabeledExample>> {
        let lookup: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let mut mapping = Vec::with_capacity(self.labels.len());
        for name in &self.labels {
            match lookup.get(name.as_str()) {
                Some(&id) => mapping.push(id),
                None => return Err(Error::LabelMismatch(format!("label `{name}` is not one of {labels:?}"))),
            }
        }
        Ok(self
            .examples
            .iter()
            .map(|e| LabeledExample {
                text: e.text.clone(),
                label: mapping[e.label],
            })
            .collect())
    }

    /// Writes the `label,text` CSV form read by [`load_dataset`].
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .map_err(|e| csv_io(path, e))?;
        w.write_record(["label", "text"]).map_err(|e| csv_io(path, e))?;
        for ex in &self.examples {
            w.write_record([self.labels[ex.label].as_str(), ex.text.as_str()])
                .map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Reads a UTF-8 CSV file with header `label,text`.
///
/// Class ids follow the lexicographic order of the distinct label strings.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "label" || &headers[1] != "text" {
        return Err(parse_err(1, format!("expected header `label,text`, found {headers:?}")));
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return Err(parse_err(line, format!("expected 2 fields, found {}", record.len())));
        }
        let label = record[0].trim();
        if label.is_empty() {
            return Err(parse_err(line, "empty label".into()));
        }
        rows.push((label.to_string(), record[1].to_string()));
    }

    let labels: Vec<String> = rows
        .iter()
        .map(|(l, _)| l.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if labels.len() < 2 {
        return Err(Error::Data(format!(
            "{}: need at least 2 distinct labels, found {}",
            path.display(),
            labels.len()
        )));
    }
    let examples = rows
        .into_iter()
        .map(|(l, text)| LabeledExample {
            label: labels.binary_search(&l).expect("label collected above"),
            text,
        })
        .collect();
    Ok(Dataset { examples, labels })
}

/// Uniform random split; the dev part has `round(dev_fraction · n)` examples.
pub fn split_train_dev(
    data: &[LabeledExample],
    dev_fraction: f64,
    rng: &mut Rng,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::Config(format!(
            "dev_fraction must lie in (0, 1), got {dev_fraction}"
        )));
    }
    let n = data.len();
    let n_dev = (dev_fraction * n as f64).round() as usize;
    if n < 2 || n_dev == 0 || n_dev == n {
        return Err(Error::Data(format!(
            "cannot split {n} examples with dev fraction {dev_fraction}"
        )));
    }
    let perm = rng.permutation(n);
    let dev = perm[..n_dev].iter().map(|&i| data[i].clone()).collect();
    let train = perm[n_dev..].iter().map(|&i| data[i].clone()).collect();
    Ok((train, dev))
}

/// Two-class keyword corpus: class `0` sentences contain `aaa`, class `1`
/// sentences contain `bbb`, padded with filler words `w00`..`w47` to 5–10
/// tokens. The full vocabulary is 50 words.
pub fn keyword_corpus(n: usize, seed: u64) -> Dataset {
    let mut rng = Rng::new(seed);
    let examples = (0..n)
        .map(|i| {
            let label = i % 2;
            let len = 5 + rng.below(6);
            let key = rng.below(len);
            let words: Vec<String> = (0..len)
                .map(|j| {
                    if j == key {
                        if label == 0 {
                            "aaa".into()
                        } else {
                            "bbb".into()
                        }
                    } else {
                        format!("w{:02}", rng.below(48))
                    }
                })
                .collect();
            LabeledExample {
                text: words.join(" "),
                label,
            }
        })
        .collect();
    Dataset {
        examples,
        labels: vec!["0".into(), "1".into()],
    }
}
