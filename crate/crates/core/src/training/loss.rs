use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Softmax of one row with max subtraction.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    max + row.iter().map(|&z| (z - max).exp()).sum::<T>().ln()
}

/// Mean over rows of `−log softmax(logits)[label]`, `logits: B × C`.
pub fn cross_entropy<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "logits {shape:?} do not match {} labels",
            labels.len()
        )));
    }
    let (batch, classes) = (shape[0], shape[1]);
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let z = tape.value(logits).data();
    let total: T = labels
        .iter()
        .enumerate()
        .map(|(b, &y)| {
            let row = &z[b * classes..(b + 1) * classes];
            log_sum_exp(row) - row[y]
        })
        .sum();
    let value = Tensor::scalar(total / T::of(batch as f64));
    let labels = labels.to_vec();
    tape.custom(
        "cross_entropy",
        value,
        &[logits],
        Box::new(move |g, ins, _| {
            let scale = g.data()[0] / T::of(batch as f64);
            let mut dz = Vec::with_capacity(batch * classes);
            for (b, &y) in labels.iter().enumerate() {
                let p = softmax(&ins[0].data()[b * classes..(b + 1) * classes]);
                dz.extend(p.into_iter().enumerate().map(|(c, pc)| {
                    let target = if c == y { T::one() } else { T::zero() };
                    (pc - target) * scale
                }));
            }
            vec![Some(Tensor::new(&[batch, classes], dz).expect("shape"))]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn loss_of(logits: &[f64], classes: usize, labels: &[usize]) -> f64 {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::from_f64(&[labels.len(), classes], logits).unwrap());
        let l = cross_entropy(&mut tape, z, labels).unwrap();
        tape.value(l).data()[0]
    }

    #[test]
    fn uniform_logits_give_ln2() {
        assert!((loss_of(&[0.0, 0.0], 2, &[0]) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn saturated_correct_class_is_near_zero() {
        let l = loss_of(&[10.0, -10.0], 2, &[0]);
        assert!(l > 0.0 && (l - 2.061e-9).abs() < 1e-11, "{l}");
    }

    #[test]
    fn matches_naive_formula() {
        let mut rng = Rng::new(4);
        let logits: Vec<f64> = (0..12).map(|_| rng.uniform_open(3.0)).collect();
        let labels = [2, 0, 1, 2];
        let mut naive = 0.0;
        for (b, &y) in labels.iter().enumerate() {
            let row = &logits[b * 3..b * 3 + 3];
            let denom: f64 = row.iter().map(|z| z.exp()).sum();
            naive += -(row[y].exp() / denom).ln();
        }
        naive /= 4.0;
        assert!((loss_of(&logits, 3, &labels) - naive).abs() < 1e-12);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let l = loss_of(&[1000.0, -1000.0, 0.0], 3, &[1]);
        assert!((l - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_out_of_range_label() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::zeros(&[1, 2]));
        assert!(cross_entropy(&mut tape, z, &[2]).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0, 2.0, 3.0, -50.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
