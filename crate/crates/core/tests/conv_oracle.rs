use secnn::model::layers::{conv1d, conv1d_same, conv1d_valid, Padding};
use secnn::tensor::{Rng, Tape, Tensor};

/// Nested-loop reference with explicit zero padding.
fn brute_force(e: &Tensor<f64>, filt: &Tensor<f64>, left: usize, h: usize) -> Vec<f64> {
    let (b, n, d) = (e.shape()[0], e.shape()[1], e.shape()[2]);
    let k = filt.shape()[0];
    let mut out = vec![0.0; b * h * d];
    for bi in 0..b {
        for j in 0..h {
            for l in 0..d {
                let mut acc = 0.0;
                for i in 0..k {
                    let row = j as isize + i as isize - left as isize;
                    if row >= 0 && (row as usize) < n {
                        acc += filt.at(&[i, l]) * e.at(&[bi, row as usize, l]);
                    }
                }
                out[(bi * h + j) * d + l] = acc;
            }
        }
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn valid_and_same_match_brute_force_on_100_instances() {
    let mut rng = Rng::new(2024);
    for case in 0..100 {
        let b = 1 + rng.below(3);
        let n = 1 + rng.below(9);
        let d = 1 + rng.below(5);
        let k = 1 + rng.below(n.min(5));
        let e = Tensor::uniform(&[b, n, d], 2.0, &mut rng);
        let filt = Tensor::uniform(&[k, d], 2.0, &mut rng);

        let mut tape = Tape::new();
        let (ev, fv) = (tape.constant(e.clone()), tape.constant(filt.clone()));
        let valid = conv1d_valid(&mut tape, ev, fv).unwrap();
        let same = conv1d_same(&mut tape, ev, fv).unwrap();

        assert_eq!(tape.shape(valid), &[b, n - k + 1, d], "case {case}");
        assert_eq!(tape.shape(same), &[b, n, d], "case {case}");
        let err_v = max_abs_diff(tape.value(valid).data(), &brute_force(&e, &filt, 0, n - k + 1));
        let err_s = max_abs_diff(tape.value(same).data(), &brute_force(&e, &filt, (k - 1) / 2, n));
        assert!(err_v <= 1e-12 && err_s <= 1e-12, "case {case}: {err_v} {err_s}");
    }
}

#[test]
fn filter_bank_is_channel_last_stack_of_single_filters() {
    let mut rng = Rng::new(7);
    let e = Tensor::uniform(&[2, 6, 3], 1.0, &mut rng);
    let bank = Tensor::uniform(&[4, 3, 3], 1.0, &mut rng);
    for padding in [Padding::Valid, Padding::Same] {
        let mut tape = Tape::new();
        let ev = tape.constant(e.clone());
        let bv = tape.constant(bank.clone());
        let out = conv1d(&mut tape, ev, bv, padding).unwrap();
        let h = tape.shape(out)[1];
        let left = if padding == Padding::Same { 1 } else { 0 };
        for f in 0..4 {
            let filt = Tensor::new(&[3, 3], bank.data()[f * 9..(f + 1) * 9].to_vec()).unwrap();
            let reference = brute_force(&e, &filt, left, h);
            for (idx, want) in reference.iter().enumerate() {
                let got = tape.value(out).data()[idx * 4 + f];
                assert!((got - want).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn same_padding_interior_equals_valid() {
    let mut rng = Rng::new(11);
    for k in 1..=6 {
        let n = 9;
        let e = Tensor::<f64>::uniform(&[1, n, 2], 1.0, &mut rng);
        let filt = Tensor::uniform(&[k, 2], 1.0, &mut rng);
        let mut tape = Tape::new();
        let (ev, fv) = (tape.constant(e), tape.constant(filt));
        let valid = conv1d_valid(&mut tape, ev, fv).unwrap();
        let same = conv1d_same(&mut tape, ev, fv).unwrap();
        let left = (k - 1) / 2;
        let (v, s) = (tape.value(valid), tape.value(same));
        for j in 0..n - k + 1 {
            for l in 0..2 {
                assert_eq!(v.at(&[0, j, l]), s.at(&[0, j + left, l]), "k={k} j={j}");
            }
        }
    }
}

#[test]
fn simple_cases() {
    let mut tape = Tape::new();
    let ones = tape.constant(Tensor::<f64>::ones(&[1, 5, 2]));
    let filt = tape.constant(Tensor::ones(&[3, 2]));
    let out = conv1d_valid(&mut tape, ones, filt).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 3.0));

    let zeros = tape.constant(Tensor::zeros(&[2, 4, 3]));
    let f = tape.constant(Tensor::uniform(&[3, 3], 1.0, &mut Rng::new(0)));
    let out = conv1d_same(&mut tape, zeros, f).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));

    // One-hot at the first window position crops the input.
    let e = Tensor::from_f64(&[1, 4, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    let ev = tape.constant(e);
    let f = tape.constant(Tensor::from_f64(&[2, 1], &[1.0, 0.0]).unwrap());
    let out = conv1d_valid(&mut tape, ev, f).unwrap();
    assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0]);

    let long = tape.constant(Tensor::from_f64(&[2, 1], &[1.0, 1.0]).unwrap());
    let short = tape.constant(Tensor::<f64>::ones(&[1, 1, 1]));
    assert!(conv1d_valid(&mut tape, short, long).is_err());
}
