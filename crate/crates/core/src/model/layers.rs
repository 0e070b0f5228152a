//! Differentiable layers of the network, each recorded as one tape op.
//!
//! Layouts: embedded sentences are `B × n × d`; stacked feature maps are
//! channel-last, `B × H × W × M` with `W = d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Rng, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// No padding; output length `n − k + 1`.
    Valid,
    /// `⌊(k−1)/2⌋` leading and `⌈(k−1)/2⌉` trailing zero rows; output length `n`.
    Same,
}

impl Padding {
    /// Leading pad rows and output length for a window of `k` over `n` rows.
    pub fn geometry(self, n: usize, k: usize) -> Option<(usize, usize)> {
        match self {
            Padding::Valid => (k >= 1 && k <= n).then(|| (0, n - k + 1)),
            Padding::Same => (k >= 1).then(|| ((k - 1) / 2, n)),
        }
    }
}

/// Depthwise 1-D convolution of a filter bank over the sequence axis.
///
/// `e: B × n × d`, `filters: m × k × d` →
/// `out[b, j, l, f] = Σ_i filters[f, i, l] · e[b, j + i − left, l]`, shape
/// `B × H × d × m`. Rows outside `0..n` read as zero.
pub fn conv1d<T: Scalar>(tape: &mut Tape<T>, e: Var, filters: Var, padding: Padding) -> Result<Var> {
    let (x, w) = (tape.value(e), tape.value(filters));
    if x.rank() != 3 || w.rank() != 3 || x.shape()[2] != w.shape()[2] {
        return Err(Error::shape("conv1d", x.shape(), w.shape()));
    }
    let (batch, n, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (m, k) = (w.shape()[0], w.shape()[1]);
    let (left, h) = padding
        .geometry(n, k)
        .ok_or_else(|| Error::InvalidArgument(format!("filter length {k} exceeds sentence length {n}")))?;
    let geom = ConvGeometry {
        batch,
        n,
        d,
        m,
        k,
        left,
        h,
    };
    let wt = filters_to_window_major(w, &geom);
    let value = Tensor::new(&[batch, h, d, m], geom.forward(x.data(), &wt))?;
    tape.custom(
        "conv1d",
        value,
        &[e, filters],
        Box::new(move |g, ins, _| {
            let wt = filters_to_window_major(ins[1], &geom);
            let (dx, dwt) = geom.backward(g.data(), ins[0].data(), &wt);
            // dwt is [i, l, f]; filters are [f, i, l].
            let mut dw = vec![T::zero(); m * k * d];
            for i in 0..k {
                for l in 0..d {
                    for f in 0..m {
                        dw[(f * k + i) * d + l] = dwt[(i * d + l) * m + f];
                    }
                }
            }
            vec![
                Some(Tensor::new(&[batch, n, d], dx).expect("shape")),
                Some(Tensor::new(&[m, k, d], dw).expect("shape")),
            ]
        }),
    )
}

#[derive(Clone, Copy)]
struct ConvGeometry {
    batch: usize,
    n: usize,
    d: usize,
    m: usize,
    k: usize,
    left: usize,
    h: usize,
}

impl ConvGeometry {
    /// Source row for output row `j` and window offset `i`, if inside the input.
    #[inline]
    fn source(&self, j: usize, i: usize) -> Option<usize> {
        (j + i).checked_sub(self.left).filter(|&s| s < self.n)
    }

    fn forward<T: Scalar>(&self, x: &[T], wt: &[T]) -> Vec<T> {
        let ConvGeometry {
            batch, n, d, m, k, h, ..
        } = *self;
        let mut out = vec![T::zero(); batch * h * d * m];
        for b in 0..batch {
            for j in 0..h {
                let orow = &mut out[(b * h + j) * d * m..(b * h + j + 1) * d * m];
                for i in 0..k {
                    let Some(src) = self.source(j, i) else { continue };
                    let xrow = &x[(b * n + src) * d..(b * n + src + 1) * d];
                    for l in 0..d {
                        let xv = xrow[l];
                        let wrow = &wt[(i * d + l) * m..(i * d + l + 1) * m];
                        for (o, &wv) in orow[l * m..(l + 1) * m].iter_mut().zip(wrow) {
                            *o += wv * xv;
                        }
                    }
                }
            }
        }
        out
    }

    fn backward<T: Scalar>(&self, g: &[T], x: &[T], wt: &[T]) -> (Vec<T>, Vec<T>) {
        let ConvGeometry {
            batch, n, d, m, k, h, ..
        } = *self;
        let mut dx = vec![T::zero(); batch * n * d];
        let mut dwt = vec![T::zero(); k * d * m];
        for b in 0..batch {
            for j in 0..h {
                let grow = &g[(b * h + j) * d * m..(b * h + j + 1) * d * m];
                for i in 0..k {
                    let Some(src) = self.source(j, i) else { continue };
                    let base = (b * n + src) * d;
                    for l in 0..d {
                        let gl = &grow[l * m..(l + 1) * m];
                        let widx = (i * d + l) * m;
                        let xv = x[base + l];
                        let mut acc = T::zero();
                        for f in 0..m {
                            acc += gl[f] * wt[widx + f];
                            dwt[widx + f] += gl[f] * xv;
                        }
                        dx[base + l] += acc;
                    }
                }
            }
        }
        (dx, dwt)
    }
}

/// `[f, i, l]` → `[i, l, f]` so the channel loop is contiguous.
fn filters_to_window_major<T: Scalar>(w: &Tensor<T>, geom: &ConvGeometry) -> Vec<T> {
    let ConvGeometry { d, m, k, .. } = *geom;
    let mut wt = vec![T::zero(); k * d * m];
    for f in 0..m {
        for i in 0..k {
            for l in 0..d {
                wt[(i * d + l) * m + f] = w.data()[(f * k + i) * d + l];
            }
        }
    }
    wt
}

fn single_filter_conv<T: Scalar>(tape: &mut Tape<T>, e: Var, filter: Var, padding: Padding) -> Result<Var> {
    let fshape = tape.shape(filter).to_vec();
    if fshape.len() != 2 {
        return Err(Error::InvalidArgument(format!("filter must be k x d, got {fshape:?}")));
    }
    let bank = tape.reshape(filter, &[1, fshape[0], fshape[1]])?;
    let out = conv1d(tape, e, bank, padding)?;
    let s = tape.shape(out).to_vec();
    tape.reshape(out, &s[..3])
}

/// One `k × d` filter, no padding: `B × n × d` → `B × (n−k+1) × d`.
pub fn conv1d_valid<T: Scalar>(tape: &mut Tape<T>, e: Var, filter: Var) -> Result<Var> {
    single_filter_conv(tape, e, filter, Padding::Valid)
}

/// One `k × d` filter with boundary zero padding: `B × n × d` → `B × n × d`.
pub fn conv1d_same<T: Scalar>(tape: &mut Tape<T>, e: Var, filter: Var) -> Result<Var> {
    single_filter_conv(tape, e, filter, Padding::Same)
}

/// Concatenates channel-last `B × H × W × m_i` blocks along the channel axis.
pub fn concat_channels<T: Scalar>(tape: &mut Tape<T>, parts: &[Var]) -> Result<Var> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("no feature maps to stack".into()))?;
    let lead = tape.shape(*first)[..3].to_vec();
    let mut widths = Vec::with_capacity(parts.len());
    for &p in parts {
        let s = tape.shape(p);
        if s.len() != 4 || s[..3] != lead[..] {
            return Err(Error::shape("stack_channels", tape.shape(*first), s));
        }
        widths.push(s[3]);
    }
    let total: usize = widths.iter().sum();
    let rows: usize = lead.iter().product();
    let mut out = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (&p, &w) in parts.iter().zip(&widths) {
            out.extend_from_slice(&tape.value(p).data()[r * w..(r + 1) * w]);
        }
    }
    let value = Tensor::new(&[lead[0], lead[1], lead[2], total], out)?;
    tape.custom(
        "stack_channels",
        value,
        parts,
        Box::new(move |g, _, _| {
            let mut grads: Vec<Vec<T>> = widths.iter().map(|&w| Vec::with_capacity(rows * w)).collect();
            for r in 0..rows {
                let mut off = r * total;
                for (gp, &w) in grads.iter_mut().zip(&widths) {
                    gp.extend_from_slice(&g.data()[off..off + w]);
                    off += w;
                }
            }
            grads
                .into_iter()
                .zip(&widths)
                .map(|(gp, &w)| Some(Tensor::new(&[lead[0], lead[1], lead[2], w], gp).expect("shape")))
                .collect()
        }),
    )
}

/// Stacks `M` maps of shape `B × H × W` into `C: B × H × W × M`, channel `i`
/// being `maps[i]`.
pub fn stack_channels<T: Scalar>(tape: &mut Tape<T>, maps: &[Var]) -> Result<Var> {
    let mut parts = Vec::with_capacity(maps.len());
    for &m in maps {
        let s = tape.shape(m).to_vec();
        if s.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "feature map must be B x H x W, got {s:?}"
            )));
        }
        parts.push(tape.reshape(m, &[s[0], s[1], s[2], 1])?);
    }
    concat_channels(tape, &parts)
}

/// Squeeze: spatial mean of every channel, `B × H × W × M` → `B × M`.
pub fn se_squeeze<T: Scalar>(tape: &mut Tape<T>, c: Var) -> Result<Var> {
    if tape.shape(c).len() != 4 {
        return Err(Error::InvalidArgument(format!(
            "squeeze expects B x H x W x M, got {:?}",
            tape.shape(c)
        )));
    }
    let shape = tape.shape(c).to_vec();
    let (batch, spatial, m) = (shape[0], shape[1] * shape[2], shape[3]);
    let x = tape.value(c).data();
    let mut z = vec![T::zero(); batch * m];
    for b in 0..batch {
        let acc = &mut z[b * m..(b + 1) * m];
        // Running mean: a constant channel squeezes to exactly its value.
        for p in 0..spatial {
            let k = T::of((p + 1) as f64);
            let row = &x[(b * spatial + p) * m..(b * spatial + p + 1) * m];
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += (v - *a) / k;
            }
        }
    }
    let value = Tensor::new(&[batch, m], z)?;
    tape.custom(
        "se_squeeze",
        value,
        &[c],
        Box::new(move |g, _, _| {
            let inv = T::one() / T::of(spatial as f64);
            let mut dc = Vec::with_capacity(batch * spatial * m);
            for b in 0..batch {
                let gb: Vec<T> = g.data()[b * m..(b + 1) * m].iter().map(|&v| v * inv).collect();
                for _ in 0..spatial {
                    dc.extend_from_slice(&gb);
                }
            }
            vec![Some(Tensor::new(&shape, dc).expect("shape"))]
        }),
    )
}

/// Excitation: `s = sigmoid(W2 · relu(W1 · z))` per row of `z: B × M`, with
/// `W1: (M·r) × M` and `W2: M × (M·r)`. No bias terms.
pub fn se_excite<T: Scalar>(tape: &mut Tape<T>, z: Var, w1: Var, w2: Var) -> Result<Var> {
    let (zs, s1, s2) = (tape.shape(z), tape.shape(w1), tape.shape(w2));
    let ok = zs.len() == 2 && s1.len() == 2 && s2.len() == 2 && s1[1] == zs[1] && s2[0] == zs[1] && s2[1] == s1[0];
    if !ok {
        return Err(Error::shape("se_excite", s1, s2));
    }
    let w1t = tape.transpose(w1)?;
    let pre = tape.matmul(z, w1t)?;
    let hidden = tape.relu(pre)?;
    let w2t = tape.transpose(w2)?;
    let gate = tape.matmul(hidden, w2t)?;
    tape.sigmoid(gate)
}

/// Scale: `C̃[b, :, :, m] = s[b, m] · C[b, :, :, m]`.
pub fn se_scale<T: Scalar>(tape: &mut Tape<T>, c: Var, s: Var) -> Result<Var> {
    let (cs, ss) = (tape.shape(c).to_vec(), tape.shape(s).to_vec());
    if cs.len() != 4 || ss.len() != 2 || ss[0] != cs[0] || ss[1] != cs[3] {
        return Err(Error::shape("se_scale", &cs, &ss));
    }
    let (batch, spatial, m) = (cs[0], cs[1] * cs[2], cs[3]);
    let (cv, sv) = (tape.value(c), tape.value(s));
    let mut out = cv.data().to_vec();
    for b in 0..batch {
        let gate = &sv.data()[b * m..(b + 1) * m];
        for p in 0..spatial {
            let row = &mut out[(b * spatial + p) * m..(b * spatial + p + 1) * m];
            for (o, &g) in row.iter_mut().zip(gate) {
                *o *= g;
            }
        }
    }
    let value = Tensor::new(&cs, out)?;
    tape.custom(
        "se_scale",
        value,
        &[c, s],
        Box::new(move |g, ins, _| {
            let (cv, sv) = (ins[0], ins[1]);
            let mut dc = g.clone();
            let mut ds = Tensor::zeros(sv.shape());
            for b in 0..batch {
                for p in 0..spatial {
                    let base = (b * spatial + p) * m;
                    for ch in 0..m {
                        dc.data_mut()[base + ch] *= sv.data()[b * m + ch];
                        ds.data_mut()[b * m + ch] += g.data()[base + ch] * cv.data()[base + ch];
                    }
                }
            }
            vec![Some(dc), Some(ds)]
        }),
    )
}

/// Channel sum: `Ĉ[b, i, j] = Σ_m C̃[b, i, j, m]`.
pub fn se_sum<T: Scalar>(tape: &mut Tape<T>, c_tilde: Var) -> Result<Var> {
    if tape.shape(c_tilde).len() != 4 {
        return Err(Error::InvalidArgument(format!(
            "channel sum expects B x H x W x M, got {:?}",
            tape.shape(c_tilde)
        )));
    }
    let shape = tape.shape(c_tilde).to_vec();
    let m = shape[3];
    let value = Tensor::new(
        &shape[..3],
        tape.value(c_tilde)
            .data()
            .chunks_exact(m)
            .map(|cell| cell.iter().copied().sum())
            .collect(),
    )?;
    tape.custom(
        "se_sum",
        value,
        &[c_tilde],
        Box::new(move |g, _, _| {
            let dc = g.data().iter().flat_map(|&v| std::iter::repeat_n(v, m)).collect();
            vec![Some(Tensor::new(&shape, dc).expect("shape"))]
        }),
    )
}

/// Row ranges of `p` contiguous pieces over `h` rows; earlier pieces take
/// the remainder.
pub fn piece_bounds(h: usize, p: usize) -> Vec<(usize, usize)> {
    let (base, extra) = (h / p, h % p);
    let mut start = 0;
    (0..p)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let range = (start, start + len);
            start += len;
            range
        })
        .collect()
}

/// Column-wise max within each of `p` row pieces: `B × H × W` → `B × p × W`.
/// Gradients go to the first maximal row of each piece.
pub fn piecewise_maxpool<T: Scalar>(tape: &mut Tape<T>, x: Var, p: usize) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "pooling expects B x H x W, got {shape:?}"
        )));
    }
    let (batch, h, w) = (shape[0], shape[1], shape[2]);
    if p == 0 || p > h {
        return Err(Error::InvalidArgument(format!("pieces must lie in 1..={h}, got {p}")));
    }
    let bounds = piece_bounds(h, p);
    let xd = tape.value(x).data();
    let mut out = Vec::with_capacity(batch * p * w);
    let mut argmax = Vec::with_capacity(batch * p * w);
    for b in 0..batch {
        for &(lo, hi) in &bounds {
            for col in 0..w {
                let mut best = lo;
                for row in lo + 1..hi {
                    if xd[(b * h + row) * w + col] > xd[(b * h + best) * w + col] {
                        best = row;
                    }
                }
                let idx = (b * h + best) * w + col;
                out.push(xd[idx]);
                argmax.push(idx);
            }
        }
    }
    let value = Tensor::new(&[batch, p, w], out)?;
    tape.custom(
        "piecewise_maxpool",
        value,
        &[x],
        Box::new(move |g, ins, _| {
            let mut dx = Tensor::zeros(ins[0].shape());
            for (o, &idx) in argmax.iter().enumerate() {
                dx.data_mut()[idx] += g.data()[o];
            }
            vec![Some(dx)]
        }),
    )
}

/// Inverted dropout. Identity when `training` is false or `rate` is zero.
pub fn dropout<T: Scalar>(tape: &mut Tape<T>, x: Var, rate: f64, training: bool, rng: &mut Rng) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let keep_scale = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..tape.value(x).numel())
        .map(|_| if rng.next_f64() < rate { T::zero() } else { keep_scale })
        .collect();
    let xv = tape.value(x);
    let data = xv.data().iter().zip(&mask).map(|(&v, &k)| v * k).collect();
    let value = Tensor::new(xv.shape(), data)?;
    tape.custom(
        "dropout",
        value,
        &[x],
        Box::new(move |g, _, _| {
            let mut dx = g.clone();
            for (d, &k) in dx.data_mut().iter_mut().zip(&mask) {
                *d *= k;
            }
            vec![Some(dx)]
        }),
    )
}

/// Affine classifier head: `x · w + b`, `x: B × F`, `w: F × C`, `b: C`.
pub fn dense<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let (bs, ws) = (tape.shape(b).to_vec(), tape.shape(w).to_vec());
    if bs.len() != 1 || ws.len() != 2 || ws[1] != bs[0] {
        return Err(Error::shape("dense", &ws, &bs));
    }
    let xw = tape.matmul(x, w)?;
    let classes = bs[0];
    let mut value = tape.value(xw).clone();
    for row in value.data_mut().chunks_mut(classes) {
        for (v, &bias) in row.iter_mut().zip(tape.value(b).data()) {
            *v += bias;
        }
    }
    tape.custom(
        "dense_bias",
        value,
        &[xw, b],
        Box::new(move |g, _, _| {
            let mut db = Tensor::zeros(&[classes]);
            for row in g.data().chunks(classes) {
                for (d, &v) in db.data_mut().iter_mut().zip(row) {
                    *d += v;
                }
            }
            vec![Some(g.clone()), Some(db)]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn all_ones_conv_sums_window() {
        let mut tape = Tape::<f64>::new();
        let e = tape.constant(Tensor::ones(&[2, 6, 3]));
        let f = tape.constant(Tensor::ones(&[3, 3]));
        let out = conv1d_valid(&mut tape, e, f).unwrap();
        assert_eq!(tape.shape(out), &[2, 4, 3]);
        assert!(tape.value(out).data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn one_hot_filter_shifts_input() {
        let data: Vec<f64> = (0..10).map(f64::from).collect();
        let mut tape = Tape::new();
        let e = tape.constant(t(&[1, 5, 2], &data));
        // Weight only on window position 1 (second row).
        let f = tape.constant(t(&[3, 2], &[0., 0., 1., 1., 0., 0.]));
        let out = conv1d_valid(&mut tape, e, f).unwrap();
        assert_eq!(tape.value(out).data(), &data[2..8]);
    }

    #[test]
    fn valid_rejects_long_filter() {
        let mut tape = Tape::new();
        let e = tape.constant(Tensor::<f64>::ones(&[1, 2, 3]));
        let f = tape.constant(Tensor::ones(&[3, 3]));
        assert!(conv1d_valid(&mut tape, e, f).is_err());
    }

    #[test]
    fn same_padding_keeps_length_and_zeros() {
        for k in 1..=6 {
            for n in 1..=7 {
                let mut tape = Tape::new();
                let e = tape.constant(Tensor::<f64>::zeros(&[2, n, 3]));
                let f = tape.constant(Tensor::ones(&[k, 3]));
                let out = conv1d_same(&mut tape, e, f).unwrap();
                assert_eq!(tape.shape(out), &[2, n, 3]);
                assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn stack_two_identical_maps() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[1, 2, 2], &[1., 2., 3., 4.]));
        let c = stack_channels(&mut tape, &[a, a]).unwrap();
        assert_eq!(tape.shape(c), &[1, 2, 2, 2]);
        assert_eq!(tape.value(c).data(), &[1., 1., 2., 2., 3., 3., 4., 4.]);
        let b = tape.constant(Tensor::zeros(&[1, 3, 2]));
        assert!(stack_channels(&mut tape, &[a, b]).is_err());
    }

    #[test]
    fn squeeze_is_channel_mean() {
        let mut tape = Tape::new();
        let c = tape.constant(t(&[1, 2, 2, 1], &[1., 2., 3., 4.]));
        let z = se_squeeze(&mut tape, c).unwrap();
        assert_eq!(tape.value(z).data(), &[2.5]);
    }

    #[test]
    fn excite_is_half_when_weights_or_input_vanish() {
        let mut tape = Tape::new();
        let z = tape.constant(t(&[2, 2], &[0.3, -1.0, 2.0, 0.5]));
        let w1 = tape.constant(Tensor::zeros(&[4, 2]));
        let w2 = tape.constant(Tensor::full(&[2, 4], 0.7));
        let s = se_excite(&mut tape, z, w1, w2).unwrap();
        assert!(tape.value(s).data().iter().all(|&v| v == 0.5));

        let zero = tape.constant(Tensor::zeros(&[2, 2]));
        let w1 = tape.constant(Tensor::full(&[4, 2], 0.7));
        let s = se_excite(&mut tape, zero, w1, w2).unwrap();
        assert!(tape.value(s).data().iter().all(|&v| v == 0.5));

        let bad = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(se_excite(&mut tape, z, bad, w2).is_err());
    }

    #[test]
    fn scale_examples() {
        let mut tape = Tape::new();
        let c = tape.constant(t(&[1, 1, 2, 2], &[1., 2., 3., 4.]));
        let s = tape.constant(t(&[1, 2], &[0., 2.]));
        let out = se_scale(&mut tape, c, s).unwrap();
        assert_eq!(tape.value(out).data(), &[0., 4., 0., 8.]);
        let ones = tape.constant(Tensor::ones(&[1, 2]));
        let same = se_scale(&mut tape, c, ones).unwrap();
        assert_eq!(tape.value(same), tape.value(c));
        let wrong = tape.constant(Tensor::ones(&[1, 3]));
        assert!(se_scale(&mut tape, c, wrong).is_err());
    }

    #[test]
    fn sum_of_opposite_channels_is_zero() {
        let mut tape = Tape::new();
        let c = tape.constant(t(&[1, 1, 2, 2], &[1.5, -1.5, -2.0, 2.0]));
        let out = se_sum(&mut tape, c).unwrap();
        assert_eq!(tape.shape(out), &[1, 1, 2]);
        assert_eq!(tape.value(out).data(), &[0.0, 0.0]);
    }

    #[test]
    fn piecewise_examples() {
        assert_eq!(piece_bounds(7, 3), vec![(0, 3), (3, 5), (5, 7)]);
        assert_eq!(piece_bounds(6, 3), vec![(0, 2), (2, 4), (4, 6)]);
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 6, 1], &[1., 5., 2., 2., 9., 3.]).with_grad(true));
        let pooled = piecewise_maxpool(&mut tape, x, 3).unwrap();
        assert_eq!(tape.value(pooled).data(), &[5., 2., 9.]);
        let global = piecewise_maxpool(&mut tape, x, 1).unwrap();
        assert_eq!(tape.value(global).data(), &[9.]);
        assert!(piecewise_maxpool(&mut tape, x, 7).is_err());

        let loss = tape.sum_all(pooled).unwrap();
        let g = tape.backward(loss).unwrap();
        // Piece [2, 2] ties: first row wins.
        assert_eq!(g.get(x).unwrap().data(), &[0., 1., 1., 0., 1., 0.]);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[4], &[1., 2., 3., 4.]));
        let mut rng = Rng::new(0);
        let y = dropout(&mut tape, x, 0.5, false, &mut rng).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        let y = dropout(&mut tape, x, 0.0, true, &mut rng).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        assert!(dropout(&mut tape, x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_is_unbiased() {
        let input = [1.0, -2.0, 0.5];
        let mut rng = Rng::new(11);
        let mut sums = [0.0; 3];
        let trials = 10_000;
        for _ in 0..trials {
            let mut tape = Tape::new();
            let x = tape.constant(t(&[3], &input));
            let y = dropout(&mut tape, x, 0.5, true, &mut rng).unwrap();
            for (s, v) in sums.iter_mut().zip(tape.value(y).data()) {
                *s += v;
            }
        }
        for (s, x) in sums.iter().zip(input) {
            let mean = s / trials as f64;
            assert!((mean - x).abs() <= 0.05 * x.abs(), "{mean} vs {x}");
        }
    }

    #[test]
    fn dense_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let zw = tape.constant(Tensor::zeros(&[2, 3]));
        let zb = tape.constant(Tensor::zeros(&[3]));
        let y = dense(&mut tape, x, zw, zb).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        let eye = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let b0 = tape.constant(Tensor::zeros(&[2]));
        let y = dense(&mut tape, x, eye, b0).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        assert!(dense(&mut tape, x, eye, zb).is_err());
    }
}
