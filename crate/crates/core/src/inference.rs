//! Reference CNN forward kernels.
//!
//! Every kernel fixes its accumulation order so that running a model in one
//! piece or split across several simulated nodes produces identical bits:
//!
//! * convolution: per output element, accumulate over input channel, then
//!   kernel row, then kernel column, starting from `0.0`; out-of-bounds
//!   (zero-padding) taps are skipped; the bias is added last.
//! * dense: `sum_i W[j, i] * x[i]` in ascending `i` from `0.0`, then `+ b[j]`.
//! * softmax: subtract the max, exponentiate, sum in ascending index, divide.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::model::{ConvSpec, DenseSpec, LayerSpec, ModelSpec, PoolSpec, SoftmaxSpec};
use crate::tensor::Tensor;
use crate::weights::{LayerWeights, WeightStore};

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

pub fn conv2d_forward(input: &Tensor, spec: &ConvSpec, w: &LayerWeights) -> Result<Tensor> {
    let layer = LayerSpec::Conv(*spec);
    let out_shape = layer.output_shape(input.shape())?;
    let (kh, kw, p, c) = (spec.height, spec.width, spec.in_channels, spec.out_channels);
    if w.weights.len() != c * p * kh * kw || w.bias.len() != c {
        return Err(Error::shape(&[c * p * kh * kw, c], &[w.weights.len(), w.bias.len()]));
    }
    let (ih, iw) = (input.shape()[1], input.shape()[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for oc in 0..c {
        let filter = &w.weights[oc * p * kh * kw..(oc + 1) * p * kh * kw];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ic in 0..p {
                    for ky in 0..kh {
                        let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        let row = (ic * ih + iy as usize) * iw;
                        for kx in 0..kw {
                            let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                            if ix < 0 || ix >= iw as isize {
                                continue;
                            }
                            acc += filter[(ic * kh + ky) * kw + kx] * x[row + ix as usize];
                        }
                    }
                }
                acc += w.bias[oc];
                out.push(if spec.relu { relu(acc) } else { acc });
            }
        }
    }
    Tensor::new(out_shape, out)
}

pub fn maxpool_forward(input: &Tensor, spec: &PoolSpec) -> Result<Tensor> {
    let out_shape = LayerSpec::Pool(*spec).output_shape(input.shape())?;
    let (ch, ih, iw) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let x = input.data();
    let mut out = Vec::with_capacity(ch * oh * ow);
    for c in 0..ch {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for ky in 0..spec.window {
                    for kx in 0..spec.window {
                        let v = x[(c * ih + oy * spec.stride + ky) * iw + ox * spec.stride + kx];
                        if v > best || best == f64::NEG_INFINITY {
                            best = v;
                        }
                    }
                }
                out.push(best);
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Affine map over the flattened input, with optional ReLU.
pub fn dense_forward(input: &Tensor, spec: &DenseSpec, w: &LayerWeights) -> Result<Tensor> {
    affine(input, spec.in_units, spec.out_units, w).map(|mut t| {
        if spec.relu {
            t.data_mut().iter_mut().for_each(|v| *v = relu(*v));
        }
        t
    })
}

fn affine(input: &Tensor, n_in: usize, n_out: usize, w: &LayerWeights) -> Result<Tensor> {
    if input.numel() != n_in {
        return Err(Error::shape(&[n_in], input.shape()));
    }
    if w.weights.len() != n_out * n_in || w.bias.len() != n_out {
        return Err(Error::shape(&[n_out * n_in, n_out], &[w.weights.len(), w.bias.len()]));
    }
    let x = input.data();
    let out = w
        .weights
        .chunks_exact(n_in)
        .zip(&w.bias)
        .map(|(row, b)| {
            let mut acc = 0.0;
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            acc + b
        })
        .collect();
    Tensor::new(vec![n_out], out)
}

pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 1 {
        return Err(Error::shape(&[logits.numel()], logits.shape()));
    }
    if let Some(bad) = logits.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logit {bad}")));
    }
    let max = logits.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.data().iter().map(|v| (v - max).exp()).collect();
    let mut sum = 0.0;
    for e in &exps {
        sum += e;
    }
    Tensor::new(vec![exps.len()], exps.into_iter().map(|e| e / sum).collect())
}

/// Applies one layer to one sample.
pub fn apply_layer(layer: &LayerSpec, weights: Option<&LayerWeights>, input: &Tensor) -> Result<Tensor> {
    let need = || -> Result<&LayerWeights> {
        weights.ok_or_else(|| Error::Plan(format!("missing weights for {} layer", layer.kind())))
    };
    match layer {
        LayerSpec::Input { shape } => {
            if input.shape() != shape.as_slice() {
                return Err(Error::shape(shape, input.shape()));
            }
            Ok(input.clone())
        }
        LayerSpec::Conv(c) => conv2d_forward(input, c, need()?),
        LayerSpec::Pool(p) => maxpool_forward(input, p),
        LayerSpec::Flatten => input.clone().reshape(vec![input.numel()]),
        LayerSpec::Fc(d) => dense_forward(input, d, need()?),
        LayerSpec::Softmax(SoftmaxSpec::PassThrough) => softmax(input),
        LayerSpec::Softmax(SoftmaxSpec::Affine { in_units, out_units }) => {
            softmax(&affine(input, *in_units, *out_units, need()?)?)
        }
    }
}

/// Runs layers `range` on one sample whose shape matches `range.start`'s boundary.
pub fn forward_range(model: &ModelSpec, weights: &WeightStore, input: &Tensor, range: Range<usize>) -> Result<Tensor> {
    if range.start > range.end || range.end > model.len() {
        return Err(Error::Range(format!("layer range {range:?} outside model of {} layers", model.len())));
    }
    let expected = model.boundary_shape(range.start);
    if input.shape() != expected {
        return Err(Error::shape(expected, input.shape()).at_layer(range.start));
    }
    let mut x = input.clone();
    for i in range {
        x = apply_layer(&model.layers()[i], weights.get(i), &x).map_err(|e| e.at_layer(i))?;
    }
    Ok(x)
}

/// Monolithic inference. Accepts one sample shaped like the Input layer, or a
/// batch with an extra leading axis; returns class probabilities of matching rank.
pub fn model_forward(model: &ModelSpec, weights: &WeightStore, input: &Tensor) -> Result<Tensor> {
    let in_shape = model.input_shape();
    if input.shape() == in_shape {
        return forward_range(model, weights, input, 0..model.len());
    }
    if input.rank() == in_shape.len() + 1 && &input.shape()[1..] == in_shape {
        let outs = input
            .unstack()?
            .iter()
            .map(|s| forward_range(model, weights, s, 0..model.len()))
            .collect::<Result<Vec<_>>>()?;
        return Tensor::stack(&outs);
    }
    Err(Error::shape(in_shape, input.shape()).at_layer(0))
}

/// Splits a single sample or batch into samples shaped like the model input.
pub fn samples_of(model: &ModelSpec, input: &Tensor) -> Result<Vec<Tensor>> {
    let in_shape = model.input_shape();
    if input.shape() == in_shape {
        Ok(vec![input.clone()])
    } else if input.rank() == in_shape.len() + 1 && &input.shape()[1..] == in_shape {
        input.unstack()
    } else {
        Err(Error::shape(in_shape, input.shape()).at_layer(0))
    }
}

/// Arithmetic operation count of layer `i` for one sample (multiply-accumulates
/// for conv/dense, comparisons for pooling, exponentials for softmax).
pub fn layer_ops(model: &ModelSpec, i: usize) -> u64 {
    let out: u64 = model.output_shape(i).iter().product::<usize>() as u64;
    match &model.layers()[i] {
        LayerSpec::Input { .. } | LayerSpec::Flatten => 0,
        LayerSpec::Conv(c) => out * (c.in_channels * c.height * c.width) as u64,
        LayerSpec::Pool(p) => out * (p.window * p.window) as u64,
        LayerSpec::Fc(d) => (d.in_units * d.out_units) as u64,
        LayerSpec::Softmax(SoftmaxSpec::PassThrough) => out,
        LayerSpec::Softmax(SoftmaxSpec::Affine { in_units, out_units }) => (in_units * out_units + out_units) as u64,
    }
}

pub fn range_ops(model: &ModelSpec, range: Range<usize>) -> u64 {
    range.map(|i| layer_ops(model, i)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lw(weights: Vec<f64>, bias: Vec<f64>) -> LayerWeights {
        LayerWeights { weights, bias }
    }

    fn conv(w: usize, p: usize, c: usize, stride: usize, pad: usize, relu: bool) -> ConvSpec {
        ConvSpec {
            width: w,
            height: w,
            in_channels: p,
            out_channels: c,
            stride,
            padding: pad,
            relu,
        }
    }

    #[test]
    fn identity_conv() {
        let x = Tensor::new(vec![1, 3, 3], vec![1.0; 9]).unwrap();
        let y = conv2d_forward(&x, &conv(1, 1, 1, 1, 0, true), &lw(vec![1.0], vec![0.0])).unwrap();
        assert!(y.bit_eq(&x));
    }

    #[test]
    fn conv_sums_window() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = conv2d_forward(&x, &conv(2, 1, 1, 1, 0, true), &lw(vec![1.0; 4], vec![0.0])).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn conv_shape_error_reports_both() {
        let x = Tensor::new(vec![2, 3, 3], vec![0.0; 18]).unwrap();
        match conv2d_forward(&x, &conv(1, 1, 1, 1, 0, true), &lw(vec![1.0], vec![0.0])) {
            Err(Error::Shape { expected, found }) => {
                assert_eq!(found, vec![2, 3, 3]);
                assert_eq!(expected[0], 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pool_examples() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = PoolSpec { window: 2, stride: 2 };
        assert_eq!(maxpool_forward(&x, &p).unwrap().data(), &[4.0]);
        let z = Tensor::zeros(vec![1, 4, 4]).unwrap();
        let y = maxpool_forward(&z, &p).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_examples() {
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0]).unwrap();
        let ident = lw(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![0.0; 3]);
        let spec = DenseSpec {
            in_units: 3,
            out_units: 3,
            relu: false,
        };
        assert!(dense_forward(&x, &spec, &ident).unwrap().bit_eq(&x));
        let spec = DenseSpec {
            in_units: 3,
            out_units: 1,
            relu: true,
        };
        assert_eq!(dense_forward(&x, &spec, &lw(vec![1.0; 3], vec![0.0])).unwrap().data(), &[6.0]);
        let short = Tensor::from_vec(vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            dense_forward(&short, &spec, &lw(vec![1.0; 3], vec![0.0])),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&Tensor::from_vec(vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::from_vec(vec![1000.0, 1000.0]).unwrap()).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::from_vec(vec![0.0, 3f64.ln()]).unwrap()).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
        assert!(matches!(
            softmax(&Tensor::from_vec(vec![f64::NAN]).unwrap()),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn two_layer_softmax_model() {
        let model = ModelSpec::new(
            "tiny",
            vec![
                LayerSpec::Input { shape: vec![2] },
                LayerSpec::Softmax(SoftmaxSpec::Affine {
                    in_units: 2,
                    out_units: 2,
                }),
            ],
        )
        .unwrap();
        let mut w = WeightStore::new();
        w.insert(1, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]);
        let y = model_forward(&model, &w, &Tensor::from_vec(vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn batch_forward_matches_per_sample() {
        let model = ModelSpec::example();
        let w = WeightStore::random(&model, 3);
        let a = Tensor::new(vec![1, 32, 32], (0..1024).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        let b = Tensor::new(vec![1, 32, 32], (0..1024).map(|i| (i % 5) as f64 / 5.0).collect()).unwrap();
        let batch = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        let yb = model_forward(&model, &w, &batch).unwrap();
        let ya = model_forward(&model, &w, &a).unwrap();
        let yb2 = model_forward(&model, &w, &b).unwrap();
        assert!(yb.bit_eq(&Tensor::stack(&[ya, yb2]).unwrap()));
    }

    #[test]
    fn wrong_input_reports_layer() {
        let model = ModelSpec::example();
        let w = WeightStore::random(&model, 3);
        let err = model_forward(&model, &w, &Tensor::zeros(vec![1, 8, 8]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Layer { index: 0, .. }));
    }

    #[test]
    fn example_ops() {
        let m = ModelSpec::example();
        assert_eq!(layer_ops(&m, 1), 8 * 32 * 32 * 9);
        assert_eq!(layer_ops(&m, 2), 8 * 8 * 8 * 16);
        assert_eq!(layer_ops(&m, 4), 512 * 8);
        assert_eq!(layer_ops(&m, 0), 0);
    }
}
