use crate::error::{Error, Result};
use crate::model::{LayerSpec, ModelSpec, SoftmaxSpec};

pub const KIB: u64 = 1024;

/// Learnable parameters of one layer.
pub fn layer_params(layer: &LayerSpec) -> u64 {
    match layer {
        LayerSpec::Conv(c) => (c.width as u64 * c.height as u64 * c.in_channels as u64 + 1) * c.out_channels as u64,
        LayerSpec::Fc(d) => dense(d.in_units, d.out_units),
        LayerSpec::Softmax(SoftmaxSpec::Affine { in_units, out_units }) => dense(*in_units, *out_units),
        LayerSpec::Softmax(SoftmaxSpec::PassThrough) | LayerSpec::Input { .. } | LayerSpec::Pool(_) | LayerSpec::Flatten => 0,
    }
}

fn dense(n_p: usize, n_c: usize) -> u64 {
    n_c as u64 * n_p as u64 + n_c as u64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub per_layer: Vec<(usize, u64)>,
    pub total: u64,
}

impl ParamCount {
    pub fn layer(&self, i: usize) -> u64 {
        self.per_layer.iter().find(|(j, _)| *j == i).map_or(0, |(_, p)| *p)
    }
}

/// Per-layer counts over a validated model; the chain check happens when the
/// `ModelSpec` is built.
pub fn model_params(model: &ModelSpec) -> ParamCount {
    let per_layer: Vec<(usize, u64)> = model.layers().iter().map(layer_params).enumerate().collect();
    let total = per_layer.iter().map(|(_, p)| p).sum();
    ParamCount { per_layer, total }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryEstimate {
    pub model_bytes: u64,
    pub params: u64,
    pub batch_size: u64,
    pub num_batches: u64,
    pub bytes_per_param: u64,
}

impl MemoryEstimate {
    /// Bytes charged for `params` parameters under the same batch settings.
    pub fn bytes_for(&self, params: u64) -> Result<u64> {
        product(&[self.num_batches, self.batch_size, params, self.bytes_per_param])
    }

    /// Byte cost of every layer, in model order.
    pub fn layer_bytes(&self, params: &ParamCount) -> Result<Vec<u64>> {
        params.per_layer.iter().map(|&(_, p)| self.bytes_for(p)).collect()
    }
}

fn product(factors: &[u64]) -> Result<u64> {
    factors.iter().try_fold(1u64, |acc, &f| {
        acc.checked_mul(f)
            .ok_or_else(|| Error::Range(format!("memory product {factors:?} overflows u64")))
    })
}

/// `N * batch_size * P * bytes_per_param`, exact.
pub fn model_memory(params: &ParamCount, batch_size: u64, num_batches: u64, bytes_per_param: u64) -> Result<MemoryEstimate> {
    memory_for_total(params.total, batch_size, num_batches, bytes_per_param)
}

pub fn estimate_memory(model: &ModelSpec, batch_size: u64, num_batches: u64, bytes_per_param: u64) -> Result<MemoryEstimate> {
    model_memory(&model_params(model), batch_size, num_batches, bytes_per_param)
}

pub fn memory_for_total(total: u64, batch_size: u64, num_batches: u64, bytes_per_param: u64) -> Result<MemoryEstimate> {
    if batch_size == 0 || num_batches == 0 || bytes_per_param == 0 {
        return Err(Error::Range("batch size, batch count and bytes per parameter must be positive".into()));
    }
    Ok(MemoryEstimate {
        model_bytes: product(&[num_batches, batch_size, total, bytes_per_param])?,
        params: total,
        batch_size,
        num_batches,
        bytes_per_param,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConvSpec, DenseSpec, PoolSpec};
    use proptest::prelude::*;

    fn conv(p: usize, c: usize) -> LayerSpec {
        LayerSpec::Conv(ConvSpec {
            width: 3,
            height: 3,
            in_channels: p,
            out_channels: c,
            stride: 1,
            padding: 0,
            relu: true,
        })
    }

    #[test]
    fn table_formulas() {
        assert_eq!(layer_params(&LayerSpec::Pool(PoolSpec { window: 2, stride: 2 })), 0);
        assert_eq!(layer_params(&conv(3, 16)), 448);
        let fc = LayerSpec::Fc(DenseSpec {
            in_units: 100,
            out_units: 10,
            relu: false,
        });
        assert_eq!(layer_params(&fc), 1010);
        assert_eq!(layer_params(&conv(3, 32)), 2 * layer_params(&conv(3, 16)));
        assert_eq!(layer_params(&LayerSpec::Softmax(SoftmaxSpec::PassThrough)), 0);
        let sm = LayerSpec::Softmax(SoftmaxSpec::Affine {
            in_units: 100,
            out_units: 10,
        });
        assert_eq!(layer_params(&sm), 1010);
    }

    #[test]
    fn five_thousand_params_is_about_five_mb() {
        let m = memory_for_total(5000, 1, 1, KIB).unwrap();
        assert_eq!(m.model_bytes, 5_120_000);
    }

    #[test]
    fn example_model() {
        let p = model_params(&ModelSpec::example());
        assert_eq!(p.total, 4238);
        assert_eq!(p.per_layer.len(), ModelSpec::example().len());
        assert_eq!(p.layer(0), 0);
    }

    #[test]
    fn zero_and_overflow() {
        assert_eq!(memory_for_total(0, 3, 3, KIB).unwrap().model_bytes, 0);
        assert!(matches!(memory_for_total(u64::MAX / 2, 3, 1, 1), Err(Error::Range(_))));
        assert!(memory_for_total(1, 0, 1, 1).is_err());
    }

    proptest! {
        #[test]
        fn memory_is_multiplicative(p in 0u64..1_000_000, b in 1u64..64, n in 1u64..64, k in 1u64..4) {
            let m = memory_for_total(p, b, n, KIB).unwrap();
            prop_assert_eq!(m.model_bytes, n * b * p * KIB);
            let scaled = memory_for_total(p, b * k, n, KIB).unwrap();
            prop_assert_eq!(scaled.model_bytes, k * m.model_bytes);
        }
    }
}
