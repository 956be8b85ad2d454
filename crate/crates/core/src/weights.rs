//! Per-layer weights and the `PXW1` binary container.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! "PXW1"
//! repeated until EOF:
//!   layer index   u32
//!   weight count  u64
//!   bias count    u64
//!   weights       f64 x weight count
//!   biases        f64 x bias count
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::ModelSpec;

pub const WEIGHT_MAGIC: &[u8; 4] = b"PXW1";

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStore {
    entries: BTreeMap<usize, LayerWeights>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, layer: usize, weights: Vec<f64>, bias: Vec<f64>) {
        self.entries.insert(layer, LayerWeights { weights, bias });
    }

    pub fn get(&self, layer: usize) -> Option<&LayerWeights> {
        self.entries.get(&layer)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &LayerWeights)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total weight and bias elements across all layers.
    pub fn element_count(&self) -> u64 {
        self.entries
            .values()
            .map(|e| (e.weights.len() + e.bias.len()) as u64)
            .sum()
    }

    /// Seeded uniform fan-in initialisation for every parameterised layer.
    pub fn random(model: &ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = Self::new();
        for (i, layer) in model.layers().iter().enumerate() {
            if let Some((shape, bias_len)) = layer.weight_shape() {
                let n: usize = shape.iter().product();
                let fan_in = n / shape[0];
                let bound = (3.0 / fan_in as f64).sqrt();
                let weights = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
                let bias = (0..bias_len).map(|_| rng.gen_range(-0.1..0.1)).collect();
                store.insert(i, weights, bias);
            }
        }
        store
    }

    /// Checks that entries match the model exactly.
    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        for (i, layer) in model.layers().iter().enumerate() {
            match (layer.weight_shape(), self.entries.get(&i)) {
                (Some((shape, bias_len)), Some(e)) => {
                    let n: usize = shape.iter().product();
                    if e.weights.len() != n {
                        return Err(Error::shape(&shape, &[e.weights.len()]).at_layer(i));
                    }
                    if e.bias.len() != bias_len {
                        return Err(Error::shape(&[bias_len], &[e.bias.len()]).at_layer(i));
                    }
                }
                (Some((shape, _)), None) => {
                    return Err(Error::shape(&shape, &[0]).at_layer(i));
                }
                (None, Some(_)) => {
                    return Err(Error::Plan(format!("{} layer carries weights", layer.kind())).at_layer(i));
                }
                (None, None) => {}
            }
        }
        if let Some(&extra) = self.entries.keys().find(|&&k| k >= model.len()) {
            return Err(Error::Plan(format!("weights for layer {extra} beyond model end")));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(WEIGHT_MAGIC)?;
        write_records(&mut w, self.iter())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != WEIGHT_MAGIC {
            return Err(Error::parse(0, "missing PXW1 magic"));
        }
        let mut store = Self::new();
        for (idx, lw) in read_records(&mut r)? {
            store.entries.insert(idx, lw);
        }
        Ok(store)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}

pub(crate) fn write_records<'a, W: Write>(
    w: &mut W,
    records: impl Iterator<Item = (usize, &'a LayerWeights)>,
) -> Result<()> {
    for (idx, e) in records {
        let idx = u32::try_from(idx).map_err(|_| Error::Range("layer index exceeds u32".into()))?;
        w.write_all(&idx.to_le_bytes())?;
        w.write_all(&(e.weights.len() as u64).to_le_bytes())?;
        w.write_all(&(e.bias.len() as u64).to_le_bytes())?;
        for v in e.weights.iter().chain(&e.bias) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub(crate) fn read_records<R: Read>(r: &mut R) -> Result<Vec<(usize, LayerWeights)>> {
    let mut out = Vec::new();
    loop {
        let mut idx = [0u8; 4];
        match r.read_exact(&mut idx) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let mut n = [0u8; 8];
        r.read_exact(&mut n)?;
        let wn = u64::from_le_bytes(n) as usize;
        r.read_exact(&mut n)?;
        let bn = u64::from_le_bytes(n) as usize;
        let read_vals = |r: &mut R, count: usize| -> Result<Vec<f64>> {
            let mut vals = Vec::with_capacity(count);
            let mut b = [0u8; 8];
            for _ in 0..count {
                r.read_exact(&mut b)?;
                vals.push(f64::from_le_bytes(b));
            }
            Ok(vals)
        };
        let weights = read_vals(r, wn)?;
        let bias = read_vals(r, bn)?;
        out.push((u32::from_le_bytes(idx) as usize, LayerWeights { weights, bias }));
    }
    Ok(out)
}
