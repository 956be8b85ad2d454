//! CNN architecture descriptions and their static shape algebra.
//!
//! A [`ModelSpec`] is an ordered chain of [`LayerSpec`]s starting with an
//! `Input` layer and ending with a `Softmax` layer. Every layer knows how to
//! map an input shape to an output shape, so the whole chain can be checked
//! without running any arithmetic.
//!
//! The text form is one layer per line:
//!
//! ```text
//! model name=example
//! input c=1 h=32 w=32
//! conv w=3 h=3 p=1 c=8 stride=1 pad=1 relu=1
//! pool size=4 stride=4
//! flatten
//! fc in=512 out=8 relu=1
//! softmax in=8 out=6
//! ```
//!
//! A bare `softmax` line is a pass-through normalisation with no parameters.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub width: usize,
    pub height: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: usize,
    pub relu: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseSpec {
    pub in_units: usize,
    pub out_units: usize,
    pub relu: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoftmaxSpec {
    /// Normalisation only; contributes no parameters.
    PassThrough,
    /// Affine map followed by normalisation, counted like a dense layer.
    Affine { in_units: usize, out_units: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Input { shape: Vec<usize> },
    Conv(ConvSpec),
    Pool(PoolSpec),
    Flatten,
    Fc(DenseSpec),
    Softmax(SoftmaxSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerKind {
    Input,
    Conv,
    Pool,
    Flatten,
    Fc,
    Softmax,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerKind::Input => "Input",
            LayerKind::Conv => "CONV",
            LayerKind::Pool => "POOL",
            LayerKind::Flatten => "Flatten",
            LayerKind::Fc => "FC",
            LayerKind::Softmax => "Softmax",
        };
        f.write_str(s)
    }
}

fn conv_out(input: usize, kernel: usize, pad: usize, stride: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Input { .. } => LayerKind::Input,
            LayerSpec::Conv(_) => LayerKind::Conv,
            LayerSpec::Pool(_) => LayerKind::Pool,
            LayerSpec::Flatten => LayerKind::Flatten,
            LayerSpec::Fc(_) => LayerKind::Fc,
            LayerSpec::Softmax(_) => LayerKind::Softmax,
        }
    }

    /// True for layers that own a weight and bias entry.
    pub fn has_weights(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv(_) | LayerSpec::Fc(_) | LayerSpec::Softmax(SoftmaxSpec::Affine { .. })
        )
    }

    /// `(weight shape, bias length)` for parameterised layers.
    pub fn weight_shape(&self) -> Option<(Vec<usize>, usize)> {
        match *self {
            LayerSpec::Conv(c) => Some((
                vec![c.out_channels, c.in_channels, c.height, c.width],
                c.out_channels,
            )),
            LayerSpec::Fc(d) => Some((vec![d.out_units, d.in_units], d.out_units)),
            LayerSpec::Softmax(SoftmaxSpec::Affine {
                in_units,
                out_units,
            }) => Some((vec![out_units, in_units], out_units)),
            _ => None,
        }
    }

    fn check_hyper(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Range(format!("{} hyperparameter {what} must be >= 1", self.kind())));
        match self {
            LayerSpec::Input { shape } => {
                if shape.is_empty() || shape.contains(&0) {
                    return bad("shape");
                }
            }
            LayerSpec::Conv(c) => {
                for (v, n) in [
                    (c.width, "w"),
                    (c.height, "h"),
                    (c.in_channels, "p"),
                    (c.out_channels, "c"),
                    (c.stride, "stride"),
                ] {
                    if v == 0 {
                        return bad(n);
                    }
                }
            }
            LayerSpec::Pool(p) => {
                if p.window == 0 {
                    return bad("size");
                }
                if p.stride == 0 {
                    return bad("stride");
                }
            }
            LayerSpec::Fc(d) => {
                if d.in_units == 0 || d.out_units == 0 {
                    return bad("units");
                }
            }
            LayerSpec::Softmax(SoftmaxSpec::Affine {
                in_units,
                out_units,
            }) => {
                if *in_units == 0 || *out_units == 0 {
                    return bad("units");
                }
            }
            LayerSpec::Flatten | LayerSpec::Softmax(SoftmaxSpec::PassThrough) => {}
        }
        Ok(())
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.check_hyper()?;
        let numel: usize = input.iter().product();
        match self {
            LayerSpec::Input { shape } => {
                if input != shape.as_slice() {
                    return Err(Error::shape(shape, input));
                }
                Ok(shape.clone())
            }
            LayerSpec::Conv(c) => {
                if input.len() != 3 || input[0] != c.in_channels {
                    return Err(Error::shape(&[c.in_channels, c.height, c.width], input));
                }
                let oh = conv_out(input[1], c.height, c.padding, c.stride);
                let ow = conv_out(input[2], c.width, c.padding, c.stride);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Ok(vec![c.out_channels, oh, ow]),
                    _ => Err(Error::shape(
                        &[c.in_channels, c.height.saturating_sub(2 * c.padding), c.width.saturating_sub(2 * c.padding)],
                        input,
                    )),
                }
            }
            LayerSpec::Pool(p) => {
                if input.len() != 3 {
                    return Err(Error::shape(&[input.first().copied().unwrap_or(1), p.window, p.window], input));
                }
                let (h, w) = (input[1], input[2]);
                if p.window > h || p.window > w {
                    return Err(Error::shape(&[input[0], p.window, p.window], input));
                }
                if (h - p.window) % p.stride != 0 || (w - p.window) % p.stride != 0 {
                    return Err(Error::Padding(format!(
                        "pool window {} stride {} does not tile a {h}x{w} input",
                        p.window, p.stride
                    )));
                }
                Ok(vec![input[0], (h - p.window) / p.stride + 1, (w - p.window) / p.stride + 1])
            }
            LayerSpec::Flatten => Ok(vec![numel]),
            LayerSpec::Fc(d) => {
                if numel != d.in_units {
                    return Err(Error::shape(&[d.in_units], input));
                }
                Ok(vec![d.out_units])
            }
            LayerSpec::Softmax(SoftmaxSpec::PassThrough) => {
                if input.len() != 1 {
                    return Err(Error::shape(&[numel], input));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Softmax(SoftmaxSpec::Affine { in_units, out_units }) => {
                if numel != *in_units {
                    return Err(Error::shape(&[*in_units], input));
                }
                Ok(vec![*out_units])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    name: String,
    layers: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
}

impl ModelSpec {
    /// Builds a model, checking the Input/Softmax framing and the full shape chain.
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>) -> Result<Self> {
        let input_shape = match layers.first() {
            Some(LayerSpec::Input { shape }) => shape.clone(),
            _ => return Err(Error::Plan("first layer must be Input".into())),
        };
        if !matches!(layers.last(), Some(LayerSpec::Softmax(_))) || layers.len() < 2 {
            return Err(Error::Plan("last layer must be Softmax".into()));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut current = input_shape;
        for (i, layer) in layers.iter().enumerate() {
            if i > 0 && layer.kind() == LayerKind::Input {
                return Err(Error::Plan(format!("Input layer at position {i}")).at_layer(i));
            }
            current = layer.output_shape(&current).map_err(|e| e.at_layer(i))?;
            shapes.push(current.clone());
        }
        Ok(Self {
            name: name.into(),
            layers,
            shapes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    /// Output shape of layer `i`.
    pub fn output_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    /// Shape of the tensor entering layer `boundary` (0 = model input).
    pub fn boundary_shape(&self, boundary: usize) -> &[usize] {
        if boundary == 0 {
            &self.shapes[0]
        } else {
            &self.shapes[boundary - 1]
        }
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().map(|s| s.iter().product()).unwrap_or(0)
    }

    /// The bundled six-layer classifier: benign plus five malware families.
    pub fn example() -> Self {
        Self::new(
            "example",
            vec![
                LayerSpec::Input {
                    shape: vec![1, 32, 32],
                },
                LayerSpec::Conv(ConvSpec {
                    width: 3,
                    height: 3,
                    in_channels: 1,
                    out_channels: 8,
                    stride: 1,
                    padding: 1,
                    relu: true,
                }),
                LayerSpec::Pool(PoolSpec { window: 4, stride: 4 }),
                LayerSpec::Flatten,
                LayerSpec::Fc(DenseSpec {
                    in_units: 512,
                    out_units: 8,
                    relu: true,
                }),
                LayerSpec::Softmax(SoftmaxSpec::Affine {
                    in_units: 8,
                    out_units: 6,
                }),
            ],
        )
        .expect("bundled example model is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut name = String::from("model");
        let mut layers = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = ln + 1;
            let mut parts = line.split_whitespace();
            let head = parts.next().unwrap_or_default().to_ascii_lowercase();
            let kv = parse_kv(parts, lineno)?;
            let get = |k: &str| -> Result<usize> {
                kv.get(k)
                    .ok_or_else(|| Error::parse(lineno, format!("missing key `{k}`")))?
                    .parse::<usize>()
                    .map_err(|e| Error::parse(lineno, format!("`{k}`: {e}")))
            };
            let get_or = |k: &str, d: usize| -> Result<usize> {
                if kv.contains_key(k) {
                    get(k)
                } else {
                    Ok(d)
                }
            };
            let layer = match head.as_str() {
                "model" => {
                    if let Some(n) = kv.get("name") {
                        name = n.clone();
                    }
                    continue;
                }
                "input" => {
                    if kv.contains_key("n") {
                        LayerSpec::Input { shape: vec![get("n")?] }
                    } else {
                        LayerSpec::Input {
                            shape: vec![get("c")?, get("h")?, get("w")?],
                        }
                    }
                }
                "conv" => LayerSpec::Conv(ConvSpec {
                    width: get("w")?,
                    height: get("h")?,
                    in_channels: get("p")?,
                    out_channels: get("c")?,
                    stride: get_or("stride", 1)?,
                    padding: get_or("pad", 0)?,
                    relu: get_or("relu", 1)? != 0,
                }),
                "pool" => {
                    let window = get("size")?;
                    LayerSpec::Pool(PoolSpec {
                        window,
                        stride: get_or("stride", window)?,
                    })
                }
                "flatten" => LayerSpec::Flatten,
                "fc" => LayerSpec::Fc(DenseSpec {
                    in_units: get("in")?,
                    out_units: get("out")?,
                    relu: get_or("relu", 1)? != 0,
                }),
                "softmax" => {
                    if kv.contains_key("in") || kv.contains_key("out") {
                        LayerSpec::Softmax(SoftmaxSpec::Affine {
                            in_units: get("in")?,
                            out_units: get("out")?,
                        })
                    } else {
                        LayerSpec::Softmax(SoftmaxSpec::PassThrough)
                    }
                }
                other => return Err(Error::parse(lineno, format!("unknown layer kind `{other}`"))),
            };
            layers.push(layer);
        }
        Self::new(name, layers)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("model name={}\n", self.name);
        for layer in &self.layers {
            let line = match layer {
                LayerSpec::Input { shape } => match shape.as_slice() {
                    [c, h, w] => format!("input c={c} h={h} w={w}"),
                    [n] => format!("input n={n}"),
                    other => format!("input n={}", other.iter().product::<usize>()),
                },
                LayerSpec::Conv(c) => format!(
                    "conv w={} h={} p={} c={} stride={} pad={} relu={}",
                    c.width, c.height, c.in_channels, c.out_channels, c.stride, c.padding, c.relu as u8
                ),
                LayerSpec::Pool(p) => format!("pool size={} stride={}", p.window, p.stride),
                LayerSpec::Flatten => "flatten".to_string(),
                LayerSpec::Fc(d) => format!("fc in={} out={} relu={}", d.in_units, d.out_units, d.relu as u8),
                LayerSpec::Softmax(SoftmaxSpec::PassThrough) => "softmax".to_string(),
                LayerSpec::Softmax(SoftmaxSpec::Affine { in_units, out_units }) => {
                    format!("softmax in={in_units} out={out_units}")
                }
            };
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

/// Parses `key=value` tokens of one line.
pub(crate) fn parse_kv<'a>(
    tokens: impl Iterator<Item = &'a str>,
    lineno: usize,
) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::parse(lineno, format!("expected key=value, got `{tok}`")))?;
        map.insert(k.to_ascii_lowercase(), v.to_string());
    }
    Ok(map)
}

/// Bounds for [`random_model`].
#[derive(Debug, Clone)]
pub struct RandomModelConfig {
    pub max_side: usize,
    pub max_channels: usize,
    pub max_conv_blocks: usize,
    pub max_hidden_fc: usize,
    pub max_units: usize,
    pub max_classes: usize,
}

impl Default for RandomModelConfig {
    fn default() -> Self {
        Self {
            max_side: 12,
            max_channels: 4,
            max_conv_blocks: 3,
            max_hidden_fc: 2,
            max_units: 24,
            max_classes: 6,
        }
    }
}

/// Draws a random, shape-valid model.
pub fn random_model<R: Rng + ?Sized>(rng: &mut R, cfg: &RandomModelConfig) -> ModelSpec {
    let channels = rng.gen_range(1..=cfg.max_channels);
    let side = rng.gen_range(4..=cfg.max_side.max(4));
    let mut layers = vec![LayerSpec::Input {
        shape: vec![channels, side, side],
    }];
    let mut shape = vec![channels, side, side];
    for _ in 0..rng.gen_range(0..=cfg.max_conv_blocks) {
        let k = rng.gen_range(1..=3usize).min(shape[1]);
        let pad = rng.gen_range(0..=1usize);
        let out_c = rng.gen_range(1..=cfg.max_channels);
        let conv = LayerSpec::Conv(ConvSpec {
            width: k,
            height: k,
            in_channels: shape[0],
            out_channels: out_c,
            stride: rng.gen_range(1..=2),
            padding: pad,
            relu: rng.gen_bool(0.8),
        });
        if let Ok(s) = conv.output_shape(&shape) {
            layers.push(conv);
            shape = s;
        }
        if rng.gen_bool(0.5) && shape[1] >= 2 && shape[2] >= 2 {
            let window = 2;
            let stride = if (shape[1] - window) % 2 == 0 && (shape[2] - window) % 2 == 0 {
                2
            } else {
                1
            };
            let pool = LayerSpec::Pool(PoolSpec { window, stride });
            if let Ok(s) = pool.output_shape(&shape) {
                layers.push(pool);
                shape = s;
            }
        }
    }
    layers.push(LayerSpec::Flatten);
    let mut units: usize = shape.iter().product();
    for _ in 0..rng.gen_range(0..=cfg.max_hidden_fc) {
        let out = rng.gen_range(2..=cfg.max_units);
        layers.push(LayerSpec::Fc(DenseSpec {
            in_units: units,
            out_units: out,
            relu: rng.gen_bool(0.8),
        }));
        units = out;
    }
    let classes = rng.gen_range(2..=cfg.max_classes.max(2));
    if rng.gen_bool(0.5) {
        layers.push(LayerSpec::Softmax(SoftmaxSpec::Affine {
            in_units: units,
            out_units: classes,
        }));
    } else {
        layers.push(LayerSpec::Fc(DenseSpec {
            in_units: units,
            out_units: classes,
            relu: false,
        }));
        layers.push(LayerSpec::Softmax(SoftmaxSpec::PassThrough));
    }
    ModelSpec::new("random", layers).expect("random model construction keeps shapes valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn example_shapes() {
        let m = ModelSpec::example();
        assert_eq!(m.len(), 6);
        assert_eq!(m.output_shape(1), &[8, 32, 32]);
        assert_eq!(m.output_shape(2), &[8, 8, 8]);
        assert_eq!(m.output_shape(3), &[512]);
        assert_eq!(m.num_classes(), 6);
    }

    #[test]
    fn conv_arithmetic() {
        let conv = LayerSpec::Conv(ConvSpec {
            width: 3,
            height: 3,
            in_channels: 2,
            out_channels: 5,
            stride: 2,
            padding: 1,
            relu: true,
        });
        // floor((7 + 2 - 3) / 2) + 1 = 4
        assert_eq!(conv.output_shape(&[2, 7, 7]).unwrap(), vec![5, 4, 4]);
        assert!(matches!(conv.output_shape(&[3, 7, 7]), Err(Error::Shape { .. })));
    }

    #[test]
    fn pool_errors() {
        let pool = LayerSpec::Pool(PoolSpec { window: 2, stride: 2 });
        assert!(matches!(pool.output_shape(&[1, 5, 4]), Err(Error::Padding(_))));
        let big = LayerSpec::Pool(PoolSpec { window: 8, stride: 8 });
        assert!(matches!(big.output_shape(&[1, 4, 4]), Err(Error::Shape { .. })));
    }

    #[test]
    fn framing_is_enforced() {
        let no_softmax = vec![LayerSpec::Input { shape: vec![3] }, LayerSpec::Flatten];
        assert!(ModelSpec::new("x", no_softmax).is_err());
        let bad_chain = vec![
            LayerSpec::Input { shape: vec![3] },
            LayerSpec::Fc(DenseSpec {
                in_units: 4,
                out_units: 2,
                relu: true,
            }),
            LayerSpec::Softmax(SoftmaxSpec::PassThrough),
        ];
        match ModelSpec::new("x", bad_chain) {
            Err(Error::Layer { index: 1, .. }) => {}
            other => panic!("expected layer 1 error, got {other:?}"),
        }
    }

    #[test]
    fn text_round_trip() {
        let m = ModelSpec::example();
        let back = ModelSpec::parse(&m.to_text()).unwrap();
        assert_eq!(m, back);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let r = random_model(&mut rng, &RandomModelConfig::default());
            assert_eq!(ModelSpec::parse(&r.to_text()).unwrap(), r);
        }
    }

    #[test]
    fn parse_defaults_and_errors() {
        let m = ModelSpec::parse("input n=4\nfc in=4 out=3\nsoftmax\n").unwrap();
        assert_eq!(
            m.layers()[1],
            LayerSpec::Fc(DenseSpec {
                in_units: 4,
                out_units: 3,
                relu: true
            })
        );
        assert!(matches!(
            ModelSpec::parse("input n=4\nwat\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
