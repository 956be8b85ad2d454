//! Grayscale feature images: class labels, area-average resampling, binary
//! layout, and PGM (P5) I/O.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_SIDE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SampleKind {
    Benign,
    Malware,
    Obfuscated,
    Stealthy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Backdoor,
    Rootkit,
    Trojan,
    Virus,
    Worm,
    None,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Backdoor, Family::Rootkit, Family::Trojan, Family::Virus, Family::Worm];

    fn name(self) -> &'static str {
        match self {
            Family::Backdoor => "backdoor",
            Family::Rootkit => "rootkit",
            Family::Trojan => "trojan",
            Family::Virus => "virus",
            Family::Worm => "worm",
            Family::None => "none",
        }
    }
}

/// Sample class: benign, or a (possibly obfuscated/stealthy) malware family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassLabel {
    pub kind: SampleKind,
    pub family: Family,
}

impl ClassLabel {
    pub const BENIGN: ClassLabel = ClassLabel {
        kind: SampleKind::Benign,
        family: Family::None,
    };

    pub fn malware(family: Family) -> Self {
        Self {
            kind: SampleKind::Malware,
            family,
        }
    }

    /// benign = 0, backdoor = 1, rootkit = 2, trojan = 3, virus = 4, worm = 5.
    pub fn class_index(&self) -> usize {
        match (self.kind, self.family) {
            (SampleKind::Benign, _) | (_, Family::None) => 0,
            (_, f) => 1 + Family::ALL.iter().position(|&x| x == f).unwrap_or(0),
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Self::BENIGN),
            1..=5 => Ok(Self::malware(Family::ALL[i - 1])),
            _ => Err(Error::Label(format!("class index {i} outside 0..=5"))),
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.kind {
            SampleKind::Benign => return f.write_str("B"),
            SampleKind::Malware => "M",
            SampleKind::Obfuscated => "M_O",
            SampleKind::Stealthy => "M_ST",
        };
        write!(f, "{prefix}:{}", self.family.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    /// Accepts `B`, `benign`, a class index, a bare family name, or `KIND:family`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(i) = s.parse::<usize>() {
            return Self::from_index(i);
        }
        let lower = s.to_ascii_lowercase();
        if lower == "b" || lower == "benign" {
            return Ok(Self::BENIGN);
        }
        let (kind, fam) = match lower.split_once(':') {
            Some((k, f)) => {
                let kind = match k {
                    "m" => SampleKind::Malware,
                    "m_o" => SampleKind::Obfuscated,
                    "m_st" => SampleKind::Stealthy,
                    "b" => SampleKind::Benign,
                    _ => return Err(Error::Label(format!("unknown sample kind `{k}`"))),
                };
                (kind, f)
            }
            None => (SampleKind::Malware, lower.as_str()),
        };
        let family = Family::ALL
            .iter()
            .chain(std::iter::once(&Family::None))
            .find(|f| f.name() == fam)
            .copied()
            .ok_or_else(|| Error::Label(format!("unknown label `{s}`")))?;
        Ok(Self { kind, family })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    side: usize,
    pixels: Vec<u8>,
    pub label: Option<ClassLabel>,
}

impl GrayImage {
    pub fn new(side: usize, pixels: Vec<u8>) -> Result<Self> {
        if side == 0 {
            return Err(Error::Range("image side must be positive".into()));
        }
        if pixels.len() != side * side {
            return Err(Error::shape(&[side * side], &[pixels.len()]));
        }
        Ok(Self {
            side,
            pixels,
            label: None,
        })
    }

    pub fn with_label(mut self, label: ClassLabel) -> Self {
        self.label = Some(label);
        self
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.side + col]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as u64).sum::<u64>() as f64 / self.pixels.len() as f64
    }

    pub fn resized(&self, side: usize) -> Result<GrayImage> {
        let src: Vec<f64> = self.pixels.iter().map(|&p| p as f64).collect();
        let mut img = quantize(side, &resize_area(&src, self.side, self.side, side, side)?)?;
        img.label = self.label;
        Ok(img)
    }

    /// Pixels scaled to `[0, 1]` as a `[1, side, side]` tensor.
    pub fn to_unit_tensor(&self) -> Tensor {
        Tensor::new(
            vec![1, self.side, self.side],
            self.pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        )
        .expect("pixel count matches side")
    }

    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.side, self.side)?;
        w.write_all(&self.pixels)?;
        Ok(())
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.pixels.len() + 16);
        self.write_pgm(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Reads a square binary PGM with maxval 255.
    pub fn read_pgm<R: Read>(mut r: R) -> Result<GrayImage> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::parse(0, "truncated PGM header"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        pos += 1;
        if fields[0] != "P5" {
            return Err(Error::parse(0, format!("unsupported PGM magic `{}`", fields[0])));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| Error::parse(0, format!("PGM header: {e}")));
        let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if w != h {
            return Err(Error::shape(&[w, w], &[h, w]));
        }
        if max != 255 {
            return Err(Error::parse(0, format!("PGM maxval {max} unsupported")));
        }
        let data = bytes.get(pos..pos + w * h).ok_or_else(|| Error::parse(0, "truncated PGM raster"))?;
        GrayImage::new(w, data.to_vec())
    }
}

/// Round-half-up into `[0, 255]`.
pub fn quantize_pixel(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn quantize(side: usize, values: &[f64]) -> Result<GrayImage> {
    GrayImage::new(side, values.iter().map(|&v| quantize_pixel(v)).collect())
}

/// Integer overlap weights mapping `src` cells onto `dst` cells along one axis.
/// Source cell `s` spans `[s*dst, (s+1)*dst)`, target cell `d` spans
/// `[d*src, (d+1)*src)`, so every weight is an exact integer and each target's
/// weights sum to `src`.
fn axis_weights(src: usize, dst: usize) -> Vec<Vec<(usize, u64)>> {
    (0..dst)
        .map(|d| {
            let lo = d * src;
            let hi = (d + 1) * src;
            let first = lo / dst;
            let last = (hi - 1) / dst;
            (first..=last)
                .filter_map(|s| {
                    let a = lo.max(s * dst);
                    let b = hi.min((s + 1) * dst);
                    (b > a).then_some((s, (b - a) as u64))
                })
                .collect()
        })
        .collect()
}

/// Box-filter resampling of a `rows x cols` grid to `out_rows x out_cols`.
/// The mean value is preserved exactly up to floating-point rounding.
pub fn resize_area(src: &[f64], rows: usize, cols: usize, out_rows: usize, out_cols: usize) -> Result<Vec<f64>> {
    if rows == 0 || cols == 0 || out_rows == 0 || out_cols == 0 {
        return Err(Error::EmptyInput("resize of an empty grid".into()));
    }
    if src.len() != rows * cols {
        return Err(Error::shape(&[rows, cols], &[src.len()]));
    }
    let wx = axis_weights(cols, out_cols);
    let wy = axis_weights(rows, out_rows);
    let mut tmp = vec![0.0; rows * out_cols];
    for r in 0..rows {
        let row = &src[r * cols..(r + 1) * cols];
        for (ox, ws) in wx.iter().enumerate() {
            let mut acc = 0.0;
            for &(sx, w) in ws {
                acc += row[sx] * w as f64;
            }
            tmp[r * out_cols + ox] = acc;
        }
    }
    let norm = (rows * cols) as f64;
    let mut out = vec![0.0; out_rows * out_cols];
    for (oy, ws) in wy.iter().enumerate() {
        for ox in 0..out_cols {
            let mut acc = 0.0;
            for &(sy, w) in ws {
                acc += tmp[sy * out_cols + ox] * w as f64;
            }
            out[oy * out_cols + ox] = acc / norm;
        }
    }
    Ok(out)
}

/// Lays bytes out at `row_width` pixels per row (last row zero padded) and
/// resamples to a `target_side` square.
pub fn binary_to_grayscale(bytes: &[u8], row_width: usize, target_side: usize) -> Result<GrayImage> {
    if bytes.is_empty() {
        return Err(Error::EmptyInput("binary has no bytes".into()));
    }
    if row_width == 0 || target_side == 0 {
        return Err(Error::Range("row width and target side must be positive".into()));
    }
    let rows = bytes.len().div_ceil(row_width);
    let mut grid = vec![0.0; rows * row_width];
    for (dst, &b) in grid.iter_mut().zip(bytes) {
        *dst = b as f64;
    }
    quantize(target_side, &resize_area(&grid, rows, row_width, target_side, target_side)?)
}
