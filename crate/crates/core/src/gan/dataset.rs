use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{quantize_pixel, ClassLabel, GrayImage};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub images: Vec<GrayImage>,
    /// Hex SHA-256 of the generator that produced the images.
    pub generator_checksum: String,
    pub seed: u64,
    pub label: Option<ClassLabel>,
}

impl SyntheticDataset {
    pub fn empty() -> Self {
        Self {
            images: Vec::new(),
            generator_checksum: String::new(),
            seed: 0,
            label: None,
        }
    }

    /// Tags the dataset and every image with `label`.
    pub fn with_label(mut self, label: Option<ClassLabel>) -> Self {
        self.label = label;
        for img in &mut self.images {
            img.label = label;
        }
        self
    }

    pub fn manifest(&self) -> String {
        format!(
            "seed={}\nchecksum={}\ncount={}\nlabel={}\n",
            self.seed,
            self.generator_checksum,
            self.images.len(),
            self.label.map(|l| l.to_string()).unwrap_or_else(|| "none".into())
        )
    }

    /// Writes `synth_NNNNN.pgm` files plus the manifest into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (i, img) in self.images.iter().enumerate() {
            fs::write(dir.join(format!("synth_{i:05}.pgm")), img.to_pgm())?;
        }
        fs::write(dir.join(MANIFEST_FILE), self.manifest())?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let mut out = Self::empty();
        let mut count = None;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(ln + 1, format!("expected key=value, got `{line}`")))?;
            match k {
                "seed" => out.seed = v.parse().map_err(|_| Error::parse(ln + 1, "bad seed"))?,
                "checksum" => out.generator_checksum = v.to_string(),
                "count" => count = Some(v.parse::<usize>().map_err(|_| Error::parse(ln + 1, "bad count"))?),
                "label" if v == "none" => out.label = None,
                "label" => out.label = Some(v.parse()?),
                _ => return Err(Error::parse(ln + 1, format!("unknown manifest key `{k}`"))),
            }
        }
        let count = count.ok_or_else(|| Error::parse(0, "manifest lacks count"))?;
        for i in 0..count {
            let bytes = fs::read(dir.join(format!("synth_{i:05}.pgm")))?;
            let mut img = GrayImage::read_pgm(bytes.as_slice())?;
            img.label = out.label;
            out.images.push(img);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<GrayImage>,
    pub test: Vec<GrayImage>,
}

/// Number of training items for a 70/30 split, rounded half up.
pub fn train_count(n: usize) -> usize {
    (n * 7 + 5) / 10
}

/// Splits real and synthetic items 70/30 separately, then merges per split.
pub fn augment(real: &[GrayImage], synth: &SyntheticDataset, seed: u64) -> Result<SplitDataset> {
    if real.is_empty() && synth.images.is_empty() {
        return Err(Error::EmptyInput("no real or synthetic images".into()));
    }
    let mut label = synth.label;
    for img in real.iter().chain(&synth.images) {
        match (label, img.label) {
            (None, l) => label = l,
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Label(format!("mixed labels {a} and {b}")));
            }
            _ => {}
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = |items: Vec<GrayImage>| {
        let mut items = items;
        items.shuffle(&mut rng);
        let test = items.split_off(train_count(items.len()));
        (items, test)
    };
    let (mut train, mut test) = split(real.to_vec());
    let synth_imgs = synth
        .images
        .iter()
        .cloned()
        .map(|mut i| {
            i.label = i.label.or(synth.label);
            i
        })
        .collect();
    let (st, ss) = split(synth_imgs);
    train.extend(st);
    test.extend(ss);
    Ok(SplitDataset { train, test })
}

/// Toy "real" distribution: each image holds one bright blob at one of two
/// fixed centres, with random amplitude and pixel noise.
pub fn two_blob_images(n: usize, side: usize, seed: u64) -> Vec<GrayImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = side as f64;
    let centres = [(s * 0.25, s * 0.3), (s * 0.7, s * 0.65)];
    let sigma = (s / 6.0).max(0.5);
    (0..n)
        .map(|_| {
            let (cr, cc) = centres[rng.gen_range(0..2)];
            let amp = rng.gen_range(170.0..255.0);
            let px = (0..side * side)
                .map(|i| {
                    let (r, c) = ((i / side) as f64 + 0.5, (i % side) as f64 + 0.5);
                    let v = amp * (-((r - cr).powi(2) + (c - cc).powi(2)) / (2.0 * sigma * sigma)).exp();
                    quantize_pixel(v + rng.gen_range(-12.0..12.0))
                })
                .collect();
            GrayImage::new(side, px).expect("side*side pixels")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Family;

    fn imgs(n: usize, tag: u8) -> Vec<GrayImage> {
        (0..n).map(|i| GrayImage::new(2, vec![tag, i as u8, 0, 0]).unwrap()).collect()
    }

    fn synth(n: usize) -> SyntheticDataset {
        SyntheticDataset {
            images: imgs(n, 200),
            generator_checksum: "abc".into(),
            seed: 4,
            label: None,
        }
    }

    #[test]
    fn ten_plus_ten() {
        let s = augment(&imgs(10, 1), &synth(10), 0).unwrap();
        assert_eq!(s.train.len(), 14);
        assert_eq!(s.test.len(), 6);
        assert_eq!(s.train.iter().filter(|i| i.get(0, 0) == 200).count(), 7);
    }

    #[test]
    fn no_synthetic_is_plain_split() {
        let s = augment(&imgs(10, 1), &SyntheticDataset::empty(), 0).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (7, 3));
    }

    #[test]
    fn split_is_deterministic() {
        let real = imgs(100, 3);
        let a = augment(&real, &SyntheticDataset::empty(), 42).unwrap();
        let b = augment(&real, &SyntheticDataset::empty(), 42).unwrap();
        assert_eq!(a, b);
        let c = augment(&real, &SyntheticDataset::empty(), 43).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn rejects_empty_and_mixed() {
        assert!(matches!(
            augment(&[], &SyntheticDataset::empty(), 0),
            Err(Error::EmptyInput(_))
        ));
        let mut real = imgs(2, 0);
        real[0].label = Some(ClassLabel::BENIGN);
        let s = synth(2).with_label(Some(ClassLabel::malware(Family::Virus)));
        assert!(matches!(augment(&real, &s, 0), Err(Error::Label(_))));
    }

    #[test]
    fn synthetic_label_propagates() {
        let l = ClassLabel::malware(Family::Trojan);
        let s = augment(&imgs(3, 0), &synth(3).with_label(Some(l)), 1).unwrap();
        assert!(s.train.iter().chain(&s.test).filter(|i| i.get(0, 0) == 200).all(|i| i.label == Some(l)));
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = synth(3).with_label(Some(ClassLabel::BENIGN));
        d.write_dir(dir.path()).unwrap();
        assert_eq!(SyntheticDataset::read_dir(dir.path()).unwrap(), d);
        let m = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(m.contains("count=3") && m.contains("checksum=abc"));
    }

    #[test]
    fn blobs_are_brighter_at_centres() {
        let set = two_blob_images(20, 8, 1);
        let mean = |r, c| set.iter().map(|i| i.get(r, c) as f64).sum::<f64>() / 20.0;
        assert!(mean(2, 2) > 60.0);
        assert!(set.iter().any(|i| i.get(2, 2) < 40));
        assert!(mean(7, 0) < 30.0);
        assert_eq!(set, two_blob_images(20, 8, 1));
    }
}
