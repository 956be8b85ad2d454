//! Hardware-performance-counter traces: CSV ingestion, conversion to
//! grayscale images, and correlation-based event ranking.

use std::cmp::Ordering;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::imaging::{quantize_pixel, resize_area, ClassLabel, GrayImage};

#[derive(Debug, Clone, PartialEq)]
pub struct HpcTrace {
    events: Vec<String>,
    samples: Vec<Vec<f64>>,
    /// Seconds between consecutive samples.
    pub sample_period: f64,
    pub label: Option<ClassLabel>,
}

impl HpcTrace {
    pub fn new(events: Vec<String>, samples: Vec<Vec<f64>>) -> Result<Self> {
        for (i, row) in samples.iter().enumerate() {
            if row.len() != events.len() {
                return Err(Error::Range(format!(
                    "sample row {i} has {} entries for {} events",
                    row.len(),
                    events.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::Range(format!("sample row {i} has invalid count {v}")));
            }
        }
        Ok(Self {
            events,
            samples,
            sample_period: 1e-8,
            label: None,
        })
    }

    pub fn with_label(mut self, label: ClassLabel) -> Self {
        self.label = Some(label);
        self
    }

    pub fn events(&self) -> &[String] {
        &self.events
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn column(&self, event: usize) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(move |r| r[event])
    }

    /// Header row of event names with a final `label` column; one row per sample.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
        let headers = rdr.headers().map_err(csv_err)?.clone();
        let label_col = headers.iter().position(|h| h.eq_ignore_ascii_case("label"));
        let events: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != label_col)
            .map(|(_, h)| h.to_string())
            .collect();
        let mut samples = Vec::new();
        let mut label: Option<ClassLabel> = None;
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let line = i + 2;
            let mut row = Vec::with_capacity(events.len());
            for (j, field) in rec.iter().enumerate() {
                if Some(j) == label_col {
                    let l: ClassLabel = field.parse().map_err(|e: Error| Error::parse(line, e.to_string()))?;
                    match label {
                        Some(prev) if prev != l => {
                            return Err(Error::parse(line, format!("label {l} differs from {prev}")));
                        }
                        _ => label = Some(l),
                    }
                } else {
                    row.push(
                        field
                            .parse::<f64>()
                            .map_err(|e| Error::parse(line, format!("count `{field}`: {e}")))?,
                    );
                }
            }
            samples.push(row);
        }
        let mut trace = Self::new(events, samples)?;
        trace.label = label;
        Ok(trace)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = self.events.iter().map(String::as_str).collect();
        header.push("label");
        wtr.write_record(&header).map_err(csv_err)?;
        let label = self.label.map(|l| l.to_string()).unwrap_or_default();
        for row in &self.samples {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(label.clone());
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::parse(line, e.to_string())
}

/// Per-column min-max normalisation to `[0, 255]` (constant columns map to 0),
/// then area resampling of the samples x events grid to a square image.
pub fn hpc_to_grayscale(trace: &HpcTrace, target_side: usize) -> Result<GrayImage> {
    let rows = trace.samples.len();
    let cols = trace.events.len();
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyInput("trace needs at least one sample and one event".into()));
    }
    let mut grid = vec![0.0; rows * cols];
    for c in 0..cols {
        let (lo, hi) = trace
            .column(c)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        for (r, v) in trace.column(c).enumerate() {
            grid[r * cols + c] = if range > 0.0 { (v - lo) / range * 255.0 } else { 0.0 };
        }
    }
    let values = resize_area(&grid, rows, cols, target_side, target_side)?;
    let mut img = GrayImage::new(target_side, values.into_iter().map(quantize_pixel).collect())?;
    img.label = trace.label;
    Ok(img)
}

/// How a trace column collapses to one scalar per application.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
    Variance,
}

impl Aggregation {
    fn apply(self, values: impl Iterator<Item = f64>) -> f64 {
        let v: Vec<f64> = values.collect();
        let n = v.len() as f64;
        match self {
            Aggregation::Mean => v.iter().sum::<f64>() / n,
            Aggregation::Max => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregation::Variance => {
                let m = v.iter().sum::<f64>() / n;
                v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
            }
        }
    }
}

/// Pearson correlation via a single streaming pass over co-moments.
/// `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, (&a, &b)) in x.iter().zip(y).enumerate() {
        let n = (i + 1) as f64;
        let dx = a - mx;
        let dy = b - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (a - mx);
        syy += dy * (b - my);
        sxy += dx * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventScore {
    pub event: String,
    /// `None` marks an event with zero variance across applications.
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventRanking {
    pub entries: Vec<EventScore>,
}

impl EventRanking {
    /// Orders scores by `|rho|` descending, then name; undefined scores go last.
    pub fn from_scores(mut entries: Vec<EventScore>) -> Self {
        entries.sort_by(|a, b| match (a.rho, b.rho) {
            (Some(x), Some(y)) => y.abs().total_cmp(&x.abs()).then_with(|| a.event.cmp(&b.event)),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => a.event.cmp(&b.event),
        });
        Self { entries }
    }

    pub fn defined(&self) -> impl Iterator<Item = &EventScore> {
        self.entries.iter().filter(|e| e.rho.is_some())
    }

    pub fn undefined(&self) -> impl Iterator<Item = &EventScore> {
        self.entries.iter().filter(|e| e.rho.is_none())
    }
}

/// Ranks events by how strongly their per-application scalar correlates with
/// the class index.
pub fn rank_events(traces: &[(HpcTrace, usize)], aggregation: Aggregation) -> Result<EventRanking> {
    if traces.len() < 2 {
        return Err(Error::EmptyInput("ranking needs at least two traces".into()));
    }
    let events = traces[0].0.events();
    if let Some((t, _)) = traces.iter().find(|(t, _)| t.events() != events) {
        return Err(Error::Label(format!(
            "traces disagree on events: {:?} vs {:?}",
            events,
            t.events()
        )));
    }
    if let Some((t, _)) = traces.iter().find(|(t, _)| t.samples().is_empty()) {
        return Err(Error::EmptyInput(format!("trace with events {:?} has no samples", t.events())));
    }
    let labels: Vec<f64> = traces.iter().map(|(_, z)| *z as f64).collect();
    if labels.iter().all(|&z| z == labels[0]) {
        return Err(Error::DegenerateLabels("all traces carry the same label".into()));
    }
    let scores = events
        .iter()
        .enumerate()
        .map(|(e, name)| {
            let scalars: Vec<f64> = traces.iter().map(|(t, _)| aggregation.apply(t.column(e))).collect();
            EventScore {
                event: name.clone(),
                rho: pearson(&scalars, &labels),
            }
        })
        .collect();
    Ok(EventRanking::from_scores(scores))
}

pub fn select_top_k(ranking: &EventRanking, k: usize) -> Result<Vec<String>> {
    let available = ranking.defined().count();
    if k == 0 || k > available {
        return Err(Error::Range(format!("k = {k} but {available} events have a defined correlation")));
    }
    Ok(ranking.defined().take(k).map(|e| e.event.clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_with_mean(events: &[&str], means: &[f64]) -> HpcTrace {
        HpcTrace::new(events.iter().map(|s| s.to_string()).collect(), vec![means.to_vec()]).unwrap()
    }

    #[test]
    fn single_event_min_max() {
        let t = HpcTrace::new(vec!["e".into()], vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        // identity-width resize: 4 rows x 1 col -> 4x4, each row constant
        let img = hpc_to_grayscale(&t, 4).unwrap();
        for (r, want) in [0u8, 85, 170, 255].iter().enumerate() {
            assert!((0..4).all(|c| img.get(r, c) == *want));
        }
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let t = HpcTrace::new(vec!["e".into()], vec![vec![7.0]; 3]).unwrap();
        let img = hpc_to_grayscale(&t, 3).unwrap();
        assert!(img.pixels().iter().all(|&p| p == 0));
    }

    #[test]
    fn two_by_two_corners() {
        let t = HpcTrace::new(vec!["a".into(), "b".into()], vec![vec![0.0, 100.0], vec![10.0, 100.0]]).unwrap();
        let img = hpc_to_grayscale(&t, 256).unwrap();
        assert_eq!(
            [img.get(0, 0), img.get(0, 255), img.get(255, 0), img.get(255, 255)],
            [0, 0, 255, 0]
        );
    }

    #[test]
    fn empty_trace() {
        let t = HpcTrace::new(vec!["a".into()], vec![]).unwrap();
        assert!(matches!(hpc_to_grayscale(&t, 8), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn perfect_correlations_and_degenerate_event() {
        let ev = ["up", "down", "flat"];
        let traces: Vec<(HpcTrace, usize)> = [(1.0, 3.0, 1.0), (2.0, 2.0, 1.0), (3.0, 1.0, 1.0)]
            .iter()
            .zip([2usize, 4, 6])
            .map(|(&(a, b, c), z)| (trace_with_mean(&ev, &[a, b, c]), z))
            .collect();
        let r = rank_events(&traces, Aggregation::Mean).unwrap();
        assert_eq!(r.entries[0].event, "down");
        assert_eq!(r.entries[0].rho, Some(-1.0));
        assert_eq!(r.entries[1].event, "up");
        assert_eq!(r.entries[1].rho, Some(1.0));
        assert_eq!(r.entries[2].event, "flat");
        assert_eq!(r.entries[2].rho, None);
        assert_eq!(select_top_k(&r, 2).unwrap(), vec!["down", "up"]);
        assert!(matches!(select_top_k(&r, 3), Err(Error::Range(_))));
    }

    #[test]
    fn degenerate_labels() {
        let traces = vec![
            (trace_with_mean(&["a"], &[1.0]), 1),
            (trace_with_mean(&["a"], &[2.0]), 1),
        ];
        assert!(matches!(
            rank_events(&traces, Aggregation::Mean),
            Err(Error::DegenerateLabels(_))
        ));
    }

    #[test]
    fn select_examples() {
        let r = EventRanking::from_scores(vec![
            EventScore {
                event: "b".into(),
                rho: Some(0.5),
            },
            EventScore {
                event: "a".into(),
                rho: Some(0.9),
            },
        ]);
        assert_eq!(select_top_k(&r, 1).unwrap(), vec!["a"]);
        assert_eq!(select_top_k(&r, 2).unwrap(), vec!["a", "b"]);
    }

    #[test]
    fn csv_round_trip() {
        let text = "cycles,branch_misses,label\n10,1,trojan\n20,3,trojan\n";
        let t = HpcTrace::read_csv(text.as_bytes()).unwrap();
        assert_eq!(t.events(), &["cycles", "branch_misses"]);
        assert_eq!(t.samples()[1], vec![20.0, 3.0]);
        assert_eq!(t.label.unwrap().class_index(), 3);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(HpcTrace::read_csv(&buf[..]).unwrap(), t);
        assert!(HpcTrace::read_csv("a,label\n1,worm\n2,virus\n".as_bytes()).is_err());
        assert!(HpcTrace::read_csv("a,label\n-1,worm\n".as_bytes()).is_err());
    }
}
