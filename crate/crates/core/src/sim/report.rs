//! Speedup and per-node resource summaries of simulated runs.

use std::fmt::Write as _;

use super::SimResult;
use crate::error::{Error, Result};

const BAR_WIDTH: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRow {
    pub node: String,
    pub busy_seconds: f64,
    pub compute_seconds: f64,
    pub assigned_bytes: u64,
    pub peak_bytes: u64,
    pub messages_sent: u64,
    pub messages_received: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub baseline_makespan: f64,
    pub makespan: f64,
    pub speedup: f64,
    pub replans: usize,
    pub checksum_failures: usize,
    /// Outputs of the two runs are bitwise equal.
    pub output_match: bool,
    pub rows: Vec<NodeRow>,
}

/// Compares `result` against a `baseline` run of the same model and input.
pub fn report(result: &SimResult, baseline: &SimResult) -> Result<Report> {
    if result.samples != baseline.samples {
        return Err(Error::Report(format!(
            "runs cover {} and {} samples",
            result.samples, baseline.samples
        )));
    }
    if result.output.shape() != baseline.output.shape() {
        return Err(Error::Report(format!(
            "output shapes differ: {:?} vs {:?}",
            result.output.shape(),
            baseline.output.shape()
        )));
    }
    if result.layer_execs.len() != baseline.layer_execs.len() {
        return Err(Error::Report(format!(
            "models differ: {} vs {} layers",
            result.layer_execs.len(),
            baseline.layer_execs.len()
        )));
    }
    if !(result.makespan > 0.0 && baseline.makespan > 0.0) {
        return Err(Error::Report("makespans must be positive".into()));
    }
    let rows = result
        .per_node
        .iter()
        .filter(|(id, s)| s.assigned_bytes > 0 || s.compute_seconds > 0.0 || **id == result.parent())
        .map(|(id, s)| NodeRow {
            node: id.clone(),
            busy_seconds: s.busy_seconds,
            compute_seconds: s.compute_seconds,
            assigned_bytes: s.assigned_bytes,
            peak_bytes: s.peak_bytes,
            messages_sent: s.messages_sent,
            messages_received: s.messages_received,
            bytes_sent: s.bytes_sent,
            bytes_received: s.bytes_received,
        })
        .collect();
    Ok(Report {
        baseline_makespan: baseline.makespan,
        makespan: result.makespan,
        speedup: baseline.makespan / result.makespan,
        replans: result.replans,
        checksum_failures: result.checksum_failures,
        output_match: result.output.bit_eq(&baseline.output),
        rows,
    })
}

impl Report {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "makespan {:.6} s, baseline {:.6} s, speedup {:.3}x",
            self.makespan, self.baseline_makespan, self.speedup
        );
        let _ = writeln!(
            out,
            "replans={} checksum_failures={} output-match={}",
            self.replans, self.checksum_failures, self.output_match
        );
        let _ = writeln!(
            out,
            "{:<10} {:>12} {:>12} {:>12} {:>12} {:>6} {:>6}  memory",
            "node", "busy_s", "compute_s", "assigned_B", "peak_B", "sent", "recv"
        );
        let max = self.rows.iter().map(|r| r.peak_bytes).max().unwrap_or(0).max(1);
        for r in &self.rows {
            let bar = "#".repeat((r.peak_bytes as u128 * BAR_WIDTH as u128 / max as u128) as usize);
            let _ = writeln!(
                out,
                "{:<10} {:>12.6} {:>12.6} {:>12} {:>12} {:>6} {:>6}  {bar}",
                r.node, r.busy_seconds, r.compute_seconds, r.assigned_bytes, r.peak_bytes, r.messages_sent, r.messages_received
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "node",
            "busy_s",
            "compute_s",
            "assigned_bytes",
            "peak_bytes",
            "messages_sent",
            "messages_received",
            "bytes_sent",
            "bytes_received",
        ])
        .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.node.clone(),
                r.busy_seconds.to_string(),
                r.compute_seconds.to_string(),
                r.assigned_bytes.to_string(),
                r.peak_bytes.to_string(),
                r.messages_sent.to_string(),
                r.messages_received.to_string(),
                r.bytes_sent.to_string(),
                r.bytes_received.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    /// Gnuplot data: a latency block, then a per-node memory block, separated
    /// by two blank lines so `index 0` and `index 1` select them.
    pub fn plot_data(&self) -> String {
        let mut out = String::from("# run makespan_s speedup\n");
        let _ = writeln!(out, "baseline {} 1", self.baseline_makespan);
        let _ = writeln!(out, "distributed {} {}", self.makespan, self.speedup);
        out.push_str("\n\n# node peak_bytes assigned_bytes busy_s\n");
        for r in &self.rows {
            let _ = writeln!(out, "{} {} {} {}", r.node, r.peak_bytes, r.assigned_bytes, r.busy_seconds);
        }
        out
    }
}

/// Gnuplot data for makespan against node count.
pub fn latency_plot_data(points: &[(usize, f64)]) -> String {
    let mut out = String::from("# nodes makespan_s speedup\n");
    let base = points.first().map(|p| p.1).unwrap_or(1.0);
    for (n, t) in points {
        let _ = writeln!(out, "{n} {t} {}", base / t);
    }
    out
}
