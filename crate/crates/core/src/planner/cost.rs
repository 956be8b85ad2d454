//! Modeled pipeline latency of a layer split.
//!
//! Every sample passes node 0, link 0->1, node 1, ..., then the link back to
//! the parent and the parent's gather step. Each node and each link is a
//! resource serving one sample at a time, so `m` samples take
//! `path + (m - 1) * bottleneck`, where the parent resource carries both its
//! own range and the gather step.

use std::ops::Range;

use super::topology::NodeProfile;
use crate::inference::range_ops;
use crate::model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommCostModel {
    /// Samples streamed through the pipeline.
    pub samples: u64,
    pub bytes_per_element: u64,
    /// Parent-side operations per output element when gathering a result.
    pub gather_ops_per_element: f64,
}

impl Default for CommCostModel {
    fn default() -> Self {
        Self {
            samples: 1,
            bytes_per_element: 8,
            gather_ops_per_element: 1.0,
        }
    }
}

/// Latency and bandwidth of a link between two nodes.
pub fn link(a: &NodeProfile, b: &NodeProfile) -> (f64, f64) {
    (a.per_hop_latency.max(b.per_hop_latency), a.bandwidth.min(b.bandwidth))
}

pub fn transfer_time(a: &NodeProfile, b: &NodeProfile, bytes: u64) -> f64 {
    let (hop, bw) = link(a, b);
    hop + bytes as f64 / bw
}

/// Per-sample time of every pipeline stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTimes {
    pub compute: Vec<f64>,
    /// `links[i]` carries node i's output to node i+1.
    pub links: Vec<f64>,
    /// Return of the final activation to the parent; zero on one node.
    pub gather_link: f64,
    pub gather_compute: f64,
}

impl StageTimes {
    pub fn path(&self) -> f64 {
        self.compute.iter().sum::<f64>() + self.links.iter().sum::<f64>() + self.gather_link + self.gather_compute
    }

    pub fn bottleneck(&self) -> f64 {
        let parent = self.compute[0] + self.gather_compute;
        self.compute[1..]
            .iter()
            .chain(&self.links)
            .chain(std::iter::once(&self.gather_link))
            .fold(parent, |m, &v| m.max(v))
    }

    pub fn makespan(&self, samples: u64) -> f64 {
        self.path() + samples.saturating_sub(1) as f64 * self.bottleneck()
    }
}

pub fn boundary_bytes(model: &ModelSpec, boundary: usize, cost: &CommCostModel) -> u64 {
    model.boundary_shape(boundary).iter().product::<usize>() as u64 * cost.bytes_per_element
}

/// `nodes[i]` runs `ranges[i]`; `nodes[0]` is the parent.
pub fn stage_times(model: &ModelSpec, ranges: &[Range<usize>], nodes: &[&NodeProfile], cost: &CommCostModel) -> StageTimes {
    let compute = ranges
        .iter()
        .zip(nodes)
        .map(|(r, n)| range_ops(model, r.clone()) as f64 / n.effective_speed())
        .collect();
    let links = ranges
        .windows(2)
        .enumerate()
        .map(|(i, w)| transfer_time(nodes[i], nodes[i + 1], boundary_bytes(model, w[0].end, cost)))
        .collect();
    let (gather_link, gather_compute) = if ranges.len() > 1 {
        let out = model.len();
        let elems = model.boundary_shape(out).iter().product::<usize>() as f64;
        (
            transfer_time(nodes[nodes.len() - 1], nodes[0], boundary_bytes(model, out, cost)),
            cost.gather_ops_per_element * elems / nodes[0].effective_speed(),
        )
    } else {
        (0.0, 0.0)
    };
    StageTimes {
        compute,
        links,
        gather_link,
        gather_compute,
    }
}

pub fn modeled_latency(model: &ModelSpec, ranges: &[Range<usize>], nodes: &[&NodeProfile], cost: &CommCostModel) -> f64 {
    stage_times(model, ranges, nodes, cost).makespan(cost.samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::layer_ops;

    #[test]
    fn single_node_is_plain_compute() {
        let m = ModelSpec::example();
        let n = NodeProfile::new("p", 1, 1000.0);
        let t = stage_times(&m, std::slice::from_ref(&(0..m.len())), &[&n], &CommCostModel::default());
        let ops: u64 = (0..m.len()).map(|i| layer_ops(&m, i)).sum();
        assert_eq!(t.path(), ops as f64 / 1000.0);
        assert_eq!(t.links.len(), 0);
        assert_eq!(t.gather_link, 0.0);
    }

    #[test]
    fn two_nodes_hand_evaluation() {
        let m = ModelSpec::example();
        let p = NodeProfile::new("p", 1, 100.0).with_link(0.5, 800.0);
        let c = NodeProfile::new("c", 1, 200.0).with_link(0.25, 1600.0).with_workload(0.5);
        let cost = CommCostModel {
            samples: 3,
            ..Default::default()
        };
        let t = stage_times(&m, &[0..2, 2..m.len()], &[&p, &c], &cost);
        let cut = m.boundary_shape(2).iter().product::<usize>() as f64 * 8.0;
        assert_eq!(t.links, vec![0.5 + cut / 800.0]);
        assert_eq!(t.compute[1], range_ops(&m, 2..m.len()) as f64 / 100.0);
        assert_eq!(t.gather_link, 0.5 + 6.0 * 8.0 / 800.0);
        assert_eq!(t.gather_compute, 6.0 / 100.0);
        let expected = t.path() + 2.0 * t.bottleneck();
        assert_eq!(t.makespan(3), expected);
    }
}
