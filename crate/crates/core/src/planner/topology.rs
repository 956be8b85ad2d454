//! Node profiles and the neighbourhood around the parent.
//!
//! Text form, one node per line, the first node being the parent:
//!
//! ```text
//! radius=25
//! node id=parent mem=2097152 speed=1e6 x=0 y=0 hop=0.001 bw=1e6 load=0
//! ```

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::parse_kv;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeProfile {
    pub id: String,
    pub free_memory: u64,
    /// Operations per second.
    pub speed: f64,
    pub position: (f64, f64),
    /// Seconds added to every message leaving or entering the node.
    pub per_hop_latency: f64,
    /// Bytes per second; may be infinite.
    pub bandwidth: f64,
    /// Fraction of compute already busy, in `[0, 1)`.
    pub workload: f64,
}

impl NodeProfile {
    pub fn new(id: impl Into<String>, free_memory: u64, speed: f64) -> Self {
        Self {
            id: id.into(),
            free_memory,
            speed,
            position: (0.0, 0.0),
            per_hop_latency: 0.0,
            bandwidth: f64::INFINITY,
            workload: 0.0,
        }
    }

    pub fn at(mut self, x: f64, y: f64) -> Self {
        self.position = (x, y);
        self
    }

    pub fn with_link(mut self, per_hop_latency: f64, bandwidth: f64) -> Self {
        self.per_hop_latency = per_hop_latency;
        self.bandwidth = bandwidth;
        self
    }

    pub fn with_workload(mut self, workload: f64) -> Self {
        self.workload = workload;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Range(format!("node {}: {what}", self.id)));
        if self.id.is_empty() || self.id.contains(char::is_whitespace) {
            return bad("id must be non-empty without whitespace");
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return bad("speed must be positive and finite");
        }
        if self.bandwidth.is_nan() || self.bandwidth <= 0.0 {
            return bad("bandwidth must be positive");
        }
        if !(0.0..1.0).contains(&self.workload) {
            return bad("workload must lie in [0, 1)");
        }
        if !(self.per_hop_latency >= 0.0 && self.per_hop_latency.is_finite()) {
            return bad("hop latency must be non-negative");
        }
        if !(self.position.0.is_finite() && self.position.1.is_finite()) {
            return bad("position must be finite");
        }
        Ok(())
    }

    /// Speed left after the existing workload.
    pub fn effective_speed(&self) -> f64 {
        self.speed * (1.0 - self.workload)
    }

    pub fn distance_to(&self, other: &NodeProfile) -> f64 {
        let (dx, dy) = (self.position.0 - other.position.0, self.position.1 - other.position.1);
        dx.hypot(dy)
    }

    pub fn to_line(&self) -> String {
        format!(
            "node id={} mem={} speed={} x={} y={} hop={} bw={} load={}",
            self.id,
            self.free_memory,
            self.speed,
            self.position.0,
            self.position.1,
            self.per_hop_latency,
            self.bandwidth,
            self.workload
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub parent: NodeProfile,
    pub neighbors: Vec<NodeProfile>,
    pub radius: f64,
}

impl Topology {
    pub fn new(parent: NodeProfile, neighbors: Vec<NodeProfile>, radius: f64) -> Result<Self> {
        let t = Self {
            parent,
            neighbors,
            radius,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.radius.is_nan() || self.radius < 0.0 {
            return Err(Error::Range("radius must be non-negative".into()));
        }
        let mut ids = BTreeSet::new();
        for n in self.nodes() {
            n.validate()?;
            if !ids.insert(n.id.as_str()) {
                return Err(Error::Range(format!("duplicate node id `{}`", n.id)));
            }
        }
        Ok(())
    }

    /// Parent followed by neighbours in file order.
    pub fn nodes(&self) -> impl Iterator<Item = &NodeProfile> {
        std::iter::once(&self.parent).chain(&self.neighbors)
    }

    pub fn node(&self, id: &str) -> Option<&NodeProfile> {
        self.nodes().find(|n| n.id == id)
    }

    pub fn without(&self, id: &str) -> Topology {
        Topology {
            parent: self.parent.clone(),
            neighbors: self.neighbors.iter().filter(|n| n.id != id).cloned().collect(),
            radius: self.radius,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut radius = None;
        let mut nodes = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = ln + 1;
            if let Some(r) = line.strip_prefix("radius=") {
                radius = Some(r.trim().parse::<f64>().map_err(|e| Error::parse(lineno, format!("radius: {e}")))?);
                continue;
            }
            let mut parts = line.split_whitespace();
            if parts.next() != Some("node") {
                return Err(Error::parse(lineno, format!("expected `node` or `radius=`, got `{line}`")));
            }
            let kv = parse_kv(parts, lineno)?;
            let num = |k: &str, default: Option<f64>| -> Result<f64> {
                match kv.get(k) {
                    Some(v) => v.parse::<f64>().map_err(|e| Error::parse(lineno, format!("`{k}`: {e}"))),
                    None => default.ok_or_else(|| Error::parse(lineno, format!("missing key `{k}`"))),
                }
            };
            let id = kv
                .get("id")
                .ok_or_else(|| Error::parse(lineno, "missing key `id`"))?
                .clone();
            let mem = kv
                .get("mem")
                .ok_or_else(|| Error::parse(lineno, "missing key `mem`"))?
                .parse::<u64>()
                .map_err(|e| Error::parse(lineno, format!("`mem`: {e}")))?;
            nodes.push(NodeProfile {
                id,
                free_memory: mem,
                speed: num("speed", None)?,
                position: (num("x", Some(0.0))?, num("y", Some(0.0))?),
                per_hop_latency: num("hop", Some(0.0))?,
                bandwidth: num("bw", Some(f64::INFINITY))?,
                workload: num("load", Some(0.0))?,
            });
        }
        if nodes.is_empty() {
            return Err(Error::parse(0, "topology has no nodes"));
        }
        let parent = nodes.remove(0);
        Self::new(parent, nodes, radius.unwrap_or(f64::INFINITY))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("radius={}\n", self.radius);
        for n in self.nodes() {
            out.push_str(&n.to_line());
            out.push('\n');
        }
        out
    }
}

/// Candidate order: distance ascending, free memory descending, id ascending.
pub fn candidate_order(parent: &NodeProfile, a: &NodeProfile, b: &NodeProfile) -> Ordering {
    parent
        .distance_to(a)
        .total_cmp(&parent.distance_to(b))
        .then(b.free_memory.cmp(&a.free_memory))
        .then_with(|| a.id.cmp(&b.id))
}

/// Parent first, then neighbours within the radius in candidate order.
pub fn select_candidates(topology: &Topology) -> Vec<NodeProfile> {
    let p = &topology.parent;
    let mut near: Vec<NodeProfile> = topology
        .neighbors
        .iter()
        .filter(|n| p.distance_to(n) <= topology.radius)
        .cloned()
        .collect();
    near.sort_by(|a, b| candidate_order(p, a, b));
    let mut out = Vec::with_capacity(near.len() + 1);
    out.push(p.clone());
    out.extend(near);
    out
}

/// Bounds for [`random_topology`].
#[derive(Debug, Clone)]
pub struct RandomTopologyConfig {
    pub neighbors: usize,
    pub min_memory: u64,
    pub max_memory: u64,
    pub area: f64,
    pub radius: f64,
}

impl Default for RandomTopologyConfig {
    fn default() -> Self {
        Self {
            neighbors: 7,
            min_memory: 1 << 10,
            max_memory: 1 << 20,
            area: 50.0,
            radius: 40.0,
        }
    }
}

pub fn random_topology<R: Rng + ?Sized>(rng: &mut R, cfg: &RandomTopologyConfig) -> Topology {
    let mut node = |id: String, at_origin: bool| {
        let (x, y) = if at_origin {
            (0.0, 0.0)
        } else {
            (rng.gen_range(-cfg.area..cfg.area), rng.gen_range(-cfg.area..cfg.area))
        };
        NodeProfile {
            id,
            free_memory: rng.gen_range(cfg.min_memory..=cfg.max_memory),
            speed: rng.gen_range(1e5..1e7),
            position: (x, y),
            per_hop_latency: rng.gen_range(0.0..0.01),
            bandwidth: rng.gen_range(1e5..1e8),
            workload: rng.gen_range(0.0..0.5),
        }
    };
    let parent = node("n0".into(), true);
    let neighbors = (1..=cfg.neighbors).map(|i| node(format!("n{i}"), false)).collect();
    Topology::new(parent, neighbors, cfg.radius).expect("generated topology is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_neighbours() -> Topology {
        Topology::new(
            NodeProfile::new("p", 10, 1.0),
            vec![
                NodeProfile::new("far", 10, 1.0).at(15.0, 0.0),
                NodeProfile::new("near", 10, 1.0).at(0.0, 5.0),
            ],
            10.0,
        )
        .unwrap()
    }

    #[test]
    fn radius_zero_keeps_parent_only() {
        let mut t = two_neighbours();
        t.radius = 0.0;
        let c = select_candidates(&t);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].id, "p");
    }

    #[test]
    fn radius_filters_far_nodes() {
        let ids: Vec<_> = select_candidates(&two_neighbours()).into_iter().map(|n| n.id).collect();
        assert_eq!(ids, ["p", "near"]);
    }

    #[test]
    fn ties_break_on_memory_then_id() {
        let t = Topology::new(
            NodeProfile::new("p", 1, 1.0),
            vec![
                NodeProfile::new("b", 5, 1.0).at(3.0, 4.0),
                NodeProfile::new("a", 5, 1.0).at(-3.0, -4.0),
                NodeProfile::new("c", 9, 1.0).at(0.0, 5.0),
            ],
            10.0,
        )
        .unwrap();
        let ids: Vec<_> = select_candidates(&t).into_iter().map(|n| n.id).collect();
        assert_eq!(ids, ["p", "c", "a", "b"]);
    }

    #[test]
    fn invalid_profiles_rejected() {
        let p = NodeProfile::new("p", 1, 1.0);
        assert!(NodeProfile::new("x", 1, 0.0).validate().is_err());
        assert!(NodeProfile::new("x", 1, 1.0).with_workload(1.0).validate().is_err());
        assert!(NodeProfile::new("x", 1, 1.0).with_link(0.0, 0.0).validate().is_err());
        assert!(Topology::new(p.clone(), vec![p.clone()], 1.0).is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_topology(&mut rng, &RandomTopologyConfig::default());
        assert_eq!(Topology::parse(&t.to_text()).unwrap(), t);
        let inf = Topology::parse("node id=a mem=5 speed=2\n").unwrap();
        assert!(inf.parent.bandwidth.is_infinite());
        assert!(inf.radius.is_infinite());
        assert!(Topology::parse("radius=3\n").is_err());
        assert!(Topology::parse("node id=a speed=1\n").is_err());
    }
}
