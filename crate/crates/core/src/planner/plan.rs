use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;

use super::cost::{boundary_bytes, modeled_latency, CommCostModel};
use super::topology::{select_candidates, NodeProfile, Topology};
use crate::error::{Error, Result};
use crate::estimator::{model_params, FeatureVector, MemoryEstimate, RegressorModel};
use crate::inference::layer_ops;
use crate::model::{parse_kv, ModelSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    pub max_nodes: usize,
    /// Split points are enumerated exhaustively up to this many layers.
    pub exhaustive_layers: usize,
    /// Upper bound on enumerated splits before falling back to greedy.
    pub exhaustive_budget: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            max_nodes: 4,
            exhaustive_layers: 32,
            exhaustive_budget: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanStatus {
    SingleNode,
    Distributed,
}

impl fmt::Display for PlanStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlanStatus::SingleNode => "single-node",
            PlanStatus::Distributed => "distributed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub node: String,
    pub layers: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommEdge {
    pub from: String,
    pub to: String,
    /// Bytes per transfer of the whole job.
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub assignments: Vec<Assignment>,
    pub per_node_bytes: BTreeMap<String, u64>,
    /// Stage-to-stage edges in pipeline order, then the return edge to the parent.
    pub comm_edges: Vec<CommEdge>,
    pub status: PlanStatus,
    pub model_bytes: u64,
    /// Modeled makespan in seconds.
    pub latency: f64,
}

impl PartitionPlan {
    pub fn parent(&self) -> &str {
        &self.assignments[0].node
    }

    pub fn node_count(&self) -> usize {
        self.assignments.len()
    }

    pub fn contains(&self, node: &str) -> bool {
        self.assignments.iter().any(|a| a.node == node)
    }

    pub fn ranges(&self) -> Vec<Range<usize>> {
        self.assignments.iter().map(|a| a.layers.clone()).collect()
    }

    /// Node running layer `layer`.
    pub fn owner(&self, layer: usize) -> Option<&str> {
        self.assignments
            .iter()
            .find(|a| a.layers.contains(&layer))
            .map(|a| a.node.as_str())
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "plan: {} over {} node(s), model {} bytes, modeled latency {:.6} s\n",
            self.status,
            self.node_count(),
            self.model_bytes,
            self.latency
        );
        out.push_str(&format!("{:<12} {:>8} {:>14}\n", "node", "layers", "bytes"));
        for a in &self.assignments {
            let bytes = self.per_node_bytes.get(&a.node).copied().unwrap_or(0);
            out.push_str(&format!(
                "{:<12} {:>8} {:>14}\n",
                a.node,
                format!("{}..{}", a.layers.start, a.layers.end),
                bytes
            ));
        }
        for e in &self.comm_edges {
            out.push_str(&format!("edge {} -> {}: {} bytes\n", e.from, e.to, e.bytes));
        }
        out
    }

    pub fn to_kv(&self) -> String {
        let mut out = format!(
            "status={}\nmodel_bytes={}\nlatency={}\n",
            self.status, self.model_bytes, self.latency
        );
        for a in &self.assignments {
            out.push_str(&format!(
                "assign node={} start={} end={} bytes={}\n",
                a.node,
                a.layers.start,
                a.layers.end,
                self.per_node_bytes.get(&a.node).copied().unwrap_or(0)
            ));
        }
        for e in &self.comm_edges {
            out.push_str(&format!("edge from={} to={} bytes={}\n", e.from, e.to, e.bytes));
        }
        out
    }

    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut plan = PartitionPlan {
            assignments: Vec::new(),
            per_node_bytes: BTreeMap::new(),
            comm_edges: Vec::new(),
            status: PlanStatus::SingleNode,
            model_bytes: 0,
            latency: 0.0,
        };
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = ln + 1;
            let mut parts = line.split_whitespace();
            let head = parts.next().unwrap_or_default();
            let num = |v: &str, k: &str| -> Result<u64> {
                v.parse::<u64>().map_err(|e| Error::parse(lineno, format!("`{k}`: {e}")))
            };
            match head {
                "assign" | "edge" => {
                    let kv = parse_kv(parts, lineno)?;
                    let get = |k: &str| {
                        kv.get(k)
                            .cloned()
                            .ok_or_else(|| Error::parse(lineno, format!("missing key `{k}`")))
                    };
                    if head == "assign" {
                        let node = get("node")?;
                        let (s, e) = (num(&get("start")?, "start")?, num(&get("end")?, "end")?);
                        plan.per_node_bytes.insert(node.clone(), num(&get("bytes")?, "bytes")?);
                        plan.assignments.push(Assignment {
                            node,
                            layers: s as usize..e as usize,
                        });
                    } else {
                        plan.comm_edges.push(CommEdge {
                            from: get("from")?,
                            to: get("to")?,
                            bytes: num(&get("bytes")?, "bytes")?,
                        });
                    }
                }
                _ => {
                    let (k, v) = line
                        .split_once('=')
                        .ok_or_else(|| Error::parse(lineno, format!("unrecognised line `{line}`")))?;
                    match k {
                        "status" => {
                            plan.status = match v {
                                "single-node" => PlanStatus::SingleNode,
                                "distributed" => PlanStatus::Distributed,
                                _ => return Err(Error::parse(lineno, format!("unknown status `{v}`"))),
                            }
                        }
                        "model_bytes" => plan.model_bytes = num(v, k)?,
                        "latency" => {
                            plan.latency = v.parse().map_err(|e| Error::parse(lineno, format!("latency: {e}")))?
                        }
                        _ => return Err(Error::parse(lineno, format!("unknown key `{k}`"))),
                    }
                }
            }
        }
        if plan.assignments.is_empty() {
            return Err(Error::parse(0, "plan has no assignments"));
        }
        Ok(plan)
    }
}

/// Smallest prefix of `candidates` whose free memory covers `bytes`.
pub fn accumulation_count(candidates: &[NodeProfile], bytes: u64) -> Option<usize> {
    let mut acc = 0u64;
    for (i, n) in candidates.iter().enumerate() {
        acc = acc.saturating_add(n.free_memory);
        if acc >= bytes {
            return Some(i + 1);
        }
    }
    None
}

fn build_plan(
    model: &ModelSpec,
    layer_bytes: &[u64],
    nodes: &[&NodeProfile],
    ranges: Vec<Range<usize>>,
    model_bytes: u64,
    cost: &CommCostModel,
) -> PartitionPlan {
    let latency = modeled_latency(model, &ranges, nodes, cost);
    let mut per_node_bytes = BTreeMap::new();
    let mut assignments = Vec::with_capacity(ranges.len());
    for (r, n) in ranges.iter().zip(nodes) {
        per_node_bytes.insert(n.id.clone(), layer_bytes[r.clone()].iter().sum());
        assignments.push(Assignment {
            node: n.id.clone(),
            layers: r.clone(),
        });
    }
    let mut comm_edges: Vec<CommEdge> = ranges
        .windows(2)
        .enumerate()
        .map(|(i, w)| CommEdge {
            from: nodes[i].id.clone(),
            to: nodes[i + 1].id.clone(),
            bytes: boundary_bytes(model, w[0].end, cost) * cost.samples,
        })
        .collect();
    if ranges.len() > 1 {
        comm_edges.push(CommEdge {
            from: nodes[nodes.len() - 1].id.clone(),
            to: nodes[0].id.clone(),
            bytes: boundary_bytes(model, model.len(), cost) * cost.samples,
        });
    }
    PartitionPlan {
        assignments,
        per_node_bytes,
        comm_edges,
        status: if ranges.len() > 1 {
            PlanStatus::Distributed
        } else {
            PlanStatus::SingleNode
        },
        model_bytes,
        latency,
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n.saturating_sub(k));
    (0..k).fold(1u64, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Latency-minimal contiguous split of all layers over `nodes` (in order),
/// each node taking a non-empty range within its free memory.
pub fn best_split(
    model: &ModelSpec,
    layer_bytes: &[u64],
    nodes: &[&NodeProfile],
    cost: &CommCostModel,
    cfg: &PlannerConfig,
) -> Option<Vec<Range<usize>>> {
    let l = model.len();
    let k = nodes.len();
    if k == 0 || k > l {
        return None;
    }
    let exhaustive = l <= cfg.exhaustive_layers && binomial(l as u64 - 1, k as u64 - 1) <= cfg.exhaustive_budget;
    if exhaustive {
        let mut best: Option<(f64, Vec<Range<usize>>)> = None;
        let mut cur = Vec::with_capacity(k);
        enumerate(model, layer_bytes, nodes, cost, 0, &mut cur, &mut best);
        best.map(|(_, r)| r)
    } else {
        greedy_split(model, layer_bytes, nodes)
    }
}

fn enumerate(
    model: &ModelSpec,
    layer_bytes: &[u64],
    nodes: &[&NodeProfile],
    cost: &CommCostModel,
    start: usize,
    cur: &mut Vec<Range<usize>>,
    best: &mut Option<(f64, Vec<Range<usize>>)>,
) {
    let l = model.len();
    let t = cur.len();
    let remaining = nodes.len() - t - 1;
    if remaining == 0 {
        if layer_bytes[start..].iter().sum::<u64>() > nodes[t].free_memory {
            return;
        }
        cur.push(start..l);
        let lat = modeled_latency(model, cur, nodes, cost);
        if best.as_ref().is_none_or(|(b, _)| lat < *b) {
            *best = Some((lat, cur.clone()));
        }
        cur.pop();
        return;
    }
    let mut bytes = 0u64;
    for end in start + 1..=l - remaining {
        bytes += layer_bytes[end - 1];
        if bytes > nodes[t].free_memory {
            break;
        }
        cur.push(start..end);
        enumerate(model, layer_bytes, nodes, cost, end, cur, best);
        cur.pop();
    }
}

/// Compute-balanced cut first; if that breaks a memory limit, pack each node
/// as full as memory allows.
fn greedy_split(model: &ModelSpec, layer_bytes: &[u64], nodes: &[&NodeProfile]) -> Option<Vec<Range<usize>>> {
    let l = model.len();
    let k = nodes.len();
    let ops: Vec<f64> = (0..l).map(|i| layer_ops(model, i) as f64).collect();
    let total_ops: f64 = ops.iter().sum();
    let total_speed: f64 = nodes.iter().map(|n| n.effective_speed()).sum();
    let fits = |r: &Range<usize>, n: &NodeProfile| layer_bytes[r.clone()].iter().sum::<u64>() <= n.free_memory;

    let mut balanced = Vec::with_capacity(k);
    let mut start = 0;
    for (t, n) in nodes.iter().enumerate() {
        let remaining = k - t - 1;
        let share = total_ops * n.effective_speed() / total_speed;
        let mut end = start + 1;
        let mut acc = ops[start];
        while remaining > 0 && end < l - remaining && acc + ops[end] / 2.0 <= share {
            acc += ops[end];
            end += 1;
        }
        if remaining == 0 {
            end = l;
        }
        balanced.push(start..end);
        start = end;
    }
    if balanced.iter().zip(nodes).all(|(r, n)| fits(r, n)) {
        return Some(balanced);
    }

    let mut packed = Vec::with_capacity(k);
    let mut start = 0;
    for (t, n) in nodes.iter().enumerate() {
        let remaining = k - t - 1;
        let mut end = start;
        let mut bytes = 0u64;
        let limit = if remaining == 0 { l } else { l - remaining };
        while end < limit && bytes + layer_bytes[end] <= n.free_memory {
            bytes += layer_bytes[end];
            end += 1;
        }
        if remaining == 0 && end < l {
            return None;
        }
        if end == start {
            return None;
        }
        packed.push(start..end);
        start = end;
    }
    Some(packed)
}

/// Places the model on the parent when it fits, otherwise on the shortest
/// candidate prefix that covers the model bytes and admits a contiguous split.
pub fn plan_partition(
    model: &ModelSpec,
    mem: &MemoryEstimate,
    candidates: &[NodeProfile],
    cost: &CommCostModel,
    cfg: &PlannerConfig,
) -> Result<PartitionPlan> {
    let parent = candidates
        .first()
        .ok_or_else(|| Error::Plan("candidate list lacks the parent".into()))?;
    let params = model_params(model);
    if params.total != mem.params {
        return Err(Error::Plan(format!(
            "estimate covers {} parameters but the model has {}",
            mem.params, params.total
        )));
    }
    let layer_bytes = mem.layer_bytes(&params)?;
    let model_bytes = mem.model_bytes;
    if model_bytes <= parent.free_memory {
        return Ok(build_plan(model, &layer_bytes, &[parent], std::iter::once(0..model.len()).collect(), model_bytes, cost));
    }
    let limit = cfg.max_nodes.min(candidates.len()).min(model.len());
    let Some(k) = accumulation_count(candidates, model_bytes) else {
        let free: u64 = candidates.iter().map(|n| n.free_memory).fold(0, u64::saturating_add);
        return Err(Error::Infeasible {
            shortfall: model_bytes - free,
            detail: format!("{} candidate(s) offer {free} bytes for a {model_bytes}-byte model", candidates.len()),
        });
    };
    if k > limit {
        let free: u64 = candidates[..limit].iter().map(|n| n.free_memory).sum();
        return Err(Error::Infeasible {
            shortfall: model_bytes.saturating_sub(free),
            detail: format!("covering the model needs {k} nodes, limit is {limit}"),
        });
    }
    for count in k..=limit {
        let nodes: Vec<&NodeProfile> = candidates[..count].iter().collect();
        if let Some(ranges) = best_split(model, &layer_bytes, &nodes, cost, cfg) {
            return Ok(build_plan(model, &layer_bytes, &nodes, ranges, model_bytes, cost));
        }
        log::debug!("no contiguous split over {count} node(s)");
    }
    Err(Error::Infeasible {
        shortfall: 0,
        detail: format!("no contiguous layer split fits {k}..={limit} node(s)"),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    Empty,
    ParentNotFirst,
    UnknownNode,
    DuplicateNode,
    EmptyRange,
    Overlap,
    Gap,
    Coverage,
    Memory,
    Shortfall,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.detail)
    }
}

/// Every broken plan invariant; empty when the plan is valid.
pub fn validate_plan(plan: &PartitionPlan, model: &ModelSpec, candidates: &[NodeProfile]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, detail: String| out.push(Violation { kind, detail });
    if plan.assignments.is_empty() {
        push(ViolationKind::Empty, "plan has no assignments".into());
        return out;
    }
    if let Some(parent) = candidates.first() {
        if plan.assignments[0].node != parent.id {
            push(
                ViolationKind::ParentNotFirst,
                format!("first range is on {}, parent is {}", plan.assignments[0].node, parent.id),
            );
        }
    }
    let mut seen = BTreeSet::new();
    let mut expected = 0usize;
    for a in &plan.assignments {
        let Some(node) = candidates.iter().find(|n| n.id == a.node) else {
            push(ViolationKind::UnknownNode, format!("node {} is not a candidate", a.node));
            continue;
        };
        if !seen.insert(a.node.as_str()) {
            push(ViolationKind::DuplicateNode, format!("node {} holds two ranges", a.node));
        }
        if a.layers.start >= a.layers.end {
            push(
                ViolationKind::EmptyRange,
                format!("node {} has empty range {:?}", a.node, a.layers),
            );
        }
        if a.layers.start < expected {
            push(
                ViolationKind::Overlap,
                format!("node {} starts at layer {}, before {expected}", a.node, a.layers.start),
            );
        } else if a.layers.start > expected {
            push(
                ViolationKind::Gap,
                format!("layers {expected}..{} unassigned before node {}", a.layers.start, a.node),
            );
        }
        expected = expected.max(a.layers.end);
        let bytes = plan.per_node_bytes.get(&a.node).copied().unwrap_or(0);
        if bytes > node.free_memory {
            push(
                ViolationKind::Memory,
                format!("node {} assigned {bytes} bytes, has {}", a.node, node.free_memory),
            );
        }
    }
    if expected != model.len() {
        push(
            ViolationKind::Coverage,
            format!("ranges end at layer {expected}, model has {}", model.len()),
        );
    }
    let total: u64 = plan.per_node_bytes.values().sum();
    if total < plan.model_bytes {
        push(
            ViolationKind::Shortfall,
            format!("assigned {total} bytes, model needs {}", plan.model_bytes),
        );
    }
    out
}

/// Plans again without `failed`; the plan is kept when it does not use it.
pub fn replan_on_failure(
    plan: &PartitionPlan,
    failed: &str,
    topology: &Topology,
    model: &ModelSpec,
    mem: &MemoryEstimate,
    cost: &CommCostModel,
    cfg: &PlannerConfig,
) -> Result<PartitionPlan> {
    if failed == topology.parent.id {
        return Err(Error::ParentFailed(failed.to_string()));
    }
    if !plan.contains(failed) {
        return Ok(plan.clone());
    }
    plan_partition(model, mem, &select_candidates(&topology.without(failed)), cost, cfg)
}

#[derive(Debug, Clone)]
pub struct GatedPlan {
    pub plan: PartitionPlan,
    pub regressor_offload: Option<bool>,
    pub exact_offload: bool,
}

impl GatedPlan {
    pub fn disagreement(&self) -> bool {
        self.regressor_offload.is_some_and(|r| r != self.exact_offload)
    }
}

/// Consults the regressor first; the exact memory comparison decides.
pub fn plan_with_regressor(
    model: &ModelSpec,
    mem: &MemoryEstimate,
    candidates: &[NodeProfile],
    cost: &CommCostModel,
    cfg: &PlannerConfig,
    regressor: Option<(&RegressorModel, &FeatureVector)>,
) -> Result<GatedPlan> {
    let parent = candidates
        .first()
        .ok_or_else(|| Error::Plan("candidate list lacks the parent".into()))?;
    let exact_offload = mem.model_bytes > parent.free_memory;
    let regressor_offload = match regressor {
        Some((r, f)) => Some(r.predict(f)?.offload),
        None => None,
    };
    if let Some(r) = regressor_offload {
        if r != exact_offload {
            log::warn!(
                "regressor says {} but the model needs {} bytes against {} free on {}; using the exact check",
                if r { "offload" } else { "fit" },
                mem.model_bytes,
                parent.free_memory,
                parent.id
            );
        }
    }
    Ok(GatedPlan {
        plan: plan_partition(model, mem, candidates, cost, cfg)?,
        regressor_offload,
        exact_offload,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{estimate_memory, KIB};
    use crate::model::{DenseSpec, LayerSpec, SoftmaxSpec};

    /// Four MiB at batch 8 x 8 batches, two MiB on each side of the first FC.
    pub(crate) fn four_mib_model() -> ModelSpec {
        let fc = |i, o| {
            LayerSpec::Fc(DenseSpec {
                in_units: i,
                out_units: o,
                relu: true,
            })
        };
        ModelSpec::new(
            "four-mib",
            vec![
                LayerSpec::Input { shape: vec![15] },
                fc(15, 2),
                fc(2, 4),
                fc(4, 4),
                LayerSpec::Softmax(SoftmaxSpec::PassThrough),
            ],
        )
        .unwrap()
    }

    fn mem(m: &ModelSpec) -> MemoryEstimate {
        estimate_memory(m, 8, 8, KIB).unwrap()
    }

    const MIB: u64 = 1 << 20;

    #[test]
    fn four_mib_fits_eight_mib_parent() {
        let m = four_mib_model();
        assert_eq!(mem(&m).model_bytes, 4 * MIB);
        let plan = plan_partition(
            &m,
            &mem(&m),
            &[NodeProfile::new("p", 8 * MIB, 1e6)],
            &CommCostModel::default(),
            &PlannerConfig::default(),
        )
        .unwrap();
        assert_eq!(plan.status, PlanStatus::SingleNode);
        assert!(plan.comm_edges.is_empty());
    }

    #[test]
    fn four_mib_over_two_plus_two() {
        let m = four_mib_model();
        let nodes = [NodeProfile::new("p", 2 * MIB, 1e6), NodeProfile::new("c", 2 * MIB, 1e6)];
        let cost = CommCostModel::default();
        let plan = plan_partition(&m, &mem(&m), &nodes, &cost, &PlannerConfig::default()).unwrap();
        assert_eq!(plan.status, PlanStatus::Distributed);
        assert_eq!(plan.ranges(), vec![0..2, 2..5]);
        assert_eq!(plan.per_node_bytes["p"], 2 * MIB);
        assert_eq!(plan.per_node_bytes["c"], 2 * MIB);
        assert_eq!(plan.comm_edges[0].from, "p");
        assert_eq!(plan.comm_edges[0].to, "c");
        assert_eq!(plan.comm_edges[0].bytes, 2 * 8);
        assert!(validate_plan(&plan, &m, &nodes).is_empty());
    }

    #[test]
    fn three_one_mib_nodes_are_short() {
        let m = four_mib_model();
        let nodes: Vec<_> = (0..3).map(|i| NodeProfile::new(format!("n{i}"), MIB, 1.0)).collect();
        match plan_partition(&m, &mem(&m), &nodes, &CommCostModel::default(), &PlannerConfig::default()) {
            Err(Error::Infeasible { shortfall, .. }) => assert_eq!(shortfall, MIB),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn violations_detected() {
        let m = four_mib_model();
        let nodes = [NodeProfile::new("p", 2 * MIB, 1e6), NodeProfile::new("c", 2 * MIB, 1e6)];
        let plan = plan_partition(&m, &mem(&m), &nodes, &CommCostModel::default(), &PlannerConfig::default()).unwrap();

        let mut overlap = plan.clone();
        overlap.assignments[1].layers.start = 1;
        let v = validate_plan(&overlap, &m, &nodes);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::Overlap);

        let mut heavy = plan.clone();
        *heavy.per_node_bytes.get_mut("c").unwrap() += 1;
        let v = validate_plan(&heavy, &m, &nodes);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::Memory);
        assert!(v[0].detail.contains("node c"));
    }

    #[test]
    fn replan_rules() {
        let m = four_mib_model();
        let topo = Topology::new(
            NodeProfile::new("p", MIB, 1e6),
            vec![
                NodeProfile::new("a", 2 * MIB, 1e6).at(1.0, 0.0),
                NodeProfile::new("b", 2 * MIB, 1e6).at(2.0, 0.0),
                NodeProfile::new("c", 4 * MIB, 1e6).at(3.0, 0.0),
                NodeProfile::new("far", 4 * MIB, 1e6).at(90.0, 0.0),
            ],
            10.0,
        )
        .unwrap();
        let cands = select_candidates(&topo);
        let (cost, cfg) = (CommCostModel::default(), PlannerConfig::default());
        let plan = plan_partition(&m, &mem(&m), &cands, &cost, &cfg).unwrap();
        assert_eq!(plan.node_count(), 3);
        let again = replan_on_failure(&plan, "a", &topo, &m, &mem(&m), &cost, &cfg).unwrap();
        assert!(!again.contains("a"));
        assert!(validate_plan(&again, &m, &cands).is_empty());
        assert_eq!(
            replan_on_failure(&plan, "far", &topo, &m, &mem(&m), &cost, &cfg).unwrap(),
            plan
        );
        assert!(matches!(
            replan_on_failure(&plan, "p", &topo, &m, &mem(&m), &cost, &cfg),
            Err(Error::ParentFailed(_))
        ));
    }

    #[test]
    fn kv_round_trip() {
        let m = four_mib_model();
        let nodes = [NodeProfile::new("p", 2 * MIB, 1e6), NodeProfile::new("c", 2 * MIB, 1e6)];
        let plan = plan_partition(&m, &mem(&m), &nodes, &CommCostModel::default(), &PlannerConfig::default()).unwrap();
        assert_eq!(PartitionPlan::parse_kv(&plan.to_kv()).unwrap(), plan);
        assert!(plan.to_table().contains("distributed"));
    }

    #[test]
    fn greedy_matches_feasibility() {
        let m = four_mib_model();
        let nodes = [NodeProfile::new("p", 2 * MIB, 1e6), NodeProfile::new("c", 2 * MIB, 1e6)];
        let refs: Vec<_> = nodes.iter().collect();
        let lb = mem(&m).layer_bytes(&model_params(&m)).unwrap();
        assert_eq!(greedy_split(&m, &lb, &refs), Some(vec![0..2, 2..5]));
    }

    mod props {
        use super::*;
        use crate::model::{random_model, RandomModelConfig};
        use crate::planner::topology::{random_topology, RandomTopologyConfig};
        use proptest::prelude::*;
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;

        fn scenario(seed: u64) -> (ModelSpec, MemoryEstimate, Topology) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_model(&mut rng, &RandomModelConfig::default());
            let mem = estimate_memory(&m, 2, 1, KIB).unwrap();
            let cfg = RandomTopologyConfig {
                neighbors: 7,
                min_memory: mem.model_bytes / 8,
                max_memory: mem.model_bytes,
                ..Default::default()
            };
            (m, mem, random_topology(&mut rng, &cfg))
        }

        proptest! {
            #[test]
            fn emitted_plans_validate(seed in 0u64..5000) {
                let (m, mem, topo) = scenario(seed);
                let cands = select_candidates(&topo);
                let cost = CommCostModel::default();
                let cfg = PlannerConfig::default();
                if let Ok(plan) = plan_partition(&m, &mem, &cands, &cost, &cfg) {
                    prop_assert!(validate_plan(&plan, &m, &cands).is_empty());
                    prop_assert_eq!(&plan, &plan_partition(&m, &mem, &cands, &cost, &cfg).unwrap());
                    let roomier: Vec<NodeProfile> = cands
                        .iter()
                        .map(|n| NodeProfile { free_memory: n.free_memory * 2, ..n.clone() })
                        .collect();
                    let bigger = plan_partition(&m, &mem, &roomier, &cost, &cfg).unwrap();
                    prop_assert!(bigger.node_count() <= plan.node_count());
                }
            }
        }
    }
}
