//! Discrete-event execution of a partition plan.
//!
//! Samples of the input batch stream through the plan's stages. Every node
//! and every directed link serves one item at a time in arrival order. Each
//! activation message carries a SHA-256 of its payload. Every sample keeps the
//! layer-boundary tensors seen so far (with their holders) so a replanned
//! pipeline can resume from the furthest boundary still held by a live node.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{EdgeStats, EventRecord, FaultKind, NodeStats, SimConfig, SimResult};
use crate::error::{Error, Result};
use crate::estimator::{memory_for_total, model_params, MemoryEstimate};
use crate::inference::{forward_range, range_ops, samples_of};
use crate::model::ModelSpec;
use crate::planner::{plan_partition, select_candidates, validate_plan, CommCostModel, PartitionPlan, Topology};
use crate::tensor::Tensor;
use crate::weights::WeightStore;

type Digest32 = [u8; 32];

fn checksum(t: &Tensor) -> Digest32 {
    let mut h = Sha256::new();
    for d in t.shape() {
        h.update((*d as u64).to_le_bytes());
    }
    h.update(t.to_le_bytes());
    h.finalize().into()
}

#[derive(Debug, Clone)]
struct Token {
    sample: usize,
    boundary: usize,
    /// `None` in timing-only runs.
    tensor: Option<Tensor>,
    /// Layer ranges that produced this tensor, from the input onwards.
    lineage: Vec<Range<usize>>,
}

#[derive(Debug, Clone)]
enum TaskKind {
    Layers(Range<usize>),
    Gather,
}

#[derive(Debug, Clone)]
struct Task {
    token: Token,
    kind: TaskKind,
}

#[derive(Debug, Clone)]
struct Message {
    from: String,
    to: String,
    token: Token,
    /// Payload as delivered; differs from `token.tensor` after a garbage fault.
    payload: Option<Tensor>,
    digest: Option<Digest32>,
    bytes: u64,
}

#[derive(Debug, Clone)]
enum Ev {
    Fault(usize),
    TaskReady { gen: u64, node: String, task: Task },
    TaskDone { gen: u64, node: String, task: Task },
    Arrive { gen: u64, msg: Message },
    Timeout { gen: u64, sample: usize, interval: f64 },
}

struct Scheduled {
    time: f64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.seq.cmp(&other.seq))
    }
}

#[derive(Default)]
struct NodeRt {
    queue: VecDeque<Task>,
    running: Option<(f64, f64)>,
}

struct Checkpoint {
    holder: String,
    token: Token,
}

/// One simulation run. Kept as a value so the event log survives an aborted run.
pub struct Simulation<'a> {
    model: &'a ModelSpec,
    weights: Option<&'a WeightStore>,
    topology: Topology,
    config: &'a SimConfig,
    mem: MemoryEstimate,
    cost: CommCostModel,
    faults_enabled: bool,
    faults: Vec<super::Fault>,

    plan: PartitionPlan,
    gen: u64,
    now: f64,
    seq: u64,
    heap: BinaryHeap<Reverse<Scheduled>>,
    nodes: BTreeMap<String, NodeRt>,
    link_free: BTreeMap<(String, String), f64>,
    offline: BTreeSet<String>,
    excluded: BTreeSet<String>,
    armed: BTreeSet<String>,
    checkpoints: Vec<Vec<Checkpoint>>,
    done: Vec<Option<(f64, Token)>>,
    remaining: usize,
    single: bool,

    stats: BTreeMap<String, NodeStats>,
    edges: BTreeMap<(String, String), EdgeStats>,
    events: Vec<EventRecord>,
    replans: usize,
    checksum_failures: usize,
    plans: Vec<PartitionPlan>,
}

impl<'a> Simulation<'a> {
    pub fn new(
        plan: &PartitionPlan,
        model: &'a ModelSpec,
        weights: &'a WeightStore,
        input: &Tensor,
        topology: &Topology,
        config: &'a SimConfig,
    ) -> Result<Self> {
        weights.validate(model)?;
        let samples = samples_of(model, input)?;
        let topology = calibrated(topology, config)?;
        check_plan(plan, model, &topology)?;
        let tokens = samples
            .into_iter()
            .enumerate()
            .map(|(sample, t)| Token {
                sample,
                boundary: 0,
                tensor: Some(t),
                lineage: Vec::new(),
            })
            .collect();
        let mem = match config.memory {
            Some(m) => m,
            None => infer_memory(model, plan.model_bytes)?,
        };
        let mut sim = Self::build(plan.clone(), model, Some(weights), topology, config, mem, tokens, true);
        sim.single = input.shape() == model.input_shape();
        for f in &config.faults {
            sim.inject_fault(f.clone())?;
        }
        Ok(sim)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        plan: PartitionPlan,
        model: &'a ModelSpec,
        weights: Option<&'a WeightStore>,
        topology: Topology,
        config: &'a SimConfig,
        mem: MemoryEstimate,
        tokens: Vec<Token>,
        faults_enabled: bool,
    ) -> Self {
        let m = tokens.len();
        let parent = topology.parent.id.clone();
        let cost = CommCostModel {
            samples: m as u64,
            bytes_per_element: config.bytes_per_element,
            gather_ops_per_element: config.gather_ops_per_element,
        };
        let stats = topology.nodes().map(|n| (n.id.clone(), NodeStats::default())).collect();
        let nodes = topology.nodes().map(|n| (n.id.clone(), NodeRt::default())).collect();
        let checkpoints = tokens
            .into_iter()
            .map(|token| {
                vec![Checkpoint {
                    holder: parent.clone(),
                    token,
                }]
            })
            .collect();
        Self {
            model,
            weights,
            topology,
            config,
            mem,
            cost,
            faults_enabled,
            faults: Vec::new(),
            plan,
            gen: 0,
            now: 0.0,
            seq: 0,
            heap: BinaryHeap::new(),
            nodes,
            link_free: BTreeMap::new(),
            offline: BTreeSet::new(),
            excluded: BTreeSet::new(),
            armed: BTreeSet::new(),
            checkpoints,
            done: vec![None; m],
            remaining: m,
            single: false,
            stats,
            edges: BTreeMap::new(),
            events: Vec::new(),
            replans: 0,
            checksum_failures: 0,
            plans: Vec::new(),
        }
    }

    /// Makespan of a fault-free run of `samples` samples, without executing kernels.
    pub fn timing_only(
        plan: &PartitionPlan,
        model: &'a ModelSpec,
        samples: usize,
        topology: &Topology,
        config: &'a SimConfig,
    ) -> Result<f64> {
        if samples == 0 {
            return Err(Error::EmptyInput("no samples to simulate".into()));
        }
        let topology = calibrated(topology, config)?;
        check_plan(plan, model, &topology)?;
        let mem = match config.memory {
            Some(m) => m,
            None => infer_memory(model, plan.model_bytes)?,
        };
        let tokens = (0..samples)
            .map(|sample| Token {
                sample,
                boundary: 0,
                tensor: None,
                lineage: Vec::new(),
            })
            .collect();
        let mut sim = Self::build(plan.clone(), model, None, topology, config, mem, tokens, false);
        sim.start_generation()?;
        while sim.remaining > 0 {
            let Some(Reverse(s)) = sim.heap.pop() else {
                return Err(Error::Plan("simulation stalled with unfinished samples".into()));
            };
            sim.now = s.time;
            sim.handle(s.ev)?;
        }
        Ok(sim.done.iter().map(|d| d.as_ref().map_or(0.0, |x| x.0)).fold(0.0, f64::max))
    }

    /// Schedules `fault`; faults in the past fire at the current time.
    pub fn inject_fault(&mut self, fault: super::Fault) -> Result<()> {
        if !(fault.time >= 0.0 && fault.time.is_finite()) {
            return Err(Error::Range(format!("fault time {} must be finite and non-negative", fault.time)));
        }
        if self.topology.node(&fault.node).is_none() {
            return Err(Error::Plan(format!("fault names unknown node {}", fault.node)));
        }
        let at = fault.time.max(self.now);
        self.faults.push(fault);
        let i = self.faults.len() - 1;
        self.push(at, Ev::Fault(i));
        Ok(())
    }

    /// Events recorded so far, including those of an aborted run.
    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    fn parent(&self) -> &str {
        &self.topology.parent.id
    }

    fn push(&mut self, time: f64, ev: Ev) {
        self.seq += 1;
        self.heap.push(Reverse(Scheduled {
            time,
            seq: self.seq,
            ev,
        }));
    }

    fn log(&mut self, node: &str, event: &str, detail: impl Into<String>) {
        if self.faults_enabled {
            self.events.push(EventRecord {
                time: self.now,
                node: node.to_string(),
                event: event.to_string(),
                detail: detail.into(),
            });
        }
    }

    fn speed(&self, node: &str) -> f64 {
        self.topology.node(node).expect("known node").effective_speed()
    }

    fn duration(&self, node: &str, kind: &TaskKind) -> f64 {
        let ops = match kind {
            TaskKind::Layers(r) => range_ops(self.model, r.clone()) as f64,
            TaskKind::Gather => {
                self.cost.gather_ops_per_element * self.model.boundary_shape(self.model.len()).iter().product::<usize>() as f64
            }
        };
        ops / self.speed(node)
    }

    pub fn run(&mut self) -> Result<SimResult> {
        self.plans.push(self.plan.clone());
        self.start_generation()?;
        while self.remaining > 0 {
            let Some(Reverse(s)) = self.heap.pop() else {
                return Err(Error::Plan("simulation stalled with unfinished samples".into()));
            };
            self.now = s.time;
            self.handle(s.ev)?;
        }
        Ok(self.finish())
    }

    fn handle(&mut self, ev: Ev) -> Result<()> {
        match ev {
            Ev::Fault(i) => self.on_fault(i),
            Ev::TaskReady { gen, node, task } => {
                if gen == self.gen && !self.offline.contains(&node) {
                    self.nodes.get_mut(&node).unwrap().queue.push_back(task);
                    self.try_start(&node);
                }
                Ok(())
            }
            Ev::TaskDone { gen, node, task } => self.on_task_done(gen, node, task),
            Ev::Arrive { gen, msg } => self.on_arrive(gen, msg),
            Ev::Timeout { gen, sample, interval } => self.on_timeout(gen, sample, interval),
        }
    }

    fn try_start(&mut self, node: &str) {
        let rt = self.nodes.get_mut(node).unwrap();
        if rt.running.is_some() {
            return;
        }
        let Some(task) = rt.queue.pop_front() else { return };
        let dur = self.duration(node, &task.kind);
        let end = self.now + dur;
        self.nodes.get_mut(node).unwrap().running = Some((self.now, end));
        let what = match &task.kind {
            TaskKind::Layers(r) => format!("sample {} layers {}..{}", task.token.sample, r.start, r.end),
            TaskKind::Gather => format!("sample {} gather", task.token.sample),
        };
        self.log(node, "compute-start", what);
        let gen = self.gen;
        self.push(
            end,
            Ev::TaskDone {
                gen,
                node: node.to_string(),
                task,
            },
        );
    }

    /// Closes the running segment of `node` at `until`.
    fn close_segment(&mut self, node: &str, until: f64) {
        if let Some((start, end)) = self.nodes.get_mut(node).unwrap().running.take() {
            let stop = end.min(until);
            let s = self.stats.get_mut(node).unwrap();
            s.compute_seconds += stop - start;
            s.segments.push((start, stop));
        }
    }

    fn on_task_done(&mut self, gen: u64, node: String, task: Task) -> Result<()> {
        if gen != self.gen || self.offline.contains(&node) {
            return Ok(());
        }
        self.close_segment(&node, self.now);
        let Task { mut token, kind } = task;
        match kind {
            TaskKind::Layers(r) => {
                if let (Some(w), Some(t)) = (self.weights, token.tensor.take()) {
                    token.tensor = Some(forward_range(self.model, w, &t, r.clone())?);
                }
                token.boundary = r.end;
                token.lineage.push(r.clone());
                self.log(&node, "compute-end", format!("sample {} layers {}..{}", token.sample, r.start, r.end));
                self.checkpoint(&node, &token);
                let l = self.model.len();
                if r.end == l {
                    if node == self.parent() {
                        self.complete(token);
                    } else {
                        let parent = self.parent().to_string();
                        self.send(&node, &parent, token);
                    }
                } else {
                    let next = self.plan.owner(r.end).expect("plan covers every layer").to_string();
                    self.send(&node, &next, token);
                }
            }
            TaskKind::Gather => {
                self.log(&node, "gather", format!("sample {}", token.sample));
                self.complete(token);
            }
        }
        self.try_start(&node);
        Ok(())
    }

    fn complete(&mut self, token: Token) {
        let s = token.sample;
        if self.done[s].is_none() {
            self.log(self.parent().to_string().as_str(), "done", format!("sample {s}"));
            self.done[s] = Some((self.now, token));
            self.remaining -= 1;
        }
    }

    fn checkpoint(&mut self, holder: &str, token: &Token) {
        self.checkpoints[token.sample].push(Checkpoint {
            holder: holder.to_string(),
            token: token.clone(),
        });
    }

    fn send(&mut self, from: &str, to: &str, token: Token) {
        let elems = self.model.boundary_shape(token.boundary).iter().product::<usize>() as u64;
        let bytes = elems * self.cost.bytes_per_element;
        let digest = token.tensor.as_ref().map(checksum);
        let mut payload = token.tensor.clone();
        if self.armed.remove(from) {
            if let Some(p) = payload.as_mut() {
                let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (self.seq << 20) ^ token.sample as u64);
                for v in p.data_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
            self.log(from, "garbage", format!("sample {} payload corrupted", token.sample));
        }
        let (a, b) = (self.topology.node(from).unwrap(), self.topology.node(to).unwrap());
        let dur = crate::planner::cost::transfer_time(a, b, bytes);
        let key = (from.to_string(), to.to_string());
        let start = self.link_free.get(&key).copied().unwrap_or(0.0).max(self.now);
        let arrive = start + dur;
        self.link_free.insert(key.clone(), arrive);
        self.edges.entry(key).or_default().sent += bytes;
        let st = self.stats.get_mut(from).unwrap();
        st.messages_sent += 1;
        st.bytes_sent += bytes;
        self.log(from, "send", format!("sample {} boundary {} to {to} ({bytes} bytes)", token.sample, token.boundary));
        let gen = self.gen;
        self.push(
            arrive,
            Ev::Arrive {
                gen,
                msg: Message {
                    from: from.to_string(),
                    to: to.to_string(),
                    token,
                    payload,
                    digest,
                    bytes,
                },
            },
        );
    }

    fn on_arrive(&mut self, gen: u64, msg: Message) -> Result<()> {
        let key = (msg.from.clone(), msg.to.clone());
        if gen != self.gen || self.offline.contains(&msg.from) || self.offline.contains(&msg.to) {
            self.edges.entry(key).or_default().dropped += msg.bytes;
            self.log(&msg.to, "drop", format!("sample {} from {}", msg.token.sample, msg.from));
            return Ok(());
        }
        self.edges.entry(key).or_default().received += msg.bytes;
        let st = self.stats.get_mut(&msg.to).unwrap();
        st.messages_received += 1;
        st.bytes_received += msg.bytes;
        if let (Some(p), Some(d)) = (&msg.payload, &msg.digest) {
            if checksum(p) != *d {
                self.checksum_failures += 1;
                self.log(
                    &msg.to,
                    "checksum-mismatch",
                    format!("sample {} from {}", msg.token.sample, msg.from),
                );
                if msg.from == self.parent() {
                    self.log(&msg.from, "retransmit", format!("sample {}", msg.token.sample));
                    self.send(&msg.from, &msg.to, msg.token);
                    return Ok(());
                }
                return self.replan(vec![msg.from]);
            }
        }
        self.log(
            &msg.to,
            "recv",
            format!("sample {} boundary {} from {}", msg.token.sample, msg.token.boundary, msg.from),
        );
        self.checkpoint(&msg.to, &msg.token);
        self.dispatch_at(&msg.to, msg.token);
        Ok(())
    }

    /// Queues the next step for a token that has reached `node`.
    fn dispatch_at(&mut self, node: &str, token: Token) {
        let l = self.model.len();
        let kind = if token.boundary == l {
            TaskKind::Gather
        } else {
            let a = self
                .plan
                .assignments
                .iter()
                .find(|a| a.layers.contains(&token.boundary))
                .expect("plan covers every layer");
            TaskKind::Layers(token.boundary..a.layers.end)
        };
        let gen = self.gen;
        let now = self.now;
        self.push(
            now,
            Ev::TaskReady {
                gen,
                node: node.to_string(),
                task: Task { token, kind },
            },
        );
    }

    fn on_fault(&mut self, i: usize) -> Result<()> {
        let f = self.faults[i].clone();
        if self.offline.contains(&f.node) {
            return Ok(());
        }
        match f.kind {
            FaultKind::Offline => {
                self.log(&f.node, "offline", "node stops responding");
                if f.node == self.parent() {
                    return Err(Error::ParentFailed(f.node.clone()));
                }
                self.offline.insert(f.node.clone());
                let now = self.now;
                self.close_segment(&f.node, now);
                self.nodes.get_mut(&f.node).unwrap().queue.clear();
            }
            FaultKind::Garbage => {
                self.log(&f.node, "garbage-armed", "next outgoing payload will be corrupted");
                self.armed.insert(f.node.clone());
            }
        }
        Ok(())
    }

    fn on_timeout(&mut self, gen: u64, sample: usize, interval: f64) -> Result<()> {
        if gen != self.gen || self.done[sample].is_some() {
            return Ok(());
        }
        let suspects: Vec<String> = self
            .plan
            .assignments
            .iter()
            .map(|a| a.node.clone())
            .filter(|n| self.offline.contains(n))
            .collect();
        self.log(self.parent().to_string().as_str(), "timeout", format!("sample {sample}"));
        if suspects.is_empty() {
            let now = self.now;
            self.push(now + interval, Ev::Timeout { gen, sample, interval });
            return Ok(());
        }
        self.replan(suspects)
    }

    fn replan(&mut self, failed: Vec<String>) -> Result<()> {
        let parent = self.parent().to_string();
        if failed.contains(&parent) {
            return Err(Error::ParentFailed(parent));
        }
        self.excluded.extend(failed.iter().cloned());
        let mut topo = self.topology.clone();
        for f in &self.excluded {
            topo = topo.without(f);
        }
        let cands: Vec<_> = select_candidates(&topo)
            .into_iter()
            .filter(|n| !self.offline.contains(&n.id))
            .collect();
        let plan = plan_partition(self.model, &self.mem, &cands, &self.cost, &self.config.planner)?;
        self.replans += 1;
        self.log(
            &parent,
            "replan",
            format!(
                "excluding {}; new plan over {}",
                failed.join(","),
                plan.assignments.iter().map(|a| a.node.as_str()).collect::<Vec<_>>().join(",")
            ),
        );
        let now = self.now;
        let ids: Vec<String> = self.nodes.keys().cloned().collect();
        for id in ids {
            self.close_segment(&id, now);
            self.nodes.get_mut(&id).unwrap().queue.clear();
        }
        self.link_free.clear();
        self.gen += 1;
        self.plan = plan;
        self.plans.push(self.plan.clone());
        self.start_generation()
    }

    fn live(&self, node: &str) -> bool {
        !self.offline.contains(node) && !self.excluded.contains(node)
    }

    /// Resumes every unfinished sample from its furthest checkpoint held by a
    /// live node, and arms timeouts from a fault-free dry run.
    fn start_generation(&mut self) -> Result<()> {
        let l = self.model.len();
        let parent = self.parent().to_string();
        let mut resumed = Vec::new();
        for s in 0..self.done.len() {
            if self.done[s].is_some() {
                continue;
            }
            let target_of = |b: usize| {
                if b == l {
                    parent.clone()
                } else {
                    self.plan.owner(b).expect("plan covers every layer").to_string()
                }
            };
            let best = self.checkpoints[s]
                .iter()
                .filter(|c| self.live(&c.holder))
                .max_by(|a, b| {
                    a.token
                        .boundary
                        .cmp(&b.token.boundary)
                        .then_with(|| (a.holder == target_of(a.token.boundary)).cmp(&(b.holder == target_of(b.token.boundary))))
                })
                .expect("the parent always holds the input");
            let (holder, token) = (best.holder.clone(), best.token.clone());
            let target = target_of(token.boundary);
            if self.gen > 0 {
                self.log(&holder, "resume", format!("sample {s} from boundary {}", token.boundary));
            }
            resumed.push((holder, target, token));
        }
        for (holder, target, token) in resumed.iter().cloned() {
            if holder == target {
                self.dispatch_at(&target, token);
            } else {
                self.send(&holder, &target, token);
            }
        }
        if self.faults_enabled {
            let expected = self.dry_run(&resumed)?;
            let gen = self.gen;
            for (s, t) in expected {
                let interval = self.config.timeout_factor * (t - self.now);
                let now = self.now;
                self.push(now + interval, Ev::Timeout { gen, sample: s, interval });
            }
        }
        Ok(())
    }

    /// Completion time of each resumed sample if nothing fails from now on.
    fn dry_run(&self, resumed: &[(String, String, Token)]) -> Result<Vec<(usize, f64)>> {
        let tokens: Vec<Token> = (0..self.done.len())
            .map(|s| Token {
                sample: s,
                boundary: 0,
                tensor: None,
                lineage: Vec::new(),
            })
            .collect();
        let mut dry = Simulation::build(
            self.plan.clone(),
            self.model,
            None,
            self.topology.clone(),
            self.config,
            self.mem,
            tokens,
            false,
        );
        dry.now = self.now;
        dry.gen = self.gen;
        for (s, d) in self.done.iter().enumerate() {
            if d.is_some() {
                dry.done[s] = Some((self.now, dry.checkpoints[s][0].token.clone()));
                dry.remaining -= 1;
            }
        }
        for (holder, target, token) in resumed {
            let mut t = token.clone();
            t.tensor = None;
            if holder == target {
                dry.dispatch_at(target, t);
            } else {
                dry.send(holder, target, t);
            }
        }
        while dry.remaining > 0 {
            let Some(Reverse(s)) = dry.heap.pop() else {
                return Err(Error::Plan("dry run stalled".into()));
            };
            dry.now = s.time;
            dry.handle(s.ev)?;
        }
        Ok(resumed
            .iter()
            .map(|(_, _, t)| (t.sample, dry.done[t.sample].as_ref().unwrap().0))
            .collect())
    }

    fn finish(&mut self) -> SimResult {
        let l = self.model.len();
        let mut layer_execs = vec![0u64; l];
        let mut outputs = Vec::with_capacity(self.done.len());
        let mut makespan: f64 = 0.0;
        for d in &self.done {
            let (t, token) = d.as_ref().expect("all samples complete");
            makespan = makespan.max(*t);
            for r in &token.lineage {
                for i in r.clone() {
                    layer_execs[i] += 1;
                }
            }
            outputs.push(token.tensor.clone().expect("full runs carry tensors"));
        }
        let output = if self.single {
            outputs.pop().unwrap()
        } else {
            Tensor::stack(&outputs).expect("outputs share a shape")
        };
        let parent = self.parent().to_string();
        let out_bytes = self.model.boundary_shape(l).iter().product::<usize>() as u64 * self.cost.bytes_per_element;
        for plan in &self.plans {
            for (node, bytes) in &plan.per_node_bytes {
                let s = self.stats.get_mut(node).unwrap();
                s.assigned_bytes = s.assigned_bytes.max(*bytes);
            }
        }
        for (id, s) in self.stats.iter_mut() {
            s.peak_bytes = s.assigned_bytes;
            if *id == parent {
                s.peak_bytes += self.config.parent_overhead_bytes + out_bytes * self.done.len() as u64;
                s.busy_seconds = makespan;
            } else {
                s.busy_seconds = s.compute_seconds;
            }
        }
        SimResult {
            output,
            makespan,
            per_node: std::mem::take(&mut self.stats),
            edges: std::mem::take(&mut self.edges),
            events: std::mem::take(&mut self.events),
            replans: self.replans,
            checksum_failures: self.checksum_failures,
            layer_execs,
            samples: self.done.len(),
            final_plan: self.plan.clone(),
            time_resolution: self.config.time_resolution,
        }
    }
}

fn calibrated(topology: &Topology, config: &SimConfig) -> Result<Topology> {
    apply_calibration(topology, &config.calibration)
}

/// Scales node speeds by measured factors.
pub fn apply_calibration(topology: &Topology, factors: &BTreeMap<String, f64>) -> Result<Topology> {
    let mut t = topology.clone();
    for (id, f) in factors {
        if !(*f > 0.0 && f.is_finite()) {
            return Err(Error::Range(format!("calibration factor for {id} must be positive")));
        }
        let n = if t.parent.id == *id {
            &mut t.parent
        } else {
            t.neighbors
                .iter_mut()
                .find(|n| n.id == *id)
                .ok_or_else(|| Error::Plan(format!("calibration names unknown node {id}")))?
        };
        n.speed *= f;
    }
    Ok(t)
}

fn check_plan(plan: &PartitionPlan, model: &ModelSpec, topology: &Topology) -> Result<()> {
    let mut nodes: Vec<_> = vec![topology.parent.clone()];
    nodes.extend(topology.neighbors.iter().cloned());
    let v = validate_plan(plan, model, &nodes);
    if let Some(first) = v.first() {
        return Err(Error::Plan(format!("{} violation(s), first: {first}", v.len())));
    }
    Ok(())
}

/// Memory model matching the plan's byte total when none is configured.
fn infer_memory(model: &ModelSpec, model_bytes: u64) -> Result<MemoryEstimate> {
    let total = model_params(model).total;
    if total == 0 {
        return memory_for_total(0, 1, 1, 1);
    }
    if !model_bytes.is_multiple_of(total) {
        return Err(Error::Plan(format!(
            "plan charges {model_bytes} bytes, not a multiple of the {total} model parameters"
        )));
    }
    memory_for_total(total, 1, 1, model_bytes / total)
}
