//! The LP-Spec scheduler: the draft token pruner (accuracy statistics plus a
//! hardware-informed greedy token-tree builder) and the data allocation unit
//! (partition table, L_spec groups, 2-bit saturating counters, reallocation
//! plans).

use serde::{Deserialize, Serialize};

use crate::hwmodel::{
    iteration_energy, npu_latency, parallel_latency, pim_latency, DRAMConfig, EnergyParams,
    LatencyCombine, NPUConfig, PIMConfig,
};
use crate::workload::{decode_op_graph, KVState, ModelSpec, OpDescriptor};
use crate::{Error, Result};

/// Per-head, per-rank acceptance probabilities tracked by EWMA.
/// `p[i][k-1]` is the probability that head `i`'s rank-`k` prediction is the
/// true token. Within a head, p is kept nonincreasing in rank and sums to at
/// most 1 (the remainder is the miss probability).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadStats {
    pub p: Vec<Vec<f64>>,
    pub ewma_decay: f64,
    pub observations: u64,
}

/// Decaying heuristic prior: p[i][k] = 0.6 / k / (i+1), rescaled per head if
/// the ranks would sum above 1.
pub fn default_prior(n_heads: usize, k_max: usize) -> Vec<Vec<f64>> {
    (0..n_heads)
        .map(|i| {
            let mut row: Vec<f64> = (1..=k_max)
                .map(|k| 0.6 / k as f64 / (i + 1) as f64)
                .collect();
            let sum: f64 = row.iter().sum();
            if sum > 1.0 {
                for v in &mut row {
                    *v /= sum;
                }
            }
            row
        })
        .collect()
}

pub const DEFAULT_EWMA_DECAY: f64 = 0.05;

impl HeadStats {
    pub fn with_prior(n_heads: usize, k_max: usize) -> Self {
        HeadStats {
            p: default_prior(n_heads, k_max),
            ewma_decay: DEFAULT_EWMA_DECAY,
            observations: 0,
        }
    }

    pub fn from_prior(p: Vec<Vec<f64>>, ewma_decay: f64) -> Result<Self> {
        let s = HeadStats {
            p,
            ewma_decay,
            observations: 0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn n_heads(&self) -> usize {
        self.p.len()
    }

    pub fn k_max(&self) -> usize {
        self.p.first().map_or(0, |r| r.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.is_empty() || self.p.iter().any(|r| r.is_empty()) {
            return Err(Error::Config(
                "head stats must cover >= 1 head and rank".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.ewma_decay) {
            return Err(Error::Config(format!(
                "ewma decay {} outside [0,1]",
                self.ewma_decay
            )));
        }
        for (i, row) in self.p.iter().enumerate() {
            let mut sum = 0.0;
            let mut prev = f64::INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Config(format!(
                        "p[{i}][{}] = {v} outside [0,1]",
                        j + 1
                    )));
                }
                if v > prev {
                    return Err(Error::Config(format!(
                        "p[{i}] not rank-ordered at rank {}",
                        j + 1
                    )));
                }
                prev = v;
                sum += v;
            }
            if sum > 1.0 + 1e-9 {
                return Err(Error::Config(format!("p[{i}] sums to {sum} > 1")));
            }
        }
        Ok(())
    }
}

/// Verification feedback for one head: the rank that turned out correct, or
/// a miss (true token outside the tracked top-K).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadOutcome {
    Accepted(usize),
    Miss,
}

/// EWMA update from one verification outcome; re-sorts each updated head so
/// the rank-monotonicity invariant survives the update.
pub fn update_stats(stats: &mut HeadStats, outcome: &[HeadOutcome]) {
    let lambda = stats.ewma_decay;
    for (i, &o) in outcome.iter().enumerate() {
        if i >= stats.p.len() {
            break;
        }
        let row = &mut stats.p[i];
        for (j, v) in row.iter_mut().enumerate() {
            let hit = matches!(o, HeadOutcome::Accepted(r) if r == j + 1);
            *v = (1.0 - lambda) * *v + lambda * if hit { 1.0 } else { 0.0 };
        }
        row.sort_by(|a, b| b.partial_cmp(a).expect("probabilities are finite"));
    }
    stats.observations += 1;
}

/// Draft token tree. Node 0 is the root: the verified LM-head token, which
/// carries no head/rank and contributes probability 1 to every path. A node
/// at depth d (d >= 1) is head d-1's rank-k prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub parent: usize,
    pub head: usize,
    /// 1-based prediction rank within the head.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTree {
    /// nodes[0] is the root sentinel (parent = 0, head/rank meaningless).
    pub nodes: Vec<TreeNode>,
}

impl Default for TokenTree {
    fn default() -> Self {
        TokenTree::new()
    }
}

impl TokenTree {
    pub fn new() -> Self {
        TokenTree {
            nodes: vec![TreeNode {
                parent: 0,
                head: 0,
                rank: 0,
            }],
        }
    }

    pub const ROOT: usize = 0;

    /// Draft node count; equals L_spec for the verify pass.
    pub fn n_draft(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn depth_of(&self, mut id: usize) -> usize {
        let mut d = 0;
        while id != Self::ROOT {
            id = self.nodes[id].parent;
            d += 1;
        }
        d
    }

    /// Adds a draft node; the head index must be exactly the parent's + 1
    /// (head i predicts the depth-(i+1) future token).
    pub fn add_node(&mut self, parent: usize, head: usize, rank: usize) -> Result<usize> {
        if parent >= self.nodes.len() {
            return Err(Error::Contract(format!("parent {parent} not in tree")));
        }
        let expected_head = if parent == Self::ROOT {
            0
        } else {
            self.nodes[parent].head + 1
        };
        if head != expected_head {
            return Err(Error::Contract(format!(
                "node head {head} must be {expected_head} under parent {parent}"
            )));
        }
        if rank == 0 {
            return Err(Error::Contract("ranks are 1-based".into()));
        }
        let dup = self
            .nodes
            .iter()
            .skip(1)
            .any(|n| n.parent == parent && n.head == head && n.rank == rank);
        if dup {
            return Err(Error::Contract(format!(
                "duplicate node (parent {parent}, head {head}, rank {rank})"
            )));
        }
        self.nodes.push(TreeNode { parent, head, rank });
        Ok(self.nodes.len() - 1)
    }

    /// Root-to-node path, root excluded, ordered from depth 1 downward.
    pub fn path(&self, mut id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        while id != Self::ROOT {
            out.push(id);
            id = self.nodes[id].parent;
        }
        out.reverse();
        out
    }

    pub fn max_depth(&self) -> usize {
        (0..self.nodes.len())
            .map(|i| self.depth_of(i))
            .max()
            .unwrap_or(0)
    }
}

/// Product of per-head acceptance probabilities along the node's path.
pub fn path_acceptance(tree: &TokenTree, node: usize, stats: &HeadStats) -> f64 {
    tree.path(node)
        .iter()
        .map(|&id| {
            let n = &tree.nodes[id];
            stats.p[n.head][n.rank - 1]
        })
        .product()
}

/// Expected number of accepted draft tokens: sum of path products over all
/// draft nodes.
pub fn expected_accept_length(tree: &TokenTree, stats: &HeadStats) -> f64 {
    (1..tree.nodes.len())
        .map(|id| path_acceptance(tree, id, stats))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveMode {
    Throughput,
    Energy,
    Edp,
    /// Expected accepted tokens only; ignores the hardware estimator.
    Accuracy,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Objective {
    pub mode: ObjectiveMode,
    pub node_budget: usize,
}

impl Default for Objective {
    fn default() -> Self {
        Objective {
            mode: ObjectiveMode::Throughput,
            node_budget: 16,
        }
    }
}

/// Hardware cost of one decode iteration at a given speculation length.
pub trait CostModel {
    /// Returns (latency seconds, energy joules) for one verify iteration.
    fn latency_energy(&self, l_spec: u64) -> Result<(f64, f64)>;
}

/// The pruner's analytic estimator: roofline NPU + streaming PIM under the
/// optimal partition ratio for each candidate L_spec.
pub struct DtpEstimator<'a> {
    pub model: &'a ModelSpec,
    pub kv: KVState,
    pub npu: &'a NPUConfig,
    pub pim: &'a PIMConfig,
    pub dram: &'a DRAMConfig,
    pub energy: &'a EnergyParams,
    /// How NPU and PIM latencies combine; the estimator defaults to `Min`
    /// (the source cost-model formula), the simulator charges `Max`.
    pub combine: LatencyCombine,
    /// Fraction of pim-eligible bytes on the PIM ranks; `None` means use
    /// the optimal ratio for the candidate L_spec.
    pub ratio_override: Option<f64>,
}

/// Splits an op list for tensor-parallel co-processing: eligible weight
/// bytes/FLOPs go `f` to PIM, the rest (plus all activations and ineligible
/// ops) stay with the NPU.
pub fn partition_ops(ops: &[OpDescriptor], f: f64) -> (Vec<OpDescriptor>, Vec<OpDescriptor>) {
    let mut on_npu = Vec::with_capacity(ops.len());
    let mut on_pim = Vec::new();
    for op in ops {
        if !op.pim_eligible || f <= 0.0 {
            on_npu.push(op.clone());
            continue;
        }
        let pim_w = (op.weight_bytes as f64 * f).round() as u64;
        let pim_fl = (op.flops as f64 * f).round() as u64;
        let mut p = op.clone();
        p.weight_bytes = pim_w;
        p.flops = pim_fl;
        on_pim.push(p);
        if f < 1.0 {
            let mut n = op.clone();
            n.weight_bytes = op.weight_bytes - pim_w;
            n.flops = op.flops - pim_fl;
            on_npu.push(n);
        } else {
            // All weights on PIM; NPU still moves this op's activations.
            let mut n = op.clone();
            n.weight_bytes = 0;
            n.flops = 0;
            on_npu.push(n);
        }
    }
    (on_npu, on_pim)
}

impl CostModel for DtpEstimator<'_> {
    fn latency_energy(&self, l_spec: u64) -> Result<(f64, f64)> {
        let l = l_spec.max(1);
        let ops = decode_op_graph(self.model, self.kv, l)?;
        let f = self
            .ratio_override
            .unwrap_or_else(|| optimal_ratio(l, self.pim, self.dram));
        let (on_npu, on_pim) = partition_ops(&ops, f);
        let t_npu = npu_latency(&on_npu, self.npu, self.dram)?;
        let t_pim = if on_pim.is_empty() {
            0.0
        } else {
            pim_latency(&on_pim, self.pim, l)?
        };
        let t = if on_pim.is_empty() {
            t_npu
        } else {
            parallel_latency(t_npu, t_pim, self.combine)
        };
        let e = iteration_energy(&on_npu, &on_pim, self.energy, self.pim, l);
        Ok((t, e.e_total))
    }
}

fn objective_value(
    mode: ObjectiveMode,
    expected_len: f64,
    n_draft: usize,
    est: &dyn CostModel,
) -> Result<f64> {
    let tokens = 1.0 + expected_len;
    if mode == ObjectiveMode::Accuracy {
        return Ok(expected_len);
    }
    let (lat, en) = est.latency_energy(n_draft.max(1) as u64)?;
    Ok(match mode {
        ObjectiveMode::Throughput => tokens / lat,
        ObjectiveMode::Energy => tokens / en,
        ObjectiveMode::Edp => tokens * tokens / (lat * en),
        ObjectiveMode::Accuracy => unreachable!(),
    })
}

/// Greedy hardware-informed tree construction. Repeatedly takes the frontier
/// candidate with the highest path-acceptance product (ties broken toward
/// shallower depth, then lower rank) and keeps it iff the objective improves
/// at the new L_spec; stops at the node budget or on the first rejection.
pub fn explore_tree(stats: &HeadStats, est: &dyn CostModel, obj: &Objective) -> Result<TokenTree> {
    stats.validate()?;
    if obj.node_budget == 0 {
        return Err(Error::Config("node budget must be >= 1".into()));
    }
    let n_heads = stats.n_heads();
    let k_max = stats.k_max();
    let mut tree = TokenTree::new();
    // Candidate = (product, depth, rank, parent). Products never exceed the
    // parent's, so a max-product scan stays prefix-closed.
    let mut frontier: Vec<(f64, usize, usize, usize)> = (1..=k_max)
        .map(|k| (stats.p[0][k - 1], 1, k, TokenTree::ROOT))
        .collect();
    let mut expected = 0.0;
    let mut value = objective_value(obj.mode, 0.0, 0, est)?;
    while tree.n_draft() < obj.node_budget && !frontier.is_empty() {
        let best = frontier
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                a.0.partial_cmp(&b.0)
                    .expect("finite products")
                    .then(b.1.cmp(&a.1)) // shallower first
                    .then(b.2.cmp(&a.2)) // lower rank first
                    .then(b.3.cmp(&a.3)) // lower parent id first
            })
            .map(|(i, _)| i)
            .expect("frontier nonempty");
        let (prod, depth, rank, parent) = frontier[best];
        let cand_expected = expected + prod;
        let cand_value = objective_value(obj.mode, cand_expected, tree.n_draft() + 1, est)?;
        if cand_value <= value {
            break;
        }
        frontier.swap_remove(best);
        let id = tree.add_node(parent, depth - 1, rank)?;
        if depth < n_heads {
            for k in 1..=k_max {
                frontier.push((prod * stats.p[depth][k - 1], depth + 1, k, id));
            }
        }
        expected = cand_expected;
        value = cand_value;
    }
    Ok(tree)
}

/// Partition ratio equalizing NPU and PIM time over pim-eligible bytes:
/// f = B_pim_eff / (B_pim_eff + BW_off) with B_pim_eff = BW_PIM / ceil(l/N_ALU).
pub fn optimal_ratio(l_spec: u64, pim: &PIMConfig, dram: &DRAMConfig) -> f64 {
    optimal_ratio_of_group(pim.stream_passes(l_spec.max(1)), pim, dram)
}

/// Same ratio keyed directly on the group id (= the ceil factor).
pub fn optimal_ratio_of_group(group: u64, pim: &PIMConfig, dram: &DRAMConfig) -> f64 {
    let b_eff = pim.total_bw() / group.max(1) as f64;
    b_eff / (b_eff + dram.offchip_bw)
}

pub const DEFAULT_GROUP_CAP: u64 = 8;

/// Group id = ceil(l_spec / N_ALU), capped; all l_spec in one group share a
/// partition-table entry.
pub fn group_of(l_spec: u64, pim: &PIMConfig, cap: u64) -> u64 {
    pim.stream_passes(l_spec.max(1)).min(cap.max(1))
}

/// Weight migration requested by the DAU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReallocationPlan {
    pub bytes: u64,
    pub to_pim: bool,
    pub from_group: u64,
    pub to_group: u64,
    pub new_ratio: f64,
}

/// Partition table state with per-group 2-bit saturating counters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionState {
    pub ratio_on_pim: f64,
    pub group_id: u64,
    pub counters: Vec<u8>,
    pub group_cap: u64,
    pub l_spec: u64,
}

impl PartitionState {
    pub fn new(initial_l_spec: u64, pim: &PIMConfig, dram: &DRAMConfig, group_cap: u64) -> Self {
        let g = group_of(initial_l_spec, pim, group_cap);
        PartitionState {
            ratio_on_pim: optimal_ratio_of_group(g, pim, dram),
            group_id: g,
            counters: vec![0; group_cap as usize + 1],
            group_cap,
            l_spec: initial_l_spec,
        }
    }
}

/// One DAU observation. Returns a plan only after the same foreign group is
/// seen twice in a row; any other observation resets the hysteresis.
pub fn dau_step(
    state: &mut PartitionState,
    observed_l_spec: u64,
    pim: &PIMConfig,
    dram: &DRAMConfig,
    pim_eligible_bytes: u64,
) -> Result<Option<ReallocationPlan>> {
    state.l_spec = observed_l_spec;
    let g = group_of(observed_l_spec, pim, state.group_cap);
    if g == state.group_id {
        for c in &mut state.counters {
            *c = 0;
        }
        return Ok(None);
    }
    for (i, c) in state.counters.iter_mut().enumerate() {
        if i as u64 != g {
            *c = 0;
        }
    }
    let c = &mut state.counters[g as usize];
    *c = (*c + 1).min(3);
    if *c < 2 {
        return Ok(None);
    }
    let f_new = optimal_ratio_of_group(g, pim, dram);
    let pim_resident = (f_new * pim_eligible_bytes as f64) as u64;
    if pim_resident > pim.total_capacity() {
        return Err(Error::Allocation(format!(
            "{pim_resident} B on PIM exceeds {} B capacity",
            pim.total_capacity()
        )));
    }
    let f_old = state.ratio_on_pim;
    let bytes = ((f_new - f_old).abs() * pim_eligible_bytes as f64) as u64;
    let plan = ReallocationPlan {
        bytes,
        to_pim: f_new > f_old,
        from_group: state.group_id,
        to_group: g,
        new_ratio: f_new,
    };
    state.group_id = g;
    state.ratio_on_pim = f_new;
    for c in &mut state.counters {
        *c = 0;
    }
    Ok(Some(plan))
}

/// How a reallocation plan lands on the timeline.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ReallocSchedule {
    /// Decode iterations the copy spans when overlapped.
    pub iterations: u64,
    pub overlapped_bytes: u64,
    /// Serialized tail latency (zero under full overlap).
    pub added_latency: f64,
}

/// Places copy-write bursts into the DQ slots the NPU leaves idle each
/// iteration. With overlap disabled the whole plan serializes at off-chip
/// bandwidth.
pub fn realloc_plan_schedule(
    plan: &ReallocationPlan,
    idle_dq_bytes_per_iter: u64,
    overlap: bool,
    offchip_bw: f64,
) -> ReallocSchedule {
    if plan.bytes == 0 {
        return ReallocSchedule::default();
    }
    if !overlap || idle_dq_bytes_per_iter == 0 {
        return ReallocSchedule {
            iterations: 1,
            overlapped_bytes: 0,
            added_latency: plan.bytes as f64 / offchip_bw,
        };
    }
    ReallocSchedule {
        iterations: plan.bytes.div_ceil(idle_dq_bytes_per_iter),
        overlapped_bytes: plan.bytes,
        added_latency: 0.0,
    }
}
