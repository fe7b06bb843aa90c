//! Experiment configuration: a TOML file with one block per hardware unit
//! plus scheduler/run/output blocks. Every field has a default, so an empty
//! file is a valid (fully default) experiment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::hwmodel::{DRAMConfig, EnergyParams, NPUConfig, PIMConfig};
use crate::nmc::TimingParams;
use crate::scheduler::{group_of, optimal_ratio_of_group, HeadStats, Objective, ObjectiveMode};
use crate::simloop::{Mode, SchedParams, SystemConfig};
use crate::workload::{build_model_spec, ModelSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBlock {
    pub preset: String,
    pub n_decode_heads: Option<u64>,
    pub bytes_per_weight: Option<u64>,
    pub bytes_per_kv: Option<u64>,
}

impl Default for ModelBlock {
    fn default() -> Self {
        ModelBlock {
            preset: "llama2-7b".into(),
            n_decode_heads: None,
            bytes_per_weight: None,
            bytes_per_kv: None,
        }
    }
}

impl ModelBlock {
    pub fn build(&self) -> Result<ModelSpec> {
        let mut m = build_model_spec(&self.preset)?;
        if let Some(h) = self.n_decode_heads {
            m.n_decode_heads = h;
        }
        if let Some(b) = self.bytes_per_weight {
            m.bytes_per_weight = b;
        }
        if let Some(b) = self.bytes_per_kv {
            m.bytes_per_kv = b;
        }
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerBlock {
    pub objective: ObjectiveMode,
    pub node_budget: usize,
    pub ewma_decay: f64,
    pub k_max: usize,
    pub group_cap: u64,
    pub overlap_realloc: bool,
    /// Optional explicit prior rows p[i][k]; omitted = built-in decaying prior.
    pub prior: Option<Vec<Vec<f64>>>,
}

impl Default for SchedulerBlock {
    fn default() -> Self {
        let d = SchedParams::default();
        SchedulerBlock {
            objective: d.objective.mode,
            node_budget: d.objective.node_budget,
            ewma_decay: d.ewma_decay,
            k_max: d.k_max,
            group_cap: d.group_cap,
            overlap_realloc: d.overlap_realloc,
            prior: None,
        }
    }
}

impl SchedulerBlock {
    pub fn to_params(&self) -> SchedParams {
        SchedParams {
            objective: Objective {
                mode: self.objective,
                node_budget: self.node_budget,
            },
            ewma_decay: self.ewma_decay,
            k_max: self.k_max,
            prior: self.prior.clone(),
            group_cap: self.group_cap,
            overlap_realloc: self.overlap_realloc,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunBlock {
    pub modes: Vec<Mode>,
    /// (l_in, l_out) sweep pairs.
    pub length_pairs: Vec<[u64; 2]>,
    /// Fixed speculation lengths for the non-scheduled modes.
    pub l_spec: Vec<u64>,
    pub seeds: Vec<u64>,
}

impl Default for RunBlock {
    fn default() -> Self {
        RunBlock {
            modes: crate::simloop::ALL_MODES.to_vec(),
            length_pairs: vec![[128, 256], [256, 512]],
            l_spec: vec![5, 10, 20, 32],
            seeds: vec![1],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: String,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock { dir: "out".into() }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub npu: NPUConfig,
    pub pim: PIMConfig,
    #[serde(default = "PIMConfig::samsung_baseline")]
    pub pim_baseline: PIMConfig,
    pub dram: DRAMConfig,
    pub timing: TimingParams,
    pub energy: EnergyParams,
    pub scheduler: SchedulerBlock,
    pub run: RunBlock,
    pub output: OutputBlock,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_system(&self) -> SystemConfig {
        SystemConfig {
            npu: self.npu.clone(),
            pim: self.pim.clone(),
            pim_baseline: self.pim_baseline.clone(),
            dram: self.dram.clone(),
            energy: self.energy.clone(),
            timing: self.timing.clone(),
        }
    }

    /// Full invariant check; returns every violation, not just the first.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        let model = match self.model.build() {
            Ok(m) => Some(m),
            Err(e) => {
                out.push(format!("model: {e}"));
                None
            }
        };
        if let Err(e) = self.timing.validate() {
            out.push(format!("timing: {e}"));
        }
        if self.npu.matrix_tflops <= 0.0 || self.npu.vector_tflops <= 0.0 {
            out.push("npu: peak throughputs must be positive".into());
        }
        for (name, pim) in [("pim", &self.pim), ("pim_baseline", &self.pim_baseline)] {
            if pim.total_bw() <= 0.0 || pim.n_dies() == 0 || pim.alus_per_mpu == 0 {
                out.push(format!(
                    "{name}: bandwidth, die count and ALU count must be positive"
                ));
            }
        }
        if self.dram.offchip_bw <= 0.0 {
            out.push("dram: off-chip bandwidth must be positive".into());
        }
        for (name, v) in [
            ("e_offchip_per_byte", self.energy.e_offchip_per_byte),
            ("e_internal_per_byte", self.energy.e_internal_per_byte),
            ("e_npu_mac", self.energy.e_npu_mac),
            ("e_pim_mac", self.energy.e_pim_mac),
            ("e_onchip_per_byte", self.energy.e_onchip_per_byte),
        ] {
            if v < 0.0 || !v.is_finite() {
                out.push(format!("energy: {name} must be finite and nonnegative"));
            }
        }
        let s = &self.scheduler;
        if s.node_budget == 0 {
            out.push("scheduler: node_budget must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&s.ewma_decay) {
            out.push(format!(
                "scheduler: ewma_decay {} outside [0,1]",
                s.ewma_decay
            ));
        }
        if s.k_max == 0 || s.group_cap == 0 {
            out.push("scheduler: k_max and group_cap must be >= 1".into());
        }
        if let Some(prior) = &s.prior {
            if let Err(e) = HeadStats::from_prior(prior.clone(), s.ewma_decay.clamp(0.0, 1.0)) {
                out.push(format!("scheduler: prior invalid: {e}"));
            }
        }
        let r = &self.run;
        if r.modes.is_empty()
            || r.length_pairs.is_empty()
            || r.l_spec.is_empty()
            || r.seeds.is_empty()
        {
            out.push("run: modes, length_pairs, l_spec and seeds must be nonempty".into());
        }
        if r.l_spec.contains(&0) {
            out.push("run: l_spec entries must be >= 1".into());
        }
        if r.length_pairs.iter().any(|p| p[0] == 0 || p[1] == 0) {
            out.push("run: l_in and l_out must be >= 1".into());
        }
        if let Some(model) = &model {
            let max_seq: u64 = r
                .length_pairs
                .iter()
                .map(|p| p[0] + p[1])
                .max()
                .unwrap_or(0);
            let footprint = model.total_weight_bytes() + model.kv_bytes_per_iter(max_seq);
            let capacity = self.dram.total_capacity() + self.pim.total_capacity();
            if footprint > capacity {
                out.push(format!(
                    "capacity: model footprint {footprint} B exceeds total memory {capacity} B"
                ));
            }
            // Modes that pin the full eligible weight set on a PIM device.
            let weights = model.total_weight_bytes();
            for mode in &r.modes {
                let (dev, cap) = match mode {
                    Mode::PimSi => ("pim_baseline", self.pim_baseline.total_capacity()),
                    Mode::LpSpec => ("pim", self.pim.total_capacity()),
                    Mode::LpSpecCoproc | Mode::LpSpecCoprocSched => {
                        // Worst case: the group-1 optimal ratio.
                        let f = optimal_ratio_of_group(
                            group_of(1, &self.pim, s.group_cap),
                            &self.pim,
                            &self.dram,
                        );
                        let need = (weights as f64 * f) as u64;
                        if need > self.pim.total_capacity() {
                            out.push(format!(
                                "capacity: mode {mode} needs {need} B on pim, capacity {} B",
                                self.pim.total_capacity()
                            ));
                        }
                        continue;
                    }
                    Mode::NpuSi => continue,
                };
                if weights > cap {
                    out.push(format!(
                        "capacity: mode {mode} needs {weights} B on {dev}, capacity {cap} B"
                    ));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let diags = self.diagnostics();
        if diags.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(diags.join("; ")))
        }
    }
}
