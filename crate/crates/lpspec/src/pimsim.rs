//! LPDDR5-PIM die model: MPU register resources, column-wise weight mapping
//! across compute units, broadcast/all-reduce communication costs, GEMM
//! timing at bank-beat granularity, and mode switching.

use serde::{Deserialize, Serialize};

use crate::hwmodel::PIMConfig;
use crate::nmc::TimingParams;
use crate::workload::OpDescriptor;
use crate::{Error, Result};

/// Per-MPU register resources: four 32-wide INT8 SIMD ALUs plus CRF/GRF/SRF
/// and INT32-accumulating ARF.
#[derive(Debug, Clone, Copy)]
pub struct MPUResources {
    pub n_simd_alus: u64,
    pub lanes: u64,
    pub crf_entries: u64,
    pub crf_bits: u64,
    pub grf_entries: u64,
    pub grf_bits: u64,
    pub srf_entries: u64,
    pub srf_bits: u64,
    pub arf_entries: u64,
    pub arf_bits: u64,
}

impl Default for MPUResources {
    fn default() -> Self {
        MPUResources {
            n_simd_alus: 4,
            lanes: 32,
            crf_entries: 32,
            crf_bits: 32,
            grf_entries: 16,
            grf_bits: 4 * 256,
            srf_entries: 16,
            srf_bits: 4 * 8,
            arf_entries: 8,
            arf_bits: 4 * 1024,
        }
    }
}

impl MPUResources {
    /// INT32 accumulator slots: each ARF entry holds 4x32 INT32 lanes.
    pub fn accumulator_lanes(&self) -> u64 {
        self.arf_entries * self.arf_bits / 32
    }
}

/// Assignment of output-column ranges of one op to PIM compute units.
#[derive(Debug, Clone)]
pub struct ColumnMapping {
    /// One (start, end) half-open column range per unit, in unit order
    /// (rank-major, then die, then MPU).
    pub ranges: Vec<(u64, u64)>,
    pub n_cols: u64,
}

impl ColumnMapping {
    pub fn cols_of(&self, unit: usize) -> u64 {
        let (s, e) = self.ranges[unit];
        e - s
    }

    pub fn max_unit_cols(&self) -> u64 {
        self.ranges.iter().map(|(s, e)| e - s).max().unwrap_or(0)
    }

    pub fn min_unit_cols(&self) -> u64 {
        self.ranges.iter().map(|(s, e)| e - s).min().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommScheme {
    Broadcast,
    AllReduce,
}

#[derive(Debug, Clone, Copy)]
pub struct CommCost {
    pub bytes_moved: u64,
    pub scheme: CommScheme,
}

/// Splits the op's output columns evenly across all PIM compute units.
/// Remainder columns are spread one per unit so per-unit loads differ by at
/// most one column. Input activations are broadcast; no partial-sum
/// reduction is needed.
pub fn map_gemm_columnwise(op: &OpDescriptor, pim: &PIMConfig) -> Result<ColumnMapping> {
    if !op.pim_eligible {
        return Err(Error::Contract("cannot map a non-PIM-eligible op".into()));
    }
    if op.n == 0 {
        return Err(Error::Contract(
            "map_gemm_columnwise requires n >= 1".into(),
        ));
    }
    let units = pim.total_units();
    let base = op.n / units;
    let rem = op.n % units;
    let mut ranges = Vec::with_capacity(units as usize);
    let mut start = 0u64;
    for u in 0..units {
        let cols = base + if u < rem { 1 } else { 0 };
        ranges.push((start, start + cols));
        start += cols;
    }
    debug_assert_eq!(start, op.n);
    Ok(ColumnMapping {
        ranges,
        n_cols: op.n,
    })
}

/// Broadcast moves the bytes once (all-bank mode, all CS asserted);
/// all-reduce re-moves them once per compute unit.
pub fn comm_cost(bytes: u64, scheme: CommScheme, pim: &PIMConfig) -> CommCost {
    let bytes_moved = match scheme {
        CommScheme::Broadcast => bytes,
        CommScheme::AllReduce => bytes * pim.total_units(),
    };
    CommCost {
        bytes_moved,
        scheme,
    }
}

/// Time for one MPU to process `cols` output columns of reduction depth `k`
/// for `l_spec` tokens: one 32-wide MAC consumes one 256-bit bank beat per
/// t_CCD, and the four ALUs retire four token columns per weight stream.
pub fn mpu_gemm_time(
    cols: u64,
    k: u64,
    l_spec: u64,
    pim: &PIMConfig,
    timing: &TimingParams,
) -> f64 {
    let t_ccd = timing.t_ccd as f64 * timing.clock_period;
    cols as f64 * k as f64 / pim.lanes_per_alu as f64 * t_ccd * pim.stream_passes(l_spec) as f64
}

/// Worst unit's GEMM time under a column mapping (units run in lockstep, the
/// kernel finishes with the fullest unit).
pub fn mapped_gemm_time(
    map: &ColumnMapping,
    k: u64,
    l_spec: u64,
    pim: &PIMConfig,
    timing: &TimingParams,
) -> f64 {
    mpu_gemm_time(map.max_unit_cols(), k, l_spec, pim, timing)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PimMode {
    Normal,
    AllBank,
    AllBankPim,
}

/// Mode-register write cost for a legal transition. Entering PIM execution
/// goes normal -> all-bank -> all-bank-PIM; skipping all-bank is rejected.
pub fn mode_switch(from: PimMode, to: PimMode, pim: &PIMConfig) -> Result<f64> {
    if from == to {
        return Err(Error::Protocol {
            param: "MRW".into(),
            msg: format!("no-op mode transition {from:?} -> {to:?}"),
        });
    }
    if from == PimMode::Normal && to == PimMode::AllBankPim {
        return Err(Error::Protocol {
            param: "MRW".into(),
            msg: "normal -> all-bank-PIM requires passing through all-bank".into(),
        });
    }
    Ok(pim.mode_switch_latency)
}
