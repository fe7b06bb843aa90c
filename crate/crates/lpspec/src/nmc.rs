//! Command-level model of the near-data memory controller: tagged command
//! protocol, copy-write data reallocation between DRAM and PIM ranks, the
//! 4 KB PIM global buffer, and the shared-DQ / independent-C/A timeline.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// DRAM timing parameters in cycles, plus the command-clock period.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingParams {
    pub t_rp: u64,
    pub t_rcd: u64,
    pub t_ras: u64,
    pub t_rrd: u64,
    pub t_wr: u64,
    pub t_rc: u64,
    pub t_ccd: u64,
    pub t_faw: u64,
    pub t_cl: u64,
    pub t_cwl: u64,
    pub clock_period: f64,
}

impl Default for TimingParams {
    fn default() -> Self {
        TimingParams {
            t_rp: 15,
            t_rcd: 15,
            t_ras: 34,
            t_rrd: 4,
            t_wr: 28,
            t_rc: 30,
            t_ccd: 4,
            t_faw: 16,
            // Absent from the speed-grade table; only the difference matters
            // for copy-write.
            t_cl: 25,
            t_cwl: 23,
            // 800 MHz command clock: t_CCD = 4 cycles = 5 ns.
            clock_period: 1.25e-9,
        }
    }
}

impl TimingParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.t_rp, self.t_rcd, self.t_ras, self.t_rrd, self.t_wr, self.t_rc, self.t_ccd,
            self.t_faw, self.t_cl, self.t_cwl,
        ];
        if all.contains(&0) || self.clock_period <= 0.0 {
            return Err(Error::Config(
                "all timing parameters must be positive".into(),
            ));
        }
        if self.t_cl <= self.t_cwl {
            return Err(Error::Config(format!(
                "t_CL ({}) must exceed t_CWL ({})",
                self.t_cl, self.t_cwl
            )));
        }
        Ok(())
    }

    /// Command-to-write-command gap for the copy-write feed-forward path.
    pub fn copy_write_gap(&self) -> u64 {
        self.t_cl - self.t_cwl
    }
}

/// One RD/WR pair moves this many bytes (BL16 on the x64 bus, modeled as a
/// single 4-cycle data packet).
pub const BURST_BYTES: u64 = 64;
pub const BURST_CYCLES: u64 = 4;

pub const BUFFER_CAPACITY: usize = 4096;
pub const BUFFER_LINE_BYTES: usize = 8;
pub const BUFFER_LINES: u16 = 512;

/// 2-bit command tag: `00` normal, `01` copy-write, `1x` global buffer
/// (low bit becomes the buffer address MSB).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Normal,
    CopyWrite,
    Buffer { addr_msb: bool },
}

impl Tag {
    pub fn encode(self) -> u8 {
        match self {
            Tag::Normal => 0b00,
            Tag::CopyWrite => 0b01,
            Tag::Buffer { addr_msb: false } => 0b10,
            Tag::Buffer { addr_msb: true } => 0b11,
        }
    }

    pub fn decode(bits: u8) -> Result<Tag> {
        match bits & 0b11 {
            0b00 => Ok(Tag::Normal),
            0b01 => Ok(Tag::CopyWrite),
            0b10 => Ok(Tag::Buffer { addr_msb: false }),
            _ => Ok(Tag::Buffer { addr_msb: true }),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02b}", self.encode())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmdKind {
    Act1,
    Rd,
    Wr,
    Mrw,
    Pre,
}

impl fmt::Display for CmdKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CmdKind::Act1 => "ACT1",
            CmdKind::Rd => "RD",
            CmdKind::Wr => "WR",
            CmdKind::Mrw => "MRW",
            CmdKind::Pre => "PRE",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RankTarget {
    Dram,
    Pim,
}

impl fmt::Display for RankTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankTarget::Dram => "dram",
            RankTarget::Pim => "pim",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Addr {
    pub bank_group: u8,
    pub bank: u8,
    pub row: u32,
    pub col: u32,
}

#[derive(Debug, Clone, Copy)]
pub struct NMCCommand {
    pub kind: CmdKind,
    pub tag: Tag,
    pub rank_target: RankTarget,
    pub addr: Addr,
    /// 9-bit global buffer address (tag LSB + 8-bit bank/bank-group field).
    /// Meaningful only for buffer-tagged commands.
    pub buf_addr: u16,
}

impl NMCCommand {
    pub fn validate(&self) -> Result<()> {
        if let Tag::Buffer { addr_msb } = self.tag {
            let msb = (self.buf_addr >> 8) & 1 == 1;
            if msb != addr_msb {
                return Err(Error::Contract(
                    "buffer address MSB must match the tag low bit".into(),
                ));
            }
            if self.buf_addr >= BUFFER_LINES {
                return Err(Error::Address(self.buf_addr));
            }
        }
        Ok(())
    }

    /// Builds a buffer command, deriving the tag low bit from the address.
    pub fn buffer(kind: CmdKind, rank: RankTarget, buf_addr: u16) -> Self {
        NMCCommand {
            kind,
            tag: Tag::Buffer {
                addr_msb: (buf_addr >> 8) & 1 == 1,
            },
            rank_target: rank,
            addr: Addr::default(),
            buf_addr,
        }
    }
}

/// Dedicated 4 KB register array addressed as 512 eight-byte lines.
#[derive(Debug, Clone)]
pub struct GlobalBuffer {
    data: [u8; BUFFER_CAPACITY],
}

impl Default for GlobalBuffer {
    fn default() -> Self {
        GlobalBuffer {
            data: [0; BUFFER_CAPACITY],
        }
    }
}

impl GlobalBuffer {
    pub fn read_line(&self, addr: u16) -> Result<[u8; BUFFER_LINE_BYTES]> {
        if addr >= BUFFER_LINES {
            return Err(Error::Address(addr));
        }
        let off = addr as usize * BUFFER_LINE_BYTES;
        let mut line = [0u8; BUFFER_LINE_BYTES];
        line.copy_from_slice(&self.data[off..off + BUFFER_LINE_BYTES]);
        Ok(line)
    }

    pub fn write_line(&mut self, addr: u16, line: [u8; BUFFER_LINE_BYTES]) -> Result<()> {
        if addr >= BUFFER_LINES {
            return Err(Error::Address(addr));
        }
        let off = addr as usize * BUFFER_LINE_BYTES;
        self.data[off..off + BUFFER_LINE_BYTES].copy_from_slice(&line);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Owner {
    NpuDram,
    NpuPim,
    Copy,
    Buffer,
}

impl fmt::Display for Owner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Owner::NpuDram => "npu-dram",
            Owner::NpuPim => "npu-pim",
            Owner::Copy => "copy",
            Owner::Buffer => "buffer",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Occupancy {
    pub start: u64,
    pub duration: u64,
    pub owner: Owner,
}

impl Occupancy {
    pub fn end(&self) -> u64 {
        self.start + self.duration
    }
}

/// Shared-DQ occupancy plus independent per-rank-group C/A streams.
#[derive(Debug, Clone, Default)]
pub struct BusTimeline {
    /// Sorted by start cycle; records never overlap.
    pub dq: Vec<Occupancy>,
    pub ca_dram: Vec<(u64, CmdKind)>,
    pub ca_pim: Vec<(u64, CmdKind)>,
    stall_cycles: HashMap<Owner, u64>,
}

impl BusTimeline {
    /// True if [start, start+dur) is free on the DQ lines.
    pub fn dq_free(&self, start: u64, dur: u64) -> bool {
        let end = start + dur;
        // dq is sorted; binary search for the first record ending after start.
        let idx = self.dq.partition_point(|o| o.end() <= start);
        self.dq.get(idx).is_none_or(|o| o.start >= end)
    }

    /// Reserves the exact slot or fails.
    pub fn reserve_dq_at(&mut self, start: u64, dur: u64, owner: Owner) -> Result<()> {
        if !self.dq_free(start, dur) {
            return Err(Error::Protocol {
                param: "DQ".into(),
                msg: format!("DQ busy at cycle {start} (+{dur})"),
            });
        }
        let idx = self.dq.partition_point(|o| o.start < start);
        self.dq.insert(
            idx,
            Occupancy {
                start,
                duration: dur,
                owner,
            },
        );
        Ok(())
    }

    /// Earliest cycle >= `earliest` whose DQ slot of `dur` cycles is free.
    pub fn earliest_dq_slot(&self, earliest: u64, dur: u64) -> u64 {
        let mut start = earliest;
        let mut idx = self.dq.partition_point(|o| o.end() <= start);
        while let Some(o) = self.dq.get(idx) {
            if o.start >= start + dur {
                break;
            }
            start = o.end();
            idx += 1;
        }
        start
    }

    /// Reserves the earliest free slot and records any stall vs `earliest`.
    pub fn reserve_dq_earliest(&mut self, earliest: u64, dur: u64, owner: Owner) -> u64 {
        let start = self.earliest_dq_slot(earliest, dur);
        *self.stall_cycles.entry(owner).or_insert(0) += start - earliest;
        self.reserve_dq_at(start, dur, owner)
            .expect("slot was computed free");
        start
    }

    fn ca_stream(&mut self, rank: RankTarget) -> &mut Vec<(u64, CmdKind)> {
        match rank {
            RankTarget::Dram => &mut self.ca_dram,
            RankTarget::Pim => &mut self.ca_pim,
        }
    }

    pub fn end_cycle(&self) -> u64 {
        let dq_end = self.dq.last().map_or(0, |o| o.end());
        let ca_end = self
            .ca_dram
            .iter()
            .chain(self.ca_pim.iter())
            .map(|&(c, _)| c + 1)
            .max()
            .unwrap_or(0);
        dq_end.max(ca_end)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct BankState {
    activated_row: Option<u32>,
    last_act: Option<u64>,
    last_rd: Option<u64>,
    last_wr: Option<u64>,
    last_pre: Option<u64>,
}

/// One scheduled command plus its DQ data phase, for traces and inspection.
#[derive(Debug, Clone, Copy)]
pub struct ScheduledEvent {
    pub cycle: u64,
    pub cmd: NMCCommand,
    /// Start cycle of the data packet on DQ, if the command has one.
    pub data_start: Option<u64>,
}

impl ScheduledEvent {
    /// Stable line format: `<cycle> <kind> <tag> <rank> <addr|bufaddr>`.
    pub fn trace_line(&self) -> String {
        let addr = if matches!(self.cmd.tag, Tag::Buffer { .. }) {
            format!("buf:{}", self.cmd.buf_addr)
        } else {
            let a = self.cmd.addr;
            format!("{}.{}.{}.{}", a.bank_group, a.bank, a.row, a.col)
        };
        format!(
            "{} {} {} {} {}",
            self.cycle, self.cmd.kind, self.cmd.tag, self.cmd.rank_target, addr
        )
    }
}

/// The controller: owns the timeline, per-bank timing state, the global
/// buffer, and the command trace of one simulation context.
#[derive(Debug, Clone, Default)]
pub struct NmcState {
    pub timeline: BusTimeline,
    banks: HashMap<(RankTarget, u8, u8), BankState>,
    pub buffer: GlobalBuffer,
    pub trace: Vec<ScheduledEvent>,
}

impl NmcState {
    pub fn new() -> Self {
        NmcState::default()
    }

    fn bank(&mut self, cmd: &NMCCommand) -> &mut BankState {
        self.banks
            .entry((cmd.rank_target, cmd.addr.bank_group, cmd.addr.bank))
            .or_default()
    }

    fn check(cycle: u64, last: Option<u64>, min_gap: u64, param: &str) -> Result<()> {
        if let Some(prev) = last {
            if cycle < prev + min_gap {
                return Err(Error::Protocol {
                    param: param.into(),
                    msg: format!("command at cycle {cycle} violates {param} (previous at {prev}, need +{min_gap})"),
                });
            }
        }
        Ok(())
    }

    /// Issues one command at `cycle`, validating bank timing and reserving
    /// the data phase on the DQ timeline. RD data appears t_CL after the
    /// command, WR data t_CWL after. Buffer-tagged accesses bypass bank
    /// timing and occupy a single DQ beat.
    pub fn issue(
        &mut self,
        cmd: NMCCommand,
        cycle: u64,
        timing: &TimingParams,
        owner: Owner,
    ) -> Result<ScheduledEvent> {
        cmd.validate()?;
        let data_start = if let Tag::Buffer { .. } = cmd.tag {
            match cmd.kind {
                CmdKind::Rd | CmdKind::Wr => {
                    let offset = if cmd.kind == CmdKind::Rd {
                        timing.t_cl
                    } else {
                        timing.t_cwl
                    };
                    let start = cycle + offset;
                    self.timeline.reserve_dq_at(start, 1, Owner::Buffer)?;
                    Some(start)
                }
                _ => None,
            }
        } else {
            let bank = *self.bank(&cmd);
            match cmd.kind {
                CmdKind::Act1 => {
                    Self::check(cycle, bank.last_act, timing.t_rc, "t_RC")?;
                    if let Some(pre) = bank.last_pre {
                        Self::check(cycle, Some(pre), timing.t_rp, "t_RP")?;
                    }
                    let b = self.bank(&cmd);
                    b.last_act = Some(cycle);
                    b.activated_row = Some(cmd.addr.row);
                    None
                }
                CmdKind::Rd | CmdKind::Wr => {
                    let act = bank.last_act.ok_or_else(|| Error::Protocol {
                        param: "t_RCD".into(),
                        msg: format!("{} without prior ACT1 on bank {:?}", cmd.kind, cmd.addr),
                    })?;
                    Self::check(cycle, Some(act), timing.t_rcd, "t_RCD")?;
                    let last_col = if cmd.kind == CmdKind::Rd {
                        bank.last_rd
                    } else {
                        bank.last_wr
                    };
                    Self::check(cycle, last_col, timing.t_ccd, "t_CCD")?;
                    let offset = if cmd.kind == CmdKind::Rd {
                        timing.t_cl
                    } else {
                        timing.t_cwl
                    };
                    let start = cycle + offset;
                    // The copy feed-forward path drives DQ once per RD/WR
                    // pair; the paired WR reuses the RD reservation.
                    if !(cmd.kind == CmdKind::Wr && cmd.tag == Tag::CopyWrite) {
                        self.timeline.reserve_dq_at(start, BURST_CYCLES, owner)?;
                    }
                    let b = self.bank(&cmd);
                    if cmd.kind == CmdKind::Rd {
                        b.last_rd = Some(cycle);
                    } else {
                        b.last_wr = Some(cycle);
                    }
                    Some(start)
                }
                CmdKind::Pre => {
                    let b = self.bank(&cmd);
                    b.last_pre = Some(cycle);
                    b.activated_row = None;
                    None
                }
                CmdKind::Mrw => None,
            }
        };
        self.timeline
            .ca_stream(cmd.rank_target)
            .push((cycle, cmd.kind));
        let ev = ScheduledEvent {
            cycle,
            cmd,
            data_start,
        };
        self.trace.push(ev);
        Ok(ev)
    }

    /// In-situ copy between rank kinds: per 64-byte burst, an RD on the
    /// source rank and a tagged WR on the destination rank issued exactly
    /// t_CL - t_CWL cycles later, so read data feeds the write arbiter with
    /// zero buffering. One pair is in flight at a time; bursts slide to
    /// idle DQ slots without changing the intra-pair gap.
    #[allow(clippy::too_many_arguments)]
    pub fn copy_write(
        &mut self,
        src: RankTarget,
        src_addr: Addr,
        dst: RankTarget,
        dst_addr: Addr,
        bytes: u64,
        not_before: u64,
        timing: &TimingParams,
    ) -> Result<Vec<ScheduledEvent>> {
        if src == dst {
            return Err(Error::Contract(
                "copy-write source and destination rank kinds must differ".into(),
            ));
        }
        if bytes == 0 {
            return Err(Error::Contract("copy-write of zero bytes".into()));
        }
        let gap = timing.copy_write_gap();
        let bursts = bytes.div_ceil(BURST_BYTES);
        let mut events = Vec::with_capacity(2 * bursts as usize + 2);
        // Open both rows once up front.
        let mut cursor = not_before;
        let act_src = NMCCommand {
            kind: CmdKind::Act1,
            tag: Tag::Normal,
            rank_target: src,
            addr: src_addr,
            buf_addr: 0,
        };
        let act_dst = NMCCommand {
            kind: CmdKind::Act1,
            tag: Tag::Normal,
            rank_target: dst,
            addr: dst_addr,
            buf_addr: 0,
        };
        events.push(self.issue(act_src, cursor, timing, Owner::Copy)?);
        events.push(self.issue(act_dst, cursor, timing, Owner::Copy)?);
        cursor += timing.t_rcd;
        for burst in 0..bursts {
            // Find a spot where the shared data packet lands on idle DQ.
            let data_start = self
                .timeline
                .earliest_dq_slot(cursor + timing.t_cl, BURST_CYCLES);
            let rd_cycle = data_start - timing.t_cl;
            let mut rd_addr = src_addr;
            rd_addr.col = src_addr.col + burst as u32;
            let rd = NMCCommand {
                kind: CmdKind::Rd,
                tag: Tag::Normal,
                rank_target: src,
                addr: rd_addr,
                buf_addr: 0,
            };
            events.push(self.issue(rd, rd_cycle, timing, Owner::Copy)?);
            let mut wr_addr = dst_addr;
            wr_addr.col = dst_addr.col + burst as u32;
            let wr = NMCCommand {
                kind: CmdKind::Wr,
                tag: Tag::CopyWrite,
                rank_target: dst,
                addr: wr_addr,
                buf_addr: 0,
            };
            events.push(self.issue(wr, rd_cycle + gap, timing, Owner::Copy)?);
            // One pair in flight: the next RD may not issue before this
            // pair's WR has been accepted.
            cursor = (rd_cycle + gap + 1).max(rd_cycle + timing.t_ccd);
        }
        Ok(events)
    }

    /// Accesses one 8-byte line of the PIM global buffer. Returns the line
    /// content for reads; `payload` is stored for writes.
    pub fn buffer_access(
        &mut self,
        cmd: NMCCommand,
        cycle: u64,
        timing: &TimingParams,
        payload: Option<[u8; BUFFER_LINE_BYTES]>,
    ) -> Result<[u8; BUFFER_LINE_BYTES]> {
        if !matches!(cmd.tag, Tag::Buffer { .. }) {
            return Err(Error::Contract(
                "buffer_access requires a buffer-tagged command".into(),
            ));
        }
        self.issue(cmd, cycle, timing, Owner::Buffer)?;
        match cmd.kind {
            CmdKind::Rd => self.buffer.read_line(cmd.buf_addr),
            CmdKind::Wr => {
                let line = payload
                    .ok_or_else(|| Error::Contract("buffer write requires payload".into()))?;
                self.buffer.write_line(cmd.buf_addr, line)?;
                Ok(line)
            }
            other => Err(Error::Contract(format!(
                "buffer access must be RD or WR, got {other}"
            ))),
        }
    }

    pub fn dump_trace(&self) -> String {
        let mut lines: Vec<_> = self
            .trace
            .iter()
            .map(|e| (e.cycle, e.trace_line()))
            .collect();
        lines.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let mut out = String::new();
        for (_, l) in lines {
            out.push_str(&l);
            out.push('\n');
        }
        out
    }
}

/// Per-owner DQ occupancy fractions plus stall cycles attributable to
/// sharing, over a closed timeline.
#[derive(Debug, Clone, Default)]
pub struct UtilizationSummary {
    pub total_cycles: u64,
    pub busy_fraction: HashMap<Owner, f64>,
    pub stall_cycles: HashMap<Owner, u64>,
}

pub fn contention_report(timeline: &BusTimeline) -> UtilizationSummary {
    let total = timeline.end_cycle();
    let mut busy: HashMap<Owner, u64> = HashMap::new();
    for o in &timeline.dq {
        *busy.entry(o.owner).or_insert(0) += o.duration;
    }
    let busy_fraction = busy
        .into_iter()
        .map(|(k, v)| {
            (
                k,
                if total == 0 {
                    0.0
                } else {
                    v as f64 / total as f64
                },
            )
        })
        .collect();
    UtilizationSummary {
        total_cycles: total,
        busy_fraction,
        stall_cycles: timeline.stall_cycles.clone(),
    }
}

/// Scans a timeline for overlapping DQ records (none should ever exist).
pub fn dq_overlaps(timeline: &BusTimeline) -> usize {
    let mut sorted: Vec<_> = timeline.dq.clone();
    sorted.sort_by_key(|o| o.start);
    sorted
        .windows(2)
        .filter(|w| w[0].end() > w[1].start)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rd(rank: RankTarget, bank: u8, col: u32) -> NMCCommand {
        NMCCommand {
            kind: CmdKind::Rd,
            tag: Tag::Normal,
            rank_target: rank,
            addr: Addr {
                bank_group: 0,
                bank,
                row: 1,
                col,
            },
            buf_addr: 0,
        }
    }

    fn act(rank: RankTarget, bank: u8) -> NMCCommand {
        NMCCommand {
            kind: CmdKind::Act1,
            tag: Tag::Normal,
            rank_target: rank,
            addr: Addr {
                bank_group: 0,
                bank,
                row: 1,
                col: 0,
            },
            buf_addr: 0,
        }
    }

    #[test]
    fn tag_roundtrip_all_values() {
        for bits in 0u8..4 {
            let tag = Tag::decode(bits).unwrap();
            assert_eq!(tag.encode(), bits);
        }
        assert_eq!(Tag::decode(0b00).unwrap(), Tag::Normal);
        assert_eq!(Tag::decode(0b01).unwrap(), Tag::CopyWrite);
        assert!(matches!(
            Tag::decode(0b10).unwrap(),
            Tag::Buffer { addr_msb: false }
        ));
        assert!(matches!(
            Tag::decode(0b11).unwrap(),
            Tag::Buffer { addr_msb: true }
        ));
    }

    #[test]
    fn act_then_rd_at_t_rcd_lands_data_at_t_rcd_plus_t_cl() {
        let timing = TimingParams::default();
        let mut nmc = NmcState::new();
        nmc.issue(act(RankTarget::Dram, 0), 0, &timing, Owner::NpuDram)
            .unwrap();
        let ev = nmc
            .issue(
                rd(RankTarget::Dram, 0, 0),
                timing.t_rcd,
                &timing,
                Owner::NpuDram,
            )
            .unwrap();
        assert_eq!(ev.data_start, Some(timing.t_rcd + timing.t_cl));
    }

    #[test]
    fn rd_before_t_rcd_rejected() {
        let timing = TimingParams::default();
        let mut nmc = NmcState::new();
        nmc.issue(act(RankTarget::Dram, 0), 0, &timing, Owner::NpuDram)
            .unwrap();
        let err = nmc.issue(
            rd(RankTarget::Dram, 0, 0),
            timing.t_rcd - 1,
            &timing,
            Owner::NpuDram,
        );
        match err {
            Err(Error::Protocol { param, .. }) => assert_eq!(param, "t_RCD"),
            other => panic!("expected t_RCD violation, got {other:?}"),
        }
    }

    #[test]
    fn back_to_back_rd_violating_t_ccd_rejected() {
        let timing = TimingParams::default();
        let mut nmc = NmcState::new();
        nmc.issue(act(RankTarget::Dram, 0), 0, &timing, Owner::NpuDram)
            .unwrap();
        nmc.issue(rd(RankTarget::Dram, 0, 0), 20, &timing, Owner::NpuDram)
            .unwrap();
        let err = nmc.issue(
            rd(RankTarget::Dram, 0, 1),
            20 + timing.t_ccd - 1,
            &timing,
            Owner::NpuDram,
        );
        match err {
            Err(Error::Protocol { param, .. }) => assert_eq!(param, "t_CCD"),
            other => panic!("expected t_CCD violation, got {other:?}"),
        }
    }

    #[test]
    fn independent_ca_streams_accept_concurrent_commands() {
        let timing = TimingParams::default();
        let mut nmc = NmcState::new();
        // PIM-rank RD concurrent with DRAM-rank ACT1: both accepted.
        nmc.issue(act(RankTarget::Pim, 0), 0, &timing, Owner::NpuPim)
            .unwrap();
        nmc.issue(
            act(RankTarget::Dram, 0),
            timing.t_rcd,
            &timing,
            Owner::NpuDram,
        )
        .unwrap();
        nmc.issue(
            rd(RankTarget::Pim, 0, 0),
            timing.t_rcd,
            &timing,
            Owner::NpuPim,
        )
        .unwrap();
        assert_eq!(nmc.timeline.ca_dram.len(), 1);
        assert_eq!(nmc.timeline.ca_pim.len(), 2);
    }

    #[test]
    fn copy_write_gap_is_exactly_cl_minus_cwl() {
        let timing = TimingParams::default();
        assert_eq!(timing.copy_write_gap(), 2);
        let mut nmc = NmcState::new();
        let events = nmc
            .copy_write(
                RankTarget::Dram,
                Addr::default(),
                RankTarget::Pim,
                Addr {
                    row: 9,
                    ..Addr::default()
                },
                4096,
                0,
                &timing,
            )
            .unwrap();
        // 4 KB in 64-byte bursts: 64 RD/WR pairs (+2 ACT1s).
        let rds: Vec<_> = events
            .iter()
            .filter(|e| e.cmd.kind == CmdKind::Rd)
            .collect();
        let wrs: Vec<_> = events
            .iter()
            .filter(|e| e.cmd.kind == CmdKind::Wr)
            .collect();
        assert_eq!(rds.len(), 64);
        assert_eq!(wrs.len(), 64);
        for (r, w) in rds.iter().zip(&wrs) {
            assert_eq!(w.cycle - r.cycle, timing.copy_write_gap());
            assert_eq!(w.cmd.tag, Tag::CopyWrite);
            // Feed-forward: write data begins the same cycle read data lands.
            assert_eq!(r.cycle + timing.t_cl, w.cycle + timing.t_cwl);
        }
        assert_eq!(dq_overlaps(&nmc.timeline), 0);
    }

    #[test]
    fn copy_rejects_same_rank_kind() {
        let timing = TimingParams::default();
        let mut nmc = NmcState::new();
        let err = nmc.copy_write(
            RankTarget::Dram,
            Addr::default(),
            RankTarget::Dram,
            Addr::default(),
            64,
            0,
            &timing,
        );
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn copy_interleaves_with_npu_reads_without_overlap() {
        let timing = TimingParams::default();
        let mut nmc = NmcState::new();
        nmc.issue(act(RankTarget::Dram, 1), 0, &timing, Owner::NpuDram)
            .unwrap();
        // NPU streams from DRAM every t_CCD cycles.
        let mut cycle = timing.t_rcd;
        for col in 0..32 {
            // Leave every third slot idle for the copy engine.
            if col % 3 != 2 {
                nmc.issue(rd(RankTarget::Dram, 1, col), cycle, &timing, Owner::NpuDram)
                    .unwrap();
            }
            cycle += timing.t_ccd;
        }
        nmc.copy_write(
            RankTarget::Pim,
            Addr::default(),
            RankTarget::Dram,
            Addr {
                bank: 2,
                ..Addr::default()
            },
            512,
            0,
            &timing,
        )
        .unwrap();
        assert_eq!(dq_overlaps(&nmc.timeline), 0);
        let report = contention_report(&nmc.timeline);
        assert!(report.busy_fraction[&Owner::Copy] > 0.0);
        assert!(report.busy_fraction[&Owner::NpuDram] > 0.0);
    }

    #[test]
    fn buffer_roundtrip_and_capacity() {
        let timing = TimingParams::default();
        let mut nmc = NmcState::new();
        let line = [1, 2, 3, 4, 5, 6, 7, 8];
        let wr = NMCCommand::buffer(CmdKind::Wr, RankTarget::Pim, 0);
        nmc.buffer_access(wr, 0, &timing, Some(line)).unwrap();
        let rdc = NMCCommand::buffer(CmdKind::Rd, RankTarget::Pim, 0);
        let got = nmc.buffer_access(rdc, 10, &timing, None).unwrap();
        assert_eq!(got, line);

        // 512 writes then 512 reads: full 4 KB round-trip.
        let mut nmc = NmcState::new();
        let mut cycle = 0u64;
        for a in 0..BUFFER_LINES {
            let val = [(a % 256) as u8; 8];
            nmc.buffer_access(
                NMCCommand::buffer(CmdKind::Wr, RankTarget::Pim, a),
                cycle,
                &timing,
                Some(val),
            )
            .unwrap();
            cycle += 2;
        }
        for a in 0..BUFFER_LINES {
            let got = nmc
                .buffer_access(
                    NMCCommand::buffer(CmdKind::Rd, RankTarget::Pim, a),
                    cycle,
                    &timing,
                    None,
                )
                .unwrap();
            assert_eq!(got, [(a % 256) as u8; 8]);
            cycle += 2;
        }
        assert_eq!(dq_overlaps(&nmc.timeline), 0);
    }

    #[test]
    fn buffer_address_out_of_range() {
        let timing = TimingParams::default();
        let mut nmc = NmcState::new();
        let mut cmd = NMCCommand::buffer(CmdKind::Rd, RankTarget::Pim, 511);
        cmd.buf_addr = 600;
        assert!(nmc.buffer_access(cmd, 0, &timing, None).is_err());
    }

    #[test]
    fn buffer_read_overlapping_dram_data_beat_is_rejected_at_fixed_slot() {
        let timing = TimingParams::default();
        let mut nmc = NmcState::new();
        nmc.issue(act(RankTarget::Dram, 0), 0, &timing, Owner::NpuDram)
            .unwrap();
        nmc.issue(
            rd(RankTarget::Dram, 0, 0),
            timing.t_rcd,
            &timing,
            Owner::NpuDram,
        )
        .unwrap();
        // A buffer read whose beat lands inside the DRAM data packet.
        let cmd = NMCCommand::buffer(CmdKind::Rd, RankTarget::Pim, 3);
        let err = nmc.buffer_access(cmd, timing.t_rcd + 1, &timing, None);
        assert!(matches!(err, Err(Error::Protocol { .. })));
        assert_eq!(dq_overlaps(&nmc.timeline), 0);
    }

    #[test]
    fn idle_timeline_reports_zero() {
        let report = contention_report(&BusTimeline::default());
        assert_eq!(report.total_cycles, 0);
        assert!(report.busy_fraction.is_empty());
    }

    #[test]
    fn copy_only_fraction_matches_definition() {
        let timing = TimingParams::default();
        let mut nmc = NmcState::new();
        nmc.copy_write(
            RankTarget::Dram,
            Addr::default(),
            RankTarget::Pim,
            Addr::default(),
            1024,
            0,
            &timing,
        )
        .unwrap();
        let report = contention_report(&nmc.timeline);
        let copy_beats: u64 = nmc
            .timeline
            .dq
            .iter()
            .filter(|o| o.owner == Owner::Copy)
            .map(|o| o.duration)
            .sum();
        let expect = copy_beats as f64 / report.total_cycles as f64;
        assert!((report.busy_fraction[&Owner::Copy] - expect).abs() < 1e-12);
    }

    #[test]
    fn trace_lines_are_stable() {
        let timing = TimingParams::default();
        let mut nmc = NmcState::new();
        nmc.issue(act(RankTarget::Dram, 0), 0, &timing, Owner::NpuDram)
            .unwrap();
        nmc.issue(
            rd(RankTarget::Dram, 0, 7),
            timing.t_rcd,
            &timing,
            Owner::NpuDram,
        )
        .unwrap();
        let dump = nmc.dump_trace();
        assert_eq!(dump, "0 ACT1 00 dram 0.0.1.0\n15 RD 00 dram 0.0.1.7\n");
    }

    #[test]
    fn timing_validation() {
        let mut t = TimingParams::default();
        t.validate().unwrap();
        t.t_cwl = t.t_cl;
        assert!(t.validate().is_err());
    }
}
