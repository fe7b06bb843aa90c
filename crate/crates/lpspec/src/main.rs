//! Experiment runner: config validation, single runs, and full comparison
//! sweeps with CSV emission.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;

use clap::{Parser, Subcommand};

use lpspec::config::ExperimentConfig;
use lpspec::nmc::{Addr, NmcState, RankTarget};
use lpspec::simloop::{geomean, run_decode, Mode, RunConfig, RunReport, SchedParams, SystemConfig};
use lpspec::workload::ModelSpec;
use lpspec::{Error, Result};

/// Caps the sweep worker pool.
const WORKERS_ENV: &str = "LPSPEC_WORKERS";

#[derive(Parser)]
#[command(
    name = "lpspec",
    about = "Analytic simulator of NPU + LPDDR5-PIM speculative LLM decoding",
    version
)]
struct Cli {
    /// Dump the NMC command trace of reallocation copy-writes to this file.
    #[arg(long, global = true, value_name = "PATH")]
    trace_nmc: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a config file; prints every violation found.
    Validate { path: PathBuf },
    /// Execute one run and write its per-iteration and summary CSVs.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        l_spec: Option<u64>,
        #[arg(long)]
        l_in: Option<u64>,
        #[arg(long)]
        l_out: Option<u64>,
    },
    /// Cross-product of modes x lengths x l_spec x seeds; emits per-run CSVs
    /// plus a ratio table normalized to npu-si.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Validate { path } => cmd_validate(path),
        Cmd::Run {
            config,
            mode,
            seed,
            l_spec,
            l_in,
            l_out,
        } => cmd_run(
            config,
            mode,
            *seed,
            *l_spec,
            *l_in,
            *l_out,
            cli.trace_nmc.as_deref(),
        ),
        Cmd::Sweep { config, out } => cmd_sweep(config, out.as_deref()),
    }
}

fn cmd_validate(path: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(path)?;
    let diags = cfg.diagnostics();
    if diags.is_empty() {
        println!("{}: ok", path.display());
        Ok(())
    } else {
        for d in &diags {
            eprintln!("{}: {d}", path.display());
        }
        Err(Error::Config(format!("{} violation(s)", diags.len())))
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    config: &Path,
    mode: &str,
    seed: Option<u64>,
    l_spec: Option<u64>,
    l_in: Option<u64>,
    l_out: Option<u64>,
    trace: Option<&Path>,
) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    cfg.validate()?;
    let mode: Mode = mode.parse()?;
    let model = cfg.model.build()?;
    let sys = cfg.to_system();
    let sched = cfg.scheduler.to_params();
    let pair = cfg.run.length_pairs.first().copied().unwrap_or([128, 256]);
    let run = RunConfig {
        mode,
        l_in: l_in.unwrap_or(pair[0]),
        l_out: l_out.unwrap_or(pair[1]),
        fixed_l_spec: if mode.is_scheduled() {
            None
        } else {
            Some(
                l_spec
                    .or_else(|| cfg.run.l_spec.first().copied())
                    .unwrap_or(1),
            )
        },
        seed: seed.or_else(|| cfg.run.seeds.first().copied()).unwrap_or(1),
    };
    let report = run_decode(&run, &model, &sys, &sched)?;

    let out_dir = PathBuf::from(&cfg.output.dir);
    fs::create_dir_all(&out_dir)?;
    let stem = run_stem(&run);
    write_iterations_csv(&report, &out_dir.join(format!("{stem}.csv")))?;
    write_summary_csv(
        std::slice::from_ref(&report),
        &out_dir.join(format!("{stem}_summary.csv")),
    )?;
    if let Some(path) = trace {
        write_nmc_trace(&report, &sys, &model, path)?;
    }
    println!(
        "{} l_in={} l_out={} seed={}: {:.2} tokens/s, {:.2} tokens/J, edp/token {:.4e} sJ",
        run.mode,
        run.l_in,
        run.l_out,
        run.seed,
        report.tokens_per_s,
        report.tokens_per_j,
        report.edp_per_token
    );
    Ok(())
}

fn run_stem(run: &RunConfig) -> String {
    let ls = run
        .fixed_l_spec
        .map_or("auto".to_string(), |l| l.to_string());
    format!(
        "{}_l{}x{}_ls{}_s{}",
        run.mode, run.l_in, run.l_out, ls, run.seed
    )
}

fn cmd_sweep(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    cfg.validate()?;
    let model = cfg.model.build()?;
    let sys = cfg.to_system();
    let sched = cfg.scheduler.to_params();
    if cfg.run.modes.is_empty() {
        return Err(Error::Config("sweep requires a nonempty mode list".into()));
    }

    let mut jobs = Vec::new();
    for pair in &cfg.run.length_pairs {
        for &l in &cfg.run.l_spec {
            for &seed in &cfg.run.seeds {
                for &mode in &cfg.run.modes {
                    jobs.push(RunConfig {
                        mode,
                        l_in: pair[0],
                        l_out: pair[1],
                        fixed_l_spec: if mode.is_scheduled() { None } else { Some(l) },
                        seed,
                    });
                }
            }
        }
    }
    let reports = run_parallel(&jobs, &model, &sys, &sched)?;

    let out_dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    fs::create_dir_all(&out_dir)?;
    for (job, report) in jobs.iter().zip(&reports) {
        write_iterations_csv(report, &out_dir.join(format!("{}.csv", run_stem(job))))?;
    }
    write_summary_csv(&reports, &out_dir.join("sweep_summary.csv"))?;
    let table = ratio_table(&cfg, &jobs, &reports);
    write_ratio_table(&table, &out_dir.join("ratio_table.csv"))?;
    println!("sweep: {} runs -> {}", jobs.len(), out_dir.display());
    for (mode, cells) in &table {
        let g = geomean(&cells.values().copied().collect::<Vec<_>>());
        println!("  {mode:<22} geomean speedup over npu-si: {g:.2}x");
    }
    Ok(())
}

/// Runs the job list on a bounded worker pool; result order matches input.
fn run_parallel(
    jobs: &[RunConfig],
    model: &ModelSpec,
    sys: &SystemConfig,
    sched: &SchedParams,
) -> Result<Vec<RunReport>> {
    let workers = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(4, |n| n.get()))
        .min(jobs.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<RunReport>)>();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let r = run_decode(&jobs[i], model, sys, sched);
                if tx.send((i, r)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut out: Vec<Option<RunReport>> = vec![None; jobs.len()];
        for (i, r) in rx {
            out[i] = Some(r?);
        }
        Ok(out
            .into_iter()
            .map(|r| r.expect("all jobs completed"))
            .collect())
    })
}

type RatioTable = BTreeMap<String, BTreeMap<String, f64>>;

/// Per-cell tokens/s of each mode normalized to npu-si in the same cell
/// (geometric mean across seeds).
fn ratio_table(cfg: &ExperimentConfig, jobs: &[RunConfig], reports: &[RunReport]) -> RatioTable {
    let cell_of = |j: &RunConfig, l: u64| format!("l{}x{}_ls{}", j.l_in, j.l_out, l);
    // (mode, cell) -> tokens/s values across seeds.
    let mut tps: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for pair in &cfg.run.length_pairs {
        for &l in &cfg.run.l_spec {
            for (job, report) in jobs.iter().zip(reports) {
                if job.l_in != pair[0] || job.l_out != pair[1] {
                    continue;
                }
                let matches_cell = job.fixed_l_spec.is_none_or(|f| f == l);
                if !matches_cell {
                    continue;
                }
                tps.entry((job.mode.to_string(), cell_of(job, l)))
                    .or_default()
                    .push(report.tokens_per_s);
            }
        }
    }
    let mut table: RatioTable = BTreeMap::new();
    for ((mode, cell), values) in &tps {
        let base = tps
            .get(&(Mode::NpuSi.to_string(), cell.clone()))
            .map(|v| geomean(v))
            .unwrap_or(f64::NAN);
        table
            .entry(mode.clone())
            .or_default()
            .insert(cell.clone(), geomean(values) / base);
    }
    table
}

fn write_ratio_table(table: &RatioTable, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    let cells: Vec<String> = table
        .values()
        .next()
        .map(|row| row.keys().cloned().collect())
        .unwrap_or_default();
    writeln!(f, "mode,{},geomean", cells.join(","))?;
    for (mode, row) in table {
        let vals: Vec<f64> = cells
            .iter()
            .map(|c| row.get(c).copied().unwrap_or(f64::NAN))
            .collect();
        let cols: Vec<String> = vals.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(f, "{mode},{},{:.6}", cols.join(","), geomean(&vals))?;
    }
    Ok(())
}

fn write_iterations_csv(report: &RunReport, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(
        f,
        "iter,seq_len,l_spec,accepted,tokens,ratio_on_pim,group_id,t_npu,t_pim,t_iter,e_offchip,e_internal,e_compute,e_total,realloc_bytes"
    )?;
    for r in &report.records {
        writeln!(
            f,
            "{},{},{},{},{},{:.9},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{}",
            r.iter,
            r.seq_len,
            r.l_spec,
            r.accepted,
            r.tokens,
            r.ratio_on_pim,
            r.group_id,
            r.t_npu,
            r.t_pim,
            r.t_iter,
            r.e_offchip,
            r.e_internal,
            r.e_compute,
            r.e_total,
            r.realloc_bytes
        )?;
    }
    Ok(())
}

fn write_summary_csv(reports: &[RunReport], path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(
        f,
        "mode,l_in,l_out,seed,iterations,prefill_latency,total_latency,total_energy,tokens_per_s,tokens_per_j,edp,edp_per_token"
    )?;
    for r in reports {
        writeln!(
            f,
            "{},{},{},{},{},{:.9e},{:.9e},{:.9e},{:.6},{:.6},{:.9e},{:.9e}",
            r.mode,
            r.l_in,
            r.l_out,
            r.seed,
            r.iterations,
            r.prefill_latency,
            r.total_latency,
            r.total_energy,
            r.tokens_per_s,
            r.tokens_per_j,
            r.edp,
            r.edp_per_token
        )?;
    }
    Ok(())
}

/// Bytes of each reallocation replayed through the NMC per trace dump; keeps
/// traces readable while still exercising the real command scheduler.
const TRACE_BYTES_PER_PLAN: u64 = 16 * 1024;

/// Replays the run's weight reallocations through the command-level NMC
/// model (a bounded window per plan) and dumps the resulting trace.
fn write_nmc_trace(
    report: &RunReport,
    sys: &SystemConfig,
    model: &ModelSpec,
    path: &Path,
) -> Result<()> {
    let mut nmc = NmcState::new();
    let mut cursor = 0u64;
    let mut row = 0u32;
    for rec in &report.records {
        if rec.realloc_bytes == 0 {
            continue;
        }
        let bytes = rec.realloc_bytes.min(TRACE_BYTES_PER_PLAN);
        let (src, dst) = if rec.ratio_on_pim >= 0.5 {
            (RankTarget::Dram, RankTarget::Pim)
        } else {
            (RankTarget::Pim, RankTarget::Dram)
        };
        let src_addr = Addr {
            bank_group: 0,
            bank: 0,
            row,
            col: 0,
        };
        let dst_addr = Addr {
            bank_group: 0,
            bank: 1,
            row,
            col: 0,
        };
        let events = nmc.copy_write(src, src_addr, dst, dst_addr, bytes, cursor, &sys.timing)?;
        cursor = events.iter().map(|e| e.cycle).max().unwrap_or(cursor) + sys.timing.t_wr;
        row += 1;
    }
    let _ = model;
    fs::write(path, nmc.dump_trace())?;
    Ok(())
}
