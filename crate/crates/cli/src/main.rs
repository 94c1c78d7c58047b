//! `vidserve`: container indexing, decode planning, decode scheduling and
//! end-to-end serving simulation from the command line.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 when
//! `--assert-baseline` finds a regression.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use vidserve_core::codec_sched::{
    account_memory, schedule_stall_free, schedule_whole_video, DecodeJob, MemoryReport, Policy, ScheduleTrace,
};
use vidserve_core::container_index::{parse_container, VideoMeta};
use vidserve_core::gop_planner::{plan_video, DecodePlan};
use vidserve_core::pipeline_sim::{
    run_preset, stall_report, sweep, ArchKind, Architecture, CapacityRow, MetricsLog, StallReport, WorkloadTrace,
};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "vidserve",
    version,
    about = "Multimodal serving simulator with GPU video decode scheduling"
)]
struct Cli {
    /// JSON run configuration; omitted sections use defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory for machine-readable outputs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Parse an MP4 and print its frame index as JSON.
    Index { input: PathBuf },
    /// Turn a VideoMeta JSON into a decode plan.
    Plan { meta: PathBuf },
    /// Schedule one or more plans onto the decode engines.
    DecodeSim {
        #[arg(required = true)]
        plans: Vec<PathBuf>,
    },
    /// Simulate serving a workload.
    ServeSim {
        #[arg(long, value_enum)]
        arch: Option<ArchArg>,
        #[arg(long, default_value = "long-video")]
        preset: String,
        /// JSON-lines workload; replaces the generated one.
        #[arg(long)]
        workload: Option<PathBuf>,
        /// A previous serve summary; exit 2 if this run is worse.
        #[arg(long)]
        assert_baseline: Option<PathBuf>,
    },
    /// Capacity under the preset's SLOs over the configured rate ladder.
    Sweep {
        #[arg(long, value_enum)]
        arch: Option<ArchArg>,
        #[arg(long, default_value = "long-video")]
        preset: String,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ArchArg {
    Monolithic,
    Split,
    Unified,
}

impl ArchArg {
    fn kinds(arg: Option<ArchArg>) -> Vec<ArchKind> {
        match arg {
            None => ArchKind::ALL.to_vec(),
            Some(ArchArg::Monolithic) => vec![ArchKind::Monolithic],
            Some(ArchArg::Split) => vec![ArchKind::Split],
            Some(ArchArg::Unified) => vec![ArchKind::Unified],
        }
    }
}

/// Marks a failed baseline comparison.
#[derive(Debug)]
struct Regression(Vec<String>);

impl std::fmt::Display for Regression {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "regression against baseline: {}", self.0.join("; "))
    }
}

impl std::error::Error for Regression {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<Regression>().is_some() => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let out = Output::new(cli.out.as_deref())?;
    match cli.cmd {
        Cmd::Index { input } => index(&input, &out),
        Cmd::Plan { meta } => plan(&cfg, &meta, &out),
        Cmd::DecodeSim { plans } => decode_sim(&cfg, &plans, cli.seed, &out),
        Cmd::ServeSim {
            arch,
            preset,
            workload,
            assert_baseline,
        } => serve_sim(
            &cfg,
            arch,
            &preset,
            workload.as_deref(),
            assert_baseline.as_deref(),
            cli.seed,
            &out,
        ),
        Cmd::Sweep { arch, preset } => run_sweep(&cfg, arch, &preset, cli.seed, &out),
    }
}

struct Output {
    dir: Option<PathBuf>,
}

impl Output {
    fn new(dir: Option<&Path>) -> Result<Self> {
        if let Some(d) = dir {
            std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }
        Ok(Output {
            dir: dir.map(Path::to_path_buf),
        })
    }

    fn write(&self, name: &str, body: &str) -> Result<()> {
        if let Some(d) = &self.dir {
            let p = d.join(name);
            std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
        }
        Ok(())
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<String> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, &s)?;
        Ok(s)
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    config::parse(&text).with_context(|| format!("{}", path.display()))
}

fn index(input: &Path, out: &Output) -> Result<()> {
    let bytes = std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let meta = parse_container(&bytes).with_context(|| format!("indexing {}", input.display()))?;
    print!("{}", out.json("meta.json", &meta)?);
    Ok(())
}

fn plan(cfg: &RunConfig, meta: &Path, out: &Output) -> Result<()> {
    let meta: VideoMeta = read_json(meta)?;
    meta.validate()?;
    let p = &cfg.plan;
    let plan = plan_video(&meta, &p.selection, p.world_size, p.engines_per_gpu, p.temporal_patch)?;
    print!("{}", out.json("plan.json", &plan)?);
    Ok(())
}

#[derive(Serialize)]
struct DecodeSummary {
    policy: Policy,
    makespan: f64,
    utilization: Vec<Vec<f64>>,
    memory: MemoryReport,
    jobs: Vec<JobLine>,
}

#[derive(Serialize)]
struct JobLine {
    id: u64,
    arrival: f64,
    completion: f64,
    latency: f64,
}

fn decode_sim(cfg: &RunConfig, plans: &[PathBuf], seed: u64, out: &Output) -> Result<()> {
    let d = &cfg.decode;
    d.topology.validate()?;
    d.costs.validate()?;
    if !(d.arrival_gap >= 0.0 && d.arrival_gap.is_finite()) {
        bail!("decode.arrival_gap must be finite and >= 0");
    }
    let mut jobs = Vec::new();
    for (i, path) in plans.iter().enumerate() {
        let plan: DecodePlan = read_json(path)?;
        jobs.push(DecodeJob {
            id: i as u64,
            arrival: i as f64 * d.arrival_gap,
            plan,
        });
    }
    let trace: ScheduleTrace = match d.policy {
        Policy::StallFree => schedule_stall_free(&jobs, &d.topology, &d.costs, seed),
        Policy::WholeVideo => schedule_whole_video(&jobs, &d.topology, &d.costs, seed),
    };
    let summary = DecodeSummary {
        policy: d.policy,
        makespan: trace.makespan(),
        utilization: trace.engine_utilization(),
        memory: account_memory(&trace, d.memory),
        jobs: trace
            .jobs
            .iter()
            .map(|j| JobLine {
                id: j.id,
                arrival: j.arrival,
                completion: j.completion,
                latency: j.completion - j.arrival,
            })
            .collect(),
    };
    out.write("decode_trace.csv", &trace.to_csv())?;
    out.json("decode_summary.json", &summary)?;
    println!(
        "{} jobs, policy {}, makespan {:.3}s, peak memory {} frames",
        jobs.len(),
        match d.policy {
            Policy::StallFree => "stall-free",
            Policy::WholeVideo => "whole-video",
        },
        summary.makespan,
        summary.memory.max_peak()
    );
    for j in &summary.jobs {
        println!("  job {}: latency {:.3}s", j.id, j.latency);
    }
    Ok(())
}

/// What `serve-sim` writes per architecture, and what `--assert-baseline`
/// reads back.
#[derive(Debug, Serialize, Deserialize)]
struct ServeSummary {
    arch: Architecture,
    preset: String,
    seed: u64,
    metrics: MetricsLog,
    stalls: StallReport,
}

fn serve_sim(
    cfg: &RunConfig,
    arch: Option<ArchArg>,
    preset_name: &str,
    workload: Option<&Path>,
    baseline: Option<&Path>,
    seed: u64,
    out: &Output,
) -> Result<()> {
    cfg.sim.validate()?;
    let preset = cfg.preset(preset_name)?;
    let trace = match workload {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            WorkloadTrace::from_json_lines(&text).with_context(|| format!("workload {}", p.display()))?
        }
        None => preset.generate(cfg.workload.requests, cfg.workload.arrivals, seed)?,
    };
    let kinds = ArchArg::kinds(arch);
    let baseline: Option<ServeSummary> = match baseline {
        Some(p) if kinds.len() == 1 => Some(read_json(p)?),
        Some(_) => bail!("--assert-baseline needs a single --arch"),
        None => None,
    };
    let mut text = String::new();
    let mut last = None;
    for kind in kinds {
        let a = cfg.sim.architecture(kind);
        let r = run_preset(&a, &preset, &trace, &cfg.sim, seed)?;
        let summary = ServeSummary {
            stalls: stall_report(&r.metrics, cfg.sim.stall_factor),
            arch: r.arch,
            preset: preset.name.clone(),
            seed,
            metrics: r.metrics,
        };
        out.json(&format!("serve_{}.json", a.name()), &summary)?;
        out.write(&format!("tokens_{}.csv", a.name()), &summary.metrics.tokens_csv())?;
        let m = &summary.metrics;
        writeln!(
            text,
            "{:<10} completed {}/{}  TTFT mean {:.3}s p99 {:.3}s  TBT mean {:.4}s p99 {:.4}s  {:.3} req/s  SLO {:.1}%  stalls {} ({:.1}s)",
            a.name(),
            m.completed,
            m.requests.len(),
            m.ttft.mean,
            m.ttft.p99,
            m.tbt.mean,
            m.tbt.p99,
            m.throughput_rps,
            m.slo_attainment * 100.0,
            summary.stalls.stalls.len(),
            summary.stalls.total(),
        )?;
        last = Some(summary);
    }
    print!("{text}");
    if let (Some(base), Some(cur)) = (baseline, last) {
        compare(cfg, &base, &cur)?;
        println!("baseline check passed");
    }
    Ok(())
}

fn compare(cfg: &RunConfig, base: &ServeSummary, cur: &ServeSummary) -> Result<()> {
    if base.arch.name() != cur.arch.name() {
        bail!("baseline is for {}, this run is {}", base.arch.name(), cur.arch.name());
    }
    let tol = &cfg.assertion;
    let mut worse = Vec::new();
    let lat = |what: &str, b: f64, c: f64, worse: &mut Vec<String>| {
        if c > b * (1.0 + tol.latency_tolerance) + 1e-12 {
            worse.push(format!("{what} {c:.4}s > baseline {b:.4}s"));
        }
    };
    lat("P99 TTFT", base.metrics.ttft.p99, cur.metrics.ttft.p99, &mut worse);
    lat("P99 TBT", base.metrics.tbt.p99, cur.metrics.tbt.p99, &mut worse);
    if cur.metrics.slo_attainment < base.metrics.slo_attainment - tol.attainment_tolerance - 1e-12 {
        worse.push(format!(
            "SLO attainment {:.3} < baseline {:.3}",
            cur.metrics.slo_attainment, base.metrics.slo_attainment
        ));
    }
    if worse.is_empty() {
        Ok(())
    } else {
        Err(Regression(worse).into())
    }
}

fn run_sweep(cfg: &RunConfig, arch: Option<ArchArg>, preset_name: &str, seed: u64, out: &Output) -> Result<()> {
    cfg.sim.validate()?;
    let preset = cfg.preset(preset_name)?;
    let mut sw = cfg.sweep.clone();
    sw.seed = seed;
    let archs: Vec<Architecture> = ArchArg::kinds(arch)
        .into_iter()
        .map(|k| cfg.sim.architecture(k))
        .collect();
    let rows: Vec<CapacityRow> = sweep(&archs, &preset, &cfg.sim, &sw)?;
    out.json("capacity.json", &rows)?;
    let mut csv = String::from("arch,rate,attainment\n");
    for r in &rows {
        for p in &r.probes {
            writeln!(csv, "{},{},{:.6}", r.arch.name(), p.rate, p.attainment)?;
        }
    }
    out.write("capacity.csv", &csv)?;
    for r in &rows {
        println!(
            "{:<10} capacity {} req/s ({} probes)",
            r.arch.name(),
            r.capacity,
            r.probes.len()
        );
    }
    Ok(())
}
