//! `meshfi` command-line front end.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use meshfi_core::campaign::{export_report, load_report, Campaign, CampaignConfig, CampaignReport, Mode};
use meshfi_core::fault::{FaultSpec, SignalKind, Site};
use meshfi_core::matrix::{MatI32, MatI8, Matrix};
use meshfi_core::mesh::{job_cycles, new_mesh, run_job, MeshConfig, TileJob, TRACE_HEADER};
use meshfi_core::qnn::{forward, load_model, synthetic_input, Inference, OffloadHook, INPUT_SEED};
use meshfi_core::tiling::TileCoord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "meshfi", version, about = "Systolic mesh fault injection")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one fault-free tile matmul.
    Matmul(MatmulArgs),
    /// Run one tile matmul with a single transient fault and diff it.
    Inject(InjectArgs),
    /// Run the bundled or given model on one input, optionally offloading a
    /// tile of one layer to the mesh.
    Infer(InferArgs),
    /// Run a fault-injection campaign from a JSON config.
    Campaign(CampaignArgs),
    /// Summarize an exported campaign report.
    Report(ReportArgs),
}

#[derive(Args)]
struct MatmulArgs {
    /// Mesh side length; inferred from --a-file when omitted there.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    dim: Option<u32>,
    /// Reduction depth for seeded matrices.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    k: Option<u32>,
    /// Seed for random A and B (D is zero).
    #[arg(long, conflicts_with_all = ["a_file", "b_file", "d_file"])]
    seed: Option<u64>,
    #[arg(long, requires = "b_file")]
    a_file: Option<PathBuf>,
    #[arg(long, requires = "a_file")]
    b_file: Option<PathBuf>,
    /// Bias matrix; zero when omitted.
    #[arg(long, requires = "a_file")]
    d_file: Option<PathBuf>,
    /// Emit the per-cycle register trace.
    #[arg(long)]
    trace: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SiteArg {
    Target,
    Source,
    Boundary,
}

impl From<SiteArg> for Site {
    fn from(s: SiteArg) -> Self {
        match s {
            SiteArg::Target => Site::Target,
            SiteArg::Source => Site::Source,
            SiteArg::Boundary => Site::Boundary,
        }
    }
}

#[derive(Args)]
struct FaultArgs {
    #[arg(long)]
    row: usize,
    #[arg(long)]
    col: usize,
    /// operand_a, operand_b, accumulator, propag or valid.
    #[arg(long, value_parser = parse_signal)]
    signal: SignalKind,
    #[arg(long)]
    bit: u32,
    /// Absolute job cycle.
    #[arg(long)]
    cycle: u64,
    #[arg(long, value_enum, default_value = "target")]
    site: SiteArg,
}

fn parse_signal(s: &str) -> Result<SignalKind, String> {
    s.parse().map_err(|e: meshfi_core::Error| e.to_string())
}

#[derive(Args)]
struct InjectArgs {
    #[command(flatten)]
    mm: MatmulArgs,
    #[command(flatten)]
    fault: FaultArgs,
    /// Keep a flipped valid bit local to the target PE.
    #[arg(long)]
    no_valid_propagation: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0)]
    input_id: usize,
    #[arg(long, default_value_t = INPUT_SEED)]
    input_seed: u64,
    /// Layer whose GEMM runs one tile on the mesh.
    #[arg(long)]
    hook_layer: Option<usize>,
    /// Offloaded tile as mi,ki,ni.
    #[arg(long, value_parser = parse_tile, default_value = "0,0,0")]
    tile: TileCoord,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    dim: u32,
    #[arg(long, requires_all = ["col", "signal", "bit", "cycle", "hook_layer"])]
    row: Option<usize>,
    #[arg(long, requires = "row")]
    col: Option<usize>,
    #[arg(long, value_parser = parse_signal, requires = "row")]
    signal: Option<SignalKind>,
    #[arg(long, requires = "row")]
    bit: Option<u32>,
    #[arg(long, requires = "row")]
    cycle: Option<u64>,
}

fn parse_tile(s: &str) -> Result<TileCoord, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [mi, ki, ni] => Ok(TileCoord { mi, ki, ni }),
        _ => Err("expected mi,ki,ni".into()),
    }
}

#[derive(Args)]
struct CampaignArgs {
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, env = "MESHFI_WORKERS", default_value_t = 0)]
    workers: usize,
    /// Overrides out_dir from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct ReportArgs {
    /// Campaign output directory or its report.json.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

enum Failure {
    Usage(String),
    Domain(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Domain(e)
    }
}

impl From<meshfi_core::Error> for Failure {
    fn from(e: meshfi_core::Error) -> Self {
        Failure::Domain(e.into())
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn read_csv<T: std::str::FromStr + Copy + Default>(path: &Path) -> anyhow::Result<Matrix<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.with_context(|| format!("parsing {}", path.display()))?;
        let row = rec
            .iter()
            .map(|f| f.parse::<T>().with_context(|| format!("{}: bad value '{f}'", path.display())))
            .collect::<anyhow::Result<Vec<T>>>()?;
        rows.push(row);
    }
    Matrix::from_rows(&rows).map_err(|e| anyhow!("{}: {e}", path.display()))
}

fn build_job(a: &MatmulArgs) -> Outcome<TileJob> {
    if let Some(path) = &a.a_file {
        let am: MatI8 = read_csv(path)?;
        let bm: MatI8 = read_csv(a.b_file.as_ref().expect("clap requires b_file"))?;
        let dm: MatI32 = match &a.d_file {
            Some(p) => read_csv(p)?,
            None => MatI32::zeros(am.rows(), am.rows()),
        };
        if let Some(dim) = a.dim {
            if am.rows() != dim as usize {
                return Err(anyhow!("A has {} rows, --dim is {dim}", am.rows()).into());
            }
        }
        if a.k.is_some_and(|k| k as usize != am.cols()) {
            return Err(anyhow!("A has {} columns, --k is {}", am.cols(), a.k.unwrap()).into());
        }
        return Ok(TileJob::new(am, bm, dm));
    }
    let (Some(dim), Some(k), Some(seed)) = (a.dim, a.k, a.seed) else {
        return Err(usage("give --dim, --k and --seed, or --a-file and --b-file"));
    };
    let (dim, k) = (dim as usize, k as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let am = Matrix::from_fn(dim, k, |_, _| rng.gen());
    let bm = Matrix::from_fn(k, dim, |_, _| rng.gen());
    Ok(TileJob::new(am, bm, MatI32::zeros(dim, dim)))
}

fn print_block(name: &str, body: &str) {
    println!("[{name}]");
    print!("{body}");
}

fn cmd_matmul(a: &MatmulArgs) -> Outcome {
    let job = build_job(a)?;
    let cfg = MeshConfig::square(job.a.rows());
    let mut mesh = new_mesh(cfg)?;
    let mut trace = Vec::new();
    let start = Instant::now();
    let out = run_job(&mut mesh, &job, &[], |m| {
        if a.trace {
            trace.extend(m.trace_lines());
        }
    })?;
    let wall = start.elapsed();
    print_block("C", &out.c.to_csv());
    if a.trace {
        println!("[trace]");
        println!("{TRACE_HEADER}");
        trace.iter().for_each(|l| println!("{l}"));
    }
    println!("[summary]");
    println!("cycles={},wall_us={:.1}", out.cycles_used, wall.as_secs_f64() * 1e6);
    Ok(())
}

fn check_fault_flags(f: &FaultArgs, dim: usize) -> Outcome {
    if f.row >= dim || f.col >= dim {
        return Err(usage(format!("PE ({}, {}) is outside a {dim}x{dim} mesh", f.row, f.col)));
    }
    if f.bit >= f.signal.width() {
        return Err(usage(format!("bit {} is outside {} (width {})", f.bit, f.signal, f.signal.width())));
    }
    Ok(())
}

fn cmd_inject(a: &InjectArgs) -> Outcome {
    let job = build_job(&a.mm)?;
    let dim = job.a.rows();
    check_fault_flags(&a.fault, dim)?;
    let cfg = MeshConfig::square(dim).with_valid_propagates(!a.no_valid_propagation);
    let f = &a.fault;
    let fault = FaultSpec { row: f.row, col: f.col, signal: f.signal, bit: f.bit, cycle: f.cycle, site: f.site.into() };
    let mut mesh = new_mesh(cfg)?;
    let golden = run_job(&mut mesh, &job, &[], |_| {})?;
    let mut trace = Vec::new();
    let start = Instant::now();
    let faulty = run_job(&mut mesh, &job, &[fault], |m| {
        if a.mm.trace {
            trace.extend(m.trace_lines());
        }
    })?;
    let wall = start.elapsed();
    let diff = faulty.c.diff_cells(&golden.c);
    let mut mask = MatI32::zeros(dim, dim);
    for &(r, c) in &diff {
        mask.set(r, c, 1);
    }
    print_block("golden", &golden.c.to_csv());
    print_block("faulty", &faulty.c.to_csv());
    print_block("diff", &mask.to_csv());
    println!("[injection]");
    println!("{}", serde_json::to_string(&faulty.injections).context("serializing injections")?);
    if a.mm.trace {
        println!("[trace]");
        println!("{TRACE_HEADER}");
        trace.iter().for_each(|l| println!("{l}"));
    }
    println!("[summary]");
    println!(
        "cycles={},corrupted={},job_cycles={},wall_us={:.1}",
        faulty.cycles_used,
        diff.len(),
        job_cycles(dim, job.depth()),
        wall.as_secs_f64() * 1e6
    );
    Ok(())
}

fn cmd_infer(a: &InferArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let x = synthetic_input(&model, a.input_seed, a.input_id);
    let start = Instant::now();
    let (result, offload): (Inference, Option<_>) = match a.hook_layer {
        None => (forward(&model, &x, None)?, None),
        Some(layer) => {
            let cfg = MeshConfig::square(a.dim as usize);
            let faults = match (a.row, a.col, a.signal, a.bit, a.cycle) {
                (Some(row), Some(col), Some(signal), Some(bit), Some(cycle)) => {
                    let f = FaultArgs { row, col, signal, bit, cycle, site: SiteArg::Target };
                    check_fault_flags(&f, a.dim as usize)?;
                    vec![FaultSpec::target(row, col, signal, bit, cycle)]
                }
                _ => Vec::new(),
            };
            let mut hook = OffloadHook::new(layer, cfg, a.tile, faults);
            let r = forward(&model, &x, Some(&mut hook))?;
            (r, hook.result)
        }
    };
    let wall = start.elapsed();
    println!("[logits]");
    println!("{}", result.logits.iter().map(i32::to_string).collect::<Vec<_>>().join(","));
    println!("[summary]");
    print!("top1={},input_id={}", result.top1, a.input_id);
    if let Some(r) = offload {
        print!(",tile={}:{}:{},exposed={}", r.injected_tile.mi, r.injected_tile.ki, r.injected_tile.ni, r.exposed);
    }
    println!(",wall_us={:.1}", wall.as_secs_f64() * 1e6);
    Ok(())
}

fn summary_csv(r: &CampaignReport) -> String {
    let vf = match r.mode {
        Mode::Rtl => "avf",
        Mode::Sw => "pvf",
    };
    let mut s = format!("layer,kind,trials,masked,exposed_benign,critical,{vf},exposure\n");
    for l in &r.layers {
        s += &format!(
            "{},{},{},{},{},{},{:.6},{:.6}\n",
            l.layer,
            l.kind,
            l.counts.total(),
            l.counts.masked,
            l.counts.exposed_benign,
            l.counts.critical,
            l.vulnerability,
            l.exposure
        );
    }
    s += &format!(
        "all,,{},{},{},{},{:.6},{:.6}\n",
        r.total_trials,
        r.counts.masked,
        r.counts.exposed_benign,
        r.counts.critical,
        r.vulnerability(),
        r.exposure_rate
    );
    s += &format!("mean {},,,,,,{:.6},\n", vf.to_uppercase(), r.mean_layer_vulnerability);
    s
}

fn cmd_campaign(a: &CampaignArgs) -> Outcome {
    if !a.config.is_file() {
        return Err(usage(format!("config file {} does not exist", a.config.display())));
    }
    let mut cfg = CampaignConfig::load(&a.config)?;
    if let Some(out) = &a.out {
        cfg.out_dir = out.clone();
    }
    let start = Instant::now();
    let campaign = Campaign::from_config(cfg.clone())?;
    let report = campaign.run(a.workers)?;
    let wall = start.elapsed();
    let files = export_report(&report, &cfg.out_dir)?;
    print_block("summary", &summary_csv(&report));
    println!("[files]");
    files.iter().for_each(|f| println!("{}", f.display()));
    eprintln!("{} trials in {:.2}s", report.total_trials, wall.as_secs_f64());
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Outcome {
    let path = if a.input.is_dir() { a.input.join("report.json") } else { a.input.clone() };
    if !path.is_file() {
        return Err(usage(format!("{} does not exist", path.display())));
    }
    let r = load_report(&path)?;
    match a.format {
        Format::Csv => {
            print_block("summary", &summary_csv(&r));
            for h in &r.heatmaps {
                let grid: Vec<String> = h
                    .avf
                    .iter()
                    .map(|row| row.iter().map(|v| v.map(|x| format!("{x:.6}")).unwrap_or_default()).collect::<Vec<_>>().join(","))
                    .collect();
                print_block(&format!("heatmap_{}", h.signal), &(grid.join("\n") + "\n"));
            }
        }
        Format::Json => {
            let doc = serde_json::json!({
                "mode": r.mode,
                "master_seed": r.master_seed,
                "total_trials": r.total_trials,
                "counts": r.counts,
                "avf": r.avf,
                "pvf": r.pvf,
                "mean_layer_vulnerability": r.mean_layer_vulnerability,
                "exposure_rate": r.exposure_rate,
                "layers": r.layers,
            });
            println!("{}", serde_json::to_string_pretty(&doc).context("serializing summary")?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Matmul(a) => cmd_matmul(a),
        Cmd::Inject(a) => cmd_inject(a),
        Cmd::Infer(a) => cmd_infer(a),
        Cmd::Campaign(a) => cmd_campaign(a),
        Cmd::Report(a) => cmd_report(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => Cli::command().error(ErrorKind::ValueValidation, msg).exit(),
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
