use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use l3conv::bench::{self, BenchSuite, ReportFormat, RunOptions, VerifyMode};
use l3conv::engine::{default_workers, EngineConfig, EngineKind};
use l3conv::roofline::{self, MachineModel, PlanOptions};
use l3conv::{LayerSpec, Rational, WinogradBasis};

#[derive(Parser)]
#[command(
    name = "l3conv",
    version,
    about = "Winograd convolution engines, planner and benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time engines on a layer suite or an ad-hoc layer.
    Bench(BenchArgs),
    /// Roofline plan for a layer on a machine model.
    Plan(PlanArgs),
    /// Randomized equivalence sweep: fused vs 3-stage vs direct.
    Verify(VerifyArgs),
    /// Print the transform matrices for a tile size.
    DumpBasis(DumpArgs),
}

#[derive(Args, Clone)]
struct LayerArgs {
    #[arg(long = "b", default_value_t = 64)]
    batch: usize,
    #[arg(long = "c")]
    channels: Option<usize>,
    /// Output channels (defaults to --c).
    #[arg(long = "cprime")]
    out_channels: Option<usize>,
    #[arg(long = "d")]
    height: Option<usize>,
    /// Input width (defaults to --d).
    #[arg(long = "w")]
    width: Option<usize>,
    #[arg(long = "k", default_value_t = 3)]
    kernel: usize,
    #[arg(long = "pad", default_value_t = 1)]
    pad: usize,
}

impl LayerArgs {
    fn spec(&self) -> Option<LayerSpec> {
        let c = self.channels?;
        let d = self.height?;
        Some(LayerSpec {
            batch: self.batch,
            in_channels: c,
            out_channels: self.out_channels.unwrap_or(c),
            in_height: d,
            in_width: self.width.unwrap_or(d),
            kernel: self.kernel,
            pad_lo: self.pad,
            pad_hi: self.pad,
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyArg {
    Off,
    Reduced,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Table,
    Csv,
    Json,
}

#[derive(Args)]
struct BenchArgs {
    /// Built-in suite: resnet, vgg or all. Ignored when --c and --d are given.
    #[arg(long, default_value = "resnet")]
    suite: String,
    #[command(flatten)]
    layer: LayerArgs,
    /// Comma-separated engines: direct, three_stage, fused.
    #[arg(long, value_delimiter = ',', default_value = "three_stage,fused")]
    engines: Vec<String>,
    #[arg(short = 'T', long = "tile", default_value_t = 7)]
    tile: usize,
    #[arg(short = 'R', long = "r", default_value_t = 24)]
    r: usize,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    /// Override the batch size of every suite layer.
    #[arg(long = "batch", id = "batch_override")]
    batch: Option<usize>,
    #[arg(long, value_enum, default_value = "reduced")]
    verify: VerifyArg,
    /// Batch used by `--verify reduced`.
    #[arg(long, default_value_t = 2)]
    verify_batch: usize,
    #[arg(long, value_enum, default_value = "table")]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0x5eed)]
    seed: u64,
}

#[derive(Args)]
struct PlanArgs {
    /// Machine model file, or a bundled model name (skylakex, i7).
    #[arg(long)]
    machine: String,
    #[command(flatten)]
    layer: LayerArgs,
    #[arg(short = 'T', long = "tile", default_value_t = 7)]
    tile: usize,
    /// 1 for Winograd, 2 for FFT.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    l2_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    l3_fraction: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 50)]
    cases: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = bench::DEFAULT_TOLERANCE)]
    tolerance: f64,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(short = 'T', long = "tile", default_value_t = 7)]
    tile: usize,
    #[arg(short = 'K', long = "kernel", default_value_t = 3)]
    kernel: usize,
    /// Comma-separated finite nodes, e.g. `0,1,-1,1/2`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    points: Option<Vec<String>>,
}

fn bench(args: BenchArgs) -> Result<ExitCode> {
    let suite = match args.layer.spec() {
        Some(spec) => BenchSuite::single("custom", spec),
        None => BenchSuite::by_name(&args.suite)?,
    };
    let engines = args
        .engines
        .iter()
        .map(|e| e.parse::<EngineKind>())
        .collect::<Result<Vec<_>, _>>()?;
    let opts = RunOptions {
        engines,
        config: EngineConfig::default()
            .with_tile(args.tile)
            .with_r(args.r)
            .with_workers(args.workers.unwrap_or_else(default_workers)),
        repetitions: args.reps,
        warmup: args.warmup,
        batch: args.batch,
        verify: match args.verify {
            VerifyArg::Off => VerifyMode::Off,
            VerifyArg::Reduced => VerifyMode::Batch(args.verify_batch),
            VerifyArg::Full => VerifyMode::Full,
        },
        seed: args.seed,
        ..RunOptions::default()
    };
    let results = bench::run_suite(&suite, &opts)?;
    let format = match args.format {
        FormatArg::Table => ReportFormat::Table,
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Json => ReportFormat::Json,
    };
    bench::emit_report(&results, format, args.out.as_deref())
        .with_context(|| format!("writing report to {:?}", args.out))?;
    Ok(if bench::all_ok(&results) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn load_machine(name: &str) -> Result<MachineModel> {
    Ok(match name {
        "skylakex" => MachineModel::skylakex(),
        "i7" => MachineModel::i7(),
        path => {
            MachineModel::load(path).with_context(|| format!("loading machine model {path}"))?
        }
    })
}

fn plan(args: PlanArgs) -> Result<ExitCode> {
    let machine = load_machine(&args.machine)?;
    let Some(layer) = args.layer.spec() else {
        bail!("plan needs a layer: pass at least --c and --d");
    };
    layer.validate()?;
    let opts = PlanOptions {
        l2_fraction: args.l2_fraction,
        l3_fraction: args.l3_fraction,
    };
    let report = roofline::plan_with(&layer, args.tile, &machine, args.alpha, opts);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{report}");
    }
    Ok(if report.feasible() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn verify(args: VerifyArgs) -> Result<ExitCode> {
    let workers = args.workers.unwrap_or_else(default_workers);
    let cases = bench::verify_sweep(args.cases, args.seed, workers)?;
    let mut failed = 0;
    for (i, case) in cases.iter().enumerate() {
        let s = &case.spec;
        let ok = case.passes(args.tolerance);
        failed += usize::from(!ok);
        println!(
            "{:>3} {} B={} C={} C'={} D={} W={} pad={} T={} R={} fused/direct={:.2e} 3stage/direct={:.2e} bit_equal={}",
            i,
            if ok { "PASS" } else { "FAIL" },
            s.batch,
            s.in_channels,
            s.out_channels,
            s.in_height,
            s.in_width,
            s.pad_lo,
            case.tile,
            case.r,
            case.fused_vs_direct,
            case.three_stage_vs_direct,
            case.fused_equals_three_stage
        );
    }
    println!("{} of {} cases passed", cases.len() - failed, cases.len());
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn dump_basis(args: DumpArgs) -> Result<ExitCode> {
    let basis = match args.points {
        Some(points) => {
            let points = points
                .iter()
                .map(|p| {
                    p.trim()
                        .parse::<Rational>()
                        .with_context(|| format!("bad point `{p}`"))
                })
                .collect::<Result<Vec<_>>>()?;
            WinogradBasis::new(args.tile, args.kernel, &points)?
        }
        None => WinogradBasis::with_default_points(args.tile, args.kernel)?,
    };
    print!("{}", basis.to_text());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench(a) => bench(a),
        Command::Plan(a) => plan(a),
        Command::Verify(a) => verify(a),
        Command::DumpBasis(a) => dump_basis(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
