//! Benchmark harness: layer suites, timed engine runs, oracle verification and reports.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{build_engine, conv_direct, ConvStats, EngineConfig, EngineKind};
use crate::error::{ConvError, Result};
use crate::max_relative_error;
use crate::tensor::{Fill, LayerSpec, Tensor4D};
use crate::tile::TilePlan;

pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSuite {
    pub name: String,
    pub layers: Vec<(String, LayerSpec)>,
}

impl BenchSuite {
    fn from_shapes(name: &str, shapes: &[(usize, usize)]) -> Self {
        let layers = shapes
            .iter()
            .map(|&(ch, size)| {
                (
                    format!("{name}-{ch}x{size}"),
                    LayerSpec::square(64, ch, ch, size, 3, 1),
                )
            })
            .collect();
        Self {
            name: name.to_string(),
            layers,
        }
    }

    /// ResNet layers: 64/56, 128/28, 256/14, 512/7 (channels/spatial side), batch 64.
    pub fn resnet() -> Self {
        Self::from_shapes("resnet", &[(64, 56), (128, 28), (256, 14), (512, 7)])
    }

    /// VGG layers: 64/224, 128/112, 256/56, 512/28, batch 64.
    pub fn vgg() -> Self {
        Self::from_shapes("vgg", &[(64, 224), (128, 112), (256, 56), (512, 28)])
    }

    pub fn single(label: &str, spec: LayerSpec) -> Self {
        Self {
            name: label.to_string(),
            layers: vec![(label.to_string(), spec)],
        }
    }

    /// `resnet`, `vgg`, or `all` (both).
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "resnet" => Ok(Self::resnet()),
            "vgg" => Ok(Self::vgg()),
            "all" => {
                let mut s = Self::resnet();
                s.layers.extend(Self::vgg().layers);
                s.name = "all".into();
                Ok(s)
            }
            other => Err(ConvError::InvalidParameter(format!(
                "unknown suite `{other}`"
            ))),
        }
    }

    pub fn labels_unique(&self) -> bool {
        let mut labels: Vec<&str> = self.layers.iter().map(|(l, _)| l.as_str()).collect();
        labels.sort_unstable();
        labels.windows(2).all(|w| w[0] != w[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerifyMode {
    Off,
    /// Re-run at this batch size against the direct oracle.
    Batch(usize),
    /// Verify at the benchmarked batch size.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub engines: Vec<EngineKind>,
    /// Shared engine settings; `kind` is overridden per engine.
    pub config: EngineConfig,
    pub repetitions: usize,
    pub warmup: usize,
    pub batch: Option<usize>,
    pub verify: VerifyMode,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            engines: vec![EngineKind::ThreeStage, EngineKind::Fused],
            config: EngineConfig::default(),
            repetitions: 10,
            warmup: 3,
            batch: None,
            verify: VerifyMode::Batch(2),
            tolerance: DEFAULT_TOLERANCE,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifyStatus {
    Pass,
    Fail,
    Skipped,
    Error,
}

impl VerifyStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            VerifyStatus::Pass => "pass",
            VerifyStatus::Fail => "fail",
            VerifyStatus::Skipped => "skipped",
            VerifyStatus::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub label: String,
    pub engine: EngineKind,
    pub spec: LayerSpec,
    pub tile: Option<usize>,
    pub r: Option<usize>,
    pub workers: usize,
    pub n_tile: Option<usize>,
    pub median_ms: Option<f64>,
    pub min_ms: Option<f64>,
    /// Total engine invocations in the timed loop, warmup included.
    pub executions: usize,
    pub stats: ConvStats,
    pub verify: VerifyStatus,
    pub max_rel_err: Option<f64>,
    pub error: Option<String>,
}

impl BenchResult {
    pub fn ok(&self) -> bool {
        self.error.is_none() && matches!(self.verify, VerifyStatus::Pass | VerifyStatus::Skipped)
    }
}

/// True when every entry completed and no verification failed.
pub fn all_ok(results: &[BenchResult]) -> bool {
    results.iter().all(BenchResult::ok)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn layer_tensors(spec: &LayerSpec, seed: u64) -> Result<(Tensor4D, Tensor4D)> {
    Ok((
        Tensor4D::new(spec.input_dims(), Fill::Random(seed))?,
        Tensor4D::new(
            spec.kernel_dims(),
            Fill::Random(seed ^ 0x9e37_79b9_7f4a_7c15),
        )?,
    ))
}

/// Max relative error of `config`'s engine against the direct oracle on seeded data.
pub fn verify_against_oracle(spec: &LayerSpec, config: &EngineConfig, seed: u64) -> Result<f64> {
    let (input, kernels) = layer_tensors(spec, seed)?;
    let (want, _) = conv_direct(&input, &kernels, spec)?;
    let mut engine = build_engine(config, *spec, &kernels)?;
    let (got, _) = engine.run(&input)?;
    Ok(max_relative_error(got.data(), want.data()))
}

fn time_entry(
    spec: &LayerSpec,
    config: &EngineConfig,
    opts: &RunOptions,
    input: &Tensor4D,
    kernels: &Tensor4D,
) -> Result<(Vec<f64>, ConvStats)> {
    let mut engine = build_engine(config, *spec, kernels)?;
    for _ in 0..opts.warmup {
        engine.run(input)?;
    }
    let mut times = Vec::with_capacity(opts.repetitions);
    let mut stats = ConvStats::default();
    for _ in 0..opts.repetitions {
        let t0 = Instant::now();
        let (_, s) = engine.run(input)?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
        stats = s;
    }
    Ok((times, stats))
}

/// Time every `(layer, engine)` pair, optionally verifying each against the oracle.
///
/// Failures are recorded per entry; the suite always runs to completion.
pub fn run_suite(suite: &BenchSuite, opts: &RunOptions) -> Result<Vec<BenchResult>> {
    if opts.engines.is_empty() {
        return Err(ConvError::InvalidParameter("no engines selected".into()));
    }
    if opts.repetitions == 0 {
        return Err(ConvError::InvalidParameter(
            "repetitions must be >= 1".into(),
        ));
    }
    let mut results = Vec::new();
    for (label, layer) in &suite.layers {
        let spec = opts.batch.map_or(*layer, |b| layer.with_batch(b));
        let tensors = layer_tensors(&spec, opts.seed);
        for &kind in &opts.engines {
            let config = EngineConfig {
                kind,
                ..opts.config.clone()
            };
            let winograd = kind != EngineKind::Direct;
            let mut res = BenchResult {
                label: label.clone(),
                engine: kind,
                spec,
                tile: winograd.then_some(config.tile),
                r: (kind == EngineKind::Fused).then_some(config.tasks_r),
                workers: config.workers,
                n_tile: if winograd {
                    TilePlan::new(spec, config.tile).ok().map(|p| p.n_tile)
                } else {
                    None
                },
                median_ms: None,
                min_ms: None,
                executions: 0,
                stats: ConvStats::default(),
                verify: VerifyStatus::Skipped,
                max_rel_err: None,
                error: None,
            };
            let timed = tensors
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|(input, kernels)| time_entry(&spec, &config, opts, input, kernels));
            match timed {
                Ok((mut times, stats)) => {
                    times.sort_by(f64::total_cmp);
                    res.median_ms = Some(median(&times));
                    res.min_ms = Some(times[0]);
                    res.executions = opts.warmup + opts.repetitions;
                    res.stats = stats;
                }
                Err(e) => {
                    res.error = Some(e.to_string());
                    res.verify = VerifyStatus::Error;
                    results.push(res);
                    continue;
                }
            }
            let verify_spec = match opts.verify {
                VerifyMode::Off => None,
                VerifyMode::Batch(b) => Some(spec.with_batch(b.min(spec.batch).max(1))),
                VerifyMode::Full => Some(spec),
            };
            if let Some(vspec) = verify_spec {
                match verify_against_oracle(&vspec, &config, opts.seed) {
                    Ok(err) => {
                        res.max_rel_err = Some(err);
                        res.verify = if err <= opts.tolerance {
                            VerifyStatus::Pass
                        } else {
                            VerifyStatus::Fail
                        };
                    }
                    Err(e) => {
                        res.verify = VerifyStatus::Error;
                        res.error = Some(e.to_string());
                    }
                }
            }
            results.push(res);
        }
    }
    Ok(results)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = ConvError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(ConvError::InvalidParameter(format!(
                "unknown report format `{other}`"
            ))),
        }
    }
}

/// One report line; CSV columns follow field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub engine: String,
    #[serde(rename = "T")]
    pub tile: Option<usize>,
    #[serde(rename = "R")]
    pub r: Option<usize>,
    pub workers: usize,
    pub median_ms: Option<f64>,
    pub min_ms: Option<f64>,
    pub flops: u64,
    pub tasks: usize,
    pub verify: String,
    pub max_rel_err: Option<f64>,
}

pub const CSV_HEADER: &str =
    "label,engine,T,R,workers,median_ms,min_ms,flops,tasks,verify,max_rel_err";

impl From<&BenchResult> for ReportRow {
    fn from(r: &BenchResult) -> Self {
        Self {
            label: r.label.clone(),
            engine: r.engine.name().to_string(),
            tile: r.tile,
            r: r.r,
            workers: r.workers,
            median_ms: r.median_ms,
            min_ms: r.min_ms,
            flops: r.stats.flops,
            tasks: r.stats.tasks,
            verify: r.verify.as_str().to_string(),
            max_rel_err: r.max_rel_err,
        }
    }
}

/// Fused median time relative to the fastest other engine on the same label.
pub fn fused_speedup(results: &[BenchResult], label: &str) -> Option<f64> {
    let of = |pred: &dyn Fn(EngineKind) -> bool| {
        results
            .iter()
            .filter(|r| r.label == label && pred(r.engine))
            .filter_map(|r| r.median_ms)
            .min_by(f64::total_cmp)
    };
    let fused = of(&|k| k == EngineKind::Fused)?;
    let other = of(&|k| k != EngineKind::Fused)?;
    Some(other / fused)
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn render_table(results: &[BenchResult]) -> String {
    let mut out = format!(
        "{:<16} {:<12} {:>2} {:>3} {:>7} {:>11} {:>11} {:>14} {:>6} {:>8} {:>11} {:>8}\n",
        "label",
        "engine",
        "T",
        "R",
        "workers",
        "median_ms",
        "min_ms",
        "flops",
        "tasks",
        "verify",
        "max_rel_err",
        "speedup"
    );
    for r in results {
        let speedup = match r.engine {
            EngineKind::Fused => {
                fused_speedup(results, &r.label).map_or("-".into(), |s| format!("{s:.2}x"))
            }
            _ => String::new(),
        };
        out.push_str(&format!(
            "{:<16} {:<12} {:>2} {:>3} {:>7} {:>11} {:>11} {:>14} {:>6} {:>8} {:>11} {:>8}\n",
            r.label,
            r.engine.name(),
            fmt_opt(r.tile),
            fmt_opt(r.r),
            r.workers,
            r.median_ms.map_or("-".into(), |v| format!("{v:.3}")),
            r.min_ms.map_or("-".into(), |v| format!("{v:.3}")),
            r.stats.flops,
            r.stats.tasks,
            r.verify.as_str(),
            r.max_rel_err.map_or("-".into(), |v| format!("{v:.2e}")),
            speedup,
        ));
        if let Some(e) = &r.error {
            out.push_str(&format!("  error: {e}\n"));
        }
    }
    out
}

pub fn render_report(results: &[BenchResult], format: ReportFormat) -> std::io::Result<String> {
    let rows: Vec<ReportRow> = results.iter().map(ReportRow::from).collect();
    match format {
        ReportFormat::Table => Ok(render_table(results)),
        ReportFormat::Json => serde_json::to_string_pretty(&rows)
            .map(|s| s + "\n")
            .map_err(std::io::Error::other),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            if rows.is_empty() {
                w.write_record(CSV_HEADER.split(','))
                    .map_err(std::io::Error::other)?;
            }
            for row in &rows {
                w.serialize(row).map_err(std::io::Error::other)?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| std::io::Error::other(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv is utf-8"))
        }
    }
}

/// Write the report to `path`, or standard output when `None`.
pub fn emit_report(
    results: &[BenchResult],
    format: ReportFormat,
    path: Option<&Path>,
) -> std::io::Result<()> {
    let text = render_report(results, format)?;
    match path {
        Some(p) => std::fs::write(p, text),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    }
}

/// One randomized equivalence check between the engines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCase {
    pub spec: LayerSpec,
    pub tile: usize,
    pub r: usize,
    pub fused_vs_direct: f64,
    pub three_stage_vs_direct: f64,
    pub fused_equals_three_stage: bool,
}

impl SweepCase {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.fused_equals_three_stage
            && self.fused_vs_direct <= tolerance
            && self.three_stage_vs_direct <= tolerance
    }
}

/// Draw a layer with `C, C'` in `1..=128`, `D, W` in `5..=64`, `K = 3`, padding 0 or 1,
/// and a tile side from `{4, 6, 7, 8}`.
pub fn random_case(rng: &mut impl Rng) -> (LayerSpec, usize, usize) {
    let pad = rng.gen_range(0..=1);
    let spec = LayerSpec {
        batch: rng.gen_range(1..=2),
        in_channels: rng.gen_range(1..=128),
        out_channels: rng.gen_range(1..=128),
        in_height: rng.gen_range(5..=64),
        in_width: rng.gen_range(5..=64),
        kernel: 3,
        pad_lo: pad,
        pad_hi: pad,
    };
    let tile = [4, 6, 7, 8][rng.gen_range(0..4)];
    (spec, tile, rng.gen_range(1..=32))
}

/// Compare fused and 3-stage engines with each other and the oracle on `cases` random layers.
pub fn verify_sweep(cases: usize, seed: u64, workers: usize) -> Result<Vec<SweepCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases)
        .map(|i| {
            let (spec, tile, r) = random_case(&mut rng);
            run_case(spec, tile, r, workers, seed.wrapping_add(i as u64))
        })
        .collect()
}

pub fn run_case(
    spec: LayerSpec,
    tile: usize,
    r: usize,
    workers: usize,
    seed: u64,
) -> Result<SweepCase> {
    let (input, kernels) = layer_tensors(&spec, seed)?;
    let (want, _) = conv_direct(&input, &kernels, &spec)?;
    let base = EngineConfig::default()
        .with_tile(tile)
        .with_r(r)
        .with_workers(workers);
    let mut three = build_engine(
        &EngineConfig {
            kind: EngineKind::ThreeStage,
            ..base.clone()
        },
        spec,
        &kernels,
    )?;
    let mut fused = build_engine(
        &EngineConfig {
            kind: EngineKind::Fused,
            ..base
        },
        spec,
        &kernels,
    )?;
    let (a, _) = three.run(&input)?;
    let (b, _) = fused.run(&input)?;
    let bit_equal = a
        .data()
        .iter()
        .zip(b.data())
        .all(|(x, y)| x.to_bits() == y.to_bits());
    Ok(SweepCase {
        spec,
        tile,
        r,
        fused_vs_direct: max_relative_error(b.data(), want.data()),
        three_stage_vs_direct: max_relative_error(a.data(), want.data()),
        fused_equals_three_stage: bit_equal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_opts() -> RunOptions {
        RunOptions {
            config: EngineConfig::default().with_workers(1),
            repetitions: 5,
            warmup: 1,
            batch: Some(1),
            ..RunOptions::default()
        }
    }

    #[test]
    fn builtin_suites() {
        for suite in [
            BenchSuite::resnet(),
            BenchSuite::vgg(),
            BenchSuite::by_name("all").unwrap(),
        ] {
            assert!(suite.labels_unique());
            assert!(suite
                .layers
                .iter()
                .all(|(_, s)| s.batch == 64 && s.kernel == 3 && s.pad_lo == 1 && s.pad_hi == 1));
        }
        let resnet: Vec<(usize, usize)> = BenchSuite::resnet()
            .layers
            .iter()
            .map(|(_, s)| (s.in_channels, s.in_height))
            .collect();
        assert_eq!(resnet, [(64, 56), (128, 28), (256, 14), (512, 7)]);
        let vgg: Vec<(usize, usize)> = BenchSuite::vgg()
            .layers
            .iter()
            .map(|(_, s)| (s.in_channels, s.in_height))
            .collect();
        assert_eq!(vgg, [(64, 224), (128, 112), (256, 56), (512, 28)]);
        assert!(BenchSuite::by_name("alexnet").is_err());
    }

    #[test]
    fn counts_executions_and_reports_median() {
        let suite = BenchSuite::single("small", LayerSpec::square(1, 4, 4, 12, 3, 1));
        let results = run_suite(&suite, &tiny_opts()).unwrap();
        assert_eq!(results.len(), 2);
        for r in &results {
            assert_eq!(r.executions, 6);
            assert!(r.min_ms.unwrap() <= r.median_ms.unwrap());
            assert_eq!(r.verify, VerifyStatus::Pass);
        }
        assert!(all_ok(&results));
    }

    #[test]
    fn bad_config_recorded_per_entry() {
        let suite = BenchSuite::single("small", LayerSpec::square(1, 2, 2, 8, 3, 1));
        let mut opts = tiny_opts();
        opts.config.tile = 3;
        let results = run_suite(&suite, &opts).unwrap();
        assert_eq!(results.len(), 2);
        assert!(results
            .iter()
            .all(|r| r.error.is_some() && r.verify == VerifyStatus::Error));
        assert!(!all_ok(&results));
        opts.engines.clear();
        assert!(run_suite(&suite, &opts).is_err());
    }

    #[test]
    fn batch_override_scales_tiles() {
        let full = TilePlan::new(LayerSpec::square(64, 64, 64, 56, 3, 1), 7)
            .unwrap()
            .n_tile;
        let two = TilePlan::new(LayerSpec::square(64, 64, 64, 56, 3, 1).with_batch(2), 7)
            .unwrap()
            .n_tile;
        assert_eq!(two * 32, full);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[1.0, 2.0, 9.0]), 2.0);
        assert_eq!(median(&[1.0, 2.0, 4.0, 9.0]), 3.0);
    }

    #[test]
    fn csv_json_agree() {
        let suite = BenchSuite::single("small", LayerSpec::square(1, 3, 5, 9, 3, 0));
        let mut opts = tiny_opts();
        opts.repetitions = 1;
        opts.warmup = 0;
        opts.engines = vec![EngineKind::Fused];
        let results = run_suite(&suite, &opts).unwrap();
        let csv_text = render_report(&results, ReportFormat::Csv).unwrap();
        let mut lines = csv_text.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.count(), 1);
        let from_csv: Vec<ReportRow> = csv::Reader::from_reader(csv_text.as_bytes())
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .unwrap();
        let from_json: Vec<ReportRow> =
            serde_json::from_str(&render_report(&results, ReportFormat::Json).unwrap()).unwrap();
        assert_eq!(from_csv, from_json);
    }

    #[test]
    fn table_has_speedup_column() {
        let suite = BenchSuite::single("small", LayerSpec::square(1, 4, 4, 10, 3, 1));
        let mut opts = tiny_opts();
        opts.repetitions = 1;
        let results = run_suite(&suite, &opts).unwrap();
        let table = render_report(&results, ReportFormat::Table).unwrap();
        assert!(table.lines().next().unwrap().contains("speedup"));
        let s = fused_speedup(&results, "small").unwrap();
        assert!(table.contains(&format!("{s:.2}x")));
    }

    #[test]
    fn unwritable_path_errors() {
        let results = vec![];
        assert!(emit_report(
            &results,
            ReportFormat::Csv,
            Some(Path::new("/nonexistent/dir/report.csv"))
        )
        .is_err());
    }

    #[test]
    fn sweep_is_deterministic() {
        let a = verify_sweep(3, 17, 1).unwrap();
        let b = verify_sweep(3, 17, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|c| c.passes(DEFAULT_TOLERANCE)));
    }
}
