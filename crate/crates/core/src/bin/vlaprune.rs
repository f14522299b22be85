use std::fs;
use std::io::{BufRead, BufReader, Cursor, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use vlaprune::diversity::{min_pairwise_distance, min_redundancy_filter, Embeddings};
use vlaprune::estimator::{EstimatorConfig, EstimatorMode};
use vlaprune::flops::{selection_overhead, Preset, DEFAULT_TEXT_TOKENS};
use vlaprune::manifest::{
    Aggregate, FrameSummary, RunConfig, RunManifest, Timing, TraceInfo, ENGINE_NAME, ENGINE_VERSION,
};
use vlaprune::metrics::{default_ks, episode_overlap_report, forecast_overlap};
use vlaprune::oracle::{solve_exact, subset_min_distance};
use vlaprune::replay::{bench, preset_flops_ratio, BenchConfig, Replayer};
use vlaprune::selector::{Budget, PruneConfig, Variant, WarmupPolicy};
use vlaprune::trace::{
    self, synthesize_trace, DecodeMode, Payload, SynthConfig, TraceHeader, TraceReader, TraceWriter,
};

#[derive(Parser)]
#[command(name = "vlaprune", version, about = "Dual-level visual token pruning over recorded VLA attention traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic episode trace.
    Gen(GenArgs),
    /// Replay a trace through the pruner and write a run manifest.
    Prune(PruneArgs),
    /// Top-k overlap diagnostics for a trace.
    Analyze(AnalyzeArgs),
    /// Theoretical FLOPs of full versus pruned prefill.
    Flops(FlopsArgs),
    /// Exact max-min diversity subset for a small pool.
    Oracle(OracleArgs),
    /// Per-frame selection latency on synthetic episodes.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PayloadArg {
    Raw,
    Scored,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecodeModeArg {
    Autoregressive,
    Chunk,
    FlowAveraged,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Dual,
    PrefillOnly,
    ActionOnly,
    ScoreFusion,
    DiversityOnly,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Dual => Variant::Dual,
            VariantArg::PrefillOnly => Variant::PrefillOnly,
            VariantArg::ActionOnly => Variant::ActionOnly,
            VariantArg::ScoreFusion => Variant::ScoreFusion,
            VariantArg::DiversityOnly => Variant::DiversityOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum WarmupArg {
    RetainAll,
    PrefillOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ema,
    Window,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    frames: usize,
    /// Visual tokens per frame.
    #[arg(long, default_value_t = 256)]
    m: usize,
    /// Text/context tokens per frame.
    #[arg(long, default_value_t = DEFAULT_TEXT_TOKENS as usize)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, value_enum, default_value_t = PayloadArg::Scored)]
    payload: PayloadArg,
    #[arg(long, value_enum, default_value_t = DecodeModeArg::Autoregressive)]
    decode_mode: DecodeModeArg,
    #[arg(long, default_value_t = 0.1)]
    drift: f64,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long)]
    shift_every: Option<usize>,
    #[arg(long)]
    episode: Option<String>,
    /// Trace path, or `-` for stdout.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimatorArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Window)]
    mode: ModeArg,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 3)]
    window: usize,
    #[arg(long, default_value_t = 0.8)]
    gamma: f64,
}

impl EstimatorArgs {
    fn config(&self) -> EstimatorConfig {
        EstimatorConfig {
            mode: match self.mode {
                ModeArg::Ema => EstimatorMode::Ema,
                ModeArg::Window => EstimatorMode::Window,
            },
            alpha: self.alpha,
            window: self.window,
            gamma: self.gamma,
        }
    }
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("budget_choice").required(true).args(["ratio", "budget"])))]
struct PruneArgs {
    /// Trace path, or `-` for stdin.
    #[arg(long)]
    trace: PathBuf,
    /// Retained fraction of visual tokens.
    #[arg(long)]
    ratio: Option<f64>,
    /// Retained visual token count.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, value_enum, default_value_t = VariantArg::Dual)]
    variant: VariantArg,
    #[arg(long, default_value_t = 0.5)]
    fusion_weight: f64,
    #[arg(long, value_enum, default_value_t = WarmupArg::RetainAll)]
    warmup: WarmupArg,
    #[arg(long, default_value_t = PruneConfig::DEFAULT_PRUNE_LAYER)]
    prune_layer: usize,
    #[command(flatten)]
    estimator: EstimatorArgs,
    /// Manifest path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Trace path, or `-` for stdin.
    #[arg(long)]
    trace: PathBuf,
    /// Top-k depth; repeatable. Defaults to M/8, M/4 and M/2.
    #[arg(long)]
    k: Vec<usize>,
    #[command(flatten)]
    estimator: EstimatorArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FlopsArgs {
    #[arg(long, default_value = "openvla-7b")]
    preset: String,
    #[arg(long, default_value_t = DEFAULT_TEXT_TOKENS)]
    n_text: u64,
    #[arg(long, default_value_t = 0.5)]
    ratio: f64,
    /// Prune layer.
    #[arg(long, default_value_t = 3)]
    k: u64,
    #[arg(long)]
    layers: Option<u64>,
    #[arg(long)]
    hidden: Option<u64>,
    #[arg(long)]
    ffn: Option<u64>,
    #[arg(long)]
    m_visual: Option<u64>,
    /// Also estimate the selection step's own operation count.
    #[arg(long)]
    overhead: bool,
    #[arg(long, default_value_t = 3)]
    window: u64,
    /// Embedding width used for the overhead estimate; defaults to hidden.
    #[arg(long)]
    embed_dim: Option<u64>,
}

#[derive(Args)]
struct OracleArgs {
    /// JSON file holding an array of embedding rows.
    #[arg(long)]
    embeddings: PathBuf,
    /// Comma-separated candidate indices; all rows when omitted.
    #[arg(long, value_delimiter = ',')]
    pool: Vec<usize>,
    #[arg(long)]
    target: usize,
}

#[derive(Args)]
struct BenchArgs {
    /// Visual token counts to benchmark; repeatable.
    #[arg(long, default_values_t = [256usize, 512])]
    m: Vec<usize>,
    #[arg(long, default_value_t = 300)]
    frames: usize,
    #[arg(long, default_value_t = 0.25)]
    ratio: f64,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum CliError {
    Usage(String),
    Data(String),
}

impl From<trace::TraceError> for CliError {
    fn from(e: trace::TraceError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

fn usage(e: vlaprune::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn data(e: vlaprune::Error) -> CliError {
    CliError::Data(e.to_string())
}

fn emit(value: &impl Serialize, out: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    match out {
        Some(path) => fs::write(path, text + "\n")?,
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}")?;
        }
    }
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<(), CliError> {
    let mut header = TraceHeader::new(
        a.episode.unwrap_or_else(|| format!("synthetic-{}", a.seed)),
        a.m,
        a.n,
        a.layers,
        a.dim,
        match a.payload {
            PayloadArg::Raw => Payload::Raw,
            PayloadArg::Scored => Payload::Scored,
        },
    );
    header.decode_mode = match a.decode_mode {
        DecodeModeArg::Autoregressive => DecodeMode::Autoregressive,
        DecodeModeArg::Chunk => DecodeMode::Chunk,
        DecodeModeArg::FlowAveraged => DecodeMode::FlowAveraged,
    };
    header.layout().map_err(usage)?;
    let cfg = SynthConfig {
        seed: a.seed,
        frames: a.frames,
        drift_sigma: a.drift,
        shift_every: a.shift_every,
        noise_sigma: a.noise,
    };
    let frames = synthesize_trace(&cfg, &header).map_err(usage)?;
    let sha256 = if is_stdio(&a.out) {
        let mut writer = TraceWriter::new(Vec::new(), header.clone())?;
        for f in &frames {
            writer.write_frame(f)?;
        }
        let bytes = writer.finish()?;
        std::io::stdout().lock().write_all(&bytes)?;
        trace::checksum_bytes(&bytes)
    } else {
        trace::write_trace(&a.out, &header, &frames)?;
        trace::checksum(&a.out)?
    };
    let summary = json!({
        "out": a.out.display().to_string(),
        "episode_id": header.episode_id,
        "frames": frames.len(),
        "sha256": sha256,
    });
    if is_stdio(&a.out) {
        eprintln!("{summary}");
        Ok(())
    } else {
        emit(&summary, None)
    }
}

fn is_stdio(path: &Path) -> bool {
    path.as_os_str() == "-"
}

/// Opens a trace from a path or stdin and returns it with its checksum.
fn open_trace(path: &Path) -> Result<(TraceReader<Box<dyn BufRead>>, String), CliError> {
    if is_stdio(path) {
        let mut bytes = Vec::new();
        std::io::stdin().lock().read_to_end(&mut bytes)?;
        let sha = trace::checksum_bytes(&bytes);
        let reader: Box<dyn BufRead> = Box::new(Cursor::new(bytes));
        Ok((TraceReader::new(reader)?, sha))
    } else {
        let sha = trace::checksum(path)?;
        let file = fs::File::open(path)?;
        let reader: Box<dyn BufRead> = Box::new(BufReader::with_capacity(trace::buffer_size(), file));
        Ok((TraceReader::new(reader)?, sha))
    }
}

fn cmd_prune(a: PruneArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let (reader, sha256) = open_trace(&a.trace)?;
    let header = reader.header().clone();
    let requested = match (a.ratio, a.budget) {
        (Some(r), None) => Budget::Ratio(r),
        (None, Some(b)) => Budget::Count(b),
        _ => return Err(CliError::Usage("pass exactly one of --ratio or --budget".into())),
    };
    let budget = requested.resolve(header.m_visual).map_err(usage)?;
    let prune = PruneConfig {
        budget,
        prune_layer: a.prune_layer,
        variant: a.variant.into(),
        fusion_weight: a.fusion_weight,
        warmup: match a.warmup {
            WarmupArg::RetainAll => WarmupPolicy::RetainAll,
            WarmupArg::PrefillOnly => WarmupPolicy::PrefillOnly,
        },
    };
    let estimator = a.estimator.config();
    let layout = header.layout().map_err(data)?;
    let mut replayer = Replayer::new(layout, prune, estimator).map_err(usage)?;

    let mut frames = Vec::new();
    let mut select_us = Vec::new();
    for frame in reader {
        let frame = frame?;
        let t0 = Instant::now();
        let result = replayer.step(&frame).map_err(data)?;
        select_us.push(t0.elapsed().as_secs_f64() * 1e6);
        frames.push(FrameSummary::new(frame.timestep, &result));
    }

    let flops_ratio = preset_flops_ratio(&header, budget, prune.prune_layer).map_err(usage)?;
    let manifest = RunManifest {
        engine: ENGINE_NAME.to_string(),
        engine_version: ENGINE_VERSION.to_string(),
        config: RunConfig { requested_budget: requested, prune, estimator, flops_preset: "openvla-7b".to_string() },
        trace: TraceInfo {
            path: a.trace.display().to_string(),
            sha256,
            episode_id: header.episode_id.clone(),
            m_visual: header.m_visual,
            n_text: header.n_text,
            frames: frames.len(),
        },
        aggregate: Aggregate::from_frames(&frames, flops_ratio),
        frames,
        timing: Timing {
            total_ms: started.elapsed().as_secs_f64() * 1e3,
            mean_select_us: if select_us.is_empty() {
                0.0
            } else {
                select_us.iter().sum::<f64>() / select_us.len() as f64
            },
            max_select_us: select_us.iter().copied().fold(0.0, f64::max),
        },
    };
    emit(&manifest, a.out.as_deref())
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    let (reader, sha256) = open_trace(&a.trace)?;
    let header = reader.header().clone();
    let frames = reader.collect::<Result<Vec<_>, _>>()?;
    let layout = header.layout().map_err(data)?;
    let scores = frames.iter().map(|f| f.scores(&layout)).collect::<Result<Vec<_>, _>>().map_err(data)?;
    let ks = if a.k.is_empty() { default_ks(header.m_visual) } else { a.k.clone() };
    let estimator = a.estimator.config();
    let mut overlap = Vec::new();
    let mut forecast = Vec::new();
    for &k in &ks {
        if k == 0 || k > header.m_visual {
            return Err(CliError::Usage(format!("--k {k} outside 1..={}", header.m_visual)));
        }
        overlap.push(episode_overlap_report(&scores, k).map_err(data)?);
        forecast.push(forecast_overlap(&scores, estimator, k).map_err(usage)?);
    }
    emit(
        &json!({
            "trace": {
                "path": a.trace.display().to_string(),
                "sha256": sha256,
                "episode_id": header.episode_id,
                "frames": frames.len(),
            },
            "overlap": overlap,
            "forecast": forecast,
        }),
        a.out.as_deref(),
    )
}

fn cmd_flops(a: FlopsArgs) -> Result<(), CliError> {
    let preset = Preset::parse(&a.preset).map_err(usage)?;
    let mut dims = preset.dims(a.n_text, a.k, a.ratio);
    dims.layers = a.layers.unwrap_or(dims.layers);
    dims.hidden = a.hidden.unwrap_or(dims.hidden);
    dims.ffn = a.ffn.unwrap_or(dims.ffn);
    dims.visual_tokens = a.m_visual.unwrap_or(dims.visual_tokens);
    dims.validate().map_err(usage)?;
    let mut out = json!({
        "dims": dims,
        "full": dims.flops_full(),
        "pruned": dims.flops_pruned(),
        "ratio": dims.flops_ratio(),
    });
    if a.overhead {
        let budget = dims.pruned_len() - dims.text_tokens;
        let ops = selection_overhead(dims.visual_tokens, budget, a.window, a.embed_dim.unwrap_or(dims.hidden));
        out["selection_overhead"] = json!(ops);
        out["selection_overhead_fraction"] = json!(ops as f64 / dims.flops_pruned() as f64);
    }
    emit(&out, None)
}

fn cmd_oracle(a: OracleArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.embeddings)?;
    let rows: Vec<Vec<f32>> =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", a.embeddings.display())))?;
    let emb = Embeddings::from_rows(&rows).map_err(data)?;
    let pool = if a.pool.is_empty() { (0..emb.m()).collect() } else { a.pool.clone() };
    let exact = solve_exact(&emb, &pool, a.target).map_err(usage)?;
    let greedy = min_redundancy_filter(&emb, &pool, a.target).map_err(usage)?;
    emit(
        &json!({
            "subset": exact.subset,
            "optimum": exact.optimum,
            "greedy": {
                "subset": greedy,
                "min_distance": subset_min_distance(&emb, &greedy),
                "min_pairwise_distance": min_pairwise_distance(&emb, &greedy).map_err(data)?,
            },
        }),
        None,
    )
}

fn cmd_bench(a: BenchArgs) -> Result<(), CliError> {
    let mut reports = Vec::new();
    for &m in &a.m {
        let cfg =
            BenchConfig { m, frames: a.frames, ratio: a.ratio, embed_dim: a.dim, seed: a.seed, ..Default::default() };
        reports.push(bench(&cfg).map_err(usage)?);
    }
    emit(&reports, None)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Prune(a) => cmd_prune(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Flops(a) => cmd_flops(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
