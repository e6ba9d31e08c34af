//! `wlac`: every pipeline stage behind one binary.

mod manifest;

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use wlac::analysis::{error_groups, improvement_groups, target_frequencies, typology, AnalysisCase};
use wlac::datagen::{
    generate_dataset, make_toy_corpus, read_dataset, requires_romanization, write_dataset, GenConfig,
    RomanizationTable, TypedLenPolicy, WlacExample,
};
use wlac::decoding::{HypothesisSet, Predictor};
use wlac::jsonl::{read_jsonl, write_json, write_jsonl};
use wlac::model::{Arch, ModelBundle, ModelConfig};
use wlac::pipeline::{baseline_rates, build_codec, evaluate, pairs_from_examples, translate_all};
use wlac::training::{train, TrainConfig};

use manifest::{beside, ManifestWriter};

/// Copied next to checkpoints so inference uses the table training used.
const TABLE_FILE: &str = "romanization.tsv";
const METRICS_FILE: &str = "metrics.jsonl";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Parser)]
#[command(name = "wlac", version, about = "Word-level auto-completion for computer-assisted translation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a WLAC dataset from a parallel corpus or the toy language.
    Datagen(DatagenArgs),
    /// Train a backbone, jointly with MT when alpha < 1.
    Train(TrainArgs),
    /// Drop the MT decoder from a checkpoint.
    Strip(StripArgs),
    /// Write top-k candidates for every example of a dataset.
    Predict(PredictArgs),
    /// Accuracy and agreement report for a labelled dataset.
    Evaluate(EvaluateArgs),
    /// Improvement and error groupings of two prediction files.
    Analyze(AnalyzeArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args, Serialize)]
struct DatagenArgs {
    /// Use the synthetic toy corpus instead of --corpus.
    #[arg(long, conflicts_with = "corpus")]
    toy: bool,
    /// `source<TAB>target` corpus file.
    #[arg(long, required_unless_present = "toy")]
    corpus: Option<PathBuf>,
    /// Number of toy pairs.
    #[arg(long, default_value_t = 5000)]
    size: usize,
    #[arg(long, default_value_t = 100)]
    vocab: usize,
    #[arg(long, default_value_t = 5)]
    min_len: usize,
    #[arg(long, default_value_t = 12)]
    max_len: usize,
    /// Read at most this many corpus pairs.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 1)]
    per_pair: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    max_context_len: usize,
    /// Type exactly this many characters (default: uniform over prefixes).
    #[arg(long)]
    typed_len: Option<usize>,
    /// Make context spans touch the label.
    #[arg(long)]
    adjacent_context: bool,
    /// `character<TAB>roman` table for non-alphabetic targets.
    #[arg(long)]
    romanization: Option<PathBuf>,
    /// Hold out this many trailing pairs into --test-out.
    #[arg(long, default_value_t = 0, requires = "test_out")]
    test_pairs: usize,
    #[arg(long)]
    test_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum ArchArg {
    Aioe,
    AioeBpe,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Aioe => Arch::Aioe,
            ArchArg::AioeBpe => Arch::AioeBpe,
        }
    }
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let a: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&a) {
        Ok(a)
    } else {
        Err(format!("alpha must lie in [0, 1], got {a}"))
    }
}

fn parse_probability(s: &str) -> Result<f64, String> {
    let p: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..1.0).contains(&p) {
        Ok(p)
    } else {
        Err(format!("dropout must lie in [0, 1), got {p}"))
    }
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "aioe")]
    arch: ArchArg,
    /// Weight of the WLAC loss; 1 trains the backbone alone.
    #[arg(long, default_value = "0.75", value_parser = parse_alpha)]
    alpha: f64,
    /// Small model and short schedule for a single CPU.
    #[arg(long)]
    desk_scale: bool,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_tokens: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long, value_parser = parse_probability)]
    dropout: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Save the checkpoint every this many steps (0: only at the end).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Stop once the windowed WLAC loss falls below this.
    #[arg(long)]
    stop_below: Option<f64>,
    #[arg(long, default_value_t = 30000)]
    max_vocab: usize,
    #[arg(long, default_value_t = 1000)]
    bpe_merges: usize,
    #[arg(long)]
    romanization: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct StripArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum Baseline {
    UpperBound,
    PrefixMatch,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Checkpoint whose MT decoder supplies hypotheses (default: --checkpoint
    /// when it still has one).
    #[arg(long)]
    mt_checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    beams: usize,
    /// Pick the first top-k candidate found in the hypotheses.
    #[arg(long)]
    joint_inference: bool,
    /// Score a translation-only baseline instead of the WLAC model.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Also write the hypotheses, one JSON set per line.
    #[arg(long)]
    hyps_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct AnalyzeArgs {
    #[arg(long)]
    data: PathBuf,
    /// Predictions of the backbone (w_e).
    #[arg(long)]
    backbone: PathBuf,
    /// Predictions of the jointly trained model (w_m).
    #[arg(long)]
    joint: PathBuf,
    /// Hypotheses written by `evaluate --hyps-out`.
    #[arg(long, required_unless_present = "mt_checkpoint")]
    hyps: Option<PathBuf>,
    #[arg(long, conflicts_with = "hyps")]
    mt_checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    beams: usize,
    /// Training data for target-word frequencies (enables the typology).
    #[arg(long)]
    train_data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ServeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Browser origin allowed to call the API; repeatable.
    #[arg(long = "cors-origin")]
    cors_origins: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionLine {
    pair_id: String,
    typed: String,
    label: String,
    candidates: Vec<wlac::decoding::Candidate>,
    empty: bool,
    fallback: bool,
}

fn config_of<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("arguments serialize")
}

fn load_table(path: Option<&Path>) -> wlac::Result<Option<RomanizationTable>> {
    path.map(RomanizationTable::load).transpose()
}

fn checkpoint_table(dir: &Path) -> wlac::Result<Option<RomanizationTable>> {
    let path = dir.join(TABLE_FILE);
    load_table(path.exists().then_some(path.as_path()))
}

fn copy_table(from: &Path, to_dir: &Path) -> wlac::Result<()> {
    let src = from.join(TABLE_FILE);
    if src.exists() {
        let dst = to_dir.join(TABLE_FILE);
        fs::copy(&src, &dst).map_err(|e| wlac::Error::io(dst, e))?;
    }
    Ok(())
}

/// Prints to stdout, tolerating a closed pipe.
fn print_json(value: &serde_json::Value) -> anyhow::Result<()> {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn cmd_datagen(a: DatagenArgs) -> anyhow::Result<()> {
    let mut outputs = vec![a.out.as_path()];
    outputs.extend(a.test_out.as_deref());
    let inputs: Vec<&Path> = a.corpus.iter().chain(&a.romanization).map(PathBuf::as_path).collect();
    let manifest = ManifestWriter::begin(beside(&a.out), "datagen", config_of(&a), &inputs, &outputs, Some(a.seed))?;
    let table = load_table(a.romanization.as_deref())?;
    let mut pairs = match &a.corpus {
        Some(path) => wlac::corpus::load_parallel(path, a.limit)?.pairs,
        None => make_toy_corpus(a.size, a.vocab, a.min_len, a.max_len, a.seed)?,
    };
    if table.is_none() && requires_romanization(&pairs) {
        return Err(wlac::Error::Config(
            "target side contains non-alphabetic words; pass --romanization with a character table".into(),
        )
        .into());
    }
    if a.test_pairs >= pairs.len() {
        return Err(wlac::Error::Config(format!("--test-pairs {} leaves no training pairs", a.test_pairs)).into());
    }
    let held_out = pairs.split_off(pairs.len() - a.test_pairs);
    let cfg = GenConfig {
        seed: a.seed,
        max_context_len: a.max_context_len,
        typed_len_policy: a.typed_len.map_or(TypedLenPolicy::Uniform, TypedLenPolicy::Fixed),
        context_adjacency: a.adjacent_context,
    };
    let data = generate_dataset(&pairs, a.per_pair, &cfg, table.as_ref())?;
    write_dataset(&a.out, &data.examples)?;
    log::info!("{} examples, {} pairs skipped", data.examples.len(), data.skipped_pairs);
    if let Some(test_out) = &a.test_out {
        let test = generate_dataset(&held_out, a.per_pair, &cfg, table.as_ref())?;
        write_dataset(test_out, &test.examples)?;
    }
    manifest.finish(&outputs)?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let mut inputs = vec![a.data.as_path()];
    inputs.extend(a.romanization.as_deref());
    let manifest = ManifestWriter::begin(a.out.join(MANIFEST_FILE), "train", config_of(&a), &inputs, &[&a.out], Some(a.seed))?;
    let table = load_table(a.romanization.as_deref())?;
    let data = read_dataset(&a.data)?;
    let arch: Arch = a.arch.into();
    let codec = build_codec(&pairs_from_examples(&data), arch, a.max_vocab, a.bpe_merges, table.as_ref())?;
    let pieces = codec.bpe.as_ref().map_or(0, |b| b.vocab().len());
    let mut config = if a.desk_scale {
        ModelConfig::desk_scale(arch, codec.vocab.len(), pieces)
    } else {
        ModelConfig::base(arch, codec.vocab.len(), pieces)
    };
    if let Some(p) = a.dropout {
        config.dropout = p;
    }
    let base = if a.desk_scale { TrainConfig::desk_scale() } else { TrainConfig::default() };
    let cfg = TrainConfig {
        alpha: a.alpha,
        seed: a.seed,
        max_steps: a.steps.unwrap_or(base.max_steps),
        batch_tokens: a.batch_tokens.unwrap_or(base.batch_tokens),
        learning_rate: a.lr.unwrap_or(base.learning_rate),
        warmup_steps: a.warmup.unwrap_or(base.warmup_steps),
        eval_every: a.eval_every.unwrap_or(base.eval_every),
        checkpoint_every: a.checkpoint_every,
        stop_below: a.stop_below,
        ..base
    };
    let mut model = wlac::model::JointModel::new(config, a.seed, a.alpha < 1.0)?;
    log::info!(
        "training {} ({} parameters) on {} examples, alpha {}",
        arch.name(),
        model.params().num_scalars(),
        data.len(),
        a.alpha
    );
    fs::create_dir_all(&a.out).map_err(|e| wlac::Error::io(&a.out, e))?;
    if let Some(t) = &a.romanization {
        let dst = a.out.join(TABLE_FILE);
        fs::copy(t, &dst).map_err(|e| wlac::Error::io(dst, e))?;
    }
    let metrics_path = a.out.join(METRICS_FILE);
    let mut metrics = Vec::new();
    let out = a.out.clone();
    let mut hook = |p: &wlac::training::EvalPoint| -> wlac::Result<()> {
        log::info!("step {} combined loss {:.4}", p.step, p.window.combined);
        metrics.push(json!({"step": p.step, "window": p.window}));
        write_jsonl(&metrics_path, &metrics)?;
        if p.checkpoint && !p.last {
            ModelBundle::new(p.model.clone(), codec.clone()).save(&out)?;
        }
        Ok(())
    };
    let history = train(&mut model, &codec, &data, &cfg, &mut hook)?;
    let model_hash = ModelBundle::new(model, codec).save(&a.out)?;
    log::info!("saved {} (sha256 {model_hash})", a.out.display());
    if history.stopped_early {
        log::info!("stopped early after {} steps", history.steps.len());
    }
    manifest.finish(&[&ModelBundle::model_path(&a.out), &metrics_path])?;
    Ok(())
}

fn cmd_strip(a: StripArgs) -> anyhow::Result<()> {
    let model_path = ModelBundle::model_path(&a.checkpoint);
    let manifest = ManifestWriter::begin(a.out.join(MANIFEST_FILE), "strip", config_of(&a), &[&model_path], &[&a.out], None)?;
    let bundle = ModelBundle::load(&a.checkpoint)?;
    let stripped = ModelBundle::new(bundle.model.strip_decoder(), bundle.codec);
    stripped.save(&a.out)?;
    copy_table(&a.checkpoint, &a.out)?;
    manifest.finish(&[&ModelBundle::model_path(&a.out)])?;
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> anyhow::Result<()> {
    let model_path = ModelBundle::model_path(&a.checkpoint);
    let manifest = ManifestWriter::begin(beside(&a.out), "predict", config_of(&a), &[&model_path, &a.data], &[&a.out], None)?;
    let bundle = ModelBundle::load(&a.checkpoint)?;
    let table = checkpoint_table(&a.checkpoint)?;
    let data = read_dataset(&a.data)?;
    let predictor = Predictor::new(&bundle.model, &bundle.codec, table.as_ref());
    let mut lines = Vec::with_capacity(data.len());
    for chunk in data.chunks(64) {
        for (ex, p) in chunk.iter().zip(predictor.predict_batch(chunk, a.k)?) {
            lines.push(PredictionLine {
                pair_id: ex.pair_id.clone(),
                typed: ex.typed.clone(),
                label: ex.label.clone(),
                candidates: p.candidates,
                empty: p.empty,
                fallback: p.fallback,
            });
        }
    }
    write_jsonl(&a.out, &lines)?;
    manifest.finish(&[&a.out])?;
    Ok(())
}

fn hypotheses_from(dir: &Path, data: &[WlacExample], beams: usize) -> wlac::Result<Vec<HypothesisSet>> {
    let bundle = ModelBundle::load(dir)?;
    translate_all(&bundle.model, &bundle.codec, data, beams)
}

fn cmd_evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let model_path = ModelBundle::model_path(&a.checkpoint);
    let mut inputs = vec![model_path.as_path(), a.data.as_path()];
    let mt_model_path = a.mt_checkpoint.as_ref().map(ModelBundle::model_path);
    inputs.extend(mt_model_path.as_deref());
    let mut outputs = vec![a.out.as_path()];
    outputs.extend(a.hyps_out.as_deref());
    let manifest = ManifestWriter::begin(beside(&a.out), "evaluate", config_of(&a), &inputs, &outputs, None)?;

    let bundle = ModelBundle::load(&a.checkpoint)?;
    let table = checkpoint_table(&a.checkpoint)?;
    let data = read_dataset(&a.data)?;
    let hyps = match &a.mt_checkpoint {
        Some(dir) => Some(hypotheses_from(dir, &data, a.beams)?),
        None if bundle.model.has_mt() => Some(translate_all(&bundle.model, &bundle.codec, &data, a.beams)?),
        None => None,
    };
    if hyps.is_none() && (a.joint_inference || a.baseline.is_some()) {
        return Err(wlac::Error::Capability(
            "MT hypotheses are needed; pass --mt-checkpoint or a checkpoint that kept its MT decoder".into(),
        )
        .into());
    }
    if let (Some(path), Some(h)) = (&a.hyps_out, &hyps) {
        write_jsonl(path, h)?;
    }
    let report = match a.baseline {
        Some(which) => {
            let rates = baseline_rates(&data, hyps.as_deref().expect("checked above"), table.as_ref())?;
            let (name, acc) = match which {
                Baseline::UpperBound => ("upper_bound", rates.upper_bound),
                Baseline::PrefixMatch => ("prefix_match", rates.prefix_match),
            };
            json!({"n": data.len(), "baseline": name, "accuracy": acc})
        }
        None => {
            let predictor = Predictor::new(&bundle.model, &bundle.codec, table.as_ref());
            let ev = evaluate(&predictor, &data, a.k, hyps.as_deref(), a.joint_inference)?;
            match ev.report {
                Some(r) => json!({
                    "n": r.n,
                    "accuracy": r.accuracy,
                    "agreement_rate": r.agreement_rate,
                    "agr_acc": r.agr_acc,
                    "disagr_acc": r.disagr_acc,
                    "gap": r.gap,
                    "joint_inference": a.joint_inference,
                }),
                None => json!({"n": data.len(), "accuracy": ev.accuracy}),
            }
        }
    };
    write_json(&a.out, &report)?;
    print_json(&report)?;
    manifest.finish(&outputs)?;
    Ok(())
}

fn read_predictions(path: &Path, data: &[WlacExample]) -> anyhow::Result<Vec<String>> {
    let lines: Vec<PredictionLine> = read_jsonl(path)?;
    if lines.len() != data.len() || lines.iter().zip(data).any(|(l, e)| l.pair_id != e.pair_id) {
        return Err(wlac::Error::Invalid(format!("{} does not line up with the dataset", path.display())).into());
    }
    Ok(lines
        .into_iter()
        .map(|l| l.candidates.into_iter().next().map(|c| c.word).unwrap_or_default())
        .collect())
}

fn cmd_analyze(a: AnalyzeArgs) -> anyhow::Result<()> {
    let mut inputs = vec![a.data.as_path(), a.backbone.as_path(), a.joint.as_path()];
    inputs.extend(a.hyps.as_deref());
    inputs.extend(a.train_data.as_deref());
    let manifest = ManifestWriter::begin(beside(&a.out), "analyze", config_of(&a), &inputs, &[&a.out], None)?;
    let data = read_dataset(&a.data)?;
    let w_e = read_predictions(&a.backbone, &data)?;
    let w_m = read_predictions(&a.joint, &data)?;
    let hyps: Vec<HypothesisSet> = match (&a.hyps, &a.mt_checkpoint) {
        (Some(path), _) => read_jsonl(path)?,
        (None, Some(dir)) => hypotheses_from(dir, &data, a.beams)?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    if hyps.len() != data.len() {
        return Err(anyhow!("{} hypothesis sets for {} examples", hyps.len(), data.len()));
    }
    let cases: Vec<AnalysisCase> = data
        .iter()
        .zip(w_e.iter().zip(&w_m))
        .zip(hyps)
        .map(|((ex, (e, m)), h)| AnalysisCase::new(ex.pair_id.clone(), e, m, &ex.label, h, ex.context_len()))
        .collect();
    let typology = match &a.train_data {
        Some(path) => {
            let train = read_dataset(path)?;
            let freq = target_frequencies(pairs_from_examples(&train).iter().map(|p| p.target.as_slice()));
            Some(typology(&cases, &freq))
        }
        None => None,
    };
    let report = json!({
        "improvement": improvement_groups(&cases),
        "errors": error_groups(&cases),
        "typology": typology,
    });
    write_json(&a.out, &report)?;
    print_json(&report)?;
    manifest.finish(&[&a.out])?;
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = tokio::signal::ctrl_c();
    #[cfg(unix)]
    {
        let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()).expect("signal handler");
        tokio::select! {
            _ = ctrl_c => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = ctrl_c.await;
    log::info!("shutting down, draining in-flight requests");
}

fn cmd_serve(a: ServeArgs) -> anyhow::Result<()> {
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| wlac::Error::Config(format!("bad address {}:{}: {e}", a.host, a.port)))?;
    let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    runtime.block_on(async move {
        let listener = wlac_service::bind(addr)
            .await
            .map_err(|e| wlac::Error::io(format!("{addr}"), e))?;
        log::info!("listening on http://{}", listener.local_addr().unwrap_or(addr));
        let state = Arc::new(wlac_service::AppState::default());
        let table = checkpoint_table(&a.checkpoint)?;
        let loader = wlac_service::load_in_background(state.clone(), a.checkpoint.clone(), table);
        let app = wlac_service::router(state, &a.cors_origins);
        let server = tokio::spawn(wlac_service::serve(listener, app, shutdown_signal()));
        loader.await.context("loader task")??;
        server.await.context("server task")?.context("serving")?;
        Ok(())
    })
}

fn category(e: &anyhow::Error) -> &'static str {
    e.chain()
        .find_map(|c| c.downcast_ref::<wlac::Error>())
        .map_or("internal", wlac::Error::category)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Datagen(a) => cmd_datagen(a),
        Command::Train(a) => cmd_train(a),
        Command::Strip(a) => cmd_strip(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e:#}", category(&e));
            ExitCode::FAILURE
        }
    }
}
