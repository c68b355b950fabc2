//! Pipeline command-line interface: dataset generation, splitting, encoder
//! training, embedding, clustering, predictor training, fine-tuning,
//! evaluation, search, and the combined estimator.
//!
//! Every run writes a `<out>.manifest.json` with the fully resolved
//! configuration, seeds, and SHA-256 hashes of all input files. All
//! randomness flows from explicit seeds, so a rerun with the same manifest
//! reproduces outputs byte for byte. Progress goes to stderr (suppressed
//! by `--quiet`); results go to files only.

use clap::{Args, Parser, Subcommand};
use gennape::encoder::{encode, train_encoder, EncoderConfig};
use gennape::families::{
    build_dataset, read_dataset, write_dataset, DatasetRecord, FamilyKind, OracleConfig,
};
use gennape::fcm::{fcm_fit, fit_reducer, grid_search, FcmModel, PCA_TARGET_DIMS};
use gennape::metrics::{kendall_tau, mae, ndcg_at_k, srcc, RankingReport};
use gennape::persist::{ClusterArtifact, EncoderArtifact, PredictorArtifact};
use gennape::predictor::{
    baseline_predict, fine_tune, fine_tune_baseline, fine_tune_pairwise, gennape_combine,
    pairwise_rank_scores, predict_accuracy, train_baseline_gnn, train_heads, train_pairwise,
    BaselineConfig, CombineMode, HeadConfig,
};
use gennape::search::{local_search, write_trajectory, SearchConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "gennape", version, about = "Architecture performance estimation pipeline")]
struct Cli {
    /// Flat key=value config file; command-line flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Suppress progress lines on stderr
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic architecture family dataset
    Gen(GenArgs),
    /// Split a dataset 80/10/10 into train/val/test
    Split(SplitArgs),
    /// Train the contrastive graph encoder
    TrainEncoder(TrainEncoderArgs),
    /// Embed a dataset with a trained encoder
    Embed(EmbedArgs),
    /// Fit the feature reducer and fuzzy c-means clustering
    Cluster(ClusterArgs),
    /// Train a predictor variant
    TrainPredictor(TrainPredictorArgs),
    /// Fine-tune a predictor on target-family samples
    FineTune(FineTuneArgs),
    /// Score a dataset and write a ranking report
    Evaluate(EvaluateArgs),
    /// Mutation-based local search from a seed architecture
    Search(SearchArgs),
    /// Combine constituent predictors into the final estimator
    Gennape(GennapeArgs),
}

#[derive(Args)]
struct GenArgs {
    /// nb101_like | hiaml_like | inception_like | twopath_like
    #[arg(long)]
    family: String,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON file with synthetic oracle parameters
    #[arg(long)]
    oracle: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Writes <prefix>.train.jsonl, <prefix>.val.jsonl, <prefix>.test.jsonl
    #[arg(long)]
    out_prefix: String,
}

#[derive(Args)]
struct TrainEncoderArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    gnn_layers: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    encoder: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// PCA dimensions kept by the feature reducer
    #[arg(long)]
    dims: Option<usize>,
    #[arg(long)]
    c: Option<usize>,
    #[arg(long)]
    m: Option<f64>,
    /// Grid-search C in 10..=20 and m in {2.0..4.0} instead of fixed (c, m)
    #[arg(long)]
    grid: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainPredictorArgs {
    /// cl | cl+t | cl+fcm | cl+fcm+t | pairwise | pairwise+fcm | baseline-gnn
    #[arg(long)]
    variant: String,
    /// Dataset JSON-lines (required for baseline-gnn)
    #[arg(long)]
    train: Option<PathBuf>,
    /// Embeddings JSON-lines (required for all other variants)
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Cluster artifact; required for +fcm variants, optional otherwise
    #[arg(long)]
    cluster: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    hidden_layers: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dims: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FineTuneArgs {
    #[arg(long)]
    model: PathBuf,
    /// Encoder artifact (required unless the model is baseline-gnn)
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// Labeled target-family dataset to draw fine-tuning samples from
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Model path; may contain "{seed}" when --seeds is given
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    encoder: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
    /// Evaluate models for seeds 0..N and report mean and std per metric
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// Dataset holding the seed architecture
    #[arg(long)]
    input: PathBuf,
    /// Index of the seed architecture within --input
    #[arg(long)]
    index: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    mutations_per_parent: Option<usize>,
    #[arg(long)]
    flops_budget: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Result JSON; the trajectory goes to <out>.trajectory.jsonl
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GennapeArgs {
    /// Constituent predictor artifacts (repeat the flag)
    #[arg(long, required = true)]
    model: Vec<PathBuf>,
    #[arg(long)]
    encoder: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
    /// zero-shot | fine-tuned
    #[arg(long)]
    mode: String,
    /// Labeled subset used to weight constituents in fine-tuned mode
    #[arg(long)]
    ft_samples: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

// -----------------------------------------------------------------------
// config-file merging and manifests

struct Ctx {
    file: BTreeMap<String, String>,
    quiet: bool,
    manifest_params: BTreeMap<String, String>,
    manifest_inputs: BTreeMap<String, String>,
}

impl Ctx {
    fn new(config: &Option<PathBuf>, quiet: bool) -> CliResult<Self> {
        let mut file = BTreeMap::new();
        if let Some(path) = config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))?;
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                match line.split_once('=') {
                    Some((k, v)) => {
                        file.insert(k.trim().to_string(), v.trim().to_string());
                    }
                    None => {
                        return Err(CliError::Usage(format!(
                            "--config {}: line {} is not key=value",
                            path.display(),
                            i + 1
                        )))
                    }
                }
            }
        }
        Ok(Ctx { file, quiet, manifest_params: BTreeMap::new(), manifest_inputs: BTreeMap::new() })
    }

    /// Flag value if given, else config-file value, else default; the
    /// resolved value is recorded in the run manifest.
    fn resolve<T: FromStr + ToString + Clone>(
        &mut self,
        flag: &Option<T>,
        key: &str,
        default: T,
    ) -> CliResult<T> {
        let v = match flag {
            Some(v) => v.clone(),
            None => match self.file.get(key) {
                Some(raw) => raw
                    .parse()
                    .map_err(|_| CliError::Usage(format!("config key {key}: bad value {raw:?}")))?,
                None => default,
            },
        };
        self.manifest_params.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    fn note_param(&mut self, key: &str, value: impl ToString) {
        self.manifest_params.insert(key.to_string(), value.to_string());
    }

    fn note_input(&mut self, path: &Path) -> CliResult {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Usage(format!("input {}: {e}", path.display())))?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.manifest_inputs.insert(path.display().to_string(), hex);
        Ok(())
    }

    fn progress(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    fn write_manifest(&self, command: &str, out: &Path) -> CliResult {
        let manifest = serde_json::json!({
            "command": command,
            "params": self.manifest_params,
            "inputs": self.manifest_inputs,
        });
        let path = manifest_path(out);
        std::fs::write(&path, format!("{}\n", serde_json::to_string_pretty(&manifest).unwrap()))
            .map_err(CliError::runtime)
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult {
    std::fs::write(path, format!("{}\n", serde_json::to_string_pretty(value).unwrap()))
        .map_err(CliError::runtime)
}

// -----------------------------------------------------------------------
// shared plumbing

fn load_dataset(path: &Path) -> CliResult<Vec<DatasetRecord>> {
    read_dataset(path).map_err(CliError::runtime)
}

fn accuracies_pct(records: &[DatasetRecord]) -> Vec<f64> {
    records.iter().map(|r| 100.0 * r.accuracy).collect()
}

fn load_encoder(path: &Path) -> CliResult<EncoderArtifact> {
    EncoderArtifact::load(path).map_err(CliError::runtime)
}

fn embed_records(enc: &EncoderArtifact, records: &[DatasetRecord]) -> Vec<Vec<f64>> {
    records.iter().map(|r| encode(&r.graph, &enc.params, &enc.config, None).h).collect()
}

#[derive(serde::Serialize, serde::Deserialize)]
struct EmbeddingLine {
    name: String,
    embedding: Vec<f64>,
    flops_g: f64,
    accuracy: f64,
}

fn read_embeddings(path: &Path) -> CliResult<Vec<EmbeddingLine>> {
    let text = std::fs::read_to_string(path).map_err(CliError::runtime)?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(CliError::runtime))
        .collect()
}

/// Score every record with a predictor artifact. The encoder is required
/// for the embedding-based predictors.
fn score_records(
    artifact: &PredictorArtifact,
    encoder: Option<&EncoderArtifact>,
    records: &[DatasetRecord],
) -> CliResult<Vec<f64>> {
    let features = |reducer: &gennape::fcm::FeatureReducer| -> CliResult<Vec<Vec<f64>>> {
        let enc = encoder.ok_or_else(|| {
            CliError::Usage("--encoder is required for embedding-based predictors".into())
        })?;
        let embeddings = embed_records(enc, records);
        Ok(records
            .iter()
            .zip(&embeddings)
            .map(|(r, e)| reducer.transform_one(e, r.flops_g))
            .collect())
    };
    match artifact {
        PredictorArtifact::Ensemble { reducer, model } => {
            let xs = features(reducer)?;
            Ok(xs
                .iter()
                .zip(records)
                .map(|(x, r)| predict_accuracy(x, r.flops_g, model))
                .collect())
        }
        PredictorArtifact::Pairwise { reducer, model } => {
            let xs = features(reducer)?;
            Ok(pairwise_rank_scores(&xs, model))
        }
        PredictorArtifact::Baseline { model } => {
            Ok(records.iter().map(|r| baseline_predict(&r.graph, model)).collect())
        }
    }
}

fn ranking_report(preds: &[f64], labels: &[f64]) -> CliResult<RankingReport> {
    let mut ndcg = BTreeMap::new();
    for k in [10usize, 50] {
        let k = k.min(labels.len());
        ndcg.insert(format!("ndcg@{k}"), ndcg_at_k(preds, labels, k).map_err(CliError::runtime)?);
    }
    Ok(RankingReport {
        mae: mae(preds, labels).map_err(CliError::runtime)?,
        srcc: srcc(preds, labels).map_err(CliError::runtime)?,
        kendall_tau: kendall_tau(preds, labels).map_err(CliError::runtime)?,
        ndcg,
    })
}

// -----------------------------------------------------------------------
// subcommands

fn cmd_gen(ctx: &mut Ctx, args: &GenArgs) -> CliResult {
    let family = FamilyKind::from_str(&args.family)
        .map_err(|_| CliError::Usage(format!("--family: unknown family {:?}", args.family)))?;
    let n = ctx.resolve(&args.n, "n", 100)?;
    let seed = ctx.resolve(&args.seed, "seed", 0)?;
    ctx.note_param("family", family.tag());
    let oracle = match &args.oracle {
        Some(path) => {
            ctx.note_input(path)?;
            let text = std::fs::read_to_string(path).map_err(CliError::runtime)?;
            serde_json::from_str::<OracleConfig>(&text)
                .map_err(|e| CliError::Usage(format!("--oracle {}: {e}", path.display())))?
        }
        None => OracleConfig::default(),
    };
    ctx.progress(&format!("generating {n} {} graphs with seed {seed}", family.tag()));
    let records = build_dataset(family, n, &oracle, seed).map_err(CliError::runtime)?;
    write_dataset(&args.out, &records).map_err(CliError::runtime)?;
    ctx.write_manifest("gen", &args.out)
}

fn cmd_split(ctx: &mut Ctx, args: &SplitArgs) -> CliResult {
    let seed = ctx.resolve(&args.seed, "seed", 0)?;
    ctx.note_input(&args.input)?;
    let records = load_dataset(&args.input)?;
    let n = records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val_n = n / 10;
    let test_n = n / 10;
    let train_n = n - val_n - test_n;
    let pick = |range: std::ops::Range<usize>| -> Vec<DatasetRecord> {
        order[range].iter().map(|&i| records[i].clone()).collect()
    };
    let parts = [
        ("train", pick(0..train_n)),
        ("val", pick(train_n..train_n + val_n)),
        ("test", pick(train_n + val_n..n)),
    ];
    for (tag, part) in &parts {
        let path = PathBuf::from(format!("{}.{tag}.jsonl", args.out_prefix));
        write_dataset(&path, part).map_err(CliError::runtime)?;
        ctx.progress(&format!("{}: {} records", path.display(), part.len()));
    }
    ctx.write_manifest("split", &PathBuf::from(format!("{}.train.jsonl", args.out_prefix)))
}

fn cmd_train_encoder(ctx: &mut Ctx, args: &TrainEncoderArgs) -> CliResult {
    let defaults = EncoderConfig::default();
    let embed_dim = ctx.resolve(&args.embed_dim, "embed_dim", defaults.embed_dim)?;
    let config = EncoderConfig {
        embed_dim,
        branch_dim: embed_dim / 2,
        gnn_layers: ctx.resolve(&args.gnn_layers, "gnn_layers", defaults.gnn_layers)?,
        dropout_rate: ctx.resolve(&args.dropout, "dropout", defaults.dropout_rate)?,
        batch_size: ctx.resolve(&args.batch_size, "batch_size", defaults.batch_size)?,
        epochs: ctx.resolve(&args.epochs, "epochs", defaults.epochs)?,
        learning_rate: ctx.resolve(&args.lr, "lr", defaults.learning_rate)?,
        seed: ctx.resolve(&args.seed, "seed", defaults.seed)?,
        ..defaults
    };
    ctx.note_input(&args.train)?;
    let records = load_dataset(&args.train)?;
    let graphs: Vec<_> = records.into_iter().map(|r| r.graph).collect();
    ctx.progress(&format!("training encoder on {} graphs", graphs.len()));
    let (params, log) = train_encoder(&graphs, &config).map_err(CliError::runtime)?;
    for (e, loss) in log.epoch_losses.iter().enumerate() {
        ctx.progress(&format!("epoch {e}: loss {loss:.6}"));
    }
    EncoderArtifact { params, config }.save(&args.out).map_err(CliError::runtime)?;
    ctx.write_manifest("train-encoder", &args.out)
}

fn cmd_embed(ctx: &mut Ctx, args: &EmbedArgs) -> CliResult {
    ctx.note_input(&args.encoder)?;
    ctx.note_input(&args.input)?;
    let enc = load_encoder(&args.encoder)?;
    let records = load_dataset(&args.input)?;
    ctx.progress(&format!("embedding {} graphs", records.len()));
    let mut out = String::new();
    for r in &records {
        let line = EmbeddingLine {
            name: r.graph.name().to_string(),
            embedding: encode(&r.graph, &enc.params, &enc.config, None).h,
            flops_g: r.flops_g,
            accuracy: r.accuracy,
        };
        out.push_str(&serde_json::to_string(&line).unwrap());
        out.push('\n');
    }
    std::fs::write(&args.out, out).map_err(CliError::runtime)?;
    ctx.write_manifest("embed", &args.out)
}

fn cmd_cluster(ctx: &mut Ctx, args: &ClusterArgs) -> CliResult {
    let dims = ctx.resolve(&args.dims, "dims", PCA_TARGET_DIMS)?;
    let seed = ctx.resolve(&args.seed, "seed", 0)?;
    ctx.note_input(&args.embeddings)?;
    let lines = read_embeddings(&args.embeddings)?;
    let embeddings: Vec<Vec<f64>> = lines.iter().map(|l| l.embedding.clone()).collect();
    let flops: Vec<f64> = lines.iter().map(|l| l.flops_g).collect();
    let (reducer, features) = fit_reducer(&embeddings, &flops, dims).map_err(CliError::runtime)?;
    let fcm = if args.grid {
        ctx.note_param("grid", true);
        let accs: Vec<f64> = lines.iter().map(|l| 100.0 * l.accuracy).collect();
        ctx.progress("grid-searching (C, m) by training-set SRCC of a probe ensemble");
        let result = grid_search(&features, seed, |model: &FcmModel| {
            let config = HeadConfig {
                hidden: 32,
                hidden_layers: 1,
                epochs: 5,
                seed,
                ..HeadConfig::default()
            };
            let ens = train_heads(&features, &accs, &flops, Some(model.clone()), &config)
                .map_err(|e| e.to_string())?;
            let preds: Vec<f64> = features
                .iter()
                .zip(&flops)
                .map(|(x, &f)| predict_accuracy(x, f, &ens))
                .collect();
            srcc(&preds, &accs).map_err(|e| e.to_string())
        })
        .map_err(CliError::runtime)?;
        ctx.progress(&format!("selected C={} m={}", result.c, result.m));
        ctx.note_param("selected_c", result.c);
        ctx.note_param("selected_m", result.m);
        result.model
    } else {
        let c = ctx.resolve(&args.c, "c", 10)?;
        let m = ctx.resolve(&args.m, "m", 2.0)?;
        let fit = fcm_fit(&features, c, m, seed).map_err(CliError::runtime)?;
        ctx.progress(&format!("fcm converged after {} iterations", fit.iterations));
        fit.model
    };
    ClusterArtifact { reducer, fcm: Some(fcm) }.save(&args.out).map_err(CliError::runtime)?;
    ctx.write_manifest("cluster", &args.out)
}

fn cmd_train_predictor(ctx: &mut Ctx, args: &TrainPredictorArgs) -> CliResult {
    ctx.note_param("variant", &args.variant);
    let seed = ctx.resolve(&args.seed, "seed", 0)?;
    let variant = args.variant.as_str();
    let known = ["cl", "cl+t", "cl+fcm", "cl+fcm+t", "pairwise", "pairwise+fcm", "baseline-gnn"];
    if !known.contains(&variant) {
        return Err(CliError::Usage(format!("--variant: unknown variant {variant:?}")));
    }

    if variant == "baseline-gnn" {
        let train = args.train.as_ref().ok_or_else(|| {
            CliError::Usage("--train is required for the baseline-gnn variant".into())
        })?;
        ctx.note_input(train)?;
        let records = load_dataset(train)?;
        let defaults = BaselineConfig::default();
        let config = BaselineConfig {
            epochs: ctx.resolve(&args.epochs, "epochs", defaults.epochs)?,
            learning_rate: ctx.resolve(&args.lr, "lr", defaults.learning_rate)?,
            batch_size: ctx.resolve(&args.batch_size, "batch_size", defaults.batch_size)?,
            seed,
            ..defaults
        };
        let graphs: Vec<_> = records.iter().map(|r| r.graph.clone()).collect();
        let accs = accuracies_pct(&records);
        ctx.progress(&format!("training baseline GNN on {} graphs", graphs.len()));
        let model = train_baseline_gnn(&graphs, &accs, &config).map_err(CliError::runtime)?;
        PredictorArtifact::Baseline { model }.save(&args.out).map_err(CliError::runtime)?;
        return ctx.write_manifest("train-predictor", &args.out);
    }

    let emb_path = args.embeddings.as_ref().ok_or_else(|| {
        CliError::Usage(format!("--embeddings is required for the {variant} variant"))
    })?;
    ctx.note_input(emb_path)?;
    let lines = read_embeddings(emb_path)?;
    let embeddings: Vec<Vec<f64>> = lines.iter().map(|l| l.embedding.clone()).collect();
    let flops: Vec<f64> = lines.iter().map(|l| l.flops_g).collect();
    let accs: Vec<f64> = lines.iter().map(|l| 100.0 * l.accuracy).collect();

    let wants_fcm = variant.contains("fcm");
    let (reducer, features, fcm) = match &args.cluster {
        Some(path) => {
            ctx.note_input(path)?;
            let cluster = ClusterArtifact::load(path).map_err(CliError::runtime)?;
            let features = cluster.reducer.transform(&embeddings, &flops);
            (cluster.reducer, features, cluster.fcm)
        }
        None if wants_fcm => {
            return Err(CliError::Usage(format!(
                "--cluster is required for the {variant} variant"
            )))
        }
        None => {
            let dims = ctx.resolve(&args.dims, "dims", PCA_TARGET_DIMS)?;
            let (reducer, features) =
                fit_reducer(&embeddings, &flops, dims).map_err(CliError::runtime)?;
            (reducer, features, None)
        }
    };
    let fcm = if wants_fcm { fcm } else { None };

    let defaults = HeadConfig::default();
    let config = HeadConfig {
        hidden: ctx.resolve(&args.hidden, "hidden", defaults.hidden)?,
        hidden_layers: ctx.resolve(&args.hidden_layers, "hidden_layers", defaults.hidden_layers)?,
        epochs: ctx.resolve(&args.epochs, "epochs", defaults.epochs)?,
        learning_rate: ctx.resolve(&args.lr, "lr", defaults.learning_rate)?,
        batch_size: ctx.resolve(&args.batch_size, "batch_size", defaults.batch_size)?,
        use_transform: variant.ends_with("+t"),
        seed,
    };
    ctx.progress(&format!("training {variant} on {} samples", features.len()));
    let artifact = if variant.starts_with("pairwise") {
        let model = train_pairwise(&features, &accs, fcm, &config).map_err(CliError::runtime)?;
        PredictorArtifact::Pairwise { reducer, model }
    } else {
        let model =
            train_heads(&features, &accs, &flops, fcm, &config).map_err(CliError::runtime)?;
        PredictorArtifact::Ensemble { reducer, model }
    };
    artifact.save(&args.out).map_err(CliError::runtime)?;
    ctx.write_manifest("train-predictor", &args.out)
}

fn cmd_fine_tune(ctx: &mut Ctx, args: &FineTuneArgs) -> CliResult {
    let n = ctx.resolve(&args.n, "n", 50)?;
    let epochs = ctx.resolve(&args.epochs, "epochs", 100)?;
    let seed = ctx.resolve(&args.seed, "seed", 0)?;
    ctx.note_input(&args.model)?;
    ctx.note_input(&args.samples)?;
    let artifact = PredictorArtifact::load(&args.model).map_err(CliError::runtime)?;
    let records = load_dataset(&args.samples)?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let subset: Vec<DatasetRecord> =
        order.iter().take(n).map(|&i| records[i].clone()).collect();
    let accs = accuracies_pct(&subset);
    let flops: Vec<f64> = subset.iter().map(|r| r.flops_g).collect();
    ctx.progress(&format!("fine-tuning on {} samples for {epochs} epochs", subset.len()));

    let tuned = match &artifact {
        PredictorArtifact::Ensemble { reducer, model } => {
            let enc_path = args.encoder.as_ref().ok_or_else(|| {
                CliError::Usage("--encoder is required to fine-tune this model".into())
            })?;
            ctx.note_input(enc_path)?;
            let enc = load_encoder(enc_path)?;
            let embeddings = embed_records(&enc, &subset);
            let features: Vec<Vec<f64>> = embeddings
                .iter()
                .zip(&flops)
                .map(|(e, &f)| reducer.transform_one(e, f))
                .collect();
            let tuned = fine_tune(model, &features, &accs, &flops, epochs, seed)
                .map_err(CliError::runtime)?;
            PredictorArtifact::Ensemble { reducer: reducer.clone(), model: tuned }
        }
        PredictorArtifact::Pairwise { reducer, model } => {
            let enc_path = args.encoder.as_ref().ok_or_else(|| {
                CliError::Usage("--encoder is required to fine-tune this model".into())
            })?;
            ctx.note_input(enc_path)?;
            let enc = load_encoder(enc_path)?;
            let embeddings = embed_records(&enc, &subset);
            let features: Vec<Vec<f64>> = embeddings
                .iter()
                .zip(&flops)
                .map(|(e, &f)| reducer.transform_one(e, f))
                .collect();
            let tuned = fine_tune_pairwise(model, &features, &accs, epochs, seed)
                .map_err(CliError::runtime)?;
            PredictorArtifact::Pairwise { reducer: reducer.clone(), model: tuned }
        }
        PredictorArtifact::Baseline { model } => {
            let graphs: Vec<_> = subset.iter().map(|r| r.graph.clone()).collect();
            let tuned = fine_tune_baseline(model, &graphs, &accs, epochs, seed)
                .map_err(CliError::runtime)?;
            PredictorArtifact::Baseline { model: tuned }
        }
    };
    tuned.save(&args.out).map_err(CliError::runtime)?;
    ctx.write_manifest("fine-tune", &args.out)
}

fn cmd_evaluate(ctx: &mut Ctx, args: &EvaluateArgs) -> CliResult {
    ctx.note_input(&args.input)?;
    let records = load_dataset(&args.input)?;
    let labels = accuracies_pct(&records);
    let encoder = match &args.encoder {
        Some(path) => {
            ctx.note_input(path)?;
            Some(load_encoder(path)?)
        }
        None => None,
    };
    let model_paths: Vec<PathBuf> = match args.seeds {
        None => vec![args.model.clone()],
        Some(k) => {
            let template = args.model.display().to_string();
            if !template.contains("{seed}") {
                return Err(CliError::Usage(
                    "--seeds requires a --model path containing \"{seed}\"".into(),
                ));
            }
            ctx.note_param("seeds", k);
            (0..k).map(|s| PathBuf::from(template.replace("{seed}", &s.to_string()))).collect()
        }
    };
    let mut reports = Vec::new();
    for path in &model_paths {
        ctx.note_input(path)?;
        let artifact = PredictorArtifact::load(path).map_err(CliError::runtime)?;
        let preds = score_records(&artifact, encoder.as_ref(), &records)?;
        let report = ranking_report(&preds, &labels)?;
        ctx.progress(&format!(
            "{}: srcc {:.4} kt {:.4} mae {:.4}",
            path.display(),
            report.srcc,
            report.kendall_tau,
            report.mae
        ));
        reports.push(report);
    }
    let value = if reports.len() == 1 {
        serde_json::to_value(&reports[0]).unwrap()
    } else {
        let stat = |get: &dyn Fn(&RankingReport) -> f64| {
            let vals: Vec<f64> = reports.iter().map(get).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var =
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            serde_json::json!({ "mean": mean, "std": var.sqrt() })
        };
        serde_json::json!({
            "seeds": reports.len(),
            "mae": stat(&|r| r.mae),
            "srcc": stat(&|r| r.srcc),
            "kt": stat(&|r| r.kendall_tau),
            "per_seed": reports,
        })
    };
    write_json(&args.out, &value)?;
    ctx.write_manifest("evaluate", &args.out)
}

fn cmd_search(ctx: &mut Ctx, args: &SearchArgs) -> CliResult {
    let index = ctx.resolve(&args.index, "index", 0)?;
    let defaults = SearchConfig::default();
    let config = SearchConfig {
        iterations: ctx.resolve(&args.iterations, "iterations", defaults.iterations)?,
        top_k: ctx.resolve(&args.top_k, "top_k", defaults.top_k)?,
        mutations_per_parent: ctx.resolve(
            &args.mutations_per_parent,
            "mutations_per_parent",
            defaults.mutations_per_parent,
        )?,
        flops_budget: match args.flops_budget {
            Some(b) => {
                ctx.note_param("flops_budget", b);
                Some(b)
            }
            None => None,
        },
        seed: ctx.resolve(&args.seed, "seed", 0)?,
    };
    ctx.note_input(&args.model)?;
    ctx.note_input(&args.input)?;
    let artifact = PredictorArtifact::load(&args.model).map_err(CliError::runtime)?;
    if matches!(artifact, PredictorArtifact::Pairwise { .. }) {
        return Err(CliError::Usage(
            "search needs a pointwise scorer; pairwise models are not supported".into(),
        ));
    }
    let encoder = match &args.encoder {
        Some(path) => {
            ctx.note_input(path)?;
            Some(load_encoder(path)?)
        }
        None => None,
    };
    let records = load_dataset(&args.input)?;
    let seed_record = records
        .get(index)
        .ok_or_else(|| CliError::Usage(format!("--index {index} out of range")))?;
    let mut scorer_error = None;
    let score = |g: &gennape::graph::ComputeGraph| -> f64 {
        let record = DatasetRecord {
            graph: g.clone(),
            accuracy: 0.0,
            flops_g: gennape::graph::compute_flops(g),
        };
        match score_records(&artifact, encoder.as_ref(), std::slice::from_ref(&record)) {
            Ok(s) => s[0],
            Err(e) => {
                scorer_error.get_or_insert(e);
                f64::NEG_INFINITY
            }
        }
    };
    ctx.progress(&format!("searching from {}", seed_record.graph.name()));
    let (best, trajectory) =
        local_search(&seed_record.graph, score, &config).map_err(CliError::runtime)?;
    if let Some(e) = scorer_error {
        return Err(e);
    }
    write_trajectory(manifest_sibling(&args.out, ".trajectory.jsonl"), &trajectory)
        .map_err(CliError::runtime)?;
    let result = serde_json::json!({
        "name": best.graph.name(),
        "score": best.predicted,
        "flops_g": best.flops,
        "graph": gennape::families::record_to_json(&DatasetRecord {
            graph: best.graph.clone(),
            accuracy: 0.0,
            flops_g: best.flops,
        })["graph"],
    });
    write_json(&args.out, &result)?;
    ctx.write_manifest("search", &args.out)
}

fn manifest_sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_gennape(ctx: &mut Ctx, args: &GennapeArgs) -> CliResult {
    let mode = match args.mode.as_str() {
        "zero-shot" => CombineMode::ZeroShot,
        "fine-tuned" => CombineMode::FineTuned,
        other => return Err(CliError::Usage(format!("--mode: unknown mode {other:?}"))),
    };
    ctx.note_param("mode", &args.mode);
    ctx.note_input(&args.input)?;
    let records = load_dataset(&args.input)?;
    let labels = accuracies_pct(&records);
    let encoder = match &args.encoder {
        Some(path) => {
            ctx.note_input(path)?;
            Some(load_encoder(path)?)
        }
        None => None,
    };
    let mut constituents = Vec::new();
    for path in &args.model {
        ctx.note_input(path)?;
        constituents.push(PredictorArtifact::load(path).map_err(CliError::runtime)?);
    }
    let scores: Vec<Vec<f64>> = constituents
        .iter()
        .map(|a| score_records(a, encoder.as_ref(), &records))
        .collect::<CliResult<_>>()?;

    let ft = match (&mode, &args.ft_samples) {
        (CombineMode::FineTuned, Some(path)) => {
            ctx.note_input(path)?;
            let ft_records = load_dataset(path)?;
            let ft_labels = accuracies_pct(&ft_records);
            let ft_scores: Vec<Vec<f64>> = constituents
                .iter()
                .map(|a| score_records(a, encoder.as_ref(), &ft_records))
                .collect::<CliResult<_>>()?;
            Some((ft_scores, ft_labels))
        }
        (CombineMode::FineTuned, None) => {
            return Err(CliError::Usage("--ft-samples is required in fine-tuned mode".into()))
        }
        _ => None,
    };
    let combined = gennape_combine(
        &scores,
        mode,
        ft.as_ref().map(|(s, l)| (s.as_slice(), l.as_slice())),
    )
    .map_err(CliError::runtime)?;
    let report = ranking_report(&combined, &labels)?;
    ctx.progress(&format!("combined srcc {:.4} kt {:.4}", report.srcc, report.kendall_tau));
    let value = serde_json::json!({
        "constituent_count": constituents.len(),
        "scores": records
            .iter()
            .zip(&combined)
            .map(|(r, s)| serde_json::json!({ "name": r.graph.name(), "score": s }))
            .collect::<Vec<_>>(),
        "report": report,
    });
    write_json(&args.out, &value)?;
    ctx.write_manifest("gennape", &args.out)
}

fn run(cli: &Cli) -> CliResult {
    let mut ctx = Ctx::new(&cli.config, cli.quiet)?;
    match &cli.command {
        Command::Gen(args) => cmd_gen(&mut ctx, args),
        Command::Split(args) => cmd_split(&mut ctx, args),
        Command::TrainEncoder(args) => cmd_train_encoder(&mut ctx, args),
        Command::Embed(args) => cmd_embed(&mut ctx, args),
        Command::Cluster(args) => cmd_cluster(&mut ctx, args),
        Command::TrainPredictor(args) => cmd_train_predictor(&mut ctx, args),
        Command::FineTune(args) => cmd_fine_tune(&mut ctx, args),
        Command::Evaluate(args) => cmd_evaluate(&mut ctx, args),
        Command::Search(args) => cmd_search(&mut ctx, args),
        Command::Gennape(args) => cmd_gennape(&mut ctx, args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are not errors
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
