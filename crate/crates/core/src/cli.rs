//! Command-line entry point: `gen`, `train`, `eval`, `ablate-seq` and
//! `ensemble`.
//!
//! Settings come from an optional TOML file (`--config`), overridden by
//! flags. Each command writes its resolved settings to
//! `<out-dir>/<command>.run.toml`, which can be passed back to `--config`
//! to repeat the run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::datagen::{generate, GenConfig};
use crate::dataset::{load_bundle, save_bundle, split_by_week, DatasetBundle, Split, UserId, Week};
use crate::ensemble::write_forest;
use crate::error::{Error, Result};
use crate::factorization::{gamma_from_w, read_model, recommend_with_table, train_mf, write_model, Gamma, Validation};
use crate::history::{read_weights, write_weights, HistoryIndex, HistoryRanker};
use crate::metrics::{read_submission, report, write_submission, RankedList, MAX_LIST_LEN};
use crate::pipeline::{fit_trank, run_ensemble, scores, Components, PipelineConfig, Scores};
use crate::seqrec::{
    build_sequences, histories, read_seq_model, subsample_sequences, train_seq, train_seq_ensemble, write_seq_model,
    SeqEnsemble, SeqEpoch,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

const WEIGHTS_FILE: &str = "w.tsv";
const MF_FILE: &str = "mf.tsv";
const FOREST_FILE: &str = "forest.bin";

fn seq_file(k: usize) -> String {
    format!("seq-{k}.bin")
}

#[derive(Parser, Debug)]
#[command(name = "jobrec", version, about = "Job recommendation: history ranking, hybrid MF, LSTM and ensemble")]
pub struct Cli {
    /// Dataset directory (written by `gen`, read by the other commands) [default: data].
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    /// Directory for checkpoints, reports and resolved configs [default: out].
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML settings file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub deterministic: Option<bool>,
    /// Last training week (default: second to last week of the data).
    #[arg(long, global = true)]
    pub train_end: Option<Week>,
    /// Evaluation week (default: last week of the data).
    #[arg(long, global = true)]
    pub target: Option<Week>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset into --data-dir.
    Gen(GenArgs),
    /// Train one component on weeks <= train_end and score it on the target week.
    Train(TrainArgs),
    /// Score a submission file against the target week.
    Eval(EvalArgs),
    /// Train the sequence model on original and sub-sampled sequences.
    AblateSeq(AblateArgs),
    /// Fit the forest over trained components and write the final submission.
    Ensemble,
}

#[derive(Args, Debug, Default)]
pub struct GenArgs {
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub weeks: Option<u32>,
    /// Per-week decay of the re-interaction hazard.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub sharpness: Option<f64>,
    #[arg(long)]
    pub drift: Option<f64>,
    #[arg(long)]
    pub cold_fraction: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Component {
    Trank,
    Mf,
    Seq,
}

impl Component {
    fn name(self) -> &'static str {
        match self {
            Component::Trank => "trank",
            Component::Mf => "mf",
            Component::Seq => "seq",
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub component: Component,
    /// MF only: weight each week by γ from a TRank checkpoint.
    #[arg(long)]
    pub temporal: bool,
    /// TRank checkpoint for --temporal (default: <out-dir>/w.tsv).
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub impressions: Option<bool>,
    #[arg(long)]
    pub features: Option<bool>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Submission file, `user<TAB>item,item,...` per line.
    #[arg(long)]
    pub predictions: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Comma-separated sub-sampling multipliers; 1 is the original data.
    #[arg(long, value_delimiter = ',')]
    pub multipliers: Option<Vec<usize>>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub multipliers: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { multipliers: vec![1, 2, 4, 8] }
    }
}

/// Resolved settings of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: String,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Copied into every block's seed.
    pub seed: u64,
    pub deterministic: bool,
    pub train_end: Option<Week>,
    pub target: Option<Week>,
    pub gen: GenConfig,
    pub pipeline: PipelineConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            seed: 0,
            deterministic: true,
            train_end: None,
            target: None,
            gen: GenConfig::default(),
            pipeline: PipelineConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// File settings, then flags, then the global seed copied into each block.
    pub fn resolve(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        cfg.command = command_name(&cli.command);
        set(&mut cfg.data_dir, cli.data_dir.clone());
        set(&mut cfg.out_dir, cli.out_dir.clone());
        set(&mut cfg.seed, cli.seed);
        set(&mut cfg.deterministic, cli.deterministic);
        if cli.train_end.is_some() {
            cfg.train_end = cli.train_end;
        }
        if cli.target.is_some() {
            cfg.target = cli.target;
        }
        match &cli.command {
            Command::Gen(a) => {
                let g = &mut cfg.gen;
                set(&mut g.n_users, a.users);
                set(&mut g.n_items, a.items);
                set(&mut g.n_weeks, a.weeks);
                set(&mut g.recency_decay, a.rho);
                set(&mut g.transition_sharpness, a.sharpness);
                set(&mut g.taste_drift, a.drift);
                set(&mut g.cold_fraction, a.cold_fraction);
            }
            Command::Train(a) => {
                let p = &mut cfg.pipeline;
                set(&mut p.mf.use_impressions, a.impressions);
                set(&mut p.mf.use_features, a.features);
                match a.component {
                    Component::Trank => set(&mut p.history.trank.epochs, a.epochs),
                    Component::Mf => set(&mut p.mf.epochs, a.epochs),
                    Component::Seq => set(&mut p.seq.epochs, a.epochs),
                }
            }
            Command::AblateSeq(a) => {
                if let Some(m) = &a.multipliers {
                    cfg.ablation.multipliers = m.clone();
                }
                set(&mut cfg.pipeline.seq.epochs, a.epochs);
            }
            Command::Eval(_) | Command::Ensemble => {}
        }
        cfg.gen.seed = cfg.seed;
        cfg.pipeline = cfg.pipeline.with_seed(cfg.seed);
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn command_name(c: &Command) -> String {
    match c {
        Command::Gen(_) => "gen".into(),
        Command::Train(a) => format!("train-{}", a.component.name()),
        Command::Eval(_) => "eval".into(),
        Command::AblateSeq(_) => "ablate-seq".into(),
        Command::Ensemble => "ensemble".into(),
    }
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::resolve(cli)?;
    create_dir(&cfg.out_dir)?;
    let header = format!("# jobrec {VERSION}\n# seed {}\n", cfg.seed);
    write_file(&cfg.out_dir.join(format!("{}.run.toml", cfg.command)), &(header + &cfg.to_toml()?))?;
    let text = match &cli.command {
        Command::Gen(_) => cmd_gen(&cfg)?,
        Command::Train(a) => cmd_train(&cfg, a)?,
        Command::Eval(a) => cmd_eval(&cfg, &a.predictions)?,
        Command::AblateSeq(_) => cmd_ablate_seq(&cfg)?,
        Command::Ensemble => cmd_ensemble(&cfg)?,
    };
    print!("{text}");
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

/// Writes `<stem>.json` and `<stem>.txt`, and returns the text.
fn emit<T: Serialize>(cfg: &RunConfig, stem: &str, value: &T, text: String) -> Result<String> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::Input(e.to_string()))?;
    write_file(&cfg.out_dir.join(format!("{stem}.json")), &(json + "\n"))?;
    write_file(&cfg.out_dir.join(format!("{stem}.txt")), &text)?;
    Ok(text)
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Input(format!("{what} not found at {}", path.display())))
    }
}

fn load_split(cfg: &RunConfig) -> Result<(DatasetBundle, Split)> {
    if !cfg.data_dir.is_dir() {
        return Err(Error::Input(format!("dataset directory {} not found", cfg.data_dir.display())));
    }
    let bundle = load_bundle(&cfg.data_dir)?;
    let last = bundle.weeks().1;
    let target = cfg.target.unwrap_or(last);
    let train_end = cfg.train_end.unwrap_or(target.saturating_sub(1));
    let split = split_by_week(&bundle, train_end, target)?;
    Ok((bundle, split))
}

fn truth_users(split: &Split) -> Vec<UserId> {
    split.truth.keys().copied().collect()
}

fn fmt_scores(out: &mut String, label: &str, s: &Scores) {
    let _ = writeln!(out, "{label:<16} score_all {:>12.2}  score_new {:>12.2}", s.score_all, s.score_new);
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<String> {
    let bundle = generate(&cfg.gen)?;
    save_bundle(&bundle, &cfg.data_dir)?;
    let (first, last) = bundle.weeks();
    Ok(format!(
        "wrote {} users, {} items, {} interactions, weeks {first}..={last} to {}\n",
        bundle.users().len(),
        bundle.items().len(),
        bundle.interactions().len(),
        cfg.data_dir.display()
    ))
}

#[derive(Serialize)]
struct TrainReport<'a> {
    component: &'a str,
    train_end: Week,
    target: Week,
    scores: Scores,
    #[serde(skip_serializing_if = "Option::is_none")]
    trank_loss: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mf: Option<MfSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seq_best_epochs: Option<Vec<usize>>,
}

#[derive(Serialize)]
struct MfSummary {
    temporal: bool,
    use_features: bool,
    use_impressions: bool,
    best_epoch: usize,
    trace: Vec<crate::factorization::EpochScore>,
}

/// One model of the perplexity trace file.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct SeqTrace {
    pub model: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs: Vec<SeqEpoch>,
}

pub fn cmd_train(cfg: &RunConfig, args: &TrainArgs) -> Result<String> {
    if args.temporal && args.component != Component::Mf {
        return Err(Error::Input("--temporal applies to --component mf only".into()));
    }
    let weights_path = args.weights.clone().unwrap_or_else(|| cfg.out_dir.join(WEIGHTS_FILE));
    if args.temporal {
        require(&weights_path, "TRank checkpoint")?;
    }
    let (_, split) = load_split(cfg)?;
    let users = truth_users(&split);
    let at = split.target_week;
    let p = &cfg.pipeline;
    let mut rep = TrainReport {
        component: args.component.name(),
        train_end: split.train.weeks().1,
        target: at,
        scores: Scores { score_all: 0.0, score_new: 0.0 },
        trank_loss: None,
        mf: None,
        seq_best_epochs: None,
    };
    let mut text = String::new();
    let preds: Vec<RankedList> = match args.component {
        Component::Trank => {
            let (index, fit) = fit_trank(&split.train, &p.history)?;
            write_weights(cfg.out_dir.join(WEIGHTS_FILE), &fit.weights)?;
            let ranker = HistoryRanker::TRank(fit.weights.clone());
            let lags = fit.weights.lags();
            let _ = writeln!(text, "TRank objective {:.6} -> {:.6}", fit.loss_trace[0], fit.loss_trace[fit.loss_trace.len() - 1]);
            rep.trank_loss = Some(fit.loss_trace);
            users.iter().map(|&u| ranker.recommend(&index, u, at, lags, MAX_LIST_LEN)).collect()
        }
        Component::Mf => {
            let gamma = if args.temporal {
                let w = read_weights::<f64>(&weights_path)?;
                Gamma::PerWeek(gamma_from_w(&w, split.train.weeks().1))
            } else {
                Gamma::Uniform
            };
            let valid = Validation::new(&split.train, split.truth.clone());
            let fit = train_mf::<f32>(&split.train, &p.mf, &gamma, Some(&valid))?;
            write_model(cfg.out_dir.join(MF_FILE), &fit.model)?;
            for e in &fit.trace {
                let _ = writeln!(text, "epoch {:>3}  score_all {:>12.2}  score_new {:>12.2}", e.epoch, e.score_all, e.score_new);
            }
            let _ = writeln!(text, "best epoch {}", fit.best_epoch);
            let table = fit.model.item_table();
            let active = split.train.active_items();
            let preds = users.iter().map(|&u| recommend_with_table(&fit.model, &table, u, &active, MAX_LIST_LEN)).collect();
            rep.mf = Some(MfSummary {
                temporal: args.temporal,
                use_features: p.mf.use_features,
                use_impressions: p.mf.use_impressions,
                best_epoch: fit.best_epoch,
                trace: fit.trace,
            });
            preds
        }
        Component::Seq => {
            let (ens, fits) = train_seq_ensemble::<f32>(&split.train, &build_sequences(&split.train), &p.seq)?;
            remove_seq_files(&cfg.out_dir)?;
            for (k, m) in ens.models.iter().enumerate() {
                write_seq_model(cfg.out_dir.join(seq_file(k)), m)?;
            }
            let traces: Vec<SeqTrace> = fits
                .iter()
                .enumerate()
                .map(|(k, f)| SeqTrace { model: k, seed: p.seq.seed + k as u64, best_epoch: f.best_epoch, epochs: f.trace.clone() })
                .collect();
            let json = serde_json::to_string_pretty(&traces).map_err(|e| Error::Input(e.to_string()))?;
            write_file(&cfg.out_dir.join("seq-trace.json"), &(json + "\n"))?;
            for t in &traces {
                for e in &t.epochs {
                    let _ = writeln!(
                        text,
                        "model {} epoch {:>3}  lr {:.4}  train ppl {:>10.2}  dev ppl {:>10.2}",
                        t.model, e.epoch, e.lr, e.train_perplexity, e.dev_perplexity
                    );
                }
            }
            rep.seq_best_epochs = Some(fits.iter().map(|f| f.best_epoch).collect());
            ens.predict(&users, &histories(&split.train), &split.train.active_items(), MAX_LIST_LEN)
        }
    };
    rep.scores = scores(&preds, &split.truth, &split.train)?;
    fmt_scores(&mut text, &format!("{} week {at}", args.component.name()), &rep.scores);
    emit(cfg, &format!("train-{}-report", args.component.name()), &rep, text)
}

fn remove_seq_files(dir: &Path) -> Result<()> {
    let mut k = 0;
    loop {
        let path = dir.join(seq_file(k));
        if !path.exists() {
            return Ok(());
        }
        fs::remove_file(&path).map_err(|e| Error::Io { path, source: e })?;
        k += 1;
    }
}

pub fn cmd_eval(cfg: &RunConfig, predictions: &Path) -> Result<String> {
    require(predictions, "predictions file")?;
    let preds = read_submission(predictions)?;
    let (_, split) = load_split(cfg)?;
    let rep = report(&preds, &split.truth, &split.train.interaction_history())?;
    let mut text = format!("week {} ({} truth users)\n", split.target_week, rep.users);
    let _ = writeln!(text, "score_all     {:.4}\nscore_new     {:.4}", rep.score_all, rep.score_new);
    let mut precision: Vec<(&String, &f64)> = rep.precision.iter().collect();
    precision.sort_by_key(|(k, _)| k.trim_start_matches("P@").parse::<usize>().unwrap_or(usize::MAX));
    for (k, v) in precision {
        let _ = writeln!(text, "{k:<13} {v:.6}");
    }
    let _ = writeln!(text, "recall        {:.6}\nuser_success  {:.6}", rep.recall, rep.user_success);
    emit(cfg, "eval-report", &rep, text)
}

/// One row of the sub-sampling table.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct AblationRow {
    /// `orig` or `x<N>`.
    pub label: String,
    pub multiplier: usize,
    pub sequences: usize,
    pub tokens: usize,
    pub best_dev_perplexity: f64,
    pub scores: Scores,
}

pub fn cmd_ablate_seq(cfg: &RunConfig) -> Result<String> {
    let mut mults = vec![1];
    for &n in &cfg.ablation.multipliers {
        if n == 0 {
            return Err(Error::Config("multipliers must be >= 1".into()));
        }
        if !mults.contains(&n) {
            mults.push(n);
        }
    }
    let (_, split) = load_split(cfg)?;
    let users = truth_users(&split);
    let original = build_sequences(&split.train);
    let hist = histories(&split.train);
    let active = split.train.active_items();
    let mut rows = Vec::new();
    let mut text = format!("{:<6} {:>9} {:>9} {:>10} {:>12} {:>12}\n", "data", "seqs", "tokens", "dev ppl", "score_all", "score_new");
    for n in mults {
        let seqs =
            if n == 1 { original.clone() } else { subsample_sequences(&original, n, 1.0 / n as f64, cfg.seed)? };
        let fit = train_seq::<f32>(&split.train, &seqs, &cfg.pipeline.seq)?;
        let best = fit.trace.iter().map(|e| e.dev_perplexity).fold(f64::INFINITY, f64::min);
        let preds = SeqEnsemble::new(vec![fit.model])?.predict(&users, &hist, &active, MAX_LIST_LEN);
        let row = AblationRow {
            label: if n == 1 { "orig".into() } else { format!("x{n}") },
            multiplier: n,
            sequences: seqs.len(),
            tokens: seqs.iter().map(|s| s.items.len()).sum(),
            best_dev_perplexity: best,
            scores: scores(&preds, &split.truth, &split.train)?,
        };
        let _ = writeln!(
            text,
            "{:<6} {:>9} {:>9} {:>10.2} {:>12.2} {:>12.2}",
            row.label, row.sequences, row.tokens, row.best_dev_perplexity, row.scores.score_all, row.scores.score_new
        );
        rows.push(row);
    }
    emit(cfg, "ablate-seq", &rows, text)
}

/// Loads the checkpoints written by `train` for all three components.
pub fn load_components(out_dir: &Path, train: DatasetBundle) -> Result<Components> {
    let w_path = out_dir.join(WEIGHTS_FILE);
    let mf_path = out_dir.join(MF_FILE);
    let seq_path = out_dir.join(seq_file(0));
    require(&w_path, "TRank checkpoint")?;
    require(&mf_path, "MF checkpoint")?;
    require(&seq_path, "sequence model checkpoint")?;
    let weights = read_weights::<f64>(&w_path)?;
    let mf = read_model::<f32>(&mf_path, &train)?;
    let mut models = Vec::new();
    while out_dir.join(seq_file(models.len())).is_file() {
        models.push(read_seq_model::<f32>(out_dir.join(seq_file(models.len())), &train)?);
    }
    let index = HistoryIndex::new(&train);
    Ok(Components { train, index, weights, mf, seq: SeqEnsemble::new(models)? })
}

type Metric = (&'static str, fn(&Scores) -> f64);
const METRICS: [Metric; 2] = [("score_all", |s| s.score_all), ("score_new", |s| s.score_new)];

pub fn cmd_ensemble(cfg: &RunConfig) -> Result<String> {
    let (bundle, split) = load_split(cfg)?;
    let train_end = split.train.weeks().1;
    let comps = load_components(&cfg.out_dir, split.train)?;
    let run = run_ensemble(&bundle, train_end, split.target_week, &cfg.pipeline, Some(comps))?;
    write_forest(cfg.out_dir.join(FOREST_FILE), &run.forest)?;
    write_submission(cfg.out_dir.join("ensemble-submission.tsv"), &run.predictions)?;
    let rep = &run.report;
    let mut text = String::new();
    for table in [&rep.target, &rep.supervision] {
        let cols: Vec<&str> =
            ["History", "MF", "LSTM", "Linear fusion", "Ensemble"].into_iter().filter(|c| table.rows.contains_key(*c)).collect();
        let _ = write!(text, "{:<10}", format!("week {}", table.week));
        for c in &cols {
            let _ = write!(text, " {c:>14}");
        }
        text.push('\n');
        for (name, get) in METRICS {
            let _ = write!(text, "{name:<10}");
            for c in &cols {
                let _ = write!(text, " {:>14.2}", get(&table.rows[*c]));
            }
            text.push('\n');
        }
        text.push('\n');
    }
    let _ = writeln!(text, "fusion weights {:?}", rep.fusion_weights);
    emit(cfg, "ensemble-report", rep, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("jobrec").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn defaults_without_file_or_flags() {
        let cfg = RunConfig::resolve(&parse(&["gen"])).unwrap();
        assert_eq!(cfg.command, "gen");
        assert_eq!(cfg.data_dir, PathBuf::from("data"));
        assert_eq!(cfg.out_dir, PathBuf::from("out"));
        assert_eq!(cfg.gen.n_users, GenConfig::default().n_users);
        assert!(cfg.deterministic);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut file = RunConfig::default();
        file.gen.n_users = 111;
        file.gen.n_items = 222;
        file.seed = 5;
        let path = dir.path().join("c.toml");
        fs::write(&path, file.to_toml().unwrap()).unwrap();
        let p = path.to_str().unwrap();
        let cfg = RunConfig::resolve(&parse(&["--config", p, "gen", "--users", "333"])).unwrap();
        assert_eq!(cfg.gen.n_users, 333);
        assert_eq!(cfg.gen.n_items, 222);
        assert_eq!(cfg.seed, 5);
        let cfg = RunConfig::resolve(&parse(&["--config", p, "--seed", "9", "gen"])).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.gen.seed, 9);
    }

    #[test]
    fn global_seed_reaches_every_block() {
        let cfg = RunConfig::resolve(&parse(&["train", "--component", "seq", "--seed", "42", "--epochs", "3"])).unwrap();
        let p = &cfg.pipeline;
        assert_eq!(cfg.gen.seed, 42);
        assert_eq!([p.history.trank.seed, p.mf.seed, p.seq.seed, p.forest.seed], [42; 4]);
        assert_eq!(p.seq.epochs, 3);
        assert_eq!(p.mf.epochs, PipelineConfig::default().mf.epochs);
        assert_eq!(cfg.command, "train-seq");
    }

    #[test]
    fn toml_round_trip() {
        let cli = parse(&["ablate-seq", "--multipliers", "2,3", "--train-end", "7", "--target", "8", "--seed", "4"]);
        let cfg = RunConfig::resolve(&cli).unwrap();
        assert_eq!(cfg.ablation.multipliers, vec![2, 3]);
        assert_eq!((cfg.train_end, cfg.target), (Some(7), Some(8)));
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml("seed = 3\n[gen]\nn_users = 10\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.gen.n_users, 10);
        assert_eq!(cfg.gen.n_items, GenConfig::default().n_items);
        assert_eq!(cfg.pipeline, PipelineConfig::default());
    }

    #[test]
    fn bad_toml_is_config_error() {
        let err = RunConfig::from_toml("seed = \"x\"").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.is_usage());
    }

    #[test]
    fn deterministic_flag_forms() {
        assert_eq!(parse(&["gen", "--deterministic"]).deterministic, Some(true));
        assert_eq!(parse(&["gen", "--deterministic", "false"]).deterministic, Some(false));
        assert_eq!(parse(&["gen"]).deterministic, None);
    }

    #[test]
    fn temporal_needs_mf() {
        let dir = tempfile::tempdir().unwrap();
        let cli = parse(&["--out-dir", dir.path().to_str().unwrap(), "train", "--component", "seq", "--temporal"]);
        let cfg = RunConfig::resolve(&cli).unwrap();
        let Command::Train(a) = &cli.command else { unreachable!() };
        assert!(matches!(cmd_train(&cfg, a), Err(Error::Input(_))));
    }

    #[test]
    fn missing_inputs_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        let cli = parse(&["--out-dir", d, "--data-dir", d, "train", "--component", "mf", "--temporal"]);
        let err = run(&cli).unwrap_err();
        assert!(err.is_usage(), "{err}");
        let err = run(&parse(&["--out-dir", d, "--data-dir", "/nonexistent/x", "ensemble"])).unwrap_err();
        assert!(err.is_usage(), "{err}");
    }

    #[test]
    fn run_writes_resolved_config() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let data = d.join("data");
        let cli = parse(&[
            "--out-dir",
            d.to_str().unwrap(),
            "--data-dir",
            data.to_str().unwrap(),
            "--seed",
            "11",
            "gen",
            "--users",
            "40",
            "--items",
            "30",
            "--weeks",
            "4",
        ]);
        run(&cli).unwrap();
        let text = fs::read_to_string(d.join("gen.run.toml")).unwrap();
        assert!(text.starts_with(&format!("# jobrec {VERSION}\n# seed 11\n")));
        let cfg = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.gen.n_users, 40);
        assert_eq!(cfg.gen.seed, 11);
        assert!(data.is_dir());
    }

    #[test]
    fn zero_multiplier_rejected() {
        let cfg = RunConfig { ablation: AblationConfig { multipliers: vec![0] }, ..RunConfig::default() };
        assert!(matches!(cmd_ablate_seq(&cfg), Err(Error::Config(_))));
    }
}
