//! Command-line surface. Every subcommand is scriptable and deterministic
//! under its explicit seed; outputs are written atomically and failures
//! print a single machine-parseable line on stderr.
//!
//! Exit codes: 0 success, 2 usage, 3 data format, 4 numeric failure, 5 I/O.

pub mod io;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::aggregate::{self, FitConfig, SentencePrediction};
use crate::dist::{LabelScale, NUM_CLASSES};
use crate::metrics;
use crate::neural::{
    self, load_embedding_file, load_model, LossMode, TrainConfig,
};
use crate::preprocess::{EmojiClusterTable, LemmaTable, Pipeline, RuleDictionary};
use crate::stack::{
    self, rfe_select, train_logistic, train_mlp, FeatureGroup, FeatureSchema, LogisticConfig,
    MlpConfig, RfeConfig, RfeMode, RfeTarget,
};
use crate::tasks::workflows::{
    task_a_run, task_bd_run, task_ce_run, TScope, TaskAConfig, TaskBdConfig, TaskCeConfig,
};
use crate::tasks::{self, MatchConfig, ThresholdScope};
use crate::treebank::{parse_ptb, Treebank, TreebankError};

use io::{fmt_f64, write_atomic};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl From<TreebankError> for CliError {
    fn from(e: TreebankError) -> Self {
        match e {
            TreebankError::File { .. } => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<crate::preprocess::PreprocessError> for CliError {
    fn from(e: crate::preprocess::PreprocessError) -> Self {
        match e {
            crate::preprocess::PreprocessError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<neural::NeuralError> for CliError {
    fn from(e: neural::NeuralError) -> Self {
        match e {
            neural::NeuralError::Io(_) => CliError::Io(e.to_string()),
            neural::NeuralError::NonFinite(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<crate::aggregate::AggregateError> for CliError {
    fn from(e: crate::aggregate::AggregateError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<stack::StackError> for CliError {
    fn from(e: stack::StackError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<tasks::TaskError> for CliError {
    fn from(e: tasks::TaskError) -> Self {
        match e {
            tasks::TaskError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<metrics::MetricError> for CliError {
    fn from(e: metrics::MetricError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<crate::dist::DistError> for CliError {
    fn from(e: crate::dist::DistError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "sentitree",
    version,
    about = "Entity-aware tree-LSTM sentiment pipeline",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize raw tweets into token lines.
    Preprocess(PreprocessArgs),
    /// Train the tree-LSTM on a labeled treebank.
    TrainTree(TrainTreeArgs),
    /// Annotate trees with a trained model and emit root distributions.
    PredictTree(PredictTreeArgs),
    /// Fit the sentence-aggregation exponents against gold tweet labels.
    AggregateFit(AggregateFitArgs),
    /// Train a stacking meta-classifier over model distributions.
    StackTrain(StackTrainArgs),
    /// Recursive feature elimination over model groups.
    Rfe(RfeArgs),
    /// 3-class classification with train/test distribution matching.
    TaskA(TaskAArgs),
    /// Entity-level binary classification.
    TaskB(TaskBArgs),
    /// Entity-level 5-class classification.
    TaskC(TaskCArgs),
    /// Entity-level binary quantification (Beta posterior means).
    TaskD(TaskBArgs),
    /// Entity-level 5-class quantification.
    TaskE(TaskCArgs),
    /// Score predictions or quantifications against gold data.
    Evaluate(EvaluateArgs),
    /// Verify analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    /// Raw tweets, one per line.
    #[arg(long)]
    input: PathBuf,
    /// Output token lines (space separated).
    #[arg(long)]
    output: PathBuf,
    /// Replacement dictionary TSV: pattern, replacement, literal|regex.
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Emoji cluster TSV: emoji, cluster keyword.
    #[arg(long)]
    emoji: Option<PathBuf>,
    /// Lemma TSV: word, lemma.
    #[arg(long)]
    lemmas: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum SupervisionArg {
    AllNodes,
    RootOnly,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum OptimizerArg {
    Adagrad,
    Sgd,
}

#[derive(Args)]
struct TrainTreeArgs {
    /// Labeled treebank, one s-expression per line.
    #[arg(long)]
    treebank: PathBuf,
    /// Model JSON output path.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Embedding dimension.
    #[arg(long, default_value_t = 25)]
    dim: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.0)]
    l2: f64,
    #[arg(long, value_enum, default_value_t = SupervisionArg::AllNodes)]
    supervision: SupervisionArg,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adagrad)]
    optimizer: OptimizerArg,
    /// Pre-trained embedding file (`word v1 .. vd` lines).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Held-out treebank for best-epoch selection.
    #[arg(long)]
    validation: Option<PathBuf>,
}

#[derive(Args)]
struct PredictTreeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Trees: either `id<TAB>s-expression` lines or a plain treebank.
    #[arg(long)]
    trees: PathBuf,
    /// Output TSV: id, p0..p4, known fraction, token count.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct AggregateFitArgs {
    /// Sentence rows from predict-tree, ids shared per tweet.
    #[arg(long)]
    sentences: PathBuf,
    /// Gold tweet labels: `id<TAB>label` with labels -2..=2.
    #[arg(long)]
    gold: PathBuf,
    /// Output JSON with the fitted exponents.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Comma-separated per-axis grid values; the first entry is the
    /// tie-break origin.
    #[arg(long)]
    grid: Option<String>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum StackKind {
    Logistic,
    Mlp,
}

#[derive(Args)]
struct StackTrainArgs {
    /// Dataset TSV with gold labels.
    #[arg(long)]
    dataset: PathBuf,
    /// Per-model distribution TSVs; order defines the feature groups.
    #[arg(long = "dists", required = true)]
    dists: Vec<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = StackKind::Logistic)]
    kind: StackKind,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum RfeModeArg {
    Group,
    Column,
}

#[derive(Args)]
struct RfeArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long = "dists", required = true)]
    dists: Vec<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Number of groups to keep, or "auto" for best validation recall.
    #[arg(long, default_value = "auto")]
    target: String,
    #[arg(long, value_enum, default_value_t = RfeModeArg::Group)]
    mode: RfeModeArg,
    #[arg(long, default_value_t = 3)]
    folds: usize,
}

#[derive(Args)]
struct TaskAArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    train_dists: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    test_dists: PathBuf,
    /// Predictions TSV output.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    max_iters: usize,
    #[arg(long, default_value_t = 0.02)]
    tolerance: f64,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ThresholdScopeArg {
    Global,
    Entity,
}

#[derive(Args)]
struct TaskBArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    train_dists: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    test_dists: PathBuf,
    /// Predictions TSV (task B) or quantification TSV (task D).
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Beta prior concentration.
    #[arg(long, default_value_t = 10.0)]
    kappa: f64,
    #[arg(long, value_enum, default_value_t = ThresholdScopeArg::Global)]
    threshold_scope: ThresholdScopeArg,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum TScopeArg {
    Entity,
    Global,
}

#[derive(Args)]
struct TaskCArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    train_dists: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    test_dists: PathBuf,
    /// Predictions TSV (task C) or quantification TSV (task E).
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Bootstrap resamples per entity.
    #[arg(long, default_value_t = 100)]
    resamples: usize,
    #[arg(long, value_enum, default_value_t = TScopeArg::Entity)]
    t_scope: TScopeArg,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    MacroRecall,
    Accuracy,
    MacroMae,
    Kld,
    Emd,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Gold data: dataset TSV or predictions TSV for label metrics,
    /// quantification TSV for kld/emd.
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, value_enum)]
    metric: MetricArg,
    /// Additive smoothing for kld.
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    /// Optional JSON output file (the result always prints to stdout).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    seed: u64,
    /// Embedding dimensions to exercise; repeat for several.
    #[arg(long = "dim", default_values_t = vec![2usize])]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
}

/// Parses argv and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests exit 0; real usage errors exit 2.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    main_with_args(std::env::args_os())
}

fn thread_cap() -> usize {
    std::env::var("SENTITREE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Preprocess(args) => preprocess_cmd(args),
        Command::TrainTree(args) => train_tree_cmd(args),
        Command::PredictTree(args) => predict_tree_cmd(args),
        Command::AggregateFit(args) => aggregate_fit_cmd(args),
        Command::StackTrain(args) => stack_train_cmd(args),
        Command::Rfe(args) => rfe_cmd(args),
        Command::TaskA(args) => task_a_cmd(args),
        Command::TaskB(args) => task_b_cmd(args, false),
        Command::TaskD(args) => task_b_cmd(args, true),
        Command::TaskC(args) => task_c_cmd(args, false),
        Command::TaskE(args) => task_c_cmd(args, true),
        Command::Evaluate(args) => evaluate_cmd(args),
        Command::Gradcheck(args) => gradcheck_cmd(args),
    }
}

fn preprocess_cmd(args: PreprocessArgs) -> Result<(), CliError> {
    let pipeline = Pipeline {
        dict: args.dict.as_deref().map(|p| RuleDictionary::load(p, false)).transpose()?,
        emoji: args.emoji.as_deref().map(EmojiClusterTable::load).transpose()?,
        lemmas: args.lemmas.as_deref().map(LemmaTable::load).transpose()?,
    };
    let text = io::read_to_string(&args.input)?;
    let mut out = String::new();
    for line in text.lines() {
        let tokens = pipeline.run(line);
        let words: Vec<&str> = tokens.iter().map(|t| t.effective()).collect();
        out.push_str(&words.join(" "));
        out.push('\n');
    }
    write_atomic(&args.output, &out)
}

fn train_tree_cmd(args: TrainTreeArgs) -> Result<(), CliError> {
    let bank = Treebank::load(&args.treebank)?;
    let validation = args.validation.as_deref().map(Treebank::load).transpose()?;
    let hyper = neural::Hyper::new(args.dim)?;
    let pretrained = args
        .embeddings
        .as_deref()
        .map(|p| load_embedding_file(p, args.dim))
        .transpose()?;
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        l2: args.l2,
        seed: args.seed,
        mode: match args.supervision {
            SupervisionArg::AllNodes => LossMode::AllLabeledNodes,
            SupervisionArg::RootOnly => LossMode::RootOnly,
        },
        optimizer: match args.optimizer {
            OptimizerArg::Adagrad => neural::OptimizerKind::AdaGrad,
            OptimizerArg::Sgd => neural::OptimizerKind::Sgd,
        },
        threads: thread_cap(),
    };
    let report = neural::train(&bank, validation.as_ref(), hyper, &config, pretrained.as_ref())?;
    let json = serde_json::to_string(&serde_json::json!({
        "seed": args.seed,
        "dim": args.dim,
        "epochs": args.epochs,
        "best_epoch": report.best_epoch,
        "final_eval_loss": report.history.last().map(|s| s.eval_loss),
        "final_eval_accuracy": report.history.last().map(|s| s.eval_accuracy),
    }))
    .expect("summary is serializable");

    // Persist through the library writer for the versioned format, via a
    // temp file so failures leave no partial model.
    let tmp_dir = args
        .output
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(tmp_dir)
        .map_err(|e| CliError::Io(format!("creating temp file: {e}")))?;
    neural::save_model(tmp.path(), &report.params)?;
    tmp.persist(&args.output)
        .map_err(|e| CliError::Io(format!("renaming into {}: {e}", args.output.display())))?;
    println!("{json}");
    Ok(())
}

fn predict_tree_cmd(args: PredictTreeArgs) -> Result<(), CliError> {
    let params = load_model(&args.model)?;
    let text = io::read_to_string(&args.trees)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, sexp) = match line.split_once('\t') {
            Some((id, sexp)) => (id.to_string(), sexp),
            None => ((i + 1).to_string(), line),
        };
        let tree = parse_ptb(sexp)
            .map_err(|e| CliError::Data(format!("{} line {}: {e}", args.trees.display(), i + 1)))?;
        let annotated = neural::forward(&tree, &params)?;
        rows.push((
            id,
            annotated.prediction().clone(),
            annotated.known_fraction(&params),
            annotated.leaf_count(),
        ));
    }
    let mut out = String::new();
    for (id, dist, fraction, length) in rows {
        out.push_str(&id);
        for c in 0..NUM_CLASSES {
            out.push('\t');
            out.push_str(&fmt_f64(dist.prob(c)));
        }
        out.push('\t');
        out.push_str(&fmt_f64(fraction));
        out.push('\t');
        out.push_str(&length.to_string());
        out.push('\n');
    }
    write_atomic(&args.output, &out)
}

fn aggregate_fit_cmd(args: AggregateFitArgs) -> Result<(), CliError> {
    let text = io::read_to_string(&args.sentences)?;
    let rows = io::parse_sentence_rows(&text, &args.sentences)?;
    let gold_text = io::read_to_string(&args.gold)?;
    let mut gold: BTreeMap<String, u8> = BTreeMap::new();
    for (i, line) in gold_text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((id, label)) = line.split_once('\t') else {
            return Err(CliError::Data(format!(
                "{} line {}: want id<TAB>label",
                args.gold.display(),
                i + 1
            )));
        };
        let label: i8 = label.parse().map_err(|_| {
            CliError::Data(format!("{} line {}: bad label", args.gold.display(), i + 1))
        })?;
        gold.insert(id.to_string(), io::label_to_class(label)?);
    }

    let mut grouped: BTreeMap<String, Vec<SentencePrediction>> = BTreeMap::new();
    for (id, dist, fraction, length) in rows {
        let pred = SentencePrediction::new(dist, fraction, length)?;
        grouped.entry(id).or_default().push(pred);
    }
    let tweets: Vec<(Vec<SentencePrediction>, usize)> = grouped
        .into_iter()
        .map(|(id, preds)| {
            let label = gold
                .get(&id)
                .copied()
                .ok_or_else(|| CliError::Data(format!("no gold label for tweet {id:?}")))?;
            Ok((preds, label as usize))
        })
        .collect::<Result<_, CliError>>()?;

    let mut config = FitConfig::default();
    if let Some(spec) = &args.grid {
        let values: Result<Vec<f64>, _> = spec.split(',').map(|v| v.trim().parse()).collect();
        let values =
            values.map_err(|_| CliError::Usage(format!("bad --grid value in {spec:?}")))?;
        if values.is_empty() {
            return Err(CliError::Usage("--grid needs at least one value".into()));
        }
        config.grid = values;
    }
    let (params, objective) = aggregate::fit_params(&tweets, &config)?;
    if !objective.is_finite() {
        return Err(CliError::Numeric("aggregation objective is not finite".into()));
    }
    let json = serde_json::json!({
        "version": 1,
        "seed": args.seed,
        "alpha": params.alpha,
        "beta": params.beta,
        "gamma": params.gamma,
        "objective": objective,
    });
    write_atomic(&args.output, &format!("{json}\n"))?;
    println!("{json}");
    Ok(())
}

/// Feature rows for stacking: one distribution block per dists file, then
/// the flags block.
fn stacking_rows(
    dataset: &Path,
    dist_files: &[PathBuf],
) -> Result<(Vec<(ndarray::Array1<f64>, i64)>, FeatureSchema), CliError> {
    let records = tasks::load_dataset(dataset)?;
    let mut all_dists = Vec::with_capacity(dist_files.len());
    for file in dist_files {
        all_dists.push(tasks::load_dists(file)?);
    }
    let mut groups: Vec<FeatureGroup> = dist_files
        .iter()
        .map(|p| {
            FeatureGroup::ModelDist(
                p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            )
        })
        .collect();
    groups.push(FeatureGroup::Flags);
    let schema = FeatureSchema { groups };

    let mut rows = Vec::with_capacity(records.len());
    for record in &records {
        let gold = record.gold.ok_or_else(|| {
            CliError::Data(format!("record {:?} has no gold label", record.id))
        })?;
        let mut values = Vec::with_capacity(schema.width());
        for dists in &all_dists {
            let dist = dists.get(&record.id).ok_or_else(|| {
                CliError::Data(format!("no distribution for record {:?}", record.id))
            })?;
            values.extend_from_slice(dist.probs());
        }
        values.extend_from_slice(&record.flags.unwrap_or_default().to_values());
        rows.push((ndarray::Array1::from(values), gold as i64));
    }
    Ok((rows, schema))
}

fn stack_train_cmd(args: StackTrainArgs) -> Result<(), CliError> {
    let (rows, schema) = stacking_rows(&args.dataset, &args.dists)?;
    let json = match args.kind {
        StackKind::Logistic => {
            let mut model = train_logistic(&rows, &LogisticConfig::default())?;
            model.schema = Some(schema);
            serde_json::json!({
                "version": 1,
                "kind": "logistic",
                "seed": args.seed,
                "model": model,
            })
        }
        StackKind::Mlp => {
            let mlp_rows: Vec<(ndarray::Array1<f64>, usize)> =
                rows.iter().map(|(x, y)| (x.clone(), *y as usize)).collect();
            let config = MlpConfig {
                hidden: args.hidden,
                learning_rate: args.learning_rate,
                epochs: args.epochs,
                batch_size: 16,
                seed: args.seed,
            };
            let mut model = train_mlp(&mlp_rows, &config)?;
            model.schema = Some(schema);
            serde_json::json!({
                "version": 1,
                "kind": "mlp",
                "seed": args.seed,
                "model": model,
            })
        }
    };
    write_atomic(&args.output, &format!("{json}\n"))
}

fn rfe_cmd(args: RfeArgs) -> Result<(), CliError> {
    let (rows, schema) = stacking_rows(&args.dataset, &args.dists)?;
    let target = match args.target.as_str() {
        "auto" => RfeTarget::Auto,
        n => RfeTarget::Count(n.parse().map_err(|_| {
            CliError::Usage(format!("--target must be a count or \"auto\", got {n:?}"))
        })?),
    };
    let config = RfeConfig {
        logistic: LogisticConfig::default(),
        folds: args.folds,
        seed: args.seed,
        mode: match args.mode {
            RfeModeArg::Group => RfeMode::Group,
            RfeModeArg::Column => RfeMode::Column,
        },
    };
    let selection = rfe_select(&rows, &schema, target, &config)?;
    let kept_names: Vec<String> = match config.mode {
        RfeMode::Group => selection.kept.iter().map(|&g| schema.groups[g].name()).collect(),
        RfeMode::Column => selection.kept.iter().map(|c| format!("col{c}")).collect(),
    };
    let history: Vec<serde_json::Value> = selection
        .history
        .iter()
        .map(|(set, score)| {
            serde_json::json!({ "surviving": set, "validation_macro_recall": score })
        })
        .collect();
    let json = serde_json::json!({
        "version": 1,
        "seed": args.seed,
        "kept": selection.kept,
        "kept_names": kept_names,
        "history": history,
    });
    write_atomic(&args.output, &format!("{json}\n"))?;
    println!("{json}");
    Ok(())
}

fn task_a_cmd(args: TaskAArgs) -> Result<(), CliError> {
    let train = tasks::load_dataset(&args.train)?;
    let train_dists = tasks::load_dists(&args.train_dists)?;
    let test = tasks::load_dataset(&args.test)?;
    let test_dists = tasks::load_dists(&args.test_dists)?;
    let config = TaskAConfig {
        matching: MatchConfig {
            max_iters: args.max_iters,
            tolerance: args.tolerance,
            seed: args.seed,
            logistic: LogisticConfig::default(),
        },
    };
    let preds = task_a_run(&train, &train_dists, &test, &test_dists, &config)?;
    let rows: Vec<(String, Option<String>, u8)> =
        preds.into_iter().map(|p| (p.id, p.entity, p.class)).collect();
    write_atomic(&args.output, &io::render_predictions(&rows))?;
    eprintln!("task-a: seed {} wrote {}", args.seed, args.output.display());
    Ok(())
}

fn task_b_cmd(args: TaskBArgs, quantify: bool) -> Result<(), CliError> {
    let train = tasks::load_dataset(&args.train)?;
    let train_dists = tasks::load_dists(&args.train_dists)?;
    let test = tasks::load_dataset(&args.test)?;
    let test_dists = tasks::load_dists(&args.test_dists)?;
    let config = TaskBdConfig {
        kappa: args.kappa,
        threshold_scope: match args.threshold_scope {
            ThresholdScopeArg::Global => ThresholdScope::Global,
            ThresholdScopeArg::Entity => ThresholdScope::PerEntity,
        },
        logistic: LogisticConfig::default(),
    };
    let out = task_bd_run(&train, &train_dists, &test, &test_dists, &config)?;
    if quantify {
        let quants: BTreeMap<String, f64> =
            out.posteriors.iter().map(|(e, p)| (e.clone(), p.mean())).collect();
        write_atomic(&args.output, &io::render_binary_quantification(&quants))?;
    } else {
        // Binary labels map to the positive/negative slots of the scale.
        let rows: Vec<(String, Option<String>, u8)> = out
            .predictions
            .iter()
            .map(|p| (p.id.clone(), Some(p.entity.clone()), if p.positive { 3 } else { 1 }))
            .collect();
        write_atomic(&args.output, &io::render_predictions(&rows))?;
    }
    eprintln!(
        "task-{}: seed {} wrote {}",
        if quantify { "d" } else { "b" },
        args.seed,
        args.output.display()
    );
    Ok(())
}

fn task_c_cmd(args: TaskCArgs, quantify: bool) -> Result<(), CliError> {
    let train = tasks::load_dataset(&args.train)?;
    let train_dists = tasks::load_dists(&args.train_dists)?;
    let test = tasks::load_dataset(&args.test)?;
    let test_dists = tasks::load_dists(&args.test_dists)?;
    let config = TaskCeConfig {
        resamples: args.resamples,
        seed: args.seed,
        t_scope: match args.t_scope {
            TScopeArg::Entity => TScope::Entity,
            TScopeArg::Global => TScope::Global,
        },
        logistic: LogisticConfig::default(),
    };
    let out = task_ce_run(&train, &train_dists, &test, &test_dists, &config)?;
    if quantify {
        write_atomic(&args.output, &io::render_quantification(&out.quantification))?;
    } else {
        let rows: Vec<(String, Option<String>, u8)> = out
            .predictions
            .iter()
            .map(|p| (p.id.clone(), p.entity.clone(), p.class))
            .collect();
        write_atomic(&args.output, &io::render_predictions(&rows))?;
    }
    eprintln!(
        "task-{}: seed {} wrote {}",
        if quantify { "e" } else { "c" },
        args.seed,
        args.output.display()
    );
    Ok(())
}

fn sniff_columns(text: &str) -> usize {
    text.lines()
        .find(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| l.split('\t').count())
        .unwrap_or(0)
}

/// Gold labels from either a 5-column dataset TSV or a 3-column predictions
/// TSV.
fn load_gold_labels(path: &Path) -> Result<BTreeMap<String, u8>, CliError> {
    let text = io::read_to_string(path)?;
    let columns = sniff_columns(&text);
    match columns {
        5 => {
            let records = tasks::load_dataset(path)?;
            records
                .into_iter()
                .map(|r| {
                    let gold = r.gold.ok_or_else(|| {
                        CliError::Data(format!("record {:?} has no gold label", r.id))
                    })?;
                    Ok((r.id, gold))
                })
                .collect()
        }
        3 => {
            let rows = io::parse_predictions(&text, path)?;
            Ok(rows.into_iter().map(|(id, _, class)| (id, class)).collect())
        }
        n => Err(CliError::Data(format!(
            "{}: expected a 5-column dataset or 3-column predictions file, got {n} columns",
            path.display()
        ))),
    }
}

fn dataset_entity_labels(path: &Path) -> Result<BTreeMap<String, Vec<usize>>, CliError> {
    let records = tasks::load_dataset(path)?;
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for record in records {
        let entity = record.entity.ok_or_else(|| {
            CliError::Data(format!("record {:?} has no entity", record.id))
        })?;
        let gold = record.gold.ok_or_else(|| {
            CliError::Data(format!("record {:?} has no gold label", record.id))
        })?;
        out.entry(entity).or_default().push(gold as usize);
    }
    Ok(out)
}

/// Per-entity positive rates, from a `entity<TAB>ppos` file or computed off
/// a dataset's gold labels.
fn load_binary_quant(path: &Path) -> Result<BTreeMap<String, f64>, CliError> {
    let text = io::read_to_string(path)?;
    if sniff_columns(&text) == 5 {
        let per_entity = dataset_entity_labels(path)?;
        return Ok(per_entity
            .into_iter()
            .map(|(entity, labels)| {
                let positives = labels.iter().filter(|&&c| c >= 3).count();
                (entity, positives as f64 / labels.len() as f64)
            })
            .collect());
    }
    io::parse_binary_quantification(&text, path)
}

/// Per-entity 5-class distributions, from a quantification file or computed
/// off a dataset's gold labels.
fn load_five_quant(
    path: &Path,
) -> Result<BTreeMap<String, crate::dist::SentimentDistribution>, CliError> {
    let text = io::read_to_string(path)?;
    if sniff_columns(&text) == 5 {
        let per_entity = dataset_entity_labels(path)?;
        return Ok(tasks::quantify_labels(&per_entity)?);
    }
    io::parse_quantification(&text, path)
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<(), CliError> {
    let (value, items, config) = match args.metric {
        MetricArg::MacroRecall | MetricArg::Accuracy | MetricArg::MacroMae => {
            let gold = load_gold_labels(&args.gold)?;
            let pred_text = io::read_to_string(&args.pred)?;
            let pred_rows = io::parse_predictions(&pred_text, &args.pred)?;
            let mut gold_vec = Vec::with_capacity(pred_rows.len());
            let mut pred_vec = Vec::with_capacity(pred_rows.len());
            for (id, _, class) in &pred_rows {
                let gold_class = gold.get(id).ok_or_else(|| {
                    CliError::Data(format!("prediction {id:?} has no gold label"))
                })?;
                gold_vec.push(*gold_class as usize);
                pred_vec.push(*class as usize);
            }
            if gold_vec.is_empty() {
                return Err(CliError::Data("no overlapping ids to score".into()));
            }
            let value = match args.metric {
                MetricArg::MacroRecall | MetricArg::Accuracy => {
                    // The confusion table spans the classes present in gold
                    // or predictions; macro recall requires every gold class
                    // populated.
                    let mut classes: Vec<usize> = gold_vec
                        .iter()
                        .chain(pred_vec.iter())
                        .copied()
                        .collect::<std::collections::BTreeSet<_>>()
                        .into_iter()
                        .collect();
                    classes.sort_unstable();
                    let index_of = |c: usize| classes.iter().position(|&x| x == c).unwrap();
                    let g: Vec<usize> = gold_vec.iter().map(|&c| index_of(c)).collect();
                    let p: Vec<usize> = pred_vec.iter().map(|&c| index_of(c)).collect();
                    let table = metrics::ConfusionTable::from_pairs(&g, &p, classes.len())?;
                    match args.metric {
                        MetricArg::MacroRecall => metrics::macro_recall(&table)?,
                        _ => metrics::accuracy(&table)?,
                    }
                }
                MetricArg::MacroMae => {
                    metrics::macro_mae(&gold_vec, &pred_vec, &LabelScale::default())?
                }
                _ => unreachable!(),
            };
            (value, pred_rows.len(), serde_json::json!({}))
        }
        MetricArg::Kld => {
            let gold = load_binary_quant(&args.gold)?;
            let pred_text = io::read_to_string(&args.pred)?;
            let pred = io::parse_binary_quantification(&pred_text, &args.pred)?;
            let mut sum = 0.0;
            let mut count = 0usize;
            for (entity, &g) in &gold {
                let p = pred.get(entity).ok_or_else(|| {
                    CliError::Data(format!("no prediction for entity {entity:?}"))
                })?;
                sum += metrics::kld(&[g, 1.0 - g], &[*p, 1.0 - *p], args.epsilon)?;
                count += 1;
            }
            if count == 0 {
                return Err(CliError::Data("no entities to score".into()));
            }
            (sum / count as f64, count, serde_json::json!({ "epsilon": args.epsilon }))
        }
        MetricArg::Emd => {
            let gold = load_five_quant(&args.gold)?;
            let pred_text = io::read_to_string(&args.pred)?;
            let pred = io::parse_quantification(&pred_text, &args.pred)?;
            let mut sum = 0.0;
            let mut count = 0usize;
            for (entity, g) in &gold {
                let p = pred.get(entity).ok_or_else(|| {
                    CliError::Data(format!("no prediction for entity {entity:?}"))
                })?;
                sum += metrics::emd_ordinal(g.probs(), p.probs())?;
                count += 1;
            }
            if count == 0 {
                return Err(CliError::Data("no entities to score".into()));
            }
            (sum / count as f64, count, serde_json::json!({ "scale": [0, 1, 2, 3, 4] }))
        }
    };

    if !value.is_finite() {
        return Err(CliError::Numeric(format!("metric value is {value}")));
    }
    let metric_name = match args.metric {
        MetricArg::MacroRecall => "macro-recall",
        MetricArg::Accuracy => "accuracy",
        MetricArg::MacroMae => "macro-mae",
        MetricArg::Kld => "kld",
        MetricArg::Emd => "emd",
    };
    let json = serde_json::json!({
        "metric": metric_name,
        "value": value,
        "items": items,
        "config": config,
    });
    println!("{json}");
    if let Some(path) = &args.output {
        write_atomic(path, &format!("{json}\n"))?;
    }
    Ok(())
}

fn gradcheck_cmd(args: GradcheckArgs) -> Result<(), CliError> {
    let report =
        neural::gradcheck::suite(args.seed, &args.dims, args.instances, args.step, args.tolerance)?;
    let json = serde_json::json!({
        "max_rel_err": report.max_rel_err,
        "max_abs_err": report.max_abs_err,
        "violations": report.violations,
        "coords_checked": report.coords_checked,
        "instances": report.instances,
        "tolerance": args.tolerance,
    });
    println!("{json}");
    if report.violations > 0 {
        return Err(CliError::Numeric(format!(
            "gradient check failed: {} coordinates beyond tolerance {}",
            report.violations,
            fmt_f64(args.tolerance)
        )));
    }
    Ok(())
}
