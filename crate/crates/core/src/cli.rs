//! Command-line entry points.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::corpus::TurnPrediction;
use crate::corpus::{
    join, load_corpus, make_turn_input, save_corpus, tokenize, Dialog, DialogTurn, Mask, Source,
};
use crate::error::{MossError, Result};
use crate::eval::{error_report, evaluate, report, DialogPrediction};
use crate::kb::KnowledgeBase;
use crate::model::{FrameworkConfig, Instance, Moss, TurnRecord};
use crate::synth::{generate, split, subsample, to_raw, GenConfig, Task, TaskSchema};
use crate::train::{train, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

pub const KB_FILE: &str = "kb.json";
pub const SCHEMA_FILE: &str = "schema.json";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const RUN_FILE: &str = "run_config.json";

#[derive(Debug, Parser)]
#[command(
    name = "moss",
    version,
    about = "Modular task-oriented dialog framework"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus, its knowledge base and a 3:1:1 split.
    GenData(GenArgs),
    /// Train a framework instance.
    Train(TrainArgs),
    /// Score a model (or a predictions file) on a corpus.
    Eval(EvalArgs),
    /// Train and evaluate every instance at every data fraction.
    Sweep(SweepArgs),
    /// Per-module error records of a model on a corpus.
    ErrorReport(EvalArgs),
    /// Talk to a trained model.
    Chat(ChatArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Generator config (JSON); flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config (JSON with `framework` and `train` sections, or a bare
    /// framework config).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory with train.jsonl, valid.jsonl and kb.json.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub instance: Option<Instance>,
    /// Train on this share of the training split.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Add the unsampled remainder as dialogs annotated for NLG only.
    #[arg(long)]
    pub raw_complement: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained model directory.
    #[arg(long, required_unless_present = "predictions")]
    pub model: Option<PathBuf>,
    /// Corpus file, or a directory holding test.jsonl. kb.json and
    /// schema.json are read from the same directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Score these predictions (JSON lines) instead of running a model.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8,1.0")]
    pub fractions: Vec<f64>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "all,wo_nlu,wo_dpl,wo_nlu_dpl"
    )]
    pub instances: Vec<Instance>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub raw_complement: bool,
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Directory holding kb.json.
    #[arg(long)]
    pub data: PathBuf,
}

/// Framework and training settings of one run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub framework: FrameworkConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read(path)?;
        match serde_json::from_str::<RunConfig>(&text) {
            Ok(c) => Ok(c),
            Err(run_err) => match serde_json::from_str::<FrameworkConfig>(&text) {
                Ok(framework) => Ok(RunConfig {
                    framework,
                    train: TrainConfig::default(),
                }),
                Err(_) => Err(run_err.into()),
            },
        }
    }
}

/// Model outputs for one dialog, as stored in predictions files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub dialog_id: String,
    pub turns: Vec<TurnPrediction>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| MossError::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| MossError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| MossError::io(path, e))
}

fn print_resolved<T: Serialize>(command: &str, value: &T) -> Result<()> {
    println!("{command} {}", serde_json::to_string(value)?);
    Ok(())
}

/// A corpus path plus the directory its kb.json and schema.json live in.
fn resolve_data(path: &Path, default_file: &str) -> (PathBuf, PathBuf) {
    if path.is_dir() {
        (path.join(default_file), path.to_path_buf())
    } else {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        (path.to_path_buf(), dir)
    }
}

pub fn save_predictions(preds: &[DialogPrediction], corpus: &[Dialog], path: &Path) -> Result<()> {
    let mut text = String::new();
    for (p, d) in preds.iter().zip(corpus) {
        let rec = PredictionRecord {
            dialog_id: d.dialog_id.clone(),
            turns: p.clone(),
        };
        text.push_str(&serde_json::to_string(&rec)?);
        text.push('\n');
    }
    write(path, &text)
}

/// Predictions aligned with `corpus` by dialog id.
pub fn load_predictions(path: &Path, corpus: &[Dialog]) -> Result<Vec<DialogPrediction>> {
    let text = read(path)?;
    let mut by_id = std::collections::HashMap::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let rec: PredictionRecord = serde_json::from_str(line).map_err(|e| MossError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            field: "record".into(),
            message: e.to_string(),
        })?;
        by_id.insert(rec.dialog_id, rec.turns);
    }
    corpus
        .iter()
        .map(|d| {
            by_id.remove(&d.dialog_id).ok_or_else(|| MossError::Parse {
                path: path.display().to_string(),
                line: 0,
                field: "dialog_id".into(),
                message: format!("no predictions for dialog `{}`", d.dialog_id),
            })
        })
        .collect()
}

fn gen_data(args: &GenArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => serde_json::from_str(&read(p)?)?,
        None => GenConfig::new(Task::Simple, 500, 1),
    };
    if let Some(t) = args.task {
        cfg.task = t;
    }
    if let Some(n) = args.n {
        cfg.n_dialogs = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    print_resolved("gen-data", &cfg)?;
    let (schema, kb) = cfg.task.build(cfg.seed)?;
    let corpus = generate(&schema, &kb, &cfg)?;
    let out = &args.out;
    fs::create_dir_all(out).map_err(|e| MossError::io(out, e))?;
    save_corpus(&corpus, &out.join("all.jsonl"))?;
    if corpus.len() >= 3 {
        let (tr, va, te) = split(&corpus, (3.0, 1.0, 1.0), cfg.seed)?;
        save_corpus(&tr, &out.join("train.jsonl"))?;
        save_corpus(&va, &out.join("valid.jsonl"))?;
        save_corpus(&te, &out.join("test.jsonl"))?;
    }
    kb.save(&out.join(KB_FILE))?;
    schema.save(&out.join(SCHEMA_FILE))?;
    info!("wrote {} dialogs to {}", corpus.len(), out.display());
    Ok(())
}

/// Training dialogs after subsampling, with the complement as raw dialogs
/// when asked.
pub fn training_set(
    train_split: &[Dialog],
    fraction: f64,
    raw_complement: bool,
    seed: u64,
) -> Result<Vec<Dialog>> {
    let (mut sample, rest) = subsample(train_split, fraction, seed)?;
    if raw_complement {
        sample.extend(rest.iter().map(to_raw));
    }
    if sample.is_empty() {
        return Err(MossError::precondition(format!(
            "fraction {fraction} of {} dialogs leaves nothing to train on",
            train_split.len()
        )));
    }
    Ok(sample)
}

struct TrainData {
    train: Vec<Dialog>,
    valid: Option<Vec<Dialog>>,
    test: Option<Vec<Dialog>>,
    kb: KnowledgeBase,
}

fn load_train_data(dir: &Path) -> Result<TrainData> {
    let opt = |name: &str| -> Result<Option<Vec<Dialog>>> {
        let p = dir.join(name);
        if p.exists() {
            load_corpus(&p).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(TrainData {
        train: load_corpus(&dir.join("train.jsonl"))?,
        valid: opt("valid.jsonl")?,
        test: opt("test.jsonl")?,
        kb: KnowledgeBase::load(&dir.join(KB_FILE))?,
    })
}

#[derive(Debug, Serialize)]
struct ResolvedTrain<'a> {
    run: &'a RunConfig,
    data: &'a Path,
    out: &'a Path,
    fraction: f64,
    raw_complement: bool,
}

fn resolve_run(
    config: &Option<PathBuf>,
    seed: Option<u64>,
    instance: Option<Instance>,
) -> Result<RunConfig> {
    let mut run = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        run.train.seed = s;
    }
    if let Some(i) = instance {
        run.framework.set_instance(i);
    }
    run.framework.seed = run.train.seed;
    run.framework.dropout = run.train.dropout;
    run.framework.validate()?;
    run.train.validate()?;
    Ok(run)
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let run = resolve_run(&args.config, args.seed, args.instance)?;
    let fraction = args.fraction.unwrap_or(1.0);
    print_resolved(
        "train",
        &ResolvedTrain {
            run: &run,
            data: &args.data,
            out: &args.out,
            fraction,
            raw_complement: args.raw_complement,
        },
    )?;
    let data = load_train_data(&args.data)?;
    let dialogs = training_set(&data.train, fraction, args.raw_complement, run.train.seed)?;
    fs::create_dir_all(&args.out).map_err(|e| MossError::io(&args.out, e))?;
    let log_path = args.out.join(LOG_FILE);
    let mut log = fs::File::create(&log_path).map_err(|e| MossError::io(&log_path, e))?;
    let outcome = train(
        &run.train,
        &run.framework,
        &dialogs,
        data.valid.as_deref(),
        &data.kb,
        None,
        Some(&mut log),
    )?;
    outcome.model.save(&args.out)?;
    write(
        &args.out.join(RUN_FILE),
        &serde_json::to_string_pretty(&run)?,
    )?;
    info!(
        "best epoch {}; model saved to {}",
        outcome.best_epoch,
        args.out.display()
    );
    Ok(())
}

/// A corpus file (or a directory's test.jsonl) with the kb.json and
/// schema.json stored beside it.
pub fn load_eval_data(path: &Path) -> Result<(Vec<Dialog>, KnowledgeBase, TaskSchema)> {
    let (corpus_path, dir) = resolve_data(path, "test.jsonl");
    let corpus = load_corpus(&corpus_path)?;
    let kb = KnowledgeBase::load(&dir.join(KB_FILE))?;
    let schema = TaskSchema::load(&dir.join(SCHEMA_FILE))?;
    Ok((corpus, kb, schema))
}

fn predictions_for(
    args: &EvalArgs,
    corpus: &[Dialog],
    kb: &KnowledgeBase,
    schema: &TaskSchema,
) -> Result<Vec<DialogPrediction>> {
    match (&args.predictions, &args.model) {
        (Some(p), _) => load_predictions(p, corpus),
        (None, Some(m)) => Ok(evaluate(&Moss::load(m)?, kb, schema, corpus)?.1),
        (None, None) => Err(MossError::precondition(
            "either --model or --predictions is required",
        )),
    }
}

fn eval_cmd(args: &EvalArgs) -> Result<()> {
    print_resolved(
        "eval",
        &serde_json::json!({
            "model": args.model, "data": args.data, "predictions": args.predictions, "out": args.out,
        }),
    )?;
    let (corpus, kb, schema) = load_eval_data(&args.data)?;
    let preds = predictions_for(args, &corpus, &kb, &schema)?;
    let rep = report(&preds, &corpus, &schema, kb.requestable())?;
    println!("{rep}");
    if let Some(out) = &args.out {
        write(&out.join("report.json"), &rep.to_json()?)?;
        write(&out.join("report.txt"), &format!("{rep}\n"))?;
        if args.predictions.is_none() {
            save_predictions(&preds, &corpus, &out.join("predictions.jsonl"))?;
        }
    }
    Ok(())
}

fn error_report_cmd(args: &EvalArgs) -> Result<()> {
    print_resolved(
        "error-report",
        &serde_json::json!({
            "model": args.model, "data": args.data, "predictions": args.predictions, "out": args.out,
        }),
    )?;
    let (corpus, kb, schema) = load_eval_data(&args.data)?;
    let preds = predictions_for(args, &corpus, &kb, &schema)?;
    let records = error_report(&preds, &corpus, &schema)?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    match &args.out {
        Some(out) => {
            let path = if out.extension().is_some() {
                out.clone()
            } else {
                out.join("errors.jsonl")
            };
            write(&path, &text)?;
            info!(
                "{} error records written to {}",
                records.len(),
                path.display()
            );
        }
        None => print!("{text}"),
    }
    Ok(())
}

pub const SWEEP_HEADER: &str =
    "instance,fraction,seed,n_train,mat,succ_f1,bleu,nlu_acc,dst_acc,dpl_acc,succ_acc";

fn csv_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6}"))
}

fn sweep_cmd(args: &SweepArgs) -> Result<()> {
    let base = resolve_run(&args.config, args.seed, None)?;
    let seeds = args.seeds.clone().unwrap_or_else(|| vec![base.train.seed]);
    print_resolved(
        "sweep",
        &serde_json::json!({
            "run": base, "data": args.data, "out": args.out, "fractions": args.fractions,
            "instances": args.instances, "seeds": seeds, "raw_complement": args.raw_complement,
        }),
    )?;
    if let Some(f) = args.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(MossError::precondition(format!(
            "fraction {f} outside (0, 1]"
        )));
    }
    let data = load_train_data(&args.data)?;
    let test = data.test.as_ref().ok_or_else(|| {
        MossError::io(
            args.data.join("test.jsonl"),
            std::io::ErrorKind::NotFound.into(),
        )
    })?;
    let schema = TaskSchema::load(&args.data.join(SCHEMA_FILE))?;
    fs::create_dir_all(&args.out).map_err(|e| MossError::io(&args.out, e))?;
    let csv_path = args.out.join("sweep.csv");
    let mut csv = fs::File::create(&csv_path).map_err(|e| MossError::io(&csv_path, e))?;
    let io = |e| MossError::io(&csv_path, e);
    writeln!(csv, "{SWEEP_HEADER}").map_err(io)?;
    for &instance in &args.instances {
        for &fraction in &args.fractions {
            for &seed in &seeds {
                let mut run = base.clone();
                run.framework.set_instance(instance);
                run.train.seed = seed;
                run.framework.seed = seed;
                let dialogs = training_set(&data.train, fraction, args.raw_complement, seed)?;
                let outcome = train(
                    &run.train,
                    &run.framework,
                    &dialogs,
                    data.valid.as_deref(),
                    &data.kb,
                    None,
                    None,
                )?;
                let (rep, _) = evaluate(&outcome.model, &data.kb, &schema, test)?;
                info!("{instance} fraction {fraction} seed {seed}: Mat {:.4} Succ.F1 {:.4} BLEU {:.4}", rep.mat, rep.succ_f1, rep.bleu);
                writeln!(
                    csv,
                    "{instance},{fraction},{seed},{},{:.6},{:.6},{:.6},{},{},{},{}",
                    dialogs.len(),
                    rep.mat,
                    rep.succ_f1,
                    rep.bleu,
                    csv_opt(rep.nlu_acc),
                    csv_opt(rep.dst_acc),
                    csv_opt(rep.dpl_acc),
                    csv_opt(rep.succ_acc)
                )
                .map_err(io)?;
            }
        }
    }
    Ok(())
}

/// A live conversation: each turn's context comes only from the model's
/// own earlier outputs.
#[derive(Debug, Clone)]
pub struct ChatSession {
    dialog: Dialog,
    preds: Vec<TurnPrediction>,
}

impl Default for ChatSession {
    fn default() -> Self {
        Self::new()
    }
}

impl ChatSession {
    pub fn new() -> Self {
        ChatSession {
            dialog: Dialog {
                dialog_id: "chat".into(),
                goal: None,
                turns: Vec::new(),
            },
            preds: Vec::new(),
        }
    }

    pub fn respond(
        &mut self,
        model: &Moss,
        kb: &KnowledgeBase,
        utterance: &str,
    ) -> Result<TurnRecord> {
        let user = tokenize(utterance);
        if user.is_empty() {
            return Err(MossError::precondition("empty user utterance"));
        }
        self.dialog.turns.push(DialogTurn {
            user,
            m: None,
            s: None,
            a: None,
            resp: None,
            mask: Mask {
                nlu: false,
                dst: false,
                dpl: false,
                nlg: false,
            },
        });
        let t = self.dialog.turns.len();
        let rec = make_turn_input(
            &self.dialog,
            t,
            Source::Predicted(&self.preds),
            model.config.has_dpl,
        )
        .and_then(|input| model.predict_turn(kb, &input));
        match rec {
            Ok(rec) => {
                self.preds.push(rec.prediction.clone());
                Ok(rec)
            }
            Err(e) => {
                self.dialog.turns.pop();
                Err(e)
            }
        }
    }

    pub fn turns(&self) -> usize {
        self.preds.len()
    }

    pub fn history(&self) -> impl Iterator<Item = (&DialogTurn, &TurnPrediction)> {
        self.dialog.turns.iter().zip(&self.preds)
    }
}

fn chat_cmd(args: &ChatArgs) -> Result<()> {
    print_resolved(
        "chat",
        &serde_json::json!({ "model": args.model, "data": args.data }),
    )?;
    let model = Moss::load(&args.model)?;
    let kb = KnowledgeBase::load(&args.data.join(KB_FILE))?;
    let mut session = ChatSession::new();
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout();
    let show = |label: &str, t: &Option<Vec<String>>| match t {
        Some(t) => format!("{label}: {}\n", join(t)),
        None => String::new(),
    };
    loop {
        print!("user> ");
        stdout.flush().map_err(|e| MossError::io("stdout", e))?;
        let mut line = String::new();
        if stdin
            .lock()
            .read_line(&mut line)
            .map_err(|e| MossError::io("stdin", e))?
            == 0
        {
            break;
        }
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == ":quit" {
            break;
        }
        let rec = session.respond(&model, &kb, line)?;
        let p = &rec.prediction;
        print!(
            "{}{}{}k: {}\n{}",
            show("M", &p.m),
            show("S", &p.s),
            show("A", &p.a),
            rec.k.bucket(),
            show("R", &p.r)
        );
    }
    Ok(())
}

fn init_logging() {
    let level = match std::env::var("MOSS_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Off,
        Ok("debug") => log::LevelFilter::Debug,
        _ => log::LevelFilter::Info,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_target(false)
        .try_init();
}

pub fn exit_code(err: &MossError) -> i32 {
    match err {
        MossError::Precondition(_) => EXIT_USAGE,
        e if e.is_data_error() => EXIT_DATA,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::ErrorReport(a) => error_report_cmd(a),
        Command::Chat(a) => chat_cmd(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
