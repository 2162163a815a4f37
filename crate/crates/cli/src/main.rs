mod config;

use std::fs;
use std::io::{self, BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;

use mgcn::encoder::Aggregation;
use mgcn::graph::{parse_label_list, to_levi, EdgeLabel};
use mgcn::kg::{dataset_stats, parse_instances, synth_corpus, write_instances, Instance, SynthSpec, Triple};
use mgcn::metrics::evaluate;
use mgcn::model::{Model, ModelConfig};
use mgcn::numerics::grad_check;
use mgcn::preprocess::{tokenize, Vocabulary};
use mgcn::training::{describe, train, ModelCheckpoint};

use config::RunConfig;

/// Threshold for the `gradcheck` command.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "mgcn", version, about = "Knowledge-graph-to-text generation with multi-graph encoders")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override values from `--config`.
#[derive(Args, Default)]
struct Overrides {
    /// `key = value` configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    layers: Option<usize>,
    #[arg(long, global = true)]
    hidden: Option<usize>,
    /// sum, avg or conv
    #[arg(long, global = true)]
    aggregation: Option<Aggregation>,
    /// Comma-separated graphs to keep, e.g. self,default1,reverse1
    #[arg(long, global = true, value_parser = parse_graphs)]
    graphs: Option<std::collections::BTreeSet<EdgeLabel>>,
    #[arg(long, global = true)]
    beam: Option<usize>,
    /// on or off
    #[arg(long, global = true, value_parser = parse_on_off)]
    delex: Option<bool>,
    /// Output file
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

fn parse_graphs(s: &str) -> Result<std::collections::BTreeSet<EdgeLabel>, String> {
    parse_label_list(s).map_err(|e| e.to_string())
}

fn parse_on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        _ => Err(format!("expected `on` or `off`, got `{s}`")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Dump the multi-graph (or Levi graph) of every instance
    Transform {
        input: PathBuf,
        /// Emit the Levi-graph baseline structure instead
        #[arg(long)]
        levi: bool,
    },
    /// Corpus statistics of an instance file (`-` reads stdin)
    Stats { input: PathBuf },
    /// Generate a synthetic instance file
    Synth {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 50)]
        entities: usize,
        #[arg(long, default_value_t = 8)]
        relations: usize,
        #[arg(long, default_value_t = 4)]
        triples: usize,
    },
    /// Train a model; writes the checkpoint, `<checkpoint>.manifest` and `<checkpoint>.log`
    Train {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        valid: Option<PathBuf>,
    },
    /// Describe every instance of a file with a trained checkpoint
    Generate {
        input: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score candidate against reference sentences (one per line)
    Evaluate {
        candidates: PathBuf,
        references: PathBuf,
        /// Add-one smoothing for higher-order BLEU precisions
        #[arg(long)]
        smooth: bool,
        /// Append per-instance ROUGE rows
        #[arg(long)]
        per_instance: bool,
    },
    /// Finite-difference gradient check of a tiny seeded model
    Gradcheck,
}

enum Failure {
    Usage(String),
    Core(mgcn::Error),
    Internal(String),
}

impl From<mgcn::Error> for Failure {
    fn from(e: mgcn::Error) -> Self {
        Failure::Core(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Core(e.into())
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            match e {
                mgcn::Error::Config(_) | mgcn::Error::SelfGraphRemoval => ExitCode::from(1),
                e if e.is_data_error() => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn effective_config(o: &Overrides) -> CliResult<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = &o.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        config.apply_text(&text, path).map_err(Failure::Usage)?;
    }
    let t = &mut config.train;
    if let Some(v) = o.seed {
        t.seed = v;
    }
    if let Some(v) = o.layers {
        t.model.layers = v;
    }
    if let Some(v) = o.hidden {
        t.model.hidden = v;
    }
    if let Some(v) = o.aggregation {
        t.model.aggregation = v;
    }
    if let Some(v) = &o.graphs {
        t.model.graphs = v.clone();
    }
    if let Some(v) = o.beam {
        t.beam = v;
    }
    if let Some(v) = o.delex {
        t.delexicalize = v;
    }
    if let Some(v) = &o.out {
        config.output = Some(v.clone());
    }
    Ok(config)
}

fn read_input(path: &Path) -> CliResult<Vec<Instance>> {
    if path == Path::new("-") {
        let mut text = String::new();
        io::stdin().read_to_string(&mut text)?;
        Ok(parse_instances(text.as_bytes(), Path::new("<stdin>"))?)
    } else {
        let file = fs::File::open(path).map_err(|e| {
            mgcn::Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        Ok(parse_instances(io::BufReader::new(file), path)?)
    }
}

/// Writes to `path`, or stdout when absent.
fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn required(value: Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    value.ok_or_else(|| Failure::Usage(format!("no {what} given (flag or config key)")))
}

fn run(cli: Cli) -> CliResult<()> {
    let config = effective_config(&cli.overrides)?;
    let out = config.output.clone();
    match cli.command {
        Command::Transform { input, levi } => {
            let model_config = &config.train.model;
            let removed: std::collections::BTreeSet<_> = EdgeLabel::ALL
                .into_iter()
                .filter(|l| !model_config.graphs.contains(l))
                .collect();
            let mut text = String::new();
            for (i, inst) in read_input(&input)?.iter().enumerate() {
                text.push_str(&format!("# instance {i}\n"));
                if levi {
                    text.push_str(&to_levi(&inst.triples)?.dump());
                } else {
                    let mg = mgcn::graph::to_multigraph(&inst.triples)?;
                    text.push_str(&mgcn::graph::drop_graphs(&mg, &removed)?.dump());
                }
            }
            emit(out.as_deref(), &text)
        }
        Command::Stats { input } => {
            let stats = dataset_stats(&read_input(&input)?)?;
            emit(out.as_deref(), &stats.to_string())
        }
        Command::Synth {
            instances,
            entities,
            relations,
            triples,
        } => {
            let corpus = synth_corpus(&SynthSpec {
                seed: config.train.seed,
                instances,
                entities,
                relations,
                triples_per_instance: triples,
            })?;
            let mut buf = Vec::new();
            write_instances(&mut buf, &corpus)?;
            emit(out.as_deref(), &String::from_utf8_lossy(&buf))
        }
        Command::Train { train: t, valid: v } => run_train(config, t, v),
        Command::Generate { input, checkpoint } => run_generate(config, &cli.overrides, input, checkpoint),
        Command::Evaluate {
            candidates,
            references,
            smooth,
            per_instance,
        } => {
            let cands = read_lines(&candidates)?;
            let refs = read_lines(&references)?;
            if cands.len() != refs.len() {
                return Err(mgcn::Error::Parse {
                    path: candidates,
                    line: cands.len().min(refs.len()) + 1,
                    reason: format!("{} candidate lines but {} reference lines", cands.len(), refs.len()),
                }
                .into());
            }
            let report = evaluate(&cands, &refs, smooth)?;
            let mut text = report.to_string();
            if per_instance {
                for s in &report.per_instance {
                    text.push_str(&format!(
                        "instance {}\tR1 {:.4}\tR2 {:.4}\tRL {:.4}\n",
                        s.index, s.rouge1.f1, s.rouge2.f1, s.rouge_l.f1
                    ));
                }
            }
            emit(out.as_deref(), &text)
        }
        Command::Gradcheck => run_gradcheck(&config),
    }
}

fn read_lines(path: &Path) -> CliResult<Vec<Vec<String>>> {
    let file = fs::File::open(path)
        .map_err(|e| mgcn::Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut lines = Vec::new();
    for line in io::BufReader::new(file).lines() {
        lines.push(line?.split_whitespace().map(String::from).collect());
    }
    Ok(lines)
}

fn run_train(mut config: RunConfig, t: Option<PathBuf>, v: Option<PathBuf>) -> CliResult<()> {
    if t.is_some() {
        config.train_path = t;
    }
    if v.is_some() {
        config.valid_path = v;
    }
    let train_path = required(config.train_path.clone(), "training file")?;
    let valid_path = required(config.valid_path.clone(), "validation file")?;
    let checkpoint_path = required(
        config.output.clone().or_else(|| config.checkpoint.clone()),
        "checkpoint path (--out)",
    )?;
    config.checkpoint = Some(checkpoint_path.clone());
    config.train.validate()?;

    let manifest_path = sibling(&checkpoint_path, "manifest");
    fs::write(&manifest_path, config.manifest())?;

    let outcome = train(&config.train, &read_input(&train_path)?, &read_input(&valid_path)?)?;
    outcome.checkpoint.save(&checkpoint_path)?;

    let mut log = String::from("epoch\ttrain_ppl\tvalid_ppl\tsteps\n");
    for e in &outcome.epochs {
        log.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{}\n",
            e.epoch, e.train_perplexity, e.valid_perplexity, e.steps
        ));
    }
    fs::write(sibling(&checkpoint_path, "log"), log)?;
    eprintln!(
        "best epoch {} (valid perplexity {}), checkpoint {}",
        outcome.best_epoch,
        outcome
            .checkpoint
            .best_perplexity
            .map_or("n/a".into(), |p| format!("{p:.4}")),
        checkpoint_path.display()
    );
    Ok(())
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn run_generate(
    config: RunConfig,
    overrides: &Overrides,
    input: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
) -> CliResult<()> {
    let checkpoint = required(checkpoint.or(config.checkpoint.clone()), "checkpoint (--checkpoint)")?;
    let input = required(input.or(config.test_path.clone()), "instance file")?;
    let ckpt = ModelCheckpoint::load(&checkpoint)?;
    let model = ckpt.model()?;
    // Model structure comes from the checkpoint; only decoding settings
    // may be overridden.
    let mut train_config = ckpt.config.clone();
    if let Some(b) = overrides.beam {
        train_config.beam = b;
    } else if overrides.config.is_some() {
        train_config.beam = config.train.beam;
    }
    if train_config.beam == 0 {
        return Err(Failure::Usage("beam must be >= 1".into()));
    }

    let mut text = String::new();
    for (i, inst) in read_input(&input)?.iter().enumerate() {
        if inst.triples.is_empty() {
            warn!("instance {i}: empty triple set, emitting an empty line");
            text.push('\n');
            continue;
        }
        let (sentence, warnings) = describe(&model, &train_config, inst)?;
        for w in warnings {
            warn!("instance {i}: {w}");
        }
        text.push_str(&sentence);
        text.push('\n');
    }
    emit(config.output.as_deref(), &text)
}

fn run_gradcheck(config: &RunConfig) -> CliResult<()> {
    // A deliberately tiny model: the structure options come from the
    // configuration, sizes and initialization are fixed so that every
    // gradient entry stays well above finite-difference round-off.
    let vocab = Vocabulary::from_tokens(
        ["ada", "lovelace", "london", "born", "in", "."].map(String::from),
        1,
    );
    let model_config = ModelConfig {
        hidden: 4,
        layers: 1,
        init_scale: 1.0,
        aggregation: config.train.model.aggregation,
        encoder: config.train.model.encoder,
        graphs: config.train.model.graphs.clone(),
        mean_neighbors: config.train.model.mean_neighbors,
        input_feeding: config.train.model.input_feeding,
    };
    let model = Model::new(model_config, vocab, 3)?;
    let triples = [Triple::new("ada lovelace", "born in", "london")];
    let reference = tokenize("ada lovelace born in london .");
    let graph = model.prepare(&triples)?;
    let mut store = model.store.clone();
    let report = grad_check(&mut store, |tape| Ok(model.loss(tape, &graph, &reference)?.0), 1e-5)?;
    let worst = report
        .worst
        .as_ref()
        .map_or("-".to_string(), |(name, i)| format!("{name}[{i}]"));
    let text = format!(
        "entries\t{}\nmax_rel_error\t{:e}\nworst\t{}\n",
        report.entries_checked, report.max_rel_error, worst
    );
    emit(config.output.as_deref(), &text)?;
    if report.max_rel_error >= GRADCHECK_TOLERANCE || !report.max_rel_error.is_finite() {
        return Err(Failure::Internal(format!(
            "gradient check failed: max relative error {:e} >= {GRADCHECK_TOLERANCE:e}",
            report.max_rel_error
        )));
    }
    Ok(())
}
