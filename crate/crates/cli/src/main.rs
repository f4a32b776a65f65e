mod config;

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use convseq::bench::{scaling_report, TimingOptions};
use convseq::gradcheck::{full_suite, TOLERANCE};
use convseq::model::Model;
use convseq::objectives::corrupt::{apply_spans, num_spans, place_spans};
use convseq::objectives::io::escape;
use convseq::objectives::vocab::{detokenize, tokenize, EOS_ID};
use convseq::objectives::{span_corrupt, Task};
use convseq::train::{evaluate, finetune, load_classification, pretrain, Checkpoint, EvalMetrics, MetricsLog};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use config::{FileConfig, Granularity};

#[derive(Debug)]
pub enum Failure {
    /// Exit 1.
    Config(String),
    /// Exit 2.
    Runtime(String),
    /// Exit 3.
    Gradcheck(String),
}

impl From<convseq::Error> for Failure {
    fn from(e: convseq::Error) -> Self {
        match e {
            convseq::Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "convseq",
    version,
    about = "Convolutional seq2seq pre-training, fine-tuning and scaling benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Span-corruption pre-training on a text corpus.
    Pretrain(Common),
    /// Fine-tune on a labeled classification file.
    Finetune(Common),
    /// Accuracy and F1 of a checkpoint on a labeled file.
    Eval(Common),
    /// FLOPs and throughput against sequence length.
    Benchmark(Common),
    /// Finite-difference checks of every op and the miniature models.
    Gradcheck(Common),
    /// Print (input, target) corruption previews for each input line.
    Corrupt(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Directory for every artifact; created if absent.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Sets the seed of every section.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted overrides such as `pretrain.steps=100`.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CONVSEQ_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Config(m) => (1, format!("config error: {m}")),
                Failure::Runtime(m) => (2, format!("error: {m}")),
                Failure::Gradcheck(m) => (3, format!("gradient check failed: {m}")),
            };
            eprintln!("{msg}");
            ExitCode::from(code)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    let (common, cmd): (&Common, fn(&FileConfig, &Path) -> Result<(), Failure>) = match &command {
        Command::Pretrain(c) => (c, cmd_pretrain),
        Command::Finetune(c) => (c, cmd_finetune),
        Command::Eval(c) => (c, cmd_eval),
        Command::Benchmark(c) => (c, cmd_benchmark),
        Command::Gradcheck(c) => (c, cmd_gradcheck),
        Command::Corrupt(c) => (c, cmd_corrupt),
    };
    let cfg = config::load(&common.config, common.seed, &common.overrides)?;
    std::fs::create_dir_all(&common.out)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", common.out.display())))?;
    config::write_effective(&cfg, &common.out)?;
    cmd(&cfg, &common.out)
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, Failure> {
    value
        .as_deref()
        .ok_or_else(|| Failure::Config(format!("`{key}` must be set for this command")))
}

fn metrics_log(out: &Path) -> Result<MetricsLog, Failure> {
    Ok(MetricsLog::append_to(&out.join("metrics.csv"))?)
}

fn save(ck: &Checkpoint, path: &Path) -> Result<(), Failure> {
    ck.save(path)?;
    Ok(())
}

fn cmd_pretrain(cfg: &FileConfig, out: &Path) -> Result<(), Failure> {
    let path = required(&cfg.data.corpus, "data.corpus")?;
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    let corpus: Vec<String> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(String::from)
        .collect();
    let model = Model::new(cfg.model.clone())?;
    let mut log = metrics_log(out)?;
    let outcome = match pretrain(model, &corpus, &cfg.pretrain, &mut log, Some(out)) {
        Ok(o) => o,
        Err(convseq::Error::Diverged { step, last_good }) => {
            let keep = out.join("last_good.ckpt");
            save(&last_good, &keep)?;
            return Err(Failure::Runtime(format!(
                "loss became non-finite at step {step}; parameters from step {} saved to {}",
                last_good.step,
                keep.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    let final_path = out.join("final.ckpt");
    save(&outcome.checkpoint, &final_path)?;
    println!(
        "pretrain: {} steps of {}, eval loss {:.4} -> {:.4}, checkpoint {}",
        outcome.checkpoint.step,
        cfg.model.variant,
        outcome.initial_loss(),
        outcome.final_loss(),
        final_path.display()
    );
    Ok(())
}

fn labeled(cfg: &FileConfig, path: &Path) -> Result<(Task, Vec<convseq::train::ClassExample>), Failure> {
    let task = Task::lookup(&cfg.data.task).map_err(|e| Failure::Config(format!("data.task: {e}")))?;
    let data = load_classification(path, &task)?;
    Ok((task, data))
}

fn summary(m: &EvalMetrics) -> String {
    format!("accuracy {:.4} f1 {:.4} on {} examples", m.accuracy, m.f1, m.count)
}

fn cmd_finetune(cfg: &FileConfig, out: &Path) -> Result<(), Failure> {
    let train_path = required(&cfg.data.train, "data.train")?;
    let (task, train) = labeled(cfg, train_path)?;
    let valid = match &cfg.data.valid {
        Some(p) => labeled(cfg, p)?.1,
        None => train.clone(),
    };
    let model = match &cfg.data.checkpoint {
        Some(p) => Checkpoint::load(p)?.into_model()?,
        None => Model::new(cfg.model.clone())?,
    };
    let mut log = metrics_log(out)?;
    let outcome = finetune(model, &train, &valid, &task, &cfg.finetune, &mut log)?;
    let best = out.join("best.ckpt");
    save(&outcome.best, &best)?;
    save(&outcome.last, &out.join("last.ckpt"))?;
    println!(
        "finetune: peak {} at step {}, checkpoint {}",
        summary(&outcome.peak),
        outcome.peak_step,
        best.display()
    );
    Ok(())
}

fn cmd_eval(cfg: &FileConfig, _out: &Path) -> Result<(), Failure> {
    let ck = required(&cfg.data.checkpoint, "data.checkpoint")?;
    let data_path = cfg
        .data
        .valid
        .as_deref()
        .or(cfg.data.train.as_deref())
        .ok_or_else(|| Failure::Config("`data.valid` or `data.train` must be set for eval".into()))?;
    let (task, data) = labeled(cfg, data_path)?;
    let model = Checkpoint::load(ck)?.into_model()?;
    let m = evaluate(&model, &data, &task)?;
    println!("eval: {}", summary(&m));
    Ok(())
}

fn cmd_benchmark(cfg: &FileConfig, out: &Path) -> Result<(), Failure> {
    let b = &cfg.benchmark;
    if b.variants.is_empty() {
        return Err(Failure::Config("`benchmark.variants` is empty".into()));
    }
    let timing = b.timing.then(|| TimingOptions {
        batch: b.batch,
        reps: b.reps,
        memory_budget: b.memory_budget,
    });
    let mut base = cfg.model.clone();
    base.max_target_len = base.max_target_len.max(
        b.grid
            .iter()
            .map(|&n| convseq::bench::decoder_len(n))
            .max()
            .unwrap_or(0),
    );
    let report = scaling_report(&b.variants, &b.grid, &base, timing.as_ref())?;
    report.write(out)?;
    if !report.any_feasible() {
        return Err(Failure::Runtime(format!(
            "every grid point exceeds the memory budget of {} bytes",
            b.memory_budget
        )));
    }
    for (v, s) in &report.slopes {
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |x| format!("{x:.3}"));
        println!(
            "benchmark: {v} flops slope {} (n>=1024 {}), time slope {} (n>=1024 {})",
            fmt(s.flops),
            fmt(s.flops_long),
            fmt(s.time),
            fmt(s.time_long)
        );
    }
    println!(
        "benchmark: {} rows written to {}",
        report.records.len(),
        out.join("scaling.csv").display()
    );
    Ok(())
}

fn cmd_gradcheck(cfg: &FileConfig, _out: &Path) -> Result<(), Failure> {
    let results = full_suite(cfg.gradcheck.seed)?;
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!("{:width$}  {:.3e}  {status}", r.name, r.max_rel_error);
    }
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        println!("gradcheck: {} checks below {TOLERANCE:e}", results.len());
        Ok(())
    } else {
        Err(Failure::Gradcheck(format!("{} above {TOLERANCE:e}", failed.join(", "))))
    }
}

fn cmd_corrupt(cfg: &FileConfig, _out: &Path) -> Result<(), Failure> {
    let c = &cfg.corrupt;
    let text = match &c.input {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?,
        None => {
            let mut s = String::new();
            std::io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| Failure::Runtime(format!("stdin: {e}")))?;
            s
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (input, target) = match c.granularity {
            Granularity::Byte => {
                let ex = span_corrupt(&tokenize(line), c.span_len, c.rate, &mut rng)?;
                let target = ex.target_ids.strip_suffix(&[EOS_ID]).unwrap_or(&ex.target_ids);
                (detokenize(&ex.input_ids), detokenize(target))
            }
            Granularity::Word => {
                if !(0.0..1.0).contains(&c.rate) || c.span_len == 0 {
                    return Err(Failure::Config(
                        "corrupt.rate must lie in [0, 1) and corrupt.span_len be positive".into(),
                    ));
                }
                let words: Vec<String> = line.split_whitespace().map(String::from).collect();
                let count = num_spans(words.len(), c.span_len, c.rate);
                let starts = place_spans(words.len(), c.span_len, count, &mut rng)?;
                let (input, target) = apply_spans(
                    &words,
                    &starts,
                    c.span_len,
                    |i| format!("[sentinel_{i}]"),
                    String::new(),
                );
                let target = &target[..target.len() - 1];
                (input.join(" "), target.join(" "))
            }
        };
        println!("{}\t{}", escape(&input), escape(&target));
    }
    Ok(())
}
