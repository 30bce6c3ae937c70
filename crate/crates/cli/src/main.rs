//! `px2t`: batch front end for corpus synthesis, training, evaluation and
//! ablations. Every command logs JSON lines to stdout and to
//! `<out>/logs/<command>.jsonl`.
//!
//! Exit codes: 0 success, 2 invalid input or I/O failure, 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use toothrecon::formats::read_json;
use toothrecon::metrics::Report;
use toothrecon::pipeline::{
    run_ablation, run_eval, run_project, run_synth, run_train_gen, run_train_seg, ExperimentConfig, JsonLog,
};
use toothrecon::{Error, Result};

#[derive(Parser)]
#[command(name = "px2t", version, about = "Panoramic X-ray to 3D tooth reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus with projections and split.
    Synth(Common),
    /// Re-project an existing corpus.
    Project(Common),
    /// Train the segmentation network.
    TrainSeg(Common),
    /// Train the point generator.
    TrainGen(Common),
    /// Evaluate trained models on the test split.
    Eval(Common),
    /// Train and evaluate every ablation row.
    Ablate(Common),
    /// Summarize existing reports as markdown.
    Report(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Smoke,
    Ablation,
    Full,
}

#[derive(clap::Args)]
struct Common {
    /// JSON experiment config; missing fields take the preset's values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base for missing config fields.
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Log to the file only.
    #[arg(long)]
    quiet: bool,
}

fn preset(p: Preset) -> ExperimentConfig {
    match p {
        Preset::Desk => ExperimentConfig::desk(),
        Preset::Smoke => ExperimentConfig::smoke(),
        Preset::Ablation => ExperimentConfig::ablation(),
        Preset::Full => ExperimentConfig::full(),
    }
}

/// Overlays the fields present in `text` onto the preset.
fn merge(base: &ExperimentConfig, text: &str) -> Result<ExperimentConfig> {
    let mut value = serde_json::to_value(base)?;
    let patch: serde_json::Value = serde_json::from_str(text)?;
    overlay(&mut value, patch);
    Ok(serde_json::from_value(value)?)
}

fn overlay(dst: &mut serde_json::Value, src: serde_json::Value) {
    match (dst, src) {
        (serde_json::Value::Object(d), serde_json::Value::Object(s)) => {
            for (k, v) in s {
                match d.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        d.insert(k, v);
                    }
                }
            }
        }
        (d, s) => *d = s,
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let base = preset(c.preset);
    let mut cfg = match &c.config {
        Some(path) => {
            let shown = path.display();
            let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(format!("reading {shown}")))?;
            merge(&base, &text).map_err(|e| e.context(format!("parsing {shown}")))?
        }
        None => base,
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn summarize(out: &Path, log: &mut JsonLog) -> Result<()> {
    let mut md = String::from("# Results\n");
    let mut found = 0;
    for (title, dir) in [("Evaluation", "eval"), ("Ablation", "ablation")] {
        let path = out.join(dir).join("report.json");
        if !path.is_file() {
            continue;
        }
        found += 1;
        let report: Report = read_json(&path)?;
        md.push_str(&format!(
            "\n## {title}\n\n| Method | IoU | CD x{} | EMD x{} |\n|---|---|---|---|\n",
            report.cd_scale, report.emd_scale
        ));
        for m in &report.methods {
            let (cd, emd) = (m.cd.scaled(report.cd_scale), m.emd.scaled(report.emd_scale));
            md.push_str(&format!(
                "| {} | {:.3} ± {:.3} | {:.3} ± {:.3} | {:.3} ± {:.3} |\n",
                m.method, m.iou.mean, m.iou.std, cd.mean, cd.std, emd.mean, emd.std
            ));
            log.event("method", json!({"report": dir, "method": m.method, "iou": m.iou.mean, "cd": m.cd.mean, "emd": m.emd.mean}))?;
        }
    }
    if found == 0 {
        return Err(Error::InvalidArgument(format!("no report.json under {}/eval or {}/ablation", out.display(), out.display())));
    }
    std::fs::write(out.join("report.md"), md)?;
    Ok(())
}

fn run(command: &Command) -> Result<()> {
    let (name, c) = match command {
        Command::Synth(c) => ("synth", c),
        Command::Project(c) => ("project", c),
        Command::TrainSeg(c) => ("train-seg", c),
        Command::TrainGen(c) => ("train-gen", c),
        Command::Eval(c) => ("eval", c),
        Command::Ablate(c) => ("ablate", c),
        Command::Report(c) => ("report", c),
    };
    let out = c.out.as_path();
    let cfg = load_config(c)?;
    let mut log = JsonLog::create(&out.join("logs").join(format!("{name}.jsonl")), !c.quiet)?;
    log.event("start", json!({"command": name, "seed": cfg.seed}))?;
    match command {
        Command::Synth(_) => run_synth(&cfg, out, &mut log).map(drop),
        Command::Project(_) => run_project(&cfg, out, &mut log).map(drop),
        Command::TrainSeg(_) => run_train_seg(&cfg, out, &mut log).map(drop),
        Command::TrainGen(_) => run_train_gen(&cfg, out, &mut log).map(drop),
        Command::Eval(_) => run_eval(&cfg, out, &mut log).map(drop),
        Command::Ablate(_) => run_ablation(&cfg, out, &mut log).map(drop),
        Command::Report(_) => summarize(out, &mut log),
    }?;
    log.event("done", json!({"command": name}))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = if e.is_numeric() { (3, "numeric") } else { (2, "validation") };
            eprintln!("{}", json!({"event": "error", "kind": kind, "message": e.to_string()}));
            ExitCode::from(code)
        }
    }
}
