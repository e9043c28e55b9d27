use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adgve_core::config::{Config, VlmMode};
use adgve_core::fusion::{train_fusion, FeatureBundle, FusionModel};
use adgve_core::pipeline::{
    ablate, filter_reports, make_backend, read_manifest, read_manifest_entries, summarize, QualityReport, Scored, Scorer,
};
use adgve_core::prompt::Catalog;
use adgve_core::scene::serialize_annotation;
use adgve_core::synth::{balanced_specs, gen_instructions, gen_scenario, random_spec, truth_path, ScenarioSpec};
use adgve_core::vlm::{Recorder, VlmBackend};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adgve", version, about = "Driving-aware quality scoring for generated driving videos")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Config file (`section.key = value`); falls back to $ADGVE_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Keep a video iff its score is strictly above this.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Fusion model file; the built-in default model otherwise.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// remote | hash_stub | oracle_stub | replay
    #[arg(long, global = true)]
    vlm_mode: Option<String>,
    /// Transcript to replay from (replay mode) or record into (other modes).
    #[arg(long, global = true)]
    transcript: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Score annotation files (or a manifest) and write one report line per video.
    Score {
        inputs: Vec<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Score a manifest and write the kept subset in input order.
    Filter {
        manifest: PathBuf,
        /// Report file; defaults to `<out>.reports.jsonl`.
        #[arg(long)]
        reports: Option<PathBuf>,
    },
    /// Fit the fusion head to the labels of a manifest's videos.
    TrainFusion { manifest: PathBuf },
    /// Write synthetic scenes, their ground truth and a manifest to --out.
    GenSynthetic {
        /// JSON file with one scenario spec or a list of them.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Number of random scenes when no spec is given.
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 0.4)]
        violation_rate: f64,
        /// Alternate clean and single-violation scenes instead of sampling.
        #[arg(long)]
        balanced: bool,
        /// Also write this many generation instructions.
        #[arg(long)]
        instructions: Option<usize>,
    },
    /// Coverage over a threshold grid and SRCC with modules removed.
    Ablate {
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3")]
        taus: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "none,frame_checks,clip_checks,lane,objects,semantics,motion,all")]
        drop: Vec<String>,
    },
    /// Summarize a report file: statistics, histograms and flag counts.
    Report { reports: PathBuf },
}

fn load_config(c: &Common) -> Result<Config> {
    let path = c.config.clone().or_else(|| std::env::var_os("ADGVE_CONFIG").map(PathBuf::from));
    let mut cfg = match path {
        Some(p) => Config::load(&p).with_context(|| format!("loading config {}", p.display()))?,
        None => Config::default(),
    };
    if let Some(t) = c.threshold {
        cfg.threshold = t;
    }
    if let Some(m) = &c.vlm_mode {
        cfg.vlm.mode = m.parse::<VlmMode>().map_err(anyhow::Error::msg)?;
    }
    if let Some(s) = c.seed {
        cfg.vlm.seed = s;
        cfg.fusion.seed = s;
    }
    if cfg.vlm.mode == VlmMode::Replay {
        if let Some(t) = &c.transcript {
            cfg.vlm.transcript_path = Some(t.clone());
        }
    }
    Ok(cfg)
}

fn load_model(c: &Common, catalog: &Catalog) -> Result<FusionModel> {
    match &c.model {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading model {}", p.display()))?;
            Ok(FusionModel::from_text(&text, catalog)?)
        }
        None => Ok(FusionModel::default_for(catalog)),
    }
}

type SharedRecorder = std::sync::Arc<Recorder<Box<dyn VlmBackend>>>;

/// Scorer plus the recorder that must be flushed afterwards, if any.
struct Session {
    scorer: Scorer,
    record: Option<(PathBuf, SharedRecorder)>,
}

impl Session {
    fn open(c: &Common) -> Result<Self> {
        let cfg = load_config(c)?;
        let catalog = Catalog::builtin().clone();
        let model = load_model(c, &catalog)?;
        let inner = make_backend(&cfg.vlm)?;
        let (backend, record): (Box<dyn VlmBackend>, _) = match (&c.transcript, cfg.vlm.mode) {
            (Some(path), mode) if mode != VlmMode::Replay => {
                let rec = std::sync::Arc::new(Recorder::new(inner));
                (Box::new(rec.clone()), Some((path.clone(), rec)))
            }
            _ => (inner, None),
        };
        Ok(Self { scorer: Scorer::new(cfg, catalog, model, backend)?, record })
    }

    fn score(&self, paths: &[PathBuf], jobs: usize) -> Result<Vec<Scored>> {
        let scored = self.scorer.score_batch(paths, jobs);
        for s in scored.iter().filter(|s| s.report.is_error()) {
            eprintln!("error: {}: {}", s.report.source, s.report.error.as_deref().unwrap_or(""));
        }
        if let Some((path, rec)) = &self.record {
            rec.write(path)?;
        }
        Ok(scored)
    }
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn report_lines(scored: &[Scored]) -> String {
    scored.iter().map(|s| s.report.to_line() + "\n").collect()
}

fn batch_status(scored: &[Scored]) -> ExitCode {
    let errors = scored.iter().filter(|s| s.report.is_error()).count();
    match errors {
        0 => ExitCode::SUCCESS,
        e if e == scored.len() => ExitCode::from(3),
        _ => ExitCode::from(2),
    }
}

fn labeled(scored: &[Scored]) -> Vec<(FeatureBundle, f64)> {
    scored.iter().filter_map(|s| Some((s.bundle.clone()?, s.report.label?))).collect()
}

fn usage(msg: &str) -> Result<ExitCode> {
    eprintln!("usage error: {msg}");
    Ok(ExitCode::from(1))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let c = &cli.common;
    match &cli.cmd {
        Cmd::Score { inputs, manifest } => {
            let mut paths = inputs.clone();
            if let Some(m) = manifest {
                paths.extend(read_manifest(m)?);
            }
            if paths.is_empty() {
                return usage("no inputs: pass annotation files or --manifest");
            }
            let session = Session::open(c)?;
            let scored = session.score(&paths, c.jobs)?;
            write_out(c.out.as_deref(), &report_lines(&scored))?;
            Ok(batch_status(&scored))
        }
        Cmd::Filter { manifest, reports } => {
            let session = Session::open(c)?;
            let entries = read_manifest_entries(manifest)?;
            let paths: Vec<PathBuf> = entries.iter().map(|(_, p)| p.clone()).collect();
            let scored = session.score(&paths, c.jobs)?;
            let all: Vec<QualityReport> = scored.iter().map(|s| s.report.clone()).collect();
            let outcome = filter_reports(&all, session.scorer.cfg.threshold);
            let kept: String = outcome.kept.iter().map(|&i| format!("{}\n", entries[i].0)).collect();
            write_out(c.out.as_deref(), &kept)?;
            let reports = reports.clone().or_else(|| c.out.as_ref().map(|o| o.with_extension("reports.jsonl")));
            if let Some(r) = reports {
                std::fs::write(&r, report_lines(&scored)).with_context(|| format!("writing {}", r.display()))?;
            }
            eprintln!("kept {}/{} coverage {:.4}", outcome.kept.len(), outcome.total, outcome.coverage);
            Ok(batch_status(&scored))
        }
        Cmd::TrainFusion { manifest } => {
            let Some(out) = c.out.as_ref() else { return usage("--out is required") };
            let session = Session::open(c)?;
            let scored = session.score(&read_manifest(manifest)?, c.jobs)?;
            let data = labeled(&scored);
            let (model, report) = train_fusion(&data, &session.scorer.cfg.fusion, &session.scorer.catalog)?;
            std::fs::write(out, model.to_text()).with_context(|| format!("writing {}", out.display()))?;
            eprintln!("{}", serde_json::to_string(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::GenSynthetic { spec, count, violation_rate, balanced, instructions } => {
            let Some(out) = c.out.as_ref() else { return usage("--out is required") };
            let seed = c.seed.unwrap_or(0);
            let specs: Vec<ScenarioSpec> = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    match serde_json::from_str::<Vec<ScenarioSpec>>(&text) {
                        Ok(v) => v,
                        Err(_) => vec![serde_json::from_str::<ScenarioSpec>(&text)
                            .with_context(|| format!("parsing scenario spec {}", p.display()))?],
                    }
                }
                None if *balanced => balanced_specs(*count, seed),
                None => (0..*count as u64).map(|i| random_spec(seed + i, *violation_rate)).collect(),
            };
            std::fs::create_dir_all(out)?;
            let mut manifest = String::new();
            for s in &specs {
                let (priors, truth) = gen_scenario(s)?;
                let name = format!("{}.json", priors.meta.video_id);
                let path = out.join(&name);
                std::fs::write(&path, serialize_annotation(&priors))?;
                std::fs::write(truth_path(&path), serde_json::to_string_pretty(&truth)? + "\n")?;
                manifest.push_str(&name);
                manifest.push('\n');
            }
            std::fs::write(out.join("manifest.txt"), manifest)?;
            if let Some(n) = instructions {
                let lines: String = gen_instructions(*n, seed)
                    .iter()
                    .map(|i| serde_json::to_string(i).map(|l| l + "\n"))
                    .collect::<Result<_, _>>()?;
                std::fs::write(out.join("instructions.jsonl"), lines)?;
            }
            eprintln!("wrote {} scenes to {}", specs.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Ablate { manifest, taus, drop } => {
            let session = Session::open(c)?;
            let scored = session.score(&read_manifest(manifest)?, c.jobs)?;
            let data: Vec<(FeatureBundle, Option<f64>)> =
                scored.iter().filter_map(|s| Some((s.bundle.clone()?, s.report.label))).collect();
            let drops: Vec<&str> = drop.iter().map(String::as_str).collect();
            let table = ablate(&data, &session.scorer.model, session.scorer.layout(), taus, &drops)?;
            write_out(c.out.as_deref(), &table.to_text())?;
            Ok(batch_status(&scored))
        }
        Cmd::Report { reports } => {
            let text = std::fs::read_to_string(reports).with_context(|| format!("reading {}", reports.display()))?;
            let parsed: Vec<QualityReport> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .enumerate()
                .map(|(i, l)| QualityReport::from_line(l).with_context(|| format!("line {}", i + 1)))
                .collect::<Result<_>>()?;
            let summary = summarize(&parsed)?;
            match &c.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir)?;
                    std::fs::write(dir.join("summary.txt"), summary.to_text())?;
                    std::fs::write(dir.join("histogram.tsv"), summary.plot_data())?;
                    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
                }
                None => print!("{}\n{}", summary.to_text(), summary.plot_data()),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
