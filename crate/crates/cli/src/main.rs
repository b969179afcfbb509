use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

use unidyg::encoder::Attention;
use unidyg::fgat::GateRule;
use unidyg::graph::Mode;
use unidyg::harness::{self, PlantedConfig, Variant};
use unidyg::io::{load_dataset, write_events, Sidecar};
use unidyg::state::Dynamics;
use unidyg::train::{self, Dataset, Model, TrainConfig};

mod config;
mod manifest;

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "unidyg", version, about = "Frequency-domain link prediction on dynamic graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rewrite a CTDG or DTDG file as a time-ordered event CSV plus sidecar.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, early-stop on validation, and score the test range.
    Train(TrainArgs),
    /// Re-score a saved checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the full model and its three ablated variants for each seed.
    Ablate {
        #[command(flatten)]
        run: TrainArgs,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "full,w_gat,wo_fgat_n,wo_global", value_parser = parse_variant)]
        variants: Vec<Variant>,
    },
    /// Test AUC versus injected noise level for each attention variant.
    NoiseSweep {
        #[command(flatten)]
        run: TrainArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4")]
        levels: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "fgat_n,fgat,gat")]
        variants: Vec<Attention>,
    },
    /// Amplitude spectrum of one edge feature and of inter-arrival gaps.
    Spectrum {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 400)]
        window: usize,
        #[arg(long, default_value_t = 0)]
        feature: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Event CSV, snapshot CSV, or `planted` for the synthetic stream.
    #[arg(long)]
    data: String,
    /// Input format; taken from the config or checkpoint when omitted.
    #[arg(long)]
    mode: Option<Mode>,
    /// Seed of the synthetic stream when `--data planted`.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long)]
    data: String,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// Flat key=value or JSON file of config fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    attention: Option<Attention>,
    #[arg(long)]
    dynamics: Option<Dynamics>,
    #[arg(long)]
    gate_rule: Option<GateRule>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    neighbors: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    time_dim: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown variant `{s}` (full, w_gat, wo_fgat_n, wo_global)"))
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => config::load(p)?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => { $(if let Some(v) = self.$flag { c.$field = v; })* };
        }
        set!(mode => mode, attention => attention, dynamics => dynamics, gate_rule => gate_rule, theta => theta,
             neighbors => neighbors, batch => batch_size, lr => lr, seed => seed, epochs => epochs,
             patience => patience, dim => dim, time_dim => time_dim);
        c.validate()?;
        Ok(c)
    }

    fn data(&self, mode: Mode) -> Result<Dataset> {
        DataArgs { data: self.data.clone(), mode: Some(mode), data_seed: self.data_seed }.load(mode)
    }
}

impl DataArgs {
    fn load(&self, fallback: Mode) -> Result<Dataset> {
        let mode = self.mode.unwrap_or(fallback);
        if self.data == "planted" {
            let events = harness::planted_pattern(&PlantedConfig { seed: self.data_seed, ..PlantedConfig::default() }, mode)?;
            return Ok(Dataset::new(events, mode)?);
        }
        Ok(load_dataset(Path::new(&self.data), mode).with_context(|| format!("loading {}", self.data))?)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn convert(input: &Path, mode: Mode, out: &Path) -> Result<()> {
    let ds = load_dataset(input, mode)?;
    let mut m = Manifest::new(out, "convert", None)?;
    write_events(create(&m.path("events.csv"))?, &ds.events)?;
    m.add("events.csv", "events", None);
    Sidecar::for_stream(&ds.events, mode).write(&m.path("events.sidecar.json"))?;
    m.add("events.sidecar.json", "sidecar", None);
    info!("{} events written", ds.events.len());
    m.finish()
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.config()?;
    let ds = args.data(cfg.mode)?;
    let mut m = Manifest::new(&args.out, "train", Some(cfg.seed))?;
    write_json(&m.path("config.json"), &cfg)?;
    m.add("config.json", "config", Some(cfg.seed));
    let mut log = create(&m.path("metrics.jsonl"))?;
    let mut log_err = None;
    let out = train::train_with(&cfg, &ds, &mut |e| {
        info!("epoch {} loss {:.5} val auc {:.4} ap {:.4}", e.epoch, e.loss, e.val_auc, e.val_ap);
        let line = serde_json::to_string(e).map_err(anyhow::Error::from);
        if let Err(err) = line.and_then(|l| writeln!(log, "{l}").and_then(|_| log.flush()).map_err(Into::into)) {
            log_err.get_or_insert(err);
        }
    })?;
    if let Some(err) = log_err {
        return Err(err.context("writing metrics.jsonl"));
    }
    m.add("metrics.jsonl", "epoch-metrics", Some(cfg.seed));
    out.model.save(&m.path("model.json"))?;
    m.add("model.json", "checkpoint", Some(cfg.seed));
    Sidecar::for_split(&cfg, &out.prepared).write(&m.path("split.json"))?;
    m.add("split.json", "sidecar", Some(cfg.seed));
    write_json(&m.path("summary.json"), &out.summary)?;
    m.add("summary.json", "summary", Some(cfg.seed));
    let t = &out.summary.test;
    info!("test auc {:.4} ap {:.4} mrr {:?}", t.auc, t.ap, t.mrr);
    m.finish()
}

fn run_eval(checkpoint: &Path, data: &DataArgs, out: &Path) -> Result<()> {
    let model = Model::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let ds = data.load(model.config.mode)?;
    let metrics = train::evaluate(&model, &ds)?;
    let mut m = Manifest::new(out, "eval", Some(model.config.seed))?;
    write_json(&m.path("metrics.json"), &metrics)?;
    m.add("metrics.json", "test-metrics", Some(model.config.seed));
    m.finish()
}

fn run_ablate(run: &TrainArgs, seeds: &[u64], variants: &[Variant]) -> Result<()> {
    let cfg = run.config()?;
    let ds = run.data(cfg.mode)?;
    let mut m = Manifest::new(&run.out, "ablate", None)?;
    let rows = harness::ablate(&ds, variants, seeds, &cfg, &mut |r| info!("{} seed {} auc {:.4}", r.variant, r.seed, r.auc))?;
    harness::write_ablation_csv(create(&m.path("ablation.csv"))?, &rows)?;
    for s in seeds {
        m.add("ablation.csv", "ablation", Some(*s));
    }
    m.finish()
}

fn run_sweep(run: &TrainArgs, levels: &[f64], seeds: &[u64], variants: &[Attention]) -> Result<()> {
    if levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
        bail!("noise levels must lie in [0, 1]");
    }
    let cfg = run.config()?;
    let ds = run.data(cfg.mode)?;
    let mut m = Manifest::new(&run.out, "noise-sweep", None)?;
    let rows = harness::noise_sweep(&ds, levels, variants, seeds, &cfg, &mut |r| {
        info!("level {} {} seed {} auc {:.4}", r.level, r.variant, r.seed, r.auc)
    })?;
    harness::write_sweep_csv(create(&m.path("sweep.csv"))?, &rows)?;
    for s in seeds {
        m.add("sweep.csv", "noise-sweep", Some(*s));
    }
    m.finish()
}

fn run_spectrum(data: &DataArgs, window: usize, feature: usize, out: &Path) -> Result<()> {
    let ds = data.load(Mode::Ctdg)?;
    let rows = harness::spectrum(&ds.events, window, feature)?;
    let mut m = Manifest::new(out, "spectrum", None)?;
    harness::write_spectrum_csv(create(&m.path("spectrum.csv"))?, &rows)?;
    m.add("spectrum.csv", "spectrum", None);
    let amps: Vec<f64> = rows.iter().map(|r| r.amp_feature).collect();
    let gaps: Vec<f64> = rows.iter().map(|r| r.amp_interarrival).collect();
    m.extra("low_band_fraction_feature", json!(harness::low_band_fraction(&amps)));
    m.extra("low_band_fraction_interarrival", json!(harness::low_band_fraction(&gaps)));
    m.finish()
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Convert { input, mode, out } => convert(input, *mode, out),
        Command::Train(args) => run_train(args),
        Command::Eval { checkpoint, data, out } => run_eval(checkpoint, data, out),
        Command::Ablate { run, seeds, variants } => run_ablate(run, seeds, variants),
        Command::NoiseSweep { run, levels, seeds, variants } => run_sweep(run, levels, seeds, variants),
        Command::Spectrum { data, window, feature, out } => run_spectrum(data, *window, *feature, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
