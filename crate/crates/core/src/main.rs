use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use semcom::channel::{ChannelConfig, ChannelKind};
use semcom::codec::Ratio;
use semcom::detector::write_detections_csv;
use semcom::harness::config::OUT_DIR_ENV;
use semcom::harness::eval::evaluate;
use semcom::harness::plot::{rate_chart, snr_chart};
use semcom::harness::sweep::{
    load_trained, read_sweep_csv, report_complexity, sweep_rate, sweep_snr, write_complexity_csv, write_sweep_csv,
    SweepRow, OUTPUT_NOTE,
};
use semcom::harness::{Mode, RunConfig, Workspace};
use semcom::{Error, Result};

#[derive(Parser)]
#[command(name = "semcom", version, about = "Semantic communication for object detection over noisy channels")]
struct Cli {
    /// TOML run configuration; omitted fields take their defaults.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config file).
    #[arg(short, long, global = true, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Chart {
    Snr,
    Rate,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective configuration as TOML.
    Config,
    /// Generate the training and evaluation scenes and the knowledge graph.
    GenData,
    /// Train knowledge-graph embeddings from metapath walks.
    EmbedKg,
    /// Train the pipeline for one compression ratio and seed.
    Train {
        #[arg(long)]
        rate: Option<Ratio>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Evaluate a trained pipeline at one channel condition.
    Eval {
        #[arg(long)]
        rate: Option<Ratio>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long)]
        channel: Option<ChannelKind>,
    },
    /// mAP over the SNR grid for every configured rate, channel, mode and seed.
    SweepSnr,
    /// mAP over the configured compression ratios at the rate-sweep SNR.
    SweepRate,
    /// Parameter and operation counts of the configured system.
    CountOps,
    /// Render a sweep CSV as an SVG chart.
    Plot {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "snr")]
        kind: Chart,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cat = e.category();
            eprintln!("error ({cat}): {e}");
            ExitCode::from(cat.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_rows(path: &Path, rows: &[SweepRow], cfg: &RunConfig) -> Result<()> {
    let mut w = create(path)?;
    write_sweep_csv(&mut w, rows, &cfg.data.world.class_names())?;
    w.flush()?;
    println!("{OUTPUT_NOTE}");
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let dir = cfg.out_dir();
    match cli.command {
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Command::GenData => {
            let ws = Workspace::new(cfg, &dir)?;
            let train = ws.train_data()?;
            let eval = ws.eval_data()?;
            let kg = ws.knowledge_graph()?;
            println!(
                "{} training scenes, {} evaluation scenes, knowledge graph with {} entities and {} triples in {}",
                train.len(),
                eval.len(),
                kg.entity_count(),
                kg.triple_count(),
                dir.display()
            );
            Ok(())
        }
        Command::EmbedKg => {
            let ws = Workspace::new(cfg, &dir)?;
            let emb = ws.embeddings()?;
            let names = &ws.cfg.data.world.class_names();
            for (i, a) in names.iter().enumerate() {
                for b in &names[i + 1..] {
                    println!("{a} ~ {b}: {:.4}", emb.similarity(a, b)?);
                }
            }
            println!("embeddings written to {}", ws.embeddings_path().display());
            Ok(())
        }
        Command::Train { rate, seed, mode } => {
            let mut cfg = cfg;
            if let Some(m) = mode {
                cfg.train.mode = m;
            }
            let rate = rate.unwrap_or(cfg.train.rate);
            let seed = seed.unwrap_or(cfg.train.seed);
            let ws = Workspace::new(cfg, &dir)?;
            let tm = ws.trained(rate, seed)?;
            let r = &tm.model.codec.rate;
            println!(
                "trained R={} (achieved {:.6}, C={}, k={}) seed {seed}",
                r.requested,
                r.achieved(),
                r.channels,
                r.k
            );
            Ok(())
        }
        Command::Eval { rate, seed, mode, snr, channel } => {
            let rate = rate.unwrap_or(cfg.train.rate);
            let seed = seed.unwrap_or(cfg.train.seed);
            let mode = mode.unwrap_or(cfg.train.mode);
            let snr = snr.unwrap_or(cfg.eval.snr_db);
            let channel = channel.unwrap_or(cfg.eval.channel);
            let ws = Workspace::new(cfg, &dir)?;
            let tm = load_trained(&ws.cfg, &dir, rate, seed, mode)?;
            let data = ws.eval_data()?;
            let emb = match mode {
                Mode::MsedKg => Some(ws.embeddings()?),
                Mode::Msed => None,
            };
            let ch = ChannelConfig::from_snr_db(channel, tm.model.codec.config.power, snr, 0)?
                .with_receiver(ws.cfg.eval.receiver);
            let res =
                evaluate(&tm.model, &tm.store, &data, &ch, ws.cfg.eval.seed, emb.as_ref(), ws.cfg.eval.iou_threshold)?;
            let (report, dets) = match mode {
                Mode::Msed => (&res.initial, &res.initial_detections),
                Mode::MsedKg => (res.refined.as_ref().expect("graph head evaluated"), &res.refined_detections),
            };
            let names = ws.cfg.data.world.class_names();
            println!("{OUTPUT_NOTE}");
            println!("{mode} {channel} {snr} dB R={rate} seed {seed}: mAP {:.4}", report.map);
            for (n, ap) in names.iter().zip(&report.per_class) {
                match ap {
                    Some(v) => println!("  {n}: {v:.4}"),
                    None => println!("  {n}: no ground truth"),
                }
            }
            let path = dir
                .join("eval")
                .join(format!("detections_seed{seed}_r{}-{}_{channel}_{snr}dB.csv", rate.num, rate.den));
            let mut w = create(&path)?;
            writeln!(w, "{OUTPUT_NOTE}")?;
            write_detections_csv(&mut w, dets, &names)?;
            w.flush()?;
            Ok(())
        }
        Command::SweepSnr | Command::SweepRate => {
            let snr = matches!(cli.command, Command::SweepSnr);
            let ws = Workspace::new(cfg, &dir)?;
            let s = &ws.cfg.sweep;
            let rates = if snr { &s.snr_rates } else { &s.rates };
            let mode = if s.modes.contains(&Mode::MsedKg) { Mode::MsedKg } else { Mode::Msed };
            let mut models = Vec::new();
            for &r in rates {
                for &seed in &s.seeds {
                    models.push(load_trained(&ws.cfg, &dir, r, seed, mode)?);
                }
            }
            let data = ws.eval_data()?;
            let emb = if mode == Mode::MsedKg { Some(ws.embeddings()?) } else { None };
            let rows = if snr {
                sweep_snr(&models, &data, emb.as_ref(), &ws.cfg)?
            } else {
                sweep_rate(&models, &data, emb.as_ref(), &ws.cfg)?
            };
            let name = if snr { "sweep_snr.csv" } else { "sweep_rate.csv" };
            write_rows(&dir.join(name), &rows, &ws.cfg)
        }
        Command::CountOps => {
            let rows = report_complexity(&cfg)?;
            let path = dir.join("complexity.csv");
            let mut w = create(&path)?;
            write_complexity_csv(&mut w, &rows)?;
            w.flush()?;
            write_complexity_csv(&mut std::io::stdout(), &rows)?;
            Ok(())
        }
        Command::Plot { input, kind, output } => {
            let text = fs::read_to_string(&input)
                .map_err(|e| Error::Format(format!("cannot read {}: {e}", input.display())))?;
            let (_, rows) = read_sweep_csv(&text)?;
            let svg = match kind {
                Chart::Snr => snr_chart(&rows),
                Chart::Rate => rate_chart(&rows),
            };
            let out = output.unwrap_or_else(|| input.with_extension("svg"));
            fs::write(&out, svg)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}
