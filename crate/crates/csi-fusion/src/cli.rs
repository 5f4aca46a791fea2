//! Command-line entry point.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::parser::ValueSource;
use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use csi_fusion_core::analysis::{
    comm_cost_report, compare_feature_spaces, count_flops, flop_breakdown, fusion_overhead,
};
use csi_fusion_core::data::{split_dataset, DatasetSplit, SampleBundle};
use csi_fusion_core::model::{Method, ModelConfig, NetKind, TrainedModel};
use csi_fusion_core::preprocess::{
    align_bundles, default_null_indices, preprocess_pipeline, PreprocessConfig, SavGol, StageOrder,
};
use csi_fusion_core::synth::{gen_record, make_dataset, ChannelConfig};
use csi_fusion_core::train::{
    compare_all, evaluate, model_config, train, EpochLog, MetricsReport, TrainConfig,
};
use log::info;

use crate::checkpoint::{load_model, save_model};
use crate::config::read_config;
use crate::dataset::{read_dataset, write_dataset};
use crate::edge::{run_client, start_server, ClientOptions, ServerOptions};
use crate::error::{read_file, write_file, Error, Result};
use crate::ingest::ingest_pcap;
use crate::plot::{read_log, Chart, Metric};
use crate::raw::{read_record, write_record};

#[derive(Debug, Parser)]
#[command(
    name = "csi-fusion",
    version,
    about = "Wi-Fi CSI/RSSI passenger counting toolkit",
    arg_required_else_help = true
)]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    /// key = value file supplying defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode Nexmon CSI frames from a PCAP capture into a raw record.
    Ingest(IngestArgs),
    /// Turn raw records into a segmented train/test dataset.
    Preprocess(PreprocessArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train one method.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset's test split.
    Eval(EvalArgs),
    /// Train and compare all six methods.
    Compare(CompareArgs),
    /// Intra/inter-class variance of original vs RSSI-weighted features.
    Analyze(AnalyzeArgs),
    /// Per-inference FLOP counts.
    Flops(FlopsArgs),
    /// Run the edge server.
    Serve(ServeArgs),
    /// Stream one receiver's features to an edge server.
    Send(SendArgs),
    /// Chart training logs.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub pcap: PathBuf,
    #[arg(long, default_value_t = 5500)]
    pub port: u16,
    #[arg(long, default_value_t = 256)]
    pub subcarriers: usize,
    #[arg(long)]
    pub label: u16,
    #[arg(long)]
    pub receiver: u16,
    /// Output CSR1 record.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PreArgs {
    #[arg(long, default_value_t = 300)]
    pub tw: usize,
    #[arg(long, default_value_t = 150)]
    pub ts: usize,
    #[arg(long, default_value_t = 11)]
    pub sg_window: usize,
    #[arg(long, default_value_t = 3)]
    pub sg_order: usize,
    /// Skip Savitzky-Golay smoothing.
    #[arg(long)]
    pub no_sg: bool,
    /// Rescale by RSSI before smoothing.
    #[arg(long)]
    pub rescale_first: bool,
    #[arg(long, default_value_t = 1)]
    pub decimate: usize,
    /// Comma-separated centered null indices, "none", or "default".
    #[arg(long, default_value = "default")]
    pub nulls: String,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
}

impl PreArgs {
    fn config(&self, subcarriers: usize) -> Result<PreprocessConfig> {
        let null_indices = match self.nulls.as_str() {
            "default" => default_null_indices(subcarriers),
            "none" | "" => Vec::new(),
            list => list
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<i32>()
                        .map_err(|_| Error::Usage(format!("bad null index {v:?}")))
                })
                .collect::<Result<_>>()?,
        };
        let c = PreprocessConfig {
            null_indices,
            savgol: (!self.no_sg).then_some(SavGol {
                window: self.sg_window,
                polyorder: self.sg_order,
            }),
            t_w: self.tw,
            t_s: self.ts,
            decimation: self.decimate,
            order: if self.rescale_first {
                StageOrder::RescaleThenFilter
            } else {
                StageOrder::FilterThenRescale
            },
        };
        c.validate().map_err(|e| Error::Usage(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// CSR1 records, one per (receiver, class).
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of classes; defaults to the largest label plus one.
    #[arg(long)]
    pub classes: Option<usize>,
    #[command(flatten)]
    pub pre: PreArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 21)]
    pub classes: usize,
    #[arg(long, default_value_t = 2)]
    pub receivers: usize,
    #[arg(long, default_value_t = 12_000)]
    pub packets: usize,
    #[arg(long, default_value_t = 256)]
    pub subcarriers: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write every raw record as CSR1 into this directory.
    #[arg(long)]
    pub raw_dir: Option<PathBuf>,
    #[arg(long, default_value_t = ChannelConfig::default().noise_std)]
    pub noise: f64,
    #[arg(long, default_value_t = ChannelConfig::default().fidget_rate)]
    pub fidget: f64,
    #[arg(long, default_value_t = ChannelConfig::default().fidget_time)]
    pub fidget_time: f64,
    #[arg(long, default_value_t = ChannelConfig::default().person_power)]
    pub person_power: f64,
    #[arg(long, default_value_t = ChannelConfig::default().shadow_fraction)]
    pub shadow_fraction: f64,
    #[arg(long, default_value_t = ChannelConfig::default().shadow_depth_db)]
    pub shadow_depth: f64,
    #[arg(long, default_value_t = ChannelConfig::default().shadow_len)]
    pub shadow_len: f64,
    #[command(flatten)]
    pub pre: PreArgs,
}

#[derive(Debug, Clone, Args)]
pub struct Hyper {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.1)]
    pub smoothing: f64,
}

impl Hyper {
    fn config(&self) -> Result<TrainConfig> {
        let c = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            label_smoothing: self.smoothing,
            seed: self.seed,
        };
        c.validate().map_err(|e| Error::Usage(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "proposed")]
    pub method: Method,
    #[command(flatten)]
    pub hyper: Hyper,
    /// Output WTS1 checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Evaluate on the training split instead.
    #[arg(long)]
    pub train_split: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Markdown table output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Repeat with seeds seed, seed+1, ...; the table reports mean ± std.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[command(flatten)]
    pub hyper: Hyper,
    /// Directory for per-method, per-seed CSV logs.
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub dims: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    /// A single method; all six when omitted.
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long, default_value_t = 300)]
    pub tw: usize,
    /// Subcarriers after null removal.
    #[arg(long, default_value_t = 242)]
    pub subcarriers: usize,
    #[arg(long, default_value_t = 21)]
    pub classes: usize,
    #[arg(long, default_value_t = 2)]
    pub receivers: usize,
    /// Take the geometry from a dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Also print per-segment communication cost.
    #[arg(long)]
    pub comm: bool,
    /// Per-layer breakdown.
    #[arg(long)]
    pub layers: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub receivers: usize,
    #[arg(long, default_value = "127.0.0.1:5600")]
    pub listen: String,
    /// Seconds an incomplete segment waits for the other receivers.
    #[arg(long, default_value_t = 5.0)]
    pub timeout: f64,
    /// Exit after this many receiver sessions end.
    #[arg(long)]
    pub sessions: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SendArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Receiver index, from 0.
    #[arg(long)]
    pub receiver: u16,
    /// Class whose recording is streamed.
    #[arg(long, default_value_t = 0)]
    pub class: u16,
    #[arg(long, default_value = "127.0.0.1:5600")]
    pub server: String,
    /// Send channel-mean pooled CSI features.
    #[arg(long)]
    pub pool: bool,
    /// Stream the training split instead of the test split.
    #[arg(long)]
    pub train_split: bool,
    #[arg(long, default_value_t = 10.0)]
    pub timeout: f64,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Training logs to overlay.
    #[arg(long, required = true, num_args = 1..)]
    pub log: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// train_loss, test_loss, test_acc, test_f1 or all.
    #[arg(long, default_value = "all")]
    pub metric: String,
    #[arg(long, default_value_t = 72)]
    pub width: usize,
    #[arg(long, default_value_t = 16)]
    pub height: usize,
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match parse(argv) {
        Ok(cli) => cli,
        Err(ParseOutcome::Exit(code)) => return code,
        Err(ParseOutcome::Failed(e)) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

enum ParseOutcome {
    Exit(i32),
    Failed(Error),
}

fn clap_outcome(e: clap::Error) -> ParseOutcome {
    use clap::error::ErrorKind;
    let _ = e.print();
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ParseOutcome::Exit(0),
        _ => ParseOutcome::Exit(1),
    }
}

/// Flags on the command line win over the config file, which wins over
/// built-in defaults.
fn parse(mut argv: Vec<OsString>) -> std::result::Result<Cli, ParseOutcome> {
    let cmd = Cli::command();
    let matches = cmd
        .clone()
        .try_get_matches_from(&argv)
        .map_err(clap_outcome)?;
    if let Some(path) = matches.get_one::<PathBuf>("config") {
        let pairs = read_config(path).map_err(ParseOutcome::Failed)?;
        let (name, sub) = matches.subcommand().expect("subcommand required");
        let sub_cmd = cmd.find_subcommand(name).expect("known subcommand");
        for (key, value) in pairs {
            let arg = sub_cmd
                .get_arguments()
                .find(|a| {
                    a.get_long() == Some(key.as_str())
                        && !matches!(a.get_id().as_str(), "config" | "help")
                })
                .ok_or_else(|| {
                    ParseOutcome::Failed(Error::Usage(format!(
                        "unknown config key `{key}` for `{name}`"
                    )))
                })?;
            if sub.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
                continue;
            }
            if matches!(arg.get_action(), ArgAction::SetTrue) {
                match value.as_str() {
                    "true" | "1" | "yes" => argv.push(format!("--{key}").into()),
                    "false" | "0" | "no" => {}
                    _ => {
                        return Err(ParseOutcome::Failed(Error::Usage(format!(
                            "config key `{key}` expects true or false, got `{value}`"
                        ))))
                    }
                }
            } else {
                argv.push(format!("--{key}").into());
                argv.push(value.into());
            }
        }
    }
    let matches = cmd.try_get_matches_from(&argv).map_err(clap_outcome)?;
    Cli::from_arg_matches(&matches).map_err(clap_outcome)
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Flops(a) => cmd_flops(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Send(a) => cmd_send(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let bytes = read_file(&a.pcap)?;
    let rec = ingest_pcap(&bytes, a.port, a.subcarriers, a.receiver, a.label)?;
    write_record(&a.out, &rec)?;
    println!(
        "{}: {} packets x {} subcarriers, receiver {}, label {}",
        a.out.display(),
        rec.packets(),
        rec.subcarriers(),
        rec.receiver_id(),
        rec.label()
    );
    Ok(())
}

fn cmd_preprocess(a: PreprocessArgs) -> Result<()> {
    let mut by_label: BTreeMap<u16, BTreeMap<u16, _>> = BTreeMap::new();
    for path in &a.inputs {
        let rec = read_record(path)?;
        let slot = by_label.entry(rec.label()).or_default();
        if slot.insert(rec.receiver_id(), rec).is_some() {
            return Err(Error::Usage(format!(
                "{}: a second record for the same receiver and label",
                path.display()
            )));
        }
    }
    let classes = a
        .classes
        .unwrap_or_else(|| by_label.keys().max().map_or(0, |&l| usize::from(l) + 1));
    let mut bundles = Vec::new();
    let mut receivers = None;
    for (label, recs) in by_label {
        if recs.keys().copied().ne(0..recs.len() as u16) {
            return Err(Error::Usage(format!(
                "label {label}: receivers {:?} are not 0..{}",
                recs.keys().collect::<Vec<_>>(),
                recs.len()
            )));
        }
        if *receivers.get_or_insert(recs.len()) != recs.len() {
            return Err(Error::Usage(format!(
                "label {label} has {} receivers",
                recs.len()
            )));
        }
        let per_receiver = recs
            .values()
            .map(|r| preprocess_pipeline(r, &a.pre.config(r.subcarriers())?).map_err(Error::from))
            .collect::<Result<Vec<_>>>()?;
        bundles.extend(align_bundles(per_receiver)?);
    }
    let split = split_dataset(bundles, a.pre.train_fraction, classes)?;
    write_dataset(&split, &a.out)?;
    print_split(&a.out, &split)
}

fn print_split(path: &Path, split: &DatasetSplit) -> Result<()> {
    let (n, t, s) = split.dims()?.unwrap_or((0, 0, 0));
    println!(
        "{}: {} classes, {n} receivers, window {t}x{s}, {} train / {} test bundles",
        path.display(),
        split.n_classes,
        split.train.len(),
        split.test.len()
    );
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let channel = ChannelConfig {
        n_receivers: a.receivers,
        n_classes: a.classes,
        subcarriers: a.subcarriers,
        packets: a.packets,
        noise_std: a.noise,
        fidget_rate: a.fidget,
        fidget_time: a.fidget_time,
        person_power: a.person_power,
        shadow_fraction: a.shadow_fraction,
        shadow_depth_db: a.shadow_depth,
        shadow_len: a.shadow_len,
        seed: a.seed,
        ..ChannelConfig::default()
    };
    channel
        .validate()
        .map_err(|e| Error::Usage(e.to_string()))?;
    let pre = a.pre.config(a.subcarriers)?;
    if let Some(dir) = &a.raw_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        for y in 0..a.classes {
            for n in 0..a.receivers {
                let (rec, _) = gen_record(&channel, y as u16, n, a.seed)?;
                write_record(&dir.join(format!("y{y}_r{n}.csr1")), &rec)?;
            }
        }
    }
    let bundles = make_dataset(&channel, &pre)?;
    let split = split_dataset(bundles, a.pre.train_fraction, a.classes)?;
    write_dataset(&split, &a.out)?;
    print_split(&a.out, &split)
}

fn open_log(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    use std::io::Write;
    let f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    writeln!(w, "{}", EpochLog::CSV_HEADER).map_err(|e| Error::file(path, e))?;
    Ok(w)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    use std::io::Write;
    let split = read_dataset(&a.data)?;
    let config = a.hyper.config()?;
    let mut log = a.log.as_deref().map(open_log).transpose()?;
    let mut io_err = None;
    let (model, report) = train(&split, a.method, &config, &mut |e| {
        info!(
            "epoch {} loss {:.4} acc {:.2} f1 {:.2}",
            e.epoch, e.train_loss, e.test_acc, e.test_f1
        );
        if let Some(w) = log.as_mut() {
            if let Err(err) = writeln!(w, "{}", e.csv_line()).and_then(|_| w.flush()) {
                io_err.get_or_insert(err);
            }
        }
    })?;
    if let (Some(e), Some(p)) = (io_err, &a.log) {
        return Err(Error::file(p, e));
    }
    save_model(&model, &a.out)?;
    println!(
        "{}: accuracy {:.2}% F1 {:.2}% (last {} epochs {:.2}% / {:.2}%)",
        a.method,
        report.accuracy,
        report.f1_macro,
        report
            .history
            .len()
            .min(csi_fusion_core::train::LAST_EPOCHS),
        report.last10_accuracy,
        report.last10_f1
    );
    Ok(())
}

fn check_geometry(model: &TrainedModel, split: &DatasetSplit) -> Result<()> {
    let data = model_config(split)?;
    if data != model.config {
        return Err(Error::Usage(format!(
            "checkpoint expects {:?}, dataset provides {:?}",
            model.config, data
        )));
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let split = read_dataset(&a.data)?;
    check_geometry(&model, &split)?;
    let set = if a.train_split {
        &split.train
    } else {
        &split.test
    };
    let e = evaluate(&model, set, a.batch_size.max(1))?;
    println!("method {}", model.method);
    println!("accuracy {:.2}%", e.accuracy);
    println!("macro F1 {:.2}%", e.f1_macro);
    println!("loss {:.4}", e.loss);
    println!("confusion (rows: label, columns: prediction)");
    let l = e.confusion.classes();
    for r in 0..l {
        let row: Vec<String> = (0..l)
            .map(|c| format!("{:>5}", e.confusion.get(r, c)))
            .collect();
        println!("{:>3} {}", r, row.join(""));
    }
    Ok(())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Markdown table of last-10-epoch means, one row per method.
pub fn comparison_table(config: &ModelConfig, runs: &[Vec<MetricsReport>]) -> String {
    let mut out = String::new();
    let seeds = runs.len();
    let _ = writeln!(
        out,
        "F1 is macro-averaged; accuracy and F1 are means over the last 10 epochs{}.\n",
        if seeds > 1 {
            format!(", then mean ± std over {seeds} seeds")
        } else {
            String::new()
        }
    );
    let _ = writeln!(out, "| Method | Accuracy (%) | F1 (%) | GFLOPs |");
    let _ = writeln!(out, "|---|---|---|---|");
    for method in Method::ALL {
        let pick = |f: fn(&MetricsReport) -> f64| -> Vec<f64> {
            runs.iter()
                .flatten()
                .filter(|r| r.method == method)
                .map(f)
                .collect()
        };
        let acc = pick(|r| r.last10_accuracy);
        if acc.is_empty() {
            continue;
        }
        let f1 = pick(|r| r.last10_f1);
        let fmt = |v: &[f64]| {
            let (m, s) = mean_std(v);
            if seeds > 1 {
                format!("{m:.2} ± {s:.2}")
            } else {
                format!("{m:.2}")
            }
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:.4} |",
            method,
            fmt(&acc),
            fmt(&f1),
            count_flops(method, config).gflops()
        );
    }
    out
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    use std::io::Write;
    if a.seeds == 0 {
        return Err(Error::Usage("--seeds must be at least 1".into()));
    }
    let split = read_dataset(&a.data)?;
    let mc = model_config(&split)?;
    if let Some(dir) = &a.log_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    let mut runs = Vec::new();
    for k in 0..a.seeds {
        let mut config = a.hyper.config()?;
        config.seed = a.hyper.seed + k as u64;
        let mut logs: BTreeMap<Method, Vec<EpochLog>> = BTreeMap::new();
        let rows = compare_all(&split, &config, &mut |m, e| {
            info!(
                "seed {} {m} epoch {} acc {:.2}",
                config.seed, e.epoch, e.test_acc
            );
            logs.entry(m).or_default().push(*e);
        })?;
        if let Some(dir) = &a.log_dir {
            for (m, log) in &logs {
                let path = dir.join(format!("{m}_seed{}.csv", config.seed));
                let mut w = open_log(&path)?;
                for e in log {
                    writeln!(w, "{}", e.csv_line()).map_err(|e| Error::file(&path, e))?;
                }
            }
        }
        runs.push(rows.into_iter().map(|(_, r)| r).collect::<Vec<_>>());
    }
    let table = comparison_table(&mc, &runs);
    print!("{table}");
    if let Some(out) = &a.out {
        write_file(out, table.as_bytes())?;
    }
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    if model.method != Method::Proposed {
        return Err(Error::Usage(format!(
            "analyze needs a proposed checkpoint, got {}",
            model.method
        )));
    }
    let split = read_dataset(&a.data)?;
    check_geometry(&model, &split)?;
    let r = compare_feature_spaces(&model.members[0], &split.test, a.dims, a.batch_size.max(1))?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Class spread of fused test features after projection to {} principal components ({} samples).\n",
        r.dims, r.samples
    );
    let _ = writeln!(
        out,
        "| Features | Avg. intra-class variance | Inter-class variance |"
    );
    let _ = writeln!(out, "|---|---|---|");
    let _ = writeln!(
        out,
        "| Original | {:.6} | {:.6} |",
        r.original.avg_intra, r.original.inter
    );
    let _ = writeln!(
        out,
        "| RSSI-weighted | {:.6} | {:.6} |",
        r.weighted.avg_intra, r.weighted.inter
    );
    print!("{out}");
    if let Some(path) = &a.out {
        write_file(path, out.as_bytes())?;
    }
    Ok(())
}

fn cmd_flops(a: FlopsArgs) -> Result<()> {
    let config = match &a.data {
        Some(p) => model_config(&read_dataset(p)?)?,
        None => ModelConfig::new(a.tw, a.subcarriers, a.classes, a.receivers)
            .map_err(|e| Error::Usage(e.to_string()))?,
    };
    let methods: Vec<Method> = a.method.map_or_else(|| Method::ALL.to_vec(), |m| vec![m]);
    println!(
        "geometry: T_w {} x S' {}, {} classes, {} receivers",
        config.t_w, config.subcarriers, config.n_classes, config.n_receivers
    );
    println!("| Method | MACs | FLOPs | GFLOPs |");
    println!("|---|---|---|---|");
    for &m in &methods {
        let f = count_flops(m, &config);
        println!("| {m} | {} | {} | {:.4} |", f.macs, f.flops(), f.gflops());
    }
    println!(
        "fusion-weight module: {:.6} GFLOPs",
        fusion_overhead(&config).gflops()
    );
    if a.layers {
        for &m in &methods {
            println!("\n{m}");
            for l in flop_breakdown(m, &config) {
                println!(
                    "  {:<10} {:<14} {:?} -> {:?}  MACs {} elementwise {}",
                    l.stage,
                    format!("{:?}", l.kind),
                    l.input,
                    l.output,
                    l.count.macs,
                    l.count.elementwise
                );
            }
        }
    }
    if a.comm {
        let c = comm_cost_report(&config);
        println!("\nper-segment bytes: raw {} | features {} | channel-pooled features {} | features/raw {:.3}", c.raw_bytes, c.feature_bytes, c.pooled_bytes, c.ratio);
    }
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    if model.method != Method::Proposed {
        return Err(Error::Usage(format!(
            "serve needs a proposed checkpoint, got {}",
            model.method
        )));
    }
    if !(a.timeout > 0.0 && a.timeout.is_finite()) {
        return Err(Error::Usage(format!(
            "timeout {} must be positive",
            a.timeout
        )));
    }
    let net = model.members.into_iter().next().expect("one member");
    debug_assert_eq!(net.kind(), NetKind::Proposed);
    let handle = start_server(
        net,
        a.receivers,
        a.listen.as_str(),
        ServerOptions {
            timeout: Duration::from_secs_f64(a.timeout),
            max_sessions: a.sessions,
        },
    )?;
    println!("listening on {}", handle.local_addr());
    let stats = handle.join();
    println!(
        "sessions {} rejected {} predictions {} timed out {}",
        stats.sessions, stats.rejected, stats.predictions, stats.timed_out
    );
    Ok(())
}

fn cmd_send(a: SendArgs) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    if model.method != Method::Proposed {
        return Err(Error::Usage(format!(
            "send needs a proposed checkpoint, got {}",
            model.method
        )));
    }
    let split = read_dataset(&a.data)?;
    check_geometry(&model, &split)?;
    if usize::from(a.receiver) >= model.config.n_receivers {
        return Err(Error::Usage(format!(
            "receiver {} outside 0..{}",
            a.receiver, model.config.n_receivers
        )));
    }
    let set = if a.train_split {
        &split.train
    } else {
        &split.test
    };
    let bundles: Vec<&SampleBundle> = set.iter().filter(|b| b.label() == a.class).collect();
    if bundles.is_empty() {
        return Err(Error::Usage(format!(
            "no segments of class {} in {}",
            a.class,
            a.data.display()
        )));
    }
    let opts = ClientOptions {
        pool: a.pool,
        timeout: Duration::from_secs_f64(a.timeout.max(0.0)),
    };
    let s = run_client(
        &model.members[0],
        &bundles,
        a.receiver,
        a.server.as_str(),
        &opts,
    )?;
    let correct = s
        .predictions
        .iter()
        .filter(|(_, p)| p.class == a.class)
        .count();
    println!(
        "sent {} frames ({} payload bytes), received {} frames, {} predictions",
        s.frames_sent,
        s.payload_bytes_sent,
        s.frames_received,
        s.predictions.len()
    );
    if s.predictions.len() < bundles.len() {
        println!(
            "{} segments got no prediction",
            bundles.len() - s.predictions.len()
        );
    }
    if !s.predictions.is_empty() {
        println!(
            "{correct} of {} predictions are class {}",
            s.predictions.len(),
            a.class
        );
    }
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> Result<()> {
    let metrics: Vec<Metric> = if a.metric == "all" {
        Metric::ALL.to_vec()
    } else {
        vec![Metric::ALL
            .into_iter()
            .find(|m| m.name() == a.metric)
            .ok_or_else(|| Error::Usage(format!("unknown metric {}", a.metric)))?]
    };
    if a.width < 10 || a.height < 3 {
        return Err(Error::Usage("chart must be at least 10 x 3".into()));
    }
    let logs = a
        .log
        .iter()
        .map(|p| {
            let name = p.file_stem().map_or_else(
                || p.display().to_string(),
                |s| s.to_string_lossy().into_owned(),
            );
            Ok((name, read_log(p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = String::new();
    for m in metrics {
        out += &Chart::from_logs(m, &logs).render(a.width, a.height);
        out.push('\n');
    }
    match &a.out {
        Some(p) => write_file(p, out.as_bytes())?,
        None => print!("{out}"),
    }
    Ok(())
}
