//! `covct`: phantom generation, lung segmentation, extraction, slice
//! filtering, classifier training, scan prediction and evaluation.
//!
//! Every setting is a `key=value` entry. Defaults are overridden by the
//! `--config` file, which is overridden by explicit flags; the resolved
//! entries are written to a run manifest that can be passed back with
//! `--config` to repeat the run. Exit codes: 0 success, 1 runtime failure,
//! 2 usage error. A failed run removes the outputs it created.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

use run::{CliError, CliResult, Outputs, RunConfig};

#[derive(Parser)]
#[command(
    name = "covct",
    version,
    about = "Lung CT segmentation and COVID-19 scan classification"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// key=value settings file; explicit flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed
    #[arg(long)]
    seed: Option<String>,
    /// Worker threads
    #[arg(long)]
    jobs: Option<String>,
}

#[derive(Args, Clone)]
struct SegFlags {
    /// region, otsu, kmeans or unet
    #[arg(long)]
    method: Option<String>,
    /// UNet model file, for --method unet
    #[arg(long)]
    unet: Option<String>,
    /// Region-growing intensity tolerance
    #[arg(long)]
    region_tolerance: Option<String>,
}

#[derive(Args, Clone)]
struct ExtractFlags {
    /// Side length slices are resized to
    #[arg(long)]
    work_size: Option<String>,
    #[arg(long)]
    erode_radius: Option<String>,
    #[arg(long)]
    close_radius: Option<String>,
    /// Roberts edge magnitude threshold
    #[arg(long)]
    edge_thresh: Option<String>,
}

#[derive(Args, Clone)]
struct FilterFlags {
    /// 45x45, 42x42 or 40x40
    #[arg(long)]
    filter_preset: Option<String>,
    /// Minimum non-dark pixels; overrides --filter-preset
    #[arg(long)]
    threshold: Option<String>,
    /// Comma-separated fallback thresholds, strictly decreasing
    #[arg(long)]
    fallbacks: Option<String>,
    /// Keep every slice when all thresholds remove everything (true/false)
    #[arg(long)]
    keep_all: Option<String>,
}

#[derive(Args, Clone)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    /// Initial learning rate
    #[arg(long)]
    lr: Option<String>,
    /// Square input side length
    #[arg(long)]
    input_size: Option<String>,
    /// Loss log CSV (epoch,step,lr,loss)
    #[arg(long)]
    log: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic CT dataset with ground-truth lung masks
    Phantom {
        #[command(flatten)]
        common: Common,
        /// Output dataset directory
        #[arg(long)]
        out: Option<String>,
        /// Slice side length in pixels
        #[arg(long)]
        size: Option<String>,
        #[arg(long)]
        scans_per_class: Option<String>,
        #[arg(long)]
        slices_min: Option<String>,
        #[arg(long)]
        slices_max: Option<String>,
        /// Gaussian noise sigma
        #[arg(long)]
        noise: Option<String>,
    },
    /// Segment lungs in every slice; optionally score against true masks
    Segment {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seg: SegFlags,
        /// Dataset directory
        #[arg(long = "in")]
        input: Option<String>,
        /// Directory of true masks, <truth>/<scan_id>/<slice>.pgm
        #[arg(long)]
        truth: Option<String>,
        /// Mask output directory
        #[arg(long)]
        out: Option<String>,
        /// Dice summary CSV (method,avg_dice,min_dice)
        #[arg(long)]
        report: Option<String>,
    },
    /// Train a UNet on slices and masks
    TrainUnet {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
        /// Dataset directory
        #[arg(long = "in")]
        input: Option<String>,
        /// Mask directory; defaults to <in>/masks
        #[arg(long)]
        truth: Option<String>,
        /// Model file to write
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        base_channels: Option<String>,
        /// Use batch normalization (true/false)
        #[arg(long)]
        batchnorm: Option<String>,
    },
    /// Segment, clean up and cut out the lungs of every slice
    Extract {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seg: SegFlags,
        #[command(flatten)]
        extract: ExtractFlags,
        #[arg(long = "in")]
        input: Option<String>,
        /// Output dataset directory
        #[arg(long)]
        out: Option<String>,
    },
    /// Drop slices with too little visible lung
    Filter {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        filter: FilterFlags,
        #[arg(long = "in")]
        input: Option<String>,
        #[arg(long)]
        out: Option<String>,
    },
    /// Train the slice classifier on extracted, labeled slices
    TrainClf {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long = "in")]
        input: Option<String>,
        /// Model file to write
        #[arg(long)]
        out: Option<String>,
        /// Comma-separated conv widths, e.g. 16,32,64,128
        #[arg(long)]
        conv_channels: Option<String>,
        #[arg(long)]
        dense_units: Option<String>,
        #[arg(long)]
        dropout: Option<String>,
    },
    /// Run the full pipeline on raw scans and write per-scan decisions
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seg: SegFlags,
        #[command(flatten)]
        extract: ExtractFlags,
        #[command(flatten)]
        filter: FilterFlags,
        #[arg(long = "in")]
        input: Option<String>,
        /// Classifier model file
        #[arg(long)]
        model: Option<String>,
        /// Decision CSV to write
        #[arg(long)]
        out: Option<String>,
        /// Per-slice probability CSV to write
        #[arg(long)]
        slices: Option<String>,
        /// A slice votes COVID below this non-COVID probability
        #[arg(long)]
        slice_threshold: Option<String>,
    },
    /// Score scan verdicts against labels
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// CSV with scan_id and verdict columns
        #[arg(long)]
        predictions: Option<String>,
        /// Labeled dataset directory, or CSV with scan_id and label columns
        #[arg(long)]
        labels: Option<String>,
        /// Metrics CSV; defaults to <predictions>.metrics.csv
        #[arg(long)]
        out: Option<String>,
    },
    /// Majority vote over three decision files
    Hybrid {
        #[command(flatten)]
        common: Common,
        /// Three comma-separated decision CSVs
        #[arg(long)]
        inputs: Option<String>,
        #[arg(long)]
        out: Option<String>,
    },
}

type Flags = Vec<(&'static str, Option<String>)>;

impl SegFlags {
    fn flags(&self) -> Flags {
        vec![
            ("method", self.method.clone()),
            ("unet", self.unet.clone()),
            ("region_tolerance", self.region_tolerance.clone()),
        ]
    }
}

impl ExtractFlags {
    fn flags(&self) -> Flags {
        vec![
            ("work_size", self.work_size.clone()),
            ("erode_radius", self.erode_radius.clone()),
            ("close_radius", self.close_radius.clone()),
            ("edge_thresh", self.edge_thresh.clone()),
        ]
    }
}

impl FilterFlags {
    fn flags(&self) -> Flags {
        vec![
            ("filter_preset", self.filter_preset.clone()),
            ("threshold", self.threshold.clone()),
            ("fallbacks", self.fallbacks.clone()),
            ("keep_all", self.keep_all.clone()),
        ]
    }
}

impl TrainFlags {
    fn flags(&self) -> Flags {
        vec![
            ("epochs", self.epochs.clone()),
            ("batch_size", self.batch_size.clone()),
            ("initial_lr", self.lr.clone()),
            ("input_size", self.input_size.clone()),
            ("log", self.log.clone()),
        ]
    }
}

type Handler = fn(&RunConfig, &mut Outputs) -> CliResult<()>;

/// Subcommand name, defaults, config file, flag entries and handler.
fn plan(
    cmd: Cmd,
) -> (
    &'static str,
    covct::config::Config,
    Option<PathBuf>,
    Flags,
    Handler,
) {
    match cmd {
        Cmd::Phantom {
            common,
            out,
            size,
            scans_per_class,
            slices_min,
            slices_max,
            noise,
        } => (
            "phantom",
            {
                let mut c = commands::phantom_defaults();
                c.set("jobs", 1);
                c
            },
            common.config,
            vec![
                ("out", out),
                ("rng_seed", common.seed),
                ("jobs", common.jobs),
                ("image_size", size),
                ("scans_per_class", scans_per_class),
                ("slices_min", slices_min),
                ("slices_max", slices_max),
                ("noise_sigma", noise),
            ],
            commands::phantom,
        ),
        Cmd::Segment {
            common,
            seg,
            input,
            truth,
            out,
            report,
        } => {
            let mut f = vec![
                ("in", input),
                ("truth", truth),
                ("out", out),
                ("report", report),
                ("seed", common.seed),
                ("jobs", common.jobs),
            ];
            f.extend(seg.flags());
            (
                "segment",
                commands::segment_defaults(),
                common.config,
                f,
                commands::segment,
            )
        }
        Cmd::TrainUnet {
            common,
            train,
            input,
            truth,
            out,
            base_channels,
            batchnorm,
        } => {
            let mut f = vec![
                ("in", input),
                ("truth", truth),
                ("out", out),
                ("rng_seed", common.seed),
                ("jobs", common.jobs),
                ("base_channels", base_channels),
                ("with_batchnorm", batchnorm),
            ];
            f.extend(train.flags());
            (
                "train-unet",
                commands::train_unet_defaults(),
                common.config,
                f,
                commands::train_unet_cmd,
            )
        }
        Cmd::Extract {
            common,
            seg,
            extract,
            input,
            out,
        } => {
            let mut f = vec![
                ("in", input),
                ("out", out),
                ("seed", common.seed),
                ("jobs", common.jobs),
            ];
            f.extend(seg.flags());
            f.extend(extract.flags());
            (
                "extract",
                commands::extract_defaults_config(),
                common.config,
                f,
                commands::extract,
            )
        }
        Cmd::Filter {
            common,
            filter,
            input,
            out,
        } => {
            let mut f = vec![
                ("in", input),
                ("out", out),
                ("seed", common.seed),
                ("jobs", common.jobs),
            ];
            f.extend(filter.flags());
            (
                "filter",
                commands::filter_defaults(),
                common.config,
                f,
                commands::filter,
            )
        }
        Cmd::TrainClf {
            common,
            train,
            input,
            out,
            conv_channels,
            dense_units,
            dropout,
        } => {
            let mut f = vec![
                ("in", input),
                ("out", out),
                ("rng_seed", common.seed),
                ("jobs", common.jobs),
                ("conv_channels", conv_channels),
                ("dense_units", dense_units),
                ("dropout", dropout),
            ];
            f.extend(train.flags());
            (
                "train-clf",
                commands::train_clf_defaults(),
                common.config,
                f,
                commands::train_clf,
            )
        }
        Cmd::Predict {
            common,
            seg,
            extract,
            filter,
            input,
            model,
            out,
            slices,
            slice_threshold,
        } => {
            let mut f = vec![
                ("in", input),
                ("model", model),
                ("out", out),
                ("slices", slices),
                ("slice_threshold", slice_threshold),
                ("seed", common.seed),
                ("jobs", common.jobs),
            ];
            f.extend(seg.flags());
            f.extend(extract.flags());
            f.extend(filter.flags());
            (
                "predict",
                commands::predict_defaults(),
                common.config,
                f,
                commands::predict,
            )
        }
        Cmd::Evaluate {
            common,
            predictions,
            labels,
            out,
        } => (
            "evaluate",
            covct::config::Config::new(),
            common.config,
            vec![
                ("predictions", predictions),
                ("labels", labels),
                ("out", out),
                ("seed", common.seed),
                ("jobs", common.jobs),
            ],
            commands::evaluate,
        ),
        Cmd::Hybrid {
            common,
            inputs,
            out,
        } => (
            "hybrid",
            covct::config::Config::new(),
            common.config,
            vec![
                ("inputs", inputs),
                ("out", out),
                ("seed", common.seed),
                ("jobs", common.jobs),
            ],
            commands::hybrid,
        ),
    }
}

fn usage_text(command: &str) -> String {
    let mut cli = Cli::command();
    match cli.find_subcommand_mut(command) {
        Some(sub) => sub.render_help().to_string(),
        None => cli.render_usage().to_string(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    let (name, defaults, config, flags, handler) = plan(cli.cmd);
    let mut outputs = Outputs::default();
    let result = RunConfig::resolve(name, defaults, config.as_deref(), flags).and_then(|rc| {
        let r = handler(&rc, &mut outputs);
        if r.is_err() {
            outputs.remove_all();
        }
        r
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{}", usage_text(name));
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
