use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use trafficlens::config::{ConfigError, ExtractionConfig, RunConfig, RunPaths};
use trafficlens::dataset::FeatureTable;
use trafficlens::evalkit::{
    default_profiles, fraction_above, generate_profile, generate_windows, write_profile_pcap,
    EvalReport, SynthProfile,
};
use trafficlens::features::{DetailStdMode, FeatureConfig};
use trafficlens::ingest::LabelManifest;
use trafficlens::model::{Model, WindowScore};
use trafficlens::ood::BandwidthRule;
use trafficlens::pipeline::{featurize, fit_model, windows_from_pcaps, PipelineError};
use trafficlens::protonet::{ProtoError, TrainConfig};
use trafficlens::windowing::{WindowConfig, WindowError};

use crate::{Command, ExtractionArgs, SynthArgs, TrainArgs};

const THREADS_ENV: &str = "TRAFFICLENS_THREADS";

/// A request that cannot be run as given.
#[derive(Debug)]
pub struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub enum ExitKind {
    Usage,
    Data,
    Numeric,
}

pub fn classify(err: &anyhow::Error) -> ExitKind {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<ConfigError>() || cause.is::<WindowError>() {
            return ExitKind::Usage;
        }
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            if matches!(p, PipelineError::Config(_)) {
                return ExitKind::Usage;
            }
            if p.is_numeric() {
                return ExitKind::Numeric;
            }
        }
        if matches!(
            cause.downcast_ref::<ProtoError>(),
            Some(ProtoError::NonFiniteLoss { .. })
        ) {
            return ExitKind::Numeric;
        }
    }
    ExitKind::Data
}

/// Caps the global rayon pool when `TRAFFICLENS_THREADS` is set.
pub fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            usage(format!(
                "{THREADS_ENV} must be a positive integer, got {value:?}"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(())
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Extract {
            inputs,
            output,
            manifest,
            require_labels,
            synth,
            synth_args,
            extraction,
        } => extract(
            &inputs,
            &output,
            manifest.as_deref(),
            require_labels,
            synth,
            &synth_args,
            &extraction,
        ),
        Command::Synth {
            out_dir,
            duration,
            synth_args,
        } => synth(&out_dir, duration, &synth_args),
        Command::Train {
            features,
            output,
            ood_threshold,
            train: args,
        } => train(&features, &output, ood_threshold, &args),
        Command::Predict {
            model,
            features,
            ood_threshold,
            output,
        } => predict(&model, &features, ood_threshold, output.as_deref(), false),
        Command::OodReport {
            model,
            features,
            ood_threshold,
            output,
        } => predict(&model, &features, ood_threshold, output.as_deref(), true),
        Command::Eval {
            model,
            features,
            ood_threshold,
            output,
            ece_bins,
        } => eval(
            &model,
            &features,
            ood_threshold,
            output.as_deref(),
            ece_bins,
        ),
    }
}

fn extraction_config(args: &ExtractionArgs) -> Result<ExtractionConfig> {
    let config = ExtractionConfig {
        window: WindowConfig::new(args.window_seconds, args.bin_seconds, args.min_packets)?,
        features: FeatureConfig {
            idle_threshold: args.idle_threshold,
            detail_std: DetailStdMode::default(),
        },
        mask_sizes: args.mask_sizes,
    };
    config.validate()?;
    Ok(config)
}

fn select_profiles(args: &SynthArgs) -> Result<Vec<SynthProfile>> {
    if !(args.rate_scale.is_finite() && args.rate_scale > 0.0) {
        return Err(usage("--rate-scale must be positive"));
    }
    if !(args.jitter.is_finite() && args.jitter >= 0.0) {
        return Err(usage("--jitter must be non-negative"));
    }
    let all = default_profiles();
    let chosen: Vec<SynthProfile> = if args.profiles.is_empty() {
        all
    } else {
        args.profiles
            .iter()
            .map(|name| {
                all.iter()
                    .find(|p| &p.name == name)
                    .cloned()
                    .ok_or_else(|| {
                        let known: Vec<&str> = all.iter().map(|p| p.name.as_str()).collect();
                        usage(format!(
                            "unknown profile {name}; known: {}",
                            known.join(", ")
                        ))
                    })
            })
            .collect::<Result<_>>()?
    };
    Ok(chosen
        .into_iter()
        .map(|p| p.perturbed(args.rate_scale, args.jitter))
        .collect())
}

/// Files given directly, plus `*.pcap` files of given directories in name
/// order.
fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .with_context(|| format!("reading {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.is_file()
                        && p.extension()
                            .is_some_and(|e| e.eq_ignore_ascii_case("pcap"))
                })
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    Ok(files)
}

fn extract(
    inputs: &[PathBuf],
    output: &Path,
    manifest: Option<&Path>,
    require_labels: bool,
    synth: Option<usize>,
    synth_args: &SynthArgs,
    args: &ExtractionArgs,
) -> Result<()> {
    let extraction = extraction_config(args)?;
    let windows = match synth {
        Some(per_profile) => {
            if !inputs.is_empty() {
                return Err(usage(
                    "--synth generates its own traffic; drop the input paths",
                ));
            }
            let profiles = select_profiles(synth_args)?;
            let per: Vec<_> = profiles
                .par_iter()
                .map(|p| generate_windows(p, per_profile, &extraction.window, synth_args.seed))
                .collect();
            per.into_iter().flatten().collect()
        }
        None => {
            if inputs.is_empty() {
                return Err(usage("no inputs given"));
            }
            let manifest = match manifest {
                Some(path) => LabelManifest::load(path)
                    .with_context(|| format!("manifest {}", path.display()))?,
                None => LabelManifest::default(),
            };
            let files = expand_inputs(inputs)?;
            if files.is_empty() {
                bail!("no .pcap files found in the given inputs");
            }
            log::info!("reading {} capture(s)", files.len());
            windows_from_pcaps(&files, &manifest, &extraction.window, require_labels)?
        }
    };
    let table = featurize(windows, &extraction)?;
    table
        .save(output)
        .with_context(|| format!("writing {}", output.display()))?;
    println!("{} windows -> {}", table.len(), output.display());
    for (label, count) in table.label_counts() {
        println!("{:<16} {count}", label.as_deref().unwrap_or("(unlabeled)"));
    }
    Ok(())
}

fn synth(out_dir: &Path, duration: f64, args: &SynthArgs) -> Result<()> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(usage("--duration must be positive"));
    }
    let profiles = select_profiles(args)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    for p in &profiles {
        let own = generate_profile(p, duration, args.seed);
        let path = write_profile_pcap(out_dir, p, &own)?;
        println!(
            "{:<14} {:>4} connections -> {}",
            p.name,
            own.len(),
            path.display()
        );
    }
    Ok(())
}

fn train(features: &Path, output: &Path, ood_threshold: f64, args: &TrainArgs) -> Result<()> {
    let kde_bandwidth = match args.kde_bandwidth.as_str() {
        "silverman" => BandwidthRule::Silverman,
        "normal-reference" => BandwidthRule::NormalReference,
        other => return Err(usage(format!("unknown --kde-bandwidth {other}"))),
    };
    let table =
        FeatureTable::load(features).with_context(|| format!("reading {}", features.display()))?;
    let data = table.labeled()?;
    if data.classes.len() < 2 {
        bail!(
            "training needs at least 2 classes; {} contains only {}",
            features.display(),
            data.classes.first().map_or("no labels", String::as_str)
        );
    }
    let config = RunConfig {
        extraction: table.extraction,
        train: TrainConfig {
            n_episodes: args.episodes,
            n_query: args.queries,
            s_train: args.support,
            learning_rate: args.lr,
            seed: args.seed,
            ..TrainConfig::default()
        },
        s_cal: args.s_cal,
        kde_bandwidth,
        ood_threshold,
        paths: RunPaths {
            inputs: vec![features.to_path_buf()],
            ..RunPaths::default()
        },
        ..RunConfig::default()
    };
    config.validate()?;
    let counts: Vec<String> = data
        .classes
        .iter()
        .zip(data.class_counts())
        .map(|(c, n)| format!("{c}={n}"))
        .collect();
    log::info!("training on {} windows: {}", data.len(), counts.join(" "));
    let started = Instant::now();
    let model = fit_model(&data, &config)?;
    model
        .save(output)
        .with_context(|| format!("writing {}", output.display()))?;
    println!(
        "model with {} classes -> {} ({:.1} s)",
        model.class_names.len(),
        output.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

/// Loads a model and a feature file made under the same extraction settings.
fn load_pair(model: &Path, features: &Path) -> Result<(Model, FeatureTable)> {
    let model = Model::load(model).with_context(|| format!("reading model {}", model.display()))?;
    let table =
        FeatureTable::load(features).with_context(|| format!("reading {}", features.display()))?;
    if table.extraction != model.config.extraction {
        return Err(PipelineError::ExtractionMismatch.into());
    }
    Ok((model, table))
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn predict(
    model_path: &Path,
    features: &Path,
    threshold: Option<f64>,
    output: Option<&Path>,
    by_score: bool,
) -> Result<()> {
    let (model, table) = load_pair(model_path, features)?;
    let threshold = threshold.unwrap_or(model.config.ood_threshold);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(usage("--ood-threshold must be in [0, 1]"));
    }
    let rows: Vec<&[f64]> = table.rows.iter().map(|r| r.as_slice()).collect();
    let scores = model.score_all(&rows)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    if by_score {
        order.sort_by(|&a, &b| {
            scores[b]
                .ood_score
                .total_cmp(&scores[a].ood_score)
                .then(a.cmp(&b))
        });
    }
    let mut out = open_output(output)?;
    let name = |s: &WindowScore| model.class_names[s.class].as_str();
    if by_score {
        writeln!(
            out,
            "window\tood_score\tchi2_score\tpredicted\tconfidence\tlabel"
        )?;
    } else {
        writeln!(
            out,
            "window\tpredicted\tconfidence\tood_score\tchi2_score\tlabel"
        )?;
    }
    for &i in &order {
        let s = &scores[i];
        let label = table.labels[i].as_deref().unwrap_or("");
        if by_score {
            writeln!(
                out,
                "{i}\t{:.6}\t{:.6}\t{}\t{:.6}\t{label}",
                s.ood_score,
                s.chi2_score,
                name(s),
                s.confidence
            )?;
        } else {
            writeln!(
                out,
                "{i}\t{}\t{:.6}\t{:.6}\t{:.6}\t{label}",
                name(s),
                s.confidence,
                s.ood_score,
                s.chi2_score
            )?;
        }
    }
    let mut counts = vec![0usize; model.class_names.len()];
    for s in &scores {
        counts[s.class] += 1;
    }
    writeln!(out, "# predicted counts")?;
    for (c, n) in model.class_names.iter().zip(counts) {
        writeln!(out, "# {c}\t{n}")?;
    }
    let ood: Vec<f64> = scores.iter().map(|s| s.ood_score).collect();
    let above = ood.iter().filter(|&&v| v > threshold).count();
    writeln!(
        out,
        "# ood_threshold={threshold} above={above} total={} fraction={:.4}",
        ood.len(),
        fraction_above(&ood, threshold)
    )?;
    out.flush()?;
    Ok(())
}

fn eval(
    model_path: &Path,
    features: &Path,
    threshold: Option<f64>,
    output: Option<&Path>,
    bins: usize,
) -> Result<()> {
    let (model, table) = load_pair(model_path, features)?;
    let threshold = threshold.unwrap_or(model.config.ood_threshold);
    let data = table.labeled_with(&model.class_names)?;
    let scores = model.score_all(&data.rows)?;
    let predicted: Vec<usize> = scores.iter().map(|s| s.class).collect();
    let confidences: Vec<f64> = scores.iter().map(|s| s.confidence).collect();
    let ood: Vec<f64> = scores.iter().map(|s| s.ood_score).collect();
    let report = EvalReport::new(
        model.class_names.clone(),
        &data.labels,
        &predicted,
        &confidences,
        bins,
    )?
    .with_ood(&ood, threshold);
    print!("{report}");
    if let Some(path) = output {
        fs::write(path, report.to_kv()).with_context(|| format!("writing {}", path.display()))?;
        println!("report -> {}", path.display());
    }
    Ok(())
}
