//! Stage composition used by the command line and the end-to-end tests.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, ExtractionConfig, RunConfig};
use crate::dataset::{stratified_split, DatasetError, FeatureTable, LabeledData};
use crate::features::{extract_features, mask_packet_sizes, FeatureError};
use crate::ingest::{
    assemble_flows, label_from_filename, parse_pcap, Connection, LabelManifest, PcapError,
};
use crate::model::{Model, ModelError};
use crate::ood::{calibrate, CalibrationConfig, OodError, Scorer};
use crate::protonet::{train, ProtoError};
use crate::windowing::{segment, TimeWindow, WindowConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{file}: {source}")]
    Pcap { file: PathBuf, source: PcapError },
    #[error("no label for {}: no manifest keyword matches", .0.join(", "))]
    Unlabeled(Vec<String>),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("extraction settings of the feature file differ from the model's")]
    ExtractionMismatch,
    #[error("class {class} has {size} training windows; at least {required} are required")]
    ClassTooSmall {
        class: String,
        size: usize,
        required: usize,
    },
    #[error("training: {0}")]
    Train(ProtoError),
    #[error("calibration, class {class}: {source}")]
    CalibrationClass { class: String, source: OodError },
    #[error("calibration: {0}")]
    Calibration(OodError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl PipelineError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            PipelineError::Train(ProtoError::NonFiniteLoss { .. })
                | PipelineError::Calibration(OodError::NonFiniteDistance)
                | PipelineError::Feature(FeatureError::NonFinite { .. })
        )
    }
}

/// Windows of every connection, in connection order.
pub fn windows_from_connections(
    connections: &[Connection],
    config: &WindowConfig,
) -> Vec<TimeWindow> {
    connections
        .par_iter()
        .flat_map_iter(|c| segment(c, config))
        .collect()
}

/// Features of `windows` under `extraction`, masking sizes first if asked.
pub fn featurize(
    windows: Vec<TimeWindow>,
    extraction: &ExtractionConfig,
) -> Result<FeatureTable, PipelineError> {
    let windows = match extraction.mask_sizes {
        Some(size) => mask_packet_sizes(windows, size),
        None => windows,
    };
    let rows = extract_features(&windows, &extraction.features)?;
    let labels = windows.into_iter().map(|w| w.label).collect();
    Ok(FeatureTable::new(*extraction, rows, labels)?)
}

/// Reads each capture, labels its connections from the file name and
/// segments them. With `require_labels`, any unlabeled file is an error
/// naming every offender.
pub fn windows_from_pcaps(
    paths: &[PathBuf],
    manifest: &LabelManifest,
    window: &WindowConfig,
    require_labels: bool,
) -> Result<Vec<TimeWindow>, PipelineError> {
    let names: Vec<String> = paths.iter().map(|p| file_name(p)).collect();
    if require_labels {
        let missing: Vec<String> = names
            .iter()
            .filter(|n| label_from_filename(n, manifest).is_none())
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(PipelineError::Unlabeled(missing));
        }
    }
    let per_file: Vec<Vec<TimeWindow>> = paths
        .par_iter()
        .zip(&names)
        .map(|(path, name)| {
            let records = parse_pcap(path).map_err(|source| PipelineError::Pcap {
                file: path.clone(),
                source,
            })?;
            let label = label_from_filename(name, manifest);
            let mut connections = assemble_flows(&records, name);
            for c in &mut connections {
                c.label = label.clone();
            }
            log::debug!(
                "{name}: {} packets, {} connections",
                records.len(),
                connections.len()
            );
            Ok(connections
                .iter()
                .flat_map(|c| segment(c, window))
                .collect())
        })
        .collect::<Result<_, PipelineError>>()?;
    Ok(per_file.into_iter().flatten().collect())
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Splits `data` per class into training and calibration parts, trains the
/// network, calibrates it and bundles everything into a [`Model`].
pub fn fit_model(data: &LabeledData, config: &RunConfig) -> Result<Model, PipelineError> {
    config.validate()?;
    let seed = config.seed();
    let (train_idx, cal_idx) = stratified_split(&data.labels, config.calibration_fraction, seed);
    let train_set = data.subset(&train_idx);
    let cal_set = data.subset(&cal_idx);
    let k = data.classes.len();

    let trained =
        train(&train_set.rows, &train_set.labels, k, &config.train).map_err(|e| match e {
            ProtoError::ClassTooSmall {
                class,
                size,
                required,
            } => PipelineError::ClassTooSmall {
                class: data.classes[class].clone(),
                size,
                required,
            },
            other => PipelineError::Train(other),
        })?;
    let calibration = CalibrationConfig {
        s_cal: config.s_cal,
        bandwidth: config.kde_bandwidth,
        seed: seed.wrapping_add(1),
    };
    let artifacts = calibrate(
        &trained.network,
        &trained.scaler,
        &train_set.rows,
        &train_set.labels,
        &cal_set.rows,
        &cal_set.labels,
        k,
        &calibration,
    )
    .map_err(|e| match e {
        OodError::EmptyClass(c)
        | OodError::ClassMissingInCalibration(c)
        | OodError::TooFewCalibrationPoints { class: c, .. } => PipelineError::CalibrationClass {
            class: data.classes[c].clone(),
            source: e,
        },
        other => PipelineError::Calibration(other),
    })?;
    let scorer = Scorer::new(artifacts).map_err(PipelineError::Calibration)?;
    Ok(Model::new(
        config.clone(),
        data.classes.clone(),
        trained.scaler,
        trained.network,
        Some(scorer),
    ))
}
