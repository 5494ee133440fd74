//! Writes a synthetic dataset plus a ready-to-run experiment config.

use std::path::Path;

use ecgfreq_core::store::{write_manifest, write_record, DatasetManifest};
use ecgfreq_core::synth::{manifest_entries, synth_dataset, SynthConfig};

use crate::config::ExperimentConfig;
use crate::error::{data, CliError, CliResult};
use crate::layout::write_file;

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub patients: usize,
    pub afib_patients: usize,
    pub records_per_patient: usize,
    pub fs_hz: u32,
    pub seed: u64,
    /// Written into every training section of the generated config.
    pub max_epochs: Option<usize>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            patients: 20,
            afib_patients: 8,
            records_per_patient: 2,
            fs_hz: 500,
            seed: 42,
            max_epochs: None,
        }
    }
}

pub const SYNTH_CONFIG_FILE: &str = "experiment.json";

/// Produces `<out>/records/*.ecgb`, `<out>/manifest.csv` and
/// `<out>/experiment.json`.
pub fn write_synthetic(out: &Path, opts: &SynthOptions) -> CliResult<()> {
    if opts.afib_patients > opts.patients || opts.records_per_patient == 0 || opts.fs_hz == 0 {
        return Err(CliError::Config(
            "need afib_patients <= patients, records_per_patient >= 1 and fs > 0".into(),
        ));
    }
    let cfg = SynthConfig {
        fs_hz: opts.fs_hz,
        ..SynthConfig::default()
    };
    let records = synth_dataset(opts.patients, opts.afib_patients, opts.records_per_patient, &cfg, opts.seed);
    let mut entries = manifest_entries(&records);
    for (rec, entry) in records.iter().zip(&mut entries) {
        entry.path = Path::new("records").join(&entry.path);
        let path = out.join(&entry.path);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(data)?;
        }
        write_record(rec, &path).map_err(data)?;
    }
    let manifest = DatasetManifest::new(entries).map_err(data)?;
    write_manifest(&manifest, out.join("manifest.csv")).map_err(data)?;

    let mut config = ExperimentConfig::default();
    config.override_seed(opts.seed);
    if let Some(e) = opts.max_epochs {
        for h in config.train.values_mut() {
            h.max_epochs = e;
        }
    }
    let config = config.materialize();
    config.validate()?;
    write_file(&out.join(SYNTH_CONFIG_FILE), config.to_json())?;
    log::info!("wrote {} synthetic records to {}", records.len(), out.display());
    Ok(())
}
