use std::path::Path;

use anyhow::{anyhow, Context as _};
use ecgfreq_core::cohort::{build_cohort, filter_labels, SplitAssignment};
use ecgfreq_core::metrics::{
    bins_to_csv, band_to_csv, ece, ensemble_logits, predictions_from_csv, predictions_to_csv, PredictionContext,
    PredictionSet,
};
use ecgfreq_core::models::{ArchId, ModelCheckpoint};
use ecgfreq_core::preprocess::{prepare_native, qc_to_csv, to_target_rate, Resampler};
use ecgfreq_core::report::{
    cell_report, check_orderings, confusion_csv, fold_curve_bands, table_csv, table_markdown, ExperimentReport,
};
use ecgfreq_core::store::{manifest_to_csv, parse_manifest, read_manifest, write_record, DatasetManifest, ManifestEntry};
use ecgfreq_core::trainer::{epochs_to_csv, fold_sets, predict, train_fold, Sample};

use crate::config::LoadedConfig;
use crate::error::{data, CliError, CliResult};
use crate::layout::{read_artifact, require_stamp, write_file, write_stamp, Layout};

/// Optional restriction of the (arch, fs) cells a stage works on.
#[derive(Debug, Clone, Copy, Default)]
pub struct Selection {
    pub arch: Option<ArchId>,
    pub fs_hz: Option<u32>,
}

pub struct Pipeline {
    pub cfg: LoadedConfig,
    pub layout: Layout,
    pub cells: Vec<(ArchId, u32)>,
}

impl Pipeline {
    pub fn new(cfg: LoadedConfig, selection: Selection) -> CliResult<Self> {
        let c = &cfg.config;
        if let Some(a) = selection.arch {
            if !c.archs.contains(&a) {
                return Err(CliError::Config(format!("--arch {a} is not listed in the config")));
            }
        }
        if let Some(fs) = selection.fs_hz {
            if !c.target_fs.contains(&fs) {
                return Err(CliError::Config(format!("--fs {fs} is not in target_fs {:?}", c.target_fs)));
            }
        }
        let cells = c
            .archs
            .iter()
            .filter(|&&a| selection.arch.is_none_or(|s| s == a))
            .flat_map(|&a| {
                c.target_fs
                    .iter()
                    .filter(|&&fs| selection.fs_hz.is_none_or(|s| s == fs))
                    .map(move |&fs| (a, fs))
            })
            .collect();
        let layout = Layout::new(cfg.resolve(&c.output_root));
        Ok(Pipeline { cfg, layout, cells })
    }

    fn hash(&self) -> &str {
        &self.cfg.hash
    }

    fn save_config(&self) -> CliResult<()> {
        write_file(&self.layout.config_copy(), self.cfg.config.to_json())
    }

    /// Cleans, clips and quality-checks every AFIB/NORM record, then writes
    /// each accepted one at every target rate.
    pub fn prepare(&self) -> CliResult<()> {
        self.save_config()?;
        let c = &self.cfg.config;
        let manifest_path = self.cfg.resolve(&c.manifest);
        let manifest = read_manifest(&manifest_path)
            .with_context(|| format!("reading manifest {}", manifest_path.display()))
            .map_err(data)?;
        let binary = filter_labels(&manifest);
        if binary.len() < manifest.len() {
            log::info!("skipping {} records without an AFIB/NORM label", manifest.len() - binary.len());
        }
        let mut resampler = Resampler::new();
        let mut reports = Vec::with_capacity(binary.len());
        let mut accepted = Vec::new();
        for entry in &binary.entries {
            let raw = binary.load(entry).map_err(data)?;
            let (cleaned, qc) = prepare_native(&mut resampler, &raw, &c.preprocess).map_err(data)?;
            if qc.accepted {
                for &fs in &c.target_fs {
                    let out = to_target_rate(&mut resampler, &cleaned, fs, c.preprocess.duration_s)
                        .with_context(|| format!("record {}", entry.record_id))
                        .map_err(data)?;
                    let path = self.layout.proc_rate_dir(fs).join(format!("{}.ecgb", entry.record_id));
                    if let Some(parent) = path.parent() {
                        std::fs::create_dir_all(parent).map_err(data)?;
                    }
                    write_record(&out, &path).map_err(data)?;
                }
                accepted.push(ManifestEntry {
                    path: format!("{}.ecgb", entry.record_id).into(),
                    ..entry.clone()
                });
            } else {
                log::info!("QC rejected {}: {}", entry.record_id, qc.reasons().join(", "));
            }
            reports.push(qc);
        }
        if accepted.is_empty() {
            return Err(data(anyhow!("no record passed quality control")));
        }
        log::info!("prepared {} of {} records", accepted.len(), binary.len());
        let dir = self.layout.proc_dir();
        write_file(&dir.join("qc.csv"), qc_to_csv(&reports))?;
        let accepted = DatasetManifest::new(accepted).map_err(data)?;
        write_file(&dir.join("accepted.csv"), manifest_to_csv(&accepted))?;
        write_stamp(&dir, "prepare", self.hash(), &["qc.csv".into(), "accepted.csv".into()])
    }

    /// Patient-safe holdout, undersampling and fold assignment.
    pub fn split(&self) -> CliResult<()> {
        self.save_config()?;
        let proc = self.layout.proc_dir();
        require_stamp(&proc, "prepare", self.hash())?;
        let manifest = parse_manifest(&read_artifact(&proc.join("accepted.csv"), "prepare")?).map_err(data)?;
        let split = build_cohort(&manifest, &self.cfg.config.split).map_err(data)?;
        let dir = self.layout.split_dir();
        write_file(&dir.join("split.csv"), split.assignment.to_csv().map_err(data)?)?;
        write_file(&dir.join("balanced_manifest.csv"), manifest_to_csv(&split.balanced))?;
        write_file(&dir.join("test_manifest.csv"), manifest_to_csv(&split.test))?;
        log::info!(
            "split: {} balanced pool records over {} folds, {} test records",
            split.balanced.len(),
            split.assignment.k,
            split.test.len()
        );
        write_stamp(
            &dir,
            "split",
            self.hash(),
            &["split.csv".into(), "balanced_manifest.csv".into(), "test_manifest.csv".into()],
        )
    }

    fn load_split(&self) -> CliResult<SplitAssignment> {
        let dir = self.layout.split_dir();
        require_stamp(&dir, "split", self.hash())?;
        let text = read_artifact(&dir.join("split.csv"), "split")?;
        SplitAssignment::from_csv(&text, self.cfg.config.split.seed).map_err(data)
    }

    fn load_samples(&self, manifest_name: &str, fs_hz: u32) -> CliResult<Vec<Sample>> {
        let dir = self.layout.proc_rate_dir(fs_hz);
        if !dir.is_dir() {
            return Err(CliError::MissingStage(format!("{} (run `prepare` first)", dir.display())));
        }
        let text = read_artifact(&self.layout.split_dir().join(manifest_name), "split")?;
        let manifest = parse_manifest(&text).map_err(data)?.with_base_dir(dir);
        let expected = (fs_hz * self.cfg.config.preprocess.duration_s) as usize;
        manifest
            .entries
            .iter()
            .map(|e| {
                let rec = manifest.load(e).map_err(data)?;
                if rec.fs_hz != fs_hz || rec.n_samples() != expected {
                    return Err(data(anyhow!(
                        "{} is {} samples at {} Hz, expected {expected} at {fs_hz} Hz",
                        e.record_id,
                        rec.n_samples(),
                        rec.fs_hz
                    )));
                }
                Sample::from_record(&rec).map_err(data)
            })
            .collect()
    }

    /// k-fold training of every selected cell.
    pub fn train(&self) -> CliResult<()> {
        self.save_config()?;
        let split = self.load_split()?;
        for &(arch, fs) in &self.cells {
            let pool = self.load_samples("balanced_manifest.csv", fs)?;
            let config = self.cfg.config.train_config(arch, fs);
            let mut files = Vec::new();
            for fold in 0..split.k {
                let (train, val) = fold_sets(&pool, &split, fold).map_err(data)?;
                log::info!("{arch}/{fs}hz fold{fold}: {} train, {} validation records", train.len(), val.len());
                let mut result = train_fold(&config, fold, &train, &val).map_err(data)?;
                result.checkpoint.config_hash = Some(self.hash().to_string());
                let dir = self.layout.fold_dir(arch, fs, fold);
                std::fs::create_dir_all(&dir).map_err(data)?;
                result.checkpoint.write(dir.join("model.ckpt")).map_err(data)?;
                write_file(&dir.join("epochs.csv"), epochs_to_csv(&result.epochs))?;
                write_file(&dir.join("val_predictions.csv"), predictions_to_csv(&result.validation))?;
                for f in ["model.ckpt", "epochs.csv", "val_predictions.csv"] {
                    files.push(format!("fold{fold}/{f}"));
                }
            }
            write_stamp(&self.layout.run_dir(arch, fs), "train", self.hash(), &files)?;
        }
        Ok(())
    }

    fn load_checkpoints(&self, arch: ArchId, fs: u32, k: usize) -> CliResult<Vec<ModelCheckpoint>> {
        require_stamp(&self.layout.run_dir(arch, fs), "train", self.hash())?;
        (0..k)
            .map(|fold| {
                let path = self.layout.fold_dir(arch, fs, fold).join("model.ckpt");
                if !path.exists() {
                    return Err(CliError::MissingStage(format!("{} (run `train` first)", path.display())));
                }
                ModelCheckpoint::read(&path).map_err(data)
            })
            .collect()
    }

    /// Per-fold validation predictions and the logit-averaged ensemble on
    /// the held-out test split.
    pub fn eval(&self) -> CliResult<()> {
        self.save_config()?;
        let split = self.load_split()?;
        for &(arch, fs) in &self.cells {
            let checkpoints = self.load_checkpoints(arch, fs, split.k)?;
            let pool = self.load_samples("balanced_manifest.csv", fs)?;
            let test = self.load_samples("test_manifest.csv", fs)?;
            if test.is_empty() {
                return Err(data(anyhow!("the test split is empty")));
            }
            let batch = self.cfg.config.hyper(arch).batch_size;
            let dir = self.layout.eval_dir(arch, fs);
            let mut files = Vec::new();
            let mut test_sets = Vec::with_capacity(split.k);
            for (fold, ck) in checkpoints.iter().enumerate() {
                let mut graph = ck.to_graph().map_err(data)?;
                let (_, val) = fold_sets(&pool, &split, fold).map_err(data)?;
                let context = PredictionContext::Fold { arch, fs_hz: fs, fold };
                let val_set = prediction_set(context, &val, predict(&mut graph, &val, batch).map_err(data)?)?;
                let name = format!("val_fold{fold}.csv");
                write_file(&dir.join(&name), predictions_to_csv(&val_set))?;
                files.push(name);
                test_sets.push(prediction_set(context, &test, predict(&mut graph, &test, batch).map_err(data)?)?);
            }
            let ensemble = ensemble_logits(&test_sets, split.k).map_err(data)?;
            write_file(&dir.join("test_ensemble.csv"), predictions_to_csv(&ensemble))?;
            files.push("test_ensemble.csv".into());
            write_stamp(&dir, "eval", self.hash(), &files)?;
        }
        Ok(())
    }

    /// Aggregates every cell into the comparison table plus curve,
    /// calibration and confusion data.
    pub fn report(&self) -> CliResult<()> {
        self.save_config()?;
        let c = &self.cfg.config;
        let k = c.split.k;
        let dir = self.layout.report_dir();
        let mut files = Vec::new();
        let mut cells = Vec::new();
        for &(arch, fs) in &self.cells {
            let eval_dir = self.layout.eval_dir(arch, fs);
            require_stamp(&eval_dir, "eval", self.hash())?;
            let folds = (0..k)
                .map(|i| read_predictions(&eval_dir.join(format!("val_fold{i}.csv"))))
                .collect::<CliResult<Vec<_>>>()?;
            let test = read_predictions(&eval_dir.join("test_ensemble.csv"))?;
            let cell = cell_report(arch, fs, &folds, &test, c.metrics.tau, c.metrics.n_bins).map_err(data)?;
            if !cell.degenerate.is_empty() {
                log::warn!("{arch}/{fs}hz: 0/0 ratios reported as 0 for {}", cell.degenerate.join(", "));
            }
            cells.push(cell);

            let stem = format!("{arch}_{fs}hz");
            match fold_curve_bands(&folds, c.metrics.grid_points) {
                Ok((roc, pr)) => {
                    for (kind, band) in [("roc", roc), ("pr", pr)] {
                        let name = format!("curves/{stem}_{kind}.csv");
                        write_file(&dir.join(&name), band_to_csv(&band))?;
                        files.push(name);
                    }
                }
                Err(e) => log::warn!("{stem}: no curve band ({e})"),
            }
            let pooled = concat_sets(&folds);
            for (split_name, set) in [("val", &pooled), ("test", &test)] {
                let (_, bins) = ece(&set.p1, &set.labels, c.metrics.n_bins).map_err(data)?;
                let name = format!("calibration/{stem}_{split_name}_bins.csv");
                write_file(&dir.join(&name), bins_to_csv(&bins))?;
                files.push(name);
            }
        }
        let early_stop = self
            .cells
            .first()
            .and_then(|&(a, _)| serde_json::to_value(c.hyper(a).early_stop_metric).ok())
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        let report = ExperimentReport {
            config_hash: Some(self.hash().to_string()),
            tau: c.metrics.tau,
            n_bins: c.metrics.n_bins,
            early_stop_metric: early_stop,
            cells,
        };
        let orderings = check_orderings(&report);
        let outputs = [
            ("metrics.json", serde_json::to_string_pretty(&report).map_err(data)? + "\n"),
            ("table.md", table_markdown(&report)),
            ("table.csv", table_csv(&report)),
            ("confusion.csv", confusion_csv(&report)),
            ("orderings.json", serde_json::to_string_pretty(&orderings).map_err(data)? + "\n"),
        ];
        for (name, body) in outputs {
            write_file(&dir.join(name), body)?;
            files.push(name.to_string());
        }
        for o in &orderings {
            log::info!("ordering {}: {} ({})", o.name, if o.passed { "holds" } else { "does not hold" }, o.detail);
        }
        write_stamp(&dir, "report", self.hash(), &files)
    }
}

fn prediction_set(context: PredictionContext, samples: &[Sample], logits: Vec<[f64; 2]>) -> CliResult<PredictionSet> {
    PredictionSet::from_logits(
        context,
        samples.iter().map(|s| s.record_id.clone()).collect(),
        logits,
        samples.iter().map(|s| s.label).collect(),
    )
    .map_err(data)
}

fn read_predictions(path: &Path) -> CliResult<PredictionSet> {
    let text = read_artifact(path, "eval")?;
    predictions_from_csv(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(data)
}

fn concat_sets(sets: &[PredictionSet]) -> PredictionSet {
    let mut out = sets[0].clone();
    for s in &sets[1..] {
        out.record_ids.extend(s.record_ids.iter().cloned());
        out.logits.extend(&s.logits);
        out.p1.extend(&s.p1);
        out.labels.extend(&s.labels);
    }
    out
}
