//! Cohort construction: label filtering, patient-safe holdout split,
//! majority-class undersampling and stratified patient-level k-fold.
//!
//! Every split is made over patients, never records; records inherit the
//! partition of their patient. Shuffles use [`SplitMix64`] so that the
//! assignment is a pure function of (manifest, parameters, seed) and can be
//! reproduced bit-for-bit by other implementations.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{DatasetManifest, Label};

#[derive(Debug, Error, PartialEq)]
pub enum CohortError {
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("test fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("undersampling needs both classes; found only {0}")]
    SingleClassInput(String),
    #[error("record {0} has a non-binary label; filter labels first")]
    NonBinaryLabel(String),
    #[error("k must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("stratum {label} has {have} patients, need at least {need}")]
    TooFewPatients { label: String, have: usize, need: usize },
    #[error("patient {0} is still pending fold assignment")]
    PendingPatient(String),
    #[error("split CSV line {line}: {reason}")]
    BadSplitCsv { line: usize, reason: String },
}

/// SplitMix64 stream. Part of the external contract: the exact sequence
/// determines every shuffle.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Fisher–Yates from the back, drawing `next % remaining` per step.
pub fn shuffle<T>(items: &mut [T], rng: &mut SplitMix64) {
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Partition {
    Test,
    /// Training pool, not yet dealt to a fold.
    Pool,
    Fold(usize),
    Excluded,
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Partition::Test => f.write_str("test"),
            Partition::Pool => f.write_str("pool"),
            Partition::Fold(i) => write!(f, "fold{i}"),
            Partition::Excluded => f.write_str("excluded"),
        }
    }
}

impl FromStr for Partition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "test" => Ok(Partition::Test),
            "pool" => Ok(Partition::Pool),
            "excluded" => Ok(Partition::Excluded),
            _ => s
                .strip_prefix("fold")
                .and_then(|i| i.parse().ok())
                .map(Partition::Fold)
                .ok_or_else(|| format!("unknown assignment `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitParams {
    pub test_frac: f64,
    pub k: usize,
    pub seed: u64,
}

impl Default for SplitParams {
    fn default() -> Self {
        SplitParams {
            test_frac: 0.3,
            k: 5,
            seed: 42,
        }
    }
}

/// Patient → partition map. Being a map, each patient has exactly one
/// partition; records inherit it through their patient id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub seed: u64,
    pub k: usize,
    pub assignment: BTreeMap<String, Partition>,
}

impl SplitAssignment {
    pub fn get(&self, patient_id: &str) -> Option<Partition> {
        self.assignment.get(patient_id).copied()
    }

    pub fn patients_in(&self, partition: Partition) -> BTreeSet<&str> {
        self.assignment
            .iter()
            .filter(|(_, p)| **p == partition)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Records of `manifest` whose patient is in `partition`, file order.
    pub fn select(&self, manifest: &DatasetManifest, partition: Partition) -> DatasetManifest {
        manifest.derive(
            manifest
                .entries
                .iter()
                .filter(|e| self.get(&e.patient_id) == Some(partition))
                .cloned()
                .collect(),
        )
    }

    pub fn to_csv(&self) -> Result<String, CohortError> {
        let mut out = String::from("patient_id,assignment\n");
        for (patient, part) in &self.assignment {
            if *part == Partition::Pool {
                return Err(CohortError::PendingPatient(patient.clone()));
            }
            out.push_str(&format!("{patient},{part}\n"));
        }
        Ok(out)
    }

    /// Parses a split CSV. `seed` is not stored in the file and must be
    /// supplied; `k` is inferred from the highest fold index present.
    pub fn from_csv(text: &str, seed: u64) -> Result<Self, CohortError> {
        let mut lines = text.lines();
        match lines.next() {
            Some("patient_id,assignment") => {}
            other => {
                return Err(CohortError::BadSplitCsv {
                    line: 1,
                    reason: format!("unexpected header {other:?}"),
                })
            }
        }
        let mut assignment = BTreeMap::new();
        let mut k = 0;
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| CohortError::BadSplitCsv { line: i + 2, reason };
            let (patient, part) = line.split_once(',').ok_or_else(|| bad("missing comma".into()))?;
            let part: Partition = part.parse().map_err(bad)?;
            if let Partition::Fold(f) = part {
                k = k.max(f + 1);
            }
            if assignment.insert(patient.to_string(), part).is_some() {
                return Err(CohortError::BadSplitCsv {
                    line: i + 2,
                    reason: format!("patient {patient} listed twice"),
                });
            }
        }
        Ok(SplitAssignment { seed, k, assignment })
    }
}

/// Keeps AFIB and NORM entries, in order.
pub fn filter_labels(manifest: &DatasetManifest) -> DatasetManifest {
    manifest.derive(
        manifest
            .entries
            .iter()
            .filter(|e| e.label.is_binary())
            .cloned()
            .collect(),
    )
}

/// Patient-level label: AFIB if any of the patient's records is AFIB.
pub fn patient_labels(manifest: &DatasetManifest) -> Result<BTreeMap<String, Label>, CohortError> {
    let mut out: BTreeMap<String, Label> = BTreeMap::new();
    for e in &manifest.entries {
        if !e.label.is_binary() {
            return Err(CohortError::NonBinaryLabel(e.record_id.clone()));
        }
        let slot = out.entry(e.patient_id.clone()).or_insert(Label::Norm);
        if e.label == Label::Afib {
            *slot = Label::Afib;
        }
    }
    Ok(out)
}

/// Sorted patient ids per stratum, AFIB first.
fn strata(labels: &BTreeMap<String, Label>) -> [(Label, Vec<String>); 2] {
    let pick = |want: &Label| {
        labels
            .iter()
            .filter(|(_, l)| *l == want)
            .map(|(p, _)| p.clone())
            .collect::<Vec<_>>()
    };
    [(Label::Afib, pick(&Label::Afib)), (Label::Norm, pick(&Label::Norm))]
}

/// Moves `⌊test_frac · |stratum|⌋` shuffled patients of each stratum to
/// the test set; everyone else stays in the pool.
pub fn holdout_split(manifest: &DatasetManifest, test_frac: f64, seed: u64) -> Result<SplitAssignment, CohortError> {
    if manifest.is_empty() {
        return Err(CohortError::EmptyManifest);
    }
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(CohortError::InvalidFraction(test_frac));
    }
    let labels = patient_labels(manifest)?;
    let mut rng = SplitMix64::new(seed);
    let mut assignment = BTreeMap::new();
    for (_, mut patients) in strata(&labels) {
        shuffle(&mut patients, &mut rng);
        // The epsilon absorbs products like 0.29 * 100 = 28.999...
        let n_test = ((test_frac * patients.len() as f64) + 1e-9).floor() as usize;
        for (i, p) in patients.into_iter().enumerate() {
            let part = if i < n_test { Partition::Test } else { Partition::Pool };
            assignment.insert(p, part);
        }
    }
    Ok(SplitAssignment { seed, k: 0, assignment })
}

/// Keeps every minority-class record plus an equal-size uniform sample of
/// the majority class. Output preserves input order.
pub fn undersample_balance(subset: &DatasetManifest, seed: u64) -> Result<DatasetManifest, CohortError> {
    let mut afib = Vec::new();
    let mut norm = Vec::new();
    for (i, e) in subset.entries.iter().enumerate() {
        match e.label {
            Label::Afib => afib.push(i),
            Label::Norm => norm.push(i),
            Label::Other(_) => return Err(CohortError::NonBinaryLabel(e.record_id.clone())),
        }
    }
    if afib.is_empty() || norm.is_empty() {
        let present = if afib.is_empty() { "NORM" } else { "AFIB" };
        return Err(CohortError::SingleClassInput(present.to_string()));
    }
    let (minority, mut majority) = if afib.len() <= norm.len() { (afib, norm) } else { (norm, afib) };
    let mut rng = SplitMix64::new(seed);
    shuffle(&mut majority, &mut rng);
    majority.truncate(minority.len());

    let keep: HashSet<usize> = minority.into_iter().chain(majority).collect();
    Ok(subset.derive(
        subset
            .entries
            .iter()
            .enumerate()
            .filter(|(i, _)| keep.contains(i))
            .map(|(_, e)| e.clone())
            .collect(),
    ))
}

/// Deals shuffled patients of each stratum round-robin over folds
/// `0..k`, starting at fold 0 in each stratum.
pub fn stratified_patient_kfold(subset: &DatasetManifest, k: usize, seed: u64) -> Result<SplitAssignment, CohortError> {
    if k < 2 {
        return Err(CohortError::InvalidK(k));
    }
    let labels = patient_labels(subset)?;
    let strata = strata(&labels);
    for (label, patients) in &strata {
        if patients.len() < k {
            return Err(CohortError::TooFewPatients {
                label: label.to_string(),
                have: patients.len(),
                need: k,
            });
        }
    }
    let mut rng = SplitMix64::new(seed);
    let mut assignment = BTreeMap::new();
    for (_, mut patients) in strata {
        shuffle(&mut patients, &mut rng);
        for (i, p) in patients.into_iter().enumerate() {
            assignment.insert(p, Partition::Fold(i % k));
        }
    }
    Ok(SplitAssignment { seed, k, assignment })
}

/// Output of the full cohort procedure.
#[derive(Debug, Clone)]
pub struct CohortSplit {
    /// Final map: test, folds, and pool patients whose records were all
    /// removed by undersampling marked excluded.
    pub assignment: SplitAssignment,
    /// Balanced cross-validation pool.
    pub balanced: DatasetManifest,
    /// Held-out test records under their natural class distribution.
    pub test: DatasetManifest,
}

/// filter → holdout → undersample the pool → k-fold on the balanced pool.
pub fn build_cohort(manifest: &DatasetManifest, params: &SplitParams) -> Result<CohortSplit, CohortError> {
    let filtered = filter_labels(manifest);
    let holdout = holdout_split(&filtered, params.test_frac, params.seed)?;
    let pool = holdout.select(&filtered, Partition::Pool);
    let test = holdout.select(&filtered, Partition::Test);
    let balanced = undersample_balance(&pool, params.seed)?;
    let folds = stratified_patient_kfold(&balanced, params.k, params.seed)?;

    let mut assignment = holdout.assignment;
    for part in assignment.values_mut() {
        if *part == Partition::Pool {
            *part = Partition::Excluded;
        }
    }
    for (patient, fold) in folds.assignment {
        assignment.insert(patient, fold);
    }
    Ok(CohortSplit {
        assignment: SplitAssignment {
            seed: params.seed,
            k: params.k,
            assignment,
        },
        balanced,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::ManifestEntry;
    use std::path::PathBuf;

    fn entry(rec: &str, patient: &str, label: Label) -> ManifestEntry {
        ManifestEntry {
            record_id: rec.into(),
            patient_id: patient.into(),
            label,
            fs_hz: 500,
            path: PathBuf::from(format!("{rec}.ecgb")),
        }
    }

    fn manifest(n_afib: usize, n_norm: usize) -> DatasetManifest {
        let mut entries = Vec::new();
        for i in 0..n_afib {
            entries.push(entry(&format!("a{i}"), &format!("pa{i}"), Label::Afib));
        }
        for i in 0..n_norm {
            entries.push(entry(&format!("n{i}"), &format!("pn{i}"), Label::Norm));
        }
        DatasetManifest::new(entries).unwrap()
    }

    #[test]
    fn splitmix_reference_values() {
        // Reference stream for seed 0 (Vigna's splitmix64.c).
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(rng.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut v: Vec<u32> = (0..50).collect();
        shuffle(&mut v, &mut SplitMix64::new(7));
        let mut sorted = v.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }

    #[test]
    fn filter_keeps_binary_labels_in_order() {
        let m = DatasetManifest::new(vec![
            entry("r1", "p1", Label::Afib),
            entry("r2", "p2", Label::Norm),
            entry("r3", "p3", Label::Other("PACE".into())),
        ])
        .unwrap();
        let f = filter_labels(&m);
        let ids: Vec<_> = f.entries.iter().map(|e| e.record_id.as_str()).collect();
        assert_eq!(ids, ["r1", "r2"]);
        assert_eq!(filter_labels(&manifest(3, 0)), manifest(3, 0));
        assert!(filter_labels(&DatasetManifest::default()).is_empty());
    }

    #[test]
    fn holdout_floors_per_stratum() {
        let split = holdout_split(&manifest(5, 5), 0.3, 1).unwrap();
        let test = split.patients_in(Partition::Test);
        assert_eq!(test.len(), 2);
        assert_eq!(test.iter().filter(|p| p.starts_with("pa")).count(), 1);
        assert_eq!(split.patients_in(Partition::Pool).len(), 8);
    }

    #[test]
    fn holdout_is_deterministic() {
        let m = manifest(40, 60);
        assert_eq!(holdout_split(&m, 0.3, 9).unwrap(), holdout_split(&m, 0.3, 9).unwrap());
        assert_ne!(holdout_split(&m, 0.3, 9).unwrap(), holdout_split(&m, 0.3, 10).unwrap());
    }

    #[test]
    fn holdout_errors() {
        assert_eq!(
            holdout_split(&DatasetManifest::default(), 0.3, 0),
            Err(CohortError::EmptyManifest)
        );
        assert_eq!(holdout_split(&manifest(2, 2), 1.0, 0), Err(CohortError::InvalidFraction(1.0)));
    }

    #[test]
    fn mixed_label_patient_counts_as_afib() {
        let m = DatasetManifest::new(vec![
            entry("r1", "p1", Label::Norm),
            entry("r2", "p1", Label::Afib),
            entry("r3", "p2", Label::Norm),
        ])
        .unwrap();
        let labels = patient_labels(&m).unwrap();
        assert_eq!(labels["p1"], Label::Afib);
        assert_eq!(labels["p2"], Label::Norm);
    }

    #[test]
    fn undersample_examples() {
        let b = undersample_balance(&manifest(30, 100), 3).unwrap();
        assert_eq!(b.count_label(&Label::Afib), 30);
        assert_eq!(b.count_label(&Label::Norm), 30);

        let even = manifest(12, 12);
        assert_eq!(undersample_balance(&even, 3).unwrap(), even);

        assert_eq!(
            undersample_balance(&manifest(4, 0), 3),
            Err(CohortError::SingleClassInput("AFIB".into()))
        );
    }

    #[test]
    fn kfold_round_robin() {
        let split = stratified_patient_kfold(&manifest(5, 5), 5, 11).unwrap();
        for f in 0..5 {
            let members = split.patients_in(Partition::Fold(f));
            assert_eq!(members.len(), 2);
            assert_eq!(members.iter().filter(|p| p.starts_with("pa")).count(), 1);
        }
    }

    #[test]
    fn kfold_keeps_patients_whole() {
        let mut m = manifest(6, 6);
        for r in 0..3 {
            m.entries.push(entry(&format!("multi{r}"), "pa0", Label::Afib));
        }
        let split = stratified_patient_kfold(&m, 3, 5).unwrap();
        let fold = split.get("pa0").unwrap();
        for e in m.entries.iter().filter(|e| e.patient_id == "pa0") {
            assert_eq!(split.get(&e.patient_id), Some(fold));
        }
    }

    #[test]
    fn kfold_errors() {
        assert_eq!(stratified_patient_kfold(&manifest(5, 5), 1, 0), Err(CohortError::InvalidK(1)));
        assert!(matches!(
            stratified_patient_kfold(&manifest(3, 10), 5, 0),
            Err(CohortError::TooFewPatients { have: 3, need: 5, .. })
        ));
    }

    #[test]
    fn split_csv_round_trip() {
        let c = build_cohort(&manifest(20, 40), &SplitParams::default()).unwrap();
        let csv = c.assignment.to_csv().unwrap();
        assert!(csv.starts_with("patient_id,assignment\n"));
        let back = SplitAssignment::from_csv(&csv, c.assignment.seed).unwrap();
        assert_eq!(back, c.assignment);
    }

    #[test]
    fn pending_patients_cannot_be_written() {
        let h = holdout_split(&manifest(5, 5), 0.3, 0).unwrap();
        assert!(matches!(h.to_csv(), Err(CohortError::PendingPatient(_))));
    }

    #[test]
    fn cohort_marks_dropped_pool_patients_excluded() {
        let c = build_cohort(&manifest(20, 40), &SplitParams::default()).unwrap();
        // Pool: 14 AFIB, 28 NORM patients; undersampling keeps 14 NORM.
        assert_eq!(c.balanced.count_label(&Label::Afib), 14);
        assert_eq!(c.balanced.count_label(&Label::Norm), 14);
        assert_eq!(c.assignment.patients_in(Partition::Excluded).len(), 14);
        assert_eq!(c.assignment.patients_in(Partition::Test).len(), 18);
        for e in &c.balanced.entries {
            assert!(matches!(c.assignment.get(&e.patient_id), Some(Partition::Fold(_))));
        }
    }
}
