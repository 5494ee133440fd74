//! On-disk formats for recordings and the cohort manifest.
//!
//! Recordings are stored as ECGB files: a 16-byte little-endian header
//! followed by `n_leads * n_samples` `f32` values, lead-major. Everything
//! that identifies a recording (ids, label) lives in the manifest CSV so
//! relabeling never touches signal payloads.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ECGB_MAGIC: &[u8; 4] = b"ECGB";
pub const ECGB_VERSION: u8 = 1;
pub const ECGB_HEADER_LEN: usize = 16;

/// Lead count every pipeline-accepted record must have.
pub const STANDARD_LEADS: usize = 12;

/// Conventional 12-lead order. The pipeline never permutes leads.
pub const LEAD_NAMES: [&str; STANDARD_LEADS] = [
    "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6",
];

pub const MANIFEST_COLUMNS: [&str; 5] = ["record_id", "patient_id", "label", "fs_hz", "path"];

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("manifest header is missing column `{0}`")]
    MissingColumn(String),
    #[error("duplicate record_id `{0}` in manifest")]
    DuplicateRecordId(String),
    #[error("manifest row {row} is unparsable: {reason}")]
    UnparsableRow { row: usize, reason: String },
    #[error("bad magic: expected ECGB, found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported ECGB version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("record invariant violated: {0}")]
    InvariantViolation(String),
}

impl StoreError {
    pub(crate) fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        StoreError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}

/// Rhythm label. Anything other than AFIB/NORM is kept verbatim so the
/// manifest can be read before label filtering.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Afib,
    Norm,
    Other(String),
}

impl Label {
    /// 1 for AFIB (the positive class), 0 for NORM.
    pub fn class_index(&self) -> Option<u8> {
        match self {
            Label::Afib => Some(1),
            Label::Norm => Some(0),
            Label::Other(_) => None,
        }
    }

    pub fn is_binary(&self) -> bool {
        self.class_index().is_some()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Afib => f.write_str("AFIB"),
            Label::Norm => f.write_str("NORM"),
            Label::Other(s) => f.write_str(s),
        }
    }
}

impl FromStr for Label {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "AFIB" => Label::Afib,
            "NORM" => Label::Norm,
            other => Label::Other(other.to_string()),
        })
    }
}

/// One multi-lead recording. Samples are millivolts, shape `[n_leads, n_samples]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub record_id: String,
    pub patient_id: String,
    pub label: Label,
    pub fs_hz: u32,
    pub leads: Array2<f32>,
}

impl EcgRecord {
    pub fn new(meta: RecordMeta, fs_hz: u32, leads: Array2<f32>) -> Self {
        EcgRecord {
            record_id: meta.record_id,
            patient_id: meta.patient_id,
            label: meta.label,
            fs_hz,
            leads,
        }
    }

    pub fn n_leads(&self) -> usize {
        self.leads.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.leads.ncols()
    }

    pub fn meta(&self) -> RecordMeta {
        RecordMeta {
            record_id: self.record_id.clone(),
            patient_id: self.patient_id.clone(),
            label: self.label.clone(),
        }
    }

    /// Copy of this record with a different sample matrix / rate.
    pub fn with_signal(&self, fs_hz: u32, leads: Array2<f32>) -> Self {
        EcgRecord::new(self.meta(), fs_hz, leads)
    }

    pub fn all_finite(&self) -> bool {
        self.leads.iter().all(|v| v.is_finite())
    }

    /// Checks what the pipeline requires of a processed record: 12 leads,
    /// exactly `duration_s * fs_hz` samples, all finite.
    pub fn check_pipeline_invariants(&self, duration_s: u32) -> Result<(), StoreError> {
        if self.n_leads() != STANDARD_LEADS {
            return Err(StoreError::InvariantViolation(format!(
                "record {} has {} leads, expected {}",
                self.record_id,
                self.n_leads(),
                STANDARD_LEADS
            )));
        }
        let expected = duration_s as usize * self.fs_hz as usize;
        if self.n_samples() != expected {
            return Err(StoreError::InvariantViolation(format!(
                "record {} has {} samples, expected {}",
                self.record_id,
                self.n_samples(),
                expected
            )));
        }
        if !self.all_finite() {
            return Err(StoreError::InvariantViolation(format!(
                "record {} contains non-finite samples",
                self.record_id
            )));
        }
        Ok(())
    }
}

/// Identity and label of a recording, as carried by the manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordMeta {
    pub record_id: String,
    pub patient_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub record_id: String,
    pub patient_id: String,
    pub label: Label,
    pub fs_hz: u32,
    pub path: PathBuf,
}

impl ManifestEntry {
    pub fn meta(&self) -> RecordMeta {
        RecordMeta {
            record_id: self.record_id.clone(),
            patient_id: self.patient_id.clone(),
            label: self.label.clone(),
        }
    }
}

/// The cohort index. Relative entry paths resolve against `base_dir`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self, StoreError> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.record_id.as_str()) {
                return Err(StoreError::DuplicateRecordId(e.record_id.clone()));
            }
        }
        Ok(DatasetManifest {
            entries,
            base_dir: PathBuf::new(),
        })
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    /// Same base directory, different entries.
    pub fn derive(&self, entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest {
            entries,
            base_dir: self.base_dir.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn count_label(&self, label: &Label) -> usize {
        self.entries.iter().filter(|e| &e.label == label).count()
    }

    pub fn load(&self, entry: &ManifestEntry) -> Result<EcgRecord, StoreError> {
        load_record(self.resolve(entry), entry.meta())
    }
}

/// Reads a manifest CSV. Entries keep file order; relative paths resolve
/// against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, StoreError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
    let mut manifest = parse_manifest(&text)?;
    manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(manifest)
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest, StoreError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| StoreError::UnparsableRow {
            row: 0,
            reason: e.to_string(),
        })?
        .clone();
    let mut idx = [0usize; 5];
    for (slot, col) in idx.iter_mut().zip(MANIFEST_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| StoreError::MissingColumn(col.to_string()))?;
    }

    let mut entries = Vec::new();
    for (i, row) in reader.records().enumerate() {
        // Row numbers count data rows from 1.
        let row_no = i + 1;
        let row = row.map_err(|e| StoreError::UnparsableRow {
            row: row_no,
            reason: e.to_string(),
        })?;
        let field = |k: usize| -> Result<&str, StoreError> {
            row.get(idx[k]).ok_or_else(|| StoreError::UnparsableRow {
                row: row_no,
                reason: format!("missing field `{}`", MANIFEST_COLUMNS[k]),
            })
        };
        let record_id = field(0)?.to_string();
        let patient_id = field(1)?.to_string();
        if record_id.is_empty() || patient_id.is_empty() {
            return Err(StoreError::UnparsableRow {
                row: row_no,
                reason: "empty record_id or patient_id".into(),
            });
        }
        let label: Label = field(2)?.parse().unwrap();
        let fs_hz = match field(3)?.parse::<u32>() {
            Ok(v) if v > 0 => v,
            _ => {
                return Err(StoreError::UnparsableRow {
                    row: row_no,
                    reason: format!("fs_hz `{}` is not a positive integer", field(3)?),
                })
            }
        };
        entries.push(ManifestEntry {
            record_id,
            patient_id,
            label,
            fs_hz,
            path: PathBuf::from(field(4)?),
        });
    }
    DatasetManifest::new(entries)
}

pub fn manifest_to_csv(manifest: &DatasetManifest) -> String {
    let mut out = MANIFEST_COLUMNS.join(",");
    out.push('\n');
    for e in &manifest.entries {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.record_id,
            e.patient_id,
            e.label,
            e.fs_hz,
            e.path.display()
        ));
    }
    out
}

pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    fs::write(path, manifest_to_csv(manifest)).map_err(|e| StoreError::io(path, e))
}

/// Serializes a record to ECGB bytes. Refuses non-finite samples.
pub fn encode_record(record: &EcgRecord) -> Result<Vec<u8>, StoreError> {
    let n_leads = record.n_leads();
    let n_samples = record.n_samples();
    if n_leads == 0 || n_leads > u8::MAX as usize {
        return Err(StoreError::InvariantViolation(format!(
            "lead count {n_leads} does not fit the ECGB header"
        )));
    }
    let n_samples_u32 = u32::try_from(n_samples).map_err(|_| {
        StoreError::InvariantViolation(format!("sample count {n_samples} exceeds u32"))
    })?;
    if record.fs_hz == 0 {
        return Err(StoreError::InvariantViolation("fs_hz must be positive".into()));
    }
    if !record.all_finite() {
        return Err(StoreError::InvariantViolation(format!(
            "record {} contains non-finite samples",
            record.record_id
        )));
    }

    let mut buf = Vec::with_capacity(ECGB_HEADER_LEN + 4 * n_leads * n_samples);
    buf.extend_from_slice(ECGB_MAGIC);
    buf.push(ECGB_VERSION);
    buf.push(n_leads as u8);
    buf.extend_from_slice(&[0, 0]);
    buf.extend_from_slice(&n_samples_u32.to_le_bytes());
    buf.extend_from_slice(&record.fs_hz.to_le_bytes());
    // Row iteration is lead-major regardless of the array's memory layout.
    for lead in record.leads.rows() {
        for v in lead {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode_record(bytes: &[u8], meta: RecordMeta) -> Result<EcgRecord, StoreError> {
    if bytes.len() < ECGB_HEADER_LEN {
        let mut magic = [0u8; 4];
        let n = bytes.len().min(4);
        magic[..n].copy_from_slice(&bytes[..n]);
        if &magic != ECGB_MAGIC {
            return Err(StoreError::BadMagic(magic));
        }
        return Err(StoreError::TruncatedPayload {
            expected: ECGB_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if &magic != ECGB_MAGIC {
        return Err(StoreError::BadMagic(magic));
    }
    if bytes[4] != ECGB_VERSION {
        return Err(StoreError::UnsupportedVersion(bytes[4]));
    }
    let n_leads = bytes[5] as usize;
    let n_samples = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let fs_hz = u32::from_le_bytes(bytes[12..16].try_into().unwrap());

    let payload = &bytes[ECGB_HEADER_LEN..];
    let expected = 4 * n_leads * n_samples;
    if payload.len() != expected {
        return Err(StoreError::TruncatedPayload {
            expected,
            actual: payload.len(),
        });
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let leads = Array2::from_shape_vec((n_leads, n_samples), values)
        .expect("payload length checked against header");
    Ok(EcgRecord::new(meta, fs_hz, leads))
}

/// Loads an ECGB file; identity and label come from `meta`.
pub fn load_record(path: impl AsRef<Path>, meta: RecordMeta) -> Result<EcgRecord, StoreError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| StoreError::io(path, e))?;
    decode_record(&bytes, meta)
}

pub fn write_record(record: &EcgRecord, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    let bytes = encode_record(record)?;
    let mut file = fs::File::create(path).map_err(|e| StoreError::io(path, e))?;
    file.write_all(&bytes).map_err(|e| StoreError::io(path, e))
}
