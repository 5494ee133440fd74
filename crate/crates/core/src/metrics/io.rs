use std::fmt::Write as _;

use super::{CalibrationBins, CurveBand, MetricsError, PredictionSet};

pub const PREDICTION_CSV_HEADER: &str = "record_id,context,z0,z1,p1,label";

/// Shortest round-tripping float formatting keeps reruns byte-identical.
pub fn predictions_to_csv(set: &PredictionSet) -> String {
    let mut out = String::with_capacity(64 * (set.len() + 1));
    out.push_str(PREDICTION_CSV_HEADER);
    out.push('\n');
    for i in 0..set.len() {
        let _ = writeln!(
            out,
            "{},{},{:?},{:?},{:?},{}",
            set.record_ids[i], set.context, set.logits[i][0], set.logits[i][1], set.p1[i], set.labels[i]
        );
    }
    out
}

pub fn predictions_from_csv(text: &str) -> Result<PredictionSet, MetricsError> {
    let bad = |line: usize, reason: String| MetricsError::BadCsv { line, reason };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == PREDICTION_CSV_HEADER => {}
        other => return Err(bad(1, format!("unexpected header {other:?}"))),
    }
    let mut context = None;
    let (mut ids, mut logits, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 6 {
            return Err(bad(n, format!("expected 6 fields, got {}", f.len())));
        }
        let ctx = f[1].parse().map_err(|e: String| bad(n, e))?;
        if *context.get_or_insert(ctx) != ctx {
            return Err(bad(n, "mixed contexts in one file".into()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(n, e.to_string()));
        ids.push(f[0].to_string());
        logits.push([num(f[2])?, num(f[3])?]);
        labels.push(match f[5] {
            "0" => 0,
            "1" => 1,
            other => return Err(bad(n, format!("label must be 0 or 1, got {other}"))),
        });
    }
    let context = context.ok_or_else(|| bad(2, "no rows".into()))?;
    PredictionSet::from_logits(context, ids, logits, labels)
}

pub fn band_to_csv(band: &CurveBand) -> String {
    let mut out = String::from("x,y_mean,y_std\n");
    for i in 0..band.grid.len() {
        let _ = writeln!(out, "{:?},{:?},{:?}", band.grid[i], band.mean[i], band.std[i]);
    }
    out
}

pub fn bins_to_csv(bins: &CalibrationBins) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    let mut out = String::from("lo,hi,count,mean_p,pos_rate\n");
    for b in &bins.bins {
        let _ = writeln!(out, "{:?},{:?},{},{},{}", b.lo, b.hi, b.count, opt(b.mean_p), opt(b.pos_rate));
    }
    out
}
