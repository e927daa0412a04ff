use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{TemporalWeights, KINDS, KIND_NAMES};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const HEADER: &str = "kind\tlag\tweight";

/// TSV with header `kind lag weight`, one row per (kind, lag).
pub fn write_weights<T: Scalar>(path: impl AsRef<Path>, w: &TemporalWeights<T>) -> Result<()> {
    let path = path.as_ref();
    let mut s = format!("{HEADER}\n");
    for (k, name) in KIND_NAMES.iter().enumerate() {
        for lag in 1..=w.lags() {
            let _ = writeln!(s, "{name}\t{lag}\t{}", w.get(k, lag).as_f64());
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_weights<T: Scalar>(path: impl AsRef<Path>) -> Result<TemporalWeights<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = path.display().to_string();
    let bad = |line: usize, msg: String| Error::Parse { file: file.clone(), line, msg };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == HEADER => {}
        _ => return Err(bad(1, "expected header `kind lag weight`".into())),
    }
    let mut rows = Vec::new();
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(bad(n + 1, "expected 3 columns".into()));
        }
        let kind = KIND_NAMES.iter().position(|k| *k == cols[0]).ok_or_else(|| bad(n + 1, format!("unknown kind {:?}", cols[0])))?;
        let lag: usize = cols[1].parse().map_err(|_| bad(n + 1, format!("bad lag {:?}", cols[1])))?;
        let w: f64 = cols[2].parse().map_err(|_| bad(n + 1, format!("bad weight {:?}", cols[2])))?;
        if lag == 0 {
            return Err(bad(n + 1, "lags start at 1".into()));
        }
        rows.push((kind, lag, w));
    }
    let lags = rows.iter().map(|r| r.1).max().unwrap_or(0);
    if rows.len() != KINDS * lags {
        return Err(bad(0, format!("expected {} rows for {lags} lags, found {}", KINDS * lags, rows.len())));
    }
    let mut arr = Array2::<T>::zeros((KINDS, lags));
    for (kind, lag, w) in rows {
        arr[(kind, lag - 1)] = T::of(w);
    }
    TemporalWeights::from_array(arr)
}
