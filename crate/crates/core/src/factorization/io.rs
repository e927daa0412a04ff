use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{EmbeddingModel, FeatureSpace};
use crate::dataset::DatasetBundle;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// TSV rows `feature_side feature_value bias v_1 .. v_d` after a header.
pub fn write_model<T: Scalar>(path: impl AsRef<Path>, model: &EmbeddingModel<T>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from("feature_side\tfeature_value\tbias");
    for k in 1..=model.dim() {
        let _ = write!(s, "\tv_{k}");
    }
    s.push('\n');
    let sides = [("user", model.space().user_names()), ("item", model.space().item_names())];
    for (side, names) in sides {
        for (row, name) in names.iter().enumerate() {
            let (bias, v) = if side == "user" {
                (model.user_bias(row), model.user_vec(row))
            } else {
                (model.item_bias(row), model.item_vec(row))
            };
            let _ = write!(s, "{side}\t{name}\t{}", bias.as_f64());
            for x in v {
                let _ = write!(s, "\t{}", x.as_f64());
            }
            s.push('\n');
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Rebuilds the feature space from `bundle` and fills it from the file.
/// Every feature row of the bundle must be present.
pub fn read_model<T: Scalar>(path: impl AsRef<Path>, bundle: &DatasetBundle) -> Result<EmbeddingModel<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = path.display().to_string();
    let bad = |line: usize, msg: String| Error::Parse { file: file.clone(), line, msg };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
    let dim = header.split('\t').count().saturating_sub(3);
    if !header.starts_with("feature_side\tfeature_value\tbias") || dim == 0 {
        return Err(bad(1, "expected header `feature_side feature_value bias v_1 ..`".into()));
    }
    let mut rows: HashMap<(bool, &str), (T, Vec<T>)> = HashMap::new();
    for (n, line) in lines.enumerate() {
        let ln = n + 2;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != dim + 3 {
            return Err(bad(ln, format!("expected {} columns, found {}", dim + 3, cols.len())));
        }
        let user = match cols[0] {
            "user" => true,
            "item" => false,
            other => return Err(bad(ln, format!("unknown side {other:?}"))),
        };
        let mut nums = cols[2..].iter().map(|c| c.parse::<f64>().map(T::of).map_err(|_| bad(ln, format!("bad number {c:?}"))));
        let bias = nums.next().expect("dim >= 1")?;
        let v = nums.collect::<Result<Vec<T>>>()?;
        rows.insert((user, cols[1]), (bias, v));
    }
    let use_features = rows.keys().any(|(_, name)| !name.starts_with("id="));
    let space = FeatureSpace::new(bundle, use_features);
    let mut model = EmbeddingModel::zeros(space.clone(), dim);
    for (user, names) in [(true, space.user_names()), (false, space.item_names())] {
        for (row, name) in names.iter().enumerate() {
            let (bias, v) = rows
                .get(&(user, name.as_str()))
                .ok_or_else(|| Error::Input(format!("{file}: no row for feature {name:?}")))?;
            if user {
                model.set_user_row(row, *bias, v);
            } else {
                model.set_item_row(row, *bias, v);
            }
        }
    }
    Ok(model)
}
