//! CSV tables with a schema naming the target, categorical and sensitive
//! columns. Categoricals are one-hot encoded over their sorted levels;
//! numeric columns are min-max scaled to `[0, 1]` (constant columns map to 0).

use std::collections::BTreeSet;
use std::path::Path;

use serde::Deserialize;

use gradcert_core::{Dataset, Tensor};

use crate::error::{AppError, AppResult, FormatError};

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub target: String,
    /// Target value mapped to class 1; other values become class 0. Without
    /// it, classes are the sorted distinct target values.
    #[serde(default)]
    pub positive: Option<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub sensitive: Vec<String>,
    #[serde(default)]
    pub drop: Vec<String>,
}

impl Schema {
    pub fn load(path: &Path) -> AppResult<Schema> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::input(path, e))?;
        toml::from_str(&text).map_err(|e| FormatError::in_file(&path.display().to_string(), format!("invalid schema: {e}")).into())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Feature {
    Numeric { column: String, min: f64, max: f64 },
    OneHot { column: String, level: String },
}

impl Feature {
    pub fn name(&self) -> String {
        match self {
            Feature::Numeric { column, .. } => column.clone(),
            Feature::OneHot { column, level } => format!("{column}={level}"),
        }
    }
}

/// How raw columns map onto encoded features.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    pub features: Vec<Feature>,
    pub classes: Vec<String>,
}

impl Encoding {
    /// Raw value of an encoded numeric feature.
    pub fn denormalize(&self, feature: usize, value: f64) -> Option<f64> {
        match self.features.get(feature)? {
            Feature::Numeric { min, max, .. } => Some(if max > min { min + value * (max - min) } else { *min }),
            Feature::OneHot { .. } => None,
        }
    }

    fn normalize(min: f64, max: f64, v: f64) -> f64 {
        if max > min {
            (v - min) / (max - min)
        } else {
            0.0
        }
    }
}

pub fn parse_tabular(csv_text: &str, file: &str, schema: &Schema) -> Result<(Dataset, Encoding), FormatError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(csv_text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| FormatError::at_row(file, 0, format!("unreadable header: {e}")))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let find = |name: &str, role: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| FormatError::in_file(file, format!("{role} column '{name}' is missing from the header")))
    };
    let target = find(&schema.target, "target")?;
    for c in &schema.categorical {
        find(c, "categorical")?;
    }
    for c in &schema.sensitive {
        find(c, "sensitive")?;
    }
    for c in &schema.drop {
        find(c, "dropped")?;
    }
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| FormatError::at_row(file, i + 1, e.to_string()))?;
        rows.push(record.iter().map(|s| s.trim().to_string()).collect());
    }
    if rows.is_empty() {
        return Err(FormatError::in_file(file, "no data rows"));
    }

    let mut features = Vec::new();
    let mut sources = Vec::new(); // (column index, feature)
    for (c, name) in header.iter().enumerate() {
        if c == target || schema.drop.contains(name) {
            continue;
        }
        if schema.categorical.contains(name) {
            let levels: BTreeSet<&str> = rows.iter().map(|r| r[c].as_str()).collect();
            for level in levels {
                features.push(Feature::OneHot { column: name.clone(), level: level.to_string() });
                sources.push(c);
            }
        } else {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for (r, row) in rows.iter().enumerate() {
                let v: f64 = row[c]
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| FormatError::at_cell(file, r + 1, name, format!("cannot parse '{}' as a number", row[c])))?;
                min = min.min(v);
                max = max.max(v);
            }
            features.push(Feature::Numeric { column: name.clone(), min, max });
            sources.push(c);
        }
    }
    let classes: Vec<String> = match &schema.positive {
        Some(p) => vec![format!("not {p}"), p.clone()],
        None => rows.iter().map(|r| r[target].clone()).collect::<BTreeSet<_>>().into_iter().collect(),
    };
    let n = features.len();
    let mut data = Vec::with_capacity(rows.len() * n);
    let mut labels = Vec::with_capacity(rows.len());
    for row in &rows {
        for (f, &c) in features.iter().zip(&sources) {
            data.push(match f {
                Feature::Numeric { min, max, .. } => Encoding::normalize(*min, *max, row[c].parse().expect("checked above")),
                Feature::OneHot { level, .. } => f64::from(u8::from(row[c] == *level)),
            });
        }
        labels.push(match &schema.positive {
            Some(p) => usize::from(row[target] == *p),
            None => classes.iter().position(|k| *k == row[target]).expect("collected above"),
        });
    }
    let sensitive: Vec<usize> = features
        .iter()
        .enumerate()
        .filter(|(_, f)| match f {
            Feature::Numeric { column, .. } | Feature::OneHot { column, .. } => schema.sensitive.contains(column),
        })
        .map(|(i, _)| i)
        .collect();
    let names = features.iter().map(Feature::name).collect();
    let name = Path::new(file).file_stem().map_or("table".to_string(), |s| s.to_string_lossy().into_owned());
    let ds = Dataset::new(name, Tensor::matrix(rows.len(), n, data), labels, classes.len().max(2), vec![n], vec![0.0; n], vec![1.0; n])
        .and_then(|d| d.with_sensitive(sensitive))
        .and_then(|d| d.with_feature_names(names))
        .map_err(|e| FormatError::in_file(file, e.to_string()))?;
    Ok((ds, Encoding { features, classes }))
}

pub fn load_tabular(csv_path: &Path, schema_path: &Path) -> AppResult<(Dataset, Encoding)> {
    let schema = Schema::load(schema_path)?;
    let text = std::fs::read_to_string(csv_path).map_err(|e| AppError::input(csv_path, e))?;
    Ok(parse_tabular(&text, &csv_path.display().to_string(), &schema)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        toml::from_str("target = \"y\"\ncategorical = [\"color\"]\nsensitive = [\"color\"]\n").unwrap()
    }

    #[test]
    fn one_hot_arithmetic() {
        let csv = "age,color,y\n30,red,0\n50,blue,1\n";
        let (ds, enc) = parse_tabular(csv, "t.csv", &schema()).unwrap();
        // one numeric + levels {blue, red}
        assert_eq!(ds.features(), 1 + 2);
        let csv3 = "age,color,y\n30,red,0\n50,blue,1\n40,green,1\n";
        let (ds3, _) = parse_tabular(csv3, "t.csv", &schema()).unwrap();
        assert_eq!(ds3.features(), 1 + 3);
        assert_eq!(ds3.sensitive_indices, vec![1, 2, 3]);
        assert_eq!(enc.features[0], Feature::Numeric { column: "age".into(), min: 30.0, max: 50.0 });
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let (ds, _) = parse_tabular("a,y\n7,0\n7,1\n", "t.csv", &toml::from_str("target = \"y\"").unwrap()).unwrap();
        assert_eq!(ds.inputs.data(), &[0.0, 0.0]);
    }

    #[test]
    fn denormalize_round_trip() {
        let raw = [3.25, -1.5, 10.0, 7.125];
        let csv: String = std::iter::once("v,y".to_string()).chain(raw.iter().map(|v| format!("{v},0"))).collect::<Vec<_>>().join("\n");
        let (ds, enc) = parse_tabular(&csv, "t.csv", &toml::from_str("target = \"y\"").unwrap()).unwrap();
        for (i, &r) in raw.iter().enumerate() {
            assert!((enc.denormalize(0, ds.row(i)[0]).unwrap() - r).abs() < 1e-12);
        }
    }

    #[test]
    fn diagnostics_name_row_and_column() {
        let err = parse_tabular("age,color,y\n30,red,0\nold,blue,1\n", "t.csv", &schema()).unwrap_err();
        assert_eq!(err.to_string(), "t.csv: row 2, column 'age': cannot parse 'old' as a number");
        let err = parse_tabular("age,y\n1,0\n", "t.csv", &schema()).unwrap_err();
        assert!(err.to_string().contains("categorical column 'color' is missing"));
    }
}
