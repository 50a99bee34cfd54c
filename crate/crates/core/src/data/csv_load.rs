use std::path::Path;

use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Reads a headered CSV of numeric features plus one integral label column.
/// Every feature column is standardized to zero mean and unit (population)
/// variance; constant columns become all zeros.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str, num_classes: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Dataset(format!("label column {label_column:?} not in header {headers:?}")))?;
    let features = headers.len() - 1;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for (col, field) in record.iter().enumerate() {
            let field = field.trim();
            if col == label_idx {
                let label: i64 = field
                    .parse()
                    .ok()
                    .or_else(|| field.parse::<f64>().ok().filter(|v| v.fract() == 0.0).map(|v| v as i64))
                    .ok_or_else(|| Error::Dataset(format!("row {row}: label {field:?} is not an integer")))?;
                if label < 0 || label as usize >= num_classes {
                    return Err(Error::Dataset(format!("row {row}: label {label} outside [0, {num_classes})")));
                }
                labels.push(label as usize);
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Dataset(format!("row {row}, column {:?}: {field:?} is not numeric", &headers[col])))?;
                if !v.is_finite() {
                    return Err(Error::Dataset(format!("row {row}: non-finite feature")));
                }
                values.push(v);
            }
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::Dataset(format!("{} has no data rows", path.display())));
    }
    standardize(&mut values, n, features);
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ds = Dataset::new(name, Tensor::new(vec![n, features], values)?, labels, num_classes)?;
    ds.check_conflicts()?;
    Ok(ds)
}

fn standardize(values: &mut [f64], n: usize, features: usize) {
    for j in 0..features {
        let mean = (0..n).map(|i| values[i * features + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (values[i * features + j] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        let constant = sd <= 1e-12 * mean.abs().max(1.0);
        for i in 0..n {
            let v = &mut values[i * features + j];
            *v = if constant { 0.0 } else { (*v - mean) / sd };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn three_rows_two_classes() {
        let f = write("a,b,label\n1,5,0\n2,5,1\n4,5,0\n");
        let ds = load_csv(f.path(), "label", 2).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.sample_dims(), &[2]);
        // constant column b standardizes to zero
        assert!((0..3).all(|i| ds.row(i)[1] == 0.0));
    }

    #[test]
    fn standardized_moments() {
        let mut text = String::from("x,y,label\n");
        for i in 0..50 {
            text += &format!("{},{},{}\n", (i as f64 * 1.7).sin() * 10.0 + 3.0, i * i, i % 2);
        }
        let ds = load_csv(write(&text).path(), "label", 2).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = (0..50).map(|i| ds.row(i)[j]).collect();
            let mean = col.iter().sum::<f64>() / 50.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-10 && (var - 1.0).abs() < 1e-10, "col {j}: {mean} {var}");
        }
    }

    #[test]
    fn bad_rows_are_errors() {
        assert!(load_csv(write("a,label\nx,0\n").path(), "label", 2).is_err());
        assert!(load_csv(write("a,label\n1,2\n").path(), "label", 2).is_err());
        assert!(load_csv(write("a,label\n1,0.5\n").path(), "label", 2).is_err());
        assert!(load_csv(write("a,label\n1,0\n1,1\n").path(), "label", 2).is_err());
        assert!(load_csv(write("a,b\n1,0\n").path(), "label", 2).is_err());
    }
}
