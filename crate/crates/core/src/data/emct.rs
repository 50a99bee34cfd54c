//! EMCT tensor files.
//!
//! Layout: `"EMCT"` magic, version byte (1), dtype byte (1 = f32, 2 = f64,
//! 3 = u16 labels), ndim byte, `ndim` little-endian u32 dims, then the
//! row-major little-endian payload. Inputs and labels live in separate files
//! tied together by a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EMCT";
const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DType {
    F32,
    F64,
    U16,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
            DType::U16 => 3,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            3 => Some(DType::U16),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U16 => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EmctData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U16(Vec<u16>),
}

impl EmctData {
    pub fn dtype(&self) -> DType {
        match self {
            EmctData::F32(_) => DType::F32,
            EmctData::F64(_) => DType::F64,
            EmctData::U16(_) => DType::U16,
        }
    }

    fn len(&self) -> usize {
        match self {
            EmctData::F32(v) => v.len(),
            EmctData::F64(v) => v.len(),
            EmctData::U16(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmctArray {
    pub dims: Vec<u32>,
    pub data: EmctData,
}

pub fn encode(array: &EmctArray) -> Result<Vec<u8>> {
    let expect: usize = array.dims.iter().map(|&d| d as usize).product();
    if expect != array.data.len() || array.dims.len() > u8::MAX as usize {
        return Err(Error::InvalidArgument(format!(
            "EMCT dims {:?} do not describe {} values",
            array.dims,
            array.data.len()
        )));
    }
    let dtype = array.data.dtype();
    let mut out = Vec::with_capacity(7 + 4 * array.dims.len() + expect * dtype.size());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype.code());
    out.push(array.dims.len() as u8);
    for d in &array.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    match &array.data {
        EmctData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        EmctData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        EmctData::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<EmctArray> {
    let fmt = |detail: String| Error::Format { path: path.to_path_buf(), detail };
    if bytes.len() < 7 {
        return Err(Error::Truncated { path: path.to_path_buf(), expected: 7, actual: bytes.len() });
    }
    if &bytes[0..4] != MAGIC {
        return Err(fmt(format!("bad magic {:?}", &bytes[0..4])));
    }
    if bytes[4] != VERSION {
        return Err(fmt(format!("unsupported version {}", bytes[4])));
    }
    let dtype = DType::from_code(bytes[5]).ok_or_else(|| fmt(format!("unknown dtype code {}", bytes[5])))?;
    let ndim = bytes[6] as usize;
    let header = 7 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Truncated { path: path.to_path_buf(), expected: header, actual: bytes.len() });
    }
    let dims: Vec<u32> = bytes[7..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
    let expected = count
        .and_then(|c| c.checked_mul(dtype.size()))
        .and_then(|p| p.checked_add(header))
        .ok_or_else(|| fmt(format!("dims {dims:?} overflow")))?;
    if bytes.len() < expected {
        return Err(Error::Truncated { path: path.to_path_buf(), expected, actual: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(fmt(format!("{} trailing bytes after payload", bytes.len() - expected)));
    }
    let payload = &bytes[header..];
    let data = match dtype {
        DType::F32 => EmctData::F32(
            payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect(),
        ),
        DType::F64 => EmctData::F64(
            payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
        ),
        DType::U16 => EmctData::U16(
            payload.chunks_exact(2).map(|c| u16::from_le_bytes(c.try_into().expect("2 bytes"))).collect(),
        ),
    };
    Ok(EmctArray { dims, data })
}

pub fn read_emct(path: impl AsRef<Path>) -> Result<EmctArray> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn write_emct(path: impl AsRef<Path>, array: &EmctArray) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(array)?).map_err(|e| Error::io(path, e))
}

/// JSON manifest naming an inputs file and a labels file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub inputs: PathBuf,
    pub labels: PathBuf,
    pub num_classes: usize,
    #[serde(default)]
    pub name: Option<String>,
}

/// Loads the dataset described by the manifest at `path`. Relative file
/// names resolve against the manifest's directory.
pub fn load_tensor_file(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let inputs_path = base.join(&manifest.inputs);
    let labels_path = base.join(&manifest.labels);

    let inputs = read_emct(&inputs_path)?;
    let values: Vec<f64> = match inputs.data {
        EmctData::F32(v) => v.into_iter().map(f64::from).collect(),
        EmctData::F64(v) => v,
        EmctData::U16(_) => {
            return Err(Error::Format { path: inputs_path, detail: "dtype mismatch: inputs must be f32 or f64".into() })
        }
    };
    let labels = read_emct(&labels_path)?;
    let EmctData::U16(raw) = labels.data else {
        return Err(Error::Format { path: labels_path, detail: "dtype mismatch: labels must be u16".into() });
    };
    if labels.dims.len() != 1 {
        return Err(Error::Format { path: labels_path, detail: format!("labels must be 1-D, got {:?}", labels.dims) });
    }
    let shape: Vec<usize> = inputs.dims.iter().map(|&d| d as usize).collect();
    let name = manifest
        .name
        .clone()
        .unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    let ds = Dataset::new(name, Tensor::new(shape, values)?, raw.into_iter().map(usize::from).collect(), manifest.num_classes)?;
    ds.check_conflicts()?;
    Ok(ds)
}

/// Writes `<stem>.inputs.emct`, `<stem>.labels.emct` and `<stem>.json` into
/// `dir`, returning the manifest path.
pub fn save_tensor_files(ds: &Dataset, dir: impl AsRef<Path>, stem: &str, dtype: DType) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let dims: Vec<u32> = ds.inputs().shape().iter().map(|&d| d as u32).collect();
    let data = match dtype {
        DType::F32 => EmctData::F32(ds.inputs().data().iter().map(|&v| v as f32).collect()),
        DType::F64 => EmctData::F64(ds.inputs().data().to_vec()),
        DType::U16 => return Err(Error::InvalidArgument("inputs cannot be stored as u16".into())),
    };
    let labels = ds
        .labels()
        .iter()
        .map(|&l| u16::try_from(l).map_err(|_| Error::InvalidArgument(format!("label {l} exceeds u16"))))
        .collect::<Result<Vec<u16>>>()?;
    let inputs_name = format!("{stem}.inputs.emct");
    let labels_name = format!("{stem}.labels.emct");
    write_emct(dir.join(&inputs_name), &EmctArray { dims, data })?;
    write_emct(dir.join(&labels_name), &EmctArray { dims: vec![labels.len() as u32], data: EmctData::U16(labels) })?;
    let manifest = DatasetManifest {
        inputs: inputs_name.into(),
        labels: labels_name.into(),
        num_classes: ds.num_classes(),
        name: Some(ds.name().to_string()),
    };
    let mpath = dir.join(format!("{stem}.json"));
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
    Ok(mpath)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_clusters;

    #[test]
    fn four_dim_header_implies_payload_size() {
        let arr = EmctArray { dims: vec![2, 1, 2, 2], data: EmctData::F64((0..8).map(|i| i as f64).collect()) };
        let bytes = encode(&arr).unwrap();
        assert_eq!(bytes.len(), 7 + 16 + 8 * 8);
        let back = decode(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, arr);
        let bad = EmctArray { dims: vec![2, 1, 2, 2], data: EmctData::F64(vec![0.0; 7]) };
        assert!(encode(&bad).is_err());
    }

    #[test]
    fn truncation_reports_byte_counts() {
        let arr = EmctArray { dims: vec![3], data: EmctData::U16(vec![1, 2, 3]) };
        let bytes = encode(&arr).unwrap();
        let err = decode(&bytes[..bytes.len() - 1], Path::new("t.emct")).unwrap_err();
        match err {
            Error::Truncated { expected, actual, .. } => assert_eq!((expected, actual), (17, 16)),
            other => panic!("unexpected {other}"),
        }
        assert!(err_msg(&bytes[..bytes.len() - 1]).contains("expected 17 bytes, found 16"));
    }

    fn err_msg(bytes: &[u8]) -> String {
        decode(bytes, Path::new("t.emct")).unwrap_err().to_string()
    }

    #[test]
    fn bad_magic_and_dtype_are_rejected() {
        let arr = EmctArray { dims: vec![1], data: EmctData::F32(vec![1.0]) };
        let mut bytes = encode(&arr).unwrap();
        bytes[0] = b'X';
        assert!(err_msg(&bytes).contains("bad magic"));
        let mut bytes = encode(&arr).unwrap();
        bytes[5] = 9;
        assert!(err_msg(&bytes).contains("unknown dtype"));
    }

    #[test]
    fn dataset_roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_clusters(3, 5, 12, 2.0, 1).unwrap();
        let m = save_tensor_files(&ds, dir.path(), "clusters", DType::F64).unwrap();
        let back = load_tensor_file(&m).unwrap();
        assert_eq!(back.inputs().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   ds.inputs().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(back.labels(), ds.labels());
        assert_eq!(back.num_classes(), 3);
    }

    #[test]
    fn label_file_with_float_dtype_is_a_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_clusters(2, 2, 4, 2.0, 1).unwrap();
        let m = save_tensor_files(&ds, dir.path(), "d", DType::F32).unwrap();
        write_emct(dir.path().join("d.labels.emct"), &EmctArray { dims: vec![4], data: EmctData::F32(vec![0.0; 4]) })
            .unwrap();
        let err = load_tensor_file(&m).unwrap_err();
        assert!(err.to_string().contains("dtype mismatch"), "{err}");
    }
}
