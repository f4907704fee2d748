//! Tensor bundle: everything model-derived that the measures need.
//!
//! On disk a bundle is a directory holding `header.json` and `arrays.bin`.
//! The header carries the vocabulary, adjective tokenizations and an index of
//! named arrays (byte offset and shape); `arrays.bin` is raw row-major f32.
//! The canonical writer always emits little-endian data with arrays laid out
//! in name order, so `write(read(b))` is byte-identical for canonical input.
//!
//! Array names:
//! - `output_matrix` `[V, d]`, `output_bias` `[V]`
//! - `prompts/<prompt id>/logits` `[V]`, `prompts/<prompt id>/hidden` `[d]`
//! - `ceat/<word>` `[n, d]`

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const BUNDLE_VERSION: u64 = 1;
pub const HEADER_FILE: &str = "header.json";
pub const ARRAYS_FILE: &str = "arrays.bin";
const FORMAT_TAG: &str = "stereo-meter-bundle";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed bundle header: {0}")]
    Header(String),
    #[error("unsupported bundle version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u64, supported: u64 },
    #[error("unsupported dtype `{0}` (expected f32)")]
    UnsupportedDtype(String),
    #[error("unsupported byte order `{0}` (expected LE or BE)")]
    UnsupportedByteOrder(String),
    #[error("shape mismatch in `{array}`{}: expected {expected:?}, found {found:?}", prompt_suffix(.prompt))]
    ShapeMismatch {
        array: String,
        prompt: Option<String>,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("non-finite value at element {index} of `{array}`{}", prompt_suffix(.prompt))]
    NonFinite {
        array: String,
        prompt: Option<String>,
        index: usize,
    },
    #[error("array `{array}` extends past the end of {ARRAYS_FILE}")]
    OutOfBounds { array: String },
    #[error("unknown array name `{0}`")]
    UnknownArray(String),
    #[error("bundle has no `{0}` array")]
    MissingArray(String),
    #[error("tokenization of `{adjective}` refers to token {index}, vocabulary has {vocab_size}")]
    BadTokenization {
        adjective: String,
        index: usize,
        vocab_size: usize,
    },
}

fn prompt_suffix(prompt: &Option<String>) -> String {
    prompt
        .as_ref()
        .map(|p| format!(" (prompt `{p}`)"))
        .unwrap_or_default()
}

/// Dense row-major f32 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<f32> = rows.iter().flatten().copied().collect();
        Matrix::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Tensors captured for one prompt at the trait mask position.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptTensors {
    pub logits: Option<Vec<f32>>,
    pub hidden: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorBundle {
    pub vocabulary: Vec<String>,
    /// Adjective → vocabulary indices of its subwords, left to right.
    pub adjective_tokenization: BTreeMap<String, Vec<usize>>,
    /// `V × d` last linear layer.
    pub output_matrix: Matrix,
    pub output_bias: Option<Vec<f32>>,
    pub prompts: BTreeMap<String, PromptTensors>,
    /// Word → `n × d` contextual embeddings, one row per sampled sentence.
    pub ceat_embeddings: BTreeMap<String, Matrix>,
    /// Free-form extractor provenance (model id, seed, tokenizer hash, ...).
    pub metadata: BTreeMap<String, Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    offset: u64,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u64,
    vocab_size: usize,
    hidden_size: usize,
    dtype: String,
    byte_order: String,
    vocabulary: Vec<String>,
    adjective_tokenization: BTreeMap<String, Vec<usize>>,
    arrays: BTreeMap<String, ArrayEntry>,
    #[serde(default)]
    metadata: BTreeMap<String, Value>,
}

enum ArrayName<'a> {
    OutputMatrix,
    OutputBias,
    Logits(&'a str),
    Hidden(&'a str),
    Ceat(&'a str),
}

fn parse_array_name(name: &str) -> Option<ArrayName<'_>> {
    match name {
        "output_matrix" => return Some(ArrayName::OutputMatrix),
        "output_bias" => return Some(ArrayName::OutputBias),
        _ => {}
    }
    if let Some(word) = name.strip_prefix("ceat/") {
        return Some(ArrayName::Ceat(word));
    }
    let rest = name.strip_prefix("prompts/")?;
    let (id, kind) = rest.rsplit_once('/')?;
    match kind {
        "logits" => Some(ArrayName::Logits(id)),
        "hidden" => Some(ArrayName::Hidden(id)),
        _ => None,
    }
}

fn check_finite(array: &str, prompt: Option<&str>, data: &[f32]) -> Result<(), BundleError> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(BundleError::NonFinite {
            array: array.to_string(),
            prompt: prompt.map(str::to_string),
            index,
        }),
        None => Ok(()),
    }
}

fn check_shape(
    array: &str,
    prompt: Option<&str>,
    expected: &[usize],
    found: &[usize],
) -> Result<(), BundleError> {
    if expected != found {
        return Err(BundleError::ShapeMismatch {
            array: array.to_string(),
            prompt: prompt.map(str::to_string),
            expected: expected.to_vec(),
            found: found.to_vec(),
        });
    }
    Ok(())
}

impl TensorBundle {
    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn hidden_size(&self) -> usize {
        self.output_matrix.cols()
    }

    /// Checks every shape and finiteness invariant of an in-memory bundle.
    pub fn validate(&self) -> Result<(), BundleError> {
        let v = self.vocab_size();
        let d = self.hidden_size();
        check_shape(
            "output_matrix",
            None,
            &[v, d],
            &[self.output_matrix.rows(), self.output_matrix.cols()],
        )?;
        check_finite("output_matrix", None, self.output_matrix.data())?;
        if let Some(b) = &self.output_bias {
            check_shape("output_bias", None, &[v], &[b.len()])?;
            check_finite("output_bias", None, b)?;
        }
        for (id, t) in &self.prompts {
            if let Some(l) = &t.logits {
                let name = format!("prompts/{id}/logits");
                check_shape(&name, Some(id), &[v], &[l.len()])?;
                check_finite(&name, Some(id), l)?;
            }
            if let Some(h) = &t.hidden {
                let name = format!("prompts/{id}/hidden");
                check_shape(&name, Some(id), &[d], &[h.len()])?;
                check_finite(&name, Some(id), h)?;
            }
        }
        for (word, m) in &self.ceat_embeddings {
            let name = format!("ceat/{word}");
            if m.rows() == 0 || m.cols() != d {
                return Err(BundleError::ShapeMismatch {
                    array: name,
                    prompt: None,
                    expected: vec![m.rows().max(1), d],
                    found: vec![m.rows(), m.cols()],
                });
            }
            check_finite(&name, None, m.data())?;
        }
        for (adjective, toks) in &self.adjective_tokenization {
            if let Some(&index) = toks.iter().find(|&&i| i >= v) {
                return Err(BundleError::BadTokenization {
                    adjective: adjective.clone(),
                    index,
                    vocab_size: v,
                });
            }
        }
        Ok(())
    }

    pub fn logits(&self, prompt: &str) -> Option<&[f32]> {
        self.prompts.get(prompt)?.logits.as_deref()
    }

    pub fn hidden(&self, prompt: &str) -> Option<&[f32]> {
        self.prompts.get(prompt)?.hidden.as_deref()
    }

    /// `A h (+ bias)` in f64, accumulated in index order.
    pub fn project(&self, hidden: &[f32]) -> Vec<f64> {
        let bias = self.output_bias.as_deref();
        self.output_matrix
            .iter_rows()
            .enumerate()
            .map(|(j, row)| {
                let dot: f64 = row
                    .iter()
                    .zip(hidden)
                    .map(|(&a, &h)| f64::from(a) * f64::from(h))
                    .sum();
                dot + bias.map_or(0.0, |b| f64::from(b[j]))
            })
            .collect()
    }

    /// Largest absolute gap between stored logits and `A h + bias` over every
    /// prompt that carries both, with the worst prompt id.
    pub fn max_projection_gap(&self) -> Option<(String, f64)> {
        let mut worst: Option<(String, f64)> = None;
        for (id, t) in &self.prompts {
            let (Some(l), Some(h)) = (&t.logits, &t.hidden) else {
                continue;
            };
            let gap = self
                .project(h)
                .iter()
                .zip(l)
                .map(|(p, &s)| (p - f64::from(s)).abs())
                .fold(0.0, f64::max);
            if worst.as_ref().is_none_or(|(_, w)| gap > *w) {
                worst = Some((id.clone(), gap));
            }
        }
        worst
    }

    fn arrays(&self) -> BTreeMap<String, (Vec<usize>, &[f32])> {
        let mut out: BTreeMap<String, (Vec<usize>, &[f32])> = BTreeMap::new();
        out.insert(
            "output_matrix".into(),
            (
                vec![self.output_matrix.rows(), self.output_matrix.cols()],
                self.output_matrix.data(),
            ),
        );
        if let Some(b) = &self.output_bias {
            out.insert("output_bias".into(), (vec![b.len()], b));
        }
        for (id, t) in &self.prompts {
            if let Some(l) = &t.logits {
                out.insert(format!("prompts/{id}/logits"), (vec![l.len()], l));
            }
            if let Some(h) = &t.hidden {
                out.insert(format!("prompts/{id}/hidden"), (vec![h.len()], h));
            }
        }
        for (word, m) in &self.ceat_embeddings {
            out.insert(format!("ceat/{word}"), (vec![m.rows(), m.cols()], m.data()));
        }
        out
    }

    /// Canonical `(header.json, arrays.bin)` bytes.
    pub fn to_bytes(&self) -> (Vec<u8>, Vec<u8>) {
        let mut blob = Vec::new();
        let mut index = BTreeMap::new();
        for (name, (shape, data)) in self.arrays() {
            index.insert(
                name,
                ArrayEntry {
                    offset: blob.len() as u64,
                    shape,
                },
            );
            blob.reserve(data.len() * 4);
            for v in data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            format: FORMAT_TAG.into(),
            version: BUNDLE_VERSION,
            vocab_size: self.vocab_size(),
            hidden_size: self.hidden_size(),
            dtype: "f32".into(),
            byte_order: "LE".into(),
            vocabulary: self.vocabulary.clone(),
            adjective_tokenization: self.adjective_tokenization.clone(),
            arrays: index,
            metadata: self.metadata.clone(),
        };
        let mut json = serde_json::to_vec_pretty(&header).expect("header serializes");
        json.push(b'\n');
        (json, blob)
    }

    /// SHA-256 over the canonical header and array bytes.
    pub fn content_hash(&self) -> String {
        let (header, blob) = self.to_bytes();
        let mut h = Sha256::new();
        h.update(&header);
        h.update(&blob);
        hex::encode(h.finalize())
    }

    pub fn write(&self, dir: &Path) -> Result<(), BundleError> {
        self.validate()?;
        let io = |path: PathBuf| move |source| BundleError::Io { path, source };
        fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
        let (header, blob) = self.to_bytes();
        fs::write(dir.join(HEADER_FILE), header).map_err(io(dir.join(HEADER_FILE)))?;
        fs::write(dir.join(ARRAYS_FILE), blob).map_err(io(dir.join(ARRAYS_FILE)))?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, BundleError> {
        let io = |path: PathBuf| move |source| BundleError::Io { path, source };
        let header_bytes = fs::read(dir.join(HEADER_FILE)).map_err(io(dir.join(HEADER_FILE)))?;
        let blob = fs::read(dir.join(ARRAYS_FILE)).map_err(io(dir.join(ARRAYS_FILE)))?;
        Self::from_bytes(&header_bytes, &blob)
    }

    pub fn from_bytes(header_bytes: &[u8], blob: &[u8]) -> Result<Self, BundleError> {
        let raw: Value =
            serde_json::from_slice(header_bytes).map_err(|e| BundleError::Header(e.to_string()))?;
        let version = raw
            .get("version")
            .and_then(Value::as_u64)
            .ok_or_else(|| BundleError::Header("missing numeric `version`".into()))?;
        if version != BUNDLE_VERSION {
            return Err(BundleError::UnsupportedVersion {
                found: version,
                supported: BUNDLE_VERSION,
            });
        }
        let header: Header =
            serde_json::from_value(raw).map_err(|e| BundleError::Header(e.to_string()))?;
        if header.format != FORMAT_TAG {
            return Err(BundleError::Header(format!(
                "format tag `{}` is not `{FORMAT_TAG}`",
                header.format
            )));
        }
        if header.dtype != "f32" {
            return Err(BundleError::UnsupportedDtype(header.dtype));
        }
        let big_endian = match header.byte_order.as_str() {
            "LE" => false,
            "BE" => true,
            other => return Err(BundleError::UnsupportedByteOrder(other.to_string())),
        };
        let (v, d) = (header.vocab_size, header.hidden_size);
        if header.vocabulary.len() != v {
            return Err(BundleError::ShapeMismatch {
                array: "vocabulary".into(),
                prompt: None,
                expected: vec![v],
                found: vec![header.vocabulary.len()],
            });
        }

        let decode = |name: &str, entry: &ArrayEntry| -> Result<Vec<f32>, BundleError> {
            let count: usize = entry.shape.iter().product();
            let start = usize::try_from(entry.offset)
                .map_err(|_| BundleError::OutOfBounds { array: name.into() })?;
            let end = start
                .checked_add(count * 4)
                .filter(|&e| e <= blob.len())
                .ok_or_else(|| BundleError::OutOfBounds { array: name.into() })?;
            Ok(blob[start..end]
                .chunks_exact(4)
                .map(|c| {
                    let b = [c[0], c[1], c[2], c[3]];
                    if big_endian {
                        f32::from_be_bytes(b)
                    } else {
                        f32::from_le_bytes(b)
                    }
                })
                .collect())
        };

        let mut output_matrix = None;
        let mut output_bias = None;
        let mut prompts: BTreeMap<String, PromptTensors> = BTreeMap::new();
        let mut ceat_embeddings = BTreeMap::new();
        for (name, entry) in &header.arrays {
            let kind = parse_array_name(name).ok_or_else(|| BundleError::UnknownArray(name.clone()))?;
            match kind {
                ArrayName::OutputMatrix => {
                    check_shape(name, None, &[v, d], &entry.shape)?;
                    let data = decode(name, entry)?;
                    check_finite(name, None, &data)?;
                    output_matrix = Some(Matrix::new(v, d, data));
                }
                ArrayName::OutputBias => {
                    check_shape(name, None, &[v], &entry.shape)?;
                    let data = decode(name, entry)?;
                    check_finite(name, None, &data)?;
                    output_bias = Some(data);
                }
                ArrayName::Logits(id) => {
                    check_shape(name, Some(id), &[v], &entry.shape)?;
                    let data = decode(name, entry)?;
                    check_finite(name, Some(id), &data)?;
                    prompts.entry(id.to_string()).or_default().logits = Some(data);
                }
                ArrayName::Hidden(id) => {
                    check_shape(name, Some(id), &[d], &entry.shape)?;
                    let data = decode(name, entry)?;
                    check_finite(name, Some(id), &data)?;
                    prompts.entry(id.to_string()).or_default().hidden = Some(data);
                }
                ArrayName::Ceat(word) => {
                    let rows = entry.shape.first().copied().unwrap_or(0);
                    if entry.shape.len() != 2 || rows == 0 {
                        return Err(BundleError::ShapeMismatch {
                            array: name.clone(),
                            prompt: None,
                            expected: vec![rows.max(1), d],
                            found: entry.shape.clone(),
                        });
                    }
                    check_shape(name, None, &[rows, d], &entry.shape)?;
                    let data = decode(name, entry)?;
                    check_finite(name, None, &data)?;
                    ceat_embeddings.insert(word.to_string(), Matrix::new(rows, d, data));
                }
            }
        }

        let bundle = TensorBundle {
            vocabulary: header.vocabulary,
            adjective_tokenization: header.adjective_tokenization,
            output_matrix: output_matrix
                .ok_or_else(|| BundleError::MissingArray("output_matrix".into()))?,
            output_bias,
            prompts,
            ceat_embeddings,
            metadata: header.metadata,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

/// Reads and validates the bundle stored in `dir`.
pub fn read_bundle(dir: &Path) -> Result<TensorBundle, BundleError> {
    TensorBundle::read(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_bundle() -> TensorBundle {
        let v = 10;
        let d = 4;
        let vocabulary: Vec<String> = (0..v).map(|i| format!("tok{i}")).collect();
        let data: Vec<f32> = (0..v * d).map(|i| (i as f32 * 0.37).sin()).collect();
        let mut prompts = BTreeMap::new();
        for id in ["t/PRIOR", "t/asian"] {
            prompts.insert(
                id.to_string(),
                PromptTensors {
                    logits: Some((0..v).map(|i| i as f32 * 0.5 - 2.0).collect()),
                    hidden: Some(vec![0.5, -1.0, 0.25, 2.0]),
                },
            );
        }
        let mut ceat = BTreeMap::new();
        ceat.insert("Asians".to_string(), Matrix::new(2, d, vec![1.0; 2 * d]));
        TensorBundle {
            vocabulary,
            adjective_tokenization: BTreeMap::from([("kind".to_string(), vec![3])]),
            output_matrix: Matrix::new(v, d, data),
            output_bias: Some(vec![0.1; v]),
            prompts,
            ceat_embeddings: ceat,
            metadata: BTreeMap::from([("model".to_string(), Value::from("toy"))]),
        }
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let b = small_bundle();
        b.write(dir.path()).unwrap();
        let back = read_bundle(dir.path()).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.vocab_size(), 10);
        assert_eq!(back.hidden_size(), 4);
        assert_eq!(back.prompts.len(), 2);
    }

    #[test]
    fn short_logits_name_the_prompt() {
        let mut b = small_bundle();
        b.prompts.get_mut("t/asian").unwrap().logits = Some(vec![0.0; 9]);
        let (mut header, blob) = {
            // Bypass the validating writer to produce a malformed bundle.
            let good = small_bundle();
            let (h, _) = good.to_bytes();
            let (_, blob) = b.to_bytes();
            (h, blob)
        };
        let mut value: Value = serde_json::from_slice(&header).unwrap();
        value["arrays"]["prompts/t/asian/logits"]["shape"] = serde_json::json!([9]);
        header = serde_json::to_vec(&value).unwrap();
        let err = TensorBundle::from_bytes(&header, &blob).unwrap_err();
        match &err {
            BundleError::ShapeMismatch { prompt, expected, found, .. } => {
                assert_eq!(prompt.as_deref(), Some("t/asian"));
                assert_eq!(expected, &vec![10]);
                assert_eq!(found, &vec![9]);
            }
            other => panic!("unexpected {other}"),
        }
        assert!(err.to_string().contains("t/asian"));
    }

    #[test]
    fn nan_hidden_is_rejected() {
        let mut b = small_bundle();
        b.prompts.get_mut("t/PRIOR").unwrap().hidden = Some(vec![0.0, f32::NAN, 0.0, 0.0]);
        let (h, blob) = b.to_bytes();
        let err = TensorBundle::from_bytes(&h, &blob).unwrap_err();
        assert!(
            matches!(&err, BundleError::NonFinite { prompt: Some(p), index: 1, .. } if p == "t/PRIOR"),
            "{err}"
        );
    }

    #[test]
    fn unknown_version_is_rejected() {
        let (h, blob) = small_bundle().to_bytes();
        let mut value: Value = serde_json::from_slice(&h).unwrap();
        value["version"] = Value::from(7);
        let err = TensorBundle::from_bytes(&serde_json::to_vec(&value).unwrap(), &blob).unwrap_err();
        assert!(matches!(err, BundleError::UnsupportedVersion { found: 7, .. }));
    }

    #[test]
    fn truncated_blob_is_out_of_bounds() {
        let (h, blob) = small_bundle().to_bytes();
        let err = TensorBundle::from_bytes(&h, &blob[..blob.len() - 4]).unwrap_err();
        assert!(matches!(err, BundleError::OutOfBounds { .. }), "{err}");
    }

    #[test]
    fn big_endian_input_is_normalized() {
        let b = small_bundle();
        let (h, blob) = b.to_bytes();
        let swapped: Vec<u8> = blob
            .chunks_exact(4)
            .flat_map(|c| [c[3], c[2], c[1], c[0]])
            .collect();
        let mut value: Value = serde_json::from_slice(&h).unwrap();
        value["byte_order"] = Value::from("BE");
        let back = TensorBundle::from_bytes(&serde_json::to_vec(&value).unwrap(), &swapped).unwrap();
        assert_eq!(back, b);
        // Re-writing normalizes to the canonical little-endian bytes.
        assert_eq!(back.to_bytes(), (h, blob));
    }

    #[test]
    fn projection_adds_bias() {
        let b = small_bundle();
        let h = b.hidden("t/asian").unwrap().to_vec();
        let p = b.project(&h);
        let row0: f64 = b.output_matrix.row(0).iter().zip(&h).map(|(a, x)| f64::from(*a) * f64::from(*x)).sum();
        assert!((p[0] - (row0 + f64::from(0.1f32))).abs() < 1e-12);
    }
}
