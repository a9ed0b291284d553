//! File input: NPY weight matrices, eigenvalue lists and run manifests.
//!
//! Only a strict subset of NPY v1.0 is accepted: a 2-D C-ordered array of
//! little-endian `f4` or `f8`. Matrices are always written as `<f8`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::calibration::DEFAULT_C;
use crate::error::{Error, Result};
use crate::powerlaw::DEFAULT_MIN_TAIL;
use crate::spectra::{esd, Spectrum, WeightMatrix};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE: usize = 10;
const ALIGN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F4,
    F8,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F4 => "<f4",
            Dtype::F8 => "<f8",
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 => 8,
        }
    }
}

/// Serializes a matrix as an NPY v1.0 document.
pub fn encode_npy(w: &WeightMatrix, dtype: Dtype) -> Vec<u8> {
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': ({}, {}), }}",
        dtype.descr(),
        w.rows(),
        w.cols()
    );
    let unpadded = PREAMBLE + header.len() + 1;
    header.push_str(&" ".repeat((ALIGN - unpadded % ALIGN) % ALIGN));
    header.push('\n');

    let mut out = Vec::with_capacity(PREAMBLE + header.len() + w.values().len() * dtype.width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for &v in w.values() {
        match dtype {
            Dtype::F4 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F8 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

/// Parses an NPY v1.0 document holding a 2-D float matrix.
pub fn decode_npy(bytes: &[u8]) -> Result<WeightMatrix> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(format_err(0, "missing NPY magic string"));
    }
    if bytes.len() < PREAMBLE {
        return Err(format_err(bytes.len(), "truncated NPY preamble"));
    }
    if bytes[6..8] != [1, 0] {
        return Err(format_err(
            6,
            format!("unsupported NPY version {}.{}", bytes[6], bytes[7]),
        ));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = PREAMBLE + header_len;
    if bytes.len() < data_start {
        return Err(format_err(
            8,
            format!("header length {header_len} runs past end of file"),
        ));
    }
    let header = std::str::from_utf8(&bytes[PREAMBLE..data_start])
        .map_err(|e| format_err(PREAMBLE + e.valid_up_to(), "header is not ASCII"))?;
    let dict = HeaderParser::new(header, PREAMBLE).parse()?;

    let dtype = match dict.descr.as_str() {
        "<f4" => Dtype::F4,
        "<f8" => Dtype::F8,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "dtype {other:?}; expected '<f4' or '<f8'"
            )))
        }
    };
    if dict.fortran_order {
        return Err(Error::UnsupportedFormat(
            "Fortran-ordered arrays are not accepted".into(),
        ));
    }
    let (rows, cols) = match dict.shape.as_slice() {
        &[r, c] => (r, c),
        s => {
            return Err(Error::UnsupportedFormat(format!(
                "{}-dimensional array; expected 2",
                s.len()
            )))
        }
    };

    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| format_err(PREAMBLE, "shape overflows"))?;
    let data = &bytes[data_start..];
    let expected = count * dtype.width();
    if data.len() != expected {
        return Err(format_err(
            data_start + data.len().min(expected),
            format!("expected {expected} data bytes, found {}", data.len()),
        ));
    }
    let values: Vec<f64> = match dtype {
        Dtype::F4 => data
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect(),
        Dtype::F8 => data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidData(format!(
            "non-finite value {} at index ({}, {})",
            values[i],
            i / cols,
            i % cols
        )));
    }
    WeightMatrix::new(rows, cols, values)
}

struct NpyHeader {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Parser for the Python-literal dict in an NPY header.
struct HeaderParser<'a> {
    src: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> HeaderParser<'a> {
    fn new(src: &'a str, base: usize) -> Self {
        HeaderParser {
            src: src.as_bytes(),
            pos: 0,
            base,
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        format_err(self.base + self.pos, message)
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected '{}'", c as char)))
        }
    }

    fn string(&mut self) -> Result<String> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err(self.err("expected a quoted string")),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos == self.src.len() {
            return Err(self.err("unterminated string"));
        }
        let s = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(s)
    }

    fn word(&mut self) -> &'a [u8] {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        &self.src[start..self.pos]
    }

    fn boolean(&mut self) -> Result<bool> {
        let at = self.pos;
        match self.word() {
            b"True" => Ok(true),
            b"False" => Ok(false),
            _ => {
                self.pos = at;
                Err(self.err("expected True or False"))
            }
        }
    }

    fn shape(&mut self) -> Result<Vec<usize>> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            if self.peek() == Some(b')') {
                self.pos += 1;
                return Ok(dims);
            }
            let at = self.pos;
            let digits = self.word();
            let dim = std::str::from_utf8(digits)
                .ok()
                .and_then(|d| d.parse().ok())
                .ok_or_else(|| format_err(self.base + at, "expected a dimension"))?;
            dims.push(dim);
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {}
                _ => return Err(self.err("expected ',' or ')' in shape")),
            }
        }
    }

    fn parse(mut self) -> Result<NpyHeader> {
        self.expect(b'{')?;
        let (mut descr, mut fortran, mut shape) = (None, None, None);
        loop {
            if self.peek() == Some(b'}') {
                self.pos += 1;
                break;
            }
            let key_at = self.pos;
            let key = self.string()?;
            self.expect(b':')?;
            match key.as_str() {
                "descr" => descr = Some(self.string()?),
                "fortran_order" => fortran = Some(self.boolean()?),
                "shape" => shape = Some(self.shape()?),
                _ => return Err(format_err(self.base + key_at, format!("unexpected header key {key:?}"))),
            }
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {}
                _ => return Err(self.err("expected ',' or '}'")),
            }
        }
        let missing = |k: &str| self.err(format!("header lacks '{k}'"));
        Ok(NpyHeader {
            descr: descr.ok_or_else(|| missing("descr"))?,
            fortran_order: fortran.ok_or_else(|| missing("fortran_order"))?,
            shape: shape.ok_or_else(|| missing("shape"))?,
        })
    }
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<WeightMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Io(e).at_path(path))?;
    decode_npy(&bytes).map_err(|e| e.at_path(path))
}

pub fn write_matrix(path: impl AsRef<Path>, w: &WeightMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_npy(w, Dtype::F8)).map_err(|e| Error::Io(e).at_path(path))
}

/// Parses one eigenvalue per line, with an optional `eigenvalue` header.
/// Blank lines are skipped.
pub fn parse_eigenvalues(text: &str) -> Result<Spectrum> {
    let mut values = Vec::new();
    let mut seen_content = false;
    for (idx, raw) in text.split('\n').enumerate() {
        let line = idx + 1;
        let item = raw.strip_suffix('\r').unwrap_or(raw).trim();
        if item.is_empty() {
            continue;
        }
        let first = !seen_content;
        seen_content = true;
        if first && item == "eigenvalue" {
            continue;
        }
        let v: f64 = item.parse().map_err(|_| Error::LineFormat {
            line,
            message: format!("cannot parse {item:?} as a number"),
        })?;
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidData(format!(
                "line {line}: eigenvalue {item} is not a nonnegative finite number"
            )));
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::InvalidData("empty spectrum".into()));
    }
    Spectrum::from_values(values)
}

pub fn format_eigenvalues(spectrum: &Spectrum) -> String {
    let mut out = String::from("eigenvalue\n");
    for v in spectrum.eigenvalues() {
        out.push_str(&format!("{v}\n"));
    }
    out
}

pub fn read_eigenvalues(path: impl AsRef<Path>) -> Result<Spectrum> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Io(e).at_path(path))?;
    parse_eigenvalues(&text).map_err(|e| e.at_path(path))
}

pub fn write_eigenvalues(path: impl AsRef<Path>, spectrum: &Spectrum) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_eigenvalues(spectrum)).map_err(|e| Error::Io(e).at_path(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Matrix,
    Eigenvalues,
}

impl EntryKind {
    /// NPY files are matrices; anything else is read as an eigenvalue list.
    pub fn infer(path: &Path) -> EntryKind {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("npy") => EntryKind::Matrix,
            _ => EntryKind::Eigenvalues,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub epoch: u64,
    pub path: PathBuf,
    pub kind: EntryKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub model_label: String,
    pub matrix_id: String,
    pub c_constant: f64,
    pub min_tail: usize,
    pub entries: Vec<ManifestEntry>,
}

fn schema(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        field: field.into(),
        message: message.into(),
    }
}

fn required_str(obj: &serde_json::Map<String, Value>, key: &str, field: &str) -> Result<String> {
    match obj.get(key) {
        None => Err(schema(field, "missing required field")),
        Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
        Some(Value::String(_)) => Err(schema(field, "must not be empty")),
        Some(_) => Err(schema(field, "expected a string")),
    }
}

impl RunManifest {
    /// Validates a manifest document. Paths are kept as written.
    pub fn from_json(text: &str) -> Result<RunManifest> {
        let doc: Value = serde_json::from_str(text)?;
        let obj = doc.as_object().ok_or_else(|| schema("$", "expected a JSON object"))?;

        let model_label = required_str(obj, "model_label", "model_label")?;
        let matrix_id = required_str(obj, "matrix_id", "matrix_id")?;
        let c_constant = match obj.get("c_constant") {
            None | Some(Value::Null) => DEFAULT_C,
            Some(v) => v
                .as_f64()
                .filter(|c| *c > 0.0 && c.is_finite())
                .ok_or_else(|| schema("c_constant", "expected a positive number"))?,
        };
        let min_tail = match obj.get("min_tail") {
            None | Some(Value::Null) => DEFAULT_MIN_TAIL,
            Some(v) => {
                v.as_u64()
                    .filter(|m| *m >= 2)
                    .ok_or_else(|| schema("min_tail", "expected an integer of at least 2"))? as usize
            }
        };

        let raw = match obj.get("entries") {
            None => return Err(schema("entries", "missing required field")),
            Some(Value::Array(a)) => a,
            Some(_) => return Err(schema("entries", "expected an array")),
        };
        if raw.is_empty() {
            return Err(schema("entries", "must contain at least one entry"));
        }
        let mut entries: Vec<ManifestEntry> = Vec::with_capacity(raw.len());
        for (i, item) in raw.iter().enumerate() {
            let at = |k: &str| format!("entries[{i}].{k}");
            let e = item
                .as_object()
                .ok_or_else(|| schema(format!("entries[{i}]"), "expected an object"))?;
            let epoch = match e.get("epoch") {
                None => return Err(schema(at("epoch"), "missing required field")),
                Some(v) => v
                    .as_u64()
                    .ok_or_else(|| schema(at("epoch"), "expected a nonnegative integer"))?,
            };
            if let Some(prev) = entries.last() {
                if entries.iter().any(|p| p.epoch == epoch) {
                    return Err(schema(at("epoch"), format!("duplicate epoch {epoch}")));
                }
                if epoch < prev.epoch {
                    return Err(schema(
                        at("epoch"),
                        format!("epoch {epoch} follows {}; entries must be sorted ascending", prev.epoch),
                    ));
                }
            }
            let path = PathBuf::from(required_str(e, "path", &at("path"))?);
            let kind = match e.get("kind") {
                None => return Err(schema(at("kind"), "missing required field")),
                Some(Value::String(k)) if k == "matrix" => EntryKind::Matrix,
                Some(Value::String(k)) if k == "eigenvalues" => EntryKind::Eigenvalues,
                Some(_) => return Err(schema(at("kind"), "expected \"matrix\" or \"eigenvalues\"")),
            };
            entries.push(ManifestEntry { epoch, path, kind });
        }

        Ok(RunManifest {
            model_label,
            matrix_id,
            c_constant,
            min_tail,
            entries,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Loads and validates a manifest, resolving relative entry paths against
/// the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<RunManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Io(e).at_path(path))?;
    let mut manifest = RunManifest::from_json(&text).map_err(|e| e.at_path(path))?;
    let dir = path.parent().unwrap_or_else(|| Path::new(""));
    for entry in &mut manifest.entries {
        if entry.path.is_relative() {
            entry.path = dir.join(&entry.path);
        }
    }
    Ok(manifest)
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &RunManifest) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest.to_json()? + "\n").map_err(|e| Error::Io(e).at_path(path))
}

/// Reads a spectrum from a matrix file or an eigenvalue list.
pub fn read_spectrum(path: impl AsRef<Path>, kind: EntryKind) -> Result<Spectrum> {
    let path = path.as_ref();
    match kind {
        EntryKind::Matrix => esd(&read_matrix(path)?).map_err(|e| e.at_path(path)),
        EntryKind::Eigenvalues => read_eigenvalues(path),
    }
}
