//! Embedding matrices and per-image attribute metadata.
//!
//! Two on-disk formats are supported for embeddings (see
//! `docs/formats.md` for the byte-level layout and golden samples):
//!
//! * binary: `EMBEDSET` magic, u32 version, u64 N, u64 D, row-major
//!   little-endian f32 payload, newline-separated id block. Round trips
//!   are bit-identical.
//! * CSV: header `image_id,u0,...`, one row per image. Values are
//!   printed with shortest round-trip formatting, so CSV round trips
//!   are exact as well.
//!
//! Attributes live in a CSV with columns `image_id,identity,gender,yaw`.
//! Gender tokens are `M`/`F` case-insensitive; anything else is an
//! error rather than a guess. Images with |yaw| > 150° are rejected at
//! ingestion because the top viewpoint bin ends at 150°.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EMBEDSET";
const FORMAT_VERSION: u32 = 1;

/// N×D matrix of image descriptors with row-aligned image identifiers.
///
/// Invariants enforced at construction: ids unique and as many as rows,
/// every value finite. Loaders additionally require N ≥ 2 and D ≥ 2;
/// column projections may produce single-unit sets.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    descriptors: Array2<f64>,
    image_ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl EmbeddingSet {
    pub fn new(descriptors: Array2<f64>, image_ids: Vec<String>) -> Result<Self> {
        let (n, d) = descriptors.dim();
        if n == 0 || d == 0 {
            return Err(Error::InvalidArg("empty embedding matrix".into()));
        }
        if image_ids.len() != n {
            return Err(Error::InvalidArg(format!(
                "{} image ids for {} rows",
                image_ids.len(),
                n
            )));
        }
        for (row, values) in descriptors.outer_iter().enumerate() {
            if let Some(col) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::Degenerate(format!(
                    "non-finite value at row {row}, unit {col}"
                )));
            }
        }
        let mut index = HashMap::with_capacity(n);
        for (row, id) in image_ids.iter().enumerate() {
            if index.insert(id.clone(), row).is_some() {
                return Err(Error::InvalidArg(format!("duplicate image id {id:?}")));
            }
        }
        Ok(Self {
            descriptors,
            image_ids,
            index,
        })
    }

    pub fn n_images(&self) -> usize {
        self.descriptors.nrows()
    }

    pub fn n_units(&self) -> usize {
        self.descriptors.ncols()
    }

    pub fn descriptors(&self) -> ArrayView2<'_, f64> {
        self.descriptors.view()
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    /// Row index of an image id, if present.
    pub fn position(&self, image_id: &str) -> Option<usize> {
        self.index.get(image_id).copied()
    }

    pub fn descriptor(&self, row: usize) -> ArrayView1<'_, f64> {
        self.descriptors.row(row)
    }

    pub fn load(path: impl AsRef<Path>, format: EmbeddingFormat) -> Result<Self> {
        match format {
            EmbeddingFormat::Binary => Self::load_binary(path.as_ref()),
            EmbeddingFormat::Csv => Self::load_csv(path.as_ref()),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, format: EmbeddingFormat) -> Result<()> {
        match format {
            EmbeddingFormat::Binary => self.save_binary(path.as_ref()),
            EmbeddingFormat::Csv => self.save_csv(path.as_ref()),
        }
    }

    fn load_binary(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < MAGIC.len() + 4 + 16 || &bytes[..8] != MAGIC {
            return Err(Error::format(path, "not an EMBEDSET file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported format version {version}"),
            ));
        }
        let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let d = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
        if n < 2 || d < 2 {
            return Err(Error::format(path, format!("header declares {n}x{d}; need at least 2x2")));
        }
        let payload_len = n
            .checked_mul(d)
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| Error::format(path, "header size overflow"))?;
        let payload_end = 28 + payload_len;
        if bytes.len() < payload_end {
            return Err(Error::format(
                path,
                format!(
                    "truncated payload: need {payload_len} bytes, found {}",
                    bytes.len() - 28
                ),
            ));
        }
        let mut descriptors = Array2::zeros((n, d));
        for (i, chunk) in bytes[28..payload_end].chunks_exact(4).enumerate() {
            let value = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
            let (row, col) = (i / d, i % d);
            if !value.is_finite() {
                return Err(Error::row(
                    path,
                    row + 1,
                    format!("non-finite value in unit {col}"),
                ));
            }
            descriptors[(row, col)] = value;
        }
        let id_block = std::str::from_utf8(&bytes[payload_end..])
            .map_err(|_| Error::format(path, "id block is not UTF-8"))?;
        let image_ids: Vec<String> = id_block
            .split('\n')
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .collect();
        if image_ids.len() != n {
            return Err(Error::format(
                path,
                format!("id block has {} ids, header declares {n}", image_ids.len()),
            ));
        }
        Self::with_row_errors(descriptors, image_ids, path)
    }

    fn save_binary(&self, path: &Path) -> Result<()> {
        let (n, d) = self.descriptors.dim();
        let mut out = Vec::with_capacity(28 + n * d * 4 + n * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(d as u64).to_le_bytes());
        for value in self.descriptors.iter() {
            out.extend_from_slice(&(*value as f32).to_le_bytes());
        }
        for id in &self.image_ids {
            out.extend_from_slice(id.as_bytes());
            out.push(b'\n');
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&out).map_err(|e| Error::io(path, e))
    }

    fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(file);
        let header = reader
            .headers()
            .map_err(|e| Error::format(path, format!("unreadable header: {e}")))?
            .clone();
        if header.len() < 3 || header.get(0) != Some("image_id") {
            return Err(Error::format(
                path,
                "malformed header: expected image_id followed by at least two unit columns",
            ));
        }
        let d = header.len() - 1;
        let mut values = Vec::new();
        let mut image_ids = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let row = i + 1;
            let record =
                record.map_err(|e| Error::row(path, row, format!("unparseable record: {e}")))?;
            if record.len() != d + 1 {
                return Err(Error::row(
                    path,
                    row,
                    format!("expected {} fields, found {}", d + 1, record.len()),
                ));
            }
            image_ids.push(record[0].to_owned());
            for field in record.iter().skip(1) {
                let value: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::row(path, row, format!("not a number: {field:?}")))?;
                if !value.is_finite() {
                    return Err(Error::row(path, row, "non-finite value".to_string()));
                }
                values.push(value);
            }
        }
        let n = image_ids.len();
        if n < 2 {
            return Err(Error::format(path, format!("{n} data rows; need at least 2")));
        }
        let descriptors = Array2::from_shape_vec((n, d), values)
            .expect("row-major construction matches collected length");
        Self::with_row_errors(descriptors, image_ids, path)
    }

    fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        let mut header = vec!["image_id".to_owned()];
        header.extend((0..self.n_units()).map(|u| format!("u{u}")));
        writer
            .write_record(&header)
            .map_err(|e| Error::format(path, e.to_string()))?;
        for (id, row) in self.image_ids.iter().zip(self.descriptors.outer_iter()) {
            let mut record = vec![id.clone()];
            record.extend(row.iter().map(|v| v.to_string()));
            writer
                .write_record(&record)
                .map_err(|e| Error::format(path, e.to_string()))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    /// Construction path for loaders: re-reports constructor failures
    /// with the offending row index.
    fn with_row_errors(
        descriptors: Array2<f64>,
        image_ids: Vec<String>,
        path: &Path,
    ) -> Result<Self> {
        let mut seen: HashMap<&str, usize> = HashMap::with_capacity(image_ids.len());
        for (row, id) in image_ids.iter().enumerate() {
            if let Some(previous) = seen.insert(id.as_str(), row) {
                return Err(Error::row(
                    path,
                    row + 1,
                    format!("duplicate image id {id:?} (first at row {})", previous + 1),
                ));
            }
        }
        Self::new(descriptors, image_ids)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingFormat {
    Binary,
    Csv,
}

/// Binary gender label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    /// Accepts `M`/`F` case-insensitive; anything else errors.
    pub fn parse_token(token: &str) -> Option<Gender> {
        match token.trim() {
            "M" | "m" => Some(Gender::Male),
            "F" | "f" => Some(Gender::Female),
            _ => None,
        }
    }

    pub fn token(&self) -> &'static str {
        match self {
            Gender::Female => "F",
            Gender::Male => "M",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            Gender::Female => 0,
            Gender::Male => 1,
        }
    }
}

/// Viewpoint bin over |yaw|, bounds in degrees:
/// frontal [0,18], near-frontal (18,36], half-profile (36,54],
/// near-profile (54,72], profile (72,150].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewBin {
    Frontal,
    NearFrontal,
    HalfProfile,
    NearProfile,
    Profile,
}

impl ViewBin {
    pub const ALL: [ViewBin; 5] = [
        ViewBin::Frontal,
        ViewBin::NearFrontal,
        ViewBin::HalfProfile,
        ViewBin::NearProfile,
        ViewBin::Profile,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ViewBin::Frontal => "frontal",
            ViewBin::NearFrontal => "near-frontal",
            ViewBin::HalfProfile => "half-profile",
            ViewBin::NearProfile => "near-profile",
            ViewBin::Profile => "profile",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            ViewBin::Frontal => 0,
            ViewBin::NearFrontal => 1,
            ViewBin::HalfProfile => 2,
            ViewBin::NearProfile => 3,
            ViewBin::Profile => 4,
        }
    }
}

/// Bin a yaw angle by |yaw|; boundary values belong to the closed
/// (lower) bin, so 18° is frontal and 18.0001° is near-frontal.
pub fn bin_viewpoint(yaw: f64) -> Result<ViewBin> {
    if !yaw.is_finite() {
        return Err(Error::InvalidArg(format!("non-finite yaw {yaw}")));
    }
    let a = yaw.abs();
    if a <= 18.0 {
        Ok(ViewBin::Frontal)
    } else if a <= 36.0 {
        Ok(ViewBin::NearFrontal)
    } else if a <= 54.0 {
        Ok(ViewBin::HalfProfile)
    } else if a <= 72.0 {
        Ok(ViewBin::NearProfile)
    } else if a <= 150.0 {
        Ok(ViewBin::Profile)
    } else {
        Err(Error::InvalidArg(format!(
            "|yaw| = {a} exceeds the 150 degree bin bound"
        )))
    }
}

/// One attribute row: identity label, gender, yaw in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRecord {
    pub image_id: String,
    pub identity: String,
    pub gender: Gender,
    pub yaw: f64,
}

/// Per-image attribute metadata, in file order.
#[derive(Debug, Clone)]
pub struct AttributeTable {
    records: Vec<AttributeRecord>,
    index: HashMap<String, usize>,
}

impl AttributeTable {
    pub fn new(records: Vec<AttributeRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, record) in records.iter().enumerate() {
            if !record.yaw.is_finite() || record.yaw.abs() > 150.0 {
                return Err(Error::InvalidArg(format!(
                    "image {:?}: yaw {} outside [-150, 150]",
                    record.image_id, record.yaw
                )));
            }
            if index.insert(record.image_id.clone(), i).is_some() {
                return Err(Error::InvalidArg(format!(
                    "duplicate image id {:?}",
                    record.image_id
                )));
            }
        }
        Ok(Self { records, index })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(file);
        let header = reader
            .headers()
            .map_err(|e| Error::format(path, format!("unreadable header: {e}")))?
            .clone();
        let col = |name: &str| -> Result<usize> {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::format(path, format!("missing column {name:?}")))
        };
        let id_col = col("image_id")?;
        let identity_col = col("identity")?;
        let gender_col = col("gender")?;
        let yaw_col = col("yaw")?;

        let mut records = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, record) in reader.records().enumerate() {
            let row = i + 1;
            let record =
                record.map_err(|e| Error::row(path, row, format!("unparseable record: {e}")))?;
            let field = |c: usize| -> Result<&str> {
                record
                    .get(c)
                    .ok_or_else(|| Error::row(path, row, format!("missing field {c}")))
            };
            let image_id = field(id_col)?.to_owned();
            if let Some(previous) = seen.insert(image_id.clone(), row) {
                return Err(Error::row(
                    path,
                    row,
                    format!("duplicate image id {image_id:?} (first at row {previous})"),
                ));
            }
            let identity = field(identity_col)?.to_owned();
            if identity.is_empty() {
                return Err(Error::row(path, row, "empty identity label".to_string()));
            }
            let gender_token = field(gender_col)?;
            let gender = Gender::parse_token(gender_token).ok_or_else(|| {
                Error::row(path, row, format!("unknown gender token {gender_token:?}"))
            })?;
            let yaw: f64 = field(yaw_col)?
                .trim()
                .parse()
                .map_err(|_| Error::row(path, row, "yaw is not a number".to_string()))?;
            if !yaw.is_finite() || yaw.abs() > 150.0 {
                return Err(Error::row(
                    path,
                    row,
                    format!("yaw {yaw} outside [-150, 150]"),
                ));
            }
            records.push(AttributeRecord {
                image_id,
                identity,
                gender,
                yaw,
            });
        }
        Self::new(records)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        writer
            .write_record(["image_id", "identity", "gender", "yaw"])
            .map_err(|e| Error::format(path, e.to_string()))?;
        for r in &self.records {
            writer
                .write_record([
                    r.image_id.as_str(),
                    r.identity.as_str(),
                    r.gender.token(),
                    &r.yaw.to_string(),
                ])
                .map_err(|e| Error::format(path, e.to_string()))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    pub fn records(&self) -> &[AttributeRecord] {
        &self.records
    }

    pub fn get(&self, image_id: &str) -> Option<&AttributeRecord> {
        self.index.get(image_id).map(|&i| &self.records[i])
    }

    /// Distinct identity labels in first-appearance order.
    pub fn identities(&self) -> Vec<&str> {
        let mut seen = HashMap::new();
        let mut out = Vec::new();
        for r in &self.records {
            if seen.insert(r.identity.as_str(), ()).is_none() {
                out.push(r.identity.as_str());
            }
        }
        out
    }

    /// Check that every embedding id has exactly one attribute row.
    pub fn validate_against(&self, embeddings: &EmbeddingSet) -> Result<()> {
        let missing: Vec<String> = embeddings
            .image_ids()
            .iter()
            .filter(|id| !self.index.contains_key(*id))
            .cloned()
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::id_mismatch(missing))
        }
    }

    /// Join attributes onto embedding rows and precompute the group
    /// codings every analysis needs.
    pub fn align(&self, embeddings: &EmbeddingSet) -> Result<AlignedAttributes> {
        self.align_ids(embeddings.image_ids())
    }

    /// As [`align`](Self::align), but against a bare id sequence (PC
    /// factor scores carry ids without being an embedding set).
    pub fn align_ids(&self, ids: &[String]) -> Result<AlignedAttributes> {
        let missing: Vec<String> = ids
            .iter()
            .filter(|id| !self.index.contains_key(*id))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::id_mismatch(missing));
        }
        let n = ids.len();
        let mut identity_codes = Vec::with_capacity(n);
        let mut identity_labels: Vec<String> = Vec::new();
        let mut label_index: HashMap<&str, usize> = HashMap::new();
        let mut genders = Vec::with_capacity(n);
        let mut yaws = Vec::with_capacity(n);
        let mut view_bins = Vec::with_capacity(n);
        for id in ids {
            let record = self.get(id).expect("validated above");
            let code = *label_index
                .entry(record.identity.as_str())
                .or_insert_with(|| {
                    identity_labels.push(record.identity.clone());
                    identity_labels.len() - 1
                });
            identity_codes.push(code);
            genders.push(record.gender);
            yaws.push(record.yaw);
            view_bins.push(bin_viewpoint(record.yaw)?);
        }
        Ok(AlignedAttributes {
            identity_codes,
            identity_labels,
            genders,
            yaws,
            view_bins,
        })
    }
}

/// Attribute columns re-indexed to embedding row order.
#[derive(Debug, Clone)]
pub struct AlignedAttributes {
    pub identity_codes: Vec<usize>,
    pub identity_labels: Vec<String>,
    pub genders: Vec<Gender>,
    pub yaws: Vec<f64>,
    pub view_bins: Vec<ViewBin>,
}

impl AlignedAttributes {
    pub fn n_identities(&self) -> usize {
        self.identity_labels.len()
    }

    /// Group codes for one attribute, plus the group count.
    pub fn group_codes(&self, attribute: Attribute) -> (Vec<usize>, usize) {
        match attribute {
            Attribute::Identity => (self.identity_codes.clone(), self.n_identities()),
            Attribute::Gender => (
                self.genders.iter().map(|g| g.index()).collect(),
                2,
            ),
            Attribute::Viewpoint => (
                self.view_bins.iter().map(|b| b.index()).collect(),
                ViewBin::ALL.len(),
            ),
        }
    }
}

/// The three attributes the pipeline characterizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Identity,
    Gender,
    Viewpoint,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Identity, Attribute::Gender, Attribute::Viewpoint];

    pub fn label(&self) -> &'static str {
        match self {
            Attribute::Identity => "identity",
            Attribute::Gender => "gender",
            Attribute::Viewpoint => "viewpoint",
        }
    }
}
