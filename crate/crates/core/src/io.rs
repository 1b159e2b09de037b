//! Data ingestion and model persistence.
//!
//! Data sets are described by a TOML manifest that lists one CSV file per
//! view. Models are stored in a small binary container: the magic string
//! `SSHIBA1`, then a fixed sequence of named records holding either a string
//! or a little-endian `f64` matrix in row-major order.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    BiasFactor, BinaryViewState, CategoricalViewState, Covariance, GammaFactor, GaussianFactor,
    ModelState, ObservationSet, Priors, RealViewState, View, ViewData, ViewKind, ViewLatent,
    ViewSpec, ViewState,
};

/// Whether a view is fed to the model at prediction time or predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Input,
    Target,
}

fn default_missing_tokens() -> Vec<String> {
    vec![String::new(), "NaN".to_string()]
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub name: String,
    /// CSV file, relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub kind: ViewKind,
    #[serde(default)]
    pub role: Role,
    /// Number of classes; required for categorical views.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    /// Defaults to on for real views and off otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_selection: Option<bool>,
    #[serde(default = "default_missing_tokens")]
    pub missing_tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// Every CSV file starts with a header line.
    #[serde(default)]
    pub header: bool,
    /// Reject views with differing row counts. When off, every view is cut
    /// to the shortest one.
    #[serde(default = "default_true")]
    pub require_equal_rows: bool,
    pub views: Vec<ViewEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut manifest: DatasetManifest = toml::from_str(text).map_err(|e| Error::Parse {
            file: "manifest".into(),
            row: 0,
            col: 0,
            message: e.to_string(),
        })?;
        manifest.base_dir = base_dir.into();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base).map_err(|e| match e {
            Error::Parse {
                row, col, message, ..
            } => Error::Parse {
                file: path.display().to_string(),
                row,
                col,
                message,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest is always representable")
    }

    fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::Domain("manifest declares no views".into()));
        }
        let mut seen = HashSet::new();
        for v in &self.views {
            if !seen.insert(v.name.as_str()) {
                return Err(Error::Domain(format!(
                    "view '{}' is declared twice",
                    v.name
                )));
            }
            match (v.kind, v.classes) {
                (ViewKind::Categorical, None) => {
                    return Err(Error::Domain(format!(
                        "categorical view '{}' needs `classes`",
                        v.name
                    )))
                }
                (ViewKind::Categorical, Some(c)) if c < 2 => {
                    return Err(Error::Domain(format!(
                        "categorical view '{}' needs at least 2 classes",
                        v.name
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn resolve(&self, entry: &ViewEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    /// Names of the views with the given role, in manifest order.
    pub fn views_with_role(&self, role: Role) -> Vec<&str> {
        self.views
            .iter()
            .filter(|v| v.role == role)
            .map(|v| v.name.as_str())
            .collect()
    }
}

/// Reads a numeric CSV file into values and a missing-cell mask.
pub fn read_matrix_csv(
    path: &Path,
    header: bool,
    missing_tokens: &[String],
) -> Result<(DMatrix<f64>, DMatrix<bool>)> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(&file, e))?;
    let offset = if header { 2 } else { 1 };
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(&file, e))?;
        let mut row = Vec::with_capacity(record.len());
        for (j, field) in record.iter().enumerate() {
            let field = field.trim();
            if missing_tokens.iter().any(|t| t == field) {
                row.push(None);
                continue;
            }
            let value: f64 = field.parse().map_err(|_| Error::Parse {
                file: file.clone(),
                row: i + offset,
                col: j + 1,
                message: format!("'{field}' is not a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    file: file.clone(),
                    row: i + offset,
                    col: j + 1,
                    message: format!("'{field}' is not finite"),
                });
            }
            row.push(Some(value));
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{file}: row {} has {} fields, expected {}",
                    i + offset,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let values = DMatrix::from_fn(n, d, |r, c| rows[r][c].unwrap_or(0.0));
    let missing = DMatrix::from_fn(n, d, |r, c| rows[r][c].is_none());
    Ok((values, missing))
}

fn csv_error(file: &str, e: csv::Error) -> Error {
    let (row, col) = match e.position() {
        Some(p) => (p.line() as usize, 0),
        None => (0, 0),
    };
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            file: file.to_string(),
            row,
            col,
            message: format!("{other:?}"),
        },
    }
}

/// Writes values to CSV with masked cells as `NaN`. An empty cell would do
/// for wide files, but a blank line in a one-column file is skipped on read.
pub fn write_matrix_csv(
    path: &Path,
    values: &DMatrix<f64>,
    missing: Option<&DMatrix<bool>>,
) -> Result<()> {
    let mut out = String::new();
    for r in 0..values.nrows() {
        for c in 0..values.ncols() {
            if c > 0 {
                out.push(',');
            }
            if missing.is_some_and(|m| m[(r, c)]) {
                out.push_str("NaN");
            } else {
                out.push_str(&values[(r, c)].to_string());
            }
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Loads one view described by `entry`.
pub fn load_view(manifest: &DatasetManifest, entry: &ViewEntry) -> Result<View> {
    let path = manifest.resolve(entry);
    let (values, missing) = read_matrix_csv(&path, manifest.header, &entry.missing_tokens)?;
    let file = path.display().to_string();
    let view = match entry.kind {
        ViewKind::Real => View::real_with_mask(&entry.name, values, missing),
        ViewKind::Binary => {
            for ((r, c), v) in indexed(&values) {
                if !missing[(r, c)] && v != 0.0 && v != 1.0 {
                    return Err(Error::Domain(format!(
                        "{file}: row {}, column {}: binary label {v}",
                        r + 1,
                        c + 1
                    )));
                }
            }
            View::binary_with_mask(&entry.name, values, missing)
        }
        ViewKind::Categorical => {
            let classes = entry.classes.expect("validated manifest");
            if values.ncols() != 1 {
                return Err(Error::ShapeMismatch(format!(
                    "{file}: categorical file must have one column, found {}",
                    values.ncols()
                )));
            }
            let mut labels = Vec::with_capacity(values.nrows());
            for r in 0..values.nrows() {
                if missing[(r, 0)] {
                    labels.push(None);
                    continue;
                }
                let v = values[(r, 0)];
                if v.fract() != 0.0 || v < 0.0 || v >= classes as f64 {
                    return Err(Error::Domain(format!(
                        "{file}: row {}: label {v} outside 0..{classes}",
                        r + 1
                    )));
                }
                labels.push(Some(v as usize));
            }
            View::categorical(&entry.name, classes, labels)
        }
    };
    let default_fs = entry.kind == ViewKind::Real;
    Ok(view.with_feature_selection(entry.feature_selection.unwrap_or(default_fs)))
}

fn indexed(m: &DMatrix<f64>) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
    (0..m.ncols()).flat_map(move |c| (0..m.nrows()).map(move |r| ((r, c), m[(r, c)])))
}

/// Loads every view listed in the manifest.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<ObservationSet> {
    let mut views = manifest
        .views
        .iter()
        .map(|e| load_view(manifest, e))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<usize> = views.iter().map(|v| v.data.n_rows()).collect();
    let min = *rows.iter().min().expect("at least one view");
    if rows.iter().any(|&r| r != min) {
        if manifest.require_equal_rows {
            let detail: Vec<String> = views
                .iter()
                .zip(&rows)
                .map(|(v, r)| format!("{}={r}", v.spec.name))
                .collect();
            return Err(Error::ShapeMismatch(format!(
                "views differ in row count: {}",
                detail.join(", ")
            )));
        }
        for v in &mut views {
            truncate_rows(&mut v.data, min);
        }
    }
    ObservationSet::new(views)
}

fn truncate_rows(data: &mut ViewData, n: usize) {
    match data {
        ViewData::Real { values, missing } | ViewData::Binary { values, missing } => {
            *values = values.rows(0, n).into_owned();
            *missing = missing.rows(0, n).into_owned();
        }
        ViewData::Categorical { labels } => labels.truncate(n),
    }
}

/// Writes one CSV per view plus `manifest.toml` into `dir` and returns the
/// manifest. Every view gets the `input` role.
pub fn save_dataset(data: &ObservationSet, dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for view in data.views() {
        let spec = &view.spec;
        let file = PathBuf::from(format!("{}.csv", spec.name));
        let path = dir.join(&file);
        match &view.data {
            ViewData::Real { values, missing } | ViewData::Binary { values, missing } => {
                write_matrix_csv(&path, values, Some(missing))?
            }
            ViewData::Categorical { labels } => {
                let values =
                    DMatrix::from_fn(labels.len(), 1, |r, _| labels[r].unwrap_or(0) as f64);
                let missing = DMatrix::from_fn(labels.len(), 1, |r, _| labels[r].is_none());
                write_matrix_csv(&path, &values, Some(&missing))?
            }
        }
        entries.push(ViewEntry {
            name: spec.name.clone(),
            path: file,
            kind: spec.kind,
            role: Role::Input,
            classes: (spec.kind == ViewKind::Categorical).then_some(spec.dim),
            feature_selection: Some(spec.feature_selection),
            missing_tokens: default_missing_tokens(),
        });
    }
    let manifest = DatasetManifest {
        header: false,
        require_equal_rows: true,
        views: entries,
        base_dir: dir.to_path_buf(),
    };
    fs::write(dir.join("manifest.toml"), manifest.to_toml())?;
    Ok(manifest)
}

const MAGIC: &[u8] = b"SSHIBA1";
const MAGIC_STEM: &[u8] = b"SSHIBA";

struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn name(&mut self, name: &str) {
        self.buf
            .extend_from_slice(&(name.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(name.as_bytes());
    }

    fn string(&mut self, name: &str, value: &str) {
        self.buf.push(b'S');
        self.name(name);
        self.buf
            .extend_from_slice(&(value.len() as u64).to_le_bytes());
        self.buf.extend_from_slice(value.as_bytes());
    }

    fn matrix(&mut self, name: &str, m: &DMatrix<f64>) {
        self.buf.push(b'M');
        self.name(name);
        self.buf
            .extend_from_slice(&(m.nrows() as u64).to_le_bytes());
        self.buf
            .extend_from_slice(&(m.ncols() as u64).to_le_bytes());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                self.buf.extend_from_slice(&m[(r, c)].to_le_bytes());
            }
        }
    }

    fn row(&mut self, name: &str, values: &[f64]) {
        self.matrix(name, &DMatrix::from_row_slice(1, values.len(), values));
    }

    fn gamma(&mut self, name: &str, g: &GammaFactor) {
        let mut m = DMatrix::zeros(2, g.len());
        m.row_mut(0).copy_from(&g.shape.transpose());
        m.row_mut(1).copy_from(&g.rate.transpose());
        self.matrix(name, &m);
    }

    fn flags(&mut self, name: &str, mask: &DMatrix<bool>) {
        self.matrix(name, &mask.map(|b| if b { 1.0 } else { 0.0 }));
    }
}

/// Serializes a model into the container format.
pub fn encode_model(state: &ModelState) -> Vec<u8> {
    let mut e = Encoder {
        buf: MAGIC.to_vec(),
    };
    let n = state.n_samples();
    e.row(
        "meta",
        &[state.k as f64, state.views.len() as f64, n as f64],
    );
    let p = state.priors;
    e.row(
        "priors",
        &[p.a_alpha, p.b_alpha, p.a_tau, p.b_tau, p.a_gamma, p.b_gamma],
    );
    e.row("elbo_trace", &state.elbo_trace);
    e.matrix("z.mean", &state.z.mean);
    e.matrix("z.cov", state.z.row_cov(0));
    for v in &state.views {
        let spec = &v.spec;
        e.string("view.name", &spec.name);
        let per_row = matches!(v.w.cov, Covariance::PerRow(_));
        e.row(
            "view.spec",
            &[
                spec.kind.code() as f64,
                spec.dim as f64,
                spec.feature_selection as u8 as f64,
                per_row as u8 as f64,
            ],
        );
        e.matrix("w.mean", &v.w.mean);
        match &v.w.cov {
            Covariance::Shared(c) => e.matrix("w.cov", c),
            Covariance::PerRow(cs) => {
                let k = state.k;
                let mut stacked = DMatrix::zeros(cs.len() * k, k);
                for (d, c) in cs.iter().enumerate() {
                    stacked.view_mut((d * k, 0), (k, k)).copy_from(c);
                }
                e.matrix("w.cov", &stacked);
            }
        }
        e.row("b.mean", v.b.mean.as_slice());
        e.row("b.var", &[v.b.var]);
        e.gamma("alpha", &v.alpha);
        e.gamma("tau", &v.tau);
        if let Some(g) = &v.gamma {
            e.gamma("gamma", g);
        }
        match &v.latent {
            ViewLatent::Real(s) => {
                e.matrix("real.x_mean", &s.x_mean);
                e.flags("real.missing", &s.missing);
                e.row("real.missing_var", &[s.missing_var]);
            }
            ViewLatent::Binary(s) => {
                e.matrix("binary.pseudo_mean", &s.pseudo_mean);
                e.matrix("binary.pseudo_var", &s.pseudo_var);
                e.matrix("binary.xi", &s.xi);
                e.matrix("binary.label_prob", &s.label_prob);
                e.flags("binary.missing", &s.missing);
            }
            ViewLatent::Categorical(s) => {
                e.matrix("categorical.pseudo_mean", &s.pseudo_mean);
                e.matrix("categorical.y_mean", &s.y_mean);
                e.matrix("categorical.label_posterior", &s.label_posterior);
                let labels: Vec<f64> = s
                    .labels
                    .iter()
                    .map(|l| l.map_or(-1.0, |c| c as f64))
                    .collect();
                e.row("categorical.labels", &labels);
                e.row("categorical.normalizer", s.normalizer.as_slice());
                e.row("categorical.degenerate_count", &[s.degenerate_count as f64]);
            }
        }
    }
    e.buf
}

struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len());
        let end =
            end.ok_or_else(|| Error::CorruptRecord(format!("truncated while reading {what}")))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn header(&mut self, kind: u8, expected: &str) -> Result<()> {
        let found_kind = self.take(1, expected)?[0];
        let len = self.u32(expected)? as usize;
        let name = self.take(len, expected)?;
        if found_kind != kind || name != expected.as_bytes() {
            return Err(Error::CorruptRecord(format!(
                "expected record '{expected}', found '{}'",
                String::from_utf8_lossy(name)
            )));
        }
        Ok(())
    }

    fn string(&mut self, name: &str) -> Result<String> {
        self.header(b'S', name)?;
        let len = self.u64(name)? as usize;
        let bytes = self.take(len, name)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::CorruptRecord(format!("record '{name}' is not UTF-8")))
    }

    fn matrix(&mut self, name: &str) -> Result<DMatrix<f64>> {
        self.header(b'M', name)?;
        let rows = self.u64(name)? as usize;
        let cols = self.u64(name)? as usize;
        let count = rows.checked_mul(cols).and_then(|c| c.checked_mul(8));
        let bytes = self.take(
            count.ok_or_else(|| Error::CorruptRecord(format!("record '{name}' is too large")))?,
            name,
        )?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(DMatrix::from_row_slice(rows, cols, &values))
    }

    fn shaped(&mut self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let m = self.matrix(name)?;
        if m.shape() != (rows, cols) {
            return Err(Error::CorruptRecord(format!(
                "record '{name}' is {:?}, expected ({rows}, {cols})",
                m.shape()
            )));
        }
        Ok(m)
    }

    fn row(&mut self, name: &str, len: usize) -> Result<Vec<f64>> {
        Ok(self.shaped(name, 1, len)?.iter().copied().collect())
    }

    fn any_row(&mut self, name: &str) -> Result<Vec<f64>> {
        let m = self.matrix(name)?;
        if m.nrows() != 1 && !m.is_empty() {
            return Err(Error::CorruptRecord(format!(
                "record '{name}' must be a single row"
            )));
        }
        Ok(m.iter().copied().collect())
    }

    fn gamma(&mut self, name: &str, len: usize) -> Result<GammaFactor> {
        let m = self.shaped(name, 2, len)?;
        Ok(GammaFactor {
            shape: m.row(0).transpose(),
            rate: m.row(1).transpose(),
        })
    }

    fn flags(&mut self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<bool>> {
        let m = self.shaped(name, rows, cols)?;
        if m.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::CorruptRecord(format!(
                "record '{name}' must hold 0/1 flags"
            )));
        }
        Ok(m.map(|v| v == 1.0))
    }
}

fn count(v: f64, what: &str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < 1e15 {
        Ok(v as usize)
    } else {
        Err(Error::CorruptRecord(format!(
            "{what} must be a non-negative integer, found {v}"
        )))
    }
}

fn flag(v: f64, what: &str) -> Result<bool> {
    match v {
        0.0 => Ok(false),
        1.0 => Ok(true),
        _ => Err(Error::CorruptRecord(format!(
            "{what} must be 0 or 1, found {v}"
        ))),
    }
}

/// Parses a container produced by [`encode_model`] and validates the state.
pub fn decode_model(bytes: &[u8]) -> Result<ModelState> {
    if !bytes.starts_with(MAGIC) {
        if bytes.starts_with(MAGIC_STEM) {
            let found = &bytes[..bytes.len().min(MAGIC.len())];
            return Err(Error::VersionMismatch {
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        return Err(Error::CorruptRecord("missing SSHIBA1 header".into()));
    }
    let mut dec = Decoder {
        buf: bytes,
        pos: MAGIC.len(),
    };
    let meta = dec.row("meta", 3)?;
    let k = count(meta[0], "k")?;
    let n_views = count(meta[1], "view count")?;
    let n = count(meta[2], "sample count")?;
    let p = dec.row("priors", 6)?;
    let priors = Priors {
        a_alpha: p[0],
        b_alpha: p[1],
        a_tau: p[2],
        b_tau: p[3],
        a_gamma: p[4],
        b_gamma: p[5],
    };
    let elbo_trace = dec.any_row("elbo_trace")?;
    let z_mean = dec.shaped("z.mean", n, k)?;
    let z_cov = dec.shaped("z.cov", k, k)?;
    let mut views = Vec::with_capacity(n_views);
    for _ in 0..n_views {
        let name = dec.string("view.name")?;
        let s = dec.row("view.spec", 4)?;
        let kind = ViewKind::from_code(count(s[0], "view kind")? as u8)
            .ok_or_else(|| Error::CorruptRecord(format!("unknown view kind {}", s[0])))?;
        let d = count(s[1], "view width")?;
        let fs = flag(s[2], "feature selection")?;
        let per_row = flag(s[3], "covariance layout")?;
        let spec = ViewSpec::new(name, kind, d).with_feature_selection(fs);
        let w_mean = dec.shaped("w.mean", d, k)?;
        let w_cov = if per_row {
            let stacked = dec.shaped("w.cov", d * k, k)?;
            Covariance::PerRow(
                (0..d)
                    .map(|r| stacked.view((r * k, 0), (k, k)).into_owned())
                    .collect(),
            )
        } else {
            Covariance::Shared(dec.shaped("w.cov", k, k)?)
        };
        let b = BiasFactor {
            mean: DVector::from_vec(dec.row("b.mean", d)?),
            var: dec.row("b.var", 1)?[0],
        };
        let alpha = dec.gamma("alpha", k)?;
        let tau = dec.gamma("tau", 1)?;
        let gamma = if fs {
            Some(dec.gamma("gamma", d)?)
        } else {
            None
        };
        let latent = match kind {
            ViewKind::Real => {
                let x_mean = dec.shaped("real.x_mean", n, d)?;
                let missing = dec.flags("real.missing", n, d)?;
                let n_missing = missing.iter().filter(|&&m| m).count();
                let missing_var = dec.row("real.missing_var", 1)?[0];
                ViewLatent::Real(RealViewState {
                    x_mean,
                    missing,
                    n_missing,
                    missing_var,
                })
            }
            ViewKind::Binary => ViewLatent::Binary(BinaryViewState {
                pseudo_mean: dec.shaped("binary.pseudo_mean", n, d)?,
                pseudo_var: dec.shaped("binary.pseudo_var", n, d)?,
                xi: dec.shaped("binary.xi", n, d)?,
                label_prob: dec.shaped("binary.label_prob", n, d)?,
                missing: dec.flags("binary.missing", n, d)?,
            }),
            ViewKind::Categorical => {
                let pseudo_mean = dec.shaped("categorical.pseudo_mean", n, d)?;
                let y_mean = dec.shaped("categorical.y_mean", n, d)?;
                let label_posterior = dec.shaped("categorical.label_posterior", n, d)?;
                let labels = dec
                    .row("categorical.labels", n)?
                    .into_iter()
                    .map(|v| {
                        if v == -1.0 {
                            Ok(None)
                        } else {
                            count(v, "label").map(Some)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                let normalizer = DVector::from_vec(dec.row("categorical.normalizer", n)?);
                let degenerate_count = count(
                    dec.row("categorical.degenerate_count", 1)?[0],
                    "degenerate count",
                )? as u64;
                ViewLatent::Categorical(CategoricalViewState {
                    pseudo_mean,
                    y_mean,
                    label_posterior,
                    labels,
                    normalizer,
                    degenerate_count,
                })
            }
        };
        views.push(ViewState {
            spec,
            w: GaussianFactor {
                mean: w_mean,
                cov: w_cov,
            },
            b,
            alpha,
            tau,
            gamma,
            latent,
        });
    }
    if dec.pos != bytes.len() {
        return Err(Error::CorruptRecord(format!(
            "{} trailing bytes",
            bytes.len() - dec.pos
        )));
    }
    let state = ModelState {
        k,
        priors,
        z: GaussianFactor {
            mean: z_mean,
            cov: Covariance::Shared(z_cov),
        },
        views,
        elbo_trace,
    };
    state
        .validate()
        .map_err(|e| Error::CorruptRecord(format!("invalid state: {e}")))?;
    Ok(state)
}

pub fn save_model(state: &ModelState, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_model(state))?;
    f.sync_all()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelState> {
    decode_model(&fs::read(path)?)
}
