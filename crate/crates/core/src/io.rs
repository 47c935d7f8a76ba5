//! On-disk formats.
//!
//! **Embedding file** (`METAEMB1`), all integers little-endian:
//!
//! | field       | size                   |
//! |-------------|------------------------|
//! | magic       | 8 bytes, `METAEMB1`    |
//! | id length   | u32                    |
//! | encoder id  | UTF-8, `id length` bytes |
//! | n_rows      | u64                    |
//! | n_cols      | u64                    |
//! | dtype       | u8: 0 = f32, 1 = f64   |
//! | payload     | `n_rows × n_cols` values, row-major |
//!
//! **STS file**: UTF-8 text, one `subset<TAB>index_a<TAB>index_b<TAB>gold`
//! record per line. Lines starting with `#` and blank lines are skipped.
//!
//! **Model file** (`METAMODL`): magic, u32 format version, u8 method tag, a
//! u32-counted list of `(key, value)` config strings, then a u32-counted list
//! of named parameter matrices, each encoded exactly like an embedding file
//! (dtype f64) with the parameter name in the id field.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::autoenc::{AeConfig, AeModel, FeedForwardNet, LossKind};
use crate::embedding::EmbeddingView;
use crate::error::{MetaError, Result};
use crate::eval::{StsDataset, StsRecord};
use crate::fusion::{FusionModel, Method};
use crate::gcca::GccaModel;
use crate::naive::{NaiveKind, NaiveModel};
use crate::svd::SvdModel;

pub const EMB_MAGIC: &[u8; 8] = b"METAEMB1";
pub const MODEL_MAGIC: &[u8; 8] = b"METAMODL";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(MetaError::format(format!("unknown dtype tag {other}"))),
        }
    }
}

/// Bounds-checked little-endian reader over a byte slice.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.buf.len() - self.pos;
        if n > remaining {
            return Err(MetaError::format(format!(
                "truncated {what}: expected {n} bytes, found {remaining}"
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| MetaError::format(format!("{what} is not valid UTF-8")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

fn put_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Appends one matrix block (header + payload).
fn put_matrix(out: &mut Vec<u8>, id: &str, m: &DMatrix<f64>, dtype: Dtype) {
    out.extend_from_slice(EMB_MAGIC);
    put_string(out, id);
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    out.push(dtype.tag());
    out.reserve(m.len() * dtype.size());
    for row in m.row_iter() {
        for &v in row.iter() {
            match dtype {
                Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
}

/// Reads one matrix block; values are not checked for finiteness.
fn take_matrix(cur: &mut Cursor<'_>) -> Result<(String, DMatrix<f64>)> {
    let magic = cur.take(8, "magic")?;
    if magic != EMB_MAGIC {
        return Err(MetaError::format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(magic),
            std::str::from_utf8(EMB_MAGIC).unwrap()
        )));
    }
    let id = cur.string("encoder id")?;
    let rows = cur.u64("row count")?;
    let cols = cur.u64("column count")?;
    let dtype = Dtype::from_tag(cur.u8("dtype")?)?;
    let expected = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(dtype.size() as u64))
        .filter(|&b| b <= usize::MAX as u64)
        .ok_or_else(|| MetaError::format(format!("matrix {rows}x{cols} is too large")))?
        as usize;
    if cur.remaining() < expected {
        return Err(MetaError::format(format!(
            "truncated payload for '{id}': expected {expected} bytes, found {}",
            cur.remaining()
        )));
    }
    let payload = cur.take(expected, "payload")?;
    let (rows, cols) = (rows as usize, cols as usize);
    let values: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok((id, DMatrix::from_row_slice(rows, cols, &values)))
}

pub fn encode_embeddings(view: &EmbeddingView, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::new();
    put_matrix(&mut out, view.encoder_id(), view.matrix(), dtype);
    out
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingView> {
    let mut cur = Cursor::new(bytes);
    let (id, matrix) = take_matrix(&mut cur)?;
    if cur.remaining() != 0 {
        return Err(MetaError::format(format!(
            "{} unexpected trailing bytes after payload",
            cur.remaining()
        )));
    }
    EmbeddingView::new(id, matrix)
}

pub fn write_embeddings(view: &EmbeddingView, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    fs::write(path, encode_embeddings(view, dtype))?;
    Ok(())
}

/// Reads a `METAEMB1` file, widening f32 payloads to f64.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingView> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_embeddings(&bytes).map_err(|e| with_path(e, path))
}

fn with_path(e: MetaError, path: &Path) -> MetaError {
    match e {
        MetaError::Format(m) => MetaError::Format(format!("{}: {m}", path.display())),
        MetaError::InvalidInput(m) => MetaError::InvalidInput(format!("{}: {m}", path.display())),
        other => other,
    }
}

pub fn parse_sts(text: &str) -> Result<StsDataset> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(MetaError::format(format!(
                "line {lineno}: expected 4 tab-separated fields, found {}",
                fields.len()
            )));
        }
        if fields[0].is_empty() {
            return Err(MetaError::format(format!("line {lineno}: empty subset name")));
        }
        let index = |s: &str, what: &str| {
            s.trim().parse::<usize>().map_err(|_| {
                MetaError::format(format!("line {lineno}: {what} '{s}' is not a non-negative integer"))
            })
        };
        let index_a = index(fields[1], "index_a")?;
        let index_b = index(fields[2], "index_b")?;
        let gold = fields[3]
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|g| g.is_finite())
            .ok_or_else(|| {
                MetaError::format(format!(
                    "line {lineno}: gold score '{}' is not a finite number",
                    fields[3]
                ))
            })?;
        records.push((
            fields[0].to_string(),
            StsRecord {
                index_a,
                index_b,
                gold,
            },
        ));
    }
    if records.is_empty() {
        return Err(MetaError::format("STS file contains no records"));
    }
    StsDataset::from_records(records).map_err(|e| MetaError::format(e.to_string()))
}

pub fn read_sts(path: impl AsRef<Path>) -> Result<StsDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| MetaError::format(format!("{}: not valid UTF-8", path.display())))?;
    parse_sts(&text).map_err(|e| with_path(e, path))
}

pub fn format_sts(ds: &StsDataset) -> String {
    let mut out = String::new();
    for s in ds.subsets() {
        for r in &s.records {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", s.name, r.index_a, r.index_b, r.gold));
        }
    }
    out
}

pub fn write_sts(ds: &StsDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_sts(ds))?;
    Ok(())
}

fn row_matrix(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, values.len(), values)
}

fn dims_matrix(dims: &[usize]) -> DMatrix<f64> {
    row_matrix(&dims.iter().map(|&d| d as f64).collect::<Vec<_>>())
}

struct ModelWriter {
    config: Vec<(String, String)>,
    blocks: Vec<(String, DMatrix<f64>)>,
}

impl ModelWriter {
    fn config(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_string(), value.to_string()));
    }

    fn block(&mut self, name: impl Into<String>, m: DMatrix<f64>) {
        self.blocks.push((name.into(), m));
    }
}

pub fn encode_model(model: &FusionModel) -> Vec<u8> {
    let mut w = ModelWriter {
        config: Vec::new(),
        blocks: Vec::new(),
    };
    match model {
        FusionModel::Conc(m) | FusionModel::Avg(m) => {
            w.block("expected_dims", dims_matrix(m.expected_dims()));
        }
        FusionModel::Svd(m) => {
            w.config("d", m.d());
            w.block("view_dims", dims_matrix(&m.view_dims));
            w.block("projection", m.projection.clone());
            w.block("mean", row_matrix(m.mean.as_slice()));
            w.block("singular_values", row_matrix(m.singular_values.as_slice()));
        }
        FusionModel::Gcca(m) => {
            w.config("d", m.d());
            w.config("tau", m.tau);
            w.block("eigenvalues", row_matrix(m.eigenvalues.as_slice()));
            for (j, (theta, mean)) in m.thetas.iter().zip(&m.means).enumerate() {
                w.block(format!("theta.{j}"), theta.clone());
                w.block(format!("mean.{j}"), row_matrix(mean.as_slice()));
            }
        }
        FusionModel::Ae(m) => {
            w.config("d", m.d());
            w.config("loss", m.loss);
            w.config("hidden", m.hidden_count());
            w.config("views", m.n_views());
            if let Some(c) = &m.config {
                w.config("epochs", c.epochs);
                w.config("batch_size", c.batch_size);
                w.config("lr", c.lr);
                w.config("beta1", c.beta1);
                w.config("beta2", c.beta2);
                w.config("eps", c.eps);
                w.config("seed", c.seed);
            }
            for (role, nets) in [("encoder", &m.encoders), ("decoder", &m.decoders)] {
                for (j, net) in nets.iter().enumerate() {
                    for (l, (weight, bias)) in net.layers().iter().enumerate() {
                        w.block(format!("{role}.{j}.weight.{l}"), weight.clone());
                        w.block(format!("{role}.{j}.bias.{l}"), row_matrix(bias.as_slice()));
                    }
                }
            }
            w.block("train_log", row_matrix(&m.train_log));
        }
    }

    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.push(model.method().tag());
    out.extend_from_slice(&(w.config.len() as u32).to_le_bytes());
    for (k, v) in &w.config {
        put_string(&mut out, k);
        put_string(&mut out, v);
    }
    out.extend_from_slice(&(w.blocks.len() as u32).to_le_bytes());
    for (name, m) in &w.blocks {
        put_matrix(&mut out, name, m, Dtype::F64);
    }
    out
}

struct ModelReader {
    config: Vec<(String, String)>,
    blocks: Vec<(String, DMatrix<f64>)>,
}

impl ModelReader {
    fn config<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v)
            .ok_or_else(|| MetaError::format(format!("model config is missing '{key}'")))?;
        raw.parse()
            .map_err(|_| MetaError::format(format!("model config '{key}' has bad value '{raw}'")))
    }

    fn has_config(&self, key: &str) -> bool {
        self.config.iter().any(|(k, _)| k == key)
    }

    fn block(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| MetaError::format(format!("model file is missing parameter '{name}'")))
    }

    fn has_block(&self, name: &str) -> bool {
        self.blocks.iter().any(|(n, _)| n == name)
    }

    fn vector(&self, name: &str) -> Result<DVector<f64>> {
        let m = self.block(name)?;
        if m.nrows() != 1 {
            return Err(MetaError::format(format!("parameter '{name}' must be a single row")));
        }
        Ok(DVector::from_iterator(m.ncols(), m.iter().copied()))
    }

    fn dims(&self, name: &str) -> Result<Vec<usize>> {
        self.vector(name)?
            .iter()
            .map(|&v| {
                if v >= 1.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(MetaError::format(format!("parameter '{name}' has a bad dimension {v}")))
                }
            })
            .collect()
    }

    fn nets(&self, role: &str, views: usize) -> Result<Vec<FeedForwardNet>> {
        (0..views)
            .map(|j| {
                let mut layers = Vec::new();
                let mut l = 0;
                while self.has_block(&format!("{role}.{j}.weight.{l}")) {
                    let w = self.block(&format!("{role}.{j}.weight.{l}"))?.clone();
                    let b = self.vector(&format!("{role}.{j}.bias.{l}"))?;
                    layers.push((w, b));
                    l += 1;
                }
                FeedForwardNet::from_layers(layers).map_err(|e| MetaError::format(e.to_string()))
            })
            .collect()
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<FusionModel> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.take(8, "model magic")?;
    if magic != MODEL_MAGIC {
        return Err(MetaError::format("not a model file (bad magic)"));
    }
    let version = cur.u32("format version")?;
    if version != MODEL_VERSION {
        return Err(MetaError::format(format!(
            "unsupported model format version {version} (this build reads {MODEL_VERSION})"
        )));
    }
    let tag = cur.u8("method tag")?;
    let method = Method::from_tag(tag)
        .ok_or_else(|| MetaError::format(format!("unknown method tag {tag}")))?;
    let n_config = cur.u32("config count")?;
    let mut config = Vec::new();
    for _ in 0..n_config {
        let k = cur.string("config key")?;
        let v = cur.string("config value")?;
        config.push((k, v));
    }
    let n_blocks = cur.u32("parameter count")?;
    let mut blocks = Vec::new();
    for _ in 0..n_blocks {
        blocks.push(take_matrix(&mut cur)?);
    }
    if cur.remaining() != 0 {
        return Err(MetaError::format(format!(
            "{} unexpected trailing bytes in model file",
            cur.remaining()
        )));
    }
    if let Some((name, _)) = blocks
        .iter()
        .find(|(_, m)| m.iter().any(|v| !v.is_finite()))
    {
        return Err(MetaError::format(format!("parameter '{name}' is not finite")));
    }
    let r = ModelReader { config, blocks };
    let bad = |e: MetaError| MetaError::format(e.to_string());

    Ok(match method {
        Method::Conc | Method::Avg => {
            let kind = if method == Method::Conc {
                NaiveKind::Conc
            } else {
                NaiveKind::Avg
            };
            let m = NaiveModel::new(kind, r.dims("expected_dims")?).map_err(bad)?;
            if method == Method::Conc {
                FusionModel::Conc(m)
            } else {
                FusionModel::Avg(m)
            }
        }
        Method::Svd => {
            let projection = r.block("projection")?.clone();
            let mean = r.vector("mean")?;
            let singular_values = r.vector("singular_values")?;
            let view_dims = r.dims("view_dims")?;
            let d: usize = r.config("d")?;
            if projection.ncols() != d
                || singular_values.len() != d
                || projection.nrows() != mean.len()
                || view_dims.iter().sum::<usize>() != mean.len()
            {
                return Err(MetaError::format("inconsistent svd parameter shapes"));
            }
            FusionModel::Svd(SvdModel {
                projection,
                mean,
                singular_values,
                view_dims,
            })
        }
        Method::Gcca => {
            let d: usize = r.config("d")?;
            let tau: f64 = r.config("tau")?;
            let eigenvalues = r.vector("eigenvalues")?;
            let mut thetas = Vec::new();
            let mut means = Vec::new();
            let mut j = 0;
            while r.has_block(&format!("theta.{j}")) {
                let theta = r.block(&format!("theta.{j}"))?.clone();
                let mean = r.vector(&format!("mean.{j}"))?;
                if theta.nrows() != d || theta.ncols() != mean.len() {
                    return Err(MetaError::format(format!("inconsistent shapes for view {j}")));
                }
                thetas.push(theta);
                means.push(mean);
                j += 1;
            }
            if thetas.len() < 2 || eigenvalues.len() != d {
                return Err(MetaError::format("inconsistent gcca parameters"));
            }
            FusionModel::Gcca(GccaModel {
                thetas,
                means,
                tau,
                eigenvalues,
            })
        }
        Method::Ae => {
            let views: usize = r.config("views")?;
            let loss: LossKind = r.config::<String>("loss")?.parse().map_err(bad)?;
            let encoders = r.nets("encoder", views)?;
            let decoders = r.nets("decoder", views)?;
            let mut model = AeModel::new(encoders, decoders, loss).map_err(bad)?;
            if model.d() != r.config::<usize>("d")? || model.hidden_count() != r.config::<usize>("hidden")? {
                return Err(MetaError::format("autoencoder config disagrees with its parameters"));
            }
            model.train_log = r.vector("train_log")?.iter().copied().collect();
            if r.has_config("epochs") {
                model.config = Some(AeConfig {
                    d: model.d(),
                    loss,
                    hidden_count: model.hidden_count(),
                    epochs: r.config("epochs")?,
                    batch_size: r.config("batch_size")?,
                    lr: r.config("lr")?,
                    beta1: r.config("beta1")?,
                    beta2: r.config("beta2")?,
                    eps: r.config("eps")?,
                    seed: r.config("seed")?,
                });
            }
            FusionModel::Ae(model)
        }
    })
}

pub fn save_model(model: &FusionModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FusionModel> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_model(&bytes).map_err(|e| with_path(e, path))
}
