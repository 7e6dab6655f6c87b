//! On-disk formats.
//!
//! Tensor blobs:
//!
//! * `TEC-DENSE-1`: the line `TEC-DENSE-1\n`, an ASCII line `d I_1 … I_d\n`,
//!   then `Π I_j` binary64 little-endian values in row-major order.
//! * `TEC-CP-1`: the line `TEC-CP-1\n`, an ASCII line `d r I_1 … I_d\n`, then
//!   the factors in mode order, each `I_j × r` column-major, binary64 LE.
//!
//! Archives are directories holding a `manifest.json` plus blobs:
//!
//! * `TEC-DATA-1`: `samples/NNNNNN.cp` or `samples/NNNNNN.dense`, and an
//!   optional `labels.i8` (one signed byte per sample).
//! * `TEC-MODEL-1`: per member `member-NNN.cp` (the projected training factors
//!   as consecutive `TEC-CP-1` records), `member-NNN.beta` and
//!   `member-NNN.labels` (binary64 LE arrays). Projection matrices are not
//!   stored; they are regenerated from the seed in the manifest.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datagen::SimModel;
use crate::dataset::{Dataset, Provenance, Samples};
use crate::ensemble::{StmModel, TecModel};
use crate::error::{Result, TecError};
use crate::kernels::KernelSpec;
use crate::projection::ProjectionSpec;
use crate::tensor::{AlsOptions, CpTensor, DenseTensor};

pub const DENSE_MAGIC: &str = "TEC-DENSE-1";
pub const CP_MAGIC: &str = "TEC-CP-1";
pub const DATA_FORMAT: &str = "TEC-DATA-1";
pub const MODEL_FORMAT: &str = "TEC-MODEL-1";
const MANIFEST: &str = "manifest.json";
const MAX_HEADER: usize = 4096;

fn bad(path: &Path, detail: impl Into<String>) -> TecError {
    TecError::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TecError + '_ {
    move |source| TecError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Tensor blobs

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_dense(t: &DenseTensor, out: &mut Vec<u8>) {
    out.extend_from_slice(DENSE_MAGIC.as_bytes());
    out.push(b'\n');
    let dims: Vec<String> = t.dims().iter().map(usize::to_string).collect();
    out.extend_from_slice(format!("{} {}\n", t.order(), dims.join(" ")).as_bytes());
    push_f64s(out, t.values());
}

pub fn encode_cp(t: &CpTensor, out: &mut Vec<u8>) {
    out.extend_from_slice(CP_MAGIC.as_bytes());
    out.push(b'\n');
    let dims: Vec<String> = t.mode_dims().iter().map(usize::to_string).collect();
    out.extend_from_slice(format!("{} {} {}\n", t.order(), t.rank(), dims.join(" ")).as_bytes());
    for f in t.factors() {
        push_f64s(out, f.as_slice());
    }
}

/// Reads one `\n`-terminated ASCII line of bounded length.
fn read_line<R: BufRead>(r: &mut R) -> std::result::Result<Option<String>, String> {
    let mut buf = Vec::new();
    let n = r
        .by_ref()
        .take(MAX_HEADER as u64)
        .read_until(b'\n', &mut buf)
        .map_err(|e| e.to_string())?;
    if n == 0 {
        return Ok(None);
    }
    if buf.pop() != Some(b'\n') {
        return Err("header line not terminated".into());
    }
    String::from_utf8(buf).map(Some).map_err(|_| "header is not ASCII".into())
}

fn parse_numbers(line: &str) -> std::result::Result<Vec<usize>, String> {
    line.split(' ')
        .map(|s| s.parse::<usize>().map_err(|_| format!("bad header field {s:?}")))
        .collect()
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> std::result::Result<Vec<f64>, String> {
    let bytes = n.checked_mul(8).ok_or("payload too large")?;
    let mut buf = Vec::new();
    r.take(bytes as u64).read_to_end(&mut buf).map_err(|e| e.to_string())?;
    if buf.len() != bytes {
        return Err(format!("payload truncated: {} of {bytes} bytes", buf.len()));
    }
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn checked_product(dims: &[usize]) -> std::result::Result<usize, String> {
    dims.iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|&n| n <= (1 << 40))
        .ok_or_else(|| "dims too large".to_string())
}

fn decode_dense_inner<R: BufRead>(r: &mut R) -> std::result::Result<DenseTensor, String> {
    if read_line(r)?.as_deref() != Some(DENSE_MAGIC) {
        return Err(format!("missing {DENSE_MAGIC} header"));
    }
    let fields = parse_numbers(&read_line(r)?.ok_or("missing dims line")?)?;
    let (&d, dims) = fields.split_first().ok_or("empty dims line")?;
    if d == 0 || dims.len() != d {
        return Err(format!("dims line declares {d} modes but lists {}", dims.len()));
    }
    let values = read_f64s(r, checked_product(dims)?)?;
    DenseTensor::new(dims.to_vec(), values).map_err(|e| e.to_string())
}

/// Decodes one CP record; `Ok(None)` at a clean end of input.
fn decode_cp_inner<R: BufRead>(r: &mut R) -> std::result::Result<Option<CpTensor>, String> {
    match read_line(r)? {
        None => return Ok(None),
        Some(h) if h == CP_MAGIC => {}
        Some(_) => return Err(format!("missing {CP_MAGIC} header")),
    }
    let fields = parse_numbers(&read_line(r)?.ok_or("missing dims line")?)?;
    let [d, rank, dims @ ..] = fields.as_slice() else {
        return Err("dims line too short".into());
    };
    if *d == 0 || dims.len() != *d || *rank == 0 {
        return Err(format!("inconsistent CP header {fields:?}"));
    }
    let mut factors = Vec::with_capacity(*d);
    for &n in dims {
        let values = read_f64s(r, checked_product(&[n, *rank])?)?;
        factors.push(DMatrix::from_vec(n, *rank, values));
    }
    CpTensor::new(factors).map(Some).map_err(|e| e.to_string())
}

pub fn decode_dense(bytes: &[u8]) -> Result<DenseTensor> {
    let mut r = bytes;
    let t = decode_dense_inner(&mut r).map_err(|d| bad(Path::new("<memory>"), d))?;
    if !r.is_empty() {
        return Err(bad(Path::new("<memory>"), "trailing bytes after dense tensor"));
    }
    Ok(t)
}

pub fn decode_cp(bytes: &[u8]) -> Result<CpTensor> {
    let mut all = decode_cp_stream(bytes, Path::new("<memory>"))?;
    if all.len() != 1 {
        return Err(bad(Path::new("<memory>"), format!("expected one CP record, found {}", all.len())));
    }
    Ok(all.remove(0))
}

fn decode_cp_stream(bytes: &[u8], path: &Path) -> Result<Vec<CpTensor>> {
    let mut r = bytes;
    let mut out = Vec::new();
    while let Some(t) = decode_cp_inner(&mut r).map_err(|d| bad(path, d))? {
        out.push(t);
    }
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

pub fn write_dense_file(path: &Path, t: &DenseTensor) -> Result<()> {
    let mut buf = Vec::new();
    encode_dense(t, &mut buf);
    write_file(path, &buf)
}

pub fn read_dense_file(path: &Path) -> Result<DenseTensor> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let t = decode_dense_inner(&mut r).map_err(|d| bad(path, d))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io_err(path))? != 0 {
        return Err(bad(path, "trailing bytes after dense tensor"));
    }
    Ok(t)
}

pub fn write_cp_file(path: &Path, t: &CpTensor) -> Result<()> {
    let mut buf = Vec::new();
    encode_cp(t, &mut buf);
    write_file(path, &buf)
}

pub fn read_cp_file(path: &Path) -> Result<CpTensor> {
    let mut all = decode_cp_stream(&read_file(path)?, path)?;
    if all.len() != 1 {
        return Err(bad(path, format!("expected one CP record, found {}", all.len())));
    }
    Ok(all.remove(0))
}

fn encode_f64_array(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::new();
    push_f64s(&mut out, values);
    out
}

fn decode_f64_array(bytes: &[u8], path: &Path) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(bad(path, "length is not a multiple of 8"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn write_manifest<T: Serialize>(dir: &Path, manifest: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    write_file(&dir.join(MANIFEST), text.as_bytes())
}

fn read_manifest<T: for<'de> Deserialize<'de>>(dir: &Path) -> Result<T> {
    let path = dir.join(MANIFEST);
    let bytes = read_file(&path)?;
    serde_json::from_slice(&bytes).map_err(|e| bad(&path, e.to_string()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Archive-relative blob names are plain file names or `samples/<name>`.
fn safe_join(dir: &Path, name: &str) -> Result<PathBuf> {
    let rel = Path::new(name);
    let ok = !name.is_empty()
        && rel
            .components()
            .all(|c| matches!(c, std::path::Component::Normal(_)));
    if !ok {
        return Err(bad(dir, format!("blob name {name:?} escapes the archive")));
    }
    Ok(dir.join(rel))
}

// ---------------------------------------------------------------------------
// Dataset archive

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Storage {
    Cp,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub model: Option<SimModel>,
    pub samples_per_class: Option<usize>,
    pub seed: Option<u64>,
    pub count: usize,
    pub mode_dims: Vec<usize>,
    pub storage: Storage,
    /// CP rank for factor storage, `null` for dense.
    pub rank: Option<usize>,
    pub samples: Vec<String>,
    pub labels: Option<String>,
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        return Err(TecError::Data("refusing to write an empty dataset".into()));
    }
    create_dir(&dir.join("samples"))?;
    let (storage, ext, rank) = match &ds.samples {
        Samples::Cp(v) => (Storage::Cp, "cp", Some(v.iter().map(CpTensor::rank).max().unwrap_or(1))),
        Samples::Dense(_) => (Storage::Dense, "dense", None),
    };
    let names: Vec<String> = (0..ds.len()).map(|i| format!("samples/{i:06}.{ext}")).collect();
    for (i, name) in names.iter().enumerate() {
        let mut buf = Vec::new();
        match &ds.samples {
            Samples::Cp(v) => encode_cp(&v[i], &mut buf),
            Samples::Dense(v) => encode_dense(&v[i], &mut buf),
        }
        write_file(&dir.join(name), &buf)?;
    }
    let labels = match &ds.labels {
        Some(labels) => {
            let bytes: Vec<u8> = labels.iter().map(|&y| y as u8).collect();
            write_file(&dir.join("labels.i8"), &bytes)?;
            Some("labels.i8".to_string())
        }
        None => None,
    };
    let manifest = DatasetManifest {
        format: DATA_FORMAT.into(),
        model: ds.provenance.as_ref().map(|p| p.model),
        samples_per_class: ds.provenance.as_ref().map(|p| p.samples_per_class),
        seed: ds.provenance.as_ref().map(|p| p.seed),
        count: ds.len(),
        mode_dims: ds.samples.mode_dims().unwrap_or_default(),
        storage,
        rank,
        samples: names,
        labels,
    };
    write_manifest(dir, &manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let m: DatasetManifest = read_manifest(dir)?;
    let manifest_path = dir.join(MANIFEST);
    if m.format != DATA_FORMAT {
        return Err(bad(&manifest_path, format!("format {:?}, expected {DATA_FORMAT}", m.format)));
    }
    if m.samples.len() != m.count {
        return Err(bad(&manifest_path, "sample list length disagrees with count"));
    }
    let samples = match m.storage {
        Storage::Cp => Samples::Cp(
            m.samples
                .iter()
                .map(|name| read_cp_file(&safe_join(dir, name)?))
                .collect::<Result<_>>()?,
        ),
        Storage::Dense => Samples::Dense(
            m.samples
                .iter()
                .map(|name| read_dense_file(&safe_join(dir, name)?))
                .collect::<Result<_>>()?,
        ),
    };
    if m.count > 0 && samples.mode_dims().as_deref() != Some(&m.mode_dims[..]) {
        return Err(bad(&manifest_path, "sample dims disagree with manifest"));
    }
    let labels = match &m.labels {
        Some(name) => {
            let path = safe_join(dir, name)?;
            let bytes = read_file(&path)?;
            Some(bytes.into_iter().map(|b| b as i8).collect())
        }
        None => None,
    };
    let mut ds = Dataset::new(samples, labels).map_err(|e| bad(&manifest_path, e.to_string()))?;
    if let (Some(model), Some(samples_per_class), Some(seed)) = (m.model, m.samples_per_class, m.seed) {
        ds.provenance = Some(Provenance {
            model,
            samples_per_class,
            seed,
        });
    }
    Ok(ds)
}

// ---------------------------------------------------------------------------
// Model archive

/// Training context stored with a model so that prediction can reproduce
/// the preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub lambda: f64,
    pub master_seed: u64,
    /// ALS settings applied to dense inputs; `None` when trained on CP data.
    pub dense_als: Option<AlsOptions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberManifest {
    pub seed: u64,
    pub projection: ProjectionSpec,
    pub kernel: KernelSpec,
    pub n_train: usize,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub factors: String,
    pub beta: String,
    pub labels: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub version: u32,
    pub b: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub master_seed: u64,
    pub mode_dims: Vec<usize>,
    pub target_dims: Vec<usize>,
    pub dense_als: Option<AlsOptions>,
    pub members: Vec<MemberManifest>,
}

pub fn write_model(dir: &Path, model: &TecModel, meta: &ModelMeta) -> Result<()> {
    create_dir(dir)?;
    let mut members = Vec::with_capacity(model.b());
    for (i, m) in model.members().iter().enumerate() {
        let stem = format!("member-{i:03}");
        let mut factors = Vec::new();
        for t in m.training() {
            encode_cp(t, &mut factors);
        }
        let names = [format!("{stem}.cp"), format!("{stem}.beta"), format!("{stem}.labels")];
        write_file(&dir.join(&names[0]), &factors)?;
        write_file(&dir.join(&names[1]), &encode_f64_array(m.beta()))?;
        write_file(&dir.join(&names[2]), &encode_f64_array(m.labels()))?;
        let [factors, beta, labels] = names;
        members.push(MemberManifest {
            seed: m.projection().seed,
            projection: m.projection().clone(),
            kernel: m.kernel().clone(),
            n_train: m.beta().len(),
            iterations: m.stats.iterations,
            converged: m.stats.converged,
            objective: m.stats.objective,
            factors,
            beta,
            labels,
        });
    }
    let manifest = ModelManifest {
        format: MODEL_FORMAT.into(),
        version: 1,
        b: model.b(),
        gamma: model.gamma(),
        lambda: meta.lambda,
        master_seed: meta.master_seed,
        mode_dims: model.mode_dims().to_vec(),
        target_dims: model.members()[0].projection().target_dims.clone(),
        dense_als: meta.dense_als,
        members,
    };
    write_manifest(dir, &manifest)
}

pub fn read_model(dir: &Path) -> Result<(TecModel, ModelMeta)> {
    let m: ModelManifest = read_manifest(dir)?;
    let manifest_path = dir.join(MANIFEST);
    if m.format != MODEL_FORMAT || m.version != 1 {
        return Err(bad(&manifest_path, format!("unsupported format {} v{}", m.format, m.version)));
    }
    if m.members.len() != m.b {
        return Err(bad(&manifest_path, "member list length disagrees with b"));
    }
    let mut members = Vec::with_capacity(m.b);
    for mm in &m.members {
        let factors_path = safe_join(dir, &mm.factors)?;
        let training = decode_cp_stream(&read_file(&factors_path)?, &factors_path)?;
        let beta_path = safe_join(dir, &mm.beta)?;
        let beta = decode_f64_array(&read_file(&beta_path)?, &beta_path)?;
        let labels_path = safe_join(dir, &mm.labels)?;
        let labels = decode_f64_array(&read_file(&labels_path)?, &labels_path)?;
        if training.len() != mm.n_train {
            return Err(bad(&factors_path, "training sample count disagrees with manifest"));
        }
        let mut member = StmModel::from_parts(mm.projection.clone(), mm.kernel.clone(), beta, labels, training)
            .map_err(|e| bad(&manifest_path, e.to_string()))?;
        member.stats.iterations = mm.iterations;
        member.stats.converged = mm.converged;
        member.stats.objective = mm.objective;
        members.push(member);
    }
    let model = TecModel::new(members, m.gamma).map_err(|e| bad(&manifest_path, e.to_string()))?;
    if model.mode_dims() != m.mode_dims {
        return Err(bad(&manifest_path, "member dims disagree with manifest"));
    }
    Ok((
        model,
        ModelMeta {
            lambda: m.lambda,
            master_seed: m.master_seed,
            dense_als: m.dense_als,
        },
    ))
}
