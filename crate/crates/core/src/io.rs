//! Configuration, tabular output, checkpoints and run manifests.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! "LLB1" | u32 version | u32 N | f64 L | f64 t | u64 step | f64 ε | f64 δ
//! | N·N·3 f64, row-major, component innermost
//! | u64 seed | u64 path | u64 counter
//! | 8-byte digest of everything above
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{DiagnosticsRecord, TailProbe};
use crate::dynamics::{PathState, SimConfig};
use crate::error::{LlbError, Result};
use crate::experiments::{StudyKind, StudyParams, StudyPoint, StudyReport, StudySpec};
use crate::field::{Grid, VectorField};
use crate::initial::InitialCondition;
use crate::measures::{EmpiricalMeasure, MeasureMeta, Snapshot};
use crate::noise::NoiseStream;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LLB1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Columns of a diagnostics series.
pub const DIAGNOSTICS_COLUMNS: [&str; 8] =
    ["t", "l2_sq", "h1_sq", "h2_sq", "tail_j4", "tail_j8", "tail_j12", "energy_residual"];
const TAIL_COLUMNS: [u32; 3] = [4, 8, 12];

/// What `simulate` records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecordOptions {
    /// time between diagnostic rows
    pub sample_every: f64,
    /// tail radii; those whose cutoff does not fit the box are skipped
    pub tail_radii: Vec<f64>,
    /// track the one-step L² balance residual
    pub energy_residual: bool,
    /// write one series per path next to the ensemble mean
    pub per_path: bool,
    /// write a final-state checkpoint per path
    pub checkpoints: bool,
}

impl Default for RecordOptions {
    fn default() -> Self {
        Self {
            sample_every: 0.1,
            tail_radii: vec![4.0, 8.0, 12.0],
            energy_residual: false,
            per_path: true,
            checkpoints: true,
        }
    }
}

/// Top-level run configuration (TOML).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub sim: SimConfig,
    pub initial: InitialCondition,
    pub record: RecordOptions,
    pub study: StudyParams,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        let r = &self.record;
        if !(r.sample_every >= self.sim.dt * (1.0 - 1e-9)) {
            return Err(LlbError::Config(format!(
                "record.sample_every = {} violates sample_every ≥ dt = {}",
                r.sample_every, self.sim.dt
            )));
        }
        for &j in &r.tail_radii {
            if !(j >= 1.0) {
                return Err(LlbError::Config(format!("record.tail_radii: j = {j} violates j ≥ 1")));
            }
        }
        Ok(())
    }

    /// Resolved study for `kind` built from this config.
    pub fn study_spec(&self, kind: StudyKind) -> Result<StudySpec> {
        let mut params = self.study.clone();
        if params.initial.is_empty() && self.initial != InitialCondition::default() {
            params.initial = vec![self.initial.clone()];
        }
        StudySpec::new(kind, self.sim.clone(), params)
    }

    /// The config with every default spelled out.
    pub fn resolved_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LlbError::Config(e.to_string()))
    }

    /// Digest of [`Config::resolved_toml`].
    pub fn hash(&self) -> Result<String> {
        Ok(digest(self.resolved_toml()?.as_bytes()))
    }
}

pub fn parse_config(text: &str) -> Result<Config> {
    let cfg: Config = toml::from_str(text).map_err(|e| LlbError::Config(e.message().trim().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<Config> {
    let text = fs::read_to_string(path).map_err(|e| LlbError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        LlbError::Config(m) => LlbError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn digest(bytes: &[u8]) -> String {
    let h = Sha256::digest(bytes);
    h[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| LlbError::io(dir, e))?;
        }
    }
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    create_parent(path)?;
    let f = fs::File::create(path).map_err(|e| LlbError::io(path, e))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(f))
}

/// Diagnostics series as CSV (header only when `series` is empty). Tail
/// columns with no recorded value are left empty.
pub fn write_series(path: &Path, series: &[DiagnosticsRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(DIAGNOSTICS_COLUMNS)?;
    for r in series {
        let tail = |j: u32| r.tail_mass.get(&j).map(|v| fmt_f64(*v)).unwrap_or_default();
        w.write_record([
            fmt_f64(r.t),
            fmt_f64(r.l2_sq),
            fmt_f64(r.h1_sq),
            fmt_f64(r.h2_sq),
            tail(TAIL_COLUMNS[0]),
            tail(TAIL_COLUMNS[1]),
            tail(TAIL_COLUMNS[2]),
            fmt_f64(r.energy_residual),
        ])?;
    }
    w.flush().map_err(|e| LlbError::io(path, e))?;
    Ok(())
}

pub fn read_series(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let f = fs::File::open(path).map_err(|e| LlbError::io(path, e))?;
    let mut r = csv::Reader::from_reader(f);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != DIAGNOSTICS_COLUMNS {
        return Err(LlbError::Config(format!("{}: not a diagnostics series", path.display())));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| LlbError::Config(format!("{}: bad number `{s}`", path.display())))
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut tail_mass = BTreeMap::new();
        for (k, j) in TAIL_COLUMNS.iter().enumerate() {
            let cell = &rec[4 + k];
            if !cell.is_empty() {
                tail_mass.insert(*j, num(cell)?);
            }
        }
        out.push(DiagnosticsRecord {
            t: num(&rec[0])?,
            l2_sq: num(&rec[1])?,
            h1_sq: num(&rec[2])?,
            h2_sq: num(&rec[3])?,
            tail_mass,
            energy_residual: num(&rec[7])?,
        });
    }
    Ok(out)
}

/// Study points as CSV: `index`, coordinates, statistics, interval bounds
/// (`<stat>_lo`, `<stat>_hi`) and `flag`; columns are the sorted union over
/// all points and missing cells are empty.
pub fn write_study_points(path: &Path, points: &[StudyPoint]) -> Result<()> {
    let mut coords = BTreeSet::new();
    let mut stats = BTreeSet::new();
    let mut cis = BTreeSet::new();
    for p in points {
        coords.extend(p.coords.keys().cloned());
        stats.extend(p.stats.keys().cloned());
        cis.extend(p.ci.keys().cloned());
    }
    let mut header = vec!["index".to_string()];
    header.extend(coords.iter().cloned());
    header.extend(stats.iter().cloned());
    for k in &cis {
        header.push(format!("{k}_lo"));
        header.push(format!("{k}_hi"));
    }
    header.push("flag".into());
    let mut w = csv_writer(path)?;
    w.write_record(&header)?;
    let cell = |m: &BTreeMap<String, f64>, k: &str| m.get(k).map(|v| fmt_f64(*v)).unwrap_or_default();
    for p in points {
        let mut row = vec![p.index.to_string()];
        row.extend(coords.iter().map(|k| cell(&p.coords, k)));
        row.extend(stats.iter().map(|k| cell(&p.stats, k)));
        for k in &cis {
            match p.ci.get(k) {
                Some([lo, hi]) => {
                    row.push(fmt_f64(*lo));
                    row.push(fmt_f64(*hi));
                }
                None => row.extend([String::new(), String::new()]),
            }
        }
        row.push(p.flag.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| LlbError::io(path, e))?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| LlbError::io(path, e))
}

/// `report.json`, `points.csv` and `series/<name>.csv` under `dir`.
pub fn write_report(dir: &Path, report: &StudyReport) -> Result<Vec<String>> {
    let mut files = vec!["report.json".to_string(), "points.csv".to_string()];
    write_text(&dir.join("report.json"), &(report.to_json()? + "\n"))?;
    write_study_points(&dir.join("points.csv"), &report.points)?;
    for (name, series) in &report.series {
        let rel = format!("series/{name}.csv");
        write_series(&dir.join(&rel), series)?;
        files.push(rel);
    }
    Ok(files)
}

// ---------------------------------------------------------------- checkpoints

/// Header fields of a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub n: usize,
    pub half_width: f64,
    pub t: f64,
    pub step: u64,
    pub epsilon: f64,
    pub delta: f64,
    pub stream: NoiseStream,
    /// next noise counter (equals `step`)
    pub counter: u64,
}

fn checkpoint_bytes<T: Scalar>(u: &VectorField<T>, h: &CheckpointHeader) -> Vec<u8> {
    let n = u.grid().n();
    let mut b = Vec::with_capacity(52 + n * n * 24 + 32);
    b.extend_from_slice(CHECKPOINT_MAGIC);
    b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    b.extend_from_slice(&(n as u32).to_le_bytes());
    b.extend_from_slice(&h.half_width.to_le_bytes());
    b.extend_from_slice(&h.t.to_le_bytes());
    b.extend_from_slice(&h.step.to_le_bytes());
    b.extend_from_slice(&h.epsilon.to_le_bytes());
    b.extend_from_slice(&h.delta.to_le_bytes());
    let c = u.comps();
    for i in 0..n * n {
        for comp in c.iter() {
            b.extend_from_slice(&comp[i].to_f64_lossy().to_le_bytes());
        }
    }
    b.extend_from_slice(&h.stream.seed.to_le_bytes());
    b.extend_from_slice(&h.stream.path.to_le_bytes());
    b.extend_from_slice(&h.counter.to_le_bytes());
    let d = Sha256::digest(&b);
    b.extend_from_slice(&d[..8]);
    b
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    create_parent(path)?;
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| LlbError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| LlbError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| LlbError::io(path, e))
}

/// Write `state` with its `(ε, δ)`.
pub fn save_checkpoint<T: Scalar>(state: &PathState<T>, epsilon: f64, delta: f64, path: &Path) -> Result<()> {
    let g = state.u().grid();
    let h = CheckpointHeader {
        n: g.n(),
        half_width: g.half_width().to_f64_lossy(),
        t: state.t,
        step: state.step_index,
        epsilon,
        delta,
        stream: state.stream,
        counter: state.step_index,
    };
    write_atomic(path, &checkpoint_bytes(state.u(), &h))
}

struct Cursor<'a> {
    b: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take<const K: usize>(&mut self) -> Result<[u8; K]> {
        let end = self.at + K;
        let s = self
            .b
            .get(self.at..end)
            .ok_or_else(|| LlbError::Corrupt(format!("truncated at byte {} of {}", self.at, self.b.len())))?;
        self.at = end;
        Ok(s.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

/// Parse a checkpoint. Wrong magic or version is a format error; truncation,
/// trailing bytes or a digest mismatch is corruption.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, Vec<f64>)> {
    let mut c = Cursor { b: bytes, at: 0 };
    let magic: [u8; 4] = c.take().map_err(|_| LlbError::Format("file shorter than the magic".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(LlbError::Format(format!("bad magic {magic:02x?}")));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(LlbError::Format(format!("unsupported version {version}")));
    }
    let n = c.u32()? as usize;
    let half_width = c.f64()?;
    let t = c.f64()?;
    let step = c.u64()?;
    let epsilon = c.f64()?;
    let delta = c.f64()?;
    let expected = 52usize
        .checked_add(n.checked_mul(n).and_then(|m| m.checked_mul(24)).unwrap_or(usize::MAX))
        .and_then(|m| m.checked_add(32))
        .unwrap_or(usize::MAX);
    if bytes.len() != expected {
        return Err(LlbError::Corrupt(format!(
            "expected {expected} bytes for N = {n}, found {}",
            bytes.len()
        )));
    }
    let body = &bytes[..bytes.len() - 8];
    if Sha256::digest(body)[..8] != bytes[bytes.len() - 8..] {
        return Err(LlbError::Corrupt("digest mismatch".into()));
    }
    let mut data = Vec::with_capacity(n * n * 3);
    for _ in 0..n * n * 3 {
        data.push(c.f64()?);
    }
    let seed = c.u64()?;
    let path = c.u64()?;
    let counter = c.u64()?;
    Ok((
        CheckpointHeader {
            n,
            half_width,
            t,
            step,
            epsilon,
            delta,
            stream: NoiseStream::new(seed, path),
            counter,
        },
        data,
    ))
}

/// Load a checkpoint as a resumable state.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(PathState<T>, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(|e| LlbError::io(path, e))?;
    let (h, data) = decode_checkpoint(&bytes)?;
    let grid = Grid::new(h.n, T::of(h.half_width)).map_err(|e| LlbError::Format(e.to_string()))?;
    let u = field_from_interleaved(&grid, &data)?;
    let state = PathState::resume(u, h.t, h.counter, h.stream)?;
    Ok((state, h))
}

fn field_from_interleaved<T: Scalar>(grid: &Grid<T>, data: &[f64]) -> Result<VectorField<T>> {
    let m = grid.points();
    let mut comps = [Vec::with_capacity(m), Vec::with_capacity(m), Vec::with_capacity(m)];
    for px in data.chunks_exact(3) {
        for (c, v) in comps.iter_mut().zip(px) {
            c.push(T::of(*v));
        }
    }
    VectorField::from_components(grid, comps)
}

// ------------------------------------------------------------------ manifests

/// Provenance written next to every output tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    /// from `SOURCE_DATE_EPOCH`; absent otherwise so reruns are byte-identical
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &Config) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            config_hash: cfg.hash()?,
            seed: cfg.sim.seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()),
            files: Vec::new(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_text(&dir.join("manifest.json"), &(serde_json::to_string_pretty(self)? + "\n"))
    }
}

// ------------------------------------------------------------ measure archive

#[derive(Serialize, Deserialize)]
struct IndexLine {
    path: u64,
    t: f64,
    step: u64,
    l2_sq: f64,
    h1_sq: f64,
    h2_sq: f64,
    tails: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    file: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct MeasureHeader {
    meta: MeasureMeta,
    n: usize,
    half_width: f64,
    tail_radii: Vec<f64>,
}

/// `measure.json`, `index.jsonl` and one checkpoint per stored field.
pub fn save_measure<T: Scalar>(dir: &Path, mu: &EmpiricalMeasure<T>) -> Result<()> {
    let head = MeasureHeader {
        meta: mu.meta.clone(),
        n: mu.grid().n(),
        half_width: mu.grid().half_width().to_f64_lossy(),
        tail_radii: mu.tail_radii().to_vec(),
    };
    write_text(&dir.join("measure.json"), &(serde_json::to_string_pretty(&head)? + "\n"))?;
    let mut index = String::new();
    for (i, s) in mu.snapshots().iter().enumerate() {
        let file = match &s.field {
            Some(u) => {
                let name = format!("snapshots/{i:06}.llb");
                let h = CheckpointHeader {
                    n: head.n,
                    half_width: head.half_width,
                    t: s.t,
                    step: s.step,
                    epsilon: mu.meta.epsilon,
                    delta: mu.meta.delta,
                    stream: NoiseStream::new(mu.meta.seed, s.path),
                    counter: s.step,
                };
                write_atomic(&dir.join(&name), &checkpoint_bytes(u, &h))?;
                Some(name)
            }
            None => None,
        };
        let line = IndexLine {
            path: s.path,
            t: s.t,
            step: s.step,
            l2_sq: s.l2_sq,
            h1_sq: s.h1_sq,
            h2_sq: s.h2_sq,
            tails: s.tails.clone(),
            file,
        };
        index.push_str(&serde_json::to_string(&line)?);
        index.push('\n');
    }
    write_text(&dir.join("index.jsonl"), &index)
}

pub fn load_measure<T: Scalar>(dir: &Path) -> Result<EmpiricalMeasure<T>> {
    let read = |p: PathBuf| fs::read_to_string(&p).map_err(|e| LlbError::io(p, e));
    let head: MeasureHeader = serde_json::from_str(&read(dir.join("measure.json"))?)?;
    let grid = Grid::new(head.n, T::of(head.half_width))?;
    let mut snaps = Vec::new();
    for line in read(dir.join("index.jsonl"))?.lines().filter(|l| !l.trim().is_empty()) {
        let e: IndexLine = serde_json::from_str(line)?;
        let field = match &e.file {
            Some(f) => {
                let (state, _) = load_checkpoint::<T>(&dir.join(f))?;
                if state.u().grid() != &grid {
                    return Err(LlbError::GridMismatch);
                }
                Some(state.into_field())
            }
            None => None,
        };
        snaps.push(Snapshot {
            path: e.path,
            t: e.t,
            step: e.step,
            field,
            l2_sq: e.l2_sq,
            h1_sq: e.h1_sq,
            h2_sq: e.h2_sq,
            tails: e.tails,
            cached: Vec::new(),
        });
    }
    EmpiricalMeasure::from_snapshots(head.meta, &grid, snaps, head.tail_radii)
}

/// Tail radii from `wanted` whose cutoff fits inside the grid.
pub fn fitting_tail_probe<T: Scalar>(grid: &Grid<T>, wanted: &[f64]) -> Result<Option<TailProbe<T>>> {
    let l = grid.half_width().to_f64_lossy();
    let js: Vec<f64> = wanted.iter().cloned().filter(|j| 0.75 * j <= l).collect();
    if js.is_empty() {
        return Ok(None);
    }
    Ok(Some(TailProbe::new(grid, &js)?))
}
