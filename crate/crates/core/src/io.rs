//! Binary field snapshots and persisted flow traces.
//!
//! Snapshot layout (all integers and floats little-endian):
//!
//! ```text
//! magic   5 bytes  "TKRF1"
//! n       u8       complex dimension
//! N       u32      grid points per axis
//! kind    u8       0 scalar, 1 complex, 2 hermitian, 3 metric
//! payload f64s     row-major in axis order (x¹, y¹, …)
//! ```
//!
//! Payloads: scalar = one value per point; complex = (re, im) per point;
//! hermitian = the full `n×n` matrix per point as row-major (re, im) pairs;
//! metric = the scalar potential followed by the constant matrix `H` as
//! row-major (re, im) pairs.
//!
//! A trace directory holds `meta.json` (written last), `initial.tkrf`,
//! `projection_u.tkrf`, one `snapshot_<k>.tkrf` per snapshot time (metric
//! snapshots of `ω(t)`), `phi_<k>.tkrf` with the flow potential including
//! its mean, and `diagnostics.csv`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, ScalarField, TorusGeometry};
use crate::flow::{FlowConfig, FlowTrace, Snapshot, StepDiagnostics};
use crate::geometry::{FlatMetric, HermitianField, KahlerMetric};
use crate::herm::HermMatrix;

pub const MAGIC: &[u8; 5] = b"TKRF1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum FieldKind {
    Scalar = 0,
    Complex = 1,
    Hermitian = 2,
    Metric = 3,
}

impl FieldKind {
    fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            0 => FieldKind::Scalar,
            1 => FieldKind::Complex,
            2 => FieldKind::Hermitian,
            3 => FieldKind::Metric,
            other => return Err(Error::Format(format!("unknown field kind {other}"))),
        })
    }
}

fn header(geom: TorusGeometry, kind: FieldKind) -> Vec<u8> {
    let mut out = Vec::with_capacity(11);
    out.extend_from_slice(MAGIC);
    out.push(geom.n() as u8);
    out.extend_from_slice(&(geom.size() as u32).to_le_bytes());
    out.push(kind as u8);
    out
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_matrix(out: &mut Vec<u8>, m: &HermMatrix) {
    for j in 0..m.n() {
        for k in 0..m.n() {
            push_f64(out, m.get(j, k).re);
            push_f64(out, m.get(j, k).im);
        }
    }
}

pub fn encode_scalar(f: &ScalarField) -> Vec<u8> {
    let mut out = header(f.geometry(), FieldKind::Scalar);
    out.reserve(8 * f.values().len());
    for &v in f.values() {
        push_f64(&mut out, v);
    }
    out
}

pub fn encode_complex(f: &ComplexField) -> Vec<u8> {
    let mut out = header(f.geometry(), FieldKind::Complex);
    for v in f.values() {
        push_f64(&mut out, v.re);
        push_f64(&mut out, v.im);
    }
    out
}

pub fn encode_hermitian(g: &HermitianField) -> Vec<u8> {
    let mut out = header(g.geometry(), FieldKind::Hermitian);
    for m in g.points() {
        push_matrix(&mut out, m);
    }
    out
}

pub fn encode_metric(m: &KahlerMetric) -> Vec<u8> {
    let mut out = header(m.geometry(), FieldKind::Metric);
    for &v in m.potential().values() {
        push_f64(&mut out, v);
    }
    push_matrix(&mut out, m.background());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn f64(&mut self) -> Result<f64> {
        let end = self.pos + 8;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format("truncated payload".into()))?;
        self.pos = end;
        Ok(f64::from_le_bytes(chunk.try_into().expect("8 bytes")))
    }

    fn matrix(&mut self, n: usize) -> Result<HermMatrix> {
        let mut e = [[Complex64::new(0.0, 0.0); 2]; 2];
        for row in e.iter_mut().take(n) {
            for v in row.iter_mut().take(n) {
                *v = Complex64::new(self.f64()?, self.f64()?);
            }
        }
        Ok(HermMatrix::from_entries(n, &e))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn decode_header(bytes: &[u8]) -> Result<(TorusGeometry, FieldKind, Reader<'_>)> {
    if bytes.len() < 11 || &bytes[..5] != MAGIC {
        return Err(Error::Format("missing TKRF1 header".into()));
    }
    let n = bytes[5] as usize;
    let size = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let geom = TorusGeometry::new(n, size)?;
    let kind = FieldKind::from_byte(bytes[10])?;
    Ok((geom, kind, Reader { bytes, pos: 11 }))
}

fn expect_kind(found: FieldKind, want: FieldKind) -> Result<()> {
    if found != want {
        return Err(Error::Format(format!("expected {want:?} snapshot, found {found:?}")));
    }
    Ok(())
}

pub fn decode_scalar(bytes: &[u8]) -> Result<ScalarField> {
    let (geom, kind, mut r) = decode_header(bytes)?;
    expect_kind(kind, FieldKind::Scalar)?;
    let values = (0..geom.len()).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    ScalarField::new(geom, values)
}

pub fn decode_complex(bytes: &[u8]) -> Result<ComplexField> {
    let (geom, kind, mut r) = decode_header(bytes)?;
    expect_kind(kind, FieldKind::Complex)?;
    let values = (0..geom.len())
        .map(|_| Ok(Complex64::new(r.f64()?, r.f64()?)))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    ComplexField::new(geom, values)
}

pub fn decode_hermitian(bytes: &[u8]) -> Result<HermitianField> {
    let (geom, kind, mut r) = decode_header(bytes)?;
    expect_kind(kind, FieldKind::Hermitian)?;
    let points = (0..geom.len())
        .map(|_| r.matrix(geom.n()))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    HermitianField::from_points(geom, points)
}

pub fn decode_metric(bytes: &[u8]) -> Result<KahlerMetric> {
    let (geom, kind, mut r) = decode_header(bytes)?;
    expect_kind(kind, FieldKind::Metric)?;
    let values = (0..geom.len()).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let h = r.matrix(geom.n())?;
    r.finish()?;
    KahlerMetric::from_normalized(h, ScalarField::new(geom, values)?)
}

/// Writes through a temporary sibling file and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_metric(path: &Path, m: &KahlerMetric) -> Result<()> {
    atomic_write(path, &encode_metric(m))
}

pub fn read_metric(path: &Path) -> Result<KahlerMetric> {
    decode_metric(&fs::read(path)?)
}

pub fn write_scalar(path: &Path, f: &ScalarField) -> Result<()> {
    atomic_write(path, &encode_scalar(f))
}

pub fn read_scalar(path: &Path) -> Result<ScalarField> {
    decode_scalar(&fs::read(path)?)
}

pub const DIAGNOSTICS_HEADER: &str = "t,dt,minR,min_dotphi,max_dotphi,mineig,volume";

pub fn diagnostics_csv(rows: &[StepDiagnostics]) -> String {
    let mut out = String::from(DIAGNOSTICS_HEADER);
    out.push('\n');
    for d in rows {
        out.push_str(&format!(
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            d.t, d.dt, d.min_r, d.min_dot_phi, d.max_dot_phi, d.min_eig, d.volume
        ));
    }
    out
}

pub fn parse_diagnostics_csv(text: &str) -> Result<Vec<StepDiagnostics>> {
    let mut lines = text.lines();
    if lines.next() != Some(DIAGNOSTICS_HEADER) {
        return Err(Error::Format("diagnostics header mismatch".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let v = line
                .split(',')
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Format(format!("bad number {s:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if v.len() != 7 {
                return Err(Error::Format(format!("expected 7 columns, got {}", v.len())));
            }
            Ok(StepDiagnostics {
                t: v[0],
                dt: v[1],
                min_r: v[2],
                min_dot_phi: v[3],
                max_dot_phi: v[4],
                min_eig: v[5],
                volume: v[6],
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceMeta {
    pub config: FlowConfig,
    pub n: usize,
    pub size: usize,
    pub background: HermMatrix,
    pub alpha: HermMatrix,
    pub initial: String,
    pub projection_u: String,
    pub snapshots: Vec<SnapshotMeta>,
    pub diagnostics: String,
    /// Free-form tag used by callers to detect stale traces (e.g. a config hash).
    #[serde(default)]
    pub tag: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotMeta {
    pub t: f64,
    pub metric: String,
    pub phi: String,
}

pub fn save_trace(trace: &FlowTrace, dir: &Path, tag: &str) -> Result<TraceMeta> {
    fs::create_dir_all(dir)?;
    let geom = trace.geometry();
    write_metric(&dir.join("initial.tkrf"), &trace.initial)?;
    write_scalar(&dir.join("projection_u.tkrf"), &trace.projection_u)?;
    let mut snapshots = Vec::new();
    for (k, snap) in trace.snapshots.iter().enumerate() {
        let metric = format!("snapshot_{k}.tkrf");
        let phi = format!("phi_{k}.tkrf");
        write_metric(&dir.join(&metric), &trace.metric_at(snap)?)?;
        write_scalar(&dir.join(&phi), &snap.phi)?;
        snapshots.push(SnapshotMeta {
            t: snap.t,
            metric,
            phi,
        });
    }
    atomic_write(
        &dir.join("diagnostics.csv"),
        diagnostics_csv(&trace.diagnostics).as_bytes(),
    )?;
    let meta = TraceMeta {
        config: trace.config.clone(),
        n: geom.n(),
        size: geom.size(),
        background: *trace.initial.background(),
        alpha: *trace.alpha.matrix(),
        initial: "initial.tkrf".into(),
        projection_u: "projection_u.tkrf".into(),
        snapshots,
        diagnostics: "diagnostics.csv".into(),
        tag: tag.to_string(),
    };
    atomic_write(&dir.join("meta.json"), serde_json::to_string_pretty(&meta)?.as_bytes())?;
    Ok(meta)
}

pub fn read_trace_meta(dir: &Path) -> Result<TraceMeta> {
    Ok(serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?)
}

pub fn load_trace(dir: &Path) -> Result<FlowTrace> {
    let meta = read_trace_meta(dir)?;
    let initial = read_metric(&dir.join(&meta.initial))?;
    let geom = initial.geometry();
    if geom.n() != meta.n || geom.size() != meta.size {
        return Err(Error::Format("trace geometry disagrees with meta.json".into()));
    }
    let projection_u = read_scalar(&dir.join(&meta.projection_u))?;
    let snapshots = meta
        .snapshots
        .iter()
        .map(|s| {
            Ok(Snapshot {
                t: s.t,
                phi: read_scalar(&dir.join(&s.phi))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let diagnostics =
        parse_diagnostics_csv(&fs::read_to_string(dir.join(&meta.diagnostics))?)?;
    Ok(FlowTrace {
        config: meta.config,
        initial,
        alpha: FlatMetric::new(meta.alpha)?,
        projection_u,
        snapshots,
        diagnostics,
    })
}
