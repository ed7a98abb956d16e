//! Riemannian distances of grid metrics via shortest paths on a stencil graph.
//!
//! The line element is `ds² = 2 Re(g_{jk̄} dz^j dz̄^k)`, so the unit Hermitian
//! metric gives Euclidean lengths scaled by `√2`. Each grid point is joined to
//! the points at all coprime offsets in `[−r, r]^{2n}`; the edge weight is the
//! length of the straight segment with the metric frozen at its midpoint, read
//! from the metric resampled on the doubled grid.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{complex_hessian, TorusGeometry, MAX_AXES};
use crate::flow::FlowTrace;
use crate::geometry::{FlatMetric, HermitianField, KahlerMetric, EPS_POS};
use crate::herm::HermMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StencilConfig {
    pub radius: usize,
}

impl Default for StencilConfig {
    fn default() -> Self {
        StencilConfig { radius: 3 }
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Nonzero offsets in `[−r, r]^{dim}` whose entries have gcd 1, in lexicographic order.
pub fn stencil_offsets(dim: usize, radius: usize) -> Result<Vec<[i64; MAX_AXES]>> {
    if radius == 0 {
        return Err(Error::InvalidArgument("stencil radius must be at least 1".into()));
    }
    let r = radius as i64;
    let width = 2 * r + 1;
    let mut out = Vec::new();
    for flat in 0..width.pow(dim as u32) {
        let mut off = [0i64; MAX_AXES];
        let mut rem = flat;
        for a in (0..dim).rev() {
            off[a] = rem % width - r;
            rem /= width;
        }
        if off[..dim].iter().fold(0, |g, &v| gcd(g, v)) == 1 {
            out.push(off);
        }
    }
    Ok(out)
}

/// `√(2 Re Σ g_{jk̄} dz^j conj(dz^k))` for a real displacement in axis order.
pub fn segment_length(g: &HermMatrix, delta: &[f64]) -> f64 {
    let n = g.n();
    let dz: Vec<Complex64> = (0..n)
        .map(|j| Complex64::new(delta[2 * j], delta[2 * j + 1]))
        .collect();
    let mut acc = 0.0;
    for j in 0..n {
        for k in 0..n {
            acc += (g.get(j, k) * dz[j] * dz[k].conj()).re;
        }
    }
    (2.0 * acc).max(0.0).sqrt()
}

/// Stencil graph with a precomputed edge-weight table, shared read-only by queries.
pub struct DistanceGraph {
    geom: TorusGeometry,
    offsets: Vec<[i64; MAX_AXES]>,
    weights: Vec<f64>,
}

impl DistanceGraph {
    pub fn build(metric: &KahlerMetric, stencil: StencilConfig) -> Result<Self> {
        let geom = metric.geometry();
        metric.assemble().require_positive(EPS_POS)?;
        let fine_geom = TorusGeometry::new(geom.n(), 2 * geom.size())?;
        let fine_phi = metric.potential().resample(fine_geom.size())?;
        let fine = complex_hessian(&fine_phi)?.add_constant(metric.background());
        fine.require_positive(EPS_POS)?;
        Self::from_fine_coefficients(geom, &fine, stencil)
    }

    pub fn flat(geom: TorusGeometry, h: &FlatMetric, stencil: StencilConfig) -> Result<Self> {
        let fine_geom = TorusGeometry::new(geom.n(), 2 * geom.size())?;
        Self::from_fine_coefficients(geom, &h.as_field(fine_geom), stencil)
    }

    /// `fine` holds coefficients on the doubled grid, so every edge midpoint is a sample.
    pub fn from_fine_coefficients(
        geom: TorusGeometry,
        fine: &HermitianField,
        stencil: StencilConfig,
    ) -> Result<Self> {
        let fine_geom = fine.geometry();
        if fine_geom.n() != geom.n() || fine_geom.size() != 2 * geom.size() {
            return Err(Error::GeometryMismatch);
        }
        let dim = geom.dim();
        let offsets = stencil_offsets(dim, stencil.radius)?;
        let h = geom.spacing();
        let fine_n = fine_geom.size() as i64;
        let lengths: Vec<Vec<f64>> = offsets
            .iter()
            .map(|o| (0..dim).map(|a| o[a] as f64 * h).collect())
            .collect();
        let weights: Vec<f64> = (0..geom.len())
            .into_par_iter()
            .flat_map_iter(|node| {
                let m = geom.multi_index(node);
                let offsets = &offsets;
                let lengths = &lengths;
                (0..offsets.len()).map(move |e| {
                    let mut mid = [0usize; MAX_AXES];
                    for a in 0..dim {
                        mid[a] = (2 * m[a] as i64 + offsets[e][a]).rem_euclid(fine_n) as usize;
                    }
                    segment_length(&fine.at(fine_geom.flat_index(&mid[..dim])), &lengths[e])
                })
            })
            .collect();
        Ok(DistanceGraph { geom, offsets, weights })
    }

    pub fn geometry(&self) -> TorusGeometry {
        self.geom
    }

    fn neighbour(&self, node: usize, e: usize) -> usize {
        let dim = self.geom.dim();
        let n = self.geom.size() as i64;
        let m = self.geom.multi_index(node);
        let mut out = [0usize; MAX_AXES];
        for a in 0..dim {
            out[a] = (m[a] as i64 + self.offsets[e][a]).rem_euclid(n) as usize;
        }
        self.geom.flat_index(&out[..dim])
    }

    /// Label-setting shortest paths from `source`; ties broken by node index.
    pub fn shortest_from(&self, source: usize) -> Vec<f64> {
        let len = self.geom.len();
        let mut dist = vec![f64::INFINITY; len];
        let mut done = vec![false; len];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Label { d: 0.0, node: source });
        let degree = self.offsets.len();
        while let Some(Label { d, node }) = heap.pop() {
            if done[node] {
                continue;
            }
            done[node] = true;
            for e in 0..degree {
                let next = self.neighbour(node, e);
                let cand = d + self.weights[node * degree + e];
                if cand < dist[next] {
                    dist[next] = cand;
                    heap.push(Label { d: cand, node: next });
                }
            }
        }
        dist
    }

    pub fn distance(&self, x: usize, y: usize) -> f64 {
        if x == y {
            return 0.0;
        }
        self.shortest_from(x)[y]
    }

    /// Distances for many pairs, grouping by source.
    pub fn distances(&self, queries: &[(usize, usize)]) -> Vec<f64> {
        let mut sources: Vec<usize> = queries.iter().map(|q| q.0).collect();
        sources.sort_unstable();
        sources.dedup();
        let tables: Vec<(usize, Vec<f64>)> = sources
            .par_iter()
            .map(|&s| (s, self.shortest_from(s)))
            .collect();
        queries
            .iter()
            .map(|&(x, y)| {
                let row = tables.binary_search_by_key(&x, |t| t.0).expect("source table");
                tables[row].1[y]
            })
            .collect()
    }
}

#[derive(PartialEq)]
struct Label {
    d: f64,
    node: usize,
}

impl Eq for Label {}

impl Ord for Label {
    // min-heap on (distance, node index)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .d
            .total_cmp(&self.d)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn graph_distance(metric: &KahlerMetric, x: usize, y: usize, stencil: StencilConfig) -> Result<f64> {
    Ok(DistanceGraph::build(metric, stencil)?.distance(x, y))
}

/// Exact flat-torus distance: the displacement is reduced to `[−½, ½)` per axis,
/// then the shortest of its translates by `{−1, 0, 1}^{2n}` is taken.
pub fn flat_distance_exact(h: &FlatMetric, x: &[f64], y: &[f64]) -> f64 {
    let dim = 2 * h.n();
    let base: Vec<f64> = (0..dim)
        .map(|a| {
            let d = y[a] - x[a];
            d - (d + 0.5).floor()
        })
        .collect();
    let mut best = f64::INFINITY;
    let mut delta = vec![0.0; dim];
    for code in 0..3usize.pow(dim as u32) {
        let mut rem = code;
        for a in 0..dim {
            delta[a] = base[a] + (rem % 3) as f64 - 1.0;
            rem /= 3;
        }
        best = best.min(segment_length(h.matrix(), &delta));
    }
    best
}

/// `count` pairs of distinct grid points drawn deterministically from `seed`.
pub fn random_queries(geom: TorusGeometry, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = rng.gen_range(0..geom.len());
        let y = rng.gen_range(0..geom.len());
        if x != y {
            out.push((x, y));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub query: usize,
    pub t: f64,
    pub d0: f64,
    pub dt: f64,
    /// `√(L t)`.
    pub sqrt_lt: f64,
}

impl DistanceRow {
    /// `C√(Lt) − (d₀ − d_t)`.
    pub fn slack(&self, c: f64) -> f64 {
        c * self.sqrt_lt - (self.d0 - self.dt)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatComparisonRow {
    pub query: usize,
    pub d0: f64,
    pub d_flat: f64,
}

impl FlatComparisonRow {
    pub fn relative_deviation(&self) -> f64 {
        (self.d0 - self.d_flat).abs() / self.d_flat
    }
}

/// Measurements behind `d₀ ≤ d_t + C√(Lt)` for one trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceFragment {
    /// `sup_t t·max_x |Rm(ω(t))|` over all snapshots.
    pub l: f64,
    /// Smallest `C` making every row hold.
    pub c: f64,
    pub rows: Vec<DistanceRow>,
    pub flat: Vec<FlatComparisonRow>,
}

impl DistanceFragment {
    pub fn min_slack(&self, c: f64) -> f64 {
        self.rows
            .iter()
            .map(|r| r.slack(c))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_flat_deviation(&self) -> f64 {
        self.flat
            .iter()
            .map(FlatComparisonRow::relative_deviation)
            .fold(0.0, f64::max)
    }
}

/// Fits `C` from the rows; rows with `Lt = 0` impose no constraint on it.
pub fn fit_distance_constant(rows: &[DistanceRow]) -> f64 {
    rows.iter()
        .filter(|r| r.sqrt_lt > 0.0)
        .map(|r| (r.d0 - r.dt).max(0.0) / r.sqrt_lt)
        .fold(0.0, f64::max)
}

pub fn check_distance_estimate(
    trace: &FlowTrace,
    queries: &[(usize, usize)],
    times: &[f64],
    stencil: StencilConfig,
) -> Result<DistanceFragment> {
    let geom = trace.geometry();
    let snaps = times
        .iter()
        .map(|&t| trace.require_snapshot(t))
        .collect::<Result<Vec<_>>>()?;
    let mut l: f64 = 0.0;
    for snap in &trace.snapshots {
        let rm = trace.metric_at(snap)?.assemble().riemann_norm()?;
        l = l.max(snap.t * rm.max());
    }
    let d0 = DistanceGraph::build(&trace.initial, stencil)?.distances(queries);
    let mut rows = Vec::new();
    for snap in snaps {
        let dt = DistanceGraph::build(&trace.metric_at(snap)?, stencil)?.distances(queries);
        for (q, (&a, &b)) in d0.iter().zip(&dt).enumerate() {
            rows.push(DistanceRow {
                query: q,
                t: snap.t,
                d0: a,
                dt: b,
                sqrt_lt: (l * snap.t).sqrt(),
            });
        }
    }
    let flat = queries
        .iter()
        .zip(&d0)
        .enumerate()
        .map(|(q, (&(x, y), &d))| FlatComparisonRow {
            query: q,
            d0: d,
            d_flat: flat_distance_exact(&trace.alpha, &geom.point(x), &geom.point(y)),
        })
        .collect();
    let c = fit_distance_constant(&rows);
    Ok(DistanceFragment { l, c, rows, flat })
}
