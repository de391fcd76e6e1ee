//! Top-k flaw selection and softmax-correlation matching of the selected
//! points against every position of the other frame's feature grid.

use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flaw::DifferenceMapPair;
use crate::tensor_io::{check_same_grid, FeatureMap, FlowField, Planar, Planes, ScalarMap};

/// Selected grid cells, stored in increasing row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePointSet {
    indices: Vec<usize>,
    scores: Vec<f64>,
}

impl SparsePointSet {
    /// Builds a set from `(index, score)` pairs; indices must be unique and
    /// below `grid_len`.
    pub fn new(mut points: Vec<(usize, f64)>, grid_len: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySelection);
        }
        points.sort_by_key(|p| p.0);
        for pair in points.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::InvalidParameter(format!("duplicate index {}", pair[0].0)));
            }
        }
        if let Some(&(i, _)) = points.iter().find(|p| p.0 >= grid_len) {
            return Err(Error::InvalidParameter(format!("index {i} outside grid of {grid_len}")));
        }
        if let Some(index) = points.iter().position(|p| !p.1.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        let (indices, scores) = points.into_iter().unzip();
        Ok(Self { indices, scores })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }
}

/// A flow that is exactly zero off its support, plus the per-point match
/// confidence (peak softmax probability) carried along with it.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFlow {
    grid: FlowField,
    support: Option<SparsePointSet>,
    confidence: Vec<f64>,
}

impl SparseFlow {
    /// `values[j]` and `confidence[j]` belong to `support.indices()[j]`.
    pub fn new(
        height: usize,
        width: usize,
        support: SparsePointSet,
        values: &[(f64, f64)],
        confidence: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != support.len() || confidence.len() != support.len() {
            return Err(Error::DimensionMismatch("sparse flow values vs support".into()));
        }
        if support.indices().last().is_some_and(|&i| i >= height * width) {
            return Err(Error::InvalidParameter("support outside grid".into()));
        }
        let n = height * width;
        let (mut u, mut v) = (vec![0.0; n], vec![0.0; n]);
        for (&i, &(a, b)) in support.indices().iter().zip(values) {
            u[i] = a;
            v[i] = b;
        }
        Ok(Self { grid: FlowField::from_uv(height, width, u, v)?, support: Some(support), confidence })
    }

    /// A sparse flow with no support at all.
    pub fn empty(height: usize, width: usize) -> Result<Self> {
        Ok(Self { grid: FlowField::zeros(height, width)?, support: None, confidence: vec![] })
    }

    pub fn grid(&self) -> &FlowField {
        &self.grid
    }

    pub fn support(&self) -> Option<&SparsePointSet> {
        self.support.as_ref()
    }

    pub fn support_len(&self) -> usize {
        self.support.as_ref().map_or(0, SparsePointSet::len)
    }

    pub fn support_indices(&self) -> &[usize] {
        self.support.as_ref().map_or(&[], |s| s.indices())
    }

    pub fn scores(&self) -> &[f64] {
        self.support.as_ref().map_or(&[], |s| s.scores())
    }

    pub fn confidence(&self) -> &[f64] {
        &self.confidence
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    /// Support mask in row-major order.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.height() * self.width()];
        for &i in self.support_indices() {
            m[i] = true;
        }
        m
    }

    /// Scores scattered onto the grid (zero off support).
    pub fn score_map(&self) -> ScalarMap {
        self.scatter(self.scores())
    }

    /// Confidences scattered onto the grid (zero off support).
    pub fn confidence_map(&self) -> ScalarMap {
        self.scatter(&self.confidence)
    }

    fn scatter(&self, values: &[f64]) -> ScalarMap {
        let mut data = vec![0.0; self.height() * self.width()];
        for (&i, &v) in self.support_indices().iter().zip(values) {
            data[i] = v;
        }
        ScalarMap::from_raw(self.height(), self.width(), data)
    }

    /// Values at the support, in support order.
    pub fn values(&self) -> Vec<(f64, f64)> {
        self.support_indices().iter().map(|&i| self.grid.at(i)).collect()
    }

    /// Packs the flow as five planes `u, v, mask, score, confidence`, the
    /// on-disk layout for sparse flows.
    pub fn to_feature_map(&self, scale_exponent: u8) -> FeatureMap {
        let mask: Vec<f64> = self.mask().into_iter().map(|m| if m { 1.0 } else { 0.0 }).collect();
        let mut data = Vec::with_capacity(5 * mask.len());
        data.extend_from_slice(self.grid.u());
        data.extend_from_slice(self.grid.v());
        data.extend_from_slice(&mask);
        data.extend_from_slice(self.score_map().values());
        data.extend_from_slice(self.confidence_map().values());
        FeatureMap::new(Planes::from_raw(5, self.height(), self.width(), data), scale_exponent)
    }

    /// Inverse of [`SparseFlow::to_feature_map`]; cells with mask above 0.5
    /// form the support.
    pub fn from_feature_map(map: &FeatureMap) -> Result<SparseFlow> {
        let p = map.planes();
        if p.channels() != 5 {
            return Err(Error::Malformed(format!("sparse flow needs 5 channels, found {}", p.channels())));
        }
        let (h, w) = (p.height(), p.width());
        let support: Vec<usize> = (0..h * w).filter(|&i| p.plane(2)[i] > 0.5).collect();
        if support.is_empty() {
            return SparseFlow::empty(h, w);
        }
        let points = support.iter().map(|&i| (i, p.plane(3)[i])).collect();
        let values: Vec<_> = support.iter().map(|&i| (p.plane(0)[i], p.plane(1)[i])).collect();
        let confidence = support.iter().map(|&i| p.plane(4)[i]).collect();
        SparseFlow::new(h, w, SparsePointSet::new(points, h * w)?, &values, confidence)
    }

    /// Keeps only the points whose confidence reaches `min_confidence`.
    /// Content without a counterpart in the other frame yields a diffuse
    /// similarity row and an arbitrary expected position; dropping those
    /// points keeps them from polluting neighbours during the shift.
    pub fn confident(&self, min_confidence: f64) -> Result<SparseFlow> {
        let (h, w) = (self.height(), self.width());
        let keep: Vec<usize> = (0..self.support_len()).filter(|&j| self.confidence[j] >= min_confidence).collect();
        if keep.is_empty() {
            return SparseFlow::empty(h, w);
        }
        let idx = self.support_indices();
        let points = keep.iter().map(|&j| (idx[j], self.scores()[j])).collect();
        let values: Vec<_> = keep.iter().map(|&j| self.grid.at(idx[j])).collect();
        let confidence = keep.iter().map(|&j| self.confidence[j]).collect();
        SparseFlow::new(h, w, SparsePointSet::new(points, h * w)?, &values, confidence)
    }
}

/// Descending by value, ascending by index on ties.
fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

/// The `k` cells with the largest values; ties go to the smaller index.
pub fn top_k(diff: &ScalarMap, k: usize) -> Result<SparsePointSet> {
    let n = diff.values().len();
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, max: n });
    }
    let mut cells: Vec<(usize, f64)> = diff.values().iter().copied().enumerate().collect();
    if k < n {
        cells.select_nth_unstable_by(k - 1, rank_order);
        cells.truncate(k);
    }
    SparsePointSet::new(cells, n)
}

/// `k` cells drawn uniformly without replacement (seeded), carrying their
/// `diff` values as scores.
pub fn random_points(diff: &ScalarMap, k: usize, seed: u64) -> Result<SparsePointSet> {
    let n = diff.values().len();
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, max: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = sample(&mut rng, n, k).into_iter().map(|i| (i, diff.values()[i])).collect();
    SparsePointSet::new(picked, n)
}

/// `(x, y)` of every cell in row-major order.
pub fn coordinate_map(height: usize, width: usize) -> Vec<(f64, f64)> {
    (0..height * width).map(|i| ((i % width) as f64, (i / width) as f64)).collect()
}

/// Softmax similarity row of one source descriptor against every target
/// position: `softmax(temperature * <a, A_q> / sqrt(C))`, accumulated in f64
/// with max subtraction.
pub fn similarity_row(src: &FeatureMap, dst: &FeatureMap, point: usize, temperature: f64) -> Vec<f64> {
    let (sp, dp) = (src.planes(), dst.planes());
    let n = dp.plane_len();
    let scale = temperature / (sp.channels() as f64).sqrt();
    let mut logits = vec![0.0; n];
    for c in 0..sp.channels() {
        let a = sp.plane(c)[point] * scale;
        if a == 0.0 {
            continue;
        }
        for (l, b) in logits.iter_mut().zip(dp.plane(c)) {
            *l += a * b;
        }
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    for l in logits.iter_mut() {
        *l /= total;
    }
    logits
}

fn check_features(src: &FeatureMap, dst: &FeatureMap) -> Result<()> {
    check_same_grid(src.planes(), dst.planes(), "feature maps")?;
    if src.channels() != dst.channels() {
        return Err(Error::DimensionMismatch(format!(
            "feature channels {} vs {}",
            src.channels(),
            dst.channels()
        )));
    }
    Ok(())
}

/// For each selected cell `p`, the expected matched coordinate
/// `sum_q s_q * B[q]` under its similarity row, minus `B[p]`. Off-support
/// cells stay exactly zero.
pub fn sparse_match(src: &FeatureMap, dst: &FeatureMap, points: &SparsePointSet, temperature: f64) -> Result<SparseFlow> {
    check_features(src, dst)?;
    if points.is_empty() {
        return Err(Error::EmptySelection);
    }
    let (h, w) = (src.height(), src.width());
    if points.indices().last().is_some_and(|&i| i >= h * w) {
        return Err(Error::DimensionMismatch("points index outside the feature grid".into()));
    }
    let coords = coordinate_map(h, w);
    let matched: Vec<((f64, f64), f64)> = points
        .indices()
        .par_iter()
        .map(|&p| {
            let row = similarity_row(src, dst, p, temperature);
            let (mut mx, mut my, mut peak) = (0.0, 0.0, 0.0f64);
            for (s, &(x, y)) in row.iter().zip(&coords) {
                mx += s * x;
                my += s * y;
                peak = peak.max(*s);
            }
            ((mx - coords[p].0, my - coords[p].1), peak)
        })
        .collect();
    let (values, confidence): (Vec<_>, Vec<_>) = matched.into_iter().unzip();
    SparseFlow::new(h, w, points.clone(), &values, confidence)
}

/// Point-selection policy for the matching stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    TopK,
    Random { seed: u64 },
}

/// `f_01` from the top cells of `D_0` matched into `A_1`, and `f_10` from
/// the top cells of `D_1` matched into `A_0`.
pub fn match_bidirectional(
    a0: &FeatureMap,
    a1: &FeatureMap,
    dmaps: &DifferenceMapPair,
    k: usize,
    temperature: f64,
) -> Result<(SparseFlow, SparseFlow)> {
    match_with_selection(a0, a1, dmaps, k, temperature, Selection::TopK)
}

pub fn match_with_selection(
    a0: &FeatureMap,
    a1: &FeatureMap,
    dmaps: &DifferenceMapPair,
    k: usize,
    temperature: f64,
    selection: Selection,
) -> Result<(SparseFlow, SparseFlow)> {
    check_features(a0, a1)?;
    check_same_grid(a0.planes(), dmaps.d0.planes(), "features vs difference maps")?;
    let pick = |d: &ScalarMap, salt: u64| match selection {
        Selection::TopK => top_k(d, k),
        Selection::Random { seed } => random_points(d, k, seed.wrapping_mul(2).wrapping_add(salt)),
    };
    let p0 = pick(&dmaps.d0, 0)?;
    let p1 = pick(&dmaps.d1, 1)?;
    Ok((sparse_match(a0, a1, &p0, temperature)?, sparse_match(a1, a0, &p1, temperature)?))
}
