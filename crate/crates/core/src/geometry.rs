//! Sampling, grouping, normalizing and interpolating point sets, plus
//! whole-cloud canonicalization and mesh surface sampling.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub type Point = [f64; 3];

/// Above this many reference points `knn` switches to a uniform grid.
pub const KNN_GRID_THRESHOLD: usize = 4096;

/// Distance decay used when interpolating features between levels.
pub const INTERPOLATION_BETA: f64 = 16.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Data("point cloud must contain at least one point".into()));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Data(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Row-major `N × 3` coordinates.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Self {
        Self {
            points: self.points.iter().map(|&p| f(p)).collect(),
        }
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            points: order.iter().map(|&i| self.points[i]).collect(),
        }
    }
}

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dist2(a: Point, b: Point) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn lex_cmp(a: &Point, b: &Point) -> Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

/// Centers the axis-aligned bounding box at the origin and scales so the
/// farthest point has norm 1. A cloud with all points coincident maps to the
/// origin with scale 1.
pub fn unit_sphere_normalize(cloud: &PointCloud) -> PointCloud {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in cloud.points() {
        for c in 0..3 {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
    let centered: Vec<Point> = cloud.points().iter().map(|&p| sub(p, center)).collect();
    let radius = centered.iter().map(|&p| norm(p)).fold(0.0, f64::max);
    let scale = if radius > 0.0 { 1.0 / radius } else { 1.0 };
    PointCloud {
        points: centered
            .into_iter()
            .map(|p| [p[0] * scale, p[1] * scale, p[2] * scale])
            .collect(),
    }
}

/// Centroid computed over lexicographically sorted points, so the result is
/// bit-identical for any ordering of the input.
fn canonical_centroid(points: &[Point]) -> Point {
    let mut sorted = points.to_vec();
    sorted.sort_by(lex_cmp);
    let mut c = [0.0; 3];
    for p in &sorted {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let n = points.len() as f64;
    [c[0] / n, c[1] / n, c[2] / n]
}

/// `true` if candidate `i` (score `si`) beats `j` (score `sj`): higher score,
/// then lexicographically smaller coordinates, then lower index.
fn beats(points: &[Point], i: usize, si: f64, j: usize, sj: f64) -> bool {
    match si.total_cmp(&sj) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match lex_cmp(&points[i], &points[j]) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => i < j,
        },
    }
}

/// Greedy max-min selection of `m` indices.
///
/// The first pick is the point farthest from the centroid; each later pick
/// maximizes the distance to the already selected set. Ties prefer the
/// lexicographically smaller point, then the lower index.
pub fn farthest_point_sampling(points: &[Point], m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > points.len() {
        return Err(Error::Parameter(format!(
            "cannot sample {m} of {} points",
            points.len()
        )));
    }
    let centroid = canonical_centroid(points);
    let mut best = 0;
    let mut best_score = dist2(points[0], centroid);
    for (i, &p) in points.iter().enumerate().skip(1) {
        let s = dist2(p, centroid);
        if beats(points, i, s, best, best_score) {
            best = i;
            best_score = s;
        }
    }
    let mut selected = Vec::with_capacity(m);
    let mut taken = vec![false; points.len()];
    let mut min_d = vec![f64::INFINITY; points.len()];
    let mut current = best;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == m {
            break;
        }
        let c = points[current];
        let mut next = usize::MAX;
        let mut next_score = f64::NEG_INFINITY;
        for (i, &p) in points.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = dist2(p, c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if next == usize::MAX || beats(points, i, min_d[i], next, next_score) {
                next = i;
                next_score = min_d[i];
            }
        }
        current = next;
    }
    Ok(selected)
}

/// The `k` nearest references of every query, ascending by distance with
/// ties broken by lower reference index. Returns flat `Q × k` indices and
/// Euclidean distances.
pub fn knn(queries: &[Point], refs: &[Point], k: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    if k == 0 || k > refs.len() {
        return Err(Error::Parameter(format!(
            "cannot take {k} neighbors from {} reference points",
            refs.len()
        )));
    }
    if refs.len() > KNN_GRID_THRESHOLD {
        Ok(knn_grid(queries, refs, k))
    } else {
        Ok(knn_scan(queries, refs, k))
    }
}

/// Keeps the `k` best `(squared distance, index)` pairs in ascending order.
struct TopK {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn worst(&self) -> Option<f64> {
        (self.items.len() == self.k).then(|| self.items[self.k - 1].0)
    }

    fn offer(&mut self, d: f64, i: usize) {
        if self.items.len() == self.k {
            let (wd, wi) = self.items[self.k - 1];
            if d > wd || (d == wd && i > wi) {
                return;
            }
        }
        let pos = self.items.partition_point(|&(ed, ei)| ed < d || (ed == d && ei < i));
        self.items.insert(pos, (d, i));
        self.items.truncate(self.k);
    }
}

fn knn_scan(queries: &[Point], refs: &[Point], k: usize) -> (Vec<usize>, Vec<f64>) {
    let mut idx = Vec::with_capacity(queries.len() * k);
    let mut dist = Vec::with_capacity(queries.len() * k);
    for &q in queries {
        let mut top = TopK::new(k);
        for (i, &r) in refs.iter().enumerate() {
            top.offer(dist2(q, r), i);
        }
        for (d, i) in top.items {
            idx.push(i);
            dist.push(d.sqrt());
        }
    }
    (idx, dist)
}

/// Exact kNN over a uniform grid: rings of cells are visited outward until
/// the current k-th distance is strictly below the distance to any
/// unvisited cell.
fn knn_grid(queries: &[Point], refs: &[Point], k: usize) -> (Vec<usize>, Vec<f64>) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in refs {
        for c in 0..3 {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    let extent = (0..3).map(|c| hi[c] - lo[c]).fold(0.0, f64::max).max(1e-12);
    let per_axis = ((refs.len() as f64 / 4.0).cbrt().ceil() as usize).clamp(1, 256);
    let cell = extent / per_axis as f64;
    let dims = [
        (((hi[0] - lo[0]) / cell) as usize + 1).min(per_axis + 1),
        (((hi[1] - lo[1]) / cell) as usize + 1).min(per_axis + 1),
        (((hi[2] - lo[2]) / cell) as usize + 1).min(per_axis + 1),
    ];
    let cell_of = |p: Point| -> [i64; 3] {
        let mut c = [0i64; 3];
        for a in 0..3 {
            c[a] = (((p[a] - lo[a]) / cell).floor() as i64).clamp(0, dims[a] as i64 - 1);
        }
        c
    };
    let flat = |c: [i64; 3]| (c[0] as usize * dims[1] + c[1] as usize) * dims[2] + c[2] as usize;
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
    for (i, &p) in refs.iter().enumerate() {
        buckets[flat(cell_of(p))].push(i);
    }
    let max_ring = *dims.iter().max().unwrap() as i64;

    let mut idx = Vec::with_capacity(queries.len() * k);
    let mut dist = Vec::with_capacity(queries.len() * k);
    for &q in queries {
        let home = cell_of(q);
        let mut top = TopK::new(k);
        let mut ring = 0i64;
        loop {
            for x in home[0] - ring..=home[0] + ring {
                for y in home[1] - ring..=home[1] + ring {
                    for z in home[2] - ring..=home[2] + ring {
                        let on_shell =
                            (x - home[0]).abs() == ring || (y - home[1]).abs() == ring || (z - home[2]).abs() == ring;
                        if !on_shell {
                            continue;
                        }
                        let c = [x, y, z];
                        if (0..3).any(|a| c[a] < 0 || c[a] >= dims[a] as i64) {
                            continue;
                        }
                        for &i in &buckets[flat(c)] {
                            top.offer(dist2(q, refs[i]), i);
                        }
                    }
                }
            }
            if ring >= max_ring {
                break;
            }
            // Every unvisited cell lies beyond this distance from q.
            let mut bound = f64::INFINITY;
            for a in 0..3 {
                let low_edge = lo[a] + (home[a] - ring) as f64 * cell;
                let high_edge = lo[a] + (home[a] + ring + 1) as f64 * cell;
                bound = bound.min(q[a] - low_edge).min(high_edge - q[a]);
            }
            let bound = bound.max(0.0);
            if let Some(w) = top.worst() {
                if w < bound * bound {
                    break;
                }
            }
            ring += 1;
        }
        for (d, i) in top.items {
            idx.push(i);
            dist.push(d.sqrt());
        }
    }
    (idx, dist)
}

/// Probe-centered neighborhoods with scaled relative offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborhoodBatch {
    pub probe_indices: Vec<usize>,
    /// `M × group_size` indices; each group starts with its probe.
    pub neighbor_indices: Vec<usize>,
    /// `M × group_size × 3` offsets `(neighbor − probe) · level_scale`.
    pub offsets: Vec<f64>,
    pub group_size: usize,
    pub level_scale: f64,
}

impl NeighborhoodBatch {
    pub fn num_probes(&self) -> usize {
        self.probe_indices.len()
    }

    pub fn group(&self, g: usize) -> &[usize] {
        &self.neighbor_indices[g * self.group_size..(g + 1) * self.group_size]
    }
}

/// Gathers each probe together with its `k` nearest other points and
/// expresses them relative to the probe.
pub fn group_normalize(points: &[Point], probes: &[usize], k: usize, level_scale: f64) -> Result<NeighborhoodBatch> {
    if k + 1 > points.len() {
        return Err(Error::Parameter(format!(
            "neighborhood of {} needs more than {} points",
            k + 1,
            points.len()
        )));
    }
    if let Some(&bad) = probes.iter().find(|&&p| p >= points.len()) {
        return Err(Error::Parameter(format!("probe index {bad} out of range")));
    }
    let probe_points: Vec<Point> = probes.iter().map(|&i| points[i]).collect();
    let (nn, _) = knn(&probe_points, points, k + 1)?;
    let group_size = k + 1;
    let mut neighbor_indices = Vec::with_capacity(probes.len() * group_size);
    let mut offsets = Vec::with_capacity(probes.len() * group_size * 3);
    for (g, &probe) in probes.iter().enumerate() {
        let found = &nn[g * group_size..(g + 1) * group_size];
        neighbor_indices.push(probe);
        neighbor_indices.extend(found.iter().copied().filter(|&i| i != probe).take(k));
        let center = points[probe];
        for &i in &neighbor_indices[g * group_size..] {
            let d = sub(points[i], center);
            offsets.extend(d.iter().map(|v| v * level_scale));
        }
    }
    Ok(NeighborhoodBatch {
        probe_indices: probes.to_vec(),
        neighbor_indices,
        offsets,
        group_size,
        level_scale,
    })
}

/// Neighbor indices (`fine × count`, into `coarse`) and normalized
/// `exp(−β·d)` weights for propagating features from `coarse` to `fine`.
pub fn interpolation_weights(
    coarse: &[Point],
    fine: &[Point],
    count: usize,
    beta: f64,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if coarse.is_empty() {
        return Err(Error::Precondition("interpolation from an empty set".into()));
    }
    let (idx, dist) = knn(fine, coarse, count)?;
    let mut weights = Vec::with_capacity(dist.len());
    for row in dist.chunks(count) {
        // Shifting by the nearest distance leaves the normalized weights unchanged.
        let d0 = row[0];
        let w: Vec<f64> = row.iter().map(|d| (-beta * (d - d0)).exp()).collect();
        let total: f64 = w.iter().sum();
        weights.extend(w.into_iter().map(|v| v / total));
    }
    Ok((idx, weights))
}

/// Features of `fine` points as the convex combination of their nearest
/// coarse neighbors' features (`coarse_features` is `|coarse| × width`).
pub fn interpolate(coarse: &[Point], coarse_features: &[f64], fine: &[Point], count: usize) -> Result<Vec<f64>> {
    if coarse.is_empty() || !coarse_features.len().is_multiple_of(coarse.len()) {
        return Err(Error::Precondition("coarse features do not match coarse points".into()));
    }
    let width = coarse_features.len() / coarse.len();
    let (idx, w) = interpolation_weights(coarse, fine, count, INTERPOLATION_BETA)?;
    let mut out = vec![0.0; fine.len() * width];
    for (f, row) in out.chunks_mut(width).enumerate() {
        for j in f * count..(f + 1) * count {
            let src = &coarse_features[idx[j] * width..(idx[j] + 1) * width];
            for (o, s) in row.iter_mut().zip(src) {
                *o += w[j] * s;
            }
        }
    }
    Ok(out)
}

/// Area-weighted triangle choice followed by uniform barycentric sampling.
pub fn sample_mesh_surface(
    vertices: &[Point],
    faces: &[[usize; 3]],
    n: usize,
    rng: &mut SeededRng,
) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::Parameter("sample count must be positive".into()));
    }
    let mut cumulative = Vec::with_capacity(faces.len());
    let mut total = 0.0;
    for (fi, f) in faces.iter().enumerate() {
        if f.iter().any(|&v| v >= vertices.len()) {
            return Err(Error::Data(format!("face {fi} references a missing vertex")));
        }
        total += triangle_area(vertices[f[0]], vertices[f[1]], vertices[f[2]]);
        cumulative.push(total);
    }
    if total.is_nan() || total <= 0.0 {
        return Err(Error::Data("mesh has zero surface area".into()));
    }
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.uniform() * total;
        let fi = cumulative.partition_point(|&c| c <= target).min(faces.len() - 1);
        let [a, b, c] = faces[fi].map(|v| vertices[v]);
        let (mut u, mut v) = (rng.uniform(), rng.uniform());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let ab = sub(b, a);
        let ac = sub(c, a);
        points.push([
            a[0] + u * ab[0] + v * ac[0],
            a[1] + u * ab[1] + v * ac[1],
            a[2] + u * ab[2] + v * ac[2],
        ]);
    }
    PointCloud::new(points)
}

pub fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn triangle_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * norm(cross(sub(b, a), sub(c, a)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_points(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = SeededRng::new(seed);
        (0..n)
            .map(|_| {
                [
                    rng.uniform_range(-1.0, 1.0),
                    rng.uniform_range(-1.0, 1.0),
                    rng.uniform_range(-1.0, 1.0),
                ]
            })
            .collect()
    }

    #[test]
    fn normalize_scaled_cube_corners_to_unit_norm() {
        let mut pts = Vec::new();
        for &x in &[-5.0, 5.0] {
            for &y in &[-5.0, 5.0] {
                for &z in &[-5.0, 5.0] {
                    pts.push([x, y, z]);
                }
            }
        }
        let out = unit_sphere_normalize(&PointCloud::new(pts).unwrap());
        for p in out.points() {
            assert!((norm(*p) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_is_idempotent() {
        let cloud = PointCloud::new(random_points(50, 1)).unwrap();
        let once = unit_sphere_normalize(&cloud);
        let twice = unit_sphere_normalize(&once);
        for (a, b) in once.points().iter().zip(twice.points()) {
            assert!(dist2(*a, *b).sqrt() < 1e-12);
        }
    }

    #[test]
    fn normalize_single_point_maps_to_origin() {
        let out = unit_sphere_normalize(&PointCloud::new(vec![[3.0, -2.0, 7.0]]).unwrap());
        assert_eq!(out.points(), &[[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn fps_picks_obvious_extremes() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.1, 0.0, 0.0]];
        assert_eq!(farthest_point_sampling(&pts, 2).unwrap(), vec![1, 0]);
    }

    #[test]
    fn fps_full_selection_is_a_permutation() {
        let pts = random_points(20, 2);
        let mut sel = farthest_point_sampling(&pts, 20).unwrap();
        assert_eq!(sel, farthest_point_sampling(&pts, 20).unwrap());
        sel.sort_unstable();
        assert_eq!(sel, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn fps_rejects_oversampling() {
        assert!(matches!(
            farthest_point_sampling(&[[0.0; 3]], 2),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn knn_self_query_has_zero_distance() {
        let pts = random_points(10, 3);
        let (idx, d) = knn(&pts[4..5], &pts, 1).unwrap();
        assert_eq!(idx, vec![4]);
        assert_eq!(d, vec![0.0]);
    }

    #[test]
    fn knn_collinear_example() {
        let refs = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let (idx, _) = knn(&[[0.6, 0.0, 0.0]], &refs, 2).unwrap();
        assert_eq!(idx, vec![1, 0]);
    }

    #[test]
    fn knn_ties_prefer_lower_index() {
        let refs = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let (idx, _) = knn(&[[0.0; 3]], &refs, 2).unwrap();
        assert_eq!(idx, vec![0, 1]);
    }

    #[test]
    fn knn_rejects_k_above_reference_count() {
        assert!(knn(&[[0.0; 3]], &[[0.0; 3]], 2).is_err());
    }

    #[test]
    fn grid_knn_matches_scan() {
        let refs = random_points(5000, 4);
        let queries = random_points(64, 5);
        assert_eq!(knn_grid(&queries, &refs, 9), knn_scan(&queries, &refs, 9));
    }

    #[test]
    fn group_offsets_start_with_zero_probe_row() {
        let pts = random_points(30, 6);
        let nb = group_normalize(&pts, &[3, 17], 5, 2.0).unwrap();
        assert_eq!(nb.group_size, 6);
        for g in 0..2 {
            assert_eq!(nb.group(g)[0], nb.probe_indices[g]);
            assert_eq!(&nb.offsets[g * 18..g * 18 + 3], &[0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn group_offset_magnitude_equals_distance_at_unit_scale() {
        let pts = [[0.0, 0.0, 0.0], [0.0, 3.0, 4.0]];
        let nb = group_normalize(&pts, &[0], 1, 1.0).unwrap();
        let o = &nb.offsets[3..6];
        assert_eq!(norm([o[0], o[1], o[2]]), 5.0);
    }

    #[test]
    fn group_includes_probe_even_with_duplicates() {
        let pts = [[0.0; 3], [0.0; 3], [0.0; 3], [1.0, 0.0, 0.0]];
        let nb = group_normalize(&pts, &[2], 1, 1.0).unwrap();
        assert_eq!(nb.group(0), &[2, 0]);
    }

    #[test]
    fn interpolate_coincident_point_copies_feature() {
        let coarse = [[0.0; 3], [1.0, 0.0, 0.0]];
        let feats = [1.0, 2.0, 3.0, 4.0];
        let out = interpolate(&coarse, &feats, &[[1.0, 0.0, 0.0]], 1).unwrap();
        assert_eq!(out, vec![3.0, 4.0]);
    }

    #[test]
    fn interpolate_constant_features_stay_constant() {
        let coarse = random_points(8, 7);
        let feats: Vec<f64> = std::iter::repeat_n([0.25, -1.5], 8).flatten().collect();
        let out = interpolate(&coarse, &feats, &random_points(5, 8), 3).unwrap();
        for row in out.chunks(2) {
            assert!((row[0] - 0.25).abs() < 1e-15 && (row[1] + 1.5).abs() < 1e-15);
        }
    }

    #[test]
    fn interpolate_two_neighbors_matches_direct_weights() {
        let coarse = [[0.0; 3], [0.5, 0.0, 0.0]];
        let feats = [1.0, 0.0];
        let fine = [[0.1, 0.0, 0.0]];
        let out = interpolate(&coarse, &feats, &fine, 2).unwrap();
        let (w1, w2) = ((-16.0f64 * 0.1).exp(), (-16.0f64 * 0.4).exp());
        assert!((out[0] - w1 / (w1 + w2)).abs() < 1e-14);
    }

    #[test]
    fn mesh_sampling_stays_in_triangle_plane() {
        let v = [[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0]];
        let mut rng = SeededRng::new(9);
        let cloud = sample_mesh_surface(&v, &[[0, 1, 2]], 500, &mut rng).unwrap();
        for p in cloud.points() {
            assert!((p[2] - 1.0).abs() < 1e-9);
            assert!(p[0] >= 0.0 && p[1] >= 0.0 && p[0] + p[1] <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn mesh_sampling_rejects_zero_area() {
        let v = [[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let mut rng = SeededRng::new(0);
        assert!(matches!(
            sample_mesh_surface(&v, &[[0, 1, 2]], 10, &mut rng),
            Err(Error::Data(_))
        ));
    }
}
