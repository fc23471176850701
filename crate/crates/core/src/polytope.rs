//! Low-dimensional convex polytopes.
//!
//! [`Polytope`] is the H-representation `{x : H x <= k}`; [`VertexSet`] is
//! the convex hull of a finite point list and is used where only support
//! values are needed (disturbance sets). Operations are exact in one and two
//! dimensions. From three dimensions on, sums, hulls and non-invertible
//! images are outer approximations by supporting half-spaces on the
//! directions of [`template_directions`].

use nalgebra::{DMatrix, DVector};

use crate::solvers::{solve_lp, Problem, SolverError, Status};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PolytopeError {
    #[error("result is empty")]
    EmptyResult,
    #[error("set is unbounded in the requested direction")]
    Unbounded,
    #[error("dimension mismatch")]
    Dimension,
    #[error("invariant-set iteration did not converge within {0} steps")]
    NoConvergence(usize),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Relative slack used for membership and redundancy decisions.
pub const SET_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    pub h: DMatrix<f64>,
    pub k: DVector<f64>,
}

/// Unit directions `{-1,0,1}^d \ {0}` normalized; for `d <= 3` the
/// richer grid `{-2,..,2}^d` is used. Parallel duplicates are dropped.
pub fn template_directions(d: usize) -> Vec<DVector<f64>> {
    let r: i32 = if d <= 3 { 2 } else { 1 };
    let base = (2 * r + 1) as usize;
    let total = base.pow(d as u32);
    let mut out: Vec<DVector<f64>> = Vec::new();
    for code in 0..total {
        let mut c = code;
        let mut v = DVector::zeros(d);
        for i in 0..d {
            v[i] = (c % base) as f64 - r as f64;
            c /= base;
        }
        let norm = v.norm();
        if norm == 0.0 {
            continue;
        }
        v /= norm;
        if !out.iter().any(|u| (u - &v).amax() < 1e-12) {
            out.push(v);
        }
    }
    out
}

impl Polytope {
    pub fn new(h: DMatrix<f64>, k: DVector<f64>) -> Result<Self, PolytopeError> {
        if h.nrows() != k.len() {
            return Err(PolytopeError::Dimension);
        }
        Ok(Self { h, k })
    }

    pub fn dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn num_constraints(&self) -> usize {
        self.h.nrows()
    }

    /// Axis-aligned box `lower <= x <= upper`.
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Self {
        assert_eq!(lower.len(), upper.len());
        let d = lower.len();
        let mut h = DMatrix::zeros(2 * d, d);
        let mut k = DVector::zeros(2 * d);
        for i in 0..d {
            h[(2 * i, i)] = 1.0;
            k[2 * i] = upper[i];
            h[(2 * i + 1, i)] = -1.0;
            k[2 * i + 1] = -lower[i];
        }
        Self { h, k }
    }

    pub fn interval(lo: f64, hi: f64) -> Self {
        Self::from_box(&[lo], &[hi])
    }

    /// The single point `p`.
    pub fn point(p: &DVector<f64>) -> Self {
        let v: Vec<f64> = p.iter().copied().collect();
        Self::from_box(&v, &v)
    }

    /// Bounds of a one-dimensional polytope.
    pub fn as_interval(&self) -> Result<(f64, f64), PolytopeError> {
        if self.dim() != 1 {
            return Err(PolytopeError::Dimension);
        }
        let one = DVector::from_element(1, 1.0);
        Ok((-self.support(&(-&one))?, self.support(&one)?))
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.violation(x) <= SET_TOL * (1.0 + x.amax())
    }

    /// `max_i (H_i x - k_i)`, nonpositive inside.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        if self.h.nrows() == 0 {
            return f64::NEG_INFINITY;
        }
        (&self.h * x - &self.k).max()
    }

    fn lp(&self, dir: &DVector<f64>) -> Problem {
        let mut p = Problem::new(self.dim());
        p.cost = -dir;
        p.a_in = self.h.clone();
        p.b_in = self.k.clone();
        p
    }

    /// Maximizer of `dir' x` over the set.
    pub fn support_point(&self, dir: &DVector<f64>) -> Result<(f64, DVector<f64>), PolytopeError> {
        if dir.len() != self.dim() {
            return Err(PolytopeError::Dimension);
        }
        let s = solve_lp(&self.lp(dir))?;
        match s.status {
            Status::Optimal => Ok((-s.objective, s.x)),
            Status::Infeasible => Err(PolytopeError::EmptyResult),
            Status::Unbounded => Err(PolytopeError::Unbounded),
            Status::MaxIter => Err(PolytopeError::Solver(SolverError::NotConvex)),
        }
    }

    /// Support function `max {dir' x : x in P}`.
    pub fn support(&self, dir: &DVector<f64>) -> Result<f64, PolytopeError> {
        self.support_point(dir).map(|(v, _)| v)
    }

    pub fn is_empty(&self) -> Result<bool, PolytopeError> {
        let s = solve_lp(&self.lp(&DVector::zeros(self.dim())))?;
        Ok(s.status == Status::Infeasible)
    }

    /// `P ⊖ Q = {x : x + q in P for all q in Q}`.
    pub fn pontryagin_diff(&self, q: &Polytope) -> Result<Polytope, PolytopeError> {
        if q.dim() != self.dim() {
            return Err(PolytopeError::Dimension);
        }
        let mut k = self.k.clone();
        for i in 0..self.h.nrows() {
            k[i] -= q.support(&self.h.row(i).transpose())?;
        }
        let out = Polytope { h: self.h.clone(), k };
        if out.is_empty()? {
            return Err(PolytopeError::EmptyResult);
        }
        Ok(out)
    }

    /// `P ⊖ V` for a set known only by its support function.
    pub fn pontryagin_diff_vertices(&self, v: &VertexSet) -> Result<Polytope, PolytopeError> {
        if v.dim() != self.dim() {
            return Err(PolytopeError::Dimension);
        }
        let mut k = self.k.clone();
        for i in 0..self.h.nrows() {
            k[i] -= v.support(&self.h.row(i).transpose());
        }
        let out = Polytope { h: self.h.clone(), k };
        if out.is_empty()? {
            return Err(PolytopeError::EmptyResult);
        }
        Ok(out)
    }

    /// `λ P` for `λ >= 0` (`λ = 0` gives the origin).
    pub fn scale(&self, lambda: f64) -> Polytope {
        assert!(lambda >= 0.0, "scale factor must be nonnegative");
        if lambda == 0.0 {
            return Polytope::point(&DVector::zeros(self.dim()));
        }
        Polytope { h: self.h.clone(), k: &self.k * lambda }
    }

    /// `{M x : x in P}`.
    pub fn linear_image(&self, m: &DMatrix<f64>) -> Result<Polytope, PolytopeError> {
        if m.ncols() != self.dim() {
            return Err(PolytopeError::Dimension);
        }
        if m.is_square() {
            if let Some(inv) = m.clone().try_inverse() {
                return Ok(Polytope { h: &self.h * inv, k: self.k.clone() });
            }
        }
        let out_dim = m.nrows();
        let oracle = |v: &DVector<f64>| -> Result<(f64, DVector<f64>), PolytopeError> {
            let (h, x) = self.support_point(&(m.transpose() * v))?;
            Ok((h, m * x))
        };
        from_support_oracle(out_dim, oracle)
    }

    /// `P ⊕ Q`.
    pub fn minkowski_sum(&self, q: &Polytope) -> Result<Polytope, PolytopeError> {
        if q.dim() != self.dim() {
            return Err(PolytopeError::Dimension);
        }
        let oracle = |v: &DVector<f64>| -> Result<(f64, DVector<f64>), PolytopeError> {
            let (a, xa) = self.support_point(v)?;
            let (b, xb) = q.support_point(v)?;
            Ok((a + b, xa + xb))
        };
        from_support_oracle(self.dim(), oracle)
    }

    /// Drops rows implied by the others.
    pub fn remove_redundant(&self) -> Result<Polytope, PolytopeError> {
        let m = self.h.nrows();
        let mut keep: Vec<bool> = vec![true; m];
        for i in 0..m {
            // normalize for a scale-free comparison
            let ni = self.h.row(i).norm();
            if ni == 0.0 {
                if self.k[i] >= 0.0 {
                    keep[i] = false;
                }
                continue;
            }
            let rows: Vec<usize> = (0..m).filter(|&j| j != i && keep[j]).collect();
            let mut p = Problem::new(self.dim());
            p.cost = -self.h.row(i).transpose();
            let mut a = DMatrix::zeros(rows.len() + 1, self.dim());
            let mut b = DVector::zeros(rows.len() + 1);
            for (r, &j) in rows.iter().enumerate() {
                a.set_row(r, &self.h.row(j));
                b[r] = self.k[j];
            }
            a.set_row(rows.len(), &self.h.row(i));
            b[rows.len()] = self.k[i] + ni * (1.0 + self.k[i].abs());
            p.a_in = a;
            p.b_in = b;
            let s = solve_lp(&p)?;
            match s.status {
                Status::Optimal => {
                    if -s.objective <= self.k[i] + SET_TOL * ni * (1.0 + self.k[i].abs()) {
                        keep[i] = false;
                    }
                }
                Status::Infeasible => return Err(PolytopeError::EmptyResult),
                _ => {}
            }
        }
        let rows: Vec<usize> = (0..m).filter(|&i| keep[i]).collect();
        let h = DMatrix::from_fn(rows.len(), self.dim(), |r, c| self.h[(rows[r], c)]);
        let k = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.k[i]));
        Ok(Polytope { h, k })
    }

    /// Vertices by enumeration of active sets (`d <= 3`).
    pub fn vertices(&self) -> Result<Vec<DVector<f64>>, PolytopeError> {
        let d = self.dim();
        if d > 3 {
            return Err(PolytopeError::Dimension);
        }
        let m = self.h.nrows();
        let mut out: Vec<DVector<f64>> = Vec::new();
        let mut idx: Vec<usize> = (0..d).collect();
        if m < d {
            return Err(PolytopeError::Unbounded);
        }
        loop {
            let a = DMatrix::from_fn(d, d, |r, c| self.h[(idx[r], c)]);
            let b = DVector::from_iterator(d, idx.iter().map(|&i| self.k[i]));
            if let Some(x) = a.lu().solve(&b) {
                if x.iter().all(|v| v.is_finite())
                    && self.contains(&x)
                    && !out.iter().any(|y| (y - &x).amax() < 1e-9 * (1.0 + x.amax()))
                {
                    out.push(x);
                }
            }
            // next combination
            let mut i = d;
            loop {
                if i == 0 {
                    return Ok(out);
                }
                i -= 1;
                if idx[i] < m - d + i {
                    idx[i] += 1;
                    for j in i + 1..d {
                        idx[j] = idx[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }
}

/// Convex hull of a finite point set, represented by its points.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSet {
    pub points: Vec<DVector<f64>>,
}

impl VertexSet {
    pub fn new(points: Vec<DVector<f64>>) -> Self {
        assert!(!points.is_empty(), "vertex set needs at least one point");
        Self { points }
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn support(&self, dir: &DVector<f64>) -> f64 {
        self.points.iter().map(|p| p.dot(dir)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn linear_image(&self, m: &DMatrix<f64>) -> VertexSet {
        let mut pts: Vec<DVector<f64>> = Vec::new();
        for p in &self.points {
            let q = m * p;
            if !pts.iter().any(|r| (r - &q).amax() <= 1e-14 * (1.0 + q.amax())) {
                pts.push(q);
            }
        }
        VertexSet { points: pts }
    }

    pub fn scale(&self, lambda: f64) -> VertexSet {
        VertexSet { points: self.points.iter().map(|p| p * lambda).collect() }
    }

    pub fn neg(&self) -> VertexSet {
        self.scale(-1.0)
    }

    /// Pairwise sums; non-extreme points are pruned in one and two dimensions.
    pub fn minkowski_sum(&self, other: &VertexSet) -> VertexSet {
        let mut pts = Vec::with_capacity(self.points.len() * other.points.len());
        for a in &self.points {
            for b in &other.points {
                pts.push(a + b);
            }
        }
        VertexSet { points: prune(pts) }
    }

    /// Symmetric box hull `|x_i| <= max |p_i|`, useful as a simple bound.
    pub fn bounding_box(&self) -> (DVector<f64>, DVector<f64>) {
        let d = self.dim();
        let mut lo = DVector::from_element(d, f64::INFINITY);
        let mut hi = DVector::from_element(d, f64::NEG_INFINITY);
        for p in &self.points {
            for i in 0..d {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        (lo, hi)
    }

    pub fn to_polytope(&self) -> Polytope {
        convex_hull(&self.points)
    }
}

fn prune(pts: Vec<DVector<f64>>) -> Vec<DVector<f64>> {
    let d = pts[0].len();
    if d == 1 {
        let lo = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            return vec![DVector::from_element(1, lo)];
        }
        return vec![DVector::from_element(1, lo), DVector::from_element(1, hi)];
    }
    if d == 2 {
        let p2: Vec<[f64; 2]> = pts.iter().map(|p| [p[0], p[1]]).collect();
        return monotone_chain(&p2).into_iter().map(|p| DVector::from_vec(p.to_vec())).collect();
    }
    let mut out: Vec<DVector<f64>> = Vec::new();
    for p in pts {
        if !out.iter().any(|q| (q - &p).amax() <= 1e-14 * (1.0 + p.amax())) {
            out.push(p);
        }
    }
    out
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise hull without collinear points. Returns 1 or 2 points
/// for degenerate inputs.
fn monotone_chain(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut p: Vec<[f64; 2]> = points.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let scale = p.iter().flat_map(|q| q.iter()).fold(0.0f64, |m, v| m.max(v.abs())) + 1.0;
    let eps = 1e-12 * scale * scale;
    p.dedup_by(|a, b| (a[0] - b[0]).abs() <= 1e-12 * scale && (a[1] - b[1]).abs() <= 1e-12 * scale);
    if p.len() <= 2 {
        return p;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * p.len());
    for &q in &p {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= eps {
            hull.pop();
        }
        hull.push(q);
    }
    let lower_len = hull.len() + 1;
    for &q in p.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= eps {
            hull.pop();
        }
        hull.push(q);
    }
    hull.pop();
    hull
}

/// Builds a polytope from a support oracle returning `(h(v), argmax)`.
/// Exact for `d <= 2`; template outer approximation otherwise.
fn from_support_oracle<F>(d: usize, oracle: F) -> Result<Polytope, PolytopeError>
where
    F: Fn(&DVector<f64>) -> Result<(f64, DVector<f64>), PolytopeError>,
{
    match d {
        0 => Err(PolytopeError::Dimension),
        1 => {
            let one = DVector::from_element(1, 1.0);
            let hi = oracle(&one)?.0;
            let lo = -oracle(&(-&one))?.0;
            Ok(Polytope::interval(lo, hi))
        }
        2 => {
            // supporting lines sorted by angle; each row is exact, refinement
            // adds the normal of every chord joining consecutive support points
            // until each chord lies on one of the lines
            let query = |t: f64| -> Result<(f64, f64, [f64; 2]), PolytopeError> {
                let (h, x) = oracle(&DVector::from_vec(vec![t.cos(), t.sin()]))?;
                Ok((t, h, [x[0], x[1]]))
            };
            let mut lines: Vec<(f64, f64, [f64; 2])> = Vec::new();
            for i in 0..8 {
                lines.push(query(i as f64 * std::f64::consts::FRAC_PI_4)?);
            }
            let scale = lines.iter().map(|l| l.1.abs()).fold(0.0, f64::max) + 1.0;
            for _ in 0..200 {
                let mut added = Vec::new();
                let m = lines.len();
                for i in 0..m {
                    let (t0, _, x0) = lines[i];
                    let (mut t1, _, x1) = lines[(i + 1) % m];
                    if i + 1 == m {
                        t1 += std::f64::consts::TAU;
                    }
                    let e = [x1[0] - x0[0], x1[1] - x0[1]];
                    if e[0].hypot(e[1]) <= 1e-12 * scale || t1 - t0 <= 1e-9 {
                        continue;
                    }
                    let mut t = (-e[0]).atan2(e[1]);
                    while t <= t0 {
                        t += std::f64::consts::TAU;
                    }
                    if t >= t1 - 1e-9 || t - t0 <= 1e-9 {
                        continue;
                    }
                    added.push(query(t.rem_euclid(std::f64::consts::TAU))?);
                }
                if added.is_empty() {
                    break;
                }
                lines.extend(added);
                lines.sort_by(|a, b| a.0.total_cmp(&b.0));
            }
            let h = DMatrix::from_fn(lines.len(), 2, |r, c| if c == 0 { lines[r].0.cos() } else { lines[r].0.sin() });
            let k = DVector::from_iterator(lines.len(), lines.iter().map(|l| l.1));
            Polytope { h, k }.remove_redundant()
        }
        _ => {
            let dirs = template_directions(d);
            let mut h = DMatrix::zeros(dirs.len(), d);
            let mut k = DVector::zeros(dirs.len());
            for (i, v) in dirs.iter().enumerate() {
                h.set_row(i, &v.transpose());
                k[i] = oracle(v)?.0;
            }
            Ok(Polytope { h, k })
        }
    }
}

/// Convex hull of points (exact for `d <= 2`).
pub fn convex_hull(points: &[DVector<f64>]) -> Polytope {
    assert!(!points.is_empty(), "hull of an empty point set");
    let d = points[0].len();
    let oracle = |v: &DVector<f64>| -> Result<(f64, DVector<f64>), PolytopeError> {
        let mut best = 0;
        let mut val = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let s = p.dot(v);
            if s > val {
                val = s;
                best = i;
            }
        }
        Ok((val, points[best].clone()))
    };
    from_support_oracle(d, oracle).expect("point-set supports are finite")
}

pub fn minkowski_sum(p: &Polytope, q: &Polytope) -> Result<Polytope, PolytopeError> {
    p.minkowski_sum(q)
}

pub fn pontryagin_diff(p: &Polytope, q: &Polytope) -> Result<Polytope, PolytopeError> {
    p.pontryagin_diff(q)
}

/// Largest number of matrix powers tried before giving up on an RPI set.
pub const RPI_MAX_POWERS: usize = 10_000;

/// Largest template depth `p` (the set has up to `2 d (p + 1)` rows).
pub const RPI_MAX_DEPTH: usize = 400;

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Robust positively invariant outer approximation of the minimal RPI set of
/// `x+ = Φ x + w`, `w ∈ W`, with `0 ∈ W`.
///
/// The rows are `v' Φ^j` for `v = ±e_i` and `j = 0..=p`, with offsets equal
/// to the truncated support series `Σ_{i>=j} h_W((Φ^i)' v)` plus a margin
/// `κ <= ε`. `p` is chosen so that `κ = ε` is invariant by construction;
/// smaller margins are tried first and accepted only after exact LP
/// verification. In the base directions the result exceeds the minimal RPI
/// set by at most `ε` plus the series truncation error.
pub fn compute_rpi(phi: &DMatrix<f64>, w: &VertexSet, eps: f64) -> Result<Polytope, PolytopeError> {
    let d = phi.nrows();
    if phi.ncols() != d || w.dim() != d {
        return Err(PolytopeError::Dimension);
    }
    if w.points.iter().all(|p| p.amax() == 0.0) {
        return Ok(Polytope::point(&DVector::zeros(d)));
    }
    if !(eps > 0.0) || spectral_radius(phi) >= 1.0 {
        return Err(PolytopeError::NoConvergence(0));
    }
    let r_w = w.points.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let tail_tol = 1e-3 * eps;

    // powers until the geometric tail of the support series is negligible
    let mut powers = vec![DMatrix::identity(d, d)];
    let mut norms = vec![1.0];
    let block = loop {
        let next = phi * powers.last().unwrap();
        norms.push(next.norm());
        powers.push(next);
        if let Some(m) = norms.iter().position(|&n| n <= 0.5) {
            break m.max(1);
        }
        if powers.len() > RPI_MAX_POWERS {
            return Err(PolytopeError::NoConvergence(powers.len()));
        }
    };
    // Σ_{i>=s} |Φ^i| <= 2 Σ_{r<block} |Φ^{s+r}| once |Φ^block| <= 1/2
    let mut s = 0;
    loop {
        while powers.len() < s + block {
            let next = phi * powers.last().unwrap();
            norms.push(next.norm());
            powers.push(next);
        }
        let tail = 2.0 * r_w * norms[s..s + block].iter().sum::<f64>();
        if tail <= tail_tol {
            break;
        }
        s += 1;
        if s > RPI_MAX_POWERS {
            return Err(PolytopeError::NoConvergence(s));
        }
    }
    let tail = 2.0 * r_w * norms[s..s + block].iter().sum::<f64>();

    let base: Vec<DVector<f64>> = (0..2 * d)
        .map(|k| {
            let mut v = DVector::zeros(d);
            v[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
            v
        })
        .collect();
    let support_sum = |v: &DVector<f64>, from: usize, to: usize, powers: &[DMatrix<f64>]| -> f64 {
        (from..=to).map(|i| w.support(&(powers[i].transpose() * v))).sum()
    };
    let r_inf = base.iter().map(|v| support_sum(v, 0, s, &powers)).fold(0.0, f64::max) + tail;
    let rho_target = eps / (r_inf + eps);
    let mut p = 0;
    loop {
        while powers.len() < p + 2 + s {
            let next = phi * powers.last().unwrap();
            powers.push(next);
        }
        let rho = base.iter().map(|v| (powers[p + 1].transpose() * v).lp_norm(1)).fold(0.0, f64::max);
        if rho <= rho_target {
            break;
        }
        p += 1;
        if p > RPI_MAX_DEPTH {
            return Err(PolytopeError::NoConvergence(p));
        }
    }
    let last = p + s;
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut series: Vec<f64> = Vec::new();
    for v in &base {
        for j in 0..=p {
            rows.push(powers[j].transpose() * v);
            series.push(support_sum(v, j, last, &powers));
        }
    }
    let h = DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c]);
    for kappa in [tail, tail + 0.25 * eps, tail + 0.5 * eps, tail + eps] {
        let k = DVector::from_iterator(series.len(), series.iter().map(|c| c + kappa));
        let z = Polytope { h: h.clone(), k };
        if rpi_violation(&z, phi, w)? <= SET_TOL {
            return z.remove_redundant();
        }
    }
    Err(PolytopeError::NoConvergence(p))
}

/// Largest relative excess `max_l (h_Z(Φ' h_l) + h_W(h_l) - k_l) / (1 + |k_l|)`;
/// nonpositive iff `Φ Z ⊕ W ⊆ Z`.
pub fn rpi_violation(z: &Polytope, phi: &DMatrix<f64>, w: &VertexSet) -> Result<f64, PolytopeError> {
    let mut worst = f64::NEG_INFINITY;
    for l in 0..z.num_constraints() {
        let hl = z.h.row(l).transpose();
        let reach = z.support(&(phi.transpose() * &hl))? + w.support(&hl);
        worst = worst.max((reach - z.k[l]) / (1.0 + z.k[l].abs()));
    }
    Ok(worst)
}
