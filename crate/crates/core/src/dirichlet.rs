//! Dirichlet fundamental polygons.
//!
//! The polygon centered at `w` is the intersection of the half-planes
//! `{ z : d(z, w) <= d(z, γw) }`. In the hyperboloid model each of these is
//! `<X, γW - W> >= 0`, a linear condition, so clipping is done on a convex
//! polygon in the Klein disk after moving `w` to `i`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fuchsian::{elements_within, GroupPresentation, MatrixIndex};
use crate::hyperbolic::{classify, distance, minkowski, IsometryClass, MoebiusElement, UHPoint};
use crate::io::{ser_f17, F17};

/// Vertices closer than this are the same vertex.
pub const VERTEX_TOL: f64 = 1e-8;

/// One side, from `start` to `end` in counterclockwise order.
#[derive(Debug, Clone, Serialize)]
pub struct Side {
    pub start: UHPoint,
    pub end: UHPoint,
    /// The side lies on the bisector of `w` and `neighbor · w`.
    pub neighbor: MoebiusElement,
    /// Maps this side onto side `partner`.
    pub pairing: MoebiusElement,
    pub partner: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DirichletPolygon {
    pub center: UHPoint,
    pub vertices: Vec<UHPoint>,
    /// Whether each vertex is the fixed point of an elliptic element.
    pub cone_vertex: Vec<bool>,
    pub sides: Vec<Side>,
    #[serde(serialize_with = "ser_f17")]
    pub ball_radius_used: f64,
    #[serde(skip)]
    pub generators: Vec<MoebiusElement>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiameterEstimate {
    #[serde(rename = "D", serialize_with = "ser_f17")]
    pub d: f64,
    pub method: &'static str,
}

fn cosh_dist(z: UHPoint, w: UHPoint) -> f64 {
    let dx = z.x - w.x;
    let dy = z.y - w.y;
    1.0 + (dx * dx + dy * dy) / (2.0 * z.y * w.y)
}

/// `z ↦ (z - x)/y`, sending `w = x + iy` to `i`.
fn to_i(w: UHPoint) -> MoebiusElement {
    let s = w.y.sqrt();
    MoebiusElement {
        a: 1.0 / s,
        b: -w.x / s,
        c: 0.0,
        d: s,
    }
}

fn klein_to_point(k: (f64, f64)) -> UHPoint {
    let x0 = 1.0 / (1.0 - k.0 * k.0 - k.1 * k.1).sqrt();
    UHPoint::from_hyperboloid([x0, k.0 * x0, k.1 * x0])
}

// Convex polygon in the Klein disk; `labels[k]` names the constraint that
// produced the edge from vertex k to k+1 (None for the initial boundary).
struct KleinPolygon {
    pts: Vec<(f64, f64)>,
    labels: Vec<Option<usize>>,
}

const INITIAL_SIDES: usize = 64;
const INITIAL_RADIUS: f64 = 1.0 - 1e-6;
const CLIP_EPS: f64 = 1e-14;
const MERGE_EPS: f64 = 1e-11;

impl KleinPolygon {
    fn initial() -> Self {
        let pts = (0..INITIAL_SIDES)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / INITIAL_SIDES as f64;
                (INITIAL_RADIUS * a.cos(), INITIAL_RADIUS * a.sin())
            })
            .collect();
        KleinPolygon {
            pts,
            labels: vec![None; INITIAL_SIDES],
        }
    }

    // Keeps n0 - n1 u - n2 v >= 0.
    fn clip(&mut self, n: [f64; 3], label: usize) {
        let scale = n[0].abs() + n[1].abs() + n[2].abs();
        let f = |p: (f64, f64)| n[0] - n[1] * p.0 - n[2] * p.1;
        let vals: Vec<f64> = self.pts.iter().map(|&p| f(p)).collect();
        if vals.iter().all(|&v| v >= -CLIP_EPS * scale) {
            return;
        }
        let m = self.pts.len();
        let mut pts = Vec::with_capacity(m + 1);
        let mut labels = Vec::with_capacity(m + 1);
        for k in 0..m {
            let j = (k + 1) % m;
            let (p, q) = (self.pts[k], self.pts[j]);
            let (fp, fq) = (vals[k], vals[j]);
            let pin = fp >= -CLIP_EPS * scale;
            let qin = fq >= -CLIP_EPS * scale;
            let cross = || {
                let s = fp / (fp - fq);
                (p.0 + s * (q.0 - p.0), p.1 + s * (q.1 - p.1))
            };
            match (pin, qin) {
                (true, true) => {
                    pts.push(p);
                    labels.push(self.labels[k]);
                }
                (true, false) => {
                    pts.push(p);
                    labels.push(self.labels[k]);
                    if fp > 0.0 {
                        pts.push(cross());
                        labels.push(Some(label));
                    } else {
                        // p is on the line: the new edge starts at p
                        *labels.last_mut().unwrap() = Some(label);
                    }
                }
                (false, true) => {
                    if fq > 0.0 {
                        pts.push(cross());
                        labels.push(self.labels[k]);
                    }
                }
                (false, false) => {}
            }
        }
        self.pts = pts;
        self.labels = labels;
        self.merge_close();
    }

    fn merge_close(&mut self) {
        let mut k = 0;
        while self.pts.len() > 2 && k < self.pts.len() {
            let j = (k + 1) % self.pts.len();
            let (p, q) = (self.pts[k], self.pts[j]);
            if ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt() < MERGE_EPS {
                // edge k is degenerate: drop vertex j, keep its outgoing label
                self.labels[k] = self.labels[j];
                self.pts.remove(j);
                self.labels.remove(j);
                if j < k {
                    k -= 1;
                }
            } else {
                k += 1;
            }
        }
    }
}

// Sides before elliptic splitting: (start, end, neighbor element).
struct RawPolygon {
    sides: Vec<(UHPoint, UHPoint, MoebiusElement)>,
    elliptic_fixed: Vec<(UHPoint, MoebiusElement)>,
}

fn max_generator_displacement(g: &GroupPresentation, w: UHPoint) -> f64 {
    g.generators
        .iter()
        .map(|m| distance(w, m.apply(w)))
        .fold(0.0, f64::max)
}

fn clip_at_radius(g: &GroupPresentation, w: UHPoint, radius: f64) -> Result<RawPolygon> {
    let prune = radius + max_generator_displacement(g, w);
    let mut elements: Vec<(f64, MoebiusElement)> = Vec::new();
    let mut elliptic_fixed = Vec::new();
    for e in elements_within(g, w, radius, prune)? {
        let m = e.matrix;
        match classify(&m) {
            IsometryClass::Identity => continue,
            IsometryClass::Elliptic { .. } => {
                if let Some(p) = m.elliptic_fixed_point() {
                    elliptic_fixed.push((p, m));
                }
            }
            _ => {}
        }
        let d = distance(w, m.apply(w));
        if d < 1e-9 {
            return Err(Error::InvalidInput(format!(
                "center ({}, {}) is fixed by {m:?}; choose a generic center",
                w.x, w.y
            )));
        }
        elements.push((d, m.sign_normalized()));
    }
    elements.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.a.total_cmp(&b.1.a))
            .then(a.1.b.total_cmp(&b.1.b))
            .then(a.1.c.total_cmp(&b.1.c))
    });
    let t = to_i(w);
    let t_inv = t.inverse();
    let mut poly = KleinPolygon::initial();
    for (idx, (_, m)) in elements.iter().enumerate() {
        let img = m.conjugate_by(&t).apply(UHPoint::i()).to_hyperboloid();
        poly.clip([img[0] - 1.0, img[1], img[2]], idx);
        if poly.pts.len() < 3 {
            return Err(Error::DataIntegrity("clipped polygon collapsed".into()));
        }
    }
    let horizon = poly
        .pts
        .iter()
        .map(|p| (p.0 * p.0 + p.1 * p.1).sqrt())
        .fold(0.0, f64::max);
    if poly.labels.iter().any(Option::is_none) || horizon > 1.0 - 1e-7 {
        return Err(Error::Unbounded(format!(
            "intersection of {} half-planes within radius {radius} reaches the boundary",
            elements.len()
        )));
    }
    // The Klein chart reverses orientation; walk backwards for counterclockwise sides.
    let m = poly.pts.len();
    let mut sides = Vec::with_capacity(m);
    for k in (0..m).rev() {
        let a = t_inv.apply(klein_to_point(poly.pts[(k + 1) % m]));
        let b = t_inv.apply(klein_to_point(poly.pts[k]));
        let label = poly.labels[k].unwrap();
        sides.push((a, b, elements[label].1));
    }
    Ok(RawPolygon { sides, elliptic_fixed })
}

fn same_polygon(a: &RawPolygon, b: &RawPolygon) -> bool {
    let n = a.sides.len();
    if n != b.sides.len() || n == 0 {
        return false;
    }
    let first = a.sides[0].0;
    let Some(shift) = (0..n).find(|&j| distance(first, b.sides[j].0) < VERTEX_TOL) else {
        return false;
    };
    (0..n).all(|k| {
        let (p, q) = (&a.sides[k], &b.sides[(k + shift) % n]);
        distance(p.0, q.0) < VERTEX_TOL && distance(p.1, q.1) < VERTEX_TOL
    })
}

// Distance from z to the geodesic segment [p, q].
fn segment_distance(z: UHPoint, p: UHPoint, q: UHPoint) -> f64 {
    let (xp, xq, xz) = (p.to_hyperboloid(), q.to_hyperboloid(), z.to_hyperboloid());
    // Minkowski-orthogonal to both endpoints
    let n = [
        xp[1] * xq[2] - xp[2] * xq[1],
        -(xp[2] * xq[0] - xp[0] * xq[2]),
        -(xp[0] * xq[1] - xp[1] * xq[0]),
    ];
    let nn = (-minkowski(n, n)).sqrt();
    let k = minkowski(xz, n) / nn;
    let f = [0, 1, 2].map(|i| xz[i] + k * n[i] / nn);
    let foot = UHPoint::from_hyperboloid(f.map(|v| v / minkowski(f, f).sqrt()));
    let span = distance(p, q);
    if distance(p, foot) <= span && distance(q, foot) <= span {
        k.abs().asinh()
    } else {
        distance(z, p).min(distance(z, q))
    }
}

fn finalize(raw: RawPolygon, g: &GroupPresentation, w: UHPoint, radius: f64) -> Result<DirichletPolygon> {
    // split sides through fixed points of order-two elements
    let mut pieces: Vec<(UHPoint, UHPoint, MoebiusElement)> = Vec::new();
    for (s, e, nb) in raw.sides {
        let mut split = None;
        for (p, _) in &raw.elliptic_fixed {
            if distance(*p, s) > VERTEX_TOL && distance(*p, e) > VERTEX_TOL && segment_distance(*p, s, e) < VERTEX_TOL {
                split = Some(*p);
                break;
            }
        }
        match split {
            Some(p) => {
                pieces.push((s, p, nb));
                pieces.push((p, e, nb));
            }
            None => pieces.push((s, e, nb)),
        }
    }
    let vertices: Vec<UHPoint> = pieces.iter().map(|p| p.0).collect();
    let cone_vertex = vertices
        .iter()
        .map(|v| raw.elliptic_fixed.iter().any(|(p, _)| distance(*p, *v) < VERTEX_TOL))
        .collect();
    let mut sides = Vec::with_capacity(pieces.len());
    for (i, &(s, e, nb)) in pieces.iter().enumerate() {
        let pairing = nb.inverse();
        let (ps, pe) = (pairing.apply(s), pairing.apply(e));
        let partner = pieces.iter().position(|&(s2, e2, _)| {
            (distance(ps, e2) < VERTEX_TOL && distance(pe, s2) < VERTEX_TOL)
                || (distance(ps, s2) < VERTEX_TOL && distance(pe, e2) < VERTEX_TOL)
        });
        let partner = partner.ok_or_else(|| {
            Error::NotCertified(format!("side {i} is not mapped onto a side by its pairing"))
        })?;
        sides.push(Side {
            start: s,
            end: e,
            neighbor: nb,
            pairing,
            partner,
        });
    }
    Ok(DirichletPolygon {
        center: w,
        vertices,
        cone_vertex,
        sides,
        ball_radius_used: radius,
        generators: g.generators.clone(),
    })
}

/// Dirichlet polygon from the group elements within distance `radius` of
/// `w`, certified by recomputing with `1.5 · radius`.
pub fn compute_polygon(g: &GroupPresentation, w: UHPoint, radius: f64) -> Result<DirichletPolygon> {
    if !(radius > 0.0) {
        return Err(Error::InvalidInput(format!("radius {radius} must be positive")));
    }
    let small = clip_at_radius(g, w, radius);
    let large = clip_at_radius(g, w, 1.5 * radius);
    match (small, large) {
        (Ok(a), Ok(b)) => {
            if same_polygon(&a, &b) {
                finalize(a, g, w, radius)
            } else {
                Err(Error::NotCertified(format!(
                    "polygon changes between radius {radius} and {}",
                    1.5 * radius
                )))
            }
        }
        (Err(Error::Unbounded(_)), Ok(_)) => Err(Error::NotCertified(format!(
            "polygon unbounded at radius {radius} but bounded at {}",
            1.5 * radius
        ))),
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

/// Radius schedule used by [`auto_polygon`].
pub const AUTO_RADII: [f64; 6] = [1.5, 2.25, 3.375, 4.5, 6.0, 8.0];

/// Tries increasing radii until a polygon is certified.
pub fn auto_polygon(g: &GroupPresentation, w: UHPoint) -> Result<DirichletPolygon> {
    let mut last = None;
    for r in AUTO_RADII {
        match compute_polygon(g, w, r) {
            Ok(p) => return Ok(p),
            Err(e @ (Error::NotCertified(_) | Error::Unbounded(_))) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap())
}

impl DirichletPolygon {
    /// Distinct elements `γ` whose bisectors with the center carry a side.
    pub fn neighbor_elements(&self) -> Vec<MoebiusElement> {
        let mut idx = MatrixIndex::new();
        for s in &self.sides {
            idx.insert(s.neighbor);
        }
        idx.items
    }

    pub fn circumradius(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| distance(self.center, *v))
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, z: UHPoint) -> bool {
        let c0 = cosh_dist(z, self.center);
        self.sides
            .iter()
            .all(|s| cosh_dist(z, s.neighbor.apply(self.center)) >= c0 * (1.0 - 1e-12))
    }

    /// `(η, ηz)` with `ηz` in the polygon.
    pub fn reduce_into(&self, z: UHPoint) -> Result<(MoebiusElement, UHPoint)> {
        let neighbors = self.neighbor_elements();
        let mut eta = MoebiusElement::identity();
        let mut cur = z;
        for _ in 0..10_000 {
            let c0 = cosh_dist(cur, self.center);
            let mut best: Option<(f64, &MoebiusElement)> = None;
            for nb in &neighbors {
                let gap = c0 - cosh_dist(cur, nb.apply(self.center));
                if gap > 1e-12 * c0 && best.is_none_or(|(b, _)| gap > b) {
                    best = Some((gap, nb));
                }
            }
            match best {
                None => return Ok((eta, cur)),
                Some((_, nb)) => {
                    let inv = nb.inverse();
                    eta = inv.mul(&eta);
                    cur = inv.apply(cur);
                }
            }
        }
        Err(Error::DataIntegrity("point reduction into the polygon did not terminate".into()))
    }

    /// Interior angle at each vertex.
    pub fn angles(&self) -> Vec<f64> {
        let n = self.vertices.len();
        (0..n)
            .map(|k| {
                let v = self.vertices[k];
                let prev = self.vertices[(k + n - 1) % n];
                let next = self.vertices[(k + 1) % n];
                vertex_angle(v, prev, next)
            })
            .collect()
    }
}

// Angle at v between the geodesics to a and b: move v to i, pass to the
// disk where geodesics through the origin are straight.
fn vertex_angle(v: UHPoint, a: UHPoint, b: UHPoint) -> f64 {
    let t = to_i(v);
    let dir = |z: UHPoint| {
        let u = t.apply(z);
        // ζ = (u - i)/(u + i)
        let (nr, ni) = (u.x, u.y - 1.0);
        let (dr, di) = (u.x, u.y + 1.0);
        let den = dr * dr + di * di;
        ((nr * dr + ni * di) / den, (ni * dr - nr * di) / den)
    };
    let (p, q) = (dir(a), dir(b));
    let cross = p.0 * q.1 - p.1 * q.0;
    let dot = p.0 * q.0 + p.1 * q.1;
    cross.abs().atan2(dot)
}

/// Pairing elements with inverses identified, after checking that every
/// original generator is a word of length `<= 12` in them.
pub fn side_pairings(p: &DirichletPolygon) -> Result<Vec<MoebiusElement>> {
    if p.sides.len() < 3 {
        return Err(Error::GenerationUnverified(format!(
            "polygon has {} sides",
            p.sides.len()
        )));
    }
    let mut idx = MatrixIndex::new();
    let mut out = Vec::new();
    for s in &p.sides {
        if idx.find(&s.pairing).is_none() && idx.find(&s.pairing.inverse()).is_none() {
            idx.insert(s.pairing);
            out.push(s.pairing);
        }
    }
    for (k, gen) in p.generators.iter().enumerate() {
        let len = pairing_word_length(p, gen)?;
        if len > 12 {
            return Err(Error::GenerationUnverified(format!(
                "generator {k} needs a pairing word of length {len} > 12"
            )));
        }
    }
    Ok(out)
}

// Walks gen·w back into the polygon through side crossings; each crossing
// is one pairing letter, and arriving at the center exactly means gen is
// the product of the letters used.
fn pairing_word_length(p: &DirichletPolygon, gen: &MoebiusElement) -> Result<usize> {
    let neighbors = p.neighbor_elements();
    let mut cur = *gen;
    for steps in 0..=12 {
        if cur.is_identity(1e-8) {
            return Ok(steps);
        }
        let z = cur.apply(p.center);
        let c0 = cosh_dist(z, p.center);
        let best = neighbors
            .iter()
            .map(|nb| (c0 - cosh_dist(z, nb.apply(p.center)), nb))
            .filter(|(gap, _)| *gap > 1e-12 * c0)
            .max_by(|a, b| a.0.total_cmp(&b.0));
        match best {
            Some((_, nb)) => cur = nb.inverse().mul(&cur),
            None => {
                return Err(Error::GenerationUnverified(format!(
                    "generator {gen:?} fixes the center region but is not the identity"
                )))
            }
        }
    }
    Ok(13)
}

/// Angle-defect area `(n - 2)π - Σ angles`.
pub fn polygon_area(p: &DirichletPolygon) -> f64 {
    let n = p.vertices.len() as f64;
    (n - 2.0) * PI - p.angles().iter().sum::<f64>()
}

/// `D = 2 · max_v d(center, v)`.
pub fn diameter_estimate(p: &DirichletPolygon) -> DiameterEstimate {
    DiameterEstimate {
        d: 2.0 * p.circumradius(),
        method: "twice the maximal center-to-vertex distance",
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundCheck {
    /// Indices into the pairing list (inverses included), applied right to left.
    pub factors: Vec<usize>,
    pub k: u32,
    #[serde(serialize_with = "ser_f17")]
    pub trace_abs: f64,
    #[serde(serialize_with = "ser_f17")]
    pub bound: f64,
    #[serde(serialize_with = "ser_f17")]
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceBoundReport {
    #[serde(rename = "D", serialize_with = "ser_f17")]
    pub d: f64,
    pub checks: Vec<BoundCheck>,
    pub skipped_non_hyperbolic: usize,
    #[serde(serialize_with = "ser_f17")]
    pub min_margin: f64,
    pub all_pass: bool,
}

/// `|tr|` of every hyperbolic product of 1, 2 and 3 pairings (and inverses)
/// against `2 cosh(kD)`.
pub fn trace_bound_report(pairings: &[MoebiusElement], d: f64) -> TraceBoundReport {
    let mut letters: Vec<MoebiusElement> = Vec::new();
    for g in pairings {
        letters.push(*g);
        if !g.inverse().projective_diff(g).lt(&1e-9) {
            letters.push(g.inverse());
        }
    }
    let n = letters.len();
    let mut checks = Vec::new();
    let mut skipped = 0;
    let mut record = |factors: Vec<usize>, m: MoebiusElement, k: u32| {
        if !classify(&m).is_hyperbolic() {
            skipped += 1;
            return;
        }
        let bound = 2.0 * (k as f64 * d).cosh();
        let t = m.trace().abs();
        checks.push(BoundCheck {
            factors,
            k,
            trace_abs: t,
            bound,
            margin: bound - t,
            pass: t <= bound,
        });
    };
    for i in 0..n {
        record(vec![i], letters[i], 1);
    }
    for i in 0..n {
        for j in 0..n {
            record(vec![j, i], letters[j].mul(&letters[i]), 2);
        }
    }
    for i in 0..n {
        for j in 0..n {
            let ji = letters[j].mul(&letters[i]);
            for k in 0..n {
                record(vec![k, j, i], letters[k].mul(&ji), 3);
            }
        }
    }
    let min_margin = checks.iter().map(|c| c.margin).fold(f64::INFINITY, f64::min);
    let all_pass = checks.iter().all(|c| c.pass);
    TraceBoundReport {
        d,
        checks,
        skipped_non_hyperbolic: skipped,
        min_margin,
        all_pass,
    }
}

/// Like [`trace_bound_report`], failing if any bound is violated.
pub fn check_trace_bounds(pairings: &[MoebiusElement], d: f64) -> Result<TraceBoundReport> {
    let r = trace_bound_report(pairings, d);
    if r.all_pass {
        Ok(r)
    } else {
        let bad = r.checks.iter().filter(|c| !c.pass).count();
        Err(Error::BoundViolated(format!(
            "{bad} of {} products exceed 2cosh(kD) with D = {d}; worst margin {:e}",
            r.checks.len(),
            r.min_margin
        )))
    }
}

/// SVG drawing of the polygon in the upper half-plane.
pub fn to_svg(p: &DirichletPolygon, width: u32, height: u32) -> String {
    let mut xs: Vec<f64> = p.vertices.iter().map(|v| v.x).collect();
    let mut ys: Vec<f64> = p.vertices.iter().map(|v| v.y).collect();
    // arcs can bulge above their endpoints
    for s in &p.sides {
        if let Some((c, r)) = circle_of(s.start, s.end) {
            if (s.start.x - c) * (s.end.x - c) < 0.0 {
                ys.push(r);
            }
            xs.push(c);
        }
    }
    let (x0, x1) = (xs.iter().cloned().fold(f64::INFINITY, f64::min), xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = (ys.iter().cloned().fold(f64::INFINITY, f64::min), ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let (w, h) = ((x1 - x0).max(1e-9), (y1 - y0).max(1e-9));
    let (px, py) = (0.1 * w, 0.1 * h);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="{} {} {} {}">"#,
        x0 - px,
        -(y1 + py),
        w + 2.0 * px,
        h + 2.0 * py
    );
    let mut path = String::new();
    for (k, s) in p.sides.iter().enumerate() {
        if k == 0 {
            let _ = write!(path, "M {} {} ", s.start.x, -s.start.y);
        }
        match circle_of(s.start, s.end) {
            None => {
                let _ = write!(path, "L {} {} ", s.end.x, -s.end.y);
            }
            Some((c, r)) => {
                let a0 = s.start.y.atan2(s.start.x - c);
                let a1 = s.end.y.atan2(s.end.x - c);
                let sweep = if a1 > a0 { 1 } else { 0 };
                let _ = write!(path, "A {r} {r} 0 0 {sweep} {} {} ", s.end.x, -s.end.y);
            }
        }
    }
    path.push('Z');
    let _ = writeln!(
        out,
        r#"  <path d="{path}" fill="none" stroke="black" stroke-width="1" vector-effect="non-scaling-stroke"/>"#
    );
    let dot = 0.01 * w.max(h);
    for (v, cone) in p.vertices.iter().zip(&p.cone_vertex) {
        if *cone {
            let _ = writeln!(out, r#"  <circle cx="{}" cy="{}" r="{dot}" fill="red"/>"#, v.x, -v.y);
        }
    }
    let _ = writeln!(
        out,
        r#"  <circle cx="{}" cy="{}" r="{dot}" fill="blue"/>"#,
        p.center.x, -p.center.y
    );
    out.push_str("</svg>\n");
    out
}

// Center and radius of the semicircle through two points; None for a
// vertical line.
fn circle_of(a: UHPoint, b: UHPoint) -> Option<(f64, f64)> {
    if (a.x - b.x).abs() < 1e-12 * (1.0 + a.x.abs()) {
        return None;
    }
    let c = ((b.x * b.x + b.y * b.y) - (a.x * a.x + a.y * a.y)) / (2.0 * (b.x - a.x));
    Some((c, ((a.x - c).powi(2) + a.y * a.y).sqrt()))
}

/// Vertex coordinates as `[x, y]` pairs with 17 significant digits.
pub fn vertex_json(p: &DirichletPolygon) -> Vec<[F17; 2]> {
    p.vertices.iter().map(|v| [F17(v.x), F17(v.y)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuchsian::{triangle_geometry, DEFAULT_CENTER};
    use crate::orbisurface::{hyperbolic_area, Signature};

    fn octagon_group() -> GroupPresentation {
        // opposite sides of the regular octagon with angles π/4
        let r_in = (1.0 + 2f64.sqrt()).acosh();
        let t = MoebiusElement::diag(r_in.exp()).unwrap();
        let gens = (0..4)
            .map(|k| t.conjugate_by(&MoebiusElement::rotation_about_i(k as f64 * PI / 8.0)))
            .collect();
        GroupPresentation::from_generators(gens).unwrap()
    }

    #[test]
    fn triangle_237_polygon_area() {
        let t = triangle_geometry(2, 3, 7).unwrap();
        let p = auto_polygon(&t.group, t.incenter).unwrap();
        let area = polygon_area(&p);
        assert!((area / (PI / 21.0) - 1.0).abs() < 1e-2, "area {area}");
        assert!(p.cone_vertex.iter().any(|&c| c));
        let pairs = side_pairings(&p).unwrap();
        assert!(!pairs.is_empty());
    }

    #[test]
    fn pairings_map_sides_onto_sides() {
        let t = triangle_geometry(2, 3, 7).unwrap();
        let p = auto_polygon(&t.group, DEFAULT_CENTER).unwrap();
        for s in &p.sides {
            let q = &p.sides[s.partner];
            let (a, b) = (s.pairing.apply(s.start), s.pairing.apply(s.end));
            assert!(distance(a, q.end) < VERTEX_TOL && distance(b, q.start) < VERTEX_TOL);
            assert!(q.pairing.projective_diff(&s.pairing.inverse()) < 1e-8);
        }
    }

    #[test]
    fn genus_two_octagon_area() {
        let g = octagon_group();
        let p = auto_polygon(&g, DEFAULT_CENTER).unwrap();
        let area = polygon_area(&p);
        let want = hyperbolic_area(&Signature::surface(2)).unwrap();
        assert!((area / want - 1.0).abs() < 1e-2, "area {area}");
        side_pairings(&p).unwrap();
    }

    #[test]
    fn cyclic_and_trivial_groups_are_unbounded() {
        let cyc = GroupPresentation::from_generators(vec![MoebiusElement::diag(2.0).unwrap()]).unwrap();
        assert!(matches!(auto_polygon(&cyc, UHPoint::i()), Err(Error::Unbounded(_))));
        let triv = GroupPresentation::from_generators(vec![MoebiusElement::identity()]).unwrap();
        assert!(matches!(compute_polygon(&triv, UHPoint::i(), 2.0), Err(Error::Unbounded(_))));
    }

    #[test]
    fn star_shaped_about_center() {
        let t = triangle_geometry(2, 3, 7).unwrap();
        let p = auto_polygon(&t.group, t.incenter).unwrap();
        for v in &p.vertices {
            for k in 1..10 {
                // point on the geodesic from center to v
                let s = k as f64 / 10.0;
                let a = p.center.to_hyperboloid();
                let b = v.to_hyperboloid();
                let d = distance(p.center, *v);
                let (c0, c1) = (((1.0 - s) * d).sinh() / d.sinh(), (s * d).sinh() / d.sinh());
                let z = UHPoint::from_hyperboloid([0, 1, 2].map(|i| c0 * a[i] + c1 * b[i]));
                assert!(p.contains(z));
            }
        }
    }

    #[test]
    fn angle_tends_to_zero_at_ideal_vertex() {
        let a = UHPoint { x: -1.0, y: 1.0 };
        let b = UHPoint { x: 1.0, y: 1.0 };
        let mut prev = PI;
        for k in 1..8 {
            let v = UHPoint { x: 0.0, y: 10f64.powi(k) };
            let ang = vertex_angle(v, a, b);
            assert!(ang < prev);
            prev = ang;
        }
        assert!(prev < 1e-5);
    }

    #[test]
    fn trace_bounds_and_negative_control() {
        let t = triangle_geometry(2, 3, 7).unwrap();
        let p = auto_polygon(&t.group, t.incenter).unwrap();
        let pairs = side_pairings(&p).unwrap();
        let d = diameter_estimate(&p).d;
        let r = check_trace_bounds(&pairs, d).unwrap();
        assert!(r.min_margin > 0.0);
        assert!(matches!(check_trace_bounds(&pairs, d / 10.0), Err(Error::BoundViolated(_))));
    }

    #[test]
    fn degenerate_polygon_fails_generation_check() {
        let t = triangle_geometry(2, 3, 7).unwrap();
        let mut p = auto_polygon(&t.group, t.incenter).unwrap();
        p.sides.truncate(1);
        assert!(matches!(side_pairings(&p), Err(Error::GenerationUnverified(_))));
    }

    #[test]
    fn deterministic_and_larger_ball_does_not_grow_diameter() {
        let t = triangle_geometry(2, 3, 7).unwrap();
        let a = compute_polygon(&t.group, t.incenter, 2.25).unwrap();
        let b = compute_polygon(&t.group, t.incenter, 2.25).unwrap();
        assert_eq!(a.vertices, b.vertices);
        let c = compute_polygon(&t.group, t.incenter, 3.375).unwrap();
        assert!(diameter_estimate(&c).d <= diameter_estimate(&a).d + 1e-9);
    }

    #[test]
    fn segment_distance_against_sampling() {
        let p = UHPoint { x: -0.4, y: 0.9 };
        let q = UHPoint { x: 0.5, y: 1.6 };
        let (a, b) = (p.to_hyperboloid(), q.to_hyperboloid());
        let d = distance(p, q);
        for z in [UHPoint { x: 0.1, y: 0.5 }, UHPoint { x: 2.0, y: 0.3 }, UHPoint { x: -1.0, y: 3.0 }] {
            let sampled = (0..=4000)
                .map(|k| {
                    let s = k as f64 / 4000.0;
                    let (c0, c1) = (((1.0 - s) * d).sinh() / d.sinh(), (s * d).sinh() / d.sinh());
                    distance(z, UHPoint::from_hyperboloid([0, 1, 2].map(|i| c0 * a[i] + c1 * b[i])))
                })
                .fold(f64::INFINITY, f64::min);
            let got = segment_distance(z, p, q);
            assert!(got <= sampled + 1e-12 && sampled - got < 1e-6, "{got} vs {sampled}");
        }
    }

    #[test]
    fn svg_has_path_and_viewbox() {
        let t = triangle_geometry(2, 3, 7).unwrap();
        let p = auto_polygon(&t.group, t.incenter).unwrap();
        let s = to_svg(&p, 400, 300);
        assert!(s.contains("viewBox") && s.contains("<path") && s.contains(r#"width="400""#));
    }
}
