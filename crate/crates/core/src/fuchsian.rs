//! Fuchsian groups given by generator matrices: triangle groups, element
//! and conjugacy-class enumeration, and length spectra.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dirichlet::{self, DirichletPolygon};
use crate::error::{Error, Result};
use crate::hyperbolic::{classify, distance, translation_length, IsometryClass, MoebiusElement, UHPoint};
use crate::io::{fmt17, ser_f17, ser_opt_f17};
use crate::orbisurface::Signature;

/// Lengths closer than this are the same length.
pub const LENGTH_TOL: f64 = 1e-9;

/// A finite list of generators, with display names.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupPresentation {
    pub generators: Vec<MoebiusElement>,
    pub names: Vec<String>,
}

#[derive(Deserialize)]
struct GroupJson {
    generators: Vec<MoebiusElement>,
    #[serde(default)]
    names: Vec<String>,
}

impl<'de> Deserialize<'de> for GroupPresentation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = GroupJson::deserialize(d)?;
        GroupPresentation::new(raw.generators, raw.names).map_err(serde::de::Error::custom)
    }
}

/// Letters are `k` for generator `k-1` and `-k` for its inverse.
pub type Word = Vec<i32>;

impl GroupPresentation {
    /// Empty `names` means `g1, g2, ...`.
    pub fn new(generators: Vec<MoebiusElement>, names: Vec<String>) -> Result<Self> {
        if generators.is_empty() {
            return Err(Error::InvalidInput("a group needs at least one generator".into()));
        }
        let names = if names.is_empty() {
            (1..=generators.len()).map(|i| format!("g{i}")).collect()
        } else if names.len() == generators.len() {
            names
        } else {
            return Err(Error::InvalidInput(format!(
                "{} names for {} generators",
                names.len(),
                generators.len()
            )));
        };
        // re-normalize in case the caller built matrices by hand
        let generators = generators
            .into_iter()
            .map(|g| MoebiusElement::new(g.a, g.b, g.c, g.d))
            .collect::<Result<Vec<_>>>()?;
        Ok(GroupPresentation { generators, names })
    }

    pub fn from_generators(generators: Vec<MoebiusElement>) -> Result<Self> {
        Self::new(generators, Vec::new())
    }

    pub fn rank(&self) -> usize {
        self.generators.len()
    }

    pub fn letter(&self, l: i32) -> MoebiusElement {
        let g = self.generators[l.unsigned_abs() as usize - 1];
        if l > 0 {
            g
        } else {
            g.inverse()
        }
    }

    /// Letters in shortlex order: `g1, g1⁻¹, g2, g2⁻¹, ...`.
    pub fn letters(&self) -> Vec<i32> {
        (1..=self.rank() as i32).flat_map(|k| [k, -k]).collect()
    }

    pub fn eval(&self, word: &[i32]) -> MoebiusElement {
        word.iter()
            .fold(MoebiusElement::identity(), |acc, &l| acc.mul(&self.letter(l)))
    }

    pub fn format_word(&self, word: &[i32]) -> String {
        if word.is_empty() {
            return "e".into();
        }
        word.iter()
            .map(|&l| {
                let n = &self.names[l.unsigned_abs() as usize - 1];
                if l > 0 {
                    n.clone()
                } else {
                    format!("{n}^-1")
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// The presentation `{ s g s⁻¹ }`.
    pub fn conjugated_by(&self, s: &MoebiusElement) -> GroupPresentation {
        GroupPresentation {
            generators: self.generators.iter().map(|g| g.conjugate_by(s)).collect(),
            names: self.names.clone(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("group JSON: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("group serializes")
    }
}

/// Set of PSL(2,R) elements with tolerant lookup.
pub(crate) struct MatrixIndex {
    buckets: HashMap<[i64; 4], Vec<usize>>,
    pub(crate) items: Vec<MoebiusElement>,
}

const INDEX_QUANTUM: f64 = 1e-6;
const INDEX_TOL: f64 = 5e-8;

impl MatrixIndex {
    pub(crate) fn new() -> Self {
        MatrixIndex {
            buckets: HashMap::new(),
            items: Vec::new(),
        }
    }

    fn key(m: &MoebiusElement) -> [i64; 4] {
        [m.a, m.b, m.c, m.d].map(|v| (v / INDEX_QUANTUM).round() as i64)
    }

    // Keys a nearby copy of `m` (or of `-m`) could have been stored under.
    fn candidates(m: &MoebiusElement) -> Vec<[i64; 4]> {
        let mut out = Vec::new();
        for s in [1.0, -1.0] {
            let mut keys = vec![[0i64; 4]];
            for (i, v) in [m.a, m.b, m.c, m.d].into_iter().enumerate() {
                let x = s * v / INDEX_QUANTUM;
                let r = x.round();
                let mut next = Vec::with_capacity(keys.len() * 2);
                for k in &keys {
                    let mut k1 = *k;
                    k1[i] = r as i64;
                    next.push(k1);
                    if (x - r).abs() > 0.4 {
                        let mut k2 = *k;
                        k2[i] = (r + (x - r).signum()) as i64;
                        next.push(k2);
                    }
                }
                keys = next;
            }
            out.extend(keys);
        }
        out
    }

    pub(crate) fn find(&self, m: &MoebiusElement) -> Option<usize> {
        for k in Self::candidates(m) {
            if let Some(list) = self.buckets.get(&k) {
                for &i in list {
                    if self.items[i].projective_diff(m) <= INDEX_TOL {
                        return Some(i);
                    }
                }
            }
        }
        None
    }

    /// Index of `m`, and whether it was newly inserted.
    pub(crate) fn insert(&mut self, m: MoebiusElement) -> (usize, bool) {
        if let Some(i) = self.find(&m) {
            return (i, false);
        }
        let i = self.items.len();
        self.buckets.entry(Self::key(&m)).or_default().push(i);
        self.items.push(m);
        (i, true)
    }

    pub(crate) fn len(&self) -> usize {
        self.items.len()
    }
}

/// A group element together with the shortlex-first word reaching it.
#[derive(Debug, Clone)]
pub struct GroupElement {
    pub word: Word,
    pub matrix: MoebiusElement,
}

/// All distinct elements with word length `<= max_len`, in shortlex order
/// of their first words (identity first).
pub fn enumerate_elements(g: &GroupPresentation, max_len: usize) -> Vec<GroupElement> {
    let letters = g.letters();
    let mut index = MatrixIndex::new();
    index.insert(MoebiusElement::identity());
    let mut out = vec![GroupElement {
        word: Vec::new(),
        matrix: MoebiusElement::identity(),
    }];
    let mut level_start = 0;
    for _ in 0..max_len {
        let level_end = out.len();
        for i in level_start..level_end {
            for &l in &letters {
                if out[i].word.last() == Some(&-l) {
                    continue;
                }
                let m = out[i].matrix.mul(&g.letter(l));
                if index.insert(m).1 {
                    let mut word = out[i].word.clone();
                    word.push(l);
                    out.push(GroupElement { word, matrix: m });
                }
            }
        }
        if out.len() == level_end {
            break;
        }
        level_start = level_end;
    }
    out
}

/// Upper limit on the size of displacement-bounded searches.
pub const MAX_BALL_ELEMENTS: usize = 400_000;

/// Elements `γ` with `d(w, γw) <= radius`, found by a breadth-first search
/// that explores elements with displacement up to `prune`.
pub fn elements_within(g: &GroupPresentation, w: UHPoint, radius: f64, prune: f64) -> Result<Vec<GroupElement>> {
    let letters = g.letters();
    let mut index = MatrixIndex::new();
    index.insert(MoebiusElement::identity());
    let mut queue = vec![GroupElement {
        word: Vec::new(),
        matrix: MoebiusElement::identity(),
    }];
    let mut head = 0;
    while head < queue.len() {
        let cur = queue[head].clone();
        head += 1;
        for &l in &letters {
            if cur.word.last() == Some(&-l) {
                continue;
            }
            let m = cur.matrix.mul(&g.letter(l));
            if distance(w, m.apply(w)) > prune {
                continue;
            }
            if index.insert(m).1 {
                let mut word = cur.word.clone();
                word.push(l);
                queue.push(GroupElement { word, matrix: m });
                if queue.len() > MAX_BALL_ELEMENTS {
                    return Err(Error::NotCertified(format!(
                        "more than {MAX_BALL_ELEMENTS} elements within distance {prune}"
                    )));
                }
            }
        }
    }
    Ok(queue
        .into_iter()
        .filter(|e| distance(w, e.matrix.apply(w)) <= radius)
        .collect())
}

/// Triangle group together with the triangle it was built from.
#[derive(Debug, Clone)]
pub struct TriangleGeometry {
    pub group: GroupPresentation,
    /// Vertices with angles `π/p`, `π/q`, `π/r`.
    pub vertices: [UHPoint; 3],
    pub incenter: UHPoint,
}

fn hyperboloid_dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] - a[1] * b[1] - a[2] * b[2]
}

/// Rotations `R1, R2, R3` about the vertices of the triangle with angles
/// `π/p, π/q, π/r`, with `R1 R2 R3 = I`.
pub fn triangle_geometry(p: u32, q: u32, r: u32) -> Result<TriangleGeometry> {
    if p < 2 || q < 2 || r < 2 {
        return Err(Error::InvalidInput(format!("triangle orders ({p},{q},{r}) must be >= 2")));
    }
    let (p64, q64, r64) = (p as u64, q as u64, r as u64);
    if q64 * r64 + p64 * r64 + p64 * q64 >= p64 * q64 * r64 {
        return Err(Error::NotHyperbolicTriangle { p, q, r });
    }
    let (alpha, beta, gamma) = (PI / p as f64, PI / q as f64, PI / r as f64);
    // side AB by the second hyperbolic law of cosines
    let cosh_c = (alpha.cos() * beta.cos() + gamma.cos()) / (alpha.sin() * beta.sin());
    let c = cosh_c.acosh();
    let dil = MoebiusElement::diag((0.5 * c).exp())?;
    let a_vertex = UHPoint::i();
    let b_vertex = UHPoint { x: 0.0, y: c.exp() };
    let mut chosen = None;
    for (s1, s2) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        let r1 = MoebiusElement::rotation_about_i(s1 * alpha);
        let r2 = MoebiusElement::rotation_about_i(s2 * beta).conjugate_by(&dil);
        let r3 = r1.mul(&r2).inverse();
        if (r3.trace().abs() - 2.0 * gamma.cos()).abs() < 1e-9 {
            chosen = Some((r1, r2, r3));
            break;
        }
    }
    let (r1, r2, r3) = chosen.ok_or(Error::RelationCheckFailed { residual: f64::INFINITY })?;
    let residual = [
        r1.pow(p as i32).projective_diff(&MoebiusElement::identity()),
        r2.pow(q as i32).projective_diff(&MoebiusElement::identity()),
        r3.pow(r as i32).projective_diff(&MoebiusElement::identity()),
        r1.mul(&r2).mul(&r3).projective_diff(&MoebiusElement::identity()),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    if residual > 1e-9 {
        return Err(Error::RelationCheckFailed { residual });
    }
    let c_vertex = r3
        .elliptic_fixed_point()
        .ok_or(Error::RelationCheckFailed { residual: f64::INFINITY })?;
    let verts = [a_vertex, b_vertex, c_vertex];
    // incenter: hyperboloid combination weighted by sinh of opposite sides
    let side = |i: usize| distance(verts[(i + 1) % 3], verts[(i + 2) % 3]);
    let mut v = [0.0; 3];
    for (i, z) in verts.iter().enumerate() {
        let x = z.to_hyperboloid();
        let s = side(i).sinh();
        for k in 0..3 {
            v[k] += s * x[k];
        }
    }
    let norm = hyperboloid_dot(v, v).sqrt();
    let incenter = UHPoint::from_hyperboloid(v.map(|x| x / norm));
    let group = GroupPresentation::new(vec![r1, r2, r3], vec!["R1".into(), "R2".into(), "R3".into()])?;
    Ok(TriangleGeometry {
        group,
        vertices: verts,
        incenter,
    })
}

pub fn triangle_group(p: u32, q: u32, r: u32) -> Result<GroupPresentation> {
    Ok(triangle_geometry(p, q, r)?.group)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Elliptic,
    Hyperbolic,
}

/// One conjugacy class of a non-identity element. `orientations` is 1 when
/// the class contains the inverses of its elements and 2 otherwise, so the
/// class stands for that many oriented closed geodesics.
#[derive(Debug, Clone, Serialize)]
pub struct ConjugacyClassRecord {
    pub word: Word,
    pub word_text: String,
    pub kind: ClassKind,
    #[serde(serialize_with = "ser_f17")]
    pub trace: f64,
    #[serde(serialize_with = "ser_opt_f17")]
    pub length: Option<f64>,
    #[serde(serialize_with = "ser_opt_f17")]
    pub primitive_length: Option<f64>,
    pub power_index: u32,
    pub orientations: u32,
    pub representative: MoebiusElement,
}

/// How conjugacy is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConjugacyMethod {
    /// Geometric when a Dirichlet polygon exists, words otherwise.
    Auto,
    /// Compare the conjugates whose axis (or fixed point) is closest to the
    /// polygon center; exact for cocompact groups.
    Geometric,
    /// Compare cyclic words only; used for groups without a compact polygon.
    WordOnly,
}

#[derive(Debug, Clone)]
pub struct ClassOptions {
    pub method: ConjugacyMethod,
    pub center: Option<UHPoint>,
    pub max_length: Option<f64>,
}

impl Default for ClassOptions {
    fn default() -> Self {
        ClassOptions {
            method: ConjugacyMethod::Auto,
            center: None,
            max_length: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassEnumeration {
    pub records: Vec<ConjugacyClassRecord>,
    pub max_word_len: usize,
    pub method: ConjugacyMethod,
}

/// Generic point used as polygon center when none is given.
pub const DEFAULT_CENTER: UHPoint = UHPoint {
    x: 0.073_119_4,
    y: 1.131_718_3,
};

// ---- word-only canonical forms ----

fn letter_rank(l: i32) -> (u32, bool) {
    (l.unsigned_abs(), l < 0)
}

fn word_less(a: &[i32], b: &[i32]) -> bool {
    a.iter().map(|&l| letter_rank(l)).lt(b.iter().map(|&l| letter_rank(l)))
}

fn inverse_word(w: &[i32]) -> Word {
    w.iter().rev().map(|l| -l).collect()
}

fn cyclic_reduce(w: &[i32]) -> Word {
    let mut out: Word = Vec::new();
    for &l in w {
        if out.last() == Some(&-l) {
            out.pop();
        } else {
            out.push(l);
        }
    }
    let mut s = 0;
    let mut e = out.len();
    while e - s >= 2 && out[s] == -out[e - 1] {
        s += 1;
        e -= 1;
    }
    out[s..e].to_vec()
}

fn min_rotation(w: &[i32]) -> Word {
    let mut best = w.to_vec();
    for k in 1..w.len() {
        let rot: Word = w[k..].iter().chain(&w[..k]).copied().collect();
        if word_less(&rot, &best) {
            best = rot;
        }
    }
    best
}

fn word_period(w: &[i32]) -> usize {
    let n = w.len();
    (1..=n)
        .find(|&p| n.is_multiple_of(p) && (0..n).all(|i| w[i] == w[(i + p) % n]))
        .unwrap_or(n)
}

struct WordKey {
    canonical: Word,
    self_inverse: bool,
    power: u32,
}

fn word_key(w: &[i32]) -> WordKey {
    let red = cyclic_reduce(w);
    let a = min_rotation(&red);
    let b = min_rotation(&inverse_word(&red));
    let power = if red.is_empty() { 1 } else { (red.len() / word_period(&red)) as u32 };
    WordKey {
        self_inverse: a == b,
        canonical: if word_less(&b, &a) { b } else { a },
        power,
    }
}

// ---- geometric conjugacy ----

struct GeoKey {
    trace: f64,
    dmin: f64,
    conjugates: Vec<MoebiusElement>,
    power: u32,
    orientations: u32,
}

fn matrix_scale(m: &MoebiusElement) -> f64 {
    1.0 + m.a.abs().max(m.b.abs()).max(m.c.abs()).max(m.d.abs())
}

fn close_projective(x: &MoebiusElement, y: &MoebiusElement) -> bool {
    x.projective_diff(y) <= 1e-7 * matrix_scale(x)
}

fn push_unique(set: &mut Vec<MoebiusElement>, m: MoebiusElement) {
    if !set.iter().any(|s| close_projective(s, &m)) {
        set.push(m.sign_normalized());
    }
}

fn same_geo_class(a: &GeoKey, b: &GeoKey) -> bool {
    (a.trace - b.trace).abs() <= 1e-8 * (1.0 + a.trace)
        && (a.dmin - b.dmin).abs() <= 1e-6
        && a.conjugates
            .iter()
            .any(|x| b.conjugates.iter().any(|y| close_projective(x, y)))
}

/// Decides conjugacy by tiling with a Dirichlet polygon.
pub(crate) struct ConjugacyOracle<'a> {
    poly: &'a DirichletPolygon,
    neighbors: Vec<MoebiusElement>,
    rho: f64,
}

impl<'a> ConjugacyOracle<'a> {
    pub(crate) fn new(poly: &'a DirichletPolygon) -> Self {
        ConjugacyOracle {
            neighbors: poly.neighbor_elements(),
            rho: poly.circumradius(),
            poly,
        }
    }

    /// Tiles `γP` reachable through tiles whose centers satisfy `accept`.
    fn tiles<F: Fn(UHPoint) -> bool>(&self, accept: F) -> Vec<MoebiusElement> {
        let w = self.poly.center;
        let mut index = MatrixIndex::new();
        index.insert(MoebiusElement::identity());
        let mut head = 0;
        while head < index.len() {
            let cur = index.items[head];
            head += 1;
            for s in &self.neighbors {
                let m = cur.mul(s);
                if accept(m.apply(w)) {
                    index.insert(m);
                }
                if index.len() > MAX_BALL_ELEMENTS {
                    return index.items;
                }
            }
        }
        index.items
    }

    fn hyperbolic_key(&self, g: &MoebiusElement) -> Result<GeoKey> {
        let w = self.poly.center;
        let not_hyp = || Error::NotHyperbolic(format!("{g:?}"));
        let frame = g.axis_frame(w).ok_or_else(not_hyp)?;
        let (eta, q0) = self.poly.reduce_into(frame.foot(w))?;
        let g1 = g.conjugate_by(&eta);
        let frame = g1.axis_frame(q0).ok_or_else(not_hyp)?;
        let ell = frame.length;
        let coords = |z: UHPoint| frame.coords(z);
        let u0 = 0.0;
        let q1 = g1.apply(q0);
        let seg_dist = |z: UHPoint| {
            let (u, d) = coords(z);
            if u >= u0 && u <= u0 + ell {
                d
            } else {
                distance(z, q0).min(distance(z, q1))
            }
        };
        let limit = 2.0 * self.rho + 1e-3;
        let tiles = self.tiles(|z| seg_dist(z) <= limit);
        let mut cands: Vec<(f64, f64, MoebiusElement)> = tiles
            .into_iter()
            .filter_map(|gam| {
                let (u, d) = coords(gam.apply(w));
                (u >= u0 - 1e-9 && u <= u0 + ell + 1e-9).then_some((u, d, gam))
            })
            .collect();
        let dmin = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        if !dmin.is_finite() {
            return Err(Error::DataIntegrity(format!("no orbit point near the axis of {g:?}")));
        }
        cands.retain(|c| c.1 <= dmin + 1e-8);
        cands.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut conjugates = Vec::new();
        for (_, _, gam) in &cands {
            push_unique(&mut conjugates, g1.conjugate_by(&gam.inverse()));
        }
        let orientations = if conjugates
            .iter()
            .any(|c| conjugates.iter().any(|x| close_projective(x, &c.inverse())))
        {
            1
        } else {
            2
        };
        let first = cands[0].2;
        let mut power = 1;
        for (_, _, gam) in &cands[1..] {
            let h = gam.mul(&first.inverse());
            let Ok(lh) = translation_length(&h) else { continue };
            let j = (ell / lh).round();
            if j < 2.0 || (j * lh - ell).abs() > 1e-7 * ell.max(1.0) {
                continue;
            }
            if !close_projective(&g1, &g1.conjugate_by(&h)) {
                continue;
            }
            let hj = h.pow(j as i32);
            if close_projective(&hj, &g1) || close_projective(&hj, &g1.inverse()) {
                power = power.max(j as u32);
            }
        }
        Ok(GeoKey {
            trace: g.trace().abs(),
            dmin,
            conjugates,
            power,
            orientations,
        })
    }

    fn elliptic_key(&self, g: &MoebiusElement) -> Result<GeoKey> {
        let w = self.poly.center;
        let p = g
            .elliptic_fixed_point()
            .ok_or_else(|| Error::DataIntegrity(format!("elliptic {g:?} without fixed point")))?;
        let (eta, p1) = self.poly.reduce_into(p)?;
        let g1 = g.conjugate_by(&eta);
        let limit = 2.0 * self.rho + 1e-3;
        let tiles = self.tiles(|z| distance(z, p1) <= limit);
        let mut cands: Vec<(f64, MoebiusElement)> =
            tiles.into_iter().map(|gam| (distance(gam.apply(w), p1), gam)).collect();
        let dmin = cands.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        cands.retain(|c| c.0 <= dmin + 1e-8);
        let mut conjugates = Vec::new();
        for (_, gam) in &cands {
            push_unique(&mut conjugates, g1.conjugate_by(&gam.inverse()));
        }
        let orientations = if conjugates
            .iter()
            .any(|c| conjugates.iter().any(|x| close_projective(x, &c.inverse())))
        {
            1
        } else {
            2
        };
        Ok(GeoKey {
            trace: g.trace().abs(),
            dmin,
            conjugates,
            power: 1,
            orientations,
        })
    }
}

/// Conjugacy classes of all elements of word length `<= max_word_len`.
pub fn enumerate_classes(g: &GroupPresentation, max_word_len: usize) -> Result<ClassEnumeration> {
    enumerate_classes_with(g, max_word_len, &ClassOptions::default())
}

pub fn enumerate_classes_with(g: &GroupPresentation, max_word_len: usize, opts: &ClassOptions) -> Result<ClassEnumeration> {
    let poly = polygon_for(g, opts)?;
    enumerate_with_polygon(g, max_word_len, opts, poly.as_ref())
}

fn polygon_for(g: &GroupPresentation, opts: &ClassOptions) -> Result<Option<DirichletPolygon>> {
    let center = opts.center.unwrap_or(DEFAULT_CENTER);
    match opts.method {
        ConjugacyMethod::WordOnly => Ok(None),
        ConjugacyMethod::Geometric => dirichlet::auto_polygon(g, center).map(Some),
        ConjugacyMethod::Auto => match dirichlet::auto_polygon(g, center) {
            Ok(p) => Ok(Some(p)),
            Err(Error::Unbounded(_)) => Ok(None),
            Err(e) => Err(e),
        },
    }
}

fn enumerate_with_polygon(
    g: &GroupPresentation,
    max_word_len: usize,
    opts: &ClassOptions,
    poly: Option<&DirichletPolygon>,
) -> Result<ClassEnumeration> {
    let oracle = poly.map(ConjugacyOracle::new);
    let mut records: Vec<ConjugacyClassRecord> = Vec::new();
    let mut geo_keys: Vec<GeoKey> = Vec::new();
    let mut word_keys: Vec<Word> = Vec::new();
    for el in enumerate_elements(g, max_word_len) {
        let w = &el.word;
        if w.is_empty() || (w.len() > 1 && w[0] == -w[w.len() - 1]) {
            continue;
        }
        let m = el.matrix;
        let cls = classify(&m);
        let (kind, length) = match cls {
            IsometryClass::Identity => continue,
            IsometryClass::Parabolic => {
                return Err(Error::DataIntegrity(format!(
                    "parabolic element {} = {m:?} in a group assumed cocompact",
                    g.format_word(w)
                )))
            }
            IsometryClass::Elliptic { .. } => (ClassKind::Elliptic, None),
            IsometryClass::Hyperbolic { length, .. } => (ClassKind::Hyperbolic, Some(length)),
        };
        if let (Some(max), Some(l)) = (opts.max_length, length) {
            if l > max + LENGTH_TOL {
                continue;
            }
        }
        let (power, orientations) = match &oracle {
            Some(o) => {
                let key = match kind {
                    ClassKind::Hyperbolic => o.hyperbolic_key(&m)?,
                    ClassKind::Elliptic => o.elliptic_key(&m)?,
                };
                if geo_keys.iter().any(|k| same_geo_class(k, &key)) {
                    continue;
                }
                let out = (key.power, key.orientations);
                geo_keys.push(key);
                out
            }
            None => {
                let key = word_key(w);
                let tr = m.trace().abs();
                if word_keys
                    .iter()
                    .zip(&records)
                    .any(|(k, r)| *k == key.canonical && (r.trace - tr).abs() <= 1e-9 * (1.0 + tr))
                {
                    continue;
                }
                word_keys.push(key.canonical);
                (key.power, if key.self_inverse { 1 } else { 2 })
            }
        };
        records.push(ConjugacyClassRecord {
            word: w.clone(),
            word_text: g.format_word(w),
            kind,
            trace: m.trace().abs(),
            length,
            primitive_length: length.map(|l| l / power as f64),
            power_index: if kind == ClassKind::Hyperbolic { power } else { 1 },
            orientations,
            representative: m.sign_normalized(),
        });
    }
    records.sort_by(|a, b| {
        let ka = (a.kind == ClassKind::Hyperbolic, a.length.unwrap_or(a.trace));
        let kb = (b.kind == ClassKind::Hyperbolic, b.length.unwrap_or(b.trace));
        ka.0.cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(a.word.len().cmp(&b.word.len()))
            .then_with(|| {
                if word_less(&a.word, &b.word) {
                    std::cmp::Ordering::Less
                } else if word_less(&b.word, &a.word) {
                    std::cmp::Ordering::Greater
                } else {
                    std::cmp::Ordering::Equal
                }
            })
    });
    Ok(ClassEnumeration {
        records,
        max_word_len,
        method: if poly.is_some() {
            ConjugacyMethod::Geometric
        } else {
            ConjugacyMethod::WordOnly
        },
    })
}

/// One length of the spectrum; `multiplicity` counts oriented geodesics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthEntry {
    pub length: f64,
    pub primitive_length: f64,
    pub multiplicity: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LengthSpectrum {
    pub entries: Vec<LengthEntry>,
    /// Lengths below this agreed between word lengths `L` and `L + 2`.
    pub certified_cutoff: Option<f64>,
    pub possibly_incomplete: bool,
}

impl LengthSpectrum {
    /// Sorts and merges entries of equal length and primitive length.
    pub fn from_entries(mut entries: Vec<LengthEntry>) -> Self {
        entries.sort_by(|a, b| {
            a.length
                .total_cmp(&b.length)
                .then(a.primitive_length.total_cmp(&b.primitive_length))
        });
        let mut merged: Vec<LengthEntry> = Vec::new();
        for e in entries {
            match merged.last_mut() {
                Some(last)
                    if (last.length - e.length).abs() <= LENGTH_TOL
                        && (last.primitive_length - e.primitive_length).abs() <= LENGTH_TOL =>
                {
                    last.multiplicity += e.multiplicity;
                }
                _ => merged.push(e),
            }
        }
        LengthSpectrum {
            entries: merged,
            certified_cutoff: None,
            possibly_incomplete: false,
        }
    }

    /// Primitive lengths with the number of oriented primitive geodesics.
    pub fn primitives(&self) -> Vec<(f64, u32)> {
        self.entries
            .iter()
            .filter(|e| (e.length - e.primitive_length).abs() <= LENGTH_TOL)
            .map(|e| (e.length, e.multiplicity))
            .collect()
    }

    /// Adds all powers `k ℓ <= max_length` of each primitive entry.
    pub fn with_powers(primitives: &[(f64, u32)], max_length: f64) -> Self {
        let mut out = Vec::new();
        for &(l, m) in primitives {
            let mut k = 1.0;
            while k * l <= max_length + LENGTH_TOL {
                out.push(LengthEntry {
                    length: k * l,
                    primitive_length: l,
                    multiplicity: m,
                });
                k += 1.0;
            }
        }
        let mut s = LengthSpectrum::from_entries(out);
        s.certified_cutoff = Some(max_length);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("length,primitive_length,multiplicity\n");
        for e in &self.entries {
            s.push_str(&format!("{},{},{}\n", fmt17(e.length), fmt17(e.primitive_length), e.multiplicity));
        }
        if let Some(c) = self.certified_cutoff {
            s.push_str(&format!(
                "# certified_cutoff={},possibly_incomplete={}\n",
                fmt17(c),
                self.possibly_incomplete
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut certified_cutoff = None;
        let mut possibly_incomplete = false;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(meta) = line.strip_prefix('#') {
                for kv in meta.split(',') {
                    match kv.trim().split_once('=') {
                        Some(("certified_cutoff", v)) => {
                            let c = v.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
                            certified_cutoff = Some(c);
                        }
                        Some(("possibly_incomplete", v)) => possibly_incomplete = v == "true",
                        _ => {}
                    }
                }
                continue;
            }
            if line.is_empty() || (n == 0 && line.starts_with("length")) {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(Error::Parse(format!("line {}: expected 3 columns", n + 1)));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)));
            let multiplicity = cols[2]
                .parse::<u32>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
            let e = LengthEntry {
                length: num(cols[0])?,
                primitive_length: num(cols[1])?,
                multiplicity,
            };
            if !(e.length > 0.0 && e.primitive_length > 0.0 && e.multiplicity >= 1) {
                return Err(Error::Parse(format!("line {}: invalid entry", n + 1)));
            }
            entries.push(e);
        }
        let mut s = LengthSpectrum::from_entries(entries);
        s.certified_cutoff = certified_cutoff;
        s.possibly_incomplete = possibly_incomplete;
        Ok(s)
    }
}

/// Oriented closed-geodesic lengths `<= max_length` from enumerated classes.
pub fn length_spectrum(classes: &[ConjugacyClassRecord], max_length: f64) -> LengthSpectrum {
    let entries = classes
        .iter()
        .filter(|c| c.kind == ClassKind::Hyperbolic)
        .filter_map(|c| {
            let l = c.length?;
            (l <= max_length + LENGTH_TOL).then_some(LengthEntry {
                length: l,
                primitive_length: c.primitive_length.unwrap_or(l),
                multiplicity: c.orientations,
            })
        })
        .collect();
    LengthSpectrum::from_entries(entries)
}

fn first_mismatch(a: &LengthSpectrum, b: &LengthSpectrum) -> Option<f64> {
    for (x, y) in a.entries.iter().zip(&b.entries) {
        if (x.length - y.length).abs() > LENGTH_TOL
            || (x.primitive_length - y.primitive_length).abs() > LENGTH_TOL
            || x.multiplicity != y.multiplicity
        {
            return Some(x.length.min(y.length));
        }
    }
    let n = a.entries.len().min(b.entries.len());
    if a.entries.len() != b.entries.len() {
        let rest = a.entries.get(n).or(b.entries.get(n)).unwrap();
        return Some(rest.length);
    }
    None
}

/// Spectrum at word length `L`, certified against `L + 2`: only lengths
/// below the first disagreement are returned, and the result is flagged
/// when that disagreement falls below `max_length`.
pub fn certified_spectrum(g: &GroupPresentation, max_word_len: usize, max_length: f64, opts: &ClassOptions) -> Result<LengthSpectrum> {
    let poly = polygon_for(g, opts)?;
    let mut o = opts.clone();
    o.max_length = Some(max_length);
    let a = enumerate_with_polygon(g, max_word_len, &o, poly.as_ref())?;
    let b = enumerate_with_polygon(g, max_word_len + 2, &o, poly.as_ref())?;
    let sa = length_spectrum(&a.records, max_length);
    let sb = length_spectrum(&b.records, max_length);
    let (cutoff, incomplete) = match first_mismatch(&sa, &sb) {
        Some(l) => (l, true),
        None => (max_length, false),
    };
    let mut out = LengthSpectrum::from_entries(
        sa.entries
            .into_iter()
            .filter(|e| !incomplete || e.length < cutoff - LENGTH_TOL)
            .collect(),
    );
    out.certified_cutoff = Some(cutoff);
    out.possibly_incomplete = incomplete;
    Ok(out)
}

/// One nontrivial power of the rotation at a cone point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EllipticClassData {
    pub order: u32,
    pub rotation_index: u32,
    pub theta: f64,
    pub centralizer_order: u32,
}

pub fn elliptic_data_for_orders(cone_orders: &[u32]) -> Vec<EllipticClassData> {
    let mut out = Vec::new();
    for &m in cone_orders {
        for k in 1..m {
            out.push(EllipticClassData {
                order: m,
                rotation_index: k,
                theta: PI * k as f64 / m as f64,
                centralizer_order: m,
            });
        }
    }
    out
}

pub fn elliptic_class_data(sig: &Signature) -> Vec<EllipticClassData> {
    elliptic_data_for_orders(sig.cone_orders())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperbolic::Geodesic;

    fn cyclic() -> GroupPresentation {
        GroupPresentation::from_generators(vec![MoebiusElement::diag(2.0).unwrap()]).unwrap()
    }

    #[test]
    fn triangle_237_traces_and_relations() {
        let g = triangle_group(2, 3, 7).unwrap();
        let want = [0.0, 1.0, 2.0 * (PI / 7.0).cos()];
        for (m, w) in g.generators.iter().zip(want) {
            assert!((m.trace().abs() - w).abs() < 1e-12, "{m:?}");
        }
        let prod = g.generators[0].mul(&g.generators[1]).mul(&g.generators[2]);
        assert!(prod.is_identity(1e-12));
    }

    #[test]
    fn euclidean_triangle_rejected() {
        assert!(matches!(
            triangle_group(2, 3, 6),
            Err(Error::NotHyperbolicTriangle { p: 2, q: 3, r: 6 })
        ));
        assert!(triangle_group(2, 2, 50).is_err());
        assert!(triangle_group(1, 5, 5).is_err());
    }

    #[test]
    fn triangle_vertices_have_prescribed_angles() {
        let t = triangle_geometry(3, 4, 5).unwrap();
        let [a, b, c] = t.vertices;
        // law of cosines: cos C = -cos A cos B + sin A sin B cosh c
        let side_c = distance(a, b);
        let (al, be, ga) = (PI / 3.0, PI / 4.0, PI / 5.0);
        assert!((ga.cos() - (-al.cos() * be.cos() + al.sin() * be.sin() * side_c.cosh())).abs() < 1e-12);
        for (v, m) in t.vertices.iter().zip(&t.group.generators) {
            assert!(distance(m.apply(*v), *v) < 1e-9);
        }
        let _ = c;
    }

    #[test]
    fn incenter_is_equidistant_from_sides() {
        for (p, q, r) in [(2, 3, 7), (3, 3, 4), (2, 5, 5)] {
            let t = triangle_geometry(p, q, r).unwrap();
            let [a, b, c] = t.vertices;
            let d: Vec<f64> = [(a, b), (b, c), (c, a)]
                .iter()
                .map(|&(x, y)| Geodesic::through(x, y).distance_to(t.incenter))
                .collect();
            assert!((d[0] - d[1]).abs() < 1e-10 && (d[1] - d[2]).abs() < 1e-10, "{d:?}");
        }
    }

    #[test]
    fn element_enumeration_of_cyclic_group() {
        let els = enumerate_elements(&cyclic(), 3);
        assert_eq!(els.len(), 7);
        assert_eq!(els[1].word, vec![1]);
        assert_eq!(els[2].word, vec![-1]);
        assert!(enumerate_elements(&cyclic(), 0).len() == 1);
    }

    #[test]
    fn triangle_element_words_are_shortlex() {
        let g = triangle_group(2, 3, 7).unwrap();
        let els = enumerate_elements(&g, 4);
        for e in &els {
            assert!(g.eval(&e.word).projective_diff(&e.matrix) < 1e-10);
        }
        // R1 has order 2, so R1^-1 is never a fresh element
        assert!(els.iter().all(|e| !e.word.contains(&-1)));
    }

    #[test]
    fn cyclic_group_classes() {
        let cls = enumerate_classes(&cyclic(), 3).unwrap();
        assert_eq!(cls.method, ConjugacyMethod::WordOnly);
        let l4 = 4f64.ln();
        assert_eq!(cls.records.len(), 3);
        for (k, r) in cls.records.iter().enumerate() {
            assert!((r.length.unwrap() - (k + 1) as f64 * l4).abs() < 1e-12);
            assert_eq!(r.power_index, k as u32 + 1);
            assert!((r.primitive_length.unwrap() - l4).abs() < 1e-12);
            assert_eq!(r.orientations, 2);
        }
        let spec = length_spectrum(&cls.records, 3.0 * l4);
        assert_eq!(spec.entries.len(), 3);
        for (k, e) in spec.entries.iter().enumerate() {
            assert_eq!(e.multiplicity, 2);
            assert!((e.length - (k + 1) as f64 * l4).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_word_range_has_no_classes() {
        let cls = enumerate_classes_with(
            &cyclic(),
            0,
            &ClassOptions {
                method: ConjugacyMethod::WordOnly,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(cls.records.is_empty());
        assert!(length_spectrum(&[], 10.0).entries.is_empty());
    }

    #[test]
    fn r1r2_is_elliptic_of_order_seven() {
        let g = triangle_group(2, 3, 7).unwrap();
        let m = g.eval(&[1, 2]);
        match classify(&m) {
            IsometryClass::Elliptic { .. } => {}
            other => panic!("{other:?}"),
        }
        assert!((m.trace().abs() - 2.0 * (PI / 7.0).cos()).abs() < 1e-12);
        assert!(m.projective_diff(&g.generators[2].inverse()) < 1e-12);
    }

    #[test]
    fn word_canonical_forms() {
        assert_eq!(cyclic_reduce(&[1, 2, -2, 3, -1]), vec![3]);
        assert_eq!(min_rotation(&[2, 1, -1]), vec![1, -1, 2]);
        let k = word_key(&[1, 2, 1, 2]);
        assert_eq!(k.power, 2);
        assert!(!k.self_inverse);
        assert_eq!(word_key(&[2, 1]).canonical, word_key(&[-1, -2]).canonical);
    }

    #[test]
    fn elliptic_data_examples() {
        let d = elliptic_data_for_orders(&[2]);
        assert_eq!(d.len(), 1);
        assert!((d[0].theta - PI / 2.0).abs() < 1e-15);
        let d = elliptic_data_for_orders(&[3]);
        assert_eq!(d.len(), 2);
        assert!((d[1].theta - 2.0 * PI / 3.0).abs() < 1e-15);
        assert!(d.iter().all(|e| e.centralizer_order == 3));
        let sig = Signature::new(0, vec![2, 3, 7]).unwrap();
        assert_eq!(elliptic_class_data(&sig).len(), 9);
    }

    #[test]
    fn spectrum_csv_round_trip() {
        let s = LengthSpectrum::with_powers(&[(1.0, 2), (2.5, 1)], 3.0);
        let back = LengthSpectrum::from_csv(&s.to_csv()).unwrap();
        assert_eq!(back, s);
        assert_eq!(s.entries.len(), 4);
        let mut plain = s.clone();
        plain.certified_cutoff = None;
        assert!(!plain.to_csv().contains('#'));
        assert_eq!(LengthSpectrum::from_csv(&plain.to_csv()).unwrap(), plain);
        assert!(LengthSpectrum::from_csv("length,primitive_length,multiplicity\n1.0,1.0\n").is_err());
    }

    #[test]
    fn group_json_round_trip() {
        let g = triangle_group(2, 3, 7).unwrap();
        let back = GroupPresentation::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);
        let h = GroupPresentation::from_json(r#"{"generators": [[[2,0],[0,0.5]]]}"#).unwrap();
        assert_eq!(h.names, vec!["g1"]);
    }
}
