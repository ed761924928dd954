//! Isometries of the hyperbolic plane in the upper half-plane model.
//!
//! Elements of PSL(2,R) are stored as unit-determinant SL(2,R)
//! representatives. Quantities that do not depend on the sign of the lift
//! (classification, translation length) use `|tr|`; the raw signed entries
//! stay available for code that manipulates specific lifts.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::io::F17;

/// `||tr| - 2|` below this is treated as parabolic (or identity).
pub const PARABOLIC_TOL: f64 = 1e-9;
/// Off-diagonal size below which a trace-2 element is the identity.
pub const IDENTITY_TOL: f64 = 1e-9;
/// Allowed determinant drift before renormalization.
pub const DET_TOL: f64 = 1e-12;

/// A point `x + iy` of the upper half-plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UHPoint {
    pub x: f64,
    pub y: f64,
}

impl UHPoint {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !(y > 0.0) || !x.is_finite() || !y.is_finite() {
            return Err(Error::InvalidInput(format!(
                "point ({x}, {y}) is not in the upper half-plane"
            )));
        }
        Ok(UHPoint { x, y })
    }

    /// The point `i`.
    pub fn i() -> Self {
        UHPoint { x: 0.0, y: 1.0 }
    }

    /// Hyperboloid-model coordinates `(X0, X1, X2)` with `X0^2 - X1^2 - X2^2 = 1`;
    /// the Minkowski product of two such vectors is `cosh` of their distance.
    pub fn to_hyperboloid(self) -> [f64; 3] {
        let r2 = self.x * self.x + self.y * self.y;
        [
            (r2 + 1.0) / (2.0 * self.y),
            (r2 - 1.0) / (2.0 * self.y),
            self.x / self.y,
        ]
    }

    /// Inverse of [`UHPoint::to_hyperboloid`] for a point on the upper sheet.
    pub fn from_hyperboloid(v: [f64; 3]) -> Self {
        let y = 1.0 / (v[0] - v[1]);
        UHPoint { x: v[2] * y, y }
    }
}

/// A point of the boundary `R ∪ {∞}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryPoint {
    Finite(f64),
    Infinity,
}

/// A complete geodesic, given by its two ideal endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geodesic {
    pub from: BoundaryPoint,
    pub to: BoundaryPoint,
}

impl Geodesic {
    /// The complete geodesic through two distinct points, oriented from
    /// `z` towards `w`.
    pub fn through(z: UHPoint, w: UHPoint) -> Geodesic {
        let scale = 1.0 + z.x.abs().max(w.x.abs());
        if (z.x - w.x).abs() <= 1e-14 * scale {
            let p = BoundaryPoint::Finite(0.5 * (z.x + w.x));
            return if w.y > z.y {
                Geodesic {
                    from: p,
                    to: BoundaryPoint::Infinity,
                }
            } else {
                Geodesic {
                    from: BoundaryPoint::Infinity,
                    to: p,
                }
            };
        }
        let c = ((w.x * w.x + w.y * w.y) - (z.x * z.x + z.y * z.y)) / (2.0 * (w.x - z.x));
        let r = ((z.x - c).powi(2) + z.y * z.y).sqrt();
        let (lo, hi) = (BoundaryPoint::Finite(c - r), BoundaryPoint::Finite(c + r));
        if w.x > z.x {
            // moving right along the upper semicircle ends at c + r
            Geodesic { from: lo, to: hi }
        } else {
            Geodesic { from: hi, to: lo }
        }
    }

    /// Hyperbolic distance from `z` to the geodesic.
    pub fn distance_to(&self, z: UHPoint) -> f64 {
        let sinh_d = match (self.from, self.to) {
            (BoundaryPoint::Finite(p), BoundaryPoint::Infinity)
            | (BoundaryPoint::Infinity, BoundaryPoint::Finite(p)) => (z.x - p).abs() / z.y,
            (BoundaryPoint::Finite(p), BoundaryPoint::Finite(q)) => {
                let c = 0.5 * (p + q);
                let r = 0.5 * (p - q).abs();
                let dx = z.x - c;
                (dx * dx + z.y * z.y - r * r).abs() / (2.0 * r * z.y)
            }
            (BoundaryPoint::Infinity, BoundaryPoint::Infinity) => f64::INFINITY,
        };
        sinh_d.asinh()
    }

    /// The point of the geodesic closest to `z`.
    pub fn foot_of(&self, z: UHPoint) -> UHPoint {
        match (self.from, self.to) {
            (BoundaryPoint::Finite(p), BoundaryPoint::Infinity)
            | (BoundaryPoint::Infinity, BoundaryPoint::Finite(p)) => {
                let dx = z.x - p;
                UHPoint {
                    x: p,
                    y: (dx * dx + z.y * z.y).sqrt(),
                }
            }
            (BoundaryPoint::Finite(_), BoundaryPoint::Finite(_)) => {
                let a = self.standardizer();
                let w = a.apply(z);
                let foot = UHPoint {
                    x: 0.0,
                    y: (w.x * w.x + w.y * w.y).sqrt(),
                };
                a.inverse().apply(foot)
            }
            (BoundaryPoint::Infinity, BoundaryPoint::Infinity) => z,
        }
    }

    /// Unit-determinant map sending `from` to 0 and `to` to ∞, so the
    /// geodesic becomes the positive imaginary axis traversed upwards.
    pub fn standardizer(&self) -> MoebiusElement {
        match (self.from, self.to) {
            (BoundaryPoint::Finite(p), BoundaryPoint::Infinity) => MoebiusElement {
                a: 1.0,
                b: -p,
                c: 0.0,
                d: 1.0,
            },
            (BoundaryPoint::Infinity, BoundaryPoint::Finite(q)) => MoebiusElement {
                a: 0.0,
                b: -1.0,
                c: 1.0,
                d: -q,
            },
            (BoundaryPoint::Finite(p), BoundaryPoint::Finite(q)) => {
                if p > q {
                    MoebiusElement::from_raw_unchecked(1.0, -p, 1.0, -q)
                } else {
                    MoebiusElement::from_raw_unchecked(-1.0, p, 1.0, -q)
                }
            }
            (BoundaryPoint::Infinity, BoundaryPoint::Infinity) => MoebiusElement::identity(),
        }
    }
}

/// A real 2×2 matrix of unit determinant acting by `z ↦ (az+b)/(cz+d)`.
#[derive(Clone, Copy, PartialEq)]
pub struct MoebiusElement {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl fmt::Debug for MoebiusElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{}, {}], [{}, {}]]", self.a, self.b, self.c, self.d)
    }
}

/// Conjugacy type of an isometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IsometryClass {
    Identity,
    /// Rotation; `theta` is half the rotation angle, in `(0, π)`.
    Elliptic { theta: f64 },
    Parabolic,
    /// Translation along an axis; `length = ln(norm)`.
    Hyperbolic { norm: f64, length: f64 },
}

impl IsometryClass {
    pub fn is_hyperbolic(&self) -> bool {
        matches!(self, IsometryClass::Hyperbolic { .. })
    }

    pub fn is_elliptic(&self) -> bool {
        matches!(self, IsometryClass::Elliptic { .. })
    }

    pub fn tag(&self) -> &'static str {
        match self {
            IsometryClass::Identity => "identity",
            IsometryClass::Elliptic { .. } => "elliptic",
            IsometryClass::Parabolic => "parabolic",
            IsometryClass::Hyperbolic { .. } => "hyperbolic",
        }
    }
}

impl MoebiusElement {
    /// Builds an element from matrix entries, rescaling by `1/sqrt(det)`.
    /// Fails when the determinant is not positive.
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let det = a * d - b * c;
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::InvalidInput(format!(
                "matrix [[{a}, {b}], [{c}, {d}]] has non-positive determinant {det}"
            )));
        }
        let m = MoebiusElement { a, b, c, d };
        Ok(if (det - 1.0).abs() <= DET_TOL {
            m
        } else {
            m.scaled(1.0 / det.sqrt())
        })
    }

    fn from_raw_unchecked(a: f64, b: f64, c: f64, d: f64) -> Self {
        let det = a * d - b * c;
        MoebiusElement { a, b, c, d }.scaled(1.0 / det.abs().sqrt())
    }

    fn scaled(self, k: f64) -> Self {
        MoebiusElement {
            a: self.a * k,
            b: self.b * k,
            c: self.c * k,
            d: self.d * k,
        }
    }

    pub fn identity() -> Self {
        MoebiusElement {
            a: 1.0,
            b: 0.0,
            c: 0.0,
            d: 1.0,
        }
    }

    /// `diag(m, 1/m)`, i.e. `z ↦ m² z`.
    pub fn diag(m: f64) -> Result<Self> {
        Self::new(m, 0.0, 0.0, 1.0 / m)
    }

    /// Counterclockwise rotation by `2·half_angle` about `i`.
    pub fn rotation_about_i(half_angle: f64) -> Self {
        let (s, c) = half_angle.sin_cos();
        MoebiusElement {
            a: c,
            b: s,
            c: -s,
            d: c,
        }
    }

    pub fn entries(&self) -> [[f64; 2]; 2] {
        [[self.a, self.b], [self.c, self.d]]
    }

    pub fn trace(&self) -> f64 {
        self.a + self.d
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn mul(&self, o: &MoebiusElement) -> MoebiusElement {
        MoebiusElement {
            a: self.a * o.a + self.b * o.c,
            b: self.a * o.b + self.b * o.d,
            c: self.c * o.a + self.d * o.c,
            d: self.c * o.b + self.d * o.d,
        }
    }

    pub fn inverse(&self) -> MoebiusElement {
        MoebiusElement {
            a: self.d,
            b: -self.b,
            c: -self.c,
            d: self.a,
        }
    }

    pub fn neg(&self) -> MoebiusElement {
        self.scaled(-1.0)
    }

    /// `s · self · s⁻¹`.
    pub fn conjugate_by(&self, s: &MoebiusElement) -> MoebiusElement {
        s.mul(self).mul(&s.inverse())
    }

    pub fn pow(&self, n: i32) -> MoebiusElement {
        let base = if n < 0 { self.inverse() } else { *self };
        let mut acc = MoebiusElement::identity();
        for _ in 0..n.unsigned_abs() {
            acc = acc.mul(&base);
        }
        acc
    }

    /// Largest entrywise difference to `other`.
    pub fn max_abs_diff(&self, other: &MoebiusElement) -> f64 {
        (self.a - other.a)
            .abs()
            .max((self.b - other.b).abs())
            .max((self.c - other.c).abs())
            .max((self.d - other.d).abs())
    }

    /// Entrywise distance in PSL(2,R), i.e. minimised over the sign of `other`.
    pub fn projective_diff(&self, other: &MoebiusElement) -> f64 {
        self.max_abs_diff(other).min(self.max_abs_diff(&other.neg()))
    }

    /// Representative with positive trace (or, for trace zero, a
    /// deterministic sign rule), so equal PSL elements get equal entries.
    pub fn sign_normalized(&self) -> MoebiusElement {
        let key = [self.a + self.d, self.c, self.a, self.b];
        for v in key {
            if v.abs() > 1e-12 {
                return if v > 0.0 { *self } else { self.neg() };
            }
        }
        *self
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        self.projective_diff(&MoebiusElement::identity()) <= tol
    }

    /// Möbius action; for valid `z` the image lies in the upper half-plane.
    pub fn apply(&self, z: UHPoint) -> UHPoint {
        self.apply_raw(z)
    }

    pub(crate) fn apply_raw(&self, z: UHPoint) -> UHPoint {
        // (a z + b) / (c z + d) with z = x + iy
        let nr = self.a * z.x + self.b;
        let ni = self.a * z.y;
        let dr = self.c * z.x + self.d;
        let di = self.c * z.y;
        let den = dr * dr + di * di;
        UHPoint {
            x: (nr * dr + ni * di) / den,
            y: (ni * dr - nr * di) / den,
        }
    }

    /// Image of a boundary point.
    pub fn apply_boundary(&self, p: BoundaryPoint) -> BoundaryPoint {
        match p {
            BoundaryPoint::Infinity => {
                if self.c.abs() < 1e-300 {
                    BoundaryPoint::Infinity
                } else {
                    BoundaryPoint::Finite(self.a / self.c)
                }
            }
            BoundaryPoint::Finite(x) => {
                let den = self.c * x + self.d;
                if den.abs() < 1e-300 {
                    BoundaryPoint::Infinity
                } else {
                    BoundaryPoint::Finite((self.a * x + self.b) / den)
                }
            }
        }
    }

    /// Repelling and attracting fixed points of a hyperbolic element.
    pub fn axis(&self) -> Option<Geodesic> {
        let tr = self.trace();
        if tr.abs() <= 2.0 + PARABOLIC_TOL {
            return None;
        }
        let disc = (tr * tr - 4.0).sqrt();
        if self.c.abs() < 1e-14 {
            // upper triangular: fixed points -b/(a-d) and ∞
            let finite = BoundaryPoint::Finite(self.b / (self.d - self.a));
            // ∞ attracts iff |a| > |d|
            return Some(if self.a.abs() > self.d.abs() {
                Geodesic {
                    from: finite,
                    to: BoundaryPoint::Infinity,
                }
            } else {
                Geodesic {
                    from: BoundaryPoint::Infinity,
                    to: finite,
                }
            });
        }
        let p = ((self.a - self.d) + disc) / (2.0 * self.c);
        let q = ((self.a - self.d) - disc) / (2.0 * self.c);
        // derivative at a fixed point z is 1/(cz + d)^2; attracting iff |cz+d| > 1
        if (self.c * p + self.d).abs() > 1.0 {
            Some(Geodesic {
                from: BoundaryPoint::Finite(q),
                to: BoundaryPoint::Finite(p),
            })
        } else {
            Some(Geodesic {
                from: BoundaryPoint::Finite(p),
                to: BoundaryPoint::Finite(q),
            })
        }
    }

    /// Fixed point in the upper half-plane of an elliptic element.
    pub fn elliptic_fixed_point(&self) -> Option<UHPoint> {
        let tr = self.trace();
        if tr.abs() >= 2.0 - PARABOLIC_TOL || self.c == 0.0 {
            return None;
        }
        let s = (4.0 - tr * tr).sqrt();
        let x = (self.a - self.d) / (2.0 * self.c);
        let y = s / (2.0 * self.c.abs());
        Some(UHPoint { x, y })
    }
}

impl Serialize for MoebiusElement {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        [[F17(self.a), F17(self.b)], [F17(self.c), F17(self.d)]].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for MoebiusElement {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let m = <[[f64; 2]; 2]>::deserialize(deserializer)?;
        MoebiusElement::new(m[0][0], m[0][1], m[1][0], m[1][1]).map_err(serde::de::Error::custom)
    }
}

/// Classifies `g` by its trace.
pub fn classify(g: &MoebiusElement) -> IsometryClass {
    let tr = g.trace();
    let abs_tr = tr.abs();
    if (abs_tr - 2.0).abs() <= PARABOLIC_TOL {
        if g.b.abs() < IDENTITY_TOL && g.c.abs() < IDENTITY_TOL {
            IsometryClass::Identity
        } else {
            IsometryClass::Parabolic
        }
    } else if abs_tr < 2.0 {
        IsometryClass::Elliptic {
            theta: (tr / 2.0).acos(),
        }
    } else {
        let length = 2.0 * (abs_tr / 2.0).acosh();
        IsometryClass::Hyperbolic {
            norm: length.exp(),
            length,
        }
    }
}

/// `ln N(g) = 2 arccosh(|tr g| / 2)`, the displacement along the axis.
pub fn translation_length(g: &MoebiusElement) -> Result<f64> {
    match classify(g) {
        IsometryClass::Hyperbolic { length, .. } => Ok(length),
        other => Err(Error::NotHyperbolic(format!(
            "{g:?} is {} (trace {})",
            other.tag(),
            g.trace()
        ))),
    }
}

pub fn apply(g: &MoebiusElement, z: UHPoint) -> UHPoint {
    g.apply(z)
}

/// Hyperbolic distance: `cosh d = 1 + |z - w|² / (2 y_z y_w)`.
pub fn distance(z: UHPoint, w: UHPoint) -> f64 {
    let dx = z.x - w.x;
    let dy = z.y - w.y;
    let num = dx * dx + dy * dy;
    // acosh(1 + u) = 2 asinh(sqrt(u/2)), stable for small u
    2.0 * (0.5 * (num / (2.0 * z.y * w.y))).sqrt().asinh()
}

/// Minkowski product `x0 y0 - x1 y1 - x2 y2`.
pub fn minkowski(x: [f64; 3], y: [f64; 3]) -> f64 {
    x[0] * y[0] - x[1] * y[1] - x[2] * y[2]
}

/// Orthonormal hyperboloid frame along the axis of a hyperbolic element:
/// `base` lies on the axis, `tangent` points in the direction of
/// translation and `normal` is orthogonal to the axis plane. Unlike
/// endpoint coordinates this stays well conditioned for axes with a far
/// endpoint.
#[derive(Debug, Clone, Copy)]
pub struct AxisFrame {
    pub base: [f64; 3],
    pub tangent: [f64; 3],
    pub normal: [f64; 3],
    pub length: f64,
}

impl AxisFrame {
    /// Signed position of the foot of `z` along the axis, measured from
    /// `base`, and the distance from `z` to the axis.
    pub fn coords(&self, z: UHPoint) -> (f64, f64) {
        let x = z.to_hyperboloid();
        let a = minkowski(x, self.base);
        let b = -minkowski(x, self.tangent);
        let c = -minkowski(x, self.normal);
        ((b / a).atanh(), c.abs().asinh())
    }

    /// The point of the axis closest to `z`.
    pub fn foot(&self, z: UHPoint) -> UHPoint {
        let x = z.to_hyperboloid();
        let a = minkowski(x, self.base);
        let b = -minkowski(x, self.tangent);
        let n = (a * a - b * b).sqrt();
        UHPoint::from_hyperboloid([0, 1, 2].map(|i| (a * self.base[i] + b * self.tangent[i]) / n))
    }
}

impl MoebiusElement {
    /// Frame along the axis with `base` the foot of `near`.
    pub fn axis_frame(&self, near: UHPoint) -> Option<AxisFrame> {
        let tr = self.trace();
        if tr.abs() <= 2.0 + PARABOLIC_TOL {
            return None;
        }
        // the axis is c(x² + y²) + (d - a)x - b = 0, linear on the hyperboloid
        let s = (tr * tr - 4.0).sqrt();
        let normal = [(self.c - self.b) / s, -(self.c + self.b) / s, (self.a - self.d) / s];
        let x = near.to_hyperboloid();
        let k = minkowski(x, normal);
        let p = [0, 1, 2].map(|i| x[i] + k * normal[i]);
        let np = minkowski(p, p).sqrt();
        let base = p.map(|v| v / np);
        let length = 2.0 * (tr.abs() / 2.0).acosh();
        let moved = self.apply(UHPoint::from_hyperboloid(base)).to_hyperboloid();
        let (ch, sh) = (length.cosh(), length.sinh());
        let t = [0, 1, 2].map(|i| (moved[i] - ch * base[i]) / sh);
        let nt = (-minkowski(t, t)).sqrt();
        Some(AxisFrame {
            base,
            tangent: t.map(|v| v / nt),
            normal,
            length,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn axis_frame_matches_endpoint_geometry() {
        let g = MoebiusElement::new(2.0, 1.0, 3.0, 2.0).unwrap();
        let z = UHPoint { x: 0.3, y: 0.7 };
        let f = g.axis_frame(z).unwrap();
        let axis = g.axis().unwrap();
        let (u, d) = f.coords(z);
        assert!(u.abs() < 1e-12);
        assert!((d - axis.distance_to(z)).abs() < 1e-12);
        assert!(distance(f.foot(z), axis.foot_of(z)) < 1e-12);
        let (u1, d1) = f.coords(g.apply(z));
        assert!((u1 - f.length).abs() < 1e-12 && (d1 - d).abs() < 1e-12);
    }

    #[test]
    fn axis_frame_near_vertical_axis() {
        // fixed points near 0 and 1e13: endpoint formulas lose everything
        let g = MoebiusElement::new(4.0, 1e-13, 1e-13, 0.25).unwrap();
        let z = UHPoint { x: 0.073, y: 1.13 };
        let (_, d) = g.axis_frame(z).unwrap().coords(z);
        assert!((d - (0.073f64 / 1.13).asinh()).abs() < 1e-10, "{d}");
    }


    fn m(a: f64, b: f64, c: f64, d: f64) -> MoebiusElement {
        MoebiusElement::new(a, b, c, d).unwrap()
    }

    #[test]
    fn dilation_by_four_is_hyperbolic_with_length_ln4() {
        match classify(&m(2.0, 0.0, 0.0, 0.5)) {
            IsometryClass::Hyperbolic { norm, length } => {
                assert!((norm - 4.0).abs() < 1e-12);
                assert!((length - 4f64.ln()).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn identity_and_quarter_turn() {
        assert_eq!(classify(&MoebiusElement::identity()), IsometryClass::Identity);
        match classify(&m(0.0, -1.0, 1.0, 0.0)) {
            IsometryClass::Elliptic { theta } => assert!((theta - PI / 2.0).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
        assert_eq!(classify(&m(1.0, 1.0, 0.0, 1.0)), IsometryClass::Parabolic);
        assert_eq!(classify(&m(-1.0, 0.0, 0.0, -1.0)), IsometryClass::Identity);
    }

    #[test]
    fn near_identity_dilation_is_not_hyperbolic() {
        let mm = 1.0 + 1e-13;
        let g = m(mm, 0.0, 0.0, 1.0 / mm);
        assert!(matches!(translation_length(&g), Err(Error::NotHyperbolic(_))));
    }

    #[test]
    fn translation_length_of_trace_four_matches_grid_minimum() {
        let g = m(2.0, 1.0, 3.0, 2.0);
        let ell = translation_length(&g).unwrap();
        assert!((ell - 2.0 * 2f64.acosh()).abs() < 1e-14);
        // oracle: minimise d(z, gz) over a fine grid along the axis
        let axis = g.axis().unwrap();
        let (p, q) = match (axis.from, axis.to) {
            (BoundaryPoint::Finite(p), BoundaryPoint::Finite(q)) => (p, q),
            _ => unreachable!(),
        };
        let c = 0.5 * (p + q);
        let r = 0.5 * (p - q).abs();
        let mut best = f64::INFINITY;
        for k in 1..2000 {
            let phi = PI * k as f64 / 2000.0;
            let z = UHPoint {
                x: c + r * phi.cos(),
                y: r * phi.sin(),
            };
            best = best.min(distance(z, g.apply(z)));
        }
        assert!((best - ell).abs() < 1e-6, "{best} vs {ell}");
    }

    #[test]
    fn apply_examples() {
        let i = UHPoint::i();
        assert_eq!(MoebiusElement::identity().apply(i), i);
        let z = m(2.0, 0.0, 0.0, 0.5).apply(i);
        assert!((z.x).abs() < 1e-15 && (z.y - 4.0).abs() < 1e-15);
        let z = m(0.0, -1.0, 1.0, 0.0).apply(UHPoint { x: 0.0, y: 2.0 });
        assert!((z.x).abs() < 1e-15 && (z.y - 0.5).abs() < 1e-15);
    }

    #[test]
    fn distance_examples() {
        let i = UHPoint::i();
        assert_eq!(distance(i, i), 0.0);
        assert!((distance(i, UHPoint { x: 0.0, y: 4.0 }) - 4f64.ln()).abs() < 1e-15);
        let d = distance(i, UHPoint { x: 1.0, y: 1.0 });
        assert!((d - 1.5f64.acosh()).abs() < 1e-15);
        // oracle: integrate |dz|/y along the geodesic (circle |z - 1/2|^2 = 5/4)
        let c = 0.5;
        let r = 1.25f64.sqrt();
        let (a0, a1) = ((1.0f64 / r).atan2(-0.5 / r), (1.0f64 / r).atan2(0.5 / r));
        let n = 20_000;
        let mut len = 0.0;
        for k in 0..n {
            // midpoint rule in the angle: |dz| = r dphi, y = r sin(phi)
            let phi = a0 + (a1 - a0) * (k as f64 + 0.5) / n as f64;
            len += (a0 - a1).abs() / n as f64 / phi.sin();
        }
        let _ = c;
        assert!((len - d).abs() < 1e-8, "{len} vs {d}");
    }

    #[test]
    fn geodesic_distance_and_foot() {
        let axis = m(2.0, 1.0, 3.0, 2.0).axis().unwrap();
        let z = UHPoint { x: 0.3, y: 0.9 };
        let foot = axis.foot_of(z);
        assert!(axis.distance_to(foot) < 1e-12);
        assert!((distance(z, foot) - axis.distance_to(z)).abs() < 1e-12);
    }

    #[test]
    fn geodesic_through_two_points() {
        let z = UHPoint { x: -0.4, y: 0.7 };
        let w = UHPoint { x: 1.3, y: 0.2 };
        let g = Geodesic::through(z, w);
        assert!(g.distance_to(z) < 1e-12 && g.distance_to(w) < 1e-12);
        let v = Geodesic::through(UHPoint::i(), UHPoint { x: 0.0, y: 3.0 });
        assert_eq!(v.to, BoundaryPoint::Infinity);
    }

    #[test]
    fn elliptic_fixed_point_is_fixed() {
        let r = MoebiusElement::rotation_about_i(0.4);
        let p = r.elliptic_fixed_point().unwrap();
        assert!(distance(p, UHPoint::i()) < 1e-12);
        let s = m(1.5, 0.3, -0.7, 0.5);
        let g = r.conjugate_by(&s);
        let p = g.elliptic_fixed_point().unwrap();
        assert!(distance(g.apply(p), p) < 1e-12);
    }

    #[test]
    fn renormalizes_determinant() {
        let g = MoebiusElement::new(2.0, 0.0, 0.0, 2.0).unwrap();
        assert!((g.det() - 1.0).abs() < 1e-15);
        assert!(MoebiusElement::new(1.0, 2.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn json_shape() {
        let g = m(2.0, 0.0, 0.0, 0.5);
        let s = serde_json::to_string(&g).unwrap();
        assert!(s.starts_with("[[2.0000000000000000e0,"), "{s}");
        let back: MoebiusElement = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
    }

    fn sl2() -> impl Strategy<Value = MoebiusElement> {
        (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0).prop_filter_map("degenerate", |(a, b, c)| {
            if a.abs() < 0.2 {
                return None;
            }
            MoebiusElement::new(a, b, c, (1.0 + b * c) / a).ok()
        })
    }

    fn point() -> impl Strategy<Value = UHPoint> {
        (-3.0f64..3.0, 0.1f64..3.0).prop_map(|(x, y)| UHPoint { x, y })
    }

    proptest! {
        #[test]
        fn conjugation_preserves_class(g in sl2(), h in sl2()) {
            let k = g.conjugate_by(&h);
            match (classify(&g), classify(&k)) {
                (IsometryClass::Hyperbolic { length: l1, .. }, IsometryClass::Hyperbolic { length: l2, .. }) => {
                    prop_assert!((l1 - l2).abs() < 1e-8 * l1.max(1.0));
                }
                (IsometryClass::Elliptic { theta: t1 }, IsometryClass::Elliptic { theta: t2 }) => {
                    prop_assert!((t1 - t2).abs() < 1e-6 || (t1 + t2 - PI).abs() < 1e-6);
                }
                (a, b) => prop_assert_eq!(a.tag(), b.tag()),
            }
        }

        #[test]
        fn hyperbolic_displacement_bounded_below(g in sl2(), zs in proptest::collection::vec(point(), 50)) {
            prop_assume!(g.trace().abs() > 2.01);
            let ell = translation_length(&g).unwrap();
            for z in zs {
                prop_assert!(distance(z, g.apply(z)) >= ell - 1e-9);
            }
            let axis = g.axis().unwrap();
            let on_axis = axis.foot_of(UHPoint::i());
            prop_assert!((distance(on_axis, g.apply(on_axis)) - ell).abs() < 1e-6);
        }

        #[test]
        fn action_is_isometric(g in sl2(), z in point(), w in point()) {
            let d0 = distance(z, w);
            let d1 = distance(g.apply(z), g.apply(w));
            prop_assert!((d0 - d1).abs() < 1e-9 * d0.max(1.0));
        }

        #[test]
        fn powers_multiply_length(g in sl2(), n in 1i32..=10) {
            prop_assume!(g.trace().abs() > 2.05 && g.trace().abs() < 6.0);
            let ell = translation_length(&g).unwrap();
            let ln = translation_length(&g.pow(n)).unwrap();
            prop_assert!((ln - n as f64 * ell).abs() < 1e-9 * (n as f64 * ell).max(1.0));
        }
    }
}
