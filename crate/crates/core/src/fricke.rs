//! Trace coordinates of generator lists and reconstruction of a group from
//! its single, double and triple traces.
//!
//! With `h₁ = diag(m, 1/m)` the traces `tr hᵢ` and `tr h₁hᵢ` fix the
//! diagonal of every `hᵢ`, and the double and triple traces fix the products
//! `bᵢcⱼ`. Two groups sharing these data therefore differ by a diagonal
//! conjugation `diag(t, 1/t)`, possibly composed with the reflection
//! `diag(1, -1)`. Traces are signed: the matrices are taken as given.

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fuchsian::GroupPresentation;
use crate::hyperbolic::{classify, MoebiusElement};
use crate::io::{ser_vec_f17, F17};

/// Tolerance on trace agreement.
pub const TRACE_TOL: f64 = 1e-9;
/// Off-diagonal entries below this count as zero.
pub const ZERO_TOL: f64 = 1e-12;
/// Relative tolerance on the conjugation ratios.
pub const RATIO_TOL: f64 = 1e-8;
/// Entrywise tolerance for the witness check.
pub const WITNESS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSignature {
    #[serde(serialize_with = "ser_vec_f17")]
    pub singles: Vec<f64>,
    #[serde(serialize_with = "ser_vec_f17")]
    pub doubles: Vec<f64>,
    #[serde(serialize_with = "ser_vec_f17")]
    pub triples: Vec<f64>,
}

impl TraceSignature {
    /// Largest entrywise difference, infinite if the shapes differ.
    pub fn max_diff(&self, other: &TraceSignature) -> f64 {
        let pairs = [
            (&self.singles, &other.singles),
            (&self.doubles, &other.doubles),
            (&self.triples, &other.triples),
        ];
        let mut worst: f64 = 0.0;
        for (a, b) in pairs {
            if a.len() != b.len() {
                return f64::INFINITY;
            }
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).abs() / (1.0 + x.abs().max(y.abs())));
            }
        }
        worst
    }
}

/// `tr hᵢ`, `tr hᵢhⱼ` (i < j) and `tr hᵢhⱼhₖ` (i < j < k) in lexicographic order.
pub fn trace_signature(g: &GroupPresentation) -> TraceSignature {
    let h = &g.generators;
    let n = h.len();
    let mut sig = TraceSignature {
        singles: h.iter().map(MoebiusElement::trace).collect(),
        doubles: Vec::new(),
        triples: Vec::new(),
    };
    for i in 0..n {
        for j in i + 1..n {
            let hij = h[i].mul(&h[j]);
            sig.doubles.push(hij.trace());
            for k in j + 1..n {
                sig.triples.push(hij.mul(&h[k]).trace());
            }
        }
    }
    sig
}

/// Moves the hyperbolic generator of largest `|tr|` to the front and
/// conjugates so that it becomes `diag(m, 1/m)` with `m > 1`.
pub fn normalize(g: &GroupPresentation) -> Result<GroupPresentation> {
    let mut best: Option<(usize, f64)> = None;
    for (i, h) in g.generators.iter().enumerate() {
        if !classify(h).is_hyperbolic() {
            continue;
        }
        let t = h.trace().abs();
        if best.is_none_or(|(_, b)| t > b * (1.0 + 1e-12)) {
            best = Some((i, t));
        }
    }
    let (first, _) = best.ok_or(Error::NoHyperbolicGenerator)?;
    let h1 = g.generators[first];
    let s = h1.axis().expect("hyperbolic").standardizer();
    let mut order = vec![first];
    order.extend((0..g.rank()).filter(|&i| i != first));
    let mut generators = Vec::with_capacity(g.rank());
    for &i in &order {
        let m = g.generators[i].conjugate_by(&s);
        generators.push(if i == first { diagonal_part(m) } else { m });
    }
    let names = order.iter().map(|&i| g.names[i].clone()).collect();
    GroupPresentation::new(generators, names)
}

// Clears the roundoff left off the diagonal and picks the sign with m > 0.
fn diagonal_part(m: MoebiusElement) -> MoebiusElement {
    let s = if m.a < 0.0 { -1.0 } else { 1.0 };
    MoebiusElement {
        a: s * m.a,
        b: 0.0,
        c: 0.0,
        d: s * m.d,
    }
}

/// First generator `diag(m, 1/m)` with `m > 1`.
pub fn is_normalized(g: &GroupPresentation) -> bool {
    g.generators
        .first()
        .is_some_and(|h| h.b.abs() <= ZERO_TOL && h.c.abs() <= ZERO_TOL && h.a > 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub enum EquivalenceWitness {
    /// `s · h'ᵢ · s⁻¹ = hᵢ` with `s = diag(t, 1/t)`.
    Conjugation {
        s: MoebiusElement,
        t_squared: f64,
        residual: f64,
    },
    /// `s · R h'ᵢ R · s⁻¹ = hᵢ` with `R = diag(1, -1)`.
    ConjugationWithReflection {
        s: MoebiusElement,
        t_squared: f64,
        residual: f64,
    },
    NotEquivalent {
        reason: String,
        residual: f64,
    },
}

impl EquivalenceWitness {
    pub fn kind(&self) -> &'static str {
        match self {
            EquivalenceWitness::Conjugation { .. } => "conjugation",
            EquivalenceWitness::ConjugationWithReflection { .. } => "conjugation_reflection",
            EquivalenceWitness::NotEquivalent { .. } => "not_equivalent",
        }
    }

    pub fn is_reflection(&self) -> bool {
        matches!(self, EquivalenceWitness::ConjugationWithReflection { .. })
    }

    pub fn residual(&self) -> f64 {
        match self {
            EquivalenceWitness::Conjugation { residual, .. }
            | EquivalenceWitness::ConjugationWithReflection { residual, .. }
            | EquivalenceWitness::NotEquivalent { residual, .. } => *residual,
        }
    }

    /// Applies the witness to `h`, giving the element it should match in
    /// the other group.
    pub fn transport(&self, h: &MoebiusElement) -> Option<MoebiusElement> {
        match self {
            EquivalenceWitness::Conjugation { s, .. } => Some(h.conjugate_by(s)),
            EquivalenceWitness::ConjugationWithReflection { s, .. } => Some(reflect(h).conjugate_by(s)),
            EquivalenceWitness::NotEquivalent { .. } => None,
        }
    }
}

impl Serialize for EquivalenceWitness {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(4))?;
        map.serialize_entry("kind", self.kind())?;
        match self {
            EquivalenceWitness::Conjugation { t_squared, .. }
            | EquivalenceWitness::ConjugationWithReflection { t_squared, .. } => {
                map.serialize_entry("t_squared", &F17(*t_squared))?;
                map.serialize_entry("residual", &F17(self.residual()))?;
                map.serialize_entry("reason", &Option::<String>::None)?;
            }
            EquivalenceWitness::NotEquivalent { reason, residual } => {
                map.serialize_entry("t_squared", &Option::<f64>::None)?;
                map.serialize_entry("residual", &F17(*residual))?;
                map.serialize_entry("reason", reason)?;
            }
        }
        map.end()
    }
}

// Conjugation by diag(1, -1), i.e. z ↦ -z̄ on both sides.
fn reflect(h: &MoebiusElement) -> MoebiusElement {
    MoebiusElement {
        a: h.a,
        b: -h.b,
        c: -h.c,
        d: h.d,
    }
}

fn entry_diff(x: &MoebiusElement, y: &MoebiusElement) -> f64 {
    (x.a - y.a)
        .abs()
        .max((x.b - y.b).abs())
        .max((x.c - y.c).abs())
        .max((x.d - y.d).abs())
}

/// Finds `s` relating two normalized generator lists with matching traces.
pub fn reconstruct_equivalence(g: &GroupPresentation, h: &GroupPresentation) -> Result<EquivalenceWitness> {
    if g.rank() != h.rank() {
        return Err(Error::InvalidInput(format!(
            "generator counts differ: {} and {}",
            g.rank(),
            h.rank()
        )));
    }
    if !is_normalized(g) || !is_normalized(h) {
        return Err(Error::InvalidInput(
            "both groups must be normalized (first generator diag(m, 1/m), m > 1)".into(),
        ));
    }
    let diff = trace_signature(g).max_diff(&trace_signature(h));
    if !(diff <= TRACE_TOL) {
        return Ok(EquivalenceWitness::NotEquivalent {
            reason: "traces differ".into(),
            residual: diff,
        });
    }
    let (gs, hs) = (&g.generators, &h.generators);
    for i in 1..gs.len() {
        for (name, m) in [("first", &gs[i]), ("second", &hs[i])] {
            let (b0, c0) = (m.b.abs() <= ZERO_TOL, m.c.abs() <= ZERO_TOL);
            if b0 && c0 {
                return Err(Error::OffDiagonalVanishes(format!(
                    "generator {} of the {name} group is diagonal; a second diagonal element would share the axis of the first",
                    i + 1
                )));
            }
            if b0 || c0 {
                return Err(Error::OffDiagonalVanishes(format!(
                    "generator {} of the {name} group has a vanishing off-diagonal entry; the group cannot act properly discontinuously",
                    i + 1
                )));
            }
        }
        let (x, y) = (&gs[i], &hs[i]);
        let dd = (x.a - y.a).abs().max((x.d - y.d).abs());
        if dd > RATIO_TOL * (1.0 + x.a.abs().max(x.d.abs())) {
            return Err(Error::InconsistentRatios(format!(
                "diagonal entries of generator {} differ by {dd:e}",
                i + 1
            )));
        }
    }
    let ratio = (1..gs.len())
        .find(|&i| hs[i].b.abs() > ZERO_TOL)
        .map_or(1.0, |i| gs[i].b / hs[i].b);
    for i in 1..gs.len() {
        let rb = gs[i].b / hs[i].b;
        let rc = hs[i].c / gs[i].c;
        for r in [rb, rc] {
            if (r - ratio).abs() > RATIO_TOL * ratio.abs() {
                return Err(Error::InconsistentRatios(format!(
                    "generator {} gives ratio {r} against {ratio}",
                    i + 1
                )));
            }
        }
    }
    let t = ratio.abs().sqrt();
    let s = MoebiusElement {
        a: t,
        b: 0.0,
        c: 0.0,
        d: 1.0 / t,
    };
    let mut witness = if ratio < 0.0 {
        EquivalenceWitness::ConjugationWithReflection {
            s,
            t_squared: t * t,
            residual: 0.0,
        }
    } else {
        EquivalenceWitness::Conjugation {
            s,
            t_squared: t * t,
            residual: 0.0,
        }
    };
    let residual = gs
        .iter()
        .zip(hs)
        .map(|(x, y)| entry_diff(x, &witness.transport(y).unwrap()))
        .fold(0.0, f64::max);
    if residual > WITNESS_TOL {
        return Err(Error::InconsistentRatios(format!(
            "conjugating by diag({t}, {}) leaves residual {residual:e}",
            1.0 / t
        )));
    }
    match &mut witness {
        EquivalenceWitness::Conjugation { residual: r, .. }
        | EquivalenceWitness::ConjugationWithReflection { residual: r, .. } => *r = residual,
        EquivalenceWitness::NotEquivalent { .. } => unreachable!(),
    }
    Ok(witness)
}
