//! Terms of the trace formula for the heat test function `h(r) = e^{-r²t}`.
//!
//! Eigenvalues are stored as `λ ≥ 0` (the Laplacian's geometric spectrum);
//! the spectral parameter satisfies `r² = λ - 1/4`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fuchsian::{elliptic_data_for_orders, LengthSpectrum, LENGTH_TOL};
use crate::io::ser_f17;
use crate::quadrature::{integrate, Scheme};

/// Absolute tolerance requested from every quadrature.
pub const QUAD_TOL: f64 = 1e-12;
/// Bound on every discarded integral tail.
pub const TAIL_TOL: f64 = 1e-14;

/// `h(r) = e^{-r²t}` for a fixed `t > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatTestFunction {
    t: f64,
}

impl HeatTestFunction {
    pub fn new(t: f64) -> Result<Self> {
        check_t(t)?;
        Ok(HeatTestFunction { t })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn eval(&self, r: f64) -> f64 {
        (-r * r * self.t).exp()
    }
}

fn check_t(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("t = {t} must be positive")))
    }
}

/// Geometric side of the trace formula.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFormulaInput {
    pub area: f64,
    pub cone_orders: Vec<u32>,
    pub spectrum: LengthSpectrum,
    pub length_cutoff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TermBreakdown {
    #[serde(serialize_with = "ser_f17")]
    pub t: f64,
    #[serde(rename = "identity", serialize_with = "ser_f17")]
    pub identity_term: f64,
    #[serde(rename = "elliptic", serialize_with = "ser_f17")]
    pub elliptic_term: f64,
    #[serde(rename = "hyperbolic", serialize_with = "ser_f17")]
    pub hyperbolic_term: f64,
    #[serde(serialize_with = "ser_f17")]
    pub total: f64,
    #[serde(serialize_with = "ser_f17")]
    pub truncation_bound: f64,
}

/// Laplace eigenvalues `λ ≥ 0` with multiplicities, ascending.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpectralData {
    pub eigenvalues: Vec<(f64, u32)>,
}

/// Cut-off `R` with `e^{-R²t}/(2t) < TAIL_TOL`.
pub fn sigma_cutoff(t: f64) -> f64 {
    let arg = (1.0 / (2.0 * t * TAIL_TOL)).ln();
    if arg <= 0.0 {
        // the whole Gaussian mass is already below the tail tolerance
        return 0.0;
    }
    (arg / t).sqrt()
}

fn sigma_scale(t: f64) -> f64 {
    (1.0 / (4.0 * PI * t)).min(PI.sqrt() / 8.0 * t.powf(-1.5))
}

/// `σ(t) = (1/2π) ∫₀^∞ r e^{-r²t} tanh(πr) dr` with the chosen scheme.
pub fn sigma_with(scheme: Scheme, t: f64) -> Result<f64> {
    check_t(t)?;
    let big_r = sigma_cutoff(t);
    if big_r == 0.0 {
        return Ok(0.0);
    }
    let tol = QUAD_TOL.min(1e-14 * 2.0 * PI * sigma_scale(t));
    let est = integrate(scheme, |r| r * (-r * r * t).exp() * (PI * r).tanh(), 0.0, big_r, tol)?;
    Ok(est.value / (2.0 * PI))
}

pub fn sigma(t: f64) -> Result<f64> {
    sigma_with(Scheme::Adaptive, t)
}

/// `area · σ(t)`, the identity contribution `(area/4π) ∫_R r h(r) tanh(πr) dr`.
pub fn identity_term(area: f64, t: f64) -> Result<f64> {
    Ok(area * sigma(t)?)
}

// Integration limits for the elliptic integrand, one per side of zero.
fn elliptic_limits(theta: f64, t: f64) -> (f64, f64) {
    let gauss = {
        // e^{-R²t}/(2Rt) < TAIL_TOL, solved by fixed-point iteration
        let mut r = 1.0f64;
        for _ in 0..50 {
            let arg = (1.0 / (2.0 * r * t * TAIL_TOL)).ln().max(0.0);
            r = (arg / t).sqrt().max(1e-3);
        }
        r
    };
    let expo = |rate: f64| (1.0 / (rate * TAIL_TOL)).ln().max(0.0) / rate;
    (gauss.min(expo(2.0 * PI - 2.0 * theta)), gauss.min(expo(2.0 * theta)))
}

/// `e^{-2θr} / (1 + e^{-2πr})`, written to avoid overflow on both sides.
pub fn elliptic_kernel(theta: f64, r: f64) -> f64 {
    if r >= 0.0 {
        (-2.0 * theta * r).exp() / (1.0 + (-2.0 * PI * r).exp())
    } else {
        ((2.0 * PI - 2.0 * theta) * r).exp() / (1.0 + (2.0 * PI * r).exp())
    }
}

/// `∫_R e^{-2θr}/(1+e^{-2πr}) e^{-r²t} dr`.
pub fn elliptic_integral_with(scheme: Scheme, theta: f64, t: f64) -> Result<f64> {
    check_t(t)?;
    if !(theta > 0.0 && theta < PI) {
        return Err(Error::InvalidInput(format!("theta = {theta} outside (0, π)")));
    }
    let (lo, hi) = elliptic_limits(theta, t);
    let f = |r: f64| elliptic_kernel(theta, r) * (-r * r * t).exp();
    let neg = integrate(scheme, f, -lo, 0.0, 0.5 * QUAD_TOL)?;
    let pos = integrate(scheme, f, 0.0, hi, 0.5 * QUAD_TOL)?;
    Ok(neg.value + pos.value)
}

pub fn elliptic_term_with(scheme: Scheme, cone_orders: &[u32], t: f64) -> Result<f64> {
    check_t(t)?;
    let mut total = 0.0;
    for rec in elliptic_data_for_orders(cone_orders) {
        let w = 1.0 / (2.0 * rec.centralizer_order as f64 * rec.theta.sin());
        total += w * elliptic_integral_with(scheme, rec.theta, t)?;
    }
    Ok(total)
}

/// Sum over elliptic classes, `Σ 1/(2m sin θ) ∫ e^{-2θr}/(1+e^{-2πr}) h(r) dr`.
pub fn elliptic_term(cone_orders: &[u32], t: f64) -> Result<f64> {
    elliptic_term_with(Scheme::Adaptive, cone_orders, t)
}

/// Hyperbolic sum and a bound for the part beyond the spectrum's cutoff.
pub fn hyperbolic_term(spectrum: &LengthSpectrum, t: f64) -> Result<(f64, f64)> {
    hyperbolic_term_to(spectrum, f64::INFINITY, t)
}

/// Like [`hyperbolic_term`], summing only lengths `<= cutoff` and bounding
/// the rest from `cutoff` on. An infinite cutoff keeps every entry and bounds
/// from the larger of the certified cutoff and the last length.
pub fn hyperbolic_term_to(spectrum: &LengthSpectrum, cutoff: f64, t: f64) -> Result<(f64, f64)> {
    check_t(t)?;
    if !(cutoff >= 0.0) {
        return Err(Error::InvalidInput(format!("length cutoff {cutoff} must be >= 0")));
    }
    let pref = 1.0 / (4.0 * PI * t).sqrt();
    let kept: Vec<_> = spectrum.entries.iter().filter(|e| e.length <= cutoff + LENGTH_TOL).collect();
    let mut sum = 0.0;
    for e in &kept {
        let l = e.length;
        sum += e.multiplicity as f64 * e.primitive_length / (2.0 * (0.5 * l).sinh())
            * pref
            * (-l * l / (4.0 * t)).exp();
    }
    let bound = match kept.last() {
        None if cutoff.is_infinite() => 0.0,
        None => pref * (-cutoff * cutoff / (4.0 * t)).exp(),
        Some(last) => {
            let c = if cutoff.is_finite() {
                cutoff
            } else {
                spectrum.certified_cutoff.unwrap_or(last.length).max(last.length)
            };
            let near: u64 = kept
                .iter()
                .filter(|e| e.length >= c - 1.0)
                .map(|e| e.multiplicity as u64)
                .sum();
            near.max(1) as f64 * pref * (-c * c / (4.0 * t)).exp()
        }
    };
    Ok((sum, bound))
}

/// All three terms of the geometric side at `t`.
pub fn geometric_heat_trace(input: &TraceFormulaInput, t: f64) -> Result<TermBreakdown> {
    check_t(t)?;
    if !(input.area >= 0.0) {
        return Err(Error::InvalidInput(format!("area = {} must be positive", input.area)));
    }
    let identity = identity_term(input.area, t)?;
    let elliptic = elliptic_term(&input.cone_orders, t)?;
    let (hyperbolic, truncation_bound) = hyperbolic_term_to(&input.spectrum, input.length_cutoff, t)?;
    Ok(TermBreakdown {
        t,
        identity_term: identity,
        elliptic_term: elliptic,
        hyperbolic_term: hyperbolic,
        total: identity + elliptic + hyperbolic,
        truncation_bound,
    })
}

/// `Σ m e^{-(λ - 1/4) t}`.
pub fn spectral_heat_trace(data: &SpectralData, t: f64) -> Result<f64> {
    check_t(t)?;
    Ok(data
        .eigenvalues
        .iter()
        .map(|&(lambda, m)| m as f64 * (-(lambda - 0.25) * t).exp())
        .sum())
}

/// `c(t) = e^{-t/4} (elliptic + hyperbolic)`; by the trace formula this equals
/// `Σ e^{-λ_n t} - area · σ(t) e^{-t/4}`.
pub fn c_function(input: &TraceFormulaInput, t: f64) -> Result<f64> {
    let e = elliptic_term(&input.cone_orders, t)?;
    let (h, _) = hyperbolic_term_to(&input.spectrum, input.length_cutoff, t)?;
    Ok((-t / 4.0).exp() * (e + h))
}
