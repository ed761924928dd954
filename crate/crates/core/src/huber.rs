//! Inversion of heat-trace data: primitive geodesic lengths from the
//! hyperbolic remainder `f(t)`, then eigenvalues and area from `c(t)`.
//!
//! Both inversions peel exponentials off a positive sum. Each step finds the
//! slowest decay rate `ω` by bisection on the sign of the slope of
//! `ln(f e^{ρ(ω) x})` along the grid, reads off the amplitude, and subtracts
//! the exact term. All arithmetic on the data runs in [`Mp`]; every grid point
//! carries a running bound on its absolute error, and only points standing
//! well above that bound take part in later detections.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fuchsian::{LengthSpectrum, LENGTH_TOL};
use crate::io::ser_f17;
use crate::mp::{self, Mp, DEFAULT_PREC};
use crate::selberg::{self, SpectralData, TraceFormulaInput};

/// Points whose value exceeds their error bound by less than this factor
/// (as a natural log, `ln 1e6`) are treated as noise.
const SNR_LN: f64 = 13.815510557964274;
const MIN_WINDOW: usize = 3;
/// Terms this far (natural log) below a point's error bound are skipped.
const NEGLIGIBLE_LN: f64 = 30.0;
/// Relative stabilisation required of the area over the last grid points.
const AREA_STABILITY: f64 = 1e-6;
const AREA_POINTS: usize = 4;
const ZERO_SNAP: f64 = 1e-9;
const QUARTER_SNAP: f64 = 1e-6;
/// Detections this close to `1/4` are tested for the limit `e^{t/4} c̃(t)`.
const QUARTER_BAND: f64 = 1e-3;
/// Re-detections of a new eigenvalue above 1/4 after each joint refit.
const REDETECT_ROUNDS: usize = 40;
/// A new eigenvalue above 1/4 is kept for the joint refit while its
/// amplitude is this close to an integer; the final check uses `tol`.
const TENTATIVE_TOL: f64 = 0.25;
/// Anchor placements per joint refit above 1/4.
const FIT_ROUNDS: usize = 6;
/// A residual this far (natural log) above the fit errors counts as signal
/// the model leaves out.
const UNEXPLAINED_MARGIN: f64 = 3.0;

/// Whether a heat-trace handle includes the `(4πt)^{-1/2}` prefactor of the
/// trace-formula hyperbolic term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// `Σ m ℓ₀/(2 sinh(ℓ/2)) (4πt)^{-1/2} e^{-ℓ²/4t}`.
    TraceFormula,
    /// The same sum without the prefactor.
    Bare,
}

impl std::str::FromStr for Convention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trace-formula" | "trace_formula" => Ok(Convention::TraceFormula),
            "bare" => Ok(Convention::Bare),
            _ => Err(Error::InvalidInput(format!(
                "unknown convention {s:?} (expected trace-formula or bare)"
            ))),
        }
    }
}

type Evaluator = Arc<dyn Fn(f64) -> Result<(Mp, f64)> + Send + Sync>;

fn pow2_ln(prec: u32) -> f64 {
    -(prec as f64 - 8.0) * std::f64::consts::LN_2
}

/// An evaluable heat-trace remainder `t ↦ f(t)`.
///
/// Evaluation returns the value together with the natural log of a bound on
/// its absolute error.
#[derive(Clone)]
pub struct HeatTraceHandle {
    eval: Evaluator,
    convention: Convention,
    interval: (f64, f64),
    prec: u32,
    length_cutoff: Option<f64>,
    grid: Option<Vec<f64>>,
}

impl std::fmt::Debug for HeatTraceHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HeatTraceHandle")
            .field("convention", &self.convention)
            .field("interval", &self.interval)
            .field("prec", &self.prec)
            .field("length_cutoff", &self.length_cutoff)
            .finish()
    }
}

// `m ℓ₀ / (2 sinh(kℓ₀/2))` in extended precision.
fn length_amplitude(m: u32, l0: &Mp, k: u32) -> Mp {
    let prec = l0.prec();
    let half = l0.mul(&Mp::from_i64(k as i64, prec)).ldexp(-1);
    let e = half.exp();
    let sinh2 = e.sub(&Mp::from_i64(1, prec).div(&e));
    l0.mul(&Mp::from_i64(m as i64, prec)).div(&sinh2)
}

fn ln_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

struct Family {
    l0: Mp,
    rate: Mp,
    rate_f: f64,
    // (k², amplitude, ln amplitude)
    powers: Vec<(u32, Mp, f64)>,
}

impl HeatTraceHandle {
    /// Exact synthetic data from a length spectrum. Each entry contributes
    /// `m ℓ₀/(2 sinh(ℓ/2)) e^{-ℓ²/4t}`; an entry whose length is `k ℓ₀` up to
    /// rounding is evaluated at exactly `k ℓ₀`.
    pub fn from_length_spectrum(spectrum: &LengthSpectrum, convention: Convention, prec: u32) -> Result<Self> {
        let mut families: Vec<Family> = Vec::new();
        for e in &spectrum.entries {
            let k = (e.length / e.primitive_length).round();
            if !(k >= 1.0) || (e.length - k * e.primitive_length).abs() > LENGTH_TOL * k.max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "length {} is not a multiple of its primitive length {}",
                    e.length, e.primitive_length
                )));
            }
            let k = k as u32;
            let idx = match families
                .iter()
                .position(|f| f.l0.to_f64() == e.primitive_length)
            {
                Some(i) => i,
                None => {
                    let l0 = Mp::from_f64(e.primitive_length, prec);
                    let rate = l0.mul(&l0);
                    families.push(Family {
                        rate_f: rate.to_f64(),
                        l0,
                        rate,
                        powers: Vec::new(),
                    });
                    families.len() - 1
                }
            };
            let fam = &mut families[idx];
            let amp = length_amplitude(e.multiplicity, &fam.l0, k);
            let amp_ln = amp.ln_abs_f64();
            fam.powers.push((k * k, amp, amp_ln));
        }
        let cutoff = spectrum
            .certified_cutoff
            .or_else(|| spectrum.entries.last().map(|e| e.length))
            .unwrap_or(0.0);
        let families = Arc::new(families);
        let eval: Evaluator = Arc::new(move |t: f64| {
            let tm = Mp::from_f64(t, prec);
            let x = Mp::from_i64(1, prec).div(&tm.ldexp(2));
            let xf = 0.25 / t;
            let scale_ln = families
                .iter()
                .flat_map(|f| f.powers.iter().map(move |p| p.2 - p.0 as f64 * f.rate_f * xf))
                .fold(f64::NEG_INFINITY, f64::max);
            let floor = scale_ln + pow2_ln(prec) - NEGLIGIBLE_LN;
            let mut sum = Mp::zero(prec);
            for f in families.iter() {
                let mut base: Option<Mp> = None;
                for (k2, amp, amp_ln) in &f.powers {
                    if amp_ln - *k2 as f64 * f.rate_f * xf < floor {
                        continue;
                    }
                    let b = base.get_or_insert_with(|| f.rate.mul(&x).neg().exp());
                    sum = sum.add(&amp.mul(&b.powi(*k2)));
                }
            }
            Ok((sum, scale_ln + pow2_ln(prec)))
        });
        Ok(HeatTraceHandle {
            eval,
            convention: Convention::Bare,
            interval: (0.0, f64::INFINITY),
            prec,
            length_cutoff: Some(cutoff),
            grid: None,
        }
        .with_convention(convention))
    }

    // Re-expresses a bare handle in the requested convention.
    fn with_convention(self, convention: Convention) -> Self {
        if convention == Convention::Bare {
            return self;
        }
        let inner = self.eval.clone();
        let prec = self.prec;
        let eval: Evaluator = Arc::new(move |t: f64| {
            let (v, noise) = inner(t)?;
            let pref = prefactor(t, prec);
            let shift = -(4.0 * PI * t).ln() / 2.0;
            Ok((v.div(&pref), noise + shift))
        });
        HeatTraceHandle {
            eval,
            convention,
            ..self
        }
    }

    /// Wraps an `f64` function valid on `[lo, hi]`. Values are trusted to a
    /// few ulps.
    pub fn from_fn<F>(f: F, convention: Convention, interval: (f64, f64), length_cutoff: Option<f64>) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let prec = DEFAULT_PREC;
        let (lo, hi) = interval;
        let eval: Evaluator = Arc::new(move |t: f64| {
            if !(t >= lo && t <= hi) {
                return Err(Error::InvalidGrid(format!("t = {t} outside [{lo}, {hi}]")));
            }
            let v = f(t);
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("f({t}) = {v} is not finite")));
            }
            let noise = (v.abs() * 4.0 * f64::EPSILON).max(f64::MIN_POSITIVE).ln();
            Ok((Mp::from_f64(v, prec), noise))
        });
        HeatTraceHandle {
            eval,
            convention,
            interval,
            prec,
            length_cutoff,
            grid: None,
        }
    }

    /// Tabulated samples `(t, f)`; only the tabulated `t` may be evaluated.
    pub fn from_samples(samples: Vec<(f64, f64)>, convention: Convention, length_cutoff: Option<f64>) -> Result<Self> {
        let mut samples = samples;
        if samples.is_empty() {
            return Err(Error::InvalidGrid("no samples".into()));
        }
        if samples.iter().any(|&(t, f)| !(t > 0.0 && t.is_finite() && f.is_finite())) {
            return Err(Error::InvalidGrid("samples need positive t and finite f".into()));
        }
        samples.sort_by(|a, b| b.0.total_cmp(&a.0));
        if samples.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidGrid("repeated t in samples".into()));
        }
        let grid: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let interval = (grid[grid.len() - 1], grid[0]);
        let table = Arc::new(samples);
        let prec = DEFAULT_PREC;
        let eval: Evaluator = Arc::new(move |t: f64| {
            let i = table
                .binary_search_by(|s| t.total_cmp(&s.0))
                .map_err(|_| Error::InvalidGrid(format!("t = {t} is not a sample point")))?;
            let v = table[i].1;
            let noise = (v.abs() * 4.0 * f64::EPSILON).max(f64::MIN_POSITIVE).ln();
            Ok((Mp::from_f64(v, prec), noise))
        });
        Ok(HeatTraceHandle {
            eval,
            convention,
            interval,
            prec,
            length_cutoff,
            grid: Some(grid),
        })
    }

    /// Parses `t,f` rows (header optional).
    pub fn from_csv(text: &str, convention: Convention, length_cutoff: Option<f64>) -> Result<Self> {
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || (n == 0 && line.starts_with('t')) {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 2 {
                return Err(Error::Parse(format!("line {}: expected 2 columns", n + 1)));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)));
            rows.push((num(cols[0])?, num(cols[1])?));
        }
        Self::from_samples(rows, convention, length_cutoff)
    }

    pub fn eval(&self, t: f64) -> Result<Mp> {
        Ok((self.eval)(t)?.0)
    }

    pub fn eval_f64(&self, t: f64) -> Result<f64> {
        Ok(self.eval(t)?.to_f64())
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn length_cutoff(&self) -> Option<f64> {
        self.length_cutoff
    }

    /// The sample grid of a tabulated handle, descending.
    pub fn grid(&self) -> Option<&[f64]> {
        self.grid.as_deref()
    }

    // Value and error bound in the bare convention.
    fn eval_bare(&self, t: f64) -> Result<(Mp, f64)> {
        let (v, noise) = (self.eval)(t)?;
        match self.convention {
            Convention::Bare => Ok((v, noise)),
            Convention::TraceFormula => {
                let v = v.with_prec(self.prec).mul(&prefactor(t, self.prec));
                Ok((v, noise + (4.0 * PI * t).ln() / 2.0))
            }
        }
    }
}

// sqrt(4πt)
fn prefactor(t: f64, prec: u32) -> Mp {
    mp::pi(prec).mul(&Mp::from_f64(t, prec)).ldexp(2).sqrt()
}

/// `c(t) = Σ m e^{-λt} - area σ(t) e^{-t/4}` as an evaluable function.
#[derive(Clone)]
pub struct CFunctionHandle {
    eval: Evaluator,
    prec: u32,
}

impl std::fmt::Debug for CFunctionHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CFunctionHandle").field("prec", &self.prec).finish()
    }
}

impl CFunctionHandle {
    /// The geometric side, `e^{-t/4}` times the elliptic plus hyperbolic
    /// terms, in `f64`. Large `t` needs lengths far beyond any enumerable
    /// cutoff, so this route only reaches eigenvalues visible at small `t`.
    pub fn from_geometry(spectrum: &LengthSpectrum, cone_orders: &[u32]) -> Self {
        let input = TraceFormulaInput {
            area: 0.0,
            cone_orders: cone_orders.to_vec(),
            spectrum: spectrum.clone(),
            length_cutoff: spectrum.certified_cutoff.unwrap_or(f64::INFINITY),
        };
        let prec = DEFAULT_PREC;
        let eval: Evaluator = Arc::new(move |t: f64| {
            let v = selberg::c_function(&input, t)?;
            let (_, bound) = selberg::hyperbolic_term_to(&input.spectrum, input.length_cutoff, t)?;
            // quadrature is absolute to about 1e-12 on the elliptic integrals
            let abs = (1e-12 * (1 + input.cone_orders.len()) as f64 + bound) * (-t / 4.0).exp();
            let noise = (v.abs() * 1e-13 + abs).max(f64::MIN_POSITIVE).ln();
            Ok((Mp::from_f64(v, prec), noise))
        });
        CFunctionHandle { eval, prec }
    }

    /// Exact `c(t)` built from eigenvalues and area, with `σ(t)` from
    /// [`selberg::sigma`].
    pub fn from_spectral_data(data: &SpectralData, area: f64, prec: u32) -> Result<Self> {
        if !(area >= 0.0 && area.is_finite()) {
            return Err(Error::InvalidInput(format!("area = {area} must be non-negative")));
        }
        for &(l, m) in &data.eigenvalues {
            if !(l >= 0.0 && l.is_finite()) || m == 0 {
                return Err(Error::InvalidInput(format!("invalid eigenvalue ({l}, {m})")));
            }
        }
        let eigen: Arc<Vec<(Mp, f64, Mp)>> = Arc::new(
            data.eigenvalues
                .iter()
                .map(|&(l, m)| (Mp::from_f64(l, prec), l, Mp::from_i64(m as i64, prec)))
                .collect(),
        );
        let eval: Evaluator = Arc::new(move |t: f64| {
            let tm = Mp::from_f64(t, prec);
            let sig = selberg::sigma(t)?;
            let mut lns: Vec<f64> = eigen
                .iter()
                .map(|(_, l, m)| m.ln_abs_f64() - l * t)
                .collect();
            let id_ln = if area > 0.0 && sig > 0.0 {
                (area * sig).ln() - t / 4.0
            } else {
                f64::NEG_INFINITY
            };
            lns.push(id_ln);
            let scale_ln = lns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let floor = scale_ln + pow2_ln(prec) - NEGLIGIBLE_LN;
            let mut sum = Mp::zero(prec);
            for (i, (l, _, m)) in eigen.iter().enumerate() {
                if lns[i] < floor {
                    continue;
                }
                sum = sum.add(&m.mul(&l.mul(&tm).neg().exp()));
            }
            if id_ln > floor {
                let e = tm.ldexp(-2).neg().exp();
                sum = sum.sub(&e.mul(&Mp::from_f64(area, prec)).mul(&Mp::from_f64(sig, prec)));
            }
            Ok((sum, scale_ln + pow2_ln(prec)))
        });
        Ok(CFunctionHandle { eval, prec })
    }

    pub fn eval(&self, t: f64) -> Result<Mp> {
        Ok((self.eval)(t)?.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Rate {
    /// `ρ = ω²`, for lengths against `x = 1/4t`.
    Squared,
    /// `ρ = ω`, for eigenvalues against `x = t`.
    Linear,
}

impl Rate {
    fn of(self, w: &Mp) -> Mp {
        match self {
            Rate::Squared => w.mul(w),
            Rate::Linear => w.clone(),
        }
    }

    fn omega(self, rho: f64) -> f64 {
        match self {
            Rate::Squared => rho.max(0.0).sqrt(),
            Rate::Linear => rho,
        }
    }

    fn domega(self, omega: f64, drho: f64) -> f64 {
        match self {
            Rate::Squared if omega > 0.0 => (drho / (2.0 * omega)).min(drho.sqrt()),
            Rate::Squared => drho.sqrt(),
            Rate::Linear => drho,
        }
    }
}

#[derive(Debug, Clone)]
struct Detection {
    omega: f64,
    omega_mp: Mp,
    delta: f64,
    pair: (usize, usize),
    window: (usize, usize),
    iterations: u32,
}

enum Outcome {
    Found(Detection),
    NoSignal,
    Negative,
}

/// Residual data on an ascending `x` grid with per-point error bounds.
#[derive(Clone)]
struct Peeler {
    x: Vec<Mp>,
    xf: Vec<f64>,
    r: Vec<Mp>,
    noise_ln: Vec<f64>,
    prec: u32,
}

impl Peeler {
    fn significant(&self, i: usize) -> bool {
        !self.r[i].is_zero() && self.r[i].ln_abs_f64() - self.noise_ln[i] > SNR_LN
    }

    fn add_noise(&mut self, i: usize, ln_err: f64) {
        self.noise_ln[i] = ln_sum_exp(self.noise_ln[i], ln_err);
    }

    /// Locates the slowest decay rate of the residual. With `strict`, a local
    /// decay rate that grows towards the limit is an error; otherwise the
    /// window is trimmed to its monotone tail.
    fn detect(&self, rate: Rate, strict: bool) -> Result<Outcome> {
        let n = self.r.len();
        let Some(j) = (0..n).rev().find(|&i| self.significant(i)) else {
            return Ok(Outcome::NoSignal);
        };
        if self.r[j].is_negative() {
            return Ok(Outcome::Negative);
        }
        let mut i0 = j;
        while i0 > 0 && self.significant(i0 - 1) && self.r[i0 - 1].is_positive() {
            i0 -= 1;
        }
        if j + 1 - i0 < MIN_WINDOW {
            return Ok(Outcome::NoSignal);
        }
        let lnr: Vec<f64> = (0..n).map(|i| self.r[i].ln_abs_f64()).collect();
        // q[k]: decay rate of the pair (k, k+1), qn[k]: its noise
        let mut q = vec![0.0; n];
        let mut qn = vec![0.0; n];
        for k in i0..j {
            let dx = self.xf[k + 1] - self.xf[k];
            q[k] = (lnr[k] - lnr[k + 1]) / dx;
            let rel = (self.noise_ln[k] - lnr[k]).exp() + (self.noise_ln[k + 1] - lnr[k + 1]).exp();
            let rounding = 4.0 * f64::EPSILON * (lnr[k].abs() + lnr[k + 1].abs() + 1.0);
            qn[k] = (rel + rounding) / dx;
        }
        let mut start = i0;
        for k in (i0 + 1..j).rev() {
            let slack = 4.0 * (qn[k] + qn[k - 1]) + 1e-9 * q[k - 1].abs();
            if q[k] > q[k - 1] + slack {
                if strict {
                    return Err(Error::BisectionFailure(format!(
                        "limit classifier is not monotone: local decay rate rises from {:.6e} to {:.6e} \
                         between x = {:.6e} and x = {:.6e}",
                        q[k - 1],
                        q[k],
                        self.xf[k - 1],
                        self.xf[k + 1]
                    )));
                }
                start = k;
                break;
            }
        }
        if j + 1 - start < MIN_WINDOW {
            return Ok(Outcome::NoSignal);
        }
        // the same rates in full precision, for bias estimates below f64 resolution
        let prec = self.prec;
        let lnr_mp: Vec<Mp> = (0..n)
            .map(|i| if i >= start && i <= j { self.r[i].ln() } else { Mp::zero(prec) })
            .collect();
        let mut q_mp = vec![Mp::zero(prec); n];
        for k in start..j {
            let dx = self.x[k + 1].sub(&self.x[k]);
            q_mp[k] = lnr_mp[k].sub(&lnr_mp[k + 1]).div(&dx);
            let rel = (self.noise_ln[k] - lnr[k]).exp() + (self.noise_ln[k + 1] - lnr[k + 1]).exp();
            let rounding = pow2_ln(prec).exp() * (lnr[k].abs() + lnr[k + 1].abs() + 1.0);
            qn[k] = (rel + rounding) / (self.xf[k + 1] - self.xf[k]);
        }
        let (k_best, u_best) = self.best_pair(&q_mp, &qn, start, j);
        let (a, b) = (k_best, k_best + 1);
        let omega_est = rate.omega(q[k_best]);
        let delta = rate.domega(omega_est, u_best);

        let dln = lnr_mp[b].sub(&lnr_mp[a]);
        let dx = self.x[b].sub(&self.x[a]);
        let d = |w: &Mp| dln.add(&rate.of(w).mul(&dx));
        let lo0 = Mp::zero(prec);
        if !d(&lo0).is_negative() {
            if rate == Rate::Linear {
                return Ok(Outcome::Found(Detection {
                    omega: 0.0,
                    omega_mp: lo0,
                    delta,
                    pair: (a, b),
                    window: (start, j),
                    iterations: 0,
                }));
            }
            return Err(Error::BisectionFailure(format!(
                "residual does not decay between x = {:.6e} and x = {:.6e}",
                self.xf[a], self.xf[b]
            )));
        }
        let rho_guess = (-lnr[j] / self.xf[j]).max(q[k_best]).max(1e-6);
        let mut hi = Mp::from_f64((2.0 * rate.omega(rho_guess)).clamp(1e-3, 1e6), prec);
        let mut doublings = 0;
        while !d(&hi).is_positive() {
            doublings += 1;
            if doublings > 60 {
                return Err(Error::BisectionFailure("no upper bracket for the decay rate".into()));
            }
            hi = hi.ldexp(1);
        }
        let mut lo = lo0;
        let floor = 2f64.powi(-(prec as i32 - 24));
        let target = (delta / 64.0).max(floor * omega_est.abs().max(1.0));
        let mut iterations = 0u32;
        while iterations < prec + 64 {
            let width = hi.sub(&lo).to_f64();
            if width <= target {
                break;
            }
            let mid = lo.add(&hi).ldexp(-1);
            if d(&mid).is_negative() {
                lo = mid;
            } else {
                hi = mid;
            }
            iterations += 1;
        }
        let w = lo.add(&hi).ldexp(-1);
        let omega = w.to_f64();
        let delta = delta.max(hi.sub(&lo).to_f64()).max(floor * omega.abs());
        Ok(Outcome::Found(Detection {
            omega,
            omega_mp: w,
            delta,
            pair: (a, b),
            window: (start, j),
            iterations,
        }))
    }

    /// The pair whose rate has the smallest combined noise and bias. Bias is
    /// extrapolated from two earlier pairs at `x` roughly `0.8` and `0.64`
    /// times the candidate's, assuming a single exponential correction.
    fn best_pair(&self, q: &[Mp], qn: &[f64], start: usize, j: usize) -> (usize, f64) {
        let find_before = |k: usize, ratio: f64| -> Option<usize> {
            let target = self.xf[k] * ratio;
            (start..k).rev().find(|&i| self.xf[i] <= target)
        };
        // local rates of a positive exponential sum fall towards the slowest
        // rate, so the drop to any later pair bounds the bias from below
        let qf: Vec<f64> = q.iter().map(Mp::to_f64).collect();
        let mut floor = vec![f64::INFINITY; j + 1];
        for k in (start..j).rev() {
            floor[k] = floor[k + 1].min(qf[k] + 2.0 * qn[k]);
        }
        let mut best: Option<(usize, f64)> = None;
        for k in start..j {
            let Some(k1) = find_before(k, 0.8) else { continue };
            let Some(k2) = find_before(k1, 0.8) else { continue };
            let d1 = q[k1].sub(&q[k]).to_f64();
            let d2 = q[k2].sub(&q[k1]).to_f64();
            let noise = qn[k] + qn[k1] + qn[k2];
            let bias = if d1.abs() <= 2.0 * noise {
                d1.abs() + 2.0 * noise
            } else {
                let ratio = d2 / d1;
                if ratio > 1.1 {
                    2.0 * d1.abs() / (ratio - 1.0)
                } else {
                    // not yet in the single-exponential regime
                    10.0 * (d1.abs() + d2.abs())
                }
            };
            let u = qn[k] + bias.max(qf[k] - floor[k]);
            if best.is_none_or(|(_, bu)| u < bu) {
                best = Some((k, u));
            }
        }
        best.unwrap_or_else(|| {
            let k = j - 1;
            (k, qn[k] + q[start].sub(&q[k]).to_f64().abs())
        })
    }

    fn amplitude(&self, rate: Rate, w: &Mp, i: usize) -> Mp {
        self.r[i].mul(&rate.of(w).mul(&self.x[i]).exp())
    }

    /// Subtracts `Σ_k amp_k e^{-rho_k x}` where `rho_k = k² rho_1`.
    /// `sens[k]` holds `|∂ ln amp_k/∂ω|` and `|∂ rho_k/∂ω|`.
    fn subtract(&mut self, rho1: &Mp, terms: &[(u32, Mp, f64, f64)], delta: f64) {
        let rho_f = rho1.to_f64();
        let eps_ln = pow2_ln(self.prec);
        for i in 0..self.r.len() {
            let mut base: Option<Mp> = None;
            for (k2, amp, dln_amp, drho) in terms {
                let term_ln = amp.ln_abs_f64() - *k2 as f64 * rho_f * self.xf[i];
                if term_ln < self.noise_ln[i] - NEGLIGIBLE_LN {
                    continue;
                }
                let b = base.get_or_insert_with(|| rho1.mul(&self.x[i]).neg().exp());
                let term = amp.mul(&b.powi(*k2));
                self.r[i] = self.r[i].sub(&term);
                let sens = (dln_amp + self.xf[i] * drho) * delta;
                let err_ln = term_ln + (sens + eps_ln.exp()).ln();
                self.add_noise(i, err_ln);
            }
        }
    }

    fn max_abs(&self) -> Mp {
        let mut m = Mp::zero(self.prec);
        for r in &self.r {
            if r.abs().cmp_mp(&m).is_gt() {
                m = r.abs();
            }
        }
        m
    }
}

/// One primitive length found by [`extract_lengths`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtractedLength {
    #[serde(serialize_with = "ser_f17")]
    pub primitive_length: f64,
    pub multiplicity: u32,
}

/// Per-step record of an extraction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractionStep {
    #[serde(serialize_with = "ser_f17")]
    pub length: f64,
    #[serde(serialize_with = "ser_f17")]
    pub uncertainty: f64,
    #[serde(serialize_with = "ser_f17")]
    pub multiplicity_raw: f64,
    #[serde(serialize_with = "ser_f17")]
    pub deviation: f64,
    pub powers_removed: u32,
    /// `t` range of the points used, largest first.
    #[serde(serialize_with = "crate::io::ser_vec_f17")]
    pub window_t: Vec<f64>,
    #[serde(serialize_with = "crate::io::ser_vec_f17")]
    pub pair_t: Vec<f64>,
    pub bisection_steps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractionResult {
    pub lengths: Vec<ExtractedLength>,
    /// `max |f_remaining(t)|` over the grid, in the handle's convention.
    #[serde(serialize_with = "ser_f17")]
    pub residual_norm: f64,
    pub diagnostics: Vec<ExtractionStep>,
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol < 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("tol = {tol} must lie in (0, 0.5)")))
    }
}

fn check_grid(grid: &[f64], descending: bool) -> Result<()> {
    if grid.len() < MIN_WINDOW + 2 {
        return Err(Error::InvalidGrid(format!("{} points; need at least {}", grid.len(), MIN_WINDOW + 2)));
    }
    if grid.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidGrid("grid points must be positive and finite".into()));
    }
    let ordered = grid
        .windows(2)
        .all(|w| if descending { w[0] > w[1] } else { w[0] < w[1] });
    if !ordered {
        let dir = if descending { "descending" } else { "ascending" };
        return Err(Error::InvalidGrid(format!("grid must be strictly {dir}")));
    }
    Ok(())
}

/// `n` log-spaced points from `a` to `b` inclusive.
pub fn log_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && a > 0.0 && b > 0.0);
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|i| {
            if i == n - 1 {
                b
            } else {
                (la + (lb - la) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Descending grid for [`extract_lengths`]: `t` from 10 down to `1e-4`.
pub fn default_length_grid() -> Vec<f64> {
    log_grid(10.0, 1e-4, 240)
}

/// Ascending grid for [`recover_spectrum`]: `t` from `0.05` up to 1500.
pub fn default_spectral_grid() -> Vec<f64> {
    log_grid(0.05, 1500.0, 400)
}

fn length_peeler(f: &HeatTraceHandle, t_grid: &[f64]) -> Result<Peeler> {
    check_grid(t_grid, true)?;
    let decades = (t_grid[0] / t_grid[t_grid.len() - 1]).log10();
    if decades < 4.0 - 1e-9 {
        return Err(Error::GridTooShort(format!(
            "t grid spans {decades:.3} decades; at least 4 are needed"
        )));
    }
    let prec = f.prec;
    let mut x = Vec::with_capacity(t_grid.len());
    let mut xf = Vec::with_capacity(t_grid.len());
    let mut r = Vec::with_capacity(t_grid.len());
    let mut noise_ln = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let (v, noise) = f.eval_bare(t)?;
        x.push(Mp::from_i64(1, prec).div(&Mp::from_f64(t, prec).ldexp(2)));
        xf.push(0.25 / t);
        r.push(v.with_prec(prec));
        noise_ln.push(noise);
    }
    Ok(Peeler {
        x,
        xf,
        r,
        noise_ln,
        prec,
    })
}

/// Limit class of `f(t) e^{ω²/4t}` as `t ↓ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitClass {
    Zero,
    Finite,
    Infinite,
}

/// Classifies `ω` by the slope of `ln(f e^{ω²/4t})` between the two smallest
/// `t` where `f` is resolved.
pub fn classify_omega(f: &HeatTraceHandle, t_grid: &[f64], omega: f64) -> Result<LimitClass> {
    let p = length_peeler(f, t_grid)?;
    let Some(j) = (0..p.r.len()).rev().find(|&i| p.significant(i)) else {
        return Err(Error::BisectionFailure("no signal".into()));
    };
    if j == 0 || !p.significant(j - 1) || !p.r[j].is_positive() || !p.r[j - 1].is_positive() {
        return Err(Error::BisectionFailure("no resolved pair at small t".into()));
    }
    let rho = omega * omega;
    let g = |i: usize| p.r[i].ln_abs_f64() + rho * p.xf[i];
    let slope = (g(j) - g(j - 1)) / (p.xf[j] - p.xf[j - 1]);
    let tol = 1e-9 * rho.max(1.0);
    Ok(if slope.abs() <= tol {
        LimitClass::Finite
    } else if slope < 0.0 {
        LimitClass::Zero
    } else {
        LimitClass::Infinite
    })
}

/// Extracts the `count` shortest primitive lengths with multiplicities.
///
/// `t_grid` is descending and must span at least four decades. A length is
/// accepted when `A · 2 sinh(ℓ/2)/ℓ` is within `tol` of a positive integer,
/// `A` being the limit of `f(t) e^{ℓ²/4t}` in the bare convention.
pub fn extract_lengths(f: &HeatTraceHandle, count: usize, t_grid: &[f64], tol: f64) -> Result<ExtractionResult> {
    check_tol(tol)?;
    let mut p = length_peeler(f, t_grid)?;
    let prec = p.prec;
    let mut lengths: Vec<ExtractedLength> = Vec::new();
    let mut diagnostics = Vec::new();
    // after each length the ones found so far are refitted jointly against
    // the data, so that their detection errors do not bury the next one
    let base = p.r.clone();
    let base_noise = p.noise_ln.clone();
    let mut fit = JointFit::lengths(f.length_cutoff, prec);
    for _ in 0..count {
        let det = match p.detect(Rate::Squared, true)? {
            Outcome::Found(d) => d,
            Outcome::NoSignal => {
                return Err(Error::BisectionFailure(format!(
                    "no signal left above the noise floor after {} length(s)",
                    lengths.len()
                )))
            }
            Outcome::Negative => {
                return Err(Error::BisectionFailure(
                    "leading term is negative; data is not a positive sum of Gaussians".into(),
                ))
            }
        };
        let l = det.omega;
        if let Some(prev) = lengths.last() {
            if l <= prev.primitive_length + 1e-6 {
                return Err(Error::BisectionFailure(format!(
                    "length {l} re-detected after {}",
                    prev.primitive_length
                )));
            }
        }
        let l_mp = det.omega_mp.clone();
        let amp = p.amplitude(Rate::Squared, &l_mp, det.pair.1);
        let raw = amp.div(&length_amplitude(1, &l_mp, 1)).to_f64();
        let m = raw.round();
        let deviation = (raw - m).abs();
        if deviation > tol || m < 1.0 {
            return Err(Error::NonIntegerMultiplicity {
                value: raw,
                deviation,
                tol,
                rate: l,
            });
        }
        let m = m as u32;
        // the primitive and every power inside the working range
        let mut terms = Vec::new();
        let mut k = 1u32;
        loop {
            let kl = k as f64 * l;
            let within = match f.length_cutoff {
                Some(c) => kl <= c + LENGTH_TOL,
                None => {
                    let amp_ln = (m as f64 * l).ln() - (2.0 * (0.5 * kl).sinh()).ln();
                    let rho = (k * k) as f64 * l * l;
                    (0..p.r.len()).any(|i| amp_ln - rho * p.xf[i] > p.noise_ln[i] - NEGLIGIBLE_LN)
                }
            };
            if !within || k > 10_000 {
                break;
            }
            let amp_k = length_amplitude(m, &l_mp, k);
            let half = 0.5 * kl;
            let dln_amp = 1.0 / l + 0.5 * k as f64 / half.tanh();
            let drho = 2.0 * (k * k) as f64 * l;
            terms.push((k * k, amp_k, dln_amp, drho));
            k += 1;
        }
        p.subtract(&l_mp.mul(&l_mp), &terms, det.delta);
        let tg = |i: usize| 0.25 / p.xf[i];
        diagnostics.push(ExtractionStep {
            length: l,
            uncertainty: det.delta,
            multiplicity_raw: raw,
            deviation,
            powers_removed: terms.len() as u32,
            window_t: vec![tg(det.window.0), tg(det.window.1)],
            pair_t: vec![tg(det.pair.0), tg(det.pair.1)],
            bisection_steps: det.iterations,
        });
        lengths.push(ExtractedLength {
            primitive_length: l,
            multiplicity: m,
        });
        fit.params.push(l_mp);
        fit.deltas.push(det.delta);
        fit.mults.push(m);
        fit.pairs.push(det.pair.1);
        if fit.refine(&p.x, &base, &base_noise) {
            fit.rebuild(&mut p, &base, &base_noise, None);
            for (k, (len, step)) in lengths.iter_mut().zip(diagnostics.iter_mut()).enumerate() {
                len.primitive_length = fit.params[k].to_f64();
                step.length = len.primitive_length;
                step.uncertainty = fit.deltas[k];
            }
        }
    }
    let residual_norm = match f.convention {
        Convention::Bare => p.max_abs().to_f64(),
        Convention::TraceFormula => (0..p.r.len())
            .map(|i| {
                let t = t_grid[i];
                p.r[i].abs().div(&prefactor(t, prec)).to_f64()
            })
            .fold(0.0, f64::max),
    };
    Ok(ExtractionResult {
        lengths,
        residual_norm,
        diagnostics,
    })
}

// Whether `e^{t/4}` times the residual settles on a positive integer over
// the last grid points.
fn quarter_limit(p: &Peeler, tol: f64) -> Option<usize> {
    // the last points may be swamped by the error of earlier subtractions
    let idx: Vec<usize> = (0..p.r.len()).rev().filter(|&i| p.significant(i)).take(AREA_POINTS).collect();
    if idx.len() < AREA_POINTS {
        return None;
    }
    let quarter = Mp::from_f64(0.25, p.prec);
    let vals: Vec<f64> = idx.iter().map(|&i| p.amplitude(Rate::Linear, &quarter, i).to_f64()).collect();
    let last = vals[0];
    let m = last.round();
    (m >= 1.0 && (last - m).abs() <= tol && vals.iter().all(|v| (v - last).abs() <= tol)).then_some(idx[0])
}

// The two kinds of data refitted jointly.
enum Model {
    // `-A s(t) + Σ m_k e^{-λ_k t}` with `s(t) = e^{-t/4} σ(t)`; unknown 0 is
    // the area `A`, the rest are the eigenvalues
    Spectral { s: Vec<Mp>, s_ln: Vec<f64> },
    // `Σ_k m ℓ/(2 sinh(kℓ/2)) e^{-k²ℓ²x}` per primitive length `ℓ`, powers
    // up to `cutoff` or down to the noise
    Lengths { cutoff: Option<f64> },
}

// Joint refit of everything found so far, each unknown pinned by an exact
// fit at one anchor point, so that the detection bias of earlier terms does
// not mask later ones.
struct JointFit {
    model: Model,
    area: Mp,
    area_delta: f64,
    // eigenvalues or primitive lengths
    params: Vec<Mp>,
    deltas: Vec<f64>,
    mults: Vec<u32>,
    // last point of the latest detection pair, the first anchor guess
    pairs: Vec<usize>,
    // anchors of the last fit, one per unknown
    anchors: Vec<usize>,
    // index of the diagnostics entry of each parameter
    steps: Vec<usize>,
}

impl JointFit {
    fn spectral(s: Vec<Mp>, s_ln: Vec<f64>, area: Mp, area_delta: f64) -> Self {
        Self::new(Model::Spectral { s, s_ln }, area, area_delta)
    }

    fn lengths(cutoff: Option<f64>, prec: u32) -> Self {
        Self::new(Model::Lengths { cutoff }, Mp::zero(prec), 0.0)
    }

    fn new(model: Model, area: Mp, area_delta: f64) -> Self {
        JointFit {
            model,
            area,
            area_delta,
            params: Vec::new(),
            deltas: Vec::new(),
            mults: Vec::new(),
            pairs: Vec::new(),
            anchors: Vec::new(),
            steps: Vec::new(),
        }
    }

    // number of unknowns ahead of the parameters
    fn off(&self) -> usize {
        match self.model {
            Model::Spectral { .. } => 1,
            Model::Lengths { .. } => 0,
        }
    }

    fn dim(&self) -> usize {
        self.params.len() + self.off()
    }

    fn theta(&self) -> Vec<Mp> {
        let area = (self.off() == 1).then(|| self.area.clone());
        area.into_iter().chain(self.params.iter().cloned()).collect()
    }

    fn theta_deltas(&self) -> Vec<f64> {
        let area = (self.off() == 1).then_some(self.area_delta);
        area.into_iter().chain(self.deltas.iter().cloned()).collect()
    }

    // decay rate in `x` of a parameter with value `v`
    fn rate(&self, v: f64) -> f64 {
        match self.model {
            Model::Spectral { .. } => v,
            Model::Lengths { .. } => v * v,
        }
    }

    // ln of the leading amplitude of parameter `k` at value `v`
    fn amp_ln(&self, k: usize, v: f64) -> f64 {
        let m = self.mults[k] as f64;
        match self.model {
            Model::Spectral { .. } => m.ln(),
            Model::Lengths { .. } => (m * v).ln() - (2.0 * (0.5 * v).sinh()).ln(),
        }
    }

    // ln of |∂ model / ∂ unknown u| at point `i`
    fn sens_ln(&self, u: usize, xf: f64, i: usize) -> f64 {
        if let (Model::Spectral { s_ln, .. }, 0) = (&self.model, u) {
            return s_ln[i];
        }
        let k = u - self.off();
        let v = self.params[k].to_f64();
        let d_rate = match self.model {
            Model::Spectral { .. } => 1.0,
            Model::Lengths { .. } => 2.0 * v,
        };
        self.amp_ln(k, v) + (d_rate * xf).ln() - self.rate(v) * xf
    }

    // Value of unknown `u` at `v` in the model at point `i`, with its
    // derivative; terms below `floor_ln` are dropped.
    fn term(&self, u: usize, v: &Mp, x: &Mp, xf: f64, i: usize, floor_ln: f64) -> (Mp, Mp) {
        let prec = x.prec();
        match &self.model {
            Model::Spectral { s, .. } if u == 0 => (v.mul(&s[i]).neg(), s[i].neg()),
            Model::Spectral { .. } => {
                let k = u - 1;
                let t = Mp::from_i64(self.mults[k] as i64, prec).mul(&v.mul(x).neg().exp());
                let d = t.mul(x).neg();
                (t, d)
            }
            Model::Lengths { cutoff } => {
                let l = v.to_f64();
                let m = self.mults[u];
                let ml = v.mul(&Mp::from_i64(m as i64, prec));
                let mut val = Mp::zero(prec);
                let mut der = Mp::zero(prec);
                // e^{-k²ℓ²x} and e^{-kℓ/2} by recurrence in k
                let a = v.mul(v).mul(x).neg().exp();
                let a2 = a.mul(&a);
                let h = v.ldexp(-1).neg().exp();
                let one = Mp::from_i64(1, prec);
                let mut g = a.clone();
                let mut step = a;
                let mut hk = h.clone();
                for k in 1u32..10_000 {
                    let kl = k as f64 * l;
                    let ln_term = (m as f64 * l).ln() - (2.0 * (0.5 * kl).sinh()).ln() - kl * kl * xf;
                    let within = cutoff.is_none_or(|c| kl <= c + LENGTH_TOL);
                    if !within || ln_term < floor_ln {
                        break;
                    }
                    if k > 1 {
                        step = step.mul(&a2);
                        g = g.mul(&step);
                        hk = hk.mul(&h);
                    }
                    // m ℓ / (2 sinh(kℓ/2)) = m ℓ h^k / (1 - h^{2k})
                    let h2k = hk.mul(&hk);
                    let denom = one.sub(&h2k);
                    let t = ml.mul(&hk).div(&denom).mul(&g);
                    // d ln(amp e^{-k²ℓ²x}) / dℓ = 1/ℓ - (k/2) coth(kℓ/2) - 2k²ℓx,
                    // in full precision: the anchors span a huge dynamic range
                    let kk = Mp::from_i64(k as i64, prec);
                    let coth = one.add(&h2k).div(&denom);
                    let dln = one
                        .div(v)
                        .sub(&kk.mul(&coth).ldexp(-1))
                        .sub(&kk.mul(&kk).mul(v).mul(x).ldexp(1));
                    der = der.add(&t.mul(&dln));
                    val = val.add(&t);
                }
                (val, der)
            }
        }
    }

    // whether unknown `u` is below the noise at point `i`
    fn negligible(&self, u: usize, v: f64, xf: f64, noise_ln: f64) -> bool {
        if u < self.off() {
            return false;
        }
        let k = u - self.off();
        self.amp_ln(k, v) - self.rate(v) * xf < noise_ln - NEGLIGIBLE_LN
    }

    // Newton on the model at the anchors.
    fn solve(&self, x: &[Mp], xf: &[f64], base: &[Mp], base_noise: &[f64], anchors: &[usize], start: &[Mp]) -> Option<Vec<Mp>> {
        let dim = start.len();
        let prec = base[0].prec();
        let eps = 2f64.powi(-(prec as i32 - 40));
        let mut theta = start.to_vec();
        let mut prev = f64::INFINITY;
        for _ in 0..40 {
            let mut f = vec![Mp::zero(prec); dim];
            let mut jac = vec![vec![Mp::zero(prec); dim]; dim];
            for (row, &a) in anchors.iter().enumerate() {
                let mut model = Mp::zero(prec);
                for col in 0..dim {
                    let (t, d) = self.term(col, &theta[col], &x[a], xf[a], a, base_noise[a] - NEGLIGIBLE_LN);
                    jac[row][col] = d;
                    model = model.add(&t);
                }
                f[row] = model.sub(&base[a]);
            }
            let step = solve_linear(jac, f)?;
            let mut size = 0.0f64;
            for col in 0..dim {
                let scale = if col < self.off() { theta[col].to_f64().abs().max(1.0) } else { 1.0 };
                size = size.max(step[col].to_f64().abs() / scale);
            }
            // a step this large has left the region where the model is linear
            if !(size < 0.05) {
                return None;
            }
            for col in 0..dim {
                theta[col] = theta[col].sub(&step[col]);
            }
            if size <= eps || (size >= 0.5 * prev && size < 1e-30) {
                return Some(theta);
            }
            prev = size;
        }
        None
    }

    fn residual(&self, x: &[Mp], xf: &[f64], base: &[Mp], base_noise: &[f64], theta: &[Mp]) -> Vec<Mp> {
        (0..base.len())
            .map(|i| {
                let mut r = base[i].clone();
                for (u, v) in theta.iter().enumerate() {
                    if !self.negligible(u, v.to_f64(), xf[i], base_noise[i]) {
                        r = r.sub(&self.term(u, v, &x[i], xf[i], i, base_noise[i] - NEGLIGIBLE_LN).0);
                    }
                }
                r
            })
            .collect()
    }

    // Anchors and error bounds from the part of the data the model does not
    // explain, `unexplained_ln`: each unknown goes where that part, plus the
    // errors of the other unknowns, is smallest against its own sensitivity.
    fn place(&self, xf: &[f64], base_noise: &[f64], unexplained_ln: &[f64]) -> Option<(Vec<usize>, Vec<f64>)> {
        let dim = self.dim();
        let n = xf.len();
        let sens: Vec<Vec<f64>> = (0..dim).map(|k| (0..n).map(|i| self.sens_ln(k, xf[i], i)).collect()).collect();
        let mut delta_ln = vec![f64::NEG_INFINITY; dim];
        let mut anchors = vec![0usize; dim];
        for pass in 0..2 {
            let mut used = vec![false; n];
            for k in 0..dim {
                let mut best: Option<(usize, f64)> = None;
                for i in 0..n {
                    if used[i] || sens[k][i] - base_noise[i] <= SNR_LN {
                        continue;
                    }
                    let mut err = unexplained_ln[i];
                    for j in 0..dim {
                        if j != k && (pass == 1 || j < k) {
                            err = ln_sum_exp(err, sens[j][i] + delta_ln[j]);
                        }
                    }
                    let e = err - sens[k][i];
                    if best.map_or(true, |(_, be)| e < be) {
                        best = Some((i, e));
                    }
                }
                let (i, e) = best?;
                used[i] = true;
                anchors[k] = i;
                delta_ln[k] = e;
            }
        }
        Some((anchors, delta_ln))
    }

    /// Refits all unknowns: first at the previous anchors plus the newest
    /// detection pair, then at anchors placed from the residual of the
    /// previous fit. Leaves the state untouched and returns false when no
    /// fit settles.
    fn refine(&mut self, x: &[Mp], base: &[Mp], base_noise: &[f64]) -> bool {
        let dim = self.dim();
        let off = self.off();
        let n = base.len();
        let prec = base[0].prec();
        let eps = 2f64.powi(-(prec as i32 - 40));
        let xf: Vec<f64> = x.iter().map(Mp::to_f64).collect();
        let mut anchors: Vec<usize> = self.anchors.clone();
        if anchors.is_empty() && off == 1 {
            anchors.push(n - 1);
        }
        for &a in &self.pairs[anchors.len() - off..] {
            let Some(a) = (0..=a).rev().find(|i| !anchors.contains(i)) else { return false };
            anchors.push(a);
        }
        let mut theta = self.theta();
        let Some(t) = self.solve(x, &xf, base, base_noise, &anchors, &theta) else { return false };
        theta = t;
        let mut delta_ln: Vec<f64> = self.theta_deltas().into_iter().map(|d| d.max(f64::MIN_POSITIVE).ln()).collect();
        let floor_rate = if off == 1 { 0.25 } else { 0.0 };
        let fastest = (0..self.params.len())
            .map(|k| self.rate(self.params[k].to_f64()))
            .fold(floor_rate, f64::max);
        for _ in 0..FIT_ROUNDS {
            let r = self.residual(x, &xf, base, base_noise, &theta);
            let r_ln: Vec<f64> = r.iter().map(|v| if v.is_zero() { f64::NEG_INFINITY } else { v.ln_abs_f64() }).collect();
            // what the model leaves out shows where the residual stands clear
            // of the fit errors; beyond the last such point it decays at
            // least as fast as the fastest term in the model
            let fit_noise: Vec<f64> = (0..n)
                .map(|i| {
                    (0..dim).fold(base_noise[i], |acc, k| ln_sum_exp(acc, self.sens_ln(k, xf[i], i) + delta_ln[k]))
                })
                .collect();
            let last = (0..n).rev().find(|&i| r_ln[i] > fit_noise[i] + UNEXPLAINED_MARGIN);
            // local rates fall towards the slowest left-out rate, so halfway
            // between the fastest modelled rate and the last local rate
            let rate = last.map_or(fastest, |s| {
                let s0 = s.saturating_sub(3);
                let q = if s > s0 { (r_ln[s0] - r_ln[s]) / (xf[s] - xf[s0]) } else { fastest };
                if q.is_finite() { 0.5 * (fastest + q.max(fastest)) } else { fastest }
            });
            let unexplained: Vec<f64> = (0..n)
                .map(|i| match last {
                    Some(s) if i <= s => {
                        let near = r_ln[i.saturating_sub(1)..=(i + 1).min(n - 1)].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        ln_sum_exp(near, base_noise[i])
                    }
                    Some(s) => ln_sum_exp(base_noise[i], r_ln[s] - rate * (xf[i] - xf[s])),
                    None => base_noise[i],
                })
                .collect();
            let Some((next, d)) = self.place(&xf, base_noise, &unexplained) else { break };
            if next == anchors {
                delta_ln = d;
                break;
            }
            let Some(t) = self.solve(x, &xf, base, base_noise, &next, &theta) else { break };
            theta = t;
            anchors = next;
            delta_ln = d;
        }
        // the fit may not move a parameter further than its detection allows
        for k in 0..self.params.len() {
            let moved = theta[k + off].sub(&self.params[k]).to_f64().abs();
            if moved > 10.0 * self.deltas[k] + 1e-12 {
                return false;
            }
        }
        if off == 1 {
            self.area_delta = (delta_ln[0] + 1.0).exp().max(eps * theta[0].to_f64().abs());
            self.area = theta[0].clone();
        }
        for k in 0..self.params.len() {
            self.deltas[k] = (delta_ln[k + off] + 1.0).exp().max(eps * theta[k + off].to_f64());
        }
        self.params = theta[off..].to_vec();
        self.anchors = anchors;
        true
    }

    /// Replaces the residual by the data minus the model, with noise from
    /// the error bounds; `skip` leaves one parameter in.
    fn rebuild(&self, p: &mut Peeler, base: &[Mp], base_noise: &[f64], skip: Option<usize>) {
        let eps_ln = pow2_ln(p.prec);
        let theta = self.theta();
        let deltas = self.theta_deltas();
        for i in 0..base.len() {
            let mut r = base[i].clone();
            let mut noise = base_noise[i];
            let mut top = base[i].ln_abs_f64();
            for (u, v) in theta.iter().enumerate() {
                if Some(u) == skip.map(|k| k + self.off()) || self.negligible(u, v.to_f64(), p.xf[i], base_noise[i]) {
                    continue;
                }
                let t = self.term(u, v, &p.x[i], p.xf[i], i, base_noise[i] - NEGLIGIBLE_LN).0;
                top = top.max(t.ln_abs_f64());
                r = r.sub(&t);
                noise = ln_sum_exp(noise, self.sens_ln(u, p.xf[i], i) + deltas[u].max(f64::MIN_POSITIVE).ln());
            }
            p.r[i] = r;
            p.noise_ln[i] = ln_sum_exp(noise, top + eps_ln);
        }
    }
}

// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_linear(mut a: Vec<Vec<Mp>>, mut b: Vec<Mp>) -> Option<Vec<Mp>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().cmp_mp(&a[j][col].abs()))?;
        if a[piv][col].is_zero() {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col].div(&a[col][col]);
            for k in col..n {
                let v = a[row][k].sub(&f.mul(&a[col][k]));
                a[row][k] = v;
            }
            b[row] = b[row].sub(&f.mul(&b[col]));
        }
    }
    let mut x = vec![Mp::zero(b[0].prec()); n];
    for row in (0..n).rev() {
        let mut v = b[row].clone();
        for k in row + 1..n {
            v = v.sub(&a[row][k].mul(&x[k]));
        }
        x[row] = v.div(&a[row][row]);
    }
    Some(x)
}

/// An eigenvalue `λ ≥ 0` with multiplicity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Eigenvalue {
    #[serde(serialize_with = "ser_f17")]
    pub lambda: f64,
    pub multiplicity: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralStep {
    pub phase: u8,
    #[serde(serialize_with = "ser_f17")]
    pub lambda: f64,
    #[serde(serialize_with = "ser_f17")]
    pub uncertainty: f64,
    #[serde(serialize_with = "ser_f17")]
    pub multiplicity_raw: f64,
    pub snapped: bool,
    #[serde(serialize_with = "crate::io::ser_vec_f17")]
    pub window_t: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveredSpectrum {
    /// Eigenvalues in `[0, 1/4]`, ascending.
    pub small_eigenvalues: Vec<Eigenvalue>,
    #[serde(serialize_with = "ser_f17")]
    pub area: f64,
    /// Eigenvalues above `1/4` found up to `lambda_max_reached`.
    pub further_eigenvalues: Vec<Eigenvalue>,
    /// Every eigenvalue up to this value has been reported.
    #[serde(serialize_with = "ser_f17")]
    pub lambda_max_reached: f64,
    /// Area estimates at the last grid points, in grid order.
    #[serde(serialize_with = "crate::io::ser_vec_f17")]
    pub area_estimates: Vec<f64>,
    pub diagnostics: Vec<SpectralStep>,
}

/// Eigenvalues and area from a length spectrum and cone orders, through the
/// geometric side of `c(t)`.
pub fn recover_spectrum(
    spectrum: &LengthSpectrum,
    cone_orders: &[u32],
    t_grid: &[f64],
    lambda_max: f64,
) -> Result<RecoveredSpectrum> {
    let c = CFunctionHandle::from_geometry(spectrum, cone_orders);
    recover_spectrum_from(&c, t_grid, lambda_max, 1e-3)
}

/// Eigenvalues and area from any `c(t)` handle. `t_grid` is ascending; its
/// last points must lie where `c` is dominated by the area term.
pub fn recover_spectrum_from(c: &CFunctionHandle, t_grid: &[f64], lambda_max: f64, tol: f64) -> Result<RecoveredSpectrum> {
    check_tol(tol)?;
    check_grid(t_grid, false)?;
    if t_grid.len() < AREA_POINTS + MIN_WINDOW {
        return Err(Error::GridTooShort(format!("{} points", t_grid.len())));
    }
    if !(lambda_max > 0.25) {
        return Err(Error::InvalidInput(format!("lambda_max = {lambda_max} must exceed 1/4")));
    }
    let prec = c.prec;
    let mut p = Peeler {
        x: Vec::new(),
        xf: Vec::new(),
        r: Vec::new(),
        noise_ln: Vec::new(),
        prec,
    };
    for &t in t_grid {
        let (v, noise) = (c.eval)(t)?;
        p.x.push(Mp::from_f64(t, prec));
        p.xf.push(t);
        p.r.push(v.with_prec(prec));
        p.noise_ln.push(noise);
    }
    let data = p.r.clone();
    let data_noise = p.noise_ln.clone();
    let mut diagnostics = Vec::new();

    let take = |p: &mut Peeler,
                det: &Detection,
                phase: u8,
                snap: Option<f64>,
                tol: f64,
                diagnostics: &mut Vec<SpectralStep>|
     -> Result<(Eigenvalue, Mp, bool)> {
        let mut omega = det.omega;
        let mut omega_mp = det.omega_mp.clone();
        let mut delta = det.delta;
        let mut snapped = false;
        if let Some(v) = snap {
            omega = v;
            omega_mp = Mp::from_f64(v, prec);
            delta = 0.0;
            snapped = true;
        }
        // at 1/4 the area term shares the rate; its share σ(t) vanishes only
        // in the limit, so read the amplitude at the largest usable t
        let at = if snap == Some(0.25) { det.window.1 } else { det.pair.1 };
        let raw = p.amplitude(Rate::Linear, &omega_mp, at).to_f64();
        let m = raw.round();
        let deviation = (raw - m).abs();
        if deviation > tol || m < 1.0 {
            return Err(Error::NonIntegerMultiplicity {
                value: raw,
                deviation,
                tol,
                rate: omega,
            });
        }
        let terms = [(1u32, Mp::from_f64(m, prec), 0.0, 1.0)];
        p.subtract(&omega_mp, &terms, delta);
        diagnostics.push(SpectralStep {
            phase,
            lambda: omega,
            uncertainty: delta,
            multiplicity_raw: raw,
            snapped,
            window_t: vec![p.xf[det.window.0], p.xf[det.window.1]],
        });
        Ok((
            Eigenvalue {
                lambda: omega,
                multiplicity: m as u32,
            },
            omega_mp,
            snapped,
        ))
    };

    // phase 1: eigenvalues in [0, 1/4]
    let mut small: Vec<Eigenvalue> = Vec::new();
    let mut small_mp: Vec<Mp> = Vec::new();
    let mut snapped: Vec<bool> = Vec::new();
    loop {
        // the area term decays like e^{-t/4} times a slowly falling factor, so
        // the local rate of an eigenvalue 1/4 rises towards 1/4 and the
        // detection window collapses; its limit is tested directly instead
        let det = match p.detect(Rate::Linear, false)? {
            Outcome::Found(d) if d.omega < 0.25 - QUARTER_BAND => Some(d),
            _ => None,
        };
        let (det, snap) = match det {
            Some(d) if d.omega.abs() <= ZERO_SNAP => (d, Some(0.0)),
            Some(d) => (d, None),
            None => {
                let Some(last) = quarter_limit(&p, tol) else {
                    break;
                };
                let n = last + 1;
                let w = n - AREA_POINTS;
                let d = Detection {
                    omega: 0.25,
                    omega_mp: Mp::from_f64(0.25, prec),
                    delta: 0.0,
                    pair: (n - 2, n - 1),
                    window: (w, n - 1),
                    iterations: 0,
                };
                (d, Some(0.25))
            }
        };
        let (ev, ev_mp, ev_snapped) = take(&mut p, &det, 1, snap, tol, &mut diagnostics)?;
        if let Some(prev) = small.last() {
            if ev.lambda <= prev.lambda {
                return Err(Error::BisectionFailure(format!("eigenvalue {} re-detected", ev.lambda)));
            }
        }
        small.push(ev);
        small_mp.push(ev_mp);
        snapped.push(ev_snapped);
        if small.len() > 256 {
            return Err(Error::BisectionFailure("too many small eigenvalues".into()));
        }
    }

    // phase 2: refine the unsnapped small eigenvalues jointly with the area
    // on the last grid points, then read the area off as
    // lim -e^{t/4} c̃(t) / σ(t) over the last few points
    let n = t_grid.len();
    let sig: Vec<f64> = t_grid.iter().map(|&t| selberg::sigma(t)).collect::<Result<_>>()?;
    let s_mp: Vec<Mp> = (0..n)
        .map(|i| p.x[i].ldexp(-2).neg().exp().mul(&Mp::from_f64(sig[i], prec)))
        .collect();
    let term = |lambda: &Mp, m: u32, i: usize| -> Mp {
        Mp::from_i64(m as i64, prec).mul(&lambda.mul(&p.x[i]).neg().exp())
    };
    let mut y = data.clone();
    let mut free: Vec<(usize, Mp)> = Vec::new();
    for (idx, ev) in small.iter().enumerate() {
        let lm = Mp::from_f64(ev.lambda, prec);
        if snapped[idx] {
            for i in 0..n {
                y[i] = y[i].sub(&term(&lm, ev.multiplicity, i));
            }
        } else {
            free.push((idx, small_mp[idx].clone()));
        }
    }
    let fit: Vec<usize> = (n - free.len() - 1..n).collect();
    let model = |free: &[(usize, Mp)], area: &Mp, i: usize| -> Mp {
        let mut v = area.mul(&s_mp[i]).neg();
        for (idx, lm) in free {
            v = v.add(&term(lm, small[*idx].multiplicity, i));
        }
        v
    };
    let last = n - 1;
    let mut area_mp = model(&free, &Mp::zero(prec), last).sub(&y[last]).div(&s_mp[last]);
    let eps = 2f64.powi(-(prec as i32 - 40));
    let mut converged = free.is_empty();
    let mut prev = (f64::INFINITY, f64::INFINITY);
    for _ in 0..60 {
        if converged {
            break;
        }
        let dim = free.len() + 1;
        let mut jac = vec![vec![Mp::zero(prec); dim]; dim];
        let mut rhs = vec![Mp::zero(prec); dim];
        for (row, &i) in fit.iter().enumerate() {
            rhs[row] = y[i].sub(&model(&free, &area_mp, i));
            for (col, (idx, lm)) in free.iter().enumerate() {
                jac[row][col] = term(lm, small[*idx].multiplicity, i).mul(&p.x[i]).neg();
            }
            jac[row][dim - 1] = s_mp[i].neg();
        }
        let step = solve_linear(jac, rhs).ok_or_else(|| {
            Error::BisectionFailure("singular system refining small eigenvalues".into())
        })?;
        let mut size = 0.0f64;
        for (col, (_, lm)) in free.iter_mut().enumerate() {
            *lm = lm.add(&step[col]);
            size = size.max(step[col].to_f64().abs());
        }
        area_mp = area_mp.add(&step[dim - 1]);
        let rel_a = step[dim - 1].to_f64().abs() / area_mp.to_f64().abs().max(f64::MIN_POSITIVE);
        // at the data's precision floor the steps stop shrinking
        let stalled = size >= 0.5 * prev.0 && rel_a >= 0.5 * prev.1 && rel_a < 1e-20;
        converged = (size <= eps && rel_a <= eps) || stalled;
        prev = (size, rel_a);
    }
    if !converged {
        return Err(Error::BisectionFailure(
            "joint refinement of small eigenvalues and area did not converge".into(),
        ));
    }
    for (idx, lm) in &free {
        let l = lm.to_f64();
        if !(l > 0.0 && l < 0.25 + QUARTER_SNAP) || (l - small[*idx].lambda).abs() > 1e-3 {
            return Err(Error::BisectionFailure(format!(
                "refined small eigenvalue {l} left its detection estimate {}",
                small[*idx].lambda
            )));
        }
    }
    // c̃: the data with every small eigenvalue removed
    let mut r_pre = y;
    for (idx, lm) in &free {
        for i in 0..n {
            r_pre[i] = r_pre[i].sub(&term(lm, small[*idx].multiplicity, i));
        }
    }
    let mut estimates = Vec::with_capacity(AREA_POINTS);
    for i in n - AREA_POINTS..n {
        if r_pre[i].is_zero() || r_pre[i].ln_abs_f64() - data_noise[i] <= SNR_LN {
            return Err(Error::AreaNotPositive(format!(
                "no signal at t = {} after removing small eigenvalues",
                t_grid[i]
            )));
        }
        estimates.push(-r_pre[i].div(&s_mp[i]).to_f64());
    }
    let area = estimates[AREA_POINTS - 1];
    if !(area > 0.0) {
        return Err(Error::AreaNotPositive(format!("area limit estimate {area}")));
    }
    let spread = estimates.iter().map(|a| (a - area).abs()).fold(0.0, f64::max) / area;
    if spread > AREA_STABILITY {
        return Err(Error::GridTooShort(format!(
            "area estimates over the last {AREA_POINTS} points vary by {spread:.3e} (relative)"
        )));
    }

    // error bounds from what the fit leaves just below its points
    let probe: Vec<usize> = (n.saturating_sub(fit.len() + 4)..fit[0]).collect();
    let resid: Vec<Mp> = probe.iter().map(|&i| r_pre[i].add(&area_mp.mul(&s_mp[i]))).collect();
    let mut d_free = vec![0.0f64; free.len()];
    let mut d_area = area * eps;
    for (k, &i) in probe.iter().enumerate() {
        let e = &resid[k];
        if e.is_zero() {
            continue;
        }
        for (f, (idx, lm)) in free.iter().enumerate() {
            let scale = term(lm, small[*idx].multiplicity, i).mul(&p.x[i]);
            d_free[f] = d_free[f].max(e.div(&scale).to_f64().abs());
        }
        d_area = d_area.max(e.div(&s_mp[i]).to_f64().abs());
    }
    for (f, (idx, lm)) in free.iter().enumerate() {
        small[*idx].lambda = lm.to_f64();
        diagnostics.push(SpectralStep {
            phase: 2,
            lambda: small[*idx].lambda,
            uncertainty: d_free[f].max(eps * small[*idx].lambda),
            multiplicity_raw: small[*idx].multiplicity as f64,
            snapped: false,
            window_t: vec![t_grid[fit[0]], t_grid[last]],
        });
    }

    // phase 3: the area term restored, continue above 1/4
    for i in 0..n {
        p.r[i] = r_pre[i].add(&area_mp.mul(&s_mp[i]));
        let mut noise = data_noise[i];
        let mut top = f64::NEG_INFINITY;
        for (f, (idx, lm)) in free.iter().enumerate() {
            let m = small[*idx].multiplicity as f64;
            let ln_term = m.ln() - lm.to_f64() * t_grid[i];
            top = top.max(ln_term);
            noise = ln_sum_exp(noise, ln_term + (t_grid[i] * d_free[f]).max(f64::MIN_POSITIVE).ln());
        }
        let ln_area = (area * sig[i]).ln() - t_grid[i] / 4.0;
        top = top.max(ln_area);
        noise = ln_sum_exp(noise, (d_area * sig[i]).max(f64::MIN_POSITIVE).ln() - t_grid[i] / 4.0);
        p.noise_ln[i] = ln_sum_exp(noise, top + pow2_ln(prec));
    }
    // each new eigenvalue is followed by a joint refit of the area and all
    // eigenvalues found so far against the phase 3 data, so that the
    // detection bias of earlier ones does not mask the later ones
    let base = r_pre.clone();
    let base_noise: Vec<f64> = (0..n)
        .map(|i| {
            let mut noise = data_noise[i];
            for (f, (idx, lm)) in free.iter().enumerate() {
                let ln_term = (small[*idx].multiplicity as f64).ln() - lm.to_f64() * t_grid[i];
                noise = ln_sum_exp(noise, ln_term + (t_grid[i] * d_free[f]).max(f64::MIN_POSITIVE).ln());
            }
            noise
        })
        .collect();
    let mut further: Vec<Eigenvalue> = Vec::new();
    let mut fit3 = JointFit::spectral(
        s_mp.clone(),
        (0..n).map(|i| sig[i].ln() - t_grid[i] / 4.0).collect(),
        area_mp.clone(),
        d_area,
    );
    let mut reached = None;
    loop {
        let det = match p.detect(Rate::Linear, false)? {
            Outcome::Found(d) => d,
            Outcome::NoSignal => break,
            Outcome::Negative => break,
        };
        if det.omega > lambda_max {
            reached = Some(lambda_max);
            break;
        }
        if det.omega <= 0.25 + QUARTER_SNAP {
            return Err(Error::BisectionFailure(format!(
                "eigenvalue {} at or below 1/4 left after removing the area term",
                det.omega
            )));
        }

        let (ev, ev_mp, _) = take(&mut p, &det, 3, None, TENTATIVE_TOL, &mut diagnostics)?;
        if let Some(prev) = further.last() {
            if ev.lambda <= prev.lambda + 1e-9 {
                return Err(Error::BisectionFailure(format!("eigenvalue {} re-detected", ev.lambda)));
            }
        }
        fit3.params.push(ev_mp);
        fit3.deltas.push(diagnostics.last().map_or(0.0, |d| d.uncertainty));
        fit3.mults.push(ev.multiplicity);
        fit3.pairs.push(det.pair.1);
        fit3.steps.push(diagnostics.len() - 1);
        further.push(ev);
        if further.len() > 4096 {
            return Err(Error::BisectionFailure("too many eigenvalues".into()));
        }
        if !fit3.refine(&p.x, &base, &base_noise) {
            continue;
        }
        fit3.rebuild(&mut p, &base, &base_noise, None);
        // the refit lowers the noise left by the earlier eigenvalues, so the
        // newest one is detected again with the others removed, on a window
        // reaching further out
        let k = further.len() - 1;
        for _ in 0..REDETECT_ROUNDS {
            let mut q = p.clone();
            fit3.rebuild(&mut q, &base, &base_noise, Some(k));
            let Outcome::Found(d) = q.detect(Rate::Linear, false)? else { break };
            let lk = fit3.params[k].to_f64();
            if d.pair.1 <= fit3.pairs[k] || (d.omega - lk).abs() > 10.0 * (fit3.deltas[k] + d.delta) {
                break;
            }
            let raw = q.amplitude(Rate::Linear, &d.omega_mp, d.pair.1).to_f64();
            if !(raw.round() >= 1.0) {
                break;
            }
            let saved = (
                fit3.params[k].clone(),
                fit3.deltas[k],
                fit3.pairs[k],
                fit3.mults[k],
                fit3.anchors.clone(),
            );
            fit3.params[k] = d.omega_mp;
            fit3.deltas[k] = d.delta;
            fit3.pairs[k] = d.pair.1;
            fit3.mults[k] = raw.round() as u32;
            fit3.anchors.truncate(k + 1);
            if !fit3.refine(&p.x, &base, &base_noise) {
                (fit3.params[k], fit3.deltas[k], fit3.pairs[k], fit3.mults[k], fit3.anchors) = saved;
                break;
            }
            diagnostics[fit3.steps[k]].multiplicity_raw = raw;
            fit3.rebuild(&mut p, &base, &base_noise, None);
            diagnostics[fit3.steps[k]].window_t = vec![p.xf[d.window.0], p.xf[d.window.1]];
        }
        let step = &diagnostics[fit3.steps[k]];
        let raw = step.multiplicity_raw;
        if (raw - raw.round()).abs() > tol {
            return Err(Error::NonIntegerMultiplicity {
                value: raw,
                deviation: (raw - raw.round()).abs(),
                tol,
                rate: step.lambda,
            });
        }
        for (k, ev) in further.iter_mut().enumerate() {
            ev.lambda = fit3.params[k].to_f64();
            ev.multiplicity = fit3.mults[k];
            let step = &mut diagnostics[fit3.steps[k]];
            step.lambda = ev.lambda;
            step.uncertainty = fit3.deltas[k];
        }
    }
    // no signal left: the largest unit-amplitude rate still visible somewhere
    let lambda_max_reached = reached.unwrap_or_else(|| {
        let visible = (0..n)
            .map(|i| (-p.noise_ln[i] - SNR_LN) / t_grid[i])
            .fold(f64::NEG_INFINITY, f64::max);
        lambda_max.min(visible)
    });
    Ok(RecoveredSpectrum {
        small_eigenvalues: small,
        area: fit3.area.to_f64(),
        further_eigenvalues: further,
        lambda_max_reached,
        area_estimates: estimates,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuchsian::LengthEntry;

    fn spectrum(prims: &[(f64, u32)], cutoff: f64) -> LengthSpectrum {
        LengthSpectrum::with_powers(prims, cutoff)
    }

    #[test]
    fn synthetic_handle_matches_hyperbolic_term() {
        let s = spectrum(&[(1.0, 1), (4f64.ln(), 2), (2.5, 1)], 6.0);
        let h = HeatTraceHandle::from_length_spectrum(&s, Convention::TraceFormula, 256).unwrap();
        for t in [0.05, 0.2, 1.0, 3.0, 10.0] {
            let (want, _) = selberg::hyperbolic_term(&s, t).unwrap();
            let got = h.eval_f64(t).unwrap();
            assert!((got - want).abs() <= 1e-14 * want.abs(), "t = {t}: {got} vs {want}");
        }
        let bare = HeatTraceHandle::from_length_spectrum(&s, Convention::Bare, 256).unwrap();
        let t = 0.5;
        let ratio = bare.eval_f64(t).unwrap() / h.eval_f64(t).unwrap();
        assert!((ratio - (4.0 * PI * t).sqrt()).abs() < 1e-13);
    }

    #[test]
    fn single_length_with_powers() {
        let s = spectrum(&[(1.0, 1)], 5.0);
        assert_eq!(s.entries.len(), 5);
        let h = HeatTraceHandle::from_length_spectrum(&s, Convention::TraceFormula, DEFAULT_PREC).unwrap();
        let res = extract_lengths(&h, 1, &default_length_grid(), 1e-3).unwrap();
        assert_eq!(res.lengths.len(), 1);
        assert!((res.lengths[0].primitive_length - 1.0).abs() < 1e-12);
        assert_eq!(res.lengths[0].multiplicity, 1);
        assert_eq!(res.diagnostics[0].powers_removed, 5);
        assert!(res.residual_norm < 1e-100, "residual {}", res.residual_norm);
    }

    #[test]
    fn two_primitives_in_order() {
        let s = spectrum(&[(4f64.ln(), 2), (2.5, 1)], 8.0);
        let h = HeatTraceHandle::from_length_spectrum(&s, Convention::Bare, DEFAULT_PREC).unwrap();
        let res = extract_lengths(&h, 2, &default_length_grid(), 1e-3).unwrap();
        let got: Vec<(f64, u32)> = res.lengths.iter().map(|l| (l.primitive_length, l.multiplicity)).collect();
        assert!((got[0].0 - 4f64.ln()).abs() < 1e-9 && got[0].1 == 2, "{got:?}");
        assert!((got[1].0 - 2.5).abs() < 1e-9 && got[1].1 == 1, "{got:?}");
        // nothing further is in the data
        let err = extract_lengths(&h, 3, &default_length_grid(), 1e-3).unwrap_err();
        assert_eq!(err.code(), "BisectionFailure");
    }

    #[test]
    fn zero_handle_has_no_signal() {
        let h = HeatTraceHandle::from_fn(|_| 0.0, Convention::Bare, (1e-6, 100.0), None);
        match extract_lengths(&h, 1, &default_length_grid(), 1e-3) {
            Err(Error::BisectionFailure(msg)) => assert!(msg.contains("no signal"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn grid_checks() {
        let h = HeatTraceHandle::from_fn(|_| 0.0, Convention::Bare, (1e-6, 100.0), None);
        let short = log_grid(1.0, 1e-2, 50);
        assert_eq!(extract_lengths(&h, 1, &short, 1e-3).unwrap_err().code(), "GridTooShort");
        let mut asc = default_length_grid();
        asc.reverse();
        assert_eq!(extract_lengths(&h, 1, &asc, 1e-3).unwrap_err().code(), "InvalidGrid");
    }

    #[test]
    fn non_integer_multiplicity_is_rejected() {
        // half a geodesic: amplitude 0.5 ℓ/(2 sinh(ℓ/2))
        let l: f64 = 1.3;
        let a = 0.5 * l / (2.0 * (0.5 * l).sinh());
        let h = HeatTraceHandle::from_fn(move |t| a * (-l * l / (4.0 * t)).exp(), Convention::Bare, (1e-6, 100.0), None);
        match extract_lengths(&h, 1, &default_length_grid(), 1e-3) {
            Err(Error::NonIntegerMultiplicity { value, .. }) => assert!((value - 0.5).abs() < 1e-6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_gaussian_data_fails_the_classifier() {
        // e^{-1/t} (2 + sin(1/t)) has no single slowest rate
        let h = HeatTraceHandle::from_fn(
            |t| (-1.0 / t).exp() * (2.0 + (1.0 / t).sin()),
            Convention::Bare,
            (1e-6, 100.0),
            None,
        );
        let err = extract_lengths(&h, 1, &log_grid(10.0, 1e-3, 200), 1e-3).unwrap_err();
        assert_eq!(err.code(), "BisectionFailure");
    }

    #[test]
    fn f64_samples_recover_a_short_length() {
        let s = spectrum(&[(0.8, 1), (1.9, 2)], 6.0);
        let grid = log_grid(10.0, 1e-3, 120);
        let rows: Vec<(f64, f64)> = grid
            .iter()
            .map(|&t| (t, selberg::hyperbolic_term(&s, t).unwrap().0))
            .collect();
        let h = HeatTraceHandle::from_samples(rows, Convention::TraceFormula, Some(6.0)).unwrap();
        let res = extract_lengths(&h, 2, h.grid().unwrap(), 1e-3).unwrap();
        assert!((res.lengths[0].primitive_length - 0.8).abs() < 1e-6);
        assert!((res.lengths[1].primitive_length - 1.9).abs() < 1e-3);
        assert_eq!(res.lengths[1].multiplicity, 2);
        assert!(h.eval(0.123).is_err());
    }

    #[test]
    fn classifier_is_a_step_at_the_shortest_length() {
        let l1 = 0.9;
        let s = spectrum(&[(l1, 2), (1.4, 1)], 6.0);
        let h = HeatTraceHandle::from_length_spectrum(&s, Convention::Bare, DEFAULT_PREC).unwrap();
        let grid = default_length_grid();
        for s in [-0.3, -1e-2, -1e-4] {
            assert_eq!(classify_omega(&h, &grid, l1 * (1.0 + s)).unwrap(), LimitClass::Zero, "{s}");
        }
        assert_eq!(classify_omega(&h, &grid, l1).unwrap(), LimitClass::Finite);
        for s in [1e-4, 1e-2, 0.3] {
            assert_eq!(classify_omega(&h, &grid, l1 * (1.0 + s)).unwrap(), LimitClass::Infinite, "{s}");
        }
    }

    #[test]
    fn subtraction_does_not_redetect() {
        let s = spectrum(&[(0.7, 1), (0.75, 3), (2.0, 1)], 9.0);
        let h = HeatTraceHandle::from_length_spectrum(&s, Convention::Bare, DEFAULT_PREC).unwrap();
        let res = extract_lengths(&h, 3, &default_length_grid(), 1e-3).unwrap();
        let ls: Vec<f64> = res.lengths.iter().map(|l| l.primitive_length).collect();
        assert!((ls[0] - 0.7).abs() < 1e-9 && (ls[1] - 0.75).abs() < 1e-6 && (ls[2] - 2.0).abs() < 1e-4, "{ls:?}");
        assert_eq!(res.lengths[1].multiplicity, 3);
    }

    #[test]
    fn equal_primitive_entries_merge() {
        let s = LengthSpectrum::from_entries(vec![
            LengthEntry { length: 1.2, primitive_length: 1.2, multiplicity: 1 },
            LengthEntry { length: 1.2, primitive_length: 1.2, multiplicity: 1 },
        ]);
        let h = HeatTraceHandle::from_length_spectrum(&s, Convention::Bare, DEFAULT_PREC).unwrap();
        let res = extract_lengths(&h, 1, &default_length_grid(), 1e-3).unwrap();
        assert_eq!(res.lengths[0].multiplicity, 2);
    }

    fn c_handle(eigen: &[(f64, u32)], area: f64) -> CFunctionHandle {
        let data = SpectralData {
            eigenvalues: eigen.to_vec(),
        };
        CFunctionHandle::from_spectral_data(&data, area, DEFAULT_PREC).unwrap()
    }

    #[test]
    fn spectral_example_with_tail() {
        let eigen = [(0.0, 1), (0.08, 1), (0.25, 2), (0.6, 1), (1.3, 2), (2.2, 1), (7.0, 3)];
        let c = c_handle(&eigen, 1.5);
        let rec = recover_spectrum_from(&c, &default_spectral_grid(), 5.0, 1e-3).unwrap();
        let small: Vec<(f64, u32)> = rec.small_eigenvalues.iter().map(|e| (e.lambda, e.multiplicity)).collect();
        assert_eq!(small.len(), 3, "{small:?}");
        assert_eq!(small[0], (0.0, 1));
        assert!((small[1].0 - 0.08).abs() < 1e-9 && small[1].1 == 1);
        assert_eq!(small[2], (0.25, 2));
        assert!((rec.area - 1.5).abs() < 1e-9 * 1.5, "area {}", rec.area);
        let big: Vec<(f64, u32)> = rec.further_eigenvalues.iter().map(|e| (e.lambda, e.multiplicity)).collect();
        assert_eq!(big.len(), 3, "{big:?}");
        for (got, want) in big.iter().zip(&eigen[3..6]) {
            assert!((got.0 - want.0).abs() < 1e-6 && got.1 == want.1, "{got:?} vs {want:?}");
        }
        assert_eq!(rec.lambda_max_reached, 5.0);
    }

    #[test]
    fn spectral_ground_state_only() {
        let area = 4.0 * PI;
        let c = c_handle(&[(0.0, 1)], area);
        let rec = recover_spectrum_from(&c, &default_spectral_grid(), 5.0, 1e-3).unwrap();
        assert_eq!(rec.small_eigenvalues, vec![Eigenvalue { lambda: 0.0, multiplicity: 1 }]);
        assert!((rec.area - area).abs() < 1e-3);
        assert!(rec.further_eigenvalues.is_empty());
    }

    #[test]
    fn empty_spectrum_has_no_area() {
        let c = c_handle(&[], 0.0);
        let err = recover_spectrum_from(&c, &default_spectral_grid(), 5.0, 1e-3).unwrap_err();
        assert_eq!(err.code(), "AreaNotPositive");
        let err = recover_spectrum(&LengthSpectrum::default(), &[], &default_spectral_grid(), 5.0).unwrap_err();
        assert_eq!(err.code(), "AreaNotPositive");
    }

    #[test]
    fn short_spectral_grid_does_not_stabilise() {
        // at t = 350 the eigenvalue 0.3 still shows against the area term
        let c = c_handle(&[(0.0, 1), (0.3, 1)], 2.0);
        let err = recover_spectrum_from(&c, &log_grid(0.05, 350.0, 100), 5.0, 1e-3).unwrap_err();
        assert_eq!(err.code(), "GridTooShort");
    }

    #[test]
    fn c_function_routes_agree_where_both_are_exact() {
        // the geometric side with no lengths and no cones is identically zero
        let g = CFunctionHandle::from_geometry(&LengthSpectrum::default(), &[]);
        assert!(g.eval(1.0).unwrap().is_zero());
        let c = c_handle(&[(0.0, 1), (0.5, 2)], 3.0);
        let t: f64 = 2.0;
        let want = 1.0 + 2.0 * (-0.5 * t).exp() - 3.0 * selberg::sigma(t).unwrap() * (-t / 4.0).exp();
        assert!((c.eval(t).unwrap().to_f64() - want).abs() < 1e-14);
    }
}

