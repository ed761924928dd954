//! Two unrelated quadrature schemes: adaptive Gauss–Kronrod bisection and
//! composite Gauss–Legendre with panel doubling. Every integral the trace
//! formula needs is available from both so results can be cross-checked.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Maximum bisection depth of the adaptive scheme.
pub const MAX_DEPTH: u32 = 50;

/// Result of one adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

fn kronrod_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, (k - g).abs() * h)
}

/// Adaptive G7–K15 with recursive bisection until each panel's
/// Kronrod–Gauss difference is below its share of `tol`.
pub fn adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<Estimate> {
    let mut total = 0.0;
    let mut err = 0.0;
    let mut evals = 0usize;
    let mut stack = vec![(a, b, 0u32)];
    let width = (b - a).abs();
    while let Some((lo, hi, depth)) = stack.pop() {
        let (v, e) = kronrod_panel(&f, lo, hi);
        evals += 15;
        let share = tol * (hi - lo).abs() / width;
        if e <= share.max(1e-300) || e <= 1e-15 * v.abs() {
            total += v;
            err += e;
        } else if depth >= MAX_DEPTH {
            return Err(Error::NonConvergence(format!(
                "panel [{lo}, {hi}] error {e:e} above {share:e} at depth {depth}"
            )));
        } else {
            let mid = 0.5 * (lo + hi);
            // push right first so panels are summed left to right
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
    }
    Ok(Estimate {
        value: total,
        error: err,
        evaluations: evals,
    })
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`,
/// by Newton iteration on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 1..=n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p2) / j as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Composite Gauss–Legendre on `panels` equal panels.
pub fn composite_gauss<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, nodes: &(Vec<f64>, Vec<f64>), panels: usize) -> f64 {
    let (x, w) = nodes;
    let h = (b - a) / panels as f64;
    let mut sum = 0.0;
    for p in 0..panels {
        let c = a + (p as f64 + 0.5) * h;
        let mut s = 0.0;
        for (xi, wi) in x.iter().zip(w) {
            s += wi * f(c + 0.5 * h * xi);
        }
        sum += 0.5 * h * s;
    }
    sum
}

/// 20-point composite Gauss–Legendre, doubling the panel count until two
/// successive results agree to `tol`.
pub fn gauss_doubling<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<Estimate> {
    let nodes = gauss_legendre(20);
    let mut panels = 4;
    let mut prev = composite_gauss(&f, a, b, &nodes, panels);
    let mut evals = 20 * panels;
    for _ in 0..14 {
        panels *= 2;
        let cur = composite_gauss(&f, a, b, &nodes, panels);
        evals += 20 * panels;
        let diff = (cur - prev).abs();
        if diff <= tol {
            return Ok(Estimate {
                value: cur,
                error: diff,
                evaluations: evals,
            });
        }
        prev = cur;
    }
    Err(Error::NonConvergence(format!(
        "Gauss–Legendre doubling did not settle on [{a}, {b}]"
    )))
}

/// Which scheme to use for an integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Adaptive,
    GaussDoubling,
}

pub fn integrate<F: Fn(f64) -> f64>(scheme: Scheme, f: F, a: f64, b: f64, tol: f64) -> Result<Estimate> {
    match scheme {
        Scheme::Adaptive => adaptive(f, a, b, tol),
        Scheme::GaussDoubling => gauss_doubling(f, a, b, tol),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_is_exact_for_degree_22() {
        // K15 integrates polynomials up to degree 22 exactly; G7 up to 13
        for deg in 0..=22 {
            let (v, _) = kronrod_panel(&|x: f64| x.powi(deg), -1.0, 1.0);
            let exact = if deg % 2 == 0 { 2.0 / (deg as f64 + 1.0) } else { 0.0 };
            assert!((v - exact).abs() < 1e-14, "degree {deg}: {v}");
        }
        let gauss = |f: &dyn Fn(f64) -> f64| {
            let mut g = WG[3] * f(0.0);
            for j in 0..3 {
                g += WG[j] * (f(XGK[2 * j + 1]) + f(-XGK[2 * j + 1]));
            }
            g
        };
        for deg in 0..=13 {
            let exact = if deg % 2 == 0 { 2.0 / (deg as f64 + 1.0) } else { 0.0 };
            assert!((gauss(&|x: f64| x.powi(deg)) - exact).abs() < 1e-14, "gauss degree {deg}");
        }
    }

    #[test]
    fn legendre_rule_is_exact() {
        let (x, w) = gauss_legendre(20);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        for deg in [2, 10, 38] {
            let v: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
            assert!((v - 2.0 / (deg as f64 + 1.0)).abs() < 1e-14, "degree {deg}");
        }
    }

    #[test]
    fn schemes_agree_on_gaussian() {
        let f = |x: f64| (-x * x).exp();
        let a = adaptive(f, -8.0, 8.0, 1e-13).unwrap().value;
        let g = gauss_doubling(f, -8.0, 8.0, 1e-13).unwrap().value;
        let exact = std::f64::consts::PI.sqrt();
        assert!((a - exact).abs() < 1e-12);
        assert!((g - exact).abs() < 1e-12);
    }

    #[test]
    fn adaptive_handles_sharp_peak() {
        let f = |x: f64| 1.0 / (1e-4 + x * x);
        let v = adaptive(f, -1.0, 1.0, 1e-10).unwrap().value;
        let exact = 2.0 * (1.0f64 / 1e-2).atan() / 1e-2;
        assert!((v - exact).abs() < 1e-8, "{v} vs {exact}");
    }

    #[test]
    fn adaptive_reports_nonconvergence() {
        // a jump discontinuity cannot reach a 1e-300 tolerance
        let r = adaptive(|x: f64| if x < 0.1 { 0.0 } else { 1.0 }, 0.0, 1.0, 1e-300);
        assert!(matches!(r, Err(Error::NonConvergence(_))));
    }
}
