//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 2 and 3 ask for tolerances that the exact quantities do not meet
//! at the prescribed `t`; they are reported and measured but do not fail the
//! run. Any other failing criterion does.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use orbispec::dirichlet::{auto_polygon, diameter_estimate, polygon_area, side_pairings, trace_bound_report};
use orbispec::fricke::{reconstruct_equivalence, EquivalenceWitness};
use orbispec::fuchsian::{certified_spectrum, triangle_geometry, triangle_group, ClassOptions, DEFAULT_CENTER};
use orbispec::huber::{
    default_length_grid, default_spectral_grid, extract_lengths, recover_spectrum_from, CFunctionHandle, Convention,
    HeatTraceHandle,
};
use orbispec::hyperbolic::MoebiusElement;
use orbispec::mp::DEFAULT_PREC;
use orbispec::orbisurface::{hyperbolic_area, obstruction_check, ObstructionVerdict, Signature};
use orbispec::quadrature::Scheme;
use orbispec::selberg::{elliptic_integral_with, geometric_heat_trace, sigma, sigma_with, TraceFormulaInput};
use orbispec::synthetic;

const EXPECTED_TO_FAIL: [u32; 2] = [2, 3];

/// Shortest closed geodesic of the (2,3,7) orbisurface, `2 arccosh((1 + 2cos(2π/7))/2)`.
const SYSTOLE_237: f64 = 0.983_986_562_207_582_5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn gauss_bonnet() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (p, q, r) in [(2u32, 3u32, 7u32), (2, 3, 8), (3, 3, 4)] {
        // -2πχ = 2π(1 - 1/p - 1/q - 1/r): π/21, π/12 and π/6
        let want = 2.0 * PI * (1.0 - 1.0 / p as f64 - 1.0 / q as f64 - 1.0 / r as f64);
        let t0 = Instant::now();
        let area = triangle_group(p, q, r)
            .and_then(|g| auto_polygon(&g, DEFAULT_CENTER))
            .map(|poly| polygon_area(&poly));
        let secs = t0.elapsed().as_secs_f64();
        match area {
            Ok(a) => {
                let e = rel(a, want);
                pass &= e < 0.01 && secs < 30.0;
                parts.push(format!("({p},{q},{r}) rel {e:.1e} in {secs:.2}s"));
            }
            Err(err) => {
                pass = false;
                parts.push(format!("({p},{q},{r}) {}", err.code()));
            }
        }
    }
    outcome(pass, parts.join("; "))
}

fn weyl_consistency() -> Outcome {
    let sig = Signature::new(0, vec![2, 3, 7]).unwrap();
    let area = hyperbolic_area(&sig).unwrap();
    let g = triangle_group(2, 3, 7).unwrap();
    let spectrum = certified_spectrum(&g, 12, 6.0, &ClassOptions::default()).unwrap();
    let input = TraceFormulaInput {
        area,
        cone_orders: vec![2, 3, 7],
        length_cutoff: spectrum.certified_cutoff.unwrap(),
        spectrum,
    };
    let t = 1e-3;
    let total = geometric_heat_trace(&input, t).unwrap().total;
    let want = area / (4.0 * PI);
    let e = rel(t * total, want);
    // the constant term Σ (m²-1)/12m of the small-t expansion
    let constant: f64 = [2.0f64, 3.0, 7.0].iter().map(|m| (m * m - 1.0) / (12.0 * m)).sum();
    let predicted = rel(want + t * constant, want);
    outcome(
        e < 0.01,
        format!("t·H(t) = {:.6e}, area/4π = {want:.6e}, rel {e:.2e} (cone constant predicts {predicted:.2e})", t * total),
    )
}

fn sigma_asymptotics() -> Outcome {
    let large = sigma(100.0).unwrap() * 100f64.powf(1.5) / (PI.sqrt() / 8.0);
    let small = sigma(1e-3).unwrap() * 4.0 * PI * 1e-3;
    let (e1, e2) = ((large - 1.0).abs(), (small - 1.0).abs());
    outcome(
        e1 < 1e-3 && e2 < 1e-2,
        format!("t=100 rel {e1:.2e} (next order π²/2t = {:.2e}); t=1e-3 rel {e2:.2e}", PI * PI / 200.0),
    )
}

fn huber_lengths() -> Outcome {
    let grid = default_length_grid();
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let s = synthetic::length_spectrum(seed);
        let h = HeatTraceHandle::from_length_spectrum(&s.spectrum, Convention::TraceFormula, DEFAULT_PREC).unwrap();
        match extract_lengths(&h, s.primitives.len(), &grid, 1e-3) {
            Ok(r) => {
                let ok = r.lengths.len() == s.primitives.len()
                    && r.lengths.iter().zip(&s.primitives).all(|(a, b)| {
                        worst = worst.max((a.primitive_length - b.0).abs());
                        (a.primitive_length - b.0).abs() <= 1e-3 && a.multiplicity == b.1
                    });
                if !ok {
                    failures.push(format!("seed {seed}"));
                }
            }
            Err(e) => failures.push(format!("seed {seed}: {}", e.code())),
        }
    }
    outcome(failures.is_empty(), format!("20 seeds, max length error {worst:.1e}, failures {failures:?}"))
}

fn huber_spectra() -> Outcome {
    let grid = default_spectral_grid();
    let mut failures = Vec::new();
    let (mut worst_small, mut worst_large, mut worst_area): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for seed in 0..10 {
        let s = synthetic::spectral_data(seed);
        let c = CFunctionHandle::from_spectral_data(&s.data, s.area, DEFAULT_PREC).unwrap();
        match recover_spectrum_from(&c, &grid, 5.0, 1e-3) {
            Ok(r) => {
                let want_small: Vec<_> = s.data.eigenvalues.iter().filter(|e| e.0 <= 0.25).collect();
                let want_large: Vec<_> = s.data.eigenvalues.iter().filter(|e| e.0 > 0.25 && e.0 <= 5.0).collect();
                let mut ok = r.small_eigenvalues.len() == want_small.len()
                    && r.further_eigenvalues.len() == want_large.len()
                    && r.lambda_max_reached >= 5.0;
                for (got, want) in r.small_eigenvalues.iter().zip(&want_small) {
                    let e = (got.lambda - want.0).abs();
                    worst_small = worst_small.max(e);
                    ok &= e <= 1e-4 && got.multiplicity == want.1;
                }
                for (got, want) in r.further_eigenvalues.iter().zip(&want_large) {
                    let e = (got.lambda - want.0).abs();
                    worst_large = worst_large.max(e);
                    ok &= e <= 1e-3 && got.multiplicity == want.1;
                }
                let ea = rel(r.area, s.area);
                worst_area = worst_area.max(ea);
                ok &= ea <= 1e-3;
                if !ok {
                    failures.push(format!("seed {seed}"));
                }
            }
            Err(e) => failures.push(format!("seed {seed}: {}", e.code())),
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "10 seeds, max errors small {worst_small:.1e} further {worst_large:.1e} area rel {worst_area:.1e}, failures {failures:?}"
        ),
    )
}

fn fricke() -> Outcome {
    let mut bad = Vec::new();
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let inst = synthetic::fricke_instance(seed);
        match reconstruct_equivalence(&inst.g, &inst.h) {
            Ok(w) if !matches!(w, EquivalenceWitness::NotEquivalent { .. }) => {
                worst = worst.max(w.residual());
                if w.residual() > 1e-9 || w.is_reflection() != inst.reflected {
                    bad.push(seed);
                }
            }
            _ => bad.push(seed),
        }
    }
    let inst = synthetic::fricke_instance(0);
    let mut h = inst.h.clone();
    h.generators[1] = h.generators[1].conjugate_by(&MoebiusElement::rotation_about_i(2e-4));
    let control = matches!(
        reconstruct_equivalence(&inst.g, &h),
        Ok(EquivalenceWitness::NotEquivalent { .. })
    );
    outcome(
        bad.is_empty() && control,
        format!("100 instances, max residual {worst:.1e}, failures {bad:?}, corrupted control rejected {control}"),
    )
}

// Multisets of at most `max` orders from `lo..=hi`.
fn cone_lists(lo: u32, hi: u32, max: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max {
        let mut next = Vec::new();
        for c in &frontier {
            let start = c.last().copied().unwrap_or(lo);
            for m in start..=hi {
                let mut d: Vec<u32> = c.clone();
                d.push(m);
                next.push(d);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

// 2520·χ as an integer; 2520 = lcm(2..9).
fn chi_2520(genus: u32, cones: &[u32]) -> i64 {
    2520 * (2 - 2 * genus as i64) - cones.iter().map(|&m| 2520 - 2520 / m as i64).sum::<i64>()
}

fn obstructions() -> Outcome {
    let mut sigs = Vec::new();
    for genus in 0..=2 {
        for cones in cone_lists(2, 9, 4) {
            if chi_2520(genus, &cones) < 0 {
                sigs.push((genus, cones.clone(), Signature::new(genus, cones).unwrap()));
            }
        }
    }
    let (mut pairs, mut obstructed, mut false_verdicts, mut missed) = (0u64, 0u64, 0u64, 0u64);
    for (ga, ca, a) in &sigs {
        for (gb, cb, b) in &sigs {
            pairs += 1;
            // isospectral orbisurfaces share χ and agree on having cone points
            let contradiction = chi_2520(*ga, ca) != chi_2520(*gb, cb) || ca.is_empty() != cb.is_empty();
            match obstruction_check(a, b).unwrap() {
                ObstructionVerdict::Obstructed(_) => {
                    obstructed += 1;
                    false_verdicts += u64::from(!contradiction);
                }
                ObstructionVerdict::NoObstructionFound => missed += u64::from(contradiction),
            }
        }
    }
    outcome(
        false_verdicts == 0 && missed == 0,
        format!(
            "{} signatures, {pairs} pairs, {obstructed} obstructed, {false_verdicts} false, {missed} missed",
            sigs.len()
        ),
    )
}

fn trace_bounds() -> Outcome {
    let t = triangle_geometry(2, 3, 7).unwrap();
    let p = auto_polygon(&t.group, t.incenter).unwrap();
    let pairs = side_pairings(&p).unwrap();
    let d = diameter_estimate(&p).d;
    let r = trace_bound_report(&pairs, d);
    let control = trace_bound_report(&pairs, d / 10.0);
    outcome(
        r.all_pass && r.min_margin > 0.0 && !control.all_pass,
        format!(
            "D = {d:.4}, {} products, min margin {:.3e}; D/10 control fails {}",
            r.checks.len(),
            r.min_margin,
            !control.all_pass
        ),
    )
}

fn quadrature() -> Outcome {
    let ts = [1e-3, 1e-2, 0.1, 0.5, 1.0, 5.0, 20.0, 100.0];
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for &t in &ts {
        let a = sigma_with(Scheme::Adaptive, t).unwrap();
        let b = sigma_with(Scheme::GaussDoubling, t).unwrap();
        worst = worst.max((a - b).abs());
        count += 1;
        for m in 2..=9u32 {
            for k in 1..m {
                let theta = PI * k as f64 / m as f64;
                let a = elliptic_integral_with(Scheme::Adaptive, theta, t).unwrap();
                let b = elliptic_integral_with(Scheme::GaussDoubling, theta, t).unwrap();
                worst = worst.max((a - b).abs());
                count += 1;
            }
        }
    }
    outcome(worst <= 1e-10, format!("{count} integrals, max disagreement {worst:.1e}"))
}

fn length_stability() -> Outcome {
    let g = triangle_group(2, 3, 7).unwrap();
    let opts = ClassOptions::default();
    let a = certified_spectrum(&g, 12, 6.0, &opts).unwrap();
    let b = certified_spectrum(&g, 14, 6.0, &opts).unwrap();
    let cut = a.certified_cutoff.unwrap();
    let below = |s: &orbispec::fuchsian::LengthSpectrum| {
        s.entries.iter().filter(|e| e.length < cut).copied().collect::<Vec<_>>()
    };
    let (ea, eb) = (below(&a), below(&b));
    let same = ea.len() == eb.len()
        && ea.iter().zip(&eb).all(|(x, y)| {
            (x.length - y.length).abs() <= 1e-9 && x.multiplicity == y.multiplicity
        });
    let systole = a.entries[0].length;
    outcome(
        same && !ea.is_empty() && (systole - SYSTOLE_237).abs() <= 1e-9,
        format!(
            "{} lengths below {cut:.4} agree between L=12 and L=14; systole {systole:.16}",
            ea.len()
        ),
    )
}

fn main() {
    let criteria: [(u32, &str, Duration, fn() -> Outcome); 10] = [
        (1, "Gauss-Bonnet polygon areas", Duration::from_secs(90), gauss_bonnet),
        (2, "Weyl-law small-t heat trace", Duration::from_secs(5), weyl_consistency),
        (3, "sigma asymptotics", Duration::from_secs(1), sigma_asymptotics),
        (4, "length extraction round trip", Duration::from_secs(60), huber_lengths),
        (5, "spectrum recovery round trip", Duration::from_secs(120), huber_spectra),
        (6, "Fricke reconstruction", Duration::from_secs(10), fricke),
        (7, "obstruction exhaustive check", Duration::from_secs(30), obstructions),
        (8, "trace bounds", Duration::from_secs(30), trace_bounds),
        (9, "quadrature cross-validation", Duration::from_secs(10), quadrature),
        (10, "length-spectrum stability", Duration::from_secs(120), length_stability),
    ];
    let only: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut unexpected = Vec::new();
    for (n, name, budget, run) in criteria {
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t0 = Instant::now();
        let o = run();
        let elapsed = t0.elapsed();
        let pass = o.pass && elapsed <= budget;
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n:>2} {verdict} {name}: {} [{:.2}s, budget {}s]",
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
        if !pass && !EXPECTED_TO_FAIL.contains(&n) {
            unexpected.push(n);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
