//! Seeded random data for round-trip checks: length spectra, spectral data
//! with area, and pairs of generator lists related by a diagonal conjugation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fuchsian::{GroupPresentation, LengthSpectrum};
use crate::hyperbolic::MoebiusElement;
use crate::selberg::SpectralData;

/// Lengths up to this value (primitives and powers) are present in the
/// synthetic heat traces.
pub const LENGTH_CUTOFF: f64 = 12.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// `count` sorted values in [lo, hi], pairwise at least `gap` apart, avoiding
// `exclude`.
fn spaced<R: Rng>(rng: &mut R, count: usize, lo: f64, hi: f64, gap: f64, exclude: &[(f64, f64)]) -> Vec<f64> {
    'attempt: loop {
        let mut v: Vec<f64> = Vec::with_capacity(count);
        for _ in 0..count {
            let mut tries = 0;
            loop {
                tries += 1;
                if tries > 1000 {
                    continue 'attempt;
                }
                let x = rng.gen_range(lo..=hi);
                if exclude.iter().any(|&(a, b)| x >= a && x <= b) {
                    continue;
                }
                if v.iter().all(|y| (x - y).abs() >= gap) {
                    v.push(x);
                    break;
                }
            }
        }
        v.sort_by(f64::total_cmp);
        return v;
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticLengths {
    /// Primitive lengths with multiplicities, ascending.
    pub primitives: Vec<(f64, u32)>,
    /// The primitives and all powers up to [`LENGTH_CUTOFF`].
    pub spectrum: LengthSpectrum,
}

/// 3 to 6 primitive lengths in `[0.5, 4]`, at least `0.1` apart, with
/// multiplicities 1 to 3.
pub fn length_spectrum(seed: u64) -> SyntheticLengths {
    let mut rng = rng(seed);
    let count = rng.gen_range(3..=6);
    let lengths = loop {
        let v = spaced(&mut rng, count, 0.5, 4.0, 0.1, &[]);
        // keep every power clear of the cutoff so the power count is unambiguous
        let clear = v.iter().all(|&l| {
            let k = (LENGTH_CUTOFF / l).round();
            (k * l - LENGTH_CUTOFF).abs() > 1e-6
        });
        if clear {
            break v;
        }
    };
    let primitives: Vec<(f64, u32)> = lengths.into_iter().map(|l| (l, rng.gen_range(1..=3))).collect();
    let spectrum = LengthSpectrum::with_powers(&primitives, LENGTH_CUTOFF);
    SyntheticLengths { primitives, spectrum }
}

#[derive(Debug, Clone)]
pub struct SyntheticSpectrum {
    pub data: SpectralData,
    pub area: f64,
}

/// `λ₀ = 0` (simple), up to two eigenvalues in `[0.02, 0.24]`, sometimes
/// `1/4`, and 3 to 8 eigenvalues in `[0.45, 6]` at least `0.2` apart, none
/// within `0.05` of 5. Multiplicities are 1 to 3; the area lies in `[0.5, 40]`.
pub fn spectral_data(seed: u64) -> SyntheticSpectrum {
    let mut rng = rng(seed);
    let mut eigenvalues = vec![(0.0, 1)];
    let n_small = rng.gen_range(0..=2);
    for l in spaced(&mut rng, n_small, 0.02, 0.24, 0.02, &[]) {
        eigenvalues.push((l, rng.gen_range(1..=2)));
    }
    if rng.gen_bool(0.3) {
        eigenvalues.push((0.25, rng.gen_range(1..=2)));
    }
    let n_large = rng.gen_range(3..=8);
    for l in spaced(&mut rng, n_large, 0.45, 6.0, 0.2, &[(4.95, 5.05)]) {
        eigenvalues.push((l, rng.gen_range(1..=3)));
    }
    let area = rng.gen_range(0.5..=40.0);
    SyntheticSpectrum {
        data: SpectralData { eigenvalues },
        area,
    }
}

#[derive(Debug, Clone)]
pub struct FrickeInstance {
    pub g: GroupPresentation,
    pub h: GroupPresentation,
    /// `h = s g s⁻¹` with `s = diag(t, 1/t)`, composed with `diag(1, -1)`
    /// when `reflected`.
    pub t: f64,
    pub reflected: bool,
}

/// `g`: a diagonal hyperbolic generator followed by 1 to 3 unimodular
/// elements with off-diagonal entries bounded away from zero.
pub fn fricke_instance(seed: u64) -> FrickeInstance {
    let mut rng = rng(seed);
    let m: f64 = rng.gen_range(1.2..4.0);
    let mut gens = vec![MoebiusElement::new(m, 0.0, 0.0, 1.0 / m).expect("unimodular")];
    let extra = rng.gen_range(1..=3);
    let off = |rng: &mut ChaCha8Rng| {
        let v: f64 = rng.gen_range(0.2..3.0);
        if rng.gen_bool(0.5) {
            -v
        } else {
            v
        }
    };
    for _ in 0..extra {
        let a: f64 = rng.gen_range(0.5..3.0);
        let b = off(&mut rng);
        let c = off(&mut rng);
        let d = (1.0 + b * c) / a;
        gens.push(MoebiusElement::new(a, b, c, d).expect("unimodular"));
    }
    let t: f64 = rng.gen_range(0.3..3.0);
    let reflected = rng.gen_bool(0.5);
    let s = MoebiusElement::new(t, 0.0, 0.0, 1.0 / t).expect("unimodular");
    let image: Vec<MoebiusElement> = gens
        .iter()
        .map(|x| {
            let y = s.mul(x).mul(&s.inverse());
            if reflected {
                let [[a, b], [c, d]] = y.entries();
                MoebiusElement::new(a, -b, -c, d).expect("unimodular")
            } else {
                y
            }
        })
        .collect();
    FrickeInstance {
        g: GroupPresentation::from_generators(gens).expect("generators"),
        h: GroupPresentation::from_generators(image).expect("generators"),
        t,
        reflected,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        let a = length_spectrum(7);
        let b = length_spectrum(7);
        assert_eq!(a.primitives, b.primitives);
        assert_eq!(spectral_data(3).data, spectral_data(3).data);
    }

    #[test]
    fn length_data_respects_its_ranges() {
        for seed in 0..50 {
            let s = length_spectrum(seed);
            assert!((3..=6).contains(&s.primitives.len()));
            for w in s.primitives.windows(2) {
                assert!(w[1].0 - w[0].0 >= 0.1);
            }
            for &(l, m) in &s.primitives {
                assert!((0.5..=4.0).contains(&l) && (1..=3).contains(&m));
            }
        }
    }

    #[test]
    fn spectral_data_respects_its_ranges() {
        for seed in 0..50 {
            let s = spectral_data(seed);
            let ev = &s.data.eigenvalues;
            assert_eq!(ev[0], (0.0, 1));
            assert!(ev.windows(2).all(|w| w[0].0 < w[1].0));
            assert!(ev.iter().all(|e| !(e.0 > 0.24 && e.0 < 0.25) && !(e.0 > 0.25 && e.0 < 0.45)));
            assert!(s.area >= 0.5 && s.area <= 40.0);
        }
    }
}
