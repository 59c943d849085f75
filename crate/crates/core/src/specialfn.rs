//! Standard normal special functions and splittable uniform random streams.
//!
//! The normal CDF is evaluated through Cody's rational-minimax erfc
//! approximation (absolute error below 1e-15 over the whole real line).
//! The inverse CDF uses Acklam's rational approximation refined by a single
//! Newton step against the CDF, which brings the round-trip error
//! `|Phi(Phi^-1(p)) - p|` down to machine precision.
//!
//! Random streams are counter-based: the value of draw `k` of path `j`
//! under seed `s` is a pure function of `(s, j, k)`, so any path can be
//! generated independently of the others and results do not depend on the
//! number of worker threads.

#![allow(clippy::excessive_precision)] // published coefficient tables keep their full digits

use crate::error::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_68;

/// A probability, guaranteed to lie in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Probability(f64);

impl Probability {
    /// Wraps `value`, rejecting anything outside `[0, 1]` or non-finite.
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && (0.0..=1.0).contains(&value) {
            Ok(Probability(value))
        } else {
            Err(Error::domain("probability", value))
        }
    }

    /// The underlying value.
    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

// ---------------------------------------------------------------------------
// Normal distribution functions
// ---------------------------------------------------------------------------

/// Standard normal density `exp(-x^2/2) / sqrt(2 pi)`.
#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF `Phi(x) = 0.5 * erfc(-x / sqrt(2))`.
///
/// Absolute error is below 1e-15 for all finite `x`.
#[inline]
pub fn std_normal_cdf(x: f64) -> Probability {
    Probability(norm_cdf(x))
}

#[inline]
pub(crate) fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc_cody(-x / SQRT_2)
}

/// Inverse standard normal CDF.
///
/// Valid for `0 < p < 1`; the endpoints are rejected because the quantile
/// diverges there.
pub fn std_normal_inv_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain("std_normal_inv_cdf", p));
    }
    Ok(norm_inv_cdf(p))
}

/// Unchecked inverse CDF; callers guarantee `p` in the open unit interval.
#[inline]
pub(crate) fn norm_inv_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let x = acklam(p);
    // One Newton refinement against the high-accuracy CDF. The density at
    // the Acklam estimate stays comfortably above the underflow threshold
    // for every representable p in (0, 1).
    let pdf = std_normal_pdf(x);
    if pdf > 0.0 {
        x - (norm_cdf(x) - p) / pdf
    } else {
        x
    }
}

/// Cody-style rational approximation of erfc, SPECFUN coefficients.
fn erfc_cody(x: f64) -> f64 {
    const A: [f64; 4] = [
        3.161_123_743_870_565_6e0,
        1.138_641_541_510_501_56e2,
        3.774_852_376_853_020_2e2,
        3.209_377_589_138_469_47e3,
    ];
    const A5: f64 = 1.857_777_061_846_031_53e-1;
    const B: [f64; 4] = [
        2.360_129_095_234_412_09e1,
        2.440_246_379_344_441_73e2,
        1.282_616_526_077_372_28e3,
        2.844_236_833_439_170_62e3,
    ];
    const C: [f64; 8] = [
        5.641_884_969_886_700_89e-1,
        8.883_149_794_388_375_94e0,
        6.611_919_063_714_162_95e1,
        2.986_351_381_974_001_31e2,
        8.819_522_212_417_690_9e2,
        1.712_047_612_634_070_58e3,
        2.051_078_377_826_071_47e3,
        1.230_339_354_797_997_25e3,
    ];
    const C9: f64 = 2.153_115_354_744_038_46e-8;
    const D: [f64; 8] = [
        1.574_492_611_070_983_47e1,
        1.176_939_508_913_124_99e2,
        5.371_811_018_620_098_58e2,
        1.621_389_574_566_690_19e3,
        3.290_799_235_733_459_63e3,
        4.362_619_090_143_247_16e3,
        3.439_367_674_143_721_64e3,
        1.230_339_354_803_749_42e3,
    ];
    const P: [f64; 5] = [
        3.053_266_349_612_323_44e-1,
        3.603_448_999_498_044_39e-1,
        1.257_817_261_112_292_46e-1,
        1.608_378_514_874_227_66e-2,
        6.587_491_615_298_378_03e-4,
    ];
    const P6: f64 = 1.631_538_713_730_209_78e-2;
    const Q: [f64; 5] = [
        2.568_520_192_289_822_42e0,
        1.872_952_849_923_460_47e0,
        5.279_051_029_514_284_12e-1,
        6.051_834_131_244_131_91e-2,
        2.335_204_976_268_691_85e-3,
    ];
    const FRAC_1_SQRT_PI: f64 = 5.641_895_835_477_562_9e-1;

    let y = x.abs();
    let result = if y <= 0.46875 {
        // erfc via erf on the central interval.
        let z = if y > 1.11e-16 { y * y } else { 0.0 };
        let mut num = A5 * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + A[i]) * z;
            den = (den + B[i]) * z;
        }
        let erf = x * (num + A[3]) / (den + B[3]);
        return 1.0 - erf;
    } else if y <= 4.0 {
        let mut num = C9 * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + C[i]) * y;
            den = (den + D[i]) * y;
        }
        let r = (num + C[7]) / (den + D[7]);
        scaled_exp(y) * r
    } else {
        let z = 1.0 / (y * y);
        let mut num = P6 * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + P[i]) * z;
            den = (den + Q[i]) * z;
        }
        let mut r = z * (num + P[4]) / (den + Q[4]);
        r = (FRAC_1_SQRT_PI - r) / y;
        scaled_exp(y) * r
    };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

/// Computes `exp(-y^2)` with the argument split to avoid rounding in `y*y`.
#[inline]
fn scaled_exp(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}

/// Acklam's inverse-normal rational approximation (relative error ~1.15e-9).
fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239e0,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838e0,
        -2.549_732_539_343_734e0,
        4.374_664_141_464_968e0,
        2.938_163_982_698_783e0,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996e0,
        3.754_408_661_907_416e0,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

// ---------------------------------------------------------------------------
// Counter-based splittable random stream
// ---------------------------------------------------------------------------

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer (Vigna); full-avalanche 64-bit mix.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic, splittable uniform random stream.
///
/// Streams are value types: copying one and drawing from both copies yields
/// the same sequence. Distinct `(seed, path_index)` pairs give streams that
/// behave as statistically independent sequences, and the draw sequence is
/// identical regardless of platform or thread count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomStream {
    seed: u64,
    path_index: u64,
    counter: u64,
}

impl RandomStream {
    /// Stream for path `path_index` under `seed`, positioned at the start.
    pub fn new(seed: u64, path_index: u64) -> Self {
        RandomStream {
            seed,
            path_index,
            counter: 0,
        }
    }

    /// The stream key; mixing both identifiers avoids (seed, path) lattices.
    #[inline]
    fn key(&self) -> u64 {
        mix64(self.seed ^ mix64(self.path_index.wrapping_mul(GAMMA) ^ 0x1F83_D9AB_FB41_BD6B))
    }

    /// Raw 64-bit draw at the current counter, advancing the counter.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        mix64(self.key().wrapping_add(GAMMA.wrapping_mul(self.counter)))
    }

    /// Uniform draw strictly inside `(0, 1)`.
    ///
    /// The 53-bit mantissa is centered with a half-step offset so that
    /// neither endpoint is ever returned; the smallest value is `2^-54` and
    /// the largest `1 - 2^-54`.
    #[inline]
    pub fn next_uniform(&mut self) -> Probability {
        Probability(self.next_f64())
    }

    /// `next_uniform` without the wrapper type.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        ((self.next_u64() >> 11) as f64 + 0.5) * SCALE
    }

    /// Number of draws consumed so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Reference values computed with a 50-digit erf/erfc evaluation.
    const CDF_GRID: [(f64, f64); 30] = [
        (-8.0, 6.220960574271784123516e-16),
        (-6.0, 9.865876450376981407009e-10),
        (-5.0, 2.866515718791939116738e-7),
        (-4.0, 3.167124183311992125377e-5),
        (-3.5, 2.326290790355250363499e-4),
        (-3.0, 1.349898031630094526652e-3),
        (-2.5, 6.209665325776135166978e-3),
        (-2.0, 2.275013194817920720028e-2),
        (-1.5, 6.680720126885806600449e-2),
        (-1.0, 0.1586552539314570514148),
        (-0.7, 0.2419636522230730147494),
        (-0.46875, 0.3196241715171176260369),
        (-0.3, 0.3820885778110473626935),
        (-0.1, 0.4601721627229710185346),
        (0.0, 0.5),
        (0.1, 0.5398278372770289814654),
        (0.3, 0.6179114221889526373065),
        (0.46875, 0.6803758284828823739631),
        (0.7, 0.7580363477769269852506),
        (1.0, 0.8413447460685429485852),
        (1.5, 0.9331927987311419339955),
        (2.0, 0.9772498680518207927997),
        (2.5, 0.993790334674223864833),
        (3.0, 0.9986501019683699054733),
        (3.5, 0.9997673709209644749637),
        (4.0, 0.9999683287581668800787),
        (5.0, 0.9999997133484281208061),
        (6.0, 0.9999999990134123549623),
        (8.0, 0.9999999999999993779039),
        (-20.0, 2.753624118606233695076e-89),
    ];

    #[test]
    fn cdf_matches_high_precision_reference() {
        for &(x, want) in &CDF_GRID {
            let got = std_normal_cdf(x).get();
            assert!(
                (got - want).abs() <= 1e-15,
                "Phi({x}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn cdf_point_examples() {
        assert_eq!(std_normal_cdf(0.0).get(), 0.5);
        assert!((std_normal_cdf(0.6).get() - 0.72574688224992641971).abs() < 1e-15);
        let x = 1.7;
        let sym = std_normal_cdf(-x).get();
        assert!((sym - (1.0 - std_normal_cdf(x).get())).abs() < 1e-15);
    }

    #[test]
    fn pdf_values() {
        assert!((std_normal_pdf(0.0) - 0.39894228040143267794).abs() < 1e-16);
        assert!((std_normal_pdf(6.0) - 6.075882849823285487e-9).abs() < 1e-22);
        assert_eq!(std_normal_pdf(1.0), std_normal_pdf(-1.0));
    }

    #[test]
    fn inv_cdf_examples() {
        assert_eq!(std_normal_inv_cdf(0.5).unwrap(), 0.0);
        let got = std_normal_inv_cdf(0.975).unwrap();
        assert!((got - 1.9599639845400542355).abs() < 1e-12, "got {got}");
        // round trip at x = -2.3
        let p = std_normal_cdf(-2.3).get();
        let back = std_normal_inv_cdf(p).unwrap();
        assert!((back + 2.3).abs() < 1e-10, "round trip gave {back}");
    }

    #[test]
    fn inv_cdf_rejects_endpoints() {
        assert!(std_normal_inv_cdf(0.0).is_err());
        assert!(std_normal_inv_cdf(1.0).is_err());
        assert!(std_normal_inv_cdf(-0.2).is_err());
        match std_normal_inv_cdf(1.5) {
            Err(Error::Domain { value, .. }) => assert_eq!(value, 1.5),
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_across_range() {
        // |Phi(Phi^-1(p)) - p| <= 1e-12 * max(p, 1-p) on [1e-15, 1-1e-15]
        let mut p = 1e-15;
        while p < 1.0 {
            let x = std_normal_inv_cdf(p).unwrap();
            let back = std_normal_cdf(x).get();
            let tol = 1e-12 * p.max(1.0 - p);
            assert!((back - p).abs() <= tol, "p={p}: back={back}");
            p *= 3.7;
            if p > 0.5 && p < 1.0 - 1e-15 {
                // also walk the upper tail
                let q = 1.0 - p / 3.7;
                let x = std_normal_inv_cdf(q).unwrap();
                let back = std_normal_cdf(x).get();
                let tol = 1e-12 * q.max(1.0 - q);
                assert!((back - q).abs() <= tol, "q={q}: back={back}");
            }
        }
    }

    proptest! {
        #[test]
        fn cdf_symmetry(x in -30.0f64..30.0) {
            let s = std_normal_cdf(x).get() + std_normal_cdf(-x).get();
            prop_assert!((s - 1.0).abs() <= 1e-15);
        }

        #[test]
        fn cdf_monotone(x in -10.0f64..10.0, dx in 1e-6f64..1.0) {
            prop_assert!(std_normal_cdf(x + dx).get() >= std_normal_cdf(x).get());
        }

        #[test]
        fn round_trip_prop(p in 1e-12f64..1.0) {
            prop_assume!(p < 1.0 - 1e-12);
            let x = std_normal_inv_cdf(p).unwrap();
            let back = std_normal_cdf(x).get();
            prop_assert!((back - p).abs() <= 1e-12 * p.max(1.0 - p));
        }
    }

    #[test]
    fn stream_is_deterministic() {
        let mut a = RandomStream::new(42, 7);
        let mut b = RandomStream::new(42, 7);
        for _ in 0..100 {
            assert_eq!(a.next_f64(), b.next_f64());
        }
        // copy semantics: replay from a copy
        let snapshot = a;
        let expected: Vec<f64> = (0..10).map(|_| a.next_f64()).collect();
        let mut replay = snapshot;
        let got: Vec<f64> = (0..10).map(|_| replay.next_f64()).collect();
        assert_eq!(expected, got);
    }

    #[test]
    fn stream_stays_in_open_interval() {
        let mut s = RandomStream::new(1, 0);
        for _ in 0..100_000 {
            let u = s.next_f64();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn stream_mean_is_half() {
        let mut s = RandomStream::new(2024, 0);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += s.next_f64();
        }
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 0.002, "mean {mean}");
    }

    #[test]
    fn parallel_streams_are_uncorrelated() {
        let n = 100_000;
        let mut a = RandomStream::new(9, 0);
        let mut b = RandomStream::new(9, 1);
        let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = a.next_f64();
            let y = b.next_f64();
            sa += x;
            sb += y;
            saa += x * x;
            sbb += y * y;
            sab += x * y;
        }
        let nf = n as f64;
        let cov = sab / nf - (sa / nf) * (sb / nf);
        let var_a = saa / nf - (sa / nf) * (sa / nf);
        let var_b = sbb / nf - (sb / nf) * (sb / nf);
        let rho = cov / (var_a * var_b).sqrt();
        assert!(rho.abs() < 0.01, "correlation {rho}");
    }

    #[test]
    fn probability_validates() {
        assert!(Probability::new(0.5).is_ok());
        assert!(Probability::new(0.0).is_ok());
        assert!(Probability::new(1.0).is_ok());
        assert!(Probability::new(-0.1).is_err());
        assert!(Probability::new(1.1).is_err());
        assert!(Probability::new(f64::NAN).is_err());
    }
}
