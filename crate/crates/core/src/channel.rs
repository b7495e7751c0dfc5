//! Uplink channel: path loss, log-normal shadowing, Gauss-Markov small-scale
//! fading and the Shannon rate.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{SimConfig, LIGHT_SPEED};

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("path loss needs a positive distance, got {0} m")]
    NonPositiveDistance(f64),
}

/// One slot's channel between a vehicle and the base station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSample {
    pub distance_m: f64,
    pub path_loss_db: f64,
    /// Large-scale linear power gain (path loss and shadowing).
    pub large_scale_h: f64,
    pub small_scale_s: Complex64,
    pub gain_g: f64,
    /// Uplink rate, bits/s.
    pub rate_r: f64,
}

/// Path loss in dB for a distance given in metres (the model constants are in km).
pub fn path_loss_db(distance_m: f64) -> Result<f64, ChannelError> {
    if !(distance_m > 0.0) {
        return Err(ChannelError::NonPositiveDistance(distance_m));
    }
    Ok(128.1 + 37.6 * (distance_m / 1000.0).log10())
}

/// Shadowing in dB, zero-mean Gaussian with standard deviation `sigma_db`.
pub fn sample_shadowing<R: Rng + ?Sized>(rng: &mut R, sigma_db: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    sigma_db * z
}

/// Zeroth-order Bessel function of the first kind.
///
/// Power series up to |x| = 12, Hankel asymptotic expansion beyond.
pub fn bessel_j0(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 12.0 {
        let q = -0.25 * ax * ax;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut m = 1.0;
        loop {
            term *= q / (m * m);
            sum += term;
            if term.abs() < 1e-17 * sum.abs().max(1e-300) && m > ax {
                break;
            }
            m += 1.0;
            if m > 200.0 {
                break;
            }
        }
        sum
    } else {
        // c_k = prod_{j=1..k} (0 - (2j-1)^2) / (k! (8x)^k)
        let mut p = 1.0;
        let mut q = 0.0;
        let mut c = 1.0;
        let mut prev = f64::INFINITY;
        for k in 1..60 {
            let odd = (2 * k - 1) as f64;
            c *= -(odd * odd) / (k as f64 * 8.0 * ax);
            if c.abs() >= prev || c.abs() < 1e-17 {
                break;
            }
            prev = c.abs();
            match k % 4 {
                1 => q += c,
                2 => p -= c,
                3 => q -= c,
                _ => p += c,
            }
        }
        let chi = ax - PI / 4.0;
        (2.0 / (PI * ax)).sqrt() * (p * chi.cos() - q * chi.sin())
    }
}

/// Maximum Doppler shift `v · f_c / c`, Hz.
pub fn doppler_shift(speed: f64, carrier_fc: f64) -> f64 {
    speed * carrier_fc / LIGHT_SPEED
}

/// Slot-to-slot correlation `J0(2π f_d Δt)` of the small-scale fading.
pub fn doppler_correlation(speed: f64, carrier_fc: f64, dt: f64) -> f64 {
    bessel_j0(2.0 * PI * doppler_shift(speed, carrier_fc) * dt)
}

/// Draws from the unit circularly symmetric complex Gaussian.
pub fn sample_unit_complex<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// First-order Gauss-Markov update `s = κ s_prev + e`, `e ~ CN(0, 1 − κ²)`.
pub fn step_small_scale<R: Rng + ?Sized>(s_prev: Complex64, kappa: f64, rng: &mut R) -> Complex64 {
    debug_assert!(kappa.abs() <= 1.0);
    let innovation = sample_unit_complex(rng) * (1.0 - kappa * kappa).max(0.0).sqrt();
    s_prev * kappa + innovation
}

/// Linear large-scale gain from path loss and shadowing, both in dB.
pub fn large_scale_gain(path_loss_db: f64, shadow_db: f64) -> f64 {
    10f64.powf(-(path_loss_db + shadow_db) / 10.0)
}

pub fn channel_gain(s: Complex64, large_scale_h: f64) -> f64 {
    s.norm_sqr() * large_scale_h
}

/// Shannon rate `w log2(1 + p g / ρ²)`, bits/s.
pub fn transmission_rate(bandwidth_w: f64, tx_power_p: f64, gain_g: f64, noise_rho2: f64) -> f64 {
    bandwidth_w * (1.0 + tx_power_p * gain_g / noise_rho2).log2()
}

/// Euclidean distance from a road position to an elevated base station.
pub fn distance_to_bs(position: f64, bs_position: f64, bs_elevation: f64) -> f64 {
    (position - bs_position).hypot(bs_elevation)
}

/// Evaluates the full channel for a vehicle at `position` with the given
/// shadowing and small-scale state.
pub fn sample_channel(
    config: &SimConfig,
    position: f64,
    shadow_db: f64,
    small_scale_s: Complex64,
) -> Result<ChannelSample, ChannelError> {
    let distance_m = distance_to_bs(position, config.bs_position, config.bs_elevation);
    let path_loss_db = path_loss_db(distance_m)?;
    let large_scale_h = large_scale_gain(path_loss_db, shadow_db);
    let gain_g = channel_gain(small_scale_s, large_scale_h);
    let rate_r = transmission_rate(config.bandwidth_w, config.tx_power_p, gain_g, config.noise_rho2);
    Ok(ChannelSample {
        distance_m,
        path_loss_db,
        large_scale_h,
        small_scale_s,
        gain_g,
        rate_r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: J0(x) = (1/π) ∫_0^π cos(x sin θ) dθ, trapezoid rule.
    /// The integrand is smooth and periodic, so the rule converges geometrically.
    fn j0_quadrature(x: f64) -> f64 {
        let m = 4000;
        let h = PI / m as f64;
        let mut s = 0.5 * (1.0 + (x * (PI).sin()).cos());
        for i in 1..m {
            s += (x * (i as f64 * h).sin()).cos();
        }
        s * h / PI
    }

    /// Independent oracle: plain truncated power series (valid for moderate x).
    fn j0_series(x: f64) -> f64 {
        let mut sum = 0.0;
        let mut fact = 1.0;
        for m in 0..40 {
            if m > 0 {
                fact *= m as f64;
            }
            sum += (-1f64).powi(m) * (x / 2.0).powi(2 * m) / (fact * fact);
        }
        sum
    }

    #[test]
    fn path_loss_examples() {
        assert!((path_loss_db(1000.0).unwrap() - 128.1).abs() < 1e-12);
        assert!((path_loss_db(100.0).unwrap() - 90.5).abs() < 1e-9);
        assert!((path_loss_db(10_000.0).unwrap() - 165.7).abs() < 1e-9);
    }

    #[test]
    fn path_loss_rejects_nonpositive_distance() {
        assert_eq!(path_loss_db(0.0), Err(ChannelError::NonPositiveDistance(0.0)));
        assert!(path_loss_db(-3.0).is_err());
        assert!(path_loss_db(f64::NAN).is_err());
    }

    #[test]
    fn shadowing_degenerate_and_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            assert_eq!(sample_shadowing(&mut rng, 0.0), 0.0);
        }
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_shadowing(&mut rng, 8.0)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((var.sqrt() - 8.0).abs() < 0.1, "std {}", var.sqrt());
    }

    #[test]
    fn bessel_examples() {
        assert_eq!(bessel_j0(0.0), 1.0);
        assert!(bessel_j0(2.404826).abs() < 1e-5);
        // the commonly quoted 0.22009 is only good to three decimals; the series gives 0.2202769
        assert!((j0_series(2.0 * PI) - 0.22009).abs() < 2e-4);
        assert!((j0_series(2.0 * PI) - 0.220_276_908_5).abs() < 1e-9);
        assert!((bessel_j0(2.0 * PI) - j0_series(2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn bessel_matches_quadrature_up_to_fifty() {
        let mut worst: f64 = 0.0;
        let mut x = -50.0;
        while x <= 50.0 {
            worst = worst.max((bessel_j0(x) - j0_quadrature(x)).abs());
            x += 0.0173;
        }
        assert!(worst <= 1e-7, "worst abs error {worst}");
    }

    #[test]
    fn bessel_series_branch_matches_series_oracle() {
        for i in 0..=120 {
            let x = i as f64 * 0.1;
            assert!((bessel_j0(x) - j0_series(x)).abs() < 1e-10, "x = {x}");
        }
    }

    #[test]
    fn doppler_examples() {
        assert_eq!(doppler_correlation(0.0, 2e9, 0.1), 1.0);
        assert!((doppler_shift(15.0, 2e9) - 100.0).abs() < 1e-9);
        let k = doppler_correlation(15.0, 2e9, 0.01);
        assert!((k - j0_series(2.0 * PI)).abs() < 1e-10);
        assert!((k - 0.22009).abs() < 2e-4);
    }

    #[test]
    fn gauss_markov_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s0 = Complex64::new(0.3, -1.1);
        assert_eq!(step_small_scale(s0, 1.0, &mut rng), s0);

        let n = 100_000;
        let mut second = 0.0;
        for _ in 0..n {
            second += step_small_scale(s0, 0.0, &mut rng).norm_sqr();
        }
        assert!((second / n as f64 - 1.0).abs() < 0.02);
    }

    #[test]
    fn gauss_markov_lag_one_autocorrelation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut s = sample_unit_complex(&mut rng);
        let mut xs = Vec::with_capacity(n);
        for _ in 0..n {
            s = step_small_scale(s, 0.9, &mut rng);
            xs.push(s.re);
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
        let cov = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>();
        let rho = cov / var;
        assert!((rho - 0.9).abs() < 0.02, "rho {rho}");
    }

    #[test]
    fn gauss_markov_is_stationary() {
        for &kappa in &[0.3, 0.9, -0.5] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut s = sample_unit_complex(&mut rng);
            let n = 100_000;
            let mut acc = 0.0;
            for _ in 0..n {
                s = step_small_scale(s, kappa, &mut rng);
                acc += s.norm_sqr();
            }
            assert!((acc / n as f64 - 1.0).abs() < 0.02, "kappa {kappa}");
        }
    }

    #[test]
    fn gain_examples() {
        assert_eq!(channel_gain(Complex64::new(1.0, 0.0), 2.0), 2.0);
        assert_eq!(channel_gain(Complex64::new(0.0, 0.0), 2.0), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = 3.5e-12;
        let n = 100_000;
        let mean = (0..n)
            .map(|_| channel_gain(sample_unit_complex(&mut rng), h))
            .sum::<f64>()
            / n as f64;
        assert!((mean / h - 1.0).abs() < 0.02);
    }

    #[test]
    fn rate_examples() {
        let rho2 = 1e-14;
        assert_eq!(transmission_rate(20e6, 0.2, 0.0, rho2), 0.0);
        let g1 = rho2 / 0.2;
        assert!((transmission_rate(20e6, 0.2, g1, rho2) / 20e6 - 1.0).abs() < 1e-9);
        let g3 = 3.0 * rho2 / 0.2;
        assert!((transmission_rate(20e6, 0.2, g3, rho2) / 40e6 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rate_is_monotone() {
        let base = transmission_rate(20e6, 0.2, 1e-12, 1e-14);
        assert!(transmission_rate(20e6, 0.2, 2e-12, 1e-14) > base);
        assert!(transmission_rate(20e6, 0.3, 1e-12, 1e-14) > base);
        assert!(transmission_rate(20e6, 0.2, 1e-12, 2e-14) < base);
    }

    #[test]
    fn sample_channel_is_consistent() {
        let cfg = SimConfig::default();
        let s = Complex64::new(0.8, 0.6);
        let c = sample_channel(&cfg, 500.0, 0.0, s).unwrap();
        assert_eq!(c.distance_m, 10.0);
        assert!((c.gain_g - s.norm_sqr() * c.large_scale_h).abs() <= 1e-30);
        assert!(c.rate_r > 0.0);
    }
}
