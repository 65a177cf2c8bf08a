//! Seeded randomness for the simulator. The algorithm name is written into
//! every log header so a log can be matched to the generator that made it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};

pub type SimRng = ChaCha8Rng;

pub const RNG_ALGORITHM: &str = "chacha8";
pub const RNG_SOURCE: &str = "rand_chacha 0.9 / rand_distr 0.5";

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Liters arriving at a receptacle over `dt_s`: a Poisson parcel count with
/// mean `rate_per_hour * dt_s / 3600`, times the mean parcel size.
///
/// A zero rate still consumes one draw so that the generator advances the
/// same way whatever the load.
pub fn waste_arrival_volume<R: Rng + ?Sized>(rate_per_hour: f64, mean_parcel_liters: f64, dt_s: f64, rng: &mut R) -> f64 {
    debug_assert!(rate_per_hour >= 0.0 && dt_s > 0.0);
    let lambda = rate_per_hour * dt_s / 3_600.0;
    if lambda <= 0.0 {
        rng.next_u64();
        return 0.0;
    }
    let count: f64 = Poisson::new(lambda).expect("positive finite mean").sample(rng);
    count * mean_parcel_liters
}

pub fn exponential_ms<R: Rng + ?Sized>(rate_per_day: f64, rng: &mut R) -> Option<i64> {
    if rate_per_day <= 0.0 {
        return None;
    }
    let days: f64 = Exp::new(rate_per_day).expect("positive rate").sample(rng);
    Some((days * 86_400_000.0).round().max(1.0) as i64)
}

pub fn gaussian<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    Normal::new(mean, sd).expect("finite sd").sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn zero_rate_is_zero_but_advances() {
        let mut a = seeded(1);
        let mut b = seeded(1);
        assert_eq!(waste_arrival_volume(0.0, 10.0, 600.0, &mut a), 0.0);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn seed_42_golden() {
        let mut rng = seeded(42);
        let liters = waste_arrival_volume(6.0, 10.0, 600.0, &mut rng);
        assert_eq!(liters, GOLDEN_SEED42_LITERS);
    }

    // Recorded from a single run of the generator above.
    const GOLDEN_SEED42_LITERS: f64 = 20.0;

    #[test]
    fn monte_carlo_mean() {
        let mut rng = seeded(2024);
        let n = 10_000;
        let total: f64 = (0..n).map(|_| waste_arrival_volume(6.0, 10.0, 3_600.0, &mut rng)).sum();
        let mean = total / n as f64;
        assert!((mean - 60.0).abs() < 3.0, "mean {mean}");
    }

    #[test]
    fn same_seed_same_stream() {
        let draw = |seed| {
            let mut r = seeded(seed);
            (0..50).map(|_| waste_arrival_volume(3.0, 4.0, 60.0, &mut r)).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }
}
