use num_rational::Ratio;

use crate::market::Price;

/// An exact moving-average value, in price ticks.
pub type Average = Ratio<i64>;

pub fn average_to_f64(avg: &Average) -> f64 {
    *avg.numer() as f64 / *avg.denom() as f64 / crate::market::TICKS_PER_UNIT as f64
}

/// Trailing simple moving average of `closes` over `period` bars.
///
/// Entries before the first full window are `None`; the output always has the
/// same length as the input. A zero period yields all `None`.
pub fn moving_average(closes: &[Price], period: usize) -> Vec<Option<Average>> {
    let mut out = vec![None; closes.len()];
    if period == 0 || closes.len() < period {
        return out;
    }
    let mut sum: i64 = closes[..period].iter().map(|p| p.ticks()).sum();
    out[period - 1] = Some(Ratio::new(sum, period as i64));
    for i in period..closes.len() {
        sum += closes[i].ticks() - closes[i - period].ticks();
        out[i] = Some(Ratio::new(sum, period as i64));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn units(v: &[i64]) -> Vec<Price> {
        v.iter().map(|&u| Price::from_units(u)).collect()
    }

    fn avg_units(u: i64) -> Option<Average> {
        Some(Ratio::from_integer(Price::from_units(u).ticks()))
    }

    #[test]
    fn constant_series() {
        assert_eq!(
            moving_average(&units(&[10, 10, 10, 10]), 3),
            vec![None, None, avg_units(10), avg_units(10)]
        );
    }

    #[test]
    fn hand_computed() {
        // (1+2+3)/3 = 2, (2+3+4)/3 = 3
        assert_eq!(
            moving_average(&units(&[1, 2, 3, 4]), 3),
            vec![None, None, avg_units(2), avg_units(3)]
        );
    }

    #[test]
    fn shorter_than_period() {
        assert_eq!(moving_average(&units(&[5]), 9), vec![None]);
        assert!(moving_average(&[], 3).is_empty());
    }

    #[test]
    fn non_integral_mean_is_exact() {
        let ma = moving_average(&units(&[1, 1, 2]), 3);
        assert_eq!(ma[2], Some(Ratio::new(40_000, 3)));
        assert!((average_to_f64(ma[2].as_ref().unwrap()) - 4.0 / 3.0).abs() < 1e-12);
    }

    fn brute_force(closes: &[Price], k: usize) -> Vec<Option<Average>> {
        (0..closes.len())
            .map(|i| {
                (i + 1 >= k).then(|| {
                    let s: i64 = closes[i + 1 - k..=i].iter().map(|p| p.ticks()).sum();
                    Ratio::new(s, k as i64)
                })
            })
            .collect()
    }

    proptest! {
        #[test]
        fn matches_window_sums(
            ticks in proptest::collection::vec(1i64..10_000_000, 1..120),
            k in prop::sample::select(vec![3usize, 6, 9]),
        ) {
            let closes: Vec<Price> = ticks.into_iter().map(Price::from_ticks).collect();
            prop_assert_eq!(moving_average(&closes, k), brute_force(&closes, k));
        }

        #[test]
        fn translation_equivariant(
            ticks in proptest::collection::vec(1i64..10_000_000, 1..120),
            shift in -500_000i64..5_000_000,
            k in prop::sample::select(vec![3usize, 6, 9]),
        ) {
            let closes: Vec<Price> = ticks.iter().map(|&t| Price::from_ticks(t)).collect();
            let shifted: Vec<Price> = ticks.iter().map(|&t| Price::from_ticks(t + shift)).collect();
            let base = moving_average(&closes, k);
            let moved = moving_average(&shifted, k);
            prop_assert_eq!(base.len(), moved.len());
            for (a, b) in base.iter().zip(&moved) {
                match (a, b) {
                    (Some(a), Some(b)) => prop_assert_eq!(*a + Ratio::from_integer(shift), *b),
                    (None, None) => {}
                    _ => prop_assert!(false, "definedness changed"),
                }
            }
        }

        #[test]
        fn constant_is_fixed_point(
            t in 1i64..10_000_000,
            n in 1usize..100,
            k in prop::sample::select(vec![3usize, 6, 9]),
        ) {
            let closes = vec![Price::from_ticks(t); n];
            for v in moving_average(&closes, k).into_iter().flatten() {
                prop_assert_eq!(v, Ratio::from_integer(t));
            }
        }
    }
}
