use super::{
    choice_values_with_mode, ChoiceValues, DrawSet, ModelPrimitives, ProbabilityConfig,
    StructuralBeta, ZCell,
};
use crate::error::{Error, Result};
use crate::model::ChoicePair;

/// Arg-max over the four choice values. Exact ties go to the earlier choice
/// in the order (0,0), (0,1), (1,0), (1,1).
pub fn hard_choice(v: &ChoiceValues) -> ChoicePair {
    let mut best = ChoicePair::ALL[0];
    for c in &ChoicePair::ALL[1..] {
        if v.get(*c) > v.get(best) {
            best = *c;
        }
    }
    best
}

/// Logistic-smoothed choice probabilities, indexed by [`ChoicePair::index`].
pub fn smoothed_probabilities(v: &ChoiceValues, scale: f64) -> [f64; 4] {
    debug_assert!(scale > 0.0);
    let vmax = v.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = v.0.map(|x| ((x - vmax) / scale).exp());
    let total: f64 = e.iter().sum();
    e.map(|x| x / total)
}

/// Simulated probability of innovating and exporting at `cell`, conditional
/// on passing the entry test `v00 >= 0`.
///
/// Reference implementation that recomputes every value from scratch; the
/// estimator uses [`super::ProbabilityEngine`].
pub fn simulate_conditional_prob(
    cell: &ZCell,
    beta: &StructuralBeta,
    draws: &DrawSet,
    prims: &ModelPrimitives,
    cfg: &ProbabilityConfig,
) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::config("draw set is empty"));
    }
    let mut num = 0.0;
    let mut entrants = 0usize;
    for d in &draws.rows {
        let v = choice_values_with_mode(cell, beta, d, prims, cfg.mode);
        let enters = v.v00() >= 0.0;
        if enters {
            entrants += 1;
        }
        if enters || !cfg.gate_numerator {
            num += smoothed_probabilities(&v, cfg.scale)[ChoicePair::BOTH.index()];
        }
    }
    if entrants == 0 {
        return Err(Error::NoEntrants(*cell));
    }
    Ok(num / entrants as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::TransitionSet;
    use crate::model::Preferences;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hard_choice_examples() {
        assert_eq!(
            hard_choice(&ChoiceValues::new(1.0, 0.0, 0.0, 0.0)),
            ChoicePair::NONE
        );
        assert_eq!(
            hard_choice(&ChoiceValues::new(0.0, 0.0, 0.0, 1.0)),
            ChoicePair::BOTH
        );
        assert_eq!(
            hard_choice(&ChoiceValues::new(0.0, 2.0, 2.0, 1.0)),
            ChoicePair::EXPORT
        );
        assert_eq!(
            hard_choice(&ChoiceValues::new(3.0, 3.0, 3.0, 3.0)),
            ChoicePair::NONE
        );
    }

    #[test]
    fn hard_choice_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100_000 {
            let v = ChoiceValues::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            );
            let labeled = [
                (v.v00(), (0u8, 0u8)),
                (v.0[1], (0, 1)),
                (v.0[2], (1, 0)),
                (v.v11(), (1, 1)),
            ];
            let (_, (i, e)) = labeled
                .iter()
                .cloned()
                .fold((f64::NEG_INFINITY, (9, 9)), |acc, x| {
                    if x.0 > acc.0 {
                        x
                    } else {
                        acc
                    }
                });
            let c = hard_choice(&v);
            assert_eq!((c.chi1(), c.chi2()), (i, e));
        }
    }

    #[test]
    fn smoothing_examples() {
        let p = smoothed_probabilities(&ChoiceValues::new(2.0, 2.0, 2.0, 2.0), 1.0);
        assert!(p.iter().all(|x| (x - 0.25).abs() < 1e-15));
        let p = smoothed_probabilities(&ChoiceValues::new(0.0, 0.0, 0.0, 3f64.ln()), 1.0);
        assert!((p[3] - 0.5).abs() < 1e-14);
        let v = ChoiceValues::new(0.3, 1.0, -2.0, 0.9);
        let p = smoothed_probabilities(&v, 1e-4);
        assert!((p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smoothing_survives_large_values() {
        let p = smoothed_probabilities(&ChoiceValues::new(1e6, 1e6 + 1.0, -1e6, 1e6), 1.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|x| x.is_finite()));
    }

    fn prims() -> ModelPrimitives {
        let m = vec![
            0.7, 0.2, 0.1, 0.0, 0.1, 0.7, 0.1, 0.1, 0.0, 0.2, 0.7, 0.1, 0.0, 0.1, 0.2, 0.7,
        ];
        ModelPrimitives::new(
            Preferences::new(0.75, 0.92).unwrap(),
            0.95,
            0.8,
            TransitionSet::uniform_across_choices(4, m).unwrap(),
            vec![2.5, 3.25, 4.0, 4.75],
        )
        .unwrap()
    }

    fn beta() -> StructuralBeta {
        StructuralBeta {
            beta0: -10.0,
            beta1: 0.43,
            beta2: -1.77,
            beta3: 5.0,
            beta4: -1.5,
            beta5: 3.8,
            beta6: -1.0,
        }
    }

    #[test]
    fn no_entrants_is_an_error() {
        let mut p = prims();
        p.state_values = vec![0.01, 0.02, 0.03, 0.04];
        let draws = DrawSet::generate(50, 1);
        let cell = ZCell::new(1, ChoicePair::NONE, false);
        let err = simulate_conditional_prob(&cell, &beta(), &draws, &p, &Default::default());
        assert!(matches!(err, Err(Error::NoEntrants(c)) if c == cell));
    }

    #[test]
    fn prohibitive_entry_costs_shut_down_both() {
        let b = StructuralBeta {
            beta3: 30.0,
            beta5: 30.0,
            ..beta()
        };
        let draws = DrawSet::generate(200, 3);
        let cell = ZCell::new(4, ChoicePair::NONE, true);
        let p = simulate_conditional_prob(&cell, &b, &draws, &prims(), &Default::default())
            .unwrap();
        assert!(p < 1e-12);
    }

    #[test]
    fn sunk_entry_costs_raise_persistence_per_draw() {
        let p = prims();
        let draws = DrawSet::generate(300, 5);
        for d in &draws.rows {
            if d.eps5 + beta().export_entry(false) <= 0.0
                || d.eps6 + beta().innovation_entry(false) <= 0.0
            {
                continue;
            }
            let fresh = super::super::choice_values(
                &ZCell::new(3, ChoicePair::NONE, false),
                &beta(),
                d,
                &p,
            );
            let incumbent = super::super::choice_values(
                &ZCell::new(3, ChoicePair::BOTH, false),
                &beta(),
                d,
                &p,
            );
            let a = smoothed_probabilities(&fresh, 1.0)[3];
            let b = smoothed_probabilities(&incumbent, 1.0)[3];
            assert!(b >= a);
            if a > 0.0 && a < 1.0 {
                assert!(b > a);
            }
            let margin = |v: &ChoiceValues| v.v11() - v.0[..3].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(margin(&incumbent) > margin(&fresh));
        }
    }

    #[test]
    fn conditional_prob_in_unit_interval() {
        let draws = DrawSet::generate(200, 7);
        for cell in ZCell::all(4) {
            let pr = simulate_conditional_prob(&cell, &beta(), &draws, &prims(), &Default::default());
            if let Ok(pr) = pr {
                assert!((0.0..=1.0).contains(&pr));
            }
        }
    }
}
