use std::sync::Arc;

use offpolicy_core::bandit::{true_risk, Context, Environment, Policy};
use offpolicy_core::bounds::{
    infinite_moment_bound_from, ix_bound_scored, ls_bound_scored, psi_lambda,
    second_moment_bound_scored, BoundConfig, ScoredData,
};
use offpolicy_core::estimators::{
    ips_estimate, ix_coverage_oracle, ls_estimate, s_lambda_oracle, Regularizer,
};
use offpolicy_core::experiments::relative_radius;
use offpolicy_core::lgp::{kl_gaussian, lgp_propensity, GaussianPosterior, LgpPolicy, PropensityMode};
use offpolicy_core::pac::{ix_pac_bound_value, pac_bound_value, LearnConfig};
use offpolicy_core::policies::{SoftmaxLinear, TabularByLabel};
use offpolicy_core::rng::SeedStream;
use offpolicy_core::selection::{select_with, CandidateSet, LambdaRule, SelectionMethod};
use offpolicy_core::{ActionId, LoggedDataset, LoggedRecord};
use proptest::prelude::*;

fn triple() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.0..=1.0f64, 1e-4..=1.0f64, -1.0..=0.0f64)
}

fn triples(max: usize) -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec(triple(), 1..max)
}

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01..1.0f64, k).prop_map(|w| {
        let s: f64 = w.iter().sum();
        let mut row: Vec<f64> = w.iter().map(|v| v / s).collect();
        // Push the rounding residual into the last entry.
        let head: f64 = row[..row.len() - 1].iter().sum();
        *row.last_mut().unwrap() = 1.0 - head;
        row
    })
}

fn table(k: usize) -> impl Strategy<Value = TabularByLabel> {
    prop::collection::vec(simplex(k), k).prop_map(|rows| TabularByLabel::from_rows(rows).unwrap())
}

/// A labeled logged dataset with arbitrary valid propensities and costs.
fn dataset(k: usize) -> impl Strategy<Value = LoggedDataset> {
    prop::collection::vec((0..k, 0..k, -1.0..=0.0f64, 0.01..=1.0f64), 2..40).prop_map(move |rows| {
        let records = rows
            .into_iter()
            .map(|(y, a, c, q)| LoggedRecord {
                context: Context::labeled(vec![1.0], y),
                action: ActionId(a),
                cost: c,
                propensity: q,
            })
            .collect();
        LoggedDataset::new(records, k).unwrap()
    })
}

fn regularizer() -> impl Strategy<Value = Regularizer> {
    prop_oneof![
        Just(Regularizer::Ips),
        (0.01..100.0f64).prop_map(|m| Regularizer::Clipping { m }),
        (0.0..=1.0f64).prop_map(|alpha| Regularizer::ExpSmoothing { alpha }),
        (0.0..5.0f64).prop_map(|gamma| Regularizer::ImplicitExploration { gamma }),
        (1e-3..10.0f64).prop_map(|lambda| Regularizer::GlobalClipping { lambda }),
        (0.0..10.0f64).prop_map(|lambda| Regularizer::LogSmoothing { lambda }),
    ]
}

fn posterior(k: usize, p: usize) -> impl Strategy<Value = GaussianPosterior> {
    (prop::collection::vec(-2.0..2.0f64, k * p), 0.2..3.0f64)
        .prop_map(move |(mu, sigma)| GaussianPosterior::new(k, p, mu, sigma).unwrap())
}

fn features(p: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, p).prop_filter("non-zero context", |x| x.iter().any(|v| v.abs() > 1e-3))
}

fn c1_tol(lower: f64) -> f64 {
    1e-12 * lower.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn regularizers_satisfy_c1(h in regularizer(), ts in prop::collection::vec(triple(), 1..200)) {
        for (p, q, c) in ts {
            let v = h.apply(p, q, c);
            let lower = p * c / q;
            prop_assert!(v <= 0.0, "{h:?} gives {v} > 0");
            prop_assert!(v >= lower - c1_tol(lower), "{h:?} gives {v} < {lower}");
        }
    }

    #[test]
    fn tabular_policies_are_normalized(pol in table(4), y in 0..4usize) {
        let ctx = Context::labeled(vec![0.0], y);
        let probs = pol.full_probs(&ctx).unwrap();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        for (a, p) in probs.iter().enumerate() {
            prop_assert_eq!(*p, pol.prob(&ctx, ActionId(a)).unwrap());
        }
    }

    #[test]
    fn softmax_policies_are_normalized(
        w in prop::collection::vec(-5.0..5.0f64, 12),
        tau in 0.05..5.0f64,
        x in features(3),
    ) {
        let pol = SoftmaxLinear::new(4, 3, w, tau).unwrap();
        let ctx = Context::new(x);
        let probs = pol.full_probs(&ctx).unwrap();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        for (a, p) in probs.iter().enumerate() {
            prop_assert_eq!(*p, pol.prob(&ctx, ActionId(a)).unwrap());
        }
    }

    #[test]
    fn lgp_quadrature_is_normalized(q in posterior(3, 2), x in features(2)) {
        let pol = LgpPolicy::quadrature(q).unwrap();
        let probs = pol.full_probs(&Context::new(x)).unwrap();
        prop_assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn lgp_monte_carlo_tracks_quadrature(q in posterior(3, 2), x in features(2), a in 0..3usize, seed in any::<u64>()) {
        let ctx = Context::new(x);
        let mc = lgp_propensity(&q, &ctx, a, PropensityMode::MonteCarlo { samples: 4096, seed }).unwrap();
        let quad = lgp_propensity(&q, &ctx, a, PropensityMode::Quadrature { nodes: 128 }).unwrap();
        prop_assert!((mc - quad).abs() <= 5.0 / 4096f64.sqrt(), "mc {mc} vs quadrature {quad}");
    }

    #[test]
    fn ls_is_pessimistic_and_shrinks_with_lambda(
        data in dataset(3),
        pol in table(3),
        l1 in 0.0..5.0f64,
        dl in 0.0..5.0f64,
    ) {
        let ips = offpolicy_core::estimators::regularized_estimate(&data, &pol, Regularizer::Ips).unwrap();
        let zero = ls_estimate(&data, &pol, 0.0).unwrap();
        prop_assert_eq!(zero.value, ips_estimate(&data, &pol).unwrap());
        let a = ls_estimate(&data, &pol, l1).unwrap();
        let b = ls_estimate(&data, &pol, l1 + dl).unwrap();
        for ((x, y), z) in a.per_sample.iter().zip(&b.per_sample).zip(&ips.per_sample) {
            prop_assert!(y.abs() <= x.abs() + 1e-15);
            prop_assert!(*x >= *z - 1e-15);
        }
        prop_assert!(a.value >= ips.value - 1e-15);
    }

    #[test]
    fn ls_matches_its_moment_series(data in dataset(3), pol in table(3), frac in 0.0..0.6f64) {
        let ips = offpolicy_core::estimators::regularized_estimate(&data, &pol, Regularizer::Ips).unwrap();
        let max = ips.per_sample.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assume!(max > 0.0);
        let lambda = frac / max;
        let ls = ls_estimate(&data, &pol, lambda).unwrap().value;
        let n = ips.per_sample.len() as f64;
        let mut series = ips.value;
        for ell in 2..=50 {
            let moment: f64 = ips.per_sample.iter().map(|x| x.powi(ell)).sum::<f64>() / n;
            series += lambda.powi(ell - 1) / f64::from(ell) * moment;
        }
        prop_assert!((ls - series).abs() <= 1e-8, "ls {ls} vs series {series}");
    }

    #[test]
    fn psi_contracts_and_increases(lambda in 1e-6..20.0f64, x in -50.0..50.0f64, dx in 1e-6..10.0f64) {
        prop_assume!(lambda * (x.abs() + dx) < 500.0);
        let y = psi_lambda(lambda, x);
        prop_assert!(y <= x + 1e-12 * x.abs().max(1.0));
        let z = psi_lambda(lambda, x + dx);
        prop_assert!(z > y || (z - y).abs() <= f64::EPSILON * y.abs());
    }

    #[test]
    fn psi_vanishing_lambda_is_identity(x in -50.0..50.0f64) {
        prop_assert!((psi_lambda(1e-8, x) - x).abs() <= 1e-6 * (1.0 + x * x));
    }

    #[test]
    fn ls_bound_dominates(ts in triples(100), lambda in 1e-3..10.0f64, delta in 1e-3..=1.0f64) {
        let s = ScoredData::from_triples(&ts).unwrap();
        let ls = ls_bound_scored(&s, lambda, delta).unwrap().upper;
        prop_assert!(ls <= second_moment_bound_scored(&s, lambda, delta).unwrap().upper);
        prop_assert!(ls <= ix_bound_scored(&s, lambda, delta).unwrap().upper);
    }

    #[test]
    fn ips_minimizes_the_infinite_bound(
        ts in triples(100),
        h in regularizer(),
        lambda in 1e-3..10.0f64,
        delta in 1e-3..=1.0f64,
    ) {
        let s = ScoredData::from_triples(&ts).unwrap();
        let cfg = BoundConfig::infinite(lambda, delta).unwrap();
        let ips = infinite_moment_bound_from(&s.regularized(Regularizer::Ips), "IPS", &cfg).unwrap().upper;
        let other = infinite_moment_bound_from(&s.regularized(h), h.name(), &cfg).unwrap().upper;
        prop_assert!(ips <= other + 1e-12, "IPS {ips} > {} {other}", h.name());
    }

    #[test]
    fn kl_is_a_divergence(q in posterior(2, 3), p in posterior(2, 3), t in 0.0..3.0f64, dt in 1e-3..3.0f64) {
        prop_assert!(kl_gaussian(&q, &p).unwrap() >= 0.0);
        prop_assert!(kl_gaussian(&q, &q).unwrap().abs() <= 1e-12);
        let dir: Vec<f64> = q.mu.iter().zip(&p.mu).map(|(a, b)| a - b).collect();
        prop_assume!(dir.iter().any(|d| d.abs() > 1e-3));
        let at = |s: f64| {
            let mu = p.mu.iter().zip(&dir).map(|(b, d)| b + s * d).collect();
            kl_gaussian(&GaussianPosterior::new(2, 3, mu, q.sigma).unwrap(), &p).unwrap()
        };
        prop_assert!(at(t + dt) > at(t));
    }

    #[test]
    fn relative_radius_is_nonnegative(upper in -2.0..2.0f64, risk in -1.0..-1e-6f64) {
        prop_assert!(relative_radius(upper, risk).unwrap() >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lin_bound_dominates_ix_bound(
        q in posterior(3, 2),
        prior in posterior(3, 2),
        raw in prop::collection::vec((features(2), 0..3usize, -1.0..=0.0f64, 0.05..=1.0f64), 1..20),
        lambda in 1e-3..1.0f64,
    ) {
        let records = raw
            .into_iter()
            .map(|(x, a, c, p)| LoggedRecord { context: Context::new(x), action: ActionId(a), cost: c, propensity: p })
            .collect();
        let data = LoggedDataset::new(records, 3).unwrap();
        let cfg = LearnConfig::new(prior);
        let pol = LgpPolicy::quadrature(q).unwrap();
        let lin = pac_bound_value(&data, &pol, &cfg, lambda).unwrap();
        let ix = ix_pac_bound_value(&data, &pol, &cfg, lambda).unwrap();
        prop_assert!(lin <= ix + 1e-12, "LS-LIN {lin} > IX {ix}");
    }

    #[test]
    fn selection_ignores_candidate_order(
        data in dataset(3),
        pols in prop::collection::vec(table(3), 2..6),
        method in prop::sample::select(SelectionMethod::ALL.to_vec()),
        rotate in 0usize..6,
    ) {
        let named: Vec<(String, Arc<dyn Policy>)> = pols
            .into_iter()
            .enumerate()
            .map(|(i, p)| (format!("cand{i}"), Arc::new(p) as Arc<dyn Policy>))
            .collect();
        let mut shuffled = named.clone();
        let len = shuffled.len();
        shuffled.rotate_left(rotate % len);
        shuffled.reverse();
        let a = select_with(&data, &CandidateSet::new(named).unwrap(), method, LambdaRule::UnionBound, 0.05).unwrap();
        let b = select_with(&data, &CandidateSet::new(shuffled).unwrap(), method, LambdaRule::UnionBound, 0.05).unwrap();
        prop_assert_eq!(&a.chosen, &b.chosen);
        prop_assert_eq!(&a.scores, &b.scores);
        let min = a.scores.values().copied().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(a.scores[&a.chosen], min);
        let first_min = a.scores.iter().find(|(_, v)| **v == min).unwrap().0;
        prop_assert_eq!(&a.chosen, first_min);
    }

    #[test]
    fn ls_certificate_is_below_ix_certificate(
        behavior in table(3),
        target in table(3),
        epsilon in 0.0..0.5f64,
        lambda in 1e-3..2.0f64,
        seed in any::<u64>(),
    ) {
        let mc = offpolicy_core::datagen::gaussian_blobs(3, 2, 12, 1.0, SeedStream::new(seed)).unwrap();
        let env: Environment = mc.environment(epsilon).unwrap();
        let s = s_lambda_oracle(&target, &behavior, &env, lambda).unwrap();
        let c = ix_coverage_oracle(&target, &behavior, &env, lambda / 2.0).unwrap();
        prop_assert!(s <= c + 1e-12, "S_lambda {s} > C_lambda/2 {c}");
        let r = true_risk(&target, &env).unwrap();
        prop_assert!((-1.0..=0.0).contains(&r));
    }

    #[test]
    fn logged_propensities_are_behavior_probabilities(behavior in table(4), seed in any::<u64>(), epsilon in 0.0..0.5f64) {
        let mc = offpolicy_core::datagen::gaussian_blobs(4, 2, 30, 1.0, SeedStream::new(seed)).unwrap();
        let data = offpolicy_core::datagen::bandit_feedback(&mc, &behavior, epsilon, SeedStream::new(seed ^ 1)).unwrap();
        for r in data.records() {
            prop_assert_eq!(r.propensity, behavior.prob(&r.context, r.action).unwrap());
            prop_assert!(r.cost == 0.0 || r.cost == -1.0);
        }
    }
}
