use super::*;
use crate::data::fixtures::{illustrative_dataset, illustrative_spec};
use crate::data::ModelSpec;
use crate::estimator::{estimate_glam, EstimatorConfig};
use crate::synthetic::{taste_markets, TasteMarketsConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn illustrative_design() -> CompiledDesign {
    CompiledDesign::new(&illustrative_spec(), &["time".to_string(), "cost".to_string()]).unwrap()
}

fn market(attributes: Vec<Vec<f64>>) -> MarketObservation {
    let n = attributes.len();
    MarketObservation {
        agent_id: "x".into(),
        segment: "all".into(),
        region_id: "r".into(),
        origin_xy: [0.0; 2],
        destination_xy: [0.0; 2],
        attributes,
        shares: vec![1.0 / n as f64; n],
        demand: 1.0,
    }
}

/// Five alternatives, generic time and cost, constants on all but the first, and
/// a shift parameter entering every alternative.
fn five_mode_spec() -> ModelSpec {
    serde_json::from_str(
        r#"{
            "parameter_names": ["time", "cost", "b", "c", "d", "e", "shift"],
            "alternatives": ["a", "b", "c", "d", "e"],
            "design_map": {
                "a": {"time": "time", "cost": "cost", "shift": "one"},
                "b": {"time": "time", "cost": "cost", "b": "1", "shift": "one"},
                "c": {"time": "time", "cost": "cost", "c": "1", "shift": "one"},
                "d": {"time": "time", "cost": "cost", "d": "1", "shift": "one"},
                "e": {"time": "time", "cost": "cost", "e": "1", "shift": "one"}
            }
        }"#,
    )
    .unwrap()
}

fn five_mode_columns() -> Vec<String> {
    vec!["time".into(), "cost".into(), "one".into()]
}

fn five_mode_design() -> CompiledDesign {
    CompiledDesign::new(&five_mode_spec(), &five_mode_columns()).unwrap()
}

fn row(time: f64, cost: f64) -> Vec<f64> {
    vec![time, cost, 1.0]
}

fn random_five_mode_dataset(n: usize, seed: u64) -> (Dataset, AgentTastes) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = Vec::new();
    let mut thetas = HashMap::new();
    for t in 0..n {
        let mut o = market((0..5).map(|_| row(rng.random_range(1.0..30.0), rng.random_range(0.5..10.0))).collect());
        o.agent_id = format!("{t:03}");
        let theta: Vec<f64> = vec![
            rng.random_range(-0.2..0.0),
            rng.random_range(-1.0..0.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            0.0,
        ];
        o.shares = predict_shares(&theta, &o, &five_mode_design()).unwrap();
        let total: f64 = o.shares.iter().sum();
        o.shares.iter_mut().for_each(|s| *s /= total);
        thetas.insert(o.agent_id.clone(), theta);
        obs.push(o);
    }
    let ds = Dataset::new(five_mode_spec(), five_mode_columns(), obs, None).unwrap();
    (ds, AgentTastes::new(five_mode_design(), thetas))
}

#[test]
fn identical_alternatives_share_equally() {
    let s = predict_shares(&[-0.5, 0.3, 0.0], &market(vec![vec![4.0, 2.0]; 2]), &illustrative_design()).unwrap();
    assert_eq!(s, vec![0.5, 0.5]);
}

#[test]
fn reported_illustrative_parameters_reproduce_reported_share() {
    // agent 1: taxi (10 min, 10), transit (30 min, 3)
    let o = market(vec![vec![10.0, 10.0], vec![30.0, 3.0]]);
    let s = predict_shares(&[-0.107, -7.30e-8, -0.005], &o, &illustrative_design()).unwrap();
    // parameters are printed to three decimals, which moves the share by up to 1e-3
    assert!((s[0] - 0.8954).abs() < 1e-3, "{}", s[0]);
}

#[test]
fn matches_pairwise_ratio_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let design = five_mode_design();
    for _ in 0..200 {
        let o = market((0..5).map(|_| row(rng.random_range(0.0..60.0), rng.random_range(0.0..20.0))).collect());
        let theta: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
        let s = predict_shares(&theta, &o, &design).unwrap();
        let v = design.utilities(&theta, &o.attributes);
        for j in 0..5 {
            let oracle = 1.0 / v.iter().map(|vk| (vk - v[j]).exp()).sum::<f64>();
            assert!((s[j] - oracle).abs() <= 1e-14 * oracle.max(1e-300) + 1e-300, "{} vs {oracle}", s[j]);
        }
    }
}

#[test]
fn wrong_theta_length_and_overflow_are_errors() {
    let o = market(vec![vec![1.0, 1.0]; 2]);
    assert!(predict_shares(&[1.0], &o, &illustrative_design()).is_err());
    assert!(predict_shares(&[f64::MAX, f64::MAX, 0.0], &market(vec![vec![10.0, 10.0]; 2]), &illustrative_design()).is_err());
}

proptest! {
    #[test]
    fn softmax_translation_invariance(
        base in prop::collection::vec(-3.0f64..3.0, 6),
        shift in -50.0f64..50.0,
        attrs in prop::collection::vec((0.0f64..30.0, 0.0f64..10.0), 5),
    ) {
        let design = five_mode_design();
        let o = market(attrs.iter().map(|&(t, c)| row(t, c)).collect());
        let mut theta = base.clone();
        theta.push(0.0);
        let s0 = predict_shares(&theta, &o, &design).unwrap();
        theta[6] = shift;
        let s1 = predict_shares(&theta, &o, &design).unwrap();
        for (a, b) in s0.iter().zip(&s1) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn full_accuracy_iff_zero_error(
        p in prop::collection::vec(0.0f64..1.0, 12),
        q in prop::collection::vec(0.0f64..1.0, 12),
        same in any::<bool>(),
    ) {
        let norm = |v: &[f64]| -> Vec<Vec<f64>> {
            v.chunks(3).map(|c| {
                let s: f64 = c.iter().sum::<f64>() + 1e-9;
                c.iter().map(|x| (x + 1e-9 / 3.0) / s).collect()
            }).collect()
        };
        let obs = norm(&p);
        let pred = if same { obs.clone() } else { norm(&q) };
        let r = accuracy_metrics(&pred, &obs, 1).unwrap();
        prop_assert!(r.mae >= 0.0 && (0.0..=1.0 + 1e-12).contains(&r.overall_accuracy));
        prop_assert_eq!(r.overall_accuracy == 1.0, r.mae == 0.0);
    }
}

#[test]
fn perfect_prediction_scores_one() {
    let s = vec![vec![0.2, 0.8], vec![0.5, 0.5], vec![1.0, 0.0]];
    let r = accuracy_metrics(&s, &s, 1).unwrap();
    assert_eq!(r.mae, 0.0);
    assert_eq!(r.overall_accuracy, 1.0);
    assert_eq!(r.adjusted_r_square, Some(1.0));
}

#[test]
fn hand_computed_metrics() {
    let observed = vec![vec![0.8, 0.2], vec![0.3, 0.7]];
    let predicted = vec![vec![0.6, 0.4], vec![0.4, 0.6]];
    let r = accuracy_metrics(&predicted, &observed, 1).unwrap();
    // |diffs|: 0.2, 0.2, 0.1, 0.1
    assert!((r.mae - 0.15).abs() < 1e-15);
    assert!((r.per_alternative_mae[0] - 0.15).abs() < 1e-15);
    // overlaps: 0.6 + 0.2 and 0.3 + 0.6
    assert!((r.overall_accuracy - 0.85).abs() < 1e-15);
    // SSres = 0.1, SStot = 0.09 + 0.09 + 0.04 + 0.04 = 0.26; T = 2, K = 1
    let ars = 1.0 - (0.1 / 1.0) / (0.26 / 1.0);
    assert!((r.adjusted_r_square.unwrap() - ars).abs() < 1e-12);
    assert_eq!(accuracy_metrics(&predicted, &observed, 2).unwrap().adjusted_r_square, None);
}

#[test]
fn swapped_certain_shares_score_zero() {
    let r = accuracy_metrics(&[vec![0.0, 1.0]], &[vec![1.0, 0.0]], 0).unwrap();
    assert_eq!(r.overall_accuracy, 0.0);
    assert_eq!(r.mae, 1.0);
}

#[test]
fn zero_cost_parameter_gives_zero_elasticities() {
    let (ds, mut model) = random_five_mode_dataset(20, 1);
    for t in model.thetas.values_mut() {
        t[1] = 0.0;
    }
    for alt in ["a", "c"] {
        let e = price_elasticity(&model, &ds, "cost", alt, 0.01).unwrap();
        assert!(e.elasticity.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn single_agent_elasticity_matches_recomputation() {
    let (ds, model) = random_five_mode_dataset(1, 2);
    let o = &ds.observations()[0];
    let theta = model.theta(&o.agent_id).unwrap();
    let design = five_mode_design();
    let e = price_elasticity(&model, &ds, "cost", "b", 0.01).unwrap();
    let base = predict_shares(theta, o, &design).unwrap();
    let mut bumped = o.clone();
    bumped.attributes[1][1] *= 1.01;
    let after = predict_shares(theta, &bumped, &design).unwrap();
    for j in 0..5 {
        let oracle = (after[j] - base[j]) / base[j] / 0.01;
        assert!((e.elasticity[j] - oracle).abs() < 1e-12);
    }
    assert!(e.elasticity[1] < 0.0);
    assert!(e.elasticity.iter().enumerate().all(|(j, v)| j == 1 || *v > 0.0));
}

#[test]
fn direct_elasticities_negative_for_negative_cost() {
    let (ds, model) = random_five_mode_dataset(40, 3);
    for o in ds.observations() {
        for j in 0..5 {
            let e = agent_price_elasticities(&model, o, j, 1, 0.01).unwrap().unwrap();
            assert!(e[j] < 0.0);
        }
    }
}

#[test]
fn zero_prices_are_excluded() {
    let (ds, model) = random_five_mode_dataset(10, 4);
    let mut obs = ds.observations().to_vec();
    for o in obs.iter_mut().take(3) {
        o.attributes[2][1] = 0.0;
    }
    let ds2 = ds.with_observations(obs.clone()).unwrap();
    let e = price_elasticity(&model, &ds2, "cost", "c", 0.01).unwrap();
    assert_eq!(e.excluded_zero_price, 3);
    for o in obs.iter_mut() {
        o.attributes[2][1] = 0.0;
    }
    let ds3 = ds.with_observations(obs).unwrap();
    assert!(price_elasticity(&model, &ds3, "cost", "c", 0.01).is_err());
    let report = elasticity_report(&model, &ds3, "cost", &vec!["time".to_string(); 5], 0.01).unwrap();
    assert!(report.direct[2].is_nan());
    assert_eq!(report.excluded_zero_price[2], 10);
    let back: ElasticityReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert!(back.cross[2].iter().all(|v| v.is_nan()));
}

#[test]
fn two_alternatives_divert_everything() {
    let ds = illustrative_dataset();
    let r = estimate_glam(&ds, &EstimatorConfig { n_clusters: 2, ..Default::default() }).unwrap();
    let model = AgentTastes::from_estimation(&r, &ds).unwrap();
    let d = diversion_ratios(&model, &ds, &["time".to_string(), "time".to_string()], 0.01).unwrap();
    assert_eq!(d.matrix[0][0], -1.0);
    assert_eq!(d.matrix[1][1], -1.0);
    assert_eq!(d.matrix[0][1], 1.0);
    assert_eq!(d.matrix[1][0], 1.0);
}

#[test]
fn unresponsive_rows_are_undefined() {
    let ds = illustrative_dataset();
    let ids = ds.observations().iter().map(|o| (o.agent_id.clone(), vec![0.0, -0.2, 0.1]));
    let model = AgentTastes::new(ds.design().unwrap(), ids.collect());
    let d = diversion_ratios(&model, &ds, &["time".to_string(), "time".to_string()], 0.01).unwrap();
    assert_eq!(d.excluded, vec![8, 8]);
    assert_eq!(d.matrix[0][0], -1.0);
    assert!(d.matrix[0][1].is_nan() && d.matrix[1][0].is_nan());
    let back: DiversionMatrix = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
    assert!(back.matrix[1][0].is_nan());
}

#[test]
fn diversion_rows_sum_to_one() {
    let (ds, model) = random_five_mode_dataset(60, 5);
    let d = diversion_ratios(&model, &ds, &vec!["time".to_string(); 5], 0.01).unwrap();
    for (j, row) in d.matrix.iter().enumerate() {
        assert_eq!(row[j], -1.0);
        let off: f64 = row.iter().enumerate().filter(|&(k, _)| k != j).map(|(_, v)| v).sum();
        assert!((off - 1.0).abs() < 1e-9);
        assert!(row.iter().enumerate().all(|(k, v)| k == j || *v > 0.0));
    }
}

#[test]
fn value_of_time_ratio() {
    let names: Vec<String> = vec!["time".into(), "cost".into()];
    assert_eq!(value_of_time(&[-2.0, -1.0], &names, "time", "cost").unwrap(), Some(2.0));
    assert_eq!(value_of_time(&[-2.0, 0.0], &names, "time", "cost").unwrap(), None);
    assert!(value_of_time(&[-2.0, 0.0], &names, "time", "price").is_err());
}

#[test]
fn planted_value_of_time_is_recovered_per_segment() {
    let syn = taste_markets(&TasteMarketsConfig {
        n_agents: 300,
        tastes: vec![vec![-1.2, -0.08], vec![-0.45, -0.03]],
        n_segments: 3,
        ..Default::default()
    })
    .unwrap();
    let r = estimate_glam(&syn.dataset, &EstimatorConfig { n_clusters: 2, seed: 1, ..Default::default() }).unwrap();
    let vots = vot_by_segment(&r, &syn.dataset, "time", "cost").unwrap();
    assert_eq!(vots.len(), 3);
    for v in &vots {
        assert_eq!(v.n_undefined, 0);
        assert!((v.mean - 15.0).abs() < 1.5, "{v:?}");
    }
}

#[test]
fn equal_utilities_lose_log_two() {
    let o = market(vec![vec![1.0, 1.0]; 2]);
    let cv = compensating_variation(&[0.0, -1.0, 0.0], &o, &illustrative_design(), 1, 0).unwrap();
    assert!((cv.unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn removing_a_negligible_alternative_costs_nothing() {
    let o = market(vec![vec![1.0, 1.0]; 2]);
    let cv = compensating_variation(&[0.0, -1.0, -1000.0], &o, &illustrative_design(), 1, 1).unwrap();
    assert!(cv.unwrap().abs() < 1e-300);
}

#[test]
fn cv_matches_direct_logsums_and_composes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let design = five_mode_design();
    for _ in 0..100 {
        let o = market((0..5).map(|_| row(rng.random_range(0.0..30.0), rng.random_range(0.0..5.0))).collect());
        let mut theta: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
        theta[1] = -rng.random_range(0.1..2.0);
        let v = design.utilities(&theta, &o.attributes);
        let ls = |keep: &dyn Fn(usize) -> bool| (0..5).filter(|&j| keep(j)).map(|j| v[j].exp()).sum::<f64>().ln();
        let cv = compensating_variation(&theta, &o, &design, 1, 2).unwrap().unwrap();
        let oracle = (ls(&|j| j != 2) - ls(&|_| true)) / theta[1];
        assert!((cv - oracle).abs() < 1e-12 * (1.0 + oracle.abs()));
        assert!(cv >= 0.0);
        // removing 2 then 4 equals removing both at once
        let both = compensating_variation_set(&theta, &o, &design, 1, &[2, 4]).unwrap().unwrap();
        let second = (ls(&|j| j != 2 && j != 4) - ls(&|j| j != 2)) / theta[1];
        assert!((both - (cv + second)).abs() < 1e-12 * (1.0 + both.abs()));
    }
}

#[test]
fn cv_requires_negative_cost_and_a_remaining_alternative() {
    let o = market(vec![vec![1.0, 1.0]; 2]);
    assert_eq!(compensating_variation(&[0.0, 0.5, 0.0], &o, &illustrative_design(), 1, 0).unwrap(), None);
    assert!(compensating_variation_set(&[0.0, -1.0, 0.0], &o, &illustrative_design(), 1, &[0, 1]).is_err());
}

#[test]
fn cdf_is_nondecreasing() {
    let pts = cv_cdf(&[0.3, f64::NAN, -1.0, 0.3, 2.0]);
    assert_eq!(pts.len(), 4);
    assert!(pts.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 < w[1].1));
    assert_eq!(pts.last().unwrap().1, 1.0);
}

fn knn_fixture() -> (Dataset, crate::estimator::EstimationResult) {
    let syn = taste_markets(&TasteMarketsConfig { n_agents: 60, n_segments: 3, ..Default::default() }).unwrap();
    let r = estimate_glam(&syn.dataset, &EstimatorConfig { n_clusters: 2, ..Default::default() }).unwrap();
    (syn.dataset, r)
}

#[test]
fn knn_with_one_neighbour_copies_exact_match() {
    let (ds, r) = knn_fixture();
    let mut probe = ds.observations()[7].clone();
    probe.agent_id = "new".into();
    let out = knn_transfer(&r, &ds, &[probe], 1).unwrap();
    assert_eq!(out[0], r.theta_or_prior(&r.agent_params[7]));
}

#[test]
fn knn_matches_exhaustive_oracle() {
    let (ds, r) = knn_fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let probes: Vec<MarketObservation> = (0..20)
        .map(|i| {
            let mut o = ds.observations()[i].clone();
            o.agent_id = format!("new{i}");
            o.origin_xy = [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)];
            o.destination_xy = [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)];
            o
        })
        .collect();
    let out = knn_transfer(&r, &ds, &probes, 3).unwrap();
    for (p, got) in probes.iter().zip(&out) {
        // repeatedly take the closest remaining candidate
        let mut left: Vec<usize> = (0..ds.len()).filter(|&t| ds.observations()[t].segment == p.segment).collect();
        let mut mean = vec![0.0; 2];
        for _ in 0..3 {
            let d = |t: usize| {
                let a = ds.observations()[t].od_features();
                let b = p.od_features();
                (0..4).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>()
            };
            let pos = (0..left.len()).min_by(|&x, &y| d(left[x]).total_cmp(&d(left[y]))).unwrap();
            let t = left.remove(pos);
            for (m, v) in mean.iter_mut().zip(r.theta_or_prior(&r.agent_params[t])) {
                *m += v / 3.0;
            }
        }
        for k in 0..2 {
            assert!((got[k] - mean[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn knn_segment_coverage() {
    let (ds, mut r) = knn_fixture();
    let probe = ds.observations()[0].clone();
    let mut unseen = probe.clone();
    unseen.segment = "zz".into();
    assert!(matches!(knn_transfer(&r, &ds, &[unseen], 1), Err(Error::UnseenSegment(_))));
    // keep only two trained agents of segment s0
    let s0: Vec<String> = ds.observations().iter().filter(|o| o.segment == "s0").map(|o| o.agent_id.clone()).collect();
    r.agent_params.retain(|a| !s0[2..].contains(&a.agent_id));
    assert!(matches!(knn_transfer(&r, &ds, &[probe.clone()], 3), Err(Error::Precondition(_))));
    assert!(knn_transfer(&r, &ds, &[probe], 2).is_ok());
}

#[test]
fn knn_ignores_training_order() {
    let (ds, r) = knn_fixture();
    let mut reversed = r.clone();
    reversed.agent_params.reverse();
    let mut obs = ds.observations().to_vec();
    obs.reverse();
    let ds_rev = ds.with_observations(obs).unwrap();
    let probes: Vec<MarketObservation> = ds.observations()[..10].to_vec();
    assert_eq!(knn_transfer(&r, &ds, &probes, 4).unwrap(), knn_transfer(&reversed, &ds_rev, &probes, 4).unwrap());
}

#[test]
fn glam_beats_mnl_on_heterogeneous_data() {
    use crate::benchmarks::{estimate_benchmark, ModelKind};
    use crate::regression::InstrumentMatrix;
    let syn = taste_markets(&TasteMarketsConfig { n_agents: 100, ..Default::default() }).unwrap();
    let ds = &syn.dataset;
    let r = estimate_glam(ds, &EstimatorConfig { n_clusters: 2, ..Default::default() }).unwrap();
    let glam = evaluate(&AgentTastes::from_estimation(&r, ds).unwrap(), ds.observations(), 4).unwrap();
    let z = InstrumentMatrix::from_columns(ds, &[]).unwrap();
    let mnl = BenchmarkPredictor::new(estimate_benchmark(ds, ModelKind::Mnl, &[], &z).unwrap()).unwrap();
    let base = evaluate(&mnl, ds.observations(), mnl.fit().coefficients.len()).unwrap();
    assert!(glam.overall_accuracy > base.overall_accuracy, "{} vs {}", glam.overall_accuracy, base.overall_accuracy);
}
