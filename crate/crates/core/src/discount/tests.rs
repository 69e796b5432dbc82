use std::collections::HashMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::analysis::AgentTastes;
use crate::data::{CompiledDesign, MarketObservation};
use crate::synthetic::{taste_markets, taste_spec, TasteMarketsConfig};

/// One agent per region with the given gain and loss, baseline share 0.2.
fn instance(gains: &[f64], losses: &[f64], max_regions: usize, budget: f64) -> DiscountInstance {
    let n = gains.len();
    DiscountInstance {
        regions: (0..n).map(|r| format!("r{r}")).collect(),
        agents_by_region: (0..n).map(|r| vec![r]).collect(),
        agent_ids: (0..n).map(|r| format!("a{r}")).collect(),
        demand: vec![100.0; n],
        fare: losses.iter().map(|l| 2.0 * l).collect(),
        share_with: gains.iter().map(|g| 0.2 + g / 100.0).collect(),
        share_without: vec![0.2; n],
        loss: losses.to_vec(),
        max_regions,
        budget,
        discount_rate: 0.5,
    }
}

fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> DiscountInstance {
    let n_agents = n + rng.random_range(0..2 * n + 1);
    let mut agents_by_region: Vec<Vec<usize>> = (0..n).map(|r| vec![r]).collect();
    for t in n..n_agents {
        agents_by_region[rng.random_range(0..n)].push(t);
    }
    let share_without: Vec<f64> = (0..n_agents).map(|_| rng.random_range(0.0..0.6)).collect();
    // a few agents lose riders so some regions have negative gain
    let share_with = share_without.iter().map(|s| (s + rng.random_range(-0.05..0.3)).clamp(0.0, 1.0)).collect();
    let fare: Vec<f64> = (0..n_agents).map(|_| rng.random_range(0.0..10.0)).collect();
    let total: f64 = fare.iter().sum::<f64>() * 0.5;
    DiscountInstance {
        regions: (0..n).map(|r| format!("r{r}")).collect(),
        agents_by_region,
        agent_ids: (0..n_agents).map(|t| format!("a{t}")).collect(),
        demand: (0..n_agents).map(|_| rng.random_range(1.0..200.0)).collect(),
        loss: fare.iter().map(|f| 0.5 * f).collect(),
        fare,
        share_with,
        share_without,
        max_regions: rng.random_range(0..=n),
        budget: rng.random_range(0.0..total),
        discount_rate: 0.5,
    }
}

/// Best objective over all `2^|I|` selections.
fn brute_force(inst: &DiscountInstance) -> f64 {
    let n = inst.regions.len();
    let mut best = inst.baseline_ridership();
    for mask in 0u32..(1 << n) {
        let sel: Vec<bool> = (0..n).map(|r| mask >> r & 1 == 1).collect();
        if sel.iter().filter(|s| **s).count() <= inst.max_regions && inst.within_budget(inst.revenue_loss(&sel)) {
            best = best.max(inst.ridership(&sel));
        }
    }
    best
}

fn assert_feasible(inst: &DiscountInstance, sol: &DiscountSolution) {
    let sel = sol.selection(inst);
    assert!(sol.selected_regions.len() <= inst.max_regions);
    assert!(inst.within_budget(inst.revenue_loss(&sel)));
    assert_eq!(sol.objective_ridership, inst.ridership(&sel));
}

#[test]
fn exact_matches_enumeration_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let n = rng.random_range(1..=15);
        let inst = random_instance(&mut rng, n);
        let sol = solve_bp_exact(&inst).unwrap();
        assert_feasible(&inst, &sol);
        let oracle = brute_force(&inst);
        assert!((sol.objective_ridership - oracle).abs() <= 1e-9 * oracle.max(1.0), "case {case}");
        assert!(sol.optimal && sol.gap == 0.0);
    }
}

#[test]
fn unconstrained_selects_every_positive_region() {
    let inst = instance(&[3.0, 1.0, 2.0], &[5.0, 5.0, 5.0], 3, f64::INFINITY);
    let sol = solve_bp_exact(&inst).unwrap();
    assert_eq!(sol.selected_regions, vec!["r0", "r1", "r2"]);
    assert!((sol.ridership_gain - 6.0).abs() < 1e-9);
    assert!((sol.revenue_change + 15.0).abs() < 1e-12);
}

#[test]
fn zero_budget_selects_nothing() {
    let inst = instance(&[3.0, 1.0, 2.0], &[5.0, 0.5, 5.0], 3, 0.0);
    let sol = solve_bp_exact(&inst).unwrap();
    assert!(sol.selected_regions.is_empty());
    assert_eq!(sol.ridership_gain, 0.0);
    assert_eq!(sol.objective_ridership, inst.baseline_ridership());
}

#[test]
fn zero_loss_regions_fit_a_zero_budget() {
    let inst = instance(&[3.0, 1.0], &[0.0, 5.0], 2, 0.0);
    assert_eq!(solve_bp_exact(&inst).unwrap().selected_regions, vec!["r0"]);
}

#[test]
fn cardinality_and_budget_bind() {
    // ratio order is r1, r2, r0 but the budget favours the pair {r0, r2}
    let inst = instance(&[10.0, 3.0, 6.0], &[6.0, 1.0, 4.0], 2, 10.0);
    let sol = solve_bp_exact(&inst).unwrap();
    assert_eq!(sol.selected_regions, vec!["r0", "r2"]);
    let inst = DiscountInstance { max_regions: 1, ..inst };
    assert_eq!(solve_bp_exact(&inst).unwrap().selected_regions, vec!["r0"]);
}

#[test]
fn negative_gain_regions_are_never_chosen() {
    let inst = instance(&[-1.0, 2.0], &[0.0, 0.0], 2, f64::INFINITY);
    assert_eq!(solve_bp_exact(&inst).unwrap().selected_regions, vec!["r1"]);
}

#[test]
fn too_many_regions_for_exact() {
    let inst = instance(&vec![1.0; 65], &vec![1.0; 65], 65, 10.0);
    assert!(matches!(solve_bp_exact(&inst), Err(Error::Precondition(_))));
    // dispatcher falls back to the heuristic
    let sol = solve_bp(&inst).unwrap();
    assert!(!sol.optimal);
    assert_eq!(sol.selected_regions.len(), 10);
}

#[test]
fn invalid_instances_are_rejected() {
    let base = instance(&[1.0, 2.0], &[1.0, 1.0], 2, 1.0);
    let mut dup = base.clone();
    dup.agents_by_region = vec![vec![0, 1], vec![1]];
    let mut orphan = base.clone();
    orphan.agents_by_region = vec![vec![0], vec![]];
    let mut share = base.clone();
    share.share_with[0] = 1.5;
    let budget = DiscountInstance { budget: -1.0, ..base.clone() };
    for inst in [dup, orphan, share, budget] {
        assert!(matches!(solve_bp_exact(&inst), Err(Error::Precondition(_))));
    }
}

#[test]
fn heuristic_matches_exact_with_uniform_costs() {
    let inst = instance(&[5.0, 1.0, 4.0, 2.0, 3.0], &[1.0; 5], 5, 3.0);
    let exact = solve_bp_exact(&inst).unwrap();
    let heur = solve_bp_heuristic(&inst).unwrap();
    assert_eq!(heur.selected_regions, exact.selected_regions);
    assert!(!heur.optimal && heur.gap.abs() < 1e-9);
}

#[test]
fn heuristic_trivial_cases() {
    let inst = instance(&[5.0, 1.0], &[1.0, 1.0], 0, 10.0);
    assert!(solve_bp_heuristic(&inst).unwrap().selected_regions.is_empty());
    let inst = instance(&[5.0], &[1.0], 1, 10.0);
    assert_eq!(solve_bp_heuristic(&inst).unwrap().selected_regions, vec!["r0"]);
}

#[test]
fn heuristic_never_beats_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let n = rng.random_range(1..=12);
        let inst = random_instance(&mut rng, n);
        let exact = solve_bp_exact(&inst).unwrap();
        let heur = solve_bp_heuristic(&inst).unwrap();
        assert_feasible(&inst, &heur);
        assert!(heur.objective_ridership <= exact.objective_ridership + 1e-9);
        // root bound dominates the exact optimum
        assert!(heur.ridership_gain + heur.gap >= exact.ridership_gain - 1e-9);
    }
}

#[test]
fn sixty_two_regions_solve_quickly() {
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let mut inst = random_instance(&mut rng, 62);
    let total: f64 = inst.loss.iter().sum();
    inst.budget = 0.3 * total;
    inst.max_regions = 20;
    let start = std::time::Instant::now();
    let sol = solve_bp_exact(&inst).unwrap();
    assert!(start.elapsed().as_secs() < 60);
    assert_feasible(&inst, &sol);
    assert!(sol.objective_ridership >= solve_bp_heuristic(&inst).unwrap().objective_ridership - 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn larger_budget_or_count_never_hurts(seed in 0u64..10_000, extra_b in 0.0f64..50.0, extra_o in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=10);
        let inst = random_instance(&mut rng, n);
        let base = solve_bp_exact(&inst).unwrap().objective_ridership;
        let wider = DiscountInstance {
            budget: inst.budget + extra_b,
            max_regions: inst.max_regions + extra_o,
            ..inst.clone()
        };
        prop_assert!(solve_bp_exact(&wider).unwrap().objective_ridership >= base - 1e-9);
    }

    #[test]
    fn objective_links_agent_and_region_indicators(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=10);
        let inst = random_instance(&mut rng, n);
        let sol = solve_bp_exact(&inst).unwrap();
        let chosen: Vec<bool> = sol.selection(&inst);
        let mut total = 0.0;
        for (r, agents) in inst.agents_by_region.iter().enumerate() {
            for &t in agents {
                let x = if chosen[r] { 1.0 } else { 0.0 };
                total += (inst.share_with[t] * x + inst.share_without[t] * (1.0 - x)) * inst.demand[t];
            }
        }
        prop_assert!((sol.objective_ridership - total).abs() <= 1e-9 * total.max(1.0));
        prop_assert!((sol.ridership_gain - (total - inst.baseline_ridership())).abs() <= 1e-9 * total.max(1.0));
    }
}

/// Two alternatives `alt0`/`alt1` with `alt1` as transit, over `[time, cost]`.
fn hand_model(thetas: Vec<Vec<f64>>, fares: &[f64]) -> (Dataset, AgentTastes) {
    let spec = taste_spec(2, false);
    let columns = vec!["time".to_string(), "cost".to_string()];
    let obs: Vec<MarketObservation> = fares
        .iter()
        .enumerate()
        .map(|(i, &f)| MarketObservation {
            agent_id: format!("a{i}"),
            segment: "s".into(),
            region_id: format!("r{}", i % 2),
            origin_xy: [0.0; 2],
            destination_xy: [0.0; 2],
            attributes: vec![vec![1.0, 1.0], vec![1.0, f]],
            shares: vec![0.5, 0.5],
            demand: 10.0 * (i + 1) as f64,
        })
        .collect();
    let ds = Dataset::new(spec.clone(), columns.clone(), obs, None).unwrap();
    let design = CompiledDesign::new(&spec, &columns).unwrap();
    let ids = ds.observations().iter().map(|o| o.agent_id.clone());
    let model = AgentTastes::new(design, ids.zip(thetas).collect::<HashMap<_, _>>());
    (ds, model)
}

fn cfg() -> DiscountConfig {
    DiscountConfig {
        transit_alternative: "alt1".into(),
        ..Default::default()
    }
}

#[test]
fn hand_agent_shares_match_softmax() {
    let (ds, model) = hand_model(vec![vec![0.0, -1.0]], &[3.0]);
    let inst = precompute_discount_shares(&model, &ds, &cfg()).unwrap();
    let sig = |du: f64| 1.0 / (1.0 + (-du).exp());
    // transit utility minus the other alternative's, both at cost 1 besides transit fare
    assert!((inst.share_without[0] - sig(-3.0 + 1.0)).abs() < 1e-14);
    assert!((inst.share_with[0] - sig(-1.5 + 1.0)).abs() < 1e-14);
    assert_eq!(inst.loss, vec![1.5]);
    assert_eq!(inst.fare, vec![3.0]);
}

#[test]
fn price_insensitive_and_monotone_agents() {
    let (ds, model) = hand_model(vec![vec![-0.2, 0.0], vec![-0.2, -0.7], vec![0.1, -2.0]], &[4.0, 2.0, 1.0]);
    let inst = precompute_discount_shares(&model, &ds, &cfg()).unwrap();
    assert_eq!(inst.share_with[0], inst.share_without[0]);
    for t in 1..3 {
        assert!(inst.share_with[t] > inst.share_without[t]);
    }
    assert_eq!(inst.regions, vec!["r0", "r1"]);
    assert_eq!(inst.agents_by_region, vec![vec![0, 2], vec![1]]);
}

#[test]
fn demand_weighted_loss_variant() {
    let (ds, model) = hand_model(vec![vec![0.0, -1.0], vec![0.0, -0.5]], &[3.0, 2.0]);
    let plain = precompute_discount_shares(&model, &ds, &cfg()).unwrap();
    let weighted = precompute_discount_shares(&model, &ds, &DiscountConfig { demand_weighted_loss: true, ..cfg() }).unwrap();
    for t in 0..2 {
        let expected = plain.loss[t] * plain.demand[t] * plain.share_with[t];
        assert!((weighted.loss[t] - expected).abs() < 1e-12);
    }
}

#[test]
fn missing_transit_or_fare_is_an_error() {
    let (ds, model) = hand_model(vec![vec![0.0, -1.0]], &[3.0]);
    let no_alt = DiscountConfig { transit_alternative: "bus".into(), ..cfg() };
    assert!(matches!(precompute_discount_shares(&model, &ds, &no_alt), Err(Error::Precondition(_))));
    let no_col = DiscountConfig { fare_column: "fare".into(), ..cfg() };
    assert!(precompute_discount_shares(&model, &ds, &no_col).is_err());
    let bad_rate = DiscountConfig { discount_rate: 1.5, ..cfg() };
    assert!(matches!(precompute_discount_shares(&model, &ds, &bad_rate), Err(Error::Precondition(_))));
}

#[test]
fn summary_and_json_round_trip() {
    let syn = taste_markets(&TasteMarketsConfig { n_agents: 40, n_alternatives: 3, ..Default::default() }).unwrap();
    let ids = syn.dataset.observations().iter().map(|o| o.agent_id.clone());
    let thetas = syn.labels.iter().map(|&l| TasteMarketsConfig::default().tastes[l].clone());
    let model = AgentTastes::new(syn.dataset.design().unwrap(), ids.zip(thetas).collect());
    let cfg = DiscountConfig { transit_alternative: "alt2".into(), max_regions: 4, budget: 40.0, ..Default::default() };
    let inst = precompute_discount_shares(&model, &syn.dataset, &cfg).unwrap();
    assert_eq!(inst.regions.len(), 10);
    let sol = solve_bp(&inst).unwrap();
    assert!(sol.optimal && !sol.selected_regions.is_empty());
    let s = summarize(&inst, &sol);
    assert!((s.ridership_change - sol.ridership_gain).abs() < 1e-9);
    assert!(s.total_revenue_after < s.total_revenue_before || s.ridership_change > 0.0);

    let mut buf = Vec::new();
    write_summary_csv(&mut buf, &s).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("total_ridership,total_revenue,change_of_ridership,change_of_revenue"));
    assert_eq!(text.lines().count(), 3);

    let back: DiscountInstance = serde_json::from_str(&serde_json::to_string(&inst).unwrap()).unwrap();
    assert_eq!(back, inst);
    let unbounded = DiscountInstance { budget: f64::INFINITY, ..inst };
    let json = serde_json::to_string(&unbounded).unwrap();
    assert!(json.contains("\"B\":\"inf\""));
    assert_eq!(serde_json::from_str::<DiscountInstance>(&json).unwrap(), unbounded);
}
