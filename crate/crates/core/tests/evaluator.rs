mod common;

use common::*;
use ispg::evaluator::*;
use ispg::internal::make_window_spec;
use ispg::model::{build_mabc, build_matiger, EnvParams};
use ispg::oracle::{compute_occupancy, AgentAdvantage, Oracle};
use ispg::policy::{init_policy, npg_step, InitMode, PolicyTable};
use ispg::trainer::{theorem_step_size, TrainRecord};
use ispg::{Error, TabularPomg};

fn exhaustive() -> BrConfig {
    BrConfig {
        method: BrMethod::Exhaustive,
        exhaustive_budget: 1 << 16,
        ..BrConfig::default()
    }
}

fn npg() -> BrConfig {
    BrConfig {
        method: BrMethod::NpgBr,
        npg_iterations: 500,
        ..BrConfig::default()
    }
}

fn two_point_bandit() -> TabularPomg {
    bandit(vec![vec![0.2, 1.0], vec![0.7, -0.3]], vec![0.5, 0.5], 0.8)
}

#[test]
fn exhaustive_best_response_picks_the_best_arm_per_point() {
    let m = two_point_bandit();
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let p = init_policy(&spec, &m, &InitMode::Uniform).unwrap();
    assert_eq!(exhaustive_count(&oracle, 0), 4);
    let br = best_response_fsc(&oracle, &p, 0, &exhaustive()).unwrap();
    assert_eq!(br.method, BrMethod::Exhaustive);
    assert_eq!(br.evaluations, 4);
    assert_eq!(br.table.greedy_action(0), 1);
    assert_eq!(br.table.greedy_action(1), 0);
    assert!(br.table.probs(0)[1] > 1.0 - 1e-12);
    // absorbing states: J = Σ_x μ₀(x) r(x, a*) / (1−β)
    let want = 0.5 * (1.0 + 0.7) / 0.2;
    assert!((br.value - want).abs() < 1e-10);
}

#[test]
fn best_response_of_a_best_response_is_a_fixpoint() {
    let m = build_matiger(&EnvParams::matiger()).unwrap();
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let p = random_policy(&spec, &m, 3);
    let br = best_response_fsc(&oracle, &p, 1, &exhaustive()).unwrap();
    let q = p.with_agent(br.table);
    let again = best_response_fsc(&oracle, &q, 1, &exhaustive()).unwrap();
    let j = oracle.objective(&q).unwrap().per_agent[1];
    assert!((again.value - j).abs() < 1e-8);
}

#[test]
fn npg_best_response_is_close_to_exhaustive() {
    let m = build_matiger(&EnvParams::matiger()).unwrap();
    for t_w in 0..2 {
        let spec = make_window_spec(&m, t_w, CAP).unwrap();
        let oracle = Oracle::new(&m, &spec, CAP).unwrap();
        if exhaustive_count(&oracle, 0) > 1 << 16 {
            continue;
        }
        for seed in 0..3 {
            let p = random_policy(&spec, &m, seed);
            for i in 0..2 {
                let ex = best_response_fsc(&oracle, &p, i, &exhaustive()).unwrap().value;
                let br = best_response_fsc(&oracle, &p, i, &npg()).unwrap();
                assert_eq!(br.method, BrMethod::NpgBr);
                assert!(br.value >= ex - 1e-3, "t_w={t_w} seed={seed} i={i}: {} < {ex}", br.value);
            }
        }
    }
}

#[test]
fn exhaustive_over_budget_is_a_size_error() {
    let m = build_mabc(&EnvParams::mabc()).unwrap();
    let spec = make_window_spec(&m, 1, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let p = random_policy(&spec, &m, 0);
    let cfg = BrConfig {
        method: BrMethod::Exhaustive,
        exhaustive_budget: 2,
        ..BrConfig::default()
    };
    assert!(matches!(best_response_fsc(&oracle, &p, 0, &cfg), Err(Error::Size { .. })));
}

#[test]
fn single_action_game_has_zero_gap() {
    let m = bandit(vec![vec![1.0], vec![-2.0]], vec![0.3, 0.7], 0.9);
    let spec = make_window_spec(&m, 1, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let p = init_policy(&spec, &m, &InitMode::Uniform).unwrap();
    let gap = ne_gap(&oracle, &p, &BrConfig::default()).unwrap();
    assert!(gap.ne_gap.abs() < 1e-12);
}

#[test]
fn uniform_bandit_gap_is_half_the_best_value() {
    let beta = 0.9;
    let m = bandit(vec![vec![1.0, 0.0]], vec![1.0], beta);
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let p = init_policy(&spec, &m, &InitMode::Uniform).unwrap();
    let gap = ne_gap(&oracle, &p, &BrConfig::default()).unwrap();
    assert!((gap.ne_gap - 0.5 / (1.0 - beta)).abs() < 1e-10);
    assert_eq!(gap.methods, vec![BrMethod::Exhaustive]);
}

#[test]
fn gaps_are_never_negative() {
    let m = build_matiger(&EnvParams::matiger()).unwrap();
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    for seed in 0..4 {
        let p = random_policy(&spec, &m, seed);
        let gap = ne_gap(&oracle, &p, &BrConfig::default()).unwrap();
        assert!(gap.per_agent.iter().all(|&g| g >= 0.0));
        assert!(gap.clamped.iter().all(|&c| c > -1e-9));
    }
}

fn synthetic(q: Vec<f64>, n_actions: usize, occupancy: Vec<f64>) -> AgentAdvantage {
    AgentAdvantage {
        agent: 0,
        stamp: 0,
        adv: vec![0.0; q.len()],
        q,
        occupancy,
        unvisited: vec![],
        n_actions,
    }
}

#[test]
fn a_of_greedy_uniform_and_tied_rows() {
    let q = vec![1.0, 3.0, 2.0, 0.0, 5.0, 1.0];
    let m = bandit(vec![vec![0.0; 3]; 2], vec![0.5, 0.5], 0.9);
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let greedy = init_policy(
        &spec,
        &m,
        &InitMode::Given(vec![vec![vec![1e-300, 1.0, 1e-300], vec![1e-300, 1.0, 1e-300]]]),
    )
    .unwrap();
    let adv = synthetic(q.clone(), 3, vec![0.5, 0.5]);
    assert!((compute_a(&greedy, std::slice::from_ref(&adv)) - 1.0).abs() < 1e-12);

    let uniform = init_policy(&spec, &m, &InitMode::Uniform).unwrap();
    assert!((compute_a(&uniform, &[adv]) - 1.0 / 3.0).abs() < 1e-12);

    let tied = synthetic(vec![2.0; 6], 3, vec![0.5, 0.5]);
    assert!((compute_a(&uniform, &[tied]) - 1.0).abs() < 1e-12);

    // zero-occupancy rows are skipped
    let skipped = synthetic(q, 3, vec![0.0, 1.0]);
    assert!((compute_a(&greedy, &[skipped]) - 1.0).abs() < 1e-12);
}

#[test]
fn a_is_invariant_to_row_shifts() {
    let m = build_matiger(&EnvParams::matiger()).unwrap();
    let spec = make_window_spec(&m, 1, CAP).unwrap();
    let p = random_policy(&spec, &m, 8);
    let e = Oracle::new(&m, &spec, CAP).unwrap().evaluate(&p).unwrap();
    let a = compute_a(&p, &e.advantages);
    let mut shifted = e.advantages.clone();
    for adv in &mut shifted {
        for (k, q) in adv.q.iter_mut().enumerate() {
            *q += (k / adv.n_actions) as f64 * 7.25 - 3.0;
        }
    }
    assert_eq!(compute_a(&p, &shifted), a);
    assert!(a > 0.0 && a <= 1.0);
}

#[test]
fn m_hat_of_a_single_state_is_one() {
    let m = bandit(vec![vec![1.0, 0.0]], vec![1.0], 0.5);
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let p = init_policy(&spec, &m, &InitMode::Uniform).unwrap();
    let occ = compute_occupancy(&oracle.chain(&p).unwrap(), 0.5).unwrap();
    assert!((compute_m([&occ]) - 1.0).abs() < 1e-12);
}

#[test]
fn m_hat_is_a_running_max() {
    let m = build_mabc(&EnvParams::mabc()).unwrap();
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let mut hat = MHat::new();
    let mut last = 0.0;
    for seed in 0..6 {
        let chain = oracle.chain(&random_policy(&spec, &m, seed)).unwrap();
        let v = hat.update(&compute_occupancy(&chain, m.discount()).unwrap());
        assert!(v >= last);
        last = v;
    }
}

#[test]
fn m_hat_on_uniform_mabc_is_the_inverse_smallest_marginal() {
    let m = build_mabc(&EnvParams::mabc()).unwrap();
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let p = init_policy(&spec, &m, &InitMode::Uniform).unwrap();
    let occ = compute_occupancy(&oracle.chain(&p).unwrap(), m.discount()).unwrap();
    let smallest = occ.agent.iter().flatten().copied().filter(|&v| v > 0.0).fold(1.0, f64::min);
    assert!((compute_m([&occ]) - 1.0 / smallest).abs() < 1e-9 / smallest);
}

const NODES: usize = 2_000_000;

fn settings(horizon: usize) -> BeliefSettings {
    BeliefSettings {
        horizon,
        node_cap: NODES,
    }
}

#[test]
fn lemma1_same_policy_has_zero_lhs() {
    let m = build_mabc(&EnvParams::mabc()).unwrap();
    let spec = make_window_spec(&m, 1, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let p = random_policy(&spec, &m, 5);
    let r = lemma1_check(&oracle, &p, &p, settings(3)).unwrap();
    assert_eq!(r.lhs, 0.0);
    assert!(r.advantage_term.abs() < 1e-10);
    assert!(r.rhs >= -1e-10);
}

#[test]
fn lemma1_is_an_equality_when_fully_observable() {
    let m = fully_observable(2, 3, 2, 0.9, 11);
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    for seed in 0..5 {
        let (a, b) = (random_policy(&spec, &m, 2 * seed), random_policy(&spec, &m, 2 * seed + 1));
        let r = lemma1_check(&oracle, &a, &b, settings(3)).unwrap();
        assert!(r.belief_term.abs() < 1e-12);
        assert!(r.residual.abs() < 1e-8, "{}", r.residual);
    }
}

#[test]
fn lemma1_holds_on_mabc_with_memory() {
    let m = build_mabc(&EnvParams::mabc()).unwrap();
    let spec = make_window_spec(&m, 1, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    for seed in 0..5 {
        let (a, b) = (random_policy(&spec, &m, 40 + seed), random_policy(&spec, &m, 80 + seed));
        let r = lemma1_check(&oracle, &a, &b, settings(3)).unwrap();
        assert!(r.residual >= -1e-8, "seed {seed}: {r:?}");
    }
}

#[test]
fn lemma2_holds_on_fully_observable_and_mabc() {
    let fo = fully_observable(2, 3, 2, 0.9, 4);
    let spec = make_window_spec(&fo, 0, CAP).unwrap();
    let oracle = Oracle::new(&fo, &spec, CAP).unwrap();
    for seed in 0..3 {
        let r = lemma2_check(&oracle, &random_policy(&spec, &fo, seed), &exhaustive(), settings(2)).unwrap();
        assert!(r.d_b < 1e-12 && r.correction < 1e-10);
        assert!(r.residual >= -1e-8, "{}", r.residual);
    }
    let m = build_mabc(&EnvParams::mabc()).unwrap();
    let spec = make_window_spec(&m, 1, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let r = lemma2_check(&oracle, &random_policy(&spec, &m, 1), &BrConfig::default(), settings(3)).unwrap();
    assert!(r.residual >= -1e-8, "{}", r.residual);
}

#[test]
fn lemma2_at_an_exact_equilibrium() {
    // a single-agent bandit played greedily is an equilibrium with d_b = 0
    let m = two_point_bandit();
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let p = init_policy(&spec, &m, &InitMode::Uniform).unwrap();
    let best = best_response_fsc(&oracle, &p, 0, &exhaustive()).unwrap().table;
    let r = lemma2_check(&oracle, &p.with_agent(best), &exhaustive(), settings(2)).unwrap();
    assert!(r.lhs.abs() < 1e-8 && r.rhs.abs() < 1e-8);
}

#[test]
fn kappa_vanishes_at_the_theorem_step() {
    let (n, beta, phi) = (3, 0.8, 2.5);
    let eta = theorem_step_size(n, beta, phi).unwrap();
    // 1/η = 2nφ/(1−β)² exactly, so κ is zero up to rounding
    assert!(kappa(eta, n, phi, beta).abs() < 1e-9 / eta);
}

fn consecutive(
    oracle: &Oracle,
    p: &ispg::JointPolicy,
    eta: f64,
) -> (ispg::oracle::Evaluation, ispg::oracle::Evaluation, ispg::policy::Normalizers) {
    let prev = oracle.evaluate(p).unwrap();
    let (next, g) = npg_step(p, &prev.advantage_tables(), eta, oracle.model.discount()).unwrap();
    (prev, oracle.evaluate(&next).unwrap(), g)
}

#[test]
fn lemma3_zero_advantage_is_all_zero() {
    let m = bandit(vec![vec![1.0, 1.0], vec![0.5, 0.5]], vec![0.5, 0.5], 0.9);
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let p = random_policy(&spec, &m, 0);
    let (prev, next, g) = consecutive(&oracle, &p, 0.1);
    let r = lemma3_check(&oracle, &prev, &next, &g, 0.1).unwrap();
    assert!(r.lhs.abs() < 1e-12 && r.kl_per_agent.abs() < 1e-12 && r.log_g.abs() < 1e-12);
    assert!(r.residual.abs() < 1e-10);
}

#[test]
fn lemma3_holds_along_a_matiger_run() {
    let m = build_matiger(&EnvParams::matiger()).unwrap();
    let spec = make_window_spec(&m, 1, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let eta = ispg::trainer::default_step_size(&m).unwrap();
    let mut p = random_policy(&spec, &m, 2);
    for _ in 0..5 {
        let (prev, next, g) = consecutive(&oracle, &p, eta);
        let r = lemma3_check(&oracle, &prev, &next, &g, eta).unwrap();
        assert!(r.kappa.abs() < 1e-6 / eta);
        assert!(r.residual >= -1e-8, "{r:?}");
        p = next.policy;
    }
}

#[test]
fn lemma3_rejects_non_consecutive_iterates() {
    let m = build_matiger(&EnvParams::matiger()).unwrap();
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let p = random_policy(&spec, &m, 2);
    let (prev, next, g) = consecutive(&oracle, &p, 1e-3);
    let same = oracle.evaluate(&p).unwrap();
    assert!(matches!(lemma3_check(&oracle, &prev, &same, &g, 1e-3), Err(Error::Contract(_))));
    // right iteration counter, wrong step size
    assert!(matches!(lemma3_check(&oracle, &prev, &next, &g, 2e-3), Err(Error::Contract(_))));
}

#[test]
fn lemma4_zero_advantage_gives_unit_normalizers() {
    let m = bandit(vec![vec![1.0, 1.0]], vec![1.0], 0.9);
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let p = init_policy(&spec, &m, &InitMode::Uniform).unwrap();
    let (prev, next, g) = consecutive(&oracle, &p, 0.005);
    assert!(g.iter().flatten().all(|&v| (v - 1.0).abs() < 1e-15));
    let r = lemma4_check(&Lemma4Input {
        advantages: &prev.advantages,
        normalizers: &g,
        next_occupancy: &next.occupancy,
        eta: 0.005,
        beta: 0.9,
        a: 1.0,
        m: 1.0,
        gap: 0.0,
        d_b: 0.0,
        phi_span: 1.0,
    })
    .unwrap();
    assert!(r.lhs.abs() < 1e-15 && r.rhs == 0.0);
}

#[test]
fn lemma4_pointwise_bound_on_a_single_row() {
    // π = (0.2, 0.8), Q = (1, 0): A = (0.8, −0.2), argmax mass a = 0.2
    let pi = [0.2f64, 0.8];
    let adv = [0.8f64, -0.2];
    let (eta, beta) = (0.009, 0.9);
    let c = eta / (1.0 - beta);
    let g_row: f64 = pi.iter().zip(&adv).map(|(p, a)| p * (c * a).exp()).sum();
    let a = argmax_mass(&pi, &[1.0, 0.0]);
    assert_eq!(a, 0.2);
    let bound = a / 3.0 * (c * 0.8f64).powi(2);
    assert!(g_row.ln() >= bound, "{} {bound}", g_row.ln());

    let m = bandit(vec![vec![1.0, 0.0]], vec![1.0], beta);
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let p = init_policy(&spec, &m, &InitMode::Given(vec![vec![pi.to_vec()]])).unwrap();
    let (prev, next, g) = consecutive(&oracle, &p, eta);
    let r = lemma4_check(&Lemma4Input {
        advantages: &prev.advantages,
        normalizers: &g,
        next_occupancy: &next.occupancy,
        eta,
        beta,
        a,
        m: 1.0,
        gap: ne_gap(&oracle, &p, &exhaustive()).unwrap().ne_gap,
        d_b: 0.0,
        phi_span: 1.0,
    })
    .unwrap();
    // an absorbing bandit has the same future after either arm, so A = r − r̄
    // and the visited row carries all the occupancy
    let want = g_row.ln();
    assert!((r.lhs - want).abs() < 1e-12);
    assert!(r.pointwise_residual >= 0.0);
    assert!(r.residual >= -1e-8);
}

#[test]
fn lemma4_rejects_large_steps_and_small_m() {
    let m = bandit(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.5, 0.5], 0.9);
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let p = init_policy(&spec, &m, &InitMode::Uniform).unwrap();
    let (prev, next, g) = consecutive(&oracle, &p, 0.005);
    let input = Lemma4Input {
        advantages: &prev.advantages,
        normalizers: &g,
        next_occupancy: &next.occupancy,
        eta: 0.005,
        beta: 0.9,
        a: 0.5,
        m: 2.0,
        gap: 0.0,
        d_b: 0.0,
        phi_span: 1.0,
    };
    assert!(lemma4_check(&input).is_ok());
    assert!(matches!(lemma4_check(&Lemma4Input { eta: 0.02, ..input }), Err(Error::Contract(_))));
    assert!(matches!(lemma4_check(&Lemma4Input { m: 1.5, ..input }), Err(Error::Contract(_))));
}

#[test]
fn lemma4_holds_along_a_mabc_run() {
    let m = build_mabc(&EnvParams::mabc()).unwrap();
    let spec = make_window_spec(&m, 1, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let beta = m.discount();
    let eta = ispg::trainer::default_step_size(&m).unwrap();
    let mut p = random_policy(&spec, &m, 9);
    let mut hat = MHat::new();
    let d_b = oracle.distance_db(&p, 3, NODES).unwrap().d_b;
    for _ in 0..3 {
        let (prev, next, g) = consecutive(&oracle, &p, eta);
        hat.update(&prev.occupancy);
        hat.update(&next.occupancy);
        let r = lemma4_check(&Lemma4Input {
            advantages: &prev.advantages,
            normalizers: &g,
            next_occupancy: &next.occupancy,
            eta,
            beta,
            a: compute_a(&p, &prev.advantages),
            m: hat.value(),
            gap: ne_gap(&oracle, &p, &BrConfig::default()).unwrap().ne_gap,
            d_b,
            phi_span: m.phi_span(),
        })
        .unwrap();
        assert!(r.residual >= -1e-8 && r.pointwise_residual >= -1e-8, "{r:?}");
        p = next.policy;
    }
}

fn constants(d_b: f64) -> BoundConstants {
    BoundConstants {
        n_agents: 2,
        beta: 0.9,
        phi_span: 1.0,
        eta: 1e-3,
        a: 0.4,
        m_hat: 12.0,
        d_b,
    }
}

#[test]
fn bound_without_belief_error_is_the_root_t_term() {
    let c = constants(0.0);
    assert_eq!(eps_fsc(&c), 0.0);
    for t in [1, 10, 400] {
        let want = (12.0 * 12.0 * 2.0 / (0.4 * 0.1f64.powi(3) * t as f64)).sqrt();
        assert!((explicit_rhs(&c, t) - want).abs() < 1e-9 * want);
    }
    let single = BoundConstants { n_agents: 1, ..c };
    let ratio = explicit_rhs(&single, 100) / explicit_rhs(&single, 400);
    assert!((ratio - 2.0).abs() < 1e-12);
}

#[test]
fn bound_is_monotone_in_t_and_d_b() {
    for d_b in [0.0, 0.01, 0.1, 0.5] {
        let c = constants(d_b);
        let mut last = f64::INFINITY;
        for t in 1..300 {
            let r = explicit_rhs(&c, t);
            assert!(r <= last);
            last = r;
        }
        // the residual term is ε_FSC²
        let limit = explicit_rhs(&c, usize::MAX);
        assert!((limit.powi(2) - eps_fsc(&c).powi(2)).abs() < 1e-9 * (1.0 + limit));
    }
    let mut last = 0.0;
    for k in 0..50 {
        let r = explicit_rhs(&constants(k as f64 * 0.02), 50);
        assert!(r >= last);
        last = r;
    }
}

fn record(iter: usize, gap: Option<f64>) -> TrainRecord {
    TrainRecord {
        iter,
        potential: 0.0,
        per_agent: vec![0.0; 2],
        ne_gap: gap,
        a: 0.5,
        d_b: None,
        min_occupancy: 0.1,
        max_abs_adv: vec![0.0; 2],
        wall_ms: None,
    }
}

#[test]
fn theorem_check_needs_every_gap() {
    let records = vec![record(0, Some(1.0)), record(1, None)];
    assert!(matches!(
        theorem_bound_check(&records, constants(0.0)),
        Err(Error::Contract(_))
    ));
    let records = vec![record(0, Some(1.0)), record(1, Some(0.5))];
    let c = BoundConstants::from_records(&records, 2, 0.9, 1.0, 1e-3);
    assert_eq!((c.a, c.m_hat, c.d_b), (0.5, 10.0, 0.0));
    let r = theorem_bound_check(&records, c).unwrap();
    assert_eq!(r.lhs, 0.75);
    assert!(r.holds && r.eps_fsc == 0.0);
}

#[test]
fn fisher_step_matches_the_closed_form_on_a_bandit() {
    let m = two_point_bandit();
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let p = random_policy(&spec, &m, 1);
    let r = fisher_consistency_check(&oracle, &p, 0, 0.05).unwrap();
    assert!(r.max_prob_deviation < 1e-8, "{}", r.max_prob_deviation);
    // one singular direction per row: the softmax shift
    assert_eq!(r.rank, 2);
}

#[test]
fn fisher_gradient_matches_finite_differences() {
    let m = build_matiger(&EnvParams::matiger()).unwrap();
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let p = random_policy(&spec, &m, 6);
    let r = fisher_consistency_check(&oracle, &p, 1, 1e-3).unwrap();
    assert!(r.max_prob_deviation < 1e-6);
    let h = 1e-6;
    for k in 0..r.gradient.len() {
        let bump = |delta: f64| {
            let mut theta = p.tables[1].theta().to_vec();
            theta[k] += delta;
            let t = PolicyTable::from_theta(1, p.tables[1].n_actions(), theta).unwrap();
            oracle.agent_objective(&p.with_agent(t), 1).unwrap()
        };
        let fd = (bump(h) - bump(-h)) / (2.0 * h);
        assert!((fd - r.gradient[k]).abs() < 1e-5 * (1.0 + fd.abs()), "{k}: {fd} vs {}", r.gradient[k]);
    }
}

#[test]
fn fisher_zero_advantage_changes_nothing() {
    let m = bandit(vec![vec![2.0, 2.0], vec![1.0, 1.0]], vec![0.5, 0.5], 0.9);
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let p = random_policy(&spec, &m, 2);
    let r = fisher_consistency_check(&oracle, &p, 0, 0.3).unwrap();
    assert!(r.gradient.iter().all(|g| g.abs() < 1e-12));
    assert!(r.max_prob_deviation < 1e-12);
}

#[test]
fn fisher_size_cap() {
    let m = build_mabc(&EnvParams::mabc()).unwrap();
    let spec = make_window_spec(&m, 2, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let p = random_policy(&spec, &m, 0);
    assert!(spec.n_info_points(0) * 2 > FISHER_MAX_ENTRIES);
    assert!(matches!(fisher_consistency_check(&oracle, &p, 0, 0.1), Err(Error::Size { .. })));
}
