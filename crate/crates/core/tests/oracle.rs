mod common;

use common::*;
use ispg::internal::make_window_spec;
use ispg::model::{build_mabc, build_matiger, EnvParams, ModelParts, LISTEN};
use ispg::oracle::{
    build_chain, compute_occupancy, exact_objective, joint_info_advantage, marginal_advantage,
    solve_values, expected_joint_advantage, Oracle, RewardSelector,
};
use ispg::{Error, TabularPomg};
use std::collections::HashMap;

fn bandit(rewards: &[f64], beta: f64) -> TabularPomg {
    let na = rewards.len();
    TabularPomg::from_parts(ModelParts {
        states: vec!["s".into()],
        observations: vec![vec!["o".into()]],
        actions: vec![(0..na).map(|a| format!("a{a}")).collect()],
        transition: vec![vec![vec![(0, 1.0)]; na]],
        observation_kernel: vec![vec![vec![vec![(0, 1.0)]; na]]],
        initial_observation: vec![vec![vec![(0, 1.0)]]],
        reward: vec![vec![rewards.to_vec()]],
        potential: vec![rewards.to_vec()],
        discount: beta,
        initial_state_dist: vec![1.0],
    })
    .unwrap()
}

#[test]
fn mabc_memoryless_chain_has_sixteen_states() {
    let m = build_mabc(&EnvParams::mabc()).unwrap();
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let chain = build_chain(&m, &spec, &random_policy(&spec, &m, 1), CAP).unwrap();
    // |X| · |Y₁| · |Y₂| = 4 · 2 · 2
    assert_eq!(chain.n_states(), 16);
}

#[test]
fn single_state_chain_is_a_self_loop() {
    let m = bandit(&[1.0], 0.5);
    let spec = make_window_spec(&m, 1, CAP).unwrap();
    let policy = random_policy(&spec, &m, 0);
    let chain = build_chain(&m, &spec, &policy, CAP).unwrap();
    // window of one fills after the first step, then stays put
    let last = chain.n_states() - 1;
    assert_eq!(chain.row(last), &[(last as u32, 1.0)]);

    let spec0 = make_window_spec(&m, 0, CAP).unwrap();
    let chain = build_chain(&m, &spec0, &random_policy(&spec0, &m, 0), CAP).unwrap();
    assert_eq!(chain.n_states(), 1);
    assert_eq!(chain.row(0), &[(0, 1.0)]);
}

#[test]
fn matiger_rows_are_stochastic() {
    let m = build_matiger(&EnvParams::matiger()).unwrap();
    let spec = make_window_spec(&m, 1, CAP).unwrap();
    let chain = build_chain(&m, &spec, &random_policy(&spec, &m, 3), CAP).unwrap();
    assert!(chain.max_row_residual() < 1e-10);
}

#[test]
fn chain_cap_reports_size() {
    let m = build_mabc(&EnvParams::mabc()).unwrap();
    let spec = make_window_spec(&m, 2, CAP).unwrap();
    match build_chain(&m, &spec, &random_policy(&spec, &m, 3), 10) {
        Err(Error::Size { required, cap, .. }) => {
            assert_eq!(cap, 10);
            assert!(required > 10);
        }
        other => panic!("expected size error, got {other:?}"),
    }
}

#[test]
fn geometric_value_and_zero_reward() {
    let m = bandit(&[1.0], 0.5);
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let chain = build_chain(&m, &spec, &random_policy(&spec, &m, 0), CAP).unwrap();
    let v = solve_values(&chain, &m, RewardSelector::Agent(0)).unwrap();
    assert!((v.v[0] - 2.0).abs() < 1e-12);
    assert!((exact_objective(&chain, &v).unwrap() - 2.0).abs() < 1e-12);

    let m = bandit(&[0.0, 0.0], 0.9);
    let spec = make_window_spec(&m, 1, CAP).unwrap();
    let chain = build_chain(&m, &spec, &random_policy(&spec, &m, 0), CAP).unwrap();
    let v = solve_values(&chain, &m, RewardSelector::Potential).unwrap();
    assert!(v.v.iter().chain(&v.q).all(|&x| x == 0.0));
    assert_eq!(exact_objective(&chain, &v).unwrap(), 0.0);
}

/// Forward propagation of the joint distribution of `(x, w, l, y)` written
/// against the checked internal-state updates, summing `β^k E[φ]`.
fn forward_objective(m: &TabularPomg, spec: &ispg::InternalStateSpec, policy: &ispg::JointPolicy, horizon: usize) -> f64 {
    let n = m.n_agents();
    let mut dist: HashMap<(usize, usize, Vec<usize>, Vec<usize>), f64> = HashMap::new();
    for (x, &px) in m.initial_state_dist().iter().enumerate() {
        for &(y0, p0) in m.initial_observation(0, x) {
            for &(y1, p1) in m.initial_observation(1, x) {
                *dist
                    .entry((x, spec.initial_shared(), vec![0, 0], vec![y0, y1]))
                    .or_default() += px * p0 * p1;
            }
        }
    }
    let mut total = 0.0;
    let mut disc = 1.0;
    for _ in 0..horizon {
        let mut next: HashMap<(usize, usize, Vec<usize>, Vec<usize>), f64> = HashMap::new();
        for ((x, w, l, y), p) in &dist {
            for u in 0..m.n_joint_actions() {
                let ua = m.joint_action(u);
                let pu: f64 = (0..n)
                    .map(|i| policy.tables[i].probs(spec.info_index_at(i, *w, l[i], y[i]))[ua[i]])
                    .product();
                total += disc * p * pu * m.potential(*x, u);
                let w2 = spec.update_shared(*w, y, ua).unwrap();
                let l2: Vec<usize> = (0..n)
                    .map(|i| spec.update_local(i, l[i], y[i], ua[i], y[i]).unwrap())
                    .collect();
                for &(x2, px) in m.transition(*x, u) {
                    for &(y0, q0) in m.observation(0, x2, u) {
                        for &(y1, q1) in m.observation(1, x2, u) {
                            *next.entry((x2, w2, l2.clone(), vec![y0, y1])).or_default() += p * pu * px * q0 * q1;
                        }
                    }
                }
            }
        }
        dist = next;
        disc *= m.discount();
    }
    total
}

#[test]
fn mabc_value_matches_forward_enumeration() {
    let m = build_mabc(&EnvParams::mabc()).unwrap();
    let spec = make_window_spec(&m, 1, CAP).unwrap();
    let policy = random_policy(&spec, &m, 11);
    let chain = build_chain(&m, &spec, &policy, CAP).unwrap();
    let v = solve_values(&chain, &m, RewardSelector::Potential).unwrap();
    let exact = exact_objective(&chain, &v).unwrap();
    let h = 40;
    let truncated = forward_objective(&m, &spec, &policy, h);
    let beta = m.discount();
    let tail = beta.powi(h as i32) * m.phi_max() / (1.0 - beta);
    assert!(exact >= truncated - 1e-12);
    assert!(exact - truncated <= tail + 1e-12, "{exact} {truncated} {tail}");
}

#[test]
fn occupancy_of_absorbing_state() {
    let m = bandit(&[1.0, 0.0], 0.7);
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let chain = build_chain(&m, &spec, &random_policy(&spec, &m, 0), CAP).unwrap();
    let occ = compute_occupancy(&chain, m.discount()).unwrap();
    assert_eq!(occ.d.len(), 1);
    assert!((occ.d[0] - 1.0).abs() < 1e-12);
    assert!((occ.max_reciprocal() - 1.0).abs() < 1e-12);
}

#[test]
fn small_discount_occupancy_is_two_term_expansion() {
    let params = EnvParams {
        discount: 0.01,
        ..EnvParams::matiger()
    };
    let m = build_matiger(&params).unwrap();
    let spec = make_window_spec(&m, 1, CAP).unwrap();
    let chain = build_chain(&m, &spec, &random_policy(&spec, &m, 5), CAP).unwrap();
    let occ = compute_occupancy(&chain, 0.01).unwrap();
    let mut mu0 = vec![0.0; chain.n_states()];
    for &(s, p) in chain.structure.initial() {
        mu0[s] += p;
    }
    let mut mu1 = vec![0.0; chain.n_states()];
    for (s, &p) in mu0.iter().enumerate() {
        for &(t, q) in chain.row(s) {
            mu1[t as usize] += p * q;
        }
    }
    for s in 0..chain.n_states() {
        let approx = 0.99 * mu0[s] + 0.01 * mu1[s];
        assert!((occ.d[s] - approx).abs() < 1e-3);
    }
}

#[test]
fn occupancy_marginals_sum_to_one_on_matiger() {
    let m = build_matiger(&EnvParams::matiger()).unwrap();
    let spec = make_window_spec(&m, 1, CAP).unwrap();
    let chain = build_chain(&m, &spec, &random_policy(&spec, &m, 8), CAP).unwrap();
    let occ = compute_occupancy(&chain, m.discount()).unwrap();
    assert!((occ.total_mass() - 1.0).abs() < 1e-10);
    assert!(occ.d.iter().all(|&v| v >= 0.0));
    for marg in &occ.agent {
        assert!((marg.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn advantages_are_centered_and_bounded() {
    let m = build_mabc(&EnvParams::mabc()).unwrap();
    let spec = make_window_spec(&m, 1, CAP).unwrap();
    let bound = 2.0 * m.phi_max() / (1.0 - m.discount());
    for seed in 0..5 {
        let policy = random_policy(&spec, &m, seed);
        let eval = Oracle::new(&m, &spec, CAP).unwrap().evaluate(&policy).unwrap();
        for adv in &eval.advantages {
            let table = &policy.tables[adv.agent];
            for h in 0..table.n_points() {
                let mean: f64 = table.probs(h).iter().zip(adv.adv_row(h)).map(|(p, a)| p * a).sum();
                assert!(mean.abs() < 1e-9);
            }
            assert!(adv.max_abs() <= bound);
        }
        let vmax = m.phi_max() / (1.0 - m.discount());
        assert!(eval.potential_values.v.iter().all(|v| v.abs() <= vmax + 1e-9));
    }
}

#[test]
fn single_agent_advantage_is_the_mdp_advantage() {
    let m = fully_observable(1, 4, 3, 0.9, 21);
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let policy = random_policy(&spec, &m, 4);
    let eval = Oracle::new(&m, &spec, CAP).unwrap().evaluate(&policy).unwrap();
    let (v, q) = mdp_values(&m, &policy);
    for x in 0..4 {
        for a in 0..3 {
            let want = q[x][a] - v[x];
            assert!((eval.advantages[0].adv_row(x)[a] - want).abs() < 1e-9);
        }
    }
}

#[test]
fn two_agent_marginal_advantage_matches_mdp_oracle() {
    let m = fully_observable(2, 3, 2, 0.8, 5);
    let spec = make_window_spec(&m, 0, CAP).unwrap();
    let policy = random_policy(&spec, &m, 9);
    let eval = Oracle::new(&m, &spec, CAP).unwrap().evaluate(&policy).unwrap();
    let (v, q) = mdp_values(&m, &policy);
    let d = mdp_occupancy(&m, &policy);
    for x in 0..3 {
        assert!((eval.advantages[0].occupancy[x] - d[x]).abs() < 1e-9);
        for a in 0..2 {
            let other: f64 = (0..2)
                .map(|b| policy.tables[1].probs(x)[b] * q[x][m.joint_index(&[a, b])])
                .sum();
            assert!((eval.advantages[0].adv_row(x)[a] - (other - v[x])).abs() < 1e-9);
        }
    }
}

#[test]
fn stale_values_are_rejected() {
    let m = build_mabc(&EnvParams::mabc()).unwrap();
    let spec = make_window_spec(&m, 1, CAP).unwrap();
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let a = oracle.chain(&random_policy(&spec, &m, 1)).unwrap();
    let b = oracle.chain(&random_policy(&spec, &m, 2)).unwrap();
    let va = solve_values(&a, &m, RewardSelector::Potential).unwrap();
    let ob = compute_occupancy(&b, m.discount()).unwrap();
    assert!(matches!(marginal_advantage(&b, &m, &va, &ob, 0), Err(Error::Contract(_))));
    assert!(matches!(exact_objective(&b, &va), Err(Error::Contract(_))));
}

#[test]
fn common_reward_objectives_coincide() {
    let m = build_matiger(&EnvParams::matiger()).unwrap();
    let spec = make_window_spec(&m, 1, CAP).unwrap();
    let policy = random_policy(&spec, &m, 2);
    let oracle = Oracle::new(&m, &spec, CAP).unwrap();
    let obj = oracle.objective(&policy).unwrap();
    assert!(obj.per_agent.iter().all(|&j| j == obj.potential));
    // solved separately with the agent reward selector
    let chain = oracle.chain(&policy).unwrap();
    let v = solve_values(&chain, &m, RewardSelector::Agent(1)).unwrap();
    assert!((exact_objective(&chain, &v).unwrap() - obj.potential).abs() < 1e-9);
}

#[test]
fn performance_difference_identity_when_fully_observable() {
    for seed in 0..5 {
        let m = fully_observable(2, 3, 2, 0.9, 100 + seed);
        let spec = make_window_spec(&m, 0, CAP).unwrap();
        let oracle = Oracle::new(&m, &spec, CAP).unwrap();
        let p = random_policy(&spec, &m, 2 * seed);
        let p2 = random_policy(&spec, &m, 2 * seed + 1);
        let e = oracle.evaluate(&p).unwrap();
        let e2 = oracle.evaluate(&p2).unwrap();
        let adv = joint_info_advantage(&e.chain, &e.potential_values, &e.occupancy).unwrap();
        let rhs = expected_joint_advantage(&adv, &e2.chain, &e2.occupancy).unwrap() / (1.0 - m.discount());
        let lhs = e2.objective.potential - e.objective.potential;
        assert!((lhs - rhs).abs() < 1e-8, "{lhs} {rhs}");
    }
}

#[test]
fn matiger_listen_keeps_state() {
    let m = build_matiger(&EnvParams::matiger()).unwrap();
    let u = m.joint_index(&[LISTEN, LISTEN]);
    assert_eq!(m.transition(1, u), &[(1, 1.0)]);
}
