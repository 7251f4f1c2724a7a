use dpbalance_core::schedulers::Scheduler;
use dpbalance_core::sim::{run, SimConfig, SimulationState};
use dpbalance_core::workload::fig2_fixture;
use dpbalance_core::{FairnessParams, WorkloadConfig, EPS_TOL};
use proptest::prelude::*;

fn config(scheduler: Scheduler, seed: u64, beta: f64) -> SimConfig {
    SimConfig {
        workload: Some(WorkloadConfig {
            seed,
            ..WorkloadConfig::default()
        }),
        params: FairnessParams::alpha_fair(beta).unwrap(),
        scheduler,
    }
}

#[test]
fn resumed_state_matches_uninterrupted_run() {
    let cfg = config(Scheduler::DpBalance, 11, 2.2);
    let full = run(&cfg, 6).unwrap();

    let mut state = SimulationState::new(cfg).unwrap();
    for _ in 0..3 {
        state.step_round().unwrap();
    }
    let mut resumed = SimulationState::from_json(&state.to_json().unwrap()).unwrap();
    for _ in 0..3 {
        resumed.step_round().unwrap();
    }
    assert_eq!(resumed.metrics, full);
    resumed.audit().unwrap();
}

#[test]
fn demand_file_run_charges_only_its_blocks() {
    let file = fig2_fixture();
    for scheduler in Scheduler::ALL {
        let params = FairnessParams::alpha_fair(2.2).unwrap();
        let mut state = SimulationState::from_demand_file(&file, params, scheduler).unwrap();
        let m = state.step_round().unwrap();
        assert!(m.pipelines_allocated >= 2, "{scheduler}");
        state.audit().unwrap();
        assert_eq!(state.ledger.blocks.len(), 2);
        let again = state.step_round().unwrap();
        assert!(again.cumulative_efficiency >= m.cumulative_efficiency);
        state.audit().unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn no_block_exceeds_its_budget(seed in 0u64..10_000, pick in 0usize..4, beta in prop::sample::select(vec![0.5, 2.2, 5.0])) {
        let state = dpbalance_core::sim::run_state(&config(Scheduler::ALL[pick], seed, beta), 5).unwrap();
        state.audit().unwrap();
        for b in state.ledger.blocks.values() {
            prop_assert!(b.consumed_eps <= b.budget_eps + EPS_TOL);
            prop_assert!(b.consumed_eps >= 0.0);
        }
        prop_assert!(state.metrics.prefix_sums_hold());
        let retired: Vec<usize> = state.metrics.rounds.iter().map(|r| r.blocks_retired).collect();
        prop_assert!(retired.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn same_seed_same_series(seed in 0u64..10_000, pick in 0usize..4) {
        let cfg = config(Scheduler::ALL[pick], seed, 2.2);
        prop_assert_eq!(run(&cfg, 4).unwrap(), run(&cfg, 4).unwrap());
    }
}
