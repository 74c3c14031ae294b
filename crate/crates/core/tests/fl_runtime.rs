use flchain_core::chain::BlockchainParams;
use flchain_core::fl::{self, FLConfig, FlEnvironment, SyntheticTask};
use flchain_core::latency::AggregationCost;
use flchain_core::network::RadioParams;

fn setup(cfg: &FLConfig, seed: u64) -> (SyntheticTask, FlEnvironment) {
    let task = fl::generate_synthetic_task(&cfg.task_spec(), cfg.clients, seed).unwrap();
    let env = FlEnvironment::new(cfg, BlockchainParams::default(), &RadioParams::default(), AggregationCost::default(), seed)
        .unwrap();
    (task, env)
}

#[test]
fn infinite_tolerance_stops_after_one_round() {
    let cfg = FLConfig { tolerance: f64::INFINITY, ..Default::default() };
    let (task, env) = setup(&cfg, 1);
    assert_eq!(fl::run_s_flchain(&cfg, &task, &env, 1).unwrap().records.len(), 1);
    assert_eq!(fl::run_a_flchain(&cfg, &task, &env, 1).unwrap().records.len(), 1);
}

#[test]
fn single_client_is_close_to_centralized() {
    let cfg = FLConfig { clients: 1, block_fraction: 1.0, max_rounds: 100, samples_per_client: 500, ..Default::default() };
    let (task, env) = setup(&cfg, 2);
    let fed = fl::run_s_flchain(&cfg, &task, &env, 2).unwrap();
    let (_, central) = fl::centralized_sgd(&cfg, &task, 2).unwrap();
    let acc = fed.records.last().unwrap().eval_accuracy;
    assert!((acc - central).abs() < 0.03, "{acc} vs {central}");
}

#[test]
fn block_holds_tenth_of_fifty_clients() {
    let cfg = FLConfig { clients: 50, block_fraction: 0.1, max_rounds: 10, ..Default::default() };
    assert_eq!(fl::block_size(&cfg), 5);
    let (task, env) = setup(&cfg, 3);
    let run = fl::run_a_flchain(&cfg, &task, &env, 3).unwrap();
    assert!(run.records.iter().all(|r| r.participants.len() == 5));
}

#[test]
fn full_blocks_help_non_iid_accuracy() {
    let base = FLConfig { clients: 20, max_rounds: 60, iid: false, ..Default::default() };
    let full = FLConfig { block_fraction: 1.0, ..base };
    let (task, env) = setup(&base, 4);
    let partial = fl::run_a_flchain(&base, &task, &env, 4).unwrap();
    let whole = fl::run_s_flchain(&full, &task, &env, 4).unwrap();
    assert!(whole.records.last().unwrap().eval_accuracy >= partial.records.last().unwrap().eval_accuracy);
}

#[test]
fn async_rounds_are_shorter() {
    let cfg = FLConfig { clients: 50, block_fraction: 0.1, max_rounds: 30, ..Default::default() };
    let (task, env) = setup(&cfg, 5);
    let per_round = |r: &fl::Trajectory| r.records.last().unwrap().wall_clock / r.records.len() as f64;
    let sync = fl::run_s_flchain(&cfg, &task, &env, 5).unwrap();
    let asy = fl::run_a_flchain(&cfg, &task, &env, 5).unwrap();
    assert!(per_round(&asy) < per_round(&sync), "{} vs {}", per_round(&asy), per_round(&sync));
}

#[test]
fn wall_clock_is_monotone_and_runs_repeat() {
    let cfg = FLConfig { clients: 20, block_fraction: 0.25, max_rounds: 25, ..Default::default() };
    let (task, env) = setup(&cfg, 6);
    for run in [fl::run_s_flchain, fl::run_a_flchain] {
        let a = run(&cfg, &task, &env, 6).unwrap();
        assert!(a.records.windows(2).all(|w| w[1].wall_clock > w[0].wall_clock));
        assert!(a.records.iter().enumerate().all(|(i, r)| r.round == i + 1));
        assert_eq!(a, run(&cfg, &task, &env, 6).unwrap());
    }
}

#[test]
fn bad_configs_are_rejected() {
    let cfg = FLConfig { block_fraction: 1.5, ..Default::default() };
    assert!(cfg.validate().is_err());
    let cfg = FLConfig { clients: 0, ..Default::default() };
    assert!(cfg.validate().is_err());
}
