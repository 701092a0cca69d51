use cablegraph_core::eval::{full_traj_eval, short_horizon_eval, EvalConfig};
use cablegraph_core::gnn::{Model, ModelConfig, Variant};
use cablegraph_core::graphgen::GraphConfig;
use cablegraph_core::integrate::{LearnedSimulator, OracleSimulator, Simulator};
use cablegraph_core::refsim::{self, SimParams};
use cablegraph_core::scenario::{self, ScenarioKind};
use cablegraph_core::topology::{build_three_bar, RobotKind, RobotTopology};
use cablegraph_core::train::{build_items, perturb_sample, train_epochs, CotrainPool, TrainConfig};
use cablegraph_core::trajectory::Trajectory;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn topo() -> RobotTopology {
    build_three_bar(1.0, 0.3).unwrap()
}

fn oracle(kind: ScenarioKind, steps: usize, seed: u64) -> Trajectory {
    let topo = topo();
    let params = SimParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s, c) = scenario::scenario(kind, RobotKind::ThreeBar, &topo, &params, steps, &mut rng).unwrap();
    refsim::rollout(&s, &c, &topo, &params).unwrap()
}

fn small_model(variant: Variant, seed: u64) -> Model {
    let config = ModelConfig {
        latent_width: 12,
        hidden_width: 12,
        message_passes: 2,
        ..ModelConfig::default()
    }
    .with_variant(variant);
    Model::new(config, GraphConfig::default(), seed).unwrap()
}

#[test]
fn oracle_simulator_replays_logged_rollout() {
    let topo = topo();
    let traj = oracle(ScenarioKind::Gait, 60, 1);
    let sim = OracleSimulator {
        topology: &topo,
        params: SimParams::default(),
        chunk: 6,
    };
    let t = 20;
    let mut state = sim.state_from_trajectory(&traj, t).unwrap();
    let controls = &traj.controls()[t..t + 12];
    let frames = sim.advance(&mut state, controls).unwrap();
    let logged = traj.positions();
    for (k, frame) in frames.iter().enumerate() {
        for (a, b) in frame.iter().zip(&logged[t + 1 + k]) {
            assert!((a - b).norm() < 1e-12, "step {k}: {a} vs {b}");
        }
    }
}

#[test]
fn rollouts_are_deterministic_and_finite() {
    let a = oracle(ScenarioKind::Random, 80, 4);
    let b = oracle(ScenarioKind::Random, 80, 4);
    assert_eq!(a, b);
    assert_eq!(a.len(), 81);
    assert!(a.positions().iter().flatten().all(|p| p.iter().all(|x| x.is_finite())));
    assert_ne!(a, oracle(ScenarioKind::Random, 80, 5));
}

#[test]
fn trajectory_file_round_trip_is_exact() {
    let traj = oracle(ScenarioKind::Gait, 30, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.json");
    traj.save(&path).unwrap();
    assert_eq!(Trajectory::load(&path).unwrap(), traj);
}

#[test]
fn noise_correction_preserves_next_velocity() {
    let topo = topo();
    let traj = oracle(ScenarioKind::Gait, 40, 3);
    let (items, _) = build_items(&[traj], &topo, 6, 6, 1);
    let clean = &items[0].samples[0];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let corrected = perturb_sample(clean, &mut rng, 0.05, true);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let raw = perturb_sample(clean, &mut rng, 0.05, false);
    assert_eq!(raw.inputs.velocities, corrected.inputs.velocities);
    assert_eq!(raw.target_dv, clean.target_dv);
    for i in 0..clean.inputs.velocities.len() {
        assert_ne!(corrected.inputs.velocities[i], clean.inputs.velocities[i]);
        for k in 0..3 {
            let before = clean.inputs.velocities[i][k] + clean.target_dv[i][0][k];
            let after = corrected.inputs.velocities[i][k] + corrected.target_dv[i][0][k];
            assert!((before - after).abs() < 1e-12);
        }
        assert_eq!(corrected.target_dv[i][1..], clean.target_dv[i][1..]);
    }
    assert_eq!(corrected.target_dl, clean.target_dl);
}

#[test]
fn small_training_run_evaluates_without_divergence() {
    let topo = topo();
    let train: Vec<Trajectory> = (0..2).map(|s| oracle(ScenarioKind::Gait, 120, 10 + s)).collect();
    let test = vec![oracle(ScenarioKind::Gait, 120, 20)];
    let mut model = small_model(Variant::FcrGnnLearnedMotor, 1);
    let pool = CotrainPool {
        trajectories: train,
        num_datasets: 1,
    };
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let report = train_epochs(&pool, &mut model, &topo, &cfg, 0, |_| {}).unwrap();
    assert_eq!(report.epochs.len(), 2);
    assert!(report.epochs.iter().all(|e| e.train_loss.is_finite()));

    let sim = LearnedSimulator::new(&model, &topo);
    let eval = EvalConfig {
        n_sh: 2,
        t_sh: 30,
        ..EvalConfig::default()
    };
    let short = short_horizon_eval(&sim, &topo, &test, model.graph.h + 1, &eval, false).unwrap();
    assert!(short.e_pos_mean.unwrap().is_finite());
    let full = full_traj_eval(&sim, &topo, &test, model.graph.h + 1, false).unwrap();
    assert_eq!(full.num_diverged, 0);
    assert!(sim.model_calls() > 0);
}

#[test]
fn oracle_as_model_has_zero_error() {
    let topo = topo();
    let test = vec![oracle(ScenarioKind::Random, 100, 30)];
    let sim = OracleSimulator {
        topology: &topo,
        params: SimParams::default(),
        chunk: 6,
    };
    let full = full_traj_eval(&sim, &topo, &test, 1, false).unwrap();
    assert!(full.e_pos_mean.unwrap() < 1e-9);
    assert!(full.e_rot_mean.unwrap() < 1e-6);
}
