use cablegraph_core::eval::*;
use cablegraph_core::gnn::*;
use cablegraph_core::graphgen::GraphConfig;
use cablegraph_core::integrate::*;
use cablegraph_core::refsim::{self, SimParams};
use cablegraph_core::scenario::*;
use cablegraph_core::topology::*;
use cablegraph_core::train::*;
use cablegraph_core::net::AdamConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let latent: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(32);
    let passes: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3);
    let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(5);
    let lr: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let variant = match args.get(5).map(|s| s.as_str()).unwrap_or("lm") { "f" => Variant::FGnn, "fc" => Variant::FcGnn, "fcr" => Variant::FcrGnn, _ => Variant::FcrGnnLearnedMotor };
    let topo = build_three_bar(1.0, 0.3).unwrap();
    let params = SimParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let t0 = Instant::now();
    let trajs: Vec<_> = (0..9).map(|i| {
        let (s, c) = scenario(if i % 2 == 0 { ScenarioKind::Gait } else { ScenarioKind::Random }, RobotKind::ThreeBar, &topo, &params, 500, &mut rng).unwrap();
        refsim::rollout(&s, &c, &topo, &params).unwrap()
    }).collect();
    println!("gen {:.1}s", t0.elapsed().as_secs_f64());
    let (train, test) = trajs.split_at(6);
    let mc = ModelConfig { latent_width: latent, hidden_width: latent, message_passes: passes, ..Default::default() }.with_variant(variant);
    let mseed: u64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(1);
    let mut model = Model::new(mc, GraphConfig::default(), mseed).unwrap();
    let pool = CotrainPool { trajectories: train.to_vec(), num_datasets: 1 };
    let seqg: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(4);
    let tc = TrainConfig { epochs, sequence_graphs: seqg, optimizer: AdamConfig { learning_rate: lr, ..Default::default() }, ..Default::default() };
    let t0 = Instant::now();
    let rep = train_epochs(&pool, &mut model, &topo, &tc, 0, |e| println!("epoch {} train {:.4} val {:.4} t {:.0}s", e.epoch, e.train_loss, e.val_loss, t0.elapsed().as_secs_f64())).unwrap();
    println!("items {} steps {}", rep.num_train_items, rep.optimizer_steps);
    let sim = LearnedSimulator::new(&model, &topo);
    let t0 = Instant::now();
    let sh = short_horizon_eval(&sim, &topo, test, model.graph.h + 1, &EvalConfig::default(), false).unwrap();
    println!("SH pos {:?} rot {:?} div {} ({:.1}s)", sh.e_pos_mean, sh.e_rot_mean, sh.num_diverged, t0.elapsed().as_secs_f64());
    for r in &sh.rows { print!("{:.2}/{:.1} ", r.e_pos.unwrap_or(-1.0), r.e_rot.unwrap_or(-1.0)); }
    println!();
    let full = full_traj_eval(&sim, &topo, test, model.graph.h + 1, false).unwrap();
    println!("FULL pos {:?} rot {:?} div {}", full.e_pos_mean, full.e_rot_mean, full.num_diverged);
    let oracle = OracleSimulator { topology: &topo, params: params.clone(), chunk: 6 };
    let sh = short_horizon_eval(&oracle, &topo, test, 7, &EvalConfig::default(), false).unwrap();
    println!("oracle SH {:?} {:?}", sh.e_pos_mean, sh.e_rot_mean);
}
