use cablegraph_core::gnn::*;
use cablegraph_core::refsim::{self, SimParams};
use cablegraph_core::scenario::*;
use cablegraph_core::topology::*;
use cablegraph_core::train::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let topo = build_three_bar(1.0, 0.3).unwrap();
    let params = SimParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..9 {
        let (s, c) = scenario(ScenarioKind::cycle(i), RobotKind::ThreeBar, &topo, &params, 500, &mut rng).unwrap();
        let traj = refsim::rollout(&s, &c, &topo, &params).unwrap();
        let (samples, _) = build_targets(&traj, &topo, 6, 6);
        let zero = PredictionBlock { delta_v: vec![vec![[0.0; 3]; 6]; 6], delta_rest: vec![vec![0.0; 6]; 9] };
        let mut tot = 0.0; let mut maxv: f64 = 0.0;
        for smp in &samples { tot += loss(&[&zero], &[smp], 1.0, 1.0).unwrap();
            for n in &smp.target_dv { for d in n { maxv = maxv.max(d[0].abs().max(d[1].abs()).max(d[2].abs())); } } }
        // mean over first 100 vs rest
        let early: f64 = samples[..100].iter().map(|s| loss(&[&zero], &[s], 1.0, 1.0).unwrap()).sum::<f64>() / 100.0;
        println!("{:?}: zero-pred loss {:.5}, early {:.5}, max |dv| {:.3}", ScenarioKind::cycle(i), tot / samples.len() as f64, early, maxv);
    }
}
