use cablegraph_core::integrate::OracleSimulator;
use cablegraph_core::mppi::*;
use cablegraph_core::refsim;
use cablegraph_core::scenario::settled_state;
use cablegraph_core::topology::*;
use std::time::Instant;

fn main() {
    let topo = build_three_bar(1.0, 0.3).unwrap();
    let plant = OracleSimulator { topology: &topo, params: Default::default(), chunk: 6 };
    let args: Vec<String> = std::env::args().collect();
    let k: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(64);
    let h: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(15);
    let secs: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(3.0);
    for seed in 0..3u64 {
        let start = settled_state(RobotKind::ThreeBar, &topo, &plant.params, seed as f64, [0.0, 0.0], 1.0).unwrap();
        let c0 = com_xy(&refsim::endcap_positions(&start, &topo));
        let goal = [c0[0] + 1.0, c0[1]];
        let bounds = Bounds { min: [c0[0]-0.5, c0[1]-1.0], max: [c0[0]+1.5, c0[1]+1.0] };
        let map = build_costmap(&[], goal, bounds, 0.05).unwrap();
        let cfg = MppiConfig { num_samples: k, horizon: h, seed, ..Default::default() };
        let t = Instant::now();
        let out = control_loop(&plant, &plant, &start, &map, &cfg, &LoopConfig { max_time: secs, dataset_id: 0, iteration: None }).unwrap();
        let path = out.com_path();
        let prog: Vec<String> = path.iter().step_by(50).map(|(_, p)| format!("{:.2}", p[0]-c0[0])).collect();
        println!("seed {seed}: {:.1}s wall, progress {:?}", t.elapsed().as_secs_f64(), prog);
    }
}
