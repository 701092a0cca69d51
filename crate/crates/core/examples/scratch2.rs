use cablegraph_core::refsim;
use cablegraph_core::scenario::*;
use cablegraph_core::topology::*;
use cablegraph_core::mppi::com_xy;

fn run(topo: &RobotTopology, params: &refsim::SimParams, u: &dyn Fn(usize) -> Vec<f64>, frames: usize) -> ([f64;2], f64) {
    let start = settled_state(RobotKind::ThreeBar, topo, params, 0.0, [0.0, 0.0], 1.0).unwrap();
    let c0 = com_xy(&refsim::endcap_positions(&start, topo));
    let ctl: Vec<_> = (0..frames).map(|i| refsim::ControlFrame { u: u(i), time: i as f64 * 0.01 }).collect();
    let traj = refsim::rollout(&start, &ctl, topo, params).unwrap();
    let c = com_xy(&traj.frames.last().unwrap().endcap_positions());
    let maxd = traj.frames.iter().map(|f| { let p = com_xy(&f.endcap_positions()); (p[0]-c0[0]).hypot(p[1]-c0[1]) }).fold(0.0, f64::max);
    ([c[0]-c0[0], c[1]-c0[1]], maxd)
}

fn main() {
    let topo = build_three_bar(1.0, 0.3).unwrap();
    let params = refsim::SimParams::default();
    for j in 0..9 {
        let (d, m) = run(&topo, &params, &|_| { let mut u = vec![0.0; 9]; u[j] = 1.0; u }, 800);
        println!("retract {j}: {:.3} {:.3} max {m:.3}", d[0], d[1]);
        let (d, m) = run(&topo, &params, &|_| { let mut u = vec![0.0; 9]; u[j] = -1.0; u }, 800);
        println!("extend {j}: {:.3} {:.3} max {m:.3}", d[0], d[1]);
    }
    for a in 0..9 { for b in (a+1)..9 {
        let (d, m) = run(&topo, &params, &|_| { let mut u = vec![0.0; 9]; u[a] = 1.0; u[b] = 1.0; u }, 800);
        if m > 0.1 { println!("pair {a},{b}: {:.3} {:.3} max {m:.3}", d[0], d[1]); }
    }}
}
