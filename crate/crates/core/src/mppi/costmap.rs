use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned obstacle in the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl ObstacleBox {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    /// Euclidean distance from `p` to the box; zero inside.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        let d: Vec<f64> = (0..2)
            .map(|k| (self.min[k] - p[k]).max(p[k] - self.max[k]).max(0.0))
            .collect();
        d[0].hypot(d[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

/// Grid distance field to the goal over free cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMap {
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major by `x` then `y`: index `ix * ny + iy`.
    pub occupied: Vec<bool>,
    /// Path length in metres; `f64::INFINITY` on occupied or unreachable cells.
    pub distance: Vec<f64>,
    pub obstacles: Vec<ObstacleBox>,
    pub goal: [f64; 2],
}

/// Result of a distance lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lookup {
    pub distance: f64,
    /// The point lay outside the map and was clamped to the nearest cell.
    pub clamped: bool,
}

pub fn build_costmap(
    obstacles: &[ObstacleBox],
    goal: [f64; 2],
    bounds: Bounds,
    cell_size: f64,
) -> Result<CostMap> {
    if !(cell_size > 0.0) {
        return Err(Error::InvalidParameter("cell_size must be > 0".into()));
    }
    let extent = [bounds.max[0] - bounds.min[0], bounds.max[1] - bounds.min[1]];
    if !(extent[0] > 0.0 && extent[1] > 0.0) {
        return Err(Error::InvalidParameter("bounds must have positive extent".into()));
    }
    if !bounds.contains(goal) || obstacles.iter().any(|o| o.contains(goal)) {
        return Err(Error::InvalidGoal(goal));
    }
    let nx = ((extent[0] / cell_size) - 1e-9).ceil().max(1.0) as usize;
    let ny = ((extent[1] / cell_size) - 1e-9).ceil().max(1.0) as usize;
    let mut occupied = vec![false; nx * ny];
    for ix in 0..nx {
        for iy in 0..ny {
            let c = [
                bounds.min[0] + (ix as f64 + 0.5) * cell_size,
                bounds.min[1] + (iy as f64 + 0.5) * cell_size,
            ];
            occupied[ix * ny + iy] = obstacles.iter().any(|o| o.contains(c));
        }
    }
    let mut map = CostMap {
        origin: bounds.min,
        cell_size,
        nx,
        ny,
        occupied,
        distance: Vec::new(),
        obstacles: obstacles.to_vec(),
        goal,
    };
    let (gx, gy, _) = map.cell_of(goal);
    if map.occupied[gx * ny + gy] {
        return Err(Error::InvalidGoal(goal));
    }
    map.distance = wavefront(nx, ny, &map.occupied, (gx, gy), cell_size);
    Ok(map)
}

/// Breadth-first wavefront over 4-connected free cells.
pub fn wavefront(nx: usize, ny: usize, occupied: &[bool], goal: (usize, usize), cell_size: f64) -> Vec<f64> {
    let mut steps: Vec<Option<u64>> = vec![None; nx * ny];
    let mut queue = VecDeque::new();
    steps[goal.0 * ny + goal.1] = Some(0);
    queue.push_back(goal);
    while let Some((x, y)) = queue.pop_front() {
        let d = steps[x * ny + y].expect("queued cells are labelled");
        let neighbours = [
            (x.wrapping_sub(1), y),
            (x + 1, y),
            (x, y.wrapping_sub(1)),
            (x, y + 1),
        ];
        for (a, b) in neighbours {
            if a >= nx || b >= ny {
                continue;
            }
            let i = a * ny + b;
            if occupied[i] || steps[i].is_some() {
                continue;
            }
            steps[i] = Some(d + 1);
            queue.push_back((a, b));
        }
    }
    steps
        .into_iter()
        .map(|s| s.map_or(f64::INFINITY, |s| s as f64 * cell_size))
        .collect()
}

impl CostMap {
    /// Cell containing `p`, clamped into the grid.
    pub fn cell_of(&self, p: [f64; 2]) -> (usize, usize, bool) {
        let idx = |v: f64, o: f64, n: usize| {
            let f = ((v - o) / self.cell_size).floor();
            if f < 0.0 {
                (0, true)
            } else if f >= n as f64 {
                (n - 1, true)
            } else {
                (f as usize, false)
            }
        };
        let (ix, cx) = idx(p[0], self.origin[0], self.nx);
        let (iy, cy) = idx(p[1], self.origin[1], self.ny);
        (ix, iy, cx || cy)
    }

    pub fn cell_centre(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin[0] + (ix as f64 + 0.5) * self.cell_size,
            self.origin[1] + (iy as f64 + 0.5) * self.cell_size,
        ]
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.distance[ix * self.ny + iy]
    }

    /// Distance to goal, bilinear between cell centres; falls back to the
    /// containing cell next to occupied or unreachable cells.
    pub fn lookup(&self, p: [f64; 2]) -> Lookup {
        let (ix, iy, clamped) = self.cell_of(p);
        let nearest = self.at(ix, iy);
        if clamped || !nearest.is_finite() {
            return Lookup {
                distance: nearest,
                clamped,
            };
        }
        let frac = |v: f64, o: f64, n: usize| {
            let f = ((v - o) / self.cell_size - 0.5).clamp(0.0, (n - 1) as f64);
            let i = (f.floor() as usize).min(n.saturating_sub(2));
            (i, f - i as f64)
        };
        let (x0, fx) = frac(p[0], self.origin[0], self.nx);
        let (y0, fy) = frac(p[1], self.origin[1], self.ny);
        let x1 = (x0 + 1).min(self.nx - 1);
        let y1 = (y0 + 1).min(self.ny - 1);
        let corners = [self.at(x0, y0), self.at(x1, y0), self.at(x0, y1), self.at(x1, y1)];
        let distance = if corners.iter().all(|c| c.is_finite()) {
            (1.0 - fx) * (1.0 - fy) * corners[0]
                + fx * (1.0 - fy) * corners[1]
                + (1.0 - fx) * fy * corners[2]
                + fx * fy * corners[3]
        } else {
            nearest
        };
        Lookup { distance, clamped }
    }

    /// Distance from `p` to the closest obstacle; infinite when there are none.
    pub fn obstacle_distance(&self, p: [f64; 2]) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.distance(p))
            .fold(f64::INFINITY, f64::min)
    }
}
