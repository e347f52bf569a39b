//! 2D arena with moving square obstacles, limited-view sensing, signed
//! distance fields and the hinge collision cost.

use std::fmt::Debug;

use nalgebra::Vector2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PipcError, Result};

/// Distance reported by a field with no obstacles.
pub const FREE_SPACE_DISTANCE: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentParams {
    pub width: f64,
    pub height: f64,
    pub robot_radius: f64,
    pub sensor_half_width: f64,
    pub obstacle_half_extent: f64,
    pub max_obstacle_speed: f64,
    pub max_obstacle_accel: f64,
    pub cell_size: f64,
    /// Extra border around the sensor square covered by a visible-only field.
    pub sdf_margin: f64,
    /// Minimum initial clearance between an obstacle and the robot start.
    pub start_clearance: f64,
}

impl Default for EnvironmentParams {
    fn default() -> Self {
        Self {
            width: 30.0,
            height: 20.0,
            robot_radius: 0.5,
            sensor_half_width: 2.5,
            obstacle_half_extent: 0.5,
            max_obstacle_speed: 1.3,
            max_obstacle_accel: 2.5,
            cell_size: 0.05,
            sdf_margin: 4.0,
            start_clearance: 2.0,
        }
    }
}

impl EnvironmentParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("width", self.width),
            ("height", self.height),
            ("robot_radius", self.robot_radius),
            ("sensor_half_width", self.sensor_half_width),
            ("obstacle_half_extent", self.obstacle_half_extent),
            ("cell_size", self.cell_size),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PipcError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("max_obstacle_speed", self.max_obstacle_speed),
            ("max_obstacle_accel", self.max_obstacle_accel),
            ("sdf_margin", self.sdf_margin),
            ("start_clearance", self.start_clearance),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(PipcError::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if 2.0 * self.obstacle_half_extent >= self.width.min(self.height) {
            return Err(PipcError::Config("obstacles do not fit in the arena".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub half_extent: f64,
    pub velocity: [f64; 2],
}

impl Obstacle {
    pub fn at(center: [f64; 2], half_extent: f64) -> Self {
        Self { center, half_extent, velocity: [0.0, 0.0] }
    }

    /// Exact signed distance from `p` to the square and its gradient.
    pub fn signed_distance(&self, p: Vector2<f64>) -> (f64, Vector2<f64>) {
        box_signed_distance(p, Vector2::from(self.center), self.half_extent)
    }
}

/// Signed distance from `p` to an axis-aligned square (positive outside).
pub fn box_signed_distance(p: Vector2<f64>, center: Vector2<f64>, half: f64) -> (f64, Vector2<f64>) {
    let rel = p - center;
    let q = Vector2::new(rel.x.abs() - half, rel.y.abs() - half);
    let sign = Vector2::new(rel.x.signum(), rel.y.signum());
    if q.x > 0.0 || q.y > 0.0 {
        let outer = Vector2::new(q.x.max(0.0), q.y.max(0.0));
        let dist = outer.norm();
        let grad = outer.component_mul(&sign) / dist;
        (dist, grad)
    } else if q.x > q.y {
        (q.x, Vector2::new(sign.x, 0.0))
    } else {
        (q.y, Vector2::new(0.0, sign.y))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment2D {
    pub params: EnvironmentParams,
    pub obstacles: Vec<Obstacle>,
}

impl Environment2D {
    pub fn new(params: EnvironmentParams, obstacles: Vec<Obstacle>) -> Result<Self> {
        params.validate()?;
        let env = Self { params, obstacles };
        for o in &env.obstacles {
            if !env.contains_box(o) {
                return Err(PipcError::Config(format!(
                    "obstacle at {:?} lies outside the arena",
                    o.center
                )));
            }
        }
        Ok(env)
    }

    /// Samples `count` obstacles uniformly inside the arena, at rest, away from
    /// the robot start and not overlapping the robot disc at the goal.
    pub fn random<R: Rng + ?Sized>(
        params: EnvironmentParams,
        count: usize,
        start: [f64; 2],
        goal: [f64; 2],
        rng: &mut R,
    ) -> Result<Self> {
        params.validate()?;
        let h = params.obstacle_half_extent;
        let mut obstacles = Vec::with_capacity(count);
        const MAX_TRIES: usize = 10_000;
        for _ in 0..count {
            let mut placed = None;
            for _ in 0..MAX_TRIES {
                let c = [
                    rng.random_range(h..=params.width - h),
                    rng.random_range(h..=params.height - h),
                ];
                let o = Obstacle::at(c, h);
                let near_start = o.signed_distance(Vector2::from(start)).0 < params.start_clearance;
                let on_goal = o.signed_distance(Vector2::from(goal)).0 < params.robot_radius;
                if !near_start && !on_goal {
                    placed = Some(o);
                    break;
                }
            }
            obstacles.push(placed.ok_or_else(|| {
                PipcError::Config("could not place obstacles clear of start and goal".into())
            })?);
        }
        Ok(Self { params, obstacles })
    }

    fn contains_box(&self, o: &Obstacle) -> bool {
        let h = o.half_extent;
        let tol = 1e-9;
        o.center[0] >= h - tol
            && o.center[0] <= self.params.width - h + tol
            && o.center[1] >= h - tol
            && o.center[1] <= self.params.height - h + tol
    }

    /// Obstacles whose square intersects the sensor square around `p`.
    pub fn visible_obstacles(&self, p: [f64; 2]) -> Vec<Obstacle> {
        let s = self.params.sensor_half_width;
        self.obstacles
            .iter()
            .filter(|o| {
                (o.center[0] - p[0]).abs() <= s + o.half_extent
                    && (o.center[1] - p[1]).abs() <= s + o.half_extent
            })
            .copied()
            .collect()
    }

    /// Exact distance from `p` to the nearest obstacle surface.
    pub fn clearance(&self, p: [f64; 2]) -> f64 {
        let p = Vector2::from(p);
        self.obstacles
            .iter()
            .map(|o| o.signed_distance(p).0)
            .fold(FREE_SPACE_DISTANCE, f64::min)
    }
}

/// Advances every obstacle by `dt` with a fresh uniform acceleration per axis.
pub fn step_obstacles<R: Rng + ?Sized>(env: &mut Environment2D, dt: f64, rng: &mut R) {
    let a = env.params.max_obstacle_accel;
    step_obstacles_with(env, dt, |_| {
        if a > 0.0 {
            [rng.random_range(-a..=a), rng.random_range(-a..=a)]
        } else {
            [0.0, 0.0]
        }
    });
}

/// Obstacle update with accelerations supplied per obstacle index.
pub fn step_obstacles_with<F: FnMut(usize) -> [f64; 2]>(env: &mut Environment2D, dt: f64, mut accel: F) {
    let vmax = env.params.max_obstacle_speed;
    let bounds = [env.params.width, env.params.height];
    for (k, o) in env.obstacles.iter_mut().enumerate() {
        let a = accel(k);
        for ax in 0..2 {
            o.velocity[ax] = (o.velocity[ax] + a[ax] * dt).clamp(-vmax, vmax);
            o.center[ax] += o.velocity[ax] * dt;
            let lo = o.half_extent;
            let hi = bounds[ax] - o.half_extent;
            if o.center[ax] < lo {
                o.center[ax] = (2.0 * lo - o.center[ax]).min(hi);
                o.velocity[ax] = -o.velocity[ax];
            } else if o.center[ax] > hi {
                o.center[ax] = (2.0 * hi - o.center[ax]).max(lo);
                o.velocity[ax] = -o.velocity[ax];
            }
        }
    }
}

/// True iff the robot disc at `p` overlaps any true obstacle.
pub fn check_collision(env: &Environment2D, p: [f64; 2]) -> bool {
    env.clearance(p) < env.params.robot_radius
}

/// Signed distance to the nearest obstacle with its gradient.
pub trait DistanceField: Send + Sync + Debug {
    fn signed_distance(&self, p: Vector2<f64>) -> Result<(f64, Vector2<f64>)>;
}

/// Exact analytic field over a fixed set of squares.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxField {
    pub obstacles: Vec<Obstacle>,
}

impl DistanceField for BoxField {
    fn signed_distance(&self, p: Vector2<f64>) -> Result<(f64, Vector2<f64>)> {
        let mut best = (FREE_SPACE_DISTANCE, Vector2::zeros());
        for o in &self.obstacles {
            let (d, g) = o.signed_distance(p);
            if d < best.0 {
                best = (d, g);
            }
        }
        Ok(best)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Grid {
    origin: [f64; 2],
    nx: usize,
    ny: usize,
    values: Vec<f64>,
}

/// Signed distances sampled on a regular grid, queried by bilinear
/// interpolation. The gradient is the exact derivative of the interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedDistanceField {
    cell_size: f64,
    obstacles: Vec<Obstacle>,
    grid: Option<Grid>,
}

impl SignedDistanceField {
    /// Samples the exact distance to `obstacles` over the rectangle `[lo, hi]`.
    pub fn from_obstacles(obstacles: Vec<Obstacle>, lo: [f64; 2], hi: [f64; 2], cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0) {
            return Err(PipcError::InvalidArgument(format!("cell size must be > 0, got {cell_size}")));
        }
        if obstacles.is_empty() {
            return Ok(Self { cell_size, obstacles, grid: None });
        }
        if !(hi[0] > lo[0] && hi[1] > lo[1]) {
            return Err(PipcError::InvalidArgument("empty field extent".into()));
        }
        let nx = ((hi[0] - lo[0]) / cell_size).ceil() as usize + 1;
        let ny = ((hi[1] - lo[1]) / cell_size).ceil() as usize + 1;
        let exact = BoxField { obstacles: obstacles.clone() };
        let mut values = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let p = Vector2::new(lo[0] + i as f64 * cell_size, lo[1] + j as f64 * cell_size);
                values.push(exact.signed_distance(p)?.0);
            }
        }
        Ok(Self { cell_size, obstacles, grid: Some(Grid { origin: lo, nx, ny, values }) })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    /// `(lo, hi)` corners of the sampled region, or `None` for an empty field.
    pub fn extent(&self) -> Option<([f64; 2], [f64; 2])> {
        self.grid.as_ref().map(|g| {
            let hi = [
                g.origin[0] + (g.nx - 1) as f64 * self.cell_size,
                g.origin[1] + (g.ny - 1) as f64 * self.cell_size,
            ];
            (g.origin, hi)
        })
    }
}

impl DistanceField for SignedDistanceField {
    fn signed_distance(&self, p: Vector2<f64>) -> Result<(f64, Vector2<f64>)> {
        let Some(g) = &self.grid else {
            return Ok((FREE_SPACE_DISTANCE, Vector2::zeros()));
        };
        let h = self.cell_size;
        let fx = (p.x - g.origin[0]) / h;
        let fy = (p.y - g.origin[1]) / h;
        let max_x = (g.nx - 1) as f64;
        let max_y = (g.ny - 1) as f64;
        if !(fx >= 0.0 && fy >= 0.0 && fx <= max_x && fy <= max_y) {
            return Err(PipcError::OutsideField { x: p.x, y: p.y });
        }
        let i = (fx.floor() as usize).min(g.nx - 2);
        let j = (fy.floor() as usize).min(g.ny - 2);
        let tx = fx - i as f64;
        let ty = fy - j as f64;
        let at = |ii: usize, jj: usize| g.values[jj * g.nx + ii];
        let (v00, v10, v01, v11) = (at(i, j), at(i + 1, j), at(i, j + 1), at(i + 1, j + 1));
        let value = v00 * (1.0 - tx) * (1.0 - ty) + v10 * tx * (1.0 - ty) + v01 * (1.0 - tx) * ty + v11 * tx * ty;
        let dx = ((v10 - v00) * (1.0 - ty) + (v11 - v01) * ty) / h;
        let dy = ((v01 - v00) * (1.0 - tx) + (v11 - v10) * tx) / h;
        Ok((value, Vector2::new(dx, dy)))
    }
}

/// Field used for planning. With `visible_only`, only obstacles intersecting
/// the sensor square around `robot_position` are included and the grid covers
/// that square plus `sdf_margin`; otherwise the whole arena plus the margin.
pub fn build_sdf(env: &Environment2D, visible_only: bool, robot_position: [f64; 2]) -> Result<SignedDistanceField> {
    let pr = &env.params;
    let m = pr.sdf_margin;
    if visible_only {
        let obstacles = env.visible_obstacles(robot_position);
        let r = pr.sensor_half_width + m;
        SignedDistanceField::from_obstacles(
            obstacles,
            [robot_position[0] - r, robot_position[1] - r],
            [robot_position[0] + r, robot_position[1] + r],
            pr.cell_size,
        )
    } else {
        SignedDistanceField::from_obstacles(
            env.obstacles.clone(),
            [-m, -m],
            [pr.width + m, pr.height + m],
            pr.cell_size,
        )
    }
}

/// Hinge collision cost `max(0, eps − (sd − radius))` and its gradient. At
/// the kink the zero side is taken.
pub fn hinge_cost(field: &dyn DistanceField, position: Vector2<f64>, robot_radius: f64, eps: f64) -> Result<(f64, Vector2<f64>)> {
    let (sd, grad) = field.signed_distance(position)?;
    let z = sd - robot_radius;
    if z < eps {
        Ok((eps - z, -grad))
    } else {
        Ok((0.0, Vector2::zeros()))
    }
}
