use nalgebra::Vector2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pipc_core::environment::{
    build_sdf, check_collision, hinge_cost, step_obstacles, BoxField, DistanceField, Environment2D, EnvironmentParams,
    Obstacle, SignedDistanceField,
};

fn random_env(seed: u64, count: usize) -> Environment2D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Environment2D::random(EnvironmentParams::default(), count, [2.0, 10.0], [28.0, 10.0], &mut rng).unwrap()
}

#[test]
fn grid_field_tracks_exact_distance() {
    let obstacles = vec![Obstacle::at([5.0, 5.0], 0.5), Obstacle::at([7.2, 5.4], 0.5)];
    let grid = SignedDistanceField::from_obstacles(obstacles.clone(), [0.0, 0.0], [12.0, 10.0], 0.05).unwrap();
    let exact = BoxField { obstacles };
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        for j in 0..160 {
            let p = Vector2::new(0.5 + i as f64 * 0.0551, 0.5 + j as f64 * 0.0557);
            let (a, _) = grid.signed_distance(p).unwrap();
            let (b, _) = exact.signed_distance(p).unwrap();
            worst = worst.max((a - b).abs());
        }
    }
    // Bilinear error on a piecewise-smooth distance is bounded by the cell size.
    assert!(worst < 0.05, "max error {worst}");
}

#[test]
fn random_layout_respects_exclusions() {
    for seed in 0..20 {
        let env = random_env(seed, 50);
        assert_eq!(env.obstacles.len(), 50);
        let p = &env.params;
        for o in &env.obstacles {
            assert!(o.signed_distance(Vector2::new(2.0, 10.0)).0 >= p.start_clearance);
            assert!(o.center[0] >= o.half_extent && o.center[0] <= p.width - o.half_extent);
            assert!(o.center[1] >= o.half_extent && o.center[1] <= p.height - o.half_extent);
        }
        assert!(!check_collision(&env, [2.0, 10.0]));
    }
}

#[test]
fn step_obstacles_is_bit_reproducible() {
    let run = |seed: u64| {
        let mut env = random_env(3, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..2000 {
            step_obstacles(&mut env, 0.01, &mut rng);
        }
        env.obstacles
    };
    let a = run(11);
    let b = run(11);
    assert_eq!(a, b);
    assert_ne!(a, run(12));
}

#[test]
fn obstacles_stay_inside_and_below_speed_limit() {
    let mut env = random_env(4, 40);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = env.params.clone();
    for _ in 0..5000 {
        step_obstacles(&mut env, 0.01, &mut rng);
        for o in &env.obstacles {
            assert!(o.center[0] >= o.half_extent - 1e-12 && o.center[0] <= p.width - o.half_extent + 1e-12);
            assert!(o.center[1] >= o.half_extent - 1e-12 && o.center[1] <= p.height - o.half_extent + 1e-12);
            assert!(o.velocity.iter().all(|v| v.abs() <= p.max_obstacle_speed));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn excluding_obstacles_never_lowers_distance(
        seed in 0u64..1000,
        ix in 40i32..560,
        iy in 40i32..360,
        qx in -1.0f64..1.0,
        qy in -1.0f64..1.0,
    ) {
        let env = random_env(seed, 30);
        // Grid-aligned robot position: both fields share nodes, so the
        // bilinear interpolants compare node by node.
        let robot = [ix as f64 * 0.05, iy as f64 * 0.05];
        let full = build_sdf(&env, false, robot).unwrap();
        let visible = build_sdf(&env, true, robot).unwrap();
        let r = env.params.sensor_half_width + env.params.sdf_margin - 0.1;
        let p = Vector2::new(robot[0] + qx * r, robot[1] + qy * r);
        let (f, _) = full.signed_distance(p).unwrap();
        let (v, _) = visible.signed_distance(p).unwrap();
        prop_assert!(f <= v + 1e-9, "full {f} > visible {v}");
    }

    #[test]
    fn hinge_is_continuous_and_flat_when_free(
        seed in 0u64..1000,
        x in 0.5f64..29.5,
        y in 0.5f64..19.5,
        dx in -1e-4f64..1e-4,
        dy in -1e-4f64..1e-4,
    ) {
        let env = random_env(seed, 20);
        let field = build_sdf(&env, false, [0.0, 0.0]).unwrap();
        let p = Vector2::new(x, y);
        let (c0, g0) = hinge_cost(&field, p, 0.5, 1.0).unwrap();
        let (c1, _) = hinge_cost(&field, p + Vector2::new(dx, dy), 0.5, 1.0).unwrap();
        // The field is Lipschitz with constant near one.
        prop_assert!((c1 - c0).abs() <= 2.0 * (dx * dx + dy * dy).sqrt() + 1e-12);
        if c0 == 0.0 {
            prop_assert_eq!(g0, Vector2::zeros());
        }
        prop_assert!(c0 >= 0.0);
    }
}
