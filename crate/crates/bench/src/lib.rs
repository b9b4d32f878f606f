//! Fixtures shared by the benchmarks: a scene pool, a horizon spline and a
//! frame of correspondences in the standard room with one low-noise wall.

use eviplan_core::camera::{yaw_pose, CameraModel, CameraParams};
use eviplan_core::costs::WaypointSet;
use eviplan_core::localize::{regress_scene, Correspondence, RansacConfig, SceneSample};
use eviplan_core::planner::{PlanState, PlannerConfig};
use eviplan_core::sim::{standard_room, FieldConfig, CLOSED_LOOP_N_CTRL};
use eviplan_core::spline::BSplineTrajectory;
use nalgebra::{Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub cam: CameraModel,
    /// Scene map surveyed at eight headings from the hover point.
    pub pool: Vec<SceneSample>,
    pub planner: PlannerConfig,
    pub state: PlanState,
    pub wps: WaypointSet,
    /// A horizon spline flying 0.8 m along x.
    pub traj: BSplineTrajectory,
    pub times: Vec<f64>,
    /// One camera frame facing the low-noise wall.
    pub frame: Vec<Correspondence>,
    pub ransac: RansacConfig,
}

pub fn fixture(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = CameraModel::new(CameraParams::default()).expect("default camera is valid");
    let room = standard_room();
    let field = FieldConfig::default().build(&room).expect("default field is valid");
    let hover = Vector3::new(0.0, 0.0, 1.5);
    let pool = (0..8)
        .flat_map(|k| {
            let pose = yaw_pose(&hover, k as f64 * std::f64::consts::FRAC_PI_4);
            regress_scene(&cam, &pose, &field, 100, &mut rng)
        })
        .map(|l| l.sample)
        .collect();
    let frame = regress_scene(&cam, &yaw_pose(&hover, 0.0), &field, 300, &mut rng)
        .iter()
        .map(|l| Correspondence { world: l.sample.world_point, pixel: l.sample.pixel, entropy: l.sample.entropy })
        .collect();

    let planner = PlannerConfig { n_ctrl: CLOSED_LOOP_N_CTRL, ..Default::default() };
    let n = planner.n_ctrl;
    let cps: Vec<Vector4<f64>> =
        (0..n).map(|i| Vector4::new(0.8 * i as f64 / (n - 1) as f64, 0.0, 1.5, 0.3 * i as f64 / (n - 1) as f64)).collect();
    let traj = BSplineTrajectory::build_clamped(cps, 0.0, planner.knot_spacing()).expect("valid spline");
    let times = (1..=8).map(|k| planner.t_plan * k as f64 / 8.0).collect();
    let wps = WaypointSet::new(
        vec![hover, hover + Vector3::new(0.4, 0.0, 0.0), hover + Vector3::new(0.8, 0.0, 0.0)],
        vec![0.5 * planner.t_plan],
    )
    .expect("valid waypoints");
    Fixture {
        cam,
        pool,
        planner,
        state: PlanState::at_rest(0.0, hover, 0.0),
        wps,
        traj,
        times,
        frame,
        ransac: RansacConfig::default(),
    }
}
