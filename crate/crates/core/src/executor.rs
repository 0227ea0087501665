//! Map/odometry alignment and lookahead tracking.
//!
//! A global pose fix `x^M` (from cross-view localization) and the odometry
//! pose `x^O` of the same instant define the rigid transform `T_M^O` taking
//! map coordinates into the odometry frame. Path waypoints are pushed through
//! the latest transform and handed to the local controller, which only ever
//! sees odometry-frame goals. Between fixes the transform is held constant.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bev_map::{BevMap, WorldCoord};
use crate::planner::PathM;
use crate::traversability::TraversabilityMask;

#[derive(Debug, Error, PartialEq)]
pub enum ExecError {
    #[error("expected a {expected:?}-frame pose, got {got:?}")]
    FrameMismatch { expected: Frame, got: Frame },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("path has no waypoints")]
    EmptyPath,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Map,
    Odom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    /// Heading in `(-pi, pi]`.
    pub theta: f64,
    pub frame: Frame,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64, frame: Frame) -> Self {
        Self { x, y, theta: normalize_angle(theta), frame }
    }

    pub fn position(&self) -> WorldCoord {
        WorldCoord::new(self.x, self.y)
    }
}

/// Planar rigid transform: rotate by `rotation`, then translate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform2D {
    pub rotation: f64,
    pub translation: (f64, f64),
}

impl Default for RigidTransform2D {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl RigidTransform2D {
    pub const IDENTITY: Self = Self { rotation: 0.0, translation: (0.0, 0.0) };

    pub fn new(rotation: f64, tx: f64, ty: f64) -> Self {
        Self { rotation: normalize_angle(rotation), translation: (tx, ty) }
    }

    fn rotate(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        (c * x - s * y, s * x + c * y)
    }

    pub fn apply(&self, p: WorldCoord) -> WorldCoord {
        let (x, y) = self.rotate(p.x, p.y);
        WorldCoord::new(x + self.translation.0, y + self.translation.1)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform2D) -> RigidTransform2D {
        let (x, y) = self.rotate(other.translation.0, other.translation.1);
        RigidTransform2D::new(
            self.rotation + other.rotation,
            x + self.translation.0,
            y + self.translation.1,
        )
    }

    pub fn inverse(&self) -> RigidTransform2D {
        let inv = RigidTransform2D::new(-self.rotation, 0.0, 0.0);
        let (x, y) = inv.rotate(self.translation.0, self.translation.1);
        RigidTransform2D::new(inv.rotation, -x, -y)
    }

    /// Moves a pose into another frame.
    pub fn apply_pose(&self, p: &Pose2D, frame: Frame) -> Pose2D {
        let w = self.apply(p.position());
        Pose2D::new(w.x, w.y, p.theta + self.rotation, frame)
    }
}

/// `T_M^O` from simultaneous map-frame and odometry-frame poses of the robot,
/// i.e. the transform with `T ∘ pose_map = pose_odom`.
pub fn compute_map_to_odom(pose_map: &Pose2D, pose_odom: &Pose2D) -> Result<RigidTransform2D, ExecError> {
    if pose_map.frame != Frame::Map {
        return Err(ExecError::FrameMismatch { expected: Frame::Map, got: pose_map.frame });
    }
    if pose_odom.frame != Frame::Odom {
        return Err(ExecError::FrameMismatch { expected: Frame::Odom, got: pose_odom.frame });
    }
    let rot = RigidTransform2D::new(pose_odom.theta - pose_map.theta, 0.0, 0.0);
    let (x, y) = rot.rotate(pose_map.x, pose_map.y);
    Ok(RigidTransform2D::new(rot.rotation, pose_odom.x - x, pose_odom.y - y))
}

/// Maps a map-frame waypoint into the odometry frame.
pub fn transform_waypoint(t: &RigidTransform2D, p: WorldCoord) -> WorldCoord {
    t.apply(p)
}

/// Index of the waypoint nearest to `pose`; ties go to the larger index.
pub fn nearest_waypoint(waypoints: &[WorldCoord], pose: WorldCoord) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, w) in waypoints.iter().enumerate() {
        let d = w.distance(pose);
        if d <= best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Lookahead waypoint: walk `lookahead_m` of arc length forward from the
/// waypoint nearest to the robot, clamped to the final waypoint.
pub fn select_lookahead(path: &PathM, pose_map: &Pose2D, lookahead_m: f64) -> (usize, WorldCoord) {
    let wps = &path.waypoints;
    let mut k = nearest_waypoint(wps, pose_map.position());
    let mut travelled = 0.0;
    while k + 1 < wps.len() && travelled < lookahead_m {
        travelled += wps[k].distance(wps[k + 1]);
        k += 1;
    }
    (k, wps[k])
}

/// Latest `T_M^O`, shared between a low-rate fix producer and a high-rate
/// control loop. Readers never block; a reader racing a writer retries.
#[derive(Debug, Default)]
pub struct AlignmentCell {
    seq: AtomicU64,
    rotation: AtomicU64,
    tx: AtomicU64,
    ty: AtomicU64,
}

impl AlignmentCell {
    pub fn new(t: RigidTransform2D) -> Self {
        let cell = Self::default();
        cell.publish(t);
        cell
    }

    /// Replaces the transform. Meant for a single writer.
    pub fn publish(&self, t: RigidTransform2D) {
        self.seq.fetch_add(1, Ordering::AcqRel);
        self.rotation.store(t.rotation.to_bits(), Ordering::Release);
        self.tx.store(t.translation.0.to_bits(), Ordering::Release);
        self.ty.store(t.translation.1.to_bits(), Ordering::Release);
        self.seq.fetch_add(1, Ordering::AcqRel);
    }

    pub fn load(&self) -> RigidTransform2D {
        loop {
            let before = self.seq.load(Ordering::Acquire);
            if before % 2 == 1 {
                std::hint::spin_loop();
                continue;
            }
            let r = f64::from_bits(self.rotation.load(Ordering::Acquire));
            let x = f64::from_bits(self.tx.load(Ordering::Acquire));
            let y = f64::from_bits(self.ty.load(Ordering::Acquire));
            if self.seq.load(Ordering::Acquire) == before {
                return RigidTransform2D { rotation: r, translation: (x, y) };
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Odometry heading bias, radians per meter traveled.
    pub drift_rate: f64,
    /// Odometry heading random walk, rad/sqrt(m).
    pub heading_noise_std: f64,
    /// Global fix rate.
    pub global_fix_hz: f64,
    /// When false, no global fix is ever applied (pure odometry).
    pub fixes_enabled: bool,
    /// Position noise on each fix, meters (0 = ideal fix).
    pub fix_position_noise_std: f64,
    /// Heading noise on each fix, radians.
    pub fix_heading_noise_std: f64,
    pub control_hz: f64,
    pub lookahead_m: f64,
    pub speed_mps: f64,
    pub goal_tolerance_m: f64,
    pub rng_seed: u64,
    /// Step budget; derived from the path length when unset.
    pub max_steps: Option<u64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            drift_rate: 0.0,
            heading_noise_std: 0.0,
            global_fix_hz: 1.0,
            fixes_enabled: true,
            fix_position_noise_std: 0.0,
            fix_heading_noise_std: 0.0,
            control_hz: 10.0,
            lookahead_m: 5.0,
            speed_mps: 1.0,
            goal_tolerance_m: 2.0,
            rng_seed: 0,
            max_steps: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ExecError> {
        let positive = [
            ("global_fix_hz", self.global_fix_hz),
            ("control_hz", self.control_hz),
            ("lookahead_m", self.lookahead_m),
            ("speed_mps", self.speed_mps),
            ("goal_tolerance_m", self.goal_tolerance_m),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ExecError::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        let non_negative = [
            ("drift_rate", self.drift_rate),
            ("heading_noise_std", self.heading_noise_std),
            ("fix_position_noise_std", self.fix_position_noise_std),
            ("fix_heading_noise_std", self.fix_heading_noise_std),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ExecError::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Control steps between consecutive fixes.
    pub fn fix_period_steps(&self) -> u64 {
        ((self.control_hz / self.global_fix_hz).round() as u64).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimStep {
    pub step: u64,
    pub t_s: f64,
    pub true_pose: Pose2D,
    pub odom_pose: Pose2D,
    /// `T_M^O` in force during this step.
    pub transform: RigidTransform2D,
    pub fix_applied: bool,
    /// Lookahead waypoint index.
    pub k: usize,
    /// Distance between the true position and `T^-1` applied to odometry.
    pub estimate_error_m: f64,
    /// Distance from odometry position to the goal pushed through `T`.
    pub odom_goal_error_m: f64,
    /// Distance from the true position to the map-frame goal.
    pub map_goal_error_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SimOutcome {
    /// Stopped believing it had arrived, and truly within tolerance.
    Reached { error_m: f64 },
    /// Stopped believing it had arrived, but the true position is off.
    Missed { error_m: f64 },
    /// Ran out of steps.
    BudgetExhausted { error_m: f64 },
}

impl SimOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, SimOutcome::Reached { .. })
    }

    pub fn error_m(&self) -> f64 {
        match *self {
            SimOutcome::Reached { error_m }
            | SimOutcome::Missed { error_m }
            | SimOutcome::BudgetExhausted { error_m } => error_m,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimLog {
    pub steps: Vec<SimStep>,
    pub outcome: SimOutcome,
    pub goal: WorldCoord,
    /// Steps whose true position fell on a blocked or off-map cell.
    pub off_mask_steps: u64,
}

impl SimLog {
    pub fn final_true_pose(&self) -> Pose2D {
        self.steps.last().expect("log has at least one step").true_pose
    }

    pub fn max_estimate_error_m(&self) -> f64 {
        self.steps.iter().map(|s| s.estimate_error_m).fold(0.0, f64::max)
    }

    pub const CSV_HEADER: &'static str = "step,t_s,true_x,true_y,true_theta,odom_x,odom_y,odom_theta,fix_applied,k";

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.steps.len() * 96);
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for s in &self.steps {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
                s.step,
                s.t_s,
                s.true_pose.x,
                s.true_pose.y,
                s.true_pose.theta,
                s.odom_pose.x,
                s.odom_pose.y,
                s.odom_pose.theta,
                u8::from(s.fix_applied),
                s.k
            );
        }
        out
    }
}

/// Unicycle follower with drifting odometry and periodic global fixes.
///
/// Each control step the robot estimates its map pose as `T^-1 ∘ odom`,
/// picks the lookahead waypoint, maps it into the odometry frame through `T`
/// and turns toward it before driving `speed_mps / control_hz` meters. The
/// true heading receives the commanded turn; odometry additionally picks up
/// `drift_rate` rad per meter and Gaussian heading noise. On fix steps the
/// map pose is taken to be the true pose (plus optional fix noise) and `T` is
/// recomputed. The run stops when the robot believes it is at the final
/// waypoint, or when the step budget runs out; success is judged on the true
/// position.
pub fn simulate_follow(
    map: &BevMap,
    mask: &TraversabilityMask,
    path: &PathM,
    cfg: &SimConfig,
) -> Result<SimLog, ExecError> {
    cfg.validate()?;
    let wps = &path.waypoints;
    let goal = *wps.last().ok_or(ExecError::EmptyPath)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let dt = 1.0 / cfg.control_hz;
    let fix_period = cfg.fix_period_steps();
    let arrival_radius = 0.25 * cfg.goal_tolerance_m;
    let max_steps = cfg.max_steps.unwrap_or_else(|| {
        let nominal = path.length_m / cfg.speed_mps * cfg.control_hz;
        (3.0 * nominal).ceil() as u64 + (10.0 * cfg.control_hz).ceil() as u64 + 10
    });

    let start = wps[0];
    let heading = wps
        .iter()
        .find(|w| w.distance(start) > 1e-9)
        .map_or(0.0, |w| (w.y - start.y).atan2(w.x - start.x));
    let mut truth = Pose2D::new(start.x, start.y, heading, Frame::Map);
    let mut odom = Pose2D::new(start.x, start.y, heading, Frame::Odom);
    let mut t_mo = RigidTransform2D::IDENTITY;

    let mut steps = Vec::new();
    let mut off_mask_steps = 0;
    let mut step = 0u64;
    let outcome = loop {
        let fix_applied = cfg.fixes_enabled && step % fix_period == 0;
        if fix_applied {
            let mut fix = truth;
            if cfg.fix_position_noise_std > 0.0 {
                fix.x += cfg.fix_position_noise_std * unit.sample(&mut rng);
                fix.y += cfg.fix_position_noise_std * unit.sample(&mut rng);
            }
            if cfg.fix_heading_noise_std > 0.0 {
                fix.theta = normalize_angle(fix.theta + cfg.fix_heading_noise_std * unit.sample(&mut rng));
            }
            t_mo = compute_map_to_odom(&fix, &odom)?;
        }
        let estimate = t_mo.inverse().apply_pose(&odom, Frame::Map);
        let (k, target_map) = select_lookahead(path, &estimate, cfg.lookahead_m);
        let target = transform_waypoint(&t_mo, target_map);
        let goal_odom = transform_waypoint(&t_mo, goal);
        let odom_goal_error_m = odom.position().distance(goal_odom);
        let map_goal_error_m = truth.position().distance(goal);

        if !map.world_to_cell(truth.position()).is_some_and(|c| mask.get(c)) {
            off_mask_steps += 1;
        }
        steps.push(SimStep {
            step,
            t_s: step as f64 * dt,
            true_pose: truth,
            odom_pose: odom,
            transform: t_mo,
            fix_applied,
            k,
            estimate_error_m: estimate.position().distance(truth.position()),
            odom_goal_error_m,
            map_goal_error_m,
        });

        if odom_goal_error_m <= arrival_radius {
            break if map_goal_error_m <= cfg.goal_tolerance_m {
                SimOutcome::Reached { error_m: map_goal_error_m }
            } else {
                SimOutcome::Missed { error_m: map_goal_error_m }
            };
        }
        if step >= max_steps {
            break SimOutcome::BudgetExhausted { error_m: map_goal_error_m };
        }

        let to_target = odom.position().distance(target);
        let turn = if to_target > 0.0 {
            normalize_angle((target.y - odom.y).atan2(target.x - odom.x) - odom.theta)
        } else {
            0.0
        };
        let mut ds = cfg.speed_mps * dt;
        if k + 1 == wps.len() {
            ds = ds.min(to_target);
        }
        let noise = if cfg.heading_noise_std > 0.0 {
            cfg.heading_noise_std * ds.sqrt() * unit.sample(&mut rng)
        } else {
            0.0
        };
        truth.theta = normalize_angle(truth.theta + turn);
        odom.theta = normalize_angle(odom.theta + turn + cfg.drift_rate * ds + noise);
        truth.x += ds * truth.theta.cos();
        truth.y += ds * truth.theta.sin();
        odom.x += ds * odom.theta.cos();
        odom.y += ds * odom.theta.sin();
        step += 1;
    };
    Ok(SimLog { steps, outcome, goal, off_mask_steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bev_map::{Affine, Cell};
    use image::RgbImage;
    use proptest::prelude::*;

    fn straight_path(n: usize, spacing: f64) -> PathM {
        let waypoints: Vec<WorldCoord> = (0..n).map(|i| WorldCoord::new(i as f64 * spacing, 0.0)).collect();
        PathM {
            length_m: spacing * (n - 1) as f64,
            pixel_trace: (0..n).map(|i| Cell::new(i, 0)).collect(),
            waypoint_trace_index: (0..n).collect(),
            waypoints,
            cost: 0.0,
        }
    }

    fn close(a: WorldCoord, b: WorldCoord, tol: f64) -> bool {
        a.distance(b) <= tol
    }

    #[test]
    fn angle_normalization_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert_eq!(normalize_angle(0.0), 0.0);
        assert!((normalize_angle(-0.5) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_zero_poses_give_identity() {
        let t = compute_map_to_odom(&Pose2D::new(0.0, 0.0, 0.0, Frame::Map), &Pose2D::new(0.0, 0.0, 0.0, Frame::Odom))
            .unwrap();
        assert_eq!(t, RigidTransform2D::IDENTITY);
    }

    #[test]
    fn quarter_turn_example() {
        let pm = Pose2D::new(1.0, 0.0, 0.0, Frame::Map);
        let po = Pose2D::new(0.0, 1.0, PI / 2.0, Frame::Odom);
        let t = compute_map_to_odom(&pm, &po).unwrap();
        assert!((t.rotation - PI / 2.0).abs() < 1e-15);
        // (0, 1) - R(pi/2) (1, 0) = (0, 1) - (0, 1)
        assert!(t.translation.0.abs() < 1e-12 && t.translation.1.abs() < 1e-12);
        let mapped = t.apply_pose(&pm, Frame::Odom);
        assert!(close(mapped.position(), po.position(), 1e-12));
        assert!((mapped.theta - po.theta).abs() < 1e-12);
    }

    #[test]
    fn self_alignment_is_identity_on_pose() {
        let p = Pose2D::new(3.5, -2.0, 2.9, Frame::Map);
        let po = Pose2D { frame: Frame::Odom, ..p };
        let t = compute_map_to_odom(&p, &po).unwrap();
        assert!(close(t.apply(p.position()), p.position(), 1e-12));
    }

    #[test]
    fn frame_tags_are_checked() {
        let m = Pose2D::new(0.0, 0.0, 0.0, Frame::Map);
        let o = Pose2D::new(0.0, 0.0, 0.0, Frame::Odom);
        assert_eq!(
            compute_map_to_odom(&o, &o),
            Err(ExecError::FrameMismatch { expected: Frame::Map, got: Frame::Odom })
        );
        assert_eq!(
            compute_map_to_odom(&m, &m),
            Err(ExecError::FrameMismatch { expected: Frame::Odom, got: Frame::Map })
        );
    }

    #[test]
    fn transform_waypoint_examples() {
        let p = WorldCoord::new(2.0, 3.0);
        assert_eq!(transform_waypoint(&RigidTransform2D::IDENTITY, p), p);
        assert!(close(transform_waypoint(&RigidTransform2D::new(PI, 0.0, 0.0), p), WorldCoord::new(-2.0, -3.0), 1e-12));
        let q = transform_waypoint(&RigidTransform2D::new(PI / 2.0, 1.0, 0.0), WorldCoord::new(1.0, 0.0));
        assert!(close(q, WorldCoord::new(1.0, 1.0), 1e-12));
    }

    #[test]
    fn lookahead_examples() {
        let path = straight_path(11, 1.0);
        let at_end = Pose2D::new(10.0, 0.0, 0.0, Frame::Map);
        assert_eq!(select_lookahead(&path, &at_end, 3.0), (10, WorldCoord::new(10.0, 0.0)));
        let at_start = Pose2D::new(0.0, 0.0, 0.0, Frame::Map);
        assert_eq!(select_lookahead(&path, &at_start, 3.0).0, 3);
        let between = Pose2D::new(2.5, 1.0, 0.0, Frame::Map);
        assert_eq!(nearest_waypoint(&path.waypoints, between.position()), 3);
        assert_eq!(select_lookahead(&path, &between, 3.0).0, 6);
    }

    #[test]
    fn alignment_cell_round_trips_under_contention() {
        let cell = std::sync::Arc::new(AlignmentCell::new(RigidTransform2D::new(0.0, 0.0, 0.0)));
        let writer = {
            let cell = cell.clone();
            std::thread::spawn(move || {
                for i in 1..=2000 {
                    let v = i as f64;
                    cell.publish(RigidTransform2D { rotation: v * 1e-4, translation: (v, -v) });
                }
            })
        };
        for _ in 0..20000 {
            let t = cell.load();
            // a torn read would mix fields from different publishes
            assert_eq!(t.translation.0, -t.translation.1);
            assert!((t.rotation - t.translation.0 * 1e-4).abs() < 1e-12);
        }
        writer.join().unwrap();
        assert_eq!(cell.load().translation, (2000.0, -2000.0));
    }

    fn sim_world(len_m: usize) -> (BevMap, TraversabilityMask) {
        // 1 m/px, x = col, y = 10 - row; the path runs along row 10 (y = 0)
        let w = len_m + 21;
        let map = BevMap::new(RgbImage::new(w as u32, 21), Affine { a: 1.0, d: 0.0, b: 0.0, e: -1.0, c: 0.0, f: 10.0 }).unwrap();
        (map, TraversabilityMask::filled(w, 21, true))
    }

    #[test]
    fn perfect_odometry_tracks_truth() {
        let (map, mask) = sim_world(40);
        let path = straight_path(41, 1.0);
        let log = simulate_follow(&map, &mask, &path, &SimConfig::default()).unwrap();
        assert!(log.outcome.is_success(), "{:?}", log.outcome);
        assert!(log.steps.iter().all(|s| s.true_pose.x == s.odom_pose.x && s.true_pose.y == s.odom_pose.y));
        assert_eq!(log.off_mask_steps, 0);
    }

    #[test]
    fn rejects_bad_config() {
        let (map, mask) = sim_world(5);
        let path = straight_path(6, 1.0);
        let cfg = SimConfig { control_hz: 0.0, ..SimConfig::default() };
        assert!(matches!(simulate_follow(&map, &mask, &path, &cfg), Err(ExecError::InvalidConfig(_))));
        let cfg = SimConfig { drift_rate: -0.1, ..SimConfig::default() };
        assert!(matches!(simulate_follow(&map, &mask, &path, &cfg), Err(ExecError::InvalidConfig(_))));
    }

    #[test]
    fn fix_equalizes_odom_and_map_goal_error() {
        let (map, mask) = sim_world(60);
        let path = straight_path(61, 1.0);
        let cfg = SimConfig { drift_rate: 0.02, heading_noise_std: 0.01, rng_seed: 5, ..SimConfig::default() };
        let log = simulate_follow(&map, &mask, &path, &cfg).unwrap();
        let fixes: Vec<_> = log.steps.iter().filter(|s| s.fix_applied).collect();
        assert!(fixes.len() > 10);
        for s in fixes {
            assert!((s.odom_goal_error_m - s.map_goal_error_m).abs() < 1e-9);
            assert!(s.estimate_error_m < 1e-9);
        }
    }

    #[test]
    fn csv_is_reproducible() {
        let (map, mask) = sim_world(30);
        let path = straight_path(31, 1.0);
        let cfg = SimConfig { drift_rate: 0.01, heading_noise_std: 0.02, rng_seed: 9, ..SimConfig::default() };
        let a = simulate_follow(&map, &mask, &path, &cfg).unwrap().to_csv();
        let b = simulate_follow(&map, &mask, &path, &cfg).unwrap().to_csv();
        assert_eq!(a, b);
        assert!(a.starts_with(SimLog::CSV_HEADER));
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform2D> {
        (-PI..PI, -100.0f64..100.0, -100.0f64..100.0).prop_map(|(r, x, y)| RigidTransform2D::new(r, x, y))
    }

    fn angle_diff(a: f64, b: f64) -> f64 {
        normalize_angle(a - b).abs()
    }

    proptest! {
        #[test]
        fn group_laws(t in arb_transform(), u in arb_transform(), v in arb_transform()) {
            let id = t.compose(&t.inverse());
            prop_assert!(angle_diff(id.rotation, 0.0) < 1e-12);
            prop_assert!(id.translation.0.abs() < 1e-12 && id.translation.1.abs() < 1e-12);
            let a = t.compose(&u).compose(&v);
            let b = t.compose(&u.compose(&v));
            prop_assert!(angle_diff(a.rotation, b.rotation) < 1e-12);
            prop_assert!((a.translation.0 - b.translation.0).abs() < 1e-12);
            prop_assert!((a.translation.1 - b.translation.1).abs() < 1e-12);
        }

        #[test]
        fn alignment_maps_map_position_to_odom_position(
            mx in -500.0f64..500.0, my in -500.0f64..500.0, mt in -PI..PI,
            ox in -500.0f64..500.0, oy in -500.0f64..500.0, ot in -PI..PI,
        ) {
            let pm = Pose2D::new(mx, my, mt, Frame::Map);
            let po = Pose2D::new(ox, oy, ot, Frame::Odom);
            let t = compute_map_to_odom(&pm, &po).unwrap();
            prop_assert!(transform_waypoint(&t, pm.position()).distance(po.position()) < 1e-9);
        }

        #[test]
        fn lookahead_index_is_monotone(lookahead in 0.5f64..8.0, jitter in -0.4f64..0.4) {
            let path = straight_path(30, 1.0);
            let mut last = 0;
            for i in 0..120 {
                let pose = Pose2D::new(i as f64 * 0.25, jitter, 0.0, Frame::Map);
                let (k, _) = select_lookahead(&path, &pose, lookahead);
                prop_assert!(k >= last);
                last = k;
            }
        }
    }
}
