//! Pure-pursuit execution of planned waypoints.

use serde::{Deserialize, Serialize};

use crate::sim::{wrap_angle, Action, ActionLimits, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PursuitConfig {
    /// How many waypoints past the nearest one to aim at.
    pub lookahead: usize,
    pub linear_gain: f64,
    pub yaw_gain: f64,
    /// Below this distance to the last waypoint the follower stops.
    pub stop_radius: f64,
    pub plan_radius: f64,
    pub limits: ActionLimits,
}

impl Default for PursuitConfig {
    fn default() -> Self {
        Self {
            lookahead: 2,
            linear_gain: 1.0,
            yaw_gain: 1.0,
            stop_radius: 0.05,
            plan_radius: 4.0,
            limits: ActionLimits::default(),
        }
    }
}

/// Follows a trajectory given in the frame the tracker had when it was
/// planned, dead-reckoning its own pose from the commands it issues.
#[derive(Debug, Clone, PartialEq)]
pub struct PurePursuit {
    waypoints: Vec<(f64, f64)>,
    pose: Pose,
    cursor: usize,
    cfg: PursuitConfig,
}

impl PurePursuit {
    pub fn new(traj: &[[f64; 2]], cfg: PursuitConfig) -> Self {
        Self {
            waypoints: traj.iter().map(|p| (p[0] * cfg.plan_radius, p[1] * cfg.plan_radius)).collect(),
            pose: Pose::default(),
            cursor: 0,
            cfg,
        }
    }

    /// Dead-reckoned pose in the planning frame.
    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn finished(&self) -> bool {
        match self.waypoints.last() {
            None => true,
            Some(&(x, y)) => self.cursor + 1 >= self.waypoints.len() && (x - self.pose.x).hypot(y - self.pose.y) < self.cfg.stop_radius,
        }
    }

    /// Translation and heading command toward the lookahead waypoint,
    /// without advancing the internal pose.
    pub fn command(&mut self) -> Action {
        let n = self.waypoints.len();
        if n == 0 || self.finished() {
            return Action::ZERO;
        }
        let dist = |p: &(f64, f64)| (p.0 - self.pose.x).hypot(p.1 - self.pose.y);
        let mut best = self.cursor;
        for i in self.cursor..n {
            if dist(&self.waypoints[i]) < dist(&self.waypoints[best]) {
                best = i;
            }
        }
        self.cursor = best;
        let (wx, wy) = self.waypoints[(best + self.cfg.lookahead).min(n - 1)];
        let (fwd, left) = self.pose.to_local(wx, wy);
        if fwd.hypot(left) < 1e-12 {
            return Action::ZERO;
        }
        let mut v_f = self.cfg.linear_gain * fwd;
        // Lateral velocity is positive to the right.
        let mut v_l = -self.cfg.linear_gain * left;
        let m = v_f.abs().max(v_l.abs());
        if m > self.cfg.limits.max_linear {
            let s = self.cfg.limits.max_linear / m;
            v_f *= s;
            v_l *= s;
        }
        // Positive yaw rate turns right, toward negative bearings.
        let omega = -self.cfg.yaw_gain * left.atan2(fwd);
        self.cfg.limits.clamp(Action::new(v_f, v_l, omega))
    }

    /// Integrates an executed action into the dead-reckoned pose.
    pub fn advance(&mut self, a: &Action) {
        let (s, c) = self.pose.yaw.sin_cos();
        self.pose = Pose::new(
            self.pose.x + a.v_f * c + a.v_l * s,
            self.pose.y + a.v_f * s - a.v_l * c,
            wrap_angle(self.pose.yaw - a.omega_y),
        );
    }

    pub fn next_action(&mut self) -> Action {
        let a = self.command();
        self.advance(&a);
        a
    }
}

/// Open-loop action sequence, one per waypoint, that tracks `traj`.
pub fn trajectory_to_actions(traj: &[[f64; 2]], lookahead: usize) -> Vec<Action> {
    let cfg = PursuitConfig {
        lookahead: lookahead.max(1),
        ..PursuitConfig::default()
    };
    let mut p = PurePursuit::new(traj, cfg);
    (0..traj.len()).map(|_| p.next_action()).collect()
}
