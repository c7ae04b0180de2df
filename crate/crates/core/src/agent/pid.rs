//! Image-plane pursuit: yaw on horizontal offset, forward speed on box height.

use super::config::AgentConfig;
use crate::sim::{Action, ActionLimits, CameraConfig};

/// Box height, in pixels, of a standing target at the following distance.
pub fn height_setpoint(camera: &CameraConfig, cfg: &AgentConfig) -> f64 {
    camera.focal() * cfg.target_height / cfg.d_star
}

/// Normalized `(yaw, forward)` errors of a `[cx, cy, w, h]` box.
fn errors(bbox: &[f64; 4], camera: &CameraConfig, cfg: &AgentConfig) -> [f64; 2] {
    let half = camera.image_w / 2.0;
    [
        (bbox[0] - half) / half,
        (height_setpoint(camera, cfg) - bbox[3]) / camera.image_h,
    ]
}

/// PD controller; remembers the previous error for the derivative term.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Pid {
    prev: Option<[f64; 2]>,
}

impl Pid {
    pub fn reset(&mut self) {
        self.prev = None;
    }

    pub fn control(&mut self, bbox: &[f64; 4], camera: &CameraConfig, cfg: &AgentConfig, limits: &ActionLimits) -> Action {
        let e = errors(bbox, camera, cfg);
        let d = self.prev.map_or([0.0, 0.0], |p| [e[0] - p[0], e[1] - p[1]]);
        self.prev = Some(e);
        let omega = cfg.kp_yaw * e[0] + cfg.kd_yaw * d[0];
        let v_f = cfg.kp_fwd * e[1] + cfg.kd_fwd * d[1];
        limits.clamp(Action::new(v_f, 0.0, omega))
    }
}

/// Stateless single-step controller (no derivative history).
pub fn pid_control(bbox: &[f64; 4], camera: &CameraConfig, cfg: &AgentConfig, limits: &ActionLimits) -> Action {
    Pid::default().control(bbox, camera, cfg, limits)
}
