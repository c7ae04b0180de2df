//! Agent parameters, ablation variants and the key=value config format.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which parts of the pipeline are switched off or swapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Prototype frozen after initialisation.
    NoEma,
    /// Running mean instead of EMA.
    AvgUpdate,
    /// Raw associated boxes drive the controller.
    NoKf,
    /// Filter with constant measurement noise and no confidence gate.
    LinearKf,
    /// Never plans; keeps pursuing the extrapolated box.
    NoPlannerPid,
    /// Planner conditioned on a zeroed box.
    PlannerNoBbox,
}

pub const VARIANTS: [Variant; 7] = [
    Variant::Full,
    Variant::NoEma,
    Variant::AvgUpdate,
    Variant::NoKf,
    Variant::LinearKf,
    Variant::NoPlannerPid,
    Variant::PlannerNoBbox,
];

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoEma => "no_ema",
            Variant::AvgUpdate => "avg_update",
            Variant::NoKf => "no_kf",
            Variant::LinearKf => "linear_kf",
            Variant::NoPlannerPid => "no_planner_pid",
            Variant::PlannerNoBbox => "planner_no_bbox",
        }
    }

    pub fn uses_planner(self) -> bool {
        self != Variant::NoPlannerPid
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VARIANTS
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Matching threshold on prototype similarity.
    pub eta_s: f64,
    /// Confidence below which a measurement is ignored.
    pub eta_c: f64,
    /// EMA momentum of the prototype.
    pub beta: f64,
    pub lambda: f64,
    pub gamma: f64,
    /// Process noise of the box filter.
    pub process_noise: f64,
    /// Planning starts once this many consecutive frames lacked a
    /// confident measurement.
    pub trigger_len: usize,
    pub kp_yaw: f64,
    pub kp_fwd: f64,
    pub kd_yaw: f64,
    pub kd_fwd: f64,
    /// Yaw rate while searching, rad per step.
    pub search_rate: f64,
    /// Control ticks spent on one sampled plan.
    pub plan_exec_len: usize,
    /// Fresh plans drawn after the first one runs out.
    pub replan_budget: usize,
    /// Draws per plan; the first one that is free on the observed crop is kept.
    pub plan_draws: usize,
    pub lookahead: usize,
    /// Prior on the target's physical height, metres.
    pub target_height: f64,
    pub target_radius: f64,
    /// Desired following distance, which sets the box-height setpoint.
    pub d_star: f64,
    /// Measurement variance of the `linear_kf` variant.
    pub fixed_noise: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            eta_s: 0.5,
            eta_c: 0.5,
            beta: 0.8,
            lambda: 15.0,
            gamma: 0.4,
            process_noise: 0.01,
            trigger_len: 10,
            kp_yaw: 0.6,
            kp_fwd: 0.8,
            kd_yaw: 0.1,
            kd_fwd: 0.1,
            search_rate: 0.1,
            plan_exec_len: 16,
            replan_budget: 3,
            plan_draws: 1,
            lookahead: 2,
            target_height: 1.7,
            target_radius: 0.3,
            d_star: 2.5,
            fixed_noise: 0.5,
        }
    }
}

macro_rules! fields {
    ($m:ident) => {
        $m! {
            eta_s: f64,
            eta_c: f64,
            beta: f64,
            lambda: f64,
            gamma: f64,
            process_noise: f64,
            trigger_len: usize,
            kp_yaw: f64,
            kp_fwd: f64,
            kd_yaw: f64,
            kd_fwd: f64,
            search_rate: f64,
            plan_exec_len: usize,
            replan_budget: usize,
            plan_draws: usize,
            lookahead: usize,
            target_height: f64,
            target_radius: f64,
            d_star: f64,
            fixed_noise: f64
        }
    };
}

macro_rules! setter {
    ($($name:ident: $ty:ty),*) => {
        /// Sets one field from its textual value.
        pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
            match key {
                $(stringify!($name) => {
                    self.$name = value
                        .parse::<$ty>()
                        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))?;
                })*
                _ => return Err(Error::Config(format!("unknown key {key:?}"))),
            }
            Ok(())
        }

        /// Every field as `key = value` lines, in declaration order.
        pub fn to_text(&self) -> String {
            let mut s = String::new();
            $(s.push_str(&format!("{} = {}\n", stringify!($name), self.$name));)*
            s
        }

        pub const KEYS: &'static [&'static str] = &[$(stringify!($name)),*];
    };
}

impl AgentConfig {
    fields!(setter);

    /// Parses `key = value` lines on top of the defaults. Blank lines and
    /// `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta_s", self.eta_s), ("eta_c", self.eta_c), ("beta", self.beta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.trigger_len == 0 {
            return Err(Error::Config("trigger_len must be at least 1".into()));
        }
        if self.lookahead == 0 || self.plan_draws == 0 {
            return Err(Error::Config("lookahead and plan_draws must be at least 1".into()));
        }
        if !(self.target_height > 0.0 && self.d_star > 0.0 && self.fixed_noise > 0.0) {
            return Err(Error::Config("target_height, d_star and fixed_noise must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let mut c = AgentConfig::default();
        c.kp_yaw = 0.75;
        c.trigger_len = 4;
        assert_eq!(AgentConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(AgentConfig::KEYS.len(), c.to_text().lines().count());
    }

    #[test]
    fn comments_and_errors() {
        let c = AgentConfig::parse("# gains\n\nkp_fwd = 0.5  # slower\n").unwrap();
        assert_eq!(c.kp_fwd, 0.5);
        assert!(matches!(AgentConfig::parse("nope = 1"), Err(Error::Config(_))));
        assert!(AgentConfig::parse("trigger_len = -1").is_err());
        assert!(AgentConfig::parse("eta_s = 1.0").is_err());
        assert!(AgentConfig::parse("trigger_len = 0").is_err());
        assert!(AgentConfig::parse("kp_fwd").is_err());
    }

    #[test]
    fn variant_names() {
        for v in VARIANTS {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("pid".parse::<Variant>().is_err());
    }
}
