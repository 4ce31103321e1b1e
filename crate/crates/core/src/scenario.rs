//! Scenario description and its line-based `key = value` config format.
//!
//! ```text
//! # comments start with '#'
//! mode = ce
//! plant.E = 150
//! event.1.time = 0.5
//! event.1.path = plant.E
//! event.1.value = 120
//! ```
//!
//! Every numeric key is also a valid event path and `--set` override.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Matrix2;

use crate::controller::{ControllerGains, ControllerMode, ReferenceSpec};
use crate::error::{PfcError, Result};
use crate::estimator::EstimatorGains;
use crate::plant::{PlantParams, PlantState};

/// A parameter step applied exactly at `time`.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub path: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub initial: PlantState,
    pub duration: f64,
    pub dt: f64,
    pub mode: ControllerMode,
    pub plant: PlantParams,
    pub reference: ReferenceSpec,
    pub controller: ControllerGains,
    pub estimator: EstimatorGains,
    pub events: Vec<Event>,
    /// Record every `record_stride`-th integration step.
    pub record_stride: usize,
    /// Hold the duty at a fixed value instead of running a control law.
    pub u_override: Option<f64>,
}

/// Nominal rig, CE controller, four step events over 2.1 s:
/// E 150→120 V at 0.5 s, ρ 2π/3→0 at 0.9 s, V_d 200→160 V at 1.3 s and
/// load 87→51 Ω at 1.7 s.
pub fn standard_scenario() -> Scenario {
    let ev = |time: f64, path: &str, value: f64| Event { time, path: path.to_string(), value };
    Scenario {
        name: "standard".to_string(),
        initial: PlantState::new(1.5, 100.0),
        duration: 2.1,
        dt: 1e-5,
        mode: ControllerMode::Ce,
        plant: PlantParams::nominal(),
        reference: ReferenceSpec { v_d: 200.0 },
        controller: ControllerGains::default(),
        estimator: EstimatorGains::default(),
        events: vec![
            ev(0.5, "plant.E", 120.0),
            ev(0.9, "plant.rho", 0.0),
            ev(1.3, "ref.V_d", 160.0),
            ev(1.7, "plant.R_load", 51.0),
        ],
        record_stride: 10,
        u_override: None,
    }
}

fn parse_number(value: &str) -> Result<f64> {
    value.trim().parse::<f64>().map_err(|_| PfcError::InvalidParameter(format!("`{value}` is not a number")))
}

fn set_matrix_entry(m: &mut Matrix2<f64>, suffix: &str, value: f64) -> Result<()> {
    let (r, c) = match suffix {
        "11" => (0, 0),
        "12" => (0, 1),
        "21" => (1, 0),
        "22" => (1, 1),
        _ => return Err(PfcError::UnknownPath(suffix.to_string())),
    };
    m[(r, c)] = value;
    if r != c {
        m[(c, r)] = value;
    }
    Ok(())
}

impl Scenario {
    pub fn is_numeric_path(path: &str) -> bool {
        let mut probe = standard_scenario();
        probe.set_number(path, 1.0).is_ok()
    }

    /// Set a numeric parameter by dotted path.
    pub fn set_number(&mut self, path: &str, value: f64) -> Result<()> {
        let p = &mut self.plant;
        match path {
            "duration" => self.duration = value,
            "dt" => self.dt = value,
            "record_stride" => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(PfcError::InvalidParameter(format!(
                        "record_stride must be a positive integer, got {value}"
                    )));
                }
                self.record_stride = value as usize;
            }
            "init.i" => self.initial.i = value,
            "init.v" => self.initial.v = value,
            "plant.L" | "plant.inductance" => p.inductance = value,
            "plant.C" | "plant.capacitance" => p.capacitance = value,
            "plant.G" | "plant.conductance" => p.conductance = value,
            "plant.R_load" => {
                if !(value > 0.0) {
                    return Err(PfcError::InvalidParameter(format!("R_load must be > 0, got {value}")));
                }
                p.conductance = 1.0 / value;
            }
            "plant.r" | "plant.source_resistance" => p.source_resistance = value,
            "plant.E" | "plant.source_amplitude" => p.source_amplitude = value,
            "plant.omega" => p.omega = value,
            "plant.rho" | "plant.source_phase" => p.source_phase = value,
            "plant.i_limit" | "plant.current_limit" => p.current_limit = if value > 0.0 { Some(value) } else { None },
            "ref.V_d" => self.reference.v_d = value,
            "controller.a" => self.controller.a = value,
            "controller.b" => self.controller.b = value,
            "controller.c" => self.controller.c = value,
            "controller.d" => self.controller.d = value,
            "controller.k" => self.controller.k = value,
            "estimator.k" => self.estimator.k = value,
            "estimator.gamma" => self.estimator.gamma = Matrix2::identity() * value,
            "estimator.D" => self.estimator.d = Matrix2::identity() * value,
            "control.u_override" => self.u_override = Some(value),
            _ => {
                if let Some(s) = path.strip_prefix("estimator.gamma.") {
                    return set_matrix_entry(&mut self.estimator.gamma, s, value);
                }
                if let Some(s) = path.strip_prefix("estimator.D.") {
                    return set_matrix_entry(&mut self.estimator.d, s, value);
                }
                return Err(PfcError::UnknownPath(path.to_string()));
            }
        }
        Ok(())
    }

    /// Set any key from its textual value, including the non-numeric ones.
    pub fn set(&mut self, path: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match path {
            "name" => self.name = value.to_string(),
            "mode" => self.mode = value.parse()?,
            "plant.i_limit" | "plant.current_limit" if value.eq_ignore_ascii_case("none") => {
                self.plant.current_limit = None
            }
            "control.u_override" if value.eq_ignore_ascii_case("none") => self.u_override = None,
            _ => self.set_number(path, parse_number(value)?)?,
        }
        Ok(())
    }

    /// Parse a config on top of [`standard_scenario`] defaults. Events in the
    /// file replace the default event list; `events = none` clears it.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut sc = standard_scenario();
        let mut events: BTreeMap<u32, (Option<f64>, Option<String>, Option<f64>, usize)> = BTreeMap::new();
        let mut saw_events = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cfg_err = |message: String| PfcError::Config { line: line_no, message };
            let (key, value) =
                line.split_once('=').ok_or_else(|| cfg_err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(rest) = key.strip_prefix("event.") {
                saw_events = true;
                let (index, field) =
                    rest.split_once('.').ok_or_else(|| cfg_err(format!("malformed event key `{key}`")))?;
                let index: u32 = index.parse().map_err(|_| cfg_err(format!("bad event index in `{key}`")))?;
                let entry = events.entry(index).or_insert((None, None, None, line_no));
                match field {
                    "time" => entry.0 = Some(parse_number(value).map_err(|e| cfg_err(e.to_string()))?),
                    "path" => {
                        if !Scenario::is_numeric_path(value) {
                            return Err(cfg_err(format!("event path `{value}` is not a numeric parameter")));
                        }
                        entry.1 = Some(value.to_string())
                    }
                    "value" => entry.2 = Some(parse_number(value).map_err(|e| cfg_err(e.to_string()))?),
                    other => return Err(cfg_err(format!("unknown event field `{other}`"))),
                }
                continue;
            }
            if key == "events" {
                if !value.eq_ignore_ascii_case("none") {
                    return Err(cfg_err(format!("`events` only accepts `none`, got `{value}`")));
                }
                saw_events = true;
                continue;
            }
            sc.set(key, value).map_err(|e| cfg_err(e.to_string()))?;
        }
        if saw_events {
            sc.events.clear();
            for (index, (time, path, value, line)) in events {
                let missing =
                    |what: &str| PfcError::Config { line, message: format!("event.{index} is missing `{what}`") };
                sc.events.push(Event {
                    time: time.ok_or_else(|| missing("time"))?,
                    path: path.ok_or_else(|| missing("path"))?,
                    value: value.ok_or_else(|| missing("value"))?,
                });
            }
        }
        Ok(sc)
    }

    pub fn from_config_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_config_str(&text)
    }

    /// Serialize every key, with full round-trip precision.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let p = &self.plant;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("name", self.name.clone());
        kv("mode", self.mode.label().to_ascii_lowercase());
        kv("duration", self.duration.to_string());
        kv("dt", self.dt.to_string());
        kv("record_stride", self.record_stride.to_string());
        kv("init.i", self.initial.i.to_string());
        kv("init.v", self.initial.v.to_string());
        kv("plant.L", p.inductance.to_string());
        kv("plant.C", p.capacitance.to_string());
        kv("plant.G", p.conductance.to_string());
        kv("plant.r", p.source_resistance.to_string());
        kv("plant.E", p.source_amplitude.to_string());
        kv("plant.omega", p.omega.to_string());
        kv("plant.rho", p.source_phase.to_string());
        kv("plant.i_limit", p.current_limit.map_or("none".to_string(), |x| x.to_string()));
        kv("ref.V_d", self.reference.v_d.to_string());
        let c = &self.controller;
        kv("controller.a", c.a.to_string());
        kv("controller.b", c.b.to_string());
        kv("controller.c", c.c.to_string());
        kv("controller.d", c.d.to_string());
        kv("controller.k", c.k.to_string());
        let e = &self.estimator;
        kv("estimator.k", e.k.to_string());
        for (name, m) in [("gamma", &e.gamma), ("D", &e.d)] {
            kv(&format!("estimator.{name}.11"), m[(0, 0)].to_string());
            kv(&format!("estimator.{name}.12"), m[(0, 1)].to_string());
            kv(&format!("estimator.{name}.22"), m[(1, 1)].to_string());
        }
        kv("control.u_override", self.u_override.map_or("none".to_string(), |x| x.to_string()));
        if self.events.is_empty() {
            kv("events", "none".to_string());
        }
        for (j, ev) in self.events.iter().enumerate() {
            kv(&format!("event.{}.time", j + 1), ev.time.to_string());
            kv(&format!("event.{}.path", j + 1), ev.path.clone());
            kv(&format!("event.{}.value", j + 1), ev.value.to_string());
        }
        s
    }

    /// Number of integration steps to reach `time`, if `time` is on the grid.
    pub fn step_index(&self, time: f64) -> Option<u64> {
        let n = time / self.dt;
        let r = n.round();
        ((n - r).abs() <= 1e-6 * r.max(1.0)).then_some(r as u64)
    }

    pub fn total_steps(&self) -> u64 {
        (self.duration / self.dt).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(PfcError::InvalidParameter(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(PfcError::InvalidParameter(format!("duration must be > 0, got {}", self.duration)));
        }
        if self.record_stride == 0 {
            return Err(PfcError::InvalidParameter("record_stride must be >= 1".into()));
        }
        self.plant.validate()?;
        self.controller.validate()?;
        self.estimator.validate()?;
        self.reference.validate(&self.plant)?;
        if !(self.initial.i.is_finite() && self.initial.v.is_finite()) {
            return Err(PfcError::InvalidParameter("initial state must be finite".into()));
        }
        if let Some(u) = self.u_override {
            if !(u.abs() <= 1.0) {
                return Err(PfcError::InvalidParameter(format!("u_override must lie in [-1, 1], got {u}")));
            }
        }
        let mut last = f64::NEG_INFINITY;
        for ev in &self.events {
            if !(ev.time > last) {
                return Err(PfcError::InvalidParameter("events must be sorted strictly by time".into()));
            }
            last = ev.time;
            if ev.time < 0.0 || ev.time > self.duration {
                return Err(PfcError::InvalidParameter(format!(
                    "event at t = {} lies outside [0, duration = {}]",
                    ev.time, self.duration
                )));
            }
            if self.step_index(ev.time).is_none() {
                return Err(PfcError::InvalidParameter(format!(
                    "dt = {} does not divide event time {}",
                    self.dt, ev.time
                )));
            }
            let mut probe = self.clone();
            probe.set_number(&ev.path, ev.value)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_scenario_shape() {
        let sc = standard_scenario();
        sc.validate().unwrap();
        assert_eq!(sc.events.len(), 4);
        assert!(sc.events.windows(2).all(|w| w[0].time < w[1].time));
        let mut p = sc.clone();
        for ev in &sc.events {
            p.set_number(&ev.path, ev.value).unwrap();
        }
        assert_eq!(p.plant.conductance, 1.0 / 51.0);
        assert_eq!(p.plant.source_amplitude, 120.0);
        assert_eq!(p.plant.source_phase, 0.0);
        assert_eq!(p.reference.v_d, 160.0);
        assert_eq!((sc.initial.i, sc.initial.v), (1.5, 100.0));
    }

    #[test]
    fn config_round_trip() {
        let mut sc = standard_scenario();
        sc.set("estimator.gamma.12", "1.5").unwrap();
        sc.set("mode", "im").unwrap();
        let text = sc.to_config_string();
        let back = Scenario::from_config_str(&text).unwrap();
        assert_eq!(back, sc);
    }

    #[test]
    fn config_errors_carry_line_numbers() {
        let err = Scenario::from_config_str("dt = 1e-5\n\nplant.E = abc\n").unwrap_err();
        assert!(matches!(err, PfcError::Config { line: 3, .. }), "{err}");
        let err = Scenario::from_config_str("# c\nnonsense line\n").unwrap_err();
        assert!(matches!(err, PfcError::Config { line: 2, .. }));
        let err = Scenario::from_config_str("plant.X = 3\n").unwrap_err();
        assert!(matches!(err, PfcError::Config { line: 1, .. }));
        let err = Scenario::from_config_str("event.1.time = 0.5\nevent.1.path = plant.E\n").unwrap_err();
        assert!(err.to_string().contains("missing `value`"));
        let err = Scenario::from_config_str("event.1.path = mode\n").unwrap_err();
        assert!(matches!(err, PfcError::Config { line: 1, .. }));
    }

    #[test]
    fn config_events_replace_defaults() {
        let sc = Scenario::from_config_str(
            "duration = 0.3  # short\nevent.2.time = 0.2\nevent.2.path = plant.r\nevent.2.value = 0\nevent.1.time = 0.1\nevent.1.path = plant.E\nevent.1.value = 140\n",
        )
        .unwrap();
        assert_eq!(sc.events.len(), 2);
        assert_eq!(sc.events[0].time, 0.1);
        assert_eq!(sc.events[1].path, "plant.r");
        sc.validate().unwrap();
    }

    #[test]
    fn empty_event_list_round_trips() {
        let mut sc = standard_scenario();
        sc.duration = 0.4;
        sc.events.clear();
        let back = Scenario::from_config_str(&sc.to_config_string()).unwrap();
        assert_eq!(back, sc);
        assert!(Scenario::from_config_str("events = 3\n").is_err());
    }

    #[test]
    fn validation_rejects_bad_schedules() {
        let mut sc = standard_scenario();
        sc.dt = 3e-5;
        assert!(sc.validate().unwrap_err().to_string().contains("does not divide"));
        let mut sc = standard_scenario();
        sc.events.swap(0, 1);
        assert!(sc.validate().is_err());
        let mut sc = standard_scenario();
        sc.duration = 1.0;
        assert!(sc.validate().is_err());
        let mut sc = standard_scenario();
        sc.dt = 0.0;
        assert!(sc.validate().is_err());
    }

    #[test]
    fn matrix_paths_stay_symmetric() {
        let mut sc = standard_scenario();
        sc.set_number("estimator.D.21", 2.0).unwrap();
        assert_eq!(sc.estimator.d[(0, 1)], 2.0);
        assert!(sc.set_number("estimator.D.13", 2.0).is_err());
        sc.set("plant.i_limit", "none").unwrap();
        assert_eq!(sc.plant.current_limit, None);
    }
}
