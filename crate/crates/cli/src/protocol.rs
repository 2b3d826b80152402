//! JSON text frames exchanged with live clients. Every frame carries `type`
//! and `tick`.

use afford::affordance::AffordanceVector;
use afford::session::Pilot;
use afford::sim::CarState;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

impl From<bool> for Switch {
    fn from(b: bool) -> Self {
        if b {
            Switch::On
        } else {
            Switch::Off
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Driver,
    Observer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarView {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub station: f64,
    pub lateral: f64,
    pub lane: Option<usize>,
    pub length: f64,
    pub width: f64,
}

impl From<&CarState> for CarView {
    fn from(c: &CarState) -> Self {
        Self {
            id: c.id,
            x: c.pose.x,
            y: c.pose.y,
            heading: c.pose.heading,
            speed: c.speed,
            station: c.frame.station,
            lateral: c.frame.lateral,
            lane: c.frame.lane_index,
            length: c.length,
            width: c.width,
        }
    }
}

/// Indicator values in canonical order with their activity mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceView {
    pub values: Vec<f64>,
    pub active: Vec<bool>,
}

impl From<&AffordanceVector> for AffordanceView {
    fn from(a: &AffordanceVector) -> Self {
        Self { values: a.values.to_vec(), active: a.active.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State {
        tick: u64,
        time: f64,
        ego: CarView,
        traffic: Vec<CarView>,
        affordance_truth: Option<AffordanceView>,
        affordance_estimate: Option<AffordanceView>,
        mode: Pilot,
        /// Controller state in autonomous mode.
        drive_mode: Option<String>,
        recording: bool,
        collision: bool,
    },
    Mode {
        tick: u64,
        mode: Pilot,
        record: Switch,
        role: Role,
    },
    Error {
        tick: u64,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Control {
        tick: u64,
        steer: f64,
        accel: f64,
    },
    Mode {
        tick: u64,
        #[serde(default)]
        mode: Option<Pilot>,
        #[serde(default)]
        record: Option<Switch>,
    },
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, String> {
        let msg: ClientMessage = serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))?;
        match msg {
            ClientMessage::Control { steer, accel, .. } => {
                for (name, v) in [("steer", steer), ("accel", accel)] {
                    if !(-1.0..=1.0).contains(&v) {
                        return Err(format!("{name} must lie in [-1, 1], got {v}"));
                    }
                }
            }
            ClientMessage::Mode { mode: None, record: None, .. } => {
                return Err("mode message changes nothing; give `mode` or `record`".into());
            }
            ClientMessage::Mode { .. } => {}
        }
        Ok(msg)
    }
}
