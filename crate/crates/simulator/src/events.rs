//! Event log and per-step event detection.

use serde::{Deserialize, Serialize};
use stvs_core::devices::ModeKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    FaultOn,
    FaultClear,
    ModeSwitch,
    CurrentLimit,
    DisconnectRisk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub subject: String,
    pub detail: String,
}

/// Events in nondecreasing time order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn push(&mut self, e: Event) {
        if let Some(last) = self.events.last() {
            assert!(e.t >= last.t, "event at {} logged after {}", e.t, last.t);
        }
        self.events.push(e);
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// Mode sequence of one device, starting from `NORMAL`.
    pub fn mode_timeline(&self, device: &str) -> Vec<ModeKind> {
        let mut out = vec![ModeKind::Normal];
        for e in self.of_kind(EventKind::ModeSwitch).filter(|e| e.subject == device) {
            let to = e.detail.split(" -> ").nth(1).and_then(|s| s.split(|c: char| !c.is_ascii_alphabetic()).next());
            out.push(match to {
                Some("FRT") => ModeKind::Frt,
                Some("RECOVERY") => ModeKind::Recovery,
                _ => ModeKind::Normal,
            });
        }
        out
    }
}

/// What event detection needs from one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSample {
    pub t: f64,
    pub fault_active: bool,
    pub modes: Vec<ModeKind>,
    pub i_mag: Vec<f64>,
    /// Terminal voltage magnitude per device.
    pub v_term: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventContext {
    pub devices: Vec<String>,
    pub fault: Option<String>,
    pub i_max: Vec<f64>,
    pub v_lvrt: f64,
    pub v_hvrt: f64,
}

/// Slack above `i_max` before a current-limit event is reported.
pub const CURRENT_EVENT_TOL: f64 = 1e-6;

fn outside(v: f64, ctx: &EventContext) -> Option<&'static str> {
    if v < ctx.v_lvrt {
        Some("below")
    } else if v > ctx.v_hvrt {
        Some("above")
    } else {
        None
    }
}

/// Everything that happened between two consecutive steps, stamped with the
/// later step's time.
pub fn detect_events(prev: &StepSample, curr: &StepSample, ctx: &EventContext) -> Vec<Event> {
    let mut out = Vec::new();
    let fault = ctx.fault.clone().unwrap_or_default();
    if curr.fault_active && !prev.fault_active {
        out.push(Event {
            t: curr.t,
            kind: EventKind::FaultOn,
            subject: fault.clone(),
            detail: "fault shunt applied".into(),
        });
    }
    if prev.fault_active && !curr.fault_active {
        out.push(Event {
            t: curr.t,
            kind: EventKind::FaultClear,
            subject: fault,
            detail: "fault shunt removed".into(),
        });
    }
    for (k, id) in ctx.devices.iter().enumerate() {
        if prev.modes[k] != curr.modes[k] {
            out.push(Event {
                t: curr.t,
                kind: EventKind::ModeSwitch,
                subject: id.clone(),
                detail: format!("{} -> {}", prev.modes[k], curr.modes[k]),
            });
        }
        let lim = ctx.i_max[k] + CURRENT_EVENT_TOL;
        if curr.i_mag[k] > lim && prev.i_mag[k] <= lim {
            out.push(Event {
                t: curr.t,
                kind: EventKind::CurrentLimit,
                subject: id.clone(),
                detail: format!("|I| = {:.4} above i_max = {}", curr.i_mag[k], ctx.i_max[k]),
            });
        }
        let (a, b) = (outside(prev.v_term[k], ctx), outside(curr.v_term[k], ctx));
        if let Some(side) = b {
            if a != b {
                out.push(Event {
                    t: curr.t,
                    kind: EventKind::DisconnectRisk,
                    subject: id.clone(),
                    detail: format!("terminal |V| = {:.4} {side} ride-through limit", curr.v_term[k]),
                });
            }
        }
    }
    out
}
