//! Constraint and controller events extracted from a log.

use serde::{Deserialize, Serialize};

use super::log::{LogRecord, SolveStatus};
use crate::constraints::WorkspaceConfig;

/// Slack allowed before a sample counts as a violation.
pub const EVENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    SlipViolation,
    MechViolation,
    QpInfeasible,
    FallbackUsed,
    /// The plant could not be integrated further.
    PlantFailure,
}

impl std::fmt::Display for EventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EventKind::SlipViolation => "slip-violation",
            EventKind::MechViolation => "mech-violation",
            EventKind::QpInfeasible => "qp-infeasible",
            EventKind::FallbackUsed => "fallback-used",
            EventKind::PlantFailure => "plant-failure",
        };
        f.write_str(s)
    }
}

/// One episode: consecutive offending samples are merged and reported at the
/// first of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub t: f64,
    /// Index of the first offending log record.
    pub sample: usize,
    /// Number of consecutive offending records.
    pub samples: usize,
    pub detail: String,
}

struct Episode {
    start: usize,
    count: usize,
    peak: f64,
    detail: String,
}

struct Tracker {
    kind: EventKind,
    open: Option<Episode>,
}

impl Tracker {
    fn new(kind: EventKind) -> Self {
        Self { kind, open: None }
    }

    /// `excess > 0` marks an offending sample; `describe` runs on the worst one.
    fn feed(&mut self, i: usize, excess: f64, describe: impl FnOnce() -> String, records: &[LogRecord], out: &mut Vec<Event>) {
        if excess > 0.0 {
            match &mut self.open {
                Some(ep) => {
                    ep.count += 1;
                    if excess > ep.peak {
                        ep.peak = excess;
                        ep.detail = describe();
                    }
                }
                None => {
                    self.open = Some(Episode {
                        start: i,
                        count: 1,
                        peak: excess,
                        detail: describe(),
                    })
                }
            }
        } else {
            self.close(records, out);
        }
    }

    fn close(&mut self, records: &[LogRecord], out: &mut Vec<Event>) {
        if let Some(ep) = self.open.take() {
            out.push(Event {
                kind: self.kind,
                t: records[ep.start].t,
                sample: ep.start,
                samples: ep.count,
                detail: ep.detail,
            });
        }
    }
}

/// Scan a log for slip and mechanical-box violations and controller failures.
/// Slip limits come from each record's bound columns; mechanical limits from
/// `workspace`, when given.
pub fn detect_events(records: &[LogRecord], workspace: Option<&WorkspaceConfig>, tol: f64) -> Vec<Event> {
    let mut out = Vec::new();
    let mut slip = Tracker::new(EventKind::SlipViolation);
    let mut mech = Tracker::new(EventKind::MechViolation);
    let mut infeasible = Tracker::new(EventKind::QpInfeasible);
    let mut fallback = Tracker::new(EventKind::FallbackUsed);

    for (i, r) in records.iter().enumerate() {
        let ex = r.state.x_c.abs() - r.slip_bound_x;
        let ey = r.state.y_c.abs() - r.slip_bound_y;
        slip.feed(
            i,
            ex.max(ey) - tol,
            || {
                if ex >= ey {
                    format!("|x_c| = {:.6} exceeds slip bound {:.6}", r.state.x_c.abs(), r.slip_bound_x)
                } else {
                    format!("|y_c| = {:.6} exceeds slip bound {:.6}", r.state.y_c.abs(), r.slip_bound_y)
                }
            },
            records,
            &mut out,
        );

        if let Some(ws) = workspace {
            let y_box = ws.y_c_for(r.stance);
            let mx = -ws.x_c.margin(r.state.x_c);
            let my = -y_box.margin(r.state.y_c);
            mech.feed(
                i,
                mx.max(my) - tol,
                || {
                    if mx >= my {
                        format!("x_c = {:.6} outside [{}, {}]", r.state.x_c, ws.x_c.lower, ws.x_c.upper)
                    } else {
                        format!("y_c = {:.6} outside [{}, {}]", r.state.y_c, y_box.lower, y_box.upper)
                    }
                },
                records,
                &mut out,
            );
        }

        let status = r.qp_status;
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        infeasible.feed(
            i,
            flag(status == SolveStatus::Infeasible),
            || "foot-placement QP infeasible".to_string(),
            records,
            &mut out,
        );
        fallback.feed(
            i,
            flag(status.used_fallback()),
            || format!("deadbeat fallback after {} solve", status.as_str()),
            records,
            &mut out,
        );
    }
    for tr in [&mut slip, &mut mech, &mut infeasible, &mut fallback] {
        tr.close(records, &mut out);
    }
    out.sort_by(|a, b| a.sample.cmp(&b.sample).then((a.kind as u8).cmp(&(b.kind as u8))));
    out
}
