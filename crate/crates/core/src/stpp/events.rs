use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Rect;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl Event {
    pub fn new(t: f64, x: f64, y: f64) -> Self {
        Event { t, x, y }
    }
}

/// Time-ordered events on a spatial rectangle, observed over `[0, horizon)`.
///
/// `start` is the global time corresponding to local time 0, for sequences
/// cut out of a longer simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    events: Vec<Event>,
    domain: Rect,
    horizon: f64,
    #[serde(default)]
    start: f64,
}

impl EventSequence {
    pub fn new(events: Vec<Event>, domain: Rect, horizon: f64) -> Result<Self> {
        Self::with_start(events, domain, horizon, 0.0)
    }

    pub fn with_start(events: Vec<Event>, domain: Rect, horizon: f64, start: f64) -> Result<Self> {
        domain.validate()?;
        if !(horizon > 0.0 && horizon.is_finite()) || !start.is_finite() {
            return Err(Error::invalid(format!("invalid horizon {horizon} / start {start}")));
        }
        for (i, e) in events.iter().enumerate() {
            if !(e.t.is_finite() && e.x.is_finite() && e.y.is_finite()) {
                return Err(Error::NonFinite(format!("event {i}: {e:?}")));
            }
            if !(0.0..horizon).contains(&e.t) {
                return Err(Error::invalid(format!("event {i} at t = {} outside [0, {horizon})", e.t)));
            }
            if i > 0 && e.t <= events[i - 1].t {
                return Err(Error::invalid(format!("event times not strictly increasing at index {i}")));
            }
            if !domain.contains(e.x, e.y) {
                return Err(Error::OutsideDomain { index: i, x: e.x, y: e.y });
            }
        }
        Ok(EventSequence {
            events,
            domain,
            horizon,
            start,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events with `t_i < t`.
    pub fn before(&self, t: f64) -> &[Event] {
        &self.events[..self.events.partition_point(|e| e.t < t)]
    }

    /// Same events on a different domain (validated again).
    pub fn with_domain(&self, domain: Rect) -> Result<Self> {
        Self::with_start(self.events.clone(), domain, self.horizon, self.start)
    }
}

#[derive(Serialize, Deserialize)]
struct EventLine {
    seq: usize,
    t: f64,
    x: f64,
    y: f64,
}

/// Writes one JSON object per event: `{"seq", "t", "x", "y"}`.
pub fn write_jsonl<W: Write>(mut w: W, seqs: &[EventSequence]) -> Result<()> {
    for (s, seq) in seqs.iter().enumerate() {
        for e in seq.events() {
            let line = EventLine {
                seq: s,
                t: e.t,
                x: e.x,
                y: e.y,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Reads events grouped by their `seq` field, in order of first appearance.
pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<(usize, Vec<Event>)>> {
    let mut out: Vec<(usize, Vec<Event>)> = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: EventLine = serde_json::from_str(&line)
            .map_err(|e| Error::invalid(format!("line {}: {e}", lineno + 1)))?;
        match out.iter_mut().find(|(s, _)| *s == ev.seq) {
            Some((_, v)) => v.push(Event::new(ev.t, ev.x, ev.y)),
            None => out.push((ev.seq, vec![Event::new(ev.t, ev.x, ev.y)])),
        }
    }
    Ok(out)
}
