//! Run reports as newline-delimited JSON.
//!
//! Every line is one object whose first key, `record`, is either `"step"` or
//! `"metrics"`. Step records carry, in order: `step`, `timestamp`, `x`, `y`,
//! `z`, `yaw`, `pitch`, `roll`, `pos_std`, `ess`, `events`, `error`. The single
//! metrics record at the end carries `a`, `b`, `c`, `d`, `e`, `resets` and
//! `post_loc_error`. Angles are radians; missing values are `null`.

use serde::{Deserialize, Serialize};

use super::monitor::{compute_metrics, RunMetrics};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Resample,
    S2mIssued,
    S2mAccepted,
    S2mRejected,
    /// A finished match could not be propagated because relatives were missing.
    S2mDropped,
    Reset,
    Localized,
    /// The scan was empty and the filter cycle did not run.
    ScanSkipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub timestamp: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub pos_std: f64,
    pub ess: f64,
    pub events: Vec<Event>,
    /// Distance from the mean position to truth, when truth is known.
    pub error: Option<f64>,
}

impl StepRecord {
    pub fn has(&self, e: Event) -> bool {
        self.events.contains(&e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Step(StepRecord),
    Metrics(RunMetrics),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    pub steps: Vec<StepRecord>,
    pub metrics: RunMetrics,
}

impl RunReport {
    /// Builds the report, deriving the metrics from the trace.
    pub fn from_steps(steps: Vec<StepRecord>) -> Self {
        let metrics = metrics_from_trace(&steps);
        Self { steps, metrics }
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(&Line::Step(s.clone())).expect("finite records serialize"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&Line::Metrics(self.metrics)).expect("metrics serialize"));
        out.push('\n');
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Self> {
        let mut report = RunReport::default();
        let mut seen_metrics = false;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line =
                serde_json::from_str(line).map_err(|e| Error::format(format!("line {}", i + 1), e.to_string()))?;
            match parsed {
                Line::Step(s) => report.steps.push(s),
                Line::Metrics(m) => {
                    report.metrics = m;
                    seen_metrics = true;
                }
            }
        }
        if !seen_metrics {
            return Err(Error::format("end of report", "no metrics record"));
        }
        Ok(report)
    }
}

/// Recomputes metrics from the per-step events and errors alone.
pub fn metrics_from_trace(steps: &[StepRecord]) -> RunMetrics {
    let loc: Vec<bool> = steps.iter().map(|s| s.has(Event::Localized)).collect();
    let reset: Vec<bool> = steps.iter().map(|s| s.has(Event::Reset)).collect();
    let errors: Option<Vec<f64>> = steps.iter().map(|s| s.error).collect();
    compute_metrics(&loc, &reset, errors.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: u64, events: Vec<Event>) -> StepRecord {
        StepRecord {
            step,
            timestamp: step as f64 * 0.1,
            x: 1.5,
            y: -2.0,
            z: 0.25,
            yaw: 0.1,
            pitch: 0.0,
            roll: 0.0,
            pos_std: 3.0,
            ess: 12.5,
            events,
            error: Some(0.5),
        }
    }

    #[test]
    fn ndjson_round_trip_and_layout() {
        let report = RunReport::from_steps(vec![
            record(0, vec![Event::S2mIssued]),
            record(1, vec![Event::Resample, Event::Localized]),
        ]);
        let text = report.to_ndjson();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with(r#"{"record":"step","step":0,"timestamp":0.0,"x":1.5"#));
        assert!(lines[1].contains(r#""events":["resample","localized"]"#));
        assert!(lines[2].starts_with(r#"{"record":"metrics","a":2,"b":2"#));
        assert_eq!(RunReport::from_ndjson(&text).unwrap(), report);
    }

    #[test]
    fn malformed_reports() {
        assert!(RunReport::from_ndjson("").is_err());
        match RunReport::from_ndjson("{\"record\":\"metrics\"}\n{oops}\n") {
            Err(Error::Format { position, .. }) => assert_eq!(position, "line 2"),
            other => panic!("{other:?}"),
        }
    }
}
