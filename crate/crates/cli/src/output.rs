//! CSV rendering for run and sweep results.

use std::io::Write;

use uwb_pol::geo::Position;
use uwb_pol::sim::{AttemptRecord, RunReport, SweepRow};

pub const RUN_COLUMNS: [&str; 18] = [
    "scenario",
    "attempt",
    "claim_x",
    "claim_y",
    "claim_z",
    "true_x",
    "true_y",
    "true_z",
    "est_x",
    "est_y",
    "est_z",
    "error_radius_m",
    "claim_est_dist_m",
    "buffer_m",
    "likelihood",
    "verdict",
    "terminal_state",
    "seed",
];

pub const SWEEP_COLUMNS: [&str; 6] = [
    "param",
    "value",
    "reps",
    "acceptance_rate",
    "median_error_radius_m",
    "median_claim_est_dist_m",
];

/// 17 significant digits, enough to round-trip any f64.
pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(float).unwrap_or_default()
}

/// One flattened CSV row per attempt. Fields the attempt never produced
/// (no estimate after an abort, no verdict) are left empty.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputRecord {
    fields: [String; 18],
}

impl OutputRecord {
    pub fn new(report: &RunReport, rec: &AttemptRecord) -> Self {
        let xyz = |p: Position| [float(p.x), float(p.y), float(p.z)];
        let [cx, cy, cz] = xyz(rec.claim);
        let [tx, ty, tz] = xyz(rec.true_position);
        let [ex, ey, ez] = rec.estimate.map(xyz).unwrap_or_default();
        let verdict = match rec.accepted {
            Some(true) => "accepted",
            Some(false) => "rejected",
            None => "",
        };
        OutputRecord {
            fields: [
                report.scenario.clone(),
                rec.attempt.to_string(),
                cx,
                cy,
                cz,
                tx,
                ty,
                tz,
                ex,
                ey,
                ez,
                opt(rec.error_radius),
                opt(rec.claim_to_estimate_distance),
                float(rec.buffer),
                opt(rec.likelihood),
                verdict.to_string(),
                rec.terminal_state.as_str().to_string(),
                report.seed.to_string(),
            ],
        }
    }

    pub fn fields(&self) -> &[String; 18] {
        &self.fields
    }
}

pub fn write_run<W: Write>(out: W, report: &RunReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RUN_COLUMNS)?;
    for rec in &report.attempts {
        w.write_record(OutputRecord::new(report, rec).fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep<W: Write>(out: W, rows: &[SweepRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.param.as_str().to_string(),
            float(r.value),
            r.reps.to_string(),
            float(r.acceptance_rate),
            float(r.median_error_radius),
            float(r.median_claim_distance),
        ])?;
    }
    w.flush()?;
    Ok(())
}
