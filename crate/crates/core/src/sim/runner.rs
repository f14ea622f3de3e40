use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::scenario::{AttackSpec, Scenario};
use super::SimError;
use crate::geo::Position;
use crate::ledger::{AssetChaincode, AuditLog, Chaincode, Ledger, Role, DEFAULT_CHANNEL};
use crate::pol::{
    run_session, AbortReason, Injection, LocationClaim, Party, PlatformConfig, PolContract, PolSession,
    SessionParties, State,
};
use crate::uwb::{ChannelModel, FrameType, RadioNode};

pub const UAV_ID: &str = "uav-1";
pub const DECOY_UAV_ID: &str = "uav-2";
pub const PLATFORM_ID: &str = "pad-1";
/// Simulated time between consecutive attempts.
pub const ATTEMPT_SPACING_NS: u64 = 10_000_000_000;
pub const DEFAULT_REPS: usize = 100;

/// Chaincodes every simulated ledger hosts.
pub fn chaincodes() -> Vec<Arc<dyn Chaincode>> {
    vec![Arc::new(AssetChaincode), Arc::new(PolContract)]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttemptRecord {
    pub attempt: usize,
    pub claim: Position,
    pub true_position: Position,
    pub estimate: Option<Position>,
    pub error_radius: Option<f64>,
    pub claim_to_estimate_distance: Option<f64>,
    pub buffer: f64,
    pub likelihood: Option<f64>,
    pub accepted: Option<bool>,
    pub terminal_state: State,
    pub abort_reason: Option<AbortReason>,
    pub trace_len: usize,
    pub ranging_started: bool,
    pub verdict_committed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub attempts: Vec<AttemptRecord>,
    /// Fraction of attempts that ended AUTHORIZED.
    pub acceptance_rate: f64,
    /// Median over attempts that produced an estimate; NaN if none did.
    pub median_error_radius: f64,
    #[serde(skip)]
    pub audit: AuditLog,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Runs every attempt of `scenario` as an independent session on one fresh
/// ledger. The report is a pure function of the scenario and the seed.
pub fn run(scenario: &Scenario, seed_override: Option<u64>) -> Result<RunReport, SimError> {
    scenario.validate()?;
    let seed = seed_override.unwrap_or(scenario.seed);
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut radio = ChannelModel::new(scenario.channel, master.next_u64()).map_err(crate::pol::PolError::from)?;
    let mut session_rng = ChaCha8Rng::seed_from_u64(master.next_u64());

    let ledger = Ledger::with_chaincodes(seed, chaincodes());
    let enroll = |name, role| ledger.enroll_identity(name, role).map_err(crate::pol::PolError::from);
    let uav = enroll(UAV_ID, Role::Uav)?;
    let platform = enroll(PLATFORM_ID, Role::Platform)?;
    if matches!(scenario.attack, Some(AttackSpec::WrongIdentity { .. })) {
        enroll(DECOY_UAV_ID, Role::Uav)?;
    }

    let anchors = scenario.anchor_radios();
    let config = PlatformConfig {
        anchors: scenario.anchor_set()?,
        dimension: scenario.dimension,
        buffer: scenario.buffer,
        sigma_model: scenario.channel.noise_sigma,
    };

    let mut t = ATTEMPT_SPACING_NS;
    let mut records = Vec::with_capacity(scenario.attempts.len());
    for (i, attempt) in scenario.attempts.iter().enumerate() {
        let uav_radio = RadioNode::new(UAV_ID, attempt.true_position);
        let parties = SessionParties {
            ledger: &ledger,
            channel: DEFAULT_CHANNEL,
            uav: &uav,
            platform: &platform,
            uav_radio: &uav_radio,
            anchors: &anchors,
            config: &config,
        };
        let attack = scenario.attack.as_ref().filter(|a| a.target_attempt() == i);

        let mut injections = Vec::new();
        if let Some(AttackSpec::CodeReplay { .. }) = attack {
            // The attacker records a POLL from an earlier session with the
            // same pad; that session is not part of the report.
            let claim = LocationClaim::new(attempt.true_position, t);
            let earlier = PolSession::uav(UAV_ID, PLATFORM_ID, claim, &mut session_rng);
            let rep = run_session(&parties, &mut radio, earlier, t, Vec::new())?;
            let captured = rep
                .frames
                .iter()
                .find(|f| f.frame_type == FrameType::Poll && f.dst_id == UAV_ID)
                .cloned();
            injections.extend(captured.map(|frame| Injection {
                when: (Party::Uav, State::Polling),
                to: Party::Uav,
                frame,
            }));
            t = t.max(rep.end_ns) + ATTEMPT_SPACING_NS;
        }

        let mut claim_pos = attempt.claim.unwrap_or(attempt.true_position);
        if let Some(AttackSpec::GnssSpoof { offset, .. }) = attack {
            claim_pos = claim_pos.offset(offset);
        }
        let claim = LocationClaim::new(claim_pos, t);
        let mut session = PolSession::uav(UAV_ID, PLATFORM_ID, claim, &mut session_rng);
        if let Some(AttackSpec::WrongIdentity { .. }) = attack {
            session.uav_id = DECOY_UAV_ID.to_string();
        }
        let rep = run_session(&parties, &mut radio, session, t, injections)?;
        t = t.max(rep.end_ns) + ATTEMPT_SPACING_NS;

        let verdict = rep.platform.verdict.filter(|_| rep.verdict_tx.is_some());
        records.push(AttemptRecord {
            attempt: i,
            claim: claim_pos,
            true_position: attempt.true_position,
            estimate: rep.platform.estimate.as_ref().map(|e| e.position),
            error_radius: rep.platform.estimate.as_ref().map(|e| e.error_radius),
            claim_to_estimate_distance: verdict.map(|v| v.claim_to_estimate_distance),
            buffer: scenario.buffer,
            likelihood: verdict.map(|v| v.likelihood),
            accepted: verdict.map(|v| v.accepted),
            terminal_state: rep.outcome,
            abort_reason: rep.abort_reason,
            trace_len: rep.trace.len(),
            ranging_started: rep.ranging_started,
            verdict_committed: rep.verdict_tx.is_some(),
        });
    }

    let authorized = records.iter().filter(|r| r.terminal_state == State::Authorized).count();
    let mut radii: Vec<f64> = records.iter().filter_map(|r| r.error_radius).collect();
    Ok(RunReport {
        scenario: scenario.name.clone(),
        seed,
        acceptance_rate: authorized as f64 / records.len() as f64,
        median_error_radius: median(&mut radii),
        attempts: records,
        audit: ledger.audit_log(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    NoiseSigma,
    Buffer,
    /// Scales every attempt's offset from the anchor centroid.
    DistanceScale,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::NoiseSigma => "noise_sigma",
            SweepParam::Buffer => "buffer",
            SweepParam::DistanceScale => "distance_scale",
        }
    }

    /// Copy of `base` with this parameter set to `value`.
    pub fn apply(self, base: &Scenario, value: f64) -> Result<Scenario, SimError> {
        let mut s = base.clone();
        match self {
            SweepParam::NoiseSigma => s.channel.noise_sigma = value,
            SweepParam::Buffer => s.buffer = value,
            SweepParam::DistanceScale => {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(SimError::Usage(format!("distance_scale must be > 0, got {value}")));
                }
                let c = s.anchor_set()?.centroid();
                let scale = |p: Position| Position::new(c.x + value * (p.x - c.x), c.y + value * (p.y - c.y), p.z);
                for a in &mut s.attempts {
                    a.true_position = scale(a.true_position);
                    a.claim = a.claim.map(scale);
                }
            }
        }
        s.validate()?;
        Ok(s)
    }
}

impl FromStr for SweepParam {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        match s {
            "noise_sigma" => Ok(SweepParam::NoiseSigma),
            "buffer" => Ok(SweepParam::Buffer),
            "distance_scale" => Ok(SweepParam::DistanceScale),
            other => Err(SimError::Usage(format!(
                "unknown sweep parameter `{other}` (expected noise_sigma, buffer or distance_scale)"
            ))),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub reps: usize,
    pub acceptance_rate: f64,
    pub median_error_radius: f64,
    pub median_claim_distance: f64,
}

/// One aggregate row per value, each over `reps` runs seeded
/// `scenario.seed, scenario.seed + 1, ...`.
pub fn sweep(scenario: &Scenario, param: SweepParam, values: &[f64], reps: usize) -> Result<Vec<SweepRow>, SimError> {
    if values.is_empty() {
        return Err(SimError::Usage("sweep needs at least one value".into()));
    }
    if reps == 0 {
        return Err(SimError::Usage("sweep needs at least one repetition".into()));
    }
    let variants = values
        .iter()
        .map(|&v| param.apply(scenario, v))
        .collect::<Result<Vec<_>, _>>()?;
    variants
        .iter()
        .zip(values)
        .map(|(s, &value)| {
            let reports = (0..reps as u64)
                .into_par_iter()
                .map(|r| run(s, Some(s.seed.wrapping_add(r))))
                .collect::<Result<Vec<_>, _>>()?;
            let records: Vec<&AttemptRecord> = reports.iter().flat_map(|r| &r.attempts).collect();
            let authorized = records.iter().filter(|r| r.terminal_state == State::Authorized).count();
            let mut radii: Vec<f64> = records.iter().filter_map(|r| r.error_radius).collect();
            let mut dists: Vec<f64> = records.iter().filter_map(|r| r.claim_to_estimate_distance).collect();
            Ok(SweepRow {
                param,
                value,
                reps,
                acceptance_rate: authorized as f64 / records.len() as f64,
                median_error_radius: median(&mut radii),
                median_claim_distance: median(&mut dists),
            })
        })
        .collect()
}
