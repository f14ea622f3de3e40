use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geo::{Anchor, AnchorSet, Dimension, Position};
use crate::pol::DEFAULT_BUFFER_M;
use crate::uwb::{check_node_id, ChannelParams, RadioNode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorSpec {
    pub id: String,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub z: f64,
}

impl AnchorSpec {
    pub fn position(&self) -> Position {
        Position::new(self.x, self.y, self.z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attempt {
    #[serde(rename = "true")]
    pub true_position: Position,
    /// Broadcast position; the true position when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim: Option<Position>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum AttackSpec {
    /// The UAV broadcasts its true position shifted by `offset`.
    #[serde(rename = "GNSS_SPOOF")]
    GnssSpoof { offset: Position, target_attempt: usize },
    /// The request names a different enrolled UAV than the one submitting it.
    #[serde(rename = "WRONG_IDENTITY")]
    WrongIdentity { target_attempt: usize },
    /// A POLL captured from an earlier session is replayed to the UAV as soon
    /// as it starts listening.
    #[serde(rename = "CODE_REPLAY")]
    CodeReplay { target_attempt: usize },
}

impl AttackSpec {
    pub fn target_attempt(&self) -> usize {
        match self {
            AttackSpec::GnssSpoof { target_attempt, .. }
            | AttackSpec::WrongIdentity { target_attempt }
            | AttackSpec::CodeReplay { target_attempt } => *target_attempt,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AttackSpec::GnssSpoof { .. } => "GNSS_SPOOF",
            AttackSpec::WrongIdentity { .. } => "WRONG_IDENTITY",
            AttackSpec::CodeReplay { .. } => "CODE_REPLAY",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub dimension: Dimension,
    pub anchors: Vec<AnchorSpec>,
    pub attempts: Vec<Attempt>,
    pub channel: ChannelParams,
    pub buffer: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackSpec>,
    pub seed: u64,
}

pub const PRESETS: [&str; 2] = ["fig4", "fig5"];

fn planar_anchors(coords: &[(f64, f64)]) -> Vec<AnchorSpec> {
    coords
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| AnchorSpec {
            id: format!("A{}", i + 1),
            x,
            y,
            z: 0.0,
        })
        .collect()
}

fn honest(coords: &[(f64, f64)]) -> Vec<Attempt> {
    coords
        .iter()
        .map(|&(x, y)| Attempt {
            true_position: Position::planar(x, y),
            claim: None,
        })
        .collect()
}

impl Scenario {
    /// Built-in scenarios: the short-range (`fig4`) and long-range (`fig5`)
    /// landing-pad layouts.
    pub fn preset(name: &str) -> Option<Scenario> {
        let (anchors, attempts) = match name {
            "fig4" => (
                planar_anchors(&[(2.5, 0.6), (2.5, 1.15), (2.85, 1.15), (2.85, 0.6)]),
                honest(&[(3.95, 2.705), (3.126, 3.035)]),
            ),
            "fig5" => (
                planar_anchors(&[(1.26, 0.518), (1.26, -0.0393), (0.918, -0.0393), (0.918, 0.518)]),
                honest(&[(4.2, 12.745), (4.931, 13.982)]),
            ),
            _ => return None,
        };
        Some(Scenario {
            name: name.to_string(),
            dimension: Dimension::Two,
            anchors,
            attempts,
            channel: ChannelParams::default(),
            buffer: DEFAULT_BUFFER_M,
            attack: None,
            seed: 1,
        })
    }

    /// Parses and validates scenario JSON.
    pub fn from_json(text: &str) -> Result<Scenario, SimError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            SimError::Parse {
                path: if path == "." { String::new() } else { path },
                message: e.into_inner().to_string(),
            }
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    pub fn anchor_set(&self) -> Result<AnchorSet, SimError> {
        let anchors = self.anchors.iter().map(|a| Anchor::new(a.id.clone(), a.position())).collect();
        AnchorSet::with_dimension(anchors, self.dimension).map_err(|e| SimError::Invalid(vec![format!("anchors: {e}")]))
    }

    pub fn anchor_radios(&self) -> Vec<RadioNode> {
        self.anchors.iter().map(|a| RadioNode::new(a.id.clone(), a.position())).collect()
    }

    /// Checks every invariant and reports all violations with field paths.
    pub fn validate(&self) -> Result<(), SimError> {
        let mut errs = Vec::new();
        if self.name.trim().is_empty() {
            errs.push("name: must not be empty".to_string());
        }
        for (i, a) in self.anchors.iter().enumerate() {
            if let Err(e) = check_node_id(&a.id) {
                errs.push(format!("anchors[{i}].id: {e}"));
            }
            if !a.position().is_finite() {
                errs.push(format!("anchors[{i}]: coordinates must be finite"));
            }
        }
        if errs.is_empty() {
            if let Err(SimError::Invalid(e)) = self.anchor_set() {
                errs.extend(e);
            }
        }
        if self.attempts.is_empty() {
            errs.push("attempts: must not be empty".to_string());
        }
        for (i, a) in self.attempts.iter().enumerate() {
            if !a.true_position.is_finite() {
                errs.push(format!("attempts[{i}].true: coordinates must be finite"));
            }
            if a.claim.is_some_and(|c| !c.is_finite()) {
                errs.push(format!("attempts[{i}].claim: coordinates must be finite"));
            }
        }
        if let Err((field, msg)) = self.channel.check() {
            errs.push(format!("channel.{field}: {msg}"));
        }
        if !(self.buffer > 0.0 && self.buffer.is_finite()) {
            errs.push(format!("buffer: must be finite and > 0, got {}", self.buffer));
        }
        if let Some(attack) = &self.attack {
            let t = attack.target_attempt();
            if t >= self.attempts.len() {
                errs.push(format!(
                    "attack.target_attempt: {t} is out of range for {} attempts",
                    self.attempts.len()
                ));
            }
            if let AttackSpec::GnssSpoof { offset, .. } = attack {
                if !offset.is_finite() {
                    errs.push("attack.offset: coordinates must be finite".to_string());
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SimError::Invalid(errs))
        }
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, SimError> {
    let text = std::fs::read_to_string(path).map_err(|e| SimError::Load {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Scenario::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let s = Scenario::preset(name).unwrap();
            s.validate().unwrap();
            assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), s);
        }
        assert!(Scenario::preset("fig6").is_none());
    }

    #[test]
    fn fig4_coordinates() {
        let s = Scenario::preset("fig4").unwrap();
        let a: Vec<(f64, f64)> = s.anchors.iter().map(|a| (a.x, a.y)).collect();
        assert_eq!(a, [(2.5, 0.6), (2.5, 1.15), (2.85, 1.15), (2.85, 0.6)]);
        assert_eq!(s.attempts[1].true_position, Position::planar(3.126, 3.035));
        assert_eq!(s.buffer, 1.0);
    }

    #[test]
    fn two_anchors_in_2d_cite_the_anchor_invariant() {
        let mut s = Scenario::preset("fig4").unwrap();
        s.anchors.truncate(2);
        let err = Scenario::from_json(&s.to_json()).unwrap_err().to_string();
        assert!(err.contains("anchors"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_path() {
        let text = Scenario::preset("fig4")
            .unwrap()
            .to_json()
            .replacen("\"noise_sigma\"", "\"noise\": 1, \"noise_sigma\"", 1);
        match Scenario::from_json(&text) {
            Err(SimError::Parse { path, message }) => {
                assert_eq!(path, "channel.noise");
                assert!(message.contains("noise"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_violations_are_reported() {
        let mut s = Scenario::preset("fig4").unwrap();
        s.buffer = 0.0;
        s.channel.loss_prob = 1.5;
        s.attack = Some(AttackSpec::CodeReplay { target_attempt: 5 });
        let SimError::Invalid(errs) = s.validate().unwrap_err() else {
            panic!()
        };
        assert_eq!(errs.len(), 3, "{errs:?}");
        assert!(errs.iter().any(|e| e.starts_with("buffer")));
        assert!(errs.iter().any(|e| e.starts_with("channel.loss_prob")));
        assert!(errs.iter().any(|e| e.starts_with("attack.target_attempt")));
    }

    #[test]
    fn attack_json_shapes() {
        let a: AttackSpec =
            serde_json::from_str(r#"{"kind":"GNSS_SPOOF","offset":{"x":2,"y":0,"z":0},"target_attempt":0}"#).unwrap();
        assert_eq!(
            a,
            AttackSpec::GnssSpoof {
                offset: Position::planar(2.0, 0.0),
                target_attempt: 0
            }
        );
        assert!(serde_json::from_str::<AttackSpec>(r#"{"kind":"CODE_REPLAY","target_attempt":0,"x":1}"#).is_err());
        assert!(serde_json::from_str::<AttackSpec>(r#"{"kind":"JAM","target_attempt":0}"#).is_err());
    }
}
