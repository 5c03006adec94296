//! Expert feedback and the feedback-mode matrix used by experiments.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::SchemaDoc;

/// Which feedback channel a run accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeedbackChannel {
    Descriptive,
    Edited,
    Combined,
    None,
}

/// When review gates open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeedbackCadence {
    FirstIterationOnly,
    EveryIteration,
    Never,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeedbackModeError {
    #[error("channel {channel:?} cannot be combined with cadence {cadence:?}")]
    IllegalCombination {
        channel: FeedbackChannel,
        cadence: FeedbackCadence,
    },
    #[error("unknown feedback {what} `{value}`")]
    Unknown { what: &'static str, value: String },
}

/// A legal (channel, cadence) pair: `None` goes with `Never` and nothing else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawMode", into = "RawMode")]
pub struct FeedbackMode {
    channel: FeedbackChannel,
    cadence: FeedbackCadence,
}

#[derive(Serialize, Deserialize)]
struct RawMode {
    channel: FeedbackChannel,
    cadence: FeedbackCadence,
}

impl TryFrom<RawMode> for FeedbackMode {
    type Error = FeedbackModeError;

    fn try_from(raw: RawMode) -> Result<Self, Self::Error> {
        FeedbackMode::new(raw.channel, raw.cadence)
    }
}

impl From<FeedbackMode> for RawMode {
    fn from(mode: FeedbackMode) -> Self {
        RawMode {
            channel: mode.channel,
            cadence: mode.cadence,
        }
    }
}

impl FeedbackMode {
    pub const NONE: FeedbackMode = FeedbackMode {
        channel: FeedbackChannel::None,
        cadence: FeedbackCadence::Never,
    };

    pub fn new(channel: FeedbackChannel, cadence: FeedbackCadence) -> Result<Self, FeedbackModeError> {
        let none_channel = channel == FeedbackChannel::None;
        let never = cadence == FeedbackCadence::Never;
        if none_channel != never {
            return Err(FeedbackModeError::IllegalCombination { channel, cadence });
        }
        Ok(Self { channel, cadence })
    }

    pub fn channel(&self) -> FeedbackChannel {
        self.channel
    }

    pub fn cadence(&self) -> FeedbackCadence {
        self.cadence
    }

    /// Whether the gate opens before the `iteration`-th (1-based) document of a stage.
    pub fn gate_open(&self, iteration: u32) -> bool {
        match self.cadence {
            FeedbackCadence::EveryIteration => true,
            FeedbackCadence::FirstIterationOnly => iteration == 1,
            FeedbackCadence::Never => false,
        }
    }

    /// Checks that a submission only uses the channels this mode allows.
    pub fn check(&self, feedback: &Feedback) -> Result<(), ChannelMismatch> {
        let ok = match self.channel {
            FeedbackChannel::Descriptive => feedback.edited_schema.is_none(),
            FeedbackChannel::Edited => feedback.descriptive.is_none(),
            FeedbackChannel::Combined => true,
            FeedbackChannel::None => false,
        };
        if ok {
            Ok(())
        } else {
            Err(ChannelMismatch {
                mode: *self,
                has_descriptive: feedback.descriptive.is_some(),
                has_edited_schema: feedback.edited_schema.is_some(),
            })
        }
    }

    /// Short experiment label: `1a` .. `3b`, or `4` for the no-feedback baseline.
    pub fn experiment_label(&self) -> String {
        let number = match self.channel {
            FeedbackChannel::Descriptive => 1,
            FeedbackChannel::Edited => 2,
            FeedbackChannel::Combined => 3,
            FeedbackChannel::None => return "4".into(),
        };
        let variant = match self.cadence {
            FeedbackCadence::FirstIterationOnly => 'a',
            _ => 'b',
        };
        format!("{number}{variant}")
    }
}

impl fmt::Display for FeedbackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}/{:?}", self.channel, self.cadence)
    }
}

impl FromStr for FeedbackChannel {
    type Err = FeedbackModeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "descriptive" => Ok(Self::Descriptive),
            "edited" => Ok(Self::Edited),
            "combined" => Ok(Self::Combined),
            "none" => Ok(Self::None),
            _ => Err(FeedbackModeError::Unknown {
                what: "channel",
                value: s.into(),
            }),
        }
    }
}

impl FromStr for FeedbackCadence {
    type Err = FeedbackModeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "first" | "firstiterationonly" => Ok(Self::FirstIterationOnly),
            "every" | "everyiteration" => Ok(Self::EveryIteration),
            "never" => Ok(Self::Never),
            _ => Err(FeedbackModeError::Unknown {
                what: "cadence",
                value: s.into(),
            }),
        }
    }
}

/// The seven feedback settings, in experiment order 1a, 1b, 2a, 2b, 3a, 3b, 4.
pub fn enumerate_experiments() -> Vec<FeedbackMode> {
    use FeedbackCadence::*;
    use FeedbackChannel::*;
    let mut modes = Vec::with_capacity(7);
    for channel in [Descriptive, Edited, Combined] {
        for cadence in [FirstIterationOnly, EveryIteration] {
            modes.push(FeedbackMode { channel, cadence });
        }
    }
    modes.push(FeedbackMode::NONE);
    modes
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("feedback mode {mode} does not accept this submission (descriptive: {has_descriptive}, edited schema: {has_edited_schema})")]
pub struct ChannelMismatch {
    pub mode: FeedbackMode,
    pub has_descriptive: bool,
    pub has_edited_schema: bool,
}

/// An expert's answer at a review gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptive: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_schema: Option<SchemaDoc>,
    pub author: String,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("feedback must carry descriptive text, an edited schema, or both")]
pub struct EmptyFeedback;

impl Feedback {
    pub fn new(
        descriptive: Option<String>,
        edited_schema: Option<SchemaDoc>,
        author: impl Into<String>,
        submitted_at: DateTime<Utc>,
    ) -> Result<Self, EmptyFeedback> {
        let descriptive = descriptive.filter(|d| !d.trim().is_empty());
        if descriptive.is_none() && edited_schema.is_none() {
            return Err(EmptyFeedback);
        }
        Ok(Self {
            descriptive,
            edited_schema,
            author: author.into(),
            submitted_at,
        })
    }
}

/// The four questions experts answer at every gate.
pub const GUIDING_QUESTIONS: [&str; 4] = [
    "Should any properties be merged, and what would you name the merged property?",
    "Which properties should be grouped into a single unit, and how would you describe it?",
    "Are there any essential properties missing?",
    "Are the current property descriptions clear and comprehensive?",
];

#[cfg(test)]
mod tests {
    use super::*;

    fn at() -> DateTime<Utc> {
        DateTime::from_timestamp(0, 0).unwrap()
    }

    #[test]
    fn seven_modes_in_order() {
        let modes = enumerate_experiments();
        assert_eq!(modes.len(), 7);
        let labels: Vec<String> = modes.iter().map(FeedbackMode::experiment_label).collect();
        assert_eq!(labels, ["1a", "1b", "2a", "2b", "3a", "3b", "4"]);
        assert_eq!(modes[6], FeedbackMode::NONE);
    }

    #[test]
    fn illegal_pairs_rejected() {
        use FeedbackCadence::*;
        use FeedbackChannel::*;
        assert!(FeedbackMode::new(None, EveryIteration).is_err());
        assert!(FeedbackMode::new(Combined, Never).is_err());
        let mut legal = 0;
        for ch in [Descriptive, Edited, Combined, None] {
            for ca in [FirstIterationOnly, EveryIteration, Never] {
                legal += usize::from(FeedbackMode::new(ch, ca).is_ok());
            }
        }
        assert_eq!(legal, 7);
        let bad: Result<FeedbackMode, _> = serde_json::from_str(r#"{"channel":"None","cadence":"EveryIteration"}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn gate_cadence() {
        let first = FeedbackMode::new(FeedbackChannel::Descriptive, FeedbackCadence::FirstIterationOnly).unwrap();
        assert!(first.gate_open(1));
        assert!(!first.gate_open(2));
        assert!(!FeedbackMode::NONE.gate_open(1));
    }

    #[test]
    fn channel_checks() {
        let text = Feedback::new(Some("merge a and b".into()), None, "x", at()).unwrap();
        let edit = Feedback::new(None, Some(SchemaDoc::empty()), "x", at()).unwrap();
        let both = Feedback::new(Some("t".into()), Some(SchemaDoc::empty()), "x", at()).unwrap();
        let descriptive = FeedbackMode::new(FeedbackChannel::Descriptive, FeedbackCadence::EveryIteration).unwrap();
        let edited = FeedbackMode::new(FeedbackChannel::Edited, FeedbackCadence::EveryIteration).unwrap();
        let combined = FeedbackMode::new(FeedbackChannel::Combined, FeedbackCadence::EveryIteration).unwrap();
        assert!(descriptive.check(&text).is_ok());
        assert!(descriptive.check(&edit).is_err());
        assert!(edited.check(&text).is_err());
        assert!(edited.check(&edit).is_ok());
        assert!(combined.check(&both).is_ok());
        assert!(FeedbackMode::NONE.check(&text).is_err());
    }

    #[test]
    fn empty_feedback_rejected() {
        assert_eq!(Feedback::new(Some("  ".into()), None, "x", at()), Err(EmptyFeedback));
    }

    #[test]
    fn parse_mode_names() {
        assert_eq!("none".parse::<FeedbackChannel>().unwrap(), FeedbackChannel::None);
        assert_eq!("every-iteration".parse::<FeedbackCadence>().unwrap(), FeedbackCadence::EveryIteration);
        assert_eq!("first".parse::<FeedbackCadence>().unwrap(), FeedbackCadence::FirstIterationOnly);
    }
}
