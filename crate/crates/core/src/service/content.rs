//! Participant-facing content that is data rather than code.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlQuestion {
    pub id: u32,
    pub prompt: String,
    pub answer: i64,
    pub explanation: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurveyKind {
    Text,
    Number,
    Choice { options: Vec<String> },
    Scale { min: i64, max: i64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyQuestion {
    pub id: String,
    pub prompt: String,
    #[serde(flatten)]
    pub kind: SurveyKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionContent {
    pub control_questions: Vec<ControlQuestion>,
    pub survey: Vec<SurveyQuestion>,
    /// Wrong answers allowed before the answer is shown.
    pub max_attempts: u32,
}

impl Default for SessionContent {
    fn default() -> Self {
        let q = |id, prompt: &str, answer, explanation: &str| ControlQuestion {
            id,
            prompt: prompt.into(),
            answer,
            explanation: explanation.into(),
        };
        let s = |id: &str, prompt: &str, kind| SurveyQuestion {
            id: id.into(),
            prompt: prompt.into(),
            kind,
        };
        SessionContent {
            control_questions: vec![
                q(
                    1,
                    "Both firms set a price of 2. How many ECU do you earn this round?",
                    60,
                    "Equal prices split the 60 buyers, so you sell 30 units at 2 ECU.",
                ),
                q(
                    2,
                    "You set 4 and the other firm sets 5. How many ECU do you earn this round?",
                    240,
                    "The cheaper firm serves all 60 buyers: 60 units at 4 ECU.",
                ),
                q(
                    3,
                    "You set 3 and the other firm sets 1. How many ECU do you earn this round?",
                    0,
                    "Every buyer goes to the cheaper firm, so you sell nothing.",
                ),
            ],
            survey: vec![
                s("age", "Your age in years", SurveyKind::Number),
                s(
                    "gender",
                    "Your gender",
                    SurveyKind::Choice {
                        options: vec!["female".into(), "male".into(), "diverse".into(), "prefer not to say".into()],
                    },
                ),
                s("field", "Your field of study", SurveyKind::Text),
                s(
                    "trust_algorithms",
                    "How much do you trust pricing algorithms to act in your interest? (1 = not at all, 7 = fully)",
                    SurveyKind::Scale { min: 1, max: 7 },
                ),
            ],
            max_attempts: 3,
        }
    }
}

impl SessionContent {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_attempts == 0 {
            return Err("max_attempts must be at least 1".into());
        }
        let mut ids: Vec<u32> = self.control_questions.iter().map(|q| q.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.control_questions.len() {
            return Err("control question ids must be unique".into());
        }
        Ok(())
    }
}
