//! Scripted seats that play a whole session through the participant
//! protocol, exactly as a browser client would.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::runtime::{Action, Phase, SessionRuntime};
use super::{now_ms, Result, ServiceError};
use crate::session::{derive_seed, SessionConfig};
use crate::strategy::{bot_action, BotSpec};

/// Adoption choice per supergame: one flag for all, or a list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AdoptionScript {
    Always(bool),
    Schedule(Vec<bool>),
}

impl AdoptionScript {
    pub fn choice(&self, supergame: u32) -> bool {
        match self {
            AdoptionScript::Always(b) => *b,
            AdoptionScript::Schedule(v) => v.get(supergame as usize - 1).copied().unwrap_or(false),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BotSeat {
    /// Prices in trials and whenever the seat sets its own price.
    pub pricing: BotSpec,
    #[serde(default = "never")]
    pub adopt: AdoptionScript,
    /// Recommendation adopters take the prefilled price instead of their
    /// own rule.
    #[serde(default = "yes")]
    pub follow_recommendation: bool,
    #[serde(default = "half")]
    pub belief_percent: u8,
    #[serde(default)]
    pub label: Option<String>,
}

fn never() -> AdoptionScript {
    AdoptionScript::Always(false)
}

fn yes() -> bool {
    true
}

fn half() -> u8 {
    50
}

impl BotSeat {
    pub fn new(pricing: BotSpec, adopt: bool) -> Self {
        BotSeat {
            pricing,
            adopt: AdoptionScript::Always(adopt),
            follow_recommendation: true,
            belief_percent: 50,
            label: None,
        }
    }
}

fn seat_rng(config: &SessionConfig, seat: usize, bot: &BotSpec) -> ChaCha8Rng {
    let seed = match bot {
        BotSpec::RandomUniform { seed } => *seed,
        _ => derive_seed(config.seed, &[0xB07, seat as u64]),
    };
    ChaCha8Rng::seed_from_u64(seed)
}

fn decide(rt: &SessionRuntime, participant: u32, seat: &BotSeat, rng: &mut ChaCha8Rng) -> Result<Option<Action>> {
    let view = rt.view(participant)?;
    if view.waiting {
        return Ok(None);
    }
    let params = rt.session().params();
    Ok(Some(match view.phase {
        Phase::Lobby | Phase::Payout => return Ok(None),
        Phase::Instructions | Phase::Feedback => Action::Continue,
        Phase::ControlQuestions => {
            let q = view.control_question.expect("question shown in this phase");
            let answer = rt
                .content()
                .control_questions
                .iter()
                .find(|c| c.id == q.id)
                .map_or(0, |c| c.answer);
            Action::Answer { question: q.id, answer }
        }
        Phase::Trial => Action::Price {
            price: bot_action(&seat.pricing, rt.session().trial_state(participant), params, rng).ecu(),
            round: None,
        },
        Phase::Adoption => Action::Adopt {
            adopt: seat.adopt.choice(view.supergame.expect("supergame set")),
        },
        Phase::Pricing => {
            let input = view.price_input.expect("price input shown while not waiting");
            let round = view.round;
            if !input.editable {
                Action::Confirm { round }
            } else if let (true, true, Some(p)) = (input.recommendation, seat.follow_recommendation, input.prefilled) {
                Action::Price { price: p.into(), round }
            } else {
                let m = rt.session().match_of(participant, view.supergame.expect("supergame set"))?;
                let side = m.side_of(participant).expect("seated");
                Action::Price {
                    price: bot_action(&seat.pricing, m.state(side), params, rng).ecu(),
                    round,
                }
            }
        }
        Phase::Belief => Action::Belief {
            percent: seat.belief_percent.min(100).into(),
        },
        Phase::Survey => Action::Survey {
            answers: Default::default(),
        },
    }))
}

/// Seats the roster and plays until every payout is issued.
pub(crate) fn drive(rt: &mut SessionRuntime, roster: &[BotSeat]) -> Result<()> {
    let cfg = rt.session().config.clone();
    if roster.len() != cfg.participants as usize {
        return Err(ServiceError::Invalid(format!(
            "roster has {} seats for {} participants",
            roster.len(),
            cfg.participants
        )));
    }
    for seat in roster {
        seat.pricing
            .validate(&cfg.market)
            .map_err(|e| ServiceError::Invalid(e.to_string()))?;
    }
    let first = rt.joined();
    for (i, seat) in roster.iter().enumerate().skip(first as usize) {
        let token = format!("{}-bot-{}", rt.id(), i + 1);
        rt.join(token, seat.label.clone(), now_ms())?;
    }
    let mut rngs: Vec<ChaCha8Rng> = roster.iter().enumerate().map(|(i, s)| seat_rng(&cfg, i, &s.pricing)).collect();
    loop {
        let mut progressed = false;
        for (i, seat) in roster.iter().enumerate() {
            let p = i as u32 + 1;
            // Each seat keeps acting until it has to wait for someone else.
            while let Some(action) = decide(rt, p, seat, &mut rngs[i])? {
                rt.submit(p, action, None, now_ms())?;
                progressed = true;
            }
        }
        if rt.is_complete() && (1..=cfg.participants).all(|p| rt.phase(p) == Some(Phase::Payout)) {
            return Ok(());
        }
        if !progressed {
            return Err(ServiceError::Conflict("bot session stalled".into()));
        }
    }
}

/// Plays a full bot session in memory and returns its runtime.
pub fn run_bot_runtime(config: SessionConfig, content: Option<super::SessionContent>, roster: &[BotSeat]) -> Result<SessionRuntime> {
    let id = format!("bots-{:016x}", config.seed);
    let mut rt = SessionRuntime::create(id, config, content.unwrap_or_default(), None, now_ms())?;
    drive(&mut rt, roster)?;
    Ok(rt)
}
