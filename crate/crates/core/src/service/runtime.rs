//! Event-sourced session runtime.
//!
//! A [`SessionRuntime`] is a fold over its event log. Live requests are
//! turned into events, applied, and only then appended, so a rejected
//! action leaves no trace. Replaying the stored log through the same
//! `apply` rebuilds every view and payout exactly.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::content::{SessionContent, SurveyQuestion};
use super::ServiceError;
use crate::market::{Ecu, Price};
use crate::session::{build_session, ParticipantId, Payout, Session, SessionConfig, Treatment};
use crate::strategy::{wsls_action, Side};

type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Lobby,
    Instructions,
    ControlQuestions,
    Trial,
    Adoption,
    Pricing,
    Feedback,
    Belief,
    Survey,
    Payout,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    /// Leave an informational screen.
    Continue,
    Answer {
        question: u32,
        answer: i64,
    },
    /// A price for a trial or paid round. `round`, when given, lets a retry
    /// of an already resolved round be recognized.
    Price {
        price: i64,
        #[serde(default)]
        round: Option<u32>,
    },
    /// An Outsourcing adopter lets the algorithm's price stand.
    Confirm {
        #[serde(default)]
        round: Option<u32>,
    },
    Adopt {
        adopt: bool,
    },
    Belief {
        percent: i64,
    },
    Survey {
        answers: BTreeMap<String, String>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "participant", rename_all = "snake_case")]
pub enum Actor {
    Participant(ParticipantId),
    Admin,
    System,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Created {
        session: String,
        config: SessionConfig,
        content: SessionContent,
        #[serde(default)]
        client_token: Option<String>,
    },
    Joined {
        participant: ParticipantId,
        token: String,
        #[serde(default)]
        label: Option<String>,
    },
    Action {
        participant: ParticipantId,
        action: Action,
        #[serde(default)]
        idempotency_key: Option<String>,
    },
    AdminAdvance {
        participant: ParticipantId,
    },
    PayoutsIssued {
        payouts: Vec<Payout>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub actor: Actor,
    pub payload: Payload,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionView {
    pub id: u32,
    pub prompt: String,
    pub attempts_left: u32,
}

/// The correct answer shown after too many wrong attempts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reveal {
    pub question: u32,
    pub answer: i64,
    pub explanation: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceInput {
    pub editable: bool,
    pub prefilled: Option<u8>,
    /// The prefilled value is the algorithm's recommendation.
    pub recommendation: bool,
    pub min: u8,
    pub max: u8,
}

/// Prices and own profit of the last completed round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundFeedback {
    pub round: u32,
    pub own_price: u8,
    pub opponent_price: u8,
    pub own_profit: Ecu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialProgress {
    pub trial: u32,
    pub trials: u32,
    pub round: u32,
}

/// Everything one participant may see right now.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientView {
    pub session: String,
    pub participant: ParticipantId,
    pub label: Option<String>,
    pub treatment: Treatment,
    pub phase: Phase,
    pub seq: u64,
    pub n_supergames: u32,
    pub supergame: Option<u32>,
    pub round: Option<u32>,
    pub trial: Option<TrialProgress>,
    pub control_question: Option<QuestionView>,
    pub reveal: Option<Reveal>,
    pub price_input: Option<PriceInput>,
    pub feedback: Option<RoundFeedback>,
    pub own_adoption: Option<bool>,
    pub waiting: bool,
    pub belief_prize: Option<Ecu>,
    pub survey: Vec<SurveyQuestion>,
    pub payout: Option<Payout>,
}

#[derive(Clone, Debug, PartialEq)]
struct Seat {
    token: String,
    label: Option<String>,
    phase: Phase,
    question: usize,
    wrong: u32,
    reveal: Option<Reveal>,
    supergame: u32,
    feedback: Option<RoundFeedback>,
    survey: Option<BTreeMap<String, String>>,
}

/// Inputs waiting for the other side of a market: `Some(None)` is an
/// Outsourcing confirmation.
type Pending = [Option<Option<Price>>; 2];

#[derive(Clone, Debug, PartialEq)]
pub struct SessionRuntime {
    id: String,
    client_token: Option<String>,
    content: SessionContent,
    session: Session,
    seats: Vec<Seat>,
    pending: BTreeMap<(u32, u32), Pending>,
    acks: HashMap<(ParticipantId, String), ClientView>,
    events: Vec<SessionEvent>,
    settled: bool,
}

impl SessionRuntime {
    /// Starts a runtime from its creation event.
    pub fn create(
        id: String,
        config: SessionConfig,
        content: SessionContent,
        client_token: Option<String>,
        timestamp_ms: u64,
    ) -> Result<Self> {
        let event = SessionEvent {
            seq: 1,
            timestamp_ms,
            actor: Actor::Admin,
            payload: Payload::Created {
                session: id,
                config,
                content,
                client_token,
            },
        };
        Self::from_created(event)
    }

    fn from_created(event: SessionEvent) -> Result<Self> {
        let Payload::Created {
            session: id,
            config,
            content,
            client_token,
        } = &event.payload
        else {
            return Err(ServiceError::Replay("first event must create the session".into()));
        };
        if event.seq != 1 {
            return Err(ServiceError::Replay(format!("creation event has seq {}", event.seq)));
        }
        config.validate().map_err(ServiceError::Config)?;
        content.validate().map_err(ServiceError::Invalid)?;
        let session = build_session(config.clone())?.with_id(id.clone());
        Ok(SessionRuntime {
            id: id.clone(),
            client_token: client_token.clone(),
            content: content.clone(),
            session,
            seats: Vec::new(),
            pending: BTreeMap::new(),
            acks: HashMap::new(),
            events: vec![event],
            settled: false,
        })
    }

    /// Rebuilds a runtime by folding a stored log.
    pub fn replay(events: impl IntoIterator<Item = SessionEvent>) -> Result<Self> {
        let mut it = events.into_iter();
        let first = it.next().ok_or_else(|| ServiceError::Replay("empty event log".into()))?;
        let mut rt = Self::from_created(first)?;
        for e in it {
            if e.seq != rt.next_seq() {
                return Err(ServiceError::Replay(format!("expected seq {}, found {}", rt.next_seq(), e.seq)));
            }
            rt.apply(&e).map_err(|err| ServiceError::Replay(format!("event {}: {err}", e.seq)))?;
            rt.events.push(e);
        }
        Ok(rt)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn client_token(&self) -> Option<&str> {
        self.client_token.as_deref()
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn content(&self) -> &SessionContent {
        &self.content
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn next_seq(&self) -> u64 {
        self.events.len() as u64 + 1
    }

    pub fn joined(&self) -> u32 {
        self.seats.len() as u32
    }

    pub fn is_full(&self) -> bool {
        self.joined() >= self.session.config.participants
    }

    pub fn is_complete(&self) -> bool {
        self.settled
    }

    pub fn tokens(&self) -> impl Iterator<Item = (ParticipantId, &str)> {
        self.seats.iter().enumerate().map(|(i, s)| (i as u32 + 1, s.token.as_str()))
    }

    pub fn participant_by_label(&self, label: &str) -> Option<ParticipantId> {
        self.seats
            .iter()
            .position(|s| s.label.as_deref() == Some(label))
            .map(|i| i as u32 + 1)
    }

    pub fn token_of(&self, participant: ParticipantId) -> Option<&str> {
        self.seat_opt(participant).map(|s| s.token.as_str())
    }

    fn seat_opt(&self, participant: ParticipantId) -> Option<&Seat> {
        participant.checked_sub(1).and_then(|i| self.seats.get(i as usize))
    }

    fn seat(&self, participant: ParticipantId) -> Result<&Seat> {
        self.seat_opt(participant)
            .ok_or_else(|| ServiceError::NotFound(format!("participant {participant}")))
    }

    fn seat_mut(&mut self, participant: ParticipantId) -> &mut Seat {
        &mut self.seats[participant as usize - 1]
    }

    /// Appends an event after applying it; nothing changes on error.
    fn commit(&mut self, actor: Actor, payload: Payload, timestamp_ms: u64) -> Result<()> {
        let event = SessionEvent {
            seq: self.next_seq(),
            timestamp_ms,
            actor,
            payload,
        };
        self.apply(&event)?;
        self.events.push(event);
        if !self.settled && self.session.is_complete() {
            let mut probe = self.session.clone();
            let payouts = probe.settle()?.values().cloned().collect();
            let event = SessionEvent {
                seq: self.next_seq(),
                timestamp_ms,
                actor: Actor::System,
                payload: Payload::PayoutsIssued { payouts },
            };
            self.apply(&event)?;
            self.events.push(event);
        }
        Ok(())
    }

    /// Seats a new participant and returns its index.
    pub fn join(&mut self, token: String, label: Option<String>, timestamp_ms: u64) -> Result<ParticipantId> {
        if self.is_full() {
            return Err(ServiceError::Conflict("session is full".into()));
        }
        let participant = self.joined() + 1;
        self.commit(
            Actor::Participant(participant),
            Payload::Joined {
                participant,
                token,
                label,
            },
            timestamp_ms,
        )?;
        Ok(participant)
    }

    /// Applies a participant action and returns the acknowledged view.
    pub fn submit(&mut self, participant: ParticipantId, action: Action, idempotency_key: Option<String>, timestamp_ms: u64) -> Result<ClientView> {
        self.seat(participant)?;
        if let Some(key) = &idempotency_key {
            if let Some(ack) = self.acks.get(&(participant, key.clone())) {
                return Ok(ack.clone());
            }
        }
        if self.is_retry(participant, &action)? {
            return self.view(participant);
        }
        self.commit(
            Actor::Participant(participant),
            Payload::Action {
                participant,
                action,
                idempotency_key: idempotency_key.clone(),
            },
            timestamp_ms,
        )?;
        match idempotency_key {
            Some(key) => Ok(self.acks[&(participant, key)].clone()),
            None => self.view(participant),
        }
    }

    /// Makes the default move for a participant who is stuck.
    pub fn admin_advance(&mut self, participant: ParticipantId, timestamp_ms: u64) -> Result<ClientView> {
        self.seat(participant)?;
        self.commit(Actor::Admin, Payload::AdminAdvance { participant }, timestamp_ms)?;
        self.view(participant)
    }

    /// A repeat of a price already on file for a round is answered with
    /// the current view instead of an error.
    fn is_retry(&self, participant: ParticipantId, action: &Action) -> Result<bool> {
        let seat = self.seat(participant)?;
        let (price, round) = match action {
            Action::Price { price, round } => (Some(*price), *round),
            Action::Confirm { round } => (None, *round),
            _ => return Ok(false),
        };
        if seat.phase != Phase::Pricing && seat.phase != Phase::Feedback {
            return Ok(false);
        }
        let m = self.session.match_of(participant, seat.supergame)?;
        let side = m.side_of(participant).expect("seated");
        if let Some(r) = round {
            if r < m.next_round() {
                return Ok(true);
            }
        }
        if let Some(pending) = self.pending.get(&(m.supergame, m.market)) {
            if let Some(prev) = pending[side.index()] {
                let same = match (prev, price) {
                    (None, None) => true,
                    (Some(p), Some(q)) => i64::from(p.value()) == q,
                    _ => false,
                };
                return Ok(same);
            }
        }
        Ok(false)
    }

    fn apply(&mut self, event: &SessionEvent) -> Result<()> {
        match &event.payload {
            Payload::Created { .. } => Err(ServiceError::Replay("session created twice".into())),
            Payload::Joined {
                participant,
                token,
                label,
            } => {
                if *participant != self.joined() + 1 || self.is_full() {
                    return Err(ServiceError::Conflict(format!("seat {participant} is not open")));
                }
                self.seats.push(Seat {
                    token: token.clone(),
                    label: label.clone(),
                    phase: Phase::Lobby,
                    question: 0,
                    wrong: 0,
                    reveal: None,
                    supergame: 0,
                    feedback: None,
                    survey: None,
                });
                if self.is_full() {
                    for s in &mut self.seats {
                        s.phase = Phase::Instructions;
                    }
                }
                Ok(())
            }
            Payload::Action {
                participant,
                action,
                idempotency_key,
            } => {
                self.seat(*participant)?;
                self.apply_action(*participant, action)?;
                if let Some(key) = idempotency_key {
                    let view = self.view_at(*participant, event.seq)?;
                    self.acks.insert((*participant, key.clone()), view);
                }
                Ok(())
            }
            Payload::AdminAdvance { participant } => {
                let action = self.default_action(*participant)?;
                self.apply_action(*participant, &action)
            }
            Payload::PayoutsIssued { payouts } => {
                if self.settled {
                    return Err(ServiceError::Replay("payouts issued twice".into()));
                }
                let computed: Vec<Payout> = self.session.settle()?.values().cloned().collect();
                if &computed != payouts {
                    return Err(ServiceError::Replay("logged payouts differ from the recomputed ones".into()));
                }
                self.settled = true;
                Ok(())
            }
        }
    }

    fn illegal<T>(&self, participant: ParticipantId, what: &str) -> Result<T> {
        let phase = self.seats[participant as usize - 1].phase;
        Err(ServiceError::IllegalPhase(format!("{what} is not allowed in phase {phase:?}")))
    }

    fn price(&self, value: i64) -> Result<Price> {
        self.session
            .params()
            .price(value)
            .map_err(|e| ServiceError::Invalid(e.to_string()))
    }

    fn apply_action(&mut self, participant: ParticipantId, action: &Action) -> Result<()> {
        let phase = self.seat(participant)?.phase;
        let algo = self.session.treatment().has_algorithm();
        match (phase, action) {
            (Phase::Instructions, Action::Continue) => {
                self.enter_questions(participant);
                Ok(())
            }
            (Phase::ControlQuestions, Action::Answer { question, answer }) => {
                let seat = self.seat(participant)?;
                let q = &self.content.control_questions[seat.question];
                if q.id != *question {
                    return Err(ServiceError::Invalid(format!("the current question is {}, not {question}", q.id)));
                }
                let correct = q.answer == *answer;
                let reveal = Reveal {
                    question: q.id,
                    answer: q.answer,
                    explanation: q.explanation.clone(),
                };
                let max = self.content.max_attempts;
                let seat = self.seat_mut(participant);
                if correct {
                    seat.reveal = None;
                    self.next_question(participant);
                } else {
                    seat.wrong += 1;
                    if seat.wrong >= max {
                        seat.reveal = Some(reveal);
                        self.next_question(participant);
                    }
                }
                Ok(())
            }
            (Phase::Trial, Action::Price { price, .. }) => {
                let p = self.price(*price)?;
                let r = self.session.play_trial_round(participant, p)?;
                let round = self
                    .session
                    .trial_transcript(participant)
                    .last()
                    .map_or(0, |t| t.len() as u32);
                let done = self.session.trials_complete(participant);
                let seat = self.seat_mut(participant);
                seat.feedback = Some(RoundFeedback {
                    round,
                    own_price: r.actions[0].value(),
                    opponent_price: r.actions[1].value(),
                    own_profit: r.profits[0],
                });
                if done {
                    self.start_supergame(participant, 1);
                }
                Ok(())
            }
            (Phase::Adoption, Action::Adopt { adopt }) => {
                let sg = self.seat(participant)?.supergame;
                self.session.record_adoption(participant, sg, *adopt)?;
                let seat = self.seat_mut(participant);
                seat.phase = Phase::Pricing;
                seat.feedback = None;
                Ok(())
            }
            (Phase::Pricing, Action::Price { price, .. }) => {
                let p = self.price(*price)?;
                self.submit_round_input(participant, Some(p))
            }
            (Phase::Pricing, Action::Confirm { .. }) => self.submit_round_input(participant, None),
            (Phase::Feedback, Action::Continue) => {
                let sg = self.seat(participant)?.supergame;
                if algo {
                    self.seat_mut(participant).phase = Phase::Belief;
                } else {
                    self.after_supergame(participant, sg);
                }
                Ok(())
            }
            (Phase::Belief, Action::Belief { percent }) => {
                if !(0..=100).contains(percent) {
                    return Err(ServiceError::Invalid(format!("belief must be 0 to 100 percent, got {percent}")));
                }
                let sg = self.seat(participant)?.supergame;
                self.session.submit_belief(participant, sg, *percent as f64 / 100.0)?;
                self.after_supergame(participant, sg);
                Ok(())
            }
            (Phase::Survey, Action::Survey { answers }) => {
                for key in answers.keys() {
                    if !self.content.survey.iter().any(|q| &q.id == key) {
                        return Err(ServiceError::Invalid(format!("unknown survey question {key}")));
                    }
                }
                let seat = self.seat_mut(participant);
                seat.survey = Some(answers.clone());
                seat.phase = Phase::Payout;
                Ok(())
            }
            (_, a) => self.illegal(participant, action_name(a)),
        }
    }

    fn enter_questions(&mut self, participant: ParticipantId) {
        let seat = self.seat_mut(participant);
        seat.question = 0;
        seat.wrong = 0;
        if self.content.control_questions.is_empty() {
            self.enter_trials(participant);
        } else {
            self.seat_mut(participant).phase = Phase::ControlQuestions;
        }
    }

    fn next_question(&mut self, participant: ParticipantId) {
        let n = self.content.control_questions.len();
        let seat = self.seat_mut(participant);
        seat.question += 1;
        seat.wrong = 0;
        if seat.question >= n {
            self.enter_trials(participant);
        }
    }

    fn enter_trials(&mut self, participant: ParticipantId) {
        if self.session.trials_complete(participant) {
            self.start_supergame(participant, 1);
        } else {
            let seat = self.seat_mut(participant);
            seat.phase = Phase::Trial;
        }
    }

    fn start_supergame(&mut self, participant: ParticipantId, supergame: u32) {
        let algo = self.session.treatment().has_algorithm();
        let seat = self.seat_mut(participant);
        seat.supergame = supergame;
        seat.feedback = None;
        seat.phase = if algo { Phase::Adoption } else { Phase::Pricing };
    }

    fn after_supergame(&mut self, participant: ParticipantId, supergame: u32) {
        if supergame < self.session.n_supergames() {
            self.start_supergame(participant, supergame + 1);
        } else {
            self.seat_mut(participant).phase = Phase::Survey;
        }
    }

    fn submit_round_input(&mut self, participant: ParticipantId, input: Option<Price>) -> Result<()> {
        let sg = self.seat(participant)?.supergame;
        let m = self.session.match_of(participant, sg)?;
        let side = m.side_of(participant).expect("seated");
        let key = (m.supergame, m.market);
        let price_expected = self.session.submits_price(m, side);
        match (price_expected, input) {
            (true, None) => return Err(ServiceError::Invalid("a price is required".into())),
            (false, Some(_)) => {
                return Err(ServiceError::Invalid("pricing is delegated to the algorithm; confirm instead".into()))
            }
            _ => {}
        }
        let pending = self.pending.get(&key).copied().unwrap_or_default();
        if pending[side.index()].is_some() {
            return Err(ServiceError::IllegalPhase(format!("round {} already submitted", m.next_round())));
        }
        let mut pending = pending;
        pending[side.index()] = Some(input);
        let ready = pending.iter().all(Option::is_some) && m.market_type().is_some();
        if !ready {
            self.pending.insert(key, pending);
            return Ok(());
        }
        let round = m.next_round();
        let participants = m.participants;
        let record = self
            .session
            .resolve_round(key.0, key.1, round, [pending[0].flatten(), pending[1].flatten()])?;
        self.pending.remove(&key);
        let finished = self.session.match_at(key.0, key.1)?.is_finished();
        for s in [Side::A, Side::B] {
            let i = s.index();
            let seat = self.seat_mut(participants[i]);
            seat.feedback = Some(RoundFeedback {
                round,
                own_price: record.prices[i].value(),
                opponent_price: record.prices[1 - i].value(),
                own_profit: record.profits[i],
            });
            if finished {
                seat.phase = Phase::Feedback;
            }
        }
        Ok(())
    }

    /// The move an admin advance makes on a participant's behalf.
    fn default_action(&self, participant: ParticipantId) -> Result<Action> {
        let seat = self.seat(participant)?;
        let params = self.session.params();
        Ok(match seat.phase {
            Phase::Instructions | Phase::Feedback => Action::Continue,
            Phase::ControlQuestions => {
                let q = &self.content.control_questions[seat.question];
                Action::Answer {
                    question: q.id,
                    answer: q.answer,
                }
            }
            Phase::Trial => Action::Price {
                price: wsls_action(self.session.trial_state(participant), params).ecu(),
                round: None,
            },
            Phase::Adoption => Action::Adopt { adopt: false },
            Phase::Pricing => {
                let m = self.session.match_of(participant, seat.supergame)?;
                let side = m.side_of(participant).expect("seated");
                if self.waiting_in_pricing(participant)? {
                    return Err(ServiceError::IllegalPhase("participant is waiting for the other side".into()));
                }
                if self.session.submits_price(m, side) {
                    Action::Price {
                        price: wsls_action(m.state(side), params).ecu(),
                        round: None,
                    }
                } else {
                    Action::Confirm { round: None }
                }
            }
            Phase::Belief => Action::Belief { percent: 50 },
            Phase::Survey => Action::Survey { answers: BTreeMap::new() },
            Phase::Lobby | Phase::Payout => {
                return Err(ServiceError::IllegalPhase(format!("nothing to advance in phase {:?}", seat.phase)))
            }
        })
    }

    fn waiting_in_pricing(&self, participant: ParticipantId) -> Result<bool> {
        let seat = self.seat(participant)?;
        let m = self.session.match_of(participant, seat.supergame)?;
        let side = m.side_of(participant).expect("seated");
        Ok(self
            .pending
            .get(&(m.supergame, m.market))
            .is_some_and(|p| p[side.index()].is_some()))
    }

    pub fn view(&self, participant: ParticipantId) -> Result<ClientView> {
        self.view_at(participant, self.events.len() as u64)
    }

    fn view_at(&self, participant: ParticipantId, seq: u64) -> Result<ClientView> {
        let seat = self.seat(participant)?;
        let cfg = &self.session.config;
        let params = self.session.params();
        let mut v = ClientView {
            session: self.id.clone(),
            participant,
            label: seat.label.clone(),
            treatment: cfg.treatment,
            phase: seat.phase,
            seq,
            n_supergames: cfg.n_supergames,
            supergame: (seat.supergame > 0).then_some(seat.supergame),
            round: None,
            trial: None,
            control_question: None,
            reveal: seat.reveal.clone(),
            price_input: None,
            feedback: seat.feedback,
            own_adoption: None,
            waiting: false,
            belief_prize: None,
            survey: Vec::new(),
            payout: None,
        };
        let bare = PriceInput {
            editable: true,
            prefilled: None,
            recommendation: false,
            min: params.min_price().value(),
            max: params.max_price().value(),
        };
        match seat.phase {
            Phase::Lobby => v.waiting = true,
            Phase::ControlQuestions => {
                let q = &self.content.control_questions[seat.question];
                v.control_question = Some(QuestionView {
                    id: q.id,
                    prompt: q.prompt.clone(),
                    attempts_left: self.content.max_attempts - seat.wrong,
                });
            }
            Phase::Trial => {
                if let Some((trial, round)) = self.session.next_trial_round(participant) {
                    v.trial = Some(TrialProgress {
                        trial,
                        trials: cfg.trial_plan.len() as u32,
                        round,
                    });
                    if round == 1 {
                        v.feedback = None;
                    }
                }
                v.price_input = Some(bare);
            }
            Phase::Adoption => {}
            Phase::Pricing | Phase::Feedback => {
                let m = self.session.match_of(participant, seat.supergame)?;
                let side = m.side_of(participant).expect("seated");
                v.own_adoption = if cfg.treatment.has_algorithm() { m.adoption[side.index()] } else { None };
                if seat.phase == Phase::Pricing {
                    v.round = Some(m.next_round());
                    if self.waiting_in_pricing(participant)? {
                        v.waiting = true;
                    } else {
                        let rec = self.session.pending_recommendation(m.supergame, m.market, side)?;
                        v.price_input = Some(match (cfg.treatment, rec) {
                            (Treatment::Outsourcing, Some(p)) => PriceInput {
                                editable: false,
                                prefilled: Some(p.value()),
                                ..bare
                            },
                            (Treatment::Recommendation, Some(p)) => PriceInput {
                                prefilled: Some(p.value()),
                                recommendation: true,
                                ..bare
                            },
                            _ => bare,
                        });
                    }
                }
            }
            Phase::Belief => v.belief_prize = Some(cfg.belief_prize),
            Phase::Survey => v.survey = self.content.survey.clone(),
            Phase::Payout => {
                v.payout = self.session.payouts.get(&participant).cloned();
                v.waiting = v.payout.is_none();
            }
            Phase::Instructions => {}
        }
        Ok(v)
    }

    pub fn survey_answers(&self, participant: ParticipantId) -> Option<&BTreeMap<String, String>> {
        self.seat_opt(participant).and_then(|s| s.survey.as_ref())
    }

    pub fn phase(&self, participant: ParticipantId) -> Option<Phase> {
        self.seat_opt(participant).map(|s| s.phase)
    }
}

fn action_name(a: &Action) -> &'static str {
    match a {
        Action::Continue => "continue",
        Action::Answer { .. } => "answer",
        Action::Price { .. } => "price",
        Action::Confirm { .. } => "confirm",
        Action::Adopt { .. } => "adopt",
        Action::Belief { .. } => "belief",
        Action::Survey { .. } => "survey",
    }
}
