//! One experimental session: matching groups, supergame plans, adoption,
//! treatment-specific price resolution, trials, beliefs and payouts.
//!
//! [`Session`] is a plain state machine with no I/O and no clock. Every
//! random draw comes from a stream derived from the configured seed and the
//! identifiers involved, so the same config plus the same ordered inputs
//! always rebuild the same session.
//!
//! Participants, supergames, markets and rounds are numbered from 1.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{ecu_to_euro, market_price, stage_outcome, DiscountFactor, Ecu, Euro, MarketError, MarketParams, Price};
use crate::strategy::{wsls_action, PriceState, Side, Trace, TraceRound};

pub type ParticipantId = u32;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    Config(ConfigErrors),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T, E = SessionError> = std::result::Result<T, E>;

fn protocol<T>(msg: impl Into<String>) -> Result<T> {
    Err(SessionError::Protocol(msg.into()))
}

/// A problem with one config field.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldIssue {
    pub field: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigErrors(pub Vec<FieldIssue>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| format!("{}: {}", i.field, i.message)).collect();
        f.write_str(&parts.join("; "))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Treatment {
    Baseline,
    Outsourcing,
    Recommendation,
}

impl Treatment {
    pub fn has_algorithm(self) -> bool {
        self != Treatment::Baseline
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Treatment::Baseline => "baseline",
            Treatment::Outsourcing => "outsourcing",
            Treatment::Recommendation => "recommendation",
        }
    }
}

impl fmt::Display for Treatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MarketType {
    AA,
    AH,
    HH,
}

impl MarketType {
    pub fn from_adoption(a: bool, b: bool) -> Self {
        match (a, b) {
            (true, true) => MarketType::AA,
            (false, false) => MarketType::HH,
            _ => MarketType::AH,
        }
    }
}

impl fmt::Display for MarketType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Who set a recorded price.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceSource {
    Human,
    Algorithm,
    OverriddenRecommendation,
    AcceptedRecommendation,
}

/// Which belief report is paid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeliefPayment {
    /// The report from the supergame selected for payment.
    #[default]
    SelectedSupergame,
    /// One report drawn independently of the paid supergame.
    IndependentDraw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub treatment: Treatment,
    pub participants: u32,
    pub matching_group_size: u32,
    pub n_supergames: u32,
    pub continuation: DiscountFactor,
    /// Explicit supergame lengths; drawn from the seed when absent.
    pub supergame_lengths: Option<Vec<u32>>,
    pub trial_plan: Vec<u32>,
    /// ECU per Euro.
    pub exchange_rate: Ecu,
    pub show_up_fee: Euro,
    pub belief_prize: Ecu,
    pub belief_payment: BeliefPayment,
    /// Redraw a group's matching when it would repeat a pair from the
    /// previous supergame.
    pub avoid_immediate_rematch: bool,
    pub seed: u64,
    pub market: MarketParams,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            treatment: Treatment::Outsourcing,
            participants: 20,
            matching_group_size: 10,
            n_supergames: 5,
            continuation: DiscountFactor::default(),
            supergame_lengths: None,
            trial_plan: vec![5, 5, 5],
            exchange_rate: 140,
            show_up_fee: Euro::from_cents(600),
            belief_prize: 180,
            belief_payment: BeliefPayment::SelectedSupergame,
            avoid_immediate_rematch: false,
            seed: 0,
            market: MarketParams::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ConfigErrors> {
        let mut issues = Vec::new();
        let mut bad = |field: &str, message: String| {
            issues.push(FieldIssue {
                field: field.to_string(),
                message,
            })
        };
        if self.participants < 2 || !self.participants.is_multiple_of(2) {
            bad("participants", format!("must be a positive even count, got {}", self.participants));
        }
        if self.matching_group_size < 2 || !self.matching_group_size.is_multiple_of(2) {
            bad("matching_group_size", format!("must be a positive even count, got {}", self.matching_group_size));
        } else if !self.participants.is_multiple_of(self.matching_group_size) {
            bad(
                "matching_group_size",
                format!("{} participants do not split into groups of {}", self.participants, self.matching_group_size),
            );
        }
        if self.avoid_immediate_rematch && self.matching_group_size < 4 {
            bad("avoid_immediate_rematch", "needs matching groups of at least 4".into());
        }
        if self.n_supergames == 0 {
            bad("n_supergames", "must be at least 1".into());
        }
        if let Some(lengths) = &self.supergame_lengths {
            if lengths.len() != self.n_supergames as usize {
                bad(
                    "supergame_lengths",
                    format!("has {} entries for {} supergames", lengths.len(), self.n_supergames),
                );
            }
            if lengths.contains(&0) {
                bad("supergame_lengths", "every length must be at least 1".into());
            }
        }
        if self.trial_plan.contains(&0) {
            bad("trial_plan", "every trial length must be at least 1".into());
        }
        if self.exchange_rate <= 0 {
            bad("exchange_rate", format!("must be positive, got {}", self.exchange_rate));
        }
        if self.belief_prize < 0 {
            bad("belief_prize", format!("must be non-negative, got {}", self.belief_prize));
        }
        if let Err(e) = self.market.validate() {
            bad("market", e.to_string());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(issues))
        }
    }

    pub fn n_groups(&self) -> u32 {
        self.participants / self.matching_group_size
    }

    pub fn markets_per_supergame(&self) -> u32 {
        self.participants / 2
    }
}

/// Mixes identifiers into a seed so that each random draw has its own
/// stream independent of the order in which draws happen.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

mod stream {
    pub const LENGTHS: u64 = 1;
    pub const GROUPS: u64 = 2;
    pub const MATCHING: u64 = 3;
    pub const BELIEF: u64 = 4;
    pub const PAYOUT: u64 = 5;
}

/// Draws `n` i.i.d. supergame lengths with `P(L = k) = (1 - δ) δ^(k-1)`.
pub fn draw_lengths(seed: u64, n: usize, delta: DiscountFactor) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stream::LENGTHS]));
    let geo = Geometric::new(1.0 - delta.value()).expect("1 - δ lies in (0, 1)");
    (0..n)
        .map(|_| u32::try_from(geo.sample(&mut rng).saturating_add(1)).unwrap_or(u32::MAX))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub prices: [Price; 2],
    pub recommendations: [Option<Price>; 2],
    pub sources: [PriceSource; 2],
    pub profits: [Ecu; 2],
}

impl RoundRecord {
    pub fn market_price(&self) -> Price {
        market_price(self.prices[0], self.prices[1])
    }
}

/// One market of one supergame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Match {
    pub supergame: u32,
    pub market: u32,
    pub group: u32,
    pub participants: [ParticipantId; 2],
    pub length: u32,
    pub adoption: [Option<bool>; 2],
    pub rounds: Vec<RoundRecord>,
}

impl Match {
    pub fn side_of(&self, participant: ParticipantId) -> Option<Side> {
        if self.participants[0] == participant {
            Some(Side::A)
        } else if self.participants[1] == participant {
            Some(Side::B)
        } else {
            None
        }
    }

    pub fn opponent_of(&self, participant: ParticipantId) -> Option<ParticipantId> {
        self.side_of(participant).map(|s| self.participants[s.other().index()])
    }

    /// Known once both sides have decided (always HH without an algorithm).
    pub fn market_type(&self) -> Option<MarketType> {
        match self.adoption {
            [Some(a), Some(b)] => Some(MarketType::from_adoption(a, b)),
            _ => None,
        }
    }

    pub fn is_started(&self) -> bool {
        !self.rounds.is_empty()
    }

    pub fn is_finished(&self) -> bool {
        self.rounds.len() as u32 >= self.length
    }

    pub fn next_round(&self) -> u32 {
        self.rounds.len() as u32 + 1
    }

    /// Last round's prices from `side`'s point of view.
    pub fn state(&self, side: Side) -> PriceState {
        match self.rounds.last() {
            None => PriceState::INITIAL,
            Some(r) => {
                let s = PriceState::after(r.prices[0], r.prices[1]);
                if side == Side::A {
                    s
                } else {
                    s.swapped()
                }
            }
        }
    }

    pub fn total_profit(&self, side: Side) -> Ecu {
        self.rounds.iter().map(|r| r.profits[side.index()]).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefReport {
    pub supergame: u32,
    pub participant: ParticipantId,
    /// Stated probability that the opponent adopted.
    pub belief: f64,
    pub opponent_adopted: bool,
    pub draw: f64,
    pub reward: Ecu,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payout {
    pub participant: ParticipantId,
    pub selected_supergame: u32,
    pub supergame_profit: Ecu,
    pub belief_supergame: Option<u32>,
    pub belief_reward: Ecu,
    pub show_up: Euro,
    pub total: Euro,
}

/// Binarized scoring rule: the prize is paid iff `u > (b - d)²`.
pub fn score_belief(belief: f64, opponent_adopted: bool, draw: f64, prize: Ecu) -> Result<Ecu> {
    if !(0.0..=1.0).contains(&belief) {
        return Err(SessionError::Domain(format!("belief {belief} is not a probability")));
    }
    if !(0.0..=1.0).contains(&draw) {
        return Err(SessionError::Domain(format!("draw {draw} is outside [0, 1]")));
    }
    let d = if opponent_adopted { 1.0 } else { 0.0 };
    let loss = (belief - d) * (belief - d);
    Ok(if draw > loss { prize } else { 0 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub id: String,
    pub config: SessionConfig,
    pub lengths: Vec<u32>,
    /// Members of each matching group, in seat order.
    pub groups: Vec<Vec<ParticipantId>>,
    /// `matches[s - 1]` holds every market of supergame `s`.
    pub matches: Vec<Vec<Match>>,
    pub trials: BTreeMap<ParticipantId, Vec<Trace>>,
    /// Keyed by `(supergame, participant)`.
    pub beliefs: BTreeMap<(u32, ParticipantId), BeliefReport>,
    pub payouts: BTreeMap<ParticipantId, Payout>,
}

/// Partitions participants and draws every supergame's matching.
pub fn build_session(config: SessionConfig) -> Result<Session> {
    config.validate().map_err(SessionError::Config)?;
    let lengths = match &config.supergame_lengths {
        Some(l) => l.clone(),
        None => draw_lengths(config.seed, config.n_supergames as usize, config.continuation),
    };

    let mut seats: Vec<ParticipantId> = (1..=config.participants).collect();
    seats.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[stream::GROUPS])));
    let groups: Vec<Vec<ParticipantId>> = seats
        .chunks(config.matching_group_size as usize)
        .map(|c| {
            let mut g = c.to_vec();
            g.sort_unstable();
            g
        })
        .collect();

    let mut matches = Vec::with_capacity(config.n_supergames as usize);
    let mut previous: BTreeSet<(ParticipantId, ParticipantId)> = BTreeSet::new();
    for sg in 1..=config.n_supergames {
        let mut market = 0;
        let mut round_matches = Vec::new();
        let mut pairs_now = BTreeSet::new();
        for (gi, group) in groups.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[stream::MATCHING, sg as u64, gi as u64]));
            let mut order = group.clone();
            loop {
                order.shuffle(&mut rng);
                let repeats = order.chunks(2).any(|p| previous.contains(&ordered(p[0], p[1])));
                if !(config.avoid_immediate_rematch && repeats) {
                    break;
                }
            }
            for pair in order.chunks(2) {
                market += 1;
                pairs_now.insert(ordered(pair[0], pair[1]));
                round_matches.push(Match {
                    supergame: sg,
                    market,
                    group: gi as u32 + 1,
                    participants: [pair[0], pair[1]],
                    length: lengths[sg as usize - 1],
                    adoption: if config.treatment.has_algorithm() { [None, None] } else { [Some(false), Some(false)] },
                    rounds: Vec::new(),
                });
            }
        }
        previous = pairs_now;
        matches.push(round_matches);
    }

    Ok(Session {
        id: format!("session-{:016x}", config.seed),
        config,
        lengths,
        groups,
        matches,
        trials: BTreeMap::new(),
        beliefs: BTreeMap::new(),
        payouts: BTreeMap::new(),
    })
}

fn ordered(a: ParticipantId, b: ParticipantId) -> (ParticipantId, ParticipantId) {
    (a.min(b), a.max(b))
}

impl Session {
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn params(&self) -> &MarketParams {
        &self.config.market
    }

    pub fn treatment(&self) -> Treatment {
        self.config.treatment
    }

    pub fn n_supergames(&self) -> u32 {
        self.config.n_supergames
    }

    fn check_participant(&self, participant: ParticipantId) -> Result<()> {
        if participant == 0 || participant > self.config.participants {
            return protocol(format!("unknown participant {participant}"));
        }
        Ok(())
    }

    fn check_supergame(&self, supergame: u32) -> Result<()> {
        if supergame == 0 || supergame > self.config.n_supergames {
            return protocol(format!("unknown supergame {supergame}"));
        }
        Ok(())
    }

    pub fn supergame_matches(&self, supergame: u32) -> &[Match] {
        &self.matches[supergame as usize - 1]
    }

    pub fn match_at(&self, supergame: u32, market: u32) -> Result<&Match> {
        self.check_supergame(supergame)?;
        match self.matches[supergame as usize - 1].iter().find(|m| m.market == market) {
            Some(m) => Ok(m),
            None => protocol(format!("supergame {supergame} has no market {market}")),
        }
    }

    fn match_at_mut(&mut self, supergame: u32, market: u32) -> Result<&mut Match> {
        self.check_supergame(supergame)?;
        match self.matches[supergame as usize - 1].iter_mut().find(|m| m.market == market) {
            Some(m) => Ok(m),
            None => protocol(format!("supergame {supergame} has no market {market}")),
        }
    }

    /// The market `participant` plays in during `supergame`.
    pub fn match_of(&self, participant: ParticipantId, supergame: u32) -> Result<&Match> {
        self.check_participant(participant)?;
        self.check_supergame(supergame)?;
        Ok(self.matches[supergame as usize - 1]
            .iter()
            .find(|m| m.side_of(participant).is_some())
            .expect("every participant has a market in every supergame"))
    }

    pub fn group_of(&self, participant: ParticipantId) -> u32 {
        self.groups
            .iter()
            .position(|g| g.contains(&participant))
            .map(|i| i as u32 + 1)
            .unwrap_or(0)
    }

    /// Locks `participant`'s adoption choice for `supergame`.
    pub fn record_adoption(&mut self, participant: ParticipantId, supergame: u32, adopt: bool) -> Result<MarketTypeUpdate> {
        if !self.treatment().has_algorithm() {
            return protocol("no algorithm is offered in the baseline treatment");
        }
        let market = self.match_of(participant, supergame)?.market;
        let m = self.match_at_mut(supergame, market)?;
        let side = m.side_of(participant).expect("participant is seated in this market");
        if m.is_started() {
            return protocol(format!("supergame {supergame} has already started for participant {participant}"));
        }
        if m.adoption[side.index()].is_some() {
            return protocol(format!("participant {participant} already decided for supergame {supergame}"));
        }
        m.adoption[side.index()] = Some(adopt);
        Ok(MarketTypeUpdate {
            market,
            market_type: m.market_type(),
        })
    }

    /// Prices a side faces before submitting: the algorithm's action, if
    /// the side delegated or receives recommendations.
    pub fn pending_recommendation(&self, supergame: u32, market: u32, side: Side) -> Result<Option<Price>> {
        let m = self.match_at(supergame, market)?;
        if !self.treatment().has_algorithm() || m.adoption[side.index()] != Some(true) || m.is_finished() {
            return Ok(None);
        }
        Ok(Some(wsls_action(m.state(side), self.params())))
    }

    /// Whether `side` must submit a price (as opposed to a confirmation).
    pub fn submits_price(&self, m: &Match, side: Side) -> bool {
        !(self.treatment() == Treatment::Outsourcing && m.adoption[side.index()] == Some(true))
    }

    /// Resolves one round of one market from both sides' inputs.
    ///
    /// Outsourcing adopters pass `None`; everyone else passes a price.
    pub fn resolve_round(&mut self, supergame: u32, market: u32, round: u32, inputs: [Option<Price>; 2]) -> Result<RoundRecord> {
        let treatment = self.treatment();
        let params = self.config.market.clone();
        let m = self.match_at(supergame, market)?;
        if m.is_finished() {
            return protocol(format!("market {market} of supergame {supergame} is already complete"));
        }
        if round != m.next_round() {
            return protocol(format!("expected round {}, got {round}", m.next_round()));
        }
        if m.market_type().is_none() {
            return protocol(format!("adoption decisions pending in market {market}"));
        }
        let mut prices = [params.min_price(); 2];
        let mut recommendations = [None; 2];
        let mut sources = [PriceSource::Human; 2];
        for side in [Side::A, Side::B] {
            let i = side.index();
            let adopted = m.adoption[i] == Some(true);
            let algo = wsls_action(m.state(side), &params);
            match (treatment, adopted, inputs[i]) {
                (Treatment::Outsourcing, true, None) => {
                    prices[i] = algo;
                    recommendations[i] = Some(algo);
                    sources[i] = PriceSource::Algorithm;
                }
                (Treatment::Outsourcing, true, Some(_)) => {
                    return protocol(format!("participant {} delegated pricing and cannot submit a price", m.participants[i]));
                }
                (_, _, None) => return protocol(format!("missing price from participant {}", m.participants[i])),
                (Treatment::Recommendation, true, Some(p)) => {
                    prices[i] = params.check(p)?;
                    recommendations[i] = Some(algo);
                    sources[i] = if p == algo {
                        PriceSource::AcceptedRecommendation
                    } else {
                        PriceSource::OverriddenRecommendation
                    };
                }
                (_, _, Some(p)) => prices[i] = params.check(p)?,
            }
        }
        let outcome = stage_outcome(prices[0], prices[1], &params)?;
        let record = RoundRecord {
            round,
            prices,
            recommendations,
            sources,
            profits: outcome.profits,
        };
        self.match_at_mut(supergame, market)?.rounds.push(record);
        Ok(record)
    }

    pub fn supergame_finished(&self, supergame: u32) -> bool {
        self.supergame_matches(supergame).iter().all(Match::is_finished)
    }

    /// Trial supergames `participant` has played so far.
    pub fn trial_transcript(&self, participant: ParticipantId) -> &[Trace] {
        self.trials.get(&participant).map(Vec::as_slice).unwrap_or(&[])
    }

    /// `(trial index, round index)` of the next trial round, both 1-based.
    pub fn next_trial_round(&self, participant: ParticipantId) -> Option<(u32, u32)> {
        let done = self.trial_transcript(participant);
        for (i, &len) in self.config.trial_plan.iter().enumerate() {
            let played = done.get(i).map_or(0, Trace::len) as u32;
            if played < len {
                return Some((i as u32 + 1, played + 1));
            }
        }
        None
    }

    pub fn trial_state(&self, participant: ParticipantId) -> PriceState {
        match self.next_trial_round(participant) {
            Some((trial, round)) if round > 1 => self.trial_transcript(participant)[trial as usize - 1].next_state(Side::A),
            _ => PriceState::INITIAL,
        }
    }

    /// Plays one unpaid trial round: the participant is side A, the WSLS
    /// algorithm side B.
    pub fn play_trial_round(&mut self, participant: ParticipantId, price: Price) -> Result<TraceRound> {
        self.check_participant(participant)?;
        let params = self.config.market.clone();
        params.check(price)?;
        if self.match_of(participant, 1)?.is_started() {
            return protocol("trials must be completed before the first paid supergame");
        }
        let Some((trial, _)) = self.next_trial_round(participant) else {
            return protocol(format!("participant {participant} has completed all trial supergames"));
        };
        let traces = self.trials.entry(participant).or_default();
        if traces.len() < trial as usize {
            traces.push(Trace::default());
        }
        let trace = &mut traces[trial as usize - 1];
        let algo = wsls_action(trace.next_state(Side::B), &params);
        Ok(*trace.push([price, algo], [None, Some(algo)], &params).map_err(strategy_err)?)
    }

    /// Runs every remaining trial round with `choose` picking the
    /// participant's price from its observed state.
    pub fn run_trials(&mut self, participant: ParticipantId, mut choose: impl FnMut(PriceState) -> Price) -> Result<&[Trace]> {
        while self.next_trial_round(participant).is_some() {
            let state = self.trial_state(participant);
            self.play_trial_round(participant, choose(state))?;
        }
        Ok(self.trial_transcript(participant))
    }

    pub fn trials_complete(&self, participant: ParticipantId) -> bool {
        self.next_trial_round(participant).is_none()
    }

    /// Uniform draw used to score `participant`'s belief for `supergame`.
    pub fn belief_draw(&self, participant: ParticipantId, supergame: u32) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.config.seed,
            &[stream::BELIEF, participant as u64, supergame as u64],
        ));
        rng.random::<f64>()
    }

    /// Scores and stores a belief about the opponent's adoption in a
    /// finished supergame.
    pub fn submit_belief(&mut self, participant: ParticipantId, supergame: u32, belief: f64) -> Result<&BeliefReport> {
        if !self.treatment().has_algorithm() {
            return protocol("beliefs are not elicited in the baseline treatment");
        }
        let m = self.match_of(participant, supergame)?;
        if !m.is_finished() {
            return protocol(format!("supergame {supergame} is still running for participant {participant}"));
        }
        if self.beliefs.contains_key(&(supergame, participant)) {
            return protocol(format!("participant {participant} already reported a belief for supergame {supergame}"));
        }
        let side = m.side_of(participant).expect("seated");
        let opponent_adopted = m.adoption[side.other().index()] == Some(true);
        let draw = self.belief_draw(participant, supergame);
        let reward = score_belief(belief, opponent_adopted, draw, self.config.belief_prize)?;
        let report = BeliefReport {
            supergame,
            participant,
            belief,
            opponent_adopted,
            draw,
            reward,
        };
        Ok(self.beliefs.entry((supergame, participant)).or_insert(report))
    }

    pub fn belief(&self, participant: ParticipantId, supergame: u32) -> Option<&BeliefReport> {
        self.beliefs.get(&(supergame, participant))
    }

    pub fn belief_reports(&self) -> impl Iterator<Item = &BeliefReport> {
        self.beliefs.values()
    }

    /// Every market finished and, with an algorithm, every belief reported.
    pub fn is_complete(&self) -> bool {
        let rounds_done = (1..=self.n_supergames()).all(|s| self.supergame_finished(s));
        let beliefs_done = !self.treatment().has_algorithm()
            || self.beliefs.len() == (self.config.participants * self.config.n_supergames) as usize;
        rounds_done && beliefs_done
    }

    pub fn supergame_profit(&self, participant: ParticipantId, supergame: u32) -> Result<Ecu> {
        let m = self.match_of(participant, supergame)?;
        Ok(m.total_profit(m.side_of(participant).expect("seated")))
    }

    /// Selects the paid supergame and belief report and converts to Euro.
    pub fn compute_payout<R: Rng + ?Sized>(&self, participant: ParticipantId, rng: &mut R) -> Result<Payout> {
        self.check_participant(participant)?;
        if !self.is_complete() {
            return protocol("payouts need a complete session");
        }
        let n = self.n_supergames();
        let selected = rng.random_range(1..=n);
        let supergame_profit = self.supergame_profit(participant, selected)?;
        let belief_supergame = if self.treatment().has_algorithm() {
            Some(match self.config.belief_payment {
                BeliefPayment::SelectedSupergame => selected,
                BeliefPayment::IndependentDraw => rng.random_range(1..=n),
            })
        } else {
            None
        };
        let belief_reward = belief_supergame
            .and_then(|s| self.belief(participant, s))
            .map_or(0, |b| b.reward);
        let show_up = self.config.show_up_fee;
        let total = show_up + ecu_to_euro(supergame_profit + belief_reward, self.config.exchange_rate)?;
        Ok(Payout {
            participant,
            selected_supergame: selected,
            supergame_profit,
            belief_supergame,
            belief_reward,
            show_up,
            total,
        })
    }

    /// Computes and stores every participant's payout, each from its own
    /// derived stream.
    pub fn settle(&mut self) -> Result<&BTreeMap<ParticipantId, Payout>> {
        let mut out = BTreeMap::new();
        for p in 1..=self.config.participants {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &[stream::PAYOUT, p as u64]));
            out.insert(p, self.compute_payout(p, &mut rng)?);
        }
        self.payouts = out;
        Ok(&self.payouts)
    }

    pub fn all_matches(&self) -> impl Iterator<Item = &Match> {
        self.matches.iter().flatten()
    }
}

/// Result of an adoption decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarketTypeUpdate {
    pub market: u32,
    pub market_type: Option<MarketType>,
}

fn strategy_err(e: crate::strategy::StrategyError) -> SessionError {
    match e {
        crate::strategy::StrategyError::Market(m) => SessionError::Market(m),
        other => SessionError::Domain(other.to_string()),
    }
}
