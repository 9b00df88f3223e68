//! Deterministic pricing rules conditioned on last round's prices.
//!
//! Contains the win-stay lose-shift algorithm, scripted bots used for
//! headless sessions, supergame simulation and punishment-phase extraction.

use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{stage_outcome, Ecu, MarketError, MarketParams, Price};

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error("invalid bot: {0}")]
    InvalidBot(String),
    #[error("side {0:?} has no recommendation stream")]
    MissingRecommendations(Side),
    #[error("supergame length must be at least 1")]
    EmptySupergame,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T, E = StrategyError> = std::result::Result<T, E>;

/// What a player observes before choosing a price: its own and the
/// opponent's price in the previous round, or nothing in round 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PriceState {
    pub previous: Option<(Price, Price)>,
}

impl PriceState {
    pub const INITIAL: PriceState = PriceState { previous: None };

    pub fn after(own: Price, opponent: Price) -> Self {
        PriceState {
            previous: Some((own, opponent)),
        }
    }

    /// The same round seen from the other firm.
    pub fn swapped(self) -> Self {
        PriceState {
            previous: self.previous.map(|(a, b)| (b, a)),
        }
    }

    pub fn is_initial(self) -> bool {
        self.previous.is_none()
    }

    /// Number of distinct states: every price pair plus the initial state.
    pub fn count(params: &MarketParams) -> usize {
        params.grid_len() * params.grid_len() + 1
    }

    /// Dense index; the initial state is 0.
    pub fn index(self, params: &MarketParams) -> usize {
        match self.previous {
            None => 0,
            Some((own, opp)) => 1 + params.index_of(own) * params.grid_len() + params.index_of(opp),
        }
    }

    pub fn from_index(index: usize, params: &MarketParams) -> Self {
        if index == 0 {
            return PriceState::INITIAL;
        }
        let n = params.grid_len();
        let i = index - 1;
        PriceState::after(params.price_at(i / n), params.price_at(i % n))
    }

    pub fn check(self, params: &MarketParams) -> Result<Self, MarketError> {
        if let Some((a, b)) = self.previous {
            params.check(a)?;
            params.check(b)?;
        }
        Ok(self)
    }

    pub fn all(params: &MarketParams) -> impl Iterator<Item = PriceState> + '_ {
        (0..Self::count(params)).map(move |i| Self::from_index(i, params))
    }
}

/// A deterministic strategy: an opening price and a total map from
/// last-round price pairs to a price.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Policy {
    price_grid: [u8; 2],
    initial_action: Price,
    /// Row-major over `(own, opponent)` grid positions.
    transition: Vec<Price>,
}

impl Policy {
    pub fn new(params: &MarketParams, initial_action: Price, transition: Vec<Price>) -> Result<Self, MarketError> {
        let policy = Policy {
            price_grid: params.price_grid,
            initial_action,
            transition,
        };
        policy.check_compatible(params)?;
        Ok(policy)
    }

    pub fn from_fn(params: &MarketParams, initial_action: Price, mut f: impl FnMut(Price, Price) -> Price) -> Self {
        let mut transition = Vec::with_capacity(params.grid_len() * params.grid_len());
        for own in params.grid() {
            for opp in params.grid() {
                transition.push(f(own, opp));
            }
        }
        Policy {
            price_grid: params.price_grid,
            initial_action,
            transition,
        }
    }

    pub fn wsls(params: &MarketParams) -> Self {
        Policy::from_fn(params, params.monopoly_price, |own, opp| {
            wsls_action(PriceState::after(own, opp), params)
        })
    }

    pub fn constant(params: &MarketParams, price: Price) -> Self {
        Policy::from_fn(params, price, |_, _| price)
    }

    pub fn initial_action(&self) -> Price {
        self.initial_action
    }

    pub fn transition(&self, own: Price, opponent: Price) -> Price {
        let lo = self.price_grid[0];
        let n = (self.price_grid[1] - lo) as usize + 1;
        self.transition[(own.value() - lo) as usize * n + (opponent.value() - lo) as usize]
    }

    pub fn action(&self, state: PriceState) -> Price {
        match state.previous {
            None => self.initial_action,
            Some((own, opp)) => self.transition(own, opp),
        }
    }

    pub fn with_initial_action(mut self, price: Price) -> Self {
        self.initial_action = price;
        self
    }

    /// Replaces the action taken after `(own, opponent)`.
    pub fn with_transition(mut self, own: Price, opponent: Price, action: Price) -> Self {
        let lo = self.price_grid[0];
        let n = (self.price_grid[1] - lo) as usize + 1;
        self.transition[(own.value() - lo) as usize * n + (opponent.value() - lo) as usize] = action;
        self
    }

    /// Rejects policies that are not total over `params`' grid.
    pub fn check_compatible(&self, params: &MarketParams) -> Result<(), MarketError> {
        if self.price_grid != params.price_grid {
            return Err(MarketError::Domain(format!(
                "policy grid {:?} does not match market grid {:?}",
                self.price_grid, params.price_grid
            )));
        }
        let n = params.grid_len();
        if self.transition.len() != n * n {
            return Err(MarketError::Domain(format!(
                "policy defines {} transitions, expected {}",
                self.transition.len(),
                n * n
            )));
        }
        params.check(self.initial_action)?;
        for &p in &self.transition {
            params.check(p)?;
        }
        Ok(())
    }

    /// One row per state, initial state first.
    pub fn write_csv<W: io::Write>(&self, writer: W, params: &MarketParams) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["state", "own_price", "opponent_price", "action"])?;
        for (i, state) in PriceState::all(params).enumerate() {
            let (own, opp) = match state.previous {
                None => (String::new(), String::new()),
                Some((a, b)) => (a.to_string(), b.to_string()),
            };
            w.write_record([i.to_string(), own, opp, self.action(state).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The win-stay lose-shift algorithm: monopoly price in round 1 and after
/// joint monopoly or joint punishment, punishment price otherwise.
pub fn wsls_action(state: PriceState, params: &MarketParams) -> Price {
    match state.previous {
        None => params.monopoly_price,
        Some((own, opp)) if own == opp && (own == params.monopoly_price || own == params.punishment_price) => {
            params.monopoly_price
        }
        Some(_) => params.punishment_price,
    }
}

/// Scripted participants for simulations and headless sessions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BotSpec {
    AlwaysPrice { price: Price },
    Wsls,
    /// Undercut the algorithm's collusive price with the monopoly price
    /// minus one whenever it is about to collude, and join its punishment
    /// otherwise. Opens with the undercut.
    CyclicUndercut,
    /// Like `CyclicUndercut` but opens at the monopoly price.
    ProbeThenUndercut,
    /// Collude at `collusive` until any observed price falls below it, then
    /// charge `punish` forever.
    GrimTrigger { collusive: Price, punish: Price },
    RandomUniform { seed: u64 },
}

impl BotSpec {
    pub fn validate(&self, params: &MarketParams) -> Result<()> {
        match *self {
            BotSpec::AlwaysPrice { price } => {
                params.check(price)?;
            }
            BotSpec::GrimTrigger { collusive, punish } => {
                params.check(collusive)?;
                params.check(punish)?;
                if punish >= collusive {
                    return Err(StrategyError::InvalidBot(format!(
                        "grim trigger punishment {punish} must be below the collusive price {collusive}"
                    )));
                }
            }
            BotSpec::CyclicUndercut | BotSpec::ProbeThenUndercut => {
                if params.monopoly_price <= params.min_price() {
                    return Err(StrategyError::InvalidBot("no undercut price below the monopoly price".into()));
                }
            }
            BotSpec::Wsls | BotSpec::RandomUniform { .. } => {}
        }
        Ok(())
    }

    /// Equivalent policy for the deterministic bots.
    pub fn to_policy(&self, params: &MarketParams) -> Option<Policy> {
        if matches!(self, BotSpec::RandomUniform { .. }) {
            return None;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let initial = bot_action(self, PriceState::INITIAL, params, &mut rng);
        Some(Policy::from_fn(params, initial, |own, opp| {
            bot_action(self, PriceState::after(own, opp), params, &mut rng)
        }))
    }

    pub fn is_algorithm(&self) -> bool {
        matches!(self, BotSpec::Wsls)
    }
}

fn undercut_price(params: &MarketParams) -> Price {
    Price::new(params.monopoly_price.value() - 1)
}

/// Next price of a scripted bot. Only `RandomUniform` draws from `rng`.
pub fn bot_action<R: Rng + ?Sized>(bot: &BotSpec, state: PriceState, params: &MarketParams, rng: &mut R) -> Price {
    match *bot {
        BotSpec::AlwaysPrice { price } => price,
        BotSpec::Wsls => wsls_action(state, params),
        BotSpec::CyclicUndercut | BotSpec::ProbeThenUndercut => {
            if state.is_initial() {
                return if *bot == BotSpec::CyclicUndercut {
                    undercut_price(params)
                } else {
                    params.monopoly_price
                };
            }
            // Anticipate the algorithm's reply to last round.
            if wsls_action(state.swapped(), params) == params.monopoly_price {
                undercut_price(params)
            } else {
                params.punishment_price
            }
        }
        BotSpec::GrimTrigger { collusive, punish } => match state.previous {
            Some((own, opp)) if own < collusive || opp < collusive => punish,
            _ => collusive,
        },
        BotSpec::RandomUniform { .. } => {
            let i = rng.random_range(0..params.grid_len());
            params.price_at(i)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn index(self) -> usize {
        match self {
            Side::A => 0,
            Side::B => 1,
        }
    }

    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

/// Either side of a simulated market.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Player {
    Policy(Policy),
    Bot(BotSpec),
}

impl Player {
    pub fn wsls() -> Self {
        Player::Bot(BotSpec::Wsls)
    }

    fn is_algorithm(&self, params: &MarketParams) -> bool {
        match self {
            Player::Bot(b) => b.is_algorithm(),
            Player::Policy(p) => *p == Policy::wsls(params),
        }
    }
}

impl From<Policy> for Player {
    fn from(p: Policy) -> Self {
        Player::Policy(p)
    }
}

impl From<BotSpec> for Player {
    fn from(b: BotSpec) -> Self {
        Player::Bot(b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRound {
    pub actions: [Price; 2],
    pub profits: [Ecu; 2],
    pub recommendations: [Option<Price>; 2],
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub rounds: Vec<TraceRound>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// Appends a round, deriving profits from the stage game.
    pub fn push(&mut self, actions: [Price; 2], recommendations: [Option<Price>; 2], params: &MarketParams) -> Result<&TraceRound> {
        let outcome = stage_outcome(actions[0], actions[1], params)?;
        self.rounds.push(TraceRound {
            actions,
            profits: outcome.profits,
            recommendations,
        });
        Ok(self.rounds.last().expect("just pushed"))
    }

    /// State observed by `side` before the next round.
    pub fn next_state(&self, side: Side) -> PriceState {
        match self.rounds.last() {
            None => PriceState::INITIAL,
            Some(r) => {
                let s = PriceState::after(r.actions[0], r.actions[1]);
                if side == Side::A {
                    s
                } else {
                    s.swapped()
                }
            }
        }
    }

    /// Mean per-round profit of each side over the first `rounds` rounds.
    pub fn average_profits(&self, rounds: usize) -> [f64; 2] {
        let window = &self.rounds[..rounds.min(self.rounds.len())];
        if window.is_empty() {
            return [0.0, 0.0];
        }
        let mut sum = [0i64; 2];
        for r in window {
            sum[0] += r.profits[0];
            sum[1] += r.profits[1];
        }
        [sum[0] as f64 / window.len() as f64, sum[1] as f64 / window.len() as f64]
    }

    pub fn write_csv<W: io::Write>(&self, writer: W, supergame: u32) -> Result<()> {
        write_traces_csv(writer, [(supergame, self)])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceCsvRow {
    pub supergame: u32,
    pub round: u32,
    pub action_a: u8,
    pub action_b: u8,
    pub rec_a: Option<u8>,
    pub rec_b: Option<u8>,
    pub profit_a: Ecu,
    pub profit_b: Ecu,
}

/// Writes traces with columns
/// `supergame,round,action_a,action_b,rec_a,rec_b,profit_a,profit_b`.
pub fn write_traces_csv<'a, W: io::Write>(writer: W, traces: impl IntoIterator<Item = (u32, &'a Trace)>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut wrote_any = false;
    for (supergame, trace) in traces {
        for (i, r) in trace.rounds.iter().enumerate() {
            w.serialize(TraceCsvRow {
                supergame,
                round: i as u32 + 1,
                action_a: r.actions[0].value(),
                action_b: r.actions[1].value(),
                rec_a: r.recommendations[0].map(Price::value),
                rec_b: r.recommendations[1].map(Price::value),
                profit_a: r.profits[0],
                profit_b: r.profits[1],
            })?;
            wrote_any = true;
        }
    }
    if !wrote_any {
        w.write_record(["supergame", "round", "action_a", "action_b", "rec_a", "rec_b", "profit_a", "profit_b"])?;
    }
    w.flush()?;
    Ok(())
}

struct Runner<'a> {
    player: &'a Player,
    rng: ChaCha8Rng,
    algorithm: bool,
}

impl<'a> Runner<'a> {
    fn new(player: &'a Player, params: &MarketParams) -> Self {
        let seed = match player {
            Player::Bot(BotSpec::RandomUniform { seed }) => *seed,
            _ => 0,
        };
        Runner {
            player,
            rng: ChaCha8Rng::seed_from_u64(seed),
            algorithm: player.is_algorithm(params),
        }
    }

    fn act(&mut self, state: PriceState, params: &MarketParams) -> Price {
        match self.player {
            Player::Policy(p) => p.action(state),
            Player::Bot(b) => bot_action(b, state, params, &mut self.rng),
        }
    }
}

/// Plays one supergame of `length` rounds. Sides driven by the algorithm
/// record their action as a recommendation stream.
pub fn simulate_supergame(a: &Player, b: &Player, length: usize, params: &MarketParams) -> Result<Trace> {
    if length == 0 {
        return Err(StrategyError::EmptySupergame);
    }
    for p in [a, b] {
        match p {
            Player::Policy(pol) => pol.check_compatible(params)?,
            Player::Bot(bot) => bot.validate(params)?,
        }
    }
    let mut runners = [Runner::new(a, params), Runner::new(b, params)];
    let mut trace = Trace {
        rounds: Vec::with_capacity(length),
    };
    for _ in 0..length {
        let pa = runners[0].act(trace.next_state(Side::A), params);
        let pb = runners[1].act(trace.next_state(Side::B), params);
        let recs = [
            runners[0].algorithm.then_some(pa),
            runners[1].algorithm.then_some(pb),
        ];
        trace.push([pa, pb], recs, params)?;
    }
    Ok(trace)
}

/// A maximal run of punishment recommendations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PunishmentSpan {
    /// Zero-based round where the run begins.
    pub start: usize,
    pub length: usize,
}

impl PunishmentSpan {
    pub fn end(&self) -> usize {
        self.start + self.length
    }
}

/// Runs of consecutive punishment recommendations in a recommendation
/// stream. A run reaching the end of the stream is reported as well.
pub fn punishment_spans(recommendations: &[Price], params: &MarketParams) -> Vec<PunishmentSpan> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, &r) in recommendations.iter().enumerate() {
        match (r == params.punishment_price, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push(PunishmentSpan { start: s, length: i - s });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push(PunishmentSpan {
            start: s,
            length: recommendations.len() - s,
        });
    }
    spans
}

/// Durations of the algorithm's punishment phases for `side`.
pub fn punishment_phases(trace: &Trace, side: Side, params: &MarketParams) -> Result<Vec<u32>> {
    let recs = trace
        .rounds
        .iter()
        .map(|r| r.recommendations[side.index()])
        .collect::<Option<Vec<_>>>()
        .ok_or(StrategyError::MissingRecommendations(side))?;
    Ok(punishment_spans(&recs, params)
        .into_iter()
        .map(|s| s.length as u32)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: u8) -> Price {
        Price::new(v)
    }

    fn params() -> MarketParams {
        MarketParams::default()
    }

    #[test]
    fn wsls_table() {
        let m = params();
        assert_eq!(wsls_action(PriceState::INITIAL, &m), p(4));
        assert_eq!(wsls_action(PriceState::after(p(4), p(4)), &m), p(4));
        assert_eq!(wsls_action(PriceState::after(p(1), p(1)), &m), p(4));
        assert_eq!(wsls_action(PriceState::after(p(4), p(3)), &m), p(1));
        assert_eq!(wsls_action(PriceState::after(p(2), p(5)), &m), p(1));
    }

    #[test]
    fn wsls_exhaustive() {
        let m = params();
        let mut count = 0;
        for s in PriceState::all(&m) {
            let expected = match s.previous {
                None => 4,
                Some((a, b)) if (a.value(), b.value()) == (4, 4) || (a.value(), b.value()) == (1, 1) => 4,
                Some(_) => 1,
            };
            assert_eq!(wsls_action(s, &m).value(), expected, "{s:?}");
            count += 1;
        }
        assert_eq!(count, 37);
    }

    #[test]
    fn state_index_roundtrip() {
        let m = params();
        for i in 0..PriceState::count(&m) {
            assert_eq!(PriceState::from_index(i, &m).index(&m), i);
        }
    }

    #[test]
    fn cyclic_undercut_actions() {
        let m = params();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cu = BotSpec::CyclicUndercut;
        assert_eq!(bot_action(&cu, PriceState::INITIAL, &m, &mut rng), p(3));
        // after joint punishment the algorithm returns to 4, so undercut it
        assert_eq!(bot_action(&cu, PriceState::after(p(1), p(1)), &m, &mut rng), p(3));
        // after the undercut the algorithm punishes at 1, so match it
        assert_eq!(bot_action(&cu, PriceState::after(p(3), p(4)), &m, &mut rng), p(1));
        assert_eq!(bot_action(&cu, PriceState::after(p(2), p(0)), &m, &mut rng), p(1));
        let probe = BotSpec::ProbeThenUndercut;
        assert_eq!(bot_action(&probe, PriceState::INITIAL, &m, &mut rng), p(4));
        assert_eq!(bot_action(&probe, PriceState::after(p(4), p(4)), &m, &mut rng), p(3));
    }

    #[test]
    fn grim_trigger_fires() {
        let m = params();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = BotSpec::GrimTrigger { collusive: p(4), punish: p(0) };
        assert_eq!(bot_action(&g, PriceState::INITIAL, &m, &mut rng), p(4));
        assert_eq!(bot_action(&g, PriceState::after(p(4), p(4)), &m, &mut rng), p(4));
        assert_eq!(bot_action(&g, PriceState::after(p(4), p(3)), &m, &mut rng), p(0));
        assert_eq!(bot_action(&g, PriceState::after(p(0), p(4)), &m, &mut rng), p(0));
        assert!(BotSpec::GrimTrigger { collusive: p(2), punish: p(3) }.validate(&m).is_err());
    }

    #[test]
    fn random_bot_stays_on_grid_and_is_seeded() {
        let m = params();
        let bot = Player::Bot(BotSpec::RandomUniform { seed: 9 });
        let t1 = simulate_supergame(&bot, &Player::wsls(), 200, &m).unwrap();
        let t2 = simulate_supergame(&bot, &Player::wsls(), 200, &m).unwrap();
        assert_eq!(t1, t2);
        assert!(t1.rounds.iter().all(|r| m.on_grid(r.actions[0])));
        let distinct: std::collections::BTreeSet<_> = t1.rounds.iter().map(|r| r.actions[0]).collect();
        assert_eq!(distinct.len(), 6);
    }

    #[test]
    fn wsls_self_play() {
        let m = params();
        let t = simulate_supergame(&Player::wsls(), &Player::wsls(), 10, &m).unwrap();
        assert!(t.rounds.iter().all(|r| r.actions == [p(4), p(4)] && r.profits == [120, 120]));
        assert_eq!(punishment_phases(&t, Side::A, &m).unwrap(), Vec::<u32>::new());
    }

    #[test]
    fn wsls_vs_cyclic_undercut() {
        let m = params();
        let t = simulate_supergame(&Player::wsls(), &Player::Bot(BotSpec::CyclicUndercut), 21, &m).unwrap();
        for (i, r) in t.rounds.iter().enumerate() {
            let expected = if i % 2 == 0 { [p(4), p(3)] } else { [p(1), p(1)] };
            assert_eq!(r.actions, expected, "round {}", i + 1);
        }
        assert_eq!(t.average_profits(20), [15.0, 105.0]);
        assert_eq!(punishment_phases(&t, Side::A, &m).unwrap(), vec![1; 10]);
        assert!(matches!(
            punishment_phases(&t, Side::B, &m),
            Err(StrategyError::MissingRecommendations(Side::B))
        ));
    }

    #[test]
    fn punishment_runs() {
        let m = params();
        let recs = |v: &[u8]| v.iter().map(|&x| p(x)).collect::<Vec<_>>();
        let lens = |v: &[u8]| punishment_spans(&recs(v), &m).iter().map(|s| s.length).collect::<Vec<_>>();
        assert_eq!(lens(&[4, 4, 1, 4, 4]), vec![1]);
        assert_eq!(lens(&[4, 1, 1, 1, 4]), vec![3]);
        assert_eq!(lens(&[1, 1, 4, 1]), vec![2, 1]);
        assert_eq!(lens(&[]), Vec::<usize>::new());
    }

    #[test]
    fn bot_policies_match_bot_actions() {
        let m = params();
        let cu = BotSpec::CyclicUndercut.to_policy(&m).unwrap();
        assert_eq!(cu.initial_action(), p(3));
        assert_eq!(cu.transition(p(1), p(1)), p(3));
        assert_eq!(cu.transition(p(3), p(4)), p(1));
        assert_eq!(BotSpec::Wsls.to_policy(&m).unwrap(), Policy::wsls(&m));
        assert!(BotSpec::RandomUniform { seed: 1 }.to_policy(&m).is_none());
    }

    #[test]
    fn trace_csv_schema() {
        let m = params();
        let t = simulate_supergame(&Player::wsls(), &Player::Bot(BotSpec::CyclicUndercut), 2, &m).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf, 1).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "supergame,round,action_a,action_b,rec_a,rec_b,profit_a,profit_b\n1,1,4,3,4,,0,180\n1,2,1,1,1,,30,30\n"
        );
    }

    #[test]
    fn policy_rejects_partial_tables() {
        let m = params();
        assert!(Policy::new(&m, p(4), vec![p(1); 35]).is_err());
        assert!(Policy::new(&m, p(4), vec![p(7); 36]).is_err());
        assert!(Policy::new(&m, p(4), vec![p(1); 36]).is_ok());
    }
}
