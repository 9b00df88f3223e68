//! The Bertrand stage game on an integer price grid.
//!
//! Two firms with zero marginal cost face `m` unit-demand consumers who buy
//! from the cheapest firm as long as its price does not exceed the
//! reservation price. Ties split the market evenly. Everything here is a pure
//! function of [`MarketParams`]; payoffs are exact integers and the
//! incentive thresholds are exact rationals.

use std::collections::BTreeSet;
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::strategy::{Policy, PriceState};

/// Experimental currency units.
pub type Ecu = i64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("price {value} is off the grid [{min}, {max}]")]
    OffGrid { value: i64, min: u8, max: u8 },
    #[error("invalid market parameters: {0}")]
    InvalidParams(String),
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T, E = MarketError> = std::result::Result<T, E>;

/// An integer price in ECU per unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Price(u8);

impl Price {
    pub const fn new(value: u8) -> Self {
        Price(value)
    }

    pub const fn value(self) -> u8 {
        self.0
    }

    pub fn ecu(self) -> Ecu {
        self.0 as Ecu
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketParams {
    /// Number of unit-demand consumers; must be even.
    pub consumers: u32,
    pub reservation_price: Price,
    /// Inclusive `[min, max]` bounds of the price grid.
    pub price_grid: [u8; 2],
    pub monopoly_price: Price,
    pub punishment_price: Price,
    pub severest_nash_price: Price,
}

impl Default for MarketParams {
    fn default() -> Self {
        MarketParams {
            consumers: 60,
            reservation_price: Price(4),
            price_grid: [0, 5],
            monopoly_price: Price(4),
            punishment_price: Price(1),
            severest_nash_price: Price(0),
        }
    }
}

impl MarketParams {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.price_grid;
        if lo > hi {
            return Err(MarketError::InvalidParams(format!("empty price grid [{lo}, {hi}]")));
        }
        if self.consumers == 0 || !self.consumers.is_multiple_of(2) {
            return Err(MarketError::InvalidParams(format!(
                "consumers must be a positive even count, got {}",
                self.consumers
            )));
        }
        for (name, p) in [
            ("reservation_price", self.reservation_price),
            ("monopoly_price", self.monopoly_price),
            ("punishment_price", self.punishment_price),
            ("severest_nash_price", self.severest_nash_price),
        ] {
            if !self.on_grid(p) {
                return Err(MarketError::InvalidParams(format!("{name} {p} is off the grid")));
            }
        }
        if self.monopoly_price > self.reservation_price {
            return Err(MarketError::InvalidParams(
                "monopoly_price exceeds the reservation price".into(),
            ));
        }
        let nash = enumerate_pure_nash(self);
        for (name, p) in [
            ("punishment_price", self.punishment_price),
            ("severest_nash_price", self.severest_nash_price),
        ] {
            if !nash.contains(&(p, p)) {
                return Err(MarketError::InvalidParams(format!(
                    "{name} {p} is not a symmetric stage-game equilibrium"
                )));
            }
        }
        Ok(())
    }

    pub fn min_price(&self) -> Price {
        Price(self.price_grid[0])
    }

    pub fn max_price(&self) -> Price {
        Price(self.price_grid[1])
    }

    pub fn grid_len(&self) -> usize {
        (self.price_grid[1] - self.price_grid[0]) as usize + 1
    }

    pub fn grid(&self) -> impl DoubleEndedIterator<Item = Price> + Clone {
        (self.price_grid[0]..=self.price_grid[1]).map(Price)
    }

    pub fn on_grid(&self, p: Price) -> bool {
        (self.price_grid[0]..=self.price_grid[1]).contains(&p.0)
    }

    pub fn check(&self, p: Price) -> Result<Price> {
        self.price(p.0 as i64)
    }

    /// Validates a raw integer as a grid price.
    pub fn price(&self, value: i64) -> Result<Price> {
        let [min, max] = self.price_grid;
        if value < min as i64 || value > max as i64 {
            return Err(MarketError::OffGrid { value, min, max });
        }
        Ok(Price(value as u8))
    }

    /// Position of `p` on the grid, starting at zero.
    pub fn index_of(&self, p: Price) -> usize {
        (p.0 - self.price_grid[0]) as usize
    }

    pub fn price_at(&self, index: usize) -> Price {
        Price(self.price_grid[0] + index as u8)
    }

    /// Per-firm profit when both firms charge `price`.
    pub fn shared_profit(&self, price: Price) -> Ecu {
        if price > self.reservation_price {
            0
        } else {
            price.ecu() * (self.consumers / 2) as Ecu
        }
    }

    /// Profit of the sole seller at `price`.
    pub fn sole_profit(&self, price: Price) -> Ecu {
        if price > self.reservation_price {
            0
        } else {
            price.ecu() * self.consumers as Ecu
        }
    }

    /// Own profit against a given opponent price, without grid checks.
    pub fn profit(&self, own: Price, opponent: Price) -> Ecu {
        match own.cmp(&opponent) {
            std::cmp::Ordering::Less => self.sole_profit(own),
            std::cmp::Ordering::Equal => self.shared_profit(own),
            std::cmp::Ordering::Greater => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub prices: [Price; 2],
    pub quantities: [u32; 2],
    pub profits: [Ecu; 2],
    pub market_price: Price,
}

pub fn stage_outcome(p1: Price, p2: Price, params: &MarketParams) -> Result<StageOutcome> {
    params.check(p1)?;
    params.check(p2)?;
    let market = p1.min(p2);
    let quantities = if market > params.reservation_price {
        [0, 0]
    } else if p1 == p2 {
        [params.consumers / 2; 2]
    } else if p1 < p2 {
        [params.consumers, 0]
    } else {
        [0, params.consumers]
    };
    Ok(StageOutcome {
        prices: [p1, p2],
        quantities,
        profits: [
            p1.ecu() * quantities[0] as Ecu,
            p2.ecu() * quantities[1] as Ecu,
        ],
        market_price: market,
    })
}

/// The lower of the two prices.
pub fn market_price(p1: Price, p2: Price) -> Price {
    p1.min(p2)
}

/// All pure-strategy Nash equilibria of the stage game, found by checking
/// every unilateral deviation from every profile.
pub fn enumerate_pure_nash(params: &MarketParams) -> BTreeSet<(Price, Price)> {
    let best_reply_profit = |opponent: Price| {
        params
            .grid()
            .map(|own| params.profit(own, opponent))
            .max()
            .unwrap_or(0)
    };
    let mut out = BTreeSet::new();
    for p1 in params.grid() {
        for p2 in params.grid() {
            if params.profit(p1, p2) >= best_reply_profit(p2)
                && params.profit(p2, p1) >= best_reply_profit(p1)
            {
                out.insert((p1, p2));
            }
        }
    }
    out
}

/// Smallest continuation probability at which grim-trigger collusion at
/// `collusive_price` survives a one-step undercut, with reversion to the
/// severest Nash price forever after.
pub fn grim_trigger_delta_min(collusive_price: Price, params: &MarketParams) -> Result<Ratio<i64>> {
    params.check(collusive_price)?;
    if collusive_price.value() <= params.min_price().value() + 1 {
        return Err(MarketError::Domain(format!(
            "collusive price {collusive_price} leaves no strictly profitable undercut"
        )));
    }
    if collusive_price > params.reservation_price {
        return Err(MarketError::Domain(format!(
            "collusive price {collusive_price} exceeds the reservation price"
        )));
    }
    let flow = params.shared_profit(collusive_price);
    let deviation = params.sole_profit(Price(collusive_price.value() - 1));
    let punishment = params.shared_profit(params.severest_nash_price);
    if deviation <= punishment {
        return Err(MarketError::Domain(format!(
            "collusive price {collusive_price} has no undercut gain over punishment"
        )));
    }
    // flow / (1 - d) = deviation + d * punishment / (1 - d)
    Ok(Ratio::new(deviation - flow, deviation - punishment))
}

/// Payoffs to adhering versus undercutting once against a one-period
/// punishment rule, expressed over the two periods where they differ.
pub fn wsls_incentive_terms(params: &MarketParams) -> (Ecu, Ecu, Ecu) {
    let collude = params.shared_profit(params.monopoly_price);
    let deviate = params.sole_profit(Price(params.monopoly_price.value().saturating_sub(1)));
    let punish = params.shared_profit(params.punishment_price);
    (collude, deviate, punish)
}

/// Threshold `d*` solving `c + d c = dev + d pun` for the win-stay
/// lose-shift rule with a single punishment round.
pub fn wsls_ic_delta_min(params: &MarketParams) -> Result<Ratio<i64>> {
    let (collude, deviate, punish) = wsls_incentive_terms(params);
    if collude <= punish {
        return Err(MarketError::Domain(
            "punishment is not worse than collusion".into(),
        ));
    }
    Ok(Ratio::new(deviate - collude, collude - punish))
}

/// Whether adhering beats a one-shot undercut followed by one punishment
/// round at continuation probability `delta`.
pub fn wsls_incentive_compatible(delta: DiscountFactor, params: &MarketParams) -> bool {
    let (collude, deviate, punish) = wsls_incentive_terms(params);
    let d = delta.value();
    collude as f64 + d * collude as f64 >= deviate as f64 + d * punish as f64
}

/// Continuation probability of a supergame.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct DiscountFactor(f64);

impl DiscountFactor {
    pub fn new(delta: f64) -> Result<Self> {
        if delta > 0.0 && delta < 1.0 {
            Ok(DiscountFactor(delta))
        } else {
            Err(MarketError::Domain(format!(
                "discount factor must lie in (0, 1), got {delta}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for DiscountFactor {
    fn default() -> Self {
        DiscountFactor(0.95)
    }
}

impl TryFrom<f64> for DiscountFactor {
    type Error = MarketError;

    fn try_from(value: f64) -> Result<Self> {
        DiscountFactor::new(value)
    }
}

impl From<DiscountFactor> for f64 {
    fn from(d: DiscountFactor) -> f64 {
        d.0
    }
}

/// Stopping rule for value iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValueIteration {
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for ValueIteration {
    fn default() -> Self {
        ValueIteration {
            tolerance: 1e-9,
            max_sweeps: 10_000,
        }
    }
}

/// Solution of the single-agent decision problem against a fixed opponent.
#[derive(Clone, Debug)]
pub struct BestResponse {
    /// Optimal value from the requested start state.
    pub value: f64,
    /// Greedy policy; ties resolve toward the lowest price.
    pub policy: Policy,
    /// Optimal value of every state, indexed by [`PriceState::index`].
    pub state_values: Vec<f64>,
    /// `Q(s, a)` laid out as `state * grid_len + action_index`.
    pub action_values: Vec<f64>,
    pub sweeps: usize,
}

impl BestResponse {
    pub fn action_value(&self, state: PriceState, action: Price, params: &MarketParams) -> f64 {
        self.action_values[state.index(params) * params.grid_len() + params.index_of(action)]
    }
}

pub fn best_response_value(
    opponent: &Policy,
    delta: DiscountFactor,
    start: PriceState,
    params: &MarketParams,
) -> Result<BestResponse> {
    best_response_value_with(opponent, delta, start, params, ValueIteration::default())
}

/// Value iteration over the last-round-prices decision process induced by
/// a fixed opponent policy.
pub fn best_response_value_with(
    opponent: &Policy,
    delta: DiscountFactor,
    start: PriceState,
    params: &MarketParams,
    stop: ValueIteration,
) -> Result<BestResponse> {
    opponent.check_compatible(params)?;
    start.check(params)?;
    let n = params.grid_len();
    let n_states = PriceState::count(params);
    let d = delta.value();

    // Opponent action and next-state index are fixed per (state, action).
    let opp_actions: Vec<Price> = (0..n_states)
        .map(|s| opponent.action(PriceState::from_index(s, params).swapped()))
        .collect();

    let mut values = vec![0.0f64; n_states];
    let mut q = vec![0.0f64; n_states * n];
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let mut delta_max = 0.0f64;
        let mut next_values = values.clone();
        for s in 0..n_states {
            let b = opp_actions[s];
            let mut best = f64::NEG_INFINITY;
            for (ai, a) in params.grid().enumerate() {
                let next = PriceState::after(a, b).index(params);
                let qv = params.profit(a, b) as f64 + d * values[next];
                q[s * n + ai] = qv;
                best = best.max(qv);
            }
            delta_max = delta_max.max((best - values[s]).abs());
            next_values[s] = best;
        }
        values = next_values;
        if delta_max < stop.tolerance || sweeps >= stop.max_sweeps {
            break;
        }
    }
    // Refresh action values against the final state values.
    for s in 0..n_states {
        let b = opp_actions[s];
        for (ai, a) in params.grid().enumerate() {
            let next = PriceState::after(a, b).index(params);
            q[s * n + ai] = params.profit(a, b) as f64 + d * values[next];
        }
    }

    let greedy = |s: usize| -> Price {
        let row = &q[s * n..(s + 1) * n];
        let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tie = stop.tolerance.max(1e-12) * (1.0 + best.abs()) * 10.0;
        let ai = row.iter().position(|&v| v >= best - tie).unwrap_or(0);
        params.price_at(ai)
    };
    let initial = greedy(0);
    let policy = Policy::from_fn(params, initial, |own, opp| {
        greedy(PriceState::after(own, opp).index(params))
    });

    Ok(BestResponse {
        value: values[start.index(params)],
        policy,
        state_values: values,
        action_values: q,
        sweeps,
    })
}

/// Exact discounted value of `own` playing against `opponent` from `start`,
/// computed from the deterministic joint path (a finite prefix followed by
/// a cycle).
pub fn policy_value(
    own: &Policy,
    opponent: &Policy,
    delta: DiscountFactor,
    start: PriceState,
    params: &MarketParams,
) -> Result<f64> {
    own.check_compatible(params)?;
    opponent.check_compatible(params)?;
    start.check(params)?;
    let d = delta.value();
    let mut seen: Vec<Option<usize>> = vec![None; PriceState::count(params)];
    let mut rewards: Vec<f64> = Vec::new();
    let mut state = start;
    let cycle_start = loop {
        let idx = state.index(params);
        if let Some(t) = seen[idx] {
            break t;
        }
        seen[idx] = Some(rewards.len());
        let a = own.action(state);
        let b = opponent.action(state.swapped());
        rewards.push(params.profit(a, b) as f64);
        state = PriceState::after(a, b);
    };
    let mut value = 0.0;
    let mut discount = 1.0;
    for r in &rewards[..cycle_start] {
        value += discount * r;
        discount *= d;
    }
    let cycle = &rewards[cycle_start..];
    let mut cycle_sum = 0.0;
    let mut cd = 1.0;
    for r in cycle {
        cycle_sum += cd * r;
        cd *= d;
    }
    value += discount * cycle_sum / (1.0 - cd);
    Ok(value)
}

/// A Euro amount held in whole cents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Euro {
    cents: i64,
}

impl Euro {
    pub const fn from_cents(cents: i64) -> Self {
        Euro { cents }
    }

    pub fn cents(self) -> i64 {
        self.cents
    }

    pub fn as_f64(self) -> f64 {
        self.cents as f64 / 100.0
    }
}

impl std::ops::Add for Euro {
    type Output = Euro;
    fn add(self, rhs: Euro) -> Euro {
        Euro::from_cents(self.cents + rhs.cents)
    }
}

impl fmt::Display for Euro {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.cents / 100, self.cents % 100)
    }
}

impl Serialize for Euro {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Euro {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        if !v.is_finite() || v < 0.0 {
            return Err(serde::de::Error::custom("euro amount must be finite and non-negative"));
        }
        Ok(Euro::from_cents((v * 100.0).round() as i64))
    }
}

/// Converts ECU to Euro at `rate` ECU per Euro, rounding half-up to cents.
pub fn ecu_to_euro(amount: Ecu, rate: Ecu) -> Result<Euro> {
    if amount < 0 {
        return Err(MarketError::Domain(format!("negative ECU amount {amount}")));
    }
    if rate <= 0 {
        return Err(MarketError::Domain(format!("exchange rate must be positive, got {rate}")));
    }
    let scaled = amount
        .checked_mul(200)
        .ok_or_else(|| MarketError::Domain("ECU amount overflows".into()))?;
    Ok(Euro::from_cents((scaled + rate) / (2 * rate)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: u8) -> Price {
        Price::new(v)
    }

    #[test]
    fn instruction_examples() {
        let m = MarketParams::default();
        assert_eq!(stage_outcome(p(3), p(3), &m).unwrap().profits, [90, 90]);
        assert_eq!(stage_outcome(p(1), p(2), &m).unwrap().profits, [60, 0]);
        assert_eq!(stage_outcome(p(5), p(5), &m).unwrap().profits, [0, 0]);
        assert_eq!(stage_outcome(p(4), p(4), &m).unwrap().profits, [120, 120]);
        let o = stage_outcome(p(5), p(5), &m).unwrap();
        assert_eq!(o.quantities, [0, 0]);
        assert_eq!(o.market_price, p(5));
    }

    #[test]
    fn off_grid_price_is_rejected() {
        let m = MarketParams::default();
        assert!(matches!(
            stage_outcome(p(6), p(1), &m),
            Err(MarketError::OffGrid { value: 6, .. })
        ));
        assert!(m.price(-1).is_err());
        assert_eq!(m.price(5).unwrap(), p(5));
    }

    #[test]
    fn market_price_is_min() {
        assert_eq!(market_price(p(4), p(3)), p(3));
        assert_eq!(market_price(p(0), p(0)), p(0));
        assert_eq!(market_price(p(5), p(2)), p(2));
    }

    #[test]
    fn nash_set_default() {
        let set = enumerate_pure_nash(&MarketParams::default());
        let expected: BTreeSet<_> = [(p(0), p(0)), (p(1), p(1)), (p(2), p(2))].into();
        assert_eq!(set, expected);
        assert!(!set.contains(&(p(3), p(3))));
        assert!(!set.contains(&(p(0), p(1))));
    }

    #[test]
    fn grim_thresholds() {
        let m = MarketParams::default();
        assert_eq!(grim_trigger_delta_min(p(4), &m).unwrap(), Ratio::new(1, 3));
        assert_eq!(grim_trigger_delta_min(p(3), &m).unwrap(), Ratio::new(1, 4));
        assert_eq!(grim_trigger_delta_min(p(2), &m).unwrap(), Ratio::from_integer(0));
        assert!(matches!(grim_trigger_delta_min(p(1), &m), Err(MarketError::Domain(_))));
        assert!(grim_trigger_delta_min(p(5), &m).is_err());
    }

    #[test]
    fn grim_threshold_balances_payoffs() {
        let m = MarketParams::default();
        for c in [2u8, 3, 4] {
            let d = grim_trigger_delta_min(p(c), &m).unwrap();
            let flow = Ratio::from_integer(m.shared_profit(p(c)));
            let dev = Ratio::from_integer(m.sole_profit(p(c - 1)));
            // flow / (1 - d) == dev when the punishment profit is zero
            assert_eq!(flow, dev * (Ratio::from_integer(1) - d));
        }
    }

    #[test]
    fn wsls_threshold() {
        let m = MarketParams::default();
        let d = wsls_ic_delta_min(&m).unwrap();
        assert_eq!(d, Ratio::new(2, 3));
        let lhs = Ratio::from_integer(120) + d * 120;
        let rhs = Ratio::from_integer(180) + d * 30;
        assert_eq!(lhs, rhs);
        assert!(wsls_incentive_compatible(DiscountFactor::new(0.95).unwrap(), &m));
        assert!(!wsls_incentive_compatible(DiscountFactor::new(0.5).unwrap(), &m));
    }

    #[test]
    fn euro_conversion() {
        assert_eq!(ecu_to_euro(140, 140).unwrap(), Euro::from_cents(100));
        assert_eq!(ecu_to_euro(0, 140).unwrap(), Euro::from_cents(0));
        assert_eq!(ecu_to_euro(2400, 140).unwrap().to_string(), "17.14");
        // exactly half a cent rounds up
        assert_eq!(ecu_to_euro(1, 200).unwrap(), Euro::from_cents(1));
        assert!(ecu_to_euro(-1, 140).is_err());
        assert!(ecu_to_euro(1, 0).is_err());
    }

    #[test]
    fn discount_factor_bounds() {
        assert!(DiscountFactor::new(0.0).is_err());
        assert!(DiscountFactor::new(1.0).is_err());
        assert!(serde_json::from_str::<DiscountFactor>("1.5").is_err());
        assert_eq!(serde_json::from_str::<DiscountFactor>("0.9").unwrap().value(), 0.9);
    }

    #[test]
    fn params_validation() {
        assert!(MarketParams::default().validate().is_ok());
        let odd = MarketParams { consumers: 61, ..Default::default() };
        assert!(odd.validate().is_err());
        let bad_punish = MarketParams { punishment_price: p(3), ..Default::default() };
        assert!(bad_punish.validate().is_err());
        let high = MarketParams { monopoly_price: p(5), ..Default::default() };
        assert!(high.validate().is_err());
    }
}
