//! Tabular Q-learning self-play in the simulated duopoly.
//!
//! Two independent learners observe last round's price pair, price
//! simultaneously with ε-greedy exploration (`ε_t = exp(-β t)`), and update
//! their own table from their own profit. Training stops once both greedy
//! policies have been unchanged for a full convergence window.
//!
//! Play is split into supergames: after every period the market restarts
//! in the initial state with `restart_probability`, so the opening row of
//! each table is learned as well. Restarts truncate rather than terminate,
//! so the update still bootstraps from the realized price pair.

use std::io;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{BestResponse, MarketError, MarketParams, Price};
use crate::strategy::{wsls_action, Policy, PriceState};

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid trainer configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T, E = TrainerError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningRate {
    Constant(f64),
    /// `max(floor, 1 / visits)` per state-action cell.
    Hyperbolic { floor: f64 },
}

impl LearningRate {
    fn rate(self, visits: u32) -> f64 {
        match self {
            LearningRate::Constant(a) => a,
            LearningRate::Hyperbolic { floor } => (1.0 / visits.max(1) as f64).max(floor),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QInit {
    /// Every cell starts at the monopoly flow value `π^M / (1 - γ)`.
    Optimistic,
    Zeros,
    /// Uniform on `[low, high)`.
    Random { low: f64, high: f64 },
    Constant(f64),
}

/// Where play resumes after a restart.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestartState {
    /// The opening state of a supergame.
    Initial,
    /// Any state, uniformly, the opening state included.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub learning_rate: LearningRate,
    pub discount: f64,
    /// `β` in `ε_t = exp(-β t)`; `inf` disables exploration.
    pub exploration_decay: f64,
    /// Lower bound on `ε_t`.
    pub exploration_floor: f64,
    pub max_periods: u64,
    pub convergence_window: u64,
    /// Stability periods only count once `ε_t` is at or below this.
    pub convergence_exploration: f64,
    pub q_init: QInit,
    pub restart_probability: f64,
    pub restart_state: RestartState,
    pub seed: u64,
    pub market: MarketParams,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            learning_rate: LearningRate::Constant(0.1),
            discount: 0.95,
            // exp(-β t) falls below 0.002 after about 6.2M periods.
            exploration_decay: 1e-6,
            exploration_floor: 0.0,
            max_periods: 8_000_000,
            convergence_window: 25_000,
            convergence_exploration: 0.002,
            q_init: QInit::Optimistic,
            restart_probability: 0.2,
            restart_state: RestartState::Uniform,
            seed: 0,
            market: MarketParams::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TrainerError::Config(msg));
        match self.learning_rate {
            LearningRate::Constant(a) if !(a > 0.0 && a <= 1.0) => {
                return bad(format!("learning_rate must lie in (0, 1], got {a}"))
            }
            LearningRate::Hyperbolic { floor } if !(floor > 0.0 && floor <= 1.0) => {
                return bad(format!("hyperbolic floor must lie in (0, 1], got {floor}"))
            }
            _ => {}
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad(format!("discount must lie in (0, 1), got {}", self.discount));
        }
        if !(self.exploration_decay > 0.0) {
            return bad(format!("exploration_decay must be positive, got {}", self.exploration_decay));
        }
        if !(0.0..1.0).contains(&self.exploration_floor) {
            return bad(format!("exploration_floor must lie in [0, 1), got {}", self.exploration_floor));
        }
        if !(0.0..=1.0).contains(&self.restart_probability) {
            return bad(format!("restart_probability must lie in [0, 1], got {}", self.restart_probability));
        }
        if self.max_periods == 0 || self.convergence_window == 0 {
            return bad("max_periods and convergence_window must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.convergence_exploration) {
            return bad(format!("convergence_exploration must lie in [0, 1], got {}", self.convergence_exploration));
        }
        if self.convergence_window > self.max_periods {
            return bad("convergence_window exceeds max_periods".into());
        }
        if let QInit::Random { low, high } = self.q_init {
            if !(low.is_finite() && high.is_finite() && low < high) {
                return bad(format!("random init needs finite low < high, got [{low}, {high})"));
            }
        }
        self.market.validate()?;
        Ok(())
    }

    pub fn exploration(&self, period: u64) -> f64 {
        if self.exploration_decay.is_infinite() {
            self.exploration_floor
        } else {
            (-self.exploration_decay * period as f64).exp().max(self.exploration_floor)
        }
    }
}

/// Action values over every state (initial state included) and price.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    market: MarketParams,
    values: Vec<f64>,
}

impl QTable {
    pub fn filled(params: &MarketParams, value: f64) -> Self {
        QTable {
            market: params.clone(),
            values: vec![value; PriceState::count(params) * params.grid_len()],
        }
    }

    pub fn initialized<R: Rng + ?Sized>(cfg: &TrainerConfig, rng: &mut R) -> Self {
        let params = &cfg.market;
        match cfg.q_init {
            QInit::Optimistic => {
                let flow = params.shared_profit(params.monopoly_price) as f64;
                Self::filled(params, flow / (1.0 - cfg.discount))
            }
            QInit::Zeros => Self::filled(params, 0.0),
            QInit::Constant(v) => Self::filled(params, v),
            QInit::Random { low, high } => {
                let mut q = Self::filled(params, 0.0);
                for v in &mut q.values {
                    *v = rng.random_range(low..high);
                }
                q
            }
        }
    }

    /// Table holding the optimal action values against a fixed opponent.
    pub fn from_best_response(params: &MarketParams, br: &BestResponse) -> Self {
        QTable {
            market: params.clone(),
            values: br.action_values.clone(),
        }
    }

    pub fn market(&self) -> &MarketParams {
        &self.market
    }

    fn cell(&self, state: PriceState, action: Price) -> usize {
        state.index(&self.market) * self.market.grid_len() + self.market.index_of(action)
    }

    pub fn get(&self, state: PriceState, action: Price) -> f64 {
        self.values[self.cell(state, action)]
    }

    pub fn set(&mut self, state: PriceState, action: Price, value: f64) {
        let c = self.cell(state, action);
        self.values[c] = value;
    }

    pub fn row(&self, state: PriceState) -> &[f64] {
        let n = self.market.grid_len();
        let s = state.index(&self.market);
        &self.values[s * n..(s + 1) * n]
    }

    pub fn max_value(&self, state: PriceState) -> f64 {
        self.row(state).iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Argmax over prices; ties go to the lowest price.
    pub fn greedy_action(&self, state: PriceState) -> Price {
        self.market.price_at(argmax_lowest(self.row(state)))
    }

    /// `Q(s,a) ← (1-α) Q(s,a) + α (r + γ max_a' Q(s',a'))`.
    pub fn update(&mut self, state: PriceState, action: Price, reward: f64, next: PriceState, alpha: f64, gamma: f64) {
        let target = reward + gamma * self.max_value(next);
        let c = self.cell(state, action);
        self.values[c] = (1.0 - alpha) * self.values[c] + alpha * target;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// One Q-learning step on a single cell.
pub fn q_update(q: &mut QTable, state: PriceState, action: Price, reward: f64, next: PriceState, alpha: f64, gamma: f64) {
    q.update(state, action, reward, next, alpha, gamma);
}

/// The greedy policy of a table.
pub fn greedy_policy(q: &QTable) -> Policy {
    let params = q.market();
    Policy::from_fn(params, q.greedy_action(PriceState::INITIAL), |own, opp| {
        q.greedy_action(PriceState::after(own, opp))
    })
}

/// True iff `policy` opens at the monopoly price and plays win-stay
/// lose-shift in every state.
pub fn is_wsls(policy: &Policy, params: &MarketParams) -> bool {
    policy.check_compatible(params).is_ok()
        && policy.initial_action() == params.monopoly_price
        && PriceState::all(params)
            .skip(1)
            .all(|s| policy.action(s) == wsls_action(s, params))
}

/// Deterministic path of two policies from the initial state: a transient
/// prefix followed by a cycle of price pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitPath {
    pub prefix: Vec<[Price; 2]>,
    pub cycle: Vec<[Price; 2]>,
}

impl LimitPath {
    pub fn of(a: &Policy, b: &Policy, params: &MarketParams) -> Self {
        let mut seen = vec![None; PriceState::count(params)];
        let mut pairs: Vec<[Price; 2]> = Vec::new();
        let mut state = PriceState::INITIAL;
        let start = loop {
            let idx = state.index(params);
            if let Some(t) = seen[idx] {
                break t;
            }
            seen[idx] = Some(pairs.len());
            let pa = a.action(state);
            let pb = b.action(state.swapped());
            pairs.push([pa, pb]);
            state = PriceState::after(pa, pb);
        };
        LimitPath {
            cycle: pairs.split_off(start),
            prefix: pairs,
        }
    }

    pub fn average_profits(&self, params: &MarketParams) -> [f64; 2] {
        let n = self.cycle.len() as f64;
        let mut sum = [0.0; 2];
        for [a, b] in &self.cycle {
            sum[0] += params.profit(*a, *b) as f64;
            sum[1] += params.profit(*b, *a) as f64;
        }
        [sum[0] / n, sum[1] / n]
    }

    pub fn average_market_price(&self) -> f64 {
        self.cycle.iter().map(|[a, b]| a.min(b).value() as f64).sum::<f64>() / self.cycle.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingDiagnostics {
    pub seed: u64,
    pub converged: bool,
    /// Periods run; equals the convergence period when `converged`.
    pub periods_to_convergence: u64,
    pub limiting_policies: [Policy; 2],
    pub wsls: [bool; 2],
    pub limit_path: LimitPath,
    pub average_limit_profit: [f64; 2],
    pub average_limit_price: f64,
}

impl TrainingDiagnostics {
    pub fn is_wsls_pair(&self) -> bool {
        self.wsls[0] && self.wsls[1]
    }

    /// The limiting policy table, one row per state.
    pub fn write_policy_csv<W: io::Write>(&self, writer: W, params: &MarketParams) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["state", "own_price", "opponent_price", "action_a", "action_b"])?;
        for (i, s) in PriceState::all(params).enumerate() {
            let (own, opp) = match s.previous {
                None => (String::new(), String::new()),
                Some((a, b)) => (a.to_string(), b.to_string()),
            };
            w.write_record([
                i.to_string(),
                own,
                opp,
                self.limiting_policies[0].action(s).to_string(),
                self.limiting_policies[1].action(s).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn train_selfplay(cfg: &TrainerConfig) -> Result<TrainingDiagnostics> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tables = [QTable::initialized(cfg, &mut rng), QTable::initialized(cfg, &mut rng)];
    Ok(run(cfg, tables, rng).0)
}

/// Continues training from given tables; returns the final tables too.
pub fn train_selfplay_from(cfg: &TrainerConfig, tables: [QTable; 2]) -> Result<(TrainingDiagnostics, [QTable; 2])> {
    cfg.validate()?;
    for t in &tables {
        if t.market() != &cfg.market {
            return Err(TrainerError::Config("warm-start table built for a different market".into()));
        }
    }
    let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(run(cfg, tables, rng))
}

fn run(cfg: &TrainerConfig, mut tables: [QTable; 2], mut rng: ChaCha8Rng) -> (TrainingDiagnostics, [QTable; 2]) {
    let params = &cfg.market;
    let n = params.grid_len();
    let n_states = PriceState::count(params);
    let mut greedy: [Vec<Price>; 2] = [
        PriceState::all(params).map(|s| tables[0].greedy_action(s)).collect(),
        PriceState::all(params).map(|s| tables[1].greedy_action(s)).collect(),
    ];
    let mut visits = [vec![0u32; n_states * n], vec![0u32; n_states * n]];

    let mut state = PriceState::INITIAL;
    let mut stable = 0u64;
    let mut converged = false;
    let mut periods = 0u64;
    for t in 0..cfg.max_periods {
        periods = t + 1;
        let eps = cfg.exploration(t);
        let states = [state, state.swapped()];
        let mut actions = [params.min_price(); 2];
        for i in 0..2 {
            let explore = eps > 0.0 && rng.random::<f64>() < eps;
            actions[i] = if explore {
                params.price_at(rng.random_range(0..n))
            } else {
                greedy[i][states[i].index(params)]
            };
        }
        let next = PriceState::after(actions[0], actions[1]);
        let nexts = [next, next.swapped()];
        let mut changed = false;
        for i in 0..2 {
            let reward = params.profit(actions[i], actions[1 - i]) as f64;
            let s_idx = states[i].index(params);
            let cell = s_idx * n + params.index_of(actions[i]);
            visits[i][cell] = visits[i][cell].saturating_add(1);
            let alpha = cfg.learning_rate.rate(visits[i][cell]);
            tables[i].update(states[i], actions[i], reward, nexts[i], alpha, cfg.discount);
            let g = tables[i].greedy_action(states[i]);
            if g != greedy[i][s_idx] {
                greedy[i][s_idx] = g;
                changed = true;
            }
        }
        if changed || eps > cfg.convergence_exploration {
            stable = 0;
        } else {
            stable += 1;
            if stable >= cfg.convergence_window {
                converged = true;
                break;
            }
        }
        state = if cfg.restart_probability > 0.0 && rng.random::<f64>() < cfg.restart_probability {
            match cfg.restart_state {
                RestartState::Initial => PriceState::INITIAL,
                RestartState::Uniform => PriceState::from_index(rng.random_range(0..n_states), params),
            }
        } else {
            next
        };
    }

    let policies = [greedy_policy(&tables[0]), greedy_policy(&tables[1])];
    let path = LimitPath::of(&policies[0], &policies[1], params);
    let diag = TrainingDiagnostics {
        seed: cfg.seed,
        converged,
        periods_to_convergence: periods,
        wsls: [is_wsls(&policies[0], params), is_wsls(&policies[1], params)],
        average_limit_profit: path.average_profits(params),
        average_limit_price: path.average_market_price(),
        limit_path: path,
        limiting_policies: policies,
    };
    (diag, tables)
}

/// Outcome of training one configuration over many seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub config: TrainerConfig,
    pub seeds: Range<u64>,
    pub runs: usize,
    pub converged: usize,
    pub wsls_pairs: usize,
    /// Converged runs whose limit cycle averages a market price of at least 3.5.
    pub high_price_converged: usize,
    pub mean_limit_price: f64,
    pub diagnostics: Vec<TrainingDiagnostics>,
}

impl BatchReport {
    pub fn high_price_share(&self) -> f64 {
        if self.converged == 0 {
            0.0
        } else {
            self.high_price_converged as f64 / self.converged as f64
        }
    }
}

/// Trains `cfg` once per seed in parallel; `cfg.seed` is overridden.
pub fn train_batch(cfg: &TrainerConfig, seeds: Range<u64>) -> Result<BatchReport> {
    cfg.validate()?;
    let diagnostics: Vec<TrainingDiagnostics> = seeds
        .clone()
        .into_par_iter()
        .map(|seed| {
            let c = TrainerConfig { seed, ..cfg.clone() };
            train_selfplay(&c)
        })
        .collect::<Result<_>>()?;
    let converged: Vec<_> = diagnostics.iter().filter(|d| d.converged).collect();
    Ok(BatchReport {
        config: cfg.clone(),
        seeds,
        runs: diagnostics.len(),
        converged: converged.len(),
        wsls_pairs: diagnostics.iter().filter(|d| d.converged && d.is_wsls_pair()).count(),
        high_price_converged: converged.iter().filter(|d| d.average_limit_price >= 3.5).count(),
        mean_limit_price: diagnostics.iter().map(|d| d.average_limit_price).sum::<f64>() / diagnostics.len().max(1) as f64,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{best_response_value, DiscountFactor};

    fn p(v: u8) -> Price {
        Price::new(v)
    }

    #[test]
    fn update_examples() {
        let m = MarketParams::default();
        let s = PriceState::after(p(4), p(4));
        let next = PriceState::after(p(3), p(4));

        let mut q = QTable::filled(&m, 0.0);
        q.update(s, p(4), 120.0, next, 1.0, 0.95);
        assert_eq!(q.get(s, p(4)), 120.0);

        let mut q = QTable::filled(&m, 7.0);
        let before = q.clone();
        q.update(s, p(4), 120.0, next, 0.0, 0.95);
        assert_eq!(q, before);

        let mut q = QTable::filled(&m, 100.0);
        q_update(&mut q, s, p(4), 120.0, next, 0.5, 0.95);
        assert!((q.get(s, p(4)) - 157.5).abs() < 1e-12);
        let touched = q.values().iter().filter(|&&v| v != 100.0).count();
        assert_eq!(touched, 1);
    }

    #[test]
    fn greedy_ties_go_low() {
        let m = MarketParams::default();
        let q = QTable::filled(&m, 3.0);
        let pol = greedy_policy(&q);
        assert_eq!(pol.initial_action(), p(0));
        assert!(PriceState::all(&m).all(|s| pol.action(s) == p(0)));

        let mut q = QTable::filled(&m, 0.0);
        q.set(PriceState::INITIAL, p(2), 5.0);
        q.set(PriceState::INITIAL, p(4), 5.0);
        assert_eq!(q.greedy_action(PriceState::INITIAL), p(2));
    }

    #[test]
    fn hand_built_wsls_table() {
        let m = MarketParams::default();
        let mut q = QTable::filled(&m, 0.0);
        for s in PriceState::all(&m) {
            q.set(s, wsls_action(s, &m), 1.0);
        }
        let pol = greedy_policy(&q);
        assert!(is_wsls(&pol, &m));
        assert_eq!(pol, Policy::wsls(&m));
    }

    #[test]
    fn wsls_predicate() {
        let m = MarketParams::default();
        let w = Policy::wsls(&m);
        assert!(is_wsls(&w, &m));
        assert!(!is_wsls(&w.clone().with_transition(p(2), p(2), p(4)), &m));
        assert!(!is_wsls(&w.clone().with_initial_action(p(3)), &m));
        assert!(!is_wsls(&Policy::constant(&m, p(4)), &m));
    }

    #[test]
    fn limit_path_of_wsls() {
        let m = MarketParams::default();
        let w = Policy::wsls(&m);
        let path = LimitPath::of(&w, &w, &m);
        assert_eq!(path.prefix, vec![[p(4), p(4)]]);
        assert_eq!(path.cycle, vec![[p(4), p(4)]]);
        assert_eq!(path.average_profits(&m), [120.0, 120.0]);
        let cu = crate::strategy::BotSpec::CyclicUndercut.to_policy(&m).unwrap();
        let path = LimitPath::of(&w, &cu, &m);
        assert_eq!(path.prefix, vec![[p(4), p(3)]]);
        assert_eq!(path.cycle, vec![[p(1), p(1)], [p(4), p(3)]]);
        assert_eq!(path.average_profits(&m), [15.0, 105.0]);
        assert_eq!(path.average_market_price(), 2.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainerConfig::default().validate().is_ok());
        let bad = TrainerConfig { learning_rate: LearningRate::Constant(0.0), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainerConfig { discount: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainerConfig { convergence_window: 10, max_periods: 5, ..Default::default() };
        assert!(bad.validate().is_err());
        for c in [-0.1, 1.5, f64::NAN] {
            let bad = TrainerConfig { convergence_exploration: c, ..Default::default() };
            assert!(bad.validate().is_err(), "{c}");
        }
        let json = r#"{"learning_rate":{"constant":0.1},"max_periods":1000,"convergence_window":100}"#;
        let cfg: TrainerConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.learning_rate, LearningRate::Constant(0.1));
        assert_eq!(cfg.discount, 0.95);
    }

    #[test]
    fn absorbing_at_wsls_without_exploration() {
        let m = MarketParams::default();
        let br = best_response_value(&Policy::wsls(&m), DiscountFactor::new(0.95).unwrap(), PriceState::INITIAL, &m).unwrap();
        let q = QTable::from_best_response(&m, &br);
        assert!(is_wsls(&greedy_policy(&q), &m));
        let cfg = TrainerConfig {
            exploration_decay: f64::INFINITY,
            max_periods: 20_000,
            convergence_window: 5_000,
            ..Default::default()
        };
        let (diag, tables) = train_selfplay_from(&cfg, [q.clone(), q]).unwrap();
        assert!(diag.converged);
        assert!(diag.is_wsls_pair());
        assert!(tables.iter().all(|t| is_wsls(&greedy_policy(t), &m)));
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainerConfig {
            max_periods: 50_000,
            convergence_window: 2_000,
            exploration_decay: 2e-4,
            seed: 11,
            ..Default::default()
        };
        let a = train_selfplay(&cfg).unwrap();
        let b = train_selfplay(&cfg).unwrap();
        assert_eq!(a, b);
        if a.converged {
            assert!(a.average_limit_profit.iter().all(|&v| v <= 120.0));
        }
    }
}
