//! Descriptive metrics over exported session data.
//!
//! Every metric reads a validated [`RoundTable`] (the `rounds` export) and
//! returns a [`MetricReport`] of flat rows. Rows carry their grouping keys,
//! the statistic name, the value and the number of units aggregated.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::export::{BeliefRow, RoundRow, BELIEF_COLUMNS, ROUND_COLUMNS};
use crate::market::{MarketParams, Price};
use crate::session::{MarketType, PriceSource, Treatment};
use crate::strategy::punishment_spans;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("{0}")]
    Guard(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

fn schema(msg: impl Into<String>) -> AnalysisError {
    AnalysisError::Schema(msg.into())
}

/// Identifies one market in one supergame of one session.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MarketKey {
    pub session: String,
    pub supergame: u32,
    pub market: u32,
}

impl MarketKey {
    fn of(r: &RoundRow) -> Self {
        MarketKey {
            session: r.session.clone(),
            supergame: r.supergame,
            market: r.market,
        }
    }
}

/// Validated round rows, sorted by market and round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundTable {
    rows: Vec<RoundRow>,
    /// Start offsets of each market's rows, plus a final sentinel.
    bounds: Vec<usize>,
}

impl RoundTable {
    pub fn new(mut rows: Vec<RoundRow>, params: &MarketParams) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            check_row(r, params).map_err(|m| schema(format!("row {}: {m}", i + 1)))?;
        }
        rows.sort_by(|a, b| (MarketKey::of(a), a.round).cmp(&(MarketKey::of(b), b.round)));
        let mut bounds = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            let new_market = i == 0 || MarketKey::of(&rows[i - 1]) != MarketKey::of(r);
            if new_market {
                bounds.push(i);
                if r.round != 1 {
                    return Err(schema(format!("{} supergame {} market {} does not start at round 1", r.session, r.supergame, r.market)));
                }
            } else {
                let prev = &rows[i - 1];
                if r.round != prev.round + 1 {
                    return Err(schema(format!(
                        "{} supergame {} market {}: round {} follows round {}",
                        r.session, r.supergame, r.market, r.round, prev.round
                    )));
                }
                let same = prev.treatment == r.treatment
                    && prev.matching_group == r.matching_group
                    && prev.participant_a == r.participant_a
                    && prev.participant_b == r.participant_b
                    && prev.adopt_a == r.adopt_a
                    && prev.adopt_b == r.adopt_b;
                if !same {
                    return Err(schema(format!(
                        "{} supergame {} market {} changes its fixed columns at round {}",
                        r.session, r.supergame, r.market, r.round
                    )));
                }
            }
        }
        bounds.push(rows.len());
        let mut seats = BTreeSet::new();
        for w in bounds.windows(2) {
            let r = &rows[w[0]];
            for p in [r.participant_a, r.participant_b] {
                if !seats.insert((r.session.clone(), r.supergame, p)) {
                    return Err(schema(format!("{} participant {p} sits in two markets of supergame {}", r.session, r.supergame)));
                }
            }
        }
        Ok(RoundTable { rows, bounds })
    }

    /// Reads a `rounds` CSV export. The header must match the export
    /// contract exactly.
    pub fn read_csv<R: io::Read>(reader: R, params: &MarketParams) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers().map_err(|e| schema(e.to_string()))?.clone();
        if headers.iter().ne(ROUND_COLUMNS) {
            return Err(schema(format!("rounds header must be {}", ROUND_COLUMNS.join(","))));
        }
        let rows = rdr
            .deserialize()
            .enumerate()
            .map(|(i, r)| r.map_err(|e| schema(format!("line {}: {e}", i + 2))))
            .collect::<Result<Vec<RoundRow>>>()?;
        RoundTable::new(rows, params)
    }

    /// Loads `rounds.csv` from an export directory, or a CSV file directly.
    pub fn load(path: &Path, params: &MarketParams) -> Result<Self> {
        let file = if path.is_dir() { path.join("rounds.csv") } else { path.to_path_buf() };
        RoundTable::read_csv(File::open(&file)?, params)
    }

    pub fn rows(&self) -> &[RoundRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Each market's rows in round order.
    pub fn markets(&self) -> impl Iterator<Item = &[RoundRow]> + '_ {
        self.bounds.windows(2).map(|w| &self.rows[w[0]..w[1]])
    }
}

fn check_row(r: &RoundRow, params: &MarketParams) -> std::result::Result<(), String> {
    if r.supergame == 0 || r.round == 0 {
        return Err("supergame and round are 1-based".into());
    }
    if r.participant_a == r.participant_b {
        return Err("a participant cannot face itself".into());
    }
    let mut adopt = [false; 2];
    for (i, &flag) in [r.adopt_a, r.adopt_b].iter().enumerate() {
        adopt[i] = match flag {
            0 => false,
            1 => true,
            other => return Err(format!("adoption flag {other} is not 0 or 1")),
        };
    }
    if r.market_type != MarketType::from_adoption(adopt[0], adopt[1]) {
        return Err(format!("market_type {:?} contradicts adoption flags", r.market_type));
    }
    if r.treatment == Treatment::Baseline && adopt.iter().any(|&a| a) {
        return Err("baseline rows cannot record adoption".into());
    }
    let prices = [Price::new(r.price_a), Price::new(r.price_b)];
    for p in prices {
        params.check(p).map_err(|e| e.to_string())?;
    }
    if r.market_price != r.price_a.min(r.price_b) {
        return Err(format!("market_price {} is not the lower price", r.market_price));
    }
    if [r.profit_a, r.profit_b] != [params.profit(prices[0], prices[1]), params.profit(prices[1], prices[0])] {
        return Err("profits do not match the stage game".into());
    }
    let recs = [r.rec_a, r.rec_b];
    let sources = [r.source_a, r.source_b];
    for i in 0..2 {
        if let Some(rec) = recs[i] {
            params.check(Price::new(rec)).map_err(|e| e.to_string())?;
        }
        let expected = match (r.treatment, adopt[i], recs[i]) {
            (_, false, _) => PriceSource::Human,
            (Treatment::Outsourcing, true, _) => PriceSource::Algorithm,
            (_, true, None) => return Err("adopters need a recommendation".into()),
            (_, true, Some(rec)) if rec == prices[i].value() => PriceSource::AcceptedRecommendation,
            (_, true, Some(_)) => PriceSource::OverriddenRecommendation,
        };
        if sources[i] != expected {
            return Err(format!("source {:?} does not fit adoption and recommendation", sources[i]));
        }
        if r.treatment == Treatment::Outsourcing && adopt[i] && recs[i].is_some_and(|rec| rec != prices[i].value()) {
            return Err("outsourced prices must equal the algorithm's action".into());
        }
    }
    Ok(())
}

/// Reads a `beliefs` CSV export.
pub fn read_beliefs<R: io::Read>(reader: R) -> Result<Vec<BeliefRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| schema(e.to_string()))?.clone();
    if headers.iter().ne(BELIEF_COLUMNS) {
        return Err(schema(format!("beliefs header must be {}", BELIEF_COLUMNS.join(","))));
    }
    let mut rows = Vec::new();
    for (i, r) in rdr.deserialize::<BeliefRow>().enumerate() {
        let r = r.map_err(|e| schema(format!("line {}: {e}", i + 2)))?;
        if !(0.0..=1.0).contains(&r.belief) || r.opponent_adopted > 1 {
            return Err(schema(format!("line {}: belief must lie in [0, 1] and opponent_adopted in {{0, 1}}", i + 2)));
        }
        rows.push(r);
    }
    Ok(rows)
}

/// Which keys a metric groups by.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grouping {
    pub treatment: bool,
    pub supergame: bool,
    pub market_type: bool,
}

impl Default for Grouping {
    fn default() -> Self {
        Grouping {
            treatment: true,
            supergame: true,
            market_type: false,
        }
    }
}

impl Grouping {
    pub const NONE: Grouping = Grouping {
        treatment: false,
        supergame: false,
        market_type: false,
    };

    /// Parses a comma-separated key list such as `treatment,supergame`.
    pub fn parse(s: &str) -> std::result::Result<Self, String> {
        let mut g = Grouping::NONE;
        for key in s.split(',').map(str::trim).filter(|k| !k.is_empty()) {
            match key {
                "treatment" => g.treatment = true,
                "supergame" => g.supergame = true,
                "market_type" => g.market_type = true,
                other => return Err(format!("unknown grouping key {other}")),
            }
        }
        Ok(g)
    }

    fn key(&self, treatment: Treatment, supergame: u32, market_type: MarketType) -> GroupKey {
        GroupKey {
            treatment: self.treatment.then_some(treatment),
            supergame: self.supergame.then_some(supergame),
            market_type: self.market_type.then_some(market_type),
        }
    }

    fn market(&self, rows: &[RoundRow]) -> GroupKey {
        let r = &rows[0];
        self.key(r.treatment, r.supergame, r.market_type)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct GroupKey {
    pub treatment: Option<Treatment>,
    pub supergame: Option<u32>,
    pub market_type: Option<MarketType>,
}

/// One output line of a metric. Absent keys mean "all".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub treatment: Option<Treatment>,
    pub supergame: Option<u32>,
    pub market_type: Option<MarketType>,
    pub stat: String,
    pub value: Option<f64>,
    pub count: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub metric: String,
    pub rows: Vec<MetricRow>,
    pub notices: Vec<String>,
}

impl MetricReport {
    fn new(metric: Metric) -> Self {
        MetricReport {
            metric: metric.name().into(),
            ..Default::default()
        }
    }

    fn push(&mut self, key: &GroupKey, stat: impl Into<String>, value: Option<f64>, count: u64) {
        self.rows.push(MetricRow {
            metric: self.metric.clone(),
            treatment: key.treatment,
            supergame: key.supergame,
            market_type: key.market_type,
            stat: stat.into(),
            value,
            count,
        });
    }

    /// The first row matching `stat` under `key`.
    pub fn get(&self, key: &GroupKey, stat: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| {
            r.stat == stat && r.treatment == key.treatment && r.supergame == key.supergame && r.market_type == key.market_type
        })
    }

    pub fn value(&self, key: &GroupKey, stat: &str) -> Option<f64> {
        self.get(key, stat).and_then(|r| r.value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    AdoptionRates,
    MarketPrices,
    FirstRound,
    MarketTypes,
    PayoffMatrix,
    Deviations,
    Punishment,
    CyclicUndercut,
    BeliefAccuracy,
}

impl Metric {
    pub const ALL: [Metric; 9] = [
        Metric::AdoptionRates,
        Metric::MarketPrices,
        Metric::FirstRound,
        Metric::MarketTypes,
        Metric::PayoffMatrix,
        Metric::Deviations,
        Metric::Punishment,
        Metric::CyclicUndercut,
        Metric::BeliefAccuracy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::AdoptionRates => "adoption_rates",
            Metric::MarketPrices => "market_price_stats",
            Metric::FirstRound => "first_round_dynamics",
            Metric::MarketTypes => "market_type_shares",
            Metric::PayoffMatrix => "payoff_matrix",
            Metric::Deviations => "deviation_stats",
            Metric::Punishment => "punishment_stats",
            Metric::CyclicUndercut => "cyclic_undercut",
            Metric::BeliefAccuracy => "belief_accuracy",
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// How market prices are averaged within a group.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Weighting {
    /// Mean of per-market means: every market counts once.
    #[default]
    None,
    /// Mean over rounds, so longer supergames weigh more.
    ByLength,
    /// Length-weighted mean of per-market means.
    MarketMeans,
}

impl Weighting {
    pub fn parse(s: &str) -> Option<Weighting> {
        match s {
            "none" => Some(Weighting::None),
            "by-length" => Some(Weighting::ByLength),
            "market-means" => Some(Weighting::MarketMeans),
            _ => None,
        }
    }
}

#[derive(Default)]
struct Acc {
    sum: f64,
    weight: f64,
    n: u64,
}

impl Acc {
    fn add(&mut self, x: f64) {
        self.add_weighted(x, 1.0);
    }

    fn add_weighted(&mut self, x: f64, w: f64) {
        self.sum += x * w;
        self.weight += w;
        self.n += 1;
    }

    fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.weight)
    }
}

/// n, mean, median, sample sd, min and max of a duration sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub n: u64,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub sd: Option<f64>,
    pub min: Option<u32>,
    pub max: Option<u32>,
}

impl Summary {
    pub fn of(xs: &[u32]) -> Summary {
        let n = xs.len();
        let mut sorted = xs.to_vec();
        sorted.sort_unstable();
        let mean = (n > 0).then(|| xs.iter().map(|&x| f64::from(x)).sum::<f64>() / n as f64);
        let median = (n > 0).then(|| {
            if n % 2 == 1 {
                f64::from(sorted[n / 2])
            } else {
                (f64::from(sorted[n / 2 - 1]) + f64::from(sorted[n / 2])) / 2.0
            }
        });
        let sd = mean.filter(|_| n > 1).map(|m| {
            let ss: f64 = xs.iter().map(|&x| (f64::from(x) - m).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        Summary {
            n: n as u64,
            mean,
            median,
            sd,
            min: sorted.first().copied(),
            max: sorted.last().copied(),
        }
    }

    fn push(&self, report: &mut MetricReport, key: &GroupKey, prefix: &str) {
        let n = self.n;
        report.push(key, format!("{prefix}.n"), Some(n as f64), n);
        report.push(key, format!("{prefix}.mean"), self.mean, n);
        report.push(key, format!("{prefix}.median"), self.median, n);
        report.push(key, format!("{prefix}.sd"), self.sd, n);
        report.push(key, format!("{prefix}.min"), self.min.map(f64::from), n);
        report.push(key, format!("{prefix}.max"), self.max.map(f64::from), n);
    }
}

fn adopted(r: &RoundRow, side: usize) -> bool {
    [r.adopt_a, r.adopt_b][side] == 1
}

fn price(r: &RoundRow, side: usize) -> u8 {
    [r.price_a, r.price_b][side]
}

fn rec(r: &RoundRow, side: usize) -> Option<u8> {
    [r.rec_a, r.rec_b][side]
}

fn profit(r: &RoundRow, side: usize) -> i64 {
    [r.profit_a, r.profit_b][side]
}

/// Markets outside Baseline, with a notice when Baseline rows are dropped.
fn algorithmic_markets<'a>(table: &'a RoundTable, report: &mut MetricReport) -> Vec<&'a [RoundRow]> {
    let (baseline, rest): (Vec<_>, Vec<_>) = table.markets().partition(|m| m[0].treatment == Treatment::Baseline);
    if !baseline.is_empty() {
        report.notices.push(format!(
            "{} baseline market(s) skipped: no adoption choice exists there",
            baseline.len()
        ));
    }
    if rest.is_empty() {
        report.notices.push("no Outsourcing or Recommendation rows; report is empty".into());
    }
    rest
}

/// Share of participant-supergames that adopted the algorithm.
pub fn adoption_rates(table: &RoundTable, grouping: Grouping) -> MetricReport {
    let mut report = MetricReport::new(Metric::AdoptionRates);
    let grouping = Grouping {
        market_type: false,
        ..grouping
    };
    let mut acc: BTreeMap<GroupKey, Acc> = BTreeMap::new();
    for m in algorithmic_markets(table, &mut report) {
        let a = acc.entry(grouping.market(m)).or_default();
        for side in 0..2 {
            a.add(f64::from(u8::from(adopted(&m[0], side))));
        }
    }
    for (k, a) in acc {
        report.push(&k, "adoption_rate", a.mean(), a.n);
    }
    report
}

fn market_mean(m: &[RoundRow]) -> f64 {
    m.iter().map(|r| f64::from(r.market_price)).sum::<f64>() / m.len() as f64
}

/// Mean market price (the lower of the two prices).
pub fn market_price_stats(table: &RoundTable, grouping: Grouping, weighting: Weighting) -> MetricReport {
    let mut report = MetricReport::new(Metric::MarketPrices);
    let mut acc: BTreeMap<GroupKey, Acc> = BTreeMap::new();
    for m in table.markets() {
        let a = acc.entry(grouping.market(m)).or_default();
        match weighting {
            Weighting::None => a.add(market_mean(m)),
            Weighting::MarketMeans => a.add_weighted(market_mean(m), m.len() as f64),
            Weighting::ByLength => m.iter().for_each(|r| a.add(f64::from(r.market_price))),
        }
    }
    let stat = match weighting {
        Weighting::None => "mean_price",
        Weighting::ByLength => "mean_price_by_length",
        Weighting::MarketMeans => "mean_price_market_means",
    };
    for (k, a) in acc {
        report.push(&k, stat, a.mean(), a.n);
    }
    report
}

/// Mean first-round market price and mean change from round 1 to 2.
pub fn first_round_dynamics(table: &RoundTable, grouping: Grouping) -> MetricReport {
    let mut report = MetricReport::new(Metric::FirstRound);
    let mut acc: BTreeMap<GroupKey, (Acc, Acc)> = BTreeMap::new();
    let mut short = 0;
    for m in table.markets() {
        let (p1, delta) = acc.entry(grouping.market(m)).or_default();
        p1.add(f64::from(m[0].market_price));
        match m.get(1) {
            Some(r2) => delta.add(f64::from(r2.market_price) - f64::from(m[0].market_price)),
            None => short += 1,
        }
    }
    if short > 0 {
        report.notices.push(format!("{short} one-round market(s) excluded from the round 2 change"));
    }
    for (k, (p1, delta)) in acc {
        report.push(&k, "first_round_price", p1.mean(), p1.n);
        report.push(&k, "round2_minus_round1", delta.mean(), delta.n);
    }
    report
}

/// Distribution of AA, AH and HH markets.
pub fn market_type_shares(table: &RoundTable, grouping: Grouping) -> MetricReport {
    let mut report = MetricReport::new(Metric::MarketTypes);
    let grouping = Grouping {
        market_type: false,
        ..grouping
    };
    let mut counts: BTreeMap<GroupKey, [u64; 3]> = BTreeMap::new();
    for m in algorithmic_markets(table, &mut report) {
        let c = counts.entry(grouping.market(m)).or_default();
        c[m[0].market_type as usize] += 1;
    }
    for (k, c) in counts {
        let total: u64 = c.iter().sum();
        for (t, name) in [MarketType::AA, MarketType::AH, MarketType::HH].iter().zip(["AA", "AH", "HH"]) {
            let n = c[*t as usize];
            report.push(&k, name, Some(n as f64 / total as f64), n);
        }
    }
    report
}

const ADOPTION_LABELS: [&str; 2] = ["algorithm", "no_algorithm"];

fn payoff_stat(own: usize, opp: usize) -> String {
    format!("{}|{}", ADOPTION_LABELS[own], ADOPTION_LABELS[opp])
}

/// Mean per-round profit by own and opponent adoption. Cell `own|opp`
/// averages the profits of participants with adoption `own` facing `opp`.
pub fn payoff_matrix(table: &RoundTable, grouping: Grouping) -> MetricReport {
    let mut report = MetricReport::new(Metric::PayoffMatrix);
    let grouping = Grouping {
        market_type: false,
        ..grouping
    };
    let mut acc: BTreeMap<GroupKey, [[Acc; 2]; 2]> = BTreeMap::new();
    for m in algorithmic_markets(table, &mut report) {
        let cells = acc.entry(grouping.market(m)).or_default();
        for r in m {
            for side in 0..2 {
                let own = usize::from(!adopted(r, side));
                let opp = usize::from(!adopted(r, 1 - side));
                cells[own][opp].add(profit(r, side) as f64);
            }
        }
    }
    for (k, cells) in acc {
        for own in 0..2 {
            for opp in 0..2 {
                let c = &cells[own][opp];
                report.push(&k, payoff_stat(own, opp), c.mean(), c.n);
            }
        }
    }
    report
}

fn rec_stat(kind: &str, rec: Price) -> String {
    format!("{kind}_rec_{}", rec.value())
}

/// Deviations of submitted prices from recommendations in the
/// Recommendation treatment, per supergame and overall.
pub fn deviation_stats(table: &RoundTable, params: &MarketParams) -> MetricReport {
    let mut report = MetricReport::new(Metric::Deviations);
    let recs = [params.punishment_price, params.monopoly_price];
    let mut acc: BTreeMap<Option<u32>, [(Acc, Acc, Acc); 2]> = BTreeMap::new();
    let mut other = 0u64;
    for m in table.markets().filter(|m| m[0].treatment == Treatment::Recommendation) {
        for r in m {
            for side in 0..2 {
                let Some(rv) = rec(r, side) else { continue };
                let Some(slot) = recs.iter().position(|p| p.value() == rv) else {
                    other += 1;
                    continue;
                };
                let dev = f64::from(price(r, side)) - f64::from(rv);
                for sg in [Some(r.supergame), None] {
                    let (mean, adherence, nonzero) = &mut acc.entry(sg).or_default()[slot];
                    mean.add(dev);
                    adherence.add(f64::from(u8::from(dev == 0.0)));
                    if dev != 0.0 {
                        nonzero.add(dev);
                    }
                }
            }
        }
    }
    if acc.is_empty() {
        report.notices.push("no recommendation rows in the Recommendation treatment; report is empty".into());
    }
    if other > 0 {
        report.notices.push(format!("{other} recommendation(s) outside the punishment and monopoly prices skipped"));
    }
    // Overall goes last, after the supergames.
    let mut groups: Vec<_> = acc.into_iter().collect();
    groups.sort_by_key(|(sg, _)| (sg.is_none(), *sg));
    for (sg, cells) in groups {
        let key = GroupKey {
            treatment: Some(Treatment::Recommendation),
            supergame: sg,
            market_type: None,
        };
        for (slot, (mean, adherence, nonzero)) in cells.iter().enumerate() {
            report.push(&key, rec_stat("mean_deviation", recs[slot]), mean.mean(), mean.n);
            report.push(&key, rec_stat("adherence", recs[slot]), adherence.mean(), adherence.n);
            report.push(&key, rec_stat("mean_nonzero_deviation", recs[slot]), nonzero.mean(), nonzero.n);
        }
        let diff = match (cells[0].0.mean(), cells[1].0.mean()) {
            (Some(low), Some(high)) => Some((high.abs() - low.abs()).abs()),
            _ => None,
        };
        report.push(&key, "absolute_difference", diff, cells[0].0.n + cells[1].0.n);
    }
    report
}

/// One market side's recommendation stream and its punishment phases.
#[derive(Clone, Debug, PartialEq)]
pub struct SidePhases {
    pub market: MarketKey,
    pub side: usize,
    pub treatment: Treatment,
    pub market_type: MarketType,
    pub durations: Vec<u32>,
    /// Whether the price right after the first phase followed the
    /// recommendation; `None` when the first phase runs to the end.
    pub followed_after_first: Option<bool>,
}

/// Punishment phases of every market side that has a full
/// recommendation stream.
pub fn side_phases(table: &RoundTable, params: &MarketParams) -> Vec<SidePhases> {
    let mut out = Vec::new();
    for m in table.markets() {
        for side in 0..2 {
            let Some(stream) = m.iter().map(|r| rec(r, side).map(Price::new)).collect::<Option<Vec<_>>>() else {
                continue;
            };
            let spans = punishment_spans(&stream, params);
            let followed_after_first = spans
                .first()
                .and_then(|s| m.get(s.end()))
                .map(|r| rec(r, side) == Some(price(r, side)));
            out.push(SidePhases {
                market: MarketKey::of(&m[0]),
                side,
                treatment: m[0].treatment,
                market_type: m[0].market_type,
                durations: spans.iter().map(|s| s.length as u32).collect(),
                followed_after_first,
            });
        }
    }
    out
}

/// Punishment-phase durations by treatment and market type, first-phase
/// durations by treatment and supergame, and adherence to the first
/// recommendation after the first phase.
pub fn punishment_stats(table: &RoundTable, params: &MarketParams) -> MetricReport {
    let mut report = MetricReport::new(Metric::Punishment);
    let sides = side_phases(table, params);
    if sides.is_empty() {
        report.notices.push("no recommendation streams; report is empty".into());
    }
    let mut by_type: BTreeMap<GroupKey, Vec<u32>> = BTreeMap::new();
    let mut first: BTreeMap<GroupKey, Vec<u32>> = BTreeMap::new();
    let mut after: BTreeMap<GroupKey, [u64; 2]> = BTreeMap::new();
    for s in &sides {
        let key = GroupKey {
            treatment: Some(s.treatment),
            supergame: None,
            market_type: Some(s.market_type),
        };
        by_type.entry(key).or_default().extend(&s.durations);
        let Some(&d) = s.durations.first() else { continue };
        for sg in [None, Some(s.market.supergame)] {
            let key = GroupKey {
                treatment: Some(s.treatment),
                supergame: sg,
                market_type: None,
            };
            first.entry(key.clone()).or_default().push(d);
            if let Some(f) = s.followed_after_first {
                after.entry(key).or_default()[usize::from(f)] += 1;
            }
        }
    }
    for (k, d) in &by_type {
        Summary::of(d).push(&mut report, k, "duration");
    }
    let order = |k: &GroupKey| (k.treatment, k.supergame.is_some(), k.supergame);
    let mut first: Vec<_> = first.into_iter().collect();
    first.sort_by_key(|(k, _)| order(k));
    for (k, d) in &first {
        Summary::of(d).push(&mut report, k, "first_phase");
    }
    let mut after: Vec<_> = after.into_iter().collect();
    after.sort_by_key(|(k, _)| order(k));
    for (k, [no, yes]) in after {
        let n = no + yes;
        report.push(&k, "post_phase_adherence.no", Some(no as f64 / n as f64), no);
        report.push(&k, "post_phase_adherence.yes", Some(yes as f64 / n as f64), yes);
    }
    report
}

/// Heuristic flag for the cyclic undercut in a mixed market: the human
/// side completes at least `threshold` cycles of undercutting the
/// adopter's monopoly price with a price strictly between the punishment
/// and monopoly prices, then pricing at the punishment price in the next
/// round. Cycles do not overlap.
pub fn classify_cyclic_undercut(market: &[RoundRow], params: &MarketParams, threshold: u32) -> Result<bool> {
    Ok(cyclic_cycles(market, params)? >= threshold)
}

/// Number of complete undercut-then-punish cycles by the human side.
pub fn cyclic_cycles(market: &[RoundRow], params: &MarketParams) -> Result<u32> {
    let first = market.first().ok_or_else(|| AnalysisError::Guard("empty market".into()))?;
    if market.iter().any(|r| MarketKey::of(r) != MarketKey::of(first)) {
        return Err(AnalysisError::Guard("rows span more than one market".into()));
    }
    if first.market_type != MarketType::AH {
        return Err(AnalysisError::Guard(format!(
            "cyclic undercut is defined for AH markets, got {:?}",
            first.market_type
        )));
    }
    let alg = if adopted(first, 0) { 0 } else { 1 };
    let human = 1 - alg;
    let (low, high) = (params.punishment_price.value(), params.monopoly_price.value());
    let mut cycles = 0;
    let mut i = 0;
    while i + 1 < market.len() {
        let undercut = price(&market[i], alg) == high && (low + 1..high).contains(&price(&market[i], human));
        if undercut && price(&market[i + 1], human) == low {
            cycles += 1;
            i += 2;
        } else {
            i += 1;
        }
    }
    Ok(cycles)
}

/// Share of AH markets flagged as cyclic undercut, and mean per-round
/// profits of adopters and non-adopters in flagged and other AH markets.
pub fn cyclic_undercut(table: &RoundTable, params: &MarketParams, grouping: Grouping, threshold: u32) -> MetricReport {
    let mut report = MetricReport::new(Metric::CyclicUndercut);
    let grouping = Grouping {
        market_type: false,
        ..grouping
    };
    #[derive(Default)]
    struct Cell {
        flagged: u64,
        markets: u64,
        // [flagged, other] x [adopter, human]
        profits: [[Acc; 2]; 2],
    }
    let mut acc: BTreeMap<GroupKey, Cell> = BTreeMap::new();
    for m in table.markets().filter(|m| m[0].market_type == MarketType::AH) {
        let flag = classify_cyclic_undercut(m, params, threshold).expect("AH market rows are one market");
        let c = acc.entry(grouping.market(m)).or_default();
        c.markets += 1;
        c.flagged += u64::from(flag);
        let alg = if adopted(&m[0], 0) { 0 } else { 1 };
        let slot = usize::from(!flag);
        for r in m {
            c.profits[slot][0].add(profit(r, alg) as f64);
            c.profits[slot][1].add(profit(r, 1 - alg) as f64);
        }
    }
    if acc.is_empty() {
        report.notices.push("no AH markets; report is empty".into());
    }
    report
        .notices
        .push(format!("heuristic classifier: at least {threshold} undercut-then-punish cycles"));
    for (k, c) in acc {
        report.push(&k, "share_flagged", Some(c.flagged as f64 / c.markets as f64), c.flagged);
        for (slot, name) in ["flagged", "other"].iter().enumerate() {
            for (who, role) in ["adopter", "non_adopter"].iter().enumerate() {
                let a = &c.profits[slot][who];
                report.push(&k, format!("{role}_profit.{name}"), a.mean(), a.n);
            }
        }
    }
    report
}

/// Mean belief accuracy `1 - |b - d|` by treatment and opponent adoption.
pub fn belief_accuracy(beliefs: &[BeliefRow], grouping: Grouping) -> MetricReport {
    let mut report = MetricReport::new(Metric::BeliefAccuracy);
    let mut acc: BTreeMap<(GroupKey, u8), Acc> = BTreeMap::new();
    for b in beliefs {
        let key = GroupKey {
            treatment: grouping.treatment.then_some(b.treatment),
            supergame: grouping.supergame.then_some(b.supergame),
            market_type: None,
        };
        let d = f64::from(b.opponent_adopted);
        acc.entry((key, b.opponent_adopted)).or_default().add(1.0 - (b.belief - d).abs());
    }
    if acc.is_empty() {
        report.notices.push("no belief rows; report is empty".into());
    }
    for ((k, d), a) in acc {
        let stat = if d == 1 { "accuracy.opponent_adopted" } else { "accuracy.opponent_not_adopted" };
        report.push(&k, stat, a.mean(), a.n);
    }
    report
}

/// Options shared by every metric run.
#[derive(Clone, Debug)]
pub struct AnalysisOptions {
    pub grouping: Grouping,
    pub weighting: Weighting,
    pub cycle_threshold: u32,
    pub params: MarketParams,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            grouping: Grouping::default(),
            weighting: Weighting::default(),
            cycle_threshold: 2,
            params: MarketParams::default(),
        }
    }
}

/// Runs one metric. Belief accuracy needs the beliefs table.
pub fn run_metric(metric: Metric, table: &RoundTable, beliefs: Option<&[BeliefRow]>, opts: &AnalysisOptions) -> MetricReport {
    let g = opts.grouping;
    match metric {
        Metric::AdoptionRates => adoption_rates(table, g),
        Metric::MarketPrices => market_price_stats(table, g, opts.weighting),
        Metric::FirstRound => first_round_dynamics(table, g),
        Metric::MarketTypes => market_type_shares(table, g),
        Metric::PayoffMatrix => payoff_matrix(table, g),
        Metric::Deviations => deviation_stats(table, &opts.params),
        Metric::Punishment => punishment_stats(table, &opts.params),
        Metric::CyclicUndercut => cyclic_undercut(table, &opts.params, g, opts.cycle_threshold),
        Metric::BeliefAccuracy => match beliefs {
            Some(b) => belief_accuracy(b, g),
            None => {
                let mut r = MetricReport::new(Metric::BeliefAccuracy);
                r.notices.push("no beliefs table supplied; report is empty".into());
                r
            }
        },
    }
}

/// Writes report rows as CSV with a fixed header.
pub fn write_csv<W: io::Write>(report: &MetricReport, writer: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["metric", "treatment", "supergame", "market_type", "stat", "value", "count"])?;
    for r in &report.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_value(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "---".into(), |x| format!("{x:.decimals$}"))
}

fn treatment_label(t: Option<Treatment>) -> &'static str {
    t.map_or("all", Treatment::as_str)
}

fn supergame_label(s: Option<u32>) -> String {
    s.map_or_else(|| "all".into(), |s| s.to_string())
}

fn aligned(rows: &[Vec<String>], right_from: usize) -> String {
    let width = rows.first().map_or(0, Vec::len);
    let widths: Vec<usize> = (0..width).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let mut line = String::new();
        for (c, cell) in r.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            if c >= right_from {
                let _ = write!(line, "{cell:>w$}", w = widths[c]);
            } else {
                let _ = write!(line, "{cell:<w$}", w = widths[c]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Renders the report as aligned text. Payoff matrices and deviation
/// tables get their conventional layouts.
pub fn render_table(report: &MetricReport) -> String {
    let mut out = match report.metric.as_str() {
        "payoff_matrix" => render_payoff(report),
        "deviation_stats" => render_deviations(report),
        _ => render_generic(report),
    };
    for n in &report.notices {
        let _ = writeln!(out, "note: {n}");
    }
    out
}

fn render_generic(report: &MetricReport) -> String {
    let mut rows = vec![["treatment", "supergame", "market_type", "stat", "value", "count"].map(String::from).to_vec()];
    for r in &report.rows {
        rows.push(vec![
            treatment_label(r.treatment).into(),
            supergame_label(r.supergame),
            r.market_type.map_or_else(|| "all".into(), |t| format!("{t:?}")),
            r.stat.clone(),
            fmt_value(r.value, 4),
            r.count.to_string(),
        ]);
    }
    if report.rows.is_empty() {
        return String::new();
    }
    aligned(&rows, 4)
}

fn render_payoff(report: &MetricReport) -> String {
    let mut keys: Vec<GroupKey> = Vec::new();
    for r in &report.rows {
        let k = GroupKey {
            treatment: r.treatment,
            supergame: r.supergame,
            market_type: r.market_type,
        };
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut out = String::new();
    for k in keys {
        let _ = writeln!(out, "{} (supergame {})", treatment_label(k.treatment), supergame_label(k.supergame));
        let mut rows = vec![vec![String::new(), "Algorithm".into(), "No Algorithm".into()]];
        for (own, label) in ["Algorithm", "No Algorithm"].iter().enumerate() {
            let mut row = vec![label.to_string()];
            for opp in 0..2 {
                let mine = report.value(&k, &payoff_stat(own, opp));
                let theirs = report.value(&k, &payoff_stat(opp, own));
                row.push(format!("({}, {})", fmt_value(mine, 2), fmt_value(theirs, 2)));
            }
            rows.push(row);
        }
        out.push_str(&aligned(&rows, usize::MAX));
        out.push('\n');
    }
    out
}

fn render_deviations(report: &MetricReport) -> String {
    let mut sgs: Vec<Option<u32>> = Vec::new();
    for r in &report.rows {
        if !sgs.contains(&r.supergame) {
            sgs.push(r.supergame);
        }
    }
    let recs: Vec<String> = report
        .rows
        .iter()
        .filter_map(|r| r.stat.strip_prefix("mean_deviation_rec_").map(String::from))
        .fold(Vec::new(), |mut v, s| {
            if !v.contains(&s) {
                v.push(s);
            }
            v
        });
    let mut header = vec!["Supergame".to_string()];
    header.extend(recs.iter().map(|r| format!("Recommendation of {r}")));
    header.push("Absolute Difference".into());
    let mut rows = vec![header];
    for sg in sgs {
        let key = GroupKey {
            treatment: Some(Treatment::Recommendation),
            supergame: sg,
            market_type: None,
        };
        let mut row = vec![sg.map_or_else(|| "Overall".into(), |s| s.to_string())];
        row.extend(recs.iter().map(|r| fmt_value(report.value(&key, &format!("mean_deviation_rec_{r}")), 2)));
        row.push(fmt_value(report.value(&key, "absolute_difference"), 2));
        rows.push(row);
    }
    aligned(&rows, 1)
}
