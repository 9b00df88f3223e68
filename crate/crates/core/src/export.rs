//! Flat tables derived from a session.
//!
//! Column order follows field order and is part of the export contract:
//! the analysis tools read these same structs back.

use std::io;

use serde::{Deserialize, Serialize};

use crate::market::{Ecu, Euro};
use crate::session::{MarketType, Match, PriceSource, Session, Treatment};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub session: String,
    pub treatment: Treatment,
    pub matching_group: u32,
    pub supergame: u32,
    pub market: u32,
    pub round: u32,
    pub participant_a: u32,
    pub participant_b: u32,
    pub adopt_a: u8,
    pub adopt_b: u8,
    pub market_type: MarketType,
    pub price_a: u8,
    pub price_b: u8,
    pub rec_a: Option<u8>,
    pub rec_b: Option<u8>,
    pub source_a: PriceSource,
    pub source_b: PriceSource,
    pub profit_a: Ecu,
    pub profit_b: Ecu,
    pub market_price: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdoptionRow {
    pub session: String,
    pub treatment: Treatment,
    pub matching_group: u32,
    pub supergame: u32,
    pub market: u32,
    pub participant: u32,
    pub opponent: u32,
    pub adopted: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefRow {
    pub session: String,
    pub treatment: Treatment,
    pub supergame: u32,
    pub participant: u32,
    pub belief: f64,
    pub opponent_adopted: u8,
    pub draw: f64,
    pub reward: Ecu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayoutRow {
    pub session: String,
    pub treatment: Treatment,
    pub participant: u32,
    pub selected_supergame: u32,
    pub supergame_profit: Ecu,
    pub belief_supergame: Option<u32>,
    pub belief_reward: Ecu,
    pub show_up_eur: Euro,
    pub total_eur: Euro,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRow {
    pub session: String,
    pub participant: u32,
    pub trial: u32,
    pub round: u32,
    pub price: u8,
    pub algorithm_price: u8,
    pub profit: Ecu,
    pub algorithm_profit: Ecu,
}

/// Exportable table names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Table {
    Rounds,
    Adoptions,
    Beliefs,
    Payouts,
    Trials,
}

impl Table {
    pub const ALL: [Table; 5] = [Table::Rounds, Table::Adoptions, Table::Beliefs, Table::Payouts, Table::Trials];

    pub fn name(self) -> &'static str {
        match self {
            Table::Rounds => "rounds",
            Table::Adoptions => "adoptions",
            Table::Beliefs => "beliefs",
            Table::Payouts => "payouts",
            Table::Trials => "trials",
        }
    }

    pub fn parse(s: &str) -> Option<Table> {
        Table::ALL.into_iter().find(|t| t.name() == s)
    }
}

fn flag(b: Option<bool>) -> u8 {
    u8::from(b == Some(true))
}

/// Round rows for every played round, ordered by supergame, market, round.
pub fn round_rows(session: &Session) -> Vec<RoundRow> {
    let mut rows = Vec::new();
    for m in session.all_matches() {
        push_match_rows(session, m, &mut rows);
    }
    rows
}

fn push_match_rows(session: &Session, m: &Match, rows: &mut Vec<RoundRow>) {
    let market_type = m.market_type().unwrap_or(MarketType::HH);
    for r in &m.rounds {
        rows.push(RoundRow {
            session: session.id.clone(),
            treatment: session.treatment(),
            matching_group: m.group,
            supergame: m.supergame,
            market: m.market,
            round: r.round,
            participant_a: m.participants[0],
            participant_b: m.participants[1],
            adopt_a: flag(m.adoption[0]),
            adopt_b: flag(m.adoption[1]),
            market_type,
            price_a: r.prices[0].value(),
            price_b: r.prices[1].value(),
            rec_a: r.recommendations[0].map(|p| p.value()),
            rec_b: r.recommendations[1].map(|p| p.value()),
            source_a: r.sources[0],
            source_b: r.sources[1],
            profit_a: r.profits[0],
            profit_b: r.profits[1],
            market_price: r.market_price().value(),
        });
    }
}

/// One row per participant and supergame with a recorded decision.
pub fn adoption_rows(session: &Session) -> Vec<AdoptionRow> {
    if !session.treatment().has_algorithm() {
        return Vec::new();
    }
    let mut rows = Vec::new();
    for m in session.all_matches() {
        for i in 0..2 {
            if let Some(adopted) = m.adoption[i] {
                rows.push(AdoptionRow {
                    session: session.id.clone(),
                    treatment: session.treatment(),
                    matching_group: m.group,
                    supergame: m.supergame,
                    market: m.market,
                    participant: m.participants[i],
                    opponent: m.participants[1 - i],
                    adopted: u8::from(adopted),
                });
            }
        }
    }
    rows
}

pub fn belief_rows(session: &Session) -> Vec<BeliefRow> {
    session
        .belief_reports()
        .map(|b| BeliefRow {
            session: session.id.clone(),
            treatment: session.treatment(),
            supergame: b.supergame,
            participant: b.participant,
            belief: b.belief,
            opponent_adopted: u8::from(b.opponent_adopted),
            draw: b.draw,
            reward: b.reward,
        })
        .collect()
}

pub fn payout_rows(session: &Session) -> Vec<PayoutRow> {
    session
        .payouts
        .values()
        .map(|p| PayoutRow {
            session: session.id.clone(),
            treatment: session.treatment(),
            participant: p.participant,
            selected_supergame: p.selected_supergame,
            supergame_profit: p.supergame_profit,
            belief_supergame: p.belief_supergame,
            belief_reward: p.belief_reward,
            show_up_eur: p.show_up,
            total_eur: p.total,
        })
        .collect()
}

pub fn trial_rows(session: &Session) -> Vec<TrialRow> {
    let mut rows = Vec::new();
    for (&participant, traces) in &session.trials {
        for (t, trace) in traces.iter().enumerate() {
            for (r, round) in trace.rounds.iter().enumerate() {
                rows.push(TrialRow {
                    session: session.id.clone(),
                    participant,
                    trial: t as u32 + 1,
                    round: r as u32 + 1,
                    price: round.actions[0].value(),
                    algorithm_price: round.actions[1].value(),
                    profit: round.profits[0],
                    algorithm_profit: round.profits[1],
                });
            }
        }
    }
    rows
}

fn write_rows<W: io::Write, T: Serialize>(writer: W, rows: &[T], header: &[&str]) -> csv::Result<()> {
    // Serializing an empty table would drop the header row.
    let mut w = csv::WriterBuilder::new().has_headers(!rows.is_empty()).from_writer(writer);
    if rows.is_empty() {
        w.write_record(header)?;
    } else {
        for r in rows {
            w.serialize(r)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub const ROUND_COLUMNS: [&str; 20] = [
    "session",
    "treatment",
    "matching_group",
    "supergame",
    "market",
    "round",
    "participant_a",
    "participant_b",
    "adopt_a",
    "adopt_b",
    "market_type",
    "price_a",
    "price_b",
    "rec_a",
    "rec_b",
    "source_a",
    "source_b",
    "profit_a",
    "profit_b",
    "market_price",
];

const ADOPTION_COLUMNS: [&str; 8] = ["session", "treatment", "matching_group", "supergame", "market", "participant", "opponent", "adopted"];
pub const BELIEF_COLUMNS: [&str; 8] = ["session", "treatment", "supergame", "participant", "belief", "opponent_adopted", "draw", "reward"];
const PAYOUT_COLUMNS: [&str; 9] = [
    "session",
    "treatment",
    "participant",
    "selected_supergame",
    "supergame_profit",
    "belief_supergame",
    "belief_reward",
    "show_up_eur",
    "total_eur",
];
const TRIAL_COLUMNS: [&str; 8] = ["session", "participant", "trial", "round", "price", "algorithm_price", "profit", "algorithm_profit"];

/// Writes one table as CSV with a header row, even when empty.
pub fn write_table<W: io::Write>(session: &Session, table: Table, writer: W) -> csv::Result<()> {
    match table {
        Table::Rounds => write_rows(writer, &round_rows(session), &ROUND_COLUMNS),
        Table::Adoptions => write_rows(writer, &adoption_rows(session), &ADOPTION_COLUMNS),
        Table::Beliefs => write_rows(writer, &belief_rows(session), &BELIEF_COLUMNS),
        Table::Payouts => write_rows(writer, &payout_rows(session), &PAYOUT_COLUMNS),
        Table::Trials => write_rows(writer, &trial_rows(session), &TRIAL_COLUMNS),
    }
}
