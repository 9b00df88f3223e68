//! Laboratory platform for algorithmic pricing delegation experiments in a
//! repeated Bertrand duopoly.
//!
//! - [`market`]: the stage game, equilibria, incentive thresholds and best
//!   responses.
//! - [`strategy`]: the win-stay lose-shift algorithm, scripted bots and
//!   supergame simulation.
//! - [`qlearning`]: tabular Q-learning self-play that produces the pricing
//!   algorithm.
//! - [`session`]: treatments, matching, round resolution, beliefs and payouts.
//! - [`export`]: the flat CSV tables derived from a session.
//! - [`service`]: event-sourced session runtime, HTTP/WebSocket front end and
//!   headless bot sessions.
//! - [`analysis`]: descriptive metrics over exported session data.

pub mod analysis;
pub mod export;
pub mod market;
pub mod qlearning;
pub mod service;
pub mod session;
pub mod strategy;

pub use market::{Ecu, Euro, MarketParams, Price};
pub use strategy::{BotSpec, Policy, PriceState, Side, Trace};
