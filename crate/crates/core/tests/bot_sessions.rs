use std::time::Instant;

use pricelab::export::{round_rows, Table};
use pricelab::service::{run_bot_runtime, AdoptionScript, BotSeat, ExportFormat, Lab, LabConfig, SessionRuntime};
use pricelab::session::{MarketType, PriceSource, SessionConfig, Treatment};
use pricelab::{BotSpec, Euro, Price};

fn config(treatment: Treatment, participants: u32, lengths: Vec<u32>) -> SessionConfig {
    SessionConfig {
        treatment,
        participants,
        matching_group_size: participants.min(10),
        n_supergames: lengths.len() as u32,
        supergame_lengths: Some(lengths),
        seed: 7,
        ..Default::default()
    }
}

#[test]
fn all_adopt_outsourcing_session_colludes() {
    let cfg = SessionConfig {
        seed: 11,
        ..SessionConfig::default()
    };
    let roster = vec![BotSeat::new(BotSpec::Wsls, true); 20];
    let t = Instant::now();
    let rt = run_bot_runtime(cfg, None, &roster).unwrap();
    assert!(t.elapsed().as_secs() < 60);
    let s = rt.session();
    assert!(s.all_matches().all(|m| m.market_type() == Some(MarketType::AA)));
    assert!(s.all_matches().flat_map(|m| &m.rounds).all(|r| r.market_price() == Price::new(4)));
    for (p, payout) in &s.payouts {
        let length = s.lengths[payout.selected_supergame as usize - 1] as i64;
        assert_eq!(payout.supergame_profit, 120 * length, "participant {p}");
        let expected = Euro::from_cents(600) + pricelab::market::ecu_to_euro(120 * length + payout.belief_reward, 140).unwrap();
        assert_eq!(payout.total, expected);
    }
}

#[test]
fn adopters_facing_cyclic_undercutters_earn_fifteen() {
    // Seats alternate adopter / undercutter; groups of two pin the pairing.
    let cfg = SessionConfig {
        treatment: Treatment::Outsourcing,
        participants: 4,
        matching_group_size: 2,
        n_supergames: 2,
        supergame_lengths: Some(vec![20, 21]),
        seed: 3,
        ..Default::default()
    };
    let mut rt = None;
    for seed in 0..50 {
        let c = SessionConfig { seed, ..cfg.clone() };
        let trial = pricelab::session::build_session(c.clone()).unwrap();
        // Find a seed where every group pairs an odd and an even seat.
        if trial.groups.iter().all(|g| g[0] % 2 != g[1] % 2) {
            let roster: Vec<BotSeat> = (1..=4)
                .map(|p| {
                    if p % 2 == 1 {
                        BotSeat::new(BotSpec::Wsls, true)
                    } else {
                        BotSeat::new(BotSpec::CyclicUndercut, false)
                    }
                })
                .collect();
            rt = Some(run_bot_runtime(c, None, &roster).unwrap());
            break;
        }
    }
    let rt = rt.expect("some seed pairs adopters with undercutters");
    for m in rt.session().all_matches() {
        assert_eq!(m.market_type(), Some(MarketType::AH));
        let alg = if m.participants[0] % 2 == 1 { 0 } else { 1 };
        let even = (m.rounds.len() / 2) * 2;
        let (a, h): (i64, i64) = m.rounds[..even].iter().fold((0, 0), |(a, h), r| (a + r.profits[alg], h + r.profits[1 - alg]));
        assert_eq!(a, 15 * even as i64);
        assert_eq!(h, 105 * even as i64);
    }
}

#[test]
fn baseline_grim_triggers_cooperate() {
    let cfg = config(Treatment::Baseline, 2, vec![12, 3]);
    let grim = BotSpec::GrimTrigger {
        collusive: Price::new(4),
        punish: Price::new(0),
    };
    let rt = run_bot_runtime(cfg, None, &[BotSeat::new(grim.clone(), false), BotSeat::new(grim, false)]).unwrap();
    let rows = round_rows(rt.session());
    assert_eq!(rows.len(), 15);
    assert!(rows.iter().all(|r| r.price_a == 4 && r.price_b == 4 && r.rec_a.is_none()));
    assert!(rt.session().belief_reports().next().is_none());
    assert!(rt.session().payouts.values().all(|p| p.belief_supergame.is_none()));
}

#[test]
fn recommendation_sources_follow_acceptance() {
    let cfg = config(Treatment::Recommendation, 2, vec![10]);
    let follower = BotSeat::new(BotSpec::AlwaysPrice { price: Price::new(3) }, true);
    let overrider = BotSeat {
        follow_recommendation: false,
        ..follower.clone()
    };
    let rt = run_bot_runtime(cfg, None, &[follower, overrider]).unwrap();
    let m = &rt.session().matches[0][0];
    for r in &m.rounds {
        for i in 0..2 {
            let rec = r.recommendations[i].expect("adopters get recommendations");
            let accepted = r.prices[i] == rec;
            assert_eq!(r.sources[i] == PriceSource::AcceptedRecommendation, accepted);
            assert_eq!(r.sources[i] == PriceSource::OverriddenRecommendation, !accepted);
        }
    }
}

#[test]
fn two_bot_session_with_long_first_supergame_is_fast() {
    let cfg = config(Treatment::Recommendation, 2, vec![56, 10, 8, 7, 21]);
    let roster = vec![
        BotSeat {
            adopt: AdoptionScript::Schedule(vec![true, false, true, false, true]),
            ..BotSeat::new(BotSpec::RandomUniform { seed: 5 }, true)
        },
        BotSeat::new(BotSpec::ProbeThenUndercut, false),
    ];
    let t = Instant::now();
    let rt = run_bot_runtime(cfg, None, &roster).unwrap();
    assert!(t.elapsed().as_secs_f64() < 5.0);
    assert_eq!(round_rows(rt.session()).len(), 102);
}

#[test]
fn replay_reproduces_sessions_exactly() {
    for treatment in [Treatment::Baseline, Treatment::Outsourcing, Treatment::Recommendation] {
        let cfg = SessionConfig {
            treatment,
            participants: 10,
            n_supergames: 3,
            seed: 99,
            ..Default::default()
        };
        let roster: Vec<BotSeat> = (0..10)
            .map(|i| BotSeat {
                belief_percent: (i * 10) as u8,
                ..BotSeat::new(
                    match i % 3 {
                        0 => BotSpec::RandomUniform { seed: i },
                        1 => BotSpec::CyclicUndercut,
                        _ => BotSpec::Wsls,
                    },
                    i % 2 == 0,
                )
            })
            .collect();
        let rt = run_bot_runtime(cfg, None, &roster).unwrap();
        let again = SessionRuntime::replay(rt.events().to_vec()).unwrap();
        assert_eq!(again.session(), rt.session());
        for p in 1..=10 {
            assert_eq!(again.view(p).unwrap(), rt.view(p).unwrap());
        }
        let a = pricelab::service::export_runtime(&rt, ExportFormat::Csv(Table::Rounds)).unwrap();
        let b = pricelab::service::export_runtime(&again, ExportFormat::Csv(Table::Rounds)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn tampered_payouts_fail_replay() {
    let cfg = config(Treatment::Outsourcing, 2, vec![3]);
    let rt = run_bot_runtime(cfg, None, &[BotSeat::new(BotSpec::Wsls, true), BotSeat::new(BotSpec::Wsls, true)]).unwrap();
    let mut events = rt.events().to_vec();
    let issued = events
        .iter_mut()
        .find_map(|e| match &mut e.payload {
            pricelab::service::Payload::PayoutsIssued { payouts } => Some(payouts),
            _ => None,
        })
        .expect("a completed session issues payouts");
    issued[0].supergame_profit += 1;
    assert!(SessionRuntime::replay(events).is_err());
}

#[test]
fn roster_must_cover_every_seat() {
    let cfg = config(Treatment::Outsourcing, 2, vec![3]);
    assert!(run_bot_runtime(cfg, None, &[BotSeat::new(BotSpec::Wsls, true)]).is_err());
}

#[test]
fn lab_bot_session_persists_and_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let lab = Lab::open(LabConfig {
        data_dir: Some(dir.path().to_path_buf()),
        admin_secret: None,
    })
    .unwrap();
    let cfg = config(Treatment::Outsourcing, 4, vec![5, 6]);
    let id = lab
        .run_bot_session(cfg, None, &vec![BotSeat::new(BotSpec::Wsls, true); 4])
        .unwrap();
    let (csv, partial) = lab.export(&id, ExportFormat::Csv(Table::Rounds)).unwrap();
    assert!(!partial);
    // Header plus (5 + 6) rounds in each of 2 markets.
    assert_eq!(String::from_utf8(csv.clone()).unwrap().lines().count(), 1 + 22);

    let reopened = Lab::open(LabConfig {
        data_dir: Some(dir.path().to_path_buf()),
        admin_secret: None,
    })
    .unwrap();
    assert_eq!(reopened.session_ids(), vec![id.clone()]);
    assert_eq!(reopened.export(&id, ExportFormat::Csv(Table::Rounds)).unwrap().0, csv);
    assert_eq!(
        reopened.export(&id, ExportFormat::Jsonl).unwrap().0,
        lab.export(&id, ExportFormat::Jsonl).unwrap().0
    );
}
