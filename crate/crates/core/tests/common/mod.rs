//! Row builders shared by the analysis tests.

use pricelab::analysis::RoundTable;
use pricelab::export::RoundRow;
use pricelab::session::{MarketType, PriceSource, Treatment};
use pricelab::MarketParams;

/// One market of `(price_a, price_b, rec_a, rec_b)` rounds.
pub fn market(t: Treatment, sg: u32, id: u32, adopt: [bool; 2], path: &[(u8, u8, Option<u8>, Option<u8>)]) -> Vec<RoundRow> {
    let params = MarketParams::default();
    let source = |adopted: bool, rec: Option<u8>, price: u8| match (adopted, t) {
        (false, _) => PriceSource::Human,
        (true, Treatment::Outsourcing) => PriceSource::Algorithm,
        _ if rec == Some(price) => PriceSource::AcceptedRecommendation,
        _ => PriceSource::OverriddenRecommendation,
    };
    path.iter()
        .enumerate()
        .map(|(i, &(a, b, ra, rb))| {
            let (pa, pb) = (pricelab::Price::new(a), pricelab::Price::new(b));
            RoundRow {
                session: "ex".into(),
                treatment: t,
                matching_group: 1,
                supergame: sg,
                market: id,
                round: i as u32 + 1,
                participant_a: 2 * id - 1,
                participant_b: 2 * id,
                adopt_a: u8::from(adopt[0]),
                adopt_b: u8::from(adopt[1]),
                market_type: MarketType::from_adoption(adopt[0], adopt[1]),
                price_a: a,
                price_b: b,
                rec_a: ra,
                rec_b: rb,
                source_a: source(adopt[0], ra, a),
                source_b: source(adopt[1], rb, b),
                profit_a: params.profit(pa, pb),
                profit_b: params.profit(pb, pa),
                market_price: a.min(b),
            }
        })
        .collect()
}

pub fn table(markets: Vec<Vec<RoundRow>>) -> RoundTable {
    RoundTable::new(markets.concat(), &MarketParams::default()).unwrap()
}
