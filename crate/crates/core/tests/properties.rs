mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_spearman, close, random_valid_bytecode};
use tvr_core::bytecode::disassemble;
use tvr_core::ingest::{parse_snapshot, snapshot_to_json};
use tvr_core::metrics::{tvl, tvl_decomposition, tvr, PlfFlagVector};
use tvr_core::protocol::{evaluate_liquidation, Stake};
use tvr_core::sim::{linear_grid, sensitivity_curve, ShockScenario};
use tvr_core::stats::spearman;
use tvr_core::token::{Holding, PlainFlagVector, Token, TokenKind};
use tvr_core::{Position, Protocol, Snapshot, TokenId};

struct Parts {
    tokens: Vec<Token>,
    protocols: Vec<Protocol>,
    stakes: Vec<Stake>,
    prices: BTreeMap<TokenId, f64>,
}

impl Parts {
    fn build(self) -> Snapshot {
        Snapshot::new(self.tokens, self.protocols, self.stakes, vec![], self.prices).unwrap()
    }
}

/// Plain tokens, derivatives over earlier tokens, passive and lending protocols.
fn random_parts(seed: u64) -> Parts {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_plain = rng.gen_range(1..4);
    let n_deriv = rng.gen_range(0..5);
    let mut tokens = Vec::new();
    let mut prices = BTreeMap::new();
    for i in 0..n_plain {
        let id = format!("P{i}");
        prices.insert(TokenId::new(&id), rng.gen_range(0.1..5000.0));
        tokens.push(Token::plain(id));
    }
    for i in 0..n_deriv {
        let k = rng.gen_range(1..=2.min(tokens.len()));
        let mut basket: Vec<Holding> = Vec::new();
        for _ in 0..k {
            let t = tokens[rng.gen_range(0..tokens.len())].id.clone();
            if basket.iter().all(|h| h.token != t) {
                basket.push(Holding::new(t, rng.gen_range(1.0..100.0)));
            }
        }
        tokens.push(Token::derivative(format!("D{i}"), rng.gen_range(1.0..100.0), basket));
    }
    let n_proto = rng.gen_range(1..4);
    let protocols: Vec<Protocol> = (0..n_proto)
        .map(|i| {
            if rng.gen_bool(0.5) {
                Protocol::passive(format!("X{i}"))
            } else {
                Protocol::lending(format!("X{i}"), 0.5, 0.05, &[])
            }
        })
        .collect();
    let mut stakes = Vec::new();
    for p in &protocols {
        for t in &tokens {
            if rng.gen_bool(0.5) {
                stakes.push(Stake::new(p.id.clone(), t.id.clone(), rng.gen_range(0.0..50.0)));
            }
        }
    }
    Parts { tokens, protocols, stakes, prices }
}

fn metrics(s: &Snapshot) -> (f64, f64, f64) {
    let p = s.resolve_prices().unwrap();
    let tau = PlainFlagVector::from_snapshot(s);
    let omega = PlfFlagVector::from_snapshot(s);
    let d = tvl_decomposition(s, &p, &tau, &omega).unwrap();
    (tvl(s, &p).unwrap(), tvr(s, &p, &tau).unwrap(), d.total())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn decomposition_sums_to_tvl(seed in any::<u64>()) {
        let s = random_parts(seed).build();
        let (l, _, total) = metrics(&s);
        prop_assert!(close(l, total, 1e-12));
    }

    #[test]
    fn tvr_never_exceeds_tvl(seed in any::<u64>()) {
        let s = random_parts(seed).build();
        let (l, r, _) = metrics(&s);
        prop_assert!(r >= 0.0);
        prop_assert!(r <= l * (1.0 + 1e-12));
    }

    #[test]
    fn wrapping_adds_tvl_but_not_tvr(seed in any::<u64>(), frac in 0.01f64..1.0) {
        let parts = random_parts(seed);
        let before = metrics(&Snapshot::new(
            parts.tokens.clone(), parts.protocols.clone(), parts.stakes.clone(), vec![], parts.prices.clone(),
        ).unwrap());
        // Lock a fraction of one held token in a new wrapper and stake the receipt elsewhere.
        let held = parts.stakes.iter().find(|s| s.quantity > 0.0).cloned();
        prop_assume!(held.is_some());
        let held = held.unwrap();
        let q = held.quantity * frac;
        let mut parts = parts;
        let mut tokens = parts.tokens.clone();
        tokens.push(Token::derivative("W", q, vec![Holding::new(held.token.clone(), q)]));
        let mut protocols = parts.protocols.clone();
        protocols.push(Protocol::passive("Wrapper"));
        protocols.push(Protocol::passive("Vault"));
        parts.stakes.push(Stake::new("Wrapper", held.token.clone(), q));
        parts.stakes.push(Stake::new("Vault", "W", q));
        let after = metrics(&Snapshot::new(tokens, protocols, parts.stakes.clone(), vec![], parts.prices.clone()).unwrap());
        let s = Snapshot::new(parts.tokens.clone(), parts.protocols.clone(), vec![held.clone()], vec![], parts.prices.clone()).unwrap();
        let unit = s.resolve_prices().unwrap().get(held.token.as_str()).unwrap();
        prop_assert!(close(after.0 - before.0, 2.0 * q * unit, 1e-9) || (after.0 - before.0 - 2.0 * q * unit).abs() < 1e-6);
        let wrapped_plain = s.token(held.token.as_str()).unwrap().kind == TokenKind::Plain;
        let expected_tvr = if wrapped_plain { q * unit } else { 0.0 };
        prop_assert!((after.1 - before.1 - expected_tvr).abs() <= 1e-9 * after.1.max(1.0));
    }

    #[test]
    fn metrics_scale_with_plain_prices(seed in any::<u64>(), k in 0.01f64..100.0) {
        let parts = random_parts(seed);
        let scaled: BTreeMap<TokenId, f64> = parts.prices.iter().map(|(t, p)| (t.clone(), p * k)).collect();
        let a = Snapshot::new(parts.tokens.clone(), parts.protocols.clone(), parts.stakes.clone(), vec![], parts.prices.clone()).unwrap();
        let b = Snapshot::new(parts.tokens, parts.protocols, parts.stakes, vec![], scaled).unwrap();
        let (ma, mb) = (metrics(&a), metrics(&b));
        prop_assert!(close(mb.0, k * ma.0, 1e-9));
        prop_assert!(close(mb.1, k * ma.1, 1e-9));
    }

    #[test]
    fn snapshot_json_round_trip(seed in any::<u64>()) {
        let s = random_parts(seed).build();
        let back = parse_snapshot(&snapshot_to_json(&s), &Default::default()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn guard_is_health_and_profit(
        vc in 1.0f64..1e6, vd in 1.0f64..1e6, alpha in 0.05f64..0.99,
        delta in 0.05f64..1.0, bonus in 0.0f64..0.2, gas in 0.0f64..500.0, cdp in any::<bool>(),
    ) {
        let protocol = if cdp {
            Protocol::cdp("P", delta, &[("C", alpha)])
        } else {
            Protocol::lending("P", delta, bonus, &[("C", alpha)])
        };
        let pos = Position::new("a", "P", vec![Holding::new("C", vc)], vec![Holding::new("D", vd)]);
        let prices = tvr_core::PriceVector::from_prices([("C", 1.0), ("D", 1.0)]);
        let o = evaluate_liquidation(&pos, &prices, &protocol, gas).unwrap();
        prop_assert_eq!(o.triggered, o.health < 1.0 && o.profit > 0.0);
        prop_assert!(close(o.health, alpha * vc / vd, 1e-12));
    }

    #[test]
    fn lending_seizure_is_bonus_times_repaid(
        vc in 1.0f64..1e6, vd in 1.0f64..1e6, delta in 0.05f64..1.0, bonus in 0.001f64..0.2,
    ) {
        let protocol = Protocol::lending("P", delta, bonus, &[("C", 0.5)]);
        let pos = Position::new("a", "P", vec![Holding::new("C", vc)], vec![Holding::new("D", vd)]);
        let prices = tvr_core::PriceVector::from_prices([("C", 2.0), ("D", 1.0)]);
        let o = evaluate_liquidation(&pos, &prices, &protocol, 0.0).unwrap();
        if o.triggered {
            let d = &o.deltas;
            prop_assert!(close(d.seized_value, (1.0 + bonus) * d.repaid_value, 1e-12));
            prop_assert!(d.seized_value <= 2.0 * vc * (1.0 + 1e-12));
            prop_assert!(d.repaid_value <= delta * vd * (1.0 + 1e-12));
        }
    }

    #[test]
    fn disassembly_round_trips(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let code = random_valid_bytecode(&mut rng);
        prop_assert_eq!(disassemble(&code).unwrap().to_bytes(), code);
    }

    #[test]
    fn spearman_is_symmetric_and_rank_invariant(
        x in prop::collection::vec(-100i32..100, 3..40),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = x.into_iter().map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|_| rng.gen_range(-5..5) as f64).collect();
        if let (Ok((a, pa)), Ok((b, pb))) = (spearman(&x, &y), spearman(&y, &x)) {
            prop_assert_eq!(a, b);
            prop_assert_eq!(pa, pb);
            prop_assert!((a - brute_spearman(&x, &y)).abs() <= 1e-12);
            // Strictly increasing maps keep every rank.
            let fx: Vec<f64> = x.iter().map(|v| v.powi(3) + 7.0 * v).collect();
            prop_assert_eq!(spearman(&fx, &y).unwrap().0, a);
            prop_assert!((-1.0..=1.0).contains(&a));
        }
    }
}

#[test]
fn sensitivity_curve_is_deterministic() {
    let s = tvr_core::ingest::load_snapshot(common::fixture("sensitivity.json")).unwrap();
    let sc = ShockScenario::new("ETH", linear_grid(0.0, 0.5, 26)).unwrap();
    let a = sensitivity_curve(&s, &sc).unwrap();
    let b = sensitivity_curve(&s, &sc).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv_string().unwrap(), b.to_csv_string().unwrap());
}
