//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= rel * a.abs().max(b.abs())
}

/// A single position with its market data, written out flat.
#[derive(Debug, Clone)]
pub struct RefCase {
    pub cdp: bool,
    pub collateral: Vec<(f64, f64, f64)>,
    pub debt: Vec<(f64, f64)>,
    pub close_factor: f64,
    pub bonus: f64,
    pub gas: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefOutcome {
    pub health: f64,
    pub profit: f64,
    pub triggered: bool,
    pub collateral_delta: Vec<f64>,
    pub debt_cleared: Vec<f64>,
    pub repaid: Vec<f64>,
}

/// Liquidation formulas evaluated straight from their definitions.
pub fn reference_liquidation(c: &RefCase) -> RefOutcome {
    let mut vc = 0.0;
    let mut weighted = 0.0;
    for &(q, p, a) in &c.collateral {
        vc += q * p;
        weighted += q * a * p;
    }
    let mut vd = 0.0;
    for &(q, p) in &c.debt {
        vd += q * p;
    }
    let health = if vd > 0.0 { weighted / vd } else { f64::INFINITY };
    let d = c.close_factor;
    let b = c.bonus;
    let v_liq = if vc / (1.0 + b) < d * vd { vc / (1.0 + b) } else { d * vd };
    let profit = if c.cdp { d * (vc - vd) - c.gas } else { v_liq * b - c.gas };
    let triggered = health < 1.0 && profit > 0.0;
    let n_c = c.collateral.len();
    let n_d = c.debt.len();
    if !triggered {
        return RefOutcome {
            health,
            profit,
            triggered,
            collateral_delta: vec![],
            debt_cleared: vec![],
            repaid: vec![],
        };
    }
    let (collateral_delta, debt_cleared, repaid): (Vec<f64>, Vec<f64>, Vec<f64>) = if c.cdp {
        (c.collateral.iter().map(|x| -d * x.0).collect(), c.debt.iter().map(|x| d * x.0).collect(), vec![0.0; n_d])
    } else {
        let per_debt: Vec<f64> = c.debt.iter().map(|x| v_liq * x.0 / vd).collect();
        (c.collateral.iter().map(|x| -(1.0 + b) * v_liq * x.0 / vc).collect(), per_debt.clone(), per_debt)
    };
    debug_assert_eq!(collateral_delta.len(), n_c);
    RefOutcome { health, profit, triggered, collateral_delta, debt_cleared, repaid }
}

/// Random single-position case; roughly half are near the liquidation line.
pub fn random_case(rng: &mut ChaCha8Rng) -> RefCase {
    let cdp = rng.gen_bool(0.5);
    let n_c = rng.gen_range(1..=3);
    let n_d = rng.gen_range(1..=2);
    let collateral = (0..n_c)
        .map(|_| (rng.gen_range(0.01..1_000.0), rng.gen_range(0.5..5_000.0), rng.gen_range(0.5..0.95)))
        .collect::<Vec<_>>();
    let weighted: f64 = collateral.iter().map(|(q, p, a)| q * p * a).sum();
    let target_h = rng.gen_range(0.6..1.4);
    let debt_value = weighted / target_h;
    let mut debt = Vec::new();
    let mut left = debt_value;
    for i in 0..n_d {
        let p = rng.gen_range(0.9..3_000.0);
        let v = if i + 1 == n_d { left } else { left * rng.gen_range(0.2..0.8) };
        left -= v;
        debt.push((v / p, p));
    }
    RefCase {
        cdp,
        collateral,
        debt,
        close_factor: if rng.gen_bool(0.3) { 1.0 } else { rng.gen_range(0.1..1.0) },
        bonus: if cdp { 0.0 } else { rng.gen_range(0.0..0.15) },
        gas: rng.gen_range(0.0..50.0),
    }
}

/// `rank_i = 1 + #{x_j < x_i} + (#{x_j = x_i} − 1) / 2`, quadratic on purpose.
pub fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&a| {
            let less = x.iter().filter(|&&b| b < a).count() as f64;
            let equal = x.iter().filter(|&&b| b == a).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    let rx = brute_ranks(x);
    let ry = brute_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx.sqrt() * vy.sqrt())
}

/// Integer-valued series, so ties are frequent.
pub fn tied_series(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let levels = rng.gen_range(3..12);
    (0..n).map(|_| rng.gen_range(0..levels) as f64).collect()
}

/// Instruction-aligned byte string: opcode, then exactly its immediate width.
pub fn random_valid_bytecode(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let len = rng.gen_range(0..200);
    let mut out = Vec::new();
    for _ in 0..len {
        let op: u8 = rng.gen();
        out.push(op);
        if (0x60..=0x7f).contains(&op) {
            for _ in 0..(op - 0x5f) {
                out.push(rng.gen());
            }
        }
    }
    out
}
