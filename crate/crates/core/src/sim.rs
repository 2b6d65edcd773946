//! Price-shock contagion: shock a plain token, reprice derivatives, liquidate
//! to a fixed point and compare the change in TVL with the change in TVR.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ids::{ProtocolId, TokenId};
use crate::metrics::{tvl, tvr};
use crate::protocol::{evaluate_liquidation, LiquidationOutcome};
use crate::snapshot::Snapshot;
use crate::token::{status_from_gamma, PegStatus, PlainFlagVector, PriceVector, TokenKind};

pub const DEFAULT_MAX_ROUNDS: usize = 100;

/// Per-liquidation cost in USD: `gasLimit × gasPrice × scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GasModel {
    pub limit: f64,
    /// USD per unit of gas.
    pub price_usd: f64,
    pub scale: f64,
}

impl GasModel {
    pub fn fee(&self) -> f64 {
        self.limit * self.price_usd * self.scale
    }

    pub fn scaled(self, scale: f64) -> Self {
        Self { scale, ..self }
    }
}

impl Default for GasModel {
    fn default() -> Self {
        Environment::MaxTvl.gas()
    }
}

/// Market environments observed on three dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Environment {
    /// 2021-12-02.
    MaxTvl,
    /// 2022-05-09.
    LunaCollapse,
    /// 2022-11-08.
    FtxCollapse,
}

impl Environment {
    pub fn eth_price(self) -> f64 {
        match self {
            Environment::MaxTvl => 4075.03,
            Environment::LunaCollapse => 2249.89,
            Environment::FtxCollapse => 1334.29,
        }
    }

    pub fn gas_price_usd(self) -> f64 {
        match self {
            Environment::MaxTvl => 4.85e-4,
            Environment::LunaCollapse => 1.50e-4,
            Environment::FtxCollapse => 7.60e-5,
        }
    }

    pub fn gas(self) -> GasModel {
        GasModel { limit: 500_000.0, price_usd: self.gas_price_usd(), scale: 1.0 }
    }

    pub const CLOSE_FACTOR_AAVE: f64 = 0.5;
    pub const CLOSE_FACTOR_MAKER: f64 = 1.0;
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ProtocolOverride {
    pub close_factor: Option<f64>,
    pub liquidation_bonus: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShockScenario {
    pub shock_token: TokenId,
    pub grid: Vec<f64>,
    pub overrides: BTreeMap<ProtocolId, ProtocolOverride>,
    pub gas: GasModel,
    pub max_rounds: usize,
}

impl ShockScenario {
    pub fn new(shock_token: impl Into<TokenId>, grid: Vec<f64>) -> Result<Self> {
        let s = Self {
            shock_token: shock_token.into(),
            grid,
            overrides: BTreeMap::new(),
            gas: GasModel::default(),
            max_rounds: DEFAULT_MAX_ROUNDS,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_override(mut self, protocol: impl Into<ProtocolId>, o: ProtocolOverride) -> Self {
        self.overrides.insert(protocol.into(), o);
        self
    }

    pub fn with_gas(mut self, gas: GasModel) -> Self {
        self.gas = gas;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (i, d) in self.grid.iter().enumerate() {
            if !(0.0..=1.0).contains(d) {
                return Err(Error::DeclineOutOfRange(*d));
            }
            if i > 0 && self.grid[i - 1] >= *d {
                return Err(Error::invalid("grid", "must be strictly ascending"));
            }
        }
        if self.max_rounds == 0 {
            return Err(Error::invalid("max_rounds", "must be positive"));
        }
        let g = &self.gas;
        if !(g.fee().is_finite() && g.limit >= 0.0 && g.price_usd >= 0.0 && g.scale >= 0.0) {
            return Err(Error::invalid("gas", "limit, price and scale must be finite and >= 0"));
        }
        Ok(())
    }
}

/// `points` evenly spaced declines from `start` to `stop` inclusive.
pub fn linear_grid(start: f64, stop: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![start],
        n => (0..n).map(|i| start + (stop - start) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Multiplies a plain token's price by `1 − d`.
pub fn apply_shock(snapshot: &Snapshot, token: &str, d: f64) -> Result<Snapshot> {
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::DeclineOutOfRange(d));
    }
    let base = snapshot.plain_prices().get(token).copied().ok_or_else(|| match snapshot.token(token) {
        None => Error::UnknownToken(token.to_owned()),
        Some(t) => Error::TokenKind { token: token.to_owned(), expected: "plain", actual: t.kind.name() },
    })?;
    if d == 0.0 {
        return Ok(snapshot.clone());
    }
    snapshot.with_plain_price(token, base * (1.0 - d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiquidationEvent {
    /// 1-based round in which the liquidation fired.
    pub round: usize,
    pub outcome: LiquidationOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub snapshot: Snapshot,
    pub prices: PriceVector,
    pub events: Vec<LiquidationEvent>,
    /// Rounds in which at least one liquidation fired.
    pub rounds: usize,
    pub converged: bool,
    /// Stablecoin peg status at the start of every round, plus the final state.
    pub peg_trace: Vec<BTreeMap<TokenId, PegStatus>>,
}

fn peg_map(snapshot: &Snapshot, prices: &PriceVector) -> BTreeMap<TokenId, PegStatus> {
    snapshot
        .tokens()
        .filter(|t| t.kind == TokenKind::CdpStablecoin)
        .filter_map(|t| {
            let gamma = prices.gamma(t.id.as_str())?;
            Some((t.id.clone(), status_from_gamma(gamma, t.peg?)))
        })
        .collect()
}

/// Liquidates every position with `h < 1 ∧ Π > 0` until a round fires none.
///
/// Triggers within a round are evaluated at round-start prices in
/// `(account, protocol)` order and applied together at round end.
pub fn liquidation_fixed_point(snapshot: &Snapshot, gas_fee: f64, max_rounds: usize) -> Result<FixedPoint> {
    let mut state = snapshot.clone();
    let mut events = Vec::new();
    let mut peg_trace = Vec::new();
    let mut rounds = 0;
    loop {
        let prices = state.resolve_prices()?;
        peg_trace.push(peg_map(&state, &prices));
        if rounds == max_rounds {
            let converged = !any_triggered(&state, &prices, gas_fee)?;
            return Ok(FixedPoint { snapshot: state, prices, events, rounds, converged, peg_trace });
        }
        let mut fired = Vec::new();
        for position in state.positions() {
            let protocol = state
                .protocol(position.protocol.as_str())
                .ok_or_else(|| Error::UnknownProtocol(position.protocol.to_string()))?;
            let outcome = evaluate_liquidation(position, &prices, protocol, gas_fee)?;
            if outcome.triggered {
                fired.push(outcome);
            }
        }
        if fired.is_empty() {
            return Ok(FixedPoint { snapshot: state, prices, events, rounds, converged: true, peg_trace });
        }
        rounds += 1;
        for outcome in fired {
            state.apply_liquidation_in_place(&outcome)?;
            events.push(LiquidationEvent { round: rounds, outcome });
        }
    }
}

fn any_triggered(state: &Snapshot, prices: &PriceVector, gas_fee: f64) -> Result<bool> {
    for position in state.positions() {
        let protocol = state
            .protocol(position.protocol.as_str())
            .ok_or_else(|| Error::UnknownProtocol(position.protocol.to_string()))?;
        if evaluate_liquidation(position, prices, protocol, gas_fee)?.triggered {
            return Ok(true);
        }
    }
    Ok(false)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimRow {
    pub d: f64,
    pub delta_tvl: f64,
    pub delta_tvr: f64,
    pub events: usize,
    pub seized_usd: f64,
    /// Depegged stablecoins after the fixed point, with `Γ / c_d`.
    pub depegs: Vec<(TokenId, f64)>,
    pub rounds: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub shock_token: TokenId,
    pub baseline_tvl: f64,
    pub baseline_tvr: f64,
    pub stablecoins: Vec<TokenId>,
    pub rows: Vec<SimRow>,
}

pub const SIM_CSV_HEADER: [&str; 8] =
    ["d", "delta_tvl", "delta_tvr", "events", "seized_usd", "depegged", "rounds", "converged"];

impl SimResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SIM_CSV_HEADER)?;
        for r in &self.rows {
            let depegged = r.depegs.iter().map(|(t, ratio)| format!("{t}:{ratio}")).collect::<Vec<_>>().join(";");
            w.write_record([
                r.d.to_string(),
                r.delta_tvl.to_string(),
                r.delta_tvr.to_string(),
                r.events.to_string(),
                r.seized_usd.to_string(),
                depegged,
                r.rounds.to_string(),
                r.converged.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv writer emits utf-8"))
    }
}

/// Applies a scenario's per-protocol parameter overrides.
pub fn apply_overrides(snapshot: &Snapshot, scenario: &ShockScenario) -> Result<Snapshot> {
    let mut out = snapshot.clone();
    for (protocol, o) in &scenario.overrides {
        out = out.with_protocol_params(protocol.as_str(), o.close_factor, o.liquidation_bonus)?;
    }
    Ok(out)
}

struct Point {
    tvl: f64,
    tvr: f64,
    events: usize,
    seized: f64,
    depegs: Vec<(TokenId, f64)>,
    rounds: usize,
    converged: bool,
}

fn run_point(base: &Snapshot, scenario: &ShockScenario, d: f64) -> Result<Point> {
    let shocked = apply_shock(base, scenario.shock_token.as_str(), d)?;
    let fp = liquidation_fixed_point(&shocked, scenario.gas.fee(), scenario.max_rounds)?;
    let tau = PlainFlagVector::from_snapshot(&fp.snapshot);
    let depegs = fp
        .peg_trace
        .last()
        .into_iter()
        .flatten()
        .filter_map(|(t, s)| match s {
            PegStatus::Depegged(r) => Some((t.clone(), *r)),
            PegStatus::Pegged => None,
        })
        .collect();
    Ok(Point {
        tvl: tvl(&fp.snapshot, &fp.prices)?,
        tvr: tvr(&fp.snapshot, &fp.prices, &tau)?,
        events: fp.events.len(),
        seized: fp.events.iter().fold(0.0, |acc, e| acc + e.outcome.deltas.seized_value),
        depegs,
        rounds: fp.rounds,
        converged: fp.converged,
    })
}

/// ΔTVL and ΔTVR over the decline grid, relative to the unshocked fixed point.
pub fn sensitivity_curve(snapshot: &Snapshot, scenario: &ShockScenario) -> Result<SimResult> {
    scenario.validate()?;
    let base = apply_overrides(snapshot, scenario)?;
    apply_shock(&base, scenario.shock_token.as_str(), 0.0)?;
    let zero = run_point(&base, scenario, 0.0)?;
    let points = scenario.grid.par_iter().map(|&d| run_point(&base, scenario, d)).collect::<Result<Vec<_>>>()?;
    let rows = scenario
        .grid
        .iter()
        .zip(points)
        .map(|(&d, p)| SimRow {
            d,
            delta_tvl: p.tvl - zero.tvl,
            delta_tvr: p.tvr - zero.tvr,
            events: p.events,
            seized_usd: p.seized,
            depegs: p.depegs,
            rounds: p.rounds,
            converged: p.converged,
        })
        .collect();
    Ok(SimResult {
        shock_token: scenario.shock_token.clone(),
        baseline_tvl: zero.tvl,
        baseline_tvr: zero.tvr,
        stablecoins: base.tokens().filter(|t| t.kind == TokenKind::CdpStablecoin).map(|t| t.id.clone()).collect(),
        rows,
    })
}

/// Smallest grid decline at which `token` ends a run depegged.
pub fn depeg_point(result: &SimResult, token: &str) -> Result<Option<f64>> {
    if !result.stablecoins.iter().any(|t| t.as_str() == token) {
        return Err(Error::UnknownToken(token.to_owned()));
    }
    Ok(result.rows.iter().find(|r| r.depegs.iter().any(|(t, _)| t.as_str() == token)).map(|r| r.d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Position, Protocol, Stake};
    use crate::token::{Backing, Holding, Token};

    fn vault_system(debt: f64) -> Snapshot {
        Snapshot::new(
            vec![Token::plain("ETH"), Token::cdp_stablecoin("DAI", 1.0, 1000.0, Backing::Issuer("Maker".into()))],
            vec![Protocol::cdp("Maker", 1.0, &[("ETH", 0.5)]), Protocol::passive("Pool")],
            vec![Stake::new("Maker", "ETH", 2.0), Stake::new("Pool", "DAI", 500.0)],
            vec![Position::new("v1", "Maker", vec![Holding::new("ETH", 1.0)], vec![Holding::new("DAI", debt)])],
            [("ETH".into(), 1000.0)].into(),
        )
        .unwrap()
    }

    #[test]
    fn shock_examples() {
        let s = vault_system(400.0);
        assert_eq!(apply_shock(&s, "ETH", 0.0).unwrap(), s);
        let p = apply_shock(&s, "ETH", 0.25).unwrap().plain_prices()["ETH"];
        assert_eq!(p, 750.0);
        assert_eq!(apply_shock(&s, "ETH", 1.0).unwrap().plain_prices()["ETH"], 0.0);
        assert!(matches!(apply_shock(&s, "DAI", 0.1), Err(Error::TokenKind { .. })));
        assert!(matches!(apply_shock(&s, "ETH", 1.5), Err(Error::DeclineOutOfRange(_))));
    }

    #[test]
    fn healthy_system_is_a_fixed_point() {
        let s = vault_system(400.0);
        let fp = liquidation_fixed_point(&s, 0.0, 100).unwrap();
        assert!(fp.events.is_empty());
        assert!(fp.converged);
        assert_eq!(fp.snapshot, s);
    }

    #[test]
    fn one_vault_liquidated_once() {
        let s = apply_shock(&vault_system(400.0), "ETH", 0.3).unwrap();
        let fp = liquidation_fixed_point(&s, 10.0, 100).unwrap();
        assert_eq!(fp.events.len(), 1);
        assert_eq!(fp.rounds, 1);
        let pos = &fp.snapshot.positions()[0];
        assert_eq!(pos.collateral[0].quantity, 0.0);
        assert_eq!(pos.debt[0].quantity, 0.0);
        assert_eq!(fp.snapshot.stake("Maker", "ETH"), 1.0);
        assert_eq!(fp.snapshot.token("DAI").unwrap().supply, 600.0);
    }

    #[test]
    fn round_cap_reports_non_convergence() {
        let s = apply_shock(&vault_system(400.0), "ETH", 0.3).unwrap();
        let fp = liquidation_fixed_point(&s, 10.0, 0).unwrap();
        assert!(!fp.converged);
        assert!(fp.events.is_empty());
    }

    #[test]
    fn linear_grid_endpoints() {
        let g = linear_grid(0.0, 0.5, 51);
        assert_eq!(g.len(), 51);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[50], 0.5);
        assert!((g[1] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_grid_gives_zero_row() {
        let s = vault_system(400.0);
        let sc = ShockScenario::new("ETH", vec![0.0]).unwrap();
        let r = sensitivity_curve(&s, &sc).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].delta_tvl, 0.0);
        assert_eq!(r.rows[0].delta_tvr, 0.0);
    }

    #[test]
    fn scenario_validation() {
        assert!(ShockScenario::new("ETH", vec![0.2, 0.1]).is_err());
        assert!(ShockScenario::new("ETH", vec![-0.1]).is_err());
    }

    #[test]
    fn csv_layout() {
        let s = vault_system(400.0);
        let sc = ShockScenario::new("ETH", vec![0.0, 0.5]).unwrap();
        let csv = sensitivity_curve(&s, &sc).unwrap().to_csv_string().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), SIM_CSV_HEADER.join(","));
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn default_gas_fee() {
        assert!((GasModel::default().fee() - 242.5).abs() < 1e-9);
    }
}
