//! System state: tokens, protocols, the stake matrix `Q` and PLF positions.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::ids::{ProtocolId, TokenId};
use crate::protocol::{LiquidationOutcome, Position, Protocol, ProtocolKind, Stake};
use crate::token::{resolve_prices, Backing, Holding, PriceVector, Token, TokenKind};

/// Relative slack for quantities that should cancel exactly but went through
/// floating-point arithmetic.
const QUANTITY_SLACK: f64 = 1e-9;

/// Column-major quantity matrix: protocol -> token -> quantity.
pub type QuantityMatrix = BTreeMap<ProtocolId, BTreeMap<TokenId, f64>>;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Snapshot {
    tokens: BTreeMap<TokenId, Token>,
    protocols: BTreeMap<ProtocolId, Protocol>,
    stakes: QuantityMatrix,
    positions: Vec<Position>,
    plain_prices: BTreeMap<TokenId, f64>,
}

impl Snapshot {
    /// Builds and validates a snapshot. Positions are reordered by
    /// `(account, protocol)`.
    pub fn new(
        tokens: Vec<Token>,
        protocols: Vec<Protocol>,
        stakes: Vec<Stake>,
        positions: Vec<Position>,
        plain_prices: BTreeMap<TokenId, f64>,
    ) -> Result<Self> {
        let mut token_map = BTreeMap::new();
        for t in tokens {
            let id = t.id.clone();
            if token_map.insert(id.clone(), t).is_some() {
                return Err(Error::invalid(format!("tokens[{id}]"), "duplicate token id"));
            }
        }
        let mut protocol_map = BTreeMap::new();
        for p in protocols {
            let id = p.id.clone();
            if protocol_map.insert(id.clone(), p).is_some() {
                return Err(Error::invalid(format!("protocols[{id}]"), "duplicate protocol id"));
            }
        }
        let mut stake_map: QuantityMatrix = BTreeMap::new();
        for (i, s) in stakes.into_iter().enumerate() {
            if !protocol_map.contains_key(s.protocol.as_str()) {
                return Err(Error::invalid(
                    format!("stakes[{i}].protocol"),
                    format!("undeclared protocol `{}`", s.protocol),
                ));
            }
            if !token_map.contains_key(s.token.as_str()) {
                return Err(Error::invalid(format!("stakes[{i}].token"), format!("undeclared token `{}`", s.token)));
            }
            check_quantity(&format!("stakes[{i}].quantity"), s.quantity)?;
            let column = stake_map.entry(s.protocol.clone()).or_default();
            if column.insert(s.token.clone(), s.quantity).is_some() {
                return Err(Error::invalid(
                    format!("stakes[{i}]"),
                    format!("duplicate stake of `{}` in `{}`", s.token, s.protocol),
                ));
            }
        }
        let mut positions = positions;
        positions.sort_by(|a, b| (&a.account, &a.protocol).cmp(&(&b.account, &b.protocol)));

        let snapshot = Self { tokens: token_map, protocols: protocol_map, stakes: stake_map, positions, plain_prices };
        snapshot.validate()?;
        Ok(snapshot)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    fn validate(&self) -> Result<()> {
        for (id, t) in &self.tokens {
            let field = |f: &str| format!("tokens[{id}].{f}");
            if !t.fluctuation.is_finite() {
                return Err(Error::invalid(field("fluctuation"), "must be finite"));
            }
            match t.kind {
                TokenKind::Plain => {
                    if t.backing != Backing::None {
                        return Err(Error::invalid(field("basket"), "plain tokens have no underlying"));
                    }
                    if t.peg.is_some() {
                        return Err(Error::invalid(field("peg"), "only cdp stablecoins carry a peg"));
                    }
                    let price =
                        self.plain_prices.get(id.as_str()).copied().ok_or_else(|| {
                            Error::invalid(format!("plain_prices.{id}"), "missing price for plain token")
                        })?;
                    check_quantity(&format!("plain_prices.{id}"), price)?;
                }
                TokenKind::Derivative | TokenKind::CdpStablecoin => {
                    if !(t.supply.is_finite() && t.supply > 0.0) {
                        return Err(Error::invalid(field("supply"), "must be finite and > 0"));
                    }
                    if t.kind == TokenKind::CdpStablecoin {
                        match t.peg {
                            Some(p) if p.is_finite() && p > 0.0 => {}
                            _ => return Err(Error::invalid(field("peg"), "must be finite and > 0")),
                        }
                    } else if t.peg.is_some() {
                        return Err(Error::invalid(field("peg"), "only cdp stablecoins carry a peg"));
                    }
                    match &t.backing {
                        Backing::None => {
                            return Err(Error::invalid(field("basket"), "must not be empty"));
                        }
                        Backing::Basket(basket) => {
                            if basket.is_empty() {
                                return Err(Error::invalid(field("basket"), "must not be empty"));
                            }
                            for (i, h) in basket.iter().enumerate() {
                                if !self.tokens.contains_key(h.token.as_str()) {
                                    return Err(Error::invalid(
                                        field(&format!("basket[{i}].token")),
                                        format!("undeclared token `{}`", h.token),
                                    ));
                                }
                                check_quantity(&field(&format!("basket[{i}].quantity")), h.quantity)?;
                            }
                        }
                        Backing::Issuer(p) => {
                            if !self.protocols.contains_key(p.as_str()) {
                                return Err(Error::invalid(field("issuer"), format!("undeclared protocol `{p}`")));
                            }
                            if self.stakes_of(p.as_str()).next().is_none() {
                                return Err(Error::invalid(
                                    field("issuer"),
                                    format!("issuer `{p}` holds nothing to back the token"),
                                ));
                            }
                        }
                    }
                }
            }
        }
        for id in self.plain_prices.keys() {
            match self.tokens.get(id.as_str()) {
                Some(t) if t.is_plain() => {}
                Some(_) => {
                    return Err(Error::invalid(format!("plain_prices.{id}"), "derivative prices are endogenous"))
                }
                None => return Err(Error::invalid(format!("plain_prices.{id}"), format!("undeclared token `{id}`"))),
            }
        }

        for (id, p) in &self.protocols {
            if let Some(params) = p.params() {
                let field = |f: &str| format!("protocols[{id}].{f}");
                if !(params.close_factor > 0.0 && params.close_factor <= 1.0) {
                    return Err(Error::invalid(field("close_factor"), "must lie in (0, 1]"));
                }
                if !(params.liquidation_bonus.is_finite() && params.liquidation_bonus >= 0.0) {
                    return Err(Error::invalid(field("liquidation_bonus"), "must be >= 0"));
                }
                for (token, alpha) in &params.thresholds {
                    if !self.tokens.contains_key(token.as_str()) {
                        return Err(Error::invalid(
                            field("liquidation_thresholds"),
                            format!("undeclared token `{token}`"),
                        ));
                    }
                    if !(*alpha >= 0.0 && *alpha < 1.0) {
                        return Err(Error::invalid(
                            field(&format!("liquidation_thresholds.{token}")),
                            "must lie in [0, 1)",
                        ));
                    }
                }
            }
        }

        let mut seen = BTreeSet::new();
        let mut collateral_sum: QuantityMatrix = BTreeMap::new();
        let mut redeposit_sum: QuantityMatrix = BTreeMap::new();
        let mut cdp_debt: BTreeMap<TokenId, f64> = BTreeMap::new();
        for pos in &self.positions {
            let at = format!("positions[{}@{}]", pos.account, pos.protocol);
            if !seen.insert((&pos.account, &pos.protocol)) {
                return Err(Error::invalid(at, "duplicate position"));
            }
            let protocol = self.protocols.get(pos.protocol.as_str()).ok_or_else(|| {
                Error::invalid(format!("{at}.protocol"), format!("undeclared protocol `{}`", pos.protocol))
            })?;
            let params = protocol.params().ok_or_else(|| {
                Error::invalid(format!("{at}.protocol"), "positions live in cdp or lending protocols")
            })?;
            for (i, c) in pos.collateral.iter().enumerate() {
                self.check_holding(&format!("{at}.collateral[{i}]"), c)?;
                if !params.thresholds.contains_key(c.token.as_str()) {
                    return Err(Error::invalid(
                        format!("{at}.collateral[{i}].token"),
                        format!("`{}` is not accepted as collateral by `{}`", c.token, pos.protocol),
                    ));
                }
                *collateral_sum.entry(pos.protocol.clone()).or_default().entry(c.token.clone()).or_default() +=
                    c.quantity;
            }
            for (i, d) in pos.debt.iter().enumerate() {
                self.check_holding(&format!("{at}.debt[{i}]"), d)?;
                if matches!(protocol.kind, ProtocolKind::Cdp(_)) {
                    *cdp_debt.entry(d.token.clone()).or_default() += d.quantity;
                }
            }
            for (i, r) in pos.redeposits.iter().enumerate() {
                let f = format!("{at}.redeposits[{i}]");
                if !self.protocols.contains_key(r.protocol.as_str()) {
                    return Err(Error::invalid(f, format!("undeclared protocol `{}`", r.protocol)));
                }
                self.check_holding(&f, &Holding::new(r.token.clone(), r.quantity))?;
                *redeposit_sum.entry(r.protocol.clone()).or_default().entry(r.token.clone()).or_default() += r.quantity;
            }
        }
        for (what, sums) in [("collateral", &collateral_sum), ("redeposits", &redeposit_sum)] {
            for (protocol, column) in sums {
                for (token, total) in column {
                    let staked = self.stake(protocol.as_str(), token.as_str());
                    if *total > staked * (1.0 + QUANTITY_SLACK) + QUANTITY_SLACK {
                        return Err(Error::invalid(
                            format!("positions.{what}"),
                            format!("{total} {token} in `{protocol}` exceeds the staked {staked}"),
                        ));
                    }
                }
            }
        }
        for (token, total) in &cdp_debt {
            let t = &self.tokens[token.as_str()];
            if t.kind != TokenKind::Plain && *total > t.supply * (1.0 + QUANTITY_SLACK) {
                return Err(Error::invalid(
                    format!("tokens[{token}].supply"),
                    format!("cdp debt {total} exceeds circulating supply {}", t.supply),
                ));
            }
        }
        Ok(())
    }

    fn check_holding(&self, field: &str, h: &Holding) -> Result<()> {
        if !self.tokens.contains_key(h.token.as_str()) {
            return Err(Error::invalid(format!("{field}.token"), format!("undeclared token `{}`", h.token)));
        }
        check_quantity(&format!("{field}.quantity"), h.quantity)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.tokens.values()
    }

    pub fn token(&self, id: &str) -> Option<&Token> {
        self.tokens.get(id)
    }

    pub fn protocols(&self) -> impl Iterator<Item = &Protocol> {
        self.protocols.values()
    }

    pub fn protocol(&self, id: &str) -> Option<&Protocol> {
        self.protocols.get(id)
    }

    /// Non-zero and zero entries of `Q` as `(protocol, token, quantity)`.
    pub fn stakes(&self) -> impl Iterator<Item = (&ProtocolId, &TokenId, f64)> {
        self.stakes.iter().flat_map(|(p, col)| col.iter().map(move |(t, q)| (p, t, *q)))
    }

    pub fn stakes_of<'a>(&'a self, protocol: &str) -> impl Iterator<Item = (&'a TokenId, f64)> + 'a {
        self.stakes.get(protocol).into_iter().flat_map(|col| col.iter().map(|(t, q)| (t, *q)))
    }

    pub fn stake(&self, protocol: &str, token: &str) -> f64 {
        self.stakes.get(protocol).and_then(|col| col.get(token)).copied().unwrap_or(0.0)
    }

    pub fn stake_matrix(&self) -> &QuantityMatrix {
        &self.stakes
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn position(&self, account: &str, protocol: &str) -> Option<&Position> {
        self.positions.iter().find(|p| p.account.as_str() == account && p.protocol.as_str() == protocol)
    }

    pub fn plain_prices(&self) -> &BTreeMap<TokenId, f64> {
        &self.plain_prices
    }

    pub fn resolve_prices(&self) -> Result<PriceVector> {
        resolve_prices(self, &self.plain_prices)
    }

    /// `Q′`: the stake matrix minus quantities that positions declare as
    /// borrowed value redeposited into the system.
    pub fn held_matrix(&self) -> QuantityMatrix {
        let mut held = self.stakes.clone();
        for pos in &self.positions {
            for r in &pos.redeposits {
                if let Some(q) = held.get_mut(r.protocol.as_str()).and_then(|col| col.get_mut(r.token.as_str())) {
                    *q = (*q - r.quantity).max(0.0);
                }
            }
        }
        held
    }

    /// Copy with one plain price replaced.
    pub fn with_plain_price(&self, token: &str, price: f64) -> Result<Self> {
        match self.tokens.get(token) {
            None => Err(Error::UnknownToken(token.to_owned())),
            Some(t) if !t.is_plain() => {
                Err(Error::TokenKind { token: token.to_owned(), expected: "plain", actual: t.kind.name() })
            }
            Some(_) => {
                check_quantity(&format!("plain_prices.{token}"), price)?;
                let mut next = self.clone();
                next.plain_prices.insert(token.into(), price);
                Ok(next)
            }
        }
    }

    /// Copy with a protocol's close factor and/or liquidation bonus replaced.
    pub fn with_protocol_params(
        &self,
        protocol: &str,
        close_factor: Option<f64>,
        liquidation_bonus: Option<f64>,
    ) -> Result<Self> {
        let mut next = self.clone();
        let p = next.protocols.get_mut(protocol).ok_or_else(|| Error::UnknownProtocol(protocol.to_owned()))?;
        let kind = p.kind.name();
        let params = p.params_mut().ok_or_else(|| Error::ProtocolKind {
            protocol: protocol.to_owned(),
            expected: "cdp or lending",
            actual: kind,
        })?;
        if let Some(d) = close_factor {
            params.close_factor = d;
        }
        if let Some(b) = liquidation_bonus {
            params.liquidation_bonus = b;
        }
        next.validate()?;
        Ok(next)
    }

    /// Applies one liquidation outcome: `q_{t+1} = q_t + Δ` on the protocol's
    /// stake column and on the position, burning CDP-repaid supply.
    pub fn apply_liquidation(&self, outcome: &LiquidationOutcome) -> Result<Self> {
        let mut next = self.clone();
        next.apply_liquidation_in_place(outcome)?;
        Ok(next)
    }

    pub(crate) fn apply_liquidation_in_place(&mut self, outcome: &LiquidationOutcome) -> Result<()> {
        if !outcome.triggered {
            return Ok(());
        }
        let idx = self
            .positions
            .iter()
            .position(|p| p.account == outcome.account && p.protocol == outcome.protocol)
            .ok_or_else(|| {
                Error::invalid("liquidation", format!("no position `{}` in `{}`", outcome.account, outcome.protocol))
            })?;
        let protocol_id = outcome.protocol.clone();
        let is_cdp = matches!(self.protocols.get(protocol_id.as_str()).map(|p| &p.kind), Some(ProtocolKind::Cdp(_)));
        let deltas = &outcome.deltas;

        for c in &deltas.collateral {
            let column = self.stakes.entry(protocol_id.clone()).or_default();
            let stake = column.entry(c.token.clone()).or_default();
            *stake = settle(protocol_id.as_str(), c.token.as_str(), *stake, c.quantity)?;
            let pos = &mut self.positions[idx];
            adjust(&mut pos.collateral, &pos.account.to_string(), &c.token, c.quantity)?;
        }
        if is_cdp {
            for d in &deltas.debt_cleared {
                let token =
                    self.tokens.get_mut(d.token.as_str()).ok_or_else(|| Error::UnknownToken(d.token.to_string()))?;
                if token.kind != TokenKind::Plain {
                    token.supply = settle("supply", d.token.as_str(), token.supply, -d.quantity)?;
                }
            }
        } else {
            for r in &deltas.repaid {
                let column = self.stakes.entry(protocol_id.clone()).or_default();
                let stake = column.entry(r.token.clone()).or_default();
                *stake = settle(protocol_id.as_str(), r.token.as_str(), *stake, r.quantity)?;
            }
        }
        let pos = &mut self.positions[idx];
        let account = pos.account.to_string();
        for d in &deltas.debt_cleared {
            adjust(&mut pos.debt, &account, &d.token, -d.quantity)?;
        }
        let remaining = (1.0 - deltas.debt_share).clamp(0.0, 1.0);
        for r in &mut pos.redeposits {
            r.quantity *= remaining;
        }
        Ok(())
    }
}

fn check_quantity(field: &str, q: f64) -> Result<()> {
    if q.is_finite() && q >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("quantity {q} must be finite and >= 0")))
    }
}

/// `before + delta`, snapping float residue to zero and rejecting real
/// negatives.
fn settle(holder: &str, token: &str, before: f64, delta: f64) -> Result<f64> {
    let after = before + delta;
    if after >= 0.0 {
        Ok(after)
    } else if after >= -QUANTITY_SLACK * before.abs().max(delta.abs()).max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::NegativeQuantity { holder: holder.to_owned(), token: token.to_owned(), value: after })
    }
}

fn adjust(holdings: &mut [Holding], holder: &str, token: &TokenId, delta: f64) -> Result<()> {
    match holdings.iter_mut().find(|h| &h.token == token) {
        Some(h) => {
            h.quantity = settle(holder, token.as_str(), h.quantity, delta)?;
            Ok(())
        }
        None if delta == 0.0 => Ok(()),
        None => Err(Error::NegativeQuantity { holder: holder.to_owned(), token: token.to_string(), value: delta }),
    }
}
