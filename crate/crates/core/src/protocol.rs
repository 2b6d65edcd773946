//! Protocols, PLF positions, health factors and the liquidation rules.
//!
//! Liquidation follows a simple law of motion: a position whose health factor
//! drops below one is liquidated only when the liquidator profits after gas.
//! CDP liquidations seize collateral and burn the repaid stablecoin. Lending
//! liquidations repay at most `V_liq = min{V_c/(1+b), δ·V_d}` of debt and hand
//! `(1+b)·V_liq` of collateral to the liquidator, split pro rata over tokens.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{AccountId, ProtocolId, TokenId};
use crate::token::{Holding, PriceVector};

#[derive(Debug, Clone, PartialEq)]
pub struct LiquidationParams {
    /// `δ ∈ (0, 1]`.
    pub close_factor: f64,
    /// `b ≥ 0`; only lending protocols use it.
    pub liquidation_bonus: f64,
    /// `α_i ∈ [0, 1)` per accepted collateral token.
    pub thresholds: BTreeMap<TokenId, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolKind {
    Passive,
    Cdp(LiquidationParams),
    Lending(LiquidationParams),
}

impl ProtocolKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolKind::Passive => "passive",
            ProtocolKind::Cdp(_) => "cdp",
            ProtocolKind::Lending(_) => "lending",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub id: ProtocolId,
    pub kind: ProtocolKind,
}

impl Protocol {
    pub fn passive(id: impl Into<ProtocolId>) -> Self {
        Self { id: id.into(), kind: ProtocolKind::Passive }
    }

    pub fn cdp(id: impl Into<ProtocolId>, close_factor: f64, thresholds: &[(&str, f64)]) -> Self {
        Self {
            id: id.into(),
            kind: ProtocolKind::Cdp(LiquidationParams {
                close_factor,
                liquidation_bonus: 0.0,
                thresholds: thresholds.iter().map(|(t, a)| ((*t).into(), *a)).collect(),
            }),
        }
    }

    pub fn lending(
        id: impl Into<ProtocolId>,
        close_factor: f64,
        liquidation_bonus: f64,
        thresholds: &[(&str, f64)],
    ) -> Self {
        Self {
            id: id.into(),
            kind: ProtocolKind::Lending(LiquidationParams {
                close_factor,
                liquidation_bonus,
                thresholds: thresholds.iter().map(|(t, a)| ((*t).into(), *a)).collect(),
            }),
        }
    }

    /// `ω_i`: whether the protocol is a PLF.
    pub fn is_plf(&self) -> bool {
        !matches!(self.kind, ProtocolKind::Passive)
    }

    pub fn params(&self) -> Option<&LiquidationParams> {
        match &self.kind {
            ProtocolKind::Passive => None,
            ProtocolKind::Cdp(p) | ProtocolKind::Lending(p) => Some(p),
        }
    }

    pub(crate) fn params_mut(&mut self) -> Option<&mut LiquidationParams> {
        match &mut self.kind {
            ProtocolKind::Passive => None,
            ProtocolKind::Cdp(p) | ProtocolKind::Lending(p) => Some(p),
        }
    }

    fn require_plf(&self) -> Result<&LiquidationParams> {
        self.params().ok_or_else(|| Error::ProtocolKind {
            protocol: self.id.to_string(),
            expected: "cdp or lending",
            actual: self.kind.name(),
        })
    }
}

/// A quantity of one token staked in one protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stake {
    pub protocol: ProtocolId,
    pub token: TokenId,
    pub quantity: f64,
}

impl Stake {
    pub fn new(protocol: impl Into<ProtocolId>, token: impl Into<TokenId>, quantity: f64) -> Self {
        Self { protocol: protocol.into(), token: token.into(), quantity }
    }
}

/// One account's collateral and debt in a PLF.
///
/// `redeposits` declares where borrowed value currently sits as stake in the
/// system; those quantities are excluded from the held matrix `Q′`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub account: AccountId,
    pub protocol: ProtocolId,
    #[serde(default)]
    pub collateral: Vec<Holding>,
    #[serde(default)]
    pub debt: Vec<Holding>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub redeposits: Vec<Stake>,
}

impl Position {
    pub fn new(
        account: impl Into<AccountId>,
        protocol: impl Into<ProtocolId>,
        collateral: Vec<Holding>,
        debt: Vec<Holding>,
    ) -> Self {
        Self { account: account.into(), protocol: protocol.into(), collateral, debt, redeposits: Vec::new() }
    }

    pub fn with_redeposits(mut self, redeposits: Vec<Stake>) -> Self {
        self.redeposits = redeposits;
        self
    }

    /// `(V_c, V_d)` at the given prices.
    pub fn values(&self, prices: &PriceVector) -> Result<(f64, f64)> {
        Ok((prices.value_of(&self.collateral)?, prices.value_of(&self.debt)?))
    }
}

/// `h = cᵀ(α ⊙ p_c) / dᵀp_d`; positions without debt report `+∞`.
pub fn health_factor(position: &Position, prices: &PriceVector, thresholds: &BTreeMap<TokenId, f64>) -> Result<f64> {
    let debt = prices.value_of(&position.debt)?;
    if debt <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let mut weighted = 0.0;
    for c in &position.collateral {
        let alpha = thresholds.get(c.token.as_str()).copied().ok_or_else(|| {
            Error::invalid(
                format!("positions[{}].collateral", position.account),
                format!("`{}` has no liquidation threshold in `{}`", c.token, position.protocol),
            )
        })?;
        weighted += c.quantity * alpha * prices.get(c.token.as_str())?;
    }
    Ok(weighted / debt)
}

/// `V_liq = min{V_c/(1+b), δ·V_d}`.
pub fn repayable_value(collateral_value: f64, debt_value: f64, close_factor: f64, bonus: f64) -> f64 {
    (collateral_value / (1.0 + bonus)).min(close_factor * debt_value)
}

/// Maximum debt value a liquidator may repay on a lending position.
pub fn max_repayable(position: &Position, prices: &PriceVector, close_factor: f64, bonus: f64) -> Result<f64> {
    let (vc, vd) = position.values(prices)?;
    Ok(repayable_value(vc, vd, close_factor, bonus))
}

/// Liquidator profit `Π`.
///
/// CDP: `δ·(V_c − V_d) − gas`, which is `V_c − V_d − gas` at the full close
/// factor. Lending: `V_liq·b − gas`.
pub fn liquidation_profit(
    position: &Position,
    prices: &PriceVector,
    protocol: &Protocol,
    gas_fees: f64,
) -> Result<f64> {
    let params = protocol.require_plf()?;
    let (vc, vd) = position.values(prices)?;
    Ok(match protocol.kind {
        ProtocolKind::Cdp(_) => params.close_factor * (vc - vd) - gas_fees,
        _ => {
            repayable_value(vc, vd, params.close_factor, params.liquidation_bonus) * params.liquidation_bonus - gas_fees
        }
    })
}

/// Per-token quantity changes of a liquidation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LiquidationDeltas {
    /// Repaid tokens entering the protocol's stake (`Δ ≥ 0`).
    pub repaid: Vec<Holding>,
    /// Collateral leaving the protocol (`Δ ≤ 0`).
    pub collateral: Vec<Holding>,
    /// Debt cleared from the position; for CDPs these units are burned.
    pub debt_cleared: Vec<Holding>,
    /// Debt value repaid, USD.
    pub repaid_value: f64,
    /// Collateral value seized, USD.
    pub seized_value: f64,
    /// Fraction of the position's debt cleared.
    pub debt_share: f64,
}

/// Quantity changes `Δ` for a position that is being liquidated.
pub fn liquidation_deltas(position: &Position, prices: &PriceVector, protocol: &Protocol) -> Result<LiquidationDeltas> {
    let params = protocol.require_plf()?;
    let (vc, vd) = position.values(prices)?;
    let delta = params.close_factor;
    match protocol.kind {
        ProtocolKind::Cdp(_) => Ok(LiquidationDeltas {
            repaid: position.debt.iter().map(|d| Holding::new(d.token.clone(), 0.0)).collect(),
            collateral: position
                .collateral
                .iter()
                .map(|c| Holding::new(c.token.clone(), -delta * c.quantity))
                .collect(),
            debt_cleared: position.debt.iter().map(|d| Holding::new(d.token.clone(), delta * d.quantity)).collect(),
            repaid_value: delta * vd,
            seized_value: delta * vc,
            debt_share: delta,
        }),
        _ => {
            let bonus = params.liquidation_bonus;
            let v_liq = repayable_value(vc, vd, delta, bonus);
            let repay_share = if vd > 0.0 { v_liq / vd } else { 0.0 };
            let seize_share = if vc > 0.0 { (1.0 + bonus) * v_liq / vc } else { 0.0 };
            let repaid: Vec<Holding> =
                position.debt.iter().map(|d| Holding::new(d.token.clone(), repay_share * d.quantity)).collect();
            Ok(LiquidationDeltas {
                debt_cleared: repaid.clone(),
                repaid,
                collateral: position
                    .collateral
                    .iter()
                    .map(|c| Holding::new(c.token.clone(), -seize_share * c.quantity))
                    .collect(),
                repaid_value: v_liq,
                seized_value: (1.0 + bonus) * v_liq,
                debt_share: repay_share,
            })
        }
    }
}

/// Health, profit and (when triggered) the deltas of one position.
#[derive(Debug, Clone, PartialEq)]
pub struct LiquidationOutcome {
    pub account: AccountId,
    pub protocol: ProtocolId,
    pub health: f64,
    pub profit: f64,
    pub triggered: bool,
    pub deltas: LiquidationDeltas,
}

/// Applies the liquidation guard `h < 1 ∧ Π > 0` to a position.
pub fn evaluate_liquidation(
    position: &Position,
    prices: &PriceVector,
    protocol: &Protocol,
    gas_fees: f64,
) -> Result<LiquidationOutcome> {
    let params = protocol.require_plf()?;
    let health = health_factor(position, prices, &params.thresholds)?;
    let profit = liquidation_profit(position, prices, protocol, gas_fees)?;
    let triggered = health < 1.0 && profit > 0.0;
    let deltas = if triggered { liquidation_deltas(position, prices, protocol)? } else { LiquidationDeltas::default() };
    Ok(LiquidationOutcome {
        account: position.account.clone(),
        protocol: position.protocol.clone(),
        health,
        profit,
        triggered,
        deltas,
    })
}
