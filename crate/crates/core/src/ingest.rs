//! Snapshot, scenario and category-list files.
//!
//! All three are JSON documents carrying `schema_version: 1`. Schema errors
//! report the JSON path of the offending field.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{ProtocolId, TokenId};
use crate::protocol::{LiquidationParams, Position, Protocol, ProtocolKind, Stake};
use crate::sim::{linear_grid, Environment, GasModel, ProtocolOverride, ShockScenario, DEFAULT_MAX_ROUNDS};
use crate::snapshot::Snapshot;
use crate::token::{Backing, CategoryLists, Holding, Token, TokenKind};

pub const SCHEMA_VERSION: u32 = 1;

fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Schema { path: e.path().to_string(), message: e.inner().to_string() })
}

fn check_version(v: u32) -> Result<()> {
    if v == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(Error::SchemaVersion(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenRecord {
    pub id: TokenId,
    /// Inferred when absent: a basket or issuer makes a derivative (a
    /// stablecoin when `peg` is set); otherwise the category lists decide.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<TokenKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supply: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basket: Option<Vec<Holding>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issuer: Option<ProtocolId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peg: Option<f64>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub fluctuation: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKindName {
    Passive,
    Cdp,
    Lending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolRecord {
    pub id: ProtocolId,
    pub kind: ProtocolKindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub close_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub liquidation_bonus: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub liquidation_thresholds: BTreeMap<TokenId, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotFile {
    pub schema_version: u32,
    #[serde(default)]
    pub plain_prices: BTreeMap<TokenId, f64>,
    #[serde(default)]
    pub tokens: Vec<TokenRecord>,
    #[serde(default)]
    pub protocols: Vec<ProtocolRecord>,
    #[serde(default)]
    pub stakes: Vec<Stake>,
    #[serde(default)]
    pub positions: Vec<Position>,
}

impl TokenRecord {
    fn into_token(self, lists: &CategoryLists) -> Result<Token> {
        let at = |f: &str| format!("tokens[{}].{f}", self.id);
        let backed = self.basket.is_some() || self.issuer.is_some();
        let kind = match self.kind {
            Some(k) => k,
            None if backed && self.peg.is_some() => TokenKind::CdpStablecoin,
            None if backed => TokenKind::Derivative,
            None if lists.contains(self.id.as_str()) => TokenKind::Plain,
            None => return Err(Error::invalid(at("kind"), "no kind, no underlying and not in any plain-token list")),
        };
        let backing = match (self.basket, self.issuer) {
            (Some(_), Some(_)) => return Err(Error::invalid(at("issuer"), "give a basket or an issuer, not both")),
            (Some(b), None) => Backing::Basket(b),
            (None, Some(p)) => Backing::Issuer(p),
            (None, None) => Backing::None,
        };
        if kind == TokenKind::Plain && self.supply.is_some() {
            return Err(Error::invalid(at("supply"), "plain tokens carry no supply"));
        }
        Ok(Token {
            id: self.id,
            kind,
            supply: self.supply.unwrap_or(0.0),
            backing,
            peg: self.peg,
            fluctuation: self.fluctuation,
        })
    }

    fn from_token(t: &Token) -> Self {
        let (basket, issuer) = match &t.backing {
            Backing::None => (None, None),
            Backing::Basket(b) => (Some(b.clone()), None),
            Backing::Issuer(p) => (None, Some(p.clone())),
        };
        Self {
            id: t.id.clone(),
            kind: Some(t.kind),
            supply: (!t.is_plain()).then_some(t.supply),
            basket,
            issuer,
            peg: t.peg,
            fluctuation: t.fluctuation,
        }
    }
}

impl ProtocolRecord {
    fn into_protocol(self) -> Result<Protocol> {
        let at = |f: &str| format!("protocols[{}].{f}", self.id);
        let kind = match self.kind {
            ProtocolKindName::Passive => {
                if self.close_factor.is_some()
                    || self.liquidation_bonus.is_some()
                    || !self.liquidation_thresholds.is_empty()
                {
                    return Err(Error::invalid(at("kind"), "passive protocols carry no liquidation parameters"));
                }
                ProtocolKind::Passive
            }
            ProtocolKindName::Cdp => {
                if self.liquidation_bonus.is_some() {
                    return Err(Error::invalid(at("liquidation_bonus"), "only lending protocols pay a bonus"));
                }
                ProtocolKind::Cdp(LiquidationParams {
                    close_factor: self.close_factor.unwrap_or(Environment::CLOSE_FACTOR_MAKER),
                    liquidation_bonus: 0.0,
                    thresholds: self.liquidation_thresholds,
                })
            }
            ProtocolKindName::Lending => ProtocolKind::Lending(LiquidationParams {
                close_factor: self.close_factor.unwrap_or(Environment::CLOSE_FACTOR_AAVE),
                liquidation_bonus: self
                    .liquidation_bonus
                    .ok_or_else(|| Error::invalid(at("liquidation_bonus"), "required for lending protocols"))?,
                thresholds: self.liquidation_thresholds,
            }),
        };
        Ok(Protocol { id: self.id, kind })
    }

    fn from_protocol(p: &Protocol) -> Self {
        let (kind, params) = match &p.kind {
            ProtocolKind::Passive => (ProtocolKindName::Passive, None),
            ProtocolKind::Cdp(x) => (ProtocolKindName::Cdp, Some(x)),
            ProtocolKind::Lending(x) => (ProtocolKindName::Lending, Some(x)),
        };
        Self {
            id: p.id.clone(),
            kind,
            close_factor: params.map(|x| x.close_factor),
            liquidation_bonus: params.filter(|_| kind == ProtocolKindName::Lending).map(|x| x.liquidation_bonus),
            liquidation_thresholds: params.map(|x| x.thresholds.clone()).unwrap_or_default(),
        }
    }
}

impl SnapshotFile {
    pub fn into_snapshot(self, lists: &CategoryLists) -> Result<Snapshot> {
        check_version(self.schema_version)?;
        let tokens = self.tokens.into_iter().map(|t| t.into_token(lists)).collect::<Result<Vec<_>>>()?;
        let protocols = self.protocols.into_iter().map(ProtocolRecord::into_protocol).collect::<Result<Vec<_>>>()?;
        Snapshot::new(tokens, protocols, self.stakes, self.positions, self.plain_prices)
    }

    pub fn from_snapshot(s: &Snapshot) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            plain_prices: s.plain_prices().clone(),
            tokens: s.tokens().map(TokenRecord::from_token).collect(),
            protocols: s.protocols().map(ProtocolRecord::from_protocol).collect(),
            stakes: s.stakes().map(|(p, t, q)| Stake::new(p.clone(), t.clone(), q)).collect(),
            positions: s.positions().to_vec(),
        }
    }
}

pub fn parse_snapshot(text: &str, lists: &CategoryLists) -> Result<Snapshot> {
    parse::<SnapshotFile>(text)?.into_snapshot(lists)
}

/// Loads with the default lists (ETH is plain).
pub fn load_snapshot(path: impl AsRef<Path>) -> Result<Snapshot> {
    load_snapshot_with(path, &CategoryLists::default())
}

pub fn load_snapshot_with(path: impl AsRef<Path>, lists: &CategoryLists) -> Result<Snapshot> {
    parse_snapshot(&std::fs::read_to_string(path)?, lists)
}

pub fn snapshot_to_json(s: &Snapshot) -> String {
    serde_json::to_string_pretty(&SnapshotFile::from_snapshot(s)).expect("snapshot serializes")
}

pub fn save_snapshot(s: &Snapshot, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, snapshot_to_json(s) + "\n")?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ListsFile {
    pub schema_version: u32,
    #[serde(flatten)]
    pub lists: CategoryLists,
}

/// Lists from a file, merged over the defaults.
pub fn load_lists(path: impl AsRef<Path>) -> Result<CategoryLists> {
    let text = std::fs::read_to_string(path)?;
    let file: ListsFile = parse(&text)?;
    check_version(file.schema_version)?;
    Ok(CategoryLists::default().merged(&file.lists))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Points(Vec<f64>),
    Linear { start: f64, stop: f64, points: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasSpec {
    #[serde(default = "default_gas_limit")]
    pub limit: f64,
    #[serde(default = "default_gas_price")]
    pub price_usd: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn default_gas_limit() -> f64 {
    GasModel::default().limit
}

fn default_gas_price() -> f64 {
    GasModel::default().price_usd
}

fn one() -> f64 {
    1.0
}

fn default_rounds() -> usize {
    DEFAULT_MAX_ROUNDS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverrideSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub close_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub liquidation_bonus: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub shock_token: TokenId,
    pub grid: GridSpec,
    #[serde(default)]
    pub overrides: BTreeMap<ProtocolId, OverrideSpec>,
    #[serde(default)]
    pub gas: Option<GasSpec>,
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
}

impl ScenarioFile {
    pub fn into_scenario(self) -> Result<ShockScenario> {
        check_version(self.schema_version)?;
        let grid = match self.grid {
            GridSpec::Points(p) => p,
            GridSpec::Linear { start, stop, points } => linear_grid(start, stop, points),
        };
        let gas =
            self.gas.map(|g| GasModel { limit: g.limit, price_usd: g.price_usd, scale: g.scale }).unwrap_or_default();
        let s = ShockScenario {
            shock_token: self.shock_token,
            grid,
            overrides: self
                .overrides
                .into_iter()
                .map(|(p, o)| {
                    (p, ProtocolOverride { close_factor: o.close_factor, liquidation_bonus: o.liquidation_bonus })
                })
                .collect(),
            gas,
            max_rounds: self.max_rounds,
        };
        s.validate()?;
        Ok(s)
    }
}

pub fn parse_scenario(text: &str) -> Result<ShockScenario> {
    parse::<ScenarioFile>(text)?.into_scenario()
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ShockScenario> {
    parse_scenario(&std::fs::read_to_string(path)?)
}
