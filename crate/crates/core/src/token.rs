//! Tokens, the plain/derivative taxonomy and endogenous derivative pricing.
//!
//! A derivative token is priced from the value of the basket it wraps divided
//! by its circulating supply. CDP stablecoins hold their peg while that ratio
//! stays at or above the peg and float down with it otherwise. Prices are
//! resolved in topological order of the wrapping graph, so a chain such as
//! `ETH -> stETH -> wstETH` collapses onto the price of its plain root.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{ProtocolId, TokenId};
use crate::snapshot::Snapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Plain,
    Derivative,
    CdpStablecoin,
}

impl TokenKind {
    pub fn name(self) -> &'static str {
        match self {
            TokenKind::Plain => "plain",
            TokenKind::Derivative => "derivative",
            TokenKind::CdpStablecoin => "cdp_stablecoin",
        }
    }
}

/// A quantity of one token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Holding {
    pub token: TokenId,
    pub quantity: f64,
}

impl Holding {
    pub fn new(token: impl Into<TokenId>, quantity: f64) -> Self {
        Self { token: token.into(), quantity }
    }
}

/// What a derivative is redeemable for.
#[derive(Debug, Clone, PartialEq)]
pub enum Backing {
    /// Plain tokens have nothing underneath.
    None,
    /// Fixed underlying quantities backing the whole circulating supply.
    Basket(Vec<Holding>),
    /// Everything the named protocol holds in the stake matrix, e.g. the
    /// collateral locked in a CDP backs the stablecoin it mints.
    Issuer(ProtocolId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub id: TokenId,
    pub kind: TokenKind,
    /// Circulating supply `q_d`; zero for plain tokens.
    pub supply: f64,
    pub backing: Backing,
    /// Reference price `c_d` of a CDP stablecoin.
    pub peg: Option<f64>,
    /// Exogenous short-term deviation `ε_d` added to the endogenous price.
    pub fluctuation: f64,
}

impl Token {
    pub fn plain(id: impl Into<TokenId>) -> Self {
        Self { id: id.into(), kind: TokenKind::Plain, supply: 0.0, backing: Backing::None, peg: None, fluctuation: 0.0 }
    }

    pub fn derivative(id: impl Into<TokenId>, supply: f64, basket: Vec<Holding>) -> Self {
        Self {
            id: id.into(),
            kind: TokenKind::Derivative,
            supply,
            backing: Backing::Basket(basket),
            peg: None,
            fluctuation: 0.0,
        }
    }

    pub fn cdp_stablecoin(id: impl Into<TokenId>, peg: f64, supply: f64, backing: Backing) -> Self {
        Self { id: id.into(), kind: TokenKind::CdpStablecoin, supply, backing, peg: Some(peg), fluctuation: 0.0 }
    }

    pub fn with_fluctuation(mut self, fluctuation: f64) -> Self {
        self.fluctuation = fluctuation;
        self
    }

    pub fn is_plain(&self) -> bool {
        self.kind == TokenKind::Plain
    }

    /// Underlying quantities as currently held, resolving issuer backing
    /// against the snapshot's stake matrix.
    pub fn underlying(&self, snapshot: &Snapshot) -> Vec<Holding> {
        match &self.backing {
            Backing::None => Vec::new(),
            Backing::Basket(basket) => basket.clone(),
            Backing::Issuer(protocol) => snapshot
                .stakes_of(protocol.as_str())
                .map(|(token, quantity)| Holding::new(token.clone(), quantity))
                .collect(),
        }
    }
}

/// Membership lists used to flag plain tokens: native coins, governance
/// tokens and non-crypto-backed stablecoins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryLists {
    #[serde(default)]
    pub native: BTreeSet<String>,
    #[serde(default)]
    pub governance: BTreeSet<String>,
    #[serde(default)]
    pub ncb_stablecoins: BTreeSet<String>,
}

impl CategoryLists {
    pub fn empty() -> Self {
        Self { native: BTreeSet::new(), governance: BTreeSet::new(), ncb_stablecoins: BTreeSet::new() }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.native.contains(token) || self.governance.contains(token) || self.ncb_stablecoins.contains(token)
    }

    /// Union of two sets of lists.
    pub fn merged(mut self, other: &CategoryLists) -> Self {
        self.native.extend(other.native.iter().cloned());
        self.governance.extend(other.governance.iter().cloned());
        self.ncb_stablecoins.extend(other.ncb_stablecoins.iter().cloned());
        self
    }
}

impl Default for CategoryLists {
    /// Only ETH ships as a built-in plain token.
    fn default() -> Self {
        let mut lists = Self::empty();
        lists.native.insert("ETH".to_owned());
        lists
    }
}

/// `τ_i`: 1 when the token appears in any plain-category list.
pub fn classify_from_lists(token: &str, lists: &CategoryLists) -> u8 {
    u8::from(lists.contains(token))
}

/// Resolved USD prices plus the collateralization ratio `Γ` of every
/// non-plain token.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PriceVector {
    prices: BTreeMap<TokenId, f64>,
    gammas: BTreeMap<TokenId, f64>,
}

impl PriceVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_prices<I, K>(prices: I) -> Self
    where
        I: IntoIterator<Item = (K, f64)>,
        K: Into<TokenId>,
    {
        Self { prices: prices.into_iter().map(|(k, v)| (k.into(), v)).collect(), gammas: BTreeMap::new() }
    }

    pub fn get(&self, token: &str) -> Result<f64> {
        self.prices.get(token).copied().ok_or_else(|| Error::MissingPrice(token.to_owned()))
    }

    pub fn gamma(&self, token: &str) -> Option<f64> {
        self.gammas.get(token).copied()
    }

    pub fn insert(&mut self, token: impl Into<TokenId>, price: f64) {
        self.prices.insert(token.into(), price);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TokenId, f64)> {
        self.prices.iter().map(|(k, v)| (k, *v))
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    /// USD value of a list of holdings.
    pub fn value_of(&self, holdings: &[Holding]) -> Result<f64> {
        holdings.iter().map(|h| Ok(self.get(h.token.as_str())? * h.quantity)).sum()
    }
}

/// `τ` over every token of a snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainFlagVector(BTreeMap<TokenId, u8>);

impl PlainFlagVector {
    pub fn from_snapshot(snapshot: &Snapshot) -> Self {
        Self(snapshot.tokens().map(|t| (t.id.clone(), u8::from(t.is_plain()))).collect())
    }

    pub fn get(&self, token: &str) -> Result<u8> {
        self.0.get(token).copied().ok_or_else(|| Error::UnknownToken(token.to_owned()))
    }

    pub fn is_plain(&self, token: &str) -> Result<bool> {
        Ok(self.get(token)? == 1)
    }
}

/// Price of one derivative together with the `Γ` it was derived from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quote {
    pub price: f64,
    pub gamma: f64,
}

/// Prices a derivative or CDP stablecoin from its underlying basket.
///
/// `Γ = Σ p_u·q_u / q_d`. A CDP stablecoin trades at `c_d + ε_d` while
/// `Γ ≥ c_d`; every other case trades at `Γ + ε_d`. Negative results are
/// floored at zero. A CDP stablecoin whose supply has been burned away owes
/// nothing, so it reports `Γ = +∞` and stays pegged.
pub fn derivative_price(token: &Token, basket: &[Holding], prices: &PriceVector) -> Result<Quote> {
    if token.kind == TokenKind::Plain {
        return Err(Error::TokenKind {
            token: token.id.to_string(),
            expected: "derivative or cdp_stablecoin",
            actual: token.kind.name(),
        });
    }
    if let (TokenKind::CdpStablecoin, Some(peg), true) = (token.kind, token.peg, token.supply <= 0.0) {
        return Ok(Quote { price: (peg + token.fluctuation).max(0.0), gamma: f64::INFINITY });
    }
    if token.supply <= 0.0 {
        return Err(Error::ZeroSupply(token.id.to_string()));
    }
    let mut value = 0.0;
    for h in basket {
        let p = prices
            .get(h.token.as_str())
            .map_err(|_| Error::MissingDependency { token: token.id.to_string(), dependency: h.token.to_string() })?;
        value += p * h.quantity;
    }
    let gamma = value / token.supply;
    let base = match (token.kind, token.peg) {
        (TokenKind::CdpStablecoin, Some(peg)) if gamma >= peg => peg,
        _ => gamma,
    };
    Ok(Quote { price: (base + token.fluctuation).max(0.0), gamma })
}

/// Resolves every token price of a snapshot from exogenous plain prices.
///
/// Derivatives are evaluated in topological order of the underlying graph;
/// ties break on token id so the order is reproducible.
pub fn resolve_prices(snapshot: &Snapshot, plain_prices: &BTreeMap<TokenId, f64>) -> Result<PriceVector> {
    let mut deps: BTreeMap<&TokenId, Vec<Holding>> = BTreeMap::new();
    for token in snapshot.tokens() {
        let underlying = token.underlying(snapshot);
        for h in &underlying {
            if snapshot.token(h.token.as_str()).is_none() {
                return Err(Error::MissingDependency { token: token.id.to_string(), dependency: h.token.to_string() });
            }
        }
        deps.insert(&token.id, underlying);
    }

    // Kahn's algorithm over token -> underlying edges.
    let mut pending: BTreeMap<&TokenId, usize> = BTreeMap::new();
    let mut dependants: BTreeMap<&str, Vec<&TokenId>> = BTreeMap::new();
    for (id, underlying) in &deps {
        let distinct: BTreeSet<&str> = underlying.iter().map(|h| h.token.as_str()).collect();
        pending.insert(id, distinct.len());
        for d in distinct {
            dependants.entry(d).or_default().push(id);
        }
    }
    let mut ready: BTreeSet<&TokenId> = pending.iter().filter(|(_, n)| **n == 0).map(|(id, _)| *id).collect();

    let mut out = PriceVector::new();
    while let Some(id) = ready.pop_first() {
        pending.remove(id);
        let token = snapshot.token(id.as_str()).expect("declared token");
        if token.is_plain() {
            let p = plain_prices.get(id.as_str()).copied().ok_or_else(|| Error::MissingPrice(id.to_string()))?;
            out.prices.insert(id.clone(), p);
        } else {
            let quote = derivative_price(token, &deps[id], &out)?;
            out.prices.insert(id.clone(), quote.price);
            out.gammas.insert(id.clone(), quote.gamma);
        }
        if let Some(next) = dependants.get(id.as_str()) {
            for n in next {
                let count = pending.get_mut(n).expect("pending dependant");
                *count -= 1;
                if *count == 0 {
                    ready.insert(n);
                }
            }
        }
    }

    if !pending.is_empty() {
        return Err(Error::CyclicWrap(pending.keys().map(|id| id.to_string()).collect()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PegStatus {
    Pegged,
    /// Carries `Γ / c_d`.
    Depegged(f64),
}

impl PegStatus {
    pub fn is_depegged(self) -> bool {
        matches!(self, PegStatus::Depegged(_))
    }
}

/// Peg status of a CDP stablecoin under resolved prices.
pub fn peg_status(token: &Token, prices: &PriceVector) -> Result<PegStatus> {
    let peg = match (token.kind, token.peg) {
        (TokenKind::CdpStablecoin, Some(peg)) => peg,
        _ => {
            return Err(Error::TokenKind {
                token: token.id.to_string(),
                expected: "cdp_stablecoin",
                actual: token.kind.name(),
            })
        }
    };
    let gamma = prices.gamma(token.id.as_str()).ok_or_else(|| Error::MissingPrice(token.id.to_string()))?;
    Ok(status_from_gamma(gamma, peg))
}

pub(crate) fn status_from_gamma(gamma: f64, peg: f64) -> PegStatus {
    if gamma >= peg {
        PegStatus::Pegged
    } else {
        PegStatus::Depegged(gamma / peg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Protocol, Stake};

    fn lists() -> CategoryLists {
        CategoryLists::default()
    }

    #[test]
    fn list_classification() {
        assert_eq!(classify_from_lists("ETH", &lists()), 1);
        assert_eq!(classify_from_lists("wstETH", &lists()), 0);
        assert_eq!(classify_from_lists("ETH", &CategoryLists::empty()), 0);
    }

    #[test]
    fn derivative_price_examples() {
        let prices = PriceVector::from_prices([("ETH", 1000.0), ("USDC", 1.0)]);
        let dai = Token::cdp_stablecoin("DAI", 1.0, 571.0, Backing::None);
        let q = derivative_price(&dai, &[Holding::new("ETH", 1.0)], &prices).unwrap();
        assert!((q.gamma - 1000.0 / 571.0).abs() < 1e-12);
        assert_eq!(q.price, 1.0);

        let wrap = Token::derivative("aUSDC", 1000.0, vec![]);
        let q = derivative_price(&wrap, &[Holding::new("USDC", 1000.0)], &prices).unwrap();
        assert_eq!(q.price, 1.0);

        let dai = Token::cdp_stablecoin("DAI", 1.0, 1000.0, Backing::None);
        let q = derivative_price(&dai, &[Holding::new("USDC", 800.0)], &prices).unwrap();
        assert_eq!(q.price, 0.8);
    }

    #[test]
    fn derivative_price_errors() {
        let prices = PriceVector::from_prices([("ETH", 1000.0)]);
        let zero = Token::derivative("x", 0.0, vec![]);
        assert!(matches!(derivative_price(&zero, &[Holding::new("ETH", 1.0)], &prices), Err(Error::ZeroSupply(_))));
        let t = Token::derivative("x", 1.0, vec![]);
        assert!(matches!(
            derivative_price(&t, &[Holding::new("BTC", 1.0)], &prices),
            Err(Error::MissingDependency { .. })
        ));
        assert!(derivative_price(&Token::plain("ETH"), &[], &prices).is_err());
    }

    #[test]
    fn fully_burned_stablecoin_stays_pegged() {
        let prices = PriceVector::from_prices([("ETH", 1000.0)]);
        let dai = Token::cdp_stablecoin("DAI", 1.0, 0.0, Backing::None).with_fluctuation(-0.01);
        let q = derivative_price(&dai, &[], &prices).unwrap();
        assert_eq!((q.price, q.gamma), (0.99, f64::INFINITY));
        assert_eq!(status_from_gamma(q.gamma, 1.0), PegStatus::Pegged);
    }

    fn chain(eth: f64) -> Snapshot {
        Snapshot::new(
            vec![
                Token::plain("ETH"),
                Token::derivative("stETH", 1.0, vec![Holding::new("ETH", 1.0)]),
                Token::derivative("wstETH", 1.0, vec![Holding::new("stETH", 1.0)]),
            ],
            vec![],
            vec![],
            vec![],
            [("ETH".into(), eth)].into(),
        )
        .unwrap()
    }

    #[test]
    fn chains_collapse_to_root() {
        let p = chain(1.0).resolve_prices().unwrap();
        assert_eq!((p.get("stETH").unwrap(), p.get("wstETH").unwrap()), (1.0, 1.0));
        let p = chain(4075.03).resolve_prices().unwrap();
        assert_eq!(p.get("wstETH").unwrap(), 4075.03);
        assert_eq!(p.len(), 3);
    }

    #[test]
    fn cycles_rejected() {
        let s = Snapshot::new(
            vec![
                Token::plain("ETH"),
                Token::derivative("stETH", 1.0, vec![Holding::new("wstETH", 1.0)]),
                Token::derivative("wstETH", 1.0, vec![Holding::new("stETH", 1.0)]),
            ],
            vec![],
            vec![],
            vec![],
            [("ETH".into(), 1.0)].into(),
        )
        .unwrap();
        assert!(matches!(s.resolve_prices(), Err(Error::CyclicWrap(_))));
    }

    #[test]
    fn issuer_backing_reads_stakes() {
        let s = Snapshot::new(
            vec![Token::plain("ETH"), Token::cdp_stablecoin("DAI", 1.0, 2000.0, Backing::Issuer("Maker".into()))],
            vec![Protocol::cdp("Maker", 1.0, &[("ETH", 0.5)])],
            vec![Stake::new("Maker", "ETH", 2.0)],
            vec![],
            [("ETH".into(), 800.0)].into(),
        )
        .unwrap();
        let p = s.resolve_prices().unwrap();
        assert_eq!(p.gamma("DAI"), Some(0.8));
        assert_eq!(p.get("DAI").unwrap(), 0.8);
        let dai = s.token("DAI").unwrap();
        assert_eq!(peg_status(dai, &p).unwrap(), PegStatus::Depegged(0.8));
    }

    #[test]
    fn peg_boundaries() {
        assert_eq!(status_from_gamma(1000.0 / 571.0, 1.0), PegStatus::Pegged);
        assert_eq!(status_from_gamma(1.0, 1.0), PegStatus::Pegged);
        assert_eq!(status_from_gamma(0.8, 1.0), PegStatus::Depegged(0.8));
        let p = PriceVector::from_prices([("ETH", 1.0)]);
        assert!(matches!(peg_status(&Token::plain("ETH"), &p), Err(Error::TokenKind { .. })));
    }
}
