//! TVL, its four-way split, TVR, adjusted TVL and the money multiplier.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ids::ProtocolId;
use crate::snapshot::{QuantityMatrix, Snapshot};
use crate::token::{PlainFlagVector, PriceVector};

/// `ω` over every protocol of a snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct PlfFlagVector(BTreeMap<ProtocolId, u8>);

impl PlfFlagVector {
    pub fn from_snapshot(snapshot: &Snapshot) -> Self {
        Self(snapshot.protocols().map(|p| (p.id.clone(), u8::from(p.is_plf()))).collect())
    }

    pub fn get(&self, protocol: &str) -> Result<u8> {
        self.0.get(protocol).copied().ok_or_else(|| Error::UnknownProtocol(protocol.to_owned()))
    }
}

fn matrix_value<F>(matrix: &QuantityMatrix, prices: &PriceVector, mut keep: F) -> Result<f64>
where
    F: FnMut(&str, &str) -> Result<bool>,
{
    let mut total = 0.0;
    for (protocol, column) in matrix {
        for (token, q) in column {
            if *q != 0.0 && keep(protocol.as_str(), token.as_str())? {
                total += prices.get(token.as_str())? * q;
            }
        }
    }
    Ok(total)
}

/// `pᵀQ1`.
pub fn tvl(snapshot: &Snapshot, prices: &PriceVector) -> Result<f64> {
    matrix_value(snapshot.stake_matrix(), prices, |_, _| Ok(true))
}

/// TVL split by token type (plain or derivative) and protocol type (PLF or not).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TvlDecomposition {
    pub plain_non_plf: f64,
    pub plain_plf: f64,
    pub derivative_non_plf: f64,
    pub derivative_plf: f64,
}

impl TvlDecomposition {
    pub fn total(&self) -> f64 {
        self.plain_non_plf + self.plain_plf + self.derivative_non_plf + self.derivative_plf
    }
}

pub fn tvl_decomposition(
    snapshot: &Snapshot,
    prices: &PriceVector,
    tau: &PlainFlagVector,
    omega: &PlfFlagVector,
) -> Result<TvlDecomposition> {
    let mut out = TvlDecomposition::default();
    for (protocol, token, q) in snapshot.stakes() {
        if q == 0.0 {
            continue;
        }
        let value = prices.get(token.as_str())? * q;
        let slot = match (tau.get(token.as_str())?, omega.get(protocol.as_str())?) {
            (1, 0) => &mut out.plain_non_plf,
            (1, _) => &mut out.plain_plf,
            (_, 0) => &mut out.derivative_non_plf,
            _ => &mut out.derivative_plf,
        };
        *slot += value;
    }
    Ok(out)
}

/// `(p ⊙ τ)ᵀQ′1`: plain tokens held by contracts, net of redeposited borrows.
pub fn tvr(snapshot: &Snapshot, prices: &PriceVector, tau: &PlainFlagVector) -> Result<f64> {
    matrix_value(&snapshot.held_matrix(), prices, |_, t| tau.is_plain(t))
}

/// TVL with whole protocol columns removed.
pub fn adjusted_tvl<'a, I>(snapshot: &Snapshot, prices: &PriceVector, excluded: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut skip = BTreeSet::new();
    for id in excluded {
        if snapshot.protocol(id).is_none() {
            return Err(Error::UnknownProtocol(id.to_owned()));
        }
        skip.insert(id);
    }
    matrix_value(snapshot.stake_matrix(), prices, |p, _| Ok(!skip.contains(p)))
}

/// `M = TVL / TVR`.
pub fn money_multiplier(tvl: f64, tvr: f64) -> Result<f64> {
    if tvr > 0.0 {
        Ok(tvl / tvr)
    } else {
        Err(Error::UndefinedMultiplier(tvr))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProtocolRatio {
    pub tvl: f64,
    pub tvr: f64,
    /// `None` when the protocol holds no plain value.
    pub ratio: Option<f64>,
}

pub fn protocol_ratios(
    snapshot: &Snapshot,
    prices: &PriceVector,
    tau: &PlainFlagVector,
) -> Result<BTreeMap<ProtocolId, ProtocolRatio>> {
    let held = snapshot.held_matrix();
    let mut out = BTreeMap::new();
    for protocol in snapshot.protocols() {
        let id = protocol.id.as_str();
        let tvl = matrix_value(snapshot.stake_matrix(), prices, |p, _| Ok(p == id))?;
        let tvr = matrix_value(&held, prices, |p, t| Ok(p == id && tau.is_plain(t)?))?;
        let ratio = (tvr > 0.0).then(|| tvl / tvr);
        out.insert(protocol.id.clone(), ProtocolRatio { tvl, tvr, ratio });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub tvl: f64,
    pub tvr: f64,
    pub tvl_adjusted: f64,
    pub multiplier: Option<f64>,
    pub decomposition: TvlDecomposition,
    pub per_protocol: BTreeMap<ProtocolId, ProtocolRatio>,
}

impl MetricReport {
    pub const CSV_HEADER: [&'static str; 9] = [
        "tvl",
        "tvr",
        "tvl_adjusted",
        "multiplier",
        "plain_non_plf",
        "plain_plf",
        "derivative_non_plf",
        "derivative_plf",
        "excluded",
    ];

    pub fn compute<'a, I>(snapshot: &Snapshot, excluded: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let prices = snapshot.resolve_prices()?;
        Self::compute_at(snapshot, &prices, excluded)
    }

    pub fn compute_at<'a, I>(snapshot: &Snapshot, prices: &PriceVector, excluded: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let tau = PlainFlagVector::from_snapshot(snapshot);
        let omega = PlfFlagVector::from_snapshot(snapshot);
        let tvl = tvl(snapshot, prices)?;
        let tvr = tvr(snapshot, prices, &tau)?;
        Ok(Self {
            tvl,
            tvr,
            tvl_adjusted: adjusted_tvl(snapshot, prices, excluded)?,
            multiplier: money_multiplier(tvl, tvr).ok(),
            decomposition: tvl_decomposition(snapshot, prices, &tau, &omega)?,
            per_protocol: protocol_ratios(snapshot, prices, &tau)?,
        })
    }

    /// Values in [`Self::CSV_HEADER`] order; `excluded` is `;`-joined.
    pub fn csv_record(&self, excluded: &[String]) -> Vec<String> {
        let d = &self.decomposition;
        vec![
            self.tvl.to_string(),
            self.tvr.to_string(),
            self.tvl_adjusted.to_string(),
            self.multiplier.map(|m| m.to_string()).unwrap_or_default(),
            d.plain_non_plf.to_string(),
            d.plain_plf.to_string(),
            d.derivative_non_plf.to_string(),
            d.derivative_plf.to_string(),
            excluded.join(";"),
        ]
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = &self.decomposition;
        writeln!(f, "TVL            {:>16.2}", self.tvl)?;
        writeln!(f, "TVR            {:>16.2}", self.tvr)?;
        writeln!(f, "TVL adjusted   {:>16.2}", self.tvl_adjusted)?;
        match self.multiplier {
            Some(m) => writeln!(f, "multiplier     {m:>16.4}")?,
            None => writeln!(f, "multiplier     {:>16}", "undefined")?,
        }
        writeln!(f)?;
        writeln!(f, "plain / non-PLF      {:>16.2}", d.plain_non_plf)?;
        writeln!(f, "plain / PLF          {:>16.2}", d.plain_plf)?;
        writeln!(f, "derivative / non-PLF {:>16.2}", d.derivative_non_plf)?;
        writeln!(f, "derivative / PLF     {:>16.2}", d.derivative_plf)?;
        writeln!(f)?;
        writeln!(f, "{:<20} {:>16} {:>16} {:>8}", "protocol", "tvl", "tvr", "ratio")?;
        for (id, r) in &self.per_protocol {
            let ratio = r.ratio.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
            writeln!(f, "{:<20} {:>16.2} {:>16.2} {:>8}", id.as_str(), r.tvl, r.tvr, ratio)?;
        }
        Ok(())
    }
}
