//! Double-entry bookkeeping for protocol and user accounts, balance sheets,
//! consolidation with intra-system eliminations and protocol-level TVR.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ids::TokenId;

const BALANCE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Category {
    ValueLocked,
    Receivables,
    Cash,
    Payables,
    NewMoney,
    UnrealizedGain,
    RealizedGain,
    InitialDeposit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Asset,
    Liability,
    Net,
}

impl Category {
    pub fn side(self) -> Side {
        match self {
            Category::ValueLocked | Category::Receivables | Category::Cash => Side::Asset,
            Category::Payables | Category::NewMoney => Side::Liability,
            Category::UnrealizedGain | Category::RealizedGain | Category::InitialDeposit => Side::Net,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::ValueLocked => "Value Locked",
            Category::Receivables => "Receivables",
            Category::Cash => "Cash",
            Category::Payables => "Payables",
            Category::NewMoney => "New Money",
            Category::UnrealizedGain => "Unrealized Gain",
            Category::RealizedGain => "Realized Gain",
            Category::InitialDeposit => "Initial Deposit Value",
        }
    }
}

/// One ledger account. `underlying`, `borrowed` and `counterparty` are tags
/// used by consolidation and protocol TVR; the sheet shows category and token.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct AccountKey {
    pub holder: String,
    pub category: Category,
    pub token: TokenId,
    /// For lending: the asset a receivable or payable stands for.
    pub underlying: Option<TokenId>,
    /// Value supplied with borrowed funds.
    pub borrowed: bool,
    /// For user accounts: the protocol owing or owed.
    pub counterparty: Option<String>,
}

impl AccountKey {
    pub fn new(holder: &str, category: Category, token: &TokenId) -> Self {
        Self {
            holder: holder.to_owned(),
            category,
            token: token.clone(),
            underlying: None,
            borrowed: false,
            counterparty: None,
        }
    }

    fn backed_by(mut self, underlying: &TokenId) -> Self {
        self.underlying = Some(underlying.clone());
        self
    }

    fn borrowed(mut self, borrowed: bool) -> Self {
        self.borrowed = borrowed;
        self
    }

    fn against(mut self, protocol: &str) -> Self {
        self.counterparty = Some(protocol.to_owned());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JournalEntry {
    pub description: String,
    pub debits: Vec<(AccountKey, f64)>,
    pub credits: Vec<(AccountKey, f64)>,
}

impl JournalEntry {
    pub fn total_debits(&self) -> f64 {
        self.debits.iter().map(|(_, v)| v).sum()
    }

    pub fn total_credits(&self) -> f64 {
        self.credits.iter().map(|(_, v)| v).sum()
    }

    pub fn is_balanced(&self) -> bool {
        let (d, c) = (self.total_debits(), self.total_credits());
        (d - c).abs() <= BALANCE_TOLERANCE * d.abs().max(c.abs()).max(1.0)
    }

    pub fn reversed(&self) -> Self {
        Self {
            description: format!("reverse {}", self.description),
            debits: self.credits.clone(),
            credits: self.debits.clone(),
        }
    }
}

/// `quantity` units of `token` at `price` USD each.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Amount {
    pub token: TokenId,
    pub quantity: f64,
    pub price: f64,
}

impl Amount {
    pub fn new(token: impl Into<TokenId>, quantity: f64, price: f64) -> Self {
        Self { token: token.into(), quantity, price }
    }

    pub fn value(&self) -> f64 {
        self.quantity * self.price
    }

    fn check(&self) -> Result<()> {
        if !(self.quantity.is_finite() && self.quantity >= 0.0) {
            return Err(Error::invalid(
                format!("amount.{}", self.token),
                format!("quantity {} must be finite and >= 0", self.quantity),
            ));
        }
        if !(self.price.is_finite() && self.price >= 0.0) {
            return Err(Error::invalid(
                format!("amount.{}", self.token),
                format!("price {} must be finite and >= 0", self.price),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TxKind {
    /// User funds an account from outside the system.
    Deposit {
        asset: Amount,
    },
    Stake {
        input: Amount,
        receipt: Amount,
    },
    Burn {
        receipt: Amount,
        output: Amount,
    },
    CdpBorrow {
        collateral: Amount,
        minted: Amount,
    },
    StabilityFee {
        accrued: Amount,
    },
    CdpRepay {
        repaid: Amount,
        collateral: Amount,
    },
    /// `collateral.price` is the per-unit price change.
    RevalueUp {
        collateral: Amount,
    },
    RevalueDown {
        collateral: Amount,
    },
    CdpPenalty {
        penalty: Amount,
    },
    /// `fees` is stability fee plus penalty, in the stablecoin.
    CdpLiquidate {
        debt: Amount,
        fees: Amount,
        collateral: Amount,
    },
    Supply {
        asset: Amount,
        receipt: Amount,
        borrowed: bool,
    },
    Borrow {
        asset: Amount,
        debt: Amount,
    },
    DebtInterest {
        debt: Amount,
        accrued: Amount,
    },
    Repay {
        asset: Amount,
        debt: Amount,
    },
    LendLiquidate {
        repaid: Amount,
        interest: Amount,
        debt: Amount,
        receipt: Amount,
        collateral: Amount,
    },
    LpAdd {
        a: Amount,
        b: Amount,
        lp: Amount,
    },
    LpRemove {
        lp: Amount,
        a: Amount,
        b: Amount,
    },
    Swap {
        input: Amount,
        output: Amount,
    },
}

impl TxKind {
    pub fn template(&self) -> &'static str {
        match self {
            TxKind::Deposit { .. } => "deposit",
            TxKind::Stake { .. } => "stake",
            TxKind::Burn { .. } => "burn",
            TxKind::CdpBorrow { .. } => "cdp_borrow",
            TxKind::StabilityFee { .. } => "stability_fee",
            TxKind::CdpRepay { .. } => "cdp_repay",
            TxKind::RevalueUp { .. } => "revalue_up",
            TxKind::RevalueDown { .. } => "revalue_down",
            TxKind::CdpPenalty { .. } => "cdp_penalty",
            TxKind::CdpLiquidate { .. } => "cdp_liquidate",
            TxKind::Supply { .. } => "supply",
            TxKind::Borrow { .. } => "borrow",
            TxKind::DebtInterest { .. } => "debt_interest",
            TxKind::Repay { .. } => "repay",
            TxKind::LendLiquidate { .. } => "lend_liquidate",
            TxKind::LpAdd { .. } => "lp_add",
            TxKind::LpRemove { .. } => "lp_remove",
            TxKind::Swap { .. } => "swap",
        }
    }

    fn amounts(&self) -> Vec<&Amount> {
        match self {
            TxKind::Deposit { asset } => vec![asset],
            TxKind::Stake { input, receipt } => vec![input, receipt],
            TxKind::Burn { receipt, output } => vec![receipt, output],
            TxKind::CdpBorrow { collateral, minted } => vec![collateral, minted],
            TxKind::StabilityFee { accrued } => vec![accrued],
            TxKind::CdpRepay { repaid, collateral } => vec![repaid, collateral],
            TxKind::RevalueUp { collateral } | TxKind::RevalueDown { collateral } => vec![collateral],
            TxKind::CdpPenalty { penalty } => vec![penalty],
            TxKind::CdpLiquidate { debt, fees, collateral } => vec![debt, fees, collateral],
            TxKind::Supply { asset, receipt, .. } => vec![asset, receipt],
            TxKind::Borrow { asset, debt } => vec![asset, debt],
            TxKind::DebtInterest { debt, accrued } => vec![debt, accrued],
            TxKind::Repay { asset, debt } => vec![asset, debt],
            TxKind::LendLiquidate { repaid, interest, debt, receipt, collateral } => {
                vec![repaid, interest, debt, receipt, collateral]
            }
            TxKind::LpAdd { a, b, lp } | TxKind::LpRemove { lp, a, b } => vec![a, b, lp],
            TxKind::Swap { input, output } => vec![input, output],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transaction {
    /// Protocol booking the entry; for deposits, the user account.
    pub holder: String,
    /// User whose mirror entry is booked alongside.
    pub account: Option<String>,
    pub kind: TxKind,
}

/// The protocol-side entry of a transaction.
pub fn journalize(tx: &Transaction) -> Result<JournalEntry> {
    use Category::*;
    for a in tx.kind.amounts() {
        a.check()?;
    }
    let h = tx.holder.as_str();
    let key = |c: Category, t: &TokenId| AccountKey::new(h, c, t);
    let (debits, credits) = match &tx.kind {
        TxKind::Deposit { asset } => {
            (vec![(key(Cash, &asset.token), asset.value())], vec![(key(InitialDeposit, &asset.token), asset.value())])
        }
        TxKind::Stake { input, receipt } => (
            vec![(key(ValueLocked, &input.token), input.value())],
            vec![(key(Payables, &receipt.token), receipt.value())],
        ),
        TxKind::Burn { receipt, output } => (
            vec![(key(Payables, &receipt.token), receipt.value())],
            vec![(key(ValueLocked, &output.token), output.value())],
        ),
        TxKind::CdpBorrow { collateral, minted } => (
            vec![
                (key(Receivables, &minted.token), minted.value()),
                (key(ValueLocked, &collateral.token), collateral.value()),
            ],
            vec![
                (key(NewMoney, &minted.token), minted.value()),
                (key(Payables, &collateral.token), collateral.value()),
            ],
        ),
        TxKind::StabilityFee { accrued: a } | TxKind::CdpPenalty { penalty: a } => {
            (vec![(key(Receivables, &a.token), a.value())], vec![(key(UnrealizedGain, &a.token), a.value())])
        }
        TxKind::CdpRepay { repaid, collateral } => (
            vec![
                (key(NewMoney, &repaid.token), repaid.value()),
                (key(Payables, &collateral.token), collateral.value()),
            ],
            vec![
                (key(Receivables, &repaid.token), repaid.value()),
                (key(ValueLocked, &collateral.token), collateral.value()),
            ],
        ),
        TxKind::RevalueUp { collateral } => (
            vec![(key(ValueLocked, &collateral.token), collateral.value())],
            vec![(key(Payables, &collateral.token), collateral.value())],
        ),
        TxKind::RevalueDown { collateral } => (
            vec![(key(Payables, &collateral.token), collateral.value())],
            vec![(key(ValueLocked, &collateral.token), collateral.value())],
        ),
        TxKind::CdpLiquidate { debt, fees, collateral } => (
            vec![
                (key(NewMoney, &debt.token), debt.value()),
                (key(UnrealizedGain, &fees.token), fees.value()),
                (key(Payables, &collateral.token), collateral.value()),
            ],
            vec![
                (key(Receivables, &debt.token), debt.value() + fees.value()),
                (key(ValueLocked, &collateral.token), collateral.value()),
            ],
        ),
        TxKind::Supply { asset, receipt, borrowed } => (
            vec![(key(ValueLocked, &asset.token).borrowed(*borrowed), asset.value())],
            vec![(key(Payables, &receipt.token).backed_by(&asset.token).borrowed(*borrowed), receipt.value())],
        ),
        TxKind::Borrow { asset, debt } => (
            vec![(key(Receivables, &debt.token).backed_by(&asset.token), debt.value())],
            vec![(key(ValueLocked, &asset.token), asset.value())],
        ),
        TxKind::DebtInterest { debt, accrued } => (
            vec![(key(Receivables, &debt.token).backed_by(&accrued.token), debt.value())],
            vec![(key(UnrealizedGain, &accrued.token), accrued.value())],
        ),
        TxKind::Repay { asset, debt } => (
            vec![(key(ValueLocked, &asset.token), asset.value())],
            vec![(key(Receivables, &debt.token).backed_by(&asset.token), debt.value())],
        ),
        TxKind::LendLiquidate { repaid, interest, debt, receipt, collateral } => (
            vec![
                (key(ValueLocked, &repaid.token), repaid.value()),
                (key(UnrealizedGain, &interest.token), interest.value()),
                (key(Payables, &receipt.token).backed_by(&collateral.token), receipt.value()),
            ],
            vec![
                (key(Receivables, &debt.token).backed_by(&repaid.token), debt.value()),
                (key(RealizedGain, &receipt.token), interest.value()),
                (key(ValueLocked, &collateral.token), collateral.value()),
            ],
        ),
        TxKind::LpAdd { a, b, lp } => (
            vec![(key(ValueLocked, &a.token), a.value()), (key(ValueLocked, &b.token), b.value())],
            vec![(key(Payables, &lp.token), lp.value())],
        ),
        TxKind::LpRemove { lp, a, b } => (
            vec![(key(Payables, &lp.token), lp.value())],
            vec![(key(ValueLocked, &a.token), a.value()), (key(ValueLocked, &b.token), b.value())],
        ),
        TxKind::Swap { input, output } => (
            vec![(key(ValueLocked, &input.token), input.value())],
            vec![(key(ValueLocked, &output.token), output.value())],
        ),
    };
    Ok(JournalEntry { description: format!("{} @ {}", tx.kind.template(), tx.holder), debits, credits })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ledger {
    /// Debit-positive balances.
    balances: BTreeMap<AccountKey, f64>,
    /// First-posting order of each `(holder, category, token)` line.
    order: BTreeMap<(String, Category, TokenId), usize>,
    holders: BTreeSet<String>,
    protocols: BTreeSet<String>,
    log: Vec<JournalEntry>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, holder: &str) {
        self.holders.insert(holder.to_owned());
    }

    pub fn holders(&self) -> impl Iterator<Item = &str> {
        self.holders.iter().map(String::as_str)
    }

    /// Holders that have booked a protocol-side transaction.
    pub fn protocols(&self) -> impl Iterator<Item = &str> {
        self.protocols.iter().map(String::as_str)
    }

    pub fn log(&self) -> &[JournalEntry] {
        &self.log
    }

    pub fn balance(&self, key: &AccountKey) -> f64 {
        self.balances.get(key).copied().unwrap_or(0.0)
    }

    /// Posts a balanced single-holder entry.
    pub fn post(&mut self, entry: JournalEntry) -> Result<()> {
        if !entry.is_balanced() {
            return Err(Error::Unbalanced {
                description: entry.description.clone(),
                debits: entry.total_debits(),
                credits: entry.total_credits(),
            });
        }
        let mut holders = entry.debits.iter().chain(&entry.credits).map(|(k, _)| &k.holder);
        if let Some(first) = holders.next() {
            if holders.any(|h| h != first) {
                return Err(Error::invalid(&entry.description, "an entry books a single holder"));
            }
        }
        for (key, v) in entry.debits.iter().map(|(k, v)| (k, *v)).chain(entry.credits.iter().map(|(k, v)| (k, -v))) {
            if !v.is_finite() || v.is_nan() {
                return Err(Error::invalid(&entry.description, "non-finite amount"));
            }
            self.holders.insert(key.holder.clone());
            let next = self.order.len();
            self.order.entry((key.holder.clone(), key.category, key.token.clone())).or_insert(next);
            *self.balances.entry(key.clone()).or_default() += v;
        }
        self.log.push(entry);
        Ok(())
    }

    /// Books the protocol entry and, when an account is named, the user's
    /// mirror entry.
    pub fn apply(&mut self, tx: &Transaction) -> Result<()> {
        let entry = journalize(tx)?;
        let mirror = match (&tx.account, &tx.kind) {
            (None, _) | (_, TxKind::Deposit { .. }) => None,
            (Some(user), kind) => Some(self.mirror(user, &tx.holder, kind)?),
        };
        self.post(entry)?;
        if !matches!(tx.kind, TxKind::Deposit { .. }) {
            self.protocols.insert(tx.holder.clone());
        }
        if let Some(m) = mirror {
            self.post(m)?;
        }
        Ok(())
    }

    /// Where a user's outgoing `token` comes from: cash when there is enough,
    /// otherwise a receivable held against some protocol.
    fn source(&self, user: &str, a: &Amount) -> AccountKey {
        let cash = AccountKey::new(user, Category::Cash, &a.token);
        if self.balance(&cash) >= a.value() * (1.0 - BALANCE_TOLERANCE) {
            return cash;
        }
        self.balances
            .iter()
            .find(|(k, v)| k.holder == user && k.category == Category::Receivables && k.token == a.token && **v > 0.0)
            .map(|(k, _)| k.clone())
            .unwrap_or(cash)
    }

    fn mirror(&self, user: &str, protocol: &str, kind: &TxKind) -> Result<JournalEntry> {
        use Category::*;
        let key = |c: Category, t: &TokenId| AccountKey::new(user, c, t);
        let claim = |c: Category, t: &TokenId| AccountKey::new(user, c, t).against(protocol);
        let (debits, credits) = match kind {
            TxKind::Stake { input, receipt } | TxKind::Supply { asset: input, receipt, .. } => (
                vec![(claim(Receivables, &receipt.token), receipt.value())],
                vec![(self.source(user, input), input.value())],
            ),
            TxKind::Burn { receipt, output } => (
                vec![(key(Cash, &output.token), output.value())],
                vec![(claim(Receivables, &receipt.token), receipt.value())],
            ),
            TxKind::CdpBorrow { collateral, minted } => (
                vec![
                    (claim(Receivables, &collateral.token), collateral.value()),
                    (key(Cash, &minted.token), minted.value()),
                ],
                vec![
                    (self.source(user, collateral), collateral.value()),
                    (claim(Payables, &minted.token), minted.value()),
                ],
            ),
            TxKind::CdpRepay { repaid, collateral } => (
                vec![
                    (claim(Payables, &repaid.token), repaid.value()),
                    (key(Cash, &collateral.token), collateral.value()),
                ],
                vec![
                    (self.source(user, repaid), repaid.value()),
                    (claim(Receivables, &collateral.token), collateral.value()),
                ],
            ),
            TxKind::Borrow { asset, debt } => {
                (vec![(key(Cash, &asset.token), asset.value())], vec![(claim(Payables, &debt.token), debt.value())])
            }
            TxKind::Repay { asset, debt } => {
                (vec![(claim(Payables, &debt.token), debt.value())], vec![(self.source(user, asset), asset.value())])
            }
            TxKind::Swap { input, output } => {
                (vec![(key(Cash, &output.token), output.value())], vec![(self.source(user, input), input.value())])
            }
            TxKind::LpAdd { a, b, lp } => (
                vec![(claim(Receivables, &lp.token), lp.value())],
                vec![(self.source(user, a), a.value()), (self.source(user, b), b.value())],
            ),
            TxKind::LpRemove { lp, a, b } => (
                vec![(key(Cash, &a.token), a.value()), (key(Cash, &b.token), b.value())],
                vec![(claim(Receivables, &lp.token), lp.value())],
            ),
            other => return Err(Error::invalid(other.template(), "this template has no account-side entry")),
        };
        Ok(JournalEntry { description: format!("{} @ {} for {}", kind.template(), protocol, user), debits, credits })
    }

    pub fn balance_sheet(&self, holder: &str) -> Result<BalanceSheet> {
        if !self.holders.contains(holder) {
            return Err(Error::UnknownHolder(holder.to_owned()));
        }
        let mut lines: Vec<SheetLine> = self
            .balances
            .iter()
            .filter(|(k, v)| k.holder == holder && **v != 0.0)
            .map(|(k, v)| SheetLine {
                category: k.category,
                token: Some(k.token.clone()),
                underlying: k.underlying.clone(),
                borrowed: k.borrowed,
                counterparty: k.counterparty.clone(),
                amount: match k.category.side() {
                    Side::Asset => *v,
                    _ => -*v,
                },
            })
            .collect();
        let rank = |l: &SheetLine| {
            let token = l.token.clone().unwrap_or_else(|| TokenId::new(""));
            (l.category, self.order.get(&(holder.to_owned(), l.category, token)).copied())
        };
        lines.sort_by_key(rank);
        Ok(BalanceSheet { holder: holder.to_owned(), lines })
    }

    /// All balance sheets, holders in sorted order.
    pub fn balance_sheets(&self) -> Vec<BalanceSheet> {
        self.holders.iter().map(|h| self.balance_sheet(h).expect("registered holder")).collect()
    }

    /// `ΣR − ΣP` over user accounts held against `protocol`.
    pub fn protocol_tvr(&self, protocol: &str) -> f64 {
        self.balances
            .iter()
            .filter(|(k, _)| k.counterparty.as_deref() == Some(protocol))
            .map(|(k, v)| match k.category {
                Category::Receivables => *v,
                Category::Payables => *v,
                _ => 0.0,
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SheetLine {
    pub category: Category,
    /// `None` on consolidated sheets.
    pub token: Option<TokenId>,
    pub underlying: Option<TokenId>,
    pub borrowed: bool,
    pub counterparty: Option<String>,
    /// Positive on the line's natural side.
    pub amount: f64,
}

/// Display row: lines merged by category and token.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SheetRow {
    pub category: Category,
    pub token: Option<TokenId>,
    pub amount: f64,
}

impl SheetRow {
    pub fn label(&self) -> String {
        match &self.token {
            Some(t) => format!("{} - {t}", self.category.label()),
            None => self.category.label().to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceSheet {
    pub holder: String,
    pub lines: Vec<SheetLine>,
}

impl BalanceSheet {
    pub fn rows(&self, side: Side) -> Vec<SheetRow> {
        let mut rows: Vec<SheetRow> = Vec::new();
        for l in self.lines.iter().filter(|l| l.category.side() == side) {
            match rows.iter_mut().find(|r| r.category == l.category && r.token == l.token) {
                Some(r) => r.amount += l.amount,
                None => rows.push(SheetRow { category: l.category, token: l.token.clone(), amount: l.amount }),
            }
        }
        rows.retain(|r| r.amount != 0.0);
        rows
    }

    pub fn total(&self, side: Side) -> f64 {
        self.lines.iter().filter(|l| l.category.side() == side).map(|l| l.amount).sum()
    }

    pub fn total_assets(&self) -> f64 {
        self.total(Side::Asset)
    }

    pub fn total_liabilities(&self) -> f64 {
        self.total(Side::Liability)
    }

    pub fn total_net(&self) -> f64 {
        self.total(Side::Net)
    }

    pub fn category_total(&self, category: Category) -> f64 {
        self.lines.iter().filter(|l| l.category == category).map(|l| l.amount).sum()
    }

    pub fn write_csv<W: Write>(sheets: &[BalanceSheet], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["holder", "side", "category", "token", "amount"])?;
        for s in sheets {
            for side in [Side::Asset, Side::Liability, Side::Net] {
                for r in s.rows(side) {
                    w.write_record([
                        s.holder.as_str(),
                        side_name(side),
                        r.category.label(),
                        r.token.as_ref().map(TokenId::as_str).unwrap_or(""),
                        &r.amount.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn side_name(side: Side) -> &'static str {
    match side {
        Side::Asset => "assets",
        Side::Liability => "liabilities",
        Side::Net => "net",
    }
}

/// `1571` -> `1,571`; two decimals only when needed.
pub fn format_usd(x: f64) -> String {
    let neg = x < 0.0;
    let cents = (x.abs() * 100.0).round() as u128;
    let (whole, frac) = (cents / 100, cents % 100);
    let digits = whole.to_string();
    let mut grouped = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(c);
    }
    let sign = if neg && cents > 0 { "-" } else { "" };
    if frac == 0 {
        format!("{sign}{grouped}")
    } else {
        format!("{sign}{grouped}.{frac:02}")
    }
}

impl fmt::Display for BalanceSheet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const W: usize = 36;
        writeln!(f, "{}", self.holder)?;
        for (side, title, total) in [
            (Side::Asset, "Assets", "Total Assets"),
            (Side::Liability, "Liabilities", "Total Liabilities"),
            (Side::Net, "Net Positions", "Total Net Positions"),
        ] {
            let rows = self.rows(side);
            if side == Side::Net && rows.is_empty() {
                continue;
            }
            writeln!(f, "  {title}")?;
            for r in rows {
                writeln!(f, "    {:<W$}{:>14}", r.label(), format_usd(r.amount))?;
            }
            writeln!(f, "  {:<w$}{:>14}", total, format_usd(self.total(side)), w = W + 2)?;
        }
        Ok(())
    }
}

fn eliminate(lines: &mut [SheetLine], a: usize, b: usize) -> f64 {
    let x = lines[a].amount.min(lines[b].amount).max(0.0);
    lines[a].amount -= x;
    lines[b].amount -= x;
    x
}

/// Group sheet with intra-system claims removed, then summed by category.
///
/// Eliminated pairs, by overlapping amount:
/// value locked in token `t` at one holder against payables in `t` at another;
/// a lender's receivable against its payable for the same underlying asset;
/// value supplied with borrowed funds against the receipt issued for it.
/// New money is shown among payables.
pub fn consolidate(sheets: &[BalanceSheet]) -> BalanceSheet {
    let mut lines: Vec<(String, SheetLine)> =
        sheets.iter().flat_map(|s| s.lines.iter().map(move |l| (s.holder.clone(), l.clone()))).collect();
    let mut flat: Vec<SheetLine> = lines.iter().map(|(_, l)| l.clone()).collect();
    let holder: Vec<String> = lines.drain(..).map(|(h, _)| h).collect();
    let n = flat.len();

    for i in 0..n {
        for j in 0..n {
            let (li, lj) = (&flat[i], &flat[j]);
            let pair = li.category == Category::ValueLocked
                && lj.category == Category::Payables
                && holder[i] != holder[j]
                && li.token == lj.token;
            if pair {
                eliminate(&mut flat, i, j);
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            let (li, lj) = (&flat[i], &flat[j]);
            let pair = li.category == Category::Receivables
                && lj.category == Category::Payables
                && holder[i] == holder[j]
                && li.counterparty.is_none()
                && li.underlying.is_some()
                && li.underlying == lj.underlying
                && !lj.borrowed;
            if pair {
                eliminate(&mut flat, i, j);
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            let (li, lj) = (&flat[i], &flat[j]);
            let pair = li.category == Category::ValueLocked
                && lj.category == Category::Payables
                && holder[i] == holder[j]
                && li.borrowed
                && lj.borrowed
                && li.token.is_some()
                && li.token == lj.underlying;
            if pair {
                eliminate(&mut flat, i, j);
            }
        }
    }

    let mut by_category: BTreeMap<Category, f64> = BTreeMap::new();
    for l in flat {
        let c = match l.category {
            Category::NewMoney => Category::Payables,
            c => c,
        };
        *by_category.entry(c).or_default() += l.amount;
    }
    BalanceSheet {
        holder: "Consolidated".to_owned(),
        lines: by_category
            .into_iter()
            .filter(|(_, v)| *v != 0.0)
            .map(|(category, amount)| SheetLine {
                category,
                token: None,
                underlying: None,
                borrowed: false,
                counterparty: None,
                amount,
            })
            .collect(),
    }
}

/// Sum of value locked over protocol sheets, without eliminations.
pub fn naive_tvl(sheets: &[BalanceSheet]) -> f64 {
    sheets.iter().map(|s| s.category_total(Category::ValueLocked)).sum()
}

/// Ledger state after replaying a script, with named intermediate states.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Replay {
    pub ledger: Ledger,
    pub marks: Vec<(String, Ledger)>,
}

impl Replay {
    pub fn mark(&self, name: &str) -> Option<&Ledger> {
        self.marks.iter().find(|(n, _)| n == name).map(|(_, l)| l)
    }
}

fn parse_amount(line: usize, key: &str, raw: &str) -> Result<Amount> {
    let err = |reason: String| Error::Script { line, reason };
    let (token, rest) =
        raw.split_once(':').ok_or_else(|| err(format!("`{key}` expects TOKEN:QTY@PRICE, got `{raw}`")))?;
    let (q, p) = rest.split_once('@').ok_or_else(|| err(format!("`{key}` expects TOKEN:QTY@PRICE, got `{raw}`")))?;
    let quantity: f64 = q.parse().map_err(|_| err(format!("bad quantity `{q}` in `{key}`")))?;
    let price: f64 = p.parse().map_err(|_| err(format!("bad price `{p}` in `{key}`")))?;
    if token.is_empty() {
        return Err(err(format!("empty token in `{key}`")));
    }
    let a = Amount::new(token, quantity, price);
    a.check().map_err(|e| err(e.to_string()))?;
    Ok(a)
}

struct Record<'a> {
    line: usize,
    fields: BTreeMap<&'a str, &'a str>,
}

impl<'a> Record<'a> {
    fn text(&mut self, key: &str) -> Result<&'a str> {
        self.fields.remove(key).ok_or_else(|| Error::Script { line: self.line, reason: format!("missing `{key}=`") })
    }

    fn amount(&mut self, key: &str) -> Result<Amount> {
        let raw = self.text(key)?;
        parse_amount(self.line, key, raw)
    }

    fn flag(&mut self, key: &str) -> Result<bool> {
        match self.fields.remove(key) {
            None | Some("false") => Ok(false),
            Some("true") => Ok(true),
            Some(other) => {
                Err(Error::Script { line: self.line, reason: format!("`{key}` must be true or false, got `{other}`") })
            }
        }
    }
}

/// Parses one `template key=value ...` record. `None` for blank lines,
/// comments and `mark` directives.
pub fn parse_record(line_no: usize, text: &str) -> Result<Option<Transaction>> {
    let text = text.split('#').next().unwrap_or("").trim();
    if text.is_empty() {
        return Ok(None);
    }
    let mut parts = text.split_whitespace();
    let template = parts.next().expect("non-empty line");
    let mut fields = BTreeMap::new();
    for p in parts {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| Error::Script { line: line_no, reason: format!("expected key=value, got `{p}`") })?;
        if fields.insert(k, v).is_some() {
            return Err(Error::Script { line: line_no, reason: format!("`{k}` given twice") });
        }
    }
    let mut r = Record { line: line_no, fields };
    if template == "mark" {
        r.text("name")?;
        return Ok(None);
    }
    let account = r.fields.remove("account").map(str::to_owned);
    let kind = match template {
        "deposit" => TxKind::Deposit { asset: r.amount("asset")? },
        "stake" => TxKind::Stake { input: r.amount("in")?, receipt: r.amount("out")? },
        "burn" => TxKind::Burn { receipt: r.amount("in")?, output: r.amount("out")? },
        "cdp_borrow" => TxKind::CdpBorrow { collateral: r.amount("collateral")?, minted: r.amount("mint")? },
        "stability_fee" => TxKind::StabilityFee { accrued: r.amount("fee")? },
        "cdp_repay" => TxKind::CdpRepay { repaid: r.amount("repay")?, collateral: r.amount("collateral")? },
        "revalue_up" => TxKind::RevalueUp { collateral: r.amount("collateral")? },
        "revalue_down" => TxKind::RevalueDown { collateral: r.amount("collateral")? },
        "cdp_penalty" => TxKind::CdpPenalty { penalty: r.amount("penalty")? },
        "cdp_liquidate" => TxKind::CdpLiquidate {
            debt: r.amount("debt")?,
            fees: r.amount("fees")?,
            collateral: r.amount("collateral")?,
        },
        "supply" => TxKind::Supply { asset: r.amount("in")?, receipt: r.amount("out")?, borrowed: r.flag("borrowed")? },
        "borrow" => TxKind::Borrow { asset: r.amount("asset")?, debt: r.amount("debt")? },
        "debt_interest" => TxKind::DebtInterest { debt: r.amount("debt")?, accrued: r.amount("accrued")? },
        "repay" => TxKind::Repay { asset: r.amount("asset")?, debt: r.amount("debt")? },
        "lend_liquidate" => TxKind::LendLiquidate {
            repaid: r.amount("repaid")?,
            interest: r.amount("interest")?,
            debt: r.amount("debt")?,
            receipt: r.amount("receipt")?,
            collateral: r.amount("collateral")?,
        },
        "lp_add" => TxKind::LpAdd { a: r.amount("a")?, b: r.amount("b")?, lp: r.amount("lp")? },
        "lp_remove" => TxKind::LpRemove { lp: r.amount("lp")?, a: r.amount("a")?, b: r.amount("b")? },
        "swap" => TxKind::Swap { input: r.amount("in")?, output: r.amount("out")? },
        other => return Err(Error::UnknownTemplate(other.to_owned())),
    };
    let holder = match (&kind, &account) {
        (TxKind::Deposit { .. }, Some(a)) => a.clone(),
        (TxKind::Deposit { .. }, None) => {
            return Err(Error::Script { line: line_no, reason: "deposit needs `account=`".into() })
        }
        _ => r.text("protocol")?.to_owned(),
    };
    if let Some(k) = r.fields.keys().next() {
        return Err(Error::Script { line: line_no, reason: format!("unexpected field `{k}` for `{template}`") });
    }
    Ok(Some(Transaction { holder, account, kind }))
}

/// Replays a line-oriented transaction script.
pub fn replay_script(script: &str) -> Result<Replay> {
    let mut replay = Replay::default();
    for (i, text) in script.lines().enumerate() {
        let line = i + 1;
        let body = text.split('#').next().unwrap_or("").trim();
        if let Some(rest) = body.strip_prefix("mark") {
            if rest.is_empty() || rest.starts_with(char::is_whitespace) {
                let name = rest
                    .trim()
                    .strip_prefix("name=")
                    .filter(|n| !n.is_empty() && !n.contains(char::is_whitespace))
                    .ok_or_else(|| Error::Script { line, reason: "expected `mark name=LABEL`".into() })?;
                replay.marks.push((name.to_owned(), replay.ledger.clone()));
                continue;
            }
        }
        if let Some(tx) = parse_record(line, text)? {
            replay.ledger.apply(&tx).map_err(|e| match e {
                Error::Script { .. } => e,
                other => Error::Script { line, reason: other.to_string() },
            })?;
        }
    }
    Ok(replay)
}
