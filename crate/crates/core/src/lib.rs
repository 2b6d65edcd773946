//! Valuation engine for DeFi systems: total value locked, total value
//! redeemable, leverage, liquidation contagion and ledger consolidation.

pub mod bytecode;
pub mod error;
pub mod ids;
pub mod ingest;
pub mod ledger;
pub mod metrics;
pub mod protocol;
pub mod sim;
pub mod snapshot;
pub mod stats;
pub mod token;

pub use error::{Error, Result};
pub use ids::{AccountId, ProtocolId, TokenId};
pub use protocol::{LiquidationOutcome, Position, Protocol, ProtocolKind, Stake};
pub use snapshot::Snapshot;
pub use token::{PriceVector, Token, TokenKind};
