//! Reconstruction of DeFi protocol value from standard on-chain balance
//! queries: trace ingestion, method classification, call analytics, chain
//! access, pricing, token taxonomy and valuation.

pub mod analytics;
pub mod chain;
pub mod classifier;
pub mod price;
pub mod primitives;
pub mod profile;
pub mod signatures;
pub mod taxonomy;
pub mod trace;
pub mod vtvl;

pub use analytics::CallKey;
pub use chain::{BlockRef, ChainClient, ChainError};
pub use classifier::{CallClass, ClassifierRules};
pub use price::{PriceSeries, PriceStatus, Quote};
pub use primitives::{Address, Selector, U256};
pub use profile::{ProtocolProfile, ProvenanceCell};
pub use signatures::FunctionSig;
pub use taxonomy::{TokenCategory, TokenLabel};
pub use trace::TraceRecord;
pub use vtvl::{DiscrepancySummary, QuantitySnapshot, VtvlPoint};
