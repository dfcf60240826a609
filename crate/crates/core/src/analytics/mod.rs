//! Cross-snapshot drift, cross-protocol duplicate detection and heavy-tail
//! fitting over recorded balance queries.

mod drift;
mod duplicates;
mod jaccard;
pub mod powerlaw;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::primitives::Address;
use crate::profile::ProtocolProfile;

pub use drift::{drift_report, DriftOptions, DriftPair, DriftReport, DriftRow};
pub use duplicates::{find_duplicates, DuplicateFinding};
pub use jaccard::jaccard;
pub use powerlaw::{fit_power_law, PowerLawError, PowerLawFit, PowerLawOptions};

/// Identity of one standard balance query: which account was asked about,
/// and for which token (none for the native balance).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CallKey {
    TokenBalance { token: Address, owner: Address },
    NativeBalance { owner: Address },
}

impl CallKey {
    pub fn owner(&self) -> Address {
        match self {
            CallKey::TokenBalance { owner, .. } | CallKey::NativeBalance { owner } => *owner,
        }
    }

    pub fn token(&self) -> Option<Address> {
        match self {
            CallKey::TokenBalance { token, .. } => Some(*token),
            CallKey::NativeBalance { .. } => None,
        }
    }

    pub fn kind_label(&self) -> &'static str {
        match self {
            CallKey::TokenBalance { .. } => "token_balance",
            CallKey::NativeBalance { .. } => "native_balance",
        }
    }
}

impl fmt::Display for CallKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CallKey::TokenBalance { token, owner } => write!(f, "{owner}@{token}"),
            CallKey::NativeBalance { owner } => write!(f, "{owner}@native"),
        }
    }
}

/// The set of distinct standard balance queries of one protocol at one snapshot.
pub fn balance_call_set(profile: &ProtocolProfile) -> std::collections::BTreeSet<CallKey> {
    profile.balance_call_keys.clone()
}
