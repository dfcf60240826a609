//! Chain access: JSON-RPC backends, record/replay fixtures and the typed
//! client used by pricing and reconstruction.

pub mod abi;
mod client;
pub mod fixture;
pub mod rpc;
pub mod sim;

pub use client::{
    BalanceQuery, BlockRef, ChainClient, ChainError, ClientOptions, RawBalance, Reserves, SyncEvent, TokenMeta,
};
pub use fixture::{FixtureError, FixtureStore, Recorder, Replay};
pub use rpc::{BackendError, HttpBackend, RpcBackend, RpcReply, RpcRequest};
pub use sim::{SimSymbol, SimulatedNode};
