//! Capability-based access control for NGSI-LD data spaces.
//!
//! The crate bundles a pure policy engine (typed resource URLs, the coverage
//! relation, and the existential decision procedure), a credential layer
//! (identity tokens, capability credentials, presentations, bitstring status
//! lists), and the services that enforce it all: a minimal context broker, an
//! identity provider, a policy administration point, a decision point, and a
//! transparent enforcement proxy.
//!
//! Every service is an embeddable state struct plus an axum router, so the
//! whole stack runs in-process for tests and as separate processes via the
//! `capgate` binary.

pub mod bench;
pub mod broker;
pub mod canonical;
pub mod cli;
pub mod config;
pub mod credential;
pub mod idp;
pub mod pap;
pub mod pdp;
pub mod pep;
pub mod policy;
pub mod serve;
pub mod wire;
