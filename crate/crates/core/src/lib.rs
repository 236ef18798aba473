//! Distills step-by-step GUI-agent trajectories into reusable, verified RPA
//! programs.
//!
//! The crate is organised bottom-up:
//!
//! - [`env`](mod@env): deterministic simulated GUI environment driven by declarative task files.
//! - [`matcher`]: `find_element` attribute matching with a grounding fallback.
//! - [`dsl`]: parser, checker and interpreter for the soft-coded action language.
//! - [`llm`]: chat gateway (replay, record, remote, simulated) and token ledger.
//! - [`agents`]: prompt assembly and structured-output parsing for every agent role.
//! - [`bank`]: three-layer trajectory store with `fetch_info` retrieval.
//! - [`pipeline`]: explore, build, verify-with-hybrid-repair and test orchestration.
//! - [`sim`]: rule-based stand-in for the model, used to record fixtures offline.
//! - [`config`]: the TOML run configuration and the gateways it opens.

pub mod agents;
pub mod bank;
pub mod bundled;
pub mod config;
pub mod dsl;
pub mod env;
pub mod llm;
pub mod matcher;
pub mod pipeline;
pub mod sim;
