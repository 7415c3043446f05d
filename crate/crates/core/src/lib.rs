//! Vulnerability detection by constraint solving over source-to-sink call chains.
//!
//! The engine works on a JSON code-information summary: each candidate finding
//! is a call chain from a method that reads attacker input to a method that
//! reaches a dangerous sink. Detection is decomposed into one subtask per
//! adjacent caller/callee pair, each asking a solver backend two questions:
//! can execution reach the call site (transfer), and what non-exploitability
//! state do the callee's security-critical parameters have afterwards. A chain
//! is reported exploitable when the sink-side state can still trigger the rule.

pub mod branch;
pub mod cli;
pub mod context;
pub mod frontend;
pub mod harness;
pub mod pipeline;
pub mod rules;
pub mod solver;
pub mod summary;
pub mod textflow;
