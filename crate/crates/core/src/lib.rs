//! fallback-probe measures LLM fallback behaviors under uncertainty from raw
//! model completions: it parses list-style and open-ended generations into
//! ordered facts, labels each fact correct / hallucination / repetition,
//! detects how generations end, and computes ordering (ShiftScore) and
//! degeneracy (DiversityScore) metrics with nonparametric significance tests.
//!
//! Pipeline: [`harness`] collects and caches completions → [`listparse`]
//! extracts ordered answers and the ending → [`matching`] + [`label`] assign
//! fact labels → [`metrics`] and [`stats`] score orderings → [`report`]
//! emits tables and figures.

pub mod corpus;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod label;
pub mod listparse;
pub mod matching;
pub mod metrics;
pub mod mock;
pub mod report;
pub mod stats;

pub use error::{Error, Result};
