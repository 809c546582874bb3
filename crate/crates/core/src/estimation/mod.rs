//! Meeting-rate slope estimation from buyer-seller transaction panels.
//!
//! A panel is a set of `(year, market, firm, buyer, value)` links. For each
//! market-year the estimator compares where buyers new to the panel land
//! (inflow shares) with the firms' buyer-count market shares:
//! `inflow_share = (1 - alpha) / N + alpha * share`.

mod ingest;
mod regression;
mod synth;

pub use ingest::{
    ingest_records, ingest_transactions, read_transactions, write_transactions, FlowCell, FlowPanel, IngestOptions, IngestStats,
    TransactionRecord,
};
pub use regression::{
    adjust_flows, alpha_by_year, binned_inflow_means, estimate_alpha, estimate_scope, AdjustedCell, AdjustedPanel, AlphaEstimate,
    AlphaReport, EstimateOptions, Regressor, Scope,
};
pub use synth::{synth_panel, SynthConfig};
