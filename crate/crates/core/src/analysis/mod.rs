//! Sensitivity audits, the mean-square comparison system, accuracy bounds and aggregation.

mod audit;
mod bound;
mod gain;
mod metrics;

pub use audit::{
    audit_sensitivity, audit_sensitivity_with, compare_sensitivities, AuditMode, OrderingCheck, OrderingReport,
    SensitivityEnvelope, AUDITED, ORDERINGS,
};
pub use bound::{accuracy_bound, accuracy_terms, tune, BoundConstants, Tuned};
pub use gain::{
    build_gain_system, limit_matrix, q1_bound, rho_less_than, spectral_radius, GainInputs, GainSystem, DEFAULT_THETA,
};
pub use metrics::{calibrate_constants, trace_metrics, Curves, FinalStats};
