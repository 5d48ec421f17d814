//! Likert survey scoring and the nonparametric tests used to evaluate the
//! deployment questionnaire.

pub mod matrix;
pub mod reconstruction;
pub mod report;
pub mod stats;

pub use matrix::{Domain, Item, ItemKind, Manifest, ResponseMatrix};
pub use stats::{
    cronbach_alpha, domain_score, kruskal_wallis, mann_whitney_u, mann_whitney_u_approx, overall_score, pairwise_complete,
    spearman_rho, time_saved_total, DomainScore, StatisticName, TestResult,
};

#[derive(Debug, thiserror::Error)]
pub enum SurveyError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("zero total variance: {0}")]
    ZeroVariance(String),
    #[error("group {0} is empty")]
    EmptyGroup(usize),
    #[error("at least two groups are required, got {0}")]
    TooFewGroups(usize),
    #[error("no midpoint for time-saved category {0:?}")]
    MissingMidpoint(String),
    #[error("domain {0} has no Likert items")]
    EmptyDomain(String),
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("respondent {respondent}, item {item}: invalid value {value:?}")]
    InvalidCell {
        respondent: String,
        item: String,
        value: String,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
