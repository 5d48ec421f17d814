//! Prostate risk grouping and the disease-specific sentence appended to
//! prostate status summaries.
//!
//! Rules are evaluated in precedence order very high > high > intermediate >
//! low. PSA boundaries tile the line: low below 10, intermediate on [10, 20],
//! high above 20. Nodal or metastatic disease is graded very high.

use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::domain::{MStage, NStage, PatientChart, ProstateDetail, TStage};

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum RulesError {
    #[error("invalid prostate inputs: {0}")]
    InvalidInputs(String),
    #[error("chart has no prostate diagnosis with biopsy detail")]
    NotProstate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProstateInputs {
    pub t_stage: TStage,
    pub n_stage: NStage,
    pub m_stage: MStage,
    pub gleason_primary: u8,
    pub gleason_secondary: u8,
    pub psa_ng_ml: f64,
    pub cores_positive: u32,
    pub cores_total: u32,
}

impl ProstateInputs {
    fn check(&self) -> Result<(), RulesError> {
        ProstateDetail::new(
            self.gleason_primary,
            self.gleason_secondary,
            self.cores_positive,
            self.cores_total,
        )
        .map_err(|e| RulesError::InvalidInputs(e.to_string()))?;
        if !self.psa_ng_ml.is_finite() || self.psa_ng_ml < 0.0 {
            return Err(RulesError::InvalidInputs(format!(
                "PSA must be finite and non-negative, got {}",
                self.psa_ng_ml
            )));
        }
        Ok(())
    }

    fn gleason_sum(&self) -> u8 {
        self.gleason_primary + self.gleason_secondary
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskCategory {
    Low,
    IntermediateFavorable,
    IntermediateUnfavorable,
    High,
    VeryHigh,
}

impl RiskCategory {
    /// Ordinal severity; the two intermediate subgroups share a level.
    pub fn level(self) -> u8 {
        match self {
            RiskCategory::Low => 0,
            RiskCategory::IntermediateFavorable | RiskCategory::IntermediateUnfavorable => 1,
            RiskCategory::High => 2,
            RiskCategory::VeryHigh => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RiskCategory::Low => "low",
            RiskCategory::IntermediateFavorable => "favorable intermediate",
            RiskCategory::IntermediateUnfavorable => "unfavorable intermediate",
            RiskCategory::High => "high",
            RiskCategory::VeryHigh => "very high",
        }
    }
}

impl fmt::Display for RiskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskFactor {
    TStageT3bToT4,
    PrimaryPattern5,
    ManyCoresHighGleason,
    NodalDisease,
    DistantMetastasis,
    TStageT3a,
    GleasonSumAtLeast8,
    PsaAbove20,
    TStageT2bToT2c,
    GleasonSum7,
    Psa10To20,
    MultipleIntermediateFactors,
    PrimaryPattern4,
    HalfOrMoreCoresPositive,
}

impl RiskFactor {
    fn describe(self) -> &'static str {
        match self {
            RiskFactor::TStageT3bToT4 => "T3b-T4",
            RiskFactor::PrimaryPattern5 => "primary Gleason pattern 5",
            RiskFactor::ManyCoresHighGleason => ">5 cores with Gleason >=8",
            RiskFactor::NodalDisease => "N1",
            RiskFactor::DistantMetastasis => "M1",
            RiskFactor::TStageT3a => "T3a",
            RiskFactor::GleasonSumAtLeast8 => "Gleason >=8",
            RiskFactor::PsaAbove20 => "PSA >20",
            RiskFactor::TStageT2bToT2c => "T2b-T2c",
            RiskFactor::GleasonSum7 => "Gleason 7",
            RiskFactor::Psa10To20 => "PSA 10-20",
            RiskFactor::MultipleIntermediateFactors => "2 or more intermediate factors",
            RiskFactor::PrimaryPattern4 => "primary Gleason pattern 4",
            RiskFactor::HalfOrMoreCoresPositive => ">=50% cores positive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub category: RiskCategory,
    pub triggered_factors: Vec<RiskFactor>,
    pub explanation: String,
}

/// T-stage bands used by the grouping. Unsuffixed T1/T2/T3 fall into the
/// lowest lettered band of their family; every T4 variant is very high.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TBand {
    UpToT2a,
    T2bToT2c,
    T3a,
    T3bToT4,
}

fn t_band(t: TStage) -> TBand {
    use TStage::*;
    match t {
        T1 | T1a | T1b | T1c | T2 | T2a => TBand::UpToT2a,
        T2b | T2c => TBand::T2bToT2c,
        T3 | T3a => TBand::T3a,
        T3b | T3c | T4 | T4a | T4b | T4c => TBand::T3bToT4,
    }
}

pub fn classify_nccn_prostate(inputs: &ProstateInputs) -> Result<RiskAssessment, RulesError> {
    inputs.check()?;
    let band = t_band(inputs.t_stage);
    let sum = inputs.gleason_sum();
    let psa = inputs.psa_ng_ml;

    let very_high: Vec<RiskFactor> = [
        (band == TBand::T3bToT4, RiskFactor::TStageT3bToT4),
        (inputs.gleason_primary == 5, RiskFactor::PrimaryPattern5),
        (inputs.cores_positive > 5 && sum >= 8, RiskFactor::ManyCoresHighGleason),
        (inputs.n_stage == NStage::N1, RiskFactor::NodalDisease),
        (inputs.m_stage == MStage::M1, RiskFactor::DistantMetastasis),
    ]
    .into_iter()
    .filter_map(|(hit, f)| hit.then_some(f))
    .collect();
    if !very_high.is_empty() {
        return Ok(assessment(RiskCategory::VeryHigh, very_high));
    }

    let high: Vec<RiskFactor> = [
        (band == TBand::T3a, RiskFactor::TStageT3a),
        (sum >= 8, RiskFactor::GleasonSumAtLeast8),
        (psa > 20.0, RiskFactor::PsaAbove20),
    ]
    .into_iter()
    .filter_map(|(hit, f)| hit.then_some(f))
    .collect();
    if !high.is_empty() {
        return Ok(assessment(RiskCategory::High, high));
    }

    let mut intermediate: Vec<RiskFactor> = [
        (band == TBand::T2bToT2c, RiskFactor::TStageT2bToT2c),
        (sum == 7, RiskFactor::GleasonSum7),
        ((10.0..=20.0).contains(&psa), RiskFactor::Psa10To20),
    ]
    .into_iter()
    .filter_map(|(hit, f)| hit.then_some(f))
    .collect();
    if intermediate.is_empty() {
        return Ok(assessment(RiskCategory::Low, Vec::new()));
    }

    let factor_count = intermediate.len();
    // Cross-multiplied to avoid a float ratio: positive/total >= 1/2.
    let half_or_more = 2 * inputs.cores_positive >= inputs.cores_total;
    let unfavorable: Vec<RiskFactor> = [
        (factor_count >= 2, RiskFactor::MultipleIntermediateFactors),
        (inputs.gleason_primary == 4, RiskFactor::PrimaryPattern4),
        (half_or_more, RiskFactor::HalfOrMoreCoresPositive),
    ]
    .into_iter()
    .filter_map(|(hit, f)| hit.then_some(f))
    .collect();
    let category = if unfavorable.is_empty() {
        RiskCategory::IntermediateFavorable
    } else {
        RiskCategory::IntermediateUnfavorable
    };
    intermediate.extend(unfavorable);
    Ok(assessment(category, intermediate))
}

fn assessment(category: RiskCategory, factors: Vec<RiskFactor>) -> RiskAssessment {
    let explanation = if factors.is_empty() {
        "T1-T2a, Gleason <=6 and PSA <10".to_string()
    } else {
        factors
            .iter()
            .map(|f| f.describe())
            .collect::<Vec<_>>()
            .join(", ")
    };
    RiskAssessment {
        category,
        triggered_factors: factors,
        explanation,
    }
}

/// Formats a PSA value with one decimal, or two when needed.
pub fn format_psa(value: f64) -> String {
    let tenths = value * 10.0;
    if (tenths - tenths.round()).abs() < 1e-9 {
        format!("{value:.1}")
    } else {
        format!("{value:.2}")
    }
}

/// Prostate sentence for a status summary: highest biopsy Gleason, most
/// recent PSA, PSA closest to diagnosis onset and the risk group.
///
/// Returns `Ok(None)` when the chart has no PSA values.
pub fn prostate_addendum(chart: &PatientChart) -> Result<Option<String>, RulesError> {
    let mut prostate_dx: Vec<_> = chart
        .diagnoses
        .iter()
        .filter_map(|d| d.prostate_detail.map(|p| (d, p)))
        .collect();
    if prostate_dx.is_empty() {
        return Err(RulesError::NotProstate);
    }
    prostate_dx.sort_by_key(|(d, _)| d.onset_date);
    let (diagnosis, _) = *prostate_dx.last().expect("non-empty");
    let highest = prostate_dx
        .iter()
        .map(|(_, p)| *p)
        .max_by_key(|p| (p.gleason_sum(), p.gleason_primary()))
        .expect("non-empty");

    let psa: Vec<_> = chart.psa_series().collect();
    let Some(most_recent) = psa.iter().max_by_key(|l| l.date) else {
        tracing::info!(patient = %chart.patient_id, "no PSA values on chart; prostate addendum omitted");
        return Ok(None);
    };
    let onset = diagnosis.onset_date;
    let distance = |date: NaiveDate| (date - onset).num_days().abs();
    // Earliest measurement wins ties.
    let closest = psa
        .iter()
        .min_by_key(|l| (distance(l.date), l.date))
        .expect("non-empty");

    let assessment = classify_nccn_prostate(&ProstateInputs {
        t_stage: diagnosis.staging.t_stage,
        n_stage: diagnosis.staging.n_stage,
        m_stage: diagnosis.staging.m_stage,
        gleason_primary: highest.gleason_primary(),
        gleason_secondary: highest.gleason_secondary(),
        psa_ng_ml: closest.value,
        cores_positive: highest.cores_positive(),
        cores_total: highest.cores_total(),
    })?;

    Ok(Some(format!(
        "Prostate cancer: highest biopsy Gleason {}+{}={} ({}/{} cores positive); most recent PSA {} ng/mL ({}); PSA closest to diagnosis {} ng/mL ({}); NCCN risk group {} ({}).",
        highest.gleason_primary(),
        highest.gleason_secondary(),
        highest.gleason_sum(),
        highest.cores_positive(),
        highest.cores_total(),
        format_psa(most_recent.value),
        most_recent.date,
        format_psa(closest.value),
        closest.date,
        assessment.category,
        assessment.explanation,
    )))
}
