//! The `survey analyze` report: domain scores, α per domain and overall,
//! group comparisons and the time-saved aggregate, as Markdown.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::matrix::{Domain, ItemKind, ResponseMatrix};
use crate::stats::{
    cronbach_alpha, domain_score, kruskal_wallis, mann_whitney_u, overall_score, pairwise_complete,
    spearman_rho, time_saved_total, DomainScore, TestResult,
};
use crate::SurveyError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedResult {
    pub label: String,
    pub result: Result<TestResult, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSaved {
    pub counts: Vec<(String, u64)>,
    pub total_minutes: Result<f64, String>,
    pub reported_minutes: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyReport {
    pub respondents: usize,
    pub items_per_domain: Vec<(Domain, usize)>,
    pub scores: Vec<DomainScore>,
    pub reliability: Vec<NamedResult>,
    pub comparisons: Vec<NamedResult>,
    pub time_saved: Option<TimeSaved>,
    pub notes: Vec<String>,
}

fn named(label: impl Into<String>, r: Result<TestResult, SurveyError>) -> NamedResult {
    NamedResult {
        label: label.into(),
        result: r.map_err(|e| e.to_string()),
    }
}

fn categories_of(matrix: &ResponseMatrix, item: &str) -> Result<Vec<String>, SurveyError> {
    match matrix.manifest.item(item).map(|i| &i.kind) {
        Some(ItemKind::Categorical { categories }) => Ok(categories.clone()),
        Some(_) => Err(SurveyError::Manifest(format!("{item} is not categorical"))),
        None => Err(SurveyError::UnknownItem(item.into())),
    }
}

/// Per-respondent overall scores grouped by the categories of `item`,
/// dropping respondents missing either value. Empty categories are left out.
fn grouped(matrix: &ResponseMatrix, outcome: &[Option<f64>], item: &str) -> Result<Vec<(String, Vec<f64>)>, SurveyError> {
    let categories = categories_of(matrix, item)?;
    let codes = matrix.codes(item)?;
    let mut groups: Vec<(String, Vec<f64>)> = categories.into_iter().map(|c| (c, Vec::new())).collect();
    for (code, score) in codes.iter().zip(outcome) {
        if let (Some(code), Some(score)) = (code, score) {
            groups[*code as usize].1.push(*score);
        }
    }
    groups.retain(|(_, g)| !g.is_empty());
    Ok(groups)
}

pub fn analyze(matrix: &ResponseMatrix) -> Result<SurveyReport, SurveyError> {
    let roles = &matrix.manifest.analysis;
    let all_domains = [
        Domain::Demographics,
        Domain::Usage,
        Domain::UsabilitySatisfaction,
        Domain::Usefulness,
        Domain::ImpactFuture,
        Domain::Comments,
    ];
    let items_per_domain: Vec<(Domain, usize)> = all_domains
        .iter()
        .map(|&d| (d, matrix.items_in(d)))
        .filter(|(_, n)| *n > 0)
        .collect();
    let mut notes = Vec::new();
    let enumerated = matrix.manifest.items.len();
    if let Some(stated) = roles.stated_item_count.filter(|s| *s != enumerated) {
        let breakdown: Vec<String> = items_per_domain.iter().map(|(_, n)| n.to_string()).collect();
        notes.push(format!(
            "Item count discrepancy: the questionnaire description states {stated} items, but {} = {enumerated} items are enumerated; the enumerated structure is analyzed.",
            breakdown.join("+")
        ));
    }

    let mut scores = Vec::new();
    for d in Domain::LIKERT {
        if !matrix.likert_items(Some(d)).is_empty() {
            scores.push(domain_score(matrix, d)?);
        }
    }
    let overall = overall_score(matrix)?;
    scores.push(overall.clone());

    let mut reliability: Vec<NamedResult> = Domain::LIKERT
        .iter()
        .filter(|d| !matrix.likert_items(Some(**d)).is_empty())
        .map(|&d| named(d.title(), cronbach_alpha(&matrix.likert_columns(Some(d)))))
        .collect();
    reliability.push(named("Overall scale", cronbach_alpha(&matrix.likert_columns(None))));

    let mut comparisons = Vec::new();
    let outcome = &overall.per_respondent;
    if let Some(item) = &roles.time_saved_item {
        let codes: Vec<Option<f64>> = matrix.codes(item)?.iter().map(|c| c.map(|v| v as f64)).collect();
        let (x, y) = pairwise_complete(&codes, outcome);
        comparisons.push(named("Spearman: time saved (ordinal) vs overall score", spearman_rho(&x, &y)));
        let groups = grouped(matrix, outcome, item)?;
        let values: Vec<Vec<f64>> = groups.iter().map(|(_, g)| g.clone()).collect();
        comparisons.push(named("Kruskal-Wallis: overall score by time saved", kruskal_wallis(&values)));
        if let Some(((_, none), rest)) = groups.split_first() {
            let some: Vec<f64> = rest.iter().flat_map(|(_, g)| g.iter().copied()).collect();
            comparisons.push(named(
                "Mann-Whitney: overall score, first time-saved category vs the rest",
                mann_whitney_u(none, &some),
            ));
        }
    }
    if let Some(item) = &roles.seniority_item {
        let groups = grouped(matrix, outcome, item)?;
        let values: Vec<Vec<f64>> = groups.iter().map(|(_, g)| g.clone()).collect();
        comparisons.push(named("Kruskal-Wallis: overall score by seniority", kruskal_wallis(&values)));
    }

    let time_saved = match &roles.time_saved_item {
        Some(item) if !roles.time_saved_midpoints.is_empty() => {
            let categories = categories_of(matrix, item)?;
            let codes = matrix.codes(item)?;
            let counts: Vec<(String, u64)> = categories
                .iter()
                .enumerate()
                .map(|(k, c)| (c.clone(), codes.iter().filter(|v| **v == Some(k as i64)).count() as u64))
                .collect();
            let total = time_saved_total(counts.iter().map(|(c, n)| (c.as_str(), *n)), &roles.time_saved_midpoints);
            if let (Ok(t), Some(r)) = (&total, roles.reported_time_saved_total) {
                if (t - r).abs() > 1e-9 {
                    notes.push(format!(
                        "Time-saved discrepancy: the category counts with the midpoints used here give {t:.1} minutes per day, not the previously reported {r:.0}. The midpoints behind the reported figure are not stated."
                    ));
                }
            }
            Some(TimeSaved {
                counts,
                total_minutes: total.map_err(|e| e.to_string()),
                reported_minutes: roles.reported_time_saved_total,
            })
        }
        _ => None,
    };

    Ok(SurveyReport {
        respondents: matrix.n_respondents(),
        items_per_domain,
        scores,
        reliability,
        comparisons,
        time_saved,
        notes,
    })
}

fn fmt_p(p: Option<f64>) -> String {
    match p {
        None => "".into(),
        Some(p) if p < 0.001 => "< 0.001".into(),
        Some(p) => format!("{p:.3}"),
    }
}

fn result_row(out: &mut String, label: &str, r: &Result<TestResult, String>) {
    match r {
        Ok(t) => writeln!(
            out,
            "| {label} | {} = {:.3} | {} | {} | {} |",
            t.statistic_name.symbol(),
            t.statistic_value,
            fmt_p(t.p_value),
            t.n_used,
            t.method_note
        ),
        Err(e) => writeln!(out, "| {label} | undefined | | | {e} |"),
    }
    .expect("writing to a String");
}

impl SurveyReport {
    pub fn score(&self, label: &str) -> Option<&DomainScore> {
        self.scores.iter().find(|s| s.label == label)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let w = &mut out;
        let _ = writeln!(w, "# Survey analysis\n");
        let _ = writeln!(w, "Respondents: {}\n", self.respondents);
        let _ = writeln!(w, "| Domain | Items |\n|---|---|");
        for (d, n) in &self.items_per_domain {
            let _ = writeln!(w, "| {} | {n} |", d.title());
        }
        let _ = writeln!(w, "\n## Domain scores\n");
        let _ = writeln!(w, "| Domain | Items | n | Mean | SD |\n|---|---|---|---|---|");
        for s in &self.scores {
            let title = Domain::LIKERT
                .into_iter()
                .find(|d| d.as_str() == s.label)
                .map_or("Overall (all Likert items)", Domain::title);
            let sd = s.sd.map(|v| format!("{v:.2}")).unwrap_or_else(|| "n/a".into());
            let _ = writeln!(w, "| {title} | {} | {} | {:.2} | {sd} |", s.items, s.n, s.mean);
        }
        let _ = writeln!(w, "\n## Internal consistency\n");
        let _ = writeln!(w, "| Scale | Statistic | p | n | Method |\n|---|---|---|---|---|");
        for r in &self.reliability {
            result_row(w, &r.label, &r.result);
        }
        if !self.comparisons.is_empty() {
            let _ = writeln!(w, "\n## Group comparisons\n");
            let _ = writeln!(w, "| Test | Statistic | p | n | Method |\n|---|---|---|---|---|");
            for r in &self.comparisons {
                result_row(w, &r.label, &r.result);
            }
        }
        if let Some(t) = &self.time_saved {
            let _ = writeln!(w, "\n## Time saved\n");
            let _ = writeln!(w, "| Category | Respondents |\n|---|---|");
            for (c, n) in &t.counts {
                let _ = writeln!(w, "| {c} | {n} |");
            }
            match &t.total_minutes {
                Ok(v) => {
                    let _ = writeln!(w, "\nComputed total: {v:.1} minutes per day");
                }
                Err(e) => {
                    let _ = writeln!(w, "\nComputed total unavailable: {e}");
                }
            }
            if let Some(r) = t.reported_minutes {
                let _ = writeln!(w, "\nReported total: {r:.0} minutes per day");
            }
        }
        if !self.notes.is_empty() {
            let _ = writeln!(w, "\n## Notes\n");
            for n in &self.notes {
                let _ = writeln!(w, "- {n}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruction;

    #[test]
    fn reconstruction_report_mentions_both_totals() {
        let report = analyze(&reconstruction::cohort()).unwrap();
        let md = report.to_markdown();
        assert!(md.contains("Computed total: 415.0 minutes per day"), "{md}");
        assert!(md.contains("Reported total: 560 minutes per day"));
        assert!(md.contains("Time-saved discrepancy"));
        assert!(md.contains("states 11 items, but 3+2+5+5+4+3 = 22 items"), "{md}");
    }
}
