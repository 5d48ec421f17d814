//! A synthetic 55-respondent cohort rebuilt from the published response
//! percentages. The raw answers were never released, so this only checks
//! that the scoring code lands on the reported domain means when fed
//! distributions consistent with the reported percentages.
//!
//! Where the text gives only an aggregate ("87% agreed"), the split inside
//! the aggregate and the remainder are assumptions, chosen once and frozen.

use std::collections::BTreeMap;

use crate::matrix::{AnalysisRoles, Domain, Item, ItemKind, Manifest, ResponseMatrix};

pub const RESPONDENTS: usize = 55;

pub const REPORTED_USABILITY_MEAN: f64 = 3.89;
pub const REPORTED_USEFULNESS_MEAN: f64 = 3.43;
pub const REPORTED_IMPACT_MEAN: f64 = 3.80;
pub const REPORTED_OVERALL_MEAN: f64 = 3.70;
pub const REPORTED_TIME_SAVED_TOTAL: f64 = 560.0;
pub const STATED_ITEM_COUNT: usize = 11;

pub const TIME_SAVED_CATEGORIES: [&str; 5] = ["none", "<5", "5-10", "10-20", ">20"];
pub const TIME_SAVED_COUNTS: [u64; 5] = [12, 18, 10, 8, 7];
pub const TIME_SAVED_MIDPOINTS: [f64; 5] = [0.0, 2.5, 7.5, 15.0, 25.0];

pub fn natural_midpoints() -> BTreeMap<String, f64> {
    TIME_SAVED_CATEGORIES
        .iter()
        .zip(TIME_SAVED_MIDPOINTS)
        .map(|(c, m)| (c.to_string(), m))
        .collect()
}

/// Percentages for strongly disagree .. strongly agree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikertTarget {
    pub id: &'static str,
    pub domain: Domain,
    pub label: &'static str,
    pub percent: [f64; 5],
}

const fn likert(id: &'static str, domain: Domain, label: &'static str, percent: [f64; 5]) -> LikertTarget {
    LikertTarget { id, domain, label, percent }
}

use Domain::{ImpactFuture as IF, UsabilitySatisfaction as US, Usefulness as UF};

pub const LIKERT_TARGETS: [LikertTarget; 14] = [
    // 87% agree
    likert("us_ease", US, "Easy to use", [0.0, 3.0, 8.0, 35.0, 54.0]),
    // 76% agree
    likert("us_clarity", US, "Summaries clearly structured", [0.0, 8.0, 16.0, 36.0, 40.0]),
    // 56% agree
    likert("us_locate", US, "Quickly locate information", [2.0, 12.0, 30.0, 24.0, 32.0]),
    // 60% agree
    likert("us_workflow", US, "Integrates with daily workflow", [2.0, 10.0, 28.0, 26.0, 34.0]),
    // fully reported
    likert("us_overall", US, "Overall satisfaction", [7.0, 24.0, 20.0, 16.0, 33.0]),
    // 62% agree or strongly agree
    likert("uf_appointments", UF, "Stay updated on appointments", [4.0, 12.0, 22.0, 30.0, 32.0]),
    // 53% agree
    likert("uf_understanding", UF, "Understanding of clinical summaries", [6.0, 13.0, 28.0, 28.0, 25.0]),
    // 55% agree
    likert("uf_trials", UF, "Identify trial-eligible patients", [5.0, 13.0, 27.0, 23.0, 32.0]),
    // 35% disagree, 20% neutral
    likert("uf_coordination", UF, "Team care coordination", [10.0, 25.0, 20.0, 25.0, 20.0]),
    // 20% strongly disagree, 22% disagree, 11% neutral
    likert("uf_chart_time", UF, "Less time reviewing charts", [20.0, 22.0, 11.0, 27.0, 20.0]),
    // 64% agree or strongly agree
    likert("if_other_specialties", IF, "Similar tools in other specialties", [2.0, 6.0, 28.0, 16.0, 48.0]),
    // 64% agree or strongly agree
    likert("if_continue", IF, "Continue using", [0.0, 4.0, 32.0, 10.0, 54.0]),
    // 60% agree, 17% disagree
    likert("if_recommend", IF, "Recommend to a colleague", [5.0, 12.0, 23.0, 25.0, 35.0]),
    // 49% agree, 29% disagree
    likert("if_efficiency", IF, "Positive impact on clinical efficiency", [9.0, 20.0, 22.0, 25.0, 24.0]),
];

pub struct CategoricalTarget {
    pub id: &'static str,
    pub domain: Domain,
    pub label: &'static str,
    pub categories: &'static [(&'static str, u64)],
}

pub const CATEGORICAL_TARGETS: [CategoricalTarget; 5] = [
    CategoricalTarget {
        id: "specialty",
        domain: Domain::Demographics,
        label: "Specialty",
        categories: &[("Radiation oncology", 52), ("Medical oncology", 2), ("Oncology nurse navigator", 1)],
    },
    CategoricalTarget {
        id: "role",
        domain: Domain::Demographics,
        label: "Professional role",
        categories: &[
            ("Attending physician", 38),
            ("APP (PA or NP)", 8),
            ("RN", 6),
            ("Resident / Fellow", 2),
            ("LPN", 1),
        ],
    },
    CategoricalTarget {
        id: "seniority",
        domain: Domain::Demographics,
        label: "Years in practice",
        categories: &[("<5", 12), ("5-10", 12), (">10", 31)],
    },
    CategoricalTarget {
        id: "frequency",
        domain: Domain::Usage,
        label: "How often summaries are read",
        categories: &[("Daily", 29), ("A few times a week", 17), ("Occasionally", 5), ("Rarely or never", 4)],
    },
    CategoricalTarget {
        id: "time_saved",
        domain: Domain::Usage,
        label: "Minutes saved per day",
        categories: &[("none", 12), ("<5", 18), ("5-10", 10), ("10-20", 8), (">20", 7)],
    },
];

pub const TEXT_ITEMS: [(&str, &str); 3] = [
    ("comment_useful", "Most useful parts"),
    ("comment_improve", "Suggested improvements"),
    ("comment_other", "Additional comments"),
];

/// Largest-remainder rounding of percentages to `total` whole respondents.
pub fn counts_from_percent(percent: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = percent.iter().sum();
    let exact: Vec<f64> = percent.iter().map(|p| p / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..percent.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let short = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

fn expand(counts: &[usize]) -> Vec<i64> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(v, &c)| std::iter::repeat_n(v as i64, c))
        .collect()
}

pub fn manifest() -> Manifest {
    let mut items = Vec::new();
    for t in &CATEGORICAL_TARGETS {
        items.push(Item {
            id: t.id.into(),
            domain: t.domain,
            kind: ItemKind::Categorical {
                categories: t.categories.iter().map(|(c, _)| c.to_string()).collect(),
            },
            label: t.label.into(),
        });
    }
    for t in &LIKERT_TARGETS {
        items.push(Item {
            id: t.id.into(),
            domain: t.domain,
            kind: ItemKind::Likert,
            label: t.label.into(),
        });
    }
    for (id, label) in TEXT_ITEMS {
        items.push(Item {
            id: id.into(),
            domain: Domain::Comments,
            kind: ItemKind::Text,
            label: label.into(),
        });
    }
    Manifest {
        items,
        analysis: AnalysisRoles {
            time_saved_item: Some("time_saved".into()),
            seniority_item: Some("seniority".into()),
            time_saved_midpoints: natural_midpoints(),
            reported_time_saved_total: Some(REPORTED_TIME_SAVED_TOTAL),
            stated_item_count: Some(STATED_ITEM_COUNT),
        },
    }
}

/// Position of respondent `r` in a fixed pseudo-shuffle of 0..55 (23 is
/// coprime to 55, so this is a permutation).
fn scattered(r: usize) -> usize {
    (r * 23 + 7) % RESPONDENTS
}

/// Builds the cohort. Likert items and the time-saved answer are assigned in
/// ascending order along one latent ordering of respondents, so item answers
/// move together and satisfaction rises with time saved. The other
/// demographic answers are scattered independently of that ordering.
pub fn cohort() -> ResponseMatrix {
    let manifest = manifest();
    let mut columns: BTreeMap<&str, Vec<i64>> = BTreeMap::new();
    for t in &LIKERT_TARGETS {
        let values = expand(&counts_from_percent(&t.percent, RESPONDENTS));
        columns.insert(t.id, values.into_iter().map(|v| v + 1).collect());
    }
    for t in &CATEGORICAL_TARGETS {
        let counts: Vec<usize> = t.categories.iter().map(|(_, c)| *c as usize).collect();
        let sorted = expand(&counts);
        let values = if t.id == "time_saved" {
            sorted
        } else {
            (0..RESPONDENTS).map(|r| sorted[scattered(r)]).collect()
        };
        columns.insert(t.id, values);
    }
    let mut matrix = ResponseMatrix::new(manifest);
    for r in 0..RESPONDENTS {
        let row: Vec<Option<i64>> = matrix
            .manifest
            .items
            .iter()
            .map(|i| columns.get(i.id.as_str()).map(|c| c[r]))
            .collect();
        matrix.respondents.push(format!("R{:02}", r + 1));
        matrix.values.push(row);
    }
    for answers in matrix.text.values_mut() {
        answers.resize(RESPONDENTS, None);
    }
    matrix
}
