//! Respondent × item grids loaded from delimited text plus a JSON manifest
//! that tags every column with its domain and kind.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::SurveyError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Demographics,
    Usage,
    UsabilitySatisfaction,
    Usefulness,
    ImpactFuture,
    Comments,
}

impl Domain {
    pub const LIKERT: [Domain; 3] = [Domain::UsabilitySatisfaction, Domain::Usefulness, Domain::ImpactFuture];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Demographics => "demographics",
            Domain::Usage => "usage",
            Domain::UsabilitySatisfaction => "usability_satisfaction",
            Domain::Usefulness => "usefulness",
            Domain::ImpactFuture => "impact_future",
            Domain::Comments => "comments",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Domain::Demographics => "Demographics",
            Domain::Usage => "Usage patterns",
            Domain::UsabilitySatisfaction => "Usability and satisfaction",
            Domain::Usefulness => "Perceived usefulness",
            Domain::ImpactFuture => "Impact and future use",
            Domain::Comments => "Optional comments",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ItemKind {
    /// 1..=5.
    Likert,
    /// Cells hold a 0-based code into `categories`, or the label itself in
    /// the data file.
    Categorical { categories: Vec<String> },
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub domain: Domain,
    #[serde(flatten)]
    pub kind: ItemKind,
    #[serde(default)]
    pub label: String,
}

impl Item {
    pub fn is_likert(&self) -> bool {
        self.kind == ItemKind::Likert
    }
}

/// Which items feed the group comparisons in the report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRoles {
    #[serde(default)]
    pub time_saved_item: Option<String>,
    #[serde(default)]
    pub seniority_item: Option<String>,
    /// Minutes per day for each time-saved category label.
    #[serde(default)]
    pub time_saved_midpoints: BTreeMap<String, f64>,
    /// A previously published aggregate to print next to the computed one.
    #[serde(default)]
    pub reported_time_saved_total: Option<f64>,
    /// Item count stated in the questionnaire's own description, if it
    /// disagrees with the enumerated items.
    #[serde(default)]
    pub stated_item_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub items: Vec<Item>,
    #[serde(default)]
    pub analysis: AnalysisRoles,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self, SurveyError> {
        let manifest: Manifest = serde_json::from_str(text).map_err(|e| SurveyError::Manifest(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self, SurveyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<(), SurveyError> {
        let mut seen = std::collections::BTreeSet::new();
        for item in &self.items {
            if !seen.insert(item.id.as_str()) {
                return Err(SurveyError::Manifest(format!("item {:?} listed twice", item.id)));
            }
            if let ItemKind::Categorical { categories } = &item.kind {
                if categories.is_empty() {
                    return Err(SurveyError::Manifest(format!("item {:?} has no categories", item.id)));
                }
            }
        }
        let roles = [
            &self.analysis.time_saved_item,
            &self.analysis.seniority_item,
        ];
        for id in roles.into_iter().flatten() {
            if !seen.contains(id.as_str()) {
                return Err(SurveyError::Manifest(format!("analysis refers to unknown item {id:?}")));
            }
        }
        Ok(())
    }

    pub fn item(&self, id: &str) -> Option<&Item> {
        self.items.iter().find(|i| i.id == id)
    }
}

/// One row per respondent, one column per manifest item.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    pub manifest: Manifest,
    pub respondents: Vec<String>,
    /// Likert values or categorical codes; `None` marks a missing cell.
    /// Text columns are always `None` here.
    pub values: Vec<Vec<Option<i64>>>,
    /// Free-text answers keyed by item id.
    pub text: BTreeMap<String, Vec<Option<String>>>,
}

impl ResponseMatrix {
    pub fn new(manifest: Manifest) -> Self {
        let text = manifest
            .items
            .iter()
            .filter(|i| i.kind == ItemKind::Text)
            .map(|i| (i.id.clone(), Vec::new()))
            .collect();
        Self {
            manifest,
            respondents: Vec::new(),
            values: Vec::new(),
            text,
        }
    }

    /// Appends a respondent given raw cell strings in manifest order.
    pub fn push_raw(&mut self, respondent: &str, cells: &[&str]) -> Result<(), SurveyError> {
        if cells.len() != self.manifest.items.len() {
            return Err(SurveyError::InsufficientData(format!(
                "respondent {respondent} has {} cells, expected {}",
                cells.len(),
                self.manifest.items.len()
            )));
        }
        let mut row = Vec::with_capacity(cells.len());
        let mut answers = Vec::new();
        for (item, raw) in self.manifest.items.iter().zip(cells) {
            let raw = raw.trim();
            let invalid = || SurveyError::InvalidCell {
                respondent: respondent.to_string(),
                item: item.id.clone(),
                value: raw.to_string(),
            };
            let value = match &item.kind {
                _ if raw.is_empty() && item.kind != ItemKind::Text => None,
                ItemKind::Likert => {
                    let v: i64 = raw.parse().map_err(|_| invalid())?;
                    if !(1..=5).contains(&v) {
                        return Err(invalid());
                    }
                    Some(v)
                }
                ItemKind::Categorical { categories } => {
                    let code = match categories.iter().position(|c| c == raw) {
                        Some(p) => p as i64,
                        None => raw.parse().map_err(|_| invalid())?,
                    };
                    if code < 0 || code as usize >= categories.len() {
                        return Err(invalid());
                    }
                    Some(code)
                }
                ItemKind::Text => {
                    answers.push((item.id.clone(), (!raw.is_empty()).then(|| raw.to_string())));
                    None
                }
            };
            row.push(value);
        }
        for (id, answer) in answers {
            self.text.get_mut(&id).expect("text column registered").push(answer);
        }
        self.respondents.push(respondent.to_string());
        self.values.push(row);
        Ok(())
    }

    /// Reads delimited text whose header is `respondent_id` followed by item
    /// ids. Columns may appear in any order; every manifest item must be
    /// present.
    pub fn from_reader(reader: impl Read, manifest: Manifest, delimiter: u8) -> Result<Self, SurveyError> {
        let mut csv = csv::ReaderBuilder::new().delimiter(delimiter).from_reader(reader);
        let header: Vec<String> = csv.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if header.first().map(String::as_str) != Some("respondent_id") {
            return Err(SurveyError::Manifest("first column must be respondent_id".into()));
        }
        let mut positions = Vec::new();
        for item in &manifest.items {
            let pos = header
                .iter()
                .position(|h| h == &item.id)
                .ok_or_else(|| SurveyError::Manifest(format!("data file lacks column {:?}", item.id)))?;
            positions.push(pos);
        }
        if let Some(extra) = header.iter().skip(1).find(|h| manifest.item(h).is_none()) {
            return Err(SurveyError::UnknownItem(extra.clone()));
        }
        let mut matrix = Self::new(manifest);
        for record in csv.records() {
            let record = record?;
            let cells: Vec<&str> = positions.iter().map(|&p| record.get(p).unwrap_or("")).collect();
            matrix.push_raw(record.get(0).unwrap_or(""), &cells)?;
        }
        Ok(matrix)
    }

    pub fn load(data: &Path, manifest: &Path) -> Result<Self, SurveyError> {
        let manifest = Manifest::load(manifest)?;
        let delimiter = match data.extension().and_then(|e| e.to_str()) {
            Some("tsv") => b'\t',
            _ => b',',
        };
        Self::from_reader(std::fs::File::open(data)?, manifest, delimiter)
    }

    pub fn to_csv(&self) -> Result<String, SurveyError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["respondent_id".to_string()];
        header.extend(self.manifest.items.iter().map(|i| i.id.clone()));
        w.write_record(&header)?;
        for (r, id) in self.respondents.iter().enumerate() {
            let mut row = vec![id.clone()];
            for (c, item) in self.manifest.items.iter().enumerate() {
                row.push(match &item.kind {
                    ItemKind::Text => self.text[&item.id].get(r).cloned().flatten().unwrap_or_default(),
                    ItemKind::Categorical { categories } => self.values[r][c]
                        .map(|v| categories[v as usize].clone())
                        .unwrap_or_default(),
                    ItemKind::Likert => self.values[r][c].map(|v| v.to_string()).unwrap_or_default(),
                });
            }
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| SurveyError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn n_respondents(&self) -> usize {
        self.respondents.len()
    }

    fn index_of(&self, item_id: &str) -> Result<usize, SurveyError> {
        self.manifest
            .items
            .iter()
            .position(|i| i.id == item_id)
            .ok_or_else(|| SurveyError::UnknownItem(item_id.to_string()))
    }

    pub fn column(&self, item_id: &str) -> Result<Vec<Option<f64>>, SurveyError> {
        let c = self.index_of(item_id)?;
        Ok(self.values.iter().map(|row| row[c].map(|v| v as f64)).collect())
    }

    pub fn codes(&self, item_id: &str) -> Result<Vec<Option<i64>>, SurveyError> {
        let c = self.index_of(item_id)?;
        Ok(self.values.iter().map(|row| row[c]).collect())
    }

    pub fn likert_items(&self, domain: Option<Domain>) -> Vec<&Item> {
        self.manifest
            .items
            .iter()
            .filter(|i| i.is_likert() && domain.is_none_or(|d| i.domain == d))
            .collect()
    }

    /// Likert columns of one domain, or of every domain when `None`.
    pub fn likert_columns(&self, domain: Option<Domain>) -> Vec<Vec<Option<f64>>> {
        self.likert_items(domain)
            .iter()
            .map(|i| self.column(&i.id).expect("item from manifest"))
            .collect()
    }

    pub fn items_in(&self, domain: Domain) -> usize {
        self.manifest.items.iter().filter(|i| i.domain == domain).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> Manifest {
        Manifest::from_json(
            r#"{"items":[
                {"id":"role","domain":"demographics","kind":"categorical","categories":["attending","rn"]},
                {"id":"u1","domain":"usability_satisfaction","kind":"likert"},
                {"id":"u2","domain":"usability_satisfaction","kind":"likert"},
                {"id":"c1","domain":"comments","kind":"text"}
            ]}"#,
        )
        .unwrap()
    }

    #[test]
    fn parses_labels_codes_and_missing() {
        let data = "respondent_id,u2,role,u1,c1\nr1,4,attending,5,great\nr2,,1,3,\n";
        let m = ResponseMatrix::from_reader(data.as_bytes(), manifest(), b',').unwrap();
        assert_eq!(m.values, vec![vec![Some(0), Some(5), Some(4), None], vec![Some(1), Some(3), None, None]]);
        assert_eq!(m.text["c1"], vec![Some("great".to_string()), None]);
        let back = ResponseMatrix::from_reader(m.to_csv().unwrap().as_bytes(), manifest(), b',').unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_out_of_range_likert() {
        let data = "respondent_id,role,u1,u2,c1\nr1,rn,6,1,\n";
        let err = ResponseMatrix::from_reader(data.as_bytes(), manifest(), b',').unwrap_err();
        assert!(matches!(err, SurveyError::InvalidCell { ref item, .. } if item == "u1"));
    }

    #[test]
    fn rejects_unknown_and_missing_columns() {
        let extra = "respondent_id,role,u1,u2,c1,zz\n";
        assert!(ResponseMatrix::from_reader(extra.as_bytes(), manifest(), b',').is_err());
        let missing = "respondent_id,role,u1,c1\n";
        assert!(ResponseMatrix::from_reader(missing.as_bytes(), manifest(), b',').is_err());
    }
}
