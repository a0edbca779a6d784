use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Modality, REFERENCE_SOURCES};

/// First day of a reporting week.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeekStart {
    /// ISO weeks.
    #[default]
    Monday,
    Sunday,
}

impl WeekStart {
    fn weekday(self) -> Weekday {
        match self {
            WeekStart::Monday => Weekday::Mon,
            WeekStart::Sunday => Weekday::Sun,
        }
    }

    /// Start date of the week containing `date`.
    pub fn week_of(self, date: NaiveDate) -> NaiveDate {
        let offset = (7 + date.weekday().num_days_from_monday() as i64
            - self.weekday().num_days_from_monday() as i64)
            % 7;
        date - Duration::days(offset)
    }
}

/// Contiguous run of weeks covering `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
    #[serde(default)]
    pub week_start: WeekStart,
}

impl Default for StudyWindow {
    fn default() -> Self {
        StudyWindow {
            start: NaiveDate::from_ymd_opt(2020, 9, 1).unwrap(),
            end: NaiveDate::from_ymd_opt(2021, 6, 25).unwrap(),
            week_start: WeekStart::Monday,
        }
    }
}

impl StudyWindow {
    pub fn new(start: NaiveDate, end: NaiveDate, week_start: WeekStart) -> Result<Self> {
        if end < start {
            return Err(Error::config("window", format!("end {end} precedes start {start}")));
        }
        Ok(StudyWindow { start, end, week_start })
    }

    /// Window of `n_weeks` whole weeks starting with the week containing `start`.
    pub fn from_weeks(start: NaiveDate, n_weeks: usize, week_start: WeekStart) -> Result<Self> {
        if n_weeks == 0 {
            return Err(Error::config("n_weeks", "must be positive"));
        }
        let first = week_start.week_of(start);
        Ok(StudyWindow {
            start: first,
            end: first + Duration::weeks(n_weeks as i64) - Duration::days(1),
            week_start,
        })
    }

    pub fn first_week(&self) -> NaiveDate {
        self.week_start.week_of(self.start)
    }

    pub fn n_weeks(&self) -> usize {
        let last = self.week_start.week_of(self.end);
        ((last - self.first_week()).num_days() / 7 + 1) as usize
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        date >= self.start && date <= self.end
    }

    /// Ordinal of the week containing `date`, if the date is inside the window.
    pub fn week_index(&self, date: NaiveDate) -> Option<usize> {
        if !self.contains(date) {
            return None;
        }
        Some(((self.week_start.week_of(date) - self.first_week()).num_days() / 7) as usize)
    }

    pub fn week_start_date(&self, index: usize) -> NaiveDate {
        self.first_week() + Duration::weeks(index as i64)
    }

    /// Same window, ending no later than `cutoff`.
    pub fn truncated(&self, cutoff: NaiveDate) -> Result<Self> {
        if cutoff < self.start {
            return Err(Error::config("cutoff_date", format!("{cutoff} precedes window start {}", self.start)));
        }
        Ok(StudyWindow {
            end: self.end.min(cutoff),
            ..*self
        })
    }
}

/// Canonical form of a raw modality string: lowercase, `-`/`_` as spaces,
/// whitespace collapsed.
pub fn normalize_key(raw: &str) -> String {
    raw.to_lowercase()
        .replace(['-', '_'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn default_normalization() -> BTreeMap<String, Modality> {
    use Modality::*;
    [
        ("remote", Remote),
        ("full remote", Remote),
        ("fully remote", Remote),
        ("full time remote", Remote),
        ("distance learning", Remote),
        ("virtual", Remote),
        ("online", Remote),
        ("closed", Remote),
        ("hybrid", Hybrid),
        ("partial", Hybrid),
        ("blended", Hybrid),
        ("in person", InPerson),
        ("inperson", InPerson),
        ("full in person", InPerson),
        ("fully in person", InPerson),
        ("full time in person", InPerson),
        ("open", InPerson),
        ("traditional", InPerson),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn default_sources() -> Vec<String> {
    REFERENCE_SOURCES.iter().map(|s| s.to_string()).collect()
}

fn default_keywords() -> Vec<String> {
    ["online", "cyber", "distance", "remote", "virtual", "digital"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn default_agency_types() -> Vec<i64> {
    vec![1, 2, 7]
}

fn default_statuses() -> Vec<i64> {
    vec![1, 3, 4, 5, 8]
}

/// Eligibility rules applied to district metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EligibilityRules {
    #[serde(default = "default_agency_types")]
    pub agency_types: Vec<i64>,
    #[serde(default = "default_statuses")]
    pub operating_statuses: Vec<i64>,
    #[serde(default = "default_keywords")]
    pub exclusion_keywords: Vec<String>,
}

impl Default for EligibilityRules {
    fn default() -> Self {
        EligibilityRules {
            agency_types: default_agency_types(),
            operating_statuses: default_statuses(),
            exclusion_keywords: default_keywords(),
        }
    }
}

/// Everything the ingestion stage needs besides the input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub window: StudyWindow,
    /// Source names in emission-channel order.
    #[serde(default = "default_sources")]
    pub sources: Vec<String>,
    /// Raw modality strings (compared after [`normalize_key`]) to categories.
    #[serde(default = "default_normalization")]
    pub normalization: BTreeMap<String, Modality>,
    #[serde(default)]
    pub eligibility: EligibilityRules,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window: StudyWindow::default(),
            sources: default_sources(),
            normalization: default_normalization(),
            eligibility: EligibilityRules::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::config("sources", "at least one source is required"));
        }
        for (i, s) in self.sources.iter().enumerate() {
            if s.trim().is_empty() {
                return Err(Error::config("sources", format!("entry {i} is empty")));
            }
            if self.sources[..i].contains(s) {
                return Err(Error::config("sources", format!("duplicate source `{s}`")));
            }
        }
        if self.window.end < self.window.start {
            return Err(Error::config("window", "end precedes start"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::config("pipeline config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn normalize_modality(&self, raw: &str) -> Option<Modality> {
        let key = normalize_key(raw);
        self.normalization
            .get(&key)
            .copied()
            .or_else(|| self.normalization.iter().find(|(k, _)| normalize_key(k) == key).map(|(_, v)| *v))
    }

    pub fn source_index(&self, name: &str) -> Option<usize> {
        self.sources.iter().position(|s| s == name)
    }
}
