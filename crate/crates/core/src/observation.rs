use chrono::{Datelike, Duration, NaiveDate};

use crate::error::{Error, Result};
use crate::model::{Modality, NUM_STATES};

/// One source's report for one week, `None` when the source is silent.
pub type Cell = Option<Modality>;

/// ISO-8601 year and week number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WeekIndex {
    pub iso_year: i32,
    pub iso_week: u32,
}

impl WeekIndex {
    pub fn of(date: NaiveDate) -> WeekIndex {
        let w = date.iso_week();
        WeekIndex {
            iso_year: w.year(),
            iso_week: w.week(),
        }
    }
}

/// One entity's week-by-source grid of reports.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSequence {
    entity_id: String,
    start: NaiveDate,
    n_channels: usize,
    grid: Vec<Cell>,
}

impl ObservationSequence {
    /// `grid` is row-major: week `t`, channel `c` lives at `t * n_channels + c`.
    pub fn new(
        entity_id: impl Into<String>,
        start: NaiveDate,
        n_channels: usize,
        grid: Vec<Cell>,
    ) -> Result<Self> {
        if n_channels == 0 {
            return Err(Error::invalid("observation grid needs at least one channel"));
        }
        if grid.is_empty() || grid.len() % n_channels != 0 {
            return Err(Error::invalid(format!(
                "grid of {} cells is not a positive multiple of {n_channels} channels",
                grid.len()
            )));
        }
        Ok(ObservationSequence {
            entity_id: entity_id.into(),
            start,
            n_channels,
            grid,
        })
    }

    /// Build from integer category codes, `None` marking a missing report.
    pub fn from_codes(
        entity_id: impl Into<String>,
        start: NaiveDate,
        rows: &[Vec<Option<u8>>],
    ) -> Result<Self> {
        let n_channels = rows.first().map_or(0, |r| r.len());
        let mut grid = Vec::with_capacity(rows.len() * n_channels);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != n_channels {
                return Err(Error::invalid(format!(
                    "week {t} has {} cells, expected {n_channels}",
                    row.len()
                )));
            }
            for code in row {
                grid.push(match code {
                    None => None,
                    Some(k) => Some(Modality::from_index(*k as usize).ok_or_else(|| {
                        Error::invalid(format!(
                            "week {t}: category {k} outside 0..{NUM_STATES}"
                        ))
                    })?),
                });
            }
        }
        ObservationSequence::new(entity_id, start, n_channels, grid)
    }

    /// A sequence with every cell missing.
    pub fn empty(entity_id: impl Into<String>, start: NaiveDate, n_weeks: usize, n_channels: usize) -> Result<Self> {
        ObservationSequence::new(entity_id, start, n_channels, vec![None; n_weeks * n_channels])
    }

    pub fn entity_id(&self) -> &str {
        &self.entity_id
    }

    /// Start date of the first week.
    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn start_week(&self) -> WeekIndex {
        WeekIndex::of(self.start)
    }

    pub fn week_start(&self, t: usize) -> NaiveDate {
        self.start + Duration::weeks(t as i64)
    }

    pub fn len(&self) -> usize {
        self.grid.len() / self.n_channels
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn row(&self, t: usize) -> &[Cell] {
        &self.grid[t * self.n_channels..(t + 1) * self.n_channels]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Cell]> {
        self.grid.chunks(self.n_channels)
    }

    pub fn set(&mut self, t: usize, channel: usize, value: Cell) {
        self.grid[t * self.n_channels + channel] = value;
    }

    pub fn observed_count(&self) -> usize {
        self.grid.iter().filter(|c| c.is_some()).count()
    }

    pub fn channel_observed_count(&self, channel: usize) -> usize {
        self.rows().filter(|r| r[channel].is_some()).count()
    }

    /// Keep only the first `n_weeks` weeks.
    pub fn truncated(&self, n_weeks: usize) -> Result<Self> {
        let n = n_weeks.min(self.len());
        ObservationSequence::new(
            self.entity_id.clone(),
            self.start,
            self.n_channels,
            self.grid[..n * self.n_channels].to_vec(),
        )
    }
}
