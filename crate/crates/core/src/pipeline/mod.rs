//! Ingestion: metadata eligibility, weekly aggregation of dated reports and
//! construction of per-district observation grids.

pub mod config;
pub mod districts;
pub mod reports;
pub mod sequences;

pub use config::{EligibilityRules, PipelineConfig, StudyWindow, WeekStart};
pub use districts::{filter_eligible, load_metadata, read_metadata, write_metadata, DistrictRecord, Eligibility, Exclusion, ExclusionReason, MetadataLoad};
pub use reports::{aggregate_to_weeks, load_reports, read_reports, write_reports, CellKey, RawReport, WeeklyCells};
pub use sequences::{build_sequences, coverage_summary, CoverageSummary, SequenceBuild, SourceCoverage};
