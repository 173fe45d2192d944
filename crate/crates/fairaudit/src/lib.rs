//! File formats, audit orchestration, report emission and the command-line
//! interface around `fairaudit-core`.
//!
//! - [`io`]: embedding (binary and CSV), annotation, pair, annotator and
//!   coordinate files.
//! - [`audit`]: runs every metric stage and assembles an [`AuditReport`].
//! - [`report`]: the report model and its JSON, CSV and Markdown forms.
//! - [`replay`]: disparity annotations re-derived from published aggregates.
//! - [`figure`]: SVG scatter plots of projections.
//! - [`cli`]: the `fairaudit` command.
#![forbid(unsafe_code)]

pub mod audit;
pub mod cli;
mod error;
pub mod figure;
pub mod io;
pub mod losscheck;
pub mod replay;
pub mod report;

pub use audit::{run_audit, AuditConfig, AuditInputs, SectionKind};
pub use error::{Error, Result};
pub use report::{emit, AuditReport, OutputFormat};
