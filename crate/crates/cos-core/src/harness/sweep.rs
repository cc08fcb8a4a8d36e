//! Hyperparameter sweep: (iterations, questions-per-iteration) pairs crossed
//! with the Chain-of-Draft toggle. Cells are independent; completed cells are
//! recognized by their report fingerprint and skipped on re-invocation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    build_context, io_err, run_experiment, ExperimentConfig, HarnessError, Method, MetricReport,
};
use crate::ser::round6;

/// The sweep grid: `pairs` are zipped (iterations, questions per iteration)
/// configurations; every pair runs once per Chain-of-Draft setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub pairs: Vec<(u32, usize)>,
    pub cod: Vec<bool>,
}

impl SweepGrid {
    /// Builds a grid from equal-length `i` and `iq` lists plus a CoD list.
    pub fn zip(i_values: &[u32], iq_values: &[usize], cod: &[bool]) -> Result<Self, HarnessError> {
        if i_values.is_empty() || iq_values.is_empty() {
            return Err(HarnessError::Config("sweep grid is empty".into()));
        }
        if i_values.len() != iq_values.len() {
            return Err(HarnessError::Config(format!(
                "i and iq lists must pair up ({} vs {} values)",
                i_values.len(),
                iq_values.len()
            )));
        }
        let mut cod = cod.to_vec();
        if cod.is_empty() {
            cod.push(false);
        }
        cod.dedup();
        Ok(Self {
            pairs: i_values
                .iter()
                .copied()
                .zip(iq_values.iter().copied())
                .collect(),
            cod,
        })
    }

    pub fn cells(&self) -> Vec<SweepCell> {
        let mut cells = Vec::new();
        for &(iterations, questions) in &self.pairs {
            for &cod in &self.cod {
                cells.push(SweepCell {
                    iterations,
                    questions_per_iteration: questions,
                    cod,
                });
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepCell {
    pub iterations: u32,
    pub questions_per_iteration: usize,
    pub cod: bool,
}

impl std::fmt::Display for SweepCell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "i={} iq={} cod={}",
            self.iterations,
            self.questions_per_iteration,
            if self.cod { "on" } else { "off" }
        )
    }
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub reports: Vec<MetricReport>,
    /// Cells found already complete and skipped.
    pub resumed_cells: usize,
    pub failed_cells: Vec<(SweepCell, String)>,
    pub summary_path: PathBuf,
}

fn cell_config(base: &ExperimentConfig, cell: &SweepCell) -> ExperimentConfig {
    let mut config = base.clone();
    config.chain.iterations_i = cell.iterations;
    config.chain.questions_per_iteration_iq = cell.questions_per_iteration;
    config.chain.cod_enabled = cell.cod;
    config
}

/// Runs every grid cell, one report per cell, and writes a combined
/// comparison table. Per-cell failures are isolated; completed cells are
/// skipped via their fingerprinted report file.
pub async fn run_sweep(
    base: &ExperimentConfig,
    base_dir: &Path,
    grid: &SweepGrid,
) -> Result<SweepOutcome, HarnessError> {
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(HarnessError::Config("sweep grid is empty".into()));
    }

    let mut reports = Vec::new();
    let mut resumed_cells = 0;
    let mut failed_cells = Vec::new();
    let mut summary_rows: Vec<String> = Vec::new();

    for cell in &cells {
        let config = cell_config(base, cell);
        // A fresh context per cell: scripted providers reload their script
        // so cells stay independent and resumable.
        let ctx = build_context(&config, base_dir)?;
        let report_path = ctx
            .output_root
            .join("reports")
            .join(MetricReport::report_file_name(&ctx.fingerprint));

        let report = if report_path.exists() {
            resumed_cells += 1;
            tracing::info!(cell = %cell, "cell already complete; skipping");
            MetricReport::load(&report_path)?
        } else {
            match run_experiment(&config, &ctx).await {
                Ok(report) => report,
                Err(e) => {
                    tracing::warn!(cell = %cell, error = %e, "sweep cell failed");
                    failed_cells.push((*cell, e.to_string()));
                    summary_rows.push(format!("{cell}\tFAILED\t{e}"));
                    continue;
                }
            }
        };

        let cos = report.aggregates.get(&Method::ChainOfSummaries);
        summary_rows.push(format!(
            "{cell}\tmemorization={}\tgeneralization={}\trecords<={}",
            cos.and_then(|a| a.memorization)
                .map(|m| round6(m).to_string())
                .unwrap_or_else(|| "-".into()),
            cos.map(|a| round6(a.generalization).to_string())
                .unwrap_or_else(|| "-".into()),
            cell.iterations + 1,
        ));
        reports.push(report);
    }

    let summary_path = {
        let output_root = super::ExperimentConfig::resolve(base_dir, &base.output_root);
        std::fs::create_dir_all(&output_root).map_err(|e| io_err(&output_root, e))?;
        let path = output_root.join("sweep-summary.txt");
        let mut body = String::from("cell\tresults\n");
        for row in &summary_rows {
            body.push_str(row);
            body.push('\n');
        }
        std::fs::write(&path, body).map_err(|e| io_err(&path, e))?;
        path
    };

    Ok(SweepOutcome {
        reports,
        resumed_cells,
        failed_cells,
        summary_path,
    })
}
