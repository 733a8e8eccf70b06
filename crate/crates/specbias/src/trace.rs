//! Training-trace export: one CSV row per iteration plus a JSON sidecar.

use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use specbias_core::precond::TrainTrace;

use crate::output::{write_table, Cell, Table};

pub fn trace_table(trace: &TrainTrace) -> Table {
    let mut header = vec!["iter".to_string(), "residual_norm".to_string()];
    header.extend((1..=trace.tracked).map(|j| format!("proj_{j}")));
    let mut table = Table::new(header);
    for (t, rn) in trace.residual_norms.iter().enumerate() {
        let mut row: Vec<Cell> = vec![t.into(), (*rn).into()];
        if let Some(p) = trace.projections.get(t) {
            row.extend(p.iter().map(|&v| Cell::from(v)));
        }
        table.push(row);
    }
    table
}

#[derive(Debug, Serialize)]
pub struct TraceMetadata<'a> {
    pub seed: u64,
    pub eta0: f64,
    pub epsilon: f64,
    pub iterations_to_threshold: Option<usize>,
    /// Eigenvalues of `K₀`, descending.
    pub k0_spectrum: &'a [f64],
    /// Eigenvalues of `K₀S` paired with the eigenvectors of `K₀`.
    pub ks_spectrum: &'a [f64],
}

pub fn write_trace<C: Serialize>(
    dir: &Path,
    command: &str,
    trace: &TrainTrace,
    config: &C,
    metadata: TraceMetadata<'_>,
) -> io::Result<(PathBuf, PathBuf)> {
    write_table(dir, "trace", command, &trace_table(trace), config, metadata)
}
