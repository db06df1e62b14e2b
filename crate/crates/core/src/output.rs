//! CSV, JSON and plot-data writers for simulation results.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::MetricsReport;
use crate::controller::ErrorNorms;
use crate::ode::Integrator;
use crate::sim::SimTrace;
use crate::Scalar;

/// Per-agent signal columns, in CSV order.
pub const AGENT_COLUMNS: [&str; 5] = ["phi", "P_out", "psi", "P_hat", "phi_dot"];

/// Number of CSV columns for `n` agents.
pub fn csv_width(n: usize) -> usize {
    4 + AGENT_COLUMNS.len() * n + ErrorNorms::<f64>::FAMILIES.len() * n
}

pub fn csv_header(n: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "P_REF", "psi0", "P_FESMS"].map(String::from).to_vec();
    for i in 1..=n {
        h.extend(AGENT_COLUMNS.iter().map(|c| format!("{c}_{i}")));
    }
    for f in ErrorNorms::<f64>::FAMILIES {
        h.extend((1..=n).map(|i| format!("err_{f}_{i}")));
    }
    h
}

pub fn write_trace_csv<T: Scalar>(trace: &SimTrace<T>, path: &Path) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(csv_header(trace.n_agents))?;
    let mut row = Vec::with_capacity(csv_width(trace.n_agents));
    for k in 0..trace.len() {
        row.clear();
        row.extend([trace.times[k], trace.p_ref[k], trace.psi0[k], trace.p_fesms[k]]);
        for (i, a) in trace.agents.iter().enumerate() {
            row.extend([a.phi[k], a.p_out[k], trace.psi(i, k), a.p_hat[k], a.phi_dot[k]]);
        }
        for f in 0..ErrorNorms::<T>::FAMILIES.len() {
            row.extend(trace.agents.iter().map(|a| a.errors[k].as_array()[f]));
        }
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Run configuration echoed at the top of the metrics file.
#[derive(Debug, Clone, Serialize)]
pub struct RunHeader {
    pub scenario: String,
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
    pub integrator: Integrator,
    pub alpha0: f64,
    pub beta0: f64,
}

#[derive(Serialize)]
struct MetricsFile<'a, T> {
    config: &'a RunHeader,
    metrics: &'a MetricsReport<T>,
}

pub fn write_metrics_json<T: Scalar>(header: &RunHeader, report: &MetricsReport<T>, path: &Path) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(
        &mut w,
        &MetricsFile {
            config: header,
            metrics: report,
        },
    )?;
    writeln!(w)?;
    w.flush()
}

/// Writes one two-column `t value` file per plotted signal into `dir` and
/// returns the paths written.
pub fn write_plot_files<T: Scalar>(
    trace: &SimTrace<T>,
    report: &MetricsReport<T>,
    dir: &Path,
) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut emit = |name: String, values: &mut dyn Iterator<Item = T>| -> io::Result<()> {
        let path = dir.join(format!("{name}.dat"));
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "# t {name}")?;
        for (t, v) in trace.times.iter().zip(values) {
            writeln!(w, "{t} {v}")?;
        }
        w.flush()?;
        written.push(path);
        Ok(())
    };
    emit("p_ref".into(), &mut trace.p_ref.iter().copied())?;
    emit("p_fesms".into(), &mut trace.p_fesms.iter().copied())?;
    emit("psi0".into(), &mut trace.psi0.iter().copied())?;
    emit(
        "tracking_error".into(),
        &mut report.tracking_error.series.iter().copied(),
    )?;
    emit("soe_spread".into(), &mut report.soe_spread.series.iter().copied())?;
    for (i, a) in trace.agents.iter().enumerate() {
        let i = i + 1;
        emit(format!("phi_{i}"), &mut a.phi.iter().copied())?;
        emit(format!("p_out_{i}"), &mut a.p_out.iter().copied())?;
    }
    for fam in &report.error_families {
        emit(format!("err_{}", fam.name), &mut fam.series.iter().copied())?;
    }
    Ok(written)
}
