//! CSV time series.
//!
//! Yang-Mills columns: `step, t, dt, energy, sup_f, grad_inf, conc_r<k>...,
//! harmonic_dev, tracefree_l2, chern_drift, dissipation`. The radius of
//! column `conc_r<k>` is listed in the run summary. HYM columns: `step, t,
//! dt, energy, min_eig_H, det_h_drift, trace_identity_residual,
//! tracefree_l2, lambda, balance_inf`. Floats are written in shortest
//! round-trip exponent form, so a series is a pure function of the run.

use std::fs::File;
use std::path::Path;

use crate::error::Result;
use crate::hym::HymRecord;
use crate::monitors::MonitorRecord;

pub fn ym_header(radii: usize) -> Vec<String> {
    let mut h: Vec<String> = ["step", "t", "dt", "energy", "sup_f", "grad_inf"].map(String::from).to_vec();
    h.extend((0..radii).map(|k| format!("conc_r{k}")));
    h.extend(["harmonic_dev", "tracefree_l2", "chern_drift", "dissipation"].map(String::from));
    h
}

pub const HYM_HEADER: [&str; 10] = [
    "step",
    "t",
    "dt",
    "energy",
    "min_eig_H",
    "det_h_drift",
    "trace_identity_residual",
    "tracefree_l2",
    "lambda",
    "balance_inf",
];

fn num(v: f64) -> String {
    format!("{v:e}")
}

pub fn ym_row(r: &MonitorRecord) -> Vec<String> {
    let mut row = vec![r.step.to_string(), num(r.t), num(r.dt), num(r.energy), num(r.sup_f), num(r.grad_inf)];
    row.extend(r.profile.iter().map(|&v| num(v)));
    row.extend([r.harmonic_deviation, r.tracefree_l2, r.chern_drift, r.dissipation].map(num));
    row
}

pub fn hym_row(r: &HymRecord) -> Vec<String> {
    let mut row = vec![r.step.to_string()];
    row.extend(
        [
            r.t,
            r.dt,
            r.energy,
            r.min_eig,
            r.det_h_drift,
            r.trace_identity_residual,
            r.tracefree_l2,
            r.lambda,
            r.balance_inf,
        ]
        .map(num),
    );
    row
}

pub struct SeriesWriter {
    inner: csv::Writer<File>,
    rows: u64,
}

impl SeriesWriter {
    pub fn create(path: &Path, header: &[String]) -> Result<Self> {
        let mut inner = csv::Writer::from_path(path)?;
        inner.write_record(header)?;
        Ok(Self { inner, rows: 0 })
    }

    pub fn write(&mut self, row: &[String]) -> Result<()> {
        self.inner.write_record(row)?;
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Reads a series back as a header and rows of numbers.
pub fn read_series(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(rec.iter().map(|s| s.parse::<f64>().unwrap_or(f64::NAN)).collect());
    }
    Ok((header, rows))
}
