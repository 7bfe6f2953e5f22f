//! File formats.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use fascicle_core::ergodics::{DensityEstimate, PalmEstimate};
use fascicle_core::geometry::{GeometryModel, Realization};
use fascicle_core::micro_reference::ConvergenceReport;
use fascicle_core::{EffectiveLawTable, TimeSeries};

type Result<T> = std::io::Result<T>;

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(std::io::Error::other)
}

fn finish(mut w: csv::Writer<File>) -> Result<()> {
    w.flush()
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_record<I: IntoIterator<Item = String>>(w: &mut csv::Writer<File>, row: I) -> Result<()> {
    w.write_record(row).map_err(std::io::Error::other)
}

/// Realization as JSON with 17 significant digits.
pub fn write_realization(path: &Path, real: &Realization) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let r = &real.window;
    writeln!(w, "{{")?;
    writeln!(w, "  \"window\": {{\"x0\": {}, \"y0\": {}, \"x1\": {}, \"y1\": {}}},", num(r.x0), num(r.y0), num(r.x1), num(r.y1))?;
    writeln!(w, "  \"global_shift\": [{}, {}],", num(real.global_shift[0]), num(real.global_shift[1]))?;
    writeln!(w, "  \"seed\": {},", real.seed)?;
    writeln!(w, "  \"disks\": [")?;
    for (i, d) in real.disks.iter().enumerate() {
        let sep = if i + 1 == real.disks.len() { "" } else { "," };
        writeln!(
            w,
            "    {{\"cx\": {}, \"cy\": {}, \"r\": {}, \"class\": {}}}{sep}",
            num(d.center[0]),
            num(d.center[1]),
            num(d.radius),
            d.class
        )?;
    }
    writeln!(w, "  ]")?;
    writeln!(w, "}}")?;
    w.flush()
}

pub fn write_densities(path: &Path, model: &GeometryModel, lambda: &DensityEstimate, mu: &PalmEstimate) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_record(&mut w, ["class", "r", "p", "lambda_hat", "lambda_se", "mu_hat", "mu_se"].map(String::from))?;
    for (k, c) in model.classes.iter().enumerate() {
        write_record(
            &mut w,
            [
                (k + 1).to_string(),
                c.radius.to_string(),
                c.probability.to_string(),
                lambda.lambda_by_class[k].to_string(),
                lambda.std_error[k].to_string(),
                mu.mu_by_class[k].to_string(),
                mu.std_error[k].to_string(),
            ],
        )?;
    }
    let p_total: f64 = model.classes.iter().map(|c| c.probability).sum();
    write_record(
        &mut w,
        [
            "TOTAL".to_string(),
            String::new(),
            p_total.to_string(),
            lambda.lambda_total.to_string(),
            lambda.total_std_error.to_string(),
            mu.mu_total.to_string(),
            mu.total_std_error.to_string(),
        ],
    )?;
    finish(w)
}

/// One row of an identity check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub check: String,
    pub index: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub difference: f64,
    pub combined_se: f64,
    pub pass: bool,
}

pub fn write_checks(path: &Path, rows: &[CheckRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_record(&mut w, ["check", "index", "lhs", "rhs", "difference", "combined_se", "pass"].map(String::from))?;
    for r in rows {
        write_record(
            &mut w,
            [
                r.check.clone(),
                r.index.to_string(),
                r.lhs.to_string(),
                r.rhs.to_string(),
                r.difference.to_string(),
                r.combined_se.to_string(),
                r.pass.to_string(),
            ],
        )?;
    }
    finish(w)
}

pub const TABLE_HEADER: [&str; 8] = ["xi1", "xit", "phi", "sigma_long", "sigma_trans", "phi_sd", "sigma_long_sd", "sigma_trans_sd"];

pub fn write_table(csv_path: &Path, json_path: &Path, table: &EffectiveLawTable) -> Result<()> {
    let mut w = csv_writer(csv_path)?;
    write_record(&mut w, TABLE_HEADER.map(String::from))?;
    for (a, &x1) in table.xi1.iter().enumerate() {
        for (b, &xt) in table.xit.iter().enumerate() {
            let i = table.index(a, b);
            write_record(
                &mut w,
                [
                    x1,
                    xt,
                    table.phi[i],
                    table.sigma_long[i],
                    table.sigma_trans[i],
                    table.phi_sd[i],
                    table.sigma_long_sd[i],
                    table.sigma_trans_sd[i],
                ]
                .map(|v| v.to_string()),
            )?;
        }
    }
    finish(w)?;
    let text = serde_json::to_string_pretty(table).map_err(std::io::Error::other)?;
    std::fs::write(json_path, text + "\n")
}

/// Snapshot with columns `x1[, x2], u_e, v_k.., g_k.., u_ik..`.
pub fn write_snapshot(path: &Path, series: &TimeSeries, index: usize, two_d: bool) -> Result<()> {
    let s = &series.snapshots[index];
    let k = s.n_classes();
    let mut w = csv_writer(path)?;
    let mut header = vec!["x1".to_string()];
    if two_d {
        header.push("x2".into());
    }
    header.push("u_e".into());
    header.extend((1..=k).map(|c| format!("v_{c}")));
    header.extend((1..=k).map(|c| format!("g_{c}")));
    header.extend((1..=k).map(|c| format!("u_i{c}")));
    write_record(&mut w, header)?;
    let ny = series.x2.len().max(1);
    for p in 0..s.u_e.len() {
        let mut row = vec![series.x1[p / ny].to_string()];
        if two_d {
            row.push(series.x2[p % ny].to_string());
        }
        row.push(s.u_e[p].to_string());
        row.extend(s.v.iter().map(|v| v[p].to_string()));
        row.extend(s.g.iter().map(|g| g[p].to_string()));
        row.extend(s.v.iter().map(|v| (v[p] + s.u_e[p]).to_string()));
        write_record(&mut w, row)?;
    }
    finish(w)
}

pub fn write_convergence(path: &Path, report: &ConvergenceReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_record(&mut w, ["epsilon", "realizations", "mean_energy", "reference", "mean_gap", "gap_sd"].map(String::from))?;
    for r in &report.rows {
        write_record(
            &mut w,
            [
                r.epsilon.to_string(),
                r.realizations.to_string(),
                r.mean_energy.to_string(),
                report.reference.to_string(),
                r.mean_gap.to_string(),
                r.gap_sd.to_string(),
            ],
        )?;
    }
    finish(w)
}
