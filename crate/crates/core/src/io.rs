//! Plain CSV input and output.
//!
//! Every table is a block of `#` comment lines, a header and numeric rows.
//! Numbers are written in Rust's shortest round-trip form, so reading a
//! file and writing it back reproduces it byte for byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::asymptotics::BandResult;
use crate::error::{Error, Result};
use crate::estimator::{survival_from_biased, FitResult};
use crate::mass::MassFunction;
use crate::simulate::{CohortRecord, SimRecord};

pub const COHORT_HEADER: [&str; 3] = ["a", "v", "delta"];
pub const SIM_HEADER: [&str; 5] = ["a", "r", "c", "v", "delta"];
pub const MASS_HEADER: [&str; 2] = ["t", "mass"];
pub const FIT_HEADER: [&str; 4] = ["t", "mass_G", "G", "S_U"];
pub const BAND_HEADER: [&str; 8] = ["t", "G", "se", "lo_G", "hi_G", "S_U", "lo_S", "hi_S"];

/// A numeric CSV table with leading comment lines.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), ..Self::default() }
    }

    pub fn with_comment(mut self, comment: impl Into<String>) -> Self {
        self.comments.push(comment.into());
        self
    }

    /// The `seed=` comment, if any.
    pub fn seed(&self) -> Option<u64> {
        self.comments.iter().find_map(|c| c.trim().strip_prefix("seed=")?.parse().ok())
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidInput(format!("missing column `{name}`")))?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    fn expect_header(&self, expected: &[&str]) -> Result<()> {
        if self.header.iter().map(String::as_str).eq(expected.iter().copied()) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("expected header `{}`, found `{}`", expected.join(","), self.header.join(","))))
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut comments = Vec::new();
        let mut body_start = 0;
        for line in text.split_inclusive('\n') {
            match line.strip_prefix('#') {
                Some(c) => {
                    comments.push(c.trim_end_matches(['\n', '\r']).trim_start().to_string());
                    body_start += line.len();
                }
                None => break,
            }
        }
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text[body_start..].as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| Error::InvalidInput(format!("not a number: `{f}`"))))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(Self { comments, header, rows })
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut out = String::new();
        for c in &self.comments {
            out.push_str("# ");
            out.push_str(c);
            out.push('\n');
        }
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(&self.header)?;
        for row in &self.rows {
            writer.write_record(row.iter().map(|x| x.to_string()))?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        out.push_str(std::str::from_utf8(&bytes).expect("csv output is utf-8"));
        Ok(out)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = fs::File::create(path)?;
        file.write_all(self.to_csv_string()?.as_bytes())?;
        Ok(())
    }
}

fn flag(x: f64) -> Result<bool> {
    match x {
        0.0 => Ok(false),
        1.0 => Ok(true),
        _ => Err(Error::InvalidInput(format!("delta must be 0 or 1, got {x}"))),
    }
}

fn bit(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

pub fn cohort_table(records: &[CohortRecord<f64>]) -> Table {
    let mut t = Table::new(&COHORT_HEADER);
    t.rows = records.iter().map(|r| vec![r.a, r.v, bit(r.delta)]).collect();
    t
}

pub fn sim_table(records: &[SimRecord]) -> Table {
    let mut t = Table::new(&SIM_HEADER);
    t.rows = records.iter().map(|r| vec![r.a, r.r, r.c, r.v, bit(r.delta)]).collect();
    t
}

/// Read `a,v,delta` (or the extended simulation layout).
pub fn cohort_from_table(table: &Table) -> Result<Vec<CohortRecord<f64>>> {
    if table.header.len() == SIM_HEADER.len() {
        table.expect_header(&SIM_HEADER)?;
        return table.rows.iter().map(|r| Ok(CohortRecord { a: r[0], v: r[3], delta: flag(r[4])? })).collect();
    }
    table.expect_header(&COHORT_HEADER)?;
    table.rows.iter().map(|r| Ok(CohortRecord { a: r[0], v: r[1], delta: flag(r[2])? })).collect()
}

pub fn read_cohort(path: impl AsRef<Path>) -> Result<Vec<CohortRecord<f64>>> {
    cohort_from_table(&Table::read(path)?)
}

pub fn mass_table(g: &MassFunction<f64>) -> Table {
    let mut t = Table::new(&MASS_HEADER);
    t.rows = g.support().iter().zip(g.masses()).map(|(&x, &w)| vec![x, w]).collect();
    t
}

/// Fit output: mass of `Ĝ`, `Ĝ` and the unbiased survivor `Ŝ_U` at each support point.
pub fn fit_table(fit: &FitResult<f64>) -> Table {
    let s = survival_from_biased(&fit.ghat);
    let mut t = Table::new(&FIT_HEADER);
    t.rows = fit
        .ghat
        .support()
        .iter()
        .zip(fit.ghat.masses())
        .map(|(&x, &w)| vec![x, w, fit.ghat.cdf(x), s.eval(x)])
        .collect();
    t
}

/// `Ĝ` from a `t,mass` or `t,mass_G,...` table.
pub fn mass_from_table(table: &Table) -> Result<MassFunction<f64>> {
    let masses = match table.header.get(1).map(String::as_str) {
        Some("mass") | Some("mass_G") => table.column(&table.header[1])?,
        _ => return Err(Error::InvalidInput("expected a `t,mass` or `t,mass_G,...` table".into())),
    };
    MassFunction::new(table.column("t")?, masses)
}

pub fn band_table(band: &BandResult) -> Table {
    let mut t = Table::new(&BAND_HEADER);
    t.rows = (0..band.grid.len())
        .map(|j| {
            vec![band.grid[j], band.g[j], band.se[j], band.lo_g[j], band.hi_g[j], band.s_u[j], band.lo_s[j], band.hi_s[j]]
        })
        .collect();
    t
}
