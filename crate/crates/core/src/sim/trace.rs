//! Trace recording and export.
//!
//! Every run records the same fixed column set; quantities whose block is
//! disabled in the scenario are written as NaN. Floating-point values are
//! exported with shortest round-trip formatting, so a reader recovers the
//! exact doubles.

use std::io::{self, Write};
use std::path::Path;

use super::{Scenario, Summary};

/// Number of trace columns.
pub const N_COLUMNS: usize = 73;

/// Column names, in file order. The `xchk_*` columns carry the directly
/// integrated error equations (validation runs only); `xchk_a*` uses the
/// same stacked slot layout as `thhat*` after the two flux-error slots.
pub const COLUMN_NAMES: [&str; N_COLUMNS] = [
    "t", "lambda1", "lambda2", "q", "p", "i1", "i2", "u1", "u2", "im1", "im2", "um1", "um2",
    "xi1_1", "xi1_2", "xi2_1", "xi2_2", "xi3_1", "xi3_2", "xi3_3", "xi4_1", "xi4_2", "xi5",
    "xi6_1", "xi6_2", "xi7_1", "xi7_2", "xi8_1", "xi8_2", "xi8_3", "xi9",
    "y", "phil1", "phil2", "phith1", "phith2", "phith3", "phith4", "phith5", "phith6", "phith7",
    "phith8",
    "lamhat_r1", "lamhat_r2", "lamhat_a1", "lamhat_a2",
    "thhat1", "thhat2", "thhat3", "thhat4", "thhat5", "thhat6", "thhat7", "thhat8",
    "lamhat_pebo1", "lamhat_pebo2",
    "err_robust", "err_adaptive", "err_theta", "w_resid", "regr_resid",
    "xchk_r1", "xchk_r2",
    "xchk_a1", "xchk_a2", "xchk_a3", "xchk_a4", "xchk_a5", "xchk_a6", "xchk_a7", "xchk_a8",
    "xchk_a9", "xchk_a10",
];

/// Uniformly decimated record of one run.
#[derive(Clone, Debug)]
pub struct Trace {
    /// Sample spacing [s] (`h · decimation`).
    pub dt: f64,
    rows: Vec<[f64; N_COLUMNS]>,
}

impl Trace {
    pub(super) fn with_capacity(dt: f64, cap: usize) -> Self {
        Self { dt, rows: Vec::with_capacity(cap) }
    }

    pub(super) fn push(&mut self, row: [f64; N_COLUMNS]) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[[f64; N_COLUMNS]] {
        &self.rows
    }

    pub fn column_index(name: &str) -> Option<usize> {
        COLUMN_NAMES.iter().position(|c| *c == name)
    }

    /// One column as a vector.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = Self::column_index(name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    /// Times of the stored samples.
    pub fn times(&self) -> Vec<f64> {
        self.column("t").unwrap()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", COLUMN_NAMES.join(","))?;
        let mut line = String::with_capacity(N_COLUMNS * 24);
        for row in &self.rows {
            line.clear();
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{v}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> io::Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(io::BufWriter::new(f))
    }
}

/// Sidecar metadata: the scenario echo plus the software version.
pub fn write_metadata<W: Write>(mut w: W, scn: &Scenario) -> io::Result<()> {
    #[derive(serde::Serialize)]
    struct Metadata<'a> {
        software: String,
        scenario: &'a Scenario,
    }
    let meta = Metadata {
        software: format!("fluxobs {}", env!("CARGO_PKG_VERSION")),
        scenario: scn,
    };
    let text = toml::to_string_pretty(&meta)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    w.write_all(text.as_bytes())
}

/// Parse a metadata file back into its scenario echo.
pub fn scenario_from_metadata(text: &str) -> Result<Scenario, toml::de::Error> {
    #[derive(serde::Deserialize)]
    struct Metadata {
        #[allow(dead_code)]
        software: Option<String>,
        scenario: Scenario,
    }
    toml::from_str::<Metadata>(text).map(|m| m.scenario)
}

/// Key-value summary file.
pub fn write_summary<W: Write>(mut w: W, summary: &Summary) -> io::Result<()> {
    for (k, v) in summary.entries() {
        writeln!(w, "{k} = {v}")?;
    }
    Ok(())
}
