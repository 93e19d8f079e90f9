//! Run records, result tables and plot-data emission.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A result table. Cells are formatted text so that CSV read-back is exact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Emitted as a plot series by [`emit_plot_data`].
    #[serde(default)]
    pub series: bool,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new(), series: false }
    }

    pub fn series(mut self) -> Self {
        self.series = true;
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width for table {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k].as_str()).collect())
    }

    pub fn write_csv(&self, path: &Path) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(name: impl Into<String>, path: &Path) -> anyhow::Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let columns = r.headers()?.iter().map(String::from).collect();
        let rows = r.records().map(|rec| rec.map(|x| x.iter().map(String::from).collect())).collect::<Result<_, _>>()?;
        Ok(Self { name: name.into(), columns, rows, series: false })
    }
}

/// Shortest round-trip formatting for table cells.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// An acceptance property evaluated by a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub config_hash: String,
    pub version: String,
    pub seeds: Vec<u64>,
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
    pub wall_clock_s: f64,
}

impl RunRecord {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Writes one CSV per table and a `run.json` sidecar holding everything
    /// else. Returns the written paths.
    pub fn write(&self, dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        for t in &self.tables {
            let p = dir.join(format!("{}.csv", t.name));
            t.write_csv(&p)?;
            out.push(p);
        }
        let meta = serde_json::json!({
            "experiment": self.experiment,
            "config_hash": self.config_hash,
            "version": self.version,
            "seeds": self.seeds,
            "tables": self.tables.iter().map(|t| format!("{}.csv", t.name)).collect::<Vec<_>>(),
            "checks": self.checks,
            "wall_clock_s": self.wall_clock_s,
        });
        let p = dir.join("run.json");
        fs::write(&p, serde_json::to_string_pretty(&meta)? + "\n")?;
        out.push(p);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlotManifest {
    pub config_hash: String,
    pub series: Vec<SeriesEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesEntry {
    pub name: String,
    pub file: String,
    pub columns: Vec<String>,
}

/// Writes each series table as `plot_<name>.csv` plus `plot_manifest.json`.
pub fn emit_plot_data(record: &RunRecord, dir: &Path) -> anyhow::Result<PlotManifest> {
    fs::create_dir_all(dir)?;
    let mut series = Vec::new();
    for t in record.tables.iter().filter(|t| t.series) {
        let file = format!("plot_{}.csv", t.name);
        t.write_csv(&dir.join(&file))?;
        series.push(SeriesEntry { name: t.name.clone(), file, columns: t.columns.clone() });
    }
    let manifest = PlotManifest { config_hash: record.config_hash.clone(), series };
    fs::write(dir.join("plot_manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Reads back the series listed in `plot_manifest.json`.
pub fn read_plot_data(dir: &Path) -> anyhow::Result<(PlotManifest, Vec<Table>)> {
    let manifest: PlotManifest = serde_json::from_slice(&fs::read(dir.join("plot_manifest.json"))?)?;
    let tables = manifest
        .series
        .iter()
        .map(|s| Table::read_csv(s.name.clone(), &dir.join(&s.file)).map(Table::series))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok((manifest, tables))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(tables: Vec<Table>) -> RunRecord {
        RunRecord {
            experiment: "x".into(),
            config_hash: "abc".into(),
            version: VERSION.into(),
            seeds: vec![1],
            tables,
            checks: vec![],
            wall_clock_s: 0.0,
        }
    }

    #[test]
    fn empty_report_gives_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = emit_plot_data(&record(vec![]), dir.path()).unwrap();
        assert!(m.series.is_empty());
        assert_eq!(read_plot_data(dir.path()).unwrap().0, m);
    }

    #[test]
    fn series_round_trip() {
        let mut t = Table::new("curve", &["v", "dv"]).series();
        t.push(vec![num(-70.0), num(0.1 + 0.2)]);
        t.push(vec![num(-60.0), num(1e-300)]);
        let mut hidden = Table::new("other", &["a"]);
        hidden.push(vec!["x,y".into()]);
        let dir = tempfile::tempdir().unwrap();
        let rec = record(vec![t.clone(), hidden]);
        let m = emit_plot_data(&rec, dir.path()).unwrap();
        assert_eq!(m.series.len(), 1);
        let (_, back) = read_plot_data(dir.path()).unwrap();
        assert_eq!(back, vec![t.clone()]);
        let v: f64 = back[0].rows[0][1].parse().unwrap();
        assert_eq!(v, 0.1 + 0.2);
        let written = rec.write(dir.path()).unwrap();
        assert_eq!(written.len(), 3);
        assert_eq!(Table::read_csv("other", &dir.path().join("other.csv")).unwrap(), rec.tables[1]);
    }
}
