//! Artifact files: tables (CSV or JSON), event logs and manifests.
//!
//! Floats are written with 17 significant digits and no timestamps are
//! recorded, so identical configs and seeds reproduce byte-identical files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::metrics::{cluster_column, fmt_f64, write_metrics_csv, Event, MetricRow};

use super::alignment::{summarize as summarize_alignment, AlignmentRun};
use super::config::Config;
use super::study_a::{summarize as summarize_study_a, RunRecord};
use super::study_b::StudyBResult;

/// Table output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown format `{other}` (expected csv or json)"))),
        }
    }
}

/// Cell of a [`Table`].
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Null,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Text(x)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(x: Option<T>) -> Self {
        x.map_or(Cell::Null, Into::into)
    }
}

impl Cell {
    fn to_csv(&self) -> String {
        match self {
            Cell::Int(k) => k.to_string(),
            Cell::Float(x) => fmt_f64(*x),
            Cell::Text(s) => s.clone(),
            Cell::Null => String::new(),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Int(k) => json!(k),
            Cell::Float(x) if x.is_finite() => json!(x),
            Cell::Float(x) => json!(x.to_string()),
            Cell::Text(s) => json!(s),
            Cell::Null => Value::Null,
        }
    }
}

/// Rectangular table with named columns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write<W: Write>(&self, out: W, format: Format) -> Result<()> {
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(out);
                w.write_record(&self.header)?;
                for r in &self.rows {
                    w.write_record(r.iter().map(Cell::to_csv))?;
                }
                w.flush()?;
            }
            Format::Json => {
                let arr: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|r| {
                        let obj: Map<String, Value> =
                            self.header.iter().cloned().zip(r.iter().map(Cell::to_json)).collect();
                        Value::Object(obj)
                    })
                    .collect();
                let mut out = out;
                serde_json::to_writer_pretty(&mut out, &arr)?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

/// Metric rows (with policy columns) as a table.
pub fn metrics_table(rows: &[MetricRow], policies: Option<&[Vec<f64>]>) -> Table {
    let nc = rows.first().map_or(0, |r| r.cluster_masses.len());
    let size = policies.and_then(|p| p.first()).map(Vec::len);
    let mut t = Table::new(crate::metrics::metrics_header(size, nc));
    for (k, r) in rows.iter().enumerate() {
        let mut row: Vec<Cell> = vec![r.step.into()];
        if let Some(ps) = policies {
            row.extend(ps[k].iter().map(|&x| Cell::Float(x)));
        }
        row.push(r.entropy.into());
        row.push(r.fixation.into());
        row.extend(r.cluster_masses.iter().map(|&x| Cell::Float(x)));
        row.push(r.gini.into());
        row.push(r.incorrect_mass.into());
        row.push(r.objective_proxy.into());
        row.push(r.safety_margin.into());
        t.push(row);
    }
    t
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Tracks the files written into a study directory.
#[derive(Debug)]
pub struct ArtifactDir<'a> {
    pub root: &'a Path,
    pub format: Format,
    files: Vec<String>,
}

impl<'a> ArtifactDir<'a> {
    pub fn new(root: &'a Path, format: Format) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root,
            format,
            files: Vec::new(),
        })
    }

    /// Writes `table` as `{stem}.csv` or `{stem}.json`.
    pub fn table(&mut self, stem: &str, table: &Table) -> Result<()> {
        let name = format!("{stem}.{}", self.format.extension());
        let mut w = create(&self.root.join(&name))?;
        table.write(&mut w, self.format)?;
        w.flush()?;
        self.files.push(name);
        Ok(())
    }

    /// Writes a metric series; CSV output goes through
    /// [`write_metrics_csv`].
    pub fn metrics(&mut self, stem: &str, rows: &[MetricRow], policies: Option<&[Vec<f64>]>) -> Result<()> {
        match self.format {
            Format::Csv => {
                let name = format!("{stem}.csv");
                let mut w = create(&self.root.join(&name))?;
                write_metrics_csv(&mut w, rows, policies)?;
                w.flush()?;
                self.files.push(name);
                Ok(())
            }
            Format::Json => self.table(stem, &metrics_table(rows, policies)),
        }
    }

    /// Writes one JSON object per line.
    pub fn jsonl(&mut self, name: &str, records: &[Value]) -> Result<()> {
        let mut w = create(&self.root.join(name))?;
        for r in records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Writes a pretty-printed JSON document.
    pub fn json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = create(&self.root.join(name))?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(mut self, study: &str, cfg: &Config) -> Result<Manifest> {
        self.files.sort();
        let manifest = Manifest::new(study, cfg, self.files.clone());
        let mut w = create(&self.root.join(MANIFEST))?;
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(manifest)
    }
}

/// Manifest file name.
pub const MANIFEST: &str = "manifest.json";

/// Gini convention recorded in every manifest.
pub const GINI_CONVENTION: &str = "mean absolute difference over cluster masses renormalized to their own total; \
     1 when exactly one cluster is nonzero, 0 when all are zero";

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub schema_version: u32,
    pub study: String,
    pub gini_convention: String,
    pub config: Config,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(study: &str, cfg: &Config, files: Vec<String>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            schema_version: cfg.schema_version,
            study: study.to_string(),
            gini_convention: GINI_CONVENTION.to_string(),
            config: cfg.clone(),
            files,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

fn event_record(mut base: Map<String, Value>, e: &Event) -> Value {
    if let Value::Object(ev) = serde_json::to_value(e).expect("events serialize") {
        base.extend(ev);
    }
    Value::Object(base)
}

/// Study A artifacts: one metric CSV per run, `events.jsonl`, `summary` and
/// the manifest.
pub fn write_study_a(root: &Path, cfg: &Config, runs: &[RunRecord], format: Format) -> Result<Manifest> {
    let mut dir = ArtifactDir::new(root, format)?;
    let mut events = Vec::new();
    for r in runs {
        dir.metrics(&r.stem(), &r.rows, Some(&r.policies))?;
        for e in &r.events {
            let mut base = Map::new();
            base.insert("method".into(), json!(r.method.name()));
            base.insert("track".into(), json!(r.track.to_string()));
            base.insert("seed".into(), json!(r.seed));
            events.push(event_record(base, e));
        }
    }
    dir.jsonl("events.jsonl", &events)?;
    let summary = summarize_study_a(runs);
    let mut t = Table::new([
        "method",
        "track",
        "step",
        "seeds",
        "H_mean",
        "H_sd",
        "Fix_mean",
        "Fix_sd",
        "gini_mean",
        "gini_sd",
        "inc_mass_mean",
        "inc_mass_sd",
    ]);
    for s in summary {
        t.push(vec![
            s.method.into(),
            s.track.into(),
            s.step.into(),
            s.seeds.into(),
            s.entropy_mean.into(),
            s.entropy_sd.into(),
            s.fixation_mean.into(),
            s.fixation_sd.into(),
            s.gini_mean.into(),
            s.gini_sd.into(),
            s.incorrect_mass_mean.into(),
            s.incorrect_mass_sd.into(),
        ]);
    }
    dir.table("summary", &t)?;
    dir.finish("a", cfg)
}

/// Alignment artifacts: per-step alignment tables, procedural metric series,
/// `events.jsonl`, `alignment_summary.json` and the manifest.
pub fn write_alignment(root: &Path, cfg: &Config, runs: &[AlignmentRun], format: Format) -> Result<Manifest> {
    let mut dir = ArtifactDir::new(root, format)?;
    let mut events = Vec::new();
    for r in runs {
        let mut t = Table::new(["step", "cos_euclid", "cos_shah", "sign_agreement", "js_step"]);
        for a in &r.rows {
            t.push(vec![
                a.step.into(),
                a.cos_euclid.into(),
                a.cos_shah.into(),
                a.sign_agreement.into(),
                a.js_step.into(),
            ]);
        }
        dir.table(&r.stem(), &t)?;
        dir.metrics(&format!("proc_{}_s{}", r.method.name(), r.seed), &r.procedural, None)?;
        for (track, evs) in [("procedural", &r.procedural_events), ("theory", &r.theory_events)] {
            for e in evs {
                let mut base = Map::new();
                base.insert("method".into(), json!(r.method.name()));
                base.insert("track".into(), json!(track));
                base.insert("seed".into(), json!(r.seed));
                events.push(event_record(base, e));
            }
        }
    }
    dir.jsonl("events.jsonl", &events)?;
    let summaries: Vec<_> = runs.iter().map(summarize_alignment).collect();
    dir.json("alignment_summary.json", &summaries)?;
    dir.finish("alignment", cfg)
}

/// Study B artifacts: `phase`, `ablations`, focal-cell trajectories under
/// `traj/` and the manifest.
pub fn write_study_b(root: &Path, cfg: &Config, result: &StudyBResult, format: Format) -> Result<Manifest> {
    let mut dir = ArtifactDir::new(root, format)?;
    let nc = result.phase.first().map_or(0, |r| r.cluster_masses.len());
    let mut header: Vec<String> = [
        "alpha",
        "beta",
        "seed",
        "incorrect_mass",
        "min_cluster_mass",
        "correct_mass",
        "kernel_energy",
        "J_p",
        "min_safety_margin",
        "entropy",
        "between_seed_jsd",
        "coverage",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..nc).map(cluster_column));
    let mut t = Table::new(header);
    for r in &result.phase {
        let mut row: Vec<Cell> = vec![
            r.alpha.into(),
            r.beta.into(),
            r.seed.into(),
            r.incorrect_mass.into(),
            r.min_cluster_mass.into(),
            r.correct_mass.into(),
            r.kernel_energy.into(),
            r.objective_proxy.into(),
            r.min_safety_margin.into(),
            r.entropy.into(),
            r.between_seed_jsd.into(),
            r.coverage.into(),
        ];
        row.extend(r.cluster_masses.iter().map(|&x| Cell::Float(x)));
        t.push(row);
    }
    dir.table("phase", &t)?;
    let mut t = Table::new([
        "variant",
        "seed",
        "min_safety_margin",
        "kernel_energy",
        "coverage",
        "incorrect_mass",
        "min_cluster_mass",
        "entropy",
    ]);
    for a in &result.ablations {
        t.push(vec![
            a.variant.clone().into(),
            a.seed.into(),
            a.min_safety_margin.into(),
            a.kernel_energy.into(),
            a.coverage.into(),
            a.incorrect_mass.into(),
            a.min_cluster_mass.into(),
            a.entropy.into(),
        ]);
    }
    dir.table("ablations", &t)?;
    for r in &result.focal_runs {
        dir.metrics(&format!("traj/{}", r.stem()), &r.rows, Some(&r.policies))?;
    }
    dir.finish("b", cfg)
}
