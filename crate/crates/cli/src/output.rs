use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use corrfactor::correlation::TableRow;
use corrfactor::HopModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

/// Provenance written next to every result.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub lattice: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub engine: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub n_max: Vec<usize>,
    pub seed: u64,
    pub model: HopModel,
    #[serde(skip_serializing_if = "serde_json::Map::is_empty")]
    pub params: serde_json::Map<String, serde_json::Value>,
    pub version: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &str, lattice: &str, model: &HopModel) -> Self {
        RunManifest {
            command: command.to_string(),
            lattice: lattice.to_string(),
            engine: None,
            n_max: Vec::new(),
            seed: 0,
            model: model.clone(),
            params: serde_json::Map::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    pub fn param(mut self, key: &str, value: impl Serialize) -> Self {
        self.params
            .insert(key.to_string(), serde_json::to_value(value).expect("plain value"));
        self
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("manifest serializes")
    }
}

/// Writes `contents` to `path` through a sibling temporary file, so a failed
/// run never leaves a half-written output behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)
        .with_context(|| format!("cannot create a temporary file in {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Prints to stdout, or writes the file when `out` is given.
pub fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, contents.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(contents.as_bytes())?;
            Ok(())
        }
    }
}

pub fn json_document(manifest: &RunManifest, key: &str, body: impl Serialize) -> Result<String> {
    let mut doc = serde_json::Map::new();
    doc.insert("manifest".into(), manifest.to_value());
    doc.insert(key.into(), serde_json::to_value(body)?);
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn table_csv(manifest: &RunManifest, rows: &[TableRow]) -> Result<String> {
    let mut out = format!("# manifest: {}\n", serde_json::to_string(&manifest.to_value())?);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n_max", "engine", "f", "captured_mass", "stderr"])?;
    for r in rows {
        let e = r.estimate.as_ref();
        w.write_record([
            r.n_max.to_string(),
            r.engine.to_string(),
            opt(e.map(|e| e.f)),
            opt(e.map(|e| e.captured_mass)),
            opt(e.and_then(|e| e.stderr_f)),
        ])?;
    }
    out.push_str(&String::from_utf8(w.into_inner()?)?);
    Ok(out)
}

/// Fixed-width table with `f` rounded to three decimals and dashes for
/// empty rows.
pub fn table_text(rows: &[TableRow]) -> String {
    let mut out = format!("{:>7}  {:<7} {:>7}  {:>9}  {:>9}\n", "N_max", "engine", "f", "captured", "stderr");
    let mut notes = Vec::new();
    for r in rows {
        match &r.estimate {
            Some(e) => {
                let se = e.stderr_f.map(|s| format!("{s:.2e}")).unwrap_or_else(|| "-".into());
                out.push_str(&format!(
                    "{:>7}  {:<7} {:>7.3}  {:>9.6}  {:>9}\n",
                    r.n_max, r.engine, e.f, e.captured_mass, se
                ));
            }
            None => {
                out.push_str(&format!("{:>7}  {:<7} {:>7}  {:>9}  {:>9}\n", r.n_max, r.engine, "-", "-", "-"));
                if let Some(n) = &r.note {
                    if !notes.contains(n) {
                        notes.push(n.clone());
                    }
                }
            }
        }
    }
    for n in notes {
        out.push_str(&format!("note: {n}\n"));
    }
    out
}
