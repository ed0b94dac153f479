use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

/// Identification written at the top of every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Header {
    pub tool: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Header {
    pub fn new(config_hash: &str, seed: u64) -> Self {
        Header {
            tool: format!("kinfrac {}", env!("CARGO_PKG_VERSION")),
            config_hash: config_hash.to_string(),
            seed,
        }
    }

    fn lines(&self) -> [String; 3] {
        [
            format!("tool: {}", self.tool),
            format!("config_hash: {}", self.config_hash),
            format!("seed: {}", self.seed),
        ]
    }
}

/// Writes the whole file to a sibling temporary and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Formats CSV text with a `#` comment header.
pub fn csv_text(header: &Header, columns: &[&str], rows: &[Vec<f64>]) -> Result<String> {
    let mut out = String::new();
    for l in header.lines() {
        out.push_str("# ");
        out.push_str(&l);
        out.push('\n');
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(columns).map_err(|e| Error::Schema(e.to_string()))?;
    for row in rows {
        if row.len() != columns.len() {
            return Err(Error::Schema(format!("row has {} values for {} columns", row.len(), columns.len())));
        }
        w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| Error::Schema(e.to_string()))?;
    }
    let body = w.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
    out.push_str(&String::from_utf8(body).map_err(|e| Error::Schema(e.to_string()))?);
    Ok(out)
}

/// Parsed numeric CSV; comment lines are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Table> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let columns: Vec<String> = r
            .headers()
            .map_err(|e| Error::Schema(e.to_string()))?
            .iter()
            .map(|c| c.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::Schema(e.to_string()))?;
            let row = rec
                .iter()
                .map(|c| c.trim().parse::<f64>().map_err(|_| Error::Schema(format!("non-numeric cell {c:?}"))))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(Table { columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

/// Writes artifacts into one directory, each with the same header.
#[derive(Debug, Clone)]
pub struct ArtifactWriter {
    pub dir: PathBuf,
    pub header: Header,
}

#[derive(Serialize)]
struct Wrapped<'a, T: Serialize> {
    header: &'a Header,
    #[serde(flatten)]
    body: &'a T,
}

impl ArtifactWriter {
    pub fn new(dir: impl Into<PathBuf>, header: Header) -> Self {
        ArtifactWriter { dir: dir.into(), header }
    }

    pub fn csv(&self, name: &str, columns: &[&str], rows: &[Vec<f64>]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, csv_text(&self.header, columns, rows)?.as_bytes())?;
        Ok(path)
    }

    /// JSON object whose first member is the header.
    pub fn json<T: Serialize>(&self, name: &str, body: &T) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let value = serde_json::to_value(body).map_err(|e| Error::Schema(e.to_string()))?;
        let text = if value.is_object() {
            serde_json::to_string_pretty(&Wrapped {
                header: &self.header,
                body: &value,
            })
        } else {
            serde_json::to_string_pretty(&serde_json::json!({ "header": &self.header, "data": value }))
        }
        .map_err(|e| Error::Schema(e.to_string()))?;
        write_atomic(&path, (text + "\n").as_bytes())?;
        Ok(path)
    }

    /// SVG with the header as a leading XML comment.
    pub fn svg(&self, name: &str, document: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let mut text = String::from("<!--\n");
        for l in self.header.lines() {
            text.push_str(&l.replace("--", "- -"));
            text.push('\n');
        }
        text.push_str("-->\n");
        text.push_str(document);
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
