use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Where every artifact of an experiment lives, relative to the output root.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn manifest(&self) -> PathBuf {
        self.data_dir().join("manifest.txt")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn prior_checkpoint(&self) -> PathBuf {
        self.models_dir().join("prior.ckpt")
    }

    pub fn xmodal_checkpoint(&self) -> PathBuf {
        self.models_dir().join("xmodal.ckpt")
    }

    pub fn recon_dir(&self) -> PathBuf {
        self.root.join("recon")
    }

    pub fn cells_csv(&self) -> PathBuf {
        self.recon_dir().join("cells.csv")
    }

    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("eval").join("metrics.csv")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

/// A record: a kind word followed by `key=value` fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub kind: String,
    pub fields: Vec<(String, String)>,
}

impl Record {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            fields: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.fields.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::format("<manifest>", format!("{} record lacks `{key}`", self.kind)))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.require(key)?
            .parse()
            .map_err(|_| Error::format("<manifest>", format!("{} record has a malformed `{key}`", self.kind)))
    }
}

/// Text manifest: a version line, then one record per line.
///
/// ```text
/// # xmct manifest v1
/// volume split=test index=0 seed=123 main=test/vol000_main.grid aux=test/vol000_aux.grid
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<Record>,
}

const MANIFEST_HEADER: &str = "# xmct manifest v1";

impl Manifest {
    pub fn push(&mut self, r: Record) {
        self.records.push(r);
    }

    pub fn of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a Record> + 'a {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.kind);
            for (k, v) in &r.fields {
                write!(out, " {k}={v}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(Error::format(path, "missing manifest header"));
        }
        let mut records = Vec::new();
        for (n, line) in lines.enumerate() {
            let mut words = line.split_whitespace();
            let Some(kind) = words.next() else { continue };
            let mut r = Record::new(kind);
            for w in words {
                let (k, v) = w
                    .split_once('=')
                    .ok_or_else(|| Error::format(path, format!("line {}: `{w}` is not key=value", n + 2)))?;
                r.fields.push((k.to_string(), v.to_string()));
            }
            records.push(r);
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

/// 8-bit binary PGM with the fixed window [0, 1].
pub fn encode_pgm(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}
