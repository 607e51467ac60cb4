use std::fmt::Write as _;

use crate::error::{Error, Result};

/// What happened at one solver step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub schedule_index: usize,
    /// Minibatch loss before each adaptation step.
    pub adapt_losses: Vec<f64>,
    pub refined: bool,
    /// `sum_k ||y_k - A x0_k||^2` of the step's estimate.
    pub residual: f64,
    /// Mean slice PSNR against ground truth, when known.
    pub psnr: Option<f64>,
}

/// Step records in execution order (`t = T'` first).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    records: Vec<StepRecord>,
}

const HEADER: &str = "# t index refined residual psnr adapt_losses";

impl Trace {
    pub fn push(&mut self, record: StepRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Solver steps at which refinement fired.
    pub fn refined_steps(&self) -> Vec<usize> {
        self.records.iter().filter(|r| r.refined).map(|r| r.t).collect()
    }

    /// One whitespace-separated line per step; floats are written with
    /// round-trip precision, a missing PSNR as `-`, losses comma-joined.
    pub fn to_text(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for r in &self.records {
            let psnr = r.psnr.map_or("-".to_string(), |p| format!("{p:e}"));
            let losses: Vec<String> = r.adapt_losses.iter().map(|l| format!("{l:e}")).collect();
            let losses = if losses.is_empty() { "-".to_string() } else { losses.join(",") };
            writeln!(
                out,
                "{} {} {} {:e} {} {}",
                r.t, r.schedule_index, r.refined as u8, r.residual, psnr, losses
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::format("<trace>", format!("line {}: {msg}", line + 1));
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(bad(n, "expected 6 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, "bad number"));
            let int = |s: &str| s.parse::<usize>().map_err(|_| bad(n, "bad integer"));
            let refined = match f[2] {
                "0" => false,
                "1" => true,
                _ => return Err(bad(n, "refined flag must be 0 or 1")),
            };
            let psnr = if f[4] == "-" { None } else { Some(num(f[4])?) };
            let adapt_losses = if f[5] == "-" {
                Vec::new()
            } else {
                f[5].split(',').map(num).collect::<Result<_>>()?
            };
            records.push(StepRecord {
                t: int(f[0])?,
                schedule_index: int(f[1])?,
                adapt_losses,
                refined,
                residual: num(f[3])?,
                psnr,
            });
        }
        Ok(Self { records })
    }
}
