use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SNAPSHOT_HEADER: &str = "id,label,role,step,d";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Zp,
    Zd,
    Win,
    Bank,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Zp, Role::Zd, Role::Win, Role::Bank];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Zp => "zp",
            Role::Zd => "zd",
            Role::Win => "win",
            Role::Bank => "bank",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown role `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRow {
    pub id: usize,
    pub label: Option<usize>,
    pub role: Role,
    pub vector: Vec<f64>,
}

impl SnapshotRow {
    pub fn new<T: Scalar>(id: usize, label: Option<usize>, role: Role, v: &[T]) -> Self {
        Self {
            id,
            label,
            role,
            vector: v.iter().map(|x| x.as_f64()).collect(),
        }
    }
}

/// Probe embeddings at one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: u64,
    pub rows: Vec<SnapshotRow>,
}

impl Snapshot {
    pub fn role(&self, role: Role) -> impl Iterator<Item = &SnapshotRow> {
        self.rows.iter().filter(move |r| r.role == role)
    }

    /// Mean cosine between the `a` and `b` vectors of the same instance.
    pub fn paired_mean_cos(&self, a: Role, b: Role) -> Option<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for ra in self.role(a) {
            if let Some(rb) = self.role(b).find(|r| r.id == ra.id) {
                sum += ra.vector.iter().zip(&rb.vector).map(|(x, y)| x * y).sum::<f64>();
                count += 1;
            }
        }
        (count > 0).then(|| sum / count as f64)
    }
}

/// Nine significant digits in positional notation.
fn sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let decimals = (8 - v.abs().log10().floor() as i32).clamp(0, 60) as usize;
    format!("{v:.decimals$}")
}

pub fn write_snapshots_csv(path: impl AsRef<Path>, snapshots: &[Snapshot]) -> Result<()> {
    let mut out = String::new();
    out.push_str(SNAPSHOT_HEADER);
    out.push('\n');
    for s in snapshots {
        for r in &s.rows {
            let label = r.label.map_or(-1, |l| l as i64);
            write!(out, "{},{},{},{}", r.id, label, r.role.as_str(), s.step).expect("string write");
            for &v in &r.vector {
                out.push(',');
                out.push_str(&sig9(v));
            }
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parses a snapshot file; rows are grouped by step in order of appearance.
pub fn read_snapshots_csv(path: impl AsRef<Path>) -> Result<Vec<Snapshot>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == SNAPSHOT_HEADER => {}
        other => return Err(Error::Parse(format!("expected header `{SNAPSHOT_HEADER}`, found {other:?}"))),
    }
    let mut out: Vec<Snapshot> = Vec::new();
    let mut dim = None;
    for (no, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |what: &str| Error::Parse(format!("line {}: {what}", no + 2));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 5 {
            return Err(bad("too few fields"));
        }
        let id = fields[0].parse().map_err(|_| bad("bad id"))?;
        let label: i64 = fields[1].parse().map_err(|_| bad("bad label"))?;
        let role: Role = fields[2].parse()?;
        let step: u64 = fields[3].parse().map_err(|_| bad("bad step"))?;
        let vector = fields[4..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| bad("bad float")))
            .collect::<Result<Vec<_>>>()?;
        if *dim.get_or_insert(vector.len()) != vector.len() {
            return Err(bad("inconsistent vector length"));
        }
        let row = SnapshotRow { id, label: usize::try_from(label).ok(), role, vector };
        match out.iter_mut().find(|s| s.step == step) {
            Some(s) => s.rows.push(row),
            None => out.push(Snapshot { step, rows: vec![row] }),
        }
    }
    if out.is_empty() {
        return Err(Error::Empty("snapshot file"));
    }
    Ok(out)
}
