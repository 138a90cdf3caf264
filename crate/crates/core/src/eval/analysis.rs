//! Per-snapshot geometry for embedding-evolution reports.

use serde::{Deserialize, Serialize};

use super::{alignment, pca_2d, uniformity};
use crate::error::Result;
use crate::trainer::{Role, Snapshot};

pub const ANALYSIS_HEADER: &str = "step,n,align_zp_zd,uniform_zp,cos_zp_win,cos_zp_bank";
pub const PCA_HEADER: &str = "id,label,role,pc1,pc2";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotStats {
    pub step: u64,
    /// Probe instances with a `z_p` row.
    pub n: usize,
    /// Alignment over `(z_p, z_d)` pairs of the same instance.
    pub align_zp_zd: Option<f64>,
    pub uniform_zp: Option<f64>,
    pub cos_zp_win: Option<f64>,
    pub cos_zp_bank: Option<f64>,
}

impl SnapshotStats {
    pub fn csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
        format!(
            "{},{},{},{},{},{}",
            self.step,
            self.n,
            f(self.align_zp_zd),
            f(self.uniform_zp),
            f(self.cos_zp_win),
            f(self.cos_zp_bank)
        )
    }
}

pub fn snapshot_stats(s: &Snapshot) -> SnapshotStats {
    let zp: Vec<&[f64]> = s.role(Role::Zp).map(|r| r.vector.as_slice()).collect();
    let pairs: Vec<(&[f64], &[f64])> = s
        .role(Role::Zp)
        .filter_map(|a| s.role(Role::Zd).find(|b| b.id == a.id).map(|b| (a.vector.as_slice(), b.vector.as_slice())))
        .collect();
    SnapshotStats {
        step: s.step,
        n: zp.len(),
        align_zp_zd: alignment(&pairs).ok(),
        uniform_zp: uniformity(&zp).ok(),
        cos_zp_win: s.paired_mean_cos(Role::Zp, Role::Win),
        cos_zp_bank: s.paired_mean_cos(Role::Zp, Role::Bank),
    }
}

/// All rows of the snapshot projected onto one shared 2-D PCA basis, as CSV
/// under [`PCA_HEADER`].
pub fn snapshot_pca_csv(s: &Snapshot) -> Result<String> {
    let rows: Vec<&[f64]> = s.rows.iter().map(|r| r.vector.as_slice()).collect();
    let coords = pca_2d(&rows)?;
    let mut out = String::from(PCA_HEADER);
    out.push('\n');
    for (r, [a, b]) in s.rows.iter().zip(coords) {
        let label = r.label.map_or(-1, |l| l as i64);
        out.push_str(&format!("{},{},{},{a:.9},{b:.9}\n", r.id, label, r.role.as_str()));
    }
    Ok(out)
}
