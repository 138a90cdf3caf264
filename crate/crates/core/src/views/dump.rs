use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ViewBundle;
use crate::error::Result;
use crate::imaging::{assemble_grid, save_png, CropBox};

/// JSON sidecar written next to the debug PNGs of a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSidecar {
    pub instance_id: usize,
    pub prior_box: CropBox,
    pub permutation: [usize; 9],
    pub shared_mask: [bool; 9],
    pub seed: u64,
}

/// Writes `<stem>_vp.png`, `<stem>_vd.png` (tiles laid out in their permuted
/// order), `<stem>_vwin.png` when present, and `<stem>.json`.
pub fn write_bundle_debug(bundle: &ViewBundle, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    save_png(&bundle.v_p, dir.join(format!("{stem}_vp.png")))?;
    save_png(&assemble_grid(&bundle.v_d_tiles)?, dir.join(format!("{stem}_vd.png")))?;
    if let Some(w) = &bundle.v_win {
        save_png(w, dir.join(format!("{stem}_vwin.png")))?;
    }
    let sidecar = BundleSidecar {
        instance_id: bundle.instance_id,
        prior_box: bundle.prior_box,
        permutation: bundle.permutation,
        shared_mask: bundle.shared_mask,
        seed: bundle.seed,
    };
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}
