//! On-disk model bundle: `manifest.json`, `dictionary.json` (bin variants),
//! `bin.ckpt` and `head_NNN.ckpt` network checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binning::{Composition, PoseDictionary};
use crate::error::{invalid, Result};
use crate::net::Mlp;

use super::model::PoseModel;
use super::variant::{BinSelection, ModelVariant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub variant: String,
    pub alpha: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub gamma: f64,
    pub seed: u64,
    pub composition: Composition,
    pub bin_selection: BinSelection,
    pub feature_dim: usize,
    pub heads: usize,
}

fn head_file(i: usize) -> String {
    format!("head_{i:03}.ckpt")
}

pub fn save_bundle(model: &PoseModel, seed: u64, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let v = &model.variant;
    let manifest = BundleManifest {
        variant: v.kind.tag().to_string(),
        alpha: v.alpha,
        k: v.k,
        gamma: model.gamma,
        seed,
        composition: v.composition,
        bin_selection: v.bin_selection,
        feature_dim: model.feature_dim(),
        heads: model.heads.len(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    if let Some(d) = &model.dictionary {
        d.save(&dir.join("dictionary.json"))?;
    }
    if let Some(b) = &model.bin {
        b.save(&dir.join("bin.ckpt"))?;
    }
    for (i, h) in model.heads.iter().enumerate() {
        h.save(&dir.join(head_file(i)))?;
    }
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<(PoseModel, BundleManifest)> {
    let manifest: BundleManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let variant = ModelVariant {
        kind: manifest.variant.parse()?,
        alpha: manifest.alpha,
        k: manifest.k,
        composition: manifest.composition,
        bin_selection: manifest.bin_selection,
    };
    let has_bins = variant.kind.has_bins();
    let dictionary = if has_bins {
        Some(PoseDictionary::load(&dir.join("dictionary.json"))?)
    } else {
        None
    };
    let bin = if has_bins {
        Some(Mlp::load(&dir.join("bin.ckpt"))?)
    } else {
        None
    };
    let heads = (0..manifest.heads)
        .map(|i| Mlp::load(&dir.join(head_file(i))))
        .collect::<Result<Vec<_>>>()?;
    if heads.len() != variant.num_heads() {
        return Err(invalid(format!(
            "{} expects {} delta heads, bundle has {}",
            variant.kind,
            variant.num_heads(),
            heads.len()
        )));
    }
    let model = PoseModel {
        variant,
        dictionary,
        gamma: manifest.gamma,
        bin,
        heads,
    };
    if model.feature_dim() != manifest.feature_dim {
        return Err(invalid("bundle networks disagree with the manifest feature_dim"));
    }
    Ok((model, manifest))
}
