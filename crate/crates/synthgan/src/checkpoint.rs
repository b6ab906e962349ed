//! Archive layout: meta holds the profile; one section per network.

use std::path::Path;

use ps_core::Scalar;
use ps_nn::{Archive, Section};
use serde_json::json;

use crate::model::SynthGan;
use crate::profile::GanProfile;
use crate::{Result, SynthError};

pub const SECTIONS: [&str; 4] = ["gan.appearance", "gan.structure", "gan.decoder", "gan.discriminator"];

impl<T: Scalar> SynthGan<T> {
    pub fn sections(&self) -> Vec<Section> {
        SECTIONS.iter().zip(self.param_sets()).map(|(n, s)| Section::from_params(*n, s)).collect()
    }

    /// Rebuilds the networks described by the archive's profile and loads their weights.
    pub fn from_archive(archive: &Archive) -> Result<Self> {
        let profile: GanProfile = serde_json::from_value(archive.meta.get("profile").cloned().ok_or_else(|| SynthError::Checkpoint("missing profile".into()))?)
            .map_err(|e| SynthError::Checkpoint(format!("bad profile: {e}")))?;
        let mut gan = SynthGan::new(profile, 0)?;
        let sets = [&mut gan.app_params, &mut gan.str_params, &mut gan.dec_params, &mut gan.disc_params];
        for (name, set) in SECTIONS.iter().zip(sets) {
            archive.require(name)?.load_into(set)?;
        }
        Ok(gan)
    }

    pub fn meta(&self) -> serde_json::Value {
        json!({ "profile": self.profile })
    }
}

/// Writes the networks plus any caller sections (optimizer state, student heads).
pub fn save_checkpoint<T: Scalar>(path: &Path, gan: &SynthGan<T>, extra_meta: serde_json::Value, extra: Vec<Section>) -> Result<()> {
    let mut meta = gan.meta();
    if let (Some(m), serde_json::Value::Object(e)) = (meta.as_object_mut(), extra_meta) {
        m.extend(e);
    }
    let mut archive = Archive::new(meta);
    archive.sections = gan.sections();
    archive.sections.extend(extra);
    archive.save(path)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(SynthGan<T>, Archive)> {
    let archive = Archive::load(path)?;
    Ok((SynthGan::from_archive(&archive)?, archive))
}
