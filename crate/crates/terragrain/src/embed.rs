//! Inference-time embedding of image patches (no augmentation).

use crate::dataset::AnchorPatch;
use crate::encoder::{forward, Embedding, EncoderParams};
use crate::error::{Error, Result};
use crate::featurizer::{featurize, featurize_foreground, FULL_DIM, HALF_DIM};
use crate::image::RasterImage;
use crate::sampling::compose_sample;

/// Window sizes and the background toggle shared by every inference stage.
#[derive(Debug, Clone, Copy)]
pub struct EmbedSpec {
    pub fg_size: u32,
    pub bg_size: u32,
    /// When false only the foreground half of the descriptor is used.
    pub background: bool,
}

impl EmbedSpec {
    pub fn feature_dim(&self) -> usize {
        if self.background {
            FULL_DIM
        } else {
            HALF_DIM
        }
    }

    /// The encoder input size must match the descriptor this spec produces.
    pub fn check_params(&self, params: &EncoderParams) -> Result<()> {
        if params.input_dim() != self.feature_dim() {
            return Err(Error::data(format!(
                "encoder expects {}-dim input but the configuration produces {} \
                 (background {})",
                params.input_dim(),
                self.feature_dim(),
                if self.background { "on" } else { "off" }
            )));
        }
        Ok(())
    }
}

/// Compose, featurize and project the patch centered at `center`.
pub fn embed_patch(
    params: &EncoderParams,
    image: &RasterImage,
    center: (u32, u32),
    spec: &EmbedSpec,
) -> Result<Embedding> {
    let crop = compose_sample(image, center, spec.fg_size, spec.bg_size)?;
    let feature = if spec.background {
        featurize(&crop)
    } else {
        featurize_foreground(&crop)
    };
    forward(params, &feature)
}

/// Embed an anchor at its annotated center.
pub fn embed_anchor(
    params: &EncoderParams,
    image: &RasterImage,
    anchor: &AnchorPatch,
    spec: &EmbedSpec,
) -> Result<Embedding> {
    embed_patch(params, image, (anchor.center_u, anchor.center_v), spec)
}
