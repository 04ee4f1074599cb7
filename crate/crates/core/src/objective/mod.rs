//! Patch-location sampling, latent targets and every loss term.

mod losses;
mod sampler;

pub use losses::{
    det_task_loss, detection_targets, extract_target_patches, l2_alignment_loss, predictive_loss,
    seg_task_loss, total_loss, LossWeights, IGNORE_LABEL, SIZE_LOSS_WEIGHT,
};
pub(crate) use losses::check_mask;
pub use sampler::{anchor_scores, pool_activity, quantile, sample_patch_locations, PatchSample, PatchSamplerConfig};
