//! CT volumes, patch extraction at the scoring and network geometries,
//! augmentation and intensity normalization.

mod augment;
mod normalize;
mod patch;
mod volume;

pub use augment::{augment, augment_to, center_crop, crop_side, resize_bilinear, NETWORK_INPUT_SIDE};
pub use normalize::{channel_stats, denormalize_patch, normalize_patch, ChannelStats};
pub use patch::{
    extract_network_patch, extract_scoring_patch, BoundaryPolicy, PatchStack, Provenance,
    ScoringPatch, NETWORK_PATCH_SIDE, SCORING_PATCH_SIDE, SCORING_PATCH_SLICES,
};
pub use volume::{CtVolume, Spacing, HU_MAX, HU_MIN};
