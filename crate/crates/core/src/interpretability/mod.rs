//! LIME superpixel explanations and gradient saliency maps.

pub mod lime;
pub mod overlay;
pub mod saliency;
pub mod segmentation;

pub use lime::{explain_with_masks, fit_surrogate, lime_explain, sample_masks, Baseline, Explanation, LimeConfig};
pub use overlay::{display_image, prediction_caption, render_lime_panel, render_saliency_panel};
pub use saliency::{saliency_map, LogitGradient, SaliencyMap};
pub use segmentation::{grid_segments, segment_superpixels, SegmentMap};
