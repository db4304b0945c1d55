//! Procedural semantic-matching corpus: textured object classes placed twice
//! by known affine transforms over cluttered backgrounds, giving exact dense
//! correspondences, keypoints and different-class negative pairs.

mod dataset;
mod pair;
mod template;

pub use dataset::{load_pair, read_manifest, write_dataset, Dataset, DatasetConfig, ManifestRecord, Split, MANIFEST};
pub use pair::{correspondence, make_pair, sample_placement, InstancePair, Label, PairConfig, MAX_PLACEMENT_TRIES};
pub use template::{hsv_to_rgb, hue_margin, make_templates, ClassTemplate, Part, TemplateConfig};
