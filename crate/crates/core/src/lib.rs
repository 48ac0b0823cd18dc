//! Physics-based ultrasound intermediate-representation (IR) simulator and
//! clinical evaluation toolkit.
//!
//! The crate renders US-like IR images from labeled volumes by convex-probe
//! acoustic ray tracing, generates reproducible image/mask datasets from
//! procedural abdominal phantoms, and evaluates segmentations with Dice,
//! anterior-posterior aortic diameter, AAA classification, and the Fréchet
//! distance between feature distributions.
//!
//! Pipeline sketch:
//!
//! ```text
//! PhantomSpec ─> LabelVolume ─> LabelSlice ─┬─> render (cactuss_ir / realistic_us)
//!                                           ├─> synth_ct_slice ─> render_edge_ir
//!                                           └─> render_label_mask (ground truth)
//! ```
//!
//! All operations are pure functions of their inputs (randomized stages take
//! explicit seeds), so datasets and renders are bit-reproducible across runs
//! and worker counts.

pub mod dataset;
pub mod edge;
pub mod error;
pub mod metrics;
pub mod phantom;
pub mod probe;
pub mod raytrace;
pub mod rng;
pub mod volume;

pub use dataset::{
    augment_pair, evaluate_run, generate_dataset, split_manifest, AugmentConfig, AugmentParams,
    DatasetConfig, ManifestEntry, Source, Split, SplitOutcome,
};
pub use edge::render_edge_ir;
pub use error::{Error, Result};
pub use metrics::{
    accumulate_stats, ap_diameter, classify_aaa, diameter_mae, dice, frechet_distance,
    image_features, matrix_sqrt_psd, DiameterReport, FeatureKind, FeatureStats, SegMask,
};
pub use phantom::{aorta_mask_slice, generate_phantom, PhantomSpec};
pub use probe::{
    elevational_fan, pixel_spacing, scan_convert, scan_convert_with, scanline_fan, sector_mask,
    BModeImage, FanImage, Interp, ProbeConfig, Ray,
};
pub use raytrace::{
    apply_tgc, attenuation_factor, march_ray, march_ray_traced, reflection_coefficient, render,
    render_label_mask, IrMode, RayProfile, SimConfig,
};
pub use volume::{
    load_label_volume, load_tissue_table, save_label_volume, synth_ct_slice, AcousticProps, Axis,
    IntensityImage, LabelSlice, LabelVolume, TissueTable,
};
