//! Synthetic scenes: vectorized worlds, cameras, rendering, and datasets.

pub mod camera;
pub mod dataset;
pub mod polyline;
pub mod render;
pub mod world;

pub use camera::{project_to_view, Camera, CameraRig, Pixel, RigPreset};
pub use dataset::{Dataset, DatasetManifest, Sample};
pub use polyline::Point;
pub use render::{render_views, RenderedViewSet};
pub use world::{sample_scene, ElementClass, GeneratorConfig, MapElement, Range, SceneSpec};
