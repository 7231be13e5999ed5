//! Dataset directories.
//!
//! ```text
//! <dir>/manifest.json        rig, generator config, seeds, counts, checksums
//! <dir>/samples/<idx>.img    shape-prefixed f32 image stack [N, H, W]
//! <dir>/samples/<idx>.gt.json  ground-truth polylines (class + points)
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::camera::CameraRig;
use super::render::{render_with, GroundLut, RenderedViewSet};
use super::world::{sample_scene, ElementClass, GeneratorConfig, SceneSpec};
use crate::binfmt;
use crate::error::{contract, io_err, json_err, Error, Result};
use crate::rng;

pub const MANIFEST: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub scene: SceneSpec,
    pub images: RenderedViewSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub index: usize,
    pub seed: u64,
    pub image_sha256: String,
    pub gt_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: u32,
    pub rig: CameraRig,
    pub generator: GeneratorConfig,
    pub master_seed: u64,
    pub count: usize,
    pub class_histogram: BTreeMap<ElementClass, usize>,
    pub samples: Vec<SampleEntry>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
    /// SHA-256 of the manifest file; identifies the dataset content.
    pub checksum: String,
}

/// Seed of sample `index` under `master_seed`.
pub fn sample_seed(master_seed: u64, index: usize) -> u64 {
    rng::derive_seed(master_seed, &[rng::tag::SCENE, index as u64])
}

pub fn generate(master_seed: u64, count: usize, rig: &CameraRig, cfg: &GeneratorConfig) -> Result<Vec<Sample>> {
    rig.validate()?;
    cfg.validate()?;
    let lut = GroundLut::new(rig);
    (0..count)
        .map(|i| {
            let scene = sample_scene(sample_seed(master_seed, i), cfg)?;
            let images = render_with(&scene, rig, &lut);
            Ok(Sample { scene, images })
        })
        .collect()
}

pub fn class_histogram<'a>(scenes: impl IntoIterator<Item = &'a SceneSpec>) -> BTreeMap<ElementClass, usize> {
    let mut h: BTreeMap<ElementClass, usize> = ElementClass::ALL.iter().map(|&c| (c, 0)).collect();
    for s in scenes {
        for e in &s.elements {
            *h.entry(e.class).or_default() += 1;
        }
    }
    h
}

fn image_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("samples").join(format!("{i:05}.img"))
}

fn gt_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("samples").join(format!("{i:05}.gt.json"))
}

pub fn write(dir: &Path, master_seed: u64, rig: &CameraRig, generator: &GeneratorConfig, samples: &[Sample]) -> Result<Dataset> {
    for s in samples {
        let im = &s.images;
        if im.views != rig.len() || im.height != rig.image_h || im.width != rig.image_w {
            return contract("every sample must be rendered with the dataset rig");
        }
    }
    std::fs::create_dir_all(dir.join("samples")).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let im = &s.images;
        let img = binfmt::encode(&[im.views, im.height, im.width], im.data.iter().copied());
        binfmt::write_file(&image_path(dir, i), &img)?;
        let gt_file = gt_path(dir, i);
        let gt = serde_json::to_vec(&s.scene).map_err(json_err(&gt_file))?;
        binfmt::write_file(&gt_file, &gt)?;
        entries.push(SampleEntry {
            index: i,
            seed: s.scene.seed,
            image_sha256: binfmt::sha256_hex(&img),
            gt_sha256: binfmt::sha256_hex(&gt),
        });
    }
    let manifest = DatasetManifest {
        format: FORMAT_VERSION,
        rig: rig.clone(),
        generator: generator.clone(),
        master_seed,
        count: samples.len(),
        class_histogram: class_histogram(samples.iter().map(|s| &s.scene)),
        samples: entries,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_vec_pretty(&manifest).map_err(json_err(&path))?;
    binfmt::write_file(&path, &text)?;
    Ok(Dataset { manifest, samples: samples.to_vec(), checksum: binfmt::sha256_hex(&text) })
}

pub fn read_manifest(dir: &Path) -> Result<(DatasetManifest, String)> {
    let path = dir.join(MANIFEST);
    let bytes = binfmt::read_file(&path)?;
    let manifest: DatasetManifest = serde_json::from_slice(&bytes).map_err(json_err(&path))?;
    Ok((manifest, binfmt::sha256_hex(&bytes)))
}

pub fn read(dir: &Path) -> Result<Dataset> {
    let (manifest, checksum) = read_manifest(dir)?;
    let corrupt = |path: PathBuf, reason: String| Error::CorruptDataset { path, reason };
    if manifest.format != FORMAT_VERSION || manifest.samples.len() != manifest.count {
        return Err(corrupt(dir.join(MANIFEST), "manifest format or sample count is inconsistent".into()));
    }
    let rig = &manifest.rig;
    let mut samples = Vec::with_capacity(manifest.count);
    for e in &manifest.samples {
        let ip = image_path(dir, e.index);
        let img = binfmt::read_file(&ip)?;
        if binfmt::sha256_hex(&img) != e.image_sha256 {
            return Err(corrupt(ip, "image checksum mismatch".into()));
        }
        let (shape, data) = binfmt::decode(&img).map_err(|r| corrupt(ip.clone(), r))?;
        if shape != [rig.len(), rig.image_h, rig.image_w] {
            return Err(corrupt(ip, format!("image stack shape {shape:?} does not match the rig")));
        }
        let gp = gt_path(dir, e.index);
        let gt = binfmt::read_file(&gp)?;
        if binfmt::sha256_hex(&gt) != e.gt_sha256 {
            return Err(corrupt(gp, "ground-truth checksum mismatch".into()));
        }
        let scene: SceneSpec = serde_json::from_slice(&gt).map_err(|err| corrupt(gp.clone(), err.to_string()))?;
        let images = RenderedViewSet { views: shape[0], height: shape[1], width: shape[2], data };
        samples.push(Sample { scene, images });
    }
    let recount = class_histogram(samples.iter().map(|s| &s.scene));
    if recount != manifest.class_histogram {
        return Err(corrupt(dir.join(MANIFEST), "class histogram disagrees with samples".into()));
    }
    Ok(Dataset { manifest, samples, checksum })
}
