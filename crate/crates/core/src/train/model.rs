//! The full model: encoder, reconstruction, lift, and map head sharing one
//! parameter store.

use std::path::Path;

use serde_json::json;

use super::config::TrainConfig;
use crate::encoder::{apply_view_mask, Encoder, ViewFeatureSet, ViewStatus};
use crate::error::{Error, Result};
use crate::eval::Predictor;
use crate::head::{DecodedMap, GroundTruth, MapHead};
use crate::lift::Lifter;
use crate::recon::Reconstructor;
use crate::rng::{self, tag, Rng};
use crate::scene::{CameraRig, Range, RenderedViewSet, SceneSpec};
use crate::tensor::checkpoint;
use crate::tensor::optim::AdamState;
use crate::tensor::{Bound, Graph, ParamStore, Tensor};
use crate::Scalar;

pub struct Model<T: Scalar> {
    pub cfg: TrainConfig,
    pub rig: CameraRig,
    pub store: ParamStore<T>,
    pub encoder: Encoder,
    pub recon: Reconstructor,
    pub lifter: Lifter<T>,
    pub head: MapHead<T>,
}

impl<T: Scalar> Model<T> {
    /// Fresh model; parameters drawn from the config seed's init stream.
    pub fn new(cfg: &TrainConfig, rig: &CameraRig) -> Result<Self> {
        cfg.validate(rig)?;
        let mut init = rng::stream(cfg.seed, &[tag::INIT]);
        Self::build(cfg, rig, &mut init)
    }

    fn build(cfg: &TrainConfig, rig: &CameraRig, init: &mut Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &cfg.encoder, rig.image_h, rig.image_w, init)?;
        let (gh, gw, c) = (encoder.grid_h, encoder.grid_w, cfg.encoder.channels);
        let recon = Reconstructor::new(&mut store, &cfg.recon, rig.len(), gh, gw, c, init)?;
        let lifter = Lifter::new(rig, &cfg.bev, gh, gw)?;
        let head = MapHead::new(&mut store, &cfg.head, &cfg.bev, c, init)?;
        Ok(Self { cfg: cfg.clone(), rig: rig.clone(), store, encoder, recon, lifter, head })
    }

    pub fn range(&self) -> Range {
        self.cfg.bev.range()
    }

    /// Ground truth of `scene` in the head's normalized coordinates. Elements
    /// beyond the head's slot count are dropped.
    pub fn ground_truth(&self, scene: &SceneSpec) -> Vec<GroundTruth> {
        let range = self.range();
        scene
            .elements
            .iter()
            .take(self.cfg.head.queries)
            .map(|e| GroundTruth {
                class: e.class.index(),
                points: crate::scene::polyline::resample(&e.points, self.cfg.head.points)
                    .into_iter()
                    .map(|p| range.normalize(p))
                    .collect(),
            })
            .collect()
    }

    /// Predictions for one drop pattern, given already encoded view grids.
    pub fn predict_from_features(&self, grids: &[Tensor<T>], dropped: &[usize], rng: &mut Rng) -> Result<DecodedMap> {
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let feats = ViewFeatureSet {
            grids: grids.iter().map(|t| g.constant(t.clone())).collect(),
            status: vec![ViewStatus::Available; grids.len()],
            grid_h: self.encoder.grid_h,
            grid_w: self.encoder.grid_w,
            channels: self.cfg.encoder.channels,
        };
        let feats = self.degrade(&mut g, &p, &feats, dropped, rng)?;
        let bev = self.lifter.lift(&mut g, &feats)?;
        let pred = self.head.decode(&mut g, &p, bev.feature);
        Ok(DecodedMap::from_graph(&g, &pred))
    }

    /// Mask `dropped` views and reconstruct them with the configured variant.
    pub fn degrade(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        feats: &ViewFeatureSet,
        dropped: &[usize],
        rng: &mut Rng,
    ) -> Result<ViewFeatureSet> {
        if dropped.is_empty() {
            return Ok(feats.clone());
        }
        let masked = apply_view_mask(g, feats, dropped)?;
        Ok(self.recon.reconstruct(g, p, &masked, rng)?.0)
    }

    /// Encode every view once; values only.
    pub fn encode_values(&self, images: &RenderedViewSet) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let feats = self.encoder.encode(&mut g, &p, images)?;
        Ok(feats.grids.iter().map(|&v| g.value(v).clone()).collect())
    }

    pub fn save(&self, dir: &Path, optimizer: Option<&AdamState<T>>, mut meta: serde_json::Value) -> Result<()> {
        meta["config"] = serde_json::to_value(&self.cfg).expect("config serializes");
        meta["rig"] = serde_json::to_value(&self.rig).expect("rig serializes");
        checkpoint::save(dir, &self.store, optimizer, meta)?;
        Ok(())
    }

    /// Rebuild a model from a checkpoint directory.
    pub fn load(dir: &Path) -> Result<(Self, Option<AdamState<T>>, serde_json::Value)> {
        let loaded = checkpoint::load::<T>(dir)?;
        let bad = |reason: String| Error::Checkpoint { path: dir.to_path_buf(), reason };
        let cfg: TrainConfig = serde_json::from_value(loaded.meta["config"].clone())
            .map_err(|e| bad(format!("config in checkpoint metadata: {e}")))?;
        let rig: CameraRig =
            serde_json::from_value(loaded.meta["rig"].clone()).map_err(|e| bad(format!("rig in checkpoint metadata: {e}")))?;
        let mut model = Self::new(&cfg, &rig)?;
        checkpoint::restore(&mut model.store, &loaded, dir)?;
        Ok((model, loaded.optimizer, loaded.meta))
    }
}

impl<T: Scalar> Predictor for Model<T> {
    fn predict(&self, sample: usize, images: &RenderedViewSet, drops: &[Vec<usize>]) -> Result<Vec<DecodedMap>> {
        let grids = self.encode_values(images)?;
        drops
            .iter()
            .map(|d| {
                let bits = d.iter().fold(0u64, |m, &v| m | 1 << v);
                let mut r = rng::stream(self.cfg.seed, &[tag::EVAL, sample as u64, bits]);
                self.predict_from_features(&grids, d, &mut r)
            })
            .collect()
    }

    fn range(&self) -> Range {
        Model::range(self)
    }
}

/// Metadata stored with training checkpoints.
pub fn checkpoint_meta(epoch: usize, step: u64, dataset: &str) -> serde_json::Value {
    json!({ "epoch": epoch, "step": step, "dataset": dataset })
}
