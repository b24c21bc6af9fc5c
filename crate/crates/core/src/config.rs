//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Unknown keys are errors.
//! Later sources override earlier ones: file, then `--set`, then flags.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::datagen::SceneConfig;
use crate::error::{Error, Result};
use crate::mbrm::{MbrmParams, MbrmTrainConfig, DEFAULT_GAMMA, DEFAULT_SCOPE};
use crate::model::ModelConfig;
use crate::pipeline::{InferConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub scene: SceneConfig,
    pub model: ModelConfig,
    /// Seed for parameter initialization.
    pub init_seed: u64,
    pub train: TrainConfig,
    pub checkpoint_every: u64,
    pub mbrm_scope: usize,
    pub mbrm_gamma: f64,
    pub mbrm_train: MbrmTrainConfig,
    pub infer: InferConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            out: None,
            scene: SceneConfig::default(),
            model: ModelConfig::default(),
            init_seed: 0,
            train: TrainConfig::default(),
            checkpoint_every: 500,
            mbrm_scope: DEFAULT_SCOPE,
            mbrm_gamma: DEFAULT_GAMMA,
            mbrm_train: MbrmTrainConfig::default(),
            infer: InferConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn list<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let m = &self.model;
        vec![
            ("dataset", path_str(&self.dataset)),
            ("out", path_str(&self.out)),
            ("image_size", self.scene.image_size.to_string()),
            ("min_instances", self.scene.min_instances.to_string()),
            ("max_instances", self.scene.max_instances.to_string()),
            ("num_classes", self.scene.num_classes.to_string()),
            ("noise", self.scene.noise.to_string()),
            ("repr_dim", m.repr_dim.to_string()),
            ("backbone_width", m.backbone_width.to_string()),
            ("head_width", m.head_width.to_string()),
            ("pixel_hidden", m.pixel_hidden.to_string()),
            ("anchor_stride", m.anchors.stride.to_string()),
            ("anchor_scales", list(&m.anchors.scales)),
            ("anchor_ratios", list(&m.anchors.ratios)),
            ("init_seed", self.init_seed.to_string()),
            ("seed", t.seed.to_string()),
            ("iterations", t.iterations.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr", t.lr.to_string()),
            ("momentum", t.momentum.to_string()),
            ("warmup", t.warmup.to_string()),
            ("lr_milestones", list(&t.lr_milestones)),
            ("lr_decay", t.lr_decay.to_string()),
            ("lambda_reg", t.lambda_reg.to_string()),
            ("lambda_mask", t.lambda_mask.to_string()),
            ("focal_alpha", t.focal_alpha.to_string()),
            ("focal_gamma", t.focal_gamma.to_string()),
            ("grad_clip", t.grad_clip.to_string()),
            ("flip", t.flip.to_string()),
            ("train_expand", t.mask.expand_ratio.to_string()),
            ("train_crop", t.mask.crop.to_string()),
            ("ohem_bg_per_fg", t.mask.bg_per_fg.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("mbrm_scope", self.mbrm_scope.to_string()),
            ("mbrm_gamma", self.mbrm_gamma.to_string()),
            ("mbrm_lr", self.mbrm_train.lr.to_string()),
            ("mbrm_momentum", self.mbrm_train.momentum.to_string()),
            ("mbrm_iterations", self.mbrm_train.iterations.to_string()),
            ("mbrm_batch_size", self.mbrm_train.batch_size.to_string()),
            ("score_threshold", self.infer.score_threshold.to_string()),
            ("nms_iou", self.infer.nms_iou.to_string()),
            ("infer_expand", self.infer.expand_ratio.to_string()),
            ("mask_threshold", self.infer.mask_threshold.to_string()),
            ("max_detections", self.infer.max_detections.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let opt_path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "dataset" => self.dataset = opt_path(v),
            "out" => self.out = opt_path(v),
            "image_size" => self.scene.image_size = parse(key, v)?,
            "min_instances" => self.scene.min_instances = parse(key, v)?,
            "max_instances" => self.scene.max_instances = parse(key, v)?,
            "num_classes" => {
                self.scene.num_classes = parse(key, v)?;
                self.model.num_classes = self.scene.num_classes;
            }
            "noise" => self.scene.noise = parse(key, v)?,
            "repr_dim" => self.model.repr_dim = parse(key, v)?,
            "backbone_width" => self.model.backbone_width = parse(key, v)?,
            "head_width" => self.model.head_width = parse(key, v)?,
            "pixel_hidden" => self.model.pixel_hidden = parse(key, v)?,
            "anchor_stride" => self.model.anchors.stride = parse(key, v)?,
            "anchor_scales" => self.model.anchors.scales = parse_list(key, v)?,
            "anchor_ratios" => self.model.anchors.ratios = parse_list(key, v)?,
            "init_seed" => self.init_seed = parse(key, v)?,
            "seed" => self.train.seed = parse(key, v)?,
            "iterations" => self.train.iterations = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "lr" => self.train.lr = parse(key, v)?,
            "momentum" => self.train.momentum = parse(key, v)?,
            "warmup" => self.train.warmup = parse(key, v)?,
            "lr_milestones" => self.train.lr_milestones = parse_list(key, v)?,
            "lr_decay" => self.train.lr_decay = parse(key, v)?,
            "lambda_reg" => self.train.lambda_reg = parse(key, v)?,
            "lambda_mask" => self.train.lambda_mask = parse(key, v)?,
            "focal_alpha" => self.train.focal_alpha = parse(key, v)?,
            "focal_gamma" => self.train.focal_gamma = parse(key, v)?,
            "grad_clip" => self.train.grad_clip = parse(key, v)?,
            "flip" => self.train.flip = parse(key, v)?,
            "train_expand" => self.train.mask.expand_ratio = parse(key, v)?,
            "train_crop" => self.train.mask.crop = parse(key, v)?,
            "ohem_bg_per_fg" => self.train.mask.bg_per_fg = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "mbrm_scope" => self.mbrm_scope = parse(key, v)?,
            "mbrm_gamma" => self.mbrm_gamma = parse(key, v)?,
            "mbrm_lr" => self.mbrm_train.lr = parse(key, v)?,
            "mbrm_momentum" => self.mbrm_train.momentum = parse(key, v)?,
            "mbrm_iterations" => self.mbrm_train.iterations = parse(key, v)?,
            "mbrm_batch_size" => self.mbrm_train.batch_size = parse(key, v)?,
            "score_threshold" => self.infer.score_threshold = parse(key, v)?,
            "nms_iou" => self.infer.nms_iou = parse(key, v)?,
            "infer_expand" => self.infer.expand_ratio = parse(key, v)?,
            "mask_threshold" => self.infer.mask_threshold = parse(key, v)?,
            "max_detections" => self.infer.max_detections = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` text; a key may appear at most once.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{raw}`", n + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_owned()) {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
            }
            self.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn render(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.mbrm_params().validate()?;
        if self.scene.num_classes != self.model.num_classes {
            return Err(Error::Config("scene and model class counts differ".into()));
        }
        if !(self.train.mask.expand_ratio >= 1.0) || !(self.infer.expand_ratio >= 1.0) {
            return Err(Error::Config("expansion ratios must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Untrained MBRM parameters with the configured scope and γ.
    pub fn mbrm_params(&self) -> MbrmParams {
        MbrmParams::zeros(self.mbrm_scope, self.mbrm_gamma)
    }
}
