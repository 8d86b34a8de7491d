//! Strict line-oriented run configuration: `[section]` headers and
//! `key = value` lines, unknown keys rejected, every violated invariant
//! reported at once. An empty file is a complete default configuration.

use super::PipelineError;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Learning-rate stage over the half-open epoch range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage {
    pub start: usize,
    pub end: usize,
    pub lr: f64,
}

impl Stage {
    fn format(&self) -> String {
        format!("{}:{}:{}", self.start, self.end, self.lr)
    }
}

/// Where training and evaluation samples come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    /// Scenes generated on the fly at the model's input size. The dataset
    /// seed is independent of the run seed so reruns with different run
    /// seeds train on identical data.
    Synthetic {
        class_count: usize,
        min_objects: usize,
        max_objects: usize,
        train_count: usize,
        test_count: usize,
        seed: u64,
    },
    /// Datasets on disk in the standard layout; training roots merge in
    /// the order given.
    Disk { roots: Vec<PathBuf>, test_root: PathBuf },
}

/// Object-perturbation settings for phase 2 and standalone augmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSettings {
    pub batch_prob: f64,
    pub n_range: (usize, usize),
    pub mode_weights: [f64; 3],
    pub salt_density: f64,
    pub contrast_alpha_range: (f64, f64),
    /// Use ground-truth masks instead of generator masks in phase 2
    /// (ablation switch).
    pub use_gt_masks: bool,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        AugmentSettings {
            batch_prob: 0.5,
            n_range: (1, 7),
            mode_weights: [1.0 / 3.0; 3],
            salt_density: 0.05,
            contrast_alpha_range: (1.2, 1.8),
            use_gt_masks: false,
        }
    }
}

/// Paper-scale epoch boundaries; actual schedules divide these by
/// `epoch_scale` unless given explicitly.
const FULL_PHASE1: [(usize, usize, f64); 3] =
    [(0, 120, 1e-3), (120, 160, 1e-4), (160, 200, 1e-5)];
const FULL_PHASE2_EPOCHS: usize = 200;
const FULL_GAN_EPOCHS: usize = 20;

/// A validated run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub dataset: DatasetSpec,
    pub input_size: usize,
    pub aspect_ratios: Vec<f64>,
    pub batch_size: usize,
    pub seed: u64,
    pub lambda_p: f64,
    /// Factor the paper-scale epoch counts are divided by when a schedule
    /// is not given explicitly.
    pub epoch_scale: usize,
    pub phase1_schedule: Vec<Stage>,
    pub phase2_schedule: Vec<Stage>,
    pub gan_epochs: usize,
    pub gan_lr: f64,
    pub augment: AugmentSettings,
    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let scale = 10;
        PipelineConfig {
            dataset: DatasetSpec::Synthetic {
                class_count: 3,
                min_objects: 1,
                max_objects: 3,
                train_count: 500,
                test_count: 100,
                seed: 0,
            },
            input_size: 64,
            aspect_ratios: vec![2.0],
            batch_size: 8,
            seed: 0,
            lambda_p: 10.0,
            epoch_scale: scale,
            phase1_schedule: scaled_phase1(scale),
            phase2_schedule: scaled_phase2(scale),
            gan_epochs: (FULL_GAN_EPOCHS / scale).max(1),
            gan_lr: 1e-3,
            augment: AugmentSettings::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

fn scaled_phase1(scale: usize) -> Vec<Stage> {
    FULL_PHASE1
        .iter()
        .map(|&(start, end, lr)| Stage { start: start / scale, end: end / scale, lr })
        .filter(|s| s.end > s.start)
        .collect()
}

fn scaled_phase2(scale: usize) -> Vec<Stage> {
    let end = (FULL_PHASE2_EPOCHS / scale).max(1);
    vec![Stage { start: 0, end, lr: 1e-4 }]
}

impl PipelineConfig {
    pub fn total_epochs(schedule: &[Stage]) -> usize {
        schedule.last().map_or(0, |s| s.end)
    }

    /// Learning rate for `epoch` under a validated schedule.
    pub fn lr_at(schedule: &[Stage], epoch: usize) -> Option<f64> {
        schedule.iter().find(|s| epoch >= s.start && epoch < s.end).map(|s| s.lr)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size must be at least 1".to_string());
        }
        if self.input_size == 0 || self.input_size % 16 != 0 {
            problems.push(format!(
                "input_size must be a positive multiple of 16, got {}",
                self.input_size
            ));
        }
        if self.aspect_ratios.is_empty() || self.aspect_ratios.iter().any(|&r| !(r > 0.0)) {
            problems.push("aspect_ratios must be non-empty and positive".to_string());
        }
        if self.epoch_scale == 0 {
            problems.push("epoch_scale must be at least 1".to_string());
        }
        if !(self.lambda_p >= 0.0 && self.lambda_p.is_finite()) {
            problems.push("lambda_p must be non-negative".to_string());
        }
        if !(self.gan_lr > 0.0 && self.gan_lr.is_finite()) {
            problems.push("gan_lr must be positive".to_string());
        }
        check_schedule("phase1_schedule", &self.phase1_schedule, &mut problems);
        check_schedule("phase2_schedule", &self.phase2_schedule, &mut problems);
        match &self.dataset {
            DatasetSpec::Synthetic { class_count, min_objects, max_objects, train_count, .. } => {
                if *class_count == 0 {
                    problems.push("dataset classes must be at least 1".to_string());
                }
                if *min_objects == 0 || min_objects > max_objects {
                    problems.push(format!(
                        "object count range {min_objects}..{max_objects} is invalid"
                    ));
                }
                if *train_count == 0 {
                    problems.push("train_count must be at least 1".to_string());
                }
            }
            DatasetSpec::Disk { roots, .. } => {
                if roots.is_empty() {
                    problems.push("disk datasets need at least one root".to_string());
                }
            }
        }
        let a = &self.augment;
        if !(0.0..=1.0).contains(&a.batch_prob) {
            problems.push(format!("batch_prob must be in [0,1], got {}", a.batch_prob));
        }
        if a.n_range.0 == 0 || a.n_range.0 > a.n_range.1 {
            problems.push(format!("n range {}..{} is invalid", a.n_range.0, a.n_range.1));
        }
        if a.mode_weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite())
            || a.mode_weights.iter().sum::<f64>() <= 0.0
        {
            problems.push("mode weights must be non-negative with a positive sum".to_string());
        }
        if !(0.0..=1.0).contains(&a.salt_density) {
            problems.push(format!("salt_density must be in [0,1], got {}", a.salt_density));
        }
        if !(a.contrast_alpha_range.0 > 0.0 && a.contrast_alpha_range.1 >= a.contrast_alpha_range.0)
        {
            problems.push(format!(
                "contrast range {}..{} is invalid",
                a.contrast_alpha_range.0, a.contrast_alpha_range.1
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Validation(problems.join("\n")))
        }
    }

    /// Canonical text form: parsing it reproduces this configuration.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        s.push_str("[dataset]\n");
        match &self.dataset {
            DatasetSpec::Synthetic {
                class_count,
                min_objects,
                max_objects,
                train_count,
                test_count,
                seed,
            } => {
                s.push_str("kind = synthetic\n");
                let _ = writeln!(s, "classes = {class_count}");
                let _ = writeln!(s, "min_objects = {min_objects}");
                let _ = writeln!(s, "max_objects = {max_objects}");
                let _ = writeln!(s, "train_count = {train_count}");
                let _ = writeln!(s, "test_count = {test_count}");
                let _ = writeln!(s, "seed = {seed}");
            }
            DatasetSpec::Disk { roots, test_root } => {
                s.push_str("kind = disk\n");
                for r in roots {
                    let _ = writeln!(s, "root = {}", r.display());
                }
                let _ = writeln!(s, "test_root = {}", test_root.display());
            }
        }
        s.push_str("\n[model]\n");
        let _ = writeln!(s, "input_size = {}", self.input_size);
        let ratios: Vec<String> = self.aspect_ratios.iter().map(|r| r.to_string()).collect();
        let _ = writeln!(s, "aspect_ratios = {}", ratios.join(", "));
        s.push_str("\n[train]\n");
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "lambda_p = {}", self.lambda_p);
        let _ = writeln!(s, "epoch_scale = {}", self.epoch_scale);
        let _ = writeln!(s, "phase1_schedule = {}", format_schedule(&self.phase1_schedule));
        let _ = writeln!(s, "phase2_schedule = {}", format_schedule(&self.phase2_schedule));
        let _ = writeln!(s, "gan_epochs = {}", self.gan_epochs);
        let _ = writeln!(s, "gan_lr = {}", self.gan_lr);
        s.push_str("\n[augment]\n");
        let a = &self.augment;
        let _ = writeln!(s, "batch_prob = {}", a.batch_prob);
        let _ = writeln!(s, "n_min = {}", a.n_range.0);
        let _ = writeln!(s, "n_max = {}", a.n_range.1);
        let _ = writeln!(s, "w_channel = {}", a.mode_weights[0]);
        let _ = writeln!(s, "w_salt = {}", a.mode_weights[1]);
        let _ = writeln!(s, "w_contrast = {}", a.mode_weights[2]);
        let _ = writeln!(s, "salt_density = {}", a.salt_density);
        let _ = writeln!(s, "contrast_lo = {}", a.contrast_alpha_range.0);
        let _ = writeln!(s, "contrast_hi = {}", a.contrast_alpha_range.1);
        let _ = writeln!(s, "use_gt_masks = {}", a.use_gt_masks);
        s.push_str("\n[output]\n");
        let _ = writeln!(s, "dir = {}", self.out_dir.display());
        s
    }
}

fn format_schedule(schedule: &[Stage]) -> String {
    if schedule.is_empty() {
        return "none".to_string();
    }
    let parts: Vec<String> = schedule.iter().map(Stage::format).collect();
    parts.join(", ")
}

fn check_schedule(name: &str, schedule: &[Stage], problems: &mut Vec<String>) {
    let mut expected_start = 0;
    for (i, stage) in schedule.iter().enumerate() {
        if stage.start != expected_start {
            problems.push(format!(
                "{name} stage {i} starts at {} but the previous stage ends at {expected_start}",
                stage.start
            ));
        }
        if stage.end <= stage.start {
            problems.push(format!("{name} stage {i} range {}..{} is empty", stage.start, stage.end));
        }
        if !(stage.lr > 0.0 && stage.lr.is_finite()) {
            problems.push(format!("{name} stage {i} learning rate must be positive"));
        }
        expected_start = stage.end;
    }
}

/// Parses and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<PipelineConfig, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    parse_config_text(&text)
}

/// [`parse_config`] over in-memory text.
pub fn parse_config_text(text: &str) -> Result<PipelineConfig, PipelineError> {
    let mut problems = Vec::new();
    let mut raw = RawConfig::default();
    let mut section = String::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            if !["dataset", "model", "train", "augment", "output"].contains(&section.as_str()) {
                problems.push(format!("line {}: unknown section [{section}]", lineno + 1));
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            problems.push(format!("line {}: expected key = value, got {line:?}", lineno + 1));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        if let Err(p) = raw.set(&section, key, value) {
            problems.push(format!("line {}: {p}", lineno + 1));
        }
    }
    match raw.build() {
        Ok(config) if problems.is_empty() => {
            config.validate()?;
            Ok(config)
        }
        Ok(_) => Err(PipelineError::Validation(problems.join("\n"))),
        Err(mut build_problems) => {
            problems.append(&mut build_problems);
            Err(PipelineError::Validation(problems.join("\n")))
        }
    }
}

/// Raw key-value capture before defaults and cross-field resolution.
#[derive(Default)]
struct RawConfig {
    kind: Option<String>,
    classes: Option<usize>,
    min_objects: Option<usize>,
    max_objects: Option<usize>,
    train_count: Option<usize>,
    test_count: Option<usize>,
    dataset_seed: Option<u64>,
    roots: Vec<PathBuf>,
    test_root: Option<PathBuf>,
    input_size: Option<usize>,
    aspect_ratios: Option<Vec<f64>>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    lambda_p: Option<f64>,
    epoch_scale: Option<usize>,
    phase1_schedule: Option<Vec<Stage>>,
    phase2_schedule: Option<Vec<Stage>>,
    gan_epochs: Option<usize>,
    gan_lr: Option<f64>,
    batch_prob: Option<f64>,
    n_min: Option<usize>,
    n_max: Option<usize>,
    w_channel: Option<f64>,
    w_salt: Option<f64>,
    w_contrast: Option<f64>,
    salt_density: Option<f64>,
    contrast_lo: Option<f64>,
    contrast_hi: Option<f64>,
    use_gt_masks: Option<bool>,
    out_dir: Option<PathBuf>,
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse {value:?}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {value:?}")),
    }
}

fn parse_schedule(key: &str, value: &str) -> Result<Vec<Stage>, String> {
    if value.is_empty() || value == "none" {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|part| {
            let fields: Vec<&str> = part.trim().split(':').collect();
            if fields.len() != 3 {
                return Err(format!("{key}: stage {part:?} is not start:end:lr"));
            }
            Ok(Stage {
                start: parse_num(key, fields[0])?,
                end: parse_num(key, fields[1])?,
                lr: parse_num(key, fields[2])?,
            })
        })
        .collect()
}

impl RawConfig {
    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        match (section, key) {
            ("dataset", "kind") => self.kind = Some(value.to_string()),
            ("dataset", "classes") => self.classes = Some(parse_num(key, value)?),
            ("dataset", "min_objects") => self.min_objects = Some(parse_num(key, value)?),
            ("dataset", "max_objects") => self.max_objects = Some(parse_num(key, value)?),
            ("dataset", "train_count") => self.train_count = Some(parse_num(key, value)?),
            ("dataset", "test_count") => self.test_count = Some(parse_num(key, value)?),
            ("dataset", "seed") => self.dataset_seed = Some(parse_num(key, value)?),
            ("dataset", "root") => self.roots.push(PathBuf::from(value)),
            ("dataset", "test_root") => self.test_root = Some(PathBuf::from(value)),
            ("model", "input_size") => self.input_size = Some(parse_num(key, value)?),
            ("model", "aspect_ratios") => {
                let ratios: Result<Vec<f64>, String> =
                    value.split(',').map(|r| parse_num(key, r.trim())).collect();
                self.aspect_ratios = Some(ratios?);
            }
            ("train", "batch_size") => self.batch_size = Some(parse_num(key, value)?),
            ("train", "seed") => self.seed = Some(parse_num(key, value)?),
            ("train", "lambda_p") => self.lambda_p = Some(parse_num(key, value)?),
            ("train", "epoch_scale") => self.epoch_scale = Some(parse_num(key, value)?),
            ("train", "phase1_schedule") => {
                self.phase1_schedule = Some(parse_schedule(key, value)?)
            }
            ("train", "phase2_schedule") => {
                self.phase2_schedule = Some(parse_schedule(key, value)?)
            }
            ("train", "gan_epochs") => self.gan_epochs = Some(parse_num(key, value)?),
            ("train", "gan_lr") => self.gan_lr = Some(parse_num(key, value)?),
            ("augment", "batch_prob") => self.batch_prob = Some(parse_num(key, value)?),
            ("augment", "n_min") => self.n_min = Some(parse_num(key, value)?),
            ("augment", "n_max") => self.n_max = Some(parse_num(key, value)?),
            ("augment", "w_channel") => self.w_channel = Some(parse_num(key, value)?),
            ("augment", "w_salt") => self.w_salt = Some(parse_num(key, value)?),
            ("augment", "w_contrast") => self.w_contrast = Some(parse_num(key, value)?),
            ("augment", "salt_density") => self.salt_density = Some(parse_num(key, value)?),
            ("augment", "contrast_lo") => self.contrast_lo = Some(parse_num(key, value)?),
            ("augment", "contrast_hi") => self.contrast_hi = Some(parse_num(key, value)?),
            ("augment", "use_gt_masks") => self.use_gt_masks = Some(parse_bool(key, value)?),
            ("output", "dir") => self.out_dir = Some(PathBuf::from(value)),
            ("", _) => return Err(format!("key {key} appears before any section")),
            _ => return Err(format!("unknown key {key} in section [{section}]")),
        }
        Ok(())
    }

    fn build(self) -> Result<PipelineConfig, Vec<String>> {
        let defaults = PipelineConfig::default();
        let mut problems = Vec::new();
        let dataset = match self.kind.as_deref().unwrap_or("synthetic") {
            "synthetic" => {
                if !self.roots.is_empty() || self.test_root.is_some() {
                    problems.push("synthetic datasets take no root/test_root".to_string());
                }
                DatasetSpec::Synthetic {
                    class_count: self.classes.unwrap_or(3),
                    min_objects: self.min_objects.unwrap_or(1),
                    max_objects: self.max_objects.unwrap_or(3),
                    train_count: self.train_count.unwrap_or(500),
                    test_count: self.test_count.unwrap_or(100),
                    seed: self.dataset_seed.unwrap_or(0),
                }
            }
            "disk" => {
                for (key, set) in [
                    ("classes", self.classes.is_some()),
                    ("train_count", self.train_count.is_some()),
                    ("test_count", self.test_count.is_some()),
                ] {
                    if set {
                        problems.push(format!("disk datasets take no {key}"));
                    }
                }
                DatasetSpec::Disk {
                    roots: self.roots,
                    test_root: self.test_root.unwrap_or_else(|| PathBuf::from("test")),
                }
            }
            other => {
                problems.push(format!("unknown dataset kind {other:?}"));
                defaults.dataset.clone()
            }
        };
        let scale = self.epoch_scale.unwrap_or(defaults.epoch_scale);
        let weights = match (self.w_channel, self.w_salt, self.w_contrast) {
            (None, None, None) => defaults.augment.mode_weights,
            (c, s, k) => {
                let raw = [c.unwrap_or(0.0), s.unwrap_or(0.0), k.unwrap_or(0.0)];
                let total: f64 = raw.iter().sum();
                if total > 0.0 && raw.iter().all(|w| *w >= 0.0 && w.is_finite()) {
                    [raw[0] / total, raw[1] / total, raw[2] / total]
                } else {
                    problems
                        .push("mode weights must be non-negative with a positive sum".to_string());
                    defaults.augment.mode_weights
                }
            }
        };
        let config = PipelineConfig {
            dataset,
            input_size: self.input_size.unwrap_or(defaults.input_size),
            aspect_ratios: self.aspect_ratios.unwrap_or_else(|| defaults.aspect_ratios.clone()),
            batch_size: self.batch_size.unwrap_or(defaults.batch_size),
            seed: self.seed.unwrap_or(defaults.seed),
            lambda_p: self.lambda_p.unwrap_or(defaults.lambda_p),
            epoch_scale: scale,
            phase1_schedule: self
                .phase1_schedule
                .unwrap_or_else(|| scaled_phase1(scale.max(1))),
            phase2_schedule: self
                .phase2_schedule
                .unwrap_or_else(|| scaled_phase2(scale.max(1))),
            gan_epochs: self.gan_epochs.unwrap_or((FULL_GAN_EPOCHS / scale.max(1)).max(1)),
            gan_lr: self.gan_lr.unwrap_or(defaults.gan_lr),
            augment: AugmentSettings {
                batch_prob: self.batch_prob.unwrap_or(defaults.augment.batch_prob),
                n_range: (
                    self.n_min.unwrap_or(defaults.augment.n_range.0),
                    self.n_max.unwrap_or(defaults.augment.n_range.1),
                ),
                mode_weights: weights,
                salt_density: self.salt_density.unwrap_or(defaults.augment.salt_density),
                contrast_alpha_range: (
                    self.contrast_lo.unwrap_or(defaults.augment.contrast_alpha_range.0),
                    self.contrast_hi.unwrap_or(defaults.augment.contrast_alpha_range.1),
                ),
                use_gt_masks: self.use_gt_masks.unwrap_or(false),
            },
            out_dir: self.out_dir.unwrap_or_else(|| defaults.out_dir.clone()),
        };
        if problems.is_empty() {
            Ok(config)
        } else {
            Err(problems)
        }
    }
}
