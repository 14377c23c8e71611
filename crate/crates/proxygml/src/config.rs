//! Run configuration: a small line-oriented `key = value` format with
//! full-line `#` comments, two named presets, and strict validation.
//!
//! Every key has a default, so an empty file is a valid configuration. A
//! `preset` key is applied before all other keys regardless of where it
//! appears, so explicit keys always win over preset values.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Which embedding head to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Identity,
    Linear,
}

/// Where the training data comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    /// Synthetic Gaussian clusters drawn from the run seed.
    Synthetic,
    /// A dataset file; `.csv` is parsed as CSV, anything else as the binary
    /// format.
    File(PathBuf),
}

/// Complete training/evaluation configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// `None` means synthetic data.
    pub data_path: Option<PathBuf>,
    /// Synthetic: number of classes.
    pub classes: usize,
    /// Synthetic: items per class.
    pub per_class: usize,
    /// Synthetic: cluster noise scale.
    pub noise_sigma: f64,
    /// Synthetic: raw feature dimension.
    pub d_in: usize,
    /// Embedding dimension produced by the head (proxies live here).
    pub d_embed: usize,
    pub head: HeadKind,
    /// Proxies per class.
    pub proxies_per_class: usize,
    /// Fraction of proxies each sample keeps, in (0, 1].
    pub ratio: f64,
    /// Weight of the proxy regularizer.
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_head: f64,
    pub lr_proxies: f64,
    /// Epochs between learning-rate decays.
    pub decay_every: u64,
    /// Multiplicative decay factor, in (0, 1].
    pub decay_factor: f64,
    pub seed: u64,
    pub use_pos_mask: bool,
    pub use_mask_softmax: bool,
    pub use_proxy_reg: bool,
    /// Retrieval depths reported during evaluation (sorted, deduplicated).
    pub eval_ns: Vec<usize>,
    /// Output directory for training artifacts.
    pub out: Option<PathBuf>,
    /// File data: hold out the last `test_classes` classes for evaluation.
    pub test_classes: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_path: None,
            classes: 10,
            per_class: 60,
            noise_sigma: 0.15,
            d_in: 32,
            d_embed: 32,
            head: HeadKind::Identity,
            proxies_per_class: 12,
            ratio: 0.05,
            lambda: 0.3,
            batch_size: 32,
            epochs: 30,
            lr_head: 1e-4,
            lr_proxies: 3e-2,
            decay_every: 20,
            decay_factor: 0.1,
            seed: 42,
            use_pos_mask: true,
            use_mask_softmax: true,
            use_proxy_reg: true,
            eval_ns: vec![1, 2, 4, 8],
            out: None,
            test_classes: None,
        }
    }
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parse(format!("key '{key}': cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Parse(format!(
            "key '{key}': expected 'true' or 'false', got '{other}'"
        ))),
    }
}

impl RunConfig {
    /// Applies a named preset: dataset-shaped bundles of hyper-parameters.
    ///
    /// `cub-like`: many proxies per class with the regularizer on — the
    /// fine-grained, few-images-per-class regime.
    /// `sop-like`: a single proxy per class, no regularizer, and a faster
    /// proxy learning rate — the huge-catalog regime.
    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        match name {
            "cub-like" => {
                self.proxies_per_class = 12;
                self.ratio = 0.05;
                self.lambda = 0.3;
            }
            "sop-like" => {
                self.proxies_per_class = 1;
                self.lambda = 0.0;
                self.ratio = 1.0;
                self.lr_proxies = 3e-1;
            }
            other => {
                return Err(Error::Parse(format!("unknown preset '{other}'")));
            }
        }
        Ok(())
    }

    fn apply_key(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data" => {
                self.data_path = if value == "synthetic" {
                    None
                } else {
                    Some(PathBuf::from(value))
                };
            }
            "classes" => self.classes = parse_scalar(key, value)?,
            "per_class" => self.per_class = parse_scalar(key, value)?,
            "noise_sigma" => self.noise_sigma = parse_scalar(key, value)?,
            "d_in" => self.d_in = parse_scalar(key, value)?,
            "d_embed" => self.d_embed = parse_scalar(key, value)?,
            "head" => {
                self.head = match value {
                    "identity" => HeadKind::Identity,
                    "linear" => HeadKind::Linear,
                    other => {
                        return Err(Error::Parse(format!(
                            "key 'head': expected 'identity' or 'linear', got '{other}'"
                        )))
                    }
                };
            }
            "proxies_per_class" => self.proxies_per_class = parse_scalar(key, value)?,
            "ratio" => self.ratio = parse_scalar(key, value)?,
            "lambda" => self.lambda = parse_scalar(key, value)?,
            "batch_size" => self.batch_size = parse_scalar(key, value)?,
            "epochs" => self.epochs = parse_scalar(key, value)?,
            "lr_head" => self.lr_head = parse_scalar(key, value)?,
            "lr_proxies" => self.lr_proxies = parse_scalar(key, value)?,
            "decay_every" => self.decay_every = parse_scalar(key, value)?,
            "decay_factor" => self.decay_factor = parse_scalar(key, value)?,
            "seed" => self.seed = parse_scalar(key, value)?,
            "use_pos_mask" => self.use_pos_mask = parse_bool(key, value)?,
            "use_mask_softmax" => self.use_mask_softmax = parse_bool(key, value)?,
            "use_proxy_reg" => self.use_proxy_reg = parse_bool(key, value)?,
            "eval_ns" => {
                let mut ns = Vec::new();
                for tok in value.split(',') {
                    let tok = tok.trim();
                    if tok.is_empty() {
                        continue;
                    }
                    ns.push(parse_scalar::<usize>(key, tok)?);
                }
                if ns.is_empty() {
                    return Err(Error::Parse(
                        "key 'eval_ns': need at least one retrieval depth".into(),
                    ));
                }
                ns.sort_unstable();
                ns.dedup();
                self.eval_ns = ns;
            }
            "out" => self.out = Some(PathBuf::from(value)),
            "test_classes" => self.test_classes = Some(parse_scalar(key, value)?),
            other => {
                return Err(Error::Parse(format!("unknown key '{other}'")));
            }
        }
        Ok(())
    }

    /// Parses configuration text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected 'key = value'", idx + 1))
            })?;
            entries.push((idx + 1, key.trim().to_string(), value.trim().to_string()));
        }
        let mut cfg = RunConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        let mut preset: Option<&str> = None;
        for (line_no, key, value) in &entries {
            if seen.contains(&key.as_str()) {
                return Err(Error::Parse(format!(
                    "line {line_no}: duplicate key '{key}'"
                )));
            }
            seen.push(key);
            if key == "preset" {
                preset = Some(value);
            }
        }
        if let Some(name) = preset {
            cfg.apply_preset(name)?;
        }
        for (_, key, value) in &entries {
            if key != "preset" {
                cfg.apply_key(key, value)?;
            }
        }
        Ok(cfg)
    }

    /// Reads, parses, and validates a configuration file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::parse(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The data source implied by `data_path`.
    pub fn data_source(&self) -> DataSource {
        match &self.data_path {
            None => DataSource::Synthetic,
            Some(p) => DataSource::File(p.clone()),
        }
    }

    /// Domain checks across all fields.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Parameter(msg));
        if self.batch_size < 2 {
            return fail(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            ));
        }
        if self.d_embed == 0 {
            return fail("d_embed must be positive".into());
        }
        if self.proxies_per_class == 0 {
            return fail("proxies_per_class must be positive".into());
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return fail(format!("ratio must lie in (0, 1], got {}", self.ratio));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return fail(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            ));
        }
        if !(self.lr_head > 0.0 && self.lr_head.is_finite()) {
            return fail(format!("lr_head must be positive, got {}", self.lr_head));
        }
        if !(self.lr_proxies > 0.0 && self.lr_proxies.is_finite()) {
            return fail(format!(
                "lr_proxies must be positive, got {}",
                self.lr_proxies
            ));
        }
        if self.decay_every == 0 {
            return fail("decay_every must be at least 1".into());
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return fail(format!(
                "decay_factor must lie in (0, 1], got {}",
                self.decay_factor
            ));
        }
        if self.eval_ns.is_empty() {
            return fail("eval_ns must list at least one retrieval depth".into());
        }
        if self.eval_ns.iter().any(|&n| n == 0) {
            return fail("eval_ns depths must be positive".into());
        }
        match self.data_source() {
            DataSource::Synthetic => {
                if self.classes < 2 {
                    return fail(format!(
                        "synthetic data needs at least 2 classes, got {}",
                        self.classes
                    ));
                }
                if self.per_class < 2 {
                    return fail(format!(
                        "synthetic data needs at least 2 items per class, got {}",
                        self.per_class
                    ));
                }
                if self.d_in == 0 {
                    return fail("d_in must be positive".into());
                }
                if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
                    return fail(format!(
                        "noise_sigma must be finite and non-negative, got {}",
                        self.noise_sigma
                    ));
                }
                if self.head == HeadKind::Identity && self.d_in != self.d_embed {
                    return fail(format!(
                        "identity head requires d_in == d_embed, got {} and {}",
                        self.d_in, self.d_embed
                    ));
                }
                if self.test_classes.is_some() {
                    return fail(
                        "test_classes applies only to file data; synthetic data splits items within each class"
                            .into(),
                    );
                }
            }
            DataSource::File(_) => {
                if let Some(tc) = self.test_classes {
                    if tc == 0 {
                        return fail("test_classes must be positive".into());
                    }
                }
            }
        }
        Ok(())
    }

    /// A small, fully-checkable setup for gradient verification: a linear
    /// head over low-dimensional synthetic clusters.
    pub fn gradcheck_default() -> Self {
        Self {
            classes: 5,
            per_class: 6,
            noise_sigma: 0.3,
            d_in: 16,
            d_embed: 16,
            head: HeadKind::Linear,
            proxies_per_class: 3,
            ratio: 0.5,
            lambda: 0.3,
            batch_size: 8,
            epochs: 1,
            eval_ns: vec![1],
            ..Self::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        RunConfig::gradcheck_default().validate().unwrap();
    }

    #[test]
    fn empty_text_yields_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.classes, 10);
        assert_eq!(cfg.eval_ns, vec![1, 2, 4, 8]);
        assert!(cfg.data_path.is_none());
    }

    #[test]
    fn parses_full_file() {
        let text = "\
# training setup
data = synthetic
classes = 6
per_class = 20
noise_sigma = 0.2
d_in = 24
d_embed = 24
head = identity

proxies_per_class = 4
ratio = 0.25
lambda = 0.1
batch_size = 16
epochs = 5
lr_head = 0.001
lr_proxies = 0.05
decay_every = 2
decay_factor = 0.5
seed = 7
use_pos_mask = false
use_mask_softmax = true
use_proxy_reg = false
eval_ns = 8,1,2,2
out = runs/demo
";
        let cfg = RunConfig::parse(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.classes, 6);
        assert_eq!(cfg.per_class, 20);
        assert_eq!(cfg.noise_sigma, 0.2);
        assert_eq!(cfg.head, HeadKind::Identity);
        assert_eq!(cfg.proxies_per_class, 4);
        assert_eq!(cfg.ratio, 0.25);
        assert!(!cfg.use_pos_mask);
        assert!(!cfg.use_proxy_reg);
        assert_eq!(cfg.eval_ns, vec![1, 2, 8]);
        assert_eq!(cfg.out.as_deref(), Some(Path::new("runs/demo")));
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn unknown_and_duplicate_keys_fail() {
        match RunConfig::parse("widget = 3\n") {
            Err(Error::Parse(msg)) => assert!(msg.contains("widget")),
            other => panic!("expected parse error, got {other:?}"),
        }
        match RunConfig::parse("seed = 1\nseed = 2\n") {
            Err(Error::Parse(msg)) => assert!(msg.contains("duplicate")),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            RunConfig::parse("just a line\n"),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn bad_values_fail_with_key_context() {
        match RunConfig::parse("ratio = high\n") {
            Err(Error::Parse(msg)) => assert!(msg.contains("ratio")),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            RunConfig::parse("use_pos_mask = True\n"),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            RunConfig::parse("head = conv\n"),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            RunConfig::parse("eval_ns = ,\n"),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn presets_apply_before_other_keys() {
        let cfg = RunConfig::parse("preset = sop-like\n").unwrap();
        assert_eq!(cfg.proxies_per_class, 1);
        assert_eq!(cfg.lambda, 0.0);
        assert_eq!(cfg.ratio, 1.0);
        assert_eq!(cfg.lr_proxies, 3e-1);

        // Explicit keys beat the preset even when written above it.
        let cfg = RunConfig::parse("ratio = 0.2\npreset = cub-like\n").unwrap();
        assert_eq!(cfg.ratio, 0.2);
        assert_eq!(cfg.proxies_per_class, 12);
        assert_eq!(cfg.lambda, 0.3);

        assert!(matches!(
            RunConfig::parse("preset = imagenet\n"),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn file_data_and_test_classes() {
        let cfg = RunConfig::parse("data = sets/train.csv\ntest_classes = 4\n").unwrap();
        assert_eq!(cfg.data_source(), DataSource::File(PathBuf::from("sets/train.csv")));
        assert_eq!(cfg.test_classes, Some(4));
        cfg.validate().unwrap();

        let synth = RunConfig::parse("test_classes = 4\n").unwrap();
        assert!(matches!(synth.validate(), Err(Error::Parameter(_))));
    }

    #[test]
    fn validate_rejects_out_of_domain_values() {
        let mut cfg = RunConfig::default();
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.ratio = 0.0;
        assert!(cfg.validate().is_err());
        cfg.ratio = 1.5;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.lambda = -0.2;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.d_embed = 16; // identity head with d_in = 32
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.decay_factor = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.lr_head = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.eval_ns = vec![];
        assert!(cfg.validate().is_err());

        // A zero-epoch run is a valid no-op (initialization only).
        let mut cfg = RunConfig::default();
        cfg.epochs = 0;
        cfg.validate().unwrap();
    }
}
