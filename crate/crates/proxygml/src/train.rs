//! The training loop, checkpoint evaluation, and the toggle ablation sweep.
//!
//! Determinism: every random draw comes from a ChaCha stream derived from
//! the run seed (data, proxies, head, batch order each have their own
//! stream), and evaluation-time clustering uses a fixed constant seed, so a
//! repeated run writes byte-identical metrics and checkpoints, and
//! re-evaluating a saved checkpoint reproduces the trainer's numbers
//! exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::checkpoint::{save as save_checkpoint, Checkpoint, OptimizerSnapshot};
use crate::config::{DataSource, HeadKind, RunConfig};
use crate::data::{load_file, save_csv, synthetic_clusters, Dataset, EpochSampler, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate_embeddings, EvalReport};
use crate::graph::compute_k;
use crate::loss::{loss_and_gradients, LossSettings};
use crate::model::{EmbeddingHead, ProxySet};
use crate::optim::{adam_step, lr_at_epoch, AdamParams, AdamState};
use crate::rng::{derive_seed, seed_rng, STREAM_BATCHES, STREAM_DATA, STREAM_HEAD, STREAM_PROXIES};

/// One metrics line per epoch, appended to `metrics.jsonl`.
#[derive(Serialize)]
struct EpochRecord<'a> {
    epoch: u64,
    loss_s: f64,
    loss_p: f64,
    loss_total: f64,
    lr_head: f64,
    lr_proxies: f64,
    #[serde(flatten)]
    recall: &'a BTreeMap<String, f64>,
    nmi: f64,
    clamp_events: u64,
}

/// Artifact locations and final numbers from a completed run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
    pub epochs_run: usize,
    pub final_eval: EvalReport,
    /// Mean total loss of the last epoch; `None` for a zero-epoch run.
    pub final_loss_total: Option<f64>,
}

/// The dataset plus the dense relabeling used for training.
struct PreparedData {
    dataset: Dataset,
    train_indices: Vec<usize>,
    test_indices: Vec<usize>,
    /// Dense train label for each original dense label (train classes only).
    train_label_of: Vec<Option<usize>>,
    train_class_count: usize,
}

fn prepare_data(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<PreparedData> {
    let mut dataset = match cfg.data_source() {
        DataSource::Synthetic => {
            let ds = synthetic_clusters(
                cfg.classes,
                cfg.per_class,
                cfg.d_in,
                cfg.noise_sigma,
                derive_seed(cfg.seed, STREAM_DATA),
            )?;
            if let Some(dir) = out_dir {
                save_csv(&ds, &dir.join("dataset.csv"))?;
            }
            ds
        }
        DataSource::File(path) => load_file(&path)?,
    };
    if let Some(tc) = cfg.test_classes {
        dataset.assign_split_by_classes(tc)?;
    }

    let train_indices = dataset.indices_of(Split::Train);
    let test_indices = dataset.indices_of(Split::Test);
    if train_indices.is_empty() {
        return Err(Error::Parameter("the train split is empty".into()));
    }

    // Train over a dense relabeling of the classes present in the train
    // split (with class-disjoint protocols the test classes have no proxy).
    let mut train_label_of = vec![None; dataset.class_count];
    let mut next = 0usize;
    for &i in &train_indices {
        let slot = &mut train_label_of[dataset.labels[i]];
        if slot.is_none() {
            *slot = Some(next);
            next += 1;
        }
    }
    if next < 2 {
        return Err(Error::Parameter(format!(
            "training needs at least 2 classes in the train split, found {next}"
        )));
    }
    Ok(PreparedData {
        dataset,
        train_indices,
        test_indices,
        train_label_of,
        train_class_count: next,
    })
}

pub(crate) fn build_head(cfg: &RunConfig, input_dim: usize) -> Result<EmbeddingHead> {
    match cfg.head {
        HeadKind::Identity => {
            if input_dim != cfg.d_embed {
                return Err(Error::Parameter(format!(
                    "identity head requires the data dimension to equal d_embed, got {input_dim} and {}",
                    cfg.d_embed
                )));
            }
            Ok(EmbeddingHead::identity(input_dim))
        }
        HeadKind::Linear => {
            EmbeddingHead::linear_init(input_dim, cfg.d_embed, derive_seed(cfg.seed, STREAM_HEAD))
        }
    }
}

fn loss_settings(cfg: &RunConfig, k: usize) -> LossSettings {
    LossSettings {
        k,
        lambda: cfg.lambda,
        use_pos_mask: cfg.use_pos_mask,
        use_mask_softmax: cfg.use_mask_softmax,
        use_proxy_reg: cfg.use_proxy_reg,
    }
}

fn evaluate_split(
    head: &EmbeddingHead,
    dataset: &Dataset,
    indices: &[usize],
    ns: &[usize],
) -> Result<EvalReport> {
    let (features, labels) = dataset.gather(indices)?;
    let embedded = head.forward(&features)?;
    evaluate_embeddings(&embedded, &labels, ns)
}

/// Runs the full training loop, writing `dataset.csv` (synthetic runs),
/// `metrics.jsonl`, and `checkpoint.pgck` into the output directory. The
/// checkpoint is rewritten after every epoch; a numeric abort therefore
/// leaves the last healthy epoch on disk.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let out_dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let prepared = prepare_data(cfg, Some(&out_dir))?;
    let dataset = &prepared.dataset;
    if prepared.test_indices.len() < 2 {
        return Err(Error::Parameter(format!(
            "the test split needs at least 2 items for retrieval, found {}; \
             provide a split column or test_classes",
            prepared.test_indices.len()
        )));
    }
    let max_n = *cfg.eval_ns.iter().max().expect("validated non-empty");
    if max_n >= prepared.test_indices.len() {
        return Err(Error::Parameter(format!(
            "eval_ns asks for {max_n} neighbors but the test split has only {} items",
            prepared.test_indices.len()
        )));
    }

    let k = compute_k(cfg.ratio, prepared.train_class_count, cfg.proxies_per_class)?;
    let settings = loss_settings(cfg, k);
    let mut head = build_head(cfg, dataset.dim())?;
    let mut proxies = ProxySet::init(
        prepared.train_class_count,
        cfg.proxies_per_class,
        cfg.d_embed,
        derive_seed(cfg.seed, STREAM_PROXIES),
    )?;

    let hp = AdamParams::default();
    let mut head_state = match head {
        EmbeddingHead::Linear { .. } => Some(AdamState::new(dataset.dim(), cfg.d_embed, cfg.lr_head)),
        EmbeddingHead::Identity { .. } => None,
    };
    let mut proxy_state = AdamState::new(proxies.count(), cfg.d_embed, cfg.lr_proxies);

    let sampler = EpochSampler::new(prepared.train_indices.clone(), cfg.batch_size)?;
    let mut batch_rng = seed_rng(derive_seed(cfg.seed, STREAM_BATCHES));

    let checkpoint_path = out_dir.join("checkpoint.pgck");
    let metrics_path = out_dir.join("metrics.jsonl");
    let snapshot = |head: &EmbeddingHead,
                    proxies: &ProxySet,
                    head_state: &Option<AdamState>,
                    proxy_state: &AdamState| Checkpoint {
        proxies: proxies.clone(),
        head: head.clone(),
        optimizer: Some(OptimizerSnapshot {
            head: head_state.clone(),
            proxies: proxy_state.clone(),
        }),
    };
    save_checkpoint(
        &snapshot(&head, &proxies, &head_state, &proxy_state),
        &checkpoint_path,
    )?;
    let mut metrics_file =
        fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;

    let mut last_eval: Option<EvalReport> = None;
    let mut last_total = f64::NAN;
    for epoch in 0..cfg.epochs as u64 {
        let lr_head = lr_at_epoch(cfg.lr_head, epoch, cfg.decay_every, cfg.decay_factor);
        let lr_proxies = lr_at_epoch(cfg.lr_proxies, epoch, cfg.decay_every, cfg.decay_factor);

        let batches = sampler.epoch(&mut batch_rng);
        let mut sum_s = 0.0;
        let mut sum_p = 0.0;
        let mut sum_total = 0.0;
        let mut clamp_events = 0u64;
        for batch in &batches {
            let (features, raw_labels) = dataset.gather(batch)?;
            let labels: Vec<usize> = raw_labels
                .iter()
                .map(|&orig| {
                    prepared.train_label_of[orig]
                        .expect("train batches only contain train classes")
                })
                .collect();
            let embedded = head.forward(&features)?;
            let bundle = loss_and_gradients(&embedded, &proxies, &labels, &settings)?;
            if !bundle.total_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}; last checkpoint kept at {}",
                    checkpoint_path.display()
                )));
            }
            sum_s += bundle.sample_loss;
            sum_p += bundle.proxy_loss;
            sum_total += bundle.total_loss;
            clamp_events += bundle.clamp_events;

            let head_grads = head.backward(&features, &bundle.grad_embeddings_raw)?;
            if let (EmbeddingHead::Linear { weight }, Some(state), Some(grad)) =
                (&mut head, head_state.as_mut(), head_grads.weight.as_ref())
            {
                adam_step(weight, grad, state, lr_head, &hp)?;
            }
            adam_step(
                &mut proxies.raw,
                &bundle.grad_proxies_raw,
                &mut proxy_state,
                lr_proxies,
                &hp,
            )?;
        }
        let batch_count = batches.len().max(1) as f64;
        let loss_s = sum_s / batch_count;
        let loss_p = sum_p / batch_count;
        let loss_total = sum_total / batch_count;

        let report = evaluate_split(&head, dataset, &prepared.test_indices, &cfg.eval_ns)?;
        let record = EpochRecord {
            epoch,
            loss_s,
            loss_p,
            loss_total,
            lr_head,
            lr_proxies,
            recall: &report.recall,
            nmi: report.nmi,
            clamp_events,
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::Parse(format!("metrics serialization: {e}")))?;
        writeln!(metrics_file, "{line}").map_err(|e| Error::io(&metrics_path, e))?;

        save_checkpoint(
            &snapshot(&head, &proxies, &head_state, &proxy_state),
            &checkpoint_path,
        )?;
        last_eval = Some(report);
        last_total = loss_total;
    }

    // A zero-epoch run is a valid no-op: the initialization checkpoint and an
    // empty metrics body are on disk; evaluate the untouched model for the
    // outcome report.
    let final_eval = match last_eval {
        Some(report) => report,
        None => evaluate_split(&head, dataset, &prepared.test_indices, &cfg.eval_ns)?,
    };
    Ok(TrainOutcome {
        out_dir,
        checkpoint_path,
        metrics_path,
        epochs_run: cfg.epochs,
        final_eval,
        final_loss_total: (cfg.epochs > 0).then_some(last_total),
    })
}

/// Loads a checkpoint and a dataset file and evaluates the embedding on the
/// dataset's test split (or on every item when no test split is marked).
pub fn evaluate_checkpoint(
    checkpoint_path: &Path,
    data_path: &Path,
    ns: &[usize],
    test_classes: Option<usize>,
) -> Result<EvalReport> {
    let checkpoint = crate::checkpoint::load(checkpoint_path)?;
    let mut dataset = load_file(data_path)?;
    if let Some(tc) = test_classes {
        dataset.assign_split_by_classes(tc)?;
    }
    let mut indices = dataset.indices_of(Split::Test);
    if indices.len() < 2 {
        indices = (0..dataset.len()).collect();
    }
    evaluate_split(&checkpoint.head, &dataset, &indices, ns)
}

/// One row of the toggle sweep.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub row: usize,
    pub use_pos_mask: bool,
    pub use_mask_softmax: bool,
    pub use_proxy_reg: bool,
    pub recall_at_1: f64,
    pub nmi: f64,
    pub loss_total: f64,
}

/// The eight toggle combinations, in the conventional report order: all off,
/// each toggle alone, each pair, all on.
pub const ABLATION_GRID: [(bool, bool, bool); 8] = [
    (false, false, false),
    (true, false, false),
    (false, true, false),
    (false, false, true),
    (false, true, true),
    (true, false, true),
    (true, true, false),
    (true, true, true),
];

/// Trains every toggle combination under otherwise identical settings and
/// writes `ablation.json` (plus one run directory per row) under
/// `<out>/ablate/`.
pub fn ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    if !cfg.eval_ns.contains(&1) {
        return Err(Error::Parameter(
            "the ablation compares recall@1, so eval_ns must include 1".into(),
        ));
    }
    if cfg.epochs == 0 {
        return Err(Error::Parameter(
            "the ablation needs at least one training epoch".into(),
        ));
    }
    let base_out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let ablate_dir = base_out.join("ablate");
    fs::create_dir_all(&ablate_dir).map_err(|e| Error::io(&ablate_dir, e))?;

    let mut rows = Vec::with_capacity(ABLATION_GRID.len());
    for (i, &(pos, mask, reg)) in ABLATION_GRID.iter().enumerate() {
        let mut row_cfg = cfg.clone();
        row_cfg.use_pos_mask = pos;
        row_cfg.use_mask_softmax = mask;
        row_cfg.use_proxy_reg = reg;
        row_cfg.out = Some(ablate_dir.join(format!("row{}", i + 1)));
        let outcome = train(&row_cfg)?;
        rows.push(AblationRow {
            row: i + 1,
            use_pos_mask: pos,
            use_mask_softmax: mask,
            use_proxy_reg: reg,
            recall_at_1: outcome.final_eval.recall["recall@1"],
            nmi: outcome.final_eval.nmi,
            loss_total: outcome
                .final_loss_total
                .expect("epochs >= 1 checked above"),
        });
    }
    let json = serde_json::to_string_pretty(&rows)
        .map_err(|e| Error::Parse(format!("ablation serialization: {e}")))?;
    let path = ablate_dir.join("ablation.json");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
