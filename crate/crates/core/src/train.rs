//! Contrastive base loss, the generated-over-real score penalty, the
//! momentum training loop, and contamination / sampling-probability sweeps.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bias::{evaluate_bias, provenance_metric, score_distribution, BiasReport, ScoreDistribution};
use crate::dataset::{dot, Dataset, EmbeddingTable, Provenance, Seed, Triple};
use crate::encoder::{init_model, Activation, DualEncoderModel, GradientSet, Init};
use crate::error::{Error, Result};
use crate::ranking::MetricSpec;
use crate::synth::{mix_training_set, TrainingPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    /// `max(0, Δs)` per sampled triple.
    #[default]
    IndicatorHinge,
    /// `Δs` per sampled triple.
    IndicatorRaw,
}

/// Parameters that receive the penalty gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyTarget {
    Both,
    /// Query representations are treated as constants inside the penalty.
    #[default]
    ImageHead,
}

/// Which terms of the objective to evaluate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub base: bool,
    pub penalty: Option<PenaltyMode>,
    pub penalty_weight: f64,
}

impl LossSpec {
    pub fn base_only() -> Self {
        Self {
            base: true,
            penalty: None,
            penalty_weight: 0.0,
        }
    }

    pub fn penalty_only(mode: PenaltyMode, weight: f64) -> Self {
        Self {
            base: false,
            penalty: Some(mode),
            penalty_weight: weight,
        }
    }

    pub fn combined(mode: PenaltyMode, weight: f64) -> Self {
        Self {
            base: true,
            penalty: Some(mode),
            penalty_weight: weight,
        }
    }
}

/// A mini-batch: caption/image pairs for the contrastive term and the
/// sampled triples whose penalty applies to this batch.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub qry_table: &'a EmbeddingTable,
    pub img_table: &'a EmbeddingTable,
    pub pairs: &'a [TrainingPair],
    pub triples: &'a [Triple],
}

fn forward_rows(
    head: &crate::encoder::ProjectionHead,
    table: &EmbeddingTable,
    rows: impl Iterator<Item = usize>,
) -> Result<Vec<Activation>> {
    rows.map(|r| {
        let x = table.get(r).ok_or_else(|| {
            Error::InvalidParameter(format!("row {r} outside a {}-row table", table.len()))
        })?;
        head.forward(x)
    })
    .collect()
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Symmetric in-batch softmax cross-entropy, averaged over both directions.
pub fn base_loss(model: &DualEncoderModel, batch: &Batch) -> Result<(f64, GradientSet)> {
    let n = batch.pairs.len();
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    let tau = model.temperature;
    let qa = forward_rows(&model.query_head, batch.qry_table, batch.pairs.iter().map(|p| p.caption_row))?;
    let ia = forward_rows(&model.image_head, batch.img_table, batch.pairs.iter().map(|p| p.image_row))?;

    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            s[i * n + j] = dot(&qa[i].out, &ia[j].out) / tau;
        }
    }
    let row_lse: Vec<f64> = (0..n).map(|i| log_sum_exp((0..n).map(|j| s[i * n + j]))).collect();
    let col_lse: Vec<f64> = (0..n).map(|j| log_sum_exp((0..n).map(|i| s[i * n + j]))).collect();

    let inv = 0.5 / n as f64;
    let mut loss = 0.0;
    for i in 0..n {
        loss += inv * (row_lse[i] - s[i * n + i]) + inv * (col_lse[i] - s[i * n + i]);
    }

    // dL/dS = inv (softmax_row - I) + inv (softmax_col - I), then chain through S = QIᵀ/τ.
    let d = model.d_out();
    let mut gq = vec![vec![0.0; d]; n];
    let mut gi = vec![vec![0.0; d]; n];
    for i in 0..n {
        for j in 0..n {
            let sij = s[i * n + j];
            let eye = if i == j { 1.0 } else { 0.0 };
            let g = inv * ((sij - row_lse[i]).exp() - eye) + inv * ((sij - col_lse[j]).exp() - eye);
            let g = g / tau;
            for k in 0..d {
                gq[i][k] += g * ia[j].out[k];
                gi[j][k] += g * qa[i].out[k];
            }
        }
    }

    let mut grads = model.zero_gradient();
    for (idx, p) in batch.pairs.iter().enumerate() {
        model.query_head.backward(batch.qry_table.row(p.caption_row), &qa[idx], &gq[idx], &mut grads.query);
        model.image_head.backward(batch.img_table.row(p.image_row), &ia[idx], &gi[idx], &mut grads.image);
    }
    Ok((loss, grads))
}

/// `score(caption, generated) - score(caption, real)` under the model.
pub fn delta_s(
    model: &DualEncoderModel,
    qry_table: &EmbeddingTable,
    img_table: &EmbeddingTable,
    triple: &Triple,
) -> Result<f64> {
    let c = forward_rows(&model.query_head, qry_table, std::iter::once(triple.caption_row))?;
    let ri = [triple.real_row, triple.generated_row];
    let im = forward_rows(&model.image_head, img_table, ri.into_iter())?;
    Ok(dot(&c[0].out, &im[1].out) - dot(&c[0].out, &im[0].out))
}

/// Weighted sum of the per-triple penalty over `batch.triples`.
pub fn penalty_loss(
    model: &DualEncoderModel,
    batch: &Batch,
    mode: PenaltyMode,
    weight: f64,
) -> Result<(f64, GradientSet)> {
    let mut grads = model.zero_gradient();
    let mut loss = 0.0;
    for t in batch.triples {
        let c = forward_rows(&model.query_head, batch.qry_table, std::iter::once(t.caption_row))?;
        let im = forward_rows(&model.image_head, batch.img_table, [t.real_row, t.generated_row].into_iter())?;
        let (c, r, g) = (&c[0], &im[0], &im[1]);
        let ds = dot(&c.out, &g.out) - dot(&c.out, &r.out);
        let active = match mode {
            PenaltyMode::IndicatorRaw => true,
            PenaltyMode::IndicatorHinge => ds > 0.0,
        };
        if !active {
            continue;
        }
        loss += weight * ds;
        let gc: Vec<f64> = g.out.iter().zip(&r.out).map(|(a, b)| weight * (a - b)).collect();
        let gg: Vec<f64> = c.out.iter().map(|v| weight * v).collect();
        let gr: Vec<f64> = gg.iter().map(|v| -v).collect();
        model.query_head.backward(batch.qry_table.row(t.caption_row), c, &gc, &mut grads.query);
        model.image_head.backward(batch.img_table.row(t.generated_row), g, &gg, &mut grads.image);
        model.image_head.backward(batch.img_table.row(t.real_row), r, &gr, &mut grads.image);
    }
    Ok((loss, grads))
}

/// Loss and exact gradient of the selected objective terms.
pub fn gradients(model: &DualEncoderModel, batch: &Batch, spec: &LossSpec) -> Result<(f64, GradientSet)> {
    let (mut loss, mut grads) = if spec.base {
        base_loss(model, batch)?
    } else {
        (0.0, model.zero_gradient())
    };
    if let Some(mode) = spec.penalty {
        let (lp, gp) = penalty_loss(model, batch, mode, spec.penalty_weight)?;
        loss += lp;
        grads.add(&gp);
    }
    Ok((loss, grads))
}

/// Base loss plus the unit-weight penalty over the batch's sampled triples.
pub fn total_loss(model: &DualEncoderModel, batch: &Batch, mode: PenaltyMode) -> Result<(f64, GradientSet)> {
    gradients(model, batch, &LossSpec::combined(mode, 1.0))
}

fn sample_b_with(
    model: &DualEncoderModel,
    qry_table: &EmbeddingTable,
    img_table: &EmbeddingTable,
    triples: &[Triple],
    beta: f64,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    let mut picked = Vec::new();
    for (i, t) in triples.iter().enumerate() {
        let u: f64 = rng.random();
        if delta_s(model, qry_table, img_table, t)? > 0.0 && u < beta {
            picked.push(i);
        }
    }
    Ok(picked)
}

/// Indices of triples with `Δs > 0`, each kept with probability `beta`.
pub fn sample_b(
    model: &DualEncoderModel,
    qry_table: &EmbeddingTable,
    img_table: &EmbeddingTable,
    triples: &[Triple],
    beta: f64,
    seed: Seed,
) -> Result<Vec<usize>> {
    check_beta(beta)?;
    sample_b_with(model, qry_table, img_table, triples, beta, &mut seed.rng())
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidParameter(format!("beta must lie in [0, 1], got {beta}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta: f64,
    pub temperature: f64,
    pub seed: Seed,
    pub penalty_mode: PenaltyMode,
    /// Multiplier on the summed penalty.
    pub penalty_weight: f64,
    pub penalty_target: PenaltyTarget,
    /// When false the head biases stay at their initial value.
    pub train_bias: bool,
    pub init: Init,
    /// Output dimension; defaults to the input dimension.
    pub d_out: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-2,
            momentum: 0.9,
            beta: 0.0,
            temperature: 0.05,
            seed: Seed(0),
            penalty_mode: PenaltyMode::IndicatorHinge,
            penalty_weight: 0.1,
            penalty_target: PenaltyTarget::ImageHead,
            train_bias: false,
            init: Init::Identity,
            d_out: None,
        }
    }
}

impl TrainConfig {
    /// Random initialization with trainable biases and a sharper temperature,
    /// for training a model from scratch rather than adapting identity heads.
    pub fn from_scratch() -> Self {
        Self {
            init: Init::Random,
            train_bias: true,
            temperature: 0.02,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.epochs == 0 || self.batch_size < 2 {
            return bad("epochs must be positive and batch_size at least 2".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.penalty_weight >= 0.0 && self.penalty_weight.is_finite()) {
            return bad(format!("penalty_weight must be non-negative, got {}", self.penalty_weight));
        }
        check_beta(self.beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    /// Mean over batches.
    pub base_loss: f64,
    /// Mean over batches of the weighted penalty.
    pub penalty_loss: f64,
    pub sampled_triples: usize,
    pub eval: Option<BiasReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochTrace>,
}

/// Encodes both tables of a dataset with the model's heads.
pub fn encode_dataset(model: &DualEncoderModel, ds: &Dataset) -> Result<Dataset> {
    let img = model.image_head.encode_table(&ds.img_table)?;
    let qry = model.query_head.encode_table(&ds.qry_table)?;
    ds.with_tables(img, qry)
}

pub fn evaluate_model(model: &DualEncoderModel, ds: &Dataset, specs: &[MetricSpec]) -> Result<BiasReport> {
    evaluate_bias(&encode_dataset(model, ds)?, specs)
}

/// Metric on the corpus restricted to one provenance, encoded by the model.
pub fn single_provenance_metric(
    model: &DualEncoderModel,
    ds: &Dataset,
    provenance: Provenance,
    spec: MetricSpec,
) -> Result<f64> {
    let only = encode_dataset(model, ds)?.single_provenance(provenance)?;
    provenance_metric(&only, provenance, spec)
}

/// Mini-batch momentum descent on the base loss plus the penalty over the
/// triples sampled at the start of every epoch.
///
/// `triples` are matched to batches by caption row. With a held-out set the
/// trace carries a bias report after every epoch.
pub fn train(
    data: &Dataset,
    pairs: &[TrainingPair],
    triples: &[Triple],
    cfg: &TrainConfig,
    heldout: Option<&Dataset>,
) -> Result<(DualEncoderModel, TrainTrace)> {
    cfg.validate()?;
    let d_in = data.qry_table.dim();
    let d_out = cfg.d_out.unwrap_or(d_in);
    let model = init_model(d_in, data.img_table.dim(), d_out, cfg.seed.derive(0), cfg.init, cfg.temperature)?;
    train_from(model, data, pairs, triples, cfg, heldout)
}

/// As [`train`], starting from the given parameters.
pub fn train_from(
    mut model: DualEncoderModel,
    data: &Dataset,
    pairs: &[TrainingPair],
    triples: &[Triple],
    cfg: &TrainConfig,
    heldout: Option<&Dataset>,
) -> Result<(DualEncoderModel, TrainTrace)> {
    cfg.validate()?;
    let mut sample_rng = cfg.seed.derive(1).rng();
    let mut shuffle_rng = cfg.seed.derive(2).rng();
    let mut by_caption: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, t) in triples.iter().enumerate() {
        by_caption.entry(t.caption_row).or_default().push(i);
    }
    let specs = MetricSpec::defaults();
    let mut velocity = vec![0.0; model.num_params()];
    let mut trace = TrainTrace::default();
    let mut order: Vec<usize> = (0..pairs.len()).collect();

    for epoch in 0..cfg.epochs {
        let sampled = sample_b_with(&model, &data.qry_table, &data.img_table, triples, cfg.beta, &mut sample_rng)?;
        let mut in_b = vec![false; triples.len()];
        sampled.iter().for_each(|&i| in_b[i] = true);
        order.shuffle(&mut shuffle_rng);

        let (mut base_sum, mut pen_sum, mut batches) = (0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let batch_pairs: Vec<TrainingPair> = chunk.iter().map(|&i| pairs[i]).collect();
            let batch_triples: Vec<Triple> = batch_pairs
                .iter()
                .filter_map(|p| by_caption.get(&p.caption_row))
                .flatten()
                .filter(|&&t| in_b[t])
                .map(|&t| triples[t].clone())
                .collect();
            let batch = Batch {
                qry_table: &data.qry_table,
                img_table: &data.img_table,
                pairs: &batch_pairs,
                triples: &batch_triples,
            };
            let (lb, mut grads) = base_loss(&model, &batch)?;
            let mut lp = 0.0;
            if !batch_triples.is_empty() {
                let (l, mut gp) = penalty_loss(&model, &batch, cfg.penalty_mode, cfg.penalty_weight)?;
                if cfg.penalty_target == PenaltyTarget::ImageHead {
                    gp.query = crate::encoder::HeadGradient::zeros(&model.query_head);
                }
                grads.add(&gp);
                lp = l;
            }
            if !(lb + lp).is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            if !cfg.train_bias {
                grads.query.bias.iter_mut().for_each(|g| *g = 0.0);
                grads.image.bias.iter_mut().for_each(|g| *g = 0.0);
            }
            let mut params = model.params();
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(grads.flat()) {
                *v = cfg.momentum * *v + g;
                *p -= cfg.learning_rate * *v;
            }
            model.set_params(&params);
            base_sum += lb;
            pen_sum += lp;
            batches += 1;
        }
        let denom = batches.max(1) as f64;
        trace.epochs.push(EpochTrace {
            epoch,
            base_loss: base_sum / denom,
            penalty_loss: pen_sum / denom,
            sampled_triples: sampled.len(),
            eval: heldout.map(|h| evaluate_model(&model, h, &specs)).transpose()?,
        });
    }
    Ok((model, trace))
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub alpha: f64,
    pub report: BiasReport,
    pub ndcg_real_only: f64,
    pub ndcg_generated_only: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAlphaReport {
    /// Metric used for the single-provenance columns.
    pub single_metric: MetricSpec,
    pub rows: Vec<AlphaRow>,
}

/// Trains one model without debiasing per contamination ratio and evaluates
/// it on the held-out set.
pub fn sweep_alpha(
    train_set: &Dataset,
    heldout: &Dataset,
    alphas: &[f64],
    cfg: &TrainConfig,
    specs: &[MetricSpec],
    jobs: usize,
) -> Result<SweepAlphaReport> {
    let single = MetricSpec::ndcg(5);
    let cfg = TrainConfig { beta: 0.0, ..cfg.clone() };
    let run = |&alpha: &f64| -> Result<AlphaRow> {
        let pairs = mix_training_set(train_set, alpha, cfg.seed.derive(3))?;
        let (model, _) = train(train_set, &pairs, &train_set.triples(), &cfg, None)?;
        let encoded = encode_dataset(&model, heldout)?;
        Ok(AlphaRow {
            alpha,
            report: evaluate_bias(&encoded, specs)?,
            ndcg_real_only: provenance_metric(&encoded.single_provenance(Provenance::Real)?, Provenance::Real, single)?,
            ndcg_generated_only: provenance_metric(
                &encoded.single_provenance(Provenance::Generated)?,
                Provenance::Generated,
                single,
            )?,
        })
    };
    let rows = with_pool(jobs, || alphas.par_iter().map(run).collect::<Result<Vec<_>>>())??;
    Ok(SweepAlphaReport { single_metric: single, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub beta: f64,
    pub report: BiasReport,
    pub ndcg_real_only: f64,
    pub distribution: ScoreDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepBetaReport {
    /// Contamination ratio of the shared training pairs.
    pub alpha: f64,
    pub single_metric: MetricSpec,
    pub rows: Vec<BetaRow>,
}

/// Trains one model per sampling probability on the same pairs and seed.
/// Returns the report and the trained models in `betas` order.
#[allow(clippy::too_many_arguments)]
pub fn sweep_beta(
    train_set: &Dataset,
    heldout: &Dataset,
    betas: &[f64],
    alpha: f64,
    cfg: &TrainConfig,
    specs: &[MetricSpec],
    bins: usize,
    jobs: usize,
) -> Result<(SweepBetaReport, Vec<DualEncoderModel>)> {
    betas.iter().try_for_each(|&b| check_beta(b))?;
    let single = MetricSpec::ndcg(5);
    let pairs = mix_training_set(train_set, alpha, cfg.seed.derive(3))?;
    let triples = train_set.triples();
    let run = |&beta: &f64| -> Result<(BetaRow, DualEncoderModel)> {
        let cfg = TrainConfig { beta, ..cfg.clone() };
        let (model, _) = train(train_set, &pairs, &triples, &cfg, None)?;
        let encoded = encode_dataset(&model, heldout)?;
        let row = BetaRow {
            beta,
            report: evaluate_bias(&encoded, specs)?,
            ndcg_real_only: provenance_metric(&encoded.single_provenance(Provenance::Real)?, Provenance::Real, single)?,
            distribution: score_distribution(&encoded, bins)?,
        };
        Ok((row, model))
    };
    let out = with_pool(jobs, || betas.par_iter().map(run).collect::<Result<Vec<_>>>())??;
    let (rows, models) = out.into_iter().unzip();
    Ok((
        SweepBetaReport {
            alpha,
            single_metric: single,
            rows,
        },
        models,
    ))
}
