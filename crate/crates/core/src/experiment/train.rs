//! Training loop: sample batch → embed → loss → backward → clip → Adam.
//!
//! The embedding forward/backward runs on independent per-chunk tapes (one
//! per `chunk_size` utterances) that may execute in parallel; their
//! gradients are summed in chunk order, so a run is bit-identical whether it
//! uses one thread or many.

use std::path::PathBuf;

use ndarray::{s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, clip_global_norm, AdamConfig, AdamState, Real, Tape};
use crate::exec::Exec;
use crate::frontend::FeatureMatrix;
use crate::loss::{batch_loss_on_tape, sample_batch, BatchSpec, LossConfig, PhraseIndex};
use crate::model::{embed_batch_on_tape, init_params, ModelConfig, ModelParams};
use crate::Result;

use super::evaluate::{evaluate_model, EvalData};
use super::ExperimentError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch: BatchSpec,
    /// Negative-pair weight; `None` means `1/(X-1)`.
    pub gamma: Option<f64>,
    pub optimizer: AdamConfig,
    pub clip_norm: f64,
    pub max_steps: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub eval_seed: u64,
    pub n_enroll: usize,
    pub chunk_size: usize,
    pub real_manifest: Option<PathBuf>,
    pub tts_manifest: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub single_thread: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            batch: BatchSpec::default(),
            gamma: None,
            optimizer: AdamConfig::default(),
            clip_norm: 1.0,
            max_steps: 2000,
            eval_every: 200,
            seed: 0,
            eval_seed: 0,
            n_enroll: crate::metrics::DEFAULT_ENROLL,
            chunk_size: 16,
            real_manifest: None,
            tts_manifest: None,
            eval_manifest: None,
            checkpoint_dir: None,
            cache_dir: None,
            single_thread: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> std::result::Result<(), ExperimentError> {
        if self.max_steps == 0 || self.eval_every == 0 {
            return Err(ExperimentError::Config("max_steps and eval_every must be positive".into()));
        }
        if self.chunk_size == 0 {
            return Err(ExperimentError::Config("chunk_size must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(ExperimentError::Config("clip_norm must be positive".into()));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0) {
                return Err(ExperimentError::Config(format!("gamma must be positive, got {g}")));
            }
        }
        self.batch
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.model
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            gamma: self.gamma.unwrap_or_else(|| self.batch.balanced_gamma()),
        }
    }

    pub fn exec(&self) -> Exec {
        Exec::from_single_thread(self.single_thread)
    }
}

/// Utterance features plus their phrase grouping.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub features: Vec<FeatureMatrix>,
    pub index: PhraseIndex,
}

impl TrainData {
    pub fn new<S: AsRef<str>>(features: Vec<FeatureMatrix>, labels: &[S]) -> Self {
        assert_eq!(features.len(), labels.len(), "one label per utterance");
        Self {
            features,
            index: PhraseIndex::from_labels(labels),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub eer: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<LogRow>,
    pub final_params: ModelParams<f32>,
    /// Best checkpoint by mean AUC (earliest step wins ties); `None` without eval data.
    pub best: Option<BestCheckpoint>,
}

#[derive(Debug, Clone)]
pub struct BestCheckpoint {
    pub step: usize,
    pub eer: f64,
    pub auc: f64,
    pub params: ModelParams<f32>,
}

impl TrainOutcome {
    pub fn best_params(&self) -> &ModelParams<f32> {
        self.best.as_ref().map_or(&self.final_params, |b| &b.params)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.log.iter().map(|r| r.loss).collect()
    }
}

/// Batch loss and its gradient for every tensor of `params` (in
/// [`ModelParams::tensors`] order). `feats` follow [`crate::loss::Batch::utterance_order`].
pub fn loss_and_grads<T: Real>(
    params: &ModelParams<T>,
    feats: &[&FeatureMatrix],
    spec: &BatchSpec,
    loss_cfg: &LossConfig,
    chunk_size: usize,
    exec: Exec,
) -> Result<(T, Vec<Array2<T>>)> {
    let chunks: Vec<&[&FeatureMatrix]> = feats.chunks(chunk_size.max(1)).collect();
    let forward = exec.map(&chunks, |c| -> Result<_> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let out = embed_batch_on_tape(&mut tape, &bound, &params.config, c)?;
        Ok((tape, bound, out))
    });
    let mut chunk_tapes = forward.into_iter().collect::<Result<Vec<_>>>()?;

    let views: Vec<_> = chunk_tapes.iter().map(|(t, _, o)| t.value(*o).view()).collect();
    let embeddings = ndarray::concatenate(Axis(0), &views).expect("equal widths");

    let mut head = Tape::new();
    let e = head.param(embeddings);
    let w = head.param(params.w_scale.clone());
    let b = head.param(params.b_shift.clone());
    let pl = batch_loss_on_tape(&mut head, e, spec, w, b, loss_cfg)?;
    let loss = head.scalar(pl.loss);
    let mut head_grads = head.backward(pl.loss)?;
    let d_e = head_grads.take(e).expect("embeddings feed the loss");

    let mut offsets = Vec::with_capacity(chunk_tapes.len());
    let mut start = 0;
    for c in &chunks {
        offsets.push(start);
        start += c.len();
    }
    let with_offsets: Vec<_> = chunk_tapes.drain(..).zip(offsets).collect();
    let per_chunk = exec.map(&with_offsets, |((tape, bound, out), off)| -> Result<Vec<Array2<T>>> {
        let n = tape.shape(*out).0;
        let seed = d_e.slice(s![*off..*off + n, ..]).to_owned();
        let g = tape.backward_with(*out, seed)?;
        Ok(bound
            .vars()
            .into_iter()
            .zip(params.tensors())
            .map(|(v, p)| g.get_or_zeros(v, p.dim()))
            .collect())
    });

    let mut grads: Vec<Array2<T>> = params.tensors().iter().map(|p| Array2::zeros(p.dim())).collect();
    for chunk_grads in per_chunk {
        for (acc, g) in grads.iter_mut().zip(chunk_grads?) {
            *acc += &g;
        }
    }
    let n = grads.len();
    grads[n - 2] += &head_grads.get_or_zeros(w, (1, 1));
    grads[n - 1] += &head_grads.get_or_zeros(b, (1, 1));
    Ok((loss, grads))
}

/// Runs the full loop. `eval` (if any) is evaluated every `eval_every` steps
/// and after the last step.
pub fn train_model(
    config: &TrainConfig,
    data: &TrainData,
    eval: Option<&EvalData>,
    exec: Exec,
) -> Result<TrainOutcome> {
    config.validate()?;
    let params: ModelParams<f32> = init_params(&config.model, config.seed)?;
    train_from(config, params, data, eval, exec)
}

/// Same as [`train_model`] but starting from given parameters.
pub fn train_from(
    config: &TrainConfig,
    mut params: ModelParams<f32>,
    data: &TrainData,
    eval: Option<&EvalData>,
    exec: Exec,
) -> Result<TrainOutcome> {
    config.validate()?;
    let loss_cfg = config.loss_config();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xba7c_4000);
    let mut adam = AdamState::new(params.tensors());
    let clip = config.clip_norm as f32;
    let mut log = Vec::with_capacity(config.max_steps);
    let mut best: Option<BestCheckpoint> = None;

    for step in 1..=config.max_steps {
        let batch = sample_batch(&data.index, &config.batch, &mut rng)?;
        let feats: Vec<&FeatureMatrix> = batch
            .utterance_order()
            .into_iter()
            .map(|i| &data.features[i])
            .collect();
        let (loss, mut grads) =
            loss_and_grads(&params, &feats, &config.batch, &loss_cfg, config.chunk_size, exec).map_err(|e| {
                if e.is_numerical() {
                    ExperimentError::NumericalFailure(format!("step {step}: {e}")).into()
                } else {
                    e
                }
            })?;
        if !loss.is_finite() {
            return Err(ExperimentError::NumericalFailure(format!("step {step}: loss is {loss}")).into());
        }
        clip_global_norm(&mut grads, clip);
        adam_step(&mut params.tensors_mut(), &grads, &mut adam, &config.optimizer)?;
        params.clamp_loss_scale();

        let mut row = LogRow {
            step,
            loss: loss as f64,
            eer: None,
            auc: None,
        };
        if let Some(ev) = eval {
            if step % config.eval_every == 0 || step == config.max_steps {
                let report = evaluate_model(&params, ev, config.n_enroll, config.eval_seed, exec)?;
                row.eer = Some(report.mean_eer);
                row.auc = Some(report.mean_auc);
                log::info!(
                    "step {step}: loss {:.4} eer {:.2}% auc {:.2}%",
                    loss,
                    report.mean_eer,
                    report.mean_auc
                );
                if best.as_ref().is_none_or(|b| report.mean_auc < b.auc) {
                    best = Some(BestCheckpoint {
                        step,
                        eer: report.mean_eer,
                        auc: report.mean_auc,
                        params: params.clone(),
                    });
                }
            }
        }
        log.push(row);
    }
    Ok(TrainOutcome {
        log,
        final_params: params,
        best,
    })
}

/// `step,loss,eer,auc`; eer/auc are empty on steps without evaluation.
pub fn write_log_csv<W: std::io::Write>(out: W, log: &[LogRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "loss", "eer", "auc"])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in log {
        w.write_record([r.step.to_string(), format!("{:.8}", r.loss), opt(r.eer), opt(r.auc)])?;
    }
    w.flush()
}
