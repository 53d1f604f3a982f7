use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::{ModelParams, ParamVars, PwocConfig, PwocNet};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::train::adam::{adam_step, collect_grads, AdamState};
use crate::train::augment::{augment, AugmentConfig};
use crate::train::loss::{multiscale_loss, GtPyramid, LevelPredictions, LossWeights};
use crate::train::sample::Sample;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub steps: usize,
    pub seed: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            seed: 0,
            lr: 1e-4,
            batch_size: 1,
            weights: LossWeights::default(),
            augment: AugmentConfig::default(),
        }
    }
}

/// Loss values of one optimisation step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    /// Unweighted terms for levels 2 to 6.
    pub per_level: [f64; 5],
}

impl StepLog {
    pub const CSV_HEADER: &'static str = "step,loss,l2,l3,l4,l5,l6";

    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{}", self.step, self.loss);
        for v in self.per_level {
            row.push_str(&format!(",{v}"));
        }
        row
    }
}

/// Describes the first non-finite node of a tape for error messages.
fn non_finite_report<T: Scalar>(tape: &Tape<T>, vars: &ParamVars, at: Var) -> String {
    if let Some(name) = vars.name_of(at) {
        return format!("parameter {name}");
    }
    match tape.op_name(at) {
        Some(op) => format!("output of {op} (node {})", at.index()),
        None => format!("input tensor (node {})", at.index()),
    }
}

/// Forward, backward and one Adam update on `batch`.
pub fn train_step<T: Scalar>(
    config: &PwocConfig,
    params: &mut ModelParams<T>,
    state: &mut AdamState<T>,
    batch: &Sample<T>,
    weights: &LossWeights,
) -> Result<StepLog> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, true);
    let ims = batch.images.clone().map(|im| tape.constant(im));
    let out = PwocNet::new(config, &vars).forward(&mut tape, ims)?;
    let gt = GtPyramid::new(batch.truth.flow.tensor(), &batch.truth.valid)?;
    let terms = multiscale_loss(&mut tape, &LevelPredictions::from(&out), &gt, weights, Some(&vars))?;
    let loss = tape.value(terms.total).data()[0].as_f64();
    if !loss.is_finite() {
        let culprit = tape.first_non_finite().map_or_else(|| "loss".to_string(), |v| non_finite_report(&tape, &vars, v));
        return Err(Error::NonFinite(format!("loss is {loss}; first non-finite value: {culprit}")));
    }
    let grads = tape.backward(terms.total)?;
    let pg = collect_grads(&grads, &vars, params)?;
    if let Some((name, _)) = pg.iter().find(|(_, g)| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of parameter {name}")));
    }
    adam_step(params, &pg, state)?;
    if let Some(name) = params.first_non_finite() {
        return Err(Error::NonFinite(format!("parameter {name} after update")));
    }
    let per_level = terms.per_level.map(|v| tape.value(v).data()[0].as_f64());
    Ok(StepLog { step: state.t as usize, loss, per_level })
}

/// Runs `cfg.steps` updates on minibatches drawn uniformly from `data`.
/// `on_step` sees every log entry and the parameters after the update; an
/// error from it stops training.
pub fn train<T: Scalar>(
    config: &PwocConfig,
    params: &mut ModelParams<T>,
    state: &mut AdamState<T>,
    data: &[Sample<T>],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepLog, &ModelParams<T>) -> Result<()>,
) -> Result<Vec<StepLog>> {
    if data.is_empty() {
        return Err(Error::invalid("train", "empty training set"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("train", "batch size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut logs = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let picked: Vec<Sample<T>> = (0..cfg.batch_size)
            .map(|_| augment(&data[rng.random_range(0..data.len())], &cfg.augment, &mut rng))
            .collect();
        let refs: Vec<&Sample<T>> = picked.iter().collect();
        let batch = Sample::stack(&refs)?;
        let log = train_step(config, params, state, &batch, &cfg.weights)?;
        on_step(&log, params)?;
        logs.push(log);
    }
    Ok(logs)
}
