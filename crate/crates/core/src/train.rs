//! Training and inference.
//!
//! Two regimes share one optimiser. Under the individual-model regime a
//! network sees exactly the channels of one input combination. Under the
//! unified-model regime one network has a fixed slot per map kind and is
//! trained on every combination, with absent maps zero-filled (zero is the
//! training mean after normalisation).

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::tape::sigmoid;
use crate::nn::{forward, init_params, value_and_grad, ArchConfig, Checkpoint, NetworkParams, Tensor};
use crate::rng::RngState;
use crate::volume::{CaseRecord, InputCombo, MapKind, MaskSet, TieRule, Zone};

/// Probabilities are clipped to `[EPS, 1 - EPS]` inside the loss.
pub const EPS: f64 = 1e-7;

/// Number of input slots under the unified-model regime.
pub const UM_SLOTS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// One network per input combination.
    Im,
    /// One network for all combinations.
    Um,
}

impl Regime {
    pub fn in_channels(self, combo: &InputCombo) -> usize {
        match self {
            Regime::Im => combo.len(),
            Regime::Um => UM_SLOTS,
        }
    }
}

/// How the `decay` coefficient is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// Time-based learning-rate decay `lr / (1 + decay · t)`.
    #[default]
    LearningRate,
    /// L2 weight decay `g + decay · w` at a constant learning rate.
    Weight,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub decay: f64,
    pub decay_mode: DecayMode,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 1e-3,
            momentum: 0.9,
            decay: 1e-6,
            decay_mode: DecayMode::LearningRate,
            batch_size: 25,
            epochs: 300,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.decay >= 0.0) {
            return Err(Error::Config(format!("decay must be >= 0, got {}", self.decay)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate in effect at optimiser step `t` (0-based).
    pub fn lr_at(&self, t: u64) -> f64 {
        match self.decay_mode {
            DecayMode::LearningRate => self.lr / (1.0 + self.decay * t as f64),
            DecayMode::Weight => self.lr,
        }
    }
}

/// One momentum-SGD update: `v ← μ·v + g`, `w ← w − η_t·v`.
pub fn sgd_step(
    params: &mut NetworkParams<f32>,
    grads: &NetworkParams<f32>,
    velocity: &mut NetworkParams<f32>,
    opt: &OptimizerConfig,
    t: u64,
) {
    let lr = opt.lr_at(t) as f32;
    let mu = opt.momentum as f32;
    let wd = match opt.decay_mode {
        DecayMode::Weight => opt.decay as f32,
        DecayMode::LearningRate => 0.0,
    };
    for ((w, g), v) in params.tensors_mut().zip(grads.tensors()).zip(velocity.tensors_mut()) {
        for ((w, &g), v) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *v = mu * *v + g + wd * *w;
            *w -= lr * *v;
        }
    }
}

/// Mean binary cross-entropy of probabilities `pred` against `target`.
pub fn ce_loss(pred: &[f32], target: &[f32]) -> f64 {
    let n = pred.len().max(1) as f64;
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = (p as f64).clamp(EPS, 1.0 - EPS);
            let t = t as f64;
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

/// Loss of sigmoid(`logits`) and its gradient with respect to the logits.
///
/// `scale` multiplies the gradient (e.g. `1 / batch`).
pub fn ce_head(logits: &Tensor<f32>, target: &Tensor<f32>, scale: f64) -> Result<(f64, Tensor<f32>)> {
    if logits.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "logits {:?} vs target {:?}",
            logits.shape(),
            target.shape()
        )));
    }
    let probs: Vec<f32> = logits.data().iter().map(|&z| sigmoid(z)).collect();
    let loss = ce_loss(&probs, target.data());
    let k = scale / probs.len() as f64;
    let grad = probs
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| ((p as f64).clamp(EPS, 1.0 - EPS) - t as f64) * k)
        .map(|g| g as f32)
        .collect();
    Ok((loss, Tensor::from_vec(logits.shape(), grad)?))
}

/// Z-score statistics of one map kind.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub sd: f64,
}

/// Per-kind normalisation, fitted on training cases only.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub stats: BTreeMap<MapKind, ChannelStats>,
    /// Case ids the statistics were computed from.
    pub fitted_on: Vec<String>,
}

impl Normalization {
    pub fn fit(cases: &[CaseRecord], kinds: &[MapKind]) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::Data("cannot fit normalisation on zero cases".into()));
        }
        let mut stats = BTreeMap::new();
        for &kind in kinds {
            let (mut n, mut s, mut ss) = (0.0, 0.0, 0.0);
            for case in cases {
                for &v in case.map(kind)?.values() {
                    let v = v as f64;
                    n += 1.0;
                    s += v;
                    ss += v * v;
                }
            }
            let mean = s / n;
            let var = (ss / n - mean * mean).max(0.0);
            // A constant channel is only centred.
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            stats.insert(kind, ChannelStats { mean, sd });
        }
        Ok(Normalization {
            stats,
            fitted_on: cases.iter().map(|c| c.case_id.clone()).collect(),
        })
    }

    pub fn get(&self, kind: MapKind) -> Result<ChannelStats> {
        self.stats
            .get(&kind)
            .copied()
            .ok_or_else(|| Error::Data(format!("no normalisation statistics for {kind}")))
    }
}

/// One slice ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub case_id: String,
    pub z: usize,
    pub combo: InputCombo,
    /// `[1, C, H, W]`.
    pub input: Tensor<f32>,
    /// `[1, 3, H, W]` with channels PG, CZ, PZ.
    pub target: Tensor<f32>,
}

fn target_slice(truth: &MaskSet, z: usize, hw: [usize; 2]) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(3 * hw[0] * hw[1]);
    for zone in Zone::ALL {
        data.extend(truth.slice(zone, z).iter().map(|&v| v as f32));
    }
    Tensor::from_vec([1, 3, hw[0], hw[1]], data)
}

fn assemble(case: &CaseRecord, combo: &InputCombo, norm: &Normalization, regime: Regime) -> Result<Vec<TrainSample>> {
    let [nx, ny, nz] = case.dims();
    let plane = nx * ny;
    let channels = regime.in_channels(combo);
    let mut out = Vec::with_capacity(nz);
    for z in 0..nz {
        let mut data = vec![0.0f32; channels * plane];
        for (i, &kind) in combo.kinds().iter().enumerate() {
            let slot = match regime {
                Regime::Im => i,
                Regime::Um => kind.slot(),
            };
            let st = norm.get(kind)?;
            let src = case.map(kind)?.slice(z);
            for (d, &v) in data[slot * plane..(slot + 1) * plane].iter_mut().zip(src) {
                *d = ((v as f64 - st.mean) / st.sd) as f32;
            }
        }
        out.push(TrainSample {
            case_id: case.case_id.clone(),
            z,
            combo: combo.clone(),
            input: Tensor::from_vec([1, channels, ny, nx], data)?,
            target: target_slice(&case.truth, z, [ny, nx])?,
        });
    }
    Ok(out)
}

/// Per-slice samples whose channels are exactly `combo`, in combo order.
pub fn assemble_im(case: &CaseRecord, combo: &InputCombo, norm: &Normalization) -> Result<Vec<TrainSample>> {
    assemble(case, combo, norm, Regime::Im)
}

/// Per-slice samples with one slot per map kind; kinds outside `combo` are zero.
pub fn assemble_um(case: &CaseRecord, combo: &InputCombo, norm: &Normalization) -> Result<Vec<TrainSample>> {
    assemble(case, combo, norm, Regime::Um)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub regime: Regime,
    /// The single combination (IM) or the combinations trained jointly (UM).
    pub combos: Vec<InputCombo>,
    pub arch: ArchConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    /// Individual model on `combo` with the desk architecture.
    pub fn im(combo: InputCombo) -> Self {
        TrainConfig {
            regime: Regime::Im,
            arch: ArchConfig::desk(combo.len()),
            combos: vec![combo],
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }

    /// Unified model over all fourteen combinations.
    pub fn um() -> Self {
        TrainConfig {
            regime: Regime::Um,
            arch: ArchConfig::desk(UM_SLOTS),
            combos: InputCombo::all(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.arch.validate()?;
        if self.combos.is_empty() {
            return Err(Error::Config("no input combination given".into()));
        }
        match self.regime {
            Regime::Im if self.combos.len() != 1 => {
                return Err(Error::Config(
                    "an individual model takes exactly one combination".into(),
                ))
            }
            _ => {}
        }
        let want = self.regime.in_channels(&self.combos[0]);
        if self.arch.in_channels != want {
            return Err(Error::Config(format!(
                "architecture expects {} input channels, regime needs {want}",
                self.arch.in_channels
            )));
        }
        Ok(())
    }

    /// Every map kind used by any combination.
    pub fn kinds(&self) -> Vec<MapKind> {
        let mut k: Vec<MapKind> = self.combos.iter().flat_map(|c| c.kinds().iter().copied()).collect();
        k.sort();
        k.dedup();
        k
    }
}

/// A trained network with everything needed to run it.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub params: NetworkParams<f32>,
    pub regime: Regime,
    pub combos: Vec<InputCombo>,
    pub normalization: Normalization,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    regime: Regime,
    combos: Vec<InputCombo>,
    normalization: Normalization,
    #[serde(default)]
    epoch: usize,
    #[serde(default)]
    optimizer: Option<OptimizerConfig>,
}

impl Model {
    pub fn to_checkpoint(&self, step: u64, rng: &RngState, epoch: usize, opt: &OptimizerConfig) -> Result<Checkpoint> {
        let meta = ModelMeta {
            regime: self.regime,
            combos: self.combos.clone(),
            normalization: self.normalization.clone(),
            epoch,
            optimizer: Some(opt.clone()),
        };
        let meta = serde_json::to_value(meta).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Checkpoint {
            params: self.params.clone(),
            step,
            rng: rng.position(),
            meta,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_value(ckpt.meta.clone())
            .map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        Ok(Model {
            params: ckpt.params.clone(),
            regime: meta.regime,
            combos: meta.combos,
            normalization: meta.normalization,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Samples of `case` under this model's regime.
    pub fn samples(&self, case: &CaseRecord, combo: &InputCombo) -> Result<Vec<TrainSample>> {
        assemble(case, combo, &self.normalization, self.regime)
    }

    /// Per-slice probabilities `[nz][3·H·W]` for `case` seen through `combo`.
    pub fn probabilities(&self, case: &CaseRecord, combo: &InputCombo, exec: Exec) -> Result<Vec<Vec<f32>>> {
        if self.regime == Regime::Im && &self.combos[0] != combo {
            return Err(Error::Combo(format!(
                "individual model was trained on {}, not {}",
                self.combos[0].key(),
                combo.key()
            )));
        }
        let samples = self.samples(case, combo)?;
        for s in &samples {
            self.params.check_input(&s.input)?;
        }
        exec.try_map(samples.len(), |i| {
            Ok(forward(&self.params, &samples[i].input)?.into_data())
        })
    }

    /// Thresholded (`p > 0.5`) and zone-repaired masks.
    pub fn predict(&self, case: &CaseRecord, combo: &InputCombo, exec: Exec) -> Result<MaskSet> {
        let probs = self.probabilities(case, combo, exec)?;
        let [nx, ny, nz] = case.dims();
        let plane = nx * ny;
        let mut zones = [vec![0u8; plane * nz], vec![0u8; plane * nz], vec![0u8; plane * nz]];
        for (z, p) in probs.iter().enumerate() {
            for (c, zone) in zones.iter_mut().enumerate() {
                for (d, &v) in zone[z * plane..(z + 1) * plane]
                    .iter_mut()
                    .zip(&p[c * plane..(c + 1) * plane])
                {
                    *d = (v > 0.5) as u8;
                }
            }
        }
        let [pg, cz, pz] = zones;
        MaskSet::repaired(case.dims(), case.truth.spacing_mm(), pg, cz, pz, TieRule::PzWins)
    }
}

/// Convenience wrapper around [`Model::predict`].
pub fn predict(model: &Model, case: &CaseRecord, combo: &InputCombo, exec: Exec) -> Result<MaskSet> {
    model.predict(case, combo, exec)
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    /// Seconds since training started; kept out of the CSV so that logs of
    /// identical runs are byte-identical.
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<LogRow>, _>>()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Ok(TrainLog { rows })
    }

    pub fn best(&self) -> Option<&LogRow> {
        self.rows.iter().min_by(|a, b| a.loss.total_cmp(&b.loss))
    }
}

/// Result of [`fit`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights after the last epoch.
    pub model: Model,
    /// Weights after the epoch with the lowest mean training loss.
    pub best: Model,
    pub best_epoch: usize,
    pub log: TrainLog,
    pub steps: u64,
}

/// Per-epoch callback; returning `false` stops training after that epoch.
pub type EpochHook<'a> = dyn FnMut(&LogRow, &Model) -> bool + 'a;

/// Trains a network on `cases` (all treated as training data).
///
/// Within a batch the per-sample gradients are computed through `exec` and
/// summed in sample order, so results do not depend on the execution mode.
/// If `out_dir` is given, `trainlog.csv`, `best.ckpt` and `final.ckpt` are
/// written there.
pub fn fit(
    cases: &[CaseRecord],
    cfg: &TrainConfig,
    exec: Exec,
    out_dir: Option<&Path>,
    hook: Option<&mut EpochHook<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let norm = Normalization::fit(cases, &cfg.kinds())?;
    let mut samples = Vec::new();
    for combo in &cfg.combos {
        for case in cases {
            samples.extend(assemble(case, combo, &norm, cfg.regime)?);
        }
    }
    if samples.is_empty() {
        return Err(Error::Data("no training slices".into()));
    }

    let mut rng = RngState::new(cfg.seed);
    let mut params = init_params(&cfg.arch, &mut rng)?;
    for s in &samples {
        params.check_input(&s.input)?;
    }
    let mut velocity = NetworkParams::zeros(&cfg.arch)?;
    let opt = &cfg.optimizer;
    let model_of = |p: &NetworkParams<f32>| Model {
        params: p.clone(),
        regime: cfg.regime,
        combos: cfg.combos.clone(),
        normalization: norm.clone(),
    };

    let start = Instant::now();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, NetworkParams<f32>)> = None;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step: u64 = 0;
    let mut hook = hook;
    for epoch in 0..opt.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(opt.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let results = exec.try_map(batch.len(), |i| {
                let s = &samples[batch[i]];
                value_and_grad(&params, &s.input, |logits| ce_head(logits, &s.target, scale))
            })?;
            let mut grads = NetworkParams::zeros(&cfg.arch)?;
            for (loss, g) in &results {
                if !loss.is_finite() {
                    return Err(Error::Train {
                        step: step as usize,
                        reason: format!("non-finite loss {loss}"),
                    });
                }
                epoch_loss += loss;
                grads.add_assign(g);
            }
            if !grads.is_finite() {
                return Err(Error::Train {
                    step: step as usize,
                    reason: "non-finite gradient".into(),
                });
            }
            sgd_step(&mut params, &grads, &mut velocity, opt, step);
            step += 1;
            if !params.is_finite() {
                return Err(Error::Train {
                    step: step as usize,
                    reason: "non-finite weights".into(),
                });
            }
        }
        let row = LogRow {
            epoch,
            step,
            loss: epoch_loss / samples.len() as f64,
            lr: opt.lr_at(step),
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        if best.as_ref().is_none_or(|b| row.loss < b.0) {
            best = Some((row.loss, epoch, params.clone()));
        }
        log.rows.push(row);
        if let Some(h) = hook.as_deref_mut() {
            if !h(log.rows.last().unwrap(), &model_of(&params)) {
                break;
            }
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    let outcome = TrainOutcome {
        model: model_of(&params),
        best: model_of(&best_params),
        best_epoch,
        log,
        steps: step,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        outcome.log.write_csv(&dir.join("trainlog.csv"))?;
        let last_epoch = outcome.log.rows.len() - 1;
        outcome
            .model
            .to_checkpoint(step, &rng, last_epoch, opt)?
            .save(&dir.join("final.ckpt"))?;
        outcome
            .best
            .to_checkpoint(step, &rng, best_epoch, opt)?
            .save(&dir.join("best.ckpt"))?;
    }
    Ok(outcome)
}
