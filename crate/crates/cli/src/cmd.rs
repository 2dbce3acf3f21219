//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zoneforge::eval::report::{
    metrics_markdown, summary_markdown, tabulation_markdown, write_metrics_csv, write_summary_csv, write_tabulation_csv,
};
use zoneforge::eval::{aggregate, evaluate, tabulate_cohort, HdMode, MetricsRow, TestKind};
use zoneforge::io::{load_case, load_cases, read_mask, save_case, write_mask_with, Manifest};
use zoneforge::nn::ArchConfig;
use zoneforge::phantom::{generate_cohort, PhantomConfig};
use zoneforge::prep::{augment_case, prep_case, ElasticParams, Interp, PrepConfig};
use zoneforge::train::{fit, LogRow, Model, OptimizerConfig, Regime, TrainConfig};
use zoneforge::{exec, validate_combo, CaseRecord, Error, Exec, InputCombo, MapKind, MaskSet, Result, RngState, Split};

use crate::overlay::overlay;
use crate::run::{read_config, Run};
use crate::{
    Cli, Command, DataArgs, EvalArgs, Global, HdArg, ModelArgs, OverlayArgs, PhantomArgs, PhantomPreset, PredictArgs,
    RegimeArg, SplitArg, SplitArgs, TabulateArgs, TestArg, TrainArgs, WhichCkpt,
};

pub fn dispatch(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        if !g.deterministic {
            exec::set_threads(n)?;
        }
    }
    match &cli.command {
        Command::Phantom(a) => phantom(g, a),
        Command::Prep(a) => prep(g, a),
        Command::Augment(a) => augment(g, a),
        Command::Split(a) => split(g, a),
        Command::Train(a) => train(g, a),
        Command::Predict(a) => predict(g, a),
        Command::Eval(a) => eval(g, a),
        Command::Tabulate(a) => tabulate(g, a),
        Command::Overlay(a) => overlay_cmd(g, a),
    }
}

fn exec_of(g: &Global) -> Exec {
    if g.deterministic {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

fn note(g: &Global, msg: impl AsRef<str>) {
    if g.verbose > 0 {
        eprintln!("{}", msg.as_ref());
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn save_cases(dir: &Path, cases: &[CaseRecord], run: &Run) -> Result<()> {
    let prov = run.provenance();
    let entries = cases
        .iter()
        .map(|c| save_case(dir, c, Some(&prov)))
        .collect::<Result<Vec<_>>>()?;
    Manifest {
        cases: entries,
        provenance: Some(prov),
    }
    .save(dir)
}

fn phantom(g: &Global, a: &PhantomArgs) -> Result<()> {
    let mut cfg: PhantomConfig = match (&a.config, a.preset) {
        (Some(p), _) => read_config(Some(p))?,
        (None, PhantomPreset::Desk) => PhantomConfig::default(),
        (None, PhantomPreset::Paper) => PhantomConfig::paper_scale(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    #[derive(Serialize)]
    struct Effective<'a> {
        phantom: &'a PhantomConfig,
        count: usize,
    }
    let run = Run::new(
        "phantom",
        cfg.seed,
        &Effective {
            phantom: &cfg,
            count: a.count,
        },
    );
    let cases = generate_cohort(&cfg, cfg.seed, a.count, exec_of(g))?;
    save_cases(&a.out, &cases, &run)?;
    note(g, format!("wrote {} cases to {}", cases.len(), a.out.display()));
    run.finish(&a.out, g.deterministic, g.threads)
}

/// Flat preprocessing and augmentation configuration (`prep.json`).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepFile {
    pub target_spacing_mm: f64,
    pub crop_size: [usize; 2],
    pub image_interp: Interp,
    pub mask_interp: Interp,
    pub alpha: f64,
    pub sigma: f64,
    pub n_augment: usize,
    pub seed: u64,
}

impl Default for PrepFile {
    fn default() -> Self {
        let p = PrepConfig::default();
        let e = ElasticParams::default();
        PrepFile {
            target_spacing_mm: p.target_spacing_mm,
            crop_size: p.crop_size,
            image_interp: p.image_interp,
            mask_interp: p.mask_interp,
            alpha: e.alpha,
            sigma: e.sigma,
            n_augment: e.n_augment,
            seed: 0,
        }
    }
}

impl PrepFile {
    fn prep(&self) -> PrepConfig {
        PrepConfig {
            target_spacing_mm: self.target_spacing_mm,
            crop_size: self.crop_size,
            image_interp: self.image_interp,
            mask_interp: self.mask_interp,
        }
    }

    fn elastic(&self) -> ElasticParams {
        ElasticParams {
            alpha: self.alpha,
            sigma: self.sigma,
            n_augment: self.n_augment,
        }
    }
}

fn load_prep(g: &Global, a: &DataArgs) -> Result<PrepFile> {
    let mut cfg: PrepFile = read_config(a.config.as_deref())?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.prep().validate()?;
    cfg.elastic().validate()?;
    Ok(cfg)
}

fn prep(g: &Global, a: &DataArgs) -> Result<()> {
    let cfg = load_prep(g, a)?;
    let run = Run::new("prep", cfg.seed, &cfg);
    let cases = load_cases(&a.data, None)?;
    let pc = cfg.prep();
    let out = exec_of(g).try_map(cases.len(), |i| prep_case(&cases[i], &pc))?;
    save_cases(&a.out, &out, &run)?;
    note(g, format!("prepared {} cases", out.len()));
    run.finish(&a.out, g.deterministic, g.threads)
}

fn augment(g: &Global, a: &DataArgs) -> Result<()> {
    let cfg = load_prep(g, a)?;
    let run = Run::new("augment", cfg.seed, &cfg);
    let cases = load_cases(&a.data, None)?;
    let p = cfg.elastic();
    let root = RngState::new(cfg.seed);
    let extra = exec_of(g).try_map(cases.len(), |i| {
        if cases[i].split != Split::Train {
            return Ok(Vec::new());
        }
        let mut rng = root.split(i as u64);
        augment_case(&cases[i], &p, &mut rng)
    })?;
    let mut out = Vec::new();
    for (case, aug) in cases.into_iter().zip(extra) {
        out.push(case);
        out.extend(aug);
    }
    save_cases(&a.out, &out, &run)?;
    note(g, format!("wrote {} cases", out.len()));
    run.finish(&a.out, g.deterministic, g.threads)
}

fn split(g: &Global, a: &SplitArgs) -> Result<()> {
    if !(a.train_fraction > 0.0 && a.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {}",
            a.train_fraction
        )));
    }
    let seed = g.seed.unwrap_or(0);
    #[derive(Serialize)]
    struct Effective {
        train_fraction: f64,
    }
    let run = Run::new(
        "split",
        seed,
        &Effective {
            train_fraction: a.train_fraction,
        },
    );
    let mut manifest = Manifest::load(&a.data)?;
    let n = manifest.cases.len();
    if n < 2 {
        return Err(Error::Data("need at least two cases to split".into()));
    }
    let n_train = ((n as f64 * a.train_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    RngState::new(seed).shuffle(&mut order);
    for (rank, &i) in order.iter().enumerate() {
        manifest.cases[i].split = if rank < n_train { Split::Train } else { Split::Test };
    }
    manifest.save(&a.data)?;
    note(g, format!("{n_train} train, {} test", n - n_train));
    run.finish(&a.data, g.deterministic, g.threads)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchPreset {
    #[default]
    Desk,
    PaperScale,
    Tiny,
}

/// Training configuration (`train.json`).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainFile {
    pub preset: ArchPreset,
    /// Full architecture; overrides `preset`. Input channels are always
    /// derived from the regime.
    pub arch: Option<ArchConfig>,
    pub optimizer: OptimizerConfig,
    /// UM combinations when none are given on the command line.
    pub combos: Option<Vec<String>>,
    pub seed: u64,
}

fn parse_combo(key: &str) -> Result<InputCombo> {
    let names: Vec<&str> = key.split(['+', ',']).map(str::trim).collect();
    validate_combo(&names)
}

fn train(g: &Global, a: &TrainArgs) -> Result<()> {
    let file: TrainFile = read_config(a.config.as_deref())?;
    let keys: Vec<String> = if a.combo.is_empty() {
        file.combos.clone().unwrap_or_default()
    } else {
        a.combo.clone()
    };
    let combos = keys.iter().map(|k| parse_combo(k)).collect::<Result<Vec<_>>>()?;
    let regime = match a.regime {
        RegimeArg::Im => Regime::Im,
        RegimeArg::Um => Regime::Um,
    };
    let combos = match regime {
        Regime::Im if combos.len() != 1 => {
            return Err(Error::Config("an individual model needs exactly one --combo".into()))
        }
        Regime::Um if combos.is_empty() => InputCombo::all(),
        _ => combos,
    };
    let in_ch = regime.in_channels(&combos[0]);
    let mut arch = match (&file.arch, file.preset) {
        (Some(arch), _) => arch.clone(),
        (None, ArchPreset::Desk) => ArchConfig::desk(in_ch),
        (None, ArchPreset::PaperScale) => ArchConfig::paper_scale(in_ch),
        (None, ArchPreset::Tiny) => ArchConfig::tiny(in_ch),
    };
    arch.in_channels = in_ch;
    let mut optimizer = file.optimizer.clone();
    if let Some(e) = a.epochs {
        optimizer.epochs = e;
    }
    let cfg = TrainConfig {
        regime,
        combos,
        arch,
        optimizer,
        seed: g.seed.unwrap_or(file.seed),
    };
    cfg.validate()?;
    let run = Run::new("train", cfg.seed, &cfg);
    let cases = load_cases(&a.data, Some(Split::Train))?;
    if cases.is_empty() {
        return Err(Error::Data(format!("no training cases in {}", a.data.display())));
    }
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    write_text(
        &a.out.join("config.json"),
        &(serde_json::to_string_pretty(&cfg).expect("json") + "\n"),
    )?;
    let verbose = g.verbose > 0;
    let mut hook = |row: &LogRow, _: &Model| {
        if verbose {
            eprintln!("epoch {} step {} loss {:.6}", row.epoch, row.step, row.loss);
        }
        true
    };
    let outcome = fit(&cases, &cfg, exec_of(g), Some(&a.out), Some(&mut hook))?;
    note(g, format!("best epoch {}", outcome.best_epoch));
    run.finish(&a.out, g.deterministic, g.threads)
}

fn checkpoint_path(m: &ModelArgs) -> PathBuf {
    if m.model.is_dir() {
        m.model.join(match m.checkpoint {
            WhichCkpt::Best => "best.ckpt",
            WhichCkpt::Final => "final.ckpt",
        })
    } else {
        m.model.clone()
    }
}

fn model_dir(m: &ModelArgs) -> PathBuf {
    if m.model.is_dir() {
        m.model.clone()
    } else {
        m.model.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

struct Loaded {
    model: Model,
    combos: Vec<InputCombo>,
    cases: Vec<CaseRecord>,
}

fn load_for_inference(m: &ModelArgs) -> Result<Loaded> {
    let model = Model::load(&checkpoint_path(m))?;
    let combos = if m.combo.is_empty() {
        model.combos.clone()
    } else {
        m.combo.iter().map(|k| parse_combo(k)).collect::<Result<Vec<_>>>()?
    };
    let split = match m.split {
        SplitArg::Train => Some(Split::Train),
        SplitArg::Test => Some(Split::Test),
        SplitArg::All => None,
    };
    let cases = load_cases(&m.data, split)?;
    if cases.is_empty() {
        return Err(Error::Data(format!("no {:?} cases in {}", m.split, m.data.display())));
    }
    Ok(Loaded { model, combos, cases })
}

fn predict_all(l: &Loaded, combo: &InputCombo, exec: Exec) -> Result<Vec<MaskSet>> {
    l.cases.iter().map(|c| l.model.predict(c, combo, exec)).collect()
}

fn combo_dir(base: &Path, combo: &InputCombo, many: bool) -> PathBuf {
    if many {
        base.join(combo.key())
    } else {
        base.to_path_buf()
    }
}

fn predict(g: &Global, a: &PredictArgs) -> Result<()> {
    let l = load_for_inference(&a.model)?;
    let run = Run::new("predict", g.seed.unwrap_or(0), &checkpoint_path(&a.model));
    let prov = run.provenance();
    let many = l.combos.len() > 1;
    for combo in &l.combos {
        let dir = combo_dir(&a.out, combo, many);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (case, pred) in l.cases.iter().zip(predict_all(&l, combo, exec_of(g))?) {
            write_mask_with(&pred, &dir.join(format!("{}.mmask", case.case_id)), Some(&prov))?;
        }
        note(g, format!("{}: {} predictions", combo.label(), l.cases.len()));
    }
    run.finish(&a.out, g.deterministic, g.threads)
}

fn eval(g: &Global, a: &EvalArgs) -> Result<()> {
    let l = load_for_inference(&a.model)?;
    let out = a.out.clone().unwrap_or_else(|| model_dir(&a.model).join("eval"));
    let mode = match a.hd_mode {
        HdArg::Slice2d => HdMode::Slice2d,
        HdArg::Volume3d => HdMode::Volume3d,
    };
    let run = Run::new("eval", g.seed.unwrap_or(0), &checkpoint_path(&a.model));
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let many = l.combos.len() > 1;
    let mut summaries = Vec::new();
    let mut md = String::new();
    for combo in &l.combos {
        let preds = predict_all(&l, combo, exec_of(g))?;
        let mut rows: Vec<MetricsRow> = Vec::new();
        for (case, pred) in l.cases.iter().zip(&preds) {
            rows.extend(evaluate(&case.case_id, pred, &case.truth, mode)?);
        }
        let name = if many {
            format!("metrics_{}.csv", combo.key())
        } else {
            "metrics.csv".to_string()
        };
        write_metrics_csv(&out.join(name), &rows)?;
        md.push_str(&format!("## {}\n\n{}\n", combo.label(), metrics_markdown(&rows)));
        summaries.push((combo.label().to_string(), aggregate(&rows)?));
    }
    write_summary_csv(&out.join("summary.csv"), &summaries)?;
    write_text(&out.join("summary.md"), &summary_markdown(&summaries))?;
    write_text(&out.join("metrics.md"), &md)?;
    note(g, summary_markdown(&summaries));
    run.finish(&out, g.deterministic, g.threads)
}

fn tabulate(g: &Global, a: &TabulateArgs) -> Result<()> {
    let l = load_for_inference(&a.model)?;
    let out = a.out.clone().unwrap_or_else(|| model_dir(&a.model).join("tabulate"));
    let kinds = a
        .maps
        .iter()
        .map(|s| MapKind::parse(s.trim()))
        .collect::<Result<Vec<_>>>()?;
    let test = match a.test {
        TestArg::Welch => TestKind::Welch,
        TestArg::Paired => TestKind::Paired,
    };
    let combo = l
        .combos
        .first()
        .ok_or_else(|| Error::Config("no input combination".into()))?;
    let run = Run::new("tabulate", g.seed.unwrap_or(0), &checkpoint_path(&a.model));
    let preds = predict_all(&l, combo, exec_of(g))?;
    let items: Vec<(&CaseRecord, &MaskSet)> = l.cases.iter().zip(&preds).collect();
    let t = tabulate_cohort(&items, &kinds, test)?;
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    write_tabulation_csv(&out.join("tabulation.csv"), &t)?;
    let md = tabulation_markdown(&t);
    write_text(&out.join("tabulation.md"), &md)?;
    note(g, md);
    run.finish(&out, g.deterministic, g.threads)
}

fn overlay_cmd(g: &Global, a: &OverlayArgs) -> Result<()> {
    let manifest = Manifest::load(&a.data)?;
    let entry = manifest
        .cases
        .iter()
        .find(|e| e.case_id == a.case_id)
        .ok_or_else(|| Error::Data(format!("no case {} in {}", a.case_id, a.data.display())))?;
    let case = load_case(&a.data, entry)?;
    let kind = MapKind::parse(&a.map)?;
    let masks = match &a.pred {
        Some(p) => read_mask(p)?,
        None => case.truth.clone(),
    };
    let mut cfg = BTreeMap::new();
    cfg.insert("case", a.case_id.clone());
    cfg.insert("map", a.map.clone());
    cfg.insert("scale", a.scale.to_string());
    let run = Run::new("overlay", g.seed.unwrap_or(0), &cfg);
    let written = overlay(&case.case_id, case.map(kind)?, &masks, a.scale, &a.out)?;
    note(g, format!("wrote {} images", written.len()));
    run.finish(&a.out, g.deterministic, g.threads)
}
