use std::fs;
use std::path::{Path, PathBuf};

use bcgan::data::{make_gmm, mask_labels, read_idx, Dataset, GmmSpec, Label, Split};
use bcgan::eval::{evaluate, probe_rows, EvalOptions, EvalReport};
use bcgan::nn::{mlp, Activation};
use bcgan::objectives::{LabelRegime, RegimeKind};
use bcgan::stochastic::sample_fake_batch;
use bcgan::trainer::{fit, EpochSummary, Model, TrainState};
use bcgan::{Matrix, Rng};

use crate::checkpoint::Checkpoint;
use crate::config::{parse_config, DatasetKind, GenOutput, RunConfig};
use crate::error::{CliError, Result};
use crate::output::{image_shape, pgm_bytes, write_samples_csv, DirLock, MetricsCsv};

/// Name of the verbatim config copy inside a run directory.
pub const CONFIG_ECHO: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn snapshot_name(epoch: usize) -> String {
    format!("epoch_{epoch:05}.ckpt")
}

/// Everything derived from a config's data section.
pub struct Experiment {
    pub train: Dataset,
    pub test: Dataset,
    pub model: Model,
    pub eval: EvalOptions,
}

impl Experiment {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let data_rng = |stream| Rng::new(cfg.data_seed, stream);
        let (train, mut test, gmm) = match cfg.dataset {
            DatasetKind::Gmm => {
                let train = make_gmm(&cfg.gmm, data_rng(1), Split::Train)?;
                let test_spec = GmmSpec {
                    per_class_count: cfg.gmm_test_per_class,
                    ..cfg.gmm.clone()
                };
                let test = make_gmm(&test_spec, data_rng(3), Split::Test)?;
                (train, test, Some(cfg.gmm.clone()))
            }
            DatasetKind::Idx => {
                let path = |p: &Option<PathBuf>| p.clone().expect("validated by the config parser");
                let mut train = read_idx(path(&cfg.train_images), path(&cfg.train_labels))?;
                if cfg.max_train_rows > 0 && cfg.max_train_rows < train.len() {
                    let idx: Vec<usize> = (0..cfg.max_train_rows).collect();
                    let b = train.select(&idx);
                    train = Dataset::new(b.x, b.labels, train.regime, Split::Train)?;
                }
                let test = read_idx(path(&cfg.test_images), path(&cfg.test_labels))?;
                (train, test, None)
            }
        };
        test.split = Split::Test;
        let k = train.regime.num_classes.max(test.regime.num_classes);
        let train = match cfg.regime {
            RegimeKind::SemiSupervised => mask_labels(&train, cfg.labeled_per_class, data_rng(2))?,
            RegimeKind::Supervised => Dataset {
                regime: LabelRegime::supervised(k),
                ..train
            },
            RegimeKind::Unsupervised => Dataset::new(
                train.x.clone(),
                vec![Label::Unlabeled; train.len()],
                LabelRegime::unsupervised(),
                Split::Train,
            )?,
        };
        let model = Model::new(
            train.regime,
            train.dim(),
            &cfg.disc_hidden,
            &cfg.gen_hidden,
            cfg.gen_output_activation(),
        )?;
        let eval = EvalOptions {
            probe: probe_rows(&test, data_rng(4)),
            gmm,
            coverage_radius: cfg.coverage_radius,
        };
        Ok(Experiment {
            train,
            test,
            model,
            eval,
        })
    }
}

fn read_config(path: &Path) -> Result<(String, RunConfig)> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg = parse_config(&text)?;
    Ok((text, cfg))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub state: TrainState,
    pub checkpoints: Vec<PathBuf>,
}

/// Trains from a config file, writing the config echo, `metrics.csv`,
/// periodic snapshots and a final checkpoint into `out_dir`.
pub fn cmd_train(config_path: &Path) -> Result<TrainOutcome> {
    let (text, cfg) = read_config(config_path)?;
    train_with(&text, &cfg)
}

pub fn train_with(text: &str, cfg: &RunConfig) -> Result<TrainOutcome> {
    let out_dir = cfg.out_dir.clone();
    let _lock = DirLock::acquire(&out_dir)?;
    fs::write(out_dir.join(CONFIG_ECHO), text)?;
    let exp = Experiment::from_config(cfg)?;

    let mut metrics = MetricsCsv::create(&out_dir.join(METRICS_FILE))?;
    let mut checkpoints = Vec::new();
    let mut sink = |state: &TrainState, summary: &EpochSummary| -> bcgan::Result<()> {
        let report = evaluate(state, &exp.test, &cfg.train, &exp.eval)?;
        metrics.write(summary, &report)?;
        if cfg.snapshot_every > 0 && summary.epoch.is_multiple_of(cfg.snapshot_every) {
            let path = out_dir.join(snapshot_name(summary.epoch));
            checkpoint_of(state).save(&path)?;
            checkpoints.push(path);
        }
        Ok(())
    };
    let state = fit(&exp.train, exp.model.clone(), &cfg.train, &mut [&mut sink])?;
    let path = out_dir.join(FINAL_CHECKPOINT);
    checkpoint_of(&state).save(&path)?;
    checkpoints.push(path);
    Ok(TrainOutcome {
        out_dir,
        state,
        checkpoints,
    })
}

pub fn checkpoint_of(state: &TrainState) -> Checkpoint {
    Checkpoint {
        theta: state.theta.clone(),
        omega: state.omega.clone(),
    }
}

/// Rebuilds a state from a checkpoint, checking it against the config's model.
pub fn state_from_checkpoint(ckpt: Checkpoint, model: Model, seed: u64) -> Result<TrainState> {
    TrainState::from_params(model, ckpt.theta, ckpt.omega, seed)
        .map_err(|e| CliError::Checkpoint(format!("does not match the configured model: {e}")))
}

/// Evaluates a checkpoint on the config's test set.
pub fn cmd_eval(checkpoint_path: &Path, config_path: &Path) -> Result<EvalReport> {
    let (_, cfg) = read_config(config_path)?;
    let exp = Experiment::from_config(&cfg)?;
    let state = state_from_checkpoint(Checkpoint::load(checkpoint_path)?, exp.model, cfg.train.seed)?;
    Ok(evaluate(&state, &exp.test, &cfg.train, &exp.eval)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRequest {
    pub checkpoint: PathBuf,
    pub class: usize,
    pub count: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Supplies the generator's dropout and output activation. Defaults to
    /// the config echo next to the checkpoint, then to built-in defaults.
    pub config: Option<PathBuf>,
}

/// Draws `count` samples of one class, each from its own generator function
/// sample. Two-dimensional data goes to `samples.csv`; anything else is
/// written as one PGM per sample.
pub fn cmd_sample(req: &SampleRequest) -> Result<Vec<PathBuf>> {
    let ckpt = Checkpoint::load(&req.checkpoint)?;
    let cfg = match &req.config {
        Some(p) => read_config(p)?.1,
        None => {
            let echo = req
                .checkpoint
                .parent()
                .map(|d| d.join(CONFIG_ECHO))
                .filter(|p| p.is_file());
            match echo {
                Some(p) => read_config(&p)?.1,
                None => RunConfig::default(),
            }
        }
    };
    let omega = &ckpt.omega;
    let classes = omega.layers()[0].in_dim();
    let dim = omega.layers().last().expect("at least one layer").out_dim();
    if req.class >= classes {
        return Err(CliError::Config(format!(
            "class {} out of range: the generator has {classes} classes",
            req.class
        )));
    }
    if req.count == 0 {
        return Ok(Vec::new());
    }
    let output = match cfg.gen_output {
        GenOutput::Fixed(a) => a,
        GenOutput::Auto if dim == 2 => Activation::Identity,
        GenOutput::Auto => Activation::Sigmoid,
    };
    let mut widths: Vec<usize> = omega.layers().iter().map(|l| l.in_dim()).collect();
    widths.push(dim);
    let specs = mlp(&widths, Activation::Softplus, output)?;
    omega.check_specs(&specs)?;

    // one generator function per sample: with a fixed one-hot input, rows
    // drawn from a shared function would all be identical
    let labels = vec![req.class; req.count];
    let rng = Rng::from_seed(req.seed);
    let mut rows = Vec::with_capacity(req.count * dim);
    for i in 0..req.count {
        let fb = sample_fake_batch(omega, &specs, &cfg.train.gen_dropout, &[req.class], classes, rng.derive(i as u64))?;
        rows.extend_from_slice(fb.batch.x.as_slice());
    }
    let x = Matrix::from_vec(req.count, dim, rows)?;

    let _lock = DirLock::acquire(&req.out_dir)?;
    if dim == 2 {
        let path = req.out_dir.join("samples.csv");
        write_samples_csv(&path, &x, &labels)?;
        return Ok(vec![path]);
    }
    let (w, h) = image_shape(dim);
    let mut written = Vec::with_capacity(req.count);
    for (i, row) in x.iter_rows().enumerate() {
        let path = req.out_dir.join(format!("sample_{}_{}.pgm", req.class, i));
        fs::write(&path, pgm_bytes(row, w, h))?;
        written.push(path);
    }
    Ok(written)
}
