use serde::{Deserialize, Serialize};
use ssmkit_core::checkpoint::save_checkpoint;
use ssmkit_core::training::{loss_log_csv, train_model, ModelConfig, ShapeModel, TrainConfig, TrainStatus};

use super::read_json;
use crate::error::{CliError, CliResult};
use crate::output::{load_manifest_cohort, RunDir};
use crate::svg::{line_panels, Panel, Series};
use crate::TrainArgs;

/// Contents of `--config`; the `config.json` written into the run directory has the same
/// shape, so it can be passed back to reproduce the run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub fn run(a: &TrainArgs) -> CliResult<()> {
    let mut cfg: TrainFile = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainFile::default(),
    };
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    cfg.train.validate()?;
    let cohort = load_manifest_cohort(&a.manifest)?;
    let dir = RunDir::create(&a.out)?;
    dir.write_json("config.json", &cfg)?;

    let model = ShapeModel::initialize(&cohort, cfg.model.clone(), cfg.train.seed)?;
    log::info!(
        "training {} parameters on {} meshes for {} epochs",
        ssmkit_core::nn::Parameters::num_params(&model),
        cohort.len(),
        cfg.train.epochs
    );
    let every = (cfg.train.epochs / 20).max(1);
    let outcome = train_model(model, &cohort, &cfg.train, &mut |e| {
        if (e.epoch + 1) % every == 0 {
            log::info!("epoch {} chamfer {:.4e} kl {:.4} val {:.4e}", e.epoch + 1, e.chamfer, e.kl, e.val_chamfer);
        }
    })?;

    dir.write("loss_log.csv", loss_log_csv(&outcome.log))?;
    let series = |name: &str, f: &dyn Fn(&ssmkit_core::training::EpochLog) -> f64| Series {
        name: name.into(),
        points: outcome.log.iter().map(|e| (e.epoch as f64, f(e))).collect(),
    };
    let panels = [
        Panel {
            title: "Chamfer".into(),
            xlabel: "epoch".into(),
            ylabel: "L2 chamfer".into(),
            series: vec![series("train", &|e| e.chamfer), series("val", &|e| e.val_chamfer)],
        },
        Panel {
            title: "KL".into(),
            xlabel: "epoch".into(),
            ylabel: "kl".into(),
            series: vec![series("kl", &|e| e.kl)],
        },
    ];
    dir.write("loss_curve.svg", line_panels(&panels))?;
    let train_json = serde_json::to_value(&cfg.train).expect("serializable config");
    save_checkpoint(&dir.path("checkpoint.json"), &outcome.model, Some(train_json))?;
    dir.write_particles("template.particles", &outcome.model.template.points)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        status: &'a str,
        best_epoch: usize,
        epochs_run: usize,
        best_val_chamfer: Option<f64>,
    }
    let best_val = outcome.log.iter().find(|e| e.epoch == outcome.best_epoch).map(|e| e.val_chamfer);
    let status = match &outcome.status {
        TrainStatus::Completed => "completed",
        TrainStatus::Diverged { .. } => "diverged",
    };
    dir.write_json(
        "train_summary.json",
        &Summary { status, best_epoch: outcome.best_epoch, epochs_run: outcome.log.len(), best_val_chamfer: best_val },
    )?;
    match outcome.status {
        TrainStatus::Completed => Ok(()),
        TrainStatus::Diverged { epoch, reason } => Err(CliError::Diverged { epoch, reason }),
    }
}
