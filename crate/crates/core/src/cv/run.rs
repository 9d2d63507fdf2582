//! Leave-k-out cross-validation over a five-fold plan.
//!
//! Artifacts, when a run directory is given:
//!
//! ```text
//! <run>/split_<i>/checkpoint.bin   parameters (+ checkpoint.cfg sidecar)
//! <run>/split_<i>/history.csv      epoch,train_loss,val_loss,val_f1,lr
//! <run>/split_<i>/report.json      validation report of the split
//! <run>/report.json                aggregated report
//! <run>/table3.csv                 per-class rows for this k
//! <run>/fig10.csv                  model,k,train_size,f1_mean
//! ```

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::metrics::{aggregate_reports, evaluate, ClassificationReport, TABLE3_HEADER};
use super::train::{train_model, Epoch, Progress, TrainConfig};
use super::{enumerate_splits, stratified_folds, CvError, FoldPlan, Split};
use crate::data::{DatasetIndex, LabeledPatch};
use crate::model::{Architecture, Model, ModelKind};

pub const N_FOLDS: usize = 5;

#[derive(Clone, Debug)]
pub struct CvRequest {
    pub kind: ModelKind,
    pub architecture: Architecture,
    pub k: usize,
    pub train: TrainConfig,
    /// Seeds the fold plan, initialization and training streams.
    pub seed: u64,
    /// Upper bound on splits trained concurrently.
    pub jobs: usize,
    pub run_dir: Option<PathBuf>,
}

pub struct SplitOutcome {
    pub split: Split,
    pub report: ClassificationReport,
    pub history: Vec<Epoch>,
    pub best_epoch: usize,
    pub model: Model,
}

pub struct CvOutcome {
    pub plan: FoldPlan,
    pub splits: Vec<SplitOutcome>,
    pub aggregate: ClassificationReport,
}

fn write(path: &Path, contents: &str) -> Result<(), CvError> {
    std::fs::write(path, contents).map_err(|source| CvError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), CvError> {
    std::fs::create_dir_all(path).map_err(|source| CvError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn report_json(report: &ClassificationReport) -> String {
    serde_json::to_string_pretty(report).expect("reports serialize") + "\n"
}

/// Trains and evaluates one model per leave-k-out split.
pub fn run_cross_validation(
    index: &DatasetIndex,
    req: &CvRequest,
    progress: Option<&dyn Progress>,
) -> Result<CvOutcome, CvError> {
    req.train.validate()?;
    req.architecture.validate()?;
    let plan = stratified_folds(index, N_FOLDS, req.seed)?;
    let splits = enumerate_splits(&plan, req.k)?;
    if let Some(dir) = &req.run_dir {
        create_dir(dir)?;
    }
    let run_one = |(i, split): (usize, &Split)| -> Result<SplitOutcome, CvError> {
        let train: Vec<&LabeledPatch> = plan
            .gather(&split.training)
            .into_iter()
            .map(|r| r.resolve(index))
            .collect();
        let val: Vec<&LabeledPatch> = plan
            .gather(&split.validation)
            .into_iter()
            .map(|r| r.resolve(index))
            .collect();
        let mut init_rng = ChaCha8Rng::seed_from_u64(req.seed);
        init_rng.set_stream(1 + i as u64);
        let model = Model::init(req.kind, &req.architecture, &mut init_rng)?;
        let config = TrainConfig {
            seed: req.seed.wrapping_add(1 + i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            ..req.train.clone()
        };
        let tag = format!("{}/k{}/split{i}", req.kind, req.k);
        let trained = train_model(model, &train, &val, &config, &tag, progress)?;
        let mut report = evaluate(&trained.model, &val, 32)?;
        report.train_size = train.len();
        if let Some(dir) = &req.run_dir {
            let sd = dir.join(format!("split_{i}"));
            create_dir(&sd)?;
            trained.model.save(&sd.join("checkpoint.bin"))?;
            let history: String = std::iter::once(Epoch::CSV_HEADER.to_string())
                .chain(trained.history.iter().map(Epoch::csv_row))
                .collect();
            write(&sd.join("history.csv"), &history)?;
            write(&sd.join("report.json"), &report_json(&report))?;
        }
        Ok(SplitOutcome {
            split: split.clone(),
            report,
            history: trained.history,
            best_epoch: trained.best_epoch,
            model: trained.model,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(req.jobs.max(1))
        .build()
        .map_err(|e| crate::ConfigError(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<SplitOutcome> = pool.install(|| {
        splits
            .par_iter()
            .enumerate()
            .map(run_one)
            .collect::<Result<Vec<_>, _>>()
    })?;
    let reports: Vec<ClassificationReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    let aggregate = aggregate_reports(&reports)?;
    if let Some(dir) = &req.run_dir {
        write(&dir.join("report.json"), &report_json(&aggregate))?;
        write(
            &dir.join("table3.csv"),
            &(TABLE3_HEADER.to_string() + &aggregate.table3_rows(req.k)),
        )?;
        write(
            &dir.join("fig10.csv"),
            &(FIG10_HEADER.to_string() + &fig10_row(req.kind, req.k, &aggregate)),
        )?;
    }
    Ok(CvOutcome {
        plan,
        splits: outcomes,
        aggregate,
    })
}

pub const FIG10_HEADER: &str = "model,k,train_size,f1_mean\n";

pub fn fig10_row(kind: ModelKind, k: usize, report: &ClassificationReport) -> String {
    format!("{kind},{k},{},{:.6}\n", report.train_size, report.f1_mean)
}
