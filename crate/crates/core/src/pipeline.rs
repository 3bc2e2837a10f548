//! End-to-end commands over a run directory.
//!
//! ```text
//! <out>/config.resolved        every config key of the latest command
//! <out>/STALE                  present after a failed command
//! <out>/dataset/               prepared dataset archive
//! <out>/checkpoints/<name>.ckpt
//! <out>/checkpoints/<name>.settings
//! <out>/logs/<name>.csv        per-epoch training logs
//! <out>/reports/*.csv          metrics, K-sweep and causal reports
//! ```
//!
//! Commands run their prerequisites when the needed artifacts are missing.
//! Every file is written through a temporary name and renamed into place.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::backbone::{init_embeddings, EmbeddingModel, NormalizedGraph};
use crate::causal::{gamma_row, PowerLaw, SyntheticCausalModel, GAMMA_REPORT_HEADER};
use crate::config::{DataSource, DistillMethod, ExperimentConfig};
use crate::dataset::{self, synthetic, InteractionDataset};
use crate::distill::{
    build_plan, cd_baseline_plan, partition_items, DistillMode, DistillPlan, Distiller,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, EvalReport, ReportLabels, REPORT_HEADER};
use crate::rng::derive_seed;
use crate::trainer::{fit_with, Objective, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Prepare,
    TrainTeacher,
    TrainStudentBase,
    Distill,
    Evaluate,
    SweepK,
    LemmaCheck,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Prepare,
        Command::TrainTeacher,
        Command::TrainStudentBase,
        Command::Distill,
        Command::Evaluate,
        Command::SweepK,
        Command::LemmaCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Prepare => "prepare",
            Command::TrainTeacher => "train-teacher",
            Command::TrainStudentBase => "train-student-base",
            Command::Distill => "distill",
            Command::Evaluate => "evaluate",
            Command::SweepK => "sweep-k",
            Command::LemmaCheck => "lemma-check",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown command {s:?}")))
    }
}

const TEACHER_INIT: u64 = 1;
const STUDENT_INIT: u64 = 2;
const DISTILL_PAIRS: u64 = 3;

/// Header of the K-sweep report.
pub const SWEEP_HEADER: &str = "dataset,backbone,K,metric,group,N,value,seed";

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.resolved")
    }

    pub fn stale_marker(&self) -> PathBuf {
        self.root.join("STALE")
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.ckpt"))
    }

    pub fn settings(&self, name: &str) -> PathBuf {
        self.root
            .join("checkpoints")
            .join(format!("{name}.settings"))
    }

    pub fn plan(&self, name: &str) -> PathBuf {
        self.root.join("plans").join(format!("{name}.tsv"))
    }

    pub fn log(&self, name: &str) -> PathBuf {
        self.root.join("logs").join(format!("{name}.csv"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(format!("{name}.csv"))
    }
}

fn write_atomic(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Settings that determine the dataset, the teacher and the base student.
/// A run directory only reuses artifacts made under the same values.
fn shared_fingerprint(cfg: &ExperimentConfig) -> String {
    let d = ExperimentConfig::default();
    let shared = ExperimentConfig {
        method: d.method,
        k: d.k,
        lambda: d.lambda,
        mu: d.mu,
        soft_labels: d.soft_labels,
        pairs_per_group: d.pairs_per_group,
        freeze_pairs: d.freeze_pairs,
        distill_normalization: d.distill_normalization,
        sweep_k_max: d.sweep_k_max,
        causal_users: d.causal_users,
        causal_items: d.causal_items,
        causal_gammas: d.causal_gammas.clone(),
        causal_exponent: d.causal_exponent,
        causal_max_popularity: d.causal_max_popularity,
        causal_baseline: d.causal_baseline,
        allow_off_grid: d.allow_off_grid,
        ..cfg.clone()
    };
    shared.to_text()
}

/// Settings of one distilled student, stored next to its checkpoint.
fn distill_settings(cfg: &ExperimentConfig, method: DistillMethod, k: usize) -> String {
    format!(
        "method = {method}\nk = {k}\nlambda = {:?}\nmu = {:?}\nsoft_labels = {}\npairs_per_group = {}\nfreeze_pairs = {}\ndistill_normalization = {}\n",
        cfg.lambda,
        cfg.mu,
        cfg.soft_labels,
        cfg.pairs_per_group,
        cfg.freeze_pairs,
        cfg.distill_normalization.name()
    )
}

fn student_name(method: DistillMethod) -> String {
    format!("student-{method}")
}

/// Executes pipeline commands for one configuration.
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub dir: RunDir,
    /// Print progress to stderr.
    pub verbose: bool,
}

impl Pipeline {
    pub fn new(config: ExperimentConfig, out: impl Into<PathBuf>) -> Self {
        Pipeline {
            config,
            dir: RunDir::new(out),
            verbose: false,
        }
    }

    fn note(&self, msg: impl fmt::Display) {
        if self.verbose {
            eprintln!("[unkd] {msg}");
        }
    }

    /// Runs `command`. On failure a `STALE` marker naming the command and the
    /// error is left in the run directory; a later success of the same
    /// command removes it.
    pub fn run(&self, command: Command) -> Result<()> {
        self.config.validate()?;
        let result = self.prepare_dir().and_then(|()| self.dispatch(command));
        let marker = self.dir.stale_marker();
        match &result {
            Err(e) => {
                let _ = write_atomic(&marker, format!("command = {command}\nerror = {e}\n"));
            }
            Ok(()) => {
                let same = fs::read_to_string(&marker)
                    .map(|s| s.lines().next() == Some(&format!("command = {command}")))
                    .unwrap_or(false);
                if same {
                    fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
                }
            }
        }
        result
    }

    fn prepare_dir(&self) -> Result<()> {
        let path = self.dir.config();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let previous = ExperimentConfig::parse_text(&text)?;
            if shared_fingerprint(&previous) != shared_fingerprint(&self.config) {
                return Err(Error::Config(format!(
                    "{} was created with different dataset, backbone or training settings; use a fresh output directory",
                    self.dir.root().display()
                )));
            }
        }
        write_atomic(&path, self.config.to_text())
    }

    fn dispatch(&self, command: Command) -> Result<()> {
        match command {
            Command::Prepare => self.prepare().map(drop),
            Command::TrainTeacher => self.train_teacher().map(drop),
            Command::TrainStudentBase => self.train_student_base().map(drop),
            Command::Distill => self.distill().map(drop),
            Command::Evaluate => self.evaluate().map(drop),
            Command::SweepK => self.sweep_k().map(drop),
            Command::LemmaCheck => self.lemma_check().map(drop),
        }
    }

    /// Builds the dataset from the configured source.
    pub fn build_dataset(&self) -> Result<InteractionDataset> {
        let cfg = &self.config;
        let raw = match &cfg.source {
            DataSource::File(path) => {
                dataset::load_interactions(path, &cfg.delimiter, cfg.rating_threshold)?
            }
            DataSource::Synthetic => synthetic::generate(
                &synthetic::SyntheticSpec {
                    users: cfg.synthetic_users,
                    items: cfg.synthetic_items,
                    ..Default::default()
                },
                cfg.seed,
            )?,
        };
        let filtered = dataset::filter_min_interactions(&raw, cfg.min_interactions)?;
        let sampled = dataset::subsample_users(&filtered, cfg.user_fraction, cfg.seed)?;
        dataset::split_per_user(&sampled, cfg.test_fraction, cfg.valid_fraction, cfg.seed)
    }

    pub fn prepare(&self) -> Result<InteractionDataset> {
        let ds = self.build_dataset()?;
        let stats = ds.stats();
        self.note(format!("prepared dataset: {stats:?}"));
        let dir = self.dir.dataset();
        let tmp = dir.with_extension("tmp");
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        ds.save(&tmp)?;
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::rename(&tmp, &dir).map_err(|e| Error::io(&dir, e))?;
        Ok(ds)
    }

    pub fn dataset(&self) -> Result<InteractionDataset> {
        let dir = self.dir.dataset();
        if dir.join("meta.tsv").exists() {
            InteractionDataset::load(dir)
        } else {
            self.prepare()
        }
    }

    fn graph(&self, ds: &InteractionDataset) -> Option<NormalizedGraph> {
        (self.config.layers() > 0 || self.config.backbone == crate::BackboneKind::LightGcn)
            .then(|| NormalizedGraph::from_train(ds.num_users, ds.num_items, &ds.train))
    }

    fn load_model(&self, name: &str, ds: &InteractionDataset) -> Result<EmbeddingModel> {
        let mut model = EmbeddingModel::load(self.dir.checkpoint(name))?;
        if model.num_users() != ds.num_users || model.num_items() != ds.num_items {
            return Err(Error::Checkpoint(format!(
                "{name} does not match the prepared dataset"
            )));
        }
        if let Some(g) = self.graph(ds) {
            model.propagate(&g)?;
        }
        Ok(model)
    }

    fn train(
        &self,
        name: &str,
        ds: &InteractionDataset,
        dim: usize,
        init_tag: u64,
        train: &TrainConfig,
        objective: Objective<'_>,
    ) -> Result<TrainOutcome> {
        let cfg = &self.config;
        let model = init_embeddings(
            cfg.backbone,
            ds.num_users,
            ds.num_items,
            dim,
            cfg.layers(),
            derive_seed(cfg.seed, init_tag),
            cfg.init_scale,
        )?;
        let graph = self.graph(ds);
        let outcome = fit_with(model, ds, graph.as_ref(), train, objective, |r| {
            if self.verbose && (r.epoch == 1 || r.epoch % 10 == 0) {
                eprintln!(
                    "[unkd] {name} epoch {} loss {:.5} valid ndcg@{} {:.5}",
                    r.epoch, r.train_loss, train.eval_n, r.valid_ndcg
                );
            }
        })?;
        self.note(format!(
            "{name}: best epoch {} valid ndcg {:.5}",
            outcome.best_epoch, outcome.best_valid_ndcg
        ));
        write_atomic(&self.dir.log(name), outcome.log.to_csv())?;
        Ok(outcome)
    }

    fn save_model(&self, name: &str, model: &EmbeddingModel, settings: &str) -> Result<()> {
        write_atomic(&self.dir.checkpoint(name), model.to_bytes())?;
        write_atomic(&self.dir.settings(name), settings)
    }

    pub fn train_teacher(&self) -> Result<EmbeddingModel> {
        let ds = self.dataset()?;
        let cfg = &self.config;
        let out = self.train(
            "teacher",
            &ds,
            cfg.teacher_dim,
            TEACHER_INIT,
            &cfg.teacher_train_config(),
            Objective::Base,
        )?;
        self.save_model("teacher", &out.model, "")?;
        Ok(out.model)
    }

    pub fn teacher(&self) -> Result<EmbeddingModel> {
        if self.dir.checkpoint("teacher").exists() {
            self.load_model("teacher", &self.dataset()?)
        } else {
            self.train_teacher()
        }
    }

    pub fn train_student_base(&self) -> Result<EmbeddingModel> {
        let ds = self.dataset()?;
        let cfg = &self.config;
        let name = student_name(DistillMethod::None);
        let out = self.train(
            &name,
            &ds,
            cfg.student_dim,
            STUDENT_INIT,
            &cfg.student_train_config(),
            Objective::Base,
        )?;
        self.save_model(&name, &out.model, "")?;
        Ok(out.model)
    }

    pub fn student_base(&self) -> Result<EmbeddingModel> {
        if self
            .dir
            .checkpoint(&student_name(DistillMethod::None))
            .exists()
        {
            self.load_model(&student_name(DistillMethod::None), &self.dataset()?)
        } else {
            self.train_student_base()
        }
    }

    /// The teacher's candidate plan for `method` with `k` groups.
    pub fn plan(
        &self,
        teacher: &EmbeddingModel,
        ds: &InteractionDataset,
        method: DistillMethod,
        k: usize,
    ) -> Result<DistillPlan> {
        let cfg = &self.config;
        let ppg = (cfg.pairs_per_group > 0).then_some(cfg.pairs_per_group);
        match method {
            DistillMethod::Unkd => {
                let partition = partition_items(&ds.popularity, k)?;
                build_plan(teacher, ds, &partition, cfg.soft_labels, cfg.mu, ppg)
            }
            DistillMethod::Cd | DistillMethod::Rd => {
                cd_baseline_plan(teacher, ds, cfg.soft_labels, cfg.mu, ppg)
            }
            DistillMethod::None => Err(Error::InvalidArgument(
                "method none has no distillation plan".into(),
            )),
        }
    }

    /// Trains a student distilled with `method` (the base student for
    /// `none`) and returns its model.
    pub fn distill_student(
        &self,
        teacher: &EmbeddingModel,
        ds: &InteractionDataset,
        method: DistillMethod,
        k: usize,
        name: &str,
    ) -> Result<EmbeddingModel> {
        if method == DistillMethod::None {
            let cfg = &self.config;
            let train = cfg.student_train_config();
            let outcome = self.train(
                name,
                ds,
                cfg.student_dim,
                STUDENT_INIT,
                &train,
                Objective::Base,
            )?;
            return Ok(outcome.model);
        }
        let plan = self.plan(teacher, ds, method, k)?;
        self.distill_with_plan(ds, method, plan, name)
    }

    /// Trains a distilled student from a prebuilt plan.
    fn distill_with_plan(
        &self,
        ds: &InteractionDataset,
        method: DistillMethod,
        plan: DistillPlan,
        name: &str,
    ) -> Result<EmbeddingModel> {
        let cfg = &self.config;
        let mode = if method == DistillMethod::Rd {
            DistillMode::Pointwise
        } else {
            DistillMode::Pairwise
        };
        let mut distiller = Distiller::new(
            plan,
            mode,
            cfg.lambda,
            derive_seed(cfg.seed, DISTILL_PAIRS),
            cfg.freeze_pairs,
        )?;
        distiller.normalization = cfg.distill_normalization;
        let outcome = self.train(
            name,
            ds,
            cfg.student_dim,
            STUDENT_INIT,
            &cfg.student_train_config(),
            Objective::Distill(&distiller),
        )?;
        Ok(outcome.model)
    }

    fn labels(&self, method: &str) -> ReportLabels {
        ReportLabels {
            dataset: self.config.dataset_name.clone(),
            backbone: self.config.backbone.name().to_string(),
            method: method.to_string(),
            seed: self.config.seed,
        }
    }

    fn eval_partition(ds: &InteractionDataset) -> Result<crate::PopularityPartition> {
        partition_items(&ds.popularity, 2)
    }

    /// Trains the configured method's student and writes
    /// `reports/metrics-<method>.csv` and the plan dump `plans/<method>.tsv`.
    pub fn distill(&self) -> Result<EvalReport> {
        let cfg = &self.config;
        let ds = self.dataset()?;
        let method = cfg.method;
        let name = student_name(method);
        let teacher = if method == DistillMethod::None {
            None
        } else {
            Some(self.teacher()?)
        };
        let model = match &teacher {
            Some(t) => {
                let plan = self.plan(t, &ds, method, cfg.k)?;
                write_atomic(&self.dir.plan(method.name()), plan.dump())?;
                self.distill_with_plan(&ds, method, plan, &name)?
            }
            None => self.train_student_base()?,
        };
        if method != DistillMethod::None {
            self.save_model(&name, &model, &distill_settings(cfg, method, cfg.k))?;
        }
        let report = evaluate_model(&model, &ds, &Self::eval_partition(&ds)?, cfg.eval_n)?;
        write_atomic(
            &self.dir.report(&format!("metrics-{method}")),
            report.to_csv(&self.labels(method.name())),
        )?;
        Ok(report)
    }

    fn method_student(&self, ds: &InteractionDataset) -> Result<EmbeddingModel> {
        let cfg = &self.config;
        if cfg.method == DistillMethod::None {
            return self.student_base();
        }
        let name = student_name(cfg.method);
        let settings = distill_settings(cfg, cfg.method, cfg.k);
        let stored = fs::read_to_string(self.dir.settings(&name)).ok();
        if self.dir.checkpoint(&name).exists() && stored.as_deref() == Some(settings.as_str()) {
            return self.load_model(&name, ds);
        }
        let teacher = self.teacher()?;
        let model = self.distill_student(&teacher, ds, cfg.method, cfg.k, &name)?;
        self.save_model(&name, &model, &settings)?;
        Ok(model)
    }

    /// Evaluates the teacher, the base student and the configured method's
    /// student into `reports/metrics.csv`. Checkpoints are only read.
    pub fn evaluate(&self) -> Result<Vec<(String, EvalReport)>> {
        let cfg = &self.config;
        let ds = self.dataset()?;
        let partition = Self::eval_partition(&ds)?;
        let mut rows: Vec<(String, EmbeddingModel)> = vec![
            ("teacher".into(), self.teacher()?),
            (DistillMethod::None.name().into(), self.student_base()?),
        ];
        if cfg.method != DistillMethod::None {
            rows.push((cfg.method.name().into(), self.method_student(&ds)?));
        }
        let mut csv = format!("{REPORT_HEADER}\n");
        let mut reports = Vec::new();
        for (label, model) in rows {
            let report = evaluate_model(&model, &ds, &partition, cfg.eval_n)?;
            csv.push_str(&report.csv_rows(&self.labels(&label)));
            reports.push((label, report));
        }
        write_atomic(&self.dir.report("metrics"), csv)?;
        Ok(reports)
    }

    /// Distills and evaluates one UnKD student per `K ∈ 1..=sweep_k_max` and
    /// writes `reports/sweep-k.csv`.
    pub fn sweep_k(&self) -> Result<Vec<(usize, EvalReport)>> {
        let cfg = &self.config;
        let ds = self.dataset()?;
        let teacher = self.teacher()?;
        let partition = Self::eval_partition(&ds)?;
        let mut csv = format!("{SWEEP_HEADER}\n");
        let mut out = Vec::new();
        for k in 1..=cfg.sweep_k_max {
            let name = format!("sweep-k{k}");
            let model = self.distill_student(&teacher, &ds, DistillMethod::Unkd, k, &name)?;
            let report = evaluate_model(&model, &ds, &partition, cfg.eval_n)?;
            for (metric, group, value) in report.entries() {
                csv.push_str(&format!(
                    "{},{},{k},{metric},{group},{},{value:.8},{}\n",
                    cfg.dataset_name,
                    cfg.backbone.name(),
                    cfg.eval_n,
                    cfg.seed
                ));
            }
            self.note(format!(
                "K={k}: recall {:.5} unpopular recall {:?}",
                report.recall,
                report.value("recall", "unpopular")
            ));
            out.push((k, report));
        }
        write_atomic(&self.dir.report("sweep-k"), csv)?;
        Ok(out)
    }

    /// Runs the equal-popularity ranking check of the synthetic causal model
    /// for every configured `γ` and writes `reports/lemma-check.csv`. Fails if
    /// any stratum disagrees.
    pub fn lemma_check(&self) -> Result<String> {
        let cfg = &self.config;
        let law = PowerLaw {
            exponent: cfg.causal_exponent,
            max: cfg.causal_max_popularity,
        };
        let base = SyntheticCausalModel::generate(
            cfg.causal_users,
            cfg.causal_items,
            cfg.causal_gammas[0],
            law,
            cfg.seed,
        )?;
        let base = match cfg.causal_baseline {
            Some(b) => SyntheticCausalModel::from_parts(
                base.num_users,
                base.num_items,
                base.affinity,
                base.popularity,
                base.gamma,
                Some(b),
            )?,
            None => base,
        };
        let mut csv = format!("{GAMMA_REPORT_HEADER},all_strata_true\n");
        let mut failed = Vec::new();
        for &gamma in &cfg.causal_gammas {
            let row = gamma_row(&base.with_gamma(gamma)?)?;
            let ok = row.strata_passed == row.strata_checked;
            if !ok {
                failed.push(gamma);
            }
            csv.push_str(&format!(
                "{},{}\n",
                row.csv_row(),
                if ok { "TRUE" } else { "FALSE" }
            ));
        }
        write_atomic(&self.dir.report("lemma-check"), &csv)?;
        if !failed.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "equal-popularity check failed for gamma {failed:?}"
            )));
        }
        Ok(csv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            synthetic_users: 60,
            synthetic_items: 80,
            teacher_dim: 16,
            student_dim: 4,
            max_epochs: 3,
            patience: 2,
            batch_size: 256,
            learning_rate: 0.01,
            teacher_learning_rate: 0.01,
            causal_users: 5,
            causal_items: 30,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn command_names_round_trip() {
        for c in Command::ALL {
            assert_eq!(c.name().parse::<Command>().unwrap(), c);
        }
        assert!("train".parse::<Command>().is_err());
    }

    #[test]
    fn evaluate_runs_prerequisites() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(tiny_config(), dir.path());
        p.run(Command::Evaluate).unwrap();
        let rd = &p.dir;
        for f in [
            rd.config(),
            rd.dataset().join("train.tsv"),
            rd.checkpoint("teacher"),
            rd.checkpoint("student-none"),
            rd.checkpoint("student-unkd"),
            rd.log("teacher"),
            rd.report("metrics"),
        ] {
            assert!(f.exists(), "{}", f.display());
        }
        assert!(!rd.stale_marker().exists());
        let csv = fs::read_to_string(rd.report("metrics")).unwrap();
        assert!(csv.starts_with(REPORT_HEADER));
        assert!(csv.contains(",teacher,") && csv.contains(",none,") && csv.contains(",unkd,"));
    }

    #[test]
    fn evaluate_leaves_checkpoints_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(tiny_config(), dir.path());
        p.run(Command::Evaluate).unwrap();
        let before = fs::read(p.dir.checkpoint("student-unkd")).unwrap();
        p.run(Command::Evaluate).unwrap();
        assert_eq!(fs::read(p.dir.checkpoint("student-unkd")).unwrap(), before);
    }

    #[test]
    fn failure_leaves_stale_marker() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.k = 10;
        cfg.synthetic_items = 5;
        cfg.min_interactions = 1;
        let p = Pipeline::new(cfg, dir.path());
        assert!(p.run(Command::Distill).is_err());
        let marker = fs::read_to_string(p.dir.stale_marker()).unwrap();
        assert!(marker.starts_with("command = distill"));
    }

    #[test]
    fn conflicting_settings_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        Pipeline::new(tiny_config(), dir.path())
            .run(Command::Prepare)
            .unwrap();
        let mut other = tiny_config();
        other.seed = 5;
        assert!(matches!(
            Pipeline::new(other, dir.path()).run(Command::Prepare),
            Err(Error::Config(_))
        ));
        let mut method_change = tiny_config();
        method_change.method = DistillMethod::Cd;
        Pipeline::new(method_change, dir.path())
            .run(Command::Prepare)
            .unwrap();
    }

    #[test]
    fn lemma_check_passes() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(tiny_config(), dir.path());
        let csv = p.lemma_check().unwrap();
        assert_eq!(csv.lines().count(), 1 + tiny_config().causal_gammas.len());
        assert!(csv.lines().skip(1).all(|l| l.ends_with(",TRUE")));
    }
}
