//! Pipeline stages over a run directory.
//!
//! Layout: `config.toml`, `config.hash`, `manifest.json`, `datasets/*.csv`,
//! `checkpoints/*.json`, `curves/*.csv`, `reports/*.{csv,json}`,
//! `traces/*.csv`. The manifest records the producing config hash and the
//! content digest of every artifact.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use loadshed::curriculum::{boundary_scenarios, run_curriculum, violated_zones, CurriculumOutcome};
use loadshed::dynamics::RelayMode;
use loadshed::env::{CaseLibrary, EnvSpec, Scenario, TaskResult};
use loadshed::grid::{load_case, PowerFlowCase};
use loadshed::pars::{evaluate, meta_adapt, write_curve, Checkpoint, GridRollout, Policy};
use loadshed::pool::WorkerPool;
use loadshed::report::{
    compare, export_traces, read_results, run_baseline, write_results, ComparisonReport, Controller, ReportMeta,
};
use loadshed::scenario::{
    build_datasets, candidate_buses, compute_cct, hierarchical_lhs, rank_and_sample_contingencies, Contingency, Role,
    SampledCase, ScenarioDataset,
};
use loadshed::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Offsets separating the random streams of the stages.
const CONTINGENCY_STREAM: u64 = 0x5eed_0001;
const TRAIN_STREAM: u64 = 0x5eed_0002;
const ADAPT_STREAM: u64 = 0x5eed_0003;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub config_hash: String,
    pub sha256: String,
}

/// Loaded configuration, base case, sampled cases and worker pool.
pub struct Workspace {
    pub cfg: RunConfig,
    pub hash: String,
    pub dir: PathBuf,
    pub base: PowerFlowCase,
    pub cases: Vec<SampledCase>,
    pub lib: Arc<CaseLibrary>,
    pub spec: Arc<EnvSpec>,
    pub pool: WorkerPool,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::Train => "train",
        Role::Test => "test",
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ContingencyRow {
    bus: u32,
    zone: Option<u32>,
    cct_s: f64,
    cct_flag: String,
    duration_s: f64,
}

impl Workspace {
    /// Samples the operating points; deterministic in the config.
    pub fn open(cfg: RunConfig, dir: impl Into<PathBuf>, workers: usize) -> Result<Self> {
        cfg.validate()?;
        let base = load_case(&cfg.case)?;
        let cases = hierarchical_lhs(&base, &cfg.sampling())?;
        let lib = Arc::new(CaseLibrary::from_base(
            &base,
            cases.iter().map(|c| c.case.clone()).collect(),
            cfg.env.clone(),
        )?);
        let spec = Arc::new(EnvSpec::full(&base, &cfg.env)?);
        let ws = Workspace {
            hash: cfg.hash(),
            cfg,
            dir: dir.into(),
            base,
            cases,
            lib,
            spec,
            pool: WorkerPool::new(workers)?,
        };
        ws.write_config()?;
        Ok(ws)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn write_config(&self) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| io_err(&self.dir, e))?;
        for sub in ["datasets", "checkpoints", "curves", "reports", "traces"] {
            let p = self.path(sub);
            std::fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
        }
        let p = self.path("config.toml");
        std::fs::write(&p, self.cfg.to_toml()).map_err(|e| io_err(&p, e))?;
        let p = self.path("config.hash");
        std::fs::write(&p, format!("{}\n", self.hash)).map_err(|e| io_err(&p, e))
    }

    pub fn manifest(&self) -> Result<BTreeMap<String, ManifestEntry>> {
        let p = self.path("manifest.json");
        if !p.exists() {
            return Ok(BTreeMap::new());
        }
        let text = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Records `rel` (already written) under the current config hash.
    fn record(&self, rel: &str) -> Result<()> {
        let mut m = self.manifest()?;
        m.insert(
            rel.to_string(),
            ManifestEntry {
                config_hash: self.hash.clone(),
                sha256: sha256_file(&self.path(rel))?,
            },
        );
        let p = self.path("manifest.json");
        std::fs::write(&p, serde_json::to_string_pretty(&m)?).map_err(|e| io_err(&p, e))
    }

    fn recorded_here(&self, rel: &str) -> Result<bool> {
        Ok(self.path(rel).exists() && self.manifest()?.get(rel).is_some_and(|e| e.config_hash == self.hash))
    }

    /// CCT of each candidate bus on the base case.
    pub fn screen(&self, buses: &[u32]) -> Result<Vec<loadshed::scenario::CctResult>> {
        let lib = self.base_library()?;
        self.pool
            .map(buses, |b| compute_cct(&lib, &self.base.case_id, *b, &self.cfg.cct))
            .into_iter()
            .collect()
    }

    fn base_library(&self) -> Result<Arc<CaseLibrary>> {
        Ok(Arc::new(CaseLibrary::from_base(&self.base, vec![self.base.clone()], self.cfg.env.clone())?))
    }

    /// Contingency screening on the base case, then labeled train/test
    /// datasets over the sampled cases.
    pub fn sample(&self) -> Result<(ScenarioDataset, ScenarioDataset)> {
        let d = &self.cfg.datasets;
        let candidates = candidate_buses(&self.base, d.candidate_kv_min);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ CONTINGENCY_STREAM);
        let lib = self.base_library()?;
        let n = d.n_fault_buses.min(candidates.len());
        let cont =
            rank_and_sample_contingencies(&lib, &self.base.case_id, &candidates, n, &self.cfg.cct, &self.pool, &mut rng)?;
        self.write_contingencies(&cont)?;
        self.write_cases()?;
        let (train, test) = build_datasets(&self.lib, &cont, d.train_fraction, self.cfg.seed, &self.hash, &self.pool)?;
        for ds in [&train, &test] {
            let rel = format!("datasets/{}.csv", role_name(ds.role));
            ds.write_csv(self.path(&rel))?;
            self.record(&rel)?;
        }
        Ok((train, test))
    }

    fn write_contingencies(&self, cont: &[Contingency]) -> Result<()> {
        let rel = "datasets/contingencies.csv";
        let mut w = csv::Writer::from_path(self.path(rel))?;
        for c in cont {
            w.serialize(ContingencyRow {
                bus: c.bus,
                zone: c.zone,
                cct_s: c.cct.cct,
                cct_flag: format!("{:?}", c.cct.flag),
                duration_s: c.duration,
            })?;
        }
        w.flush().map_err(|e| io_err(&self.path(rel), e))?;
        self.record(rel)
    }

    fn write_cases(&self) -> Result<()> {
        let rel = "datasets/cases.csv";
        let mut w = csv::Writer::from_path(self.path(rel))?;
        w.write_record(["case_id", "stratum", "load_scale", "committed"])?;
        for c in &self.cases {
            let on: Vec<String> = self
                .base
                .machines
                .iter()
                .zip(&c.scaling.commitment)
                .filter(|(_, o)| **o)
                .map(|(m, _)| m.id.to_string())
                .collect();
            w.write_record([
                c.case.case_id.clone(),
                c.stratum.to_string(),
                format!("{:.6}", c.load_scale),
                on.join(" "),
            ])?;
        }
        w.flush().map_err(|e| io_err(&self.path(rel), e))?;
        self.record(rel)
    }

    /// Datasets of this config, sampled if absent or produced by another.
    pub fn datasets(&self) -> Result<(ScenarioDataset, ScenarioDataset)> {
        if self.recorded_here("datasets/train.csv")? && self.recorded_here("datasets/test.csv")? {
            let mut train = ScenarioDataset::read_csv(self.path("datasets/train.csv"), Role::Train)?;
            let mut test = ScenarioDataset::read_csv(self.path("datasets/test.csv"), Role::Test)?;
            for ds in [&mut train, &mut test] {
                ds.seed = self.cfg.seed;
                ds.config_hash = self.hash.clone();
            }
            return Ok((train, test));
        }
        log::info!("sampling datasets for config {}", &self.hash[..12]);
        self.sample()
    }

    fn write_checkpoint(&self, name: &str, policy: &Policy) -> Result<()> {
        let rel = format!("checkpoints/{name}.json");
        Checkpoint {
            policy: policy.clone(),
            spec_hash: self.spec.hash(),
            config_hash: self.hash.clone(),
        }
        .write(self.path(&rel))?;
        self.record(&rel)
    }

    fn write_zone_checkpoint(&self, zone: u32, spec: &EnvSpec, policy: &Policy) -> Result<()> {
        let rel = format!("checkpoints/zone-{zone}.json");
        Checkpoint {
            policy: policy.clone(),
            spec_hash: spec.hash(),
            config_hash: self.hash.clone(),
        }
        .write(self.path(&rel))?;
        self.record(&rel)
    }

    fn write_curve(&self, name: &str, curve: &[loadshed::pars::CurvePoint]) -> Result<()> {
        let rel = format!("curves/{name}.csv");
        write_curve(self.path(&rel), curve)?;
        self.record(&rel)
    }

    /// Three-stage training on the training dataset.
    pub fn train(&self) -> Result<CurriculumOutcome> {
        let (train, _) = self.datasets()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ TRAIN_STREAM);
        let out = run_curriculum(
            &self.lib,
            &self.base,
            &train.scenarios(),
            &self.cfg.pars,
            &self.cfg.curriculum,
            &self.pool,
            &mut rng,
        )?;
        for z in &out.zones {
            self.write_zone_checkpoint(z.zone_id, &z.spec, &z.policy)?;
            self.write_curve(&format!("zone-{}-stage1", z.zone_id), &z.stage1_curve)?;
            self.write_curve(&format!("zone-{}-stage2", z.zone_id), &z.stage2_curve)?;
            let rel = format!("reports/mined-zone-{}.csv", z.zone_id);
            let mut text = String::from("scenario_id\n");
            for id in &z.mined {
                text.push_str(id);
                text.push('\n');
            }
            std::fs::write(self.path(&rel), text).map_err(|e| io_err(&self.path(&rel), e))?;
            self.record(&rel)?;
        }
        self.write_curve("stage3", &out.coordinated.curve)?;
        self.write_checkpoint("assembled", &out.coordinated.assembled)?;
        self.write_checkpoint("final", &out.coordinated.policy)?;
        Ok(out)
    }

    /// Loads a full-layout checkpoint, refusing one trained for another layout.
    pub fn load_policy(&self, path: &Path) -> Result<Policy> {
        let ck = Checkpoint::read(path)?;
        ck.check_spec(&self.spec.hash())?;
        Ok(ck.policy)
    }

    fn dataset(&self, role: Role) -> Result<ScenarioDataset> {
        let (train, test) = self.datasets()?;
        Ok(match role {
            Role::Train => train,
            Role::Test => test,
        })
    }

    /// Latent-context adaptation on the first `meta_probe` scenarios of
    /// each case, when enabled.
    fn adapt(&self, policy: Policy, scenarios: &[Scenario]) -> Policy {
        let k = self.cfg.evaluation.meta_probe;
        if k == 0 || self.cfg.pars.meta_budget == 0 {
            return policy;
        }
        let mut per_case: BTreeMap<&str, usize> = BTreeMap::new();
        let probe: Vec<Scenario> = scenarios
            .iter()
            .filter(|s| {
                let n = per_case.entry(s.case_id.as_str()).or_default();
                *n += 1;
                *n <= k
            })
            .cloned()
            .collect();
        let env = GridRollout::new(self.lib.clone(), self.spec.clone(), Some(RelayMode::Backup));
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ ADAPT_STREAM);
        let budget = self.cfg.pars.meta_budget;
        meta_adapt(&policy, &probe, &env, &self.pool, budget, self.cfg.pars.meta_std, &mut rng).0
    }

    /// Policy and baseline results on one dataset plus their comparison.
    pub fn evaluate(&self, checkpoint: &Path, role: Role) -> Result<ComparisonReport> {
        let policy = self.load_policy(checkpoint)?;
        let ds = self.dataset(role)?;
        let scenarios = ds.scenarios();
        let policy = self.adapt(policy, &scenarios);
        let env = GridRollout::new(self.lib.clone(), self.spec.clone(), Some(RelayMode::Backup));
        let pol = evaluate(&policy, &scenarios, &env, &self.pool);
        let base = run_baseline(&self.lib, &self.spec, &scenarios, &self.pool);
        let name = role_name(role);
        for (kind, rs) in [("policy", &pol), ("baseline", &base)] {
            let rel = format!("reports/{name}-{kind}.csv");
            write_results(self.path(&rel), rs)?;
            self.record(&rel)?;
        }
        let labels = ds
            .scenarios
            .iter()
            .map(|s| (s.scenario.scenario_id.clone(), s.requires_shedding))
            .collect();
        let report = compare(&pol, &base, &labels)?;
        self.write_report(&format!("{name}-comparison"), &report, &format!("datasets/{name}.csv"), Some(checkpoint))?;
        Ok(report)
    }

    pub fn write_report(&self, stem: &str, report: &ComparisonReport, dataset: &str, checkpoint: Option<&Path>) -> Result<()> {
        let rel_csv = format!("reports/{stem}.csv");
        report.write_csv(self.path(&rel_csv))?;
        self.record(&rel_csv)?;
        let rel_json = format!("reports/{stem}.json");
        let meta = ReportMeta {
            config_hash: self.hash.clone(),
            dataset: dataset.to_string(),
            checkpoint: checkpoint.map(|p| p.strip_prefix(&self.dir).unwrap_or(p).display().to_string()),
        };
        report.write_json(self.path(&rel_json), &meta)?;
        self.record(&rel_json)?;
        let rel_hist = format!("reports/{stem}-histogram.csv");
        let mut text = String::from("lo,hi,count\n");
        for (lo, hi, n) in report.histogram(self.cfg.evaluation.histogram_bins) {
            text.push_str(&format!("{lo},{hi},{n}\n"));
        }
        std::fs::write(self.path(&rel_hist), text).map_err(|e| io_err(&self.path(&rel_hist), e))?;
        self.record(&rel_hist)
    }

    /// Compares two result files against a dataset's labels.
    pub fn compare_files(&self, policy: &Path, baseline: &Path, dataset: &Path, stem: &str) -> Result<ComparisonReport> {
        let pol = read_results(policy)?;
        let base = read_results(baseline)?;
        let ds = ScenarioDataset::read_csv(dataset, Role::Test)?;
        let labels = ds
            .scenarios
            .iter()
            .map(|s| (s.scenario.scenario_id.clone(), s.requires_shedding))
            .collect();
        let report = compare(&pol, &base, &labels)?;
        self.write_report(stem, &report, &dataset.display().to_string(), None)?;
        Ok(report)
    }

    /// Scenarios of either dataset by id.
    pub fn find_scenario(&self, scenario_id: &str) -> Result<Scenario> {
        let (train, test) = self.datasets()?;
        train
            .scenarios
            .iter()
            .chain(&test.scenarios)
            .find(|s| s.scenario.scenario_id == scenario_id)
            .map(|s| s.scenario.clone())
            .ok_or_else(|| Error::Dataset(format!("no scenario {scenario_id} in this run")))
    }

    /// Trace files for no control, the relay baseline and optionally a policy.
    pub fn trace(&self, scenario: &Scenario, policy: Option<&Policy>) -> Result<Vec<PathBuf>> {
        let mut ctrls = vec![Controller::NoControl, Controller::Uvls];
        if let Some(p) = policy {
            ctrls.push(Controller::Policy(p));
        }
        let paths = export_traces(&self.lib, &self.spec, scenario, &ctrls, self.path("traces"))?;
        for p in &paths {
            let rel = p.strip_prefix(&self.dir).unwrap_or(p).display().to_string();
            self.record(&rel)?;
        }
        Ok(paths)
    }

    /// Scenarios of `scenarios` whose no-control violations touch two or
    /// more zones.
    pub fn boundary_set(&self, scenarios: &[Scenario]) -> Result<Vec<Scenario>> {
        let zones = violated_zones(&self.lib, &self.base, scenarios, &self.pool)?;
        Ok(boundary_scenarios(scenarios, &zones))
    }

    /// Results of `policy` on `scenarios` in the hybrid setting.
    pub fn policy_results(&self, policy: &Policy, scenarios: &[Scenario]) -> Vec<TaskResult> {
        let env = GridRollout::new(self.lib.clone(), self.spec.clone(), Some(RelayMode::Backup));
        evaluate(policy, scenarios, &env, &self.pool)
    }

    pub fn case_ids(&self) -> BTreeSet<String> {
        self.lib.case_ids().map(str::to_string).collect()
    }
}
