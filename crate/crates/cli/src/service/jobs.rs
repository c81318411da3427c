//! Job state owned by the service, and its on-disk form under `--persist`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use anyhow::{Context, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use labelsynth::compositor::{Composite, SynthesisConfig, SynthesisPlan};
use labelsynth::index::ExemplarLibrary;
use labelsynth::io::{read_instances, read_labels, write_instances, write_labels};
use labelsynth::raster::{InstanceMap, LabelMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VariantOrigin {
    Default,
    Seeded { seed: u64 },
    Selected { from: usize, shape_id: u32, candidate_idx: usize },
}

pub struct Variant {
    pub composite: Composite,
    pub origin: VariantOrigin,
}

pub struct Job {
    pub id: u64,
    /// Bumped by every edit; background results for older revisions are dropped.
    pub revision: u64,
    pub status: JobStatus,
    pub error: Option<String>,
    pub labels: LabelMap,
    pub instances: InstanceMap,
    pub config: SynthesisConfig,
    pub plan: Option<Arc<SynthesisPlan>>,
    pub variants: Vec<Variant>,
    /// Variant that selections start from.
    pub current: Option<usize>,
}

impl Job {
    pub fn invalidate(&mut self) {
        self.revision += 1;
        self.status = JobStatus::Queued;
        self.error = None;
        self.plan = None;
        self.variants.clear();
        self.current = None;
    }

    pub fn push_variant(&mut self, composite: Composite, origin: VariantOrigin) -> usize {
        self.variants.push(Variant { composite, origin });
        self.variants.len() - 1
    }
}

#[derive(Serialize, Deserialize)]
struct StoredVariant {
    selections: Vec<usize>,
    origin: VariantOrigin,
}

#[derive(Serialize, Deserialize)]
struct StoredJob {
    id: u64,
    revision: u64,
    config: SynthesisConfig,
    variants: Vec<StoredVariant>,
    current: Option<usize>,
}

pub struct AppState {
    pub lib: Arc<ExemplarLibrary>,
    jobs: RwLock<BTreeMap<u64, Arc<Mutex<Job>>>>,
    next_id: AtomicU64,
    persist: Option<PathBuf>,
}

impl AppState {
    pub fn new(lib: ExemplarLibrary, persist: Option<PathBuf>) -> Self {
        Self { lib: Arc::new(lib), jobs: RwLock::new(BTreeMap::new()), next_id: AtomicU64::new(1), persist }
    }

    pub fn job(&self, id: u64) -> Option<Arc<Mutex<Job>>> {
        self.jobs.read().unwrap().get(&id).cloned()
    }

    pub fn create_job(&self, labels: LabelMap, instances: InstanceMap, config: SynthesisConfig) -> u64 {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let job = Job {
            id,
            revision: 0,
            status: JobStatus::Queued,
            error: None,
            labels,
            instances,
            config,
            plan: None,
            variants: Vec::new(),
            current: None,
        };
        self.jobs.write().unwrap().insert(id, Arc::new(Mutex::new(job)));
        id
    }

    /// Plans and renders the default composite for the job's current
    /// revision. Blocking; run it off the async workers.
    pub fn run_job(&self, id: u64) {
        let Some(job) = self.job(id) else { return };
        let (revision, labels, instances, config) = {
            let mut j = job.lock().unwrap();
            j.status = JobStatus::Running;
            (j.revision, j.labels.clone(), j.instances.clone(), j.config.clone())
        };
        let result = SynthesisPlan::build(&labels, &instances, &self.lib, &config).and_then(|plan| {
            let c = plan.render(&self.lib, &plan.default_selections(), &config)?;
            Ok((plan, c))
        });
        let mut j = job.lock().unwrap();
        if j.revision != revision {
            return;
        }
        match result {
            Ok((plan, composite)) => {
                j.plan = Some(Arc::new(plan));
                j.variants.clear();
                let v = j.push_variant(composite, VariantOrigin::Default);
                j.current = Some(v);
                j.status = JobStatus::Done;
                self.save(&j);
            }
            Err(e) => {
                warn!("job {id} failed: {e}");
                j.status = JobStatus::Failed;
                j.error = Some(e.to_string());
            }
        }
    }

    /// Writes the job under the persist directory, if any. Failures are
    /// logged; the in-memory job stays authoritative.
    pub fn save(&self, job: &Job) {
        let Some(root) = &self.persist else { return };
        if let Err(e) = save_job(root, job) {
            warn!("cannot persist job {}: {e:#}", job.id);
        }
    }

    /// Reloads persisted jobs, re-rendering their variants from the stored
    /// selections.
    pub fn restore(&self) -> Result<usize> {
        let Some(root) = &self.persist else { return Ok(0) };
        std::fs::create_dir_all(root)?;
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("meta.json").is_file())
            .collect();
        dirs.sort();
        let mut restored = 0;
        for dir in dirs {
            match load_job(&dir, &self.lib) {
                Ok(job) => {
                    let id = job.id;
                    self.next_id.fetch_max(id + 1, Ordering::SeqCst);
                    self.jobs.write().unwrap().insert(id, Arc::new(Mutex::new(job)));
                    restored += 1;
                }
                Err(e) => warn!("skipping persisted job {}: {e:#}", dir.display()),
            }
        }
        info!("restored {restored} jobs from {}", root.display());
        Ok(restored)
    }
}

fn job_dir(root: &Path, id: u64) -> PathBuf {
    root.join(format!("job-{id:06}"))
}

fn save_job(root: &Path, job: &Job) -> Result<()> {
    let dir = job_dir(root, job.id);
    std::fs::create_dir_all(&dir)?;
    write_labels(&dir.join("labels.png"), &job.labels)?;
    write_instances(&dir.join("instances.png"), &job.instances)?;
    let stored = StoredJob {
        id: job.id,
        revision: job.revision,
        config: job.config.clone(),
        variants: job
            .variants
            .iter()
            .map(|v| StoredVariant { selections: v.composite.selections.clone(), origin: v.origin.clone() })
            .collect(),
        current: job.current,
    };
    let tmp = dir.join("meta.json.tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(&stored)?)?;
    std::fs::rename(tmp, dir.join("meta.json"))?;
    Ok(())
}

fn load_job(dir: &Path, lib: &ExemplarLibrary) -> Result<Job> {
    let stored: StoredJob = serde_json::from_slice(&std::fs::read(dir.join("meta.json"))?)?;
    let labels = read_labels(&dir.join("labels.png"), lib.num_categories())?;
    let instances = read_instances(&dir.join("instances.png"))?;
    let plan = SynthesisPlan::build(&labels, &instances, lib, &stored.config).context("re-planning")?;
    let mut variants = Vec::new();
    for v in stored.variants {
        let composite = plan.render(lib, &v.selections, &stored.config)?;
        variants.push(Variant { composite, origin: v.origin });
    }
    let done = !variants.is_empty();
    Ok(Job {
        id: stored.id,
        revision: stored.revision,
        status: if done { JobStatus::Done } else { JobStatus::Queued },
        error: None,
        labels,
        instances,
        config: stored.config,
        plan: Some(Arc::new(plan)),
        current: stored.current.filter(|&c| c < variants.len()),
        variants,
    })
}
