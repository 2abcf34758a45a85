//! Expansion of a config into an explicit, dependency-ordered job grid.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{sha256_hex, ExperimentConfig, PoolKind};
use crate::error::{Error, Result};
use crate::imaging::manifest::{format_manifest, read_manifest, DatasetManifest, DomainKey};
use crate::imaging::pooling::{DomainSelector, TranslationMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    /// Trained on labelled source data only.
    Lower,
    /// Trained on labelled target-scanner data.
    Upper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum JobKind {
    Dcgan {
        source: DomainSelector,
        samples: usize,
    },
    Translate {
        mode: TranslationMode,
        source: DomainSelector,
        target: DomainSelector,
    },
    Pool {
        mode: Option<TranslationMode>,
        /// Target vendor for single-target pools; `None` when mixed.
        target: Option<String>,
        members: Vec<String>,
    },
    Segment {
        pool: String,
    },
    Bound {
        which: BoundKind,
    },
    Embed {
        pools: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub kind: JobKind,
    pub deps: Vec<String>,
    pub seed: u64,
    /// Number of slices the job produces (generated sets, pools) or trains
    /// on (segmentation).
    pub count: usize,
}

/// The explicit job grid plus the data it runs on.
#[derive(Clone, Debug)]
pub struct ExperimentPlan {
    pub config: ExperimentConfig,
    /// Jobs in dependency order.
    pub jobs: Vec<Job>,
    pub source_vendors: Vec<DomainKey>,
    pub eval_vendors: Vec<DomainKey>,
    pub data: DatasetManifest,
    pub target_train: Option<DatasetManifest>,
    /// Digest of every input manifest.
    pub data_hash: String,
}

impl ExperimentPlan {
    pub fn job(&self, id: &str) -> Option<&Job> {
        self.jobs.iter().find(|j| j.id == id)
    }

    pub fn jobs_of<'a>(&'a self, pred: impl Fn(&JobKind) -> bool + 'a) -> impl Iterator<Item = &'a Job> + 'a {
        self.jobs.iter().filter(move |j| pred(&j.kind))
    }

    /// Labelled target slices used for scoring.
    pub fn eval_manifest(&self) -> DatasetManifest {
        let t = &self.config.data.target;
        self.data.filter(|e| e.domain.dataset == *t)
    }

    /// Job ids with their expected counts, one per line.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for j in &self.jobs {
            s.push_str(&format!("{:<60} {:>7}\n", j.id, j.count));
        }
        s
    }
}

fn seed_for(cfg: &ExperimentConfig, id: &str) -> u64 {
    if let Some(s) = cfg.seeds.get(id) {
        return *s;
    }
    let h = sha256_hex(id.as_bytes());
    cfg.seed ^ u64::from_str_radix(&h[..16], 16).expect("hex digest")
}

fn vendors_of(data: &DatasetManifest, dataset: &str) -> Vec<DomainKey> {
    data.domains().into_iter().filter(|d| d.dataset == dataset).collect()
}

fn translate_id(mode: TranslationMode, source: &DomainSelector, target: &DomainSelector) -> String {
    format!("translate/{mode}/{source}->{target}")
}

/// Loads a config file, then its manifests, and expands the plan.
pub fn plan_from_config(path: &Path) -> Result<ExperimentPlan> {
    plan_from_experiment(ExperimentConfig::load(path)?)
}

/// Loads the manifests named by an in-memory config and expands the plan.
pub fn plan_from_experiment(cfg: ExperimentConfig) -> Result<ExperimentPlan> {
    let mut data = DatasetManifest::default();
    for (i, p) in cfg.data.manifests.iter().enumerate() {
        let m = read_manifest(p).map_err(|e| Error::config(format!("data.manifests[{i}]"), e.to_string()))?;
        data.extend(&m);
    }
    let target_train = match &cfg.data.target_train {
        Some(p) => Some(read_manifest(p).map_err(|e| Error::config("data.target_train", e.to_string()))?),
        None => None,
    };
    build_plan(cfg, data, target_train)
}

/// Expands `cfg` against already-loaded data. Only entry counts and domain
/// keys are consulted, so placeholder manifests suffice for dry runs.
pub fn build_plan(cfg: ExperimentConfig, data: DatasetManifest, target_train: Option<DatasetManifest>) -> Result<ExperimentPlan> {
    let mut modes = Vec::new();
    for (i, m) in cfg.modes.iter().enumerate() {
        let mode: TranslationMode = m.parse().map_err(|e: Error| Error::config(format!("modes[{i}]"), e.to_string()))?;
        if !modes.contains(&mode) {
            modes.push(mode);
        }
    }
    let uses_data = !modes.is_empty() || cfg.bounds || !cfg.custom_pools.is_empty();
    let source_vendors = vendors_of(&data, &cfg.data.source);
    let eval_vendors = vendors_of(&data, &cfg.data.target);
    if uses_data {
        if source_vendors.is_empty() {
            return Err(Error::config("data.source", Error::UnknownDomain(cfg.data.source.clone()).to_string()));
        }
        if eval_vendors.is_empty() {
            return Err(Error::config("data.target", Error::UnknownDomain(cfg.data.target.clone()).to_string()));
        }
    }
    let counts = data.counts();
    let count = |sel: &DomainSelector| -> usize { counts.iter().filter(|(k, _)| sel.matches(k)).map(|(_, n)| *n).sum() };
    let source_all = DomainSelector::dataset(&cfg.data.source);

    let mut jobs: Vec<Job> = Vec::new();
    let push = |jobs: &mut Vec<Job>, id: String, kind: JobKind, deps: Vec<String>, count: usize| {
        let seed = seed_for(&cfg, &id);
        jobs.push(Job { id, kind, deps, seed, count });
    };

    // translation grid
    let mut by_mode: BTreeMap<TranslationMode, Vec<(String, String)>> = BTreeMap::new();
    for &mode in &modes {
        let mut deps = Vec::new();
        let mut n_source = count(&source_all);
        if mode == TranslationMode::Syn2Image {
            let id = format!("dcgan/{source_all}");
            if !jobs.iter().any(|j| j.id == id) {
                push(
                    &mut jobs,
                    id.clone(),
                    JobKind::Dcgan {
                        source: source_all.clone(),
                        samples: cfg.dcgan_samples,
                    },
                    vec![],
                    cfg.dcgan_samples,
                );
            }
            deps.push(id);
            n_source = cfg.dcgan_samples;
        }
        let sources: Vec<DomainSelector> = match mode {
            TranslationMode::Scan2Scan => source_vendors.iter().map(|k| DomainSelector::vendor(&k.dataset, &k.vendor)).collect(),
            _ => vec![source_all.clone()],
        };
        for t in &eval_vendors {
            let target = DomainSelector::vendor(&t.dataset, &t.vendor);
            for s in &sources {
                let n = if mode == TranslationMode::Scan2Scan { count(s) } else { n_source };
                let id = translate_id(mode, s, &target);
                push(
                    &mut jobs,
                    id.clone(),
                    JobKind::Translate {
                        mode,
                        source: s.clone(),
                        target: target.clone(),
                    },
                    deps.clone(),
                    n,
                );
                by_mode.entry(mode).or_default().push((id, t.vendor.clone()));
            }
        }
    }

    // synthetic pools
    let mut pool_ids = Vec::new();
    for (&mode, members) in &by_mode {
        for kind in &cfg.pools {
            let groups: Vec<(Option<String>, Vec<String>)> = match kind {
                PoolKind::Single => eval_vendors
                    .iter()
                    .map(|t| {
                        let m = members.iter().filter(|(_, v)| *v == t.vendor).map(|(id, _)| id.clone()).collect();
                        (Some(t.vendor.clone()), m)
                    })
                    .collect(),
                PoolKind::Mixed => vec![(None, members.iter().map(|(id, _)| id.clone()).collect())],
            };
            for (target, members) in groups {
                let id = format!("pool/{mode}/{}", target.as_deref().unwrap_or("mixed"));
                let n = members.iter().map(|m| jobs.iter().find(|j| j.id == *m).map_or(0, |j| j.count)).sum();
                pool_ids.push(id.clone());
                push(
                    &mut jobs,
                    id,
                    JobKind::Pool {
                        mode: Some(mode),
                        target,
                        members: members.clone(),
                    },
                    members,
                    n,
                );
            }
        }
    }
    let custom = custom_pool_order(&cfg, &jobs)?;
    for (name, members) in custom {
        let id = format!("pool/custom/{name}");
        let n = members.iter().map(|m| jobs.iter().find(|j| j.id == *m).map_or(0, |j| j.count)).sum();
        pool_ids.push(id.clone());
        push(
            &mut jobs,
            id,
            JobKind::Pool {
                mode: None,
                target: None,
                members: members.clone(),
            },
            members,
            n,
        );
    }

    // segmentation
    if cfg.segment {
        for p in &pool_ids {
            let n = jobs.iter().find(|j| j.id == *p).map_or(0, |j| j.count);
            let id = format!("segment/{}", p.trim_start_matches("pool/"));
            push(&mut jobs, id, JobKind::Segment { pool: p.clone() }, vec![p.clone()], n);
        }
    }
    if cfg.bounds {
        push(
            &mut jobs,
            "bound/lower".into(),
            JobKind::Bound { which: BoundKind::Lower },
            vec![],
            count(&source_all),
        );
        if let Some(tt) = &target_train {
            for k in tt.domains() {
                if k.dataset != cfg.data.target {
                    return Err(Error::config("data.target_train", format!("{k} is not a {} vendor", cfg.data.target)));
                }
            }
            push(&mut jobs, "bound/upper".into(), JobKind::Bound { which: BoundKind::Upper }, vec![], tt.len());
        }
    }
    if cfg.embedding && !pool_ids.is_empty() {
        push(&mut jobs, "embed".into(), JobKind::Embed { pools: pool_ids.clone() }, pool_ids.clone(), 0);
    }

    let mut digest = String::new();
    for m in std::iter::once(&data).chain(target_train.as_ref()) {
        digest.push_str(&format_manifest(m)?);
    }
    let plan = ExperimentPlan {
        data_hash: sha256_hex(digest.as_bytes()),
        config: cfg,
        jobs,
        source_vendors,
        eval_vendors,
        data,
        target_train,
    };
    validate_order(&plan.jobs)?;
    Ok(plan)
}

/// Custom pools sorted so that each follows the pools it references.
fn custom_pool_order(cfg: &ExperimentConfig, jobs: &[Job]) -> Result<Vec<(String, Vec<String>)>> {
    let names: BTreeSet<&str> = cfg.custom_pools.iter().map(|p| p.name.as_str()).collect();
    if names.len() != cfg.custom_pools.len() {
        return Err(Error::config("pool", "custom pool names must be unique"));
    }
    for (i, p) in cfg.custom_pools.iter().enumerate() {
        for m in &p.members {
            let known = jobs.iter().any(|j| j.id == *m && matches!(j.kind, JobKind::Translate { .. } | JobKind::Pool { .. }))
                || m.strip_prefix("pool/custom/").is_some_and(|n| names.contains(n));
            if !known {
                return Err(Error::config(format!("pool[{i}].members"), format!("unknown job `{m}`")));
            }
        }
    }
    let mut done: Vec<(String, Vec<String>)> = Vec::new();
    let mut pending: Vec<usize> = (0..cfg.custom_pools.len()).collect();
    while !pending.is_empty() {
        let before = pending.len();
        pending.retain(|&i| {
            let p = &cfg.custom_pools[i];
            let ready = p.members.iter().all(|m| match m.strip_prefix("pool/custom/") {
                Some(n) => done.iter().any(|(d, _)| d == n),
                None => true,
            });
            if ready {
                done.push((p.name.clone(), p.members.clone()));
            }
            !ready
        });
        if pending.len() == before {
            let i = pending[0];
            return Err(Error::config(
                format!("pool[{i}]"),
                format!("cyclic dependency through pool `{}`", cfg.custom_pools[i].name),
            ));
        }
    }
    Ok(done)
}

/// Every dependency must appear earlier in the list.
fn validate_order(jobs: &[Job]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for j in jobs {
        if !seen.insert(j.id.as_str()) {
            return Err(Error::config(&j.id, "duplicate job id"));
        }
        for d in &j.deps {
            if !seen.contains(d.as_str()) {
                return Err(Error::config(&j.id, format!("depends on `{d}`, which is not scheduled before it")));
            }
        }
    }
    Ok(())
}
