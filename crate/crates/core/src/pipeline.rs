//! Campaign orchestration: design, full-order runs, model building,
//! evaluation and reporting over a persisted artifact tree.
//!
//! Every artifact is written atomically and recorded in `manifest.json` with
//! the SHA-256 of its contents; reads verify that hash. A workspace is pinned
//! to one configuration, so rerunning a finished step is a no-op.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::container::{write_atomic, ArrayContainer};
use crate::cprom::{align_signs, CpromModel};
use crate::cvae::{self, CvaeArchitecture, CvaeModel, GenerationMode};
use crate::ecsw::{build_compressed_ecsw_system, sparse_nnls, EcswWeights};
use crate::error::{Error, Result};
use crate::fom::{generate_excitation, FrameModel, ModelParameters, NewmarkSettings};
use crate::macprom::{adaptive_cluster, select_cluster, ClusterLibrary};
use crate::metrics::{self, err_q, settled_steps, ErrorRecord};
use crate::reduction::{assemble_snapshots, compute_coefficients, pod_basis, rom_simulate_model, Strategy, Truncation};
use crate::sampling::{lhs_sample, ParameterSample};

/// Environment variable naming the artifact root.
pub const ARTIFACT_ROOT_ENV: &str = "VPROM_ARTIFACTS";

/// Artifact root from the environment, `./artifacts` otherwise.
pub fn artifact_root() -> PathBuf {
    std::env::var_os(ARTIFACT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("artifacts"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            other => Err(Error::config(format!("unknown split `{other}` (expected train or valid)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub doe_train: u64,
    pub doe_valid: u64,
    pub excitation: u64,
    pub vae_master: u64,
    pub uq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub preset: String,
    pub seeds: Seeds,
    pub roster: Vec<String>,
    /// Relative path to content hash.
    pub artifacts: BTreeMap<String, String>,
    pub flags: BTreeMap<String, bool>,
    /// Commands that changed the workspace, oldest first.
    pub history: Vec<String>,
}

/// Worker-pool size; `0` lets rayon decide.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub workers: usize,
}

impl RunOptions {
    fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
        Ok(pool.install(f))
    }
}

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` under `root/rel` and returns the entry for the manifest.
fn put(root: &Path, rel: &str, bytes: &[u8]) -> Result<(String, String)> {
    write_atomic(&root.join(rel), bytes)?;
    Ok((rel.to_string(), sha(bytes)))
}

fn put_json<T: Serialize>(root: &Path, rel: &str, value: &T) -> Result<(String, String)> {
    put(root, rel, serde_json::to_string_pretty(value)?.as_bytes())
}

fn put_array(root: &Path, rel: &str, array: &ArrayContainer) -> Result<(String, String)> {
    put(root, rel, &array.to_bytes())
}

pub struct Workspace {
    root: PathBuf,
    config: RunConfig,
    manifest: RunManifest,
}

impl Workspace {
    /// Opens the workspace at `root`, creating it from `config` (default:
    /// desk preset) when empty. A populated root only accepts its own
    /// configuration.
    pub fn open(root: &Path, config: Option<RunConfig>) -> Result<Self> {
        let cfg_path = root.join("config.toml");
        let man_path = root.join("manifest.json");
        if cfg_path.exists() {
            let stored = RunConfig::load(&cfg_path)?;
            if let Some(c) = config {
                if c.hash() != stored.hash() {
                    return Err(Error::config(format!(
                        "{} holds a run with a different configuration (hash {}); use a fresh artifact root",
                        root.display(),
                        &stored.hash()[..12]
                    )));
                }
            }
            let manifest: RunManifest = crate::container::load_json(&man_path)?;
            if manifest.config_hash != stored.hash() {
                return Err(Error::Format { path: man_path, reason: "manifest does not match config.toml".into() });
            }
            return Ok(Self { root: root.to_path_buf(), config: stored, manifest });
        }
        let config = config.unwrap_or_else(RunConfig::desk);
        config.validate()?;
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            preset: config.preset.clone(),
            seeds: Seeds {
                doe_train: config.doe.seed_train,
                doe_valid: config.doe.seed_valid,
                excitation: config.excitation.noise_seed,
                vae_master: config.cvae.seed,
                uq: config.uq.seed,
            },
            roster: std::iter::once("FOM".to_string())
                .chain(Strategy::ALL.iter().map(|s| s.label().to_string()))
                .chain(Strategy::ALL.iter().map(|s| format!("HP-{}", s.label())))
                .collect(),
            artifacts: BTreeMap::new(),
            flags: BTreeMap::new(),
            history: Vec::new(),
        };
        let ws = Self { root: root.to_path_buf(), config, manifest };
        write_atomic(&cfg_path, ws.config.to_toml().as_bytes())?;
        ws.save_manifest()?;
        Ok(ws)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    fn save_manifest(&self) -> Result<()> {
        crate::container::save_json(&self.root.join("manifest.json"), &self.manifest)
    }

    fn record(&mut self, entries: impl IntoIterator<Item = (String, String)>) {
        self.manifest.artifacts.extend(entries);
    }

    fn commit(&mut self, event: String) -> Result<()> {
        self.manifest.history.push(event);
        self.save_manifest()
    }

    /// Whether `rel` is recorded and on disk with the recorded content.
    fn is_current(&self, rel: &str) -> bool {
        self.manifest.artifacts.get(rel).is_some_and(|h| std::fs::read(self.root.join(rel)).is_ok_and(|b| &sha(&b) == h))
    }

    fn read_verified(&self, rel: &str) -> Result<Vec<u8>> {
        let path = self.root.join(rel);
        let bytes = std::fs::read(&path).map_err(|e| Error::Format { path: path.clone(), reason: e.to_string() })?;
        match self.manifest.artifacts.get(rel) {
            Some(h) if *h == sha(&bytes) => Ok(bytes),
            Some(_) => Err(Error::Format { path, reason: "content hash does not match the manifest".into() }),
            None => Err(Error::Format { path, reason: "artifact is not recorded in the manifest".into() }),
        }
    }

    fn read_array(&self, rel: &str) -> Result<ArrayContainer> {
        let bytes = self.read_verified(rel)?;
        ArrayContainer::read_from(bytes.as_slice()).map_err(|reason| Error::Format { path: self.root.join(rel), reason })
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, rel: &str) -> Result<T> {
        let bytes = self.read_verified(rel)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Format { path: self.root.join(rel), reason: e.to_string() })
    }

    fn nominal(&self) -> ModelParameters {
        ModelParameters::nominal(&self.config.frame, &self.config.excitation)
    }

    fn model_parameters(&self, sample: &ParameterSample) -> Result<ModelParameters> {
        ModelParameters::from_named(&self.config.domain.names, &sample.values, self.nominal())
    }

    pub fn samples(&self, split: Split) -> Result<Vec<ParameterSample>> {
        self.read_json(&format!("doe/{}.json", split.name()))
            .map_err(|e| Error::Untrained(format!("no {} design ({e}); run `doe` first", split.name())))
    }
}

// ---------------------------------------------------------------- doe

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoeReport {
    pub n_train: usize,
    pub n_valid: usize,
    pub reused: bool,
}

pub fn doe(ws: &mut Workspace) -> Result<DoeReport> {
    let (tr, va) = ("doe/train.json", "doe/valid.json");
    let c = ws.config.clone();
    if ws.is_current(tr) && ws.is_current(va) {
        return Ok(DoeReport { n_train: c.doe.n_train, n_valid: c.doe.n_valid, reused: true });
    }
    let train = lhs_sample(&c.domain, c.doe.n_train, c.doe.seed_train)?;
    let valid = lhs_sample(&c.domain, c.doe.n_valid, c.doe.seed_valid)?;
    let root = ws.root.clone();
    let entries = vec![put_json(&root, tr, &train)?, put_json(&root, va, &valid)?];
    ws.record(entries);
    ws.commit(format!("doe train={} valid={}", train.len(), valid.len()))?;
    Ok(DoeReport { n_train: train.len(), n_valid: valid.len(), reused: false })
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FomMeta {
    pub index: usize,
    /// Hash of configuration and sample, tying the files to their inputs.
    pub key: String,
    pub parameters: Vec<f64>,
    pub wall_time: f64,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub split: Split,
    pub completed: usize,
    pub skipped: usize,
    pub failed: Vec<(usize, String)>,
}

fn fom_dir(split: Split, i: usize) -> String {
    format!("fom/{}/{i:04}", split.name())
}

fn sample_key(config_hash: &str, sample: &ParameterSample) -> String {
    let mut h = Sha256::new();
    h.update(config_hash.as_bytes());
    for v in &sample.values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Full-order runs of one split; completed samples are skipped and failures
/// are logged without stopping the campaign.
pub fn simulate(ws: &mut Workspace, split: Split, opts: RunOptions) -> Result<SimulateReport> {
    let samples = ws.samples(split)?;
    let todo: Vec<usize> = (0..samples.len()).filter(|&i| !fom_complete(ws, split, i)).collect();
    let skipped = samples.len() - todo.len();
    let root = ws.root.clone();
    let hash = ws.manifest.config_hash.clone();
    let cfg = ws.config.clone();
    let nominal = ws.nominal();
    let keep_forces = split == Split::Train;
    let outcomes: Vec<(usize, Result<Vec<(String, String)>>)> = opts.install(|| {
        todo.par_iter()
            .map(|&i| {
                let run = || -> Result<Vec<(String, String)>> {
                    let s = &samples[i];
                    let params = ModelParameters::from_named(&cfg.domain.names, &s.values, nominal)?;
                    let sol = crate::fom::simulate_fom(&cfg.frame, &params, &cfg.excitation)?;
                    let dir = fom_dir(split, i);
                    let mut out = vec![
                        put_array(&root, &format!("{dir}/u.vprm"), &ArrayContainer::from_matrix(&sol.u))?,
                        put_array(&root, &format!("{dir}/u_dot.vprm"), &ArrayContainer::from_matrix(&sol.u_dot))?,
                        put_array(&root, &format!("{dir}/u_ddot.vprm"), &ArrayContainer::from_matrix(&sol.u_ddot))?,
                    ];
                    if keep_forces {
                        out.push(put_array(&root, &format!("{dir}/link_force.vprm"), &ArrayContainer::from_matrix(&sol.link_force))?);
                    }
                    let meta = FomMeta {
                        index: i,
                        key: sample_key(&hash, s),
                        parameters: s.values.clone(),
                        wall_time: sol.wall_time.as_secs_f64(),
                        newton_iterations: sol.newton_iterations,
                    };
                    // Written last: its presence marks the sample as complete.
                    out.push(put_json(&root, &format!("{dir}/meta.json"), &meta)?);
                    Ok(out)
                };
                (i, run())
            })
            .collect()
    })?;
    let mut failed = Vec::new();
    let mut completed = 0;
    for (i, outcome) in outcomes {
        match outcome {
            Ok(entries) => {
                ws.record(entries);
                completed += 1;
            }
            Err(e) => {
                tracing::warn!(split = split.name(), sample = i, error = %e, "full-order run failed");
                let entry = put_json(&root, &format!("{}/failed.json", fom_dir(split, i)), &e.to_string())?;
                ws.record([entry]);
                failed.push((i, e.to_string()));
            }
        }
    }
    let done = failed.is_empty();
    ws.manifest.flags.insert(format!("fom_{}_complete", split.name()), done);
    if completed > 0 || !failed.is_empty() {
        ws.commit(format!("simulate {} completed={completed} failed={}", split.name(), failed.len()))?;
    } else {
        ws.save_manifest()?;
    }
    Ok(SimulateReport { split, completed, skipped, failed })
}

fn fom_complete(ws: &Workspace, split: Split, i: usize) -> bool {
    let dir = fom_dir(split, i);
    let mut files = vec!["u.vprm", "u_dot.vprm", "u_ddot.vprm", "meta.json"];
    if split == Split::Train {
        files.push("link_force.vprm");
    }
    files.iter().all(|f| ws.is_current(&format!("{dir}/{f}")))
}

/// Stored full-order solution.
pub struct StoredFom {
    pub meta: FomMeta,
    pub u: DMatrix<f64>,
    pub u_dot: DMatrix<f64>,
    pub u_ddot: DMatrix<f64>,
    pub link_force: Option<DMatrix<f64>>,
}

pub fn load_fom(ws: &Workspace, split: Split, i: usize) -> Result<StoredFom> {
    let dir = fom_dir(split, i);
    let meta: FomMeta = ws.read_json(&format!("{dir}/meta.json"))?;
    let m = |f: &str| ws.read_array(&format!("{dir}/{f}.vprm"))?.to_matrix();
    Ok(StoredFom {
        meta,
        u: m("u")?,
        u_dot: m("u_dot")?,
        u_ddot: m("u_ddot")?,
        link_force: if split == Split::Train { Some(m("link_force")?) } else { None },
    })
}

/// Indices of the split with a complete full-order run.
pub fn completed_samples(ws: &Workspace, split: Split) -> Result<Vec<usize>> {
    let n = ws.samples(split)?.len();
    Ok((0..n).filter(|&i| fom_complete(ws, split, i)).collect())
}

// ---------------------------------------------------------------- build

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasesMeta {
    /// Training samples the bases were computed from.
    pub indices: Vec<usize>,
    pub global_energy: f64,
    pub local_energy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub strategy: Strategy,
    pub detail: String,
}

struct Bases {
    meta: BasesMeta,
    global: DMatrix<f64>,
    local: Vec<DMatrix<f64>>,
}

fn training_set(ws: &Workspace) -> Result<Vec<usize>> {
    let done = completed_samples(ws, Split::Train)?;
    if done.len() < 2 {
        return Err(Error::Untrained(format!(
            "{} completed training runs; run `simulate --split train` first",
            done.len()
        )));
    }
    Ok(done)
}

fn ensure_bases(ws: &mut Workspace) -> Result<Bases> {
    let indices = training_set(ws)?;
    let (meta_rel, g_rel, l_rel) = ("reduce/bases.json", "reduce/global.vprm", "reduce/local.vprm");
    if ws.is_current(meta_rel) {
        let meta: BasesMeta = ws.read_json(meta_rel)?;
        if meta.indices == indices {
            return Ok(Bases { meta, global: ws.read_array(g_rel)?.to_matrix()?, local: ws.read_array(l_rel)?.to_matrices()? });
        }
    }
    let red = ws.config.reduction.clone();
    let foms: Vec<DMatrix<f64>> = indices.iter().map(|&i| Ok(load_fom(ws, Split::Train, i)?.u)).collect::<Result<_>>()?;
    let local_bases: Vec<_> = foms
        .iter()
        .map(|u| pod_basis(&assemble_snapshots(&[u])?.matrix, Truncation::Rank(red.rank)))
        .collect::<Result<_>>()?;
    let refs: Vec<&DMatrix<f64>> = foms.iter().collect();
    let global = pod_basis(&assemble_snapshots(&refs)?.matrix, Truncation::Rank(red.global_rank))?;
    // Parametric strategies need one common local rank.
    let common = local_bases.iter().map(|b| b.rank()).min().unwrap_or(red.rank).min(global.rank());
    if common < red.rank {
        tracing::warn!(requested = red.rank, used = common, "local rank clamped to the available snapshot rank");
    }
    let meta = BasesMeta {
        indices,
        global_energy: global.energy_fraction,
        local_energy: local_bases.iter().map(|b| b.energy_fraction).collect(),
    };
    let local: Vec<DMatrix<f64>> = local_bases.into_iter().map(|b| b.modes.columns(0, common).into_owned()).collect();
    let root = ws.root.clone();
    let entries = vec![
        put_array(&root, g_rel, &ArrayContainer::from_matrix(&global.modes))?,
        put_array(&root, l_rel, &ArrayContainer::from_matrices(&local.iter().collect::<Vec<_>>())?)?,
        put_json(&root, meta_rel, &meta)?,
    ];
    ws.record(entries);
    ws.commit(format!("bases global={} local={}x{}", global.modes.ncols(), local.len(), red.rank))?;
    Ok(Bases { meta, global: global.modes, local })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CoefficientMeta {
    indices: Vec<usize>,
    reference: usize,
    samples: Vec<ParameterSample>,
}

/// `X_i = V_globalᵀ V_i` with column signs matched to the sample nearest the
/// domain centre.
fn ensure_coefficients(ws: &mut Workspace) -> Result<(Vec<ParameterSample>, Vec<DMatrix<f64>>, DMatrix<f64>)> {
    let bases = ensure_bases(ws)?;
    let (meta_rel, x_rel) = ("coefficients/meta.json", "coefficients/x.vprm");
    if ws.is_current(meta_rel) {
        let meta: CoefficientMeta = ws.read_json(meta_rel)?;
        if meta.indices == bases.meta.indices {
            return Ok((meta.samples, ws.read_array(x_rel)?.to_matrices()?, bases.global));
        }
    }
    let all = ws.samples(Split::Train)?;
    let samples: Vec<ParameterSample> = bases.meta.indices.iter().map(|&i| all[i].clone()).collect();
    let centre = ws.config.domain.centroid();
    let centre_norm = ws.config.domain.normalize(&centre)?;
    let reference = (0..samples.len())
        .min_by(|&a, &b| samples[a].distance(&centre_norm).total_cmp(&samples[b].distance(&centre_norm)))
        .expect("non-empty");
    let raw: Vec<DMatrix<f64>> = bases.local.iter().map(|v| compute_coefficients(v, &bases.global)).collect::<Result<_>>()?;
    let xs: Vec<DMatrix<f64>> = raw.iter().map(|x| align_signs(x, &raw[reference])).collect();
    let meta = CoefficientMeta { indices: bases.meta.indices.clone(), reference, samples: samples.clone() };
    let root = ws.root.clone();
    let entries = vec![
        put_array(&root, x_rel, &ArrayContainer::from_matrices(&xs.iter().collect::<Vec<_>>())?)?,
        put_json(&root, meta_rel, &meta)?,
    ];
    ws.record(entries);
    ws.commit(format!("coefficients n={}", xs.len()))?;
    Ok((samples, xs, bases.global))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MacArtifacts {
    library: ClusterLibrary,
    indices: Vec<usize>,
}

pub fn build(ws: &mut Workspace, strategy: Strategy, opts: RunOptions) -> Result<BuildReport> {
    let detail = match strategy {
        Strategy::Local | Strategy::Global => {
            let b = ensure_bases(ws)?;
            format!("global energy {:.6}, {} local bases", b.meta.global_energy, b.local.len())
        }
        Strategy::Macprom => {
            let lib = build_mac(ws)?;
            format!("{} clusters, min similarity {:.4}", lib.n_clusters(), lib.min_similarity())
        }
        Strategy::Cprom => {
            let (s, _, _) = ensure_coefficients(ws)?;
            format!("{} coefficient matrices", s.len())
        }
        Strategy::Vprom => {
            let models = build_vprom(ws, opts)?;
            let worst = models.iter().map(|m| *m.loss_trace.last().unwrap_or(&f64::NAN)).fold(0.0, f64::max);
            format!("{} column models, worst final loss {worst:.3e}", models.len())
        }
    };
    Ok(BuildReport { strategy, detail })
}

fn build_mac(ws: &mut Workspace) -> Result<ClusterLibrary> {
    let bases = ensure_bases(ws)?;
    let (lib_rel, v_rel) = ("macprom/library.json", "macprom/bases.vprm");
    if ws.is_current(lib_rel) {
        let a: MacArtifacts = ws.read_json(lib_rel)?;
        if a.indices == bases.meta.indices {
            return Ok(a.library);
        }
    }
    let all = ws.samples(Split::Train)?;
    let training: Vec<_> = bases.meta.indices.iter().zip(&bases.local).map(|(&i, v)| (all[i].clone(), v.clone())).collect();
    let mc = ws.config.macprom.clone();
    let library = adaptive_cluster(&training, mc.mac_tolerance, mc.max_clusters)?;
    // One POD basis per cluster over the members' snapshots.
    let mut cluster_bases = Vec::new();
    for c in 0..library.n_clusters() {
        let us: Vec<DMatrix<f64>> = library
            .members(c)
            .iter()
            .map(|&k| Ok(load_fom(ws, Split::Train, bases.meta.indices[k])?.u))
            .collect::<Result<_>>()?;
        let refs: Vec<&DMatrix<f64>> = us.iter().collect();
        cluster_bases.push(pod_basis(&assemble_snapshots(&refs)?.matrix, Truncation::Rank(ws.config.reduction.rank))?.modes);
    }
    let root = ws.root.clone();
    let art = MacArtifacts { library: library.clone(), indices: bases.meta.indices.clone() };
    let entries = vec![
        put_array(&root, v_rel, &ArrayContainer::from_matrices(&cluster_bases.iter().collect::<Vec<_>>())?)?,
        put_json(&root, lib_rel, &art)?,
    ];
    ws.record(entries);
    ws.commit(format!("build macprom clusters={}", library.n_clusters()))?;
    Ok(library)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VpromIndex {
    indices: Vec<usize>,
    columns: Vec<String>,
}

fn build_vprom(ws: &mut Workspace, opts: RunOptions) -> Result<Vec<CvaeModel>> {
    let (samples, xs, _) = ensure_coefficients(ws)?;
    let index_rel = "vprom/index.json";
    let indices: Vec<usize> = ensure_bases(ws)?.meta.indices;
    if ws.is_current(index_rel) {
        let idx: VpromIndex = ws.read_json(index_rel)?;
        if idx.indices == indices {
            return load_vprom(ws);
        }
    }
    let params: Vec<Vec<f64>> = samples.iter().map(|s| s.normalized.clone()).collect();
    let cfg = ws.config.cvae.clone();
    let models = opts.install(|| cvae::train_columns(&params, &xs, &cfg))??;
    let root = ws.root.clone();
    let mut entries = Vec::new();
    let mut columns = Vec::new();
    for m in &models {
        let stem = format!("vprom/column_{:03}", m.column_index);
        entries.push(put_json(&root, &format!("{stem}.json"), &m.architecture())?);
        entries.push(put_array(&root, &format!("{stem}.vprm"), &ArrayContainer::vector(&m.state_vector()))?);
        columns.push(stem);
    }
    entries.push(put_json(&root, index_rel, &VpromIndex { indices, columns })?);
    ws.record(entries);
    ws.commit(format!("build vprom columns={}", models.len()))?;
    Ok(models)
}

fn load_vprom(ws: &Workspace) -> Result<Vec<CvaeModel>> {
    let idx: VpromIndex = ws
        .read_json("vprom/index.json")
        .map_err(|e| Error::Untrained(format!("no trained column models ({e}); run `build --strategy vprom` first")))?;
    idx.columns
        .iter()
        .map(|stem| {
            let arch: CvaeArchitecture = ws.read_json(&format!("{stem}.json"))?;
            let state = ws.read_array(&format!("{stem}.vprm"))?.into_data();
            CvaeModel::from_parts(&arch, &state)
        })
        .collect()
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub strategy: Strategy,
    pub split: Split,
    /// ECSW tolerance; `None` runs without hyper-reduction.
    pub hyper: Option<f64>,
    /// Latent draws per envelope; VpROM only.
    pub uq: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSummary {
    pub sample_index: usize,
    pub n_draws: usize,
    pub failed_draws: usize,
    /// Fraction of steps at which the mean-basis trajectory lies inside the
    /// envelope at every DOF.
    pub containment: f64,
    pub max_width: f64,
    pub artifact: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub split: Split,
    pub records: Vec<ErrorRecord>,
    pub failures: Vec<(usize, String)>,
    pub envelopes: Vec<EnvelopeSummary>,
}

/// Everything needed to turn a query into a reduced basis.
enum BasisSource {
    Local,
    Global(DMatrix<f64>),
    Mac { library: ClusterLibrary, bases: Vec<DMatrix<f64>>, k: usize },
    Cprom(CpromModel),
    Vprom { models: Vec<CvaeModel>, v_global: DMatrix<f64> },
}

impl BasisSource {
    /// Basis for a query plus the MAC cluster it came from.
    fn basis(&self, sample: &ParameterSample, fom_u: &DMatrix<f64>, rank: usize) -> Result<(DMatrix<f64>, Option<usize>)> {
        match self {
            BasisSource::Local => Ok((pod_basis(&assemble_snapshots(&[fom_u])?.matrix, Truncation::Rank(rank))?.modes, None)),
            BasisSource::Global(v) => Ok((v.clone(), None)),
            BasisSource::Mac { library, bases, k } => {
                let c = select_cluster(library, &sample.normalized, *k)?;
                Ok((bases[c].clone(), Some(c)))
            }
            BasisSource::Cprom(model) => Ok((model.interpolate_basis(&sample.normalized)?, None)),
            BasisSource::Vprom { models, v_global } => {
                Ok((cvae::generate_basis(models, v_global, &sample.normalized, GenerationMode::Mean)?, None))
            }
        }
    }
}

fn basis_source(ws: &mut Workspace, strategy: Strategy) -> Result<BasisSource> {
    let rank = ws.config.reduction.rank;
    Ok(match strategy {
        Strategy::Local => BasisSource::Local,
        Strategy::Global => {
            let g = ensure_bases(ws)?.global;
            BasisSource::Global(g.columns(0, rank.min(g.ncols())).into_owned())
        }
        Strategy::Macprom => {
            if !ws.is_current("macprom/library.json") {
                return Err(Error::Untrained("no cluster library; run `build --strategy macprom` first".into()));
            }
            let a: MacArtifacts = ws.read_json("macprom/library.json")?;
            let bases = ws.read_array("macprom/bases.vprm")?.to_matrices()?;
            BasisSource::Mac { library: a.library, bases, k: ws.config.macprom.k_neighbours }
        }
        Strategy::Cprom => {
            if !ws.is_current("coefficients/meta.json") {
                return Err(Error::Untrained("no coefficient set; run `build --strategy cprom` first".into()));
            }
            let (samples, xs, vg) = ensure_coefficients(ws)?;
            let mut m = CpromModel::new(samples, xs, vg)?;
            m.k_int = ws.config.cprom.k_int;
            m.power = ws.config.cprom.power;
            BasisSource::Cprom(m)
        }
        Strategy::Vprom => {
            let models = load_vprom(ws)?;
            BasisSource::Vprom { models, v_global: ensure_bases(ws)?.global }
        }
    })
}

/// Training link-force histories, in training-set order.
fn training_forces(ws: &Workspace, indices: &[usize]) -> Result<Vec<DMatrix<f64>>> {
    indices
        .iter()
        .map(|&i| load_fom(ws, Split::Train, i)?.link_force.ok_or_else(|| Error::invalid("training run without link forces")))
        .collect()
}

pub fn evaluate(ws: &mut Workspace, eval: EvalOptions, opts: RunOptions) -> Result<EvalReport> {
    if eval.uq.is_some() && eval.strategy != Strategy::Vprom {
        return Err(Error::config("--uq is only available with --strategy vprom"));
    }
    if let Some(tau) = eval.hyper {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::OutOfRange { name: "tau".into(), value: tau, lower: 0.0, upper: 1.0 });
        }
    }
    let source = basis_source(ws, eval.strategy)?;
    let samples = ws.samples(eval.split)?;
    let done = completed_samples(ws, eval.split)?;
    if done.is_empty() {
        return Err(Error::Untrained(format!("no completed {} runs; run `simulate --split {}` first", eval.split.name(), eval.split.name())));
    }
    let cfg = ws.config.clone();
    let rank = cfg.reduction.rank;

    // Hyper-reduction needs the training forces; MAC weights are shared per cluster.
    let (forces, members) = if eval.hyper.is_some() {
        let indices = ensure_bases(ws)?.meta.indices;
        (training_forces(ws, &indices)?, indices.len())
    } else {
        (Vec::new(), 0)
    };
    let template = FrameModel::new(&cfg.frame, &ws.nominal())?;
    let cluster_weights: Vec<EcswWeights> = match (&source, eval.hyper) {
        (BasisSource::Mac { library, bases, .. }, Some(tau)) => (0..library.n_clusters())
            .map(|c| {
                let fs: Vec<&DMatrix<f64>> = library.members(c).iter().map(|&k| &forces[k]).collect();
                sparse_nnls(&build_compressed_ecsw_system(&template, &bases[c], &fs, cfg.ecsw.stride)?, tau)
            })
            .collect::<Result<_>>()?,
        _ => Vec::new(),
    };
    debug_assert!(members == 0 || members == forces.len());

    let foms: Vec<StoredFom> = done.iter().map(|&i| load_fom(ws, eval.split, i)).collect::<Result<_>>()?;
    let label = match eval.hyper {
        Some(_) => format!("HP-{}", eval.strategy.label()),
        None => eval.strategy.label().to_string(),
    };
    let run_one = |fom: &StoredFom| -> Result<(ErrorRecord, DMatrix<f64>)> {
        let i = fom.meta.index;
        let sample = &samples[i];
        let params = ModelParameters::from_named(&cfg.domain.names, &sample.values, ModelParameters::nominal(&cfg.frame, &cfg.excitation))?;
        let model = FrameModel::new(&cfg.frame, &params)?;
        let spec = params.excitation(&cfg.excitation);
        let ground = generate_excitation(&spec)?;
        let (v, cluster) = source.basis(sample, &fom.u, rank)?;
        let weights = match (eval.hyper, cluster) {
            (None, _) => None,
            (Some(_), Some(c)) => Some(cluster_weights[c].clone()),
            (Some(tau), None) => {
                let fs: Vec<&DMatrix<f64>> = forces.iter().collect();
                Some(sparse_nnls(&build_compressed_ecsw_system(&model, &v, &fs, cfg.ecsw.stride)?, tau)?)
            }
        };
        let rom = rom_simulate_model(
            &model,
            &v,
            weights.as_ref().map(|w| w.xi.as_slice()),
            NewmarkSettings::default(),
            &ground,
            spec.dt,
            None,
            eval.strategy.name(),
        )?;
        let steps = settled_steps(fom.u.nrows(), cfg.reduction.settle_fraction);
        let record = ErrorRecord {
            strategy: label.clone(),
            sample_index: i,
            parameters: sample.values.clone(),
            err_u: err_q(&fom.u, &rom.u, None, Some(&steps))?,
            err_udot: err_q(&fom.u_dot, &rom.u_dot, None, Some(&steps))?,
            err_uddot: err_q(&fom.u_ddot, &rom.u_ddot, None, Some(&steps))?,
            wall_time_fom: fom.meta.wall_time,
            wall_time_rom: rom.wall_time.as_secs_f64(),
            assembly_time_rom: rom.assembly_time.as_secs_f64(),
            hyper_elements: weights.map(|w| w.n_selected()),
        };
        Ok((record, v))
    };
    let outcomes: Vec<Result<(ErrorRecord, DMatrix<f64>)>> = opts.install(|| foms.par_iter().map(run_one).collect())?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (fom, out) in foms.iter().zip(outcomes) {
        match out {
            Ok((r, _)) => records.push(r),
            Err(e) => {
                tracing::warn!(sample = fom.meta.index, error = %e, "reduced run failed");
                failures.push((fom.meta.index, e.to_string()));
            }
        }
    }

    let mut envelopes = Vec::new();
    let mut entries = Vec::new();
    let root = ws.root.clone();
    if let (Some(n_draws), BasisSource::Vprom { models, v_global }) = (eval.uq, &source) {
        for fom in foms.iter().take(cfg.uq.max_samples) {
            let i = fom.meta.index;
            let sample = &samples[i];
            let params = ws.model_parameters(sample)?;
            let model = FrameModel::new(&cfg.frame, &params)?;
            let spec = params.excitation(&cfg.excitation);
            let ground = generate_excitation(&spec)?;
            let sim = |v: &DMatrix<f64>| {
                Ok(rom_simulate_model(&model, v, None, NewmarkSettings::default(), &ground, spec.dt, None, "vprom-uq")?.u)
            };
            let seed = cfg.uq.seed.wrapping_add(i as u64);
            let env = opts.install(|| cvae::uncertainty_envelope(models, v_global, &sample.normalized, n_draws, seed, sim))??;
            let rel = format!("uq/{}_{i:04}.vprm", eval.split.name());
            entries.push(put_array(&root, &rel, &ArrayContainer::from_matrices(&[&env.mean, &env.lower, &env.upper])?)?);
            envelopes.push(EnvelopeSummary {
                sample_index: i,
                n_draws,
                failed_draws: env.failures.len(),
                containment: env.containment(None, 0.0),
                max_width: (&env.upper - &env.lower).amax(),
                artifact: rel,
            });
        }
    }
    let report = EvalReport { label: label.clone(), split: eval.split, records, failures, envelopes };
    entries.push(put_json(&root, &format!("eval/{}_{}.json", label, eval.split.name()), &report)?);
    ws.record(entries);
    ws.commit(format!("evaluate {label} {} records={} failures={}", eval.split.name(), report.records.len(), report.failures.len()))?;
    Ok(report)
}

// ---------------------------------------------------------------- report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOutput {
    pub summaries: Vec<metrics::StrategySummary>,
    pub files: Vec<String>,
}

/// Aggregates every evaluation of the workspace into tables.
pub fn report(ws: &mut Workspace) -> Result<ReportOutput> {
    let evals: Vec<String> = ws.manifest.artifacts.keys().filter(|k| k.starts_with("eval/") && k.ends_with(".json")).cloned().collect();
    let mut records = Vec::new();
    for rel in &evals {
        let r: EvalReport = ws.read_json(rel)?;
        records.extend(r.records.into_iter().map(|mut rec| {
            rec.strategy = format!("{}/{}", rec.strategy, r.split.name());
            rec
        }));
    }
    if records.is_empty() {
        return Err(Error::invalid("no evaluation records; run `evaluate` first"));
    }
    let summaries = metrics::summarize(&records)?;
    let axes = (ws.config.report.map_axes[0].as_str(), ws.config.report.map_axes[1].as_str());
    let map = metrics::emit_error_map(&records, &ws.config.domain.names, axes, None)?;
    let root = ws.root.clone();
    let entries = vec![
        put(&root, "report/summary.tsv", metrics::summary_table(&summaries).as_bytes())?,
        put_json(&root, "report/summary.json", &summaries)?,
        put(&root, "report/records.tsv", metrics::records_table(&records).as_bytes())?,
        put(&root, "report/errors.tsv", error_table(&records).as_bytes())?,
        put(&root, "report/error_map.tsv", metrics::error_map_table(&map, axes).as_bytes())?,
    ];
    let files = entries.iter().map(|e| e.0.clone()).collect();
    ws.record(entries);
    ws.commit(format!("report records={}", records.len()))?;
    Ok(ReportOutput { summaries, files })
}

/// Errors only, printed exactly; timings are left out so identical runs give
/// identical files.
pub fn error_table(records: &[ErrorRecord]) -> String {
    let mut out = String::from("strategy\tsample\terr_u\terr_udot\terr_uddot\n");
    for r in records {
        let _ = writeln!(out, "{}\t{}\t{:?}\t{:?}\t{:?}", r.strategy, r.sample_index, r.err_u, r.err_udot, r.err_uddot);
    }
    out
}

/// doe, both simulate splits, every build, and plain plus hyper-reduced
/// evaluations of the parametric strategies on the validation split.
pub fn run_campaign(ws: &mut Workspace, opts: RunOptions) -> Result<ReportOutput> {
    doe(ws)?;
    simulate(ws, Split::Train, opts)?;
    simulate(ws, Split::Valid, opts)?;
    for s in [Strategy::Macprom, Strategy::Cprom, Strategy::Vprom] {
        build(ws, s, opts)?;
    }
    evaluate(ws, EvalOptions { strategy: Strategy::Local, split: Split::Train, hyper: None, uq: None }, opts)?;
    let tau = ws.config.ecsw.tau;
    for s in [Strategy::Global, Strategy::Macprom, Strategy::Cprom, Strategy::Vprom] {
        evaluate(ws, EvalOptions { strategy: s, split: Split::Valid, hyper: None, uq: None }, opts)?;
    }
    evaluate(ws, EvalOptions { strategy: Strategy::Vprom, split: Split::Valid, hyper: Some(tau), uq: None }, opts)?;
    report(ws)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn campaign() -> (tempfile::TempDir, Workspace) {
        let dir = tempfile::tempdir().unwrap();
        let mut ws = Workspace::open(dir.path(), Some(RunConfig::tiny())).unwrap();
        let opts = RunOptions { workers: 2 };
        doe(&mut ws).unwrap();
        simulate(&mut ws, Split::Train, opts).unwrap();
        simulate(&mut ws, Split::Valid, opts).unwrap();
        (dir, ws)
    }

    #[test]
    fn steps_are_idempotent_and_hash_checked() {
        let (dir, mut ws) = campaign();
        assert!(doe(&mut ws).unwrap().reused);
        let again = simulate(&mut ws, Split::Train, RunOptions::default()).unwrap();
        assert_eq!((again.completed, again.skipped), (0, 6));

        // Reopening keeps the run; a different config is refused.
        let ws2 = Workspace::open(dir.path(), None).unwrap();
        assert_eq!(ws2.manifest().artifacts, ws.manifest().artifacts);
        assert!(Workspace::open(dir.path(), Some(RunConfig::tiny().with_seed(1))).is_err());

        // Corruption is detected and the sample is recomputed.
        std::fs::write(dir.path().join("fom/train/0002/u.vprm"), b"junk").unwrap();
        assert!(load_fom(&ws, Split::Train, 2).is_err());
        let redo = simulate(&mut ws, Split::Train, RunOptions::default()).unwrap();
        assert_eq!(redo.completed, 1);
        assert!(load_fom(&ws, Split::Train, 2).is_ok());
    }

    #[test]
    fn every_strategy_evaluates() {
        let (_dir, mut ws) = campaign();
        let opts = RunOptions { workers: 2 };
        for s in Strategy::ALL {
            build(&mut ws, s, opts).unwrap();
        }
        for s in Strategy::ALL {
            let r = evaluate(&mut ws, EvalOptions { strategy: s, split: Split::Valid, hyper: None, uq: None }, opts).unwrap();
            assert_eq!(r.records.len(), 3, "{s:?}: {:?}", r.failures);
            assert!(r.records.iter().all(|x| x.err_u.is_finite()));
        }
        let hp = evaluate(&mut ws, EvalOptions { strategy: Strategy::Cprom, split: Split::Valid, hyper: Some(0.01), uq: None }, opts).unwrap();
        assert_eq!(hp.label, "HP-CpROM");
        assert!(hp.records.iter().all(|x| x.hyper_elements.is_some_and(|n| n >= 1)));

        let uq = evaluate(&mut ws, EvalOptions { strategy: Strategy::Vprom, split: Split::Valid, hyper: None, uq: Some(4) }, opts).unwrap();
        assert_eq!(uq.envelopes.len(), 1);
        assert!(ws.is_current(&uq.envelopes[0].artifact));

        let out = report(&mut ws).unwrap();
        assert!(out.summaries.len() >= 6);
        let text = std::fs::read_to_string(ws.root().join("report/errors.tsv")).unwrap();
        assert!(text.lines().count() > 15);
    }

    #[test]
    fn usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut ws = Workspace::open(dir.path(), Some(RunConfig::tiny())).unwrap();
        assert!(matches!(simulate(&mut ws, Split::Train, RunOptions::default()), Err(Error::Untrained(_))));
        doe(&mut ws).unwrap();
        assert!(matches!(build(&mut ws, Strategy::Cprom, RunOptions::default()), Err(Error::Untrained(_))));
        let bad = EvalOptions { strategy: Strategy::Cprom, split: Split::Valid, hyper: None, uq: Some(3) };
        assert!(matches!(evaluate(&mut ws, bad, RunOptions::default()), Err(Error::Config(_))));
        assert!(report(&mut ws).is_err());
        assert!("test".parse::<Split>().is_err());
    }
}
