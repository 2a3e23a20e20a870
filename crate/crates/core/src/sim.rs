//! Synthetic matrix-variate experiments comparing the Kronecker MLE, the
//! initialization-based estimator and the fitted partial-isotropy estimator.
//!
//! Random numbers come from ChaCha20 (`rand_chacha::ChaCha20Rng`). Every
//! stream is keyed by `(seed, index, purpose)`, mixed into a 64-bit seed with
//! SplitMix64, so results do not depend on thread scheduling.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::core_geometry::{random_core_factor, CoreFactor};
use crate::error::{Error, Result};
use crate::kcd::{kcd, kronecker_mle, FlipFlopConfig, SquareRootKind};
use crate::matops::{kron, mat, spectral_norm, sym, sym_sqrt, Dims, Mat, Vector};
use crate::picse::{fit_from, init, FitConfig, SampleCov, Termination};

const PURPOSE_TRUTH: u64 = 1;
const PURPOSE_DATA: u64 = 2;
const PURPOSE_CORE: u64 = 3;

/// Data-generating model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    /// Core `(1 − λ)AAᵀ + λI`.
    M1,
    /// Core `(1 − λ)AAᵀ + λD` with `D` a random diagonal core.
    M2,
}

impl std::str::FromStr for Model {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(Model::M1),
            "m2" => Ok(Model::M2),
            other => Err(Error::InvalidConfig(format!("unknown model {other:?}"))),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, index, purpose)`.
pub fn stream_rng(seed: u64, index: u64, purpose: u64) -> ChaCha20Rng {
    let k = splitmix64(splitmix64(splitmix64(seed) ^ index) ^ purpose.rotate_left(32));
    ChaCha20Rng::seed_from_u64(k)
}

fn random_orthogonal(q: usize, rng: &mut ChaCha20Rng) -> Mat {
    let g = Mat::from_fn(q, q, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let (mut qm, r) = (qr.q(), qr.r());
    for j in 0..q {
        if r[(j, j)] < 0.0 {
            qm.column_mut(j).neg_mut();
        }
    }
    qm
}

/// Random SPD root factor whose square has condition number at most 50.
fn random_root_factor(q: usize, rng: &mut ChaCha20Rng) -> Mat {
    let o = random_orthogonal(q, rng);
    let top = 50f64.sqrt().ln();
    let d = Vector::from_fn(q, |_, _| rng.random_range(0.0..top).exp());
    sym(&(&o * Mat::from_diagonal(&d) * o.transpose()))
}

/// Ground truth of one replication.
#[derive(Debug, Clone)]
pub struct Truth {
    pub sigma: Mat,
    /// Symmetric root factors `K1^{1/2}`, `K2^{1/2}`.
    pub root1: Mat,
    pub root2: Mat,
    pub a: CoreFactor,
    pub lambda: f64,
    /// Diagonal core of model M2.
    pub d: Option<Mat>,
}

impl Truth {
    pub fn core(&self) -> Mat {
        let p = self.a.a.nrows();
        let base = self.d.clone().unwrap_or_else(|| Mat::identity(p, p));
        sym(&(self.a.gram() * (1.0 - self.lambda) + base * self.lambda))
    }
}

pub fn gen_truth(model: Model, dims: Dims, lambda: f64, seed: u64) -> Result<Truth> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidConfig(format!("λ = {lambda} is outside (0, 1)")));
    }
    let mut rng = stream_rng(seed, 0, PURPOSE_TRUTH);
    let root1 = random_root_factor(dims.p1, &mut rng);
    let root2 = random_root_factor(dims.p2, &mut rng);
    let core_seed = splitmix64(seed ^ PURPOSE_CORE);
    let a = random_core_factor(dims, core_seed)?;
    let d = match model {
        Model::M1 => None,
        Model::M2 => {
            let p = dims.p();
            let diag = Mat::from_diagonal(&Vector::from_fn(p, |_, _| {
                rng.random_range(-(10f64.sqrt().ln())..10f64.sqrt().ln()).exp()
            }));
            let k = kronecker_mle(&diag, dims, &FlipFlopConfig::default())?;
            let kd = k.full().diagonal();
            Some(Mat::from_diagonal(&diag.diagonal().component_div(&kd)))
        }
    };
    let mut truth = Truth {
        sigma: Mat::zeros(0, 0),
        root1,
        root2,
        a,
        lambda,
        d,
    };
    let root = kron(&truth.root2, &truth.root1);
    truth.sigma = sym(&(&root * truth.core() * root.transpose()));
    Ok(truth)
}

/// `n` draws `Yᵢ` with `vec(Yᵢ) = Σ^{1/2} zᵢ`; observation `i` uses stream `(seed, i)`.
pub fn gen_data(sigma: &Mat, dims: Dims, n: usize, seed: u64) -> Result<Vec<Mat>> {
    dims.check_square(sigma, "covariance")?;
    let root = sym_sqrt(sigma)?;
    let p = dims.p();
    (0..n)
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64, PURPOSE_DATA);
            let z = Vector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
            mat(&(&root * z), dims.p1, dims.p2)
        })
        .collect()
}

/// `‖est − truth‖₂ / ‖truth‖₂`.
pub fn rel_spec_norm(est: &Mat, truth: &Mat) -> Result<f64> {
    if est.shape() != truth.shape() {
        return Err(Error::DimensionMismatch("estimate and truth differ in shape".into()));
    }
    let t = spectral_norm(truth);
    if t == 0.0 {
        return Err(Error::InvalidConfig("truth has zero norm".into()));
    }
    Ok(spectral_norm(&(est - truth)) / t)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: Model,
    pub p1: usize,
    pub p2: usize,
    pub rank: usize,
    pub lambda: f64,
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub h_kinds: Vec<SquareRootKind>,
    pub tol: f64,
    pub max_iter: usize,
}

impl ExperimentConfig {
    pub fn dims(&self) -> Result<Dims> {
        Dims::with_rank(self.p1, self.p2, self.rank)
    }

    pub fn fit_config(&self, h: SquareRootKind) -> FitConfig {
        FitConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            ..FitConfig::with_h(h)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims()?;
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::InvalidConfig(format!("λ = {} is outside (0, 1)", self.lambda)));
        }
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        if self.n_list.is_empty() || self.n_list.iter().any(|&n| n < 2) {
            return Err(Error::InvalidConfig("every sample size must be at least 2".into()));
        }
        if self.h_kinds.is_empty() {
            return Err(Error::InvalidConfig("at least one square-root kind is required".into()));
        }
        self.fit_config(self.h_kinds[0]).validate()
    }
}

/// One row of `results.csv`. Metric fields are empty for failed fits.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResultRecord {
    pub estimator: String,
    pub rep: usize,
    pub n: usize,
    pub sigma_err: Option<f64>,
    pub k_err: Option<f64>,
    pub c_err: Option<f64>,
    pub lambda_hat: Option<f64>,
    pub sweeps: Option<usize>,
    pub termination: String,
    pub failed: bool,
    #[serde(skip)]
    pub wall_ms: f64,
}

struct Metrics {
    sigma: f64,
    k: f64,
    c: f64,
}

fn metrics(est: &Mat, truth: &Mat, dims: Dims, h: SquareRootKind) -> Result<Metrics> {
    crate::matops::check_pd(est)?;
    let de = kcd(est, dims, h)?;
    let dt = kcd(truth, dims, h)?;
    Ok(Metrics {
        sigma: rel_spec_norm(est, truth)?,
        k: rel_spec_norm(&de.k.full(), &dt.k.full())?,
        c: rel_spec_norm(&de.core, &dt.core)?,
    })
}

fn record(
    name: String,
    rep: usize,
    n: usize,
    started: Instant,
    outcome: Result<(Mat, Option<f64>, Option<(usize, Termination)>)>,
    truth: &Mat,
    dims: Dims,
    h: SquareRootKind,
) -> ResultRecord {
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    let scored = outcome.and_then(|(est, lambda, fit)| Ok((metrics(&est, truth, dims, h)?, lambda, fit)));
    match scored {
        Ok((m, lambda_hat, fit)) => ResultRecord {
            estimator: name,
            rep,
            n,
            sigma_err: Some(m.sigma),
            k_err: Some(m.k),
            c_err: Some(m.c),
            lambda_hat,
            sweeps: fit.map(|f| f.0),
            termination: fit.map_or("none", |f| f.1.as_str()).to_string(),
            failed: false,
            wall_ms,
        },
        Err(e) => ResultRecord {
            estimator: name,
            rep,
            n,
            sigma_err: None,
            k_err: None,
            c_err: None,
            lambda_hat: None,
            sweeps: None,
            termination: format!("error: {e}"),
            failed: true,
            wall_ms,
        },
    }
}

/// All records of one replication, in `(n, estimator)` order.
pub fn run_replication(cfg: &ExperimentConfig, rep: usize) -> Result<Vec<ResultRecord>> {
    let dims = cfg.dims()?;
    let rep_seed = splitmix64(cfg.seed ^ splitmix64(rep as u64));
    let truth = gen_truth(cfg.model, dims, cfg.lambda, rep_seed)?;
    let mut out = Vec::new();
    for (k, &n) in cfg.n_list.iter().enumerate() {
        let ys = gen_data(&truth.sigma, dims, n, splitmix64(rep_seed ^ (k as u64 + 1)))?;
        let s = SampleCov::from_data(&ys, dims)?;

        let t = Instant::now();
        let kmle = kronecker_mle(&s.s, dims, &FlipFlopConfig::default()).map(|k| (k.full(), None, None));
        out.push(record("KMLE".into(), rep, n, t, kmle, &truth.sigma, dims, SquareRootKind::Symmetric));

        for &h in &cfg.h_kinds {
            let fc = cfg.fit_config(h);
            let t = Instant::now();
            let start = init(&s, cfg.rank, &fc);
            let base = start
                .as_ref()
                .map(|tau| (tau.sigma(), Some(tau.lambda), None))
                .map_err(|e| Error::Convergence(e.to_string()));
            out.push(record(format!("Base-{}", h.label()), rep, n, t, base, &truth.sigma, dims, h));

            let t = Instant::now();
            let fitted = start.and_then(|tau| fit_from(&ys, &s, tau, &fc)).map(|(tau, sigma, trace)| {
                (sigma, Some(tau.lambda), Some((trace.sweeps(), trace.termination)))
            });
            out.push(record(format!("PICSE-{}", h.label()), rep, n, t, fitted, &truth.sigma, dims, h));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Stat {
    fn of(xs: &[f64]) -> Option<Stat> {
        if xs.is_empty() {
            return None;
        }
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
        } else {
            0.0
        };
        Some(Stat {
            mean: m,
            std: var.sqrt(),
            count: xs.len(),
        })
    }
}

/// Means and standard deviations for one `(n, estimator)` cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryCell {
    pub n: usize,
    pub estimator: String,
    pub sigma_err: Option<Stat>,
    pub k_err: Option<Stat>,
    pub c_err: Option<Stat>,
    pub lambda_abs_err: Option<Stat>,
    pub wall_ms: Option<Stat>,
    pub failures: usize,
    pub converged: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub cells: Vec<SummaryCell>,
}

impl Summary {
    pub fn cell(&self, n: usize, estimator: &str) -> Option<&SummaryCell> {
        self.cells.iter().find(|c| c.n == n && c.estimator == estimator)
    }
}

pub fn summarize(cfg: &ExperimentConfig, records: &[ResultRecord]) -> Summary {
    let mut keys: Vec<(usize, String)> = Vec::new();
    for r in records {
        let key = (r.n, r.estimator.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let cells = keys
        .into_iter()
        .map(|(n, est)| {
            let rows: Vec<&ResultRecord> = records.iter().filter(|r| r.n == n && r.estimator == est).collect();
            let pick = |f: &dyn Fn(&ResultRecord) -> Option<f64>| -> Option<Stat> {
                Stat::of(&rows.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            SummaryCell {
                n,
                estimator: est.clone(),
                sigma_err: pick(&|r| r.sigma_err),
                k_err: pick(&|r| r.k_err),
                c_err: pick(&|r| r.c_err),
                lambda_abs_err: pick(&|r| r.lambda_hat.map(|l| (l - cfg.lambda).abs())),
                wall_ms: pick(&|r| Some(r.wall_ms)),
                failures: rows.iter().filter(|r| r.failed).count(),
                converged: rows.iter().filter(|r| r.termination == "converged").count(),
            }
        })
        .collect();
    Summary {
        config: cfg.clone(),
        cells,
    }
}

/// Runs all replications (in parallel) and merges the records in `(rep, n, estimator)` order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Vec<ResultRecord>, Summary)> {
    cfg.validate()?;
    let per_rep: Vec<Result<Vec<ResultRecord>>> =
        (0..cfg.reps).into_par_iter().map(|rep| run_replication(cfg, rep)).collect();
    let mut records = Vec::new();
    for r in per_rep {
        records.extend(r?);
    }
    let summary = summarize(cfg, &records);
    Ok((records, summary))
}

/// Writes `results.csv` and `summary.json` into `dir`.
pub fn write_outputs(dir: &Path, records: &[ResultRecord], summary: &Summary) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    let f = std::fs::File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(f, summary)?;
    Ok(())
}
