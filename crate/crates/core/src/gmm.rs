//! Diagonal-covariance Gaussian mixtures: EM fitting, density evaluation,
//! posterior responsibilities and seeded sampling.
//!
//! A fitted [`GaussianMixture`] is immutable. Every operation that draws
//! random numbers takes an explicit seed, so fits and samples are pure
//! functions of their inputs.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact_json;
use crate::scalar::{log_sum_exp, sq_dist, Real};
use crate::seed;

/// How initial component means are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InitMethod {
    #[default]
    #[serde(rename = "kmeans++")]
    KMeansPlusPlus,
    #[serde(rename = "random-points")]
    RandomPoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Number of mixture components `K`.
    pub n_components: usize,
    pub max_iterations: usize,
    /// Stop once the relative change in mean log-likelihood falls below this.
    pub rel_tolerance: f64,
    /// Lower bound applied to every variance.
    pub cov_floor: f64,
    pub init: InitMethod,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_components: 6,
            max_iterations: 200,
            rel_tolerance: 1e-6,
            cov_floor: 1e-6,
            init: InitMethod::KMeansPlusPlus,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_components == 0 {
            return Err(Error::InvalidConfig("n_components must be >= 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if !(self.cov_floor > 0.0 && self.cov_floor.is_finite()) {
            return Err(Error::InvalidConfig("cov_floor must be positive".into()));
        }
        if !(self.rel_tolerance >= 0.0) {
            return Err(Error::InvalidConfig("rel_tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

/// One weighted diagonal Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent<T> {
    pub weight: T,
    pub mean: Vec<T>,
    /// Diagonal of the covariance matrix.
    pub variances: Vec<T>,
}

impl<T: Real> GaussianComponent<T> {
    /// Builds a component, raising every variance to at least `floor`.
    pub fn new(weight: T, mean: Vec<T>, variances: Vec<T>, floor: T) -> Result<Self> {
        if mean.len() != variances.len() {
            return Err(Error::dim(mean.len(), variances.len()));
        }
        let variances = variances.into_iter().map(|v| v.max(floor)).collect();
        Ok(Self {
            weight,
            mean,
            variances,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `log N(x; mean, diag(variances))`, without the mixture weight.
    pub fn log_pdf(&self, x: &[T]) -> T {
        let two_pi = T::lit(2.0) * T::PI();
        let half = T::lit(0.5);
        let mut acc = T::zero();
        for ((&xi, &m), &v) in x.iter().zip(&self.mean).zip(&self.variances) {
            let d = xi - m;
            acc = acc + (two_pi * v).ln() + d * d / v;
        }
        -half * acc
    }
}

/// A finite mixture of diagonal Gaussians plus the trace of the EM run
/// that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture<T> {
    components: Vec<GaussianComponent<T>>,
    dim: usize,
    fit_trace: Vec<f64>,
    converged: bool,
    iterations: usize,
}

fn weight_tolerance<T: Real>() -> f64 {
    (T::epsilon().as_f64() * 100.0).max(1e-9)
}

impl<T: Real> GaussianMixture<T> {
    /// Assembles a mixture from components. Weights must sum to one.
    pub fn new(components: Vec<GaussianComponent<T>>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidConfig("mixture needs at least one component".into()))?;
        let dim = first.dim();
        let mut total = 0.0;
        for c in &components {
            if c.dim() != dim || c.variances.len() != dim {
                return Err(Error::dim(dim, c.dim()));
            }
            let w = c.weight.as_f64();
            if !(w > 0.0 && w <= 1.0 + weight_tolerance::<T>()) {
                return Err(Error::InvalidConfig(format!("component weight {w} outside (0, 1]")));
            }
            if c.mean.iter().any(|m| !m.is_finite())
                || c.variances.iter().any(|v| !(v.is_finite() && *v > T::zero()))
            {
                return Err(Error::NonFiniteInput);
            }
            total += w;
        }
        if (total - 1.0).abs() > weight_tolerance::<T>() {
            return Err(Error::InvalidConfig(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self {
            components,
            dim,
            fit_trace: Vec::new(),
            converged: false,
            iterations: 0,
        })
    }

    /// Fits a mixture to the rows of `data` by expectation-maximization.
    pub fn fit<R: AsRef<[T]>>(data: &[R], cfg: &FitConfig) -> Result<Self> {
        fit_em(data, cfg)
    }

    pub fn components(&self) -> &[GaussianComponent<T>] {
        &self.components
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mean log-likelihood of the training data, one entry per EM iteration.
    pub fn fit_trace(&self) -> &[f64] {
        &self.fit_trace
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::dim(self.dim, x.len()));
        }
        Ok(())
    }

    fn weighted_log_pdfs(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend(self.components.iter().map(|c| c.weight.ln() + c.log_pdf(x)));
    }

    /// `log sum_k w_k N(x; mu_k, Sigma_k)`.
    pub fn log_density(&self, x: &[T]) -> Result<T> {
        self.check_dim(x)?;
        let mut buf = Vec::with_capacity(self.components.len());
        self.weighted_log_pdfs(x, &mut buf);
        Ok(log_sum_exp(&buf))
    }

    /// Posterior probability of each component having generated `x`.
    pub fn responsibilities(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_dim(x)?;
        let mut buf = Vec::with_capacity(self.components.len());
        self.weighted_log_pdfs(x, &mut buf);
        let lse = log_sum_exp(&buf);
        Ok(buf.into_iter().map(|l| (l - lse).exp()).collect())
    }

    /// Draws `n` points: a component is chosen by weight, then each
    /// coordinate is drawn independently. Returns the points and the index
    /// of the component that generated each one.
    pub fn sample(&self, n: usize, seed: u64) -> (Vec<Vec<T>>, Vec<usize>) {
        let mut rng = seed::rng(seed);
        let mut cumulative = Vec::with_capacity(self.components.len());
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.weight.as_f64();
            cumulative.push(acc);
        }
        let last = self.components.len() - 1;
        let mut points = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random::<f64>() * acc;
            let k = cumulative.iter().position(|&c| u < c).unwrap_or(last);
            let comp = &self.components[k];
            let point = comp
                .mean
                .iter()
                .zip(&comp.variances)
                .map(|(&m, &v)| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + v.sqrt() * T::lit(z)
                })
                .collect();
            points.push(point);
            labels.push(k);
        }
        (points, labels)
    }

    pub fn to_json(&self) -> String {
        let doc = MixtureDoc {
            dim: self.dim,
            components: self
                .components
                .iter()
                .map(|c| ComponentDoc {
                    weight: c.weight.as_f64(),
                    mean: c.mean.iter().map(|v| v.as_f64()).collect(),
                    variances: c.variances.iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("mixture serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: MixtureDoc = serde_json::from_str(s)?;
        let components = doc
            .components
            .into_iter()
            .map(|c| {
                if c.mean.len() != doc.dim || c.variances.len() != doc.dim {
                    return Err(Error::dim(doc.dim, c.mean.len().max(c.variances.len())));
                }
                Ok(GaussianComponent {
                    weight: T::lit(c.weight),
                    mean: c.mean.into_iter().map(T::lit).collect(),
                    variances: c.variances.into_iter().map(T::lit).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(components)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentDoc {
    #[serde(serialize_with = "exact_json::serialize_f64")]
    weight: f64,
    #[serde(serialize_with = "exact_json::serialize_vec")]
    mean: Vec<f64>,
    #[serde(serialize_with = "exact_json::serialize_vec")]
    variances: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureDoc {
    dim: usize,
    components: Vec<ComponentDoc>,
}

/// Fits a diagonal Gaussian mixture with `cfg.n_components` components.
///
/// Stops when the relative improvement of the mean log-likelihood drops
/// below `cfg.rel_tolerance` or after `cfg.max_iterations` M-steps. The
/// returned mixture's parameters are the ones scored by the last
/// `fit_trace` entry.
pub fn fit_em<T: Real, R: AsRef<[T]>>(data: &[R], cfg: &FitConfig) -> Result<GaussianMixture<T>> {
    cfg.validate()?;
    let n = data.len();
    let k = cfg.n_components;
    if n < k {
        return Err(Error::TooFewSamples { got: n, need: k });
    }
    let dim = data[0].as_ref().len();
    for row in data {
        let row = row.as_ref();
        if row.len() != dim {
            return Err(Error::dim(dim, row.len()));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
    }
    let floor = T::lit(cfg.cov_floor);
    let global_var = column_variances(data, floor);
    let mut components = initialize(data, cfg, &global_var, floor);

    let nf = T::from_usize(n).expect("sample count fits in T");
    let collapse_mass = T::epsilon() * nf;
    let mut log_resp = vec![T::zero(); n * k];
    let mut row_lse = vec![T::zero(); n];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    loop {
        // E-step: log responsibilities and per-row log densities.
        for (i, row) in data.iter().enumerate() {
            let row = row.as_ref();
            let lr = &mut log_resp[i * k..(i + 1) * k];
            for (slot, c) in lr.iter_mut().zip(&components) {
                *slot = c.weight.ln() + c.log_pdf(row);
            }
            let lse = log_sum_exp(lr);
            row_lse[i] = lse;
            for slot in lr.iter_mut() {
                *slot = (*slot - lse).exp();
            }
        }
        let mean_ll = row_lse.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
        if let Some(&prev) = trace.last() {
            trace.push(mean_ll);
            let rel = (mean_ll - prev).abs() / f64::max(prev.abs(), f64::MIN_POSITIVE);
            if rel < cfg.rel_tolerance {
                converged = true;
                break;
            }
        } else {
            trace.push(mean_ll);
        }
        if iterations >= cfg.max_iterations {
            break;
        }

        // M-step; `log_resp` now holds responsibilities.
        let mut collapsed = Vec::new();
        for (j, comp) in components.iter_mut().enumerate() {
            let mass: T = (0..n).map(|i| log_resp[i * k + j]).sum();
            if !(mass > collapse_mass) {
                collapsed.push(j);
                continue;
            }
            let mut mean = vec![T::zero(); dim];
            for (i, row) in data.iter().enumerate() {
                let r = log_resp[i * k + j];
                for (m, &x) in mean.iter_mut().zip(row.as_ref()) {
                    *m = *m + r * x;
                }
            }
            for m in mean.iter_mut() {
                *m = *m / mass;
            }
            let mut var = vec![T::zero(); dim];
            for (i, row) in data.iter().enumerate() {
                let r = log_resp[i * k + j];
                for ((v, &x), &m) in var.iter_mut().zip(row.as_ref()).zip(&mean) {
                    let d = x - m;
                    *v = *v + r * d * d;
                }
            }
            for v in var.iter_mut() {
                *v = (*v / mass).max(floor);
            }
            comp.weight = mass / nf;
            comp.mean = mean;
            comp.variances = var;
        }
        if !collapsed.is_empty() {
            reseed_collapsed(&mut components, &collapsed, data, &row_lse, &global_var, nf);
        }
        iterations += 1;
    }

    Ok(GaussianMixture {
        components,
        dim,
        fit_trace: trace,
        converged,
        iterations,
    })
}

/// Moves each collapsed component onto the currently worst-explained point.
fn reseed_collapsed<T: Real, R: AsRef<[T]>>(
    components: &mut [GaussianComponent<T>],
    collapsed: &[usize],
    data: &[R],
    row_lse: &[T],
    global_var: &[T],
    nf: T,
) {
    let mut taken = Vec::with_capacity(collapsed.len());
    for &j in collapsed {
        let mut best: Option<usize> = None;
        for (i, &v) in row_lse.iter().enumerate() {
            if taken.contains(&i) {
                continue;
            }
            if best.is_none_or(|b| v < row_lse[b]) {
                best = Some(i);
            }
        }
        let i = best.unwrap_or(0);
        taken.push(i);
        components[j] = GaussianComponent {
            weight: T::one() / nf,
            mean: data[i].as_ref().to_vec(),
            variances: global_var.to_vec(),
        };
    }
    let total: T = components.iter().map(|c| c.weight).sum();
    for c in components.iter_mut() {
        c.weight = c.weight / total;
    }
}

fn column_variances<T: Real, R: AsRef<[T]>>(data: &[R], floor: T) -> Vec<T> {
    let dim = data[0].as_ref().len();
    let nf = T::from_usize(data.len()).expect("count fits in T");
    let mut mean = vec![T::zero(); dim];
    for row in data {
        for (m, &x) in mean.iter_mut().zip(row.as_ref()) {
            *m = *m + x;
        }
    }
    for m in mean.iter_mut() {
        *m = *m / nf;
    }
    let mut var = vec![T::zero(); dim];
    for row in data {
        for ((v, &x), &m) in var.iter_mut().zip(row.as_ref()).zip(&mean) {
            *v = *v + (x - m) * (x - m);
        }
    }
    var.into_iter().map(|v| (v / nf).max(floor)).collect()
}

/// Seeds means, then derives per-cluster variances from a nearest-center
/// assignment. Weights start uniform.
fn initialize<T: Real, R: AsRef<[T]>>(
    data: &[R],
    cfg: &FitConfig,
    global_var: &[T],
    floor: T,
) -> Vec<GaussianComponent<T>> {
    let k = cfg.n_components;
    let mut rng = seed::rng(cfg.seed);
    let centers: Vec<usize> = match cfg.init {
        InitMethod::KMeansPlusPlus => kmeans_plus_plus(data, k, &mut rng),
        InitMethod::RandomPoints => rand::seq::index::sample(&mut rng, data.len(), k).into_vec(),
    };
    let dim = global_var.len();

    let mut sums = vec![vec![T::zero(); dim]; k];
    let mut sq_sums = vec![vec![T::zero(); dim]; k];
    let mut counts = vec![0usize; k];
    for row in data {
        let row = row.as_ref();
        let c = nearest(row, centers.iter().map(|&i| data[i].as_ref()));
        counts[c] += 1;
        for ((s, q), &x) in sums[c].iter_mut().zip(sq_sums[c].iter_mut()).zip(row) {
            *s = *s + x;
            *q = *q + x * x;
        }
    }
    let weight = T::one() / T::from_usize(k).expect("k fits in T");
    centers
        .iter()
        .enumerate()
        .map(|(c, &i)| {
            let variances = if counts[c] >= 2 {
                let cnt = T::from_usize(counts[c]).expect("count fits in T");
                sums[c]
                    .iter()
                    .zip(&sq_sums[c])
                    .map(|(&s, &q)| {
                        let m = s / cnt;
                        (q / cnt - m * m).max(floor)
                    })
                    .collect()
            } else {
                global_var.to_vec()
            };
            GaussianComponent {
                weight,
                mean: data[i].as_ref().to_vec(),
                variances,
            }
        })
        .collect()
}

/// Index of the closest center; ties go to the lowest index.
fn nearest<'a, T: Real>(x: &[T], centers: impl Iterator<Item = &'a [T]>) -> usize {
    let mut best = 0;
    let mut best_d = T::infinity();
    for (c, center) in centers.enumerate() {
        let d = sq_dist(x, center);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// kmeans++ seeding: returns the row indices chosen as initial centers.
pub(crate) fn kmeans_plus_plus<T: Real, R: AsRef<[T]>, G: Rng>(data: &[R], k: usize, rng: &mut G) -> Vec<usize> {
    let n = data.len();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = data
        .iter()
        .map(|r| sq_dist(r.as_ref(), data[chosen[0]].as_ref()).as_f64())
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if u < acc && d > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap_or(0))
        } else {
            // All points coincide with a chosen center.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        let c = data[next].as_ref();
        for (d, r) in d2.iter_mut().zip(data) {
            *d = d.min(sq_dist(r.as_ref(), c).as_f64());
        }
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn comp(w: f64, mean: &[f64], var: &[f64]) -> GaussianComponent<f64> {
        GaussianComponent::new(w, mean.to_vec(), var.to_vec(), 1e-6).unwrap()
    }

    fn naive_density(g: &GaussianMixture<f64>, x: &[f64]) -> f64 {
        g.components()
            .iter()
            .map(|c| {
                let mut p = c.weight;
                for ((&xi, &m), &v) in x.iter().zip(&c.mean).zip(&c.variances) {
                    p *= (-(xi - m).powi(2) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
                }
                p
            })
            .sum()
    }

    #[test]
    fn identical_points_collapse_to_floor() {
        let data = vec![vec![1.5, -2.0], vec![1.5, -2.0]];
        let cfg = FitConfig {
            n_components: 1,
            ..FitConfig::default()
        };
        let g = fit_em(&data, &cfg).unwrap();
        let c = &g.components()[0];
        assert_eq!(c.mean, vec![1.5, -2.0]);
        assert_eq!(c.variances, vec![1e-6, 1e-6]);
        assert_eq!(c.weight, 1.0);
    }

    #[test]
    fn too_few_samples() {
        let data = vec![vec![0.0]; 3];
        let err = fit_em(&data, &FitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::TooFewSamples { got: 3, need: 6 }));
    }

    #[test]
    fn rejects_non_finite_and_ragged_input() {
        let cfg = FitConfig {
            n_components: 1,
            ..FitConfig::default()
        };
        let nan = vec![vec![0.0, f64::NAN], vec![1.0, 1.0]];
        assert!(matches!(fit_em(&nan, &cfg), Err(Error::NonFiniteInput)));
        let ragged = vec![vec![0.0, 1.0], vec![1.0]];
        assert!(matches!(fit_em(&ragged, &cfg), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn invalid_config_rejected() {
        let data = vec![vec![0.0]; 4];
        for cfg in [
            FitConfig { n_components: 0, ..FitConfig::default() },
            FitConfig { max_iterations: 0, n_components: 1, ..FitConfig::default() },
            FitConfig { cov_floor: 0.0, n_components: 1, ..FitConfig::default() },
        ] {
            assert!(matches!(fit_em(&data, &cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn standard_normal_at_mode() {
        let g = GaussianMixture::new(vec![comp(1.0, &[0.0, 0.0], &[1.0, 1.0])]).unwrap();
        let v = g.log_density(&[0.0, 0.0]).unwrap();
        assert!((v - (-(2.0 * PI).ln())).abs() < 1e-12);
        assert!((v + 1.837877).abs() < 1e-6);
    }

    #[test]
    fn identical_components_collapse_to_single() {
        let single = GaussianMixture::new(vec![comp(1.0, &[0.3, -1.0], &[2.0, 0.5])]).unwrap();
        let double = GaussianMixture::new(vec![
            comp(0.5, &[0.3, -1.0], &[2.0, 0.5]),
            comp(0.5, &[0.3, -1.0], &[2.0, 0.5]),
        ])
        .unwrap();
        for x in [[0.0, 0.0], [4.0, -3.0], [0.3, -1.0]] {
            let a = single.log_density(&x).unwrap();
            let b = double.log_density(&x).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn log_density_matches_direct_sum_1d() {
        let mut rng = seed::rng(11);
        let w: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + 0.1).collect();
        let total: f64 = w.iter().sum();
        let comps = (0..3)
            .map(|k| comp(w[k] / total, &[rng.random_range(-2.0..2.0)], &[rng.random_range(0.2..3.0)]))
            .collect();
        let g = GaussianMixture::new(comps).unwrap();
        let direct = naive_density(&g, &[0.7]).ln();
        assert!((g.log_density(&[0.7]).unwrap() - direct).abs() < 1e-10);
    }

    #[test]
    fn log_density_dimension_mismatch() {
        let g = GaussianMixture::new(vec![comp(1.0, &[0.0, 0.0], &[1.0, 1.0])]).unwrap();
        assert!(matches!(g.log_density(&[0.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(g.responsibilities(&[0.0; 3]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn far_point_density_is_finite() {
        let g = GaussianMixture::new(vec![comp(0.5, &[0.0], &[1e-6]), comp(0.5, &[1.0], &[1e-6])]).unwrap();
        let v = g.log_density(&[1e4]).unwrap();
        assert!(v.is_finite());
        let r = g.responsibilities(&[1e4]).unwrap();
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn responsibilities_examples() {
        let one = GaussianMixture::new(vec![comp(1.0, &[0.0], &[1.0])]).unwrap();
        assert_eq!(one.responsibilities(&[3.0]).unwrap(), vec![1.0]);

        let sep = GaussianMixture::new(vec![comp(0.5, &[0.0, 0.0], &[1.0, 1.0]), comp(0.5, &[10.0, 10.0], &[1.0, 1.0])])
            .unwrap();
        assert!(sep.responsibilities(&[0.0, 0.0]).unwrap()[0] > 0.999);

        let same = GaussianMixture::new(vec![comp(0.3, &[1.0], &[2.0]), comp(0.7, &[1.0], &[2.0])]).unwrap();
        let r = same.responsibilities(&[-4.2]).unwrap();
        assert!((r[0] - 0.3).abs() < 1e-12 && (r[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn near_degenerate_sampling() {
        let c = GaussianComponent::new(1.0, vec![5.0], vec![0.0], 1e-6).unwrap();
        assert_eq!(c.variances, vec![1e-6]);
        let g = GaussianMixture::new(vec![c]).unwrap();
        let (xs, idx) = g.sample(3, 9);
        assert_eq!(idx, vec![0, 0, 0]);
        assert!(xs.iter().all(|x: &Vec<f64>| (x[0] - 5.0).abs() < 1e-2));
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = GaussianMixture::new(vec![comp(0.4, &[0.0, 1.0], &[1.0, 2.0]), comp(0.6, &[5.0, 5.0], &[0.5, 0.5])])
            .unwrap();
        let (a, ia) = g.sample(50, 1234);
        let (b, ib) = g.sample(50, 1234);
        assert_eq!(ia, ib);
        let bits = |v: &Vec<Vec<f64>>| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let (c, _) = g.sample(50, 1235);
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn weights_must_sum_to_one() {
        let err = GaussianMixture::new(vec![comp(0.5, &[0.0], &[1.0]), comp(0.4, &[0.0], &[1.0])]).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let g = GaussianMixture::new(vec![
            comp(1.0 / 3.0, &[0.1, -1e-300], &[std::f64::consts::E, 1e-6]),
            comp(2.0 / 3.0, &[1e20, 0.7], &[0.3, 123.456]),
        ])
        .unwrap();
        let json = g.to_json();
        let back = GaussianMixture::<f64>::from_json(&json).unwrap();
        assert_eq!(back.components(), g.components());
        assert_eq!(back.dim(), 2);
        assert!(json.contains("\"dim\""));
        assert!(GaussianMixture::<f64>::from_json(r#"{"dim":1,"components":[],"extra":1}"#).is_err());
    }

    #[test]
    fn f32_fit_runs() {
        let mut rng = seed::rng(5);
        let data: Vec<Vec<f32>> = (0..200)
            .map(|i| {
                let c = if i % 2 == 0 { 0.0 } else { 8.0 };
                vec![c + rng.sample::<f32, _>(StandardNormal), c + rng.sample::<f32, _>(StandardNormal)]
            })
            .collect();
        let cfg = FitConfig {
            n_components: 2,
            seed: 3,
            ..FitConfig::default()
        };
        let g = fit_em(&data, &cfg).unwrap();
        let mut means: Vec<f32> = g.components().iter().map(|c| c.mean[0]).collect();
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(means[0].abs() < 0.5 && (means[1] - 8.0).abs() < 0.5);
    }

    #[test]
    fn kmeans_pp_picks_distinct_clusters() {
        let data: Vec<Vec<f64>> = (0..20).map(|i| vec![if i < 10 { 0.0 } else { 100.0 }]).collect();
        for s in 0..10 {
            let idx = kmeans_plus_plus(&data, 2, &mut seed::rng(s));
            assert_ne!(idx[0] < 10, idx[1] < 10);
        }
    }
}
