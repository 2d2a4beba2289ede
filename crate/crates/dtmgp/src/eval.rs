//! Distribution-level evaluation: two-sample Kolmogorov-Smirnov statistics
//! averaged over a test set, macro-replication with divisor-R spread, and
//! the logistic Brownian-sheet random field used as a stochastic system in
//! the simulation experiments.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::DenseCholesky;
use crate::model::{logistic, DtmgpModel};
use crate::rng::{stream, Purpose};

/// Two-sample KS statistic: the sup over the merged support of the
/// absolute difference of the two right-continuous empirical CDFs.
///
/// ```
/// let d = dtmgp::eval::ks_two_sample(&[1.0, 2.0], &[1.5, 2.5])?;
/// assert_eq!(d, 0.5);
/// # Ok::<(), dtmgp::Error>(())
/// ```
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Structural("KS statistic needs two nonempty samples".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).expect("comparable samples"));
    sb.sort_by(|x, y| x.partial_cmp(y).expect("comparable samples"));
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let mut ia = 0usize;
    let mut ib = 0usize;
    let mut sup: f64 = 0.0;
    // walk the merged step points; the ECDFs only change there
    while ia < sa.len() || ib < sb.len() {
        let t = match (sa.get(ia), sb.get(ib)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while ia < sa.len() && sa[ia] <= t {
            ia += 1;
        }
        while ib < sb.len() && sb[ib] <= t {
            ib += 1;
        }
        sup = sup.max((ia as f64 / na - ib as f64 / nb).abs());
    }
    Ok(sup)
}

/// Per-point KS statistics between two sample sources over a test set,
/// with `n_per_point` draws from each source at each point, plus their
/// average.
pub fn averaged_ks<M, S>(
    mut model_source: M,
    mut system_source: S,
    x_test: &[Vec<f64>],
    n_per_point: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<f64>)>
where
    M: FnMut(&[f64], &mut ChaCha8Rng) -> Result<f64>,
    S: FnMut(&[f64], &mut ChaCha8Rng) -> Result<f64>,
{
    if x_test.is_empty() {
        return Err(Error::Structural("empty test set".into()));
    }
    let mut per_point = Vec::with_capacity(x_test.len());
    for x in x_test {
        let mut a = Vec::with_capacity(n_per_point);
        let mut b = Vec::with_capacity(n_per_point);
        for _ in 0..n_per_point {
            a.push(model_source(x, rng)?);
        }
        for _ in 0..n_per_point {
            b.push(system_source(x, rng)?);
        }
        per_point.push(ks_two_sample(&a, &b)?);
    }
    let mean = per_point.iter().sum::<f64>() / per_point.len() as f64;
    Ok((mean, per_point))
}

/// Aggregate of macro-replications: per-replication averaged statistics
/// `D_r`, their mean, and the divisor-R spread.
#[derive(Debug, Clone)]
pub struct KsReport {
    /// Per-replication, per-test-point statistics.
    pub per_point: Vec<Vec<f64>>,
    /// Averaged statistic of each replication.
    pub replications: Vec<f64>,
    pub mean: f64,
    /// Population-style standard deviation (divisor R, not R-1).
    pub std: f64,
}

/// Runs `reps` independent replications of an experiment. The closure
/// receives the replication index and returns the averaged statistic and
/// the per-point values; any failure aborts with that index.
pub fn macro_replicate<E>(reps: usize, mut experiment: E) -> Result<KsReport>
where
    E: FnMut(usize) -> Result<(f64, Vec<f64>)>,
{
    if reps == 0 {
        return Err(Error::Structural("macro-replication needs R >= 1".into()));
    }
    let mut per_point = Vec::with_capacity(reps);
    let mut replications = Vec::with_capacity(reps);
    for r in 0..reps {
        let (d_r, points) = experiment(r)
            .map_err(|e| Error::Numerical(format!("replication {r} failed: {e}")))?;
        replications.push(d_r);
        per_point.push(points);
    }
    let mean = replications.iter().sum::<f64>() / reps as f64;
    let var = replications.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / reps as f64;
    Ok(KsReport {
        per_point,
        replications,
        mean,
        std: var.sqrt(),
    })
}

/// Guard on the joint sampling point count.
const SHEET_GUARD: usize = 4000;

/// Exact sampler for a Brownian sheet (covariance `prod_d (1 + theta *
/// min(x_d, x_d'))`) over a fixed point set. The dense Cholesky factor is
/// computed once and reused across draws; every draw is one fresh joint
/// path over all points, preserving cross-covariances.
#[derive(Debug)]
pub struct BrownianSheetSampler {
    points: Vec<Vec<f64>>,
    chol: DenseCholesky,
}

impl BrownianSheetSampler {
    pub fn new(points: Vec<Vec<f64>>, theta: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Structural("sheet sampler needs at least one point".into()));
        }
        if points.len() > SHEET_GUARD {
            return Err(Error::Structural(format!(
                "sheet sampler guarded to {SHEET_GUARD} points, got {}",
                points.len()
            )));
        }
        let n = points.len();
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                gram[i * n + j] = points[i]
                    .iter()
                    .zip(&points[j])
                    .map(|(&a, &b)| 1.0 + theta * a.min(b))
                    .product();
            }
        }
        let chol = DenseCholesky::new(gram, n, 1e-10)?;
        Ok(Self { points, chol })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// One joint draw of the sheet at all points.
    pub fn sample_path(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let xi: Vec<f64> = (0..self.chol.order())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        self.chol.lower_mul(&xi)
    }

    /// One joint draw of the logistic field `1 / (1 + exp(B))`, valued in
    /// the open unit interval.
    pub fn sample_field(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.sample_path(rng).into_iter().map(|b| logistic(-b)).collect()
    }
}

/// Single joint draw of the logistic Brownian-sheet field (`theta = 1`) at
/// the given points.
pub fn random_field_sample(points: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    Ok(BrownianSheetSampler::new(points.to_vec(), 1.0)?.sample_field(rng))
}

/// One evaluation replication of a model against the logistic
/// Brownian-sheet field: fresh uniform test points, `n_samples` fresh
/// joint field paths (system samples at a point are the paths evaluated
/// there, preserving cross-covariances within a realization), `n_samples`
/// fresh model draws per point (plus observation noise when requested),
/// and the per-point KS statistics with their average.
///
/// All draws come from `(seed, replication)`-indexed streams, so adding
/// replications never perturbs earlier ones.
pub fn field_ks_experiment(
    model: &DtmgpModel,
    n_test: usize,
    n_samples: usize,
    seed: u64,
    replication: u64,
    observation_noise: bool,
) -> Result<(f64, Vec<f64>)> {
    if n_test == 0 || n_samples == 0 {
        return Err(Error::Structural("field experiment needs test points and samples".into()));
    }
    let d = model.input_dim();
    let mut tp_rng = stream(seed, Purpose::TestPoints, replication);
    let x_test: Vec<Vec<f64>> = (0..n_test)
        .map(|_| (0..d).map(|_| tp_rng.random()).collect())
        .collect();
    let sampler = BrownianSheetSampler::new(x_test.clone(), 1.0)?;
    let mut field_rng = stream(seed, Purpose::Field, replication);
    let paths: Vec<Vec<f64>> = (0..n_samples)
        .map(|_| sampler.sample_field(&mut field_rng))
        .collect();
    let mut model_rng = stream(seed, Purpose::Predictive, replication);
    let noise_std = (0.5 * model.log_noise_var).exp();
    let mut per_point = Vec::with_capacity(n_test);
    for (i, x) in x_test.iter().enumerate() {
        let mut model_samples: Vec<f64> = model
            .sample_predictive(x, n_samples, &mut model_rng)?
            .into_iter()
            .map(|y| y[0])
            .collect();
        if observation_noise {
            for v in &mut model_samples {
                let eps: f64 = StandardNormal.sample(&mut model_rng);
                *v += noise_std * eps;
            }
        }
        let system_samples: Vec<f64> = paths.iter().map(|p| p[i]).collect();
        per_point.push(ks_two_sample(&model_samples, &system_samples)?);
    }
    let mean = per_point.iter().sum::<f64>() / per_point.len() as f64;
    Ok((mean, per_point))
}
