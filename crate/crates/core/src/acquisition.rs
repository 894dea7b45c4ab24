//! Expected-improvement acquisition over the normalized parameter box.
//!
//! Maximization is done over a fixed Halton candidate set followed by a
//! compass search from the best candidates, so results are deterministic.
//! Batches are built with the Kriging Believer heuristic.

use nalgebra::DMatrix;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::gpr::GpModel;

/// Posterior standard deviations below this are treated as zero.
pub const SIGMA_FLOOR: f64 = 1e-12;

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionConfig {
    pub n_candidates: usize,
    pub n_refine: usize,
    pub min_separation: f64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            n_candidates: 4096,
            n_refine: 10,
            min_separation: 1e-6,
        }
    }
}

/// Direction of the EI search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Maximize,
    /// Anti-informative control: prefer points the model believes are accurate.
    Minimize,
}

/// One selected point.
#[derive(Debug, Clone, PartialEq)]
pub struct Pick {
    pub point: Vec<f64>,
    pub ei: f64,
    /// Set when EI vanished everywhere and the point of largest posterior
    /// variance was taken instead.
    pub fallback: bool,
}

/// A batch of acquisitions with its audit trail.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionResult {
    /// `q × n_s`, normalized coordinates.
    pub points: DMatrix<f64>,
    pub ei: Vec<f64>,
    /// Incumbent used when each point was selected.
    pub incumbents: Vec<f64>,
    /// Posterior mean adopted as a pseudo-observation after each selection.
    pub believed: Vec<f64>,
    pub fallback: Vec<bool>,
}

impl AcquisitionResult {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Closed-form `E[max(Y - ε*, 0)]` for `Y ~ N(m, σ²)`.
pub fn ei_from_moments(mean: f64, sd: f64, eps_star: f64) -> f64 {
    let d = mean - eps_star;
    if sd < SIGMA_FLOOR {
        return d.max(0.0);
    }
    let z = d / sd;
    (sd * (z * std_normal_cdf(z) + std_normal_pdf(z))).max(0.0)
}

pub fn expected_improvement(model: &GpModel, theta: &[f64], eps_star: f64) -> f64 {
    let (m, v) = model.posterior(theta);
    ei_from_moments(m, v.sqrt(), eps_star)
}

/// First `n` points of the Halton sequence (skipping the origin), mapped to `[-1, 1]^dim`.
pub fn halton(n: usize, dim: usize) -> DMatrix<f64> {
    assert!(dim <= PRIMES.len(), "Halton candidates support at most {} dimensions", PRIMES.len());
    DMatrix::from_fn(n, dim, |i, d| 2.0 * radical_inverse(i as u64 + 1, PRIMES[d] as u64) - 1.0)
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

fn too_close(x: &[f64], exclude: &[Vec<f64>], sep: f64) -> bool {
    exclude.iter().any(|e| {
        let d2: f64 = e.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
        d2 < sep * sep
    })
}

fn training_rows(model: &GpModel) -> Vec<Vec<f64>> {
    model.inputs().row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Selects one point by optimizing EI in the given direction, keeping at least
/// `min_separation` from every row of the model's training inputs and from `exclude`.
pub fn optimize_ei(
    model: &GpModel,
    eps_star: f64,
    objective: Objective,
    config: &AcquisitionConfig,
    exclude: &[Vec<f64>],
) -> Result<Pick> {
    let dim = model.dim();
    let mut blocked = training_rows(model);
    blocked.extend_from_slice(exclude);
    let cands = halton(config.n_candidates.max(1), dim);
    let (means, vars) = model.posterior_many(&cands);
    let scores: Vec<Option<f64>> = (0..cands.nrows())
        .map(|j| {
            let x: Vec<f64> = cands.row(j).iter().copied().collect();
            if too_close(&x, &blocked, config.min_separation) {
                None
            } else {
                Some(ei_from_moments(means[j], vars[j].sqrt(), eps_star))
            }
        })
        .collect();
    let admissible: Vec<usize> = (0..scores.len()).filter(|&j| scores[j].is_some()).collect();
    if admissible.is_empty() {
        return Err(Error::Numerical("no admissible acquisition candidates".into()));
    }
    let row = |j: usize| -> Vec<f64> { cands.row(j).iter().copied().collect() };

    if objective == Objective::Maximize && admissible.iter().all(|&j| scores[j].unwrap() <= 0.0) {
        let best = admissible
            .iter()
            .copied()
            .fold(admissible[0], |b, j| if vars[j] > vars[b] { j } else { b });
        return Ok(Pick {
            point: row(best),
            ei: 0.0,
            fallback: true,
        });
    }

    // Signed score: larger is better in both directions.
    let sign = match objective {
        Objective::Maximize => 1.0,
        Objective::Minimize => -1.0,
    };
    let mut order = admissible.clone();
    // Stable sort keeps candidate order among ties, giving a first-candidate tie-break.
    order.sort_by(|&a, &b| {
        let (sa, sb) = (sign * scores[a].unwrap(), sign * scores[b].unwrap());
        sb.partial_cmp(&sa).unwrap_or(std::cmp::Ordering::Equal)
    });

    let value = |x: &[f64]| -> Option<f64> {
        if too_close(x, &blocked, config.min_separation) {
            None
        } else {
            Some(sign * expected_improvement(model, x, eps_star))
        }
    };
    let mut best_x = row(order[0]);
    let mut best_v = sign * scores[order[0]].unwrap();
    for &j in order.iter().take(config.n_refine.max(1)) {
        let (x, v) = compass_search(row(j), sign * scores[j].unwrap(), &value);
        if v > best_v {
            best_x = x;
            best_v = v;
        }
    }
    Ok(Pick {
        point: best_x,
        ei: sign * best_v,
        fallback: false,
    })
}

pub fn maximize_ei(model: &GpModel, eps_star: f64, config: &AcquisitionConfig) -> Result<Pick> {
    optimize_ei(model, eps_star, Objective::Maximize, config, &[])
}

pub fn minimize_ei_baseline(model: &GpModel, eps_star: f64, config: &AcquisitionConfig) -> Result<Pick> {
    optimize_ei(model, eps_star, Objective::Minimize, config, &[])
}

/// Coordinate pattern search on the box `[-1, 1]^n`, accepting only strict improvements.
fn compass_search(mut x: Vec<f64>, mut fx: f64, f: &impl Fn(&[f64]) -> Option<f64>) -> (Vec<f64>, f64) {
    let mut step = 0.05;
    let mut evals = 0;
    while step > 1e-7 && evals < 2000 {
        let mut improved = false;
        for d in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[d] = (y[d] + dir * step).clamp(-1.0, 1.0);
                if y[d] == x[d] {
                    continue;
                }
                evals += 1;
                if let Some(fy) = f(&y) {
                    if fy > fx {
                        x = y;
                        fx = fy;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

/// Kriging Believer batch of `q` points. Hyperparameters stay frozen; after each
/// pick the posterior mean there is adopted as an observation and the incumbent
/// becomes the larger of itself and that believed value.
pub fn kriging_believer_batch(
    model: &GpModel,
    eps_star: f64,
    q: usize,
    objective: Objective,
    config: &AcquisitionConfig,
) -> Result<AcquisitionResult> {
    if q == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let dim = model.dim();
    let mut gp = model.clone();
    let mut incumbent = eps_star;
    let mut points = DMatrix::zeros(q, dim);
    let mut out = AcquisitionResult {
        points: DMatrix::zeros(0, dim),
        ei: Vec::with_capacity(q),
        incumbents: Vec::with_capacity(q),
        believed: Vec::with_capacity(q),
        fallback: Vec::with_capacity(q),
    };
    for i in 0..q {
        let pick = optimize_ei(&gp, incumbent, objective, config, &[])?;
        let (believed, _) = gp.posterior(&pick.point);
        for d in 0..dim {
            points[(i, d)] = pick.point[d];
        }
        out.ei.push(pick.ei);
        out.incumbents.push(incumbent);
        out.believed.push(believed);
        out.fallback.push(pick.fallback);
        if i + 1 < q {
            gp = gp.with_observation(&pick.point, believed)?;
            incumbent = incumbent.max(believed);
        }
    }
    out.points = points;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpr::Hyper;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn two_point(nugget: f64) -> GpModel {
        GpModel::condition(
            DMatrix::from_row_slice(2, 1, &[-0.5, 0.4]),
            vec![0.1, 0.6],
            Hyper::isotropic(1, 1.0, 0.4, nugget),
            0.35,
            0.25,
        )
        .unwrap()
    }

    fn grid_search(model: &GpModel, eps: f64, sign: f64) -> (f64, f64) {
        let n = 100_000;
        let mut best = (0.0, f64::NEG_INFINITY);
        for i in 0..n {
            let x = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
            let v = sign * expected_improvement(model, &[x], eps);
            if v > best.1 {
                best = (x, v);
            }
        }
        best
    }

    #[test]
    fn degenerate_limits() {
        assert_eq!(ei_from_moments(0.7, 0.0, 0.5), 0.7 - 0.5);
        assert_eq!(ei_from_moments(0.3, 0.0, 0.5), 0.0);
        assert!((ei_from_moments(0.5, 1.0, 0.5) - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert!(ei_from_moments(0.5 - 1.0, 0.1, 0.5) < 1e-12);
        assert!(ei_from_moments(-1e3, 1e-3, 0.0) >= 0.0);
    }

    #[test]
    fn closed_form_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        for &(m, s, e) in &[(0.0, 1.0, 0.0), (0.3, 0.2, 0.5), (1.0, 0.5, 0.2)] {
            let (mut acc, mut acc2) = (0.0, 0.0);
            for _ in 0..n {
                let z: f64 = StandardNormal.sample(&mut rng);
                let x = (m + s * z - e).max(0.0);
                acc += x;
                acc2 += x * x;
            }
            let mc = acc / n as f64;
            let se = ((acc2 / n as f64 - mc * mc) / n as f64).sqrt();
            let cf = ei_from_moments(m, s, e);
            assert!((mc - cf).abs() < 5.0 * se, "{m} {s} {e}: {mc} vs {cf}");
        }
    }

    #[test]
    fn halton_is_in_box_and_distinct() {
        let h = halton(4096, 3);
        assert!(h.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(h[(0, 0)], 0.0);
        assert_eq!(h[(0, 1)], 2.0 / 3.0 - 1.0);
    }

    #[test]
    fn maximize_matches_dense_grid() {
        let gp = two_point(1e-6);
        let eps = 0.6;
        let pick = maximize_ei(&gp, eps, &AcquisitionConfig::default()).unwrap();
        let (xg, vg) = grid_search(&gp, eps, 1.0);
        assert!((pick.point[0] - xg).abs() < 1e-3, "{} vs {xg}", pick.point[0]);
        assert!(pick.ei >= vg - 1e-9);
        assert!(!pick.fallback);
    }

    #[test]
    fn maximize_dominates_all_candidates() {
        let gp = two_point(1e-6);
        let cfg = AcquisitionConfig::default();
        let pick = maximize_ei(&gp, 0.6, &cfg).unwrap();
        let c = halton(cfg.n_candidates, 1);
        for j in 0..c.nrows() {
            assert!(pick.ei >= expected_improvement(&gp, &[c[(j, 0)]], 0.6));
        }
    }

    #[test]
    fn minimize_matches_dense_grid() {
        let gp = two_point(5e-2);
        let eps = 0.6;
        let cfg = AcquisitionConfig::default();
        let pick = minimize_ei_baseline(&gp, eps, &cfg).unwrap();
        let (xg, vg) = grid_search(&gp, eps, -1.0);
        assert!((pick.point[0] - xg).abs() < 1e-3, "{} vs {xg}", pick.point[0]);
        assert!(pick.ei <= -vg + 1e-12);
        let c = halton(cfg.n_candidates, 1);
        for j in 0..c.nrows() {
            assert!(pick.ei <= expected_improvement(&gp, &[c[(j, 0)]], eps));
        }
    }

    #[test]
    fn flat_landscape_falls_back_to_variance() {
        let gp = GpModel::condition(
            DMatrix::from_row_slice(2, 1, &[-0.5, 0.4]),
            vec![0.1, 0.1],
            Hyper::isotropic(1, 1e-3, 5.0, 1e-8),
            0.1,
            1e-9,
        )
        .unwrap();
        let pick = maximize_ei(&gp, 10.0, &AcquisitionConfig::default()).unwrap();
        assert!(pick.fallback);
    }

    #[test]
    fn single_training_point_is_not_reselected() {
        let gp = GpModel::condition(DMatrix::from_row_slice(1, 2, &[0.2, -0.3]), vec![0.9], Hyper::isotropic(2, 1.0, 0.5, 1e-8), 0.9, 1.0).unwrap();
        let pick = maximize_ei(&gp, 0.9, &AcquisitionConfig::default()).unwrap();
        let d = ((pick.point[0] - 0.2).powi(2) + (pick.point[1] + 0.3).powi(2)).sqrt();
        assert!(d >= 1e-6);
    }

    #[test]
    fn believer_single_equals_maximize() {
        let gp = two_point(1e-6);
        let cfg = AcquisitionConfig::default();
        let batch = kriging_believer_batch(&gp, 0.6, 1, Objective::Maximize, &cfg).unwrap();
        let pick = maximize_ei(&gp, 0.6, &cfg).unwrap();
        assert_eq!(batch.point(0), pick.point);
        assert_eq!(batch.ei[0], pick.ei);
    }

    #[test]
    fn believer_symmetric_second_point_moves() {
        let gp = GpModel::condition(DMatrix::from_row_slice(1, 1, &[0.0]), vec![1.0], Hyper::isotropic(1, 1.0, 0.3, 1e-8), 1.0, 1.0).unwrap();
        let cfg = AcquisitionConfig::default();
        let batch = kriging_believer_batch(&gp, 1.0, 2, Objective::Maximize, &cfg).unwrap();
        assert!((batch.points[(0, 0)] - batch.points[(1, 0)]).abs() >= 1e-3);

        // The second pick maximizes EI on the believer-updated posterior.
        let updated = gp.with_observation(&batch.point(0), batch.believed[0]).unwrap();
        let (xg, _) = grid_search(&updated, batch.incumbents[1], 1.0);
        let v_pick = expected_improvement(&updated, &batch.point(1), batch.incumbents[1]);
        let v_grid = expected_improvement(&updated, &[xg], batch.incumbents[1]);
        assert!(v_pick >= v_grid - 1e-9);
    }

    #[test]
    fn batch_of_five_is_distinct_and_in_bounds() {
        let x = DMatrix::from_row_slice(4, 2, &[-0.5, 0.1, 0.3, -0.9, 0.8, 0.8, 0.0, 0.0]);
        let gp = GpModel::condition(x, vec![0.1, 0.4, 0.2, 0.9], Hyper::isotropic(2, 1.0, 0.6, 1e-6), 0.4, 0.3).unwrap();
        let batch = kriging_believer_batch(&gp, 0.9, 5, Objective::Maximize, &AcquisitionConfig::default()).unwrap();
        assert_eq!(batch.len(), 5);
        assert!(batch.points.iter().all(|v| (-1.0..=1.0).contains(v)));
        for i in 0..5 {
            for j in 0..i {
                let d: f64 = (0..2).map(|k| (batch.points[(i, k)] - batch.points[(j, k)]).powi(2)).sum();
                assert!(d.sqrt() >= 1e-6);
            }
            assert!(batch.incumbents[i] >= 0.9);
        }
    }

    #[test]
    fn argmax_invariant_to_affine_targets() {
        let x = DMatrix::from_row_slice(3, 1, &[-0.6, 0.1, 0.7]);
        let y = vec![0.2, 0.5, 0.3];
        let h = Hyper::isotropic(1, 1.0, 0.4, 1e-6);
        let g1 = GpModel::condition(x.clone(), y.clone(), h.clone(), 0.0, 1.0).unwrap();
        let y2: Vec<f64> = y.iter().map(|v| 3.0 * v + 2.0).collect();
        let g2 = GpModel::condition(x, y2, h, 2.0, 3.0).unwrap();
        let c = halton(4096, 1);
        let argmax = |g: &GpModel, e: f64| {
            (0..c.nrows())
                .max_by(|&a, &b| {
                    expected_improvement(g, &[c[(a, 0)]], e)
                        .partial_cmp(&expected_improvement(g, &[c[(b, 0)]], e))
                        .unwrap()
                })
                .unwrap()
        };
        assert_eq!(argmax(&g1, 0.5), argmax(&g2, 3.0 * 0.5 + 2.0));
    }
}
