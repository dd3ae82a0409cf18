//! Point-set distances and sampling.
//!
//! * [`chamfer`]: first-order (unsquared) Chamfer distance, one sum per direction.
//! * [`emd`]: minimum-cost perfect matching under *squared* Euclidean cost.
//!   Exact (shortest augmenting paths with potentials) up to
//!   [`EXACT_EMD_THRESHOLD`] points, ε-scaled auction above it.
//! * [`fps`] / [`fps_cd`]: farthest point sampling and Chamfer on
//!   equal-count clouds.
//!
//! Losses use the raw sums. The ×100 reporting scale lives in
//! [`MetricReport`] and is never applied inside a loss.

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};

/// Largest cloud size solved exactly by [`emd`].
pub const EXACT_EMD_THRESHOLD: usize = 512;

/// Scale applied to CD values at the reporting layer.
pub const REPORT_SCALE: f64 = 100.0;

/// Index of the nearest point of `targets` to `p`, ties broken by lowest index.
pub fn nearest_index(p: Point3, targets: &[Point3]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, &q) in targets.iter().enumerate() {
        let d = p.distance_squared(q);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// For every point of `from`, the index of its nearest neighbour in `to`.
pub fn nearest_indices(from: &[Point3], to: &[Point3]) -> Vec<usize> {
    from.iter().map(|&p| nearest_index(p, to)).collect()
}

fn directed_chamfer(from: &[Point3], to: &[Point3]) -> f64 {
    from.iter()
        .map(|&p| p.distance(to[nearest_index(p, to)]))
        .sum()
}

/// First-order Chamfer distance as the pair `(Σ_{x∈S1} min ‖x−y‖, Σ_{y∈S2} min ‖y−x‖)`.
pub fn chamfer(s1: &PointCloud, s2: &PointCloud) -> Result<(f64, f64)> {
    if s1.is_empty() || s2.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok((
        directed_chamfer(s1.points(), s2.points()),
        directed_chamfer(s2.points(), s1.points()),
    ))
}

/// Sum of both Chamfer directions.
pub fn chamfer_total(s1: &PointCloud, s2: &PointCloud) -> Result<f64> {
    chamfer(s1, s2).map(|(a, b)| a + b)
}

/// A bijection between two equal-size clouds and its squared-distance cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `assignment[i]` is the index in `S2` matched to point `i` of `S1`.
    pub assignment: Vec<usize>,
    pub cost: f64,
    /// Upper bound on `cost - optimum`; zero for the exact solver.
    pub duality_gap: f64,
}

impl Matching {
    pub fn is_permutation(&self) -> bool {
        let mut seen = vec![false; self.assignment.len()];
        for &j in &self.assignment {
            if j >= seen.len() || seen[j] {
                return false;
            }
            seen[j] = true;
        }
        true
    }
}

fn squared_cost_matrix(a: &[Point3], b: &[Point3]) -> Vec<f64> {
    let m = b.len();
    let mut cost = vec![0.0; a.len() * m];
    for (i, &p) in a.iter().enumerate() {
        for (j, &q) in b.iter().enumerate() {
            cost[i * m + j] = p.distance_squared(q);
        }
    }
    cost
}

/// Earth Mover's distance between equal-size clouds (squared Euclidean cost).
pub fn emd(s1: &PointCloud, s2: &PointCloud) -> Result<Matching> {
    emd_with_threshold(s1, s2, EXACT_EMD_THRESHOLD)
}

/// [`emd`] with an explicit exact/approximate switch-over size.
pub fn emd_with_threshold(s1: &PointCloud, s2: &PointCloud, exact_threshold: usize) -> Result<Matching> {
    if s1.len() != s2.len() {
        return Err(Error::SizeMismatch {
            left: s1.len(),
            right: s2.len(),
        });
    }
    let n = s1.len();
    if n == 0 {
        return Ok(Matching {
            assignment: Vec::new(),
            cost: 0.0,
            duality_gap: 0.0,
        });
    }
    let cost = squared_cost_matrix(s1.points(), s2.points());
    let (assignment, duality_gap) = if n <= exact_threshold {
        (solve_assignment(&cost, n), 0.0)
    } else {
        auction_assignment(&cost, n)
    };
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Ok(Matching {
        assignment,
        cost: total,
        duality_gap,
    })
}

/// Exact minimum-cost assignment of an `n × n` row-major cost matrix.
///
/// Shortest augmenting paths with row/column potentials, O(n³). Returns
/// `assignment[row] = column`.
pub fn solve_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    // 1-based arrays; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|u| *u = false);
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[row_of_col[j] - 1] = j - 1;
    }
    assignment
}

/// ε-scaled forward auction for the minimum-cost assignment.
///
/// Returns the assignment and the duality gap `primal − dual`, which bounds
/// the distance to the optimum from above.
pub fn auction_assignment(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    let max_cost = cost.iter().cloned().fold(0.0_f64, f64::max);
    let final_eps = (max_cost / (n as f64 * 1e6)).max(1e-12);
    let mut eps = (max_cost / 4.0).max(final_eps);
    // Benefit is -cost; prices on columns.
    let mut price = vec![0.0; n];
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut assigned: Vec<Option<usize>> = vec![None; n];

    loop {
        owner.iter_mut().for_each(|o| *o = None);
        assigned.iter_mut().for_each(|a| *a = None);
        let mut unassigned: Vec<usize> = (0..n).rev().collect();
        while let Some(i) = unassigned.pop() {
            let row = &cost[i * n..(i + 1) * n];
            let (mut best_j, mut best, mut second) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for j in 0..n {
                let value = -row[j] - price[j];
                if value > best {
                    second = best;
                    best = value;
                    best_j = j;
                } else if value > second {
                    second = value;
                }
            }
            if !second.is_finite() {
                second = best;
            }
            price[best_j] += best - second + eps;
            if let Some(prev) = owner[best_j].replace(i) {
                assigned[prev] = None;
                unassigned.push(prev);
            }
            assigned[i] = Some(best_j);
        }
        if eps <= final_eps {
            break;
        }
        eps = (eps / 5.0).max(final_eps);
    }

    let assignment: Vec<usize> = assigned.into_iter().map(|a| a.expect("auction leaves no row unassigned")).collect();
    let primal: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    // Dual of the min-cost problem: Σ_i min_j (c_ij + p_j) − Σ_j p_j.
    let dual: f64 = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| cost[i * n + j] + price[j])
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        - price.iter().sum::<f64>();
    (assignment, (primal - dual).max(0.0))
}

/// Lowest index of the point farthest from the cloud centroid.
pub fn fps_start(s: &PointCloud) -> Result<usize> {
    if s.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let c = s.centroid();
    let mut best = 0;
    let mut best_d = f64::NEG_INFINITY;
    for (i, &p) in s.points().iter().enumerate() {
        let d = p.distance_squared(c);
        if d > best_d {
            best_d = d;
            best = i;
        }
    }
    Ok(best)
}

/// Greedy farthest point sampling of `k` indices starting from `start`.
///
/// Each new index maximizes its distance to the already selected set; ties
/// go to the lowest index.
pub fn fps(s: &PointCloud, k: usize, start: usize) -> Result<Vec<usize>> {
    let n = s.len();
    if k == 0 || k > n {
        return Err(Error::BadK { k, n });
    }
    if start >= n {
        return Err(Error::InvalidArgument(format!(
            "start index {start} out of range for {n} points"
        )));
    }
    let pts = s.points();
    let mut selected = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = start;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == k {
            break;
        }
        let c = pts[current];
        let mut next = usize::MAX;
        let mut next_d = f64::NEG_INFINITY;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = pts[i].distance_squared(c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > next_d {
                next_d = min_d[i];
                next = i;
            }
        }
        current = next;
    }
    Ok(selected)
}

/// Downsamples the larger cloud with FPS so both have the same count.
/// Returns `(pred', gt')`.
pub fn equalize_counts(pred: &PointCloud, gt: &PointCloud) -> Result<(PointCloud, PointCloud)> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptyCloud);
    }
    use std::cmp::Ordering;
    Ok(match pred.len().cmp(&gt.len()) {
        Ordering::Equal => (pred.clone(), gt.clone()),
        Ordering::Greater => {
            let idx = fps(pred, gt.len(), fps_start(pred)?)?;
            (pred.select(&idx), gt.clone())
        }
        Ordering::Less => {
            let idx = fps(gt, pred.len(), fps_start(gt)?)?;
            (pred.clone(), gt.select(&idx))
        }
    })
}

/// Chamfer distance after farthest-point-sampling the larger cloud down to
/// the smaller count. Returns the two directed sums.
pub fn fps_chamfer(pred: &PointCloud, gt: &PointCloud) -> Result<(f64, f64)> {
    let (p, g) = equalize_counts(pred, gt)?;
    chamfer(&p, &g)
}

/// FPS-CD: sum of both directions of [`fps_chamfer`].
pub fn fps_cd(pred: &PointCloud, gt: &PointCloud) -> Result<f64> {
    fps_chamfer(pred, gt).map(|(a, b)| a + b)
}

/// Evaluation record for one predicted shape.
///
/// Each direction is the *mean* nearest-neighbour distance, so clouds of
/// different sizes (for example a concatenation of several per-view
/// predictions) are comparable. `cd` and `fps_cd` are unscaled; multiply by
/// [`REPORT_SCALE`] for display.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub gt_to_pred: f64,
    pub pred_to_gt: f64,
    pub cd: f64,
    pub fps_cd: f64,
}

impl MetricReport {
    pub fn evaluate(pred: &PointCloud, gt: &PointCloud) -> Result<Self> {
        let (p2g, g2p) = chamfer(pred, gt)?;
        let gt_to_pred = g2p / gt.len() as f64;
        let pred_to_gt = p2g / pred.len() as f64;
        let (fp, fg) = fps_chamfer(pred, gt)?;
        let k = pred.len().min(gt.len()) as f64;
        Ok(Self {
            gt_to_pred,
            pred_to_gt,
            cd: gt_to_pred + pred_to_gt,
            fps_cd: (fp + fg) / k,
        })
    }

    pub const CSV_HEADER: &'static str = "shape_id,gt_to_pred,pred_to_gt,cd_x100,fps_cd_x100";

    /// CSV row with the reporting scale applied to the CD columns.
    pub fn csv_row(&self, shape_id: &str) -> String {
        format!(
            "{shape_id},{:.9},{:.9},{:.9},{:.9}",
            self.gt_to_pred,
            self.pred_to_gt,
            self.cd * REPORT_SCALE,
            self.fps_cd * REPORT_SCALE
        )
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|&a| Point3::from_array(a)).collect()).unwrap()
    }

    fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
        cloud(
            &(0..n)
                .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect::<Vec<_>>(),
        )
    }

    #[test]
    fn chamfer_identity_and_unit_pair() {
        let a = cloud(&[[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]);
        assert_eq!(chamfer(&a, &a).unwrap(), (0.0, 0.0));
        let p = cloud(&[[0.0, 0.0, 0.0]]);
        let q = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&p, &q).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn chamfer_rejects_empty() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let empty = PointCloud::default();
        assert!(matches!(chamfer(&a, &empty), Err(Error::EmptyCloud)));
        assert!(matches!(chamfer(&empty, &a), Err(Error::EmptyCloud)));
    }

    #[test]
    fn emd_two_point_example() {
        let a = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let b = cloud(&[[0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]);
        let m = emd(&a, &b).unwrap();
        assert_eq!(m.cost, 2.0);
        assert_eq!(m.assignment, vec![0, 1]);
        assert_eq!(m.duality_gap, 0.0);
    }

    #[test]
    fn emd_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_cloud(&mut rng, 20);
        let m = emd(&a, &a).unwrap();
        assert_eq!(m.cost, 0.0);
        assert!(m.is_permutation());
    }

    #[test]
    fn emd_size_mismatch() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert!(matches!(emd(&a, &b), Err(Error::SizeMismatch { left: 1, right: 2 })));
    }

    #[test]
    fn auction_close_to_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [10, 40, 80] {
            let a = random_cloud(&mut rng, n);
            let b = random_cloud(&mut rng, n);
            let exact = emd(&a, &b).unwrap();
            let approx = emd_with_threshold(&a, &b, 0).unwrap();
            assert!(approx.is_permutation());
            assert!(approx.cost >= exact.cost - 1e-9);
            assert!(approx.cost - exact.cost <= approx.duality_gap + 1e-9);
            assert!(approx.duality_gap <= 1e-3 * exact.cost.max(1.0));
        }
    }

    #[test]
    fn fps_collinear() {
        let s = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        assert_eq!(fps(&s, 2, 0).unwrap(), vec![0, 3]);
        assert_eq!(fps(&s, 1, 2).unwrap(), vec![2]);
        let mut all = fps(&s, 4, 1).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn fps_bad_k() {
        let s = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert!(matches!(fps(&s, 0, 0), Err(Error::BadK { k: 0, n: 2 })));
        assert!(matches!(fps(&s, 3, 0), Err(Error::BadK { k: 3, n: 2 })));
    }

    #[test]
    fn fps_start_is_farthest_from_centroid() {
        let s = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [5.0, 0.0, 0.0], [-3.0, 0.0, 0.0]]);
        // centroid x = 0.75; |5-0.75| = 4.25, |-3-0.75| = 3.75
        assert_eq!(fps_start(&s).unwrap(), 2);
        let tie = cloud(&[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(fps_start(&tie).unwrap(), 0);
    }

    #[test]
    fn fps_cd_duplicated_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gt = random_cloud(&mut rng, 16);
        assert_eq!(fps_cd(&gt, &gt).unwrap(), 0.0);
        let doubled = PointCloud::concat([&gt, &gt]);
        assert_eq!(fps_cd(&doubled, &gt).unwrap(), 0.0);
        assert_eq!(fps_cd(&gt, &doubled).unwrap(), 0.0);
    }

    #[test]
    fn report_row_scaling() {
        let p = cloud(&[[0.0, 0.0, 0.0]]);
        let q = cloud(&[[0.01, 0.0, 0.0]]);
        let r = MetricReport::evaluate(&p, &q).unwrap();
        assert!((r.cd - (r.gt_to_pred + r.pred_to_gt)).abs() <= 1e-12);
        assert_eq!(r.csv_row("s0"), "s0,0.010000000,0.010000000,2.000000000,2.000000000");
    }
}
