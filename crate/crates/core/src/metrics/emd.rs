//! Earth mover's distance between equal-size point sets: an exact Hungarian
//! solver (cubic, used as the oracle and for small sets) and an auction
//! solver with epsilon scaling (used in training and for large sets).
//!
//! Costs are Euclidean distances and the reported EMD is the mean matched
//! distance, so values do not depend on cardinality.

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

/// A bijection `a[i] <-> b[assignment[i]]` and its mean matched distance.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchPlan {
    pub assignment: Vec<usize>,
    pub cost: f64,
}

impl MatchPlan {
    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.assignment.len()];
        self.assignment
            .iter()
            .all(|&j| j < seen.len() && !std::mem::replace(&mut seen[j], true))
    }
}

/// Largest cardinality accepted by [`emd_exact`].
pub const EXACT_MAX_POINTS: usize = 512;
/// Default number of epsilon-scaling phases for [`emd_approx`].
pub const DEFAULT_AUCTION_PHASES: usize = 7;

fn check_sizes(a: &PointCloud, b: &PointCloud) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::UnequalSize {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.len())
}

fn cost_matrix(a: &PointCloud, b: &PointCloud) -> Vec<f64> {
    let mut c = Vec::with_capacity(a.len() * b.len());
    for p in a {
        c.extend(b.iter().map(|q| (p - q).norm()));
    }
    c
}

/// Mean distance of `a[i]` to `b[assignment[i]]`.
pub fn plan_cost(a: &PointCloud, b: &PointCloud, assignment: &[usize]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let total: f64 = a
        .iter()
        .zip(assignment)
        .map(|(p, &j)| (p - b.points()[j]).norm())
        .sum();
    total / a.len() as f64
}

/// Shortest-augmenting-path Hungarian algorithm on a dense `n x n` cost
/// matrix. Returns the column assigned to each row.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    // 1-based potentials; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col = 0;
        let mut min_v = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col] = true;
            let r = owner[col];
            let mut delta = f64::INFINITY;
            let mut next = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[(r - 1) * n + (j - 1)] - u[r] - v[j];
                if reduced < min_v[j] {
                    min_v[j] = reduced;
                    way[j] = col;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    next = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            col = next;
            if owner[col] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col];
            owner[col] = owner[prev];
            col = prev;
            if col == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

/// Optimal EMD via the Hungarian algorithm. Limited to
/// [`EXACT_MAX_POINTS`] points.
pub fn emd_exact(a: &PointCloud, b: &PointCloud) -> Result<MatchPlan> {
    let n = check_sizes(a, b)?;
    if n > EXACT_MAX_POINTS {
        return Err(Error::InvalidSpec(format!(
            "exact EMD is limited to {EXACT_MAX_POINTS} points, got {n}"
        )));
    }
    let assignment = hungarian(&cost_matrix(a, b), n);
    let cost = plan_cost(a, b, &assignment);
    Ok(MatchPlan { assignment, cost })
}

/// Forward auction (Gauss-Seidel bidding) minimizing total cost, with
/// `phases` rounds of epsilon scaling. Prices carry over between phases.
/// The final plan's mean cost is within the last epsilon of optimal.
pub fn auction(cost: &[f64], n: usize, phases: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    const UNASSIGNED: usize = usize::MAX;
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![0];
    }
    let max_cost = cost.iter().cloned().fold(0.0, f64::max);
    if max_cost == 0.0 {
        return (0..n).collect();
    }
    let phases = phases.max(1);
    const SCALE: f64 = 6.0;
    let mut eps = max_cost / 4.0;
    let final_eps = max_cost * 1e-7;

    let mut price = vec![0.0; n];
    let mut person_of = vec![UNASSIGNED; n];
    let mut object_of = vec![UNASSIGNED; n];
    let mut queue: Vec<usize> = Vec::with_capacity(n);
    for phase in 0..phases {
        if phase + 1 == phases {
            eps = eps.max(final_eps);
        }
        person_of.fill(UNASSIGNED);
        object_of.fill(UNASSIGNED);
        queue.clear();
        queue.extend((0..n).rev());
        while let Some(i) = queue.pop() {
            let row = &cost[i * n..(i + 1) * n];
            let (mut best, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            let mut best_j = 0;
            for (j, (&c, &p)) in row.iter().zip(&price).enumerate() {
                let value = -c - p;
                if value > best {
                    second = best;
                    best = value;
                    best_j = j;
                } else if value > second {
                    second = value;
                }
            }
            price[best_j] += best - second + eps;
            let prev = person_of[best_j];
            if prev != UNASSIGNED {
                object_of[prev] = UNASSIGNED;
                queue.push(prev);
            }
            person_of[best_j] = i;
            object_of[i] = best_j;
        }
        eps /= SCALE;
    }
    object_of
}

/// Approximate EMD by auction. `phases >= 1` controls the final epsilon.
pub fn emd_approx(a: &PointCloud, b: &PointCloud, phases: usize) -> Result<MatchPlan> {
    let n = check_sizes(a, b)?;
    if phases == 0 {
        return Err(Error::InvalidSpec("auction needs at least one phase".into()));
    }
    let assignment = auction(&cost_matrix(a, b), n, phases);
    let cost = plan_cost(a, b, &assignment);
    Ok(MatchPlan { assignment, cost })
}

/// Exact for small sets, auction otherwise.
pub fn emd(a: &PointCloud, b: &PointCloud) -> Result<MatchPlan> {
    if a.len() <= EXACT_MAX_POINTS {
        emd_exact(a, b)
    } else {
        emd_approx(a, b, DEFAULT_AUCTION_PHASES)
    }
}

/// Mean of the per-level EMDs of two coarse-to-fine level triples.
pub fn d_emd_multilevel(generated: &[PointCloud; 3], truth: &[PointCloud; 3]) -> Result<f64> {
    let mut total = 0.0;
    for (level, (g, t)) in generated.iter().zip(truth).enumerate() {
        if g.len() != t.len() {
            return Err(Error::Shape(format!(
                "level {level}: {} generated vs {} ground-truth points",
                g.len(),
                t.len()
            )));
        }
        total += emd(g, t)?.cost;
    }
    Ok(total / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_examples() {
        let a = PointCloud::from_rows(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let plan = emd_exact(&a, &a).unwrap();
        assert_eq!(plan.cost, 0.0);
        assert_eq!(plan.assignment, vec![0, 1]);

        let swapped = PointCloud::from_rows(&[[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        let plan = emd_exact(&a, &swapped).unwrap();
        assert_eq!(plan.cost, 0.0);
        assert_eq!(plan.assignment, vec![1, 0]);

        let b = PointCloud::from_rows(&[[0.1, 0.0, 0.0], [0.9, 0.0, 0.0]]);
        assert!((emd_exact(&a, &b).unwrap().cost - 0.1).abs() < 1e-12);

        let c = PointCloud::from_rows(&[[0.0; 3]]);
        assert!(matches!(emd_exact(&a, &c), Err(Error::UnequalSize { .. })));
    }

    #[test]
    fn auction_examples() {
        let a = PointCloud::from_rows(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]);
        assert!(emd_approx(&a, &a, 5).unwrap().cost < 1e-6);
        assert!(emd_approx(&a, &a, 0).is_err());
        let one = PointCloud::from_rows(&[[0.0; 3]]);
        let other = PointCloud::from_rows(&[[0.0, 0.0, 3.0]]);
        assert_eq!(emd_approx(&one, &other, 3).unwrap().cost, 3.0);
    }

    #[test]
    fn multilevel_mean() {
        let lv = |x: f64| PointCloud::from_rows(&[[x, 0.0, 0.0]]);
        let g = [lv(0.0), lv(0.0), lv(0.0)];
        let t = [lv(0.3), lv(0.6), lv(0.9)];
        assert!((d_emd_multilevel(&g, &t).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(d_emd_multilevel(&g, &g).unwrap(), 0.0);
        let bad = [lv(0.0), PointCloud::default(), lv(0.0)];
        assert!(d_emd_multilevel(&bad, &t).is_err());
    }
}
