//! Minimum-cost bipartite matching between ground-truth and predicted joints.

use crate::data::layout::PoseLayout;
use crate::error::{ensure, Result};
use crate::tensor::Matrix;

/// Solves the rectangular assignment problem for an `n x m` cost matrix with
/// `n <= m`: every row gets a distinct column and the total cost is minimal.
/// Returns the column chosen for each row.
///
/// Shortest augmenting paths with row/column potentials, `O(n^2 m)`. Rows are
/// inserted in index order and columns scanned in index order, so ties are
/// resolved deterministically.
pub fn hungarian(cost: &Matrix) -> Result<Vec<usize>> {
    let (n, m) = cost.shape();
    ensure!(n <= m, InvalidInput, "assignment needs rows <= columns, got {n}x{m}");
    ensure!(cost.is_finite(), InvalidInput, "assignment costs must be finite");
    if n == 0 {
        return Ok(Vec::new());
    }
    // 1-based with column 0 as the virtual source, as in the classic formulation.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![0.0f64; m + 1];
    let mut used = vec![false; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = cost.row(i0 - 1);
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    Ok(assignment)
}

/// Total cost of an assignment, summed in row order.
pub fn assignment_cost(cost: &Matrix, assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(r, &c)| cost.get(r, c)).sum()
}

/// `|du| + |dv|`.
pub fn l1(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).abs() + (a[1] - b[1]).abs()
}

/// One matched pair: ground-truth joint (flat `hand * J + joint` index and
/// coordinates) and the prediction row it was assigned.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub gt_index: usize,
    pub gt: [f64; 2],
    pub pred: usize,
}

/// L1 cost matrix between ground-truth joints (rows) and predictions `[E, 2]` (columns).
pub fn l1_cost_matrix(pred: &Matrix, gt: &[(usize, [f64; 2])]) -> Matrix {
    Matrix::from_fn(gt.len(), pred.rows(), |g, p| {
        l1([pred.get(p, 0), pred.get(p, 1)], gt[g].1)
    })
}

/// Matches the visible joints of `gt` to the prediction rows of `pred`
/// (`[E, 2]`) under L1 cost. Returns the mean matched L1 cost (0 when no
/// joint is visible) and the matches in ground-truth order.
pub fn bipartite_match_loss(
    pred: &Matrix,
    gt: &PoseLayout,
    joints_per_hand: usize,
) -> Result<(f64, Vec<Match>)> {
    ensure!(pred.cols() == 2, InvalidInput, "predictions must be [E, 2], got {:?}", pred.shape());
    let joints = gt.visible_joints(joints_per_hand);
    ensure!(
        joints.len() <= pred.rows(),
        InvalidInput,
        "{} visible joints exceed {} predictions",
        joints.len(),
        pred.rows()
    );
    if joints.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let cost = l1_cost_matrix(pred, &joints);
    let assignment = hungarian(&cost)?;
    let total = assignment_cost(&cost, &assignment);
    let matches = joints
        .iter()
        .zip(&assignment)
        .map(|(&(gt_index, gt), &pred)| Match { gt_index, gt, pred })
        .collect();
    Ok((total / joints.len() as f64, matches))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::layout::Hand;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive minimum over every injective row -> column map.
    fn brute_force(cost: &Matrix) -> f64 {
        fn go(cost: &Matrix, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == cost.rows() {
                *best = best.min(acc);
                return;
            }
            for c in 0..cost.cols() {
                if !used[c] {
                    used[c] = true;
                    go(cost, row + 1, used, acc + cost.get(row, c), best);
                    used[c] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        go(cost, 0, &mut vec![false; cost.cols()], 0.0, &mut best);
        best
    }

    fn layout(points: &[[f64; 2]]) -> PoseLayout {
        PoseLayout {
            hands: vec![Hand::all_visible(points.to_vec())],
        }
    }

    #[test]
    fn permuted_prediction_has_zero_loss() {
        let gt = [[0.1, 0.2], [0.5, 0.9], [0.7, 0.3]];
        let pred = Matrix::from_rows(&[vec![0.7, 0.3], vec![0.1, 0.2], vec![0.5, 0.9]]);
        let (loss, m) = bipartite_match_loss(&pred, &layout(&gt), 21).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(m.iter().map(|x| x.pred).collect::<Vec<_>>(), [1, 2, 0]);
    }

    #[test]
    fn single_joint_picks_nearest() {
        let pred = Matrix::from_rows(&[vec![0.2, 0.2], vec![0.9, 0.9]]);
        let (loss, m) = bipartite_match_loss(&pred, &layout(&[[0.2, 0.2]]), 21).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(m[0].pred, 0);
    }

    #[test]
    fn no_visible_joints_gives_zero() {
        let pred = Matrix::filled(4, 2, 0.5);
        let (loss, m) = bipartite_match_loss(&pred, &PoseLayout::empty(), 21).unwrap();
        assert_eq!(loss, 0.0);
        assert!(m.is_empty());
        let mut hidden = layout(&[[0.3, 0.3]]);
        hidden.hands[0].visible[0] = false;
        assert_eq!(bipartite_match_loss(&pred, &hidden, 21).unwrap().0, 0.0);
    }

    #[test]
    fn too_many_joints_is_an_error() {
        let pred = Matrix::filled(1, 2, 0.5);
        assert!(bipartite_match_loss(&pred, &layout(&[[0.1, 0.1], [0.2, 0.2]]), 21).is_err());
    }

    #[test]
    fn five_by_five_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let gt: Vec<[f64; 2]> = (0..5).map(|_| [rng.random(), rng.random()]).collect();
            let pred = Matrix::from_fn(5, 2, |_, _| rng.random());
            let joints: Vec<_> = gt.iter().copied().enumerate().collect();
            let cost = l1_cost_matrix(&pred, &joints);
            let (loss, _) = bipartite_match_loss(&pred, &layout(&gt), 21).unwrap();
            assert!((loss * 5.0 - brute_force(&cost)).abs() < 1e-12);
        }
    }

    #[test]
    fn rectangular_and_tied_costs() {
        let cost = Matrix::from_rows(&[vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0]]);
        let a = hungarian(&cost).unwrap();
        assert_eq!(assignment_cost(&cost, &a), 2.0);
        assert_ne!(a[0], a[1]);
        assert_eq!(a, hungarian(&cost).unwrap());
        assert!(hungarian(&Matrix::zeros(3, 2)).is_err());
        assert!(hungarian(&Matrix::from_rows(&[vec![f64::NAN]])).is_err());
    }

    proptest! {
        #[test]
        fn optimal_on_dyadic_instances(
            n in 1usize..=6,
            extra in 0usize..=2,
            seed in any::<u64>(),
        ) {
            // Costs on a 1/64 grid make every sum exact, so ties are real ties.
            let m = (n + extra).min(6);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cost = Matrix::from_fn(n, m, |_, _| f64::from(rng.random_range(0..128u32)) / 64.0);
            let a = hungarian(&cost).unwrap();
            let mut seen = vec![false; m];
            for &c in &a {
                prop_assert!(!seen[c]);
                seen[c] = true;
            }
            prop_assert_eq!(assignment_cost(&cost, &a), brute_force(&cost));
        }

        #[test]
        fn loss_ignores_joint_and_prediction_order(seed in any::<u64>(), n in 1usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
            let rows: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.random(), rng.random()]).collect();
            let (base, _) = bipartite_match_loss(&Matrix::from_rows(&rows), &layout(&gt), 21).unwrap();
            let mut gt_rev = gt.clone();
            gt_rev.reverse();
            let mut rows_rev = rows.clone();
            rows_rev.rotate_left(seed as usize % 6);
            let (other, _) = bipartite_match_loss(&Matrix::from_rows(&rows_rev), &layout(&gt_rev), 21).unwrap();
            prop_assert!((base - other).abs() < 1e-12);
        }
    }
}
