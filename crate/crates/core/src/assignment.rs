//! Minimum-cost bipartite assignment.
//!
//! Forbidden pairings are encoded as `+inf` entries. The solver first
//! maximizes the number of finite pairs, then minimizes their total cost;
//! the brute-force enumerator uses the same objective and serves as a test
//! oracle.

use thiserror::Error;

use crate::geometry::{iou, BoundingBox};

#[derive(Debug, Error, PartialEq)]
pub enum AssignmentError {
    #[error("cost matrix has {len} entries, expected {rows}x{cols}")]
    Shape {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("cost matrix entry ({row}, {col}) is NaN or -inf")]
    InvalidEntry { row: usize, col: usize },
    #[error("brute force enumeration limited to min(rows, cols) <= {max}, got {got}")]
    TooLarge { max: usize, got: usize },
}

/// Dense row-major cost matrix. `+inf` forbids a pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    costs: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, costs: Vec<f64>) -> Result<Self, AssignmentError> {
        if costs.len() != rows * cols {
            return Err(AssignmentError::Shape {
                rows,
                cols,
                len: costs.len(),
            });
        }
        if let Some(k) = costs
            .iter()
            .position(|c| c.is_nan() || *c == f64::NEG_INFINITY)
        {
            return Err(AssignmentError::InvalidEntry {
                row: k / cols,
                col: k % cols,
            });
        }
        Ok(Self { rows, cols, costs })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut costs = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                costs.push(f(r, c));
            }
        }
        Self::new(rows, cols, costs).expect("cost function produced NaN or -inf")
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AssignmentError> {
        let cols = rows.first().map_or(0, Vec::len);
        let costs: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, costs)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.costs[row * self.cols + col]
    }

    /// Sum of the costs of `pairs`.
    pub fn total(&self, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(r, c)| self.get(r, c)).sum()
    }

    /// Cost used for forbidden cells: larger than any difference between two
    /// matchings made of finite cells.
    fn forbidden_cost(&self) -> f64 {
        let max_abs = self
            .costs
            .iter()
            .filter(|c| c.is_finite())
            .fold(0.0f64, |m, c| m.max(c.abs()));
        let n = self.rows.min(self.cols) as f64;
        (2.0 * max_abs + 1.0) * (n + 1.0)
    }
}

/// Hungarian algorithm (shortest augmenting path with potentials), O(n²m).
///
/// Returns pairs sorted by row. Rows or columns whose only options are
/// forbidden are left unmatched.
pub fn solve_min_cost(m: &CostMatrix) -> Vec<(usize, usize)> {
    if m.rows == 0 || m.cols == 0 {
        return Vec::new();
    }
    let transposed = m.rows > m.cols;
    let (n, k) = if transposed {
        (m.cols, m.rows)
    } else {
        (m.rows, m.cols)
    };
    let forbidden = m.forbidden_cost();
    let cost = |i: usize, j: usize| {
        let c = if transposed { m.get(j, i) } else { m.get(i, j) };
        if c.is_finite() {
            c
        } else {
            forbidden
        }
    };

    // 1-based arrays; column 0 is the virtual start column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; k + 1];
    let mut owner = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=k {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=k {
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

    let mut pairs: Vec<(usize, usize)> = (1..=k)
        .filter(|&j| owner[j] != 0)
        .map(|j| {
            let (i, j) = (owner[j] - 1, j - 1);
            if transposed {
                (j, i)
            } else {
                (i, j)
            }
        })
        .filter(|&(r, c)| m.get(r, c).is_finite())
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Matches `left` to `right` boxes by minimum total `1 - IoU`, allowing only
/// pairs with IoU at least `min_iou`. Returns `(left, right)` index pairs.
pub fn match_by_iou(
    left: &[BoundingBox],
    right: &[BoundingBox],
    min_iou: f64,
) -> Vec<(usize, usize)> {
    let m = CostMatrix::from_fn(left.len(), right.len(), |i, j| {
        let v = iou(&left[i], &right[j]);
        if v >= min_iou {
            1.0 - v
        } else {
            f64::INFINITY
        }
    });
    solve_min_cost(&m)
}

/// Largest `min(rows, cols)` accepted by [`brute_force_min_cost`].
pub const BRUTE_FORCE_MAX: usize = 8;

/// Exhaustive enumeration of all matchings of the smaller side into the
/// larger one. Same objective as [`solve_min_cost`]. Test oracle only.
pub fn brute_force_min_cost(m: &CostMatrix) -> Result<Vec<(usize, usize)>, AssignmentError> {
    let small = m.rows.min(m.cols);
    if small > BRUTE_FORCE_MAX {
        return Err(AssignmentError::TooLarge {
            max: BRUTE_FORCE_MAX,
            got: small,
        });
    }
    if small == 0 {
        return Ok(Vec::new());
    }
    let transposed = m.rows > m.cols;
    let (n, k) = if transposed {
        (m.cols, m.rows)
    } else {
        (m.rows, m.cols)
    };
    let cell = |i: usize, j: usize| if transposed { m.get(j, i) } else { m.get(i, j) };

    struct Search<'a> {
        n: usize,
        k: usize,
        cell: &'a dyn Fn(usize, usize) -> f64,
        used: Vec<bool>,
        current: Vec<usize>,
        best: Option<((usize, f64), Vec<usize>)>,
    }

    impl Search<'_> {
        fn run(&mut self, i: usize, forbidden: usize, total: f64) {
            if i == self.n {
                let key = (forbidden, total);
                let better = match &self.best {
                    None => true,
                    Some(((bf, bt), _)) => key.0 < *bf || (key.0 == *bf && key.1 < *bt),
                };
                if better {
                    self.best = Some((key, self.current.clone()));
                }
                return;
            }
            for j in 0..self.k {
                if self.used[j] {
                    continue;
                }
                let c = (self.cell)(i, j);
                self.used[j] = true;
                self.current.push(j);
                if c.is_finite() {
                    self.run(i + 1, forbidden, total + c);
                } else {
                    self.run(i + 1, forbidden + 1, total);
                }
                self.current.pop();
                self.used[j] = false;
            }
        }
    }

    let mut search = Search {
        n,
        k,
        cell: &cell,
        used: vec![false; k],
        current: Vec::with_capacity(n),
        best: None,
    };
    search.run(0, 0, 0.0);
    let (_, cols) = search.best.expect("at least one matching exists");
    let mut pairs: Vec<(usize, usize)> = cols
        .into_iter()
        .enumerate()
        .map(|(i, j)| if transposed { (j, i) } else { (i, j) })
        .filter(|&(r, c)| m.get(r, c).is_finite())
        .collect();
    pairs.sort_unstable();
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn assert_valid(pairs: &[(usize, usize)]) {
        let rows: HashSet<_> = pairs.iter().map(|p| p.0).collect();
        let cols: HashSet<_> = pairs.iter().map(|p| p.1).collect();
        assert_eq!(rows.len(), pairs.len());
        assert_eq!(cols.len(), pairs.len());
    }

    #[test]
    fn small_examples() {
        let one = CostMatrix::from_rows(&[vec![0.0]]).unwrap();
        assert_eq!(solve_min_cost(&one), vec![(0, 0)]);
        assert_eq!(brute_force_min_cost(&one).unwrap(), vec![(0, 0)]);

        let eye = CostMatrix::from_fn(3, 3, |r, c| if r == c { 0.0 } else { 1.0 });
        assert_eq!(solve_min_cost(&eye), vec![(0, 0), (1, 1), (2, 2)]);

        let m = CostMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 1.0]]).unwrap();
        let pairs = solve_min_cost(&m);
        assert_eq!(pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(m.total(&pairs), 2.0);
        assert_eq!(m.total(&brute_force_min_cost(&m).unwrap()), 2.0);
    }

    #[test]
    fn empty_and_degenerate() {
        let empty = CostMatrix::new(0, 4, vec![]).unwrap();
        assert!(solve_min_cost(&empty).is_empty());
        assert!(brute_force_min_cost(&empty).unwrap().is_empty());
        let none = CostMatrix::from_rows(&[vec![f64::INFINITY, f64::INFINITY]]).unwrap();
        assert!(solve_min_cost(&none).is_empty());
    }

    #[test]
    fn invalid_matrices() {
        assert!(matches!(
            CostMatrix::new(2, 2, vec![0.0; 3]),
            Err(AssignmentError::Shape { .. })
        ));
        assert!(matches!(
            CostMatrix::new(1, 2, vec![0.0, f64::NAN]),
            Err(AssignmentError::InvalidEntry { row: 0, col: 1 })
        ));
        let big = CostMatrix::from_fn(9, 9, |_, _| 1.0);
        assert!(matches!(
            brute_force_min_cost(&big),
            Err(AssignmentError::TooLarge { .. })
        ));
    }

    #[test]
    fn forbidden_cells_prefer_cardinality() {
        // Taking (0,0) would leave row 1 with only a forbidden option.
        let inf = f64::INFINITY;
        let m = CostMatrix::from_rows(&[vec![0.0, 5.0], vec![1.0, inf]]).unwrap();
        assert_eq!(solve_min_cost(&m), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn rectangular() {
        let m = CostMatrix::from_rows(&[vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0]]).unwrap();
        let p = solve_min_cost(&m);
        assert_valid(&p);
        assert_eq!(m.total(&p), 3.0);
        let t = CostMatrix::from_fn(3, 2, |r, c| m.get(c, r));
        let p = solve_min_cost(&t);
        assert_valid(&p);
        assert_eq!(t.total(&p), 3.0);
    }

    #[test]
    fn row_shift_changes_cost_by_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(1..=5);
            let m = CostMatrix::from_fn(n, n, |_, _| rng.random_range(0..20) as f64);
            let base = m.total(&solve_min_cost(&m));
            let row = rng.random_range(0..n);
            let shifted =
                CostMatrix::from_fn(n, n, |r, c| m.get(r, c) + if r == row { 7.0 } else { 0.0 });
            let after = shifted.total(&solve_min_cost(&shifted));
            assert_eq!(after - base, 7.0);
        }
    }

    #[test]
    fn agrees_with_brute_force_on_float_costs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let r = rng.random_range(1..=6);
            let c = rng.random_range(1..=6);
            let m = CostMatrix::from_fn(r, c, |_, _| {
                if rng.random_bool(0.2) {
                    f64::INFINITY
                } else {
                    rng.random_range(-1.0..1.0)
                }
            });
            let fast = solve_min_cost(&m);
            let slow = brute_force_min_cost(&m).unwrap();
            assert_valid(&fast);
            assert_eq!(fast.len(), slow.len());
            assert!((m.total(&fast) - m.total(&slow)).abs() < 1e-9);
        }
    }
}
