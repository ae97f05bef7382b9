//! Fixed observable dictionaries for the eDMD baselines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// All monomials up to total degree `degree` in `n_x` variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyDictionary {
    pub degree: usize,
    pub n_x: usize,
}

impl PolyDictionary {
    pub fn new(degree: usize, n_x: usize) -> Result<Self> {
        if degree == 0 || n_x == 0 {
            return Err(Error::InvalidConfig(
                "polynomial dictionary needs degree >= 1 and n_x >= 1".into(),
            ));
        }
        Ok(PolyDictionary { degree, n_x })
    }

    /// Exponent vectors in graded-lexicographic order, constant first.
    pub fn exponents(&self) -> Vec<Vec<u32>> {
        let mut out = Vec::new();
        for total in 0..=self.degree {
            let mut current = vec![0u32; self.n_x];
            push_compositions(total as u32, 0, &mut current, &mut out);
        }
        out
    }

    pub fn dim(&self) -> usize {
        binomial(self.n_x + self.degree, self.degree)
    }
}

fn push_compositions(remaining: u32, var: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if var + 1 == current.len() {
        current[var] = remaining;
        out.push(current.clone());
        return;
    }
    for e in (0..=remaining).rev() {
        current[var] = e;
        push_compositions(remaining - e, var + 1, current, out);
    }
    current[var] = 0;
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Polynomial features of every column of `x`.
pub fn poly_lift(x: &Matrix, degree: usize) -> Result<Matrix> {
    let dict = PolyDictionary::new(degree, x.nrows())?;
    let exps = dict.exponents();
    Ok(Matrix::from_fn(exps.len(), x.ncols(), |r, c| {
        exps[r]
            .iter()
            .enumerate()
            .map(|(d, &e)| x[(d, c)].powi(e as i32))
            .product()
    }))
}

/// Thin-plate-spline RBF dictionary, optionally augmented with a constant
/// and the raw state (in that order, before the RBF features).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfDictionary {
    pub centers: Matrix,
    pub include_state: bool,
    pub include_constant: bool,
}

impl RbfDictionary {
    pub fn new(centers: Matrix, include_state: bool, include_constant: bool) -> Result<Self> {
        if centers.ncols() == 0 {
            return Err(Error::InvalidConfig("RBF dictionary needs at least one center".into()));
        }
        crate::numerics::ensure_finite(&centers, "RBF centers")?;
        Ok(RbfDictionary {
            centers,
            include_state,
            include_constant,
        })
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
            + usize::from(self.include_constant)
            + if self.include_state { self.centers.nrows() } else { 0 }
    }
}

/// `r^2 ln r`, extended continuously by 0 at the origin.
pub fn thinplate(r: f64) -> f64 {
    if r <= 0.0 {
        0.0
    } else {
        r * r * r.ln()
    }
}

pub fn thinplate_lift(x: &Matrix, dict: &RbfDictionary) -> Result<Matrix> {
    let n_x = dict.centers.nrows();
    if x.nrows() != n_x {
        return Err(Error::dims(format!(
            "state dimension {} but RBF centers have dimension {n_x}",
            x.nrows()
        )));
    }
    let mut out = Matrix::zeros(dict.dim(), x.ncols());
    for c in 0..x.ncols() {
        let mut row = 0;
        if dict.include_constant {
            out[(row, c)] = 1.0;
            row += 1;
        }
        if dict.include_state {
            for d in 0..n_x {
                out[(row, c)] = x[(d, c)];
                row += 1;
            }
        }
        for j in 0..dict.centers.ncols() {
            let r = (x.column(c) - dict.centers.column(j)).norm();
            out[(row, c)] = thinplate(r);
            row += 1;
        }
    }
    Ok(out)
}

/// Lloyd's algorithm with k-means++ seeding; returns centers as columns.
pub fn kmeans(x: &Matrix, k: usize, seed: u64, max_iters: usize) -> Result<Matrix> {
    kmeans_with_trace(x, k, seed, max_iters).map(|(c, _)| c)
}

/// As [`kmeans`], also returning the within-cluster sum of squares after
/// seeding and after every Lloyd iteration.
pub fn kmeans_with_trace(
    x: &Matrix,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<(Matrix, Vec<f64>)> {
    let m = x.ncols();
    if k == 0 || k > m {
        return Err(Error::DegenerateData(format!("k = {k} with {m} points")));
    }
    crate::numerics::ensure_finite(x, "k-means data")?;
    if count_distinct(x, k) < k {
        return Err(Error::DegenerateData(format!(
            "fewer than {k} distinct points"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_seed(x, k, &mut rng);
    let mut assign = vec![0usize; m];
    let mut trace = vec![assign_points(x, &centers, &mut assign)];

    for _ in 0..max_iters {
        let mut sums = Matrix::zeros(x.nrows(), k);
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            let mut col = sums.column_mut(a);
            col += x.column(i);
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                let mean = sums.column(j) / counts[j] as f64;
                centers.set_column(j, &mean);
            }
        }
        // empty clusters take the point farthest from its own center
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..m)
                    .max_by(|&a, &b| {
                        let da = (x.column(a) - centers.column(assign[a])).norm_squared();
                        let db = (x.column(b) - centers.column(assign[b])).norm_squared();
                        da.total_cmp(&db)
                    })
                    .expect("m >= k >= 1");
                centers.set_column(j, &x.column(far));
                assign[far] = j;
            }
        }
        let prev = assign.clone();
        let wcss = assign_points(x, &centers, &mut assign);
        trace.push(wcss);
        if prev == assign {
            break;
        }
    }
    Ok((centers, trace))
}

fn count_distinct(x: &Matrix, limit: usize) -> usize {
    let mut distinct: Vec<usize> = Vec::new();
    for i in 0..x.ncols() {
        if !distinct.iter().any(|&j| x.column(j) == x.column(i)) {
            distinct.push(i);
            if distinct.len() >= limit {
                break;
            }
        }
    }
    distinct.len()
}

fn plus_plus_seed(x: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let m = x.ncols();
    let mut centers = Matrix::zeros(x.nrows(), k);
    let first = rng.random_range(0..m);
    centers.set_column(0, &x.column(first));
    let mut d2: Vec<f64> = (0..m)
        .map(|i| (x.column(i) - centers.column(0)).norm_squared())
        .collect();
    for j in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = m - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            if d2[chosen] == 0.0 {
                // rounding at the tail: fall back to the farthest point
                chosen = (0..m).max_by(|&a, &b| d2[a].total_cmp(&d2[b])).unwrap();
            }
            chosen
        } else {
            rng.random_range(0..m)
        };
        centers.set_column(j, &x.column(pick));
        for i in 0..m {
            d2[i] = d2[i].min((x.column(i) - centers.column(j)).norm_squared());
        }
    }
    centers
}

fn assign_points(x: &Matrix, centers: &Matrix, assign: &mut [usize]) -> f64 {
    let mut wcss = 0.0;
    for i in 0..x.ncols() {
        let (best, d) = (0..centers.ncols())
            .map(|j| (j, (x.column(i) - centers.column(j)).norm_squared()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one center");
        assign[i] = best;
        wcss += d;
    }
    wcss
}
