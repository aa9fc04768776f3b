//! Imputation, one-hot encoding and standardization fitted on training
//! rows only.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::Cleaner;
use crate::dataset::{Column, Dataset, MISSING_CODE};

#[derive(Debug, Clone)]
struct NumericFeature {
    column: usize,
    fill: f64,
    mean: f64,
    std: f64,
}

#[derive(Debug, Clone)]
struct CategoricalFeature {
    column: usize,
    n_levels: usize,
    mode: u32,
}

/// Donor rows for nearest-neighbour imputation, kept in a standardized
/// distance space where gaps sit at the column mean (zero).
#[derive(Debug, Clone)]
struct KnnIndex {
    k: usize,
    /// Row-major `n_donors x n_numeric` standardized values; NaN for gaps.
    numeric_z: Vec<f64>,
    numeric_scale: Vec<(f64, f64)>,
    /// Row-major `n_donors x n_categorical` codes.
    codes: Vec<u32>,
    /// Raw donor data for the value lookup.
    donors: Dataset,
}

/// Fitted feature map from dataset rows to dense vectors.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    cleaner: Cleaner,
    numeric: Vec<NumericFeature>,
    categorical: Vec<CategoricalFeature>,
    knn: Option<KnnIndex>,
    width: usize,
}

fn observed(values: &[f64], rows: &[usize]) -> Vec<f64> {
    rows.iter()
        .map(|&r| values[r])
        .filter(|v| !v.is_nan())
        .collect()
}

fn mean_of(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub(crate) fn median_of(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 0 {
        (s[m - 1] + s[m]) / 2.0
    } else {
        s[m]
    })
}

fn mode_of(codes: &[u32], rows: &[usize], n_levels: usize) -> u32 {
    let mut counts = vec![0usize; n_levels];
    for &r in rows {
        if let Some(c) = counts.get_mut(codes[r] as usize) {
            *c += 1;
        }
    }
    // ties resolve to the lowest code
    counts
        .iter()
        .enumerate()
        .fold((0usize, 0usize), |best, (i, &c)| if c > best.1 { (i, c) } else { best })
        .0 as u32
}

#[derive(PartialEq)]
struct Candidate {
    dist: f64,
    row: usize,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.row.cmp(&other.row))
    }
}

impl KnnIndex {
    fn fit(k: usize, data: &Dataset, numeric_cols: &[usize], cat_cols: &[usize]) -> Self {
        let all: Vec<usize> = (0..data.n_rows()).collect();
        let mut numeric_scale = Vec::with_capacity(numeric_cols.len());
        for &c in numeric_cols {
            let Column::Numeric(v) = data.column(c) else {
                unreachable!()
            };
            let obs = observed(v, &all);
            let mean = mean_of(&obs).unwrap_or(0.0);
            let var = obs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
                / obs.len().max(1) as f64;
            let std = if var > 0.0 { var.sqrt() } else { 1.0 };
            numeric_scale.push((mean, std));
        }
        let mut numeric_z = Vec::with_capacity(data.n_rows() * numeric_cols.len());
        let mut codes = Vec::with_capacity(data.n_rows() * cat_cols.len());
        for r in 0..data.n_rows() {
            for (j, &c) in numeric_cols.iter().enumerate() {
                let Column::Numeric(v) = data.column(c) else {
                    unreachable!()
                };
                let (m, s) = numeric_scale[j];
                numeric_z.push((v[r] - m) / s);
            }
            for &c in cat_cols {
                let Column::Categorical { codes: cc, .. } = data.column(c) else {
                    unreachable!()
                };
                codes.push(cc[r]);
            }
        }
        KnnIndex {
            k,
            numeric_z,
            numeric_scale,
            codes,
            donors: data.clone(),
        }
    }

    /// Distances from the query to every donor, over the coordinates the
    /// query observes; donor gaps count as the column mean.
    fn distances(
        &self,
        query: &Dataset,
        row: usize,
        numeric_cols: &[usize],
        cat_cols: &[usize],
    ) -> Vec<f64> {
        let nn = numeric_cols.len();
        let nc = cat_cols.len();
        let mut qz: Vec<Option<f64>> = Vec::with_capacity(nn);
        for (j, &c) in numeric_cols.iter().enumerate() {
            let Column::Numeric(v) = query.column(c) else {
                unreachable!()
            };
            let (m, s) = self.numeric_scale[j];
            qz.push((!v[row].is_nan()).then(|| (v[row] - m) / s));
        }
        let qc: Vec<u32> = cat_cols
            .iter()
            .map(|&c| match query.column(c) {
                Column::Categorical { codes, .. } => codes[row],
                _ => unreachable!(),
            })
            .collect();
        (0..self.donors.n_rows())
            .map(|d| {
                let mut acc = 0.0;
                let z = &self.numeric_z[d * nn..(d + 1) * nn];
                for (q, &x) in qz.iter().zip(z) {
                    if let Some(q) = q {
                        let x = if x.is_nan() { 0.0 } else { x };
                        acc += (q - x) * (q - x);
                    }
                }
                let codes = &self.codes[d * nc..(d + 1) * nc];
                for (&q, &x) in qc.iter().zip(codes) {
                    if q != MISSING_CODE && q != x {
                        acc += 1.0;
                    }
                }
                acc
            })
            .collect()
    }

    /// Indices of the `k` nearest donors with `column` observed, excluding
    /// `skip`; ties break toward the lower donor index.
    fn nearest(&self, dist: &[f64], column: usize, skip: Option<usize>) -> Vec<usize> {
        let col = self.donors.column(column);
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(self.k + 1);
        for (row, &d) in dist.iter().enumerate() {
            if Some(row) == skip || col.is_missing(row) {
                continue;
            }
            let cand = Candidate { dist: d, row };
            if heap.len() < self.k {
                heap.push(cand);
            } else if cand < *heap.peek().expect("non-empty") {
                heap.pop();
                heap.push(cand);
            }
        }
        heap.into_sorted_vec().into_iter().map(|c| c.row).collect()
    }
}

impl Preprocessor {
    /// Fits on `train`; `features` are the attribute indices to encode.
    pub fn fit(cleaner: &Cleaner, train: &Dataset, features: &[usize]) -> Preprocessor {
        let all: Vec<usize> = (0..train.n_rows()).collect();
        let mut numeric = Vec::new();
        let mut categorical = Vec::new();
        let mut numeric_cols = Vec::new();
        let mut cat_cols = Vec::new();
        for &c in features {
            match train.column(c) {
                Column::Numeric(v) => {
                    let obs = observed(v, &all);
                    let fill = match cleaner {
                        Cleaner::MedianImpute => median_of(&obs),
                        _ => mean_of(&obs),
                    }
                    .unwrap_or(0.0);
                    numeric.push(NumericFeature {
                        column: c,
                        fill,
                        mean: 0.0,
                        std: 1.0,
                    });
                    numeric_cols.push(c);
                }
                Column::Categorical { levels, codes } => {
                    categorical.push(CategoricalFeature {
                        column: c,
                        n_levels: levels.len(),
                        mode: mode_of(codes, &all, levels.len()),
                    });
                    cat_cols.push(c);
                }
            }
        }
        let knn = match cleaner {
            Cleaner::KnnImpute { k } => Some(KnnIndex::fit((*k).max(1), train, &numeric_cols, &cat_cols)),
            _ => None,
        };
        let width = numeric.len() + categorical.iter().map(|c| c.n_levels).sum::<usize>();
        let mut pre = Preprocessor {
            cleaner: cleaner.clone(),
            numeric,
            categorical,
            knn,
            width,
        };
        // standardization statistics come from the imputed training matrix
        let raw = pre.impute(train, true);
        let n = train.n_rows().max(1) as f64;
        for (j, f) in pre.numeric.iter_mut().enumerate() {
            let mean = raw.iter().map(|r| r.numeric[j]).sum::<f64>() / n;
            let var = raw
                .iter()
                .map(|r| (r.numeric[j] - mean) * (r.numeric[j] - mean))
                .sum::<f64>()
                / n;
            f.mean = mean;
            f.std = if var > 1e-24 { var.sqrt() } else { 1.0 };
        }
        pre
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cleaner(&self) -> &Cleaner {
        &self.cleaner
    }

    /// Imputed value of every numeric feature (in feature order) for each
    /// row. `own_rows` marks `data` as the training set, so a row never
    /// serves as its own neighbour.
    fn impute(&self, data: &Dataset, own_rows: bool) -> Vec<ImputedRow> {
        let numeric_cols: Vec<usize> = self.numeric.iter().map(|f| f.column).collect();
        let cat_cols: Vec<usize> = self.categorical.iter().map(|f| f.column).collect();
        (0..data.n_rows())
            .map(|r| {
                let mut row = ImputedRow {
                    numeric: Vec::with_capacity(self.numeric.len()),
                    codes: Vec::with_capacity(self.categorical.len()),
                };
                let needs_knn = self.knn.is_some()
                    && numeric_cols
                        .iter()
                        .chain(&cat_cols)
                        .any(|&c| data.is_missing(r, c));
                let dist = match (&self.knn, needs_knn) {
                    (Some(knn), true) => Some(knn.distances(data, r, &numeric_cols, &cat_cols)),
                    _ => None,
                };
                let skip = own_rows.then_some(r);
                for f in &self.numeric {
                    let Column::Numeric(v) = data.column(f.column) else {
                        unreachable!()
                    };
                    let x = v[r];
                    row.numeric.push(if !x.is_nan() {
                        x
                    } else if let (Some(knn), Some(d)) = (&self.knn, &dist) {
                        let near = knn.nearest(d, f.column, skip);
                        let Column::Numeric(dv) = knn.donors.column(f.column) else {
                            unreachable!()
                        };
                        mean_of(&near.iter().map(|&i| dv[i]).collect::<Vec<_>>()).unwrap_or(f.fill)
                    } else {
                        f.fill
                    });
                }
                for f in &self.categorical {
                    let Column::Categorical { codes, .. } = data.column(f.column) else {
                        unreachable!()
                    };
                    let c = codes[r];
                    row.codes.push(if c != MISSING_CODE {
                        c
                    } else if let (Some(knn), Some(d)) = (&self.knn, &dist) {
                        let near = knn.nearest(d, f.column, skip);
                        if near.is_empty() {
                            f.mode
                        } else {
                            let Column::Categorical { codes: dc, .. } = knn.donors.column(f.column)
                            else {
                                unreachable!()
                            };
                            mode_of(dc, &near, f.n_levels)
                        }
                    } else {
                        f.mode
                    });
                }
                row
            })
            .collect()
    }

    /// Dense row-major encoding of every row of `data`.
    pub fn transform(&self, data: &Dataset, is_training: bool) -> Vec<f64> {
        let mut out = Vec::with_capacity(data.n_rows() * self.width);
        for row in self.impute(data, is_training) {
            for (f, &x) in self.numeric.iter().zip(&row.numeric) {
                out.push((x - f.mean) / f.std);
            }
            for (f, &c) in self.categorical.iter().zip(&row.codes) {
                for level in 0..f.n_levels {
                    out.push(if level as u32 == c { 1.0 } else { 0.0 });
                }
            }
        }
        out
    }

    /// Imputed, unstandardized numeric values of `column` for every row.
    pub fn imputed_numeric(&self, data: &Dataset, column: usize, is_training: bool) -> Option<Vec<f64>> {
        let j = self.numeric.iter().position(|f| f.column == column)?;
        Some(
            self.impute(data, is_training)
                .into_iter()
                .map(|r| r.numeric[j])
                .collect(),
        )
    }
}

struct ImputedRow {
    numeric: Vec<f64>,
    codes: Vec<u32>,
}
