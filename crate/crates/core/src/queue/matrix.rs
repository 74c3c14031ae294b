use super::{timer_expiry_prob, truncated_poisson, QueueError, QueueParams};

/// Dense row-stochastic matrix over the states `0..n`.
///
/// `first_nonzero[i]` is the first column that may be non-zero in row `i`; the
/// stationary solver uses it to skip the empty lower-left part.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    data: Vec<f64>,
    first_nonzero: Vec<usize>,
}

impl TransitionMatrix {
    /// Builds a matrix from explicit rows, checking that each is a probability vector.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, QueueError> {
        let n = rows.len();
        if n == 0 {
            return Err(QueueError::MalformedMatrix("empty matrix".into()));
        }
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(QueueError::MalformedMatrix(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            data.extend_from_slice(row);
        }
        let m = Self::from_dense(n, data);
        m.check_stochastic(1e-9)?;
        Ok(m)
    }

    fn from_dense(n: usize, data: Vec<f64>) -> Self {
        let first_nonzero = (0..n)
            .map(|i| data[i * n..(i + 1) * n].iter().position(|&p| p != 0.0).unwrap_or(n))
            .collect();
        Self { n, data, first_nonzero }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n)
    }

    pub fn first_nonzero(&self, i: usize) -> usize {
        self.first_nonzero[i]
    }

    pub(crate) fn dense(&self) -> &[f64] {
        &self.data
    }

    /// Checks entries lie in `[0, 1]` and each row sums to one within `tol`.
    pub fn check_stochastic(&self, tol: f64) -> Result<(), QueueError> {
        for (i, row) in self.rows().enumerate() {
            if let Some(j) = row.iter().position(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(QueueError::MalformedMatrix(format!("entry ({i}, {j}) = {} is not a probability", row[j])));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(QueueError::MalformedMatrix(format!("row {i} sums to {sum}")));
            }
        }
        Ok(())
    }

    /// `max_i |Σ_j p[i][j] - 1|`.
    pub fn max_row_error(&self) -> f64 {
        self.rows().map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// `x·P`.
    pub fn left_multiply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = self.row(i);
            for j in self.first_nonzero[i]..self.n {
                out[j] += xi * row[j];
            }
        }
        out
    }
}

/// Mining-epoch kernel.
///
/// A block assembled from occupancy `i` carries `d(i)` transactions, the rest
/// `i - d(i)` stay queued, and arrivals during the exponential mining time
/// are geometric with ratio `ν/(λ+ν)`. Slots held by the block
/// cap the next state at `S - d(i)`, where the overflow mass collects.
pub fn build_transition_matrix(q: &QueueParams) -> Result<TransitionMatrix, QueueError> {
    q.validate()?;
    let n = q.states();
    let total = q.service_rate + q.arrival_rate;
    let stop = q.service_rate / total;
    let go = q.arrival_rate / total;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        let d = q.batch_departure(i);
        let residue = i - d;
        let last = q.capacity - d;
        let row = &mut data[i * n..(i + 1) * n];
        let mut geometric = 1.0;
        for p in row.iter_mut().take(last).skip(residue) {
            *p = stop * geometric;
            geometric *= go;
        }
        // P(at least last - residue arrivals during mining)
        row[last] = geometric;
    }
    Ok(TransitionMatrix::from_dense(n, data))
}

/// Distribution of the occupancy at which the next block is assembled, given
/// the post-departure residue `i`.
///
/// Residues of at least `S_B` start mining immediately. Otherwise the pool
/// either fills to `S_B` or the timer fires after `n < S_B - i` arrivals
/// (truncated Poisson). An expired timer over an empty pool waits for one
/// arrival, so the block holds at least one transaction.
pub fn block_start_law(i: usize, q: &QueueParams) -> Vec<(usize, f64)> {
    if i >= q.batch_size {
        return vec![(i, 1.0)];
    }
    let expire = timer_expiry_prob(i, q);
    let mut law = vec![(q.batch_size, 1.0 - expire)];
    if expire > 0.0 {
        let missing = q.batch_size - i;
        for (n, p) in truncated_poisson(q.arrival_rate * q.timeout, missing).into_iter().enumerate() {
            let start = (i + n).max(1);
            law.push((start, expire * p));
        }
    }
    law
}

/// Post-departure embedded chain: fill phase followed by one mining epoch.
pub fn build_departure_chain(q: &QueueParams) -> Result<TransitionMatrix, QueueError> {
    let kernel = build_transition_matrix(q)?;
    let n = q.states();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        let row = &mut data[i * n..(i + 1) * n];
        for (c, weight) in block_start_law(i, q) {
            if weight == 0.0 {
                continue;
            }
            let from = kernel.first_nonzero(c);
            for (dst, src) in row[from..].iter_mut().zip(&kernel.row(c)[from..]) {
                *dst += weight * src;
            }
        }
    }
    Ok(TransitionMatrix::from_dense(n, data))
}
