//! Communication graphs, doubly-stochastic mixing weights and their spectral constants.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{child_seed, substream, Purpose};

/// Undirected simple graph on agents `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    /// Builds a graph from unordered pairs. Self-loops are rejected, duplicates merged.
    pub fn new(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidTopology("graph needs at least one agent".into()));
        }
        let mut edges = BTreeSet::new();
        for (i, j) in pairs {
            if i == j {
                return Err(Error::InvalidTopology(format!("self-loop at agent {i}")));
            }
            if i >= n || j >= n {
                return Err(Error::InvalidTopology(format!(
                    "edge ({i},{j}) out of range for {n} agents"
                )));
            }
            edges.insert((i.min(j), i.max(j)));
        }
        Ok(Graph { n, edges })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Edges as `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    /// Serializes as one `i j` line per edge.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (i, j) in self.edges() {
            let _ = writeln!(out, "{i} {j}");
        }
        out
    }

    /// Parses the edge-list format. When `n` is `None` it is inferred from the largest index.
    pub fn from_edge_list(text: &str, n: Option<usize>) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.ok_or_else(|| Error::Parse(format!("line {}: expected `i j`", lineno + 1)))?
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            };
            let i = parse(it.next())?;
            let j = parse(it.next())?;
            if it.next().is_some() {
                return Err(Error::Parse(format!("line {}: trailing tokens", lineno + 1)));
            }
            pairs.push((i, j));
        }
        let inferred = pairs.iter().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(1);
        Graph::new(n.unwrap_or(inferred), pairs)
    }
}

/// Erdős–Rényi graph: every unordered pair is kept independently with probability `p_edge`.
pub fn erdos_renyi(n: usize, p_edge: f64, seed: u64) -> Result<Graph> {
    if !(0.0..=1.0).contains(&p_edge) {
        return Err(Error::InvalidTopology(format!("edge probability {p_edge} outside [0,1]")));
    }
    let mut rng = substream(seed, 0, Purpose::Topology);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            // Always consume one draw per pair so the stream layout is independent of p_edge.
            let u: f64 = rng.random();
            if u < p_edge {
                pairs.push((i, j));
            }
        }
    }
    Graph::new(n, pairs)
}

/// Retries [`erdos_renyi`] with deterministic child seeds until the graph is connected.
pub fn erdos_renyi_connected(n: usize, p_edge: f64, seed: u64, max_attempts: usize) -> Result<Graph> {
    for attempt in 0..max_attempts.max(1) {
        let s = if attempt == 0 { seed } else { child_seed(seed, attempt as u64) };
        let g = erdos_renyi(n, p_edge, s)?;
        if is_connected(&g) {
            return Ok(g);
        }
    }
    Err(Error::InvalidTopology(format!(
        "no connected ER({n}, {p_edge}) graph after {max_attempts} attempts"
    )))
}

/// Cycle `0 - 1 - ... - (n-1) - 0`.
pub fn ring(n: usize) -> Result<Graph> {
    if n < 3 {
        return Err(Error::InvalidTopology(format!("ring needs n >= 3, got {n}")));
    }
    Graph::new(n, (0..n).map(|i| (i, (i + 1) % n)))
}

/// Breadth-first check for a single connected component.
pub fn is_connected(g: &Graph) -> bool {
    let adj = g.neighbors();
    let mut seen = vec![false; g.n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == g.n
}

/// Symmetric doubly-stochastic mixing matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    w: DMatrix<f64>,
}

impl WeightMatrix {
    /// Wraps a matrix after checking symmetry, nonnegativity and unit row sums.
    pub fn from_matrix(w: DMatrix<f64>) -> Result<Self> {
        let n = w.nrows();
        if n == 0 || w.ncols() != n {
            return Err(Error::Shape(format!("weight matrix must be square, got {}x{}", n, w.ncols())));
        }
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                let v = w[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidTopology(format!("W[{i},{j}] = {v} is not a nonnegative real")));
                }
                if v != w[(j, i)] {
                    return Err(Error::InvalidTopology(format!("W is not symmetric at ({i},{j})")));
                }
                row += v;
            }
            if (row - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidTopology(format!("row {i} sums to {row}")));
            }
            if w[(i, i)] <= 0.0 {
                return Err(Error::InvalidTopology(format!("W[{i},{i}] must be positive")));
            }
        }
        Ok(WeightMatrix { w })
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    /// The graph whose edges are the positive off-diagonal entries.
    pub fn induced_graph(&self) -> Graph {
        let n = self.n();
        let pairs = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.w[(i, j)] > 0.0);
        Graph::new(n, pairs).expect("indices in range")
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.w.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// `(q1 - γβ q1^k) I + (1 - q1 + γβ q1^k) W`, the effective mixing matrix of the
    /// consensus-error recursion under geometric stepsizes.
    pub fn w_tilde(&self, gamma: f64, beta: f64, q1: f64, k: u32) -> DMatrix<f64> {
        let a = q1 - gamma * beta * q1.powi(k as i32);
        let n = self.n();
        DMatrix::identity(n, n) * a + &self.w * (1.0 - a)
    }

    /// Dense CSV, one row per line, values in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n() {
            let row: Vec<String> = (0..self.n()).map(|j| format!("{:?}", self.w[(i, j)])).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(r, l)| {
                l.split(',')
                    .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Parse(format!("row {}: {e}", r + 1))))
                    .collect()
            })
            .collect::<Result<_>>()?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("weight CSV must be square".into()));
        }
        WeightMatrix::from_matrix(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

/// Metropolis–Hastings weights: `1 / (1 + max(deg_i, deg_j))` on edges, remainder on the diagonal.
pub fn metropolis_weights(g: &Graph) -> Result<WeightMatrix> {
    if !is_connected(g) {
        return Err(Error::InvalidTopology("metropolis weights need a connected graph".into()));
    }
    let n = g.n();
    let deg = g.degrees();
    let mut w = DMatrix::zeros(n, n);
    for (i, j) in g.edges() {
        let v = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    WeightMatrix::from_matrix(w)
}

/// Spectral constants of a mixing matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralConstants {
    /// `‖W − (1/n)11ᵀ‖₂`.
    pub sigma: f64,
    /// `‖W − I‖₂`.
    pub w_minus_i_norm: f64,
}

fn projector_gap(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let centered = m - DMatrix::from_element(n, n, 1.0 / n as f64);
    SymmetricEigen::new(centered)
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Spectral norms of `W − (1/n)11ᵀ` and `W − I` (both symmetric, so max |eigenvalue|).
pub fn spectral_constants(w: &WeightMatrix) -> Result<SpectralConstants> {
    if !is_connected(&w.induced_graph()) {
        return Err(Error::InvalidTopology("induced graph is disconnected (sigma = 1)".into()));
    }
    let sigma = projector_gap(w.matrix());
    if sigma >= 1.0 - 1e-12 {
        return Err(Error::InvalidTopology(format!("sigma = {sigma} is not below 1")));
    }
    let ev = w.eigenvalues();
    let w_minus_i_norm = ev.iter().fold(0.0_f64, |acc, v| acc.max((v - 1.0).abs()));
    Ok(SpectralConstants { sigma, w_minus_i_norm })
}

/// Worst-case `‖W̃(k) − (1/n)11ᵀ‖₂` over all `k ≥ 1` for a given stepsize decay `q1`.
///
/// `W̃(k)` is `aI + (1 − a)W` with `a ∈ [0, q1)`. Each non-unit eigenvalue maps to
/// `a + (1 − a)λ`, which is affine in `a`, so its magnitude peaks at an endpoint.
pub fn sigma_over_schedule(w: &WeightMatrix, q1: f64) -> Result<f64> {
    let base = spectral_constants(w)?.sigma;
    let n = w.n();
    let lazy = DMatrix::identity(n, n) * q1 + w.matrix() * (1.0 - q1);
    Ok(base.max(projector_gap(&lazy)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn er_extremes() {
        let g = erdos_renyi(2, 1.0, 9).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1)]);
        let g = erdos_renyi(5, 0.0, 9).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert!(!is_connected(&g));
    }

    #[test]
    fn er_is_deterministic() {
        let a = erdos_renyi(100, 0.1, 42).unwrap();
        let b = erdos_renyi(100, 0.1, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n(), 100);
        let c = erdos_renyi(100, 0.1, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ring_shapes() {
        let g = ring(4).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (0, 3), (1, 2), (2, 3)]);
        let g = ring(3).unwrap();
        assert_eq!(g.edge_count(), 3);
        let g = ring(50).unwrap();
        assert_eq!(g.edge_count(), 50);
        assert!(g.degrees().iter().all(|&d| d == 2));
        assert!(matches!(ring(2), Err(Error::InvalidTopology(_))));
    }

    #[test]
    fn connectivity() {
        assert!(is_connected(&ring(4).unwrap()));
        let two_triangles = Graph::new(6, [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)]).unwrap();
        assert!(!is_connected(&two_triangles));
        assert!(matches!(metropolis_weights(&two_triangles), Err(Error::InvalidTopology(_))));
    }

    #[test]
    fn metropolis_small_cases() {
        let g = Graph::new(2, [(0, 1)]).unwrap();
        let w = metropolis_weights(&g).unwrap();
        assert_eq!(w.matrix(), &DMatrix::from_element(2, 2, 0.5));
        assert_eq!(spectral_constants(&w).unwrap().sigma, 0.0);

        let w = metropolis_weights(&ring(4).unwrap()).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(w.get(i, i), 1.0 / 3.0, epsilon = 1e-15);
            assert_abs_diff_eq!(w.get(i, (i + 1) % 4), 1.0 / 3.0, epsilon = 1e-15);
            assert_eq!(w.get(i, (i + 2) % 4), 0.0);
        }
    }

    #[test]
    fn ring4_spectrum() {
        // Circulant oracle: eigenvalues are 1/3 + (2/3) cos(2πj/4).
        let w = metropolis_weights(&ring(4).unwrap()).unwrap();
        let mut expected: Vec<f64> = (0..4)
            .map(|j| 1.0 / 3.0 + 2.0 / 3.0 * (2.0 * std::f64::consts::PI * j as f64 / 4.0).cos())
            .collect();
        expected.sort_by(f64::total_cmp);
        for (a, b) in w.eigenvalues().iter().zip(&expected) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let sc = spectral_constants(&w).unwrap();
        assert_abs_diff_eq!(sc.sigma, 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sc.w_minus_i_norm, 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn sigma_over_schedule_dominates_base() {
        let w = metropolis_weights(&ring(4).unwrap()).unwrap();
        let s = sigma_over_schedule(&w, 0.5).unwrap();
        // eigenvalue 1/3 → 0.5 + 0.5/3 = 2/3 dominates.
        assert_abs_diff_eq!(s, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn edge_list_and_csv_round_trip() {
        let g = erdos_renyi_connected(12, 0.3, 5, 50).unwrap();
        assert_eq!(Graph::from_edge_list(&g.to_edge_list(), Some(12)).unwrap(), g);
        let w = metropolis_weights(&g).unwrap();
        assert_eq!(WeightMatrix::from_csv(&w.to_csv()).unwrap(), w);
        assert!(Graph::from_edge_list("0 1 2\n", None).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn generated_weights_are_valid(n in 2usize..30, p in 0.15f64..0.9, seed in any::<u64>()) {
            if let Ok(g) = erdos_renyi_connected(n, p, seed, 200) {
                let w = metropolis_weights(&g).unwrap();
                let m = w.matrix();
                for i in 0..n {
                    let row: f64 = m.row(i).sum();
                    prop_assert!((row - 1.0).abs() <= 1e-12);
                    for j in 0..n {
                        prop_assert_eq!(m[(i, j)], m[(j, i)]);
                        prop_assert_eq!(m[(i, j)] > 0.0, i == j || g.has_edge(i, j));
                    }
                }
                for ev in w.eigenvalues() {
                    prop_assert!((-1.0 - 1e-10..=1.0 + 1e-10).contains(&ev));
                }
                let sc = spectral_constants(&w).unwrap();
                prop_assert!((0.0..1.0).contains(&sc.sigma));
            }
        }

        #[test]
        fn w_tilde_is_doubly_stochastic(
            gamma in 1e-4f64..1.0, beta_frac in 0.0f64..1.0, q1 in 0.01f64..0.99,
            k in 1u32..200, seed in any::<u64>(),
        ) {
            let beta = beta_frac / gamma; // γβ ≤ 1
            let g = erdos_renyi_connected(8, 0.5, seed, 200).unwrap();
            let w = metropolis_weights(&g).unwrap();
            let wt = w.w_tilde(gamma, beta, q1, k);
            for i in 0..8 {
                prop_assert!((wt.row(i).sum() - 1.0).abs() <= 1e-12);
                prop_assert!((wt.column(i).sum() - 1.0).abs() <= 1e-12);
                for j in 0..8 {
                    prop_assert!(wt[(i, j)] >= -1e-15);
                }
            }
        }
    }
}
