use super::Embeddings;
use crate::error::{Error, Result};
use crate::real::Real;

/// Symmetric-normalized user–item adjacency, stored as CSR in both directions.
///
/// Edge `(u, i)` has weight `1/√(deg(u)·deg(i))`; no self-loops. Isolated
/// nodes have empty rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedGraph {
    num_users: usize,
    num_items: usize,
    user_offsets: Vec<usize>,
    user_adj: Vec<(u32, f64)>,
    item_offsets: Vec<usize>,
    item_adj: Vec<(u32, f64)>,
}

impl NormalizedGraph {
    /// Builds the graph from per-user sorted training item lists.
    pub fn from_train(num_users: usize, num_items: usize, train: &[Vec<u32>]) -> Self {
        let mut item_deg = vec![0usize; num_items];
        for items in train {
            for &i in items {
                item_deg[i as usize] += 1;
            }
        }
        let mut user_offsets = Vec::with_capacity(num_users + 1);
        let mut user_adj = Vec::new();
        user_offsets.push(0);
        for u in 0..num_users {
            let items = train.get(u).map(Vec::as_slice).unwrap_or(&[]);
            let du = items.len() as f64;
            for &i in items {
                let w = 1.0 / (du * item_deg[i as usize] as f64).sqrt();
                user_adj.push((i, w));
            }
            user_offsets.push(user_adj.len());
        }

        let mut item_offsets = vec![0usize; num_items + 1];
        for i in 0..num_items {
            item_offsets[i + 1] = item_offsets[i] + item_deg[i];
        }
        let mut fill = item_offsets.clone();
        let mut item_adj = vec![(0u32, 0.0); user_adj.len()];
        for u in 0..num_users {
            for &(i, w) in &user_adj[user_offsets[u]..user_offsets[u + 1]] {
                item_adj[fill[i as usize]] = (u as u32, w);
                fill[i as usize] += 1;
            }
        }
        NormalizedGraph {
            num_users,
            num_items,
            user_offsets,
            user_adj,
            item_offsets,
            item_adj,
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_edges(&self) -> usize {
        self.user_adj.len()
    }

    /// Normalized weight of edge `(u, i)`, zero when absent.
    pub fn weight(&self, u: usize, i: u32) -> f64 {
        self.user_adj[self.user_offsets[u]..self.user_offsets[u + 1]]
            .iter()
            .find(|(j, _)| *j == i)
            .map_or(0.0, |&(_, w)| w)
    }

    fn multiply<T: Real>(&self, x: &Embeddings<T>, out: &mut Embeddings<T>) {
        let d = x.dim;
        out.fill_zero();
        for u in 0..self.num_users {
            let row = out.user_mut(u);
            for &(i, w) in &self.user_adj[self.user_offsets[u]..self.user_offsets[u + 1]] {
                let w = T::of(w);
                for (o, &v) in row
                    .iter_mut()
                    .zip(&x.items[i as usize * d..(i as usize + 1) * d])
                {
                    *o += w * v;
                }
            }
        }
        for i in 0..self.num_items {
            let row = out.item_mut(i);
            for &(u, w) in &self.item_adj[self.item_offsets[i]..self.item_offsets[i + 1]] {
                let w = T::of(w);
                for (o, &v) in row
                    .iter_mut()
                    .zip(&x.users[u as usize * d..(u as usize + 1) * d])
                {
                    *o += w * v;
                }
            }
        }
    }

    /// Mean of `Âᵏ·E` for `k = 0..=layers`. `layers = 0` returns `E` unchanged.
    ///
    /// The operator is symmetric, so the same call maps gradients with respect
    /// to the output back onto the input.
    pub fn propagate<T: Real>(&self, emb: &Embeddings<T>, layers: usize) -> Result<Embeddings<T>> {
        if emb.num_users != self.num_users || emb.num_items != self.num_items {
            return Err(Error::DimensionMismatch(format!(
                "graph is {}x{}, embeddings are {}x{}",
                self.num_users, self.num_items, emb.num_users, emb.num_items
            )));
        }
        if layers == 0 {
            return Ok(emb.clone());
        }
        let mut acc = emb.clone();
        let mut cur = emb.clone();
        let mut next = Embeddings::zeros(emb.num_users, emb.num_items, emb.dim);
        for _ in 0..layers {
            self.multiply(&cur, &mut next);
            for (a, &v) in acc.iter_mut().zip(next.iter()) {
                *a += v;
            }
            std::mem::swap(&mut cur, &mut next);
        }
        let inv = T::of(1.0 / (layers + 1) as f64);
        acc.iter_mut().for_each(|a| *a *= inv);
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense (m+n)x(m+n) normalized adjacency built directly from degrees.
    fn dense_adjacency(m: usize, n: usize, train: &[Vec<u32>]) -> Vec<Vec<f64>> {
        let size = m + n;
        let mut a = vec![vec![0.0; size]; size];
        for (u, items) in train.iter().enumerate() {
            for &i in items {
                a[u][m + i as usize] = 1.0;
                a[m + i as usize][u] = 1.0;
            }
        }
        let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
        for r in 0..size {
            for c in 0..size {
                if a[r][c] != 0.0 {
                    a[r][c] /= (deg[r] * deg[c]).sqrt();
                }
            }
        }
        a
    }

    fn dense_propagate(a: &[Vec<f64>], x: &[Vec<f64>], layers: usize) -> Vec<Vec<f64>> {
        let size = x.len();
        let d = x[0].len();
        let mut acc = x.to_vec();
        let mut cur = x.to_vec();
        for _ in 0..layers {
            let mut next = vec![vec![0.0; d]; size];
            for r in 0..size {
                for c in 0..size {
                    for k in 0..d {
                        next[r][k] += a[r][c] * cur[c][k];
                    }
                }
            }
            for r in 0..size {
                for k in 0..d {
                    acc[r][k] += next[r][k];
                }
            }
            cur = next;
        }
        acc.iter()
            .map(|row| row.iter().map(|v| v / (layers + 1) as f64).collect())
            .collect()
    }

    #[test]
    fn zero_layers_is_identity() {
        let g = NormalizedGraph::from_train(2, 3, &[vec![0, 2], vec![1]]);
        let e = Embeddings::from_parts(
            2,
            3,
            2,
            vec![1.0, 2.0, 3.0, 4.0],
            vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0],
        )
        .unwrap();
        assert_eq!(g.propagate(&e, 0).unwrap(), e);
    }

    #[test]
    fn single_edge_one_layer_averages() {
        let g = NormalizedGraph::from_train(1, 1, &[vec![0]]);
        assert_eq!(g.weight(0, 0), 1.0);
        let e = Embeddings::from_parts(1, 1, 2, vec![1.0f64, 3.0], vec![5.0, -1.0]).unwrap();
        let p = g.propagate(&e, 1).unwrap();
        assert_eq!(p.users, vec![3.0, 1.0]);
        assert_eq!(p.items, vec![3.0, 1.0]);
    }

    #[test]
    fn path_graph_two_layers_matches_dense_power() {
        // u0 - i0 - u1
        let train = vec![vec![0u32], vec![0u32]];
        let g = NormalizedGraph::from_train(2, 1, &train);
        let e =
            Embeddings::from_parts(2, 1, 2, vec![1.0f64, -2.0, 0.5, 4.0], vec![3.0, 1.5]).unwrap();
        let p = g.propagate(&e, 2).unwrap();
        let a = dense_adjacency(2, 1, &train);
        let x = vec![vec![1.0, -2.0], vec![0.5, 4.0], vec![3.0, 1.5]];
        let want = dense_propagate(&a, &x, 2);
        let got = [p.user(0), p.user(1), p.item(0)];
        for (g, w) in got.iter().zip(&want) {
            for (a, b) in g.iter().zip(w) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn random_graph_matches_dense_and_isolated_nodes_are_zero() {
        let train = vec![vec![0u32, 2, 3], vec![], vec![1, 3], vec![0]];
        let (m, n, d) = (4, 5, 3);
        let g = NormalizedGraph::from_train(m, n, &train);
        let vals: Vec<f64> = (0..(m + n) * d)
            .map(|k| ((k * 37 % 11) as f64 - 5.0) / 3.0)
            .collect();
        let e = Embeddings::from_parts(m, n, d, vals[..m * d].to_vec(), vals[m * d..].to_vec())
            .unwrap();
        let p = g.propagate(&e, 3).unwrap();
        let a = dense_adjacency(m, n, &train);
        let x: Vec<Vec<f64>> = vals.chunks(d).map(<[f64]>::to_vec).collect();
        let want = dense_propagate(&a, &x, 3);
        for r in 0..m + n {
            let got = if r < m { p.user(r) } else { p.item(r - m) };
            for k in 0..d {
                assert!((got[k] - want[r][k]).abs() < 1e-12);
            }
        }
        // user 1 and item 4 are isolated: only the layer-0 term survives.
        for k in 0..d {
            assert!((p.user(1)[k] - e.user(1)[k] / 4.0).abs() < 1e-12);
            assert!((p.item(4)[k] - e.item(4)[k] / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let g = NormalizedGraph::from_train(2, 2, &[vec![0], vec![1]]);
        let e = Embeddings::<f32>::zeros(3, 2, 2);
        assert!(matches!(
            g.propagate(&e, 1),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
