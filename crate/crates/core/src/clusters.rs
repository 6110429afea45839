//! Covariate clusters read off the fused auxiliary variables, the correctly
//! clustered proportion, and similarity-matrix builders.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::SimilarityMatrix;
use crate::simgen::Partition;
use crate::solver::{AdmmState, FitResult};

/// Edges and blocks of a single component. Indices are 0-based; edges are
/// `(j, k)` with `j < k`, sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentGraph {
    pub edges: Vec<(usize, usize)>,
    /// Connected components of the edge set, each sorted, ordered by their
    /// smallest member.
    pub blocks: Partition,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterGraph {
    pub p: usize,
    pub components: Vec<ComponentGraph>,
}

impl ComponentGraph {
    pub fn from_edges(p: usize, mut edges: Vec<(usize, usize)>) -> Self {
        for e in edges.iter_mut() {
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let mut parent: Vec<usize> = (0..p).collect();
        fn find(parent: &mut [usize], mut a: usize) -> usize {
            while parent[a] != a {
                parent[a] = parent[parent[a]];
                a = parent[a];
            }
            a
        }
        for &(j, k) in &edges {
            let (a, b) = (find(&mut parent, j), find(&mut parent, k));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        let mut slot = vec![usize::MAX; p];
        for j in 0..p {
            let root = find(&mut parent, j);
            if slot[root] == usize::MAX {
                slot[root] = blocks.len();
                blocks.push(Vec::new());
            }
            blocks[slot[root]].push(j);
        }
        Self { edges, blocks }
    }
}

/// Edge `(j, k)` in component `h` iff the stored `z[j,k,h] == z[k,j,h]`.
pub fn from_state(state: &AdmmState) -> ClusterGraph {
    let p = state.z.first().map_or(0, |z| z.nrows());
    let components = state
        .z
        .iter()
        .map(|z| {
            let mut edges = Vec::new();
            for j in 0..p {
                for k in (j + 1)..p {
                    if z[(j, k)] == z[(k, j)] {
                        edges.push((j, k));
                    }
                }
            }
            ComponentGraph::from_edges(p, edges)
        })
        .collect();
    ClusterGraph { p, components }
}

pub fn extract_clusters(result: &FitResult) -> ClusterGraph {
    from_state(&result.state)
}

/// Proportion of covariates placed in the matching block under the
/// maximum-overlap one-to-one assignment of true blocks to estimated blocks.
pub fn ccp(estimated: &Partition, truth: &Partition) -> Result<f64> {
    let p = check_cover(truth, None)?;
    check_cover(estimated, Some(p))?;
    let mut block_of = vec![0; p];
    for (b, block) in estimated.iter().enumerate() {
        for &j in block {
            block_of[j] = b;
        }
    }
    let overlap: Vec<Vec<i64>> = truth
        .iter()
        .map(|block| {
            let mut row = vec![0i64; estimated.len()];
            for &j in block {
                row[block_of[j]] += 1;
            }
            row
        })
        .collect();
    let matched = if truth.len() <= 8 {
        exhaustive_assignment(&overlap)
    } else {
        hungarian_assignment(&overlap)
    };
    Ok(matched as f64 / p as f64)
}

fn check_cover(partition: &Partition, expect: Option<usize>) -> Result<usize> {
    let p: usize = partition.iter().map(Vec::len).sum();
    if let Some(want) = expect {
        if p != want {
            return Err(Error::Dimension(format!("partitions cover {want} and {p} covariates")));
        }
    }
    let mut seen = vec![false; p];
    for &j in partition.iter().flatten() {
        if j >= p || seen[j] {
            return Err(Error::Domain(format!(
                "partition does not cover 0..{p} exactly once (index {j})"
            )));
        }
        seen[j] = true;
    }
    Ok(p)
}

fn exhaustive_assignment(overlap: &[Vec<i64>]) -> i64 {
    fn search(row: usize, overlap: &[Vec<i64>], used: &mut Vec<bool>) -> i64 {
        if row == overlap.len() {
            return 0;
        }
        // leaving this true block unmatched
        let mut best = search(row + 1, overlap, used);
        for (b, &count) in overlap[row].iter().enumerate() {
            if count > 0 && !used[b] {
                used[b] = true;
                best = best.max(count + search(row + 1, overlap, used));
                used[b] = false;
            }
        }
        best
    }
    let width = overlap.first().map_or(0, Vec::len);
    search(0, overlap, &mut vec![false; width])
}

/// Maximum-weight assignment by the shortest-augmenting-path form of the
/// Hungarian method on the padded square cost matrix `-overlap`.
fn hungarian_assignment(overlap: &[Vec<i64>]) -> i64 {
    let n = overlap.len().max(overlap.first().map_or(0, Vec::len));
    let cost = |i: usize, j: usize| -> i64 {
        -overlap.get(i).and_then(|row| row.get(j)).copied().unwrap_or(0)
    };
    // 1-based potentials; column 0 is a sentinel
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
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
            }
            for j in 0..=n {
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
        while j0 != 0 {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
        }
    }
    (1..=n).map(|j| -cost(owner[j] - 1, j - 1)).sum()
}

/// Cosine similarity of the design columns, negatives clamped to zero and the
/// diagonal zeroed.
pub fn cosine_similarity_matrix(design: &DMatrix<f64>) -> Result<SimilarityMatrix> {
    let p = design.ncols();
    let norms: Vec<f64> = design.column_iter().map(|c| c.norm()).collect();
    if let Some(j) = norms.iter().position(|&n| n == 0.0 || !n.is_finite()) {
        return Err(Error::Domain(format!(
            "covariate column {} has zero or non-finite norm",
            j + 1
        )));
    }
    let gram = design.transpose() * design;
    let entries = DMatrix::from_fn(p, p, |j, k| {
        if j == k {
            0.0
        } else {
            let s = (gram[(j, k)] / (norms[j] * norms[k])).clamp(0.0, 1.0);
            // symmetrize exactly
            if j < k {
                s
            } else {
                (gram[(k, j)] / (norms[k] * norms[j])).clamp(0.0, 1.0)
            }
        }
    });
    SimilarityMatrix::new(entries)
}

pub fn constant_similarity_matrix(p: usize, value: f64) -> Result<SimilarityMatrix> {
    if p == 0 {
        return Err(Error::Domain("similarity matrix needs p >= 1".into()));
    }
    SimilarityMatrix::with_zeroed_diagonal(DMatrix::from_element(p, p, value))
}

/// CSV edge list `component,j,k` (1-based, ascending), followed by block
/// membership as `# block,<component>,<space-separated members>` lines.
pub fn export_graph(graph: &ClusterGraph) -> String {
    let mut out = String::from("component,j,k\n");
    for (h, comp) in graph.components.iter().enumerate() {
        for &(j, k) in &comp.edges {
            writeln!(out, "{},{},{}", h + 1, j + 1, k + 1).unwrap();
        }
    }
    for (h, comp) in graph.components.iter().enumerate() {
        for block in comp.blocks.iter().filter(|b| b.len() > 1) {
            let members: Vec<String> = block.iter().map(|j| (j + 1).to_string()).collect();
            writeln!(out, "# block,{},{}", h + 1, members.join(" ")).unwrap();
        }
    }
    out
}

/// Inverse of [`export_graph`]. Blocks are rebuilt from the edges; `p` and
/// the number of components must be supplied since an edge-free graph does
/// not carry them.
pub fn parse_graph(text: &str, p: usize, n_components: usize) -> Result<ClusterGraph> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "component,j,k")) => {}
        _ => return Err(Error::Format("edge list must start with 'component,j,k'".into())),
    }
    let mut edges = vec![Vec::new(); n_components];
    let bad = |line: usize, msg: String| Error::Format(format!("line {}: {msg}", line + 1));
    for (no, line) in lines {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<usize> = line
            .split(',')
            .map(|f| f.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(no, e.to_string()))?;
        let [h, j, k] = fields[..] else {
            return Err(bad(no, format!("expected 3 fields, got {}", fields.len())));
        };
        if h == 0 || h > n_components || j == 0 || j > p || k == 0 || k > p || j == k {
            return Err(bad(no, format!("edge {h},{j},{k} out of range")));
        }
        edges[h - 1].push((j - 1, k - 1));
    }
    Ok(ClusterGraph {
        p,
        components: edges.into_iter().map(|e| ComponentGraph::from_edges(p, e)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_blocks() -> Partition {
        vec![(0..5).collect(), (5..10).collect()]
    }

    fn singletons(p: usize) -> Partition {
        (0..p).map(|j| vec![j]).collect()
    }

    #[test]
    fn transitive_blocks() {
        let mut z = DMatrix::from_fn(5, 5, |j, k| (j * 5 + k) as f64);
        z[(1, 0)] = z[(0, 1)];
        z[(2, 1)] = z[(1, 2)];
        let state = AdmmState { z: vec![z], r: vec![DMatrix::zeros(5, 5)] };
        let g = from_state(&state);
        assert_eq!(g.components[0].edges, vec![(0, 1), (1, 2)]);
        assert_eq!(g.components[0].blocks, vec![vec![0, 1, 2], vec![3], vec![4]]);
    }

    #[test]
    fn no_edges_gives_singletons() {
        let z = DMatrix::from_fn(4, 4, |j, k| (j * 4 + k) as f64);
        let g = from_state(&AdmmState { z: vec![z.clone(), z], r: vec![] });
        for c in &g.components {
            assert!(c.edges.is_empty());
            assert_eq!(c.blocks, singletons(4));
        }
    }

    #[test]
    fn ccp_examples() {
        assert_eq!(ccp(&two_blocks(), &two_blocks()).unwrap(), 1.0);
        assert_eq!(ccp(&singletons(10), &two_blocks()).unwrap(), 0.2);
        let est = vec![(0..4).collect(), (4..10).collect()];
        assert_eq!(ccp(&est, &two_blocks()).unwrap(), 0.9);
    }

    #[test]
    fn ccp_rejects_mismatched_cover() {
        assert!(ccp(&singletons(9), &two_blocks()).is_err());
        assert!(ccp(&vec![vec![0, 0]], &vec![vec![0, 1]]).is_err());
    }

    #[test]
    fn hungarian_agrees_with_exhaustive() {
        let overlap = vec![vec![3, 1, 0], vec![2, 2, 0], vec![0, 1, 1], vec![1, 0, 4]];
        assert_eq!(exhaustive_assignment(&overlap), hungarian_assignment(&overlap));
        assert_eq!(exhaustive_assignment(&overlap), 3 + 2 + 4);
    }

    #[test]
    fn hungarian_matches_exhaustive_on_random_tables() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let rows = rng.random_range(1..7);
            let cols = rng.random_range(1..7);
            let table: Vec<Vec<i64>> =
                (0..rows).map(|_| (0..cols).map(|_| rng.random_range(0..6)).collect()).collect();
            assert_eq!(exhaustive_assignment(&table), hungarian_assignment(&table), "{table:?}");
        }
    }

    #[test]
    fn ccp_many_true_blocks() {
        // 12 true pairs; estimate merges pairs 0 and 1
        let truth: Partition = (0..12).map(|b| vec![2 * b, 2 * b + 1]).collect();
        let mut est: Partition = vec![vec![0, 1, 2, 3]];
        est.extend((2..12).map(|b| vec![2 * b, 2 * b + 1]));
        assert_eq!(ccp(&est, &truth).unwrap(), 22.0 / 24.0);
    }

    fn arb_partition() -> impl Strategy<Value = Partition> {
        (1usize..12).prop_flat_map(|p| {
            proptest::collection::vec(0usize..4, p).prop_map(move |labels| {
                let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); 4];
                for (j, &l) in labels.iter().enumerate() {
                    blocks[l].push(j);
                }
                blocks.retain(|b| !b.is_empty());
                blocks
            })
        })
    }

    proptest! {
        #[test]
        fn ccp_self_is_one(part in arb_partition()) {
            prop_assert_eq!(ccp(&part, &part).unwrap(), 1.0);
        }

        #[test]
        fn ccp_ignores_block_order(a in arb_partition(), seed in 0u64..1000) {
            let p: usize = a.iter().map(Vec::len).sum();
            let b: Partition = (0..p).map(|j| vec![j]).collect::<Vec<_>>()
                .chunks(((seed as usize) % 3) + 1).map(|c| c.concat()).collect();
            let mut a_rev = a.clone();
            a_rev.reverse();
            let mut b_rev = b.clone();
            b_rev.reverse();
            let base = ccp(&a, &b).unwrap();
            prop_assert_eq!(base, ccp(&a_rev, &b).unwrap());
            prop_assert_eq!(base, ccp(&a, &b_rev).unwrap());
            prop_assert!((0.0..=1.0).contains(&base));
        }

        #[test]
        fn graph_round_trip(edge_bits in proptest::collection::vec(any::<bool>(), 2 * 15)) {
            let p = 6;
            let pairs: Vec<(usize, usize)> = (0..p).flat_map(|j| ((j + 1)..p).map(move |k| (j, k))).collect();
            let components = (0..2).map(|h| {
                let edges = pairs.iter().enumerate()
                    .filter(|(i, _)| edge_bits[h * 15 + i]).map(|(_, &e)| e).collect();
                ComponentGraph::from_edges(p, edges)
            }).collect();
            let graph = ClusterGraph { p, components };
            prop_assert_eq!(parse_graph(&export_graph(&graph), p, 2).unwrap(), graph);
        }
    }

    #[test]
    fn export_format() {
        let empty = ClusterGraph { p: 3, components: vec![ComponentGraph::from_edges(3, vec![])] };
        assert_eq!(export_graph(&empty), "component,j,k\n");
        let one =
            ClusterGraph { p: 3, components: vec![ComponentGraph::from_edges(3, vec![(1, 0)])] };
        assert_eq!(export_graph(&one), "component,j,k\n1,1,2\n# block,1,1 2\n");
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(parse_graph("j,k\n", 3, 1).is_err());
        assert!(parse_graph("component,j,k\n1,2\n", 3, 1).is_err());
        assert!(parse_graph("component,j,k\n1,1,9\n", 3, 1).is_err());
        assert!(parse_graph("component,j,k\n1,a,2\n", 3, 1).is_err());
    }

    #[test]
    fn cosine_examples() {
        let x = DMatrix::from_column_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 5.0]);
        let s = cosine_similarity_matrix(&x).unwrap();
        assert!((s.get(0, 1) - 1.0).abs() < 1e-15);
        assert_eq!(s.get(0, 2), 0.0);
        assert_eq!(s.get(0, 0), 0.0);
        let neg = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, -1.0, 0.1]);
        assert_eq!(cosine_similarity_matrix(&neg).unwrap().get(0, 1), 0.0);
    }

    #[test]
    fn cosine_matches_dot_products() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(40, 6, |_, _| if rng.random::<bool>() { 1.0 } else { 0.0 });
        let s = cosine_similarity_matrix(&x).unwrap();
        for j in 0..6 {
            for k in 0..6 {
                if j == k {
                    continue;
                }
                let (mut dot, mut nj, mut nk) = (0.0, 0.0, 0.0);
                for i in 0..40 {
                    dot += x[(i, j)] * x[(i, k)];
                    nj += x[(i, j)] * x[(i, j)];
                    nk += x[(i, k)] * x[(i, k)];
                }
                assert!((s.get(j, k) - dot / (nj.sqrt() * nk.sqrt())).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cosine_zero_column_names_it() {
        let x = DMatrix::from_column_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let err = cosine_similarity_matrix(&x).unwrap_err().to_string();
        assert!(err.contains("column 2"), "{err}");
    }

    #[test]
    fn constant_examples() {
        let s = constant_similarity_matrix(3, 0.5).unwrap();
        assert_eq!(s.get(0, 1), 0.5);
        assert_eq!(s.get(2, 2), 0.0);
        assert!(constant_similarity_matrix(3, 0.0).unwrap().entries().iter().all(|&v| v == 0.0));
        assert_eq!(constant_similarity_matrix(1, 0.5).unwrap().entries().shape(), (1, 1));
    }
}
