// SPDX-License-Identifier: MIT OR Apache-2.0

//! Cosine distances, average-linkage clustering and norm tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::steering::SteeringVector;

/// Symmetric distance matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub labels: Vec<String>,
    pub entries: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    pub fn new(labels: Vec<String>, entries: Vec<Vec<f64>>) -> Result<Self> {
        let n = labels.len();
        if entries.len() != n || entries.iter().any(|r| r.len() != n) {
            return Err(Error::arg(format!("distance matrix must be {n}x{n}")));
        }
        for i in 0..n {
            if entries[i][i] != 0.0 {
                return Err(Error::arg(format!("diagonal entry for {} is not zero", labels[i])));
            }
            for j in 0..n {
                let d = entries[i][j];
                if !d.is_finite() || d < 0.0 {
                    return Err(Error::arg(format!(
                        "entry ({}, {}) = {d} is not a finite non-negative distance",
                        labels[i], labels[j]
                    )));
                }
                if d != entries[j][i] {
                    return Err(Error::arg(format!(
                        "matrix is not symmetric at ({}, {})",
                        labels[i], labels[j]
                    )));
                }
            }
        }
        Ok(Self { labels, entries })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        Some(self.entries[i][j])
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let to_io = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
        let mut w = csv::Writer::from_path(path).map_err(to_io)?;
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header).map_err(to_io)?;
        for (l, row) in self.labels.iter().zip(&self.entries) {
            let mut rec = vec![l.clone()];
            rec.extend(row.iter().map(|d| format!("{d:.6}")));
            w.write_record(&rec).map_err(to_io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// `1 − cos(v_a, v_b)` for every pair, labels in key order.
pub fn cosine_distance_matrix(vectors: &BTreeMap<String, SteeringVector>) -> Result<DistanceMatrix> {
    let mut first: Option<&SteeringVector> = None;
    let mut norms = Vec::with_capacity(vectors.len());
    for (lang, v) in vectors {
        if let Some(f) = first {
            if v.layer != f.layer || v.dim() != f.dim() {
                return Err(Error::arg(format!(
                    "vector for {lang} is layer {} dim {}, expected layer {} dim {}",
                    v.layer,
                    v.dim(),
                    f.layer,
                    f.dim()
                )));
            }
        } else {
            first = Some(v);
        }
        let n = v.l2_norm();
        if n == 0.0 {
            return Err(Error::arg(format!("steering vector for {lang} has zero norm")));
        }
        norms.push(n);
    }
    let vs: Vec<&SteeringVector> = vectors.values().collect();
    let n = vs.len();
    let mut entries = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let dot: f64 = vs[i]
                .values
                .iter()
                .zip(&vs[j].values)
                .map(|(&a, &b)| f64::from(a) * f64::from(b))
                .sum();
            let d = (1.0 - dot / (norms[i] * norms[j])).clamp(0.0, 2.0);
            entries[i][j] = d;
            entries[j][i] = d;
        }
    }
    DistanceMatrix::new(vectors.keys().cloned().collect(), entries)
}

/// One agglomeration step. Leaves are `0..L`; the cluster created by merge
/// `i` has id `L + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    /// Sorted leaf labels of the merged cluster.
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub labels: Vec<String>,
    pub merges: Vec<Merge>,
}

fn sorted_members(labels: &[String], leaves: &[usize]) -> Vec<String> {
    let mut m: Vec<String> = leaves.iter().map(|&i| labels[i].clone()).collect();
    m.sort();
    m
}

/// Average-linkage agglomerative clustering. The closest pair of clusters
/// merges first; exact ties go to the pair whose sorted member labels
/// compare lowest.
pub fn agglomerative_cluster(matrix: &DistanceMatrix) -> Result<Dendrogram> {
    let m = DistanceMatrix::new(matrix.labels.clone(), matrix.entries.clone())?;
    let n = m.len();
    if n < 2 {
        return Err(Error::arg("clustering needs at least two labels"));
    }
    // active clusters: (id, leaves, sorted labels); dist between active slots
    let mut ids: Vec<usize> = (0..n).collect();
    let mut leaves: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut keys: Vec<Vec<String>> = (0..n).map(|i| vec![m.labels[i].clone()]).collect();
    let mut dist = m.entries.clone();
    let mut merges = Vec::with_capacity(n - 1);
    while ids.len() > 1 {
        let mut best: Option<(usize, usize)> = None;
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                let (a, b) = if keys[i] <= keys[j] { (i, j) } else { (j, i) };
                best = Some(match best {
                    None => (a, b),
                    Some((x, y)) => {
                        let (d, e) = (dist[a][b], dist[x][y]);
                        if d < e || (d == e && (&keys[a], &keys[b]) < (&keys[x], &keys[y])) {
                            (a, b)
                        } else {
                            (x, y)
                        }
                    }
                });
            }
        }
        let (a, b) = best.expect("at least one pair");
        let d = dist[a][b];
        let (na, nb) = (leaves[a].len() as f64, leaves[b].len() as f64);
        let mut joined = leaves[a].clone();
        joined.extend(&leaves[b]);
        let members = sorted_members(&m.labels, &joined);
        merges.push(Merge {
            left: ids[a],
            right: ids[b],
            distance: d,
            members: members.clone(),
        });
        // Lance–Williams update for average linkage, written into slot a.
        for k in 0..ids.len() {
            if k != a && k != b {
                let v = (na * dist[k][a] + nb * dist[k][b]) / (na + nb);
                dist[k][a] = v;
                dist[a][k] = v;
            }
        }
        ids[a] = n + merges.len() - 1;
        leaves[a] = joined;
        keys[a] = members;
        ids.remove(b);
        leaves.remove(b);
        keys.remove(b);
        dist.remove(b);
        for row in &mut dist {
            row.remove(b);
        }
    }
    Ok(Dendrogram {
        labels: m.labels,
        merges,
    })
}

#[derive(Serialize)]
#[serde(untagged)]
enum TreeNode {
    Leaf { name: String },
    Node { distance: f64, children: Vec<TreeNode> },
}

impl Dendrogram {
    fn height(&self, id: usize) -> f64 {
        if id < self.labels.len() {
            0.0
        } else {
            self.merges[id - self.labels.len()].distance
        }
    }

    fn tree(&self, id: usize) -> TreeNode {
        let n = self.labels.len();
        if id < n {
            return TreeNode::Leaf {
                name: self.labels[id].clone(),
            };
        }
        let m = &self.merges[id - n];
        TreeNode::Node {
            distance: m.distance,
            children: vec![self.tree(m.left), self.tree(m.right)],
        }
    }

    fn root(&self) -> usize {
        self.labels.len() + self.merges.len() - 1
    }

    /// Nested `{"distance", "children"}` / `{"name"}` tree.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self.tree(self.root())).expect("tree serializes")
    }

    /// Newick string; branch lengths are height differences.
    pub fn to_newick(&self) -> String {
        let mut out = String::new();
        self.newick_into(self.root(), &mut out);
        out.push(';');
        out
    }

    fn newick_into(&self, id: usize, out: &mut String) {
        let n = self.labels.len();
        if id < n {
            out.push_str(&self.labels[id]);
            return;
        }
        let m = &self.merges[id - n];
        out.push('(');
        for (i, child) in [m.left, m.right].into_iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            self.newick_into(child, out);
            let _ = write!(out, ":{:.6}", m.distance - self.height(child));
        }
        out.push(')');
    }

    pub fn write_merges_csv(&self, path: &Path) -> Result<()> {
        let to_io = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
        let mut w = csv::Writer::from_path(path).map_err(to_io)?;
        w.write_record(["step", "left", "right", "distance", "members"]).map_err(to_io)?;
        for (i, m) in self.merges.iter().enumerate() {
            w.write_record([
                i.to_string(),
                m.left.to_string(),
                m.right.to_string(),
                format!("{:.6}", m.distance),
                m.members.join(" "),
            ])
            .map_err(to_io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormRow {
    pub language: String,
    pub norm: f64,
}

/// L2 norms, largest first; equal norms ordered by label.
pub fn norm_table(vectors: &BTreeMap<String, SteeringVector>) -> Vec<NormRow> {
    let mut rows: Vec<NormRow> = vectors
        .iter()
        .map(|(l, v)| NormRow {
            language: l.clone(),
            norm: v.l2_norm(),
        })
        .collect();
    rows.sort_by(|a, b| b.norm.total_cmp(&a.norm).then_with(|| a.language.cmp(&b.language)));
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::steering::{Pooling, VectorMeta};

    pub(crate) fn vector(values: Vec<f32>) -> SteeringVector {
        SteeringVector {
            layer: 1,
            values,
            meta: VectorMeta {
                model_id: String::new(),
                source_lang: "en".into(),
                target_lang: String::new(),
                task: String::new(),
                pooling: Pooling::Mean,
                n_samples: 1,
                seed: 0,
            },
        }
    }

    fn set(vs: &[(&str, Vec<f32>)]) -> BTreeMap<String, SteeringVector> {
        vs.iter().map(|(l, v)| (l.to_string(), vector(v.clone()))).collect()
    }

    #[test]
    fn cosine_extremes() {
        let m = cosine_distance_matrix(&set(&[
            ("a", vec![1.0, 0.0]),
            ("b", vec![2.0, 0.0]),
            ("c", vec![0.0, 3.0]),
            ("d", vec![-1.0, 0.0]),
        ]))
        .unwrap();
        assert_eq!(m.get("a", "b"), Some(0.0));
        assert_eq!(m.get("a", "c"), Some(1.0));
        assert_eq!(m.get("a", "d"), Some(2.0));
    }

    #[test]
    fn zero_vector_named() {
        let err = cosine_distance_matrix(&set(&[("a", vec![1.0]), ("zz", vec![0.0])])).unwrap_err();
        assert!(err.to_string().contains("zz"));
    }

    #[test]
    fn two_leaves() {
        let m = DistanceMatrix::new(vec!["a".into(), "b".into()], vec![vec![0.0, 0.3], vec![0.3, 0.0]])
            .unwrap();
        let d = agglomerative_cluster(&m).unwrap();
        assert_eq!(d.merges.len(), 1);
        assert_eq!(d.merges[0].distance, 0.3);
        assert_eq!(d.to_newick(), "(a:0.300000,b:0.300000);");
    }

    #[test]
    fn asymmetric_rejected() {
        let r = DistanceMatrix::new(vec!["a".into(), "b".into()], vec![vec![0.0, 0.3], vec![0.2, 0.0]]);
        assert!(matches!(r, Err(Error::Argument(_))));
    }

    #[test]
    fn four_points_by_hand() {
        // a-b close, c-d close; average of cross distances = 0.7
        let e = vec![
            vec![0.0, 0.1, 0.6, 0.8],
            vec![0.1, 0.0, 0.7, 0.7],
            vec![0.6, 0.7, 0.0, 0.2],
            vec![0.8, 0.7, 0.2, 0.0],
        ];
        let labels = ["a", "b", "c", "d"].map(String::from).to_vec();
        let d = agglomerative_cluster(&DistanceMatrix::new(labels, e).unwrap()).unwrap();
        assert_eq!((d.merges[0].left, d.merges[0].right), (0, 1));
        assert_eq!((d.merges[1].left, d.merges[1].right), (2, 3));
        assert!((d.merges[2].distance - 0.7).abs() < 1e-12);
        let json = d.to_json();
        assert_eq!(json["children"][0]["children"][0]["name"], "a");
    }

    #[test]
    fn norms_sorted() {
        let t = norm_table(&set(&[("z", vec![0.0, 0.0]), ("a", vec![3.0, 4.0]), ("b", vec![1.0, 0.0])]));
        assert_eq!(t[0].language, "a");
        assert_eq!(t[0].norm, 5.0);
        assert_eq!(t[2].norm, 0.0);
    }
}
