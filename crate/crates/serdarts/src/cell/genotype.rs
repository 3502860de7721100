//! Discretized cell architectures: derivation from alpha tables, canonical
//! JSON serialization, and DOT rendering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::{AlphaTable, OpKind, NUM_OPS};
use crate::tensor::Element;

use super::{Alphas, CellTopology, NUM_INPUT_NODES};

/// The discrete cell pair: for each kind, the retained `(op, from, to)`
/// edges of every intermediate node, plus the node outputs concatenated into
/// the cell output.
///
/// Serialized as canonical JSON with sorted keys:
/// `{"concat":[...],"nodes":n,"normal":[[op,from,to],...],"reduce":[...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Genotype {
    pub concat: Vec<usize>,
    pub nodes: usize,
    pub normal: Vec<(OpKind, usize, usize)>,
    pub reduce: Vec<(OpKind, usize, usize)>,
}

impl Genotype {
    /// Check the structural invariants: every intermediate node keeps
    /// exactly two incoming edges, no edge carries `none`, sources precede
    /// destinations, and the concat set names valid intermediates.
    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 {
            return Err(Error::InvalidGenotype("nodes must be >= 1".into()));
        }
        for (kind, edges) in [("normal", &self.normal), ("reduce", &self.reduce)] {
            let mut incoming = vec![0usize; self.nodes];
            for &(op, from, to) in edges {
                if op == OpKind::None {
                    return Err(Error::InvalidGenotype(format!("{kind}: retained edge carries `none`")));
                }
                if to < NUM_INPUT_NODES || to >= NUM_INPUT_NODES + self.nodes {
                    return Err(Error::InvalidGenotype(format!("{kind}: destination {to} is not an intermediate node")));
                }
                if from >= to {
                    return Err(Error::InvalidGenotype(format!("{kind}: edge {from} -> {to} violates DAG order")));
                }
                incoming[to - NUM_INPUT_NODES] += 1;
            }
            for (j, &n) in incoming.iter().enumerate() {
                if n != 2 {
                    return Err(Error::InvalidGenotype(format!(
                        "{kind}: node {} has {n} retained edges, expected 2",
                        NUM_INPUT_NODES + j
                    )));
                }
            }
        }
        if self.concat.is_empty() {
            return Err(Error::InvalidGenotype("empty concat set".into()));
        }
        for &c in &self.concat {
            if c < NUM_INPUT_NODES || c >= NUM_INPUT_NODES + self.nodes {
                return Err(Error::InvalidGenotype(format!("concat names non-intermediate node {c}")));
            }
        }
        Ok(())
    }
}

/// Select the discrete architecture from the alpha tables: per edge the
/// highest-softmax-weight candidate excluding `none`; per intermediate node
/// the two incoming edges with the largest chosen-op weights. Ties break
/// toward the lower candidate index, then the lower source node.
pub fn derive_genotype<S: Element>(alphas: &Alphas<S>) -> Result<Genotype> {
    let nodes = infer_nodes(alphas.normal.num_edges)?;
    let topology = CellTopology::new(nodes);
    Ok(Genotype {
        concat: (NUM_INPUT_NODES..NUM_INPUT_NODES + nodes).collect(),
        nodes,
        normal: derive_cell(&alphas.normal, topology)?,
        reduce: derive_cell(&alphas.reduce, topology)?,
    })
}

/// Invert `num_edges = sum_{j<n}(2+j) = n(n+3)/2`.
fn infer_nodes(num_edges: usize) -> Result<usize> {
    let mut n = 0;
    let mut total = 0;
    while total < num_edges {
        total += NUM_INPUT_NODES + n;
        n += 1;
    }
    if total != num_edges {
        return Err(Error::invalid("derive_genotype", format!("{num_edges} edges matches no node count")));
    }
    Ok(n)
}

fn derive_cell<S: Element>(
    table: &AlphaTable<S>,
    topology: CellTopology,
) -> Result<Vec<(OpKind, usize, usize)>> {
    let weights = crate::tensor::no_grad(|| table.weights())?;
    let wv = weights.to_vec();
    if wv.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "derive_genotype: alpha table".into() });
    }

    let mut out = Vec::new();
    for j in 0..topology.num_intermediate {
        let to = NUM_INPUT_NODES + j;
        // (weight of best non-none op, best op, from)
        let mut candidates: Vec<(f64, OpKind, usize)> = (0..to)
            .map(|from| {
                let row = topology.edge_row(from, to);
                let mut best_k = usize::MAX;
                let mut best_w = f64::NEG_INFINITY;
                for (k, kind) in OpKind::ALL.iter().enumerate() {
                    if *kind == OpKind::None {
                        continue;
                    }
                    let w = Element::to_f64(wv[row * NUM_OPS + k]);
                    // strictly greater: lower candidate index wins ties
                    if w > best_w {
                        best_w = w;
                        best_k = k;
                    }
                }
                (best_w, OpKind::ALL[best_k], from)
            })
            .collect();
        // stable sort: equal weights keep ascending-from order
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut kept: Vec<(OpKind, usize, usize)> =
            candidates.iter().take(2).map(|&(_, op, from)| (op, from, to)).collect();
        kept.sort_by_key(|&(_, from, _)| from);
        out.extend(kept);
    }
    Ok(out)
}

/// Canonical JSON bytes (sorted keys, fixed field order, trailing newline).
/// Byte-stable across runs for equal genotypes.
pub fn export_genotype(g: &Genotype) -> Result<Vec<u8>> {
    g.validate()?;
    let mut bytes = serde_json::to_vec(g)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Parse and validate genotype JSON.
pub fn import_genotype(bytes: &[u8]) -> Result<Genotype> {
    let g: Genotype = serde_json::from_slice(bytes)?;
    g.validate()?;
    Ok(g)
}

fn node_label(id: usize) -> String {
    if id < NUM_INPUT_NODES {
        id.to_string()
    } else {
        format!("n{id}")
    }
}

/// DOT rendering: one digraph per cell kind, inputs labelled "0"/"1",
/// intermediates "n2".., edges labelled with op names.
pub fn genotype_dot(g: &Genotype) -> String {
    let mut out = String::new();
    for (name, edges) in [("normal", &g.normal), ("reduce", &g.reduce)] {
        out.push_str(&format!("digraph {name} {{\n"));
        out.push_str("  rankdir=LR;\n");
        for id in 0..NUM_INPUT_NODES + g.nodes {
            out.push_str(&format!("  \"{}\";\n", node_label(id)));
        }
        for &(op, from, to) in edges.iter() {
            out.push_str(&format!(
                "  \"{}\" -> \"{}\" [label=\"{}\"];\n",
                node_label(from),
                node_label(to),
                op.name()
            ));
        }
        out.push_str("}\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use crate::search::alpha_init;
    use crate::tensor::Tensor;

    fn uniform_alphas(nodes: usize) -> Alphas<f64> {
        let topology = CellTopology::new(nodes);
        let a = Alphas {
            normal: alpha_init(&mut RngState::new(0), topology.num_edges()).unwrap(),
            reduce: alpha_init(&mut RngState::new(1), topology.num_edges()).unwrap(),
        };
        let zeros = vec![0.0; topology.num_edges() * NUM_OPS];
        a.normal.table.set_data(&zeros);
        a.reduce.table.set_data(&zeros);
        a
    }

    #[test]
    fn argmax_row_selection() {
        let alphas = uniform_alphas(1);
        // one edge row... nodes=1 has 2 edges; set row 0 to favour avg_pool
        let mut data = vec![0.0; 2 * NUM_OPS];
        data[..NUM_OPS].copy_from_slice(&[0.1, 2.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        alphas.normal.table.set_data(&data);
        let g = derive_genotype(&alphas).unwrap();
        assert_eq!(g.normal[0], (OpKind::AvgPool3x3, 0, 2));
    }

    #[test]
    fn none_is_excluded_from_selection() {
        let alphas = uniform_alphas(1);
        let mut data = vec![0.0; 2 * NUM_OPS];
        // max weight on `none` (index 7); second largest is skip (index 6)
        data[..NUM_OPS].copy_from_slice(&[-1.0, -1.0, -1.0, -1.0, -1.0, -1.0, 1.0, 5.0]);
        data[NUM_OPS..].copy_from_slice(&[-1.0, -1.0, -1.0, -1.0, -1.0, -1.0, 1.0, 5.0]);
        alphas.normal.table.set_data(&data);
        let g = derive_genotype(&alphas).unwrap();
        assert_eq!(g.normal[0].0, OpKind::SkipConnect);
        assert!(g.normal.iter().all(|&(op, _, _)| op != OpKind::None));
    }

    #[test]
    fn uniform_alpha_tie_break() {
        let g = derive_genotype(&uniform_alphas(4)).unwrap();
        assert_eq!(g.nodes, 4);
        assert_eq!(g.concat, vec![2, 3, 4, 5]);
        for j in 0..4 {
            let to = 2 + j;
            let edges: Vec<_> = g.normal.iter().filter(|&&(_, _, t)| t == to).collect();
            assert_eq!(edges.len(), 2);
            assert_eq!(edges[0], &(OpKind::MaxPool3x3, 0, to));
            assert_eq!(edges[1], &(OpKind::MaxPool3x3, 1, to));
        }
    }

    #[test]
    fn argmax_invariant_to_row_shift() {
        let mut rng = RngState::new(42);
        let topology = CellTopology::new(4);
        let alphas: Alphas<f64> = Alphas::init(topology, &mut rng).unwrap();
        let g1 = derive_genotype(&alphas).unwrap();
        // add a constant per row
        for table in [&alphas.normal.table, &alphas.reduce.table] {
            let mut v = table.to_vec();
            for (row, chunk) in v.chunks_mut(NUM_OPS).enumerate() {
                let c = 3.7 + row as f64;
                for x in chunk {
                    *x += c;
                }
            }
            table.set_data(&v);
        }
        let g2 = derive_genotype(&alphas).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn export_import_roundtrip_and_stability() {
        let mut rng = RngState::new(3);
        let topology = CellTopology::new(4);
        let alphas: Alphas<f64> = Alphas::init(topology, &mut rng).unwrap();
        let g = derive_genotype(&alphas).unwrap();
        let bytes = export_genotype(&g).unwrap();
        assert_eq!(bytes, export_genotype(&g).unwrap());
        let g2 = import_genotype(&bytes).unwrap();
        assert_eq!(g, g2);

        // canonical key order
        let text = String::from_utf8(bytes).unwrap();
        let (c, n) = (text.find("\"concat\"").unwrap(), text.find("\"nodes\"").unwrap());
        let (nm, r) = (text.find("\"normal\"").unwrap(), text.find("\"reduce\"").unwrap());
        assert!(c < n && n < nm && nm < r);
        // op names appear verbatim
        for &(op, _, _) in g.normal.iter() {
            assert!(text.contains(op.name()));
        }
    }

    #[test]
    fn import_rejects_bad_edges() {
        let good = derive_genotype(&uniform_alphas(2)).unwrap();
        let bytes = export_genotype(&good).unwrap();

        // from >= to
        let mut bad = good.clone();
        bad.normal[0].1 = 3;
        bad.normal[0].2 = 2;
        assert!(matches!(
            import_genotype(&export_bytes_unchecked(&bad)),
            Err(Error::InvalidGenotype(_))
        ));

        // unknown op name
        let text = String::from_utf8(bytes).unwrap().replace("max_pool_3x3", "conv_9x9");
        assert!(import_genotype(text.as_bytes()).is_err());

        // malformed json
        assert!(import_genotype(b"{not json").is_err());
    }

    fn export_bytes_unchecked(g: &Genotype) -> Vec<u8> {
        serde_json::to_vec(g).unwrap()
    }

    #[test]
    fn dot_rendering_names_nodes_and_ops() {
        let g = derive_genotype(&uniform_alphas(4)).unwrap();
        let dot = genotype_dot(&g);
        assert!(dot.contains("digraph normal {"));
        assert!(dot.contains("digraph reduce {"));
        assert!(dot.contains("\"n2\"") && dot.contains("\"n5\""));
        assert!(dot.contains("\"0\" -> \"n2\" [label=\"max_pool_3x3\"]"));
    }

    #[test]
    fn nonfinite_table_is_an_error() {
        let alphas = uniform_alphas(1);
        let mut v = alphas.normal.table.to_vec();
        v[0] = f64::NAN;
        alphas.normal.table.set_data(&v);
        assert!(matches!(derive_genotype(&alphas), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn validate_checks_concat_and_counts() {
        let mut g = derive_genotype(&uniform_alphas(2)).unwrap();
        g.concat = vec![9];
        assert!(g.validate().is_err());
        let mut g = derive_genotype(&uniform_alphas(2)).unwrap();
        g.normal.pop();
        assert!(g.validate().is_err());
    }

    #[test]
    fn unused_tensor_type_is_irrelevant() {
        // derive over f32 tables too
        let topology = CellTopology::new(2);
        let alphas: Alphas<f32> = Alphas {
            normal: alpha_init(&mut RngState::new(0), topology.num_edges()).unwrap(),
            reduce: alpha_init(&mut RngState::new(1), topology.num_edges()).unwrap(),
        };
        let _ = Tensor::<f32>::zeros(&[1]);
        assert!(derive_genotype(&alphas).is_ok());
    }
}
