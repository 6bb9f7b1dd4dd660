//! Finite-difference verification of every differentiable operation, on
//! small shapes in 64-bit. Shared by the `gradcheck` command and the tests.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::Result;
use crate::graphnn::{
    bidirectional_transfer, feature_similarity_transfer, gcn_layer, inter_graph_transfer,
    intra_graph_reasoning, project, GraphConfig, GraphHeadParams, SemanticGraph, StaticMatrices,
};
use crate::model::{GraphMode, Model, ModelConfig};
use crate::numcore::{grad_check, GradCheckConfig, ParamStore, Tape, Tensor, Var};
use crate::rng::stream;
use crate::segnet::{backbone_forward, classify, register_classifier, upsample_bilinear, BackboneConfig};
use crate::synthdata::emit_embeddings;
use crate::taxonomy::{LabelTaxonomy, TransferScheme};

/// Names of the checked operations, in suite order.
pub const OPERATIONS: [&str; 20] = [
    "matmul",
    "softmax",
    "relu",
    "cross_entropy",
    "conv2d",
    "upsample_bilinear",
    "div_rows",
    "normalize_rows",
    "backbone_forward",
    "classify",
    "project",
    "gcn_layer",
    "intra_graph_reasoning",
    "feature_similarity_transfer",
    "inter_graph_transfer/handcraft",
    "inter_graph_transfer/learnable",
    "inter_graph_transfer/feature",
    "inter_graph_transfer/semantic",
    "bidirectional_transfer",
    "end_to_end",
];

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub operation: &'static str,
    pub seed: u64,
    pub max_rel: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub results: Vec<CheckResult>,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn pass(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    /// Worst relative error and number of seeds per operation.
    pub fn per_operation(&self) -> Vec<(&'static str, usize, f64, bool)> {
        OPERATIONS
            .iter()
            .filter_map(|&op| {
                let rs: Vec<&CheckResult> =
                    self.results.iter().filter(|r| r.operation == op).collect();
                if rs.is_empty() {
                    return None;
                }
                let worst = rs.iter().map(|r| r.max_rel).fold(0.0, f64::max);
                Some((op, rs.len(), worst, rs.iter().all(|r| r.pass)))
            })
            .collect()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<32}{:>6}{:>14}  result", "operation", "seeds", "max rel err");
        for (op, n, worst, pass) in self.per_operation() {
            let verdict = if pass { "ok" } else { "FAIL" };
            let _ = writeln!(out, "{op:<32}{n:>6}{worst:>14.3e}  {verdict}");
        }
        out
    }
}

fn rand_tensor(shape: &[usize], seed: u64, purpose: &str) -> Tensor<f64> {
    let mut r = stream(seed, purpose, 0);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect())
        .expect("nonempty shape")
}

fn rand_labels(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut r = stream(seed, "verify/labels", 0);
    (0..n).map(|_| r.gen_range(0..k)).collect()
}

/// Weighted sum of `out` with fixed random weights, scaled by `1/sqrt(n)` so
/// the probed value stays O(1) and finite-difference roundoff stays small.
fn probe(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let scale = 1.0 / (shape.iter().product::<usize>() as f64).sqrt();
    let r = tape.constant(rand_tensor(&shape, seed, "verify/probe").map(|v| v * scale));
    let m = tape.mul(out, r)?;
    Ok(tape.sum(m))
}

fn store_of(params: &[(&str, &[usize])], seed: u64) -> Result<ParamStore<f64>> {
    let mut s = ParamStore::new();
    for (name, shape) in params {
        s.insert(name, rand_tensor(shape, seed, name))?;
    }
    Ok(s)
}

fn tiny_graph() -> GraphConfig {
    GraphConfig {
        channels: 4,
        node_dim: 6,
        gcn_layers: 3,
    }
}

/// Graph head parameters with a random re-projection so its path is exercised.
fn head_store(taxonomy: &LabelTaxonomy, datasets: &[&str], seed: u64) -> Result<ParamStore<f64>> {
    let params = GraphHeadParams::new(tiny_graph());
    let mut store = ParamStore::new();
    params.register_shared(&mut store, seed)?;
    for ds in datasets {
        params.register_dataset(&mut store, ds, taxonomy.num_labels(ds)?, seed)?;
    }
    if let Some(p) = store.by_name_mut(GraphHeadParams::REPROJ) {
        p.value = rand_tensor(&[6, 4], seed, "verify/reproj").map(|v| 0.3 * v);
    }
    Ok(store)
}

/// Source `coarse` (7 nodes) and target `mid` (18 nodes) with transfer
/// parameters for both directions and node features `zs`, `zt`.
fn pair(taxonomy: &LabelTaxonomy, seed: u64) -> Result<(ParamStore<f64>, StaticMatrices)> {
    let params = GraphHeadParams::new(tiny_graph());
    let emb = emit_embeddings(taxonomy, seed, 8)?;
    let (s, t) = ("coarse", "mid");
    let (ns, nt) = (taxonomy.num_labels(s)?, taxonomy.num_labels(t)?);
    let mut store = store_of(&[("zs", &[ns, 6]), ("zt", &[nt, 6])], seed)?;
    params.register_transfer(&mut store, (s, ns), (t, nt), &TransferScheme::ALL, seed)?;
    params.register_transfer(&mut store, (t, nt), (s, ns), &TransferScheme::ALL, seed)?;
    // Learnable matrices away from their uniform start.
    for (a, b, shape) in [(s, t, [nt, ns]), (t, s, [ns, nt])] {
        if let Some(p) = store.by_name_mut(&GraphHeadParams::learnable(a, b)) {
            p.value = rand_tensor(&shape, seed, "verify/learnable").map(|v| 0.1 + 0.05 * v);
        }
    }
    let edges = vec![(s.to_string(), t.to_string()), (t.to_string(), s.to_string())];
    let statics = StaticMatrices::build(taxonomy, Some(&emb), &edges, &TransferScheme::ALL)?;
    Ok((store, statics))
}

fn graphs(
    tape: &mut Tape<f64>,
    store: &ParamStore<f64>,
    statics: &StaticMatrices,
) -> Result<(SemanticGraph, SemanticGraph)> {
    let mut mk = |id: &str, name: &str| -> Result<SemanticGraph> {
        Ok(SemanticGraph {
            nodes: tape.param_named(store, name)?,
            adjacency: statics.adjacency_var(tape, id)?,
            dataset_id: id.to_string(),
        })
    };
    Ok((mk("coarse", "zs")?, mk("mid", "zt")?))
}

fn small_model(mode: GraphMode) -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            widths: vec![3, 4],
            convs_per_stage: 1,
            kernel: 3,
            output_stride: 2,
            in_channels: 3,
        },
        graph: GraphConfig {
            channels: 4,
            node_dim: 5,
            gcn_layers: 3,
        },
        mode,
        heads: vec!["coarse".into(), "fine".into()],
    }
}

fn check_operation(
    op: &'static str,
    seed: u64,
    taxonomy: &LabelTaxonomy,
    cfg: &GradCheckConfig,
) -> Result<f64> {
    let rep = match op {
        "matmul" => {
            let mut s = store_of(&[("a", &[4, 5]), ("b", &[5, 3])], seed)?;
            grad_check(&mut s, |t, s| {
                let (a, b) = (t.param_named(s, "a")?, t.param_named(s, "b")?);
                let y = t.matmul(a, b)?;
                probe(t, y, seed)
            }, cfg)?
        }
        "softmax" => {
            let mut s = store_of(&[("x", &[4, 6])], seed)?;
            grad_check(&mut s, |t, s| {
                let x = t.param_named(s, "x")?;
                let rows = t.softmax(x, 1)?;
                let cols = t.softmax(x, 0)?;
                let (a, b) = (probe(t, rows, seed)?, probe(t, cols, seed + 1)?);
                t.add(a, b)
            }, cfg)?
        }
        "relu" => {
            let mut s = store_of(&[("x", &[5, 6])], seed)?;
            grad_check(&mut s, |t, s| {
                let x = t.param_named(s, "x")?;
                let y = t.relu(x);
                probe(t, y, seed)
            }, cfg)?
        }
        "cross_entropy" => {
            let mut s = store_of(&[("x", &[12, 5])], seed)?;
            let labels = rand_labels(12, 5, seed);
            grad_check(&mut s, |t, s| {
                let x = t.param_named(s, "x")?;
                t.cross_entropy(x, &labels, None)
            }, cfg)?
        }
        "conv2d" => {
            let mut s = store_of(&[("x", &[6, 6, 3]), ("k", &[3, 3, 3, 4])], seed)?;
            grad_check(&mut s, |t, s| {
                let (x, k) = (t.param_named(s, "x")?, t.param_named(s, "k")?);
                let same = t.conv2d(x, k, 1, 1)?;
                let down = t.conv2d(x, k, 2, 1)?;
                let (a, b) = (probe(t, same, seed)?, probe(t, down, seed + 1)?);
                t.add(a, b)
            }, cfg)?
        }
        "upsample_bilinear" => {
            let mut s = store_of(&[("x", &[3, 4, 2])], seed)?;
            grad_check(&mut s, |t, s| {
                let x = t.param_named(s, "x")?;
                let y = upsample_bilinear(t, x, 7, 8)?;
                probe(t, y, seed)
            }, cfg)?
        }
        "div_rows" => {
            let mut s = store_of(&[("a", &[4, 3]), ("d", &[4])], seed)?;
            if let Some(p) = s.by_name_mut("d") {
                p.value = p.value.map(|v| 1.5 + v);
            }
            grad_check(&mut s, |t, s| {
                let (a, d) = (t.param_named(s, "a")?, t.param_named(s, "d")?);
                let y = t.div_rows(a, d, 1e-6)?;
                probe(t, y, seed)
            }, cfg)?
        }
        "normalize_rows" => {
            let mut s = store_of(&[("x", &[4, 5])], seed)?;
            grad_check(&mut s, |t, s| {
                let x = t.param_named(s, "x")?;
                let y = t.normalize_rows(x)?;
                probe(t, y, seed)
            }, cfg)?
        }
        "backbone_forward" => {
            let bb = small_model(GraphMode::None).backbone;
            let mut s = store_of(&[("image", &[8, 8, 3])], seed)?;
            bb.register(&mut s, seed)?;
            for p in s.iter_mut().filter(|p| p.name.ends_with(".bias")) {
                p.value = rand_tensor(p.value.shape(), seed, &p.name).map(|v| 0.1 * v);
            }
            grad_check(&mut s, |t, s| {
                let x = t.param_named(s, "image")?;
                let y = backbone_forward(t, s, &bb, x)?;
                probe(t, y, seed)
            }, cfg)?
        }
        "classify" => {
            let mut s = store_of(&[("features", &[4, 4, 4])], seed)?;
            register_classifier(&mut s, "coarse", 4, 7, seed)?;
            let labels = rand_labels(16, 7, seed);
            grad_check(&mut s, |t, s| {
                let x = t.param_named(s, "features")?;
                let logits = classify(t, s, x, "coarse")?;
                let flat = t.reshape(logits, &[16, 7])?;
                t.cross_entropy(flat, &labels, None)
            }, cfg)?
        }
        "project" => {
            let mut s = head_store(taxonomy, &["coarse"], seed)?;
            s.insert("x", rand_tensor(&[4, 4, 4], seed, "verify/x"))?;
            let adj = StaticMatrices::build(taxonomy, None, &[], &[])?;
            grad_check(&mut s, |t, s| {
                let x = t.param_named(s, "x")?;
                let a = adj.adjacency_var(t, "coarse")?;
                let (g, q) = project(t, s, x, "coarse", a)?;
                let (lz, lq) = (probe(t, g.nodes, seed)?, probe(t, q.values, seed + 1)?);
                t.add(lz, lq)
            }, cfg)?
        }
        "gcn_layer" => {
            let mut s = store_of(&[("z", &[18, 6]), ("w", &[6, 6])], seed)?;
            let adj = StaticMatrices::build(taxonomy, None, &[], &[])?;
            grad_check(&mut s, |t, s| {
                let (z, w) = (t.param_named(s, "z")?, t.param_named(s, "w")?);
                let a = adj.adjacency_var(t, "mid")?;
                let y = gcn_layer(t, z, a, w)?;
                probe(t, y, seed)
            }, cfg)?
        }
        "intra_graph_reasoning" => {
            let params = GraphHeadParams::new(tiny_graph());
            let mut s = head_store(taxonomy, &["coarse"], seed)?;
            s.insert("x", rand_tensor(&[8, 8, 4], seed, "verify/x"))?;
            let adj = StaticMatrices::build(taxonomy, None, &[], &[])?;
            grad_check(&mut s, |t, s| {
                let x = t.param_named(s, "x")?;
                let a = adj.adjacency_var(t, "coarse")?;
                let (y, _, _) = intra_graph_reasoning(t, s, &params, x, "coarse", a)?;
                probe(t, y, seed)
            }, cfg)?
        }
        "feature_similarity_transfer" => {
            let mut s = store_of(&[("zs", &[7, 6]), ("zt", &[20, 6])], seed)?;
            grad_check(&mut s, |t, s| {
                let (zs, zt) = (t.param_named(s, "zs")?, t.param_named(s, "zt")?);
                let a = feature_similarity_transfer(t, zs, zt)?;
                probe(t, a, seed)
            }, cfg)?
        }
        "bidirectional_transfer" => {
            let (mut s, statics) = pair(taxonomy, seed)?;
            let schemes = [TransferScheme::Feature, TransferScheme::Semantic];
            grad_check(&mut s, |t, s| {
                let (gs, gt) = graphs(t, s, &statics)?;
                let (os, ot) = bidirectional_transfer(t, s, &statics, &gs, &gt, &schemes)?;
                let (a, b) = (probe(t, os.nodes, seed)?, probe(t, ot.nodes, seed + 1)?);
                t.add(a, b)
            }, cfg)?
        }
        "end_to_end" => {
            let emb = emit_embeddings(taxonomy, seed, 8)?;
            let transfer = GraphMode::Transfer {
                edges: vec![("fine".into(), "coarse".into()), ("coarse".into(), "fine".into())],
                schemes: vec![TransferScheme::Feature, TransferScheme::Semantic],
            };
            let mut worst = 0.0f64;
            for (mode, head) in [(GraphMode::Intra, "fine"), (transfer, "coarse")] {
                let mut m = Model::<f64>::new(small_model(mode), taxonomy, Some(&emb), seed)?;
                if let Some(p) = m.store.by_name_mut(GraphHeadParams::REPROJ) {
                    p.value = rand_tensor(&[5, 4], seed, "verify/reproj");
                }
                let k = taxonomy.num_labels(head)?;
                let img = rand_tensor(&[8, 8, 3], seed, "verify/image");
                let labels = rand_labels(64, k, seed);
                let net = m.network.clone();
                let rep = grad_check(&mut m.store, |t, s| {
                    let i = t.constant(img.clone());
                    let logits = net.forward(t, s, i, head)?;
                    let flat = t.reshape(logits, &[64, k])?;
                    t.cross_entropy(flat, &labels, None)
                }, cfg)?;
                worst = worst.max(rep.max_rel());
            }
            return Ok(worst);
        }
        _ => {
            let scheme = match op.strip_prefix("inter_graph_transfer/") {
                Some("handcraft") => TransferScheme::Handcraft,
                Some("learnable") => TransferScheme::Learnable,
                Some("feature") => TransferScheme::Feature,
                Some("semantic") => TransferScheme::Semantic,
                _ => unreachable!("operation list and dispatch agree"),
            };
            let (mut s, statics) = pair(taxonomy, seed)?;
            grad_check(&mut s, |t, s| {
                let (gs, gt) = graphs(t, s, &statics)?;
                let out = inter_graph_transfer(t, s, &statics, &gt, &gs, &[scheme])?;
                probe(t, out.nodes, seed)
            }, cfg)?
        }
    };
    Ok(rep.max_rel())
}

/// Run every operation's check once per seed.
pub fn gradient_suite(
    taxonomy: &LabelTaxonomy,
    seeds: &[u64],
    cfg: &GradCheckConfig,
) -> Result<SuiteReport> {
    let mut results = Vec::new();
    for &op in OPERATIONS.iter() {
        for &seed in seeds {
            let c = GradCheckConfig {
                seed,
                ..cfg.clone()
            };
            let max_rel = check_operation(op, seed, taxonomy, &c)?;
            results.push(CheckResult {
                operation: op,
                seed,
                max_rel,
                pass: max_rel <= cfg.tolerance,
            });
        }
    }
    Ok(SuiteReport {
        results,
        tolerance: cfg.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_one_seed() {
        let tax = LabelTaxonomy::shipped();
        let rep = gradient_suite(&tax, &[7, 8], &GradCheckConfig::default()).unwrap();
        assert_eq!(rep.results.len(), 2 * OPERATIONS.len());
        assert!(rep.pass(), "{}", rep.to_table());
    }
}
