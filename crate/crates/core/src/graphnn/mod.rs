//! Graph head: pixel-to-node projection, graph convolution over a label
//! graph, transfer between label graphs, and re-projection onto pixels.
//!
//! Everything here records onto a [`Tape`], so the same code serves training
//! (f32) and gradient checking (f64).

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{dim_err, Error, Result};
use crate::numcore::{ParamStore, Real, Tape, Tensor, Var};
use crate::taxonomy::{
    build_adjacency, handcraft_transfer, semantic_transfer, LabelTaxonomy, TransferScheme,
    WordEmbeddingTable,
};


/// Lower bound on a node's total assignment mass when pooling.
pub const MASS_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GraphConfig {
    /// Channels of the feature map the head attaches to.
    pub channels: usize,
    /// Node feature width D.
    pub node_dim: usize,
    /// Stacked graph convolutions in intra-graph reasoning.
    pub gcn_layers: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            channels: 64,
            node_dim: 128,
            gcn_layers: 3,
        }
    }
}

/// Node features of one label graph, recorded on a tape.
#[derive(Clone, Debug)]
pub struct SemanticGraph {
    /// `N×D`.
    pub nodes: Var,
    /// Normalized adjacency, `N×N`.
    pub adjacency: Var,
    pub dataset_id: String,
}

/// Soft pixel-to-node assignment, `HW×N`, rows sum to one.
#[derive(Clone, Copy, Debug)]
pub struct AssignmentMatrix {
    pub values: Var,
}

/// Parameter naming and registration for the graph head.
///
/// The projection is per dataset (its width is the label count); node
/// embedding, graph convolutions and re-projection are shared.
#[derive(Clone, Debug)]
pub struct GraphHeadParams {
    pub config: GraphConfig,
}

impl GraphHeadParams {
    pub const EMBED: &'static str = "graph.embed";
    pub const REPROJ: &'static str = "graph.reproj";
    pub const POST_GCN: &'static str = "graph.post_gcn";

    pub fn new(config: GraphConfig) -> Self {
        GraphHeadParams { config }
    }

    pub fn proj(dataset: &str) -> String {
        format!("graph.proj/{dataset}")
    }

    pub fn gcn(layer: usize) -> String {
        format!("graph.gcn{layer}")
    }

    pub fn transfer(source: &str, target: &str, scheme: TransferScheme) -> String {
        format!("graph.transfer/{source}>{target}/{scheme}")
    }

    pub fn learnable(source: &str, target: &str) -> String {
        format!("graph.learnable/{source}>{target}")
    }

    /// Shared node embedding, graph convolutions and re-projection. The
    /// re-projection starts at zero so a fresh head leaves features unchanged.
    pub fn register_shared<T: Real>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        let (c, d) = (self.config.channels, self.config.node_dim);
        store.insert_uniform(Self::EMBED, &[c, d], c, seed)?;
        for l in 0..self.config.gcn_layers {
            store.insert_uniform(&Self::gcn(l), &[d, d], d, seed)?;
        }
        store.insert_zeros(Self::REPROJ, &[d, c])?;
        Ok(())
    }

    pub fn register_dataset<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        dataset: &str,
        num_labels: usize,
        seed: u64,
    ) -> Result<()> {
        let c = self.config.channels;
        store.insert_uniform(&Self::proj(dataset), &[c, num_labels], c, seed)?;
        Ok(())
    }

    /// Per-scheme transfer weights for one directed edge, plus the post-transfer
    /// graph convolution if it is not registered yet.
    pub fn register_transfer<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        source: (&str, usize),
        target: (&str, usize),
        schemes: &[TransferScheme],
        seed: u64,
    ) -> Result<()> {
        let d = self.config.node_dim;
        for &s in schemes {
            store.insert_uniform(&Self::transfer(source.0, target.0, s), &[d, d], d, seed)?;
            if s == TransferScheme::Learnable {
                let (ns, nt) = (source.1, target.1);
                let uniform = Tensor::full(&[nt, ns], T::lit(1.0 / ns as f64));
                store.insert(&Self::learnable(source.0, target.0), uniform)?;
            }
        }
        if store.by_name(Self::POST_GCN).is_none() {
            store.insert_uniform(Self::POST_GCN, &[d, d], d, seed)?;
        }
        Ok(())
    }
}

/// Fixed matrices needed by the graph head: per-dataset adjacencies and the
/// static (handcraft, semantic) transfer matrices per directed edge.
#[derive(Clone, Debug, Default)]
pub struct StaticMatrices {
    pub adjacency: BTreeMap<String, Tensor<f64>>,
    pub transfer: BTreeMap<(String, String, TransferScheme), Tensor<f64>>,
}

impl StaticMatrices {
    /// Adjacencies for every dataset, and static transfer matrices for the
    /// requested directed edges and schemes. `embeddings` is required only if
    /// the semantic scheme is requested.
    pub fn build(
        taxonomy: &LabelTaxonomy,
        embeddings: Option<&WordEmbeddingTable>,
        edges: &[(String, String)],
        schemes: &[TransferScheme],
    ) -> Result<Self> {
        let mut out = StaticMatrices::default();
        for id in taxonomy.dataset_ids() {
            out.adjacency
                .insert(id.to_string(), build_adjacency(taxonomy, id)?.values);
        }
        for (s, t) in edges {
            for &scheme in schemes {
                let m = match scheme {
                    TransferScheme::Handcraft => handcraft_transfer(taxonomy, s, t)?,
                    TransferScheme::Semantic => {
                        let emb = embeddings.ok_or_else(|| {
                            Error::Config("semantic transfer needs a word embedding table".into())
                        })?;
                        semantic_transfer(taxonomy, emb, s, t)?
                    }
                    _ => continue,
                };
                out.transfer.insert((s.clone(), t.clone(), scheme), m.values);
            }
        }
        Ok(out)
    }

    pub fn adjacency_var<T: Real>(&self, tape: &mut Tape<T>, dataset: &str) -> Result<Var> {
        let a = self
            .adjacency
            .get(dataset)
            .ok_or_else(|| Error::Config(format!("no adjacency for dataset {dataset}")))?;
        Ok(tape.constant(a.cast()))
    }
}

fn hwc(tape: &Tape<impl Real>, x: Var) -> Result<(usize, usize, usize)> {
    match tape.shape(x) {
        &[h, w, c] => Ok((h, w, c)),
        s => Err(dim_err!("feature map must be H×W×C, got {:?}", s)),
    }
}

/// Soft-assign pixels to the dataset's nodes and pool their features.
///
/// `Q = softmax_nodes(X·P)`, `Z = (Qᵀ X / mass) · E`.
pub fn project<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    dataset: &str,
    adjacency: Var,
) -> Result<(SemanticGraph, AssignmentMatrix)> {
    let (h, w, c) = hwc(tape, x)?;
    let flat = tape.reshape(x, &[h * w, c])?;
    let p = tape.param_named(store, &GraphHeadParams::proj(dataset))?;
    let scores = tape.matmul(flat, p)?;
    let q = tape.softmax(scores, 1)?;
    let qt = tape.transpose(q)?;
    let agg = tape.matmul(qt, flat)?;
    let mass = tape.sum_axis(q, 0)?;
    let pooled = tape.div_rows(agg, mass, T::lit(MASS_FLOOR))?;
    let e = tape.param_named(store, GraphHeadParams::EMBED)?;
    let nodes = tape.matmul(pooled, e)?;
    let n = tape.shape(nodes)[0];
    if tape.shape(adjacency) != [n, n] {
        return Err(dim_err!(
            "adjacency {:?} does not match {n} nodes of {dataset}",
            tape.shape(adjacency)
        ));
    }
    Ok((
        SemanticGraph {
            nodes,
            adjacency,
            dataset_id: dataset.to_string(),
        },
        AssignmentMatrix { values: q },
    ))
}

/// `relu(Â·Z·W)`.
pub fn gcn_layer<T: Real>(tape: &mut Tape<T>, z: Var, a: Var, w: Var) -> Result<Var> {
    tape.value(z).ensure_finite("graph node features")?;
    let az = tape.matmul(a, z)?;
    let azw = tape.matmul(az, w)?;
    Ok(tape.relu(azw))
}

/// Apply the stacked intra-graph convolutions.
pub fn evolve<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    layers: usize,
    graph: &SemanticGraph,
) -> Result<SemanticGraph> {
    let mut z = graph.nodes;
    for l in 0..layers {
        let w = tape.param_named(store, &GraphHeadParams::gcn(l))?;
        z = gcn_layer(tape, z, graph.adjacency, w)?;
    }
    Ok(SemanticGraph {
        nodes: z,
        ..graph.clone()
    })
}

/// `X + reshape(Q · (Z · R))`.
pub fn reproject<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    q: AssignmentMatrix,
    graph: &SemanticGraph,
) -> Result<Var> {
    let (h, w, c) = hwc(tape, x)?;
    let r = tape.param_named(store, GraphHeadParams::REPROJ)?;
    let zr = tape.matmul(graph.nodes, r)?;
    let back = tape.matmul(q.values, zr)?;
    let back = tape.reshape(back, &[h, w, c])?;
    tape.add(x, back)
}

/// Project, evolve and re-project with a residual connection. Returns the
/// enhanced map, the evolved graph and the assignment used.
pub fn intra_graph_reasoning<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    params: &GraphHeadParams,
    x: Var,
    dataset: &str,
    adjacency: Var,
) -> Result<(Var, SemanticGraph, AssignmentMatrix)> {
    let (graph, q) = project(tape, store, x, dataset, adjacency)?;
    let evolved = evolve(tape, store, params.config.gcn_layers, &graph)?;
    let out = reproject(tape, store, x, q, &evolved)?;
    Ok((out, evolved, q))
}

/// `a_ij = softmax_j(cos(z_t_i, z_s_j))`, with cosine against a zero vector
/// taken as 0. Shape `N_t×N_s`.
pub fn feature_similarity_transfer<T: Real>(
    tape: &mut Tape<T>,
    z_s: Var,
    z_t: Var,
) -> Result<Var> {
    let ds = tape.shape(z_s)[1..].to_vec();
    if tape.shape(z_t)[1..] != ds[..] {
        return Err(dim_err!(
            "feature similarity needs a common width, got {:?} and {:?}",
            tape.shape(z_s),
            tape.shape(z_t)
        ));
    }
    let us = tape.normalize_rows(z_s)?;
    let ut = tape.normalize_rows(z_t)?;
    let ust = tape.transpose(us)?;
    let cos = tape.matmul(ut, ust)?;
    tape.softmax(cos, 1)
}

fn transfer_matrix<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    statics: &StaticMatrices,
    source: &SemanticGraph,
    target: &SemanticGraph,
    scheme: TransferScheme,
) -> Result<Var> {
    let (s, t) = (&source.dataset_id, &target.dataset_id);
    match scheme {
        TransferScheme::Feature => feature_similarity_transfer(tape, source.nodes, target.nodes),
        TransferScheme::Learnable => tape.param_named(store, &GraphHeadParams::learnable(s, t)),
        _ => {
            let m = statics
                .transfer
                .get(&(s.clone(), t.clone(), scheme))
                .ok_or_else(|| Error::Config(format!("no {scheme} transfer matrix for {s}->{t}")))?;
            Ok(tape.constant(m.cast()))
        }
    }
}

/// `Σ_schemes relu(A_tr · Z_s · W_tr)`, the increment added to the target.
pub fn transfer_increment<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    statics: &StaticMatrices,
    target: &SemanticGraph,
    source: &SemanticGraph,
    schemes: &[TransferScheme],
) -> Result<Var> {
    if schemes.is_empty() {
        return Err(Error::Config("inter-graph transfer needs at least one scheme".into()));
    }
    let mut total: Option<Var> = None;
    for &scheme in schemes {
        let a = transfer_matrix(tape, store, statics, source, target, scheme)?;
        let w = tape.param_named(
            store,
            &GraphHeadParams::transfer(&source.dataset_id, &target.dataset_id, scheme),
        )?;
        let az = tape.matmul(a, source.nodes)?;
        let azw = tape.matmul(az, w)?;
        let msg = tape.relu(azw);
        total = Some(match total {
            None => msg,
            Some(t) => tape.add(t, msg)?,
        });
    }
    Ok(total.expect("nonempty schemes"))
}

/// `Z_t + Σ_schemes relu(A_tr · Z_s · W_tr)`; keeps the target's adjacency.
pub fn inter_graph_transfer<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    statics: &StaticMatrices,
    target: &SemanticGraph,
    source: &SemanticGraph,
    schemes: &[TransferScheme],
) -> Result<SemanticGraph> {
    let inc = transfer_increment(tape, store, statics, target, source, schemes)?;
    let nodes = tape.add(target.nodes, inc)?;
    Ok(SemanticGraph {
        nodes,
        ..target.clone()
    })
}

/// One round of simultaneous transfer along directed `edges` (pairs of
/// indices into `graphs`). Every increment is computed from the pre-transfer
/// node features; each graph that received anything then goes through the
/// shared post-transfer graph convolution. Graphs with no incoming edge are
/// returned unchanged.
pub fn transfer_round<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    statics: &StaticMatrices,
    graphs: &[SemanticGraph],
    edges: &[(usize, usize)],
    schemes: &[TransferScheme],
) -> Result<Vec<SemanticGraph>> {
    let mut incoming: BTreeMap<usize, Vec<Var>> = BTreeMap::new();
    for &(s, t) in edges {
        if s >= graphs.len() || t >= graphs.len() || s == t {
            return Err(Error::Config(format!("bad transfer edge {s}->{t}")));
        }
        let inc = transfer_increment(tape, store, statics, &graphs[t], &graphs[s], schemes)?;
        incoming.entry(t).or_default().push(inc);
    }
    let targets: BTreeSet<usize> = incoming.keys().copied().collect();
    let mut out = graphs.to_vec();
    for t in targets {
        let mut z = graphs[t].nodes;
        for inc in &incoming[&t] {
            z = tape.add(z, *inc)?;
        }
        let w = tape.param_named(store, GraphHeadParams::POST_GCN)?;
        out[t].nodes = gcn_layer(tape, z, graphs[t].adjacency, w)?;
    }
    Ok(out)
}

/// Transfer in both directions at once, then one graph convolution per side.
pub fn bidirectional_transfer<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    statics: &StaticMatrices,
    a: &SemanticGraph,
    b: &SemanticGraph,
    schemes: &[TransferScheme],
) -> Result<(SemanticGraph, SemanticGraph)> {
    let mut out = transfer_round(
        tape,
        store,
        statics,
        &[a.clone(), b.clone()],
        &[(0, 1), (1, 0)],
        schemes,
    )?;
    let b2 = out.pop().expect("two graphs");
    let a2 = out.pop().expect("two graphs");
    Ok((a2, b2))
}
