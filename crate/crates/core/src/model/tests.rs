use super::*;
use crate::data::{generate_synthetic, GeneratorConfig};
use crate::graph::{
    build_dual_graph, CrossEdge, CrossGraph, DualBipartiteGraph, GraphBuildConfig, InstanceNode,
    LabelNode, WithinEdge, WithinGraph,
};
use crate::numerics::{GradCheckConfig, Tensor};

fn small_config() -> ModelConfig {
    ModelConfig {
        gcn_hidden: 6,
        dense_hidden: 5,
        attention_hidden: 4,
        num_heads: 2,
        epochs: 5,
        ..ModelConfig::default()
    }
}

fn within(instance: usize, label: usize, weight: f64) -> WithinEdge {
    WithinEdge {
        instance,
        label,
        weight,
        count: 1,
    }
}

/// Instances are (group, features); labels are (group, class).
fn graph(
    instances: &[(usize, [f64; 2])],
    labels: &[(usize, u32)],
    within_edges: Vec<WithinEdge>,
    cross_edges: Vec<CrossEdge>,
) -> DualBipartiteGraph {
    DualBipartiteGraph {
        num_classes: 2,
        feature_dim: 2,
        build: GraphBuildConfig::default(),
        instances: instances
            .iter()
            .enumerate()
            .map(|(k, &(group_id, f))| InstanceNode {
                instance_id: k as u64,
                group_id,
                features: f.to_vec(),
            })
            .collect(),
        labels: labels
            .iter()
            .map(|&(group_id, class_id)| LabelNode {
                class_id,
                group_id,
                slot: 0,
            })
            .collect(),
        within: WithinGraph {
            edges: within_edges,
        },
        cross: CrossGraph { edges: cross_edges },
    }
}

/// Two groups with a cross edge from instance 2 into group 0.
fn toy() -> DualBipartiteGraph {
    graph(
        &[(0, [1.0, 0.5]), (0, [-0.5, 2.0]), (1, [0.8, 0.4])],
        &[(0, 0), (0, 1), (1, 0)],
        vec![
            within(0, 0, 0.5),
            within(0, 1, 0.25),
            within(1, 1, 0.75),
            within(2, 2, 1.0),
        ],
        vec![CrossEdge {
            instance: 2,
            label: 0,
            weight: 0.5,
            via: 0,
        }],
    )
}

fn synthetic(seed: u64) -> DualBipartiteGraph {
    let ds = generate_synthetic(&GeneratorConfig {
        num_classes: 5,
        feature_dim: 4,
        num_groups: 12,
        max_labels: 4,
        noise: 0.5,
        seed,
        ..GeneratorConfig::default()
    })
    .unwrap();
    build_dual_graph(&ds, &GraphBuildConfig::default())
}

fn params_for(config: &ModelConfig, g: &DualBipartiteGraph) -> ModelParams {
    ModelParams::init(
        ModelDims::new(config, g.feature_dim, g.num_classes),
        config.seed,
    )
}

/// Input width 4 (two features, two classes) with identity propagation.
fn identity_setup(config: &ModelConfig, g: &DualBipartiteGraph, sign: f64) -> ModelParams {
    let mut p = params_for(config, g);
    for head in 0..config.num_heads {
        p.tensors[p.dims.propagate(head, false)] = Tensor::identity(4).map(|x| sign * x);
    }
    p
}

#[test]
fn unattended_message_is_weight_times_neighbour() {
    let g = graph(
        &[(0, [3.0, -1.0])],
        &[(0, 1)],
        vec![within(0, 0, 0.5)],
        vec![],
    );
    let config = ModelConfig {
        gcn_hidden: 4,
        num_heads: 1,
        use_attention: false,
        ..small_config()
    };
    let p = identity_setup(&config, &g, 1.0);
    let t = trace(&p, &PreparedGraph::new(&g, &config).unwrap()).unwrap();
    let m = t.messages[0][Path::Within as usize].as_ref().unwrap();
    // Instance row receives half the label's one-hot, the label half the
    // instance's features.
    assert_eq!(m.row(0), &[0.0, 0.0, 0.0, 0.5]);
    assert_eq!(m.row(1), &[1.5, -0.5, 0.0, 0.0]);
    assert_eq!(t.h_within.row(1), &[1.5, 0.0, 0.0, 0.0]);
    assert!(t.messages[0][Path::Cross as usize].is_none());
    assert!(t.h_cross.data().iter().all(|&x| x == 0.0));
}

#[test]
fn unit_weight_passes_the_neighbour_through() {
    let g = graph(
        &[(0, [3.0, 2.0])],
        &[(0, 0)],
        vec![within(0, 0, 1.0)],
        vec![],
    );
    let config = ModelConfig {
        gcn_hidden: 4,
        num_heads: 1,
        use_attention: false,
        ..small_config()
    };
    let p = identity_setup(&config, &g, 1.0);
    let t = trace(&p, &PreparedGraph::new(&g, &config).unwrap()).unwrap();
    let m = t.messages[0][0].as_ref().unwrap();
    assert_eq!(m.row(1), &[3.0, 2.0, 0.0, 0.0]);
}

#[test]
fn negative_aggregate_is_rectified() {
    let g = graph(
        &[(0, [3.0, 2.0])],
        &[(0, 0)],
        vec![within(0, 0, 1.0)],
        vec![],
    );
    let config = ModelConfig {
        gcn_hidden: 4,
        num_heads: 1,
        use_attention: false,
        ..small_config()
    };
    let p = identity_setup(&config, &g, -1.0);
    let t = trace(&p, &PreparedGraph::new(&g, &config).unwrap()).unwrap();
    assert!(t.h_within.data().iter().all(|&x| x == 0.0));
}

#[test]
fn identical_heads_average_to_one_head() {
    let g = toy();
    let config = ModelConfig {
        gcn_hidden: 4,
        num_heads: 4,
        use_attention: false,
        ..small_config()
    };
    let p = identity_setup(&config, &g, 1.0);
    let t = trace(&p, &PreparedGraph::new(&g, &config).unwrap()).unwrap();
    let single = t.messages[0][0].as_ref().unwrap().map(|x| x.max(0.0));
    assert!(t.h_within.max_abs_diff(&single) < 1e-15);
}

#[test]
fn lone_neighbour_gets_full_attention() {
    let g = graph(
        &[(0, [1.0, 2.0])],
        &[(0, 0)],
        vec![within(0, 0, 0.4)],
        vec![],
    );
    let config = small_config();
    let t = trace(
        &params_for(&config, &g),
        &PreparedGraph::new(&g, &config).unwrap(),
    )
    .unwrap();
    for head in &t.attention {
        assert_eq!(head[0].as_deref(), Some(&[1.0, 1.0][..]));
        assert!(head[1].is_none());
    }
}

#[test]
fn attention_follows_score_softmax() {
    // One instance with two labels; scores (0, ln 3) come from the source
    // vector acting on the one-hot label block.
    let g = graph(
        &[(0, [0.0, 0.0])],
        &[(0, 0), (0, 1)],
        vec![within(0, 0, 0.5), within(0, 1, 0.5)],
        vec![],
    );
    let config = ModelConfig {
        attention_hidden: 4,
        num_heads: 1,
        ..small_config()
    };
    let mut p = params_for(&config, &g);
    let d = p.dims;
    p.tensors[d.attn_proj(0)] = Tensor::identity(4);
    p.tensors[d.attn_dst(0)] = Tensor::zeros(4, 1);
    p.tensors[d.attn_src(0)] = Tensor::column(vec![0.0, 0.0, 0.0, 3f64.ln()]);
    let t = trace(&p, &PreparedGraph::new(&g, &config).unwrap()).unwrap();
    let alpha = t.attention[0][0].as_ref().unwrap();
    // Edges into the instance come first.
    assert!((alpha[0] - 0.25).abs() < 1e-15);
    assert!((alpha[1] - 0.75).abs() < 1e-15);
}

#[test]
fn equal_scores_split_attention_evenly() {
    let g = graph(
        &[(0, [1.0, 1.0])],
        &[(0, 0), (0, 1)],
        vec![within(0, 0, 0.5), within(0, 1, 0.5)],
        vec![],
    );
    let config = ModelConfig {
        num_heads: 1,
        ..small_config()
    };
    let mut p = params_for(&config, &g);
    let d = p.dims;
    p.tensors[d.attn_src(0)] = Tensor::zeros(d.attention_hidden, 1);
    let t = trace(&p, &PreparedGraph::new(&g, &config).unwrap()).unwrap();
    let alpha = t.attention[0][0].as_ref().unwrap();
    assert!((alpha[0] - 0.5).abs() < 1e-15 && (alpha[1] - 0.5).abs() < 1e-15);
}

#[test]
fn attention_sums_to_one_per_node_and_path() {
    let g = synthetic(1);
    let config = small_config();
    let prepared = PreparedGraph::new(&g, &config).unwrap();
    let t = trace(&params_for(&config, &g), &prepared).unwrap();
    for (p, path) in [Path::Within, Path::Cross].into_iter().enumerate() {
        let Some((edges, _)) = prepared.path_edges(path) else {
            continue;
        };
        for head in &t.attention {
            let alpha = head[p].as_ref().unwrap();
            let mut sums = vec![0.0; prepared.num_instances() + prepared.num_labels()];
            for (e, &a) in alpha.iter().enumerate() {
                sums[edges.dst[e]] += a;
            }
            let mut seen = vec![false; sums.len()];
            edges.dst.iter().for_each(|&d| seen[d] = true);
            for (s, seen) in sums.iter().zip(seen) {
                if seen {
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn isolated_node_embedding_comes_from_its_features() {
    let mut g = toy();
    g.instances.push(InstanceNode {
        instance_id: 3,
        group_id: 2,
        features: vec![0.3, -0.7],
    });
    let config = small_config();
    let p = params_for(&config, &g);
    let t = trace(&p, &PreparedGraph::new(&g, &config).unwrap()).unwrap();
    let (h, d) = (config.gcn_hidden, p.dims);
    assert!(t
        .h_within
        .row(3)
        .iter()
        .chain(t.h_cross.row(3))
        .all(|&x| x == 0.0));
    let x = Tensor::from_vec(1, 4, vec![0.3, -0.7, 0.0, 0.0]).unwrap();
    let mut f = x.matmul(&p.tensors[d.feature()]).unwrap();
    f.axpy(1.0, &p.tensors[d.feature_bias()]);
    let mut cat = vec![0.0; 2 * h];
    cat.extend(f.data().iter().map(|v| v.max(0.0)));
    let u = Tensor::from_vec(1, 3 * h, cat)
        .unwrap()
        .matmul(&p.tensors[d.instance_out()])
        .unwrap()
        .map(|v| v.max(0.0));
    assert!(u
        .data()
        .iter()
        .zip(t.output.u.row(3))
        .all(|(a, b)| (a - b).abs() < 1e-14));
}

#[test]
fn default_embeddings_have_one_hundred_columns() {
    let g = toy();
    let config = ModelConfig {
        gcn_hidden: 8,
        ..ModelConfig::default()
    };
    let out = encode(
        &params_for(&config, &g),
        &PreparedGraph::new(&g, &config).unwrap(),
    )
    .unwrap();
    assert_eq!(out.u.shape(), (3, 100));
    assert_eq!(out.v.shape(), (3, 100));
}

/// Reorders instances and labels; edges follow their endpoints.
fn permute(g: &DualBipartiteGraph, inst: &[usize], lab: &[usize]) -> DualBipartiteGraph {
    let inv = |p: &[usize]| {
        let mut v = vec![0; p.len()];
        p.iter().enumerate().for_each(|(new, &old)| v[old] = new);
        v
    };
    let (ii, li) = (inv(inst), inv(lab));
    let mut out = g.clone();
    out.instances = inst.iter().map(|&o| g.instances[o].clone()).collect();
    out.labels = lab.iter().map(|&o| g.labels[o]).collect();
    for e in &mut out.within.edges {
        e.instance = ii[e.instance];
        e.label = li[e.label];
    }
    for e in &mut out.cross.edges {
        e.instance = ii[e.instance];
        e.label = li[e.label];
        e.via = ii[e.via];
    }
    out
}

#[test]
fn node_permutation_permutes_ratings() {
    let g = synthetic(2);
    let (ni, nl) = (g.num_instances(), g.num_labels());
    let inst: Vec<usize> = (0..ni).rev().collect();
    let lab: Vec<usize> = (0..nl).map(|k| (k * 7 + 3) % nl).collect();
    assert!(nl % 7 != 0);
    let h = permute(&g, &inst, &lab);
    let config = small_config();
    let p = params_for(&config, &g);
    let a = trace(&p, &PreparedGraph::new(&g, &config).unwrap()).unwrap();
    let b = trace(&p, &PreparedGraph::new(&h, &config).unwrap()).unwrap();
    let key = |g: &DualBipartiteGraph, e: &ScoredEdge| {
        let l = &g.labels[e.label];
        (
            g.instances[e.instance].instance_id,
            l.group_id,
            l.slot,
            l.class_id,
            e.kind == EdgeKind::Cross,
        )
    };
    let mut ra: Vec<_> = a
        .ratings
        .edges
        .iter()
        .map(|e| key(&g, e))
        .zip(&a.ratings.expected)
        .collect();
    let mut rb: Vec<_> = b
        .ratings
        .edges
        .iter()
        .map(|e| key(&h, e))
        .zip(&b.ratings.expected)
        .collect();
    ra.sort_by_key(|x| x.0);
    rb.sort_by_key(|x| x.0);
    assert_eq!(ra.len(), rb.len());
    for (x, y) in ra.iter().zip(&rb) {
        assert_eq!(x.0, y.0);
        assert!((x.1 - y.1).abs() < 1e-9);
    }
    // Embedding rows follow the instance order.
    for (new, &old) in inst.iter().enumerate() {
        let diff = a
            .output
            .u
            .row(old)
            .iter()
            .zip(b.output.u.row(new))
            .map(|(x, y)| (x - y).abs());
        assert!(diff.fold(0.0, f64::max) < 1e-9);
    }
}

#[test]
fn disabling_cross_links_zeroes_the_cross_path() {
    let g = synthetic(3);
    assert!(!g.cross.edges.is_empty());
    let config = ModelConfig {
        use_cross_links: false,
        ..small_config()
    };
    let prepared = PreparedGraph::new(&g, &config).unwrap();
    assert!(prepared.path_edges(Path::Cross).is_none());
    assert!(prepared
        .scored_edges()
        .iter()
        .all(|e| e.kind == EdgeKind::Within));
    let t = trace(&params_for(&config, &g), &prepared).unwrap();
    assert!(t.h_cross.data().iter().all(|&x| x == 0.0));
    assert!(t.h_within.data().iter().any(|&x| x != 0.0));
}

#[test]
fn single_path_uses_mean_weights() {
    let g = toy();
    let config = ModelConfig {
        use_dual_paths: false,
        ..small_config()
    };
    let prepared = PreparedGraph::new(&g, &config).unwrap();
    assert!(prepared.path_edges(Path::Cross).is_none());
    let (edges, w) = prepared.path_edges(Path::Within).unwrap();
    // 5 graph edges, each in both directions.
    assert_eq!(edges.len(), 10);
    let mut degree = [0usize; 6];
    edges.dst.iter().for_each(|&d| degree[d] += 1);
    for (e, &w) in w.iter().enumerate() {
        assert_eq!(w, 1.0 / degree[edges.dst[e]] as f64);
    }
    // Cross edges are still decoded but never supervised.
    assert_eq!(prepared.scored_edges().len(), 5);
    assert_eq!(prepared.num_observed(), 4);
}

#[test]
fn disabled_attention_records_no_coefficients() {
    let g = toy();
    let config = ModelConfig {
        use_attention: false,
        ..small_config()
    };
    let t = trace(
        &params_for(&config, &g),
        &PreparedGraph::new(&g, &config).unwrap(),
    )
    .unwrap();
    assert!(t.attention.iter().all(|h| h[0].is_none() && h[1].is_none()));
    let a = t.messages[0][0].as_ref().unwrap();
    assert!(a.data().iter().any(|&x| x != 0.0));
}

#[test]
fn degenerate_graph_learns_its_only_level() {
    let g = graph(
        &[(0, [0.5, -0.2])],
        &[(0, 1)],
        vec![within(0, 0, 1.0)],
        vec![],
    );
    let config = ModelConfig {
        epochs: 200,
        ..ModelConfig::default()
    };
    let out = train(&g, &config).unwrap();
    let top = *out.ratings.probs.row(0).last().unwrap();
    assert!(top > 0.99, "p(level 1.0) = {top}");
}

#[test]
fn identical_seeds_give_identical_traces() {
    let g = synthetic(4);
    let config = ModelConfig {
        epochs: 15,
        ..small_config()
    };
    let a = train(&g, &config).unwrap();
    let b = train(&g, &config).unwrap();
    assert_eq!(a.loss_trace, b.loss_trace);
    assert_eq!(a.params, b.params);
    let c = train(&g, &ModelConfig { seed: 1, ..config }).unwrap();
    assert_ne!(a.loss_trace, c.loss_trace);
}

#[test]
fn every_forward_pass_is_normalized() {
    let g = synthetic(5);
    let config = ModelConfig {
        epochs: 20,
        ..small_config()
    };
    let out = train(&g, &config).unwrap();
    assert_eq!(out.audit.passes_checked, 22);
    assert!(out.audit.holds(1e-9));
}

#[test]
fn non_finite_parameters_abort_at_the_first_epoch() {
    let g = toy();
    let config = small_config();
    let prepared = PreparedGraph::new(&g, &config).unwrap();
    let mut p = params_for(&config, &g);
    let d = p.dims;
    p.tensors[d.decoder()].set(0, 0, f64::NAN);
    match train_with(&prepared, p, &config, |_, _| {}) {
        Err(ModelError::NonFiniteLoss {
            epoch: 0,
            last_finite: None,
        }) => {}
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
}

#[test]
fn graph_without_within_edges_cannot_train() {
    let g = graph(&[(0, [0.0, 0.0])], &[(0, 0)], vec![], vec![]);
    assert!(matches!(
        train(&g, &small_config()),
        Err(ModelError::NoObservedEdges)
    ));
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let g = toy();
    let config = ModelConfig {
        gcn_hidden: 5,
        dense_hidden: 4,
        attention_hidden: 3,
        num_heads: 2,
        ..small_config()
    };
    let report = check_gradients(
        &params_for(&config, &g),
        &PreparedGraph::new(&g, &config).unwrap(),
        &GradCheckConfig {
            tolerance: 1e-4,
            ..GradCheckConfig::default()
        },
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
    assert!(report.checked > 100);
}

#[test]
fn mismatched_parameters_are_rejected() {
    let g = toy();
    let config = small_config();
    let other = ModelConfig {
        rating_levels: vec![0.0, 1.0],
        ..config.clone()
    };
    let p = params_for(&other, &g);
    assert!(matches!(
        trace(&p, &PreparedGraph::new(&g, &config).unwrap()),
        Err(ModelError::Mismatch(_))
    ));
}
