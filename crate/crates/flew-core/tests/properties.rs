//! Cross-module invariants checked on randomized inputs.

use std::collections::BTreeSet;

use proptest::prelude::*;

use flew_core::combiner::{combine, weight_grid, GridSpec, WeightVector};
use flew_core::corpus::{encoder_input_parts, CitationEdge, CitationGraph};
use flew_core::encoder::{featurize, EmbeddingVector};
use flew_core::eval::kendall_tau;
use flew_core::facet_graph::{expand_weighted_edges, extract_facet_subgraph, Facet};
use flew_core::graph_embed::{nearest_neighbors, NodeEmbeddingTable};
use flew_core::text_splitter::{heuristic_split, validate_split};

fn bracket_free_text() -> impl Strategy<Value = String> {
    proptest::string::string_regex("[a-zA-Z0-9 .,!?-]{0,40}").expect("valid regex")
}

fn facet_strategy() -> impl Strategy<Value = Facet> {
    prop_oneof![
        Just(Facet::Background),
        Just(Facet::Method),
        Just(Facet::Result),
    ]
}

/// A small random citation graph: endpoints drawn from `p0..pn`, one edge
/// per distinct `(citing, cited, intent)` key.
fn graph_strategy() -> impl Strategy<Value = CitationGraph> {
    (3usize..8)
        .prop_flat_map(|n| {
            let edge = (0..n, 0..n, facet_strategy(), 1u64..4);
            (Just(n), proptest::collection::vec(edge, 0..30))
        })
        .prop_map(|(n, raw_edges)| {
            let nodes: BTreeSet<String> = (0..n).map(|i| format!("p{i}")).collect();
            let mut seen = BTreeSet::new();
            let edges: Vec<CitationEdge> = raw_edges
                .into_iter()
                .filter(|(citing, cited, _, _)| citing != cited)
                .filter(|(citing, cited, intent, _)| seen.insert((*citing, *cited, *intent)))
                .map(|(citing, cited, intent, context_count)| CitationEdge {
                    citing: format!("p{citing}"),
                    cited: format!("p{cited}"),
                    intent,
                    context_count,
                })
                .collect();
            CitationGraph::from_parts(nodes, edges).expect("constructed edges are valid")
        })
}

/// Random abstracts built from capitalized sentences, with optional method
/// and result cue phrases planted at arbitrary positions.
fn abstract_strategy() -> impl Strategy<Value = String> {
    let word = proptest::string::string_regex("[a-z]{1,8}").expect("valid regex");
    let plain = proptest::collection::vec(word, 1..6).prop_map(|words| {
        let mut s = words.join(" ");
        s[..1].make_ascii_uppercase();
        s
    });
    let sentence = prop_oneof![
        4 => plain,
        1 => proptest::string::string_regex("[a-z]{1,8}")
            .expect("valid regex")
            .prop_map(|w| format!("We propose {w}")),
        1 => proptest::string::string_regex("[a-z]{1,8}")
            .expect("valid regex")
            .prop_map(|w| format!("Results show {w}")),
    ];
    proptest::collection::vec(sentence, 1..8).prop_map(|sentences| sentences.join(". ") + ".")
}

proptest! {
    /// Joining title and abstract with the separator token loses no
    /// information as long as neither contains the token itself.
    #[test]
    fn separator_joined_input_is_injective(
        t1 in bracket_free_text(),
        a1 in bracket_free_text(),
        t2 in bracket_free_text(),
        a2 in bracket_free_text(),
    ) {
        let same_input = encoder_input_parts(&t1, &a1) == encoder_input_parts(&t2, &a2);
        prop_assert_eq!(same_input, (&t1, &a1) == (&t2, &a2));
    }

    /// The three facet subgraphs partition the citation edges: counts and
    /// weights are conserved and no edge lands in two facets.
    #[test]
    fn facet_subgraphs_partition_the_edges(graph in graph_strategy()) {
        let mut edge_total = 0usize;
        let mut weight_total = 0u64;
        for facet in Facet::ALL {
            let sub = extract_facet_subgraph(&graph, facet);
            prop_assert_eq!(sub.nodes(), graph.nodes());
            prop_assert!(sub.edges().iter().all(|e| e.weight >= 1));
            edge_total += sub.edges().len();
            let facet_weight: u64 = sub.edges().iter().map(|e| e.weight).sum();
            weight_total += facet_weight;
            // Expansion repeats each edge weight-many times.
            prop_assert_eq!(expand_weighted_edges(&sub).len() as u64, facet_weight);
        }
        prop_assert_eq!(edge_total, graph.edge_count());
        let graph_weight: u64 = graph.edges().iter().map(|e| e.context_count).sum();
        prop_assert_eq!(weight_total, graph_weight);
    }

    /// Hashed features are unit length whenever any token survives, case
    /// folding included, and every index stays in range.
    #[test]
    fn hashed_features_are_unit_length(text in "[a-zA-Z ]{1,60}", shift in 0usize..3) {
        let buckets = 1usize << (6 + shift);
        let features = featurize(&text, buckets);
        let has_token = text.chars().any(|c| c.is_alphanumeric());
        prop_assert_eq!(features.is_zero(), !has_token);
        if has_token {
            prop_assert!((features.norm() - 1.0).abs() < 1e-12);
        }
        prop_assert!(features.entries().iter().all(|(i, _)| (*i as usize) < buckets));
        let upper = featurize(&text.to_uppercase(), buckets);
        prop_assert_eq!(features, upper);
    }

    /// The fallback splitter always yields a split that survives
    /// validation, wherever the cue phrases land.
    #[test]
    fn fallback_splits_always_validate(abstract_text in abstract_strategy()) {
        let split = heuristic_split(&abstract_text).expect("nonempty abstract");
        let report = validate_split(&abstract_text, &split);
        prop_assert!(report.is_ok(), "{:?}", report.diagnostics);
    }

    /// Grid size follows the composition count and every point is an exact
    /// positive fraction triple in lexicographic order.
    #[test]
    fn weight_grids_are_exact_ordered_compositions(m in 3u32..28) {
        let spec = GridSpec::new(1.0 / f64::from(m)).expect("reciprocal step");
        prop_assert_eq!(spec.resolution(), m);
        let grid = weight_grid(spec).expect("m >= 3");
        let m_us = m as usize;
        prop_assert_eq!(grid.len(), (m_us - 1) * (m_us - 2) / 2);
        let mut previous = None;
        for w in &grid {
            let (a, b, c, denom) = w.fraction().expect("grid carries fractions");
            prop_assert_eq!(a + b + c, denom);
            prop_assert_eq!(denom, m);
            prop_assert!(w.background() > 0.0 && w.method() > 0.0 && w.result() > 0.0);
            if let Some(prev) = previous {
                prop_assert!(prev < (a, b));
            }
            previous = Some((a, b));
        }
    }

    /// Rank correlation is antisymmetric under order reversal and maximal
    /// on identical sequences, ties included.
    #[test]
    fn rank_correlation_is_antisymmetric(
        values in proptest::collection::vec(0i32..5, 2..12),
        other in proptest::collection::vec(0i32..5, 2..12),
    ) {
        let n = values.len().min(other.len());
        let x: Vec<f64> = values[..n].iter().map(|&v| f64::from(v)).collect();
        let y: Vec<f64> = other[..n].iter().map(|&v| f64::from(v)).collect();
        let varied = |v: &[f64]| v.windows(2).any(|w| w[0] != w[1]);
        prop_assume!(varied(&x) && varied(&y));

        let tau = kendall_tau(&x, &y).unwrap();
        prop_assert!((-1.0..=1.0).contains(&tau));
        let y_reversed: Vec<f64> = y.iter().map(|v| -v).collect();
        let tau_reversed = kendall_tau(&x, &y_reversed).unwrap();
        prop_assert!((tau + tau_reversed).abs() < 1e-12);
        prop_assert!((kendall_tau(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    /// Cosine neighbor rankings are invariant under a common power-of-two
    /// scaling of the stored vectors (which is exact in floating point).
    #[test]
    fn neighbor_rankings_survive_uniform_scaling(
        rows in proptest::collection::vec(
            proptest::array::uniform3(-1.0f32..1.0),
            3..10,
        ),
        k in 1usize..5,
    ) {
        prop_assume!(rows.iter().all(|r| r.iter().any(|&v| v != 0.0)));
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("n{i}")).collect();
        let table = NodeEmbeddingTable::from_rows(
            Facet::Background,
            3,
            7,
            ids.iter().cloned().zip(rows.iter().map(|r| r.to_vec())),
        )
        .expect("valid rows");
        let scaled = NodeEmbeddingTable::from_rows(
            Facet::Background,
            3,
            7,
            ids.iter().cloned().zip(
                rows.iter().map(|r| r.iter().map(|v| v * 4.0).collect::<Vec<f32>>()),
            ),
        )
        .expect("valid rows");
        let plain = nearest_neighbors(&table, "n0", k).expect("query exists");
        let rescaled = nearest_neighbors(&scaled, "n0", k).expect("query exists");
        prop_assert_eq!(plain, rescaled);
    }

    /// The weighted sum is equivariant under jointly rotating weights and
    /// vectors, and equal-thirds weights average exactly.
    #[test]
    fn weighted_sums_respect_joint_rotation(
        vectors in proptest::array::uniform3(
            proptest::collection::vec(-10.0f64..10.0, 3),
        ),
        numerators in (1u32..6, 1u32..6, 1u32..6),
    ) {
        let (a, b, c) = numerators;
        let w = WeightVector::from_fraction(a, b, c, a + b + c).unwrap();
        let rotated_w = WeightVector::from_fraction(b, c, a, a + b + c).unwrap();
        let [e_bg, e_mt, e_rs] = vectors.map(|values| EmbeddingVector { values });
        let plain = combine(&w, &e_bg, &e_mt, &e_rs).unwrap();
        let rotated = combine(&rotated_w, &e_mt, &e_rs, &e_bg).unwrap();
        for (x, y) in plain.values.iter().zip(&rotated.values) {
            prop_assert!((x - y).abs() < 1e-12);
        }

        let uniform = combine(&WeightVector::uniform(), &e_bg, &e_bg, &e_bg).unwrap();
        for (x, y) in uniform.values.iter().zip(&e_bg.values) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
