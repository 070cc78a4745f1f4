//! Mutation operators, retrieval metrics and threshold sweeps.

use proptest::prelude::*;
use solaudit_core::embedding::{Embedder, EmbeddingVector, LocalHashEmbedder};
use solaudit_core::eval::{
    build_probes, metrics_from_ranks, mutate, rename_candidates, robustness_eval, samples_from_sources,
    threshold_sweep, MutationKind, MutationSpec, Probe, DEAD_CODE_TEMPLATE, DEFAULT_THETAS, RECALL_KS,
};
use solaudit_core::kb::{KnowledgeEntry, VectorStore};
use solaudit_core::lexer::lex;
use solaudit_core::slicer::{build_call_graph, build_corpus, DepthBound};
use solaudit_core::source::parse_all;

#[derive(Debug, Clone)]
struct GenFn {
    params: usize,
    locals: usize,
    comments: usize,
    calls: Vec<usize>,
}

fn contract() -> impl Strategy<Value = (usize, Vec<GenFn>)> {
    (0usize..4, 1usize..6).prop_flat_map(|(state, n)| {
        let f = (0usize..3, 0usize..3, 0usize..3, proptest::collection::vec(0..n, 0..3))
            .prop_map(|(params, locals, comments, calls)| GenFn { params, locals, comments, calls });
        (Just(state), proptest::collection::vec(f, n))
    })
}

fn render(state: usize, fns: &[GenFn]) -> String {
    let mut out = String::from("pragma solidity ^0.8.0;\ncontract M {\n");
    for s in 0..state {
        out.push_str(&format!("    uint s{s}; // state {s}\n"));
    }
    for (i, f) in fns.iter().enumerate() {
        let params: Vec<String> = (0..f.params).map(|j| format!("uint p{i}x{j}")).collect();
        out.push_str(&format!("\n    function f{i}({}) public {{\n", params.join(", ")));
        for c in 0..f.comments {
            out.push_str(&format!("        // note {c}\n"));
        }
        for l in 0..f.locals {
            out.push_str(&format!("        uint l{i}x{l} = {l};\n"));
        }
        for c in &f.calls {
            let args = vec!["1"; fns[*c].params].join(", ");
            out.push_str(&format!("        f{c}({args});\n"));
        }
        out.push_str("    }\n");
    }
    out.push_str("}\n");
    out
}

fn ceil_frac(f: f64, n: usize) -> usize {
    ((f * n as f64) - 1e-9).ceil().max(0.0) as usize
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn mutations_meet_their_counts((state, fns) in contract(), seed in any::<u64>()) {
        let src = render(state, &fns);
        let vars = state + fns.iter().map(|f| f.params + f.locals).sum::<usize>();
        prop_assert_eq!(rename_candidates(&src).unwrap().len(), vars);
        let comments = lex(&src).comments.len();
        let base = parse_all(&src, "").unwrap();
        let edges = build_call_graph(&base[0]).edges.len();

        for kind in MutationKind::ALL {
            let spec = MutationSpec::new(kind, seed);
            let out = mutate(&src, &spec).unwrap();
            prop_assert_eq!(&out, &mutate(&src, &spec).unwrap());
            let units = parse_all(&out.text, "").unwrap();
            prop_assert_eq!(units[0].functions.len(), base[0].functions.len());
            prop_assert_eq!(build_call_graph(&units[0]).edges.len(), edges);
            match kind {
                MutationKind::VariableRename => {
                    prop_assert_eq!(out.edits, ceil_frac(0.7, vars));
                    let left = rename_candidates(&out.text).unwrap();
                    prop_assert_eq!(left.iter().filter(|n| n.starts_with("v_")).count(), out.edits);
                }
                MutationKind::DeadCode => {
                    prop_assert_eq!(out.text.matches(DEAD_CODE_TEMPLATE).count(), 3);
                }
                MutationKind::CommentAdd => {
                    prop_assert_eq!(lex(&out.text).comments.len(), comments + 5);
                }
                MutationKind::CommentRemove => {
                    prop_assert_eq!(lex(&out.text).comments.len(), comments - ceil_frac(0.8, comments));
                    prop_assert_eq!(out.applied, comments > 0);
                }
                MutationKind::Combined => {
                    prop_assert!(out.text.matches(DEAD_CODE_TEMPLATE).count() == 3);
                }
            }
        }
    }

    #[test]
    fn metrics_match_per_sample_recount(ranks in proptest::collection::vec(proptest::option::of(1usize..15), 1..60)) {
        let m = metrics_from_ranks(&ranks, ranks.len()).unwrap();
        for k in RECALL_KS {
            let mut hits = 0usize;
            for r in &ranks {
                if let Some(r) = r {
                    if *r <= k {
                        hits += 1;
                    }
                }
            }
            prop_assert_eq!(m.recall(k), 100.0 * hits as f64 / ranks.len() as f64);
        }
        let mut rr = 0.0;
        for r in &ranks {
            rr += match r { Some(r) => 1.0 / *r as f64, None => 0.0 };
        }
        prop_assert_eq!(m.mrr, rr / ranks.len() as f64);
        prop_assert!(RECALL_KS.windows(2).all(|w| m.recall(w[0]) <= m.recall(w[1])));
        prop_assert!(m.mrr + 1e-12 >= m.recall(1) / 100.0 && m.mrr <= 1.0);
    }

    #[test]
    fn sweep_is_monotone(
        dim in 4usize..10,
        raw in proptest::collection::vec(proptest::collection::vec(-5i32..6, 10), 2..30),
        targets in proptest::collection::vec(0usize..30, 1..20),
    ) {
        let vecs: Vec<EmbeddingVector> = raw
            .iter()
            .filter_map(|v| EmbeddingVector::new(v[..dim].iter().map(|&x| x as f64).collect()).ok())
            .filter(|v| v.norm() > 0.0)
            .collect();
        prop_assume!(vecs.len() >= 2);
        let mut kb = VectorStore::new(dim);
        for (i, v) in vecs.iter().enumerate() {
            kb.insert(KnowledgeEntry::new(format!("e{i}"), v.clone(), "", Default::default())).unwrap();
        }
        let probes: Vec<Probe> = targets
            .iter()
            .map(|&t| {
                let base = &vecs[t % vecs.len()];
                let nudged: Vec<f64> = base.values().iter().enumerate().map(|(i, x)| x + if i == 0 { 0.5 } else { 0.0 }).collect();
                Probe { target: format!("e{}", t % vecs.len()), vector: EmbeddingVector::new(nudged).unwrap() }
            })
            .filter(|p| p.vector.norm() > 0.0)
            .collect();
        prop_assume!(!probes.is_empty());
        let mut thetas = DEFAULT_THETAS.to_vec();
        thetas.push(1.0);
        let rows = threshold_sweep(&kb, &probes, &thetas, 10).unwrap();
        for w in rows.windows(2) {
            prop_assert!(w[1].metrics.retention_rate <= w[0].metrics.retention_rate);
            for k in RECALL_KS {
                prop_assert!(w[1].metrics.recall(k) <= w[0].metrics.recall(k));
            }
            prop_assert!(w[1].metrics.mrr <= w[0].metrics.mrr);
        }
    }
}

#[test]
fn sweep_edge_cases() {
    let kb = {
        let mut kb = VectorStore::new(2);
        kb.insert(KnowledgeEntry::new("a", EmbeddingVector::new(vec![1.0, 0.0]).unwrap(), "", Default::default()))
            .unwrap();
        kb
    };
    let probe = Probe { target: "a".into(), vector: EmbeddingVector::new(vec![1.0, 0.1]).unwrap() };
    let rows = threshold_sweep(&kb, &[probe.clone()], &[0.7, 1.0], 10).unwrap();
    assert_eq!(rows[0].metrics.retention_rate, 100.0);
    assert_eq!(rows[1].metrics.retention_rate, 0.0);
    assert_eq!(threshold_sweep(&kb, &[probe.clone()], &[0.9], 10).unwrap().len(), 1);
    assert!(threshold_sweep(&kb, &[probe], &[0.9, 0.8], 10).is_err());
}

#[test]
fn robustness_on_small_corpus() {
    let sources: Vec<(String, String)> = (0..5)
        .map(|i| {
            let src = format!(
                "pragma solidity ^0.8.0;
contract C{i} {{
    uint total{i};
    // SWC-101: L5
    function add{i}(uint amount) public {{
        total{i} = total{i} + amount * {i}; // unchecked in older compilers
        require(total{i} > {i});
    }}
}}
"
            );
            (format!("C{i}.sol"), src)
        })
        .collect();
    let embedder = LocalHashEmbedder::new(512).with_comment_stripping(true);
    let mut kb = VectorStore::new(512);
    for (name, text) in &sources {
        let units = parse_all(text, name).unwrap();
        let tagged: Vec<_> = units
            .into_iter()
            .map(|u| {
                let anns = solaudit_core::source::extract_annotations(text);
                solaudit_core::source::tag_functions(u, &anns).unit
            })
            .collect();
        for slice in build_corpus(&tagged, DepthBound::default(), true) {
            kb.insert(KnowledgeEntry::from_slice(&slice, embedder.embed(&slice.assembled_text).unwrap())).unwrap();
        }
    }
    assert_eq!(kb.len(), 5);
    let samples = samples_from_sources(&kb, &sources, DepthBound::default(), 50, 7);
    assert_eq!(samples.len(), 5);
    let specs = [MutationSpec::new(MutationKind::CommentAdd, 1), MutationSpec::new(MutationKind::CommentRemove, 1)];
    let results = robustness_eval(&kb, &samples, &specs, 10, &embedder, DepthBound::default()).unwrap();
    for r in &results {
        assert_eq!(r.metrics.n_samples, 5);
        assert_eq!(r.metrics.recall(1), 100.0);
        assert_eq!(r.failed_samples, 0);
    }
    let (probes, failed) = build_probes(&samples, &MutationSpec::new(MutationKind::Combined, 3), &embedder, DepthBound::default());
    assert_eq!((probes.len(), failed), (5, 0));
    assert_eq!(probes, build_probes(&samples, &MutationSpec::new(MutationKind::Combined, 3), &embedder, DepthBound::default()).0);
}
