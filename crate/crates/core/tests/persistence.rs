use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, OnceLock};

use catforge_core::dataset::{build_end_to_end, EndToEndConfig, EndToEndDataset};
use catforge_core::index::{IndexSet, IndexView};
use catforge_core::pipeline::{training_from_cases, Engine, EngineParams, Models};
use catforge_core::synth::{generate, SynthConfig, SynthKb};
use catforge_core::text::Lexicon;
use catforge_core::topic::TopicGraph;
use catforge_core::{CategoryHierarchy, Error, KbContext};

struct Fixture {
    kb: SynthKb,
    data: EndToEndDataset,
    ctx: Arc<KbContext>,
    models: Models,
    params: EngineParams,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let kb = generate(&SynthConfig::default()).unwrap();
        let data = build_end_to_end(&kb.hierarchy, &kb.inputs, &EndToEndConfig::default()).unwrap();
        let ctx = Arc::new(KbContext::build(Arc::new(data.working.clone()), Lexicon::default(), &BTreeSet::new()));
        let params = EngineParams {
            n_trees: 40,
            ..Default::default()
        };
        let train: Vec<_> = data.select(&kb.train_ids).cloned().collect();
        let set = training_from_cases(&ctx, &params, &train).unwrap();
        let models = Models::train(&params, &set).unwrap();
        Fixture {
            kb,
            data,
            ctx,
            models,
            params,
        }
    })
}

#[test]
fn hierarchy_round_trips_through_jsonl() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (c, e) = (dir.path().join("c.jsonl"), dir.path().join("e.jsonl"));
    f.kb.hierarchy.save(&c, &e).unwrap();
    let (back, report) = CategoryHierarchy::load(&c, &e).unwrap();
    assert_eq!(back.to_jsonl(), f.kb.hierarchy.to_jsonl());
    assert_eq!(report.categories, f.kb.hierarchy.num_categories());
}

#[test]
fn indexes_and_graph_round_trip() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    f.ctx.indexes.save_dir(&dir.path().join("index")).unwrap();
    f.ctx.graph.save_tsv(&dir.path().join("graph.tsv")).unwrap();
    let indexes = IndexSet::load_dir(&dir.path().join("index")).unwrap();
    let graph = TopicGraph::load_tsv(&dir.path().join("graph.tsv")).unwrap();
    for view in IndexView::ALL {
        assert_eq!(indexes.get(view), f.ctx.indexes.get(view), "{view:?}");
    }
    let g = &f.ctx.graph;
    assert_eq!(graph.num_edges(), g.num_edges());
    for tb in g.child_terms() {
        assert_eq!(graph.term_count(tb), g.term_count(tb), "{tb}");
        let before: Vec<_> = g.out_edges(tb).collect();
        let after: Vec<_> = graph.out_edges(tb).collect();
        assert_eq!(before, after, "{tb}");
        for (ta, _) in before {
            assert_eq!(graph.pair_term_count(ta, tb), g.pair_term_count(ta, tb));
        }
    }
}

#[test]
fn reloaded_engine_gives_identical_suggestions() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    f.ctx.indexes.save_dir(&dir.path().join("index")).unwrap();
    f.ctx.graph.save_tsv(&dir.path().join("graph.tsv")).unwrap();
    f.models.save(&dir.path().join("models")).unwrap();

    let ctx = KbContext::from_parts(
        f.ctx.hierarchy.clone(),
        Lexicon::default(),
        IndexSet::load_dir(&dir.path().join("index")).unwrap(),
        TopicGraph::load_tsv(&dir.path().join("graph.tsv")).unwrap(),
    );
    let models = Models::load(&dir.path().join("models")).unwrap();
    let before = Engine::new(f.ctx.clone(), f.params.clone(), Arc::new(f.models.clone())).unwrap();
    let after = Engine::new(Arc::new(ctx), f.params.clone(), Arc::new(models)).unwrap();
    let inputs: Vec<_> = f.data.select(&f.kb.test_ids).map(|c| c.input.clone()).collect();
    let a = before.suggest_all(&inputs, &BTreeMap::new()).unwrap();
    let b = after.suggest_all(&inputs, &BTreeMap::new()).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn corrupt_artifacts_are_rejected() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    f.models.save(dir.path()).unwrap();
    let path = dir.path().join("final.cfrf");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(&path, &bytes).unwrap();
    assert!(Models::load(dir.path()).is_err());

    std::fs::write(dir.path().join("initial.cfrf"), b"not a model").unwrap();
    assert!(matches!(Models::load(dir.path()), Err(Error::Format { .. })));

    let missing = IndexSet::load_dir(&dir.path().join("nowhere"));
    assert!(missing.is_err());
}
