use std::path::{Path, PathBuf};
use std::sync::Arc;

use factdial::formats;
use factdial::gateway::{Gateway, GatewayConfig, MockBackend, MockScript};
use factdial::pipeline::{generation_prompt, process_dialogue, reformulate, RunConfig};
use factdial::scoring::{select_for_dialogue, SelectionConfig};
use factdial_core::pcst::assign_prizes;
use factdial_core::{Dialogue, TemplateName, Variant};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn corpus() -> Vec<Dialogue> {
    formats::load_corpus(&fixtures().join("corpus.jsonl")).unwrap()
}

fn fixture_gateway() -> (Gateway, Arc<MockBackend>) {
    let mock = Arc::new(MockBackend::new(MockScript::load(&fixtures().join("mock_script.json")).unwrap()));
    (Gateway::new(GatewayConfig::default(), mock.clone()), mock)
}

#[test]
fn pronoun_in_last_turn_is_resolved() {
    let (gw, _) = fixture_gateway();
    let d0 = &corpus()[0];
    let r = reformulate(&gw, d0).unwrap();
    assert!(!r.fallback_used);
    assert_eq!(r.resolved_turns[2].text, "Is Hayden Panettiere in any other show?");
    assert_eq!(r.resolved_turns[1].text, "Yes, Hayden Panettiere played Claire Bennet.");
    assert!(r.chain_of_thought.contains("refers to Hayden Panettiere"));
    assert_eq!(r.original, *d0);
}

#[test]
fn reformulated_prompt_carries_resolved_names() {
    let (gw, mock) = fixture_gateway();
    let d0 = &corpus()[0];
    let out = process_dialogue(&gw, d0, &RunConfig::default()).unwrap();
    assert_eq!(out.response.text, "Hayden Panettiere voiced the character Dot in A Bug's Life.");
    assert_eq!(out.graph.variant, Variant::Reformulated);
    let generate = mock.calls().into_iter().find(|c| c.template == Some(TemplateName::Generate)).unwrap();
    assert!(generate.prompt.contains("Speaker B: Yes, Hayden Panettiere played Claire Bennet."));
    assert!(generate.prompt.contains("Input: Is Hayden Panettiere in any other show?\nResponse:"));
    assert_eq!(generate.prompt, generation_prompt(&out.reformulation.unwrap().as_dialogue(), &out.graph));
}

#[test]
fn empty_pool_still_generates() {
    let (gw, mock) = fixture_gateway();
    let d5 = &corpus()[5];
    assert!(d5.triples.is_empty());
    let out = process_dialogue(&gw, d5, &RunConfig::default()).unwrap();
    assert!(out.graph.triples.is_empty());
    let generate = mock.calls().into_iter().find(|c| c.template == Some(TemplateName::Generate)).unwrap();
    assert!(generate.prompt.starts_with("Knowledge: \nDialogue: \n"));
}

#[test]
fn snooker_pool_prizes() {
    // BM25 on "Judd Trump. What do you know about him?" ranks the Judd Trump
    // triples first and the snooker triple, which shares no query term, last.
    let d1 = &corpus()[1];
    let (scored, graph) = select_for_dialogue(None, &SelectionConfig::default(), d1, Variant::Original).unwrap();
    assert_eq!(graph.triples[0].triple.predicate, "given name");
    assert_eq!(graph.triples[4].triple.subject, "Snooker");
    assert_eq!(graph.triples[4].score, 0.0);
    let g = assign_prizes(&scored, 5);
    assert_eq!(g.labels(), ["Judd Trump", "Snooker", "England", "The Ace in the Pack", "Judd", "Cue sport"]);
    assert_eq!(g.prizes(), [5.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    assert_eq!(g.edges().len(), 5);
    assert!(g.edges().iter().all(|e| e.cost == 1.0));
}

#[test]
fn formats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus();
    let path = dir.path().join("corpus.jsonl");
    formats::save_corpus(&path, &corpus).unwrap();
    assert_eq!(formats::load_corpus(&path).unwrap(), corpus);

    let graphs: Vec<_> = corpus
        .iter()
        .map(|d| select_for_dialogue(None, &SelectionConfig::default(), d, Variant::Original).unwrap().1)
        .collect();
    let path = dir.path().join("graphs.jsonl");
    formats::write_sense_graphs(&path, &graphs).unwrap();
    let back = formats::load_sense_graphs(&path).unwrap();
    for (a, b) in graphs.iter().zip(&back) {
        assert_eq!(a.dialogue_id, b.dialogue_id);
        assert_eq!(a.n, b.n);
        let ta: Vec<_> = a.triples.iter().map(|t| (&t.triple, t.score)).collect();
        let tb: Vec<_> = b.triples.iter().map(|t| (&t.triple, t.score)).collect();
        assert_eq!(ta, tb);
    }

    let (gw, _) = fixture_gateway();
    let refs: Vec<_> = corpus.iter().map(|d| reformulate(&gw, d).unwrap()).collect();
    let path = dir.path().join("refs.jsonl");
    formats::write_reformulations(&path, &refs).unwrap();
    assert_eq!(formats::load_reformulations(&path, &corpus).unwrap(), refs);
}
