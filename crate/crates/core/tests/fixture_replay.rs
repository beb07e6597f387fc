mod common;

use mlm_bias::backend::{Backend, FixtureBackend, MaskedQuery, Pooling, RecordingBackend, ToyBackend};
use mlm_bias::jsd::{probe_bias, search_biased_prompts, LN_2};
use mlm_bias::templates::{jaccard, load_templates, rank_predictions, NounCoercion};
use mlm_bias::Error;

use common::*;

fn open(name: &str) -> FixtureBackend {
    FixtureBackend::open(fixtures_dir().join(name), Pooling::Mean).unwrap()
}

#[test]
fn manifests_describe_their_source() {
    assert_eq!(open("crows4").info().unwrap().model_id, "scripted-crows");
    let toy = open("jsd_toy_probe");
    assert_eq!(toy.info().unwrap().model_id, "toy-seed42");
    assert!(toy.manifest().note.is_some());
}

#[test]
fn scripted_occupation_ranking_replays() {
    let fx = open("table2");
    let templates = load_templates(sample_dir().join("templates_mt.jsonl")).unwrap();
    let male = rank_predictions(&templates[0], "Hu", &fx, 5, Some(&NounCoercion::default())).unwrap();
    assert_eq!(male.template, "Hu jaħdem bħala [MASK].");
    assert!(!male.coerced);
    let top: Vec<&str> = male.tokens().collect();
    assert_eq!(top, ["tabib", "għalliem", "maxtrudaxxa", "avukat", "pijunier"]);
    assert!((male.entries[0].logprob - 0.30f64.ln()).abs() < 1e-12);

    let mut female_spec = templates[0].clone();
    female_spec.text = female_spec.female_text.clone().unwrap();
    let female = rank_predictions(&female_spec, "Hi", &fx, 5, Some(&NounCoercion::default())).unwrap();
    assert_eq!(female.entries[0].token, "pijuniera");
    assert_eq!(female.entries.len(), 5);
    // The rankings share only tabib: one token out of nine distinct.
    assert!((jaccard(male.tokens(), female.tokens()) - 1.0 / 9.0).abs() < 1e-15);
}

#[test]
fn disjoint_supports_reach_ln2() {
    let fx = open("jsd_disjoint");
    let r = probe_bias(&disjoint_spec(), &[], &fx).unwrap();
    assert!((r.mean_jsd - LN_2).abs() < 1e-15, "{}", r.mean_jsd);
}

#[test]
fn toy_probe_matches_independent_oracle() {
    #[derive(serde::Deserialize)]
    struct Oracle {
        prompt: Vec<String>,
        per_pair_jsd: Vec<f64>,
        mean_jsd: f64,
    }
    let raw = std::fs::read_to_string(fixtures_dir().join("jsd_toy_probe_oracle.json")).unwrap();
    let oracle: Oracle = serde_json::from_str(&raw).unwrap();
    let fx = open("jsd_toy_probe");
    let r = probe_bias(&toy_probe_spec(), &oracle.prompt, &fx).unwrap();
    for (got, want) in r.per_pair_jsd.iter().zip(&oracle.per_pair_jsd) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    assert!((r.mean_jsd - oracle.mean_jsd).abs() < 1e-12);
}

#[test]
fn replay_equals_live_toy() {
    let fx = open("jsd_toy_probe");
    let live = ToyBackend::new(42);
    assert_eq!(
        search_biased_prompts(&toy_probe_spec(), &fx).unwrap(),
        search_biased_prompts(&toy_probe_spec(), &live).unwrap()
    );
}

#[test]
fn unit_beam_is_greedy() {
    let live = ToyBackend::new(42);
    let spec = mlm_bias::jsd::JsdProbeSpec { beam_width: 1, prompt_length: 3, ..toy_probe_spec() };
    let mut prompt: Vec<String> = Vec::new();
    for _ in 0..spec.prompt_length {
        let best = spec
            .prompt_vocab
            .iter()
            .map(|w| {
                let mut p = prompt.clone();
                p.push(w.clone());
                probe_bias(&spec, &p, &live).unwrap()
            })
            .reduce(|a, b| if b.mean_jsd > a.mean_jsd { b } else { a })
            .unwrap();
        prompt = best.prompt;
    }
    let beam = search_biased_prompts(&spec, &live).unwrap();
    assert_eq!(beam.len(), 1);
    assert_eq!(beam[0].prompt, prompt);
}

#[test]
fn unseen_request_is_a_miss() {
    let fx = open("crows4");
    match fx.tokenize("never recorded") {
        Err(Error::FixtureMiss { hash, .. }) => assert_eq!(hash.len(), 64),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn recorded_errors_replay() {
    let fx = open("toy_protocol");
    let seq = fx.tokenize(PROTOCOL_TEXTS[0]).unwrap();
    let q = MaskedQuery::new(seq.masked_at(1).unwrap(), 1).unwrap().with_target("qqqq");
    assert!(matches!(fx.mask_logprobs(&q), Err(Error::TargetNotInVocab(t)) if t == "qqqq"));
}

#[test]
fn record_then_replay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let rec = RecordingBackend::create(ToyBackend::new(3), dir.path(), None).unwrap();
    let live_e = rec.embed("Il-kok sajjar.").unwrap();
    let seq = rec.tokenize("Hu [MASK] tajjeb.").unwrap();
    let live_d = rec.mask_logprobs(&MaskedQuery::new(seq.clone(), 1).unwrap().with_topk(7).unwrap()).unwrap();
    let fx = FixtureBackend::open(dir.path(), Pooling::Mean).unwrap();
    assert_eq!(fx.embed("Il-kok sajjar.").unwrap(), live_e);
    assert_eq!(fx.mask_logprobs(&MaskedQuery::new(seq, 1).unwrap().with_topk(7).unwrap()).unwrap(), live_d);
    assert_eq!(fx.info().unwrap().model_id, "toy-seed3");
}
