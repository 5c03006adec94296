use std::collections::HashMap;
use std::sync::Mutex;

use proptest::prelude::*;
use rayon::prelude::*;
use schema_miner::embed::{EmbedError, Embedder};
use schema_miner::metrics::{
    bleu, build_pairwise_report, emb_f1, rouge_l, schema_tokens, tokenize_schema, FieldMode, TokenSeq,
};
use schema_miner::schema::{parse_schema, serialize_canonical};
use schema_miner_testkit::oracle;

fn seq(tokens: &[String]) -> TokenSeq {
    TokenSeq::new(tokens.iter().cloned())
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// Gives every distinct token its own basis vector.
#[derive(Default)]
struct Orthogonal {
    ids: Mutex<HashMap<String, usize>>,
}

impl Embedder for Orthogonal {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut ids = self.ids.lock().unwrap();
        let dims = 64;
        Ok(texts
            .iter()
            .map(|t| {
                let next = ids.len();
                let id = *ids.entry(t.clone()).or_insert(next);
                let mut v = vec![0.0; dims];
                v[id % dims] = 1.0;
                v
            })
            .collect())
    }
    fn identity(&self) -> String {
        "orthogonal".into()
    }
}

struct Down;

impl Embedder for Down {
    fn embed(&self, _: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Err(EmbedError::EmbedderUnreachable("connection refused".into()))
    }
    fn identity(&self) -> String {
        "down".into()
    }
}

#[test]
fn exhaustive_sweep_matches_oracles() {
    let all = oracle::all_sequences(&["a", "b", "c"], 6);
    assert_eq!(all.len(), 1093);
    let seqs: Vec<TokenSeq> = all.iter().map(|s| seq(s)).collect();
    let tables: Vec<oracle::NgramTables> = all.iter().map(|s| oracle::NgramTables::new(s)).collect();
    let (worst_rouge, worst_bleu) = all
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let mut worst = (0.0f64, 0.0f64);
            for (j, r) in all.iter().enumerate() {
                worst.0 = worst.0.max((rouge_l(&seqs[i], &seqs[j]) - oracle::rouge_l(c, r)).abs());
                worst.1 = worst.1.max((bleu(&seqs[i], &seqs[j], 4) - oracle::bleu4_tables(&tables[i], &tables[j])).abs());
            }
            worst
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    assert!(worst_rouge <= 1e-12, "rouge_l off by {worst_rouge}");
    assert!(worst_bleu <= 1e-12, "bleu off by {worst_bleu}");
}

#[test]
fn hand_examples() {
    let v = rouge_l(&seq(&words("a b c d")), &seq(&words("a c")));
    assert!((v - 2.0 / 3.0).abs() < 1e-12);
    // p1 = p2 = p3 = 1; p4 has no 4-grams so (0+1)/(0+1); BP = exp(1 - 4/3)
    let b = bleu(&seq(&words("the cat sat")), &seq(&words("the cat sat down")), 4);
    assert!((b - (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-12);
}

#[test]
fn identity_is_one_for_all_metrics() {
    for text in ["a", "a b", "x y z w v", "a a a b"] {
        let s = seq(&words(text));
        assert_eq!(rouge_l(&s, &s), 1.0);
        assert!((bleu(&s, &s, 4) - 1.0).abs() < 1e-12, "{text}");
        let e = emb_f1(&s, &s, &Orthogonal::default()).unwrap();
        assert_eq!((e.precision, e.recall, e.f1), (1.0, 1.0, 1.0));
    }
}

#[test]
fn bleu_is_directional() {
    let a = seq(&words("a b c d e f"));
    let b = seq(&words("a b c x"));
    assert_ne!(bleu(&a, &b, 4), bleu(&b, &a, 4));
    assert_eq!(rouge_l(&a, &b), rouge_l(&b, &a));
}

#[test]
fn emb_f1_orthogonal_matches_overlap_formula() {
    let all = oracle::all_sequences(&["a", "b", "c", "d"], 4);
    let embedder = Orthogonal::default();
    for c in all.iter().step_by(3) {
        for r in all.iter().step_by(5) {
            let got = emb_f1(&seq(c), &seq(r), &embedder).unwrap();
            let want = oracle::orthogonal_emb_f1(c, r);
            assert!((got.f1 - want).abs() < 1e-9, "{c:?} vs {r:?}: {} != {want}", got.f1);
        }
    }
}

#[test]
fn emb_f1_surfaces_unreachable_embedder() {
    let s = seq(&words("a b"));
    assert!(matches!(emb_f1(&s, &s, &Down), Err(EmbedError::EmbedderUnreachable(_))));
    // empty input never touches the embedder
    assert_eq!(emb_f1(&TokenSeq::default(), &s, &Down).unwrap().f1, 0.0);
}

#[test]
fn tokens_ignore_formatting() {
    let compact = r#"{"type":"object","properties":{"filmThickness":{"type":"number"}}}"#;
    let spaced = "{\n  \"type\" : \"object\" ,\n\t\"properties\": { \"filmThickness\" : {\"type\": \"number\"} } }";
    assert_eq!(tokenize_schema(compact), tokenize_schema(spaced));
    assert_eq!(
        tokenize_schema(compact).tokens(),
        words("type object properties film thickness type number")
    );
}

const A: &str = r#"{"type":"object","properties":{"temperature":{"type":"number","description":"reactor temperature"},"precursor":{"type":"string","description":"precursor name"}}}"#;
const B: &str = r#"{"type":"object","properties":{"temperature":{"type":"number","description":"deposition temperature"},"pulseTime":{"type":"number"}}}"#;

#[test]
fn field_modes() {
    let doc = parse_schema(A).unwrap();
    assert_eq!(schema_tokens(&doc, FieldMode::Descriptions).tokens(), words("precursor name reactor temperature"));
    assert_eq!(schema_tokens(&doc, FieldMode::Full), tokenize_schema(&serialize_canonical(&doc)));
}

#[test]
fn pairwise_report_layout() {
    let docs = vec![
        ("llama".to_string(), parse_schema(A).unwrap()),
        ("gpt".to_string(), parse_schema(B).unwrap()),
        ("clone".to_string(), parse_schema(A).unwrap()),
    ];
    let report = build_pairwise_report(&docs, "Generate", FieldMode::Full, Some(&Orthogonal::default())).unwrap();
    let cells: usize = report.cells.values().map(|m| m.len()).sum();
    assert_eq!(cells, 6);
    for m in &report.models {
        assert!(report.cell(m, m).is_none());
    }
    let same = report.cell("llama", "clone").unwrap();
    assert_eq!((same.rouge_l, same.bleu, same.emb_f1), (1.0, 1.0, Some(1.0)));
    let (ab, ba) = (report.cell("llama", "gpt").unwrap(), report.cell("gpt", "llama").unwrap());
    assert_eq!(ab.rouge_l, ba.rouge_l);
    assert_eq!(ab.emb_f1, ba.emb_f1);

    let table = report.render_table();
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("Stage: Generate"));
    assert_eq!(lines[2].matches("RougeL").count(), 3);
    assert_eq!(lines[2].matches("Bleu").count(), 3);
    assert_eq!(lines[2].matches("Emb-F1").count(), 3);
    let llama_row = lines.iter().find(|l| l.starts_with("llama")).unwrap();
    assert_eq!(llama_row.split('|').nth(1).unwrap().split_whitespace().collect::<Vec<_>>(), ["-", "-", "-"]);

    let v = serde_json::to_value(&report).unwrap();
    assert!(v["cells"]["gpt"]["llama"]["bleu"].is_number());
    assert!(v["cells"]["gpt"].get("gpt").is_none());

    let plain = build_pairwise_report(&docs, "Generate", FieldMode::Full, None).unwrap();
    assert_eq!(plain.cell("gpt", "llama").unwrap().emb_f1, None);
    assert!(plain.render_table().contains("n/a"));
}

fn arb_seq() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(&["a", "b", "c", "d", "e"][..]), 0..10)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

proptest! {
    #[test]
    fn metrics_in_unit_interval_and_symmetric(c in arb_seq(), r in arb_seq()) {
        let (c, r) = (seq(&c), seq(&r));
        let e = Orthogonal::default();
        let ro = rouge_l(&c, &r);
        let bl = bleu(&c, &r, 4);
        let f = emb_f1(&c, &r, &e).unwrap();
        for v in [ro, bl, f.precision, f.recall, f.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(ro, rouge_l(&r, &c));
        prop_assert_eq!(f.f1, emb_f1(&r, &c, &e).unwrap().f1);
    }
}
