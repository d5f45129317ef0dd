use sax_core::discovery::{discover, DiscoveryConfig};
use sax_core::eventlog::{parse_csv, CsvMapping};
use sax_core::graph::{KnowledgeGraph, ViewKind};
use sax_core::promptsynth::{render_from_ingredients, render_prompt, IngredientSelection, Ingredients, PromptError, PromptOptions};

const PROCESS: &str = "{('EVENT 1 START', 'a'): 2,\n('a', 'b'): 2,\n('b', 'EVENT 3 END'): 2}";
const CAUSAL: &str = "[\n{\"Cause\": \"a\", \"Effect\": \"b\", \"Coefficient\": \"1.41432045\"}\n]";
const XAI: &str = "{\n\"b\": {\"late {x}\": 0.5}\n}";
const QUESTION: &str = "why do cases that require calling a tow truck take so long to complete";

fn golden(name: &str) -> &'static str {
    match name {
        "xai" => include_str!("golden/xai.txt"),
        "process_xai" => include_str!("golden/process_xai.txt"),
        "process_causal_xai" => include_str!("golden/process_causal_xai.txt"),
        "process" => include_str!("golden/process.txt"),
        "process_causal" => include_str!("golden/process_causal.txt"),
        _ => unreachable!(),
    }
}

fn fill(template: &str, process: &str, causal: &str, xai: &str, question: &str) -> String {
    template
        .replace("<<process>>", process)
        .replace("<<causal>>", causal)
        .replace("<<xai>>", xai)
        .replace("<<question>>", question)
}

fn combos() -> [(&'static str, IngredientSelection); 5] {
    [
        ("xai", IngredientSelection::new(false, false, true)),
        ("process_xai", IngredientSelection::new(true, false, true)),
        ("process_causal_xai", IngredientSelection::ALL),
        ("process", IngredientSelection::new(true, false, false)),
        ("process_causal", IngredientSelection::new(true, true, false)),
    ]
}

#[test]
fn placeholders_reproduce_templates() {
    let ing = Ingredients { process: Some("<<process>>".into()), causal: Some("<<causal>>".into()), xai: Some("<<xai>>".into()) };
    for (name, sel) in combos() {
        let b = render_from_ingredients(&ing, sel, "<<question>>", PromptOptions::default()).unwrap();
        assert_eq!(b.rendered, golden(name), "{name}");
    }
}

#[test]
fn payloads_substituted_verbatim() {
    let ing = Ingredients { process: Some(PROCESS.into()), causal: Some(CAUSAL.into()), xai: Some(XAI.into()) };
    for (name, sel) in combos() {
        let b = render_from_ingredients(&ing, sel, QUESTION, PromptOptions::default()).unwrap();
        assert_eq!(b.rendered, fill(golden(name), PROCESS, CAUSAL, XAI, QUESTION), "{name}");
        assert_eq!(b.ingredient_digests.len(), sel.kinds().len());
    }
}

#[test]
fn question_is_trimmed() {
    let ing = Ingredients { process: Some(PROCESS.into()), ..Ingredients::default() };
    let sel = IngredientSelection::new(true, false, false);
    let b = render_from_ingredients(&ing, sel, "  why so slow \n", PromptOptions::default()).unwrap();
    assert_eq!(b.rendered, fill(golden("process"), PROCESS, "", "", "why so slow"));
}

#[test]
fn graph_prompt_matches_golden() {
    let csv = "case_id,activity,timestamp\n\
               1,a,2024-01-01T00:00:00Z\n1,b,2024-01-01T01:00:00Z\n\
               2,a,2024-01-02T00:00:00Z\n2,b,2024-01-02T02:00:00Z\n";
    let log = parse_csv(csv.as_bytes(), &CsvMapping::default()).unwrap();
    let mut g = KnowledgeGraph::from_log(&log).unwrap();
    g.infer_directly_follows();
    discover(&mut g, &DiscoveryConfig::default()).unwrap();
    let sel = IngredientSelection::new(true, false, false);
    let b = render_prompt(&g, sel, QUESTION, PromptOptions::default()).unwrap();
    assert_eq!(b.rendered, fill(golden("process"), PROCESS, "", "", QUESTION));
    assert_eq!(
        render_prompt(&g, IngredientSelection::new(true, true, false), QUESTION, PromptOptions::default()).unwrap_err(),
        PromptError::ViewAbsent(ViewKind::Causal)
    );
}
