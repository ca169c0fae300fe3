use evoforge_core::{CuratedExample, FrameWindow, QuestionRecord, QuestionType};
use evoforge_engine::pipeline::store::{read_dataset, write_dataset, StoreError};
use proptest::prelude::*;
use proptest::strategy::ValueTree;

fn curated_example() -> impl Strategy<Value = CuratedExample> {
    (
        "[a-z0-9_-]{1,12}",
        (0usize..40, 1usize..16, 0.0f64..30.0, 0.0f64..30.0),
        prop::sample::select(QuestionType::ALL.to_vec()),
        "\\PC{0,60}",
        "\\PC{0,12}",
        0.0f64..=1.0,
        1u32..5,
        prop::option::of(("[a-z]{1,8}", any::<i64>())),
    )
        .prop_map(|(video_id, (start, len, a, b), qtype, text, answer, confidence, iteration, extra)| {
            let window = FrameWindow {
                start_index: start,
                end_index: start + len - 1,
                t_s: a.min(b),
                t_e: a.max(b),
            };
            let mut fields = serde_json::Map::new();
            if let Some((key, value)) = extra {
                fields.insert(format!("x_{key}"), value.into());
            }
            CuratedExample {
                video_id,
                window,
                question: QuestionRecord {
                    question_type: qtype,
                    question_text: text,
                    reference_answer: answer.clone(),
                    source_window: Some(window),
                    raw_output: String::new(),
                },
                pseudo_answer: answer,
                confidence,
                iteration,
                extra: fields,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn datasets_round_trip_field_for_field(examples in prop::collection::vec(curated_example(), 1..4)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curated.jsonl");
        write_dataset(&path, &examples).unwrap();
        let back = read_dataset(&path).unwrap();
        prop_assert_eq!(&back, &examples);
        let first = std::fs::read(&path).unwrap();
        write_dataset(&path, &back).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), first);
    }
}

fn sample_lines() -> Vec<String> {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    (0..3)
        .map(|_| {
            let ex = curated_example().new_tree(&mut runner).unwrap().current();
            serde_json::to_string(&ex).unwrap()
        })
        .collect()
}

#[test]
fn empty_file_is_an_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    std::fs::write(&path, "").unwrap();
    assert!(read_dataset(&path).unwrap().is_empty());
}

#[test]
fn truncated_final_line_is_reported_by_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.jsonl");
    let lines = sample_lines();
    let last = &lines[2][..lines[2].len() / 2];
    std::fs::write(&path, format!("{}\n{}\n{}", lines[0], lines[1], last)).unwrap();
    match read_dataset(&path) {
        Err(StoreError::Malformed { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a malformed-line error, got {other:?}"),
    }
}

#[test]
fn unknown_fields_survive_a_rewrite() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("extra.jsonl");
    let mut value: serde_json::Value = serde_json::from_str(&sample_lines()[0]).unwrap();
    value["reviewer"] = serde_json::json!({"name": "lin", "score": 4});
    std::fs::write(&path, format!("{value}\n")).unwrap();
    let examples = read_dataset(&path).unwrap();
    write_dataset(&path, &examples).unwrap();
    let back: serde_json::Value = serde_json::from_str(std::fs::read_to_string(&path).unwrap().trim()).unwrap();
    assert_eq!(back["reviewer"], value["reviewer"]);
    assert_eq!(back, value);
}
