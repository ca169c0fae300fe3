use evoforge_core::parse::{parse_questioner_output, parse_solver_output};
use evoforge_core::perturb::{apply_permutation, make_permutation, sample_window};
use evoforge_core::rewards::interval_iou;
use evoforge_core::seed::task_rng;
use evoforge_core::{ShuffleStrategy, VideoRef};
use evoforge_engine::mock::{classify, is_shuffled, MockEngine, MockScript, RequestKind};
use evoforge_engine::modelclient::{build_questioner_request, build_solver_request};

use crate::common::{endpoint_config, numeric_profile};

fn solver_engine(p: f64) -> MockEngine {
    MockEngine::new(
        MockScript::single("count", numeric_profile("How many birds {n} land?", "3", p, 0.1)),
        17,
    )
}

fn correct_fraction(engine: &MockEngine, video: &VideoRef, n: usize) -> f64 {
    let mut req = build_solver_request(video, "How many birds 55 land?", &endpoint_config("solver", 1));
    req.n = n as u32;
    let out = engine.respond(&req).unwrap();
    let correct = out
        .iter()
        .filter(|raw| parse_solver_output(raw).answer.as_deref() == Some("3"))
        .count();
    correct as f64 / n as f64
}

#[test]
fn correctness_rate_follows_the_script() {
    let video = VideoRef::synthetic("v", 16, 2.0);
    let rate = correct_fraction(&solver_engine(0.7), &video, 10_000);
    assert!((rate - 0.7).abs() <= 0.01, "rate {rate}");
    assert_eq!(correct_fraction(&solver_engine(1.0), &video, 500), 1.0);

    let perm = make_permutation(16, ShuffleStrategy::Random, &mut task_rng(1, "perm"));
    let shuffled = apply_permutation(&video, &perm).unwrap();
    let rate = correct_fraction(&solver_engine(0.7), &shuffled, 100_000);
    assert!((rate - 0.1).abs() <= 0.01, "shuffled rate {rate}");
}

#[test]
fn wrong_numeric_answers_are_distinct_from_the_correct_one() {
    let video = VideoRef::synthetic("v", 16, 2.0);
    let mut req = build_solver_request(&video, "How many birds 55 land?", &endpoint_config("solver", 1));
    req.n = 200;
    for raw in solver_engine(0.0).respond(&req).unwrap() {
        let answer = parse_solver_output(&raw).answer.unwrap();
        assert_ne!(answer.parse::<f64>().unwrap(), 3.0);
    }
}

#[test]
fn echoed_span_grounds_the_window_exactly() {
    let engine = MockEngine::new(
        MockScript::single(
            "bounce",
            numeric_profile("How often does ball {n} bounce between {ts}s and {te}s?", "2", 1.0, 0.0),
        ),
        3,
    );
    let video = VideoRef::synthetic("v", 32, 2.0);
    let ep = endpoint_config("q", 1);
    for trial in 0..20 {
        let window = sample_window(&video, 8, &mut task_rng(trial, "w")).unwrap();
        let clip = video.clip(&window);
        let qreq = build_questioner_request(&clip, &ep);
        assert_eq!(classify(&qreq), Some(RequestKind::Questioner));
        assert_eq!(qreq.attachments().len(), 8);
        let question = parse_questioner_output(&engine.respond(&qreq).unwrap()[0]).unwrap();
        let sreq = build_solver_request(&video, &question.question_text, &ep);
        assert_eq!(classify(&sreq), Some(RequestKind::Solver));
        let answer = parse_solver_output(&engine.respond(&sreq).unwrap()[0]);
        assert_eq!(answer.answer.as_deref(), Some("2"));
        assert_eq!(interval_iou(answer.segment.unwrap(), window.segment()), 1.0);
    }
}

#[test]
fn request_views_differ_only_in_frames() {
    let video = VideoRef::synthetic("v", 16, 2.0);
    let ep = endpoint_config("solver", 1);
    let perm = make_permutation(16, ShuffleStrategy::Random, &mut task_rng(2, "perm"));
    let shuffled = apply_permutation(&video, &perm).unwrap();
    let original = build_solver_request(&video, "How many?", &ep);
    let permuted = build_solver_request(&shuffled, "How many?", &ep);
    assert_eq!(original.prompt_text(), permuted.prompt_text());
    assert_eq!(original.attachments().len(), 16);
    assert_eq!(permuted.attachments().len(), 16);
    assert_ne!(original.attachments(), permuted.attachments());
    let mut a = original.attachments();
    let mut b = permuted.attachments();
    a.sort();
    b.sort();
    assert_eq!(a, b);
    assert!(!is_shuffled(&original));
    assert!(is_shuffled(&permuted));
}

#[test]
fn script_toml_round_trips_and_rejects_bad_profiles() {
    let text = r#"
[profiles.count]
question_type = "numerical"
questioner_templates = ["How many cups {n} are stacked?"]
correct_answer = "4"
p_correct_orig = 0.8
p_correct_shuffled = 0.3
segment_behavior = { fixed = [1.0, 2.5] }
"#;
    let script = MockScript::from_toml(text).unwrap();
    assert_eq!(script.profiles["count"].p_correct_orig, 0.8);
    let bad = text.replace("0.8", "1.8");
    assert!(MockScript::from_toml(&bad).is_err());
    let unknown = format!("{text}surprise = 1\n");
    assert!(MockScript::from_toml(&unknown).is_err());
}

