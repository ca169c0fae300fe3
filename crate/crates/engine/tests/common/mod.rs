#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use evoforge_core::{PipelineConfig, QuestionType, VideoRef};
use evoforge_engine::mock::{MockBackend, MockEngine, MockProfile, MockScript, SegmentBehavior};
use evoforge_engine::modelclient::{Endpoint, EndpointConfig};
use evoforge_engine::pipeline::Clients;

pub fn numeric_profile(template: &str, correct: &str, p_orig: f64, p_shuf: f64) -> MockProfile {
    MockProfile {
        weight: 1.0,
        question_type: QuestionType::Numerical,
        questioner_templates: vec![template.to_string()],
        correct_answer: correct.to_string(),
        answer_pool: vec![],
        p_correct_orig: p_orig,
        p_correct_shuffled: p_shuf,
        segment_behavior: SegmentBehavior::EchoWindow,
        questioner_format_error_rate: 0.0,
        solver_format_error_rate: 0.0,
    }
}

pub fn endpoint_config(name: &str, max_in_flight: usize) -> EndpointConfig {
    EndpointConfig {
        max_in_flight,
        retry_backoff: Duration::ZERO,
        ..EndpointConfig::new(format!("mock://{name}"), name)
    }
}

/// Both roles served in-process by one scripted engine.
pub fn mock_clients(script: MockScript, seed: u64) -> Clients {
    let engine = Arc::new(MockEngine::new(script, seed));
    let backend = Arc::new(MockBackend::new(engine));
    Clients::new(
        Endpoint::new(endpoint_config("questioner", 16), backend.clone()),
        Endpoint::new(endpoint_config("solver", 16), backend),
    )
}

pub fn videos(count: usize, frames: usize) -> Vec<VideoRef> {
    (0..count)
        .map(|i| VideoRef::synthetic(format!("vid{i:04}"), frames, 2.0))
        .collect()
}

/// A script mixing a temporal, a static and a hard profile, so curation
/// keeps some examples and rejects others.
pub fn mixed_script() -> MockScript {
    let temporal = numeric_profile(
        "How many times does the ball {n} bounce between {ts}s and {te}s?",
        "4",
        0.7,
        0.2,
    );
    let static_profile = MockProfile {
        question_type: QuestionType::MultipleChoice,
        correct_answer: "B".into(),
        answer_pool: vec![
            evoforge_engine::mock::WeightedAnswer {
                answer: "A".into(),
                weight: 1.0,
            },
            evoforge_engine::mock::WeightedAnswer {
                answer: "C".into(),
                weight: 1.0,
            },
        ],
        ..numeric_profile(
            "What colour is object {n} in the scene from {ts}s to {te}s? A. red B. blue C. green D. white",
            "B",
            0.9,
            0.9,
        )
    };
    let hard = MockProfile {
        question_type: QuestionType::Regression,
        questioner_format_error_rate: 0.1,
        solver_format_error_rate: 0.1,
        segment_behavior: SegmentBehavior::None,
        ..numeric_profile("How far does cart {n} travel in metres?", "12.5", 0.5, 0.3)
    };
    MockScript {
        profiles: BTreeMap::from([
            ("hard".to_string(), hard),
            ("static".to_string(), static_profile),
            ("temporal".to_string(), temporal),
        ]),
    }
}

pub fn small_config() -> PipelineConfig {
    PipelineConfig {
        run_id: Some("test".into()),
        iterations: 1,
        steps_per_phase: 2,
        videos_per_step: 4,
        examples_per_step: 4,
        group_size: 4,
        solver_samples: 6,
        rng_seed: 11,
        ..PipelineConfig::default()
    }
}

/// Every file under `root`, relative path to contents, sorted.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
