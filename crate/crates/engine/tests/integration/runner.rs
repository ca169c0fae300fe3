use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use evoforge_core::{BatchRecord, PipelineConfig, RewardWeights, Role};
use evoforge_engine::pipeline::hook::ack_path;
use evoforge_engine::pipeline::metrics::{compute_iteration_metrics, IterationMetrics};
use evoforge_engine::pipeline::store::{read_dataset, read_json, read_jsonl};
use evoforge_engine::pipeline::{Checkpoint, PipelineError, Runner};
use evoforge_engine::score::{score_solver_outputs, ScoreInput};
use evoforge_engine::Phase;

use crate::common::{mixed_script, mock_clients, small_config, snapshot, videos};

fn runner(cfg: PipelineConfig, dir: &std::path::Path) -> Runner {
    Runner::new(cfg, mock_clients(mixed_script(), 8), videos(6, 16), dir).unwrap()
}

fn long_config() -> PipelineConfig {
    PipelineConfig {
        steps_per_phase: 8,
        videos_per_step: 2,
        examples_per_step: 2,
        solver_samples: 4,
        ..small_config()
    }
}

#[tokio::test]
async fn resume_after_a_kill_reproduces_the_uninterrupted_run() {
    let whole = tempfile::tempdir().unwrap();
    let state = runner(long_config(), whole.path()).run(false).await.unwrap();
    assert!(state.finished);
    assert_eq!(state.batches.len(), 16);

    let split = tempfile::tempdir().unwrap();
    let state = runner(long_config(), split.path()).run_until(false, Some(7)).await.unwrap();
    assert_eq!(
        state.completed,
        Some(Checkpoint { iteration: 1, phase: Phase::Questioner, step: 7 })
    );
    // a half-written step 8 left behind by the killed process
    let partial = runner(long_config(), split.path()).layout().questioner_batch(1, 8);
    std::fs::write(&partial, "{\"group_id\": \"i1-q008").unwrap();

    let resumed = runner(long_config(), split.path()).run(true).await.unwrap();
    assert!(resumed.finished);
    assert_eq!(resumed.batches[7], "iter1/questioner/batch008.jsonl");
    let mut names = resumed.batches.clone();
    names.dedup();
    assert_eq!(names.len(), 16);
    assert_eq!(snapshot(whole.path()), snapshot(split.path()));
}

#[tokio::test]
async fn run_directory_guards_against_misuse() {
    let dir = tempfile::tempdir().unwrap();
    let err = runner(small_config(), dir.path()).run(true).await.unwrap_err();
    assert!(matches!(err, PipelineError::NotStarted(_)));
    runner(small_config(), dir.path()).run_until(false, Some(1)).await.unwrap();
    let err = runner(small_config(), dir.path()).run(false).await.unwrap_err();
    assert!(matches!(err, PipelineError::AlreadyStarted(_)));
    let changed = PipelineConfig {
        lambda_q: 0.2,
        ..small_config()
    };
    let err = runner(changed, dir.path()).run(true).await.unwrap_err();
    assert!(matches!(err, PipelineError::ConfigChanged(_)));
}

#[tokio::test]
async fn no_hook_writes_every_unit() {
    let dir = tempfile::tempdir().unwrap();
    let r = runner(small_config(), dir.path());
    let state = r.run(false).await.unwrap();
    let layout = r.layout();
    for step in 1..=2 {
        assert!(layout.questioner_batch(1, step).exists());
        assert!(layout.solver_batch(1, step).exists());
    }
    assert!(layout.curated(1).exists());
    assert!(layout.metrics(1).exists());
    assert_eq!(state.datasets, vec!["iter1/curated.jsonl".to_string()]);
}

#[tokio::test]
async fn file_hook_waits_for_acknowledgement() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        trainer_hook: "file".into(),
        trainer_timeout_s: 0.3,
        ..small_config()
    };
    let err = runner(cfg.clone(), dir.path()).run(false).await.unwrap_err();
    assert!(matches!(err, PipelineError::Hook(_)), "{err}");
    let r = runner(cfg.clone(), dir.path());
    let state: evoforge_engine::pipeline::RunState = read_json(&r.layout().state()).unwrap();
    assert_eq!(state.completed, None);
    let first = r.layout().questioner_batch(1, 1);
    assert!(first.exists());

    // a trainer that acknowledges every batch it sees
    let root = dir.path().to_path_buf();
    let trainer = tokio::spawn(async move {
        loop {
            for entry in walk(&root) {
                if entry.extension().is_some_and(|e| e == "jsonl") && entry.to_string_lossy().contains("batch") {
                    let _ = std::fs::write(ack_path(&entry), "");
                }
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    });
    let state = runner(cfg, dir.path()).run(true).await.unwrap();
    trainer.abort();
    assert!(state.finished);
    assert_eq!(state.batches.len(), 4);
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    if let Ok(entries) = std::fs::read_dir(dir) {
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
    }
    out
}

#[tokio::test]
async fn http_hook_receives_one_notice_per_batch() {
    use axum::{extract::State, routing::post, Json, Router};
    let seen = Arc::new(AtomicUsize::new(0));
    let app = Router::new()
        .route(
            "/batch",
            post(|State(seen): State<Arc<AtomicUsize>>, Json(body): Json<serde_json::Value>| async move {
                assert!(body["records"].as_u64().unwrap() > 0);
                seen.fetch_add(1, Ordering::SeqCst);
                "ok"
            }),
        )
        .with_state(seen.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        trainer_hook: format!("http://{addr}/batch"),
        trainer_timeout_s: 10.0,
        ..small_config()
    };
    let state = runner(cfg, dir.path()).run(false).await.unwrap();
    assert!(state.finished);
    assert_eq!(seen.load(Ordering::SeqCst), 4);
}

#[tokio::test]
async fn persisted_files_reproduce_metrics_and_rewards() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let r = runner(cfg.clone(), dir.path());
    r.run(false).await.unwrap();
    let layout = r.layout();

    let cached: IterationMetrics = read_json(&layout.metrics(1)).unwrap();
    let recomputed = compute_iteration_metrics(layout, 1, cfg.steps_per_phase).unwrap();
    assert_eq!(serde_json::to_value(&cached).unwrap(), serde_json::to_value(&recomputed).unwrap());

    let dataset = read_dataset(&layout.curated(1)).unwrap();
    assert!(!dataset.is_empty(), "mixed script should keep some examples");
    for example in &dataset {
        assert!(cfg.s_min() <= example.confidence && example.confidence <= cfg.s_max());
    }
    let records: Vec<BatchRecord> = read_jsonl(&layout.solver_batch(1, 1)).unwrap();
    assert!(records.iter().all(|r| r.role == Role::Solver));
    let inputs: Vec<ScoreInput> = records
        .iter()
        .map(|r| serde_json::from_value(serde_json::to_value(r).unwrap()).unwrap())
        .collect();
    let scored = score_solver_outputs(&inputs, &dataset, &RewardWeights::from(&cfg)).unwrap();
    for (record, score) in records.iter().zip(&scored) {
        assert_eq!(score.reward, record.reward_components);
    }
}
