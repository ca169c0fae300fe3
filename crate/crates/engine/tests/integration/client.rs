use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use evoforge_core::seed::fork_seed;
use evoforge_core::VideoRef;
use evoforge_engine::mock::{MockBackend, MockEngine, MockScript};
use evoforge_engine::modelclient::{
    build_solver_request, BackendError, ChatBackend, ChatRequest, Endpoint, EndpointError,
};
use evoforge_engine::{sample_completions, serve_mock};

use crate::common::{endpoint_config, numeric_profile};

fn script() -> MockScript {
    MockScript::single("count", numeric_profile("How many birds {n} land?", "3", 0.7, 0.2))
}

fn request() -> ChatRequest {
    let video = VideoRef::synthetic("v", 16, 2.0);
    build_solver_request(&video, "How many birds 12 land?", &endpoint_config("solver", 4))
}

fn in_process(max_in_flight: usize) -> Endpoint {
    let backend = Arc::new(MockBackend::new(Arc::new(MockEngine::new(script(), 5))));
    Endpoint::new(endpoint_config("solver", max_in_flight), backend)
}

/// Fails transiently for a fixed set of request seeds; counts attempts.
struct Flaky {
    inner: MockBackend,
    fail_always: HashSet<u64>,
    fail_first: bool,
    seen: Mutex<HashSet<u64>>,
    attempts: AtomicUsize,
}

#[async_trait]
impl ChatBackend for Flaky {
    async fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        let seed = request.seed.unwrap();
        if self.fail_always.contains(&seed) {
            return Err(BackendError::Transient("injected".into()));
        }
        if self.fail_first && self.seen.lock().unwrap().insert(seed) {
            return Err(BackendError::Transient("first attempt".into()));
        }
        self.inner.complete(request).await
    }
}

fn flaky(fail_always: HashSet<u64>, fail_first: bool) -> Arc<Flaky> {
    Arc::new(Flaky {
        inner: MockBackend::new(Arc::new(MockEngine::new(script(), 5))),
        fail_always,
        fail_first,
        seen: Mutex::default(),
        attempts: AtomicUsize::new(0),
    })
}

#[tokio::test]
async fn repeated_sampling_is_reproducible() {
    let ep = in_process(4);
    let a = sample_completions(&ep, &request(), 10, 42).await.unwrap();
    let b = sample_completions(&ep, &request(), 10, 42).await.unwrap();
    assert_eq!(a.len(), 10);
    assert_eq!(a, b);
    let c = sample_completions(&ep, &request(), 10, 43).await.unwrap();
    assert_ne!(a, c);
    let distinct: HashSet<_> = a.iter().collect();
    assert!(distinct.len() > 1, "samples of one prompt should differ");
}

#[tokio::test]
async fn persistent_failures_become_empty_samples_in_place() {
    let seed = 42;
    let failing: HashSet<u64> = [3, 7].iter().map(|i: &usize| fork_seed(seed, &i.to_string())).collect();
    let backend = flaky(failing, false);
    let ep = Endpoint::new(
        evoforge_engine::EndpointConfig {
            max_retries: 2,
            ..endpoint_config("solver", 4)
        },
        backend.clone(),
    );
    let out = sample_completions(&ep, &request(), 10, seed).await.unwrap();
    let reference = sample_completions(&in_process(4), &request(), 10, seed).await.unwrap();
    for i in 0..10 {
        if i == 3 || i == 7 {
            assert_eq!(out[i], "");
        } else {
            assert_eq!(out[i], reference[i]);
        }
    }
    assert_eq!(backend.attempts.load(Ordering::SeqCst), 8 + 2 * 3);
}

#[tokio::test]
async fn transient_failures_recover_on_retry() {
    let backend = flaky(HashSet::new(), true);
    let ep = Endpoint::new(endpoint_config("solver", 4), backend.clone());
    let out = sample_completions(&ep, &request(), 10, 1).await.unwrap();
    let reference = sample_completions(&in_process(4), &request(), 10, 1).await.unwrap();
    assert_eq!(out, reference);
    assert_eq!(backend.attempts.load(Ordering::SeqCst), 20);
}

struct Slow {
    current: AtomicUsize,
    peak: AtomicUsize,
}

#[async_trait]
impl ChatBackend for Slow {
    async fn complete(&self, _request: &ChatRequest) -> Result<String, BackendError> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        tokio::time::sleep(Duration::from_millis(10)).await;
        self.current.fetch_sub(1, Ordering::SeqCst);
        Ok("ok".into())
    }
}

#[tokio::test]
async fn in_flight_requests_stay_within_the_bound() {
    let backend = Arc::new(Slow {
        current: AtomicUsize::new(0),
        peak: AtomicUsize::new(0),
    });
    let ep = Endpoint::new(endpoint_config("solver", 4), backend.clone());
    let req = request();
    let (a, b) = tokio::join!(
        sample_completions(&ep, &req, 20, 1),
        sample_completions(&ep, &req, 20, 2)
    );
    assert_eq!(a.unwrap().len() + b.unwrap().len(), 40);
    let peak = backend.peak.load(Ordering::SeqCst);
    assert!(peak <= 4 && peak >= 1, "peak {peak}");
}

#[tokio::test]
async fn closed_port_is_unreachable() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let ep = Endpoint::http(evoforge_engine::EndpointConfig {
        base_url: format!("http://127.0.0.1:{port}/v1"),
        timeout: Duration::from_secs(5),
        ..endpoint_config("solver", 4)
    })
    .unwrap();
    let err = sample_completions(&ep, &request(), 3, 1).await.unwrap_err();
    assert!(matches!(err, EndpointError::EndpointUnreachable { .. }), "{err}");
}

#[tokio::test]
async fn http_mock_matches_in_process_mock() {
    let server = serve_mock(script(), 5, "127.0.0.1:0".parse().unwrap()).await.unwrap();
    let ep = Endpoint::http(evoforge_engine::EndpointConfig {
        base_url: server.base_url(),
        ..endpoint_config("solver", 4)
    })
    .unwrap();
    let over_http = sample_completions(&ep, &request(), 10, 9).await.unwrap();
    let local = sample_completions(&in_process(4), &request(), 10, 9).await.unwrap();
    assert_eq!(over_http, local);

    let mut bad = request();
    bad.messages[0].content.clear();
    let err = sample_completions(&ep, &bad, 1, 9).await.unwrap_err();
    assert!(matches!(err, EndpointError::Rejected { .. }), "{err}");
    server.shutdown().await.unwrap();
}
