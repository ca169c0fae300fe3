//! Model access, the scripted mock endpoint and the self-play loop.

pub mod mock;
pub mod modelclient;
pub mod pipeline;
pub mod score;

pub use mock::{serve_mock, MockBackend, MockEngine, MockProfile, MockScript, SegmentBehavior};
pub use modelclient::{sample_completions, ChatBackend, ChatRequest, Endpoint, EndpointConfig};
pub use pipeline::{Clients, Phase, PipelineError, Runner};
