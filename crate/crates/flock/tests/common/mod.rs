#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use flock::provider::MockProvider;
use flock::provider::Registry;
use flock::runtime::{Cache, Runtime};
use flock::session::{Session, SessionConfig};
use flock_core::engine::Overrides;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture_sql(name: &str) -> String {
    std::fs::read_to_string(fixtures().join("queries").join(name)).expect("fixture query")
}

/// Session over the fixture tables with the Query 1 resources defined.
pub fn fixture_session(mock: Arc<MockProvider>, cache: Arc<Cache>) -> Session {
    session_with_runtime(Runtime::new(cache).with_fallback(mock))
}

pub fn session_with_runtime(runtime: Runtime) -> Session {
    let mut s = Session::new(SessionConfig {
        workspace: fixtures(),
        registry: Registry::builtin(),
        store: None,
        runtime,
    })
    .expect("session");
    for script in ["setup.sql", "q1_resources.sql"] {
        s.run_script(&fixture_sql(script), &Overrides::default())
            .expect("fixture script");
    }
    s
}

/// Mock with embedding dimensions taken from the built-in registry.
pub fn mock() -> MockProvider {
    flock::session::registry_mock(&Registry::builtin())
}
