mod common;

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use flock::provider::{
    ChatRequest, ChatResponse, ErrorKind, Provider, ProviderError, RetryPolicy, Retrying,
};
use flock::runtime::Cache;
use flock_core::batch::{backoff_sequence, BatchMode};
use flock_core::engine::{NodeSettings, Overrides};
use flock_core::{DataType, Table, Value};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

use common::{fixture_session, mock};

fn overrides(mode: BatchMode) -> Overrides {
    Overrides {
        default: NodeSettings {
            batch_mode: Some(mode),
            ..NodeSettings::default()
        },
        ..Overrides::default()
    }
}

fn cells() -> impl Strategy<Value = Vec<Option<String>>> {
    prop::collection::vec(
        prop::option::weighted(0.85, "(join|hash|sort|plan) [a-c]{0,2}"),
        1..40,
    )
}

fn session_with(
    rows: &[Option<String>],
    m: flock::provider::MockProvider,
) -> flock::session::Session {
    let mut s = fixture_session(Arc::new(m), Arc::new(Cache::in_memory()));
    let data = rows
        .iter()
        .map(|c| vec![c.clone().map_or(Value::Null, Value::Text)])
        .collect();
    s.db.insert_table(Table::from_rows("r", vec![("t".into(), DataType::Text)], data).unwrap());
    s
}

const SCALAR: &str = "SELECT t, llm_complete({'model': 'gpt-4o'}, {'prompt': 'Describe'}, {'t': t}) AS a, llm_filter({'model': 'gpt-4o'}, {'prompt': 'mentions join'}, {'t': t}) AS f FROM r";

/// Succeeds after `fail` transient errors.
struct Flaky {
    fail: usize,
    calls: Mutex<usize>,
}

impl Provider for Flaky {
    fn chat(&self, _: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let mut c = self.calls.lock().unwrap();
        *c += 1;
        if *c <= self.fail {
            Err(ProviderError::new(ErrorKind::RateLimited, "429"))
        } else {
            Ok(ChatResponse {
                text: "ok".into(),
                prompt_tokens: 0,
                completion_tokens: 0,
            })
        }
    }

    fn embed(&self, _: &str, _: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        unreachable!()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn results_do_not_depend_on_batch_size(rows in cells(), n in 1usize..12) {
        let auto = session_with(&rows, mock()).query(SCALAR, &Overrides::default()).unwrap();
        let manual = session_with(&rows, mock()).query(SCALAR, &overrides(BatchMode::Manual(n))).unwrap();
        prop_assert_eq!(&auto.result.rows, &manual.result.rows);
        // Each distinct non-NULL input is sent once per function.
        let distinct: BTreeSet<&String> = rows.iter().flatten().collect();
        prop_assert_eq!(auto.result.stats.tuples_sent(), 2 * distinct.len());
        for (row, cell) in auto.result.rows.iter().zip(&rows) {
            if cell.is_none() {
                prop_assert_eq!(&row[1], &Value::Null);
            }
        }
    }

    #[test]
    fn overflow_attempts_follow_the_shrink_law(n in 2usize..120, fits in 1usize..120) {
        let m = Arc::new(mock().overflow_above(fits));
        let mut s = fixture_session(Arc::clone(&m), Arc::new(Cache::in_memory()));
        let data = (0..n).map(|i| vec![Value::Text(format!("row {i}"))]).collect();
        s.db.insert_table(Table::from_rows("r", vec![("t".into(), DataType::Text)], data).unwrap());
        let sql = "SELECT llm_complete({'model': 'gpt-4o'}, {'prompt': 'Describe'}, {'t': t}) FROM r";
        let out = s.query(sql, &overrides(BatchMode::Manual(n))).unwrap();
        let attempts: Vec<usize> = m.requests().iter().map(|r| r.tuple_count).collect();
        let expected = backoff_sequence(n, fits);
        prop_assert_eq!(&attempts[..expected.len()], &expected[..]);
        prop_assert!(out.result.rows.iter().all(|r| r[0] != Value::Null));
        prop_assert!(attempts[expected.len()..].iter().all(|a| *a <= fits));
    }

    #[test]
    fn jittered_delays_stay_in_bounds(retry in 0u32..12, seed in any::<u64>()) {
        let p = RetryPolicy::default();
        let nominal = p.nominal_delay(retry).as_secs_f64();
        let d = p.delay(retry, &mut StdRng::seed_from_u64(seed)).as_secs_f64();
        prop_assert!(d <= p.cap.as_secs_f64() + 1e-9);
        prop_assert!(d >= nominal * (1.0 - p.jitter) - 1e-9);
        prop_assert!(d <= nominal * (1.0 + p.jitter) + 1e-9);
        prop_assert!(p.nominal_delay(retry + 1) >= p.nominal_delay(retry));
    }

    #[test]
    fn retries_stop_at_the_budget(fail in 0usize..8, max in 0u32..5) {
        let inner = Arc::new(Flaky { fail, calls: Mutex::new(0) });
        let mut r = Retrying::new(inner.clone(), RetryPolicy { max_retries: max, ..RetryPolicy::default() });
        r.sleeper = Arc::new(|_: Duration| {});
        let req = ChatRequest {
            model_id: "m".into(),
            system_text: String::new(),
            user_text: String::new(),
            params: Default::default(),
            json_mode: false,
            tuple_count: 1,
        };
        let res = r.chat(&req);
        let calls = *inner.calls.lock().unwrap();
        prop_assert_eq!(res.is_ok(), fail <= max as usize);
        prop_assert_eq!(calls, fail.min(max as usize) + 1);
    }

    #[test]
    fn cache_round_trips_through_the_file(entries in prop::collection::btree_map("[a-z0-9]{1,12}", -1e6f64..1e6, 0..30)) {
        let dir = tempfile::tempdir().unwrap();
        {
            let c = Cache::open(dir.path()).unwrap();
            for (k, v) in &entries {
                c.put(k.clone(), Value::Double(*v)).unwrap();
            }
        }
        let c = Cache::open(dir.path()).unwrap();
        prop_assert_eq!(c.len(), entries.len());
        for (k, v) in &entries {
            let Some(Value::Double(got)) = c.get(k) else { panic!("missing {k}") };
            prop_assert_eq!(got.to_bits(), v.to_bits());
        }
    }
}
