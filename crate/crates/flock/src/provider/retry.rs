use std::sync::Arc;
use std::time::Duration;

use rand::Rng;

use super::{ChatRequest, ChatResponse, Provider, ProviderError};

/// Exponential backoff for rate-limited and transient failures.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base: Duration,
    pub factor: f64,
    /// Relative jitter, e.g. 0.2 for +-20%.
    pub jitter: f64,
    pub cap: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base: Duration::from_millis(250),
            factor: 2.0,
            jitter: 0.2,
            cap: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based), before jitter.
    pub fn nominal_delay(&self, retry: u32) -> Duration {
        let secs = self.base.as_secs_f64() * self.factor.powi(retry as i32);
        Duration::from_secs_f64(secs.min(self.cap.as_secs_f64()))
    }

    /// Nominal delay scaled by a random factor in `[1 - jitter, 1 + jitter]`,
    /// still capped.
    pub fn delay(&self, retry: u32, rng: &mut impl Rng) -> Duration {
        let nominal = self.nominal_delay(retry).as_secs_f64();
        let factor = if self.jitter > 0.0 {
            rng.random_range(1.0 - self.jitter..=1.0 + self.jitter)
        } else {
            1.0
        };
        Duration::from_secs_f64((nominal * factor).min(self.cap.as_secs_f64()))
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error or the
    /// retry budget is spent.
    pub fn run<T>(
        &self,
        sleeper: &Sleeper,
        mut op: impl FnMut() -> Result<T, ProviderError>,
    ) -> Result<T, ProviderError> {
        let mut retry = 0;
        loop {
            match op() {
                Err(e) if e.kind.is_retryable() && retry < self.max_retries => {
                    let d = self.delay(retry, &mut rand::rng());
                    sleeper(d);
                    retry += 1;
                }
                other => return other,
            }
        }
    }
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Applies a [`RetryPolicy`] to every call of the inner provider.
pub struct Retrying {
    pub inner: Arc<dyn Provider>,
    pub policy: RetryPolicy,
    pub sleeper: Sleeper,
}

impl Retrying {
    pub fn new(inner: Arc<dyn Provider>, policy: RetryPolicy) -> Self {
        Retrying {
            inner,
            policy,
            sleeper: Arc::new(std::thread::sleep),
        }
    }
}

impl Provider for Retrying {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.policy.run(&self.sleeper, || self.inner.chat(req))
    }

    fn embed(&self, model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        self.policy
            .run(&self.sleeper, || self.inner.embed(model_id, texts))
    }
}
