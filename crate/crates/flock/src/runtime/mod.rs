//! Inference runtime: dedup, cache probe, batch planning, bounded parallel
//! dispatch, overflow backoff and result reassembly for LLM plan nodes.

mod aggregate;
pub mod cache;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use flock_core::batch::{
    compute_budget, dedup, expand, plan_batches, shrink, BatchMode, CacheKeyParts,
};
use flock_core::engine::{BackendError, EffectiveSettings, LlmStats, SemanticBackend};
use flock_core::functions::{embedding_text, parse_answers, SemanticFunction};
use flock_core::plan::{LlmCall, NodeId};
use flock_core::prompt::{build_meta_prompt, OutputContract, SerializationFormat, Tuple};
use flock_core::Value;

use crate::provider::{ChatRequest, ErrorKind, Provider, ProviderError};
pub use cache::{clear_dir, Cache, CacheError};

/// Concurrent in-flight requests per job.
pub const DEFAULT_WORKERS: usize = 4;
/// Texts per embedding request.
pub const EMBED_BATCH_MAX: usize = 512;

pub struct Runtime {
    providers: BTreeMap<String, Arc<dyn Provider>>,
    /// Serves provider ids without their own entry.
    fallback: Option<Arc<dyn Provider>>,
    cache: Arc<Cache>,
    pub workers: usize,
    pub embed_batch_max: usize,
}

impl Runtime {
    pub fn new(cache: Arc<Cache>) -> Self {
        Runtime {
            providers: BTreeMap::new(),
            fallback: None,
            cache,
            workers: DEFAULT_WORKERS,
            embed_batch_max: EMBED_BATCH_MAX,
        }
    }

    pub fn with_provider(mut self, provider_id: &str, p: Arc<dyn Provider>) -> Self {
        self.providers.insert(provider_id.to_string(), p);
        self
    }

    /// Routes every provider id without an explicit entry to `p`.
    pub fn with_fallback(mut self, p: Arc<dyn Provider>) -> Self {
        self.fallback = Some(p);
        self
    }

    pub fn cache(&self) -> &Arc<Cache> {
        &self.cache
    }

    pub fn provider(&self, provider_id: &str) -> Result<Arc<dyn Provider>, BackendError> {
        self.providers
            .get(provider_id)
            .or(self.fallback.as_ref())
            .cloned()
            .ok_or_else(|| {
                BackendError::Other(format!("no provider configured for '{provider_id}'"))
            })
    }
}

fn provider_failure(e: ProviderError) -> BackendError {
    BackendError::Provider(e.to_string())
}

/// Runs `f(0..n)` on up to `workers` threads and returns results in index
/// order. After the first error no new items start.
pub(crate) fn parallel_map<R: Send>(
    n: usize,
    workers: usize,
    f: impl Fn(usize) -> Result<R, ProviderError> + Sync,
) -> Result<Vec<R>, ProviderError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<Result<R, ProviderError>>>> =
        Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, n) {
            s.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = f(i);
                if r.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let mut out = Vec::with_capacity(n);
    for slot in slots.into_inner().unwrap() {
        match slot {
            Some(Ok(r)) => out.push(r),
            Some(Err(e)) => return Err(e),
            None => {}
        }
    }
    if out.len() != n {
        return Err(ProviderError::new(ErrorKind::Fatal, "job aborted"));
    }
    Ok(out)
}

/// One output value; `cacheable` is false for NULLs standing in for a
/// failure.
#[derive(Debug, Clone)]
pub(crate) struct Answer {
    pub value: Value,
    pub cacheable: bool,
}

impl Answer {
    fn ok(value: Value) -> Self {
        Answer {
            value,
            cacheable: true,
        }
    }

    fn failed() -> Self {
        Answer {
            value: Value::Null,
            cacheable: false,
        }
    }
}

/// Outcome of one planned batch after backoff.
#[derive(Debug, Default)]
pub(crate) struct BatchRun {
    pub answers: Vec<Answer>,
    pub calls: usize,
    pub sizes: Vec<usize>,
    pub warnings: Vec<String>,
    pub meta_prompt: Option<String>,
}

impl BatchRun {
    fn absorb(&mut self, other: BatchRun) {
        self.answers.extend(other.answers);
        self.calls += other.calls;
        self.sizes.extend(other.sizes);
        self.warnings.extend(other.warnings);
        if self.meta_prompt.is_none() {
            self.meta_prompt = other.meta_prompt;
        }
    }
}

/// Result of a single provider request over a contiguous slice.
pub(crate) enum Attempt {
    Done(Vec<Answer>),
    Overflow,
}

/// Calls `attempt` over `len` items, shrinking the request by 10% after
/// every context overflow. A single item that still overflows becomes NULL.
pub(crate) fn run_with_backoff(
    len: usize,
    run: &mut BatchRun,
    mut attempt: impl FnMut(std::ops::Range<usize>, &mut BatchRun) -> Result<Attempt, ProviderError>,
) -> Result<(), ProviderError> {
    let mut pos = 0;
    let mut size = len;
    while pos < len {
        let end = (pos + size).min(len);
        match attempt(pos..end, run)? {
            Attempt::Done(answers) => {
                run.sizes.push(end - pos);
                run.answers.extend(answers);
                pos = end;
            }
            Attempt::Overflow if end - pos == 1 => {
                run.warnings.push(format!(
                    "tuple {pos} exceeds the context window; result is NULL"
                ));
                run.answers.push(Answer::failed());
                pos = end;
            }
            Attempt::Overflow => size = shrink(end - pos),
        }
    }
    Ok(())
}

/// Everything a job needs to talk to the provider.
pub(crate) struct Job<'a> {
    pub call: &'a LlmCall,
    pub settings: &'a EffectiveSettings,
    pub provider: Arc<dyn Provider>,
    pub prompt: &'a str,
    pub contract: OutputContract,
    /// Function name used for cache identity.
    pub cache_function: SemanticFunction,
}

impl Job<'_> {
    fn new<'a>(
        rt: &Runtime,
        call: &'a LlmCall,
        settings: &'a EffectiveSettings,
    ) -> Result<Job<'a>, BackendError> {
        let cache_function = match call.function {
            SemanticFunction::First | SemanticFunction::Last => SemanticFunction::Rerank,
            f => f,
        };
        Ok(Job {
            call,
            settings,
            provider: rt.provider(&call.model.provider_id)?,
            prompt: call.prompt.as_ref().map_or("", |p| p.text.as_str()),
            contract: cache_function.contract(),
            cache_function,
        })
    }

    pub fn key_parts(&self) -> CacheKeyParts<'_> {
        let embedding = self.call.function == SemanticFunction::Embedding;
        CacheKeyParts {
            provider: &self.call.model.provider_id,
            model_id: &self.call.model.model_id,
            params: &self.call.model.params,
            function: self.cache_function.name(),
            prompt: self.prompt,
            // Embeddings ignore prompt formatting.
            format: if embedding {
                SerializationFormat::default()
            } else {
                self.settings.format
            },
            contract: &self.contract,
            template: if embedding {
                None
            } else {
                self.settings.template.as_ref().map(|t| t.source())
            },
        }
    }

    /// Token budget for serialized tuples, measured against the prefix
    /// rendered for `sample`.
    pub fn budget(&self, sample: &Tuple) -> Result<usize, BackendError> {
        let p = self.render(std::slice::from_ref(sample))?;
        Ok(compute_budget(
            self.call.model.context_window_tokens,
            self.call.model.max_output_tokens,
            flock_core::batch::prefix_tokens(&p.static_prefix),
        ))
    }

    pub fn render(
        &self,
        rows: &[Tuple],
    ) -> Result<flock_core::prompt::RenderedPrompt, BackendError> {
        build_meta_prompt(
            self.cache_function,
            self.prompt,
            rows,
            self.settings.format,
            &self.contract,
            self.settings.template.as_ref(),
        )
        .map_err(|e| BackendError::Other(e.to_string()))
    }

    /// Sends one rendered batch. Context overflow is reported as a value,
    /// other failures as errors.
    pub fn send(
        &self,
        rows: &[Tuple],
        run: &mut BatchRun,
    ) -> Result<Option<String>, ProviderError> {
        let p = self
            .render(rows)
            .map_err(|e| ProviderError::new(ErrorKind::Fatal, e.to_string()))?;
        if run.meta_prompt.is_none() {
            run.meta_prompt = Some(p.full_text());
        }
        let req = ChatRequest {
            model_id: self.call.model.model_id.clone(),
            system_text: p.static_prefix,
            user_text: p.dynamic_suffix,
            params: self.call.model.params.clone(),
            json_mode: self.cache_function.json_mode(),
            tuple_count: rows.len(),
        };
        run.calls += 1;
        match self.provider.chat(&req) {
            Ok(r) => Ok(Some(r.text)),
            Err(e) if e.kind == ErrorKind::ContextOverflow => Ok(None),
            Err(e) => Err(e),
        }
    }
}

impl Runtime {
    /// Per-tuple functions: complete, complete_json, filter.
    fn scalar_chat(
        &self,
        job: &Job,
        rows: &[Tuple],
    ) -> Result<(Vec<Answer>, LlmStats), BackendError> {
        let mut stats = LlmStats::default();
        if rows.is_empty() {
            return Ok((Vec::new(), stats));
        }
        let budget = job.budget(&rows[0])?;
        let planned = plan_batches(rows, job.settings.format, job.settings.batch_mode, budget);
        for b in planned.iter().filter(|b| b.oversized) {
            stats.warnings.push(format!(
                "tuple {} alone exceeds the token budget",
                b.range.start
            ));
        }
        let kind = job.contract.kind;
        let runs = parallel_map(planned.len(), self.workers, |i| {
            let batch = &rows[planned[i].range.clone()];
            let mut run = BatchRun::default();
            run_with_backoff(batch.len(), &mut run, |r, run| {
                let slice = &batch[r];
                let mut parse_error = None;
                for _ in 0..2 {
                    let Some(text) = job.send(slice, run)? else {
                        return Ok(Attempt::Overflow);
                    };
                    match parse_answers(&text, kind, slice.len()) {
                        Ok(a) => {
                            if a.missing > 0 {
                                run.warnings.push(format!(
                                    "{} of {} answers missing; set to NULL",
                                    a.missing,
                                    slice.len()
                                ));
                            }
                            let answers = a
                                .values
                                .into_iter()
                                .map(|v| {
                                    if v.is_null() {
                                        Answer::failed()
                                    } else {
                                        Answer::ok(v)
                                    }
                                })
                                .collect();
                            return Ok(Attempt::Done(answers));
                        }
                        Err(e) => parse_error = Some(e),
                    }
                }
                run.warnings.push(format!(
                    "unparseable response after retry ({}); {} results set to NULL",
                    parse_error.map(|e| e.to_string()).unwrap_or_default(),
                    slice.len()
                ));
                Ok(Attempt::Done(vec![Answer::failed(); slice.len()]))
            })?;
            Ok(run)
        })
        .map_err(provider_failure)?;
        let mut all = BatchRun::default();
        for r in runs {
            all.absorb(r);
        }
        stats.provider_calls = all.calls;
        stats.effective_batch_sizes = all.sizes;
        stats.warnings.extend(all.warnings);
        stats.meta_prompt = all.meta_prompt;
        Ok((all.answers, stats))
    }

    fn embeddings(
        &self,
        job: &Job,
        rows: &[Tuple],
    ) -> Result<(Vec<Answer>, LlmStats), BackendError> {
        let mut stats = LlmStats::default();
        let cap = match job.settings.batch_mode {
            BatchMode::Auto => self.embed_batch_max,
            BatchMode::Manual(n) => n.clamp(1, self.embed_batch_max),
        };
        let texts: Vec<String> = rows.iter().map(embedding_text).collect();
        let ranges = flock_core::batch::chunk(0..texts.len(), cap);
        let dim = job.call.model.embedding_dimension.map(|d| d as usize);
        let model_id = &job.call.model.model_id;
        let runs = parallel_map(ranges.len(), self.workers, |i| {
            let batch = &texts[ranges[i].clone()];
            let mut run = BatchRun::default();
            run_with_backoff(batch.len(), &mut run, |r, run| {
                run.calls += 1;
                let vectors = match job.provider.embed(model_id, &batch[r.clone()]) {
                    Ok(v) => v,
                    Err(e) if e.kind == ErrorKind::ContextOverflow => return Ok(Attempt::Overflow),
                    Err(e) => return Err(e),
                };
                if vectors.len() != r.len() {
                    return Err(ProviderError::new(
                        ErrorKind::Fatal,
                        format!("expected {} embeddings, got {}", r.len(), vectors.len()),
                    ));
                }
                if let Some(d) = dim {
                    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
                        return Err(ProviderError::new(
                            ErrorKind::Fatal,
                            format!("embedding has dimension {}, model declares {d}", v.len()),
                        ));
                    }
                }
                Ok(Attempt::Done(
                    vectors
                        .into_iter()
                        .map(|v| Answer::ok(Value::DoubleArray(v)))
                        .collect(),
                ))
            })?;
            Ok(run)
        })
        .map_err(provider_failure)?;
        let mut all = BatchRun::default();
        for r in runs {
            all.absorb(r);
        }
        stats.provider_calls = all.calls;
        stats.effective_batch_sizes = all.sizes;
        stats.warnings = all.warnings;
        Ok((all.answers, stats))
    }
}

impl SemanticBackend for Runtime {
    fn scalar(
        &self,
        _node: NodeId,
        call: &LlmCall,
        settings: &EffectiveSettings,
        tuples: &[Tuple],
    ) -> Result<(Vec<Value>, LlmStats), BackendError> {
        let job = Job::new(self, call, settings)?;
        let d = dedup(tuples);
        let parts = job.key_parts();
        let keys: Vec<String> = d.unique.iter().map(|t| parts.key(&t.canonical())).collect();
        let mut values: Vec<Option<Value>> = keys.iter().map(|k| self.cache.get(k)).collect();
        let misses: Vec<usize> = (0..values.len()).filter(|i| values[*i].is_none()).collect();
        let miss_rows: Vec<Tuple> = misses.iter().map(|i| d.unique[*i].clone()).collect();
        let (answers, mut stats) = if call.function == SemanticFunction::Embedding {
            self.embeddings(&job, &miss_rows)?
        } else {
            self.scalar_chat(&job, &miss_rows)?
        };
        stats.cache_hits = values.len() - misses.len();
        stats.tuples_sent = misses.len();
        for (i, a) in misses.into_iter().zip(answers) {
            if a.cacheable {
                self.cache
                    .put(keys[i].clone(), a.value.clone())
                    .map_err(|e| BackendError::Other(e.to_string()))?;
            }
            values[i] = Some(a.value);
        }
        let unique: Vec<Value> = values
            .into_iter()
            .map(|v| v.unwrap_or(Value::Null))
            .collect();
        Ok((expand(&d.back_map, &unique, Value::Null), stats))
    }

    fn aggregate(
        &self,
        _node: NodeId,
        call: &LlmCall,
        settings: &EffectiveSettings,
        groups: &[Vec<Tuple>],
    ) -> Result<(Vec<Value>, LlmStats), BackendError> {
        let job = Job::new(self, call, settings)?;
        aggregate::run(self, &job, groups)
    }
}
