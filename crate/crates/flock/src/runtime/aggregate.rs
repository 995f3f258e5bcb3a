//! Group-level functions: hierarchical reduce and sliding-window rerank.

use flock_core::batch::{canonical_group, chunk, plan_batches, shrink};
use flock_core::engine::{BackendError, LlmStats};
use flock_core::functions::{
    parse_ranking, parse_single, rerank_windows, tuple_to_json, SemanticFunction,
};
use flock_core::prompt::{OutputKind, Tuple};
use flock_core::Value;

use super::{parallel_map, provider_failure, BatchRun, Job, Runtime};
use crate::provider::ProviderError;

pub const RERANK_WINDOW: usize = 10;
pub const RERANK_STRIDE: usize = 5;

/// Label of the tuples that carry partial reductions into the next level.
const PARTIAL_LABEL: &str = "partial";

pub(super) fn run(
    rt: &Runtime,
    job: &Job,
    groups: &[Vec<Tuple>],
) -> Result<(Vec<Value>, LlmStats), BackendError> {
    let parts = job.key_parts();
    let keys: Vec<String> = groups
        .iter()
        .map(|g| parts.key(&canonical_group(g)))
        .collect();
    let cached: Vec<Option<Value>> = keys.iter().map(|k| rt.cache.get(k)).collect();
    let misses: Vec<usize> = (0..groups.len())
        .filter(|i| cached[*i].is_none() && !groups[*i].is_empty())
        .collect();
    let reduce = matches!(
        job.cache_function,
        SemanticFunction::Reduce | SemanticFunction::ReduceJson
    );
    let results = parallel_map(misses.len(), rt.workers, |i| {
        let group = &groups[misses[i]];
        let mut run = BatchRun::default();
        let value = if reduce {
            reduce_group(job, group, &mut run)?
        } else {
            rerank_group(job, group, &mut run)?
        };
        Ok((value, run))
    })
    .map_err(provider_failure)?;

    let mut stats = LlmStats {
        cache_hits: groups.len() - misses.len(),
        ..LlmStats::default()
    };
    let mut out = cached;
    for (gi, (value, run)) in misses.iter().copied().zip(results) {
        // Degraded results (fallbacks, NULL stand-ins) are recomputed next time.
        let clean = run.warnings.is_empty();
        stats.tuples_sent += groups[gi].len();
        stats.provider_calls += run.calls;
        stats.effective_batch_sizes.extend(run.sizes);
        stats.warnings.extend(run.warnings);
        if stats.meta_prompt.is_none() {
            stats.meta_prompt = run.meta_prompt;
        }
        if let (Some(v), true) = (&value, clean) {
            rt.cache
                .put(keys[gi].clone(), v.clone())
                .map_err(|e| BackendError::Other(e.to_string()))?;
        }
        out[gi] = Some(value.unwrap_or(Value::Null));
    }
    let values = out
        .into_iter()
        .map(|v| project(job.call.function, v.unwrap_or(Value::Null)))
        .collect();
    Ok((values, stats))
}

/// First and last read the head or tail of the cached ranking.
fn project(function: SemanticFunction, ranked: Value) -> Value {
    let Value::Json(serde_json::Value::Array(items)) = &ranked else {
        return ranked;
    };
    match function {
        SemanticFunction::First => items.first().cloned().map_or(Value::Null, Value::Json),
        SemanticFunction::Last => items.last().cloned().map_or(Value::Null, Value::Json),
        _ => ranked,
    }
}

/// One reduce request. `None` means the rows overflow the context window.
fn reduce_call(
    job: &Job,
    rows: &[Tuple],
    run: &mut BatchRun,
) -> Result<Option<Option<Value>>, ProviderError> {
    for attempt in 0..2 {
        let Some(text) = job.send(rows, run)? else {
            return Ok(None);
        };
        match parse_single(&text, job.contract.kind) {
            Ok(v) if !v.is_null() => {
                run.sizes.push(rows.len());
                return Ok(Some(Some(v)));
            }
            Ok(_) => {
                run.sizes.push(rows.len());
                return Ok(Some(None));
            }
            Err(e) if attempt == 1 => {
                run.warnings.push(format!(
                    "unparseable reduce response after retry ({e}); result is NULL"
                ));
            }
            Err(_) => {}
        }
    }
    Ok(Some(None))
}

/// Reduces `rows` to one value. Rows that do not fit one request are split
/// into budget-sized chunks whose partial results are reduced in turn.
fn reduce_group(
    job: &Job,
    rows: &[Tuple],
    run: &mut BatchRun,
) -> Result<Option<Value>, ProviderError> {
    let budget = job
        .budget(&rows[0])
        .map_err(|e| ProviderError::new(crate::provider::ErrorKind::Fatal, e.to_string()))?;
    let planned = plan_batches(rows, job.settings.format, job.settings.batch_mode, budget);
    let ranges: Vec<_> = planned.into_iter().map(|b| b.range).collect();
    reduce_ranges(job, rows, ranges, run)
}

fn reduce_ranges(
    job: &Job,
    rows: &[Tuple],
    ranges: Vec<std::ops::Range<usize>>,
    run: &mut BatchRun,
) -> Result<Option<Value>, ProviderError> {
    if ranges.len() == 1 {
        let slice = &rows[ranges[0].clone()];
        return match reduce_call(job, slice, run)? {
            Some(v) => Ok(v),
            None if slice.len() == 1 => {
                run.warnings
                    .push("a single tuple exceeds the context window; result is NULL".into());
                Ok(None)
            }
            None => reduce_ranges(job, slice, chunk(0..slice.len(), shrink(slice.len())), run),
        };
    }
    let mut partials = Vec::new();
    for r in ranges {
        if let Some(v) = reduce_ranges(job, rows, vec![r], run)? {
            partials.push(Tuple::new(vec![(
                PARTIAL_LABEL.to_string(),
                Value::Text(v.render()),
            )]));
        }
    }
    if partials.is_empty() {
        return Ok(None);
    }
    let n = partials.len();
    reduce_ranges(job, &partials, std::iter::once(0..n).collect(), run)
}

/// One ranking request over a window. Falls back to input order after a
/// second invalid answer.
fn rank_window(job: &Job, rows: &[Tuple], run: &mut BatchRun) -> Result<Vec<usize>, ProviderError> {
    for attempt in 0..2 {
        let Some(text) = job.send(rows, run)? else {
            run.warnings.push(format!(
                "rerank window of {} overflows; input order kept",
                rows.len()
            ));
            return Ok((0..rows.len()).collect());
        };
        match parse_ranking(&text, rows.len()) {
            Ok(p) => {
                run.sizes.push(rows.len());
                return Ok(p);
            }
            Err(e) if attempt == 1 => {
                run.warnings.push(format!(
                    "invalid ranking after retry ({e}); input order kept"
                ));
            }
            Err(_) => {}
        }
    }
    Ok((0..rows.len()).collect())
}

/// Listwise rerank with windows moving from the tail of the list to its
/// head, so strong items bubble forward.
fn rerank_group(
    job: &Job,
    rows: &[Tuple],
    run: &mut BatchRun,
) -> Result<Option<Value>, ProviderError> {
    debug_assert_eq!(job.contract.kind, OutputKind::Ranking);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    for w in rerank_windows(rows.len(), RERANK_WINDOW, RERANK_STRIDE) {
        let window: Vec<Tuple> = order[w.clone()].iter().map(|i| rows[*i].clone()).collect();
        let perm = rank_window(job, &window, run)?;
        let reordered: Vec<usize> = perm.iter().map(|p| order[w.start + p]).collect();
        order[w].copy_from_slice(&reordered);
    }
    let items = order.iter().map(|i| tuple_to_json(&rows[*i])).collect();
    Ok(Some(Value::Json(serde_json::Value::Array(items))))
}
