use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ExecStats, Overrides};
use crate::plan::{LogicalPlan, NodeId};
use crate::prompt::preview_meta_prompt;

/// Serializable view of a plan, optionally annotated with run statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanExport {
    pub root: NodeId,
    pub ctes: Vec<CteExport>,
    pub nodes: Vec<NodeExport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_wall_time_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CteExport {
    pub name: String,
    pub root: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeExport {
    pub node_id: NodeId,
    pub kind: String,
    pub detail: String,
    pub children: Vec<NodeId>,
    pub columns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_details: Option<LlmDetails>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmDetails {
    pub function: String,
    pub model_id: String,
    pub provider: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_version: Option<u32>,
    /// Prompt actually sent on the last run, else a preview with a
    /// placeholder where tuples go.
    pub meta_prompt_full: String,
    pub serialization_format: String,
    pub batch_mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effective_batch_sizes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider_calls: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_hits: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuples_sent: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn ms(us: u64) -> f64 {
    us as f64 / 1000.0
}

/// Exports `plan`. Nodes appear in id order. Invalid templates in
/// `overrides` fall back to the built-in meta-prompt in the preview.
pub fn explain(plan: &LogicalPlan, overrides: &Overrides, stats: Option<&ExecStats>) -> PlanExport {
    let nodes = plan
        .nodes
        .iter()
        .map(|n| {
            let ns = stats.and_then(|s| s.nodes.get(&n.id));
            let llm_details = n.kind.llm_call().map(|call| {
                let settings = overrides.settings(n.id).ok();
                let (batch_mode, format, template) = match settings {
                    Some(s) => (s.batch_mode, s.format, s.template),
                    None => (Default::default(), Default::default(), None),
                };
                let run = ns.and_then(|s| s.llm.as_ref());
                let meta_prompt_full =
                    run.and_then(|l| l.meta_prompt.clone()).unwrap_or_else(|| {
                        let labels: Vec<&str> = call.labels.iter().map(String::as_str).collect();
                        preview_meta_prompt(
                            call.function,
                            call.prompt.as_ref().map_or("", |p| p.text.as_str()),
                            &labels,
                            format,
                            &call.function.contract(),
                            template.as_ref(),
                        )
                    });
                LlmDetails {
                    function: call.function.name().to_string(),
                    model_id: call.model.model_id.clone(),
                    provider: call.model.provider_id.clone(),
                    prompt_name: call.prompt.as_ref().and_then(|p| p.name.clone()),
                    prompt_version: call.prompt.as_ref().and_then(|p| p.version),
                    meta_prompt_full,
                    serialization_format: format.to_string(),
                    batch_mode: batch_mode.to_string(),
                    effective_batch_sizes: run.map(|l| l.effective_batch_sizes.clone()),
                    provider_calls: run.map(|l| l.provider_calls),
                    cache_hits: run.map(|l| l.cache_hits),
                    tuples_sent: run.map(|l| l.tuples_sent),
                    wall_time_ms: ns.map(|s| ms(s.wall_time_us)),
                    warnings: run.map(|l| l.warnings.clone()).unwrap_or_default(),
                }
            });
            NodeExport {
                node_id: n.id,
                kind: n.kind.name().to_string(),
                detail: n.detail(plan),
                children: n.children.clone(),
                columns: n.schema.iter().map(|c| c.name.clone()).collect(),
                rows: ns.map(|s| s.rows),
                wall_time_ms: ns.map(|s| ms(s.wall_time_us)),
                llm_details,
            }
        })
        .collect();
    PlanExport {
        root: plan.root,
        ctes: plan
            .ctes
            .iter()
            .map(|c| CteExport {
                name: c.name.clone(),
                root: c.root,
            })
            .collect(),
        nodes,
        query_wall_time_ms: stats.map(|s| ms(s.wall_time_us)),
    }
}
