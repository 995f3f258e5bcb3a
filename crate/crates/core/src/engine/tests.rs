use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use super::*;
use crate::catalog::{
    Catalog, ModelDefinition, ModelParams, ModelResource, ResourceDefinition, Scope,
};
use crate::functions::SemanticFunction;
use crate::plan::{bind_query, BindError, CatalogResolver, LlmCall};
use crate::prompt::Tuple;
use crate::sql::{parse, Statement};

/// Filter keeps tuples mentioning "join"; complete upper-cases the first
/// field; embedding yields [len, 1]; aggregates count their group.
#[derive(Default)]
struct Stub {
    calls: RefCell<Vec<(NodeId, usize)>>,
}

fn first_text(t: &Tuple) -> String {
    t.fields
        .first()
        .map(|(_, v)| v.render())
        .unwrap_or_default()
}

impl SemanticBackend for Stub {
    fn scalar(
        &self,
        node: NodeId,
        call: &LlmCall,
        _settings: &EffectiveSettings,
        tuples: &[Tuple],
    ) -> Result<(Vec<Value>, LlmStats), BackendError> {
        self.calls.borrow_mut().push((node, tuples.len()));
        let vals = tuples
            .iter()
            .map(|t| {
                let s = first_text(t);
                match call.function {
                    SemanticFunction::Filter => Value::Bool(s.to_lowercase().contains("join")),
                    SemanticFunction::Embedding => Value::DoubleArray(vec![s.len() as f64, 1.0]),
                    _ => Value::Text(s.to_uppercase()),
                }
            })
            .collect();
        let stats = LlmStats {
            provider_calls: 1,
            tuples_sent: tuples.len(),
            effective_batch_sizes: vec![tuples.len()],
            meta_prompt: Some("sent".into()),
            ..Default::default()
        };
        Ok((vals, stats))
    }

    fn aggregate(
        &self,
        node: NodeId,
        _call: &LlmCall,
        _settings: &EffectiveSettings,
        groups: &[Vec<Tuple>],
    ) -> Result<(Vec<Value>, LlmStats), BackendError> {
        self.calls.borrow_mut().push((node, groups.len()));
        let vals = groups
            .iter()
            .map(|g| Value::Text(alloc::format!("{} items", g.len())))
            .collect();
        Ok((vals, LlmStats::default()))
    }
}

fn papers() -> Table {
    Table::from_rows(
        "papers",
        vec![
            ("id".into(), DataType::Int),
            ("title".into(), DataType::Text),
            ("year".into(), DataType::Int),
        ],
        vec![
            vec![
                Value::Int(1),
                Value::Text("Hash join revisited".into()),
                Value::Int(2020),
            ],
            vec![
                Value::Int(2),
                Value::Text("Learned indexes".into()),
                Value::Int(2018),
            ],
            vec![
                Value::Int(3),
                Value::Text("Sort-merge join on GPUs".into()),
                Value::Int(2020),
            ],
            vec![
                Value::Int(4),
                Value::Text("Query optimization".into()),
                Value::Null,
            ],
        ],
    )
    .unwrap()
}

fn authors() -> Table {
    Table::from_rows(
        "authors",
        vec![
            ("paper_id".into(), DataType::Int),
            ("name".into(), DataType::Text),
        ],
        vec![
            vec![Value::Int(1), Value::Text("ann".into())],
            vec![Value::Int(3), Value::Text("bob".into())],
            vec![Value::Int(3), Value::Text("cy".into())],
            vec![Value::Int(9), Value::Text("dee".into())],
            vec![Value::Null, Value::Text("eve".into())],
        ],
    )
    .unwrap()
}

fn setup() -> (Database, Catalog) {
    let mut db = Database::new();
    db.insert_table(papers());
    db.insert_table(authors());
    db.create_fts_index("papers", "id", "title").unwrap();
    let mut cat = Catalog::new();
    for (name, dim) in [("m", None), ("emb", Some(2))] {
        cat.create(
            Scope::Local,
            ResourceDefinition::Model(ModelDefinition {
                name: name.into(),
                provider_id: "mock".into(),
                model_id: alloc::format!("{name}-id"),
                context_window_tokens: 8000,
                max_output_tokens: 1000,
                embedding_dimension: dim,
                params: ModelParams::default(),
            }),
            "2026-01-01T00:00:00Z".into(),
        )
        .unwrap();
    }
    (db, cat)
}

fn plan(sql: &str, db: &Database, cat: &Catalog) -> Result<LogicalPlan, BindError> {
    let Statement::Select(q) = parse(sql).unwrap() else {
        panic!("not a query")
    };
    let resolver = CatalogResolver {
        catalog: cat,
        inline_model: |_: &str| None::<ModelResource>,
    };
    bind_query(&q, db, &resolver)
}

fn run_with(sql: &str, backend: &Stub) -> QueryResult {
    let (db, cat) = setup();
    let p = plan(sql, &db, &cat).unwrap();
    let ctx = ExecContext {
        db: &db,
        catalog: &cat,
        backend,
        clock: &NoClock,
        overrides: &Overrides::default(),
    };
    execute(&p, &ctx).unwrap()
}

fn run(sql: &str) -> QueryResult {
    run_with(sql, &Stub::default())
}

fn ints(vals: Vec<Value>) -> Vec<Option<i64>> {
    vals.into_iter()
        .map(|v| match v {
            Value::Int(i) => Some(i),
            Value::Null => None,
            other => panic!("not an int: {other:?}"),
        })
        .collect()
}

#[test]
fn filter_project_sort_limit() {
    let r = run("SELECT id, title FROM papers WHERE year = 2020 ORDER BY id DESC LIMIT 1");
    assert_eq!(
        r.rows,
        vec![vec![
            Value::Int(3),
            Value::Text("Sort-merge join on GPUs".into())
        ]]
    );
    assert_eq!(r.columns[1].0, "title");
}

#[test]
fn nulls_sort_last_ascending_and_first_descending() {
    let asc = run("SELECT id FROM papers ORDER BY year, id");
    assert_eq!(ints(asc.column(0)), [Some(2), Some(1), Some(3), Some(4)]);
    let desc = run("SELECT id FROM papers ORDER BY year DESC, id");
    assert_eq!(ints(desc.column(0)), [Some(4), Some(1), Some(3), Some(2)]);
}

#[test]
fn inner_join_skips_null_and_unmatched_keys() {
    let r = run("SELECT p.id, a.name FROM papers p JOIN authors a ON p.id = a.paper_id");
    assert_eq!(ints(r.column(0)), [Some(1), Some(3), Some(3)]);
}

#[test]
fn full_outer_join_pads_both_sides() {
    let r = run("SELECT p.id, a.name FROM papers p FULL OUTER JOIN authors a ON p.id = a.paper_id");
    assert_eq!(r.rows.len(), 7);
    assert_eq!(
        ints(r.column(0)),
        [Some(1), Some(2), Some(3), Some(3), Some(4), None, None]
    );
    let unmatched_right: Vec<Value> = r
        .rows
        .iter()
        .filter(|row| row[0].is_null())
        .map(|row| row[1].clone())
        .collect();
    assert_eq!(
        unmatched_right,
        [Value::Text("dee".into()), Value::Text("eve".into())]
    );
    let unmatched_left = r.rows.iter().filter(|row| row[1].is_null()).count();
    assert_eq!(unmatched_left, 2);
}

#[test]
fn group_by_keeps_first_appearance_order() {
    let r = run("SELECT year, count(*) AS n FROM papers GROUP BY year");
    assert_eq!(ints(r.column(0)), [Some(2020), Some(2018), None]);
    assert_eq!(ints(r.column(1)), [Some(2), Some(1), Some(1)]);
}

#[test]
fn global_aggregate_over_empty_input_yields_one_row() {
    let r = run("SELECT count(*), max(year) FROM papers WHERE id > 100");
    assert_eq!(r.rows, vec![vec![Value::Int(0), Value::Null]]);
}

#[test]
fn llm_filter_and_complete() {
    let stub = Stub::default();
    let r = run_with(
        "SELECT id, llm_complete({'model_name': 'm'}, {'prompt': 'shout'}, {'t': title}) AS loud \
         FROM papers WHERE llm_filter({'model_name': 'm'}, {'prompt': 'about joins?'}, {'title': title})",
        &stub,
    );
    assert_eq!(ints(r.column(0)), [Some(1), Some(3)]);
    assert_eq!(r.column(1)[0], Value::Text("HASH JOIN REVISITED".into()));
    // the filter sees all rows, completion only the survivors
    let sizes: Vec<usize> = stub.calls.borrow().iter().map(|c| c.1).collect();
    assert_eq!(sizes, [4, 2]);
    assert_eq!(r.stats.provider_calls(), 2);
    assert_eq!(r.stats.tuples_sent(), 6);
}

#[test]
fn llm_aggregate_runs_once_per_group() {
    let stub = Stub::default();
    let r = run_with(
        "SELECT year, llm_reduce({'model_name': 'm'}, {'prompt': 'summarize'}, {'t': title}) AS s \
         FROM papers GROUP BY year ORDER BY year",
        &stub,
    );
    assert_eq!(
        r.column(1),
        [
            Value::Text("1 items".into()),
            Value::Text("2 items".into()),
            Value::Text("1 items".into()),
        ]
    );
    assert_eq!(stub.calls.borrow().len(), 1);
}

#[test]
fn bm25_scores_only_matching_rows() {
    let r = run(
        "SELECT id, fts_main_papers.match_bm25(id, 'join', fields := 'title') AS s FROM papers",
    );
    let scored: Vec<bool> = r.column(1).iter().map(|v| !v.is_null()).collect();
    assert_eq!(scored, [true, false, true, false]);
}

#[test]
fn window_max_appends_to_every_row() {
    let r = run("SELECT id, year / max(year) OVER () AS rel FROM papers WHERE year IS NOT NULL");
    assert_eq!(r.column(1)[0], Value::Double(1.0));
    assert_eq!(r.rows.len(), 3);
}

#[test]
fn cte_is_materialized_once() {
    let stub = Stub::default();
    run_with(
        "WITH j AS (SELECT id FROM papers WHERE llm_filter({'model_name': 'm'}, {'prompt': 'p'}, {'t': title})) \
         SELECT a.id FROM j a JOIN j b ON a.id = b.id",
        &stub,
    );
    assert_eq!(stub.calls.borrow().len(), 1);
}

#[test]
fn unknown_model_fails_at_bind_time() {
    let (db, cat) = setup();
    let err = plan(
        "SELECT llm_complete({'model_name': 'nope'}, {'prompt': 'p'}, {'t': title}) FROM papers",
        &db,
        &cat,
    )
    .unwrap_err();
    assert_eq!(err.code(), "unknown_resource");
}

#[test]
fn stats_cover_every_executed_node() {
    let (db, cat) = setup();
    let p = plan("SELECT id FROM papers WHERE year = 2020", &db, &cat).unwrap();
    let ctx = ExecContext {
        db: &db,
        catalog: &cat,
        backend: &Stub::default(),
        clock: &NoClock,
        overrides: &Overrides::default(),
    };
    let r = execute(&p, &ctx).unwrap();
    assert!(r.stats.nodes.keys().all(|id| *id < p.nodes.len()));
    assert_eq!(r.stats.nodes[&p.root].rows, 2);
    assert!(r.rows.iter().all(|row| row.len() == r.columns.len()));
}

#[test]
fn explain_has_llm_details_exactly_on_llm_nodes() {
    let (db, cat) = setup();
    let p = plan(
        "SELECT id FROM papers WHERE llm_filter({'model_name': 'm'}, {'prompt': 'about joins?'}, {'title': title})",
        &db,
        &cat,
    )
    .unwrap();
    let overrides: Overrides = serde_json::from_str(r#"{"batch_mode": 30}"#).unwrap();
    let export = explain(&p, &overrides, None);
    for n in &export.nodes {
        assert_eq!(
            n.llm_details.is_some(),
            n.kind.starts_with("Llm"),
            "{}",
            n.kind
        );
    }
    let d = export
        .nodes
        .iter()
        .find_map(|n| n.llm_details.as_ref())
        .unwrap();
    assert_eq!(d.batch_mode, "Manual(30)");
    assert!(d.meta_prompt_full.contains("about joins?"));
    assert!(d.provider_calls.is_none());
}

#[test]
fn explain_uses_the_prompt_actually_sent() {
    let (db, cat) = setup();
    let p = plan(
        "SELECT llm_complete({'model_name': 'm'}, {'prompt': 'p'}, {'t': title}) FROM papers",
        &db,
        &cat,
    )
    .unwrap();
    let ctx = ExecContext {
        db: &db,
        catalog: &cat,
        backend: &Stub::default(),
        clock: &NoClock,
        overrides: &Overrides::default(),
    };
    let r = execute(&p, &ctx).unwrap();
    let export = explain(&p, &Overrides::default(), Some(&r.stats));
    let d = export
        .nodes
        .iter()
        .find_map(|n| n.llm_details.as_ref())
        .unwrap();
    assert_eq!(d.meta_prompt_full, "sent");
    assert_eq!(d.provider_calls, Some(1));
    assert_eq!(d.effective_batch_sizes.as_deref(), Some(&[4][..]));
    let json = serde_json::to_string(&export).unwrap();
    let back: PlanExport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, export);
}

#[test]
fn overrides_reject_non_llm_nodes() {
    let (db, cat) = setup();
    let p = plan("SELECT id FROM papers", &db, &cat).unwrap();
    let mut o = Overrides::default();
    o.nodes.insert(p.root, NodeSettings::default());
    assert!(o.validate(&p).is_err());
    assert!(Overrides::default().validate(&p).is_ok());
}

#[test]
fn table_rejects_wrong_width_and_duplicate_columns() {
    let mut t = papers();
    assert!(t.push_row(vec![Value::Int(1)]).is_err());
    assert!(Table::new(
        "x",
        vec![("a".into(), DataType::Int), ("a".into(), DataType::Int)]
    )
    .is_err());
    let mut db = Database::new();
    db.insert_table(
        Table::from_rows(
            "d",
            vec![("id".into(), DataType::Int), ("t".into(), DataType::Text)],
            vec![
                vec![Value::Int(1), Value::Text("a".into())],
                vec![Value::Int(1), Value::Text("b".into())],
            ],
        )
        .unwrap(),
    );
    assert!(matches!(
        db.create_fts_index("d", "id", "t"),
        Err(TableError::DuplicateDocId { .. })
    ));
}
