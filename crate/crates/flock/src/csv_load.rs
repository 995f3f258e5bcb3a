//! CSV ingestion with column type inference.

use std::path::Path;

use flock_core::engine::TableError;
use flock_core::{DataType, Table, Value};

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: expected {expected} fields, found {actual}")]
    RaggedRow {
        line: u64,
        expected: usize,
        actual: usize,
    },
    #[error("malformed CSV: {0}")]
    Parse(String),
    #[error("file has no header row")]
    MissingHeader,
    #[error(transparent)]
    Table(#[from] TableError),
}

/// Narrowest of INT, DOUBLE, TEXT that holds every non-empty cell.
fn infer(cells: &[Option<String>]) -> DataType {
    let present = || cells.iter().flatten();
    if present().all(|c| c.trim().parse::<i64>().is_ok()) {
        DataType::Int
    } else if present().all(|c| c.trim().parse::<f64>().is_ok()) {
        DataType::Double
    } else {
        DataType::Text
    }
}

fn convert(cell: Option<String>, ty: &DataType) -> Value {
    match (cell, ty) {
        (None, _) => Value::Null,
        (Some(c), DataType::Int) => Value::Int(c.trim().parse().expect("inferred INT")),
        (Some(c), DataType::Double) => Value::Double(c.trim().parse().expect("inferred DOUBLE")),
        (Some(c), _) => Value::Text(c),
    }
}

pub fn read_csv<R: std::io::Read>(name: &str, input: R) -> Result<Table, CsvError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CsvError::Parse(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(CsvError::MissingHeader);
    }
    let width = header.len();
    let mut columns: Vec<Vec<Option<String>>> = vec![Vec::new(); width];
    for record in rdr.records() {
        let record = record.map_err(|e| CsvError::Parse(e.to_string()))?;
        if record.len() != width {
            return Err(CsvError::RaggedRow {
                line: record.position().map_or(0, |p| p.line()),
                expected: width,
                actual: record.len(),
            });
        }
        for (col, cell) in columns.iter_mut().zip(record.iter()) {
            col.push((!cell.is_empty()).then(|| cell.to_string()));
        }
    }
    let types: Vec<DataType> = columns.iter().map(|c| infer(c)).collect();
    let mut table = Table::new(
        name,
        header.into_iter().zip(types.iter().cloned()).collect(),
    )?;
    table.data = columns
        .into_iter()
        .zip(&types)
        .map(|(cells, ty)| cells.into_iter().map(|c| convert(c, ty)).collect())
        .collect();
    Ok(table)
}

pub fn load_csv(path: &Path, name: &str) -> Result<Table, CsvError> {
    let f = std::fs::File::open(path).map_err(|source| CsvError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(name, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn types_are_inferred_per_column() {
        let t = read_csv(
            "t",
            "id,score,title,mixed\n1,0.5,\"a, b\",1\n2,,c,x\n,3,\"\",2\n".as_bytes(),
        )
        .unwrap();
        let types: Vec<&DataType> = t.columns.iter().map(|(_, ty)| ty).collect();
        assert_eq!(
            types,
            [
                &DataType::Int,
                &DataType::Double,
                &DataType::Text,
                &DataType::Text
            ]
        );
        assert_eq!(
            t.row(0),
            [
                Value::Int(1),
                Value::Double(0.5),
                Value::Text("a, b".into()),
                Value::Text("1".into())
            ]
        );
        assert_eq!(t.row(1)[1], Value::Null);
        assert_eq!(t.row(2)[0], Value::Null);
        assert_eq!(t.row(2)[2], Value::Null);
    }

    #[test]
    fn header_only_gives_an_empty_table() {
        let t = read_csv("t", "id,title\n".as_bytes()).unwrap();
        assert_eq!(t.row_count(), 0);
        assert_eq!(t.columns.len(), 2);
    }

    #[test]
    fn ragged_rows_report_their_line() {
        let err = read_csv("t", "a,b,c,d\n1,2,3,4\n1,2,3\n".as_bytes()).unwrap_err();
        assert!(matches!(
            err,
            CsvError::RaggedRow {
                line: 3,
                expected: 4,
                actual: 3
            }
        ));
    }
}
