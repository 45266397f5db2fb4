use std::cmp::Ordering;

use super::db::{ColumnType, Table};
use super::{CmpOp, ColumnRef, ExecError, MiniDb, Operand, Predicate, ResultSet, SelectList, SqlAst, TableRef, Value};

/// One table in the FROM/JOIN chain, addressed by its alias if it has one.
struct Scope<'a> {
    name: &'a str,
    table: &'a Table,
    offset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Number,
    Text,
}

fn kind_of(ty: ColumnType) -> Kind {
    match ty {
        ColumnType::Integer | ColumnType::Real => Kind::Number,
        ColumnType::Text => Kind::Text,
    }
}

fn kind_name(kind: Kind) -> &'static str {
    match kind {
        Kind::Number => "number",
        Kind::Text => "text",
    }
}

/// Operand with its column lookup done once, before any row is visited.
enum Bound<'v> {
    Slot(usize),
    Literal(&'v Value),
}

enum BoundPred<'v> {
    Compare(Bound<'v>, CmpOp, Bound<'v>),
    And(Vec<BoundPred<'v>>),
    Or(Vec<BoundPred<'v>>),
}

fn resolve(scopes: &[Scope<'_>], col: &ColumnRef) -> Result<(usize, Kind), ExecError> {
    match &col.qualifier {
        Some(q) => {
            let scope = scopes
                .iter()
                .find(|s| s.name.eq_ignore_ascii_case(q))
                .ok_or_else(|| ExecError::UnknownTable(q.clone()))?;
            let idx = scope
                .table
                .schema
                .column_index(&col.column)
                .ok_or_else(|| ExecError::UnknownColumn(col.to_string()))?;
            Ok((scope.offset + idx, kind_of(scope.table.schema.columns[idx].1)))
        }
        None => {
            let mut found = None;
            for scope in scopes {
                if let Some(idx) = scope.table.schema.column_index(&col.column) {
                    if found.is_some() {
                        return Err(ExecError::AmbiguousColumn(col.column.clone()));
                    }
                    found = Some((scope.offset + idx, kind_of(scope.table.schema.columns[idx].1)));
                }
            }
            found.ok_or_else(|| ExecError::UnknownColumn(col.column.clone()))
        }
    }
}

fn bind_operand<'v>(scopes: &[Scope<'_>], op: &'v Operand) -> Result<(Bound<'v>, Kind), ExecError> {
    match op {
        Operand::Column(c) => resolve(scopes, c).map(|(slot, kind)| (Bound::Slot(slot), kind)),
        Operand::Literal(v) => {
            let kind = match v {
                Value::Integer(_) | Value::Real(_) => Kind::Number,
                Value::Text(_) => Kind::Text,
            };
            Ok((Bound::Literal(v), kind))
        }
    }
}

fn bind_predicate<'v>(scopes: &[Scope<'_>], pred: &'v Predicate) -> Result<BoundPred<'v>, ExecError> {
    match pred {
        Predicate::Compare { left, op, right } => {
            let (l, lk) = bind_operand(scopes, left)?;
            let (r, rk) = bind_operand(scopes, right)?;
            if lk != rk {
                return Err(ExecError::TypeMismatch { left: kind_name(lk).into(), right: kind_name(rk).into() });
            }
            Ok(BoundPred::Compare(l, *op, r))
        }
        Predicate::And(ps) => ps.iter().map(|p| bind_predicate(scopes, p)).collect::<Result<_, _>>().map(BoundPred::And),
        Predicate::Or(ps) => ps.iter().map(|p| bind_predicate(scopes, p)).collect::<Result<_, _>>().map(BoundPred::Or),
    }
}

fn compare_values(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Integer(x), Value::Integer(y)) => Some(x.cmp(y)),
        (Value::Integer(x), Value::Real(y)) => (*x as f64).partial_cmp(y),
        (Value::Real(x), Value::Integer(y)) => x.partial_cmp(&(*y as f64)),
        (Value::Real(x), Value::Real(y)) => x.partial_cmp(y),
        (Value::Text(x), Value::Text(y)) => Some(x.cmp(y)),
        _ => None,
    }
}

fn holds(op: CmpOp, ord: Option<Ordering>) -> bool {
    let Some(ord) = ord else { return false };
    match op {
        CmpOp::Eq => ord == Ordering::Equal,
        CmpOp::Ne => ord != Ordering::Equal,
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::Le => ord != Ordering::Greater,
        CmpOp::Gt => ord == Ordering::Greater,
        CmpOp::Ge => ord != Ordering::Less,
    }
}

fn fetch<'r>(row: &'r [&'r Value], b: &'r Bound<'r>) -> &'r Value {
    match b {
        Bound::Slot(i) => row[*i],
        Bound::Literal(v) => v,
    }
}

fn eval(pred: &BoundPred<'_>, row: &[&Value]) -> bool {
    match pred {
        BoundPred::Compare(l, op, r) => holds(*op, compare_values(fetch(row, l), fetch(row, r))),
        BoundPred::And(ps) => ps.iter().all(|p| eval(p, row)),
        BoundPred::Or(ps) => ps.iter().any(|p| eval(p, row)),
    }
}

fn open_scope<'a>(db: &'a MiniDb, tref: &'a TableRef, scopes: &[Scope<'a>], offset: usize) -> Result<Scope<'a>, ExecError> {
    let table = db.table(&tref.table).ok_or_else(|| ExecError::UnknownTable(tref.table.clone()))?;
    let name = tref.alias.as_deref().unwrap_or(&tref.table);
    if scopes.iter().any(|s| s.name.eq_ignore_ascii_case(name)) {
        return Err(ExecError::DuplicateAlias(name.to_owned()));
    }
    Ok(Scope { name, table, offset })
}

/// Executes a parsed query with bag semantics. All name resolution and type
/// checking happens before rows are touched, so errors do not depend on the
/// data.
pub fn execute_sql(ast: &SqlAst, db: &MiniDb) -> Result<ResultSet, ExecError> {
    let mut scopes = vec![open_scope(db, &ast.from, &[], 0)?];
    let mut rows: Vec<Vec<&Value>> = scopes[0].table.rows.iter().map(|r| r.iter().collect()).collect();

    for join in &ast.joins {
        let offset = scopes.iter().map(|s| s.table.schema.columns.len()).sum();
        let scope = open_scope(db, &join.table, &scopes, offset)?;
        let right = scope.table;
        scopes.push(scope);
        let mut keys = Vec::with_capacity(join.on.len());
        for (l, r) in &join.on {
            let (ls, lk) = resolve(&scopes, l)?;
            let (rs, rk) = resolve(&scopes, r)?;
            if lk != rk {
                return Err(ExecError::TypeMismatch { left: kind_name(lk).into(), right: kind_name(rk).into() });
            }
            keys.push((ls, rs));
        }
        let mut joined = Vec::new();
        for left in &rows {
            for rrow in &right.rows {
                let mut row = left.clone();
                row.extend(rrow.iter());
                let ok = keys
                    .iter()
                    .all(|&(a, b)| holds(CmpOp::Eq, compare_values(row[a], row[b])));
                if ok {
                    joined.push(row);
                }
            }
        }
        rows = joined;
    }

    if let Some(pred) = &ast.filter {
        let bound = bind_predicate(&scopes, pred)?;
        rows.retain(|row| eval(&bound, row));
    }

    match &ast.select {
        SelectList::CountStar => Ok(ResultSet { rows: vec![vec![Value::Integer(rows.len() as i64)]] }),
        SelectList::Columns(cols) => {
            let slots = cols.iter().map(|c| resolve(&scopes, c).map(|(s, _)| s)).collect::<Result<Vec<_>, _>>()?;
            let out = rows
                .iter()
                .map(|row| slots.iter().map(|&s| row[s].clone()).collect())
                .collect();
            Ok(ResultSet { rows: out })
        }
    }
}
