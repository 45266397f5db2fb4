use super::{CmpOp, ColumnRef, Join, Operand, Predicate, SelectList, SqlAst, SyntaxError, TableRef, Value};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    /// Keywords are stored upper-cased.
    Keyword(&'static str),
    Int(i64),
    Real(f64),
    Str(String),
    Sym(&'static str),
}

const KEYWORDS: [&str; 11] = ["SELECT", "FROM", "WHERE", "AND", "OR", "INNER", "JOIN", "ON", "AS", "COUNT", "NOT"];

pub(super) fn is_keyword(word: &str) -> bool {
    KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(word))
}

fn err(position: usize, expected: impl Into<String>) -> SyntaxError {
    SyntaxError { position, expected: expected.into() }
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, SyntaxError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let word = &src[start..i];
            let upper = word.to_ascii_uppercase();
            let tok = match KEYWORDS.iter().find(|k| **k == upper) {
                Some(k) => Tok::Keyword(k),
                None => Tok::Ident(word.to_owned()),
            };
            out.push((start, tok));
            continue;
        }
        if c.is_ascii_digit() || (c == b'-' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let mut real = false;
            if i < bytes.len() && bytes[i] == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit) {
                real = true;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let text = &src[start..i];
            let tok = if real {
                Tok::Real(text.parse().map_err(|_| err(start, "a number"))?)
            } else {
                Tok::Int(text.parse().map_err(|_| err(start, "an integer in range"))?)
            };
            out.push((start, tok));
            continue;
        }
        match c {
            b'\'' => {
                let mut s = String::new();
                i += 1;
                loop {
                    let Some(rel) = src[i..].find('\'') else {
                        return Err(err(start, "closing `'`"));
                    };
                    s.push_str(&src[i..i + rel]);
                    i += rel + 1;
                    if bytes.get(i) == Some(&b'\'') {
                        s.push('\'');
                        i += 1;
                    } else {
                        break;
                    }
                }
                out.push((start, Tok::Str(s)));
            }
            b'"' | b'`' | b'[' => {
                let close = match c {
                    b'[' => ']',
                    b'"' => '"',
                    _ => '`',
                };
                let Some(rel) = src[i + 1..].find(close) else {
                    return Err(err(start, format!("closing `{close}`")));
                };
                let name = &src[i + 1..i + 1 + rel];
                if name.is_empty() {
                    return Err(err(start, "a non-empty identifier"));
                }
                out.push((start, Tok::Ident(name.to_owned())));
                i += rel + 2;
            }
            _ => {
                let two = src.get(i..i + 2);
                let sym = match two {
                    Some("!=") => Some("!="),
                    Some("<>") => Some("!="),
                    Some("<=") => Some("<="),
                    Some(">=") => Some(">="),
                    _ => None,
                };
                if let Some(s) = sym {
                    out.push((start, Tok::Sym(s)));
                    i += 2;
                    continue;
                }
                let sym = match c {
                    b'(' => "(",
                    b')' => ")",
                    b',' => ",",
                    b'.' => ".",
                    b'*' => "*",
                    b'=' => "=",
                    b'<' => "<",
                    b'>' => ">",
                    b';' => ";",
                    _ => return Err(err(start, "a token of the supported SQL subset")),
                };
                out.push((start, Tok::Sym(sym)));
                i += 1;
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn fail<T>(&self, expected: &str) -> Result<T, SyntaxError> {
        Err(err(self.offset(), expected))
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Keyword(k)) if *k == kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), SyntaxError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            self.fail(kw)
        }
    }

    fn eat_sym(&mut self, sym: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(s)) if *s == sym) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, sym: &str) -> Result<(), SyntaxError> {
        if self.eat_sym(sym) {
            Ok(())
        } else {
            self.fail(&format!("`{sym}`"))
        }
    }

    fn ident(&mut self) -> Result<String, SyntaxError> {
        match self.peek() {
            Some(Tok::Ident(name)) => {
                let name = name.clone();
                self.pos += 1;
                Ok(name)
            }
            _ => self.fail("an identifier"),
        }
    }

    fn column_ref(&mut self) -> Result<ColumnRef, SyntaxError> {
        let first = self.ident()?;
        if self.eat_sym(".") {
            Ok(ColumnRef::qualified(first, self.ident()?))
        } else {
            Ok(ColumnRef::bare(first))
        }
    }

    fn table_ref(&mut self) -> Result<TableRef, SyntaxError> {
        let table = self.ident()?;
        let alias = if self.eat_keyword("AS") || matches!(self.peek(), Some(Tok::Ident(_))) {
            Some(self.ident()?)
        } else {
            None
        };
        Ok(TableRef { table, alias })
    }

    fn select_list(&mut self) -> Result<SelectList, SyntaxError> {
        if self.eat_keyword("COUNT") {
            self.expect_sym("(")?;
            self.expect_sym("*")?;
            self.expect_sym(")")?;
            return Ok(SelectList::CountStar);
        }
        let mut cols = vec![self.column_ref()?];
        while self.eat_sym(",") {
            cols.push(self.column_ref()?);
        }
        Ok(SelectList::Columns(cols))
    }

    fn operand(&mut self) -> Result<Operand, SyntaxError> {
        let lit = match self.peek() {
            Some(Tok::Int(i)) => Value::Integer(*i),
            Some(Tok::Real(r)) => Value::Real(*r),
            Some(Tok::Str(s)) => Value::Text(s.clone()),
            Some(Tok::Ident(_)) => return Ok(Operand::Column(self.column_ref()?)),
            _ => return self.fail("a column or literal"),
        };
        self.pos += 1;
        Ok(Operand::Literal(lit))
    }

    fn comparison(&mut self) -> Result<Predicate, SyntaxError> {
        if self.eat_sym("(") {
            let inner = self.or_pred()?;
            self.expect_sym(")")?;
            return Ok(inner);
        }
        let left = self.operand()?;
        let op = match self.peek() {
            Some(Tok::Sym("=")) => CmpOp::Eq,
            Some(Tok::Sym("!=")) => CmpOp::Ne,
            Some(Tok::Sym("<")) => CmpOp::Lt,
            Some(Tok::Sym("<=")) => CmpOp::Le,
            Some(Tok::Sym(">")) => CmpOp::Gt,
            Some(Tok::Sym(">=")) => CmpOp::Ge,
            _ => return self.fail("a comparison operator"),
        };
        self.pos += 1;
        let right = self.operand()?;
        Ok(Predicate::Compare { left, op, right })
    }

    fn and_pred(&mut self) -> Result<Predicate, SyntaxError> {
        let mut parts = vec![self.comparison()?];
        while self.eat_keyword("AND") {
            parts.push(self.comparison()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Predicate::And(parts) })
    }

    fn or_pred(&mut self) -> Result<Predicate, SyntaxError> {
        let mut parts = vec![self.and_pred()?];
        while self.eat_keyword("OR") {
            parts.push(self.and_pred()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Predicate::Or(parts) })
    }

    fn join(&mut self) -> Result<Option<Join>, SyntaxError> {
        let inner = self.eat_keyword("INNER");
        if !self.eat_keyword("JOIN") {
            return if inner { self.fail("JOIN") } else { Ok(None) };
        }
        let table = self.table_ref()?;
        self.expect_keyword("ON")?;
        let mut on = Vec::new();
        loop {
            let l = self.column_ref()?;
            self.expect_sym("=")?;
            let r = self.column_ref()?;
            on.push((l, r));
            // `AND` after a join condition continues it only if it is
            // followed by another `col = col` equality.
            let save = self.pos;
            if self.eat_keyword("AND") {
                let probe = self.pos;
                if self.column_ref().is_ok() && self.eat_sym("=") && self.column_ref().is_ok() {
                    self.pos = probe;
                    continue;
                }
                self.pos = save;
            }
            break;
        }
        Ok(Some(Join { table, on }))
    }

    fn statement(&mut self) -> Result<SqlAst, SyntaxError> {
        self.expect_keyword("SELECT")?;
        let select = self.select_list()?;
        self.expect_keyword("FROM")?;
        let from = self.table_ref()?;
        let mut joins = Vec::new();
        while let Some(j) = self.join()? {
            joins.push(j);
        }
        let filter = if self.eat_keyword("WHERE") { Some(self.or_pred()?) } else { None };
        self.eat_sym(";");
        if self.peek().is_some() {
            return self.fail("end of statement");
        }
        Ok(SqlAst { select, from, joins, filter })
    }
}

pub fn parse_sql(src: &str) -> Result<SqlAst, SyntaxError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, end: src.len() };
    p.statement()
}
