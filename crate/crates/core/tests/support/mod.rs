//! Brute-force oracles and random instance generators shared by the
//! property tests and the acceptance run.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use retrieval_gym::corpus::contains_sequence;
use retrieval_gym::metrics::ndcg_at_k;
use retrieval_gym::ppo::{gae, ppo_losses, Transition};
use retrieval_gym::retrieve::{eval_bool, Ranking};
use retrieval_gym::sql::{run_sql, MiniDb, Value};
use retrieval_gym::{tokenize, ActionVocab, BoolExpr, Corpus, Document, GaeConfig, InvertedIndex, PolicyParams, PpoConfig};

// Boolean retrieval --------------------------------------------------------

pub const WORDS: [&str; 6] = ["alpha", "beta", "gamma", "delta", "and", "or"];

pub fn random_term<R: Rng>(rng: &mut R) -> BoolExpr {
    let n = rng.gen_range(1..=2);
    let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
    BoolExpr::Term(words.join(" "))
}

pub fn random_expr<R: Rng>(rng: &mut R, depth: usize) -> BoolExpr {
    if depth == 0 || rng.gen_bool(0.35) {
        return random_term(rng);
    }
    let children = (0..rng.gen_range(2..=4)).map(|_| random_expr(rng, depth - 1)).collect();
    if rng.gen_bool(0.5) {
        BoolExpr::And(children)
    } else {
        BoolExpr::Or(children)
    }
}

pub fn random_corpus<R: Rng>(rng: &mut R, max_docs: usize) -> Corpus {
    let docs = (0..rng.gen_range(1..=max_docs))
        .map(|i| {
            let words: Vec<&str> = (0..rng.gen_range(0..8)).map(|_| *WORDS.choose(rng).unwrap()).collect();
            Document::new(format!("d{i}"), words.join(" "))
        })
        .collect();
    Corpus::new(docs).unwrap()
}

fn matches(expr: &BoolExpr, tokens: &[String]) -> bool {
    match expr {
        BoolExpr::Term(t) => contains_sequence(tokens, &tokenize(t)),
        BoolExpr::And(cs) => cs.iter().all(|c| matches(c, tokens)),
        BoolExpr::Or(cs) => cs.iter().any(|c| matches(c, tokens)),
    }
}

/// Ordinals of the documents whose token list satisfies `expr`, by direct scan.
pub fn scan_bool(expr: &BoolExpr, corpus: &Corpus) -> BTreeSet<usize> {
    (0..corpus.len()).filter(|&d| matches(expr, &tokenize(&corpus.doc(d).text))).collect()
}

pub fn bool_agrees(expr: &BoolExpr, corpus: &Corpus) -> bool {
    eval_bool(expr, corpus, &InvertedIndex::build(corpus)) == scan_bool(expr, corpus)
}

// NDCG ---------------------------------------------------------------------

pub fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

fn dcg(order: &[usize], grades: &[u32], k: usize) -> f64 {
    order.iter().take(k).enumerate().map(|(i, &d)| f64::from(grades[d]) / ((i + 2) as f64).log2()).sum()
}

/// Largest deviation between the library NDCG and DCG over the best of all
/// orderings, across every ordering of the judged documents.
pub fn ndcg_max_error(grades: &[u32], k: usize) -> f64 {
    let ids: Vec<String> = (0..grades.len()).map(|i| format!("d{i}")).collect();
    let judged: BTreeMap<String, u32> = ids.iter().cloned().zip(grades.iter().copied()).collect();
    let orders = permutations(&(0..grades.len()).collect::<Vec<_>>());
    let ideal = orders.iter().map(|o| dcg(o, grades, k)).fold(f64::NEG_INFINITY, f64::max);
    orders
        .iter()
        .map(|order| {
            let ranked: Vec<&str> = order.iter().map(|&d| ids[d].as_str()).collect();
            let got = ndcg_at_k(&Ranking::from_ordered_ids(&ranked), &judged, k).unwrap();
            (got - dcg(order, grades, k) / ideal).abs()
        })
        .fold(0.0, f64::max)
}

// GAE ----------------------------------------------------------------------

/// `A_t = Σ_l (γλ)^l δ_{t+l}` term by term.
pub fn gae_double_sum(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let delta = |t: usize| rewards[t] + gamma * values.get(t + 1).copied().unwrap_or(0.0) - values[t];
    (0..n).map(|t| (t..n).map(|j| (gamma * lambda).powi((j - t) as i32) * delta(j)).sum()).collect()
}

/// Largest advantage or return deviation from the double-sum oracle.
pub fn gae_max_error(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> f64 {
    let (adv, ret) = gae(rewards, values, &GaeConfig { gamma, lambda });
    gae_double_sum(rewards, values, gamma, lambda)
        .iter()
        .enumerate()
        .map(|(t, want)| (adv[t] - want).abs().max((ret[t] - (want + values[t])).abs()))
        .fold(0.0, f64::max)
}

// SQL ----------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum Lit {
    Int(i64),
    Real(f64),
    Text(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kind {
    Num,
    Text,
}

/// (table, column, kind, position within its table)
pub const COLUMNS: [(&str, &str, Kind, usize); 7] = [
    ("emp", "id", Kind::Num, 0),
    ("emp", "dept", Kind::Num, 1),
    ("emp", "name", Kind::Text, 2),
    ("emp", "score", Kind::Num, 3),
    ("dept", "did", Kind::Num, 0),
    ("dept", "title", Kind::Text, 1),
    ("dept", "budget", Kind::Num, 2),
];
const NAMES: [&str; 3] = ["ann", "bob", "cy"];
const SCORES: [f64; 3] = [0.5, 1.0, 2.5];
const OPS: [&str; 7] = ["=", "!=", "<>", "<", "<=", ">", ">="];

#[derive(Debug, Clone)]
pub enum Pred {
    ColLit(usize, usize, Lit),
    ColCol(usize, usize, usize),
    And(Box<Pred>, Box<Pred>),
    Or(Box<Pred>, Box<Pred>),
}

#[derive(Debug, Clone)]
pub struct Query {
    pub join: bool,
    pub count: bool,
    pub select: Vec<usize>,
    pub filter: Option<Pred>,
}

pub type EmpRow = (i64, i64, &'static str, f64);
pub type DeptRow = (i64, &'static str, i64);

#[derive(Debug, Clone)]
pub struct Rows {
    pub emp: Vec<EmpRow>,
    pub dept: Vec<DeptRow>,
}

fn random_lit<R: Rng>(rng: &mut R, kind: Kind) -> Lit {
    match kind {
        Kind::Num if rng.gen_bool(0.5) => Lit::Int(rng.gen_range(0..5)),
        Kind::Num => Lit::Real(*SCORES.choose(rng).unwrap()),
        Kind::Text => Lit::Text(NAMES.choose(rng).unwrap()),
    }
}

fn random_pred<R: Rng>(rng: &mut R, cols: usize, depth: usize) -> Pred {
    if depth > 0 && rng.gen_bool(0.4) {
        let (a, b) = (random_pred(rng, cols, depth - 1), random_pred(rng, cols, depth - 1));
        return if rng.gen_bool(0.5) { Pred::And(Box::new(a), Box::new(b)) } else { Pred::Or(Box::new(a), Box::new(b)) };
    }
    let c = rng.gen_range(0..cols);
    let op = rng.gen_range(0..OPS.len());
    let same: Vec<usize> = (0..cols).filter(|&o| COLUMNS[o].2 == COLUMNS[c].2).collect();
    if rng.gen_bool(0.3) {
        Pred::ColCol(c, op, *same.choose(rng).unwrap())
    } else {
        Pred::ColLit(c, op, random_lit(rng, COLUMNS[c].2))
    }
}

pub fn random_query<R: Rng>(rng: &mut R) -> Query {
    let join = rng.gen_bool(0.5);
    let cols = if join { COLUMNS.len() } else { 4 };
    Query {
        join,
        count: rng.gen_bool(0.3),
        select: (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(0..cols)).collect(),
        filter: rng.gen_bool(0.8).then(|| random_pred(rng, cols, 2)),
    }
}

pub fn random_rows<R: Rng>(rng: &mut R) -> Rows {
    Rows {
        emp: (0..rng.gen_range(0..8))
            .map(|_| (rng.gen_range(0..5), rng.gen_range(0..4), *NAMES.choose(rng).unwrap(), *SCORES.choose(rng).unwrap()))
            .collect(),
        dept: (0..rng.gen_range(0..6))
            .map(|_| (rng.gen_range(0..4), *NAMES.choose(rng).unwrap(), rng.gen_range(0..5)))
            .collect(),
    }
}

pub fn build_db(rows: &Rows) -> MiniDb {
    let emp: Vec<String> = rows.emp.iter().map(|(a, b, c, d)| format!("[{a},{b},\"{c}\",{d:?}]")).collect();
    let dept: Vec<String> = rows.dept.iter().map(|(a, b, c)| format!("[{a},\"{b}\",{c}]")).collect();
    let src = format!(
        r#"{{"name":"t","tables":[
          {{"name":"emp","columns":[{{"name":"id","type":"integer"}},{{"name":"dept","type":"integer"}},
            {{"name":"name","type":"text"}},{{"name":"score","type":"real"}}],"rows":[{}]}},
          {{"name":"dept","columns":[{{"name":"did","type":"integer"}},{{"name":"title","type":"text"}},
            {{"name":"budget","type":"integer"}}],"rows":[{}]}}]}}"#,
        emp.join(","),
        dept.join(",")
    );
    MiniDb::from_json(&src).unwrap()
}

fn col_sql(c: usize) -> String {
    format!("{}.{}", COLUMNS[c].0, COLUMNS[c].1)
}

fn lit_sql(l: &Lit) -> String {
    match l {
        Lit::Int(i) => i.to_string(),
        Lit::Real(r) => format!("{r:?}"),
        Lit::Text(s) => format!("'{s}'"),
    }
}

fn pred_sql(p: &Pred) -> String {
    match p {
        Pred::ColLit(c, op, l) => format!("{} {} {}", col_sql(*c), OPS[*op], lit_sql(l)),
        Pred::ColCol(a, op, b) => format!("{} {} {}", col_sql(*a), OPS[*op], col_sql(*b)),
        Pred::And(a, b) => format!("({} AND {})", pred_sql(a), pred_sql(b)),
        Pred::Or(a, b) => format!("({} OR {})", pred_sql(a), pred_sql(b)),
    }
}

pub fn query_sql(q: &Query) -> String {
    let select = if q.count {
        "COUNT(*)".to_owned()
    } else {
        q.select.iter().map(|&c| col_sql(c)).collect::<Vec<_>>().join(", ")
    };
    let mut s = format!("SELECT {select} FROM emp");
    if q.join {
        s.push_str(" JOIN dept ON emp.dept = dept.did");
    }
    if let Some(p) = &q.filter {
        s.push_str(&format!(" WHERE {}", pred_sql(p)));
    }
    s
}

fn cell(row: &[Value], c: usize) -> &Value {
    let (table, _, _, i) = COLUMNS[c];
    &row[if table == "emp" { i } else { 4 + i }]
}

fn as_num(v: &Value) -> f64 {
    match v {
        Value::Integer(i) => *i as f64,
        Value::Real(r) => *r,
        Value::Text(t) => panic!("text {t} in a numeric comparison"),
    }
}

fn cmp_holds(a: &Value, op: usize, b: &Value) -> bool {
    use std::cmp::Ordering::*;
    let ord = match (a, b) {
        (Value::Text(x), Value::Text(y)) => x.cmp(y),
        _ => as_num(a).partial_cmp(&as_num(b)).unwrap(),
    };
    match OPS[op] {
        "=" => ord == Equal,
        "!=" | "<>" => ord != Equal,
        "<" => ord == Less,
        "<=" => ord != Greater,
        ">" => ord == Greater,
        _ => ord != Less,
    }
}

fn lit_value(l: &Lit) -> Value {
    match l {
        Lit::Int(i) => Value::Integer(*i),
        Lit::Real(r) => Value::Real(*r),
        Lit::Text(s) => Value::Text((*s).to_owned()),
    }
}

fn naive_pred(p: &Pred, row: &[Value]) -> bool {
    match p {
        Pred::ColLit(c, op, l) => cmp_holds(cell(row, *c), *op, &lit_value(l)),
        Pred::ColCol(a, op, b) => cmp_holds(cell(row, *a), *op, cell(row, *b)),
        Pred::And(a, b) => naive_pred(a, row) && naive_pred(b, row),
        Pred::Or(a, b) => naive_pred(a, row) || naive_pred(b, row),
    }
}

/// Nested loops over the raw rows: join, filter, project.
pub fn naive_sql(q: &Query, rows: &Rows) -> Vec<Vec<Value>> {
    let mut relation: Vec<Vec<Value>> = Vec::new();
    for &(a, b, c, d) in &rows.emp {
        let e = vec![Value::Integer(a), Value::Integer(b), Value::Text(c.to_owned()), Value::Real(d)];
        if !q.join {
            relation.push(e);
            continue;
        }
        for &(x, y, z) in &rows.dept {
            if b == x {
                let mut r = e.clone();
                r.extend([Value::Integer(x), Value::Text(y.to_owned()), Value::Integer(z)]);
                relation.push(r);
            }
        }
    }
    relation.retain(|r| q.filter.as_ref().is_none_or(|p| naive_pred(p, r)));
    if q.count {
        return vec![vec![Value::Integer(relation.len() as i64)]];
    }
    relation.iter().map(|r| q.select.iter().map(|&c| cell(r, c).clone()).collect()).collect()
}

pub fn sorted_rows(rows: &[Vec<Value>]) -> Vec<String> {
    let mut out: Vec<String> = rows.iter().map(|r| format!("{r:?}")).collect();
    out.sort();
    out
}

/// Executor and interpreter agree on one random instance; `Err` explains how not.
pub fn sql_agrees(q: &Query, rows: &Rows) -> Result<(), String> {
    let sql = query_sql(q);
    let got = run_sql(&sql, &build_db(rows)).map_err(|e| format!("{sql}: {e}"))?;
    if sorted_rows(&got.rows) == sorted_rows(&naive_sql(q, rows)) {
        Ok(())
    } else {
        Err(format!("{sql}: executor and interpreter disagree"))
    }
}

// Gradients ----------------------------------------------------------------

const H: f64 = 1e-6;

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

pub fn random_params<R: Rng>(rng: &mut R) -> PolicyParams {
    let vocab = ActionVocab::new(&["alpha", "beta", "gamma", "delta"]).unwrap();
    let mut p = PolicyParams::zeros(vocab, 8, rng.gen_range(0.3..1.5)).unwrap();
    p.actor.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
    p.critic.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
    p
}

/// Random features (bias fixed at 1), a random non-empty mask and an
/// unmasked action.
pub fn random_input<R: Rng>(rng: &mut R, params: &PolicyParams) -> (Vec<f64>, Vec<bool>, usize) {
    let mut phi: Vec<f64> = (0..params.feature_dim()).map(|_| rng.gen_range(0.0..1.0)).collect();
    *phi.last_mut().unwrap() = 1.0;
    let mut mask: Vec<bool> = (0..params.n_actions()).map(|_| rng.gen_bool(0.6)).collect();
    let forced = rng.gen_range(0..mask.len());
    mask[forced] = true;
    let allowed: Vec<usize> = (0..mask.len()).filter(|&j| mask[j]).collect();
    let action = *allowed.choose(rng).unwrap();
    (phi, mask, action)
}

pub fn finite_diff(weights: &[f64], f: &mut dyn FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut w = weights.to_vec();
    (0..w.len())
        .map(|i| {
            let orig = w[i];
            w[i] = orig + H;
            let up = f(&w);
            w[i] = orig - H;
            let down = f(&w);
            w[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

pub fn log_prob_grad_error<R: Rng>(rng: &mut R) -> f64 {
    let params = random_params(rng);
    let (phi, mask, action) = random_input(rng, &params);
    let (_, grad) = params.log_prob_grad(&phi, &mask, action).unwrap();
    let mut probe = params.clone();
    let fd = finite_diff(&params.actor, &mut |w| {
        probe.actor.copy_from_slice(w);
        probe.log_prob(&phi, &mask, action).unwrap()
    });
    rel_err(&grad, &fd)
}

pub fn entropy_grad_error<R: Rng>(rng: &mut R) -> f64 {
    let params = random_params(rng);
    let (phi, mask, _) = random_input(rng, &params);
    let (_, grad) = params.entropy_grad(&phi, &mask);
    let mut probe = params.clone();
    let fd = finite_diff(&params.actor, &mut |w| {
        probe.actor.copy_from_slice(w);
        probe.entropy_grad(&phi, &mask).0
    });
    rel_err(&grad, &fd)
}

/// Eight transitions whose ratios keep at least 1e-3 away from the clip
/// kinks, where the objective is not differentiable.
pub fn random_minibatch<R: Rng>(rng: &mut R, params: &PolicyParams, eps: f64) -> Vec<Transition> {
    (0..8)
        .map(|_| loop {
            let (features, mask, action) = random_input(rng, params);
            let lp = params.log_prob(&features, &mask, action).unwrap();
            let shift: f64 = rng.gen_range(-0.4..0.4);
            let ratio = shift.exp();
            if (ratio - (1.0 - eps)).abs() < 1e-3 || (ratio - (1.0 + eps)).abs() < 1e-3 {
                continue;
            }
            break Transition {
                features,
                mask,
                action,
                log_prob: lp - shift,
                ref_log_prob: lp,
                reward: 0.0,
                value: 0.0,
                advantage: rng.gen_range(-2.0..2.0),
                return_target: rng.gen_range(-4.0..6.0),
            };
        })
        .collect()
}

/// Relative errors of the actor and critic gradients of the full objective.
pub fn ppo_grad_error<R: Rng>(rng: &mut R) -> (f64, f64) {
    let params = random_params(rng);
    let cfg = PpoConfig {
        clip_eps: rng.gen_range(0.1..0.3),
        value_coef: rng.gen_range(0.1..1.0),
        entropy_coef: rng.gen_range(0.0..0.1),
        ..PpoConfig::default()
    };
    let batch = random_minibatch(rng, &params, cfg.clip_eps);
    let mb: Vec<&Transition> = batch.iter().collect();
    let losses = ppo_losses(&mb, &params, &cfg);

    let mut probe = params.clone();
    let fd_actor = finite_diff(&params.actor, &mut |w| {
        probe.actor.copy_from_slice(w);
        ppo_losses(&mb, &probe, &cfg).objective
    });
    let mut probe = params.clone();
    let fd_critic = finite_diff(&params.critic, &mut |w| {
        probe.critic.copy_from_slice(w);
        ppo_losses(&mb, &probe, &cfg).objective
    });
    (rel_err(&losses.actor_grad, &fd_actor), rel_err(&losses.critic_grad, &fd_critic))
}
