//! Masked softmax-linear policy over boolean-query actions, with a linear
//! critic.
//!
//! An episode emits terms, `AND`, `OR`, parentheses and finally `EOS`. A
//! structural mask keeps every reachable sequence a complete, parseable
//! query within `max_len` actions, so sampled responses never fail the
//! format check.
//!
//! Feature layout (version 1) for a vocabulary with `n` terms:
//!
//! | index       | feature                                      |
//! |-------------|----------------------------------------------|
//! | `0..n`      | term `i` occurs in the input query (0 or 1)  |
//! | `n..n+4`    | counts of emitted AND, OR, `(`, `)`          |
//! | `n+4`       | current parenthesis depth                    |
//! | `n+5`       | step index                                   |
//! | `n+6`       | bias (always 1)                              |
//!
//! Counts and depth `c` enter as `c / (1 + c)` and the step as
//! `step / max_len`. Every feature stays in `[0, 1]`, which keeps plain SGD
//! stable, while the first operator still moves its feature by a full half.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{contains_sequence, tokenize};
use crate::query::ThinkMode;

pub const FEATURE_LAYOUT_VERSION: u32 = 1;
pub const CHECKPOINT_VERSION: u32 = 1;
pub const DEFAULT_TEMPERATURE: f64 = 0.6;
pub const DEFAULT_MAX_LEN: usize = 24;
/// Number of non-term features.
const EXTRA_FEATURES: usize = 7;
const THINK_TEMPLATE: &str = "Keep the most specific concepts of the request and combine them into a boolean search.";

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("action {0} is masked in this state")]
    MaskedAction(usize),
    #[error("action {action} out of range for a vocabulary of {size}")]
    UnknownAction { action: usize, size: usize },
    #[error("invalid policy configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Term(usize),
    And,
    Or,
    LParen,
    RParen,
    Eos,
}

/// Emit-able tokens: terms first, then AND, OR, `(`, `)`, EOS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionVocab {
    terms: Vec<String>,
}

impl ActionVocab {
    /// Normalizes and dedups `terms`, keeping first occurrences.
    pub fn new<S: AsRef<str>>(terms: &[S]) -> Result<Self, PolicyError> {
        let mut out: Vec<String> = Vec::new();
        for t in terms {
            let norm = tokenize(t.as_ref()).join(" ");
            if norm.is_empty() {
                return Err(PolicyError::Config(format!("term {:?} has no tokens", t.as_ref())));
            }
            if !out.contains(&norm) {
                out.push(norm);
            }
        }
        Ok(Self { terms: out })
    }

    /// Every token of every input query, followed by the task pool.
    pub fn for_task<S: AsRef<str>, P: AsRef<str>>(queries: &[S], pool: &[P]) -> Result<Self, PolicyError> {
        let mut terms: Vec<String> = queries.iter().flat_map(|q| tokenize(q.as_ref())).collect();
        terms.extend(pool.iter().map(|p| p.as_ref().to_owned()));
        Self::new(&terms)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len() + 5
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn feature_dim(&self) -> usize {
        self.terms.len() + EXTRA_FEATURES
    }

    pub fn action(&self, index: usize) -> Option<Action> {
        let n = self.terms.len();
        Some(match index {
            i if i < n => Action::Term(i),
            i if i == n => Action::And,
            i if i == n + 1 => Action::Or,
            i if i == n + 2 => Action::LParen,
            i if i == n + 3 => Action::RParen,
            i if i == n + 4 => Action::Eos,
            _ => return None,
        })
    }

    pub fn index(&self, action: Action) -> usize {
        let n = self.terms.len();
        match action {
            Action::Term(i) => i,
            Action::And => n,
            Action::Or => n + 1,
            Action::LParen => n + 2,
            Action::RParen => n + 3,
            Action::Eos => n + 4,
        }
    }

    pub fn eos(&self) -> usize {
        self.index(Action::Eos)
    }
}

/// Partial query under construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    in_query: Vec<bool>,
    actions: Vec<usize>,
    op_counts: [u32; 4],
    depth: usize,
    expect_operand: bool,
    finished: bool,
}

impl EpisodeState {
    pub fn new(vocab: &ActionVocab, input_query: &str) -> Self {
        let tokens = tokenize(input_query);
        let in_query = vocab
            .terms
            .iter()
            .map(|t| {
                let needle: Vec<String> = t.split(' ').map(str::to_owned).collect();
                contains_sequence(&tokens, &needle)
            })
            .collect();
        Self { in_query, actions: Vec::new(), op_counts: [0; 4], depth: 0, expect_operand: true, finished: false }
    }

    pub fn step(&self) -> usize {
        self.actions.len()
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Applies `action` without checking the mask.
    pub fn push(&mut self, vocab: &ActionVocab, action: usize) {
        match vocab.action(action) {
            Some(Action::Term(_)) => self.expect_operand = false,
            Some(Action::And) => {
                self.op_counts[0] += 1;
                self.expect_operand = true;
            }
            Some(Action::Or) => {
                self.op_counts[1] += 1;
                self.expect_operand = true;
            }
            Some(Action::LParen) => {
                self.op_counts[2] += 1;
                self.depth += 1;
                self.expect_operand = true;
            }
            Some(Action::RParen) => {
                self.op_counts[3] += 1;
                self.depth = self.depth.saturating_sub(1);
                self.expect_operand = false;
            }
            Some(Action::Eos) | None => self.finished = true,
        }
        self.actions.push(action);
    }

    /// Fewest further actions (including EOS) that complete the query.
    fn min_to_finish(expect_operand: bool, depth: usize) -> usize {
        usize::from(expect_operand) + depth + 1
    }

    /// Structural mask: which actions keep the query completable within
    /// `max_len` actions.
    pub fn mask(&self, vocab: &ActionVocab, max_len: usize) -> Vec<bool> {
        let mut mask = vec![false; vocab.len()];
        if self.finished {
            return mask;
        }
        let after = self.step() + 1;
        let fits = |expect: bool, depth: usize| after + Self::min_to_finish(expect, depth) <= max_len;
        if self.expect_operand {
            let term_ok = fits(false, self.depth);
            for m in mask.iter_mut().take(vocab.terms.len()) {
                *m = term_ok;
            }
            mask[vocab.index(Action::LParen)] = fits(true, self.depth + 1);
        } else {
            let op_ok = fits(true, self.depth);
            mask[vocab.index(Action::And)] = op_ok;
            mask[vocab.index(Action::Or)] = op_ok;
            if self.depth > 0 {
                mask[vocab.index(Action::RParen)] = fits(false, self.depth - 1);
            } else {
                mask[vocab.eos()] = after <= max_len;
            }
        }
        if !mask.contains(&true) {
            mask[vocab.eos()] = true;
        }
        mask
    }

    pub fn features(&self, vocab: &ActionVocab, max_len: usize) -> Vec<f64> {
        let mut phi: Vec<f64> = self.in_query.iter().map(|&b| f64::from(u8::from(b))).collect();
        let squash = |c: f64| c / (1.0 + c);
        phi.extend(self.op_counts.iter().map(|&c| squash(f64::from(c))));
        phi.push(squash(self.depth as f64));
        phi.push(self.step() as f64 / max_len as f64);
        phi.push(1.0);
        debug_assert_eq!(phi.len(), vocab.feature_dim());
        phi
    }
}

/// Actor and critic weights plus the decoding settings they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub vocab: ActionVocab,
    pub max_len: usize,
    pub temperature: f64,
    /// Row-major `feature_dim × vocab.len()`.
    pub actor: Vec<f64>,
    pub critic: Vec<f64>,
    pub think_mode: ThinkMode,
}

/// One sampled step, with everything needed to re-score it later.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub features: Vec<f64>,
    pub mask: Vec<bool>,
    pub action: usize,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub steps: Vec<Step>,
    /// Boolean query text inside the answer JSON.
    pub query: String,
    pub response: String,
}

impl Episode {
    pub fn actions(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.action).collect()
    }

    pub fn log_probs(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.log_prob).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    feature_layout: u32,
    vocab: Vec<String>,
    feature_dim: usize,
    max_len: usize,
    temperature: f64,
    #[serde(default)]
    think_mode: ThinkMode,
    actor: Vec<f64>,
    critic: Vec<f64>,
}

fn softmax_masked(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&z, _)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&z, &m)| if m { (z - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}

impl PolicyParams {
    /// Zero-initialized actor and critic, so the initial policy is uniform
    /// over unmasked actions.
    pub fn zeros(vocab: ActionVocab, max_len: usize, temperature: f64) -> Result<Self, PolicyError> {
        if max_len < 2 {
            return Err(PolicyError::Config("max_len must be at least 2 (one term and EOS)".into()));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(PolicyError::Config(format!("temperature must be positive, got {temperature}")));
        }
        let f = vocab.feature_dim();
        let a = vocab.len();
        Ok(Self { vocab, max_len, temperature, actor: vec![0.0; f * a], critic: vec![0.0; f], think_mode: ThinkMode::Required })
    }

    pub fn feature_dim(&self) -> usize {
        self.vocab.feature_dim()
    }

    pub fn n_actions(&self) -> usize {
        self.vocab.len()
    }

    pub fn initial_state(&self, input_query: &str) -> EpisodeState {
        EpisodeState::new(&self.vocab, input_query)
    }

    pub fn features(&self, state: &EpisodeState) -> Vec<f64> {
        state.features(&self.vocab, self.max_len)
    }

    pub fn mask(&self, state: &EpisodeState) -> Vec<bool> {
        state.mask(&self.vocab, self.max_len)
    }

    /// `Wᵀφ / temperature`.
    pub fn logits(&self, phi: &[f64]) -> Vec<f64> {
        let a = self.n_actions();
        let mut z = vec![0.0; a];
        for (f, &x) in phi.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &self.actor[f * a..(f + 1) * a];
            for (zj, w) in z.iter_mut().zip(row) {
                *zj += x * w;
            }
        }
        z.iter_mut().for_each(|zj| *zj /= self.temperature);
        z
    }

    pub fn distribution(&self, phi: &[f64], mask: &[bool]) -> Vec<f64> {
        softmax_masked(&self.logits(phi), mask)
    }

    pub fn action_distribution(&self, state: &EpisodeState) -> Vec<f64> {
        self.distribution(&self.features(state), &self.mask(state))
    }

    fn check_action(&self, mask: &[bool], action: usize) -> Result<(), PolicyError> {
        if action >= self.n_actions() {
            return Err(PolicyError::UnknownAction { action, size: self.n_actions() });
        }
        if !mask[action] {
            return Err(PolicyError::MaskedAction(action));
        }
        Ok(())
    }

    pub fn log_prob(&self, phi: &[f64], mask: &[bool], action: usize) -> Result<f64, PolicyError> {
        self.check_action(mask, action)?;
        Ok(self.distribution(phi, mask)[action].ln())
    }

    /// Log-probability and its gradient with respect to the actor weights:
    /// `φ ⊗ (onehot(a) − p) / temperature`, laid out like `actor`.
    pub fn log_prob_grad(&self, phi: &[f64], mask: &[bool], action: usize) -> Result<(f64, Vec<f64>), PolicyError> {
        self.check_action(mask, action)?;
        let p = self.distribution(phi, mask);
        let mut dz = p.iter().map(|&pj| -pj / self.temperature).collect::<Vec<_>>();
        dz[action] += 1.0 / self.temperature;
        Ok((p[action].ln(), outer(phi, &dz)))
    }

    pub fn log_prob_and_grad(&self, state: &EpisodeState, action: usize) -> Result<(f64, Vec<f64>), PolicyError> {
        self.log_prob_grad(&self.features(state), &self.mask(state), action)
    }

    /// Entropy of the masked distribution and its actor gradient.
    pub fn entropy_grad(&self, phi: &[f64], mask: &[bool]) -> (f64, Vec<f64>) {
        let p = self.distribution(phi, mask);
        let h = entropy(&p);
        let dz: Vec<f64> = p
            .iter()
            .map(|&pj| if pj > 0.0 { -pj * (pj.ln() + h) / self.temperature } else { 0.0 })
            .collect();
        (h, outer(phi, &dz))
    }

    pub fn value(&self, phi: &[f64]) -> f64 {
        dot(&self.critic, phi)
    }

    fn sample_action<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = 0;
        for (j, &pj) in p.iter().enumerate() {
            if pj > 0.0 {
                acc += pj;
                last = j;
                if u < acc {
                    return j;
                }
            }
        }
        last
    }

    fn run<F: FnMut(&[f64]) -> usize>(&self, input_query: &str, mut choose: F) -> Episode {
        let mut state = self.initial_state(input_query);
        let mut steps = Vec::new();
        while !state.is_finished() {
            let features = self.features(&state);
            let mask = self.mask(&state);
            let p = self.distribution(&features, &mask);
            let action = choose(&p);
            steps.push(Step { log_prob: p[action].ln(), features, mask, action });
            state.push(&self.vocab, action);
        }
        let query = render_actions(&self.vocab, state.actions());
        let response = render_response(&query, self.think_mode);
        Episode { steps, query, response }
    }

    pub fn sample_episode<R: Rng + ?Sized>(&self, input_query: &str, rng: &mut R) -> Episode {
        self.run(input_query, |p| Self::sample_action(p, rng))
    }

    /// Argmax decoding; ties go to the lowest action index.
    pub fn greedy_episode(&self, input_query: &str) -> Episode {
        self.run(input_query, |p| {
            let mut best = 0;
            for (j, &pj) in p.iter().enumerate() {
                if pj > p[best] {
                    best = j;
                }
            }
            best
        })
    }

    /// Order-sensitive hash of every weight bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for w in self.actor.iter().chain(&self.critic) {
            for b in w.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    pub fn to_json(&self) -> String {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            feature_layout: FEATURE_LAYOUT_VERSION,
            vocab: self.vocab.terms.clone(),
            feature_dim: self.feature_dim(),
            max_len: self.max_len,
            temperature: self.temperature,
            think_mode: self.think_mode,
            actor: self.actor.clone(),
            critic: self.critic.clone(),
        };
        serde_json::to_string(&ck).expect("checkpoint serializes")
    }

    pub fn from_json(src: &str) -> Result<Self, PolicyError> {
        let ck: Checkpoint = serde_json::from_str(src).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION || ck.feature_layout != FEATURE_LAYOUT_VERSION {
            return Err(PolicyError::Checkpoint(format!(
                "unsupported version {} / feature layout {}",
                ck.version, ck.feature_layout
            )));
        }
        let vocab = ActionVocab::new(&ck.vocab)?;
        if vocab.terms != ck.vocab {
            return Err(PolicyError::Checkpoint("vocabulary is not normalized".into()));
        }
        let mut params = Self::zeros(vocab, ck.max_len, ck.temperature)?;
        if ck.feature_dim != params.feature_dim()
            || ck.actor.len() != params.actor.len()
            || ck.critic.len() != params.critic.len()
        {
            return Err(PolicyError::Checkpoint(format!(
                "weights do not match a {}-feature, {}-action policy",
                params.feature_dim(),
                params.n_actions()
            )));
        }
        if ck.actor.iter().chain(&ck.critic).any(|w| !w.is_finite()) {
            return Err(PolicyError::Checkpoint("non-finite weight".into()));
        }
        params.actor = ck.actor;
        params.critic = ck.critic;
        params.think_mode = ck.think_mode;
        Ok(params)
    }
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn outer(phi: &[f64], dz: &[f64]) -> Vec<f64> {
    let mut g = Vec::with_capacity(phi.len() * dz.len());
    for &x in phi {
        g.extend(dz.iter().map(|&d| x * d));
    }
    g
}

/// Linear critic `w·φ`; the gradient is `φ` itself.
pub fn value_and_grad(critic: &[f64], phi: &[f64]) -> (f64, Vec<f64>) {
    (dot(critic, phi), phi.to_vec())
}

fn render_term(term: &str) -> String {
    let keyword = term.eq_ignore_ascii_case("and") || term.eq_ignore_ascii_case("or");
    if keyword || term.contains(' ') {
        format!("\"{term}\"")
    } else {
        term.to_owned()
    }
}

/// Query text for an action sequence (EOS and anything after it ignored).
pub fn render_actions(vocab: &ActionVocab, actions: &[usize]) -> String {
    let mut parts = Vec::new();
    for &a in actions {
        match vocab.action(a) {
            Some(Action::Term(i)) => parts.push(render_term(&vocab.terms[i])),
            Some(Action::And) => parts.push("AND".to_owned()),
            Some(Action::Or) => parts.push("OR".to_owned()),
            Some(Action::LParen) => parts.push("(".to_owned()),
            Some(Action::RParen) => parts.push(")".to_owned()),
            Some(Action::Eos) | None => break,
        }
    }
    parts.join(" ")
}

/// Wraps a boolean query in the `<think>`/`<answer>` response format.
pub fn render_response(query: &str, mode: ThinkMode) -> String {
    let answer = serde_json::json!({ "query": query }).to_string();
    match mode {
        ThinkMode::Required => format!("<think>{THINK_TEMPLATE}</think>\n<answer>{answer}</answer>"),
        ThinkMode::AnswerOnly => format!("<answer>{answer}</answer>"),
    }
}

pub fn think_template() -> &'static str {
    THINK_TEMPLATE
}
