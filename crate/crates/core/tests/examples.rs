//! Worked examples for each public operation, with hand-computed or
//! brute-force expected values.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use retrieval_gym::corpus::{contains_span, Posting};
use retrieval_gym::injection::{clean_query, clean_to_fixpoint, detect_injection, injection_report, InjectionItem};
use retrieval_gym::metrics::{first_hit_rank, hits_at_n, ndcg_at_k, recall_at_k, result_sets_match};
use retrieval_gym::policy::{render_actions, render_response, Action};
use retrieval_gym::ppo::{gae, ppo_losses, rollout, Transition};
use retrieval_gym::query::{FormatErrorKind, Payload, ThinkMode};
use retrieval_gym::retrieve::{
    bm25_score, bm25_topk, boolean_retrieve, cosine, dense_topk, embed, embed_corpus, eval_bool_ids, Bm25Params,
    DenseConfig, Ranking,
};
use retrieval_gym::reward::{format_reward, rank_tier_reward, recall_tier_reward, sql_reward};
use retrieval_gym::sql::{parse_sql, run_sql, score_sql, ExecOutcome, MiniDb, ResultSet, Value};
use retrieval_gym::{
    composite_reward, parse_bool_query, parse_structured_response, render_bool_query, tokenize, train, ActionVocab,
    BoolExpr, Corpus, Document, GaeConfig, InvertedIndex, PolicyParams, PpoConfig, SearchEnv, TaskGrammar, TaskItem,
    TaskRewardSpec, TaskTarget, Target,
};

fn corpus(docs: &[(&str, &str)]) -> Corpus {
    Corpus::new(docs.iter().map(|(i, t)| Document::new(*i, *t)).collect()).unwrap()
}

fn t(s: &str) -> BoolExpr {
    BoolExpr::Term(s.to_owned())
}

fn set(ids: &[&str]) -> BTreeSet<String> {
    ids.iter().map(|s| (*s).to_owned()).collect()
}

fn ranking(ids: &[&str]) -> Ranking {
    Ranking::from_ordered_ids(ids)
}

fn club() -> MiniDb {
    MiniDb::from_json(include_str!("../fixtures/club.json")).unwrap()
}

fn book() -> MiniDb {
    MiniDb::from_json(include_str!("../fixtures/book.json")).unwrap()
}

// Corpus and index ---------------------------------------------------------

#[test]
fn tokenization() {
    assert_eq!(tokenize("A Clash of Kings"), ["a", "clash", "of", "kings"]);
    assert!(tokenize("").is_empty());
    assert_eq!(tokenize("COVID-19 trial"), ["covid", "19", "trial"]);
}

#[test]
fn index_postings_and_lengths() {
    let c = corpus(&[("d1", "a b"), ("d2", "b b c")]);
    let idx = InvertedIndex::build(&c);
    assert_eq!(idx.postings("a"), [Posting { doc: 0, tf: 1 }]);
    assert_eq!(idx.postings("b"), [Posting { doc: 0, tf: 1 }, Posting { doc: 1, tf: 2 }]);
    assert_eq!(idx.postings("c"), [Posting { doc: 1, tf: 1 }]);
    assert_eq!(idx.avg_doc_length(), 2.5);

    let empty = InvertedIndex::build(&Corpus::new(vec![]).unwrap());
    assert_eq!(empty.doc_count(), 0);
    assert_eq!(empty.terms().count(), 0);

    let blank = InvertedIndex::build(&corpus(&[("d1", "")]));
    assert_eq!(blank.doc_lengths(), [0]);
    assert_eq!(blank.avg_doc_length(), 0.0);
}

#[test]
fn answer_spans() {
    let doc = Document::new("d", "Common types include clevises, trunnion mounts, and spherical bearings.");
    assert!(contains_span(&doc, &["trunnion"]));
    assert!(!contains_span(&Document::new("d", "alpha beta"), &["beta alpha"]));
    assert!(!contains_span(&Document::new("d", ""), &["x"]));
}

// Boolean queries and responses ---------------------------------------------

#[test]
fn boolean_parsing() {
    assert_eq!(parse_bool_query("(A AND B) OR C").unwrap(), BoolExpr::Or(vec![BoolExpr::And(vec![t("a"), t("b")]), t("c")]));
    let q = "(perioperative OR surgery) AND (desmopressin OR DDAVP) AND (blood transfusion)";
    assert_eq!(
        parse_bool_query(q).unwrap(),
        BoolExpr::And(vec![
            BoolExpr::Or(vec![t("perioperative"), t("surgery")]),
            BoolExpr::Or(vec![t("desmopressin"), t("ddavp")]),
            t("blood transfusion"),
        ])
    );
    assert_eq!(parse_bool_query("(A AND").unwrap_err().kind, FormatErrorKind::BadQuerySyntax);
}

#[test]
fn structured_responses() {
    let ok = parse_structured_response(r#"<think>t</think><answer>{"query": "A AND B"}</answer>"#, TaskGrammar::BooleanSearch)
        .unwrap();
    assert_eq!(ok.payload, Payload::Boolean(BoolExpr::And(vec![t("a"), t("b")])));
    let kind = |s: &str| parse_structured_response(s, TaskGrammar::BooleanSearch).unwrap_err().kind;
    assert_eq!(kind("<answer>x</answer>"), FormatErrorKind::MissingThink);
    assert_eq!(kind(r#"<think>t</think><answer>{"query": "A AND"}</answer>"#), FormatErrorKind::BadQuerySyntax);
}

#[test]
fn canonical_rendering() {
    assert_eq!(render_bool_query(&BoolExpr::Or(vec![BoolExpr::And(vec![t("a"), t("b")]), t("c")])), r#"(("a" AND "b") OR "c")"#);
    assert_eq!(render_bool_query(&t("blood transfusion")), "\"blood transfusion\"");
}

// Retrieval ------------------------------------------------------------------

#[test]
fn boolean_evaluation() {
    let c = corpus(&[("d1", "a b"), ("d2", "b c")]);
    let idx = InvertedIndex::build(&c);
    assert_eq!(eval_bool_ids(&BoolExpr::And(vec![t("a"), t("b")]), &c, &idx), set(&["d1"]));
    assert_eq!(eval_bool_ids(&BoolExpr::Or(vec![t("a"), t("c")]), &c, &idx), set(&["d1", "d2"]));
    assert!(eval_bool_ids(&t("zzz"), &c, &idx).is_empty());
}

#[test]
fn bm25_scoring() {
    let params = Bm25Params::new(0.9, 0.4).unwrap();
    let idx = InvertedIndex::build(&corpus(&[("d1", "alpha beta")]));
    // N = 1, df = 1, tf = 1, |d| = avgdl.
    let idf = (1.0f64 + 0.5 / 1.5).ln();
    let want = idf * (1.0 * 1.9) / (1.0 + 0.9);
    assert!((bm25_score(&idx, &["alpha"], 0, params) - want).abs() <= 1e-9);
    assert_eq!(bm25_score(&idx, &["gamma"], 0, params), 0.0);

    let twins = InvertedIndex::build(&corpus(&[("d1", "x y"), ("d2", "x y"), ("d3", "z")]));
    assert_eq!(bm25_score(&twins, &["x"], 0, params), bm25_score(&twins, &["x"], 1, params));
}

#[test]
fn bm25_top_k() {
    let params = Bm25Params::default();
    let c = corpus(&[("d1", "a a b"), ("d2", "a c"), ("d3", "c d e"), ("d4", "b b b a"), ("d5", "q")]);
    let idx = InvertedIndex::build(&c);
    let terms = ["a", "b"];
    // Full scan: score every document, drop zeros, sort by (score desc, id asc).
    let mut scan: Vec<(String, f64)> = (0..c.len())
        .map(|d| (c.doc(d).id.clone(), bm25_score(&idx, &terms, d, params)))
        .filter(|(_, s)| *s > 0.0)
        .collect();
    scan.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let got = bm25_topk(&idx, &terms, 10, params);
    assert_eq!(got.entries(), scan.as_slice());
    assert_eq!(bm25_topk(&idx, &terms, 2, params).entries(), &scan[..2]);
    assert!(bm25_topk(&idx, &[] as &[&str], 10, params).is_empty());
}

#[test]
fn boolean_then_bm25() {
    let params = Bm25Params::default();
    let c = corpus(&[("d1", "a b"), ("d2", "a b b b"), ("d3", "a c"), ("d4", "b c")]);
    let idx = InvertedIndex::build(&c);
    let expr = BoolExpr::And(vec![t("a"), t("b")]);
    let got = boolean_retrieve(&expr, &c, &idx, 10, params);
    let mut want: Vec<(String, f64)> =
        [0, 1].iter().map(|&d| (c.doc(d).id.clone(), bm25_score(&idx, &["a", "b"], d, params))).collect();
    want.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    assert_eq!(got.entries(), want.as_slice());
    assert!(boolean_retrieve(&t("zzz"), &c, &idx, 10, params).is_empty());
    let top = boolean_retrieve(&expr, &c, &idx, 1, params);
    assert_eq!(top.entries(), &want[..1]);
}

#[test]
fn hashed_embeddings() {
    let cfg = DenseConfig::default();
    assert_eq!(embed("pivot mounting", &cfg), embed("pivot mounting", &cfg));
    let norm = embed("pivot mounting", &cfg).iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-12);
    let ab = embed("a b", &cfg);
    assert!(cosine(&ab, &embed("a b c", &cfg)) > cosine(&ab, &embed("x y z", &cfg)));
}

#[test]
fn dense_ranking() {
    let cfg = DenseConfig::default();
    let c = corpus(&[("d1", "trunnion mount"), ("d2", "pivot bearing"), ("d3", "pivot mounting hardware"), ("d4", "unrelated")]);
    let vectors = embed_corpus(&c, &cfg);
    let q = embed("pivot mounting hardware", &cfg);
    let got = dense_topk(&vectors, &q, 10).unwrap();
    assert_eq!(got.ids().next(), Some("d3"));
    assert_eq!(got.len(), 4);
    let mut scan: Vec<(String, f64)> = vectors.iter().map(|(id, v)| (id.clone(), cosine(v, &q))).collect();
    scan.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    assert_eq!(got.entries(), scan.as_slice());
}

// Metrics ----------------------------------------------------------------------

#[test]
fn recall_values() {
    let relevant: BTreeSet<String> = (0..27).map(|i| format!("r{i}")).collect();
    let with_hits = |h: usize| {
        let mut ids: Vec<String> = (0..h).map(|i| format!("r{i}")).collect();
        ids.extend((0..100).map(|i| format!("x{i}")));
        Ranking::from_ordered_ids(&ids)
    };
    assert_eq!(format!("{:.4}", recall_at_k(&with_hits(4), &relevant, 3000).unwrap()), "0.1481");
    assert_eq!(format!("{:.4}", recall_at_k(&with_hits(26), &relevant, 3000).unwrap()), "0.9630");
    assert_eq!(recall_at_k(&with_hits(27), &relevant, 27).unwrap(), 1.0);
}

#[test]
fn ndcg_values() {
    let grades: BTreeMap<String, u32> = [("a".to_owned(), 1), ("b".to_owned(), 1)].into();
    let got = ndcg_at_k(&ranking(&["a", "x", "y", "b", "z"]), &grades, 10).unwrap();
    let want = (1.0 + 1.0 / 5f64.log2()) / (1.0 + 1.0 / 3f64.log2());
    assert!((got - want).abs() < 1e-12);
    assert!((got - 0.8772).abs() < 5e-5);
    assert_eq!(ndcg_at_k(&ranking(&["a", "b", "x"]), &grades, 10).unwrap(), 1.0);
    let one: BTreeMap<String, u32> = [("a".to_owned(), 1)].into();
    assert!((ndcg_at_k(&ranking(&["x", "a"]), &one, 10).unwrap() - 1.0 / 3f64.log2()).abs() < 1e-12);
}

#[test]
fn first_hit_and_hits() {
    let mut docs: Vec<Document> = (1..=30).map(|i| Document::new(format!("d{i:02}"), format!("mounting hardware note {i}"))).collect();
    docs[16].text = "Common types include clevises, trunnion mounts, and spherical bearings.".into();
    let c = Corpus::new(docs).unwrap();
    let ids: Vec<String> = c.docs().iter().map(|d| d.id.clone()).collect();
    let r = Ranking::from_ordered_ids(&ids);
    let rank = first_hit_rank(&r, &c, &["trunnion"]);
    assert_eq!(rank, Some(17));
    assert_eq!(first_hit_rank(&r, &c, &["mounting"]), Some(1));
    assert_eq!(first_hit_rank(&r, &c, &["gimbal"]), None);
    assert_eq!(hits_at_n(rank, 20), 1);
    assert_eq!(hits_at_n(rank, 5), 0);
    for n in [1, 5, 20, 3000] {
        assert_eq!(hits_at_n(None, n), 0);
    }
}

#[test]
fn result_set_equality() {
    let rs = |rows: Vec<Vec<Value>>| ResultSet { rows };
    assert_eq!(result_sets_match(&rs(vec![vec![Value::Integer(9)]]), &rs(vec![vec![Value::Integer(9)]])), 1);
    let titles = book_titles_not_poet();
    assert_eq!(result_sets_match(&rs(vec![]), &titles), 0);
    let mut reversed = titles.clone();
    reversed.rows.reverse();
    assert_eq!(result_sets_match(&reversed, &titles), 1);
}

fn book_titles_not_poet() -> ResultSet {
    run_sql("SELECT Title FROM book WHERE Type != 'Poet'", &book()).unwrap()
}

// Rewards ------------------------------------------------------------------------

#[test]
fn format_and_tiers() {
    assert_eq!(format_reward(&parse_structured_response(&render_response("a", ThinkMode::Required), TaskGrammar::BooleanSearch)), 1.0);
    assert_eq!(format_reward(&parse_structured_response("<think>t</think>", TaskGrammar::BooleanSearch)), -4.0);
    assert_eq!(format_reward(&parse_structured_response("<think>t</think><answer>{oops</answer>", TaskGrammar::BooleanSearch)), -4.0);
    assert_eq!(recall_tier_reward(0.70).unwrap(), 5.0);
    assert_eq!(recall_tier_reward(0.50).unwrap(), 4.0);
    assert_eq!(recall_tier_reward(0.049).unwrap(), -3.5);
    assert_eq!(rank_tier_reward(Some(5)), 5.0);
    assert_eq!(rank_tier_reward(Some(21)), 2.0);
    assert_eq!(rank_tier_reward(None), -3.5);
    assert_eq!(sql_reward(ExecOutcome::Match, false), 1.0);
    assert_eq!(sql_reward(ExecOutcome::Mismatch, true), 0.3);
    assert_eq!(sql_reward(ExecOutcome::ExecutionError, true), 0.0);
}

#[test]
fn composite_totals() {
    let env = SearchEnv::boolean(corpus(&[("d1", "alpha beta"), ("d2", "alpha"), ("d3", "gamma")]));
    let grades: BTreeMap<String, u32> = [("d1".to_owned(), 1), ("d2".to_owned(), 1)].into();
    let spec = TaskRewardSpec::RecallTiers { k: 10 };
    let total = |text: &str| composite_reward(text, &env, &spec, Target::Grades(&grades)).unwrap().total;
    assert_eq!(total("no tags at all"), -4.0);
    assert_eq!(total(&render_response("alpha", ThinkMode::Required)), 6.0);
    assert_eq!(total(&render_response("gamma", ThinkMode::Required)), -2.5);
}

// SQL ------------------------------------------------------------------------------

#[test]
fn sql_parsing_and_execution() {
    assert!(parse_sql("SELECT count(*) FROM club").is_ok());
    assert!(parse_sql("SELECT Title FROM book WHERE Type != 'Poet'").is_ok());
    assert!(parse_sql("SELEC x").is_err());
    assert_eq!(run_sql("SELECT count(*) FROM club", &club()).unwrap().rows, vec![vec![Value::Integer(9)]]);
    let titles: Vec<Value> = book_titles_not_poet().rows.into_iter().flatten().collect();
    let want = ["A Game of Thrones", "A Clash of Kings", "A Storm of Swords", "A Feast for Crows"];
    assert_eq!(titles, want.map(|s| Value::Text(s.to_owned())));
    let all = run_sql("SELECT Title FROM book WHERE Title != 'Poet'", &book()).unwrap();
    assert_eq!(all.rows.len(), 5);
    assert_eq!(result_sets_match(&all, &book_titles_not_poet()), 0);
}

#[test]
fn sql_scoring() {
    let gold = "SELECT Title FROM book WHERE Type != 'Poet'";
    let same = score_sql(gold, gold, &book(), false).unwrap();
    assert_eq!((same.accuracy, same.reward), (1, 1.0));
    let equiv = score_sql("SELECT Title FROM book WHERE Type = 'Novel'", gold, &book(), false).unwrap();
    assert_eq!((equiv.accuracy, equiv.reward), (1, 1.0));
    let broken = score_sql("SELEC Title", gold, &book(), false).unwrap();
    assert_eq!((broken.accuracy, broken.reward), (0, 0.0));
}

// Policy -----------------------------------------------------------------------------

fn small_policy(max_len: usize) -> PolicyParams {
    PolicyParams::zeros(ActionVocab::new(&["alpha", "beta"]).unwrap(), max_len, 0.6).unwrap()
}

#[test]
fn feature_vectors() {
    let p = small_policy(8);
    let s0 = p.initial_state("alpha gamma");
    let phi = p.features(&s0);
    // in-query indicators, then AND/OR/(/) counts, depth, step, bias
    assert_eq!(phi, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    let mut s1 = s0.clone();
    s1.push(&p.vocab, p.vocab.index(Action::LParen));
    assert_eq!(s1.depth(), 1);
    assert_eq!(p.features(&s1.clone()), p.features(&s1));
}

#[test]
fn action_distribution() {
    let p = small_policy(8);
    let s = p.initial_state("alpha");
    let mask = p.mask(&s);
    let dist = p.action_distribution(&s);
    let allowed = mask.iter().filter(|&&m| m).count() as f64;
    for (pj, m) in dist.iter().zip(&mask) {
        assert_eq!(*pj, if *m { 1.0 / allowed } else { 0.0 });
    }
    assert!((dist.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
}

#[test]
fn decoding() {
    let mut p = small_policy(8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    use rand::Rng;
    p.actor.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
    assert_eq!(p.greedy_episode("alpha"), p.greedy_episode("alpha"));
    let a = p.sample_episode("alpha", &mut ChaCha8Rng::seed_from_u64(5));
    let b = p.sample_episode("alpha", &mut ChaCha8Rng::seed_from_u64(5));
    assert_eq!(a, b);
    let text = render_actions(&p.vocab, &a.actions());
    assert_eq!(render_bool_query(&parse_bool_query(&text).unwrap()), render_bool_query(&parse_bool_query(&a.query).unwrap()));
}

#[test]
fn log_prob_gradient_identities() {
    let mut p = small_policy(8);
    let s = p.initial_state("alpha");
    let (phi, mask) = (p.features(&s), p.mask(&s));
    // Σ_a p(a)·∇log p(a) = 0.
    let dist = p.distribution(&phi, &mask);
    let mut total = vec![0.0; p.actor.len()];
    for a in (0..mask.len()).filter(|&a| mask[a]) {
        let (_, g) = p.log_prob_grad(&phi, &mask, a).unwrap();
        total.iter_mut().zip(&g).for_each(|(t, x)| *t += dist[a] * x);
    }
    assert!(total.iter().all(|x| x.abs() < 1e-12));
    // A near-deterministic choice has a vanishing gradient.
    let bias_row = p.feature_dim() - 1;
    let n = p.n_actions();
    p.actor[bias_row * n] = 40.0;
    let (lp, g) = p.log_prob_grad(&phi, &mask, 0).unwrap();
    assert!(lp > -1e-12);
    assert!(g.iter().all(|x| x.abs() < 1e-12));
}

#[test]
fn value_head() {
    let p = small_policy(8);
    let s = p.initial_state("alpha");
    assert_eq!(p.value(&p.features(&s)), 0.0);
}

// Rollout, advantages and PPO ------------------------------------------------------

fn one_term_task() -> (SearchEnv, Vec<TaskItem>) {
    let env = SearchEnv::boolean(corpus(&[("d1", "alpha"), ("d2", "alpha beta"), ("d3", "beta")]));
    let grades: BTreeMap<String, u32> = [("d1".to_owned(), 1), ("d2".to_owned(), 1)].into();
    (env, vec![TaskItem { id: "q".into(), query: "alpha".into(), target: TaskTarget::Grades(grades) }])
}

#[test]
fn rollout_rewards_and_shaping() {
    let (env, items) = one_term_task();
    // One term and max_len 2: the only episode is `alpha` then EOS.
    let policy = PolicyParams::zeros(ActionVocab::new(&["alpha"]).unwrap(), 2, 0.6).unwrap();
    let spec = TaskRewardSpec::RecallTiers { k: 10 };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = rollout(&policy, &policy, &env, &spec, &items, 2, 0.0, &mut rng).unwrap();
    let rewards: Vec<f64> = batch[0].transitions.iter().map(|t| t.reward).collect();
    assert_eq!(rewards, [0.0, 6.0]);

    let shaped = rollout(&policy, &policy, &env, &spec, &items, 2, 0.1, &mut rng).unwrap();
    for t in shaped.iter().flat_map(|b| &b.transitions) {
        assert_eq!(t.log_prob, t.ref_log_prob);
    }
    assert_eq!(shaped[0].transitions.iter().map(|t| t.reward).collect::<Vec<_>>(), [0.0, 6.0]);

    let wide = small_policy(10);
    let a = rollout(&wide, &wide, &env, &spec, &items, 4, 0.001, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let b = rollout(&wide, &wide, &env, &spec, &items, 4, 0.001, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn advantage_examples() {
    let cfg = GaeConfig::default();
    let (adv, _) = gae(&[6.0], &[1.5], &cfg);
    assert_eq!(adv, [4.5]);
    let mc = GaeConfig { gamma: 1.0, lambda: 1.0 };
    let rewards = [0.5, -1.0, 2.0];
    let values = [0.3, 0.1, -0.2];
    let (adv, _) = gae(&rewards, &values, &mc);
    for t in 0..3 {
        let g: f64 = rewards[t..].iter().sum();
        assert!((adv[t] - (g - values[t])).abs() < 1e-12);
    }
}

#[test]
fn clipped_surrogate_examples() {
    let p = small_policy(8);
    let s = p.initial_state("alpha");
    let (features, mask) = (p.features(&s), p.mask(&s));
    let make = |advantage: f64| Transition {
        log_prob: p.log_prob(&features, &mask, 0).unwrap(),
        ref_log_prob: 0.0,
        features: features.clone(),
        mask: mask.clone(),
        action: 0,
        reward: 0.0,
        value: 0.0,
        advantage,
        return_target: 0.0,
    };
    let cfg = PpoConfig::default();
    let zeros = [make(0.0), make(0.0)];
    assert_eq!(ppo_losses(&zeros.iter().collect::<Vec<_>>(), &p, &cfg).clip, 0.0);
    let mixed = [make(1.0), make(-0.5), make(2.0)];
    let l = ppo_losses(&mixed.iter().collect::<Vec<_>>(), &p, &cfg);
    assert!(l.clipped_ratios.iter().all(|&r| (r - 1.0).abs() < 1e-12));
    assert!((l.clip - 2.5 / 3.0).abs() < 1e-12);
}

#[test]
fn zero_learning_rates_freeze_parameters() {
    let (env, items) = one_term_task();
    let init = small_policy(6);
    let ppo = PpoConfig { lr_actor: 0.0, lr_critic: 0.0, batch_episodes: 8, minibatch_episodes: 4, ..PpoConfig::default() };
    let out = train(&env, &TaskRewardSpec::RecallTiers { k: 10 }, &items, init.clone(), &ppo, &GaeConfig::default(), 4, &mut ChaCha8Rng::seed_from_u64(0), &mut |_| {})
        .unwrap();
    assert_eq!(out.params, init);
    assert_eq!(out.curve.len(), 4);
    assert!(out.curve.iter().all(|r| r.mean_kl_to_ref == 0.0));
    let h0 = out.curve[0].policy_entropy;
    assert!(out.curve.iter().all(|r| (r.policy_entropy - h0).abs() < 0.5));
}

// Knowledge injection ------------------------------------------------------------------

#[test]
fn injection_examples() {
    let original = "another term for the pivot mounting";
    assert!(!detect_injection(original, original, &["trunnion"]).flag);
    let d = detect_injection(original, "pivot mounting OR trunnion", &["trunnion"]);
    assert_eq!(d.injected, ["trunnion"]);
    assert!(!detect_injection(original, "pivot mounting", &["pivot"]).flag);

    assert_eq!(clean_query("pivot OR trunnion", &["trunnion"]), "pivot OR");
    assert_eq!(clean_query("pivot mounting", &[] as &[&str]), "pivot mounting");
    let candidates = ["new york", "york city"];
    let cleaned = clean_to_fixpoint("city guide", "new york city guide", &candidates);
    assert!(!detect_injection("city guide", &cleaned, &candidates).flag);
    assert!(!cleaned.contains("new york") && !cleaned.contains("york city"));

    let item = |id: &str, generated: &str| InjectionItem {
        id: id.into(),
        original: original.into(),
        generated: generated.into(),
        candidates: vec!["trunnion".into()],
    };
    let identical: Vec<InjectionItem> = (0..3).map(|i| item(&i.to_string(), original)).collect();
    assert_eq!(injection_report(&identical).unwrap().rate, 0.0);
    let injected: Vec<InjectionItem> = (0..3).map(|i| item(&i.to_string(), "trunnion")).collect();
    assert_eq!(injection_report(&injected).unwrap().rate, 1.0);
}
