//! Simulated greedy verifier and decode loop.
//!
//! Given a prompt and its ground-truth greedy response, each decoding step
//! speculates a draft tree, accepts the longest root path that matches the
//! remaining response, and emits the accepted drafts plus one bonus token
//! (the token the target model would produce anyway). The emitted stream
//! therefore always equals the ground truth exactly; what varies with the
//! configuration is how many verification steps it takes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{EngineConfig, FallbackConfig};
use crate::corpus::{EvalPair, TokenId, TokenSequence};
use crate::error::{Error, Result};
use crate::speculation::{
    decide, generate_candidate_tree, FallbackSpeculator, SpeculationDecision, SpeculationTree,
    SyntheticFallback,
};
use crate::suffix_tree::{SuffixTree, TreeRole};

/// How a step obtained its drafts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    Suffix,
    Fallback,
    None,
}

impl DecisionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DecisionKind::Suffix => "suffix",
            DecisionKind::Fallback => "fallback",
            DecisionKind::None => "none",
        }
    }
}

/// Outcome of one verification step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    /// Pattern length of the speculated tree; 0 on fallback/vanilla steps.
    pub pattern_len: usize,
    /// Number of draft tokens submitted for verification.
    pub speculated: usize,
    /// Draft tokens accepted (excludes the bonus token).
    pub accepted: usize,
    /// Tokens emitted: always `accepted + 1`.
    pub emitted: usize,
    pub decision: DecisionKind,
    /// Score of the best suffix candidate this step, 0 when none matched.
    pub score: f64,
}

/// Per-request summary. Step records are carried for CSV export but omitted
/// from the JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct RequestReport {
    pub request_id: String,
    pub steps: u64,
    pub output_tokens: u64,
    pub mean_emitted_per_step: f64,
    pub acceptance_rate: f64,
    #[serde(skip)]
    pub step_records: Vec<StepRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub total_output_tokens: u64,
    pub total_steps: u64,
    pub mean_emitted_per_step: f64,
    pub mean_accepted_per_step: f64,
    /// Accepted drafts over speculated drafts.
    pub acceptance_rate: f64,
    /// Output tokens per verification step; the hardware-independent speedup.
    pub step_speedup: f64,
    pub total_speculated: u64,
    pub total_accepted: u64,
    pub suffix_steps: u64,
    pub fallback_steps: u64,
    pub none_steps: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub config: EngineConfig,
    pub aggregate: Aggregate,
    pub per_request: Vec<RequestReport>,
}

impl SimReport {
    /// Per-step CSV rows with header:
    /// `request_id, step, p, speculated, accepted, emitted, decision, score`.
    pub fn steps_csv(&self) -> String {
        let mut out = String::from("request_id,step,p,speculated,accepted,emitted,decision,score\n");
        for request in &self.per_request {
            for rec in &request.step_records {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    request.request_id,
                    rec.step,
                    rec.pattern_len,
                    rec.speculated,
                    rec.accepted,
                    rec.emitted,
                    rec.decision.as_str(),
                    rec.score,
                ));
            }
        }
        out
    }
}

/// Accepted-draft count for a speculation tree against the remaining ground
/// truth: the length of the longest root path whose tokens equal a prefix of
/// `truth`. Children are distinct, so at most one branch survives per depth.
pub fn verify_tree(tree: &SpeculationTree, truth: &[TokenId]) -> usize {
    let mut current = 0usize;
    let mut accepted = 0usize;
    for &want in truth {
        let next = tree
            .nodes
            .iter()
            .position(|n| n.parent == Some(current) && n.token == want);
        match next {
            Some(idx) => {
                accepted += 1;
                current = idx;
            }
            None => break,
        }
    }
    accepted
}

/// Accepted-draft count for a fallback chain: longest matching prefix.
fn verify_chain(chain: &[TokenId], truth: &[TokenId]) -> usize {
    chain
        .iter()
        .zip(truth)
        .take_while(|(a, b)| a == b)
        .count()
}

fn make_fallback(cfg: &EngineConfig, request_index: u64) -> Option<Box<dyn FallbackSpeculator>> {
    match cfg.fallback {
        FallbackConfig::None => None,
        FallbackConfig::Synthetic {
            chain_len,
            mean_accept,
        } => {
            // Stream-separated RNG so parallel and sequential runs agree.
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(request_index.wrapping_add(1));
            Some(Box::new(SyntheticFallback::new(chain_len, mean_accept, rng)))
        }
    }
}

/// Replays one request: seeds a fresh per-request tree from the prompt,
/// speculates and verifies step by step, and extends the per-request tree
/// with every emitted token. Returns the step records and the emitted
/// tokens, which always equal the ground-truth response.
pub fn simulate_request(
    pair: &EvalPair,
    global: &SuffixTree,
    cfg: &EngineConfig,
    request_index: u64,
) -> Result<(Vec<StepRecord>, Vec<TokenId>)> {
    let mut per_request = SuffixTree::new(cfg.depth_cap, TreeRole::PerRequest)?;
    for &tok in &pair.prompt.tokens {
        per_request.extend_online(tok)?;
    }
    let mut fallback = make_fallback(cfg, request_index);
    let truth = &pair.response.tokens;
    let mut context = pair.prompt.tokens.clone();
    let mut emitted: Vec<TokenId> = Vec::with_capacity(truth.len());
    let mut records = Vec::new();

    while emitted.len() < truth.len() {
        let remaining = &truth[emitted.len()..];
        let candidate = generate_candidate_tree(Some(global), Some(&per_request), &context, cfg);
        let score = candidate.as_ref().map_or(0.0, |c| c.score);
        let decision = decide(candidate, cfg.tau, fallback.is_some());
        let (kind, pattern_len, speculated, accepted) = match &decision {
            SpeculationDecision::Suffix(tree) => {
                let accepted = verify_tree(tree, remaining).min(remaining.len() - 1);
                (DecisionKind::Suffix, tree.pattern_len, tree.draft_count(), accepted)
            }
            SpeculationDecision::Fallback => {
                let chain = fallback
                    .as_mut()
                    .expect("fallback decision implies a configured fallback")
                    .propose(&context, remaining);
                let accepted = verify_chain(&chain, remaining).min(remaining.len() - 1);
                (DecisionKind::Fallback, 0, chain.len(), accepted)
            }
            SpeculationDecision::None => (DecisionKind::None, 0, 0, 0),
        };
        // Accepted drafts plus the bonus token the verifier always yields.
        let step_tokens = &remaining[..accepted + 1];
        for &tok in step_tokens {
            per_request.extend_online(tok)?;
            context.push(tok);
        }
        emitted.extend_from_slice(step_tokens);
        records.push(StepRecord {
            step: records.len(),
            pattern_len,
            speculated,
            accepted,
            emitted: accepted + 1,
            decision: kind,
            score,
        });
    }

    assert_eq!(&emitted, truth, "simulated decode must reproduce the ground truth");
    Ok((records, emitted))
}

fn enforce_capacity(global: &mut SuffixTree, cfg: &EngineConfig) -> Result<()> {
    if let Some(capacity) = cfg.evict_capacity {
        while global.token_count() > capacity && global.retained_sequences() > 0 {
            global.evict_oldest()?;
        }
    }
    Ok(())
}

fn summarize_request(request_id: String, records: Vec<StepRecord>) -> RequestReport {
    let steps = records.len() as u64;
    let output_tokens: u64 = records.iter().map(|r| r.emitted as u64).sum();
    let speculated: u64 = records.iter().map(|r| r.speculated as u64).sum();
    let accepted: u64 = records.iter().map(|r| r.accepted as u64).sum();
    RequestReport {
        request_id,
        steps,
        output_tokens,
        mean_emitted_per_step: ratio(output_tokens, steps),
        acceptance_rate: ratio(accepted, speculated),
        step_records: records,
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Builds the global tree from `corpus`, replays every pair, and aggregates.
///
/// With `online_adapt`, each completed response is inserted into the global
/// tree before the next pair, so processing is sequential by definition;
/// otherwise requests are independent and run on `jobs` workers.
pub fn run_simulation(
    pairs: &[EvalPair],
    corpus: &[TokenSequence],
    cfg: &EngineConfig,
) -> Result<SimReport> {
    cfg.validate()?;
    let mut global = SuffixTree::new(cfg.depth_cap, TreeRole::Global)?;
    for seq in corpus {
        if seq.is_empty() {
            continue;
        }
        global.insert_sequence(seq)?;
        enforce_capacity(&mut global, cfg)?;
    }

    let sequential = cfg.requires_sequential() || cfg.jobs == 1;
    let all_records: Vec<Vec<StepRecord>> = if sequential {
        let mut out = Vec::with_capacity(pairs.len());
        for (idx, pair) in pairs.iter().enumerate() {
            if cfg.include_prompts_in_global && !pair.prompt.is_empty() {
                global.insert_sequence(&TokenSequence::new(
                    pair.prompt.tokens.clone(),
                    format!("prompt:{idx}"),
                ))?;
                enforce_capacity(&mut global, cfg)?;
            }
            let (records, _) = simulate_request(pair, &global, cfg, idx as u64)?;
            if cfg.online_adapt {
                global.insert_sequence(&TokenSequence::new(
                    pair.response.tokens.clone(),
                    format!("response:{idx}"),
                ))?;
                enforce_capacity(&mut global, cfg)?;
            }
            out.push(records);
        }
        out
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        let global = &global;
        pool.install(|| {
            pairs
                .par_iter()
                .enumerate()
                .map(|(idx, pair)| simulate_request(pair, global, cfg, idx as u64).map(|(r, _)| r))
                .collect::<Result<Vec<_>>>()
        })?
    };

    let per_request: Vec<RequestReport> = all_records
        .into_iter()
        .enumerate()
        .map(|(idx, records)| summarize_request(idx.to_string(), records))
        .collect();

    let total_steps: u64 = per_request.iter().map(|r| r.steps).sum();
    let total_output_tokens: u64 = per_request.iter().map(|r| r.output_tokens).sum();
    let mut total_speculated = 0u64;
    let mut total_accepted = 0u64;
    let mut suffix_steps = 0u64;
    let mut fallback_steps = 0u64;
    let mut none_steps = 0u64;
    for request in &per_request {
        for rec in &request.step_records {
            total_speculated += rec.speculated as u64;
            total_accepted += rec.accepted as u64;
            match rec.decision {
                DecisionKind::Suffix => suffix_steps += 1,
                DecisionKind::Fallback => fallback_steps += 1,
                DecisionKind::None => none_steps += 1,
            }
        }
    }
    let step_speedup = ratio(total_output_tokens, total_steps);
    let mean_accepted_per_step = ratio(total_accepted, total_steps);
    // Every step emits accepted + 1, so these two views must agree.
    if total_steps > 0 {
        debug_assert!((mean_accepted_per_step - (step_speedup - 1.0)).abs() < 1e-9);
    }
    let aggregate = Aggregate {
        total_output_tokens,
        total_steps,
        mean_emitted_per_step: step_speedup,
        mean_accepted_per_step,
        acceptance_rate: ratio(total_accepted, total_speculated),
        step_speedup,
        total_speculated,
        total_accepted,
        suffix_steps,
        fallback_steps,
        none_steps,
    };
    Ok(SimReport {
        config: cfg.clone(),
        aggregate,
        per_request,
    })
}

/// Which knob a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    Alpha,
    Tau,
    TreeSize,
    PCap,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Tau => "tau",
            SweepParam::TreeSize => "tree-size",
            SweepParam::PCap => "p-cap",
        }
    }
}

/// Runs one full simulation per value, everything else held fixed.
///
/// `tree-size` values subsample the training corpus: the corpus order is
/// shuffled once with the configured seed and each size takes a prefix, so
/// larger sizes strictly contain smaller ones.
pub fn sweep(
    param: SweepParam,
    values: &[f64],
    pairs: &[EvalPair],
    corpus: &[TokenSequence],
    base: &EngineConfig,
) -> Result<Vec<(f64, SimReport)>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("sweep requires at least one value".into()));
    }
    let shuffled: Vec<TokenSequence> = if param == SweepParam::TreeSize {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        order.into_iter().map(|i| corpus[i].clone()).collect()
    } else {
        Vec::new()
    };

    let mut out = Vec::with_capacity(values.len());
    for &value in values {
        let mut cfg = base.clone();
        let subset: &[TokenSequence] = match param {
            SweepParam::Alpha => {
                cfg.alpha = value;
                corpus
            }
            SweepParam::Tau => {
                cfg.tau = value;
                corpus
            }
            SweepParam::PCap => {
                cfg.max_pattern_len = value as usize;
                corpus
            }
            SweepParam::TreeSize => {
                let n = (value as usize).min(shuffled.len());
                &shuffled[..n]
            }
        };
        let report = run_simulation(pairs, subset, &cfg)?;
        out.push((value, report));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::speculation::expand_speculation_tree;

    fn seq(tokens: &[TokenId]) -> TokenSequence {
        TokenSequence::new(tokens.to_vec(), "t")
    }

    fn pair(prompt: &[TokenId], response: &[TokenId]) -> EvalPair {
        EvalPair {
            prompt: seq(prompt),
            response: seq(response),
        }
    }

    fn build(corpus: &[Vec<TokenId>], cap: usize) -> SuffixTree {
        let mut tree = SuffixTree::new(cap, TreeRole::Global).unwrap();
        for tokens in corpus {
            tree.insert_sequence(&seq(tokens)).unwrap();
        }
        tree
    }

    fn spec_tree(corpus: &[Vec<TokenId>], pattern: &[TokenId], budget: usize) -> SpeculationTree {
        let tree = build(corpus, 64);
        let anchor = tree.match_pattern(pattern, pattern.len()).unwrap();
        expand_speculation_tree(&tree, &anchor, budget)
    }

    #[test]
    fn verify_accepts_chain_prefix() {
        // Drafts form the chain [3]; truth continues [3, 5].
        let t = spec_tree(&[vec![1, 2, 3], vec![1, 2, 4]], &[1, 2], 2);
        assert_eq!(verify_tree(&t, &[3, 5]), 1);
    }

    #[test]
    fn verify_follows_matching_branch() {
        let t = spec_tree(&[vec![1, 2, 3], vec![1, 2, 4]], &[1, 2], 3);
        assert_eq!(t.draft_count(), 2);
        assert!(verify_tree(&t, &[4, 9]) >= 1);
    }

    #[test]
    fn verify_rejects_on_first_token() {
        let t = spec_tree(&[vec![1, 2, 3], vec![1, 2, 4]], &[1, 2], 3);
        assert_eq!(verify_tree(&t, &[7, 7]), 0);
    }

    // Exhaustive oracle: accepted = longest root path equal to a truth prefix.
    fn verify_oracle(tree: &SpeculationTree, truth: &[TokenId]) -> usize {
        let mut best = 0;
        for idx in 1..tree.nodes.len() {
            // Reconstruct the path from the sentinel to this node.
            let mut path = Vec::new();
            let mut cur = Some(idx);
            while let Some(i) = cur {
                if i == 0 {
                    break;
                }
                path.push(tree.nodes[i].token);
                cur = tree.nodes[i].parent;
            }
            path.reverse();
            if path.len() <= truth.len() && path == truth[..path.len()] {
                best = best.max(path.len());
            }
        }
        best
    }

    #[test]
    fn verify_matches_exhaustive_path_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let corpus: Vec<Vec<TokenId>> = (0..6)
                .map(|_| (0..12).map(|_| rng.gen_range(0..5)).collect())
                .collect();
            let tree = build(&corpus, 16);
            let context = corpus[0].clone();
            let Some(anchor) = tree.match_pattern(&context, 1) else {
                continue;
            };
            let spec = expand_speculation_tree(&tree, &anchor, rng.gen_range(1..16));
            if spec.nodes.len() > 20 {
                continue;
            }
            let truth: Vec<TokenId> = (0..8).map(|_| rng.gen_range(0..5)).collect();
            assert_eq!(verify_tree(&spec, &truth), verify_oracle(&spec, &truth));
        }
    }

    #[test]
    fn repeated_token_response_follows_hand_schedule() {
        // Global tree holds one 64-long run of a single token; with P = 8 and
        // alpha = 2 every candidate is a sure chain, so each step emits
        // min(2 * min(8, context_len), remaining) tokens.
        let t = 42u32;
        let corpus = vec![vec![t; 64]];
        let p = pair(&[t, t, t], &vec![t; 64]);
        let cfg = EngineConfig {
            alpha: 2.0,
            max_pattern_len: 8,
            depth_cap: 64,
            ..EngineConfig::default()
        };
        let (records, emitted) =
            simulate_request(&p, &build(&corpus, 64), &cfg, 0).unwrap();
        assert_eq!(emitted, vec![t; 64]);

        let mut expected_steps = Vec::new();
        let mut remaining = 64usize;
        let mut context_len = 3usize;
        while remaining > 0 {
            let budget = 2 * context_len.min(8);
            let emit = budget.min(remaining);
            expected_steps.push(emit);
            remaining -= emit;
            context_len += emit;
        }
        let got: Vec<usize> = records.iter().map(|r| r.emitted).collect();
        assert_eq!(got, expected_steps);
        assert!(records.len() < 64 / 4);
    }

    #[test]
    fn disjoint_vocabulary_degenerates_to_vanilla() {
        let global = build(&[vec![1, 2, 3]], 64);
        let p = pair(&[4, 5, 6], &[10, 11, 12, 13]);
        let cfg = EngineConfig::default();
        let (records, emitted) = simulate_request(&p, &global, &cfg, 0).unwrap();
        assert_eq!(emitted, vec![10, 11, 12, 13]);
        assert_eq!(records.len(), 4);
        assert!(records.iter().all(|r| r.emitted == 1 && r.accepted == 0));
    }

    #[test]
    fn single_token_response_takes_one_step() {
        let global = build(&[vec![1, 2, 3]], 64);
        let p = pair(&[1, 2], &[3]);
        let cfg = EngineConfig::default();
        let (records, emitted) = simulate_request(&p, &global, &cfg, 0).unwrap();
        assert_eq!(emitted, vec![3]);
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].emitted, 1);
        assert_eq!(records[0].accepted, 0);
    }

    #[test]
    fn step_accounting_identities_hold() {
        let corpus = crate::synth::agentic_corpus(50, 4, 1);
        let pairs = crate::synth::agentic_eval_pairs(10, 4, 2);
        let report = run_simulation(&pairs, &corpus, &EngineConfig::default()).unwrap();
        let response_total: u64 = pairs.iter().map(|p| p.response.len() as u64).sum();
        assert_eq!(report.aggregate.total_output_tokens, response_total);
        for request in &report.per_request {
            for rec in &request.step_records {
                assert_eq!(rec.emitted, rec.accepted + 1);
                assert!(rec.accepted <= rec.speculated);
            }
        }
        assert!(report.aggregate.step_speedup >= 1.0);
        assert!(
            (report.aggregate.mean_accepted_per_step
                - (report.aggregate.step_speedup - 1.0))
                .abs()
                < 1e-9
        );
    }

    #[test]
    fn self_replay_beats_disjoint_corpus() {
        let pairs = crate::synth::agentic_eval_pairs(12, 4, 7);
        let replay: Vec<TokenSequence> = pairs
            .iter()
            .map(|p| p.response.clone())
            .collect();
        let disjoint = crate::synth::low_repetition_corpus(40, 99);
        let cfg = EngineConfig {
            alpha: 4.0,
            ..EngineConfig::default()
        };
        let with_replay = run_simulation(&pairs, &replay, &cfg).unwrap();
        let with_disjoint = run_simulation(&pairs, &disjoint, &cfg).unwrap();
        assert!(
            with_replay.aggregate.mean_accepted_per_step
                > 2.0 * with_disjoint.aggregate.mean_accepted_per_step.max(0.1),
            "self-replay {} vs disjoint {}",
            with_replay.aggregate.mean_accepted_per_step,
            with_disjoint.aggregate.mean_accepted_per_step,
        );
    }

    #[test]
    fn online_adaptation_improves_over_the_run() {
        // Train on one distribution, evaluate on another; with adaptation the
        // last quartile of requests must out-accept the first quartile.
        let train = crate::synth::low_repetition_corpus(30, 5);
        let pairs = crate::synth::agentic_eval_pairs(40, 2, 3);
        let cfg = EngineConfig {
            online_adapt: true,
            alpha: 4.0,
            ..EngineConfig::default()
        };
        let report = run_simulation(&pairs, &train, &cfg).unwrap();
        let quarter = report.per_request.len() / 4;
        let mean = |reqs: &[RequestReport]| {
            let steps: u64 = reqs.iter().map(|r| r.steps).sum();
            let tokens: u64 = reqs.iter().map(|r| r.output_tokens).sum();
            tokens as f64 / steps as f64
        };
        let first = mean(&report.per_request[..quarter]);
        let last = mean(&report.per_request[report.per_request.len() - quarter..]);
        assert!(last > first, "last quartile {last} <= first quartile {first}");
    }

    #[test]
    fn zero_pairs_yield_empty_report() {
        let report = run_simulation(&[], &[seq(&[1, 2])], &EngineConfig::default()).unwrap();
        assert_eq!(report.aggregate.total_steps, 0);
        assert!(report.per_request.is_empty());
        assert_eq!(report.aggregate.step_speedup, 0.0);
    }

    #[test]
    fn speculation_disabled_takes_one_step_per_token() {
        let corpus = crate::synth::agentic_corpus(20, 2, 1);
        let pairs = crate::synth::agentic_eval_pairs(5, 2, 2);
        let cfg = EngineConfig {
            use_global: false,
            use_per_request: false,
            ..EngineConfig::default()
        };
        let report = run_simulation(&pairs, &corpus, &cfg).unwrap();
        assert_eq!(
            report.aggregate.total_steps,
            report.aggregate.total_output_tokens
        );
        assert_eq!(report.aggregate.none_steps, report.aggregate.total_steps);

        let enabled = run_simulation(&pairs, &corpus, &EngineConfig::default()).unwrap();
        assert!(enabled.aggregate.total_steps <= report.aggregate.total_steps);
    }

    #[test]
    fn parallel_and_sequential_runs_agree() {
        let corpus = crate::synth::agentic_corpus(30, 4, 1);
        let pairs = crate::synth::agentic_eval_pairs(8, 4, 2);
        let mut cfg = EngineConfig {
            fallback: FallbackConfig::Synthetic {
                chain_len: 6,
                mean_accept: 2.5,
            },
            tau: 2.0,
            ..EngineConfig::default()
        };
        let sequential = run_simulation(&pairs, &corpus, &cfg).unwrap();
        cfg.jobs = 4;
        let parallel = run_simulation(&pairs, &corpus, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&sequential.aggregate).unwrap(),
            serde_json::to_string(&parallel.aggregate).unwrap()
        );
    }

    #[test]
    fn eviction_capacity_bounds_global_tree() {
        let corpus = crate::synth::agentic_corpus(50, 4, 1);
        let pairs = crate::synth::agentic_eval_pairs(4, 4, 2);
        let cfg = EngineConfig {
            evict_capacity: Some(500),
            online_adapt: true,
            ..EngineConfig::default()
        };
        // Exercises capacity enforcement during build and adaptation; the
        // report must still be lossless and well-formed.
        let report = run_simulation(&pairs, &corpus, &cfg).unwrap();
        assert!(report.aggregate.step_speedup >= 1.0);
    }

    #[test]
    fn fallback_steps_use_the_synthetic_chain() {
        let corpus = crate::synth::low_repetition_corpus(50, 3);
        let pairs = crate::synth::low_repetition_eval_pairs(10, 4);
        let cfg = EngineConfig {
            tau: 4.0,
            fallback: FallbackConfig::Synthetic {
                chain_len: 8,
                mean_accept: 4.0,
            },
            ..EngineConfig::default()
        };
        let report = run_simulation(&pairs, &corpus, &cfg).unwrap();
        assert!(report.aggregate.fallback_steps > 0);
        assert!(report.aggregate.step_speedup > 2.0);
    }

    #[test]
    fn alpha_sweep_speculates_monotonically_more() {
        let corpus = crate::synth::agentic_corpus(60, 4, 1);
        let pairs = crate::synth::agentic_eval_pairs(10, 4, 2);
        let reports = sweep(
            SweepParam::Alpha,
            &[1.0, 2.0, 4.0],
            &pairs,
            &corpus,
            &EngineConfig::default(),
        )
        .unwrap();
        let spec_per_step: Vec<f64> = reports
            .iter()
            .map(|(_, r)| r.aggregate.total_speculated as f64 / r.aggregate.total_steps as f64)
            .collect();
        assert!(spec_per_step[0] <= spec_per_step[1] + 1e-9);
        assert!(spec_per_step[1] <= spec_per_step[2] + 1e-9);
    }

    #[test]
    fn sweep_rejects_empty_values() {
        assert!(sweep(
            SweepParam::Tau,
            &[],
            &[],
            &[],
            &EngineConfig::default()
        )
        .is_err());
    }

    #[test]
    fn steps_csv_has_header_and_rows() {
        let corpus = crate::synth::agentic_corpus(10, 2, 1);
        let pairs = crate::synth::agentic_eval_pairs(2, 2, 2);
        let report = run_simulation(&pairs, &corpus, &EngineConfig::default()).unwrap();
        let csv = report.steps_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "request_id,step,p,speculated,accepted,emitted,decision,score"
        );
        assert_eq!(
            csv.lines().count() as u64 - 1,
            report.aggregate.total_steps
        );
    }
}
