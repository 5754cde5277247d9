//! Metrics and evaluation: edit distance, the recognition-style similarity
//! baseline, confusion matrices with per-class percentage rates, threshold
//! selection on validation scores, and whole-model evaluation over a
//! dataset manifest.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use crate::datagen::{DatasetManifest, MatchSample, Split};
use crate::embed::encode_text;
use crate::error::{Result, TmError};
use crate::image::preprocess_image;
use crate::matcher::{
    classify, forward_score, naive_score, MatcherParams, ModelConfig, ModelKind, Reduction,
};
use crate::tensor::Tape;

/// Minimal edit count (insertions, deletions, substitutions) between two
/// strings, by dynamic programming over characters.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Similarity between a recognized transcription and a candidate text:
/// 1 − Lev(t̂, t)/max{|t̂|, |t|}, with the both-empty case defined as 1.
pub fn recognition_similarity(t_hat: &str, t: &str) -> f64 {
    let la = t_hat.chars().count();
    let lb = t.chars().count();
    if la == 0 && lb == 0 {
        return 1.0;
    }
    1.0 - levenshtein(t_hat, t) as f64 / la.max(lb) as f64
}

/// A scored dataset element awaiting thresholding.
#[derive(Clone, Debug)]
pub struct ScoredSample {
    pub score: f64,
    pub label: u8,
    pub meta: String,
}

impl ScoredSample {
    pub fn new(score: f64, label: u8) -> Self {
        ScoredSample {
            score,
            label,
            meta: String::new(),
        }
    }
}

/// Raw confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.tn + self.fp
    }

    fn tally(scored: impl Iterator<Item = (f64, u8)>, tau: f64) -> Counts {
        let mut c = Counts::default();
        for (score, label) in scored {
            match (label, classify(score, tau)) {
                (1, 1) => c.tp += 1,
                (1, 0) => c.fn_ += 1,
                (0, 1) => c.fp += 1,
                _ => c.tn += 1,
            }
        }
        c
    }

    /// Percentage rates relative to each class; None when the class is
    /// absent.
    pub fn rates(&self) -> Rates {
        let pct = |num: usize, den: usize| {
            if den == 0 {
                None
            } else {
                Some(100.0 * num as f64 / den as f64)
            }
        };
        Rates {
            tp: pct(self.tp, self.positives()),
            fn_: pct(self.fn_, self.positives()),
            fp: pct(self.fp, self.negatives()),
            tn: pct(self.tn, self.negatives()),
        }
    }

    /// F1 as a percentage, from counts. Defined only when positives exist.
    pub fn f1_pct(&self) -> Option<f64> {
        if self.positives() == 0 {
            return None;
        }
        let precision = if self.tp + self.fp > 0 {
            self.tp as f64 / (self.tp + self.fp) as f64
        } else {
            0.0
        };
        let recall = self.tp as f64 / self.positives() as f64;
        if precision + recall == 0.0 {
            return Some(0.0);
        }
        Some(100.0 * 2.0 * precision * recall / (precision + recall))
    }
}

/// Per-class percentage rates; None marks an undefined rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rates {
    pub tp: Option<f64>,
    pub fp: Option<f64>,
    pub tn: Option<f64>,
    pub fn_: Option<f64>,
}

/// Metrics for one meta tag.
#[derive(Clone, Debug)]
pub struct SubReport {
    pub counts: Counts,
    pub rates: Rates,
    pub f1_pct: Option<f64>,
}

/// Full evaluation result at one threshold.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub tau: f64,
    pub counts: Counts,
    pub rates: Rates,
    pub f1_pct: Option<f64>,
    pub per_meta: BTreeMap<String, SubReport>,
    /// Scoring throughput in samples/sec; measured, so never serialized
    /// into the report files (they must be byte-reproducible).
    pub throughput: Option<f64>,
}

/// Applies the threshold and aggregates counts, rates, F1, and per-meta
/// sub-reports.
pub fn confusion_metrics(scored: &[ScoredSample], tau: f64) -> EvalReport {
    let counts = Counts::tally(scored.iter().map(|s| (s.score, s.label)), tau);
    let mut tags: BTreeMap<String, Vec<(f64, u8)>> = BTreeMap::new();
    for s in scored {
        for tag in s.meta.split(',').filter(|t| !t.is_empty()) {
            tags.entry(tag.to_string())
                .or_default()
                .push((s.score, s.label));
        }
    }
    let per_meta = tags
        .into_iter()
        .map(|(tag, samples)| {
            let c = Counts::tally(samples.into_iter(), tau);
            (
                tag,
                SubReport {
                    counts: c,
                    rates: c.rates(),
                    f1_pct: c.f1_pct(),
                },
            )
        })
        .collect();
    EvalReport {
        tau,
        counts,
        rates: counts.rates(),
        f1_pct: counts.f1_pct(),
        per_meta,
        throughput: None,
    }
}

/// Threshold-selection objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Criterion {
    /// Maximize F1.
    F1,
    /// Minimize 10·FP + FN (percentage rates) subject to FN ≤ 60%.
    Cost,
}

impl Criterion {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f1" => Ok(Criterion::F1),
            "cost" => Ok(Criterion::Cost),
            other => Err(TmError::Input(format!(
                "unknown criterion {other:?} (expected f1 or cost)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Criterion::F1 => "f1",
            Criterion::Cost => "cost",
        }
    }
}

/// Candidate thresholds: ±∞ sentinels plus midpoints between adjacent
/// distinct scores. Midpoints avoid boundary ambiguity under the inclusive
/// `score ≥ τ` rule.
pub fn threshold_candidates(scored: &[ScoredSample]) -> Vec<f64> {
    let mut scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
    scores.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    scores.dedup();
    let mut candidates = vec![f64::NEG_INFINITY];
    for w in scores.windows(2) {
        candidates.push((w[0] + w[1]) / 2.0);
    }
    candidates.push(f64::INFINITY);
    candidates
}

/// Chooses τ over the candidate cuts for the given criterion. Ties go to
/// the smallest τ. The cost criterion falls back to the minimum-FN
/// threshold (with a warning on stderr) if no candidate satisfies FN ≤ 60%.
pub fn select_threshold(scored: &[ScoredSample], criterion: Criterion) -> Result<f64> {
    let positives = scored.iter().filter(|s| s.label == 1).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(TmError::Input(format!(
            "threshold selection needs both classes, got {positives} positive / {negatives} negative"
        )));
    }
    let candidates = threshold_candidates(scored);
    match criterion {
        Criterion::F1 => {
            let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &tau in &candidates {
                let f1 = Counts::tally(scored.iter().map(|s| (s.score, s.label)), tau)
                    .f1_pct()
                    .expect("positives present");
                if f1 > best.1 {
                    best = (tau, f1);
                }
            }
            Ok(best.0)
        }
        Criterion::Cost => {
            let mut best: Option<(f64, f64)> = None;
            let mut min_fn: Option<(f64, f64)> = None;
            for &tau in &candidates {
                let counts = Counts::tally(scored.iter().map(|s| (s.score, s.label)), tau);
                let rates = counts.rates();
                let (fp, fn_) = (rates.fp.unwrap(), rates.fn_.unwrap());
                if min_fn.map_or(true, |(_, v)| fn_ < v) {
                    min_fn = Some((tau, fn_));
                }
                if fn_ <= 60.0 {
                    let cost = 10.0 * fp + fn_;
                    if best.map_or(true, |(_, c)| cost < c) {
                        best = Some((tau, cost));
                    }
                }
            }
            match best {
                Some((tau, _)) => Ok(tau),
                None => {
                    let (tau, _) = min_fn.expect("candidates are never empty");
                    eprintln!(
                        "warning: no threshold satisfies FN <= 60%; \
                         falling back to the minimum-FN threshold {tau}"
                    );
                    Ok(tau)
                }
            }
        }
    }
}

/// Scores samples with the given model. Samples are processed in chunks so
/// parameters are registered once per chunk rather than once per sample.
pub fn score_entries(
    params: &MatcherParams,
    config: &ModelConfig,
    samples: &[MatchSample],
    reduction: Reduction,
    kind: ModelKind,
) -> Result<Vec<ScoredSample>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(64) {
        let mut tape = Tape::new();
        let ids = params.register(&mut tape, false);
        for sample in chunk {
            let img = preprocess_image(
                &sample.image,
                config.encoder.image_h,
                config.encoder.image_w,
            )?;
            let text = encode_text(&sample.text, &config.alphabet, config.s_t)?;
            let score = match kind {
                ModelKind::CrossAttention => {
                    forward_score(&mut tape, &ids, config, &img, &text, reduction)?.score
                }
                ModelKind::Naive => {
                    let img_id = tape.constant(img.clone());
                    let j_raw = crate::embed::encode_image(
                        &mut tape,
                        img_id,
                        &ids.encoder,
                        &config.encoder,
                    )?;
                    let j = tape.add(j_raw, ids.pos_i)?;
                    let t_raw = tape.row_gather(ids.t_emb, &text.indices)?;
                    let t = tape.add(t_raw, ids.pos_t)?;
                    naive_score(&mut tape, j, t, &text.pad_mask)?
                }
            };
            out.push(ScoredSample {
                score: tape.value(score).data()[0],
                label: sample.label,
                meta: sample.meta.clone(),
            });
        }
    }
    Ok(out)
}

/// Scores the validation split, selects τ per the criterion, applies it to
/// the test split, and reports. Deterministic apart from the throughput
/// field.
pub fn evaluate_model(
    params: &MatcherParams,
    config: &ModelConfig,
    manifest: &DatasetManifest,
    base_dir: &Path,
    reduction: Reduction,
    criterion: Criterion,
    kind: ModelKind,
) -> Result<EvalReport> {
    if manifest.alphabet != config.alphabet {
        return Err(TmError::Config(format!(
            "manifest alphabet {:?} does not match model alphabet {:?}",
            manifest.alphabet.spec(),
            config.alphabet.spec()
        )));
    }
    let val = manifest.load_samples(base_dir, Some(Split::Val))?;
    let test = manifest.load_samples(base_dir, Some(Split::Test))?;
    if val.is_empty() || test.is_empty() {
        return Err(TmError::Input(
            "manifest needs non-empty val and test splits".into(),
        ));
    }
    let val_scores = score_entries(params, config, &val, reduction, kind)?;
    let tau = select_threshold(&val_scores, criterion)?;

    let started = Instant::now();
    let test_scores = score_entries(params, config, &test, reduction, kind)?;
    let elapsed = started.elapsed().as_secs_f64();
    let mut report = confusion_metrics(&test_scores, tau);
    if elapsed > 0.0 {
        report.throughput = Some(test.len() as f64 / elapsed);
    }
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.2}"),
        None => "undef".to_string(),
    }
}

impl EvalReport {
    /// Line-oriented key=value form. Excludes throughput so that reports
    /// from identical inputs are byte-identical.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("tau={}\n", self.tau));
        out.push_str(&format!("tp={}\n", self.counts.tp));
        out.push_str(&format!("fp={}\n", self.counts.fp));
        out.push_str(&format!("tn={}\n", self.counts.tn));
        out.push_str(&format!("fn={}\n", self.counts.fn_));
        out.push_str(&format!("tp_pct={}\n", fmt_opt(self.rates.tp)));
        out.push_str(&format!("fp_pct={}\n", fmt_opt(self.rates.fp)));
        out.push_str(&format!("tn_pct={}\n", fmt_opt(self.rates.tn)));
        out.push_str(&format!("fn_pct={}\n", fmt_opt(self.rates.fn_)));
        out.push_str(&format!("f1_pct={}\n", fmt_opt(self.f1_pct)));
        for (tag, sub) in &self.per_meta {
            out.push_str(&format!(
                "meta.{tag}.tp={} meta.{tag}.fp={} meta.{tag}.tn={} meta.{tag}.fn={} \
                 meta.{tag}.f1_pct={}\n",
                sub.counts.tp,
                sub.counts.fp,
                sub.counts.tn,
                sub.counts.fn_,
                fmt_opt(sub.f1_pct),
            ));
        }
        out
    }

    /// Human-readable table with the τ / TP / FP / TN / FN / F1 column
    /// layout (percentages).
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "tau", "TP", "FP", "TN", "FN", "F1"
        ));
        out.push_str(&format!(
            "{:>8.4} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            self.tau,
            fmt_opt(self.rates.tp),
            fmt_opt(self.rates.fp),
            fmt_opt(self.rates.tn),
            fmt_opt(self.rates.fn_),
            fmt_opt(self.f1_pct),
        ));
        for (tag, sub) in &self.per_meta {
            out.push_str(&format!(
                "{tag:>12}: TP {} FP {} TN {} FN {} F1 {}\n",
                fmt_opt(sub.rates.tp),
                fmt_opt(sub.rates.fp),
                fmt_opt(sub.rates.tn),
                fmt_opt(sub.rates.fn_),
                fmt_opt(sub.f1_pct),
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn levenshtein_reference_values() {
        assert_eq!(levenshtein("meeting", "meating"), 1);
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("abc", ""), 3);
    }

    #[test]
    fn recognition_similarity_values() {
        assert_eq!(recognition_similarity("same", "same"), 1.0);
        assert!((recognition_similarity("meating", "meeting") - (1.0 - 1.0 / 7.0)).abs() < 1e-12);
        assert_eq!(recognition_similarity("", "abc"), 0.0);
        assert_eq!(recognition_similarity("", ""), 1.0);
    }

    #[test]
    fn table_row_arithmetic_reproduces_reported_f1() {
        // Class-rate percentages TP=99.21, FP=1.10, TN=98.90, FN=0.79 on a
        // balanced set of 10000+10000 must give F1 = 99.06 ± 0.01.
        let mut scored = Vec::new();
        let push = |v: &mut Vec<ScoredSample>, n: usize, score: f64, label: u8| {
            v.extend((0..n).map(|_| ScoredSample::new(score, label)));
        };
        push(&mut scored, 9921, 1.0, 1);
        push(&mut scored, 79, -1.0, 1);
        push(&mut scored, 110, 1.0, 0);
        push(&mut scored, 9890, -1.0, 0);
        let report = confusion_metrics(&scored, 0.0);
        assert!((report.rates.tp.unwrap() - 99.21).abs() < 1e-9);
        assert!((report.rates.fp.unwrap() - 1.10).abs() < 1e-9);
        let f1 = report.f1_pct.unwrap();
        assert!((f1 - 99.06).abs() < 0.01, "f1 {f1}");
    }

    #[test]
    fn perfect_classifier_and_degenerate_thresholds() {
        let scored: Vec<ScoredSample> = (0..10)
            .map(|i| ScoredSample::new(0.9 + i as f64 * 0.001, 1))
            .collect();
        let report = confusion_metrics(&scored, 0.5);
        assert_eq!(report.rates.tp, Some(100.0));
        assert_eq!(report.f1_pct, Some(100.0));
        assert_eq!(report.rates.fp, None, "no negatives present");

        let report = confusion_metrics(&scored, f64::INFINITY);
        assert_eq!(report.rates.tp, Some(0.0));
        assert_eq!(report.rates.fn_, Some(100.0));
    }

    #[test]
    fn select_threshold_separable_case_returns_midpoint() {
        let scored = vec![
            ScoredSample::new(0.9, 1),
            ScoredSample::new(0.8, 1),
            ScoredSample::new(0.2, 0),
            ScoredSample::new(0.1, 0),
        ];
        let tau = select_threshold(&scored, Criterion::F1).unwrap();
        assert!((tau - 0.5).abs() < 1e-12, "tau {tau}");
    }

    #[test]
    fn select_threshold_rejects_single_class() {
        let scored = vec![ScoredSample::new(0.5, 1)];
        assert!(select_threshold(&scored, Criterion::F1).is_err());
        assert!(select_threshold(&scored, Criterion::Cost).is_err());
    }

    /// Brute-force oracle: evaluate every candidate cut with an
    /// independent recount.
    fn oracle_best(scored: &[ScoredSample], criterion: Criterion) -> f64 {
        let candidates = threshold_candidates(scored);
        let eval = |tau: f64| {
            let mut tp = 0usize;
            let mut fp = 0usize;
            let mut fn_ = 0usize;
            let mut tn = 0usize;
            for s in scored {
                let pred = s.score >= tau;
                match (s.label, pred) {
                    (1, true) => tp += 1,
                    (1, false) => fn_ += 1,
                    (0, true) => fp += 1,
                    _ => tn += 1,
                }
            }
            (tp, fp, tn, fn_)
        };
        let mut best: Option<(f64, f64)> = None;
        for &tau in &candidates {
            let (tp, fp, _tn, fn_) = eval(tau);
            let objective = match criterion {
                Criterion::F1 => {
                    let p = if tp + fp > 0 {
                        tp as f64 / (tp + fp) as f64
                    } else {
                        0.0
                    };
                    let r = tp as f64 / (tp + fn_) as f64;
                    if p + r > 0.0 {
                        -(2.0 * p * r / (p + r))
                    } else {
                        0.0
                    }
                }
                Criterion::Cost => {
                    let pos = (tp + fn_) as f64;
                    let neg = scored.len() as f64 - pos;
                    let fn_pct = 100.0 * fn_ as f64 / pos;
                    let fp_pct = 100.0 * fp as f64 / neg;
                    if fn_pct > 60.0 {
                        f64::INFINITY
                    } else {
                        10.0 * fp_pct + fn_pct
                    }
                }
            };
            if best.map_or(true, |(_, b)| objective < b) {
                best = Some((tau, objective));
            }
        }
        best.unwrap().0
    }

    #[test]
    fn threshold_selection_matches_exhaustive_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        for case in 0..40 {
            let n = rng.gen_range(4..120);
            let mut scored = Vec::with_capacity(n);
            scored.push(ScoredSample::new(rng.gen_range(-1.0..1.0), 1));
            scored.push(ScoredSample::new(rng.gen_range(-1.0..1.0), 0));
            for _ in 2..n {
                scored.push(ScoredSample::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0..2u8),
                ));
            }
            for criterion in [Criterion::F1, Criterion::Cost] {
                let ours = select_threshold(&scored, criterion).unwrap();
                let oracle = oracle_best(&scored, criterion);
                let ours_counts = Counts::tally(scored.iter().map(|s| (s.score, s.label)), ours);
                let oracle_counts =
                    Counts::tally(scored.iter().map(|s| (s.score, s.label)), oracle);
                assert_eq!(
                    ours_counts, oracle_counts,
                    "case {case}, {criterion:?}: {ours} vs oracle {oracle}"
                );
            }
        }
    }

    #[test]
    fn cost_criterion_pushes_tau_above_stray_negative() {
        // Positives sit above one stray negative: the 10× FP weight forces
        // τ above it while FN ≤ 60% stays satisfiable.
        let scored = vec![
            ScoredSample::new(0.995, 1),
            ScoredSample::new(0.992, 1),
            ScoredSample::new(0.991, 1),
            ScoredSample::new(0.99, 0),
            ScoredSample::new(0.10, 0),
        ];
        let tau = select_threshold(&scored, Criterion::Cost).unwrap();
        assert!(tau > 0.99, "tau {tau}");

        // When every positive scores below the stray negative, τ > 0.99
        // would mean FN = 100%: the constraint binds and τ stays low.
        let scored = vec![
            ScoredSample::new(0.99, 0),
            ScoredSample::new(0.98, 1),
            ScoredSample::new(0.97, 1),
            ScoredSample::new(0.96, 1),
            ScoredSample::new(0.10, 0),
        ];
        let tau = select_threshold(&scored, Criterion::Cost).unwrap();
        assert!(tau < 0.96, "tau {tau}");
    }

    #[test]
    fn confusion_invariant_under_rank_preserving_transforms() {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let scored: Vec<ScoredSample> = (0..60)
            .map(|_| ScoredSample::new(rng.gen_range(-1.0..1.0), rng.gen_range(0..2u8)))
            .collect();
        let tau = select_threshold(&scored, Criterion::F1).unwrap();
        let base = confusion_metrics(&scored, tau);

        // Strictly increasing transform of every score; re-select τ.
        let transformed: Vec<ScoredSample> = scored
            .iter()
            .map(|s| ScoredSample {
                score: (3.0 * s.score).tanh() + 2.0,
                label: s.label,
                meta: s.meta.clone(),
            })
            .collect();
        let tau2 = select_threshold(&transformed, Criterion::F1).unwrap();
        let after = confusion_metrics(&transformed, tau2);
        assert_eq!(base.counts, after.counts);
    }

    proptest! {
        #[test]
        fn levenshtein_triangle_inequality(
            a in "[ab]{0,8}",
            b in "[ab]{0,8}",
            c in "[ab]{0,8}",
        ) {
            let ab = levenshtein(&a, &b);
            let bc = levenshtein(&b, &c);
            let ac = levenshtein(&a, &c);
            prop_assert!(ac <= ab + bc, "d(a,c)={ac} > d(a,b)+d(b,c)={}", ab + bc);
        }

        #[test]
        fn recognition_similarity_is_symmetric_and_discriminates(
            a in "[a-d]{0,6}",
            b in "[a-d]{0,6}",
        ) {
            let ab = recognition_similarity(&a, &b);
            let ba = recognition_similarity(&b, &a);
            prop_assert!((ab - ba).abs() < 1e-15);
            if a == b {
                prop_assert_eq!(ab, 1.0);
            } else {
                prop_assert!(ab < 1.0);
            }
        }
    }
}
