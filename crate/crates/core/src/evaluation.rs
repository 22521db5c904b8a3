//! Leave-one-out closed-set evaluation: verification ROC, TAR at a fixed FAR
//! and rank-k identification accuracy.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::alignment::KeyPointSet;
use crate::dataset::{check_closed_set, LabeledImage};
use crate::error::{Error, Result};
use crate::recognition::{
    enroll, rank_identities, score_probe, train_entry, usable_targets, Pipeline, ScoreVector,
};

/// FAR of the headline operating point.
pub const HEADLINE_FAR: f64 = 0.01;
/// Ranks reported in the summary.
pub const SUMMARY_RANKS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub far: f64,
    pub tar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub name: String,
    pub true_id: String,
    /// Scores against the fold's gallery (every image but the probe).
    pub scores: ScoreVector,
    /// Best score per identity.
    pub per_id: BTreeMap<String, f64>,
    /// 1-based position of the true identity in the ranking.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationResult {
    pub probes: Vec<ProbeResult>,
    /// All identities, ascending.
    pub identities: Vec<String>,
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
    pub roc: Vec<RocPoint>,
    pub tar_at_far_1pct: f64,
    /// Rank-k accuracy for k = 1..=identities.len().
    pub rank_accuracies: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LooOptions {
    /// Align and describe every ordered image pair once and reuse the
    /// features across folds instead of re-enrolling per fold.
    pub cache_alignments: bool,
}

/// Runs the leave-one-out protocol: every image in turn is the probe against
/// a gallery enrolled from all the other images.
pub fn leave_one_out(images: &[LabeledImage], pipeline: &Pipeline, options: LooOptions) -> Result<EvaluationResult> {
    check_closed_set(images.iter().map(|i| i.panda_id.as_str()))?;
    let ids = crate::dataset::identity_counts(images.iter().map(|i| i.panda_id.as_str()));
    if ids.len() < 2 {
        return Err(Error::InsufficientData("evaluation needs at least 2 identities".into()));
    }
    let score_vectors = if options.cache_alignments {
        cached_folds(images, pipeline)?
    } else {
        naive_folds(images, pipeline)?
    };
    let identities: Vec<String> = ids.into_keys().collect();
    assemble(images, identities, score_vectors)
}

fn naive_folds(images: &[LabeledImage], pipeline: &Pipeline) -> Result<Vec<ScoreVector>> {
    (0..images.len())
        .into_par_iter()
        .map(|q| {
            let fold: Vec<LabeledImage> = images
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != q)
                .map(|(_, img)| img.clone())
                .collect();
            let gallery = enroll(&fold, pipeline)?;
            log::info!("fold {}/{} ({}) enrolled", q + 1, images.len(), images[q].name);
            score_probe(&images[q].image, &gallery, pipeline)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Target-major evaluation. For target `j` the features of every image
/// aligned onto `j` are computed once; the classifier of `j` in fold `q` is
/// then trained on all rows but `q`, in the same order as a fresh enrolment
/// would use, and the probe's row is scored. Results, including which error
/// a failing fold reports, are identical to [`naive_folds`].
fn cached_folds(images: &[LabeledImage], pipeline: &Pipeline) -> Result<Vec<ScoreVector>> {
    let n = images.len();
    let keypoints: Vec<Result<KeyPointSet>> = images.par_iter().map(|i| pipeline.keypoints(&i.image)).collect();
    let failures: Vec<Option<String>> = keypoints.iter().map(|k| k.as_ref().err().map(|e| e.to_string())).collect();

    // Targets available to each fold, indexed by image.
    let plans: Vec<Result<Vec<bool>>> = (0..n)
        .map(|q| {
            let others: Vec<usize> = (0..n).filter(|&i| i != q).collect();
            let refs: Vec<&LabeledImage> = others.iter().map(|&i| &images[i]).collect();
            let fails: Vec<Option<String>> = others.iter().map(|&i| failures[i].clone()).collect();
            let usable = usable_targets(&refs, &fails)?;
            let mut plan = vec![false; n];
            for (&i, u) in others.iter().zip(usable) {
                plan[i] = u;
            }
            Ok(plan)
        })
        .collect();
    let in_gallery = |q: usize, j: usize| matches!(&plans[q], Ok(p) if p[j]);

    enum Cell {
        Absent,
        Scored(std::result::Result<f64, String>),
        TrainingFailed(Error),
    }
    let mut columns: Vec<Vec<Cell>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let Ok(k) = &keypoints[j] else {
                return (0..n).map(|_| Cell::Absent).collect();
            };
            if !(0..n).any(|q| in_gallery(q, j)) {
                return (0..n).map(|_| Cell::Absent).collect();
            }
            let dims = images[j].image.dims();
            let feats: Vec<Result<Vec<f64>>> = images
                .iter()
                .map(|src| pipeline.aligned_features(&src.image, k, dims))
                .collect();
            let cells = (0..n)
                .map(|q| {
                    if !in_gallery(q, j) {
                        return Cell::Absent;
                    }
                    let rows: Vec<_> = (0..n).filter(|&i| i != q).map(|i| (&images[i], &feats[i])).collect();
                    match train_entry(pipeline, &images[j], &rows) {
                        Err(e) => Cell::TrainingFailed(e),
                        Ok(model) => Cell::Scored(match &feats[q] {
                            Ok(x) => model.predict(x).map_err(|e| e.to_string()),
                            Err(e) => Err(e.to_string()),
                        }),
                    }
                })
                .collect();
            log::info!("target {}/{} ({}) done", j + 1, n, images[j].name);
            cells
        })
        .collect();

    let mut out = Vec::with_capacity(n);
    for (q, plan) in plans.into_iter().enumerate() {
        let plan = plan?;
        let mut results = Vec::new();
        let mut ids = Vec::new();
        for j in (0..n).filter(|&j| plan[j]) {
            match std::mem::replace(&mut columns[j][q], Cell::Absent) {
                Cell::Scored(r) => results.push(r),
                Cell::TrainingFailed(e) => return Err(e),
                Cell::Absent => unreachable!("planned cell is computed"),
            }
            ids.push(images[j].panda_id.clone());
        }
        out.push(ScoreVector::from_results(results, ids));
    }
    Ok(out)
}

fn assemble(images: &[LabeledImage], identities: Vec<String>, score_vectors: Vec<ScoreVector>) -> Result<EvaluationResult> {
    let mut probes = Vec::with_capacity(images.len());
    let mut genuine = Vec::with_capacity(images.len());
    let mut impostor = Vec::with_capacity(images.len() * (identities.len() - 1));
    for (img, scores) in images.iter().zip(score_vectors) {
        let mut per_id = scores.per_identity();
        for id in &identities {
            per_id.entry(id.clone()).or_insert(f64::NEG_INFINITY);
        }
        for (id, &s) in &per_id {
            if *id == img.panda_id {
                genuine.push(s);
            } else {
                impostor.push(s);
            }
        }
        let rank = rank_identities(&per_id)
            .iter()
            .position(|(id, _)| *id == img.panda_id)
            .expect("true identity is ranked")
            + 1;
        probes.push(ProbeResult {
            name: img.name.clone(),
            true_id: img.panda_id.clone(),
            scores,
            per_id,
            rank,
        });
    }
    let roc = roc_curve(&genuine, &impostor)?;
    let tar_at_far_1pct = tar_at_far(&roc, HEADLINE_FAR);
    let rank_accuracies = rank_accuracy(&probes, identities.len());
    Ok(EvaluationResult {
        probes,
        identities,
        genuine,
        impostor,
        roc,
        tar_at_far_1pct,
        rank_accuracies,
    })
}

/// Number of values `>= tau` in an ascending slice.
fn count_at_least(sorted: &[f64], tau: f64) -> usize {
    sorted.len() - sorted.partition_point(|&s| s < tau)
}

/// ROC over every distinct score used as a threshold, plus ±∞. A score is
/// accepted at threshold τ when it is `>= τ`. Points are sorted by FAR and
/// points sharing a FAR keep the highest TAR.
pub fn roc_curve(genuine: &[f64], impostor: &[f64]) -> Result<Vec<RocPoint>> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::EmptyScores);
    }
    let mut g = genuine.to_vec();
    let mut im = impostor.to_vec();
    g.sort_by(f64::total_cmp);
    im.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = g.iter().chain(&im).copied().collect();
    thresholds.push(f64::INFINITY);
    thresholds.push(f64::NEG_INFINITY);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let (ng, ni) = (g.len() as f64, im.len() as f64);
    let mut points: Vec<RocPoint> = thresholds
        .iter()
        .map(|&t| RocPoint {
            far: count_at_least(&im, t) as f64 / ni,
            tar: count_at_least(&g, t) as f64 / ng,
        })
        .collect();
    points.sort_by(|a, b| a.far.total_cmp(&b.far).then(a.tar.total_cmp(&b.tar)));
    let mut out: Vec<RocPoint> = Vec::with_capacity(points.len());
    for p in points {
        match out.last_mut() {
            Some(last) if last.far == p.far => last.tar = last.tar.max(p.tar),
            _ => out.push(p),
        }
    }
    Ok(out)
}

/// TAR at the largest FAR not exceeding `far_target`; 0 when none does.
pub fn tar_at_far(roc: &[RocPoint], far_target: f64) -> f64 {
    roc.iter()
        .filter(|p| p.far <= far_target)
        .max_by(|a, b| a.far.total_cmp(&b.far).then(a.tar.total_cmp(&b.tar)))
        .map_or(0.0, |p| p.tar)
}

/// Fraction of probes whose true identity ranks within the top k, for
/// k = 1..=max_rank.
pub fn rank_accuracy(probes: &[ProbeResult], max_rank: usize) -> Vec<f64> {
    let n = probes.len().max(1) as f64;
    (1..=max_rank)
        .map(|k| probes.iter().filter(|p| p.rank <= k).count() as f64 / n)
        .collect()
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    probes: usize,
    identities: usize,
    genuine_count: usize,
    impostor_count: usize,
    tar_at_far_1pct: f64,
    tar_at_far: BTreeMap<String, f64>,
    rank_1: f64,
    rank_2: f64,
    rank_3: f64,
    rank_4: f64,
    rank_5: f64,
    config_hash: &'a str,
}

impl EvaluationResult {
    pub fn rank(&self, k: usize) -> f64 {
        match self.rank_accuracies.get(k.saturating_sub(1)) {
            Some(&v) => v,
            // closed set: every true identity is ranked somewhere
            None => 1.0,
        }
    }

    /// Long-format per-identity scores: `probe,true_id,identity,score`.
    pub fn scores_csv(&self) -> String {
        let mut s = String::from("probe,true_id,identity,score\n");
        for p in &self.probes {
            for (id, v) in &p.per_id {
                writeln!(s, "{},{},{},{}", csv_field(&p.name), csv_field(&p.true_id), csv_field(id), v)
                    .expect("write to string");
            }
        }
        s
    }

    pub fn roc_csv(&self) -> String {
        let mut s = String::from("far,tar\n");
        for p in &self.roc {
            writeln!(s, "{},{}", p.far, p.tar).expect("write to string");
        }
        s
    }

    /// Summary JSON with TAR at 1% FAR and at every extra `fars` value.
    pub fn summary_json(&self, fars: &[f64], config_hash: &str) -> String {
        let mut tar_map = BTreeMap::new();
        for &f in std::iter::once(&HEADLINE_FAR).chain(fars) {
            tar_map.insert(format!("{f}"), tar_at_far(&self.roc, f));
        }
        let summary = Summary {
            probes: self.probes.len(),
            identities: self.identities.len(),
            genuine_count: self.genuine.len(),
            impostor_count: self.impostor.len(),
            tar_at_far_1pct: self.tar_at_far_1pct,
            tar_at_far: tar_map,
            rank_1: self.rank(1),
            rank_2: self.rank(2),
            rank_3: self.rank(3),
            rank_4: self.rank(4),
            rank_5: self.rank(SUMMARY_RANKS),
            config_hash,
        };
        let mut s = serde_json::to_string_pretty(&summary).expect("summary serialises");
        s.push('\n');
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes `scores.csv`, `roc.csv` and `summary.json` into `dir`.
pub fn export_report(result: &EvaluationResult, dir: impl AsRef<Path>, fars: &[f64], config_hash: &str) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("scores.csv"), result.scores_csv())?;
    fs::write(dir.join("roc.csv"), result.roc_csv())?;
    fs::write(dir.join("summary.json"), result.summary_json(fars, config_hash))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Best TAR over all thresholds whose FAR stays within the target,
    /// evaluated directly from the raw scores.
    fn brute_force_tar(genuine: &[f64], impostor: &[f64], target: f64) -> f64 {
        let mut taus: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
        taus.push(f64::INFINITY);
        let mut best = 0.0f64;
        for &t in &taus {
            let far = impostor.iter().filter(|&&s| s >= t).count() as f64 / impostor.len() as f64;
            let tar = genuine.iter().filter(|&&s| s >= t).count() as f64 / genuine.len() as f64;
            if far <= target {
                best = best.max(tar);
            }
        }
        best
    }

    fn random_scores(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let ng = rng.random_range(1..60);
        let ni = rng.random_range(1..400);
        let sep = rng.random_range(0.0..3.0);
        // coarse grid to force ties
        let q = |v: f64| (v * 4.0).round() / 4.0;
        let g = (0..ng).map(|_| q(rng.random_range(-2.0..2.0) + sep)).collect();
        let i = (0..ni).map(|_| q(rng.random_range(-2.0..2.0))).collect();
        (g, i)
    }

    #[test]
    fn roc_hand_count() {
        let g = [0.9, 0.8, 0.1];
        let i = [0.7, 0.2, 0.15, 0.05];
        let roc = roc_curve(&g, &i).unwrap();
        // τ = 0.75 (between 0.7 and 0.8) accepts two genuine and no impostor
        assert!(roc.contains(&RocPoint { far: 0.0, tar: 2.0 / 3.0 }));
        assert_eq!(roc.first().unwrap().far, 0.0);
        assert_eq!(*roc.last().unwrap(), RocPoint { far: 1.0, tar: 1.0 });
        assert_eq!(tar_at_far(&roc, 0.01), 2.0 / 3.0);
    }

    #[test]
    fn separated_and_symmetric() {
        let roc = roc_curve(&[5.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(tar_at_far(&roc, 0.0), 1.0);
        assert_eq!(tar_at_far(&roc, 0.01), 1.0);

        let s = [0.3, 0.1, 0.7, 0.7, 0.2];
        for p in roc_curve(&s, &s).unwrap() {
            assert_eq!(p.far, p.tar);
        }
    }

    #[test]
    fn step_convention() {
        let roc = [RocPoint { far: 0.0, tar: 0.5 }, RocPoint { far: 0.02, tar: 0.9 }];
        assert_eq!(tar_at_far(&roc, 0.01), 0.5);
        assert_eq!(tar_at_far(&roc, 0.02), 0.9);
        assert_eq!(tar_at_far(&[RocPoint { far: 0.5, tar: 1.0 }], 0.1), 0.0);
    }

    #[test]
    fn empty_scores() {
        assert!(matches!(roc_curve(&[], &[1.0]), Err(Error::EmptyScores)));
        assert!(matches!(roc_curve(&[1.0], &[]), Err(Error::EmptyScores)));
    }

    #[test]
    fn infinite_scores_are_ordinary_thresholds() {
        let roc = roc_curve(&[f64::NEG_INFINITY, 1.0], &[0.0, f64::NEG_INFINITY]).unwrap();
        assert_eq!(tar_at_far(&roc, 0.0), 0.5);
        assert_eq!(*roc.last().unwrap(), RocPoint { far: 1.0, tar: 1.0 });
    }

    #[test]
    fn oracle_agreement_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let (g, i) = random_scores(&mut rng);
            let roc = roc_curve(&g, &i).unwrap();
            for w in roc.windows(2) {
                assert!(w[0].far < w[1].far && w[0].tar <= w[1].tar);
            }
            for target in [0.0, 0.001, 0.01, 0.05, 0.1, 0.5, 1.0] {
                assert_eq!(tar_at_far(&roc, target), brute_force_tar(&g, &i, target));
            }
        }
    }

    proptest! {
        #[test]
        fn roc_is_monotone_and_spans_the_square(
            g in proptest::collection::vec(-5.0f64..5.0, 1..40),
            i in proptest::collection::vec(-5.0f64..5.0, 1..40),
        ) {
            let roc = roc_curve(&g, &i).unwrap();
            prop_assert_eq!(roc[0].far, 0.0);
            prop_assert_eq!(*roc.last().unwrap(), RocPoint { far: 1.0, tar: 1.0 });
            for w in roc.windows(2) {
                prop_assert!(w[0].far <= w[1].far && w[0].tar <= w[1].tar);
            }
        }
    }

    fn probe(rank: usize) -> ProbeResult {
        ProbeResult {
            name: "p".into(),
            true_id: "a".into(),
            scores: ScoreVector {
                scores: vec![],
                panda_ids: vec![],
                failures: vec![],
            },
            per_id: BTreeMap::new(),
            rank,
        }
    }

    #[test]
    fn rank_accuracy_counts() {
        let probes: Vec<_> = [1, 1, 2, 3].into_iter().map(probe).collect();
        assert_eq!(rank_accuracy(&probes, 3), vec![0.5, 0.75, 1.0]);
    }

    fn labeled(names: &[(&str, &str)]) -> Vec<LabeledImage> {
        names
            .iter()
            .map(|(n, id)| LabeledImage {
                name: n.to_string(),
                panda_id: id.to_string(),
                image: crate::image::Image::filled(4, 4, [0.0; 3]),
            })
            .collect()
    }

    #[test]
    fn assembly_counts_and_ranks() {
        let imgs = labeled(&[("a1", "a"), ("a2", "a"), ("b1", "b"), ("b2", "b"), ("c1", "c"), ("c2", "c")]);
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let vectors: Vec<ScoreVector> = (0..6)
            .map(|q| {
                let others: Vec<usize> = (0..6).filter(|&i| i != q).collect();
                ScoreVector {
                    // the true identity wins except for probe 5, which ties
                    scores: others
                        .iter()
                        .map(|&i| if imgs[i].panda_id == imgs[q].panda_id && q != 5 { 1.0 } else { 0.0 })
                        .collect(),
                    panda_ids: others.iter().map(|&i| imgs[i].panda_id.clone()).collect(),
                    failures: vec![],
                }
            })
            .collect();
        let r = assemble(&imgs, ids, vectors).unwrap();
        assert_eq!(r.genuine.len(), 6);
        assert_eq!(r.impostor.len(), 12);
        // probe 5 (identity c) ties with a and b and loses the tie-break
        assert_eq!(r.probes[5].rank, 3);
        assert_eq!(r.rank_accuracies, vec![5.0 / 6.0, 5.0 / 6.0, 1.0]);
        assert_eq!(r.rank(7), 1.0);

        let summary: serde_json::Value = serde_json::from_str(&r.summary_json(&[0.05], "abc")).unwrap();
        for key in ["tar_at_far_1pct", "rank_1", "rank_5"] {
            let v = summary[key].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(summary["tar_at_far"]["0.05"].is_number());
        assert_eq!(summary["impostor_count"], 12);

        let csv = r.scores_csv();
        assert_eq!(csv.lines().count(), 1 + 6 * 3);
        assert!(csv.starts_with("probe,true_id,identity,score\na1,a,a,1\na1,a,b,0\n"));
        let roc = r.roc_csv();
        let fars: Vec<f64> = roc.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
        assert!(fars.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn closed_set_is_enforced() {
        let imgs = labeled(&[("a1", "a"), ("a2", "a"), ("b1", "b")]);
        let pipeline = Pipeline::new(&crate::config::PipelineConfig::default()).unwrap();
        for cache in [false, true] {
            let r = leave_one_out(&imgs, &pipeline, LooOptions { cache_alignments: cache });
            assert!(matches!(r, Err(Error::ClosedSetViolation(_))));
        }
    }

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
    }
}
