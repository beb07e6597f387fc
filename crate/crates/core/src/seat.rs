//! Sentence Encoder Association Test.
//!
//! For a sentence `w` and attribute sets `A`, `B` the association is
//!
//! ```text
//! s(w, A, B) = mean_{a in A} cos(w, a) - mean_{b in B} cos(w, b)
//! ```
//!
//! and the effect size over target sets `X`, `Y` is
//!
//! ```text
//! d = (mean_{x in X} s(x) - mean_{y in Y} s(y)) / std_{w in X ∪ Y} s(w)
//! ```
//!
//! using the sample standard deviation (divisor `n - 1`). The one-sided
//! permutation p-value compares the unnormalized mean difference of the observed
//! split against every equal-size repartition of `X ∪ Y` (exactly when there are at
//! most [`EXACT_LIMIT`] of them, otherwise by seeded sampling). The observed split
//! is always counted, so `p > 0`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, SentenceEmbedding};
use crate::error::{Error, Result};

/// Largest number of repartitions enumerated exactly.
pub const EXACT_LIMIT: u64 = 20_000;

/// Relative slack when comparing a repartition statistic against the observed one,
/// so that mathematically equal statistics summed in a different order still count.
const TIE_EPS: f64 = 1e-12;

pub const STD_CONVENTION: &str = "sample (n-1)";

/// The six tests reported as "Avg. SEAT".
pub const DEFAULT_TESTS: [&str; 6] = ["seat6a", "seat6b", "seat7a", "seat7b", "seat8a", "seat8b"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationTest {
    pub name: String,
    pub targets_x: Vec<String>,
    pub targets_y: Vec<String>,
    pub attributes_a: Vec<String>,
    pub attributes_b: Vec<String>,
}

impl AssociationTest {
    pub fn validate(&self) -> Result<()> {
        for (label, set) in [
            ("targets_x", &self.targets_x),
            ("targets_y", &self.targets_y),
            ("attributes_a", &self.attributes_a),
            ("attributes_b", &self.attributes_b),
        ] {
            if set.is_empty() {
                return Err(Error::invalid(format!("{}: {label} is empty", self.name)));
            }
        }
        if self.targets_x.len() != self.targets_y.len() {
            return Err(Error::invalid(format!(
                "{}: target sets differ in size ({} vs {})",
                self.name,
                self.targets_x.len(),
                self.targets_y.len()
            )));
        }
        Ok(())
    }

    /// Reads a SEAT JSON file: four groups `targ1`, `targ2`, `attr1`, `attr2`,
    /// each `{"examples": [...]}`. The test name is the file stem.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Group {
            examples: Vec<String>,
        }
        #[derive(Deserialize)]
        struct SeatFile {
            targ1: Group,
            targ2: Group,
            attr1: Group,
            attr2: Group,
        }
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let file: SeatFile = serde_json::from_str(&raw)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let test = AssociationTest {
            name,
            targets_x: file.targ1.examples,
            targets_y: file.targ2.examples,
            attributes_a: file.attr1.examples,
            attributes_b: file.attr2.examples,
        };
        test.validate()?;
        Ok(test)
    }

    pub fn swapped_targets(&self) -> Self {
        let mut t = self.clone();
        std::mem::swap(&mut t.targets_x, &mut t.targets_y);
        t
    }

    pub fn swapped_attributes(&self) -> Self {
        let mut t = self.clone();
        std::mem::swap(&mut t.attributes_a, &mut t.attributes_b);
        t
    }
}

/// Loads `<dir>/<name>.jsonl` or `<dir>/<name>.json` for each requested name.
pub fn load_tests(dir: impl AsRef<Path>, names: &[String]) -> Result<Vec<AssociationTest>> {
    let dir = dir.as_ref();
    names
        .iter()
        .map(|name| {
            let candidates: [PathBuf; 2] = [dir.join(format!("{name}.jsonl")), dir.join(format!("{name}.json"))];
            let path = candidates
                .iter()
                .find(|p| p.exists())
                .ok_or_else(|| Error::invalid(format!("no SEAT file for {name:?} in {}", dir.display())))?;
            AssociationTest::from_json_file(path)
        })
        .collect()
}

/// A test whose sentences have already been embedded.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedTest {
    pub name: String,
    pub x: Vec<SentenceEmbedding>,
    pub y: Vec<SentenceEmbedding>,
    pub a: Vec<SentenceEmbedding>,
    pub b: Vec<SentenceEmbedding>,
}

impl EmbeddedTest {
    pub fn embed(test: &AssociationTest, backend: &dyn Backend) -> Result<Self> {
        test.validate()?;
        Ok(Self {
            name: test.name.clone(),
            x: backend.embed_many(&test.targets_x)?,
            y: backend.embed_many(&test.targets_y)?,
            a: backend.embed_many(&test.attributes_a)?,
            b: backend.embed_many(&test.attributes_b)?,
        })
    }

    fn check(&self) -> Result<()> {
        if [&self.x, &self.y, &self.a, &self.b].iter().any(|s| s.is_empty()) {
            return Err(Error::invalid(format!("{}: empty embedding set", self.name)));
        }
        if self.x.len() != self.y.len() {
            return Err(Error::invalid(format!(
                "{}: target sets differ in size ({} vs {})",
                self.name,
                self.x.len(),
                self.y.len()
            )));
        }
        Ok(())
    }

    /// Association of every target, X first then Y.
    pub fn associations(&self) -> Result<Vec<f64>> {
        self.check()?;
        self.x
            .iter()
            .chain(&self.y)
            .map(|w| association(w, &self.a, &self.b))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSizeResult {
    pub test_name: String,
    pub d: f64,
    pub p_value: f64,
    pub n_permutations: u64,
    pub exact: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeatOptions {
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for SeatOptions {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            seed: 42,
        }
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len() as f64;
    values.sum::<f64>() / n
}

/// `s(w, A, B)`: mean cosine to `A` minus mean cosine to `B`.
pub fn association(w: &SentenceEmbedding, a: &[SentenceEmbedding], b: &[SentenceEmbedding]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("attribute set is empty"));
    }
    let to_a = a.iter().map(|e| w.cosine(e)).collect::<Result<Vec<_>>>()?;
    let to_b = b.iter().map(|e| w.cosine(e)).collect::<Result<Vec<_>>>()?;
    Ok(mean(to_a.into_iter()) - mean(to_b.into_iter()))
}

fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let m = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Effect size from precomputed associations (first `nx` belong to X).
pub fn effect_size_from_associations(s: &[f64], nx: usize) -> Result<f64> {
    if nx == 0 || nx >= s.len() {
        return Err(Error::invalid("both target sets must be non-empty"));
    }
    let std = sample_std(s);
    if std.is_nan() || std <= 0.0 || !std.is_finite() {
        return Err(Error::DegenerateVariance);
    }
    let mx = mean(s[..nx].iter().copied());
    let my = mean(s[nx..].iter().copied());
    Ok((mx - my) / std)
}

pub fn effect_size(test: &EmbeddedTest) -> Result<f64> {
    let s = test.associations()?;
    effect_size_from_associations(&s, test.x.len())
}

/// Binomial coefficient, saturating at `u64::MAX`.
pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
        if acc > u128::from(u64::MAX) {
            return u64::MAX;
        }
    }
    acc as u64
}

fn split_statistic(s: &[f64], in_x: &[bool], nx: usize) -> f64 {
    let ny = s.len() - nx;
    let (mut sx, mut sy) = (0.0, 0.0);
    for (v, &x) in s.iter().zip(in_x) {
        if x {
            sx += v;
        } else {
            sy += v;
        }
    }
    sx / nx as f64 - sy / ny as f64
}

fn at_least(stat: f64, observed: f64) -> bool {
    stat >= observed - TIE_EPS * observed.abs().max(1.0)
}

/// Outcome of a permutation test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationOutcome {
    pub p_value: f64,
    pub exact: bool,
    pub n_permutations: u64,
}

fn check_permutation_input(s: &[f64], nx: usize) -> Result<f64> {
    let n = s.len();
    if nx == 0 || nx >= n {
        return Err(Error::invalid("both target sets must be non-empty"));
    }
    let std = sample_std(s);
    if std.is_nan() || std <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let mut observed_mask = vec![false; n];
    observed_mask[..nx].iter_mut().for_each(|m| *m = true);
    Ok(split_statistic(s, &observed_mask, nx))
}

/// One-sided permutation p-value from associations (first `nx` belong to X).
/// Enumerates every split when there are at most [`EXACT_LIMIT`], else samples.
pub fn permutation_pvalue_from_associations(
    s: &[f64],
    nx: usize,
    n_samples: usize,
    seed: u64,
) -> Result<PermutationOutcome> {
    if n_samples < 100 {
        return Err(Error::invalid("n_samples must be at least 100"));
    }
    if binomial(s.len() as u64, nx as u64) <= EXACT_LIMIT {
        exact_pvalue_from_associations(s, nx)
    } else {
        sampled_pvalue_from_associations(s, nx, n_samples, seed)
    }
}

/// Fraction of all `C(n, nx)` splits whose statistic reaches the observed one.
pub fn exact_pvalue_from_associations(s: &[f64], nx: usize) -> Result<PermutationOutcome> {
    let observed = check_permutation_input(s, nx)?;
    let n = s.len();
    let total = binomial(n as u64, nx as u64);
    let mut count = 0u64;
    let mut mask = vec![false; n];
    for_each_combination(n, nx, |chosen| {
        mask.iter_mut().for_each(|m| *m = false);
        for &i in chosen {
            mask[i] = true;
        }
        if at_least(split_statistic(s, &mask, nx), observed) {
            count += 1;
        }
    });
    Ok(PermutationOutcome {
        p_value: count as f64 / total as f64,
        exact: true,
        n_permutations: total,
    })
}

/// Monte Carlo estimate `(1 + hits) / (1 + n_samples)` over seeded random splits.
pub fn sampled_pvalue_from_associations(
    s: &[f64],
    nx: usize,
    n_samples: usize,
    seed: u64,
) -> Result<PermutationOutcome> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be positive"));
    }
    let observed = check_permutation_input(s, nx)?;
    let n = s.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut mask = vec![false; n];
    let mut count = 1u64;
    for _ in 0..n_samples {
        order.shuffle(&mut rng);
        mask.iter_mut().for_each(|m| *m = false);
        for &i in &order[..nx] {
            mask[i] = true;
        }
        if at_least(split_statistic(s, &mask, nx), observed) {
            count += 1;
        }
    }
    Ok(PermutationOutcome {
        p_value: count as f64 / (n_samples as f64 + 1.0),
        exact: false,
        n_permutations: n_samples as u64,
    })
}

pub fn permutation_pvalue(test: &EmbeddedTest, n_samples: usize, seed: u64) -> Result<PermutationOutcome> {
    let s = test.associations()?;
    permutation_pvalue_from_associations(&s, test.x.len(), n_samples, seed)
}

/// Visits every `k`-subset of `0..n` in lexicographic order.
fn for_each_combination(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Embeds a test and computes its effect size and permutation p-value.
pub fn evaluate(test: &AssociationTest, backend: &dyn Backend, opts: SeatOptions) -> Result<EffectSizeResult> {
    let embedded = EmbeddedTest::embed(test, backend)?;
    evaluate_embedded(&embedded, opts)
}

pub fn evaluate_embedded(test: &EmbeddedTest, opts: SeatOptions) -> Result<EffectSizeResult> {
    let s = test.associations()?;
    let nx = test.x.len();
    let d = effect_size_from_associations(&s, nx)?;
    let perm = permutation_pvalue_from_associations(&s, nx, opts.n_samples, opts.seed)?;
    Ok(EffectSizeResult {
        test_name: test.name.clone(),
        d,
        p_value: perm.p_value,
        n_permutations: perm.n_permutations,
        exact: perm.exact,
    })
}

/// Mean absolute effect size over tests.
pub fn avg_seat(results: &[EffectSizeResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(results.iter().map(|r| r.d.abs()).sum::<f64>() / results.len() as f64)
}

/// Per-test records plus the average, as stored in run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeatReport {
    pub tests: Vec<EffectSizeResult>,
    pub avg_abs_d: f64,
    pub std_convention: String,
    pub pooling: String,
    pub failures: BTreeMap<String, String>,
}

/// Evaluates every test; a failing test is recorded and left out of the
/// average rather than aborting the suite.
pub fn run_suite(tests: &[AssociationTest], backend: &dyn Backend, opts: SeatOptions) -> Result<SeatReport> {
    let mut results = Vec::new();
    let mut failures = BTreeMap::new();
    for t in tests {
        match evaluate(t, backend, opts) {
            Ok(r) => results.push(r),
            Err(e) => {
                failures.insert(t.name.clone(), e.to_string());
            }
        }
    }
    let avg_abs_d = avg_seat(&results).map_err(|_| {
        Error::invalid(format!("every SEAT test failed: {failures:?}"))
    })?;
    Ok(SeatReport {
        tests: results,
        avg_abs_d,
        std_convention: STD_CONVENTION.to_string(),
        pooling: backend.pooling().as_str().to_string(),
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[f64]) -> SentenceEmbedding {
        SentenceEmbedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn association_examples() {
        assert_eq!(association(&e(&[1.0, 0.0]), &[e(&[1.0, 0.0])], &[e(&[0.0, 1.0])]).unwrap(), 1.0);
        let a = [e(&[0.3, 0.7]), e(&[1.0, 0.2])];
        assert_eq!(association(&e(&[0.5, -1.0]), &a, &a).unwrap(), 0.0);
        let diag = e(&[1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()]);
        assert!(association(&diag, &[e(&[1.0, 0.0])], &[e(&[0.0, 1.0])]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn association_rejects_dimension_mismatch() {
        let r = association(&e(&[1.0, 0.0]), &[e(&[1.0, 0.0, 0.0])], &[e(&[0.0, 1.0])]);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn two_point_effect_size() {
        let t = EmbeddedTest {
            name: "t".into(),
            x: vec![e(&[1.0, 0.0])],
            y: vec![e(&[0.0, 1.0])],
            a: vec![e(&[1.0, 0.0])],
            b: vec![e(&[0.0, 1.0])],
        };
        // s = {1, -1}; sample std = sqrt(2)
        assert!((effect_size(&t).unwrap() - 2.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn identical_targets_give_zero() {
        let xs = vec![e(&[1.0, 0.2]), e(&[0.1, 1.0])];
        let t = EmbeddedTest {
            name: "t".into(),
            x: xs.clone(),
            y: xs,
            a: vec![e(&[1.0, 0.0])],
            b: vec![e(&[0.0, 1.0])],
        };
        assert_eq!(effect_size(&t).unwrap(), 0.0);
    }

    #[test]
    fn zero_variance_is_degenerate() {
        let t = EmbeddedTest {
            name: "t".into(),
            x: vec![e(&[1.0, 0.0])],
            y: vec![e(&[1.0, 0.0])],
            a: vec![e(&[1.0, 0.0])],
            b: vec![e(&[0.0, 1.0])],
        };
        assert!(matches!(effect_size(&t), Err(Error::DegenerateVariance)));
        assert!(matches!(permutation_pvalue(&t, 100, 1), Err(Error::DegenerateVariance)));
    }

    #[test]
    fn separated_sets_reach_minimum_p() {
        let s = [0.9, 0.8, 0.7, -0.1, -0.2, -0.3];
        let out = permutation_pvalue_from_associations(&s, 3, 1000, 0).unwrap();
        assert!(out.exact);
        assert_eq!(out.n_permutations, 20);
        assert_eq!(out.p_value, 1.0 / 20.0);
    }

    #[test]
    fn sampling_used_above_limit() {
        let s: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        // C(20, 10) = 184756 > 20000
        let out = permutation_pvalue_from_associations(&s, 10, 500, 3).unwrap();
        assert!(!out.exact);
        assert_eq!(out.n_permutations, 500);
        assert!(out.p_value > 0.0 && out.p_value <= 1.0);
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(permutation_pvalue_from_associations(&[1.0, 0.0], 1, 99, 0).is_err());
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(8, 4), 70);
        assert_eq!(binomial(16, 8), 12870);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(200, 100), u64::MAX);
    }

    #[test]
    fn combinations_enumerated_once() {
        let mut seen = Vec::new();
        for_each_combination(5, 2, |c| seen.push(c.to_vec()));
        assert_eq!(seen.len(), 10);
        assert_eq!(seen[0], vec![0, 1]);
        assert_eq!(seen[9], vec![3, 4]);
    }

    #[test]
    fn avg_uses_absolute_values() {
        let r = |d: f64| EffectSizeResult {
            test_name: "t".into(),
            d,
            p_value: 0.5,
            n_permutations: 1,
            exact: true,
        };
        assert_eq!(avg_seat(&[r(0.5)]).unwrap(), 0.5);
        assert_eq!(avg_seat(&[r(1.0), r(-1.0)]).unwrap(), 1.0);
        assert!(matches!(avg_seat(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn unequal_targets_rejected() {
        let t = AssociationTest {
            name: "t".into(),
            targets_x: vec!["a".into(), "b".into()],
            targets_y: vec!["c".into()],
            attributes_a: vec!["d".into()],
            attributes_b: vec!["e".into()],
        };
        assert!(t.validate().is_err());
    }

    #[test]
    fn reads_seat_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seat6a.jsonl");
        std::fs::write(
            &path,
            r#"{"targ1":{"category":"Male","examples":["Hu tabib."]},
                "targ2":{"category":"Female","examples":["Hi tabiba."]},
                "attr1":{"category":"Career","examples":["xogħol"]},
                "attr2":{"category":"Family","examples":["familja"]}}"#,
        )
        .unwrap();
        let tests = load_tests(dir.path(), &["seat6a".to_string()]).unwrap();
        assert_eq!(tests[0].name, "seat6a");
        assert_eq!(tests[0].targets_y, vec!["Hi tabiba."]);
    }
}
