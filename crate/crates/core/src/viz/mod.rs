//! t-SNE projections of gendered word pairs and adjectives.
//!
//! Words are embedded as one-word sentences through the backend, projected
//! with exact t-SNE, and summarised by which gendered form each adjective
//! lands nearer to.

mod svg;
mod tsne;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::error::{Error, Result};

pub use svg::render_svg;
pub use tsne::{pairwise_affinities, tsne, Affinities, TsneConfig, TsneResult, ENTROPY_TOL, MAX_BISECTION_STEPS};

/// Rows closer than this (Euclidean) count as duplicates.
pub const DUPLICATE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenderTag {
    MaleForm,
    FemaleForm,
    Adjective,
}

impl GenderTag {
    pub fn as_str(self) -> &'static str {
        match self {
            GenderTag::MaleForm => "male_form",
            GenderTag::FemaleForm => "female_form",
            GenderTag::Adjective => "adjective",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    labels: Vec<String>,
    rows: Vec<Vec<f64>>,
    tags: Vec<GenderTag>,
}

impl EmbeddingMatrix {
    pub fn new(labels: Vec<String>, rows: Vec<Vec<f64>>, tags: Vec<GenderTag>) -> Result<Self> {
        let n = labels.len();
        if n < 3 {
            return Err(Error::invalid(format!("need at least 3 points, got {n}")));
        }
        if rows.len() != n || tags.len() != n {
            return Err(Error::Mismatch(format!(
                "{n} labels, {} rows, {} tags",
                rows.len(),
                tags.len()
            )));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::invalid("rows have zero dimensions"));
        }
        for r in &rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("non-finite embedding value"));
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let d: f64 = rows[i]
                    .iter()
                    .zip(&rows[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if d < DUPLICATE_EPS {
                    return Err(Error::DuplicatePoints(i, j));
                }
            }
        }
        Ok(Self { labels, rows, tags })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn tags(&self) -> &[GenderTag] {
        &self.tags
    }
}

/// Word list for a projection: `{"pairs": [[male, female], ...], "adjectives": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordSet {
    pub pairs: Vec<(String, String)>,
    #[serde(default)]
    pub adjectives: Vec<String>,
}

impl WordSet {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Ok(serde_json::from_str(&raw)?)
    }

    /// Labels and tags in row order: all pairs (male then female) then adjectives.
    pub fn labelled(&self) -> Result<Vec<(String, GenderTag)>> {
        let mut out = Vec::new();
        for (m, f) in &self.pairs {
            out.push((m.clone(), GenderTag::MaleForm));
            out.push((f.clone(), GenderTag::FemaleForm));
        }
        out.extend(self.adjectives.iter().map(|a| (a.clone(), GenderTag::Adjective)));
        let mut seen = HashSet::new();
        if let Some((dup, _)) = out.iter().find(|(w, _)| !seen.insert(w.clone())) {
            return Err(Error::invalid(format!("word {dup:?} listed twice")));
        }
        Ok(out)
    }
}

/// Embeds every word as a one-word sentence.
pub fn embed_words(words: &WordSet, backend: &dyn Backend) -> Result<EmbeddingMatrix> {
    let labelled = words.labelled()?;
    let texts: Vec<String> = labelled.iter().map(|(w, _)| w.clone()).collect();
    let vectors = backend.embed_many(&texts)?;
    let (labels, tags) = labelled.into_iter().unzip();
    EmbeddingMatrix::new(labels, vectors.into_iter().map(|e| e.vector().to_vec()).collect(), tags)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nearer {
    Male,
    Female,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityRow {
    pub adjective: String,
    pub nearest_male: String,
    pub nearest_female: String,
    pub male_distance: f64,
    pub female_distance: f64,
    /// `male_distance / female_distance`; below 1 means nearer the male form.
    pub ratio: f64,
    pub nearer: Nearer,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProximitySummary {
    pub male: usize,
    pub female: usize,
    pub tie: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityReport {
    pub rows: Vec<ProximityRow>,
    pub summary: ProximitySummary,
}

fn nearest<'a>(
    from: [f64; 2],
    coords: &[[f64; 2]],
    labels: &'a [String],
    tags: &[GenderTag],
    want: GenderTag,
) -> Option<(&'a str, f64)> {
    coords
        .iter()
        .zip(labels)
        .zip(tags)
        .filter(|(_, &t)| t == want)
        .map(|((c, l), _)| (l.as_str(), (c[0] - from[0]).hypot(c[1] - from[1])))
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)))
}

/// For each adjective, the nearest male and female form in the projection.
/// Rows follow the input order of the adjectives.
pub fn proximity_report(coords: &[[f64; 2]], labels: &[String], tags: &[GenderTag]) -> Result<ProximityReport> {
    if coords.len() != labels.len() || tags.len() != labels.len() {
        return Err(Error::Mismatch("coordinates, labels and tags differ in length".into()));
    }
    if !tags.contains(&GenderTag::Adjective) {
        return Err(Error::invalid("no adjective-tagged rows"));
    }
    let mut rows = Vec::new();
    let mut summary = ProximitySummary::default();
    for ((c, label), _) in coords
        .iter()
        .zip(labels)
        .zip(tags)
        .filter(|(_, &t)| t == GenderTag::Adjective)
    {
        let (nm, dm) = nearest(*c, coords, labels, tags, GenderTag::MaleForm)
            .ok_or_else(|| Error::invalid("no male-form rows"))?;
        let (nf, df) = nearest(*c, coords, labels, tags, GenderTag::FemaleForm)
            .ok_or_else(|| Error::invalid("no female-form rows"))?;
        let nearer = if (dm - df).abs() <= 1e-12 * dm.max(df) {
            Nearer::Tie
        } else if dm < df {
            Nearer::Male
        } else {
            Nearer::Female
        };
        match nearer {
            Nearer::Male => summary.male += 1,
            Nearer::Female => summary.female += 1,
            Nearer::Tie => summary.tie += 1,
        }
        let ratio = if nearer == Nearer::Tie { 1.0 } else { dm / df };
        rows.push(ProximityRow {
            adjective: label.clone(),
            nearest_male: nm.to_string(),
            nearest_female: nf.to_string(),
            male_distance: dm,
            female_distance: df,
            ratio,
            nearer,
        });
    }
    Ok(ProximityReport { rows, summary })
}

/// Coordinates file written next to the SVG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionPoint {
    pub label: String,
    pub tag: GenderTag,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub points: Vec<ProjectionPoint>,
    pub kl: f64,
    pub config: TsneConfig,
    pub proximity: Option<ProximityReport>,
}

/// Embeds, projects and summarises a word set.
pub fn project_words(words: &WordSet, backend: &dyn Backend, cfg: &TsneConfig) -> Result<Projection> {
    let m = embed_words(words, backend)?;
    let result = tsne(&m, cfg)?;
    let proximity = if m.tags().contains(&GenderTag::Adjective) {
        Some(proximity_report(&result.coords, m.labels(), m.tags())?)
    } else {
        None
    };
    Ok(Projection {
        points: m
            .labels()
            .iter()
            .zip(m.tags())
            .zip(&result.coords)
            .map(|((l, &tag), c)| ProjectionPoint {
                label: l.clone(),
                tag,
                x: c[0],
                y: c[1],
            })
            .collect(),
        kl: result.kl,
        config: cfg.clone(),
        proximity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn rejects_duplicates_and_small_inputs() {
        let tags = vec![GenderTag::Adjective; 3];
        let err = EmbeddingMatrix::new(s(&["a", "b", "c"]), vec![vec![0.0, 1.0], vec![2.0, 0.0], vec![0.0, 1.0]], tags.clone());
        assert!(matches!(err, Err(Error::DuplicatePoints(0, 2))));
        assert!(EmbeddingMatrix::new(s(&["a", "b"]), vec![vec![0.0], vec![1.0]], tags[..2].to_vec()).is_err());
        assert!(EmbeddingMatrix::new(s(&["a", "b", "c"]), vec![vec![0.0], vec![1.0], vec![f64::NAN]], tags).is_err());
    }

    #[test]
    fn equidistant_adjective_is_a_tie() {
        let coords = [[-1.0, 0.0], [1.0, 0.0], [0.0, 5.0]];
        let tags = [GenderTag::MaleForm, GenderTag::FemaleForm, GenderTag::Adjective];
        let r = proximity_report(&coords, &s(&["tabib", "tabiba", "kompetenti"]), &tags).unwrap();
        assert_eq!(r.rows[0].nearer, Nearer::Tie);
        assert_eq!(r.rows[0].ratio, 1.0);
        assert_eq!(r.summary, ProximitySummary { male: 0, female: 0, tie: 1 });
    }

    #[test]
    fn counts_nearer_forms() {
        let coords = [[0.0, 0.0], [10.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2.0, 1.0]];
        let tags = [
            GenderTag::MaleForm,
            GenderTag::FemaleForm,
            GenderTag::Adjective,
            GenderTag::Adjective,
            GenderTag::Adjective,
        ];
        let labels = s(&["tabib", "tabiba", "a", "b", "c"]);
        let r = proximity_report(&coords, &labels, &tags).unwrap();
        assert_eq!(r.summary, ProximitySummary { male: 3, female: 0, tie: 0 });
        assert!(r.rows.iter().all(|row| row.ratio < 1.0));
        assert!(proximity_report(&coords[..2], &labels[..2], &tags[..2]).is_err());
    }

    #[test]
    fn duplicate_words_rejected() {
        let w = WordSet {
            pairs: vec![("tabib".into(), "tabiba".into())],
            adjectives: s(&["tabib"]),
        };
        assert!(w.labelled().is_err());
    }
}
