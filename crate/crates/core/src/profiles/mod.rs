//! Beat and bar rhythm profiles: K-Means codebooks over binarized melody clips.

mod kmeans;

pub use kmeans::{kmeans, kmeans_from, squared_distance, KMeansConfig, KMeansResult};

use serde::{Deserialize, Serialize};

use crate::encode::{MelodyGrid, STEPS_PER_BAR, STEPS_PER_BEAT};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::provenance::Provenance;

pub const DEFAULT_BEAT_K: usize = 8;
pub const DEFAULT_BAR_K: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Beat,
    Bar,
}

impl ProfileKind {
    pub fn width(self) -> usize {
        match self {
            ProfileKind::Beat => STEPS_PER_BEAT,
            ProfileKind::Bar => STEPS_PER_BAR,
        }
    }

    pub fn default_k(self) -> usize {
        match self {
            ProfileKind::Beat => DEFAULT_BEAT_K,
            ProfileKind::Bar => DEFAULT_BAR_K,
        }
    }
}

/// A 0/1 rhythm clip: 1 where a note-on or note-off occurs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BinaryClip(pub Vec<u8>);

impl BinaryClip {
    pub fn as_point(&self) -> Vec<f64> {
        self.0.iter().map(|&b| b as f64).collect()
    }
}

pub fn binarize(grid: &MelodyGrid) -> Vec<u8> {
    grid.events().iter().map(|e| e.is_event() as u8).collect()
}

pub fn cut_clips(binary: &[u8], width: usize) -> Result<Vec<BinaryClip>> {
    if width == 0 || !binary.len().is_multiple_of(width) {
        return Err(Error::invalid(format!(
            "length {} is not divisible by clip width {width}",
            binary.len()
        )));
    }
    Ok(binary.chunks(width).map(|c| BinaryClip(c.to_vec())).collect())
}

/// All clips of the given kind from a set of grids, in order.
pub fn corpus_clips<'a>(grids: impl IntoIterator<Item = &'a MelodyGrid>, kind: ProfileKind) -> Vec<BinaryClip> {
    grids
        .into_iter()
        .flat_map(|g| cut_clips(&binarize(g), kind.width()).expect("grid length is whole bars"))
        .collect()
}

/// K-Means centroids for one profile kind. Profile indices are positions in
/// `centroids`, ordered by decreasing cluster population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCodebook {
    pub kind: ProfileKind,
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Number of training clips in each cluster.
    pub counts: Vec<u64>,
    pub seed: u64,
    pub restarts: usize,
    pub iterations: usize,
    pub wcss: f64,
    #[serde(default)]
    pub provenance: Provenance,
}

impl ProfileCodebook {
    pub fn build(kind: ProfileKind, clips: &[BinaryClip], config: &KMeansConfig, exec: Exec) -> Result<Self> {
        if let Some(c) = clips.iter().find(|c| c.0.len() != kind.width()) {
            return Err(Error::Shape(format!(
                "{kind:?} clips must have width {}, found {}",
                kind.width(),
                c.0.len()
            )));
        }
        let points: Vec<Vec<f64>> = clips.iter().map(BinaryClip::as_point).collect();
        let result = kmeans(&points, config, exec)?;
        Ok(Self::from_result(kind, config, result))
    }

    fn from_result(kind: ProfileKind, config: &KMeansConfig, result: KMeansResult) -> Self {
        ProfileCodebook {
            kind,
            k: result.centroids.len(),
            centroids: result.centroids,
            counts: result.counts,
            seed: config.seed,
            restarts: config.restarts,
            iterations: result.iterations,
            wcss: result.wcss,
            provenance: Provenance::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.kind.width()
    }

    /// Nearest centroid; ties go to the lowest index.
    pub fn assign(&self, clip: &BinaryClip) -> Result<usize> {
        if clip.0.len() != self.dim() {
            return Err(Error::Shape(format!(
                "clip of width {} against {:?} codebook of width {}",
                clip.0.len(),
                self.kind,
                self.dim()
            )));
        }
        Ok(nearest(&self.centroids, &clip.as_point()))
    }

    pub fn assign_all(&self, clips: &[BinaryClip]) -> Result<Vec<usize>> {
        clips.iter().map(|c| self.assign(c)).collect()
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(self)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let book: ProfileCodebook = serde_json::from_slice(bytes)?;
        if book.centroids.len() != book.k || book.centroids.iter().any(|c| c.len() != book.kind.width()) {
            return Err(Error::Schema {
                field: "centroids".into(),
                message: format!("expected {} centroids of width {}", book.k, book.kind.width()),
            });
        }
        Ok(book)
    }
}

pub(crate) fn nearest(centroids: &[Vec<f64>], point: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, point);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

/// Bar-profile index per bar and beat-profile index per beat.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileSequences {
    pub bars: Vec<usize>,
    pub beats: Vec<usize>,
}

pub fn profile_sequences(
    grid: &MelodyGrid,
    beat_codebook: &ProfileCodebook,
    bar_codebook: &ProfileCodebook,
) -> Result<ProfileSequences> {
    let binary = binarize(grid);
    Ok(ProfileSequences {
        bars: bar_codebook.assign_all(&cut_clips(&binary, STEPS_PER_BAR)?)?,
        beats: beat_codebook.assign_all(&cut_clips(&binary, STEPS_PER_BEAT)?)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowPoint {
    pub k: usize,
    pub wcss: f64,
}

/// WCSS for each k. Each k after the first is additionally warm-started from
/// the previous solution plus its worst-fit point, which keeps the curve
/// non-increasing. Values of k above the number of distinct clips are skipped.
pub fn elbow_report(
    clips: &[BinaryClip],
    k_range: std::ops::RangeInclusive<usize>,
    config: &KMeansConfig,
    exec: Exec,
) -> Result<Vec<ElbowPoint>> {
    let points: Vec<Vec<f64>> = clips.iter().map(BinaryClip::as_point).collect();
    let distinct = {
        let mut d = clips.to_vec();
        d.sort();
        d.dedup();
        d.len()
    };
    let mut report = Vec::new();
    let mut previous: Option<KMeansResult> = None;
    for k in k_range {
        if k == 0 || k > distinct {
            continue;
        }
        let cfg = KMeansConfig { k, ..config.clone() };
        let mut best = kmeans(&points, &cfg, exec)?;
        if let Some(prev) = &previous {
            if prev.centroids.len() + 1 == k {
                let mut init = prev.centroids.clone();
                init.push(kmeans::worst_fit(&points, &prev.centroids));
                let warm = kmeans_from(&points, init, &cfg);
                if warm.wcss < best.wcss {
                    best = warm;
                }
            }
        }
        report.push(ElbowPoint { k, wcss: best.wcss });
        previous = Some(best);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::{grid_from_notes, GridNote};

    fn clip(bits: &str) -> BinaryClip {
        BinaryClip(bits.bytes().map(|b| b - b'0').collect())
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize(&MelodyGrid::silent(1)), vec![0; 16]);
        let g = grid_from_notes(&[GridNote::new(60, 0, 3)], 1).unwrap();
        assert_eq!(&binarize(&g)[..4], &[1, 0, 0, 1]);
    }

    #[test]
    fn figure_style_bar() {
        // eighth, eighth, quarter, dotted eighth, sixteenth held to step 12, rest
        let notes = [
            GridNote::new(60, 0, 2),
            GridNote::new(62, 2, 2),
            GridNote::new(64, 4, 4),
            GridNote::new(65, 8, 3),
            GridNote::new(67, 11, 1),
        ];
        let g = grid_from_notes(&notes, 1).unwrap();
        assert_eq!(binarize(&g), vec![1, 0, 1, 0, 1, 0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 0]);
    }

    #[test]
    fn clip_cutting() {
        let v: Vec<u8> = (0..16).map(|i| (i % 3 == 0) as u8).collect();
        let beats = cut_clips(&v, 4).unwrap();
        assert_eq!(beats.len(), 4);
        assert_eq!(cut_clips(&v, 16).unwrap().len(), 1);
        let joined: Vec<u8> = beats.iter().flat_map(|c| c.0.clone()).collect();
        assert_eq!(joined, v);
        assert!(cut_clips(&v[..15], 4).is_err());
    }

    fn book(centroids: Vec<Vec<f64>>) -> ProfileCodebook {
        ProfileCodebook {
            kind: ProfileKind::Beat,
            k: centroids.len(),
            counts: vec![1; centroids.len()],
            centroids,
            seed: 0,
            restarts: 1,
            iterations: 0,
            wcss: 0.0,
            provenance: Provenance::default(),
        }
    }

    #[test]
    fn assign_exact_and_ties() {
        let b = book(vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![1.0, 1.0, 0.0, 0.0],
            vec![1.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0, 1.0],
        ]);
        assert_eq!(b.assign(&clip("1010")).unwrap(), 2);
        // 1001 is at squared distance 2 from 0, 1, 2 and 3: lowest index wins
        assert_eq!(b.assign(&clip("1001")).unwrap(), 0);
        // 1110 is at distance 1 from #1 and #3 only
        let b2 = book(vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![1.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 1.0, 1.0, 0.0],
        ]);
        assert_eq!(b2.assign(&clip("1110")).unwrap(), 1);
        assert!(b.assign(&clip("10")).is_err());
    }

    #[test]
    fn profile_sequences_lengths() {
        let b = book(vec![vec![0.0; 4], vec![1.0, 0.0, 0.0, 0.0]]);
        let bar = ProfileCodebook {
            kind: ProfileKind::Bar,
            ..book(vec![vec![1.0; 16], vec![0.25; 16]])
        };
        let seq = profile_sequences(&MelodyGrid::silent(2), &b, &bar).unwrap();
        assert_eq!(seq.bars, vec![1, 1]);
        assert_eq!(seq.beats, vec![0; 8]);
    }

    #[test]
    fn codebook_json_round_trip() {
        let clips: Vec<BinaryClip> = ["1000", "1010", "1111", "1001", "1000", "0000", "1011"]
            .iter()
            .map(|s| clip(s))
            .collect();
        let cfg = KMeansConfig { k: 3, seed: 5, ..Default::default() };
        let b = ProfileCodebook::build(ProfileKind::Beat, &clips, &cfg, Exec::Sequential).unwrap();
        let back = ProfileCodebook::from_json(&b.to_json().unwrap()).unwrap();
        assert_eq!(back, b);
        for c in &b.centroids {
            assert!(c.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn elbow_endpoints() {
        let clips: Vec<BinaryClip> = ["1000", "1010", "1111", "1000", "0000", "1010", "1000"]
            .iter()
            .map(|s| clip(s))
            .collect();
        let cfg = KMeansConfig { seed: 1, ..Default::default() };
        let report = elbow_report(&clips, 1..=6, &cfg, Exec::Sequential).unwrap();
        // four distinct clips
        assert_eq!(report.len(), 4);
        assert!(report.last().unwrap().wcss.abs() < 1e-12);
        let pts: Vec<Vec<f64>> = clips.iter().map(|c| c.as_point()).collect();
        let n = pts.len() as f64;
        let mean: Vec<f64> = (0..4).map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / n).collect();
        let total: f64 = pts.iter().map(|p| squared_distance(p, &mean)).sum();
        assert!((report[0].wcss - total).abs() < 1e-12);
        assert!(report.windows(2).all(|w| w[1].wcss <= w[0].wcss));
    }
}
