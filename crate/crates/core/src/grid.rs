//! The M×N granularity grid and labelings over all of its points.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{Granularity, Labeling, Segment, DEFAULT_GAUSSIANS};

/// One `(m, n)` configuration of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPoint {
    pub m: usize,
    pub n: usize,
}

impl GridPoint {
    pub fn new(m: usize, n: usize) -> Self {
        Self { m, n }
    }
}

impl fmt::Display for GridPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.m, self.n)
    }
}

impl FromStr for GridPoint {
    type Err = Error;

    /// Parse the `"{m}x{n}"` form produced by `Display`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("grid point {s:?} is not of the form MxN"));
        let (m, n) = s.split_once('x').ok_or_else(bad)?;
        Ok(Self::new(
            m.parse().map_err(|_| bad())?,
            n.parse().map_err(|_| bad())?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct GranularityGrid {
    temporal_values: Vec<usize>,
    phonetic_values: Vec<usize>,
    gaussians_per_state: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    temporal_values: Vec<usize>,
    phonetic_values: Vec<usize>,
    gaussians_per_state: usize,
}

impl TryFrom<RawGrid> for GranularityGrid {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        Self::with_gaussians(raw.temporal_values, raw.phonetic_values, raw.gaussians_per_state)
    }
}

impl GranularityGrid {
    pub fn new(temporal_values: Vec<usize>, phonetic_values: Vec<usize>) -> Result<Self> {
        Self::with_gaussians(temporal_values, phonetic_values, DEFAULT_GAUSSIANS)
    }

    pub fn with_gaussians(
        temporal_values: Vec<usize>,
        phonetic_values: Vec<usize>,
        gaussians_per_state: usize,
    ) -> Result<Self> {
        let increasing = |v: &[usize]| !v.is_empty() && v.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&temporal_values) || !increasing(&phonetic_values) {
            return Err(Error::Parameter(format!(
                "grid axes must be non-empty and strictly increasing: m={temporal_values:?} n={phonetic_values:?}"
            )));
        }
        for &m in &temporal_values {
            for &n in &phonetic_values {
                Granularity::with_gaussians(m, n, gaussians_per_state)?;
            }
        }
        Ok(Self {
            temporal_values,
            phonetic_values,
            gaussians_per_state,
        })
    }

    /// A 1×1 grid holding a single granularity.
    pub fn single(gran: Granularity) -> Self {
        Self {
            temporal_values: vec![gran.m],
            phonetic_values: vec![gran.n],
            gaussians_per_state: gran.gaussians_per_state,
        }
    }

    pub fn temporal_values(&self) -> &[usize] {
        &self.temporal_values
    }

    pub fn phonetic_values(&self) -> &[usize] {
        &self.phonetic_values
    }

    pub fn gaussians_per_state(&self) -> usize {
        self.gaussians_per_state
    }

    /// All points, `m` major then `n`.
    pub fn points(&self) -> Vec<GridPoint> {
        self.temporal_values
            .iter()
            .flat_map(|&m| self.phonetic_values.iter().map(move |&n| GridPoint::new(m, n)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.temporal_values.len() * self.phonetic_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, p: GridPoint) -> bool {
        self.temporal_values.contains(&p.m) && self.phonetic_values.contains(&p.n)
    }

    pub fn granularity(&self, p: GridPoint) -> Granularity {
        Granularity {
            m: p.m,
            n: p.n,
            gaussians_per_state: self.gaussians_per_state,
        }
    }

    pub fn max_m(&self) -> usize {
        *self.temporal_values.last().unwrap()
    }

    fn step(values: &[usize], v: usize, up: bool) -> Option<usize> {
        let i = values.iter().position(|&x| x == v)?;
        if up {
            values.get(i + 1).copied()
        } else {
            i.checked_sub(1).map(|j| values[j])
        }
    }

    /// Neighbor along the phonetic axis (`n_{k-1}` or `n_{k+1}`).
    pub fn phonetic_neighbor(&self, p: GridPoint, upper: bool) -> Option<GridPoint> {
        Self::step(&self.phonetic_values, p.n, upper).map(|n| GridPoint::new(p.m, n))
    }

    /// Neighbor along the temporal axis (`m_{k-1}` or `m_{k+1}`).
    pub fn temporal_neighbor(&self, p: GridPoint, upper: bool) -> Option<GridPoint> {
        Self::step(&self.temporal_values, p.m, upper).map(|m| GridPoint::new(m, p.n))
    }
}

/// Labelings of the same utterances under every grid point, either raw
/// decoder output or relabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLabeling {
    utterances: Vec<String>,
    labels: BTreeMap<GridPoint, Vec<Labeling>>,
    relabeled: bool,
}

impl GridLabeling {
    /// Every point must label the same utterances in the same order.
    pub fn new(labels: BTreeMap<GridPoint, Vec<Labeling>>, relabeled: bool) -> Result<Self> {
        let utterances: Vec<String> = labels
            .values()
            .next()
            .map(|ls| ls.iter().map(|l| l.utterance_id.clone()).collect())
            .unwrap_or_default();
        for (p, ls) in &labels {
            if ls.len() != utterances.len()
                || ls.iter().zip(&utterances).any(|(l, u)| &l.utterance_id != u)
            {
                return Err(Error::Validation(format!(
                    "grid point {p} labels a different utterance list"
                )));
            }
            for l in ls {
                let t = l.num_frames();
                l.validate(t, p.m, p.n)?;
            }
        }
        Ok(Self {
            utterances,
            labels,
            relabeled,
        })
    }

    pub fn utterances(&self) -> &[String] {
        &self.utterances
    }

    pub fn is_relabeled(&self) -> bool {
        self.relabeled
    }

    pub fn points(&self) -> impl Iterator<Item = GridPoint> + '_ {
        self.labels.keys().copied()
    }

    pub fn at(&self, p: GridPoint) -> Option<&[Labeling]> {
        self.labels.get(&p).map(Vec::as_slice)
    }

    pub fn labeling(&self, p: GridPoint, utt: usize) -> Option<&Labeling> {
        self.labels.get(&p).and_then(|ls| ls.get(utt))
    }

    /// Segment at position `l` of utterance `utt` under point `p`.
    pub fn segment(&self, p: GridPoint, utt: usize, l: usize) -> Option<Segment> {
        self.labeling(p, utt).and_then(|lab| lab.segments.get(l).copied())
    }

    /// Pattern index at position `l`.
    pub fn pattern(&self, p: GridPoint, utt: usize, l: usize) -> Option<usize> {
        self.segment(p, utt, l).map(|s| s.pattern)
    }

    pub fn into_map(self) -> BTreeMap<GridPoint, Vec<Labeling>> {
        self.labels
    }

    /// Check that the labels cover exactly the points of `grid`.
    pub fn check_covers(&self, grid: &GranularityGrid) -> Result<()> {
        let pts = grid.points();
        if pts.len() != self.labels.len() || pts.iter().any(|p| !self.labels.contains_key(p)) {
            return Err(Error::Validation(
                "grid labeling does not cover exactly the grid points".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deserialized_grids_are_validated() {
        let g = GranularityGrid::new(vec![3, 5], vec![10, 20]).unwrap();
        let json = serde_json::to_string(&g).unwrap();
        assert_eq!(serde_json::from_str::<GranularityGrid>(&json).unwrap(), g);
        let bad = r#"{"temporal_values":[5,3],"phonetic_values":[10],"gaussians_per_state":4}"#;
        assert!(serde_json::from_str::<GranularityGrid>(bad).is_err());
    }

    #[test]
    fn grid_validation_and_neighbors() {
        assert!(GranularityGrid::new(vec![], vec![10]).is_err());
        assert!(GranularityGrid::new(vec![3, 3], vec![10]).is_err());
        assert!(GranularityGrid::new(vec![5, 3], vec![10]).is_err());
        assert!(GranularityGrid::new(vec![3], vec![1]).is_err());
        let g = GranularityGrid::new(vec![3, 5, 7], vec![50, 100]).unwrap();
        assert_eq!(g.len(), 6);
        let p = GridPoint::new(5, 50);
        assert_eq!(g.phonetic_neighbor(p, false), None);
        assert_eq!(g.phonetic_neighbor(p, true), Some(GridPoint::new(5, 100)));
        assert_eq!(g.temporal_neighbor(p, false), Some(GridPoint::new(3, 50)));
        assert_eq!(g.temporal_neighbor(p, true), Some(GridPoint::new(7, 50)));
        assert_eq!(g.points()[1], GridPoint::new(3, 100));
        assert_eq!(p.to_string(), "5x50");
        assert_eq!("5x50".parse::<GridPoint>().unwrap(), p);
        assert!("5-50".parse::<GridPoint>().is_err());
        assert!("5xq".parse::<GridPoint>().is_err());
    }

    #[test]
    fn grid_labeling_requires_matching_utterances() {
        let l = |id: &str| Labeling::new(id, vec![Segment::new(0, 0, 4)]);
        let mut map = BTreeMap::new();
        map.insert(GridPoint::new(2, 3), vec![l("a"), l("b")]);
        map.insert(GridPoint::new(2, 4), vec![l("a")]);
        assert!(GridLabeling::new(map.clone(), false).is_err());
        map.insert(GridPoint::new(2, 4), vec![l("a"), l("b")]);
        let gl = GridLabeling::new(map, false).unwrap();
        assert_eq!(gl.pattern(GridPoint::new(2, 4), 1, 0), Some(0));
        assert_eq!(gl.pattern(GridPoint::new(2, 4), 1, 1), None);
    }
}
