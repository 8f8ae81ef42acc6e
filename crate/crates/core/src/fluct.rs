//! Elementary fluctuations and explanatory-power indices.
//!
//! A series is cut at its strict local maxima (or minima). Each piece, a
//! fluctuation, carries its local mean and standard deviation; the band
//! `mean ± sd` is compared between an observed and a modeled series on the
//! joint partition formed by both boundary sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{self, Series};

/// Fewest fluctuations a series must yield for the indices to be meaningful.
pub const MIN_FLUCTUATIONS: usize = 6;

/// Fewest points in one fluctuation.
pub const MIN_POINTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    #[default]
    Maxima,
    Minima,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fluctuation {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    pub local_mean: f64,
    pub local_sd: f64,
    pub bandwidth: f64,
    pub n_points: usize,
}

impl Fluctuation {
    fn over(values: &[f64], start: usize, end: usize) -> Self {
        let seg = &values[start..=end];
        let local_mean = series::mean(seg);
        let local_sd = series::variance(seg).sqrt();
        Fluctuation {
            start,
            end,
            local_mean,
            local_sd,
            bandwidth: 2.0 * local_sd,
            n_points: end - start + 1,
        }
    }

    /// The band `[mean - sd, mean + sd]`.
    pub fn interval(&self) -> (f64, f64) {
        (self.local_mean - self.local_sd, self.local_mean + self.local_sd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationPartition {
    fluctuations: Vec<Fluctuation>,
    boundary_kind: BoundaryKind,
}

impl FluctuationPartition {
    /// Builds a partition from explicit boundary indices. The first boundary
    /// must be 0, the last `len - 1`, and neighbours at least two apart.
    pub fn from_boundaries(series: &Series, boundaries: &[usize], kind: BoundaryKind) -> Result<Self> {
        let n = series.len();
        if boundaries.len() < 2 {
            return Err(Error::InvalidBoundaries("need at least two boundaries".into()));
        }
        if boundaries[0] != 0 || *boundaries.last().unwrap() != n - 1 {
            return Err(Error::InvalidBoundaries(format!("boundaries must span 0..={}", n - 1)));
        }
        if let Some(w) = boundaries.windows(2).find(|w| w[1] < w[0] + MIN_POINTS - 1) {
            return Err(Error::InvalidBoundaries(format!(
                "fluctuation {}..={} has fewer than {MIN_POINTS} points",
                w[0], w[1]
            )));
        }
        let values = series.values();
        let fluctuations = boundaries.windows(2).map(|w| Fluctuation::over(values, w[0], w[1])).collect();
        Ok(FluctuationPartition { fluctuations, boundary_kind: kind })
    }

    /// The whole series as one fluctuation.
    pub fn whole(series: &Series) -> Self {
        FluctuationPartition {
            fluctuations: vec![Fluctuation::over(series.values(), 0, series.len() - 1)],
            boundary_kind: BoundaryKind::Maxima,
        }
    }

    pub fn fluctuations(&self) -> &[Fluctuation] {
        &self.fluctuations
    }

    pub fn boundary_kind(&self) -> BoundaryKind {
        self.boundary_kind
    }

    pub fn len(&self) -> usize {
        self.fluctuations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fluctuations.is_empty()
    }

    /// Number of samples covered.
    pub fn series_len(&self) -> usize {
        self.fluctuations.last().map_or(0, |f| f.end + 1)
    }

    pub fn boundaries(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self.fluctuations.iter().map(|f| f.start).collect();
        b.extend(self.fluctuations.last().map(|f| f.end));
        b
    }
}

/// Indices of strict local maxima. A flat top counts once, at its first
/// index, provided the values fall on both sides of it.
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    let n = values.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if values[i] > values[i - 1] {
            let mut j = i;
            while j + 1 < n && values[j + 1] == values[i] {
                j += 1;
            }
            if j + 1 < n && values[j + 1] < values[i] {
                out.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

pub(crate) fn extremum_boundaries(values: &[f64], kind: BoundaryKind) -> Vec<usize> {
    let n = values.len();
    let interior = match kind {
        BoundaryKind::Maxima => local_maxima(values),
        BoundaryKind::Minima => {
            let neg: Vec<f64> = values.iter().map(|v| -v).collect();
            local_maxima(&neg)
        }
    };
    let mut b = Vec::with_capacity(interior.len() + 2);
    b.push(0);
    b.extend(interior);
    b.push(n - 1);
    // Edge runs too short to be a fluctuation join their neighbour.
    while b.len() > 2 && b[1] - b[0] < MIN_POINTS - 1 {
        b.remove(1);
    }
    while b.len() > 2 && b[b.len() - 1] - b[b.len() - 2] < MIN_POINTS - 1 {
        b.remove(b.len() - 2);
    }
    b
}

pub fn segment(series: &Series) -> Result<FluctuationPartition> {
    segment_with(series, BoundaryKind::Maxima, MIN_FLUCTUATIONS)
}

pub fn segment_with(series: &Series, kind: BoundaryKind, min_fluctuations: usize) -> Result<FluctuationPartition> {
    let b = extremum_boundaries(series.values(), kind);
    let found = b.len() - 1;
    if found < min_fluctuations {
        return Err(Error::TooFewFluctuations { found, required: min_fluctuations });
    }
    FluctuationPartition::from_boundaries(series, &b, kind)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointInterval {
    pub start: usize,
    pub end: usize,
    /// Index of the enclosing fluctuation in the first partition.
    pub parent_a: usize,
    pub parent_b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointPartition {
    pub intervals: Vec<JointInterval>,
}

impl JointPartition {
    pub fn m(&self) -> usize {
        self.intervals.len()
    }
}

pub fn joint_partition(a: &FluctuationPartition, b: &FluctuationPartition) -> Result<JointPartition> {
    let (na, nb) = (a.series_len(), b.series_len());
    if na != nb {
        return Err(Error::RangeMismatch { a: na, b: nb });
    }
    let mut cuts = a.boundaries();
    cuts.extend(b.boundaries());
    cuts.sort_unstable();
    cuts.dedup();

    let (fa, fb) = (a.fluctuations(), b.fluctuations());
    let (mut ia, mut ib) = (0, 0);
    let intervals = cuts
        .windows(2)
        .map(|w| {
            while fa[ia].end < w[1] {
                ia += 1;
            }
            while fb[ib].end < w[1] {
                ib += 1;
            }
            JointInterval { start: w[0], end: w[1], parent_a: ia, parent_b: ib }
        })
        .collect();
    Ok(JointPartition { intervals })
}

/// Length of the intersection of two closed intervals, zero when disjoint.
pub fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpRecord {
    pub start: usize,
    pub end: usize,
    pub a_obs: f64,
    pub a_mod: f64,
    pub overlap: f64,
    pub ep: f64,
    pub ep_prime: f64,
    pub ep_hat: f64,
    /// Set when a bandwidth is zero and an index was defined as 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpSummary {
    pub ep_mean: f64,
    pub ep_prime_mean: f64,
    pub ep_hat_mean: f64,
    pub m: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segmentation {
    Extrema(BoundaryKind),
    /// One fluctuation spanning the whole series.
    WholeSeries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Weighting {
    #[default]
    Unweighted,
    /// Weight each joint interval by its number of steps.
    LengthWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpOptions {
    pub segmentation: Segmentation,
    pub weighting: Weighting,
    pub min_fluctuations: usize,
}

impl Default for EpOptions {
    fn default() -> Self {
        EpOptions {
            segmentation: Segmentation::Extrema(BoundaryKind::Maxima),
            weighting: Weighting::Unweighted,
            min_fluctuations: MIN_FLUCTUATIONS,
        }
    }
}

pub fn partition(series: &Series, opts: &EpOptions) -> Result<FluctuationPartition> {
    match opts.segmentation {
        Segmentation::Extrema(kind) => segment_with(series, kind, opts.min_fluctuations),
        Segmentation::WholeSeries => Ok(FluctuationPartition::whole(series)),
    }
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den > 0.0 {
        (num / den, false)
    } else {
        // A zero-width band overlaps nothing.
        (0.0, true)
    }
}

/// Indices on already computed partitions of the observed and modeled series.
pub fn explanatory_powers_on(
    observed: &FluctuationPartition,
    modeled: &FluctuationPartition,
    weighting: Weighting,
) -> Result<(Vec<EpRecord>, EpSummary)> {
    let joint = joint_partition(observed, modeled)?;
    let (fo, fm) = (observed.fluctuations(), modeled.fluctuations());
    let records: Vec<EpRecord> = joint
        .intervals
        .iter()
        .map(|iv| {
            let (po, pm) = (&fo[iv.parent_a], &fm[iv.parent_b]);
            let o = overlap(po.interval(), pm.interval());
            let (ep, d0) = ratio(o, 0.5 * (po.bandwidth + pm.bandwidth));
            let (ep_prime, d1) = ratio(o, po.bandwidth);
            let (ep_hat, d2) = ratio(o, pm.bandwidth);
            EpRecord {
                start: iv.start,
                end: iv.end,
                a_obs: po.bandwidth,
                a_mod: pm.bandwidth,
                overlap: o,
                ep,
                ep_prime,
                ep_hat,
                degenerate: d0 || d1 || d2,
            }
        })
        .collect();

    let weight = |r: &EpRecord| match weighting {
        Weighting::Unweighted => 1.0,
        Weighting::LengthWeighted => (r.end - r.start) as f64,
    };
    let total: f64 = records.iter().map(weight).sum();
    let avg = |f: fn(&EpRecord) -> f64| records.iter().map(|r| weight(r) * f(r)).sum::<f64>() / total;
    let summary = EpSummary {
        ep_mean: avg(|r| r.ep),
        ep_prime_mean: avg(|r| r.ep_prime),
        ep_hat_mean: avg(|r| r.ep_hat),
        m: records.len(),
    };
    Ok((records, summary))
}

pub fn explanatory_powers(observed: &Series, modeled: &Series) -> Result<(Vec<EpRecord>, EpSummary)> {
    explanatory_powers_with(observed, modeled, &EpOptions::default())
}

pub fn explanatory_powers_with(
    observed: &Series,
    modeled: &Series,
    opts: &EpOptions,
) -> Result<(Vec<EpRecord>, EpSummary)> {
    if observed.len() != modeled.len() {
        return Err(Error::LengthMismatch { x: observed.len(), y: modeled.len() });
    }
    if observed.variance() == 0.0 || modeled.variance() == 0.0 {
        return Err(Error::DegenerateBandwidth);
    }
    let po = partition(observed, opts)?;
    let pm = partition(modeled, opts)?;
    explanatory_powers_on(&po, &pm, opts.weighting)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[f64]) -> Series {
        Series::new(v.to_vec()).unwrap()
    }

    fn zigzag() -> Series {
        s(&[3.0, 1.0, 3.0, 1.0, 3.0, 1.0, 3.0, 1.0, 3.0, 1.0, 3.0, 1.0, 3.0])
    }

    #[test]
    fn monotone_ramp_has_too_few() {
        let ramp = s(&(0..12).map(f64::from).collect::<Vec<_>>());
        assert_eq!(segment(&ramp).unwrap_err(), Error::TooFewFluctuations { found: 1, required: 6 });
    }

    #[test]
    fn zigzag_gives_six_triplets() {
        let p = segment(&zigzag()).unwrap();
        assert_eq!(p.boundaries(), vec![0, 2, 4, 6, 8, 10, 12]);
        for f in p.fluctuations() {
            assert_eq!(f.n_points, 3);
            assert_eq!(f.bandwidth, 2.0 * f.local_sd);
            assert!((f.local_mean - 7.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn plateau_takes_first_index() {
        assert_eq!(local_maxima(&[0.0, 2.0, 2.0, 2.0, 1.0, 0.0]), vec![1]);
        // A shelf that keeps rising is not a maximum.
        assert_eq!(local_maxima(&[0.0, 2.0, 2.0, 3.0, 1.0]), vec![3]);
        assert!(local_maxima(&[0.0, 1.0, 1.0]).is_empty());
    }

    #[test]
    fn short_edges_are_merged() {
        // Maxima at 1 and 11: both edge runs have two points.
        let v = [0.0, 5.0, 1.0, 4.0, 1.0, 4.0, 1.0, 4.0, 1.0, 4.0, 1.0, 5.0, 0.0];
        let b = extremum_boundaries(&v, BoundaryKind::Maxima);
        assert_eq!(b, vec![0, 3, 5, 7, 9, 12]);
    }

    #[test]
    fn minima_mode() {
        let p = segment_with(&zigzag(), BoundaryKind::Minima, 1).unwrap();
        assert_eq!(p.boundaries(), vec![0, 3, 5, 7, 9, 12]);
        assert_eq!(p.boundary_kind(), BoundaryKind::Minima);
    }

    #[test]
    fn joint_partition_worked_case() {
        let v: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let series = s(&v);
        let a = FluctuationPartition::from_boundaries(&series, &[0, 5, 11], BoundaryKind::Maxima).unwrap();
        let b = FluctuationPartition::from_boundaries(&series, &[0, 2, 5, 8, 11], BoundaryKind::Maxima).unwrap();
        let j = joint_partition(&a, &b).unwrap();
        assert_eq!(j.m(), 4);
        let parents: Vec<(usize, usize)> = j.intervals.iter().map(|i| (i.parent_a, i.parent_b)).collect();
        assert_eq!(parents, vec![(0, 0), (0, 1), (1, 2), (1, 3)]);
    }

    #[test]
    fn joint_partition_identical_and_mismatch() {
        let p = segment(&zigzag()).unwrap();
        let j = joint_partition(&p, &p).unwrap();
        assert_eq!(j.m(), p.len());
        assert!(j.intervals.iter().all(|i| i.parent_a == i.parent_b));

        let other = FluctuationPartition::whole(&s(&[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(joint_partition(&p, &other).unwrap_err(), Error::RangeMismatch { a: 13, b: 4 });
    }

    #[test]
    fn from_boundaries_validation() {
        let z = zigzag();
        assert!(FluctuationPartition::from_boundaries(&z, &[0, 1, 12], BoundaryKind::Maxima).is_err());
        assert!(FluctuationPartition::from_boundaries(&z, &[1, 12], BoundaryKind::Maxima).is_err());
        assert!(FluctuationPartition::from_boundaries(&z, &[0, 11], BoundaryKind::Maxima).is_err());
    }

    #[test]
    fn overlap_cases() {
        assert_eq!(overlap((0.0, 2.0), (1.0, 3.0)), 1.0);
        assert_eq!(overlap((0.5, 2.5), (0.5, 2.5)), 2.0);
        assert_eq!(overlap((0.0, 1.0), (2.0, 3.0)), 0.0);
    }

    #[test]
    fn identical_series_have_unit_powers() {
        let z = zigzag();
        let (recs, sum) = explanatory_powers(&z, &z).unwrap();
        let one = |v: f64| (v - 1.0).abs() < 1e-12;
        assert!(recs.iter().all(|r| one(r.ep) && one(r.ep_prime) && one(r.ep_hat)));
        assert!(one(sum.ep_mean) && one(sum.ep_prime_mean) && one(sum.ep_hat_mean));
    }

    #[test]
    fn shifted_series_have_zero_powers() {
        let z = zigzag();
        let (_, sum) = explanatory_powers(&z, &z.affine(1.0, 100.0).unwrap()).unwrap();
        assert_eq!((sum.ep_mean, sum.ep_prime_mean, sum.ep_hat_mean), (0.0, 0.0, 0.0));
    }

    #[test]
    fn constant_series_is_degenerate() {
        let z = zigzag();
        let c = s(&[1.0; 13]);
        assert_eq!(explanatory_powers(&z, &c).unwrap_err(), Error::DegenerateBandwidth);
    }

    #[test]
    fn zero_width_segment_is_flagged() {
        let v = [1.0, 1.0, 1.0, 3.0, 1.0, 3.0, 1.0, 3.0, 1.0, 3.0, 1.0, 3.0, 0.0];
        let obs = s(&v);
        let part = FluctuationPartition::from_boundaries(&obs, &[0, 2, 12], BoundaryKind::Maxima).unwrap();
        let (recs, _) = explanatory_powers_on(&part, &part, Weighting::Unweighted).unwrap();
        assert!(recs[0].degenerate);
        assert_eq!(recs[0].ep, 0.0);
        assert!(!recs[1].degenerate);
    }

    #[test]
    fn length_weighting_differs_from_unweighted() {
        let v: Vec<f64> = (0..40).map(|i| (i as f64 * 0.9).sin() + 0.1 * i as f64 % 0.7).collect();
        let obs = s(&v);
        let m = obs.affine(1.3, 0.2).unwrap();
        let opts = EpOptions { weighting: Weighting::LengthWeighted, min_fluctuations: 1, ..EpOptions::default() };
        let (_, w) = explanatory_powers_with(&obs, &m, &opts).unwrap();
        assert!((0.0..=1.0).contains(&w.ep_mean));
    }
}
