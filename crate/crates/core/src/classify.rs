//! Threshold classification of averaged fingerprints and reliability
//! statistics of the population: CCD of responding channels and per-finger
//! response rates.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{Finger, CHANNELS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClassifyError {
    #[error("class set: {0}")]
    BadClasses(String),
    #[error("no trial records")]
    NoRecords,
    #[error("subset size {0} outside 1..=5")]
    SubsetSize(usize),
    #[error("unknown permittivity class `{0}`")]
    UnknownLabel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PermittivityClass {
    Low,
    Medium,
    High,
}

impl PermittivityClass {
    pub const ALL: [PermittivityClass; 3] = [PermittivityClass::Low, PermittivityClass::Medium, PermittivityClass::High];

    /// Class of a Table I reference liquid by permittivity.
    pub fn of_permittivity(epsilon: f64) -> PermittivityClass {
        if epsilon < 10.0 {
            PermittivityClass::Low
        } else if epsilon < 40.0 {
            PermittivityClass::Medium
        } else {
            PermittivityClass::High
        }
    }
}

impl fmt::Display for PermittivityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PermittivityClass::Low => "low",
            PermittivityClass::Medium => "medium",
            PermittivityClass::High => "high",
        })
    }
}

impl FromStr for PermittivityClass {
    type Err = ClassifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "low" => Ok(PermittivityClass::Low),
            "medium" => Ok(PermittivityClass::Medium),
            "high" => Ok(PermittivityClass::High),
            other => Err(ClassifyError::UnknownLabel(other.to_string())),
        }
    }
}

/// Half-open interval `[lower, upper)` of averaged-fingerprint values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialClass {
    pub label: PermittivityClass,
    pub lower: f64,
    pub upper: f64,
    #[serde(default)]
    pub reference_materials: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "lowercase")]
pub enum Classification {
    Class { label: PermittivityClass },
    Unclassifiable { distance: f64 },
}

impl Classification {
    pub fn label(&self) -> Option<PermittivityClass> {
        match self {
            Classification::Class { label } => Some(*label),
            Classification::Unclassifiable { .. } => None,
        }
    }
}

/// Ordered, non-overlapping class intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSet {
    classes: Vec<MaterialClass>,
}

impl ClassSet {
    pub fn new(classes: Vec<MaterialClass>) -> Result<Self, ClassifyError> {
        if classes.is_empty() {
            return Err(ClassifyError::BadClasses("empty".into()));
        }
        for c in &classes {
            if !(c.lower < c.upper) {
                return Err(ClassifyError::BadClasses(format!("{} has empty interval", c.label)));
            }
        }
        for w in classes.windows(2) {
            if !(w[0].label < w[1].label) {
                return Err(ClassifyError::BadClasses("labels must be strictly increasing".into()));
            }
            if w[0].upper > w[1].lower {
                return Err(ClassifyError::BadClasses(format!("{} overlaps {}", w[0].label, w[1].label)));
            }
        }
        Ok(ClassSet { classes })
    }

    /// Thresholds at the midpoints between adjacent class means; the outer
    /// classes are unbounded. A positive `guard_band` opens an
    /// unclassifiable gap of that width around each threshold.
    pub fn from_means(means: &[(PermittivityClass, f64, Vec<String>)], guard_band: f64) -> Result<Self, ClassifyError> {
        if means.is_empty() {
            return Err(ClassifyError::BadClasses("no class means".into()));
        }
        if !(guard_band >= 0.0) {
            return Err(ClassifyError::BadClasses("guard band must be non-negative".into()));
        }
        let half = guard_band / 2.0;
        let mut classes = Vec::with_capacity(means.len());
        for (i, (label, mean, refs)) in means.iter().enumerate() {
            let lower = if i == 0 {
                f64::NEG_INFINITY
            } else {
                0.5 * (means[i - 1].1 + mean) + half
            };
            let upper = if i + 1 == means.len() {
                f64::INFINITY
            } else {
                0.5 * (mean + means[i + 1].1) - half
            };
            if !(lower < *mean && *mean < upper) {
                return Err(ClassifyError::BadClasses(format!(
                    "guard band {guard_band} swallows the {label} class mean {mean}"
                )));
            }
            classes.push(MaterialClass {
                label: *label,
                lower,
                upper,
                reference_materials: refs.clone(),
            });
        }
        ClassSet::new(classes)
    }

    pub fn classes(&self) -> &[MaterialClass] {
        &self.classes
    }

    /// Interior thresholds (class lower bounds except the first).
    pub fn thresholds(&self) -> Vec<f64> {
        self.classes.iter().skip(1).map(|c| c.lower).collect()
    }

    /// Interval lookup; a value on a threshold goes to the upper class.
    pub fn classify(&self, f_bar: f64) -> Classification {
        if let Some(c) = self.classes.iter().find(|c| f_bar >= c.lower && f_bar < c.upper) {
            return Classification::Class { label: c.label };
        }
        let distance = self
            .classes
            .iter()
            .map(|c| if f_bar < c.lower { c.lower - f_bar } else { f_bar - c.upper })
            .fold(f64::INFINITY, f64::min);
        Classification::Unclassifiable { distance }
    }
}

/// One hand touching one material in one repetition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub subject: u32,
    pub material: String,
    pub trial: u32,
    pub responsive: [bool; CHANNELS],
    /// Relative path of the read log holding this trial's sensor codes.
    pub log: String,
}

impl TrialRecord {
    pub fn n_responsive(&self) -> usize {
        self.responsive.iter().filter(|&&r| r).count()
    }
}

/// Integer tallies behind the reliability statistics. Partial tallies over
/// disjoint record sets merge into the tally of their union.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReliabilityCounts {
    records: u64,
    at_least: [u64; CHANNELS],
    per_material: BTreeMap<String, (u64, [u64; CHANNELS])>,
}

impl ReliabilityCounts {
    pub fn from_records(records: &[TrialRecord]) -> Self {
        let mut c = ReliabilityCounts::default();
        for r in records {
            c.add(r);
        }
        c
    }

    pub fn add(&mut self, r: &TrialRecord) {
        self.records += 1;
        let n = r.n_responsive();
        for m in 0..n {
            self.at_least[m] += 1;
        }
        let entry = self.per_material.entry(r.material.clone()).or_default();
        entry.0 += 1;
        for (slot, &resp) in entry.1.iter_mut().zip(r.responsive.iter()) {
            *slot += u64::from(resp);
        }
    }

    pub fn merge(mut self, other: ReliabilityCounts) -> Self {
        self.records += other.records;
        for i in 0..CHANNELS {
            self.at_least[i] += other.at_least[i];
        }
        for (mat, (n, hits)) in other.per_material {
            let entry = self.per_material.entry(mat).or_default();
            entry.0 += n;
            for (acc, h) in entry.1.iter_mut().zip(hits) {
                *acc += h;
            }
        }
        self
    }

    pub fn report(&self) -> Result<ReliabilityReport, ClassifyError> {
        if self.records == 0 {
            return Err(ClassifyError::NoRecords);
        }
        let pct = |num: u64, den: u64| 100.0 * num as f64 / den as f64;
        let ccd = self.at_least.map(|n| pct(n, self.records));
        let mut joint_hits = [0u64; CHANNELS];
        let mut by_material = BTreeMap::new();
        for (mat, (n, hits)) in &self.per_material {
            for i in 0..CHANNELS {
                joint_hits[i] += hits[i];
            }
            by_material.insert(mat.clone(), hits.map(|h| pct(h, *n)));
        }
        Ok(ReliabilityReport {
            records: self.records,
            ccd,
            per_finger_rates: FingerRates {
                by_material,
                joint: joint_hits.map(|h| pct(h, self.records)),
            },
        })
    }
}

/// Percent of trials in which each finger answered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerRates {
    pub by_material: BTreeMap<String, [f64; CHANNELS]>,
    /// All materials pooled.
    pub joint: [f64; CHANNELS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub records: u64,
    /// `ccd[m-1]`: percent of trials with at least `m` responsive channels.
    pub ccd: [f64; CHANNELS],
    pub per_finger_rates: FingerRates,
}

impl ReliabilityReport {
    pub fn from_records(records: &[TrialRecord]) -> Result<Self, ClassifyError> {
        ReliabilityCounts::from_records(records).report()
    }

    /// `m,ccd_percent` rows followed by `finger,material,rate_percent` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("m,ccd_percent\n");
        for (i, v) in self.ccd.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, v));
        }
        out.push_str("\nfinger,material,rate_percent\n");
        for f in Finger::ALL {
            for (mat, rates) in &self.per_finger_rates.by_material {
                out.push_str(&format!("{},{},{}\n", f, mat, rates[f.index()]));
            }
            out.push_str(&format!("{},all,{}\n", f, self.per_finger_rates.joint[f.index()]));
        }
        out
    }
}

/// Complementary cumulative distribution of simultaneously responding channels.
pub fn ccd(records: &[TrialRecord]) -> Result<[f64; CHANNELS], ClassifyError> {
    Ok(ReliabilityReport::from_records(records)?.ccd)
}

pub fn per_finger_rates(records: &[TrialRecord]) -> Result<FingerRates, ClassifyError> {
    Ok(ReliabilityReport::from_records(records)?.per_finger_rates)
}

/// The `k` most reliable fingers by joint rate, ties to the lower finger,
/// returned in finger order.
pub fn suggest_channel_subset(joint_rates: &[f64; CHANNELS], k: usize) -> Result<Vec<Finger>, ClassifyError> {
    if !(1..=CHANNELS).contains(&k) {
        return Err(ClassifyError::SubsetSize(k));
    }
    let mut order: Vec<Finger> = Finger::ALL.to_vec();
    // Stable sort keeps finger order among equal rates.
    order.sort_by(|a, b| joint_rates[b.index()].total_cmp(&joint_rates[a.index()]));
    let mut pick: Vec<Finger> = order.into_iter().take(k).collect();
    pick.sort();
    Ok(pick)
}
