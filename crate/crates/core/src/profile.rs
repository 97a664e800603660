//! Solo operator times, pairwise overlap effectiveness and the profile file
//! that carries them.
//!
//! The overlap effectiveness factor of two operators is the fraction of the
//! shorter one's solo time that disappears when both run together:
//! `(t_i + t_j - p_ij) / min(t_i, t_j)`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{Lane, OperatorClass};

/// Ingested tables may exceed the [0, 1] range by this much.
pub const OEF_TOLERANCE: f64 = 0.05;

/// Overlap effectiveness of two operators with solo times `t_i`, `t_j` and
/// concurrent time `p_ij`.
pub fn oef(t_i: f64, t_j: f64, p_ij: f64) -> Result<f64> {
    if !(t_i > 0.0 && t_j > 0.0) {
        return Err(Error::config(format!("solo times must be positive, got {t_i} and {t_j}")));
    }
    if !(p_ij >= t_i.max(t_j)) {
        return Err(Error::config(format!(
            "overlapped time {p_ij} is shorter than the longer solo time {}",
            t_i.max(t_j)
        )));
    }
    Ok((t_i + t_j - p_ij) / t_i.min(t_j))
}

/// Concurrent execution time implied by an overlap effectiveness value.
pub fn overlapped_time(t_i: f64, t_j: f64, oef_val: f64) -> Result<f64> {
    if !(t_i > 0.0 && t_j > 0.0) {
        return Err(Error::config(format!("solo times must be positive, got {t_i} and {t_j}")));
    }
    if !(0.0..=1.0).contains(&oef_val) {
        return Err(Error::config(format!("overlap effectiveness {oef_val} outside [0, 1]")));
    }
    Ok(t_i + t_j - oef_val * t_i.min(t_j))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SoloTimeTable {
    entries: BTreeMap<(OperatorClass, String), f64>,
}

impl SoloTimeTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, class: OperatorClass, shape: impl Into<String>, t_us: f64) -> Result<()> {
        if !(t_us > 0.0) || !t_us.is_finite() {
            return Err(Error::config(format!("solo time for {class} must be positive, got {t_us}")));
        }
        self.entries.insert((class, shape.into()), t_us);
        Ok(())
    }

    pub fn get(&self, class: OperatorClass, shape: &str) -> Option<f64> {
        self.entries.get(&(class, shape.to_string())).copied()
    }

    /// Exact shape first, then each `:`-separated prefix, then the `*` wildcard.
    pub fn lookup(&self, class: OperatorClass, shape: &str) -> Option<f64> {
        let mut key = shape;
        loop {
            if let Some(t) = self.get(class, key) {
                return Some(t);
            }
            match key.rfind(':') {
                Some(pos) => key = &key[..pos],
                None => break,
            }
        }
        self.get(class, "*")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (OperatorClass, &str, f64)> {
        self.entries.iter().map(|((c, s), t)| (*c, s.as_str(), *t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interference {
    /// Multiplicative loss of overlap benefit while kernels run concurrently.
    pub slowdown_factor: f64,
    /// Launch gap before a communication kernel joins a running peer, as a
    /// fraction of that kernel's solo time.
    pub launch_overhead_frac: f64,
}

impl Default for Interference {
    fn default() -> Self {
        Interference {
            slowdown_factor: 0.25,
            launch_overhead_frac: 0.15,
        }
    }
}

impl Interference {
    pub const NONE: Interference = Interference {
        slowdown_factor: 0.0,
        launch_overhead_frac: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.slowdown_factor) {
            return Err(Error::config("slowdown_factor must be in [0, 1]"));
        }
        if !(self.launch_overhead_frac >= 0.0) {
            return Err(Error::config("launch_overhead_frac must be >= 0"));
        }
        Ok(())
    }
}

fn pair_key(a: OperatorClass, b: OperatorClass) -> (OperatorClass, OperatorClass) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OverlapTable {
    entries: BTreeMap<(OperatorClass, OperatorClass), f64>,
    pub interference: Interference,
}

impl OverlapTable {
    pub fn new(interference: Interference) -> Self {
        OverlapTable {
            entries: BTreeMap::new(),
            interference,
        }
    }

    /// Table with every pair set to `value`.
    pub fn uniform(value: f64, interference: Interference) -> Self {
        let mut t = OverlapTable::new(interference);
        for a in OperatorClass::ALL {
            for b in OperatorClass::ALL {
                t.entries.insert(pair_key(a, b), value);
            }
        }
        t
    }

    pub fn set(&mut self, a: OperatorClass, b: OperatorClass, value: f64) -> Result<()> {
        if !(-OEF_TOLERANCE..=1.0 + OEF_TOLERANCE).contains(&value) {
            return Err(Error::config(format!(
                "overlap effectiveness for ({a}, {b}) is {value}, outside [-0.05, 1.05]"
            )));
        }
        self.entries.insert(pair_key(a, b), value);
        Ok(())
    }

    pub fn get(&self, a: OperatorClass, b: OperatorClass) -> Option<f64> {
        self.entries.get(&pair_key(a, b)).copied()
    }

    pub fn lookup(&self, a: OperatorClass, b: OperatorClass) -> Result<f64> {
        self.get(a, b).ok_or(Error::MissingOverlap(a, b))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (OperatorClass, OperatorClass, f64)> + '_ {
        self.entries.iter().map(|(&(a, b), &v)| (a, b, v))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileMetadata {
    #[serde(default)]
    pub hardware: String,
    #[serde(default)]
    pub created: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Profile {
    pub solo: SoloTimeTable,
    pub overlap: OverlapTable,
    pub metadata: ProfileMetadata,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SoloRecord {
    class: OperatorClass,
    shape: String,
    t_us: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OefRecord {
    a: OperatorClass,
    b: OperatorClass,
    value: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    #[serde(default)]
    solo: Vec<SoloRecord>,
    oef: Vec<OefRecord>,
    #[serde(default)]
    interference: Interference,
    #[serde(default)]
    metadata: ProfileMetadata,
}

impl Profile {
    pub fn to_json(&self) -> Result<String> {
        let file = ProfileFile {
            solo: self
                .solo
                .iter()
                .map(|(class, shape, t_us)| SoloRecord {
                    class,
                    shape: shape.to_string(),
                    t_us,
                })
                .collect(),
            oef: self
                .overlap
                .iter()
                .map(|(a, b, value)| OefRecord { a, b, value })
                .collect(),
            interference: self.overlap.interference,
            metadata: self.metadata.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let file: ProfileFile = serde_json::from_str(text).map_err(|e| Error::schema(origin, &e))?;
        file.interference.validate()?;
        let mut solo = SoloTimeTable::new();
        for r in file.solo {
            if solo.get(r.class, &r.shape).is_some() {
                return Err(Error::config(format!("{origin}: duplicate solo entry {} {}", r.class, r.shape)));
            }
            solo.insert(r.class, r.shape, r.t_us)?;
        }
        let mut overlap = OverlapTable::new(file.interference);
        for r in file.oef {
            if overlap.get(r.a, r.b).is_some() {
                return Err(Error::config(format!("{origin}: duplicate pair ({}, {})", r.a, r.b)));
            }
            overlap.set(r.a, r.b, r.value)?;
        }
        Ok(Profile {
            solo,
            overlap,
            metadata: file.metadata,
        })
    }
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<Profile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Profile::from_json(&text, &path.display().to_string())
}

pub fn save_profile(profile: &Profile, path: impl AsRef<Path>) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), profile.to_json()?.as_bytes())
}

/// Synthetic hardware archetypes. Magnitudes are invented; only the
/// qualitative ordering between operator families is meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    PcieA40,
    NvlinkA800,
    NvlinkH100,
}

struct ArchetypeLevels {
    heavy_comm: f64,
    light_comm: f64,
    local_cross: f64,
    comm_mixed: f64,
    comm_same: f64,
    comp_comp: f64,
    fa_bwd_gemm: f64,
}

impl Archetype {
    pub const ALL: [Archetype; 3] = [Archetype::PcieA40, Archetype::NvlinkA800, Archetype::NvlinkH100];

    pub fn name(self) -> &'static str {
        match self {
            Archetype::PcieA40 => "pcie_a40",
            Archetype::NvlinkA800 => "nvlink_a800",
            Archetype::NvlinkH100 => "nvlink_h100",
        }
    }

    /// Cluster preset whose bandwidths pair with this archetype.
    pub fn cluster(self) -> &'static str {
        match self {
            Archetype::PcieA40 => "a40",
            Archetype::NvlinkA800 => "a800",
            Archetype::NvlinkH100 => "h100",
        }
    }

    fn levels(self) -> ArchetypeLevels {
        match self {
            Archetype::PcieA40 => ArchetypeLevels {
                heavy_comm: 0.85,
                light_comm: 0.6,
                local_cross: 0.45,
                comm_mixed: 0.15,
                comm_same: 0.1,
                comp_comp: 0.1,
                fa_bwd_gemm: 0.02,
            },
            Archetype::NvlinkA800 => ArchetypeLevels {
                heavy_comm: 0.78,
                light_comm: 0.55,
                local_cross: 0.45,
                comm_mixed: 0.15,
                comm_same: 0.12,
                comp_comp: 0.12,
                fa_bwd_gemm: 0.03,
            },
            Archetype::NvlinkH100 => ArchetypeLevels {
                heavy_comm: 0.72,
                light_comm: 0.5,
                local_cross: 0.4,
                comm_mixed: 0.12,
                comm_same: 0.1,
                comp_comp: 0.1,
                fa_bwd_gemm: 0.02,
            },
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Archetype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Archetype::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

fn is_heavy(c: OperatorClass) -> bool {
    matches!(
        c,
        OperatorClass::Gemm
            | OperatorClass::FlashAttention
            | OperatorClass::FlashAttentionBwd
            | OperatorClass::GroupGemm
            | OperatorClass::WeightGrad
    )
}

/// Complete synthetic profile for an archetype. The solo table is left
/// empty; durations then come from the analytic estimator for the
/// archetype's cluster.
pub fn synth_profile(archetype: Archetype) -> Profile {
    let lv = archetype.levels();
    let mut overlap = OverlapTable::new(Interference::default());
    for a in OperatorClass::ALL {
        for b in OperatorClass::ALL {
            if a > b {
                continue;
            }
            let (la, lb) = (a.default_lane(), b.default_lane());
            let value = match (la == Lane::Compute, lb == Lane::Compute) {
                (true, true) => {
                    let fa_bwd = OperatorClass::FlashAttentionBwd;
                    let gemm_like = |c| matches!(c, OperatorClass::Gemm | OperatorClass::WeightGrad);
                    if (a == fa_bwd && gemm_like(b)) || (b == fa_bwd && gemm_like(a)) {
                        lv.fa_bwd_gemm
                    } else {
                        lv.comp_comp
                    }
                }
                (true, false) | (false, true) => {
                    let comp = if la == Lane::Compute { a } else { b };
                    if is_heavy(comp) {
                        lv.heavy_comm
                    } else {
                        lv.light_comm
                    }
                }
                (false, false) => {
                    if a == b {
                        lv.comm_same
                    } else if la != lb {
                        lv.local_cross
                    } else {
                        lv.comm_mixed
                    }
                }
            };
            overlap
                .set(a, b, value)
                .expect("archetype levels lie inside the accepted range");
        }
    }
    Profile {
        solo: SoloTimeTable::new(),
        overlap,
        metadata: ProfileMetadata {
            hardware: archetype.cluster().to_string(),
            created: format!("synthetic:{}", archetype.name()),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use OperatorClass::*;

    #[test]
    fn oef_reference_values() {
        assert_eq!(oef(10.0, 4.0, 10.0).unwrap(), 1.0);
        assert_eq!(oef(10.0, 4.0, 14.0).unwrap(), 0.0);
        assert_eq!(oef(10.0, 4.0, 12.0).unwrap(), 0.5);
    }

    #[test]
    fn oef_rejects_bad_inputs() {
        assert!(oef(0.0, 4.0, 4.0).is_err());
        assert!(oef(10.0, 4.0, 9.0).is_err());
        assert!(overlapped_time(10.0, 4.0, 1.2).is_err());
        assert!(overlapped_time(-1.0, 4.0, 0.5).is_err());
    }

    #[test]
    fn overlapped_time_reference_values() {
        assert_eq!(overlapped_time(10.0, 4.0, 1.0).unwrap(), 10.0);
        assert_eq!(overlapped_time(10.0, 4.0, 0.0).unwrap(), 14.0);
    }

    #[test]
    fn table_is_symmetric() {
        let mut t = OverlapTable::new(Interference::NONE);
        t.set(Gemm, AllGather, 0.7).unwrap();
        assert_eq!(t.get(AllGather, Gemm), Some(0.7));
        assert!(t.set(Gemm, AllToAll, 1.2).is_err());
        assert!(t.set(Gemm, AllToAll, 1.04).is_ok());
        assert!(matches!(t.lookup(Gemm, SendRecv), Err(Error::MissingOverlap(..))));
    }

    #[test]
    fn solo_lookup_falls_back_through_prefixes() {
        let mut s = SoloTimeTable::new();
        s.insert(Gemm, "f:qkv", 5.0).unwrap();
        s.insert(Gemm, "*", 1.0).unwrap();
        assert_eq!(s.lookup(Gemm, "f:qkv:h4096"), Some(5.0));
        assert_eq!(s.lookup(Gemm, "b:qkv:h4096"), Some(1.0));
        assert_eq!(s.lookup(LayerNorm, "f:qkv"), None);
        assert!(s.insert(Gemm, "x", 0.0).is_err());
    }

    #[test]
    fn synthetic_orderings_hold() {
        for arch in Archetype::ALL {
            let p = synth_profile(arch);
            let t = &p.overlap;
            assert_eq!(t.len(), 13 * 14 / 2);
            let g = |a, b| t.get(a, b).unwrap();
            assert!(g(Gemm, AllGather) > g(Gemm, Gemm), "{arch}");
            assert!(g(AllGather, AllGather) <= 0.3);
            assert!(g(AllToAll, AllToAll) <= 0.3);
            // compute/communication beats local/cross beats compute/compute
            let min_comp_comm = OperatorClass::ALL
                .iter()
                .filter(|c| !c.is_communication())
                .flat_map(|&c| [AllGather, ReduceScatter, AllToAll, SendRecv].map(|m| g(c, m)))
                .fold(f64::INFINITY, f64::min);
            let local_cross = g(AllGather, AllToAll);
            assert!(min_comp_comm > local_cross);
            assert!(local_cross > g(Gemm, Gemm));
            assert!(g(FlashAttentionBwd, Gemm) < g(Gemm, Gemm));
            for (_, _, v) in t.iter() {
                assert!((0.0..=1.0).contains(&v));
            }
            p.overlap.interference.validate().unwrap();
        }
    }

    #[test]
    fn unknown_archetype() {
        assert!("tpu_v5".parse::<Archetype>().is_err());
        assert_eq!("nvlink_h100".parse::<Archetype>().unwrap(), Archetype::NvlinkH100);
    }

    #[test]
    fn hand_written_profile_parses() {
        let text = r#"{
            "solo": [{"class": "GEMM", "shape": "*", "t_us": 10.0}],
            "oef": [{"a": "GEMM", "b": "AllGather", "value": 0.8},
                    {"a": "AllGather", "b": "AllGather", "value": 0.1}],
            "interference": {"slowdown_factor": 0.2, "launch_overhead_frac": 0.1},
            "metadata": {"hardware": "a40", "created": "2024-01-01"}
        }"#;
        let p = Profile::from_json(text, "inline").unwrap();
        assert_eq!(p.solo.lookup(Gemm, "anything"), Some(10.0));
        assert_eq!(p.overlap.get(AllGather, Gemm), Some(0.8));
        assert_eq!(p.overlap.len(), 2);
        assert_eq!(p.overlap.interference.slowdown_factor, 0.2);
        // a pair the file never mentions only fails on lookup
        assert!(p.overlap.lookup(Gemm, AllToAll).is_err());
    }

    #[test]
    fn out_of_range_oef_rejected_on_load() {
        let text = r#"{"oef": [{"a": "GEMM", "b": "AllGather", "value": 1.2}]}"#;
        assert!(Profile::from_json(text, "inline").is_err());
        let text = r#"{"oef": [{"a": "GEMM", "b": "AllGather", "value": -0.04}]}"#;
        assert!(Profile::from_json(text, "inline").is_ok());
        let text = r#"{"oef": [], "extra": 1}"#;
        assert!(matches!(Profile::from_json(text, "inline"), Err(Error::Schema { .. })));
    }
}
