use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::groups::Group;
use super::region::{region_feature_names, RegionProfile, REGION_FEATURES};

pub const FEATURE_COUNT: usize = 44;
pub const ORIGIN_BLOCK: std::ops::Range<usize> = 0..20;
pub const DEST_BLOCK: std::ops::Range<usize> = 20..40;
pub const COMMUNAL_BLOCK: std::ops::Range<usize> = 40..44;
pub const DISTANCE_INDEX: usize = 40;
pub const ONE_HOT: std::ops::Range<usize> = 41..44;

/// Inputs for one ordered region pair, laid out as
/// `[origin 20 | destination 20 | distance | one-hot group 3]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(#[serde(with = "array44")] pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn origin(&self) -> &[f64] {
        &self.0[ORIGIN_BLOCK]
    }

    pub fn dest(&self) -> &[f64] {
        &self.0[DEST_BLOCK]
    }

    pub fn communal(&self) -> &[f64] {
        &self.0[COMMUNAL_BLOCK]
    }
}

mod array44 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64; 44], s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; 44], D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        v.try_into()
            .map_err(|v: Vec<f64>| serde::de::Error::invalid_length(v.len(), &"44 features"))
    }
}

pub fn build_features(origin: &RegionProfile, dest: &RegionProfile, distance_ft: f64, group: Group) -> FeatureVector {
    let mut out = [0.0; FEATURE_COUNT];
    out[ORIGIN_BLOCK].copy_from_slice(&origin.model_features());
    out[DEST_BLOCK].copy_from_slice(&dest.model_features());
    out[DISTANCE_INDEX] = distance_ft;
    out[ONE_HOT].copy_from_slice(&group.one_hot());
    FeatureVector(out)
}

/// Names of the 44 inputs in vector order.
pub fn feature_names() -> &'static [String] {
    static NAMES: OnceLock<Vec<String>> = OnceLock::new();
    NAMES.get_or_init(|| {
        let mut names = Vec::with_capacity(FEATURE_COUNT);
        names.extend(region_feature_names().map(|n| format!("origin_{n}")));
        names.extend(region_feature_names().map(|n| format!("dest_{n}")));
        names.push("distance_ft".to_string());
        names.extend(Group::ALL.iter().map(|g| format!("group_{g}")));
        debug_assert_eq!(names.len(), FEATURE_COUNT);
        debug_assert_eq!(REGION_FEATURES * 2 + 4, FEATURE_COUNT);
        names
    })
}

/// Hash of the feature order; checkpoints carry it so a model is never fed
/// vectors laid out differently from its training data.
pub fn feature_fingerprint() -> String {
    let mut h = Sha256::new();
    for n in feature_names() {
        h.update(n.as_bytes());
        h.update(b"\n");
    }
    h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn fixture(id: &str, base: u32) -> RegionProfile {
        RegionProfile {
            region_id: id.into(),
            facilities: [
                base,
                base + 1,
                base + 2,
                base + 3,
                base + 4,
                base + 5,
                base + 6,
                base + 7,
                base + 8,
            ],
            landuse: [0.5, 0.25, 0.125, 1.0, 0.0, 2.0],
            road_length_m: 1500.0,
            road_segments: 12,
            road_intersections: 7,
            population: 3000 + base,
            per_capita_income: 41000.0,
            median_household_income: 65000.0,
        }
    }

    #[test]
    fn identical_profiles_give_equal_blocks() {
        let r = fixture("a", 3);
        let f = build_features(&r, &r, 1200.0, Group::A2);
        assert_eq!(f.origin(), f.dest());
    }

    #[test]
    fn a1_tail_is_distance_then_one_hot() {
        let f = build_features(&fixture("a", 1), &fixture("b", 2), 987.5, Group::A1);
        assert_eq!(f.communal(), &[987.5, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn hand_assembled_fixture() {
        let f = build_features(&fixture("a", 0), &fixture("b", 10), 250.0, Group::A3);
        let mut expected = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        expected.extend([0.5, 0.25, 0.125, 1.0, 0.0, 2.0, 1500.0, 12.0, 7.0, 3000.0, 41000.0]);
        expected.extend([10.0, 11.0, 12.0, 13.0, 14.0, 15.0, 16.0, 17.0, 18.0]);
        expected.extend([0.5, 0.25, 0.125, 1.0, 0.0, 2.0, 1500.0, 12.0, 7.0, 3010.0, 41000.0]);
        expected.extend([250.0, 0.0, 0.0, 1.0]);
        assert_eq!(f.as_slice(), expected.as_slice());
    }

    #[test]
    fn names_are_unique_and_ordered() {
        let names = feature_names();
        assert_eq!(names.len(), 44);
        assert_eq!(names[0], "origin_poi_restaurant");
        assert_eq!(names[19], "origin_per_capita_income");
        assert_eq!(names[20], "dest_poi_restaurant");
        assert_eq!(names[DISTANCE_INDEX], "distance_ft");
        assert_eq!(names[43], "group_a3");
        let set: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(set.len(), 44);
        assert_eq!(feature_fingerprint(), feature_fingerprint());
    }
}
