use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FACILITY_NAMES: [&str; 9] = [
    "poi_restaurant",
    "poi_school",
    "poi_transport",
    "poi_office",
    "poi_leisure",
    "poi_medical",
    "poi_residence",
    "poi_parking",
    "poi_retail",
];

pub const LANDUSE_NAMES: [&str; 6] = [
    "lu_commercial",
    "lu_construction",
    "lu_industrial",
    "lu_residential",
    "lu_retail",
    "lu_natural",
];

pub const ROAD_NAMES: [&str; 3] = ["road_length_m", "road_segments", "road_intersections"];

pub const CENSUS_NAMES: [&str; 2] = ["population", "per_capita_income"];

/// Number of model features describing one region.
pub const REGION_FEATURES: usize = 20;

/// Per-tract attributes. The first 20 fields (facilities, land use, road
/// network, census) are model inputs; the median household income only
/// drives group assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionProfile {
    pub region_id: String,
    pub facilities: [u32; 9],
    /// Areas in km².
    pub landuse: [f64; 6],
    pub road_length_m: f64,
    pub road_segments: u32,
    pub road_intersections: u32,
    pub population: u32,
    pub per_capita_income: f64,
    pub median_household_income: f64,
}

impl RegionProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("region `{}`: {what}", self.region_id)));
        if self.landuse.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("land-use areas must be finite and non-negative");
        }
        if !(self.road_length_m.is_finite() && self.road_length_m >= 0.0) {
            return bad("road length must be finite and non-negative");
        }
        if self.population < 1 {
            return bad("population must be at least 1");
        }
        if !(self.per_capita_income.is_finite() && self.per_capita_income >= 0.0) {
            return bad("per-capita income must be finite and non-negative");
        }
        if !self.median_household_income.is_finite() {
            return bad("median household income must be finite");
        }
        Ok(())
    }

    /// The 20 model features in documented order: facilities, land use,
    /// road network, census.
    pub fn model_features(&self) -> [f64; REGION_FEATURES] {
        let mut out = [0.0; REGION_FEATURES];
        for (o, f) in out.iter_mut().zip(self.facilities) {
            *o = f64::from(f);
        }
        out[9..15].copy_from_slice(&self.landuse);
        out[15] = self.road_length_m;
        out[16] = f64::from(self.road_segments);
        out[17] = f64::from(self.road_intersections);
        out[18] = f64::from(self.population);
        out[19] = self.per_capita_income;
        out
    }
}

pub fn region_feature_names() -> impl Iterator<Item = &'static str> {
    FACILITY_NAMES
        .iter()
        .chain(&LANDUSE_NAMES)
        .chain(&ROAD_NAMES)
        .chain(&CENSUS_NAMES)
        .copied()
}
