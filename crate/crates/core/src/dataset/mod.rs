//! Region-pair data model: 44-feature vectors, income-difference groups,
//! normalization, splits and CSV ingestion.

mod features;
mod groups;
pub mod io;
mod normalize;
mod region;
mod split;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use features::{
    build_features, feature_fingerprint, feature_names, FeatureVector, COMMUNAL_BLOCK, DEST_BLOCK, DISTANCE_INDEX,
    FEATURE_COUNT, ONE_HOT, ORIGIN_BLOCK,
};
pub use groups::{assign_groups, group_counts, tier_sizes, Group, PairGap};
pub use normalize::Normalizer;
pub use region::{
    region_feature_names, RegionProfile, CENSUS_NAMES, FACILITY_NAMES, LANDUSE_NAMES, REGION_FEATURES, ROAD_NAMES,
};
pub use split::{interleave_by_group, split, SplitIndices, SplitSpec};

use crate::error::{Error, Result};

/// One row of `flows.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub origin_id: String,
    pub dest_id: String,
    pub distance_ft: f64,
    pub flow: u64,
}

/// A directed region pair with its observed flow and income-difference
/// group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub origin_id: String,
    pub dest_id: String,
    pub distance_ft: f64,
    pub flow: u64,
    pub group: Group,
}

/// Model-ready example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub origin_id: String,
    pub dest_id: String,
    pub features: FeatureVector,
    pub flow: f64,
    pub group: Group,
}

fn index_regions(regions: &[RegionProfile]) -> HashMap<&str, &RegionProfile> {
    regions.iter().map(|r| (r.region_id.as_str(), r)).collect()
}

/// Groups every pair by its rank of absolute median-household-income
/// difference over the whole dataset.
pub fn assign_flow_groups(rows: &[FlowRow], regions: &[RegionProfile]) -> Result<Vec<FlowRecord>> {
    let index = index_regions(regions);
    let income = |id: &str| {
        index
            .get(id)
            .map(|r| r.median_household_income)
            .ok_or_else(|| Error::MissingIncome { region: id.to_string() })
    };
    let mut gaps = Vec::with_capacity(rows.len());
    for r in rows {
        gaps.push(PairGap {
            gap: (income(&r.origin_id)? - income(&r.dest_id)?).abs(),
            origin_id: &r.origin_id,
            dest_id: &r.dest_id,
        });
    }
    let groups = assign_groups(&gaps)?;
    Ok(rows
        .iter()
        .zip(groups)
        .map(|(r, group)| FlowRecord {
            origin_id: r.origin_id.clone(),
            dest_id: r.dest_id.clone(),
            distance_ft: r.distance_ft,
            flow: r.flow,
            group,
        })
        .collect())
}

pub fn build_samples(regions: &[RegionProfile], records: &[FlowRecord]) -> Result<Vec<Sample>> {
    let index = index_regions(regions);
    let lookup = |id: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| Error::MissingIncome { region: id.to_string() })
    };
    records
        .iter()
        .map(|r| {
            let (o, d) = (lookup(&r.origin_id)?, lookup(&r.dest_id)?);
            Ok(Sample {
                origin_id: r.origin_id.clone(),
                dest_id: r.dest_id.clone(),
                features: build_features(o, d, r.distance_ft, r.group),
                flow: r.flow as f64,
                group: r.group,
            })
        })
        .collect()
}

/// Normalized train/validation/test samples plus the statistics used.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
    pub normalizer: Normalizer,
    pub split: SplitIndices,
}

impl PreparedData {
    pub fn part(&self, which: Part) -> &[Sample] {
        match which {
            Part::Train => &self.train,
            Part::Validation => &self.validation,
            Part::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Validation,
    Test,
}

/// Group → split → fit normalizer on train → normalize every split.
pub fn prepare(regions: &[RegionProfile], rows: &[FlowRow], spec: &SplitSpec) -> Result<PreparedData> {
    for r in regions {
        r.validate()?;
    }
    let records = assign_flow_groups(rows, regions)?;
    let samples = build_samples(regions, &records)?;
    let groups: Vec<Group> = samples.iter().map(|s| s.group).collect();
    let split = split::split(&groups, spec)?;
    if let Some(w) = &split.warning {
        log::warn!("{w}");
    }
    let take = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    let (train, validation, test) = (take(&split.train), take(&split.validation), take(&split.test));
    let raw: Vec<FeatureVector> = train.iter().map(|s| s.features).collect();
    let normalizer = Normalizer::fit(&raw)?;
    let norm = |v: Vec<Sample>| {
        v.into_iter()
            .map(|mut s| {
                s.features = normalizer.apply(&s.features);
                s
            })
            .collect::<Vec<_>>()
    };
    Ok(PreparedData {
        train: norm(train),
        validation: norm(validation),
        test: norm(test),
        normalizer,
        split,
    })
}
