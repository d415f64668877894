//! Seeded synthetic regions and gravity-model flows with zero inflation and
//! an optional group-dependent noise gap.

use rand::Rng;
use rand_distr::{Dirichlet, Distribution, LogNormal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{assign_groups, FlowRecord, FlowRow, Group, PairGap, RegionProfile};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::rng::{self, domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub regions: usize,
    pub seed: u64,
    /// Origin population exponent.
    pub alpha: f64,
    /// Destination population exponent.
    pub beta: f64,
    /// Distance-decay exponent.
    pub gamma: f64,
    /// Gravity scale `G`.
    pub scale: f64,
    /// Distance offset `d₀` in feet.
    pub distance_offset_ft: f64,
    /// Probability that a pair is a structural zero regardless of its
    /// intensity.
    pub zero_inflation: f64,
    /// Log-scale standard deviation of the flow multiplier.
    pub noise: f64,
    /// Per-tier multipliers of the noise variance (a1, a2, a3).
    pub bias: [f64; 3],
    pub box_side_ft: f64,
    pub population_median: f64,
    pub population_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            regions: 50,
            seed: 0,
            alpha: 0.5,
            beta: 0.5,
            gamma: 2.0,
            scale: 3.0e4,
            distance_offset_ft: 500.0,
            zero_inflation: 0.0,
            noise: 0.5,
            bias: [1.0, 1.0, 4.0],
            box_side_ft: 150_000.0,
            population_median: 4000.0,
            population_sigma: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("scale", self.scale),
            ("distance_offset_ft", self.distance_offset_ft),
            ("box_side_ft", self.box_side_ft),
            ("population_median", self.population_median),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.regions < 5 {
            return Err(Error::Config(format!("need at least 5 regions, got {}", self.regions)));
        }
        if !(0.0..1.0).contains(&self.zero_inflation) {
            return Err(Error::Config(format!(
                "zero_inflation must lie in [0, 1), got {}",
                self.zero_inflation
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Config(format!("noise must be non-negative, got {}", self.noise)));
        }
        if !(self.population_sigma.is_finite() && self.population_sigma >= 0.0) {
            return Err(Error::Config("population_sigma must be non-negative".into()));
        }
        if self.bias.iter().any(|b| !(b.is_finite() && *b >= 1.0)) {
            return Err(Error::Config(format!(
                "bias multipliers must be >= 1, got {:?}",
                self.bias
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRegions {
    pub profiles: Vec<RegionProfile>,
    /// Tract centroids in feet.
    pub coords: Vec<(f64, f64)>,
}

/// Expected POIs per 1000 residents, in facility order.
const POI_RATES: [f64; 9] = [2.0, 0.8, 1.2, 1.5, 1.0, 0.9, 6.0, 1.1, 2.5];
const LANDUSE_ALPHA: [f64; 6] = [1.5, 0.4, 0.6, 3.0, 0.8, 1.5];

fn lognormal(median: f64, sigma: f64) -> LogNormal<f64> {
    LogNormal::new(median.ln(), sigma).expect("valid log-normal parameters")
}

fn poisson(rng: &mut impl Rng, lambda: f64) -> u64 {
    if !(lambda > 0.0) {
        return 0;
    }
    let lambda = lambda.min(1e15);
    Poisson::new(lambda).expect("finite positive rate").sample(rng) as u64
}

pub fn gen_regions(cfg: &SynthConfig) -> Result<SynthRegions> {
    cfg.validate()?;
    let width = cfg.regions.to_string().len();
    let pop = lognormal(cfg.population_median, cfg.population_sigma);
    let income = lognormal(32_000.0, 0.35);
    let household = lognormal(2.4, 0.25);
    let area = lognormal(2.0, 0.4);
    let road_noise = lognormal(1.0, 0.1);
    let shares = Dirichlet::new(LANDUSE_ALPHA).expect("valid Dirichlet");

    let mut profiles = Vec::with_capacity(cfg.regions);
    let mut coords = Vec::with_capacity(cfg.regions);
    for k in 0..cfg.regions {
        let mut rng = rng::stream(cfg.seed, domain::REGIONS, k as u64);
        let x = rng.random::<f64>() * cfg.box_side_ft;
        let y = rng.random::<f64>() * cfg.box_side_ft;
        let population = pop.sample(&mut rng).round().clamp(1.0, u32::MAX as f64);
        let per_capita_income = income.sample(&mut rng).round();
        let median_household_income = (per_capita_income * household.sample(&mut rng)).round();
        let mut facilities = [0u32; 9];
        for (f, rate) in facilities.iter_mut().zip(POI_RATES) {
            *f = poisson(&mut rng, rate * population / 1000.0).min(u32::MAX as u64) as u32;
        }
        let tract_km2 = area.sample(&mut rng);
        let share: [f64; 6] = shares.sample(&mut rng);
        let landuse = share.map(|s| s * tract_km2);
        let density = population / tract_km2;
        let road_length_m = tract_km2 * (6000.0 + 40.0 * density.sqrt()) * road_noise.sample(&mut rng);
        let road_segments = poisson(&mut rng, road_length_m / 110.0);
        let road_intersections = poisson(&mut rng, 0.65 * road_segments as f64);
        profiles.push(RegionProfile {
            region_id: format!("R{k:0width$}"),
            facilities,
            landuse,
            road_length_m,
            road_segments: road_segments.min(u32::MAX as u64) as u32,
            road_intersections: road_intersections.min(u32::MAX as u64) as u32,
            population: population as u32,
            per_capita_income,
            median_household_income,
        });
        coords.push((x, y));
    }
    Ok(SynthRegions { profiles, coords })
}

/// Gravity intensity `G·pop_i^α·pop_j^β·(d + d₀)^(−γ)`.
pub fn intensity(cfg: &SynthConfig, pop_origin: f64, pop_dest: f64, distance_ft: f64) -> f64 {
    cfg.scale
        * pop_origin.powf(cfg.alpha)
        * pop_dest.powf(cfg.beta)
        * (distance_ft + cfg.distance_offset_ft).powf(-cfg.gamma)
}

/// Emits every ordered pair `i ≠ j`, zero flows included. Each pair draws
/// from its own counter-based stream, so `exec` does not affect the output.
pub fn gen_flows(regions: &SynthRegions, cfg: &SynthConfig, exec: Exec) -> Result<Vec<FlowRecord>> {
    cfg.validate()?;
    let r = regions.profiles.len();
    let dist = |i: usize, j: usize| {
        let (a, b) = (regions.coords[i], regions.coords[j]);
        ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt().max(1.0)
    };
    let pairs: Vec<(usize, usize)> = (0..r)
        .flat_map(|i| (0..r).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let gaps: Vec<PairGap<'_>> = pairs
        .iter()
        .map(|&(i, j)| {
            let (o, d) = (&regions.profiles[i], &regions.profiles[j]);
            PairGap {
                gap: (o.median_household_income - d.median_household_income).abs(),
                origin_id: &o.region_id,
                dest_id: &d.region_id,
            }
        })
        .collect();
    let groups = assign_groups(&gaps)?;

    let flows = exec.map_range(pairs.len(), |k| {
        let (i, j) = pairs[k];
        let mut rng = rng::stream(cfg.seed, domain::FLOWS, (i * r + j) as u64);
        let (o, d) = (&regions.profiles[i], &regions.profiles[j]);
        let distance_ft = dist(i, j);
        let lambda = intensity(cfg, f64::from(o.population), f64::from(d.population), distance_ft);
        let p_present = (1.0 - cfg.zero_inflation) * (1.0 - (-lambda).exp());
        let u: f64 = rng.random();
        let z: f64 = StandardNormal.sample(&mut rng);
        let flow = if u < p_present {
            let sigma = cfg.noise * cfg.bias[groups[k].index()].sqrt();
            let multiplier = (sigma * z - 0.5 * sigma * sigma).exp();
            1 + poisson(&mut rng, lambda * multiplier)
        } else {
            0
        };
        FlowRecord {
            origin_id: o.region_id.clone(),
            dest_id: d.region_id.clone(),
            distance_ft,
            flow,
            group: groups[k],
        }
    });
    Ok(flows)
}

pub fn to_rows(records: &[FlowRecord]) -> Vec<FlowRow> {
    records
        .iter()
        .map(|r| FlowRow {
            origin_id: r.origin_id.clone(),
            dest_id: r.dest_id.clone(),
            distance_ft: r.distance_ft,
            flow: r.flow,
        })
        .collect()
}

/// Convenience: regions plus flows for one config.
pub fn generate(cfg: &SynthConfig) -> Result<(SynthRegions, Vec<FlowRecord>)> {
    let regions = gen_regions(cfg)?;
    let flows = gen_flows(&regions, cfg, Exec::default())?;
    Ok((regions, flows))
}

pub fn group_of(records: &[FlowRecord]) -> Vec<Group> {
    records.iter().map(|r| r.group).collect()
}
