//! `regions.csv` / `flows.csv` readers and writers.

use std::fs::File;
use std::path::Path;

use super::region::{RegionProfile, CENSUS_NAMES, FACILITY_NAMES, LANDUSE_NAMES, ROAD_NAMES};
use super::FlowRow;
use crate::error::{Error, Result};

pub const FLOWS_HEADER: [&str; 4] = ["origin_id", "dest_id", "distance_ft", "flow"];

pub fn regions_header() -> Vec<&'static str> {
    let mut h = vec!["region_id"];
    h.extend(FACILITY_NAMES);
    h.extend(LANDUSE_NAMES);
    h.extend(ROAD_NAMES);
    h.extend(CENSUS_NAMES);
    h.push("median_household_income");
    h
}

struct RowCtx<'a> {
    path: &'a Path,
    line: usize,
    header: &'a [&'static str],
    record: &'a csv::StringRecord,
}

impl RowCtx<'_> {
    fn err(&self, col: usize, message: impl Into<String>) -> Error {
        Error::Ingest {
            path: self.path.to_path_buf(),
            row: self.line,
            column: self.header[col].to_string(),
            message: message.into(),
        }
    }

    fn raw(&self, col: usize) -> &str {
        self.record.get(col).unwrap_or("").trim()
    }

    fn float(&self, col: usize) -> Result<f64> {
        let raw = self.raw(col);
        let v: f64 = raw
            .parse()
            .map_err(|_| self.err(col, format!("`{raw}` is not a number")))?;
        if !v.is_finite() {
            return Err(self.err(col, "value must be finite"));
        }
        Ok(v)
    }

    fn non_negative(&self, col: usize) -> Result<f64> {
        let v = self.float(col)?;
        if v < 0.0 {
            return Err(self.err(col, format!("must be non-negative, got {v}")));
        }
        Ok(v)
    }

    fn count(&self, col: usize) -> Result<u64> {
        let raw = self.raw(col);
        let v: i64 = raw
            .parse()
            .map_err(|_| self.err(col, format!("`{raw}` is not an integer count")))?;
        u64::try_from(v).map_err(|_| self.err(col, format!("count must be non-negative, got {v}")))
    }

    fn count32(&self, col: usize) -> Result<u32> {
        let v = self.count(col)?;
        u32::try_from(v).map_err(|_| self.err(col, format!("count {v} is out of range")))
    }
}

fn open_reader(path: &Path, expected: &[&'static str]) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Ingest {
            path: path.to_path_buf(),
            row: 1,
            column: "<header>".into(),
            message: format!("expected `{}`, got `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(rdr)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    Error::Ingest {
        path: path.to_path_buf(),
        row,
        column: "<record>".into(),
        message: e.to_string(),
    }
}

pub fn load_regions(path: &Path) -> Result<Vec<RegionProfile>> {
    let header = regions_header();
    let mut rdr = open_reader(path, &header)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let record = rec.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let ctx = RowCtx {
            path,
            line,
            header: &header,
            record: &record,
        };
        let region_id = ctx.raw(0).to_string();
        if region_id.is_empty() {
            return Err(ctx.err(0, "empty region id"));
        }
        let mut facilities = [0u32; 9];
        for (k, f) in facilities.iter_mut().enumerate() {
            *f = ctx.count32(1 + k)?;
        }
        let mut landuse = [0.0; 6];
        for (k, a) in landuse.iter_mut().enumerate() {
            *a = ctx.non_negative(10 + k)?;
        }
        let road_length_m = ctx.non_negative(16)?;
        let road_segments = ctx.count32(17)?;
        let road_intersections = ctx.count32(18)?;
        let population = ctx.count32(19)?;
        if population < 1 {
            return Err(ctx.err(19, "population must be at least 1"));
        }
        let per_capita_income = ctx.non_negative(20)?;
        if ctx.raw(21).is_empty() {
            return Err(Error::MissingIncome { region: region_id });
        }
        let median_household_income = ctx.non_negative(21)?;
        out.push(RegionProfile {
            region_id,
            facilities,
            landuse,
            road_length_m,
            road_segments,
            road_intersections,
            population,
            per_capita_income,
            median_household_income,
        });
    }
    Ok(out)
}

pub fn load_flows(path: &Path) -> Result<Vec<FlowRow>> {
    let mut rdr = open_reader(path, &FLOWS_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let record = rec.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let ctx = RowCtx {
            path,
            line,
            header: &FLOWS_HEADER,
            record: &record,
        };
        let origin_id = ctx.raw(0).to_string();
        let dest_id = ctx.raw(1).to_string();
        if origin_id.is_empty() {
            return Err(ctx.err(0, "empty region id"));
        }
        if dest_id.is_empty() {
            return Err(ctx.err(1, "empty region id"));
        }
        let distance_ft = ctx.float(2)?;
        if distance_ft <= 0.0 {
            return Err(ctx.err(2, format!("distance must be positive, got {distance_ft}")));
        }
        let flow = ctx.count(3)?;
        if origin_id == dest_id {
            log::warn!("{}: row {line}: self-flow for `{origin_id}` skipped", path.display());
            continue;
        }
        out.push(FlowRow {
            origin_id,
            dest_id,
            distance_ft,
            flow,
        });
    }
    Ok(out)
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, std::io::Error::other(e))
}

pub fn write_regions(path: &Path, regions: &[RegionProfile]) -> Result<()> {
    let mut w = writer(path)?;
    let err = write_err(path);
    w.write_record(regions_header()).map_err(&err)?;
    for r in regions {
        let mut row = vec![r.region_id.clone()];
        row.extend(r.facilities.iter().map(u32::to_string));
        row.extend(r.landuse.iter().map(f64::to_string));
        row.push(r.road_length_m.to_string());
        row.push(r.road_segments.to_string());
        row.push(r.road_intersections.to_string());
        row.push(r.population.to_string());
        row.push(r.per_capita_income.to_string());
        row.push(r.median_household_income.to_string());
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_flows(path: &Path, flows: &[FlowRow]) -> Result<()> {
    let mut w = writer(path)?;
    let err = write_err(path);
    w.write_record(FLOWS_HEADER).map_err(&err)?;
    for f in flows {
        w.write_record([
            f.origin_id.as_str(),
            f.dest_id.as_str(),
            &f.distance_ft.to_string(),
            &f.flow.to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
