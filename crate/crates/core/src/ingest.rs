//! Raw meter data ingestion, hourly resampling, dataset splits and the
//! synthetic corpus generator.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::types::{default_epoch, BuildingSeries, HorizonSpec, SeriesError, HOURS_PER_DAY};

const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("building {building}: missing {channel} half-hour at {timestamp}")]
    Gap {
        building: u32,
        channel: Channel,
        timestamp: NaiveDateTime,
    },
    #[error("building {building}: duplicate {channel} record at {timestamp}")]
    Duplicate {
        building: u32,
        channel: Channel,
        timestamp: NaiveDateTime,
    },
    #[error("building {building}: timestamp {timestamp} is not on the half-hour grid")]
    Misaligned {
        building: u32,
        timestamp: NaiveDateTime,
    },
    #[error("building {building}: invalid {channel} value {value} at {timestamp}")]
    InvalidValue {
        building: u32,
        channel: Channel,
        timestamp: NaiveDateTime,
        value: f64,
    },
    #[error("building {building} has no consumption records")]
    NoConsumption { building: u32 },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("building {building} is listed in both {first} and {second}")]
    Overlap {
        building: u32,
        first: &'static str,
        second: &'static str,
    },
    #[error("building {building}: series starts at {start}, expected midnight")]
    NotMidnight { building: u32, start: NaiveDateTime },
    #[error("synthetic corpus needs at least 14 days of history, got {0}")]
    InsufficientHistory(usize),
    #[error("synthetic corpus needs at least one building")]
    NoBuildings,
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    Consumption,
    Generation,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Consumption => "consumption",
            Channel::Generation => "generation",
        })
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "consumption" | "gc" | "cl" => Ok(Channel::Consumption),
            "generation" | "gg" => Ok(Channel::Generation),
            other => Err(format!("unknown channel `{other}`")),
        }
    }
}

/// Energy metered over one half-hour interval, kWh. `timestamp` is the interval start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRecord {
    pub building_id: u32,
    pub channel: Channel,
    pub timestamp: NaiveDateTime,
    pub value: f64,
}

type ChannelMap = BTreeMap<NaiveDateTime, f64>;

/// Aggregates half-hourly records to hourly series, one per building.
///
/// Each hour's value is the sum of its two half-hour energies, which over a
/// one-hour step equals the mean power in kW. A building without generation
/// records gets zero PV.
pub fn resample_hourly(records: &[RawRecord]) -> Result<Vec<BuildingSeries>, IngestError> {
    let mut buildings: BTreeMap<u32, BTreeMap<Channel, ChannelMap>> = BTreeMap::new();
    for r in records {
        if r.timestamp.second() != 0 || r.timestamp.minute() % 30 != 0 {
            return Err(IngestError::Misaligned {
                building: r.building_id,
                timestamp: r.timestamp,
            });
        }
        if !r.value.is_finite() || r.value < 0.0 {
            return Err(IngestError::InvalidValue {
                building: r.building_id,
                channel: r.channel,
                timestamp: r.timestamp,
                value: r.value,
            });
        }
        let slots = buildings
            .entry(r.building_id)
            .or_default()
            .entry(r.channel)
            .or_default();
        if slots.insert(r.timestamp, r.value).is_some() {
            return Err(IngestError::Duplicate {
                building: r.building_id,
                channel: r.channel,
                timestamp: r.timestamp,
            });
        }
    }

    let mut out = Vec::with_capacity(buildings.len());
    for (building, channels) in buildings {
        let consumption = channels
            .get(&Channel::Consumption)
            .ok_or(IngestError::NoConsumption { building })?;
        let all = channels.values().flat_map(|m| m.keys());
        let first = floor_hour(*all.clone().min().expect("non-empty channel"));
        let last = floor_hour(*all.max().expect("non-empty channel"));
        let hours = ((last - first).num_hours() + 1) as usize;
        let load = hourly(building, Channel::Consumption, consumption, first, hours)?;
        let pv = match channels.get(&Channel::Generation) {
            Some(map) => hourly(building, Channel::Generation, map, first, hours)?,
            None => vec![0.0; hours],
        };
        out.push(BuildingSeries::from_components(building, first, load, pv)?);
    }
    Ok(out)
}

fn floor_hour(t: NaiveDateTime) -> NaiveDateTime {
    t.date().and_hms_opt(t.hour(), 0, 0).expect("valid hour")
}

fn hourly(
    building: u32,
    channel: Channel,
    map: &ChannelMap,
    first: NaiveDateTime,
    hours: usize,
) -> Result<Vec<f64>, IngestError> {
    (0..hours)
        .map(|h| {
            let t0 = first + Duration::hours(h as i64);
            let t1 = t0 + Duration::minutes(30);
            let get = |t| {
                map.get(&t).copied().ok_or(IngestError::Gap {
                    building,
                    channel,
                    timestamp: t,
                })
            };
            Ok(get(t0)? + get(t1)?)
        })
        .collect()
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    ["%d/%m/%Y", "%Y-%m-%d", "%d-%b-%y", "%d-%b-%Y"]
        .iter()
        .find_map(|f| NaiveDate::parse_from_str(s, f).ok())
}

fn parse_err(line: u64, message: impl Into<String>) -> IngestError {
    IngestError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_value(field: &str, line: u64) -> Result<f64, IngestError> {
    let field = field.trim();
    if field.is_empty() {
        return Err(parse_err(line, "empty value"));
    }
    field
        .parse()
        .map_err(|_| parse_err(line, format!("`{field}` is not a number")))
}

/// Reads the public solar-home release: one row per customer, category and
/// day with 48 half-hour columns after the date. A title line above the
/// header is skipped. GC and CL are summed into consumption; GG is generation.
pub fn read_ausgrid_wide<R: Read>(reader: R) -> Result<Vec<RawRecord>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut columns: Option<(usize, usize, usize)> = None;
    let mut seen = BTreeSet::new();
    let mut sums: BTreeMap<(u32, Channel, NaiveDateTime), f64> = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let Some((id_col, cat_col, date_col)) = columns else {
            if row.get(0).map(str::trim) == Some("Customer") {
                let find = |name: &str| row.iter().position(|c| c.trim().eq_ignore_ascii_case(name));
                let cat = find("Consumption Category")
                    .ok_or_else(|| parse_err(line, "missing `Consumption Category` column"))?;
                let date = find("date").ok_or_else(|| parse_err(line, "missing `date` column"))?;
                columns = Some((0, cat, date));
            }
            continue;
        };
        if row.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        let field = |i: usize| row.get(i).ok_or_else(|| parse_err(line, format!("missing column {i}")));
        let building: u32 = field(id_col)?
            .trim()
            .parse()
            .map_err(|_| parse_err(line, "customer id is not an integer"))?;
        let category = field(cat_col)?.trim().to_ascii_uppercase();
        let channel: Channel = category.parse().map_err(|m: String| parse_err(line, m))?;
        let date_str = field(date_col)?;
        let date = parse_date(date_str)
            .ok_or_else(|| parse_err(line, format!("unrecognised date `{date_str}`")))?;
        let midnight = date.and_hms_opt(0, 0, 0).expect("valid time");
        if !seen.insert((building, category.clone(), date)) {
            return Err(IngestError::Duplicate {
                building,
                channel,
                timestamp: midnight,
            });
        }
        for slot in 0..48 {
            let value = parse_value(field(date_col + 1 + slot)?, line)?;
            let t = midnight + Duration::minutes(30 * slot as i64);
            *sums.entry((building, channel, t)).or_insert(0.0) += value;
        }
    }
    if columns.is_none() {
        return Err(parse_err(0, "no `Customer` header row found"));
    }
    Ok(sums
        .into_iter()
        .map(|((building_id, channel, timestamp), value)| RawRecord {
            building_id,
            channel,
            timestamp,
            value,
        })
        .collect())
}

/// Reads the long layout `building_id,channel,timestamp,value`.
pub fn read_long<R: Read>(reader: R) -> Result<Vec<RawRecord>, IngestError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() < 4 {
            return Err(parse_err(line, "expected building_id,channel,timestamp,value"));
        }
        let building_id = row[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, "building_id is not an integer"))?;
        let channel = row[1].parse().map_err(|m: String| parse_err(line, m))?;
        let timestamp = parse_timestamp(&row[2])
            .ok_or_else(|| parse_err(line, format!("unrecognised timestamp `{}`", &row[2])))?;
        let value = parse_value(&row[3], line)?;
        out.push(RawRecord {
            building_id,
            channel,
            timestamp,
            value,
        });
    }
    Ok(out)
}

/// Writes hourly series as `building_id,timestamp,prosumption_kW` over `hours`
/// (clipped to each series).
pub fn write_canonical<'a, W: Write>(
    series: impl IntoIterator<Item = &'a BuildingSeries>,
    hours: Option<std::ops::Range<usize>>,
    writer: W,
) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["building_id", "timestamp", "prosumption_kW"])?;
    for s in series {
        let range = hours.clone().unwrap_or(0..s.len());
        for i in range.start.min(s.len())..range.end.min(s.len()) {
            w.write_record([
                s.building_id().to_string(),
                s.time_point(i).timestamp.format(TIMESTAMP_FORMAT).to_string(),
                s.prosumption()[i].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the canonical hourly layout written by [`write_canonical`].
pub fn read_canonical<R: Read>(reader: R) -> Result<Vec<BuildingSeries>, IngestError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut buildings: BTreeMap<u32, (NaiveDateTime, Vec<f64>)> = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() < 3 {
            return Err(parse_err(line, "expected building_id,timestamp,prosumption_kW"));
        }
        let id: u32 = row[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, "building_id is not an integer"))?;
        let t = parse_timestamp(&row[1])
            .ok_or_else(|| parse_err(line, format!("unrecognised timestamp `{}`", &row[1])))?;
        let value = parse_value(&row[2], line)?;
        let (start, values) = buildings.entry(id).or_insert((t, Vec::new()));
        let expected = *start + Duration::hours(values.len() as i64);
        if t != expected {
            return Err(IngestError::Gap {
                building: id,
                channel: Channel::Consumption,
                timestamp: expected,
            });
        }
        values.push(value);
    }
    buildings
        .into_iter()
        .map(|(id, (start, values))| Ok(BuildingSeries::from_prosumption(id, start, values)?))
        .collect()
}

/// Loads a dataset file, detecting the canonical, long or wide layout from its header.
pub fn load_dataset(path: &Path) -> Result<Vec<BuildingSeries>, IngestError> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let header = first.to_ascii_lowercase();
    let rest = std::io::Cursor::new(first.clone().into_bytes()).chain(reader);
    if header.contains("prosumption_kw") {
        read_canonical(rest)
    } else if header.contains("building_id") && header.contains("channel") {
        resample_hourly(&read_long(rest)?)
    } else {
        resample_hourly(&read_ausgrid_wide(rest)?)
    }
}

/// A sorted set of building ids, written as ranges such as `1-50,60,70-80`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IdSet {
    ranges: Vec<(u32, u32)>,
}

impl IdSet {
    /// Inclusive range `first..=last`; empty when `last < first`.
    pub fn range(first: u32, last: u32) -> Self {
        Self::from_ranges([(first, last)])
    }

    pub fn from_ranges(ranges: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut v: Vec<(u32, u32)> = ranges.into_iter().filter(|(a, b)| a <= b).collect();
        v.sort_unstable();
        let mut merged: Vec<(u32, u32)> = Vec::with_capacity(v.len());
        for (a, b) in v {
            match merged.last_mut() {
                Some(last) if a <= last.1.saturating_add(1) => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        Self { ranges: merged }
    }

    pub fn contains(&self, id: u32) -> bool {
        self.ranges.iter().any(|&(a, b)| a <= id && id <= b)
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn len(&self) -> usize {
        self.ranges.iter().map(|(a, b)| (b - a) as usize + 1).sum()
    }

    pub fn ranges(&self) -> &[(u32, u32)] {
        &self.ranges
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.ranges.iter().flat_map(|&(a, b)| a..=b)
    }

    pub fn intersects(&self, other: &IdSet) -> Option<u32> {
        self.ranges.iter().find_map(|&(a, b)| {
            other.ranges.iter().find_map(|&(c, d)| {
                let lo = a.max(c);
                (lo <= b.min(d)).then_some(lo)
            })
        })
    }
}

impl fmt::Display for IdSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .ranges
            .iter()
            .map(|&(a, b)| if a == b { a.to_string() } else { format!("{a}-{b}") })
            .collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for IdSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut ranges = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let num = |x: &str| x.trim().parse::<u32>().map_err(|_| format!("bad building id `{x}`"));
            match part.split_once('-') {
                Some((a, b)) => {
                    let (a, b) = (num(a)?, num(b)?);
                    if b < a {
                        return Err(format!("descending id range `{part}`"));
                    }
                    ranges.push((a, b));
                }
                None => {
                    let a = num(part)?;
                    ranges.push((a, a));
                }
            }
        }
        Ok(Self::from_ranges(ranges))
    }
}

impl Serialize for IdSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for IdSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Inclusive calendar date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }

    pub fn n_days(&self) -> usize {
        ((self.end - self.start).num_days() + 1).max(0) as usize
    }
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train: DateRange,
    pub val: DateRange,
    pub test: DateRange,
    pub finetune_buildings: IdSet,
    pub surrogate_val_buildings: IdSet,
    pub eval_buildings: IdSet,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: DateRange::new(ymd(2010, 7, 1), ymd(2011, 6, 30)),
            val: DateRange::new(ymd(2011, 7, 1), ymd(2012, 6, 30)),
            test: DateRange::new(ymd(2012, 7, 1), ymd(2013, 6, 30)),
            finetune_buildings: IdSet::range(1, 50),
            surrogate_val_buildings: IdSet::range(51, 100),
            eval_buildings: IdSet::range(101, 300),
        }
    }
}

impl SplitSpec {
    pub fn building_sets(&self) -> [(&'static str, &IdSet); 3] {
        [
            ("finetune_buildings", &self.finetune_buildings),
            ("surrogate_val_buildings", &self.surrogate_val_buildings),
            ("eval_buildings", &self.eval_buildings),
        ]
    }

    /// First pair of building sets sharing an id.
    pub fn overlap(&self) -> Option<IngestError> {
        let sets = self.building_sets();
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                if let Some(building) = sets[i].1.intersects(sets[j].1) {
                    return Some(IngestError::Overlap {
                        building,
                        first: sets[i].0,
                        second: sets[j].0,
                    });
                }
            }
        }
        None
    }

    /// Problems with the date ranges: each must be non-empty and the next must
    /// start the day after the previous ends.
    pub fn date_problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, r) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if r.end < r.start {
                out.push(format!("{name} range ends before it starts"));
            }
        }
        for ((a, ra), (b, rb)) in [(("train", self.train), ("val", self.val)), (("val", self.val), ("test", self.test))] {
            if ra.end.succ_opt() != Some(rb.start) {
                out.push(format!("{b} range must start the day after {a} ends"));
            }
        }
        out
    }
}

/// Which date range a view covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Range {
    Train,
    Val,
    Test,
}

/// One building's series with the usable days of each date range.
///
/// Day `d` is the day whose midnight is hour `24 d` of the series; its
/// forecast is issued at the preceding anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingSplit {
    pub series: BuildingSeries,
    pub train_days: Vec<usize>,
    pub val_days: Vec<usize>,
    pub test_days: Vec<usize>,
}

impl BuildingSplit {
    pub fn days(&self, range: Range) -> &[usize] {
        match range {
            Range::Train => &self.train_days,
            Range::Val => &self.val_days,
            Range::Test => &self.test_days,
        }
    }

    pub fn building_id(&self) -> u32 {
        self.series.building_id()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PartitionedDataset {
    pub finetune: Vec<BuildingSplit>,
    pub surrogate_val: Vec<BuildingSplit>,
    pub eval: Vec<BuildingSplit>,
    /// Buildings outside every set.
    pub omitted: Vec<u32>,
}

/// Assigns buildings to the fine-tune, surrogate-validation and evaluation
/// sets and lists each building's usable days per date range.
pub fn split(
    series: Vec<BuildingSeries>,
    spec: &SplitSpec,
    horizon: &HorizonSpec,
) -> Result<PartitionedDataset, IngestError> {
    if let Some(e) = spec.overlap() {
        return Err(e);
    }
    let mut out = PartitionedDataset::default();
    for s in series {
        let id = s.building_id();
        let target = if spec.finetune_buildings.contains(id) {
            &mut out.finetune
        } else if spec.surrogate_val_buildings.contains(id) {
            &mut out.surrogate_val
        } else if spec.eval_buildings.contains(id) {
            &mut out.eval
        } else {
            out.omitted.push(id);
            continue;
        };
        if s.start().time() != chrono::NaiveTime::MIN {
            return Err(IngestError::NotMidnight {
                building: id,
                start: s.start(),
            });
        }
        let days_in = |r: &DateRange| -> Vec<usize> {
            (0..=s.n_days())
                .filter(|&d| {
                    let date = s.start().date() + Duration::days(d as i64);
                    r.contains(date) && horizon.day_is_usable(d, s.len())
                })
                .collect()
        };
        let (train_days, val_days, test_days) = (days_in(&spec.train), days_in(&spec.val), days_in(&spec.test));
        target.push(BuildingSplit {
            series: s,
            train_days,
            val_days,
            test_days,
        });
    }
    Ok(out)
}

/// Shape family of a synthetic corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticStyle {
    /// Residential homes with rooftop PV sharing one weather stream.
    #[default]
    Residential,
    /// Broader mix of load shapes and independent weather; used for pretraining.
    Generic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_buildings: usize,
    pub n_days: usize,
    pub seed: u64,
    pub style: SyntheticStyle,
    /// Same PV capacity (kWp) for every building instead of a random one.
    pub pv_capacity: Option<f64>,
    pub first_id: u32,
    pub start: NaiveDate,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_buildings: 300,
            n_days: 1096,
            seed: 7,
            style: SyntheticStyle::Residential,
            pv_capacity: None,
            first_id: 1,
            start: default_epoch().date(),
        }
    }
}

/// Residential corpus with default options.
pub fn generate_synthetic(
    n_buildings: usize,
    n_days: usize,
    seed: u64,
) -> Result<Vec<BuildingSeries>, IngestError> {
    generate_synthetic_with(&SyntheticSpec {
        n_buildings,
        n_days,
        seed,
        ..SyntheticSpec::default()
    })
}

/// Hourly load and PV from a daily sinusoidal profile with weekly modulation,
/// a solar bell curve scaled by PV capacity, cloud cover and AR(1) noise.
///
/// Each building draws from its own random stream, so a building's series does
/// not depend on how many buildings are generated.
pub fn generate_synthetic_with(spec: &SyntheticSpec) -> Result<Vec<BuildingSeries>, IngestError> {
    if spec.n_days < 14 {
        return Err(IngestError::InsufficientHistory(spec.n_days));
    }
    if spec.n_buildings == 0 {
        return Err(IngestError::NoBuildings);
    }
    let shared_weather = match spec.style {
        SyntheticStyle::Residential => Some(cloud_factors(&mut stream(spec.seed, u64::MAX), spec.n_days, 0.6)),
        SyntheticStyle::Generic => None,
    };
    let start = spec.start.and_hms_opt(0, 0, 0).expect("valid time");
    (0..spec.n_buildings)
        .map(|i| {
            let id = spec.first_id + i as u32;
            let mut rng = stream(spec.seed, id as u64);
            let profile = Profile::draw(spec.style, spec.pv_capacity, &mut rng);
            let clouds = match &shared_weather {
                Some(c) => c.clone(),
                None => cloud_factors(&mut rng, spec.n_days, 0.4),
            };
            let (load, pv) = profile.render(spec.start, spec.n_days, &clouds, &mut rng);
            Ok(BuildingSeries::from_components(id, start, load, pv)?)
        })
        .collect()
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Daily clear-sky fraction in [0.25, 1] following a persistent latent process.
fn cloud_factors(rng: &mut ChaCha8Rng, n_days: usize, persistence: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut z = 0.0;
    (0..n_days)
        .map(|_| {
            z = persistence * z + (1.0 - persistence * persistence).sqrt() * normal.sample(rng);
            0.25 + 0.75 / (1.0 + (-(1.2 + 1.5 * z)).exp())
        })
        .collect()
}

struct Profile {
    base: f64,
    daily_amp: f64,
    daily_peak: f64,
    half_amp: f64,
    half_peak: f64,
    weekend: f64,
    day_sigma: f64,
    noise_sigma: f64,
    noise_phi: f64,
    pv_capacity: f64,
    solar_noon: f64,
}

impl Profile {
    fn draw(style: SyntheticStyle, pv_override: Option<f64>, rng: &mut ChaCha8Rng) -> Self {
        let mut p = match style {
            SyntheticStyle::Residential => Profile {
                base: rng.gen_range(0.25..0.6),
                daily_amp: rng.gen_range(0.4..1.2),
                daily_peak: rng.gen_range(17.5..20.0),
                half_amp: rng.gen_range(0.1..0.5),
                half_peak: rng.gen_range(7.0..9.0),
                weekend: rng.gen_range(1.0..1.3),
                day_sigma: rng.gen_range(0.05..0.15),
                noise_sigma: rng.gen_range(0.08..0.2),
                noise_phi: 0.7,
                pv_capacity: rng.gen_range(1.0..5.0),
                solar_noon: 12.0,
            },
            SyntheticStyle::Generic => Profile {
                base: rng.gen_range(0.1..1.5),
                daily_amp: rng.gen_range(0.1..2.0),
                daily_peak: rng.gen_range(0.0..24.0),
                half_amp: rng.gen_range(0.0..0.8),
                half_peak: rng.gen_range(0.0..12.0),
                weekend: rng.gen_range(0.7..1.4),
                day_sigma: rng.gen_range(0.02..0.25),
                noise_sigma: rng.gen_range(0.05..0.3),
                noise_phi: rng.gen_range(0.3..0.9),
                pv_capacity: if rng.gen_bool(0.7) { rng.gen_range(0.0..6.0) } else { 0.0 },
                solar_noon: rng.gen_range(11.5..13.0),
            },
        };
        if let Some(c) = pv_override {
            p.pv_capacity = c;
        }
        p
    }

    fn render(&self, start: NaiveDate, n_days: usize, clouds: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        use std::f64::consts::PI;
        let normal = Normal::new(0.0, 1.0).expect("valid normal");
        let hours = n_days * HOURS_PER_DAY;
        let mut load = Vec::with_capacity(hours);
        let mut pv = Vec::with_capacity(hours);
        let mut noise = 0.0;
        let mut level = 0.0;
        for d in 0..n_days {
            let date = start + Duration::days(d as i64);
            let weekly = if matches!(date.weekday(), Weekday::Sat | Weekday::Sun) {
                self.weekend
            } else {
                1.0
            };
            level = 0.8 * level + self.day_sigma * normal.sample(rng);
            // Southern-hemisphere seasons: longest days around 21 December.
            let season = (2.0 * PI * (date.ordinal() as f64 - 355.0) / 365.25).cos();
            let day_length = 12.0 + 2.0 * season;
            let peak = 0.75 + 0.2 * season;
            for h in 0..HOURS_PER_DAY {
                let t = h as f64 + 0.5;
                let swing = self.daily_amp * 0.5 * (1.0 + (2.0 * PI * (t - self.daily_peak) / 24.0).cos())
                    + self.half_amp * 0.5 * (1.0 + (4.0 * PI * (t - self.half_peak) / 24.0).cos());
                noise = self.noise_phi * noise + self.noise_sigma * normal.sample(rng);
                let l = (self.base + swing * weekly) * (1.0 + level) + noise;
                load.push(l.clamp(0.0, 8.0));

                let x = (t - (self.solar_noon - day_length / 2.0)) / day_length;
                let bell = if (0.0..=1.0).contains(&x) { (PI * x).sin().powf(1.3) } else { 0.0 };
                let flicker = (1.0 + 0.1 * normal.sample(rng)).clamp(0.6, 1.2);
                let g = self.pv_capacity * peak * clouds[d] * bell * flicker;
                pv.push(g.clamp(0.0, 8.0));
            }
        }
        (load, pv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(h: u32, m: u32) -> NaiveDateTime {
        ymd(2010, 7, 1).and_hms_opt(h, m, 0).unwrap()
    }

    fn rec(channel: Channel, t: NaiveDateTime, value: f64) -> RawRecord {
        RawRecord {
            building_id: 1,
            channel,
            timestamp: t,
            value,
        }
    }

    #[test]
    fn resamples_half_hours() {
        let records = vec![
            rec(Channel::Consumption, at(0, 0), 0.4),
            rec(Channel::Consumption, at(0, 30), 0.6),
            rec(Channel::Generation, at(0, 0), 0.1),
            rec(Channel::Generation, at(0, 30), 0.1),
        ];
        let s = &resample_hourly(&records).unwrap()[0];
        assert!((s.load().unwrap()[0] - 1.0).abs() < 1e-12);
        assert!((s.pv().unwrap()[0] - 0.2).abs() < 1e-12);
        assert!((s.prosumption()[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn gaps_and_duplicates_are_errors() {
        let records = vec![
            rec(Channel::Consumption, at(0, 0), 0.4),
            rec(Channel::Consumption, at(0, 30), 0.6),
            rec(Channel::Consumption, at(1, 30), 0.6),
        ];
        assert!(matches!(
            resample_hourly(&records),
            Err(IngestError::Gap { timestamp, .. }) if timestamp == at(1, 0)
        ));
        let records = vec![
            rec(Channel::Consumption, at(0, 0), 0.4),
            rec(Channel::Consumption, at(0, 0), 0.4),
        ];
        assert!(matches!(resample_hourly(&records), Err(IngestError::Duplicate { .. })));
    }

    #[test]
    fn id_set_parsing() {
        let s: IdSet = "1-3, 7,5-6".parse().unwrap();
        assert_eq!(s.ranges(), &[(1, 3), (5, 7)]);
        assert_eq!(s.to_string(), "1-3,5-7");
        assert_eq!(s.len(), 6);
        assert!("3-1".parse::<IdSet>().is_err());
        assert!("".parse::<IdSet>().unwrap().is_empty());
    }

    #[test]
    fn default_split_dates_are_contiguous() {
        assert!(SplitSpec::default().date_problems().is_empty());
        assert!(SplitSpec::default().overlap().is_none());
    }
}
