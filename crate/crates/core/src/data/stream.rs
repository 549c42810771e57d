use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column layout of a stream file:
/// `timestamp, <channels...>, <activity>, <person>[, <attribute>]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamSchema {
    pub delimiter: u8,
    pub activity_column: String,
    pub person_column: String,
    pub attribute_column: Option<String>,
    /// Keep only these channels, in this order. `None` keeps every channel.
    pub channels: Option<Vec<String>>,
    pub missing_token: String,
}

impl Default for StreamSchema {
    fn default() -> Self {
        Self {
            delimiter: b',',
            activity_column: "activity_id".into(),
            person_column: "person_id".into(),
            attribute_column: None,
            channels: None,
            missing_token: "NaN".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorStream {
    pub stream_id: usize,
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
    /// One series per channel, all of equal length.
    pub channels: Vec<Vec<f32>>,
    pub activity: Vec<u32>,
    pub person: Vec<u32>,
    pub attribute: Option<Vec<u32>>,
}

impl SensorStream {
    pub fn len(&self) -> usize {
        self.activity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activity.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let aligned = self.person.len() == n
            && self.channels.iter().all(|c| c.len() == n)
            && self.attribute.as_ref().is_none_or(|a| a.len() == n)
            && self.channel_names.len() == self.channels.len();
        if !aligned {
            return Err(Error::shape(
                "SensorStream",
                "channels and labels are not aligned",
            ));
        }
        if self.sample_rate_hz.is_nan() || self.sample_rate_hz <= 0.0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LoadReport {
    pub stream: SensorStream,
    /// Rows skipped because they held a missing value.
    pub dropped_rows: usize,
}

/// Reads a delimiter-separated stream file.
pub fn load_stream(
    path: &Path,
    schema: &StreamSchema,
    sample_rate_hz: f64,
    stream_id: usize,
) -> Result<LoadReport> {
    let schema_err = |detail: String| Error::Schema {
        path: path.to_path_buf(),
        detail,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header == [""] {
        return Err(schema_err("empty file".into()));
    }
    let label_cols: Vec<&str> = [
        Some(schema.activity_column.as_str()),
        Some(schema.person_column.as_str()),
        schema.attribute_column.as_deref(),
    ]
    .into_iter()
    .flatten()
    .collect();
    if header.len() < 2 + label_cols.len() {
        return Err(schema_err(format!(
            "need a timestamp, at least one channel and {} label columns, found {} columns",
            label_cols.len(),
            header.len()
        )));
    }
    let n_ch = header.len() - 1 - label_cols.len();
    let tail: Vec<&str> = header[1 + n_ch..].iter().map(String::as_str).collect();
    if tail != label_cols {
        return Err(schema_err(format!(
            "expected trailing label columns {label_cols:?}, found {tail:?}"
        )));
    }
    let all_names = &header[1..1 + n_ch];
    let keep: Vec<usize> = match &schema.channels {
        None => (0..n_ch).collect(),
        Some(names) => names
            .iter()
            .map(|n| {
                all_names
                    .iter()
                    .position(|h| h == n)
                    .ok_or_else(|| schema_err(format!("unknown channel column '{n}'")))
            })
            .collect::<Result<_>>()?,
    };

    let mut channels = vec![Vec::new(); keep.len()];
    let mut activity = Vec::new();
    let mut person = Vec::new();
    let mut attribute = schema.attribute_column.as_ref().map(|_| Vec::new());
    let mut dropped = 0;
    let mut row_values = Vec::with_capacity(n_ch);
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let row = line + 2;
        if record.len() != header.len() {
            return Err(schema_err(format!(
                "row {row} has {} fields, header has {}",
                record.len(),
                header.len()
            )));
        }
        if record.iter().any(|f| f == schema.missing_token) {
            dropped += 1;
            continue;
        }
        row_values.clear();
        for field in record.iter().skip(1).take(n_ch) {
            let v: f32 = field
                .parse()
                .map_err(|_| schema_err(format!("row {row}: '{field}' is not a number")))?;
            row_values.push(v);
        }
        if row_values.iter().any(|v| !v.is_finite()) {
            dropped += 1;
            continue;
        }
        let label = |i: usize| -> Result<u32> {
            let f = &record[1 + n_ch + i];
            parse_class_id(f)
                .ok_or_else(|| schema_err(format!("row {row}: label '{f}' is not a class id")))
        };
        activity.push(label(0)?);
        person.push(label(1)?);
        if let Some(attr) = attribute.as_mut() {
            attr.push(label(2)?);
        }
        for (dst, &k) in channels.iter_mut().zip(&keep) {
            dst.push(row_values[k]);
        }
    }
    if activity.is_empty() && dropped == 0 {
        return Err(schema_err("no data rows".into()));
    }
    let stream = SensorStream {
        stream_id,
        sample_rate_hz,
        channel_names: keep.iter().map(|&k| all_names[k].clone()).collect(),
        channels,
        activity,
        person,
        attribute,
    };
    stream.validate()?;
    Ok(LoadReport {
        stream,
        dropped_rows: dropped,
    })
}

/// Accepts `3` as well as `3.0`.
fn parse_class_id(field: &str) -> Option<u32> {
    field.parse::<u32>().ok().or_else(|| {
        let v: f64 = field.parse().ok()?;
        (v.fract() == 0.0 && (0.0..=u32::MAX as f64).contains(&v)).then_some(v as u32)
    })
}

/// Writes a stream in the format read by [`load_stream`]. Timestamps are
/// sample index divided by the sample rate.
pub fn write_stream(path: &Path, stream: &SensorStream, schema: &StreamSchema) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .delimiter(schema.delimiter)
        .from_writer(file);
    let mut header = vec!["timestamp".to_string()];
    header.extend(stream.channel_names.iter().cloned());
    header.push(schema.activity_column.clone());
    header.push(schema.person_column.clone());
    if let (Some(col), Some(_)) = (&schema.attribute_column, &stream.attribute) {
        header.push(col.clone());
    }
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for i in 0..stream.len() {
        rec.clear();
        rec.push(format!("{}", i as f64 / stream.sample_rate_hz));
        rec.extend(stream.channels.iter().map(|c| format!("{}", c[i])));
        rec.push(stream.activity[i].to_string());
        rec.push(stream.person[i].to_string());
        if let (Some(_), Some(a)) = (&schema.attribute_column, &stream.attribute) {
            rec.push(a[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Keeps every `factor`-th sample starting at 0.
pub fn downsample(stream: &SensorStream, factor: usize) -> Result<SensorStream> {
    if factor == 0 {
        return Err(Error::Config("downsample factor must be at least 1".into()));
    }
    let pick = |v: &Vec<u32>| v.iter().step_by(factor).copied().collect::<Vec<_>>();
    Ok(SensorStream {
        stream_id: stream.stream_id,
        sample_rate_hz: stream.sample_rate_hz / factor as f64,
        channel_names: stream.channel_names.clone(),
        channels: stream
            .channels
            .iter()
            .map(|c| c.iter().step_by(factor).copied().collect())
            .collect(),
        activity: pick(&stream.activity),
        person: pick(&stream.person),
        attribute: stream.attribute.as_ref().map(pick),
    })
}

/// Relabels activities, e.g. collapsing several transition classes into one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivityMerge {
    pub from: Vec<u32>,
    pub into: u32,
}

pub fn merge_activities(stream: &mut SensorStream, merges: &[ActivityMerge]) {
    for a in &mut stream.activity {
        if let Some(m) = merges.iter().find(|m| m.from.contains(a)) {
            *a = m.into;
        }
    }
}

/// Declarative description of a dataset on disk and how to window it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub name: String,
    pub paths: Vec<PathBuf>,
    pub sample_rate_hz: f64,
    pub downsample: usize,
    pub window_seconds: f64,
    pub step_seconds: f64,
    pub channels: Option<Vec<String>>,
    pub delimiter: char,
    pub activity_column: String,
    pub person_column: String,
    pub attribute_column: Option<String>,
    pub activity_merges: Vec<ActivityMerge>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            paths: Vec::new(),
            sample_rate_hz: 50.0,
            downsample: 1,
            window_seconds: 5.0,
            step_seconds: 2.5,
            channels: None,
            delimiter: ',',
            activity_column: "activity_id".into(),
            person_column: "person_id".into(),
            attribute_column: None,
            activity_merges: Vec::new(),
        }
    }
}

impl DatasetConfig {
    /// Windowing presets for the public benchmark datasets. Paths are left empty.
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self {
            name: name.to_string(),
            ..Self::default()
        };
        Ok(match name {
            "pamap2" => Self {
                sample_rate_hz: 100.0,
                downsample: 3,
                window_seconds: 5.12,
                step_seconds: 1.0,
                ..base
            },
            "mhealth" => Self {
                sample_rate_hz: 50.0,
                window_seconds: 5.0,
                step_seconds: 2.5,
                ..base
            },
            "sbhar" => Self {
                sample_rate_hz: 50.0,
                window_seconds: 2.56,
                step_seconds: 1.28,
                activity_merges: vec![ActivityMerge {
                    from: (7..=12).collect(),
                    into: 7,
                }],
                ..base
            },
            "wisdm" => Self {
                sample_rate_hz: 20.0,
                window_seconds: 10.0,
                step_seconds: 10.0,
                ..base
            },
            other => return Err(Error::Config(format!("unknown dataset preset '{other}'"))),
        })
    }

    pub fn schema(&self) -> Result<StreamSchema> {
        let delimiter = u8::try_from(self.delimiter)
            .map_err(|_| Error::Config("delimiter must be a single-byte character".into()))?;
        Ok(StreamSchema {
            delimiter,
            activity_column: self.activity_column.clone(),
            person_column: self.person_column.clone(),
            attribute_column: self.attribute_column.clone(),
            channels: self.channels.clone(),
            missing_token: "NaN".into(),
        })
    }

    /// Loads, relabels and downsamples every configured stream file.
    pub fn load(&self, base_dir: &Path) -> Result<Vec<LoadReport>> {
        if self.paths.is_empty() {
            return Err(Error::Config(format!(
                "dataset '{}' lists no files",
                self.name
            )));
        }
        let schema = self.schema()?;
        self.paths
            .iter()
            .enumerate()
            .map(|(id, p)| {
                let path = if p.is_absolute() {
                    p.clone()
                } else {
                    base_dir.join(p)
                };
                let mut report = load_stream(&path, &schema, self.sample_rate_hz, id)?;
                merge_activities(&mut report.stream, &self.activity_merges);
                report.stream = downsample(&report.stream, self.downsample)?;
                Ok(report)
            })
            .collect()
    }
}
