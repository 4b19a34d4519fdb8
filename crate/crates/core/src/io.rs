//! File formats: profile and metric-instance JSON, CSV and JSON writers.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facility::MetricInstance;
use crate::types::ValuationProfile;

/// On-disk profile: `truth` defaults to `reported`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileFile {
    pub m: usize,
    pub reported: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<Vec<f64>>>,
}

impl ProfileFile {
    pub fn into_profile(self) -> Result<ValuationProfile> {
        let truth = self.truth.unwrap_or_else(|| self.reported.clone());
        ValuationProfile::new(self.m, self.reported, truth)
    }
}

impl From<&ValuationProfile> for ProfileFile {
    fn from(p: &ValuationProfile) -> Self {
        Self {
            m: p.m(),
            reported: p.reported().to_vec(),
            truth: (!p.liar_positions().is_empty()).then(|| p.truth().to_vec()),
        }
    }
}

pub fn parse_profile(text: &str) -> Result<ValuationProfile> {
    serde_json::from_str::<ProfileFile>(text)?.into_profile()
}

pub fn load_profile(path: &Path) -> Result<ValuationProfile> {
    parse_profile(&read(path)?)
}

pub fn profile_to_json(profile: &ValuationProfile) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ProfileFile::from(profile))?)
}

/// Distances as a full matrix or as coordinates on the line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistSpec {
    Matrix(Vec<Vec<f64>>),
    Line { line: Vec<f64> },
}

/// On-disk metric instance. Agents name points by label; labels default to
/// `0..points`. `agents_reported` defaults to `agents_true`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<i64>>,
    pub dist: DistSpec,
    pub agents_true: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agents_reported: Option<Vec<i64>>,
    pub k: usize,
}

impl InstanceFile {
    pub fn into_instance(self) -> Result<MetricInstance> {
        let dist = match self.dist {
            DistSpec::Matrix(d) => d,
            DistSpec::Line { line } => line.iter().map(|a| line.iter().map(|b| (a - b).abs()).collect()).collect(),
        };
        let labels = self.points.unwrap_or_else(|| (0..dist.len() as i64).collect());
        let index = |label: &i64| {
            labels
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| Error::InvalidInstance(format!("agent at unknown point {label}")))
        };
        let truth = self.agents_true.iter().map(index).collect::<Result<Vec<_>>>()?;
        let reported = match &self.agents_reported {
            Some(r) => r.iter().map(index).collect::<Result<Vec<_>>>()?,
            None => truth.clone(),
        };
        let mut sorted = labels.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInstance("duplicate point labels".into()));
        }
        MetricInstance::with_labels(labels, dist, truth, reported, self.k)
    }
}

impl From<&MetricInstance> for InstanceFile {
    fn from(inst: &MetricInstance) -> Self {
        let labels = inst.labels();
        let to_labels = |v: &[usize]| v.iter().map(|&a| labels[a]).collect::<Vec<_>>();
        let identity = labels.iter().enumerate().all(|(i, &l)| l == i as i64);
        Self {
            points: (!identity).then(|| labels.to_vec()),
            dist: DistSpec::Matrix(inst.dist_matrix().to_vec()),
            agents_true: to_labels(inst.agents_true()),
            agents_reported: (!inst.liars().is_empty()).then(|| to_labels(inst.agents_reported())),
            k: inst.k(),
        }
    }
}

pub fn parse_instance(text: &str) -> Result<MetricInstance> {
    serde_json::from_str::<InstanceFile>(text)?.into_instance()
}

pub fn load_instance(path: &Path) -> Result<MetricInstance> {
    parse_instance(&read(path)?)
}

pub fn instance_to_json(inst: &MetricInstance) -> Result<String> {
    Ok(serde_json::to_string_pretty(&InstanceFile::from(inst))?)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Header plus one line per record.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
}
