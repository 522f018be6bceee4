//! Clustered right-censored survival data.
//!
//! Observations are stored flattened in cluster-major order: cluster 0's
//! members in input order, then cluster 1's, and so on. Every per-observation
//! vector in the crate (residuals, GR weights, xi rows) uses this order.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{AftError, Result};

/// One member of a cluster: log observed time, event flag and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub log_time: f64,
    pub event: bool,
    pub covariates: Vec<f64>,
}

impl Observation {
    pub fn new(log_time: f64, event: bool, covariates: Vec<f64>) -> Self {
        Self {
            log_time,
            event,
            covariates,
        }
    }
}

/// Unvalidated input handed to [`validate_dataset`].
#[derive(Debug, Clone, Default)]
pub struct RawDataset {
    pub clusters: Vec<Vec<Observation>>,
    /// External cluster labels; dense `"1".."N"` when empty.
    pub cluster_ids: Vec<String>,
    /// Covariate names; `"x1".."xp"` when empty.
    pub covariate_names: Vec<String>,
}

impl RawDataset {
    pub fn from_clusters(clusters: Vec<Vec<Observation>>) -> Self {
        Self {
            clusters,
            ..Self::default()
        }
    }
}

/// Validated clustered dataset. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredDataset {
    p: usize,
    log_time: Vec<f64>,
    event: Vec<bool>,
    design: Vec<f64>,
    offsets: Vec<usize>,
    cluster_of: Vec<usize>,
    cluster_ids: Vec<String>,
    covariate_names: Vec<String>,
}

/// Checks every dataset invariant and builds the flattened representation.
pub fn validate_dataset(raw: RawDataset) -> Result<ClusteredDataset> {
    let n = raw.clusters.len();
    if n < 2 {
        return Err(AftError::TooFewClusters(n));
    }
    let p = raw
        .clusters
        .iter()
        .find_map(|c| c.first())
        .map(|o| o.covariates.len())
        .unwrap_or(0);
    if p == 0 {
        return Err(AftError::InvalidArgument(
            "observations need at least one covariate".into(),
        ));
    }
    let m: usize = raw.clusters.iter().map(Vec::len).sum();
    let mut log_time = Vec::with_capacity(m);
    let mut event = Vec::with_capacity(m);
    let mut design = Vec::with_capacity(m * p);
    let mut offsets = Vec::with_capacity(n + 1);
    let mut cluster_of = Vec::with_capacity(m);
    offsets.push(0);
    for (i, cluster) in raw.clusters.iter().enumerate() {
        if cluster.is_empty() {
            return Err(AftError::EmptyCluster { cluster: i + 1 });
        }
        for (k, obs) in cluster.iter().enumerate() {
            let (ci, mk) = (i + 1, k + 1);
            if obs.covariates.len() != p {
                return Err(AftError::DimensionMismatch {
                    cluster: ci,
                    member: mk,
                    expected: p,
                    found: obs.covariates.len(),
                });
            }
            if !obs.log_time.is_finite() {
                return Err(AftError::NonFinite {
                    cluster: ci,
                    member: mk,
                    field: "log_time",
                });
            }
            if obs.covariates.iter().any(|v| !v.is_finite()) {
                return Err(AftError::NonFinite {
                    cluster: ci,
                    member: mk,
                    field: "covariate",
                });
            }
            log_time.push(obs.log_time);
            event.push(obs.event);
            design.extend_from_slice(&obs.covariates);
            cluster_of.push(i);
        }
        offsets.push(log_time.len());
    }
    if !event.iter().any(|&d| d) {
        return Err(AftError::ZeroEvents);
    }
    let cluster_ids = if raw.cluster_ids.is_empty() {
        (1..=n).map(|i| i.to_string()).collect()
    } else if raw.cluster_ids.len() == n {
        raw.cluster_ids
    } else {
        return Err(AftError::LengthMismatch {
            expected: n,
            found: raw.cluster_ids.len(),
        });
    };
    let covariate_names = if raw.covariate_names.is_empty() {
        (1..=p).map(|j| format!("x{j}")).collect()
    } else if raw.covariate_names.len() == p {
        raw.covariate_names
    } else {
        return Err(AftError::LengthMismatch {
            expected: p,
            found: raw.covariate_names.len(),
        });
    };
    Ok(ClusteredDataset {
        p,
        log_time,
        event,
        design,
        offsets,
        cluster_of,
        cluster_ids,
        covariate_names,
    })
}

impl ClusteredDataset {
    pub fn from_clusters(clusters: Vec<Vec<Observation>>) -> Result<Self> {
        validate_dataset(RawDataset::from_clusters(clusters))
    }

    /// Covariate dimension `p`.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Cluster count `N`.
    pub fn n_clusters(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Total observation count `M`.
    pub fn n_obs(&self) -> usize {
        self.log_time.len()
    }

    pub fn log_times(&self) -> &[f64] {
        &self.log_time
    }

    pub fn events(&self) -> &[bool] {
        &self.event
    }

    pub fn n_events(&self) -> usize {
        self.event.iter().filter(|&&d| d).count()
    }

    /// Row-major `M × p` covariate block.
    pub fn design(&self) -> &[f64] {
        &self.design
    }

    #[inline]
    pub fn covariates(&self, obs: usize) -> &[f64] {
        &self.design[obs * self.p..(obs + 1) * self.p]
    }

    /// Flattened index range of cluster `i`.
    pub fn cluster_range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn cluster_of(&self, obs: usize) -> usize {
        self.cluster_of[obs]
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn cluster_ids(&self) -> &[String] {
        &self.cluster_ids
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn to_raw(&self) -> RawDataset {
        let clusters = (0..self.n_clusters())
            .map(|i| {
                self.cluster_range(i)
                    .map(|a| Observation::new(self.log_time[a], self.event[a], self.covariates(a).to_vec()))
                    .collect()
            })
            .collect();
        RawDataset {
            clusters,
            cluster_ids: self.cluster_ids.clone(),
            covariate_names: self.covariate_names.clone(),
        }
    }

    /// Cluster-reordered copy: cluster `order[i]` of `self` becomes cluster `i`.
    pub fn permute_clusters(&self, order: &[usize]) -> Result<Self> {
        let raw = self.to_raw();
        if order.len() != raw.clusters.len() {
            return Err(AftError::LengthMismatch {
                expected: raw.clusters.len(),
                found: order.len(),
            });
        }
        validate_dataset(RawDataset {
            clusters: order.iter().map(|&i| raw.clusters[i].clone()).collect(),
            cluster_ids: order.iter().map(|&i| raw.cluster_ids[i].clone()).collect(),
            covariate_names: raw.covariate_names,
        })
    }
}

/// Regression coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters(DVector<f64>);

impl Parameters {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::from_vector(DVector::from_vec(values))
    }

    pub fn from_vector(v: DVector<f64>) -> Result<Self> {
        if v.iter().any(|b| !b.is_finite()) {
            return Err(AftError::Numerical("non-finite coefficient".into()));
        }
        Ok(Self(v))
    }

    pub fn zeros(p: usize) -> Self {
        Self(DVector::zeros(p))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }
}

/// Residuals `e = log T̃ − Xᵀβ` in flattening order.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub e: Vec<f64>,
    pub beta_used: Parameters,
}

pub fn compute_residuals(data: &ClusteredDataset, beta: &Parameters) -> Result<Residuals> {
    if beta.len() != data.p() {
        return Err(AftError::LengthMismatch {
            expected: data.p(),
            found: beta.len(),
        });
    }
    Ok(Residuals {
        e: residual_vector(data, beta.as_slice()),
        beta_used: beta.clone(),
    })
}

/// Unchecked residual computation for hot loops.
pub(crate) fn residual_vector(data: &ClusteredDataset, beta: &[f64]) -> Vec<f64> {
    data.log_times()
        .iter()
        .enumerate()
        .map(|(a, &y)| {
            let fit: f64 = data.covariates(a).iter().zip(beta).map(|(x, b)| x * b).sum();
            y - fit
        })
        .collect()
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub cluster_col: String,
    /// Raw (positive) time; log-transformed on read.
    pub time_col: String,
    pub event_col: String,
    pub covariates: Vec<String>,
    pub delimiter: u8,
}

impl CsvSchema {
    pub fn new(
        cluster_col: impl Into<String>,
        time_col: impl Into<String>,
        event_col: impl Into<String>,
        covariates: Vec<String>,
    ) -> Self {
        Self {
            cluster_col: cluster_col.into(),
            time_col: time_col.into(),
            event_col: event_col.into(),
            covariates,
            delimiter: b',',
        }
    }
}

pub fn read_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<ClusteredDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| AftError::io(path, e))?;
    read_csv_from(file, schema)
}

/// Groups rows by cluster id in first-appearance order.
pub fn read_csv_from<R: Read>(reader: R, schema: &CsvSchema) -> Result<ClusteredDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| AftError::MissingColumn(name.to_string()))
    };
    let cluster_idx = column(&schema.cluster_col)?;
    let time_idx = column(&schema.time_col)?;
    let event_idx = column(&schema.event_col)?;
    let cov_idx = schema
        .covariates
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;

    let mut index_of: HashMap<String, usize> = HashMap::new();
    let mut ids: Vec<String> = Vec::new();
    let mut clusters: Vec<Vec<Observation>> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let cell = |idx: usize, name: &str| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            raw.parse::<f64>().map_err(|_| AftError::Unparseable {
                line,
                column: name.to_string(),
                cell: raw.to_string(),
            })
        };
        let time = cell(time_idx, &schema.time_col)?;
        if time.is_nan() || time <= 0.0 {
            return Err(AftError::NonpositiveTime { line, value: time });
        }
        let event_raw = cell(event_idx, &schema.event_col)?;
        let event = if event_raw == 1.0 {
            true
        } else if event_raw == 0.0 {
            false
        } else {
            return Err(AftError::Unparseable {
                line,
                column: schema.event_col.clone(),
                cell: record.get(event_idx).unwrap_or("").to_string(),
            });
        };
        let covariates = cov_idx
            .iter()
            .zip(&schema.covariates)
            .map(|(&idx, name)| cell(idx, name))
            .collect::<Result<Vec<_>>>()?;
        let id = record.get(cluster_idx).unwrap_or("").to_string();
        let slot = *index_of.entry(id.clone()).or_insert_with(|| {
            ids.push(id);
            clusters.push(Vec::new());
            clusters.len() - 1
        });
        clusters[slot].push(Observation::new(time.ln(), event, covariates));
    }
    validate_dataset(RawDataset {
        clusters,
        cluster_ids: ids,
        covariate_names: schema.covariates.clone(),
    })
}

pub fn write_csv(data: &ClusteredDataset, path: impl AsRef<Path>, schema: &CsvSchema) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| AftError::io(path, e))?;
    write_csv_to(data, file, schema)
}

/// Writes the raw time scale (`exp(log_time)`) so the output re-reads with
/// the same schema.
pub fn write_csv_to<W: Write>(data: &ClusteredDataset, writer: W, schema: &CsvSchema) -> Result<()> {
    if schema.covariates.len() != data.p() {
        return Err(AftError::LengthMismatch {
            expected: data.p(),
            found: schema.covariates.len(),
        });
    }
    let mut wtr = csv::WriterBuilder::new()
        .delimiter(schema.delimiter)
        .from_writer(writer);
    let mut header = vec![
        schema.cluster_col.clone(),
        schema.time_col.clone(),
        schema.event_col.clone(),
    ];
    header.extend(schema.covariates.iter().cloned());
    wtr.write_record(&header)?;
    for a in 0..data.n_obs() {
        let mut row = vec![
            data.cluster_ids()[data.cluster_of(a)].clone(),
            format!("{:e}", data.log_times()[a].exp()),
            if data.events()[a] { "1" } else { "0" }.to_string(),
        ];
        row.extend(data.covariates(a).iter().map(|v| format!("{v:e}")));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| AftError::io("<csv writer>", e))?;
    Ok(())
}
