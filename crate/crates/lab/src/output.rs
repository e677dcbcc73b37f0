use std::fs::{self, File};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tsc_core::train::{EpisodeLog, Evaluation};

use crate::error::LabError;

pub const TRAIN_LOG_SCHEMA: &str = "train_log/1";
pub const METRICS_SCHEMA: &str = "metrics/1";
pub const ABLATION_SCHEMA: &str = "ablation/1";

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), LabError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| LabError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub episode: u64,
    pub seed: u64,
    pub variant: String,
    pub mean_reward: f64,
    pub att: f64,
    pub adt: f64,
    pub meta_loss: f64,
    pub sub_loss: f64,
    pub grad_norm: f64,
    pub mean_goal_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub rolled_back: bool,
}

impl From<&EpisodeLog> for TrainRow {
    fn from(l: &EpisodeLog) -> TrainRow {
        TrainRow {
            episode: l.episode,
            seed: l.seed,
            variant: l.variant.name().into(),
            mean_reward: l.mean_reward,
            att: l.att,
            adt: l.adt,
            meta_loss: l.meta_loss,
            sub_loss: l.sub_loss,
            grad_norm: l.grad_norm,
            mean_goal_reward: l.mean_goal_reward,
            policy_loss: l.policy_loss,
            value_loss: l.value_loss,
            entropy: l.entropy,
            rolled_back: l.rolled_back,
        }
    }
}

/// Versioned CSV: a `# schema: ...` line, a header, then rows.
pub struct CsvSink {
    inner: csv::Writer<File>,
}

impl CsvSink {
    pub fn create(path: &Path, schema: &str) -> Result<CsvSink, LabError> {
        write_file(path, format!("# schema: {schema}\n").as_bytes())?;
        CsvSink::append(path)
    }

    /// Continue an existing file without repeating the header.
    pub fn append(path: &Path) -> Result<CsvSink, LabError> {
        let file = fs::OpenOptions::new().append(true).open(path).map_err(|e| LabError::io(path, e))?;
        let has_header = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?.lines().count() > 1;
        let inner = csv::WriterBuilder::new().has_headers(!has_header).from_writer(file);
        Ok(CsvSink { inner })
    }

    pub fn row<T: Serialize>(&mut self, row: &T) -> Result<(), LabError> {
        self.inner.serialize(row)?;
        self.inner.flush().map_err(|e| LabError::Io { path: "csv".into(), source: e })
    }

    pub fn record<I, S>(&mut self, fields: I) -> Result<(), LabError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields)?;
        self.inner.flush().map_err(|e| LabError::Io { path: "csv".into(), source: e })
    }
}

/// Rows of a versioned CSV, skipping the schema line. Returns (schema, rows).
pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(String, Vec<T>), LabError> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let schema = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# schema: "))
        .ok_or_else(|| LabError::Version(format!("{} has no schema line", path.display())))?
        .to_string();
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let rows = reader.deserialize().collect::<Result<Vec<T>, _>>()?;
    Ok((schema, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub policy: String,
    pub seed: String,
    pub att: f64,
    pub adt: f64,
    pub mean_reward: f64,
    pub departed: f64,
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One row per seed, then `mean` and `std` footer rows, for each policy in turn.
pub fn write_metrics(path: &Path, results: &[(String, Vec<(u64, Evaluation)>)]) -> Result<(), LabError> {
    let mut sink = CsvSink::create(path, METRICS_SCHEMA)?;
    for (policy, runs) in results {
        for (seed, e) in runs {
            sink.row(&MetricsRow {
                policy: policy.clone(),
                seed: seed.to_string(),
                att: e.att,
                adt: e.adt,
                mean_reward: e.mean_reward,
                departed: e.departed as f64,
            })?;
        }
        let col = |f: fn(&Evaluation) -> f64| mean_std(&runs.iter().map(|(_, e)| f(e)).collect::<Vec<_>>());
        let (att, adt, rew, dep) = (col(|e| e.att), col(|e| e.adt), col(|e| e.mean_reward), col(|e| e.departed as f64));
        for (label, pick) in [("mean", 0usize), ("std", 1)] {
            let p = |t: (f64, f64)| if pick == 0 { t.0 } else { t.1 };
            sink.row(&MetricsRow { policy: policy.clone(), seed: label.into(), att: p(att), adt: p(adt), mean_reward: p(rew), departed: p(dep) })?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(att: f64) -> Evaluation {
        Evaluation { att, adt: att / 2.0, mean_reward: -0.1, departed: 10 }
    }

    #[test]
    fn metrics_rows_and_footer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_metrics(&path, &[("ftc".into(), vec![(0, eval(10.0)), (1, eval(20.0)), (2, eval(30.0))])]).unwrap();
        let (schema, rows): (_, Vec<MetricsRow>) = read_rows(&path).unwrap();
        assert_eq!(schema, METRICS_SCHEMA);
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[3].seed, "mean");
        assert_eq!(rows[3].att, 20.0);
        assert!((rows[4].att - (200.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn append_keeps_single_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let row = MetricsRow { policy: "p".into(), seed: "0".into(), att: 1.0, adt: 2.0, mean_reward: 0.5, departed: 3.0 };
        CsvSink::create(&path, METRICS_SCHEMA).unwrap().row(&row).unwrap();
        CsvSink::append(&path).unwrap().row(&row).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches("policy,seed").count(), 1);
        let (_, rows): (_, Vec<MetricsRow>) = read_rows(&path).unwrap();
        assert_eq!(rows, vec![row.clone(), row]);
    }

    #[test]
    fn mean_std_population() {
        assert_eq!(mean_std(&[2.0, 4.0]), (3.0, 1.0));
        assert!(mean_std(&[]).0.is_nan());
    }
}
