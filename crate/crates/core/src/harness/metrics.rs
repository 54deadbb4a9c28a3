use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const CSV_HEADER: &str = "step,worker,loss,grad_norm,replica_spread,staleness,bytes_sent,virtual_time";

/// One line of the per-step metrics stream. Optional fields are written as
/// empty cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub worker: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub replica_spread: Option<f64>,
    pub staleness: Option<u64>,
    pub bytes_sent: u64,
    pub virtual_time: Option<f64>,
}

impl MetricRow {
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        let opt = |v: Option<String>| v.unwrap_or_default();
        writeln!(
            w,
            "{},{},{:e},{:e},{},{},{},{}",
            self.step,
            self.worker,
            self.loss,
            self.grad_norm,
            opt(self.replica_spread.map(|v| format!("{v:e}"))),
            opt(self.staleness.map(|v| v.to_string())),
            self.bytes_sent,
            opt(self.virtual_time.map(|v| format!("{v:e}"))),
        )?;
        Ok(())
    }
}

pub fn write_csv(rows: &[MetricRow], w: &mut impl Write) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        r.write_csv(w)?;
    }
    Ok(())
}

/// `max_i |x_i - mean|_inf` over replicas, with the mean taken in f64.
pub fn replica_spread(replicas: &[Vec<f32>]) -> f64 {
    let Some(first) = replicas.first() else {
        return 0.0;
    };
    let n = replicas.len() as f64;
    (0..first.len())
        .map(|k| {
            let mean = replicas.iter().map(|r| r[k] as f64).sum::<f64>() / n;
            replicas
                .iter()
                .map(|r| (r[k] as f64 - mean).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_of_identical_replicas_is_zero() {
        assert_eq!(replica_spread(&[vec![1.0, 2.0], vec![1.0, 2.0]]), 0.0);
        assert_eq!(replica_spread(&[vec![0.0, 2.0], vec![1.0, 2.0]]), 0.5);
    }

    #[test]
    fn csv_leaves_missing_cells_empty() {
        let row = MetricRow {
            step: 3,
            worker: 1,
            loss: 0.5,
            grad_norm: 2.0,
            replica_spread: None,
            staleness: Some(2),
            bytes_sent: 40,
            virtual_time: None,
        };
        let mut out = Vec::new();
        row.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "3,1,5e-1,2e0,,2,40,\n");
    }
}
