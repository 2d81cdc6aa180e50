use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Relative tolerance when checking that CSV time stamps are evenly spaced.
const SPACING_TOLERANCE: f64 = 1e-6;

/// Paired single-input single-output samples with a fixed sample period.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    u: Vec<f64>,
    y: Vec<f64>,
    dt: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    t: f64,
    u: f64,
    y: f64,
}

impl Trajectory {
    pub fn new(u: Vec<f64>, y: Vec<f64>, dt: f64) -> Result<Self> {
        if u.len() != y.len() {
            return Err(Error::shape("trajectory", u.len(), y.len()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("sample period must be positive, got {dt}")));
        }
        ensure_finite(&u, "trajectory inputs")?;
        ensure_finite(&y, "trajectory outputs")?;
        Ok(Self { u, y, dt })
    }

    pub fn inputs(&self) -> &[f64] {
        &self.u
    }

    pub fn outputs(&self) -> &[f64] {
        &self.y
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Writes `t,u,y` rows with `t = k * dt`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for (k, (&u, &y)) in self.u.iter().zip(&self.y).enumerate() {
            wr.serialize(Row {
                t: k as f64 * self.dt,
                u,
                y,
            })?;
        }
        wr.flush().map_err(|e| Error::io("trajectory csv", e))?;
        Ok(())
    }

    /// Reads `t,u,y` rows; the sample period is inferred from the first two
    /// stamps and every later stamp must match it.
    pub fn read_csv(r: impl Read) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["t", "u", "y"] {
            return Err(Error::Format {
                what: "trajectory csv",
                reason: format!("expected header t,u,y, found {}", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let rows: Vec<Row> = rd.deserialize().collect::<std::result::Result<_, _>>()?;
        if rows.len() < 2 {
            return Err(Error::Format {
                what: "trajectory csv",
                reason: "at least two samples are needed to infer the sample period".into(),
            });
        }
        let dt = rows[1].t - rows[0].t;
        if !(dt > 0.0) {
            return Err(Error::Format {
                what: "trajectory csv",
                reason: format!("non-increasing time stamps ({} then {})", rows[0].t, rows[1].t),
            });
        }
        for (k, row) in rows.iter().enumerate() {
            let expected = rows[0].t + k as f64 * dt;
            if (row.t - expected).abs() > SPACING_TOLERANCE * dt.max(expected.abs()) {
                return Err(Error::Format {
                    what: "trajectory csv",
                    reason: format!("row {k}: time {} breaks the fixed period {dt}", row.t),
                });
            }
        }
        let (u, y) = rows.into_iter().map(|r| (r.u, r.y)).unzip();
        Self::new(u, y, dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let tr = Trajectory::new(vec![1.0, -0.5, 0.25], vec![0.0, 0.1, 0.2], 0.5).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,u,y\n"));
        assert_eq!(Trajectory::read_csv(buf.as_slice()).unwrap(), tr);
    }

    #[test]
    fn rejects_irregular_time_and_bad_header() {
        let irregular = "t,u,y\n0,1,0\n0.5,1,0\n1.2,1,0\n";
        assert!(Trajectory::read_csv(irregular.as_bytes()).is_err());
        let header = "time,u,y\n0,1,0\n0.5,1,0\n";
        assert!(Trajectory::read_csv(header.as_bytes()).is_err());
    }

    #[test]
    fn rejects_mismatch_and_non_finite() {
        assert!(Trajectory::new(vec![1.0], vec![], 1.0).is_err());
        assert!(Trajectory::new(vec![f64::NAN], vec![0.0], 1.0).is_err());
        assert!(Trajectory::new(vec![1.0], vec![0.0], 0.0).is_err());
    }
}
