use std::io::Write;

use serde::{Deserialize, Serialize};

use super::CircuitError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    FrequencyHzLog,
    TimeS,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Log,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum YUnit {
    #[serde(rename = "dB")]
    Db,
    #[serde(rename = "volts")]
    Volts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    pub axis: Axis,
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    pub spacing: Spacing,
}

impl SamplingGrid {
    pub fn log_frequency(start: f64, stop: f64, count: usize) -> Self {
        SamplingGrid { axis: Axis::FrequencyHzLog, start, stop, count, spacing: Spacing::Log }
    }

    pub fn linear_time(start: f64, stop: f64, count: usize) -> Self {
        SamplingGrid { axis: Axis::TimeS, start, stop, count, spacing: Spacing::Linear }
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        if !(self.start.is_finite() && self.stop.is_finite()) || self.start >= self.stop {
            return Err(CircuitError::InvalidGrid(format!(
                "start {} must be below stop {}",
                self.start, self.stop
            )));
        }
        if self.count < 2 {
            return Err(CircuitError::InvalidGrid(format!("{} points; at least 2 required", self.count)));
        }
        if self.spacing == Spacing::Log && self.start <= 0.0 {
            return Err(CircuitError::InvalidGrid("log spacing needs a positive start".into()));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|i| {
                if i == self.count - 1 {
                    return self.stop;
                }
                let frac = i as f64 / last;
                match self.spacing {
                    Spacing::Linear => self.start + (self.stop - self.start) * frac,
                    Spacing::Log => (self.start.ln() + (self.stop.ln() - self.start.ln()) * frac).exp(),
                }
            })
            .collect()
    }
}

/// Samples of one observable, on an ordered axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseCurve {
    pub axis: Axis,
    pub y_unit: YUnit,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl ResponseCurve {
    pub(crate) fn sample(grid: &SamplingGrid, y_unit: YUnit, f: impl Fn(f64) -> f64) -> Self {
        let x = grid.points();
        let y = x.iter().map(|&v| f(v)).collect();
        ResponseCurve { axis: grid.axis, y_unit, x, y }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        if self.x.len() != self.y.len() || self.x.len() < 2 {
            return Err(CircuitError::InvalidGrid("curve needs at least 2 (x, y) points".into()));
        }
        if self.x.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CircuitError::InvalidGrid("curve x values must be strictly increasing".into()));
        }
        if self.x.iter().chain(&self.y).any(|v| !v.is_finite()) {
            return Err(CircuitError::InvalidGrid("curve has non-finite values".into()));
        }
        Ok(())
    }

    /// CSV with header `x,y`, 12 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y"])?;
        for (x, y) in self.x.iter().zip(&self.y) {
            w.write_record([format!("{x:.11e}"), format!("{y:.11e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(SamplingGrid::linear_time(0.0, 0.0, 10).validate().is_err());
        assert!(SamplingGrid::linear_time(0.0, 1.0, 1).validate().is_err());
        assert!(SamplingGrid::linear_time(0.0, 1.0, 0).validate().is_err());
        assert!(SamplingGrid::log_frequency(0.0, 1.0, 10).validate().is_err());
        assert!(SamplingGrid::log_frequency(1.0, 1e4, 200).validate().is_ok());
    }

    #[test]
    fn log_grid_spans_endpoints() {
        let g = SamplingGrid::log_frequency(1e3, 1e7, 200);
        let p = g.points();
        assert_eq!(p.len(), 200);
        assert!((p[0] - 1e3).abs() < 1e-9);
        assert_eq!(p[199], 1e7);
        assert!(p.windows(2).all(|w| w[0] < w[1]));
        // constant ratio
        let r0 = p[1] / p[0];
        let r1 = p[150] / p[149];
        assert!((r0 - r1).abs() < 1e-12);
    }

    #[test]
    fn csv_has_twelve_significant_digits() {
        let g = SamplingGrid::linear_time(0.0, 1.0, 2);
        let c = ResponseCurve::sample(&g, YUnit::Volts, |t| 1.0 / 3.0 + t);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,y");
        assert_eq!(lines[1], "0.00000000000e0,3.33333333333e-1");
        assert_eq!(lines.len(), 3);
    }
}
