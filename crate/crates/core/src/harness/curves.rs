//! Tabulated loss-family curves.

use crate::error::{Error, Result};
use crate::loss::{bce_point, box_cox_point, mae_point};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurvesConfig {
    pub q_list: Vec<f64>,
    pub x_start: f64,
    pub x_stop: f64,
    pub x_step: f64,
}

impl Default for CurvesConfig {
    fn default() -> Self {
        CurvesConfig {
            q_list: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            x_start: 0.01,
            x_stop: 0.99,
            x_step: 0.01,
        }
    }
}

impl CurvesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q_list.is_empty() || self.q_list.iter().any(|&q| !(q > 0.0 && q <= 1.0)) {
            return Err(Error::Domain(format!("q values must lie in (0, 1], got {:?}", self.q_list)));
        }
        let in_open = |x: f64| x > 0.0 && x < 1.0;
        if !(in_open(self.x_start) && in_open(self.x_stop) && self.x_start <= self.x_stop) {
            return Err(Error::Domain(format!(
                "grid must lie in (0, 1) with start <= stop, got [{}, {}]",
                self.x_start, self.x_stop
            )));
        }
        if !(self.x_step > 0.0 && self.x_step.is_finite()) {
            return Err(Error::Domain(format!("grid step must be > 0, got {}", self.x_step)));
        }
        Ok(())
    }

    /// Grid points, each rounded to 12 decimals so `0.35` prints as `0.35`.
    pub fn grid(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let n = ((self.x_stop - self.x_start) / self.x_step + 1e-9).floor() as usize + 1;
        Ok((0..n)
            .map(|i| ((self.x_start + i as f64 * self.x_step) * 1e12).round() / 1e12)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub x: f64,
    pub mae: f64,
    pub bce: f64,
    /// One value per entry of the configured `q_list`.
    pub box_cox: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveTable {
    pub q_list: Vec<f64>,
    pub rows: Vec<CurveRow>,
}

impl CurveTable {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["x".to_string(), "mae".to_string(), "bce".to_string()];
        h.extend(self.q_list.iter().map(|q| format!("boxcox_{q}")));
        h
    }
}

pub fn loss_curves(cfg: &CurvesConfig) -> Result<CurveTable> {
    let rows = cfg
        .grid()?
        .into_iter()
        .map(|x| {
            Ok(CurveRow {
                x,
                mae: mae_point(x)?,
                bce: bce_point(x)?,
                box_cox: cfg.q_list.iter().map(|&q| box_cox_point(x, q)).collect::<Result<_>>()?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CurveTable {
        q_list: cfg.q_list.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_99_points() {
        let g = CurvesConfig::default().grid().unwrap();
        assert_eq!(g.len(), 99);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[34], 0.35);
        assert_eq!(g[98], 0.99);
    }

    #[test]
    fn midpoint_row() {
        let t = loss_curves(&CurvesConfig::default()).unwrap();
        let r = t.rows.iter().find(|r| r.x == 0.5).unwrap();
        assert_eq!(r.mae, 0.5);
        assert!((r.bce - 0.693147).abs() < 1e-6);
        assert!((r.box_cox[2] - 0.585786).abs() < 1e-6);
        assert_eq!(t.header()[3], "boxcox_0.1");
    }

    #[test]
    fn box_cox_columns_sit_between_mae_and_bce() {
        let t = loss_curves(&CurvesConfig::default()).unwrap();
        for r in &t.rows {
            for &b in &r.box_cox {
                assert!(r.mae <= b && b < r.bce);
            }
        }
    }

    #[test]
    fn domain_errors() {
        let bad_q = CurvesConfig {
            q_list: vec![0.0],
            ..CurvesConfig::default()
        };
        assert!(matches!(loss_curves(&bad_q), Err(Error::Domain(_))));
        let bad_x = CurvesConfig {
            x_stop: 1.0,
            ..CurvesConfig::default()
        };
        assert!(matches!(loss_curves(&bad_x), Err(Error::Domain(_))));
    }
}
