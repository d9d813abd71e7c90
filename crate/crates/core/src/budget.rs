//! Efficiency chains with quadrature uncertainty propagation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named transmission factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyStage {
    pub name: String,
    pub value: f64,
    #[serde(default)]
    pub relative_uncertainty: f64,
}

impl EfficiencyStage {
    pub fn new(name: impl Into<String>, value: f64, relative_uncertainty: f64) -> Result<Self> {
        let stage = EfficiencyStage {
            name: name.into(),
            value,
            relative_uncertainty,
        };
        stage.validate()?;
        Ok(stage)
    }

    /// Stage without uncertainty.
    pub fn exact(name: impl Into<String>, value: f64) -> Result<Self> {
        Self::new(name, value, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.value) {
            return Err(Error::OutOfRange(format!("stage `{}` value {} outside [0, 1]", self.name, self.value)));
        }
        if !(self.relative_uncertainty >= 0.0 && self.relative_uncertainty.is_finite()) {
            return Err(Error::OutOfRange(format!("stage `{}` has invalid uncertainty", self.name)));
        }
        Ok(())
    }

    pub fn estimate(&self) -> Estimate {
        Estimate::from_relative(self.value, self.relative_uncertainty)
    }
}

/// Value with absolute standard uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub uncertainty: f64,
}

impl Estimate {
    pub fn new(value: f64, uncertainty: f64) -> Self {
        Estimate { value, uncertainty }
    }

    pub fn from_relative(value: f64, relative: f64) -> Self {
        Estimate {
            value,
            uncertainty: (value * relative).abs(),
        }
    }

    pub fn relative(&self) -> f64 {
        if self.value == 0.0 {
            0.0
        } else {
            self.uncertainty / self.value.abs()
        }
    }

    pub fn times(self, other: Estimate) -> Estimate {
        Estimate::from_relative(self.value * other.value, self.relative().hypot(other.relative()))
    }

    pub fn divided_by(self, other: Estimate) -> Result<Estimate> {
        if other.value == 0.0 {
            return Err(Error::Undefined("division by a zero estimate".into()));
        }
        Ok(Estimate::from_relative(self.value / other.value, self.relative().hypot(other.relative())))
    }

    /// Treats the estimate as a stage.
    pub fn stage(self, name: impl Into<String>) -> Result<EfficiencyStage> {
        EfficiencyStage::new(name, self.value, self.relative())
    }
}

/// Product of the stages with relative uncertainties added in quadrature.
/// An empty chain is `1 ± 0`.
pub fn chain(stages: &[EfficiencyStage]) -> Estimate {
    let value = stages.iter().map(|s| s.value).product();
    let rel = stages.iter().map(|s| s.relative_uncertainty.powi(2)).sum::<f64>().sqrt();
    Estimate::from_relative(value, rel)
}

/// Ordered list of stages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub stages: Vec<EfficiencyStage>,
}

impl Budget {
    pub fn new(stages: Vec<EfficiencyStage>) -> Result<Self> {
        for s in &stages {
            s.validate()?;
        }
        Ok(Budget { stages })
    }

    pub fn total(&self) -> Estimate {
        chain(&self.stages)
    }

    /// Aligned text table of the stages and their product.
    pub fn table(&self) -> String {
        let total = self.total();
        let mut rows: Vec<(String, String, String)> = self
            .stages
            .iter()
            .map(|s| {
                (
                    s.name.clone(),
                    format!("{:.4}", s.value),
                    format!("{:.1}%", 100.0 * s.relative_uncertainty),
                )
            })
            .collect();
        rows.push((
            "total".into(),
            format!("{:.4}", total.value),
            format!("{:.1}%", 100.0 * total.relative()),
        ));
        table(&["stage", "value", "rel. unc."], &rows)
    }
}

pub(crate) fn table(header: &[&str; 3], rows: &[(String, String, String)]) -> String {
    let width = |i: usize, h: &str| {
        rows.iter()
            .map(|r| [&r.0, &r.1, &r.2][i].chars().count())
            .chain(std::iter::once(h.chars().count()))
            .max()
            .unwrap_or(0)
    };
    let w = [width(0, header[0]), width(1, header[1]), width(2, header[2])];
    let mut out = String::new();
    let _ = writeln!(out, "{:<a$}  {:>b$}  {:>c$}", header[0], header[1], header[2], a = w[0], b = w[1], c = w[2]);
    let _ = writeln!(out, "{}", "-".repeat(w[0] + w[1] + w[2] + 4));
    for r in rows {
        let _ = writeln!(out, "{:<a$}  {:>b$}  {:>c$}", r.0, r.1, r.2, a = w[0], b = w[1], c = w[2]);
    }
    out
}

/// Outcome of backing a stage out of a count measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Inferred {
    Value(Estimate),
    /// No counts: 95% upper limit only.
    UpperBound(f64),
}

/// `(counts / trials) / Π known`, with √N counting noise and the known
/// stages' uncertainties in quadrature.
pub fn infer_stage(measured_counts: u64, trials: u64, known: &[EfficiencyStage]) -> Result<Inferred> {
    if trials == 0 {
        return Err(Error::precondition("trials must be >= 1"));
    }
    let k = chain(known);
    if !(k.value > 0.0) {
        return Err(Error::precondition("known stages multiply to zero"));
    }
    let n = trials as f64;
    if measured_counts == 0 {
        return Ok(Inferred::UpperBound(3.0 / n / k.value));
    }
    let c = measured_counts as f64;
    let rate = Estimate::from_relative(c / n, 1.0 / c.sqrt());
    Ok(Inferred::Value(rate.divided_by(k)?))
}

/// Two-photon (coincidence) rate gain, `(p_new / p_old)²`.
pub fn entanglement_rate_gain(p_new: f64, p_old: f64) -> Result<f64> {
    if !(p_old > 0.0) {
        return Err(Error::precondition("p_old must be > 0"));
    }
    Ok((p_new / p_old).powi(2))
}

/// Ion-to-fiber total under both readings of the loss chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Composition {
    /// Collection × fiber coupling.
    pub total: Estimate,
    /// Same, with the extra optics loss applied on top.
    pub with_extra_loss: Estimate,
    pub extra_loss_stage: EfficiencyStage,
    pub note: String,
}

pub fn ion_to_fiber(collection: Estimate, coupling: Estimate, extra_loss: f64) -> Result<Composition> {
    let stage = EfficiencyStage::exact("extra optics", 1.0 - extra_loss)?;
    let total = collection.times(coupling);
    let with_extra_loss = total.times(stage.estimate());
    Ok(Composition {
        total,
        with_extra_loss,
        extra_loss_stage: stage,
        note: format!(
            "collection x coupling = {:.4}; applying a further {:.1}% loss gives {:.4}",
            total.value,
            100.0 * extra_loss,
            with_extra_loss.value
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(name: &str, v: f64, r: f64) -> EfficiencyStage {
        EfficiencyStage::new(name, v, r).unwrap()
    }

    #[test]
    fn chain_basics() {
        assert_eq!(chain(&[]), Estimate::new(1.0, 0.0));
        let one = s("a", 0.3, 0.1);
        let c = chain(std::slice::from_ref(&one));
        assert!((c.value - 0.3).abs() < 1e-15 && (c.uncertainty - 0.03).abs() < 1e-15);
        let c = chain(&[s("collection", 0.058, 0.14), s("coupling", 0.71, 0.07)]);
        assert!((c.value - 0.041).abs() < 5e-4);
        assert!((c.uncertainty - 0.006).abs() < 5e-4);
        let c = chain(&[s("collected", 0.174, 0.0), s("diffraction", 0.333, 0.0)]);
        assert!((c.value - 0.058).abs() < 5e-4);
    }

    #[test]
    fn invalid_stages() {
        assert!(EfficiencyStage::new("x", 1.2, 0.0).is_err());
        assert!(EfficiencyStage::new("x", 0.5, -0.1).is_err());
        assert!(EfficiencyStage::new("x", 0.5, f64::NAN).is_err());
    }

    fn published_known() -> Vec<EfficiencyStage> {
        vec![s("detector QE", 0.19, 0.0), s("iris", 0.50, 0.10), s("other optics", 0.76, 0.0)]
    }

    #[test]
    fn count_back_out() {
        let Inferred::Value(e) = infer_stage(770, 184_000, &published_known()).unwrap() else {
            panic!("expected a value");
        };
        assert!((e.value - 0.058).abs() < 0.008);
        let expect = 770.0 / 184_000.0 / (0.19 * 0.5 * 0.76);
        assert!((e.value - expect).abs() < 1e-15);
        assert!((e.relative() - (1.0 / 770.0 + 0.01f64).sqrt()).abs() < 1e-12);
        let d = e.divided_by(Estimate::new(0.174, 0.0)).unwrap();
        assert!((d.value - 0.33).abs() < 0.07);
    }

    #[test]
    fn zero_counts_give_upper_bound() {
        assert!(matches!(infer_stage(0, 1000, &published_known()).unwrap(), Inferred::UpperBound(b) if b > 0.0));
        assert!(infer_stage(1, 0, &published_known()).is_err());
        assert!(infer_stage(1, 1, &[s("dead", 0.0, 0.0)]).is_err());
    }

    #[test]
    fn gain() {
        assert!((entanglement_rate_gain(0.041, 0.014).unwrap() - 8.58).abs() < 0.01);
        assert_eq!(entanglement_rate_gain(0.3, 0.3).unwrap(), 1.0);
        assert!((entanglement_rate_gain(0.2, 0.1).unwrap() - 4.0).abs() < 1e-12);
        assert!(entanglement_rate_gain(0.2, 0.0).is_err());
    }

    #[test]
    fn compositions() {
        let c = ion_to_fiber(Estimate::from_relative(0.058, 0.14), Estimate::from_relative(0.71, 0.07), 0.083).unwrap();
        assert!((c.total.value - 0.0412).abs() < 1e-4);
        assert!((c.with_extra_loss.value - 0.0378).abs() < 1e-4);
    }

    #[test]
    fn table_is_aligned() {
        let b = Budget::new(published_known()).unwrap();
        let t = b.table();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 6);
        let w = lines[0].len();
        assert!(lines.iter().all(|l| l.len() == w));
        assert!(lines[5].starts_with("total"));
    }
}
