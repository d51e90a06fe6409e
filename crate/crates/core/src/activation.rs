//! Scalar activations `u_t(a)` applied to each hidden unit.

use crate::error::{invalid, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    /// `1[a >= t]`
    SignThreshold,
    /// `max(0, a - t)`
    ReluThreshold,
    /// `1 / (1 + exp(-(a - t)))`
    SigmoidThreshold,
    /// `exp(rho (a - t))`
    ExpRate,
    /// `exp(a)`
    ExpPlain,
    /// `min(|a|^power, cap)`, even in `a`
    CustomEven,
}

impl ActivationKind {
    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::SignThreshold => "sign-threshold",
            ActivationKind::ReluThreshold => "relu-threshold",
            ActivationKind::SigmoidThreshold => "sigmoid-threshold",
            ActivationKind::ExpRate => "exp-rate",
            ActivationKind::ExpPlain => "exp-plain",
            ActivationKind::CustomEven => "custom-even",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "sign-threshold" => ActivationKind::SignThreshold,
            "relu-threshold" => ActivationKind::ReluThreshold,
            "sigmoid-threshold" => ActivationKind::SigmoidThreshold,
            "exp-rate" => ActivationKind::ExpRate,
            "exp-plain" => ActivationKind::ExpPlain,
            "custom-even" => ActivationKind::CustomEven,
            _ => return Err(invalid(format!("unknown activation kind `{s}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationSpec {
    pub kind: ActivationKind,
    /// Threshold `t`. Must be 0 for `exp-plain` and `custom-even`.
    #[serde(default)]
    pub t: f64,
    /// Rate for `exp-rate`; ignored otherwise.
    #[serde(default = "one")]
    pub rho: f64,
    /// Exponent of `custom-even` (an even integer).
    #[serde(default = "two")]
    pub power: u32,
    /// Clipping level of `custom-even`.
    #[serde(default = "twenty_five")]
    pub cap: f64,
}

fn one() -> f64 {
    1.0
}
fn two() -> u32 {
    2
}
fn twenty_five() -> f64 {
    25.0
}

impl ActivationSpec {
    pub fn new(kind: ActivationKind, t: f64) -> Result<Self> {
        let s = ActivationSpec { kind, t, rho: 1.0, power: 2, cap: 25.0 };
        s.validate()?;
        Ok(s)
    }

    pub fn sign(t: f64) -> Result<Self> {
        Self::new(ActivationKind::SignThreshold, t)
    }

    pub fn relu(t: f64) -> Result<Self> {
        Self::new(ActivationKind::ReluThreshold, t)
    }

    pub fn sigmoid(t: f64) -> Result<Self> {
        Self::new(ActivationKind::SigmoidThreshold, t)
    }

    pub fn exp_rate(rho: f64, t: f64) -> Result<Self> {
        let s = ActivationSpec { kind: ActivationKind::ExpRate, t, rho, power: 2, cap: 25.0 };
        s.validate()?;
        Ok(s)
    }

    pub fn exp_plain() -> Self {
        ActivationSpec { kind: ActivationKind::ExpPlain, t: 0.0, rho: 1.0, power: 2, cap: 25.0 }
    }

    pub fn custom_even(power: u32, cap: f64) -> Result<Self> {
        let s = ActivationSpec { kind: ActivationKind::CustomEven, t: 0.0, rho: 1.0, power, cap };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t.is_finite() && self.t >= 0.0) {
            return Err(invalid(format!("threshold must be finite and >= 0, got {}", self.t)));
        }
        match self.kind {
            ActivationKind::ExpRate => {
                if !(self.rho.is_finite() && self.rho > 0.0) {
                    return Err(invalid(format!("exp-rate needs rho > 0, got {}", self.rho)));
                }
            }
            ActivationKind::ExpPlain => {
                if self.t != 0.0 {
                    return Err(invalid("exp-plain takes no threshold"));
                }
            }
            ActivationKind::CustomEven => {
                if self.t != 0.0 {
                    return Err(invalid("custom-even takes no threshold"));
                }
                if self.power == 0 || self.power % 2 != 0 {
                    return Err(invalid(format!("custom-even power must be even and > 0, got {}", self.power)));
                }
                if !(self.cap.is_finite() && self.cap > 0.0) {
                    return Err(invalid(format!("custom-even cap must be > 0, got {}", self.cap)));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// `u_t(a)`.
    #[inline]
    pub fn eval(&self, a: f64) -> f64 {
        match self.kind {
            ActivationKind::SignThreshold => {
                if a >= self.t {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::ReluThreshold => (a - self.t).max(0.0),
            ActivationKind::SigmoidThreshold => 1.0 / (1.0 + (-(a - self.t)).exp()),
            ActivationKind::ExpRate => (self.rho * (a - self.t)).exp(),
            ActivationKind::ExpPlain => a.exp(),
            ActivationKind::CustomEven => a.abs().powi(self.power as i32).min(self.cap),
        }
    }

    /// Points where `u_t` is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self.kind {
            ActivationKind::SignThreshold | ActivationKind::ReluThreshold => vec![self.t],
            ActivationKind::CustomEven => {
                let r = self.cap.powf(1.0 / self.power as f64);
                vec![-r, r]
            }
            _ => vec![],
        }
    }

    /// Supremum of `u_t`, when finite.
    pub fn sup(&self) -> Option<f64> {
        match self.kind {
            ActivationKind::SignThreshold | ActivationKind::SigmoidThreshold => Some(1.0),
            ActivationKind::CustomEven => Some(self.cap),
            _ => None,
        }
    }

    /// True when `u_t(a) = 0` for every `a < t`.
    pub fn vanishes_below_threshold(&self) -> bool {
        matches!(self.kind, ActivationKind::SignThreshold | ActivationKind::ReluThreshold)
    }

    /// Whether `u` is an even function.
    pub fn is_even(&self) -> bool {
        self.kind == ActivationKind::CustomEven
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluations() {
        let s = ActivationSpec::sign(1.0).unwrap();
        assert_eq!(s.eval(2.0), 1.0);
        assert_eq!(s.eval(1.0), 1.0);
        assert_eq!(s.eval(0.5), 0.0);
        assert_eq!(ActivationSpec::relu(1.0).unwrap().eval(3.5), 2.5);
        assert!((ActivationSpec::sigmoid(1.0).unwrap().eval(1.0) - 0.5).abs() < 1e-15);
        let e = ActivationSpec::exp_rate(0.5, 2.0).unwrap();
        assert!((e.eval(4.0) - 1.0f64.exp()).abs() < 1e-12);
        let c = ActivationSpec::custom_even(2, 25.0).unwrap();
        assert_eq!(c.eval(-3.0), 9.0);
        assert_eq!(c.eval(7.0), 25.0);
    }

    #[test]
    fn validation() {
        assert!(ActivationSpec::sign(-1.0).is_err());
        assert!(ActivationSpec::exp_rate(0.0, 1.0).is_err());
        assert!(ActivationSpec::custom_even(3, 25.0).is_err());
        assert_eq!(ActivationKind::parse("relu-threshold").unwrap(), ActivationKind::ReluThreshold);
        assert!(ActivationKind::parse("tanh").is_err());
    }
}
