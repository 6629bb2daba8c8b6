use std::f64::consts::{FRAC_PI_2, LN_2};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::numerics::Scalar;

/// Confidence-dependent weights `(φ, ψ)` applied to the classification and
/// regularization terms. φ decreases and ψ increases in `p(y|x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModulationKind {
    /// φ = ψ = 1.
    None,
    /// φ = 1 − p, ψ = p.
    Linear,
    /// φ = (1 − p)^α, ψ = p^α.
    Power { alpha: f64 },
    /// φ = 1 − log(p + 1)/log 2, ψ = log(p + 1)/log 2.
    Logarithmic,
    /// φ = cos(πp/2), ψ = sin(πp/2).
    Trigonometric,
}

impl ModulationKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ModulationKind::Power { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                Err(domain(format!("power modulation requires alpha > 0, got {alpha}")))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ModulationKind::None => "none".into(),
            ModulationKind::Linear => "linear".into(),
            ModulationKind::Power { alpha } => format!("power{alpha}"),
            ModulationKind::Logarithmic => "logarithmic".into(),
            ModulationKind::Trigonometric => "trigonometric".into(),
        }
    }
}

impl std::str::FromStr for ModulationKind {
    type Err = crate::error::SctError;

    /// Parses `none`, `linear`, `log`/`logarithmic`, `trig`/`trigonometric`
    /// or `power:<alpha>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if let Some(a) = s.strip_prefix("power:").or_else(|| s.strip_prefix("power")) {
            let alpha: f64 = a
                .trim_start_matches(['=', ':'])
                .parse()
                .map_err(|_| domain(format!("invalid power exponent in `{s}`")))?;
            let m = ModulationKind::Power { alpha };
            m.validate()?;
            return Ok(m);
        }
        match s.as_str() {
            "none" => Ok(ModulationKind::None),
            "linear" => Ok(ModulationKind::Linear),
            "log" | "logarithmic" => Ok(ModulationKind::Logarithmic),
            "trig" | "trigonometric" => Ok(ModulationKind::Trigonometric),
            other => Err(domain(format!("unknown modulation `{other}`"))),
        }
    }
}

fn check_prob<T: Scalar>(p: T) -> Result<()> {
    if p >= T::zero() && p <= T::one() {
        Ok(())
    } else {
        Err(domain(format!("modulation argument must lie in [0, 1], got {p}")))
    }
}

/// Evaluates `(φ(p), ψ(p))`.
pub fn modulation<T: Scalar>(kind: ModulationKind, p: T) -> Result<(T, T)> {
    check_prob(p)?;
    let one = T::one();
    Ok(match kind {
        ModulationKind::None => (one, one),
        ModulationKind::Linear => (one - p, p),
        ModulationKind::Power { alpha } => {
            let a = T::lit(alpha);
            ((one - p).powf(a), p.powf(a))
        }
        ModulationKind::Logarithmic => {
            let psi = p.ln_1p() / T::lit(LN_2);
            (one - psi, psi)
        }
        ModulationKind::Trigonometric => {
            let angle = T::lit(FRAC_PI_2) * p;
            // cos(π/2) is not exactly zero in floating point.
            let phi = if p == one { T::zero() } else { angle.cos() };
            (phi, angle.sin())
        }
    })
}

/// Derivatives `(φ'(p), ψ'(p))`.
pub fn modulation_derivative<T: Scalar>(kind: ModulationKind, p: T) -> Result<(T, T)> {
    check_prob(p)?;
    let one = T::one();
    Ok(match kind {
        ModulationKind::None => (T::zero(), T::zero()),
        ModulationKind::Linear => (-one, one),
        ModulationKind::Power { alpha } => {
            let a = T::lit(alpha);
            let am1 = a - one;
            (-a * (one - p).powf(am1), a * p.powf(am1))
        }
        ModulationKind::Logarithmic => {
            let d = one / ((p + one) * T::lit(LN_2));
            (-d, d)
        }
        ModulationKind::Trigonometric => {
            let k = T::lit(FRAC_PI_2);
            let angle = k * p;
            (-k * angle.sin(), k * angle.cos())
        }
    })
}
