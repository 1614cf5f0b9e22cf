//! Eigenvalue-derived exponents and the sharp β(α) curves.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpectralError {
    #[error("eigenvalues ({lambda1}, {lambda2}) are not hyperbolic")]
    InvalidHyperbolicity { lambda1: f64, lambda2: f64 },
    #[error("alpha = {0} is outside (0, 1]")]
    AlphaOutOfRange(f64),
    #[error("eigenvalues must satisfy |lambda1| < |lambda2|, got ({lambda1}, {lambda2})")]
    Ordering { lambda1: f64, lambda2: f64 },
    #[error("operation requires the {expected:?} domain, parameters are {found:?}")]
    DomainMismatch { expected: DomainKind, found: DomainKind },
    #[error("figure {figure} does not apply to these parameters: {reason}")]
    FigureMismatch { figure: u8, reason: &'static str },
    #[error("figure id {0} is not in 1..=4")]
    UnknownFigure(u8),
}

/// Diagonal linear part `diag(lambda1, lambda2)` and the Hölder exponent of `DF`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainKind {
    PoincareContraction,
    PoincareExpansion,
    Siegel,
    Invalid,
}

impl SpectralParams {
    pub fn new(lambda1: f64, lambda2: f64, alpha: f64) -> Self {
        Self { lambda1, lambda2, alpha }
    }

    /// Checks `alpha` and hyperbolicity.
    pub fn validate(&self) -> Result<DomainKind, SpectralError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(SpectralError::AlphaOutOfRange(self.alpha));
        }
        match classify_domain(self) {
            DomainKind::Invalid => Err(SpectralError::InvalidHyperbolicity { lambda1: self.lambda1, lambda2: self.lambda2 }),
            kind => Ok(kind),
        }
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self { alpha, ..*self }
    }
}

pub fn classify_domain(params: &SpectralParams) -> DomainKind {
    let a = params.lambda1.abs();
    let b = params.lambda2.abs();
    let bad = |m: f64| !m.is_finite() || m == 0.0 || m == 1.0;
    if bad(a) || bad(b) {
        return DomainKind::Invalid;
    }
    match (a < 1.0, b < 1.0) {
        (true, true) => DomainKind::PoincareContraction,
        (false, false) => DomainKind::PoincareExpansion,
        _ => DomainKind::Siegel,
    }
}

/// Result of reducing an expanding fixed point to a contracting one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub params: SpectralParams,
    /// Eigenvalues were inverted (the inverse map is studied).
    pub inverted: bool,
    /// Coordinates were swapped to restore `|lambda1| < |lambda2|`.
    pub swapped: bool,
}

/// Inverts expanding eigenvalues and orders them so that `|lambda1| < |lambda2|`.
pub fn normalize(params: &SpectralParams) -> Result<Normalized, SpectralError> {
    let kind = params.validate()?;
    let mut p = *params;
    let inverted = kind == DomainKind::PoincareExpansion;
    if inverted {
        p.lambda1 = 1.0 / p.lambda1;
        p.lambda2 = 1.0 / p.lambda2;
    }
    let swapped = p.lambda1.abs() > p.lambda2.abs();
    if swapped {
        std::mem::swap(&mut p.lambda1, &mut p.lambda2);
    }
    Ok(Normalized { params: p, inverted, swapped })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedExponents {
    pub domain: DomainKind,
    /// `1 - log|l2|/log|l1|` (Poincaré only).
    pub alpha0: Option<f64>,
    /// `log|l1|/log|l2| - 1` (Poincaré only).
    pub alpha1: Option<f64>,
    /// `log|l2|/log|l1|`.
    pub sigma: f64,
    /// Predicted Hölder exponent of the linearization's derivative at this `alpha`.
    pub beta: Option<f64>,
    /// Expanding eigenvalues were inverted before evaluation.
    pub flipped: bool,
}

pub fn alpha0(lambda1: f64, lambda2: f64) -> f64 {
    1.0 - lambda2.abs().ln() / lambda1.abs().ln()
}

pub fn alpha1(lambda1: f64, lambda2: f64) -> f64 {
    lambda1.abs().ln() / lambda2.abs().ln() - 1.0
}

pub fn sigma(lambda1: f64, lambda2: f64) -> f64 {
    lambda2.abs().ln() / lambda1.abs().ln()
}

pub fn derived_exponents(params: &SpectralParams) -> Result<DerivedExponents, SpectralError> {
    let norm = normalize(params)?;
    let p = norm.params;
    if p.lambda1.abs() == p.lambda2.abs() {
        return Err(SpectralError::Ordering { lambda1: p.lambda1, lambda2: p.lambda2 });
    }
    let domain = classify_domain(&p);
    let sigma = sigma(p.lambda1, p.lambda2);
    let out = match domain {
        DomainKind::PoincareContraction => {
            let a0 = alpha0(p.lambda1, p.lambda2);
            let a1 = alpha1(p.lambda1, p.lambda2);
            DerivedExponents {
                domain,
                alpha0: Some(a0),
                alpha1: Some(a1),
                sigma,
                beta: poincare_point(a0, a1, p.alpha).beta,
                flipped: norm.inverted,
            }
        }
        _ => DerivedExponents { domain, alpha0: None, alpha1: None, sigma, beta: Some(siegel_beta(&p)?), flipped: false },
    };
    Ok(out)
}

/// Sharp Siegel exponent: `-sigma/(1-sigma) alpha` if `|l1 l2| <= 1`, else `alpha/(1-sigma)`.
pub fn siegel_beta(params: &SpectralParams) -> Result<f64, SpectralError> {
    let kind = params.validate()?;
    if kind != DomainKind::Siegel {
        return Err(SpectralError::DomainMismatch { expected: DomainKind::Siegel, found: kind });
    }
    if params.lambda1.abs() >= 1.0 {
        return Err(SpectralError::Ordering { lambda1: params.lambda1, lambda2: params.lambda2 });
    }
    Ok(siegel_slope(params) * params.alpha)
}

fn siegel_slope(p: &SpectralParams) -> f64 {
    let s = sigma(p.lambda1, p.lambda2);
    if (p.lambda1 * p.lambda2).abs() <= 1.0 {
        -s / (1.0 - s)
    } else {
        1.0 / (1.0 - s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveFlag {
    /// Closed-form sharp value.
    Sharp,
    /// `alpha <= alpha0`: only a differentiable linearization is available, no β.
    DifferentiableOnly,
    /// β is a supremum that is not attained.
    OpenEndpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub beta: Option<f64>,
    pub flag: CurveFlag,
}

/// Piecewise Poincaré rule for β at a given `alpha`.
pub fn poincare_point(alpha0: f64, alpha1: f64, alpha: f64) -> CurvePoint {
    let (beta, flag) = if alpha <= alpha0 {
        (None, CurveFlag::DifferentiableOnly)
    } else if alpha == 1.0 && alpha1 >= 1.0 {
        (Some(1.0 / alpha1), CurveFlag::Sharp)
    } else if alpha > alpha1 {
        (Some(alpha), CurveFlag::Sharp)
    } else if alpha == alpha1 {
        (Some(alpha), CurveFlag::OpenEndpoint)
    } else {
        (Some(alpha / alpha0 - 1.0), CurveFlag::Sharp)
    };
    CurvePoint { alpha, beta, flag }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Figure {
    /// Poincaré domain with `alpha1 >= 1`.
    PoincareSlowGap = 1,
    /// Poincaré domain with `0 < alpha1 < 1`.
    PoincareFastGap = 2,
    /// Siegel domain with `|l1 l2| <= 1`.
    SiegelDominatedExpansion = 3,
    /// Siegel domain with `|l1 l2| > 1`.
    SiegelDominatedContraction = 4,
}

impl Figure {
    pub fn from_id(id: u8) -> Result<Self, SpectralError> {
        match id {
            1 => Ok(Self::PoincareSlowGap),
            2 => Ok(Self::PoincareFastGap),
            3 => Ok(Self::SiegelDominatedExpansion),
            4 => Ok(Self::SiegelDominatedContraction),
            other => Err(SpectralError::UnknownFigure(other)),
        }
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    /// The figure that applies to `params`.
    pub fn for_params(params: &SpectralParams) -> Result<Self, SpectralError> {
        let p = normalize(params)?.params;
        Ok(match classify_domain(&p) {
            DomainKind::Siegel if (p.lambda1 * p.lambda2).abs() <= 1.0 => Self::SiegelDominatedExpansion,
            DomainKind::Siegel => Self::SiegelDominatedContraction,
            _ if alpha1(p.lambda1, p.lambda2) >= 1.0 => Self::PoincareSlowGap,
            _ => Self::PoincareFastGap,
        })
    }
}

/// Table of `(alpha, beta)` for one of the four sharpness figures.
pub fn sharpness_curve(figure: Figure, params: &SpectralParams, alpha_grid: &[f64]) -> Result<Vec<CurvePoint>, SpectralError> {
    if let Some(&bad) = alpha_grid.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
        return Err(SpectralError::AlphaOutOfRange(bad));
    }
    let actual = Figure::for_params(params)?;
    if actual != figure {
        let reason = match figure {
            Figure::PoincareSlowGap => "requires the Poincaré domain with alpha1 >= 1",
            Figure::PoincareFastGap => "requires the Poincaré domain with alpha1 < 1",
            Figure::SiegelDominatedExpansion => "requires the Siegel domain with |lambda1 lambda2| <= 1",
            Figure::SiegelDominatedContraction => "requires the Siegel domain with |lambda1 lambda2| > 1",
        };
        return Err(SpectralError::FigureMismatch { figure: figure.id(), reason });
    }
    let p = normalize(params)?.params;
    let rows = match figure {
        Figure::PoincareSlowGap | Figure::PoincareFastGap => {
            let a0 = alpha0(p.lambda1, p.lambda2);
            let a1 = alpha1(p.lambda1, p.lambda2);
            alpha_grid.iter().map(|&a| poincare_point(a0, a1, a)).collect()
        }
        _ => {
            let slope = siegel_slope(&p);
            alpha_grid.iter().map(|&a| CurvePoint { alpha: a, beta: Some(slope * a), flag: CurveFlag::Sharp }).collect()
        }
    };
    Ok(rows)
}

/// Slope of the Siegel curves, `-sigma/(1-sigma)` or `1/(1-sigma)`.
pub fn siegel_curve_slope(params: &SpectralParams) -> Result<f64, SpectralError> {
    siegel_beta(&params.with_alpha(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification() {
        assert_eq!(classify_domain(&SpectralParams::new(0.25, 0.5, 1.0)), DomainKind::PoincareContraction);
        assert_eq!(classify_domain(&SpectralParams::new(0.5, 2.0, 1.0)), DomainKind::Siegel);
        assert_eq!(classify_domain(&SpectralParams::new(1.0, 2.0, 1.0)), DomainKind::Invalid);
        assert_eq!(classify_domain(&SpectralParams::new(3.0, 2.0, 1.0)), DomainKind::PoincareExpansion);
        assert_eq!(classify_domain(&SpectralParams::new(0.0, 2.0, 1.0)), DomainKind::Invalid);
        assert_eq!(classify_domain(&SpectralParams::new(f64::NAN, 2.0, 1.0)), DomainKind::Invalid);
    }

    #[test]
    fn exponents_at_reference_points() {
        let d = derived_exponents(&SpectralParams::new(0.25, 0.5, 1.0)).unwrap();
        assert!((d.alpha0.unwrap() - 0.5).abs() < 1e-12);
        assert!((d.alpha1.unwrap() - 1.0).abs() < 1e-12);
        let d = derived_exponents(&SpectralParams::new(0.5, 2.0, 1.0)).unwrap();
        assert!((d.sigma + 1.0).abs() < 1e-12);
        assert!((d.beta.unwrap() - 0.5).abs() < 1e-12);
        let d = derived_exponents(&SpectralParams::new(0.5, 4.0, 0.9)).unwrap();
        assert!((d.sigma + 2.0).abs() < 1e-12);
        assert!((d.beta.unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn expansion_is_flipped() {
        let d = derived_exponents(&SpectralParams::new(4.0, 2.0, 1.0)).unwrap();
        assert!(d.flipped);
        assert_eq!(d.domain, DomainKind::PoincareContraction);
        assert!((d.alpha0.unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn siegel_beta_rejects_poincare() {
        let err = siegel_beta(&SpectralParams::new(0.25, 0.5, 1.0)).unwrap_err();
        assert!(matches!(err, SpectralError::DomainMismatch { .. }));
    }

    #[test]
    fn equal_moduli_are_rejected() {
        assert!(matches!(derived_exponents(&SpectralParams::new(0.5, -0.5, 1.0)), Err(SpectralError::Ordering { .. })));
    }

    #[test]
    fn figure_examples() {
        let r = sharpness_curve(Figure::SiegelDominatedExpansion, &SpectralParams::new(0.5, 2.0, 1.0), &[1.0]).unwrap();
        assert!((r[0].beta.unwrap() - 0.5).abs() < 1e-12);
        let r = sharpness_curve(Figure::SiegelDominatedContraction, &SpectralParams::new(0.5, 4.0, 1.0), &[0.6]).unwrap();
        assert!((r[0].beta.unwrap() - 0.2).abs() < 1e-12);
        let r = sharpness_curve(Figure::PoincareSlowGap, &SpectralParams::new(0.25, 0.5, 1.0), &[0.3, 0.75, 1.0]).unwrap();
        assert_eq!(r[0].flag, CurveFlag::DifferentiableOnly);
        assert_eq!(r[0].beta, None);
        assert!((r[1].beta.unwrap() - 0.5).abs() < 1e-12);
        assert!((r[2].beta.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r[2].flag, CurveFlag::Sharp);
    }

    #[test]
    fn figure_mismatch_and_bad_grid() {
        let p = SpectralParams::new(0.5, 2.0, 1.0);
        assert!(matches!(sharpness_curve(Figure::PoincareSlowGap, &p, &[0.5]), Err(SpectralError::FigureMismatch { .. })));
        assert!(matches!(
            sharpness_curve(Figure::SiegelDominatedExpansion, &p, &[0.0]),
            Err(SpectralError::AlphaOutOfRange(_))
        ));
    }
}
