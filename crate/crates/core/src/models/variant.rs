use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::binning::Composition;
use crate::error::{invalid, Error, Result};

/// Loss family of a bin-and-delta model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// Cross-entropy + squared error on the delta.
    Simple,
    /// Cross-entropy + geodesic loss on the composed pose.
    Geodesic,
    /// Cross-entropy + squared error against the tangent-space residual.
    Riemannian,
    /// KL to soft labels + expected geodesic loss under the predicted bins.
    Probabilistic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VariantKind {
    /// Direct regression with squared Euclidean loss on axis-angle.
    RegressionEuclidean,
    /// Direct regression with geodesic loss.
    RegressionGeodesic,
    /// Classification into key poses only.
    Classification,
    BinDelta { family: Family, per_bin: bool },
}

impl VariantKind {
    pub const ALL: [VariantKind; 11] = [
        VariantKind::RegressionEuclidean,
        VariantKind::RegressionGeodesic,
        VariantKind::Classification,
        VariantKind::BinDelta { family: Family::Simple, per_bin: false },
        VariantKind::BinDelta { family: Family::Geodesic, per_bin: false },
        VariantKind::BinDelta { family: Family::Riemannian, per_bin: false },
        VariantKind::BinDelta { family: Family::Probabilistic, per_bin: false },
        VariantKind::BinDelta { family: Family::Simple, per_bin: true },
        VariantKind::BinDelta { family: Family::Geodesic, per_bin: true },
        VariantKind::BinDelta { family: Family::Riemannian, per_bin: true },
        VariantKind::BinDelta { family: Family::Probabilistic, per_bin: true },
    ];

    pub fn tag(&self) -> &'static str {
        use Family::*;
        match self {
            VariantKind::RegressionEuclidean => "R_E",
            VariantKind::RegressionGeodesic => "R_G",
            VariantKind::Classification => "C",
            VariantKind::BinDelta { family, per_bin } => match (family, per_bin) {
                (Simple, false) => "M_S",
                (Geodesic, false) => "M_G",
                (Riemannian, false) => "M_R",
                (Probabilistic, false) => "M_P",
                (Simple, true) => "M_S+",
                (Geodesic, true) => "M_G+",
                (Riemannian, true) => "M_R+",
                (Probabilistic, true) => "M_P+",
            },
        }
    }

    pub fn has_bins(&self) -> bool {
        !matches!(
            self,
            VariantKind::RegressionEuclidean | VariantKind::RegressionGeodesic
        )
    }

    pub fn family(&self) -> Option<Family> {
        match self {
            VariantKind::BinDelta { family, .. } => Some(*family),
            _ => None,
        }
    }

    pub fn per_bin(&self) -> bool {
        matches!(self, VariantKind::BinDelta { per_bin: true, .. })
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        VariantKind::ALL
            .iter()
            .find(|v| v.tag() == norm)
            .copied()
            .ok_or_else(|| invalid(format!("unknown model variant '{s}'")))
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Which bin indexes the delta inside the training losses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinSelection {
    /// Ground-truth bin `l*`.
    #[default]
    TeacherForced,
    /// Argmax of the current bin logits.
    Predicted,
}

/// A model variant together with its loss hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub kind: VariantKind,
    pub alpha: f64,
    /// Number of key poses; ignored by the regression baselines.
    pub k: usize,
    pub composition: Composition,
    pub bin_selection: BinSelection,
}

impl ModelVariant {
    /// Defaults per variant: α = 10 for M_G+, 0.1 for the M_R family and 1
    /// otherwise; K = 16 for per-bin variants and 100 otherwise; Riemannian
    /// composition for the M_R family.
    pub fn new(kind: VariantKind) -> Self {
        let alpha = match kind {
            VariantKind::BinDelta { family: Family::Geodesic, per_bin: true } => 10.0,
            VariantKind::BinDelta { family: Family::Riemannian, .. } => 0.1,
            _ => 1.0,
        };
        let composition = match kind.family() {
            Some(Family::Riemannian) => Composition::Riemannian,
            _ => Composition::Additive,
        };
        ModelVariant {
            kind,
            alpha,
            k: if kind.per_bin() { 16 } else { 100 },
            composition,
            bin_selection: BinSelection::TeacherForced,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_composition(mut self, c: Composition) -> Self {
        self.composition = c;
        self
    }

    pub fn with_bin_selection(mut self, s: BinSelection) -> Self {
        self.bin_selection = s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(invalid(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if self.kind.has_bins() && self.k == 0 {
            return Err(invalid("K must be at least 1"));
        }
        Ok(())
    }

    /// Number of delta/regression heads.
    pub fn num_heads(&self) -> usize {
        match self.kind {
            VariantKind::Classification => 0,
            VariantKind::BinDelta { per_bin: true, .. } => self.k,
            _ => 1,
        }
    }

    /// Gradient clipping is enabled by default for the geodesic and
    /// probabilistic families.
    pub fn default_clip(&self) -> Option<f64> {
        match self.kind.family() {
            Some(Family::Geodesic | Family::Probabilistic) => Some(10.0),
            _ => None,
        }
    }

    /// The geodesic families start from one epoch of the simple objective.
    pub fn warm_start_kind(&self) -> Option<VariantKind> {
        match self.kind {
            VariantKind::BinDelta { family: Family::Geodesic, per_bin } => {
                Some(VariantKind::BinDelta { family: Family::Simple, per_bin })
            }
            _ => None,
        }
    }
}
