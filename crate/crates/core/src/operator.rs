//! The operator `H = hbar^2 (Delta + W) + V` as data: a manifold with two
//! endomorphism fields of equal rank.

use crate::error::{Error, Result};
use crate::fields::{EndomorphismField, SymMatrix};
use crate::geometry::ModelManifold;

#[derive(Clone, Debug)]
pub struct SemiclassicalOperator {
    manifold: ModelManifold,
    potential: EndomorphismField,
    endomorphism: EndomorphismField,
}

impl SemiclassicalOperator {
    /// Validates both fields against the manifold. `w = None` means `W = 0`.
    pub fn new(
        manifold: ModelManifold,
        potential: EndomorphismField,
        endomorphism: Option<EndomorphismField>,
    ) -> Result<Self> {
        let endomorphism =
            endomorphism.unwrap_or_else(|| EndomorphismField::zero(potential.rank()));
        if endomorphism.rank() != potential.rank() {
            return Err(Error::DimensionMismatch {
                expected: potential.rank(),
                found: endomorphism.rank(),
            });
        }
        potential.validate(&manifold)?;
        endomorphism.validate(&manifold)?;
        Ok(SemiclassicalOperator {
            manifold,
            potential,
            endomorphism,
        })
    }

    /// Pure Laplacian on a rank-`m` trivial bundle.
    pub fn free(manifold: ModelManifold, rank: usize) -> Self {
        SemiclassicalOperator {
            manifold,
            potential: EndomorphismField::zero(rank),
            endomorphism: EndomorphismField::zero(rank),
        }
    }

    pub fn with_constant_potential(manifold: ModelManifold, v: SymMatrix) -> Self {
        let rank = v.order();
        SemiclassicalOperator {
            manifold,
            potential: EndomorphismField::constant(v),
            endomorphism: EndomorphismField::zero(rank),
        }
    }

    pub fn manifold(&self) -> &ModelManifold {
        &self.manifold
    }

    pub fn potential(&self) -> &EndomorphismField {
        &self.potential
    }

    pub fn endomorphism(&self) -> &EndomorphismField {
        &self.endomorphism
    }

    pub fn rank(&self) -> usize {
        self.potential.rank()
    }

    pub fn dim(&self) -> usize {
        self.manifold.dim()
    }
}
