use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Positions, previous-frame optimized positions and velocities of the
/// reconstruction particles. The three lists always have the same length.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParticleState {
    pub positions: Vec<Vec3>,
    pub prev_positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
}

impl ParticleState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Particles at rest: previous positions equal current ones, zero velocity.
    pub fn at_rest(positions: Vec<Vec3>) -> Self {
        let n = positions.len();
        Self {
            prev_positions: positions.clone(),
            positions,
            velocities: vec![Vec3::zeros(); n],
        }
    }

    pub fn from_parts(
        positions: Vec<Vec3>,
        prev_positions: Vec<Vec3>,
        velocities: Vec<Vec3>,
    ) -> Result<Self> {
        let state = Self {
            positions,
            prev_positions,
            velocities,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Appends a particle that has no motion history.
    pub fn push_at_rest(&mut self, p: Vec3) {
        self.positions.push(p);
        self.prev_positions.push(p);
        self.velocities.push(Vec3::zeros());
    }

    pub fn remove(&mut self, index: usize) {
        self.positions.remove(index);
        self.prev_positions.remove(index);
        self.velocities.remove(index);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.prev_positions.len() != n || self.velocities.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "particle state lists have lengths {}, {}, {}",
                n,
                self.prev_positions.len(),
                self.velocities.len()
            )));
        }
        if let Some(i) = self.first_non_finite() {
            return Err(Error::Numeric(format!(
                "particle {i} has a non-finite component"
            )));
        }
        Ok(())
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        let finite = |v: &Vec3| v.iter().all(|c| c.is_finite());
        (0..self.len()).find(|&i| {
            !(finite(&self.positions[i])
                && finite(&self.prev_positions[i])
                && finite(&self.velocities[i]))
        })
    }

    /// Axis-aligned bounds of the current positions, `None` when empty.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.positions.first()?;
        Some(
            self.positions
                .iter()
                .fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_mismatch_is_rejected() {
        let err = ParticleState::from_parts(vec![Vec3::zeros()], vec![], vec![Vec3::zeros()]);
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut s = ParticleState::at_rest(vec![Vec3::zeros(), Vec3::new(0.0, f64::NAN, 0.0)]);
        assert!(matches!(s.validate(), Err(Error::Numeric(_))));
        s.remove(1);
        assert!(s.validate().is_ok());
    }
}
