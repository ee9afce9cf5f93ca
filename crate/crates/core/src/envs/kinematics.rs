use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Planar serial chain rooted at `base`; joint angles are relative, so link
/// `k` points along the cumulative angle `q_0 + ... + q_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarChain {
    pub link_lengths: Vec<f64>,
    pub base: [f64; 2],
}

impl PlanarChain {
    pub fn uniform(num_links: usize, link_length: f64) -> Self {
        Self {
            link_lengths: vec![link_length; num_links],
            base: [0.0, 0.0],
        }
    }

    pub fn num_links(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    pub fn end_effector(&self, q: &[f64]) -> [f64; 2] {
        let mut angle = 0.0;
        let mut p = self.base;
        for (qi, l) in q.iter().zip(&self.link_lengths) {
            angle += qi;
            p[0] += l * math::cos(angle);
            p[1] += l * math::sin(angle);
        }
        p
    }

    /// End-effector position and Cartesian velocity.
    pub fn end_effector_velocity(&self, q: &[f64], qdot: &[f64]) -> ([f64; 2], [f64; 2]) {
        let mut angle = 0.0;
        let mut rate = 0.0;
        let mut p = self.base;
        let mut v = [0.0, 0.0];
        for ((qi, qdi), l) in q.iter().zip(qdot).zip(&self.link_lengths) {
            angle += qi;
            rate += qdi;
            let (s, c) = (math::sin(angle), math::cos(angle));
            p[0] += l * c;
            p[1] += l * s;
            v[0] -= l * s * rate;
            v[1] += l * c * rate;
        }
        (p, v)
    }
}

/// End effector of a chain of 0.1 m links rooted at the origin.
pub fn forward_kinematics(q: &[f64]) -> [f64; 2] {
    PlanarChain::uniform(q.len(), 0.1).end_effector(q)
}
