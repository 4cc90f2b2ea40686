//! Three-axis rotary position encoding over (view, row, col).

use std::rc::Rc;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::real::Real;

/// Grid coordinates of one token: which view, and where in that view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenPosition {
    pub view_index: usize,
    pub row: usize,
    pub col: usize,
}

impl TokenPosition {
    pub fn new(view_index: usize, row: usize, col: usize) -> Self {
        Self {
            view_index,
            row,
            col,
        }
    }
}

/// Per-dimension phase angles for a head of size `head_dim`.
///
/// The head splits into three equal axial blocks (view, row, col). Inside a
/// block, pair `k` rotates by `base^(−k/pairs) · coordinate`; both members of
/// a pair carry the same phase.
pub fn rope3d_phases(position: TokenPosition, head_dim: usize, base: f64) -> Result<Vec<f64>> {
    let coords = [position.view_index, position.row, position.col].map(|c| c as f64);
    rope3d_phases_at(coords, head_dim, base)
}

/// Same as [`rope3d_phases`] for real-valued coordinates.
pub fn rope3d_phases_at(coords: [f64; 3], head_dim: usize, base: f64) -> Result<Vec<f64>> {
    if head_dim == 0 || head_dim % 6 != 0 {
        return Err(Error::invalid(format!(
            "head dimension {head_dim} is not divisible by 6"
        )));
    }
    let pairs = head_dim / 6;
    let mut out = Vec::with_capacity(head_dim);
    for coord in coords {
        for k in 0..pairs {
            let freq = base.powf(-(k as f64) / pairs as f64);
            let phase = freq * coord;
            out.push(phase);
            out.push(phase);
        }
    }
    Ok(out)
}

/// Cosine and sine tables `[tokens, head_dim/2]` for the rotary tape op.
pub(crate) fn rotary_tables<F: Real>(
    positions: &[TokenPosition],
    head_dim: usize,
    base: f64,
    max_freq: f64,
) -> Result<(Rc<Array2<F>>, Rc<Array2<F>>)> {
    let half = head_dim / 2;
    let mut cos = Array2::zeros((positions.len(), half));
    let mut sin = Array2::zeros((positions.len(), half));
    for (r, &p) in positions.iter().enumerate() {
        let coords = [p.view_index, p.row, p.col].map(|c| max_freq * c as f64);
        let phases = rope3d_phases_at(coords, head_dim, base)?;
        for k in 0..half {
            let ph = phases[2 * k];
            cos[[r, k]] = F::of(ph.cos());
            sin[[r, k]] = F::of(ph.sin());
        }
    }
    Ok((Rc::new(cos), Rc::new(sin)))
}

/// Applies the rotation for `position` to a single head vector.
pub fn rotate(vector: &[f64], position: TokenPosition, base: f64) -> Result<Vec<f64>> {
    let phases = rope3d_phases(position, vector.len(), base)?;
    let mut out = vec![0.0; vector.len()];
    for k in 0..vector.len() / 2 {
        let (c, s) = (phases[2 * k].cos(), phases[2 * k].sin());
        let (a, b) = (vector[2 * k], vector[2 * k + 1]);
        out[2 * k] = a * c - b * s;
        out[2 * k + 1] = a * s + b * c;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn origin_is_identity() {
        let ph = rope3d_phases(TokenPosition::new(0, 0, 0), 12, 100.0).unwrap();
        assert!(ph.iter().all(|&p| p == 0.0));
        assert!(rope3d_phases(TokenPosition::new(0, 0, 0), 8, 100.0).is_err());
    }

    #[test]
    fn phase_difference_depends_on_offset_only() {
        let a = rope3d_phases(TokenPosition::new(1, 2, 3), 12, 100.0).unwrap();
        let b = rope3d_phases(TokenPosition::new(3, 5, 4), 12, 100.0).unwrap();
        let c = rope3d_phases(TokenPosition::new(6, 0, 1), 12, 100.0).unwrap();
        let d = rope3d_phases(TokenPosition::new(8, 3, 2), 12, 100.0).unwrap();
        for i in 0..12 {
            assert!(((b[i] - a[i]) - (d[i] - c[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn relative_position_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let q: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
            let pq = TokenPosition::new(rng.random_range(0..8), rng.random_range(0..16), rng.random_range(0..16));
            let pk = TokenPosition::new(rng.random_range(0..8), rng.random_range(0..16), rng.random_range(0..16));
            let shift = |p: TokenPosition| TokenPosition::new(p.view_index + 5, p.row + 3, p.col + 7);
            let base = dot(&rotate(&q, pq, 100.0).unwrap(), &rotate(&k, pk, 100.0).unwrap());
            let moved = dot(&rotate(&q, shift(pq), 100.0).unwrap(), &rotate(&k, shift(pk), 100.0).unwrap());
            let rel = (base - moved).abs() / base.abs().max(1e-12);
            assert!(rel <= 1e-5, "rel err {rel}");
        }
    }

    #[test]
    fn tables_scale_the_frequency_ladder() {
        let pos = [TokenPosition::new(0, 0, 1), TokenPosition::new(2, 0, 0)];
        let (cos, sin) = rotary_tables::<f64>(&pos, 12, 4.0, 3.0).unwrap();
        // col block starts at pair 4; view block at pair 0; ladder 3, 3/2
        assert!((sin[[0, 4]] - 3f64.sin()).abs() < 1e-15);
        assert!((sin[[0, 5]] - 1.5f64.sin()).abs() < 1e-15);
        assert!((cos[[1, 0]] - 6f64.cos()).abs() < 1e-15);
        assert!((cos[[1, 1]] - 3f64.cos()).abs() < 1e-15);
        assert_eq!(cos[[1, 2]], 1.0);
    }
}
