use nalgebra::{Matrix2, Vector2};

pub type Point = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

#[inline]
pub fn pt(x1: f64, x2: f64) -> Point {
    Point::new(x1, x2)
}

#[inline]
pub fn diag(a: f64, b: f64) -> Mat2 {
    Mat2::new(a, 0.0, 0.0, b)
}

/// Max norm, the norm used for every distance in the crate.
#[inline]
pub fn norm(x: &Point) -> f64 {
    x[0].abs().max(x[1].abs())
}

/// Operator norm induced by the max norm (largest absolute row sum).
#[inline]
pub fn op_norm(m: &Mat2) -> f64 {
    let r0 = m[(0, 0)].abs() + m[(0, 1)].abs();
    let r1 = m[(1, 0)].abs() + m[(1, 1)].abs();
    r0.max(r1)
}

/// Inverse of a 2x2 matrix, `None` when singular.
#[inline]
pub fn inverse(m: &Mat2) -> Option<Mat2> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some(Mat2::new(m[(1, 1)] / det, -m[(0, 1)] / det, -m[(1, 0)] / det, m[(0, 0)] / det))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_sum_norm() {
        let m = Mat2::new(1.0, -2.0, 0.5, 0.25);
        assert_eq!(op_norm(&m), 3.0);
        assert_eq!(norm(&pt(-3.0, 2.0)), 3.0);
    }

    #[test]
    fn inverse_of_diagonal_is_exact() {
        let m = diag(0.5, 2.0);
        assert_eq!(inverse(&m).unwrap(), diag(2.0, 0.5));
        assert!(inverse(&Mat2::zeros()).is_none());
    }
}
