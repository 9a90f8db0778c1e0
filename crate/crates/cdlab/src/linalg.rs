//! Minimal 2D vector / 2x2 symmetric matrix arithmetic used throughout.

pub type Vec2 = [f64; 2];

pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn scale(a: Vec2, c: f64) -> Vec2 {
    [a[0] * c, a[1] * c]
}

pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn norm_sq(a: Vec2) -> f64 {
    dot(a, a)
}

pub fn norm(a: Vec2) -> f64 {
    norm_sq(a).sqrt()
}

/// Symmetric 2x2 matrix stored as [[a, b], [b, c]].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Mat2 {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Mat2 { a, b, c }
    }

    pub fn identity() -> Self {
        Mat2::new(1.0, 0.0, 1.0)
    }

    pub fn isotropic(v: f64) -> Self {
        Mat2::new(v, 0.0, v)
    }

    pub fn from_rows(rows: [[f64; 2]; 2]) -> Self {
        // symmetrize; caller is expected to pass a symmetric matrix
        Mat2::new(rows[0][0], 0.5 * (rows[0][1] + rows[1][0]), rows[1][1])
    }

    pub fn to_rows(self) -> [[f64; 2]; 2] {
        [[self.a, self.b], [self.b, self.c]]
    }

    pub fn det(self) -> f64 {
        self.a * self.c - self.b * self.b
    }

    pub fn trace(self) -> f64 {
        self.a + self.c
    }

    /// Eigenvalues, ascending.
    pub fn eigenvalues(self) -> (f64, f64) {
        let m = 0.5 * self.trace();
        let d = (m * m - self.det()).max(0.0).sqrt();
        (m - d, m + d)
    }

    pub fn is_spd(self, tol: f64) -> bool {
        let (lo, _) = self.eigenvalues();
        lo > tol
    }

    pub fn inverse(self) -> Mat2 {
        let d = self.det();
        Mat2::new(self.c / d, -self.b / d, self.a / d)
    }

    pub fn mul_vec(self, v: Vec2) -> Vec2 {
        [
            self.a * v[0] + self.b * v[1],
            self.b * v[0] + self.c * v[1],
        ]
    }

    pub fn mul(self, o: Mat2) -> Mat2 {
        // product of two symmetric matrices is not symmetric in general;
        // only used where it is (scalar multiples, co-diagonal cases)
        Mat2::new(
            self.a * o.a + self.b * o.b,
            self.a * o.b + self.b * o.c,
            self.b * o.b + self.c * o.c,
        )
    }

    pub fn add(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a + o.a, self.b + o.b, self.c + o.c)
    }

    pub fn scale(self, s: f64) -> Mat2 {
        Mat2::new(self.a * s, self.b * s, self.c * s)
    }

    /// Lower-triangular Cholesky factor L with L L^T = self.
    pub fn cholesky(self) -> [[f64; 2]; 2] {
        let l11 = self.a.sqrt();
        let l21 = self.b / l11;
        let l22 = (self.c - l21 * l21).max(0.0).sqrt();
        [[l11, 0.0], [l21, l22]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn inverse_roundtrip() {
        let m = Mat2::new(2.0, 0.3, 1.5);
        let p = m.mul(m.inverse());
        assert_relative_eq!(p.a, 1.0, epsilon = 1e-12);
        assert_relative_eq!(p.b, 0.0, epsilon = 1e-12);
        assert_relative_eq!(p.c, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cholesky_reconstructs() {
        let m = Mat2::new(1.3, 0.4, 0.9);
        let l = m.cholesky();
        assert_relative_eq!(l[0][0] * l[0][0], m.a, epsilon = 1e-12);
        assert_relative_eq!(l[1][0] * l[0][0], m.b, epsilon = 1e-12);
        assert_relative_eq!(l[1][0] * l[1][0] + l[1][1] * l[1][1], m.c, epsilon = 1e-12);
    }

    #[test]
    fn eigenvalues_of_diagonal() {
        let (lo, hi) = Mat2::new(0.5, 0.0, 2.0).eigenvalues();
        assert_relative_eq!(lo, 0.5);
        assert_relative_eq!(hi, 2.0);
    }
}
