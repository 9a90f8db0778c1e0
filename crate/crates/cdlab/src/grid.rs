//! Discretized 2D densities on a rectangular grid: the brute-force oracle
//! for products, exponential tilts, KL divergences and optimal composition
//! weights.

use crate::error::{Error, Result};
use crate::linalg::Vec2;

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Bounds {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        if !(x0 < x1 && y0 < y1) {
            return Err(Error::Distribution("empty bounds".into()));
        }
        Ok(Bounds { x0, x1, y0, y1 })
    }

    /// Smallest rectangle containing every disc `center_i +- radius_i`.
    pub fn cover(centers: &[Vec2], radii: &[f64]) -> Result<Self> {
        if centers.is_empty() || centers.len() != radii.len() {
            return Err(Error::Distribution("need one radius per center".into()));
        }
        let mut b = Bounds {
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y0: f64::INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for (c, &r) in centers.iter().zip(radii) {
            b.x0 = b.x0.min(c[0] - r);
            b.x1 = b.x1.max(c[0] + r);
            b.y0 = b.y0.min(c[1] - r);
            b.y1 = b.y1.max(c[1] + r);
        }
        Bounds::new(b.x0, b.x1, b.y0, b.y1)
    }
}

/// Normalized density samples at cell centers of a rectangular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    bounds: Bounds,
    nx: usize,
    ny: usize,
    values: Vec<f64>,
}

impl GridField {
    /// Evaluate `f` at cell centers and normalize to unit Riemann mass.
    pub fn from_fn<F: Fn(Vec2) -> f64>(bounds: Bounds, nx: usize, ny: usize, f: F) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Distribution("grid resolution too small".into()));
        }
        let mut values = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                let v = f(Self::center(bounds, nx, ny, ix, iy));
                if !(v >= 0.0) {
                    return Err(Error::Distribution(format!(
                        "negative or NaN density sample {v}"
                    )));
                }
                values.push(v);
            }
        }
        let mut field = GridField {
            bounds,
            nx,
            ny,
            values,
        };
        field.normalize()?;
        Ok(field)
    }

    /// Raw (possibly unnormalized) values; used by product/tilt internals.
    fn from_values(bounds: Bounds, nx: usize, ny: usize, values: Vec<f64>) -> Self {
        GridField {
            bounds,
            nx,
            ny,
            values,
        }
    }

    fn center(bounds: Bounds, nx: usize, ny: usize, ix: usize, iy: usize) -> Vec2 {
        let dx = (bounds.x1 - bounds.x0) / nx as f64;
        let dy = (bounds.y1 - bounds.y0) / ny as f64;
        [
            bounds.x0 + (ix as f64 + 0.5) * dx,
            bounds.y0 + (iy as f64 + 0.5) * dy,
        ]
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell_area(&self) -> f64 {
        (self.bounds.x1 - self.bounds.x0) * (self.bounds.y1 - self.bounds.y0)
            / (self.nx * self.ny) as f64
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    fn normalize(&mut self) -> Result<f64> {
        let mass = self.total_mass();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::Infeasible(
                "field has zero total mass (disjoint supports?)".into(),
            ));
        }
        for v in &mut self.values {
            *v /= mass;
        }
        Ok(mass)
    }

    fn same_grid(&self, other: &GridField) -> bool {
        self.bounds == other.bounds && self.nx == other.nx && self.ny == other.ny
    }

    /// Riemann-sum `KL(self || other)` in nats. Cells where `self` has mass
    /// but `other` does not contribute +inf.
    pub fn kl(&self, other: &GridField) -> Result<f64> {
        if !self.same_grid(other) {
            return Err(Error::Distribution("fields on different grids".into()));
        }
        let mut acc = 0.0;
        for (&p, &q) in self.values.iter().zip(&other.values) {
            if p > 0.0 {
                if q <= 0.0 {
                    return Ok(f64::INFINITY);
                }
                acc += p * (p / q).ln();
            }
        }
        Ok(acc * self.cell_area())
    }

    /// Mean of the grid density.
    pub fn mean(&self) -> Vec2 {
        let mut m = [0.0, 0.0];
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let x = Self::center(self.bounds, self.nx, self.ny, ix, iy);
                let w = self.values[iy * self.nx + ix];
                m[0] += w * x[0];
                m[1] += w * x[1];
            }
        }
        let a = self.cell_area();
        [m[0] * a, m[1] * a]
    }

    /// Covariance of the grid density, row-major 2x2.
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let m = self.mean();
        let mut c = [[0.0; 2]; 2];
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let x = Self::center(self.bounds, self.nx, self.ny, ix, iy);
                let w = self.values[iy * self.nx + ix];
                let d = [x[0] - m[0], x[1] - m[1]];
                c[0][0] += w * d[0] * d[0];
                c[0][1] += w * d[0] * d[1];
                c[1][1] += w * d[1] * d[1];
            }
        }
        let a = self.cell_area();
        c[0][0] *= a;
        c[0][1] *= a;
        c[1][1] *= a;
        c[1][0] = c[0][1];
        c
    }

    /// Bilinear interpolation of the stored values at `x` (clamped to the
    /// cell-center lattice).
    pub fn interpolate(&self, x: Vec2) -> f64 {
        let (ix, iy, fx, fy) = self.locate(x);
        let v = |i: usize, j: usize| self.values[j * self.nx + i];
        v(ix, iy) * (1.0 - fx) * (1.0 - fy)
            + v(ix + 1, iy) * fx * (1.0 - fy)
            + v(ix, iy + 1) * (1.0 - fx) * fy
            + v(ix + 1, iy + 1) * fx * fy
    }

    /// Gradient of the bilinear interpolant.
    pub fn interpolate_grad(&self, x: Vec2) -> Vec2 {
        let (ix, iy, fx, fy) = self.locate(x);
        let v = |i: usize, j: usize| self.values[j * self.nx + i];
        let dx = (self.bounds.x1 - self.bounds.x0) / self.nx as f64;
        let dy = (self.bounds.y1 - self.bounds.y0) / self.ny as f64;
        let gx = ((v(ix + 1, iy) - v(ix, iy)) * (1.0 - fy)
            + (v(ix + 1, iy + 1) - v(ix, iy + 1)) * fy)
            / dx;
        let gy = ((v(ix, iy + 1) - v(ix, iy)) * (1.0 - fx)
            + (v(ix + 1, iy + 1) - v(ix + 1, iy)) * fx)
            / dy;
        [gx, gy]
    }

    fn locate(&self, x: Vec2) -> (usize, usize, f64, f64) {
        let dx = (self.bounds.x1 - self.bounds.x0) / self.nx as f64;
        let dy = (self.bounds.y1 - self.bounds.y0) / self.ny as f64;
        let u = ((x[0] - self.bounds.x0) / dx - 0.5).clamp(0.0, (self.nx - 2) as f64 + 1.0 - 1e-12);
        let v = ((x[1] - self.bounds.y0) / dy - 0.5).clamp(0.0, (self.ny - 2) as f64 + 1.0 - 1e-12);
        let ix = (u.floor() as usize).min(self.nx - 2);
        let iy = (v.floor() as usize).min(self.ny - 2);
        (ix, iy, u - ix as f64, v - iy as f64)
    }
}

/// Normalized weighted product `prod_i f_i^{lambda_i}` with `lambda` on the
/// simplex. Returns the field and `log Z`, the log of the pre-normalization
/// Riemann mass. Disjoint supports surface as an infeasibility error.
pub fn grid_product_and(fields: &[GridField], lambda: &[f64]) -> Result<(GridField, f64)> {
    if fields.is_empty() || fields.len() != lambda.len() {
        return Err(Error::Distribution("need one weight per field".into()));
    }
    let sum: f64 = lambda.iter().sum();
    if lambda.iter().any(|&l| l < 0.0) || (sum - 1.0).abs() > 1e-10 {
        return Err(Error::Distribution(format!(
            "weights not on the simplex (sum = {sum})"
        )));
    }
    let first = &fields[0];
    for f in fields.iter().skip(1) {
        if !first.same_grid(f) {
            return Err(Error::Distribution("fields on different grids".into()));
        }
    }
    let n = first.values.len();
    let mut values = vec![0.0f64; n];
    for (k, v) in values.iter_mut().enumerate() {
        let mut log_v = 0.0;
        let mut dead = false;
        for (f, &l) in fields.iter().zip(lambda) {
            if l == 0.0 {
                continue;
            }
            let fv = f.values[k];
            if fv <= 0.0 {
                dead = true;
                break;
            }
            log_v += l * fv.ln();
        }
        *v = if dead { 0.0 } else { log_v.exp() };
    }
    let mut out = GridField::from_values(first.bounds, first.nx, first.ny, values);
    let mass = out.normalize()?;
    Ok((out, mass.ln()))
}

/// Normalized exponential tilt `f(x) e^{lambda r(x)}`; returns `log Z_rw`.
pub fn grid_tilt<F: Fn(Vec2) -> f64>(
    field: &GridField,
    reward: F,
    lambda: f64,
) -> Result<(GridField, f64)> {
    let mut values = Vec::with_capacity(field.values.len());
    for iy in 0..field.ny {
        for ix in 0..field.nx {
            let x = GridField::center(field.bounds, field.nx, field.ny, ix, iy);
            values.push(field.values[iy * field.nx + ix] * (lambda * reward(x)).exp());
        }
    }
    let mut out = GridField::from_values(field.bounds, field.nx, field.ny, values);
    let mass = out.normalize()?;
    Ok((out, mass.ln()))
}

/// Brute-force sweep of simplex-lattice weights minimizing
/// `max_i KL(product(lambda) || f_i)`. The independent oracle for the
/// dual composition algorithms. `step` is the lattice spacing (e.g. 0.05).
pub fn grid_minimax_lambda(fields: &[GridField], step: f64) -> Result<Vec<f64>> {
    let m = fields.len();
    if m < 2 || m > 4 {
        return Err(Error::Distribution("lattice sweep supports 2..=4 fields".into()));
    }
    if !(step > 0.0 && step < 1.0) {
        return Err(Error::Distribution(format!("bad lattice step {step}")));
    }
    let units = (1.0 / step).round() as usize;
    let mut best: Option<(f64, f64, Vec<f64>)> = None; // (max_kl, dist_to_uniform, lambda)
    let mut counts = vec![0usize; m];
    sweep(&mut counts, 0, units, &mut |counts| {
        let lambda: Vec<f64> = counts.iter().map(|&c| c as f64 / units as f64).collect();
        let (prod, _) = match grid_product_and(fields, &lambda) {
            Ok(p) => p,
            Err(_) => return Ok(()), // infeasible corner of the lattice
        };
        let mut worst = 0.0f64;
        for f in fields {
            worst = worst.max(prod.kl(f)?);
        }
        let uniform = 1.0 / m as f64;
        let dist: f64 = lambda.iter().map(|l| (l - uniform) * (l - uniform)).sum();
        let better = match &best {
            None => true,
            Some((bw, bd, _)) => {
                worst < bw - 1e-12 || (worst < bw + 1e-12 && dist < bd - 1e-12)
            }
        };
        if better {
            best = Some((worst, dist, lambda));
        }
        Ok(())
    })?;
    best.map(|(_, _, l)| l)
        .ok_or_else(|| Error::Infeasible("no feasible lattice point".into()))
}

fn sweep(
    counts: &mut [usize],
    idx: usize,
    remaining: usize,
    visit: &mut dyn FnMut(&[usize]) -> Result<()>,
) -> Result<()> {
    if idx == counts.len() - 1 {
        counts[idx] = remaining;
        return visit(counts);
    }
    for c in 0..=remaining {
        counts[idx] = c;
        sweep(counts, idx + 1, remaining - c, visit)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{weighted_gaussian_product, Gaussian2, GaussianMixture};
    use crate::linalg::Mat2;
    use approx::assert_relative_eq;

    fn grid_of(m: &GaussianMixture, bounds: Bounds, n: usize) -> GridField {
        GridField::from_fn(bounds, n, n, |x| m.density(x)).unwrap()
    }

    fn wide() -> Bounds {
        Bounds::new(-8.0, 8.0, -8.0, 8.0).unwrap()
    }

    #[test]
    fn normalization_mass_is_one() {
        let g = GaussianMixture::single(Gaussian2::isotropic([0.3, -0.4], 0.8).unwrap());
        let f = grid_of(&g, wide(), 256);
        assert!((f.total_mass() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_field_product_is_identity() {
        let g = GaussianMixture::single(Gaussian2::isotropic([0.0, 0.0], 1.0).unwrap());
        let f = grid_of(&g, wide(), 128);
        let (p, log_z) = grid_product_and(std::slice::from_ref(&f), &[1.0]).unwrap();
        assert!(log_z.abs() < 1e-9);
        for (a, b) in p.values().iter().zip(f.values()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn product_matches_closed_form_gaussian_product() {
        let a = Gaussian2::isotropic([1.0, 0.5], 1.0).unwrap();
        let b = Gaussian2::new([-0.5, -0.2], Mat2::new(0.8, 0.1, 1.2)).unwrap();
        let fa = grid_of(&GaussianMixture::single(a), wide(), 256);
        let fb = grid_of(&GaussianMixture::single(b), wide(), 256);
        let (p, _) = grid_product_and(&[fa, fb], &[0.5, 0.5]).unwrap();
        let exact = weighted_gaussian_product(&[a, b], &[0.5, 0.5]).unwrap();
        let fe = grid_of(&GaussianMixture::single(exact), wide(), 256);
        for (u, v) in p.values().iter().zip(fe.values()) {
            assert!((u - v).abs() < 1e-3, "pointwise gap {}", (u - v).abs());
        }
        let m = p.mean();
        assert!((m[0] - exact.mean[0]).abs() < 1e-3);
        assert!((m[1] - exact.mean[1]).abs() < 1e-3);
    }

    #[test]
    fn disjoint_supports_are_infeasible() {
        let b = wide();
        let f1 = GridField::from_fn(b, 64, 64, |x| if x[0] < -1.0 { 1.0 } else { 0.0 }).unwrap();
        let f2 = GridField::from_fn(b, 64, 64, |x| if x[0] > 1.0 { 1.0 } else { 0.0 }).unwrap();
        assert!(matches!(
            grid_product_and(&[f1, f2], &[0.5, 0.5]),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn tilt_matches_tilted_gaussian_oracle() {
        let q = Gaussian2::isotropic([0.0, 0.0], 1.0).unwrap();
        let f = grid_of(&GaussianMixture::single(q), wide(), 256);
        let a = [0.6, -0.3];
        let lam = 1.3;
        let (tilted, _) = grid_tilt(&f, |x| a[0] * x[0] + a[1] * x[1], lam).unwrap();
        let exact = crate::dist::tilted_gaussian(&q, lam, a).unwrap();
        let m = tilted.mean();
        assert!((m[0] - exact.mean[0]).abs() < 1e-3);
        assert!((m[1] - exact.mean[1]).abs() < 1e-3);
    }

    #[test]
    fn kl_matches_closed_form() {
        let p = Gaussian2::new([0.4, -0.1], Mat2::new(0.9, 0.2, 1.1)).unwrap();
        let q = Gaussian2::new([-0.3, 0.5], Mat2::new(1.3, -0.1, 0.8)).unwrap();
        let fp = grid_of(&GaussianMixture::single(p), wide(), 256);
        let fq = grid_of(&GaussianMixture::single(q), wide(), 256);
        let exact = crate::dist::gaussian_kl(&p, &q);
        assert!((fp.kl(&fq).unwrap() - exact).abs() < 1e-3);
    }

    #[test]
    fn minimax_lambda_mirrored_pair_is_half_half() {
        let a = GaussianMixture::single(Gaussian2::isotropic([-1.0, 0.3], 0.6).unwrap());
        let b = GaussianMixture::single(Gaussian2::isotropic([1.0, 0.3], 0.6).unwrap());
        let fa = grid_of(&a, wide(), 128);
        let fb = grid_of(&b, wide(), 128);
        let l = grid_minimax_lambda(&[fa, fb], 0.02).unwrap();
        assert_relative_eq!(l[0], 0.5, epsilon = 1e-9);
        assert_relative_eq!(l[1], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn minimax_lambda_identical_copies_tie_breaks_uniform() {
        let g = GaussianMixture::single(Gaussian2::isotropic([0.2, 0.2], 1.0).unwrap());
        let f = grid_of(&g, wide(), 64);
        let l = grid_minimax_lambda(&[f.clone(), f.clone(), f], 0.05).unwrap();
        for li in &l {
            assert!((li - 1.0 / 3.0).abs() < 0.05 + 1e-9);
        }
    }

    #[test]
    fn minimax_lambda_permutation_equivariance() {
        let gs = [
            GaussianMixture::single(Gaussian2::isotropic([-1.2, -1.0], 0.5).unwrap()),
            GaussianMixture::single(Gaussian2::isotropic([1.2, -1.0], 0.5).unwrap()),
            GaussianMixture::single(Gaussian2::isotropic([0.0, 1.6833], 0.5).unwrap()),
        ];
        let fields: Vec<GridField> = gs.iter().map(|g| grid_of(g, wide(), 128)).collect();
        let l = grid_minimax_lambda(&fields, 0.05).unwrap();
        let swapped = vec![fields[2].clone(), fields[0].clone(), fields[1].clone()];
        let ls = grid_minimax_lambda(&swapped, 0.05).unwrap();
        assert_relative_eq!(ls[0], l[2], epsilon = 1e-9);
        assert_relative_eq!(ls[1], l[0], epsilon = 1e-9);
        assert_relative_eq!(ls[2], l[1], epsilon = 1e-9);
    }

    #[test]
    fn minimax_lambda_figure1_favors_far_gaussian() {
        let gs = [
            GaussianMixture::single(Gaussian2::isotropic([-1.2, -1.0], 0.5).unwrap()),
            GaussianMixture::single(Gaussian2::isotropic([1.2, -1.0], 0.5).unwrap()),
            GaussianMixture::single(Gaussian2::isotropic([0.0, 1.6833], 0.5).unwrap()),
        ];
        let fields: Vec<GridField> = gs.iter().map(|g| grid_of(g, wide(), 128)).collect();
        let l = grid_minimax_lambda(&fields, 0.05).unwrap();
        assert!(l[2] > l[0] && l[2] > l[1], "lambda = {l:?}");
        // analytic circumcenter weights for this layout
        assert!((l[0] - 0.3).abs() < 0.051);
        assert!((l[2] - 0.4).abs() < 0.051);
    }

    #[test]
    fn interpolation_gradient_matches_finite_differences() {
        let g = GaussianMixture::single(Gaussian2::isotropic([0.0, 0.0], 2.0).unwrap());
        let f = grid_of(&g, wide(), 128);
        let h = 1e-7;
        // probes placed off the cell-center lattice lines
        for &x in &[[0.37, -0.83], [1.91, 2.13], [-2.47, 0.59]] {
            let grad = f.interpolate_grad(x);
            for d in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[d] += h;
                xm[d] -= h;
                let fd = (f.interpolate(xp) - f.interpolate(xm)) / (2.0 * h);
                assert!((grad[d] - fd).abs() / grad[d].abs().max(1e-4) < 1e-5);
            }
        }
    }
}
