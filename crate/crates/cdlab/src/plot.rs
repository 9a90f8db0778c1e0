//! Deterministic raster plots: sample scatter over model density contours,
//! written as binary PPM. Purely advisory output; never gates tests.

use crate::dist::GaussianMixture;
use crate::error::{Error, Result};
use crate::grid::Bounds;
use crate::linalg::Vec2;
use std::io::Write;
use std::path::Path;

const WIDTH: usize = 480;
const HEIGHT: usize = 480;
const CONTOUR_LEVELS: [f64; 2] = [0.5, 0.1]; // fractions of each model's max
const COLORS: [[u8; 3]; 4] = [
    [220, 60, 60],
    [60, 120, 220],
    [50, 170, 90],
    [200, 140, 40],
];

fn plot_bounds(samples: &[Vec2], contours: &[GaussianMixture]) -> Result<Bounds> {
    let mut centers: Vec<Vec2> = samples.to_vec();
    let mut radii = vec![0.5; samples.len()];
    for m in contours {
        for g in m.components() {
            centers.push(g.mean);
            radii.push(3.5 * g.cov.eigenvalues().1.sqrt());
        }
    }
    Bounds::cover(&centers, &radii)
}

/// Render `samples` as dark dots over iso-density contour bands of each
/// mixture in `contours`. Byte-identical output for identical inputs.
pub fn render_scatter(
    samples: &[Vec2],
    contours: &[GaussianMixture],
    path: &Path,
) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Distribution("no samples to plot".into()));
    }
    let b = plot_bounds(samples, contours)?;
    let mut img = vec![255u8; WIDTH * HEIGHT * 3];
    let to_px = |x: Vec2| -> (f64, f64) {
        (
            (x[0] - b.x0) / (b.x1 - b.x0) * WIDTH as f64,
            // raster rows run top to bottom
            (b.y1 - x[1]) / (b.y1 - b.y0) * HEIGHT as f64,
        )
    };
    // contour bands
    for (k, m) in contours.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut peak = 0.0f64;
        for g in m.components() {
            peak = peak.max(m.density(g.mean));
        }
        for py in 0..HEIGHT {
            for px in 0..WIDTH {
                let x = b.x0 + (px as f64 + 0.5) / WIDTH as f64 * (b.x1 - b.x0);
                let y = b.y1 - (py as f64 + 0.5) / HEIGHT as f64 * (b.y1 - b.y0);
                let d = m.density([x, y]) / peak;
                for level in CONTOUR_LEVELS {
                    if d > level * 0.93 && d < level * 1.07 {
                        let i = (py * WIDTH + px) * 3;
                        img[i] = color[0];
                        img[i + 1] = color[1];
                        img[i + 2] = color[2];
                    }
                }
            }
        }
    }
    // samples as 2x2 dark dots
    for &s in samples {
        let (fx, fy) = to_px(s);
        let (px, py) = (fx.floor() as isize, fy.floor() as isize);
        for dy in 0..2isize {
            for dx in 0..2isize {
                let (qx, qy) = (px + dx, py + dy);
                if qx >= 0 && qy >= 0 && (qx as usize) < WIDTH && (qy as usize) < HEIGHT {
                    let i = (qy as usize * WIDTH + qx as usize) * 3;
                    img[i] = 30;
                    img[i + 1] = 30;
                    img[i + 2] = 30;
                }
            }
        }
    }
    let mut buf = Vec::with_capacity(img.len() + 32);
    write!(buf, "P6\n{WIDTH} {HEIGHT}\n255\n").expect("in-memory write");
    buf.extend_from_slice(&img);
    std::fs::write(path, &buf).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Gaussian2;

    #[test]
    fn plot_is_deterministic_and_valid_ppm() {
        let dir = tempfile::tempdir().unwrap();
        let m = GaussianMixture::single(Gaussian2::isotropic([0.0, 0.0], 1.0).unwrap());
        let samples: Vec<Vec2> = (0..50)
            .map(|i| {
                let a = i as f64 * 0.1;
                [a.cos(), a.sin()]
            })
            .collect();
        let p1 = dir.path().join("a.ppm");
        let p2 = dir.path().join("b.ppm");
        render_scatter(&samples, &[m.clone()], &p1).unwrap();
        render_scatter(&samples, &[m], &p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
        assert!(b1.starts_with(b"P6\n480 480\n255\n"));
        assert_eq!(b1.len(), 15 + 480 * 480 * 3);
    }

    #[test]
    fn scatter_only_without_contours() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.ppm");
        render_scatter(&[[0.0, 0.0], [1.0, 1.0]], &[], &p).unwrap();
        assert!(p.exists());
        assert!(render_scatter(&[], &[], &p).is_err());
    }
}
