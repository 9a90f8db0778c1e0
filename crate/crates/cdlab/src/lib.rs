//! Constrained alignment and composition of diffusion models at desk scale.
//!
//! Everything lives in 2D with analytic Gaussian-mixture "pretrained
//! models", so every solver output can be checked against a closed-form or
//! brute-force-grid oracle:
//!
//! * [`align`] — primal-dual reward alignment of a score network against a
//!   pretrained model under expected-reward constraints;
//! * [`compose`] — product (AND) and mixture (OR) composition with
//!   dual-ascent weight selection;
//! * [`divergence`] — path-wise and point-wise Monte-Carlo KL estimators;
//! * [`grid`] — the brute-force grid oracle for products, tilts, KLs and
//!   optimal weights.
//!
//! A small end-to-end example: compose two mirrored Gaussians and check the
//! dual weights split evenly.
//!
//! ```
//! use cdlab::compose::{dual_only_and, ComposeConfig};
//! use cdlab::dist::{Gaussian2, GaussianMixture};
//! use cdlab::schedules::{NoiseSchedule, VarianceSchedule};
//! use rand::SeedableRng;
//!
//! let a = GaussianMixture::single(Gaussian2::isotropic([-1.0, 0.0], 0.6).unwrap());
//! let b = GaussianMixture::single(Gaussian2::isotropic([1.0, 0.0], 0.6).unwrap());
//! let sched = NoiseSchedule::geometric(50).unwrap();
//! let var = VarianceSchedule::ddim(&sched, 1.0).unwrap();
//! let mut cfg = ComposeConfig::new(sched, var);
//! cfg.n_samples = 128;
//! cfg.max_rounds = 20;
//! cfg.n_final = 64;
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
//! let out = dual_only_and(&[a, b], &cfg, &mut rng).unwrap();
//! assert!((out.lambda[0] - 0.5).abs() < 0.05);
//! ```

pub mod align;
pub mod compose;
pub mod config;
pub mod diffusion;
pub mod dist;
pub mod divergence;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod mcmc;
pub mod plot;
pub mod schedules;
pub mod score_model;

pub use error::{Error, Result};

/// Compile and run the guide's code blocks as doc-tests so the book in
/// `book/` cannot drift out of sync with the library.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!(concat!("../../../book/src/", $path))]
            mod $name {}
        };
    }
    chapter!(introduction, "introduction.md");
    chapter!(schedules, "schedules.md");
    chapter!(divergences, "divergences.md");
    chapter!(alignment, "alignment.md");
    chapter!(composition, "composition.md");
    chapter!(oracle, "oracle.md");
    chapter!(cli, "cli.md");
}
