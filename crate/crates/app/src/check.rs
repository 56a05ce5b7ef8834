//! Seeded self-checks of the thermodynamic maps for a configured species set.

use pnpf_core::diagnostics::check_subspace_pd;
use pnpf_core::model::{entropy_variables, fermi_dirac};
use pnpf_core::SpeciesParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub samples: usize,
    pub roundtrip_max_error: f64,
    pub subspace_failures: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.roundtrip_max_error <= 1e-12 && self.subspace_failures == 0
    }
}

/// Uniform point of the open simplex with `n + 1` components.
pub fn random_simplex_point(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..=n).map(|_| -(1.0 - rng.gen::<f64>()).ln() + 1e-300).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn self_check(params: &SpeciesParams, seed: u64, samples: usize) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.n();
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..samples {
        let u = random_simplex_point(&mut rng, n);
        let phi = rng.gen_range(-2.0..2.0);
        if let Ok(w) = entropy_variables(&u, phi, params) {
            let back = fermi_dirac(&w, phi, params);
            for (a, b) in u.iter().zip(&back) {
                worst = worst.max((a - b).abs());
            }
        }
        let y: Vec<f64> = (0..=n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        match check_subspace_pd(&u, params, &y) {
            Ok(c) if c.holds => {}
            _ => failures += 1,
        }
    }
    CheckReport {
        samples,
        roundtrip_max_error: worst,
        subspace_failures: failures,
    }
}
