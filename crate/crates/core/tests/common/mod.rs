#![allow(dead_code)]

use rand::Rng;
use switchstab::GeneratorMatrix;

/// Irreducible generator on `n` states with rates in `[0.1, 10]`; about a
/// quarter of the off-diagonal entries are zero.
pub fn random_generator<R: Rng>(rng: &mut R, n: usize) -> GeneratorMatrix {
    loop {
        let mut rows = vec![vec![0.0; n]; n];
        for (i, row) in rows.iter_mut().enumerate() {
            let mut total = 0.0;
            for (j, entry) in row.iter_mut().enumerate() {
                if i != j && rng.random::<f64>() > 0.25 {
                    *entry = rng.random_range(0.1..10.0);
                    total += *entry;
                }
            }
            row[i] = -total;
        }
        if let Ok(g) = GeneratorMatrix::new(&rows) {
            return g;
        }
    }
}

/// Weight with `πμ > 0` and at least one negative entry.
pub fn random_mixed_weight<R: Rng>(rng: &mut R, g: &GeneratorMatrix) -> Vec<f64> {
    let pi = g.stationary_distribution().unwrap();
    loop {
        let mu: Vec<f64> = (0..g.n_states())
            .map(|_| rng.random_range(-5.0..5.0))
            .collect();
        if pi.dot(&mu) > 0.05 && mu.iter().any(|&m| m < 0.0) {
            return mu;
        }
    }
}
