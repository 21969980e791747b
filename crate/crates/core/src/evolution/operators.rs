//! Variation operators on bitstring genomes.

use rand::seq::index;
use rand::Rng;

use super::EvolutionError;
use crate::genome::Genome;

/// Uniform crossover: each bit comes from `donor` with probability `p1`,
/// otherwise from `baseline`. One draw per bit, in bit order.
pub fn crossover<R: Rng + ?Sized>(
    baseline: &Genome,
    donor: &Genome,
    p1: f64,
    rng: &mut R,
) -> Result<Genome, EvolutionError> {
    if baseline.len() != donor.len() {
        return Err(EvolutionError::LengthMismatch {
            baseline: baseline.len(),
            donor: donor.len(),
        });
    }
    let bits = baseline
        .bits()
        .iter()
        .zip(donor.bits())
        .map(|(&b, &d)| if rng.gen_bool(p1) { d } else { b })
        .collect();
    Ok(Genome::from_bits(bits))
}

/// Flips every bit independently with probability `p2`.
pub fn mutate<R: Rng + ?Sized>(parent: &Genome, p2: f64, rng: &mut R) -> Genome {
    let bits = parent
        .bits()
        .iter()
        .map(|&b| b ^ rng.gen_bool(p2))
        .collect();
    Genome::from_bits(bits)
}

/// Flips `n_b` distinct bits of `seed`, with `n_b` uniform in `1..=max_flips`.
pub fn flip_mutant<R: Rng + ?Sized>(seed: &Genome, max_flips: usize, rng: &mut R) -> Genome {
    let count = rng.gen_range(1..=max_flips.min(seed.len()));
    let mut g = seed.clone();
    for i in index::sample(rng, seed.len(), count) {
        g.flip(i);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::GenomeLayout;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_genome(rng: &mut ChaCha8Rng) -> Genome {
        Genome::from_bits((0..142).map(|_| rng.gen()).collect())
    }

    #[test]
    fn crossover_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_genome(&mut rng);
        let b = random_genome(&mut rng);
        assert_eq!(crossover(&a, &b, 0.0, &mut rng).unwrap(), a);
        assert_eq!(crossover(&a, &b, 1.0, &mut rng).unwrap(), b);
        let short = Genome::from_bits(vec![true; 10]);
        assert!(crossover(&a, &short, 0.5, &mut rng).is_err());
    }

    #[test]
    fn mutation_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_genome(&mut rng);
        assert_eq!(mutate(&a, 0.0, &mut rng), a);
        let flipped = mutate(&a, 1.0, &mut rng);
        assert_eq!(flipped.hamming(&a), 142);
    }

    /// Mean Hamming distance to the baseline over many trials against the
    /// binomial expectation `p1 * d` where `d` is the parents' distance.
    #[test]
    fn crossover_distance_matches_binomial() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_genome(&mut rng);
        let b = random_genome(&mut rng);
        let d = a.hamming(&b) as f64;
        let trials = 10_000;
        let total: usize = (0..trials)
            .map(|_| crossover(&a, &b, 0.5, &mut rng).unwrap().hamming(&a))
            .sum();
        let mean = total as f64 / trials as f64;
        let expected = 0.5 * d;
        let sigma_mean = (d * 0.25).sqrt() / (trials as f64).sqrt();
        assert!(
            (mean - expected).abs() < 3.0 * sigma_mean,
            "mean {mean} vs {expected}"
        );
    }

    #[test]
    fn mutation_rate_matches_binomial() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Genome::zeros(&GenomeLayout::default());
        let trials = 10_000;
        let total: usize = (0..trials)
            .map(|_| mutate(&a, 0.02, &mut rng).hamming(&a))
            .sum();
        let mean = total as f64 / trials as f64;
        let expected = 142.0 * 0.02;
        let sigma_mean = (142.0 * 0.02 * 0.98f64).sqrt() / (trials as f64).sqrt();
        assert!(
            (mean - expected).abs() < 3.0 * sigma_mean,
            "mean {mean} vs {expected}"
        );
    }

    #[test]
    fn flip_mutant_distance_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seed = Genome::seed();
        for _ in 0..200 {
            assert_eq!(flip_mutant(&seed, 1, &mut rng).hamming(&seed), 1);
            let d = flip_mutant(&seed, 20, &mut rng).hamming(&seed);
            assert!((1..=20).contains(&d));
        }
    }
}
