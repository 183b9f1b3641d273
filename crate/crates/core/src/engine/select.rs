//! Parent pairing, survival and elite reinsertion.

use rand::Rng;

use crate::selection::{normalize_weights, tempered_softmax, weighted_draw, SelectionError};
use crate::types::{ParentPair, PromptIndividual};

/// Roulette draws per pair before giving up on distinct fitness.
pub const PAIR_ATTEMPTS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct ParentSelection {
    pub pairs: Vec<ParentPair>,
    /// Every roulette draw in order, including rejected ones.
    pub raw_draws: Vec<usize>,
}

fn fitness_of(individuals: &[PromptIndividual]) -> Result<Vec<f64>, SelectionError> {
    individuals
        .iter()
        .enumerate()
        .map(|(index, ind)| {
            ind.fitness.ok_or(SelectionError::InvalidScore {
                index,
                value: f64::NAN,
            })
        })
        .collect()
}

/// `k` roulette-wheel pairs whose members differ in fitness. After
/// [`PAIR_ATTEMPTS`] failed tries a pair falls back to two distinct
/// individuals chosen uniformly and is flagged `constraint_relaxed`.
pub fn select_parent_pairs<R: Rng + ?Sized>(
    individuals: &[PromptIndividual],
    k: usize,
    rng: &mut R,
) -> Result<ParentSelection, SelectionError> {
    if individuals.len() < 2 {
        return Err(SelectionError::TooFew {
            needed: 2,
            found: individuals.len(),
        });
    }
    if k == 0 {
        return Err(SelectionError::ZeroCount);
    }
    let fitness = fitness_of(individuals)?;
    let weights = normalize_weights(&fitness)?;
    let mut pairs = Vec::with_capacity(k);
    let mut raw_draws = Vec::new();
    for _ in 0..k {
        let mut found = None;
        for _ in 0..PAIR_ATTEMPTS {
            let d = weighted_draw(&weights, 2, rng)?;
            raw_draws.extend_from_slice(&d);
            if fitness[d[0]] != fitness[d[1]] {
                found = Some((d[0], d[1]));
                break;
            }
        }
        let pair = match found {
            Some((a, b)) => ParentPair::new(individuals[a].clone(), individuals[b].clone())
                .expect("members differ in fitness"),
            None => {
                let n = individuals.len();
                let a = rng.random_range(0..n);
                let mut b = rng.random_range(0..n - 1);
                if b >= a {
                    b += 1;
                }
                ParentPair::relaxed(individuals[a].clone(), individuals[b].clone())
            }
        };
        pairs.push(pair);
    }
    Ok(ParentSelection { pairs, raw_draws })
}

/// Samples `n` survivors without replacement, each draw from a tempered
/// softmax over the fitness of whoever is left. Output is in draw order.
pub fn survival_select<R: Rng + ?Sized>(
    candidates: Vec<PromptIndividual>,
    n: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<Vec<PromptIndividual>, SelectionError> {
    if n == 0 {
        return Err(SelectionError::ZeroCount);
    }
    if candidates.len() < n {
        return Err(SelectionError::TooFew {
            needed: n,
            found: candidates.len(),
        });
    }
    let mut remaining = candidates;
    let mut fitness = fitness_of(&remaining)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let probs = tempered_softmax(&fitness, temperature)?;
        let i = weighted_draw(&probs, 1, rng)?[0];
        fitness.remove(i);
        out.push(remaining.remove(i));
    }
    Ok(out)
}

/// Puts the elite back if its text is missing, replacing the weakest member
/// (lowest id among ties) in place.
pub fn reinsert_elite(individuals: &mut [PromptIndividual], elite: &PromptIndividual) -> bool {
    if individuals.is_empty() || individuals.iter().any(|i| i.text == elite.text) {
        return false;
    }
    let worst = individuals
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            a.fitness_or_min()
                .total_cmp(&b.fitness_or_min())
                .then(a.id.cmp(&b.id))
        })
        .map(|(i, _)| i)
        .expect("non-empty");
    individuals[worst] = elite.clone();
    true
}

/// Candidate pool for survival: one individual per distinct text (earliest
/// wins), topped up with duplicates only if that leaves fewer than `n`.
pub fn survival_pool(candidates: Vec<PromptIndividual>, n: usize) -> Vec<PromptIndividual> {
    let mut pool: Vec<PromptIndividual> = Vec::with_capacity(candidates.len());
    let mut dups = Vec::new();
    for ind in candidates {
        if pool.iter().any(|p| p.text == ind.text) {
            dups.push(ind);
        } else {
            pool.push(ind);
        }
    }
    let missing = n.saturating_sub(pool.len());
    pool.extend(dups.into_iter().take(missing));
    pool
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RunRng;
    use crate::types::{IndividualId, Origin};

    fn ind(id: u64, f: f64) -> PromptIndividual {
        PromptIndividual::new(IndividualId(id), format!("p{id}"), Origin::Seed, vec![], 0)
            .unwrap()
            .with_fitness(f)
            .unwrap()
    }

    fn pop(fs: &[f64]) -> Vec<PromptIndividual> {
        fs.iter().enumerate().map(|(i, &f)| ind(i as u64, f)).collect()
    }

    #[test]
    fn pair_orders_better_first() {
        let mut rng = RunRng::from_seed(1);
        let sel = select_parent_pairs(&pop(&[0.9, 0.1]), 1, &mut rng).unwrap();
        assert_eq!(sel.pairs[0].better.id, IndividualId(0));
        assert!(!sel.pairs[0].constraint_relaxed);
    }

    #[test]
    fn equal_fitness_relaxes() {
        let mut rng = RunRng::from_seed(1);
        let sel = select_parent_pairs(&pop(&[0.5, 0.5, 0.5]), 1, &mut rng).unwrap();
        let p = &sel.pairs[0];
        assert!(p.constraint_relaxed);
        assert_ne!(p.better.id, p.worse.id);
        assert_eq!(sel.raw_draws.len(), 2 * PAIR_ATTEMPTS);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn pairs_always_valid() {
        let mut rng = RunRng::from_seed(9);
        let sel = select_parent_pairs(&pop(&[1.0, 0.0, 0.0, 0.3, 0.3]), 200, &mut rng).unwrap();
        assert_eq!(sel.pairs.len(), 200);
        for p in &sel.pairs {
            assert!(p.validate().is_ok());
            assert!(p.constraint_relaxed || p.better.fitness > p.worse.fitness);
        }
    }

    #[test]
    fn raw_draw_frequency_follows_fitness() {
        let mut rng = RunRng::from_seed(2024);
        let sel = select_parent_pairs(&pop(&[0.7, 0.2, 0.1]), 10_000, &mut rng).unwrap();
        let hits = sel.raw_draws.iter().filter(|&&i| i == 0).count();
        let freq = hits as f64 / sel.raw_draws.len() as f64;
        assert!((freq - 0.7).abs() < 0.02, "{freq}");
    }

    #[test]
    fn needs_two_individuals() {
        let mut rng = RunRng::from_seed(1);
        assert!(select_parent_pairs(&pop(&[0.5]), 1, &mut rng).is_err());
        assert!(survival_select(pop(&[0.5]), 2, 0.1, &mut rng).is_err());
    }

    #[test]
    fn survival_of_whole_pool_keeps_everyone() {
        let mut rng = RunRng::from_seed(3);
        let out = survival_select(pop(&[0.9, 0.1]), 2, 0.1, &mut rng).unwrap();
        let mut ids: Vec<_> = out.iter().map(|i| i.id.0).collect();
        ids.sort();
        assert_eq!(ids, vec![0, 1]);
        assert_eq!(survival_select(pop(&[0.4]), 1, 0.1, &mut rng).unwrap()[0].id, IndividualId(0));
    }

    #[test]
    fn survival_frequency_matches_softmax() {
        let e = |x: f64| x.exp();
        let expected = e(9.0) / (e(9.0) + e(8.0) + e(1.0));
        let mut rng = RunRng::from_seed(77);
        let trials = 100_000;
        let candidates = pop(&[0.9, 0.8, 0.1]);
        let wins = (0..trials)
            .filter(|_| survival_select(candidates.clone(), 1, 0.1, &mut rng).unwrap()[0].id.0 == 0)
            .count();
        let freq = wins as f64 / trials as f64;
        assert!((freq - expected).abs() < 0.01, "{freq} vs {expected}");
    }

    #[test]
    fn reinsertion_rules() {
        let mut p = pop(&[0.5, 0.2, 0.7]);
        let before = p.clone();
        assert!(!reinsert_elite(&mut p, &before[2]));
        assert_eq!(p, before);

        let elite = ind(9, 0.9);
        assert!(reinsert_elite(&mut p, &elite));
        assert_eq!(p.iter().map(|i| i.id.0).collect::<Vec<_>>(), vec![0, 9, 2]);

        let mut tied = vec![ind(5, 0.2), ind(3, 0.2), ind(4, 0.6)];
        reinsert_elite(&mut tied, &elite);
        assert_eq!(tied.iter().map(|i| i.id.0).collect::<Vec<_>>(), vec![5, 9, 4]);
    }

    #[test]
    fn pool_prefers_distinct_texts() {
        let mut dup = ind(7, 0.5);
        dup.text = "p0".into();
        let pool = survival_pool(vec![ind(0, 0.5), ind(1, 0.1), dup.clone()], 2);
        assert_eq!(pool.iter().map(|i| i.id.0).collect::<Vec<_>>(), vec![0, 1]);
        let pool = survival_pool(vec![ind(0, 0.5), dup], 2);
        assert_eq!(pool.len(), 2);
    }
}
