use nalgebra::DMatrix;
use rand::seq::{index::sample, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{column_stds, Privatizer};
use crate::data::RecordMatrix;
use crate::error::{Result, TdpError};
use crate::rng::RandomSource;

/// Relative error tolerated for a guess to count as a hit.
const RELATIVE_TOLERANCE: f64 = 0.05;

/// For each victim, copy the `unknown` columns of the released row nearest
/// on the `known` columns. Ties go to the lowest row index.
pub fn nn_attribute_attack(
    victims: &RecordMatrix,
    release: &RecordMatrix,
    known: &[usize],
    unknown: &[usize],
) -> Result<DMatrix<f64>> {
    let d = victims.ncols();
    if release.ncols() != d {
        return Err(TdpError::shape(d, release.ncols()));
    }
    if known.is_empty() || known.iter().chain(unknown).any(|&j| j >= d) {
        return Err(TdpError::invalid("known/unknown columns out of range"));
    }
    let r = release.values();
    let cols: Vec<Vec<f64>> = known.iter().map(|&j| r.column(j).iter().copied().collect()).collect();
    let nearest: Vec<usize> = (0..victims.nrows())
        .into_par_iter()
        .map(|i| {
            let probe: Vec<f64> = known.iter().map(|&j| victims.get(i, j)).collect();
            let mut best = (f64::INFINITY, 0);
            for row in 0..release.nrows() {
                let mut dist = 0.0;
                for (c, p) in cols.iter().zip(&probe) {
                    let diff = c[row] - p;
                    dist += diff * diff;
                    if dist >= best.0 {
                        break;
                    }
                }
                if dist < best.0 {
                    best = (dist, row);
                }
            }
            best.1
        })
        .collect();
    Ok(DMatrix::from_fn(victims.nrows(), unknown.len(), |i, c| r[(nearest[i], unknown[c])]))
}

/// `|guess − truth| ≤ 5%·|truth|`, or `|guess| ≤ 5%·column_std` when the truth is 0.
pub fn attribute_success(guess: f64, truth: f64, column_std: f64) -> bool {
    if truth == 0.0 {
        guess.abs() <= RELATIVE_TOLERANCE * column_std
    } else {
        (guess - truth).abs() <= RELATIVE_TOLERANCE * truth.abs()
    }
}

/// Fraction of victims the attack fails on, per unknown column.
pub fn failure_proportions(
    victims: &RecordMatrix,
    release: &RecordMatrix,
    known: &[usize],
    unknown: &[usize],
    stds: &[f64],
) -> Result<Vec<f64>> {
    let guesses = nn_attribute_attack(victims, release, known, unknown)?;
    let n = victims.nrows() as f64;
    Ok(unknown
        .iter()
        .enumerate()
        .map(|(c, &j)| {
            let misses = (0..victims.nrows())
                .filter(|&i| !attribute_success(guesses[(i, c)], victims.get(i, j), stds[j]))
                .count();
            misses as f64 / n
        })
        .collect())
}

/// Known-column counts `{1, ⌈d/2⌉, d − 1}` without duplicates.
pub fn known_counts(d: usize) -> Vec<usize> {
    let mut hs = vec![1, d.div_ceil(2), d.saturating_sub(1)];
    hs.retain(|&h| h >= 1 && h < d);
    hs.sort_unstable();
    hs.dedup();
    hs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeConfig {
    pub holdout: usize,
    pub repeats: usize,
}

impl Default for AttributeConfig {
    fn default() -> Self {
        AttributeConfig {
            holdout: 500,
            repeats: 50,
        }
    }
}

/// One (known count, target column) cell averaged over repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeCell {
    pub h: usize,
    pub column: usize,
    /// Mean of the clamped ratio.
    pub relative: f64,
    pub private_failure: f64,
    pub holdout_failure: f64,
    /// `private_failure / holdout_failure` before clamping, if defined.
    pub raw_ratio: Option<f64>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeInferenceReport {
    pub h_values: Vec<usize>,
    pub cells: Vec<AttributeCell>,
    pub protection: f64,
    pub holdout: usize,
    pub repeats: usize,
}

/// Failure on the release divided by failure on an untouched holdout,
/// clamped to `[0, 1]`. A holdout the attack never misses gives 1.
fn clamped_ratio(private: f64, holdout: f64) -> f64 {
    if holdout == 0.0 {
        1.0
    } else {
        (private / holdout).clamp(0.0, 1.0)
    }
}

/// Holdout-relative attribute inference. `X` is split once into a working
/// set `W` and a holdout `H`; every repeat privatizes `W` afresh and draws
/// new known-column subsets (all `d` subsets when `h = d − 1`). Protection is
/// the lowest cell average.
pub fn attribute_inference_protection(
    x: &RecordMatrix,
    privatizer: &dyn Privatizer,
    config: &AttributeConfig,
    rng: &RandomSource,
) -> Result<AttributeInferenceReport> {
    let (n, d) = (x.nrows(), x.ncols());
    if config.holdout == 0 || config.holdout >= n {
        return Err(TdpError::HoldoutTooLarge {
            holdout: config.holdout,
            rows: n,
        });
    }
    if d < 2 {
        return Err(TdpError::invalid("attribute inference needs at least two columns"));
    }
    if config.repeats == 0 {
        return Err(TdpError::invalid("repeats must be at least 1"));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng.derive(0));
    let (held, work) = perm.split_at(config.holdout);
    let (mut held, mut work) = (held.to_vec(), work.to_vec());
    held.sort_unstable();
    work.sort_unstable();
    let h_set = x.select_rows(&held)?;
    let w_set = x.select_rows(&work)?;
    let stds = column_stds(&w_set);
    let hs = known_counts(d);

    // (h index, column) -> (sum relative, sum private, sum holdout, count)
    let per_repeat: Vec<Vec<(usize, usize, f64, f64, f64)>> = (0..config.repeats)
        .into_par_iter()
        .map(|t| {
            let release = privatizer.release(&w_set, &mut rng.derive2(1, t as u64))?;
            let mut subset_rng = rng.derive2(2, t as u64);
            let mut out = Vec::new();
            for (hi, &h) in hs.iter().enumerate() {
                let subsets: Vec<Vec<usize>> = if h == d - 1 {
                    (0..d).map(|j| (0..d).filter(|&c| c != j).collect()).collect()
                } else {
                    let mut s = sample(&mut subset_rng, d, h).into_vec();
                    s.sort_unstable();
                    vec![s]
                };
                for known in subsets {
                    let unknown: Vec<usize> = (0..d).filter(|c| !known.contains(c)).collect();
                    let p_priv = failure_proportions(&w_set, &release, &known, &unknown, &stds)?;
                    let p_hold = failure_proportions(&w_set, &h_set, &known, &unknown, &stds)?;
                    for (c, &j) in unknown.iter().enumerate() {
                        out.push((hi, j, clamped_ratio(p_priv[c], p_hold[c]), p_priv[c], p_hold[c]));
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut sums = vec![vec![(0.0, 0.0, 0.0, 0usize); d]; hs.len()];
    for (hi, j, r, p, q) in per_repeat.into_iter().flatten() {
        let cell = &mut sums[hi][j];
        cell.0 += r;
        cell.1 += p;
        cell.2 += q;
        cell.3 += 1;
    }
    let mut cells = Vec::new();
    for (hi, row) in sums.iter().enumerate() {
        for (j, &(r, p, q, count)) in row.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let m = count as f64;
            cells.push(AttributeCell {
                h: hs[hi],
                column: j,
                relative: r / m,
                private_failure: p / m,
                holdout_failure: q / m,
                raw_ratio: (q > 0.0).then(|| p / q),
                samples: count,
            });
        }
    }
    let protection = cells.iter().map(|c| c.relative).fold(f64::INFINITY, f64::min);
    Ok(AttributeInferenceReport {
        h_values: hs,
        cells,
        protection,
        holdout: config.holdout,
        repeats: config.repeats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::IdentityPrivatizer;
    use crate::projection::gaussian_matrix;

    fn brute_nn(victims: &RecordMatrix, release: &RecordMatrix, known: &[usize], unknown: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(victims.nrows(), unknown.len(), |i, c| {
            let dists: Vec<f64> = (0..release.nrows())
                .map(|r| known.iter().map(|&j| (release.get(r, j) - victims.get(i, j)).powi(2)).sum())
                .collect();
            let best = dists.iter().copied().fold(f64::INFINITY, f64::min);
            let row = dists.iter().position(|&v| v == best).unwrap();
            release.get(row, unknown[c])
        })
    }

    #[test]
    fn exact_release_recovers_values() {
        let x = RecordMatrix::new(gaussian_matrix(12, 4, 1.0, &mut RandomSource::from_seed(1))).unwrap();
        let g = nn_attribute_attack(&x, &x, &[0, 1], &[2, 3]).unwrap();
        for i in 0..12 {
            assert_eq!(g[(i, 0)], x.get(i, 2));
            assert_eq!(g[(i, 1)], x.get(i, 3));
        }
    }

    #[test]
    fn single_release_row_is_always_the_guess() {
        let x = RecordMatrix::new(gaussian_matrix(6, 3, 1.0, &mut RandomSource::from_seed(2))).unwrap();
        let one = RecordMatrix::from_rows(&[vec![100.0, 7.0, 8.0]]).unwrap();
        let g = nn_attribute_attack(&x, &one, &[0], &[1, 2]).unwrap();
        assert!(g.row_iter().all(|r| r[0] == 7.0 && r[1] == 8.0));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let victims = RecordMatrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let release = RecordMatrix::from_rows(&[vec![1.0, 5.0], vec![-1.0, 6.0]]).unwrap();
        assert_eq!(nn_attribute_attack(&victims, &release, &[0], &[1]).unwrap()[(0, 0)], 5.0);
    }

    #[test]
    fn matches_exhaustive_search() {
        for seed in 0..20 {
            let mut rng = RandomSource::from_seed(seed);
            let mut raw = gaussian_matrix(5, 4, 1.0, &mut rng);
            raw.apply(|v| *v = v.round());
            let victims = RecordMatrix::new(raw).unwrap();
            let release = RecordMatrix::new(gaussian_matrix(5, 4, 1.0, &mut rng).map(|v| v.round())).unwrap();
            for known in [vec![0], vec![1, 3], vec![0, 1, 2]] {
                let unknown: Vec<usize> = (0..4).filter(|c| !known.contains(c)).collect();
                assert_eq!(
                    nn_attribute_attack(&victims, &release, &known, &unknown).unwrap(),
                    brute_nn(&victims, &release, &known, &unknown)
                );
            }
        }
    }

    #[test]
    fn success_rule() {
        assert!(attribute_success(1.04, 1.0, 1.0));
        assert!(!attribute_success(1.06, 1.0, 1.0));
        assert!(attribute_success(-0.02, 0.0, 1.0));
        assert!(!attribute_success(0.2, 0.0, 1.0));
    }

    #[test]
    fn h_grid() {
        assert_eq!(known_counts(10), vec![1, 5, 9]);
        assert_eq!(known_counts(2), vec![1]);
        assert_eq!(known_counts(3), vec![1, 2]);
    }

    #[test]
    fn holdout_guard() {
        let x = RecordMatrix::new(gaussian_matrix(10, 3, 1.0, &mut RandomSource::from_seed(3))).unwrap();
        let cfg = AttributeConfig { holdout: 10, repeats: 1 };
        assert!(matches!(
            attribute_inference_protection(&x, &IdentityPrivatizer, &cfg, &RandomSource::from_seed(0)),
            Err(TdpError::HoldoutTooLarge { holdout: 10, rows: 10 })
        ));
    }

    #[test]
    fn identity_matches_two_pass_oracle() {
        // 30 rows on a coarse grid so the holdout sometimes reveals values
        let mut raw = gaussian_matrix(30, 3, 1.0, &mut RandomSource::from_seed(4));
        raw.apply(|v| *v = (*v * 2.0).round());
        let x = RecordMatrix::new(raw).unwrap();
        let cfg = AttributeConfig { holdout: 10, repeats: 3 };
        let rng = RandomSource::from_seed(6);
        let report = attribute_inference_protection(&x, &IdentityPrivatizer, &cfg, &rng).unwrap();

        let mut perm: Vec<usize> = (0..30).collect();
        perm.shuffle(&mut rng.derive(0));
        let mut held = perm[..10].to_vec();
        let mut work = perm[10..].to_vec();
        held.sort_unstable();
        work.sort_unstable();
        let w = x.select_rows(&work).unwrap();
        let h = x.select_rows(&held).unwrap();
        let stds = column_stds(&w);
        let fail = |release: &RecordMatrix, known: &[usize], j: usize| -> f64 {
            let g = brute_nn(&w, release, known, &[j]);
            (0..w.nrows()).filter(|&i| !attribute_success(g[(i, 0)], w.get(i, j), stds[j])).count() as f64
                / w.nrows() as f64
        };
        // h = 2 = d - 1 enumerates every subset, so it is deterministic
        for j in 0..3 {
            let known: Vec<usize> = (0..3).filter(|&c| c != j).collect();
            let expected = clamped_ratio(fail(&w, &known, j), fail(&h, &known, j));
            let cell = report.cells.iter().find(|c| c.h == 2 && c.column == j).unwrap();
            assert_eq!(cell.samples, 3);
            assert!((cell.relative - expected).abs() < 1e-12);
        }
        assert!(report.cells.iter().all(|c| (0.0..=1.0).contains(&c.relative)));
        assert_eq!(report.protection, report.cells.iter().map(|c| c.relative).fold(1.0, f64::min));
    }

    #[test]
    fn noise_release_gives_full_protection() {
        let x = RecordMatrix::new(gaussian_matrix(60, 3, 1.0, &mut RandomSource::from_seed(7))).unwrap();
        let noise = |w: &RecordMatrix, rng: &mut RandomSource| {
            RecordMatrix::new(gaussian_matrix(w.nrows(), w.ncols(), 50.0, rng))
        };
        let cfg = AttributeConfig { holdout: 20, repeats: 2 };
        let report = attribute_inference_protection(&x, &noise, &cfg, &RandomSource::from_seed(8)).unwrap();
        assert!(report.cells.iter().all(|c| c.private_failure > 0.9));
        assert!(report.protection > 0.9);
    }
}
