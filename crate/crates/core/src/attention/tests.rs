use super::*;
use crate::ctc::BoundarySource;
use crate::gradcheck::check;
use crate::rng::{stream, uniform, uniform_array};

/// Enumerates every monotone boundary sequence `j_1 <= ... <= j_i` and sums
/// the path products `prod_k prod_{l=j_{k-1}}^{j_k - 1} (1 - p[k,l]) p[k,j_k]`
/// (with `j_0 = 0`), skipping any sequence that violates `limits`.
fn brute_force_alpha(p: &[Vec<f64>], limits: &[Option<usize>]) -> Vec<Vec<f64>> {
    fn walk(
        p: &[Vec<f64>],
        limits: &[Option<usize>],
        k: usize,
        start: usize,
        mass: f64,
        out: &mut [Vec<f64>],
    ) {
        if k == p.len() {
            return;
        }
        let frames = p[k].len();
        let mut survive = 1.0;
        for j in start..frames {
            if limits[k].is_some_and(|lim| j + 1 > lim) {
                break;
            }
            let here = mass * survive * p[k][j];
            out[k][j] += here;
            walk(p, limits, k + 1, j, here, out);
            survive *= 1.0 - p[k][j];
        }
    }
    let mut out = vec![vec![0.0; p[0].len()]; p.len()];
    walk(p, limits, 0, 0, 1.0, &mut out);
    out
}

fn rows_of(a: &Array) -> Vec<Vec<f64>> {
    let (r, _) = a.dims2().unwrap();
    (0..r).map(|i| a.row_slice(i).to_vec()).collect()
}

fn alpha_of(p: &Array, parallel: bool, mask: Option<&PathMask>) -> Array {
    let t = Tape::new();
    let pv = t.constant(p.clone());
    let a = if parallel {
        expected_alignment_parallel(&t, pv, mask).unwrap()
    } else {
        expected_alignment_recursive(&t, pv, mask).unwrap()
    };
    let out = t.value(a).clone();
    out
}

fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_mask(seed: u64, rows: usize, frames: usize) -> PathMask {
    let mut rng = stream(seed, &[99]);
    let mut b = Vec::new();
    let mut cur = 1;
    for _ in 0..rows {
        cur = crate::rng::int_inclusive(&mut rng, cur, frames);
        b.push(cur);
    }
    let delta = crate::rng::int_inclusive(&mut rng, 0, 2);
    PathMask::new(BoundarySequence::new(b, BoundarySource::ExternalFile, 40.0), delta, frames).unwrap()
}

#[test]
fn single_token_half_probabilities() {
    let p = Array::from_rows(&[vec![0.5, 0.5, 0.5]]).unwrap();
    let brute = brute_force_alpha(&rows_of(&p), &[None]);
    for (a, e) in brute[0].iter().zip([0.5, 0.25, 0.125]) {
        assert!((a - e).abs() < 1e-15);
    }
    for parallel in [false, true] {
        let a = alpha_of(&p, parallel, None);
        for (x, e) in a.data().iter().zip([0.5, 0.25, 0.125]) {
            assert!((x - e).abs() < 1e-12, "{parallel}: {x} vs {e}");
        }
    }
}

#[test]
fn saturated_probabilities_stop_every_token_at_the_first_frame() {
    // With p = 1 each token halts where the previous one did.
    let p = Array::full(&[3, 4], 1.0);
    for parallel in [false, true] {
        let a = alpha_of(&p, parallel, None);
        for i in 0..3 {
            for j in 0..4 {
                let e = if j == 0 { 1.0 } else { 0.0 };
                assert!((a.get2(i, j) - e).abs() < 1e-6, "{parallel} ({i},{j}) = {}", a.get2(i, j));
            }
        }
    }
}

#[test]
fn mask_zeroes_frames_after_limit() {
    let p = Array::full(&[1, 4], 0.3);
    let mask = PathMask::new(BoundarySequence::new(vec![2], BoundarySource::GroundTruth, 40.0), 0, 4).unwrap();
    for parallel in [false, true] {
        let a = alpha_of(&p, parallel, Some(&mask));
        assert_eq!(a.get2(0, 2), 0.0);
        assert_eq!(a.get2(0, 3), 0.0);
        assert!(a.get2(0, 1) > 0.0);
    }
}

#[test]
fn mask_rejects_bad_boundaries() {
    let b = BoundarySequence::new(vec![3, 2], BoundarySource::ExternalFile, 40.0);
    assert!(PathMask::new(b, 0, 4).is_err());
    let b = BoundarySequence::new(vec![5], BoundarySource::ExternalFile, 40.0);
    assert!(PathMask::new(b, 0, 4).is_err());
}

#[test]
fn recursive_matches_brute_force() {
    for seed in 0..50u64 {
        let mut rng = stream(seed, &[1]);
        let rows = crate::rng::int_inclusive(&mut rng, 1, 3);
        let frames = crate::rng::int_inclusive(&mut rng, 1, 6);
        let p = uniform_array(&mut rng, &[rows, frames], 0.02, 0.98);
        let brute = brute_force_alpha(&rows_of(&p), &vec![None; rows]);
        let rec = rows_of(&alpha_of(&p, false, None));
        assert!(max_diff(&rec, &brute) < 1e-8, "seed {seed}");
    }
}

#[test]
fn parallel_matches_recursive() {
    for seed in 0..20u64 {
        let mut rng = stream(seed, &[2]);
        let rows = crate::rng::int_inclusive(&mut rng, 1, 6);
        let frames = crate::rng::int_inclusive(&mut rng, 1, 12);
        let p = uniform_array(&mut rng, &[rows, frames], 0.05, 0.95);
        let rec = rows_of(&alpha_of(&p, false, None));
        let par = rows_of(&alpha_of(&p, true, None));
        assert!(max_diff(&rec, &par) < 1e-6, "seed {seed}: {}", max_diff(&rec, &par));
    }
}

#[test]
fn masked_recurrence_matches_masked_brute_force() {
    for seed in 0..40u64 {
        let mut rng = stream(seed, &[3]);
        let rows = crate::rng::int_inclusive(&mut rng, 1, 3);
        let frames = crate::rng::int_inclusive(&mut rng, 2, 6);
        let p = uniform_array(&mut rng, &[rows, frames], 0.05, 0.95);
        let mask = random_mask(seed, rows, frames);
        let limits: Vec<Option<usize>> = (0..rows).map(|i| mask.limit(i)).collect();
        let brute = brute_force_alpha(&rows_of(&p), &limits);
        for parallel in [false, true] {
            let a = alpha_of(&p, parallel, Some(&mask));
            for i in 0..rows {
                let lim = limits[i].unwrap();
                for j in lim..frames {
                    assert_eq!(a.get2(i, j), 0.0);
                }
            }
            assert!(max_diff(&rows_of(&a), &brute) < 1e-8, "seed {seed} parallel {parallel}");
        }
    }
}

#[test]
fn alignment_mass_is_at_most_one_per_row() {
    for seed in 0..20u64 {
        let mut rng = stream(seed, &[4]);
        let p = uniform_array(&mut rng, &[5, 10], 0.0, 1.0);
        let a = alpha_of(&p, true, None);
        for i in 0..5 {
            let s: f64 = a.row_slice(i).iter().sum();
            assert!(s <= 1.0 + 1e-8);
            assert!(a.row_slice(i).iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn discount_never_increases_row_mass() {
    for seed in 0..30u64 {
        let mut rng = stream(seed, &[5]);
        let p = uniform_array(&mut rng, &[3, 6], 0.05, 0.95);
        let lam = uniform(&mut rng, 0.01, 0.5);
        let base = brute_force_alpha(&rows_of(&p), &[None; 3]);
        let disc = brute_force_alpha(&rows_of(&p.map(|v| (1.0 - lam) * v)), &[None; 3]);
        let rec = rows_of(&alpha_of(&p.map(|v| (1.0 - lam) * v), false, None));
        assert!(max_diff(&disc, &rec) < 1e-8);
        for i in 0..3 {
            let sb: f64 = base[i].iter().sum();
            let sd: f64 = disc[i].iter().sum();
            assert!(sd <= sb + 1e-12, "seed {seed} row {i}: {sd} > {sb}");
        }
    }
}

#[test]
fn alignment_gradients_match_finite_differences() {
    for seed in 0..10u64 {
        let mut rng = stream(seed, &[6]);
        let p = uniform_array(&mut rng, &[3, 5], 0.1, 0.9);
        let w = uniform_array(&mut rng, &[3, 5], -1.0, 1.0);
        for parallel in [false, true] {
            let r = check(&[p.clone()], 1e-5, |t, v| {
                let a = if parallel {
                    expected_alignment_parallel(t, v[0], None)?
                } else {
                    expected_alignment_recursive(t, v[0], None)?
                };
                t.sum(t.mul(a, t.constant(w.clone()))?)
            })
            .unwrap();
            assert!(r.max_rel_error < 1e-4, "seed {seed} parallel {parallel}: {}", r.max_rel_error);
        }
        let r = check(&[p.clone()], 1e-5, |t, v| t.sum(expected_alignment_parallel(t, v[0], None)?)).unwrap();
        assert!(r.max_rel_error < 1e-4);
    }
}

/// The chunkwise formula evaluated with plain loops.
fn beta_reference(alpha: &[f64], u: &[f64], w: usize) -> Vec<f64> {
    let n = alpha.len();
    (0..n)
        .map(|j| {
            (j..(j + w).min(n))
                .map(|k| {
                    let lo = (k + 1).saturating_sub(w);
                    let denom: f64 = (lo..=k).map(|l| u[l].exp()).sum();
                    alpha[k] * u[j].exp() / denom
                })
                .sum()
        })
        .collect()
}

fn beta_of(alpha: &Array, u: &Array, w: usize) -> Array {
    let t = Tape::new();
    let b = chunkwise_weights(&t, t.constant(alpha.clone()), t.constant(u.clone()), w).unwrap();
    let out = t.value(b).clone();
    out
}

#[test]
fn chunk_width_one_returns_alpha() {
    let mut rng = stream(1, &[7]);
    let a = uniform_array(&mut rng, &[2, 5], 0.0, 0.3);
    let u = uniform_array(&mut rng, &[2, 5], -2.0, 2.0);
    assert_eq!(beta_of(&a, &u, 1), a);
}

#[test]
fn uniform_energies_average_neighbouring_alphas() {
    let a = Array::from_rows(&[vec![0.1, 0.2, 0.3, 0.15, 0.05]]).unwrap();
    let u = Array::zeros(&[1, 5]);
    let b = beta_of(&a, &u, 2);
    for j in 1..4 {
        let e = (a.get2(0, j) + a.get2(0, j + 1)) / 2.0;
        assert!((b.get2(0, j) - e).abs() < 1e-15, "j={j}");
    }
}

#[test]
fn chunkwise_weights_match_loops_and_conserve_mass() {
    for seed in 0..20u64 {
        let mut rng = stream(seed, &[8]);
        let w = crate::rng::int_inclusive(&mut rng, 1, 5);
        let a = uniform_array(&mut rng, &[3, 9], 0.0, 0.2);
        let u = uniform_array(&mut rng, &[3, 9], -3.0, 3.0);
        let b = beta_of(&a, &u, w);
        for i in 0..3 {
            let reference = beta_reference(a.row_slice(i), u.row_slice(i), w);
            for (x, y) in b.row_slice(i).iter().zip(&reference) {
                assert!((x - y).abs() < 1e-12);
            }
            let sa: f64 = a.row_slice(i).iter().sum();
            let sb: f64 = b.row_slice(i).iter().sum();
            assert!((sa - sb).abs() < 1e-8);
        }
    }
}

#[test]
fn chunkwise_gradients_match_finite_differences() {
    for seed in 0..10u64 {
        let mut rng = stream(seed, &[9]);
        let a = uniform_array(&mut rng, &[2, 7], 0.0, 0.3);
        let u = uniform_array(&mut rng, &[2, 7], -2.0, 2.0);
        let h = uniform_array(&mut rng, &[7, 3], -1.0, 1.0);
        let r = check(&[a, u], 1e-5, |t, v| {
            let b = chunkwise_weights(t, v[0], v[1], 3)?;
            let ctx = t.matmul(b, t.constant(h.clone()))?;
            t.sum(t.mul(ctx, ctx)?)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "seed {seed}: {}", r.max_rel_error);
    }
}

#[test]
fn hard_chunk_attend_windows() {
    let enc = Array::from_rows(&(0..6).map(|j| vec![j as f64, 10.0 * j as f64]).collect::<Vec<_>>()).unwrap();
    let u = [0.3, -1.0, 2.0, 0.0, 0.0, 0.7];
    assert_eq!(hard_chunk_attend(&enc, 3, 1, &u).unwrap(), enc.row_slice(2).to_vec());
    let ctx = hard_chunk_attend(&enc, 5, 2, &[0.0; 6]).unwrap();
    assert!((ctx[0] - 3.5).abs() < 1e-15 && (ctx[1] - 35.0).abs() < 1e-12);
    assert_eq!(hard_chunk_attend(&enc, 1, 4, &u).unwrap(), enc.row_slice(0).to_vec());
    assert!(hard_chunk_attend(&enc, 0, 2, &u).is_err());
    assert!(hard_chunk_attend(&enc, 7, 2, &u).is_err());
}

#[test]
fn selection_from_zero_energy_is_half() {
    let t = Tape::new();
    let e = t.constant(Array::zeros(&[2, 3]));
    let s = selection_probabilities(&t, e, None, 0.0).unwrap();
    assert!(t.value(s.p).data().iter().all(|&v| v == 0.5));
    assert_eq!(s.p, s.p_discounted);
}

#[test]
fn energy_offset_sets_initial_probability() {
    // Zero projections leave only the offset r = -4.
    let t = Tape::new();
    let d = 3;
    let energy = MonotonicEnergy {
        w_query: t.param(Array::zeros(&[d, d])),
        w_key: t.param(Array::zeros(&[d, d])),
        bias: t.param(Array::zeros(&[d])),
        v: t.param(Array::full(&[d, 1], 0.5)),
        gain: t.param(Array::scalar(1.0 / (d as f64).sqrt())),
        offset: t.param(Array::scalar(-4.0)),
    };
    let q = t.constant(uniform_array(&mut stream(0, &[]), &[2, d], -1.0, 1.0));
    let h = t.constant(uniform_array(&mut stream(1, &[]), &[4, d], -1.0, 1.0));
    let keys = energy.project_keys(&t, h).unwrap();
    let e = energy.energies(&t, q, keys).unwrap();
    let s = selection_probabilities(&t, e, None, 0.0).unwrap();
    for &v in t.value(s.p).data() {
        assert!((v - 0.017986).abs() < 1e-6, "{v}");
    }
}

#[test]
fn selection_without_noise_is_deterministic_and_noise_is_seeded() {
    let run = |noise_seed: Option<u64>| {
        let t = Tape::new();
        let e = t.constant(uniform_array(&mut stream(3, &[]), &[2, 4], -2.0, 2.0));
        let mut rng = stream(noise_seed.unwrap_or(0), &[]);
        let noise = noise_seed.map(|_| (&mut rng, 1.0));
        let s = selection_probabilities(&t, e, noise, 0.0).unwrap();
        let out = t.value(s.p).clone();
        out
    };
    assert_eq!(run(None), run(None));
    assert_eq!(run(Some(4)), run(Some(4)));
    assert_ne!(run(Some(4)), run(None));
}

#[test]
fn discount_examples() {
    let t = Tape::new();
    let p = t.constant(Array::full(&[1, 2], 0.5));
    let same = discount(&t, p, 0.0).unwrap();
    assert_eq!(*t.value(same.p_discounted), *t.value(p));
    let d = discount(&t, p, 0.1).unwrap();
    for &v in t.value(d.p_discounted).data() {
        assert!((v - 0.45).abs() < 1e-15);
    }
    assert!(discount(&t, p, 1.0).is_err());
    assert!(discount(&t, p, -0.1).is_err());
    // A trained p that recovers the discount has to clear 0.5 / (1 - 0.2).
    let lam: f64 = 0.2;
    assert!((0.5 / (1.0 - lam) - 0.625).abs() < 1e-15);
}
