use ndarray::Array2;
use pita_core::recipe::AmountVector;
use pita_core::transport::{emd_metric, exact_emd, sinkhorn, SinkhornConfig, TransportProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two-phase dense simplex with Bland's rule for `min c.x, A x = b, x >= 0`
/// (`b >= 0`). Independent of the transportation simplex in the library.
fn lp_min(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> f64 {
    let (m, n) = (a.len(), c.len());
    let width = n + m + 1;
    // rows 0..m constraints, row m phase-2 costs, row m+1 phase-1 costs
    let mut t = vec![vec![0.0; width]; m + 2];
    for i in 0..m {
        t[i][..n].copy_from_slice(&a[i]);
        t[i][n + i] = 1.0;
        t[i][width - 1] = b[i];
    }
    t[m][..n].copy_from_slice(c);
    for i in 0..m {
        for j in 0..width {
            if j < n || j == width - 1 {
                t[m + 1][j] -= t[i][j];
            }
        }
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let eps = 1e-12;

    let run = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, obj: usize, allowed: usize| loop {
        let Some(enter) = (0..allowed).find(|&j| t[obj][j] < -eps) else {
            return;
        };
        let mut leave: Option<usize> = None;
        for i in 0..m {
            if t[i][enter] > eps {
                let ratio = t[i][width - 1] / t[i][enter];
                leave = match leave {
                    None => Some(i),
                    Some(l) => {
                        let best = t[l][width - 1] / t[l][enter];
                        if ratio < best - 1e-15 || (ratio <= best + 1e-15 && basis[i] < basis[l]) {
                            Some(i)
                        } else {
                            Some(l)
                        }
                    }
                };
            }
        }
        let r = leave.expect("transport LP is bounded");
        let p = t[r][enter];
        for v in t[r].iter_mut() {
            *v /= p;
        }
        for i in 0..m + 2 {
            if i != r {
                let f = t[i][enter];
                if f != 0.0 {
                    for j in 0..width {
                        t[i][j] -= f * t[r][j];
                    }
                }
            }
        }
        basis[r] = enter;
    };
    run(&mut t, &mut basis, m + 1, n + m);
    assert!(t[m + 1][width - 1].abs() < 1e-9, "phase 1 left infeasibility");
    run(&mut t, &mut basis, m, n);
    -t[m][width - 1]
}

fn lp_emd(a: &[f64], b: &[f64], cost: &Array2<f64>) -> f64 {
    let n = a.len();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..n {
        let mut r = vec![0.0; n * n];
        for j in 0..n {
            r[i * n + j] = 1.0;
        }
        rows.push(r);
        rhs.push(a[i]);
    }
    for j in 0..n {
        let mut r = vec![0.0; n * n];
        for i in 0..n {
            r[i * n + j] = 1.0;
        }
        rows.push(r);
        rhs.push(b[j]);
    }
    lp_min(cost.as_slice().unwrap(), &rows, &rhs)
}

fn simplex_point(rng: &mut ChaCha8Rng, n: usize, zero_prob: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(zero_prob) { 0.0 } else { rng.random::<f64>() })
            .collect();
        let s: f64 = v.iter().sum();
        if s > 0.0 {
            return v.iter().map(|x| x / s).collect();
        }
    }
}

fn symmetric_cost(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let mut c = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = rng.random();
            c[[i, j]] = v;
            c[[j, i]] = v;
        }
    }
    c
}

#[test]
fn exact_emd_matches_dense_lp() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..300 {
        let n = rng.random_range(1..=6);
        let a = simplex_point(&mut rng, n, 0.3);
        let b = simplex_point(&mut rng, n, 0.3);
        let c = symmetric_cost(&mut rng, n);
        let oracle = lp_emd(&a, &b, &c);
        let got = exact_emd(&TransportProblem::new(a, b, c).unwrap()).unwrap().value;
        assert!((got - oracle).abs() <= 1e-9, "case {case}: {got} vs {oracle}");
    }
}

#[test]
fn exact_emd_symmetry_identity_and_support_restriction() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..200 {
        let n = rng.random_range(2..=9);
        let a = simplex_point(&mut rng, n, 0.4);
        let b = simplex_point(&mut rng, n, 0.4);
        let c = symmetric_cost(&mut rng, n);
        let ab = exact_emd(&TransportProblem::new(a.clone(), b.clone(), c.clone()).unwrap()).unwrap();
        let ba = exact_emd(&TransportProblem::new(b.clone(), a.clone(), c.clone()).unwrap()).unwrap();
        assert!((ab.value - ba.value).abs() <= 1e-12);
        let aa = exact_emd(&TransportProblem::new(a.clone(), a.clone(), c.clone()).unwrap()).unwrap();
        assert!(aa.value.abs() <= 1e-12);

        // solve again on the union of supports only
        let keep: Vec<usize> = (0..n).filter(|&i| a[i] > 0.0 || b[i] > 0.0).collect();
        let sub = |v: &[f64]| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let cs = Array2::from_shape_fn((keep.len(), keep.len()), |(i, j)| c[[keep[i], keep[j]]]);
        let restricted = exact_emd(&TransportProblem::new(sub(&a), sub(&b), cs).unwrap()).unwrap();
        assert!((restricted.value - ab.value).abs() <= 1e-12);
        assert!((restricted.value - lp_emd(&a, &b, &c)).abs() <= 1e-9);
    }
}

#[test]
fn emd_metric_examples() {
    let mut m = Array2::from_elem((3, 3), 0.5);
    m.diag_mut().fill(0.0);
    m[[0, 2]] = 0.2;
    m[[2, 0]] = 0.2;
    let at = |i: usize| {
        let mut v = vec![0.0; 3];
        v[i] = 1000.0;
        AmountVector::new(v).unwrap()
    };
    assert!((emd_metric(&at(0), &at(2), &m).unwrap() - 200.0).abs() < 1e-9);
    assert_eq!(emd_metric(&at(1), &at(1), &m).unwrap(), 0.0);
}

#[test]
fn sinkhorn_gap_shrinks_with_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let lambdas = [10.0, 50.0, 200.0, 1000.0];
    for case in 0..40 {
        let n = rng.random_range(2..=7);
        let a = simplex_point(&mut rng, n, 0.0);
        let b = simplex_point(&mut rng, n, 0.0);
        let p = TransportProblem::new(a, b, symmetric_cost(&mut rng, n)).unwrap();
        let exact = exact_emd(&p).unwrap().value;
        let mut last = f64::INFINITY;
        for &lambda in &lambdas {
            let cfg = SinkhornConfig {
                lambda,
                max_iters: 200_000,
                tol: 1e-11,
                p: 1.0,
            };
            let r = sinkhorn(&p, &cfg).unwrap();
            assert!(r.converged, "case {case} lambda {lambda}");
            let gap = r.value - exact;
            assert!(gap >= -1e-9, "entropic plan cheaper than the optimum: case {case}");
            assert!(gap <= last + 1e-9, "case {case}: gap grew at lambda {lambda}");
            last = gap;
        }
    }
}

/// The transport gradient is compared with central differences of the exact
/// value along tangent directions `e_i - 1/n`. At finite lambda the two
/// differ by the entropic bias, about 1e-3 relative here.
#[test]
fn gradient_matches_exact_value_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let cfg = SinkhornConfig {
        lambda: 20_000.0,
        max_iters: 500_000,
        tol: 1e-12,
        p: 1.0,
    };
    let n = 5;
    let mut checked = 0;
    while checked < 30 {
        let a = simplex_point(&mut rng, n, 0.0);
        let b = simplex_point(&mut rng, n, 0.0);
        let c = symmetric_cost(&mut rng, n);
        if a.iter().any(|x| *x < 0.02) {
            continue;
        }
        let h = 1e-7;
        let value = |a: &[f64]| exact_emd(&TransportProblem::new(a.to_vec(), b.clone(), c.clone()).unwrap()).unwrap().value;
        let fd: Vec<f64> = (0..n)
            .map(|i| {
                let dir: Vec<f64> = (0..n).map(|k| if k == i { 1.0 } else { 0.0 } - 1.0 / n as f64).collect();
                let plus: Vec<f64> = a.iter().zip(&dir).map(|(x, d)| x + h * d).collect();
                let minus: Vec<f64> = a.iter().zip(&dir).map(|(x, d)| x - h * d).collect();
                (value(&plus) - value(&minus)) / (2.0 * h)
            })
            .collect();
        let r = sinkhorn(&TransportProblem::new(a.clone(), b.clone(), c.clone()).unwrap(), &cfg).unwrap();
        let diff: f64 = fd.iter().zip(&r.gradient).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(diff <= 1e-2 * norm, "fd {fd:?} vs {:?}", r.gradient);
        checked += 1;
    }
}
