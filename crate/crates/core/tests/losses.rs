mod common;

use cgcf_core::losses::{self, dcl_clamp, dcl_negative_score, ClampFloor, LossConfig};
use cgcf_core::{Tape, Tensor, Var};
use common::random_tensor;
use proptest::prelude::*;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (n(a), n(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Similarities of each user to its positive and to its 2B-2 in-batch negatives.
fn in_batch_phis(users: &Tensor, items: &Tensor, t: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let b = users.rows();
    let pos = (0..b)
        .map(|j| cosine(users.row(j), items.row(j)) / t)
        .collect();
    let negs = (0..b)
        .map(|j| {
            let mut v: Vec<f64> = (0..b)
                .filter(|&k| k != j)
                .map(|k| cosine(users.row(j), users.row(k)) / t)
                .collect();
            v.extend(
                (0..b)
                    .filter(|&k| k != j)
                    .map(|k| cosine(users.row(j), items.row(k)) / t),
            );
            v
        })
        .collect();
    (pos, negs)
}

/// Scalar evaluation of the debiased loss straight from its definition.
fn dcl_oracle(users: &Tensor, items: &Tensor, cfg: &LossConfig) -> f64 {
    let (pos, negs) = in_batch_phis(users, items, cfg.t2);
    let b = users.rows();
    let mut total = 0.0;
    for j in 0..b {
        let mut g = dcl_negative_score(pos[j], &negs[j], cfg.tau_plus);
        if cfg.use_clamp {
            g = g.max(cfg.clamp_floor.value(cfg.t2));
        }
        let m = negs[j].len() as f64;
        total += -(pos[j].exp() / (pos[j].exp() + m * g)).ln();
    }
    total / b as f64
}

fn gcl_oracle(h1: &Tensor, h2: &Tensor, t1: f64) -> Vec<f64> {
    let b = h1.rows();
    let directed = |a: &Tensor, c: &Tensor, u: usize| {
        let num = (cosine(a.row(u), c.row(u)) / t1).exp();
        let within: f64 = (0..b)
            .filter(|&v| v != u)
            .map(|v| (cosine(a.row(u), a.row(v)) / t1).exp())
            .sum();
        let cross: f64 = (0..b)
            .map(|v| (cosine(a.row(u), c.row(v)) / t1).exp())
            .sum();
        -(num / (within + cross)).ln()
    };
    (0..b)
        .map(|u| directed(h1, h2, u) + directed(h2, h1, u))
        .collect()
}

fn with_tape<R>(f: impl FnOnce(&mut Tape<'_>) -> R) -> R {
    let mut tape = Tape::new();
    f(&mut tape)
}

fn dcl_value(users: &Tensor, items: &Tensor, cfg: &LossConfig) -> f64 {
    with_tape(|tape| {
        let u = tape.constant(users.clone());
        let i = tape.constant(items.clone());
        let l = losses::dcl_loss(tape, u, i, cfg).unwrap();
        tape.value(l).item()
    })
}

fn cl_value(pos: &[f64], negs: &[Vec<f64>]) -> f64 {
    with_tape(|tape| {
        let p = tape.constant(Tensor::new(pos.len(), 1, pos.to_vec()).unwrap());
        let n = tape.constant(Tensor::new(negs.len(), negs[0].len(), negs.concat()).unwrap());
        let l = losses::cl_loss(tape, p, n).unwrap();
        tape.value(l).item()
    })
}

fn gcl_value(h1: &Tensor, h2: &Tensor, t1: f64) -> f64 {
    with_tape(|tape| {
        let a = tape.constant(h1.clone());
        let b = tape.constant(h2.clone());
        let per = losses::gcl_pair_loss(tape, a, b, t1).unwrap();
        let l = losses::gcl_loss(tape, per).unwrap();
        tape.value(l).item()
    })
}

fn embeddings() -> impl Strategy<Value = (Tensor, Tensor)> {
    (any::<u64>(), 2usize..9, 1usize..17).prop_map(|(seed, b, d)| {
        let mut r = common::rng(seed);
        (random_tensor(&mut r, b, d), random_tensor(&mut r, b, d))
    })
}

proptest! {
    #[test]
    fn dcl_without_correction_is_cl((u, i) in embeddings(), t2 in 0.05f64..2.0, clamp in any::<bool>()) {
        let cfg = LossConfig { tau_plus: 0.0, t2, use_clamp: clamp, ..LossConfig::default() };
        let (pos, negs) = in_batch_phis(&u, &i, t2);
        prop_assert!((dcl_value(&u, &i, &cfg) - cl_value(&pos, &negs)).abs() <= 1e-12);
    }

    #[test]
    fn dcl_matches_scalar_oracle(
        (u, i) in embeddings(),
        tau in prop::sample::select(vec![0.0, 1e-5, 1e-3, 0.01, 0.1]),
        floor in prop::sample::select(vec![ClampFloor::Lower, ClampFloor::Upper]),
    ) {
        let cfg = LossConfig { tau_plus: tau, clamp_floor: floor, ..LossConfig::default() };
        let got = dcl_value(&u, &i, &cfg);
        let want = dcl_oracle(&u, &i, &cfg);
        prop_assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "{} vs {}", got, want);
        prop_assert!(got >= 0.0);
    }

    #[test]
    fn contrastive_losses_are_scale_invariant((u, i) in embeddings(), c in prop::sample::select(vec![0.5, 3.0])) {
        let cfg = LossConfig::default();
        let (us, is) = (u.scaled(c), i.scaled(c));
        prop_assert!((dcl_value(&u, &i, &cfg) - dcl_value(&us, &is, &cfg)).abs() <= 1e-10);
        prop_assert!((gcl_value(&u, &i, 0.8) - gcl_value(&us, &is, 0.8)).abs() <= 1e-10);
        let (p0, n0) = in_batch_phis(&u, &i, 0.1);
        let (p1, n1) = in_batch_phis(&us, &is, 0.1);
        prop_assert!((cl_value(&p0, &n0) - cl_value(&p1, &n1)).abs() <= 1e-10);
    }

    #[test]
    fn gcl_matches_oracle_and_is_non_negative((h1, h2) in embeddings(), t1 in 0.2f64..2.0) {
        let per = with_tape(|tape| {
            let a = tape.constant(h1.clone());
            let b = tape.constant(h2.clone());
            let v = losses::gcl_pair_loss(tape, a, b, t1).unwrap();
            tape.value(v).as_slice().to_vec()
        });
        for (got, want) in per.iter().zip(gcl_oracle(&h1, &h2, t1)) {
            prop_assert!((got - want).abs() <= 1e-10);
            prop_assert!(*got >= 0.0);
        }
    }

    #[test]
    fn bpr_decreases_with_margin(a in -20.0f64..20.0, gap in 1e-3f64..5.0) {
        let bpr = |diff: f64| with_tape(|tape| {
            let p = tape.constant(Tensor::scalar(diff));
            let n = tape.constant(Tensor::scalar(0.0));
            let l = losses::bpr_loss(tape, p, n).unwrap();
            tape.value(l).item()
        });
        prop_assert!(bpr(a + gap) < bpr(a));
    }
}

#[test]
fn in_batch_brute_force_pair() {
    let u = Tensor::from_rows(&[&[1.0, 0.2, -0.3], &[0.1, -1.0, 0.4]]).unwrap();
    let i = Tensor::from_rows(&[&[0.7, 0.7, 0.0], &[-0.2, -0.5, 0.9]]).unwrap();
    let cfg = LossConfig {
        tau_plus: 0.05,
        t2: 0.5,
        ..LossConfig::default()
    };
    // written out term by term for B = 2
    let phi = |a: &[f64], b: &[f64]| cosine(a, b) / 0.5;
    let mut want = 0.0;
    for j in 0..2 {
        let k = 1 - j;
        let pos = phi(u.row(j), i.row(j)).exp();
        let negs = [phi(u.row(j), u.row(k)).exp(), phi(u.row(j), i.row(k)).exp()];
        let g = ((negs[0] + negs[1]) / 2.0 - 0.05 * pos) / 0.95;
        let g = g.max((-2.0f64).exp());
        want += -(pos / (pos + 2.0 * g)).ln() / 2.0;
    }
    assert!((dcl_value(&u, &i, &cfg) - want).abs() < 1e-12);
}

#[test]
fn clamp_floor_examples() {
    assert_eq!(dcl_clamp(5.0, 0.1), libm::exp(10.0));
    assert!((dcl_clamp(5.0, 0.1) - 22026.4658).abs() < 1e-4);
    assert_eq!(dcl_clamp(10.0, 1.0), 10.0);
    assert_eq!(dcl_clamp(libm::exp(1.0), 1.0), libm::exp(1.0));
}

#[test]
fn adversarial_inputs_hit_the_literal_floor() {
    // each anchor matches its positive and is orthogonal to every negative:
    // g = 1 without correction and negative with it
    let u = Tensor::identity(3);
    let i = u.clone();
    for tau in [0.0, 0.5, 0.9] {
        let (pos, negs) = in_batch_phis(&u, &i, 0.1);
        let g = dcl_negative_score(pos[0], &negs[0], tau);
        assert!(g <= 1.0);
        assert_eq!(dcl_clamp(g, 0.1), libm::exp(10.0));
        for floor in [ClampFloor::Upper, ClampFloor::Lower] {
            let cfg = LossConfig {
                tau_plus: tau,
                clamp_floor: floor,
                ..LossConfig::default()
            };
            let l = dcl_value(&u, &i, &cfg);
            assert!(l.is_finite() && l >= 0.0, "tau {tau} {floor:?}: {l}");
        }
    }
    let unclamped = LossConfig {
        tau_plus: 0.9,
        use_clamp: false,
        ..LossConfig::default()
    };
    let r = with_tape(|tape| {
        let a = tape.constant(u.clone());
        let b = tape.constant(i.clone());
        losses::dcl_loss(tape, a, b, &unclamped).map(|_| ())
    });
    assert!(r.is_err());
}

#[test]
fn debiased_score_examples() {
    assert_eq!(
        dcl_negative_score(0.3, &[0.0, 1.0], 0.0),
        (1.0 + libm::exp(1.0)) / 2.0
    );
    let s: f64 = 0.7;
    assert!((dcl_negative_score(s, &[s, s, s], 0.1) - s.exp()).abs() < 1e-15);
}

#[test]
fn cl_and_gcl_examples() {
    assert!((cl_value(&[0.4], &[vec![0.4]]) - 2f64.ln()).abs() < 1e-15);
    assert!((cl_value(&[2.0], &[vec![1.0, 0.0]]) - 0.4076).abs() < 1e-4);
    let one = Tensor::from_rows(&[&[0.3, -0.2]]).unwrap();
    assert!(gcl_value(&one, &one.scaled(2.0), 0.5).abs() < 1e-15);
    let h = Tensor::identity(2);
    let per = gcl_oracle(&h, &h, 1.0);
    let l12 = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
    assert!((l12 - 0.5514).abs() < 1e-4);
    assert!((per[0] - 2.0 * l12).abs() < 1e-12);
    assert!((gcl_value(&h, &h, 1.0) - 2.0 * l12).abs() < 1e-12);
}

#[test]
fn objective_examples() {
    let mut tape = Tape::new();
    let rows = tape.constant(Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap());
    let more = tape.constant(Tensor::from_rows(&[&[0.6, 0.8], &[0.8, 0.6]]).unwrap());
    let main = tape.constant(Tensor::scalar(1.5));
    let gcl = tape.constant(Tensor::scalar(0.25));
    let eval = |tape: &mut Tape<'_>, g: Option<Var>, reg: &[Var], cfg: LossConfig| {
        let t = losses::total_objective(tape, g, main, reg, &cfg).unwrap();
        tape.value(t).item()
    };
    let base = LossConfig::default();
    let v = eval(
        &mut tape,
        None,
        &[rows, more],
        LossConfig {
            beta: 0.0,
            lambda: 1e-4,
            ..base
        },
    );
    assert!((v - (1.5 + 1e-4 * 4.0)).abs() < 1e-15);
    let v = eval(
        &mut tape,
        Some(gcl),
        &[rows],
        LossConfig {
            beta: 1.0,
            lambda: 0.0,
            ..base
        },
    );
    assert_eq!(v, 0.25);
    let v = eval(&mut tape, Some(gcl), &[], LossConfig { beta: 0.2, ..base });
    assert!((v - (0.2 * 0.25 + 0.8 * 1.5)).abs() < 1e-15);
}

#[test]
fn batch_order_only_permutes_gcl() {
    let mut r = common::rng(4);
    let (h1, h2) = (random_tensor(&mut r, 5, 3), random_tensor(&mut r, 5, 3));
    let perm = [3, 0, 4, 1, 2];
    let (p1, p2) = (h1.gather_rows(&perm), h2.gather_rows(&perm));
    let a = gcl_oracle(&h1, &h2, 0.8);
    let b = gcl_oracle(&p1, &p2, 0.8);
    for (k, &src) in perm.iter().enumerate() {
        assert!((b[k] - a[src]).abs() < 1e-12);
    }
    assert!((gcl_value(&h1, &h2, 0.8) - gcl_value(&p1, &p2, 0.8)).abs() < 1e-12);
}
