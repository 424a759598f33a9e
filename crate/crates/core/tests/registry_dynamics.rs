//! Registry systems against hand-written dynamics, bit for bit.

use rand::Rng;

use dtstab::registry::{example_2_3, example_3_4, example_4_7};
use dtstab::sampling::{box_uniform, rng};

const POINTS: usize = 10_000;

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(p, q)| p.to_bits() == q.to_bits())
}

fn forced(t: u64, x: &[f64], d: f64, u: f64) -> Vec<f64> {
    let t = t as f64;
    vec![d * x[0], 2f64.powf(-t) * d * x[0].abs().powf(0.5) + u]
}

#[test]
fn example_2_3_matches_hand_dynamics() {
    let e = example_2_3().unwrap();
    let mut r = rng(7, 1);
    for _ in 0..POINTS {
        let t = r.gen_range(0..=60u64);
        let x = box_uniform(&[(-1e3, 1e3); 2], &mut r);
        let d = r.gen_range(-2.0..=2.0);
        let got = e.system.step(t, &x, &[d], &[]).unwrap();
        let mut want = forced(t, &x, d, 0.0);
        // The unforced law has no `+ u` term at all.
        want[1] = 2f64.powf(-(t as f64)) * d * x[0].abs().powf(0.5);
        assert!(same_bits(&got, &want), "t = {t}, x = {x:?}, d = {d}");
        assert_eq!(e.system.output(t, &x).unwrap(), vec![x[1]]);
    }
}

#[test]
fn example_3_4_matches_hand_dynamics() {
    let e = example_3_4().unwrap();
    let mut r = rng(7, 2);
    for _ in 0..POINTS {
        let t = r.gen_range(0..=60u64);
        let x = box_uniform(&[(-1e3, 1e3); 2], &mut r);
        let d = r.gen_range(-2.0..=2.0);
        let u = r.gen_range(-5.0..=5.0);
        let got = e.system.step(t, &x, &[d], &[u]).unwrap();
        assert!(same_bits(&got, &forced(t, &x, d, u)));
    }
}

#[test]
fn example_4_7_matches_hand_dynamics() {
    let mut r = rng(7, 3);
    for rr in [0.0, 0.5, 0.9] {
        let e = example_4_7(rr).unwrap();
        for _ in 0..POINTS / 3 {
            let t = r.gen_range(0..=30u64);
            let x = box_uniform(&[(-10.0, 10.0); 3], &mut r);
            let d = if rr == 0.0 {
                0.0
            } else {
                r.gen_range(-rr..=rr)
            };
            let u = r.gen_range(-5.0..=5.0);
            let exp_t = (t as f64).exp();
            let open = vec![x[1], x[1].powf(2.0) + u, d * x[2] + exp_t * x[1]];
            assert!(same_bits(&e.system.step(t, &x, &[d], &[u]).unwrap(), &open));
            let closed = vec![
                x[1],
                x[1].powf(2.0) + -x[1].powf(2.0),
                d * x[2] + exp_t * x[1],
            ];
            assert!(same_bits(
                &e.closed_loop.step(t, &x, &[d], &[]).unwrap(),
                &closed
            ));
            assert_eq!(e.system.measure(t, &x).unwrap(), vec![x[0]]);
        }
    }
}
