use std::cell::Cell;
use std::sync::Arc;

use proptest::prelude::*;

use polar_imp::appendix::ScPriorityModel;
use polar_imp::classical::{run_abstract_construction, BhattacharyyaOps, GaOps, ZLayout};
use polar_imp::imp::{construct_imp, PriorityModel};
use polar_imp::model::{forward, ImpHyper, ImpParams, StateInput};
use polar_imp::pccmp::{PccmpGraph, PccmpStructure};
use polar_imp::polar::{crc_check, crc_compute, encode, polar_transform, CodeSpec, Construction, CrcPoly};
use polar_imp::{scl_decode, Result, SnrDb};

fn bits(len: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..2, len)
}

fn info_set(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle().prop_map(move |mut v| {
        v.truncate(k);
        v.sort_unstable();
        v
    })
}

/// Minimum correlation discrepancy over all codewords.
fn ml_decode(llr: &[f64], c: &Construction) -> (Vec<u8>, f64) {
    let k = c.spec().k();
    let mut best = (Vec::new(), f64::INFINITY);
    for msg in 0u32..(1 << k) {
        let info: Vec<u8> = (0..k).map(|i| (msg >> i & 1) as u8).collect();
        let cw = encode(c, &info).unwrap();
        let d: f64 = cw.iter().zip(llr).filter(|(&b, &l)| (b == 1) != (l < 0.0)).map(|(_, l)| l.abs()).sum();
        if d < best.1 {
            best = (c.source_vector(&info).unwrap().to_vec(), d);
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transform_is_linear_involution(log_n in 1u32..11, seed in any::<u64>()) {
        let n = 1usize << log_n;
        let mut r = polar_imp::substream(seed, 0);
        let a: Vec<u8> = (0..n).map(|_| rand::Rng::random::<bool>(&mut r) as u8).collect();
        let b: Vec<u8> = (0..n).map(|_| rand::Rng::random::<bool>(&mut r) as u8).collect();
        let (mut ta, mut tb) = (a.clone(), b.clone());
        polar_transform(&mut ta);
        polar_transform(&mut tb);
        let mut sum: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
        polar_transform(&mut sum);
        prop_assert_eq!(sum, ta.iter().zip(&tb).map(|(x, y)| x ^ y).collect::<Vec<_>>());
        polar_transform(&mut ta);
        prop_assert_eq!(ta, a);
    }

    #[test]
    fn crc_appended_message_checks(msg in bits(40), flip in 0usize..44) {
        let crc = crc_compute(&msg, CrcPoly::CRC4_0X3, 4).unwrap();
        let mut word = msg.clone();
        word.extend_from_slice(&crc);
        prop_assert!(crc_check(&word, CrcPoly::CRC4_0X3, 4).unwrap());
        word[flip] ^= 1;
        prop_assert!(!crc_check(&word, CrcPoly::CRC4_0X3, 4).unwrap());
    }

    #[test]
    fn full_list_scl_is_ml(
        (n, info) in (prop_oneof![Just(4usize), Just(8)], 1usize..5)
            .prop_flat_map(|(n, k)| (Just(n), info_set(n, k.min(n - 1)))),
        llr in prop::collection::vec(-4.0f64..4.0, 8),
    ) {
        let k = info.len();
        let c = Construction::new(CodeSpec::new(n, k, 0, None).unwrap(), info).unwrap();
        let llr = &llr[..n];
        let cands = scl_decode(llr, &c, 1 << k).unwrap();
        let (u_ml, d_ml) = ml_decode(llr, &c);
        prop_assert_eq!(cands[0].u_hat.to_vec(), u_ml);
        prop_assert!((cands[0].path_metric - d_ml).abs() < 1e-9);
    }

    #[test]
    fn relabeling_variables_leaves_priorities(perm in Just((0..8).collect::<Vec<usize>>()).prop_shuffle(), seed in 0u64..1000) {
        let hyper = ImpHyper { iterations: 2, d_emb: 4, d_init: 2, hidden: vec![8, 8], d_pool: 1, mlp_hidden: vec![16] };
        let p = ImpParams::random(hyper, seed).unwrap();
        let base = Arc::new(PccmpStructure::new(8).unwrap());
        let moved = Arc::new(base.relabel_variables(&perm).unwrap());
        let mask = [false, true, false, false, true, false, false, false];
        let g0 = PccmpGraph::with_frozen_mask(base, SnrDb(1.5), &mask).unwrap();
        let g1 = PccmpGraph::with_frozen_mask(moved, SnrDb(1.5), &mask).unwrap();
        let z0 = forward(&p, &[StateInput { graph: &g0, theta: 0.4 }]).unwrap().into_z();
        let z1 = forward(&p, &[StateInput { graph: &g1, theta: 0.4 }]).unwrap().into_z();
        for (a, b) in z0.iter().zip(z1.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{} vs {}", a, b);
        }
    }

    #[test]
    fn freezing_is_monotone(log_n in 2u32..6, frac in 0.1f64..0.9, seed in any::<u64>()) {
        let n = 1usize << log_n;
        let k = ((n as f64 * frac) as usize).clamp(1, n - 1);
        let model = Noise(Cell::new(seed));
        let run = construct_imp(&CodeSpec::new(n, k, 0, None).unwrap(), SnrDb(0.0), &model).unwrap();
        let mut frozen = vec![false; n];
        for &j in &run.order {
            prop_assert!(!frozen[j]);
            frozen[j] = true;
        }
        prop_assert_eq!(run.order.len(), n - k);
        prop_assert_eq!(frozen.as_slice(), run.construction.frozen_mask());
    }
}

/// Fresh pseudo-random priorities on every call.
struct Noise(Cell<u64>);

impl PriorityModel for Noise {
    fn priorities(&self, graph: &PccmpGraph, _theta: f64) -> Result<Vec<f64>> {
        let s = self.0.get().wrapping_add(1);
        self.0.set(s);
        let mut r = polar_imp::substream(s, 0);
        Ok((0..graph.n()).map(|_| rand::Rng::random::<f64>(&mut r)).collect())
    }
}

#[test]
fn special_case_scorer_reproduces_classical_order() {
    for n in [4usize, 8, 16] {
        for k in [1, n / 2, n - 1] {
            let spec = CodeSpec::new(n, k, 0, None).unwrap();
            let bh = BhattacharyyaOps::new(0.4).unwrap();
            let ga = GaOps::default();
            for ops in [&bh as &dyn polar_imp::ConstructionOps, &ga] {
                let gamma = SnrDb(1.0);
                let classical = run_abstract_construction(spec, ops, gamma, ZLayout::Natural).unwrap();
                let model = ScPriorityModel { ops, k, iterations: 2 * n + 1, layout: ZLayout::Natural };
                let run = construct_imp(&spec, gamma, &model).unwrap();
                assert_eq!(run.construction, classical.construction, "N={n} K={k} {}", ops.name());
                let z: Vec<f64> = run.order.iter().map(|&j| classical.metrics[j]).collect();
                assert!(z.windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }
}

/// A POST network whose first hidden layer reads `θ`: two units
/// `ReLU(s + 10θ − 1)` and `ReLU(−s − 10θ + 9)` with `s` a projection of the
/// check embedding. At θ = 1 the output is `s + 9`, at θ = 0 it is `9 − s`,
/// so the argmax moves from the largest to the smallest `s`.
#[test]
fn theta_reaches_the_argmax() {
    let hyper = ImpHyper { iterations: 2, d_emb: 4, d_init: 2, hidden: vec![8, 8], d_pool: 1, mlp_hidden: vec![2] };
    let mut p = ImpParams::random(hyper.clone(), 21).unwrap();
    let d = hyper.d_final();
    let theta_col = hyper.post_input() - 1;
    let u: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { 0.3 } else { -0.3 }).collect();
    p.mlp_w[0].fill(0.0);
    for i in 0..d {
        p.mlp_w[0][[0, i]] = u[i];
        p.mlp_w[0][[1, i]] = -u[i];
    }
    p.mlp_w[0][[0, theta_col]] = 10.0;
    p.mlp_w[0][[1, theta_col]] = -10.0;
    p.mlp_b[0][0] = -1.0;
    p.mlp_b[0][1] = 9.0;
    p.mlp_w[1].fill(1.0);
    p.mlp_b[1][0] = 0.0;

    let g = polar_imp::build_pccmp(8, SnrDb(2.0)).unwrap();
    let argmax = |theta: f64| {
        let z = forward(&p, &[StateInput { graph: &g, theta }]).unwrap().into_z();
        let row: Vec<f64> = z.row(0).to_vec();
        (0..8).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).unwrap()
    };
    let fp = forward(&p, &[StateInput { graph: &g, theta: 1.0 }]).unwrap();
    let s: Vec<f64> = fp.final_check_embeddings().rows().into_iter().map(|h| h.dot(&ndarray::arr1(&u))).collect();
    assert!(s.iter().all(|v| v.abs() <= 1.0));
    let hi = (0..8).max_by(|&a, &b| s[a].total_cmp(&s[b]).then(b.cmp(&a))).unwrap();
    let lo = (0..8).min_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b))).unwrap();
    assert_ne!(hi, lo);
    assert_eq!(argmax(1.0), hi);
    assert_eq!(argmax(0.0), lo);
}

#[test]
fn special_case_fill_completes_up_to_32() {
    for n in [2usize, 4, 8, 16, 32] {
        for ops in [&BhattacharyyaOps::new(0.5).unwrap() as &dyn polar_imp::ConstructionOps, &GaOps::default()] {
            let r = polar_imp::appendix::verify_claim1(n, n / 2, ops, SnrDb(2.0), ZLayout::Natural).unwrap();
            assert!(r.passed, "{r:?}");
            assert!(r.fill_iterations.unwrap() <= 2 * n + 1);
        }
    }
}
