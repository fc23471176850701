use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steamgen::hybrid::*;

fn generators() -> Vec<HybridGenModel> {
    vec![
        HybridGenModel { chi_off_st: 2, chi_st_on: 1, chi_on_off: 3, g: 0.05, gamma_on: 0.002, gamma_st: 0.01, q_s_min: 0.3, q_s_max: 1.2 },
        HybridGenModel { chi_off_st: 0, chi_st_on: 2, chi_on_off: 1, g: 0.06, gamma_on: 0.0, gamma_st: 0.015, q_s_min: 0.2, q_s_max: 1.0 },
        HybridGenModel { chi_off_st: 4, chi_st_on: 0, chi_on_off: 0, g: 0.045, gamma_on: -0.001, gamma_st: 0.008, q_s_min: 0.0, q_s_max: 0.9 },
    ]
}

fn random_draw(rng: &mut ChaCha8Rng, m: &HybridGenModel, mode: Mode) -> f64 {
    if mode == Mode::On {
        rng.gen_range(m.q_s_min..=m.q_s_max)
    } else {
        0.0
    }
}

#[test]
fn mld_completion_reproduces_automaton_trajectories() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut mismatches = 0;
    for m in generators() {
        let mld = to_mld(&m).unwrap();
        for _ in 0..500 {
            let mode = [Mode::Off, Mode::St, Mode::On][rng.gen_range(0..3)];
            let start = HybridState { mode, chi: rng.gen_range(0..=m.cap()) };
            let (mut a, mut b) = (start, start);
            for _ in 0..40 {
                let beta = rng.gen_bool(0.4);
                let q_s = random_draw(&mut rng, &m, a.mode);
                let (na, qa) = dha_step(&m, a, beta, q_s).unwrap();
                let (nb, qb) = mld.step(b, beta, q_s).unwrap().expect("admissible input");
                if na != nb || qa != qb {
                    mismatches += 1;
                }
                a = na;
                b = nb;
            }
        }
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn mode_indicators_must_be_one_hot() {
    let m = &generators()[0];
    let mld = to_mld(m).unwrap();
    let u = DVector::from_vec(vec![0.0, 0.0]);
    for x in [[0.0, 0.0, 0.0, 0.0], [0.0, 1.0, 1.0, 0.0], [1.0, 1.0, 0.0, 1.0]] {
        let x = DVector::from_row_slice(&x);
        assert!(mld.complete(&x, &u, false).unwrap().is_none());
    }
    for mode in [Mode::Off, Mode::St] {
        let x = MLDModel::encode_state(HybridState { mode, chi: 0 });
        assert!(mld.complete(&x, &u, false).unwrap().is_some());
    }
}

#[test]
fn no_command_keeps_off_unit_idle() {
    let m = &generators()[0];
    let mld = to_mld(m).unwrap();
    let mut s = HybridState { mode: Mode::Off, chi: 0 };
    for _ in 0..20 {
        let (n, q) = mld.step(s, false, 0.0).unwrap().unwrap();
        assert_eq!(n.mode, Mode::Off);
        assert_eq!(q, 0.0);
        s = n;
    }
    assert_eq!(s.chi, m.cap());
}

#[test]
fn start_up_sequence_charges_standby_then_production() {
    let m = &generators()[0];
    let mut s = HybridState { mode: Mode::Off, chi: m.chi_off_st };
    let mut trace = vec![];
    for k in 0..5 {
        let q_s = if s.mode == Mode::On { 0.5 } else { 0.0 };
        let (n, q) = dha_step(m, s, k == 0, q_s).unwrap();
        trace.push((s.mode, q));
        s = n;
    }
    assert_eq!(trace[0], (Mode::Off, 0.0));
    assert_eq!(trace[1], (Mode::St, m.gamma_st));
    assert_eq!(trace[2], (Mode::St, m.gamma_st));
    assert_eq!(trace[3].0, Mode::On);
    assert!((trace[3].1 - (m.g * 0.5 + m.gamma_on)).abs() < 1e-15);
}

#[test]
fn draw_outside_production_is_infeasible_in_both_forms() {
    let m = &generators()[1];
    let mld = to_mld(m).unwrap();
    let s = HybridState { mode: Mode::St, chi: 0 };
    assert!(matches!(dha_step(m, s, false, 0.4), Err(HybridError::InvalidInput { .. })));
    assert_eq!(mld.step(s, false, 0.4).unwrap(), None);
    let on = HybridState { mode: Mode::On, chi: 0 };
    assert_eq!(mld.step(on, false, m.q_s_max + 0.1).unwrap(), None);
}

#[test]
fn undersized_big_m_is_detected() {
    let m = &generators()[0];
    let mut mld = to_mld(m).unwrap();
    let big = mld.big_m;
    for v in mld.e_delta.iter_mut() {
        if v.abs() == big {
            *v = v.signum() * 0.5;
        }
    }
    for v in mld.e_aff.iter_mut() {
        if *v == big {
            *v = 0.5;
        }
    }
    assert!(matches!(mld.self_test(m), Err(HybridError::BigMTooSmall { .. })));
}

#[test]
fn dump_lists_all_blocks() {
    let mld = to_mld(&generators()[2]).unwrap();
    let text = mld.dump();
    for name in ["A 4 4", "B_delta 4 7", "C 1 4", "E_delta", "E_aff"] {
        assert!(text.contains(name), "missing {name}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn completion_is_unique(chi in 0u32..=4, mode in 0usize..3, beta: bool, frac in 0.0f64..=1.0) {
        let m = &generators()[0];
        let mld = to_mld(m).unwrap();
        let mode = [Mode::Off, Mode::St, Mode::On][mode];
        let q_s = if mode == Mode::On { m.q_s_min + frac * (m.q_s_max - m.q_s_min) } else { 0.0 };
        let x = MLDModel::encode_state(m.normalize(HybridState { mode, chi }));
        let u = DVector::from_vec(vec![if beta { 1.0 } else { 0.0 }, q_s]);
        prop_assert!(mld.complete(&x, &u, true).unwrap().is_some());
    }

    #[test]
    fn counter_never_exceeds_cap(seq in proptest::collection::vec(any::<bool>(), 1..60)) {
        let m = &generators()[2];
        let mut s = HybridState { mode: Mode::Off, chi: 0 };
        for beta in seq {
            let q_s = if s.mode == Mode::On { m.q_s_min } else { 0.0 };
            s = dha_step(m, s, beta, q_s).unwrap().0;
            prop_assert!(s.chi <= m.cap());
        }
    }
}
