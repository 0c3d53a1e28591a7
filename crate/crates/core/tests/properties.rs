use cmdemod::crn::{receptor_network, ExogenousSchedule, Simulation};
use cmdemod::dcs2::{pulse_train, simulate_dcs2, DCS2Params, FixedRates};
use cmdemod::demod::{active_signal, positive_filter};
use cmdemod::experiments::one_sample_baseline;
use cmdemod::hill::HillFitConfig;
use cmdemod::rng::RngSpec;
use cmdemod::trajectory::Trajectory;
use proptest::prelude::*;

fn receptor_run(gp: f64, gm: f64, s: i64, m: i64, horizon: f64, seed: u64) -> Trajectory {
    let net = receptor_network(gp, gm).unwrap();
    Simulation::new(&net)
        .schedule(ExogenousSchedule::pulse(0, s, 1, horizon / 2.0))
        .run(&[s, m, 0], horizon, &RngSpec::new(seed, 0))
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn receptors_are_conserved(
        gp in 0.001f64..0.1, gm in 0.1f64..2.0, s in 0i64..100, m in 1i64..60, seed in any::<u64>()
    ) {
        let tr = receptor_run(gp, gm, s, m, 10.0, seed);
        let mut state = tr.initial().to_vec();
        prop_assert_eq!(state[1] + state[2], m);
        // deltas of one firing share a time stamp
        for group in tr.events().chunk_by(|a, b| a.time == b.time) {
            for e in group {
                state[e.species as usize] += e.delta;
            }
            prop_assert_eq!(state[1] + state[2], m);
            prop_assert!(state[1] >= 0 && state[2] >= 0);
        }
    }

    #[test]
    fn same_spec_gives_identical_events(seed in any::<u64>(), m in 1i64..30) {
        let a = receptor_run(0.02, 0.5, 58, m, 5.0, seed);
        let b = receptor_run(0.02, 0.5, 58, m, 5.0, seed);
        prop_assert_eq!(a.events(), b.events());
    }

    #[test]
    fn event_lists_round_trip(seed in any::<u64>()) {
        let tr = receptor_run(0.05, 1.0, 20, 10, 3.0, seed);
        let mut buf = Vec::new();
        tr.write_event_list(&mut buf).unwrap();
        let back = Trajectory::read_event_list(buf.as_slice()).unwrap();
        prop_assert_eq!(back.events(), tr.events());
        prop_assert_eq!(back.initial(), tr.initial());
    }

    #[test]
    fn positive_filter_is_nonnegative_and_nondecreasing(
        a in 3.0f64..100.0, s in 1i64..100, gm in 0.1f64..2.0, seed in any::<u64>()
    ) {
        let tr = receptor_run(0.02, gm, s, 40, 10.0, seed);
        let x = active_signal(&tr).unwrap();
        let p = positive_filter(&x, &tr.signal(0), a, gm, 0.1).unwrap();
        prop_assert!(p.values.iter().all(|&v| v >= 0.0));
        prop_assert!(p.values.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn one_sample_threshold_is_optimal(
        s0 in prop::collection::vec(0u32..=20, 1..40),
        s1 in prop::collection::vec(0u32..=20, 1..40),
    ) {
        let (theta, ber) = one_sample_baseline(&s0, &s1, 20, [0.5, 0.5]);
        prop_assert!((0.0..=0.5).contains(&ber));
        for t in 0..=20u32 {
            let e0 = s0.iter().filter(|&&x| x >= t).count() as f64 / s0.len() as f64;
            let e1 = s1.iter().filter(|&&x| x < t).count() as f64 / s1.len() as f64;
            let b = 0.5 * e0 + 0.5 * e1;
            prop_assert!(b >= ber - 1e-12);
            if t < theta {
                prop_assert!(b > ber + 1e-15);
            }
        }
    }

    #[test]
    fn promoter_activity_stays_in_unit_interval(
        amp in 0.0f64..3000.0, on in 1.0f64..30.0, gap in 0.0f64..20.0, count in 1usize..5
    ) {
        let p = DCS2Params::reference(FixedRates::SYNTHETIC);
        let hill = p.hill(&HillFitConfig::default()).unwrap();
        let input = pulse_train(amp, count, on, gap, 2.0, 160.0);
        let times: Vec<f64> = (0..=320).map(|i| i as f64 * 0.5).collect();
        let tr = simulate_dcs2(&p, &hill, &input, &times).unwrap();
        for s in &tr.states {
            prop_assert!((0.0..=1.0).contains(&s[0]), "{}", s[0]);
            prop_assert!(s.iter().all(|&v| v >= -1e-12));
        }
    }
}
