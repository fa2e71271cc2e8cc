use std::sync::Arc;

use mapf_egt::bench::generate_map;
use mapf_egt::egt::{mix_with_uniform, replicator_row};
use mapf_egt::gridworld::{parse_map, reset, step, Action, EnvConfig, StepEvent};
use mapf_egt::policy::{Row, TabularPolicy};
use mapf_egt::reward::{reach_avoid_automaton, Observation, RewardMachine, RewardParams, Valuation};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn row() -> impl Strategy<Value = Row> {
    prop::array::uniform5(0.0f64..1.0).prop_filter_map("non-zero row", |r| {
        let s: f64 = r.iter().sum();
        (s > 1e-6).then(|| r.map(|p| p / s))
    })
}

fn fitness() -> impl Strategy<Value = [Option<f64>; 5]> {
    prop::array::uniform5(prop::option::of(-1000.0f64..1000.0))
}

proptest! {
    #[test]
    fn replicator_stays_on_simplex(r in row(), f in fitness(), alpha in 0.0f64..=1.0) {
        let out = replicator_row(&r, &f, alpha);
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(out.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn fitter_actions_gain_relative_mass(r in row(), f in fitness(), alpha in 0.01f64..=1.0) {
        let out = replicator_row(&r, &f, alpha);
        for a in 0..5 {
            for b in 0..5 {
                if let (Some(fa), Some(fb)) = (f[a], f[b]) {
                    if fa > fb && r[a] > 1e-9 && r[b] > 1e-9 {
                        prop_assert!(out[a] / r[a] > out[b] / r[b], "{a} vs {b}: {out:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn equal_fitness_is_a_fixed_point(r in row(), v in -500.0f64..500.0, mask in prop::array::uniform5(any::<bool>()), alpha in 0.0f64..=1.0) {
        let f = mask.map(|m| m.then_some(v));
        let out = replicator_row(&r, &f, alpha);
        for a in 0..5 {
            prop_assert!((out[a] - r[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_mixing_stays_on_simplex(r in row(), w in 0.0f64..=1.0) {
        let map = parse_map("G").unwrap();
        let p = TabularPolicy::from_fn(&map, |_| r);
        let mixed = mix_with_uniform(&p, w);
        let (dev, min) = mixed.simplex_error();
        prop_assert!(dev < 1e-9 && min >= 0.0);
        let back = mixed.unmix(w);
        if w < 1.0 {
            for (x, y) in back.row(map.goals()[0]).iter().zip(&r) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }

    /// Faster collision-free arrival always weighs more.
    #[test]
    fn earlier_arrival_weighs_more(t1 in 0usize..40, extra in 1usize..40, gamma in 0.5f64..=1.0) {
        let horizon = 80;
        let params = RewardParams::new(1.0, 800.0, 800.0, horizon, gamma).unwrap();
        let machine = RewardMachine::new(params);
        let seq = |t: usize| {
            let mut s = vec![Observation::new(false, false); t];
            s.push(Observation::new(true, false));
            s
        };
        for v in [Valuation::Sum, Valuation::DiscountedSum(gamma)] {
            let fast = v.valuate(&machine.weights(&seq(t1))).unwrap();
            let slow = v.valuate(&machine.weights(&seq(t1 + extra))).unwrap();
            prop_assert!(fast > slow, "{v}: {fast} <= {slow}");
        }
    }

    #[test]
    fn online_machine_matches_automaton(obs in prop::collection::vec((any::<bool>(), any::<bool>()), 0..60)) {
        let params = RewardParams::for_horizon(60);
        let input: Vec<Observation> = obs.iter().map(|&(g, c)| Observation::new(g, c)).collect();
        let runs = reach_avoid_automaton(&params).runs(&input).unwrap();
        prop_assert_eq!(runs.len(), 1);
        prop_assert_eq!(&runs[0].weights, &RewardMachine::new(params).weights(&input));
    }

    #[test]
    fn dynamics_invariants(seed in any::<u64>(), agents in 1usize..6, slip in 0.0f64..0.5) {
        let map = Arc::new(generate_map(7, 6, 0.15, seed).unwrap());
        let env = EnvConfig::new(map.clone(), agents).with_slip(slip);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = reset(&env, &mut rng).unwrap();
        for _ in 0..30 {
            let actions: Vec<Action> = (0..agents).map(|_| Action::ALL[rand::Rng::gen_range(&mut rng, 0..5)]).collect();
            let (next, events) = step(&env, &state, &actions, &mut rng).unwrap();
            for i in 0..agents {
                prop_assert!(!map.is_obstacle(next[i].cell));
                prop_assert!(next[i].cell.manhattan(state[i].cell) <= 1);
                prop_assert!(!state[i].reached || next[i].reached, "reached was cleared");
                prop_assert_eq!(events[i] == StepEvent::Inactive, !state[i].active);
                for j in 0..i {
                    if next[i].active && next[j].active {
                        prop_assert_ne!(next[i].cell, next[j].cell);
                    }
                }
            }
            state = next;
        }
    }

    #[test]
    fn policy_text_round_trips(seed in any::<u64>(), rows in prop::collection::vec(row(), 30)) {
        let map = generate_map(6, 5, 0.1, seed).unwrap();
        let mut i = 0;
        let p = TabularPolicy::from_fn(&map, |_| { i += 1; rows[i % rows.len()] });
        let mut buf = Vec::new();
        p.write_to(&mut buf, &["note".into()]).unwrap();
        let back = TabularPolicy::read_from(buf.as_slice()).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn map_text_round_trips(w in 2usize..12, h in 2usize..12, density in 0.0f64..0.3, seed in any::<u64>()) {
        if let Ok(map) = generate_map(w, h, density, seed) {
            prop_assert_eq!(parse_map(&map.to_text()).unwrap(), map);
        }
    }
}
