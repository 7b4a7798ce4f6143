use dlsplan_core::verify::{all_sets, random_instance};
use dlsplan_core::{SolutionSet, TrajId};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn objective_set_function_properties(seed in any::<u64>()) {
        let obj = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), 3, 3).unwrap();
        let sets = all_sets(&obj);
        let mi: Vec<f64> = sets.iter().map(|s| obj.mutual_information(s).unwrap()).collect();
        for (i, a) in sets.iter().enumerate() {
            prop_assert!(mi[i] >= -1e-12);
            prop_assert!(obj.oracle_g(a).unwrap() >= -1e-12);
            let c: f64 = a
                .assigned()
                .map(|(r, id)| obj.energy_cost(&SolutionSet::empty(a.n_robots()).with_added(r, id).unwrap()))
                .sum();
            prop_assert!((obj.energy_cost(a) - c).abs() < 1e-12);
            for (j, b) in sets.iter().enumerate() {
                if !a.is_subset_of(b) {
                    continue;
                }
                prop_assert!(mi[j] >= mi[i] - 1e-9, "monotone");
                // Diminishing returns for every element addable to both.
                for r in 0..b.n_robots() {
                    if b.slot(r).is_some() {
                        continue;
                    }
                    for t in obj.trajectories().iter().filter(|t| t.robot == r) {
                        let ga = obj.mutual_information(&a.with_added(r, t.id).unwrap()).unwrap() - mi[i];
                        let gb = obj.mutual_information(&b.with_added(r, t.id).unwrap()).unwrap() - mi[j];
                        prop_assert!(ga >= gb - 1e-9, "submodular");
                    }
                }
            }
        }
    }

    #[test]
    fn solution_set_operations(ops in prop::collection::vec((0usize..4, 0u32..12, any::<bool>()), 0..40)) {
        let mut s = SolutionSet::empty(4);
        let mut model: [Option<TrajId>; 4] = [None; 4];
        for (r, id, add) in ops {
            let id = TrajId(id);
            if add {
                let res = s.add(r, id);
                prop_assert_eq!(res.is_ok(), model[r].is_none());
                if model[r].is_none() {
                    model[r] = Some(id);
                }
            } else {
                let res = s.delete(r, id);
                prop_assert_eq!(res.is_ok(), model[r] == Some(id));
                if model[r] == Some(id) {
                    model[r] = None;
                }
            }
            prop_assert_eq!(s.len(), model.iter().flatten().count());
            for (k, m) in model.iter().enumerate() {
                prop_assert_eq!(s.slot(k), *m);
            }
            let mut key: Vec<TrajId> = model.iter().flatten().copied().collect();
            key.sort_unstable();
            prop_assert_eq!(s.key(), key);
        }
    }
}
