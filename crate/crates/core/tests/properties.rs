use std::collections::BTreeMap;

use proptest::prelude::*;

use corrfactor::correlation::{self, correlation_factor, dropout_sensitivity, Engine, EngineConfig, Scenario};
use corrfactor::ising::{parse_qubo, qubo_text, IsingProblem};
use corrfactor::{mu, Family, HopModel, LatticeSpec};

fn family() -> impl Strategy<Value = Family> {
    prop::sample::select(Family::ALL.to_vec())
}

fn barriers(spec: &LatticeSpec, raw: &[f64]) -> HopModel {
    let labels: Vec<String> = spec.stencil.iter().flatten().map(|e| e.label.clone()).collect();
    let map: BTreeMap<String, f64> = labels.into_iter().zip(raw.iter().cycle().copied()).collect();
    HopModel::with_barriers(map, 0.6).unwrap()
}

#[test]
fn truncation_is_monotone_on_builtins() {
    for fam in Family::ALL {
        let s = Scenario::new(&LatticeSpec::from_family(fam, 32).unwrap(), &HopModel::uniform(), 32).unwrap();
        let n: Vec<usize> = (2..=32).collect();
        let rows = correlation::convergence_table(&s, Engine::Mu, &EngineConfig::default(), &n).unwrap();
        let f: Vec<f64> = rows.iter().filter_map(|r| r.f()).collect();
        assert!(f.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{fam}: {f:?}");
        let z = fam.coordination() as f64;
        assert!((f[0] - (z - 1.0) / (z + 1.0)).abs() < 1e-12);
    }
}

#[test]
fn captured_mass_grows_towards_one() {
    let s = Scenario::new(&LatticeSpec::builtin("fcc", 40).unwrap(), &HopModel::uniform(), 40).unwrap();
    let r = s.run_mu(40).unwrap();
    let mut last = 0.0;
    for n in 2..=40 {
        let m = r.truncated(n).captured_mass;
        assert!(m >= last && m <= 1.0);
        last = m;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn factor_is_monotone(a in -1.0f64..0.999, b in -1.0f64..0.999) {
        let (fa, fb) = (correlation_factor(a).unwrap(), correlation_factor(b).unwrap());
        prop_assert!(fa >= 0.0);
        if a < b {
            prop_assert!(fa <= fb);
        }
        // inverse: c = (f - 1) / (f + 1)
        prop_assert!(((fa - 1.0) / (fa + 1.0) - a).abs() < 1e-9);
    }

    #[test]
    fn propagation_matches_enumeration(fam in family(), raw in prop::collection::vec(0.0f64..1.0, 12), n in 2usize..6) {
        let spec = LatticeSpec::from_family(fam, n).unwrap();
        let model = barriers(&spec, &raw);
        let (s, t) = (spec.default_start(), spec.tracer());
        let a = mu::run(&spec, &model, &s, &t, n).unwrap();
        let b = mu::enumerate_arrivals(&spec, &model, &s, &t, n).unwrap();
        for k in 2..=n {
            for nb in &a.neighbors {
                prop_assert!((a.arrival(k, &nb.label) - b.arrival(k, &nb.label)).abs() < 1e-12);
            }
        }
        prop_assert!(a.captured_mass <= 1.0 + 1e-12);
    }

    #[test]
    fn trajectories_round_trip_through_the_encoding(fam in family(), n in 2usize..5) {
        let spec = LatticeSpec::from_family(fam, n).unwrap();
        let p = IsingProblem::for_lattice(&spec, &HopModel::uniform(), n, None).unwrap();
        let recs = mu::enumerate_trajectories(&p.lattice, &p.model, &p.start, &p.tracer, n).unwrap();
        let ground = (n as f64 - 1.0) * (1.0 / fam.coordination() as f64).ln();
        for r in recs.iter().filter(|r| r.steps() == n) {
            let bits = p.config_for(&r.sites).unwrap();
            let d = p.decode(&bits).unwrap();
            prop_assert!(d.valid);
            prop_assert_eq!(&d.sites, &r.sites);
            prop_assert!((p.energy(&bits).unwrap() - ground).abs() < 1e-9);
            prop_assert!((p.record(&r.sites).unwrap().weight - r.weight).abs() < 1e-12);
        }
    }

    #[test]
    fn exported_energies_match(fam in family(), n in 2usize..4, seed in any::<u64>()) {
        let spec = LatticeSpec::from_family(fam, n).unwrap();
        let p = IsingProblem::for_lattice(&spec, &HopModel::uniform(), n, None).unwrap();
        let file = parse_qubo(&qubo_text(&p)).unwrap();
        let mut x = seed | 1;
        for _ in 0..10 {
            let bits: Vec<bool> = (0..p.num_vars()).map(|_| {
                x ^= x << 13;
                x ^= x >> 7;
                x ^= x << 17;
                x % 5 == 0
            }).collect();
            prop_assert!((file.energy(&bits, p.constant_offset).unwrap() - p.energy(&bits).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn no_dropout_no_bias(seed in any::<u64>(), trials in 1usize..5) {
        let s = Scenario::new(&LatticeSpec::builtin("triangular", 5).unwrap(), &HopModel::uniform(), 5).unwrap();
        let recs = s.enumerate(5).unwrap();
        let r = dropout_sensitivity(&recs, 0.0, seed, trials).unwrap();
        prop_assert_eq!(r.mean_bias, 0.0);
        prop_assert_eq!(r.spread, 0.0);
    }
}
