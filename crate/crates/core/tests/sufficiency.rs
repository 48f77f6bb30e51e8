use hiergibbs::gibbs::{psi_log_conditional_suff, psi_log_conditional_theta, Blocking, ChainState, KernelSpec};
use hiergibbs::models::{simulate_data, GammaPrior, GlobalParams, ModelSpec, MuPrior, PriorSpec};
use proptest::prelude::*;

fn spec_for(blocking: Blocking, discrete: bool) -> KernelSpec {
    let model = match blocking {
        Blocking::ExtendedThetaMuTau0Tau1 | Blocking::FixedDimMuTau => ModelSpec::normal_unknown_tau0(3),
        _ if discrete => ModelSpec::binomial_logit(4),
        _ => ModelSpec::normal_known_tau0(3),
    }
    .unwrap();
    let prior = PriorSpec {
        mu: MuPrior::NormalOverTau { mean: 0.5, scale: 10.0 },
        tau1: GammaPrior::new(2.0, 1.5),
        tau0: Some(GammaPrior::new(1.5, 2.0)),
    };
    KernelSpec::new(model, prior, blocking).unwrap()
}

fn variants() -> Vec<(Blocking, bool)> {
    let mut v: Vec<(Blocking, bool)> = Blocking::ALL.iter().map(|b| (*b, false)).collect();
    v.extend([Blocking::P1KnownTau1, Blocking::P3SequentialMuTau, Blocking::TwoBlockThetaVsPsi].map(|b| (b, true)));
    v
}

/// Moves every psi-block component of `base` by the given factors.
fn perturb(spec: &KernelSpec, base: &GlobalParams, dmu: f64, f1: f64, f0: f64) -> GlobalParams {
    let mut p = *base;
    for i in spec.blocking.psi_block() {
        match i {
            0 => p.mu += dmu,
            1 => p.tau1 *= f1,
            _ => p.tau0 *= f0,
        }
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    // The psi-conditional computed from theta and from the sufficient
    // statistics may differ by a theta-dependent constant only, so their
    // differences between two psi values must agree.
    #[test]
    fn conditionals_agree_through_sufficient_statistics(
        seed in 0u64..1_000_000,
        theta_shift in -2.0f64..2.0,
        mu in -2.0f64..2.0,
        tau1 in 0.2f64..5.0,
        tau0 in 0.2f64..5.0,
        dmu in -1.0f64..1.0,
        f1 in 0.3f64..3.0,
        f0 in 0.3f64..3.0,
    ) {
        for (blocking, discrete) in variants() {
            let spec = spec_for(blocking, discrete);
            let data = simulate_data(&spec.model, &GlobalParams::new(0.3, 1.2, 0.8), 25, seed).unwrap();
            let theta: Vec<f64> = if blocking.has_groups() {
                (0..25).map(|j| theta_shift + ((j as f64) * 0.37 + seed as f64 * 1e-3).sin()).collect()
            } else {
                Vec::new()
            };
            let state = ChainState::new(&spec, &data, theta, GlobalParams::new(mu, tau1, tau0)).unwrap();
            let other = perturb(&spec, &state.psi, dmu, f1, f0);
            let a = psi_log_conditional_theta(&spec, &data, &state, &state.psi).unwrap()
                - psi_log_conditional_theta(&spec, &data, &state, &other).unwrap();
            let b = psi_log_conditional_suff(&spec, &data, &state, &state.psi).unwrap()
                - psi_log_conditional_suff(&spec, &data, &state, &other).unwrap();
            prop_assert!((a - b).abs() < 1e-10, "{blocking:?} discrete={discrete}: {a} vs {b}");
        }
    }
}

#[test]
fn components_outside_the_psi_block_are_rejected() {
    let spec = spec_for(Blocking::P1KnownTau1, false);
    let data = simulate_data(&spec.model, &GlobalParams::new(0.0, 1.0, 1.0), 5, 1).unwrap();
    let state = ChainState::new(&spec, &data, vec![0.0; 5], GlobalParams::new(0.0, 1.0, 1.0)).unwrap();
    let moved = GlobalParams::new(0.0, 2.0, 1.0);
    assert!(psi_log_conditional_theta(&spec, &data, &state, &moved).is_err());
    assert!(psi_log_conditional_suff(&spec, &data, &state, &moved).is_err());
}
