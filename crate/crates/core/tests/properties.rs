mod common;

use common::{random_params, random_sequence};
use modfuse::model::{parameters_from_json, parameters_to_json};
use modfuse::{baum_welch, decode_all, forward_backward, label_model, DecodeMode, EmConfig, ModelParameters};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

fn instance(seed: u64, t_len: usize, n_channels: usize, p_missing: f64) -> (ModelParameters, modfuse::ObservationSequence) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = random_params(&mut rng, n_channels);
    let s = random_sequence(&mut rng, "x", t_len, n_channels, p_missing);
    (p, s)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posteriors_are_distributions(seed in any::<u64>(), t_len in 1usize..60, n_channels in 1usize..5, miss in 0.0f64..1.0) {
        let (p, s) = instance(seed, t_len, n_channels, miss);
        let post = forward_backward(&p, &s).unwrap();
        for row in &post.state {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
        }
        for (t, m) in post.pairwise.iter().enumerate() {
            for i in 0..3 {
                let out: f64 = m[i].iter().sum();
                prop_assert!((out - post.state[t][i]).abs() < 1e-9);
                let inflow: f64 = (0..3).map(|k| m[k][i]).sum();
                prop_assert!((inflow - post.state[t + 1][i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn relabeling_states_permutes_posteriors(seed in any::<u64>(), t_len in 1usize..30, perm in 0usize..6) {
        let (p, s) = instance(seed, t_len, 3, 0.3);
        let perm = PERMS[perm];
        let q = p.permute_states(&perm);
        let a = forward_backward(&p, &s).unwrap();
        let b = forward_backward(&q, &s).unwrap();
        prop_assert!((a.log_likelihood - b.log_likelihood).abs() < 1e-9);
        for t in 0..t_len {
            for k in 0..3 {
                prop_assert!((a.state[t][k] - b.state[t][perm[k]]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn em_never_decreases_likelihood(seed in any::<u64>(), n_seq in 1usize..12, t_len in 2usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seqs: Vec<_> = (0..n_seq).map(|i| random_sequence(&mut rng, &format!("s{i}"), t_len, 2, 0.4)).collect();
        let init = ModelParameters::random(&mut rng, 2);
        let fit = baum_welch(&seqs, &init, &EmConfig { max_iters: 40, tolerance: 0.0, ..EmConfig::default() }).unwrap();
        for w in fit.trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn random_parameters_are_stochastic_and_round_trip(seed in any::<u64>(), n_channels in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = ModelParameters::random(&mut rng, n_channels);
        let rows = std::iter::once(p.initial()).chain(p.transition().iter()).chain(p.emissions().iter().flatten());
        for row in rows {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let names: Vec<String> = (0..n_channels).map(|c| format!("src{c}")).collect();
        let (back, back_names) = parameters_from_json(&parameters_to_json(&p, &names).unwrap()).unwrap();
        prop_assert_eq!(back, p);
        prop_assert_eq!(back_names, names);
    }

    #[test]
    fn perturbed_rows_are_rejected(seed in any::<u64>(), delta in 1e-7f64..0.5, which in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&mut rng, 1);
        let mut t = *p.transition();
        t[which][0] += delta;
        prop_assert!(ModelParameters::new(*p.initial(), t, p.emissions().to_vec()).is_err());
        let mut e = p.emissions()[0];
        e[which] = [1.0 + delta, -delta, 0.0];
        prop_assert!(ModelParameters::new(*p.initial(), *p.transition(), vec![e]).is_err());
    }
}

#[test]
fn labels_survive_any_state_order() {
    let truth = modfuse::model::reference_parameters();
    let corpus = modfuse::generate(&modfuse::GeneratorConfig {
        n_districts: 150,
        n_weeks: 20,
        seed: 11,
        missingness: vec![modfuse::Missingness::Constant(0.3); 4],
        ..Default::default()
    })
    .unwrap();
    let (_, reference) = label_model(&truth, &corpus.sequences, DecodeMode::Posterior).unwrap();
    let expected = decode_all(&reference, &corpus.sequences, DecodeMode::Posterior, 0.75).unwrap();
    for perm in PERMS {
        let shuffled = truth.permute_states(&perm);
        let (assignment, labeled) = label_model(&shuffled, &corpus.sequences, DecodeMode::Posterior).unwrap();
        // Label k must land on the cluster that perm sent state k to.
        for k in 0..3 {
            assert_eq!(assignment.mapping[perm[k]], k);
        }
        assert_eq!(labeled, reference);
        let got = decode_all(&labeled, &corpus.sequences, DecodeMode::Posterior, 0.75).unwrap();
        assert_eq!(got, expected);
    }
}
