use proptest::prelude::*;
use threshnet::activation::ActivationSpec;
use threshnet::experiment::parse_config;
use threshnet::hermite::{cross_coeff, HermiteIndex};
use threshnet::io::{dataset_from_bytes, dataset_to_bytes, network_from_text, network_to_text};
use threshnet::network_model::{PlantedNetwork, SampleOracle, SamplingMode};
use threshnet::polynomial::SparsePolynomial;
use threshnet::stats_core::{McEstimate, RngSeed};
use threshnet::structural::{build_graph, extract_cliques, PairValues, SupportFamily};

/// Splits `0..n` into consecutive blocks with the given sizes, under `perm`.
fn blocks(sizes: &[usize], perm: &[usize]) -> Vec<Vec<usize>> {
    let mut at = 0;
    sizes
        .iter()
        .map(|&s| {
            let b = (at..at + s).map(|v| perm[v]).collect();
            at += s;
            b
        })
        .collect()
}

fn values_for(n: usize, sets: &[Vec<usize>]) -> PairValues {
    let owner = |v: usize| sets.iter().position(|s| s.contains(&v));
    let mut values = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let mean = if owner(i) == owner(j) { 1.0 } else { 0.05 };
            values.push(McEstimate { mean, stderr: 0.01, count: 1000 });
        }
    }
    PairValues { n, values }
}

fn perm_strategy(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cliques_follow_relabelling(sizes in prop::collection::vec(2usize..5, 1..4), seed in any::<u64>()) {
        let n: usize = sizes.iter().sum();
        let mut rng = RngSeed(seed).rng();
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let ident: Vec<usize> = (0..n).collect();
        let base = extract_cliques(&build_graph(&values_for(n, &blocks(&sizes, &ident)), 0.5).unwrap()).unwrap();
        let moved = extract_cliques(&build_graph(&values_for(n, &blocks(&sizes, &perm)), 0.5).unwrap()).unwrap();
        let mapped = SupportFamily::new(base.sets().iter().map(|s| s.iter().map(|&v| perm[v]).collect()).collect()).unwrap();
        prop_assert_eq!(moved, mapped);
    }

    #[test]
    fn family_ignores_order(perm in perm_strategy(9), flip in any::<bool>()) {
        let mut sets = blocks(&[3, 2, 4], &perm);
        let a = SupportFamily::new(sets.clone()).unwrap();
        if flip {
            sets.reverse();
        }
        sets.iter_mut().for_each(|s| s.reverse());
        prop_assert_eq!(a, SupportFamily::new(sets).unwrap());
    }

    #[test]
    fn network_text_round_trip(d in 1usize..5, extra in 0usize..3, t in 0.0f64..3.0, c in -1.0f64..1.0, seed in any::<u64>()) {
        let n = d + extra;
        let net = PlantedNetwork::orthonormal(n, d, ActivationSpec::sign(t).unwrap(), SparsePolynomial::linear_plus_pairs(d, c), RngSeed(seed)).unwrap();
        let text = network_to_text(&net);
        let back = network_from_text(&text).unwrap();
        prop_assert_eq!(&network_to_text(&back), &text);
        let mut rng = RngSeed(seed ^ 1).rng();
        for _ in 0..5 {
            let x = threshnet::stats_core::random_unit(&mut rng, n);
            prop_assert_eq!(net.eval(&x).unwrap(), back.eval(&x).unwrap());
        }
    }

    #[test]
    fn dataset_bytes_round_trip(n in 1usize..6, count in 1usize..40, seed in any::<u64>()) {
        let net = PlantedNetwork::orthonormal(n, n, ActivationSpec::sign(0.5).unwrap(), SparsePolynomial::linear(n), RngSeed(seed)).unwrap();
        let data = SampleOracle::new(net).sample_batch(&SamplingMode::Plain, count, RngSeed(seed)).unwrap();
        prop_assert_eq!(dataset_from_bytes(&dataset_to_bytes(&data)).unwrap(), data);
    }

    #[test]
    fn config_round_trip(seed in any::<u32>(), samples in 1000usize..100_000, d in 2usize..8, mult in 1.5f64..4.0) {
        let text = format!(
            "scenario = \"landscape-obo\"\nseed = {seed}\nsamples = {samples}\n[network]\nd = {d}\n[landscape]\nlambda_multiplier = {mult:?}\n"
        );
        let cfg = parse_config(&text).unwrap().config;
        let again = parse_config(&cfg.to_toml()).unwrap();
        prop_assert_eq!(&again.config, &cfg);
        prop_assert_eq!(again.config.hash(), cfg.hash());
    }

    #[test]
    fn cross_coeff_at_unit_scale_is_identity(n in 0usize..12, m in 0usize..12) {
        let v = cross_coeff(HermiteIndex::new(n).unwrap(), HermiteIndex::new(m).unwrap(), 1.0);
        let want = (n == m) as u8 as f64;
        prop_assert!((v - want).abs() < 1e-12, "{} vs {}", v, want);
    }
}
