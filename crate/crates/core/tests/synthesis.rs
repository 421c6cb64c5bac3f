mod common;

use std::collections::BTreeMap;

use chakra_core::gen::{generate_workload, Parallelism, TraceBuilder, WorkloadSpec};
use chakra_core::schema::CommType;
use chakra_core::sim::{run_simulation, SimConfig, Topology};
use chakra_core::synth::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Draws from a mixture given as (weight, mean, sd) triples.
fn mixture_samples(parts: &[(f64, f64, f64)], n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut u: f64 = rng.random();
            let &(_, m, sd) = parts.iter().find(|p| {
                u -= p.0;
                u < 0.0
            }).unwrap_or(parts.last().unwrap());
            Normal::new(m, sd).unwrap().sample(&mut rng)
        })
        .collect()
}

#[test]
fn gmm_recovers_known_mixtures() {
    let cases: [&[(f64, f64, f64)]; 3] =
        [&[(1.0, 14.0, 1.5)], &[(0.3, 10.0, 1.0), (0.7, 20.0, 1.5)], &[(0.5, 8.0, 0.5), (0.5, 12.0, 0.8)]];
    for parts in cases {
        let xs = mixture_samples(parts, 10_000, 42);
        let opts = EmOptions { seed: 1, ..EmOptions::default() };
        let (g, report) = Gmm::fit(&xs, parts.len(), &opts).unwrap();
        assert!(report.converged);
        for (c, &(w, m, _)) in g.components.iter().zip(parts) {
            assert!((c.mean - m).abs() <= 0.1, "mean {} vs {m}", c.mean);
            assert!((c.weight - w).abs() <= 0.05, "weight {} vs {w}", c.weight);
        }
        assert_eq!(Gmm::fit(&xs, parts.len(), &opts).unwrap().0, g);
    }
}

#[test]
fn master_trace_round_trips_random_corpora() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..200 {
        let ranks = rng.random_range(2..=16);
        let (traces, _) = common::random_mergeable(&mut rng, ranks, 100);
        let master = build_master_trace(&traces).unwrap();
        let back = reconstruct_rank_traces(&master, ranks);
        assert_eq!(comm_sequences(&back).unwrap(), comm_sequences(&traces).unwrap());
        for (a, b) in traces.iter().zip(&back) {
            let names = |t| collective_order(t).unwrap().iter().map(|n| n.name.clone()).collect::<Vec<_>>();
            assert_eq!(names(a), names(b));
        }
        let topo = Topology::torus(ranks, 1, (10e9, 10e9));
        run_simulation(&back, &SimConfig::new(topo)).unwrap();
    }
}

#[test]
fn swapped_group_order_is_rejected_with_the_group_named() {
    let rank = |r: u32, order: [&str; 2]| {
        let mut b = TraceBuilder::new(r);
        let x = b.coll(order[0], CommType::AllReduce, 64, "tp");
        let y = b.coll(order[1], CommType::AllReduce, 64, "tp");
        b.assign_dep(x, y).unwrap();
        b.finish().unwrap()
    };
    let err = build_master_trace(&[rank(0, ["A", "B"]), rank(1, ["B", "A"])]).unwrap_err();
    assert!(matches!(&err, MasterError::OrderConflict { group, .. } if group == "tp"), "{err}");
    assert!(err.to_string().contains("tp"));
}

#[test]
fn generated_workloads_merge() {
    let mut spec = WorkloadSpec::new(Parallelism::DpMp, 8);
    spec.dims = Some((4, 2));
    let traces = generate_workload(&spec).unwrap();
    let master = build_master_trace(&traces).unwrap();
    let back = reconstruct_rank_traces(&master, 8);
    assert_eq!(comm_sequences(&back).unwrap(), comm_sequences(&traces).unwrap());
}

fn known_models(p: [f64; 4]) -> SynthModels {
    let g = |m: f64| Gmm { components: vec![Component { weight: 1.0, mean: m, variance: 0.5 }] };
    SynthModels {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        comm_types: MODELED_TYPES.iter().map(|t| t.as_str().to_string()).collect(),
        clusters: vec![ClusterModel { weight: 1.0, composition: p.to_vec(), transition: None, lengths: vec![50] }],
        sizes: MODELED_TYPES.iter().zip([16.0, 14.0, 12.0, 10.0]).map(|(t, m)| (t.as_str().to_string(), g(m))).collect(),
    }
}

#[test]
fn synthesized_type_mix_matches_model() {
    let p = [0.55, 0.2, 0.15, 0.1];
    let models = known_models(p);
    let cfg = SynthConfig { npus: 2, seed: 4, length: Some(10_000), jitter: 0.0 };
    let master = models.synthesize_master(&cfg).unwrap();
    assert_eq!(master.ops.len(), 10_000);
    assert!(total_variation(&type_frequencies(&master), &p) <= 0.02);
}

#[test]
fn fit_then_synthesize_replays() {
    let corpus: Vec<MasterTrace> = [Parallelism::Dp, Parallelism::Mp, Parallelism::DpMp, Parallelism::MpDp]
        .into_iter()
        .map(|p| build_master_trace(&generate_workload(&WorkloadSpec::new(p, 4)).unwrap()).unwrap())
        .collect();
    let (models, _) = fit_models(&corpus, &FitConfig { seed: 9, ..FitConfig::default() }).unwrap();
    let reloaded = SynthModels::from_json(&models.to_json()).unwrap();
    assert_eq!(reloaded, models);
    for seed in 0..5 {
        let cfg = SynthConfig { npus: 8, seed, length: None, jitter: 0.25 };
        let traces = reloaded.synthesize(&cfg).unwrap();
        assert_eq!(traces, reloaded.synthesize(&cfg).unwrap());
        for t in &traces {
            assert!(t.validate().is_valid());
        }
        run_simulation(&traces, &SimConfig::new(Topology::torus(4, 2, (62e9, 62e9)))).unwrap();
    }
}

#[test]
fn synthesized_traces_are_not_copies() {
    let sources = generate_workload(&WorkloadSpec::new(Parallelism::Dp, 4)).unwrap();
    let (models, _) =
        fit_models(&[build_master_trace(&sources).unwrap()], &FitConfig { seed: 2, ..FitConfig::default() }).unwrap();
    let synth = models.synthesize(&SynthConfig { npus: 4, seed: 6, length: None, jitter: 0.3 }).unwrap();
    assert!(copied_sequences(&synth, &sources, 2).is_empty());
}

#[test]
fn fitted_sizes_track_the_corpus() {
    // sizes around 2^12 and 2^20 for all-reduce only
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ops: Vec<MasterOp> = (0..2000)
        .map(|i| {
            let e: f64 = if rng.random_bool(0.4) { 12.0 } else { 20.0 };
            MasterOp {
                seq_no: i,
                comm_type: CommType::AllReduce,
                comm_group: "world".into(),
                name: format!("c{i}"),
                participants: [0].into(),
                sizes: BTreeMap::from([(0, (e + rng.random_range(-0.2..0.2)).exp2() as u64)]),
            }
        })
        .collect();
    let (models, _) = fit_models(&[MasterTrace { ops }], &FitConfig::default()).unwrap();
    let g = &models.sizes["ALL_REDUCE"];
    assert!((g.components[0].mean - 12.0).abs() < 0.1 && (g.components[1].mean - 20.0).abs() < 0.1, "{g:?}");
    let synth = models.synthesize_master(&SynthConfig { npus: 1, seed: 1, length: Some(4000), jitter: 0.0 }).unwrap();
    let a: Vec<f64> = synth.ops.iter().map(|o| (o.sizes[&0] as f64).log2()).collect();
    let small = a.iter().filter(|x| **x < 16.0).count() as f64 / a.len() as f64;
    assert!((small - 0.4).abs() < 0.05, "{small}");
}
