//! Randomized invariants over the public API.

use arff::linalg::{self, Design, SolverConfig};
use arff::model::{relative_l2_error, C64, Dataset, FrequencySet, LatticeSpec};
use arff::output;
use arff::rng::RngStream;
use arff::sampler::{self, WalkConfig, WalkMode};
use arff::targets::{self, FourierCoefficientTable, TabulatedDistribution, TargetKind, TargetSpec};
use arff::trainer::{self, Phase, PhaseRecord, RunHistory};
use proptest::prelude::*;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn solver(lambda1: f64, lambda2: f64) -> SolverConfig {
    SolverConfig {
        lambda1,
        lambda2,
        cg_rel_tol: 1e-12,
        cg_max_iters: 10_000,
        newton_tol: 1e-10,
        newton_max_iters: 60,
    }
}

/// Deterministic small instance: K lattice or continuous frequencies and a
/// J-point dataset, everything drawn from one seeded stream.
fn random_instance(seed: u64, d: usize, k: usize, j: usize) -> (FrequencySet, Dataset) {
    let mut rng = RngStream::new(seed);
    let coords: Vec<f64> = (0..k * d).map(|_| rng.standard_normal()).collect();
    let freqs = FrequencySet::continuous(d, coords);
    let inputs: Vec<f64> = (0..j * d).map(|_| rng.standard_normal()).collect();
    let targets: Vec<C64> =
        (0..j).map(|_| c(rng.standard_normal(), rng.standard_normal())).collect();
    (freqs, Dataset::new(d, inputs, targets, 0.0))
}

// Cheap structural invariants keep the default case count.
proptest! {
    #[test]
    fn wrapped_coordinates_land_in_the_box(
        x in -200.0f64..200.0,
        q in prop_oneof![Just(4.0f64), Just(12.0), Just(25.5)],
        shift in -5i64..=5,
    ) {
        let w = targets::wrap_periodic(x, q);
        prop_assert!((-q / 2.0..q / 2.0).contains(&w), "wrap({x}, {q}) = {w}");
        let shifted = targets::wrap_periodic(x + q * shift as f64, q);
        // One period step can cost a few ulps of q at the box edge.
        prop_assert!((shifted - w).abs() < 1e-9 * q.max(x.abs()), "shift by {shift} moved {w} to {shifted}");
    }

    #[test]
    fn relative_error_is_a_scale_invariant_squared_ratio(
        pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..40),
        alpha in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0],
    ) {
        let mut pred: Vec<C64> = pairs.iter().map(|&(a, b, _, _)| c(a, b)).collect();
        let mut truth: Vec<C64> = pairs.iter().map(|&(_, _, a, b)| c(a, b)).collect();
        // Pin the truth away from zero so the ratio is defined.
        truth[0] += c(1.0, 0.0);
        let err = relative_l2_error(&pred, &truth).unwrap();
        prop_assert!(err >= 0.0);
        prop_assert_eq!(relative_l2_error(&truth, &truth).unwrap(), 0.0);
        for v in pred.iter_mut() {
            *v *= alpha;
        }
        let mut scaled_truth = truth.clone();
        for v in scaled_truth.iter_mut() {
            *v *= alpha;
        }
        let scaled = relative_l2_error(&pred, &scaled_truth).unwrap();
        prop_assert!((scaled - err).abs() <= 1e-9 * (1.0 + err), "{err} became {scaled} under scaling");
    }

    #[test]
    fn lattice_walks_stay_on_the_lattice(
        indices in prop::collection::vec(-20i64..=20, 1..60),
        dim in 1usize..=3,
        delta in 0.01f64..3.0,
        seed in any::<u64>(),
    ) {
        let spec = LatticeSpec::new(12.0).unwrap();
        let k = indices.len() / dim;
        prop_assume!(k > 0);
        let set = FrequencySet::lattice(spec, dim, indices[..k * dim].to_vec());
        let cfg = WalkConfig { delta, mode: WalkMode::LatticeProjected(spec) };
        let mut rng = RngStream::new(seed);
        let stepped = sampler::lattice_walk_step(&set, &cfg, &mut rng).unwrap();
        prop_assert_eq!(stepped.len(), k);
        prop_assert_eq!(stepped.dim(), dim);
        let h = spec.spacing();
        for coord in stepped.to_dense() {
            let nearest = (coord / h).round() * h;
            prop_assert!((coord - nearest).abs() < 1e-9, "{coord} is off-lattice");
        }
    }

    #[test]
    fn resampled_indices_are_in_range_and_reproducible(
        raw in prop::collection::vec(0.0f64..1.0, 1..50),
        count in 0usize..150,
        seed in any::<u64>(),
    ) {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 0.0);
        let probs: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let draws = sampler::multinomial_resample(&probs, count, &mut RngStream::new(seed)).unwrap();
        prop_assert_eq!(draws.len(), count);
        prop_assert!(draws.iter().all(|&i| i < probs.len()));
        let again = sampler::multinomial_resample(&probs, count, &mut RngStream::new(seed)).unwrap();
        prop_assert_eq!(draws, again);
    }

    #[test]
    fn cutoff_keeps_exactly_the_large_groups(
        amps in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..40),
        epsilon in 0.0f64..1.5,
    ) {
        let k = amps.len();
        let set = FrequencySet::continuous(1, (0..k).map(|i| i as f64).collect());
        let amps: Vec<C64> = amps.iter().map(|&(a, b)| c(a, b)).collect();
        let agg = sampler::aggregate_equal_frequencies(&set, &amps);
        match sampler::cutoff_distribution(&agg, epsilon) {
            Ok(dist) => {
                let total: f64 = dist.probs.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                let surviving: std::collections::HashSet<usize> = dist.groups.iter().copied().collect();
                for (g, b) in agg.aggregate.iter().enumerate() {
                    let kept = b.norm() >= epsilon && b.norm() > 0.0;
                    prop_assert_eq!(kept, surviving.contains(&g), "group {} misclassified", g);
                }
                // Probabilities stay proportional to the surviving moduli.
                let mass: f64 = dist.groups.iter().map(|&g| agg.aggregate[g].norm()).sum();
                for (&g, &p) in dist.groups.iter().zip(&dist.probs) {
                    let expect = agg.aggregate[g].norm() / mass;
                    prop_assert!((p - expect).abs() < 1e-12);
                }
            }
            Err(_) => {
                prop_assert!(agg.aggregate.iter().all(|b| b.norm() < epsilon || b.norm() == 0.0));
            }
        }
    }

    #[test]
    fn aggregation_preserves_amplitude_mass(
        base in prop::collection::vec(-6i64..=6, 1..30),
        picks in prop::collection::vec(any::<prop::sample::Index>(), 0..30),
        amp_seed in any::<u64>(),
    ) {
        // Duplicate a random selection of lattice rows to force collisions.
        let mut indices = base.clone();
        for pick in &picks {
            indices.push(base[pick.index(base.len())]);
        }
        let spec = LatticeSpec::new(12.0).unwrap();
        let set = FrequencySet::lattice(spec, 1, indices.clone());
        let mut rng = RngStream::new(amp_seed);
        let amps: Vec<C64> =
            (0..indices.len()).map(|_| c(rng.standard_normal(), rng.standard_normal())).collect();
        let agg = sampler::aggregate_equal_frequencies(&set, &amps);
        prop_assert_eq!(agg.group_of.len(), indices.len());
        let direct: C64 = amps.iter().sum();
        let grouped: C64 = agg.aggregate.iter().sum();
        prop_assert!((direct - grouped).norm() < 1e-12);
        let members: usize = agg.multiplicity.iter().sum();
        prop_assert_eq!(members, indices.len());
        // Representatives must name distinct frequencies.
        let rep_idx: std::collections::HashSet<i64> = agg.reps.iter().map(|&r| indices[r]).collect();
        prop_assert_eq!(rep_idx.len(), agg.reps.len());
        for (k, &g) in agg.group_of.iter().enumerate() {
            prop_assert_eq!(indices[agg.reps[g]], indices[k]);
        }
    }

    #[test]
    fn validation_split_partitions_without_overlap(
        n in 4usize..300,
        fraction in 0.05f64..0.6,
        seed in any::<u64>(),
    ) {
        let n_val = (fraction * n as f64).floor() as usize;
        prop_assume!(n_val >= 1 && n_val < n);
        let (train, val) = trainer::validation_split(n, fraction, &mut RngStream::new(seed)).unwrap();
        prop_assert_eq!(val.len(), n_val);
        prop_assert_eq!(train.len() + val.len(), n);
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(train.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(val.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn sibling_streams_are_independent_but_replayable(
        seed in any::<u64>(),
        a in 0u64..100,
        b in 0u64..100,
    ) {
        prop_assume!(a != b);
        let draw = |s: &mut RngStream| -> Vec<f64> { (0..8).map(|_| s.standard_normal()).collect() };
        let base = RngStream::new(seed);
        let left = draw(&mut base.child_index(a));
        let right = draw(&mut base.child_index(b));
        prop_assert_ne!(&left, &right);
        prop_assert_eq!(&left, &draw(&mut base.child_index(a)));
        let named = draw(&mut base.child("walk"));
        prop_assert_ne!(&named, &draw(&mut base.child("resample")));
        prop_assert_eq!(&named, &draw(&mut base.child("walk")));
    }

    #[test]
    fn history_csv_round_trips_every_float(
        rows in prop::collection::vec(
            (0usize..10_000, 0usize..4, any::<f64>(), any::<f64>(), prop::option::of(0usize..5000)),
            0..25,
        ),
    ) {
        let records: Vec<PhaseRecord> = rows
            .iter()
            .map(|&(iteration, phase, tr, va, cg)| PhaseRecord {
                iteration,
                phase: [Phase::Walk, Phase::Solve, Phase::Resample, Phase::Final][phase],
                train_rel_err: tr.is_finite().then_some(tr),
                val_rel_err: va.is_finite().then_some(va),
                cg_iters: cg,
                wall_ms: 0.0,
            })
            .collect();
        let history = RunHistory {
            records: records.clone(),
            snapshots: Vec::new(),
            test_rel_err: None,
            tv_to_reference: Vec::new(),
            warnings: Vec::new(),
        };
        let parsed = output::parse_history(&output::history_csv(&history, false)).unwrap();
        prop_assert_eq!(parsed.len(), records.len());
        for (p, r) in parsed.iter().zip(&records) {
            prop_assert_eq!(p.iteration, r.iteration);
            prop_assert_eq!(p.phase, r.phase);
            prop_assert_eq!(p.train_rel_err.map(f64::to_bits), r.train_rel_err.map(f64::to_bits));
            prop_assert_eq!(p.val_rel_err.map(f64::to_bits), r.val_rel_err.map(f64::to_bits));
            prop_assert_eq!(p.cg_iters, r.cg_iters);
        }
    }

    #[test]
    fn model_csv_round_trips_both_frequency_kinds(
        vals in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 1..30),
        lattice in any::<bool>(),
    ) {
        let k = vals.len();
        let freqs = if lattice {
            let spec = LatticeSpec::new(12.0).unwrap();
            FrequencySet::lattice(spec, 1, (0..k as i64).map(|i| i - 7).collect())
        } else {
            FrequencySet::continuous(1, vals.iter().map(|&(a, _)| a / 1e3).collect())
        };
        let amps: Vec<C64> = vals.iter().map(|&(a, b)| c(a, b)).collect();
        let model = arff::model::RffModel::new(freqs, amps);
        let parsed = output::parse_model(&output::model_csv(&model)).unwrap();
        prop_assert_eq!(parsed.amps.len(), model.amps.len());
        for (p, a) in parsed.amps.iter().zip(&model.amps) {
            prop_assert_eq!(p.re.to_bits(), a.re.to_bits());
            prop_assert_eq!(p.im.to_bits(), a.im.to_bits());
        }
        let before = model.freqs.to_dense();
        let after = parsed.freqs.to_dense();
        for (x, y) in before.iter().zip(&after) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn idx_images_and_labels_round_trip(
        rows in 1usize..6,
        cols in 1usize..6,
        count in 0usize..5,
        seed in any::<u64>(),
    ) {
        let mut rng = RngStream::new(seed);
        let raw: Vec<u8> = (0..rows * cols * count).map(|_| (rng.uniform() * 256.0) as u8).collect();
        let labels: Vec<u8> = (0..count).map(|_| (rng.uniform() * 10.0) as u8).collect();
        let images = arff::classify::load_idx_images(&arff::classify::encode_idx_images(rows, cols, &raw)).unwrap();
        prop_assert_eq!(images.count, count);
        prop_assert_eq!(images.rows, rows);
        prop_assert_eq!(images.cols, cols);
        let back: Vec<u8> = images.pixels.iter().map(|&p| (p * 255.0).round() as u8).collect();
        prop_assert_eq!(back, raw);
        let parsed = arff::classify::load_idx_labels(&arff::classify::encode_idx_labels(&labels)).unwrap();
        prop_assert_eq!(parsed.labels, labels);
    }
}

// Numeric properties pay for solves; keep the case counts small.
proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cg_agrees_with_the_dense_solver(
        seed in any::<u64>(),
        d in 1usize..=2,
        k in 2usize..=14,
        j in 8usize..=40,
        lambda1 in 0.05f64..1.0,
    ) {
        let (freqs, ds) = random_instance(seed, d, k, j);
        let cg = linalg::cg_solve(&freqs, &ds, &solver(lambda1, 0.0)).unwrap();
        let dense = linalg::dense_solve(&freqs, &ds, lambda1).unwrap();
        let diff: f64 = cg.amps.iter().zip(&dense).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let scale: f64 = dense.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(diff <= 1e-7 * scale.max(1e-12), "cg drifted {diff} from dense at scale {scale}");
        // The reported solution must satisfy its own normal equations.
        let av = linalg::apply_design(&freqs, &ds.inputs, &cg.amps).unwrap();
        let residual: Vec<C64> = av.iter().zip(&ds.targets).map(|(a, y)| a - y).collect();
        let mut normal = linalg::apply_adjoint(&freqs, &ds.inputs, &residual).unwrap();
        for (n, v) in normal.iter_mut().zip(&cg.amps) {
            *n = *n / ds.len() as f64 + lambda1 * v;
        }
        let lhs: f64 = normal.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let rhs = linalg::apply_adjoint(&freqs, &ds.inputs, &ds.targets).unwrap();
        let b: f64 = rhs.iter().map(|z| (z / ds.len() as f64).norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(lhs <= 1e-9 * b.max(1e-12), "normal residual {lhs} vs rhs {b}");
    }

    #[test]
    fn wirtinger_gradient_matches_finite_differences(
        seed in any::<u64>(),
        k in 1usize..=10,
        j in 5usize..=30,
        lambda1 in 0.01f64..0.5,
        lambda2 in prop_oneof![Just(0.0f64), 0.01f64..0.5],
    ) {
        let (freqs, ds) = random_instance(seed, 1, k, j);
        let design = Design::build(&ds.inputs, &freqs.to_dense(), 1);
        let mut rng = RngStream::new(seed ^ 0x9e37);
        let v: Vec<C64> = (0..k).map(|_| c(rng.standard_normal(), rng.standard_normal())).collect();
        let grad = linalg::objective_gradient(&design, &ds.targets, lambda1, lambda2, &v);
        let h = 1e-6;
        for t in 0..k {
            for part in 0..2 {
                let mut plus = v.clone();
                let mut minus = v.clone();
                if part == 0 {
                    plus[t].re += h;
                    minus[t].re -= h;
                } else {
                    plus[t].im += h;
                    minus[t].im -= h;
                }
                let fd = (linalg::objective_value(&design, &ds.targets, lambda1, lambda2, &plus)
                    - linalg::objective_value(&design, &ds.targets, lambda1, lambda2, &minus))
                    / (2.0 * h);
                let analytic = if part == 0 { 2.0 * grad[t].re } else { 2.0 * grad[t].im };
                prop_assert!(
                    (fd - analytic).abs() <= 1e-4 * (1.0 + fd.abs()),
                    "coordinate {t}/{part}: fd {fd} vs analytic {analytic}"
                );
            }
        }
    }

    #[test]
    fn planted_duplicates_share_their_amplitude(
        seed in any::<u64>(),
        distinct in 2usize..=6,
        copies in 2usize..=4,
        lambda1 in 0.05f64..1.0,
    ) {
        let spec = LatticeSpec::new(12.0).unwrap();
        let mut indices = Vec::new();
        for n in 0..distinct {
            for _ in 0..copies {
                indices.push(n as i64 * 2 - distinct as i64);
            }
        }
        let freqs = FrequencySet::lattice(spec, 1, indices);
        let mut rng = RngStream::new(seed);
        let j = 40;
        let inputs: Vec<f64> = (0..j).map(|_| rng.standard_normal()).collect();
        let targets: Vec<C64> = (0..j).map(|_| c(rng.standard_normal(), rng.standard_normal())).collect();
        let ds = Dataset::new(1, inputs, targets, 0.0);
        let amps = linalg::dense_solve(&freqs, &ds, lambda1).unwrap();
        let agg = sampler::aggregate_equal_frequencies(&freqs, &amps);
        for g in 0..agg.reps.len() {
            let members: Vec<C64> = (0..amps.len())
                .filter(|&k| agg.group_of[k] == g)
                .map(|k| amps[k])
                .collect();
            prop_assert_eq!(members.len(), copies);
            let rep = members[0];
            for m in &members {
                prop_assert!((m - rep).norm() <= 1e-8 * (1.0 + rep.norm()), "{m} vs {rep}");
            }
            let total: C64 = members.iter().sum();
            prop_assert!((agg.aggregate[g] - total).norm() < 1e-12);
        }
    }

    #[test]
    fn the_optimal_density_beats_random_densities(
        coeffs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 5..=9),
        noise in prop::collection::vec(0.01f64..1.0, 9),
        n_max in 2i64..=4,
    ) {
        let side = (2 * n_max + 1) as usize;
        let spec = LatticeSpec::new(12.0).unwrap();
        let mut full = vec![C64::new(0.0, 0.0); side];
        for (i, &(a, b)) in coeffs.iter().enumerate() {
            full[i % side] += c(a, b);
        }
        prop_assume!(full.iter().any(|z| z.norm() > 1e-3));
        let table = FourierCoefficientTable::from_coefficients(spec, 1, n_max, full).unwrap();
        let optimal = targets::optimal_distribution(&table).unwrap();
        let c_star = targets::rate_constant(&table, &optimal).unwrap();
        let sum_abs: f64 = table.coefficients().iter().map(|z| z.norm()).sum();
        prop_assert!((c_star - sum_abs * sum_abs).abs() <= 1e-10 * sum_abs * sum_abs);
        // Any fully supported density does no better.
        let total: f64 = noise[..side].iter().sum();
        let probs: Vec<f64> = noise[..side].iter().map(|w| w / total).collect();
        let rival = TabulatedDistribution::new(spec, 1, n_max, probs).unwrap();
        let c_rival = targets::rate_constant(&table, &rival).unwrap();
        prop_assert!(c_star <= c_rival * (1.0 + 1e-12), "{c_star} > {c_rival}");
    }

    #[test]
    fn fourier_tables_of_real_targets_are_conjugate_symmetric(
        kind in prop_oneof![Just(TargetKind::Bump), Just(TargetKind::SineIntegral)],
        sharpness in 0.3f64..1.2,
        flip in any::<bool>(),
    ) {
        let spec = LatticeSpec::new(12.0).unwrap();
        let direction = if flip { vec![-1.0] } else { vec![1.0] };
        let target = TargetSpec::new(kind, direction, sharpness, Some(spec)).unwrap();
        let table = targets::compute_fourier_table(&target, 3, 64).unwrap();
        let coeffs = table.coefficients();
        for flat in 0..coeffs.len() {
            let n = table.index_vector(flat)[0];
            let mirrored = table.get(&[-n]);
            let here = coeffs[flat];
            prop_assert!(
                (mirrored - here.conj()).norm() <= 1e-10 * (1.0 + here.norm()),
                "n = {n}: {here} vs {mirrored}"
            );
        }
    }

    #[test]
    fn tv_distance_stays_in_the_unit_interval(
        indices in prop::collection::vec(-3i64..=3, 1..50),
        weight_seed in any::<u64>(),
    ) {
        let spec = LatticeSpec::new(12.0).unwrap();
        let n_max = 3i64;
        let side = (2 * n_max + 1) as usize;
        let mut rng = RngStream::new(weight_seed);
        let raw: Vec<f64> = (0..side).map(|_| rng.uniform() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let reference = TabulatedDistribution::new(spec, 1, n_max, probs).unwrap();
        let set = FrequencySet::lattice(spec, 1, indices.clone());
        let tv = trainer::tv_distance_to_optimal(&set, &reference).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&tv), "tv = {tv}");
        // A sample drawn exactly proportional to the reference has distance 0.
        let counts: Vec<usize> = (-n_max..=n_max)
            .map(|n| (reference.prob(&[n]) * 1000.0).round() as usize)
            .collect();
        prop_assume!(counts.iter().all(|&m| m > 0));
        let mut exact = Vec::new();
        for (flat, &m) in counts.iter().enumerate() {
            exact.extend(std::iter::repeat_n(flat as i64 - n_max, m));
        }
        let empirical: Vec<f64> = counts.iter().map(|&m| m as f64).collect();
        let total_m: f64 = empirical.iter().sum();
        let matched = TabulatedDistribution::new(spec, 1, n_max, empirical.iter().map(|m| m / total_m).collect()).unwrap();
        let zero = trainer::tv_distance_to_optimal(&FrequencySet::lattice(spec, 1, exact), &matched).unwrap();
        prop_assert!(zero < 1e-12, "self distance {zero}");
    }
}
