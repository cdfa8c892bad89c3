//! Randomized invariant checks over the library's core operations:
//! conservation laws of the preprocessing steps, graph and sampling
//! postconditions of the tessellation layer, shape contracts of the
//! autoencoder, aggregator symmetries, and information-theoretic bounds
//! of the clustering metrics. Each block pins its own case count so the
//! whole suite stays fast on one core.

use std::collections::BTreeSet;

use chrono::Timelike;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

use mtc_regions::aggregator::{triplet_loss, AggregatorConfig, AggregatorKind, AggregatorModel, RegionFeatureMatrix};
use mtc_regions::eval::ami::{
    adjusted_mutual_information, weighted_entropy, weighted_mutual_information, EmiMode,
    WeightedClustering,
};
use mtc_regions::eval::mlp::{cosine_similarity, floor_distribution, kl_divergence, l1_distance};
use mtc_regions::geometry::Point;
use mtc_regions::rng::substream;
use mtc_regions::tcn::{TcnAutoencoder, TcnConfig};
use mtc_regions::tessellation::{
    build_adjacency, hop_neighbors, intersect_grid, sample_triplet, square_tessellation, MtcGrid,
    TargetTessellation,
};
use mtc_regions::traffic::{
    aggregate_categories, denormalize, downsample_sum, fit_norm_stats, normalize,
    slice_time_slot, Array2Ser, CategoryMap, CellularTimeSeries, MultivariateSeries, TimeSlot,
};

fn start_at(hour: u32) -> chrono::NaiveDateTime {
    chrono::NaiveDate::from_ymd_opt(2023, 1, 2)
        .unwrap()
        .and_hms_opt(hour, 0, 0)
        .unwrap()
}

fn tiny_tcn(len_ok: usize) -> (TcnConfig, usize) {
    let cfg = TcnConfig {
        in_channels: 2,
        block_channels: 4,
        dilations: vec![1, 2],
        kernel: 2,
        pool_factor: 2,
        embedding_dim: 3,
        lr: 1e-2,
        epochs: 1,
        batch_size: 1,
        seed: 9,
    };
    (cfg, len_ok)
}

fn mini_agg(kind: AggregatorKind, seed: u64) -> AggregatorModel {
    AggregatorModel::new(AggregatorConfig {
        kind,
        in_dim: 6,
        out_dim: 5,
        ff_width: 12,
        n_layers: 2,
        hops: 1,
        margin: 1.0,
        lr: 1e-3,
        epochs: 1,
        seed,
        l2_normalize: false,
    })
    .unwrap()
}

// ===== preprocessing conservation ===================================================

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Integer volume survives downsampling without any drift.
    #[test]
    fn downsample_conserves_integer_volume(
        (factor, blocks, values) in (1usize..=6, 1usize..=40).prop_flat_map(|(f, b)| {
            (Just(f), Just(b), prop::collection::vec(0u32..=2000, f * b))
        }),
        step in prop::sample::select(vec![5u32, 10, 15, 30, 60]),
    ) {
        let vals: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let ts = CellularTimeSeries::new(1, "svc", start_at(0), step, vals).unwrap();
        let ds = downsample_sum(&ts, step * factor as u32).unwrap();
        prop_assert_eq!(ds.values.len(), blocks);
        prop_assert_eq!(ds.step_minutes, step * factor as u32);
        let before: f64 = ts.values.iter().sum();
        let after: f64 = ds.values.iter().sum();
        prop_assert_eq!(before, after);
    }

    /// Float volume is conserved to relative 1e-9.
    #[test]
    fn downsample_conserves_float_volume(
        (factor, values) in (1usize..=6, 1usize..=30).prop_flat_map(|(f, b)| {
            (Just(f), prop::collection::vec(0.0f64..1e6, f * b))
        }),
    ) {
        let ts = CellularTimeSeries::new(1, "svc", start_at(0), 10, values).unwrap();
        let ds = downsample_sum(&ts, 10 * factor as u32).unwrap();
        let before: f64 = ts.values.iter().sum();
        let after: f64 = ds.values.iter().sum();
        prop_assert!((before - after).abs() <= 1e-9 * before.abs().max(1.0));
    }

    /// Summing services into a category commutes with time binning.
    #[test]
    fn category_aggregation_commutes_with_downsampling(
        (factor, v0, v1) in (1usize..=6, 1usize..=24).prop_flat_map(|(f, b)| {
            (
                Just(f),
                prop::collection::vec(0u32..=1000, f * b),
                prop::collection::vec(0u32..=1000, f * b),
            )
        }),
    ) {
        let map = CategoryMap::from_pairs([("s0", "Work"), ("s1", "Work")]).unwrap();
        let f0: Vec<f64> = v0.iter().map(|&v| v as f64).collect();
        let f1: Vec<f64> = v1.iter().map(|&v| v as f64).collect();
        let c0 = CellularTimeSeries::new(3, "s0", start_at(0), 10, f0.clone()).unwrap();
        let c1 = CellularTimeSeries::new(3, "s1", start_at(0), 10, f1.clone()).unwrap();
        let target = 10 * factor as u32;

        // bin then sum
        let binned = [
            downsample_sum(&c0, target).unwrap(),
            downsample_sum(&c1, target).unwrap(),
        ];
        let bin_sum = aggregate_categories(&binned, &map).unwrap();

        // sum then bin
        let summed: Vec<f64> = f0.iter().zip(&f1).map(|(a, b)| a + b).collect();
        let sum_ts = CellularTimeSeries::new(3, "s0", start_at(0), 10, summed).unwrap();
        let sum_bin = downsample_sum(&sum_ts, target).unwrap();

        let row = bin_sum.array().unwrap();
        prop_assert_eq!(row.nrows(), 1);
        for (a, b) in row.row(0).iter().zip(&sum_bin.values) {
            prop_assert_eq!(*a, *b); // integer sums: exact either way
        }
    }

    /// The three day slots split any hourly timeline into disjoint
    /// pieces that reassemble to the original, sample for sample.
    #[test]
    fn slot_slices_partition_the_timeline(
        len in 4usize..=96,
        start_hour in 0u32..24,
        seed in 0u64..1000,
    ) {
        let mut rng = substream(seed, "t/inv/slots");
        let values = Array2::from_shape_fn((2, len), |_| rng.random_range(0.0..100.0));
        let mv = MultivariateSeries {
            cell_id: 0,
            categories: vec!["a".into(), "b".into()],
            timestamps: (0..len)
                .map(|i| start_at(start_hour) + chrono::Duration::hours(i as i64))
                .collect(),
            values: Array2Ser::from_array(&values),
            normalized: false,
        };
        let mut union = Vec::new();
        for slot in [TimeSlot::Night, TimeSlot::Morning, TimeSlot::Afternoon] {
            // a slot may be empty for short series; that's fine as long
            // as the nonempty ones reassemble the whole timeline
            let Ok(sl) = slice_time_slot(&mv, slot) else { continue };
            let a = sl.values.to_array().unwrap();
            for (j, ts) in sl.timestamps.iter().enumerate() {
                prop_assert!(slot.contains_hour(ts.hour()));
                let orig = mv.timestamps.iter().position(|t| t == ts).unwrap();
                for ch in 0..2 {
                    prop_assert_eq!(a[[ch, j]], values[[ch, orig]]);
                }
            }
            union.extend(sl.timestamps);
        }
        union.sort();
        prop_assert_eq!(union, mv.timestamps);
    }

    /// log1p-standardization round-trips through its inverse.
    #[test]
    fn normalize_denormalize_is_identity(
        (k, len, seed) in (1usize..=3, 8usize..=48, 0u64..1000),
    ) {
        let mut rng = substream(seed, "t/inv/norm");
        let values = Array2::from_shape_fn((k, len), |_| rng.random_range(0.0..1e4));
        let mv = MultivariateSeries {
            cell_id: 4,
            categories: (0..k).map(|i| format!("c{i}")).collect(),
            timestamps: (0..len)
                .map(|i| start_at(0) + chrono::Duration::hours(i as i64))
                .collect(),
            values: Array2Ser::from_array(&values),
            normalized: false,
        };
        let stats = fit_norm_stats(std::slice::from_ref(&mv)).unwrap();
        let z = normalize(&mv, &stats).unwrap();
        let back = denormalize(&z, &stats).unwrap();
        let b = back.values.to_array().unwrap();
        for (a, v) in b.iter().zip(values.iter()) {
            prop_assert!(
                (a - v).abs() <= 1e-9 * v.abs().max(1.0),
                "{a} != {v}"
            );
        }
    }
}

// ===== tessellation graph and sampling ==============================================

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Growing the radius never removes a reachable region.
    #[test]
    fn hop_sets_grow_monotonically(
        rows in 2usize..=4,
        cols in 2usize..=4,
        anchor_pick in 0usize..100,
        h1 in 1usize..=3,
        extra in 0usize..=2,
    ) {
        let tess = square_tessellation(Point::new(0.0, 0.0), 100.0, rows, cols).unwrap();
        let adj = build_adjacency(&tess);
        let anchor = anchor_pick % adj.ids.len();
        let near: BTreeSet<usize> = adj.hop_set(anchor, h1).into_iter().collect();
        let far: BTreeSet<usize> = adj.hop_set(anchor, h1 + extra).into_iter().collect();
        prop_assert!(near.is_subset(&far));
        prop_assert!(!near.contains(&anchor), "anchor is not its own neighbor");
    }

    /// Adjacency is a property of the geometry, not of region order.
    #[test]
    fn adjacency_ignores_region_order(
        rows in 2usize..=3,
        cols in 2usize..=3,
        seed in 0u64..1000,
    ) {
        let tess = square_tessellation(Point::new(0.0, 0.0), 100.0, rows, cols).unwrap();
        let mut shuffled = tess.regions().to_vec();
        let mut rng = substream(seed, "t/inv/adj-shuffle");
        for i in (1..shuffled.len()).rev() {
            let j = rng.random_range(0..=i);
            shuffled.swap(i, j);
        }
        let tess2 = TargetTessellation::new(shuffled).unwrap();
        let (a1, a2) = (build_adjacency(&tess), build_adjacency(&tess2));
        for id in tess.ids() {
            let n1: BTreeSet<String> = hop_neighbors(&a1, &id, 1).unwrap().into_iter().collect();
            let n2: BTreeSet<String> = hop_neighbors(&a2, &id, 1).unwrap().into_iter().collect();
            prop_assert_eq!(&n1, &n2, "region {} has different neighbors", id);
        }
    }

    /// A sampled positive is always within `hops`; a sampled negative
    /// never is (and is never the anchor itself).
    #[test]
    fn triplet_sampler_respects_the_radius(
        rows in 3usize..=4,
        cols in 3usize..=4,
        hops in 1usize..=3,
        anchor_pick in 0usize..100,
        seed in 0u64..1000,
    ) {
        let tess = square_tessellation(Point::new(0.0, 0.0), 100.0, rows, cols).unwrap();
        let adj = build_adjacency(&tess);
        let anchor = adj.ids[anchor_pick % adj.ids.len()].clone();
        let near: BTreeSet<String> =
            hop_neighbors(&adj, &anchor, hops).unwrap().into_iter().collect();
        let mut rng = substream(seed, "t/inv/triplet");
        match sample_triplet(&adj, &anchor, hops, &mut rng) {
            Ok(t) => {
                prop_assert!(near.contains(&t.positive));
                prop_assert!(!near.contains(&t.negative));
                prop_assert_ne!(t.negative, anchor);
            }
            // everything within `hops`: no admissible negative exists
            Err(_) => prop_assert_eq!(near.len(), adj.ids.len() - 1),
        }
    }

    /// Intersection cell lists are duplicate-free and canonically sorted.
    #[test]
    fn intersections_are_unique_and_sorted(
        rows in 2usize..=4,
        cols in 2usize..=4,
        (ox, oy) in (-40.0f64..40.0, -40.0f64..40.0),
    ) {
        let grid = MtcGrid::new(Point::new(0.0, 0.0), 100.0, 8, 8).unwrap();
        let tess =
            square_tessellation(Point::new(ox, oy), 150.0, rows, cols).unwrap();
        let (imap, _warnings) = intersect_grid(&grid, &tess);
        for cells in &imap.cells {
            prop_assert!(cells.windows(2).all(|w| w[0] < w[1]));
        }
    }
}

// ===== autoencoder shape contract ===================================================

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// decode(encode(x)) preserves the input shape for every admissible
    /// length (multiple of the pool factor, at least the receptive field).
    #[test]
    fn autoencoder_round_trip_preserves_shape(
        half_len in 2usize..=16,
        seed in 0u64..1000,
    ) {
        let (cfg, len) = tiny_tcn(2 * half_len);
        let model = TcnAutoencoder::new(cfg, len).unwrap();
        let mut rng = substream(seed, "t/inv/tcn-shape");
        let x = Array2::from_shape_fn((2, len), |_| rng.random_range(-1.0..1.0));
        let z = model.encode(&x).unwrap();
        prop_assert_eq!(z.len(), 3);
        let y = model.decode(&z).unwrap();
        prop_assert_eq!(y.dim(), x.dim());
        prop_assert!(y.iter().all(|v| v.is_finite()));
    }
}

// ===== aggregator symmetries and triplet loss =======================================

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Both aggregator kinds ignore row order and the amount (and
    /// content) of masked padding.
    #[test]
    fn aggregators_ignore_row_order_and_padding(
        kind_pick in 0usize..2,
        n_cells in 1usize..=8,
        pad in 0usize..=5,
        seed in 0u64..1000,
    ) {
        let kind = [AggregatorKind::WeightedSum, AggregatorKind::Transformer][kind_pick];
        let model = mini_agg(kind, 17);
        let mut rng = substream(seed, "t/inv/agg");
        let cap = n_cells + pad;
        let mut x = Array2::<f64>::zeros((cap, 6));
        for r in 0..n_cells {
            for c in 0..6 {
                x[[r, c]] = rng.random_range(-1.0..1.0);
            }
        }
        let mut mask = vec![false; cap];
        mask[..n_cells].fill(true);
        let base = model
            .aggregate(&RegionFeatureMatrix { region_id: "r".into(), x: x.clone(), mask: mask.clone(), n_cells })
            .unwrap();

        // shuffle all rows (real and padding together), garbage padding
        let mut perm: Vec<usize> = (0..cap).collect();
        for i in (1..cap).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let mut px = Array2::from_shape_fn((cap, 6), |_| rng.random_range(-9.0..9.0));
        let mut pmask = vec![false; cap];
        for (to, &from) in perm.iter().enumerate() {
            if mask[from] {
                px.row_mut(to).assign(&x.row(from));
                pmask[to] = true;
            }
        }
        let shuffled = model
            .aggregate(&RegionFeatureMatrix { region_id: "r".into(), x: px, mask: pmask, n_cells })
            .unwrap();
        for (a, b) in base.iter().zip(shuffled.iter()) {
            prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }

    /// Hinge semantics and positive homogeneity of the triplet loss.
    #[test]
    fn triplet_loss_hinge_and_scaling(
        a in prop::collection::vec(-5.0f64..5.0, 4),
        p in prop::collection::vec(-5.0f64..5.0, 4),
        n in prop::collection::vec(-5.0f64..5.0, 4),
        margin in 0.0f64..3.0,
        c in 0.5f64..8.0,
    ) {
        let a = ndarray::Array1::from_vec(a);
        let p = ndarray::Array1::from_vec(p);
        let n = ndarray::Array1::from_vec(n);
        let dap = (&a - &p).mapv(|v| v * v).sum().sqrt();
        let dan = (&a - &n).mapv(|v| v * v).sum().sqrt();
        let loss = triplet_loss(&a, &p, &n, margin);
        prop_assert!(loss >= 0.0);
        if dan >= dap + margin {
            prop_assert_eq!(loss, 0.0);
        } else {
            prop_assert!(loss > 0.0);
        }
        // scaling all embeddings by c scales the distance gap by c
        let expected = (c * (dap - dan) + margin).max(0.0);
        let scaled = triplet_loss(&(&a * c), &(&p * c), &(&n * c), margin);
        prop_assert!(
            (scaled - expected).abs() <= 1e-9 * expected.max(1.0),
            "{scaled} vs {expected}"
        );
    }
}

// ===== clustering metric bounds =====================================================

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Entropy and MI stay in their information-theoretic ranges, AMI is
    /// symmetric, and self-comparison is exactly 1.
    #[test]
    fn entropy_mi_ami_bounds(
        (labels_u, labels_v, weights, ku, kv) in (2usize..=12, 1usize..=4, 1usize..=4)
            .prop_flat_map(|(n, ku, kv)| {
                (
                    prop::collection::vec(0usize..ku, n),
                    prop::collection::vec(0usize..kv, n),
                    prop::collection::vec(0.05f64..10.0, n),
                    Just(ku),
                    Just(kv),
                )
            }),
    ) {
        let ids: Vec<String> = (0..labels_u.len()).map(|i| format!("r{i}")).collect();
        let u = WeightedClustering::new(ids.clone(), labels_u, weights.clone(), ku).unwrap();
        let v = WeightedClustering::new(ids, labels_v, weights, kv).unwrap();
        let (hu, hv) = (weighted_entropy(&u), weighted_entropy(&v));
        prop_assert!(hu >= 0.0 && hv >= 0.0);
        let mi = weighted_mutual_information(&u, &v).unwrap();
        prop_assert!(mi >= -1e-12, "MI {mi} below numerical zero");
        prop_assert!(mi <= hu.min(hv) + 1e-12, "MI {mi} above min entropy {}", hu.min(hv));

        prop_assert_eq!(
            adjusted_mutual_information(&u, &u, EmiMode::Analytic, 0, 0).unwrap(),
            1.0
        );
        let uv = adjusted_mutual_information(&u, &v, EmiMode::Analytic, 0, 0);
        let vu = adjusted_mutual_information(&v, &u, EmiMode::Analytic, 0, 0);
        match (uv, vu) {
            (Ok(x), Ok(y)) => prop_assert!((x - y).abs() <= 1e-12, "asymmetric: {x} vs {y}"),
            // numerically-zero denominators must at least be symmetric
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "one order failed: {a:?} vs {b:?}"),
        }
    }

    /// Distribution-comparison metrics respect their ranges on floored
    /// (strictly positive, renormalized) simplex vectors.
    #[test]
    fn distribution_metrics_stay_in_range(
        (raw_t, raw_p) in (2usize..=6).prop_flat_map(|k| {
            (
                prop::collection::vec(0.0f64..1.0, k),
                prop::collection::vec(0.0f64..1.0, k),
            )
        }),
    ) {
        let t = floor_distribution(&raw_t);
        let p = floor_distribution(&raw_p);
        prop_assert!((t.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let kl = kl_divergence(&t, &p);
        prop_assert!(kl >= -1e-12, "KL {kl} negative");
        let l1 = l1_distance(&t, &p);
        prop_assert!((0.0..=2.0 + 1e-12).contains(&l1), "L1 {l1} out of range");
        let cos = cosine_similarity(&t, &p);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&cos), "cosine {cos} out of range");
    }
}
