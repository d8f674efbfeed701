use fedsemi::data::{
    division_ranges, partition_iid, partition_noniid, round_half_up, sample_labeled_subset,
    TimeSeriesDataset,
};
use fedsemi::Tensor;
use proptest::prelude::*;

fn dataset(n: usize, nf: usize) -> TimeSeriesDataset {
    let features = Tensor::new(vec![n, nf], (0..n * nf).map(|i| i as f32).collect()).unwrap();
    TimeSeriesDataset::new(features, (0..n).map(|i| i % 3).collect(), 3).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn divisions_are_disjoint_and_cover(n in 100usize..20_000) {
        let ranges = division_ranges(n);
        prop_assert_eq!(ranges.len(), 100);
        let mut next = 0;
        for r in &ranges {
            prop_assert_eq!(r.start, next);
            next = r.end;
        }
        prop_assert_eq!(next, n);
    }

    #[test]
    fn labeled_subset_size_is_bounded(n in 100usize..10_000, rl in 0.001f64..=1.0, seed in any::<u64>()) {
        let ds = dataset(n, 2);
        let sub = sample_labeled_subset(&ds, rl, seed).unwrap();
        let low = (n / 100) * round_half_up(100.0 * rl).max(1);
        prop_assert!(sub.len() >= low && sub.len() <= low + n % 100, "{} not in [{}, {}]", sub.len(), low, low + n % 100);
        prop_assert_eq!(sub.features.rows(), sub.labels.len());
    }

    #[test]
    fn sampling_is_reproducible(
        k in 1usize..8,
        participants in 1usize..4,
        seed in any::<u64>(),
        iid in any::<bool>(),
    ) {
        let ds = dataset(2000, 3);
        let run = || if iid {
            partition_iid(&ds, k, participants, seed)
        } else {
            partition_noniid(&ds, k, participants, seed)
        };
        let (a, b) = (run().unwrap(), run().unwrap());
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(
            sample_labeled_subset(&ds, 0.1, seed).unwrap(),
            sample_labeled_subset(&ds, 0.1, seed).unwrap()
        );
        for p in &a {
            let json = serde_json::to_value(p).unwrap();
            let keys: Vec<&String> = json.as_object().unwrap().keys().collect();
            prop_assert!(keys.iter().all(|k| !k.contains("label")), "{:?}", keys);
        }
    }
}
