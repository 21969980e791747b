use emrp_core::fitness::OBJECTIVE_SENSES;
use emrp_core::pareto::{
    crowding_distance, dominates, fast_nondominated_sort, hypervolume_2d, Crowding, Sense,
};
use emrp_core::phenotype::{count_flops, count_params, propagate_shapes};
use emrp_core::scalar::exact;
use emrp_core::{
    build_architecture, decode_genome, encode_record, ExactScalar, Genome, GenomeLayout,
};
use proptest::prelude::*;

fn genome() -> impl Strategy<Value = Genome> {
    proptest::collection::vec(any::<bool>(), 142).prop_map(Genome::from_bits)
}

fn points() -> impl Strategy<Value = Vec<[f64; 2]>> {
    proptest::collection::vec((0u8..20, 0u32..20), 0..60).prop_map(|v| {
        v.into_iter()
            .map(|(s, p)| [s as f64 * 0.5, p as f64 * 1e5])
            .collect()
    })
}

const SENSES: [Sense; 2] = OBJECTIVE_SENSES;

proptest! {
    #[test]
    fn codec_round_trip(g in genome()) {
        let layout = GenomeLayout::default();
        let record = decode_genome(&g, &layout).unwrap();
        prop_assert_eq!(encode_record(&record, &layout).unwrap(), g.clone());
        let text = g.to_text(&layout).unwrap();
        prop_assert_eq!(Genome::from_text(&text, &layout).unwrap(), g);
    }

    #[test]
    fn dormant_flips_are_inert(g in genome(), pick in any::<prop::sample::Index>()) {
        let layout = GenomeLayout::default();
        let record = decode_genome(&g, &layout).unwrap();
        let dormant: Vec<usize> = layout.dormant_ranges(&record).into_iter().flat_map(|(s, l)| s..s + l).collect();
        prop_assume!(!dormant.is_empty());
        let mut h = g.clone();
        h.flip(dormant[pick.index(dormant.len())]);
        let a = build_architecture(&record);
        let b = build_architecture(&decode_genome(&h, &layout).unwrap());
        prop_assert_eq!(count_params(&a), count_params(&b));
        prop_assert_eq!(count_flops(&a), count_flops(&b));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn every_genome_has_consistent_shapes(g in genome()) {
        let layout = GenomeLayout::default();
        let arch = build_architecture(&decode_genome(&g, &layout).unwrap());
        let shapes = propagate_shapes(&arch).unwrap();
        let last = shapes.last().unwrap();
        prop_assert_eq!((last.output.freq, last.output.time, last.output.channels), (512, 64, 2));
    }

    #[test]
    fn fronts_partition_and_layer(pts in points()) {
        let fronts = fast_nondominated_sort(&pts, &SENSES);
        let mut seen: Vec<usize> = fronts.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..pts.len()).collect::<Vec<_>>());
        for (k, front) in fronts.iter().enumerate() {
            for &a in front {
                for &b in front {
                    prop_assert!(!dominates(&pts[a], &pts[b], &SENSES));
                }
                if k > 0 {
                    prop_assert!(fronts[k - 1].iter().any(|&p| dominates(&pts[p], &pts[a], &SENSES)));
                }
            }
        }
    }

    #[test]
    fn crowding_boundaries_are_infinite(pts in points()) {
        let fronts = fast_nondominated_sort(&pts, &SENSES);
        for front in &fronts {
            let d: Vec<Crowding<f64>> = crowding_distance(&pts, front);
            prop_assert_eq!(d.len(), front.len());
            let infinite = d.iter().filter(|c| **c == Crowding::Infinite).count();
            prop_assert!(infinite >= front.len().min(2));
            for c in &d {
                prop_assert!(c.to_f64() >= 0.0);
            }
        }
    }

    #[test]
    fn hypervolume_is_monotone_under_insertion(pts in points(), extra in (0u8..20, 0u32..20)) {
        let reference = [exact(0.0), exact(1e8)];
        let exact_pts: Vec<[ExactScalar; 2]> = pts.iter().map(|p| [exact(p[0]), exact(p[1])]).collect();
        let before = hypervolume_2d(&exact_pts, SENSES, &reference);
        let mut more = exact_pts.clone();
        more.push([exact(extra.0 as f64 * 0.5), exact(extra.1 as f64 * 1e5)]);
        let after = hypervolume_2d(&more, SENSES, &reference);
        prop_assert!(after >= before);
        let approx = hypervolume_2d(&pts, SENSES, &[0.0, 1e8]);
        let exact_f = num_traits::ToPrimitive::to_f64(&before).unwrap();
        prop_assert!((approx - exact_f).abs() <= 1e-9 * exact_f.max(1.0));
    }

    #[test]
    fn hypervolume_ignores_dominated_points(pts in points()) {
        let reference = [0.0, 1e8];
        let fronts = fast_nondominated_sort(&pts, &SENSES);
        let front: Vec<[f64; 2]> = fronts.first().map(|f| f.iter().map(|&i| pts[i]).collect()).unwrap_or_default();
        let to_exact = |v: &[[f64; 2]]| -> Vec<[ExactScalar; 2]> { v.iter().map(|p| [exact(p[0]), exact(p[1])]).collect() };
        let r = [exact(reference[0]), exact(reference[1])];
        prop_assert_eq!(hypervolume_2d(&to_exact(&pts), SENSES, &r), hypervolume_2d(&to_exact(&front), SENSES, &r));
    }
}
