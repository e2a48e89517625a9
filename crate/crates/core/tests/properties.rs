use proptest::prelude::*;

use privshare_core::econ::{expected_participants, profit_breakdown, EconParams, ParticipationModel, ServerCostModel};
use privshare_core::grid::{build_map_with, CountMode, GridSpec, SpatioTemporalMap};
use privshare_core::privacy::{discrete_frechet, total_loss_eval, LossModel};
use privshare_core::smpc::{aggregate_secure, secret_share, FieldElement, MODULUS};
use privshare_core::trajectory::{
    generate_synthetic, parse_traces, subsample, write_traces, GeoSample, PlanarPath, Projection, Trajectory,
};
use privshare_core::utility::{eval_utility, grid_utility, UtilityModel};

fn path(max_len: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec(prop::array::uniform2(-500.0..500.0f64), 1..=max_len)
}

fn frechet(p: &[[f64; 2]], q: &[[f64; 2]]) -> f64 {
    discrete_frechet(&PlanarPath::new(p.to_vec()).unwrap(), &PlanarPath::new(q.to_vec()).unwrap())
}

fn directed_hausdorff(p: &[[f64; 2]], q: &[[f64; 2]]) -> f64 {
    p.iter()
        .map(|a| q.iter().map(|b| (a[0] - b[0]).hypot(a[1] - b[1])).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

fn trajectory() -> impl Strategy<Value = Trajectory> {
    (2usize..80, prop::collection::vec(0.5..3.0f64, 80), any::<u64>()).prop_map(|(n, gaps, seed)| {
        let walk = &generate_synthetic(1, n, seed).unwrap()[0];
        let mut t = 0.0;
        let samples = walk
            .samples()
            .iter()
            .zip(&gaps)
            .map(|(s, g)| {
                let out = GeoSample::new(t, s.lat, s.lon).unwrap();
                t += g;
                out
            })
            .collect();
        Trajectory::new("v", samples).unwrap()
    })
}

fn haversine(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (la1, lo1, la2, lo2) = (a.0.to_radians(), a.1.to_radians(), b.0.to_radians(), b.1.to_radians());
    let h = ((la2 - la1) / 2.0).sin().powi(2) + la1.cos() * la2.cos() * ((lo2 - lo1) / 2.0).sin().powi(2);
    2.0 * 6_371_000.0 * h.sqrt().asin()
}

proptest! {
    #[test]
    fn frechet_symmetric_and_bounded(p in path(12), q in path(12)) {
        let d = frechet(&p, &q);
        prop_assert_eq!(d, frechet(&q, &p));
        prop_assert_eq!(frechet(&p, &p), 0.0);
        let ends = |i: usize, j: usize| (p[i][0] - q[j][0]).hypot(p[i][1] - q[j][1]);
        prop_assert!(d >= ends(0, 0).max(ends(p.len() - 1, q.len() - 1)));
        prop_assert!(d >= directed_hausdorff(&p, &q).max(directed_hausdorff(&q, &p)));
    }

    #[test]
    fn frechet_triangle(p in path(8), q in path(8), r in path(8)) {
        let (pq, qr, pr) = (frechet(&p, &q), frechet(&q, &r), frechet(&p, &r));
        prop_assert!(pr <= (pq + qr) * (1.0 + 1e-12));
    }

    #[test]
    fn subsample_keeps_a_monotone_subset(traj in trajectory(), a in 0.01..1.0f64, b in 0.01..1.0f64) {
        let native = traj.native_rate().unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (lo, hi) = (lo * native, hi * native);
        let sparse = subsample(&traj, lo).unwrap();
        let dense = subsample(&traj, hi).unwrap();
        prop_assert!(sparse.len() <= dense.len());
        prop_assert_eq!(sparse.samples()[0], traj.samples()[0]);
        prop_assert_eq!(sparse.samples().last(), traj.samples().last());
        for s in sparse.samples() {
            prop_assert!(traj.samples().contains(s));
        }
    }

    #[test]
    fn projection_tracks_great_circle(
        lat in 39.85..39.99f64, lon in 116.30..116.48f64,
        dlat in -0.1..0.1f64, dlon in -0.1..0.1f64,
    ) {
        prop_assume!(dlat.abs() + dlon.abs() > 1e-4);
        let proj = Projection::new(39.92, 116.39);
        let a = proj.project(lat, lon);
        let b = proj.project(lat + dlat, lon + dlon);
        let planar = (a[0] - b[0]).hypot(a[1] - b[1]);
        let exact = haversine((lat, lon), (lat + dlat, lon + dlon));
        prop_assert!((planar / exact - 1.0).abs() < 0.01, "{} vs {}", planar, exact);
    }

    #[test]
    fn loss_is_clamped_into_unit_interval(f in 1e-3..100.0f64, s in 1.0..200.0f64) {
        let eval = total_loss_eval(&LossModel::default(), f, s);
        prop_assert!(eval.value >= 1e-9 && eval.value <= 1.0);
        if eval.unclamped >= 1e-9 && eval.unclamped <= 1.0 {
            prop_assert_eq!(eval.value, eval.unclamped);
        }
    }

    #[test]
    fn utilities_are_monotone(n in 0.0..1e4f64, dn in 0.0..1e3f64, v in 0.0..1e4f64, f in 0.01..10.0f64) {
        prop_assert!(grid_utility(n + dn, 100.0) >= grid_utility(n, 100.0));
        let m = UtilityModel::default();
        prop_assert!(eval_utility(&m, v + dn, f) >= eval_utility(&m, v, f));
        prop_assert!(eval_utility(&m, v, f * 1.5) >= eval_utility(&m, v, f));
        prop_assert!(eval_utility(&m, v, f) <= m.alpha);
    }

    #[test]
    fn cdf_supply_rises_with_payment(c1 in 1e-9..1e-3f64, scale in 1.0..10.0f64, f in 0.1..60.0f64, s in 1.0..100.0f64) {
        let p = EconParams::default();
        let v = expected_participants(&p, c1, f, s);
        prop_assert!((0.0..=p.vehicles).contains(&v));
        prop_assert!(expected_participants(&p, c1 * scale, f, s) >= v);
    }

    #[test]
    fn profit_decomposes(
        c1 in 1e-9..1e-3f64, f in 0.1..60.0f64, s in 1.0..100.0f64,
        pdf in any::<bool>(), times_s in any::<bool>(),
    ) {
        let participation = if pdf { ParticipationModel::PdfAsWritten } else { ParticipationModel::Cdf };
        let cost = if times_s { ServerCostModel::TotalTimesS } else { ServerCostModel::PerServerAsWritten };
        let p = EconParams::default().with_modes(participation, cost);
        let b = profit_breakdown(&p, c1, f, s);
        prop_assert_eq!(b.profit, b.utility - b.server_cost - b.payments);
        prop_assert!(b.profit <= p.utility.alpha);
        prop_assert_eq!(b.payments, c1 * b.participants * f);
    }

    #[test]
    fn shares_sum_to_secret(x in 0..MODULUS, n in 1usize..12, seed in any::<u64>()) {
        let shares = secret_share(FieldElement::new(x), n, seed).unwrap();
        prop_assert_eq!(shares.len(), n);
        prop_assert_eq!(shares.iter().copied().sum::<FieldElement>().value(), x);
    }

    #[test]
    fn field_arithmetic(a in any::<u64>(), b in any::<u64>()) {
        let (a, b) = (FieldElement::new(a), FieldElement::new(b));
        prop_assert!(a.value() < MODULUS);
        prop_assert_eq!((a + b) - b, a);
        prop_assert_eq!(a + (-a), FieldElement::new(0));
    }

    #[test]
    fn aggregation_reconstructs_the_sum(
        cells in prop::collection::vec(prop::collection::vec((0u32..5, 0u32..5, 0i64..4, 1u64..1000), 0..10), 1..6),
        seed in any::<u64>(),
    ) {
        let spec = GridSpec::default();
        let partials: Vec<SpatioTemporalMap> = cells
            .iter()
            .map(|entries| {
                let mut m = SpatioTemporalMap::empty(spec);
                for &(x, y, t, c) in entries {
                    m.set((x, y, t), c).unwrap();
                }
                m
            })
            .collect();
        let transcript = aggregate_secure(&partials, seed).unwrap();
        for key in &transcript.cells {
            let plain: u64 = partials.iter().map(|m| m.get(key)).sum();
            prop_assert_eq!(transcript.reconstructed.get(key), plain);
        }
        let total: u64 = partials.iter().map(SpatioTemporalMap::total).sum();
        prop_assert_eq!(transcript.reconstructed.total(), total);
    }

    #[test]
    fn traces_round_trip(n in 1usize..6, duration in 2usize..30, seed in any::<u64>()) {
        let trajs = generate_synthetic(n, duration, seed).unwrap();
        let mut buf = Vec::new();
        write_traces(&trajs, &mut buf).unwrap();
        prop_assert_eq!(parse_traces(buf.as_slice()).unwrap(), trajs);
    }

    #[test]
    fn sample_counts_cover_every_sample(n in 1usize..8, duration in 2usize..60, seed in any::<u64>()) {
        let trajs = generate_synthetic(n, duration, seed).unwrap();
        let spec = GridSpec::default();
        let (samples, diag) = build_map_with(&trajs, &spec, CountMode::Samples);
        prop_assert_eq!(samples.total() + diag.samples_outside_bbox as u64, (n * duration) as u64);
        let (vehicles, _) = build_map_with(&trajs, &spec, CountMode::Vehicles);
        prop_assert!(vehicles.total() <= samples.total());
        for (key, &c) in vehicles.counts() {
            prop_assert!(c <= n as u64 && c <= samples.get(key));
        }
    }
}
