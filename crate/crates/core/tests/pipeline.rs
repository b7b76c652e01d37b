mod common;

use phase_core::pipeline::record::{N_LAYER_FEATS, STATIC_NUTRIENT};
use phase_core::pipeline::*;
use phase_core::sim::{export_samples, generate_world, raw_sources, GridSpec, World};
use proptest::prelude::*;
use rand::Rng;

fn world(seed: u64) -> World {
    let grid = GridSpec::global(seed, 12, 24, 1.0);
    generate_world(seed, &grid, 3, 4).unwrap()
}

fn provenance(w: &World) -> Provenance {
    Provenance {
        world_seed: w.seed,
        n_lat: w.grid.n_lat,
        n_lon: w.grid.n_lon,
        resolution_deg: w.grid.resolution_deg,
        window_years: w.years,
    }
}

#[test]
fn kdtree_agrees_with_brute_force() {
    let mut r = common::rng(11);
    let forcing: Vec<(f64, f64)> = (0..1000)
        .map(|_| (r.random_range(-90.0..90.0), r.random_range(-180.0..180.0)))
        .collect();
    // Snapped coordinates create plenty of exact ties.
    let mut queries: Vec<(f64, f64)> = (0..1000)
        .map(|_| (r.random_range(-90.0..90.0), r.random_range(-180.0..180.0)))
        .collect();
    queries.extend((0..200).map(|_| ((r.random_range(-9..9) * 10) as f64, (r.random_range(-18..18) * 10) as f64)));
    let mut grid_pts: Vec<(f64, f64)> = Vec::new();
    for a in -9..9 {
        for b in -18..18 {
            grid_pts.push((a as f64 * 10.0 + 5.0, b as f64 * 10.0 + 5.0));
        }
    }
    for pts in [&forcing, &grid_pts] {
        let mapped = kdtree_map(&queries, pts);
        for (q, m) in queries.iter().zip(&mapped) {
            assert_eq!(*m, common::brute_nearest(pts, *q), "query {q:?}");
        }
    }
}

#[test]
fn aggregation_matches_two_pass_oracle() {
    let mut r = common::rng(12);
    for _ in 0..20 {
        let months = r.random_range(1..30);
        let series: Vec<f64> = (0..months * 120).map(|_| r.random_range(-1e3..1e5)).collect();
        let got = aggregate_monthly(&series).unwrap();
        assert_eq!(got.len(), months);
        for (m, g) in got.iter().enumerate() {
            let want = common::two_pass_mean(&series[m * 120..(m + 1) * 120]);
            assert!((g - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
    }
}

#[test]
fn minmax_round_trip() {
    let mut r = common::rng(13);
    let xs: Vec<f64> = (0..10_000).map(|_| r.random_range(-5e4..3e5)).collect();
    let (s, ys) = minmax_fit_apply(&xs).unwrap();
    assert!(ys.iter().all(|y| (0.0..=1.0).contains(y)));
    for (x, y) in xs.iter().zip(&ys) {
        assert!((s.invert(*y) - x).abs() < 1e-6 * s.range());
    }
    let c = MinMax::fit([4.0, 4.0]).unwrap();
    assert_eq!(c.apply(4.0), 0.0);
}

#[test]
fn split_sizes() {
    let ids: Vec<u64> = (0..20_975).collect();
    let (tr, te) = split_shuffle(&ids, 0).unwrap();
    assert_eq!((tr.len(), te.len()), (16_780, 4_195));
    let mut all: Vec<u64> = tr.iter().chain(&te).copied().collect();
    all.sort_unstable();
    assert_eq!(all, ids);
    assert_ne!(split_shuffle(&ids, 1).unwrap().0, tr);
}

#[test]
fn batches_partition_in_latlon_order() {
    let mut r = common::rng(14);
    let coords: Vec<(f64, f64)> = (0..1000)
        .map(|_| (r.random_range(-3..3) as f64, r.random_range(-180.0..180.0)))
        .collect();
    let batches = batch_by_latlon(&coords, 64).unwrap();
    assert!(batches[..batches.len() - 1].iter().all(|b| b.len() == 64));
    let flat: Vec<usize> = batches.concat();
    let mut sorted = flat.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..1000).collect::<Vec<_>>());
    for w in flat.windows(2) {
        let (a, b) = (coords[w[0]], coords[w[1]]);
        assert!(a.0 < b.0 || (a.0 == b.0 && a.1 <= b.1));
    }
}

#[test]
fn fusion_groups_entity_major_tables() {
    let w = world(15);
    let raw = raw_sources(&w, 3).unwrap();
    assert_eq!(raw.pfts.len(), w.cells.len() * 4);
    // PFT rows are stored PFT-major, not grid-cell-major.
    assert_eq!(raw.pfts[1].gridcell, 1);
    let recs = fuse(&raw).unwrap();
    for (g, rec) in recs.iter().enumerate() {
        assert_eq!(rec.id, raw.gridcells[g].id);
        for (j, row) in raw.pfts.iter().filter(|p| p.gridcell == g).enumerate() {
            assert_eq!(&rec.pft_traits[j * 5..j * 5 + 5], &row.traits);
            assert_eq!(rec.pft_codes[j], row.code);
        }
        for row in raw.columns.iter().filter(|c| c.gridcell == g) {
            let at = row.layer * N_LAYER_FEATS;
            assert_eq!(&rec.layered[at..at + N_LAYER_FEATS], &row.state);
        }
        // Forcing comes from the mapped point's series, month by month.
        let p = w.cells[g].forcing_point;
        for (m, month) in rec.forcing.chunks(5).enumerate() {
            assert_eq!(month, &w.monthly[p][m]);
        }
    }
    assert_eq!(recs, export_samples(&w, 3).unwrap());

    let mut broken = raw.clone();
    broken.pfts[0].gridcell = raw.gridcells.len();
    assert!(fuse(&broken).is_err());
}

#[test]
fn cleaning_drops_exactly_the_injected_records() {
    let w = world(16);
    let mut recs = export_samples(&w, 3).unwrap();
    let n = recs.len();
    recs[0].pft_codes[1] = -1;
    recs[5].pft_codes[0] = 99;
    recs[9].valid_layers = 4;
    let (kept, report) = clean(recs);
    assert_eq!(kept.len(), n - 3);
    assert_eq!(report.bad_pft_code, 2);
    assert_eq!(report.below_valid_layers, 1);
}

#[test]
fn dataset_round_trip_and_rebuild_is_byte_identical() {
    let w = world(17);
    let recs = export_samples(&w, 3).unwrap();
    let ds = Dataset::build(recs.clone(), 7, 16, provenance(&w)).unwrap();
    assert_eq!(ds.manifest.train_ids.len(), train_count(recs.len()));
    assert_eq!(ds.records.len(), recs.len());

    let a = tempfile::tempdir().unwrap();
    ds.write(a.path()).unwrap();
    let back = Dataset::load(a.path()).unwrap();
    assert_eq!(back, ds);

    let b = tempfile::tempdir().unwrap();
    Dataset::build(recs, 7, 16, provenance(&w)).unwrap().write(b.path()).unwrap();
    for name in ds.manifest.batches.iter().map(String::as_str).chain(["manifest.json"]) {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }

    std::fs::write(a.path().join(&ds.manifest.batches[0]), b"junk").unwrap();
    assert!(Dataset::load(a.path()).is_err());
}

#[test]
fn training_features_normalize_into_unit_interval() {
    let w = world(18);
    let ds = Dataset::build(export_samples(&w, 3).unwrap(), 1, 32, provenance(&w)).unwrap();
    let norm = &ds.manifest.norm;
    for r in ds.train() {
        let mut f = Vec::new();
        norm.forcing_row(&r.forcing, &mut f);
        let s = normalize::apply_all(&norm.static_feats, &r.static_feats);
        let l = normalize::apply_all(&norm.layered, &r.layered);
        for v in f.iter().chain(&s).chain(&l) {
            assert!((0.0..=1.0).contains(v), "{v}");
        }
        for t in Task::ALL {
            let y = norm.target(t, r.targets.get(t));
            assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
            let back = norm.denormalize_target(t, &y);
            for (a, b) in back.iter().zip(r.targets.get(t)) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }
        // The flux triple keeps NPP = GPP − AR after scaling.
        let g = norm.target(Task::Gpp, &[r.targets.gpp])[0];
        let a = norm.target(Task::Ar, &[r.targets.ar])[0];
        let n = norm.target(Task::Npp, &[r.targets.npp])[0];
        assert!((g - a - n).abs() < 1e-12);
    }
    // Nutrient is only informative in the tropics.
    let trop_varies = ds.records.iter().filter(|r| r.is_tropical()).any(|r| r.static_feats[STATIC_NUTRIENT] < 1.0);
    assert!(trop_varies);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kdtree_matches_brute_force(
        pts in prop::collection::vec((-90.0f64..90.0, -180.0f64..180.0), 1..60),
        q in (-90.0f64..90.0, -180.0f64..180.0),
    ) {
        prop_assert_eq!(KdTree::new(&pts).nearest(q), Some(common::brute_nearest(&pts, q)));
    }

    #[test]
    fn minmax_invert_is_inverse(xs in prop::collection::vec(-1e6f64..1e6, 2..200)) {
        let s = MinMax::fit(xs.iter().copied()).unwrap();
        for x in &xs {
            let back = s.invert(s.apply(*x));
            if s.range() > 0.0 {
                prop_assert!((back - x).abs() <= 1e-9 * s.range().max(1.0));
            }
        }
    }

    #[test]
    fn split_is_a_partition(n in 5usize..500, seed in any::<u64>()) {
        let ids: Vec<u64> = (0..n as u64).collect();
        let (tr, te) = split_shuffle(&ids, seed).unwrap();
        prop_assert_eq!(tr.len(), train_count(n));
        let mut all: Vec<u64> = tr.into_iter().chain(te).collect();
        all.sort_unstable();
        prop_assert_eq!(all, ids);
    }
}
