use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::gamma;
use toothrecon::geom::{apply_transform, FdiTooth, GridSpec, LabelVolume};
use toothrecon::synth::*;
use toothrecon::Error;

fn fdi(code: u8) -> FdiTooth {
    FdiTooth::from_code(code).unwrap()
}

fn no_dropout() -> SynthConfig {
    SynthConfig { dropout: 0.0, ..SynthConfig::default() }
}

#[test]
fn split_sizes_follow_largest_remainder() {
    let ids = |n: u32| (0..n).collect::<Vec<_>>();
    let s = split_dataset(&ids(10), [8, 1, 1], 3).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
    let s = split_dataset(&ids(499), [8, 1, 1], 3).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (399, 50, 50));
    let s = split_dataset(&ids(60), [8, 1, 1], 3).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (48, 6, 6));
}

#[test]
fn split_is_a_deterministic_partition() {
    for n in 10..=600u32 {
        let ids: Vec<u32> = (0..n).map(|i| i * 3 + 1).collect();
        let s = split_dataset(&ids, [8, 1, 1], n as u64).unwrap();
        let mut all: Vec<u32> = s.all().collect();
        all.sort_unstable();
        assert_eq!(all, ids, "n = {n}");
        // Oracle: floor shares plus leftovers to the largest fractional parts.
        let exact = [0.8 * n as f64, 0.1 * n as f64, 0.1 * n as f64];
        assert!((s.train.len() as f64 - exact[0]).abs() < 1.0);
        assert!((s.val.len() as f64 - exact[1]).abs() < 1.0);
        assert!((s.test.len() as f64 - exact[2]).abs() < 1.0);
    }
    let ids: Vec<u32> = (0..40).collect();
    assert_eq!(split_dataset(&ids, [8, 1, 1], 9).unwrap(), split_dataset(&ids, [8, 1, 1], 9).unwrap());
    assert_ne!(split_dataset(&ids, [8, 1, 1], 9).unwrap(), split_dataset(&ids, [8, 1, 1], 10).unwrap());
}

#[test]
fn split_rejects_small_corpora() {
    let ids: Vec<u32> = (0..9).collect();
    assert!(matches!(split_dataset(&ids, [8, 1, 1], 0), Err(Error::InvalidArgument(_))));
}

#[test]
fn generate_tooth_is_deterministic() {
    let mut t = ToothTemplate::nominal(fdi(36)).scaled(0.8);
    t.jitter = 0.0;
    let a = generate_tooth(&t, 512, 5).unwrap();
    let b = generate_tooth(&t, 512, 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.template, t);
    let c = generate_tooth(&t, 512, 6).unwrap();
    assert_ne!(a.surface, c.surface);
}

/// Distance from `p` to the axis-aligned cube of side `s` centred at `c`.
fn cube_distance(p: &Vector3<f64>, c: &Vector3<f64>, s: f64) -> f64 {
    (p - c).map(|d| (d.abs() - s / 2.0).max(0.0)).norm()
}

/// 6-connected components of occupied voxels with z below `z_max`.
fn components_below(grid: &toothrecon::geom::VoxelGrid, z_max: f64) -> usize {
    let spec = *grid.spec();
    let [nx, ny, nz] = spec.dims;
    let mut seen = vec![false; spec.len()];
    let mut count = 0;
    for start in 0..spec.len() {
        let [i, j, k] = spec.unindex(start);
        if seen[start] || grid.get(i, j, k) == 0.0 || spec.center(i, j, k).z >= z_max {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(idx) = stack.pop() {
            let [i, j, k] = spec.unindex(idx);
            let mut push = |i: isize, j: isize, k: isize| {
                if i < 0 || j < 0 || k < 0 || i >= nx as isize || j >= ny as isize || k >= nz as isize {
                    return;
                }
                let (i, j, k) = (i as usize, j as usize, k as usize);
                let n = spec.index(i, j, k);
                if !seen[n] && grid.get(i, j, k) != 0.0 && spec.center(i, j, k).z < z_max {
                    seen[n] = true;
                    stack.push(n);
                }
            };
            let (i, j, k) = (i as isize, j as isize, k as isize);
            push(i - 1, j, k);
            push(i + 1, j, k);
            push(i, j - 1, k);
            push(i, j + 1, k);
            push(i, j, k - 1);
            push(i, j, k + 1);
        }
    }
    count
}

#[test]
fn incisor_has_one_root_lobe_and_molar_more() {
    let g = generate_tooth(&ToothTemplate::nominal(fdi(11)).scaled(0.8), 64, 1).unwrap();
    assert_eq!(components_below(&g.occupancy(0.25).unwrap(), 0.0), 1);
    let g = generate_tooth(&ToothTemplate::nominal(fdi(16)).scaled(0.8), 64, 1).unwrap();
    // Three roots merge near the crown, so count lobes well below it.
    assert_eq!(components_below(&g.occupancy(0.25).unwrap(), -2.0), 3);
}

#[test]
fn surface_points_lie_on_the_occupancy_boundary() {
    let spacing = 0.25;
    for code in [11, 13, 24, 36, 47] {
        let g = generate_tooth(&ToothTemplate::nominal(fdi(code)).scaled(0.8), 400, code as u64).unwrap();
        let occ = g.occupancy(spacing).unwrap();
        let spec = *occ.spec();
        // Boundary voxels: occupied with at least one empty 6-neighbour.
        let mut boundary = Vec::new();
        for idx in occ.occupied_indices() {
            let [i, j, k] = idx;
            let nb = [
                (i - 1, j, k),
                (i + 1, j, k),
                (i, j - 1, k),
                (i, j + 1, k),
                (i, j, k - 1),
                (i, j, k + 1),
            ];
            if nb.iter().any(|&(a, b, c)| occ.get(a, b, c) == 0.0) {
                boundary.push(spec.center(i, j, k));
            }
        }
        // Near an apex the cone is thinner than a voxel and is not captured.
        let apexes: Vec<Vector3<f64>> = g.template.roots.iter().map(|r| Vector3::new(r.x, r.y, -r.length)).collect();
        for p in g.surface.points() {
            if apexes.iter().any(|a| (p - a).norm() < 1.0) {
                continue;
            }
            let d = boundary.iter().map(|c| cube_distance(p, c, spacing)).fold(f64::INFINITY, f64::min);
            assert!(d <= spacing, "tooth {code}: point {p:?} is {d} from the boundary");
        }
    }
}

#[test]
fn default_jaw_has_28_distinct_labels_inside_bounds() {
    let case = assemble_jaw(&no_dropout(), 0, 11).unwrap();
    let h = case.labels.histogram();
    let present: Vec<usize> = (1..33).filter(|&c| h[c] > 0).collect();
    assert_eq!(present.len(), 28);
    assert!(present.iter().all(|&c| FdiTooth::from_channel(c).unwrap().position() <= 7));
    let bounds = case.volume.spec().bounds();
    for rec in case.present_teeth() {
        let global = apply_transform(rec.gt_cloud.as_ref().unwrap(), &rec.transform);
        assert!(global.points().iter().all(|p| bounds.contains(p)), "tooth {}", rec.fdi);
    }
}

fn analytic_volume(t: &ToothTemplate) -> f64 {
    let c = &t.crown;
    let e = c.exponent;
    let crown = 8.0 * c.a * c.b * c.c * gamma(1.0 + 1.0 / e).powi(3) / gamma(1.0 + 3.0 / e);
    // Cone below the crown base plus the part hidden inside the crown is
    // counted once: only the portion below z = 0 adds volume, approximately.
    let roots: f64 = t
        .roots
        .iter()
        .map(|r| {
            let h = 0.4 * c.c + r.length;
            let r0 = r.radius * r.length / h;
            std::f64::consts::PI * r0 * r0 * r.length / 3.0
        })
        .sum();
    crown + roots
}

#[test]
fn label_counts_match_analytic_volume() {
    let case = assemble_jaw(&no_dropout(), 1, 12).unwrap();
    let h = case.labels.histogram();
    let voxel = case.volume.spec().spacing.powi(3);
    for rec in case.present_teeth() {
        let expected = analytic_volume(&rec.template) / voxel;
        let got = h[rec.fdi.channel()] as f64;
        assert!((got / expected - 1.0).abs() <= 0.3, "tooth {}: {got} voxels vs {expected:.0}", rec.fdi);
    }
}

#[test]
fn gt_clouds_lie_on_labelled_surfaces() {
    let case = assemble_jaw(&no_dropout(), 2, 13).unwrap();
    let spec = *case.labels.spec();
    let mut far = 0;
    let mut total = 0;
    for rec in case.present_teeth() {
        let boundary: Vec<Vector3<f64>> = boundary_voxels(&case.labels, rec.fdi.channel() as u8)
            .into_iter()
            .map(|[i, j, k]| spec.center(i, j, k))
            .collect();
        let global = apply_transform(rec.gt_cloud.as_ref().unwrap(), &rec.transform);
        for p in global.points().iter().step_by(8) {
            let d = boundary.iter().map(|c| cube_distance(p, c, spec.spacing)).fold(f64::INFINITY, f64::min);
            total += 1;
            if d > spec.spacing {
                far += 1;
            }
        }
    }
    // Contact areas resolved in favour of the neighbour are the only
    // exception; they stay rare.
    assert!((far as f64) < 0.02 * total as f64, "{far} of {total} points off-surface");
}

#[test]
fn dropout_removes_teeth_from_labels_and_gt() {
    let cfg = SynthConfig { dropout: 0.3, ..SynthConfig::default() };
    let case = assemble_jaw(&cfg, 3, 14).unwrap();
    let h = case.labels.histogram();
    let missing: Vec<_> = case.teeth.values().filter(|r| !r.present).collect();
    assert!(!missing.is_empty());
    for r in missing {
        assert_eq!(h[r.fdi.channel()], 0);
        assert!(matches!(case.gt_cloud(r.fdi), Err(Error::MissingTooth(_))));
    }
}

#[test]
fn oversized_teeth_fail_placement() {
    let cfg = SynthConfig { tooth_scale: 1.2, ..SynthConfig::default() };
    assert!(matches!(assemble_jaw(&cfg, 0, 1), Err(Error::Placement(_))));
}

#[test]
fn jaw_assembly_is_deterministic() {
    let cfg = SynthConfig::coarse();
    assert_eq!(assemble_jaw(&cfg, 4, 5).unwrap(), assemble_jaw(&cfg, 4, 5).unwrap());
    assert_ne!(assemble_jaw(&cfg, 4, 5).unwrap().volume, assemble_jaw(&cfg, 5, 5).unwrap().volume);
}

#[test]
fn case_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { dropout: 0.2, ..SynthConfig::coarse() };
    let case = assemble_jaw(&cfg, 7, 21).unwrap();
    save_case(dir.path(), &case).unwrap();
    let back = load_case(dir.path(), 7).unwrap();
    assert_eq!(back.arch, case.arch);
    assert_eq!(back.volume, case.volume);
    assert_eq!(back.labels, case.labels);
    for (a, b) in back.teeth.values().zip(case.teeth.values()) {
        assert_eq!(a.template, b.template);
        assert_eq!(a.transform, b.transform, "{}", a.fdi);
        assert_eq!(a.gt_cloud, b.gt_cloud);
        assert_eq!(a, b);
    }
    assert_eq!(back, case);
}

#[test]
fn surface_points_of_single_voxel_stay_inside_it() {
    let spec = GridSpec::new([4, 4, 4], 0.5, [0.0, 0.0, 0.0]).unwrap();
    let mut labels = LabelVolume::zeros(spec);
    labels.set(1, 2, 3, 5);
    let t = FdiTooth::from_channel(5).unwrap();
    let cloud = surface_points(&labels, t, 200, 0).unwrap();
    for p in cloud.points() {
        assert_eq!(spec.locate(p), Some([1, 2, 3]));
    }
    assert!(matches!(surface_points(&labels, fdi(11), 10, 0), Err(Error::MissingTooth(_))));
}

#[test]
fn surface_points_are_uniform_over_boundary_voxels() {
    let spec = GridSpec::new([8, 8, 8], 1.0, [0.0, 0.0, 0.0]).unwrap();
    let mut labels = LabelVolume::zeros(spec);
    for k in 1..7 {
        for j in 1..7 {
            for i in 1..7 {
                labels.set(i, j, k, 9);
            }
        }
    }
    let t = FdiTooth::from_channel(9).unwrap();
    let boundary = boundary_voxels(&labels, 9);
    assert_eq!(boundary.len(), 6 * 6 * 6 - 4 * 4 * 4);
    let n = 10_000;
    let cloud = surface_points(&labels, t, n, 42).unwrap();
    let mut counts = vec![0usize; spec.len()];
    for p in cloud.points() {
        let [i, j, k] = spec.locate(p).unwrap();
        assert_eq!(labels.get(i, j, k), 9);
        counts[spec.index(i, j, k)] += 1;
    }
    let expected = n as f64 / boundary.len() as f64;
    let chi2: f64 = boundary
        .iter()
        .map(|&[i, j, k]| {
            let o = counts[spec.index(i, j, k)] as f64;
            (o - expected).powi(2) / expected
        })
        .sum();
    let dist = ChiSquared::new((boundary.len() - 1) as f64).unwrap();
    let p_value = 1.0 - dist.cdf(chi2);
    assert!(p_value > 1e-3, "chi2 {chi2}, p {p_value}");
    let interior: usize = counts.iter().sum::<usize>() - boundary.iter().map(|&[i, j, k]| counts[spec.index(i, j, k)]).sum::<usize>();
    assert_eq!(interior, 0);
}

#[test]
fn arch_is_symmetric_with_identity_frame_at_apex() {
    let arch = ArchCurve::new(ArchParams::default()).unwrap();
    for i in 0..=20 {
        let t = i as f64 / 20.0;
        let (a, b) = (arch.point(t), arch.point(1.0 - t));
        assert!((a.x + b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12);
    }
    let r = arch.frame_rotation(0.5, false);
    assert!((r - nalgebra::Matrix3::identity()).norm() < 1e-12);
    let l = arch.length();
    assert!((arch.arclength_at(0.5) - l / 2.0).abs() < 1e-9);
    for k in 0..=10 {
        let s = l * k as f64 / 10.0;
        assert!((arch.arclength_at(arch.t_at_arclength(s)) - s).abs() < 1e-9);
    }
    // Polyline oracle for the total length.
    let n = 200_000;
    let poly: f64 = (0..n).map(|i| (arch.point((i + 1) as f64 / n as f64) - arch.point(i as f64 / n as f64)).norm()).sum();
    assert!((poly - l).abs() < 1e-6);
}

#[test]
fn template_invariants_hold_for_every_tooth() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for t in FdiTooth::all() {
        let tpl = ToothTemplate::nominal(t).scaled(0.8);
        tpl.validate().unwrap();
        tpl.jittered(&mut rng).validate().unwrap();
        if t.is_incisor() {
            assert_eq!(tpl.roots.len(), 1);
        }
        if t.is_molar() {
            assert!(tpl.roots.len() >= 2);
        }
    }
    let mut bad = ToothTemplate::nominal(fdi(16));
    bad.roots.truncate(1);
    assert!(matches!(bad.validate(), Err(Error::Degenerate(_))));
    let mut bad = ToothTemplate::nominal(fdi(11));
    bad.crown.a = 0.5;
    assert!(matches!(generate_tooth(&bad, 10, 0), Err(Error::Degenerate(_))));
}
