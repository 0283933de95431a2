//! Acceptance criteria 1-8. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use bodycomp::anatomy::{TissueClass, VertebralLevel};
use bodycomp::cli::cli_main;
use bodycomp::pipeline::{read_tissue_h5, RecordStatus, RunManifest, MANIFEST_FILE};
use bodycomp::render::{
    build_cpr_path, render_cpr, resample_image, resample_isotropic, sample_cpr_plane, windowed_gray, CprPlane,
    OverlayStyle, Window,
};
use bodycomp::segmentation::{spine_class_map, STANFORD_MODEL_ID};
use bodycomp::spine::{analyze_spine, build_roi, RoiShape, RoiSpec, Statistic};
use bodycomp::tissue::{compute_metrics, fill_holes, process_slice, relabel_imat, PostProcessConfig};
use bodycomp::validation::{
    compare_spine, dice, generate_slice_phantom, generate_spine_phantom, HoleSpec, PocketSpec,
    SlicePhantomSpec, SpinePhantomSpec,
};
use bodycomp::volume::load_nifti_mask;
use bodycomp::{CtVolume, SegmentationMask};
use ndarray::{Array2, Array3};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;

fn report(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

fn run_criterion(n: usize, title: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match &result {
        Ok(detail) => report(&format!("criterion {n} PASS ({secs:.1} s) {title}: {detail}")),
        Err(why) => report(&format!("criterion {n} FAIL ({secs:.1} s) {title}: {why}")),
    }
    result.is_ok()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- criterion 1

fn spine_oracle() -> Outcome {
    let spec = SpinePhantomSpec::straight([512, 512, 300], [1.0, 1.0, 1.5]);
    let phantom = generate_spine_phantom(&spec).map_err(|e| e.to_string())?;
    let roi = RoiSpec::default();
    let start = Instant::now();
    let analysis = analyze_spine(&phantom.volume, &phantom.mask, &roi).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(analysis.results.len() == 6, || format!("{} levels analyzed", analysis.results.len()))?;
    for truth in &phantom.truth {
        let r = analysis.results.iter().find(|r| r.level == truth.level).ok_or("level missing")?;
        ensure(r.hu_statistic == truth.trabecular_hu, || {
            format!("{}: HU {} != {}", truth.level, r.hu_statistic, truth.trabecular_hu)
        })?;
        let dz = (r.si_center_z as f64 - truth.center_index[2]).abs();
        ensure(dz <= 1.0, || format!("{}: SI center {} vs {}", truth.level, r.si_center_z, truth.center_index[2]))?;
    }
    ensure(secs < 30.0, || format!("analysis took {secs:.1} s"))?;
    Ok(format!("6/6 levels exact HU, SI within 1 slice, analysis {secs:.2} s"))
}

// ---------------------------------------------------------------- criterion 2

/// Inclusion with spacing `a / 10` mm and diameter `b / 10` mm, in integers.
fn oracle_contains(offset: [i64; 3], a: [i64; 3], b: i64, shape: RoiShape) -> bool {
    match shape {
        RoiShape::Sphere => (0..3).map(|i| 4 * (offset[i] * a[i]).pow(2)).sum::<i64>() <= b * b,
        RoiShape::Cube => (0..3).all(|i| 2 * (offset[i] * a[i]).abs() <= b),
    }
}

fn oracle_roi(dims: [usize; 3], center: [usize; 3], a: [i64; 3], b: i64, shape: RoiShape) -> Option<Vec<[usize; 3]>> {
    const BOX: i64 = 45;
    let mut out = Vec::new();
    for dx in -BOX..=BOX {
        for dy in -BOX..=BOX {
            for dz in -BOX..=BOX {
                if !oracle_contains([dx, dy, dz], a, b, shape) {
                    continue;
                }
                let p = [center[0] as i64 + dx, center[1] as i64 + dy, center[2] as i64 + dz];
                if (0..3).any(|i| p[i] < 0 || p[i] >= dims[i] as i64) {
                    return None;
                }
                out.push([p[0] as usize, p[1] as usize, p[2] as usize]);
            }
        }
    }
    out.sort_unstable();
    Some(out)
}

fn roi_geometry() -> Outcome {
    let mut rng = StdRng::seed_from_u64(20240501);
    let dims = [48usize, 48, 48];
    let vol = CtVolume::new(Array3::zeros(dims), [1.0; 3], [0.0; 3]).map_err(|e| e.to_string())?;
    let spacing_choices = [5i64, 7, 8, 10, 12, 15, 20, 25, 30];
    let mut exceeded = 0;
    for case in 0..50 {
        let (a, b, center) = if case == 0 {
            ([10, 10, 25], 100, [24, 24, 24])
        } else {
            let a = [0, 1, 2].map(|_| spacing_choices[rng.random_range(0..spacing_choices.len())]);
            let b = rng.random_range(20..=200);
            let edge = case % 10 == 9;
            let center = if edge {
                [rng.random_range(0..4), rng.random_range(20..28), rng.random_range(20..28)]
            } else {
                [0, 1, 2].map(|_| rng.random_range(20..28))
            };
            (a, b, center)
        };
        let spacing = a.map(|v| v as f64 / 10.0);
        let mut v = vol.clone();
        v.spacing = spacing;
        let mut sets = BTreeMap::new();
        for shape in [RoiShape::Sphere, RoiShape::Cube] {
            let spec = RoiSpec { shape, diameter_mm: b as f64 / 10.0, statistic: Statistic::Median };
            let got = build_roi(&v, center, &spec).ok();
            let want = oracle_roi(dims, center, a, b, shape);
            ensure(got == want, || {
                format!(
                    "case {case}: {shape:?} spacing {spacing:?} d {} center {center:?}: {:?} vs oracle {:?} voxels",
                    b as f64 / 10.0,
                    got.as_ref().map(Vec::len),
                    want.as_ref().map(Vec::len)
                )
            })?;
            if want.is_none() {
                exceeded += 1;
            }
            sets.insert(format!("{shape:?}"), want);
        }
        if let (Some(Some(s)), Some(Some(c))) = (sets.get("Sphere"), sets.get("Cube")) {
            let cube: BTreeSet<_> = c.iter().collect();
            ensure(s.iter().all(|p| cube.contains(p)), || format!("case {case}: sphere not inside cube"))?;
        }
        if case == 0 {
            let s = sets["Sphere"].as_ref().ok_or("anisotropic case exceeded the volume")?;
            let zs: BTreeSet<i64> = s.iter().map(|p| p[2] as i64 - 24).collect();
            ensure(zs == (-2..=2).collect(), || format!("anisotropic z offsets {zs:?}"))?;
        }
    }
    Ok(format!("50 cases match the enumeration oracle ({exceeded} boundary rejections), sphere inside cube"))
}

// ---------------------------------------------------------------- criterion 3

/// Component labels by repeated min-propagation until nothing changes.
fn naive_components(mask: &Array2<bool>, eight: bool) -> Array2<usize> {
    let (w, h) = mask.dim();
    let mut lab = Array2::from_shape_fn((w, h), |(x, y)| if mask[[x, y]] { 1 + x * h + y } else { 0 });
    let mut offsets = vec![(-1i64, 0i64), (1, 0), (0, -1), (0, 1)];
    if eight {
        offsets.extend([(-1, -1), (-1, 1), (1, -1), (1, 1)]);
    }
    loop {
        let mut changed = false;
        for x in 0..w {
            for y in 0..h {
                if lab[[x, y]] == 0 {
                    continue;
                }
                for &(dx, dy) in &offsets {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let other = lab[[nx as usize, ny as usize]];
                    if other != 0 && other < lab[[x, y]] {
                        lab[[x, y]] = other;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return lab;
        }
    }
}

fn naive_fill(mask: &Array2<bool>, threshold: usize) -> Array2<bool> {
    let (w, h) = mask.dim();
    let lab = naive_components(&mask.mapv(|b| !b), false);
    let mut size: BTreeMap<usize, usize> = BTreeMap::new();
    let mut border: BTreeSet<usize> = BTreeSet::new();
    for ((x, y), &l) in lab.indexed_iter() {
        if l != 0 {
            *size.entry(l).or_default() += 1;
            if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                border.insert(l);
            }
        }
    }
    Array2::from_shape_fn((w, h), |p| {
        let l = lab[p];
        mask[p] || (l != 0 && !border.contains(&l) && size[&l] < threshold)
    })
}

fn naive_relabel(muscle: &Array2<bool>, hu: &Array2<f64>) -> (Array2<bool>, Array2<bool>) {
    let cand = Array2::from_shape_fn(muscle.dim(), |p| muscle[p] && hu[p] > -190.0 && hu[p] < -30.0);
    let lab = naive_components(&cand, true);
    let mut size: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in lab.iter().filter(|&&l| l != 0) {
        *size.entry(l).or_default() += 1;
    }
    let imat = lab.mapv(|l| l != 0 && size[&l] >= 10);
    let rest = Array2::from_shape_fn(muscle.dim(), |p| muscle[p] && !imat[p]);
    (rest, imat)
}

fn random_case(rng: &mut StdRng) -> (Array2<bool>, Array2<f64>) {
    let density = rng.random_range(0.55..0.95);
    let base = [-250.0, -190.0, -150.0, -100.0, -60.0, -30.0, -20.0, 40.0];
    let blocks = Array2::from_shape_fn((16, 16), |_| base[rng.random_range(0..base.len())]);
    let mask = Array2::from_shape_fn((64, 64), |_| rng.random_bool(density));
    let hu = Array2::from_shape_fn((64, 64), |(x, y)| {
        if rng.random_bool(0.1) {
            base[rng.random_range(0..base.len())]
        } else {
            blocks[[x / 4, y / 4]]
        }
    });
    (mask, hu)
}

fn postprocessing_oracle() -> Outcome {
    let cfg = PostProcessConfig::default();
    let mut rng = StdRng::seed_from_u64(7);
    let mut imat_pixels = 0usize;
    let mut filled_pixels = 0usize;
    for case in 0..200 {
        let (mask, hu) = random_case(&mut rng);
        let tissue = if case % 2 == 0 { TissueClass::Muscle } else { TissueClass::Sat };
        let filled = fill_holes(&mask, tissue, &cfg);
        let want_filled = naive_fill(&mask, cfg.hole_threshold(tissue));
        ensure(filled == want_filled, || format!("case {case}: fill_holes differs from the reference"))?;
        filled_pixels += filled.iter().filter(|&&b| b).count() - mask.iter().filter(|&&b| b).count();
        let (muscle, imat) = relabel_imat(&filled, hu.view(), &cfg).map_err(|e| e.to_string())?;
        let (want_muscle, want_imat) = naive_relabel(&filled, &hu);
        ensure(muscle == want_muscle && imat == want_imat, || format!("case {case}: relabel differs"))?;
        imat_pixels += imat.iter().filter(|&&b| b).count();

        let lab = naive_components(&imat, true);
        let mut size: BTreeMap<usize, usize> = BTreeMap::new();
        for &l in lab.iter().filter(|&&l| l != 0) {
            *size.entry(l).or_default() += 1;
        }
        ensure(size.values().all(|&s| s >= 10), || format!("case {case}: IMAT component below 10 px"))?;
        let partition = ndarray::Zip::from(&muscle)
            .and(&imat)
            .and(&filled)
            .all(|&m, &i, &f| !(m && i) && ((m || i) == f));
        ensure(partition, || format!("case {case}: partition broken"))?;

        if tissue == TissueClass::Muscle {
            let raw = bodycomp::tissue::RawTissueMasks {
                muscle: mask.clone(),
                vat: Array2::from_elem((64, 64), false),
                sat: Array2::from_elem((64, 64), false),
                imat: None,
            };
            let res = process_slice(hu.view(), &raw, [1.0, 1.0], &cfg).map_err(|e| e.to_string())?;
            ensure(res.masks[&TissueClass::Muscle] == want_muscle && res.masks[&TissueClass::Imat] == want_imat, || {
                format!("case {case}: process_slice differs from the reference chain")
            })?;
        }
    }
    Ok(format!("200 cases identical ({filled_pixels} filled, {imat_pixels} IMAT pixels in total)"))
}

// ---------------------------------------------------------------- criterion 4

fn metrics_exactness() -> Outcome {
    let cfg = PostProcessConfig::default();
    let spacing = [0.7, 0.9];
    let mut spec = SlicePhantomSpec::basic([160, 140], spacing);
    let base = spec.clone();
    let mx = spec.center[0] + spec.semi_axes[0] * 0.675;
    let my = spec.center[1];
    let mx2 = spec.center[0] - spec.semi_axes[0] * 0.675;
    spec.pockets = vec![
        PocketSpec { x: mx, y: my, size_px: 30, hu: -100.0 },
        PocketSpec { x: mx2, y: my, size_px: 5, hu: -100.0 },
        PocketSpec { x: spec.center[0], y: spec.center[1] + spec.semi_axes[1] * 0.675, size_px: 25, hu: -20.0 },
    ];
    spec.holes = vec![
        HoleSpec { tissue: TissueClass::Sat, x: spec.center[0], y: spec.center[1] - spec.semi_axes[1] * 0.9, size_px: 12 },
        HoleSpec { tissue: TissueClass::Vat, x: spec.center[0], y: spec.center[1], size_px: 15 },
        HoleSpec { tissue: TissueClass::Muscle, x: spec.center[0], y: spec.center[1] - spec.semi_axes[1] * 0.675, size_px: 25 },
    ];
    let mut checked = 0;
    for s in [base, spec] {
        let ph = generate_slice_phantom(&s, &cfg).map_err(|e| e.to_string())?;
        let res = process_slice(ph.hu.view(), &ph.raw, spacing, &cfg).map_err(|e| e.to_string())?;
        ensure(res.masks == ph.truth.masks, || "masks differ from the construction".into())?;
        let metrics = compute_metrics(&res.masks, ph.hu.view(), spacing).map_err(|e| e.to_string())?;
        ensure(metrics == res.metrics, || "recomputed metrics differ".into())?;
        let n = |t: TissueClass| ph.truth.pixel_counts[&t] as f64;
        for m in &res.metrics {
            let want_area = m.pixel_count as f64 * spacing[0] * spacing[1] / 100.0;
            ensure((m.area_cm2 - want_area).abs() <= 1e-9, || format!("{}: area {}", m.tissue, m.area_cm2))?;
            ensure(m.pixel_count == ph.truth.pixel_counts[&m.tissue], || format!("{}: count", m.tissue))?;
            // Analytic means: uniform compartments, plus pockets that stay muscle.
            let analytic = match m.tissue {
                TissueClass::Sat => Some(s.sat_hu),
                TissueClass::Vat => Some(s.vat_hu),
                TissueClass::Imat => (n(TissueClass::Imat) > 0.0).then_some(-100.0),
                TissueClass::Muscle => {
                    let reverted: Vec<(f64, f64)> = s
                        .pockets
                        .iter()
                        .filter(|p| !(p.hu > -190.0 && p.hu < -30.0 && p.size_px >= 10))
                        .map(|p| (p.size_px as f64, p.hu))
                        .collect();
                    let k: f64 = reverted.iter().map(|r| r.0).sum();
                    let total = n(TissueClass::Muscle);
                    Some((s.muscle_hu * (total - k) + reverted.iter().map(|r| r.0 * r.1).sum::<f64>()) / total)
                }
            };
            match (m.mean_hu, analytic) {
                (Some(a), Some(b)) => ensure((a - b).abs() <= 1e-6, || format!("{}: mean {a} vs {b}", m.tissue))?,
                (None, None) => {}
                (a, b) => return Err(format!("{}: mean {a:?} vs {b:?}", m.tissue)),
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} tissue metrics exact (area to 1e-9, mean HU to 1e-6)"))
}

// ---------------------------------------------------------------- criterion 5

fn oracle_trilinear(v: &Array3<f64>, p: [f64; 3]) -> f64 {
    let (nx, ny, nz) = v.dim();
    let n = [nx, ny, nz];
    let mut base = [0usize; 3];
    let mut t = [0.0; 3];
    for a in 0..3 {
        let i = (p[a].floor() as usize).min(n[a] - 2);
        base[a] = i;
        t[a] = p[a] - i as f64;
    }
    let mut acc = 0.0;
    for corner in 0..8 {
        let d = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
        let mut w = 1.0;
        for a in 0..3 {
            w *= if d[a] == 1 { t[a] } else { 1.0 - t[a] };
        }
        acc += w * v[[base[0] + d[0], base[1] + d[1], base[2] + d[2]]];
    }
    acc
}

fn oracle_path_xy(centers: &[[f64; 3]], z: f64) -> [f64; 2] {
    let mut c = centers.to_vec();
    c.sort_by(|a, b| a[2].partial_cmp(&b[2]).unwrap());
    if z <= c[0][2] {
        return [c[0][0], c[0][1]];
    }
    for w in c.windows(2) {
        if z <= w[1][2] {
            let t = (z - w[0][2]) / (w[1][2] - w[0][2]);
            return [w[0][0] + t * (w[1][0] - w[0][0]), w[0][1] + t * (w[1][1] - w[0][1])];
        }
    }
    let l = c[c.len() - 1];
    [l[0], l[1]]
}

fn cpr_correctness() -> Outcome {
    // Straight spine: the coronal CPR is the coronal plane through the centers.
    let spacing = [0.8, 0.8, 1.5];
    let straight = generate_spine_phantom(&SpinePhantomSpec::straight([128, 128, 200], spacing))
        .map_err(|e| e.to_string())?;
    let centers: Vec<[f64; 3]> = straight.truth.iter().map(|t| t.center_index).collect();
    let path = build_cpr_path(&centers, 200).map_err(|e| e.to_string())?;
    let plane = sample_cpr_plane(&straight.volume, &path, CprPlane::Coronal).map_err(|e| e.to_string())?;
    let yc = centers[0][1].round() as usize;
    let mut max_d: f64 = 0.0;
    for r in 0..200 {
        for x in 0..128 {
            max_d = max_d.max((plane[[r, x]] - straight.volume.voxels[[x, yc, 199 - r]]).abs());
        }
    }
    ensure(max_d < 1e-6, || format!("straight coronal CPR deviates by {max_d}"))?;
    let ortho = Array2::from_shape_fn((200, 128), |(r, x)| straight.volume.voxels[[x, yc, 199 - r]]);
    let iso = resample_image(&ortho, [spacing[2], spacing[0]], 0.8);
    let expected = windowed_gray(iso.t(), Window::BONE);
    let rendered = render_cpr(
        &straight.volume,
        &path,
        &[],
        None,
        &RoiSpec::default(),
        &OverlayStyle::default(),
        CprPlane::Coronal,
    )
    .map_err(|e| e.to_string())?;
    ensure(rendered == expected, || "rendered straight CPR differs from the orthogonal plane".into())?;

    // Curved spine: random pixels against a trilinear path-sampling oracle.
    let mut spec = SpinePhantomSpec::straight([128, 128, 200], spacing);
    for (i, l) in spec.levels.iter_mut().enumerate() {
        l.center_mm[0] += [0.0, 4.0, 9.6, 12.0, 8.0, 2.4][i];
        l.center_mm[1] += [0.0, 1.6, 4.0, 6.4, 4.0, 0.8][i];
    }
    spec.noise_sigma = 25.0;
    spec.seed = 11;
    let curved = generate_spine_phantom(&spec).map_err(|e| e.to_string())?;
    let centers: Vec<[f64; 3]> = curved.truth.iter().map(|t| t.center_index).collect();
    let path = build_cpr_path(&centers, 200).map_err(|e| e.to_string())?;
    let mut rng = StdRng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for plane in [CprPlane::Coronal, CprPlane::Sagittal] {
        let img = sample_cpr_plane(&curved.volume, &path, plane).map_err(|e| e.to_string())?;
        for _ in 0..50 {
            let r = rng.random_range(0..200);
            let c = rng.random_range(0..128);
            let z = (199 - r) as f64;
            let [px, py] = oracle_path_xy(&centers, z);
            let p = match plane {
                CprPlane::Coronal => [c as f64, py, z],
                CprPlane::Sagittal => [px, c as f64, z],
            };
            worst = worst.max((img[[r, c]] - oracle_trilinear(&curved.volume.voxels, p)).abs());
        }
    }
    ensure(worst < 1e-6, || format!("curved CPR deviates by {worst}"))?;

    // Resampling preserves a linear ramp.
    let ramp = Array3::from_shape_fn((20, 24, 30), |(x, y, z)| {
        3.0 + 0.5 * x as f64 * 0.7 - 1.25 * y as f64 * 0.9 + 2.0 * z as f64 * 2.1
    });
    let vol = CtVolume::new(ramp, [0.7, 0.9, 2.1], [0.0; 3]).map_err(|e| e.to_string())?;
    let iso = resample_isotropic(&vol);
    let mut ramp_err: f64 = 0.0;
    for ((x, y, z), &v) in iso.voxels.indexed_iter() {
        let want = 3.0 + 0.5 * x as f64 * 0.7 - 1.25 * y as f64 * 0.7 + 2.0 * z as f64 * 0.7;
        ramp_err = ramp_err.max((v - want).abs());
    }
    ensure(ramp_err < 1e-6, || format!("ramp error {ramp_err}"))?;
    Ok(format!(
        "straight max |dHU| {max_d:.1e}, 100 curved pixels max |dHU| {worst:.1e}, ramp max error {ramp_err:.1e}"
    ))
}

// ------------------------------------------------------------ criteria 6 and 7

struct PipelineRun {
    run_dir: std::path::PathBuf,
}

fn run_cli(args: &[&str]) -> i32 {
    let mut argv = vec!["c2c"];
    argv.extend_from_slice(args);
    cli_main(argv)
}

fn pipeline_contract(dir: &Path, corpus: &common::Corpus) -> Result<(String, PipelineRun), String> {
    let out = dir.join("out_n1");
    let code = run_cli(&[
        "process_3d",
        "INPUT_PATH",
        corpus.input.to_str().unwrap(),
        "--mask-root",
        corpus.masks.to_str().unwrap(),
        "--output-root",
        out.to_str().unwrap(),
    ]);
    ensure(code == 1, || format!("exit code {code}, expected 1"))?;
    let run_dir = common::single_run_dir(&out);
    let name = run_dir.file_name().unwrap().to_string_lossy().into_owned();
    ensure(common::is_run_dir_name(&name), || format!("run dir name {name:?}"))?;

    let manifest = RunManifest::load(&run_dir.join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
    let statuses: Vec<RecordStatus> = manifest.records.iter().map(|r| r.status).collect();
    ensure(statuses == [RecordStatus::Ok, RecordStatus::Ok, RecordStatus::Failed], || {
        format!("statuses {statuses:?}")
    })?;

    let cfg = PostProcessConfig::default();
    for (i, phantom) in corpus.phantoms.iter().enumerate().take(2) {
        let sdir = run_dir.join(format!("series_{i}"));
        for sub in ["images", "segmentations", "metrics"] {
            ensure(sdir.join(sub).is_dir(), || format!("series_{i}: missing {sub}/"))?;
        }
        let mut reader = csv::Reader::from_path(sdir.join("metrics/metrics.csv")).map_err(|e| e.to_string())?;
        let rows: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        ensure(rows.len() == 6, || format!("series_{i}: {} CSV rows", rows.len()))?;
        for row in &rows {
            let level: VertebralLevel = row[0].parse().map_err(|_| "bad level")?;
            let want = phantom.truth.iter().find(|t| t.level == level).unwrap().trabecular_hu;
            let got: f64 = row[2].parse().map_err(|_| "bad HU")?;
            ensure(got == want, || format!("series_{i} {level}: CSV HU {got} vs {want}"))?;
        }

        let spine = load_nifti_mask(&sdir.join("segmentations/spine.nii.gz"), &spine_class_map())
            .map_err(|e| e.to_string())?;
        ensure(spine.labels == phantom.mask.labels, || format!("series_{i}: spine.nii.gz differs"))?;

        let expected = process_slice(
            ndarray::Array2::from_elem((common::XY, common::XY), 0.0).view(),
            &corpus.raw,
            [1.0, 1.0],
            &cfg,
        )
        .map_err(|e| e.to_string())?;
        for level in VertebralLevel::ALL {
            let h5 = sdir.join(format!("segmentations/{}_seg.h5", level.name()));
            let file = hdf5::File::open(&h5).map_err(|e| format!("{}: {e}", h5.display()))?;
            ensure(file.member_names().map_err(|e| e.to_string())? == [STANFORD_MODEL_ID], || {
                format!("{}: top-level groups", h5.display())
            })?;
            let g = file.group(STANFORD_MODEL_ID).map_err(|e| e.to_string())?;
            ensure(g.member_names().map_err(|e| e.to_string())? == ["imat", "muscle", "sat", "vat"], || {
                format!("{}: datasets", h5.display())
            })?;
            let masks = read_tissue_h5(&h5, STANFORD_MODEL_ID).map_err(|e| e.to_string())?;
            for t in [TissueClass::Vat, TissueClass::Sat] {
                ensure(masks[&t] == expected.masks[&t], || format!("{}: {t} mask differs", h5.display()))?;
            }
            let compartment = ndarray::Zip::from(&masks[&TissueClass::Muscle])
                .and(&masks[&TissueClass::Imat])
                .map_collect(|&m, &i| m || i);
            ensure(compartment == expected.masks[&TissueClass::Muscle], || {
                format!("{}: muscle compartment differs", h5.display())
            })?;
            ensure(sdir.join(format!("images/{}_seg.png", level.name())).is_file(), || "missing axial png".into())?;
        }
        for f in ["images/spine_sagittal.png", "images/spine_coronal.png"] {
            ensure(sdir.join(f).is_file(), || format!("series_{i}: missing {f}"))?;
        }
    }
    ensure(!run_dir.join("series_2").join("metrics").exists(), || "failed series wrote metrics".into())?;

    // process_2d on a folder holding abcd.dcm.
    let (input2d, masks2d, _) = common::build_2d_input(dir, "abcd");
    let out2d = dir.join("out_2d");
    let code = run_cli(&[
        "process_2d",
        "INPUT_PATH",
        input2d.to_str().unwrap(),
        "--mask-root",
        masks2d.to_str().unwrap(),
        "--output-root",
        out2d.to_str().unwrap(),
    ]);
    ensure(code == 0, || format!("process_2d exit code {code}"))?;
    let run2d = common::single_run_dir(&out2d);
    for f in ["slices/images/abcd.png", "slices/segmentations/abcd.h5", "slices/metrics/metrics.csv"] {
        ensure(run2d.join(f).is_file(), || format!("process_2d: missing {f}"))?;
    }
    Ok((format!("run dir {name}, statuses ok/ok/failed, exit 1, 6 CSV rows per good series, abcd.png emitted"), PipelineRun {
        run_dir,
    }))
}

fn determinism(dir: &Path, corpus: &common::Corpus, baseline: &PipelineRun) -> Outcome {
    let out = dir.join("out_n4");
    let code = run_cli(&[
        "process_3d",
        "--input-path",
        corpus.input.to_str().unwrap(),
        "--mask-root",
        corpus.masks.to_str().unwrap(),
        "--output-root",
        out.to_str().unwrap(),
        "--workers",
        "4",
    ]);
    ensure(code == 1, || format!("exit code {code}"))?;
    let parallel = common::single_run_dir(&out);
    let a = common::list_files(&baseline.run_dir);
    let b = common::list_files(&parallel);
    ensure(a == b, || format!("file lists differ: {a:?} vs {b:?}"))?;
    let mut kinds = BTreeMap::<String, usize>::new();
    for f in &a {
        let x = std::fs::read(baseline.run_dir.join(f)).map_err(|e| e.to_string())?;
        let y = std::fs::read(parallel.join(f)).map_err(|e| e.to_string())?;
        ensure(x == y, || format!("{} differs between N=1 and N=4", f.display()))?;
        let name = f.to_string_lossy();
        let kind = if name.ends_with(".nii.gz") { "nii.gz".to_string() } else { name.rsplit('.').next().unwrap().to_string() };
        *kinds.entry(kind).or_default() += 1;
    }
    Ok(format!("{} files byte-identical {kinds:?}", a.len()))
}

// ---------------------------------------------------------------- criterion 8

fn validation_self_test() -> Outcome {
    let spacing = [1.0, 1.0, 1.5];
    let ph = generate_spine_phantom(&SpinePhantomSpec::straight([96, 96, 220], spacing)).map_err(|e| e.to_string())?;
    let same = compare_spine(&ph.mask, &ph.mask, &ph.volume, 10).map_err(|e| e.to_string())?;
    ensure(same.levels.len() == 6 && same.is_zero(), || format!("pred = ref gives {same:?}"))?;

    let a = Array2::from_shape_fn((6, 6), |(i, j)| (1..3).contains(&i) && (1..3).contains(&j));
    let b = Array2::from_shape_fn((6, 6), |(i, j)| (1..3).contains(&i) && (2..4).contains(&j));
    let c = Array2::from_shape_fn((6, 6), |(i, j)| i > 3 && j > 3);
    let d = [dice(a.view(), a.view()), dice(a.view(), c.view()), dice(a.view(), b.view())]
        .map(|r| r.map_err(|e| e.to_string()));
    let d = [d[0].clone()?, d[1].clone()?, d[2].clone()?];
    ensure(d == [1.0, 0.0, 0.5], || format!("dice cases {d:?}"))?;

    let shifted = SegmentationMask::new(common::shift_z(&ph.mask.labels, 2), ph.mask.label_map.clone(), spacing);
    let report = compare_spine(&shifted, &ph.mask, &ph.volume, 10).map_err(|e| e.to_string())?;
    ensure(report.levels.len() == 6, || "levels missing".into())?;
    for l in &report.levels {
        ensure(l.vertical_center_error_mm == 3.0, || format!("{}: {} mm", l.level, l.vertical_center_error_mm))?;
    }
    Ok("identity all-zero, dice 1/0/0.5, +2 slices -> 3.0 mm at every level".into())
}

// ------------------------------------------------------------------- runner

#[test]
fn acceptance_criteria() {
    let mut passed = Vec::new();
    passed.push(run_criterion(1, "spine oracle on 512x512x300 phantom", spine_oracle));
    passed.push(run_criterion(2, "ROI geometry vs enumeration oracle", roi_geometry));
    passed.push(run_criterion(3, "post-processing vs naive reference", postprocessing_oracle));
    passed.push(run_criterion(4, "metrics exactness", metrics_exactness));
    passed.push(run_criterion(5, "CPR correctness", cpr_correctness));

    let tmp = tempfile::tempdir().unwrap();
    let corpus = common::build_3d_corpus(tmp.path(), 3, Some(2));
    let mut baseline = None;
    passed.push(run_criterion(6, "pipeline contract", || {
        let (msg, run) = pipeline_contract(tmp.path(), &corpus)?;
        baseline = Some(run);
        Ok(msg)
    }));
    passed.push(run_criterion(7, "determinism N=4 vs N=1", || match &baseline {
        Some(b) => determinism(tmp.path(), &corpus, b),
        None => Err("no N=1 baseline (criterion 6 failed)".into()),
    }));
    passed.push(run_criterion(8, "validation harness self-test", validation_self_test));

    let n_pass = passed.iter().filter(|&&p| p).count();
    report(&format!("acceptance: {n_pass}/{} criteria passed", passed.len()));
    assert!(passed.iter().all(|&p| p), "acceptance criteria failed");
}
