//! Cubic B-spline resampling to isotropic spacing.
//!
//! Each line is split into the straight line through its end samples plus a
//! residual. The residual is extended past both ends by point reflection,
//! prefiltered into B-spline coefficients and evaluated; the straight line is
//! added back analytically. Constants are therefore reproduced exactly and
//! linear ramps to rounding error.

use ndarray::{Array2, Array3, ArrayView1, ArrayViewMut1, Axis, Zip};

use crate::volume::CtVolume;

/// Samples of point-reflected padding on each side of a line.
const PAD: usize = 32;
const POLE: f64 = -0.267_949_192_431_122_7; // sqrt(3) - 2

/// Number of output samples covering the same extent at the new spacing.
pub fn resampled_len(n: usize, spacing: f64, target: f64) -> usize {
    if n <= 1 {
        return n;
    }
    ((n - 1) as f64 * spacing / target + 1e-9).floor() as usize + 1
}

fn prefilter(c: &mut [f64]) {
    let n = c.len();
    if n < 2 {
        return;
    }
    let lambda = (1.0 - POLE) * (1.0 - 1.0 / POLE);
    for v in c.iter_mut() {
        *v *= lambda;
    }
    // Causal init: truncated mirror sum; the padding absorbs its error.
    let horizon = n.min(40);
    let mut zk = 1.0;
    let mut sum = 0.0;
    for v in c.iter().take(horizon) {
        sum += zk * v;
        zk *= POLE;
    }
    c[0] = sum;
    for i in 1..n {
        c[i] += POLE * c[i - 1];
    }
    c[n - 1] = (POLE / (POLE * POLE - 1.0)) * (POLE * c[n - 2] + c[n - 1]);
    for i in (0..n - 1).rev() {
        c[i] = POLE * (c[i + 1] - c[i]);
    }
}

fn bspline_weights(d: f64) -> [f64; 4] {
    let d2 = d * d;
    let d3 = d2 * d;
    let omd = 1.0 - d;
    [
        omd * omd * omd / 6.0,
        (4.0 - 6.0 * d2 + 3.0 * d3) / 6.0,
        (1.0 + 3.0 * d + 3.0 * d2 - 3.0 * d3) / 6.0,
        d3 / 6.0,
    ]
}

/// Resamples one line at positions `j * target / spacing` (input index units).
fn resample_line(input: ArrayView1<'_, f64>, mut output: ArrayViewMut1<'_, f64>, step: f64) {
    let n = input.len();
    if n == 1 {
        output.fill(input[0]);
        return;
    }
    let (first, last) = (input[0], input[n - 1]);
    let slope = (last - first) / (n - 1) as f64;
    let residual: Vec<f64> = input
        .iter()
        .enumerate()
        .map(|(i, &v)| v - (first + slope * i as f64))
        .collect();

    // Point reflection about both end samples; the residual is zero there, so the
    // extension is odd about each end and periodic with period 2(n - 1).
    let period = 2 * (n as isize - 1);
    let padded: Vec<f64> = (0..n + 2 * PAD)
        .map(|p| {
            let i = (p as isize - PAD as isize).rem_euclid(period);
            if i < n as isize {
                residual[i as usize]
            } else {
                -residual[(period - i) as usize]
            }
        })
        .collect();
    let mut padded = padded;
    let all_zero = residual.iter().all(|&r| r == 0.0);
    if !all_zero {
        prefilter(&mut padded);
    }

    for (j, out) in output.iter_mut().enumerate() {
        let t = (j as f64 * step).min((n - 1) as f64);
        let line = first + slope * t;
        if all_zero {
            *out = line;
            continue;
        }
        let p = t + PAD as f64;
        let i = p.floor();
        let w = bspline_weights(p - i);
        let i = i as usize;
        let r = w[0] * padded[i - 1] + w[1] * padded[i] + w[2] * padded[i + 1] + w[3] * padded[i + 2];
        *out = line + r;
    }
}

fn resample_axis3(data: &Array3<f64>, axis: usize, spacing: f64, target: f64) -> Array3<f64> {
    let mut shape = [data.shape()[0], data.shape()[1], data.shape()[2]];
    shape[axis] = resampled_len(shape[axis], spacing, target);
    let mut out = Array3::<f64>::zeros(shape);
    let step = target / spacing;
    Zip::from(data.lanes(Axis(axis)))
        .and(out.lanes_mut(Axis(axis)))
        .for_each(|src, dst| resample_line(src, dst, step));
    out
}

/// Resamples a 2D image with per-axis `spacing` onto a grid with `target` spacing.
pub fn resample_image(image: &Array2<f64>, spacing: [f64; 2], target: f64) -> Array2<f64> {
    let mut out = image.clone();
    for axis in 0..2 {
        if (spacing[axis] - target).abs() <= 1e-12 {
            continue;
        }
        let mut shape = [out.shape()[0], out.shape()[1]];
        shape[axis] = resampled_len(shape[axis], spacing[axis], target);
        let mut next = Array2::<f64>::zeros(shape);
        let step = target / spacing[axis];
        Zip::from(out.lanes(Axis(axis)))
            .and(next.lanes_mut(Axis(axis)))
            .for_each(|src, dst| resample_line(src, dst, step));
        out = next;
    }
    out
}

/// Nearest-neighbour resampling of a label image on the same grid mapping as
/// [`resample_image`].
pub fn resample_labels(labels: &Array2<u16>, spacing: [f64; 2], target: f64) -> Array2<u16> {
    let shape = [
        resampled_len(labels.shape()[0], spacing[0], target),
        resampled_len(labels.shape()[1], spacing[1], target),
    ];
    Array2::from_shape_fn(shape, |(i, j)| {
        let si = ((i as f64 * target / spacing[0]).round() as usize).min(labels.shape()[0] - 1);
        let sj = ((j as f64 * target / spacing[1]).round() as usize).min(labels.shape()[1] - 1);
        labels[[si, sj]]
    })
}

/// Resamples every axis to the finest of the three spacings.
pub fn resample_isotropic(volume: &CtVolume) -> CtVolume {
    let target = volume.spacing.iter().copied().fold(f64::INFINITY, f64::min);
    let mut data = volume.voxels.clone();
    let mut z_changed = false;
    for axis in 0..3 {
        if (volume.spacing[axis] - target).abs() > 1e-12 {
            data = resample_axis3(&data, axis, volume.spacing[axis], target);
            z_changed |= axis == 2;
        }
    }
    let nz = data.len_of(Axis(2));
    let (slice_z, source_paths) = if z_changed {
        (
            (0..nz).map(|k| volume.origin[2] + k as f64 * target).collect(),
            Vec::new(),
        )
    } else {
        (volume.slice_z.clone(), volume.source_paths.clone())
    };
    CtVolume {
        voxels: data,
        spacing: [target; 3],
        origin: volume.origin,
        slice_z,
        source_paths,
    }
}
