//! Optimization-based 2D/3D rigid registration baseline.
//!
//! Six parameters (translation in voxels, rotation in degrees about the
//! volume center, applied x-then-y-then-z) are optimized with Nelder-Mead
//! restarts to maximize normalized cross-correlation between the DRR of the
//! transformed volume and the target DRR. The translation component along
//! the projection axis is unobservable under a parallel beam; the solver
//! simply leaves it near its starting value.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::projector::render_raw;
use crate::scalar::{from_f64, Scalar};
use crate::solvers::report::{LossRow, SolveReport};
use crate::volgrid::{sample_clamped, Image2D, VolumeGrid};

/// Rigid transform: translation in voxels, rotations in degrees about the
/// volume center, applied in x-then-y-then-z order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidParams {
    pub translation: [f64; 3],
    pub rotation_deg: [f64; 3],
}

impl RigidParams {
    pub fn identity() -> Self {
        Self {
            translation: [0.0; 3],
            rotation_deg: [0.0; 3],
        }
    }

    /// Fold each angle into (-180, 180].
    pub fn normalized(mut self) -> Self {
        for a in self.rotation_deg.iter_mut() {
            let mut v = (*a + 180.0).rem_euclid(360.0) - 180.0;
            if v == -180.0 {
                v = 180.0;
            }
            *a = v;
        }
        self
    }

    fn from_vec(x: &[f64; 6]) -> Self {
        Self {
            translation: [x[0], x[1], x[2]],
            rotation_deg: [x[3], x[4], x[5]],
        }
        .normalized()
    }

    /// Combined rotation matrix Rz * Ry * Rx.
    fn matrix(&self) -> [[f64; 3]; 3] {
        let [rx, ry, rz] = self.rotation_deg.map(f64::to_radians);
        let (sx, cx) = rx.sin_cos();
        let (sy, cy) = ry.sin_cos();
        let (sz, cz) = rz.sin_cos();
        let rx_m = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
        let ry_m = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
        let rz_m = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
        mat_mul(&rz_m, &mat_mul(&ry_m, &rx_m))
    }
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// Resample through the rigid map (pull-back, matching the warp convention:
/// a pure translation t samples at p + t). Clamp-to-edge trilinear.
pub fn apply_rigid<T: Scalar>(v: &VolumeGrid<T>, theta: &RigidParams) -> VolumeGrid<T> {
    let dims = v.dims();
    let r = theta.matrix();
    let c = center(dims);
    let t = theta.translation;
    VolumeGrid::from_fn(dims, v.spacing(), |x, y, z| {
        let q = map_point(&r, c, t, [x as f64, y as f64, z as f64]);
        sample_clamped(
            v.values(),
            dims,
            from_f64::<T>(q[0]),
            from_f64::<T>(q[1]),
            from_f64::<T>(q[2]),
        )
    })
    .expect("rigid resample keeps dims")
}

fn center(dims: crate::volgrid::Dims3) -> [f64; 3] {
    [
        (dims.nx - 1) as f64 / 2.0,
        (dims.ny - 1) as f64 / 2.0,
        (dims.nz - 1) as f64 / 2.0,
    ]
}

#[inline]
fn map_point(r: &[[f64; 3]; 3], c: [f64; 3], t: [f64; 3], p: [f64; 3]) -> [f64; 3] {
    let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
    [
        r[0][0] * d[0] + r[0][1] * d[1] + r[0][2] * d[2] + c[0] + t[0],
        r[1][0] * d[0] + r[1][1] * d[1] + r[1][2] * d[2] + c[1] + t[1],
        r[2][0] * d[0] + r[2][1] * d[1] + r[2][2] * d[2] + c[2] + t[2],
    ]
}

/// The displacement field the rigid map induces at each voxel,
/// `u(p) = R(p - c) + c + t - p`, so labels can follow the same transform
/// through the nearest-neighbor label warp.
pub fn rigid_induced_field<T: Scalar>(
    dims: crate::volgrid::Dims3,
    theta: &RigidParams,
) -> crate::warpfield::DisplacementField<T> {
    let r = theta.matrix();
    let c = center(dims);
    let t = theta.translation;
    crate::warpfield::DisplacementField::from_fn(dims, |x, y, z| {
        let p = [x as f64, y as f64, z as f64];
        let q = map_point(&r, c, t, p);
        [
            from_f64::<T>(q[0] - p[0]),
            from_f64::<T>(q[1] - p[1]),
            from_f64::<T>(q[2] - p[2]),
        ]
    })
}

/// Zero-normalized cross-correlation between two equal-length slices.
fn ncc(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

#[derive(Clone, Debug)]
pub struct RigidOpts {
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Initial simplex steps (voxels, degrees).
    pub step_t: f64,
    pub step_r: f64,
}

impl Default for RigidOpts {
    fn default() -> Self {
        Self {
            restarts: 3,
            max_iters: 300,
            seed: 0,
            step_t: 2.0,
            step_r: 2.0,
        }
    }
}

/// Standard Nelder-Mead (reflection 1, expansion 2, contraction 0.5,
/// shrink 0.5) minimizing `f`; returns the best vertex.
fn nelder_mead<F: FnMut(&[f64; 6]) -> f64>(
    mut f: F,
    x0: [f64; 6],
    steps: [f64; 6],
    max_iters: usize,
    ftol: f64,
) -> ([f64; 6], f64) {
    const N: usize = 6;
    let mut simplex: Vec<([f64; 6], f64)> = Vec::with_capacity(N + 1);
    let fx0 = f(&x0);
    simplex.push((x0, fx0));
    for i in 0..N {
        let mut x = x0;
        x[i] += steps[i];
        let fx = f(&x);
        simplex.push((x, fx));
    }
    for _ in 0..max_iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[N].1;
        if (worst - best).abs() < ftol {
            break;
        }
        let mut centroid = [0.0; 6];
        for v in &simplex[..N] {
            for d in 0..N {
                centroid[d] += v.0[d] / N as f64;
            }
        }
        let xw = simplex[N].0;
        let point = |alpha: f64| {
            let mut x = [0.0; 6];
            for d in 0..N {
                x[d] = centroid[d] + alpha * (centroid[d] - xw[d]);
            }
            x
        };
        let xr = point(1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = point(2.0);
            let fe = f(&xe);
            simplex[N] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[N - 1].1 {
            simplex[N] = (xr, fr);
        } else {
            // Outside contraction if the reflection helped at all, inside
            // contraction otherwise.
            let (xc, fc) = if fr < simplex[N].1 {
                let x = point(0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = point(-0.5);
                let v = f(&x);
                (x, v)
            };
            if fc < simplex[N].1.min(fr) {
                simplex[N] = (xc, fc);
            } else {
                let x0best = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    for d in 0..N {
                        v.0[d] = x0best[d] + 0.5 * (v.0[d] - x0best[d]);
                    }
                    v.1 = f(&v.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0]
}

/// Recover rigid parameters by maximizing DRR cross-correlation with
/// seeded multi-start Nelder-Mead. Objective history rows carry `1 - NCC`.
pub fn register_rigid<T: Scalar>(
    v_s: &VolumeGrid<T>,
    i_t: &Image2D<T>,
    opts: &RigidOpts,
) -> Result<(RigidParams, VolumeGrid<T>, SolveReport)> {
    let start = Instant::now();
    let dims = v_s.dims();
    if i_t.w() != dims.nx || i_t.h() != dims.nz {
        return Err(Error::DimsMismatch(format!(
            "target DRR {}x{} vs volume {dims}",
            i_t.w(),
            i_t.h()
        )));
    }
    let target: Vec<f64> = i_t.values().iter().map(|&v| crate::scalar::to_f64(v)).collect();
    let mut report = SolveReport::new(
        opts.seed,
        format!(
            "register_rigid restarts={} max_iters={}",
            opts.restarts, opts.max_iters
        ),
    );
    let mut evals: u64 = 0;
    let mut history: Vec<LossRow> = Vec::new();
    let mut objective = |x: &[f64; 6]| -> f64 {
        let theta = RigidParams::from_vec(x);
        let moved = apply_rigid(v_s, &theta);
        let proj = render_raw(&moved);
        let vals: Vec<f64> = proj
            .values
            .iter()
            .map(|&v| crate::scalar::to_f64(v))
            .collect();
        let obj = 1.0 - ncc(&vals, &target);
        history.push(LossRow {
            step: evals,
            total: obj,
            mse: 0.0,
            smooth: 0.0,
            dvf: 0.0,
        });
        evals += 1;
        obj
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let steps = [
        opts.step_t,
        opts.step_t,
        opts.step_t,
        opts.step_r,
        opts.step_r,
        opts.step_r,
    ];
    let mut best: Option<([f64; 6], f64)> = None;
    for restart in 0..opts.restarts.max(1) {
        let x0 = if restart == 0 {
            [0.0; 6]
        } else {
            let mut x = [0.0; 6];
            for (d, v) in x.iter_mut().enumerate() {
                let span = if d < 3 { 3.0 } else { 5.0 };
                *v = rng.random_range(-span..span);
            }
            x
        };
        let (x, fx) = nelder_mead(&mut objective, x0, steps, opts.max_iters, 1e-10);
        if best.as_ref().map_or(true, |(_, b)| fx < *b) {
            best = Some((x, fx));
        }
    }
    let (xb, fb) = best.expect("at least one restart");
    let theta = RigidParams::from_vec(&xb);
    let v_def = apply_rigid(v_s, &theta);
    report.history = history;
    report.final_metrics.push(("best_objective".to_string(), fb));
    report.final_metrics.push(("ncc".to_string(), 1.0 - fb));
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((theta, v_def, report))
}
