//! Analytic abdominal phantom with a 10-phase respiratory cycle.
//!
//! The phantom stands in for clinical 4D-CT: an ellipsoidal body containing
//! lung above a diaphragm dome, a liver tucked under the dome, a stomach with
//! a gas pocket, and a spine cylinder. Breathing follows
//! `s(t) = (1 - cos(2 pi t / 100)) / 2` with t in {0, 10, ..., 90}, phase 0
//! being end-inhalation and phase 50 end-exhalation. Displacement weights are
//! Gaussian around the diaphragm dome apex, so the field is smooth everywhere
//! and exactly known: every frame is constructed by warping frame 0 with its
//! own ground-truth field, which makes the frames and fields consistent
//! bitwise by construction.

use crate::error::{Error, Result};
use crate::volgrid::{
    Dims3, LabelVolume, VolumeGrid, LABEL_BACKGROUND, LABEL_LIVER, LABEL_STOMACH,
};
use crate::warpfield::{warp_labels, warp_volume, DisplacementField};

/// Axis-aligned ellipsoid in voxel coordinates.
#[derive(Clone, Copy, Debug)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi: [f64; 3],
}

impl Ellipsoid {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let mut s = 0.0;
        for a in 0..3 {
            let d = (p[a] - self.center[a]) / self.semi[a];
            s += d * d;
        }
        s <= 1.0
    }

    /// 4/3 pi abc.
    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.semi[0] * self.semi[1] * self.semi[2]
    }

    /// Sample the surface on a lat/long grid.
    fn surface_points(&self, steps: usize) -> Vec<[f64; 3]> {
        let mut pts = Vec::with_capacity(steps * steps);
        for i in 0..steps {
            let theta = std::f64::consts::PI * (i as f64 + 0.5) / steps as f64;
            for j in 0..steps {
                let phi = 2.0 * std::f64::consts::PI * j as f64 / steps as f64;
                pts.push([
                    self.center[0] + self.semi[0] * theta.sin() * phi.cos(),
                    self.center[1] + self.semi[1] * theta.sin() * phi.sin(),
                    self.center[2] + self.semi[2] * theta.cos(),
                ]);
            }
        }
        pts
    }
}

/// Analytic anatomy of the phantom. All coordinates are voxels on an
/// isotropic n-cube; HU values must stay within [-1000, 2000].
///
/// Axis conventions: x left-right, y anteroposterior (y = 0 anterior),
/// z inferior-superior (z = 0 inferior).
#[derive(Clone, Debug)]
pub struct PhantomSpec {
    pub n: usize,
    pub body: Ellipsoid,
    pub body_hu: f32,
    pub liver: Ellipsoid,
    pub liver_hu: f32,
    pub stomach: Ellipsoid,
    pub stomach_hu: f32,
    pub gas: Ellipsoid,
    pub gas_hu: f32,
    /// Spine cylinder along z; the region is the intersection with the body.
    pub spine_center_xy: [f64; 2],
    pub spine_radius: f64,
    pub spine_z: [f64; 2],
    pub spine_hu: f32,
    /// Diaphragm dome surface z(x, y) = base + bulge * gaussian(r; sigma);
    /// lung is the part of the body above it.
    pub dome_center_xy: [f64; 2],
    pub dome_base_z: f64,
    pub dome_bulge: f64,
    pub dome_sigma: f64,
    pub lung_hu: f32,
    pub air_hu: f32,
}

impl PhantomSpec {
    /// Desk-scale defaults at grid size `n`. Shape parameters scale with the
    /// index extent n-1 so the anatomy keeps its margins at every size.
    pub fn default_for_size(n: usize) -> Self {
        let s = (n - 1) as f64;
        Self {
            n,
            body: Ellipsoid {
                center: [0.50 * s, 0.52 * s, 0.48 * s],
                semi: [0.42 * s, 0.36 * s, 0.46 * s],
            },
            body_hu: 40.0,
            liver: Ellipsoid {
                center: [0.63 * s, 0.48 * s, 0.52 * s],
                semi: [0.16 * s, 0.15 * s, 0.13 * s],
            },
            liver_hu: 60.0,
            stomach: Ellipsoid {
                center: [0.36 * s, 0.46 * s, 0.48 * s],
                semi: [0.13 * s, 0.12 * s, 0.11 * s],
            },
            stomach_hu: 30.0,
            gas: Ellipsoid {
                center: [0.36 * s, 0.44 * s, 0.52 * s],
                semi: [0.065 * s, 0.055 * s, 0.05 * s],
            },
            gas_hu: -800.0,
            spine_center_xy: [0.50 * s, 0.78 * s],
            spine_radius: 0.055 * s,
            spine_z: [0.16 * s, 0.78 * s],
            spine_hu: 400.0,
            dome_center_xy: [0.50 * s, 0.52 * s],
            dome_base_z: 0.55 * s,
            dome_bulge: 0.12 * s,
            dome_sigma: 0.22 * s,
            lung_hu: -800.0,
            air_hu: -1000.0,
        }
    }

    /// Height of the diaphragm dome surface above (x, y).
    pub fn dome_z(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.dome_center_xy[0];
        let dy = y - self.dome_center_xy[1];
        self.dome_base_z
            + self.dome_bulge * (-(dx * dx + dy * dy) / (2.0 * self.dome_sigma.powi(2))).exp()
    }

    /// The dome apex: peak of the diaphragm, weight-field center.
    pub fn dome_apex(&self) -> [f64; 3] {
        [
            self.dome_center_xy[0],
            self.dome_center_xy[1],
            self.dome_base_z + self.dome_bulge,
        ]
    }

    /// HU and label at a voxel center; innermost shape wins.
    fn sample(&self, p: [f64; 3]) -> (f32, u8) {
        if !self.body.contains(p) {
            return (self.air_hu, LABEL_BACKGROUND);
        }
        if self.gas.contains(p) {
            // Gas pocket counts as part of the stomach region.
            return (self.gas_hu, LABEL_STOMACH);
        }
        if self.stomach.contains(p) {
            return (self.stomach_hu, LABEL_STOMACH);
        }
        if self.liver.contains(p) {
            return (self.liver_hu, LABEL_LIVER);
        }
        let dxy = [
            p[0] - self.spine_center_xy[0],
            p[1] - self.spine_center_xy[1],
        ];
        if dxy[0] * dxy[0] + dxy[1] * dxy[1] <= self.spine_radius.powi(2)
            && p[2] >= self.spine_z[0]
            && p[2] <= self.spine_z[1]
        {
            return (self.spine_hu, LABEL_BACKGROUND);
        }
        if p[2] > self.dome_z(p[0], p[1]) {
            return (self.lung_hu, LABEL_BACKGROUND);
        }
        (self.body_hu, LABEL_BACKGROUND)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 8 {
            return Err(Error::Validation(format!("grid size {} too small", self.n)));
        }
        let hi = (self.n - 1) as f64;
        for a in 0..3 {
            if self.body.center[a] - self.body.semi[a] < 0.0
                || self.body.center[a] + self.body.semi[a] > hi
            {
                return Err(Error::Validation(
                    "body ellipsoid leaves the grid".to_string(),
                ));
            }
        }
        for (name, inner, outer) in [
            ("liver", &self.liver, &self.body),
            ("stomach", &self.stomach, &self.body),
            ("gas", &self.gas, &self.stomach),
        ] {
            for p in inner.surface_points(24) {
                if !outer.contains(p) {
                    return Err(Error::Validation(format!(
                        "{name} surface leaves its containing shape at {p:?}"
                    )));
                }
            }
        }
        for hu in [
            self.body_hu,
            self.liver_hu,
            self.stomach_hu,
            self.gas_hu,
            self.spine_hu,
            self.lung_hu,
            self.air_hu,
        ] {
            if !(-1000.0..=2000.0).contains(&hu) {
                return Err(Error::Validation(format!("HU {hu} outside [-1000, 2000]")));
            }
        }
        Ok(())
    }
}

/// Breathing motion: amplitudes in voxels, smooth Gaussian weight fields
/// centered on the diaphragm dome apex.
///
/// The superior-inferior weight peaks at the apex and decays to near zero at
/// the inferior boundary; the anteroposterior weight peaks at the anterior
/// body wall. Both are infinitely differentiable in p.
#[derive(Clone, Debug)]
pub struct RespiratoryModel {
    pub a_si: f64,
    pub a_ap: f64,
    /// Weight-field center (diaphragm dome apex).
    pub apex: [f64; 3],
    pub sigma_si_z: f64,
    pub sigma_si_r: f64,
    /// Anterior wall y and falloff for the AP term.
    pub anterior_y: f64,
    pub sigma_ap_y: f64,
    pub sigma_ap_z: f64,
}

impl RespiratoryModel {
    /// Defaults matched to a phantom: 6 voxel SI / 2 voxel AP amplitude at
    /// n = 64, scaled linearly with grid size.
    pub fn default_for(spec: &PhantomSpec) -> Self {
        let s = (spec.n - 1) as f64;
        Self {
            a_si: 6.0 * s / 63.0,
            a_ap: 2.0 * s / 63.0,
            apex: spec.dome_apex(),
            sigma_si_z: 0.26 * s,
            sigma_si_r: 0.50 * s,
            anterior_y: spec.body.center[1] - spec.body.semi[1],
            sigma_ap_y: 0.30 * s,
            sigma_ap_z: 0.35 * s,
        }
    }

    /// Phase weight `s(t) = (1 - cos(2 pi t / 100)) / 2`, evaluated through
    /// min(t, 100 - t) so that s(t) and s(100 - t) are equal bitwise.
    pub fn phase_weight(t: u32) -> f64 {
        debug_assert!(t < 100 && t % 10 == 0);
        let folded = t.min(100 - t) as f64;
        (1.0 - (std::f64::consts::PI * folded / 50.0).cos()) / 2.0
    }

    /// Superior-inferior weight w(p): 1 at the apex, Gaussian falloff.
    pub fn weight_si(&self, p: [f64; 3]) -> f64 {
        let dz = p[2] - self.apex[2];
        let dx = p[0] - self.apex[0];
        let dy = p[1] - self.apex[1];
        (-dz * dz / (2.0 * self.sigma_si_z.powi(2))).exp()
            * (-(dx * dx + dy * dy) / (2.0 * self.sigma_si_r.powi(2))).exp()
    }

    /// Anteroposterior weight, peaking at the anterior wall.
    pub fn weight_ap(&self, p: [f64; 3]) -> f64 {
        let dy = p[1] - self.anterior_y;
        let dz = p[2] - self.apex[2];
        (-dy * dy / (2.0 * self.sigma_ap_y.powi(2))).exp()
            * (-dz * dz / (2.0 * self.sigma_ap_z.powi(2))).exp()
    }

    /// Ground-truth displacement (voxels) at phase t and point p.
    ///
    /// Pull-back sampling offsets: negative SI/AP components make anatomy
    /// appear shifted superior/posterior as exhalation progresses.
    pub fn displacement(&self, t: u32, p: [f64; 3]) -> [f64; 3] {
        let s = Self::phase_weight(t);
        [
            0.0,
            -s * self.a_ap * self.weight_ap(p),
            -s * self.a_si * self.weight_si(p),
        ]
    }

    /// Max over the grid of the infinity-norm of the displacement Jacobian
    /// at full phase weight. Below 1 the map p -> p + u(p) is injective.
    pub fn max_jacobian_perturbation(&self, n: usize) -> f64 {
        let mut worst = 0.0f64;
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let p = [x as f64, y as f64, z as f64];
                    let w = self.weight_si(p);
                    let dz = p[2] - self.apex[2];
                    let dx = p[0] - self.apex[0];
                    let dy = p[1] - self.apex[1];
                    let si_row = self.a_si
                        * w
                        * ((dx.abs() + dy.abs()) / self.sigma_si_r.powi(2)
                            + dz.abs() / self.sigma_si_z.powi(2));
                    let wa = self.weight_ap(p);
                    let dya = p[1] - self.anterior_y;
                    let ap_row = self.a_ap
                        * wa
                        * (dya.abs() / self.sigma_ap_y.powi(2)
                            + dz.abs() / self.sigma_ap_z.powi(2));
                    worst = worst.max(si_row).max(ap_row);
                }
            }
        }
        worst
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.a_si < 0.0 || self.a_ap < 0.0 {
            return Err(Error::Validation("amplitudes must be >= 0".to_string()));
        }
        let j = self.max_jacobian_perturbation(n);
        if j >= 1.0 {
            return Err(Error::Validation(format!(
                "displacement Jacobian perturbation {j:.3} >= 1; the warp would not be injective"
            )));
        }
        Ok(())
    }
}

/// One respiratory phase: volume, labels and the exact field from phase 0.
#[derive(Clone, Debug)]
pub struct PhantomFrame {
    pub t: u32,
    pub volume: VolumeGrid<f32>,
    pub labels: LabelVolume,
    pub u_gt: DisplacementField<f32>,
}

/// Rasterize the reference anatomy (phase 0) and its organ labels.
pub fn build_reference(spec: &PhantomSpec) -> Result<(VolumeGrid<f32>, LabelVolume)> {
    spec.validate()?;
    let dims = Dims3::cube(spec.n);
    let volume = VolumeGrid::from_fn(dims, [1.0; 3], |x, y, z| {
        spec.sample([x as f64, y as f64, z as f64]).0
    })?;
    let labels = LabelVolume::from_fn(dims, |x, y, z| {
        spec.sample([x as f64, y as f64, z as f64]).1
    })?;
    Ok((volume, labels))
}

/// Sample the model's field on the grid at phase t.
pub fn sample_field(model: &RespiratoryModel, n: usize, t: u32) -> DisplacementField<f32> {
    DisplacementField::from_fn(Dims3::cube(n), |x, y, z| {
        let u = model.displacement(t, [x as f64, y as f64, z as f64]);
        [u[0] as f32, u[1] as f32, u[2] as f32]
    })
}

/// Generate the 10-phase sequence. Each frame's volume and labels are the
/// reference warped by the frame's own ground-truth field, so
/// `warp(frame_0, u_gt(t)) == frame_t` holds bitwise.
pub fn generate_4dct(spec: &PhantomSpec, model: &RespiratoryModel) -> Result<Vec<PhantomFrame>> {
    spec.validate()?;
    model.validate(spec.n)?;
    let (reference, ref_labels) = build_reference(spec)?;
    let mut frames = Vec::with_capacity(10);
    for phase in 0..10u32 {
        let t = phase * 10;
        let u_gt = sample_field(model, spec.n, t);
        let volume = warp_volume(&reference, &u_gt)?;
        let labels = warp_labels(&ref_labels, &u_gt)?;
        frames.push(PhantomFrame {
            t,
            volume,
            labels,
            u_gt,
        });
    }
    Ok(frames)
}
