//! Quantitative evaluation: MAE over CT values and DSC over organ regions,
//! with mean +/- standard deviation aggregation across cases and a plain-text
//! table of the conventional layout (rows MAE / liver DSC / stomach DSC,
//! one column per method).

use crate::error::{Error, Result};
use crate::numeric::det_sum;
use crate::scalar::{to_f64, Scalar};
use crate::volgrid::{LabelVolume, VolumeGrid, LABEL_LIVER, LABEL_STOMACH};

/// Mean absolute error over all voxels, in the volumes' intensity units (HU).
pub fn mae<T: Scalar>(v_gt: &VolumeGrid<T>, v_def: &VolumeGrid<T>) -> Result<T> {
    v_gt.same_dims(v_def)?;
    let terms: Vec<T> = v_gt
        .values()
        .iter()
        .zip(v_def.values())
        .map(|(&a, &b)| (a - b).abs())
        .collect();
    Ok(det_sum(&terms) / T::from(terms.len()).unwrap())
}

/// MAE restricted to voxels where `mask` is true (body-mask variant).
pub fn mae_masked<T: Scalar>(
    v_gt: &VolumeGrid<T>,
    v_def: &VolumeGrid<T>,
    mask: &[bool],
) -> Result<T> {
    v_gt.same_dims(v_def)?;
    if mask.len() != v_gt.dims().count() {
        return Err(Error::SizeMismatch {
            expected: v_gt.dims().count(),
            found: mask.len(),
        });
    }
    let terms: Vec<T> = v_gt
        .values()
        .iter()
        .zip(v_def.values())
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&a, &b), _)| (a - b).abs())
        .collect();
    if terms.is_empty() {
        return Ok(T::zero());
    }
    Ok(det_sum(&terms) / T::from(terms.len()).unwrap())
}

/// Simple body mask: voxels above a HU threshold (default -500 separates
/// tissue from air in this phantom's intensity range).
pub fn body_mask<T: Scalar>(v: &VolumeGrid<T>, threshold_hu: f64) -> Vec<bool> {
    v.values()
        .iter()
        .map(|&x| to_f64(x) > threshold_hu)
        .collect()
}

/// Dice similarity coefficient for one organ label: 2|A n B| / (|A| + |B|),
/// defined as 1 when both regions are empty.
pub fn dsc(a: &LabelVolume, b: &LabelVolume, organ: u8) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimsMismatch(format!("{} vs {}", a.dims(), b.dims())));
    }
    let mut na = 0usize;
    let mut nb = 0usize;
    let mut inter = 0usize;
    for (&la, &lb) in a.labels().iter().zip(b.labels()) {
        let ia = la == organ;
        let ib = lb == organ;
        na += ia as usize;
        nb += ib as usize;
        inter += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Metrics of one registered case.
#[derive(Clone, Copy, Debug)]
pub struct CaseEval {
    pub mae_hu: f64,
    pub dsc_liver: f64,
    pub dsc_stomach: f64,
}

/// MAE + per-organ DSC for a single case; `masked` switches MAE to the
/// body-masked variant.
pub fn evaluate_case(
    v_gt: &VolumeGrid<f32>,
    labels_gt: &LabelVolume,
    v_def: &VolumeGrid<f32>,
    labels_def: &LabelVolume,
    masked: bool,
) -> Result<CaseEval> {
    let mae_hu = if masked {
        let mask = body_mask(v_gt, -500.0);
        to_f64(mae_masked(v_gt, v_def, &mask)?)
    } else {
        to_f64(mae(v_gt, v_def)?)
    };
    Ok(CaseEval {
        mae_hu,
        dsc_liver: dsc(labels_gt, labels_def, LABEL_LIVER)?,
        dsc_stomach: dsc(labels_gt, labels_def, LABEL_STOMACH)?,
    })
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

fn mean_sd(xs: impl Iterator<Item = f64> + Clone) -> MeanSd {
    let n = xs.clone().count().max(1) as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    MeanSd {
        mean,
        sd: var.sqrt(),
    }
}

/// One method's aggregated results over a set of cases.
#[derive(Clone, Debug)]
pub struct MethodEval {
    pub name: String,
    pub cases: Vec<CaseEval>,
}

impl MethodEval {
    pub fn mae(&self) -> MeanSd {
        mean_sd(self.cases.iter().map(|c| c.mae_hu))
    }
    pub fn dsc_liver(&self) -> MeanSd {
        mean_sd(self.cases.iter().map(|c| c.dsc_liver))
    }
    pub fn dsc_stomach(&self) -> MeanSd {
        mean_sd(self.cases.iter().map(|c| c.dsc_stomach))
    }
}

/// Full evaluation report: per-case breakdown plus aggregation, one column
/// per method.
#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub methods: Vec<MethodEval>,
}

impl EvalReport {
    pub fn push(&mut self, name: impl Into<String>, cases: Vec<CaseEval>) {
        self.methods.push(MethodEval {
            name: name.into(),
            cases,
        });
    }

    /// Aligned plain-text table; DSC reported in percent.
    pub fn format_table(&self) -> String {
        let col = 18usize;
        let mut out = String::new();
        out.push_str(&format!("{:<18}", ""));
        for m in &self.methods {
            out.push_str(&format!("{:<col$}", m.name));
        }
        out.push('\n');
        let fmt = |s: MeanSd, scale: f64, prec: usize| {
            format!("{:.prec$}+-{:.prec$}", s.mean * scale, s.sd * scale)
        };
        for (label, field, scale, prec) in [
            ("MAE", 0usize, 1.0, 1usize),
            ("liver DSC [%]", 1, 100.0, 1),
            ("stomach DSC [%]", 2, 100.0, 1),
        ] {
            out.push_str(&format!("{label:<18}"));
            for m in &self.methods {
                let s = match field {
                    0 => m.mae(),
                    1 => m.dsc_liver(),
                    _ => m.dsc_stomach(),
                };
                out.push_str(&format!("{:<col$}", fmt(s, scale, prec)));
            }
            out.push('\n');
        }
        out
    }

    /// CSV with one row per method.
    pub fn format_csv(&self) -> String {
        let mut out = String::from(
            "method,mae_mean,mae_sd,liver_dsc_mean,liver_dsc_sd,stomach_dsc_mean,stomach_dsc_sd\n",
        );
        for m in &self.methods {
            let (a, b, c) = (m.mae(), m.dsc_liver(), m.dsc_stomach());
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                m.name, a.mean, a.sd, b.mean, b.sd, c.mean, c.sd
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::Dims3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mae_zero_on_identical_and_offset_is_exact() {
        let d = Dims3::cube(3);
        let a = VolumeGrid::constant(d, [1.0; 3], 100.0f32).unwrap();
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        let b = VolumeGrid::constant(d, [1.0; 3], 110.0f32).unwrap();
        assert!((mae(&a, &b).unwrap() - 10.0).abs() < 1e-4);
    }

    #[test]
    fn mae_matches_brute_force_on_random_volumes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let d = Dims3::cube(4);
            let mk = |rng: &mut ChaCha8Rng| {
                let values = (0..d.count())
                    .map(|_| rng.random_range(-1000.0f32..1000.0))
                    .collect();
                VolumeGrid::new(d, [1.0; 3], values).unwrap()
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let got = mae(&a, &b).unwrap() as f64;
            let mut expect = 0.0f64;
            for (x, y) in a.values().iter().zip(b.values()) {
                expect += (x - y).abs() as f64;
            }
            expect /= d.count() as f64;
            assert!((got - expect).abs() / expect.max(1e-9) < 1e-6);
        }
    }

    #[test]
    fn dsc_identical_disjoint_and_empty() {
        let d = Dims3::cube(4);
        let a = LabelVolume::from_fn(d, |x, _, _| if x < 2 { 1 } else { 0 }).unwrap();
        assert_eq!(dsc(&a, &a, 1).unwrap(), 1.0);
        let b = LabelVolume::from_fn(d, |x, _, _| if x >= 2 { 1 } else { 0 }).unwrap();
        assert_eq!(dsc(&a, &b, 1).unwrap(), 0.0);
        // Label 2 appears in neither: defined as 1.
        assert_eq!(dsc(&a, &b, 2).unwrap(), 1.0);
    }

    #[test]
    fn dsc_half_overlap_is_exactly_half() {
        // Two 4x4x4 cubes overlapping in a 4x4x2 slab: 2*32/(64+64) = 0.5.
        let d = Dims3::new(4, 4, 8);
        let a = LabelVolume::from_fn(d, |_, _, z| if z < 4 { 1 } else { 0 }).unwrap();
        let b = LabelVolume::from_fn(d, |_, _, z| if (2..6).contains(&z) { 1 } else { 0 }).unwrap();
        assert_eq!(dsc(&a, &b, 1).unwrap(), 0.5);
    }

    #[test]
    fn dsc_matches_brute_force_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let d = Dims3::cube(4);
            let mk = |rng: &mut ChaCha8Rng| {
                LabelVolume::new(
                    d,
                    (0..d.count()).map(|_| rng.random_range(0..3u8)).collect(),
                )
                .unwrap()
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            for organ in [1u8, 2] {
                let got = dsc(&a, &b, organ).unwrap();
                let na = a.labels().iter().filter(|&&l| l == organ).count();
                let nb = b.labels().iter().filter(|&&l| l == organ).count();
                let inter = a
                    .labels()
                    .iter()
                    .zip(b.labels())
                    .filter(|(&x, &y)| x == organ && y == organ)
                    .count();
                let expect = if na + nb == 0 {
                    1.0
                } else {
                    2.0 * inter as f64 / (na + nb) as f64
                };
                assert!((got - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dsc_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Dims3::cube(5);
        let mk = |rng: &mut ChaCha8Rng| {
            LabelVolume::new(
                d,
                (0..d.count()).map(|_| rng.random_range(0..3u8)).collect(),
            )
            .unwrap()
        };
        for _ in 0..10 {
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            assert_eq!(dsc(&a, &b, 1).unwrap(), dsc(&b, &a, 1).unwrap());
        }
    }

    #[test]
    fn mae_triangle_sanity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = Dims3::cube(4);
        let mk = |rng: &mut ChaCha8Rng| {
            let values = (0..d.count())
                .map(|_| rng.random_range(-500.0f32..500.0))
                .collect();
            VolumeGrid::new(d, [1.0; 3], values).unwrap()
        };
        for _ in 0..10 {
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let c = mk(&mut rng);
            let ac = mae(&a, &c).unwrap();
            let ab = mae(&a, &b).unwrap();
            let bc = mae(&b, &c).unwrap();
            assert!(ac <= ab + bc + 1e-4);
        }
    }

    #[test]
    fn perfect_reconstruction_scores_perfectly() {
        let d = Dims3::cube(4);
        let v = VolumeGrid::constant(d, [1.0; 3], 50.0f32).unwrap();
        let l = LabelVolume::from_fn(d, |x, _, _| if x == 0 { 1 } else { 2 }).unwrap();
        let e = evaluate_case(&v, &l, &v, &l, false).unwrap();
        assert_eq!(e.mae_hu, 0.0);
        assert_eq!(e.dsc_liver, 1.0);
        assert_eq!(e.dsc_stomach, 1.0);
    }

    #[test]
    fn table_has_expected_rows_and_columns() {
        let mut report = EvalReport::default();
        let case = CaseEval {
            mae_hu: 12.5,
            dsc_liver: 0.85,
            dsc_stomach: 0.7,
        };
        report.push("Initial", vec![case]);
        report.push("Proposed", vec![case, case]);
        let table = report.format_table();
        assert!(table.contains("Initial"));
        assert!(table.contains("Proposed"));
        assert!(table.contains("MAE"));
        assert!(table.contains("liver DSC [%]"));
        assert!(table.contains("stomach DSC [%]"));
        assert!(table.contains("85.0"));
    }
}
