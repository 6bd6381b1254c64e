//! Synthetic thorax phantom with analytically known breathing motion.
//!
//! The reference anatomy `S(y)` is a composition of soft-edged ellipsoids
//! (body, two lungs, liver) in relative density units (`HU / 1000 + 1`, so
//! air is 0 and water 1). Phase `j` displaces
//! tissue by
//!
//! ```text
//! u_j(x) = w(x) · ( k1 · (v_j − v_ref) · d + k2 · (v'_j − v'_ref) · h )
//! ```
//!
//! with a Gaussian weight `w` centred on the liver, `k1 = peak / amplitude`,
//! motion direction `d` and hysteresis direction `h`. Phase images are
//! evaluated analytically as `I_j(x) = S(x + u_j(x))`, so
//! `I_j = I_ref ∘ (id + u_j)` holds without any resampling error.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::atlas::PatientMotionSet;
use crate::dataset::Dataset4D;
use crate::error::{Error, Result};
use crate::rvf;
use crate::grid::{map_voxels, DisplacementField, GridMeta, MaskVolume, ScalarVolume, Vec3};
use crate::surrogate::{simulate, SignalSimConfig, SurrogateSignal};

/// Structure names used for phantom masks.
pub const STRUCTURES: [&str; 4] = ["liver", "lung_right", "lung_left", "body"];

/// Ellipsoid in mm, centre relative to the grid centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: Vec3,
    pub radii: Vec3,
    /// Relative density (`HU / 1000 + 1`).
    pub intensity: f64,
}

impl Ellipsoid {
    fn rho(&self, q: &Vec3) -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            let d = (q[a] - self.center[a]) / self.radii[a];
            s += d * d;
        }
        s.sqrt()
    }

    fn mean_radius(&self) -> f64 {
        (self.radii[0] * self.radii[1] * self.radii[2]).cbrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    /// Isotropic voxel spacing (mm).
    pub spacing: f64,
    pub background: f64,
    pub body: Ellipsoid,
    pub liver: Ellipsoid,
    pub lung_right: Ellipsoid,
    pub lung_left: Ellipsoid,
    /// Amplitude of the smooth soft-tissue texture.
    pub texture_amplitude: f64,
    pub texture_wavelength: f64,
    /// Displacement at the liver centre at peak inhalation (mm).
    pub peak_displacement: f64,
    /// Unit motion direction (default inferior, `-z`).
    pub motion_direction: Vec3,
    /// Width (mm) of the Gaussian motion weight around the liver centre.
    pub motion_falloff: f64,
    /// Coefficient of `v'` (mm per ml/phase), applied along `hysteresis_direction`.
    pub hysteresis: f64,
    pub hysteresis_direction: Vec3,
    pub n_phases: usize,
    /// Peak spirometry volume (ml).
    pub signal_amplitude: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            dims: [64; 3],
            spacing: 2.0,
            background: 0.0,
            body: Ellipsoid {
                center: [0.0; 3],
                radii: [48.0, 40.0, 52.0],
                intensity: 1.04,
            },
            liver: Ellipsoid {
                center: [-6.0, 0.0, -22.0],
                radii: [28.0, 22.0, 16.0],
                intensity: 1.09,
            },
            lung_right: Ellipsoid {
                center: [-20.0, 0.0, 20.0],
                radii: [16.0, 20.0, 24.0],
                intensity: 0.2,
            },
            lung_left: Ellipsoid {
                center: [20.0, 0.0, 20.0],
                radii: [16.0, 20.0, 24.0],
                intensity: 0.2,
            },
            texture_amplitude: 0.06,
            texture_wavelength: 32.0,
            peak_displacement: 4.0,
            motion_direction: [0.0, 0.0, -1.0],
            motion_falloff: 40.0,
            hysteresis: 0.0,
            hysteresis_direction: [0.0, 1.0, 0.0],
            n_phases: 10,
            signal_amplitude: 1000.0,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn grid(&self) -> Result<GridMeta> {
        GridMeta::centered(self.dims, self.spacing)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()
            .map_err(|e| Error::InvalidConfig(format!("phantom grid: {e}")))?;
        if self.n_phases < 3 {
            return Err(Error::InvalidConfig("phantom needs at least 3 phases".into()));
        }
        if !(self.signal_amplitude > 0.0) {
            return Err(Error::InvalidConfig("signal_amplitude must be > 0".into()));
        }
        if !(self.motion_falloff > 0.0) || !(self.texture_wavelength > 0.0) {
            return Err(Error::InvalidConfig(
                "motion_falloff and texture_wavelength must be > 0".into(),
            ));
        }
        let extent = self.dims.iter().map(|&n| n as f64 * self.spacing).fold(f64::INFINITY, f64::min);
        if self.peak_displacement.abs() > 0.1 * extent {
            return Err(Error::InvalidConfig(format!(
                "peak displacement {} mm exceeds 10% of the grid extent",
                self.peak_displacement
            )));
        }
        for (name, d) in [
            ("motion_direction", self.motion_direction),
            ("hysteresis_direction", self.hysteresis_direction),
        ] {
            if ((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!("{name} must be a unit vector")));
            }
        }
        Ok(())
    }

    fn organs(&self) -> [(&'static str, &Ellipsoid); 4] {
        [
            ("liver", &self.liver),
            ("lung_right", &self.lung_right),
            ("lung_left", &self.lung_left),
            ("body", &self.body),
        ]
    }
}

/// Similarity map `y ↦ c + scale · (y − c) + translation` about the grid centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterPatient {
    pub translation: Vec3,
    pub scale: f64,
}

impl Default for InterPatient {
    fn default() -> Self {
        InterPatient {
            translation: [0.0; 3],
            scale: 1.0,
        }
    }
}

impl InterPatient {
    /// `self` applied after `inner`.
    fn then(&self, inner: &InterPatient) -> InterPatient {
        InterPatient {
            scale: self.scale * inner.scale,
            translation: [0, 1, 2].map(|a| self.scale * inner.translation[a] + self.translation[a]),
        }
    }

    /// Maps a world point back into reference anatomy coordinates (grid centre at 0).
    fn pull_back(&self, x: &Vec3, center: &Vec3) -> Vec3 {
        [0, 1, 2].map(|a| (x[a] - center[a] - self.translation[a]) / self.scale)
    }
}

/// A generated phantom patient together with its ground truth.
#[derive(Debug, Clone)]
pub struct PhantomTruth {
    pub config: PhantomConfig,
    pub anatomy: InterPatient,
    pub dataset: Dataset4D,
    /// Backward fields with `phase_j = warp_image(ref_image, true_fields[j])`.
    pub true_fields: Vec<DisplacementField>,
    /// Structure masks per phase.
    pub true_masks: Vec<BTreeMap<String, MaskVolume>>,
}

impl PhantomTruth {
    pub fn signal(&self) -> &SurrogateSignal {
        &self.dataset.signal
    }

    pub fn ref_phase(&self) -> usize {
        self.dataset.ref_phase_index
    }

    pub fn ref_image(&self) -> &ScalarVolume {
        &self.dataset.phases[self.dataset.ref_phase_index]
    }

    /// Phase with the largest spirometry volume.
    pub fn peak_phase(&self) -> usize {
        self.dataset.signal.peak_index()
    }
}

impl PhantomTruth {
    /// Motion set built from the ground-truth fields.
    pub fn true_motion_set(&self) -> PatientMotionSet {
        PatientMotionSet {
            patient_id: self.dataset.patient_id.clone(),
            ref_phase_index: self.dataset.ref_phase_index,
            phase_fields: self.true_fields.clone(),
            signal: self.dataset.signal.clone(),
            ref_image: self.ref_image().clone(),
            masks: self.dataset.masks.clone(),
        }
    }

    /// Writes the dataset plus `truth/` (phase fields, per-phase masks, parameters).
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.dataset.save(dir)?;
        let truth = dir.join(TRUTH_DIR);
        fs::create_dir_all(&truth).map_err(|e| Error::io(&truth, e))?;
        for (j, f) in self.true_fields.iter().enumerate() {
            rvf::write_field(truth.join(format!("field_{j:02}.rvf")), f)?;
            for (name, m) in &self.true_masks[j] {
                rvf::write_mask(truth.join(format!("mask_{name}_{j:02}.rvf")), m)?;
            }
        }
        let params = TruthParams {
            config: self.config.clone(),
            anatomy: self.anatomy,
            structures: STRUCTURES.iter().map(|s| s.to_string()).collect(),
        };
        let path = truth.join("phantom.json");
        let text = serde_json::to_string_pretty(&params).expect("params serialize");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Reads a directory written by [`PhantomTruth::save`].
    pub fn load(dir: &Path) -> Result<PhantomTruth> {
        let dataset = Dataset4D::load(dir)?;
        let truth = dir.join(TRUTH_DIR);
        let path = truth.join("phantom.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let params: TruthParams =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let n = dataset.n_phases();
        let true_fields = (0..n)
            .map(|j| rvf::read_field(truth.join(format!("field_{j:02}.rvf"))))
            .collect::<Result<Vec<_>>>()?;
        let mut true_masks = Vec::with_capacity(n);
        for j in 0..n {
            let mut m = BTreeMap::new();
            for name in &params.structures {
                m.insert(name.clone(), rvf::read_mask(truth.join(format!("mask_{name}_{j:02}.rvf")))?);
            }
            true_masks.push(m);
        }
        Ok(PhantomTruth {
            config: params.config,
            anatomy: params.anatomy,
            dataset,
            true_fields,
            true_masks,
        })
    }
}

pub const TRUTH_DIR: &str = "truth";

#[derive(Debug, Serialize, Deserialize)]
struct TruthParams {
    config: PhantomConfig,
    anatomy: InterPatient,
    structures: Vec<String>,
}

/// One member of a synthetic population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationMember {
    pub id: String,
    pub translation: Vec3,
    pub scale: f64,
    /// Overrides the base peak displacement (mm).
    pub peak_displacement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub base: PhantomConfig,
    pub members: Vec<PopulationMember>,
}

impl Default for PopulationConfig {
    /// Four patients with ±2 mm translations, ±10 % scale and 2–4 mm peaks.
    fn default() -> Self {
        let m = |id: &str, t: Vec3, scale: f64, peak: f64| PopulationMember {
            id: id.into(),
            translation: t,
            scale,
            peak_displacement: peak,
        };
        PopulationConfig {
            base: PhantomConfig::default(),
            members: vec![
                m("p0", [0.0, 0.0, 0.0], 1.0, 3.0),
                m("p1", [2.0, -2.0, 0.0], 1.1, 4.0),
                m("p2", [-2.0, 0.0, 2.0], 0.9, 2.0),
                m("p3", [0.0, 2.0, -2.0], 1.05, 2.5),
            ],
        }
    }
}

impl PopulationConfig {
    /// Same population on an `n³` grid covering the same physical box.
    pub fn at_resolution(mut self, n: usize) -> Self {
        let extent = self.base.dims[0] as f64 * self.base.spacing;
        self.base.dims = [n; 3];
        self.base.spacing = extent / n as f64;
        self
    }
}

/// Generates every member of `cfg`, in order.
pub fn generate_population(cfg: &PopulationConfig) -> Result<Vec<PhantomTruth>> {
    if cfg.members.is_empty() {
        return Err(Error::EmptyList("population members"));
    }
    cfg.members
        .iter()
        .map(|m| {
            let base = PhantomConfig {
                peak_displacement: m.peak_displacement,
                ..cfg.base.clone()
            };
            build(
                &base,
                InterPatient {
                    translation: m.translation,
                    scale: m.scale,
                },
                &m.id,
            )
        })
        .collect()
}

/// Generates patient `id` with the default anatomy placement.
pub fn generate(cfg: &PhantomConfig) -> Result<PhantomTruth> {
    build(cfg, InterPatient::default(), "phantom")
}

/// Same phantom with its anatomy (and motion) mapped through an extra similarity.
pub fn perturb_patient(truth: &PhantomTruth, perturbation: InterPatient, id: &str) -> Result<PhantomTruth> {
    build(&truth.config, perturbation.then(&truth.anatomy), id)
}

/// Generates a phantom with an explicit anatomy placement and patient id.
pub fn build(cfg: &PhantomConfig, anatomy: InterPatient, id: &str) -> Result<PhantomTruth> {
    cfg.validate()?;
    if !(anatomy.scale > 0.0) {
        return Err(Error::InvalidConfig("scale must be > 0".into()));
    }
    let meta = cfg.grid()?;
    check_inside(cfg, &anatomy, &meta)?;

    let signal = simulate(&SignalSimConfig {
        amp_range: (0.0, cfg.signal_amplitude),
        period_mean: cfg.n_phases as f64,
        period_jitter: 0.0,
        amp_jitter: 0.0,
        seed: cfg.seed,
        duration: cfg.n_phases as f64,
        dt: 1.0,
    })?;
    let ref_phase = 0;
    let k1 = cfg.peak_displacement / cfg.signal_amplitude;
    let center = meta.center();

    let mut phases = Vec::with_capacity(cfg.n_phases);
    let mut fields = Vec::with_capacity(cfg.n_phases);
    let mut masks = Vec::with_capacity(cfg.n_phases);
    for j in 0..cfg.n_phases {
        let dv = signal.v[j] - signal.v[ref_phase];
        let dvp = signal.v_prime[j] - signal.v_prime[ref_phase];
        let motion = [0, 1, 2]
            .map(|a| k1 * dv * cfg.motion_direction[a] + cfg.hysteresis * dvp * cfg.hysteresis_direction[a]);
        let still = j == ref_phase || motion == [0.0; 3];
        // displacement in reference-anatomy coordinates, then pushed to world units
        let displaced = |x: &Vec3| -> (Vec3, Vec3) {
            let y = anatomy.pull_back(x, &center);
            if still {
                return (y, [0.0; 3]);
            }
            let w = motion_weight(cfg, &y);
            let u_ref = motion.map(|m| w * m);
            (
                [y[0] + u_ref[0], y[1] + u_ref[1], y[2] + u_ref[2]],
                u_ref.map(|c| anatomy.scale * c),
            )
        };
        let samples: Vec<(f64, Vec3, [bool; 4])> = map_voxels(&meta, |_, x| {
            let (q, u) = displaced(&x);
            let inside = cfg.organs().map(|(_, e)| e.rho(&q) <= 1.0);
            (intensity(cfg, &q), u, inside)
        });
        phases.push(ScalarVolume {
            meta: meta.clone(),
            values: samples.iter().map(|s| s.0).collect(),
        });
        fields.push(DisplacementField {
            meta: meta.clone(),
            u: samples.iter().map(|s| s.1).collect(),
        });
        let mut m = BTreeMap::new();
        for (o, name) in STRUCTURES.iter().enumerate() {
            m.insert(
                name.to_string(),
                MaskVolume {
                    meta: meta.clone(),
                    labels: samples.iter().map(|s| s.2[o] as u8).collect(),
                },
            );
        }
        masks.push(m);
    }

    let dataset = Dataset4D {
        patient_id: id.to_string(),
        ref_phase_index: ref_phase,
        phases,
        signal,
        masks: masks[ref_phase].clone(),
    };
    Ok(PhantomTruth {
        config: cfg.clone(),
        anatomy,
        dataset,
        true_fields: fields,
        true_masks: masks,
    })
}

fn motion_weight(cfg: &PhantomConfig, y: &Vec3) -> f64 {
    let c = cfg.liver.center;
    let r2 = (y[0] - c[0]).powi(2) + (y[1] - c[1]).powi(2) + (y[2] - c[2]).powi(2);
    (-0.5 * r2 / (cfg.motion_falloff * cfg.motion_falloff)).exp()
}

/// Logistic edge with a 10–90 % rise over two voxels.
fn membership(cfg: &PhantomConfig, e: &Ellipsoid, q: &Vec3) -> f64 {
    let tau = 2.0 * cfg.spacing / 4.4;
    let signed = (1.0 - e.rho(q)) * e.mean_radius();
    1.0 / (1.0 + (-signed / tau).exp())
}

/// Reference anatomy intensity at anatomy coordinates `q`.
fn intensity(cfg: &PhantomConfig, q: &Vec3) -> f64 {
    let k = 2.0 * std::f64::consts::PI / cfg.texture_wavelength;
    let texture =
        cfg.texture_amplitude * (k * q[0]).sin() * (k * q[1] + 1.0).sin() * (k * q[2] + 2.0).sin();
    let mut value = cfg.background;
    let layers = [
        (&cfg.body, texture),
        (&cfg.lung_right, 0.25 * texture),
        (&cfg.lung_left, 0.25 * texture),
        (&cfg.liver, texture),
    ];
    for (organ, tex) in layers {
        let m = membership(cfg, organ, q);
        value += m * (organ.intensity + tex - value);
    }
    value
}

fn check_inside(cfg: &PhantomConfig, anatomy: &InterPatient, meta: &GridMeta) -> Result<()> {
    let center = meta.center();
    let margin = anatomy.scale * cfg.peak_displacement.abs();
    for a in 0..3 {
        let lo_grid = meta.origin[a];
        let hi_grid = meta.origin[a] + (meta.dims[a] - 1) as f64 * meta.spacing[a];
        for sign in [-1.0, 1.0] {
            let y = cfg.body.center[a] + sign * cfg.body.radii[a];
            let x = center[a] + anatomy.scale * y + anatomy.translation[a];
            if x - margin < lo_grid || x + margin > hi_grid {
                return Err(Error::OutOfGrid(format!(
                    "body reaches {x:.1} mm on axis {a}, grid spans [{lo_grid:.1}, {hi_grid:.1}]"
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::warp_image;
    use crate::grid::norm3;

    fn small() -> PhantomConfig {
        PhantomConfig {
            dims: [32; 3],
            spacing: 4.0,
            ..Default::default()
        }
    }

    #[test]
    fn zero_motion_gives_identical_phases() {
        let cfg = PhantomConfig {
            peak_displacement: 0.0,
            ..small()
        };
        let t = generate(&cfg).unwrap();
        for j in 1..cfg.n_phases {
            assert_eq!(t.dataset.phases[j], t.dataset.phases[0]);
            assert_eq!(t.true_fields[j].max_norm(), 0.0);
        }
    }

    #[test]
    fn no_hysteresis_means_equal_volume_phases_match() {
        let t = generate(&small()).unwrap();
        // sin² signal over 10 phases: v(3) == v(7)
        assert!((t.signal().v[3] - t.signal().v[7]).abs() < 1e-9);
        let d = t.dataset.phases[3].mean_abs_diff(&t.dataset.phases[7]).unwrap();
        assert!(d < 1e-9, "{d}");
    }

    #[test]
    fn peak_displacement_at_liver_centre() {
        let cfg = PhantomConfig::default();
        let t = generate(&cfg).unwrap();
        let peak = t.peak_phase();
        assert_eq!(peak, 5);
        assert!((t.signal().v[peak] - 1000.0).abs() < 1e-9);
        let meta = cfg.grid().unwrap();
        let c = meta.center();
        // liver centre (-6, 0, -22) lies on a voxel of the 2 mm grid centred at -1 offset? sample analytically
        let x = [c[0] - 6.0, c[1], c[2] - 22.0];
        let u = t.true_fields[peak].sample(&x);
        assert!((norm3(&u) - 4.0).abs() < 0.02, "{u:?}");
        assert!(t.true_fields[0].max_norm() == 0.0);
    }

    #[test]
    fn phases_match_warped_reference() {
        let t = generate(&PhantomConfig::default()).unwrap();
        let (lo, hi) = t.ref_image().min_max();
        for j in [2, 5, 8] {
            let w = warp_image(t.ref_image(), &t.true_fields[j]).unwrap();
            let err = w.mean_abs_diff(&t.dataset.phases[j]).unwrap();
            assert!(err < 1e-3 * (hi - lo), "phase {j}: {err}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.true_fields, b.true_fields);
    }

    #[test]
    fn identity_perturbation_is_a_no_op() {
        let t = generate(&small()).unwrap();
        let p = perturb_patient(&t, InterPatient::default(), "phantom").unwrap();
        assert_eq!(p.dataset, t.dataset);
        assert_eq!(p.true_fields, t.true_fields);
    }

    #[test]
    fn translation_keeps_and_scale_multiplies_displacements() {
        let t = generate(&small()).unwrap();
        let peak = t.peak_phase();
        let base = t.true_fields[peak].max_norm();
        let moved = perturb_patient(
            &t,
            InterPatient {
                translation: [4.0, -4.0, 0.0],
                scale: 1.0,
            },
            "p1",
        )
        .unwrap();
        assert!((moved.true_fields[peak].max_norm() - base).abs() < 1e-9);
        let meta = t.config.grid().unwrap();
        // the translated field equals the original one sampled 4 mm back
        let c = meta.center();
        let x = [c[0] - 6.0 + 4.0, c[1] - 4.0, c[2] - 22.0];
        let y = [c[0] - 6.0, c[1], c[2] - 22.0];
        let d = crate::grid::sub3(&moved.true_fields[peak].sample(&x), &t.true_fields[peak].sample(&y));
        assert!(norm3(&d) < 1e-9);

        let scaled = perturb_patient(
            &t,
            InterPatient {
                translation: [0.0; 3],
                scale: 1.1,
            },
            "p2",
        )
        .unwrap();
        // peak of w is 1 at the (scaled) liver centre, which lands on a voxel here
        let xs = [c[0] - 6.6, c[1], c[2] - 24.2];
        let u = scaled.true_fields[peak].sample(&xs);
        let u0 = t.true_fields[peak].sample(&y);
        assert!((norm3(&u) - 1.1 * norm3(&u0)).abs() < 0.05, "{u:?} vs {u0:?}");
    }

    #[test]
    fn out_of_grid_perturbation_fails() {
        let t = generate(&small()).unwrap();
        let err = perturb_patient(
            &t,
            InterPatient {
                translation: [30.0, 0.0, 0.0],
                scale: 1.0,
            },
            "far",
        )
        .unwrap_err();
        assert!(matches!(err, Error::OutOfGrid(_)));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = PhantomConfig {
            peak_displacement: 20.0,
            ..small()
        };
        assert!(matches!(generate(&cfg), Err(Error::InvalidConfig(_))));
        let cfg = PhantomConfig {
            n_phases: 2,
            ..small()
        };
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let cfg = PhantomConfig {
            dims: [12; 3],
            spacing: 10.0,
            n_phases: 3,
            peak_displacement: 3.0,
            ..Default::default()
        };
        let t = generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        t.save(dir.path()).unwrap();
        let back = PhantomTruth::load(dir.path()).unwrap();
        assert_eq!(back.config, t.config);
        assert_eq!(back.true_masks, t.true_masks);
        assert!(back.true_fields[1].max_diff(&t.true_fields[1]).unwrap() < 1e-5);
    }

    #[test]
    fn default_population_fits_the_grid() {
        let pop = generate_population(&PopulationConfig::default().at_resolution(32)).unwrap();
        assert_eq!(pop.len(), 4);
        let peaks: Vec<f64> = pop
            .iter()
            .map(|t| t.true_fields[t.peak_phase()].max_norm())
            .collect();
        // scale multiplies the peak
        assert!((peaks[1] - 4.4).abs() < 0.1, "{peaks:?}");
        assert!((peaks[2] - 1.8).abs() < 0.1, "{peaks:?}");
    }

    #[test]
    fn masks_follow_the_motion() {
        let t = generate(&small()).unwrap();
        let peak = t.peak_phase();
        let liver0 = &t.true_masks[0]["liver"];
        let liver5 = &t.true_masks[peak]["liver"];
        assert!(liver0.count() > 100);
        assert_ne!(liver0, liver5);
        assert_eq!(&t.dataset.masks["liver"], liver0);
    }
}
