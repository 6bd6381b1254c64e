//! wasm-bindgen exports for the static page in `www/`.

use respmodel::field::{invert_field, INVERT_MAX_ITER, INVERT_TOL};
use respmodel::phantom::{generate, PhantomConfig};
use respmodel::surrogate::{simulate, SignalSimConfig};
use respmodel::{warp_image, DisplacementField, GridMeta, MotionModel, ScalarVolume};
use wasm_bindgen::prelude::*;

fn js_err(e: respmodel::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Simulated spirometry volumes (ml), one per `dt`.
#[wasm_bindgen]
pub fn simulate_breathing(seed: u64, duration: f64, dt: f64, period: f64, jitter: f64) -> Result<Vec<f64>, JsValue> {
    let cfg = SignalSimConfig {
        seed,
        duration,
        dt,
        period_mean: period,
        period_jitter: jitter,
        amp_jitter: jitter,
        ..SignalSimConfig::default()
    };
    simulate(&cfg).map(|s| s.v).map_err(js_err)
}

/// Phantom with its motion model fitted on the ground-truth phase fields.
#[wasm_bindgen]
pub struct BreathingDemo {
    reference: ScalarVolume,
    model: MotionModel,
}

#[wasm_bindgen]
impl BreathingDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(resolution: usize, peak_mm: f64, hysteresis: f64) -> Result<BreathingDemo, JsValue> {
        let base = PhantomConfig::default();
        let cfg = PhantomConfig {
            dims: [resolution; 3],
            spacing: base.dims[0] as f64 * base.spacing / resolution as f64,
            peak_displacement: peak_mm,
            hysteresis,
            ..base
        };
        let truth = generate(&cfg).map_err(js_err)?;
        let (model, _) = truth.true_motion_set().fit_model().map_err(js_err)?;
        Ok(BreathingDemo {
            reference: truth.ref_image().clone(),
            model,
        })
    }

    pub fn width(&self) -> usize {
        self.reference.meta.dims[0]
    }

    pub fn height(&self) -> usize {
        self.reference.meta.dims[2]
    }

    /// Coronal mid-slice at surrogate state `(v, v')` as 8-bit grey, top row = head.
    pub fn frame(&self, v: f64, v_prime: f64) -> Result<Vec<u8>, JsValue> {
        let field = self.model.predict(v, v_prime);
        let img = warp_image(&self.reference, &field).map_err(js_err)?;
        Ok(coronal_slice(&img))
    }

    /// Largest predicted displacement (mm) at `(v, v')`.
    pub fn max_displacement(&self, v: f64, v_prime: f64) -> f64 {
        self.model.predict(v, v_prime).max_norm()
    }
}

fn coronal_slice(img: &ScalarVolume) -> Vec<u8> {
    let [nx, ny, nz] = img.meta.dims;
    let j = ny / 2;
    let mut out = Vec::with_capacity(nx * nz);
    for k in (0..nz).rev() {
        for i in 0..nx {
            // density units: air 0 .. soft tissue ~1.1
            let g = (img.values[img.meta.index(i, j, k)] / 1.2).clamp(0.0, 1.0);
            out.push((g * 255.0).round() as u8);
        }
    }
    out
}

/// Inverts a smooth swirl of the given amplitude on a 24³ grid.
/// Returns `[iterations, residual_mm, max_displacement_mm]`.
#[wasm_bindgen]
pub fn inversion_demo(amplitude_mm: f64) -> Result<Vec<f64>, JsValue> {
    let meta = GridMeta::centered([24; 3], 2.0).map_err(js_err)?;
    let field = swirl(meta, amplitude_mm);
    let inv = invert_field(&field, INVERT_TOL, INVERT_MAX_ITER).map_err(js_err)?;
    Ok(vec![inv.iterations as f64, inv.residual, field.max_norm()])
}

fn swirl(meta: GridMeta, amplitude: f64) -> DisplacementField {
    let r = 0.5 * meta.extent()[0];
    let c = meta.center();
    DisplacementField::from_fn(meta, |x| {
        let (dx, dy, dz) = ((x[0] - c[0]) / r, (x[1] - c[1]) / r, (x[2] - c[2]) / r);
        let w = amplitude * (-2.0 * (dx * dx + dy * dy + dz * dz)).exp();
        [-dy * w, dx * w, 0.3 * w]
    })
}
