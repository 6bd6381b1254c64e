//! Spirometry surrogate signals: volume `v(t)` in ml and its time derivative.

use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed range of relative breathing volumes (ml).
pub const DEFAULT_RANGE_ML: (f64, f64) = (0.0, 1200.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSignal {
    /// Sample times (strictly increasing).
    pub t: Vec<f64>,
    /// Volume (ml).
    pub v: Vec<f64>,
    /// Derivative (ml per time unit).
    pub v_prime: Vec<f64>,
}

impl SurrogateSignal {
    /// Builds a signal from `(t, v)` samples; the derivative is computed by [`derive`].
    pub fn from_samples(t: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        derive(t, v)
    }

    /// Signal sampled once per breathing phase (`t = 0, 1, …`).
    pub fn from_phases(v: Vec<f64>) -> Result<Self> {
        let t = (0..v.len()).map(|i| i as f64).collect();
        derive(t, v)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Checks every volume sample lies inside `range` (inclusive).
    pub fn check_range(&self, range: (f64, f64)) -> Result<()> {
        match self.v.iter().position(|&v| v < range.0 || v > range.1) {
            None => Ok(()),
            Some(i) => Err(Error::InvalidConfig(format!(
                "sample {i} ({} ml) outside [{}, {}] ml",
                self.v[i], range.0, range.1
            ))),
        }
    }

    /// Linear interpolation of `v` at time `t` (clamped at the ends).
    pub fn volume_at(&self, t: f64) -> f64 {
        let n = self.t.len();
        if t <= self.t[0] {
            return self.v[0];
        }
        if t >= self.t[n - 1] {
            return self.v[n - 1];
        }
        let k = self.t.partition_point(|&s| s <= t) - 1;
        let f = (t - self.t[k]) / (self.t[k + 1] - self.t[k]);
        self.v[k] + f * (self.v[k + 1] - self.v[k])
    }

    /// Index of the largest volume sample (first one on ties).
    pub fn peak_index(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.v.iter().enumerate() {
            if v > self.v[best] {
                best = i;
            }
        }
        best
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["t_s", "v_ml"] {
            return Err(Error::format(path, format!("expected header t_s,v_ml, got {headers:?}")));
        }
        let mut t = Vec::new();
        let mut v = Vec::new();
        for rec in rdr.deserialize::<(f64, f64)>() {
            let (ti, vi) = rec.map_err(|e| csv_error(path, e))?;
            t.push(ti);
            v.push(vi);
        }
        derive(t, v).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Writes `t_s,v_ml`; the derivative is never stored.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["t_s", "v_ml"]).map_err(|e| csv_error(path, e))?;
        for (t, v) in self.t.iter().zip(&self.v) {
            w.write_record([t.to_string(), v.to_string()])
                .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path, format!("{other:?}")),
        }
    } else {
        Error::format(path, e.to_string())
    }
}

/// Attaches `v'` computed by central differences (second-order one-sided at the ends).
pub fn derive(t: Vec<f64>, v: Vec<f64>) -> Result<SurrogateSignal> {
    if t.len() != v.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} times vs {} volumes",
            t.len(),
            v.len()
        )));
    }
    let n = t.len();
    if n < 2 {
        return Err(Error::TooShort(n));
    }
    if t.windows(2).any(|w| !(w[1] > w[0])) || t.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig("sample times must be strictly increasing".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig("volume samples must be finite".into()));
    }
    let mut d = vec![0.0; n];
    if n == 2 {
        let s = (v[1] - v[0]) / (t[1] - t[0]);
        d = vec![s, s];
    } else {
        for i in 1..n - 1 {
            d[i] = (v[i + 1] - v[i - 1]) / (t[i + 1] - t[i - 1]);
        }
        d[0] = three_point(t[0], [t[0], t[1], t[2]], [v[0], v[1], v[2]]);
        d[n - 1] = three_point(
            t[n - 1],
            [t[n - 3], t[n - 2], t[n - 1]],
            [v[n - 3], v[n - 2], v[n - 1]],
        );
    }
    Ok(SurrogateSignal { t, v, v_prime: d })
}

/// Derivative at `x` of the quadratic through three samples.
fn three_point(x: f64, ts: [f64; 3], vs: [f64; 3]) -> f64 {
    let [t0, t1, t2] = ts;
    vs[0] * (2.0 * x - t1 - t2) / ((t0 - t1) * (t0 - t2))
        + vs[1] * (2.0 * x - t0 - t2) / ((t1 - t0) * (t1 - t2))
        + vs[2] * (2.0 * x - t0 - t1) / ((t2 - t0) * (t2 - t1))
}

/// Pointwise mean after interpolating every signal onto the first one's time base.
pub fn average_signals(signals: &[SurrogateSignal]) -> Result<SurrogateSignal> {
    let first = signals.first().ok_or(Error::EmptyList("average_signals"))?;
    let n = signals.len() as f64;
    let v = first
        .t
        .iter()
        .map(|&t| signals.iter().map(|s| s.volume_at(t)).sum::<f64>() / n)
        .collect();
    derive(first.t.clone(), v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSimConfig {
    /// Baseline and maximal volume (ml); breaths rise from the baseline.
    pub amp_range: (f64, f64),
    pub period_mean: f64,
    /// Relative standard deviation of the per-breath period.
    pub period_jitter: f64,
    /// Relative standard deviation of the per-breath depth reduction.
    pub amp_jitter: f64,
    pub seed: u64,
    pub duration: f64,
    pub dt: f64,
}

impl Default for SignalSimConfig {
    fn default() -> Self {
        SignalSimConfig {
            amp_range: DEFAULT_RANGE_ML,
            period_mean: 4.0,
            period_jitter: 0.15,
            amp_jitter: 0.2,
            seed: 0,
            duration: 60.0,
            dt: 0.1,
        }
    }
}

impl SignalSimConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.amp_range;
        let checks = [
            (lo.is_finite() && hi.is_finite() && lo <= hi, "amp_range must satisfy min <= max"),
            (self.period_mean > 0.0, "period_mean must be > 0"),
            (self.dt > 0.0, "dt must be > 0"),
            (self.duration >= self.dt, "duration must cover at least one step"),
            (
                self.period_jitter >= 0.0 && self.amp_jitter >= 0.0,
                "jitter must be >= 0",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::InvalidConfig((*msg).into())),
            None => Ok(()),
        }
    }
}

/// Irregular breathing: one `sin²` lobe per breath with jittered depth and period.
///
/// Breath `k` starts at `t_k`, lasts `T_k` and reaches `min + A_k`, where
/// `A_k = (max − min) · clamp(1 − amp_jitter·|g|, 0, 1)` and
/// `T_k = period_mean · max(1 + period_jitter·g', 0.25)` with standard normal
/// draws `g, g'`. Samples are clamped into `amp_range`.
pub fn simulate(cfg: &SignalSimConfig) -> Result<SurrogateSignal> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = cfg.amp_range;
    let span = hi - lo;
    let n = (cfg.duration / cfg.dt).round().max(2.0) as usize;
    let t: Vec<f64> = (0..n).map(|i| i as f64 * cfg.dt).collect();

    let draw_breath = |rng: &mut ChaCha8Rng| {
        let g: f64 = StandardNormal.sample(rng);
        let gp: f64 = StandardNormal.sample(rng);
        let amp = span * (1.0 - cfg.amp_jitter * g.abs()).clamp(0.0, 1.0);
        let period = cfg.period_mean * (1.0 + cfg.period_jitter * gp).max(0.25);
        (amp, period)
    };
    let mut start = 0.0;
    let (mut amp, mut period) = draw_breath(&mut rng);
    let mut v = Vec::with_capacity(n);
    for &ti in &t {
        while ti >= start + period {
            start += period;
            (amp, period) = draw_breath(&mut rng);
        }
        let s = (PI * (ti - start) / period).sin();
        v.push((lo + amp * s * s).clamp(lo, hi));
    }
    derive(t, v)
}
