use std::fs;
use std::path::{Path, PathBuf};

use respmodel::atlas::{build_mean_atlas_with, resample_mask_onto, transfer_detailed, AtlasOptions};
use respmodel::evaluation::{leave_one_out_with, LooOptions, Subject};
use respmodel::field::resample_field_onto;
use respmodel::phantom::{generate_population, PhantomTruth};
use respmodel::regression::animate as animate_frame;
use respmodel::surrogate::simulate;
use respmodel::{rvf, Dataset4D, Error, ErrorKind, MeanAtlas, MotionModel, PatientMotionSet, Result, SurrogateSignal};
use serde::Serialize;

use crate::config::{io_error, RunConfig};

pub const EXIT_IO: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_VALIDATION: u8 = 4;

pub fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Io => EXIT_IO,
        ErrorKind::Numerical => EXIT_NUMERICAL,
        ErrorKind::Validation => EXIT_VALIDATION,
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a RunConfig,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json serialize");
    write_text(path, &text)
}

fn write_run(out: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    // the output location is not part of the run's identity
    let mut cfg = cfg.clone();
    cfg.pipeline.out = None;
    let rec = RunRecord {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.pipeline.seed,
        config: &cfg,
    };
    write_json(&out.join("run.json"), &rec)
}

fn load_dataset(path: &Path, cfg: &RunConfig) -> Result<Dataset4D> {
    let ds = Dataset4D::load(path)?;
    ds.validate()?;
    cfg.pipeline.working_dataset(&ds)
}

fn sliding_mask(cfg: &RunConfig) -> Option<&str> {
    Some(cfg.pipeline.sliding_mask.as_str()).filter(|s| !s.is_empty())
}

pub fn phantom(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir()?;
    let mut pop = cfg.population.clone();
    if pop.base.dims != [cfg.pipeline.resolution; 3] {
        pop = pop.at_resolution(cfg.pipeline.resolution);
    }
    let members = generate_population(&pop)?;
    create_dir(&out)?;
    for m in &members {
        let dir = out.join(&m.dataset.patient_id);
        m.save(&dir)?;
        log::info!("wrote {}", dir.display());
    }
    write_json(&out.join("population.json"), &pop)?;
    write_run(&out, "phantom", cfg)
}

#[derive(Serialize)]
struct PhaseStats {
    phase: usize,
    max_norm_mm: f64,
    mean_norm_mm: f64,
}

#[derive(Serialize)]
struct FitSummary {
    patient_id: String,
    residual_mm: f64,
    total_variation_mm: f64,
    unexplained_fraction: f64,
    rank: usize,
    phases: Vec<PhaseStats>,
}

pub fn fit(cfg: &RunConfig, dataset: &Path) -> Result<()> {
    let out = cfg.out_dir()?;
    let ds = load_dataset(dataset, cfg)?;
    let motion = PatientMotionSet::from_dataset(&ds, &cfg.pipeline.intra, sliding_mask(cfg))?;
    let (model, report) = motion.fit_model()?;
    create_dir(&out)?;
    model.save(&out.join("model"))?;
    let fields = out.join("fields");
    create_dir(&fields)?;
    for (j, f) in motion.phase_fields.iter().enumerate() {
        rvf::write_field(fields.join(format!("field_{j:02}.rvf")), f)?;
    }
    rvf::write_volume(out.join("reference.rvf"), &motion.ref_image)?;
    let summary = FitSummary {
        patient_id: ds.patient_id.clone(),
        residual_mm: report.residual,
        total_variation_mm: report.total_variation,
        unexplained_fraction: report.unexplained_fraction(),
        rank: report.rank,
        phases: motion
            .phase_fields
            .iter()
            .enumerate()
            .map(|(phase, f)| PhaseStats {
                phase,
                max_norm_mm: f.max_norm(),
                mean_norm_mm: f.mean_norm(),
            })
            .collect(),
    };
    write_json(&out.join("fit_report.json"), &summary)?;
    log::info!(
        "{}: residual {:.4} mm, unexplained {:.2}%",
        ds.patient_id,
        report.residual,
        100.0 * report.unexplained_fraction()
    );
    write_run(&out, "fit", cfg)
}

pub fn atlas(cfg: &RunConfig, datasets: &[PathBuf], reference: Option<&str>) -> Result<()> {
    let out = cfg.out_dir()?;
    let loaded = datasets
        .iter()
        .map(|p| load_dataset(p, cfg))
        .collect::<Result<Vec<_>>>()?;
    let n = loaded[0].n_phases();
    if let Some(bad) = loaded.iter().find(|d| d.n_phases() != n) {
        return Err(Error::InconsistentPhaseCount(format!(
            "{} has {} phases, {} has {n}",
            bad.patient_id,
            bad.n_phases(),
            loaded[0].patient_id
        )));
    }
    let reference = match reference {
        Some(r) => r.to_string(),
        None => loaded.iter().map(|d| d.patient_id.clone()).min().expect("non-empty"),
    };
    let motion = loaded
        .iter()
        .map(|d| PatientMotionSet::from_dataset(d, &cfg.pipeline.intra, sliding_mask(cfg)))
        .collect::<Result<Vec<_>>>()?;
    let atlas = build_mean_atlas_with(
        &motion,
        &reference,
        &cfg.pipeline.inter,
        AtlasOptions {
            include_reference: cfg.pipeline.include_reference,
        },
    )?;
    atlas.save(&out)?;
    write_run(&out, "atlas", cfg)
}

pub fn transfer(cfg: &RunConfig, atlas_dir: &Path, image: &Path) -> Result<()> {
    let out = cfg.out_dir()?;
    let atlas = MeanAtlas::load(atlas_dir)?;
    let new_image = rvf::read_volume(image)?;
    let t = transfer_detailed(&atlas, &new_image, &cfg.pipeline.inter)?;
    create_dir(&out)?;
    t.model.save(&out.join("model"))?;
    rvf::write_field(out.join("atlas_to_new.rvf"), &t.atlas_to_new)?;
    atlas.mean_signal.write_csv(out.join("signal.csv"))?;
    let masks = out.join("masks");
    create_dir(&masks)?;
    for (name, m) in &atlas.masks {
        let m = if m.meta == new_image.meta {
            m.clone()
        } else {
            resample_mask_onto(m, &new_image.meta)
        };
        let warped = respmodel::evaluation::warp_mask(&m, &t.atlas_to_new)?;
        rvf::write_mask(masks.join(format!("{name}.rvf")), &warped)?;
    }
    write_run(&out, "transfer", cfg)
}

/// `n` sample indices spread evenly over `len`.
fn frame_indices(len: usize, n: usize) -> Vec<usize> {
    if n >= len {
        return (0..len).collect();
    }
    (0..n).map(|i| i * len / n).collect()
}

pub fn animate(
    cfg: &RunConfig,
    model_dir: &Path,
    image: &Path,
    signal: Option<&Path>,
    simulate_signal: bool,
    frames: Option<usize>,
) -> Result<()> {
    let out = cfg.out_dir()?;
    let mut model = MotionModel::load(model_dir)?;
    let ref_image = rvf::read_volume(image)?;
    if model.meta() != &ref_image.meta {
        let (a, b) = (model.meta().extent(), ref_image.meta.extent());
        if (0..3).any(|k| (a[k] - b[k]).abs() > 0.5 * model.meta().spacing[k]) {
            return Err(Error::GridMismatch(format!(
                "model covers {a:?} mm but the image covers {b:?} mm"
            )));
        }
        model = model.resample_onto(&ref_image.meta);
    }
    let signal: SurrogateSignal = match (signal, simulate_signal) {
        (Some(p), _) => SurrogateSignal::read_csv(p)?,
        (None, true) => simulate(&cfg.signal)?,
        (None, false) => {
            let p = model_dir.join("..").join("signal.csv");
            if p.exists() {
                SurrogateSignal::read_csv(&p)?
            } else {
                return Err(Error::InvalidConfig("animate needs --signal <csv> or --simulate".into()));
            }
        }
    };
    let n = frames.unwrap_or(signal.len());
    if n == 0 {
        return Err(Error::InvalidConfig("--frames must be at least 1".into()));
    }
    create_dir(&out)?;
    let mut table = String::from("frame,t,v,v_prime\n");
    for (k, &i) in frame_indices(signal.len(), n).iter().enumerate() {
        let frame = animate_frame(&ref_image, &model, &signal, i)?;
        rvf::write_volume(out.join(format!("frame_{k:04}.rvf")), &frame)?;
        table.push_str(&format!("{k},{},{},{}\n", signal.t[i], signal.v[i], signal.v_prime[i]));
    }
    write_text(&out.join("frames.csv"), &table)?;
    write_run(&out, "animate", cfg)
}

fn load_subject(dir: &Path, cfg: &RunConfig) -> Result<Subject> {
    let subject: Subject = if dir.join("truth").join("phantom.json").exists() {
        PhantomTruth::load(dir)?.into()
    } else {
        Dataset4D::load(dir)?.into()
    };
    let ds = cfg.pipeline.working_dataset(&subject.dataset)?;
    if ds.meta() == subject.dataset.meta() {
        return Ok(subject);
    }
    let meta = ds.meta().clone();
    Ok(Subject {
        phase_masks: subject.phase_masks.map(|phases| {
            phases
                .iter()
                .map(|m| m.iter().map(|(k, v)| (k.clone(), resample_mask_onto(v, &meta))).collect())
                .collect()
        }),
        true_fields: subject
            .true_fields
            .map(|fs| fs.iter().map(|f| resample_field_onto(f, &meta)).collect()),
        dataset: ds,
    })
}

pub fn evaluate(cfg: &RunConfig, population: &Path) -> Result<()> {
    let out = cfg.out_dir()?;
    let entries = fs::read_dir(population).map_err(|e| io_error(population, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("dataset.json").exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::io(
            population,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no patient datasets found"),
        ));
    }
    let subjects = dirs
        .iter()
        .map(|d| load_subject(d, cfg))
        .collect::<Result<Vec<_>>>()?;
    let opts = LooOptions {
        motion_source: cfg.motion_source,
        structures: None,
    };
    let report = leave_one_out_with(&subjects, &cfg.pipeline, &opts)?;
    report.save(&out)?;
    print!("{}", report.to_table());
    for (fold, s) in report.regressions() {
        log::warn!("fold {fold}: {s} DICE dropped after registration");
    }
    write_run(&out, "evaluate", cfg)
}
