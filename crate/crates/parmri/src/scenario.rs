//! Experiment harness: cohorts on disk, method dispatch, metric reports and
//! the named evaluation scenarios.

use crate::calib::{acs_lowres_maps, gt_maps, Taper};
use crate::container::{container_read, container_write, find, mask_records, Record};
use crate::error::{Error, Result};
use crate::jdsi::{reconstruct, JdsiModel, MapsMode};
use crate::mask::{make_mask_1d, make_mask_2d, SamplingMask};
use crate::metrics::{mean_std, psnr, rlne, ssim};
use crate::numerics::{sos, ComplexImage, CoilStack, C64};
use crate::pgm::{export_pgm, PgmScale};
use crate::phantom::{build_samples, LesionPolicy, Sample};
use crate::recon::{cg_sense, jsense, pfista_sense, CG_DEFAULT_MAX_ITERS, CG_DEFAULT_TOL};
use crate::sense::{zero_filled, SenseMaps};
use std::fmt;
use std::path::{Path, PathBuf};

pub const PFISTA_DEFAULT_REG: f64 = 1e-3;
pub const PFISTA_DEFAULT_ITERS: usize = 60;

// ---------------------------------------------------------------- methods

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Zf,
    CgSense,
    Pfista,
    Jsense,
    Jdsi,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Zf => "zf",
            Method::CgSense => "cg-sense",
            Method::Pfista => "pfista",
            Method::Jsense => "jsense",
            Method::Jdsi => "jdsi",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zf" => Ok(Method::Zf),
            "cg-sense" => Ok(Method::CgSense),
            "pfista" => Ok(Method::Pfista),
            "jsense" => Ok(Method::Jsense),
            "jdsi" => Ok(Method::Jdsi),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Where the sensitivity maps of map-based methods come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapsSource {
    Gt,
    Acs,
    Jsense,
    /// The network estimates its own maps.
    Learned,
}

impl MapsSource {
    pub fn name(&self) -> &'static str {
        match self {
            MapsSource::Gt => "gt",
            MapsSource::Acs => "acs",
            MapsSource::Jsense => "jsense",
            MapsSource::Learned => "learned",
        }
    }
}

impl std::str::FromStr for MapsSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt" => Ok(MapsSource::Gt),
            "acs" => Ok(MapsSource::Acs),
            "jsense" => Ok(MapsSource::Jsense),
            "learned" => Ok(MapsSource::Learned),
            other => Err(Error::Config(format!("unknown maps source '{other}'"))),
        }
    }
}

// ---------------------------------------------------------------- cohorts

#[derive(Debug, Clone)]
pub struct Cohort {
    pub height: usize,
    pub width: usize,
    pub coils: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Deterministic phantom cohort; test samples continue the training stream
/// so the splits are disjoint by construction.
pub fn build_cohort(
    height: usize,
    width: usize,
    coils: usize,
    n_train: usize,
    n_test: usize,
    seed: u64,
    noise_sigma: f64,
    lesions: LesionPolicy,
) -> Result<Cohort> {
    let train_lesions = lesions == LesionPolicy::All;
    let test_lesions = matches!(lesions, LesionPolicy::All | LesionPolicy::TestOnly);
    let train = build_samples(height, width, coils, seed, 0, n_train, noise_sigma, train_lesions)?;
    let test = build_samples(
        height,
        width,
        coils,
        seed,
        n_train as u64,
        n_test,
        noise_sigma,
        test_lesions,
    )?;
    Ok(Cohort { height, width, coils, seed, noise_sigma, train, test })
}

pub fn save_cohort(dir: &Path, cohort: &Cohort) -> Result<()> {
    std::fs::create_dir_all(dir.join("samples"))?;
    let mut manifest = String::from("sample_id,split,height,width,coils,cohort_seed,path\n");
    for (split, samples) in [("train", &cohort.train), ("test", &cohort.test)] {
        for s in samples {
            let rel = format!("samples/{:05}.jks", s.id);
            manifest.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.id, split, cohort.height, cohort.width, cohort.coils, cohort.seed, rel
            ));
            let records = vec![
                Record::image("truth", &s.truth),
                Record::maps("maps", &s.maps),
                Record::kspace("kspace", &s.kspace),
            ];
            container_write(&dir.join(rel), &records)?;
        }
    }
    std::fs::write(dir.join("manifest.csv"), manifest)?;
    Ok(())
}

pub fn load_cohort(dir: &Path) -> Result<Cohort> {
    let manifest = std::fs::read_to_string(dir.join("manifest.csv"))?;
    let mut lines = manifest.lines();
    let header = lines.next().unwrap_or("");
    if !header.starts_with("sample_id,split") {
        return Err(Error::Scenario(format!("bad manifest header in {}", dir.display())));
    }
    let mut cohort = Cohort {
        height: 0,
        width: 0,
        coils: 0,
        seed: 0,
        noise_sigma: 0.0,
        train: Vec::new(),
        test: Vec::new(),
    };
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::Scenario(format!("bad manifest row '{line}'")));
        }
        let id: u32 = f[0].parse().map_err(|e| Error::Scenario(format!("bad sample id: {e}")))?;
        cohort.height = f[2].parse().map_err(|e| Error::Scenario(format!("manifest: {e}")))?;
        cohort.width = f[3].parse().map_err(|e| Error::Scenario(format!("manifest: {e}")))?;
        cohort.coils = f[4].parse().map_err(|e| Error::Scenario(format!("manifest: {e}")))?;
        cohort.seed = f[5].parse().map_err(|e| Error::Scenario(format!("manifest: {e}")))?;
        let records = container_read(&dir.join(f[6]))?;
        let sample = Sample {
            id,
            truth: find(&records, "truth")?.to_image()?,
            maps: find(&records, "maps")?.to_maps()?,
            kspace: find(&records, "kspace")?.to_stack()?,
        };
        match f[1] {
            "train" => cohort.train.push(sample),
            "test" => cohort.test.push(sample),
            other => return Err(Error::Scenario(format!("unknown split '{other}'"))),
        }
    }
    Ok(cohort)
}

/// Zero-filled undersampling of a fully sampled acquisition.
pub fn undersample(kspace: &CoilStack, mask: &SamplingMask) -> CoilStack {
    let mut y = kspace.clone();
    for j in 0..y.coils() {
        let plane = y.plane_mut(j);
        for (p, v) in plane.iter_mut().enumerate() {
            if !mask.omega()[p] {
                *v = C64::new(0.0, 0.0);
            }
        }
    }
    y
}

/// Division-by-SoS maps from the fully sampled coil images of a sample.
pub fn reference_maps(sample: &Sample) -> Result<SenseMaps> {
    let full = make_mask_1d(sample.kspace.width(), sample.kspace.height(), 1.0, 0, 0)?;
    let coil_images = zero_filled(&sample.kspace, &full)?;
    gt_maps(&coil_images, crate::calib::DEFAULT_EPS_REL)
}

pub fn estimate_maps(
    source: MapsSource,
    sample: &Sample,
    y: &CoilStack,
    mask: &SamplingMask,
) -> Result<SenseMaps> {
    match source {
        MapsSource::Gt => reference_maps(sample),
        MapsSource::Acs => acs_lowres_maps(y, mask, Taper::RaisedCosine),
        MapsSource::Jsense => {
            let (_, maps, _) = jsense(
                y,
                mask,
                crate::recon::JSENSE_DEFAULT_OUTER,
                crate::recon::JSENSE_DEFAULT_DEGREE,
                None,
            )?;
            Ok(maps)
        }
        MapsSource::Learned => {
            Err(Error::Scenario("learned maps exist only inside the network".into()))
        }
    }
}

/// A reconstruction plus optional per-phase intermediates (network methods).
pub struct ReconOutcome {
    pub image: ComplexImage,
    pub maps: Option<SenseMaps>,
    pub phases: Option<Vec<(ComplexImage, SenseMaps)>>,
}

pub fn reconstruct_method(
    method: Method,
    maps_source: MapsSource,
    sample: &Sample,
    mask: &SamplingMask,
    model: Option<&JdsiModel<f32>>,
) -> Result<ReconOutcome> {
    let y = undersample(&sample.kspace, mask);
    match method {
        Method::Zf => {
            let image = sos(&zero_filled(&y, mask)?)?;
            Ok(ReconOutcome { image, maps: None, phases: None })
        }
        Method::CgSense => {
            let maps = estimate_maps(maps_source, sample, &y, mask)?;
            let (image, _) = cg_sense(&y, &maps, mask, CG_DEFAULT_MAX_ITERS, CG_DEFAULT_TOL)?;
            Ok(ReconOutcome { image, maps: Some(maps), phases: None })
        }
        Method::Pfista => {
            let maps = estimate_maps(maps_source, sample, &y, mask)?;
            let (image, _) =
                pfista_sense(&y, &maps, mask, PFISTA_DEFAULT_REG, PFISTA_DEFAULT_ITERS)?;
            Ok(ReconOutcome { image, maps: Some(maps), phases: None })
        }
        Method::Jsense => {
            let (image, maps, _) = jsense(
                &y,
                mask,
                crate::recon::JSENSE_DEFAULT_OUTER,
                crate::recon::JSENSE_DEFAULT_DEGREE,
                None,
            )?;
            Ok(ReconOutcome { image, maps: Some(maps), phases: None })
        }
        Method::Jdsi => {
            let model = model.ok_or_else(|| {
                Error::Scenario("method jdsi requires a trained checkpoint".into())
            })?;
            let external = match model.cfg.maps_mode {
                MapsMode::FrozenExternal => Some(estimate_maps(
                    match maps_source {
                        MapsSource::Learned => MapsSource::Acs,
                        other => other,
                    },
                    sample,
                    &y,
                    mask,
                )?),
                _ => None,
            };
            let rec = reconstruct(model, &y, mask, external.as_ref())?;
            Ok(ReconOutcome { image: rec.image, maps: Some(rec.maps), phases: Some(rec.phases) })
        }
    }
}

/// Grid-search helper for the sparse-penalty weight: picks the value with
/// the lowest mean RLNE over the given samples.
pub fn tune_pfista_reg(
    samples: &[&Sample],
    mask_for: impl Fn(&Sample) -> Result<SamplingMask>,
    grid: &[f64],
    iters: usize,
) -> Result<f64> {
    let mut best = (f64::INFINITY, grid.first().copied().unwrap_or(PFISTA_DEFAULT_REG));
    for &reg in grid {
        let mut acc = 0.0;
        for sample in samples {
            let mask = mask_for(sample)?;
            let y = undersample(&sample.kspace, &mask);
            let maps = acs_lowres_maps(&y, &mask, Taper::RaisedCosine)?;
            let (image, _) = pfista_sense(&y, &maps, &mask, reg, iters)?;
            acc += rlne(&image, &sample.truth)?;
        }
        let mean = acc / samples.len().max(1) as f64;
        if mean < best.0 {
            best = (mean, reg);
        }
    }
    Ok(best.1)
}

// ---------------------------------------------------------------- reports

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub scenario: String,
    pub method: String,
    pub af: f64,
    pub acs: usize,
    pub sample_id: String,
    pub rlne: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    /// Per-sample rows, sorted by (scenario, method, af, acs, sample id).
    pub rows: Vec<MetricRow>,
    /// One (mean, std) pair per group, reported with `sample_id = "ALL"`.
    pub aggregates: Vec<(MetricRow, MetricRow)>,
}

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

impl MetricsReport {
    pub fn from_rows(mut rows: Vec<MetricRow>) -> Self {
        rows.sort_by(|a, b| {
            (&a.scenario, &a.method)
                .cmp(&(&b.scenario, &b.method))
                .then(a.af.total_cmp(&b.af))
                .then(a.acs.cmp(&b.acs))
                .then(a.sample_id.cmp(&b.sample_id))
        });
        let mut aggregates = Vec::new();
        let mut idx = 0;
        while idx < rows.len() {
            let key =
                (rows[idx].scenario.clone(), rows[idx].method.clone(), rows[idx].af, rows[idx].acs);
            let mut end = idx;
            while end < rows.len()
                && rows[end].scenario == key.0
                && rows[end].method == key.1
                && rows[end].af == key.2
                && rows[end].acs == key.3
            {
                end += 1;
            }
            let group = &rows[idx..end];
            let (rl_m, rl_s) = mean_std(&group.iter().map(|r| r.rlne).collect::<Vec<_>>());
            let (ps_m, ps_s) = mean_std(&group.iter().map(|r| r.psnr_db).collect::<Vec<_>>());
            let (ss_m, ss_s) = mean_std(&group.iter().map(|r| r.ssim).collect::<Vec<_>>());
            let mk = |rlne, psnr_db, ssim| MetricRow {
                scenario: key.0.clone(),
                method: key.1.clone(),
                af: key.2,
                acs: key.3,
                sample_id: "ALL".into(),
                rlne,
                psnr_db,
                ssim,
            };
            aggregates.push((mk(rl_m, ps_m, ss_m), mk(rl_s, ps_s, ss_s)));
            idx = end;
        }
        Self { rows, aggregates }
    }

    /// Fixed-schema CSV; aggregate rows carry `mean±std` cells.
    pub fn csv(&self) -> String {
        let mut out = String::from("scenario,method,AF,ACS,sample_id,rlne,psnr_db,ssim\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.scenario,
                r.method,
                r.af,
                r.acs,
                r.sample_id,
                fmt_metric(r.rlne),
                fmt_metric(r.psnr_db),
                fmt_metric(r.ssim)
            ));
        }
        for (mean, std) in &self.aggregates {
            out.push_str(&format!(
                "{},{},{},{},ALL,{}±{},{}±{},{}±{}\n",
                mean.scenario,
                mean.method,
                mean.af,
                mean.acs,
                fmt_metric(mean.rlne),
                fmt_metric(std.rlne),
                fmt_metric(mean.psnr_db),
                fmt_metric(std.psnr_db),
                fmt_metric(mean.ssim),
                fmt_metric(std.ssim)
            ));
        }
        out
    }

    pub fn group_mean(
        &self,
        scenario: &str,
        method: &str,
        af: f64,
        acs: usize,
    ) -> Option<&MetricRow> {
        self.aggregates
            .iter()
            .find(|(m, _)| {
                m.scenario == scenario && m.method == method && m.af == af && m.acs == acs
            })
            .map(|(m, _)| m)
    }
}

// ---------------------------------------------------------------- scenarios

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioName {
    Calib1d,
    Calib2d,
    Calibless,
    Lesion,
    AcsSweep,
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioName::Calib1d => "calib-1d",
            ScenarioName::Calib2d => "calib-2d",
            ScenarioName::Calibless => "calibless",
            ScenarioName::Lesion => "lesion",
            ScenarioName::AcsSweep => "acs-sweep",
        })
    }
}

impl std::str::FromStr for ScenarioName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "calib-1d" => Ok(ScenarioName::Calib1d),
            "calib-2d" => Ok(ScenarioName::Calib2d),
            "calibless" => Ok(ScenarioName::Calibless),
            "lesion" => Ok(ScenarioName::Lesion),
            "acs-sweep" => Ok(ScenarioName::AcsSweep),
            other => Err(Error::Config(format!("unknown scenario '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Lines1d,
    Random2d,
}

/// One undersampling setting evaluated by a scenario.
#[derive(Debug, Clone, Copy)]
pub struct MaskSetting {
    pub kind: MaskKind,
    pub af: f64,
    pub acs: usize,
}

impl MaskSetting {
    pub fn build(&self, width: usize, height: usize, seed: u64) -> Result<SamplingMask> {
        match self.kind {
            MaskKind::Lines1d => make_mask_1d(width, height, self.af, self.acs, seed),
            MaskKind::Random2d => make_mask_2d(width, height, self.af, self.acs, seed),
        }
    }
}

/// Mask settings for a named scenario. The published ACS counts assume a
/// 320-wide grid; narrower desk grids halve them and clamp to the sampling
/// budget so every setting stays constructible.
pub fn scenario_settings(name: ScenarioName, width: usize) -> Vec<MaskSetting> {
    let desk_acs = |published: usize, af: f64| -> usize {
        if width >= 320 {
            published
        } else {
            let budget = (width as f64 / af).round() as usize;
            (published / 2).clamp(2, (budget / 2).max(2))
        }
    };
    match name {
        ScenarioName::Calib1d => {
            let mut v = Vec::new();
            for af in [4.0, 8.0] {
                for published in [24usize, 8] {
                    v.push(MaskSetting { kind: MaskKind::Lines1d, af, acs: desk_acs(published, af) });
                }
            }
            v
        }
        ScenarioName::Calib2d => vec![MaskSetting { kind: MaskKind::Random2d, af: 10.0, acs: 8 }],
        ScenarioName::Calibless => vec![
            MaskSetting { kind: MaskKind::Lines1d, af: 4.0, acs: 0 },
            MaskSetting { kind: MaskKind::Random2d, af: 8.0, acs: 0 },
        ],
        ScenarioName::Lesion => {
            vec![MaskSetting { kind: MaskKind::Lines1d, af: 4.0, acs: desk_acs(24, 4.0) }]
        }
        ScenarioName::AcsSweep => acs_sweep_settings(width),
    }
}

/// The robustness-sweep ACS ladder at AF 4: the published counts
/// {24, 16, 8, 4} on 320-wide grids; narrower grids scale to fractions of
/// the column budget (1/2, 3/8, 1/4, 1/8), e.g. {8, 6, 4, 2} at 64.
/// Networks train at the ladder top, mirroring the published protocol
/// where the training pattern carries the largest ACS count.
pub fn acs_sweep_settings(width: usize) -> Vec<MaskSetting> {
    let ladder: Vec<usize> = if width >= 320 {
        vec![24, 16, 8, 4]
    } else {
        let budget = (width as f64 / 4.0).round() as usize;
        vec![
            (budget / 2).max(1),
            (3 * budget / 8).max(1),
            (budget / 4).max(1),
            (budget / 8).max(1),
        ]
    };
    ladder.into_iter().map(|acs| MaskSetting { kind: MaskKind::Lines1d, af: 4.0, acs }).collect()
}

/// The training mask of the desk protocol: top of the sweep ladder.
pub fn training_setting(width: usize) -> MaskSetting {
    acs_sweep_settings(width)[0]
}

/// Everything a scenario run needs. `models` maps a label to a trained
/// network (`jdsi` for the full model, `jdsi-jsense`/`jdsi-acs` for the
/// frozen-map ablations of the sweep).
pub struct ScenarioRun<'a> {
    pub name: ScenarioName,
    pub cohort: &'a Cohort,
    pub methods: Vec<(Method, MapsSource)>,
    pub models: Vec<(String, &'a JdsiModel<f32>)>,
    pub out_dir: Option<&'a Path>,
    pub mask_seed: u64,
}

/// Per-sample evaluation mask seed, deterministic in (base seed, sample id).
pub fn sample_mask_seed(base: u64, sample_id: u32) -> u64 {
    base ^ ((sample_id as u64) << 20)
}

/// Run a named scenario over the cohort's test split and emit CSV, PGM
/// renderings and, for network methods, per-phase dumps.
pub fn run_scenario(run: &ScenarioRun) -> Result<MetricsReport> {
    let settings = scenario_settings(run.name, run.cohort.width);
    let mut rows = Vec::new();
    if let Some(dir) = run.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    if run.methods.iter().any(|(m, _)| *m == Method::Jdsi) && run.models.is_empty() {
        return Err(Error::Scenario("method jdsi requested without a checkpoint".into()));
    }
    let mut jobs: Vec<(String, Method, MapsSource, Option<&JdsiModel<f32>>)> = Vec::new();
    for (method, source) in &run.methods {
        if *method == Method::Jdsi {
            continue; // network variants are resolved from the model labels
        }
        jobs.push((method.name().to_string(), *method, *source, None));
    }
    for (label, model) in &run.models {
        let source = match model.cfg.maps_mode {
            MapsMode::FrozenExternal => {
                if label.contains("jsense") {
                    MapsSource::Jsense
                } else {
                    MapsSource::Acs
                }
            }
            _ => MapsSource::Learned,
        };
        jobs.push((label.clone(), Method::Jdsi, source, Some(*model)));
    }

    for setting in &settings {
        for sample in &run.cohort.test {
            let mask = setting.build(
                run.cohort.width,
                run.cohort.height,
                sample_mask_seed(run.mask_seed, sample.id),
            )?;
            let truth_peak = sample.truth.magnitude().iter().cloned().fold(0.0f64, f64::max);
            for (label, method, source, model) in &jobs {
                let outcome = reconstruct_method(*method, *source, sample, &mask, *model)?;
                rows.push(MetricRow {
                    scenario: run.name.to_string(),
                    method: label.clone(),
                    af: setting.af,
                    acs: setting.acs,
                    sample_id: format!("{:05}", sample.id),
                    rlne: rlne(&outcome.image, &sample.truth)?,
                    psnr_db: psnr(&outcome.image, &sample.truth)?,
                    ssim: ssim(&outcome.image, &sample.truth)?,
                });
                if let Some(dir) = run.out_dir {
                    if sample.id == run.cohort.test[0].id {
                        export_outputs(dir, run.name, setting, label, sample, &outcome, truth_peak)?;
                    }
                }
            }
        }
    }
    let report = MetricsReport::from_rows(rows);
    if let Some(dir) = run.out_dir {
        std::fs::write(dir.join(format!("{}.csv", run.name)), report.csv())?;
    }
    Ok(report)
}

fn export_outputs(
    dir: &Path,
    name: ScenarioName,
    setting: &MaskSetting,
    label: &str,
    sample: &Sample,
    outcome: &ReconOutcome,
    truth_peak: f64,
) -> Result<()> {
    let tag = format!("{name}_af{}_acs{}_{}_s{:05}", setting.af, setting.acs, label, sample.id);
    let (h, w) = (sample.truth.height(), sample.truth.width());
    export_pgm(&dir.join(format!("{tag}.pgm")), &outcome.image.magnitude(), h, w, PgmScale::Linear)?;
    let err: Vec<f64> = outcome
        .image
        .magnitude()
        .iter()
        .zip(sample.truth.magnitude())
        .map(|(a, b)| (a - b).abs())
        .collect();
    export_pgm(
        &dir.join(format!("{tag}_err.pgm")),
        &err,
        h,
        w,
        PgmScale::FixedMax(0.5 * truth_peak),
    )?;
    if let Some(phases) = &outcome.phases {
        let mut records = Vec::new();
        for (k, (img, maps)) in phases.iter().enumerate() {
            records.push(Record::image(&format!("phase{k}.image"), img));
            records.push(Record::maps(&format!("phase{k}.maps"), maps));
        }
        container_write(&dir.join(format!("{tag}_phases.jks")), &records)?;
    }
    Ok(())
}

/// Write a standalone reconstruction container (CLI `recon` output).
pub fn write_recon_container(
    path: &PathBuf,
    sample: &Sample,
    mask: &SamplingMask,
    outcome: &ReconOutcome,
) -> Result<()> {
    let mut records = vec![Record::image("recon", &outcome.image)];
    if let Some(maps) = &outcome.maps {
        records.push(Record::maps("recon.maps", maps));
    }
    if let Some(phases) = &outcome.phases {
        for (k, (img, maps)) in phases.iter().enumerate() {
            records.push(Record::image(&format!("phase{k}.image"), img));
            records.push(Record::maps(&format!("phase{k}.maps"), maps));
        }
    }
    records.push(Record::image("truth", &sample.truth));
    records.extend(mask_records("mask", mask));
    container_write(path, &records)
}

fn prepared_samples(
    samples: &[Sample],
    cohort: &Cohort,
    setting: &MaskSetting,
    mask_seed: u64,
    external: Option<MapsSource>,
) -> Result<Vec<crate::jdsi::TrainSample>> {
    let full = make_mask_1d(cohort.width, cohort.height, 1.0, 0, 0)?;
    samples
        .iter()
        .map(|sample| {
            let mask =
                setting.build(cohort.width, cohort.height, sample_mask_seed(mask_seed, sample.id))?;
            let y = undersample(&sample.kspace, &mask);
            let reference_coils = zero_filled(&sample.kspace, &full)?;
            let reference_maps = gt_maps(&reference_coils, crate::calib::DEFAULT_EPS_REL)?;
            let external_maps = match external {
                Some(src) => Some(estimate_maps(src, sample, &y, &mask)?),
                None => None,
            };
            Ok(crate::jdsi::TrainSample { y, mask, reference_coils, reference_maps, external_maps })
        })
        .collect()
}

/// Training-split samples packed for the network, undersampled with
/// per-sample seeded masks; `external` adds pre-estimated maps for the
/// frozen ablations.
pub fn training_samples(
    cohort: &Cohort,
    setting: &MaskSetting,
    mask_seed: u64,
    external: Option<MapsSource>,
) -> Result<Vec<crate::jdsi::TrainSample>> {
    prepared_samples(&cohort.train, cohort, setting, mask_seed, external)
}

/// Test-split samples prepared the same way.
pub fn eval_samples(
    cohort: &Cohort,
    setting: &MaskSetting,
    mask_seed: u64,
    external: Option<MapsSource>,
) -> Result<Vec<crate::jdsi::TrainSample>> {
    prepared_samples(&cohort.test, cohort, setting, mask_seed, external)
}
