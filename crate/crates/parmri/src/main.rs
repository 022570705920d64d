//! Command-line front end: cohort synthesis, mask generation, single-sample
//! reconstruction, network training, metric evaluation, and the named
//! experiment scenarios.

use clap::{Args, Parser, Subcommand};
use parmri::config::KvConfig;
use parmri::container::{container_read, container_write, find, mask_records};
use parmri::error::{Error, Result};
use parmri::jdsi::{self, JdsiConfig, JdsiModel, MapsMode};
use parmri::mask::SamplingMask;
use parmri::metrics::{psnr, rlne, ssim};
use parmri::phantom::LesionPolicy;
use parmri::scenario::{
    self, acs_sweep_settings, build_cohort, load_cohort, run_scenario, save_cohort, training_setting,
    MaskKind, MaskSetting, MapsSource, Method, MetricsReport, ScenarioName, ScenarioRun,
};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "parmri", about = "Parallel MRI reconstruction toolkit", version)]
struct Cli {
    /// Worker threads (0 = library default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline overrides, e.g. `--set epochs=5 --set lr=0.002`.
    #[arg(long = "set")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn kv(&self) -> Result<KvConfig> {
        let mut kv = match &self.config {
            Some(path) => KvConfig::load(path)?,
            None => KvConfig::new(),
        };
        kv.apply_overrides(&self.overrides)?;
        Ok(kv)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom cohort with disjoint train/test splits.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 20)]
        test: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 4)]
        coils: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
        /// Lesion placement: none, test-only, or all.
        #[arg(long, default_value = "none")]
        lesions: String,
    },
    /// Generate an undersampling mask file.
    Mask {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 4.0)]
        af: f64,
        /// 1d (full columns) or 2d (random points).
        #[arg(long, default_value = "1d")]
        kind: String,
        #[arg(long, default_value_t = 0)]
        acs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Reconstruct one cohort sample.
    Recon {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        sample: u32,
        #[arg(long)]
        method: String,
        #[arg(long, default_value = "acs")]
        maps: String,
        #[arg(long, default_value_t = 4.0)]
        af: f64,
        #[arg(long, default_value = "1d")]
        mask_kind: String,
        #[arg(long, default_value_t = 8)]
        acs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Trained checkpoint (required for the network method).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the unrolled network on a cohort.
    Train {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pre-estimated maps for the frozen ablation: acs or jsense.
        #[arg(long)]
        frozen_maps: Option<String>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Metrics of a reconstruction container against its stored truth.
    Eval {
        #[arg(long)]
        recon: PathBuf,
    },
    /// Run a named experiment scenario on a cohort.
    Scenario {
        #[arg(long)]
        name: String,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Methods to evaluate, comma separated (zf,cg-sense,pfista,jsense,jdsi).
        #[arg(long, default_value = "zf,cg-sense")]
        methods: String,
        /// Maps source for the classical methods.
        #[arg(long, default_value = "acs")]
        maps: String,
        /// Trained full-model checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Frozen-ablation checkpoints for the sweep scenario.
        #[arg(long)]
        checkpoint_jsense_frozen: Option<PathBuf>,
        #[arg(long)]
        checkpoint_acs_frozen: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Recompute the aggregate CSV of a scenario directory.
    Report {
        #[arg(long)]
        scenario_csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_lesions(s: &str) -> Result<LesionPolicy> {
    s.parse()
}

fn load_model(
    kv: &KvConfig,
    checkpoint: &PathBuf,
    maps_mode: Option<MapsMode>,
) -> Result<JdsiModel<f32>> {
    let mut cfg = JdsiConfig::from_kv(kv)?;
    if let Some(mode) = maps_mode {
        cfg.maps_mode = mode;
    }
    let mut model = JdsiModel::new(cfg)?;
    jdsi::load_checkpoint(checkpoint, &mut model)?;
    Ok(model)
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Synth { out, train, test, height, width, coils, seed, noise_sigma, lesions } => {
            let cohort = build_cohort(
                height,
                width,
                coils,
                train,
                test,
                seed,
                noise_sigma,
                parse_lesions(&lesions)?,
            )?;
            save_cohort(&out, &cohort)?;
            println!(
                "cohort: {} train / {} test samples at {}x{} ({} coils) -> {}",
                train,
                test,
                height,
                width,
                coils,
                out.display()
            );
        }
        Command::Mask { out, width, height, af, kind, acs, seed } => {
            let setting = MaskSetting {
                kind: match kind.as_str() {
                    "1d" => MaskKind::Lines1d,
                    "2d" => MaskKind::Random2d,
                    other => return Err(Error::Config(format!("unknown mask kind '{other}'"))),
                },
                af,
                acs,
            };
            let mask = setting.build(width, height, seed)?;
            container_write(&out, &mask_records("mask", &mask))?;
            println!(
                "mask: {}x{} af {:.2} (actual {:.2}), {} acquired -> {}",
                height,
                width,
                af,
                mask.af_actual(),
                mask.acquired_count(),
                out.display()
            );
        }
        Command::Recon {
            cohort,
            sample,
            method,
            maps,
            af,
            mask_kind,
            acs,
            seed,
            out,
            checkpoint,
            config,
        } => {
            let kv = config.kv()?;
            let cohort = load_cohort(&cohort)?;
            let s = cohort
                .train
                .iter()
                .chain(&cohort.test)
                .find(|s| s.id == sample)
                .ok_or_else(|| Error::Scenario(format!("sample {sample} not in cohort")))?;
            let setting = MaskSetting {
                kind: match mask_kind.as_str() {
                    "1d" => MaskKind::Lines1d,
                    "2d" => MaskKind::Random2d,
                    other => return Err(Error::Config(format!("unknown mask kind '{other}'"))),
                },
                af,
                acs,
            };
            let mask = setting.build(cohort.width, cohort.height, seed)?;
            let method: Method = method.parse()?;
            let maps_source: MapsSource = maps.parse()?;
            let model = match (&checkpoint, method) {
                (Some(path), Method::Jdsi) => Some(load_model(&kv, path, None)?),
                (None, Method::Jdsi) => {
                    return Err(Error::Scenario("method jdsi requires --checkpoint".into()))
                }
                _ => None,
            };
            let outcome =
                scenario::reconstruct_method(method, maps_source, s, &mask, model.as_ref())?;
            scenario::write_recon_container(&out, s, &mask, &outcome)?;
            println!(
                "recon sample {sample} via {}: rlne {:.4}, psnr {:.2} dB, ssim {:.4} -> {}",
                method.name(),
                rlne(&outcome.image, &s.truth)?,
                psnr(&outcome.image, &s.truth)?,
                ssim(&outcome.image, &s.truth)?,
                out.display()
            );
        }
        Command::Train { cohort, out, seed, frozen_maps, config } => {
            let kv = config.kv()?;
            let cohort = load_cohort(&cohort)?;
            let mut cfg = JdsiConfig::from_kv(&kv)?;
            cfg.seed = kv.get_u64("seed", seed)?;
            cfg.coils = cohort.coils;
            cfg.height = cohort.height;
            cfg.width = cohort.width;
            let external = match frozen_maps.as_deref() {
                Some("acs") => {
                    cfg.maps_mode = MapsMode::FrozenExternal;
                    Some(MapsSource::Acs)
                }
                Some("jsense") => {
                    cfg.maps_mode = MapsMode::FrozenExternal;
                    Some(MapsSource::Jsense)
                }
                Some(other) => {
                    return Err(Error::Config(format!("unknown frozen maps source '{other}'")))
                }
                None => None,
            };
            let setting = training_setting(cohort.width);
            println!(
                "training set: {} samples at AF {} / ACS {} masks",
                cohort.train.len(),
                setting.af,
                setting.acs
            );
            let train_set =
                scenario::training_samples(&cohort, &setting, cfg.seed, external)?;
            let val_set = scenario::eval_samples(&cohort, &setting, cfg.seed, external)?;
            let mut model: JdsiModel<f32> = JdsiModel::new(cfg)?;
            let history = jdsi::train(&mut model, &train_set, &val_set, Some(&out))?;
            std::fs::write(out.join("history.csv"), history.csv())?;
            let last = history.records.last().expect("at least one epoch");
            println!(
                "trained {} epochs: train loss {:.4}, val rlne {:.4}, checkpoints in {}",
                history.records.len(),
                last.train_loss,
                last.val_rlne.unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Eval { recon } => {
            let records = container_read(&recon)?;
            let image = find(&records, "recon")?.to_image()?;
            let truth = find(&records, "truth")?.to_image()?;
            println!("rlne,psnr_db,ssim");
            let p = psnr(&image, &truth)?;
            println!(
                "{:.6},{},{:.6}",
                rlne(&image, &truth)?,
                if p.is_infinite() { "inf".to_string() } else { format!("{p:.6}") },
                ssim(&image, &truth)?
            );
        }
        Command::Scenario {
            name,
            cohort,
            out,
            seed,
            methods,
            maps,
            checkpoint,
            checkpoint_jsense_frozen,
            checkpoint_acs_frozen,
            config,
        } => {
            let kv = config.kv()?;
            let name: ScenarioName = name.parse()?;
            let cohort = load_cohort(&cohort)?;
            let maps_source: MapsSource = maps.parse()?;
            let method_list: Vec<(Method, MapsSource)> = methods
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|m| Ok((m.trim().parse()?, maps_source)))
                .collect::<Result<_>>()?;
            let mut models: Vec<(String, JdsiModel<f32>)> = Vec::new();
            if method_list.iter().any(|(m, _)| *m == Method::Jdsi) {
                let path = checkpoint.as_ref().ok_or_else(|| {
                    Error::Scenario("scenario with jdsi needs --checkpoint".into())
                })?;
                models.push(("jdsi".into(), load_model(&kv, path, None)?));
                if name == ScenarioName::AcsSweep {
                    if let Some(path) = &checkpoint_jsense_frozen {
                        models.push((
                            "jdsi-jsense".into(),
                            load_model(&kv, path, Some(MapsMode::FrozenExternal))?,
                        ));
                    }
                    if let Some(path) = &checkpoint_acs_frozen {
                        models.push((
                            "jdsi-acs".into(),
                            load_model(&kv, path, Some(MapsMode::FrozenExternal))?,
                        ));
                    }
                }
            }
            let model_refs: Vec<(String, &JdsiModel<f32>)> =
                models.iter().map(|(l, m)| (l.clone(), m)).collect();
            let run = ScenarioRun {
                name,
                cohort: &cohort,
                methods: method_list,
                models: model_refs,
                out_dir: Some(&out),
                mask_seed: seed,
            };
            let report = run_scenario(&run)?;
            for (mean, std) in &report.aggregates {
                println!(
                    "{} af {} acs {}: {} rlne {:.4}±{:.4}, psnr {:.2}±{:.2}, ssim {:.4}±{:.4}",
                    mean.scenario,
                    mean.af,
                    mean.acs,
                    mean.method,
                    mean.rlne,
                    std.rlne,
                    mean.psnr_db,
                    std.psnr_db,
                    mean.ssim,
                    std.ssim
                );
            }
            println!("scenario outputs in {}", out.display());
            if name == ScenarioName::AcsSweep {
                let settings = acs_sweep_settings(cohort.width);
                let first = settings.first().map(|s| s.acs).unwrap_or(0);
                let last = settings.last().map(|s| s.acs).unwrap_or(0);
                for label in ["jdsi", "jdsi-jsense", "jdsi-acs"] {
                    if let (Some(a), Some(b)) = (
                        report.group_mean("acs-sweep", label, 4.0, first),
                        report.group_mean("acs-sweep", label, 4.0, last),
                    ) {
                        println!(
                            "{label}: rlne degradation {first}->{last} lines = {:.4}",
                            b.rlne - a.rlne
                        );
                    }
                }
            }
        }
        Command::Report { scenario_csv, out } => {
            let text = std::fs::read_to_string(&scenario_csv)?;
            let mut rows = Vec::new();
            for line in text.lines().skip(1) {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 8 || f[4] == "ALL" {
                    continue;
                }
                let parse = |s: &str| -> Result<f64> {
                    if s == "inf" {
                        Ok(f64::INFINITY)
                    } else {
                        s.parse().map_err(|e| Error::Scenario(format!("bad metric '{s}': {e}")))
                    }
                };
                rows.push(scenario::MetricRow {
                    scenario: f[0].into(),
                    method: f[1].into(),
                    af: parse(f[2])?,
                    acs: f[3]
                        .parse()
                        .map_err(|e| Error::Scenario(format!("bad ACS '{}': {e}", f[3])))?,
                    sample_id: f[4].into(),
                    rlne: parse(f[5])?,
                    psnr_db: parse(f[6])?,
                    ssim: parse(f[7])?,
                });
            }
            let report = MetricsReport::from_rows(rows);
            std::fs::write(&out, report.csv())?;
            println!(
                "report: {} per-sample rows, {} aggregates -> {}",
                report.rows.len(),
                report.aggregates.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() {
    parmri::nn::tune_allocator();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error code={} msg=\"{}\"", err.code(), err);
        std::process::exit(1);
    }
}
