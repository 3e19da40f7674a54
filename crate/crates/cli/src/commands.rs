use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use qdistill::camera::CameraModel;
use qdistill::config::ExperimentConfig;
use qdistill::container::CorrelationContainer;
use qdistill::correlator::correlate;
use qdistill::distill::{direct_intensity_of, distill, DistillOptions, DistillationResult};
use qdistill::export::{read_csv, write_csv, write_pgm};
use qdistill::image::{pearson, Image};
use qdistill::qdif::{QdifHeader, QdifReader, QdifWriter};
use qdistill::simulate::simulate_stack;
use qdistill::snr::{measure_snr, snr_sweep};
use qdistill::Error;

use crate::{Cli, Command};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Data(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            ground_truth,
        } => simulate(&config, &out, seed, ground_truth.as_deref()),
        Command::Correlate { stack, window, out } => correlate_cmd(&stack, window, &out),
        Command::Distill {
            correlation,
            stack,
            config,
            ground_truth,
            object_truth,
            out,
        } => distill_cmd(
            &correlation,
            stack.as_deref(),
            config.as_deref(),
            ground_truth.as_deref(),
            object_truth.as_deref(),
            &out,
        ),
        Command::SnrSweep {
            config,
            ratios,
            seed,
            out,
        } => sweep(&config, &ratios, seed, &out),
        Command::Report { artifacts, config, out } => report(&artifacts, config.as_deref(), &out),
    }
}

fn simulate(config: &Path, out: &Path, seed: Option<u64>, truth_dir: Option<&Path>) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let seed = seed.unwrap_or(cfg.run.seed);
    let header = QdifHeader {
        grid: cfg.grid(),
        n_frames: cfg.run.frames,
        exposure_ms: cfg.run.exposure_ms,
    };
    let mut writer = QdifWriter::create(out, header)?;
    let summary = simulate_stack(&cfg.scene, &cfg.camera, cfg.run.frames, seed, &mut writer)?;
    writer.finish()?;
    if let Some(dir) = truth_dir {
        fs::create_dir_all(dir)?;
        let truth = cfg.scene.ground_truth(&cfg.camera);
        write_csv(dir.join("classical.csv"), &truth.classical)?;
        write_csv(dir.join("object4.csv"), &truth.object_fourth)?;
        write_csv(dir.join("quantum_direct.csv"), &truth.quantum_direct)?;
    }
    println!("frames = {}", summary.n_frames);
    println!("seed = {seed}");
    println!("mean_gray = {:.4}", summary.mean_gray);
    println!("clamped_pixels = {}", summary.clamped_pixels);
    println!("pair_photons_both = {}", summary.photons.pair_both);
    println!("pair_photons_single = {}", summary.photons.pair_single);
    println!("classical_photons = {}", summary.photons.classical);
    Ok(())
}

fn correlate_cmd(stack: &Path, window: usize, out: &Path) -> Result<()> {
    if window == 0 {
        return Err(CliError::Usage("--window must be at least 1".into()));
    }
    let mut reader = QdifReader::open(stack)?;
    let result = correlate(&mut reader, window)?;
    let container = CorrelationContainer::new(result, reader.digest());
    container.save(out)?;
    println!("frames = {}", container.result.n_frames());
    println!("window_radius = {window}");
    println!("source_sha256 = {}", container.source_hash_hex());
    Ok(())
}

/// Camera, distillation options and SNR radii (peak, exclusion) from an
/// optional configuration.
fn analysis_settings(config: Option<&Path>) -> Result<(CameraModel, DistillOptions, (usize, usize))> {
    match config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            let radii = (cfg.run.peak_radius, cfg.run.exclusion_radius);
            Ok((cfg.camera, cfg.run.distill_options(), radii))
        }
        None => Ok((CameraModel::default(), DistillOptions::default(), (1, 3))),
    }
}

/// Distillation of a correlation file, with the direct image recomputed
/// from the stack when one is given.
fn run_distill(
    container: &CorrelationContainer,
    stack: Option<&Path>,
    camera: &CameraModel,
    options: &DistillOptions,
    classical_truth: Option<&Image>,
) -> Result<DistillationResult> {
    let result = distill(&container.result, camera.noise_mean, classical_truth, options)?;
    if let Some(path) = stack {
        let mut reader = QdifReader::open(path)?;
        result.direct.grid().ensure_same(reader.header().grid)?;
        let direct = direct_intensity_of(&mut reader, camera.noise_mean)?;
        if reader.digest() != container.source_hash {
            return Err(CliError::Data(Error::Format(format!(
                "{} is not the stack this correlation was computed from",
                path.display()
            ))));
        }
        if direct != result.direct {
            return Err(CliError::Data(Error::Format(
                "stack mean disagrees with the stored marginal".into(),
            )));
        }
    }
    Ok(result)
}

fn export(dir: &Path, name: &str, image: &Image) -> Result<()> {
    write_pgm(dir.join(format!("{name}.pgm")), image)?;
    write_csv(dir.join(format!("{name}.csv")), image)?;
    Ok(())
}

fn export_distillation(dir: &Path, d: &DistillationResult) -> Result<()> {
    export(dir, "direct", &d.direct)?;
    export(dir, "quantum", &d.quantum.q)?;
    export(dir, "object", &d.quantum.object)?;
    export(dir, "classical", &d.classical.image)?;
    if let Some(r) = &d.residual {
        export(dir, "residual", r)?;
    }
    Ok(())
}

fn distillation_report(out: &mut String, d: &DistillationResult, options: &DistillOptions) {
    let _ = writeln!(out, "template = {:?}", options.template);
    let _ = writeln!(out, "scale = {}", d.classical.scale);
    let _ = writeln!(out, "calibration_pixels = {}", d.classical.calibration_pixels);
    let _ = writeln!(out, "quantum_significance = {:.3}", d.quantum.significance);
    let _ = writeln!(out, "no_quantum_signal = {}", d.quantum.no_signal);
    let _ = writeln!(out, "uncalibrated = {}", d.classical.uncalibrated);
    let _ = writeln!(out, "edge_pixels = {}", d.edges.iter().filter(|&&e| e).count());
}

fn load_truth(path: Option<&Path>, d: &Image) -> Result<Option<Image>> {
    path.map(|p| -> Result<Image> {
        let img = read_csv(p)?;
        d.grid().ensure_same(img.grid())?;
        Ok(img)
    })
    .transpose()
}

fn distill_cmd(
    correlation: &Path,
    stack: Option<&Path>,
    config: Option<&Path>,
    classical_truth: Option<&Path>,
    object_truth: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let container = CorrelationContainer::load(correlation)?;
    let (camera, options, _) = analysis_settings(config)?;
    let marginal = container.result.marginal();
    let classical_truth = load_truth(classical_truth, marginal)?;
    let object_truth = load_truth(object_truth, marginal)?;
    let d = run_distill(&container, stack, &camera, &options, classical_truth.as_ref())?;
    fs::create_dir_all(out)?;
    export_distillation(out, &d)?;

    let mut text = String::new();
    let _ = writeln!(text, "frames = {}", container.result.n_frames());
    let _ = writeln!(text, "window_radius = {}", container.result.window_radius());
    let _ = writeln!(text, "source_sha256 = {}", container.source_hash_hex());
    distillation_report(&mut text, &d, &options);
    if let Some(t) = &object_truth {
        let _ = writeln!(
            text,
            "pearson_quantum_object = {:.6}",
            pearson(d.quantum.q.as_slice(), t.as_slice(), None)
        );
    }
    if let Some(t) = &classical_truth {
        let keep: Vec<bool> = d.edges.iter().map(|e| !e).collect();
        let _ = writeln!(
            text,
            "pearson_classical = {:.6}",
            pearson(d.classical.image.as_slice(), t.as_slice(), Some(&keep))
        );
    }
    fs::write(out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn sweep(config: &Path, ratios: &[f64], seed: Option<u64>, out: &Path) -> Result<()> {
    if ratios.is_empty() {
        return Err(CliError::Usage("--ratios needs at least one value".into()));
    }
    if let Some(r) = ratios.iter().find(|r| !(**r >= 0.0 && r.is_finite())) {
        return Err(CliError::Usage(format!("ratio {r} is not a finite value >= 0")));
    }
    let cfg = ExperimentConfig::load(config)?;
    let settings = cfg.sweep_settings()?;
    let outcome = snr_sweep(&settings, &cfg.camera, ratios, seed.unwrap_or(cfg.run.seed))?;
    fs::create_dir_all(out)?;

    let mut csv = String::from("ratio,i_qu,i_cl,n_frames,peak,noise_std,snr,snr_se\n");
    for (i, p) in outcome.points.iter().enumerate() {
        let m = &p.measurement;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            p.point.ratio,
            p.point.i_qu,
            p.point.i_cl,
            p.point.n_frames,
            m.peak,
            m.noise_std,
            m.snr,
            m.standard_error()
        );
        export(out, &format!("minus_{i}"), &p.map.to_image())?;
    }
    fs::write(out.join("points.csv"), &csv)?;

    let mut text = String::new();
    match &outcome.fit {
        None => {
            let _ = writeln!(text, "fit = skipped (need at least two distinct ratios)");
        }
        Some(Err(e)) => {
            let _ = writeln!(text, "fit = failed: {e}");
        }
        Some(Ok(fit)) => {
            let _ = writeln!(text, "alpha = {:.6} +- {:.6}", fit.alpha, fit.alpha_se);
            let _ = writeln!(text, "beta = {:.6} +- {:.6}", fit.beta, fit.beta_se);
            let _ = writeln!(text, "r_squared = {:.6}", fit.r_squared);
        }
    }
    fs::write(out.join("fit.txt"), &text)?;
    print!("{csv}{text}");
    Ok(())
}

/// Reads the first four bytes of a file.
fn magic(path: &Path) -> Result<[u8; 4]> {
    use std::io::Read;
    let mut m = [0u8; 4];
    fs::File::open(path)?
        .read_exact(&mut m)
        .map_err(|_| Error::Format(format!("{}: file too short", path.display())))?;
    Ok(m)
}

fn report(artifacts: &[PathBuf], config: Option<&Path>, out: &Path) -> Result<()> {
    let missing: Vec<String> = artifacts
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Usage(format!("missing inputs: {}", missing.join(", "))));
    }
    let (camera, options, (peak, exclusion)) = analysis_settings(config)?;
    fs::create_dir_all(out)?;
    let mut text = String::new();
    for (i, path) in artifacts.iter().enumerate() {
        let stem = format!(
            "{i}_{}",
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        );
        let _ = writeln!(text, "[{}]", path.display());
        match &magic(path)? {
            b"QDIF" => {
                let mut reader = QdifReader::open(path)?;
                let h = *reader.header();
                let direct = direct_intensity_of(&mut reader, camera.noise_mean)?;
                let _ = writeln!(text, "kind = stack");
                let _ = writeln!(text, "size = {}x{}", h.grid.width, h.grid.height);
                let _ = writeln!(text, "frames = {}", h.n_frames);
                let _ = writeln!(text, "exposure_ms = {}", h.exposure_ms);
                let _ = writeln!(text, "mean_above_floor = {:.4}", direct.mean());
                let _ = writeln!(text, "sha256 = {}", hex(&reader.digest()));
                export(out, &format!("{stem}_direct"), &direct)?;
            }
            b"QDCR" => {
                let c = CorrelationContainer::load(path)?;
                let res = &c.result;
                let _ = writeln!(text, "kind = correlation");
                let _ = writeln!(text, "size = {}x{}", res.grid().width, res.grid().height);
                let _ = writeln!(text, "frames = {}", res.n_frames());
                let _ = writeln!(text, "window_radius = {}", res.window_radius());
                let _ = writeln!(text, "source_sha256 = {}", c.source_hash_hex());
                let map = res.minus_projection();
                match measure_snr(&map, peak, exclusion) {
                    Ok(m) => {
                        let _ = writeln!(text, "snr = {:.4}", m.snr);
                    }
                    Err(e) => {
                        let _ = writeln!(text, "snr = unavailable ({e})");
                    }
                }
                export(out, &format!("{stem}_minus"), &map.to_image())?;
                let d = distill(res, camera.noise_mean, None, &options)?;
                distillation_report(&mut text, &d, &options);
                fs::create_dir_all(out.join(&stem))?;
                export_distillation(&out.join(&stem), &d)?;
            }
            _ => {
                return Err(CliError::Data(Error::Format(format!(
                    "{}: neither a QDIF stack nor a correlation file",
                    path.display()
                ))))
            }
        }
        text.push('\n');
    }
    fs::write(out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
