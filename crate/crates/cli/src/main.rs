//! `seiswass` command-line front end. Every command writes its data into
//! `--out` and its diagnostics to standard error.
//!
//! Settings come from, in increasing precedence: built-in defaults, the
//! `--config` file, then the flags.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seiswass::config::KeyValues;
use seiswass::grid::GridField;
use seiswass::inversion::{
    invert, scan_surface, wavelet_sweep, write_sweep_csv, MisfitConfig, NelderMeadOptions, NoiseMode, NoiseOptions,
    ScanAxis,
};
use seiswass::preprocess::SignedSignal;
use seiswass::seismic::{synthesize_panel, LayerModel, Noisy, WaveletGeometry};
use seiswass::transport2d::{displacement_field, l2_squared, w2_signed};
use seiswass::{Error, Result};

#[derive(Parser)]
#[command(name = "seiswass", version, about = "Quadratic Wasserstein misfits for gridded seismic signals")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Flat `key = value` settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for surface scans (0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Use the filtered higher-order scheme.
    #[arg(long, global = true)]
    filtered: bool,
    #[arg(long, global = true)]
    theta_rel: Option<f64>,
    #[arg(long, global = true)]
    sigma_rel: Option<f64>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Newton tolerance on the max-norm residual.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Signed W2^2 and L2^2 between two field CSVs; writes w2.json.
    W2 { f: PathBuf, g: PathBuf },
    /// Displacement field of the positive parts; writes displacement.csv and register.json.
    Register {
        f: PathBuf,
        g: PathBuf,
        /// Keep vectors inside the artificial layer.
        #[arg(long)]
        no_threshold: bool,
    },
    /// Synthetic two-layer panel; writes panel.csv and model.json.
    Synth {
        /// Layer parameters `d1,d2,v1,v2`.
        #[arg(long, default_value = "1,0.5,1,1.5", value_parser = parse_model)]
        model: LayerModel,
        /// Uniform noise amplitude relative to the panel maximum.
        #[arg(long, default_value_t = 0.0)]
        noise_rel: f64,
    },
    /// Misfits between a Ricker wavelet and its shifts; writes sweep.csv.
    WaveletSweep {
        #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
        s_min: f64,
        #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
        s_max: f64,
        #[arg(long, default_value_t = 61)]
        count: usize,
        /// none, source or both.
        #[arg(long, default_value = "none")]
        noise: NoiseMode,
        #[arg(long, default_value_t = 0.1)]
        noise_rel: f64,
    },
    /// Misfit landscape over two parameters; writes surface.csv.
    Surface {
        /// `param:min:max:count`.
        #[arg(long, default_value = "d1:0.6:1.4:17", value_parser = parse_axis)]
        axis1: ScanAxis,
        #[arg(long, default_value = "v1:0.7:1.3:17", value_parser = parse_axis)]
        axis2: ScanAxis,
        /// Model supplying the two parameters not scanned.
        #[arg(long, default_value = "1,0.5,1,1.5", value_parser = parse_model)]
        base: LayerModel,
        /// Model that generates the reference panel.
        #[arg(long, default_value = "1,0.5,1,1.5", value_parser = parse_model)]
        truth: LayerModel,
    },
    /// Nelder-Mead recovery of the layer parameters; writes invert.json.
    Invert {
        #[arg(long, default_value = "1.2,0.4,0.9,1.6", value_parser = parse_model)]
        start: LayerModel,
        #[arg(long, default_value = "1,0.5,1,1.5", value_parser = parse_model)]
        truth: LayerModel,
        #[arg(long, default_value_t = 500)]
        max_evals: usize,
    },
}

fn parse_model(s: &str) -> std::result::Result<LayerModel, String> {
    let p: Vec<f64> = s.split(',').map(|v| v.trim().parse::<f64>()).collect::<std::result::Result<_, _>>()
        .map_err(|e| format!("{s:?}: {e}"))?;
    LayerModel::from_slice(&p).map_err(|e| e.to_string())
}

fn parse_axis(s: &str) -> std::result::Result<ScanAxis, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [p, min, max, count] = parts[..] else {
        return Err(format!("{s:?}: expected param:min:max:count"));
    };
    let num = |v: &str| v.parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    let count = count.parse().map_err(|e| format!("{count:?}: {e}"))?;
    ScanAxis::new(p.parse().map_err(|e: Error| e.to_string())?, num(min)?, num(max)?, count).map_err(|e| e.to_string())
}

impl Common {
    fn misfit_config(&self) -> Result<MisfitConfig> {
        let mut cfg = MisfitConfig::default();
        if let Some(path) = &self.config {
            let kv = KeyValues::read(path)?;
            kv.apply_preprocess(&mut cfg.preprocess)?;
            kv.apply_solver(&mut cfg.solver)?;
        }
        if let Some(v) = self.theta_rel {
            cfg.preprocess.theta_rel = v;
        }
        if let Some(v) = self.sigma_rel {
            cfg.preprocess.sigma_rel = v;
        }
        if let Some(v) = self.delta {
            cfg.solver.delta = Some(v);
        }
        if let Some(v) = self.tol {
            cfg.solver.newton_tol = v;
        }
        if self.filtered {
            cfg.solver.use_filtered = true;
        }
        cfg.preprocess.validate()?;
        cfg.solver.validate()?;
        Ok(cfg)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        std::fs::create_dir_all(&self.out)?;
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    fn write_json(&self, name: &str, v: &serde_json::Value) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, v).map_err(std::io::Error::from)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

fn read_field(path: &Path) -> Result<GridField> {
    let file = File::open(path).map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))?;
    GridField::read_csv(BufReader::new(file)).map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))
}

fn run(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    let cfg = c.misfit_config()?;
    match &cli.command {
        Command::W2 { f, g } => {
            let (f, g) = (read_field(f)?, read_field(g)?);
            let l2 = l2_squared(&f, &g)?;
            let t = w2_signed(&SignedSignal(f), &SignedSignal(g), &cfg.preprocess, &cfg.solver)?;
            c.write_json(
                "w2.json",
                &serde_json::json!({
                    "w2_squared": t.w2_squared,
                    "l2_squared": l2,
                    "solver_report": t.summary_json(),
                }),
            )
        }
        Command::Register { f, g, no_threshold } => {
            let (f, g) = (read_field(f)?, read_field(g)?);
            let t = w2_signed(&SignedSignal(f), &SignedSignal(g), &cfg.preprocess, &cfg.solver)?;
            let plus = t.plus.as_ref().ok_or_else(|| Error::InvalidParameter("signals have no positive part".into()))?;
            let field = displacement_field(&plus.potential, &plus.pair, !no_threshold);
            let mut w = c.create("displacement.csv")?;
            field.write_csv(&mut w)?;
            w.flush()?;
            c.write_json(
                "register.json",
                &serde_json::json!({ "w2_squared_plus": plus.w2_squared, "solver_report": plus.report }),
            )
        }
        Command::Synth { model, noise_rel } => {
            let mut panel = synthesize_panel(model, &cfg.geometry)?;
            if *noise_rel != 0.0 {
                panel = panel.add_noise(noise_rel * panel.max_abs(), c.seed);
            }
            let mut w = c.create("panel.csv")?;
            panel.write_csv(&mut w)?;
            w.flush()?;
            c.write_json("model.json", &serde_json::to_value(model).expect("plain struct"))
        }
        Command::WaveletSweep { s_min, s_max, count, noise, noise_rel } => {
            if *count == 0 {
                return Err(Error::InvalidParameter("count must be at least 1".into()));
            }
            let step = if *count == 1 { 0.0 } else { (s_max - s_min) / (*count - 1) as f64 };
            let shifts: Vec<f64> = (0..*count).map(|k| s_min + k as f64 * step).collect();
            let noise = NoiseOptions { mode: *noise, amplitude_rel: *noise_rel, seed: c.seed };
            let rows = wavelet_sweep(&WaveletGeometry::default(), &shifts, &noise)?;
            let mut w = c.create("sweep.csv")?;
            write_sweep_csv(&rows, &mut w)?;
            w.flush()?;
            Ok(())
        }
        Command::Surface { axis1, axis2, base, truth } => {
            let panel = synthesize_panel(truth, &cfg.geometry)?;
            let s = scan_surface(*axis1, *axis2, base, &panel, &cfg, c.jobs)?;
            if s.failed_cells() > 0 {
                eprintln!("seiswass: {} of {} cells failed", s.failed_cells(), s.w2_values.len());
            }
            let mut w = c.create("surface.csv")?;
            s.write_csv(&mut w)?;
            w.flush()?;
            Ok(())
        }
        Command::Invert { start, truth, max_evals } => {
            let panel = synthesize_panel(truth, &cfg.geometry)?;
            let opts = NelderMeadOptions { max_evals: *max_evals, ..NelderMeadOptions::default() };
            let r = invert(start, &panel, &cfg, &opts)?;
            if !r.converged {
                eprintln!("seiswass: stopped after {} evaluations without meeting the tolerances", r.evals);
            }
            c.write_json("invert.json", &serde_json::to_value(&r).expect("plain struct"))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("seiswass: {e}");
            ExitCode::from(if e.is_solver_failure() { 1 } else { 2 })
        }
    }
}
