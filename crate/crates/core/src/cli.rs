//! Command-line front end. [`dispatch`] returns the process exit code:
//! 0 on success or a passing study, 1 on a failing or inconclusive study or
//! a runtime failure, 2 on a usage or configuration error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::diagnostics::{ensemble_mean, step_balance, BalanceSample, DiagnosticsRecord};
use crate::dynamics::{ensemble, PathState};
use crate::error::{LlbError, Result};
use crate::experiments::{run_study, Status, StudyKind};
use crate::io::{
    fitting_tail_probe, load_checkpoint, load_config, save_checkpoint, write_report, write_series, write_text, Config,
    RunManifest,
};
use crate::noise::NoiseStream;

#[derive(Parser, Debug)]
#[command(name = "llb", version, about = "Stochastic LLB laboratory on a periodic 2-D box")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration (defaults apply to anything omitted)
    #[arg(long)]
    config: Option<PathBuf>,
    /// overrides `sim.seed`
    #[arg(long)]
    seed: Option<u64>,
    /// worker threads (results do not depend on this)
    #[arg(long, env = "LLB_THREADS")]
    threads: Option<usize>,
    /// output directory
    #[arg(long, default_value = "llb-out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate an ensemble and record diagnostics and final checkpoints
    Simulate {
        #[command(flatten)]
        common: Common,
        /// continue every path from checkpoints in this directory
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Vanishing-viscosity study over a δ ladder
    StudyViscosity(Common),
    /// Continuity in the noise strength
    StudyNoise(Common),
    /// Uniform smallness of tail masses
    StudyTail(Common),
    /// Dissipativity constants and H² integrals
    StudyDissipativity(Common),
    /// Invariant measures along an ε ladder
    StudyMeasure(Common),
    /// Moment and tail bounds of the invariant measures only
    StudyTightness(Common),
    /// Strong self-convergence of both schemes
    StudyConvergence(Common),
    /// Quick internal consistency checks
    SelfTest {
        #[arg(long, env = "LLB_THREADS")]
        threads: Option<usize>,
    },
}

/// Parse `argv` (including the program name) and run.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = match &cli.command {
        Command::Simulate { common, .. } => common.threads,
        Command::SelfTest { threads } => *threads,
        Command::StudyViscosity(c)
        | Command::StudyNoise(c)
        | Command::StudyTail(c)
        | Command::StudyDissipativity(c)
        | Command::StudyMeasure(c)
        | Command::StudyTightness(c)
        | Command::StudyConvergence(c) => c.threads,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 2;
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return 1;
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                LlbError::Config(_) | LlbError::Parameter(_) | LlbError::Summability(_) | LlbError::Resolution(_) => 2,
                _ => 1,
            }
        }
    }
}

fn run(cmd: Command) -> Result<i32> {
    let (kind, common) = match cmd {
        Command::Simulate { common, resume } => return simulate(&common, resume.as_deref()),
        Command::SelfTest { .. } => return self_test(),
        Command::StudyViscosity(c) => (StudyKind::Viscosity, c),
        Command::StudyNoise(c) => (StudyKind::NoiseContinuity, c),
        Command::StudyTail(c) => (StudyKind::TailUniformity, c),
        Command::StudyDissipativity(c) => (StudyKind::Dissipativity, c),
        Command::StudyMeasure(c) => (StudyKind::InvariantLimit, c),
        Command::StudyTightness(c) => (StudyKind::TightnessProbe, c),
        Command::StudyConvergence(c) => (StudyKind::SelfConvergence, c),
    };
    study(kind, &common)
}

fn config_for(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => load_config(p)?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.sim.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn finish(dir: &Path, command: &str, cfg: &Config, mut files: Vec<String>) -> Result<()> {
    write_text(&dir.join("config.resolved.toml"), &cfg.resolved_toml()?)?;
    files.push("config.resolved.toml".into());
    files.sort();
    let mut m = RunManifest::new(command, cfg)?;
    m.files = files;
    m.write(dir)
}

fn study(kind: StudyKind, common: &Common) -> Result<i32> {
    let cfg = config_for(common)?;
    let spec = cfg.study_spec(kind)?;
    let mut report = run_study(&spec)?;
    report.provenance.config_hash = cfg.hash()?;
    let files = write_report(&common.out, &report)?;
    finish(&common.out, kind.name(), &cfg, files)?;
    for v in &report.verdicts {
        println!("{:<13} {}: {}", format!("{:?}", v.outcome).to_uppercase(), v.name, v.detail);
    }
    println!("{}: {:?}", kind.name(), report.status);
    Ok(if report.status == Status::Pass { 0 } else { 1 })
}

fn simulate(common: &Common, resume: Option<&Path>) -> Result<i32> {
    let cfg = config_for(common)?;
    let sim = &cfg.sim;
    let stepper = sim.stepper::<f64>()?;
    let grid = stepper.grid().clone();
    let u0 = cfg.initial.build(&grid)?;
    let probe = fitting_tail_probe(&grid, &cfg.record.tail_radii)?;
    let every = ((cfg.record.sample_every / sim.dt).round() as u64).max(1);
    let total = sim.steps();
    let track = cfg.record.energy_residual;
    let runs = ensemble(sim.path_count, |path| {
        let mut state = match resume {
            Some(dir) => {
                let (s, h) = load_checkpoint::<f64>(&dir.join(checkpoint_name(path)))?;
                if h.stream != NoiseStream::new(sim.seed, path) || h.n != sim.n || h.half_width != sim.half_width {
                    return Err(LlbError::Config(format!(
                        "checkpoint for path {path} does not match this configuration"
                    )));
                }
                s
            }
            None => PathState::new(u0.clone(), NoiseStream::new(sim.seed, path))?,
        };
        let mut rec = vec![DiagnosticsRecord::of_state(&state, probe.as_ref())?];
        while state.step_index < total {
            let prev = track.then(|| state.u().clone());
            let incr = stepper.advance(&mut state)?;
            if state.step_index % every == 0 || state.step_index == total {
                let mut r = DiagnosticsRecord::of_state(&state, probe.as_ref())?;
                if let Some(u_prev) = prev {
                    let sample = BalanceSample {
                        u_prev,
                        u_next: state.u().clone(),
                        incr: incr.values,
                    };
                    r.energy_residual = step_balance(&sample, &stepper)?.abs();
                }
                rec.push(r);
            }
        }
        Ok((rec, state))
    })?;
    let dir = &common.out;
    let mut files = Vec::new();
    let series: Vec<Vec<DiagnosticsRecord>> = runs.iter().map(|r| r.0.clone()).collect();
    write_series(&dir.join("series/mean.csv"), &ensemble_mean(&series)?)?;
    files.push("series/mean.csv".to_string());
    for (path, (rec, state)) in runs.iter().enumerate() {
        if cfg.record.per_path {
            let name = format!("series/path_{path:04}.csv");
            write_series(&dir.join(&name), rec)?;
            files.push(name);
        }
        if cfg.record.checkpoints {
            let name = format!("checkpoints/{}", checkpoint_name(path as u64));
            save_checkpoint(state, sim.epsilon, sim.delta, &dir.join(&name))?;
            files.push(name);
        }
    }
    finish(dir, "simulate", &cfg, files)?;
    println!("simulate: {} paths to t = {} written to {}", sim.path_count, sim.t_final, dir.display());
    Ok(0)
}

fn checkpoint_name(path: u64) -> String {
    format!("path_{path:04}.llb")
}

fn self_test() -> Result<i32> {
    use crate::dynamics::SimConfig;
    use crate::field::{laplacian, VectorField};
    use crate::noise::NoiseSpec;

    let mut failures = 0;
    let mut check = |name: &str, ok: bool, detail: String| {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        failures += usize::from(!ok);
    };

    let cfg = SimConfig {
        n: 32,
        half_width: 8.0,
        dt: 0.01,
        t_final: 0.2,
        path_count: 2,
        noise: NoiseSpec {
            modes: 8,
            ..NoiseSpec::default()
        },
        ..SimConfig::default()
    };
    let stepper = cfg.stepper::<f64>()?;
    let grid = stepper.grid().clone();

    let k = std::f64::consts::PI / 8.0 * 3.0;
    let mode = VectorField::from_fn(&grid, |x, _| [(k * x).cos(), 0.0, 0.0]);
    let err = laplacian(&mode)?.add(&mode.scale(k * k))?.max_abs();
    check("laplacian_of_mode", err < 1e-10, format!("max error {err:.2e}"));

    let a = 0.7f64;
    let v = VectorField::constant(&grid, [a, 0.0, 0.0]);
    let reaction = SimConfig {
        epsilon: 0.0,
        ..cfg.clone()
    }
    .stepper::<f64>()?;
    let next = reaction.step(&PathState::new(v, NoiseStream::new(0, 0))?)?;
    let dt = cfg.dt;
    let exact = a * (-dt).exp() / (1.0 + a * a * (1.0 - (-2.0 * dt).exp())).sqrt();
    let got = next.u().at(0)[0];
    check("reaction_flow", (got - exact).abs() < 1e-13, format!("{got} vs {exact}"));

    let u0 = crate::initial::InitialCondition::bump(1.0, 1.0).build(&grid)?;
    let run = || -> Result<Vec<f64>> {
        ensemble(cfg.path_count, |p| {
            let s = crate::dynamics::integrate(
                PathState::new(u0.clone(), NoiseStream::new(cfg.seed, p))?,
                &stepper,
                cfg.t_final,
                &mut [],
            )?;
            Ok(s.u().l2_sq())
        })
    };
    let (r1, r2) = (run()?, run()?);
    check(
        "deterministic_replay",
        r1.iter().zip(&r2).all(|(x, y)| x.to_bits() == y.to_bits()),
        format!("{} paths", r1.len()),
    );

    Ok(if failures == 0 { 0 } else { 1 })
}
