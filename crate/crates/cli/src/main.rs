//! Command-line front end. Every run starts from one resolved
//! configuration (file + flag overrides) that is echoed and written next
//! to the outputs, so any result can be reproduced from its own
//! directory.

mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;

use quadpolicy::dynamics::{integrate_step, DynamicsError, QuadParams, QuadState, RPM_TO_RAD};
use quadpolicy::env::{EnvError, QuadEnv};
use quadpolicy::eval::{
    rmse_after, run_tracking, ComparisonReport, ControllerScore, EvalError, PidController,
    PolicyController, StartCondition, TrackingController, Trajectory,
};
use quadpolicy::export::{
    generate_inference_source, load_weights, save_checkpoint, save_weights, weights_checksum,
    ExportError, Precision,
};
use quadpolicy::nn::NnError;
use quadpolicy::td3::{train, TrainError};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "quadpolicy",
    version,
    about = "Quadcopter flight-policy training, evaluation, and export"
)]
struct Cli {
    /// TOML run configuration; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the run seed (also reseeds the agent).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy; writes weights, checkpoints, and the learning curve.
    Train {
        /// Override the configured total environment steps.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Run tracking episodes with trained weights and report RMSE.
    Evaluate {
        #[arg(long)]
        weights: PathBuf,
        /// Trajectory kind override: "circle" or "hover".
        #[arg(long)]
        trajectory: Option<String>,
        /// Number of episodes (distinct noise seeds, same trajectory).
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Score controllers side by side on one trajectory and seed.
    Compare {
        /// Weights for the learned controller; required when "policy" is
        /// listed.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Comma-separated subset of: policy, pid.
        #[arg(long, default_value = "policy,pid")]
        controllers: String,
    },
    /// Generate self-contained C inference source from trained weights.
    Export {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, value_enum, default_value_t = PrecisionArg::F64)]
        precision: PrecisionArg,
        /// Output file; defaults to policy_<precision>.c in the out dir.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Integrate the open-loop dynamics under constant rotor setpoints.
    Simulate {
        /// Per-rotor speed setpoints [RPM], comma-separated; hover speed
        /// when omitted.
        #[arg(long)]
        rpm: Option<String>,
        /// Simulated time [s].
        #[arg(long, default_value_t = 2.0)]
        duration: f64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F64,
    F32,
}

/// Failures grouped by exit code: 2 configuration, 3 file handling,
/// 4 numerical trouble at run time.
#[derive(Debug)]
enum CliError {
    Config(String),
    Io(String),
    Divergence(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Io(m) | CliError::Divergence(m) => m,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ExportError> for CliError {
    fn from(e: ExportError) -> Self {
        match e {
            ExportError::Nn(inner) => CliError::Divergence(inner.to_string()),
            ExportError::NotActorShaped(_) => CliError::Config(e.to_string()),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(m) => CliError::Config(m.to_string()),
            other => CliError::Divergence(other.to_string()),
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::InvalidConfig(m) => CliError::Config(m.to_string()),
            other => CliError::Divergence(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::BadTrajectory(m) => CliError::Config(m.to_string()),
            EvalError::EmptyLog => CliError::Config(e.to_string()),
            EvalError::Env(inner) => inner.into(),
            EvalError::Nn(inner) => CliError::Divergence(inner.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        CliError::Divergence(e.to_string())
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::InvalidParam(m) => CliError::Config(m.to_string()),
            other => CliError::Divergence(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli)?;
    match cli.command {
        Command::Train { steps } => cmd_train(cfg, steps),
        Command::Evaluate {
            weights,
            trajectory,
            episodes,
        } => cmd_evaluate(cfg, &weights, trajectory, episodes),
        Command::Compare {
            weights,
            controllers,
        } => cmd_compare(cfg, weights.as_deref(), &controllers),
        Command::Export {
            weights,
            precision,
            file,
        } => cmd_export(cfg, &weights, precision, file),
        Command::Simulate { rpm, duration } => cmd_simulate(cfg, rpm.as_deref(), duration),
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg: RunConfig = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("in {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.td3.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.io.out_dir = out.display().to_string();
    }
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

/// Creates the output directory, echoes the resolved configuration, and
/// persists it next to the outputs.
fn prepare_run(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = PathBuf::from(&cfg.io.out_dir);
    fs::create_dir_all(&out)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", out.display())))?;
    let text = toml::to_string_pretty(cfg)
        .map_err(|e| CliError::Config(format!("serializing resolved config: {e}")))?;
    println!("# resolved configuration (seed {})\n{text}", cfg.seed);
    fs::write(out.join("resolved.toml"), &text)?;
    Ok(out)
}

fn trajectory_from(cfg: &RunConfig) -> Result<Trajectory, CliError> {
    let center = Vector3::new(cfg.eval.center[0], cfg.eval.center[1], cfg.eval.center[2]);
    let traj = match cfg.eval.trajectory.as_str() {
        "circle" => Trajectory::circle(cfg.eval.period, cfg.eval.radius, center, cfg.eval.duration),
        "hover" => Trajectory::hover(center, cfg.eval.duration),
        other => {
            return Err(CliError::Config(format!(
                "unknown trajectory kind {other:?}"
            )))
        }
    }?;
    Ok(traj)
}

fn start_condition(cfg: &RunConfig) -> StartCondition {
    if cfg.eval.start_on_ground {
        StartCondition::OnGround
    } else {
        StartCondition::AtReference
    }
}

fn cmd_train(mut cfg: RunConfig, steps: Option<u64>) -> Result<(), CliError> {
    if let Some(s) = steps {
        cfg.td3.total_steps = s;
    }
    cfg.validate().map_err(CliError::Config)?;
    let out = prepare_run(&cfg)?;

    let mut train_env = QuadEnv::new(cfg.physics.clone(), cfg.env.clone(), cfg.seed)?;
    let mut eval_env = QuadEnv::new(cfg.physics.clone(), cfg.env.clone(), cfg.seed ^ 1)?;

    let mut best_return = f64::NEG_INFINITY;
    let mut eval_count: u64 = 0;
    let mut deferred: Option<CliError> = None;
    let output = train(&mut train_env, &mut eval_env, &cfg.td3, |step, summary, agent| {
        eval_count += 1;
        println!(
            "step {step}: eval return {:.2}, mean dist {:.3} m, final dist {:.3} m",
            summary.mean_return, summary.mean_goal_distance, summary.mean_final_distance
        );
        if deferred.is_none() {
            if summary.mean_return > best_return {
                best_return = summary.mean_return;
                if let Err(e) = save_weights(&agent.actor, out.join("actor_best.qpw")) {
                    deferred = Some(e.into());
                }
            }
            let cadence = cfg.io.checkpoint_every_evals;
            if cadence > 0 && eval_count % cadence == 0 {
                if let Err(e) = save_checkpoint(agent, step, out.join("ckpt_latest.qpc")) {
                    deferred = Some(e.into());
                }
            }
        }
    })?;
    if let Some(e) = deferred {
        return Err(e);
    }

    save_weights(&output.agent.actor, out.join("actor_final.qpw"))?;
    save_checkpoint(&output.agent, cfg.td3.total_steps, out.join("ckpt_final.qpc"))?;

    let mut curve = String::from("step,mean_return,mean_pos_error,critic_loss,actor_loss\n");
    for row in &output.curve {
        curve.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.9}\n",
            row.step, row.mean_return, row.mean_pos_error, row.critic_loss, row.actor_loss
        ));
    }
    fs::write(out.join("curve.csv"), curve)?;

    println!(
        "trained {} steps; outputs in {}",
        cfg.td3.total_steps,
        out.display()
    );
    Ok(())
}

fn cmd_evaluate(
    mut cfg: RunConfig,
    weights: &Path,
    trajectory: Option<String>,
    episodes: Option<usize>,
) -> Result<(), CliError> {
    if let Some(t) = trajectory {
        cfg.eval.trajectory = t;
    }
    if let Some(n) = episodes {
        cfg.eval.episodes = n;
    }
    cfg.validate().map_err(CliError::Config)?;
    let out = prepare_run(&cfg)?;
    let traj = trajectory_from(&cfg)?;

    let actor = load_weights(weights)?;
    let expected = cfg.env.obs_dim();
    if actor.input_dim() != expected || actor.output_dim() != 4 {
        return Err(CliError::Config(format!(
            "weights are {}-in/{}-out but the configured environment needs {}-in/4-out",
            actor.input_dim(),
            actor.output_dim(),
            expected
        )));
    }
    let mut controller = PolicyController::new(actor);

    let mut metrics =
        String::from("episode,seed,rmse,rmse_xy,crashed,peak_speed,scored_samples\n");
    let mut scored: Vec<(f64, f64)> = Vec::new();
    for ep in 0..cfg.eval.episodes {
        let seed = cfg.seed.wrapping_add(ep as u64);
        let log = run_tracking(
            &mut controller,
            &traj,
            &cfg.physics,
            &cfg.env,
            seed,
            start_condition(&cfg),
        )?;
        let path = out.join(format!("track_{ep:03}.csv"));
        let mut file = fs::File::create(&path)?;
        log.write_csv(&mut file)?;
        let peak = log
            .rows
            .iter()
            .map(|r| r.velocity.norm())
            .fold(0.0, f64::max);
        match rmse_after(&log, cfg.eval.transient_skip) {
            Ok((e3, exy)) => {
                let n = log
                    .rows
                    .iter()
                    .filter(|r| r.t >= cfg.eval.transient_skip)
                    .count();
                println!(
                    "episode {ep}: rmse {:.4} m, rmse_xy {:.4} m, peak {:.3} m/s{}",
                    e3,
                    exy,
                    peak,
                    if log.crashed { " (crashed)" } else { "" }
                );
                metrics.push_str(&format!(
                    "{ep},{seed},{e3:.9},{exy:.9},{},{peak:.9},{n}\n",
                    log.crashed
                ));
                scored.push((e3, exy));
            }
            Err(EvalError::EmptyLog) => {
                println!("episode {ep}: crashed before the scoring window");
                metrics.push_str(&format!("{ep},{seed},nan,nan,true,{peak:.9},0\n"));
            }
            Err(e) => return Err(e.into()),
        }
    }
    fs::write(out.join("metrics.csv"), metrics)?;

    if scored.is_empty() {
        println!("no episode survived into the scoring window");
    } else {
        let n = scored.len() as f64;
        let mean3 = scored.iter().map(|s| s.0).sum::<f64>() / n;
        let meanxy = scored.iter().map(|s| s.1).sum::<f64>() / n;
        println!(
            "mean over {} scored episodes: rmse {:.4} m, rmse_xy {:.4} m",
            scored.len(),
            mean3,
            meanxy
        );
    }
    println!("logs in {}", out.display());
    Ok(())
}

fn cmd_compare(
    cfg: RunConfig,
    weights: Option<&Path>,
    controllers: &str,
) -> Result<(), CliError> {
    let out = prepare_run(&cfg)?;
    let traj = trajectory_from(&cfg)?;

    let names: Vec<&str> = controllers
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if names.is_empty() {
        return Err(CliError::Config("no controllers listed".to_string()));
    }

    let mut scores = Vec::new();
    for name in &names {
        let mut controller: Box<dyn TrackingController> = match *name {
            "policy" => {
                let path = weights.ok_or_else(|| {
                    CliError::Config("--weights is required for the policy controller".into())
                })?;
                let actor = load_weights(path)?;
                if actor.input_dim() != cfg.env.obs_dim() || actor.output_dim() != 4 {
                    return Err(CliError::Config(format!(
                        "weights are {}-in/{}-out but the environment needs {}-in/4-out",
                        actor.input_dim(),
                        actor.output_dim(),
                        cfg.env.obs_dim()
                    )));
                }
                Box::new(PolicyController::new(actor))
            }
            "pid" => Box::new(PidController::new(
                cfg.pid.clone(),
                cfg.physics.clone(),
                cfg.env.clone(),
            )),
            other => {
                return Err(CliError::Config(format!(
                    "unknown controller {other:?} (expected policy or pid)"
                )))
            }
        };
        let log = run_tracking(
            controller.as_mut(),
            &traj,
            &cfg.physics,
            &cfg.env,
            cfg.seed,
            start_condition(&cfg),
        )?;
        let mut file = fs::File::create(out.join(format!("track_{name}.csv")))?;
        log.write_csv(&mut file)?;
        let (e3, exy) = rmse_after(&log, cfg.eval.transient_skip)?;
        let peak = log
            .rows
            .iter()
            .filter(|r| r.t >= cfg.eval.transient_skip)
            .map(|r| r.velocity.norm())
            .fold(0.0, f64::max);
        scores.push(ControllerScore {
            name: name.to_string(),
            rmse: e3,
            rmse_xy: exy,
            crashed: log.crashed,
            peak_speed: peak,
        });
    }

    let report = ComparisonReport {
        scores,
        seed: cfg.seed,
        trajectory: format!(
            "{} (duration {} s)",
            cfg.eval.trajectory, cfg.eval.duration
        ),
        transient_skip: cfg.eval.transient_skip,
    };
    print!("{}", report.render());
    let mut csv = fs::File::create(out.join("comparison.csv"))?;
    report.write_csv(&mut csv)?;
    println!("report in {}", out.display());
    Ok(())
}

fn cmd_export(
    cfg: RunConfig,
    weights: &Path,
    precision: PrecisionArg,
    file: Option<PathBuf>,
) -> Result<(), CliError> {
    let out = prepare_run(&cfg)?;
    let actor = load_weights(weights)?;
    let (precision, suffix) = match precision {
        PrecisionArg::F64 => (Precision::F64, "f64"),
        PrecisionArg::F32 => (Precision::F32, "f32"),
    };
    let source = generate_inference_source(&actor, precision)?;
    let path = file.unwrap_or_else(|| out.join(format!("policy_{suffix}.c")));
    fs::write(&path, source)?;
    println!(
        "wrote {} (weights sha256 {})",
        path.display(),
        weights_checksum(&actor)
    );
    Ok(())
}

fn cmd_simulate(cfg: RunConfig, rpm: Option<&str>, duration: f64) -> Result<(), CliError> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(CliError::Config("duration must be positive".to_string()));
    }
    let out = prepare_run(&cfg)?;
    let params: &QuadParams = &cfg.physics;
    let hover_rpm = params.hover_speed() / RPM_TO_RAD;
    let setpoints_rpm: [f64; 4] = match rpm {
        Some(text) => {
            let vals: Vec<f64> = text
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Config(format!("bad --rpm list: {e}")))?;
            vals.as_slice()
                .try_into()
                .map_err(|_| CliError::Config("--rpm needs exactly four values".to_string()))?
        }
        None => [hover_rpm; 4],
    };
    let setpoints = setpoints_rpm.map(|r| r * RPM_TO_RAD);

    let dt = cfg.env.control_dt / cfg.env.substeps as f64;
    let control_steps = (duration / cfg.env.control_dt).round() as usize;
    let mut state = QuadState {
        position: Vector3::new(0.0, 0.0, 1.0),
        velocity: Vector3::zeros(),
        rotation: nalgebra::Matrix3::identity(),
        body_rates: Vector3::zeros(),
        rotor_speeds: setpoints,
    };

    let mut csv = String::from("t,x,y,z,vx,vy,vz,wx,wy,wz,m1,m2,m3,m4\n");
    let push_row = |t: f64, s: &QuadState, buf: &mut String| {
        buf.push_str(&format!(
            "{:.6},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.3},{:.3},{:.3},{:.3}\n",
            t,
            s.position.x,
            s.position.y,
            s.position.z,
            s.velocity.x,
            s.velocity.y,
            s.velocity.z,
            s.body_rates.x,
            s.body_rates.y,
            s.body_rates.z,
            s.rotor_speeds[0],
            s.rotor_speeds[1],
            s.rotor_speeds[2],
            s.rotor_speeds[3],
        ));
    };
    push_row(0.0, &state, &mut csv);
    for k in 0..control_steps {
        for sub in 0..cfg.env.substeps {
            state = integrate_step(&state, &setpoints, dt, params).map_err(|e| {
                CliError::Divergence(format!(
                    "integration failed at t={:.3}: {e}",
                    (k * cfg.env.substeps + sub) as f64 * dt
                ))
            })?;
        }
        push_row((k + 1) as f64 * cfg.env.control_dt, &state, &mut csv);
    }
    let path = out.join("sim.csv");
    fs::write(&path, csv)?;
    println!(
        "simulated {:.2} s under constant setpoints [{:.0}, {:.0}, {:.0}, {:.0}] RPM",
        duration, setpoints_rpm[0], setpoints_rpm[1], setpoints_rpm[2], setpoints_rpm[3]
    );
    println!(
        "final position ({:.4}, {:.4}, {:.4}) m, speed {:.4} m/s; log at {}",
        state.position.x,
        state.position.y,
        state.position.z,
        state.velocity.norm(),
        path.display()
    );
    let _ = std::io::stdout().flush();
    Ok(())
}
