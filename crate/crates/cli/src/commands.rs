use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sto_core::agents::train::{train as run_training, write_log};
use sto_core::agents::{scripted_drive, Algo, AgentConfig, Policy, Preset, TrainOptions};
use sto_core::config::{agent_config, RunConfig};
use sto_core::env::{EnvConfig, RewardWeights, TrainEnv};
use sto_core::guard::GuardConfig;
use sto_core::line::{LineError, LineProfile};
use sto_core::metrics::{self, ComparisonRow, Trajectory};
use sto_core::neural::Checkpoint;

use crate::exit::{Coded, VALIDATION};
use crate::{CaseArgs, CompareArgs, EvaluateArgs, Setup, SimulateArgs, TrainArgs};

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Coded(VALIDATION, msg.into()).into()
}

fn default_config(line: PathBuf) -> RunConfig {
    RunConfig {
        line,
        params: None,
        seed: None,
        output_dir: None,
        env: EnvConfig::default(),
        reward: RewardWeights::default(),
        guard: GuardConfig::default(),
        agent: AgentConfig::preset(Algo::Stod, Preset::Desk),
    }
}

fn resolve(setup: &Setup, default_line: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = match &setup.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let line = setup
                .line
                .clone()
                .or(default_line)
                .ok_or_else(|| invalid("either --config or --line is required"))?;
            default_config(line)
        }
    };
    if let Some(line) = &setup.line {
        cfg.line = line.clone();
    }
    if let Some(params) = &setup.params {
        cfg.params = Some(params.clone());
    }
    Ok(cfg)
}

fn load_line(cfg: &RunConfig, trip_time: Option<f64>) -> Result<LineProfile> {
    let line = cfg.load_line()?;
    match trip_time {
        Some(t) => Ok(line.with_planning_trip_time(t).map_err(LineError::Invalid)?),
        None => Ok(line),
    }
}

fn resolve_seed(flag: Option<u64>, cfg: &RunConfig) -> Result<u64> {
    if let Some(s) = flag.or(cfg.seed) {
        return Ok(s);
    }
    match std::env::var("STO_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| invalid(format!("STO_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn write_echo(path: &Path, cfg: &RunConfig, extra: &[(&str, toml::Value)]) -> Result<()> {
    let mut table = cfg.to_table();
    for (k, v) in extra {
        table.insert((*k).to_string(), v.clone());
    }
    let text = toml::to_string(&table).context("serializing config echo")?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn echo_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.config.toml"))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_speed_distance(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut out = String::from("s_m,v_mps\n");
    for (s, v) in traj.speed_distance() {
        let _ = writeln!(out, "{s},{v}");
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn validate_line(path: &Path) -> Result<()> {
    match LineProfile::load(path) {
        Ok(line) => {
            println!(
                "PASS {} ({} sections, {} m, {} s){}",
                path.display(),
                line.sections().len(),
                line.total_length_m(),
                line.planning_trip_time_s(),
                if line.is_approximate() { " [approximate]" } else { "" }
            );
            Ok(())
        }
        Err(e) => {
            println!("FAIL {}: {e}", path.display());
            Err(e.into())
        }
    }
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = resolve(&a.setup, None)?;
    let line = load_line(&cfg, a.trip_time)?;
    let trip = line.planning_trip_time_s();
    let mut env = cfg.build_env(line.clone())?;
    let (traj, model) = if a.agent == "scripted" {
        (scripted_drive(&mut env, trip)?.trajectory, "scripted".to_string())
    } else {
        let ck = Checkpoint::load(&a.agent)?;
        let policy = Policy::from_checkpoint(&ck)?;
        (policy.run(&env)?.0, policy.algo().to_string())
    };
    create_parent(&a.out)?;
    traj.save_csv(&a.out)?;
    write_echo(
        &echo_path(&a.out),
        &cfg,
        &[("agent_source", a.agent.clone().into()), ("trip_time_s", trip.into())],
    )?;
    let report = metrics::evaluate(&traj, &line)?;
    println!("{report}");
    if let Some(path) = &a.append {
        metrics::append_rows(path, &[report.to_row(a.model.as_deref().unwrap_or(&model), trip)])?;
    }
    Ok(())
}

struct Trained {
    policy: Policy,
    trajectory: Trajectory,
}

fn train_into(env: &TrainEnv, cfg: &RunConfig, agent: &AgentConfig, seed: u64, dir: &Path, wall_clock: bool) -> Result<Trained> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut echo_cfg = cfg.clone();
    echo_cfg.agent = agent.clone();
    echo_cfg.seed = Some(seed);
    let mut metadata = echo_cfg.to_table();
    metadata.insert("trip_time_s".into(), env.line().planning_trip_time_s().into());
    write_echo(&dir.join("config.toml"), &echo_cfg, &[("trip_time_s", env.line().planning_trip_time_s().into())])?;

    let opts = TrainOptions {
        wall_clock,
        output_dir: Some(dir.to_path_buf()),
        metadata: metadata.clone(),
    };
    let outcome = run_training(env, agent, seed, &opts, |row| {
        if row.episode % 25 == 0 || row.episode + 1 == agent.episodes {
            eprintln!(
                "[{} seed {}] episode {:>5}  return {:>10.1}  arrival {}  I_e {:>7.1}",
                agent.algo,
                seed,
                row.episode,
                row.episode_return,
                row.arrival_time_s.map_or("-".into(), |t| format!("{t:.1} s")),
                row.i_e
            );
        }
    })?;
    let log_path = dir.join("train_log.csv");
    write_log(fs::File::create(&log_path).with_context(|| format!("writing {}", log_path.display()))?, &outcome.log)?;
    outcome.final_policy.to_checkpoint(outcome.metadata.clone()).save(dir.join("final.ckpt"))?;
    if let Some(best) = &outcome.best {
        let mut meta = outcome.metadata.clone();
        meta.insert("episode".into(), toml::Value::Integer(best.episode as i64));
        best.policy.to_checkpoint(meta).save(dir.join("best.ckpt"))?;
    }
    let policy = outcome.selected_policy().clone();
    let (trajectory, _) = policy.run(env)?;
    trajectory.save_csv(dir.join("trajectory.csv"))?;
    Ok(Trained { policy, trajectory })
}

fn agent_from_flags(base: &AgentConfig, algo: Option<&str>, preset: Option<&str>, episodes: Option<usize>) -> Result<AgentConfig> {
    let algo: Algo = match algo {
        Some(a) => a.parse().map_err(invalid)?,
        None => base.algo,
    };
    let mut agent = match preset {
        Some(p) => agent_config(algo, p.parse().map_err(invalid)?, &toml::Table::new())?,
        None => AgentConfig { algo, ..base.clone() },
    };
    if let Some(n) = episodes {
        agent.episodes = n;
    }
    agent.validate()?;
    Ok(agent)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = resolve(&a.setup, None)?;
    let agent = agent_from_flags(&cfg.agent, a.algo.as_deref(), a.preset.as_deref(), a.episodes)?;
    let seed = resolve_seed(a.seed, &cfg)?;
    let line = load_line(&cfg, a.trip_time)?;
    let env = cfg.build_env(line.clone())?;
    let dir = a
        .out_dir
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{seed}", agent.algo)));
    let trained = train_into(&env, &cfg, &agent, seed, &dir, a.wall_clock)?;
    match metrics::evaluate(&trained.trajectory, &line) {
        Ok(report) => println!("{} (greedy): {report}", trained.policy.algo()),
        Err(e) => println!("{} (greedy): {e}", trained.policy.algo()),
    }
    println!("outputs in {}", dir.display());
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let cfg = resolve(&a.setup, None)?;
    let line = load_line(&cfg, a.trip_time)?;
    let (traj, default_model) = match (&a.checkpoint, &a.trajectory) {
        (Some(ck), _) => {
            let policy = Policy::from_checkpoint(&Checkpoint::load(ck)?)?;
            let env = cfg.build_env(line.clone())?;
            let (traj, _) = policy.run(&env)?;
            if let Some(out) = &a.out {
                create_parent(out)?;
                traj.save_csv(out)?;
            }
            (traj, policy.algo().to_string())
        }
        (None, Some(path)) => {
            let traj = Trajectory::load_csv(path, cfg.env.dt_s, line.planning_trip_time_s())?;
            let stem = path.file_stem().map_or_else(|| "trajectory".into(), |s| s.to_string_lossy().into_owned());
            (traj, stem)
        }
        (None, None) => return Err(invalid("give a trajectory CSV or --checkpoint")),
    };
    let report = metrics::evaluate(&traj, &line)?;
    println!("{report}");
    if let Some(path) = &a.append {
        let model = a.model.as_deref().unwrap_or(&default_model);
        metrics::append_rows(path, &[report.to_row(model, line.planning_trip_time_s())])?;
    }
    Ok(())
}

pub fn compare(a: CompareArgs) -> Result<()> {
    let mut rows: Vec<ComparisonRow> = Vec::new();
    for path in &a.inputs {
        let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        rows.extend(metrics::read_rows(file).with_context(|| format!("reading {}", path.display()))?);
    }
    if rows.is_empty() {
        return Err(invalid("no comparison rows in the inputs"));
    }
    metrics::sort_rows(&mut rows);
    if let Some(out) = &a.out {
        create_parent(out)?;
        metrics::write_rows(fs::File::create(out).with_context(|| format!("writing {}", out.display()))?, &rows)?;
    }
    print!("{}", metrics::format_table(&rows));
    Ok(())
}

pub fn case(a: CaseArgs) -> Result<()> {
    let line_file = if a.case == 3 { "ylbs_altered_gradient.toml" } else { "ylbs_approx.toml" };
    let mut cfg = resolve(&a.setup, Some(a.data_dir.join("lines").join(line_file)))?;
    if a.setup.line.is_none() && a.setup.config.is_some() && a.case == 3 {
        cfg.line = a.data_dir.join("lines").join(line_file);
    }
    let seed = resolve_seed(a.seed, &cfg)?;
    let times: &[f64] = if a.case == 2 { &[95.0, 115.0] } else { &[101.0] };
    let out_dir = a.out_dir.clone().unwrap_or_else(|| PathBuf::from(format!("runs/case{}", a.case)));
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_echo(&out_dir.join("config.toml"), &cfg, &[("case", i64::from(a.case).into()), ("seed", (seed as i64).into())])?;

    let mut rows = Vec::new();
    for &t in times {
        let line = load_line(&cfg, Some(t))?;
        let env = cfg.build_env(line.clone())?;
        let dir = out_dir.join(format!("t{t}"));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

        let run = scripted_drive(&mut env.clone(), t)?;
        run.trajectory.save_csv(dir.join("trajectory_scripted.csv"))?;
        write_speed_distance(&dir.join("speed_distance_scripted.csv"), &run.trajectory)?;
        let report = metrics::evaluate(&run.trajectory, &line)?;
        println!("[{t} s] scripted: {report}");
        rows.push(report.to_row("scripted", t));

        for algo in Algo::ALL {
            let agent = agent_from_flags(&cfg.agent, Some(algo.as_str()), a.preset.as_deref(), a.episodes)?;
            let trained = train_into(&env, &cfg, &agent, seed, &dir.join(algo.as_str()), false)?;
            write_speed_distance(&dir.join(format!("speed_distance_{algo}.csv")), &trained.trajectory)?;
            match metrics::evaluate(&trained.trajectory, &line) {
                Ok(report) => {
                    println!("[{t} s] {algo}: {report}");
                    rows.push(report.to_row(algo.as_str(), t));
                }
                Err(e) => eprintln!("[{t} s] {algo}: no comparison row ({e})"),
            }
        }
    }
    metrics::sort_rows(&mut rows);
    let table_path = out_dir.join("comparison.csv");
    metrics::write_rows(fs::File::create(&table_path).with_context(|| format!("writing {}", table_path.display()))?, &rows)?;
    print!("{}", metrics::format_table(&rows));
    Ok(())
}
