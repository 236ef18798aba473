//! `autorpa`: build, test, replay, inspect and check from one config file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use autorpa_core::bank::{Bank, Layer};
use autorpa_core::config::{BackendKind, Config};
use autorpa_core::dsl;
use autorpa_core::pipeline::{self, BuildState, Mode, Sessions, TestReport};

#[derive(Parser, Debug)]
#[command(name = "autorpa", version, about = "Build and test RPA programs distilled from GUI-agent runs")]
struct Cli {
    #[arg(long, global = true, default_value = "autorpa.toml")]
    config: PathBuf,
    /// Test mode: autorpa, code_only or react.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Task types processed in parallel.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Comma-separated test seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Overrides backend.kind.
    #[arg(long, global = true)]
    backend: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Build a program for every selected task type.
    Build,
    /// Test the stored builds and write a report.
    Test,
    /// Re-run stored trajectories on fresh instances and diff the screens.
    Replay {
        /// All trajectories when omitted.
        traj_id: Option<String>,
    },
    /// Print a stored trajectory, or list them all.
    Inspect {
        traj_id: Option<String>,
        /// bottom, middle or top.
        #[arg(long)]
        layer: Option<String>,
        /// 1-based block of the bottom layer.
        #[arg(long)]
        step: Option<usize>,
    },
    /// Parse and statically check a program file.
    Check { file: PathBuf },
}

/// Bad input: exit status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.is::<Usage>() { 2 } else { 1 })
        }
    }
}

fn run(cli: &Cli) -> Result<u8> {
    match &cli.cmd {
        Cmd::Check { file } => cmd_check(file),
        Cmd::Build => cmd_build(cli, &load(cli)?),
        Cmd::Test => cmd_test(cli, &load(cli)?),
        Cmd::Replay { traj_id } => cmd_replay(&load(cli)?, traj_id.as_deref()),
        Cmd::Inspect { traj_id, layer, step } => cmd_inspect(&load(cli)?, traj_id.as_deref(), layer.as_deref(), *step),
    }
}

fn load(cli: &Cli) -> Result<Config> {
    let mut cfg = Config::load(&cli.config).map_err(|e| usage(e.to_string()))?;
    if let Some(b) = &cli.backend {
        cfg.backend.kind = BackendKind::parse(b).ok_or_else(|| usage(format!("unknown backend {b:?}")))?;
    }
    if let Some(s) = &cli.seeds {
        cfg.test.seeds = s.clone();
    }
    if let Some(m) = &cli.mode {
        match Mode::parse(m) {
            Some(Mode::CodeOnly) => cfg.modes.code_only = true,
            Some(Mode::Autorpa) => cfg.modes.code_only = false,
            Some(Mode::React) => {}
            None => return Err(usage(format!("unknown mode {m:?}"))),
        }
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if cli.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    Ok(cfg)
}

fn test_mode(cli: &Cli, cfg: &Config) -> Mode {
    cli.mode.as_deref().and_then(Mode::parse).unwrap_or_else(|| cfg.test_mode())
}

/// Applies `f` to every item on at most `jobs` threads; results keep item order.
fn parallel<T: Send>(items: &[String], jobs: usize, f: impl Fn(&str) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<T>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                out.lock().expect("result slot")[i] = Some(r);
            });
        }
    });
    out.into_inner().expect("results").into_iter().map(|r| r.expect("every item ran")).collect()
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run_dir(cfg: &Config, command: &str, extra: &[String]) -> Result<PathBuf> {
    let dir = cfg.output_dir().join(format!("{command}-{}", cfg.run_stamp(command, extra)));
    if dir.exists() {
        fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn manifest(cfg: &Config, command: &str, task_types: &[String], body: serde_json::Value) -> serde_json::Value {
    json!({
        "command": command,
        "backend": cfg.backend.kind.as_str(),
        "config": cfg,
        "task_types": task_types,
        "result": body,
    })
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializes");
    s.push('\n');
    s
}

fn cmd_build(cli: &Cli, cfg: &Config) -> Result<u8> {
    let tasks = cfg.task_set().map_err(|e| usage(e.to_string()))?;
    let types = cfg.selected_types(&tasks).map_err(|e| usage(e.to_string()))?;
    cfg.check_fixtures(&types, &["build".to_string()]).map_err(|e| usage(e.to_string()))?;
    let sessions = cfg.sessions(&tasks);
    let pcfg = cfg.pipeline();
    let bank_root = cfg.bank_dir();
    let builds_dir = cfg.builds_dir();

    let results = parallel(&types, cli.jobs, |t| -> Result<BuildState> {
        let bank_dir = bank_root.join(t);
        if bank_dir.exists() {
            fs::remove_dir_all(&bank_dir).with_context(|| format!("clearing {}", bank_dir.display()))?;
        }
        let mut bank = Bank::open(&bank_dir)?;
        let gw = sessions.open(t, "build")?;
        let state = pipeline::build_task_type(&tasks, t, &gw, &mut bank, &pcfg);
        gw.finish()?;
        let state = state?;
        write(&builds_dir.join(format!("{t}.json")), &pretty(&state))?;
        Ok(state)
    });

    let dir = run_dir(cfg, "build", &[])?;
    let mut rows = Vec::new();
    let mut failed = false;
    println!("{:<16} {:<16} {:>11} {:>13}  reason", "task type", "status", "refinements", "builder calls");
    for (t, r) in types.iter().zip(&results) {
        match r {
            Ok(s) => {
                let status = serde_json::to_value(s.status)?;
                println!(
                    "{:<16} {:<16} {:>11} {:>13}  {}",
                    t,
                    status.as_str().unwrap_or("?"),
                    s.refinements_used,
                    s.builder_calls,
                    s.reason.as_deref().unwrap_or("")
                );
                rows.push(json!({
                    "task_type_id": t,
                    "status": status,
                    "reason": s.reason,
                    "refinements_used": s.refinements_used,
                    "builder_calls": s.builder_calls,
                    "trajectories": s.trajectories.len(),
                    "build_file": builds_dir.join(format!("{t}.json")),
                }));
            }
            Err(e) => {
                failed = true;
                println!("{t:<16} {:<16} {:>11} {:>13}  {e:#}", "error", "-", "-");
                rows.push(json!({ "task_type_id": t, "error": format!("{e:#}") }));
            }
        }
    }
    write(&dir.join("manifest.json"), &pretty(&manifest(cfg, "build", &types, json!({ "bank": bank_root, "builds": rows }))))?;
    println!("run directory: {}", dir.display());
    Ok(u8::from(failed))
}

fn load_builds(cfg: &Config, types: &[String]) -> Result<Vec<BuildState>> {
    let dir = cfg.builds_dir();
    let mut out = Vec::new();
    for t in types {
        let p = dir.join(format!("{t}.json"));
        if !p.is_file() {
            continue;
        }
        let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        out.push(serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?);
    }
    if out.is_empty() {
        return Err(usage(format!("no builds found in {}; run `autorpa build` first", dir.display())));
    }
    Ok(out)
}

fn cmd_test(cli: &Cli, cfg: &Config) -> Result<u8> {
    let tasks = cfg.task_set().map_err(|e| usage(e.to_string()))?;
    let types = cfg.selected_types(&tasks).map_err(|e| usage(e.to_string()))?;
    let builds = load_builds(cfg, &types)?;
    let types: Vec<String> = builds.iter().map(|b| b.task_type_id.clone()).collect();
    let mode = test_mode(cli, cfg);
    cfg.check_fixtures(&types, &[mode.session(), Mode::React.session()]).map_err(|e| usage(e.to_string()))?;
    let sessions = cfg.sessions(&tasks);
    let pcfg = cfg.pipeline();
    let seeds = cfg.test.seeds.clone();

    let results = parallel(&types, cli.jobs, |t| {
        let b = builds.iter().find(|b| b.task_type_id == t).expect("build loaded");
        pipeline::test_task_type(&tasks, b, &seeds, mode, &pcfg, &sessions)
    });
    let mut per_type = Vec::new();
    for (t, r) in types.iter().zip(results) {
        per_type.push(r.with_context(|| format!("testing {t}"))?);
    }
    let report = TestReport::assemble(mode, &seeds, per_type, pcfg.lambda);

    let builds_text: Vec<String> = builds.iter().map(pretty).collect();
    let mut extra = vec![mode.as_str().to_string()];
    extra.extend(builds_text);
    let dir = run_dir(cfg, "test", &extra)?;
    let table = report.table();
    write(&dir.join("report.json"), &pretty(&report))?;
    write(&dir.join("report.txt"), &table)?;
    let violations = report.violations(cfg.test.min_success_rate, cfg.test.max_token_ratio);
    let body = json!({
        "mode": mode.as_str(),
        "seeds": seeds,
        "report": "report.json",
        "table": "report.txt",
        "success_rate": report.success_rate,
        "token_ratio": report.token_ratio(),
        "violations": violations,
    });
    write(&dir.join("manifest.json"), &pretty(&manifest(cfg, "test", &types, body)))?;
    print!("{table}");
    for v in &violations {
        println!("threshold violated: {v}");
    }
    println!("run directory: {}", dir.display());
    Ok(u8::from(!violations.is_empty()))
}

/// Every per-type bank under the bank directory, in name order.
fn banks(cfg: &Config) -> Result<Vec<Bank>> {
    let root = cfg.bank_dir();
    let mut dirs: Vec<PathBuf> = match fs::read_dir(&root) {
        Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join("manifests").is_dir()).collect(),
        Err(_) => Vec::new(),
    };
    dirs.sort();
    dirs.iter().map(|d| Bank::open(d).with_context(|| format!("opening bank {}", d.display()))).collect()
}

fn find<'a>(banks: &'a [Bank], id: &str) -> Result<&'a Bank> {
    banks.iter().find(|b| b.get(id).is_ok()).ok_or_else(|| usage(format!("unknown trajectory {id}")))
}

fn cmd_replay(cfg: &Config, traj_id: Option<&str>) -> Result<u8> {
    let tasks = cfg.task_set().map_err(|e| usage(e.to_string()))?;
    let banks = banks(cfg)?;
    let targets: Vec<(&Bank, String)> = match traj_id {
        Some(id) => vec![(find(&banks, id)?, id.to_string())],
        None => banks.iter().flat_map(|b| b.ids().iter().map(move |id| (b, id.clone()))).collect(),
    };
    let mut any = false;
    for (bank, id) in &targets {
        let diffs = pipeline::replay(&tasks, bank.get(id)?)?;
        if diffs.is_empty() {
            println!("{id}: ok");
        }
        for d in &diffs {
            any = true;
            println!("{id}: step {}: expected {} found {}", d.step, d.expected, d.found);
        }
    }
    println!("{} trajectories replayed, {}", targets.len(), if any { "differences found" } else { "no differences" });
    Ok(u8::from(any))
}

fn cmd_inspect(cfg: &Config, traj_id: Option<&str>, layer: Option<&str>, step: Option<usize>) -> Result<u8> {
    let banks = banks(cfg)?;
    let Some(id) = traj_id else {
        for b in &banks {
            for id in b.ids() {
                let m = b.manifest(id)?;
                println!("{id}\t{}\t{} steps\treward {}", m.kind.as_str(), m.steps, m.reward);
            }
        }
        return Ok(0);
    };
    let bank = find(&banks, id)?;
    let text = match layer {
        None if step.is_none() => bank.describe(id)?,
        None => bank.layer(id, Layer::Bottom, step)?,
        Some(l) => {
            let l = Layer::parse(l).ok_or_else(|| usage(format!("unknown layer {l:?}; use bottom, middle or top")))?;
            bank.layer(id, l, step)?
        }
    };
    println!("{}", text.trim_end());
    Ok(0)
}

fn cmd_check(file: &Path) -> Result<u8> {
    let src = fs::read_to_string(file).map_err(|e| usage(format!("cannot read {}: {e}", file.display())))?;
    let program = match dsl::parse(&src) {
        Ok(p) => p,
        Err(e) => {
            println!("{}: {e}", file.display());
            return Ok(1);
        }
    };
    let diags = dsl::static_check(&program);
    for d in &diags {
        println!("{}: {d}", file.display());
    }
    if diags.is_empty() {
        println!("{}: ok", file.display());
    }
    Ok(u8::from(!diags.is_empty()))
}
