use crate::config::ExperimentConfig;
use crate::CliError;
use ispg::evaluator::{
    compute_a, explicit_rhs, fisher_consistency_check, lemma_sweep, ne_gap, theorem_bound_check,
    BoundConstants, BoundReport, FISHER_MAX_ENTRIES, RESIDUAL_TOL,
};
use ispg::internal::make_window_spec;
use ispg::model::{build, save_model, validate_model, EnvKind, ModelFile};
use ispg::oracle::Oracle;
use ispg::policy::PolicyFile;
use ispg::trainer::{train, write_csv, TrainRecord};
use ispg::{InternalStateSpec, TabularPomg};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

/// Largest Fisher deviation `verify` accepts.
pub const FISHER_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    tool: String,
    version: String,
    seed: u64,
    n_agents: usize,
    discount: f64,
    phi_span: f64,
    eta: f64,
    m_hat: f64,
    final_potential: f64,
    records: usize,
    config: serde_json::Value,
}

fn setup(cfg: &ExperimentConfig) -> Result<(TabularPomg, InternalStateSpec), CliError> {
    if cfg.env.env == EnvKind::Custom {
        let path = cfg.env.model_path.as_deref().ok_or_else(|| {
            CliError::Validation("env.model_path is required for env = \"custom\"".into())
        })?;
        let mut file = ModelFile::read(path)?;
        let tables = file.compressor.take();
        let model = file.into_model()?;
        let spec = match tables {
            Some(t) => InternalStateSpec::from_tables(&model, t)?,
            None => make_window_spec(&model, cfg.train.t_w, cfg.train.chain_cap)?,
        };
        return Ok((model, spec));
    }
    let model = build(&cfg.env)?;
    let spec = make_window_spec(&model, cfg.train.t_w, cfg.train.chain_cap)?;
    Ok((model, spec))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Compute(format!("cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Compute(format!("cannot write {}: {e}", path.display())))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

fn pretty(value: &impl Serialize) -> Result<String, CliError> {
    let mut s =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Compute(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// The config as written next to a run. `out` is dropped so that the same
/// experiment written to two directories produces identical files.
fn recorded_config(cfg: &ExperimentConfig) -> Result<(String, serde_json::Value), CliError> {
    let mut table: toml::Table =
        toml::Table::try_from(cfg).map_err(|e| CliError::Compute(format!("config: {e}")))?;
    table.remove("out");
    let text = toml::to_string(&table).map_err(|e| CliError::Compute(format!("config: {e}")))?;
    let mut value = serde_json::to_value(cfg).map_err(|e| CliError::Compute(e.to_string()))?;
    if let Some(map) = value.as_object_mut() {
        map.remove("out");
    }
    Ok((text, value))
}

pub fn train_run(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let (model, spec) = setup(cfg)?;
    let tc = cfg.train_config()?;
    let outcome = train(&model, &spec, &tc)?;
    create_dir(&cfg.out)?;

    let mut csv = Vec::new();
    write_csv(&mut csv, &outcome.records)?;
    write(&cfg.out.join("metrics.csv"), csv)?;
    write(
        &cfg.out.join("policy.json"),
        PolicyFile::from_policy(&outcome.policy, &spec, &model).to_json()?,
    )?;
    let (toml_text, config) = recorded_config(cfg)?;
    write(&cfg.out.join("config.toml"), toml_text)?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        n_agents: model.n_agents(),
        discount: model.discount(),
        phi_span: model.phi_span(),
        eta: outcome.eta,
        m_hat: outcome.m_hat,
        final_potential: outcome.final_potential,
        records: outcome.records.len(),
        config,
    };
    write(&cfg.out.join("manifest.json"), pretty(&manifest)?)?;

    let first = outcome.records.first().map_or(f64::NAN, |r| r.potential);
    println!(
        "trained {} iterations, eta = {:e}, potential {first:.6} -> {:.6}",
        outcome.records.len(),
        outcome.eta,
        outcome.final_potential
    );
    if let Some(gap) = outcome.records.iter().rev().find_map(|r| r.ne_gap) {
        println!("last logged NE-gap {gap:.6}");
    }
    println!("wrote {}", cfg.out.display());
    Ok(())
}

fn load_policy(
    path: &Path,
    spec: &InternalStateSpec,
    model: &TabularPomg,
) -> Result<ispg::JointPolicy, CliError> {
    let text = read(path)?;
    let file: PolicyFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("policy file {}: {e}", path.display())))?;
    Ok(file.into_policy(spec, model)?)
}

pub fn eval(cfg: &ExperimentConfig, policy_path: &Path) -> Result<(), CliError> {
    let (model, spec) = setup(cfg)?;
    let policy = load_policy(policy_path, &spec, &model)?;
    let oracle = Oracle::new(&model, &spec, cfg.train.chain_cap)?;
    let evaluation = oracle.evaluate(&policy)?;
    let gap = ne_gap(&oracle, &policy, &cfg.best_response())?;
    let db = oracle.distance_db(&policy, cfg.train.belief_horizon, cfg.train.node_cap)?;
    let a = compute_a(&policy, &evaluation.advantages);
    let m_hat = evaluation.occupancy.max_reciprocal();

    let report = json!({
        "policy": policy_path.display().to_string(),
        "J": evaluation.objective.per_agent,
        "potential": evaluation.objective.potential,
        "ne_gap": gap.ne_gap,
        "per_agent_gap": gap.per_agent,
        "best_response_values": gap.values,
        "methods": gap.methods,
        "a": a,
        "d_b": db.d_b,
        "d_b_horizon": db.horizon,
        "d_b_tail_weight": db.tail_weight,
        "M_hat": m_hat,
    });
    create_dir(&cfg.out)?;
    write(&cfg.out.join("eval.json"), pretty(&report)?)?;

    for (i, j) in evaluation.objective.per_agent.iter().enumerate() {
        println!(
            "J_{i} = {j:.6}  gap_{i} = {:.6} ({:?})",
            gap.per_agent[i], gap.methods[i]
        );
    }
    println!("potential = {:.6}", evaluation.objective.potential);
    println!("NE-gap = {:.6}", gap.ne_gap);
    println!(
        "a = {a:.6}  d_b = {:.6} (H = {})  M_hat = {m_hat:.6}",
        db.d_b, db.horizon
    );
    Ok(())
}

/// Records of a finished run plus the manifest written with them.
struct LoadedRun {
    name: String,
    manifest: Manifest,
    records: Vec<TrainRecord>,
}

fn parse_cell(cell: &str, column: &str, line: usize) -> Result<Option<f64>, CliError> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>().map(Some).map_err(|_| {
        CliError::Validation(format!(
            "metrics.csv line {line}: bad {column} value {cell:?}"
        ))
    })
}

fn load_run(dir: &Path) -> Result<LoadedRun, CliError> {
    let manifest_path = dir.join("manifest.json");
    let metrics_path = dir.join("metrics.csv");
    if !manifest_path.is_file() || !metrics_path.is_file() {
        return Err(CliError::Validation(format!(
            "{} is not a run directory (manifest.json and metrics.csv are required)",
            dir.display()
        )));
    }
    let manifest: Manifest = serde_json::from_str(&read(&manifest_path)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", manifest_path.display())))?;
    let mut reader = csv::Reader::from_path(&metrics_path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", metrics_path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Validation(format!("{}: {e}", metrics_path.display())))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Validation(format!("metrics.csv has no {name} column")))
    };
    let agents: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("j_agent_"))
        .map(|(k, _)| k)
        .collect();
    let (c_iter, c_pot, c_gap, c_a, c_db, c_occ, c_adv) = (
        col("iter")?,
        col("potential")?,
        col("ne_gap")?,
        col("a")?,
        col("d_b")?,
        col("min_occupancy")?,
        col("max_abs_adv")?,
    );
    let mut records = Vec::new();
    for (k, row) in reader.records().enumerate() {
        let line = k + 2;
        let row = row.map_err(|e| CliError::Validation(format!("metrics.csv line {line}: {e}")))?;
        let get = |c: usize, name: &str| parse_cell(row.get(c).unwrap_or(""), name, line);
        let need = |c: usize, name: &str| {
            get(c, name)?.ok_or_else(|| {
                CliError::Validation(format!("metrics.csv line {line}: missing {name}"))
            })
        };
        let iter = need(c_iter, "iter")?;
        records.push(TrainRecord {
            iter: iter as usize,
            potential: need(c_pot, "potential")?,
            per_agent: agents
                .iter()
                .map(|&c| need(c, "j_agent"))
                .collect::<Result<_, _>>()?,
            ne_gap: get(c_gap, "ne_gap")?,
            a: need(c_a, "a")?,
            d_b: get(c_db, "d_b")?,
            min_occupancy: need(c_occ, "min_occupancy")?,
            max_abs_adv: vec![need(c_adv, "max_abs_adv")?],
            wall_ms: None,
        });
    }
    let name = dir
        .canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "run".into());
    Ok(LoadedRun {
        name,
        manifest,
        records,
    })
}

fn bound_constants(records: &[TrainRecord], m: &Manifest) -> BoundConstants {
    let mut c = BoundConstants::from_records(records, m.n_agents, m.discount, m.phi_span, m.eta);
    c.m_hat = c.m_hat.max(m.m_hat);
    c
}

pub fn verify(cfg: &ExperimentConfig, run: Option<&Path>) -> Result<(), CliError> {
    let (model, spec) = setup(cfg)?;
    let oracle = Oracle::new(&model, &spec, cfg.train.chain_cap)?;

    let sweep = lemma_sweep(&oracle, &cfg.sweep_config())?;
    let eta = cfg.train_config()?.eta(&model)?;

    let start = ispg::policy::init_policy(
        &spec,
        &model,
        &ispg::policy::InitMode::Random {
            scale: 1.0,
            seed: cfg.seed,
        },
    )?;
    let fisher = match fisher_consistency_check(&oracle, &start, 0, eta) {
        Ok(r) => json!({
            "status": if r.max_prob_deviation <= FISHER_TOL { "pass" } else { "fail" },
            "max_prob_deviation": r.max_prob_deviation,
            "max_theta_deviation": r.max_theta_deviation,
            "rank": r.rank,
        }),
        Err(ispg::Error::Size { required, .. }) => json!({
            "status": "skipped",
            "reason": format!("agent 0 has {required} parameters, the dense check handles at most {FISHER_MAX_ENTRIES}"),
        }),
        Err(e) => return Err(e.into()),
    };
    let fisher_ok = fisher["status"] != "fail";

    let bound: BoundReport = match run {
        Some(dir) => {
            let loaded = load_run(dir)?;
            let constants = bound_constants(&loaded.records, &loaded.manifest);
            theorem_bound_check(&loaded.records, constants).map_err(|e| match e {
                ispg::Error::Contract(m) => {
                    CliError::Validation(format!("{m}; train with cadence = 1 to check the bound"))
                }
                e => e.into(),
            })?
        }
        None => {
            let mut tc = cfg.train_config()?;
            tc.iterations = cfg.eval.bound_iterations;
            tc.cadence = 1;
            tc.record_wall_clock = false;
            let outcome = train(&model, &spec, &tc)?;
            let mut constants = BoundConstants::from_records(
                &outcome.records,
                model.n_agents(),
                model.discount(),
                model.phi_span(),
                outcome.eta,
            );
            constants.m_hat = constants.m_hat.max(outcome.m_hat);
            theorem_bound_check(&outcome.records, constants)?
        }
    };
    let mut bound = bound;
    let summaries = [
        ("lemma1", &sweep.lemma1),
        ("lemma2", &sweep.lemma2),
        ("lemma3", &sweep.lemma3),
        ("lemma3_all_agents", &sweep.lemma3_all_agents),
        ("lemma4", &sweep.lemma4),
        ("lemma4_pointwise", &sweep.lemma4_pointwise),
    ];
    bound.lemma_residuals = summaries
        .iter()
        .map(|(k, s)| (k.to_string(), s.min_residual))
        .collect::<BTreeMap<_, _>>();

    let passed = sweep.passed() && fisher_ok && bound.holds;
    let c = &bound.constants;
    let mut report = serde_json::Map::new();
    for (k, s) in summaries {
        report.insert(
            k.into(),
            serde_json::to_value(s).map_err(|e| CliError::Compute(e.to_string()))?,
        );
    }
    report.insert("residual_tolerance".into(), json!(RESIDUAL_TOL));
    report.insert("fisher".into(), fisher);
    report.insert(
        "theorem".into(),
        json!({
            "lhs": bound.lhs,
            "rhs": bound.rhs,
            "a": c.a,
            "M_hat": c.m_hat,
            "d_b": c.d_b,
            "eps_fsc": bound.eps_fsc,
            "eta": c.eta,
            "iterations": bound.iterations,
            "holds": bound.holds,
            "d_b_truncated": bound.d_b_truncated,
        }),
    );
    report.insert(
        "instances".into(),
        serde_json::to_value(&sweep.instances).map_err(|e| CliError::Compute(e.to_string()))?,
    );
    report.insert("passed".into(), json!(passed));
    create_dir(&cfg.out)?;
    write(&cfg.out.join("verify.json"), pretty(&report)?)?;

    for (k, s) in summaries {
        let note = if k == "lemma3_all_agents" {
            " (informational)"
        } else {
            ""
        };
        println!(
            "{k:<18} min residual {:>12.3e}  violations {}/{}{note}",
            s.min_residual, s.violations, s.instances
        );
    }
    println!(
        "fisher             {}",
        report["fisher"]["status"].as_str().unwrap_or("?")
    );
    println!(
        "bound              avg gap {:.6} <= {:.6} over T = {}: {}",
        bound.lhs, bound.rhs, bound.iterations, bound.holds
    );
    if passed {
        println!("all checks passed");
        Ok(())
    } else {
        let mut failed = Vec::new();
        for (k, s) in summaries {
            if k != "lemma3_all_agents" && !s.passed() {
                failed.push(k.to_string());
            }
        }
        if !fisher_ok {
            failed.push("fisher".into());
        }
        if !bound.holds {
            failed.push("theorem bound".into());
        }
        Err(CliError::Verification(failed.join(", ")))
    }
}

fn write_series(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Compute(e.to_string());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Compute(e.to_string()))?;
    write(path, bytes)
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn plot_data(runs: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    let loaded: Vec<LoadedRun> = runs.iter().map(|d| load_run(d)).collect::<Result<_, _>>()?;
    let out = out.map_or_else(|| runs[0].clone(), Path::to_path_buf);
    create_dir(&out)?;

    let mut names: Vec<String> = Vec::new();
    for run in &loaded {
        let mut name = run.name.clone();
        let mut k = 2;
        while names.contains(&name) {
            name = format!("{}_{k}", run.name);
            k += 1;
        }
        names.push(name.clone());

        write_series(
            &out.join(format!("{name}_potential.csv")),
            &["iter", "potential"],
            run.records
                .iter()
                .map(|r| vec![r.iter.to_string(), num(r.potential)]),
        )?;
        let gaps: Vec<(usize, f64)> = run
            .records
            .iter()
            .filter_map(|r| r.ne_gap.map(|g| (r.iter, g)))
            .collect();
        write_series(
            &out.join(format!("{name}_ne_gap.csv")),
            &["iter", "ne_gap"],
            gaps.iter().map(|&(t, g)| vec![t.to_string(), num(g)]),
        )?;
        let constants = bound_constants(&run.records, &run.manifest);
        let bound_rows = gaps.iter().scan(0.0, |sum, &(_, g)| {
            *sum += g;
            Some(*sum)
        });
        write_series(
            &out.join(format!("{name}_bound.csv")),
            &["t", "avg_ne_gap", "rhs"],
            bound_rows.enumerate().map(|(k, sum)| {
                let t = k + 1;
                vec![
                    t.to_string(),
                    num(sum / t as f64),
                    num(explicit_rhs(&constants, t)),
                ]
            }),
        )?;
        println!(
            "{name}: {} records, {} logged gaps",
            run.records.len(),
            gaps.len()
        );
    }

    if loaded.len() >= 2 {
        let mut by_iter: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for (k, run) in loaded.iter().enumerate() {
            for r in &run.records {
                by_iter
                    .entry(r.iter)
                    .or_insert_with(|| vec![String::new(); loaded.len()])[k] = num(r.potential);
            }
        }
        let mut header = vec!["iter".to_string()];
        header.extend(names.iter().map(|n| format!("{n}_potential")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_series(
            &out.join("comparison.csv"),
            &header,
            by_iter.into_iter().map(|(t, mut cells)| {
                cells.insert(0, t.to_string());
                cells
            }),
        )?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub fn gen_model(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let (model, _) = setup(cfg)?;
    create_dir(&cfg.out)?;
    let path = cfg.out.join("model.json");
    save_model(&model, &path)?;
    let report = validate_model(&model);
    println!(
        "{} agents, {} states ({} reachable), {} joint actions",
        model.n_agents(),
        model.n_states(),
        report.reachable_states,
        model.n_joint_actions()
    );
    println!(
        "max stochasticity residual {:e}",
        report.max_residual().abs()
    );
    println!("potential range [{}, {}]", report.phi_min, report.phi_max);
    println!("common reward: {}", report.common_reward);
    println!("wrote {}", path.display());
    Ok(())
}
