//! Command bodies. Each returns the JSON summary printed on success.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use scirp::clustergen::{enumerate, ClusterPool};
use scirp::instance::{generate, GenParams, Instance};
use scirp::mdp::{extract_ss, ss_csv, SsRule};
use scirp::search::{
    comparison_table, compare, default_grid, delta_percent, grid_search, line_search, records_csv, step_by_step,
    summarize, Comparison, EvalRecord, Evaluator, LineSearchParams, MdpSettings, Objective,
};
use scirp::setpart::{PenaltyParams, Selection};
use scirp::simulate::{simulate_aggregate, simulate_full, trace_csv, Mode, SimConfig};

use crate::config::{self, pick, FileConfig};
use crate::{CliError, Common, EtaOpts, GenArgs, GridArgs, MdpArgs, MdpOpts, ReportArgs, SearchArgs, SimulateArgs,
    SolveArgs, SweepArgs, Which};

type Res<T> = Result<T, CliError>;

const DEFAULT_SIM_PERIODS: u64 = 1_000_000;

struct Ctx {
    file: FileConfig,
    inst: Instance,
    /// Instance file stem, used to label results.
    name: String,
    out: PathBuf,
}

fn output_dir(flag: Option<PathBuf>, file: Option<PathBuf>) -> Res<PathBuf> {
    let out = pick(flag, file).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out).map_err(|e| CliError::path(format!("output directory {}: {e}", out.display())))?;
    Ok(out)
}

fn load_instance(path: &Path) -> Res<Instance> {
    if !path.is_file() {
        return Err(CliError::path(format!("instance file {} not found", path.display())));
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::path(format!("{}: {e}", path.display())))?;
    let inst = Instance::from_json(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok(inst.validated()?)
}

fn context(common: &Common) -> Res<Ctx> {
    let file = FileConfig::load(common.config.as_deref())?;
    let path = pick(common.instance.clone(), file.instance.clone())
        .ok_or_else(|| CliError::config("--instance is required"))?;
    let inst = load_instance(&path)?;
    let out = output_dir(common.out.clone(), file.out.clone())?;
    let name = path.file_stem().map_or_else(|| "instance".into(), |s| s.to_string_lossy().into_owned());
    Ok(Ctx { file, inst, name, out })
}

fn write(dir: &Path, name: &str, content: &str) -> Res<String> {
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|e| CliError::path(format!("{}: {e}", path.display())))?;
    Ok(path.display().to_string())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

fn mdp_settings(opts: &MdpOpts, file: &FileConfig) -> Res<MdpSettings> {
    config::mdp_settings(
        pick(opts.step, file.step),
        pick(opts.tail_mass, file.tail_mass),
        pick(opts.epsilon, file.epsilon),
    )
}

fn penalties(eta: &EtaOpts, file: &FileConfig) -> Res<PenaltyParams> {
    let p = PenaltyParams::new(pick(eta.eta1, file.eta1).unwrap_or(0.0), pick(eta.eta2, file.eta2).unwrap_or(0.0))
        .map_err(|e| CliError::config(e.to_string()))?;
    Ok(p)
}

fn pool_of(inst: &Instance) -> Res<ClusterPool> {
    Ok(enumerate(inst)?)
}

/// Reads a stored plan and re-prices it against `pool`.
fn stored_selection(path: &Path, pool: &ClusterPool) -> Res<Selection> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::path(format!("{}: {e}", path.display())))?;
    let stored = Selection::from_json(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    if let Some(&bad) = stored.cluster_ids.iter().find(|&&id| id >= pool.len()) {
        return Err(CliError::config(format!("cluster {bad} is not in the pool of this instance")));
    }
    Ok(Selection::from_ids(pool, &stored.cluster_ids, PenaltyParams::default())?)
}

/// Scores the plan named by `--selection`, or the one solved at the penalty pair.
fn plan_record(ev: &mut Evaluator, selection: Option<&Path>, p: PenaltyParams) -> Res<EvalRecord> {
    Ok(match selection {
        Some(path) => {
            let sel = stored_selection(path, ev.pool)?;
            ev.evaluate_selection(sel)?
        }
        None => ev.evaluate(p.eta1, p.eta2)?,
    })
}

pub fn gen(a: GenArgs) -> Res<Value> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let seed = pick(a.common.seed, file.seed).ok_or_else(|| CliError::config("gen needs --seed"))?;
    let n = pick(a.n, file.n).ok_or_else(|| CliError::config("gen needs --n"))?;
    let periods = pick(a.cycle, file.cycle).unwrap_or(7);
    let mut params = file.gen.clone().unwrap_or_else(GenParams::default);
    if let Some(u) = pick(a.uncertainty.map(Into::into), file.uncertainty) {
        params.uncertainty = u;
    }
    let inst = generate(seed, n, periods, &params)?.validated()?;
    let out = output_dir(a.common.out, file.out)?;
    let path = write(&out, "instance.json", &(inst.to_json() + "\n"))?;
    Ok(json!({ "instance": path, "customers": n, "T": periods, "seed": seed }))
}

pub fn clusters(a: Common) -> Res<Value> {
    let ctx = context(&a)?;
    let pool = pool_of(&ctx.inst)?;
    let path = write(&ctx.out, "clusters.jsonl", &pool.to_jsonl())?;
    let mut by_size = vec![0usize; ctx.inst.num_customers()];
    for c in &pool.clusters {
        by_size[c.customers.len() - 1] += 1;
    }
    Ok(json!({ "clusters": pool.len(), "by_size": by_size, "path": path }))
}

pub fn solve(a: SolveArgs) -> Res<Value> {
    let ctx = context(&a.common)?;
    let p = penalties(&a.eta, &ctx.file)?;
    let pool = pool_of(&ctx.inst)?;
    let sel = scirp::setpart::solve(&pool, p)?;
    let path = write(&ctx.out, "selection.json", &(sel.to_json() + "\n"))?;
    let clusters: Vec<Value> = sel
        .cluster_ids
        .iter()
        .map(|&id| {
            let c = &pool.clusters[id];
            json!({
                "id": id,
                "customers": c.customers.iter().map(|&i| ctx.inst.customers[i].id).collect::<Vec<_>>(),
                "route": c.route.order.iter().map(|&i| ctx.inst.customers[i].id).collect::<Vec<_>>(),
                "delivery_periods": c.schedule.deliveries().iter().map(|d| d.period + 1).collect::<Vec<_>>(),
                "base_stocks": c.base_stocks,
                "transport": c.transport_cost,
                "holding": c.holding_cost,
                "emergency": c.emergency_cost,
            })
        })
        .collect();
    Ok(json!({
        "eta1": p.eta1,
        "eta2": p.eta2,
        "tactical_cost": sel.tactical_cost,
        "penalty": sel.penalty_value,
        "clusters": clusters,
        "path": path,
    }))
}

pub fn mdp(a: MdpArgs) -> Res<Value> {
    let ctx = context(&a.common)?;
    let settings = mdp_settings(&a.mdp, &ctx.file)?;
    let p = penalties(&a.eta, &ctx.file)?;
    let pool = pool_of(&ctx.inst)?;
    let mut ev = Evaluator::new(&ctx.inst, &pool, settings);
    let rec = plan_record(&mut ev, a.selection.as_deref(), p)?;
    let (_, _, _, policy) = ev.solved(&rec.selection).expect("evaluated plan is cached");
    let rules = extract_ss(policy);
    let policy_path = write(&ctx.out, "policy.json", &(policy.to_json() + "\n"))?;
    let ss_path = write(&ctx.out, "ss.csv", &ss_csv(&rules))?;
    let summary = json!({
        "record": rec,
        "gain": policy.gain,
        "cycle_cost": policy.cycle_cost,
        "sweeps": policy.sweeps,
        "settings": settings,
        "ss": rules,
    });
    write(&ctx.out, "mdp.json", &to_json(&summary))?;
    Ok(json!({
        "total": rec.total,
        "tactical_cost": rec.tactical_cost,
        "mdp_cycle_cost": rec.mdp_cycle_cost,
        "policy": policy_path,
        "ss": ss_path,
    }))
}

pub fn simulate(a: SimulateArgs) -> Res<Value> {
    let ctx = context(&a.common)?;
    let seed = pick(a.common.seed, ctx.file.seed).ok_or_else(|| CliError::config("simulate needs --seed"))?;
    let settings = mdp_settings(&a.mdp, &ctx.file)?;
    let p = penalties(&a.eta, &ctx.file)?;
    let mode: Mode = pick(a.mode.map(Into::into), ctx.file.mode).unwrap_or(Mode::Aggregate);
    let mut cfg = SimConfig::new(pick(a.periods, ctx.file.periods).unwrap_or(DEFAULT_SIM_PERIODS), seed);
    cfg.replications = pick(a.replications, ctx.file.replications).unwrap_or(1);
    cfg.trace_periods = a.trace;
    if cfg.periods == 0 || cfg.replications == 0 {
        return Err(CliError::config("periods and replications must be positive"));
    }
    let pool = pool_of(&ctx.inst)?;
    let mut ev = Evaluator::new(&ctx.inst, &pool, settings);
    let rec = plan_record(&mut ev, a.selection.as_deref(), p)?;
    let (sel, _, _, policy) = ev.solved(&rec.selection).expect("evaluated plan is cached");
    let report = match mode {
        Mode::Aggregate => simulate_aggregate(&ctx.inst, &pool, sel, policy, &cfg)?,
        Mode::Full => simulate_full(&ctx.inst, &pool, sel, policy, &cfg, a.clamp_orders)?,
    };
    let path = write(&ctx.out, "sim.json", &(report.to_json() + "\n"))?;
    if a.trace > 0 {
        write(&ctx.out, "trace.csv", &trace_csv(&report.trace))?;
    }
    let purchasing = report.cycle_costs.purchasing;
    Ok(json!({
        "mode": mode,
        "mdp_cycle_cost": rec.mdp_cycle_cost,
        "purchasing": purchasing,
        "within_3se": purchasing.covers(rec.mdp_cycle_cost, 3.0),
        "total": report.cycle_costs.total,
        "clamp_count": report.clamp_count,
        "path": path,
    }))
}

/// Stored result of `search`; `report` reads these back.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchReport {
    pub instance: String,
    pub settings: MdpSettings,
    pub params: LineSearchParams,
    pub step_by_step: EvalRecord,
    pub best: EvalRecord,
    pub delta_percent: f64,
    /// Distinct penalty pairs visited by the line search.
    pub iterations: usize,
    /// Per-period rules of the best plan, period 1 first.
    pub ss_best: Vec<SsRule>,
    pub ss_step_by_step: Vec<SsRule>,
    pub history: Vec<EvalRecord>,
}

fn run_search(name: &str, inst: &Instance, pool: &ClusterPool, settings: MdpSettings, params: LineSearchParams) -> Res<SearchReport> {
    let mut ev = Evaluator::new(inst, pool, settings);
    let sbs = step_by_step(&mut ev)?;
    let st = line_search(&mut ev, params)?;
    let best = st.best.clone().expect("line search scores at least one pair");
    let ss = |ev: &Evaluator, rec: &EvalRecord| {
        let (_, _, _, policy) = ev.solved(&rec.selection).expect("evaluated plan is cached");
        extract_ss(policy)
    };
    let mut visited: Vec<(u64, u64)> = st.history.iter().map(|r| (r.eta1.to_bits(), r.eta2.to_bits())).collect();
    visited.sort_unstable();
    visited.dedup();
    Ok(SearchReport {
        instance: name.to_string(),
        settings,
        params,
        delta_percent: delta_percent(&sbs, &best),
        iterations: visited.len(),
        ss_best: ss(&ev, &best),
        ss_step_by_step: ss(&ev, &sbs),
        step_by_step: sbs,
        best,
        history: st.history,
    })
}

pub fn search(a: SearchArgs) -> Res<Value> {
    let ctx = context(&a.common)?;
    let settings = mdp_settings(&a.mdp, &ctx.file)?;
    let params = config::line_search_params(pick(a.line.zeta, ctx.file.zeta.clone()), pick(a.line.ub, ctx.file.ub.clone()))?;
    let pool = pool_of(&ctx.inst)?;
    let rep = run_search(&ctx.name, &ctx.inst, &pool, settings, params)?;
    let path = write(&ctx.out, "search.json", &to_json(&rep))?;
    write(&ctx.out, "history.csv", &records_csv(&rep.history))?;
    write(&ctx.out, "ss.csv", &ss_csv(&rep.ss_best))?;
    Ok(json!({
        "instance": rep.instance,
        "step_by_step": rep.step_by_step.total,
        "best": {
            "eta1": rep.best.eta1,
            "eta2": rep.best.eta2,
            "tactical_cost": rep.best.tactical_cost,
            "mdp_cycle_cost": rep.best.mdp_cycle_cost,
            "total": rep.best.total,
        },
        "delta_percent": rep.delta_percent,
        "iterations": rep.iterations,
        "ss": rep.ss_best,
        "path": path,
    }))
}

pub fn grid(a: GridArgs) -> Res<Value> {
    let ctx = context(&a.common)?;
    let settings = mdp_settings(&a.mdp, &ctx.file)?;
    let (d1, d2) = default_grid();
    let e1 = pick(a.grid_eta1, ctx.file.grid_eta1.clone()).unwrap_or(d1);
    let e2 = pick(a.grid_eta2, ctx.file.grid_eta2.clone()).unwrap_or(d2);
    if e1.iter().chain(&e2).any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(CliError::config("grid values must be finite and non-negative"));
    }
    let pool = pool_of(&ctx.inst)?;
    let mut ev = Evaluator::new(&ctx.inst, &pool, settings);
    let g = grid_search(&mut ev, &e1, &e2)?;
    let path = write(&ctx.out, "grid.json", &to_json(&g))?;
    write(&ctx.out, "grid.csv", &records_csv(g.records.iter().flatten()))?;
    Ok(json!({
        "points": e1.len() * e2.len(),
        "distinct_selections": ev.distinct_selections(),
        "best": g.best,
        "path": path,
    }))
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    multiplier: f64,
    eta1: f64,
    eta2: f64,
    tactical: f64,
    mdp: f64,
    total: f64,
    /// Relative to the multiplier-1 instance; `None` when that cost is zero.
    tactical_ratio: Option<f64>,
    mdp_ratio: Option<f64>,
}

pub fn sweep(a: SweepArgs) -> Res<Value> {
    let ctx = context(&a.common)?;
    let settings = mdp_settings(&a.mdp, &ctx.file)?;
    let params = config::line_search_params(pick(a.line.zeta, ctx.file.zeta.clone()), pick(a.line.ub, ctx.file.ub.clone()))?;
    let which = match (a.which, ctx.file.which.as_deref()) {
        (Some(w), _) => w,
        (None, Some("m_s")) => Which::Ms,
        (None, Some("m_p")) => Which::Mp,
        (None, Some("m_d")) => Which::Md,
        (None, Some(other)) => return Err(CliError::config(format!("unknown multiplier {other:?}"))),
        (None, None) => return Err(CliError::config("sweep needs --which")),
    };
    let need = |v: Option<f64>, name: &str| v.ok_or_else(|| CliError::config(format!("sweep needs --{name}")));
    let values = config::sweep_values(
        need(pick(a.from, ctx.file.from), "from")?,
        need(pick(a.to, ctx.file.to), "to")?,
        need(pick(a.step_mult, ctx.file.step_mult), "step-mult")?,
    )?;
    let scaled = |m: f64| match which {
        Which::Ms => ctx.inst.scale(m, 1.0, 1.0),
        Which::Mp => ctx.inst.scale(1.0, m, 1.0),
        Which::Md => ctx.inst.scale(1.0, 1.0, m),
    };
    // Supply multipliers leave the cluster pool unchanged.
    let shared = if which == Which::Md { None } else { Some(pool_of(&ctx.inst)?) };
    let best_at = |m: f64| -> Res<EvalRecord> {
        let inst = scaled(m)?.validated()?;
        let own;
        let pool = match &shared {
            Some(p) => p,
            None => {
                own = pool_of(&inst)?;
                &own
            }
        };
        let mut ev = Evaluator::new(&inst, pool, settings);
        Ok(compare("", &mut ev, params)?.line_search)
    };
    let mut all = values.clone();
    if !all.contains(&1.0) {
        all.push(1.0);
    }
    let records: Vec<EvalRecord> = all.par_iter().map(|&m| best_at(m)).collect::<Res<_>>()?;
    let base = &records[all.iter().position(|&m| m == 1.0).expect("base included")];
    let ratio = |x: f64, b: f64| (b != 0.0).then(|| x / b);
    let rows: Vec<SweepRow> = values
        .iter()
        .zip(&records)
        .map(|(&m, r)| SweepRow {
            multiplier: m,
            eta1: r.eta1,
            eta2: r.eta2,
            tactical: r.tactical_cost,
            mdp: r.mdp_cycle_cost,
            total: r.total,
            tactical_ratio: ratio(r.tactical_cost, base.tactical_cost),
            mdp_ratio: ratio(r.mdp_cycle_cost, base.mdp_cycle_cost),
        })
        .collect();
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    let mut csv = String::from("multiplier,eta1,eta2,tactical,mdp,total,tactical_ratio,mdp_ratio\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.multiplier,
            r.eta1,
            r.eta2,
            r.tactical,
            r.mdp,
            r.total,
            opt(r.tactical_ratio),
            opt(r.mdp_ratio)
        ));
    }
    let path = write(&ctx.out, "sweep.csv", &csv)?;
    let which_name = match which {
        Which::Ms => "m_s",
        Which::Mp => "m_p",
        Which::Md => "m_d",
    };
    write(&ctx.out, "sweep.json", &to_json(&json!({ "which": which_name, "rows": rows })))?;
    Ok(json!({ "which": which_name, "points": rows.len(), "path": path }))
}

pub fn report(a: ReportArgs) -> Res<Value> {
    let mut rows = Vec::with_capacity(a.inputs.len());
    for path in &a.inputs {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::path(format!("{}: {e}", path.display())))?;
        let rep: SearchReport =
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        for r in [&rep.step_by_step, &rep.best] {
            if (r.total - (r.tactical_cost + r.mdp_cycle_cost)).abs() > 1e-9 * r.total.abs().max(1.0) {
                return Err(CliError::config(format!("{}: total is not tactical + mdp", path.display())));
            }
        }
        rows.push(Comparison {
            instance: rep.instance,
            step_by_step: rep.step_by_step,
            line_search: rep.best,
            iterations: rep.iterations,
        });
    }
    let summary = summarize(&rows)?;
    let table = comparison_table(&rows)?;
    let out = output_dir(a.out, None)?;
    write(&out, "report.txt", &table)?;
    let per_instance: Vec<Value> = rows
        .iter()
        .map(|c| json!({ "instance": c.instance, "delta_percent": delta_percent(&c.step_by_step, &c.line_search) }))
        .collect();
    let body = json!({ "rows": per_instance, "summary": summary });
    let path = write(&out, "report.json", &to_json(&body))?;
    Ok(json!({ "summary": summary, "path": path }))
}
