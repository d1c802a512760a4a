//! Tuning of the load-profile penalty weights `(eta1, eta2)`.
//!
//! Every evaluation solves the penalized set-partitioning model, then the
//! purchasing MDP of the selected plan, and scores the pair by tactical
//! cost plus the MDP's expected cycle cost. Comparisons use the MDP gain,
//! never simulation, so searches are reproducible.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustergen::ClusterPool;
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::mdp::{build_outflow, solve as solve_mdp, MdpModel, OutflowModel, Policy};
use crate::setpart::{self, PenaltyParams, Selection};

/// Discretization and stopping rule of the purchasing MDP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdpSettings {
    pub step: i64,
    pub tail_mass: f64,
    pub epsilon: f64,
}

impl Default for MdpSettings {
    fn default() -> Self {
        Self {
            step: 5,
            tail_mass: 1e-6,
            epsilon: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub setpart_secs: f64,
    pub mdp_secs: f64,
}

/// One scored penalty pair. `total = tactical_cost + mdp_cycle_cost`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub eta1: f64,
    pub eta2: f64,
    pub tactical_cost: f64,
    pub mdp_cycle_cost: f64,
    pub total: f64,
    /// Ordinal of the distinct selection within one evaluator.
    pub selection_id: usize,
    pub selection: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

/// Anything that scores a penalty pair.
pub trait Objective {
    fn evaluate(&mut self, eta1: f64, eta2: f64) -> Result<EvalRecord>;
}

struct Solved {
    id: usize,
    selection: Selection,
    outflow: OutflowModel,
    model: MdpModel,
    policy: Policy,
    secs: f64,
}

/// Memoizing evaluator over one instance and cluster pool. Identical penalty
/// pairs are answered from cache, and identical selections share one MDP solve.
pub struct Evaluator<'a> {
    pub inst: &'a Instance,
    pub pool: &'a ClusterPool,
    pub settings: MdpSettings,
    /// Attach wall-clock timings to records (they then differ run to run).
    pub record_timings: bool,
    by_eta: HashMap<(u64, u64), EvalRecord>,
    by_selection: HashMap<Vec<usize>, Solved>,
}

impl<'a> Evaluator<'a> {
    pub fn new(inst: &'a Instance, pool: &'a ClusterPool, settings: MdpSettings) -> Self {
        Self {
            inst,
            pool,
            settings,
            record_timings: false,
            by_eta: HashMap::new(),
            by_selection: HashMap::new(),
        }
    }

    /// Number of distinct selections solved so far.
    pub fn distinct_selections(&self) -> usize {
        self.by_selection.len()
    }

    fn check_eta(eta1: f64, eta2: f64) -> Result<()> {
        if !(eta1 >= 0.0 && eta2 >= 0.0 && eta1.is_finite() && eta2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "penalty weights must be finite and non-negative, got ({eta1}, {eta2})"
            )));
        }
        Ok(())
    }

    fn solve_selection(inst: &Instance, settings: &MdpSettings, selection: Selection, id: usize) -> Result<Solved> {
        let clock = Instant::now();
        let outflow = build_outflow(&selection, inst, settings.step, settings.tail_mass)?;
        let model = MdpModel::for_instance(inst, &outflow)?;
        let policy = solve_mdp(&model, &outflow, settings.epsilon)?;
        Ok(Solved {
            id,
            selection,
            outflow,
            model,
            policy,
            secs: clock.elapsed().as_secs_f64(),
        })
    }

    fn record(&self, eta1: f64, eta2: f64, key: &[usize], setpart_secs: f64, fresh: bool) -> EvalRecord {
        let s = &self.by_selection[key];
        let tactical = s.selection.tactical_cost;
        let mdp = s.policy.cycle_cost;
        EvalRecord {
            eta1,
            eta2,
            tactical_cost: tactical,
            mdp_cycle_cost: mdp,
            total: tactical + mdp,
            selection_id: s.id,
            selection: key.to_vec(),
            timings: self.record_timings.then_some(Timings {
                setpart_secs,
                mdp_secs: if fresh { s.secs } else { 0.0 },
            }),
        }
    }

    /// Scores a selection fixed by hand; the record carries zero weights.
    pub fn evaluate_selection(&mut self, selection: Selection) -> Result<EvalRecord> {
        let key = selection.cluster_ids.clone();
        let fresh = !self.by_selection.contains_key(&key);
        if fresh {
            let id = self.by_selection.len();
            let solved = Self::solve_selection(self.inst, &self.settings, selection, id)?;
            self.by_selection.insert(key.clone(), solved);
        }
        Ok(self.record(0.0, 0.0, &key, 0.0, fresh))
    }

    /// Policy and MDP of a selection solved earlier.
    pub fn solved(&self, selection: &[usize]) -> Option<(&Selection, &MdpModel, &OutflowModel, &Policy)> {
        self.by_selection
            .get(selection)
            .map(|s| (&s.selection, &s.model, &s.outflow, &s.policy))
    }

    /// Evaluates every pair, solving the missing ones in parallel.
    pub fn evaluate_many(&mut self, pairs: &[(f64, f64)]) -> Result<Vec<EvalRecord>> {
        for &(a, b) in pairs {
            Self::check_eta(a, b)?;
        }
        let mut todo: Vec<(f64, f64)> = Vec::new();
        for &(a, b) in pairs {
            let k = (a.to_bits(), b.to_bits());
            if !self.by_eta.contains_key(&k) && !todo.iter().any(|&(x, y)| (x.to_bits(), y.to_bits()) == k) {
                todo.push((a, b));
            }
        }
        let (inst, pool) = (self.inst, self.pool);
        let tactical: Vec<(Selection, f64)> = todo
            .par_iter()
            .map(|&(a, b)| {
                let clock = Instant::now();
                let sel = setpart::solve(pool, PenaltyParams::new(a, b)?)?;
                Ok((sel, clock.elapsed().as_secs_f64()))
            })
            .collect::<Result<_>>()?;
        // New selections get ids in the order of `pairs`.
        let mut fresh: Vec<Selection> = Vec::new();
        for (sel, _) in &tactical {
            if !self.by_selection.contains_key(&sel.cluster_ids)
                && !fresh.iter().any(|f| f.cluster_ids == sel.cluster_ids)
            {
                fresh.push(sel.clone());
            }
        }
        let base = self.by_selection.len();
        let settings = self.settings;
        let solved: Vec<Solved> = fresh
            .into_par_iter()
            .enumerate()
            .map(|(k, sel)| Self::solve_selection(inst, &settings, sel, base + k))
            .collect::<Result<_>>()?;
        let new_ids: Vec<Vec<usize>> = solved.iter().map(|s| s.selection.cluster_ids.clone()).collect();
        for s in solved {
            self.by_selection.insert(s.selection.cluster_ids.clone(), s);
        }
        for ((a, b), (sel, secs)) in todo.iter().zip(&tactical) {
            let fresh = new_ids.contains(&sel.cluster_ids);
            let rec = self.record(*a, *b, &sel.cluster_ids, *secs, fresh);
            self.by_eta.insert((a.to_bits(), b.to_bits()), rec);
        }
        Ok(pairs
            .iter()
            .map(|&(a, b)| self.by_eta[&(a.to_bits(), b.to_bits())].clone())
            .collect())
    }
}

impl Objective for Evaluator<'_> {
    fn evaluate(&mut self, eta1: f64, eta2: f64) -> Result<EvalRecord> {
        Ok(self.evaluate_many(&[(eta1, eta2)])?.remove(0))
    }
}

/// The plan that ignores purchasing: no penalties.
pub fn step_by_step(obj: &mut impl Objective) -> Result<EvalRecord> {
    obj.evaluate(0.0, 0.0)
}

/// Increments, caps and starting value of the line search. Index 0 is
/// `eta1`, index 1 is `eta2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearchParams {
    pub zeta: [f64; 2],
    pub ub: [f64; 2],
    pub eps_init: f64,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        Self {
            zeta: [1.0, 0.5],
            ub: [8.0, 4.0],
            eps_init: 1e-4,
        }
    }
}

/// Line-search progress. `psi = 1` moves `eta1`, `psi = 0` moves `eta2`;
/// `i` counts finished directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub psi: u8,
    pub i: u8,
    pub eta: [f64; 2],
    pub params: LineSearchParams,
    pub best: Option<EvalRecord>,
    pub history: Vec<EvalRecord>,
}

impl SearchState {
    fn offer(&mut self, rec: EvalRecord) {
        if self.best.as_ref().is_none_or(|b| rec.total < b.total) {
            self.best = Some(rec.clone());
        }
        self.history.push(rec);
    }
}

/// Alternating line search: raise `eta1` while the total does not get
/// worse, then `eta2`; a worse step is undone and ends its direction. The
/// unpenalized pair is scored first, so the result never loses to
/// [`step_by_step`]. Returns the state with the cheapest record seen.
pub fn line_search(obj: &mut impl Objective, params: LineSearchParams) -> Result<SearchState> {
    if !(params.zeta.iter().all(|&z| z > 0.0) && params.ub.iter().all(|&u| u > 0.0) && params.eps_init >= 0.0) {
        return Err(Error::InvalidArgument("line search needs zeta > 0, ub > 0, eps >= 0".into()));
    }
    let mut st = SearchState {
        psi: 1,
        i: 0,
        eta: [params.eps_init.min(params.ub[0]), params.eps_init.min(params.ub[1])],
        params,
        best: None,
        history: Vec::new(),
    };
    st.offer(obj.evaluate(0.0, 0.0)?);
    let mut z = f64::INFINITY;
    let mut previous = st.eta;
    while st.i != 2 && st.eta != params.ub {
        let rec = obj.evaluate(st.eta[0], st.eta[1])?;
        let total = rec.total;
        st.offer(rec);
        let a = if st.psi == 1 { 0 } else { 1 };
        if total <= z {
            z = total;
            if st.eta[a] < params.ub[a] {
                previous = st.eta;
                st.eta[a] = (st.eta[a] + params.zeta[a]).min(params.ub[a]);
            } else {
                st.psi = 1 - st.psi;
                st.i += 1;
            }
        } else {
            st.eta = previous;
            st.psi = 1 - st.psi;
            st.i += 1;
        }
    }
    Ok(st)
}

/// Penalty grid used for the comparison with the line search.
pub fn default_grid() -> (Vec<f64>, Vec<f64>) {
    let mut e1 = vec![0.0, 1e-4];
    e1.extend((1..=8).map(f64::from));
    let mut e2 = vec![0.0, 1e-4];
    e2.extend((1..=8).map(|k| 0.5 * k as f64));
    (e1, e2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub eta1: Vec<f64>,
    pub eta2: Vec<f64>,
    /// `records[a][b]` is the pair `(eta1[a], eta2[b])`.
    pub records: Vec<Vec<EvalRecord>>,
    /// Cheapest record; ties go to the first in row-major order.
    pub best: EvalRecord,
}

/// Scores the Cartesian product of the two lists.
pub fn grid_search(ev: &mut Evaluator, eta1: &[f64], eta2: &[f64]) -> Result<GridResult> {
    if eta1.is_empty() || eta2.is_empty() {
        return Err(Error::InvalidArgument("grid lists must be nonempty".into()));
    }
    let pairs: Vec<(f64, f64)> = eta1.iter().flat_map(|&a| eta2.iter().map(move |&b| (a, b))).collect();
    let flat = ev.evaluate_many(&pairs)?;
    let best = flat
        .iter()
        .fold(None::<&EvalRecord>, |b, r| match b {
            Some(b) if b.total <= r.total => Some(b),
            _ => Some(r),
        })
        .expect("nonempty grid")
        .clone();
    let records = flat.chunks(eta2.len()).map(<[EvalRecord]>::to_vec).collect();
    Ok(GridResult {
        eta1: eta1.to_vec(),
        eta2: eta2.to_vec(),
        records,
        best,
    })
}

/// Records as CSV with columns `eta1,eta2,tactical,mdp,total`.
pub fn records_csv<'r>(records: impl IntoIterator<Item = &'r EvalRecord>) -> String {
    let mut out = String::from("eta1,eta2,tactical,mdp,total\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.eta1, r.eta2, r.tactical_cost, r.mdp_cycle_cost, r.total
        ));
    }
    out
}

/// Increase in cost of the step-by-step plan over the searched one, in percent.
pub fn delta_percent(step_by_step: &EvalRecord, searched: &EvalRecord) -> f64 {
    100.0 * (step_by_step.total - searched.total) / searched.total
}

/// Step-by-step and searched results of one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub instance: String,
    pub step_by_step: EvalRecord,
    pub line_search: EvalRecord,
    /// Distinct penalty pairs visited by the line search.
    pub iterations: usize,
}

/// Averages over a batch of instances, in the layout of the benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub instances: usize,
    pub delta_avg: f64,
    pub delta_max: f64,
    pub strictly_better: usize,
    pub sbs_tactical: f64,
    pub sbs_mdp: f64,
    pub ls_tactical: f64,
    pub ls_mdp: f64,
    pub iterations: f64,
}

pub fn summarize(rows: &[Comparison]) -> Result<BatchSummary> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no comparisons to summarize".into()));
    }
    let n = rows.len() as f64;
    let avg = |f: &dyn Fn(&Comparison) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let deltas: Vec<f64> = rows.iter().map(|c| delta_percent(&c.step_by_step, &c.line_search)).collect();
    Ok(BatchSummary {
        instances: rows.len(),
        delta_avg: deltas.iter().sum::<f64>() / n,
        delta_max: deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        strictly_better: rows
            .iter()
            .filter(|c| c.line_search.total < c.step_by_step.total)
            .count(),
        sbs_tactical: avg(&|c| c.step_by_step.tactical_cost),
        sbs_mdp: avg(&|c| c.step_by_step.mdp_cycle_cost),
        ls_tactical: avg(&|c| c.line_search.tactical_cost),
        ls_mdp: avg(&|c| c.line_search.mdp_cycle_cost),
        iterations: avg(&|c| c.iterations as f64),
    })
}

/// Fixed-width table of per-instance rows and the batch averages.
pub fn comparison_table(rows: &[Comparison]) -> Result<String> {
    let s = summarize(rows)?;
    let mut out = format!(
        "{:<24} {:>8} {:>10} {:>10} {:>10} {:>10} {:>6}\n",
        "instance", "delta%", "sbs_mip", "sbs_mdp", "ls_mip", "ls_mdp", "iter"
    );
    for c in rows {
        out.push_str(&format!(
            "{:<24} {:>8.1} {:>10.0} {:>10.0} {:>10.0} {:>10.0} {:>6}\n",
            c.instance,
            delta_percent(&c.step_by_step, &c.line_search),
            c.step_by_step.tactical_cost,
            c.step_by_step.mdp_cycle_cost,
            c.line_search.tactical_cost,
            c.line_search.mdp_cycle_cost,
            c.iterations
        ));
    }
    out.push_str(&format!(
        "{:<24} {:>8.1} {:>10.0} {:>10.0} {:>10.0} {:>10.0} {:>6.1}\n",
        format!("avg (n={})", s.instances),
        s.delta_avg,
        s.sbs_tactical,
        s.sbs_mdp,
        s.ls_tactical,
        s.ls_mdp,
        s.iterations
    ));
    out.push_str(&format!(
        "delta% max {:.1}; strictly better on {} of {}\n",
        s.delta_max, s.strictly_better, s.instances
    ));
    Ok(out)
}

/// Runs the step-by-step plan and the line search on one instance.
pub fn compare(name: &str, ev: &mut Evaluator, params: LineSearchParams) -> Result<Comparison> {
    let sbs = step_by_step(ev)?;
    let st = line_search(ev, params)?;
    let mut visited: Vec<(u64, u64)> = st
        .history
        .iter()
        .map(|r| (r.eta1.to_bits(), r.eta2.to_bits()))
        .collect();
    visited.sort_unstable();
    visited.dedup();
    Ok(Comparison {
        instance: name.to_string(),
        step_by_step: sbs,
        line_search: st.best.expect("line search scores at least one pair"),
        iterations: visited.len(),
    })
}
