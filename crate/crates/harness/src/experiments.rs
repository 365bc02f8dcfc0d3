//! Validation, replica functions and aggregation for each experiment kind.

use opwalk_core::annealed_stats::{
    derivative_estimates, displacement_replica, displacement_table, log_log_fit, partition_smoothness, required_steps,
    smoothness_side, Difference, DerivativeReport, DifferenceSeries,
};
use opwalk_core::density::{centered_cube, concentration_statistic, phi_field};
use opwalk_core::env::{
    compute_backbone, generate_environment, origin_survives, survival_geometry, survival_replica_seed, survival_table,
    working_point, BackboneField, EnvironmentView, EnvironmentWindow,
};
use opwalk_core::{Error as CoreError, Result as CoreResult};
use opwalk_core::geometry::{LatticeGeometry, Neighborhood, Point, Site, MAX_DIM};
use opwalk_core::llt::{
    box_comparison_event, box_event_geometry, box_window_radius, chain_scales, l_chain, llt_geometry, llt_statistic,
    BoxEventKind,
};
use opwalk_core::pairwalk::{encounter_replica, exceedance_table, EncounterReplica, EncounterSpec};
use opwalk_core::seed::{derive_seed, rng_from_seed, stream};
use opwalk_core::stats::{self, wilson_interval, Z95};
use opwalk_core::walk::{
    analytic_law, annealed_geometry, annealed_replica_seed, environment_chain_step, g_kernel, AnalyticFamily,
    AnnealedSpec, LawFamily, MonteCarloFamily,
};
use rayon::ThreadPool;

use crate::config::{BoxEvent, ExperimentConfig, Kind};
use crate::error::{HarnessError, Result};
use crate::records::*;
use crate::run::ordered_map;

/// A config that passed [`validate`], with its kind's table filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct Validated {
    config: ExperimentConfig,
}

impl Validated {
    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn into_config(self) -> ExperimentConfig {
        self.config
    }
}

/// Checks every precondition the chosen experiment relies on and returns
/// all violations at once.
pub fn validate(cfg: &ExperimentConfig) -> std::result::Result<Validated, Vec<String>> {
    let mut cfg = cfg.clone();
    let kind = cfg.kind();
    let mut errs = Vec::new();
    for k in cfg.sections_present() {
        if k != kind {
            errs.push(format!("section [{k}] does not belong to experiment kind {kind}"));
        }
    }
    cfg.fill_section();
    let g = &cfg.geometry;
    let e = &cfg.experiment;
    let d_ok = (1..=MAX_DIM).contains(&g.d);
    if !d_ok {
        errs.push(format!("d out of 1..={MAX_DIM}"));
    }
    let p_ok = match (kind, g.p) {
        (Kind::SurvivalScan, Some(_)) => {
            errs.push("geometry.p is not used by survival-scan; list probabilities in survival-scan.p_values".into());
            false
        }
        (Kind::SurvivalScan, None) => true,
        (_, None) => {
            errs.push(format!("geometry.p is required for kind {kind}"));
            false
        }
        (_, Some(p)) if !(0.0..=1.0).contains(&p) => {
            errs.push("p out of [0,1]".into());
            false
        }
        _ => true,
    };
    if g.margin < 0 {
        errs.push("margin must be nonnegative".into());
    }
    if e.replicas == 0 {
        errs.push("replicas must be at least 1".into());
    }
    if e.threads == Some(0) {
        errs.push("threads must be at least 1".into());
    }
    if g.half_width.is_some() && !kind.uses_half_width() {
        errs.push(format!("geometry.half_width is not used by kind {kind}"));
    }
    let uses_annealed = matches!(kind, Kind::Llt | Kind::BoxEvents | Kind::Derivative);
    if e.analytic_annealed && !uses_annealed {
        errs.push(format!("analytic_annealed is not used by kind {kind}"));
    }
    if e.analytic_annealed && p_ok && kind != Kind::SurvivalScan {
        let p = cfg.p();
        if p != 0.0 && p != 1.0 {
            errs.push("analytic annealed law requires p in {0, 1}".into());
        }
    }
    if d_ok && g.margin >= 0 {
        check_kind(&cfg, &mut errs);
    }
    if errs.is_empty() {
        Ok(Validated { config: cfg })
    } else {
        Err(errs)
    }
}

fn check_strictly_increasing(name: &str, v: &[u64], min: u64, errs: &mut Vec<String>) -> bool {
    if v.is_empty() {
        errs.push(format!("{name} is empty"));
        return false;
    }
    if v[0] < min || v.windows(2).any(|w| w[0] >= w[1]) {
        errs.push(format!("{name} must be strictly increasing and at least {min}"));
        return false;
    }
    true
}

fn check_kind(cfg: &ExperimentConfig, errs: &mut Vec<String>) {
    let analytic = cfg.experiment.analytic_annealed;
    match cfg.kind() {
        Kind::SurvivalScan => {
            let s = cfg.survival_scan.as_ref().unwrap();
            if s.p_values.is_empty() {
                errs.push("survival-scan.p_values is empty".into());
            }
            if s.p_values.iter().any(|p| !(0.0..=1.0).contains(p)) {
                errs.push("p out of [0,1]".into());
            }
            if s.horizon < 1 {
                errs.push("survival-scan.horizon must be at least 1".into());
            }
            if !(0.0..1.0).contains(&s.ci_floor) {
                errs.push("survival-scan.ci_floor out of [0,1)".into());
            }
        }
        Kind::Llt => {
            let s = cfg.llt.as_ref().unwrap();
            let ok = check_strictly_increasing("llt.n_values", &s.n_values, 1, errs);
            if !analytic && s.annealed_replicas < 2 {
                errs.push("llt.annealed_replicas must be at least 2".into());
            }
            if s.chain {
                for &n in &s.n_values {
                    if let Err(e) = chain_scales(n, s.eps, s.delta) {
                        errs.push(format!("llt chain at n = {n}: {}", bare(&e)));
                        break;
                    }
                }
            }
            if ok && errs.is_empty() {
                window_check(cfg, errs);
            }
        }
        Kind::Concentration => {
            let s = cfg.concentration.as_ref().unwrap();
            check_strictly_increasing("concentration.m_values", &s.m_values, 1, errs);
            if s.threshold.is_nan() || s.threshold <= 0.0 {
                errs.push("concentration.threshold must be positive".into());
            }
            if errs.is_empty() {
                window_check(cfg, errs);
            }
        }
        Kind::BoxEvents => {
            let s = cfg.box_events.as_ref().unwrap();
            if !(s.theta > 0.0 && s.theta <= 1.0) {
                errs.push("theta out of (0,1]".into());
            }
            if s.big_n < 2 {
                errs.push("box-events.big_n must be at least 2".into());
            }
            if !s.start.is_empty() && s.start.len() != cfg.geometry.d {
                errs.push("box-events.start must have d coordinates".into());
            }
            if !analytic && s.annealed_replicas < 2 {
                errs.push("box-events.annealed_replicas must be at least 2".into());
            }
            if s.h.is_some() && s.event != BoxEvent::G2 {
                errs.push("box-events.h only applies to event G2".into());
            }
            if errs.is_empty() {
                let start = box_start(cfg);
                if start.n < 0 || 3 * start.n > s.big_n as i64 || start.x.norm() as f64 > box_window_radius(s.big_n) / 24.0 {
                    errs.push("start outside the admissible window |x| <= R/24, 0 <= m <= N/3".into());
                } else {
                    window_check(cfg, errs);
                }
            }
        }
        Kind::Encounters => {
            let s = cfg.encounters.as_ref().unwrap();
            if s.big_n < 2 {
                errs.push("encounters.big_n must be at least 2".into());
            }
            if s.eps_values.is_empty() || s.eps_values.iter().any(|&e| e.is_nan() || e <= 0.0) {
                errs.push("encounters.eps_values must be nonempty and positive".into());
            }
            if s.radius == Some(0) {
                errs.push("encounters.radius must be positive".into());
            }
            if cfg.experiment.replicas < 100 {
                errs.push("encounters need at least 100 replicas".into());
            }
            if errs.is_empty() {
                window_check(cfg, errs);
            }
        }
        Kind::Derivative => {
            let s = cfg.derivative.as_ref().unwrap();
            check_strictly_increasing("derivative.n_values", &s.n_values, 1, errs);
            if s.n_values.len() < 5 {
                errs.push("derivative.n_values needs at least 5 points for a slope fit".into());
            }
            if !analytic && cfg.experiment.replicas < 2 {
                errs.push("derivative needs at least 2 annealed replicas".into());
            }
            if !(s.smoothness_eps > 0.0 && s.smoothness_eps < 1.0) {
                errs.push("derivative.smoothness_eps out of (0,1)".into());
            }
            if errs.is_empty() && !analytic {
                window_check(cfg, errs);
            }
        }
        Kind::Displacement => {
            let s = cfg.displacement.as_ref().unwrap();
            check_strictly_increasing("displacement.n_values", &s.n_values, 1, errs);
            if s.big_n < 2 {
                errs.push("displacement.big_n must be at least 2".into());
            }
            if s.h_threshold.is_some_and(|h| h.is_nan() || h < 0.0) {
                errs.push("displacement.h_threshold must be nonnegative".into());
            }
            if errs.is_empty() {
                window_check(cfg, errs);
            }
        }
        Kind::EnvChain => {
            let s = cfg.env_chain.as_ref().unwrap();
            if s.steps < 1 {
                errs.push("env-chain.steps must be at least 1".into());
            }
            if errs.is_empty() {
                window_check(cfg, errs);
            }
        }
    }
}

fn bare(e: &CoreError) -> String {
    match e {
        CoreError::InvalidParameter(m) | CoreError::Structural(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Smallest window an experiment needs, as `(half_width, t_min, t_max)`,
/// and a description of what the half-width must cover.
fn required_window(cfg: &ExperimentConfig) -> CoreResult<(i64, i64, i64, &'static str)> {
    let d = cfg.geometry.d;
    let margin = cfg.geometry.margin;
    let g = match cfg.kind() {
        Kind::SurvivalScan => {
            let h = cfg.survival_scan.as_ref().unwrap().horizon;
            (survival_geometry(d, h)?, "horizon")
        }
        Kind::Llt => {
            let s = cfg.llt.as_ref().unwrap();
            let mut acc: Option<(i64, i64, i64)> = None;
            for &n in &s.n_values {
                let (k, side) = if s.chain { chain_scales(n, s.eps, s.delta)? } else { (0, 0) };
                let g = llt_geometry(d, n, s.depth_for(n), side, k, margin)?;
                acc = Some(match acc {
                    None => (g.half_width(), g.t_min(), g.t_max()),
                    Some((l, a, b)) => (l.max(g.half_width()), a.min(g.t_min()), b.max(g.t_max())),
                });
            }
            let (l, a, b) = acc.ok_or_else(|| CoreError::InvalidParameter("no n values".into()))?;
            return Ok((l, a, b, "n + depth + box side + 1 + margin"));
        }
        Kind::Concentration => {
            let s = cfg.concentration.as_ref().unwrap();
            let m = *s.m_values.iter().max().unwrap_or(&1);
            let depth = s.depth as i64;
            return Ok(((m / 2) as i64 + depth + 1 + margin, -depth, margin, "M/2 + depth + 1 + margin"));
        }
        Kind::BoxEvents => {
            let s = cfg.box_events.as_ref().unwrap();
            (box_event_geometry(d, &box_start(cfg), s.big_n, margin)?, "|x| + N - m + 1 + margin")
        }
        Kind::Encounters => (encounter_spec(cfg).geometry()?, "offset + N + 1 + margin"),
        Kind::Derivative => {
            let s = cfg.derivative.as_ref().unwrap();
            let max = required_steps(&s.n_values).last().copied().unwrap_or(0);
            (annealed_geometry(d, &Site::new(Point::unit(0), 1), max, margin)?, "n + 2")
        }
        Kind::Displacement => {
            let s = cfg.displacement.as_ref().unwrap();
            (annealed_geometry(d, &Site::origin(), *s.n_values.last().unwrap(), margin)?, "n + 1")
        }
        Kind::EnvChain => {
            let steps = cfg.env_chain.as_ref().unwrap().steps as i64;
            return Ok((steps + 2 + margin, 0, steps + 1 + margin, "steps + 2 + margin"));
        }
    };
    Ok((g.0.half_width(), g.0.t_min(), g.0.t_max(), g.1))
}

fn window_check(cfg: &ExperimentConfig, errs: &mut Vec<String>) {
    match required_window(cfg) {
        Err(e) => errs.push(format!("window capacity: {}", bare(&e))),
        Ok((l, t0, t1, what)) => {
            let hw = cfg.geometry.half_width.unwrap_or(l);
            if hw < l {
                errs.push(format!("half_width < {what}: need at least {l}, got {hw} (cone containment)"));
                return;
            }
            if let Err(e) = LatticeGeometry::new(cfg.geometry.d, hw, t0, t1) {
                errs.push(format!("window capacity: {}", bare(&e)));
            }
        }
    }
}

/// The window an experiment builds for each environment replica.
pub fn window(cfg: &ExperimentConfig) -> CoreResult<LatticeGeometry> {
    let (l, t0, t1, _) = required_window(cfg)?;
    LatticeGeometry::new(cfg.geometry.d, cfg.geometry.half_width.unwrap_or(l).max(l), t0, t1)
}

fn box_start(cfg: &ExperimentConfig) -> Site {
    let s = cfg.box_events.as_ref().unwrap();
    let x = if s.start.is_empty() { Point::ORIGIN } else { Point::new(&s.start) };
    Site::new(x, s.start_time)
}

fn encounter_spec(cfg: &ExperimentConfig) -> EncounterSpec {
    let s = cfg.encounters.as_ref().unwrap();
    let mut spec = EncounterSpec::new(cfg.geometry.d, cfg.p(), s.big_n, cfg.geometry.margin);
    if let Some(r) = s.radius {
        spec.radius = r;
    }
    spec
}

/// Number of JSONL lines a complete run produces.
pub fn units(cfg: &ExperimentConfig) -> u64 {
    match cfg.kind() {
        Kind::Derivative => cfg.derivative.as_ref().map_or(0, |s| s.n_values.len() as u64),
        _ => cfg.experiment.replicas,
    }
}

fn env_seed(cfg: &ExperimentConfig, r: u64) -> u64 {
    derive_seed(cfg.experiment.seed, r, stream::ENVIRONMENT)
}

fn environment(cfg: &ExperimentConfig, g: LatticeGeometry, seed: u64) -> CoreResult<(EnvironmentWindow, BackboneField)> {
    let env = generate_environment(g, cfg.p(), seed)?;
    let bb = compute_backbone(&env, g.t_max())?.with_safety_margin(cfg.geometry.margin);
    Ok((env, bb))
}

type Family = Box<dyn LawFamily + Send + Sync>;

/// Annealed laws from the origin at `steps`, computed on the pool and
/// accumulated in replica order.
pub fn annealed_family(
    pool: &ThreadPool,
    cfg: &ExperimentConfig,
    steps: &[u64],
    replicas: u64,
) -> Result<Family> {
    let d = cfg.geometry.d;
    if cfg.experiment.analytic_annealed {
        return Ok(Box::new(AnalyticFamily { d }));
    }
    if replicas < 2 {
        return Err(CoreError::InvalidParameter("annealed estimates need at least 2 replicas".into()).into());
    }
    let spec = AnnealedSpec { d, p: cfg.p(), start: Site::origin(), steps: steps.to_vec(), margin: cfg.geometry.margin };
    let master = cfg.experiment.seed;
    let mut acc = spec.accumulators();
    let indices: Vec<u64> = (0..replicas).collect();
    ordered_map(
        pool,
        &indices,
        |r| spec.replica(annealed_replica_seed(master, r)).map_err(HarnessError::from),
        |laws| {
            for (a, l) in acc.iter_mut().zip(&laws) {
                a.add(l)?;
            }
            Ok(())
        },
    )?;
    let laws = acc.into_iter().map(|a| a.finish()).collect();
    Ok(Box::new(MonteCarloFamily::new(d, steps, laws)))
}

pub(crate) type ReplicaFn = Box<dyn Fn(u64) -> Result<ReplicaRecord> + Send + Sync>;

/// Shared per-run state (annealed laws, windows) and the function computing
/// replica `i`.
pub(crate) fn prepare(pool: &ThreadPool, v: &Validated) -> Result<ReplicaFn> {
    let cfg = v.config().clone();
    let kind = cfg.kind();
    Ok(match kind {
        Kind::SurvivalScan => Box::new(move |r| {
            let s = cfg.survival_scan.as_ref().unwrap();
            let seed = survival_replica_seed(cfg.experiment.seed, r);
            let survived = s
                .p_values
                .iter()
                .map(|&p| origin_survives(cfg.geometry.d, p, s.horizon, seed))
                .collect::<CoreResult<Vec<_>>>()?;
            Ok(ReplicaRecord::SurvivalScan(SurvivalRecord { replica: r, seed, survived }))
        }),
        Kind::Llt => {
            let s = cfg.llt.clone().unwrap();
            let mut steps = Vec::new();
            for &n in &s.n_values {
                steps.push(n);
                if s.chain {
                    steps.push(n - chain_scales(n, s.eps, s.delta)?.0);
                }
            }
            steps.sort_unstable();
            steps.dedup();
            let family = annealed_family(pool, &cfg, &steps, s.annealed_replicas)?;
            let g = window(&cfg)?;
            Box::new(move |r| {
                let seed = env_seed(&cfg, r);
                let (env, bb) = environment(&cfg, g, seed)?;
                let mut rec = LltRecord {
                    replica: r,
                    seed,
                    n: s.n_values.clone(),
                    depth: s.n_values.iter().map(|&n| s.depth_for(n)).collect(),
                    statistic: Vec::new(),
                    normalized: Vec::new(),
                    z: Vec::new(),
                    l1: None,
                    l2: None,
                    l3: None,
                    markov_residual: None,
                    closure_bound: None,
                };
                let mut chain: [Vec<f64>; 5] = Default::default();
                for &n in &s.n_values {
                    let depth = s.depth_for(n);
                    let report = if s.chain {
                        let c = l_chain(&bb, &env, n, s.eps, s.delta, depth, family.as_ref())?;
                        for (slot, v) in chain.iter_mut().zip([c.l1, c.l2, c.l3, c.markov_residual, c.closure_bound]) {
                            slot.push(v);
                        }
                        c.llt
                    } else {
                        llt_statistic(&bb, &env, n, depth, family.as_ref())?
                    };
                    rec.statistic.push(report.statistic);
                    rec.normalized.push(report.normalized);
                    rec.z.push(report.z);
                }
                if s.chain {
                    let [l1, l2, l3, m, c] = chain;
                    rec.l1 = Some(l1);
                    rec.l2 = Some(l2);
                    rec.l3 = Some(l3);
                    rec.markov_residual = Some(m);
                    rec.closure_bound = Some(c);
                }
                Ok(ReplicaRecord::Llt(rec))
            })
        }
        Kind::Concentration => {
            let s = cfg.concentration.clone().unwrap();
            let g = window(&cfg)?;
            Box::new(move |r| {
                let seed = env_seed(&cfg, r);
                let (env, bb) = environment(&cfg, g, seed)?;
                let d = cfg.geometry.d;
                let region = centered_cube(d, Point::ORIGIN, *s.m_values.last().unwrap());
                let field = phi_field(&bb, &env, 0, region, s.depth)?;
                let mut box_mean = Vec::new();
                let mut deviation = Vec::new();
                for &m in &s.m_values {
                    let rep = concentration_statistic(&field, m)?;
                    box_mean.push(rep.mean);
                    deviation.push(rep.deviation);
                }
                let phi_origin = field.get(&Point::ORIGIN).unwrap_or(f64::NAN);
                Ok(ReplicaRecord::Concentration(ConcentrationRecord {
                    replica: r,
                    seed,
                    m: s.m_values.clone(),
                    box_mean,
                    deviation,
                    phi_origin,
                }))
            })
        }
        Kind::BoxEvents => {
            let s = cfg.box_events.clone().unwrap();
            let start = box_start(&cfg);
            let times: Vec<i64> = match s.event {
                BoxEvent::G4 => vec![s.big_n as i64],
                _ => opwalk_core::llt::g1_time_grid(s.big_n),
            };
            let steps: Vec<u64> = times.iter().map(|&t| (t - start.n) as u64).collect();
            // Laws from the origin, translated to `start` on lookup.
            let family = annealed_family(pool, &cfg, &steps, s.annealed_replicas)?;
            let g = window(&cfg)?;
            let kind = match s.event {
                BoxEvent::G1 => BoxEventKind::G1,
                BoxEvent::G2 => BoxEventKind::G2 { h: s.h },
                BoxEvent::G4 => BoxEventKind::G4,
            };
            Box::new(move |r| {
                let seed = env_seed(&cfg, r);
                let (env, bb) = environment(&cfg, g, seed)?;
                let rep = box_comparison_event(&bb, &env, start, s.big_n, s.theta, kind, family.as_ref())?;
                Ok(ReplicaRecord::BoxEvents(BoxEventRecord {
                    replica: r,
                    seed,
                    event: format!("{:?}", s.event),
                    start: start.x.coords(cfg.geometry.d).to_vec(),
                    start_time: start.n,
                    side: rep.side,
                    boxes_scanned: rep.boxes_scanned as u64,
                    max_value: rep.max_value,
                    threshold: rep.threshold,
                    holds: rep.holds,
                    off_backbone: rep.off_backbone,
                    min_h: rep.min_h,
                }))
            })
        }
        Kind::Encounters => {
            let spec = encounter_spec(&cfg);
            let master = cfg.experiment.seed;
            Box::new(move |r| {
                let rep = encounter_replica(&spec, master, r)?;
                Ok(ReplicaRecord::Encounters(EncounterRecord {
                    replica: r,
                    seed: rep.seed,
                    offset: spec.offsets.iter().map(|o| o.0[0]).collect(),
                    count: rep.counts,
                    renewals: rep.renewals,
                    max_gap: rep.max_gaps,
                    gaps_within_radius: rep.gaps_within_radius,
                }))
            })
        }
        Kind::Derivative => {
            let s = cfg.derivative.clone().unwrap();
            let replicas = cfg.experiment.replicas;
            let family = annealed_family(pool, &cfg, &required_steps(&s.n_values), replicas)?;
            let report = derivative_estimates(family.as_ref(), &s.n_values)?;
            let mut rows = Vec::new();
            for (i, &n) in s.n_values.iter().enumerate() {
                let law = family.origin_law(n)?;
                let smoothness =
                    if smoothness_side(n, s.smoothness_eps) >= 1 { Some(partition_smoothness(&law.pmf, s.smoothness_eps)?) } else { None };
                let sup = |k: Difference| report.series(k).sups[i];
                let se = |k: Difference| report.series(k).stderrs[i];
                rows.push(ReplicaRecord::Derivative(DerivativeRecord {
                    replica: i as u64,
                    seed: cfg.experiment.seed,
                    n,
                    law_sup: report.law_sup[i],
                    start_space: sup(Difference::StartSpace),
                    start_time: sup(Difference::StartTime),
                    target_space: sup(Difference::TargetSpace),
                    target_time: sup(Difference::TargetTime),
                    start_space_se: se(Difference::StartSpace),
                    start_time_se: se(Difference::StartTime),
                    target_space_se: se(Difference::TargetSpace),
                    target_time_se: se(Difference::TargetTime),
                    smoothness,
                    annealed_replicas: if cfg.experiment.analytic_annealed { 0 } else { replicas },
                }));
            }
            Box::new(move |r| Ok(rows[r as usize].clone()))
        }
        Kind::Displacement => {
            let s = cfg.displacement.clone().unwrap();
            Box::new(move |r| {
                let seed = env_seed(&cfg, r);
                let tail = displacement_replica(cfg.geometry.d, cfg.p(), &s.n_values, s.big_n, seed, cfg.geometry.margin)?;
                Ok(ReplicaRecord::Displacement(DisplacementRecord { replica: r, seed, n: s.n_values.clone(), tail }))
            })
        }
        Kind::EnvChain => {
            let steps = cfg.env_chain.as_ref().unwrap().steps;
            let g = window(&cfg)?;
            Box::new(move |r| {
                let seed = env_seed(&cfg, r);
                let (env, bb) = environment(&cfg, g, seed)?;
                Ok(ReplicaRecord::EnvChain(env_chain_replica(&env, &bb, steps, r, seed, derive_seed(cfg.experiment.seed, r, stream::CHAIN))?))
            })
        }
    })
}

fn env_chain_replica(
    env: &EnvironmentWindow,
    bb: &BackboneField,
    steps: u64,
    replica: u64,
    seed: u64,
    walk_seed: u64,
) -> CoreResult<EnvChainRecord> {
    let d = env.geometry().dim();
    let nb = Neighborhood::new(d);
    let mut rng = rng_from_seed(walk_seed);
    let mut view = EnvironmentView::new(env, bb);
    let kernel = g_kernel(&view)?;
    let mut cylinder_exact = 0.0;
    for (z, w) in nb.offsets().iter().zip(&kernel.weights) {
        if view.is_open(&Site::new(*z, 1))? {
            cylinder_exact += w;
        }
    }
    let (mut open, mut on_bb, mut first) = (0u64, 0u64, None);
    let mut cylinder_sampled = 0.0;
    for step in 0..steps {
        let here = view.offset();
        if env.is_open(&here)? {
            open += 1;
        }
        if bb.xi(&here)? {
            on_bb += 1;
            first.get_or_insert(step);
        }
        view = environment_chain_step(&view, &mut rng)?;
        if step == 0 && env.is_open(&view.offset())? {
            cylinder_sampled = 1.0;
        }
    }
    Ok(EnvChainRecord {
        replica,
        seed,
        steps,
        displacement: view.offset().x.coords(d).to_vec(),
        open_fraction: open as f64 / steps as f64,
        backbone_fraction: on_bb as f64 / steps as f64,
        first_backbone_step: first,
        cylinder_sampled,
        cylinder_exact,
    })
}

fn column<T, F: Fn(&T) -> f64>(recs: &[&T], f: F) -> Vec<f64> {
    recs.iter().map(|r| f(r)).collect()
}

fn mean_row(kind: Kind, statistic: &str, param: impl Into<String>, values: &[f64]) -> SummaryRow {
    let se = if values.len() > 1 { stats::std_error(values) } else { f64::NAN };
    SummaryRow::new(kind, statistic, param, stats::mean(values), values.len() as u64).with_stderr(se)
}

fn frequency_row(kind: Kind, statistic: &str, param: impl Into<String>, hits: u64, total: u64) -> SummaryRow {
    let (lo, hi) = wilson_interval(hits, total, Z95);
    let value = if total == 0 { f64::NAN } else { hits as f64 / total as f64 };
    SummaryRow::new(kind, statistic, param, value, total).with_ci(lo, hi)
}

macro_rules! select {
    ($recs:expr, $variant:ident) => {
        $recs
            .iter()
            .map(|r| match r {
                ReplicaRecord::$variant(x) => Ok(x),
                other => Err(HarnessError::Conflict(format!("record of kind {} in a {} run", other.kind(), stringify!($variant)))),
            })
            .collect::<Result<Vec<_>>>()?
    };
}

/// Aggregate rows of a run. Depends only on the config and the records, so
/// re-imported JSONL reproduces it exactly.
pub fn summarize(cfg: &ExperimentConfig, records: &[ReplicaRecord]) -> Result<Vec<SummaryRow>> {
    let kind = cfg.kind();
    let mut cfg = cfg.clone();
    cfg.fill_section();
    let mut rows = Vec::new();
    match kind {
        Kind::SurvivalScan => {
            let recs = select!(records, SurvivalScan);
            let s = cfg.survival_scan.as_ref().unwrap();
            let outcomes: Vec<Vec<bool>> = recs.iter().map(|r| r.survived.clone()).collect();
            let table = survival_table(&s.p_values, &outcomes);
            for row in &table {
                rows.push(frequency_row(kind, "survival", format!("p={}", row.p), row.survived, row.replicas));
            }
            let wp = if recs.is_empty() { None } else { working_point(&table, s.ci_floor) };
            rows.push(SummaryRow::new(kind, "working_point", format!("ci_floor={}", s.ci_floor), wp.unwrap_or(f64::NAN), recs.len() as u64));
        }
        Kind::Llt => {
            let recs = select!(records, Llt);
            let s = cfg.llt.as_ref().unwrap();
            for (i, &n) in s.n_values.iter().enumerate() {
                let p = format!("n={n}");
                let st = column(&recs, |r| r.statistic[i]);
                rows.push(SummaryRow::new(kind, "statistic_median", p.clone(), stats::median(&st), st.len() as u64));
                rows.push(mean_row(kind, "statistic_mean", p.clone(), &st));
                rows.push(mean_row(kind, "normalized_mean", p.clone(), &column(&recs, |r| r.normalized[i])));
                rows.push(mean_row(kind, "z_mean", p.clone(), &column(&recs, |r| r.z[i])));
                if s.chain && !recs.is_empty() {
                    let get = |f: fn(&LltRecord) -> &Option<Vec<f64>>| column(&recs, |r| f(r).as_ref().map_or(f64::NAN, |v| v[i]));
                    rows.push(mean_row(kind, "l1_mean", p.clone(), &get(|r| &r.l1)));
                    rows.push(mean_row(kind, "l2_mean", p.clone(), &get(|r| &r.l2)));
                    rows.push(mean_row(kind, "l3_mean", p.clone(), &get(|r| &r.l3)));
                    rows.push(mean_row(kind, "markov_residual_mean", p.clone(), &get(|r| &r.markov_residual)));
                    let cb = get(|r| &r.closure_bound);
                    rows.push(SummaryRow::new(kind, "closure_bound_median", p.clone(), stats::median(&cb), cb.len() as u64));
                }
            }
        }
        Kind::Concentration => {
            let recs = select!(records, Concentration);
            let s = cfg.concentration.as_ref().unwrap();
            for (i, &m) in s.m_values.iter().enumerate() {
                let p = format!("M={m};threshold={}", s.threshold);
                let hits = recs.iter().filter(|r| r.deviation[i] > s.threshold).count() as u64;
                rows.push(frequency_row(kind, "exceedance", p, hits, recs.len() as u64));
                rows.push(mean_row(kind, "deviation_mean", format!("M={m}"), &column(&recs, |r| r.deviation[i])));
            }
            rows.push(mean_row(kind, "phi_origin_mean", format!("depth={}", s.depth), &column(&recs, |r| r.phi_origin)));
        }
        Kind::BoxEvents => {
            let recs = select!(records, BoxEvents);
            let s = cfg.box_events.as_ref().unwrap();
            let total = recs.len() as u64;
            let p = format!("event={:?};N={};theta={}", s.event, s.big_n, s.theta);
            let holds = recs.iter().filter(|r| r.holds).count() as u64;
            let off = recs.iter().filter(|r| r.off_backbone).count() as u64;
            let either = recs.iter().filter(|r| r.holds || r.off_backbone).count() as u64;
            rows.push(frequency_row(kind, "event_frequency", p.clone(), holds, total));
            rows.push(frequency_row(kind, "event_or_off_backbone_frequency", p.clone(), either, total));
            rows.push(frequency_row(kind, "off_backbone_frequency", p.clone(), off, total));
            let mv = column(&recs, |r| r.max_value);
            rows.push(SummaryRow::new(kind, "max_value_median", p.clone(), stats::median(&mv), total));
            if let Some(r) = recs.first() {
                rows.push(SummaryRow::new(kind, "threshold", p.clone(), r.threshold, total));
            }
            if s.event == BoxEvent::G2 {
                let h = column(&recs, |r| r.min_h.map_or(f64::NAN, f64::from));
                rows.push(SummaryRow::new(kind, "min_h_median", p, stats::median(&h), total));
            }
        }
        Kind::Encounters => {
            let recs = select!(records, Encounters);
            let s = cfg.encounters.as_ref().unwrap();
            let spec = encounter_spec(&cfg);
            let reps: Vec<EncounterReplica> = recs
                .iter()
                .map(|r| EncounterReplica {
                    index: r.replica,
                    seed: r.seed,
                    counts: r.count.clone(),
                    renewals: r.renewals.clone(),
                    max_gaps: r.max_gap.clone(),
                    gaps_within_radius: r.gaps_within_radius.clone(),
                    first_gaps: Vec::new(),
                })
                .collect();
            for row in exceedance_table(&spec, &s.eps_values, &reps) {
                let p = format!("offset={};eps={};threshold={}", row.offset.0[0], row.eps, row.threshold);
                rows.push(frequency_row(kind, "exceedance", p, row.exceeded, row.replicas));
            }
            for (j, off) in spec.offsets.iter().enumerate() {
                let p = format!("offset={};r={}", off.0[0], spec.radius);
                rows.push(mean_row(kind, "count_mean", p.clone(), &column(&recs, |r| r.count[j] as f64)));
                rows.push(mean_row(kind, "renewals_mean", p.clone(), &column(&recs, |r| r.renewals[j] as f64)));
                let within = recs.iter().filter(|r| r.gaps_within_radius[j]).count() as u64;
                rows.push(frequency_row(kind, "gaps_within_radius_frequency", p, within, recs.len() as u64));
            }
        }
        Kind::Derivative => {
            let report = derivative_report(records)?;
            for (i, &n) in report.n_grid.iter().enumerate() {
                rows.push(SummaryRow::new(kind, "law_sup", format!("n={n}"), report.law_sup[i], 1));
                for s in &report.series {
                    rows.push(
                        SummaryRow::new(kind, &format!("sup_{}", s.kind.name()), format!("n={n}"), s.sups[i], 1)
                            .with_stderr(s.stderrs[i]),
                    );
                }
            }
            let grid = format!("n={}..{}", report.n_grid.first().unwrap_or(&0), report.n_grid.last().unwrap_or(&0));
            let count = report.n_grid.len() as u64;
            rows.push(SummaryRow::new(kind, "slope_law_sup", grid.clone(), report.law_fit.as_ref().map_or(f64::NAN, |f| f.slope), count));
            for s in &report.series {
                let slope = s.fit.as_ref().map_or(f64::NAN, |f| f.slope);
                rows.push(SummaryRow::new(kind, &format!("slope_{}", s.kind.name()), grid.clone(), slope, count));
            }
            let recs = select!(records, Derivative);
            let (ns, sm): (Vec<u64>, Vec<f64>) = recs.iter().filter_map(|r| r.smoothness.filter(|&v| v > 0.0).map(|v| (r.n, v))).unzip();
            let eps = cfg.derivative.as_ref().unwrap().smoothness_eps;
            let slope = log_log_fit(&ns, &sm).map_or(f64::NAN, |f| f.slope);
            rows.push(SummaryRow::new(kind, "slope_smoothness", format!("eps={eps}"), slope, ns.len() as u64));
        }
        Kind::Displacement => {
            let recs = select!(records, Displacement);
            let s = cfg.displacement.as_ref().unwrap();
            let tails: Vec<Vec<f64>> = recs.iter().map(|r| r.tail.clone()).collect();
            if !tails.is_empty() {
                for row in displacement_table(&s.n_values, s.big_n, &tails, s.h_threshold) {
                    let p = format!("n={};N={}", row.n, row.big_n);
                    rows.push(SummaryRow::new(kind, "annealed_tail", p.clone(), row.annealed_tail, row.replicas).with_stderr(row.stderr));
                    rows.push(SummaryRow::new(kind, "radius", p.clone(), row.radius, row.replicas));
                    let held = (row.h_frequency * row.replicas as f64).round() as u64;
                    let f = frequency_row(kind, "h_frequency", format!("{p};threshold={}", row.h_threshold), held, row.replicas);
                    rows.push(f);
                }
            }
        }
        Kind::EnvChain => {
            let recs = select!(records, EnvChain);
            for axis in 0..cfg.geometry.d {
                rows.push(mean_row(kind, "displacement_mean", format!("axis={axis}"), &column(&recs, |r| r.displacement[axis] as f64)));
            }
            rows.push(mean_row(kind, "open_fraction_mean", "", &column(&recs, |r| r.open_fraction)));
            rows.push(mean_row(kind, "backbone_fraction_mean", "", &column(&recs, |r| r.backbone_fraction)));
            let sampled = column(&recs, |r| r.cylinder_sampled);
            let exact = column(&recs, |r| r.cylinder_exact);
            rows.push(mean_row(kind, "cylinder_sampled_mean", "", &sampled));
            rows.push(mean_row(kind, "cylinder_exact_mean", "", &exact));
            let diff: Vec<f64> = sampled.iter().zip(&exact).map(|(a, b)| a - b).collect();
            rows.push(mean_row(kind, "cylinder_difference_mean", "", &diff));
        }
    }
    Ok(rows)
}

/// Rebuilds the difference report of a derivative run from its records.
pub fn derivative_report(records: &[ReplicaRecord]) -> Result<DerivativeReport> {
    let recs = select!(records, Derivative);
    let n_grid: Vec<u64> = recs.iter().map(|r| r.n).collect();
    let series = Difference::ALL
        .iter()
        .map(|&k| {
            let (sups, ses) = recs
                .iter()
                .map(|r| match k {
                    Difference::StartSpace => (r.start_space, r.start_space_se),
                    Difference::StartTime => (r.start_time, r.start_time_se),
                    Difference::TargetSpace => (r.target_space, r.target_space_se),
                    Difference::TargetTime => (r.target_time, r.target_time_se),
                })
                .unzip();
            DifferenceSeries::from_points(k, &n_grid, sups, ses)
        })
        .collect();
    let law_sup: Vec<f64> = recs.iter().map(|r| r.law_sup).collect();
    Ok(DerivativeReport { law_fit: log_log_fit(&n_grid, &law_sup), n_grid, law_sup, series })
}

/// Law at the largest grid point of a derivative run, for export.
pub fn derivative_law(pool: &ThreadPool, cfg: &ExperimentConfig) -> Result<opwalk_core::pmf::AveragedLaw> {
    let s = cfg.derivative.as_ref().unwrap();
    let n = *s.n_values.last().unwrap();
    if cfg.experiment.analytic_annealed {
        let pmf = analytic_law(cfg.geometry.d, Site::origin(), n);
        let stderr = vec![0.0; pmf.mass.len()];
        return Ok(opwalk_core::pmf::AveragedLaw { pmf, replicas: 0, stderr });
    }
    Ok(annealed_family(pool, cfg, &[n], cfg.experiment.replicas)?.origin_law(n)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn llt_cfg() -> ExperimentConfig {
        let mut c = ExperimentConfig::defaults(Kind::Llt);
        c.llt.as_mut().unwrap().n_values = vec![10, 20];
        c
    }

    #[test]
    fn p_out_of_range_is_named() {
        let mut c = llt_cfg();
        c.geometry.p = Some(1.5);
        let errs = validate(&c).unwrap_err();
        assert!(errs.contains(&"p out of [0,1]".to_string()), "{errs:?}");
    }

    #[test]
    fn small_half_width_reports_cone_containment() {
        let mut c = llt_cfg();
        c.geometry.half_width = Some(10);
        let errs = validate(&c).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].starts_with("half_width < n + depth"), "{}", errs[0]);
        c.geometry.half_width = Some(window(&validate(&llt_cfg()).unwrap().config).unwrap().half_width());
        assert!(validate(&c).is_ok());
    }

    #[test]
    fn errors_are_aggregated() {
        let mut c = llt_cfg();
        c.geometry.p = Some(-0.1);
        c.geometry.d = 7;
        c.experiment.replicas = 0;
        c.encounters = Some(Default::default());
        let errs = validate(&c).unwrap_err();
        assert!(errs.len() >= 4, "{errs:?}");
        assert!(errs.iter().any(|e| e.contains("[encounters]")));
    }

    #[test]
    fn kind_specific_rules() {
        let mut c = ExperimentConfig::defaults(Kind::Encounters);
        c.experiment.replicas = 10;
        assert!(validate(&c).unwrap_err()[0].contains("100 replicas"));
        let mut c = llt_cfg();
        c.experiment.analytic_annealed = true;
        assert!(validate(&c).unwrap_err()[0].contains("p in {0, 1}"));
        c.geometry.p = Some(1.0);
        assert!(validate(&c).is_ok());
        let mut c = ExperimentConfig::defaults(Kind::BoxEvents);
        c.box_events.as_mut().unwrap().start_time = 200;
        assert!(validate(&c).unwrap_err()[0].contains("admissible"));
        let mut c = ExperimentConfig::defaults(Kind::SurvivalScan);
        c.geometry.p = Some(0.5);
        assert!(validate(&c).is_err());
        let mut c = llt_cfg();
        c.llt.as_mut().unwrap().chain = true;
        c.llt.as_mut().unwrap().delta = 0.2;
        assert!(validate(&c).unwrap_err()[0].contains("2 delta < eps"));
    }

    #[test]
    fn every_default_config_validates() {
        for k in Kind::ALL {
            let c = ExperimentConfig::defaults(k);
            assert!(validate(&c).is_ok(), "{k}: {:?}", validate(&c));
        }
    }

    #[test]
    fn huge_windows_fail_capacity() {
        let mut c = ExperimentConfig::defaults(Kind::EnvChain);
        c.geometry.d = 4;
        c.env_chain.as_mut().unwrap().steps = 1000;
        assert!(validate(&c).unwrap_err()[0].starts_with("window capacity"));
    }
}
