//! Stage orchestration: regularize, kam, simulate, verify, measure.
//!
//! Every stage writes its outputs into the run directory; `manifest.json`
//! records the resolved configuration, per-stage wall clock, output paths and
//! the measured constants, which are repeated in `summary.csv`. A failing
//! stage stops the run, leaves earlier outputs in place and is recorded in the
//! manifest.

use crate::config::RunConfig;
use crate::conjugate::ThetaGrid;
use crate::io::{fmt_f64, write_csv, write_json, Container};
use crate::kam::{compose_transforms, kam_iterate, KamOutcome, KamStatus};
use crate::measure::{estimate_measure, CStar, MeasureEstimate, MeasureParams, SetScanner};
use crate::regularization::{regularize, RegDiagnostics, RegularizationResult};
use crate::simulate::{
    boundedness_report, initial_pair_state, integrate, verify_reduction, BoundednessReport, IntegrateOptions, QPField, ReductionReport, Scheme,
};
use crate::wave::{build_first_order, make_perturbation_with, FirstOrderSystem, PerturbationW};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Regularize,
    Kam,
    Simulate,
    Verify,
    Measure,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Regularize, Stage::Kam, Stage::Simulate, Stage::Verify, Stage::Measure];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Regularize => "regularize",
            Stage::Kam => "kam",
            Stage::Simulate => "simulate",
            Stage::Verify => "verify",
            Stage::Measure => "measure",
        }
    }

    fn requires(self) -> &'static [Stage] {
        match self {
            Stage::Kam => &[Stage::Regularize],
            Stage::Verify => &[Stage::Regularize, Stage::Kam],
            _ => &[],
        }
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}` (regularize, kam, simulate, verify, measure)")))
    }
}

/// Requested stages plus their prerequisites, in execution order.
pub fn resolve_stages(requested: &[Stage]) -> Vec<Stage> {
    let mut out: Vec<Stage> = requested.iter().flat_map(|s| s.requires().iter().copied().chain([*s])).collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// The truncated model of a configuration.
pub struct Model {
    pub cfg: RunConfig,
    pub w: PerturbationW,
    pub sys: FirstOrderSystem,
    pub grid: ThetaGrid,
}

impl Model {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let w = make_perturbation_with(&cfg.wave.family, &cfg.wave.trunc, cfg.unchecked)?;
        cfg.wave.validate(w.e_decay)?;
        let sys = build_first_order(&w, &cfg.wave);
        let grid = ThetaGrid::for_band(cfg.wave.trunc.d, cfg.wave.trunc.l_max);
        Ok(Model { cfg, w, sys, grid })
    }

    pub fn omega(&self) -> &[f64] {
        &self.cfg.wave.omega
    }

    pub fn regularize(&self) -> Result<RegularizationResult> {
        let c = &self.cfg.wave;
        regularize(&self.sys, &c.omega, c.trunc.kx, c.gamma, c.tau0, &self.grid)
    }

    pub fn kam(&self, reg: &RegularizationResult) -> Result<KamOutcome> {
        kam_iterate(reg.h0.clone(), reg.p.clone(), self.omega(), &self.cfg.kam, &self.grid)
    }

    /// The full operator matrix of `D + eps K` as a function of time.
    pub fn field(&self) -> QPField {
        QPField::from_pair(&self.sys.hamiltonian(), self.omega())
    }

    pub fn measure_params(&self, kam: Option<&KamOutcome>) -> MeasureParams {
        let c = &self.cfg.wave;
        let mc = &self.cfg.measure;
        let (l0, j0) = MeasureParams::scan_bounds(c.trunc.l_max, c.trunc.m);
        let lambda_inf = kam
            .map(|k| {
                (0..=k.state.h.m)
                    .map(|a| {
                        let e = k.state.h.eigenvalues(a);
                        [e[0], *e.last().expect("nonempty block")]
                    })
                    .collect()
            })
            .unwrap_or_default();
        MeasureParams {
            d: c.trunc.d,
            gamma: mc.gamma.unwrap_or(c.gamma),
            tau0: c.tau0,
            tau1: c.tau1,
            tau: c.tau,
            mass: c.mass,
            c_star: CStar::from_family(&c.family, c.epsilon),
            lambda_inf,
            l_scan: mc.l_scan.unwrap_or(l0),
            j_scan: mc.j_scan.unwrap_or(j0),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub stage: Stage,
    pub kind: String,
    pub message: String,
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Truncation(_) => "truncation",
        Error::OutOfRange(_) => "out-of-range",
        Error::NonAdmissible(_) => "non-admissible",
        Error::StepSize(_) => "step-size",
        Error::Structure(_) => "structure",
        Error::Model(_) => "model",
        Error::Integration(_) => "integration",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub ok: bool,
    pub wall_time: f64,
    pub outputs: Vec<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub stages: Vec<StageRecord>,
    /// Measured constants, also written to `summary.csv`.
    pub constants: BTreeMap<String, f64>,
    pub error: Option<ErrorRecord>,
}

impl RunManifest {
    pub fn success(&self) -> bool {
        self.error.is_none()
    }
}

/// What the stages computed, for callers that want more than the files.
#[derive(Default)]
pub struct RunArtifacts {
    pub reg: Option<RegularizationResult>,
    pub kam: Option<KamOutcome>,
    pub bounded: Option<Vec<BoundednessReport>>,
    pub reduction: Option<ReductionReport>,
    pub measure: Option<MeasureEstimate>,
}

#[derive(Serialize)]
struct RegSummary<'a> {
    gamma: f64,
    omega: &'a [f64],
    #[serde(flatten)]
    diagnostics: &'a RegDiagnostics,
}

fn kv_rows(map: &BTreeMap<String, f64>) -> Vec<Vec<String>> {
    map.iter().map(|(k, v)| vec![k.clone(), fmt_f64(*v)]).collect()
}

struct Runner<'a> {
    model: &'a Model,
    out: &'a Path,
    constants: BTreeMap<String, f64>,
    art: RunArtifacts,
}

impl Runner<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn regularize(&mut self) -> Result<Vec<PathBuf>> {
        let reg = self.model.regularize()?;
        let d = &reg.diagnostics;
        let summary = RegSummary {
            gamma: self.model.cfg.wave.gamma,
            omega: self.model.omega(),
            diagnostics: d,
        };
        let mut kv = BTreeMap::new();
        for (k, v) in serde_json::to_value(d)?.as_object().expect("struct").iter() {
            kv.insert(k.clone(), v.as_f64().unwrap_or(f64::NEG_INFINITY));
        }
        kv.insert("gamma".into(), summary.gamma);
        for (i, w) in summary.omega.iter().enumerate() {
            kv.insert(format!("omega_{i}"), *w);
        }
        let files = vec![
            self.path("regularize.json"),
            self.path("regularize.csv"),
            self.path("g.json"),
            self.path("p0.json"),
        ];
        write_json(&files[0], &summary)?;
        write_csv(&files[1], &["key", "value"], &kv_rows(&kv))?;
        Container::from_symbol(&reg.g).write(&files[2])?;
        Container::from_pair(&reg.p).write(&files[3])?;
        for k in [
            "norm_g",
            "norm_p_diag",
            "norm_p_anti",
            "worst_divisor",
            "p_diag_slope",
            "residual_slope",
            "structure",
        ] {
            self.constants.insert(format!("regularize.{k}"), kv[k]);
        }
        self.art.reg = Some(reg);
        Ok(files)
    }

    fn kam(&mut self) -> Result<Vec<PathBuf>> {
        let reg = self.art.reg.as_ref().expect("regularize runs first");
        let out = self.model.kam(reg)?;
        let log = &out.state.log;
        let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        let rows: Vec<Vec<String>> = log
            .iter()
            .map(|r| {
                vec![
                    r.n.to_string(),
                    r.cut.map(|c| c.to_string()).unwrap_or_default(),
                    fmt_f64(r.norm_p),
                    fmt_f64(r.norm_p_low),
                    opt(r.min_divisor),
                    opt(r.wall_time),
                    opt(r.residual),
                    opt(r.generator_norm),
                    opt(r.dropped_band),
                    fmt_f64(r.structure),
                    fmt_f64(r.h_defect),
                ]
            })
            .collect();
        let files = vec![self.path("kam.csv"), self.path("kam.json"), self.path("h_inf.json"), self.path("p_inf.json")];
        write_csv(
            &files[0],
            &[
                "n",
                "N_n",
                "norm_P_s",
                "norm_P_low",
                "min_divisor",
                "wall_time",
                "residual",
                "generator_norm",
                "dropped_band",
                "structure",
                "h_defect",
            ],
            &rows,
        )?;
        write_json(&files[1], &serde_json::json!({ "status": out.status, "log": log }))?;
        Container::from_blocks(&out.state.h).write(&files[2])?;
        Container::from_pair(&out.state.p).write(&files[3])?;
        self.constants.insert("kam.steps".into(), out.state.step_count() as f64);
        self.constants.insert("kam.final_norm".into(), log.last().expect("log").norm_p);
        for w in log.windows(2) {
            if w[0].norm_p > 0.0 && w[1].norm_p > 0.0 {
                // Contraction factor K in |P_{n+1}| = K |P_n|^{3/2} and the observed exponent.
                self.constants
                    .insert(format!("kam.contraction_{}", w[0].n), w[1].norm_p / w[0].norm_p.powf(1.5));
                self.constants.insert(format!("kam.exponent_{}", w[0].n), w[1].norm_p.ln() / w[0].norm_p.ln());
            }
        }
        let status = out.status.clone();
        self.art.kam = Some(out);
        match status {
            KamStatus::Converged => Ok(files),
            KamStatus::Rejected { n, violations, min_divisor } => Err(Error::NonAdmissible(format!(
                "kam step {n}: {violations} second-order Melnikov violations, smallest divisor {min_divisor:.3e}"
            ))),
            KamStatus::MaxIter => Err(Error::Model(format!(
                "kam: no convergence to {:.1e} within {} steps",
                self.model.cfg.kam.target, self.model.cfg.kam.max_iter
            ))),
        }
    }

    fn simulate(&mut self) -> Result<Vec<PathBuf>> {
        let cfg = &self.model.cfg;
        let s = &cfg.sim;
        let h = self.model.field();
        let q0 = initial_pair_state(&s.initial, cfg.wave.trunc.m, cfg.wave.seed)?;
        let steps = (s.t_end / s.dt).round() as usize;
        let mut o = IntegrateOptions::new(s.t_end, s.dt, Scheme::Krein);
        o.record_every = (steps / s.samples.max(1)).max(1);
        o.r_list = s.r_list.clone();
        let traj = integrate(&h, &q0, &o)?;
        let rep = boundedness_report(&traj);
        let mut header = vec!["t".to_string()];
        header.extend(s.r_list.iter().map(|r| format!("norm_r{r}")));
        let rows: Vec<Vec<String>> = traj
            .times
            .iter()
            .enumerate()
            .map(|(i, t)| std::iter::once(fmt_f64(*t)).chain(traj.r_norms.iter().map(|n| fmt_f64(n[i]))).collect())
            .collect();
        let files = vec![self.path("simulate.csv"), self.path("simulate.json"), self.path("simulate_summary.csv")];
        write_csv(&files[0], &header, &rows)?;
        let mut kv = BTreeMap::new();
        for b in &rep {
            kv.insert(format!("sup_ratio_r{}", b.r), b.sup_ratio);
            kv.insert(format!("inf_ratio_r{}", b.r), b.inf_ratio);
        }
        kv.insert("krein_step_defect".into(), traj.max_step_defect);
        kv.insert("adjointness_defect".into(), traj.max_adjointness_defect);
        write_json(
            &files[1],
            &serde_json::json!({ "report": rep, "krein_step_defect": traj.max_step_defect, "adjointness_defect": traj.max_adjointness_defect }),
        )?;
        write_csv(&files[2], &["key", "value"], &kv_rows(&kv))?;
        for (k, v) in kv {
            self.constants.insert(format!("simulate.{k}"), v);
        }
        self.art.bounded = Some(rep);
        Ok(files)
    }

    fn verify(&mut self) -> Result<Vec<PathBuf>> {
        let cfg = &self.model.cfg;
        let s = &cfg.sim;
        let t = &cfg.wave.trunc;
        let reg = self.art.reg.as_ref().expect("regularize runs first");
        let kam = self.art.kam.as_ref().expect("kam runs first");
        let h = self.model.field();
        let q0 = initial_pair_state(&s.initial, t.m, cfg.wave.seed)?;
        let omega = self.model.omega().to_vec();
        let transforms = &kam.state.transforms;
        let a_inv = |time: f64| -> Result<_> {
            let theta: Vec<f64> = omega.iter().map(|w| w * time).collect();
            Ok(compose_transforms(transforms, Some(&reg.g_pair), &theta)?.1)
        };
        let h_inf = QPField::from_pair(&kam.state.h.to_pair(t.d, t.l_max), &omega).eval(0.0);
        // Time-discretisation error from a run at twice the step.
        let mut o = IntegrateOptions::new(s.t_end, s.dt, Scheme::Krein);
        o.record_every = usize::MAX;
        let fine = integrate(&h, &q0, &o)?;
        o.dt = 2.0 * s.dt;
        let coarse = integrate(&h, &q0, &o)?;
        let disc = (fine.last() - coarse.last()).norm() / q0.norm() / 3.0;
        let dropped: f64 = reg.diagnostics.dropped_band + kam.state.log.iter().filter_map(|r| r.dropped_band).sum::<f64>();
        let p_inf = kam.state.log.last().expect("log").norm_p;
        let tol = 10.0 * ((dropped + p_inf) * s.t_end + disc);
        let rep = verify_reduction(&h, &a_inv, &h_inf, &q0, s.t_end, s.dt, s.samples, &s.r_list, tol)?;
        let files = vec![self.path("verify.json"), self.path("verify.csv")];
        write_json(&files[0], &rep)?;
        let mut kv = BTreeMap::new();
        for (r, d) in rep.r_list.iter().zip(&rep.norm_deviation) {
            kv.insert(format!("norm_deviation_r{r}"), *d);
        }
        kv.insert("max_flow_deviation".into(), rep.max_flow_deviation);
        kv.insert("max_block_deviation".into(), rep.max_block_deviation);
        kv.insert("worst_time".into(), rep.worst_time);
        kv.insert("worst_block".into(), rep.worst_block as f64);
        kv.insert("tolerance".into(), rep.tolerance);
        kv.insert("discretisation_error".into(), disc);
        write_csv(&files[1], &["key", "value"], &kv_rows(&kv))?;
        for (k, v) in kv {
            self.constants.insert(format!("verify.{k}"), v);
        }
        let passed = rep.passed;
        let msg = format!(
            "reduction check failed at t = {} (block {}): norm {:.3e}, flow {:.3e}, block {:.3e}, tolerance {:.3e}",
            rep.worst_time,
            rep.worst_block,
            rep.max_norm_deviation(),
            rep.max_flow_deviation,
            rep.max_block_deviation,
            rep.tolerance
        );
        self.art.reduction = Some(rep);
        if passed {
            Ok(files)
        } else {
            Err(Error::Model(msg))
        }
    }

    fn measure(&mut self) -> Result<Vec<PathBuf>> {
        let cfg = &self.model.cfg;
        let mc = &cfg.measure;
        let params = self.model.measure_params(self.art.kam.as_ref());
        let gamma = params.gamma;
        let d = params.d;
        let scanner = SetScanner::new(params);
        let (est, rows) = estimate_measure(&scanner, mc.set, mc.samples, cfg.wave.seed, mc.sampler);
        let mut header: Vec<String> = (0..d).map(|i| format!("omega_{i}")).collect();
        header.extend(["member", "worst_divisor", "worst_margin", "worst_index"].map(String::from));
        let csv_rows: Vec<Vec<String>> = rows
            .iter()
            .map(|(w, c)| {
                let mut r: Vec<String> = w.iter().map(|x| fmt_f64(*x)).collect();
                r.extend([c.member.to_string(), fmt_f64(c.worst_divisor), fmt_f64(c.worst_margin), c.worst_index.clone()]);
                r
            })
            .collect();
        let files = vec![self.path("measure.csv"), self.path("measure.json"), self.path("measure_summary.csv")];
        write_csv(&files[0], &header, &csv_rows)?;
        write_json(&files[1], &est)?;
        let mut kv = BTreeMap::new();
        kv.insert("gamma".into(), gamma);
        kv.insert("samples".into(), est.samples as f64);
        kv.insert("excluded".into(), est.excluded as f64);
        kv.insert("fraction_excluded".into(), est.fraction_excluded);
        kv.insert("wilson_lo".into(), est.wilson_ci_95.0);
        kv.insert("wilson_hi".into(), est.wilson_ci_95.1);
        kv.insert("c_tilde".into(), est.fraction_excluded / gamma.powf(1.0 / 3.0));
        write_csv(&files[2], &["key", "value"], &kv_rows(&kv))?;
        for (k, v) in kv {
            self.constants.insert(format!("measure.{k}"), v);
        }
        self.art.measure = Some(est);
        Ok(files)
    }
}

/// Runs `stages` (and their prerequisites) on `cfg`, writing into `out_dir`.
/// An invalid configuration is an `Err`; stage failures are recorded in the
/// returned manifest.
pub fn run_pipeline(cfg: &RunConfig, stages: &[Stage], out_dir: &Path) -> Result<(RunManifest, RunArtifacts)> {
    let model = Model::new(cfg.clone())?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.txt"), cfg.to_text())?;
    let mut runner = Runner {
        model: &model,
        out: out_dir,
        constants: BTreeMap::new(),
        art: RunArtifacts::default(),
    };
    let mut records = vec![];
    let mut error = None;
    for stage in resolve_stages(stages) {
        log::info!("stage {}", stage.name());
        let t0 = Instant::now();
        let res = match stage {
            Stage::Regularize => runner.regularize(),
            Stage::Kam => runner.kam(),
            Stage::Simulate => runner.simulate(),
            Stage::Verify => runner.verify(),
            Stage::Measure => runner.measure(),
        };
        let wall_time = t0.elapsed().as_secs_f64();
        match res {
            Ok(outputs) => records.push(StageRecord {
                stage,
                ok: true,
                wall_time,
                outputs,
            }),
            Err(e) => {
                log::error!("stage {} failed: {e}", stage.name());
                records.push(StageRecord {
                    stage,
                    ok: false,
                    wall_time,
                    outputs: vec![],
                });
                error = Some(ErrorRecord {
                    stage,
                    kind: error_kind(&e).into(),
                    message: e.to_string(),
                });
                break;
            }
        }
    }
    let timing: Vec<Vec<String>> = records.iter().map(|r| vec![r.stage.name().to_string(), fmt_f64(r.wall_time)]).collect();
    write_csv(&out_dir.join("timing.csv"), &["stage", "wall_time"], &timing)?;
    write_csv(&out_dir.join("summary.csv"), &["key", "value"], &kv_rows(&runner.constants))?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.wave.seed,
        config: cfg.clone(),
        stages: records,
        constants: runner.constants,
        error,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok((manifest, runner.art))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_resolution() {
        assert_eq!(resolve_stages(&[Stage::Verify]), vec![Stage::Regularize, Stage::Kam, Stage::Verify]);
        assert_eq!(
            resolve_stages(&[Stage::Measure, Stage::Simulate, Stage::Measure]),
            vec![Stage::Simulate, Stage::Measure]
        );
        assert_eq!("kam".parse::<Stage>().unwrap(), Stage::Kam);
        assert!("plot".parse::<Stage>().is_err());
    }
}
