//! Subcommand bodies. Each returns an [`Outcome`]; `pass: None` means the command has no
//! acceptance flag.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::Context;
use rayon::prelude::*;
use roughpde::grid::{write_physical, write_spectral, GridSpec, SpectralField};
use roughpde::noise::{covariance_at, in_noise_support, mollify_noise, sample_noise};
use roughpde::norms::negative_norm;
use roughpde::products::{Pairing, RenormConstants, RenormTable};
use roughpde::rng::SeedSpec;
use roughpde::solver::classical::classical_check;
use roughpde::solver::{
    calibrate_eta, eps_continuation, solve_quasilinear, Continuation, SolveParams, SolveResult,
};
use roughpde::stats::linear_fit;
use roughpde::verify::{
    pointwise_variance, renorm_limit_study, verify_commutator_scaling, verify_eps_difference,
    verify_noise_scaling, SuiteResult, Verdict,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub command: String,
    pub pass: Option<bool>,
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
}

/// Traceability header written at the top of every artifact.
#[derive(Clone, Debug, Serialize)]
struct Header {
    subcommand: String,
    config_hash: String,
    seed: u64,
    version: &'static str,
}

struct Artifacts {
    dir: PathBuf,
    header: Header,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn new(cfg: &RunConfig, subcommand: &str) -> anyhow::Result<Self> {
        fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
        Ok(Artifacts {
            dir: cfg.out.clone(),
            header: Header {
                subcommand: subcommand.to_string(),
                config_hash: cfg.hash(),
                seed: cfg.seed,
                version: env!("CARGO_PKG_VERSION"),
            },
            written: Vec::new(),
        })
    }

    fn path(&mut self, stem: &str, ext: &str) -> PathBuf {
        let h = &self.header;
        let p = self
            .dir
            .join(format!("{}-{stem}-{}-s{}.{ext}", h.subcommand, h.config_hash, h.seed));
        self.written.push(p.clone());
        p
    }

    fn create(&mut self, stem: &str, ext: &str) -> anyhow::Result<BufWriter<File>> {
        let p = self.path(stem, ext);
        let f = File::create(&p).with_context(|| format!("writing {}", p.display()))?;
        Ok(BufWriter::new(f))
    }

    fn json(&mut self, stem: &str, report: &impl Serialize) -> anyhow::Result<()> {
        let mut w = self.create(stem, "json")?;
        let doc = json!({ "header": &self.header, "report": report });
        serde_json::to_writer_pretty(&mut w, &doc)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    /// CSV preceded by a `#`-comment carrying the header.
    fn csv(&mut self, stem: &str, columns: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
        let mut w = self.create(stem, "csv")?;
        writeln!(w, "# {}", serde_json::to_string(&self.header)?)?;
        writeln!(w, "{}", columns.join(","))?;
        for r in rows {
            writeln!(w, "{}", r.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    /// NDJSON whose first line is the header.
    fn ndjson(&mut self, stem: &str, lines: &[Value]) -> anyhow::Result<()> {
        let mut w = self.create(stem, "ndjson")?;
        writeln!(w, "{}", serde_json::to_string(&json!({ "header": &self.header }))?)?;
        for l in lines {
            writeln!(w, "{}", serde_json::to_string(l)?)?;
        }
        w.flush()?;
        Ok(())
    }

    fn outcome(self, pass: Option<bool>, summary: String) -> Outcome {
        Outcome {
            command: self.header.subcommand,
            pass,
            summary,
            artifacts: self.written,
        }
    }
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn loglog_slope(pts: &[(f64, f64)]) -> f64 {
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    linear_fit(&xs, &ys).0
}

fn noise_sample(cfg: &RunConfig, grid: &GridSpec, sample: u64) -> SpectralField {
    sample_noise(&cfg.spec, grid, SeedSpec::noise(cfg.seed, sample))
}

/// Parabolic dyadic shell of a frequency: `n` with `2^{n-1} <= max(|j1|, sqrt|j2|) < 2^n`.
fn shell(j1: i64, j2: i64) -> usize {
    let rho = (j1.unsigned_abs() as f64).max((j2.unsigned_abs() as f64).sqrt());
    if rho < 1.0 {
        0
    } else {
        rho.log2().floor() as usize + 1
    }
}

pub fn sample_noise_cmd(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let mut art = Artifacts::new(cfg, "sample-noise")?;
    let g = cfg.grid;
    let f = noise_sample(cfg, &g, 0);
    write_spectral(&mut art.create("field", "rpf")?, &f)?;

    let mut shells: Vec<(usize, f64, f64)> = Vec::new();
    for (idx, c) in f.coeffs().iter().enumerate() {
        if !in_noise_support(&g, idx) {
            continue;
        }
        let (j1, j2) = g.freq(idx);
        let (k1, k2) = g.wavenumber(idx);
        let s = shell(j1, j2);
        if shells.len() <= s {
            shells.resize(s + 1, (0, 0.0, 0.0));
        }
        shells[s].0 += 1;
        shells[s].1 += c.norm_sqr();
        shells[s].2 += covariance_at(&cfg.spec, k1, k2);
    }
    let rows: Vec<Vec<String>> = shells
        .iter()
        .enumerate()
        .filter(|(_, s)| s.0 > 0)
        .map(|(n, s)| {
            vec![
                n.to_string(),
                s.0.to_string(),
                num(s.1 / s.0 as f64),
                num(s.2 / s.0 as f64),
            ]
        })
        .collect();
    art.csv("spectrum", &["shell", "modes", "mean_power", "expected_power"], &rows)?;

    let ts = cfg.t_list();
    let per_sample: Vec<Value> = (0..cfg.samples as u64)
        .into_par_iter()
        .map(|s| {
            let f = noise_sample(cfg, &g, s);
            let u = f.inverse();
            json!({
                "sample": s,
                "power": f.power(),
                "max_abs": u.max_abs(),
                "negative_norm": negative_norm(&f, cfg.spec.alpha, &ts),
            })
        })
        .collect();
    art.ndjson("samples", &per_sample)?;

    let mean_power =
        per_sample.iter().map(|v| v["power"].as_f64().unwrap_or(0.0)).sum::<f64>() / cfg.samples as f64;
    let expected = pointwise_variance(&cfg.spec, &g, 0.0);
    let stats = json!({
        "grid": g,
        "spec": cfg.spec,
        "power": f.power(),
        "mean_power": mean_power,
        "expected_power": expected,
        "samples": cfg.samples,
    });
    art.json("stats", &stats)?;
    let summary = format!("mean power {mean_power:.4e} over {} samples, expected {expected:.4e}", cfg.samples);
    Ok(art.outcome(None, summary))
}

fn suite_json(s: &SuiteResult) -> Value {
    json!({ "pass": s.pass(), "fit": s.fit, "bounds": s.bounds })
}

pub fn verify_scaling(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let mut art = Artifacts::new(cfg, "verify-scaling")?;
    let plan = cfg.plan();
    let suites: Vec<(&str, SuiteResult)> = vec![
        ("noise", verify_noise_scaling(&plan)?),
        ("commutator_vf", verify_commutator_scaling(&plan, Pairing::Vf, 0, 0)?),
        ("commutator_vd2v", verify_commutator_scaling(&plan, Pairing::VD2v, 0, 0)?),
        ("eps_difference", verify_eps_difference(&plan, cfg.plan.kappa)?),
    ];
    let mut records = Vec::new();
    let mut report = serde_json::Map::new();
    for (name, s) in &suites {
        report.insert(name.to_string(), suite_json(s));
        for r in &s.records {
            let mut v = serde_json::to_value(r)?;
            v["suite"] = json!(name);
            records.push(v);
        }
    }
    let pass = suites.iter().all(|(_, s)| s.pass());
    report.insert("pass".into(), json!(pass));
    art.json("report", &report)?;
    art.ndjson("records", &records)?;
    let summary = suites
        .iter()
        .map(|(n, s)| {
            let slope = s.fit.as_ref().map(|f| format!(" slope {:.3}", f.slope)).unwrap_or_default();
            format!("{n}{slope} {}", if s.pass() { "pass" } else { "fail" })
        })
        .collect::<Vec<_>>()
        .join("; ");
    Ok(art.outcome(Some(pass), summary))
}

pub fn renorm_table(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let mut art = Artifacts::new(cfg, "renorm-table")?;
    let lattice = cfg.renorm.truncation.unwrap_or(cfg.grid);
    let eps = cfg.renorm_eps();
    let table = RenormConstants::build(
        cfg.spec,
        lattice,
        &eps,
        &cfg.renorm.a0_list,
        &cfg.renorm.a0p_list,
    )?;
    let p = art.path("constants", "csv");
    let mut w = BufWriter::new(File::create(&p)?);
    writeln!(w, "# {}", serde_json::to_string(&art.header)?)?;
    table.write_csv(&mut w)?;
    w.flush()?;

    let (a0, a0p) = (cfg.renorm.a0_list[0], cfg.renorm.a0p_list[0]);
    let study = renorm_limit_study(&cfg.spec, &lattice, &eps, a0, a0p)?;
    let a2 = cfg.spec.satisfies_a2();
    let expected = if a2 { Verdict::Converges } else { Verdict::Diverges };
    let pass = study.verdict == expected;
    art.json("verdict", &json!({ "satisfies_a2": a2, "study": study, "pass": pass }))?;
    let summary = format!(
        "verdict {:?} (A2 {}), c1 {:.4e} -> {:.4e}",
        study.verdict,
        if a2 { "holds" } else { "fails" },
        study.c1[0],
        study.c1[study.c1.len() - 1]
    );
    Ok(art.outcome(Some(pass), summary))
}

fn unit_constants(cfg: &RunConfig, eps: f64) -> roughpde::Result<RenormTable> {
    if cfg.solver.renormalize {
        RenormTable::diagonal(&cfg.spec, &cfg.grid, eps, cfg.solver.table_range, cfg.solver.table_nodes)
    } else {
        Ok(RenormTable::zero())
    }
}

/// `η` from the configuration or calibrated against the mollified forcing at `eps`.
fn amplitude(cfg: &RunConfig, f: &SpectralField, eps: f64) -> roughpde::Result<f64> {
    match cfg.solver.eta {
        Some(eta) => Ok(eta),
        None => calibrate_eta(
            &mollify_noise(f, eps),
            cfg.solver.params.alpha,
            cfg.solver.eta_target,
            &cfg.t_list(),
        ),
    }
}

fn solve_once(cfg: &RunConfig, f: &SpectralField, eps: f64, eta: f64) -> roughpde::Result<SolveResult> {
    let params = SolveParams { eta, ..cfg.solver.params };
    solve_quasilinear(f, eps, &unit_constants(cfg, eps)?, &cfg.solver.nonlinearity, &params)
}

pub fn solve(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let mut art = Artifacts::new(cfg, "solve")?;
    let f = noise_sample(cfg, &cfg.grid, 0);
    let eps = cfg.solve_eps();
    let eta = amplitude(cfg, &f, eps)?;
    let r = solve_once(cfg, &f, eps, eta)?;
    write_physical(&mut art.create("u", "rpf")?, &r.u)?;
    art.json("summary", &r.summary())?;
    let rows: Vec<Vec<String>> = r
        .iterates
        .iter()
        .map(|it| {
            vec![
                it.iter.to_string(),
                num(it.delta),
                num(it.fixed_point_residual),
                it.theta.to_string(),
                num(it.a0_star),
            ]
        })
        .collect();
    art.csv("iterates", &["iter", "delta", "fixed_point_residual", "theta", "a0_star"], &rows)?;
    let summary = format!(
        "eta {eta:.4e}, eps {eps:.3e}: {} after {} iterations, contraction {:.3e}",
        if r.converged { "converged" } else { "not converged" },
        r.iters(),
        r.contraction_ratio
    );
    Ok(art.outcome(Some(r.converged), summary))
}

pub fn eta_sweep(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let mut art = Artifacts::new(cfg, "eta-sweep")?;
    let f = noise_sample(cfg, &cfg.grid, 0);
    let eps = cfg.solve_eps();
    let eta0 = amplitude(cfg, &f, eps)?;
    let etas: Vec<f64> = (0..cfg.solver.eta_steps).map(|k| eta0 / 2f64.powi(k as i32)).collect();
    let runs = etas
        .par_iter()
        .map(|&eta| solve_once(cfg, &f, eps, eta))
        .collect::<roughpde::Result<Vec<_>>>()?;
    let rows: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            let s = r.summary();
            let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
            vec![
                num(r.eta),
                s.iters.to_string(),
                s.converged.to_string(),
                num(s.contraction_ratio),
                opt(s.holder_alpha),
                opt(s.m),
                opt(s.residual),
            ]
        })
        .collect();
    art.csv(
        "table",
        &["eta", "iters", "converged", "contraction_ratio", "holder_alpha", "M", "residual"],
        &rows,
    )?;
    let diag: Vec<_> = runs.iter().filter_map(|r| r.diagnostics.map(|d| (r.eta, d))).collect();
    let (sh, sm) = if diag.len() == runs.len() {
        let h: Vec<(f64, f64)> = diag.iter().map(|(e, d)| (*e, d.holder_alpha)).collect();
        let m: Vec<(f64, f64)> = diag.iter().map(|(e, d)| (*e, d.modelledness_m)).collect();
        (loglog_slope(&h), loglog_slope(&m))
    } else {
        (f64::NAN, f64::NAN)
    };
    let contraction = runs[0].contraction_ratio;
    let converged = runs.iter().all(|r| r.converged);
    let pass = converged && contraction < 0.5 && (0.7..=1.3).contains(&sh) && (1.7..=2.3).contains(&sm);
    art.json(
        "report",
        &json!({
            "etas": etas,
            "contraction_ratio": contraction,
            "holder_slope": sh,
            "M_slope": sm,
            "holder_band": [0.7, 1.3],
            "M_band": [1.7, 2.3],
            "pass": pass,
        }),
    )?;
    let summary = format!("contraction {contraction:.3e}, slopes [u]_alpha {sh:.3}, M {sm:.3}");
    Ok(art.outcome(Some(pass), summary))
}

fn continuation_rows(label: &str, c: &Continuation) -> Vec<Vec<String>> {
    c.table
        .iter()
        .map(|r| {
            vec![
                label.to_string(),
                num(r.eps),
                num(r.eps_next),
                num(r.sup_diff),
                num(r.holder_diff),
            ]
        })
        .collect()
}

pub fn eps_sweep(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let mut art = Artifacts::new(cfg, "eps-sweep")?;
    let f = noise_sample(cfg, &cfg.grid, 0);
    let eps = cfg.sweep_eps();
    let finest = eps.iter().cloned().fold(f64::INFINITY, f64::min);
    let eta = amplitude(cfg, &f, finest)?;
    let params = SolveParams { eta, diagnostics: false, ..cfg.solver.params };
    let nl = &cfg.solver.nonlinearity;
    let ap = cfg.solver.alpha_prime;
    let with = eps_continuation(
        &f,
        &eps,
        &|e| RenormTable::diagonal(&cfg.spec, &cfg.grid, e, cfg.solver.table_range, cfg.solver.table_nodes),
        nl,
        &params,
        ap,
    )?;
    let without = eps_continuation(&f, &eps, &|_| Ok(RenormTable::zero()), nl, &params, ap)?;
    let mut rows = continuation_rows("renormalized", &with);
    rows.extend(continuation_rows("unrenormalized", &without));
    art.csv("cauchy", &["run", "eps", "eps_next", "sup_diff", "holder_diff"], &rows)?;
    let pass = with.aborted_at.is_none() && with.decreasing && !without.decreasing;
    art.json(
        "report",
        &json!({
            "eta": eta,
            "eps": eps,
            "renormalized": {"decreasing_run": with.decreasing_run, "decreasing": with.decreasing, "aborted_at": with.aborted_at},
            "unrenormalized": {"decreasing_run": without.decreasing_run, "decreasing": without.decreasing, "aborted_at": without.aborted_at},
            "pass": pass,
        }),
    )?;
    let summary = format!(
        "decreasing run with renormalization {}, without {}",
        with.decreasing_run, without.decreasing_run
    );
    Ok(art.outcome(Some(pass), summary))
}

/// Noise modes with `|j1|, |j2| <= cutoff`, which makes the forcing a trigonometric polynomial.
fn smooth_forcing(cfg: &RunConfig) -> SpectralField {
    let g = cfg.classical.grid;
    let f = noise_sample(cfg, &g, 0);
    let c = cfg.classical.cutoff;
    let coeffs = f
        .coeffs()
        .iter()
        .enumerate()
        .map(|(idx, &z)| {
            let (j1, j2) = g.freq(idx);
            if j1.abs() <= c && j2.abs() <= c {
                z
            } else {
                Default::default()
            }
        })
        .collect();
    SpectralField::new(g, coeffs).expect("same grid")
}

pub fn classical_check_cmd(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let mut art = Artifacts::new(cfg, "classical-check")?;
    let cl = &cfg.classical;
    let f = smooth_forcing(cfg);
    let params = SolveParams {
        eta: cfg.solver.eta.unwrap_or(1.0),
        diagnostics: false,
        ..cfg.solver.params
    };
    let nl = &cfg.solver.nonlinearity;
    let r = solve_quasilinear(&f, cl.eps, &RenormTable::constant(cl.g1, cl.g2), nl, &params)?;
    let rep = classical_check(&r, &f, cl.g1, cl.g2, nl, &cl.params)?;
    let pass = rep.picard_converged && rep.max_discrepancy <= cl.tolerance;
    art.json("report", &json!({ "check": rep, "tolerance": cl.tolerance, "pass": pass }))?;
    let summary = format!(
        "max discrepancy {:.3e} (tolerance {:.1e}), |u| {:.3e}",
        rep.max_discrepancy, cl.tolerance, rep.picard_max
    );
    Ok(art.outcome(Some(pass), summary))
}

pub fn all(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let steps: [fn(&RunConfig) -> anyhow::Result<Outcome>; 7] = [
        sample_noise_cmd,
        verify_scaling,
        renorm_table,
        solve,
        eta_sweep,
        eps_sweep,
        classical_check_cmd,
    ];
    let mut outcomes = Vec::new();
    for step in steps {
        outcomes.push(step(cfg)?);
    }
    let mut art = Artifacts::new(cfg, "all")?;
    let pass = outcomes.iter().all(|o| o.pass != Some(false));
    art.json("summary", &json!({ "steps": outcomes, "pass": pass }))?;
    let summary = outcomes
        .iter()
        .map(|o| {
            let flag = match o.pass {
                Some(true) => "PASS",
                Some(false) => "FAIL",
                None => "done",
            };
            format!("{flag} {}: {}", o.command, o.summary)
        })
        .collect::<Vec<_>>()
        .join("\n");
    Ok(art.outcome(Some(pass), summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parabolic_shells() {
        assert_eq!(shell(0, 0), 0);
        assert_eq!(shell(1, 0), 1);
        assert_eq!(shell(0, 3), 1);
        assert_eq!(shell(0, 4), 2);
        assert_eq!(shell(-3, 1), 2);
        assert_eq!(shell(4, 64), 4);
    }
}
