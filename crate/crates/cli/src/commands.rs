use std::path::{Path, PathBuf};

use itocorr::config::{load_run_config, load_scheme, ExperimentSettings};
use itocorr::correction::{lambda_closed_form, lambda_quadrature};
use itocorr::estimators::{
    expected_qv, expected_qv_untruncated, negative_sobolev_ensemble, qv_ensemble, rate_fit, write_estimator_csv,
    xi_atom_ensemble, ChaosParams, EstimatorRow,
};
use itocorr::integrator::{run_coupled, SimConfig};
use itocorr::schemes::{Builtin, Scheme};
use serde_json::{json, Value};

use crate::manifest::ExperimentManifest;
use crate::{BuiltinArg, Cli, Command, Failure, GlobalOpts, SchemeArgs};

/// Replicate share above which `converge` exits with code 3.
const BLOWUP_QUOTA: f64 = 0.2;

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match &cli.command {
        Command::Lambda { scheme, nu, closed_form } => cmd_lambda(g, scheme, *nu, *closed_form),
        Command::Converge { eps, replicates } => cmd_converge(g, eps.as_deref(), *replicates),
        Command::Chaos { scheme, eps, samples, nu, gamma, chi, alpha, ncomp } => {
            let p = ChaosParams { gamma: *gamma, chi: *chi, nu: *nu, ncomp: *ncomp, samples: *samples, seed: seed(g, 0) };
            cmd_chaos(g, scheme, eps, &p, *alpha)
        }
        Command::Qv { nu, kmax, m, samples } => cmd_qv(g, *nu, *kmax, *m, *samples),
    }
}

fn seed(g: &GlobalOpts, fallback: u64) -> u64 {
    g.seed.unwrap_or(fallback)
}

fn workers(g: &GlobalOpts) -> usize {
    g.workers.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn out_dir(g: &GlobalOpts, settings: Option<&ExperimentSettings>, default: &str) -> PathBuf {
    g.out.clone().or_else(|| settings.and_then(|s| s.out_dir.clone())).unwrap_or_else(|| PathBuf::from(default))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure { code: 2, message: msg.into() }
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value serializes"));
}

fn resolve_scheme(g: &GlobalOpts, args: &SchemeArgs) -> Result<Scheme, Failure> {
    if let Some(path) = &args.scheme {
        return Ok(load_scheme(path)?.build()?);
    }
    if let Some(kind) = args.builtin {
        let kind = match kind {
            BuiltinArg::Identity => Builtin::Identity,
            BuiltinArg::FiniteDifference => Builtin::FiniteDifference,
            BuiltinArg::Galerkin => Builtin::Galerkin,
        };
        return Ok(Scheme::builtin(kind, args.a, args.b)?);
    }
    if let Some(path) = &g.config {
        return Ok(load_run_config(path)?.0.scheme);
    }
    Err(invalid("no scheme given: use --scheme, --builtin or --config"))
}

fn scheme_json(s: &Scheme) -> Value {
    json!({
        "name": s.name(),
        "f": s.spec().f.label(),
        "h": s.spec().h.label(),
        "mu": s.mu().to_string(),
        "q": s.spec().q,
    })
}

fn cmd_lambda(g: &GlobalOpts, args: &SchemeArgs, nu: f64, closed_form: bool) -> Result<(), Failure> {
    let scheme = resolve_scheme(g, args)?;
    if g.dry_run {
        print_json(&json!({"valid": true, "scheme": scheme_json(&scheme), "report": scheme.report()}));
        return Ok(());
    }
    let q = lambda_quadrature(&scheme, nu, g.tol)?;
    let mut out = json!({ "result": q });
    if closed_form {
        let (kind, a, b) = scheme
            .as_builtin()
            .ok_or_else(|| invalid(format!("scheme `{}` has no closed form", scheme.name())))?;
        let c = lambda_closed_form(kind, a, b, nu)?;
        out["closed_form"] = serde_json::to_value(&c).expect("serializable");
        out["difference"] = json!(q.value - c.value);
    }
    print_json(&out);
    Ok(())
}

fn config_json(cfg: &SimConfig, settings: &ExperimentSettings) -> Value {
    json!({
        "scheme": scheme_json(&cfg.scheme),
        "nu": cfg.nu,
        "n": cfg.n,
        "F": cfg.f.to_string(),
        "G": cfg.g.to_string(),
        "kmax": cfg.kmax,
        "pad": cfg.pad,
        "dt": cfg.dt,
        "T": cfg.t_end,
        "records": cfg.records,
        "noise_refine": cfg.noise_refine,
        "lambda_mode": cfg.lambda_mode,
        "v0": cfg.v0.to_string(),
        "alpha": cfg.alpha,
        "tol": cfg.tol,
        "eps": settings.eps,
        "replicates": settings.replicates,
    })
}

fn eps_tag(i: usize) -> String {
    format!("eps{i}")
}

fn slope_or_null(eps: &[f64], values: &[f64]) -> Value {
    match rate_fit(eps, values) {
        Ok(fit) => serde_json::to_value(fit).expect("serializable"),
        Err(_) => Value::Null,
    }
}

fn gnuplot_script(files: &[(f64, String)]) -> String {
    let mut s = String::from("set logscale y\nset xlabel 't'\nset ylabel 'sup error'\nset key outside\nset datafile separator ','\nplot ");
    let parts: Vec<String> = files
        .iter()
        .flat_map(|(eps, f)| {
            [
                format!("'{f}' using 1:2 with lines title 'corrected eps={eps}'"),
                format!("'{f}' using 1:3 with lines dashtype 2 title 'uncorrected eps={eps}'"),
            ]
        })
        .collect();
    s.push_str(&parts.join(", \\\n     "));
    s.push_str("\npause -1\n");
    s
}

fn cmd_converge(g: &GlobalOpts, eps: Option<&[f64]>, replicates: Option<usize>) -> Result<(), Failure> {
    let (mut cfg, mut settings) = match &g.config {
        Some(p) => load_run_config(p)?,
        None => {
            let cfg = SimConfig::burgers_default();
            let s = ExperimentSettings { eps: vec![0.125, 0.0625, 0.03125, 0.015625], replicates: 32, out_dir: None };
            (cfg, s)
        }
    };
    if let Some(e) = eps {
        settings.eps = e.to_vec();
    }
    if let Some(r) = replicates {
        settings.replicates = r;
    }
    cfg.seed = seed(g, cfg.seed);
    cfg.tol = g.tol;
    if let Some(&first) = settings.eps.first() {
        cfg.eps = first;
    }
    if settings.eps.iter().any(|e| !(*e > 0.0)) || settings.eps.is_empty() || settings.replicates == 0 {
        return Err(invalid("need positive ε values and at least one replicate"));
    }
    cfg.validate()?;
    let lambda = cfg.resolve_lambda()?;
    if g.dry_run {
        print_json(&json!({"valid": true, "config": config_json(&cfg, &settings), "lambda": lambda}));
        return Ok(());
    }

    let dir = out_dir(g, Some(&settings), "out");
    let mut man = ExperimentManifest::new(&dir, "converge", cfg.seed, config_json(&cfg, &settings))?;
    man.lambda = json!({"value": lambda, "mode": cfg.lambda_mode});
    man.start("run_coupled");
    let res = run_coupled(&cfg, &settings.eps, settings.replicates, workers(g))?;
    man.start("write");

    let mut files = Vec::new();
    let mut psi_rows = Vec::new();
    for (i, s) in res.summaries.iter().enumerate() {
        let name = format!("converge_{}.csv", eps_tag(i));
        let mut buf = Vec::new();
        s.write_csv(&mut buf)?;
        man.write(&name, &buf)?;
        let mut buf = Vec::new();
        s.write_stderr_csv(&mut buf)?;
        man.write(&format!("converge_{}_stderr.csv", eps_tag(i)), &buf)?;
        files.push((s.eps, name));
        if !s.times.is_empty() {
            psi_rows.push(EstimatorRow { eps: s.eps, mean: s.mean[0][0], stderr: s.stderr[0][0], n_samples: s.n_used });
        }
    }
    let mut buf = Vec::new();
    write_estimator_csv(&psi_rows, &mut buf)?;
    man.write("psi_gap.csv", &buf)?;
    man.write("plot.gp", gnuplot_script(&files).as_bytes())?;

    let final_col = |j: usize| -> Vec<f64> { res.summaries.iter().map(|s| s.mean[j].last().copied().unwrap_or(f64::NAN)).collect() };
    let psi: Vec<f64> = psi_rows.iter().map(|r| r.mean).collect();
    let psi_eps: Vec<f64> = psi_rows.iter().map(|r| r.eps).collect();
    let summary = json!({
        "lambda": lambda,
        "eps": settings.eps,
        "final_time": cfg.t_end,
        "final_sup_err_corrected": final_col(0),
        "final_sup_err_uncorrected": final_col(1),
        "final_halpha_err_corrected": final_col(2),
        "final_halpha_err_uncorrected": final_col(3),
        "slope_sup_err_corrected": slope_or_null(&settings.eps, &final_col(0)),
        "slope_sup_err_uncorrected": slope_or_null(&settings.eps, &final_col(1)),
        "slope_psi_gap": slope_or_null(&psi_eps, &psi),
        "replicates": settings.replicates,
        "blowup_fraction": res.blowup_fraction(),
        "blowups_per_eps": res.summaries.iter().map(|s| s.n_blowup).collect::<Vec<_>>(),
    });
    man.write("summary.json", &serde_json::to_vec_pretty(&summary).expect("serializable"))?;
    let sidecar = json!({
        "config": config_json(&cfg, &settings),
        "seed": cfg.seed,
        "input_digest": man.input_digest,
        "columns": ["t", "sup_err_corrected", "sup_err_uncorrected", "halpha_err_corrected", "halpha_err_uncorrected"],
    });
    man.write("converge.json", &serde_json::to_vec_pretty(&sidecar).expect("serializable"))?;
    let path = man.finish()?;
    print_json(&summary);
    eprintln!("wrote {}", path.display());

    let frac = res.blowup_fraction();
    if frac > BLOWUP_QUOTA {
        return Err(Failure { code: 3, message: format!("{:.0}% of replicates blew up (quota {:.0}%)", 100.0 * frac, 100.0 * BLOWUP_QUOTA) });
    }
    Ok(())
}

fn cmd_chaos(g: &GlobalOpts, args: &SchemeArgs, eps: &[f64], p: &ChaosParams, alpha: f64) -> Result<(), Failure> {
    let scheme = resolve_scheme(g, args)?;
    if eps.iter().any(|e| !(*e > 0.0 && *e < 1.0)) || !(p.gamma > 0.0 && p.gamma < p.chi) || p.samples < 2 || !(alpha > 0.5) {
        return Err(invalid("need ε in (0,1), 0 < γ < χ, α > 1/2 and at least two samples"));
    }
    let config = json!({
        "scheme": scheme_json(&scheme), "eps": eps, "samples": p.samples, "nu": p.nu,
        "gamma": p.gamma, "chi": p.chi, "alpha": alpha, "ncomp": p.ncomp,
    });
    if g.dry_run {
        print_json(&json!({"valid": true, "config": config}));
        return Ok(());
    }
    let w = workers(g);
    let dir = out_dir(g, None, "out");
    let mut man = ExperimentManifest::new(&dir, "chaos", p.seed, config)?;
    man.start("xi_atoms");
    let mut xi_csv = String::from("eps,y,mean,stderr,n_samples,lambda_eps_y,max_z\n");
    let mut worst_z: f64 = 0.0;
    for &e in eps {
        for s in xi_atom_ensemble(&scheme, e, p, w)? {
            worst_z = worst_z.max(s.max_z());
            xi_csv.push_str(&format!(
                "{:.16e},{},{:.16e},{:.16e},{},{:.16e},{:.4}\n",
                e, s.y, s.mean[0], s.stderr[0], p.samples, s.lambda_eps_y, s.max_z()
            ));
        }
    }
    man.write("xi_atoms.csv", xi_csv.as_bytes())?;
    man.start("negative_sobolev");
    let rows: Vec<EstimatorRow> =
        eps.iter().map(|&e| negative_sobolev_ensemble(&scheme, e, alpha, p, w)).collect::<Result<_, _>>()?;
    let mut buf = Vec::new();
    write_estimator_csv(&rows, &mut buf)?;
    man.write("negative_sobolev.csv", &buf)?;
    let means: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    let summary = json!({
        "xi_max_z": worst_z,
        "negative_sobolev_slope": slope_or_null(eps, &means),
        "negative_sobolev": rows,
    });
    man.write("chaos_summary.json", &serde_json::to_vec_pretty(&summary).expect("serializable"))?;
    man.finish()?;
    print_json(&summary);
    Ok(())
}

fn cmd_qv(g: &GlobalOpts, nu: f64, kmax: usize, m: usize, samples: usize) -> Result<(), Failure> {
    if !(nu > 0.0) || m < 2 * kmax + 1 || samples < 2 {
        return Err(invalid(format!("need ν > 0, M ≥ 2K+1 and ≥ 2 samples (ν={nu}, K={kmax}, M={m})")));
    }
    if m.is_multiple_of(2) {
        eprintln!("note: M = {m} is even; sampling uses the uniform even grid");
    }
    let config = json!({"nu": nu, "kmax": kmax, "m": m, "samples": samples});
    if g.dry_run {
        print_json(&json!({"valid": true, "config": config}));
        return Ok(());
    }
    let seed = seed(g, 0);
    let xs = qv_ensemble(nu, kmax, m, samples, seed, workers(g))?;
    let row = EstimatorRow::from_samples(0.0, &xs);
    let exact = expected_qv(nu, kmax, m);
    let report = json!({
        "monte_carlo_mean": row.mean,
        "monte_carlo_stderr": row.stderr,
        "n_samples": samples,
        "exact_sum": exact,
        "z": (row.mean - exact) / row.stderr,
        "untruncated": expected_qv_untruncated(nu, m),
        "pi_over_nu": std::f64::consts::PI / nu,
        "seed": seed,
    });
    if let Some(dir) = &g.out {
        write_report(dir, "qv", seed, config, &report)?;
    }
    print_json(&report);
    Ok(())
}

fn write_report(dir: &Path, command: &str, seed: u64, config: Value, report: &Value) -> Result<(), Failure> {
    let mut man = ExperimentManifest::new(dir, command, seed, config)?;
    man.write(&format!("{command}.json"), &serde_json::to_vec_pretty(report).expect("serializable"))?;
    man.finish()?;
    Ok(())
}
