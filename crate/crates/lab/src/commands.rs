//! One function per subcommand. Each returns its artifacts fully rendered;
//! [`crate::run`] is the only writer of the output directory, apart from the
//! resumable stage file of `beta search`.

use std::f64::consts::{PI, TAU};
use std::io::Write as _;
use std::path::Path;

use floquet_core::betasearch::{
    audit, halton_samples, instability_at, drift_check, run_construction, SampleRunner,
};
use floquet_core::cocycle::{lyapunov, solve_forward, transfer_matrix};
use floquet_core::evolution::{
    evolve_moments, instability_ratio, projection_gap, required_dimension, unitary_from_samples, LogFifthRoot,
    StateVector,
};
use floquet_core::model::cis;
use floquet_core::operator::{
    assemble_factorized, assemble_full, assemble_half, assemble_rank_one, perturb_rank_one, perturb_rank_one_full,
    theta_covariance_check, unitarity_defect, BandedUnitary, Boundary,
};
use floquet_core::spectral::{
    borel, cauchy, circle_grid, circle_mean, clark_borel, clark_real_part, clark_transform, cyclicity_rank,
    eigendecompose, eigensystem, fejer_indicator, localization_profile, windowed_bound_diagnostic, FitKind,
    SpectralMeasure,
};
use floquet_core::{make_params, BetaValue, Dyadic, ModelParams};
use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::artifact::{json_document, jsonl_line, meta, Artifact, Cell, Csv, Outcome, Status};
use crate::beta_io;
use crate::config::GeometryKind;
use crate::{Command, LabError, RunConfig};

type Res<T> = Result<T, LabError>;

pub fn execute(cmd: Command, cfg: &RunConfig, out: &Path) -> Res<Outcome> {
    match cmd {
        Command::OperatorCheck => operator_check(cfg),
        Command::OperatorExport => operator_export(cfg),
        Command::Evolve => evolve(cfg),
        Command::Lyapunov => lyapunov_grid(cfg),
        Command::Spectrum => spectrum(cfg),
        Command::Clark => clark(cfg),
        Command::Average => average(cfg),
        Command::BetaSearch => beta_search(cfg, out),
        Command::Verify => verify(cfg),
        Command::Report => report(cfg, out),
    }
}

/// Evaluates samples on the current rayon pool, preserving index order.
#[derive(Clone, Copy, Debug, Default)]
pub struct RayonRunner;

impl SampleRunner for RayonRunner {
    fn run(
        &self,
        n: usize,
        job: &(dyn Fn(usize) -> floquet_core::Result<Vec<f64>> + Sync),
    ) -> Vec<floquet_core::Result<Vec<f64>>> {
        (0..n).into_par_iter().map(job).collect()
    }
}

/// Named test functions of the `average` command.
pub fn test_function(name: &str) -> Option<Box<dyn Fn(f64) -> f64 + Sync>> {
    Some(match name {
        "one" => Box::new(|_| 1.0),
        "cos" => Box::new(f64::cos),
        "cos3_sin2" => Box::new(|e: f64| (3.0 * e).cos() + (2.0 * e).sin()),
        "fejer" => Box::new(fejer_indicator(1.0, 2.5, 16)),
        _ => return None,
    })
}

fn rng(cfg: &RunConfig, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    r.set_stream(stream);
    r
}

/// Uniform draw of `(t, α, θ, λ, β)` with `t ∈ [0.05, 0.95]` and float `β ∈ [0, 1)`.
fn random_params(r: &mut ChaCha8Rng) -> Res<ModelParams> {
    let t = r.gen_range(0.05..0.95);
    let (alpha, theta, lambda) = (r.gen_range(0.0..TAU), r.gen_range(0.0..TAU), r.gen_range(0.0..TAU));
    Ok(make_params(t, alpha, theta, lambda, BetaValue::Float(r.gen_range(0.0..1.0)))?)
}

fn operator_for(cfg: &RunConfig, params: &ModelParams) -> Res<BandedUnitary> {
    let b: Boundary = cfg.operator.boundary.into();
    Ok(match cfg.operator.geometry {
        GeometryKind::Half => assemble_rank_one(params, cfg.operator.n_dim, b)?,
        GeometryKind::Full => perturb_rank_one_full(&assemble_full(params, cfg.operator.n_dim, b)?, params.lambda())?,
    })
}

pub const UNITARITY_TOL: f64 = 1e-12;
pub const FACTORIZATION_TOL: f64 = 1e-13;
pub const COVARIANCE_TOL: f64 = 1e-13;

fn operator_check(cfg: &RunConfig) -> Res<Outcome> {
    let n = cfg.operator.n_dim;
    let b: Boundary = cfg.operator.boundary.into();
    let mut r = rng(cfg, 1);
    let draws = (0..cfg.operator.draws).map(|_| random_params(&mut r)).collect::<Res<Vec<_>>>()?;
    let rows = draws
        .par_iter()
        .map(|p| -> Res<Value> {
            let full = assemble_full(p, n / 2, b)?;
            let half = assemble_half(p, n, b)?;
            let rank_one = perturb_rank_one(&half, p.lambda())?;
            let (df, dh, dr) = (unitarity_defect(&full), unitarity_defect(&half), unitarity_defect(&rank_one));
            let ph = p.phases();
            let fh = assemble_factorized(&ph, p.scattering(), half.geometry(), b)?.max_abs_diff(&half)?;
            let ff = assemble_factorized(&ph, p.scattering(), full.geometry(), b)?.max_abs_diff(&full)?;
            Ok(json!({
                "t": p.t(), "alpha": p.alpha(), "theta": p.theta(), "lambda": p.lambda(), "beta": p.beta().to_f64(),
                "defect_full": df.interior, "defect_half": dh.interior, "defect_rank_one": dr.interior,
                "boundary_defect_full": df.boundary, "boundary_defect_half": dh.boundary,
                "boundary_defect_rank_one": dr.boundary,
                "factorization_half": fh, "factorization_full": ff,
            }))
        })
        .collect::<Res<Vec<_>>>()?;
    let max_of = |key: &str| rows.iter().map(|v| v[key].as_f64().unwrap_or(f64::NAN)).fold(0.0, f64::max);
    let base = cfg.model.params()?;
    let k = cfg.operator.theta_points;
    let cov = (0..k)
        .into_par_iter()
        .map(|j| {
            let theta = TAU * j as f64 / k as f64;
            Ok(theta_covariance_check(&base.with_theta(theta)?, n, b)?)
        })
        .collect::<Res<Vec<f64>>>()?;
    let cov_max = cov.iter().copied().fold(0.0, f64::max);
    let unitarity = ["defect_full", "defect_half", "defect_rank_one"].map(max_of).into_iter().fold(0.0, f64::max);
    let factorization = max_of("factorization_half").max(max_of("factorization_full"));
    let mut failures = Vec::new();
    if !(unitarity < UNITARITY_TOL) {
        failures.push(format!("interior unitarity defect {unitarity:e}"));
    }
    if !(factorization < FACTORIZATION_TOL) {
        failures.push(format!("factorization difference {factorization:e}"));
    }
    if !(cov_max < COVARIANCE_TOL) {
        failures.push(format!("covariance difference {cov_max:e}"));
    }
    let body = json!({
        "n_dim": n,
        "boundary": format!("{b:?}").to_lowercase(),
        "tolerances": { "unitarity": UNITARITY_TOL, "factorization": FACTORIZATION_TOL, "covariance": COVARIANCE_TOL },
        "max": {
            "defect_full": max_of("defect_full"),
            "defect_half": max_of("defect_half"),
            "defect_rank_one": max_of("defect_rank_one"),
            "boundary_defect_full": max_of("boundary_defect_full"),
            "boundary_defect_half": max_of("boundary_defect_half"),
            "boundary_defect_rank_one": max_of("boundary_defect_rank_one"),
            "factorization_half": max_of("factorization_half"),
            "factorization_full": max_of("factorization_full"),
            "covariance": cov_max,
        },
        "covariance": { "theta_points": k, "per_theta": cov },
        "draws": rows,
    });
    let status = Status::from_failures(failures);
    Ok(Outcome {
        status,
        artifacts: vec![Artifact::new("operator_check.json", json_document(Command::OperatorCheck.name(), cfg, body))],
    })
}

fn operator_export(cfg: &RunConfig) -> Res<Outcome> {
    let p = cfg.model.params()?;
    let u = operator_for(cfg, &p)?;
    let g = u.geometry();
    let mut csv = Csv::new(
        Command::OperatorExport.name(),
        cfg,
        &[format!("n_dim {} params_digest {:016x}", u.n_dim(), p.digest())],
        &["row_site", "col_site", "re", "im"],
    );
    for (i, j, v) in u.entries() {
        csv.row(&[Cell::I(g.site_of(i)), Cell::I(g.site_of(j)), Cell::F(v.re), Cell::F(v.im)]);
    }
    Ok(ok(vec![Artifact::new("operator.csv", csv.into_bytes())]))
}

fn ok(artifacts: Vec<Artifact>) -> Outcome {
    Outcome {
        status: Status::Ok,
        artifacts,
    }
}

fn evolve(cfg: &RunConfig) -> Res<Outcome> {
    let e = &cfg.evolve;
    let p = cfg.model.params()?;
    let b: Boundary = cfg.operator.boundary.into();
    let u = match cfg.operator.geometry {
        GeometryKind::Half => {
            let n_dim = if e.n_dim == 0 { required_dimension(e.n_max) } else { e.n_dim };
            assemble_rank_one(&p, n_dim, b)?
        }
        GeometryKind::Full => {
            let hw = if e.n_dim == 0 { e.n_max + 2 } else { e.n_dim };
            perturb_rank_one_full(&assemble_full(&p, hw, b)?, p.lambda())?
        }
    };
    let psi = StateVector::basis(u.geometry(), e.site)?;
    let series = evolve_moments(&u, &psi, e.n_max, &e.orders, &LogFifthRoot)?;
    let ratios = if e.orders.contains(&2) { Some(instability_ratio(&series, &LogFifthRoot)?) } else { None };
    let mut cols: Vec<String> = vec!["n".into(), "norm".into()];
    cols.extend(e.orders.iter().map(|m| format!("moment_{m}")));
    cols.push("tail_mass".into());
    if ratios.is_some() {
        cols.extend(["x2_over_F".into(), "x2_f5_over_n2".into()]);
    }
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut csv = Csv::new(
        Command::Evolve.name(),
        cfg,
        &[format!("n_dim {} site {} params_digest {:016x}", u.n_dim(), e.site, p.digest())],
        &cols,
    );
    for (i, row) in series.rows.iter().enumerate() {
        let mut cells = vec![Cell::I(row.n as i64), Cell::F(row.norm)];
        cells.extend(row.moments.iter().map(|&m| Cell::F(m)));
        cells.push(Cell::F(row.tail_mass));
        if let Some(r) = &ratios {
            cells.extend([Cell::F(r[i].over_f), Cell::F(r[i].f5_over_n2)]);
        }
        csv.row(&cells);
    }
    Ok(ok(vec![Artifact::new("evolve.csv", csv.into_bytes())]))
}

/// Points of the `lyapunov` command: random `(θ, E)` or the model θ on an even E grid.
pub fn lyapunov_points(cfg: &RunConfig) -> Vec<(f64, f64)> {
    let n = cfg.lyapunov.n_energies;
    if cfg.lyapunov.random {
        let mut r = rng(cfg, 2);
        (0..n).map(|_| (r.gen_range(0.0..TAU), r.gen_range(0.0..TAU))).collect()
    } else {
        (0..n).map(|j| (cfg.model.theta, TAU * j as f64 / n as f64)).collect()
    }
}

fn lyapunov_grid(cfg: &RunConfig) -> Res<Outcome> {
    let p = cfg.model.params()?;
    let bound = -(p.t() * p.t()).ln();
    let points = lyapunov_points(cfg);
    let rows = points
        .par_iter()
        .map(|&(theta, e)| -> Res<_> {
            let q = p.with_theta(theta)?;
            let r = lyapunov(&q.phases(), q.scattering(), e, cfg.lyapunov.n_factors as u64, cfg.lyapunov.rescale_every as u64)?;
            Ok((theta, e, r, q.digest()))
        })
        .collect::<Res<Vec<_>>>()?;
    let mut csv = Csv::new(
        Command::Lyapunov.name(),
        cfg,
        &[
            "gamma: log sup-norm growth per transfer matrix; stderr: batch means over 32 segments (convergence gauge)".into(),
            format!("bound ln(1/t^2) = {bound:e}"),
        ],
        &["theta", "E", "gamma", "stderr", "n_factors", "below_bound", "params_digest"],
    );
    for (theta, e, r, d) in rows {
        let below = r.gamma + 3.0 * r.stderr < bound;
        csv.row(&[
            Cell::F(theta),
            Cell::F(e),
            Cell::F(r.gamma),
            Cell::F(r.stderr),
            Cell::I(r.n_factors as i64),
            Cell::I(below as i64),
            Cell::S(format!("{d:016x}")),
        ]);
    }
    Ok(ok(vec![Artifact::new("lyapunov.csv", csv.into_bytes())]))
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

fn spectrum(cfg: &RunConfig) -> Res<Outcome> {
    let s = &cfg.spectrum;
    let p = cfg.model.params()?;
    let u = assemble_rank_one(&p, s.n_dim, Boundary::Closed)?;
    let es = eigensystem(&u, s.dense_limit)?;
    let records = localization_profile(&es, 0, &s.policy());
    let ph = p.phases();
    let gammas = records
        .par_iter()
        .map(|r| Ok(lyapunov(&ph, p.scattering(), r.phase, s.gamma_factors as u64, cfg.lyapunov.rescale_every as u64)?.gamma))
        .collect::<Res<Vec<f64>>>()?;
    let g = es.geometry();
    let mut text = String::new();
    let mut head = meta(Command::Spectrum.name(), cfg);
    head["record"] = json!("header");
    head["n_dim"] = json!(s.n_dim);
    head["params_digest"] = json!(format!("{:016x}", p.digest()));
    head["max_residual"] = json!(es.max_residual());
    jsonl_line(&mut text, &head);
    for (j, (r, gamma)) in records.iter().zip(&gammas).enumerate() {
        jsonl_line(
            &mut text,
            &json!({
                "record": "eigen",
                "index": j,
                "phase": r.phase,
                "weight": r.weight,
                "decay_rate": r.decay_rate,
                "fit": match r.fit { FitKind::Envelope => "envelope", FitKind::Floor => "floor" },
                "ipr": r.ipr,
                "boundary_flag": r.boundary_flag,
                "peak_site": g.site_of(r.peak),
                "gamma": gamma,
            }),
        );
    }
    let free: Vec<usize> = (0..records.len()).filter(|&j| !records[j].boundary_flag).collect();
    let localized = free.iter().filter(|&&j| records[j].decay_rate < s.localized_rate).count();
    let fraction = if free.is_empty() { 0.0 } else { localized as f64 / free.len() as f64 };
    jsonl_line(
        &mut text,
        &json!({
            "record": "summary",
            "n_vectors": records.len(),
            "flagged": records.len() - free.len(),
            "localized_rate": s.localized_rate,
            "localized": localized,
            "localized_fraction": fraction,
            "median_decay_rate": median(free.iter().map(|&j| records[j].decay_rate).collect()),
            "median_gamma": median(free.iter().map(|&j| gammas[j]).collect()),
            "median_gamma_per_site": median(free.iter().map(|&j| gammas[j] / 2.0).collect()),
            "gamma_factors": s.gamma_factors,
        }),
    );
    Ok(ok(vec![Artifact::new("spectrum.jsonl", text.into_bytes())]))
}

/// Per-point transform errors for one `λ`.
pub struct ClarkPoint {
    pub z: Complex64,
    pub cauchy: f64,
    pub borel: f64,
    pub real_part: f64,
    pub relation: f64,
}

pub fn clark_points(mu0: &SpectralMeasure, mul: &SpectralMeasure, lambda: f64, grid: &[Complex64]) -> Res<Vec<ClarkPoint>> {
    grid.iter()
        .map(|&z| {
            let (f0, r0) = (cauchy(mu0, z)?, borel(mu0, z)?);
            let (fl, rl) = (cauchy(mul, z)?, borel(mul, z)?);
            Ok(ClarkPoint {
                z,
                cauchy: (fl - clark_transform(f0, lambda)?).norm(),
                borel: (rl - clark_borel(r0, z, lambda)?).norm(),
                real_part: (fl.re - clark_real_part(f0, lambda)?).abs(),
                relation: (f0 - 2.0 * z * r0 - 1.0).norm().max((fl - 2.0 * z * rl - 1.0).norm()),
            })
        })
        .collect()
}

fn clark(cfg: &RunConfig) -> Res<Outcome> {
    let c = &cfg.clark;
    let base = cfg.model.params()?.with_lambda(0.0)?;
    let mu0 = eigendecompose(&assemble_half(&base, c.n_dim, Boundary::Closed)?, 0)?;
    let grid = circle_grid(c.radius, c.n_points);
    let per_lambda = c
        .lambdas
        .par_iter()
        .map(|&l| {
            let mul = eigendecompose(&assemble_rank_one(&base.with_lambda(l)?, c.n_dim, Boundary::Closed)?, 0)?;
            clark_points(&mu0, &mul, l, &grid)
        })
        .collect::<Res<Vec<_>>>()?;
    let mut csv = Csv::new(
        Command::Clark.name(),
        cfg,
        &[format!("n_dim {} radius {:e} params_digest {:016x}", c.n_dim, c.radius, base.digest())],
        &["lambda", "k", "z_re", "z_im", "cauchy_err", "borel_err", "real_part_err", "relation_err"],
    );
    for (&l, pts) in c.lambdas.iter().zip(&per_lambda) {
        for (k, q) in pts.iter().enumerate() {
            csv.row(&[
                Cell::F(l),
                Cell::I(k as i64),
                Cell::F(q.z.re),
                Cell::F(q.z.im),
                Cell::F(q.cauchy),
                Cell::F(q.borel),
                Cell::F(q.real_part),
                Cell::F(q.relation),
            ]);
        }
    }
    Ok(ok(vec![Artifact::new("clark.csv", csv.into_bytes())]))
}

/// `n_lambda` values of the averaging ladder: `2, 4, …` while they divide
/// `n_lambda`, then `n_lambda` and `2 n_lambda`. Every entry divides the last.
pub fn average_ladder(n_lambda: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (1..)
        .map(|k| 1usize << k)
        .take_while(|&m| m < n_lambda && n_lambda % m == 0)
        .collect();
    out.extend([n_lambda, 2 * n_lambda]);
    out
}

fn average(cfg: &RunConfig) -> Res<Outcome> {
    let a = &cfg.average;
    let p = cfg.model.params()?;
    let ladder = average_ladder(a.n_lambda);
    let finest = *ladder.last().expect("ladder is non-empty");
    let measures = (0..finest)
        .into_par_iter()
        .map(|i| Ok(eigendecompose(&assemble_rank_one(&p.with_lambda(TAU * i as f64 / finest as f64)?, a.n_dim, Boundary::Closed)?, 0)?))
        .collect::<Res<Vec<_>>>()?;
    let mut reports = Vec::new();
    for name in &a.functions {
        let g = test_function(name).ok_or_else(|| LabError::Config(format!("unknown function `{name}`")))?;
        let rhs = circle_mean(&*g, 4096);
        let values: Vec<f64> = measures.iter().map(|m| m.integrate(&*g)).collect();
        let steps: Vec<Value> = ladder
            .iter()
            .map(|&n| {
                let stride = finest / n;
                let lhs = values.iter().step_by(stride).sum::<f64>() / n as f64;
                json!({ "n_lambda": n, "lhs": lhs, "defect": (lhs - rhs).abs() })
            })
            .collect();
        let main = steps.iter().find(|s| s["n_lambda"] == json!(a.n_lambda)).cloned().unwrap_or(Value::Null);
        reports.push(json!({
            "function": name,
            "rhs": rhs,
            "n_lambda": a.n_lambda,
            "lhs": main["lhs"],
            "defect": main["defect"],
            "ladder": steps,
        }));
    }
    let body = json!({
        "n_dim": a.n_dim,
        "normalization": "lambda average (1/n) sum over lambda_i = 2 pi i / n; rhs = integral g dE / 2pi",
        "params_digest": format!("{:016x}", p.digest()),
        "functions": reports,
    });
    Ok(ok(vec![Artifact::new("average.json", json_document(Command::Average.name(), cfg, body))]))
}

fn core_io(e: std::io::Error) -> floquet_core::Error {
    floquet_core::Error::Resource(format!("stage file: {e}"))
}

fn beta_search(cfg: &RunConfig, out: &Path) -> Res<Outcome> {
    let ccfg = cfg.beta.construction(&cfg.model)?;
    let path = out.join(beta_io::FILE);
    let history = match std::fs::read_to_string(&path) {
        Ok(t) => beta_io::resume_history(&t, cfg)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let mut text = String::new();
    jsonl_line(&mut text, &beta_io::header(cfg));
    for s in &history {
        jsonl_line(&mut text, &beta_io::stage_json(s));
    }
    let mut file = std::fs::File::create(&path)?;
    file.write_all(text.as_bytes())?;
    let outcome = run_construction(&ccfg, history, &RayonRunner, &mut |s| {
        let mut line = String::new();
        jsonl_line(&mut line, &beta_io::stage_json(s));
        file.write_all(line.as_bytes()).and_then(|_| file.flush()).map_err(core_io)?;
        text.push_str(&line);
        Ok(())
    })?;
    drop(file);
    let mut failures = Vec::new();
    match audit(&outcome.stages) {
        Ok(rep) => jsonl_line(&mut text, &json!({ "record": "audit", "ok": true, "lines": rep.lines })),
        Err(e) => {
            failures.push(format!("audit: {e}"));
            jsonl_line(&mut text, &json!({ "record": "audit", "ok": false, "error": e.to_string() }));
        }
    }
    if let Some(last) = outcome.stages.last() {
        let (theta, lambda) = halton_samples(ccfg.n_samples.max(1))[0];
        let ts: Vec<u64> = outcome.stages.iter().map(|s| s.t).collect();
        let params = make_params(ccfg.t, ccfg.alpha, theta, lambda, BetaValue::Exact(last.next_beta.clone()))?;
        let ratios = instability_at(&params, &ts)?;
        let non_decreasing = ratios.windows(2).all(|w| w[1] >= w[0]);
        jsonl_line(
            &mut text,
            &json!({
                "record": "instability",
                "beta": beta_io::dyadic_json(&last.next_beta),
                "theta": theta,
                "lambda": lambda,
                "n": ts,
                "x2_f5_over_n2": ratios,
                "non_decreasing": non_decreasing,
            }),
        );
    }
    let status = match &outcome.halted {
        Some(e @ (floquet_core::Error::Budget(_) | floquet_core::Error::Resource(_))) => Status::Partial(e.to_string()),
        Some(e) => Status::Failed(e.to_string()),
        None => Status::from_failures(failures),
    };
    let mut tail = meta(Command::BetaSearch.name(), cfg);
    tail["record"] = json!("outcome");
    tail["stages"] = json!(outcome.stages.len());
    tail["status"] = json!(status.label());
    tail["message"] = json!(status.message());
    jsonl_line(&mut text, &tail);
    Ok(Outcome {
        status,
        artifacts: vec![Artifact::new(beta_io::FILE, text.into_bytes())],
    })
}

fn gaussian_vector(r: &mut ChaCha8Rng, n: usize) -> DVector<Complex64> {
    DVector::from_fn(n, |_, _| Complex64::new(r.sample(StandardNormal), r.sample(StandardNormal)))
}

pub const PROJECTION_SLACK: f64 = 1e-10;

/// Random unitary, coordinate projection and orthogonal split `ξ = η + ψ`
/// with `‖ψ‖` uniform in `[0, 1]`.
fn projection_draws(cfg: &RunConfig) -> Res<Value> {
    let v = &cfg.verify;
    let mut r = rng(cfg, 3);
    let jobs: Vec<_> = (0..v.projection_draws)
        .map(|_| {
            let n = r.gen_range(2..=v.projection_max_dim.max(2));
            let t = r.gen_range(1..=v.projection_max_t.max(1));
            let seed: u64 = r.gen();
            (n, t, seed)
        })
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(n, t, seed)| -> Res<(f64, f64)> {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let u = unitary_from_samples(n, || r.sample(StandardNormal));
            let mut order: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                order.swap(i, r.gen_range(0..=i));
            }
            let k = r.gen_range(1..=n);
            let p = &order[..k];
            let a = gaussian_vector(&mut r, n).normalize();
            let mut b = gaussian_vector(&mut r, n);
            b -= &a * a.dotc(&b);
            let b = b.normalize();
            let w: f64 = r.gen_range(0.0..=1.0);
            let psi = &a * Complex64::from(w);
            let eta = &b * Complex64::from((1.0 - w * w).max(0.0).sqrt());
            Ok(projection_gap(&u, p, &eta, &psi, t)?)
        })
        .collect::<Res<Vec<_>>>()?;
    let violations = rows.iter().filter(|(l, rhs)| *l < rhs - PROJECTION_SLACK).count();
    let nontrivial = rows.iter().filter(|(_, rhs)| *rhs > 0.0).count();
    let min_margin = rows.iter().map(|(l, rhs)| l - rhs).fold(f64::INFINITY, f64::min);
    Ok(json!({
        "draws": rows.len(),
        "slack": PROJECTION_SLACK,
        "violations": violations,
        "nontrivial": nontrivial,
        "min_margin": min_margin,
    }))
}

fn drift_draws(cfg: &RunConfig) -> Res<Value> {
    let v = &cfg.verify;
    let mut r = rng(cfg, 4);
    let mut pairs = Vec::with_capacity(v.drift_draws);
    for _ in 0..v.drift_draws {
        let p = random_params(&mut r)?;
        let step = 10f64.powf(r.gen_range(-10.0..-2.0)) * if r.gen_bool(0.5) { 1.0 } else { -1.0 };
        let q = p.with_beta(BetaValue::Float(p.beta().to_f64() + step))?;
        pairs.push((p, q));
    }
    let reports = pairs
        .par_iter()
        .map(|(p, q)| Ok(drift_check(p, q, v.drift_n_max)?))
        .collect::<Res<Vec<_>>>()?;
    let violations: usize = reports.iter().map(|r| r.violations).sum();
    let max_ratio: Vec<Value> = (1..=v.drift_n_max)
        .map(|n| {
            let m = reports
                .iter()
                .flat_map(|r| r.rows.iter().filter(move |x| x.n == n).map(|x| x.ratio))
                .fold(0.0, f64::max);
            json!({ "n": n, "max_ratio": m })
        })
        .collect();
    Ok(json!({
        "draws": reports.len(),
        "n_max": v.drift_n_max,
        "violations": violations,
        "tightness": max_ratio,
    }))
}

fn window_diagnostic(cfg: &RunConfig) -> Res<Value> {
    let v = &cfg.verify;
    let p = cfg.model.params()?;
    let window = (v.window_arc[0], v.window_arc[1]);
    let d = windowed_bound_diagnostic(&p, v.window_n_dim, window, v.window_epsilon, v.window_t, &LogFifthRoot)?;
    Ok(json!({
        "n_dim": v.window_n_dim,
        "window": [window.0, window.1],
        "epsilon": v.window_epsilon,
        "t": v.window_t,
        "lhs": d.lhs,
        "rhs": d.rhs,
        "psi_norm_sqr": d.psi_norm_sqr,
        "triple_norm_sqr": d.triple_norm_sqr,
        "slack": v.window_slack,
        "holds_with_slack": d.holds_with_slack(v.window_slack),
    }))
}

fn cyclicity(cfg: &RunConfig) -> Res<Value> {
    let n = cfg.verify.cyclicity_n_dim;
    let p = cfg.model.params()?;
    let rank = cyclicity_rank(&assemble_rank_one(&p, n, Boundary::Closed)?, 0, n)?;
    Ok(json!({ "n_dim": n, "rank": rank, "cyclic": rank == n }))
}

/// `⟨X²⟩` from `φ_1` on the half line for `t = 0` (pinned) and `t = 1` (ballistic).
fn extreme_cases(cfg: &RunConfig) -> Res<Value> {
    let n_max = 200;
    let n_dim = required_dimension(n_max);
    let m = &cfg.model;
    let series = |t: f64| -> Res<Vec<f64>> {
        let p = make_params(t, m.alpha, m.theta, m.lambda, cfg.model.beta_value()?)?;
        let u = assemble_rank_one(&p, n_dim, Boundary::Open)?;
        let s = evolve_moments(&u, &StateVector::basis(u.geometry(), 1)?, n_max, &[2], &LogFifthRoot)?;
        Ok(s.moment(2).expect("order 2 requested"))
    };
    let pinned = series(0.0)?.iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max);
    let ballistic = series(1.0)?
        .iter()
        .enumerate()
        .skip(1)
        .map(|(n, x)| (x / (4.0 * (n * n) as f64) - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(json!({ "n_max": n_max, "t0_max_abs_error": pinned, "t1_max_rel_error_vs_4n2": ballistic }))
}

/// Largest amplitude beyond site `2n + 2` after `n` steps, for `n ≤ 200`.
fn light_cone(cfg: &RunConfig) -> Res<Value> {
    let n_max = 200;
    let p = cfg.model.params()?;
    let n_dim = 2 * required_dimension(n_max);
    let u = assemble_rank_one(&p, n_dim, Boundary::Open)?;
    let mut x = StateVector::basis(u.geometry(), 1)?.amplitudes().to_vec();
    let mut y = x.clone();
    let mut worst = 0.0f64;
    for n in 1..=n_max {
        u.matvec(&x, &mut y);
        std::mem::swap(&mut x, &mut y);
        worst = x[(2 * n + 2)..].iter().map(|a| a.norm()).fold(worst, f64::max);
    }
    Ok(json!({ "n_max": n_max, "n_dim": n_dim, "max_outside": worst }))
}

/// `|det T_k(E)| - 1` and `det T_k(E) - e^{4πiβ}` on a 64 × 64 grid.
fn transfer_det(cfg: &RunConfig) -> Res<Value> {
    let p = cfg.model.params()?;
    let (ph, s) = (p.phases(), p.scattering());
    let want = cis(4.0 * PI * p.beta().to_f64());
    let mut modulus = 0.0f64;
    let mut phase = 0.0f64;
    for k in 1..=64i64 {
        for j in 0..64 {
            let d = transfer_matrix(&ph, s, k, TAU * j as f64 / 64.0)?.det();
            modulus = modulus.max((d.norm() - 1.0).abs());
            phase = phase.max((d - want).norm());
        }
    }
    Ok(json!({ "grid": [64, 64], "max_modulus_error": modulus, "max_phase_error": phase }))
}

/// Shooting from `c_1` against eigenvectors of the closed truncation of
/// `U(β,θ)⁺` at `β = 1/2`, over the 20 eigenpairs with the largest `|c_1|`.
fn eigen_cocycle(cfg: &RunConfig) -> Res<Value> {
    let (n_dim, sites, count) = (256, 50, 20);
    let m = &cfg.model;
    let beta = BetaValue::Exact(Dyadic::parse_rational("1/2")?);
    let p = make_params(m.t, m.alpha, m.theta, 0.0, beta)?;
    let es = eigensystem(&assemble_half(&p, n_dim, Boundary::Closed)?, floquet_core::spectral::DENSE_LIMIT)?;
    let mut order: Vec<usize> = (0..n_dim).collect();
    order.sort_by(|&a, &b| es.vectors()[(0, b)].norm().total_cmp(&es.vectors()[(0, a)].norm()).then(a.cmp(&b)));
    let ph = p.phases();
    let mut worst = 0.0f64;
    for &j in &order[..count] {
        let v = es.vector(j);
        let sol = solve_forward(&ph, p.scattering(), es.phases()[j], v[0], sites / 2)?;
        let scale = (0..sites).map(|k| v[k].norm()).fold(0.0, f64::max);
        let err = (1..=sites)
            .map(|k| (sol.coefficient(k).expect("site in range") - v[k - 1]).norm())
            .fold(0.0, f64::max);
        worst = worst.max(err / scale);
    }
    Ok(json!({ "n_dim": n_dim, "sites": sites, "eigenpairs": count, "beta": "1/2", "max_rel_error": worst }))
}

pub const EXTREME_TOL: f64 = 1e-12;
pub const BALLISTIC_TOL: f64 = 1e-9;
pub const DET_TOL: f64 = 1e-12;
pub const SHOOTING_TOL: f64 = 1e-6;

fn verify(cfg: &RunConfig) -> Res<Outcome> {
    let projection = projection_draws(cfg)?;
    let drift = drift_draws(cfg)?;
    let window = window_diagnostic(cfg)?;
    let cyc = cyclicity(cfg)?;
    let extremes = extreme_cases(cfg)?;
    let cone = light_cone(cfg)?;
    let det = transfer_det(cfg)?;
    let shoot = eigen_cocycle(cfg)?;
    let mut failures = Vec::new();
    let mut need = |ok: bool, msg: &str| {
        if !ok {
            failures.push(msg.to_string());
        }
    };
    let f = |v: &Value, k: &str| v[k].as_f64().unwrap_or(f64::NAN);
    need(projection["violations"] == json!(0), "projection inequality violations");
    need(drift["violations"] == json!(0), "drift bound violations");
    need(cyc["cyclic"] == json!(true), "phi_1 not cyclic");
    need(f(&extremes, "t0_max_abs_error") < EXTREME_TOL, "t = 0 moments");
    need(f(&extremes, "t1_max_rel_error_vs_4n2") < BALLISTIC_TOL, "t = 1 moments");
    need(f(&cone, "max_outside") == 0.0, "light cone");
    need(f(&det, "max_modulus_error") < DET_TOL && f(&det, "max_phase_error") < DET_TOL, "transfer determinant");
    need(f(&shoot, "max_rel_error") < SHOOTING_TOL, "shooting vs eigenvectors");
    let body = json!({
        "projection": projection,
        "drift": drift,
        "window_bound": window,
        "cyclicity": cyc,
        "extreme_cases": extremes,
        "light_cone": cone,
        "transfer_det": det,
        "eigen_cocycle": shoot,
    });
    Ok(Outcome {
        status: Status::from_failures(failures),
        artifacts: vec![Artifact::new("verify.json", json_document(Command::Verify.name(), cfg, body))],
    })
}

fn csv_digest(text: &str) -> Option<String> {
    text.lines()
        .next()?
        .split_whitespace()
        .find_map(|w| w.strip_prefix("config_digest=").map(str::to_string))
}

fn csv_column_max(text: &str, column: &str) -> Option<f64> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let idx = lines.next()?.split(',').position(|c| c == column)?;
    lines
        .filter_map(|l| l.split(',').nth(idx)?.parse::<f64>().ok())
        .fold(None, |m, x| Some(m.map_or(x, |m: f64| m.max(x))))
}

fn summarize(name: &str, text: &str) -> Option<(String, String)> {
    let parse = |s: &str| serde_json::from_str::<Value>(s).ok();
    let short = |d: &str| d.chars().take(12).collect::<String>();
    match name {
        "operator_check.json" | "average.json" | "verify.json" => {
            let v = parse(text)?;
            let digest = short(v["meta"]["config_digest"].as_str()?);
            let summary = match name {
                "operator_check.json" => {
                    let m = &v["max"];
                    format!(
                        "unitarity {:.1e}/{:.1e}/{:.1e}, factorization {:.1e}, covariance {:.1e}",
                        m["defect_full"].as_f64()?,
                        m["defect_half"].as_f64()?,
                        m["defect_rank_one"].as_f64()?,
                        m["factorization_half"].as_f64()?.max(m["factorization_full"].as_f64()?),
                        m["covariance"].as_f64()?
                    )
                }
                "average.json" => v["functions"]
                    .as_array()?
                    .iter()
                    .map(|f| format!("{} {:.1e}", f["function"].as_str().unwrap_or("?"), f["defect"].as_f64().unwrap_or(f64::NAN)))
                    .collect::<Vec<_>>()
                    .join(", "),
                _ => format!(
                    "projection violations {}, drift violations {}, window lhs/rhs {:.3}/{:.3}, shooting {:.1e}",
                    v["projection"]["violations"],
                    v["drift"]["violations"],
                    v["window_bound"]["lhs"].as_f64()?,
                    v["window_bound"]["rhs"].as_f64()?,
                    v["eigen_cocycle"]["max_rel_error"].as_f64()?
                ),
            };
            Some((digest, summary))
        }
        "evolve.csv" | "lyapunov.csv" | "clark.csv" | "operator.csv" => {
            let digest = short(&csv_digest(text)?);
            let rows = text.lines().filter(|l| !l.starts_with('#')).count().saturating_sub(1);
            let summary = match name {
                "evolve.csv" => format!("{rows} rows, max <X^2> {:.4e}", csv_column_max(text, "moment_2").unwrap_or(f64::NAN)),
                "lyapunov.csv" => {
                    let g: Vec<f64> = text
                        .lines()
                        .filter(|l| !l.starts_with('#'))
                        .skip(1)
                        .filter_map(|l| l.split(',').nth(2)?.parse().ok())
                        .collect();
                    let min = g.iter().copied().fold(f64::INFINITY, f64::min);
                    format!("{} points, min gamma {min:.4}", g.len())
                }
                "clark.csv" => format!(
                    "max errors cauchy {:.1e}, borel {:.1e}, relation {:.1e}",
                    csv_column_max(text, "cauchy_err")?,
                    csv_column_max(text, "borel_err")?,
                    csv_column_max(text, "relation_err")?
                ),
                _ => format!("{rows} nonzero entries"),
            };
            Some((digest, summary))
        }
        "spectrum.jsonl" | "beta_stages.jsonl" => {
            let recs: Vec<Value> = text.lines().filter_map(parse).collect();
            let find = |r: &str| recs.iter().find(|v| v["record"] == json!(r));
            if name == "spectrum.jsonl" {
                let s = find("summary")?;
                Some((
                    short(find("header")?["config_digest"].as_str()?),
                    format!(
                        "localized {:.3} of unflagged, median rate {:.4}, median gamma/2 {:.4}",
                        s["localized_fraction"].as_f64()?,
                        s["median_decay_rate"].as_f64().unwrap_or(f64::NAN),
                        s["median_gamma_per_site"].as_f64().unwrap_or(f64::NAN)
                    ),
                ))
            } else {
                let o = find("outcome")?;
                let ts: Vec<String> = recs
                    .iter()
                    .filter(|v| v["record"] == json!("stage"))
                    .map(|v| format!("{}(k={})", v["t"], v["kappa"]))
                    .collect();
                Some((
                    short(o["config_digest"].as_str()?),
                    format!("{} stages, T = [{}], status {}", ts.len(), ts.join(", "), o["status"].as_str()?),
                ))
            }
        }
        _ => None,
    }
}

pub const REPORT_FILE: &str = "report.txt";

fn report(cfg: &RunConfig, out: &Path) -> Res<Outcome> {
    let known = [
        "operator_check.json",
        "operator.csv",
        "evolve.csv",
        "lyapunov.csv",
        "spectrum.jsonl",
        "clark.csv",
        "average.json",
        "beta_stages.jsonl",
        "verify.json",
    ];
    let mut rows = Vec::new();
    for name in known {
        let Ok(text) = std::fs::read_to_string(out.join(name)) else { continue };
        let (digest, summary) = summarize(name, &text).unwrap_or_else(|| ("?".into(), "unreadable".into()));
        rows.push((name, digest, summary));
    }
    let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(8).max(8);
    let mut text = format!(
        "# {} {} command=report config_digest={}\n{:<w$}  {:<12}  summary\n",
        crate::TOOL,
        crate::VERSION,
        cfg.digest(),
        "artifact",
        "config"
    );
    for (name, digest, summary) in rows {
        text.push_str(&format!("{name:<w$}  {digest:<12}  {summary}\n"));
    }
    Ok(ok(vec![Artifact::new(REPORT_FILE, text.into_bytes())]))
}
