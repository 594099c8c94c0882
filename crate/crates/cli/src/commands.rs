use std::path::{Path, PathBuf};

use nrdf_core::bsms::{self, BinaryMarkovSource};
use nrdf_core::finite::{solve_for_distortion, DistortionMatrix, FiniteMarkovSource, SolverOptions};
use nrdf_core::gauss::{solve, ChannelNoise, GaussMarkovModel, GaussOptions};
use nrdf_core::info::ProbValue;
use nrdf_core::realization::{capacity, simulate, RealizationConfig};
use nrdf_core::spectral::zero_delay_rate_loss;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{field_err, Format};
use crate::output::{cell, csv_text, emit, fmt_g, gnuplot_script};
use crate::{Failure, Resolved};

const VERIFY_TOL: f64 = 1e-3;
const GAUSS_TOL: f64 = 1e-9;
const RATE_LOSS_FLOOR: f64 = -1e-6;

fn prob(field: &str, v: f64) -> Result<ProbValue, Failure> {
    ProbValue::new(v).map_err(|e| field_err(field, e).into())
}

fn source(p: f64) -> Result<BinaryMarkovSource, Failure> {
    BinaryMarkovSource::new(p).map_err(|e| field_err("p", e).into())
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Writes `text` to `out` (or stdout) and, for CSV files, a gnuplot script next to it.
fn write_result(r: &Resolved, text: &str, plot: impl FnOnce(&Path) -> String) -> Result<(), Failure> {
    emit(r.out.as_deref(), text)?;
    if let (Some(out), Format::Csv) = (&r.out, r.format.unwrap_or(Format::Csv)) {
        emit(Some(&out.with_extension("gp")), &plot(out))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    #[serde(rename = "D")]
    d: f64,
    r_na: f64,
    r_classical: Option<f64>,
    slb: f64,
    rl_bound: Option<f64>,
}

#[derive(Serialize)]
struct CurveReport<'a> {
    p: f64,
    critical_distortion: f64,
    rows: &'a [CurveRow],
}

pub fn bsms_curve(p: f64, r: &Resolved) -> Result<(), Failure> {
    let src = source(p)?;
    if r.grid.iter().any(|&d| !(0.0..=0.5).contains(&d)) {
        return Err(field_err("D_grid", "points must lie in [0, 1/2]").into());
    }
    let dc = src.critical_distortion();
    let rows = r
        .grid
        .iter()
        .map(|&d| {
            let pd = prob("D_grid", d)?;
            let low = d <= dc;
            Ok(CurveRow {
                d,
                r_na: bsms::nrdf(&src, pd),
                r_classical: if low { Some(bsms::classical_rdf_low_region(&src, pd)?) } else { None },
                slb: bsms::shannon_lower_bound(&src, pd)?,
                rl_bound: if low { Some(bsms::causal_rate_loss_bound(&src, pd)?) } else { None },
            })
        })
        .collect::<Result<Vec<_>, Failure>>()?;

    let text = match r.format.unwrap_or(Format::Csv) {
        Format::Json => json(&CurveReport {
            p,
            critical_distortion: dc,
            rows: &rows,
        }),
        Format::Csv => {
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|row| {
                    vec![
                        fmt_g(row.d),
                        fmt_g(row.r_na),
                        cell(row.r_classical),
                        fmt_g(row.slb),
                        cell(row.rl_bound),
                    ]
                })
                .collect();
            csv_text(&["D", "R_na", "R_classical", "SLB", "RL_bound"], &body)
        }
    };
    write_result(r, &text, |out| {
        gnuplot_script(
            out,
            &format!("Binary symmetric Markov source, p = {}", fmt_g(p)),
            "D",
            "bits/sample",
            &[(2, "NRDF"), (3, "classical R(D)"), (4, "SLB")],
        )
    })
}

#[derive(Serialize)]
struct VerifyRow {
    #[serde(rename = "D")]
    d: f64,
    closed_form: f64,
    solver: Option<f64>,
    abs_diff: Option<f64>,
    pass: bool,
    error: Option<String>,
}

pub fn bsms_verify(p: f64, memory: usize, r: &Resolved) -> Result<(), Failure> {
    let src = source(p)?;
    if r.grid.iter().any(|&d| !(d > 0.0 && d < 0.5)) {
        return Err(field_err("D_grid", "points must lie in (0, 1/2)").into());
    }
    if memory == 0 {
        return Err(field_err("memory", "must be at least 1").into());
    }
    let tol = r.tol.unwrap_or(VERIFY_TOL);
    let finite = FiniteMarkovSource::from(&src);
    let rho = DistortionMatrix::hamming(2);
    let opts = SolverOptions {
        memory,
        ..SolverOptions::default()
    };
    let rows: Vec<VerifyRow> = r
        .grid
        .par_iter()
        .map(|&d| {
            let closed = bsms::nrdf(&src, ProbValue::new(d).expect("checked range"));
            match solve_for_distortion(&finite, &rho, d, &opts) {
                Ok(sol) => {
                    let diff = (closed - sol.rate).abs();
                    VerifyRow {
                        d,
                        closed_form: closed,
                        solver: Some(sol.rate),
                        abs_diff: Some(diff),
                        pass: diff <= tol,
                        error: None,
                    }
                }
                Err(e) => VerifyRow {
                    d,
                    closed_form: closed,
                    solver: None,
                    abs_diff: None,
                    pass: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    println!("{:>14} {:>16} {:>16} {:>12}  status", "D", "closed_form", "solver", "abs_diff");
    for row in &rows {
        let status = match (&row.error, row.pass) {
            (Some(e), _) => format!("FAIL ({e})"),
            (None, true) => "pass".into(),
            (None, false) => "FAIL".into(),
        };
        println!(
            "{:>14} {:>16} {:>16} {:>12}  {status}",
            fmt_g(row.d),
            fmt_g(row.closed_form),
            cell(row.solver),
            row.abs_diff.map(|v| format!("{v:.3e}")).unwrap_or_default(),
        );
    }

    if r.out.is_some() {
        let text = match r.format.unwrap_or(Format::Csv) {
            Format::Json => json(&serde_json::json!({ "p": p, "tolerance": tol, "memory": memory, "rows": rows })),
            Format::Csv => {
                let body: Vec<Vec<String>> = rows
                    .iter()
                    .map(|row| {
                        vec![
                            fmt_g(row.d),
                            fmt_g(row.closed_form),
                            cell(row.solver),
                            cell(row.abs_diff),
                            if row.pass { "pass" } else { "fail" }.into(),
                        ]
                    })
                    .collect();
                csv_text(&["D", "closed_form", "solver", "abs_diff", "status"], &body)
            }
        };
        write_result(r, &text, |out| {
            gnuplot_script(
                out,
                &format!("Closed form and iterative solver, p = {}", fmt_g(p)),
                "D",
                "bits/sample",
                &[(2, "closed form"), (3, "solver")],
            )
        })?;
    }

    let failed = rows.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(Failure::Tolerance(format!("{failed} of {} points exceed tolerance {tol:e}", rows.len())));
    }
    Ok(())
}

pub struct GaussRun {
    pub q: Option<Vec<f64>>,
    pub seed: u64,
    pub horizon: usize,
    pub burn_in: usize,
}

#[derive(Serialize)]
struct GaussRow {
    #[serde(rename = "D")]
    d: f64,
    rate: f64,
    eigs: Vec<f64>,
    delta: Vec<f64>,
    xi: f64,
    riccati_residual: f64,
    iterations: usize,
    sim_distortion: f64,
    sim_std_error: f64,
    capacity: f64,
    matching_gap: f64,
}

#[derive(Serialize)]
struct GaussReport<'a> {
    tolerance: f64,
    seed: u64,
    horizon: usize,
    burn_in: usize,
    channel_noise: &'a str,
    points: &'a [GaussRow],
}

fn channel_noise(q: &Option<Vec<f64>>) -> ChannelNoise {
    match q {
        Some(q) => ChannelNoise::Diagonal(q.clone()),
        None => ChannelNoise::MatchDistortion,
    }
}

pub fn gauss(model: &GaussMarkovModel, run: &GaussRun, r: &Resolved) -> Result<(), Failure> {
    model.check_assumptions()?;
    if r.grid.iter().any(|&d| !(d > 0.0)) {
        return Err(field_err("D_grid", "distortions must be positive").into());
    }
    if run.horizon <= run.burn_in {
        return Err(field_err("horizon", "must exceed burn_in").into());
    }
    if let Some(q) = &run.q {
        if q.len() != model.dims().p || q.iter().any(|v| !(*v > 0.0)) {
            return Err(field_err("Q", format!("need {} positive entries", model.dims().p)).into());
        }
    }
    let tol = r.tol.unwrap_or(GAUSS_TOL);
    let noise = channel_noise(&run.q);
    let rows = r
        .grid
        .par_iter()
        .enumerate()
        .map(|(k, &d)| {
            let sol = solve(model, d, &noise, &GaussOptions::default())?;
            let cap = capacity(&sol.channel_powers(), &sol.channel_noise())?;
            let cfg = RealizationConfig {
                model,
                sol: &sol,
                horizon: run.horizon,
                seed: run.seed.wrapping_add(k as u64),
                burn_in: run.burn_in,
            };
            let sim = simulate(&cfg)?;
            Ok(GaussRow {
                d,
                rate: sol.rate,
                eigs: sol.eigs.clone(),
                delta: sol.deltas().to_vec(),
                xi: sol.water_level(),
                riccati_residual: sol.diagnostics.riccati_residual,
                iterations: sol.diagnostics.iterations,
                sim_distortion: sim.empirical_distortion,
                sim_std_error: sim.std_error(),
                capacity: cap,
                matching_gap: cap - sol.rate,
            })
        })
        .collect::<Result<Vec<_>, nrdf_core::Error>>()?;

    let report = json(&GaussReport {
        tolerance: tol,
        seed: run.seed,
        horizon: run.horizon,
        burn_in: run.burn_in,
        channel_noise: if run.q.is_some() { "given" } else { "q_i = delta_i" },
        points: &rows,
    });
    let p = model.dims().p;
    let mut header: Vec<String> = ["D", "rate", "xi", "riccati_residual", "sim_distortion", "sim_std_error", "capacity", "matching_gap"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=p).map(|i| format!("eig{i}")));
    header.extend((1..=p).map(|i| format!("delta{i}")));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|row| {
            let mut v: Vec<String> = [
                row.d,
                row.rate,
                row.xi,
                row.riccati_residual,
                row.sim_distortion,
                row.sim_std_error,
                row.capacity,
                row.matching_gap,
            ]
            .iter()
            .map(|&x| fmt_g(x))
            .collect();
            v.extend(row.eigs.iter().chain(&row.delta).map(|&x| fmt_g(x)));
            v
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let csv = csv_text(&header_refs, &body);

    match &r.out {
        Some(out) => {
            let csv_path: PathBuf = out.with_extension("csv");
            emit(Some(&out.with_extension("json")), &report)?;
            emit(Some(&csv_path), &csv)?;
            let plot = gnuplot_script(
                &csv_path,
                "Gaussian NRDF and simulated distortion",
                "D",
                "bits/sample, distortion",
                &[(2, "rate"), (5, "simulated distortion")],
            );
            emit(Some(&out.with_extension("gp")), &plot)?;
        }
        None => match r.format.unwrap_or(Format::Json) {
            Format::Json => emit(None, &report)?,
            Format::Csv => emit(None, &csv)?,
        },
    }

    let bad: Vec<String> = rows
        .iter()
        .filter(|row| row.riccati_residual > tol || row.matching_gap.abs() > tol)
        .map(|row| fmt_g(row.d))
        .collect();
    if !bad.is_empty() {
        return Err(Failure::Tolerance(format!(
            "residual or matching gap above {tol:e} at D = {}",
            bad.join(", ")
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct LossRow {
    #[serde(rename = "D")]
    d: f64,
    r_na: f64,
    r_classical: f64,
    rl: f64,
}

pub fn rate_loss(model: &GaussMarkovModel, q: Option<Vec<f64>>, r: &Resolved) -> Result<(), Failure> {
    model.check_assumptions()?;
    if !model.is_stable() {
        return Err(field_err("model", "rate loss needs a stable A").into());
    }
    if r.grid.iter().any(|&d| !(d > 0.0)) {
        return Err(field_err("D_grid", "distortions must be positive").into());
    }
    let floor = r.tol.map_or(RATE_LOSS_FLOOR, |t| -t);
    let noise = channel_noise(&q);
    let rows = r
        .grid
        .par_iter()
        .map(|&d| {
            let rl = zero_delay_rate_loss(model, d, &noise, &GaussOptions::default())?;
            Ok(LossRow {
                d,
                r_na: rl.nrdf,
                r_classical: rl.classical,
                rl: rl.loss,
            })
        })
        .collect::<Result<Vec<_>, nrdf_core::Error>>()?;

    let text = match r.format.unwrap_or(Format::Csv) {
        Format::Json => json(&serde_json::json!({ "rate_loss_floor": floor, "rows": rows })),
        Format::Csv => {
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|row| vec![fmt_g(row.d), fmt_g(row.r_na), fmt_g(row.r_classical), fmt_g(row.rl)])
                .collect();
            csv_text(&["D", "R_na", "R_classical", "RL"], &body)
        }
    };
    write_result(r, &text, |out| {
        gnuplot_script(
            out,
            "Zero-delay rate loss",
            "D",
            "bits/sample",
            &[(2, "NRDF"), (3, "classical R(D)"), (4, "rate loss")],
        )
    })?;

    if let Some(row) = rows.iter().find(|row| row.rl < floor) {
        return Err(Failure::Tolerance(format!(
            "rate loss {} below {floor:e} at D = {}",
            fmt_g(row.rl),
            fmt_g(row.d)
        )));
    }
    Ok(())
}
