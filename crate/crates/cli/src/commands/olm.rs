//! Sparse recovery and the Riemannian flow on the overparametrized linear
//! model.

use std::path::Path;

use manifold_sgd::flow::phi_limit;
use manifold_sgd::olm::{
    feasibility_residual, flow_horizon, lagrangian_f, random_init, regularizer, riemannian_flow, run_recovery,
    RecoveryMode, RecoveryReport, PRODUCT_TARGET,
};
use manifold_sgd::{FlowConfig, Loss};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{at_least, olm_problem, positive, schema, seed_range};
use crate::config::{key, Config, Key};
use crate::error::{CliError, CliResult};
use crate::output::{core_io, Artifacts};

const RECOVER_KEYS: &[Key] = &[
    key("mode", "flow"),
    key("dt", "0.2"),
    key("eta", "0.01"),
    key("eps", "1e-3"),
    key("trials", "1"),
];

const FLOW_KEYS: &[Key] = &[key("dt", "0.2"), key("t_end", "0"), key("record_stride", "10")];

pub fn recover_keys() -> Vec<Key> {
    schema(RECOVER_KEYS, true)
}

pub fn flow_keys() -> Vec<Key> {
    schema(FLOW_KEYS, true)
}

fn mode(cfg: &Config) -> CliResult<RecoveryMode> {
    match cfg.raw("mode") {
        "flow" => Ok(RecoveryMode::Flow { dt: positive(cfg, "dt")? }),
        "sgd" => Ok(RecoveryMode::Sgd { eta: positive(cfg, "eta")? }),
        other => Err(CliError::Config(format!("mode must be flow or sgd, got {other:?}"))),
    }
}

/// Trial `k` uses seed `seed + k` for both the instance and the start point.
pub fn recover(cfg: &Config, out: &Path) -> CliResult<()> {
    let mode = mode(cfg)?;
    let eps = positive(cfg, "eps")?;
    let seeds = seed_range(cfg, at_least(cfg, "trials", 1)?)?;
    let problems = seeds
        .iter()
        .map(|&s| olm_problem(cfg, s))
        .collect::<CliResult<Vec<_>>>()?;
    let art = Artifacts::new(out, "olm-recover", cfg, &seeds)?;

    let mut reports: Vec<RecoveryReport> = Vec::with_capacity(seeds.len());
    for (p, &s) in problems.iter().zip(&seeds) {
        reports.push(run_recovery(p, mode, eps, s)?);
    }
    let recovered = reports.iter().filter(|r| r.recovered).count();
    let agreed = reports.iter().filter(|r| r.oracle_agreement).count();
    let certified = reports.iter().filter(|r| r.dual_certificate_ok).count();

    art.write("olm_recover.csv", |w| {
        writeln!(w, "{}", RecoveryReport::CSV_HEADER)?;
        for r in &reports {
            writeln!(w, "{}", r.csv_row())?;
        }
        Ok(())
    })?;
    art.write("olm_recover_weights.csv", |w| {
        writeln!(w, "seed,j,w_star,w_final")?;
        for (r, p) in reports.iter().zip(&problems) {
            for (j, (ws, wf)) in p.w_star.iter().zip(&r.w_final).enumerate() {
                writeln!(w, "{},{j},{ws:e},{wf:e}", r.seed)?;
            }
        }
        Ok(())
    })?;
    let mut summary = vec![
        ("trials", reports.len().to_string()),
        ("mode", mode.name().to_string()),
        ("eps", format!("{eps:e}")),
        ("recovered", recovered.to_string()),
        ("oracle_agreement", agreed.to_string()),
        ("dual_certificate_ok", certified.to_string()),
        ("success_rate", (recovered as f64 / reports.len() as f64).to_string()),
    ];
    for r in &reports {
        if let Some(warn) = &r.certificate_warning {
            summary.push(("warning", format!("seed {}: {warn}", r.seed)));
        }
    }
    art.report("olm_recover_summary.txt", &summary)?;
    art.plot(
        "olm_recover",
        "set logscale y\nset xlabel 'seed'\nset ylabel 'max error'\nplot 'olm_recover.csv' using 1:7 with points pt 7 title 'vs w*', '' using 1:8 with points pt 6 title 'vs oracle'\n",
    )?;

    for r in &reports {
        if let Some(warn) = &r.certificate_warning {
            eprintln!("warning: seed {}: {warn}", r.seed);
        }
    }
    println!(
        "recovered {recovered}/{} within {eps:e} (oracle agreement {agreed}, certificates {certified})",
        reports.len()
    );
    Ok(())
}

pub fn flow(cfg: &Config, out: &Path) -> CliResult<()> {
    let seed: u64 = cfg.get("seed")?;
    let dt = positive(cfg, "dt")?;
    let t_end: f64 = cfg.get("t_end")?;
    if !(t_end >= 0.0) {
        return Err(CliError::Config(format!("t_end must be non-negative, got {t_end}")));
    }
    let stride = at_least(cfg, "record_stride", 1)?;
    let p = olm_problem(cfg, seed)?;
    let art = Artifacts::new(out, "olm-flow", cfg, &[seed])?;

    let x_init = random_init(p.dim(), &mut ChaCha8Rng::seed_from_u64(seed));
    let x0 = phi_limit(&p, &x_init, &FlowConfig::default())?;
    // zero asks for the horizon at which every product has decayed
    let horizon = if t_end > 0.0 {
        t_end
    } else {
        flow_horizon(&p, &x0, PRODUCT_TARGET)
    };
    let traj = riemannian_flow(&p, &x0, horizon, dt)?;
    let d = p.d();
    let last = traj.len() - 1;
    let kept: Vec<usize> = (0..traj.len()).filter(|k| k % stride == 0 || *k == last).collect();

    art.write("olm_problem.txt", |w| core_io(p.write_text(&mut *w)))?;
    art.write("olm_flow.csv", |w| {
        writeln!(w, "t,regularizer,feasibility,f_norm,linf_error")?;
        for &k in &kept {
            let x = &traj.states[k];
            let err = (p.weights(x) - &p.w_star).amax();
            writeln!(
                w,
                "{},{:e},{:e},{:e},{err:e}",
                traj.times[k],
                regularizer(&p, x),
                feasibility_residual(&p, x),
                lagrangian_f(&p, x).norm()
            )?;
        }
        Ok(())
    })?;
    art.write("olm_flow_products.csv", |w| {
        let cols: Vec<String> = (1..=d).map(|j| format!("log_abs_uv_{j}")).collect();
        writeln!(w, "t,{}", cols.join(","))?;
        for &k in &kept {
            let (u, v) = p.split(&traj.states[k]);
            let cells: Vec<String> = (0..d).map(|j| format!("{:e}", (u[j] * v[j]).abs().ln())).collect();
            writeln!(w, "{},{}", traj.times[k], cells.join(","))?;
        }
        Ok(())
    })?;
    let end = traj.last_state().expect("trajectory has a start point");
    let err = (p.weights(end) - &p.w_star).amax();
    art.report(
        "olm_flow_summary.txt",
        &[
            ("horizon", horizon.to_string()),
            ("steps", last.to_string()),
            ("regularizer_start", format!("{:e}", regularizer(&p, &x0))),
            ("regularizer_end", format!("{:e}", regularizer(&p, end))),
            ("linf_error", format!("{err:e}")),
        ],
    )?;
    let mut plot = String::from("set multiplot layout 1,2\nset xlabel 't'\nset logscale y\n");
    plot.push_str("plot 'olm_flow.csv' using 1:2 with lines, '' using 1:5 with lines\nunset logscale y\n");
    plot.push_str(&format!("plot for [j=2:{}] 'olm_flow_products.csv' using 1:j with lines notitle\n", d + 1));
    plot.push_str("unset multiplot\n");
    art.plot("olm_flow", &plot)?;

    println!("flowed to t = {horizon:.3} in {last} steps, max error to w* {err:.3e}");
    Ok(())
}
