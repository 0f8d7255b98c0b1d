//! Angular speed of the limiting diffusion on the k-phase motor.

use std::f64::consts::TAU;
use std::path::Path;

use manifold_sgd::dynamics::{limiting_drift, run_ensemble, simulate_limit_sde, NoiseModel, SdeConfig};
use manifold_sgd::{Loss, MotorProblem, Result, Vector};

use super::{at_least, positive, schema, seed_range};
use crate::config::{key, Config, Key};
use crate::error::CliResult;
use crate::output::Artifacts;

const KEYS: &[Key] = &[
    key("dim", "5"),
    key("seeds", "200"),
    key("t_end", "1.0"),
    key("dt", "1e-3"),
    key("retraction_every", "20"),
    key("theta0", "0.0"),
    key("record_stride", "10"),
];

pub fn keys() -> Vec<Key> {
    schema(KEYS, false)
}

/// Unwrapped angle of `x₁:₂` along a path, relative to the first state,
/// followed by the largest `|x₃:D|` seen. Packed into one vector so the
/// ensemble runner can carry it.
fn angle_path(states: &[Vector]) -> Vector {
    let dim = states[0].len();
    let mut out = Vec::with_capacity(states.len() + 1);
    let mut total = 0.0;
    let mut prev = states[0][1].atan2(states[0][0]);
    let mut aux = 0.0_f64;
    for x in states {
        let a = x[1].atan2(x[0]);
        let mut step = a - prev;
        step -= TAU * (step / TAU).round();
        total += step;
        prev = a;
        out.push(total);
        aux = aux.max(x.rows(2, dim - 2).amax());
    }
    out.push(aux);
    Vector::from_vec(out)
}

pub fn run(cfg: &Config, out: &Path) -> CliResult<()> {
    let m = MotorProblem::with_dim(cfg.get("dim")?)?;
    let seeds = seed_range(cfg, at_least(cfg, "seeds", 1)?)?;
    let sde = SdeConfig {
        dt: positive(cfg, "dt")?,
        t_end: positive(cfg, "t_end")?,
        retraction_every: at_least(cfg, "retraction_every", 1)?,
        seed: 0,
        record_stride: at_least(cfg, "record_stride", 1)?,
    };
    sde.validate()?;
    let theta0: f64 = cfg.get("theta0")?;
    let x0 = m.circle_point(theta0);
    let noise = NoiseModel::Motor(m);
    let art = Artifacts::new(out, "motor", cfg, &seeds)?;

    let template = simulate_limit_sde(&m, &noise, &x0, &sde)?;
    let times = template.times.clone();
    let paths: Vec<Vector> = run_ensemble(&seeds, |seed| {
        let traj = simulate_limit_sde(&m, &noise, &x0, &SdeConfig { seed, ..sde.clone() })?;
        Ok(angle_path(&traj.states))
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let t_end = *times.last().expect("trajectory has a start point");
    let n = paths.len() as f64;
    let advances: Vec<f64> = paths.iter().map(|p| p[times.len() - 1]).collect();
    let mean_advance = advances.iter().sum::<f64>() / n;
    let measured = mean_advance / t_end;
    let max_aux = paths.iter().map(|p| p[times.len()]).fold(0.0, f64::max);
    let drift = limiting_drift(&m, &noise, &x0)?;
    let drift_speed = drift.rows(0, 2).norm();
    let claimed = (m.dim() as f64 - 2.0) / 2.0;

    art.write("motor_ensemble.csv", |w| {
        writeln!(w, "seed,angle_advance,angular_speed,max_aux")?;
        for (s, p) in seeds.iter().zip(&paths) {
            let adv = p[times.len() - 1];
            writeln!(w, "{s},{adv:e},{:e},{:e}", adv / t_end, p[times.len()])?;
        }
        Ok(())
    })?;
    art.write("motor_mean_path.csv", |w| {
        writeln!(w, "t,mean_angle,drift_angle,reference_angle")?;
        for (k, &t) in times.iter().enumerate() {
            let mean = paths.iter().map(|p| p[k]).sum::<f64>() / n;
            writeln!(w, "{t},{mean:e},{:e},{:e}", drift_speed * t, claimed * t)?;
        }
        Ok(())
    })?;
    art.report(
        "motor_summary.txt",
        &[
            ("dim", m.dim().to_string()),
            ("n_seeds", seeds.len().to_string()),
            ("t_end", t_end.to_string()),
            ("mean_angle_advance", format!("{mean_advance:e}")),
            ("measured_angular_speed", format!("{measured:e}")),
            ("drift_angular_speed", format!("{drift_speed:e}")),
            ("reference_angular_speed", format!("{claimed:e}")),
            ("max_aux", format!("{max_aux:e}")),
        ],
    )?;
    art.plot(
        "motor",
        "set xlabel 't'\nset ylabel 'angle'\nplot 'motor_mean_path.csv' using 1:2 with lines, '' using 1:3 with lines dt 2, '' using 1:4 with lines dt 3\n",
    )?;

    println!("measured angular speed {measured:.4} (drift {drift_speed:.4}, reference (D-2)/2 = {claimed:.4}), max |x3:D| {max_aux:.2e}");
    Ok(())
}
