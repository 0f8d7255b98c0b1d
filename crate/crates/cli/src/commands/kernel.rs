//! Test loss of the kernel-regime (large initialization) predictor.

use std::path::Path;

use manifold_sgd::olm::gd_kernel_baseline;

use super::{at_least, olm_problem, schema};
use crate::config::{key, Config, Key};
use crate::error::CliResult;
use crate::output::Artifacts;

const KEYS: &[Key] = &[key("trials", "200")];

/// Defaults match the d = 40, n = 10 setting.
pub fn keys() -> Vec<Key> {
    let mut keys = schema(KEYS, true);
    for k in &mut keys {
        if k.name == "n" {
            k.default = "10";
        }
    }
    keys
}

pub fn run(cfg: &Config, out: &Path) -> CliResult<()> {
    let seed: u64 = cfg.get("seed")?;
    let trials = at_least(cfg, "trials", 1)?;
    let p = olm_problem(cfg, seed)?;
    let base = gd_kernel_baseline(&p, trials, seed)?;
    let art = Artifacts::new(out, "kernel-baseline", cfg, &[seed])?;

    let r2 = base.radius * base.radius;
    let ratio = base.mean / r2;
    let exact = 1.0 - p.n() as f64 / p.d() as f64;
    art.write("kernel_baseline.csv", |w| {
        writeln!(w, "trial,test_loss,ratio")?;
        for (k, t) in base.trials.iter().enumerate() {
            writeln!(w, "{k},{t:e},{:e}", t / r2)?;
        }
        Ok(())
    })?;
    art.report(
        "kernel_summary.txt",
        &[
            ("n", p.n().to_string()),
            ("d", p.d().to_string()),
            ("trials", trials.to_string()),
            ("radius", format!("{:e}", base.radius)),
            ("mean_test_loss", format!("{:e}", base.mean)),
            ("mean_ratio", format!("{ratio:e}")),
            ("expected_ratio", format!("{exact:e}")),
        ],
    )?;
    art.plot(
        "kernel_baseline",
        &format!(
            "set xlabel 'test loss / |w*|^2'\nbin(x) = 0.02*floor(x/0.02)\nset arrow from {exact},graph 0 to {exact},graph 1 nohead dt 2\nplot 'kernel_baseline.csv' using (bin($3)):(1.0) smooth freq with boxes\n"
        ),
    )?;

    println!("mean test loss / |w*|^2 = {ratio:.4} (1 - n/d = {exact:.4}) over {trials} trials");
    Ok(())
}
