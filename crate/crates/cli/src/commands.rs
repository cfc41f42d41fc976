use std::path::{Path, PathBuf};
use std::sync::Arc;

use logspline_core::density::{Density, LogSplineDensity};
use logspline_core::entropy::{ball_complement_bound_check, covering_number, hausdorff_alpha_entropy, EXACT_LIMIT};
use logspline_core::inference::fit_model;
use logspline_core::priors::make_model_spec;
use logspline_harness::bayes_factor::{bf_summary_table, bf_table};
use logspline_harness::experiment::{
    diagnostics_table, rate_summary, rate_summary_table, rate_table, selection_summary, selection_summary_table,
    selection_table,
};
use logspline_harness::seeds::{TAG_CHAIN, TAG_ENTROPY, TAG_VERIFY};
use logspline_harness::{bf_experiment, derive_seed, run_all, run_grid, GridResult, Table, Value};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{CommandKind, ExperimentConfig};
use crate::error::{config_error, CliError, Result};
use crate::output::{format_value, write_csv};
use crate::plot::{LinePlot, Series};

/// Output directory plus the files written so far.
struct Sink<'a> {
    dir: &'a Path,
    plots: bool,
    written: Vec<PathBuf>,
}

impl<'a> Sink<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::Write {
            path: cfg.output_dir.clone(),
            reason: e.to_string(),
        })?;
        Ok(Self {
            dir: &cfg.output_dir,
            plots: cfg.plots,
            written: Vec::new(),
        })
    }

    fn csv(&mut self, name: &str, table: &Table) -> Result<()> {
        let path = self.dir.join(name);
        write_csv(table, &path)?;
        self.written.push(path);
        Ok(())
    }

    fn svg(&mut self, name: &str, plot: &LinePlot) -> Result<()> {
        if !self.plots {
            return Ok(());
        }
        let path = self.dir.join(name);
        std::fs::write(&path, plot.to_svg()).map_err(|e| CliError::Write {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        self.written.push(path);
        Ok(())
    }

    fn report(&self) {
        for p in &self.written {
            println!("wrote {}", p.display());
        }
    }
}

pub fn execute(command: CommandKind, cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate_for(command)?;
    let mut sink = Sink::new(cfg)?;
    let outcome = match command {
        CommandKind::Fit => fit(cfg, &mut sink),
        CommandKind::Rate => rate(cfg, &mut sink),
        CommandKind::Select => select(cfg, &mut sink),
        CommandKind::Bf => bf(cfg, &mut sink),
        CommandKind::Entropy => entropy(cfg, &mut sink),
        CommandKind::Verify => verify(cfg, &mut sink),
    };
    sink.report();
    outcome
}

fn read_data(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_owned(),
        source,
    })?;
    let mut data = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let content = line.split('#').next().unwrap_or("");
        for token in content.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let x: f64 = token.parse().map_err(|_| CliError::Data {
                path: path.to_owned(),
                line: i + 1,
                reason: format!("`{token}` is not a number"),
            })?;
            if !(0.0..=1.0).contains(&x) {
                return Err(CliError::Data {
                    path: path.to_owned(),
                    line: i + 1,
                    reason: format!("{token} lies outside [0, 1]"),
                });
            }
            data.push(x);
        }
    }
    if data.is_empty() {
        return Err(CliError::Data {
            path: path.to_owned(),
            line: 0,
            reason: "no observations".into(),
        });
    }
    Ok(data)
}

fn fit(cfg: &ExperimentConfig, sink: &mut Sink<'_>) -> Result<()> {
    let section = cfg.fit.as_ref().expect("validated");
    let data = read_data(&section.data)?;
    let m = &cfg.models;
    let spec = make_model_spec(section.gamma, data.len(), m.order, m.bound, m.scale, m.log_factor)
        .map_err(|e| config_error("fit.gamma", e.to_string()))?;
    let seed = derive_seed(cfg.master_seed, TAG_CHAIN, 0, 0);
    let run = fit_model(
        &spec,
        &data,
        cfg.sampler.draws,
        cfg.sampler.is_samples,
        seed,
        cfg.sampler.mcmc(),
    )?;
    let marginal = run.log_marginal.expect("fit_model estimates the marginal");

    let mut summary = Table::new([
        "master_seed",
        "cell_seed",
        "gamma",
        "n",
        "intervals",
        "dim",
        "draws",
        "acceptance_rate",
        "log_marginal",
        "log_marginal_se",
        "importance_ess",
    ]);
    summary.push(vec![
        cfg.master_seed.into(),
        seed.into(),
        spec.gamma.into(),
        data.len().into(),
        spec.intervals.into(),
        spec.dim.into(),
        run.draws.len().into(),
        run.acceptance_rate.into(),
        marginal.log_value.into(),
        marginal.std_error.into(),
        marginal.ess.into(),
    ]);
    sink.csv("fit_summary.csv", &summary)?;

    let d = spec.dim;
    let count = run.draws.len() as f64;
    let mut coefficients = Table::new(["master_seed", "cell_seed", "j", "map", "posterior_mean", "posterior_sd"]);
    for j in 0..d {
        let mean = run.draws.iter().map(|t| t.values()[j]).sum::<f64>() / count;
        let var = run.draws.iter().map(|t| (t.values()[j] - mean).powi(2)).sum::<f64>() / (count - 1.0).max(1.0);
        coefficients.push(vec![
            cfg.master_seed.into(),
            seed.into(),
            j.into(),
            run.map.values()[j].into(),
            mean.into(),
            var.sqrt().into(),
        ]);
    }
    sink.csv("fit_coefficients.csv", &coefficients)?;

    let basis = Arc::new(spec.basis()?);
    let map = LogSplineDensity::new(basis.clone(), run.map.clone())?;
    let stride = (run.draws.len() / 200).max(1);
    let thinned = run
        .draws
        .iter()
        .step_by(stride)
        .map(|t| LogSplineDensity::new(basis.clone(), t.clone()))
        .collect::<logspline_core::Result<Vec<_>>>()?;
    let mut curve = Table::new(["master_seed", "cell_seed", "x", "map_pdf", "posterior_mean_pdf"]);
    let (mut map_pts, mut mean_pts) = (Vec::new(), Vec::new());
    for i in 0..=200 {
        let x = i as f64 / 200.0;
        let fm = map.pdf(x);
        let fp = thinned.iter().map(|f| f.pdf(x)).sum::<f64>() / thinned.len() as f64;
        curve.push(vec![cfg.master_seed.into(), seed.into(), x.into(), fm.into(), fp.into()]);
        map_pts.push((x, fm));
        mean_pts.push((x, fp));
    }
    sink.csv("fit_density.csv", &curve)?;
    sink.svg(
        "fit.svg",
        &LinePlot {
            title: format!("Posterior fit, gamma = {}, n = {}", spec.gamma, data.len()),
            x_label: "x".into(),
            y_label: "density".into(),
            series: vec![Series::new("posterior mean", mean_pts), Series::new("MAP", map_pts).dashed()],
            ..LinePlot::default()
        },
    )?;
    println!(
        "gamma={} n={} K={} acceptance={:.3} log_marginal={:.4} (se {:.2e})",
        spec.gamma,
        data.len(),
        spec.intervals,
        run.acceptance_rate,
        marginal.log_value,
        marginal.std_error
    );
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Across-replication medians of `value` for each `n` of the grid.
fn per_n_medians(grid: &GridResult, value: impl Fn(&logspline_harness::experiment::CellOutcome) -> f64) -> Vec<(f64, f64)> {
    grid.config
        .n_grid
        .iter()
        .map(|&n| {
            let v = grid.cells.iter().filter(|c| c.n == n).map(&value).collect();
            (n as f64, median(v))
        })
        .collect()
}

fn rate(cfg: &ExperimentConfig, sink: &mut Sink<'_>) -> Result<()> {
    let grid = run_grid(&cfg.grid_config()?)?;
    let summary = rate_summary(&grid, cfg.thresholds.rate_tolerance)?;
    sink.csv("rate.csv", &rate_table(&grid))?;
    sink.csv("rate_diagnostics.csv", &diagnostics_table(&grid))?;
    sink.csv("rate_summary.csv", &rate_summary_table(&summary, cfg.master_seed))?;

    let hell = per_n_medians(&grid, |c| c.mixture_hellinger_median);
    let l2 = per_n_medians(&grid, |c| c.mixture_l2_median);
    let fit = &summary.hellinger;
    let fitted = hell
        .iter()
        .map(|&(n, _)| (n, (fit.intercept + fit.slope * n.ln()).exp()))
        .collect();
    let (n0, h0) = hell[0];
    let target = hell
        .iter()
        .map(|&(n, _)| (n, h0 * (n / n0).powf(summary.target_slope)))
        .collect();
    let mut series = vec![
        Series::new("Hellinger", hell),
        Series::new(format!("fit, slope {:.3}", fit.slope), fitted).dashed(),
        Series::new(format!("target {:.3}", summary.target_slope), target).dashed(),
        Series::new("L2", l2),
    ];
    series.retain(|s| !s.points.is_empty());
    sink.svg(
        "rate.svg",
        &LinePlot {
            title: "Median posterior distance".into(),
            x_label: "n".into(),
            y_label: "distance".into(),
            log_x: true,
            log_y: true,
            series,
        },
    )?;
    println!(
        "hellinger slope {:.4} (se {:.4}), target {:.4} ± {}: {}",
        fit.slope,
        fit.std_error,
        summary.target_slope,
        summary.tolerance,
        if summary.within_tolerance { "within tolerance" } else { "outside tolerance" }
    );
    Ok(())
}

fn select(cfg: &ExperimentConfig, sink: &mut Sink<'_>) -> Result<()> {
    let grid = run_grid(&cfg.grid_config()?)?;
    let summary = selection_summary(&grid, cfg.thresholds.selection_mass);
    sink.csv("select.csv", &selection_table(&grid))?;
    sink.csv("select_diagnostics.csv", &diagnostics_table(&grid))?;
    sink.csv("select_summary.csv", &selection_summary_table(&summary, cfg.master_seed))?;

    let mut series = vec![Series::new(
        "band mass",
        summary.median_trajectory.iter().map(|&(n, m)| (n as f64, m)).collect(),
    )];
    for (gi, gamma) in cfg.models.indices.iter().enumerate() {
        series.push(
            Series::new(
                format!("gamma = {gamma}"),
                per_n_medians(&grid, |c| c.models[gi].probability),
            )
            .dashed(),
        );
    }
    sink.svg(
        "select.svg",
        &LinePlot {
            title: "Median index posterior".into(),
            x_label: "n".into(),
            y_label: "posterior mass".into(),
            log_x: true,
            series,
            ..LinePlot::default()
        },
    )?;
    println!(
        "band mass > {} at n = {} in {}/{} replications",
        summary.threshold, summary.largest_n, summary.above_threshold, summary.replications
    );
    Ok(())
}

fn bf(cfg: &ExperimentConfig, sink: &mut Sink<'_>) -> Result<()> {
    let result = bf_experiment(&cfg.bf_config()?)?;
    sink.csv("bf.csv", &bf_table(&result))?;
    sink.csv("bf_summary.csv", &bf_summary_table(&result))?;

    let quantile = |n: usize, q: f64| {
        let mut v: Vec<f64> = result.points.iter().filter(|p| p.n == n).map(|p| p.log_bf).collect();
        v.sort_by(f64::total_cmp);
        v[((v.len() - 1) as f64 * q).round() as usize]
    };
    let band = |q: f64| cfg.n_grid.iter().map(|&n| (n as f64, quantile(n, q))).collect();
    sink.svg(
        "bf.svg",
        &LinePlot {
            title: "log Bayes factor across replications".into(),
            x_label: "n".into(),
            y_label: "log BF".into(),
            log_x: true,
            series: vec![
                Series::new("median", band(0.5)),
                Series::new("minimum", band(0.0)).dashed(),
                Series::new("maximum", band(1.0)).dashed(),
            ],
            ..LinePlot::default()
        },
    )?;
    println!(
        "drift direction correct in {}/{} replications",
        result.correct,
        result.replications.len()
    );
    Ok(())
}

fn entropy(cfg: &ExperimentConfig, sink: &mut Sink<'_>) -> Result<()> {
    let section = cfg.entropy.as_ref().expect("validated");
    let family = section.family()?;
    let total: f64 = family.masses().iter().sum();
    let exact_ok = family.len() <= EXACT_LIMIT;

    let mut table = Table::new([
        "master_seed",
        "cell_seed",
        "delta",
        "alpha",
        "covering_number",
        "alpha_entropy",
        "upper_bound",
    ]);
    for &delta in &section.deltas {
        let n = covering_number(&family, delta, section.cover.into())?;
        for &alpha in &section.alphas {
            let j: Value = if exact_ok {
                hausdorff_alpha_entropy(&family, delta, alpha)?.into()
            } else {
                "".into()
            };
            let upper = alpha * total.ln() + (1.0 - alpha) * (n as f64).ln();
            table.push(vec![
                cfg.master_seed.into(),
                "".into(),
                delta.into(),
                alpha.into(),
                n.into(),
                j,
                upper.into(),
            ]);
        }
    }
    sink.csv("entropy.csv", &table)?;

    if !section.bound_checks.is_empty() {
        let mut checks = Table::new([
            "master_seed",
            "cell_seed",
            "r",
            "eps",
            "alpha",
            "n",
            "replications",
            "outer_size",
            "lhs_estimate",
            "lhs_se",
            "alpha_entropy",
            "rhs_bound",
            "pass",
        ]);
        for (i, b) in section.bound_checks.iter().enumerate() {
            let seed = derive_seed(cfg.master_seed, TAG_ENTROPY, i as u64, 0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rep = ball_complement_bound_check(&family, b.r, b.eps, b.alpha, b.n, b.replications, &mut rng)?;
            checks.push(vec![
                cfg.master_seed.into(),
                seed.into(),
                b.r.into(),
                b.eps.into(),
                b.alpha.into(),
                b.n.into(),
                b.replications.into(),
                rep.outer.len().into(),
                rep.lhs_estimate.into(),
                rep.lhs_se.into(),
                rep.entropy.into(),
                rep.rhs_bound.into(),
                rep.pass.into(),
            ]);
        }
        sink.csv("entropy_bound.csv", &checks)?;
    }
    for row in &table.rows {
        println!(
            "delta={} alpha={} N={} J={}",
            format_value(&row[2]),
            format_value(&row[3]),
            format_value(&row[4]),
            format_value(&row[5]),
        );
    }
    Ok(())
}

fn verify(cfg: &ExperimentConfig, sink: &mut Sink<'_>) -> Result<()> {
    let outcomes = run_all(cfg.master_seed);
    let mut table = Table::new(["master_seed", "cell_seed", "check", "name", "pass", "detail"]);
    for o in &outcomes {
        table.push(vec![
            cfg.master_seed.into(),
            derive_seed(cfg.master_seed, TAG_VERIFY, o.id as u64, 0).into(),
            (o.id as u64).into(),
            o.name.into(),
            o.pass.into(),
            o.detail.clone().into(),
        ]);
        println!(
            "{} [{}] {} ({:.2}s): {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.seconds,
            o.detail
        );
    }
    sink.csv("verify.csv", &table)?;
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    if failed > 0 {
        return Err(CliError::PropertyFailure {
            failed,
            total: outcomes.len(),
        });
    }
    Ok(())
}
