//! Experiment dispatch: one function per kind, each writing its artifacts
//! through the sink and declaring its invariant assertions.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use kpplab::coupling::{self, CoupledRun};
use kpplab::field::{pairing, right_marker, write_snapshot};
use kpplab::particle::{self, init_particles};
use kpplab::stats::joint_std_error;
use kpplab::{duality, fronts, replica_seed, render, simulate, Coefficient, ExtendedReal, InitialCondition, NoiseStream};
use rayon::prelude::*;

use crate::config::{CouplingKind, ExperimentConfig, Identity, Kind, ParticleMode};
use crate::error::CliError;
use crate::manifest::{ArtifactSink, Assertion, RunManifest};

/// Everything a kind hands back besides the files it wrote.
#[derive(Default)]
struct Outcome {
    replicas: usize,
    assertions: Vec<Assertion>,
}

/// Runs `cfg` and writes its artifacts and `manifest.json` to `cfg.out`.
/// Assertion failures are recorded in the manifest, not returned as errors.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunManifest, CliError> {
    cfg.validate()?;
    let kind = cfg.kind()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    let started = Instant::now();
    let mut sink = ArtifactSink::new(&cfg.out)?;
    let outcome = pool
        .install(|| match kind {
            Kind::Simulate => run_simulate(cfg, &mut sink),
            Kind::Couple => run_couple(cfg, &mut sink),
            Kind::Particle => match cfg.particle_mode {
                ParticleMode::Run => run_particle(cfg, &mut sink),
                ParticleMode::Compare => run_particle_compare(cfg, &mut sink),
            },
            Kind::Speed => run_speed(cfg, &mut sink),
            Kind::Wave => run_wave(cfg, &mut sink),
            Kind::Duality => run_duality(cfg, &mut sink),
            Kind::Sweep => run_sweep(cfg, &mut sink),
        })
        .map_err(|e| match e {
            CliError::Runtime(msg) => CliError::Runtime(format!("{} run (seed {}): {msg}", kind.name(), cfg.seed)),
            other => other,
        })?;
    let passed = outcome.assertions.iter().all(|a| a.passed);
    let manifest = RunManifest {
        tool: "kpplab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        artifacts: sink.into_entries(),
        replicas: outcome.replicas,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        assertions: outcome.assertions,
        status: if passed { "pass" } else { "assertion_failure" }.into(),
    };
    manifest.write(&cfg.out)?;
    Ok(manifest)
}

fn csv<T: std::fmt::Display>(cells: &[T]) -> String {
    cells.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn run_simulate(cfg: &ExperimentConfig, sink: &mut ArtifactSink) -> Result<Outcome, CliError> {
    let (ic, p, grid) = (cfg.initial_condition(), cfg.params(), cfg.grid());
    let runs = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| simulate(&ic, &p, &grid, cfg.t_end, &cfg.snapshot_times, NoiseStream::new(replica_seed(cfg.seed, r), 0)))
        .collect::<kpplab::Result<Vec<_>>>()?;
    sink.write_with("trajectory.csv", |w| runs[0].write_csv(w))?;
    for (k, (t, f)) in runs[0].snapshots.iter().enumerate() {
        sink.write_with(&format!("snapshot_{k:03}.txt"), |w| write_snapshot(w, *t, f))?;
    }
    sink.write_with("replicas.csv", |w| {
        writeln!(w, "replica,seed,extinction_time,final_R0,final_mass")?;
        for (r, tr) in runs.iter().enumerate() {
            writeln!(w, "{r},{},{},{},{}", replica_seed(cfg.seed, r), tr.extinction_time, tr.final_r0(), tr.final_field.mass())?;
        }
        Ok(())
    })?;
    let bad = runs
        .iter()
        .flat_map(|tr| tr.snapshots.iter().map(|(_, f)| f).chain([&tr.final_field]))
        .filter(|f| f.values().iter().any(|v| !(v.is_finite() && *v >= 0.0)))
        .count();
    let mut assertions = vec![Assertion::new("snapshots_nonnegative", bad == 0, format!("{bad} fields with negative or non-finite cells"))];
    if cfg.alpha == 0.0 {
        let revived = runs
            .iter()
            .filter(|tr| tr.mass.iter().position(|&m| m == 0.0).is_some_and(|i| tr.mass[i..].iter().any(|&m| m != 0.0)))
            .count();
        assertions.push(Assertion::new("zero_is_absorbing", revived == 0, format!("{revived} replicas revived after extinction")));
    }
    Ok(Outcome { replicas: runs.len(), assertions })
}

fn couple_once(cfg: &ExperimentConfig, seed: u64) -> kpplab::Result<CoupledRun> {
    let (ic, grid, t, times) = (cfg.initial_condition(), cfg.grid(), cfg.t_end, &cfg.snapshot_times);
    match cfg.coupling {
        CouplingKind::Monotone => coupling::couple_monotone(&cfg.second_condition(), &ic, cfg.theta, &grid, t, times, seed),
        CouplingKind::Theta => coupling::couple_theta_family(&ic, &cfg.theta_list(), &grid, t, times, seed),
        CouplingKind::TwoIndependent => {
            coupling::couple_two_independent(&ic, &cfg.second_condition(), cfg.theta, &grid, t, times, seed)
        }
        CouplingKind::Immigration => coupling::couple_immigration(
            &ic,
            &Coefficient::zero(),
            &Coefficient::Constant(cfg.immigration),
            cfg.theta,
            &grid,
            t,
            times,
            seed,
        ),
    }
}

fn run_couple(cfg: &ExperimentConfig, sink: &mut ArtifactSink) -> Result<Outcome, CliError> {
    let runs = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| couple_once(cfg, replica_seed(cfg.seed, r)))
        .collect::<kpplab::Result<Vec<_>>>()?;
    let first = &runs[0];
    let names: Vec<&str> = first.system.views.iter().map(|v| v.name.as_str()).collect();
    sink.write_with("coupled.csv", |w| {
        let mut header = vec!["t".to_owned()];
        for n in &names {
            header.push(format!("{n}:R0"));
            header.push(format!("{n}:mass"));
        }
        writeln!(w, "{}", header.join(","))?;
        let times = &first.run.views[0].times;
        for i in 0..times.len() {
            let mut row = vec![times[i].to_string()];
            for v in &first.run.views {
                row.push(v.r0[i].to_string());
                row.push(v.mass[i].to_string());
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    })?;
    for (j, v) in first.run.views.iter().enumerate() {
        for (k, (t, f)) in v.snapshots.iter().enumerate() {
            sink.write_with(&format!("snapshot_{}_{k:03}.txt", names[j].replace('+', "_")), |w| write_snapshot(w, *t, f))?;
        }
    }
    let wiring = serde_json::to_string_pretty(&first.system.wiring()).map_err(|e| CliError::Runtime(e.to_string()))?;
    sink.write("wiring.json", format!("{wiring}\n").as_bytes())?;
    sink.write_with("violations.csv", |w| {
        writeln!(w, "replica,seed,order,violations,first_t,first_x")?;
        for (r, run) in runs.iter().enumerate() {
            for o in &run.run.orders {
                let (ft, fx) = o.first_violation.map_or((String::new(), String::new()), |(t, x)| (t.to_string(), x.to_string()));
                writeln!(w, "{r},{},{}<={},{},{ft},{fx}", replica_seed(cfg.seed, r), o.lower, o.upper, o.violations)?;
            }
        }
        Ok(())
    })?;
    let total: u64 = runs.iter().map(CoupledRun::violations).sum();
    Ok(Outcome {
        replicas: runs.len(),
        assertions: vec![Assertion::new(
            "coupling_order",
            total == 0,
            format!("{total} (step, cell) violations over {} replicas", runs.len()),
        )],
    })
}

fn sample_times(cfg: &ExperimentConfig) -> Vec<f64> {
    if cfg.snapshot_times.is_empty() {
        vec![cfg.t_end]
    } else {
        cfg.snapshot_times.clone()
    }
}

fn run_particle(cfg: &ExperimentConfig, sink: &mut ArtifactSink) -> Result<Outcome, CliError> {
    let pcfg = cfg.particle_config(cfg.n);
    let xi0 = init_particles(&cfg.initial_condition(), &pcfg)?;
    let thetas = cfg.theta_list();
    let times = sample_times(cfg);
    let runs = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| particle::couple_theta_star_particles(&xi0, &thetas, cfg.t_end, &times, replica_seed(cfg.seed, r)))
        .collect::<kpplab::Result<Vec<_>>>()?;
    let first = &runs[0];
    sink.write_with("particle.csv", |w| {
        let mut header = vec!["t".to_owned()];
        for i in 0..thetas.len() {
            header.extend([format!("count_{i}"), format!("R0_{i}"), format!("mass_{i}")]);
        }
        writeln!(w, "{}", header.join(","))?;
        for k in 0..times.len() {
            let mut row = vec![first.systems[0].times[k].to_string()];
            for s in &first.systems {
                row.extend([s.counts[k].to_string(), s.r0[k].to_string(), s.densities[k].mass().to_string()]);
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    })?;
    sink.write_with("occupancy_initial.txt", |w| xi0.write_snapshot(w, 0.0))?;
    for (i, s) in first.systems.iter().enumerate() {
        sink.write_with(&format!("occupancy_{i}.txt"), |w| s.final_state.write_snapshot(w, cfg.t_end))?;
        for (k, d) in s.densities.iter().enumerate() {
            sink.write_with(&format!("density_{i}_{k:03}.txt"), |w| write_snapshot(w, s.times[k], d))?;
        }
    }
    sink.write_with("replicas.csv", |w| {
        writeln!(w, "replica,seed,events,nesting_violations,extinction_time")?;
        for (r, run) in runs.iter().enumerate() {
            writeln!(w, "{r},{},{},{},{}", replica_seed(cfg.seed, r), run.events, run.nesting_violations, run.extinction_time)?;
        }
        Ok(())
    })?;
    let violations: u64 = runs.iter().map(|r| r.nesting_violations).sum();
    let unordered = runs
        .iter()
        .filter(|run| run.systems.windows(2).any(|w| !w[0].final_state.is_subset_of(&w[1].final_state)))
        .count();
    Ok(Outcome {
        replicas: runs.len(),
        assertions: vec![
            Assertion::new("family_nested_at_every_event", violations == 0, format!("{violations} non-nested sites")),
            Assertion::new("final_states_nested", unordered == 0, format!("{unordered} replicas out of order")),
        ],
    })
}

fn run_particle_compare(cfg: &ExperimentConfig, sink: &mut ArtifactSink) -> Result<Outcome, CliError> {
    let ic = cfg.initial_condition();
    let (s_lap, s_mass) = particle::spde_functional(&ic, cfg.theta, cfg.c1, &cfg.grid(), cfg.t_end, cfg.spde_replicas, cfg.seed)?;
    let mut rows = Vec::new();
    for &n in &cfg.ns {
        let (p_lap, p_mass) = particle::particle_functional(&ic, cfg.theta, &cfg.particle_config(n), cfg.t_end, cfg.replicas, cfg.seed)?;
        rows.push((n, p_lap, p_mass));
    }
    sink.write_with("comparison.csv", |w| {
        writeln!(w, "n,theta,T,particle,particle_se,spde,spde_se,discrepancy,joint_se,particle_mass,spde_mass")?;
        for (n, p, pm) in &rows {
            let cells = [
                n.to_string(),
                cfg.theta.to_string(),
                cfg.t_end.to_string(),
                p.mean.to_string(),
                p.std_error.to_string(),
                s_lap.mean.to_string(),
                s_lap.std_error.to_string(),
                (p.mean - s_lap.mean).to_string(),
                joint_std_error(&[p.std_error, s_lap.std_error]).to_string(),
                pm.mean.to_string(),
                s_mass.mean.to_string(),
            ];
            writeln!(w, "{}", csv(&cells))?;
        }
        Ok(())
    })?;
    Ok(Outcome { replicas: cfg.spde_replicas + cfg.replicas * cfg.ns.len(), assertions: Vec::new() })
}

fn run_speed(cfg: &ExperimentConfig, sink: &mut ArtifactSink) -> Result<Outcome, CliError> {
    let grid = cfg.grid();
    // common seeds across θ: rows are positively correlated, which only
    // makes the independent-error monotonicity check conservative
    let rows = cfg
        .theta_list()
        .iter()
        .map(|&th| fronts::estimate_b(th, cfg.t_end, cfg.replicas, cfg.n_cap, &grid, cfg.seed))
        .collect::<kpplab::Result<Vec<_>>>()?;
    sink.write_with("speed_table.csv", |w| {
        writeln!(w, "theta,T,replicas,N_cap,B_hat,stderr,bound_2sqrt_theta")?;
        for e in &rows {
            writeln!(w, "{},{},{},{},{},{},{}", e.theta, e.t_end, e.replicas, e.n_cap, e.mean_r0_over_t, e.std_error, 2.0 * e.theta.sqrt())?;
        }
        Ok(())
    })?;
    // the 2√θ column is the limiting bound, shown for comparison only: at
    // finite T the ramp's start offset pushes B̂ above it
    let mut assertions = Vec::new();
    for w in rows.windows(2) {
        let se = joint_std_error(&[w[0].std_error, w[1].std_error]);
        let d = w[1].mean_r0_over_t - w[0].mean_r0_over_t;
        assertions.push(Assertion::new(
            format!("speed_monotone[theta={}..{}]", w[0].theta, w[1].theta),
            d >= -3.0 * se,
            format!("increment {d}, joint stderr {se}"),
        ));
    }
    Ok(Outcome { replicas: rows.len() * cfg.replicas, assertions })
}

fn run_wave(cfg: &ExperimentConfig, sink: &mut ArtifactSink) -> Result<Outcome, CliError> {
    let samples = fronts::sample_wave(cfg.theta, cfg.t_end, cfg.n_cap, &cfg.grid(), cfg.wave_count, cfg.seed)?;
    let mut off = 0;
    let mut lines = vec!["sample,seed,s,T,pairing_f2_shifted,R0".to_owned()];
    for (i, w) in samples.iter().enumerate() {
        sink.write_with(&format!("wave_{i:03}.txt"), |out| write_snapshot(out, w.s, &w.profile))?;
        let g = render(&InitialCondition::Bump.shifted(-1.0), w.profile.origin(), w.profile.end(), w.profile.dx())?;
        let r0 = right_marker(&w.profile);
        if r0 != ExtendedReal::Finite(0.0) {
            off += 1;
        }
        lines.push(format!("{i},{},{},{},{},{r0}", replica_seed(cfg.seed, i), w.s, w.t_end, pairing(&w.profile, &g)?));
    }
    sink.write("waves.csv", (lines.join("\n") + "\n").as_bytes())?;
    Ok(Outcome {
        replicas: samples.len(),
        assertions: vec![Assertion::new("wave_right_marker_zero", off == 0, format!("{off} samples not recentred"))],
    })
}

fn run_duality(cfg: &ExperimentConfig, sink: &mut ArtifactSink) -> Result<Outcome, CliError> {
    let (ic, ic2, grid) = (cfg.initial_condition(), cfg.second_condition(), cfg.grid());
    let (reps, seed, t) = (cfg.replicas, cfg.seed, cfg.t_end);
    let (reports, replicas) = match cfg.identity {
        Identity::SelfDuality => (duality::self_duality_check(&ic, &ic2, cfg.theta, t, cfg.s, reps, &grid, seed)?.pairs, 3 * reps),
        Identity::Competition => {
            let amp = cfg.competition;
            let beta = Arc::new(move |s: f64, x: f64| if s <= t / 2.0 { amp * (1.0 - x.abs()).max(0.0) } else { 0.0 });
            (vec![duality::competition_duality_check(&ic, &ic2, beta, cfg.theta, t, reps, &grid, seed)?], 2 * reps)
        }
        Identity::MarkerCdf => {
            (vec![duality::marker_cdf_via_dual(&ic, cfg.x, t, cfg.theta, reps, cfg.n_cap, &grid, seed)?], 2 * reps)
        }
        Identity::UpperMeasure => {
            (vec![duality::upper_measure_laplace_check(&ic2, cfg.theta, t, reps, cfg.n_cap, &grid, seed)?], 2 * reps)
        }
    };
    let mut text = format!("{}\n", duality::DualityReport::CSV_HEADER);
    for r in &reports {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    sink.write("duality.csv", text.as_bytes())?;
    let assertions = reports
        .iter()
        .map(|r| Assertion::new(format!("duality_z_below_3[{}]", r.identity), r.z < 3.0, format!("z = {}", r.z)))
        .collect();
    Ok(Outcome { replicas, assertions })
}

fn run_sweep(cfg: &ExperimentConfig, sink: &mut ArtifactSink) -> Result<Outcome, CliError> {
    let (ic, grid) = (cfg.initial_condition(), cfg.grid());
    let rows = cfg
        .thetas
        .iter()
        .map(|&th| {
            let p = ExperimentConfig { theta: th, ..cfg.clone() }.params();
            kpplab::spde::extinction_probability(&ic, &p, &grid, cfg.t_end, cfg.replicas, cfg.seed).map(|e| (th, e))
        })
        .collect::<kpplab::Result<Vec<_>>>()?;
    sink.write_with("sweep.csv", |w| {
        writeln!(w, "theta,T,replicas,p_extinct,stderr")?;
        for (th, e) in &rows {
            writeln!(w, "{th},{},{},{},{}", cfg.t_end, e.n, e.mean, e.std_error)?;
        }
        Ok(())
    })?;
    let assertions = rows
        .windows(2)
        .map(|w| {
            let se = joint_std_error(&[w[0].1.std_error, w[1].1.std_error]);
            let d = w[1].1.mean - w[0].1.mean;
            Assertion::new(
                format!("extinction_decreasing[theta={}..{}]", w[0].0, w[1].0),
                d <= 3.0 * se.max(1.0 / cfg.replicas as f64),
                format!("increment {d}, joint stderr {se}"),
            )
        })
        .collect();
    Ok(Outcome { replicas: rows.len() * cfg.replicas, assertions })
}
