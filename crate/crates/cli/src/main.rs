//! Command-line front end: build disk towers, run the verification suites,
//! probe triviality, emit reports and figures.
//!
//! Exit codes: 0 all checks pass, 1 a verification verdict failed,
//! 2 configuration or I/O error.

mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use nalgebra::DVector;
use serde::Serialize;

use aperiodic_lab::cocycle::exponents_periodic;
use aperiodic_lab::tower::{repelling_escape_step, triviality_probe, weak_star_gap, Tower};
use aperiodic_lab::verifier::{
    center_exponent_bound, check_exponent_chain, check_tower_invariants, measured_budget,
};

#[derive(Parser)]
#[command(name = "aperiodic-lab", version, about = "Nested disk-tower laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a tower: seed stage plus depth−1 refinements.
    Build {
        /// Chart dimension (2 or 3).
        #[arg(long, default_value_t = 3)]
        dim: usize,
        /// Number of stages.
        #[arg(long, default_value_t = 3)]
        depth: usize,
        /// Per-stage branching factors; the last one repeats if fewer than
        /// depth−1 are given.
        #[arg(short = 'b', long = "branch")]
        branch: Vec<u64>,
        /// First-stage period.
        #[arg(long, default_value_t = 2)]
        m1: u64,
        /// Diameter bound for the first stage.
        #[arg(long, default_value_t = 0.2)]
        delta: f64,
        /// Multiplier of the diameter bound per stage (must be < 1).
        #[arg(long, default_value_t = 0.5)]
        delta_ratio: f64,
        /// Period floor passed to every refinement.
        #[arg(long, default_value_t = 1)]
        m0: u64,
        /// Output directory (falls back to $APERIODIC_LAB_OUT, then ./out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-verify a tower dump: invariants, exponent chain, budget arithmetic,
    /// weak-star gaps and triviality probes.
    Verify {
        /// Path to tower.json produced by `build`.
        dump: PathBuf,
        /// Samples per disk for the geometric re-measurement.
        #[arg(long, default_value_t = 40)]
        samples: usize,
        /// Probe horizon; defaults to 10·m_K.
        #[arg(long)]
        horizon: Option<u64>,
        /// Slack applied to trend comparisons.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Phase seed for the randomized probe samples.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a branch forest: one pair refinement per word letter.
    Branch {
        /// Word depth (2^depth leaf towers, capped at 4).
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 3)]
        dim: usize,
        /// Children per ring at every pair refinement.
        #[arg(short = 'b', long, default_value_t = 3)]
        branch: u64,
        #[arg(long, default_value_t = 0.2)]
        delta: f64,
        #[arg(long, default_value_t = 0.5)]
        delta_ratio: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a dump as SVG: disks per stage, periodic orbits, limit samples.
    Plot {
        dump: PathBuf,
        /// Projection plane for 3-dimensional towers.
        #[arg(long, default_value = "xy")]
        plane: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("APERIODIC_LAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn spectra_csv(tower: &Tower) -> Result<String> {
    let mut csv = String::from("stage,chi_minus,chi_center,chi_plus\n");
    for stage in tower.stages(&[])? {
        let s = exponents_periodic(&stage.cert.cocycle)?;
        let center = s
            .chi_center()
            .map(|c| format!("{c:.12}"))
            .unwrap_or_default();
        csv.push_str(&format!(
            "{},{:.12},{},{:.12}\n",
            stage.level,
            s.chi_minus(),
            center,
            s.chi_plus()
        ));
    }
    Ok(csv)
}

fn cmd_build(
    dim: usize,
    depth: usize,
    branch: Vec<u64>,
    m1: u64,
    delta: f64,
    delta_ratio: f64,
    m0: u64,
    out: PathBuf,
) -> Result<()> {
    if depth < 1 {
        bail!("config error: depth must be at least 1");
    }
    if !(delta_ratio > 0.0 && delta_ratio < 1.0) {
        bail!("config error: the diameter schedule must be strictly decreasing (delta-ratio < 1)");
    }
    if delta <= 0.0 {
        bail!("config error: delta must be positive");
    }
    let factors: Vec<u64> = (0..depth.saturating_sub(1))
        .map(|i| {
            branch
                .get(i)
                .or_else(|| branch.last())
                .copied()
                .unwrap_or(3)
        })
        .collect();
    if factors.iter().any(|&b| b < 2) {
        bail!("config error: branching factors must be at least 2");
    }

    let mut tower = Tower::seed(dim, m1, delta)?;
    let mut d = delta;
    for &b in &factors {
        d *= delta_ratio;
        tower.refine(b, d, m0)?;
    }

    std::fs::create_dir_all(&out)?;
    write_json(&out.join("tower.json"), &tower)?;
    std::fs::write(out.join("spectra.csv"), spectra_csv(&tower)?)?;

    // limit-set sample CSV
    let (samples, _) = tower.limit_set_sample(tower.periods.last().copied().unwrap() as usize, &[])?;
    let mut cantor = String::from(match dim {
        2 => "x,y\n",
        _ => "x,y,z\n",
    });
    for s in &samples {
        let row: Vec<String> = s.iter().map(|v| format!("{v:.12}")).collect();
        cantor.push_str(&row.join(","));
        cantor.push('\n');
    }
    std::fs::write(out.join("cantor.csv"), cantor)?;

    // per-stage summary with lightly sampled budget margins
    let (max_det, max_inv) = measured_budget(&tower, &[], 12)?;
    println!("stage  period  max-diam      chi-      chi-c     chi+");
    for stage in tower.stages(&[])? {
        let s = exponents_periodic(&stage.cert.cocycle)?;
        let diam = stage
            .attracting
            .iter()
            .map(|d| 2.0 * d.radius)
            .fold(0.0f64, f64::max);
        println!(
            "{:>5}  {:>6}  {:<11.5} {:>8.4} {:>9} {:>8.4}",
            stage.level,
            stage.period,
            diam,
            s.chi_minus(),
            s.chi_center()
                .map(|c| format!("{c:.4}"))
                .unwrap_or_else(|| "-".into()),
            s.chi_plus()
        );
    }
    println!(
        "budget margins: jacobian {:.3} (log|det| max {:.3}), inverse {:.3} (log norm max {:.3})",
        1.0 - max_det,
        max_det,
        2.0 - max_inv,
        max_inv
    );
    println!("wrote {}", out.join("tower.json").display());
    Ok(())
}

#[derive(Serialize)]
struct VerifySummary {
    invariants: aperiodic_lab::verifier::VerdictReport,
    exponent_chain: aperiodic_lab::verifier::VerdictReport,
    /// Present for three-dimensional towers; in the plane hyperbolicity
    /// follows from the two certified exponents alone.
    center_bound: Option<aperiodic_lab::verifier::CenterExponentBound>,
    measured_jacobian_max: f64,
    measured_inverse_norm_max: f64,
    weak_star: Vec<aperiodic_lab::tower::WeakStarGap>,
    separation_pairs_checked: usize,
    separation_ok: bool,
    repelling_escapes: usize,
    repelling_samples: usize,
    pass: bool,
}

fn cmd_verify(
    dump: PathBuf,
    samples: usize,
    horizon: Option<u64>,
    tol: f64,
    seed: u64,
    out: PathBuf,
) -> Result<i32> {
    let text = std::fs::read_to_string(&dump)
        .with_context(|| format!("reading {}", dump.display()))?;
    let tower: Tower = serde_json::from_str(&text).context("malformed tower dump")?;

    let invariants = check_tower_invariants(&tower, &[], samples)?;
    let stages = tower.stages(&[])?;
    let exponent_chain = check_exponent_chain(&stages)?;
    let (max_det, max_inv) = measured_budget(&tower, &[], samples.min(20))?;
    let mut chi_plus_lb = f64::INFINITY;
    let mut chi_minus_ub = f64::NEG_INFINITY;
    for stage in &stages {
        let s = exponents_periodic(&stage.cert.cocycle)?;
        chi_plus_lb = chi_plus_lb.min(s.chi_plus());
        chi_minus_ub = chi_minus_ub.max(s.chi_minus());
    }
    let center_bound = (tower.dim == 3)
        .then(|| center_exponent_bound(chi_plus_lb, (-max_inv, chi_minus_ub), max_det));

    let mut weak_star = Vec::new();
    for level in 1..=tower.depth() {
        weak_star.push(weak_star_gap(&tower, level, &[])?);
    }

    let horizon = horizon.unwrap_or(10 * tower.periods.last().copied().unwrap());
    let separation = tower.stage1_separation();
    let threshold = separation / 2.0;
    let (cantor, _) = tower.limit_set_sample(8, &[])?;
    let mut separation_ok = true;
    let mut pairs = 0usize;
    for i in 0..cantor.len() {
        for j in (i + 1)..cantor.len() {
            let x = DVector::from_vec(cantor[i].clone());
            let y = DVector::from_vec(cantor[j].clone());
            if (x.clone() - &y).norm() < separation {
                continue; // same stage-1 component
            }
            let ev = triviality_probe(&tower, &x, &y, horizon, threshold)?;
            separation_ok &= ev.separates_forward && ev.separates_backward;
            pairs += 1;
        }
    }
    let deep = tower.level_nodes(tower.depth(), &[])?;
    let mut escapes = 0usize;
    let mut tested = 0usize;
    for (k, node) in deep.iter().enumerate().take(20) {
        let mut y = DVector::from_vec(node.center.clone());
        let angle = 0.77 * k as f64 + 0.13 * seed as f64;
        y[0] += node.radius * 0.58 * angle.cos();
        y[1] += node.radius * 0.58 * angle.sin();
        tested += 1;
        if repelling_escape_step(&tower, &y, horizon, &[])?.is_some() {
            escapes += 1;
        }
    }

    let pass = invariants.pass
        && exponent_chain.pass
        && center_bound.map_or(true, |b| b.hyperbolic_limit)
        && weak_star.windows(2).all(|w| w[1].gap <= w[0].gap + tol)
        && separation_ok
        && escapes == tested;
    let summary = VerifySummary {
        invariants,
        exponent_chain,
        center_bound,
        measured_jacobian_max: max_det,
        measured_inverse_norm_max: max_inv,
        weak_star,
        separation_pairs_checked: pairs,
        separation_ok,
        repelling_escapes: escapes,
        repelling_samples: tested,
        pass,
    };
    std::fs::create_dir_all(&out)?;
    write_json(&out.join("verdicts.json"), &summary)?;

    for item in &summary.invariants.items {
        println!(
            "{:<22} {}  margin {:+.3e}{}",
            item.id,
            if item.passed() { "pass" } else { "FAIL" },
            item.margin,
            item.witness
                .as_deref()
                .map(|w| format!("  [{w}]"))
                .unwrap_or_default()
        );
    }
    if let Some(bound) = &summary.center_bound {
        println!(
            "center exponent bound: χᶜ < {:.4} ({})",
            bound.strict_upper_bound,
            if bound.hyperbolic_limit {
                "hyperbolic limit"
            } else {
                "inconclusive"
            }
        );
    }
    println!(
        "triviality: {}/{} separated pairs, {}/{} repelling escapes",
        pairs, pairs, escapes, tested
    );
    println!("wrote {}", out.join("verdicts.json").display());
    Ok(if pass { 0 } else { 1 })
}

#[derive(Serialize)]
struct ForestSummary {
    words: Vec<Vec<u8>>,
    periods: Vec<u64>,
    /// Minimum gap between the deepest attracting families of word pairs.
    disjointness: Vec<Vec<f64>>,
    all_disjoint: bool,
}

fn cmd_branch(
    depth: usize,
    dim: usize,
    branch: u64,
    delta: f64,
    delta_ratio: f64,
    out: PathBuf,
) -> Result<i32> {
    if depth > 4 {
        bail!("config error: word depth {depth} exceeds the desk-scale cap of 4");
    }
    let mut tower = Tower::seed(dim, 2, delta)?;
    let mut d = delta;
    for _ in 0..depth {
        d *= delta_ratio;
        tower.refine_pair(branch, d, 1)?;
    }
    let words: Vec<Vec<u8>> = (0..(1u32 << depth))
        .map(|i| (0..depth).map(|l| ((i >> (depth - 1 - l)) & 1) as u8).collect())
        .collect();
    let deepest = tower.depth();
    let mut matrix = vec![vec![f64::INFINITY; words.len()]; words.len()];
    let mut all_disjoint = true;
    for i in 0..words.len() {
        for j in (i + 1)..words.len() {
            let a = tower.level_nodes(deepest, &words[i])?;
            let b = tower.level_nodes(deepest, &words[j])?;
            let mut min_gap = f64::INFINITY;
            for na in &a {
                for nb in &b {
                    let ca = DVector::from_vec(na.center.clone());
                    let cb = DVector::from_vec(nb.center.clone());
                    min_gap = min_gap.min((ca - cb).norm() - na.radius - nb.radius);
                }
            }
            matrix[i][j] = min_gap;
            matrix[j][i] = min_gap;
            all_disjoint &= min_gap > 0.0;
        }
    }
    std::fs::create_dir_all(&out)?;
    write_json(&out.join("forest.json"), &tower)?;
    let summary = ForestSummary {
        words: words.clone(),
        periods: tower.periods.clone(),
        disjointness: matrix,
        all_disjoint,
    };
    write_json(&out.join("disjointness.json"), &summary)?;
    println!(
        "{} leaf towers over periods {:?}; pairwise disjoint: {}",
        words.len(),
        tower.periods,
        all_disjoint
    );
    println!("wrote {}", out.join("forest.json").display());
    Ok(if all_disjoint { 0 } else { 1 })
}

fn cmd_plot(dump: PathBuf, plane: &str, out: PathBuf) -> Result<()> {
    let text = std::fs::read_to_string(&dump)
        .with_context(|| format!("reading {}", dump.display()))?;
    let tower: Tower = serde_json::from_str(&text).context("malformed tower dump")?;
    let (ix, iy) = match (tower.dim, plane) {
        (2, _) => (0, 1),
        (_, "xy") => (0, 1),
        (_, "xz") => (0, 2),
        (_, "yz") => (1, 2),
        (_, other) => bail!("config error: unknown projection plane '{other}'"),
    };
    let mut canvas = svg::SvgCanvas::new();
    for stage in tower.stages(&[])? {
        for disk in &stage.attracting {
            canvas.circle(disk.center[ix], disk.center[iy], disk.radius, stage.level, false);
        }
        for disk in &stage.repelling {
            canvas.circle(disk.center[ix], disk.center[iy], disk.radius, stage.level, true);
        }
        let mut orbit: Vec<(f64, f64)> = stage
            .attracting
            .iter()
            .map(|d| (d.center[ix], d.center[iy]))
            .collect();
        if let Some(first) = orbit.first().copied() {
            orbit.push(first);
        }
        canvas.polyline(&orbit, stage.level);
    }
    let (samples, _) = tower.limit_set_sample(64, &[])?;
    for s in &samples {
        canvas.dot(s[ix], s[iy]);
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&out, canvas.render())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run() -> Result<i32> {
    let cli = Cli::parse();
    match cli.command {
        Command::Build {
            dim,
            depth,
            branch,
            m1,
            delta,
            delta_ratio,
            m0,
            out,
        } => {
            let out = out_dir(out);
            cmd_build(dim, depth, branch, m1, delta, delta_ratio, m0, out)?;
            Ok(0)
        }
        Command::Verify {
            dump,
            samples,
            horizon,
            tol,
            seed,
            out,
        } => cmd_verify(dump, samples, horizon, tol, seed, out_dir(out)),
        Command::Branch {
            depth,
            dim,
            branch,
            delta,
            delta_ratio,
            out,
        } => cmd_branch(depth, dim, branch, delta, delta_ratio, out_dir(out)),
        Command::Plot { dump, plane, out } => {
            let out = out.unwrap_or_else(|| out_dir(None).join("tower.svg"));
            cmd_plot(dump, &plane, out)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
