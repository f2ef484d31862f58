//! Acceptance suite: one PASS/FAIL line per criterion.

use std::path::Path;
use std::time::Instant;

use fmo_core::baselines::{objective_p1, polish, solve_slack_greedy, BaselineError, PolishOptions};
use fmo_core::dosegen::{generate_phantom, load_dose_matrix, load_problem, random_phantom, toy_phantom};
use fmo_core::dvh;
use fmo_core::matrix::DoseMatrix;
use fmo_core::model::{
    Direction, DoseVolumeConstraint, Organ, ProblemSpec, StructureKind, StructureRef, StructureSpec, Target,
    TargetObjective,
};
use fmo_core::projection::{
    project_cardinality, project_combined, project_oracle, squared_distance, CardinalitySet, CombinedDoseSet,
    LevelConstraint, ProjectionSet,
};
use fmo_core::report::check_constraints;
use fmo_core::reweight::{run_reweight, ReweightConfig};
use fmo_core::solver::{run_bcd, Initialization, Solver, SolverConfig, StepPolicy};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn phantom(seed: u64) -> ProblemSpec {
    generate_phantom(&random_phantom(seed)).expect("random phantom")
}

fn tight() -> SolverConfig {
    SolverConfig {
        inner_tol: 1e-10,
        ..Default::default()
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_projection_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for trial in 0..1000 {
        let n = rng.random_range(2..=8);
        let k = rng.random_range(0..=n);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        for direction in [Direction::Upper, Direction::Lower] {
            // Residual space.
            let set = CardinalitySet { n, k, direction };
            let p = project_cardinality(&v, &set);
            let o = project_oracle(&v, &ProjectionSet::Cardinality(set)).map_err(|e| e.to_string())?;
            let gap = (squared_distance(&v, &p).sqrt() - squared_distance(&v, &o).sqrt()).abs();
            worst = worst.max(gap);
            ensure(gap <= 1e-12, || format!("trial {trial}: residual-space gap {gap:e}"))?;
            ensure(p.iter().filter(|&&x| x > 0.0).count() <= k, || format!("trial {trial}: infeasible"))?;
            ensure(project_cardinality(&p, &set) == p, || format!("trial {trial}: not idempotent"))?;

            // Dose space with the threshold at 0 Gy offset by a random level.
            let level = rng.random_range(-5.0..5.0);
            let dset = CombinedDoseSet {
                n,
                constraints: vec![LevelConstraint {
                    direction,
                    dose: level,
                    cap: k,
                }],
            };
            let p = project_combined(&v, &dset).map_err(|e| e.to_string())?;
            let o = project_oracle(&v, &ProjectionSet::Combined(dset.clone())).map_err(|e| e.to_string())?;
            let gap = (squared_distance(&v, &p).sqrt() - squared_distance(&v, &o).sqrt()).abs();
            worst = worst.max(gap);
            ensure(gap <= 1e-12, || format!("trial {trial}: dose-space gap {gap:e}"))?;
            ensure(dset.contains(&p), || format!("trial {trial}: dose-space infeasible"))?;
            ensure(
                project_combined(&p, &dset).map_err(|e| e.to_string())? == p,
                || format!("trial {trial}: dose-space not idempotent"),
            )?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.1}s"))?;
    Ok(format!("4000 projections, worst gap {worst:.1e}, {secs:.2}s"))
}

fn c2_gradient() -> Outcome {
    let start = Instant::now();
    let p = phantom(2);
    let s = Solver::new(&p, tight()).map_err(|e| e.to_string())?;
    let x0 = s.unconstrained_fluence().map_err(|e| e.to_string())?.x;
    let r0 = s.residual(0, &x0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for point in 0..100 {
        let w: Vec<Vec<f64>> = vec![r0.iter().map(|r| r + rng.random_range(-20.0..20.0)).collect()];
        let (_, x) = s.eval_g(&w, Some(&x0)).map_err(|e| e.to_string())?;
        let grad = s.grad_g(&w, &x).map_err(|e| e.to_string())?;
        let scale = grad[0].iter().fold(0.0f64, |a, g| a.max(g.abs())).max(1e-8);
        for i in 0..w[0].len() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[0][i] += h;
            wm[0][i] -= h;
            let gp = s.eval_g(&wp, Some(&x)).map_err(|e| e.to_string())?.0;
            let gm = s.eval_g(&wm, Some(&x)).map_err(|e| e.to_string())?.0;
            let fd = (gp - gm) / (2.0 * h);
            let rel = (fd - grad[0][i]).abs() / scale;
            worst = worst.max(rel);
            ensure(rel <= 1e-4, || format!("point {point} entry {i}: fd {fd} vs {}", grad[0][i]))?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "m = {}, 100 points, worst relative error {worst:.1e}, {secs:.1}s",
        p.beamlets
    ))
}

fn c3_monotone_descent() -> Outcome {
    let mut steps = 0;
    for seed in 0..25 {
        let p = phantom(100 + seed);
        for frac in [1.0, 0.5] {
            let cfg = SolverConfig {
                step: StepPolicy::Fraction(frac),
                ..tight()
            };
            let out = Solver::new(&p, cfg).and_then(|s| s.run()).map_err(|e| e.to_string())?;
            for (k, pair) in out.state.g_history.windows(2).enumerate() {
                ensure(pair[1] <= pair[0] + 1e-9 * (1.0 + pair[0].abs()), || {
                    format!("seed {seed} fraction {frac} step {k}: {} -> {}", pair[0], pair[1])
                })?;
                steps += 1;
            }
        }
    }
    Ok(format!("50 runs, {steps} steps, all nonincreasing"))
}

fn c4_lipschitz() -> Outcome {
    let p = phantom(4);
    let s = Solver::new(&p, tight()).map_err(|e| e.to_string())?;
    let bound = s.blocks.iter().map(|b| b.weight()).fold(0.0, f64::max);
    let x0 = s.unconstrained_fluence().map_err(|e| e.to_string())?.x;
    let r0 = s.residual(0, &x0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for pair in 0..200 {
        let mut grads = Vec::new();
        let mut ws = Vec::new();
        for _ in 0..2 {
            let w: Vec<Vec<f64>> = vec![r0.iter().map(|r| r + rng.random_range(-30.0..30.0)).collect()];
            let (_, x) = s.eval_g(&w, Some(&x0)).map_err(|e| e.to_string())?;
            grads.push(s.grad_g(&w, &x).map_err(|e| e.to_string())?);
            ws.push(w);
        }
        let ratio = squared_distance(&grads[0][0], &grads[1][0]).sqrt() / squared_distance(&ws[0][0], &ws[1][0]).sqrt();
        worst = worst.max(ratio);
        ensure(ratio <= bound * (1.0 + 1e-6), || format!("pair {pair}: ratio {ratio} > {bound}"))?;
    }
    Ok(format!("200 pairs, worst ratio {worst:.4e} <= bound {bound:.4e}"))
}

/// Hessian of `f(x, w)` in the stacked variable, assembled from dense
/// matrices without the solver's operators.
fn joint_hessian(p: &ProblemSpec) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = p.beamlets;
    let dense = |a: &DoseMatrix| {
        let d = a.to_dense();
        DMatrix::from_fn(a.rows(), a.cols(), |i, j| d[i][j])
    };
    let ids = p.constraint_ids();
    let nw: usize = ids.iter().map(|id| p.structure(id.structure).0.voxel_count).sum();
    let mut h = DMatrix::zeros(m + nw, m + nw);
    let mut ptv = DMatrix::<f64>::identity(m, m) * p.lambda;
    for t in &p.targets {
        let a = dense(&t.matrix);
        ptv += (a.transpose() * &a) * (t.objective.alpha / t.structure.voxel_count as f64);
    }
    h.view_mut((0, 0), (m, m)).copy_from(&ptv);
    let mut off = m;
    for id in &ids {
        let c = p.constraint(*id);
        let (s, a) = p.structure(id.structure);
        let a = dense(a);
        let n = s.voxel_count;
        let wgt = c.alpha / n as f64;
        // Residual term (w - sign (A x - d)), sign = +1 upper, -1 lower.
        let sign = if c.direction == Direction::Upper { 1.0 } else { -1.0 };
        let xx = (a.transpose() * &a) * wgt;
        let cur = h.view((0, 0), (m, m)).clone_owned();
        h.view_mut((0, 0), (m, m)).copy_from(&(cur + xx));
        let xw = a.transpose() * (-sign * wgt);
        h.view_mut((0, off), (m, n)).copy_from(&xw);
        h.view_mut((off, 0), (n, m)).copy_from(&xw.transpose());
        h.view_mut((off, off), (n, n)).copy_from(&(DMatrix::<f64>::identity(n, n) * wgt));
        off += n;
    }
    (h, ptv)
}

fn c5_strong_convexity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut min_eig = f64::INFINITY;
    let mut worst: f64 = 0.0;
    for inst in 0..20 {
        let m = rng.random_range(2..=5);
        let mut rand_matrix = |rows: usize| {
            let d: Vec<Vec<f64>> = (0..rows).map(|_| (0..m).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
            DoseMatrix::from_dense(&d).unwrap()
        };
        let (nt, no) = (3, 4);
        let (at, ao) = (rand_matrix(nt), rand_matrix(no));
        let p = ProblemSpec::new(
            vec![Target {
                structure: StructureSpec::new("PTV", StructureKind::Ptv, nt),
                matrix: at,
                objective: TargetObjective::uniform(60.0, 1.5),
                constraints: vec![],
            }],
            vec![Organ {
                structure: StructureSpec::new("OAR", StructureKind::Oar, no),
                matrix: ao,
                constraints: vec![
                    DoseVolumeConstraint::upper(20.0, 25.0).with_alpha(3.0),
                    DoseVolumeConstraint::lower(5.0, 50.0).with_alpha(2.0),
                ],
            }],
            1e-3,
        )
        .map_err(|e| e.to_string())?;

        // Implementation route: the solver's quadratic in x, at w = 0.
        let s = Solver::new(&p, SolverConfig::default()).map_err(|e| e.to_string())?;
        let w0: Vec<Vec<f64>> = s.blocks.iter().map(|b| vec![0.0; b.n]).collect();
        let (hx, _, _) = s.objective(&w0).dense_quadratic();

        let (h, ptv) = joint_hessian(&p);
        let xx_gap = (&hx - h.view((0, 0), (p.beamlets, p.beamlets))).amax();
        ensure(xx_gap <= 1e-10, || format!("instance {inst}: x-block mismatch {xx_gap:e}"))?;
        let eig = SymmetricEigen::new(h.clone()).eigenvalues.min();
        min_eig = min_eig.min(eig);
        ensure(eig > 0.0, || format!("instance {inst}: min eigenvalue {eig:e}"))?;

        let mb = p.beamlets;
        let hxx = h.view((0, 0), (mb, mb)).clone_owned();
        let hxw = h.view((0, mb), (mb, h.ncols() - mb)).clone_owned();
        let hww = h.view((mb, mb), (h.nrows() - mb, h.ncols() - mb)).clone_owned();
        let schur = hxx - &hxw * hww.try_inverse().ok_or("singular w-block")? * hxw.transpose();
        let gap = (&schur - &ptv).amax();
        worst = worst.max(gap);
        ensure(gap <= 1e-10, || format!("instance {inst}: Schur gap {gap:e}"))?;
    }
    Ok(format!("20 instances, min eigenvalue {min_eig:.2e}, worst Schur gap {worst:.1e}"))
}

fn c6_bcd_equals_pgd() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut iters = 0;
    for seed in 0..10 {
        let p = phantom(600 + seed);
        let s = Solver::new(&p, tight()).map_err(|e| e.to_string())?;
        let mut st = s.initialize().map_err(|e| e.to_string())?;
        for _ in 0..s.config.max_outer_iters {
            let a = s.pgd_update(&st.w, &st.x).map_err(|e| e.to_string())?;
            let b = s.bcd_update(&st.x).map_err(|e| e.to_string())?;
            for (u, v) in a.iter().flatten().zip(b.iter().flatten()) {
                worst = worst.max((u - v).abs());
            }
            ensure(worst <= 1e-10, || format!("seed {seed}: iterate gap {worst:e}"))?;
            s.step(&mut st).map_err(|e| e.to_string())?;
            iters += 1;
            if st.err <= s.config.epsilon {
                break;
            }
        }
    }
    Ok(format!("10 phantoms, {iters} iterations, worst gap {worst:.1e}"))
}

fn c7_toy() -> Outcome {
    let p = generate_phantom(&toy_phantom()).map_err(|e| e.to_string())?;
    let a1 = p.targets[0].matrix.to_dense();
    let a2 = p.organs[0].matrix.to_dense();
    let cfg = SolverConfig {
        epsilon: 1e-3,
        ..tight()
    };
    let s = Solver::new(&p, cfg.clone()).map_err(|e| e.to_string())?;
    let first = s.run().map_err(|e| e.to_string())?;
    ensure(first.state.k <= 100 && first.state.err <= 1e-3, || {
        format!("{} iterations, err {:e}", first.state.k, first.state.err)
    })?;
    let cap = p.organs[0].constraints[0].cap(2);
    ensure(first.state.w[0].iter().filter(|&&v| v > 0.0).count() <= cap, || "w infeasible".into())?;

    // Start deep in the basin where the other organ voxel is the one allowed
    // to exceed: push all fluence into the beamlet the first run uses least.
    let weak = if first.state.x[0] < first.state.x[1] { 0 } else { 1 };
    let mut x_other = vec![0.0; 2];
    x_other[weak] = 2000.0;
    let other_cfg = SolverConfig {
        init: Initialization::Fluence(x_other),
        ..cfg
    };
    let second = Solver::new(&p, other_cfg).and_then(|s| s.run()).map_err(|e| e.to_string())?;
    ensure(second.state.err <= 1e-3, || "second run did not converge".into())?;
    let gap = squared_distance(&first.state.x, &second.state.x).sqrt();
    ensure(gap > 1.0, || format!("both starts reached the same point (distance {gap:.2e})"))?;
    let (g1, g2) = (
        *first.state.g_history.last().unwrap(),
        *second.state.g_history.last().unwrap(),
    );
    let (o1, o2) = (objective_p1(&p, &first.state.x), objective_p1(&p, &second.state.x));
    ensure(g2 >= g1 && o2 >= o1, || format!("other basin is lower: g {g1} vs {g2}, objective {o1} vs {o2}"))?;
    Ok(format!(
        "A1 = {:.3?}, A2 = {:.3?}; default start: {} iterations, x = {:.2?}, g = {g1:.2}; other basin: x = {:.2?}, g = {g2:.2}",
        a1[0], a2, first.state.k, first.state.x, second.state.x
    ))
}

fn c8_reweight() -> Outcome {
    let p = generate_phantom(&fmo_core::dosegen::prostate_phantom()).map_err(|e| e.to_string())?;
    let scfg = SolverConfig::default();
    let plain = run_bcd(&p, &scfg).map_err(|e| e.to_string())?;
    let before = check_constraints(&p, &plain.state.x);
    ensure(before.iter().any(|c| !c.satisfied), || "plain BCD already satisfies every constraint".into())?;
    let out = run_reweight(&p, &ReweightConfig::default(), &scfg).map_err(|e| e.to_string())?;
    let after = check_constraints(&p, &out.x);
    ensure(after.iter().all(|c| c.satisfied), || {
        format!("after {} rounds: {:?}", out.rounds.len(), after.iter().map(|c| c.violation_count).collect::<Vec<_>>())
    })?;
    let d0 = out.initial_d95[0];
    let d1 = out.rounds.last().unwrap().target_d95[0];
    let drop = (d0 - d1) / d0;
    ensure(drop <= 0.05, || format!("D95 {d0:.2} -> {d1:.2} ({:.1}%)", 100.0 * drop))?;
    Ok(format!(
        "violations {} -> {} (cap {}), {} rounds, D95 {d0:.2} -> {d1:.2} Gy ({:.2}% drop)",
        before[0].violation_count,
        after[0].violation_count,
        after[0].cap,
        out.rounds.len() - 1,
        100.0 * drop
    ))
}

fn c9_slack_monotone() -> Outcome {
    let mut checked = 0;
    for seed in 0..10 {
        let p = phantom(900 + seed);
        let out = solve_slack_greedy(&p, &SolverConfig::default()).map_err(|e| e.to_string())?;
        for (k, pair) in out.y_history.windows(2).enumerate() {
            for (j, id) in p.constraint_ids().iter().enumerate() {
                let up = p.constraint(*id).direction == Direction::Upper;
                for (a, b) in pair[0][j].iter().zip(&pair[1][j]) {
                    ensure(if up { b >= a } else { b <= a }, || format!("seed {seed} iteration {k}: {a} -> {b}"))?;
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("10 phantoms, {checked} entry transitions, all monotone"))
}

fn c10_polish() -> Outcome {
    let mut feasible = 0;
    let mut infeasible = 0;
    let mut ranking = Vec::new();
    for seed in 0..5 {
        let p = phantom(1000 + seed);
        let bcd = run_bcd(&p, &SolverConfig::default()).map_err(|e| e.to_string())?;
        match polish(&p, &bcd.state.x, &PolishOptions::default()) {
            Ok(out) => {
                ensure(check_constraints(&p, &out.x).iter().all(|c| c.satisfied), || {
                    format!("seed {seed}: polished plan violates a constraint")
                })?;
                let start_ok = check_constraints(&p, &bcd.state.x).iter().all(|c| c.satisfied);
                if start_ok {
                    ensure(out.objective_p1 <= objective_p1(&p, &bcd.state.x) * (1.0 + 1e-9), || {
                        format!("seed {seed}: polish made a feasible start worse")
                    })?;
                }
                feasible += 1;
                let rw = run_reweight(&p, &ReweightConfig::default(), &SolverConfig::default())
                    .map(|r| objective_p1(&p, &r.x))
                    .unwrap_or(f64::NAN);
                let slack = solve_slack_greedy(&p, &SolverConfig::default())
                    .ok()
                    .and_then(|s| polish(&p, &s.x, &PolishOptions::default()).ok())
                    .map_or(f64::NAN, |o| o.objective_p1);
                ranking.push(format!(
                    "seed {seed}: bcd+polish {:.1}, reweight {rw:.1}, slack+polish {slack:.1}",
                    out.objective_p1
                ));
            }
            Err(BaselineError::Infeasible { .. }) => infeasible += 1,
            Err(e) => return Err(format!("seed {seed}: {e}")),
        }
    }
    for r in &ranking {
        println!("    {r}");
    }
    Ok(format!("{feasible} feasible, {infeasible} reported infeasible"))
}

fn c11_rate() -> Outcome {
    // The last entry is a plain halving of the middle tolerance, reported
    // alongside the decade sweep.
    let eps = [1e-2, 1e-3, 1e-4, 5e-4];
    let mut totals = [0usize; 4];
    for seed in 0..5 {
        let p = phantom(1100 + seed);
        for (i, &e) in eps.iter().enumerate() {
            let cfg = SolverConfig {
                epsilon: e,
                step: StepPolicy::Fraction(0.5),
                max_outer_iters: 100_000,
                ..tight()
            };
            let out = Solver::new(&p, cfg).and_then(|s| s.run()).map_err(|e| e.to_string())?;
            totals[i] += out.state.k;
        }
    }
    let r1 = totals[1] as f64 / totals[0] as f64;
    let r2 = totals[2] as f64 / totals[1] as f64;
    let half = totals[3] as f64 / totals[1] as f64;
    let detail = format!(
        "suite iterations {:?} for eps 1e-2, 1e-3, 1e-4: ratios {r1:.2} and {r2:.2}; 1e-3 -> 5e-4 ratio {half:.2}",
        &totals[..3]
    );
    ensure(r1 <= 3.0 && r2 <= 3.0, || detail.clone())?;
    Ok(detail)
}

enum Optional {
    Ran(Outcome),
    Skipped(String),
}

fn c12_dataset() -> Optional {
    let Some(dir) = std::env::var_os("FMO_CORT_DIR") else {
        return Optional::Skipped("FMO_CORT_DIR not set".into());
    };
    let dir = Path::new(&dir);
    Optional::Ran(cort_check(dir))
}

fn cort_check(dir: &Path) -> Outcome {
    let p = if dir.join("manifest.json").exists() {
        load_problem(dir).map_err(|e| e.to_string())?
    } else {
        let ptv = load_dose_matrix(&dir.join("ptv.txt")).map_err(|e| e.to_string())?;
        let rectum = load_dose_matrix(&dir.join("rectum.txt")).map_err(|e| e.to_string())?;
        ProblemSpec::new(
            vec![Target {
                structure: StructureSpec::new("PTV", StructureKind::Ptv, ptv.rows()),
                matrix: ptv,
                objective: TargetObjective::uniform(81.0, 1.0),
                constraints: vec![],
            }],
            vec![Organ {
                structure: StructureSpec::new("rectum", StructureKind::Oar, rectum.rows()),
                matrix: rectum,
                constraints: vec![DoseVolumeConstraint::upper(30.0, 30.0)],
            }],
            1e-8,
        )
        .map_err(|e| e.to_string())?
    };
    let out = run_bcd(&p, &SolverConfig::default()).map_err(|e| e.to_string())?;
    let d95 = dvh::d95(&p.dose(StructureRef::Target(0), &out.state.x)).map_err(|e| e.to_string())?;
    let above = dvh::percent_above(&p.dose(StructureRef::Organ(0), &out.state.x), 30.0).map_err(|e| e.to_string())?;
    ensure((d95 - 79.17).abs() <= 1.0 && (above - 34.16).abs() <= 3.0, || {
        format!("D95 {d95:.2} Gy, {above:.2}% above 30 Gy")
    })?;
    Ok(format!("D95 {d95:.2} Gy, {above:.2}% above 30 Gy"))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("projection matches exhaustive oracle", c1_projection_oracle),
        ("value-function gradient matches finite differences", c2_gradient),
        ("monotone descent", c3_monotone_descent),
        ("gradient Lipschitz bound", c4_lipschitz),
        ("strong convexity and Schur complement", c5_strong_convexity),
        ("full-step PGD reproduces BCD", c6_bcd_equals_pgd),
        ("two-beamlet toy: basins and stationarity", c7_toy),
        ("re-weighting reaches feasibility", c8_reweight),
        ("slack-greedy targets are monotone", c9_slack_monotone),
        ("polish is feasible or reports infeasibility", c10_polish),
        ("iteration growth per tolerance decade", c11_rate),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    let mut optional_failed = false;
    match c12_dataset() {
        Optional::Skipped(why) => println!("SKIP 12 clinical dataset reference values: {why}"),
        Optional::Ran(Ok(detail)) => println!("PASS 12 clinical dataset reference values: {detail}"),
        Optional::Ran(Err(detail)) => {
            optional_failed = true;
            println!("FAIL 12 clinical dataset reference values: {detail}");
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if (failed > 0 || optional_failed) && std::env::var_os("FMO_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
