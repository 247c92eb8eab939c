//! Acceptance suite: one PASS/FAIL line per criterion.

use std::path::Path;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ridgewalk::autodiff::{fd_gradient, fd_jacobian, game_hessian, joint_gradient, loss_gradients};
use ridgewalk::bifurcation::{classify_1d, classify_hopf_2d, BifurcationKind, Criticality};
use ridgewalk::games::{logistic_map, Game};
use ridgewalk::lyapunov::{k_step_exponent, max_k_step_exponent, DirectionStrategy};
use ridgewalk::optimizers::{lola, sim_sgd, MapOperator};
use ridgewalk::spectral::{eig_general, eig_symmetric};
use ridgewalk::{Matrix, StepOperator};
use ridgewalk_cli::config::GameSpec;
use ridgewalk_cli::{Command, RunConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn config(body: &str, dir: &Path) -> RunConfig {
    let text = format!(r#"{{ {body}, "output_dir": {:?} }}"#, dir.to_str().unwrap());
    RunConfig::from_json(&text).expect("acceptance config parses")
}

fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("").split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("missing column {name}"))
}

fn artifact(cmd: Command, cfg: &RunConfig, name: &str) -> Result<String, String> {
    let arts = cmd.artifacts(cfg).map_err(|e| format!("{} failed: {e}", cmd.name()))?;
    arts.into_iter()
        .find(|a| a.name == name)
        .map(|a| a.contents)
        .ok_or_else(|| format!("{} produced no {name}", cmd.name()))
}

fn range(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

const IPD_RUN: &str = r#""game": {"name": "ipd"},
    "grr": {"tune": {"k": 0, "objective": "max", "steps": 300, "lr": 3.0},
            "seed": 0, "n_directions": 10, "max_depth": 3, "jump_scale": 3.0,
            "opt_steps": 3000, "tol_grad": 0.01},
    "ipd_table": {"baseline_inits": 20, "baseline_steps": 2000, "sim_sgd_alpha": 1.0, "lola_alpha": 1.0, "lola_eta": 10.0}"#;

const MIXED_RUN: &str = r#""game": {"name": "mixed_game", "tau": 0.25},
    "optimizer": {"name": "lola", "alpha": 0.5, "eta": 1.0},
    "grr": {"tune": {"k": 10, "objective": "max", "steps": 100, "lr": 1.0},
            "seed": 0, "n_directions": 2, "jump_scale": 10.0, "opt_steps": 3000, "tol_grad": 0.01}"#;

const MP_RUN: &str = r#""game": {"name": "matching_pennies", "space": "raw"},
    "grid": {"lo": [0.2, 0.2], "hi": [0.8, 0.8], "resolution": [5, 5]},
    "phase": {"steps": 2000, "sim_sgd_alpha": 0.1, "lola_alpha": 0.1, "lola_eta": 0.5}"#;

fn criterion_1(dir: &Path) -> Outcome {
    let start = Instant::now();
    let cfg = config(IPD_RUN, dir);
    let (header, rows) = csv_rows(&artifact(Command::IpdTable, &cfg, "ipd_table.csv")?);
    let (m, l) = (column(&header, "method"), column(&header, "loss_a"));
    let losses = |method: &str| -> Vec<f64> {
        rows.iter().filter(|r| r[m] == method).map(|r| r[l].parse().unwrap()).collect()
    };
    let sim = losses("grr_sim_sgd");
    let lo = losses("grr_lola");
    let base = losses("baseline_sim_sgd");
    let ctrl = losses("grr_untuned_sim_sgd");
    let spans = |v: &[f64]| !v.is_empty() && range(v).0 <= 1.1 && range(v).1 >= 1.9;
    let single_mode = !ctrl.is_empty() && range(&ctrl).1 - range(&ctrl).0 <= 0.1;
    let baseline_ok = base.len() == 20 && base.iter().all(|x| (1.9..=2.1).contains(x));
    let elapsed = start.elapsed();
    check(
        spans(&sim) && spans(&lo) && baseline_ok && single_mode && elapsed < Duration::from_secs(300),
        format!(
            "grr sim_sgd {:?} ({}), grr lola {:?} ({}), baseline {:?} ({}), untuned {:?} ({}), {:.1}s",
            range(&sim),
            sim.len(),
            range(&lo),
            lo.len(),
            range(&base),
            base.len(),
            range(&ctrl),
            ctrl.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2(dir: &Path) -> Outcome {
    let start = Instant::now();
    let cfg = config(MP_RUN, dir);
    let (_, rows) = csv_rows(&artifact(Command::PhasePortrait, &cfg, "phase_portrait.csv")?);
    let dist = |r: &Vec<String>| {
        let p1: f64 = r[3].parse().unwrap();
        let p2: f64 = r[4].parse().unwrap();
        (p1 - 0.5).hypot(p2 - 0.5)
    };
    let mut monotone = 0;
    let mut converged = 0;
    for id in 0..25 {
        let id = id.to_string();
        let sim: Vec<f64> = rows.iter().filter(|r| r[0] == "sim_sgd" && r[1] == id).map(dist).collect();
        if sim.windows(51).all(|w| w[50] >= w[0]) && sim.len() > 50 {
            monotone += 1;
        }
        let la: Vec<f64> = rows.iter().filter(|r| r[0] == "lola" && r[1] == id).map(dist).collect();
        if la.last().is_some_and(|d| *d <= 1e-2) {
            converged += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        monotone == 25 && converged >= 23 && elapsed < Duration::from_secs(10),
        format!(
            "sim_sgd non-decreasing over 50-step windows in {monotone}/25, lola within 1e-2 of centre in {converged}/25, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_3(dir: &Path) -> Outcome {
    let start = Instant::now();
    let cfg = config(MIXED_RUN, dir);
    let (header, rows) = csv_rows(&artifact(Command::Grr, &cfg, "solutions.csv")?);
    let (a, b) = (column(&header, "a_0"), column(&header, "b_0"));
    let sols: Vec<(f64, f64)> = rows.iter().map(|r| (r[a].parse().unwrap(), r[b].parse().unwrap())).collect();
    let centre = sols.iter().any(|(p, q)| (p - 0.5).hypot(q - 0.5) <= 0.05);
    let corner = sols.iter().any(|(p, q)| *p >= 0.95 && *q >= 0.95);
    let elapsed = start.elapsed();
    check(
        sols.len() >= 2 && centre && corner && elapsed < Duration::from_secs(60),
        format!("solutions {sols:?}, centre found {centre}, cooperate corner found {corner}, {:.1}s", elapsed.as_secs_f64()),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let a = Matrix::from_fn(3, 3, |_, _| rng.gen_range(-0.6..0.6));
        let sigma_sq = eig_symmetric(&a.gram()).unwrap().eigenvalues[0].re;
        let op = MapOperator::linear(a);
        let w0 = [0.3, -0.2, 0.1];
        for k in [0usize, 5, 50] {
            let mut values = vec![max_k_step_exponent(&op, &w0, k).exponent];
            for strat in [DirectionStrategy::EighEvery, DirectionStrategy::PowerIterEvery { iters: 2000 }] {
                values.push(k_step_exponent(&op, &w0, k, strat).exponent);
            }
            for v in values {
                worst = worst.max((v - sigma_sq.ln()).abs());
            }
        }
    }
    let x0 = 0.1234;
    let k = 20000;
    let e = k_step_exponent(&logistic_map(4.0), &[x0], k, DirectionStrategy::Propagate).exponent;
    let mut x: f64 = x0;
    let mut acc = 0.0;
    for _ in 0..=k {
        acc += (4.0 * (1.0 - 2.0 * x)).powi(2).ln();
        x = 4.0 * x * (1.0 - x);
    }
    let oracle = acc / (k + 1) as f64;
    let target = 2.0 * 2f64.ln();
    check(
        worst < 1e-9 && (e - oracle).abs() < 1e-9 && (e - target).abs() < 0.05 && (oracle - target).abs() < 0.05,
        format!("linear worst error {worst:.2e}; logistic exponent {e:.5}, orbit oracle {oracle:.5}, 2 ln 2 = {target:.5}"),
    )
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    diff / b.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-3)
}

fn registered_games() -> Vec<(String, Game)> {
    let specs = [
        r#"{"name": "matching_pennies"}"#,
        r#"{"name": "matching_pennies", "space": "raw"}"#,
        r#"{"name": "ipd"}"#,
        r#"{"name": "small_ipd"}"#,
        r#"{"name": "mixed_game"}"#,
        r#"{"name": "random_subspace", "base": {"name": "ipd"}, "seed": 3}"#,
        r#"{"name": "quadratic_bowl", "curvatures": [2.0, -1.0, 0.5], "split": 1}"#,
        r#"{"name": "double_well"}"#,
        r#"{"name": "bilinear", "m": [[1.0, -2.0], [0.5, 3.0]]}"#,
    ];
    specs
        .iter()
        .map(|s| {
            let spec: GameSpec = serde_json::from_str(s).unwrap();
            (s.to_string(), spec.build().unwrap())
        })
        .collect()
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = [0.0f64; 3];
    let mut points = 0;
    for (_, game) in registered_games() {
        let ops: Vec<Box<dyn StepOperator>> = vec![Box::new(sim_sgd(&game, 0.1)), Box::new(lola(&game, 0.1, 0.5))];
        for _ in 0..50 {
            let w: Vec<f64> = (0..game.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let grads = loss_gradients(&game, &w).unwrap();
            for (p, g) in grads.iter().enumerate() {
                let fd = fd_gradient(|x| game.losses(x)[p], &w, 1e-5);
                worst[0] = worst[0].max(rel_err(g, &fd));
            }
            let h = game_hessian(&game, &w).unwrap();
            let fd = fd_jacobian(|x| joint_gradient(&game, x).unwrap(), &w, 1e-5);
            worst[1] = worst[1].max(rel_err(h.as_slice(), fd.as_slice()));
            for op in &ops {
                let j = op.jacobian(&w).unwrap();
                let fd = fd_jacobian(|x| op.step(x), &w, 1e-5);
                worst[2] = worst[2].max(rel_err(j.as_slice(), fd.as_slice()));
            }
            points += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        worst.iter().all(|e| *e < 1e-4) && elapsed < Duration::from_secs(30),
        format!(
            "{points} points over {} games; worst relative error gradient {:.1e}, hessian {:.1e}, operator jacobian {:.1e}; {:.1}s",
            registered_games().len(),
            worst[0],
            worst[1],
            worst[2],
            elapsed.as_secs_f64()
        ),
    )
}

/// det(λI - A) coefficients by Faddeev-LeVerrier.
fn char_poly(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let mut c = vec![1.0; n + 1];
    let mut m = Matrix::zeros(n, n);
    for k in 1..=n {
        m = a.matmul(&m).add(&Matrix::identity(n).scale(c[k - 1]));
        c[k] = -a.matmul(&m).trace() / k as f64;
    }
    c
}

/// Durand-Kerner iteration followed by a few Newton polishing steps.
fn poly_roots(c: &[f64]) -> Vec<Complex64> {
    let n = c.len() - 1;
    let eval = |z: Complex64| c.iter().fold(Complex64::new(0.0, 0.0), |acc, &ci| acc * z + ci);
    let radius = 1.0 + c[1..].iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut roots: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(0.5 * radius, 0.4 + std::f64::consts::TAU * k as f64 / n as f64))
        .collect();
    for _ in 0..2000 {
        let mut change: f64 = 0.0;
        for i in 0..n {
            let den = (0..n).filter(|&j| j != i).fold(Complex64::new(1.0, 0.0), |d, j| d * (roots[i] - roots[j]));
            let step = eval(roots[i]) / den;
            roots[i] -= step;
            change = change.max(step.norm());
        }
        if change < 1e-15 {
            break;
        }
    }
    let dc: Vec<f64> = c[..n].iter().enumerate().map(|(i, &ci)| ci * (n - i) as f64).collect();
    let eval_d = |z: Complex64| dc.iter().fold(Complex64::new(0.0, 0.0), |acc, &ci| acc * z + ci);
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let d = eval_d(*r);
            if d.norm() > 1e-12 {
                let step = eval(*r) / d;
                *r -= step;
            }
        }
    }
    roots
}

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for c in &cols {
            let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
        }
        let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if s > 1e-3 {
            cols.push(v.into_iter().map(|x| x / s).collect());
        }
    }
    Matrix::from_columns(&cols)
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut general_worst: f64 = 0.0;
    for _ in 0..200 {
        let a = Matrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
        let eig = match eig_general(&a) {
            Ok(s) => s.eigenvalues,
            Err(e) => return Err(format!("eigensolver failed: {e}")),
        };
        let mut roots = poly_roots(&char_poly(&a));
        for z in &eig {
            let (idx, d) = roots
                .iter()
                .enumerate()
                .map(|(i, r)| (i, (r - z).norm()))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .unwrap();
            general_worst = general_worst.max(d);
            roots.remove(idx);
        }
    }
    let mut sym_worst: f64 = 0.0;
    for i in 0..200 {
        let n = 2 + i % 7;
        let q = random_orthogonal(&mut rng, n);
        let mut spectrum: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let a = q.matmul(&Matrix::diag(&spectrum)).matmul(&q.transpose());
        let a = a.add(&a.transpose()).scale(0.5);
        let s = eig_symmetric(&a).map_err(|e| e.to_string())?;
        spectrum.sort_by(|x, y| y.total_cmp(x));
        for (got, want) in s.real_parts().iter().zip(&spectrum) {
            sym_worst = sym_worst.max((got - want).abs());
        }
    }
    check(
        general_worst < 1e-6 && sym_worst < 1e-9,
        format!("general 4x4 worst root distance {general_worst:.1e} (200 matrices); symmetric worst eigenvalue error {sym_worst:.1e} (200 matrices)"),
    )
}

fn criterion_7() -> Outcome {
    let tol = 1e-6;
    let close = |a: f64, b: f64| (a - 1.0).abs() <= 1e-3 && (b + 1.0).abs() <= 1e-3;
    let sn = classify_1d(&|u, mu| mu - u * u, tol);
    let pf = classify_1d(&|u: f64, mu: f64| mu * u - u.powi(3), tol);
    let hopf_field = |x: [f64; 2], mu: f64| {
        let r2 = x[0] * x[0] + x[1] * x[1];
        [mu * x[0] - x[1] - r2 * x[0], x[0] + mu * x[1] - r2 * x[1]]
    };
    let hopf = classify_hopf_2d(&hopf_field, 1e-3);
    let sn_ok = sn.kind == BifurcationKind::SaddleNode && close(sn.a, sn.b) && sn.side == Some(1);
    let pf_ok = pf.kind == BifurcationKind::Pitchfork && close(pf.a, pf.b) && pf.criticality == Criticality::Super && pf.side == Some(1);
    let hopf_ok = hopf.kind == BifurcationKind::Hopf && close(hopf.a, hopf.b) && hopf.criticality == Criticality::Super;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut preserved = 0;
    for _ in 0..20 {
        let (c3, c2m, cm2) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
        let f = move |u: f64, mu: f64| mu - u * u + c3 * u.powi(3) + c2m * u * u * mu + cm2 * mu * mu;
        let v = classify_1d(&f, tol);
        if v.kind == BifurcationKind::SaddleNode && v.side == Some(1) {
            preserved += 1;
        }
    }
    check(
        sn_ok && pf_ok && hopf_ok && preserved == 20,
        format!(
            "saddle-node {:?} a={:.6} b={:.6} side {:?}; pitchfork {:?} {:?} a={:.6} b={:.6}; hopf {:?} {:?} a={:.6} b={:.6}; perturbed saddle-nodes preserved {preserved}/20",
            sn.kind, sn.a, sn.b, sn.side, pf.kind, pf.criticality, pf.a, pf.b, hopf.kind, hopf.criticality, hopf.a, hopf.b
        ),
    )
}

fn criterion_8(dir: &Path) -> Outcome {
    let runs: [(Command, String); 7] = [
        (Command::PhasePortrait, MP_RUN.to_string()),
        (
            Command::Heatmap,
            r#""game": {"name": "mixed_game"}, "optimizer": {"name": "lola", "alpha": 0.5, "eta": 1.0}, "grid": {"lo": [-2, -2], "hi": [2, 2], "resolution": [6, 6]}"#.into(),
        ),
        (Command::TuneStart, MIXED_RUN.to_string()),
        (Command::Grr, MIXED_RUN.to_string()),
        (Command::Spectrum, r#""game": {"name": "ipd"}, "point": [0.1, -0.3, 0.2, 0.5, -1, 0.4, 0.2, -0.1, 0.3, 0.9]"#.into()),
        (Command::Classify, MIXED_RUN.to_string()),
        (Command::IpdTable, IPD_RUN.to_string()),
    ];
    let mut compared = 0;
    for (cmd, body) in runs {
        let a = dir.join(format!("{}-a", cmd.name()));
        let b = dir.join(format!("{}-b", cmd.name()));
        let pa = cmd.run(&config(&body, &a)).map_err(|e| format!("{}: {e}", cmd.name()))?;
        let pb = cmd.run(&config(&body, &b)).map_err(|e| format!("{}: {e}", cmd.name()))?;
        for (x, y) in pa.iter().zip(&pb) {
            let (bx, by) = (std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
            if bx != by {
                return Err(format!("{} differs between runs", x.file_name().unwrap().to_string_lossy()));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} artifacts from 7 subcommands identical across repeated runs"))
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: [(&str, Box<dyn Fn() -> Outcome>); 8] = [
        ("IPD loss diversity", Box::new(|| criterion_1(&dir.path().join("c1")))),
        ("matching pennies optimizer dichotomy", Box::new(|| criterion_2(&dir.path().join("c2")))),
        ("mixed game bifurcation pipeline", Box::new(|| criterion_3(&dir.path().join("c3")))),
        ("exponent oracles", Box::new(criterion_4)),
        ("derivative correctness", Box::new(criterion_5)),
        ("eigensolver correctness", Box::new(criterion_6)),
        ("normal-form classification", Box::new(criterion_7)),
        ("determinism", Box::new(|| criterion_8(&dir.path().join("c8")))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(detail) => println!("criterion {} ({name}): PASS: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
