use std::path::Path;
use std::process::Command as Process;

use ridgewalk::games::mixed_game;
use ridgewalk::lyapunov::{max_k_step_exponent, Grid2D};
use ridgewalk::optimizers::{lola, run_final, RunGuards};
use ridgewalk_cli::{Command, RunConfig};

fn config(body: &str, dir: &Path) -> RunConfig {
    let text = format!(r#"{{ {body}, "output_dir": {:?} }}"#, dir.to_str().unwrap());
    RunConfig::from_json(&text).unwrap()
}

fn artifact(cmd: Command, cfg: &RunConfig, name: &str) -> String {
    cmd.artifacts(cfg).unwrap().into_iter().find(|a| a.name == name).unwrap().contents
}

fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn spectrum_examples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        r#""game": {"name": "matching_pennies", "space": "raw"}, "optimizer": {"name": "sim_sgd", "alpha": 0.1}, "point": [0.5, 0.5]"#,
        dir.path(),
    );
    let text = artifact(Command::Spectrum, &cfg, "spectrum.csv");
    assert!(text.starts_with("matrix,re,im\n"));
    let r = rows(&text);
    assert_eq!(r.len(), 4);
    for row in &r {
        let (re, im): (f64, f64) = (row[1].parse().unwrap(), row[2].parse().unwrap());
        match row[0].as_str() {
            "hessian" => assert!(re.abs() < 1e-12 && (im.abs() - 4.0).abs() < 1e-12),
            "jacobian" => assert!((re - 1.0).abs() < 1e-12 && (im.abs() - 0.4).abs() < 1e-12),
            other => panic!("unexpected matrix {other}"),
        }
    }

    let cfg = config(r#""game": {"name": "quadratic_bowl", "curvatures": [3, -1, 2], "split": 1}, "point": [0.1, 0.2, 0.3]"#, dir.path());
    let r = rows(&artifact(Command::Spectrum, &cfg, "spectrum.csv"));
    assert!(r.iter().filter(|x| x[0] == "hessian").all(|x| x[2].parse::<f64>().unwrap() == 0.0));
}

#[test]
fn phase_portrait_on_matching_pennies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        r#""game": {"name": "matching_pennies", "space": "raw"}, "grid": {"lo": [0.2, 0.2], "hi": [0.8, 0.8], "resolution": [5, 5]}"#,
        dir.path(),
    );
    let text = artifact(Command::PhasePortrait, &cfg, "phase_portrait.csv");
    assert!(text.starts_with("optimizer,traj_id,step,p1,p2\n"));
    let r = rows(&text);
    let dist = |row: &Vec<String>| {
        let p1: f64 = row[3].parse().unwrap();
        let p2: f64 = row[4].parse().unwrap();
        ((p1 - 0.5).powi(2) + (p2 - 0.5).powi(2)).sqrt()
    };
    let traj = |opt: &str, id: usize| -> Vec<&Vec<String>> {
        r.iter().filter(|x| x[0] == opt && x[1] == id.to_string()).collect()
    };
    let mut lola_close = 0;
    for id in 0..25 {
        let s = traj("sim_sgd", id);
        let (first, last) = (dist(s[0]), dist(s[s.len() - 1]));
        if first > 0.0 {
            assert!(last > first, "sim_sgd trajectory {id}");
        }
        let l = traj("lola", id);
        if dist(l[l.len() - 1]) < 0.05 {
            lola_close += 1;
        }
    }
    assert!(lola_close >= 23);

    let empty = config(
        r#""game": {"name": "matching_pennies"}, "grid": {"lo": [0.2, 0.2], "hi": [0.8, 0.8], "resolution": [0, 3]}"#,
        dir.path(),
    );
    assert_eq!(artifact(Command::PhasePortrait, &empty, "phase_portrait.csv"), "optimizer,traj_id,step,p1,p2\n");

    // logit games have no preimage for probabilities 0 and 1
    let edge = config(r#""game": {"name": "matching_pennies"}, "grid": {"lo": [0, 0], "hi": [1, 1], "resolution": [2, 2]}"#, dir.path());
    assert_eq!(Command::PhasePortrait.artifacts(&edge).unwrap_err().exit_code(), 2);
}

#[test]
fn heatmap_delegates_to_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        r#""game": {"name": "mixed_game"}, "optimizer": {"name": "lola", "alpha": 0.5, "eta": 1.0}, "lyapunov": {"k": 10}, "grid": {"lo": [0.3, -0.7], "hi": [0.3, -0.7], "resolution": [1, 1]}"#,
        dir.path(),
    );
    let text = artifact(Command::Heatmap, &cfg, "heatmap.csv");
    let r = rows(&text);
    assert!(text.starts_with("p1,p2,exponent,diverged\n"));
    assert_eq!(r.len(), 1);
    let game = mixed_game(0.25).unwrap();
    let direct = max_k_step_exponent(&lola(&game, 0.5, 1.0), &[0.3, -0.7], 10).exponent;
    assert_eq!(r[0][2].parse::<f64>().unwrap().to_bits(), direct.to_bits());
    assert_eq!(r[0][3], "false");
}

#[test]
fn mixed_game_heatmap_ridge_borders_the_basins() {
    let dir = tempfile::tempdir().unwrap();
    let n = 13;
    let cfg = config(
        &format!(
            r#""game": {{"name": "mixed_game"}}, "optimizer": {{"name": "lola", "alpha": 0.5, "eta": 1.0}}, "lyapunov": {{"k": 10}}, "grid": {{"lo": [-3, -3], "hi": [3, 3], "resolution": [{n}, {n}]}}"#
        ),
        dir.path(),
    );
    let r = rows(&artifact(Command::Heatmap, &cfg, "heatmap.csv"));
    let exps: Vec<f64> = r.iter().map(|x| x[2].parse().unwrap()).collect();

    // basin labels from direct rollouts on the same grid
    let game = mixed_game(0.25).unwrap();
    let op = lola(&game, 0.5, 1.0);
    let grid = Grid2D { lo: [-3.0, -3.0], hi: [3.0, 3.0], resolution: [n, n] };
    let labels: Vec<bool> = grid
        .nodes()
        .iter()
        .map(|p| {
            let (w, _) = run_final(&op, p, 2000, RunGuards::default());
            game.strategies(&w).iter().all(|x| *x > 0.9)
        })
        .collect();
    let at = |i: usize, j: usize| i * n + j;
    let on_boundary = |i: usize, j: usize| {
        let (lo_i, hi_i, lo_j, hi_j) = (i.saturating_sub(1), (i + 1).min(n - 1), j.saturating_sub(1), (j + 1).min(n - 1));
        (lo_i..=hi_i).any(|a| (lo_j..=hi_j).any(|b| labels[at(a, b)] != labels[at(i, j)]))
    };
    let (mut edge, mut inner) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in 0..n {
            if on_boundary(i, j) { edge.push(exps[at(i, j)]) } else { inner.push(exps[at(i, j)]) }
        }
    }
    assert!(!edge.is_empty() && !inner.is_empty());
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&edge) > mean(&inner), "edge {} inner {}", mean(&edge), mean(&inner));
    let best = (0..n * n).max_by(|a, b| exps[*a].total_cmp(&exps[*b])).unwrap();
    assert!(on_boundary(best / n, best % n));
}

#[test]
fn tune_start_and_classify_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        r#""game": {"name": "double_well"}, "grr": {"init": [0.01, 0.2], "tune": {"steps": 20, "lr": 0.1}}"#,
        dir.path(),
    );
    let arts = Command::TuneStart.artifacts(&cfg).unwrap();
    let hist = rows(&arts[0].contents);
    assert_eq!(hist.len(), 21);
    assert_eq!(hist[0][0], "0");
    let start: serde_json::Value = serde_json::from_str(&arts[1].contents).unwrap();
    assert_eq!(start["params"].as_array().unwrap().len(), 2);

    let cfg = config(r#""game": {"name": "small_ipd"}, "optimizer": {"name": "sim_sgd", "alpha": 1.0}, "point": [0.4, -0.2]"#, dir.path());
    let out: serde_json::Value = serde_json::from_str(&artifact(Command::Classify, &cfg, "classify.json")).unwrap();
    assert!(out["report"]["verdict"]["kind"].is_string());
    let axis: Vec<f64> = serde_json::from_value(out["axis"].clone()).unwrap();
    assert!((axis.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn grr_artifacts_and_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        r#""game": {"name": "double_well"}, "grr": {"init": [0.0, 0.3], "tune": {"steps": 0}}"#,
        dir.path(),
    );
    let paths = Command::Grr.run(&cfg).unwrap();
    assert_eq!(paths.len(), 2);
    let first: Vec<Vec<u8>> = paths.iter().map(|p| std::fs::read(p).unwrap()).collect();
    let again: Vec<Vec<u8>> = Command::Grr.run(&cfg).unwrap().iter().map(|p| std::fs::read(p).unwrap()).collect();
    assert_eq!(first, again);
    let sols = String::from_utf8(first[1].clone()).unwrap();
    assert!(sols.starts_with("solution,node,depth,a_0,b_0,loss_a,loss_b,grad_norm\n"));
    assert_eq!(rows(&sols).len(), 2);
    let tree: serde_json::Value = serde_json::from_slice(&first[0]).unwrap();
    assert_eq!(tree["nodes"][0]["parent"], serde_json::Value::Null);
    let mut names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names, vec!["solutions.csv", "tree.json"]);
}

#[test]
fn ipd_table_requires_the_ipd() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(r#""game": {"name": "small_ipd"}"#, dir.path());
    assert_eq!(Command::IpdTable.artifacts(&cfg).unwrap_err().exit_code(), 2);
}

fn binary(args: &[&str], threads: Option<&str>) -> std::process::Output {
    let mut p = Process::new(env!("CARGO_BIN_EXE_ridgewalk"));
    p.args(args);
    match threads {
        Some(t) => p.env("RIDGEWALK_THREADS", t),
        None => p.env_remove("RIDGEWALK_THREADS"),
    };
    p.output().unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p.to_str().unwrap().to_string()
    };
    let out_dir = dir.path().join("out");
    let good = write(
        "good.json",
        &format!(
            r#"{{"game": {{"name": "matching_pennies", "space": "raw"}}, "point": [0.5, 0.5], "output_dir": {:?}}}"#,
            out_dir.to_str().unwrap()
        ),
    );
    let o = binary(&["spectrum", "--config", &good], Some("2"));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out_dir.join("spectrum.csv").exists());

    let unknown = write("unknown.json", r#"{"game": {"name": "ipd"}, "output_dir": "x", "colour": 1}"#);
    let o = binary(&["grr", "--config", &unknown], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));

    let no_point = write("nopoint.json", r#"{"game": {"name": "ipd"}, "output_dir": "x"}"#);
    assert_eq!(binary(&["spectrum", "--config", &no_point], None).status.code(), Some(2));
    assert_eq!(binary(&["spectrum", "--config", &good], Some("0")).status.code(), Some(2));
    assert_eq!(binary(&["spectrum", "--config", "/nonexistent/cfg.json"], None).status.code(), Some(4));

    // output path blocked by a regular file
    let blocker = write("blocker", "");
    let o = binary(&["spectrum", "--config", &good, "--output-dir", &format!("{blocker}/sub")], None);
    assert_eq!(o.status.code(), Some(4));
}
