use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use ridgewalk::autodiff::game_hessian;
use ridgewalk::bifurcation::classify_game_point;
use ridgewalk::games::IPD_STATES;
use ridgewalk::grr::{find_starting_point, run_tree_search_with, GrrConfig};
use ridgewalk::lyapunov::{exponent_heatmap, top_directions, trace, TuneSettings};
use ridgewalk::optimizers::{lola, run, run_final, sim_sgd, RunGuards};
use ridgewalk::spectral::eig_general;
use ridgewalk::{Game, StepOperator};
use serde::Serialize;

use crate::config::{GameSpec, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{csv, num, write_all, Artifact};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    PhasePortrait,
    Heatmap,
    TuneStart,
    Grr,
    Spectrum,
    Classify,
    IpdTable,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::PhasePortrait,
        Command::Heatmap,
        Command::TuneStart,
        Command::Grr,
        Command::Spectrum,
        Command::Classify,
        Command::IpdTable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::PhasePortrait => "phase-portrait",
            Command::Heatmap => "heatmap",
            Command::TuneStart => "tune-start",
            Command::Grr => "grr",
            Command::Spectrum => "spectrum",
            Command::Classify => "classify",
            Command::IpdTable => "ipd-table",
        }
    }

    /// Computes the command's artifacts without touching the filesystem.
    pub fn artifacts(self, cfg: &RunConfig) -> CliResult<Vec<Artifact>> {
        let game = cfg.validate()?;
        match self {
            Command::PhasePortrait => phase_portrait(cfg, &game),
            Command::Heatmap => heatmap(cfg, &game),
            Command::TuneStart => tune_start(cfg, &game),
            Command::Grr => grr(cfg, &game),
            Command::Spectrum => spectrum(cfg, &game),
            Command::Classify => classify(cfg, &game),
            Command::IpdTable => ipd_table(cfg, &game),
        }
    }

    /// Computes and writes the artifacts under `cfg.output_dir`.
    pub fn run(self, cfg: &RunConfig) -> CliResult<Vec<std::path::PathBuf>> {
        let artifacts = self.artifacts(cfg)?;
        write_all(&cfg.output_dir, &artifacts)
    }
}

fn tune_operator(cfg: &RunConfig, game: &Game) -> CliResult<Box<dyn StepOperator>> {
    cfg.tune_optimizer.unwrap_or(cfg.optimizer).build(game)
}

fn require_two_params(game: &Game, what: &str) -> CliResult<()> {
    if game.dim() == 2 {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{what} needs a 2-parameter game, {} has {}",
            game.name(),
            game.dim()
        )))
    }
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

fn phase_portrait(cfg: &RunConfig, game: &Game) -> CliResult<Vec<Artifact>> {
    require_two_params(game, "phase-portrait")?;
    let grid = cfg.grid.ok_or_else(|| CliError::Config("phase-portrait needs a grid".into()))?;
    let space = game.param_space();
    let starts = grid
        .nodes()
        .iter()
        .map(|p| {
            let w: Vec<f64> = p.iter().map(|&x| space.from_strategy(x)).collect();
            if w.iter().all(|v| v.is_finite()) {
                Ok(w)
            } else {
                Err(CliError::Config(format!("grid node {p:?} has no parameter preimage")))
            }
        })
        .collect::<CliResult<Vec<_>>>()?;
    let ph = cfg.phase;
    let guards = RunGuards { divergence_bound: ph.divergence_bound };
    let sim = sim_sgd(game, ph.sim_sgd_alpha);
    let la = lola(game, ph.lola_alpha, ph.lola_eta);
    let ops: [(&str, &dyn StepOperator); 2] = [("sim_sgd", &sim), ("lola", &la)];
    let mut rows = Vec::new();
    for (label, op) in ops {
        let trajectories: Vec<_> = starts.par_iter().map(|w| run(op, w, ph.steps, guards)).collect();
        for (id, t) in trajectories.iter().enumerate() {
            for (step, w) in t.iterates.iter().enumerate() {
                let p = game.strategies(w);
                rows.push(format!("{label},{id},{step},{},{}", num(p[0]), num(p[1])));
            }
        }
    }
    Ok(vec![Artifact::new("phase_portrait.csv", csv("optimizer,traj_id,step,p1,p2", rows))])
}

fn heatmap(cfg: &RunConfig, game: &Game) -> CliResult<Vec<Artifact>> {
    let grid = cfg.grid.ok_or_else(|| CliError::Config("heatmap needs a grid".into()))?;
    let op = cfg.optimizer.build(game)?;
    let cells = exponent_heatmap(op.as_ref(), &grid, cfg.lyapunov.k, cfg.lyapunov.mode)?;
    let rows = cells
        .iter()
        .map(|c| format!("{},{},{},{}", num(c.point[0]), num(c.point[1]), num(c.exponent), c.diverged));
    Ok(vec![Artifact::new("heatmap.csv", csv("p1,p2,exponent,diverged", rows))])
}

#[derive(Serialize)]
struct StartReport<'a> {
    game: &'a str,
    params: Vec<f64>,
    strategies: Vec<f64>,
    objective: Option<f64>,
}

fn tune_start(cfg: &RunConfig, game: &Game) -> CliResult<Vec<Artifact>> {
    let op = tune_operator(cfg, game)?;
    let res = find_starting_point(game, op.as_ref(), &cfg.grr)?;
    let rows = res.history.iter().enumerate().map(|(i, v)| format!("{i},{}", num(*v)));
    let report = StartReport {
        game: game.name(),
        strategies: game.strategies(&res.w_star),
        objective: res.history.last().copied(),
        params: res.w_star,
    };
    Ok(vec![
        Artifact::new("tune_history.csv", csv("iter,objective", rows)),
        Artifact::new("start.json", json(&report)),
    ])
}

/// Column names for the strategy block of a solutions table.
pub fn strategy_columns(game: &Game) -> Vec<String> {
    let player = |prefix: &str, n: usize| -> Vec<String> {
        if game.name() == "ipd" && n == 5 {
            std::iter::once(format!("{prefix}_p_c0"))
                .chain(IPD_STATES.iter().map(|s| format!("{prefix}_p_c_{}", s.to_lowercase())))
                .collect()
        } else {
            (0..n).map(|i| format!("{prefix}_{i}")).collect()
        }
    };
    let mut cols = player("a", game.dim_a());
    cols.extend(player("b", game.dim_b()));
    cols
}

fn grr(cfg: &RunConfig, game: &Game) -> CliResult<Vec<Artifact>> {
    let tune_op = tune_operator(cfg, game)?;
    let op = cfg.optimizer.build(game)?;
    let (solutions, tree) = run_tree_search_with(game, tune_op.as_ref(), op.as_ref(), &cfg.grr)?;
    let header = format!(
        "solution,node,depth,{},loss_a,loss_b,grad_norm",
        strategy_columns(game).join(",")
    );
    let rows = solutions.iter().enumerate().map(|(i, s)| {
        let mut fields = vec![i.to_string(), s.node.to_string(), tree.nodes[s.node].depth.to_string()];
        fields.extend(s.strategies.iter().map(|p| num(*p)));
        fields.extend([num(s.losses[0]), num(s.losses[1]), num(s.grad_norm)]);
        fields.join(",")
    });
    let mut tree_json = tree.to_json();
    tree_json.push('\n');
    Ok(vec![
        Artifact::new("tree.json", tree_json),
        Artifact::new("solutions.csv", csv(&header, rows)),
    ])
}

fn spectrum(cfg: &RunConfig, game: &Game) -> CliResult<Vec<Artifact>> {
    let point = cfg.point.as_ref().ok_or_else(|| CliError::Config("spectrum needs a point".into()))?;
    let op = cfg.optimizer.build(game)?;
    let h = eig_general(&game_hessian(game, point)?)?;
    let j = eig_general(&op.jacobian(point)?)?;
    let rows = [("hessian", &h), ("jacobian", &j)].into_iter().flat_map(|(label, s)| {
        s.eigenvalues
            .iter()
            .map(move |z| format!("{label},{},{}", num(z.re), num(z.im)))
            .collect::<Vec<_>>()
    });
    Ok(vec![Artifact::new("spectrum.csv", csv("matrix,re,im", rows))])
}

#[derive(Serialize)]
struct ClassifyOutput<'a> {
    point: &'a [f64],
    axis: &'a [f64],
    report: ridgewalk::bifurcation::GamePointReport,
}

fn classify(cfg: &RunConfig, game: &Game) -> CliResult<Vec<Artifact>> {
    let op = cfg.optimizer.build(game)?;
    let point = match &cfg.point {
        Some(p) => p.clone(),
        None => find_starting_point(game, tune_operator(cfg, game)?.as_ref(), &cfg.grr)?.w_star,
    };
    let axis = match &cfg.axis {
        Some(a) => a.clone(),
        None => {
            let tr = trace(op.as_ref(), &point, cfg.lyapunov.k, RunGuards::default());
            if tr.diverged {
                return Err(CliError::Numeric("trajectory diverged while choosing the classification axis".into()));
            }
            top_directions(&tr, 1)?.remove(0).1
        }
    };
    let report = classify_game_point(game, op.as_ref(), &point, &axis, &cfg.classify)?;
    Ok(vec![Artifact::new("classify.json", json(&ClassifyOutput { point: &point, axis: &axis, report }))])
}

/// One row of the IPD diversity table.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub method: &'static str,
    pub strategies: Vec<f64>,
    pub losses: [f64; 2],
}

/// Baseline runs from random initializations plus tuned and untuned tree
/// searches.
pub fn ipd_table_rows(cfg: &RunConfig, game: &Game) -> CliResult<Vec<TableRow>> {
    if !matches!(cfg.game, GameSpec::Ipd { .. }) {
        return Err(CliError::Config("ipd-table needs the ipd game".into()));
    }
    let t = cfg.ipd_table;
    let sim = sim_sgd(game, t.sim_sgd_alpha);
    let lo = lola(game, t.lola_alpha, t.lola_eta);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.grr.seed);
    let inits: Vec<Vec<f64>> = (0..t.baseline_inits).map(|_| game.sample_init(&mut rng)).collect();
    let finals: Vec<Vec<f64>> = inits
        .par_iter()
        .map(|w| run_final(&sim, w, t.baseline_steps, RunGuards::default()).0)
        .collect();
    let mut rows: Vec<TableRow> = finals
        .iter()
        .map(|w| TableRow { method: "baseline_sim_sgd", strategies: game.strategies(w), losses: game.losses(w) })
        .collect();

    let untuned = GrrConfig { tune: TuneSettings { steps: 0, ..cfg.grr.tune }, ..cfg.grr.clone() };
    let searches: [(&'static str, &dyn StepOperator, &GrrConfig); 3] = [
        ("grr_sim_sgd", &sim, &cfg.grr),
        ("grr_lola", &lo, &cfg.grr),
        ("grr_untuned_sim_sgd", &sim, &untuned),
    ];
    for (method, op, grr_cfg) in searches {
        let (solutions, _) = run_tree_search_with(game, &sim, op, grr_cfg)?;
        rows.extend(solutions.into_iter().map(|s| TableRow { method, strategies: s.strategies, losses: s.losses }));
    }
    Ok(rows)
}

fn ipd_table(cfg: &RunConfig, game: &Game) -> CliResult<Vec<Artifact>> {
    let rows = ipd_table_rows(cfg, game)?;
    let header = format!("method,index,{},loss_a,loss_b", strategy_columns(game)[..5].join(","));
    let mut index = 0;
    let mut last = "";
    let table = rows.iter().map(|r| {
        if r.method != last {
            index = 0;
            last = r.method;
        }
        let mut fields = vec![r.method.to_string(), index.to_string()];
        fields.extend(r.strategies[..5].iter().map(|p| num(*p)));
        fields.extend([num(r.losses[0]), num(r.losses[1])]);
        index += 1;
        fields.join(",")
    });
    let table = csv(&header, table.collect::<Vec<_>>());

    let mut methods: Vec<&str> = Vec::new();
    for r in &rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let summary = methods.iter().map(|m| {
        let l: Vec<f64> = rows.iter().filter(|r| r.method == *m).map(|r| r.losses[0]).collect();
        let lo = l.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        format!("{m},{},{},{}", l.len(), num(lo), num(hi))
    });
    Ok(vec![
        Artifact::new("ipd_table.csv", table),
        Artifact::new("ipd_summary.csv", csv("method,count,min_loss_a,max_loss_a", summary)),
    ])
}
