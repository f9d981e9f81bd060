//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::process::{Command, ExitCode};
use std::time::Instant;

use cgcf::dataio;
use cgcf_core::autodiff::{gradient_check, Activation, AutodiffError, GradCheckReport};
use cgcf_core::encoders::{self, Mode, ModelVars};
use cgcf_core::eval::{self, EvalData, Scoring};
use cgcf_core::losses::{self, dcl_clamp, dcl_negative_score, ClampFloor, LossConfig, MainLoss};
use cgcf_core::rng::{self, SplitMix64};
use cgcf_core::synthetic::{self, BlockConfig};
use cgcf_core::train::{FitResult, Trainer};
use cgcf_core::{
    BipartiteGraph, Combination, EncoderConfig, EncoderError, Model, Tape, Tensor, TrainConfig, Var,
};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const TAU_GRID: [f64; 6] = [0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn seeded(seed: u64) -> SplitMix64 {
    rng::seeded(seed, &[0xacce])
}

fn uniform(r: &mut SplitMix64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng::unit_f64(r)
}

fn random_tensor(r: &mut SplitMix64, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| uniform(r, -1.0, 1.0))
}

/// Every user and item gets at least one edge.
fn random_graph(r: &mut SplitMix64, users: usize, items: usize, density: f64) -> BipartiteGraph {
    let mut edges = Vec::new();
    for u in 0..users {
        for i in 0..items {
            if rng::unit_f64(r) < density {
                edges.push((u, i));
            }
        }
    }
    for u in 0..users {
        edges.push((u, rng::index(r, items)));
    }
    for i in 0..items {
        edges.push((rng::index(r, users), i));
    }
    edges.sort_unstable();
    edges.dedup();
    BipartiteGraph::from_edges(users, items, &edges)
}

// ---- gradients ----

const H: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;
const GRAD_INSTANCES: u64 = 20;

fn enc(e: EncoderError) -> AutodiffError {
    match e {
        EncoderError::Autodiff(a) => a,
        other => panic!("{other}"),
    }
}

fn random_loss_config(r: &mut SplitMix64) -> LossConfig {
    LossConfig {
        t1: uniform(r, 0.3, 1.5),
        t2: uniform(r, 0.1, 1.0),
        tau_plus: [0.0, 1e-3, 1e-2, 0.1][rng::index(r, 4)],
        beta: uniform(r, 0.0, 1.0),
        lambda: uniform(r, 0.0, 0.1),
        ..LossConfig::default()
    }
}

type LossFn<'a> = dyn for<'g> Fn(&mut Tape<'g>, &[Var]) -> Result<Var, AutodiffError> + 'a;

fn loss_check(name: &str, seed: u64) -> GradCheckReport {
    let mut r = seeded(seed);
    let b = 2 + rng::index(&mut r, 7);
    let d = 1 + rng::index(&mut r, 16);
    let cfg = LossConfig {
        use_clamp: seed.is_multiple_of(2),
        ..random_loss_config(&mut r)
    };
    let check = |f: &LossFn<'_>, params: &[Tensor]| gradient_check(f, params, H, GRAD_TOL).unwrap();
    match name {
        "bpr" => {
            let params: Vec<Tensor> = (0..3).map(|_| random_tensor(&mut r, b, d)).collect();
            check(
                &|tape, v| {
                    let sp = tape.row_dot(v[0], v[1])?;
                    let sn = tape.row_dot(v[0], v[2])?;
                    losses::bpr_loss(tape, sp, sn)
                },
                &params,
            )
        }
        "cl" => {
            let pos = Tensor::from_fn(b, 1, |_, _| uniform(&mut r, -3.0, 3.0));
            let negs = Tensor::from_fn(b, 2 * b - 2, |_, _| uniform(&mut r, -3.0, 3.0));
            check(&|tape, v| losses::cl_loss(tape, v[0], v[1]), &[pos, negs])
        }
        "dcl" => {
            let params = vec![random_tensor(&mut r, b, d), random_tensor(&mut r, b, d)];
            check(&|tape, v| losses::dcl_loss(tape, v[0], v[1], &cfg), &params)
        }
        "gcl" => {
            let params = vec![random_tensor(&mut r, b, d), random_tensor(&mut r, b, d)];
            check(
                &|tape, v| {
                    let per_user = losses::gcl_pair_loss(tape, v[0], v[1], cfg.t1)?;
                    losses::gcl_loss(tape, per_user)
                },
                &params,
            )
        }
        "total" => {
            let params: Vec<Tensor> = (0..4).map(|_| random_tensor(&mut r, b, d)).collect();
            check(
                &|tape, v| {
                    let main = losses::dcl_loss(tape, v[0], v[1], &cfg)?;
                    let per_user = losses::gcl_pair_loss(tape, v[2], v[3], cfg.t1)?;
                    let gcl = losses::gcl_loss(tape, per_user)?;
                    losses::total_objective(tape, Some(gcl), main, &[v[0], v[1]], &cfg)
                },
                &params,
            )
        }
        other => panic!("unknown loss {other}"),
    }
}

fn encoder_check(name: &str, seed: u64) -> GradCheckReport {
    let mut r = seeded(seed ^ 0x5eed);
    let d = 1 + rng::index(&mut r, 16);
    let layers = 1 + seed as usize % 3;
    let combination = [
        Combination::Sum,
        Combination::Mean,
        Combination::Last,
        Combination::Concat,
    ][seed as usize % 4];
    let cfg = match name {
        "mf" => EncoderConfig::mf(d),
        "lightgcn" => EncoderConfig {
            combination,
            ..EncoderConfig::lightgcn(d, layers)
        },
        "lrgccf" => EncoderConfig {
            combination,
            ..EncoderConfig::lrgccf(d, layers)
        },
        "gcmc" => EncoderConfig {
            activation: [
                Activation::Sigmoid,
                Activation::LeakyRelu(0.2),
                Activation::Identity,
                Activation::Relu,
            ][seed as usize % 4],
            ..EncoderConfig::gcmc(d)
        },
        other => panic!("unknown encoder {other}"),
    };
    let (nu, ni) = (2 + rng::index(&mut r, 6), 2 + rng::index(&mut r, 8));
    let graph = random_graph(&mut r, nu, ni, 0.3);
    let mut params = vec![random_tensor(&mut r, nu, d), random_tensor(&mut r, ni, d)];
    params.extend((0..cfg.weight_count()).map(|_| random_tensor(&mut r, d, d)));
    let out = cfg.output_dim();
    // a random linear readout turns the embeddings into a scalar
    let ru = random_tensor(&mut r, nu, out);
    let ri = random_tensor(&mut r, ni, out);
    gradient_check(
        |tape, v: &[Var]| {
            let vars = ModelVars {
                users: v[0],
                items: v[1],
                weights: v[2..].to_vec(),
            };
            let (u, i) = encoders::forward(tape, &cfg, &vars, &graph, Mode::Eval).map_err(enc)?;
            let cu = tape.constant(ru.clone());
            let ci = tape.constant(ri.clone());
            let pu = tape.mul(u, cu)?;
            let pi = tape.mul(i, ci)?;
            let su = tape.sum(pu)?;
            let si = tape.sum(pi)?;
            tape.add(su, si)
        },
        &params,
        H,
        GRAD_TOL,
    )
    .unwrap()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for name in [
        "bpr", "cl", "dcl", "gcl", "total", "mf", "lightgcn", "lrgccf", "gcmc",
    ] {
        for seed in 0..GRAD_INSTANCES {
            let report = if ["mf", "lightgcn", "lrgccf", "gcmc"].contains(&name) {
                encoder_check(name, seed)
            } else {
                loss_check(name, seed)
            };
            worst = worst.max(report.worst().map_or(0.0, |c| c.error));
            checked += 1;
            if !report.passed() {
                failures.push(format!("{name}#{seed}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        failures.is_empty() && secs < 30.0,
        format!(
            "{checked} instances over 5 losses and 4 encoders, worst relative error {worst:.2e} (< {GRAD_TOL:e}), {secs:.1}s (< 30s), failures [{}]",
            failures.join(" ")
        ),
    )
}

// ---- loss identities ----

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (n(a), n(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Positive similarity and the 2B-2 in-batch negative similarities of each user.
fn in_batch_phis(users: &Tensor, items: &Tensor, t: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let b = users.rows();
    let pos = (0..b)
        .map(|j| cosine(users.row(j), items.row(j)) / t)
        .collect();
    let negs = (0..b)
        .map(|j| {
            let others = || (0..b).filter(move |&k| k != j);
            others()
                .map(|k| cosine(users.row(j), users.row(k)) / t)
                .chain(others().map(|k| cosine(users.row(j), items.row(k)) / t))
                .collect()
        })
        .collect();
    (pos, negs)
}

fn dcl_value(users: &Tensor, items: &Tensor, cfg: &LossConfig) -> f64 {
    let mut tape = Tape::new();
    let u = tape.constant(users.clone());
    let i = tape.constant(items.clone());
    let l = losses::dcl_loss(&mut tape, u, i, cfg).unwrap();
    tape.value(l).item()
}

fn cl_value(pos: &[f64], negs: &[Vec<f64>]) -> f64 {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::new(pos.len(), 1, pos.to_vec()).unwrap());
    let n = tape.constant(Tensor::new(negs.len(), negs[0].len(), negs.concat()).unwrap());
    let l = losses::cl_loss(&mut tape, p, n).unwrap();
    tape.value(l).item()
}

fn gcl_value(h1: &Tensor, h2: &Tensor, t1: f64) -> f64 {
    let mut tape = Tape::new();
    let a = tape.constant(h1.clone());
    let b = tape.constant(h2.clone());
    let per = losses::gcl_pair_loss(&mut tape, a, b, t1).unwrap();
    let l = losses::gcl_loss(&mut tape, per).unwrap();
    tape.value(l).item()
}

fn random_pair(seed: u64) -> (Tensor, Tensor, SplitMix64) {
    let mut r = seeded(seed ^ 0xdc1);
    let b = 2 + rng::index(&mut r, 7);
    let d = 1 + rng::index(&mut r, 16);
    let u = random_tensor(&mut r, b, d);
    let i = random_tensor(&mut r, b, d);
    (u, i, r)
}

fn reduction_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let (u, i, mut r) = random_pair(seed);
        let t2 = uniform(&mut r, 0.05, 2.0);
        let cfg = LossConfig {
            tau_plus: 0.0,
            t2,
            use_clamp: seed % 2 == 0,
            ..LossConfig::default()
        };
        let (pos, negs) = in_batch_phis(&u, &i, t2);
        worst = worst.max((dcl_value(&u, &i, &cfg) - cl_value(&pos, &negs)).abs());
    }
    Outcome::new(
        worst <= 1e-12,
        format!("100 instances, max |DCL(tau+=0) - CL| = {worst:.2e} (<= 1e-12)"),
    )
}

fn clamp_floor() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for t2 in [0.1, 0.5, 1.0] {
        let floor = libm::exp(1.0 / t2);
        // anchors equal their positives and are orthogonal to every negative
        let u = Tensor::identity(3);
        let (pos, negs) = in_batch_phis(&u, &u, t2);
        for tau in [0.0, 0.5, 0.9] {
            let g = dcl_negative_score(pos[0], &negs[0], tau);
            let clamped = dcl_clamp(g, t2);
            ok &= g < floor && clamped.to_bits() == floor.to_bits();
            let cfg = LossConfig {
                tau_plus: tau,
                t2,
                clamp_floor: ClampFloor::Upper,
                ..LossConfig::default()
            };
            let loss = dcl_value(&u, &u, &cfg);
            // with g' = e^{1/t2} = e^{pos} the loss is ln(1 + M), M = 2B - 2 = 4
            let expected = 5f64.ln();
            ok &= loss.is_finite() && loss >= 0.0 && (loss - expected).abs() < 1e-12;
            notes.push(format!(
                "t2={t2} tau+={tau}: g={g:.3e} -> {clamped:.6e}, loss {loss:.6}"
            ));
        }
    }
    Outcome::new(
        ok,
        format!(
            "g' equals e^(1/t2) bit for bit and loss = ln 5 in every case; {}",
            notes.join("; ")
        ),
    )
}

fn scale_invariance() -> Outcome {
    let mut worst: f64 = 0.0;
    let cfg = LossConfig::default();
    for seed in 0..50 {
        let (u, i, _) = random_pair(seed);
        for c in [0.5, 3.0] {
            let (us, is) = (u.scaled(c), i.scaled(c));
            let (p0, n0) = in_batch_phis(&u, &i, cfg.t2);
            let (p1, n1) = in_batch_phis(&us, &is, cfg.t2);
            worst = worst
                .max((cl_value(&p0, &n0) - cl_value(&p1, &n1)).abs())
                .max((dcl_value(&u, &i, &cfg) - dcl_value(&us, &is, &cfg)).abs())
                .max((gcl_value(&u, &i, cfg.t1) - gcl_value(&us, &is, cfg.t1)).abs());
        }
    }
    Outcome::new(
        worst <= 1e-10,
        format!(
            "50 instances x c in {{0.5, 3}}, max change over CL, DCL, GCL = {worst:.2e} (<= 1e-10)"
        ),
    )
}

// ---- propagation ----

fn dense_matmul(a: &[Vec<f64>], x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| {
            (0..x[0].len())
                .map(|c| row.iter().zip(x).map(|(w, xr)| w * xr[c]).sum())
                .collect()
        })
        .collect()
}

fn propagation_oracle() -> Outcome {
    let (nu, ni, d) = (8, 10, 4);
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut r = seeded(seed ^ 0x9c);
        let g = random_graph(&mut r, nu, ni, 0.25);
        let model = Model {
            config: EncoderConfig::lightgcn(d, 2),
            users: random_tensor(&mut r, nu, d),
            items: random_tensor(&mut r, ni, d),
            weights: vec![],
        };
        let (u, i) = model.embed(&g).unwrap();

        // explicit (users + items) square normalized adjacency from raw degrees
        let n = nu + ni;
        let mut deg = vec![0.0f64; n];
        for (a, b, _) in g.edges() {
            deg[a] += 1.0;
            deg[nu + b] += 1.0;
        }
        let mut adj = vec![vec![0.0; n]; n];
        for (a, b, _) in g.edges() {
            let c = 1.0 / (deg[a].sqrt() * deg[nu + b].sqrt());
            adj[a][nu + b] = c;
            adj[nu + b][a] = c;
        }
        let e0: Vec<Vec<f64>> = (0..nu)
            .map(|k| model.users.row(k).to_vec())
            .chain((0..ni).map(|k| model.items.row(k).to_vec()))
            .collect();
        let e1 = dense_matmul(&adj, &e0);
        let e2 = dense_matmul(&adj, &e1);
        for node in 0..n {
            let got = if node < nu {
                u.row(node)
            } else {
                i.row(node - nu)
            };
            for c in 0..d {
                worst = worst.max((got[c] - (e0[node][c] + e1[node][c] + e2[node][c])).abs());
            }
        }
    }
    Outcome::new(
        worst <= 1e-10,
        format!("20 graphs of 8 users x 10 items, K=2, max deviation {worst:.2e} (<= 1e-10)"),
    )
}

// ---- metrics ----

struct MetricInstance {
    users: Tensor,
    items: Tensor,
    data: EvalData,
}

fn metric_instance(seed: u64) -> MetricInstance {
    let mut r = seeded(seed ^ 0x3e7);
    let nu = 1 + rng::index(&mut r, 30);
    let ni = 2 + rng::index(&mut r, 59);
    let d = 1 + rng::index(&mut r, 6);
    let mut train = vec![vec![]; nu];
    let mut test = vec![vec![]; nu];
    for u in 0..nu {
        for i in 0..ni {
            match rng::index(&mut r, 10) {
                0 | 1 => train[u].push(i),
                2 => test[u].push(i),
                _ => {}
            }
        }
    }
    if test.iter().all(Vec::is_empty) {
        test[0] = vec![ni - 1];
        train[0].retain(|&i| i != ni - 1);
    }
    // coarse scores so that ties occur
    let round = |t: Tensor| t.map(|v| (v * 4.0).round() / 4.0);
    MetricInstance {
        users: round(random_tensor(&mut r, nu, d)),
        items: round(random_tensor(&mut r, ni, d)),
        data: EvalData {
            train,
            test,
            num_items: ni,
        },
    }
}

/// Dense score matrix, full stable sort, metrics from their definitions.
fn metric_oracle(inst: &MetricInstance, k: usize) -> (f64, f64) {
    let (nu, ni) = (inst.users.rows(), inst.items.rows());
    let (mut recall, mut ndcg, mut n) = (0.0, 0.0, 0);
    for u in 0..nu {
        let test = &inst.data.test[u];
        if test.is_empty() {
            continue;
        }
        let scores: Vec<f64> = (0..ni)
            .map(|i| {
                (0..inst.users.cols())
                    .map(|c| inst.users.get(u, c) * inst.items.get(i, c))
                    .sum()
            })
            .collect();
        let mut order: Vec<usize> = (0..ni)
            .filter(|i| !inst.data.train[u].contains(i))
            .collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
        let top = &order[..k.min(order.len())];
        recall += top.iter().filter(|i| test.contains(i)).count() as f64 / test.len() as f64;
        let dcg: f64 = top
            .iter()
            .enumerate()
            .filter(|(_, i)| test.contains(i))
            .map(|(rank, _)| 1.0 / libm::log2(rank as f64 + 2.0))
            .sum();
        let idcg: f64 = (0..k.min(test.len()))
            .map(|rank| 1.0 / libm::log2(rank as f64 + 2.0))
            .sum();
        ndcg += dcg / idcg;
        n += 1;
    }
    (recall / n as f64, ndcg / n as f64)
}

fn metric_oracle_check() -> Outcome {
    let mut mismatches = Vec::new();
    for seed in 0..50 {
        let inst = metric_instance(seed);
        for k in [1, 5, 20] {
            let got =
                eval::evaluate(&inst.users, &inst.items, &inst.data, k, Scoring::Dot).unwrap();
            let (recall, ndcg) = metric_oracle(&inst, k);
            if got.recall.to_bits() != recall.to_bits() || got.ndcg.to_bits() != ndcg.to_bits() {
                mismatches.push(format!("{seed}@{k}"));
            }
        }
    }
    Outcome::new(
        mismatches.is_empty(),
        format!(
            "50 instances x K in {{1, 5, 20}}, bit-level mismatches [{}]",
            mismatches.join(" ")
        ),
    )
}

// ---- desk-scale experiments ----

const DESK_EPOCHS: usize = 200;
const DESK_PATIENCE: usize = 20;

fn desk_config(seed: u64, main: MainLoss, tau_plus: f64, beta: f64) -> TrainConfig {
    TrainConfig {
        epochs: DESK_EPOCHS,
        batch_size: 256,
        lr: 1e-3,
        seed,
        encoder: EncoderConfig::lightgcn_single(32, 2),
        loss: LossConfig {
            main,
            tau_plus,
            beta,
            ..LossConfig::default()
        },
        k: 20,
        early_stop_patience: Some(DESK_PATIENCE),
        ..TrainConfig::default()
    }
}

struct DeskRun {
    best: f64,
    best_epoch: usize,
    e95: usize,
    epochs: usize,
    secs: f64,
}

impl DeskRun {
    fn summary(&self) -> String {
        format!(
            "best {:.4} at epoch {}, 95% at epoch {}, {} epochs, {:.1}s",
            self.best, self.best_epoch, self.e95, self.epochs, self.secs
        )
    }
}

/// First epoch whose recall@20 reaches 95% of the run's best.
fn epoch_at_95(result: &FitResult) -> usize {
    result
        .evaluated()
        .find(|r| {
            r.metrics
                .as_ref()
                .is_some_and(|m| m.recall >= 0.95 * result.best_recall)
        })
        .map_or(0, |r| r.epoch)
}

fn desk_run(seed: u64, main: MainLoss, tau_plus: f64, beta: f64) -> DeskRun {
    let ds = synthetic::generate(&BlockConfig {
        seed,
        ..BlockConfig::default()
    })
    .unwrap();
    let split = ds.split(0.8, seed).unwrap();
    let start = Instant::now();
    let result = Trainer::new(desk_config(seed, main, tau_plus, beta), &split)
        .unwrap()
        .fit()
        .unwrap();
    DeskRun {
        best: result.best_recall,
        best_epoch: result.best_epoch.unwrap_or(0),
        e95: epoch_at_95(&result),
        epochs: result.epochs.len(),
        secs: start.elapsed().as_secs_f64(),
    }
}

struct DeskResults {
    bpr: Vec<DeskRun>,
    full: Vec<DeskRun>,
    /// DCL without GCL, indexed [seed][tau]
    sweep: Vec<Vec<DeskRun>>,
}

fn default_tau_index() -> usize {
    let tau = LossConfig::default().tau_plus;
    TAU_GRID.iter().position(|&t| t == tau).unwrap()
}

fn desk_experiments() -> DeskResults {
    let mut out = DeskResults {
        bpr: vec![],
        full: vec![],
        sweep: vec![],
    };
    for seed in SEEDS {
        let bpr = desk_run(seed, MainLoss::Bpr, 0.0, 0.0);
        println!("  seed {seed} BPR: {}", bpr.summary());
        let full = desk_run(
            seed,
            MainLoss::Dcl,
            LossConfig::default().tau_plus,
            LossConfig::default().beta,
        );
        println!("  seed {seed} DCL+GCL: {}", full.summary());
        let mut row = Vec::new();
        for tau in TAU_GRID {
            let run = desk_run(seed, MainLoss::Dcl, tau, 0.0);
            println!("  seed {seed} DCL tau+={tau:e}: {}", run.summary());
            row.push(run);
        }
        out.bpr.push(bpr);
        out.full.push(full);
        out.sweep.push(row);
    }
    out
}

fn ablation_direction(res: &DeskResults) -> Outcome {
    let secs: f64 = res.bpr.iter().chain(&res.full).map(|r| r.secs).sum();
    let wins: Vec<String> = SEEDS
        .iter()
        .zip(res.bpr.iter().zip(&res.full))
        .map(|(s, (b, f))| {
            format!(
                "seed {s}: {:.4} vs {:.4} ({:+.1}%)",
                f.best,
                b.best,
                100.0 * (f.best / b.best - 1.0)
            )
        })
        .collect();
    let count = res
        .bpr
        .iter()
        .zip(&res.full)
        .filter(|(b, f)| f.best >= b.best)
        .count();
    Outcome::new(
        count >= 4 && secs < 600.0,
        format!(
            "DCL+GCL >= BPR best recall@20 in {count}/5 seeds (need 4), {secs:.0}s CPU; {}",
            wins.join("; ")
        ),
    )
}

fn convergence_direction(res: &DeskResults) -> Outcome {
    let t = default_tau_index();
    let pairs: Vec<(usize, usize)> = res
        .bpr
        .iter()
        .zip(&res.sweep)
        .map(|(b, s)| (s[t].e95, b.e95))
        .collect();
    let count = pairs.iter().filter(|(d, b)| 2 * d <= *b).count();
    let detail: Vec<String> = SEEDS
        .iter()
        .zip(&pairs)
        .map(|(s, (d, b))| format!("seed {s}: DCL {d} vs BPR {b}"))
        .collect();
    Outcome::new(
        count >= 4,
        format!(
            "DCL 95%-of-best epoch <= 0.5x BPR in {count}/5 seeds (need 4); {}",
            detail.join("; ")
        ),
    )
}

fn tau_sweep_shape(res: &DeskResults) -> Outcome {
    let mut interior = 0;
    let mut detail = Vec::new();
    for (seed, row) in SEEDS.iter().zip(&res.sweep) {
        // strict: the first grid point attaining the maximum wins
        let mut arg = 0;
        for (j, run) in row.iter().enumerate() {
            if run.best > row[arg].best {
                arg = j;
            }
        }
        if arg != 0 && arg != TAU_GRID.len() - 1 {
            interior += 1;
        }
        let curve: Vec<String> = row.iter().map(|r| format!("{:.4}", r.best)).collect();
        detail.push(format!(
            "seed {seed}: argmax tau+={:e} [{}]",
            TAU_GRID[arg],
            curve.join(" ")
        ));
    }
    Outcome::new(
        interior >= 3,
        format!(
            "interior argmax in {interior}/5 seeds (need 3); {}",
            detail.join("; ")
        ),
    )
}

// ---- determinism ----

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let ds = synthetic::generate(&BlockConfig::default()).unwrap();
    std::fs::write(dir.path().join("data.txt"), dataio::format_pairs(&ds)).unwrap();
    let mut histories = Vec::new();
    for name in ["first", "second"] {
        let config = dir.path().join(format!("{name}.ini"));
        std::fs::write(
            &config,
            format!("[data]\npath = data.txt\n[train]\nepochs = 5\nseed = 11\n[output]\ndir = {name}\nname = run\n"),
        )
        .unwrap();
        let out = Command::new(env!("CARGO_BIN_EXE_cgcf"))
            .args(["train", "--config", config.to_str().unwrap()])
            .output()
            .unwrap();
        if !out.status.success() {
            return Outcome::new(
                false,
                format!("train failed: {}", String::from_utf8_lossy(&out.stderr)),
            );
        }
        histories.push(std::fs::read(dir.path().join(name).join("history.csv")).unwrap());
    }
    Outcome::new(
        histories[0] == histories[1],
        format!(
            "two CLI training runs, history.csv of {} bytes, identical: {}",
            histories[0].len(),
            histories[0] == histories[1]
        ),
    )
}

/// Soft criteria print their verdict but do not set the exit status.
const SOFT: [usize; 1] = [9];

fn main() -> ExitCode {
    let (mut failed, mut soft_failed) = (0, 0);
    let mut report = |n: usize, outcome: Outcome| {
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        let soft = if SOFT.contains(&n) { " (soft)" } else { "" };
        println!("criterion {n}: {verdict}{soft}: {}", outcome.detail);
        match (outcome.passed, soft.is_empty()) {
            (true, _) => {}
            (false, true) => failed += 1,
            (false, false) => soft_failed += 1,
        }
    };
    report(1, gradients());
    report(2, reduction_identity());
    report(3, clamp_floor());
    report(4, scale_invariance());
    report(5, propagation_oracle());
    report(6, metric_oracle_check());
    println!("desk-scale runs (300 users, 400 items, 20 blocks; LightGCN-single d=32 K=2):");
    let desk = desk_experiments();
    report(7, ablation_direction(&desk));
    report(8, convergence_direction(&desk));
    report(9, tau_sweep_shape(&desk));
    report(10, determinism());
    println!("{failed} criteria failed, {soft_failed} soft criteria failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
