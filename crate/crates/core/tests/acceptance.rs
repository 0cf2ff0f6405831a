//! Acceptance checks, one line per criterion. Run with
//! `cargo test --release --test acceptance`; set `DMC_FULL_SWEEP=1` to
//! rerun the full CRB sweep instead of checking the committed one.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use dmc::cli::{read_json, InferOutput, FIT_REPORT_FILE, INFER_FILE, MODEL_FILE, OBSERVATION_FILE};
use dmc::crb::{log_space, records_to_csv, run_mismatch_experiment, MismatchConfig};
use dmc::estimator::{estimate_single_mode, init_formulas};
use dmc::likelihood::reparam_pack;
use dmc::linalg::{Cholesky, Toeplitz};
use dmc::nn::train::{order_accuracy, validation_config};
use dmc::nn::{load_net, loss, read_metrics, GenConfig, LossWeights, Net, NetConfig, SampleStream, Tensor3};
use dmc::{
    build_full_covariance, fim, nll, sample_observation, score, DmcModel, EtaVector, LmOptions, ModeParams,
    SufficientStats,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// tolerances
const COV_SECONDS: f64 = 10.0;
const SCORE_REL: f64 = 1e-4;
const FIM_REL: f64 = 0.10;
const RECOVERY_SIGMAS: f64 = 3.0;
const RECOVERY_RATE: f64 = 0.90;
const ONE_MODE_RATIO: f64 = 5.0;
const TWO_MODE_RATIO: [f64; 2] = [0.5, 2.0];
const SWEEP_SECONDS: f64 = 1800.0;
const NET_GRAD_REL: f64 = 1e-3;
const LOSS_DROP: f64 = 0.30;
const HELD_OUT_ACC: f64 = 0.70;
const TRAIN_STEPS: u64 = 20_000;
const PIPELINE_RATE: f64 = 0.80;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn artifacts() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("artifacts")
}

fn desk_checkpoint() -> PathBuf {
    artifacts().join("desk").join("checkpoint")
}

fn random_model(rng: &mut ChaCha8Rng, n_f: usize) -> DmcModel {
    let m = rng.random_range(0..=3);
    let modes: Vec<ModeParams> = (0..m)
        .map(|_| {
            ModeParams::new(
                10f64.powf(rng.random_range(-6.0..0.0)),
                10f64.powf(rng.random_range(-1.0..2.5)),
                rng.random_range(0.0..1.0),
            )
            .unwrap()
        })
        .collect();
    let peak = modes.iter().map(|m| m.diagonal_power()).fold(0.0, f64::max);
    DmcModel::new(modes, (1e-6 * peak).max(1e-12), n_f).unwrap()
}

fn covariance_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut bad = 0;
    for _ in 0..1000 {
        let model = random_model(&mut rng, 256);
        let r = build_full_covariance(&model).unwrap();
        let n = r.dim();
        let diag: f64 = model.modes().iter().map(|m| m.diagonal_power()).sum::<f64>() + model.alpha0();
        let mut ok = true;
        for i in 0..n {
            let row = r.row(i);
            ok &= (row[i].re - diag).abs() <= 4.0 * f64::EPSILON * diag && row[i].im == 0.0;
            for j in 0..n {
                ok &= row[j] == r.row(j)[i].conj();
                if i > 0 && j > 0 {
                    ok &= row[j] == r.row(i - 1)[j - 1];
                }
            }
        }
        let col: Vec<_> = (0..n).map(|i| r.row(i)[0]).collect();
        ok &= Cholesky::toeplitz(&Toeplitz::new(col)).is_ok();
        bad += usize::from(!ok);
    }
    let secs = start.elapsed().as_secs_f64();
    check(bad == 0 && secs < COV_SECONDS, format!("{bad} of 1000 models violate structure, {secs:.1} s"))
}

fn random_eta(rng: &mut ChaCha8Rng) -> EtaVector {
    let m = rng.random_range(0..=3);
    let modes: Vec<(f64, f64, f64)> = (0..m)
        .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-0.5..2.5), rng.random_range(0.0..1.0)))
        .collect();
    EtaVector::from_parts(&modes, rng.random_range(-4.0..-1.0)).unwrap()
}

fn score_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for t in 0..100 {
        let source = dmc::likelihood::reparam_unpack(&random_eta(&mut rng), 16).unwrap();
        let stats = SufficientStats::from_observation(&sample_observation(&source, 8, t).unwrap());
        let eta = random_eta(&mut rng);
        let g = score(&stats, &eta).unwrap();
        for a in 0..eta.len() {
            let shifted = |d: f64| {
                let mut v = eta.as_slice().to_vec();
                v[a] += d;
                nll(&stats, &EtaVector::new(v).unwrap()).unwrap()
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            worst = worst.max((g[a] - fd).abs() / fd.abs().max(1e-3));
        }
    }
    check(worst < SCORE_REL, format!("max relative error {worst:.2e}"))
}

fn fim_identity() -> Outcome {
    let truth =
        DmcModel::new(vec![ModeParams::new(1.0, 8.0, 0.2).unwrap(), ModeParams::new(0.3, 3.0, 0.6).unwrap()], 0.05, 16)
            .unwrap();
    let eta = reparam_pack(&truth);
    let p = eta.len();
    let draws = 2000;
    let mut sum = vec![0.0; p];
    let mut sq = vec![0.0; p];
    for s in 0..draws {
        let stats = SufficientStats::from_observation(&sample_observation(&truth, 64, 10_000 + s).unwrap());
        for (a, g) in score(&stats, &eta).unwrap().into_iter().enumerate() {
            sum[a] += g;
            sq[a] += g * g;
        }
    }
    let j = fim(&eta, 16, 64).unwrap();
    let worst = (0..p)
        .map(|a| {
            let mean = sum[a] / draws as f64;
            let var = sq[a] / draws as f64 - mean * mean;
            (var / j[(a, a)] - 1.0).abs()
        })
        .fold(0.0, f64::max);
    check(worst < FIM_REL, format!("worst diagonal deviation {:.1}% over {p} parameters", 100.0 * worst))
}

fn circular_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

fn estimator_recovery() -> Outcome {
    let (n, m) = (128, 32);
    let mut hits = 0;
    let mut monotone = 0;
    for t in 0..100u64 {
        let rng = &mut ChaCha8Rng::seed_from_u64(dmc::seed::derive(4, &[t]));
        let width: f64 = rng.random_range(4f64.ln()..40f64.ln()).exp();
        let delta2 = std::f64::consts::LN_2 * n as f64 / width;
        let delta3 = rng.random_range(0.05..0.85);
        let snr = 10f64.powf(rng.random_range(20.0..30.0) / 10.0);
        let unit = ModeParams::new(1.0, delta2, delta3).unwrap();
        let peak = dmc::pdp::toeplitz_pdp(&unit.toeplitz(n)).into_iter().fold(0.0, f64::max);
        let alpha0 = 1e-2;
        let floor = (n as f64).sqrt() * alpha0;
        let truth =
            DmcModel::new(vec![ModeParams::new(snr * floor / peak, delta2, delta3).unwrap()], alpha0, n).unwrap();
        let obs = sample_observation(&truth, m, t).unwrap();
        let bound = fim(&reparam_pack(&truth), n, m).unwrap().try_inverse().unwrap()[(2, 2)];
        if let Ok((fit, report)) = estimate_single_mode(&obs, &LmOptions::default()) {
            if circular_gap(fit.modes()[0].delta3(), delta3) <= RECOVERY_SIGMAS * bound.sqrt() {
                hits += 1;
            }
            monotone += usize::from(report.is_monotone());
        }
    }
    let rate = hits as f64 / 100.0;
    check(
        rate >= RECOVERY_RATE && monotone == 100,
        format!("{hits}/100 within 3 sqrt(CRB), {monotone}/100 monotone traces"),
    )
}

fn init_formula() -> Outcome {
    let e = init_formulas(&[1.0, 1.0, 5.0, 3.0, 2.0]).unwrap();
    let got = (e.alpha0, e.delta1, e.delta2, e.delta3);
    check(got == (1.0, 4.0, 4.0 / 55.0, 0.25), format!("{got:?}"))
}

fn parse_crb_csv(text: &str) -> Vec<Vec<f64>> {
    text.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
}

fn crb_trend() -> Outcome {
    let cfg = MismatchConfig::default();
    let committed = artifacts().join("crb");
    let (csv, secs, source) = if std::env::var("DMC_FULL_SWEEP").is_ok_and(|v| v == "1") {
        let start = Instant::now();
        let records = run_mismatch_experiment(&cfg).map_err(|e| e.to_string())?;
        let csv = records_to_csv(&records);
        let same = fs::read_to_string(committed.join("crb.csv")).is_ok_and(|c| c == csv);
        (csv, start.elapsed().as_secs_f64(), if same { "live, identical to committed" } else { "live" })
    } else {
        let csv = fs::read_to_string(committed.join("crb.csv")).map_err(|e| format!("no committed sweep: {e}"))?;
        let run: serde_json::Value = read_json(committed.join("run.json")).map_err(|e| e.to_string())?;
        (csv, run["elapsed_seconds"].as_f64().unwrap_or(f64::INFINITY), "committed")
    };
    let rows = parse_crb_csv(&csv);
    let grid = log_space(1e-7, 1e-4, 8);
    let grid_ok = rows.len() == grid.len() && rows.iter().zip(&grid).all(|(r, g)| (r[0] / g - 1.0).abs() < 1e-12);
    if !grid_ok {
        return Err(format!("{source} sweep does not match the default grid"));
    }
    let (first, last) = (&rows[0], &rows[rows.len() - 1]);
    let one = last[1] / first[1];
    let two = last[2] / first[2];
    let failed: f64 = rows.iter().map(|r| r[3] + r[4]).sum();
    check(
        one > ONE_MODE_RATIO && (TWO_MODE_RATIO[0]..=TWO_MODE_RATIO[1]).contains(&two) && secs < SWEEP_SECONDS,
        format!(
            "{source}: one-mode ratio {one:.2}, two-mode ratio {two:.2}, {failed} excluded fits of {}, {secs:.0} s",
            2 * cfg.trials_per_level * grid.len()
        ),
    )
}

fn network_shape_and_gradient() -> Outcome {
    let cfg = NetConfig::paper();
    let mut net = Net::new(cfg, 1).unwrap();
    let out = net.forward(&Tensor3::zeros(2, 1, 512), false).unwrap();
    let shapes = (out.modes.dims(), out.logits.batch(), out.logits_of(0).len());
    if shapes != ((2, 3, 512), 2, 4) {
        return Err(format!("output shapes {shapes:?}"));
    }

    let rng = &mut ChaCha8Rng::seed_from_u64(3);
    let mut random = |c: usize| {
        let data = (0..3 * c * 32).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor3::new(3, c, 32, data).unwrap()
    };
    let (x, t) = (random(1), random(3));
    let orders = [0usize, 2, 3];
    let batch_loss = |net: &mut Net| {
        let out = net.forward(&x, true).unwrap();
        loss(&out, &t, &orders, LossWeights::default()).unwrap()
    };
    let mut net = Net::new(NetConfig::tiny(), 10).unwrap();
    net.visit_mut(&mut |n, p| {
        if n == "head.fc2.bias" {
            p.value[3] = 5.0;
        }
    });
    net.zero_grad();
    let (_, g) = batch_loss(&mut net);
    net.backward(&g.dmodes, &g.dlogits).unwrap();
    let mut analytic = Vec::new();
    net.visit(&mut |n, p| {
        if p.trainable {
            analytic.push((n.to_string(), p.grad.clone()));
        }
    });
    // biases feeding batch norm have exactly zero gradient; the step keeps
    // the roundoff of those differences well below the tolerance
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (name, grad) in &analytic {
        for (j, gj) in grad.iter().enumerate() {
            let shift = |net: &mut Net, d: f64| {
                net.visit_mut(&mut |n, p| {
                    if n == name {
                        p.value[j] += d
                    }
                })
            };
            shift(&mut net, h);
            let lp = batch_loss(&mut net).0.total();
            shift(&mut net, -2.0 * h);
            let lm = batch_loss(&mut net).0.total();
            shift(&mut net, h);
            let fd = (lp - lm) / (2.0 * h);
            worst = worst.max((fd - gj).abs() / (fd.abs() + gj.abs()).max(1e-4));
        }
    }

    // order 1 predicted everywhere: decoders 1 and 2 are masked
    let mut net = Net::new(NetConfig::tiny(), 13).unwrap();
    net.visit_mut(&mut |n, p| {
        if n == "head.fc2.bias" {
            p.value[1] = 50.0;
        }
    });
    net.zero_grad();
    let (_, g) = batch_loss(&mut net);
    net.backward(&g.dmodes, &g.dlogits).unwrap();
    let mut norms = BTreeMap::new();
    net.visit(&mut |n, p| {
        if let Some(d) = n.strip_prefix("dec").and_then(|r| r.chars().next()) {
            *norms.entry(d).or_insert(0.0) += p.grad.iter().map(|g| g * g).sum::<f64>();
        }
    });
    let masked = norms.get(&'1') == Some(&0.0) && norms.get(&'2') == Some(&0.0) && norms[&'0'] > 0.0;
    check(
        worst < NET_GRAD_REL && masked,
        format!("shapes ok, gradient error {worst:.1e}, masked decoders zero: {masked}"),
    )
}

fn desk_training() -> Outcome {
    let rows = read_metrics(artifacts().join("desk").join("metrics.csv")).map_err(|e| e.to_string())?;
    let (first, last) = match (rows.first(), rows.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err("empty metrics log".into()),
    };
    let drop = 1.0 - last.loss() / first.loss();
    let net = load_net(desk_checkpoint()).map_err(|e| e.to_string())?;
    let held_out = validation_config(&GenConfig::default());
    let stream = SampleStream::new(held_out, 0xACCE).unwrap();
    let samples: Vec<_> = (0..512).map(|i| stream.draw(i).unwrap().0).collect();
    let acc = order_accuracy(&net, &samples, 64).unwrap();
    check(
        last.step >= TRAIN_STEPS && first.step <= 500 && drop >= LOSS_DROP && acc >= HELD_OUT_ACC,
        format!(
            "{} steps, loss {:.1} -> {:.1} ({:.0}% drop), fresh held-out accuracy {:.1}%",
            last.step,
            first.loss(),
            last.loss(),
            100.0 * drop,
            100.0 * acc
        ),
    )
}

fn dmc_bin(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dmc")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("dmc {args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

const PIPELINE_SCENARIO: &str = r#"{"generate": {"count": 50, "m_snapshots": 32,
  "model": {"alpha0": 1.0, "n_f": 512, "modes": [
    {"delta1": 60.0, "delta2": 40.0, "delta3": 0.1},
    {"delta1": 30.0, "delta2": 60.0, "delta3": 0.5}]}}}"#;

fn pipeline() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let cfg = root.join("gen.json");
    fs::write(&cfg, PIPELINE_SCENARIO).unwrap();
    dmc_bin(&["generate", "--config", &s(&cfg), "--seed", "9", "--out", &s(&root.join("gen"))])?;
    let weights = s(&desk_checkpoint());
    let mut hits = 0;
    for i in 0..50 {
        let scen = root.join("gen").join(dmc::cli::scenario_dir(i));
        let (inf, est) = (root.join(format!("inf{i}")), root.join(format!("est{i}")));
        let obs = s(&scen.join(OBSERVATION_FILE));
        dmc_bin(&["infer", "--input", &obs, "--weights", &weights, "--out", &s(&inf)])?;
        let p: InferOutput = read_json(inf.join(INFER_FILE)).map_err(|e| e.to_string())?;
        let mut args = vec!["estimate".to_string(), "--input".into(), obs, "--out".into(), s(&est)];
        args.extend(["--order".into(), p.order.to_string()]);
        if p.order > 0 {
            args.push("--separations".into());
            args.extend(p.separations.iter().map(|f| s(&inf.join(f))));
        }
        dmc_bin(&args.iter().map(String::as_str).collect::<Vec<_>>())?;
        let truth: DmcModel = read_json(scen.join(MODEL_FILE)).unwrap();
        let fit: DmcModel = read_json(est.join(MODEL_FILE)).unwrap();
        let tol = 2.0 / truth.n_f() as f64;
        let ok = fit.order() == 2
            && truth.modes().iter().zip(fit.modes()).all(|(a, b)| circular_gap(a.delta3(), b.delta3()) <= tol);
        hits += usize::from(ok);
    }
    check(hits as f64 / 50.0 >= PIPELINE_RATE, format!("{hits}/50 scenarios recover both delays within 2/N_f"))
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

const DETERMINISM_CONFIGS: [(&str, &str); 3] = [
    ("generate", r#"{"generate": {"count": 4, "shard_size": 3, "gen": {"n_f": 64}}}"#),
    (
        "train",
        r#"{"train": {"net": {"input_length": 32, "base_channels": 2, "encoder_blocks": 1, "decoders": 3,
            "decoder_features": 2, "up_blocks": 2, "head_channels": 2, "head_hidden": [6, 5]},
          "gen": {"n_f": 32}, "options": {"steps": 6, "batch_size": 4, "log_every": 2, "val_samples": 8}}}"#,
    ),
    (
        "crb",
        r#"{"crb": {"n_f": 32, "m_snapshots": 8, "sweep": [1e-6, 1e-5], "trials_per_level": 2,
          "mode1": {"delta1": 1e-5, "delta2": 10.0, "delta3": 0.05}, "mode2_delta2": 10.0}}"#,
    ),
];

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let s = |p: PathBuf| p.to_str().unwrap().to_string();
    let gen = root.join("scenario.json");
    fs::write(&gen, PIPELINE_SCENARIO.replace("\"count\": 50", "\"count\": 1")).unwrap();
    dmc_bin(&["generate", "--config", &s(gen), "--seed", "3", "--out", &s(root.join("src"))])?;
    let obs = s(root.join("src").join(dmc::cli::scenario_dir(0)).join(OBSERVATION_FILE));
    let weights = s(desk_checkpoint());

    let mut commands: Vec<(String, Vec<String>)> = Vec::new();
    for (name, text) in DETERMINISM_CONFIGS {
        let path = root.join(format!("{name}.json"));
        fs::write(&path, text).unwrap();
        commands.push((name.into(), vec![name.into(), "--config".into(), s(path), "--seed".into(), "7".into()]));
    }
    let base = vec!["--input".to_string(), obs, "--weights".into(), weights];
    commands.push(("infer".into(), [vec!["infer".to_string()], base.clone()].concat()));
    commands.push(("estimate".into(), [vec!["estimate".to_string()], base].concat()));

    let mut differing = Vec::new();
    for (name, args) in &commands {
        let runs: Vec<_> = ["a", "b"]
            .iter()
            .map(|r| {
                let out = root.join(format!("{name}_{r}"));
                let mut a: Vec<&str> = args.iter().map(String::as_str).collect();
                let o = s(out.clone());
                a.extend(["--out", &o]);
                dmc_bin(&a).map(|_| tree(&out))
            })
            .collect::<Result<_, _>>()?;
        if runs[0].is_empty() || runs[0] != runs[1] {
            differing.push(name.clone());
        }
    }
    let fit = root.join("estimate_a");
    let complete = fit.join(MODEL_FILE).exists() && fit.join(FIT_REPORT_FILE).exists();
    check(
        differing.is_empty() && complete,
        format!("{} commands rerun, differing outputs: {differing:?}", commands.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("covariance correctness", covariance_correctness),
        ("score gradient check", score_gradient),
        ("FIM identity", fim_identity),
        ("estimator recovery", estimator_recovery),
        ("initialization formula", init_formula),
        ("mismatch CRB trend", crb_trend),
        ("network shape and gradient", network_shape_and_gradient),
        ("desk-scale training", desk_training),
        ("end-to-end pipeline", pipeline),
        ("CLI determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:2} {tag} {name}: {detail} [{:.1} s]", i + 1, start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
