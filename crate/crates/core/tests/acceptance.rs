//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use geoflow::align::{nca_apply, nca_fit, path_length};
use geoflow::chain::{align_domains, score_predictions, search_chains, Aligner, Method, SubspaceDim};
use geoflow::config::RunConfig;
use geoflow::dataset::{DatasetMeta, DomainDataset, FeatureKind, Label, HEALTHY};
use geoflow::gfk::{build_kernel, flow_point};
use geoflow::harness::{run_experiment, run_until, sem, ExperimentConfig, Stopping};
use geoflow::structfam::{apply_damage, assemble, solve_modes, DamageSpec, FeatureConfig, StructureParams};
use geoflow::subspace::{complete, cs_decompose, principal_angles, random_subspace, Subspace};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn case1(overrides: &[&str]) -> RunConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    RunConfig::load(&configs_dir().join("case1.toml"), &o).expect("case1.toml loads")
}

/// 200 random subspace pairs with D ≤ 20 and d ≤ D/2.
fn subspace_pairs() -> Vec<(Subspace, Subspace)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6f6b);
    (0..200)
        .map(|_| {
            let ambient = rng.random_range(2..=20);
            let d = rng.random_range(1..=ambient / 2);
            (random_subspace(&mut rng, ambient, d), random_subspace(&mut rng, ambient, d))
        })
        .collect()
}

fn trapezoid_kernel(s1: &Subspace, s2: &Subspace, nodes: usize) -> DMatrix<f64> {
    let cs = cs_decompose(s1, s2).unwrap();
    let comp = complete(s1);
    let ambient = s1.ambient_dim();
    let h = 1.0 / (nodes - 1) as f64;
    let mut g = DMatrix::zeros(ambient, ambient);
    for i in 0..nodes {
        let phi = flow_point(&cs, &comp, i as f64 * h).unwrap();
        let w = if i == 0 || i == nodes - 1 { 0.5 * h } else { h };
        g += phi.basis() * phi.basis().transpose() * w;
    }
    g
}

fn gfk_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst_rel: f64 = 0.0;
    let mut worst_psd: f64 = 0.0;
    let mut worst_trace: f64 = 0.0;
    let mut worst_sym: f64 = 0.0;
    let mut worst_extrapolated: f64 = 0.0;
    let mut failures = 0;
    for (s1, s2) in subspace_pairs() {
        let k = build_kernel(&s1, &s2).unwrap();
        let g = k.g();
        let quad = trapezoid_kernel(&s1, &s2, 2001);
        let rel = (g - &quad).norm() / quad.norm();
        // Richardson extrapolation of the trapezoid rule removes its h² error.
        let fine = trapezoid_kernel(&s1, &s2, 4001);
        let extrapolated = (&fine * 4.0 - &quad) / 3.0;
        worst_extrapolated = worst_extrapolated.max((g - &extrapolated).norm() / extrapolated.norm());
        let eig = SymmetricEigen::new(g.clone()).eigenvalues;
        let psd = -eig.min() / eig.max();
        let trace = (g.trace() - s1.sub_dim() as f64).abs();
        let sym = (g - g.transpose()).norm();
        if rel > 1e-8 || psd > 1e-9 || trace > 1e-8 || sym != 0.0 {
            failures += 1;
        }
        worst_rel = worst_rel.max(rel);
        worst_psd = worst_psd.max(psd);
        worst_trace = worst_trace.max(trace);
        worst_sym = worst_sym.max(sym);
    }
    let elapsed = start.elapsed();
    check(
        failures == 0 && elapsed < Duration::from_secs(30),
        format!(
            "{failures}/200 pairs out of tolerance; max rel. Frobenius vs trapezoid {worst_rel:.3e} \
             (vs Richardson-extrapolated trapezoid {worst_extrapolated:.3e}), max -min_eig/max_eig {worst_psd:.3e}, max |trace - d| {worst_trace:.3e}, \
             max asymmetry {worst_sym:.1e}; {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn boundary_constraints() -> Outcome {
    let mut worst: f64 = 0.0;
    for (s1, s2) in subspace_pairs() {
        let cs = cs_decompose(&s1, &s2).unwrap();
        let comp = complete(&s1);
        let start = flow_point(&cs, &comp, 0.0).unwrap();
        let end = flow_point(&cs, &comp, 1.0).unwrap();
        for a in principal_angles(&start, &s1).unwrap() {
            worst = worst.max(a);
        }
        for a in principal_angles(&end, &s2).unwrap() {
            worst = worst.max(a);
        }
    }
    check(worst <= 1e-8, format!("largest endpoint angle {worst:.3e} rad over 200 pairs"))
}

fn case1_reproduction() -> Outcome {
    let start = Instant::now();
    let cfg = case1(&[]);
    let n = cfg.n_structures().unwrap();
    let shape_ok = n == 18
        && cfg.chain.subspace_dim == SubspaceDim::Fixed(5)
        && cfg.chain.labelled_healthy_fraction == 0.2
        && matches!(cfg.features, FeatureConfig::Frequency { noise_frac, n_reps: 100, .. } if noise_frac == 0.008);
    let template = cfg.template().unwrap();
    let fixed100 = Stopping::Fixed { n_realisations: 100 };
    let run = |chains: Vec<Vec<usize>>, methods: &[Method]| {
        let specs = chains
            .iter()
            .flat_map(|c| methods.iter().map(|&m| cfg.spec(c.clone(), m)))
            .collect();
        let exp = ExperimentConfig {
            chains: specs,
            stopping: fixed100,
            master_seed: cfg.seed,
            channels: vec![0],
        };
        run_experiment(&template, &exp).unwrap()
    };

    // (a) direct linear hop collapses to one class in every realisation.
    let direct = &run(vec![vec![1, n]], &[Method::Linear])[0];
    let mut collapse_ok = direct.accuracy_std == 0.0;
    for r in &direct.results {
        let used: Vec<usize> = (0..r.classes.len())
            .filter(|&c| r.confusion.iter().any(|row| row[c] > 0))
            .collect();
        let prevalence = match used.as_slice() {
            [c] => r.confusion[*c][*c] as f64 / r.n_unlabelled() as f64,
            _ => f64::NAN,
        };
        collapse_ok &= r.final_accuracy == prevalence;
    }
    let a = format!(
        "(a) K=0 linear {:.2} ± {:.2} %{}",
        100.0 * direct.accuracy_mean,
        100.0 * direct.accuracy_std,
        if collapse_ok { " = predicted-class prevalence" } else { " NOT a deterministic collapse" }
    );

    // (b) every intermediate, gfk.
    let all = &run(vec![(1..=n).collect()], &[Method::Gfk])[0];
    let b_ok = all.accuracy_mean >= 0.99;
    let b = format!("(b) K={} gfk {:.2} %", n - 2, 100.0 * all.accuracy_mean);

    // (c) search winners per k, re-evaluated.
    let search = cfg.search.clone().unwrap();
    let mut winners = BTreeMap::new();
    for m in [Method::Linear, Method::Gfk] {
        let base = cfg.spec(vec![1, n], m);
        let rows = search_chains(&template, &base, 0, &[0, 1, 2, 3, 4], search.n_chains, search.n_realisations, cfg.seed)
            .unwrap();
        for r in rows {
            winners.insert((r.k, m), r.chain);
        }
    }
    let specs = winners.iter().map(|(&(_, m), c)| cfg.spec(c.clone(), m)).collect();
    let eval = run_experiment(
        &template,
        &ExperimentConfig {
            chains: specs,
            stopping: fixed100,
            master_seed: cfg.seed,
            channels: vec![0],
        },
    )
    .unwrap();
    let by_key: BTreeMap<(usize, Method), (f64, f64)> = eval
        .iter()
        .map(|r| ((r.spec.n_intermediates(), r.spec.method), (r.accuracy_mean, r.accuracy_std)))
        .collect();
    let mut c_ok = true;
    let mut c = String::from("(c)");
    for k in 0..=4 {
        let (lm, ls) = by_key[&(k, Method::Linear)];
        let (gm, gs) = by_key[&(k, Method::Gfk)];
        let pooled = ((ls * ls + gs * gs) / 2.0).sqrt();
        c_ok &= gm >= lm - pooled;
        c += &format!(" k={k}: gfk {:.2} vs linear {:.2} ± {:.2};", 100.0 * gm, 100.0 * lm, 100.0 * pooled);
    }
    let elapsed = start.elapsed();
    check(
        shape_ok && collapse_ok && b_ok && c_ok && elapsed < Duration::from_secs(600),
        format!("{a}; {b}; {c} {:.0} s", elapsed.as_secs_f64()),
    )
}

fn collapse_arithmetic() -> Outcome {
    // 80 healthy of which 40 labelled, 50 of d1, 50 of d2.
    let labels: Vec<Label> = (0..180).map(|i| if i < 80 { 0 } else if i < 130 { 1 } else { 2 }).collect();
    let mask = (0..180).map(|i| i < 40).collect();
    let meta = DatasetMeta { structure_index: 2, kind: FeatureKind::Frf, sensor: Some(1) };
    let target = DomainDataset::new(DMatrix::zeros(180, 1), labels.clone(), mask, meta).unwrap();
    let pct = |pred: &[Label]| format!("{:.4}", 100.0 * score_predictions(&target, pred).unwrap().final_accuracy);
    let healthy = pct(&[HEALTHY; 180]);
    let d1 = pct(&[1; 180]);
    let healthy_d1 = pct(&labels.iter().map(|&l| l.min(1)).collect::<Vec<_>>());
    check(
        healthy == "28.5714" && d1 == "35.7143" && healthy_d1 == "64.2857",
        format!("all-healthy {healthy} %, all-d1 {d1} %, healthy+d1 {healthy_d1} %"),
    )
}

fn nca_postconditions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6e6361);
    let mut worst_mean: f64 = 0.0;
    let mut worst_std: f64 = 0.0;
    for _ in 0..50 {
        let m = rng.random_range(10..=100);
        let dim = rng.random_range(1..30);
        // Feature-like data: offsets at most a thousand standard deviations.
        let scales: Vec<f64> = (0..dim).map(|_| 10f64.powf(rng.random_range(-3.0..3.0))).collect();
        let offsets: Vec<f64> = scales.iter().map(|s| s * rng.random_range(-1e3..1e3)).collect();
        let healthy = DMatrix::from_fn(m, dim, |_, j| offsets[j] + scales[j] * rng.sample::<f64, _>(StandardNormal));
        let t = nca_fit(&healthy).unwrap();
        let z = nca_apply(&t, &healthy).unwrap();
        for col in z.column_iter() {
            let mu = col.sum() / m as f64;
            let sd = (col.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (m as f64 - 1.0)).sqrt();
            worst_mean = worst_mean.max(mu.abs());
            worst_std = worst_std.max((sd - 1.0).abs());
        }
    }
    check(
        worst_mean <= 1e-12 && worst_std <= 1e-12,
        format!("max |mean| {worst_mean:.2e}, max |std - 1| {worst_std:.2e} over 50 datasets"),
    )
}

fn beam_oracle() -> Outcome {
    let deck = |n_elements| StructureParams {
        deck_length: 32.0,
        deck_ei: 4.00166666666667e10,
        deck_rho_a: 38465.0,
        n_elements,
        supports: vec![],
        boundary_springs: 1e12,
        point_masses: vec![],
        damping_ratio: 0.01,
        patches: vec![],
    };
    let p = deck(200);
    let (k, m) = assemble(&p).unwrap();
    let f1 = solve_modes(&k, &m, 1).unwrap().frequencies[0];
    let analytic = (PI / p.deck_length).powi(2) * (p.deck_ei / p.deck_rho_a).sqrt() / (2.0 * PI);
    let rel = (f1 - analytic).abs() / analytic;

    let base = case1(&[]).structure;
    let (k0, m0) = assemble(&base).unwrap();
    let healthy = solve_modes(&k0, &m0, 15).unwrap().frequencies;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6265616d);
    let mut violations = 0;
    for _ in 0..50 {
        let extent = rng.random_range(0.01..0.2);
        let centre = rng.random_range(extent / 2.0..1.0 - extent / 2.0);
        let d = DamageSpec::DeckPatch { centre, extent, ei_factor: rng.random_range(0.05..1.0) };
        let damaged = apply_damage(&base, &d).unwrap();
        let (kd, md) = assemble(&damaged).unwrap();
        let f = solve_modes(&kd, &md, 15).unwrap().frequencies;
        violations += f.iter().zip(&healthy).filter(|(d, h)| d > h).count();
    }
    check(
        rel < 0.005 && violations == 0,
        format!("pinned f1 {f1:.5} Hz vs analytic {analytic:.5} Hz (rel. {rel:.2e}); {violations} frequency increases over 50 damage draws"),
    )
}

fn path_length_bound() -> Outcome {
    let mut bad = Vec::new();
    let cfg = case1(&[]);
    let template = cfg.template().unwrap();
    let data = template
        .realise(&template.indices(), 0, cfg.seed, 0, cfg.chain.labelled_healthy_fraction)
        .unwrap();
    let raw: Vec<DMatrix<f64>> = data.iter().map(|d| d.features.clone()).collect();
    let aligned = align_domains(&data, &Aligner::Nca).unwrap();
    for (name, chain) in [("case1 raw", raw), ("case1 aligned", aligned)] {
        let r = path_length(&chain).unwrap();
        if r.total < r.direct - 1e-8 {
            bad.push(name.to_string());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x7061);
    for i in 0..100 {
        let len = rng.random_range(2..8);
        let dim = rng.random_range(1..6);
        let chain: Vec<DMatrix<f64>> = (0..len)
            .map(|_| {
                let shift: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
                let mix = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let z = DMatrix::from_fn(40, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let mut x = z * mix;
                for mut row in x.row_iter_mut() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v += shift[j];
                    }
                }
                x
            })
            .collect();
        let r = path_length(&chain).unwrap();
        if r.total < r.direct - 1e-8 {
            bad.push(format!("random chain {i}"));
        }
    }
    check(bad.is_empty(), format!("2 generated chains and 100 random chains; violations: {bad:?}"))
}

fn sem_stopping() -> Outcome {
    let rule = Stopping::Sem { sem_target: 0.01, min: 25, max: 10_000, batch: 25 };

    let cfg = case1(&["features.noise_frac=0.0", "chain.aligner=\"none\"", "chain.subspace_dim=1"]);
    let template = cfg.template().unwrap();
    let exp = ExperimentConfig {
        chains: vec![cfg.spec(vec![1, cfg.n_structures().unwrap()], Method::Linear)],
        stopping: rule,
        master_seed: cfg.seed,
        channels: vec![0],
    };
    let row = &run_experiment(&template, &exp).unwrap()[0];
    let accs: Vec<f64> = row.results.iter().map(|r| r.final_accuracy).collect();
    let zero_noise = row.results.len() == 25 && sem(&accs) == 0.0 && row.converged;

    // Alternating 0/1 has SEM 1/(2·sqrt(n - 1)) at even n, first below 0.01
    // past n = 2501, i.e. at the 2525 batch boundary.
    let (stream, converged) = run_until(
        &rule,
        |first, count| Ok((first..first + count).map(|i| (i % 2) as f64).collect()),
        |&v| v,
    )
    .unwrap();
    let synthetic = stream.len() == 2525 && converged;
    check(
        zero_noise && synthetic,
        format!(
            "zero-noise chain stopped at {} with SEM {:e}; alternating stream stopped at {} (expected 2525)",
            row.results.len(),
            sem(&accs),
            stream.len()
        ),
    )
}

fn collect_outputs(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if matches!(path.extension().and_then(|e| e.to_str()), Some("csv" | "json")) {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = configs_dir().join("case1.toml");
    let out = tmp.path().join("out");
    let geoflow = |cmd: &str| {
        Command::new(env!("CARGO_BIN_EXE_geoflow"))
            .args([cmd, "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .args(["--set", "harness.n_realisations=10"])
            .output()
            .unwrap()
    };
    let gen = geoflow("generate");
    if !gen.status.success() {
        return Err(format!("generate failed: {}", String::from_utf8_lossy(&gen.stderr)));
    }
    let mut runs = Vec::new();
    for _ in 0..2 {
        let t = geoflow("transfer");
        if !t.status.success() {
            return Err(format!("transfer failed: {}", String::from_utf8_lossy(&t.stderr)));
        }
        runs.push(collect_outputs(&out.join("transfer")));
    }
    let differing: Vec<_> = runs[0]
        .iter()
        .filter(|(p, bytes)| runs[1].get(*p) != Some(bytes))
        .map(|(p, _)| p.display().to_string())
        .collect();
    check(
        !runs[0].is_empty() && runs[0].len() == runs[1].len() && differing.is_empty(),
        format!("{} output files compared; differing: {differing:?}", runs[0].len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 GFK closed form vs quadrature", gfk_correctness),
        ("2 geodesic boundary constraints", boundary_constraints),
        ("3 beam chain reproduction", case1_reproduction),
        ("4 collapse arithmetic", collapse_arithmetic),
        ("5 NCA post-conditions", nca_postconditions),
        ("6 beam FEM oracle", beam_oracle),
        ("7 path-length bound", path_length_bound),
        ("8 SEM stopping rule", sem_stopping),
        ("9 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
