//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line, even on success.

mod common;

use std::collections::HashSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use stylekit::filter::ssim::C1;
use stylekit::filter::{
    keep_first, nearest_similarities, per_image_fidelities, run_pipeline, ssim, CategoryCounts, FilterConfig,
    GrayImage, Status,
};
use stylekit::metrics::{diversity, fidelity, EmbeddingSpace};
use stylekit::planner::{kmeans_spherical, KMeansParams};
use stylekit::ranking::{fit_bradley_terry, BtOptions};
use stylekit::report::{build_report, invalid_breakdown_table, metrics_table, MetricsCellInput, RunResult};
use stylekit::sampler::{fit_embedding_stats, sample_multivariate, sample_univariate, EmbeddingStats};
use stylekit::store::{
    save_image_set, save_runs, save_vocabulary, ComparisonRecord, GenerationMethod, Outcome, RunManifest,
    TokenVocabulary, TrainingMethod,
};
use stylekit::Error;

use common::*;

const STYLE: EmbeddingSpace = EmbeddingSpace::StyleAdapted;

type Criterion = (&'static str, fn() -> String);

fn main() {
    let criteria: [Criterion; 8] = [
        ("metric oracle", metric_oracle),
        ("fidelity invariants and diversity scaling", metric_invariants),
        ("spherical k-means", kmeans),
        ("multivariate sampler", sampler),
        ("bradley-terry", bradley_terry),
        ("filter pipeline", filter_pipeline),
        ("report rules", report_rules),
        ("end-to-end dry run", end_to_end),
    ];
    panic::set_hook(Box::new(|info| eprintln!("{info}")));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(detail) => println!("PASS [{}] {name}: {detail} ({:.2}s)", i + 1, start.elapsed().as_secs_f64()),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL [{}] {name}: {msg}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn metric_oracle() -> String {
    let start = Instant::now();
    let mut r = rng(0xF1DE);
    let (mut worst_f, mut worst_d) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let n = r.random_range(1..=8);
        let m = r.random_range(1..=8);
        let h = r.random_range(1..=16);
        let gen = matrix(&unit_rows(&mut r, n, h), true);
        let refs = matrix(&unit_rows(&mut r, m, h), true);
        let f = fidelity(&gen, &refs, STYLE).unwrap().value;
        worst_f = worst_f.max((f - naive_fidelity(&gen, &refs)).abs());

        // diversity does not need unit rows
        let raw = matrix(&gaussian_rows(&mut r, n, h), false);
        for g in [&gen, &raw] {
            worst_d = worst_d.max((diversity(g, STYLE).value - naive_diversity(g)).abs());
        }
    }
    let elapsed = start.elapsed();
    assert!(worst_f <= 1e-7, "fidelity deviates by {worst_f:e}");
    assert!(worst_d <= 1e-7, "diversity deviates by {worst_d:e}");
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    format!("200 fixtures, max deviation fidelity {worst_f:.1e}, diversity {worst_d:.1e}")
}

fn metric_invariants() -> String {
    let mut r = rng(0x1AB5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = r.random_range(1..=8);
        let m = r.random_range(1..=8);
        let h = r.random_range(1..=16);
        let v = matrix(&unit_rows(&mut r, n, h), true);
        let d = matrix(&unit_rows(&mut r, m, h), true);
        let f = fidelity(&v, &d, STYLE).unwrap().value;
        assert!((0.0..=1.0).contains(&f), "fidelity {f} out of [0, 1]");
        let swapped = fidelity(&d, &v, STYLE).unwrap().value;
        let mut pv: Vec<usize> = (0..n).collect();
        let mut pd: Vec<usize> = (0..m).collect();
        pv.shuffle(&mut r);
        pd.shuffle(&mut r);
        let permuted = fidelity(&v.select_rows(&pv).unwrap(), &d.select_rows(&pd).unwrap(), STYLE)
            .unwrap()
            .value;
        worst = worst.max((f - swapped).abs()).max((f - permuted).abs());
    }
    assert!(worst <= 1e-12, "symmetry/permutation deviation {worst:e}");

    let mut worst_scale = 0.0f64;
    for _ in 0..100 {
        let n = r.random_range(2..=8);
        let h = r.random_range(1..=16);
        let v = matrix(&gaussian_rows(&mut r, n, h), false);
        let base = diversity(&v, STYLE).value;
        for c in [0.5f32, 2.0, -1.0] {
            let scaled = diversity(&v.scaled(c).unwrap(), STYLE).value;
            let expected = f64::from(c.abs()) * base;
            worst_scale = worst_scale.max((scaled - expected).abs() / expected.max(1e-300));
        }
    }
    assert!(worst_scale <= 1e-12, "scaling deviation {worst_scale:e}");
    format!("1000 cases, max deviation {worst:.1e}; |c|·D holds for c in {{0.5, 2, -1}} (rel {worst_scale:.1e})")
}

fn kmeans() -> String {
    let mut r = rng(0xC1);
    let mut steps = 0usize;
    for case in 0..100u64 {
        let rows = r.random_range(4..=30);
        let h = r.random_range(2..=8);
        let k = r.random_range(1..=rows.min(6));
        let x = matrix(&unit_rows(&mut r, rows, h), true);
        let params = KMeansParams {
            k,
            restarts: 3,
            max_iter: 50,
            seed: case,
        };
        let res = kmeans_spherical(&x, params).unwrap();
        for w in res.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "case {case}: inertia rose {} -> {}", w[0], w[1]);
            steps += 1;
        }
        assert!(res.restart_inertias.iter().all(|&i| res.inertia <= i), "case {case}: not the best restart");
    }

    let x = matrix(&unit_rows(&mut r, 7, 5), true);
    let singletons = kmeans_spherical(&x, KMeansParams::new(7, 3)).unwrap();
    assert!(singletons.inertia.abs() <= 1e-12, "k = rows gave inertia {}", singletons.inertia);

    let bundles = antipodal_bundles();
    let points = rows_f64(&bundles);
    let (best, labels) = brute_force_two_partition(&points);
    let res = kmeans_spherical(&bundles, KMeansParams::new(2, 11)).unwrap();
    assert_eq!(canonical_labels(&res.assignments), labels, "bundle partition differs from brute force");
    assert!((res.inertia - best).abs() <= 1e-9, "inertia {} vs brute force {best}", res.inertia);

    let y = matrix(&unit_rows(&mut r, 40, 6), true);
    let a = kmeans_spherical(&y, KMeansParams::new(4, 99)).unwrap();
    let b = kmeans_spherical(&y, KMeansParams::new(4, 99)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.inertia.to_bits(), b.inertia.to_bits());
    format!("100 fixtures ({steps} monotone steps), k=rows inertia {:.1e}, bundles match brute force, repeat runs identical", singletons.inertia)
}

/// Three vectors near +e0 and three near -e0, interleaved.
fn antipodal_bundles() -> stylekit::store::EmbeddingMatrix {
    let jitter = [(0.05, 0.02), (-0.03, 0.04), (0.01, -0.05)];
    let mut rows = Vec::new();
    for (a, b) in jitter {
        for sign in [1.0f32, -1.0] {
            let v = [sign, a, b];
            let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            rows.push(v.iter().map(|x| x / n).collect::<Vec<f32>>());
        }
    }
    matrix(&rows, true)
}

fn covariance(samples: &[Vec<f64>]) -> Vec<f64> {
    let n = samples.len() as f64;
    let h = samples[0].len();
    let mean: Vec<f64> = (0..h).map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / n).collect();
    let mut cov = vec![0.0; h * h];
    for s in samples {
        for i in 0..h {
            for j in 0..h {
                cov[i * h + j] += (s[i] - mean[i]) * (s[j] - mean[j]) / n;
            }
        }
    }
    cov
}

fn draws(stats: &EmbeddingStats, seed: u64, count: u64, f: fn(&EmbeddingStats, u64, u64) -> stylekit::sampler::IdentityPayload) -> Vec<Vec<f64>> {
    (0..count)
        .into_par_iter()
        .map(|i| f(stats, seed, i).vector.unwrap())
        .collect()
}

fn ranked_vocab(rows: &[Vec<f32>]) -> TokenVocabulary {
    TokenVocabulary::from_ranked(token_names(rows.len()), matrix(rows, false)).unwrap()
}

fn sampler() -> String {
    const N: u64 = 100_000;
    let h = 8;
    let mut r = rng(0x5A);
    // correlated rows x = A z with a random lower-triangular A
    let a: Vec<Vec<f64>> = (0..h)
        .map(|i| (0..h).map(|j| if j <= i { r.random_range(-1.0..1.0) } else { 0.0 }).collect())
        .collect();
    let rows: Vec<Vec<f32>> = (0..300)
        .map(|_| {
            let z: Vec<f64> = (0..h).map(|_| r.sample(StandardNormal)).collect();
            (0..h).map(|i| (0..h).map(|j| a[i][j] * z[j]).sum::<f64>() as f32).collect()
        })
        .collect();
    let stats = fit_embedding_stats(&ranked_vocab(&rows), &HashSet::new()).unwrap();
    let mut target = stats.covariance.clone();
    for i in 0..h {
        target[i * h + i] += stats.shrinkage;
    }
    let sample_cov = covariance(&draws(&stats, 7, N, sample_multivariate));
    let frob = |m: &[f64]| m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = sample_cov.iter().zip(&target).map(|(s, t)| s - t).collect();
    let (dist, bound) = (frob(&diff), 0.05 * frob(&target));
    assert!(dist < bound, "covariance distance {dist} >= {bound}");

    // rows ±s_i e_i around a zero mean give an exactly diagonal covariance
    let diag_rows: Vec<Vec<f32>> = (0..h)
        .flat_map(|i| [1.0f32, -1.0].map(|sign| {
            let mut v = vec![0.0f32; h];
            v[i] = sign * (0.5 + 0.1 * i as f32);
            v
        }))
        .collect();
    let diag = fit_embedding_stats(&ranked_vocab(&diag_rows), &HashSet::new()).unwrap();
    for i in 0..h {
        for j in 0..h {
            if i != j {
                assert_eq!(diag.covariance_at(i, j), 0.0, "fixture covariance is not diagonal");
            }
        }
    }
    let uni = draws(&diag, 11, N, sample_univariate);
    let multi = draws(&diag, 12, N, sample_multivariate);
    let ks = (0..h)
        .map(|d| {
            let a: Vec<f64> = uni.iter().map(|v| v[d]).collect();
            let b: Vec<f64> = multi.iter().map(|v| v[d]).collect();
            ks_statistic(&a, &b)
        })
        .fold(0.0f64, f64::max);
    assert!(ks < 0.01, "max KS statistic {ks}");

    // a constant column and a fully constant vocabulary
    let mut mixed = unit_rows(&mut r, 30, 4);
    mixed.iter_mut().for_each(|row| row[0] = 0.3);
    let partial = fit_embedding_stats(&ranked_vocab(&mixed), &HashSet::new()).unwrap();
    assert_eq!(partial.std[0], 0.0);
    let constant = fit_embedding_stats(&ranked_vocab(&vec![vec![0.25f32, -0.5, 0.125]; 5]), &HashSet::new()).unwrap();
    for i in 0..500 {
        let v = sample_multivariate(&partial, 3, i).vector.unwrap();
        assert_eq!(v[0], partial.mean[0], "zero-variance dimension moved");
        for f in [sample_multivariate, sample_univariate] {
            assert_eq!(f(&constant, 3, i).vector.unwrap(), constant.mean, "constant vocabulary moved");
        }
    }
    format!("covariance distance {dist:.4} < {bound:.4}, diagonal KS {ks:.4} < 0.01, sigma=0 returns the mean")
}

fn records(wins: &[Vec<u32>]) -> Vec<ComparisonRecord> {
    let name = |i: usize| format!("m{i}");
    let mut out = Vec::new();
    for (i, row) in wins.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            for _ in 0..w {
                out.push(ComparisonRecord::new("p", "D", name(i), name(j), Outcome::AWins));
            }
        }
    }
    out
}

fn bradley_terry() -> String {
    let opts = BtOptions::default();
    let two = fit_bradley_terry(&records(&[vec![0, 2], vec![1, 0]]), &opts).unwrap();
    let ratio = two.strength("m0").unwrap() / two.strength("m1").unwrap();
    assert!((ratio - 2.0).abs() <= 1e-6, "ratio {ratio}");
    let (d0, d1) = (two.display("m0").unwrap(), two.display("m1").unwrap());
    assert!((d0 - 1060.21).abs() <= 0.01 && (d1 - 939.79).abs() <= 0.01, "displays {d0} {d1}");

    let mut r = rng(0xB7);
    for _ in 0..50 {
        let k = r.random_range(2..=6);
        let wins: Vec<Vec<u32>> = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 0 } else { r.random_range(1..=6) }).collect())
            .collect();
        let fit = fit_bradley_terry(&records(&wins), &opts).unwrap();
        for w in fit.log_likelihood_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12 * w[0].abs(), "log-likelihood fell {} -> {}", w[0], w[1]);
        }
    }

    let cyclic = fit_bradley_terry(&records(&[vec![0, 1, 0], vec![0, 0, 1], vec![1, 0, 0]]), &opts).unwrap();
    let spread = cyclic.strengths.iter().fold(0.0f64, |m, s| m.max((s - 1.0).abs()));
    assert!(spread <= 1e-4, "cyclic strengths {:?}", cyclic.strengths);

    // every 2-method table with counts 0..=3 and every 3-method table with counts 0..=2
    let mut tables: Vec<Vec<Vec<u32>>> = Vec::new();
    for c in 0..16u32 {
        tables.push(vec![vec![0, c % 4], vec![c / 4, 0]]);
    }
    for c in 0..729u32 {
        let d: Vec<u32> = (0..6).map(|p| c / 3u32.pow(p) % 3).collect();
        tables.push(vec![vec![0, d[0], d[1]], vec![d[2], 0, d[3]], vec![d[4], d[5], 0]]);
    }
    // a method that never plays makes the table a smaller one already listed
    tables.retain(|w| (0..w.len()).all(|i| (0..w.len()).any(|j| w[i][j] + w[j][i] > 0)));
    let results: Vec<Option<f64>> = tables
        .par_iter()
        .map(|wins| match fit_bradley_terry(&records(wins), &opts) {
            Ok(fit) => {
                let theta: Vec<f64> = fit.strengths.iter().map(|s| s.ln()).collect();
                let w: Vec<Vec<f64>> = wins.iter().map(|r| r.iter().map(|&x| f64::from(x)).collect()).collect();
                let grid = bt_grid_search(&w);
                let d = theta.iter().zip(&grid).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                Some(d)
            }
            Err(Error::NoRecords | Error::DisconnectedGraph { .. } | Error::UnboundedStrengths { .. }) => None,
            Err(e) => panic!("unexpected error {e} for {wins:?}"),
        })
        .collect();
    let fitted: Vec<f64> = results.into_iter().flatten().collect();
    let worst = fitted.iter().copied().fold(0.0, f64::max);
    assert!(worst <= 1e-2, "grid disagreement {worst}");
    format!(
        "ratio {ratio:.9}, displays {d0:.2}/{d1:.2}, cyclic spread {spread:.1e}, grid agreement on {} tables (max {worst:.1e})",
        fitted.len()
    )
}

fn png_set(dir: &Path, ids: &[String], images: &[GrayImage]) -> Vec<std::path::PathBuf> {
    fs::create_dir_all(dir).unwrap();
    write_pngs(dir, ids, images)
}

fn filter_pipeline() -> String {
    let tmp = tempfile::tempdir().unwrap();
    let h = 4;

    // g0 valid; g1 copy, defective and a pixel duplicate of g0; g2 defective and a duplicate
    let refs = image_set(ids("r", 2), vec![axis(h, 0), axis(h, 1)], vec![axis(h, 0), axis(h, 1)], None);
    let gids = ids("g", 3);
    let same = pattern_image(1, 16, 16);
    let pixels = png_set(&tmp.path().join("prec"), &gids, &[same.clone(), same.clone(), same]);
    let gen = image_set(
        gids,
        vec![axis(h, 2), axis(h, 0), axis(h, 2)],
        vec![axis(h, 0), axis(h, 3), axis(h, 3)],
        Some(pixels),
    );
    let rep = run_pipeline(&gen, &refs, &FilterConfig::new(0.9, 0.2)).unwrap();
    assert_eq!(rep.statuses, vec![Status::Valid, Status::Copy, Status::Defective], "precedence");

    // thresholds equal to the computed values do not flag
    let mut r = rng(0xF17);
    let n = 6;
    let bids = ids("b", n);
    let imgs: Vec<GrayImage> = (0..n as u64).map(|s| pattern_image(100 + s, 16, 16)).collect();
    let pixels = png_set(&tmp.path().join("bound"), &bids, &imgs);
    let gen = image_set(bids, unit_rows(&mut r, n, 8), unit_rows(&mut r, n, 8), Some(pixels));
    let refs = image_set(ids("r", 5), unit_rows(&mut r, 5, 8), unit_rows(&mut r, 5, 8), None);
    let near = nearest_similarities(&gen, &refs).unwrap();
    let fid = per_image_fidelities(&gen, &refs).unwrap();
    let i = (0..n).max_by(|&a, &b| near[a].0.total_cmp(&near[b].0)).unwrap();
    let copy_at = near[i].0;
    let below = f64::from_bits(copy_at.to_bits() - 1);
    let status = |copy: f64, def: f64, idx: usize| run_pipeline(&gen, &refs, &FilterConfig::new(copy, def)).unwrap().statuses[idx];
    assert_ne!(status(copy_at, 0.0, i), Status::Copy, "copy flagged at equality");
    assert_eq!(status(below, 0.0, i), Status::Copy, "copy missed just below");
    let j = (0..n).min_by(|&a, &b| fid[a].total_cmp(&fid[b])).unwrap();
    let def_at = fid[j];
    let above = f64::from_bits(def_at.to_bits() + 1);
    assert_ne!(status(1.0, def_at, j), Status::Defective, "defective flagged at equality");
    assert_eq!(status(1.0, above, j), Status::Defective, "defective missed just above");

    for _ in 0..20 {
        let (w, hh) = (r.random_range(11..=40), r.random_range(11..=40));
        let img = noise_image(&mut r, w, hh);
        assert_eq!(ssim(&img, &img).unwrap(), 1.0);
    }
    let constant = ssim(&GrayImage::filled(16, 16, 0), &GrayImage::filled(16, 16, 255)).unwrap();
    assert!((constant - 9.999e-5).abs() <= 1e-7, "constant-image SSIM {constant}");
    assert!((constant - C1 / (255.0 * 255.0 + C1)).abs() <= 1e-15);

    // A~B and B~C are near duplicates, A and C are not: C is only compared with A
    let sim = |a: usize, b: usize| -> stylekit::Result<f64> {
        Ok(match (a.min(b), a.max(b)) {
            (0, 1) | (1, 2) => 0.99,
            _ => 0.5,
        })
    };
    let chain = keep_first(&[0, 1, 2], 0.98, sim).unwrap();
    assert_eq!(chain, vec![(false, None), (true, Some(0.99)), (false, Some(0.5))]);

    let all = [Status::Valid, Status::Copy, Status::Defective, Status::MultipleSubjects, Status::Duplicate];
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let len = r.random_range(1..=500);
        let statuses: Vec<Status> = (0..len).map(|_| all[r.random_range(0..all.len())]).collect();
        let p = CategoryCounts::from_statuses(&statuses).percentages();
        let sum = p.copy + p.defective + p.multiple_subjects + p.duplicate;
        worst = worst.max((sum - p.total_invalid).abs());
    }
    assert!(worst <= 1e-9, "percentages drift {worst:e}");
    format!("precedence, strict boundaries, SSIM(a,a)=1 x20, constant SSIM {constant:.4e}, keep-first chain, percentage drift {worst:.1e}")
}

fn run(dataset: &str, training: TrainingMethod, generation: GenerationMethod) -> RunManifest {
    RunManifest {
        dataset_id: dataset.into(),
        training_method: training,
        generation_method: generation,
        copy_index: 1,
        image_set_ref: "unused.json".into(),
    }
}

fn counts(total: usize, copy: usize, defective: usize, multiple: usize, duplicate: usize) -> CategoryCounts {
    CategoryCounts {
        total,
        valid: total - copy - defective - multiple - duplicate,
        copy,
        defective,
        multiple_subjects: multiple,
        duplicate,
    }
}

fn report_rules() -> String {
    let row = RunResult {
        run: run("Virus", TrainingMethod::DB, GenerationMethod::Token),
        counts: counts(10_000, 8897, 287, 0, 778),
        fidelity: Some(0.5),
        diversity: Some(0.1),
    };
    let md = invalid_breakdown_table(std::slice::from_ref(&row), None).unwrap().to_markdown();
    let expected = "| **88.97%** | 2.87% | 0.00% | **7.78%** | **99.62%** |";
    assert!(md.lines().any(|l| l.contains("DB") && l.ends_with(expected)), "breakdown row not found in:\n{md}");

    let cell = |training, invalid| MetricsCellInput {
        dataset: "Virus".into(),
        training,
        generation: GenerationMethod::Token,
        fidelity: vec![0.61, 0.63],
        diversity: vec![0.2, 0.21],
        counts: counts(10_000, invalid, 0, 0, 0),
    };
    let table = metrics_table(&[cell(TrainingMethod::DB, 9600), cell(TrainingMethod::DbMtcL, 9500)], 3).unwrap();
    let texts: Vec<(String, String)> = table
        .rows
        .iter()
        .map(|r| {
            let c = r.cells[0].as_ref().unwrap();
            (c.fidelity_text.clone(), c.diversity_text.clone())
        })
        .collect();
    assert_eq!(texts[0], ("-".to_string(), "-".to_string()), "96% cell not excluded");
    assert!(texts[1].0 != "-" && texts[1].1 != "-", "95% cell excluded");

    let results = vec![
        row.clone(),
        RunResult {
            run: run("Virus", TrainingMethod::DbMtcL, GenerationMethod::Multivar),
            counts: counts(10_000, 2, 17, 0, 0),
            fidelity: Some(0.68),
            diversity: Some(0.2),
        },
    ];
    let first = build_report(&results, 3).unwrap();
    let second = build_report(&results, 3).unwrap();
    assert_eq!(first.to_markdown(), second.to_markdown());
    assert_eq!(first.breakdown.to_csv(), second.breakdown.to_csv());
    assert_eq!(first.metrics.to_csv(), second.metrics.to_csv());
    format!("row renders {expected}, 96% -> \"-\", 95% -> {:?}, re-render identical", texts[1].0)
}

fn stylekit(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_stylekit"))
        .arg("--workdir")
        .arg(dir)
        .arg("--seed")
        .arg("42")
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stylekit {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn normalized(v: impl Iterator<Item = f64>) -> Vec<f32> {
    let v: Vec<f64> = v.collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

/// Vectors behind each sampled identity: the token's embedding or the raw
/// sampled vector.
fn identity_vectors(jsonl: &str, vocab: &TokenVocabulary) -> Vec<Vec<f64>> {
    jsonl
        .lines()
        .map(|line| {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            match v["token_text"].as_str() {
                Some(t) => {
                    let row = vocab.entries().iter().position(|e| e.text == t).unwrap();
                    vocab.embedding(row).iter().map(|&x| f64::from(x)).collect()
                }
                None => v["vector"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect(),
            }
        })
        .collect()
}

const PER_RUN: usize = 20;

/// Builds the runs of one dataset from the sampled identities and writes
/// them with their PNGs; returns the runs manifest path.
fn write_runs(dir: &Path, vocab: &TokenVocabulary, identities: &[(GenerationMethod, Vec<Vec<f64>>)]) {
    let h = vocab.embeddings().dim();
    let mut r = rng(0xE2E);
    let ref_clip = unit_rows(&mut r, 8, h);
    let ref_style = unit_rows(&mut r, 8, h);
    let refs = image_set(ids("ref", 8), ref_clip.clone(), ref_style.clone(), None);
    save_image_set(&refs, dir.join("refs.json")).unwrap();

    let mut runs = Vec::new();
    let mut seed = 0u64;
    for training in [TrainingMethod::DB, TrainingMethod::DbMtcL] {
        for (generation, vectors) in identities {
            for copy in 1..=2u8 {
                let name = format!("{training}_{generation}_{copy}");
                let image_ids = ids("img", PER_RUN);
                let mut clip = Vec::new();
                let mut style = Vec::new();
                let mut images = Vec::new();
                for i in 0..PER_RUN {
                    let id = &vectors[(usize::from(copy) * PER_RUN + i) % vectors.len()];
                    let anchor = &ref_style[i % 8];
                    let noise: Vec<f64> = (0..h).map(|_| r.sample::<f64, _>(StandardNormal) * 0.1).collect();
                    style.push(normalized((0..h).map(|d| 0.7 * f64::from(anchor[d]) + 0.3 * id[d] + noise[d])));
                    clip.push(if i == 3 && training == TrainingMethod::DB {
                        ref_clip[0].clone()
                    } else {
                        normalized(id.iter().copied())
                    });
                    seed += 1;
                    // the last image repeats the first one's pixels
                    images.push(pattern_image(if i == PER_RUN - 1 { seed - i as u64 } else { seed }, 16, 16));
                }
                let pixels = png_set(&dir.join("png").join(&name), &image_ids, &images);
                let set = image_set(image_ids, clip, style, Some(pixels));
                let set_path = dir.join("sets").join(format!("{name}.json"));
                fs::create_dir_all(set_path.parent().unwrap()).unwrap();
                save_image_set(&set, &set_path).unwrap();
                runs.push(RunManifest {
                    dataset_id: "synth".into(),
                    training_method: training,
                    generation_method: *generation,
                    copy_index: copy,
                    image_set_ref: format!("sets/{name}.json").into(),
                });
            }
        }
    }
    save_runs(&runs, dir.join("runs.csv")).unwrap();
    let config = serde_json::json!({
        "datasets": {"synth": {"references": "refs.json", "copy_threshold": 0.95, "defective_threshold": 0.1}},
    });
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&config).unwrap()).unwrap();
}

const OUTPUTS: [&str; 12] = [
    "plan_rarest.json",
    "plan_clustered.json",
    "ids/rarest_token.jsonl",
    "ids/rarest_univar.jsonl",
    "ids/rarest_multivar.jsonl",
    "ids/clustered_token.jsonl",
    "ids/clustered_univar.jsonl",
    "ids/clustered_multivar.jsonl",
    "metrics.json",
    "filter.json",
    "out/report.md",
    "out_csv/metrics.csv",
];

fn pipeline(dir: &Path) -> Vec<Vec<u8>> {
    let vocab = common::vocab(64, 16, 0xB0C);
    save_vocabulary(&vocab, dir.join("vocab.json")).unwrap();
    let mut identities = Vec::new();
    for strategy in ["rarest", "clustered"] {
        let plan = format!("plan_{strategy}.json");
        stylekit(dir, &["plan", "--vocab", "vocab.json", "--n", "8", "--strategy", strategy, "--out", &plan]);
        for (mode, generation) in [
            ("token", GenerationMethod::Token),
            ("univar", GenerationMethod::Univar),
            ("multivar", GenerationMethod::Multivar),
        ] {
            let out = format!("ids/{strategy}_{mode}.jsonl");
            stylekit(dir, &["sample", "--plan", &plan, "--mode", mode, "--count", "400", "--out", &out]);
            let text = fs::read_to_string(dir.join(&out)).unwrap();
            assert_eq!(text.lines().count(), 400, "{out}");
            if strategy == "clustered" {
                identities.push((generation, identity_vectors(&text, &vocab)));
            }
        }
    }
    write_runs(dir, &vocab, &identities);
    let set = "sets/DB_Univar_1.json";
    stylekit(dir, &["metrics", "--generated", set, "--reference", "refs.json", "--out", "metrics.json"]);
    let summary = stylekit(
        dir,
        &["filter", "--generated", set, "--reference", "refs.json", "--copy-threshold", "0.95", "--defective-threshold", "0.1", "--out", "filter.json"],
    );
    assert!(summary.contains("1 copy") && summary.contains("1 duplicate"), "filter summary: {summary}");
    stylekit(dir, &["report", "--runs", "runs.csv", "--config", "config.json", "--out-dir", "out"]);
    stylekit(dir, &["report", "--runs", "runs.csv", "--config", "config.json", "--format", "csv", "--out-dir", "out_csv"]);
    OUTPUTS.iter().map(|p| fs::read(dir.join(p)).unwrap()).collect()
}

fn end_to_end() -> String {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let first = pipeline(tmp.path());
    let second = pipeline(tmp.path());
    for (name, (a, b)) in OUTPUTS.iter().zip(first.iter().zip(&second)) {
        assert!(a == b, "{name} differs between runs");
    }
    let report = String::from_utf8(first[10].clone()).unwrap();
    assert!(report.contains("## Invalid images") && report.contains("DB_MTC_L"), "report:\n{report}");
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    format!("two full passes, {} outputs byte-identical, all commands exit 0", OUTPUTS.len())
}
