//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a subset.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use auxtde::evalkit::{
    bootstrap_gap, mean_abs_error, mid, random_scenario, rmse, run_benchmark, synthesize_observations, BenchmarkPlan,
    Method, RoomConfig, Scenario, SourceKind,
};
use auxtde::oracle::{grid_search_max, GridSpec};
use auxtde::solver::{
    assemble_quadratic, objective_value, run_auxtde, run_auxtde_observed, sinc, solve_td_update, two_channel_update,
    update_amplitudes, update_aux, AmpMode, Init, SolverConfig, SolverEvent, Stage,
};
use auxtde::spectrum::{derive_pair_params, estimate_covariance, Amplitudes};
use auxtde::{frame_and_transform, FrameConfig, SpectraTensor, TdVector};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn spectra(sc: &Scenario) -> SpectraTensor {
    let sig = synthesize_observations(sc).unwrap();
    frame_and_transform(&sig, &FrameConfig::default()).unwrap()
}

fn psd_floor(mat: &DMatrix<f64>) -> f64 {
    let min = mat.clone().symmetric_eigenvalues().min();
    min / mat.trace().abs().max(f64::MIN_POSITIVE)
}

fn rel_drop(before: f64, after: f64) -> f64 {
    (before - after) / before.abs().max(f64::MIN_POSITIVE)
}

fn c1_majorization() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bound = |th0: f64, th: f64| th0.cos() - 0.5 * sinc(th0) * (th * th - th0 * th0);
    let mut worst = f64::NEG_INFINITY;
    let mut touch = 0.0f64;
    for _ in 0..100_000 {
        let th0: f64 = rng.random_range(-PI..=PI);
        let th: f64 = rng.random_range(-6.0 * PI..6.0 * PI);
        worst = worst.max(bound(th0, th) - th.cos());
        for t in [th0, -th0] {
            touch = touch.max((bound(th0, t) - t.cos()).abs());
        }
    }
    Verdict::new(worst <= 1e-12 && touch <= 1e-12, format!("max violation {worst:.2e}, equality gap {touch:.2e}"))
}

/// Largest relative decrease over delay/amplitude updates and worst PSD
/// ratios of the curvature sum and the rotated covariances, over the runs.
struct MonotoneStats {
    worst_drop: f64,
    worst_curvature: f64,
    worst_rotated: f64,
    runs: usize,
}

fn monotone_runs() -> MonotoneStats {
    let room = RoomConfig { duration: 2.0, ..RoomConfig::default() };
    let modes = [AmpMode::Unit, AmpMode::Freq, AmpMode::Shared];
    let mut stats = MonotoneStats {
        worst_drop: f64::NEG_INFINITY,
        worst_curvature: f64::INFINITY,
        worst_rotated: f64::INFINITY,
        runs: 0,
    };
    for i in 0..100u64 {
        let m = [2, 4, 8][i as usize % 3];
        let snr = [0.0, 10.0, 20.0][(i as usize / 3) % 3];
        let sc = random_scenario(&room, m, Some(snr), 1000 + i).unwrap();
        let sp = spectra(&sc);
        let cfg = SolverConfig {
            amp_mode: modes[(i as usize / 9) % 3],
            reference: i as usize % m,
            ..SolverConfig::default()
        };
        let mut checked_rotations = usize::MAX;
        let out = run_auxtde_observed(&sp, &cfg, |ev| match ev {
            SolverEvent::Delay { model, before, after, .. } => {
                stats.worst_drop = stats.worst_drop.max(rel_drop(before, after));
                stats.worst_curvature = stats.worst_curvature.min(psd_floor(&model.full_curvature));
            }
            SolverEvent::Amplitude { outer, rotated, before, after } => {
                stats.worst_drop = stats.worst_drop.max(rel_drop(before, after));
                // The rotated set only changes between outer iterations.
                if checked_rotations != outer {
                    checked_rotations = outer;
                    for v in rotated {
                        stats.worst_rotated = stats.worst_rotated.min(psd_floor(v));
                    }
                }
            }
            SolverEvent::Noise { .. } => {}
        })
        .unwrap();
        for w in out.trace.windows(2) {
            if matches!(w[1].stage, Stage::Delay | Stage::Amplitude) {
                stats.worst_drop = stats.worst_drop.max(rel_drop(w[0].objective, w[1].objective));
            }
        }
        stats.runs += 1;
    }
    stats
}

fn c2_monotone(stats: &MonotoneStats) -> Verdict {
    Verdict::new(
        stats.worst_drop <= 1e-10,
        format!("{} runs, largest relative decrease {:.2e}", stats.runs, stats.worst_drop),
    )
}

fn c11_psd(stats: &MonotoneStats) -> Verdict {
    Verdict::new(
        stats.worst_curvature >= -1e-10 && stats.worst_rotated >= -1e-10,
        format!(
            "min eig/trace: curvature {:.2e}, rotated covariance {:.2e}",
            stats.worst_curvature, stats.worst_rotated
        ),
    )
}

fn converge_cfg() -> SolverConfig {
    SolverConfig { iters_td: 200, tol: 1e-12, ..SolverConfig::default() }
}

fn c3_oracle() -> Verdict {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let sc = Scenario::from_delays(&[0.0, 2.0996], 16000.0, Some(10.0), 5.0, 300 + seed).unwrap();
        let sp = spectra(&sc);
        let out = run_auxtde(&sp, &converge_cfg()).unwrap();
        let cov = estimate_covariance(&sp).unwrap();
        let u = out.params.amps.whitened(&out.params.sigma);
        let pp = derive_pair_params(&cov, &u, &out.params.sigma).unwrap();
        let spec = GridSpec { refine_passes: 5, ..GridSpec::around(TdVector::new(vec![0.0, 2.0], 0).unwrap()) };
        let res = grid_search_max(&pp, &u, &spec).unwrap();
        worst = worst.max((res.tau.get(1) - out.params.tau.get(1)).abs());
    }
    Verdict::new(worst <= 1e-6, format!("20 seeds, max |solver - grid| {worst:.2e} samples"))
}

/// Gaussian noise smoothed by a Gaussian kernel, a low-pass stand-in for speech.
fn lowpass_source(len: usize, width: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = (4.0 * width).ceil() as usize;
    let white: Vec<f64> = (0..len + 2 * half).map(|_| rng.sample(StandardNormal)).collect();
    let kernel: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let x = i as f64 - half as f64;
            (-0.5 * (x / width).powi(2)).exp()
        })
        .collect();
    (0..len).map(|n| kernel.iter().zip(&white[n..]).map(|(k, w)| k * w).sum()).collect()
}

fn c4_basin() -> Verdict {
    let mut sc = Scenario::from_delays(&[0.0, 2.0996], 16000.0, Some(10.0), 5.0, 44).unwrap();
    sc.source_kind = SourceKind::Recorded(lowpass_source(sc.num_samples() + 256, 2.0, 45));
    let sp = spectra(&sc);
    let cov = estimate_covariance(&sp).unwrap();
    let ones = Amplitudes::ones(2, cov.num_bins());
    let pp = derive_pair_params(&cov, &ones, &[1.0, 1.0]).unwrap();

    // Unimodal period around the global maximum, found on a fine scan.
    let step = 0.01;
    let grid: Vec<f64> = (0..=8000).map(|i| -40.0 + i as f64 * step).collect();
    let vals: Vec<f64> = grid
        .iter()
        .map(|&t| objective_value(&pp, &TdVector::new(vec![0.0, t], 0).unwrap(), &ones))
        .collect();
    let peak = (0..vals.len()).max_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    let mut lo = peak;
    while lo > 0 && vals[lo - 1] < vals[lo] {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < vals.len() && vals[hi + 1] < vals[hi] {
        hi += 1;
    }
    let basin = (grid[lo], grid[hi]);

    let cfg = |init: f64| SolverConfig {
        init: Init::Given(TdVector::new(vec![0.0, init], 0).unwrap()),
        iters_td: 5000,
        iters_outer: 1,
        tol: 1e-12,
        update_noise: false,
        ..SolverConfig::default()
    };
    let mut monotone = true;
    let mut inside = Vec::new();
    for init in (2..=29).step_by(3).map(f64::from) {
        let out = run_auxtde(&sp, &cfg(init)).unwrap();
        monotone &= out.trace.windows(2).all(|w| rel_drop(w[0].objective, w[1].objective) <= 1e-10);
        if init > basin.0 && init < basin.1 {
            inside.push(out.params.tau.get(1));
        }
    }
    let spread = inside.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - inside.iter().copied().fold(f64::INFINITY, f64::min);
    Verdict::new(
        monotone && inside.len() >= 2 && spread < 1e-6,
        format!(
            "basin ({:.2}, {:.2}), {} of 10 inits inside, spread {spread:.2e}, monotone {monotone}",
            basin.0,
            basin.1,
            inside.len()
        ),
    )
}

fn c5_consistency() -> Verdict {
    let sc = random_scenario(&RoomConfig::default(), 8, Some(20.0), 55).unwrap();
    let sp = spectra(&sc);
    let mut fam = Vec::new();
    let mut values = Vec::new();
    for r in 0..8 {
        let out = run_auxtde(&sp, &SolverConfig { reference: r, ..converge_cfg() }).unwrap();
        values.push(out.trace.last().unwrap().objective);
        fam.push(out.params.tau);
    }
    let mid = mid(&fam).unwrap();
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = (hi - lo) / hi.abs();
    Verdict::new(mid < 1e-9 && spread <= 1e-10, format!("MID {mid:.2e}, objective spread {spread:.2e}"))
}

fn c6_gcc_quantization() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let scenarios = (0..500)
        .map(|i| {
            let d: f64 = rng.random_range(-10.0..10.0);
            Scenario::from_delays(&[0.0, d], 16000.0, None, 2.0, 600 + i).unwrap()
        })
        .collect();
    let plan = BenchmarkPlan {
        scenarios,
        methods: vec![Method::PwGcc],
        estimator: Default::default(),
        geometric_max_lag: true,
        jobs: None,
    };
    let res = run_benchmark(&plan).unwrap().results;
    let r = rmse(&res, Method::PwGcc).unwrap().rmse;
    let mae = mean_abs_error(&res, Method::PwGcc).unwrap();
    Verdict::new(
        (r - 0.289).abs() <= 0.02 && (mae - 0.25).abs() <= 0.02,
        format!("RMSE {r:.4}, mean abs error {mae:.4}"),
    )
}

fn c7_ordering() -> Verdict {
    let order = [Method::Auxtde(AmpMode::Unit), Method::PwAuxtde, Method::PwParafit, Method::PwGcc];
    let plan = BenchmarkPlan::random(&RoomConfig::default(), 8, Some(20.0), 200, 7, order.to_vec()).unwrap();
    let res = run_benchmark(&plan).unwrap().results;
    let mut detail = Vec::new();
    let mut pass = true;
    for m in order {
        match rmse(&res, m) {
            Ok(s) => detail.push(format!("{m} {:.4e} ({} excluded)", s.rmse, s.excluded)),
            Err(e) => {
                pass = false;
                detail.push(format!("{m} {e}"));
            }
        }
    }
    for w in order.windows(2) {
        match bootstrap_gap(&res, w[0], w[1], 2000, 0.95, 77) {
            Ok(g) => {
                pass &= g.a_better();
                detail.push(format!("gap {}-{} [{:.2e}, {:.2e}]", w[0], w[1], g.lo, g.hi));
            }
            Err(e) => {
                pass = false;
                detail.push(e.to_string());
            }
        }
    }
    Verdict::new(pass, detail.join("; "))
}

/// Per-channel SNR for the microphone sweep.
const SWEEP_SNR_DB: f64 = -5.0;

fn c8_scaling() -> Verdict {
    let methods = vec![Method::Auxtde(AmpMode::Unit), Method::PwAuxtde];
    let mut by_m = Vec::new();
    for m in [2, 4, 8, 12] {
        let plan = BenchmarkPlan::random(&RoomConfig::default(), m, Some(SWEEP_SNR_DB), 100, 80 + m as u64, methods.clone()).unwrap();
        let res = run_benchmark(&plan).unwrap().results;
        let get = |method| rmse(&res, method).map(|s| s.rmse).unwrap_or(f64::NAN);
        by_m.push((m, get(methods[0]), get(methods[1])));
    }
    let (_, aux2, pw2) = by_m[0];
    let (_, aux12, pw12) = by_m[3];
    let aux_gain = 1.0 - aux12 / aux2;
    let pw_change = (pw12 / pw2 - 1.0).abs();
    let table: Vec<String> = by_m.iter().map(|(m, a, p)| format!("M={m} {a:.4e}/{p:.4e}")).collect();
    Verdict::new(
        aux_gain >= 0.2 && pw_change < 0.1,
        format!(
            "SNR {SWEEP_SNR_DB} dB, AuxTDE/PW-AuxTDE: {}; AuxTDE gain {:.1}%, PW-AuxTDE change {:.1}%",
            table.join(", "),
            100.0 * aux_gain,
            100.0 * pw_change
        ),
    )
}

fn c9_two_channel_agreement() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let d: f64 = rng.random_range(-8.0..8.0);
        let snr: f64 = rng.random_range(0.0..30.0);
        let sc = Scenario::from_delays(&[0.0, d], 16000.0, Some(snr), 1.0, 900 + i).unwrap();
        let sig = synthesize_observations(&sc).unwrap();
        let sp = frame_and_transform(&sig, &FrameConfig::new(1024, 512).unwrap()).unwrap();
        let cov = estimate_covariance(&sp).unwrap();
        let pp = derive_pair_params(&cov, &Amplitudes::ones(2, cov.num_bins()), &[1.0, 1.0]).unwrap();
        let amp: Vec<f64> = (0..pp.num_bins()).map(|k| pp.amp(0, 1, k) + pp.amp(1, 0, k)).collect();
        let phase: Vec<f64> = (0..pp.num_bins()).map(|k| pp.phase(0, 1, k)).collect();
        let mut tau = TdVector::new(vec![0.0, d.round() + rng.random_range(-0.5..0.5)], 0).unwrap();
        for _ in 0..10 {
            let q = assemble_quadratic(&pp, &update_aux(&pp, &tau), 0).unwrap();
            let multi = solve_td_update(&q, &tau).unwrap();
            let scalar = two_channel_update(&amp, &phase, tau.get(1)).unwrap();
            worst = worst.max((multi.get(1) - scalar).abs());
            tau = multi;
        }
    }
    Verdict::new(worst <= 1e-12, format!("50 problems x 10 iterations, max difference {worst:.2e}"))
}

fn c10_amplitudes() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let rq = |v: &DMatrix<f64>, a: &[f64]| {
        let x = DVector::from_column_slice(a);
        (x.transpose() * v * &x)[0] / x.norm_squared()
    };
    let mut worst_drop = f64::NEG_INFINITY;
    let mut worst_dir = 0.0f64;
    for i in 0..1000 {
        let m = rng.random_range(2..9);
        let g = DMatrix::from_fn(m, m + 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut v = &g * g.transpose();
        let positive = i % 2 == 1;
        if positive {
            // A strong elementwise-positive rank-one term makes the dominant eigenvector positive.
            let w = DVector::from_fn(m, |_, _| rng.random_range(0.5..1.5));
            v += 4.0 * m as f64 * &w * w.transpose();
        }
        let set = vec![v.clone(); 2];
        let mut a = Amplitudes::shared(&vec![1.0 / (m as f64).sqrt(); m], 2);
        let mut prev = rq(&v, a.bin(0));
        for _ in 0..if positive { 2000 } else { 50 } {
            a = update_amplitudes(&set, &a, AmpMode::Freq).unwrap().amps;
            let now = rq(&v, a.bin(0));
            worst_drop = worst_drop.max(rel_drop(prev, now));
            prev = now;
        }
        if positive {
            let eig = v.clone().symmetric_eigen();
            let top = eig.eigenvalues.imax();
            let mut e = eig.eigenvectors.column(top).into_owned();
            if e.sum() < 0.0 {
                e = -e;
            }
            if e.iter().all(|&x| x > 0.0) {
                let x = DVector::from_column_slice(a.bin(0));
                worst_dir = worst_dir.max((x.normalize() - e.normalize()).norm());
            }
        }
    }
    Verdict::new(
        worst_drop <= 1e-10 && worst_dir <= 1e-8,
        format!("largest Rayleigh decrease {worst_drop:.2e}, max direction error {worst_dir:.2e}"),
    )
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let budgets = [5, 120, 60, 30, 60, 60, 300, 600, 10, 30, 120].map(Duration::from_secs);
    let mut failed = 0;
    let mut report = |n: usize, v: Verdict, took: Duration| {
        let in_time = took <= budgets[n - 1];
        let pass = v.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "criterion {n:>2}: {} ({}; {:.1} s of {} s)",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64(),
            budgets[n - 1].as_secs()
        );
    };

    let timed = |f: &dyn Fn() -> Verdict| {
        let t = Instant::now();
        let v = f();
        (v, t.elapsed())
    };
    let mono = (want(2) || want(11)).then(|| {
        let t = Instant::now();
        let s = monotone_runs();
        (s, t.elapsed())
    });

    let singles: [(usize, &dyn Fn() -> Verdict); 8] = [
        (1, &c1_majorization),
        (3, &c3_oracle),
        (4, &c4_basin),
        (5, &c5_consistency),
        (6, &c6_gcc_quantization),
        (7, &c7_ordering),
        (8, &c8_scaling),
        (9, &c9_two_channel_agreement),
    ];
    for n in 1..=11 {
        match n {
            2 | 11 => {
                if let Some((s, took)) = mono.as_ref().filter(|_| want(n)) {
                    let v = if n == 2 { c2_monotone(s) } else { c11_psd(s) };
                    report(n, v, *took);
                }
            }
            10 => {
                if want(10) {
                    let (v, took) = timed(&c10_amplitudes);
                    report(10, v, took);
                }
            }
            _ => {
                if want(n) {
                    let f = singles.iter().find(|(k, _)| *k == n).unwrap().1;
                    let (v, took) = timed(f);
                    report(n, v, took);
                }
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
