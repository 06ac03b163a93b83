//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero if any fail.
//!
//! Run a subset with `cargo test -p lda-cgsp --test acceptance -- 3 7`.

use std::time::Instant;

use lda_cgsp::corpus::{Corpus, Document, Vocabulary};
use lda_cgsp::cvb0::{cvb0_estimates, cvb0_run, cvb0_sweep, Cvb0Init, VariationalState};
use lda_cgsp::estimators::{
    phi_p, phi_standard, recover_train, soft_counts, theta_naive_mc, theta_p, theta_p_single,
    theta_p_train, theta_standard, TrainThetaSource,
};
use lda_cgsp::eval::{convergence_trace, f1_metrics, perplexity_grid, Algorithm, TraceOptions};
use lda_cgsp::model::{rebuild_counts, Hyperparams, Recovery, SamplerState};
use lda_cgsp::oracle::{exact_posterior, exact_posterior_collapsed, phi_p_bounds, theta_bar};
use lda_cgsp::priorlda::{self, Preset, PriorLdaConfig};
use lda_cgsp::sampler::{
    init_state, run_chain, run_chains_map, sweep, ChainRng, ChainSchedule, FixedPhi, Kernel,
    SamplingMode, SparseSweeper,
};
use lda_cgsp::synthetic::{generate_labeled, generate_lda, LabeledSpec, LdaSpec, Synthetic};
use ndarray::{array, Array2};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

type Outcome = Result<String, String>;

fn vocab(v: usize) -> Vocabulary {
    Vocabulary::from_terms((0..v).map(|i| format!("w{i}")).collect()).unwrap()
}

fn corpus(docs: &[&[u32]], v: usize) -> Corpus {
    Corpus::new(
        docs.iter().map(|d| Document::new(d.to_vec())).collect(),
        vocab(v),
    )
    .unwrap()
}

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct FixedFixture {
    doc: Vec<u32>,
    phi: Array2<f64>,
    alpha: Vec<f64>,
}

fn fixed_fixtures() -> Vec<FixedFixture> {
    vec![
        FixedFixture {
            doc: vec![0, 1, 2, 0],
            phi: array![[0.6, 0.3, 0.1], [0.1, 0.3, 0.6]],
            alpha: vec![0.5, 0.5],
        },
        FixedFixture {
            doc: vec![0, 1, 2, 3, 1, 0],
            phi: array![
                [0.4, 0.3, 0.2, 0.1],
                [0.1, 0.2, 0.3, 0.4],
                [0.25, 0.05, 0.05, 0.65]
            ],
            alpha: vec![0.3, 0.6, 0.9],
        },
        FixedFixture {
            doc: vec![0, 0, 1, 2, 3, 3, 2, 1],
            phi: array![[0.5, 0.3, 0.15, 0.05], [0.05, 0.15, 0.3, 0.5]],
            alpha: vec![1.0, 0.2],
        },
        FixedFixture {
            doc: vec![3, 1],
            phi: array![
                [0.7, 0.1, 0.1, 0.1],
                [0.1, 0.7, 0.1, 0.1],
                [0.1, 0.1, 0.1, 0.7]
            ],
            alpha: vec![0.1, 0.1, 0.1],
        },
    ]
}

impl FixedFixture {
    fn corpus(&self) -> Corpus {
        corpus(&[&self.doc], self.phi.ncols())
    }

    fn hyper(&self) -> Hyperparams {
        Hyperparams::new(self.alpha.clone(), vec![0.01; self.phi.ncols()]).unwrap()
    }

    fn theta_bar(&self) -> Vec<f64> {
        let post =
            exact_posterior(&Document::new(self.doc.clone()), &self.phi, &self.alpha).unwrap();
        theta_bar(&post, &self.alpha).unwrap()
    }
}

fn criterion_1() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (i, fx) in fixed_fixtures().iter().enumerate() {
        let t0 = Instant::now();
        let c = fx.corpus();
        let h = fx.hyper();
        let fixed = FixedPhi::new(fx.phi.clone()).unwrap();
        let mode = SamplingMode::Predict(&fixed);
        // S = 4 chains x 2500 samples
        let schedule = ChainSchedule {
            burn_in: 50,
            lag: 5,
            samples: 2500,
            chains: 4,
            total_train_iters: 0,
            seed: 100 + i as u64,
        };
        let snaps = run_chains_map(
            &c,
            &h,
            &mode,
            &schedule,
            Kernel::Dense,
            |_, s| Ok(s.clone()),
        )
        .map_err(|e| e.to_string())?;
        let states: Vec<SamplerState> = snaps.into_iter().flatten().collect();
        let naive = theta_naive_mc(&states, &h).map_err(|e| e.to_string())?;
        let soft = theta_p(&states, &c, &h, &mode).map_err(|e| e.to_string())?;
        let bar = Array2::from_shape_vec((1, fx.alpha.len()), fx.theta_bar()).unwrap();
        let (dn, dp) = (max_abs(&naive, &bar), max_abs(&soft, &bar));
        let secs = t0.elapsed().as_secs_f64();
        ok &= dn <= 1e-2 && dp <= 1e-2 && secs <= 60.0;
        lines.push(format!("f{i}: naive {dn:.4} soft {dp:.4} in {secs:.1}s"));
    }
    check(ok, lines.join("; "))
}

fn criterion_2() -> Outcome {
    let fx = &fixed_fixtures()[1];
    let c = fx.corpus();
    let h = fx.hyper();
    let fixed = FixedPhi::new(fx.phi.clone()).unwrap();
    let mode = SamplingMode::Predict(&fixed);
    let bar = Array2::from_shape_vec((1, fx.alpha.len()), fx.theta_bar()).unwrap();
    let trials = 200;
    let schedule = ChainSchedule {
        burn_in: 50,
        lag: 1,
        samples: 1,
        chains: trials,
        total_train_iters: 0,
        seed: 2024,
    };
    let sq = |m: &Array2<f64>| {
        m.iter()
            .zip(&bar)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
    };
    let errs = run_chains_map(&c, &h, &mode, &schedule, Kernel::Dense, |_, s| {
        Ok((
            sq(&theta_standard(&s.counts, &h)),
            sq(&theta_p_single(s, &c, &h, &mode)?),
        ))
    })
    .map_err(|e| e.to_string())?;
    let errs: Vec<(f64, f64)> = errs.into_iter().flatten().collect();
    let mse_std = errs.iter().map(|e| e.0).sum::<f64>() / trials as f64;
    let mse_p = errs.iter().map(|e| e.1).sum::<f64>() / trials as f64;
    let wins = errs.iter().filter(|e| e.1 < e.0).count() as u64;
    let decided = errs.iter().filter(|e| e.1 != e.0).count() as u64;
    let p_value = if wins == 0 {
        1.0
    } else {
        Binomial::new(0.5, decided).unwrap().sf(wins - 1)
    };
    check(
        mse_p < mse_std && p_value < 0.01,
        format!("{trials} trials, MSE standard {mse_std:.3e} vs soft {mse_p:.3e}, soft wins {wins}/{decided}, sign-test p {p_value:.2e}"),
    )
}

/// Tallies the topic of every token every `thin` sweeps after burn-in.
fn tally<F: FnMut(&mut SamplerState, &mut ChainRng)>(
    mut state: SamplerState,
    rng: &mut ChainRng,
    k: usize,
    sweeps: usize,
    thin: usize,
    mut step: F,
) -> Vec<Vec<u64>> {
    let n: usize = state.z.iter().map(|z| z.len()).sum();
    let mut counts = vec![vec![0u64; k]; n];
    for _ in 0..200 {
        step(&mut state, rng);
    }
    for it in 1..=sweeps {
        step(&mut state, rng);
        if it % thin == 0 {
            for (j, &t) in state.z.iter().flatten().enumerate() {
                counts[j][t as usize] += 1;
            }
        }
    }
    counts
}

fn chi_square_p(observed: &[u64], expected: &[f64]) -> f64 {
    let total: u64 = observed.iter().sum();
    let mut stat = 0.0;
    let mut df = 0usize;
    for (&o, &p) in observed.iter().zip(expected) {
        let e = p * total as f64;
        if e > 0.0 {
            stat += (o as f64 - e).powi(2) / e;
            df += 1;
        }
    }
    if df < 2 {
        return 1.0;
    }
    ChiSquared::new((df - 1) as f64).unwrap().sf(stat)
}

/// Fraction of (token, seed) cells whose chi-square p-value exceeds 0.01.
fn marginal_pass_rate<F>(exact: &Array2<f64>, k: usize, mut run: F) -> f64
where
    F: FnMut(u64) -> Vec<Vec<u64>>,
{
    let (mut pass, mut cells) = (0, 0);
    for seed in 0..10 {
        let counts = run(seed);
        for (j, row) in counts.iter().enumerate() {
            let expected: Vec<f64> = (0..k).map(|t| exact[[j, t]]).collect();
            cells += 1;
            pass += (chi_square_p(row, &expected) > 0.01) as usize;
        }
    }
    pass as f64 / cells as f64
}

fn criterion_3() -> Outcome {
    const SWEEPS: usize = 20000;
    // successive sweeps are correlated; the test statistic uses every 10th
    const THIN: usize = 10;
    let mut lines = Vec::new();
    let mut ok = true;

    let fx = &fixed_fixtures()[0];
    let (c, h) = (fx.corpus(), fx.hyper());
    let fixed = FixedPhi::new(fx.phi.clone()).unwrap();
    let mode = SamplingMode::Predict(&fixed);
    let exact = exact_posterior(&c.documents[0], &fx.phi, &fx.alpha)
        .unwrap()
        .marginals();
    let rate = marginal_pass_rate(&exact, 2, |seed| {
        let mut rng = ChainRng::seed_from_u64(seed);
        let s = init_state(&c, &h, &mode, &mut rng, seed).unwrap();
        tally(s, &mut rng, 2, SWEEPS, THIN, |s, r| {
            sweep(s, &c, &h, &mode, r).unwrap()
        })
    });
    ok &= rate >= 0.95;
    lines.push(format!("dense fixed-phi {:.0}%", rate * 100.0));

    let c = corpus(&[&[0, 1, 1], &[2, 0, 2]], 3);
    let h = Hyperparams::new(vec![0.3, 0.9], vec![0.5, 0.4, 0.6]).unwrap();
    let exact = exact_posterior_collapsed(&c, &h).unwrap().marginals();
    let mode = SamplingMode::Train;
    let rate = marginal_pass_rate(&exact, 2, |seed| {
        let mut rng = ChainRng::seed_from_u64(seed);
        let s = init_state(&c, &h, &mode, &mut rng, seed).unwrap();
        tally(s, &mut rng, 2, SWEEPS, THIN, |s, r| {
            sweep(s, &c, &h, &mode, r).unwrap()
        })
    });
    ok &= rate >= 0.95;
    lines.push(format!("dense collapsed {:.0}%", rate * 100.0));
    let rate = marginal_pass_rate(&exact, 2, |seed| {
        let mut rng = ChainRng::seed_from_u64(seed);
        let s = init_state(&c, &h, &mode, &mut rng, seed).unwrap();
        let mut sparse = SparseSweeper::new(&s, &h);
        tally(s, &mut rng, 2, SWEEPS, THIN, |s, r| {
            sparse.sweep(s, &c, &h, r).unwrap()
        })
    });
    ok &= rate >= 0.95;
    lines.push(format!("sparse collapsed {:.0}%", rate * 100.0));

    let c = corpus(&[&[0, 1], &[1, 2, 0]], 3);
    let h = Hyperparams::new(vec![0.2, 0.5, 0.8], vec![0.3, 0.3, 0.7]).unwrap();
    let exact = exact_posterior_collapsed(&c, &h).unwrap().marginals();
    let rate = marginal_pass_rate(&exact, 3, |seed| {
        let mut rng = ChainRng::seed_from_u64(seed);
        let s = init_state(&c, &h, &mode, &mut rng, seed).unwrap();
        let mut sparse = SparseSweeper::new(&s, &h);
        tally(s, &mut rng, 3, SWEEPS, THIN, |s, r| {
            sparse.sweep(s, &c, &h, r).unwrap()
        })
    });
    ok &= rate >= 0.95;
    lines.push(format!("sparse collapsed K=3 {:.0}%", rate * 100.0));
    check(ok, format!("cells with p > 0.01: {}", lines.join(", ")))
}

/// Every assignment of a tiny corpus in index order.
fn all_assignments(c: &Corpus, k: usize) -> Vec<Vec<Vec<u32>>> {
    let n = c.total_tokens();
    let total = k.pow(n as u32);
    (0..total)
        .map(|mut x| {
            c.documents
                .iter()
                .map(|d| {
                    (0..d.len())
                        .map(|_| {
                            let t = (x % k) as u32;
                            x /= k;
                            t
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn criterion_4() -> Outcome {
    let fixtures: Vec<(Corpus, Hyperparams)> = vec![
        (
            corpus(&[&[0, 1, 1, 2], &[2, 3, 0, 0]], 4),
            Hyperparams::new(vec![0.1, 0.4], vec![0.01, 0.02, 0.05, 0.01]).unwrap(),
        ),
        (
            corpus(&[&[0, 1, 2], &[3, 3, 1]], 4),
            Hyperparams::symmetric(3, 0.5, 4, 0.1).unwrap(),
        ),
        (
            corpus(&[&[0, 2, 1, 1, 2]], 3),
            Hyperparams::symmetric(1, 0.1, 3, 0.01).unwrap(),
        ),
        (
            corpus(&[&[0], &[1, 0], &[2, 2, 1]], 3),
            Hyperparams::new(vec![1.0, 0.05], vec![0.5, 0.01, 0.1]).unwrap(),
        ),
    ];
    let (mut checked, mut violations) = (0usize, 0usize);
    for (c, h) in &fixtures {
        for z in all_assignments(c, h.num_topics()) {
            let s = SamplerState::from_assignments(z, c, h.num_topics(), 0).unwrap();
            let bounds = phi_p_bounds(&s, c, h).map_err(|e| e.to_string())?;
            for b in bounds.iter().flatten() {
                checked += 1;
                violations += !b.holds() as usize;
            }
        }
    }

    let syn = generate_lda(&LdaSpec {
        docs: 400,
        vocab: 100,
        topics: 5,
        mean_length: 50.0,
        alpha: 0.2,
        beta: 0.05,
        seed: 44,
    })
    .unwrap();
    let h = Hyperparams::symmetric(5, 0.1, 100, 0.01).unwrap();
    let mut widths = Vec::new();
    for size in [50, 100, 200, 400] {
        let mut sub = syn.corpus.clone();
        sub.documents.truncate(size);
        let s = run_chain(
            &sub,
            &h,
            &SamplingMode::Train,
            &ChainSchedule::single(100, 9),
            0,
        )
        .map_err(|e| e.to_string())?
        .pop()
        .unwrap();
        let bounds = phi_p_bounds(&s, &sub, &h).map_err(|e| e.to_string())?;
        for b in bounds.iter().flatten() {
            checked += 1;
            violations += !b.holds() as usize;
        }
        let w: Vec<f64> = bounds
            .iter()
            .flatten()
            .map(|b| b.relative_width())
            .collect();
        widths.push(w.iter().sum::<f64>() / w.len() as f64);
    }
    let decreasing = widths.windows(2).all(|w| w[1] < w[0]);
    check(
        violations == 0 && decreasing,
        format!(
            "{violations} violations in {checked} pairs; mean relative width over 50/100/200/400 docs: {}",
            widths.iter().map(|w| format!("{w:.3e}")).collect::<Vec<_>>().join(" > ")
        ),
    )
}

fn random_corpus(rng: &mut ChainRng, docs: usize, max_len: usize, v: usize) -> Corpus {
    let documents = (0..docs)
        .map(|_| {
            let n = rng.random_range(1..=max_len);
            Document::new((0..n).map(|_| rng.random_range(0..v as u32)).collect())
        })
        .collect();
    Corpus::new(documents, vocab(v)).unwrap()
}

fn random_labels(rng: &mut ChainRng, c: &mut Corpus, k: usize) {
    let lists = (0..c.num_docs())
        .map(|_| {
            let mut l: Vec<u32> = (0..k as u32).filter(|_| rng.random_bool(0.5)).collect();
            if l.is_empty() {
                l.push(rng.random_range(0..k as u32));
            }
            l
        })
        .collect();
    c.set_labels((0..k).map(|i| format!("l{i}")).collect(), lists)
        .unwrap();
}

fn rows_ok(m: &Array2<f64>, what: &str) -> Result<(), TestCaseError> {
    for (i, r) in m.rows().into_iter().enumerate() {
        let s: f64 = r.sum();
        prop_assert!((s - 1.0).abs() <= 1e-9, "{what} row {i} sums to {s}");
    }
    Ok(())
}

fn normalization_case(
    seed: u64,
    docs: usize,
    max_len: usize,
    v: usize,
    k: usize,
    a: f64,
    b: f64,
) -> Result<(), TestCaseError> {
    let mut rng = ChainRng::seed_from_u64(seed);
    let c = random_corpus(&mut rng, docs, max_len, v);
    let alpha: Vec<f64> = (0..k).map(|_| a * rng.random_range(0.5..2.0)).collect();
    let beta: Vec<f64> = (0..v).map(|_| b * rng.random_range(0.5..2.0)).collect();
    let h = Hyperparams::new(alpha, beta).unwrap();
    let mode = SamplingMode::Train;
    let e = |x: lda_cgsp::Error| TestCaseError::fail(x.to_string());

    let mut states = Vec::new();
    let mut s = init_state(&c, &h, &mode, &mut rng, seed).map_err(e)?;
    for _ in 0..2 {
        sweep(&mut s, &c, &h, &mode, &mut rng).map_err(e)?;
        states.push(s.clone());
    }
    prop_assert!(s.audit(&c).map_err(e)?);
    rows_ok(&theta_standard(&s.counts, &h), "theta")?;
    rows_ok(&phi_standard(&s.counts, &h), "phi")?;
    rows_ok(&phi_p(&s, &c, &h, &mode).map_err(e)?, "phi_p")?;
    for src in [
        TrainThetaSource::PhiStandard,
        TrainThetaSource::PhiP,
        TrainThetaSource::Collapsed,
    ] {
        rows_ok(&theta_p_train(&s, &c, &h, src).map_err(e)?, "theta_p train")?;
    }
    rows_ok(&theta_naive_mc(&states, &h).map_err(e)?, "naive mc")?;
    let m = soft_counts(&s, &c, &h, &mode).map_err(e)?;
    prop_assert!(
        m.conservation_error(&c) <= 1e-9,
        "soft counts off by {}",
        m.conservation_error(&c)
    );
    let est = recover_train(&s, &c, &h, &mode, Recovery::CgsP, Recovery::CgsP).map_err(e)?;
    prop_assert!(est.validate().is_ok());

    let fixed = FixedPhi::new(phi_standard(&s.counts, &h)).map_err(e)?;
    let pmode = SamplingMode::Predict(&fixed);
    let mut ps = init_state(&c, &h, &pmode, &mut rng, seed).map_err(e)?;
    let mut pstates = Vec::new();
    for _ in 0..2 {
        sweep(&mut ps, &c, &h, &pmode, &mut rng).map_err(e)?;
        pstates.push(ps.clone());
    }
    rows_ok(
        &theta_p(&pstates, &c, &h, &pmode).map_err(e)?,
        "theta_p predict",
    )?;
    let pm = soft_counts(&ps, &c, &h, &pmode).map_err(e)?;
    prop_assert!(pm
        .m_dk
        .sum_axis(ndarray::Axis(1))
        .iter()
        .zip(&c.documents)
        .all(|(s, d)| (s - d.len() as f64).abs() <= 1e-9));

    let mut lc = c.clone();
    random_labels(&mut rng, &mut lc, k);
    let lmode = SamplingMode::LabeledTrain;
    let mut ls = init_state(&lc, &h, &lmode, &mut rng, seed).map_err(e)?;
    sweep(&mut ls, &lc, &h, &lmode, &mut rng).map_err(e)?;
    prop_assert!(ls.respects_labels(&lc));
    let lm = soft_counts(&ls, &lc, &h, &lmode).map_err(e)?;
    prop_assert!(lm.conservation_error(&lc) <= 1e-9);
    for (d, doc) in lc.documents.iter().enumerate() {
        for t in 0..k {
            if doc.labels.binary_search(&(t as u32)).is_err() {
                prop_assert_eq!(lm.m_dk[[d, t]], 0.0);
            }
        }
    }
    rows_ok(&phi_p(&ls, &lc, &h, &lmode).map_err(e)?, "labeled phi_p")?;

    let mut vs = VariationalState::init(
        &c,
        &h,
        &mode,
        Cvb0Init::Seed {
            seed,
            shuffle_docs: seed % 2 == 0,
        },
    )
    .map_err(e)?;
    for _ in 0..3 {
        cvb0_sweep(&mut vs, &c, &h, &mode).map_err(e)?;
    }
    prop_assert!(vs.drift(&c) <= 1e-6, "cvb0 drift {}", vs.drift(&c));
    prop_assert!(vs.soft.conservation_error(&c) <= 1e-6);
    for r in vs.gamma.rows() {
        prop_assert!((r.sum() - 1.0).abs() <= 1e-9);
    }
    let ve = cvb0_estimates(&vs, &h);
    rows_ok(&ve.theta, "cvb0 theta")?;
    rows_ok(&ve.phi, "cvb0 phi")?;
    Ok(())
}

fn criterion_5() -> Outcome {
    const CASES: u32 = 1000;
    let mut runner = TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (
        any::<u64>(),
        1usize..6,
        1usize..12,
        2usize..9,
        1usize..6,
        0.01f64..2.0,
        0.005f64..1.0,
    );
    runner
        .run(&strategy, |(seed, docs, max_len, v, k, a, b)| {
            normalization_case(seed, docs, max_len, v, k, a, b)
        })
        .map(|_| format!("{CASES} generated cases, all rows within 1e-9 and soft counts conserved"))
        .map_err(|e| e.to_string())
}

fn criterion_6() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut rng = ChainRng::seed_from_u64(66);
    for case in 0..100u64 {
        let v = rng.random_range(2..8);
        let docs = rng.random_range(1..6);
        let c = random_corpus(&mut rng, docs, 10, v);
        let mode = SamplingMode::Train;

        // K = 1
        let h = Hyperparams::symmetric(
            1,
            rng.random_range(0.01..1.0),
            v,
            rng.random_range(0.01..1.0),
        )
        .unwrap();
        let mut s = init_state(&c, &h, &mode, &mut rng, case).unwrap();
        sweep(&mut s, &c, &h, &mode, &mut rng).unwrap();
        let (t0, p0) = (theta_standard(&s.counts, &h), phi_standard(&s.counts, &h));
        worst = worst.max(max_abs(&phi_p(&s, &c, &h, &mode).unwrap(), &p0));
        for src in [
            TrainThetaSource::PhiStandard,
            TrainThetaSource::PhiP,
            TrainThetaSource::Collapsed,
        ] {
            worst = worst.max(max_abs(&theta_p_train(&s, &c, &h, src).unwrap(), &t0));
        }
        let vs = cvb0_run(
            &c,
            &h,
            &mode,
            3,
            Cvb0Init::Seed {
                seed: case,
                shuffle_docs: false,
            },
        )
        .unwrap();
        let ve = cvb0_estimates(&vs, &h);
        worst = worst
            .max(max_abs(&ve.theta, &t0))
            .max(max_abs(&ve.phi, &p0));

        // one-hot gamma
        let k = rng.random_range(2..5);
        let h = Hyperparams::symmetric(
            k,
            rng.random_range(0.01..1.0),
            v,
            rng.random_range(0.01..1.0),
        )
        .unwrap();
        let z: Vec<Vec<u32>> = c
            .documents
            .iter()
            .map(|d| {
                (0..d.len())
                    .map(|_| rng.random_range(0..k as u32))
                    .collect()
            })
            .collect();
        let counts = rebuild_counts(&z, &c, k).unwrap();
        let mut gamma = Array2::zeros((c.total_tokens(), k));
        for (j, &t) in z.iter().flatten().enumerate() {
            gamma[[j, t as usize]] = 1.0;
        }
        let vs = VariationalState::init(&c, &h, &mode, Cvb0Init::Explicit(gamma)).unwrap();
        let ve = cvb0_estimates(&vs, &h);
        worst = worst
            .max(max_abs(&ve.theta, &theta_standard(&counts, &h)))
            .max(max_abs(&ve.phi, &phi_standard(&counts, &h)));

        // single-label documents make every labeled conditional one-hot
        let mut lc = c.clone();
        let lists = (0..lc.num_docs())
            .map(|_| vec![rng.random_range(0..k as u32)])
            .collect();
        lc.set_labels((0..k).map(|i| format!("l{i}")).collect(), lists)
            .unwrap();
        let lmode = SamplingMode::LabeledTrain;
        let mut ls = init_state(&lc, &h, &lmode, &mut rng, case).unwrap();
        sweep(&mut ls, &lc, &h, &lmode, &mut rng).unwrap();
        let est = recover_train(&ls, &lc, &h, &lmode, Recovery::CgsP, Recovery::CgsP).unwrap();
        worst = worst
            .max(max_abs(&est.theta, &theta_standard(&ls.counts, &h)))
            .max(max_abs(&est.phi, &phi_standard(&ls.counts, &h)));
    }
    check(
        worst <= 1e-12,
        format!("largest deviation from the standard estimators over 100 cases: {worst:.1e}"),
    )
}

fn synthetic_500() -> Synthetic {
    generate_lda(&LdaSpec {
        docs: 500,
        vocab: 200,
        topics: 10,
        mean_length: 80.0,
        alpha: 0.2,
        beta: 0.05,
        seed: 500,
    })
    .unwrap()
}

fn split(c: &Corpus, train: usize) -> (Corpus, Corpus) {
    let mut a = c.clone();
    let mut b = c.clone();
    a.documents.truncate(train);
    b.documents.drain(..train);
    (a, b)
}

fn criterion_7() -> Outcome {
    let t0 = Instant::now();
    let syn = synthetic_500();
    let (train, test) = split(&syn.corpus, 400);
    let h = Hyperparams::symmetric(10, 0.1, 200, 0.01).unwrap();
    let seeds = 20;
    // mean perplexity indexed by (phi_p, theta_p, s = 50)
    let mut mean = [[[0.0f64; 2]; 2]; 2];
    for seed in 0..seeds {
        let s = run_chain(
            &train,
            &h,
            &SamplingMode::Train,
            &ChainSchedule::single(200, seed),
            0,
        )
        .map_err(|e| e.to_string())?
        .pop()
        .unwrap();
        let phi = phi_standard(&s.counts, &h);
        let phi_soft = phi_p(&s, &train, &h, &SamplingMode::Train).map_err(|e| e.to_string())?;
        let schedule = ChainSchedule {
            burn_in: 50,
            lag: 5,
            samples: 1,
            chains: 1,
            total_train_iters: 200,
            seed: 1000 + seed,
        };
        let rows = perplexity_grid(
            &test,
            &[(Recovery::Standard, &phi), (Recovery::CgsP, &phi_soft)],
            &h,
            &schedule,
            0.5,
            &[1, 50],
        )
        .map_err(|e| e.to_string())?;
        for r in rows {
            let i = (r.phi == Recovery::CgsP) as usize;
            let j = (r.theta == Recovery::CgsP) as usize;
            let l = (r.s_averaged == 50) as usize;
            mean[i][j][l] += r.perplexity / seeds as f64;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let gap = |i: usize, l: usize| (mean[i][0][l] - mean[i][1][l]).abs() / mean[i][1][l];
    let ok =
        mean[1][1][0] <= mean[0][0][0] && gap(0, 1) < 0.01 && gap(1, 1) < 0.01 && secs <= 600.0;
    check(
        ok,
        format!(
            "s=1: phi+theta {:.2}, phi_p+theta_p {:.2}; theta vs theta_p gap under phi {:.2}% -> {:.2}%, under phi_p {:.2}% -> {:.2}% (s=1 -> 50); {secs:.0}s",
            mean[0][0][0],
            mean[1][1][0],
            100.0 * gap(0, 0),
            100.0 * gap(0, 1),
            100.0 * gap(1, 0),
            100.0 * gap(1, 1)
        ),
    )
}

fn criterion_8() -> Outcome {
    let syn = synthetic_500();
    let (train, _) = split(&syn.corpus, 400);
    let h = Hyperparams::symmetric(10, 0.1, 200, 0.01).unwrap();
    let opts = TraceOptions {
        every: 10,
        ..TraceOptions::default()
    };
    let a =
        convergence_trace(&train, &h, Algorithm::Cvb0, 60, 3, &opts).map_err(|e| e.to_string())?;
    let b =
        convergence_trace(&train, &h, Algorithm::Cvb0, 60, 3, &opts).map_err(|e| e.to_string())?;
    let bitwise = a.len() == b.len()
        && a.iter()
            .zip(&b)
            .all(|(x, y)| x.log_likelihood.to_bits() == y.log_likelihood.to_bits());
    let init = Cvb0Init::Seed {
        seed: 8,
        shuffle_docs: true,
    };
    let ga =
        cvb0_run(&train, &h, &SamplingMode::Train, 60, init.clone()).map_err(|e| e.to_string())?;
    let gb = cvb0_run(&train, &h, &SamplingMode::Train, 60, init).map_err(|e| e.to_string())?;
    let bitwise = bitwise
        && ga
            .gamma
            .iter()
            .zip(&gb.gamma)
            .all(|(x, y)| x.to_bits() == y.to_bits());

    let iters = 200;
    let seeds = 5;
    // matched iterations after burn-in: 100, 110, ..., 200
    let mut diffs = vec![0.0; 11];
    for seed in 0..seeds {
        let cgs = convergence_trace(&train, &h, Algorithm::Cgs, iters, seed, &opts)
            .map_err(|e| e.to_string())?;
        let cgsp = convergence_trace(&train, &h, Algorithm::CgsP, iters, seed, &opts)
            .map_err(|e| e.to_string())?;
        for (x, y) in cgs.iter().zip(&cgsp).filter(|(x, _)| x.iteration >= 100) {
            diffs[(x.iteration - 100) / 10] += (y.log_likelihood - x.log_likelihood) / seeds as f64;
        }
    }
    let worst = diffs.iter().cloned().fold(f64::INFINITY, f64::min);
    check(
        bitwise && worst >= 0.0,
        format!(
            "cvb0 traces bitwise equal: {bitwise}; mean CGS_p - CGS training log-likelihood over iterations 100..200: min {worst:.1}, max {:.1}",
            diffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        ),
    )
}

fn criterion_9() -> Outcome {
    let gold: Vec<Vec<u32>> = vec![
        vec![0, 1],
        vec![1],
        vec![2],
        vec![0, 3],
        vec![3],
        vec![],
        vec![1, 2],
        vec![0],
        vec![2, 3],
        vec![1],
    ];
    let pred: Vec<Vec<u32>> = vec![
        vec![0],
        vec![1, 2],
        vec![2],
        vec![0, 3],
        vec![],
        vec![],
        vec![0],
        vec![0, 1],
        vec![3],
        vec![1],
    ];
    let r = f1_metrics(&pred, &gold, 4).map_err(|e| e.to_string())?;
    // tp/fp/fn per label: (3,1,0) (2,1,2) (1,1,2) (2,0,1)
    let (micro, macro_, example) = (2.0 / 3.0, 23.0 / 35.0, 2.0 / 3.0);
    let toy = (r.micro_f - micro).abs() <= 1e-15
        && (r.macro_f - macro_).abs() <= 1e-15
        && (r.example_f - example).abs() <= 1e-15;

    let syn = generate_labeled(&LabeledSpec {
        docs: 300,
        vocab: 200,
        labels: 15,
        max_labels: 3,
        mean_length: 60.0,
        beta: 0.1,
        seed: 9,
    })
    .unwrap();
    let space = syn.corpus.label_space.clone().unwrap();
    let lists = |c: &Corpus| {
        c.documents
            .iter()
            .map(|d| d.labels.clone())
            .collect::<Vec<_>>()
    };
    let (mut train, mut test) = split(&syn.corpus, 240);
    let (l_train, l_test) = (lists(&train), lists(&test));
    train.set_labels(space.clone(), l_train).unwrap();
    test.set_labels(space, l_test.clone()).unwrap();
    let seeds = 5;
    let (mut f_one, mut f_five) = (0.0, 0.0);
    for seed in 0..seeds {
        for (preset, theta, acc) in [
            (Preset::OneByOne, Recovery::Standard, &mut f_one),
            (Preset::FiveByThirty, Recovery::CgsP, &mut f_five),
        ] {
            let cfg = PriorLdaConfig::preset(preset, theta, seed);
            let model = priorlda::train(&train, &cfg).map_err(|e| e.to_string())?;
            let p = priorlda::predict_labels(&test, &model, &cfg).map_err(|e| e.to_string())?;
            *acc += f1_metrics(&p.labels, &l_test, 15)
                .map_err(|e| e.to_string())?
                .micro_f
                / seeds as f64;
        }
    }
    check(
        toy && f_five >= f_one,
        format!(
            "toy micro/macro/example {:.4}/{:.4}/{:.4} (matches: {toy}); mean micro-F 1x1 standard {f_one:.4}, 5x30 theta_p {f_five:.4}",
            r.micro_f, r.macro_f, r.example_f
        ),
    )
}

fn median_secs<F: FnMut()>(reps: usize, mut f: F) -> f64 {
    let mut t: Vec<f64> = (0..reps)
        .map(|_| {
            let t0 = Instant::now();
            f();
            t0.elapsed().as_secs_f64()
        })
        .collect();
    t.sort_by(f64::total_cmp);
    t[reps / 2]
}

fn criterion_10() -> Outcome {
    let syn = synthetic_500();
    let c = &syn.corpus;
    // single-threaded on both sides
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let mut lines = Vec::new();
    let mut ok = true;
    for k in [10, 50] {
        let h = Hyperparams::symmetric(k, 0.1, 200, 0.01).unwrap();
        let mode = SamplingMode::Train;
        let mut s = run_chain(c, &h, &mode, &ChainSchedule::single(20, 1), 0)
            .unwrap()
            .pop()
            .unwrap();
        let mut rng = ChainRng::seed_from_u64(5);
        let (sweep_t, rec_t) = pool.install(|| {
            let sweep_t = median_secs(7, || sweep(&mut s, c, &h, &mode, &mut rng).unwrap());
            let rec_t = median_secs(7, || {
                recover_train(&s, c, &h, &mode, Recovery::CgsP, Recovery::CgsP).unwrap();
            });
            (sweep_t, rec_t)
        });
        let ratio = rec_t / sweep_t;
        ok &= ratio <= 3.0;
        lines.push(format!(
            "K={k}: sweep {:.2}ms, recovery {:.2}ms, ratio {ratio:.2}",
            sweep_t * 1e3,
            rec_t * 1e3
        ));
    }
    check(ok, lines.join("; "))
}

fn main() {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("oracle equivalence", criterion_1),
        ("single-sample efficiency", criterion_2),
        ("sampler correctness", criterion_3),
        ("bounds", criterion_4),
        ("normalization", criterion_5),
        ("reductions", criterion_6),
        ("perplexity trend", criterion_7),
        ("convergence traces", criterion_8),
        ("multi-label pipeline", criterion_9),
        ("estimator overhead", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !selected.is_empty() && !selected.contains(&(i + 1)) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} ({name}): PASS [{secs:.1}s] {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL [{secs:.1}s] {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
