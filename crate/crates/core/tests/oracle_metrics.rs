//! Metric implementations checked against independently written oracles:
//! Lanczos log-gamma + Simpson quadrature for the Student-t tail, and
//! brute-force reimplementations for probability mass, entropy, calibration
//! error, correlation, and the bootstrap. The bootstrap width is also checked
//! against the closed-form binomial interval.

use epiprobe_core::backend::{Completion, FinishReason, TokenStep};
use epiprobe_core::scoring::{
    alt_entropy, bootstrap_ci, ece, is_correct, pearson, probability_on_gold, welch_t_test,
    ScoringOptions,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

// ---------------------------------------------------------------------------
// Student-t tail oracle: Lanczos log-gamma plus composite Simpson quadrature.
// ---------------------------------------------------------------------------

fn lgamma_oracle(x: f64) -> f64 {
    // Lanczos approximation, g = 7, nine coefficients.
    const C: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - lgamma_oracle(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = C[0];
    for (i, &c) in C.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// P(T > t) for Student-t with `df` degrees of freedom. The substitution
/// x = √df·tanθ maps the infinite tail onto [arctan(t/√df), π/2] where the
/// integrand becomes K·cos^(df−1)θ with K = Γ((df+1)/2) / (√π·Γ(df/2)).
fn student_sf_oracle(t: f64, df: f64) -> f64 {
    let k = (lgamma_oracle((df + 1.0) / 2.0) - lgamma_oracle(df / 2.0)).exp() / PI.sqrt();
    let lo = (t / df.sqrt()).atan();
    let n = 50_000; // even
    let h = (FRAC_PI_2 - lo) / n as f64;
    let f = |theta: f64| theta.cos().powf(df - 1.0);
    let mut sum = f(lo) + f(FRAC_PI_2);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(lo + i as f64 * h);
    }
    k * sum * h / 3.0
}

#[test]
fn quadrature_oracle_agrees_with_closed_forms() {
    for &t in &[0.0f64, 0.5, 1.0, 2.0, 5.0] {
        // df = 1 is Cauchy: sf(t) = 1/2 − atan(t)/π
        let cauchy = 0.5 - t.atan() / PI;
        assert!(
            (student_sf_oracle(t, 1.0) - cauchy).abs() < 1e-10,
            "df=1 t={t}"
        );
        // df = 2: sf(t) = 1/2 − t / (2·√(2+t²))
        let two = 0.5 - t / (2.0 * (2.0 + t * t).sqrt());
        assert!((student_sf_oracle(t, 2.0) - two).abs() < 1e-10, "df=2 t={t}");
    }
    // symmetry at zero for fractional df
    assert!((student_sf_oracle(0.0, 7.3) - 0.5).abs() < 1e-12);
}

struct WelchOracle {
    t: f64,
    df: f64,
    p: f64,
}

fn welch_oracle(a: &[f64], b: &[f64]) -> WelchOracle {
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let var = |xs: &[f64]| {
        let mu = mean(xs);
        xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sea, seb) = (var(a) / na, var(b) / nb);
    let t = (mean(a) - mean(b)) / (sea + seb).sqrt();
    let df = (sea + seb) * (sea + seb) / (sea * sea / (na - 1.0) + seb * seb / (nb - 1.0));
    let p = (2.0 * student_sf_oracle(t.abs(), df)).min(1.0);
    WelchOracle { t, df, p }
}

#[test]
fn welch_matches_quadrature_oracle_on_100_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0EA1);
    for case in 0..100 {
        let draw = |rng: &mut ChaCha8Rng, n: usize, shift: f64, scale: f64| -> Vec<f64> {
            (0..n).map(|_| shift + scale * rng.random::<f64>()).collect()
        };
        let na = rng.random_range(5..=30);
        let nb = rng.random_range(5..=30);
        let shift_a = rng.random::<f64>();
        let shift_b = shift_a + rng.random_range(-0.2..0.2);
        let scale_a = rng.random_range(0.5..1.5);
        let scale_b = rng.random_range(0.5..1.5);
        let a = draw(&mut rng, na, shift_a, scale_a);
        let b = draw(&mut rng, nb, shift_b, scale_b);
        let got = welch_t_test(&a, &b).unwrap();
        let want = welch_oracle(&a, &b);
        assert!((got.t - want.t).abs() < 1e-9, "case {case}: t");
        assert!((got.df - want.df).abs() < 1e-9, "case {case}: df");
        assert!(
            (got.p - want.p).abs() < 1e-9,
            "case {case}: p {} vs oracle {}",
            got.p,
            want.p
        );
    }
}

// ---------------------------------------------------------------------------
// Probability-on-gold and alternative-entropy oracles over random completions.
// ---------------------------------------------------------------------------

const VOCAB: [&str; 8] = [
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta",
];

/// Oracle-side canonical form; the generated vocabulary has no punctuation
/// or articles, so lowercase + trim + collapse is the full story.
fn normalize_oracle(s: &str) -> String {
    s.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_completion(rng: &mut ChaCha8Rng) -> Completion {
    let n_steps = rng.random_range(3..=8);
    let steps: Vec<TokenStep> = (0..n_steps)
        .map(|_| {
            let word = VOCAB[rng.random_range(0..VOCAB.len())];
            let mut alternatives = BTreeMap::new();
            if rng.random::<f64>() < 0.8 {
                for _ in 0..rng.random_range(2..=5) {
                    let alt = VOCAB[rng.random_range(0..VOCAB.len())];
                    let p: f64 = rng.random_range(0.01..0.6);
                    alternatives.insert(format!(" {alt}"), p.ln());
                }
            }
            TokenStep {
                token: format!(" {word}"),
                logprob: Some(rng.random_range(0.05..0.9f64).ln()),
                alternatives,
            }
        })
        .collect();
    Completion::from_steps(steps, FinishReason::Length)
}

fn prob_on_gold_oracle(c: &Completion, aliases: &[String], max_steps: usize) -> Option<f64> {
    let norm: Vec<String> = aliases.iter().map(|a| normalize_oracle(a)).collect();
    if c.steps.is_empty() || norm.is_empty() {
        return None;
    }
    let toks: Vec<&str> = c
        .steps
        .iter()
        .take(max_steps)
        .map(|s| s.token.as_str())
        .collect();
    let mut matched: Option<usize> = None;
    'outer: for s in 0..toks.len() {
        for e in s + 1..=toks.len() {
            let span = normalize_oracle(&toks[s..e].concat());
            if norm.iter().any(|a| *a == span) {
                matched = Some(s);
                break 'outer;
            }
        }
    }
    let pos = matched.unwrap_or_else(|| {
        c.steps
            .iter()
            .take(max_steps)
            .position(|st| {
                st.alternatives
                    .keys()
                    .any(|k| norm.iter().any(|a| *a == normalize_oracle(k)))
            })
            .unwrap_or(0)
    });
    let step = c.steps.get(pos)?;
    if step.alternatives.is_empty() {
        return None;
    }
    Some(
        step.alternatives
            .iter()
            .filter(|(k, _)| norm.iter().any(|a| *a == normalize_oracle(k)))
            .map(|(_, lp)| lp.exp())
            .sum(),
    )
}

fn alt_entropy_oracle(step: &TokenStep) -> f64 {
    let mut probs: Vec<f64> = step.alternatives.values().map(|lp| lp.exp()).collect();
    probs.sort_by(|a, b| b.total_cmp(a));
    let rest = &probs[1..];
    let total: f64 = rest.iter().sum();
    rest.iter()
        .filter(|p| **p > 0.0)
        .map(|p| {
            let q = p / total;
            -q * q.ln()
        })
        .sum()
}

#[test]
fn probability_and_entropy_match_bruteforce_on_100_random_completions() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x90CD);
    let options = ScoringOptions::default();
    let mut some_count = 0;
    for case in 0..100 {
        let completion = random_completion(&mut rng);
        let n_aliases = rng.random_range(1..=2);
        let aliases: Vec<String> = (0..n_aliases)
            .map(|_| VOCAB[rng.random_range(0..VOCAB.len())].to_string())
            .collect();
        let (_, position) = is_correct(&completion, &aliases, &options);
        let got = probability_on_gold(&completion, &aliases, position, &options);
        let want = prob_on_gold_oracle(&completion, &aliases, options.max_steps);
        match (got, want) {
            (None, None) => {}
            (Some(g), Some(w)) => {
                some_count += 1;
                assert!((g - w).abs() < 1e-9, "case {case}: {g} vs {w}");
            }
            other => panic!("case {case}: presence mismatch {other:?}"),
        }
        for (i, step) in completion.steps.iter().enumerate() {
            if step.alternatives.len() >= 2 {
                let g = alt_entropy(step).unwrap();
                let w = alt_entropy_oracle(step);
                assert!((g - w).abs() < 1e-9, "case {case} step {i}: {g} vs {w}");
            } else {
                assert!(alt_entropy(step).is_err());
            }
        }
    }
    assert!(some_count > 50, "generator should usually produce mass");
}

// ---------------------------------------------------------------------------
// Calibration error and correlation oracles.
// ---------------------------------------------------------------------------

fn ece_oracle(outcomes: &[(u8, bool)]) -> f64 {
    let mut sorted = outcomes.to_vec();
    sorted.sort_by_key(|&(pct, _)| pct);
    let total = sorted.len() as f64;
    let mut err = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let pct = sorted[i].0;
        let (mut n, mut k) = (0usize, 0usize);
        while i < sorted.len() && sorted[i].0 == pct {
            n += 1;
            k += usize::from(sorted[i].1);
            i += 1;
        }
        err += (n as f64 / total) * (k as f64 / n as f64 - pct as f64 / 100.0).abs();
    }
    err
}

fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    // standardized-score form: r = Σ zx·zy / (n−1), with sample std
    let n = x.len() as f64;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / n;
    let std = |xs: &[f64], mu: f64| {
        (xs.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let (mx, my) = (mean(x), mean(y));
    let (sx, sy) = (std(x, mx), std(y, my));
    x.iter()
        .zip(y)
        .map(|(a, b)| ((a - mx) / sx) * ((b - my) / sy))
        .sum::<f64>()
        / (n - 1.0)
}

#[test]
fn ece_matches_bruteforce_on_100_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xECE0);
    for case in 0..100 {
        let n = rng.random_range(1..=60);
        let outcomes: Vec<(u8, bool)> = (0..n)
            .map(|_| {
                (
                    rng.random_range(0..=10u8) * 10,
                    rng.random::<f64>() < 0.55,
                )
            })
            .collect();
        let got = ece(&outcomes).unwrap();
        let want = ece_oracle(&outcomes);
        assert!((got - want).abs() < 1e-9, "case {case}: {got} vs {want}");
    }
}

#[test]
fn ece_spot_values() {
    // perfectly calibrated bins: error vanishes to numerical zero
    let mut perfect = Vec::new();
    for i in 0..5 {
        perfect.push((80, i < 4));
        perfect.push((20, i < 1));
    }
    assert!(ece(&perfect).unwrap() <= 1e-12);

    // two equal bins, stated 90% at accuracy 0.57 and stated 10% at 0.30:
    // 0.5·|0.57−0.90| + 0.5·|0.30−0.10| = 0.265
    let mut two = Vec::new();
    for i in 0..100 {
        two.push((90, i < 57));
        two.push((10, i < 30));
    }
    assert!((ece(&two).unwrap() - 0.265).abs() < 1e-9);
}

#[test]
fn pearson_matches_bruteforce_on_100_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9EA2);
    for case in 0..100 {
        let n = rng.random_range(3..=50);
        let slope = rng.random_range(-2.0..2.0);
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| slope * v + rng.random::<f64>())
            .collect();
        let got = pearson(&x, &y).unwrap();
        let want = pearson_oracle(&x, &y);
        assert!((got - want).abs() < 1e-9, "case {case}: {got} vs {want}");
    }
}

// ---------------------------------------------------------------------------
// Bootstrap oracle: fresh reimplementation of the documented contract (one
// ChaCha8 stream per resample, seeded by splitmix64(seed + i·golden), means
// resampled with replacement, percentile interval with linear interpolation).
// ---------------------------------------------------------------------------

fn splitmix64_oracle(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn bootstrap_oracle(values: &[f64], n_resamples: usize, level: f64, seed: u64) -> (f64, f64) {
    let n = values.len();
    let mut means: Vec<f64> = (0..n_resamples)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64_oracle(
                seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ));
            let mut acc = 0.0;
            for _ in 0..n {
                acc += values[rng.random_range(0..n)];
            }
            acc / n as f64
        })
        .collect();
    means.sort_by(|a, b| a.total_cmp(b));
    let quantile = |sorted: &[f64], q: f64| {
        let pos = q * (sorted.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        if lo == hi {
            sorted[lo]
        } else {
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    };
    let alpha = (1.0 - level) / 2.0;
    (quantile(&means, alpha), quantile(&means, 1.0 - alpha))
}

#[test]
fn bootstrap_matches_reimplementation_on_100_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB005);
    for case in 0..100 {
        let n = rng.random_range(5..=40);
        let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let n_resamples = rng.random_range(100..=300);
        let seed = rng.random::<u64>();
        let got = bootstrap_ci(&values, n_resamples, 0.95, seed).unwrap();
        let want = bootstrap_oracle(&values, n_resamples, 0.95, seed);
        assert!(
            (got.0 - want.0).abs() < 1e-9 && (got.1 - want.1).abs() < 1e-9,
            "case {case}: {got:?} vs {want:?}"
        );
    }
}

#[test]
fn bootstrap_width_matches_analytic_binomial_interval() {
    // Bernoulli(1/2) at n = 1000: the 95% normal-approximation interval for
    // the mean has width 2·1.96·√(p̂(1−p̂)/n).
    let mut values = vec![0.0; 500];
    values.extend(vec![1.0; 500]);
    let (lo, hi) = bootstrap_ci(&values, 20_000, 0.95, 20240817).unwrap();
    let width = hi - lo;
    let analytic = 2.0 * 1.96 * (0.25f64 / 1000.0).sqrt();
    assert!(
        (width - analytic).abs() < 1e-3,
        "width {width} vs analytic {analytic} (|Δ| = {})",
        (width - analytic).abs()
    );
}
