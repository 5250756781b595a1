use noisex_core::classifier::{grad_check, Arch, Model};
use noisex_core::rng;
use noisex_core::techniques::*;
use noisex_core::{Matrix, NOISE_LABEL, NUM_CONDITIONS, NUM_LABELS};
use proptest::prelude::*;
use rand::Rng;

fn lse_oracle(g: &[f64]) -> f64 {
    // direct sum with a max shift, written independently of the crate
    let m = g.iter().cloned().fold(f64::MIN, f64::max);
    m + g.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn logits(r: &mut rng::Rng, k: usize, scale: f64) -> Vec<f64> {
    (0..k).map(|_| r.random_range(-scale..scale)).collect()
}

#[test]
fn score_identities_on_random_logits() {
    let mut r = rng::seeded(17);
    let k = NUM_CONDITIONS as f64;
    for i in 0..10_000 {
        let scale = [1.0, 10.0, 50.0][i % 3];
        let g = logits(&mut r, NUM_CONDITIONS, scale);
        let max = g.iter().cloned().fold(f64::MIN, f64::max);
        let p = softmax(&g, 1.0).unwrap();
        assert!((softmax_score(&p).ln() - (max - lse_oracle(&g))).abs() < 1e-9);
        let neg_e = energy_score(&g, 1.0).unwrap();
        assert!(max <= neg_e + 1e-12 && neg_e <= max + k.ln() + 1e-12);
        let c = r.random_range(-20.0..20.0);
        let shifted: Vec<f64> = g.iter().map(|v| v + c).collect();
        let sm = noise_score(TechniqueKind::Softmax, &g, 1.0).unwrap();
        let sm2 = noise_score(TechniqueKind::Softmax, &shifted, 1.0).unwrap();
        assert!((sm - sm2).abs() < 1e-12);
        assert!((energy_score(&shifted, 1.0).unwrap() - neg_e - c).abs() < 1e-9);
    }
}

#[test]
fn exposure_term_minimized_at_uniform() {
    let k = NUM_CONDITIONS;
    let u = vec![1.0 / k as f64; k];
    let floor = cce_loss(&u, &u);
    assert!((floor - (k as f64).ln()).abs() < 1e-12);
    let mut r = rng::seeded(3);
    for _ in 0..1000 {
        let eps = r.random_range(1e-6..0.5);
        let mut q: Vec<f64> = u.iter().map(|v| v * (1.0 + eps * r.random_range(-1.0..1.0))).collect();
        let s: f64 = q.iter().sum();
        q.iter_mut().for_each(|v| *v /= s);
        assert!(cce_loss(&q, &u) >= floor - 1e-15);
    }
}

fn macro_f1_oracle(truth: &[usize], pred: &[usize]) -> f64 {
    let mut total = 0.0;
    for c in 0..NUM_LABELS {
        let tp = truth.iter().zip(pred).filter(|&(&t, &p)| t == c && p == c).count() as u64;
        let fp = truth.iter().zip(pred).filter(|&(&t, &p)| t != c && p == c).count() as u64;
        let fn_ = truth.iter().zip(pred).filter(|&(&t, &p)| t == c && p != c).count() as u64;
        let d = 2 * tp + fp + fn_;
        total += if d == 0 { 0.0 } else { (2 * tp) as f64 / d as f64 };
    }
    total / NUM_LABELS as f64
}

fn apply(items: &[ValItem], eta: f64) -> Vec<usize> {
    items.iter().map(|it| if it.score > eta { NOISE_LABEL } else { it.argmax }).collect()
}

fn brute_force(items: &[ValItem]) -> f64 {
    let truth: Vec<usize> = items.iter().map(|it| it.truth).collect();
    let mut cuts: Vec<f64> = items.iter().map(|it| it.score).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    // every distinct noise set: nothing, everything, or everything strictly
    // above one of the observed scores
    let mut best = macro_f1_oracle(&truth, &apply(items, f64::INFINITY));
    best = best.max(macro_f1_oracle(&truth, &apply(items, f64::NEG_INFINITY)));
    for &c in &cuts {
        best = best.max(macro_f1_oracle(&truth, &apply(items, c)));
    }
    best
}

fn random_items(seed: u64) -> Vec<ValItem> {
    let mut r = rng::seeded(seed);
    let n = r.random_range(2..=200);
    let mut items: Vec<ValItem> = (0..n)
        .map(|_| ValItem {
            // coarse grid makes ties common
            score: (r.random_range(0.0..1.0f64) * 20.0).round() / 20.0,
            truth: r.random_range(0..NUM_LABELS),
            argmax: r.random_range(0..NUM_CONDITIONS),
        })
        .collect();
    items[0].truth = NOISE_LABEL;
    items[1].truth = r.random_range(0..NUM_CONDITIONS);
    items
}

#[test]
fn calibration_matches_brute_force() {
    for seed in 0..50 {
        let items = random_items(seed);
        let cal = calibrate_threshold(&items).unwrap();
        assert_eq!(cal.macro_f1, brute_force(&items), "seed {seed}");
        let truth: Vec<usize> = items.iter().map(|it| it.truth).collect();
        assert_eq!(macro_f1_oracle(&truth, &apply(&items, cal.threshold)), cal.macro_f1);
    }
}

proptest! {
    #[test]
    fn calibration_is_optimal(seed in 1000u64..100_000) {
        let items = random_items(seed);
        let cal = calibrate_threshold(&items).unwrap();
        prop_assert_eq!(cal.macro_f1, brute_force(&items));
    }

    #[test]
    fn softmax_is_a_distribution(g in prop::collection::vec(-300.0f64..300.0, 1..20), t in 0.1f64..10.0) {
        let p = softmax(&g, t).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn energy_bounds_with_temperature(g in prop::collection::vec(-50.0f64..50.0, 13), t in 0.1f64..5.0) {
        let max = g.iter().cloned().fold(f64::MIN, f64::max);
        let e = energy_score(&g, t).unwrap();
        prop_assert!(max <= e + 1e-9 && e <= max + t * 13f64.ln() + 1e-9);
    }
}

fn loss_fn<'a>(
    cfg: &'a TechniqueConfig,
    n_machine: usize,
    targets: &[usize],
) -> impl Fn(&Matrix) -> (f64, Matrix) + 'a {
    let targets = targets.to_vec();
    move |logits: &Matrix| {
        let (m, n) = logits.split_rows(n_machine);
        let l = technique_loss(cfg, &m, &targets, &n).unwrap();
        (l.parts.total, l.grad_machine.vstack(&l.grad_noise))
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    // logits scaled so the EB hinges are active on both sides
    let mut cfg_eb = TechniqueConfig::new(TechniqueKind::EnergyBounded);
    cfg_eb.margin_machine = -3.0;
    cfg_eb.margin_noise = 1.0;
    let mut r = rng::seeded(5);
    for cfg in TechniqueKind::ALL.map(TechniqueConfig::new).into_iter().chain([cfg_eb]) {
        let k = cfg.kind.n_outputs();
        let targets = [2, 7, 0];
        let logits = Matrix::from_vec(5, k, logits(&mut r, 5 * k, 3.0));
        let f = loss_fn(&cfg, 3, &targets);
        let (_, grad) = f(&logits);
        for i in 0..logits.data.len() {
            let mut p = logits.clone();
            p.data[i] += 1e-6;
            let mut m = logits.clone();
            m.data[i] -= 1e-6;
            let fd = (f(&p).0 - f(&m).0) / 2e-6;
            assert!((fd - grad.data[i]).abs() < 1e-7, "{}: {fd} vs {}", cfg.kind, grad.data[i]);
        }
    }
}

#[test]
fn model_gradients_for_every_technique() {
    let mut eb = TechniqueConfig::new(TechniqueKind::EnergyBounded);
    // margins near the initial energies so both hinges contribute
    eb.margin_machine = -3.0;
    eb.margin_noise = -1.0;
    let configs: Vec<TechniqueConfig> = [
        TechniqueKind::Softmax,
        TechniqueKind::NoiseExposure,
        TechniqueKind::FreeEnergy,
        TechniqueKind::AdditionalClass,
    ]
    .map(TechniqueConfig::new)
    .into_iter()
    .chain([eb])
    .collect();
    for cfg in &configs {
        let arch = Arch::tiny(8, 12, cfg.kind.n_outputs());
        let model = Model::new(&arch, 21).unwrap();
        assert!(model.params.n_params() <= 10_000);
        let mut r = rng::seeded(8);
        let x: Vec<f64> = (0..6 * arch.input_len()).map(|_| r.random_range(-2.0..2.0)).collect();
        let targets = [3, 3, 11];
        let check = grad_check(&model, &x, 6, loss_fn(cfg, 3, &targets), 1e-5).unwrap();
        assert!(check.max_rel_error < 1e-4, "{}: {check:?}", cfg.kind);
    }
}
