use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wisv_core::channel::{generate_trace, CsiState, NormalizationBounds};
use wisv_core::config::{ExperimentConfig, Scenario};
use wisv_core::engine::{run_episode, EngineConfig, EpisodeResult, Mode, Verifier};
use wisv_core::head::{input_dim, HeadParams};
use wisv_core::labeler::{
    budget_of_csi, lambda_of_csi, relabel, smooth, soft_policy, solve_budget_exact, Episode, LabelerConfig,
};
use wisv_core::metrics::MetricsSummary;
use wisv_core::pipeline::Simulator;

fn simulator() -> Simulator {
    Simulator::new(&ExperimentConfig::default()).unwrap()
}

fn random_head(seed: u64) -> HeadParams {
    let cfg = ExperimentConfig::default();
    let d_in = input_dim(cfg.oracle.d_h_draft, cfg.oracle.d_h_target);
    HeadParams::init(d_in, 8, 0.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn episode(sim: &Simulator, head: &HeadParams, mode: Mode, k: usize, tau: f64, sc: &Scenario, seed: u64) -> EpisodeResult {
    let cfg = EngineConfig {
        mode,
        k,
        tau,
        max_tokens: 96,
        ..EngineConfig::default()
    };
    let ctx = sim.context(Some(Verifier {
        params: head,
        use_csi: true,
    }));
    let trace = generate_trace(&sc.channel(), 0, 1).unwrap();
    run_episode(&cfg, &ctx, &trace, 0, seed).unwrap()
}

fn scenarios() -> impl Strategy<Value = Scenario> {
    (1e7f64..1e9, 0.001f64..0.08).prop_map(|(r, rtt)| Scenario::new("p", r, rtt))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn round_bookkeeping_holds(seed in any::<u64>(), k in 1usize..40, mode_ix in 0usize..5, sc in scenarios()) {
        let sim = simulator();
        let head = random_head(seed ^ 1);
        let mode = Mode::ALL[mode_ix];
        let r = episode(&sim, &head, mode, k, 0.5, &sc, seed);
        prop_assert!(r.tokens.len() >= 96);
        let mut tokens = 0;
        let mut latency = 0.0;
        for o in &r.rounds {
            prop_assert!(o.accepted <= k);
            prop_assert_eq!(o.committed.len(), o.accepted + 1);
            prop_assert_eq!(o.m, o.mismatches.len());
            prop_assert!(o.mismatches.windows(2).all(|w| w[0] < w[1]));
            if let Some(j) = o.rejected_at {
                prop_assert_eq!(o.accepted, j);
                if mode != Mode::SdReject {
                    prop_assert!(o.mismatches.contains(&j));
                }
            } else {
                prop_assert_eq!(o.accepted, k);
            }
            if mode == Mode::SdGreedy {
                prop_assert_eq!(o.rejected_at, o.mismatches.first().copied());
                prop_assert_eq!(o.accepted_critical, 0);
            }
            let parts = o.compute.draft_s + o.comm.total_s + o.compute.verify_s + o.compute.head_s;
            prop_assert!((o.latency_s - parts).abs() <= 1e-12 * parts);
            tokens += o.committed.len();
            latency += o.latency_s;
        }
        prop_assert_eq!(tokens, r.tokens.len());
        prop_assert!((r.latency_s - latency).abs() <= 1e-9 * latency);
        if mode == Mode::SdGreedy {
            prop_assert!(r.correct);
        }
    }

    #[test]
    fn higher_tau_accepts_more_per_round(seed in any::<u64>(), lo in 0.01f64..0.99, hi in 0.01f64..0.99, sc in scenarios()) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let sim = simulator();
        let head = random_head(seed);
        let a = episode(&sim, &head, Mode::WisvFh, 16, lo, &sc, seed);
        let b = episode(&sim, &head, Mode::WisvFh, 16, hi, &sc, seed);
        prop_assert!(b.n_rounds() <= a.n_rounds());
        for (x, y) in a.rounds.iter().zip(&b.rounds) {
            prop_assert_eq!(&x.mismatches, &y.mismatches);
            prop_assert!(y.accepted >= x.accepted);
            prop_assert!(y.accepted_critical >= x.accepted_critical);
        }
    }

    #[test]
    fn sh_and_fh_share_decisions(seed in any::<u64>(), k in 1usize..40, sc in scenarios()) {
        let sim = simulator();
        let head = random_head(seed);
        let fh = episode(&sim, &head, Mode::WisvFh, k, 0.5, &sc, seed);
        let sh = episode(&sim, &head, Mode::WisvSh, k, 0.5, &sc, seed);
        prop_assert_eq!(&fh.tokens, &sh.tokens);
        prop_assert_eq!(fh.accepted_tokens, sh.accepted_tokens);
        prop_assert_eq!(fh.n_rounds(), sh.n_rounds());
    }

    #[test]
    fn budget_solution_feasible_and_greedy_optimal(bits in prop::collection::vec(any::<bool>(), 1..30), alpha in 0.0f64..1.0, budget in 0usize..30) {
        let b: Vec<u8> = bits.iter().map(|&x| u8::from(x)).collect();
        let s = smooth(&b, alpha);
        let (a, obj) = solve_budget_exact(&b, &s, budget).unwrap();
        let n_imp = b.iter().filter(|&&x| x == 1).count();
        prop_assert_eq!(a.iter().filter(|&&x| x == 1).count(), budget.min(n_imp));
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x <= y));
        prop_assert!(obj >= -1e-12);
        // Exchange argument: no unrepaired important position outranks a repaired one.
        let worst_kept = (0..b.len()).filter(|&t| a[t] == 1).map(|t| s[t]).fold(f64::INFINITY, f64::min);
        let best_dropped = (0..b.len()).filter(|&t| b[t] == 1 && a[t] == 0).map(|t| s[t]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(best_dropped <= worst_kept);
    }

    #[test]
    fn csi_maps_are_monotone(q1 in 0.0f64..=1.0, q2 in 0.0f64..=1.0, n in 0usize..50) {
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        prop_assert!(lambda_of_csi(hi, 0.8, 0.2) <= lambda_of_csi(lo, 0.8, 0.2));
        prop_assert!(budget_of_csi(hi, n, 0) >= budget_of_csi(lo, n, 0));
        prop_assert!(budget_of_csi(hi, n, 0) <= n);
    }
}

#[test]
fn soft_policy_tends_to_hard_rule() {
    for (b, s, lambda) in [(1u8, 0.9, 0.5), (1, 0.3, 0.5), (0, 0.9, 0.1), (1, 0.51, 0.5)] {
        let hard = f64::from(u8::from(b == 1 && s > lambda));
        assert!((soft_policy(b, s, lambda, 1e-4) - hard).abs() < 1e-9, "{b} {s} {lambda}");
    }
}

#[test]
fn poor_channels_relabel_fewer_positives() {
    let sim = simulator();
    let spec = wisv_core::labeler::TraceSpec {
        k: 10,
        max_tokens: 256,
        prompt_len: 128,
    };
    let episodes: Vec<Episode> = wisv_core::labeler::collect_traces(150, &spec, &sim.oracle, 5).unwrap();
    let cfg = LabelerConfig {
        lambda_hi: 1.5,
        ..LabelerConfig::default()
    };
    let bounds = NormalizationBounds::default();
    let rate = |csi: CsiState| {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mut pos, mut n, mut base) = (0.0, 0.0, 0.0);
        for ep in &episodes {
            for inst in relabel(ep, &[csi], &cfg, &bounds, &mut rng) {
                pos += f64::from(inst.label);
                base += f64::from(inst.base_label);
                n += 1.0;
            }
        }
        (pos / n, base / n, n)
    };
    let (good, base, n) = rate(CsiState::symmetric(1e9, 0.001).unwrap());
    let (poor, _, _) = rate(CsiState::symmetric(10e6, 0.1).unwrap());
    assert!((good - base).abs() < 0.02, "good {good} base {base}");
    let se = (good * (1.0 - good) / n + poor * (1.0 - poor) / n).sqrt();
    assert!(good - poor > 3.0 * se, "good {good} poor {poor} se {se}");
}

#[test]
fn summary_matches_direct_means() {
    let sim = simulator();
    let head = random_head(3);
    let sc = Scenario::new("s", 1e8, 0.02);
    let results: Vec<EpisodeResult> = (0..20)
        .map(|s| episode(&sim, &head, Mode::SdGreedy, 10, 0.5, &sc, s))
        .collect();
    let m = MetricsSummary::from_results(&results).unwrap();
    let aal = results.iter().map(|r| r.accepted_tokens as f64 / r.n_rounds() as f64).sum::<f64>() / 20.0;
    let lat = results.iter().map(|r| r.latency_s).sum::<f64>() / 20.0;
    assert!((m.aal - aal).abs() < 1e-12);
    assert!((m.latency_mean_s - lat).abs() < 1e-12);
    let pooled = results.iter().map(|r| r.accepted_tokens as f64).sum::<f64>()
        / results.iter().map(|r| r.latency_s).sum::<f64>();
    assert!((m.throughput - pooled).abs() < 1e-9 * pooled);
}
