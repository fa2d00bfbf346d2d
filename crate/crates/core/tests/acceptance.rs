//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::time::{Duration, Instant};

use d2d_rrm::cli::{self, OutputFormat, RunManifest};
use d2d_rrm::lte_pc::{self, ClLoopState, LtePcConfig, LteScheme};
use d2d_rrm::oracle::{self, GridSpec};
use d2d_rrm::ra::{self, ModePolicy, RaScheme};
use d2d_rrm::sim::{self, CellularPc, D2dPc, ExperimentConfig, ExperimentResult};
use d2d_rrm::topology::{generate_drop, ChannelConfig, GeometryConfig, LinkKind, Mode, Scenario};
use d2d_rrm::units::{dbm_to_watts, watts_to_dbm};
use d2d_rrm::utility_pc::{self, LinkControl, LinkEnvironment, UtilityPcConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CORPUS_SEED: u64 = 20_240_601;
const NOISE_W: f64 = 3.981_071_705_534_973e-15;
const RB_BANDWIDTH: f64 = 625e3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Instance {
    env: LinkEnvironment,
    gamma: Vec<f64>,
    radius: f64,
}

/// Random feasible instances: 2..=8 links, direct gains -115..-90 dB, each
/// cross gain 10..40 dB below the victim's direct gain, SINR targets
/// -10..10 dB, spectral radius of the normalized gain matrix below 0.9.
fn corpus(n: usize) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(CORPUS_SEED);
    let mut out = Vec::new();
    while out.len() < n {
        let l = rng.random_range(2..=8);
        let direct: Vec<f64> = (0..l).map(|_| 10f64.powf(rng.random_range(-11.5..-9.0))).collect();
        let gains = DMatrix::from_fn(l, l, |r, c| {
            if r == c {
                direct[r]
            } else {
                direct[r] * 10f64.powf(-rng.random_range(1.0..4.0))
            }
        });
        let gamma: Vec<f64> = (0..l).map(|_| 10f64.powf(rng.random_range(-1.0..1.0))).collect();
        let radius = oracle::spectral_radius(&oracle::normalized_gain_matrix(&gains, &gamma));
        if radius < 0.9 {
            out.push(Instance { env: LinkEnvironment::new(gains, vec![NOISE_W; l], RB_BANDWIDTH), gamma, radius });
        }
    }
    out
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) / y).abs()).fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let instances = corpus(100);
    let start = Instant::now();
    let init_power = UtilityPcConfig::default().init_power_w;
    let mut worst = (0.0, 0.0);
    let mut failures = 0;
    for inst in &instances {
        let p0 = vec![init_power; inst.env.len()];
        let (p, _) = utility_pc::iterate_powers(&inst.env, &inst.gamma, &p0, 50, 0.0);
        let exact = oracle::solve_power_fixed_point(&inst.gamma, &inst.env.gains, &inst.env.noise).expect("feasible");
        let e = rel_err(&p, &exact);
        if e > 1e-6 {
            failures += 1;
        }
        if e > worst.0 {
            worst = (e, inst.radius);
        }
    }
    let elapsed = start.elapsed();
    let pass = failures == 0 && elapsed < Duration::from_secs(1);
    outcome(
        pass,
        format!(
            "inner loop vs fixed point: {failures}/100 above 1e-6, worst rel err {:.2e} (radius {:.3}), {:.0} ms",
            worst.0,
            worst.1,
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

fn criterion_2() -> Outcome {
    let omega = 1.0;
    let mut worst_gap: f64 = 0.0;
    let mut worst_row: f64 = f64::MIN;
    for inst in corpus(100) {
        let n = inst.env.len();
        let (p, _) = utility_pc::iterate_powers(&inst.env, &inst.gamma, &vec![0.01; n], 5000, 1e-15);
        let (mu, _) = utility_pc::iterate_mu(&inst.env, &inst.gamma, &vec![0.01; n], 5000, 1e-15);
        let lambda_lp = utility_pc::recover_lambda_lp(&mu, &inst.env, &inst.gamma, omega);
        let (h, eta) = oracle::lp_data(&inst.env.gains, &inst.gamma, &inst.env.noise);
        let report = oracle::lp_duality_check(&p, &lambda_lp, &h, &eta, omega);
        worst_gap = worst_gap.max(report.relative_gap);
        worst_row = worst_row.max(report.dual_violation);
    }
    outcome(
        worst_gap <= 1e-6 && worst_row <= 1e-9,
        format!("strong duality: worst relative gap {worst_gap:.2e}, worst dual-row excess {worst_row:.2e}"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(CORPUS_SEED + 3);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for inst in corpus(400).into_iter().filter(|i| i.env.len() <= 4).take(40) {
        let n = inst.env.len();
        let omega = 10f64.powf(rng.random_range(-2.0..1.0));
        let p = oracle::solve_power_fixed_point(&inst.gamma, &inst.env.gains, &inst.env.noise).expect("feasible");
        let (mu, _) = utility_pc::iterate_mu(&inst.env, &inst.gamma, &vec![0.01; n], 5000, 1e-15);
        let lambda = utility_pc::recover_lambda(&p, &mu, &inst.env, &inst.gamma, omega);
        let s_tilde: Vec<f64> = inst.gamma.iter().map(|&g| utility_pc::sinr_to_rate(g, RB_BANDWIDTH).ln()).collect();
        let fd = oracle::finite_diff_envelope(
            &s_tilde,
            &inst.env.gains,
            &inst.env.noise,
            RB_BANDWIDTH,
            omega,
            oracle::ENVELOPE_STEP,
        )
        .expect("interior point");
        worst = worst.max(rel_err(&lambda, &fd));
        checked += 1;
    }
    outcome(worst <= 1e-3, format!("envelope: {checked} instances with 2-4 links, worst rel err {worst:.2e}"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(CORPUS_SEED + 4);
    let cfg = UtilityPcConfig { epsilon: 0.05, outer_iters: 100, ..Default::default() };
    let grid = GridSpec::default();
    let (lo, hi) = (grid.gamma_min.ln(), grid.gamma_max.ln());
    let mut worst_shortfall: f64 = f64::MIN;
    let mut worst_drop: f64 = 0.0;
    let mut non_monotone = 0;
    let mut done = 0;
    let mut tries = 0;
    while done < 20 {
        tries += 1;
        let direct: Vec<f64> = (0..2).map(|_| 10f64.powf(rng.random_range(-11.5..-10.0))).collect();
        let gains = DMatrix::from_fn(2, 2, |r, c| {
            if r == c {
                direct[r]
            } else {
                direct[r] * 10f64.powf(-rng.random_range(1.0..3.0))
            }
        });
        let omega = 10f64.powf(rng.random_range(0.0..1.0));
        let env = LinkEnvironment::new(gains.clone(), vec![NOISE_W; 2], RB_BANDWIDTH);
        let best = oracle::grid_search_optimum(&gains, &env.noise, RB_BANDWIDTH, omega, grid).expect("feasible");
        // keep instances whose optimum is interior: inside the grid and the power limits
        let interior = best.rate.iter().zip(&best.power).all(|(&s, &p)| {
            let g = utility_pc::rate_to_sinr_target(s, RB_BANDWIDTH).ln();
            g > lo + 0.5 && g < hi - 0.5 && p < cfg.p_max_w && p > cfg.p_min_w
        });
        if !interior {
            continue;
        }
        let run =
            utility_pc::run_distributed_pc(&env, &UtilityPcConfig { omega, ..cfg.clone() }, &[LinkControl::Utility; 2]);
        let last = *run.objective_trace.last().expect("100 outer iterations");
        worst_shortfall = worst_shortfall.max((best.objective - last) / best.objective.abs());
        let drop = run.objective_trace.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
        worst_drop = worst_drop.max(drop);
        non_monotone += usize::from(drop > 1e-6);
        done += 1;
    }
    outcome(
        worst_shortfall <= 0.01 && worst_drop <= 1e-6,
        format!(
            "outer loop: 20 two-link instances ({tries} drawn), worst shortfall vs grid {:.3}%, {non_monotone} traces decrease by more than 1e-6 (largest {worst_drop:.2e})",
            100.0 * worst_shortfall
        ),
    )
}

fn criterion_5() -> Outcome {
    let ofpc = |alpha: f64, gamma: f64| LtePcConfig {
        scheme: LteScheme::Ofpc,
        alpha,
        gamma_tgt_db: Some(gamma),
        p_in_dbm: -116.0,
        p_max_dbm: 23.0,
        ..Default::default()
    };
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let npc = LtePcConfig { scheme: LteScheme::Npc, fixed_power_dbm: 23.0, ..ofpc(0.8, 10.0) };
    let cfg = ofpc(0.8, 15.0);
    let step = |p: f64, meas: f64| {
        lte_pc::closed_loop_update(ClLoopState { power_dbm: p, last_sinr_db: None }, 15.0, meas, &cfg).power_dbm
    };
    let checks = [
        close(lte_pc::compute_p0(&LtePcConfig { scheme: LteScheme::Fst, ..ofpc(1.0, 15.0) }).unwrap(), -101.0),
        close(lte_pc::compute_p0(&ofpc(0.0, 15.0)).unwrap(), 23.0),
        close(lte_pc::compute_p0(&ofpc(0.8, 10.0)).unwrap(), -80.2),
        close(lte_pc::open_loop_power(&ofpc(0.8, 10.0), -100.0).unwrap(), -0.2),
        close(lte_pc::open_loop_power(&ofpc(0.8, 10.0), -140.0).unwrap(), 23.0),
        close(lte_pc::open_loop_power(&npc, -60.0).unwrap(), 23.0),
        close(lte_pc::tpc_offset(15.0, 9.0), 3.0),
        close(lte_pc::tpc_offset(15.0, 14.0), 1.0),
        close(lte_pc::tpc_offset(15.0, 15.0), 0.0),
        close(step(0.0, 9.0), 3.0),
        close(step(22.5, 9.0), 23.0),
        close(step(4.0, 15.0), 4.0),
    ];
    let ok = checks.iter().filter(|&&c| c).count();
    outcome(ok == checks.len(), format!("LTE PC hand values: {ok}/{} exact to 1e-12", checks.len()))
}

/// Replays the placement order of one cell and checks each reuse pick.
fn replay_cell(scenario: &Scenario, alloc: &ra::Allocation, cell: usize, scheme: RaScheme) -> Result<(), String> {
    let rbs = alloc.num_rbs;
    let mut rho = vec![0u32; rbs];
    let mut occupants: Vec<Vec<(usize, Mode)>> = vec![Vec::new(); rbs];
    let mut bs_gain: Vec<Option<f64>> = vec![None; rbs];
    let links: Vec<usize> = scenario.links_in_cell(cell).map(|l| l.id).collect();
    let ordered = links
        .iter()
        .filter(|&&l| scenario.links[l].kind == LinkKind::Cellular)
        .chain(links.iter().filter(|&&l| scenario.links[l].kind == LinkKind::D2d));
    for &l in ordered {
        let a = alloc.links[l].ok_or(format!("link {l} unassigned"))?;
        let free = rho.iter().position(|&r| r == 0);
        if scenario.links[l].kind == LinkKind::D2d {
            match free {
                Some(f) if a.rb != f => return Err(format!("link {l} skipped free RB {f}")),
                None => {
                    let min = *rho.iter().min().unwrap();
                    match scheme {
                        RaScheme::MinInterf => {
                            let scores: Vec<f64> =
                                occupants.iter().map(|o| ra::interference_score(scenario, l, o)).collect();
                            let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
                            if scores[a.rb] != best {
                                return Err(format!(
                                    "MinInterf picked RB {} (score {}) over {best}",
                                    a.rb, scores[a.rb]
                                ));
                            }
                        }
                        RaScheme::Bra | RaScheme::Cpa => {
                            if rho[a.rb] != min {
                                return Err(format!("link {l} reused RB {} with rho {} > {min}", a.rb, rho[a.rb]));
                            }
                            if scheme == RaScheme::Cpa {
                                let top = (0..rbs)
                                    .filter(|&j| rho[j] == min)
                                    .filter_map(|j| bs_gain[j])
                                    .fold(f64::MIN, f64::max);
                                if bs_gain[a.rb].is_some_and(|g| g < top) || (bs_gain[a.rb].is_none() && top > f64::MIN)
                                {
                                    return Err(format!("CPA picked RB {} below the strongest cellular gain", a.rb));
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        rho[a.rb] += 1;
        occupants[a.rb].push((l, a.mode));
        if a.mode == Mode::Cellular {
            bs_gain[a.rb] = Some(scenario.gain_to_serving_bs(l));
        }
    }
    if rho != alloc.reuse[cell] {
        return Err(format!("reuse counters {:?} != {:?}", alloc.reuse[cell], rho));
    }
    if scheme != RaScheme::MinInterf && rho.iter().max().unwrap() - rho.iter().min().unwrap() > 1 {
        return Err(format!("reuse spread above 1: {rho:?}"));
    }
    Ok(())
}

fn criterion_6() -> Outcome {
    let geo = GeometryConfig::default();
    let ch = ChannelConfig::default();
    let mut errors = Vec::new();
    for seed in 0..1000u64 {
        let scenario = generate_drop(&geo, &ch, seed);
        for scheme in [RaScheme::MinInterf, RaScheme::Bra, RaScheme::Cpa] {
            let alloc = match ra::allocate(&scenario, scheme, ModePolicy::Adaptive, seed) {
                Ok(a) => a,
                Err(e) => {
                    errors.push(format!("seed {seed} {scheme:?}: {e}"));
                    continue;
                }
            };
            if let Err(e) = alloc.check(&scenario) {
                errors.push(format!("seed {seed} {scheme:?}: {e}"));
            }
            for cell in 0..scenario.num_cells() {
                if let Err(e) = replay_cell(&scenario, &alloc, cell, scheme) {
                    errors.push(format!("seed {seed} {scheme:?} cell {cell}: {e}"));
                }
            }
        }
    }
    let first = errors.first().cloned().unwrap_or_default();
    outcome(errors.is_empty(), format!("RA invariants on 1000 drops x 3 schemes: {} violations {first}", errors.len()))
}

fn preset_run(name: &str, label: &str) -> ExperimentResult {
    let run = cli::preset(name).unwrap().into_iter().find(|r| r.label == label).expect("preset run");
    sim::run_experiment(&run.config).expect("experiment runs")
}

fn mean_power_w(result: &ExperimentResult, class: &str) -> f64 {
    let v = result.pooled(class, sim::MEASURE_POWER);
    v.iter().map(|&p| dbm_to_watts(p)).sum::<f64>() / v.len() as f64
}

fn criterion_7() -> Vec<(String, Outcome)> {
    let start = Instant::now();
    let mut out = Vec::new();

    let hybrid = preset_run("fig9-hybrid-tradeoff", "hybrid-w1-istar500");
    let ofpc = preset_run("fig8-d2d-power-sinr", "lte-ofpc");
    let (h, o) = (
        hybrid.cdf(sim::CLASS_D2D, sim::MEASURE_SINR).unwrap().median(),
        ofpc.cdf(sim::CLASS_D2D, sim::MEASURE_SINR).unwrap().median(),
    );
    out.push((
        "7a".into(),
        outcome(h - o >= 3.0, format!("median D2D SINR hybrid {h:.2} dB vs LTE OFPC {o:.2} dB (+{:.2} dB)", h - o)),
    ));

    let lte: Vec<ExperimentResult> =
        ["ue-mode", "ms", "ms-reuse"].iter().map(|l| preset_run("fig10-gains-lte", l)).collect();
    let (ue, reuse) = (lte[0].mean_sum_rate(), lte[2].mean_sum_rate());
    out.push((
        "7b".into(),
        outcome(reuse > ue, format!("LTE mean sum rate MS Reuse {reuse:.4e} vs UE Mode {ue:.4e} bit/s")),
    ));

    let low = preset_run("fig7-cellular-power-sinr", "utility-w0.01");
    let high = preset_run("fig7-cellular-power-sinr", "utility-w10");
    let (pl, ph) = (mean_power_w(&low, sim::CLASS_CELLULAR), mean_power_w(&high, sim::CLASS_CELLULAR));
    out.push((
        "7c".into(),
        outcome(
            ph < pl,
            format!("mean cellular power w=10 {:.2} dBm vs w=0.01 {:.2} dBm", watts_to_dbm(ph), watts_to_dbm(pl)),
        ),
    ));

    let utility: Vec<ExperimentResult> =
        ["ue-mode", "ms", "ms-reuse"].iter().map(|l| preset_run("fig11-gains-utility", l)).collect();
    let pairs: Vec<(f64, f64)> =
        utility.iter().zip(&lte).map(|(u, l)| (u.mean_sum_rate(), l.mean_sum_rate())).collect();
    let detail = pairs.iter().map(|(u, l)| format!("{u:.3e}>{l:.3e}")).collect::<Vec<_>>().join(", ");
    out.push((
        "7d".into(),
        outcome(
            pairs.iter().all(|(u, l)| u > l),
            format!("utility vs LTE mean sum rate (UE Mode, MS, MS Reuse): {detail}"),
        ),
    ));

    let elapsed = start.elapsed();
    out.push((
        "7 runtime".into(),
        outcome(
            elapsed < Duration::from_secs(300),
            format!("nine 100-drop experiments in {:.1} s", elapsed.as_secs_f64()),
        ),
    ));
    out
}

fn criterion_8() -> Outcome {
    let cfg = ExperimentConfig {
        cellular_pc: CellularPc::Ofpc,
        d2d_pc: D2dPc::UtilityMax,
        num_drops: 20,
        seed: 77,
        ..Default::default()
    };
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let result = sim::run_experiment(&cfg).unwrap();
    cli::emit_results(&result, OutputFormat::Both, first.path(), RunManifest::new(&cfg, None, None)).unwrap();
    let replayed = cli::parse_config(&first.path().join(cli::MANIFEST_FILE)).unwrap();
    let again = sim::run_experiment(&replayed).unwrap();
    cli::emit_results(&again, OutputFormat::Both, second.path(), RunManifest::new(&replayed, None, None)).unwrap();
    let a = std::fs::read(first.path().join(cli::SAMPLES_FILE)).unwrap();
    let b = std::fs::read(second.path().join(cli::SAMPLES_FILE)).unwrap();
    outcome(
        !a.is_empty() && a == b,
        format!("re-run from manifest: samples.csv {} bytes, identical: {}", a.len(), a == b),
    )
}

fn main() {
    let mut results: Vec<(String, Outcome)> = vec![
        ("1".into(), criterion_1()),
        ("2".into(), criterion_2()),
        ("3".into(), criterion_3()),
        ("4".into(), criterion_4()),
        ("5".into(), criterion_5()),
        ("6".into(), criterion_6()),
    ];
    results.extend(criterion_7());
    results.push(("8".into(), criterion_8()));

    let mut failed = 0;
    for (id, o) in &results {
        println!("criterion {id}: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
