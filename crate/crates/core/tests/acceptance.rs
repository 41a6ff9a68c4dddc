//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use intermit_sim::checkpoint::{self, CheckpointCosts, Nvm};
use intermit_sim::config::{ExperimentConfig, SimulateReport};
use intermit_sim::engine::{simulate, DecaySpike, SimConfig, SimError};
use intermit_sim::experiments::{compare, profile_blocks, Placement};
use intermit_sim::machine::{MachineState, MemoryLayout, BLOCK_SIZES};
use intermit_sim::mmt::{DTable, StackWindow};
use intermit_sim::power::{calibrate_lambda, CapacitanceConfig, EnergySink, Jitter, VoltageRange};
use intermit_sim::strategies::StrategyKind;
use intermit_sim::vtt::{VttMode, VttState};
use intermit_sim::workloads::{WorkloadKind, WorkloadSpec};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random_config(rng: &mut ChaCha8Rng) -> SimConfig {
    let mut c = SimConfig {
        workload: WorkloadSpec::new(WorkloadKind::ALL[rng.gen_range(0..5)]),
        strategy: StrategyKind::ALL[rng.gen_range(0..3)],
        cap: CapacitanceConfig::new("rand", rng.gen_range(40_000..=320_000)).unwrap(),
        vtt_mode: if rng.gen_bool(0.5) {
            VttMode::Exact
        } else {
            VttMode::Faithful
        },
        seed: rng.gen(),
        jitter: Some(Jitter {
            voltage: rng.gen_range(0.0..0.03),
            decay: rng.gen_range(0.0..0.04),
        }),
        ..SimConfig::default()
    };
    if rng.gen_bool(0.25) {
        c.decay_spikes.push(DecaySpike {
            power_cycle: rng.gen_range(1..=4),
            factor: rng.gen_range(1.5..3.0),
        });
    }
    c
}

fn crash_consistency() -> Outcome {
    const RUNS: u64 = 1000;
    let outcomes: Vec<(SimConfig, Result<_, SimError>)> = (0..RUNS)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0000 + i);
            let c = random_config(&mut rng);
            let r = simulate(&c);
            (c, r)
        })
        .collect();
    let mut completed = 0;
    let mut with_failures = 0;
    let mut stalled = 0;
    for (c, r) in &outcomes {
        match r {
            Ok(r) => {
                check(r.completed, "run returned without completing")?;
                check(
                    r.output_matches_oracle,
                    format!(
                        "output mismatch: {} {} seed {}",
                        c.strategy, c.workload.kind, c.seed
                    ),
                )?;
                completed += 1;
                with_failures += (r.checkpoint_failures > 0) as u32;
            }
            Err(SimError::Livelock(_)) | Err(SimError::NoProgress { .. }) => stalled += 1,
            Err(e) => {
                return Err(format!(
                    "{} {} seed {}: {e}",
                    c.strategy, c.workload.kind, c.seed
                ))
            }
        }
    }
    check(
        with_failures > 0,
        "no run exercised an interrupted checkpoint",
    )?;
    check(
        completed * 10 >= RUNS * 9,
        format!("only {completed} of {RUNS} runs completed"),
    )?;
    Ok(format!(
        "{RUNS} runs, {completed} completed with exact output, {with_failures} survived interrupted checkpoints, {stalled} stalled"
    ))
}

/// Dirty set kept by address arithmetic alone.
struct DirtyOracle {
    layout: MemoryLayout,
    set: BTreeSet<u32>,
}

impl DirtyOracle {
    fn write(&mut self, addr: u32) {
        self.set
            .insert((addr - self.layout.vm_min) / self.layout.block_size);
    }

    fn observe_sp(&mut self, sp: u32) {
        let (lim, b, base) = (
            self.layout.sp_lim,
            self.layout.block_size,
            self.layout.vm_min,
        );
        self.set.retain(|&i| {
            let lo = base + i * b;
            let hi = lo + b;
            !(lo >= lim && hi <= sp)
        });
    }
}

fn random_layout(rng: &mut ChaCha8Rng) -> MemoryLayout {
    let b = BLOCK_SIZES[rng.gen_range(0..BLOCK_SIZES.len())];
    let vm_size = [2048u32, 4096, 8192][rng.gen_range(0..3)];
    let stack = rng.gen_range(1..=vm_size / 2) & !1;
    MemoryLayout::new(0x2000, vm_size, 0x2000 + vm_size - stack.max(2), b).unwrap()
}

fn dtable_oracle() -> Outcome {
    const TRACES: u64 = 10_000;
    let steps: u64 = (0..TRACES)
        .into_par_iter()
        .map(|t| -> Result<u64, String> {
            let mut rng = ChaCha8Rng::seed_from_u64(0xD7AB_0000 + t);
            let layout = random_layout(&mut rng);
            let mut table = DTable::new(layout);
            let mut oracle = DirtyOracle {
                layout,
                set: BTreeSet::new(),
            };
            let len = rng.gen_range(1..200);
            for step in 0..len {
                if rng.gen_bool(0.6) {
                    let addr = layout.vm_min + rng.gen_range(0..layout.vm_size);
                    table.record_write(addr, true);
                    oracle.write(addr);
                } else {
                    let sp = rng.gen_range(layout.sp_lim..=layout.vm_max() + 1);
                    table.apply_stack_clean(&StackWindow::new(&layout, sp));
                    oracle.observe_sp(sp);
                }
                let bits: BTreeSet<u32> = table
                    .dirty_indices()
                    .into_iter()
                    .map(|i| i as u32)
                    .collect();
                if bits != oracle.set {
                    return Err(format!(
                        "trace {t} step {step}: {bits:?} != {:?}",
                        oracle.set
                    ));
                }
            }
            Ok(len)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(format!("{TRACES} traces, {steps} steps bit-identical"))
}

/// Random stack-disciplined trace: writes land in data or allocated stack.
fn nd_trace(mode: VttMode, seed: u64) -> Result<(u64, bool), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = random_layout(&mut rng);
    let mut sp = layout.vm_max() + 1;
    let mut table = DTable::new(layout);
    let mut vtt = VttState::new(2.0, 0.01, mode, StackWindow::new(&layout, sp).id_sp);
    let mut drift = false;
    let len = rng.gen_range(1..300);
    for step in 0..len {
        match rng.gen_range(0..3) {
            0 => {
                let stack_allocated = sp <= layout.vm_max();
                let addr = if stack_allocated && rng.gen_bool(0.5) {
                    rng.gen_range(sp..=layout.vm_max())
                } else {
                    layout.vm_min + rng.gen_range(0..layout.sp_lim - layout.vm_min)
                };
                let out = table.record_write(addr, true);
                vtt.on_write(out.newly_set, true);
            }
            _ => {
                sp = rng.gen_range(layout.sp_lim / 2..=layout.vm_max().div_ceil(2)) * 2;
                let w = StackWindow::new(&layout, sp);
                let cleared = table.apply_stack_clean(&w);
                vtt.on_sp_change(w.id_sp, cleared);
            }
        }
        let pop = table.count_ones() as i64;
        match mode {
            VttMode::Exact => check(
                vtt.n_d() == pop,
                format!("seed {seed} step {step}: n_d {} != {pop}", vtt.n_d()),
            )?,
            VttMode::Faithful => {
                check(
                    vtt.n_d() <= pop,
                    format!("seed {seed} step {step}: n_d {} > {pop}", vtt.n_d()),
                )?;
                drift |= vtt.n_d() < pop;
            }
        }
    }
    Ok((len, drift))
}

fn nd_invariants() -> Outcome {
    const TRACES: u64 = 5000;
    let mut steps = 0;
    let mut drifting = 0;
    for t in 0..TRACES {
        steps += nd_trace(VttMode::Exact, 0xE1AC_0000 + t)?.0;
        let (s, d) = nd_trace(VttMode::Faithful, 0xFA17_0000 + t)?;
        steps += s;
        drifting += d as u32;
    }
    // constructed drift: three frame blocks popped, only two of them dirty
    let layout = MemoryLayout::default();
    let b = layout.block_size;
    let top = layout.vm_max() + 1;
    let mut table = DTable::new(layout);
    let mut faithful = VttState::new(
        2.0,
        0.01,
        VttMode::Faithful,
        StackWindow::new(&layout, top).id_sp,
    );
    let mut exact = VttState::new(
        2.0,
        0.01,
        VttMode::Exact,
        StackWindow::new(&layout, top).id_sp,
    );
    let write = |table: &mut DTable, addr: u32, f: &mut VttState, e: &mut VttState| {
        let out = table.record_write(addr, true);
        f.on_write(out.newly_set, true);
        e.on_write(out.newly_set, true);
    };
    for i in 0..5 {
        write(&mut table, layout.vm_min + i * b, &mut faithful, &mut exact);
    }
    let move_sp = |table: &mut DTable, sp: u32, f: &mut VttState, e: &mut VttState| {
        let w = StackWindow::new(&layout, sp);
        let cleared = table.apply_stack_clean(&w);
        f.on_sp_change(w.id_sp, cleared);
        e.on_sp_change(w.id_sp, cleared);
        cleared
    };
    move_sp(&mut table, top - 3 * b, &mut faithful, &mut exact);
    write(&mut table, top - 3 * b, &mut faithful, &mut exact);
    write(&mut table, top - b, &mut faithful, &mut exact);
    let before = table.count_ones();
    let cleared = move_sp(&mut table, top, &mut faithful, &mut exact);
    check(
        before == 7 && cleared == 2,
        format!("constructed trace: {before} dirty, {cleared} cleared"),
    )?;
    check(
        faithful.n_d() == 4 && table.count_ones() == 5,
        format!("faithful n_d {}", faithful.n_d()),
    )?;
    check(exact.n_d() == 5, format!("exact n_d {}", exact.n_d()))?;
    check(drifting > 0, "no random faithful trace drifted")?;
    Ok(format!(
        "{steps} steps; exact n_d == popcount throughout; faithful n_d <= popcount, strict drift in {drifting} random traces and the constructed one (n_d 4 vs popcount 5)"
    ))
}

fn threshold_law() -> Outcome {
    let mut worst = 0.0f64;
    let mut zero_hits = 0;
    for t in 0..2000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x7E5_0000 + t);
        let v_min = rng.gen_range(1.8..2.5);
        let lambda = rng.gen_range(1e-4..0.05);
        let mode = if rng.gen_bool(0.5) {
            VttMode::Exact
        } else {
            VttMode::Faithful
        };
        let mut v = VttState::new(v_min, lambda, mode, 64);
        let mut outstanding = 0usize;
        for _ in 0..rng.gen_range(1..400) {
            match rng.gen_range(0..10) {
                0..=5 => {
                    let fresh = rng.gen_bool(0.7);
                    v.on_write(fresh, rng.gen_bool(0.95));
                    outstanding += fresh as usize;
                }
                6..=8 => {
                    let cleared = rng.gen_range(0..=outstanding.min(4));
                    outstanding -= cleared;
                    v.on_sp_change(rng.gen_range(40..=64), cleared);
                }
                _ => {
                    v.on_reset(64);
                    outstanding = 0;
                }
            }
            let expected = v_min + v.n_d() as f64 * lambda;
            if v.n_d() == 0 {
                check(
                    v.v_ths() == v_min,
                    format!("V_ths(0) = {} != {v_min}", v.v_ths()),
                )?;
                zero_hits += 1;
            } else {
                let rel = ((v.v_ths() - expected) / expected).abs();
                worst = worst.max(rel);
                check(rel <= 1e-9, format!("relative error {rel:e}"))?;
            }
        }
    }
    Ok(format!("2000 random event sequences, worst relative error {worst:.2e}, V_ths(0) == V_min exactly at {zero_hits} zero points"))
}

fn calibration_law() -> Outcome {
    let range = VoltageRange::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA11);
    for _ in 0..100 {
        let cost = rng.gen_range(1..5_000u64);
        let budget = rng.gen_range(cost..2_000_000);
        let cap = CapacitanceConfig::new("rand", budget).unwrap();
        let c = calibrate_lambda(&range, &cap, cost, 1.0).map_err(|e| e.to_string())?;
        check(
            c.n == budget / cost,
            format!(
                "budget {budget} cost {cost}: N {} != {}",
                c.n,
                budget / cost
            ),
        )?;
        let rel = ((c.lambda * c.n as f64 - 1.6) / 1.6).abs();
        check(rel <= 1e-9, format!("lambda*N off by {rel:e}"))?;
    }
    Ok("100 random (budget, cost) pairs: N == floor(budget/cost), lambda*N == 1.6 V".into())
}

fn fig8_trends() -> Outcome {
    let cfg = ExperimentConfig::default();
    let s = &cfg.sweep;
    let r = compare(&cfg.sim, &s.caps, &s.strategies, &s.workloads);
    check(r.rows.len() == 60, format!("{} rows", r.rows.len()))?;
    check(r.all_cells_ran, "not every cell completed")?;
    let sum = &r.summary;
    check(
        sum.ordering_holds && sum.comparable_cells == 20,
        format!("ordering violations: {:?}", sum.ordering_violations),
    )?;
    check(
        sum.gap_trend_holds,
        format!(
            "gap non-decreasing for {} of 5 workloads",
            sum.gap_non_decreasing_count
        ),
    )?;
    let series: Vec<String> = sum
        .gap_series
        .iter()
        .map(|g| {
            format!(
                "{} {:?}",
                g.workload,
                g.gaps.iter().map(|x| x.unwrap_or(-1)).collect::<Vec<_>>()
            )
        })
        .collect();
    Ok(format!(
        "60/60 cells ran, dica <= full in {} of {} (cap, workload) pairs (all 60 strategy cells), gap C4->C1 non-decreasing for {}/5: {}",
        sum.comparable_cells,
        sum.comparable_cells,
        sum.gap_non_decreasing_count,
        series.join("; ")
    ))
}

fn fig6_shape() -> Outcome {
    let spans = [1u32, 128, 512, 2048, 8192];
    let r = profile_blocks(
        &MemoryLayout::default(),
        &CheckpointCosts::default(),
        &BLOCK_SIZES,
        &spans,
        Placement::Contiguous,
    )
    .map_err(|e| e.to_string())?;
    let c = |b, d| r.cycles(b, d).unwrap();
    for d in [128, 512, 2048, 8192] {
        check(
            c(8, d) > c(128, d),
            format!("span {d}: b=8 {} <= b=128 {}", c(8, d), c(128, d)),
        )?;
    }
    check(c(512, 1) > c(128, 1), "1 byte: b=512 not above b=128")?;
    let argmin: Vec<String> = r
        .argmin
        .iter()
        .map(|a| format!("{}B->{}", a.dirty_bytes, a.block_size))
        .collect();
    for a in r
        .argmin
        .iter()
        .filter(|a| a.dirty_bytes == 512 || a.dirty_bytes == 2048)
    {
        check(
            a.block_size == 128,
            format!("mid-range span {} picks b={}", a.dirty_bytes, a.block_size),
        )?;
    }
    Ok(format!(
        "b=8 slower than b=128 for all spans, 1-byte b=512 slower than b=128, argmin {}",
        argmin.join(" ")
    ))
}

struct Budget(u64);

impl EnergySink for Budget {
    fn spend(&mut self, cycles: u64) -> bool {
        let ok = cycles <= self.0;
        self.0 = self.0.saturating_sub(cycles);
        ok
    }
}

fn backoff_protocol() -> Outcome {
    let layout = MemoryLayout::default();
    let costs = CheckpointCosts::default();
    let lambda = 0.0032 * 1.05;
    let delta = 0.1;
    let initial: Vec<u8> = (0..512).map(|i| (i * 13) as u8).collect();
    let mut nvm = Nvm::new(layout).unwrap();
    nvm.deploy(&initial, lambda).unwrap();
    let mut m = MachineState::with_image(layout, &initial);
    m.vm[0] = 0xEE;
    m.vm[3 * 128] = 0xDD;
    // one block copy fits, the second does not
    let mut sink = Budget(costs.isr + 4 * costs.scan + costs.block_copy(128) + 5);
    let g = checkpoint::generate(&mut nvm, &[0, 3], &m, &costs, &mut sink);
    check(
        !g.completed && g.blocks_copied == 1,
        format!("generate: {g:?}"),
    )?;
    check(
        nvm.in_progress() && !nvm.valid(),
        "in_progress not left set",
    )?;
    let mut fresh = MachineState::new(layout);
    let boot = checkpoint::boot(
        &mut nvm,
        &mut fresh,
        &costs,
        delta,
        &mut intermit_sim::power::Mains,
    );
    check(
        boot.recovered_failure && !boot.resumed,
        format!("boot: {boot:?}"),
    )?;
    check(
        boot.lambda == lambda * (1.0 + delta),
        format!("lambda' {} != {}", boot.lambda, lambda * (1.0 + delta)),
    )?;
    check(
        nvm.lambda() == lambda * (1.0 + delta),
        "backed-off lambda not persisted",
    )?;
    check(
        &fresh.vm[..512] == initial.as_slice() && fresh.pc() == 0,
        "fresh start did not reload the initial image",
    )?;
    check(
        nvm.image() == nvm.load_image(),
        "checkpoint image not reset",
    )?;

    // the same protocol end to end, via a forced mid-generate depletion
    let c = SimConfig {
        workload: WorkloadSpec::new(WorkloadKind::Matmul),
        decay_spikes: vec![DecaySpike {
            power_cycle: 1,
            factor: 3.0,
        }],
        ..SimConfig::default()
    };
    let r = simulate(&c).map_err(|e| e.to_string())?;
    check(
        r.checkpoint_failures == 1,
        format!("{} failures", r.checkpoint_failures),
    )?;
    check(
        r.lambda_final == r.lambda_initial * (1.0 + delta),
        "engine lambda not backed off exactly once",
    )?;
    check(
        r.completed && r.output_matches_oracle,
        "engine run did not recover",
    )?;
    Ok(format!(
        "in_progress survives depletion, fresh start at next boot, lambda {lambda} -> {} exactly",
        boot.lambda
    ))
}

fn determinism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xDE7);
    let mut n = 0;
    for _ in 0..20 {
        let c = random_config(&mut rng);
        let report = |c: &SimConfig| {
            let cfg = ExperimentConfig {
                sim: c.clone(),
                ..ExperimentConfig::default()
            };
            serde_json::to_string(&SimulateReport::new(cfg, &simulate(c))).unwrap()
        };
        let a = report(&c);
        let b = report(&c);
        check(a == b, format!("report differs for seed {}", c.seed))?;
        // the echoed config alone reproduces the report
        let echoed: serde_json::Value = serde_json::from_str(&a).unwrap();
        let cfg = ExperimentConfig::from_json(&echoed["config"].to_string())
            .map_err(|e| e.to_string())?;
        check(
            report(&cfg.sim) == a,
            "echoed config does not reproduce the report",
        )?;
        n += 1;
    }
    let caps = &CapacitanceConfig::defaults()[..2];
    let ws: Vec<_> = WorkloadKind::ALL
        .iter()
        .map(|&k| WorkloadSpec::new(k))
        .collect();
    let a = serde_json::to_string(&compare(
        &SimConfig::default(),
        caps,
        &StrategyKind::ALL,
        &ws,
    ))
    .unwrap();
    let b = serde_json::to_string(&compare(
        &SimConfig::default(),
        caps,
        &StrategyKind::ALL,
        &ws,
    ))
    .unwrap();
    check(a == b, "parallel sweep report differs between runs")?;
    Ok(format!(
        "{n} jittered runs and a 30-cell parallel sweep repeat bit-identically"
    ))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("crash consistency", crash_consistency),
        ("DTable oracle equivalence", dtable_oracle),
        ("n_d invariants", nd_invariants),
        ("threshold law", threshold_law),
        ("calibration law", calibration_law),
        ("power-cycle trends", fig8_trends),
        ("block-size profile shape", fig6_shape),
        ("failure back-off protocol", backoff_protocol),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} PASS  {name} ({secs:.1}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} FAIL  {name} ({secs:.1}s): {why}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
