//! Acceptance checks for the whole system. Prints one PASS or FAIL line per
//! criterion and exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use chainflow_core::canon::canonical_json_bytes;
use chainflow_core::chain::{replay_main, Chain, ChainEvent};
use chainflow_core::crypto::NodeIdentity;
use chainflow_core::engine::{ActionsEngine, AnyEngine, Design, WorkflowEngine};
use chainflow_core::testkit::ExampleChain;
use chainflow_sim::batch::{run_batch, Mode};
use chainflow_sim::{generate, oracle, run, RunReport, Scenario, Sim};

type Verdict = Result<String, String>;

fn assertion<'r>(r: &'r RunReport, name: &str) -> Option<&'r chainflow_sim::assertions::AssertionResult> {
    r.assertions.iter().find(|a| a.name == name)
}

fn batch(scenarios: &[Scenario]) -> Result<Vec<RunReport>, String> {
    run_batch(scenarios, Mode::best()).into_iter().zip(scenarios).map(|(r, s)| r.map_err(|e| format!("{}: {e}", s.name))).collect()
}

/// Every report carries a passing `name` assertion.
fn all_pass(reports: &[RunReport], name: &str) -> Verdict {
    for r in reports {
        match assertion(r, name) {
            Some(a) if a.passed => {}
            Some(a) => return Err(format!("{} seed {}: {}", r.scenario, r.seed, a.evidence)),
            None => return Err(format!("{} does not check {name}", r.scenario)),
        }
    }
    Ok(format!("{} runs", reports.len()))
}

fn example_chain() -> Verdict {
    let x = ExampleChain::build(8);
    let members = x.miners.iter().map(|n| (n.to_string(), NodeIdentity::for_name(n).public_key())).collect();
    let mut c = Chain::new(&x.network_id, x.difficulty, members, ActionsEngine::new());
    let mut reorgs = 0;
    for name in ["1", "2b", "3b", "2", "3", "6", "4", "5"] {
        let out = c.receive_block(x.block(name).clone()).map_err(|e| format!("block {name}: {e}"))?;
        reorgs += out.events.iter().filter(|e| matches!(e, ChainEvent::Reorganized { .. })).count();
    }
    if c.head() != x.block("6").block_hash {
        return Err("head is not block 6 after the withheld parent arrived".into());
    }
    if c.confirmation_depth(&x.block("4").block_hash) != Ok(2) || c.confirmation_depth(&x.block("3b").block_hash).is_ok() {
        return Err("confirmation depths disagree with the main branch".into());
    }
    let fresh = replay_main(&c, ActionsEngine::new()).map_err(|e| e.to_string())?;
    if fresh.state_json() != c.engine().state_json() {
        return Err("replay differs from the reorganized state".into());
    }
    if reorgs != 1 {
        return Err(format!("{reorgs} reorganizations, expected 1"));
    }
    Ok("head 6 at height 6, one reorganization, replay matches".into())
}

fn state_bytes(e: &AnyEngine) -> Vec<u8> {
    canonical_json_bytes(&e.state_json()).expect("canonical state")
}

/// Connects real simulated main branches block by block, then unwinds them,
/// comparing every intermediate state byte for byte.
fn do_undo(target: usize) -> Verdict {
    let mut checked = [0usize; 2];
    for (d, design) in [Design::Actions, Design::States].into_iter().enumerate() {
        let mut index = 0;
        while checked[d] < target {
            let s = generate::random(index, 77).with_design(design);
            index += 1;
            let mut sim = Sim::new(&s);
            for _ in 0..s.stop.max_ticks {
                sim.step().map_err(|e| e.to_string())?;
            }
            let node = &sim.nodes()[0];
            let store = node.chain().store();
            let blocks: Vec<_> = (1..=store.head_height()).filter_map(|h| store.main_block_at(h).cloned()).collect();
            let mut e = AnyEngine::new(design);
            let mut history = vec![state_bytes(&e)];
            for b in &blocks {
                e.connect_block(b, store).map_err(|x| x.to_string())?;
                history.push(state_bytes(&e));
            }
            for b in blocks.iter().rev() {
                e.disconnect_block(b, store).map_err(|x| x.to_string())?;
                history.pop();
                if state_bytes(&e) != *history.last().expect("genesis state") {
                    return Err(format!("{design}: undoing block {} of {} left a different state", b.height, s.name));
                }
            }
            checked[d] += blocks.len();
        }
    }
    Ok(format!("{} blocks under actions, {} under states", checked[0], checked[1]))
}

fn reorg_replay() -> Verdict {
    let mut checks = 0;
    let mut reorgs = 0;
    for design in [Design::Actions, Design::States] {
        let scenarios: Vec<Scenario> = (0..10).map(|i| generate::forced_fork(i).with_design(design)).collect();
        for r in batch(&scenarios)? {
            if let Some(m) = r.metrics.replay_mismatches.first() {
                return Err(format!("{design} {}: {m}", r.scenario));
            }
            checks += r.metrics.replay_checks;
            reorgs += r.metrics.reorgs;
        }
    }
    if reorgs == 0 {
        return Err("no reorganization happened".into());
    }
    Ok(format!("{reorgs} reorganizations, {checks} replay comparisons, all equal"))
}

fn latency() -> Verdict {
    let scenarios: Vec<Scenario> = [0, 2, 6].iter().map(|k| generate::latency(*k, 0.05, 220, 1, Design::Actions)).collect();
    let reports = batch(&scenarios)?;
    let mut parts = Vec::new();
    for r in &reports {
        let a = assertion(r, "latency_bound").ok_or("no latency assertion")?;
        if !a.passed {
            return Err(a.evidence.clone());
        }
        parts.push(a.evidence.clone());
    }
    Ok(parts.join("; "))
}

fn pow_and_determinism(reports: &[RunReport]) -> Verdict {
    let blocks: u64 = reports.iter().map(|r| r.metrics.blocks_mined).sum();
    let violations: u64 = reports.iter().map(|r| r.metrics.pow_violations).sum();
    if violations > 0 {
        return Err(format!("{violations} blocks below difficulty"));
    }
    for i in 0..5 {
        let s = generate::random(i, 1);
        let (a, b) = (run(&s).map_err(|e| e.to_string())?, run(&s).map_err(|e| e.to_string())?);
        if a.trace_jsonl() != b.trace_jsonl() {
            return Err(format!("{} produced two different traces", s.name));
        }
    }
    Ok(format!("{blocks} blocks meet difficulty; 5 scenarios replay to identical traces"))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut results: Vec<(&str, Verdict)> = Vec::new();

    results.push(("example_chain", example_chain()));

    let random: Vec<Scenario> = (0..100).map(|i| generate::random(i, 1)).collect();
    let t = Instant::now();
    let reports = batch(&random);
    let elapsed = t.elapsed();
    match &reports {
        Ok(reports) => {
            let converged = all_pass(reports, "converged_heads").map(|m| format!("{m} converged in {:.1}s", elapsed.as_secs_f64()));
            results.push(("eventual_consistency", converged.and_then(|m| {
                if elapsed.as_secs() < 120 { Ok(m) } else { Err(format!("{m}, over the two minute budget")) }
            })));
            results.push(("safety", all_pass(reports, "no_invalid_confirmed")));
        }
        Err(e) => {
            results.push(("eventual_consistency", Err(e.clone())));
            results.push(("safety", Err(e.clone())));
        }
    }

    let race: Vec<Scenario> = (0..100).map(|i| generate::deferred_choice_race(i, if i % 2 == 0 { Design::Actions } else { Design::States })).collect();
    results.push(("deferred_choice_exclusive", batch(&race).and_then(|r| all_pass(&r, "deferred_choice_exclusive"))));

    results.push(("do_undo", do_undo(1000)));
    results.push(("reorg_replay", reorg_replay()));

    let mirrored: Vec<Scenario> = (0..20).map(|i| generate::mirrored(i, 1)).collect();
    results.push(("cross_design", batch(&mirrored).and_then(|r| all_pass(&r, "designs_equivalent"))));

    let o = oracle::sweep(500, 4, 1, Mode::best());
    results.push((
        "reachability_oracle",
        match o.mismatches.first() {
            None => Ok(format!("{} nets, {} queries ({} reachable), no mismatch", o.nets, o.queries, o.reachable_queries)),
            Some(m) => Err(format!("{} mismatches; net {}: expected {} got {}", o.mismatches.len(), m.net, m.expected, m.got)),
        },
    ));

    results.push(("latency", latency()));
    results.push(("pow_determinism", reports.as_deref().map_err(Clone::clone).and_then(pow_and_determinism)));

    let mut failed = 0;
    for (name, verdict) in &results {
        match verdict {
            Ok(m) => println!("PASS {name}: {m}"),
            Err(m) => {
                failed += 1;
                println!("FAIL {name}: {m}");
            }
        }
    }
    println!("{} of {} criteria passed in {:.1}s", results.len() - failed, results.len(), started.elapsed().as_secs_f64());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
