//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if any
//! criterion fails.

mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapcoop::coalition::coalition_weights;
use shapcoop::cot::literal_weight_sum;
use shapcoop::env::raid_battle::{self, contribution_ledger, global_reward, RaidEnv, Skill};
use shapcoop::runtime::{default_reasoner, run_scripted, scripted_policies, settle_trajectory};
use shapcoop::wev::{report, round1, ContributionMatrix, WeightRanges};
use shapcoop::{
    collective_outcome, marginal_contribution_traj, parse_message, render_message, shapley_exact,
    shapley_from_trajectory, shapley_two_agent, side_payments, Action, Allocation, CharacteristicGame, Coalition,
    CounterfactualMode, MultiAgentEnv, NegotiationMessage, PipelineConfig, Session, SessionStatus, ShapleyMode,
    TrajectoryRecord, Variant,
};
use support::*;

type Outcome = Result<(), String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        {
            let ok: bool = $cond;
            if !ok {
                return Err(format!($($msg)+));
            }
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn within(label: &str, elapsed: Duration, budget: Duration) -> Outcome {
    ensure!(elapsed < budget, "{label} took {elapsed:?}, budget {budget:?}");
    Ok(())
}

fn criterion_1() -> Outcome {
    let game = shapcoop::env::PayoffMatrix::canonical().characteristic_game().map_err(|e| e.to_string())?;
    let realized = Allocation::new(vec![-1.0, 10.0]).unwrap();
    let target = Allocation::new(vec![4.5, 4.5]).unwrap();

    let mut best = Duration::MAX;
    for _ in 0..20 {
        let start = Instant::now();
        let closed = shapley_two_agent(0.0, 0.0, 9.0);
        let exact = shapley_exact(&game).map_err(|e| e.to_string())?;
        let plan = side_payments(&realized, &target).map_err(|e| e.to_string())?;
        best = best.min(start.elapsed());

        ensure!(closed == (4.5, 4.5), "closed form gave {closed:?}");
        ensure!(exact.payoffs() == [4.5, 4.5], "exact solver gave {:?}", exact.payoffs());
        let entries = plan.entries();
        ensure!(entries == vec![(1, 0, 5.5)], "transfer plan {entries:?}");
    }
    within("escape-room Shapley", best, Duration::from_millis(1))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tol = 1e-9;
    for g in 0..1000 {
        let n = rng.random_range(2..=8usize);
        let base = random_table(&mut rng, n);
        let other = random_table(&mut rng, n);
        let game = CharacteristicGame::from_table(n, base.clone()).unwrap();
        let phi = shapley_exact(&game).unwrap();
        let grand = base[(1 << n) - 1];
        ensure!(close(phi.total(), grand, tol), "game {g}: efficiency {} vs {grand}", phi.total());

        // Symmetry: average the game with its (i j)-swapped image.
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
        if i != j {
            let swap = |mask: usize| {
                let (bi, bj) = ((mask >> i) & 1, (mask >> j) & 1);
                (mask & !(1 << i) & !(1 << j)) | (bj << i) | (bi << j)
            };
            let sym: Vec<f64> = (0..base.len()).map(|m| 0.5 * (base[m] + base[swap(m)])).collect();
            let p = shapley_exact(&CharacteristicGame::from_table(n, sym).unwrap()).unwrap();
            ensure!(close(p[i], p[j], tol), "game {g}: symmetric players {i},{j} got {} and {}", p[i], p[j]);
        }

        // Dummy: agent d only ever adds its standalone value c.
        let d = rng.random_range(0..n);
        let c = rng.random_range(-5.0..5.0);
        let dummy: Vec<f64> = (0..base.len())
            .map(|m| base[m & !(1 << d)] + if m & (1 << d) != 0 { c } else { 0.0 })
            .collect();
        let p = shapley_exact(&CharacteristicGame::from_table(n, dummy).unwrap()).unwrap();
        ensure!(close(p[d], c, tol), "game {g}: dummy {d} got {} expected {c}", p[d]);

        // Additivity.
        let w = CharacteristicGame::from_table(n, other.clone()).unwrap();
        let sum = shapley_exact(&game.combine(&w).unwrap()).unwrap();
        let pw = shapley_exact(&w).unwrap();
        for k in 0..n {
            ensure!(close(sum[k], phi[k] + pw[k], tol), "game {g}: additivity fails for agent {k}");
        }

        if n <= 6 {
            let oracle = permutation_shapley(n, &base);
            for k in 0..n {
                ensure!(close(phi[k], oracle[k], tol), "game {g}: agent {k} {} vs oracle {}", phi[k], oracle[k]);
            }
        }
    }
    // Every n ≤ 6, including n = 1, against the permutation oracle.
    for n in 1..=6 {
        let table = random_table(&mut rng, n);
        let phi = shapley_exact(&CharacteristicGame::from_table(n, table.clone()).unwrap()).unwrap();
        let oracle = permutation_shapley(n, &table);
        for k in 0..n {
            ensure!(close(phi[k], oracle[k], tol), "n={n}: agent {k} {} vs oracle {}", phi[k], oracle[k]);
        }
    }
    within("axiom sweep", start.elapsed(), Duration::from_secs(30))
}

fn all_fixtures() -> Vec<TrajectoryRecord> {
    let mut out: Vec<TrajectoryRecord> = escape_fixtures().into_iter().map(|(t, _)| t).collect();
    out.push(raid_fixture(&fixture_a().0));
    out.push(raid_fixture(&fixture_b().0));
    out
}

fn criterion_3() -> Outcome {
    for n in 1..=12 {
        let w = coalition_weights(n);
        let mut binom = 1u64;
        let mut sum = 0.0;
        for (s, ws) in w.iter().enumerate() {
            if s > 0 {
                binom = binom * (n - s) as u64 / s as u64;
            }
            sum += binom as f64 * ws;
        }
        ensure!(close(sum, 1.0, 1e-12), "n={n}: weights sum to {sum}");
        ensure!(close(literal_weight_sum(n), 1.0, 1e-12), "n={n}: literal weight sum {}", literal_weight_sum(n));
    }
    for traj in all_fixtures() {
        let phi = shapley_from_trajectory(&traj, ShapleyMode::PaperLiteral, CounterfactualMode::AblateLog)
            .map_err(|e| e.to_string())?;
        for i in 0..traj.n_agents() {
            let delta = marginal_contribution_traj(&traj, i, CounterfactualMode::AblateLog).map_err(|e| e.to_string())?;
            ensure!(close(phi[i], delta, 1e-12), "{}: φ_{i} = {} but Δ_{i} = {delta}", traj.env_id(), phi[i]);
        }
    }
    Ok(())
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    for (name, table) in [("BMI", BMI), ("ArtCanvas", ARTCANVAS)] {
        let matrix = ContributionMatrix::new(table.iter().map(|r| (r.0.to_string(), r.1)).collect()).unwrap();
        let rewards: Vec<f64> = table.iter().map(|r| r.4).collect();
        let rep = report(&matrix, &WeightRanges::default(), &rewards).map_err(|e| e.to_string())?;
        for (row, want) in rep.rows.iter().zip(table.iter()) {
            let (lo, hi, adj) = (round1(row.range.lo), round1(row.range.hi), round1(row.adjustment));
            ensure!(
                close(lo, want.2, 0.1 + 1e-9) && close(hi, want.3, 0.1 + 1e-9),
                "{name} {}: range {lo}-{hi}, expected {}-{}",
                row.role,
                want.2,
                want.3
            );
            ensure!(close(adj, want.5, 0.15 + 1e-9), "{name} {}: adjustment {adj}, expected {}", row.role, want.5);
        }
    }
    within("WEV tables", start.elapsed(), Duration::from_secs(1))
}

fn random_message(rng: &mut ChaCha8Rng) -> NegotiationMessage {
    const WORDS: [&str; 10] = ["pull", "the", "lever", "fair", "share", "door", "boss", "heal", "<tag>", "5.5%"];
    let text = |rng: &mut ChaCha8Rng| {
        let k = rng.random_range(1..6);
        (0..k).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
    };
    let amount = (rng.random_range(-10_000i64..10_000) as f64) / 100.0;
    match rng.random_range(0..5) {
        0 => NegotiationMessage::intent(text(rng)),
        1 => NegotiationMessage::proposal(amount, text(rng)),
        2 => NegotiationMessage::agree(text(rng)),
        3 => NegotiationMessage::disagree(text(rng)),
        _ => NegotiationMessage::counter(amount, text(rng)),
    }
}

/// Two agents alternate; the session must report agreement exactly when the
/// agent who did not make the latest proposal answered it with `agree`.
fn model_check() -> Outcome {
    let alphabet = [
        NegotiationMessage::intent("open the door"),
        NegotiationMessage::proposal(5.5, "lever cost"),
        NegotiationMessage::proposal(1.0, "small"),
        NegotiationMessage::agree("fine"),
        NegotiationMessage::disagree("no"),
        NegotiationMessage::counter(3.0, "meet halfway"),
    ];
    let mut checked = 0usize;
    for len in 0..=6u32 {
        for code in 0..alphabet.len().pow(len) {
            let mut session = Session::new(vec![0, 1], 3).unwrap();
            let mut standing: Option<(usize, usize)> = None;
            let mut agreed: Option<(usize, usize)> = None;
            let mut c = code;
            for t in 0..len as usize {
                let m = c % alphabet.len();
                c /= alphabet.len();
                let sender = t % 2;
                let res = session.advance(sender, alphabet[m].clone());
                if agreed.is_some() {
                    ensure!(res.is_err(), "message accepted after agreement (sequence {code}, len {len})");
                    continue;
                }
                res.map_err(|e| format!("sequence {code}: {e}"))?;
                match m {
                    1 | 2 | 5 => standing = Some((sender, m)),
                    3 => {
                        if let Some((p, _)) = standing {
                            if p != sender {
                                agreed = standing;
                            }
                        }
                    }
                    _ => {}
                }
                match (session.status(), agreed) {
                    (SessionStatus::Agreed(a), Some((p, msg))) => {
                        ensure!(
                            a.proposer == p && Some(&a.proposal) == alphabet[msg].proposal_payload(),
                            "sequence {code}: agreed on the wrong proposal"
                        );
                    }
                    (SessionStatus::Agreed(_), None) => return Err(format!("false agreement, sequence {code} len {len}")),
                    (_, Some(_)) => return Err(format!("missed agreement, sequence {code} len {len}")),
                    (SessionStatus::TimedOut, None) => ensure!(t == 5, "timed out early at turn {t}"),
                    (SessionStatus::Open, None) => {}
                }
            }
            checked += 1;
        }
    }
    ensure!(checked == (0..=6).map(|l| 6usize.pow(l)).sum::<usize>(), "checked {checked} sequences");
    Ok(())
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 0..1000 {
        let msg = random_message(&mut rng);
        let text = render_message(&msg);
        let back = parse_message(&text).map_err(|e| format!("message {k} {text:?}: {e}"))?;
        ensure!(back == msg, "message {k}: {msg:?} came back as {back:?}");
        ensure!(render_message(&back) == text, "message {k}: render not stable");
    }
    let templates = [
        ("<s>I propose to pull the lever</s>", NegotiationMessage::intent("pull the lever")),
        (
            "<s>I propose transferring 5.5 because you paid the lever cost</s>",
            NegotiationMessage::proposal(5.5, "you paid the lever cost"),
        ),
        (
            "<s>I agree because the split matches contributions</s>",
            NegotiationMessage::agree("the split matches contributions"),
        ),
    ];
    for (text, want) in templates {
        let got = parse_message(text).map_err(|e| format!("{text:?}: {e}"))?;
        ensure!(got == want, "{text:?} parsed as {got:?}");
        ensure!(render_message(&got) == text, "{text:?} renders back differently");
    }
    model_check()
}

fn scripted_raid(seed: u64) -> TrajectoryRecord {
    let script = [
        [Skill::Fireball, Skill::Taunt, Skill::Fireball, Skill::Heal],
        [Skill::Fireball, Skill::Fireball, Skill::Taunt, Skill::Fireball],
    ];
    let mut env = RaidEnv::new(raid_battle::RaidConfig::default()).unwrap();
    env.reset(seed);
    let mut traj = TrajectoryRecord::new(shapcoop::TrajectoryHeader {
        env_id: raid_battle::ENV_ID.into(),
        seed: Some(seed),
        agents: (0..4).map(|id| shapcoop::trajectory::AgentInfo { id, policy: "script".into() }).collect(),
        config: env.config_json(),
        pipeline: None,
    });
    let mut t = 0;
    while !env.is_done() {
        let actions: Vec<Option<Action>> = (0..4)
            .map(|h| {
                let a = Action::Raid(script[t % 2][h]);
                env.legal_actions(h).contains(&a).then_some(a)
            })
            .collect();
        traj.steps.push(env.step(&actions).unwrap());
        t += 1;
    }
    traj.steps.extend(env.terminal_record());
    traj
}

fn criterion_6() -> Outcome {
    for seed in [0u64, 7, 42] {
        let (a, b) = (scripted_raid(seed).to_jsonl(), scripted_raid(seed).to_jsonl());
        ensure!(a == b, "seed {seed}: scripted trajectories differ");
        let names: Vec<String> = vec!["role_balanced".into(); 4];
        let cfg = PipelineConfig::new(Variant::Sc);
        let r1 = run_scripted("raid_battle", None, &names, &cfg, seed).map_err(|e| e.to_string())?;
        let r2 = run_scripted("raid_battle", None, &names, &cfg, seed).map_err(|e| e.to_string())?;
        ensure!(r1.trajectory.to_jsonl() == r2.trajectory.to_jsonl(), "seed {seed}: episode trajectories differ");
        ensure!(r1.transcripts_jsonl() == r2.transcripts_jsonl(), "seed {seed}: transcripts differ");
    }
    for seed in 0..50u64 {
        for names in [["role_balanced"; 4], ["greedy_selfish"; 4], ["shapley_negotiator"; 4]] {
            let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
            let out = run_scripted("raid_battle", None, &names, &PipelineConfig::new(Variant::Sts), seed)
                .map_err(|e| e.to_string())?;
            for (h, l) in contribution_ledger(&out.trajectory).map_err(|e| e.to_string())?.iter().enumerate() {
                ensure!(l.taunt_blocked % 300.0 == 0.0, "seed {seed} hero {h}: taunt ledger {}", l.taunt_blocked);
            }
        }
    }
    ensure!(global_reward(0, 4, 10, 10) == 0.0, "10 turns should score 0");
    ensure!(global_reward(0, 4, 5, 10) == 50.0, "0 dead / 5 turns should score 50");
    ensure!(global_reward(2, 4, 5, 10) == 25.0, "2 dead / 5 turns should score 25");
    Ok(())
}

fn criterion_7() -> Outcome {
    let mut fixtures: Vec<(TrajectoryRecord, Vec<f64>, f64)> = Vec::new();
    for (traj, deltas) in escape_fixtures() {
        let total = collective_outcome(&traj);
        fixtures.push((traj, deltas.to_vec(), total));
    }
    for (script, total, deltas) in [fixture_a(), fixture_b()] {
        let traj = raid_fixture(&script);
        ensure!(collective_outcome(&traj) == total, "raid fixture logs R(N) = {}, expected {total}", collective_outcome(&traj));
        fixtures.push((traj, deltas.to_vec(), total));
    }
    for (k, (traj, deltas, total)) in fixtures.iter().enumerate() {
        for (i, want) in deltas.iter().enumerate() {
            let got = marginal_contribution_traj(traj, i, CounterfactualMode::AblateLog).map_err(|e| e.to_string())?;
            ensure!(got == *want, "fixture {k}: Δ_{i} = {got}, hand value {want}");
        }
        let phi = shapley_from_trajectory(traj, ShapleyMode::FullCoalition, CounterfactualMode::AblateLog)
            .map_err(|e| e.to_string())?;
        ensure!(close(phi.total(), *total, 1e-9), "fixture {k}: Σφ = {} but R(N) = {total}", phi.total());
        let grand = shapcoop::cot::coalition_outcome(traj, Coalition::grand(traj.n_agents()), CounterfactualMode::AblateLog)
            .map_err(|e| e.to_string())?;
        ensure!(close(grand, *total, 1e-9), "fixture {k}: full replay gives {grand}, log gives {total}");
    }
    Ok(())
}

/// Seed at which both raid regression pins below hold.
const PINNED_RAID_SEED: u64 = 0;

fn names(name: &str, n: usize) -> Vec<String> {
    vec![name.to_string(); n]
}

fn criterion_8() -> Outcome {
    let greedy = run_scripted("escape_room", None, &names("greedy_selfish", 2), &PipelineConfig::new(Variant::LlmOnly), 0)
        .map_err(|e| e.to_string())?;
    let alloc = greedy.settlement.ok_or("greedy escape episode was not settled")?.allocation;
    ensure!(alloc.payoffs() == [-1.0, -1.0], "greedy escape settled at {:?}", alloc.payoffs());

    let coop = run_scripted("escape_room", None, &names("shapley_negotiator", 2), &PipelineConfig::new(Variant::Sc), 0)
        .map_err(|e| e.to_string())?;
    let s = coop.settlement.ok_or("negotiator escape episode was not settled")?;
    ensure!(s.allocation.payoffs() == [4.5, 4.5], "negotiator escape settled at {:?}", s.allocation.payoffs());

    let won = run_scripted(
        "raid_battle",
        None,
        &names("role_balanced", 4),
        &PipelineConfig::new(Variant::Sc),
        PINNED_RAID_SEED,
    )
    .map_err(|e| e.to_string())?;
    let last = won.trajectory.action_steps().last().ok_or("empty raid trajectory")?;
    ensure!(last.boss_hp == Some(0.0), "role_balanced left the boss at {:?}", last.boss_hp);
    ensure!(won.trajectory.action_steps().count() <= 10, "role_balanced needed more than 10 turns");

    let greedy = run_scripted(
        "raid_battle",
        None,
        &names("greedy_selfish", 4),
        &PipelineConfig::new(Variant::LlmOnly),
        PINNED_RAID_SEED,
    )
    .map_err(|e| e.to_string())?;
    let last = greedy.trajectory.action_steps().last().ok_or("empty raid trajectory")?;
    let died = last.hp.as_ref().is_some_and(|hp| hp.iter().any(|&h| h <= 0.0));
    let lost = last.boss_hp != Some(0.0);
    ensure!(died || lost, "greedy_selfish won without losing a hero at seed {PINNED_RAID_SEED}");
    Ok(())
}

fn criterion_9() -> Outcome {
    let traj = raid_fixture(&fixture_b().0);
    let mut policies = scripted_policies(&names("shapley_negotiator", 4), &default_reasoner()).map_err(|e| e.to_string())?;
    let (s, _) = settle_trajectory(&traj, &mut policies, &PipelineConfig::new(Variant::Sc)).map_err(|e| e.to_string())?;
    ensure!(!s.fallback, "settlement fell back to realized payoffs");
    let phi = s.shapley.clone().ok_or("no Shapley split recorded")?;
    let reference = shapley_from_trajectory(&traj, ShapleyMode::FullCoalition, CounterfactualMode::AblateLog)
        .map_err(|e| e.to_string())?;
    ensure!(phi == reference, "settlement split {:?} differs from full_coalition {:?}", phi.payoffs(), reference.payoffs());
    let mut previous = f64::INFINITY;
    for (r, claims) in s.claims_by_round(3).iter().enumerate() {
        ensure!(claims.iter().all(|c| c.is_finite()), "round {}: some agent made no claim", r + 1);
        let l1: f64 = claims.iter().zip(phi.payoffs()).map(|(c, p)| (c - p).abs()).sum();
        println!("    round {}: L1 distance to Shapley split {l1:.4}", r + 1);
        ensure!(l1 <= previous + 1e-9, "round {}: L1 rose from {previous} to {l1}", r + 1);
        if r == 0 {
            ensure!(l1 > 0.0, "fixture opens at the Shapley split; nothing to converge");
        }
        previous = l1;
    }
    ensure!(previous < 1e-9, "final round still {previous} away from the Shapley split");
    ensure!(s.allocation == phi, "agreed allocation {:?} is not the Shapley split", s.allocation.payoffs());
    Ok(())
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("escape-room Shapley split and side payment", criterion_1),
        ("Shapley axioms and permutation oracle", criterion_2),
        ("coalition weight identity and literal mode", criterion_3),
        ("WEV allocation table reproduction", criterion_4),
        ("negotiation round trip and session model check", criterion_5),
        ("raid determinism, taunt ledger, global reward", criterion_6),
        ("counterfactual credit on fixtures", criterion_7),
        ("dilemma regression pins", criterion_8),
        ("negotiation convergence over rounds", criterion_9),
    ];
    let mut failed = Vec::new();
    for (k, (label, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let ms = start.elapsed().as_secs_f64() * 1e3;
        match result {
            Ok(()) => println!("criterion {}: PASS  {label} ({ms:.1} ms)", k + 1),
            Err(why) => {
                println!("criterion {}: FAIL  {label} ({ms:.1} ms): {why}", k + 1);
                failed.push(k + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
