//! Acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero if any fails.
#![allow(clippy::needless_range_loop)]

mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pfmpc::config::{Config, Variant};
use pfmpc::dynamics::{jacobians, step, ControlInput, VehicleState, CONTROL_DIM, STATE_DIM};
use pfmpc::geometry::normalize_angle;
use pfmpc::mpc::{modulated_tracking_weights, solve};
use pfmpc::potential::{effective_obstacle_gain, ObstacleClass};
use pfmpc::sim::{
    self, infraction_score, write_log_csv, InfractionEvent, InfractionKind, ScenarioSpec,
    SimOutcome,
};

use common::{scenario, snapshots, suite, Problem};

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run(spec: &ScenarioSpec, variant: Variant, cfg: &Config) -> SimOutcome {
    let mut c = variant.build(cfg);
    sim::run(spec, c.as_mut(), cfg, 0, variant.as_str()).unwrap()
}

fn dynamics_fidelity() -> Verdict {
    let start = Instant::now();
    let p = Config::default().vehicle;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut bad = 0;
    for _ in 0..1000 {
        let x = VehicleState::new(
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(-3.1..3.1),
            rng.random_range(0.0..20.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let u = ControlInput::new(
            rng.random_range(p.u_min[0]..p.u_max[0]),
            rng.random_range(p.u_min[1]..p.u_max[1]),
        );
        let (a, b) = jacobians(&x, &u, &p).unwrap();
        let mut compare = |analytic: f64, hi: [f64; STATE_DIM], lo: [f64; STATE_DIM], i: usize| {
            let mut diff = hi[i] - lo[i];
            if i == 2 {
                diff = normalize_angle(diff);
            }
            let fd = diff / (2.0 * h);
            let err = (analytic - fd).abs();
            let tol = 1e-5f64.max(1e-4 * fd.abs());
            worst = worst.max(err / tol);
            if err > tol {
                bad += 1;
            }
        };
        let xa = x.to_array();
        for j in 0..STATE_DIM {
            let (mut hi, mut lo) = (xa, xa);
            hi[j] += h;
            lo[j] -= h;
            let fh = step(&VehicleState::from_array(hi), &u, &p)
                .unwrap()
                .to_array();
            let fl = step(&VehicleState::from_array(lo), &u, &p)
                .unwrap()
                .to_array();
            for i in 0..STATE_DIM {
                compare(a[i][j], fh, fl, i);
            }
        }
        let ua = u.to_array();
        for j in 0..CONTROL_DIM {
            let (mut hi, mut lo) = (ua, ua);
            hi[j] += h;
            lo[j] -= h;
            let fh = step(&x, &ControlInput::from_array(hi), &p)
                .unwrap()
                .to_array();
            let fl = step(&x, &ControlInput::from_array(lo), &p)
                .unwrap()
                .to_array();
            for i in 0..STATE_DIM {
                compare(b[i][j], fh, fl, i);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        bad == 0 && secs < 5.0,
        format!(
            "1000 points, {bad} entries out of tolerance, worst err/tol {worst:.3}, {secs:.2} s"
        ),
    )
}

fn grid(lo: f64, hi: f64) -> [f64; 5] {
    std::array::from_fn(|i| lo + (hi - lo) * i as f64 / 4.0)
}

fn solver_oracle() -> Verdict {
    let cfg = Config::default();
    let mut lines = Vec::new();
    let mut ok = true;
    for spec in suite() {
        let start = Instant::now();
        let snaps = snapshots(&spec, &cfg, 1);
        let stride = (snaps.len() / 6).max(1);
        let mut worst = f64::MIN;
        let mut min_best = f64::INFINITY;
        let mut count = 0;
        for (ego, planner) in snaps.iter().step_by(stride).take(6) {
            let problem = Problem::new(*ego, planner, &cfg, 3);
            let ctx = problem.ctx();
            let solved = solve(&ctx, None).unwrap().total_cost;
            let acc = grid(cfg.vehicle.u_min[0], cfg.vehicle.u_max[0]);
            let steer = grid(cfg.vehicle.u_min[1], cfg.vehicle.u_max[1]);
            let cells: Vec<ControlInput> = acc
                .iter()
                .flat_map(|&a| steer.iter().map(move |&d| ControlInput::new(a, d)))
                .collect();
            let mut best = f64::INFINITY;
            for &u0 in &cells {
                for &u1 in &cells {
                    for &u2 in &cells {
                        let (c, _) = ctx.evaluate_cost(&[u0, u1, u2]).unwrap();
                        best = best.min(c);
                    }
                }
            }
            // The front-obstacle term is signed, so the best cost can be negative;
            // the 5% margin is taken on its magnitude.
            let excess = (solved - best) / best.abs().max(1e-12);
            worst = worst.max(excess);
            min_best = min_best.min(best);
            count += 1;
            if solved > best + 0.05 * best.abs() + 1e-9 {
                ok = false;
            }
        }
        let secs = start.elapsed().as_secs_f64();
        ok &= secs < 60.0;
        lines.push(format!(
            "{} {count} states, worst relative excess {worst:+.4}, lowest grid cost {min_best:.2}, {secs:.1} s",
            spec.name
        ));
    }
    check(ok, lines.join("; "))
}

fn lateral_errors(out: &SimOutcome, t_max: f64) -> (f64, f64) {
    let mut worst = 0.0f64;
    let mut last_t = 0.0;
    for r in out.log.iter().filter(|r| r.t <= t_max + 1e-9) {
        let e = ((r.state.px).hypot(r.state.py - 10.0) - 10.0).abs();
        worst = worst.max(e);
        last_t = r.t;
    }
    (worst, last_t)
}

fn tracking_regression() -> Verdict {
    let cfg = Config::default();
    let spec = scenario("circle_tracking");
    let (mpc, t_mpc) = lateral_errors(&run(&spec, Variant::Mpc, &cfg), 30.0);
    let (pid, _) = lateral_errors(&run(&spec, Variant::TrackingPid, &cfg), 30.0);
    check(
        mpc < 0.3 && mpc < pid && t_mpc >= 30.0 - cfg.vehicle.dt - 1e-9,
        format!("max lateral error mpc {mpc:.4} m, baseline {pid:.4} m over {t_mpc:.1} s"),
    )
}

fn case1() -> Verdict {
    let cfg = Config::default();
    let spec = scenario("case1_flawed_waypoints");
    let pf = run(&spec, Variant::MpcPf, &cfg).metrics;
    let base = run(&spec, Variant::TrackingPid, &cfg).metrics;
    check(
        pf.collisions() == 0 && pf.route_completion == 1.0 && base.collisions() >= 1,
        format!(
            "mpc-pf collisions {} rc {:.3}; baseline collisions {}",
            pf.collisions(),
            pf.route_completion,
            base.collisions()
        ),
    )
}

fn case2() -> Verdict {
    let cfg = Config::default();
    let spec = scenario("case2_deadlock");
    let pf = run(&spec, Variant::MpcPf, &cfg);
    let plain = run(&spec, Variant::Mpc, &cfg).metrics;
    let m = &pf.metrics;
    let trace: Vec<f64> = pf.log.iter().map(|r| r.f_o).collect();
    let (peak_i, peak) =
        trace.iter().copied().enumerate().fold(
            (0, f64::MIN),
            |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
        );
    let first = trace[0];
    let last = *trace.last().unwrap();
    let rise_fall = peak > 0.0
        && peak_i > 0
        && peak_i + 1 < trace.len()
        && first < 0.25 * peak
        && last < 0.5 * peak;
    check(
        m.route_completion == 1.0 && !m.deadlock && (plain.deadlock || plain.collisions() > 0) && rise_fall,
        format!(
            "mpc-pf rc {:.3} deadlock {}; mpc deadlock {} collisions {}; f_o start {first:.1} peak {peak:.1} at t={:.1} end {last:.1}",
            m.route_completion,
            m.deadlock,
            plain.deadlock,
            plain.collisions(),
            pf.log[peak_i].t
        ),
    )
}

fn case3() -> Verdict {
    let spec = scenario("case3_corner_cut");
    let cfg15 = Config::default();
    let mut cfg10 = cfg15.clone();
    cfg10.mpc.w_x[0] = 10.0;
    cfg10.mpc.w_x[1] = 10.0;
    let gap =
        |v: Variant, cfg: &Config| run(&spec, v, cfg).metrics.min_distance_by_agent["oncoming"];
    let pf15 = gap(Variant::MpcPf, &cfg15);
    let mpc15 = gap(Variant::Mpc, &cfg15);
    let pf10 = gap(Variant::MpcPf, &cfg10);
    check(
        pf15 > mpc15 + 0.1 && pf10 > pf15,
        format!("min distance mpc w=15 {mpc15:.3}, mpc-pf w=15 {pf15:.3}, mpc-pf w=10 {pf10:.3}"),
    )
}

fn acc() -> Verdict {
    let cfg = Config::default();
    let spec = scenario("acc_lead");
    let pf = run(&spec, Variant::MpcPf, &cfg);
    let gap = pf.metrics.min_distance_by_agent["lead"];
    let t_end = pf.log.last().unwrap().t;
    let tail: Vec<f64> = pf
        .log
        .iter()
        .filter(|r| r.t >= t_end - 10.0)
        .map(|r| r.state.vx)
        .collect();
    let (lo, hi) = tail
        .iter()
        .fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    let plain = run(&spec, Variant::Mpc, &cfg).metrics;
    let plain_gap = plain.min_distance_by_agent["lead"];
    check(
        gap >= 2.0
            && pf.metrics.collisions() == 0
            && lo >= 4.5
            && hi <= 5.5
            && t_end >= 60.0 - cfg.vehicle.dt - 1e-9
            && (plain.collisions() > 0 || plain_gap < 2.0),
        format!(
            "mpc-pf min gap {gap:.3} m, speed over last 10 s in [{lo:.3}, {hi:.3}] to t={t_end:.1}; mpc collisions {} gap {plain_gap:.3}",
            plain.collisions()
        ),
    )
}

fn modulation_identities() -> Verdict {
    let mut ok = true;
    for k in [1.0, 60.0, 1000.0, 12.345] {
        ok &= effective_obstacle_gain(k, 0.0) == 2.0 * k;
        ok &= effective_obstacle_gain(k, 0.5) == k;
    }
    let w = [15.0, 15.0, 10.0, 5.0, 1.0, 1.0];
    let m = modulated_tracking_weights(&w, 1.0);
    ok &= m[0] == 1.5 * w[0] && m[1] == 1.5 * w[1] && m[2] == 1.5 * w[2];
    ok &= m[3..] == w[3..];
    check(
        ok,
        format!("gain(K,0)=2K, gain(K,0.5)=K, weight(w,1)={m:?}"),
    )
}

fn event(kind: InfractionKind) -> InfractionEvent {
    InfractionEvent {
        kind,
        time: 0.0,
        position: [0.0, 0.0],
        agent: None,
    }
}

fn full_suite(cfg: &Config) -> Vec<SimOutcome> {
    let specs = suite();
    Variant::ALL
        .iter()
        .flat_map(|&v| specs.iter().map(move |s| (v, s)))
        .map(|(v, s)| run(s, v, cfg))
        .collect()
}

fn metrics_identity(outcomes: &[SimOutcome]) -> Verdict {
    let cfg = Config::default();
    let mut ok = true;
    for o in outcomes {
        let m = &o.metrics;
        ok &= m.driving_score == m.route_completion * m.infraction_score;
    }
    let two = infraction_score(
        &[
            event(InfractionKind::Collision(ObstacleClass::Vehicle)),
            event(InfractionKind::Collision(ObstacleClass::Static)),
        ],
        &cfg.infractions,
    );
    ok &= (two - 0.39).abs() < 1e-12;
    ok &= infraction_score(&[], &cfg.infractions) == 1.0;
    check(
        ok,
        format!("{} runs, vehicle+static product {two:.6}", outcomes.len()),
    )
}

fn serialize(outcomes: &[SimOutcome]) -> Vec<u8> {
    let mut bytes = Vec::new();
    for o in outcomes {
        write_log_csv(&o.log, &mut bytes).unwrap();
        bytes.extend(format!("{:?}\n", o.metrics).into_bytes());
    }
    bytes
}

fn determinism(first: &[SimOutcome], first_secs: f64) -> Verdict {
    let second = full_suite(&Config::default());
    let same = serialize(first) == serialize(&second);
    check(
        same && first_secs < 600.0,
        format!(
            "{} runs byte-identical: {same}; suite wall time {first_secs:.1} s",
            first.len()
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Verdict)> = vec![
        (1, "dynamics fidelity", dynamics_fidelity()),
        (2, "solver optimality oracle", solver_oracle()),
        (3, "tracking regression", tracking_regression()),
        (4, "case 1 flawed waypoints", case1()),
        (5, "case 2 deadlock", case2()),
        (6, "case 3 corner cutting", case3()),
        (7, "acc property", acc()),
        (8, "modulation identities", modulation_identities()),
    ];
    let start = Instant::now();
    let outcomes = full_suite(&Config::default());
    let suite_secs = start.elapsed().as_secs_f64();
    results.push((9, "metrics identity", metrics_identity(&outcomes)));
    results.push((10, "determinism", determinism(&outcomes, suite_secs)));

    let mut failed = 0;
    for (n, name, verdict) in &results {
        match verdict {
            Ok(d) => println!("criterion {n:>2} {name}: PASS ({d})"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} {name}: FAIL ({d})");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
