#![allow(dead_code)]

use std::path::PathBuf;

use pfmpc::config::Config;
use pfmpc::controller::{corridor_path, CycleReport, DrivingController, SafetyController};
use pfmpc::dynamics::{ControlInput, VehicleParams, VehicleState};
use pfmpc::mpc::{CostContext, MpcConfig, MpcError};
use pfmpc::potential::{select_front_obstacle, PfGains};
use pfmpc::reference::{build_reference, to_global, PlannerOutput, ReferenceTrajectory};
use pfmpc::sim::ScenarioSpec;

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn scenario(name: &str) -> ScenarioSpec {
    ScenarioSpec::load(&scenario_dir().join(format!("{name}.toml"))).unwrap()
}

/// Every scenario in the shipped suite, ordered by name.
pub fn suite() -> Vec<ScenarioSpec> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(scenario_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    let mut specs: Vec<ScenarioSpec> = paths
        .iter()
        .map(|p| ScenarioSpec::load(p).unwrap())
        .collect();
    specs.sort_by(|a, b| a.name.clone().cmp(&b.name));
    specs
}

/// Wraps the full controller and keeps every `every`-th (ego, planner) pair it sees.
pub struct Recorder {
    pub inner: SafetyController,
    pub every: usize,
    pub snapshots: Vec<(VehicleState, PlannerOutput)>,
    tick: usize,
}

impl Recorder {
    pub fn new(cfg: &Config, every: usize) -> Self {
        Self {
            inner: SafetyController::new(
                cfg.vehicle.clone(),
                cfg.pf.clone(),
                cfg.mpc.clone(),
                cfg.gates.clone(),
            ),
            every,
            snapshots: Vec::new(),
            tick: 0,
        }
    }
}

impl DrivingController for Recorder {
    fn control_cycle(
        &mut self,
        ego: &VehicleState,
        planner: &PlannerOutput,
    ) -> Result<CycleReport, MpcError> {
        if self.tick.is_multiple_of(self.every) {
            self.snapshots.push((*ego, planner.clone()));
        }
        self.tick += 1;
        self.inner.control_cycle(ego, planner)
    }
}

/// Closed-loop snapshots of the full controller on a scenario.
pub fn snapshots(
    spec: &ScenarioSpec,
    cfg: &Config,
    every: usize,
) -> Vec<(VehicleState, PlannerOutput)> {
    let mut rec = Recorder::new(cfg, every);
    pfmpc::sim::run(spec, &mut rec, cfg, 0, "mpc-pf").unwrap();
    rec.snapshots
}

/// Owned inputs of one optimisation problem, built the same way the controller does.
pub struct Problem {
    pub state0: VehicleState,
    pub reference: ReferenceTrajectory,
    pub planner: PlannerOutput,
    pub gains: PfGains,
    pub mpc: MpcConfig,
    pub params: VehicleParams,
    pub d_safety: Option<f64>,
    pub u_prev: ControlInput,
}

impl Problem {
    pub fn new(ego: VehicleState, planner: &PlannerOutput, cfg: &Config, horizon: usize) -> Self {
        let global = to_global(planner, (ego.px, ego.py, ego.phi));
        let mut mpc = cfg.mpc.clone();
        mpc.horizon = horizon;
        let reference = build_reference(
            &global.waypoints,
            &ego,
            global.target_speed,
            horizon,
            cfg.vehicle.dt,
        )
        .unwrap();
        let d_safety = select_front_obstacle(
            &ego,
            &corridor_path(&ego, &global.waypoints),
            &global.obstacles,
            cfg.pf.corridor_halfwidth(cfg.vehicle.width),
        );
        Self {
            state0: ego,
            reference,
            planner: global,
            gains: cfg.pf.clone(),
            mpc,
            params: cfg.vehicle.clone(),
            d_safety,
            u_prev: ControlInput::ZERO,
        }
    }

    pub fn ctx(&self) -> CostContext<'_> {
        CostContext::new(
            self.state0,
            &self.reference,
            &self.planner.obstacles,
            &self.gains,
            &self.mpc,
            &self.params,
            self.planner.p_on_road,
            self.u_prev,
            self.d_safety,
        )
    }
}
