//! Point-mass double integrator along a path.

use serde::{Deserialize, Serialize};

/// Longitudinal state along the vehicle's own path.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    /// Arc-length position, meters.
    pub p: f64,
    /// Speed, m/s. Never negative.
    pub v: f64,
}

impl VehicleState {
    pub const fn new(p: f64, v: f64) -> Self {
        Self { p, v }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    /// Sampling time, seconds.
    pub sampling_time: f64,
}

impl StepParams {
    pub fn new(sampling_time: f64) -> Self {
        assert!(
            sampling_time > 0.0 && sampling_time.is_finite(),
            "sampling time must be positive"
        );
        Self { sampling_time }
    }
}

/// Outcome of one plant step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: VehicleState,
    /// Set when the raw successor speed was negative and got clamped to zero.
    pub clamped: bool,
}

/// One step of `x(k+1) = A x(k) + B u(k)` with the plant's `v >= 0` clamp.
pub fn step(x: VehicleState, u: f64, params: StepParams) -> StepOutcome {
    let ts = params.sampling_time;
    let p = x.p + ts * x.v;
    let v = x.v + ts * u;
    if v < 0.0 {
        StepOutcome {
            state: VehicleState::new(p, 0.0),
            clamped: true,
        }
    } else {
        StepOutcome {
            state: VehicleState::new(p, v),
            clamped: false,
        }
    }
}

/// Constant-input prediction with speed saturated to `[v_min, v_max]`.
/// Returns `horizon + 1` states starting at `x0`.
pub fn rollout_const_input(
    x0: VehicleState,
    u: f64,
    horizon: usize,
    params: StepParams,
    v_min: f64,
    v_max: f64,
) -> Vec<VehicleState> {
    assert!(horizon >= 1, "horizon must be at least one step");
    let ts = params.sampling_time;
    let mut out = Vec::with_capacity(horizon + 1);
    let mut x = x0;
    out.push(x);
    for _ in 0..horizon {
        x = VehicleState::new(x.p + ts * x.v, (x.v + ts * u).clamp(v_min, v_max));
        out.push(x);
    }
    out
}

/// Unsaturated rollout over a sequence of inputs. Returns `inputs.len() + 1`
/// states starting at `x0`.
pub fn rollout_inputs(x0: VehicleState, inputs: &[f64], params: StepParams) -> Vec<VehicleState> {
    let ts = params.sampling_time;
    let mut out = Vec::with_capacity(inputs.len() + 1);
    let mut x = x0;
    out.push(x);
    for &u in inputs {
        x = VehicleState::new(x.p + ts * x.v, x.v + ts * u);
        out.push(x);
    }
    out
}
