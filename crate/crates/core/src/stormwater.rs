//! Two-tank stormwater benchmark.
//!
//! Tank 1 drains into tank 2 through a valve (or a bidirectional pump in
//! design b); tank 2 drains to the storm sewer. Both tanks spill into the
//! combined sewer above their invert elevations `k_i`, which is what the
//! safety margin `g_K(x) = max(x1 − k1, x2 − k2, 0)` penalizes.
//!
//! Levels are in ft, flows in cfs, the step `dt` in seconds.

use std::borrow::Cow;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::cvar::Pmf;
use crate::model::{ControlSystem, Interval, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    /// Baseline.
    A,
    /// Valve replaced by a bidirectional pump, `u ∈ [−1, 1]`.
    B,
    /// Extra storm-sewer outlet on tank 1.
    C,
    /// Tank 2 enlarged to 12000 ft².
    D,
}

impl Design {
    pub const ALL: [Design; 4] = [Design::A, Design::B, Design::C, Design::D];

    pub fn label(self) -> &'static str {
        match self {
            Design::A => "a",
            Design::B => "b",
            Design::C => "c",
            Design::D => "d",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpParams {
    /// Maximum pumping rate (cfs).
    pub q_pump_max: f64,
    /// Half-width of the start-up ramp (ft).
    pub eps: f64,
    /// Threshold pumping elevation (ft).
    pub z_p: f64,
}

impl Default for PumpParams {
    fn default() -> Self {
        Self {
            q_pump_max: 10.0,
            eps: 1.0 / 12.0,
            z_p: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StormwaterParams {
    pub a1: f64,
    pub a2: f64,
    pub c_d: f64,
    pub g_tilde: f64,
    pub k1: f64,
    pub k2: f64,
    pub kbar1: f64,
    pub kbar2: f64,
    pub r_s: f64,
    pub r_v: f64,
    pub dt: f64,
    pub z1: f64,
    pub z1_in: f64,
    pub z2: f64,
    /// Storm outlet elevation in tank 1 (design c only).
    pub z_storm1: f64,
    pub n_cso1: f64,
    pub n_cso2: f64,
    pub r_cso1: f64,
    pub r_cso2: f64,
    pub horizon: usize,
    pub pump: Option<PumpParams>,
}

impl Default for StormwaterParams {
    fn default() -> Self {
        Self {
            a1: 30000.0,
            a2: 10000.0,
            c_d: 0.61,
            g_tilde: 32.2,
            k1: 3.0,
            k2: 4.0,
            kbar1: 5.0,
            kbar2: 6.0,
            r_s: 1.0 / 3.0,
            r_v: 1.0 / 3.0,
            dt: 180.0,
            z1: 1.0,
            z1_in: 2.0,
            z2: 1.0,
            z_storm1: 1.0,
            n_cso1: 3.0,
            n_cso2: 1.0,
            r_cso1: 0.25,
            r_cso2: 0.375,
            horizon: 20,
            pump: None,
        }
    }
}

impl StormwaterParams {
    /// Table defaults with the design-specific changes applied.
    pub fn for_design(design: Design) -> Self {
        let mut p = Self::default();
        match design {
            Design::B => p.pump = Some(PumpParams::default()),
            Design::D => p.a2 = 12000.0,
            Design::A | Design::C => {}
        }
        p
    }

    pub fn validate(&self, design: Design) -> Result<(), ModelError> {
        let positive = [
            ("a1", self.a1),
            ("a2", self.a2),
            ("c_d", self.c_d),
            ("g_tilde", self.g_tilde),
            ("k1", self.k1),
            ("k2", self.k2),
            ("kbar1", self.kbar1),
            ("kbar2", self.kbar2),
            ("r_s", self.r_s),
            ("r_v", self.r_v),
            ("dt", self.dt),
            ("z1", self.z1),
            ("z1_in", self.z1_in),
            ("z2", self.z2),
            ("z_storm1", self.z_storm1),
            ("n_cso1", self.n_cso1),
            ("n_cso2", self.n_cso2),
            ("r_cso1", self.r_cso1),
            ("r_cso2", self.r_cso2),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::NonPositive { name, value });
            }
        }
        if self.horizon == 0 {
            return Err(ModelError::Inconsistent("horizon must be at least 1".into()));
        }
        if self.kbar1 <= self.k1 || self.kbar2 <= self.k2 {
            return Err(ModelError::Inconsistent(
                "kbar_i must exceed the invert elevation k_i".into(),
            ));
        }
        if self.z2 >= self.kbar2 || self.z_storm1 >= self.kbar1 {
            return Err(ModelError::Inconsistent(
                "storm outlet elevation must lie below the tank maximum".into(),
            ));
        }
        match (design, &self.pump) {
            (Design::B, None) => Err(ModelError::Inconsistent("design b requires pump parameters".into())),
            (Design::B, Some(p)) => {
                for (name, value) in [
                    ("pump.q_pump_max", p.q_pump_max),
                    ("pump.eps", p.eps),
                    ("pump.z_p", p.z_p),
                ] {
                    if !(value.is_finite() && value > 0.0) {
                        return Err(ModelError::NonPositive { name, value });
                    }
                }
                if p.z_p - p.eps <= 0.0 {
                    return Err(ModelError::Inconsistent("pump requires z_p - eps > 0".into()));
                }
                Ok(())
            }
            (_, Some(_)) => Err(ModelError::NoPump(design)),
            (_, None) => Ok(()),
        }
    }
}

/// Target moments of the surface-runoff disturbance (cfs, cfs², unitless).
pub const RUNOFF_MEAN: f64 = 12.2;
pub const RUNOFF_VARIANCE: f64 = 9.9;
pub const RUNOFF_SKEW: f64 = 0.74;

/// Nine-atom runoff law on 6, 8, …, 22 cfs, moment-matched to
/// (12.2, 9.9, 0.74).
pub fn moment_matched_runoff() -> Pmf {
    const PROBS: [f64; 9] = [0.0109, 0.1285, 0.2546, 0.2578, 0.1778, 0.0946, 0.0417, 0.0184, 0.0157];
    Pmf::new(PROBS.iter().enumerate().map(|(i, &p)| (6.0 + 2.0 * i as f64, p))).expect("static pmf is valid")
}

/// Two equally likely runoff values one standard deviation either side of
/// the mean; cheap stand-in for quick runs.
pub fn smoke_runoff() -> Pmf {
    let sd = RUNOFF_VARIANCE.sqrt();
    Pmf::new([(RUNOFF_MEAN - sd, 0.5), (RUNOFF_MEAN + sd, 0.5)]).expect("static pmf is valid")
}

/// Linear outflow regulator: zero at or below `elev`, `q_max` at `top`.
#[inline]
fn linear_outflow(level: f64, q_max: f64, top: f64, elev: f64) -> f64 {
    let span = top - elev;
    q_max - (q_max / span) * (top - level).min(span)
}

#[derive(Debug, Clone)]
pub struct Stormwater {
    params: StormwaterParams,
    design: Design,
    bounds: [Interval; 2],
    runoff: Pmf,
}

impl Stormwater {
    pub fn new(params: StormwaterParams, design: Design, runoff: Pmf) -> Result<Self, ModelError> {
        params.validate(design)?;
        let bounds = [Interval::new(0.0, params.kbar1), Interval::new(0.0, params.kbar2)];
        Ok(Self {
            params,
            design,
            bounds,
            runoff,
        })
    }

    /// Table defaults for `design` with the moment-matched runoff.
    pub fn baseline(design: Design) -> Self {
        Self::new(StormwaterParams::for_design(design), design, moment_matched_runoff())
            .expect("default parameters are valid")
    }

    pub fn params(&self) -> &StormwaterParams {
        &self.params
    }

    pub fn design(&self) -> Design {
        self.design
    }

    pub fn runoff(&self) -> &Pmf {
        &self.runoff
    }

    /// Height of water above the combined-sewer inverts, floored at 0.
    pub fn g_k(&self, x: &[f64]) -> f64 {
        (x[0] - self.params.k1).max(x[1] - self.params.k2).max(0.0)
    }

    fn orifice_max(&self, n: f64, radius: f64, head: f64) -> f64 {
        n * self.params.c_d * PI * radius * radius * (2.0 * self.params.g_tilde * head).sqrt()
    }

    /// Peak storm-sewer outflow of tank 2.
    pub fn q_storm_max(&self) -> f64 {
        self.orifice_max(1.0, self.params.r_s, self.params.kbar2 - self.params.z2)
    }

    /// Storm-sewer outflow of tank 2 at level `x2`.
    pub fn q_storm(&self, x2: f64) -> f64 {
        let p = &self.params;
        linear_outflow(x2, self.q_storm_max(), p.kbar2, p.z2)
    }

    /// Storm-sewer outflow of the design-c outlet on tank 1 at level `x1`.
    pub fn q_storm1(&self, x1: f64) -> f64 {
        let p = &self.params;
        let q_max = self.orifice_max(1.0, p.r_s, p.kbar1 - p.z_storm1);
        linear_outflow(x1, q_max, p.kbar1, p.z_storm1)
    }

    /// Peak combined-sewer outflow of tank `tank` (0 or 1).
    pub fn q_cso_max(&self, tank: usize) -> f64 {
        let p = &self.params;
        match tank {
            0 => self.orifice_max(p.n_cso1, p.r_cso1, p.kbar1 - p.k1),
            _ => self.orifice_max(p.n_cso2, p.r_cso2, p.kbar2 - p.k2),
        }
    }

    /// Combined-sewer outflow of tank `tank` (0 or 1) at the given level.
    pub fn q_cso(&self, level: f64, tank: usize) -> f64 {
        let p = &self.params;
        let (top, invert) = match tank {
            0 => (p.kbar1, p.k1),
            _ => (p.kbar2, p.k2),
        };
        linear_outflow(level, self.q_cso_max(tank), top, invert)
    }

    /// Gravity flow from tank 1 to tank 2 through the valve opened to `u`.
    pub fn q_valve(&self, x: &[f64], u: f64) -> f64 {
        let p = &self.params;
        let h = (x[0] - p.z1).max(0.0) - (x[1] - p.z1_in).max(0.0);
        u * PI * p.r_v * p.r_v * h.signum() * (2.0 * p.g_tilde * h.abs()).sqrt()
    }

    /// Pump flow from tank 1 to tank 2 (negative means 2 → 1), written with
    /// min/max so continuity is evident.
    pub fn q_pump(&self, x: &[f64], u: f64) -> Result<f64, ModelError> {
        let pump = self.pump()?;
        let nu = |y: f64| y.min(2.0 * pump.eps).max(0.0);
        let y1 = x[0] + pump.eps - pump.z_p;
        let y2 = x[1] + pump.eps - pump.z_p;
        Ok(-pump.q_pump_max / (2.0 * pump.eps) * (u.min(0.0) * nu(y1) + u.max(0.0) * nu(y2)))
    }

    /// Same flow as [`Self::q_pump`], evaluated branch by branch: dead zone
    /// when the source tank is too low, linear start-up near `z_p`, full
    /// rate otherwise.
    pub fn q_pump_cases(&self, x: &[f64], u: f64) -> Result<f64, ModelError> {
        let pump = self.pump()?;
        let (lo, hi) = (pump.z_p - pump.eps, pump.z_p + pump.eps);
        let startup = |xi: f64| pump.q_pump_max * u / (2.0 * pump.eps) * (xi + pump.eps - pump.z_p);
        let too_low_1 = x[0] < lo && u < 0.0;
        let too_low_2 = x[1] < lo && u >= 0.0;
        Ok(if too_low_1 || too_low_2 {
            0.0
        } else if (lo..=hi).contains(&x[0]) && u < 0.0 {
            -startup(x[0])
        } else if (lo..=hi).contains(&x[1]) && u >= 0.0 {
            -startup(x[1])
        } else {
            -u * pump.q_pump_max
        })
    }

    fn pump(&self) -> Result<&PumpParams, ModelError> {
        match (self.design, &self.params.pump) {
            (Design::B, Some(p)) => Ok(p),
            _ => Err(ModelError::NoPump(self.design)),
        }
    }

    /// Level rates `(dx1/dt, dx2/dt)` in ft/s before clipping.
    pub fn rates(&self, x: &[f64], u: f64, w: f64) -> [f64; 2] {
        let p = &self.params;
        let transfer = match self.design {
            Design::B => self.q_pump(x, u).expect("design b carries pump parameters"),
            _ => self.q_valve(x, u),
        };
        let mut out1 = self.q_cso(x[0], 0) + transfer;
        if self.design == Design::C {
            out1 += self.q_storm1(x[0]);
        }
        let f1 = (w - out1) / p.a1;
        let f2 = (w - self.q_cso(x[1], 1) + transfer - self.q_storm(x[1])) / p.a2;
        [f1, f2]
    }
}

impl ControlSystem for Stormwater {
    fn state_bounds(&self) -> &[Interval] {
        &self.bounds
    }

    fn action_bounds(&self) -> Interval {
        match self.design {
            Design::B => Interval::new(-1.0, 1.0),
            _ => Interval::new(0.0, 1.0),
        }
    }

    fn horizon(&self) -> usize {
        self.params.horizon
    }

    fn c_bar(&self) -> f64 {
        let p = &self.params;
        (p.kbar1 - p.k1).max(p.kbar2 - p.k2)
    }

    fn stage_cost(&self, x: &[f64], _u: f64) -> f64 {
        self.g_k(x) - self.g_lower()
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        self.g_k(x) - self.g_lower()
    }

    fn disturbance(&self, _x: &[f64], _u: f64) -> Cow<'_, Pmf> {
        Cow::Borrowed(&self.runoff)
    }

    fn step(&self, x: &[f64], u: f64, w: f64) -> Vec<f64> {
        let r = self.rates(x, u, w);
        (0..2)
            .map(|i| self.bounds[i].clamp(x[i] + r[i] * self.params.dt))
            .collect()
    }
}
