//! Downwash force models.
//!
//! The controller-side model is a far-field momentum-jet surrogate: quadratic
//! axial decay clamped at `z_min`, and a Gaussian radial profile whose width
//! grows linearly with the vertical gap. Forces from several vehicles above the
//! ego are summed pairwise. The plant-side oracle reuses the jet with offset
//! coefficients and adds wake advection, an upward push from vehicles below and
//! Ornstein-Uhlenbeck turbulence.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rigid_body::QuadState;

/// Controller-side jet parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DwParams {
    /// Jet strength relative to the source thrust at `z_min`.
    pub c0: f64,
    /// Axial clamp, m.
    pub z_min: f64,
    /// Radial core width, m.
    pub sigma_r: f64,
    /// Linear spreading rate of the radial width.
    pub kappa: f64,
    /// Neighborhood radius, m.
    pub alpha_nbr: f64,
}

impl Default for DwParams {
    fn default() -> Self {
        Self {
            c0: 2.4,
            z_min: 0.05,
            sigma_r: 0.05,
            kappa: 0.15,
            alpha_nbr: 1.0,
        }
    }
}

impl DwParams {
    pub fn validate(&self) -> Result<()> {
        let all_positive = [
            self.c0,
            self.z_min,
            self.sigma_r,
            self.kappa,
            self.alpha_nbr,
        ]
        .iter()
        .all(|v| *v > 0.0 && v.is_finite());
        if !all_positive {
            return Err(Error::Config("downwash params must all be positive".into()));
        }
        if self.alpha_nbr < 2.0 * self.z_min {
            return Err(Error::Config(format!(
                "alpha_nbr {} must be at least 2*z_min",
                self.alpha_nbr
            )));
        }
        Ok(())
    }
}

/// Plant-truth interaction parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantInteractionParams {
    pub jet: DwParams,
    /// Strength of the upward push from vehicles underneath.
    pub below_gain: f64,
    /// Stationary standard deviation of the turbulence force, N.
    pub ou_sigma: f64,
    /// Turbulence correlation time, s.
    pub ou_tau: f64,
    /// Wake advection time, s: the jet axis lags by `vel_skew * (v_above - v_ego)`.
    pub vel_skew: f64,
}

impl Default for PlantInteractionParams {
    fn default() -> Self {
        let ctrl = DwParams::default();
        Self {
            jet: DwParams {
                c0: ctrl.c0 * 1.25,
                kappa: ctrl.kappa * 1.3,
                ..ctrl
            },
            below_gain: 0.1,
            ou_sigma: 0.001,
            ou_tau: 0.2,
            vel_skew: 0.05,
        }
    }
}

impl PlantInteractionParams {
    /// Plant whose interaction equals the controller model exactly.
    pub fn matching(dw: &DwParams) -> Self {
        Self {
            jet: dw.clone(),
            below_gain: 0.0,
            ou_sigma: 0.0,
            ou_tau: 0.2,
            vel_skew: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.jet.validate()?;
        if !(self.ou_tau > 0.0) || self.below_gain < 0.0 || self.ou_sigma < 0.0 {
            return Err(Error::Config(
                "plant interaction: ou_tau > 0, below_gain >= 0, ou_sigma >= 0 required".into(),
            ));
        }
        Ok(())
    }
}

/// One vehicle in the ego's neighborhood.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    pub state: QuadState,
    /// Last commanded thrust, or hover thrust when unknown, N.
    pub thrust: f64,
}

/// All vehicles within `alpha_nbr` of the ego, excluding the ego itself.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NeighborSet {
    entries: Vec<Neighbor>,
}

impl NeighborSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Collect the neighbors of `ego_id` from `(id, state, thrust)` triples.
    pub fn gather<I>(ego_id: usize, ego: &QuadState, vehicles: I, alpha_nbr: f64) -> Self
    where
        I: IntoIterator<Item = Neighbor>,
    {
        let entries = vehicles
            .into_iter()
            .filter(|n| n.id != ego_id && (n.state.p - ego.p).norm() <= alpha_nbr)
            .collect();
        Self { entries }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Neighbor> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Neighbors strictly above the ego.
    pub fn above<'a>(&'a self, ego: &'a QuadState) -> impl Iterator<Item = &'a Neighbor> + 'a {
        self.entries.iter().filter(move |n| n.state.p.z > ego.p.z)
    }
}

#[inline]
fn jet_magnitude(
    c0: f64,
    z_min: f64,
    sigma_r: f64,
    kappa: f64,
    thrust: f64,
    dz: f64,
    rho: f64,
) -> f64 {
    let dzc = dz.max(z_min);
    let width = sigma_r + kappa * dzc;
    let axial = z_min / dzc;
    let radial = rho / width;
    c0 * thrust * axial * axial * (-0.5 * radial * radial).exp()
}

/// Force exerted on `ego` by the jet of a vehicle above it.
pub fn pairwise_dw_force(
    ego: &QuadState,
    above: &QuadState,
    above_thrust: f64,
    params: &DwParams,
) -> Result<Vector3<f64>> {
    if !(above.p.z > ego.p.z) {
        return Err(Error::Ordering {
            ego_z: ego.p.z,
            above_z: above.p.z,
        });
    }
    Ok(pairwise_unchecked(&ego.p, &above.p, above_thrust, params))
}

#[inline]
pub(crate) fn pairwise_unchecked(
    ego_p: &Vector3<f64>,
    above_p: &Vector3<f64>,
    thrust: f64,
    params: &DwParams,
) -> Vector3<f64> {
    let d = above_p - ego_p;
    let rho = d.x.hypot(d.y);
    let m = jet_magnitude(
        params.c0,
        params.z_min,
        params.sigma_r,
        params.kappa,
        thrust,
        d.z,
        rho,
    );
    Vector3::new(0.0, 0.0, -m)
}

/// Gradient of the (negative) vertical jet force with respect to the ego position.
///
/// Returns `d F_z / d p_ego`.
pub(crate) fn pairwise_force_gradient(
    ego_p: &Vector3<f64>,
    above_p: &Vector3<f64>,
    thrust: f64,
    params: &DwParams,
) -> Vector3<f64> {
    let d = above_p - ego_p;
    let rho2 = d.x * d.x + d.y * d.y;
    let clamped = d.z <= params.z_min;
    let dzc = d.z.max(params.z_min);
    let width = params.sigma_r + params.kappa * dzc;
    let m = jet_magnitude(
        params.c0,
        params.z_min,
        params.sigma_r,
        params.kappa,
        thrust,
        d.z,
        rho2.sqrt(),
    );
    // F_z = -m; m = C * dzc^-2 * exp(-rho^2 / (2 w^2))
    // dm/d(d.x) = m * (-d.x / w^2); d(d)/d(p_ego) = -I
    let dm_ddx = -m * d.x / (width * width);
    let dm_ddy = -m * d.y / (width * width);
    let dm_ddz = if clamped {
        0.0
    } else {
        m * (-2.0 / dzc + rho2 * params.kappa / (width * width * width))
    };
    // dF_z/dp_ego = -dm/dp_ego = dm/dd
    Vector3::new(dm_ddx, dm_ddy, dm_ddz)
}

/// Total downwash on the ego: the pairwise sum over neighbors strictly above it.
pub fn aggregate_downwash(
    ego: &QuadState,
    neighbors: &NeighborSet,
    params: &DwParams,
) -> Vector3<f64> {
    neighbors
        .above(ego)
        .map(|n| pairwise_unchecked(&ego.p, &n.state.p, n.thrust, params))
        .sum()
}

/// Ornstein-Uhlenbeck turbulence state, one per vehicle.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OuNoise {
    pub force: Vector3<f64>,
}

impl OuNoise {
    /// Exact discretization of `dX = -X/tau dt + sigma sqrt(2/tau) dW`.
    pub fn advance<R: Rng + ?Sized>(&mut self, sigma: f64, tau: f64, dt: f64, rng: &mut R) {
        let decay = (-dt / tau).exp();
        let spread = sigma * (1.0 - decay * decay).sqrt();
        let xi = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        self.force = self.force * decay + xi * spread;
    }
}

/// A vehicle as seen by the plant: state and current thrust.
#[derive(Clone, Copy, Debug)]
pub struct PlantVehicle {
    pub state: QuadState,
    pub thrust: f64,
}

/// Plant-truth interaction force on `ego` from every other vehicle.
///
/// Draws exactly three standard normals from `rng` (the turbulence update),
/// after computing the deterministic part.
pub fn plant_interaction_force<R: Rng + ?Sized>(
    ego: &QuadState,
    others: &[PlantVehicle],
    noise: &mut OuNoise,
    params: &PlantInteractionParams,
    dt: f64,
    rng: &mut R,
) -> Vector3<f64> {
    let jet = &params.jet;
    let mut force = Vector3::zeros();
    for other in others {
        let d = other.state.p - ego.p;
        if d.norm() > jet.alpha_nbr {
            continue;
        }
        if d.z > 0.0 {
            let lag = (other.state.v - ego.v) * params.vel_skew;
            let offset = Vector3::new(d.x - lag.x, d.y - lag.y, d.z);
            let rho = offset.x.hypot(offset.y);
            force.z -= jet_magnitude(
                jet.c0,
                jet.z_min,
                jet.sigma_r,
                jet.kappa,
                other.thrust,
                d.z,
                rho,
            );
        } else if d.z < 0.0 && params.below_gain > 0.0 {
            let rho = d.x.hypot(d.y);
            force.z += jet_magnitude(
                params.below_gain,
                jet.z_min,
                jet.sigma_r,
                jet.kappa,
                other.thrust,
                -d.z,
                rho,
            );
        }
    }
    noise.advance(params.ou_sigma, params.ou_tau, dt, rng);
    force + noise.force
}
