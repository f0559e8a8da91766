//! The fixed experiment grids: center-vehicle sweep, bottom-vehicle sweep and
//! the tight I-stack.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ControllerVariant, Formation, FormationKind, Scenario, VehicleSpec};
use crate::knode::Mlp;

pub const SWEEP_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
pub const BOTTOM_RATE_HZ: f64 = 200.0;
pub const UPPER_RATE_HZ: f64 = 400.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Center,
    Bottom,
    Tight,
}

impl Experiment {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "center" => Some(Self::Center),
            "bottom" => Some(Self::Bottom),
            "tight" => Some(Self::Tight),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Center => "center",
            Self::Bottom => "bottom",
            Self::Tight => "tight",
        }
    }
}

fn formation_label(f: &Formation) -> String {
    match f.kind {
        FormationKind::IStack => format!("istack_z{}_{}", f.z1, f.z2),
        FormationKind::VStack => format!("vstack_z{}_{}_r{}", f.z1, f.z2, f.r),
    }
}

fn vehicle(variant: ControllerVariant, rate_hz: f64, mlp: &Arc<Mlp>) -> VehicleSpec {
    let v = VehicleSpec::new(variant, rate_hz);
    if variant.needs_weights() {
        v.with_mlp(Some(mlp.clone()))
    } else {
        v
    }
}

/// Three-vehicle scenario with vehicles ordered `[bottom, center, top]`.
pub fn stack_scenario(
    name: String,
    formation: Formation,
    variants: [ControllerVariant; 3],
    mlp: &Arc<Mlp>,
    seeds: &[u64],
) -> Scenario {
    let vehicles = vec![
        vehicle(variants[0], BOTTOM_RATE_HZ, mlp),
        vehicle(variants[1], UPPER_RATE_HZ, mlp),
        vehicle(variants[2], UPPER_RATE_HZ, mlp),
    ];
    let mut s = Scenario::new(&name, Some(formation), vehicles);
    s.seeds = seeds.to_vec();
    s
}

/// One scenario per group; every scenario carries `seeds`.
pub fn experiment_grid(exp: Experiment, mlp: &Arc<Mlp>, seeds: &[u64]) -> Vec<Scenario> {
    use ControllerVariant::*;
    let mut out = Vec::new();
    match exp {
        Experiment::Center => {
            for f in [
                Formation::v_stack(0.2, 0.4, 0.1),
                Formation::i_stack(0.2, 0.4),
            ] {
                for v in ControllerVariant::ALL.into_iter().filter(|&v| v != Mpc) {
                    let name = format!("center_{}_{}", formation_label(&f), v.as_str());
                    out.push(stack_scenario(
                        name,
                        f.clone(),
                        [KnodeDwMpc, v, L1Mpc],
                        mlp,
                        seeds,
                    ));
                }
            }
        }
        Experiment::Bottom => {
            for z2 in [0.3, 0.4] {
                for f in [
                    Formation::v_stack(0.2, z2, 0.1),
                    Formation::i_stack(0.2, z2),
                ] {
                    for v in ControllerVariant::ALL {
                        let name = format!("bottom_{}_{}", formation_label(&f), v.as_str());
                        out.push(stack_scenario(
                            name,
                            f.clone(),
                            [v, L1KnodeDwMpc, L1KnodeDwMpc],
                            mlp,
                            seeds,
                        ));
                    }
                }
            }
        }
        Experiment::Tight => {
            let f = Formation::i_stack(0.2, 0.2);
            for v in [L1KnodeDwMpc, Mpc] {
                let name = format!("tight_{}_{}", formation_label(&f), v.as_str());
                out.push(stack_scenario(name, f.clone(), [v; 3], mlp, seeds));
            }
        }
    }
    out
}
