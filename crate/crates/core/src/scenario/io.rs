//! The plant seen through the agent's network interface.

use std::collections::BTreeMap;

use crate::agent::{AgentError, NetworkIo, Poll, StrategyPayload};
use crate::topology::NetworkState;

use super::plant::{Plant, PlantError, PlantEvent};

fn io_err(e: PlantError) -> AgentError {
    AgentError::Io(e.to_string())
}

pub struct PlantIo {
    plant: Plant,
    /// Whether polls include per-channel OCM profiles or only amplifier totals.
    pub with_ocm: bool,
}

impl PlantIo {
    pub fn new(plant: Plant) -> Self {
        Self { plant, with_ocm: true }
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn into_plant(self) -> Plant {
        self.plant
    }
}

impl NetworkIo for PlantIo {
    fn apply(&mut self, event: &PlantEvent) -> Result<(), AgentError> {
        self.plant.inject(event).map_err(io_err)
    }

    fn poll(&mut self, tick: u64, lightpaths: &[String]) -> Result<Poll, AgentError> {
        Ok(Poll {
            records: self.plant.snapshot(tick, self.with_ocm).map_err(io_err)?,
            gsnr: self.plant.measure_gsnr(lightpaths, tick).map_err(io_err)?,
        })
    }

    fn deploy(&mut self, payload: &StrategyPayload, twin_after: &NetworkState) -> Result<(), AgentError> {
        match payload {
            StrategyPayload::EdfaReconfig { settings, .. } => {
                let mut configs = BTreeMap::new();
                for s in settings {
                    let cfg = twin_after
                        .amp(&s.id)
                        .ok_or_else(|| AgentError::Io(format!("amplifier {} missing from the twin", s.id)))?;
                    configs.insert(s.id.clone(), cfg.clone());
                }
                self.plant.deploy_amps(&configs).map_err(io_err)
            }
            StrategyPayload::SwitchLightpaths { lightpaths, .. } => {
                let moved: Vec<_> = lightpaths
                    .iter()
                    .map(|id| {
                        twin_after
                            .lightpath(id)
                            .cloned()
                            .ok_or_else(|| AgentError::Io(format!("lightpath {id} missing from the twin")))
                    })
                    .collect::<Result<_, _>>()?;
                self.plant.deploy_routes(&moved).map_err(io_err)
            }
            StrategyPayload::Provision { lightpath } => self.plant.provision(lightpath).map_err(io_err),
            StrategyPayload::NoOp => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AmpSetting;
    use crate::scenario::{make_plant, NoiseSpec, PerturbationSpec, ScenarioScript};
    use crate::toolbox::Scope;

    fn io() -> (PlantIo, NetworkState) {
        let st = ScenarioScript::s2().state().unwrap();
        let plant = make_plant(&st, &PerturbationSpec::zero(), NoiseSpec::zero(), 1).unwrap();
        (PlantIo::new(plant), st)
    }

    #[test]
    fn noiseless_nominal_poll_matches_the_twin_view() {
        let (mut io, st) = io();
        let ids: Vec<String> = st.lightpaths.iter().map(|l| l.id.clone()).collect();
        let p = io.poll(0, &ids).unwrap();
        assert!(!p.records.is_empty());
        assert_eq!(p.gsnr.len(), 10);
        let q = crate::agent::strategy::predict_lightpaths(&st, &ids).unwrap();
        let rep = crate::twin::report::error_report(&q, &p.gsnr).unwrap();
        assert!(rep.mean_abs_db < 1e-3, "{}", rep.mean_abs_db);
    }

    #[test]
    fn switch_and_amp_deploys_reach_the_plant() {
        let (mut io, st) = io();
        let payload = StrategyPayload::SwitchLightpaths {
            lightpaths: vec!["m0".into()],
            new_route: ["A", "B", "C", "E"].map(String::from).to_vec(),
            avoid_link: Some("A-C".into()),
        };
        let after = crate::agent::strategy::apply_payload(&st, &payload).unwrap();
        io.deploy(&payload, &after).unwrap();
        let moved = io.poll(1, &["m0".into()]).unwrap().gsnr;
        assert_eq!(moved.len(), 1);

        let link = st.network.link("A-B").unwrap();
        let mut amp = st.link_amps(link)[0].clone();
        amp.tilt_db += 0.5;
        let payload = StrategyPayload::EdfaReconfig {
            link: "A-B".into(),
            scope: Scope::All,
            settings: vec![AmpSetting::from(&amp)],
        };
        let after = crate::agent::strategy::apply_payload(&after, &payload).unwrap();
        io.deploy(&payload, &after).unwrap();
        io.deploy(&StrategyPayload::NoOp, &after).unwrap();
    }
}
