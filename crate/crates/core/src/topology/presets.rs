//! The three reference systems, built in code and mirrored as JSON under `presets/`.

use crate::amplifier::EdfaConfig;
use crate::fiber::{propagate, FiberType, PropagationOptions, SpanParams};
use crate::spectral::{build_grid, from_dbm, tilt_fit, Band, BandPlan, ChannelGrid, PowerSpectrum};

use super::{Link, Network, Node, NodeType, TopologyError};

/// Insertion loss of one ROADM traversal, made up by the booster.
pub const ROADM_LOSS_DB: f64 = 14.0;
const MAX_POUT_DBM: f64 = 26.0;
const MAX_TILT_DB: f64 = 6.0;

struct Plan<'a> {
    preset: &'a str,
    description: &'a str,
    fiber: FiberType,
    launch_dbm: f64,
    nodes: &'a [(&'a str, NodeType)],
    links: &'a [(&'a str, &'a str, &'a [f64])],
}

const SYSTEM1: Plan = Plan {
    preset: "system1",
    description: "Point-to-point C+L line, 22 x 100 km G.654.",
    fiber: FiberType::G654,
    launch_dbm: 2.0,
    nodes: &[("A", NodeType::Terminal), ("B", NodeType::Terminal)],
    links: &[("A", "B", &[100.0; 22])],
};

// Six ROADMs; the fibered pairs and lengths are an assumed stand-in chosen
// inside the published 47.0..114.0 km range.
const SYSTEM2: Plan = Plan {
    preset: "system2",
    description: "Six-ROADM C-band mesh over G.652. Fibered node pairs and span lengths are an assumed stand-in: \
                  lengths are fixed values inside 47.0..114.0 km chosen so that A-C-E (278.7 km) is shorter than A-B-C-E (295.5 km).",
    fiber: FiberType::G652,
    launch_dbm: 0.0,
    nodes: &[
        ("A", NodeType::Roadm),
        ("B", NodeType::Roadm),
        ("C", NodeType::Roadm),
        ("D", NodeType::Roadm),
        ("E", NodeType::Roadm),
        ("F", NodeType::Roadm),
    ],
    links: &[
        ("A", "B", &[58.4]),
        ("B", "C", &[47.0]),
        ("A", "C", &[88.6]),
        ("C", "E", &[76.1, 114.0]),
        ("C", "D", &[93.7]),
        ("D", "F", &[66.5, 101.2]),
        ("E", "F", &[71.9]),
    ],
};

const SYSTEM3: Plan = Plan {
    preset: "system3",
    description: "C+L line A-B-Z over G.652, 6 spans totalling 469.3 km.",
    fiber: FiberType::G652,
    launch_dbm: 0.0,
    nodes: &[("A", NodeType::Roadm), ("B", NodeType::Roadm), ("Z", NodeType::Terminal)],
    links: &[
        ("A", "B", &[72.5]),
        ("B", "Z", &[86.4, 80.2, 75.6, 69.8, 84.8]),
    ],
};

pub fn preset_names() -> &'static [&'static str] {
    &["system1", "system2", "system3"]
}

pub fn preset(name: &str) -> Result<Network, TopologyError> {
    let plan = match name {
        "system1" => &SYSTEM1,
        "system2" => &SYSTEM2,
        "system3" => &SYSTEM3,
        other => return Err(TopologyError::UnknownPreset(other.to_string())),
    };
    build(plan)
}

fn build(plan: &Plan) -> Result<Network, TopologyError> {
    let grid_plan = BandPlan::Preset(plan.preset.to_string());
    let grid = build_grid(&grid_plan)?;
    let nodes = plan
        .nodes
        .iter()
        .map(|(id, t)| Node {
            id: id.to_string(),
            node_type: *t,
        })
        .collect();
    let links = plan
        .links
        .iter()
        .map(|(from, to, lengths)| build_link(plan, &grid, from, to, lengths))
        .collect::<Result<Vec<_>, _>>()?;
    let mut net = Network::new(nodes, links, grid_plan)?;
    net.description = Some(plan.description.to_string());
    Ok(net)
}

fn build_link(plan: &Plan, grid: &ChannelGrid, from: &str, to: &str, lengths: &[f64]) -> Result<Link, TopologyError> {
    let id = format!("{from}-{to}");
    let spans: Vec<SpanParams> = lengths
        .iter()
        .enumerate()
        .map(|(k, &len)| SpanParams::nominal(format!("{id}:{}", k + 1), plan.fiber, len))
        .collect();
    let full_load = PowerSpectrum::uniform(grid, from_dbm(plan.launch_dbm));
    let mut amps = Vec::new();
    for stage in 0..=spans.len() {
        let site = match stage {
            0 => from.to_string(),
            s if s == spans.len() => to.to_string(),
            s => format!("{id}/ila{s}"),
        };
        let tilts = match stage {
            0 => Vec::new(),
            s => srs_tilts(&spans[s - 1], &full_load, grid)?,
        };
        for band in grid.bands() {
            let gain = match stage {
                0 => ROADM_LOSS_DB,
                s => spans[s - 1].passive_loss_db(grid.band_edges(band).map_or(0.0, |e| e.0)),
            };
            let mut amp = EdfaConfig::for_band(
                format!("{id}:{stage}:{}", band.as_str()),
                site.clone(),
                stage,
                grid,
                band,
                gain.clamp(0.0, 40.0),
            );
            amp.max_pout_dbm = MAX_POUT_DBM;
            amp.target_pch_dbm = Some(plan.launch_dbm);
            amp.tilt_db = tilts
                .iter()
                .find(|(b, _)| *b == band)
                .map_or(0.0, |(_, t)| *t);
            amps.push(amp);
        }
    }
    Ok(Link {
        id,
        from: from.to_string(),
        to: to.to_string(),
        spans,
        amps,
        add_power_dbm: plan.launch_dbm - ROADM_LOSS_DB,
    })
}

/// Amplifier tilt (dB across each band) that undoes the span's full-load Raman tilt.
fn srs_tilts(span: &SpanParams, input: &PowerSpectrum, grid: &ChannelGrid) -> Result<Vec<(Band, f64)>, TopologyError> {
    let out = propagate(span, input, &PropagationOptions::default())?;
    let mut tilts = Vec::new();
    for band in grid.bands() {
        let idx = grid.band_indices(band);
        let mut part = PowerSpectrum::dark(grid);
        for &i in &idx {
            part.set(i, out.output.power(i), input.occupancy()[i]);
        }
        let fit = tilt_fit(&part)?;
        let (lo, hi) = grid.band_edges(band).unwrap_or((0.0, 0.0));
        let t = -fit.slope_db_per_thz * (hi - lo);
        // two decimals keep the shipped preset files readable
        tilts.push((band, ((t * 100.0).round() / 100.0).clamp(-MAX_TILT_DB, MAX_TILT_DB)));
    }
    Ok(tilts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tilts_counter_raman_transfer() {
        let net = preset("system1").unwrap();
        let link = &net.links[0];
        for a in link.amps_at(1) {
            // Raman pushes power toward low frequencies, so the correction raises the high edge.
            assert!(a.tilt_db > 0.0, "{} {}", a.id, a.tilt_db);
        }
        assert!(link.amps_at(0).iter().all(|a| a.tilt_db == 0.0));
    }

    #[test]
    #[ignore = "writes presets/*.json"]
    fn regenerate_preset_files() {
        for name in preset_names() {
            let path = format!("{}/presets/{name}.json", env!("CARGO_MANIFEST_DIR"));
            let text = serde_json::to_string_pretty(&preset(name).unwrap()).unwrap();
            std::fs::write(path, text + "\n").unwrap();
        }
    }

    #[test]
    fn shipped_files_match_code() {
        for name in preset_names() {
            let path = format!("{}/presets/{name}.json", env!("CARGO_MANIFEST_DIR"));
            let text = std::fs::read_to_string(&path).unwrap_or_default();
            let code = preset(name).unwrap();
            let file = super::super::load_topology(&text).ok();
            assert_eq!(file.as_ref(), Some(&code), "{path} is stale; regenerate with `twin build`");
        }
    }
}
