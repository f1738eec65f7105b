//! Cluster prototypes and the deterministic naming rules that map prototype
//! statistics onto the strategy taxonomy, plus direction discretization.

use serde::{Deserialize, Serialize};

use crate::events::{EventLabel, EventRecord, DESCRIPTOR_DIM};
use crate::series::median;

/// Deadbands for direction discretization: (du px, dv px, dz mm).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Deadbands {
    pub du: f64,
    pub dv: f64,
    pub dz: f64,
}

impl Default for Deadbands {
    fn default() -> Self {
        // dz defaults to 3% of a 90 mm working distance; the pipeline
        // recomputes it from the stream's own median depth.
        Deadbands {
            du: 10.0,
            dv: 10.0,
            dz: 2.7,
        }
    }
}

/// Componentwise sign with deadband; magnitudes at or below the deadband map
/// to hold.
pub fn discretize_direction(action: (f64, f64, f64), deadbands: Deadbands) -> [i8; 3] {
    let one = |v: f64, band: f64| {
        if v > band {
            1
        } else if v < -band {
            -1
        } else {
            0
        }
    };
    [
        one(action.0, deadbands.du),
        one(action.1, deadbands.dv),
        one(action.2, deadbands.dz),
    ]
}

/// A mined strategy primitive: robust descriptor prototype plus the raw
/// action statistics the naming rules and direction label derive from.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Prototype {
    pub descriptor: Vec<f64>,
    pub mask: Vec<u8>,
    pub name: String,
    /// Majority event type of the member events.
    pub dominant_label: Option<EventLabel>,
    /// Median raw camera response (du px, dv px, dz mm) over members.
    pub median_action: Option<[f64; 3]>,
    pub member_count: usize,
    pub vacant: bool,
    /// Set when the name was chosen through rotational proxy statistics
    /// rather than an executable rotation axis.
    pub rotational_proxy: bool,
}

/// The twelve strategy names, in rule order of the decision table.
pub mod names {
    pub const STABLE_HOLD: &str = "Stable hold with neutral directions";
    pub const SMALL_RECENTER: &str = "Small translation for tool re-centering";
    pub const DEPTH_APPROACH: &str = "Depth-dominant controlled approach";
    pub const DEPTH_WITHDRAWAL: &str = "Depth-dominant controlled withdrawal";
    pub const HORIZONTAL_TRACKING: &str = "Horizontal-dominant motion tracking";
    pub const VERTICAL_TRACKING: &str = "Vertical-dominant motion tracking";
    pub const YAW_PITCH_REFRAME: &str = "Yaw/pitch-based view reframing";
    pub const ROLL_LEVELING: &str = "Roll-based view leveling";
    pub const VISIBILITY_RETREAT: &str = "Visibility-driven mild retreat and reframing";
    pub const CONTAMINATION_WITHDRAWAL: &str = "Contamination-triggered withdrawal";
    pub const LOCAL_SHIFT: &str = "Local workspace shift with small composite motion";
    pub const GLOBAL_TRANSITION: &str = "Global workspace transition with larger motion";
    pub const VACANT: &str = "Vacant cluster";
}

/// Deterministic naming: first matching rule wins. Magnitudes are measured
/// in deadband units so the table is resolution independent.
fn name_cluster(
    dominant: Option<EventLabel>,
    action: Option<[f64; 3]>,
    bands: Deadbands,
) -> (String, bool) {
    match dominant {
        Some(EventLabel::LensContamination) => {
            return (names::CONTAMINATION_WITHDRAWAL.into(), false)
        }
        Some(EventLabel::VisibilityDegradation) => {
            return (names::VISIBILITY_RETREAT.into(), false)
        }
        _ => {}
    }
    let Some([du, dv, dz]) = action else {
        return (names::STABLE_HOLD.into(), false);
    };
    let mu = du.abs() / bands.du;
    let mv = dv.abs() / bands.dv;
    let mz = dz.abs() / bands.dz;
    if mu <= 1.0 && mv <= 1.0 && mz <= 1.0 {
        return (names::STABLE_HOLD.into(), false);
    }
    if mz > 1.0 && mz >= 1.5 * mu.max(mv) {
        let name = if dz < 0.0 {
            names::DEPTH_APPROACH
        } else {
            names::DEPTH_WITHDRAWAL
        };
        return (name.into(), false);
    }
    let total = mu + mv + mz;
    if total >= 8.0 {
        return (names::GLOBAL_TRANSITION.into(), false);
    }
    if mu.max(mv) <= 3.0 && mz <= 1.0 {
        return (names::SMALL_RECENTER.into(), false);
    }
    if mu >= 2.0 * mv {
        return (names::HORIZONTAL_TRACKING.into(), false);
    }
    if mv >= 2.0 * mu {
        return (names::VERTICAL_TRACKING.into(), false);
    }
    if mu.min(mv) >= 3.0 {
        // Both image axes strongly and comparably active: a rotational
        // reframing proxy in the 3-DoF command space.
        let name = if du * dv > 0.0 {
            names::YAW_PITCH_REFRAME
        } else {
            names::ROLL_LEVELING
        };
        return (name.into(), true);
    }
    (names::LOCAL_SHIFT.into(), false)
}

/// Per-cluster elementwise-median prototypes with names and raw action
/// medians. Empty clusters come back vacant.
pub fn extract_prototypes(
    events: &[EventRecord],
    labels: &[usize],
    k: usize,
    bands: Deadbands,
) -> Vec<Prototype> {
    (0..k)
        .map(|cluster| {
            let members: Vec<&EventRecord> = events
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == cluster)
                .map(|(e, _)| e)
                .collect();
            if members.is_empty() {
                return Prototype {
                    descriptor: vec![0.0; DESCRIPTOR_DIM],
                    mask: vec![0; DESCRIPTOR_DIM],
                    name: names::VACANT.into(),
                    dominant_label: None,
                    median_action: None,
                    member_count: 0,
                    vacant: true,
                    rotational_proxy: false,
                };
            }
            let mut descriptor = vec![0.0; DESCRIPTOR_DIM];
            let mut mask = vec![0u8; DESCRIPTOR_DIM];
            for d in 0..DESCRIPTOR_DIM {
                let vals: Vec<f64> = members
                    .iter()
                    .filter(|e| e.valid_mask[d] == 1)
                    .map(|e| e.descriptor[d])
                    .collect();
                if let Some(m) = median(&vals) {
                    descriptor[d] = m;
                    mask[d] = 1;
                }
            }
            let mut counts: Vec<(EventLabel, usize)> = EventLabel::ALL
                .into_iter()
                .map(|l| (l, members.iter().filter(|e| e.label == l).count()))
                .collect();
            counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let dominant_label = (counts[0].1 > 0).then_some(counts[0].0);

            let actions: Vec<[f64; 3]> = members
                .iter()
                .filter_map(|e| e.provenance.raw_action)
                .collect();
            let median_action = (!actions.is_empty()).then(|| {
                [
                    median(&actions.iter().map(|a| a[0]).collect::<Vec<_>>()).unwrap(),
                    median(&actions.iter().map(|a| a[1]).collect::<Vec<_>>()).unwrap(),
                    median(&actions.iter().map(|a| a[2]).collect::<Vec<_>>()).unwrap(),
                ]
            });
            let (name, rotational_proxy) = name_cluster(dominant_label, median_action, bands);
            Prototype {
                descriptor,
                mask,
                name,
                dominant_label,
                median_action,
                member_count: members.len(),
                vacant: false,
                rotational_proxy,
            }
        })
        .collect()
}

/// Direction prototype per cluster: the discretized median action, or hold
/// for vacant/action-less clusters.
pub fn direction_prototypes(prototypes: &[Prototype], bands: Deadbands) -> Vec<[i8; 3]> {
    prototypes
        .iter()
        .map(|p| match p.median_action {
            Some([du, dv, dz]) => discretize_direction((du, dv, dz), bands),
            None => [0, 0, 0],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Provenance;

    #[test]
    fn deadband_discretization() {
        let bands = Deadbands {
            du: 10.0,
            dv: 10.0,
            dz: 2.0,
        };
        assert_eq!(discretize_direction((50.0, -30.0, 0.5), bands), [1, -1, 0]);
        assert_eq!(discretize_direction((0.0, 0.0, 0.0), bands), [0, 0, 0]);
        // Exact deadband magnitudes map to hold.
        assert_eq!(discretize_direction((-10.0, 10.0, -2.0), bands), [0, 0, 0]);
    }

    fn event(label: EventLabel, action: Option<[f64; 3]>, desc0: f64) -> EventRecord {
        let mut prov = Provenance::new("test");
        prov.raw_action = action;
        let mut e = EventRecord::span(label, 0.0, 1.0, prov);
        e.video_id = "v".into();
        e.descriptor[12] = desc0;
        e.valid_mask[12] = 1;
        e
    }

    #[test]
    fn singleton_cluster_prototype_is_its_descriptor() {
        let events = vec![event(EventLabel::Interaction, Some([1.0, 0.0, 0.0]), 0.7)];
        let protos = extract_prototypes(&events, &[0], 1, Deadbands::default());
        assert_eq!(protos[0].descriptor[12], 0.7);
        assert_eq!(protos[0].mask[12], 1);
        assert_eq!(protos[0].member_count, 1);
    }

    #[test]
    fn strongly_negative_depth_names_approach() {
        let events: Vec<EventRecord> = (0..4)
            .map(|_| event(EventLabel::DepthAdvance, Some([1.0, 0.5, -15.0]), 0.2))
            .collect();
        let protos = extract_prototypes(&events, &[0, 0, 0, 0], 1, Deadbands::default());
        assert_eq!(protos[0].name, names::DEPTH_APPROACH);
    }

    #[test]
    fn contamination_majority_names_withdrawal() {
        let events = vec![
            event(EventLabel::LensContamination, Some([0.0, 0.0, 20.0]), 0.1),
            event(EventLabel::LensContamination, Some([0.0, 0.0, 18.0]), 0.1),
            event(EventLabel::Interaction, Some([0.0, 0.0, 19.0]), 0.1),
        ];
        let protos = extract_prototypes(&events, &[0, 0, 0], 1, Deadbands::default());
        assert_eq!(protos[0].name, names::CONTAMINATION_WITHDRAWAL);
    }

    #[test]
    fn empty_cluster_is_vacant() {
        let events = vec![event(EventLabel::Interaction, None, 0.4)];
        let protos = extract_prototypes(&events, &[0], 2, Deadbands::default());
        assert!(protos[1].vacant);
        assert_eq!(protos[1].name, names::VACANT);
    }

    #[test]
    fn taxonomy_rules_cover_motion_regimes() {
        let bands = Deadbands::default();
        let cases = [
            (Some([2.0, 1.0, 0.5]), names::STABLE_HOLD),
            (Some([25.0, 8.0, 0.5]), names::SMALL_RECENTER),
            (Some([12.0, 3.0, 20.0]), names::DEPTH_WITHDRAWAL),
            (Some([55.0, 11.0, 1.0]), names::HORIZONTAL_TRACKING),
            (Some([11.0, 55.0, 1.0]), names::VERTICAL_TRACKING),
            (Some([38.0, 36.0, 1.0]), names::YAW_PITCH_REFRAME),
            (Some([38.0, -36.0, 1.0]), names::ROLL_LEVELING),
            (Some([120.0, 110.0, 25.0]), names::GLOBAL_TRANSITION),
            (Some([32.0, 20.0, 3.0]), names::LOCAL_SHIFT),
            (None, names::STABLE_HOLD),
        ];
        for (action, expected) in cases {
            let (name, _) = name_cluster(Some(EventLabel::Interaction), action, bands);
            assert_eq!(name, expected, "action {action:?}");
        }
    }

    #[test]
    fn rotational_names_carry_proxy_flag() {
        let (_, proxy) = name_cluster(
            Some(EventLabel::Interaction),
            Some([38.0, 36.0, 1.0]),
            Deadbands::default(),
        );
        assert!(proxy);
    }

    #[test]
    fn direction_prototype_follows_median_action() {
        let events: Vec<EventRecord> = vec![
            event(EventLabel::Interaction, Some([30.0, -2.0, 0.1]), 0.5),
            event(EventLabel::Interaction, Some([26.0, 1.0, -0.2]), 0.5),
            event(EventLabel::Interaction, Some([28.0, 0.0, 0.0]), 0.5),
        ];
        let protos = extract_prototypes(&events, &[0, 0, 0], 1, Deadbands::default());
        let dirs = direction_prototypes(&protos, Deadbands::default());
        assert_eq!(dirs[0], [1, 0, 0]);
    }
}
