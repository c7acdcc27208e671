use std::collections::BTreeMap;
use std::fmt;

use serde::{Serialize, Serializer};

use crate::links::LinkKind;

/// Per-satellite counters. GS-link energy and time are booked on the
/// satellite end of the contact.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SatLedger {
    pub comp_energy_j: f64,
    pub lisl_energy_j: f64,
    pub gs_energy_j: f64,
    pub intra_lisl: u64,
    pub inter_lisl: u64,
    pub gs: u64,
    pub transmission_time_s: f64,
    pub waiting_time_s: f64,
}

impl SatLedger {
    fn add(&mut self, o: &SatLedger) {
        self.comp_energy_j += o.comp_energy_j;
        self.lisl_energy_j += o.lisl_energy_j;
        self.gs_energy_j += o.gs_energy_j;
        self.intra_lisl += o.intra_lisl;
        self.inter_lisl += o.inter_lisl;
        self.gs += o.gs;
        self.transmission_time_s += o.transmission_time_s;
        self.waiting_time_s += o.waiting_time_s;
    }
}

/// Which protocol step a transfer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Init,
    Upload,
    Mixing,
    Consolidation,
    Collection,
    FedAvg,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SessionLedger {
    pub per_satellite: BTreeMap<usize, SatLedger>,
    pub intra_lisl_energy_j: f64,
    pub inter_lisl_energy_j: f64,
    pub inter_lisl_mixing: u64,
    pub inter_lisl_consolidation: u64,
    pub makespan_s: f64,
}

impl SessionLedger {
    pub fn new(sats: impl IntoIterator<Item = usize>) -> Self {
        Self {
            per_satellite: sats.into_iter().map(|s| (s, SatLedger::default())).collect(),
            ..Self::default()
        }
    }

    pub(crate) fn sat(&mut self, id: usize) -> &mut SatLedger {
        self.per_satellite.entry(id).or_default()
    }

    pub(crate) fn transfer(
        &mut self,
        kind: LinkKind,
        component: Component,
        sat: usize,
        delay_s: f64,
        energy_j: f64,
    ) {
        let s = self.sat(sat);
        s.transmission_time_s += delay_s;
        match kind {
            LinkKind::IntraClusterLisl => {
                s.intra_lisl += 1;
                s.lisl_energy_j += energy_j;
                self.intra_lisl_energy_j += energy_j;
            }
            LinkKind::InterClusterLisl => {
                s.inter_lisl += 1;
                s.lisl_energy_j += energy_j;
                self.inter_lisl_energy_j += energy_j;
                match component {
                    Component::Consolidation => self.inter_lisl_consolidation += 1,
                    _ => self.inter_lisl_mixing += 1,
                }
            }
            LinkKind::GroundStation => {
                s.gs += 1;
                s.gs_energy_j += energy_j;
            }
        }
    }

    pub fn totals(&self) -> SatLedger {
        let mut t = SatLedger::default();
        for s in self.per_satellite.values() {
            t.add(s);
        }
        t
    }

    pub fn summary(&self, method: &str) -> LedgerSummary {
        let t = self.totals();
        let tx = t.lisl_energy_j + t.gs_energy_j;
        let mut table = BTreeMap::new();
        table.insert("Intra-cluster LISLs (No.)".to_string(), t.intra_lisl as f64);
        table.insert("Inter-cluster LISLs (No.)".to_string(), t.inter_lisl as f64);
        table.insert("GS Communication (No.)".to_string(), t.gs as f64);
        table.insert("Transmission Energy Cost (kJ)".to_string(), tx / 1e3);
        table.insert("Training Energy Cost (kJ)".to_string(), t.comp_energy_j / 1e3);
        table.insert("Waiting Time (Hours)".to_string(), t.waiting_time_s / 3600.0);
        LedgerSummary {
            method: method.to_string(),
            intra_lisl_count: t.intra_lisl,
            inter_lisl_count: t.inter_lisl,
            inter_lisl_mixing: self.inter_lisl_mixing,
            inter_lisl_consolidation: self.inter_lisl_consolidation,
            gs_count: t.gs,
            intra_lisl_energy_j: self.intra_lisl_energy_j,
            inter_lisl_energy_j: self.inter_lisl_energy_j,
            gs_energy_j: t.gs_energy_j,
            transmission_energy_j: tx,
            transmission_energy_kj: tx / 1e3,
            training_energy_j: t.comp_energy_j,
            training_energy_kj: t.comp_energy_j / 1e3,
            transmission_time_s: t.transmission_time_s,
            waiting_time_s: t.waiting_time_s,
            waiting_time_h: t.waiting_time_s / 3600.0,
            makespan_s: self.makespan_s,
            makespan_h: self.makespan_s / 3600.0,
            table,
        }
    }
}

/// Flat ledger totals named after the comparison-table rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerSummary {
    pub method: String,
    pub intra_lisl_count: u64,
    pub inter_lisl_count: u64,
    pub inter_lisl_mixing: u64,
    pub inter_lisl_consolidation: u64,
    pub gs_count: u64,
    pub intra_lisl_energy_j: f64,
    pub inter_lisl_energy_j: f64,
    pub gs_energy_j: f64,
    pub transmission_energy_j: f64,
    pub transmission_energy_kj: f64,
    pub training_energy_j: f64,
    pub training_energy_kj: f64,
    pub transmission_time_s: f64,
    pub waiting_time_s: f64,
    pub waiting_time_h: f64,
    pub makespan_s: f64,
    pub makespan_h: f64,
    pub table: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    Sat(usize),
    Gs,
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Sat(i) => write!(f, "{i}"),
            Node::Gs => f.write_str("gs"),
        }
    }
}

impl Serialize for Node {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventAction {
    GsDownlink,
    GsUplink,
    Relay,
    Train,
    Skip,
    Upload,
    Idle,
    MixSend,
    ConsolidateSend,
    Broadcast,
}

impl EventAction {
    pub fn link_kind(self) -> Option<LinkKind> {
        match self {
            EventAction::GsDownlink | EventAction::GsUplink => Some(LinkKind::GroundStation),
            EventAction::Relay | EventAction::Upload => Some(LinkKind::IntraClusterLisl),
            EventAction::MixSend | EventAction::ConsolidateSend | EventAction::Broadcast => {
                Some(LinkKind::InterClusterLisl)
            }
            EventAction::Train | EventAction::Skip | EventAction::Idle => None,
        }
    }
}

/// One row of the session event log. For transfers `t_s` is the start of
/// transmission and `waiting_s` the idle time spent before it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub t_s: f64,
    pub round: u32,
    pub cluster: Option<usize>,
    pub actor: Node,
    pub action: EventAction,
    pub peer: Option<Node>,
    pub bits: u64,
    pub delay_s: f64,
    pub energy_j: f64,
    pub waiting_s: f64,
}
