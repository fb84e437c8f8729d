//! Named problem setups with pinned sizes, kinds and seeds.

use crate::distributed::{make_graph, CommGraph, GraphKind};
use crate::error::{Error, Result};
use crate::problem::{gen_dataset, Dataset, DatasetKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub n: usize,
    pub d: usize,
    pub kind: DatasetKind,
    pub normalize: bool,
    pub seed: u64,
    pub graph: Option<GraphKind>,
    pub graph_seed: u64,
}

impl Preset {
    pub fn dataset(&self) -> Result<Dataset> {
        gen_dataset(self.n, self.d, self.kind, self.normalize, self.seed)
    }

    pub fn comm_graph(&self) -> Result<Option<CommGraph>> {
        self.graph
            .map(|kind| make_graph(kind, self.n, self.graph_seed))
            .transpose()
    }
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "orthonormal8",
        n: 8,
        d: 8,
        kind: DatasetKind::Orthonormal,
        normalize: false,
        seed: 8,
        graph: None,
        graph_seed: 0,
    },
    Preset {
        name: "orthonormal32",
        n: 32,
        d: 32,
        kind: DatasetKind::Orthonormal,
        normalize: false,
        seed: 32,
        graph: None,
        graph_seed: 0,
    },
    Preset {
        name: "gaussian8",
        n: 8,
        d: 8,
        kind: DatasetKind::Gaussian,
        normalize: true,
        seed: 88,
        graph: Some(GraphKind::Ring),
        graph_seed: 0,
    },
    Preset {
        name: "spiked64",
        n: 64,
        d: 128,
        kind: DatasetKind::Spiked { rho: 0.9 },
        normalize: true,
        seed: 64,
        graph: None,
        graph_seed: 0,
    },
    Preset {
        name: "ring16",
        n: 16,
        d: 32,
        kind: DatasetKind::Gaussian,
        normalize: true,
        seed: 16,
        graph: Some(GraphKind::Ring),
        graph_seed: 0,
    },
    Preset {
        name: "path8",
        n: 8,
        d: 8,
        kind: DatasetKind::Gaussian,
        normalize: true,
        seed: 808,
        graph: Some(GraphKind::Path),
        graph_seed: 0,
    },
    Preset {
        name: "complete8",
        n: 8,
        d: 8,
        kind: DatasetKind::Gaussian,
        normalize: true,
        seed: 888,
        graph: Some(GraphKind::Complete),
        graph_seed: 0,
    },
    Preset {
        name: "er12",
        n: 12,
        d: 24,
        kind: DatasetKind::Gaussian,
        normalize: true,
        seed: 12,
        graph: Some(GraphKind::ErdosRenyi { p: 0.3 }),
        graph_seed: 12,
    },
];

pub fn preset(name: &str) -> Result<&'static Preset> {
    PRESETS
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))
}
