use crate::costmodel::{Bandwidth, Link};
use crate::error::{Error, Result};

/// `P` workers split into `M = P / N` nodes of `N` workers each.
///
/// Global rank `r = node * N + local_rank`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterTopology {
    workers: usize,
    per_node: usize,
    bandwidth: Bandwidth,
}

impl ClusterTopology {
    /// Topology with unit bandwidths; see [`ClusterTopology::with_bandwidth`].
    pub fn new(workers: usize, per_node: usize) -> Result<Self> {
        Self::with_bandwidth(
            workers,
            per_node,
            Bandwidth {
                intra: 1.0,
                inter: 1.0,
            },
        )
    }

    pub fn with_bandwidth(workers: usize, per_node: usize, bandwidth: Bandwidth) -> Result<Self> {
        if workers == 0 || per_node == 0 {
            return Err(Error::Config("topology needs at least one worker per node"));
        }
        if !workers.is_multiple_of(per_node) {
            return Err(Error::Config(
                "workers per node must divide the worker count",
            ));
        }
        if !(bandwidth.intra > 0.0 && bandwidth.inter > 0.0) {
            return Err(Error::Config("bandwidths must be positive"));
        }
        Ok(Self {
            workers,
            per_node,
            bandwidth,
        })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn per_node(&self) -> usize {
        self.per_node
    }

    pub fn nodes(&self) -> usize {
        self.workers / self.per_node
    }

    pub fn bandwidth(&self) -> Bandwidth {
        self.bandwidth
    }

    pub fn rank(&self, node: usize, local: usize) -> usize {
        debug_assert!(node < self.nodes() && local < self.per_node);
        node * self.per_node + local
    }

    /// `(node, local_rank)` of a global rank.
    pub fn locate(&self, rank: usize) -> (usize, usize) {
        (rank / self.per_node, rank % self.per_node)
    }

    pub fn link(&self, from: usize, to: usize) -> Link {
        if self.locate(from).0 == self.locate(to).0 {
            Link::Intra
        } else {
            Link::Inter
        }
    }
}
