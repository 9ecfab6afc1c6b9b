//! Pod address management and headless-service resolution.
//!
//! Each simulated node leases one /24 out of 10.244.0.0/16, in config
//! order. Within a subnet `.0` and `.1` are reserved (network, gateway) and
//! `.255` is broadcast, so pods get `.2` through `.254`, lowest free first.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{Kind, PodPhase, Resource};
use crate::store::{ObjectKey, Store};

pub const CLUSTER_CIDR: &str = "10.244.0.0/16";
pub const CLUSTER_DOMAIN: &str = "svc.cluster.local";

const FIRST_HOST: u8 = 2;
const LAST_HOST: u8 = 254;
const MAX_SUBNETS: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetworkError {
    #[error("subnet of node {0} is exhausted")]
    SubnetExhausted(String),
    #[error("{0} already has an address")]
    AlreadyAllocated(String),
    #[error("{0} has no address")]
    NotAllocated(String),
    #[error("node {0} has no subnet lease")]
    NoLease(String),
    #[error("cluster CIDR only has room for {MAX_SUBNETS} node subnets")]
    TooManyNodes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubnetLease {
    pub node: String,
    /// Third octet of the /24.
    pub index: u8,
    next_free: u8,
    freed: BTreeSet<u8>,
}

impl SubnetLease {
    pub fn subnet(&self) -> String {
        format!("10.244.{}.0/24", self.index)
    }

    fn address(&self, host: u8) -> Ipv4Addr {
        Ipv4Addr::new(10, 244, self.index, host)
    }

    fn take(&mut self) -> Option<u8> {
        if let Some(host) = self.freed.pop_first() {
            return Some(host);
        }
        if self.next_free > LAST_HOST {
            return None;
        }
        let host = self.next_free;
        self.next_free += 1;
        Some(host)
    }

    fn give_back(&mut self, host: u8) {
        if host + 1 == self.next_free {
            self.next_free -= 1;
            while let Some(&last) = self.freed.last() {
                if last + 1 != self.next_free {
                    break;
                }
                self.freed.pop_last();
                self.next_free -= 1;
            }
        } else {
            self.freed.insert(host);
        }
    }

    fn is_full(&self) -> bool {
        self.freed.is_empty() && self.next_free > LAST_HOST
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ipam {
    leases: Vec<SubnetLease>,
    /// pod key ("namespace/name") -> (lease index, host octet)
    by_pod: BTreeMap<String, (usize, u8)>,
}

impl Ipam {
    /// Leases one /24 per node, in the given order.
    pub fn new<'a>(nodes: impl IntoIterator<Item = &'a str>) -> Result<Self, NetworkError> {
        let mut leases = Vec::new();
        for (i, node) in nodes.into_iter().enumerate() {
            let index = u8::try_from(i).map_err(|_| NetworkError::TooManyNodes)?;
            leases.push(SubnetLease {
                node: node.to_string(),
                index,
                next_free: FIRST_HOST,
                freed: BTreeSet::new(),
            });
        }
        debug_assert!(leases.len() <= MAX_SUBNETS);
        Ok(Ipam {
            leases,
            by_pod: BTreeMap::new(),
        })
    }

    pub fn leases(&self) -> &[SubnetLease] {
        &self.leases
    }

    pub fn allocate(&mut self, pod_key: &str, node: &str) -> Result<Ipv4Addr, NetworkError> {
        if self.by_pod.contains_key(pod_key) {
            return Err(NetworkError::AlreadyAllocated(pod_key.to_string()));
        }
        let lease_index = self
            .leases
            .iter()
            .position(|l| l.node == node)
            .ok_or_else(|| NetworkError::NoLease(node.to_string()))?;
        let lease = &mut self.leases[lease_index];
        let host = lease
            .take()
            .ok_or_else(|| NetworkError::SubnetExhausted(node.to_string()))?;
        let address = lease.address(host);
        self.by_pod.insert(pod_key.to_string(), (lease_index, host));
        Ok(address)
    }

    /// Allocates from the first node subnet, in lease order, with room left.
    pub fn allocate_any(&mut self, pod_key: &str) -> Result<Ipv4Addr, NetworkError> {
        let node = self
            .leases
            .iter()
            .find(|l| !l.is_full())
            .map(|l| l.node.clone())
            .ok_or_else(|| {
                NetworkError::SubnetExhausted(self.leases.last().map(|l| l.node.clone()).unwrap_or_default())
            })?;
        self.allocate(pod_key, &node)
    }

    pub fn release(&mut self, pod_key: &str) -> Result<Ipv4Addr, NetworkError> {
        let (lease_index, host) = self
            .by_pod
            .remove(pod_key)
            .ok_or_else(|| NetworkError::NotAllocated(pod_key.to_string()))?;
        let lease = &mut self.leases[lease_index];
        lease.give_back(host);
        Ok(lease.address(host))
    }

    pub fn address_of(&self, pod_key: &str) -> Option<Ipv4Addr> {
        self.by_pod
            .get(pod_key)
            .map(|&(lease, host)| self.leases[lease].address(host))
    }

    /// Live leases as (pod key, address), sorted by pod key.
    pub fn allocations(&self) -> Vec<(String, Ipv4Addr)> {
        self.by_pod
            .iter()
            .map(|(pod, &(lease, host))| (pod.clone(), self.leases[lease].address(host)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsRecordSet {
    pub fqdn: String,
    pub addresses: Vec<Ipv4Addr>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution {
    Found(DnsRecordSet),
    NxDomain,
}

/// Resolves a headless service to the addresses of its Running pods,
/// computed from current store contents. A service whose selector matches
/// nothing resolves to an empty set. Services without a selector have no
/// endpoints.
pub fn resolve(store: &Store, service: &str, namespace: &str) -> Resolution {
    let key = ObjectKey::new(Kind::Service, namespace, service);
    let Some(svc) = store.get(&key).and_then(|o| o.body.as_service()) else {
        return Resolution::NxDomain;
    };
    let selector = &svc.spec.selector;
    let mut addresses: Vec<Ipv4Addr> = if selector.is_empty() {
        Vec::new()
    } else {
        store
            .list(Kind::Pod)
            .filter_map(|o| match &o.body {
                Resource::Pod(p) => Some(p),
                _ => None,
            })
            .filter(|p| p.meta.namespace == namespace)
            .filter(|p| selector.iter().all(|(k, v)| p.meta.labels.get(k) == Some(v)))
            .filter(|p| p.status.phase == PodPhase::Running)
            .filter_map(|p| p.status.pod_ip)
            .collect()
    };
    addresses.sort();
    Resolution::Found(DnsRecordSet {
        fqdn: format!("{service}.{namespace}.{CLUSTER_DOMAIN}"),
        addresses,
    })
}
