//! Request routing: round-robin over the LP pool, ticket-based direct-to-HP
//! admission, and round-robin dispatch of offloaded requests over HP
//! instances.

use crate::workload::Request;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("no LP instances configured; arrivals cannot be routed")]
    NoLpInstances,
    #[error("offloading requires at least one HP instance")]
    NoHpInstances,
}

/// Routing state owned by the engine; all operations happen at event
/// boundaries, single-threaded within a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingState {
    lp_instances: Vec<usize>,
    hp_instances: Vec<usize>,
    rr_cursor_lp: usize,
    rr_cursor_hp: usize,
    pending_tickets: BTreeSet<usize>,
}

impl RoutingState {
    pub fn new(lp_instances: Vec<usize>, hp_instances: Vec<usize>) -> Result<Self, ControllerError> {
        if lp_instances.is_empty() {
            return Err(ControllerError::NoLpInstances);
        }
        Ok(RoutingState {
            lp_instances,
            hp_instances,
            rr_cursor_lp: 0,
            rr_cursor_hp: 0,
            pending_tickets: BTreeSet::new(),
        })
    }

    pub fn hp_instances(&self) -> &[usize] {
        &self.hp_instances
    }

    /// Route one arrival: a pending ticket (lowest HP id first) wins and is
    /// consumed, otherwise the next LP instance in round-robin order.
    pub fn route_arrival(&mut self) -> usize {
        if let Some(&hp) = self.pending_tickets.iter().next() {
            self.pending_tickets.remove(&hp);
            return hp;
        }
        let target = self.lp_instances[self.rr_cursor_lp];
        self.rr_cursor_lp = (self.rr_cursor_lp + 1) % self.lp_instances.len();
        target
    }

    /// Register an idle HP instance's ticket. At most one ticket per
    /// instance may be outstanding; duplicates are a no-op and return false.
    pub fn issue_ticket(&mut self, hp_id: usize) -> bool {
        self.pending_tickets.insert(hp_id)
    }

    pub fn has_ticket(&self, hp_id: usize) -> bool {
        self.pending_tickets.contains(&hp_id)
    }

    /// Assign offloaded requests to HP instances round-robin. Only the
    /// prompt travels; the engine applies the configured transfer delay.
    pub fn dispatch_offloads(&mut self, moved: Vec<Request>) -> Result<Vec<(usize, Request)>, ControllerError> {
        if moved.is_empty() {
            return Ok(Vec::new());
        }
        if self.hp_instances.is_empty() {
            return Err(ControllerError::NoHpInstances);
        }
        Ok(moved
            .into_iter()
            .map(|req| {
                let target = self.hp_instances[self.rr_cursor_hp];
                self.rr_cursor_hp = (self.rr_cursor_hp + 1) % self.hp_instances.len();
                (target, req)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{Request, SloSpec};

    fn req(id: u64) -> Request {
        Request::new(id, 0.0, 10, 5, &SloSpec::new(1.0, 0.1))
    }

    #[test]
    fn round_robin_over_lp_pool() {
        let mut rs = RoutingState::new(vec![0, 1], vec![2]).unwrap();
        let targets: Vec<usize> = (0..5).map(|_| rs.route_arrival()).collect();
        assert_eq!(targets, vec![0, 1, 0, 1, 0]);
    }

    #[test]
    fn requires_lp_instances() {
        assert_eq!(RoutingState::new(vec![], vec![0]), Err(ControllerError::NoLpInstances));
    }

    #[test]
    fn ticket_routes_next_arrival_directly() {
        let mut rs = RoutingState::new(vec![0, 1], vec![2, 3]).unwrap();
        assert!(rs.issue_ticket(3));
        assert!(rs.issue_ticket(2));
        // Lowest HP id first, then round-robin resumes where it left off.
        assert_eq!(rs.route_arrival(), 2);
        assert!(!rs.has_ticket(2));
        assert_eq!(rs.route_arrival(), 3);
        assert_eq!(rs.route_arrival(), 0);
        assert_eq!(rs.route_arrival(), 1);
    }

    #[test]
    fn duplicate_ticket_is_noop() {
        let mut rs = RoutingState::new(vec![0], vec![1]).unwrap();
        assert!(rs.issue_ticket(1));
        assert!(!rs.issue_ticket(1), "only one ticket per HP at a time");
        assert_eq!(rs.route_arrival(), 1);
        assert_eq!(rs.route_arrival(), 0);
    }

    #[test]
    fn offloads_round_robin_over_hp() {
        let mut rs = RoutingState::new(vec![0], vec![1, 2]).unwrap();
        let assigned = rs.dispatch_offloads(vec![req(0), req(1), req(2), req(3)]).unwrap();
        let targets: Vec<usize> = assigned.iter().map(|(t, _)| *t).collect();
        assert_eq!(targets, vec![1, 2, 1, 2]);

        let mut single = RoutingState::new(vec![0], vec![5]).unwrap();
        let assigned = single.dispatch_offloads(vec![req(0), req(1), req(2)]).unwrap();
        assert!(assigned.iter().all(|(t, _)| *t == 5));
    }

    #[test]
    fn offload_without_hp_is_an_error() {
        let mut rs = RoutingState::new(vec![0], vec![]).unwrap();
        assert!(rs.dispatch_offloads(vec![]).unwrap().is_empty());
        assert!(matches!(
            rs.dispatch_offloads(vec![req(0)]),
            Err(ControllerError::NoHpInstances)
        ));
    }
}
