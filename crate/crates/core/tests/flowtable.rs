mod common;

use std::collections::BTreeSet;
use std::path::Path;

use mcast_core::env::{tree_metrics, MulticastRequest};
use mcast_core::flowtable::*;
use mcast_core::topology::Topology;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn relay_node_of_the_worked_example_is_kept() {
    // Source 2, destinations {4, 5}; node 3 relays toward 5.
    let topo = Topology::parse(
        "nodes 8\nedge 1 2 10 1\nedge 2 3 10 1\nedge 1 4 10 1\nedge 4 3 10 1\n\
         edge 3 5 10 1\nedge 3 6 10 1\nedge 5 7 10 1\nedge 2 4 10 1\nedge 0 1 10 1\n",
        Path::new("example"),
    )
    .unwrap();
    let req = MulticastRequest::new(&topo, 2, &[4, 5]).unwrap();
    let e = |i, j| topo.edge_between(i, j).unwrap();
    let actions = [e(2, 3), e(2, 4), e(3, 5)];
    let route = build_route_dict(&topo, &actions, &req).unwrap();
    let info = prune_redundant(&route, &req).unwrap();
    let mut kept = install_edges(&topo, &info).unwrap();
    let mut all = actions.to_vec();
    kept.sort_unstable();
    all.sort_unstable();
    assert_eq!(kept, all);
    assert_eq!(info[&3].parent, Some(2));
    assert_eq!(info[&3].children, vec![5]);

    let ports = PortMap::synthetic(&topo);
    let entries = emit_flow_entries(&info, &ports, &req, 3).unwrap();
    let source = entries.iter().find(|f| f.switch == 2).unwrap();
    assert_eq!(source.in_port, None);
    assert_eq!(source.out_ports.len(), 2);
    assert_eq!(replay_reachability(&entries, &ports, 2).unwrap(), BTreeSet::from([4, 5]));
}

#[test]
fn missing_destination_is_an_error() {
    let topo = Topology::parse("nodes 3\nedge 0 1 1 1\nedge 1 2 1 1\n", Path::new("t")).unwrap();
    let req = MulticastRequest::new(&topo, 0, &[2]).unwrap();
    let route = build_route_dict(&topo, &[0], &req).unwrap();
    assert!(prune_redundant(&route, &req).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pruning_matches_redundancy_and_keeps_delivery(seed in any::<u64>(), n in 4usize..12, k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = common::random_graph(&mut rng, n, 0.3);
        let snap = common::random_snapshot(&mut rng, &topo);
        let req = common::random_request(&mut rng, &topo, k.min(n - 1));
        let actions = common::random_spanning_actions(&mut rng, &topo, &req);

        let route = build_route_dict(&topo, &actions, &req).unwrap();
        prop_assert_eq!(route.len(), actions.len() + 1);
        let info = prune_redundant(&route, &req).unwrap();
        let kept = install_edges(&topo, &info).unwrap();
        let before = tree_metrics(&topo, &req, &actions, &snap).unwrap();
        prop_assert_eq!(actions.len() - kept.len(), before.redundancy);

        // Leaves are destinations and child lists are disjoint.
        let mut seen_children = BTreeSet::new();
        for (node, rec) in &info {
            if rec.children.is_empty() {
                prop_assert!(req.destinations.contains(node));
            }
            for c in &rec.children {
                prop_assert!(seen_children.insert(*c));
            }
        }

        // Idempotence.
        let again: RouteDict = info.iter().map(|(&v, r)| (v, r.parent)).collect();
        prop_assert_eq!(&prune_redundant(&again, &req).unwrap(), &info);

        // Pruning never hurts the tree metrics.
        let after = tree_metrics(&topo, &req, &kept, &snap).unwrap();
        prop_assert_eq!(after.redundancy, 0);
        prop_assert!(after.delay_tree <= before.delay_tree + 1e-12);
        prop_assert!(after.loss_tree <= before.loss_tree + 1e-12);
        prop_assert!(after.bw_tree >= before.bw_tree - 1e-12);

        let ports = PortMap::synthetic(&topo);
        let entries = emit_flow_entries(&info, &ports, &req, 1).unwrap();
        prop_assert_eq!(entries.len(), info.len());
        for f in &entries {
            let distinct: BTreeSet<_> = f.out_ports.iter().collect();
            prop_assert_eq!(distinct.len(), f.out_ports.len());
            prop_assert!(f.in_port.is_none_or(|p| !f.out_ports.contains(&p)));
        }
        let reached = replay_reachability(&entries, &ports, req.source).unwrap();
        let wanted: BTreeSet<usize> = req.destinations.iter().copied().collect();
        prop_assert_eq!(reached, wanted);

        let mut json = Vec::new();
        write_flow_entries(&entries, &mut json).unwrap();
        prop_assert_eq!(serde_json::from_slice::<Vec<FlowEntry>>(&json).unwrap(), entries);
    }
}
