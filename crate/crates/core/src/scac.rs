//! Sub-clustering in adjacent cameras.
//!
//! Matching runs in two phases. Inter-zone clustering only considers
//! tracklets in the connected zones of adjacent camera pairs (zone 3 of a
//! camera faces zone 4 of the next one), which yields high-confidence local
//! clusters. Each local cluster is then represented by its expanded feature
//! (the normalized mean of its members) and inter-cam clustering merges these
//! units with the remaining singletons across all cameras. Same-camera pairs
//! and mask-incompatible pairs can never end up in one cluster.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::numeric::{
    constrained_agglomerative, cosine, mean_vector, normalize, ClusterResult, Linkage, Matrix,
};
use crate::types::{CameraTopology, GlobalTrajectory, Tracklet};
use crate::zones::DbtmMatrix;
use crate::{Error, Result, Scalar};

/// Clustering phase that produced a merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MergePhase {
    InterZone,
    InterCam,
    Global,
}

/// One audited merge: which tracklet groups fused and at what linkage
/// distance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergeRecord {
    pub phase: MergePhase,
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub distance: Scalar,
}

/// Union-find over tracklet indices recording the merge history of both
/// clustering phases.
#[derive(Debug, Clone)]
pub struct MatchGraph {
    parent: Vec<usize>,
    pub merges: Vec<MergeRecord>,
}

impl MatchGraph {
    pub fn new(n: usize) -> Self {
        MatchGraph {
            parent: (0..n).collect(),
            merges: Vec::new(),
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            // attach the larger root index under the smaller one so group
            // representatives stay stable
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    fn record(&mut self, phase: MergePhase, a: Vec<usize>, b: Vec<usize>, distance: Scalar) {
        for (&x, &y) in a.iter().zip(a.iter().skip(1)) {
            self.union(x, y);
        }
        for (&x, &y) in b.iter().zip(b.iter().skip(1)) {
            self.union(x, y);
        }
        if let (Some(&x), Some(&y)) = (a.first(), b.first()) {
            self.union(x, y);
        }
        self.merges.push(MergeRecord { phase, a, b, distance });
    }

    /// Current groups, ordered by smallest member, members sorted.
    pub fn groups(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut by_root: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for i in 0..n {
            let r = self.find(i);
            by_root.entry(r).or_default().push(i);
        }
        by_root.into_values().collect()
    }
}

/// A locally matched multi-tracklet cluster with its query-expanded feature.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCluster {
    pub members: Vec<usize>,
    pub expanded_feature: Vec<Scalar>,
}

/// Consecutive camera pairs along the topology.
pub fn candidate_pairs(topology: &CameraTopology) -> Vec<(u32, u32)> {
    topology
        .cameras()
        .windows(2)
        .map(|w| (w[0], w[1]))
        .collect()
}

fn cannot_link_for(
    indices: &[usize],
    tracklets: &[Tracklet],
    mask: &DbtmMatrix,
) -> BTreeSet<(usize, usize)> {
    let mut set = BTreeSet::new();
    for (a, &ia) in indices.iter().enumerate() {
        for (b, &ib) in indices.iter().enumerate().skip(a + 1) {
            let same_camera = tracklets[ia].camera_id == tracklets[ib].camera_id;
            if same_camera || !mask.allowed(ia, ib) {
                set.insert((a, b));
            }
        }
    }
    set
}

fn sub_distance(similarity: &Matrix<Scalar>, indices: &[usize]) -> Matrix<Scalar> {
    Matrix::from_fn(indices.len(), indices.len(), |a, b| {
        if a == b {
            0.0
        } else {
            1.0 - similarity[(indices[a], indices[b])]
        }
    })
}

fn expanded_feature(members: &[usize], features: &[Vec<Scalar>]) -> Vec<Scalar> {
    let rows: Vec<&[Scalar]> = members.iter().map(|&i| features[i].as_slice()).collect();
    let mut mean = mean_vector(&rows);
    if !normalize(&mut mean) {
        mean = features[members[0]].clone();
    }
    mean
}

/// Inter-zone clustering over the connected zones of every adjacent camera
/// pair. Returns the local clusters (size >= 2) with expanded features;
/// merges are recorded in the graph.
pub fn inter_zone_cluster(
    tracklets: &[Tracklet],
    features: &[Vec<Scalar>],
    similarity: &Matrix<Scalar>,
    mask: &DbtmMatrix,
    topology: &CameraTopology,
    threshold: Scalar,
    graph: &mut MatchGraph,
) -> Result<Vec<LocalCluster>> {
    for (cam_a, cam_b) in candidate_pairs(topology) {
        let mut indices: Vec<usize> = Vec::new();
        for (i, t) in tracklets.iter().enumerate() {
            let Some(e) = t.endpoints else { continue };
            let in_pair = (t.camera_id == cam_a && e.z_e == 3)
                || (t.camera_id == cam_b && e.z_s == 4)
                || (t.camera_id == cam_b && e.z_e == 4)
                || (t.camera_id == cam_a && e.z_s == 3);
            if in_pair {
                indices.push(i);
            }
        }
        if indices.len() < 2 {
            continue;
        }
        let dist = sub_distance(similarity, &indices);
        let cannot = cannot_link_for(&indices, tracklets, mask);
        let ClusterResult { merges, .. } =
            constrained_agglomerative(&dist, threshold, &cannot, Linkage::Average)?;
        for step in merges {
            let a: Vec<usize> = step.a.iter().map(|&l| indices[l]).collect();
            let b: Vec<usize> = step.b.iter().map(|&l| indices[l]).collect();
            graph.record(MergePhase::InterZone, a, b, step.distance);
        }
    }

    let clusters = graph
        .groups()
        .into_iter()
        .filter(|g| g.len() >= 2)
        .map(|members| {
            let expanded = expanded_feature(&members, features);
            LocalCluster {
                members,
                expanded_feature: expanded,
            }
        })
        .collect();
    Ok(clusters)
}

/// Inter-cam clustering over local clusters and remaining singletons.
///
/// Unit distances are recomputed from the expanded features; the final
/// partition is read back from the match graph so every inter-zone merge
/// survives.
pub fn inter_cam_cluster(
    tracklets: &[Tracklet],
    features: &[Vec<Scalar>],
    mask: &DbtmMatrix,
    threshold: Scalar,
    graph: &mut MatchGraph,
) -> Result<Vec<Vec<usize>>> {
    let units = graph.groups();
    let unit_features: Vec<Vec<Scalar>> = units
        .iter()
        .map(|members| expanded_feature(members, features))
        .collect();

    let n = units.len();
    let mut dist = Matrix::filled(n, n, 0.0);
    for a in 0..n {
        for b in (a + 1)..n {
            let d = 1.0 - cosine(&unit_features[a], &unit_features[b])?;
            dist[(a, b)] = d;
            dist[(b, a)] = d;
        }
    }
    let mut cannot = BTreeSet::new();
    for a in 0..n {
        for b in (a + 1)..n {
            let incompatible = units[a].iter().any(|&x| {
                units[b].iter().any(|&y| {
                    tracklets[x].camera_id == tracklets[y].camera_id || !mask.allowed(x, y)
                })
            });
            if incompatible {
                cannot.insert((a, b));
            }
        }
    }
    let ClusterResult { merges, .. } =
        constrained_agglomerative(&dist, threshold, &cannot, Linkage::Average)?;
    for step in merges {
        let a: Vec<usize> = step.a.iter().flat_map(|&u| units[u].clone()).collect();
        let b: Vec<usize> = step.b.iter().flat_map(|&u| units[u].clone()).collect();
        graph.record(MergePhase::InterCam, a, b, step.distance);
    }
    Ok(graph.groups())
}

/// Single global clustering round over all tracklets; the fallback used when
/// sub-clustering is disabled.
pub fn global_cluster(
    tracklets: &[Tracklet],
    similarity: &Matrix<Scalar>,
    mask: &DbtmMatrix,
    threshold: Scalar,
    graph: &mut MatchGraph,
) -> Result<Vec<Vec<usize>>> {
    let indices: Vec<usize> = (0..tracklets.len()).collect();
    let dist = sub_distance(similarity, &indices);
    let cannot = cannot_link_for(&indices, tracklets, mask);
    let ClusterResult { merges, .. } =
        constrained_agglomerative(&dist, threshold, &cannot, Linkage::Average)?;
    for step in merges {
        graph.record(MergePhase::Global, step.a, step.b, step.distance);
    }
    Ok(graph.groups())
}

/// Turn a partition into global trajectories.
///
/// Clusters spanning at least two cameras receive sequential ids ordered by
/// their earliest start time; single-camera clusters are included only when
/// `include_single_camera` is set.
pub fn assign_global_ids(
    tracklets: &[Tracklet],
    partition: &[Vec<usize>],
    include_single_camera: bool,
) -> Result<Vec<GlobalTrajectory>> {
    let mut chosen: Vec<Vec<usize>> = Vec::new();
    for cluster in partition {
        let mut cams = BTreeSet::new();
        for &i in cluster {
            let t = tracklets
                .get(i)
                .ok_or_else(|| Error::Config(format!("partition references tracklet {i}")))?;
            if !cams.insert(t.camera_id) {
                return Err(Error::Config(format!(
                    "cluster holds two tracklets of camera {}",
                    t.camera_id
                )));
            }
        }
        if cams.len() >= 2 || include_single_camera {
            chosen.push(cluster.clone());
        }
    }
    chosen.sort_by_key(|cluster| {
        let start = cluster
            .iter()
            .map(|&i| tracklets[i].start_time())
            .min()
            .unwrap_or(0);
        let first = cluster
            .iter()
            .map(|&i| (tracklets[i].camera_id, tracklets[i].local_id))
            .min()
            .unwrap_or((0, 0));
        (start, first)
    });
    Ok(chosen
        .into_iter()
        .enumerate()
        .map(|(idx, cluster)| {
            let mut members: Vec<Tracklet> =
                cluster.iter().map(|&i| tracklets[i].clone()).collect();
            members.sort_by_key(|t| (t.camera_id, t.local_id));
            GlobalTrajectory {
                global_id: idx as u32 + 1,
                members,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affinity::{apply_mask, raw_similarity};
    use crate::types::{BBox, TrackletEndpoints, TrackletObservation};

    fn unitv(v: Vec<Scalar>) -> Vec<Scalar> {
        let mut v = v;
        assert!(normalize(&mut v));
        v
    }

    fn tracklet(camera: u32, local_id: u32, e: TrackletEndpoints, f: Vec<Scalar>) -> Tracklet {
        Tracklet {
            camera_id: camera,
            local_id,
            observations: vec![
                TrackletObservation {
                    t: e.t_s,
                    bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
                    feature: f.clone(),
                    feature_index: 0,
                },
                TrackletObservation {
                    t: e.t_e,
                    bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
                    feature: f,
                    feature_index: 0,
                },
            ],
            endpoints: Some(e),
        }
    }

    fn ep(z_s: u8, z_e: u8, t_s: u32, t_e: u32) -> TrackletEndpoints {
        TrackletEndpoints { z_s, z_e, t_s, t_e }
    }

    #[test]
    fn candidate_pairs_are_consecutive() {
        let topo = CameraTopology::new(vec![41, 42, 43]).unwrap();
        assert_eq!(candidate_pairs(&topo), vec![(41, 42), (42, 43)]);
        let single = CameraTopology::new(vec![41]).unwrap();
        assert!(candidate_pairs(&single).is_empty());
        let six = CameraTopology::new(vec![41, 42, 43, 44, 45, 46]).unwrap();
        assert_eq!(candidate_pairs(&six).len(), 5);
    }

    #[test]
    fn same_vehicle_across_connected_zones_forms_local_cluster() {
        let topo = CameraTopology::new(vec![41, 42]).unwrap();
        let f = unitv(vec![1.0, 0.2, 0.1]);
        let tracklets = vec![
            tracklet(41, 1, ep(4, 3, 0, 20), f.clone()),
            tracklet(42, 1, ep(4, 3, 30, 50), f.clone()),
        ];
        let features: Vec<Vec<Scalar>> = vec![f.clone(), f];
        let mask = crate::zones::build_dbtm(&tracklets, &topo).unwrap();
        let sim = apply_mask(&raw_similarity(&features).unwrap(), &mask).unwrap();
        let mut graph = MatchGraph::new(2);
        let clusters = inter_zone_cluster(
            &tracklets, &features, &sim.values, &mask, &topo, 0.2, &mut graph,
        )
        .unwrap();
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].members, vec![0, 1]);
        assert!((crate::numeric::norm(&clusters[0].expanded_feature) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn masked_pairs_never_merge() {
        let topo = CameraTopology::new(vec![41, 42]).unwrap();
        let f = unitv(vec![1.0, 0.0]);
        // conflicting by time: the second starts before the first ends
        let tracklets = vec![
            tracklet(41, 1, ep(4, 3, 0, 100), f.clone()),
            tracklet(42, 1, ep(4, 3, 50, 150), f.clone()),
        ];
        let features = vec![f.clone(), f];
        let mask = crate::zones::build_dbtm(&tracklets, &topo).unwrap();
        assert!(!mask.allowed(0, 1));
        let sim = apply_mask(&raw_similarity(&features).unwrap(), &mask).unwrap();
        let mut graph = MatchGraph::new(2);
        let clusters = inter_zone_cluster(
            &tracklets, &features, &sim.values, &mask, &topo, 0.2, &mut graph,
        )
        .unwrap();
        assert!(clusters.is_empty());
    }

    #[test]
    fn empty_candidate_set_produces_no_clusters() {
        let topo = CameraTopology::new(vec![41, 42]).unwrap();
        let f = unitv(vec![1.0, 0.0]);
        // side-road endpoints only
        let tracklets = vec![tracklet(41, 1, ep(1, 2, 0, 10), f.clone())];
        let features = vec![f];
        let mask = DbtmMatrix::all_ones(1);
        let sim = raw_similarity(&features).unwrap();
        let mut graph = MatchGraph::new(1);
        let clusters = inter_zone_cluster(
            &tracklets, &features, &sim.values, &mask, &topo, 0.2, &mut graph,
        )
        .unwrap();
        assert!(clusters.is_empty());
    }

    #[test]
    fn three_camera_chain_merges_into_one_cluster() {
        let topo = CameraTopology::new(vec![41, 42, 43]).unwrap();
        let f = unitv(vec![0.5, 0.5, 0.1]);
        let tracklets = vec![
            tracklet(41, 1, ep(4, 3, 0, 20), f.clone()),
            tracklet(42, 1, ep(4, 3, 30, 50), f.clone()),
            tracklet(43, 1, ep(4, 3, 60, 80), f.clone()),
        ];
        let features = vec![f.clone(), f.clone(), f];
        let mask = crate::zones::build_dbtm(&tracklets, &topo).unwrap();
        let sim = apply_mask(&raw_similarity(&features).unwrap(), &mask).unwrap();
        let mut graph = MatchGraph::new(3);
        inter_zone_cluster(&tracklets, &features, &sim.values, &mask, &topo, 0.2, &mut graph)
            .unwrap();
        let partition = inter_cam_cluster(&tracklets, &features, &mask, 0.2, &mut graph).unwrap();
        assert_eq!(partition, vec![vec![0, 1, 2]]);
        let trajectories = assign_global_ids(&tracklets, &partition, false).unwrap();
        assert_eq!(trajectories.len(), 1);
        assert_eq!(trajectories[0].members.len(), 3);
    }

    #[test]
    fn opposite_directions_stay_apart() {
        let topo = CameraTopology::new(vec![41, 42]).unwrap();
        let f = unitv(vec![1.0, 0.05]);
        // forward vehicle in 41 then 42; reverse vehicle overlapping in time
        let tracklets = vec![
            tracklet(41, 1, ep(4, 3, 0, 20), f.clone()),
            tracklet(42, 1, ep(4, 3, 30, 50), f.clone()),
            tracklet(42, 2, ep(3, 4, 0, 20), f.clone()),
            tracklet(41, 2, ep(3, 4, 30, 50), f.clone()),
        ];
        let features = vec![f.clone(), f.clone(), f.clone(), f];
        let mask = crate::zones::build_dbtm(&tracklets, &topo).unwrap();
        let sim = apply_mask(&raw_similarity(&features).unwrap(), &mask).unwrap();
        let mut graph = MatchGraph::new(4);
        inter_zone_cluster(&tracklets, &features, &sim.values, &mask, &topo, 0.2, &mut graph)
            .unwrap();
        let partition = inter_cam_cluster(&tracklets, &features, &mask, 0.2, &mut graph).unwrap();
        let trajectories = assign_global_ids(&tracklets, &partition, false).unwrap();
        for traj in &trajectories {
            for a in 0..traj.members.len() {
                for b in (a + 1)..traj.members.len() {
                    let ea = traj.members[a].endpoints.unwrap();
                    let eb = traj.members[b].endpoints.unwrap();
                    assert_eq!((ea.z_s, ea.z_e), (eb.z_s, eb.z_e), "directions mixed");
                }
            }
        }
    }

    #[test]
    fn no_merges_keeps_inter_zone_partition() {
        let topo = CameraTopology::new(vec![41, 42]).unwrap();
        let fa = unitv(vec![1.0, 0.0]);
        let fb = unitv(vec![0.0, 1.0]);
        let tracklets = vec![
            tracklet(41, 1, ep(4, 3, 0, 20), fa.clone()),
            tracklet(42, 1, ep(4, 3, 100, 120), fb.clone()),
        ];
        let features = vec![fa, fb];
        let mask = crate::zones::build_dbtm(&tracklets, &topo).unwrap();
        let sim = apply_mask(&raw_similarity(&features).unwrap(), &mask).unwrap();
        let mut graph = MatchGraph::new(2);
        inter_zone_cluster(&tracklets, &features, &sim.values, &mask, &topo, 0.2, &mut graph)
            .unwrap();
        let partition = inter_cam_cluster(&tracklets, &features, &mask, 0.2, &mut graph).unwrap();
        assert_eq!(partition, vec![vec![0], vec![1]]);
    }

    #[test]
    fn global_ids_are_ordered_by_start_time() {
        let f = unitv(vec![1.0, 0.0]);
        let tracklets = vec![
            tracklet(41, 1, ep(4, 3, 50, 60), f.clone()),
            tracklet(42, 1, ep(4, 3, 70, 80), f.clone()),
            tracklet(41, 2, ep(4, 3, 10, 20), f.clone()),
            tracklet(42, 2, ep(4, 3, 30, 40), f.clone()),
        ];
        let partition = vec![vec![0, 1], vec![2, 3]];
        let trajectories = assign_global_ids(&tracklets, &partition, false).unwrap();
        assert_eq!(trajectories[0].global_id, 1);
        assert_eq!(trajectories[0].start_time(), 10);
        assert_eq!(trajectories[1].global_id, 2);
        assert_eq!(trajectories[1].start_time(), 50);
    }

    #[test]
    fn single_camera_clusters_respect_flag() {
        let f = unitv(vec![1.0, 0.0]);
        let tracklets = vec![tracklet(41, 1, ep(4, 3, 0, 10), f)];
        let partition = vec![vec![0]];
        assert!(assign_global_ids(&tracklets, &partition, false).unwrap().is_empty());
        assert_eq!(assign_global_ids(&tracklets, &partition, true).unwrap().len(), 1);
    }

    #[test]
    fn merge_audit_distances_stay_below_threshold() {
        let topo = CameraTopology::new(vec![41, 42, 43]).unwrap();
        let f = unitv(vec![0.3, 0.9, 0.2]);
        let tracklets = vec![
            tracklet(41, 1, ep(4, 3, 0, 20), f.clone()),
            tracklet(42, 1, ep(4, 3, 30, 50), f.clone()),
            tracklet(43, 1, ep(4, 3, 60, 80), f.clone()),
        ];
        let features = vec![f.clone(), f.clone(), f];
        let mask = crate::zones::build_dbtm(&tracklets, &topo).unwrap();
        let sim = apply_mask(&raw_similarity(&features).unwrap(), &mask).unwrap();
        let mut graph = MatchGraph::new(3);
        inter_zone_cluster(&tracklets, &features, &sim.values, &mask, &topo, 0.2, &mut graph)
            .unwrap();
        inter_cam_cluster(&tracklets, &features, &mask, 0.2, &mut graph).unwrap();
        assert!(!graph.merges.is_empty());
        for m in &graph.merges {
            assert!(m.distance < 0.2);
        }
    }
}
