//! Lifting per-view instance ID maps onto Gaussians by majority vote.
//!
//! A Gaussian votes in every view whose frustum contains its mean, reading
//! the ID at the nearest pixel; there is no occlusion test. Background (0)
//! is a candidate like any object and ties go to the smallest id.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::{Camera, GaussianCloud, IdMap, NEAR_PLANE};
use nalgebra::Vector3;

/// Per-view ID maps aligned with the training cameras.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelSet {
    pub maps: Vec<IdMap>,
    pub object_count: u32,
}

impl PseudoLabelSet {
    pub fn new(maps: Vec<IdMap>, object_count: u32) -> Result<Self> {
        for (v, m) in maps.iter().enumerate() {
            if let Some(&bad) = m.data.iter().find(|&&id| id > object_count) {
                return Err(Error::invalid(format!(
                    "view {v}: id {bad} exceeds object count {object_count}"
                )));
            }
        }
        Ok(Self { maps, object_count })
    }

    /// Checks one map per camera at matching resolution.
    pub fn check_cameras(&self, cameras: &[Camera]) -> Result<()> {
        if self.maps.len() != cameras.len() {
            return Err(Error::shape(format!(
                "{} ID maps for {} cameras",
                self.maps.len(),
                cameras.len()
            )));
        }
        for (v, (m, c)) in self.maps.iter().zip(cameras).enumerate() {
            if m.width != c.width || m.height != c.height {
                return Err(Error::shape(format!(
                    "view {v}: ID map is {}x{}, camera is {}x{}",
                    m.width, m.height, c.width, c.height
                )));
            }
        }
        Ok(())
    }
}

/// Votes received by one Gaussian.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoteTally {
    /// Histogram over ids `0..=C`.
    pub counts: Vec<u32>,
    /// Views in which the Gaussian's mean is visible.
    pub visible_views: Vec<usize>,
}

impl VoteTally {
    /// Most frequent id, smallest on ties; 0 when never visible.
    pub fn winner(&self) -> u32 {
        let mut best = 0;
        for (id, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = id;
            }
        }
        best as u32
    }
}

/// ID at the nearest pixel to the projection of `mu`, or `None` if the
/// point is not in front of the near plane or projects outside the image.
pub fn project_and_read(mu: &Vector3<f64>, cam: &Camera, id_map: &IdMap) -> Option<u32> {
    let t = cam.to_camera(mu);
    if t.z <= NEAR_PLANE {
        return None;
    }
    let p = cam.project_camera_point(&t);
    let (x, y) = (p.x.round(), p.y.round());
    if !(x >= 0.0 && y >= 0.0 && x < cam.width as f64 && y < cam.height as f64) {
        return None;
    }
    Some(id_map.get(x as u32, y as u32))
}

/// Vote histograms of every Gaussian.
pub fn vote_tallies(cloud: &GaussianCloud, cameras: &[Camera], labels: &PseudoLabelSet) -> Result<Vec<VoteTally>> {
    if cameras.is_empty() {
        return Err(Error::invalid("majority vote needs at least one view"));
    }
    labels.check_cameras(cameras)?;
    let slots = labels.object_count as usize + 1;
    Ok(cloud
        .positions
        .par_iter()
        .map(|mu| {
            let mut tally = VoteTally {
                counts: vec![0; slots],
                visible_views: Vec::new(),
            };
            for (v, (cam, map)) in cameras.iter().zip(&labels.maps).enumerate() {
                if let Some(id) = project_and_read(mu, cam, map) {
                    tally.counts[id as usize] += 1;
                    tally.visible_views.push(v);
                }
            }
            tally
        })
        .collect())
}

/// One label per Gaussian: the most frequent id over its visible views.
pub fn majority_vote(cloud: &GaussianCloud, cameras: &[Camera], labels: &PseudoLabelSet) -> Result<Vec<u32>> {
    Ok(vote_tallies(cloud, cameras, labels)?.iter().map(VoteTally::winner).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    fn cam() -> Camera {
        Camera::new(Matrix3::identity(), Vector3::zeros(), (10.0, 10.0), (4.0, 3.0), (9, 7)).unwrap()
    }

    #[test]
    fn on_axis_reads_principal_pixel() {
        let mut map = IdMap::new(9, 7);
        map.set(4, 3, 5);
        assert_eq!(project_and_read(&Vector3::new(0.0, 0.0, 1.0), &cam(), &map), Some(5));
        assert_eq!(project_and_read(&Vector3::new(0.0, 0.0, -1.0), &cam(), &map), None);
        assert_eq!(project_and_read(&Vector3::new(5.0, 0.0, 1.0), &cam(), &map), None);
    }

    #[test]
    fn winner_rules() {
        let t = |counts: Vec<u32>| VoteTally {
            counts,
            visible_views: vec![],
        };
        assert_eq!(t(vec![1, 0, 2]).winner(), 2);
        assert_eq!(t(vec![0, 1, 1]).winner(), 1);
        assert_eq!(t(vec![1, 1, 0]).winner(), 0);
        assert_eq!(t(vec![0, 0, 0]).winner(), 0);
    }
}
