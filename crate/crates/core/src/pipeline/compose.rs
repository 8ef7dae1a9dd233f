//! Part-wise exchange of features or points between two semantic point sets.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::appearance::{idw_weights, IdwMode, DEFAULT_K};
use crate::error::{Error, Result};
use crate::geometry::KdIndex;
use crate::semantic::{PartLabel, SemanticPointSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComposeMode {
    /// Keep the host's points; take the donor's appearance for the chosen parts.
    Texture,
    /// Replace the host's points of the chosen parts with the donor's, features included.
    Points,
}

impl fmt::Display for ComposeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Texture => "texture",
            Self::Points => "points",
        })
    }
}

impl FromStr for ComposeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "texture" => Ok(Self::Texture),
            "points" => Ok(Self::Points),
            other => Err(Error::Config(format!("unknown compose mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComposeConfig {
    /// Donor neighbors averaged per host point in texture mode.
    pub k: usize,
    pub idw: IdwMode,
}

impl Default for ComposeConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            idw: IdwMode::Inverse,
        }
    }
}

/// Builds a new point set from `host` with `parts` taken from `donor`.
///
/// Routing ids of donor points are copied verbatim; callers that merge model tables
/// shift them first. Texture mode averages donor features of the same label in
/// template space and routes the affected host points to the donor's decoder.
pub fn compose(
    host: &SemanticPointSet,
    donor: &SemanticPointSet,
    parts: &[PartLabel],
    mode: ComposeMode,
    cfg: &ComposeConfig,
) -> Result<SemanticPointSet> {
    host.check()?;
    donor.check()?;
    let parts: BTreeSet<PartLabel> = parts.iter().copied().collect();
    let donor_census = donor.census();
    if let Some(p) = parts.iter().find(|p| donor_census[**p as usize] == 0) {
        return Err(Error::EmptyPart(p.name().to_string()));
    }
    if parts.is_empty() {
        return Ok(host.clone());
    }
    match mode {
        ComposeMode::Points => {
            if host.feature_dim != donor.feature_dim {
                return Err(Error::DimensionMismatch(format!(
                    "feature dims {} and {}",
                    host.feature_dim, donor.feature_dim
                )));
            }
            let keep: Vec<usize> = (0..host.len()).filter(|&i| !parts.contains(&host.labels[i])).collect();
            let take: Vec<usize> = (0..donor.len()).filter(|&i| parts.contains(&donor.labels[i])).collect();
            host.select(&keep).concat(&donor.select(&take))
        }
        ComposeMode::Texture => {
            if !host.has_features() || !donor.has_features() {
                return Err(Error::Config("texture composition needs trained features on both sets".into()));
            }
            if host.feature_dim != donor.feature_dim {
                return Err(Error::DimensionMismatch(format!(
                    "feature dims {} and {}",
                    host.feature_dim, donor.feature_dim
                )));
            }
            let mut out = host.clone();
            let dim = host.feature_dim;
            for &part in &parts {
                let rows: Vec<usize> = (0..donor.len()).filter(|&i| donor.labels[i] == part).collect();
                let positions: Vec<Vector3<f64>> = rows.iter().map(|&i| donor.positions[i]).collect();
                let index = KdIndex::new(positions);
                let k = cfg.k.min(rows.len());
                for i in (0..host.len()).filter(|&i| host.labels[i] == part) {
                    let mut f = vec![0.0; dim];
                    let mut decoder = (f64::NEG_INFINITY, 0u16);
                    for (j, w) in idw_weights(&index, &host.positions[i], k, cfg.idw)? {
                        let src = rows[j];
                        for (o, v) in f.iter_mut().zip(donor.feature(src)) {
                            *o += w * v;
                        }
                        if w > decoder.0 {
                            decoder = (w, donor.decoder_id[src]);
                        }
                    }
                    out.features[i * dim..(i + 1) * dim].copy_from_slice(&f);
                    out.decoder_id[i] = decoder.1;
                }
            }
            Ok(out)
        }
    }
}

/// Labels outside `parts`.
pub fn complement(parts: &[PartLabel]) -> Vec<PartLabel> {
    PartLabel::ALL.iter().copied().filter(|p| !parts.contains(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes::icosphere;
    use crate::semantic::{label_faces, sample_semantic, LabeledTemplateMesh};
    use crate::skeleton::SkinningWeights;

    fn labeled(radius: f64, n: usize, seed: u64, feature: f64, decoder: u16) -> SemanticPointSet {
        let mesh = icosphere(radius, 2);
        let labels: Vec<Option<PartLabel>> = mesh
            .vertices
            .iter()
            .map(|v| {
                let oct = (v.x > 0.0) as usize + 2 * (v.y > 0.0) as usize + 4 * (v.z > 0.0) as usize;
                Some(PartLabel::ALL[oct])
            })
            .collect();
        let w = SkinningWeights::one_hot(mesh.vertices.len(), 1, 0);
        let template: LabeledTemplateMesh = label_faces(&mesh, &labels, w).unwrap();
        let mut pts = sample_semantic(&template, n, seed).unwrap();
        pts.feature_dim = 2;
        pts.features = (0..pts.len()).flat_map(|i| [feature, i as f64]).collect();
        pts.decoder_id = vec![decoder; pts.len()];
        pts.model_id = vec![decoder; pts.len()];
        pts
    }

    #[test]
    fn empty_parts_and_all_parts() {
        let (a, b) = (labeled(1.0, 800, 1, 0.0, 0), labeled(1.1, 600, 2, 1.0, 1));
        for mode in [ComposeMode::Points, ComposeMode::Texture] {
            assert_eq!(compose(&a, &b, &[], mode, &ComposeConfig::default()).unwrap(), a);
        }
        let all = compose(&a, &b, &PartLabel::ALL, ComposeMode::Points, &ComposeConfig::default()).unwrap();
        assert_eq!(all.len(), b.len());
        assert_eq!(all.census(), b.census());
        let mut x: Vec<_> = all.features.chunks(2).map(|c| (c[1] as i64, c[0] as i64)).collect();
        let mut y: Vec<_> = b.features.chunks(2).map(|c| (c[1] as i64, c[0] as i64)).collect();
        x.sort();
        y.sort();
        assert_eq!(x, y);
    }

    #[test]
    fn census_is_exact_and_complementary() {
        let (a, b) = (labeled(1.0, 900, 3, 0.0, 0), labeled(1.1, 700, 4, 1.0, 1));
        let parts = [PartLabel::LeftLeg, PartLabel::RightLeg];
        let ab = compose(&a, &b, &parts, ComposeMode::Points, &ComposeConfig::default()).unwrap();
        let ba = compose(&b, &a, &complement(&parts), ComposeMode::Points, &ComposeConfig::default()).unwrap();
        let (ca, cb) = (a.census(), b.census());
        for l in PartLabel::ALL {
            let i = l as usize;
            let expected = if parts.contains(&l) { cb[i] } else { ca[i] };
            assert_eq!(ab.census()[i], expected, "{l}");
            assert_eq!(ba.census()[i], expected, "{l}");
        }
        for (i, l) in ab.labels.iter().enumerate() {
            assert_eq!(ab.model_id[i], parts.contains(l) as u16);
        }
    }

    #[test]
    fn texture_mode_keeps_geometry_and_labels() {
        let (a, b) = (labeled(1.0, 900, 5, 0.0, 0), labeled(1.0, 700, 6, 1.0, 3));
        let parts = [PartLabel::Head];
        let t = compose(&a, &b, &parts, ComposeMode::Texture, &ComposeConfig::default()).unwrap();
        assert_eq!(t.positions, a.positions);
        assert_eq!(t.labels, a.labels);
        assert_eq!(t.model_id, a.model_id);
        for i in 0..t.len() {
            if a.labels[i] == PartLabel::Head {
                assert!((t.feature(i)[0] - 1.0).abs() < 1e-12);
                assert_eq!(t.decoder_id[i], 3);
            } else {
                assert_eq!(t.feature(i), a.feature(i));
                assert_eq!(t.decoder_id[i], 0);
            }
        }
    }

    #[test]
    fn missing_donor_part_is_an_error() {
        let a = labeled(1.0, 300, 7, 0.0, 0);
        let mut b = labeled(1.0, 300, 8, 1.0, 1);
        let keep: Vec<usize> = (0..b.len()).filter(|&i| b.labels[i] != PartLabel::LeftHand).collect();
        b = b.select(&keep);
        let err = compose(&a, &b, &[PartLabel::LeftHand], ComposeMode::Points, &ComposeConfig::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyPart(ref p) if p == "left_hand"), "{err}");
        assert_eq!("points".parse::<ComposeMode>().unwrap(), ComposeMode::Points);
        assert!("both".parse::<ComposeMode>().is_err());
    }
}
