//! Matching a protected set against the column templates.
//!
//! For an alignment axis j and orientations ε_i ∈ {±1} (i ≠ j) the canonical
//! set is {x ∈ B_t : x_i ∈ {0, ε_i} for all i ≠ j}. A semi-canonical set
//! swaps the two extreme points ±t e_j for v⁺ ∈ V_j⁺(t) and v⁻ ∈ V_j⁻(t),
//! where V_j^±(t) = {±t e_j} ∪ {±(t − 1) e_j − ε_i e_i : i ≠ j}.

use std::sync::Arc;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use super::{Certificate, ExtremalError};
use crate::dynamics::{protected_mask, InfectionState, Topology};
use crate::lattice::{BallIndex, Site};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classification {
    /// `orientation[axis]` is 0; the other entries are the ε_i.
    Canonical { axis: usize, orientation: Vec<i64> },
    SemiCanonical {
        axis: usize,
        orientation: Vec<i64>,
        v_plus: Site,
        v_minus: Site,
    },
    Other,
}

impl Classification {
    pub fn is_semi_canonical(&self) -> bool {
        !matches!(self, Classification::Other)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Classification::Canonical { .. } => "canonical",
            Classification::SemiCanonical { .. } => "semi_canonical",
            Classification::Other => "other",
        }
    }
}

/// Classifies the protected set of a certificate (computed under the
/// certificate's own rule).
pub fn classify(cert: &Certificate) -> Result<Classification, ExtremalError> {
    let topology = Topology::ball(cert.d, cert.t)?;
    let state = InfectionState::with_uninfected_sites(Arc::clone(&topology), &cert.uninfected)?;
    let protected = protected_mask(&state, cert.rule)?;
    Ok(classify_protected(
        topology.ball_index().expect("ball"),
        &protected,
    ))
}

struct Template {
    axis: usize,
    orientation: Vec<i64>,
    mask: FixedBitSet,
}

fn templates(ball: &BallIndex) -> Vec<Template> {
    let d = ball.dim();
    let mut out = Vec::new();
    for axis in 0..d {
        for signs in 0u32..(1 << (d - 1)) {
            let mut orientation = vec![0i64; d];
            let mut bit = 0;
            for (i, o) in orientation.iter_mut().enumerate() {
                if i != axis {
                    *o = if signs >> bit & 1 == 1 { -1 } else { 1 };
                    bit += 1;
                }
            }
            let mut mask = FixedBitSet::with_capacity(ball.len());
            for (idx, x) in ball.sites().iter().enumerate() {
                let inside = (0..d).all(|i| i == axis || x.0[i] == 0 || x.0[i] == orientation[i]);
                mask.set(idx, inside);
            }
            out.push(Template {
                axis,
                orientation,
                mask,
            });
        }
    }
    out
}

fn extreme_points(t: i64, axis: usize, orientation: &[i64], sign: i64) -> Vec<Site> {
    let d = orientation.len();
    let mut pts = vec![Site::unit(d, axis, sign * t)];
    for i in (0..d).filter(|&i| i != axis) {
        let mut c = vec![0; d];
        c[axis] = sign * (t - 1);
        c[i] = -orientation[i];
        pts.push(Site(c));
    }
    pts
}

/// Classifies a protected set given as a mask over ball indices.
pub fn classify_protected(ball: &BallIndex, protected: &FixedBitSet) -> Classification {
    let all = templates(ball);
    if let Some(tpl) = all.iter().find(|tpl| tpl.mask == *protected) {
        return Classification::Canonical {
            axis: tpl.axis,
            orientation: tpl.orientation.clone(),
        };
    }
    let t = ball.radius() as i64;
    if t == 0 {
        return Classification::Other;
    }
    for tpl in &all {
        let top = ball.index_of(&Site::unit(ball.dim(), tpl.axis, t)).expect("in ball");
        let bottom = ball.index_of(&Site::unit(ball.dim(), tpl.axis, -t)).expect("in ball");
        let mut trimmed = tpl.mask.clone();
        trimmed.set(top, false);
        trimmed.set(bottom, false);
        for v_plus in extreme_points(t, tpl.axis, &tpl.orientation, 1) {
            for v_minus in extreme_points(t, tpl.axis, &tpl.orientation, -1) {
                let mut candidate = trimmed.clone();
                candidate.insert(ball.index_of(&v_plus).expect("norm t"));
                candidate.insert(ball.index_of(&v_minus).expect("norm t"));
                if candidate == *protected {
                    return Classification::SemiCanonical {
                        axis: tpl.axis,
                        orientation: tpl.orientation.clone(),
                        v_plus,
                        v_minus,
                    };
                }
            }
        }
    }
    Classification::Other
}
