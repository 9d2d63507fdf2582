//! Minority-class padding with flip and quarter-turn variants.

use super::{DataError, DatasetIndex, Label, LabeledPatch};
use crate::tensor::Tensor;

/// The eight symmetries of a square. `Transpose` and `AntiTranspose` are
/// the flips about the diagonals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dihedral {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    FlipH,
    FlipV,
    Transpose,
    AntiTranspose,
}

impl Dihedral {
    pub const ALL: [Dihedral; 8] = [
        Dihedral::Identity,
        Dihedral::Rot90,
        Dihedral::Rot180,
        Dihedral::Rot270,
        Dihedral::FlipH,
        Dihedral::FlipV,
        Dihedral::Transpose,
        Dihedral::AntiTranspose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dihedral::Identity => "id",
            Dihedral::Rot90 => "rot90",
            Dihedral::Rot180 => "rot180",
            Dihedral::Rot270 => "rot270",
            Dihedral::FlipH => "fliph",
            Dihedral::FlipV => "flipv",
            Dihedral::Transpose => "transpose",
            Dihedral::AntiTranspose => "antitranspose",
        }
    }

    pub fn inverse(self) -> Dihedral {
        match self {
            Dihedral::Rot90 => Dihedral::Rot270,
            Dihedral::Rot270 => Dihedral::Rot90,
            other => other,
        }
    }

    /// Source coordinates of output pixel `(y, x)` in an `n × n` image.
    fn source(self, y: usize, x: usize, n: usize) -> (usize, usize) {
        let last = n - 1;
        match self {
            Dihedral::Identity => (y, x),
            // quarter turn clockwise
            Dihedral::Rot90 => (last - x, y),
            Dihedral::Rot180 => (last - y, last - x),
            Dihedral::Rot270 => (x, last - y),
            Dihedral::FlipH => (y, last - x),
            Dihedral::FlipV => (last - y, x),
            Dihedral::Transpose => (x, y),
            Dihedral::AntiTranspose => (last - x, last - y),
        }
    }

    /// Applies the symmetry to a square `n × n × C` image.
    pub fn apply(self, img: &Tensor) -> Tensor {
        let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
        assert_eq!(h, w, "dihedral transforms need a square image");
        let src = img.data();
        let mut out = Vec::with_capacity(src.len());
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = self.source(y, x, h);
                let at = (sy * w + sx) * c;
                out.extend_from_slice(&src[at..at + c]);
            }
        }
        Tensor::new(img.shape(), out).expect("same shape")
    }
}

/// Pads every class below `target` with dihedral variants of its original
/// members, cycling variant-major so sources are used evenly. Classes at or
/// above the target are left alone.
pub fn balance_minority(index: &DatasetIndex, target: usize) -> Result<DatasetIndex, DataError> {
    let mut out = DatasetIndex {
        skipped: index.skipped.clone(),
        ..DatasetIndex::default()
    };
    for label in Label::ALL {
        let members = index.class(label);
        for p in members {
            out.push(p.clone());
        }
        if members.len() >= target {
            continue;
        }
        let sources: Vec<&LabeledPatch> = members.iter().filter(|p| p.derivation.is_none()).collect();
        let max = members.len() + sources.len() * (Dihedral::ALL.len() - 1);
        if max < target {
            return Err(DataError::Unreachable { label, target, max });
        }
        let need = target - members.len();
        let variants = Dihedral::ALL[1..]
            .iter()
            .flat_map(|&d| sources.iter().map(move |s| (d, *s)))
            .take(need);
        for (d, s) in variants {
            out.push(LabeledPatch {
                pixels: d.apply(&s.pixels),
                label,
                source_id: s.source_id.clone(),
                derivation: Some(d),
            });
        }
    }
    Ok(out)
}
