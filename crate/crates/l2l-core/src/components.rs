//! Connected-component labeling and the keep-largest-component refinement
//! pass that removes detached artifacts from generated skeletons and leaves.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Foreground connectivity for component labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
            Connectivity::Eight => &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ],
        }
    }
}

/// Result of labeling: 0 is background, components are numbered 1..=count in
/// raster-scan order of their first pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabeling {
    pub labels: Array2<u32>,
    pub component_count: usize,
    pub areas: Vec<usize>,
}

impl ComponentLabeling {
    /// Label of the largest-area component (ties broken by lowest label,
    /// i.e. earliest first pixel in raster order). `None` on empty masks.
    pub fn largest(&self) -> Option<u32> {
        self.areas
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.cmp(b).then(ib.cmp(ia)))
            .map(|(i, _)| i as u32 + 1)
    }
}

/// Label connected foreground components with an explicit-stack flood fill.
pub fn label_components(mask: &Array2<u8>, connectivity: Connectivity) -> ComponentLabeling {
    let (h, w) = mask.dim();
    let mut labels = Array2::<u32>::zeros((h, w));
    let mut areas = Vec::new();
    let mut stack = Vec::new();
    let mut next = 0u32;
    for y in 0..h {
        for x in 0..w {
            if mask[[y, x]] != 1 || labels[[y, x]] != 0 {
                continue;
            }
            next += 1;
            let mut area = 0usize;
            stack.push((y, x));
            labels[[y, x]] = next;
            while let Some((cy, cx)) = stack.pop() {
                area += 1;
                for &(dy, dx) in connectivity.offsets() {
                    let ny = cy as isize + dy;
                    let nx = cx as isize + dx;
                    if ny < 0 || ny >= h as isize || nx < 0 || nx >= w as isize {
                        continue;
                    }
                    let (ny, nx) = (ny as usize, nx as usize);
                    if mask[[ny, nx]] == 1 && labels[[ny, nx]] == 0 {
                        labels[[ny, nx]] = next;
                        stack.push((ny, nx));
                    }
                }
            }
            areas.push(area);
        }
    }
    ComponentLabeling {
        labels,
        component_count: next as usize,
        areas,
    }
}

/// Keep the largest foreground component (8-connectivity) and discard every
/// other one. Background pixels are never touched, so holes enclosed by the
/// kept component stay exactly as they were.
pub fn refine(mask: &Array2<u8>) -> Result<Array2<u8>> {
    let labeling = label_components(mask, Connectivity::Eight);
    let keep = labeling.largest().ok_or(Error::EmptyMask)?;
    Ok(labeling.labels.mapv(|l| (l == keep) as u8))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn empty_mask_has_no_components() {
        let m = Array2::<u8>::zeros((4, 4));
        let l = label_components(&m, Connectivity::Eight);
        assert_eq!(l.component_count, 0);
        assert!(l.areas.is_empty());
        assert!(refine(&m).is_err());
    }

    #[test]
    fn diagonal_pixels_connectivity_semantics() {
        let m = array![[1u8, 0], [0, 1]];
        assert_eq!(label_components(&m, Connectivity::Eight).component_count, 1);
        assert_eq!(label_components(&m, Connectivity::Four).component_count, 2);
    }

    #[test]
    fn areas_sum_to_foreground() {
        let m = array![[1u8, 1, 0], [0, 0, 0], [0, 1, 1]];
        let l = label_components(&m, Connectivity::Four);
        assert_eq!(l.areas.iter().sum::<usize>(), 4);
        assert_eq!(l.component_count, 2);
    }

    #[test]
    fn refine_keeps_largest_and_preserves_holes() {
        // Annulus (block with a hole) plus a distant speck.
        let mut m = Array2::<u8>::zeros((9, 9));
        for y in 1..6 {
            for x in 1..6 {
                m[[y, x]] = 1;
            }
        }
        m[[3, 3]] = 0; // hole
        m[[8, 8]] = 1; // speck
        let r = refine(&m).unwrap();
        assert_eq!(r[[8, 8]], 0);
        assert_eq!(r[[3, 3]], 0, "hole must stay background");
        for y in 1..6 {
            for x in 1..6 {
                if (y, x) != (3, 3) {
                    assert_eq!(r[[y, x]], 1);
                }
            }
        }
    }

    #[test]
    fn refine_single_component_is_identity() {
        let m = array![[0u8, 1, 0], [1, 1, 1], [0, 1, 0]];
        assert_eq!(refine(&m).unwrap(), m);
    }

    #[test]
    fn largest_tie_breaks_by_first_pixel() {
        let m = array![[1u8, 0, 0], [0, 0, 0], [0, 0, 1]];
        let l = label_components(&m, Connectivity::Eight);
        assert_eq!(l.largest(), Some(1));
    }
}
