//! Top-M selection over the importance map, focused-pass frame ordering, and
//! collation layouts.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::GridError;
use crate::importance::ImportanceMap;
use crate::probe::Resolution;

/// Default collation canvas.
pub const DEFAULT_CANVAS: Resolution = Resolution::square(2048);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectedCell {
    pub row: usize,
    pub col: usize,
    pub pool_index: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameOrder {
    /// Ascending pool index, i.e. timeline order.
    #[default]
    Temporal,
    /// Descending map value.
    Importance,
}

impl fmt::Display for FrameOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrameOrder::Temporal => "temporal",
            FrameOrder::Importance => "importance",
        })
    }
}

impl FromStr for FrameOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "temporal" => Ok(FrameOrder::Temporal),
            "importance" => Ok(FrameOrder::Importance),
            other => Err(format!("unknown frame order {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilingPlan {
    pub side: usize,
    pub canvas: Resolution,
    pub slot: Resolution,
    /// Row-major slot contents (pool indices); `None` is a black slot.
    pub slots: Vec<Option<usize>>,
}

impl TilingPlan {
    pub fn occupied(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn empty(&self) -> usize {
        self.slots.len() - self.occupied()
    }

    /// Fills slots row-major with `ordered`; extra frames beyond the slot
    /// count are ignored.
    pub fn with_frames(mut self, ordered: &[usize]) -> Self {
        for (slot, &idx) in self.slots.iter_mut().zip(ordered) {
            *slot = Some(idx);
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub m_eff: usize,
    /// Selected cells in descending map value.
    pub cells: Vec<SelectedCell>,
    pub ordering: FrameOrder,
    /// Pool indices in the order the focused pass receives them.
    pub frame_order: Vec<usize>,
    pub collation: Option<TilingPlan>,
}

impl SelectionPlan {
    pub fn new(
        cells: Vec<SelectedCell>,
        ordering: FrameOrder,
        collation_canvas: Option<Resolution>,
    ) -> Self {
        let frame_order = order_frames(&cells, ordering);
        let collation = collation_canvas
            .map(|canvas| collate_layout(cells.len(), canvas).with_frames(&frame_order));
        Self {
            m_eff: cells.len(),
            cells,
            ordering,
            frame_order,
            collation,
        }
    }
}

fn by_value_then_index(a: &SelectedCell, b: &SelectedCell) -> Ordering {
    b.value
        .total_cmp(&a.value)
        .then(a.pool_index.cmp(&b.pool_index))
}

/// The `m` highest-valued cells, ties to the lower pool index, listed in
/// descending value.
pub fn select_top(map: &ImportanceMap, m: usize) -> Result<Vec<SelectedCell>, GridError> {
    let k = map.k();
    if m == 0 || m > k * k {
        return Err(GridError::Budget { m, max: k * k });
    }
    let mut cells: Vec<SelectedCell> = (0..k * k)
        .map(|i| SelectedCell {
            row: i / k,
            col: i % k,
            pool_index: i,
            value: map.get(i / k, i % k),
        })
        .collect();
    cells.sort_by(by_value_then_index);
    cells.truncate(m);
    Ok(cells)
}

pub fn order_frames(cells: &[SelectedCell], mode: FrameOrder) -> Vec<usize> {
    match mode {
        FrameOrder::Temporal => {
            let mut idx: Vec<usize> = cells.iter().map(|c| c.pool_index).collect();
            idx.sort_unstable();
            idx
        }
        FrameOrder::Importance => {
            let mut sorted = cells.to_vec();
            sorted.sort_by(by_value_then_index);
            sorted.iter().map(|c| c.pool_index).collect()
        }
    }
}

/// `ceil(sqrt(m))` square layout of equal slots on `canvas`, all empty.
pub fn collate_layout(m: usize, canvas: Resolution) -> TilingPlan {
    let m = m.max(1);
    let mut side = (m as f64).sqrt().ceil() as usize;
    while side * side < m {
        side += 1;
    }
    while side > 1 && (side - 1) * (side - 1) >= m {
        side -= 1;
    }
    TilingPlan {
        side,
        canvas,
        slot: Resolution::new(canvas.width / side as u32, canvas.height / side as u32),
        slots: vec![None; side * side],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn example_map() -> ImportanceMap {
        ImportanceMap::build(&[0.9, 0.25], &[0.5, 1.0]).unwrap()
    }

    fn ids(cells: &[SelectedCell]) -> Vec<usize> {
        cells.iter().map(|c| c.pool_index).collect()
    }

    #[test]
    fn select_examples() {
        let top = select_top(&example_map(), 2).unwrap();
        assert_eq!((top[0].row, top[0].col), (0, 1));
        assert_eq!((top[1].row, top[1].col), (0, 0));

        let flat = ImportanceMap::build(&[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert_eq!(ids(&select_top(&flat, 3).unwrap()), vec![0, 1, 2]);

        assert_eq!(select_top(&example_map(), 4).unwrap().len(), 4);
        assert!(select_top(&example_map(), 0).is_err());
        assert!(select_top(&example_map(), 5).is_err());
    }

    #[test]
    fn ordering_examples() {
        let top = select_top(&example_map(), 2).unwrap();
        assert_eq!(order_frames(&top, FrameOrder::Temporal), vec![0, 1]);
        assert_eq!(order_frames(&top, FrameOrder::Importance), vec![1, 0]);
        let single = &top[..1];
        assert_eq!(order_frames(single, FrameOrder::Temporal), vec![1]);
        assert_eq!(order_frames(single, FrameOrder::Importance), vec![1]);
    }

    #[test]
    fn layout_examples() {
        let five = collate_layout(5, DEFAULT_CANVAS);
        assert_eq!(five.side, 3);
        assert_eq!(five.slots.len(), 9);
        let five = five.with_frames(&[10, 11, 12, 13, 14]);
        assert_eq!(five.empty(), 4);
        assert_eq!(five.slots[4], Some(14));
        assert_eq!(five.slots[5], None);
        assert_eq!(five.slot, Resolution::square(682));

        let four = collate_layout(4, DEFAULT_CANVAS).with_frames(&[0, 1, 2, 3]);
        assert_eq!((four.side, four.empty()), (2, 0));
        let one = collate_layout(1, DEFAULT_CANVAS);
        assert_eq!((one.side, one.slot), (1, DEFAULT_CANVAS));
    }

    #[test]
    fn plan_fills_collation_in_focus_order() {
        let top = select_top(&example_map(), 3).unwrap();
        let plan = SelectionPlan::new(top, FrameOrder::Importance, Some(DEFAULT_CANVAS));
        assert_eq!(plan.frame_order, vec![1, 0, 3]);
        let tiles = plan.collation.unwrap();
        assert_eq!(tiles.slots, vec![Some(1), Some(0), Some(3), None]);
    }

    proptest! {
        #[test]
        fn full_selection_in_temporal_order_is_the_pool(
            conf in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 2..9)
        ) {
            let (rows, cols): (Vec<f64>, Vec<f64>) = conf.into_iter().unzip();
            let map = ImportanceMap::build(&rows, &cols).unwrap();
            let n = map.k() * map.k();
            let all = select_top(&map, n).unwrap();
            prop_assert_eq!(order_frames(&all, FrameOrder::Temporal), (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn smaller_budgets_are_prefixes(
            conf in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 2..9),
            a in 1usize..64, b in 1usize..64,
        ) {
            let (rows, cols): (Vec<f64>, Vec<f64>) = conf.into_iter().unzip();
            let map = ImportanceMap::build(&rows, &cols).unwrap();
            let n = map.k() * map.k();
            let (lo, hi) = (a.min(b).min(n), a.max(b).min(n));
            let small = select_top(&map, lo).unwrap();
            let big = select_top(&map, hi).unwrap();
            prop_assert_eq!(&big[..lo], &small[..]);
            prop_assert_eq!(select_top(&map, hi).unwrap(), big);
        }

        #[test]
        fn layout_fits(m in 1usize..2000) {
            let plan = collate_layout(m, DEFAULT_CANVAS);
            prop_assert!(plan.side * plan.side >= m);
            prop_assert!((plan.side - 1) * (plan.side - 1) < m);
        }
    }
}
