use crate::error::{Error, Result};

/// Grid cell → the PFT rows and soil-column rows that belong to it, each list
/// in source order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvertedMapping {
    pub pfts: Vec<Vec<usize>>,
    pub columns: Vec<Vec<usize>>,
}

impl InvertedMapping {
    /// `pft_gridcell[i]` is the owning grid cell of PFT row `i`; likewise for columns.
    pub fn build(n_gridcells: usize, pft_gridcell: &[usize], column_gridcell: &[usize]) -> Result<Self> {
        let invert = |owners: &[usize], what: &str| -> Result<Vec<Vec<usize>>> {
            let mut lists = vec![Vec::new(); n_gridcells];
            for (row, &g) in owners.iter().enumerate() {
                let list = lists
                    .get_mut(g)
                    .ok_or_else(|| Error::Contract(format!("{what} row {row} names grid cell {g} of {n_gridcells}")))?;
                list.push(row);
            }
            Ok(lists)
        };
        Ok(Self {
            pfts: invert(pft_gridcell, "pft")?,
            columns: invert(column_gridcell, "column")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_row_lands_under_one_cell_in_order() {
        let pft = [1, 0, 1, 2, 0];
        let col = [2, 2, 0];
        let m = InvertedMapping::build(3, &pft, &col).unwrap();
        assert_eq!(m.pfts, vec![vec![1, 4], vec![0, 2], vec![3]]);
        assert_eq!(m.columns, vec![vec![2], vec![], vec![0, 1]]);
        assert!(InvertedMapping::build(2, &pft, &col).is_err());
    }
}
