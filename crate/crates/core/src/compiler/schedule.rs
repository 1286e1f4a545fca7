//! Symbolic single-plane schedules for the zero-free dataflow.
//!
//! A schedule is a set of product lists, one per (logical or physical) PE.
//! Nothing here touches data values: products reference operand positions
//! and the output coordinate they accumulate into.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output coordinate a product contributes to, within one output plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Label {
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolicProduct {
    /// Broadcast operand: filter element `u*K + v` for transposed schedules,
    /// error element `a*We + b` for dilated ones.
    pub w_index: usize,
    /// Multicast operand: error element `a*We + b` (transposed) or ifmap
    /// element `y*W + x` (dilated).
    pub e_index: usize,
    pub label: Option<Label>,
    /// Execution step; products of one PE run in increasing order.
    pub order: usize,
    /// Logical PE this product was generated for, as `(row, col)`.
    pub origin: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleKind {
    Transposed,
    Dilated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleMatrix {
    pub kind: ScheduleKind,
    pub k: usize,
    pub stride: usize,
    /// Error plane dims `(He, We)`.
    pub error_dims: (usize, usize),
    /// Ifmap plane dims, dilated schedules only.
    pub ifmap_dims: (usize, usize),
    pub pe_rows: usize,
    pub pe_cols: usize,
    /// One product list per PE, row-major over `pe_rows x pe_cols`.
    pub columns: Vec<Vec<SymbolicProduct>>,
    /// Logical rows and columns folded onto one PE.
    pub group_factor: (usize, usize),
    pub expansion_factor: usize,
    /// Steps per schedule period before grouping interleave.
    pub steps: usize,
}

impl ScheduleMatrix {
    pub fn product_count(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    pub fn pe(&self, row: usize, col: usize) -> &[SymbolicProduct] {
        &self.columns[row * self.pe_cols + col]
    }

    /// Group factor as a single serialization count.
    pub fn fold(&self) -> usize {
        self.group_factor.0 * self.group_factor.1
    }

    /// Weight-broadcast order: element `(u, v)` of the broadcast operand per step.
    pub fn broadcast_order(&self) -> Vec<(usize, usize)> {
        match self.kind {
            ScheduleKind::Transposed => (0..self.k * self.k).map(|w| (w % self.k, w / self.k)).collect(),
            ScheduleKind::Dilated => {
                let (_, we) = self.error_dims;
                (0..self.error_dims.0 * we).map(|i| (i / we, i % we)).collect()
            }
        }
    }
}

/// Filter-by-error outer product: column `a*We + b` holds `w[u][v] e[a][b]`
/// for every filter element in broadcast order `w_idx = u + K*v`.
pub fn symbolic_outer_product(k: usize, error_dims: (usize, usize)) -> Result<ScheduleMatrix> {
    let (he, we) = error_dims;
    if k == 0 || he == 0 || we == 0 {
        return Err(Error::Shape(format!("outer product of a {k}x{k} filter and {he}x{we} errors")));
    }
    let columns = (0..he * we)
        .map(|e| {
            (0..k * k)
                .map(|w_idx| {
                    let (u, v) = (w_idx % k, w_idx / k);
                    SymbolicProduct {
                        w_index: u * k + v,
                        e_index: e,
                        label: None,
                        order: w_idx,
                        origin: (e / we, e % we),
                    }
                })
                .collect()
        })
        .collect();
    Ok(ScheduleMatrix {
        kind: ScheduleKind::Transposed,
        k,
        stride: 1,
        error_dims,
        ifmap_dims: (0, 0),
        pe_rows: 1,
        pe_cols: he * we,
        columns,
        group_factor: (1, 1),
        expansion_factor: 1,
        steps: k * k,
    })
}

/// Tag every product with the output coordinate `(S a + u, S b + v)`.
pub fn label_products(mut m: ScheduleMatrix, stride: usize) -> Result<ScheduleMatrix> {
    if stride == 0 {
        return Err(Error::Layer("stride must be >= 1".into()));
    }
    let (_, we) = m.error_dims;
    let k = m.k;
    m.stride = stride;
    for col in &mut m.columns {
        for p in col.iter_mut() {
            let (a, b) = (p.e_index / we, p.e_index % we);
            let (u, v) = (p.w_index / k, p.w_index % k);
            p.label = Some(Label {
                row: stride * a + u,
                col: stride * b + v,
            });
        }
    }
    Ok(m)
}

/// Number of products hitting each output coordinate, row-major over the
/// output plane. Entries of 1 are written directly without accumulation.
pub fn label_multiplicity(m: &ScheduleMatrix) -> (usize, usize, Vec<usize>) {
    let (he, we) = m.error_dims;
    let (oh, ow) = match m.kind {
        ScheduleKind::Transposed => (m.stride * (he - 1) + m.k, m.stride * (we - 1) + m.k),
        ScheduleKind::Dilated => (m.k, m.k),
    };
    let mut count = vec![0usize; oh * ow];
    for p in m.columns.iter().flatten() {
        if let Some(l) = p.label {
            count[l.row * ow + l.col] += 1;
        }
    }
    (oh, ow, count)
}

/// Lay the error columns out as an `He x We` PE grid, row by row.
pub fn assign_columns(mut m: ScheduleMatrix, rows: usize, cols: usize) -> Result<ScheduleMatrix> {
    let (he, we) = m.error_dims;
    if he > rows || we > cols {
        return Err(Error::Resource {
            resource: "PE array".into(),
            required: he * we,
            available: rows.min(he) * cols.min(we),
        });
    }
    m.pe_rows = he;
    m.pe_cols = we;
    Ok(m)
}

/// Move the product at step `w_idx` of PE `(a, b)` to PE
/// `(a, (b + w_idx / (W_x S)) mod We)`.
pub fn circular_shift(mut m: ScheduleMatrix, w_x: usize, stride: usize) -> ScheduleMatrix {
    let (rows, cols) = (m.pe_rows, m.pe_cols);
    let mut out: Vec<Vec<SymbolicProduct>> = vec![Vec::new(); rows * cols];
    for (idx, col) in m.columns.iter().enumerate() {
        let (a, b) = (idx / cols, idx % cols);
        for p in col {
            let shift = p.order / (w_x * stride);
            let nb = (b + shift) % cols;
            out[a * cols + nb].push(*p);
        }
    }
    for col in &mut out {
        col.sort_by_key(|p| (p.order, p.origin));
    }
    m.columns = out;
    m
}

/// Folding factors `(gr, gc)` so an `rows x cols` logical grid fits the array.
pub fn group_factors(rows: usize, cols: usize, max_rows: usize, max_cols: usize) -> (usize, usize) {
    (rows.div_ceil(max_rows).max(1), cols.div_ceil(max_cols).max(1))
}

/// Fold blocks of `gr x gc` logical PEs onto one physical PE. Each step runs
/// the folded PEs round-robin, so one broadcast serves all of them.
pub fn apply_grouping(mut m: ScheduleMatrix, max_rows: usize, max_cols: usize) -> ScheduleMatrix {
    let (gr, gc) = group_factors(m.pe_rows, m.pe_cols, max_rows, max_cols);
    if (gr, gc) == (1, 1) {
        return m;
    }
    let (rows, cols) = (m.pe_rows.div_ceil(gr), m.pe_cols.div_ceil(gc));
    let g = gr * gc;
    let mut out: Vec<Vec<SymbolicProduct>> = vec![Vec::new(); rows * cols];
    for (idx, col) in m.columns.iter().enumerate() {
        let (a, b) = (idx / m.pe_cols, idx % m.pe_cols);
        let slot = (a % gr) * gc + b % gc;
        for p in col {
            let mut p = *p;
            p.order = p.order * g + slot;
            out[(a / gr) * cols + b / gc].push(p);
        }
    }
    for col in &mut out {
        col.sort_by_key(|p| p.order);
    }
    m.columns = out;
    m.pe_rows = rows;
    m.pe_cols = cols;
    m.group_factor = (gr, gc);
    m
}

/// Symbolic filter-gradient convolution: PE `(u, v)` owns gradient `(u, v)`
/// and multiplies `in[S a + u][S b + v]` by the broadcast error `e[a][b]`.
/// Products whose ifmap position falls outside the ifmap are not generated.
pub fn symbolic_dilated(k: usize, stride: usize, error_dims: (usize, usize), ifmap_dims: (usize, usize)) -> Result<ScheduleMatrix> {
    let (he, we) = error_dims;
    let (ih, iw) = ifmap_dims;
    if k == 0 || stride == 0 || he == 0 || we == 0 || ih == 0 || iw == 0 {
        return Err(Error::Shape("empty filter-gradient schedule".into()));
    }
    let mut columns = Vec::with_capacity(k * k);
    for u in 0..k {
        for v in 0..k {
            let mut col = Vec::new();
            for a in 0..he {
                for b in 0..we {
                    let (y, x) = (stride * a + u, stride * b + v);
                    if y < ih && x < iw {
                        col.push(SymbolicProduct {
                            w_index: a * we + b,
                            e_index: y * iw + x,
                            label: Some(Label { row: u, col: v }),
                            order: a * we + b,
                            origin: (u, v),
                        });
                    }
                }
            }
            columns.push(col);
        }
    }
    Ok(ScheduleMatrix {
        kind: ScheduleKind::Dilated,
        k,
        stride,
        error_dims,
        ifmap_dims,
        pe_rows: k,
        pe_cols: k,
        columns,
        group_factor: (1, 1),
        expansion_factor: 1,
        steps: he * we,
    })
}

/// Split each PE's product list over `v` vertically adjacent PEs. Logical
/// row `u` becomes rows `u*v .. u*v + v`; the top one accumulates.
pub fn apply_expansion(mut m: ScheduleMatrix, v: usize) -> ScheduleMatrix {
    if v <= 1 {
        return m;
    }
    let (rows, cols) = (m.pe_rows, m.pe_cols);
    let mut out: Vec<Vec<SymbolicProduct>> = vec![Vec::new(); rows * v * cols];
    for (idx, col) in m.columns.iter().enumerate() {
        let (r, c) = (idx / cols, idx % cols);
        let chunk = col.len().div_ceil(v).max(1);
        for (i, part) in col.chunks(chunk).enumerate() {
            let base = part.first().map_or(0, |p| p.order);
            out[(r * v + i) * cols + c] = part
                .iter()
                .map(|p| SymbolicProduct {
                    order: p.order - base,
                    ..*p
                })
                .collect();
        }
    }
    m.columns = out;
    m.pe_rows = rows * v;
    m.expansion_factor = v;
    m.steps = m.steps.div_ceil(v);
    m
}

/// Full transposed pipeline for one plane on a `rows x cols` PE budget.
pub fn transposed_schedule(k: usize, stride: usize, error_dims: (usize, usize), rows: usize, cols: usize) -> Result<ScheduleMatrix> {
    let m = label_products(symbolic_outer_product(k, error_dims)?, stride)?;
    let m = {
        let mut m = m;
        m.pe_rows = error_dims.0;
        m.pe_cols = error_dims.1;
        m
    };
    let m = circular_shift(m, k, stride);
    let m = apply_grouping(m, rows, cols);
    Ok(m)
}

/// Check that every label's products sit in one PE column, on a contiguous
/// run of rows. Returns the offending label on failure.
pub fn check_verticality(m: &ScheduleMatrix) -> std::result::Result<(), Label> {
    use std::collections::BTreeMap;
    let mut seen: BTreeMap<Label, (usize, Vec<usize>)> = BTreeMap::new();
    for (idx, col) in m.columns.iter().enumerate() {
        let (r, c) = (idx / m.pe_cols, idx % m.pe_cols);
        for p in col {
            let Some(l) = p.label else { continue };
            let e = seen.entry(l).or_insert((c, Vec::new()));
            if e.0 != c {
                return Err(l);
            }
            e.1.push(r);
        }
    }
    for (l, (_, mut rows)) in seen {
        rows.sort_unstable();
        rows.dedup();
        if rows.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(l);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outer_product_dims() {
        let m = symbolic_outer_product(3, (2, 2)).unwrap();
        assert_eq!((m.columns.len(), m.columns[0].len()), (4, 9));
        assert_eq!(symbolic_outer_product(1, (1, 1)).unwrap().product_count(), 1);
        assert_eq!(symbolic_outer_product(2, (3, 3)).unwrap().product_count(), 36);
    }

    #[test]
    fn labels_share_an_output() {
        let m = label_products(symbolic_outer_product(3, (2, 2)).unwrap(), 2).unwrap();
        // w22*e01 and w02*e11 both land on row 2, col 4
        let find = |w: usize, e: usize| m.columns[e].iter().find(|p| p.w_index == w).unwrap().label.unwrap();
        assert_eq!(find(2 * 3 + 2, 1), find(2, 3));
        assert_eq!(find(8, 1), Label { row: 2, col: 4 });
        let (_, _, mult) = label_multiplicity(&m);
        assert_eq!(mult.iter().sum::<usize>(), 36);
    }

    #[test]
    fn stride_at_least_k_gives_singletons() {
        let m = label_products(symbolic_outer_product(2, (3, 3)).unwrap(), 2).unwrap();
        let (_, _, mult) = label_multiplicity(&m);
        assert!(mult.iter().all(|&c| c == 1));
    }

    #[test]
    fn shift_amounts_follow_w_idx() {
        let shifts: Vec<usize> = (0..9).map(|w| w / (3 * 2)).collect();
        assert_eq!(shifts, vec![0, 0, 0, 0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn assign_rejects_oversized_grid() {
        let m = symbolic_outer_product(3, (3, 2)).unwrap();
        let m = assign_columns(m, 13, 15).unwrap();
        assert_eq!((m.pe_rows, m.pe_cols), (3, 2));
        let m = symbolic_outer_product(3, (20, 2)).unwrap();
        assert!(assign_columns(m, 13, 15).is_err());
    }

    #[test]
    fn shifted_schedule_is_vertical() {
        for k in 1..=5 {
            for s in 1..=4 {
                for n in 1..=6 {
                    let m = transposed_schedule(k, s, (n, n), 13, 15).unwrap();
                    assert!(check_verticality(&m).is_ok(), "k={k} s={s} n={n}");
                    assert_eq!(m.product_count(), k * k * n * n);
                }
            }
        }
    }

    #[test]
    fn unshifted_schedule_is_not_vertical() {
        let m = label_products(symbolic_outer_product(3, (2, 2)).unwrap(), 2).unwrap();
        let m = assign_columns(m, 13, 15).unwrap();
        assert!(check_verticality(&m).is_err());
    }

    #[test]
    fn grouping_preserves_products_and_verticality() {
        let m = transposed_schedule(3, 2, (4, 4), 2, 2).unwrap();
        assert_eq!(m.group_factor, (2, 2));
        assert_eq!((m.pe_rows, m.pe_cols), (2, 2));
        assert_eq!(m.product_count(), 9 * 16);
        assert!(check_verticality(&m).is_ok());
    }

    #[test]
    fn dilated_schedule_shape() {
        let m = symbolic_dilated(3, 2, (2, 2), (5, 4)).unwrap();
        assert_eq!((m.pe_rows, m.pe_cols), (3, 3));
        // PE (0,2) would read column 4 at b=1, outside a 4-wide ifmap
        assert_eq!(m.pe(0, 2).len(), 2);
        assert_eq!(m.pe(0, 0).len(), 4);
        let e = apply_expansion(m.clone(), 2);
        assert_eq!(e.pe_rows, 6);
        assert_eq!(e.product_count(), m.product_count());
    }
}
