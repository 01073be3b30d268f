//! Fill-reducing orderings.

use super::{CsrMatrix, Scalar};

/// Nested dissection guided by point coordinates. Each set is split at the
/// coordinate median along its widest axis; the smaller of the two layers
/// adjacent to the cut becomes the separator and is ordered after both
/// halves.
///
/// Returns `perm` with `perm[k]` the original index placed at position `k`.
pub fn nested_dissection<T: Scalar>(a: &CsrMatrix<T>, coords: &[[f64; 3]], leaf: usize) -> Vec<usize> {
    let n = a.n;
    assert_eq!(coords.len(), n, "one coordinate per unknown");
    let mut out = Vec::with_capacity(n);
    let mut side = vec![0u8; n];
    let mut stack: Vec<(Vec<usize>, bool)> = vec![((0..n).collect(), false)];
    while let Some((set, emit)) = stack.pop() {
        if emit || set.len() <= leaf.max(1) {
            out.extend(set);
            continue;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &v in &set {
            for d in 0..3 {
                lo[d] = lo[d].min(coords[v][d]);
                hi[d] = hi[d].max(coords[v][d]);
            }
        }
        let axis = (0..3)
            .max_by(|&x, &y| (hi[x] - lo[x]).total_cmp(&(hi[y] - lo[y])))
            .unwrap();
        let mut vals: Vec<f64> = set.iter().map(|&v| coords[v][axis]).collect();
        let mid = vals.len() / 2;
        let t = *vals.select_nth_unstable_by(mid, |x, y| x.total_cmp(y)).1;
        let (part_a, part_b): (Vec<usize>, Vec<usize>) =
            set.iter().partition(|&&v| coords[v][axis] < t);
        if part_a.is_empty() || part_b.is_empty() {
            out.extend(set);
            continue;
        }
        for &v in &part_a {
            side[v] = 1;
        }
        for &v in &part_b {
            side[v] = 2;
        }
        let touches = |v: usize, other: u8| {
            a.col_idx[a.row_ptr[v]..a.row_ptr[v + 1]]
                .iter()
                .any(|&w| side[w] == other)
        };
        let n_sep_a = part_a.iter().filter(|&&v| touches(v, 2)).count();
        let n_sep_b = part_b.iter().filter(|&&v| touches(v, 1)).count();
        let (cut, keep, from, other) = if n_sep_b <= n_sep_a {
            (part_b, part_a, 2u8, 1u8)
        } else {
            (part_a, part_b, 1u8, 2u8)
        };
        let (sep, rest): (Vec<usize>, Vec<usize>) = cut.iter().partition(|&&v| touches(v, other));
        debug_assert!(sep.iter().all(|&v| side[v] == from));
        for &v in &set {
            side[v] = 0;
        }
        stack.push((sep, true));
        stack.push((rest, false));
        stack.push((keep, false));
    }
    out
}
