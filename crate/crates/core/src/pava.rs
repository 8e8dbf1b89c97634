//! Weighted pool-adjacent-violators for one ordered chain.

/// Weighted least-squares non-decreasing fit of `values` on a chain.
///
/// Blocks are merged while their weighted means decrease; the result
/// assigns each point its block mean.
pub(crate) fn pava(values: &[f64], weights: &[f64], out: &mut [f64]) {
    debug_assert_eq!(values.len(), weights.len());
    // (weighted sum, weight, length) per block
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        let mut cur = (v * w, w, 1usize);
        while let Some(&(s, wt, n)) = blocks.last() {
            if s / wt > cur.0 / cur.1 {
                cur = (cur.0 + s, cur.1 + wt, cur.2 + n);
                blocks.pop();
            } else {
                break;
            }
        }
        blocks.push(cur);
    }
    let mut k = 0;
    for (s, w, n) in blocks {
        let mean = s / w;
        out[k..k + n].fill(mean);
        k += n;
    }
}
