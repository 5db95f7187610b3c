use crate::error::FeatureError;

/// Median threshold binarisation: `x_i > median` maps to 1, ties map to 0.
pub fn binarize_median(x: &[f64]) -> Vec<u8> {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    x.iter().map(|&v| u8::from(v > median)).collect()
}

/// Number of novel phrases in the left-to-right exhaustive-history parse of
/// `symbols`. A trailing component that only copies earlier material (and
/// so runs into the end of the sequence) is not a new phrase and is not
/// counted; `"0000"` therefore has exactly one phrase.
pub fn lz_phrase_count(symbols: &[u8]) -> usize {
    let n = symbols.len();
    if n == 0 {
        return 0;
    }
    let mut count = 1;
    let mut start = 1; // first index of the current phrase
    if n == 1 {
        return count;
    }
    let (mut i, mut k, mut k_max) = (0, 1, 1);
    loop {
        if symbols[i + k - 1] == symbols[start + k - 1] {
            k += 1;
            if start + k > n {
                break;
            }
        } else {
            k_max = k_max.max(k);
            i += 1;
            if i == start {
                count += 1;
                start += k_max;
                if start >= n {
                    break;
                }
                i = 0;
                k = 1;
                k_max = 1;
            } else {
                k = 1;
            }
        }
    }
    count
}

/// Lempel-Ziv complexity of the median-binarised series, normalised by
/// `N / log2 N`.
pub fn lzc(x: &[f64]) -> Result<f64, FeatureError> {
    let n = x.len();
    if n < 2 {
        return Err(FeatureError::TooShort { needed: 2, got: n });
    }
    let c = lz_phrase_count(&binarize_median(x)) as f64;
    Ok(c * (n as f64).log2() / n as f64)
}

/// Lehmer-code index of the ordinal pattern of `window` (stable ranks).
fn pattern_index(window: &[f64], order: &mut Vec<usize>) -> usize {
    order.clear();
    order.extend(0..window.len());
    order.sort_by(|&a, &b| window[a].total_cmp(&window[b]).then(a.cmp(&b)));
    let d = order.len();
    let mut index = 0;
    for i in 0..d {
        let smaller_after = order[i + 1..].iter().filter(|&&v| v < order[i]).count();
        index = index * (d - i) + smaller_after;
    }
    index
}

fn factorial(d: usize) -> usize {
    (1..=d).product()
}

/// Normalised permutation entropy with embedding `order` and `delay`, in
/// `[0, 1]`. Natural logarithms throughout.
pub fn perm_entropy(x: &[f64], order: usize, delay: usize) -> Result<f64, FeatureError> {
    if order < 2 || delay < 1 {
        return Err(FeatureError::TooShort {
            needed: 2,
            got: order.min(delay),
        });
    }
    let span = (order - 1) * delay;
    let needed = span + 2;
    if x.len() < needed {
        return Err(FeatureError::TooShort {
            needed,
            got: x.len(),
        });
    }
    let n_patterns = factorial(order);
    let mut counts = vec![0usize; n_patterns];
    let mut window = vec![0.0; order];
    let mut scratch = Vec::with_capacity(order);
    let n_windows = x.len() - span;
    for t in 0..n_windows {
        for (j, w) in window.iter_mut().enumerate() {
            *w = x[t + j * delay];
        }
        counts[pattern_index(&window, &mut scratch)] += 1;
    }
    let total = n_windows as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    Ok((h / (n_patterns as f64).ln()).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phrase_counts() {
        assert_eq!(lz_phrase_count(&[0, 0, 0, 0, 0, 0]), 1);
        assert_eq!(lz_phrase_count(&[0, 1, 0, 1, 0, 1, 0, 1]), 2);
        // 0 | 1 | 10 | 0: the trailing "0" only copies
        assert_eq!(lz_phrase_count(&[0, 1, 1, 0, 0]), 3);
        assert_eq!(lz_phrase_count(&[1]), 1);
        assert_eq!(lz_phrase_count(&[]), 0);
    }

    #[test]
    fn binarisation_ties_go_low() {
        assert_eq!(binarize_median(&[1.0, 2.0, 3.0]), vec![0, 0, 1]);
        assert_eq!(binarize_median(&[5.0; 4]), vec![0; 4]);
        let c = lzc(&[5.0; 64]).unwrap();
        assert!((c - 6.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn permutation_entropy_edge_cases() {
        let mono: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert_eq!(perm_entropy(&mono, 3, 1).unwrap(), 0.0);
        assert!(matches!(
            perm_entropy(&[1.0, 2.0, 3.0], 3, 1),
            Err(FeatureError::TooShort { .. })
        ));
    }

    #[test]
    fn lehmer_indices_are_a_bijection() {
        let perms = [
            [0.0, 1.0, 2.0],
            [0.0, 2.0, 1.0],
            [1.0, 0.0, 2.0],
            [1.0, 2.0, 0.0],
            [2.0, 0.0, 1.0],
            [2.0, 1.0, 0.0],
        ];
        let mut seen: Vec<usize> = perms
            .iter()
            .map(|p| pattern_index(p, &mut Vec::new()))
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3, 4, 5]);
    }
}
