//! Oracles shared by the integration test targets.

/// Greedy merge computed the slow way: every single removal is realized
/// and its combined goodput summed from scratch.
pub fn brute_force_merge(pool: &[(f64, u32)], max_layers: usize, tolerance: f64) -> Vec<(f64, u32)> {
    let mut sorted = pool.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut entries: Vec<(f64, u32)> = Vec::new();
    for (r, c) in sorted {
        if let Some(last) = entries.last_mut() {
            if r - last.0 < tolerance {
                last.1 += c;
                continue;
            }
        }
        entries.push((r, c));
    }
    while entries.len() > max_layers.max(1) {
        let mut best: Option<(f64, Vec<(f64, u32)>)> = None;
        for k in 1..entries.len() {
            let mut cand = entries.clone();
            let (_, c) = cand.remove(k);
            cand[k - 1].1 += c;
            let g: f64 = cand.iter().map(|&(r, c)| r * c as f64).sum();
            if best.as_ref().is_none_or(|(bg, _)| g >= *bg) {
                best = Some((g, cand));
            }
        }
        entries = best.unwrap().1;
    }
    entries
}
