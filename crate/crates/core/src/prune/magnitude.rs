use crate::error::{Error, Result};
use crate::mask::{PruneMask, PruneMethod, Provenance};

/// Prunes `⌊frac · kept⌋` of the kept prunable weights with the smallest
/// `|θ|`, lower index first among equal magnitudes.
pub fn magnitude_select(params: &[f64], prior: &PruneMask, frac: f64, iteration: u32) -> Result<PruneMask> {
    if params.len() != prior.len() {
        return Err(Error::Shape(format!("{} params for a mask of {}", params.len(), prior.len())));
    }
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::Config(format!("mag_prune_frac must lie in (0, 1), got {frac}")));
    }
    let mut kept = prior.kept_prunable();
    if kept.is_empty() {
        return Err(Error::Mask("no prunable weights left to prune".into()));
    }
    let n = (frac * kept.len() as f64).floor() as usize;
    kept.sort_by(|&a, &b| params[a].abs().total_cmp(&params[b].abs()).then(a.cmp(&b)));
    let mut mask = prior.clone();
    for &k in &kept[..n] {
        mask.prune(k)?;
    }
    mask.provenance = Provenance {
        iteration,
        method: PruneMethod::Magnitude,
    };
    Ok(mask)
}

/// Weights pruned after `iterations` rounds starting from `prunable` kept.
pub fn magnitude_count_after(prunable: usize, frac: f64, iterations: usize) -> usize {
    let mut kept = prunable;
    for _ in 0..iterations {
        kept -= (frac * kept as f64).floor() as usize;
    }
    prunable - kept
}

/// Per-iteration fraction whose cumulative pruning after `iterations` rounds
/// lands closest to `target_percent` of `prunable` weights.
pub fn frac_for_target(prunable: usize, iterations: usize, target_percent: f64) -> f64 {
    let pct = |f: f64| 100.0 * magnitude_count_after(prunable, f, iterations) as f64 / prunable.max(1) as f64;
    let (mut lo, mut hi) = (1e-9, 1.0 - 1e-9);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if pct(mid) < target_percent {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (pct(lo) - target_percent).abs() <= (pct(hi) - target_percent).abs() {
        lo
    } else {
        hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LayerMap, LayerSlice};

    fn mask(n: usize) -> PruneMask {
        PruneMask::all_kept(
            &LayerMap::new(vec![LayerSlice {
                name: "w".into(),
                offset: 0,
                len: n,
                prunable: true,
                filter_shape: vec![n],
            }])
            .unwrap(),
        )
    }

    #[test]
    fn smallest_magnitude_goes_first() {
        let m = magnitude_select(&[0.5, -0.1, 0.3, -0.9], &mask(4), 0.25, 1).unwrap();
        assert_eq!(m.keep_flags(), &[true, false, true, true]);
        assert_eq!(m.provenance.method, PruneMethod::Magnitude);
    }

    #[test]
    fn floor_rule_over_two_iterations() {
        let p = [0.5, -0.1, 0.3, -0.9];
        let first = magnitude_select(&p, &mask(4), 0.5, 1).unwrap();
        assert_eq!(first.pruned_count(), 2);
        let second = magnitude_select(&p, &first, 0.5, 2).unwrap();
        assert_eq!(second.pruned_count(), 3);
        assert_eq!(magnitude_count_after(4, 0.5, 2), 3);
    }

    #[test]
    fn ties_break_by_index() {
        let m = magnitude_select(&[0.2, -0.2, 0.2, 1.0], &mask(4), 0.5, 1).unwrap();
        assert_eq!(m.keep_flags(), &[false, false, true, true]);
    }

    #[test]
    fn target_fraction_matches() {
        for &target in &[10.0, 50.0, 90.0, 97.0] {
            let f = frac_for_target(5200, 5, target);
            let got = 100.0 * magnitude_count_after(5200, f, 5) as f64 / 5200.0;
            assert!((got - target).abs() < 0.1, "{target}: {got}");
        }
    }
}
