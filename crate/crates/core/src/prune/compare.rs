use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mask::PruneMask;

/// 2×2 agreement table of two masks over the prunable parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Contingency {
    pub both: f64,
    pub only_a: f64,
    pub only_b: f64,
    pub neither: f64,
    /// Total percentage pruned by each mask.
    pub percent_a: f64,
    pub percent_b: f64,
    pub prunable: usize,
}

pub fn compare_masks(a: &PruneMask, b: &PruneMask) -> Result<Contingency> {
    if a.len() != b.len() {
        return Err(Error::Mask(format!("masks have {} and {} parameters", a.len(), b.len())));
    }
    let mut counts = [0usize; 4];
    let mut prunable = 0;
    for k in 0..a.len() {
        if a.is_prunable(k) != b.is_prunable(k) {
            return Err(Error::Mask(format!("masks disagree on whether parameter {k} is prunable")));
        }
        if !a.is_prunable(k) {
            continue;
        }
        prunable += 1;
        let idx = match (a.is_kept(k), b.is_kept(k)) {
            (false, false) => 0,
            (false, true) => 1,
            (true, false) => 2,
            (true, true) => 3,
        };
        counts[idx] += 1;
    }
    let frac = |c: usize| if prunable == 0 { 0.0 } else { c as f64 / prunable as f64 };
    let neither = if prunable == 0 { 1.0 } else { frac(counts[3]) };
    Ok(Contingency {
        both: frac(counts[0]),
        only_a: frac(counts[1]),
        only_b: frac(counts[2]),
        neither,
        percent_a: a.percent_pruned(),
        percent_b: b.percent_pruned(),
        prunable,
    })
}

impl Contingency {
    /// Rows are mask A pruned / kept, columns mask B pruned / kept, in percent.
    pub fn render(&self) -> String {
        format!(
            "                 B pruned ({:.2}%)  B kept\n\
             A pruned ({:.2}%)  {:>8.3}%  {:>8.3}%\n\
             A kept             {:>8.3}%  {:>8.3}%\n",
            self.percent_b,
            self.percent_a,
            100.0 * self.both,
            100.0 * self.only_a,
            100.0 * self.only_b,
            100.0 * self.neither,
        )
    }

    pub fn write_csv(&self, w: impl Write, config_hash: &str) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "config_hash",
            "prunable",
            "both_pruned",
            "only_a",
            "only_b",
            "both_kept",
            "percent_a",
            "percent_b",
        ])?;
        out.write_record([
            config_hash.to_string(),
            self.prunable.to_string(),
            self.both.to_string(),
            self.only_a.to_string(),
            self.only_b.to_string(),
            self.neither.to_string(),
            self.percent_a.to_string(),
            self.percent_b.to_string(),
        ])?;
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LayerMap, LayerSlice};
    use proptest::prelude::*;

    fn mask_with(n: usize, pruned: &[usize]) -> PruneMask {
        let mut m = PruneMask::all_kept(
            &LayerMap::new(vec![
                LayerSlice {
                    name: "w".into(),
                    offset: 0,
                    len: n,
                    prunable: true,
                    filter_shape: vec![n],
                },
                LayerSlice {
                    name: "b".into(),
                    offset: n,
                    len: 2,
                    prunable: false,
                    filter_shape: vec![2],
                },
            ])
            .unwrap(),
        );
        for &k in pruned {
            m.prune(k).unwrap();
        }
        m
    }

    #[test]
    fn quarter_each() {
        let c = compare_masks(&mask_with(4, &[1, 2]), &mask_with(4, &[1, 3])).unwrap();
        assert_eq!((c.both, c.only_a, c.only_b, c.neither), (0.25, 0.25, 0.25, 0.25));
    }

    #[test]
    fn identical_and_complementary() {
        let a = mask_with(4, &[0, 2]);
        let c = compare_masks(&a, &a).unwrap();
        assert_eq!((c.only_a, c.only_b), (0.0, 0.0));
        let c = compare_masks(&a, &mask_with(4, &[1, 3])).unwrap();
        assert_eq!((c.both, c.neither), (0.0, 0.0));
    }

    #[test]
    fn overlap_reference_point() {
        // 97.1% pruned by each, 94.4% by both
        let a: Vec<usize> = (0..971).collect();
        let b: Vec<usize> = (0..944).chain(971..998).collect();
        let c = compare_masks(&mask_with(1000, &a), &mask_with(1000, &b)).unwrap();
        assert!((c.percent_a - 97.1).abs() < 1e-9 && (c.percent_b - 97.1).abs() < 1e-9);
        assert!((c.both - 0.944).abs() < 1e-12);
        assert!((c.only_a - 0.027).abs() < 1e-12 && (c.only_b - 0.027).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch() {
        assert!(compare_masks(&mask_with(4, &[]), &mask_with(5, &[])).is_err());
    }

    proptest! {
        #[test]
        fn fractions_sum_to_one(a in proptest::collection::vec(any::<bool>(), 1..200), seed in any::<u64>()) {
            let n = a.len();
            let pa: Vec<usize> = (0..n).filter(|&k| a[k]).collect();
            let pb: Vec<usize> = (0..n).filter(|&k| (seed >> (k % 64)) & 1 == 1).collect();
            let c = compare_masks(&mask_with(n, &pa), &mask_with(n, &pb)).unwrap();
            prop_assert!((c.both + c.only_a + c.only_b + c.neither - 1.0).abs() <= 1e-12);
        }
    }
}
