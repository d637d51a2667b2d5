//! Adaptive masking ratio and ordered mask plans.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::numerics::{Rng, Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    #[default]
    FixedTau,
    /// Derive `tau` so that the ratio reaches `sigma_max` at the last epoch.
    TargetFinal,
}

/// `σ(e) = min(σ₀ + ln(e)/τ, σ_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSchedule {
    pub sigma0: f64,
    pub tau: f64,
    pub sigma_max: f64,
    pub mode: ScheduleMode,
    /// Only read in `TargetFinal` mode.
    pub total_epochs: usize,
}

impl Default for MaskSchedule {
    fn default() -> Self {
        Self { sigma0: 0.25, tau: 20.0, sigma_max: 1.0, mode: ScheduleMode::FixedTau, total_epochs: 60 }
    }
}

impl MaskSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0 && self.sigma0 < 1.0) {
            return Err(invalid(format!("sigma0 must lie in (0, 1), got {}", self.sigma0)));
        }
        if !(self.sigma0 <= self.sigma_max && self.sigma_max <= 1.0) {
            return Err(invalid(format!("need sigma0 <= sigma_max <= 1, got {} / {}", self.sigma0, self.sigma_max)));
        }
        match self.mode {
            ScheduleMode::FixedTau if !(self.tau > 0.0) => Err(invalid(format!("tau must be positive, got {}", self.tau))),
            ScheduleMode::TargetFinal if self.total_epochs < 2 || self.sigma_max <= self.sigma0 => Err(invalid(
                "target_final needs total_epochs >= 2 and sigma_max > sigma0",
            )),
            _ => Ok(()),
        }
    }

    pub fn effective_tau(&self) -> f64 {
        match self.mode {
            ScheduleMode::FixedTau => self.tau,
            ScheduleMode::TargetFinal => (self.total_epochs as f64).ln() / (self.sigma_max - self.sigma0),
        }
    }
}

pub fn masking_ratio(epoch: usize, schedule: &MaskSchedule) -> Result<f64> {
    if epoch < 1 {
        return Err(invalid("epochs are counted from 1"));
    }
    schedule.validate()?;
    let sigma = schedule.sigma0 + (epoch as f64).ln() / schedule.effective_tau();
    Ok(sigma.min(schedule.sigma_max))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    /// Least foreground-like patches first.
    #[default]
    EasyToHard,
    /// Most foreground-like patches first.
    HardToEasy,
    Random,
}

impl MaskStrategy {
    pub const ALL: [MaskStrategy; 3] = [MaskStrategy::Random, MaskStrategy::HardToEasy, MaskStrategy::EasyToHard];

    pub fn name(self) -> &'static str {
        match self {
            MaskStrategy::EasyToHard => "easy_to_hard",
            MaskStrategy::HardToEasy => "hard_to_easy",
            MaskStrategy::Random => "random",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub epoch: usize,
    pub sigma: f64,
    pub n_masked: usize,
    pub strategy: MaskStrategy,
    pub masked_indices: Vec<usize>,
    pub mask_flags: Vec<bool>,
}

fn is_permutation(ranking: &[usize], n: usize) -> bool {
    if ranking.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    ranking.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
}

/// `ranking` must list every patch by descending foreground probability.
pub fn build_mask_plan(
    epoch: usize,
    ranking: &[usize],
    n_total: usize,
    sigma: f64,
    strategy: MaskStrategy,
    rng: &mut Rng,
) -> Result<MaskPlan> {
    if !is_permutation(ranking, n_total) {
        return Err(invalid(format!("ranking is not a permutation of 0..{n_total}")));
    }
    if !(0.0..=1.0).contains(&sigma) {
        return Err(invalid(format!("masking ratio {sigma} outside [0, 1]")));
    }
    let n_masked = (n_total as f64 * sigma).floor() as usize;
    let masked_indices = match strategy {
        MaskStrategy::HardToEasy => ranking[..n_masked].to_vec(),
        MaskStrategy::EasyToHard => ranking.iter().rev().take(n_masked).copied().collect(),
        MaskStrategy::Random => rng.sample_indices(n_total, n_masked)?,
    };
    let mut mask_flags = vec![false; n_total];
    for &i in &masked_indices {
        mask_flags[i] = true;
    }
    Ok(MaskPlan { epoch, sigma, n_masked, strategy, masked_indices, mask_flags })
}

/// Copy of `patches` with every masked row replaced by `mask_token`.
pub fn apply_mask<T: Scalar>(patches: &Tensor<T>, plan: &MaskPlan, mask_token: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = patches.dims2()?;
    if mask_token.len() != d {
        return Err(shape_err(format!("mask token of length {} for patch width {d}", mask_token.len())));
    }
    if plan.mask_flags.len() != n {
        return Err(shape_err(format!("plan covers {} patches, matrix has {n}", plan.mask_flags.len())));
    }
    let mut out = patches.clone();
    for &i in &plan.masked_indices {
        out.row_mut(i).copy_from_slice(mask_token.data());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    #[test]
    fn first_epoch_is_sigma0() {
        for tau in [1.0, 20.0, 1e6] {
            let s = MaskSchedule { tau, ..Default::default() };
            assert_eq!(masking_ratio(1, &s).unwrap(), 0.25);
        }
    }

    #[test]
    fn long_run_value() {
        let s = MaskSchedule { tau: 20.0, ..Default::default() };
        let v = masking_ratio(800, &s).unwrap();
        assert!((v - (0.25 + 800f64.ln() / 20.0)).abs() < 1e-12);
        assert!((v - 0.5842).abs() < 1e-4);
    }

    #[test]
    fn clamp_dominates() {
        let s = MaskSchedule { tau: 1.0, sigma_max: 0.95, ..Default::default() };
        assert_eq!(masking_ratio(800, &s).unwrap(), 0.95);
    }

    #[test]
    fn target_final_reaches_sigma_max() {
        let s = MaskSchedule { mode: ScheduleMode::TargetFinal, sigma_max: 0.75, total_epochs: 60, ..Default::default() };
        assert!((masking_ratio(60, &s).unwrap() - 0.75).abs() < 1e-12);
        assert!(masking_ratio(30, &s).unwrap() < 0.75);
    }

    #[test]
    fn epoch_zero_and_bad_schedules_fail() {
        assert!(masking_ratio(0, &MaskSchedule::default()).is_err());
        assert!(masking_ratio(2, &MaskSchedule { tau: 0.0, ..Default::default() }).is_err());
        assert!(masking_ratio(2, &MaskSchedule { sigma_max: 0.1, ..Default::default() }).is_err());
    }

    #[test]
    fn ordered_plans_pick_ends_of_ranking() {
        let mut rng = Rng::new(0);
        let h = build_mask_plan(1, &[1, 2, 0], 3, 1.0 / 3.0, MaskStrategy::HardToEasy, &mut rng).unwrap();
        assert_eq!(h.masked_indices, vec![1]);
        let e = build_mask_plan(1, &[1, 2, 0], 3, 1.0 / 3.0, MaskStrategy::EasyToHard, &mut rng).unwrap();
        assert_eq!(e.masked_indices, vec![0]);
        assert_eq!(e.mask_flags, vec![true, false, false]);
    }

    #[test]
    fn boundary_ratios() {
        let mut rng = Rng::new(0);
        let ranking = [3, 0, 2, 1];
        for strategy in MaskStrategy::ALL {
            assert!(build_mask_plan(1, &ranking, 4, 0.0, strategy, &mut rng).unwrap().masked_indices.is_empty());
            let full = build_mask_plan(1, &ranking, 4, 1.0, strategy, &mut rng).unwrap();
            assert!(full.mask_flags.iter().all(|&f| f));
        }
    }

    #[test]
    fn non_permutation_rejected() {
        let mut rng = Rng::new(0);
        assert!(build_mask_plan(1, &[0, 0, 1], 3, 0.5, MaskStrategy::Random, &mut rng).is_err());
        assert!(build_mask_plan(1, &[0, 1], 3, 0.5, MaskStrategy::Random, &mut rng).is_err());
    }

    fn fixture() -> Tensor {
        Tensor::matrix(4, 2, (0..8).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn mask_application() {
        let m = fixture();
        let token = Tensor::vector(vec![-1.0, -2.0]).unwrap();
        let mut rng = Rng::new(0);
        let ranking = [0, 1, 2, 3];
        let empty = build_mask_plan(1, &ranking, 4, 0.0, MaskStrategy::HardToEasy, &mut rng).unwrap();
        assert_eq!(apply_mask(&m, &empty, &token).unwrap(), m);
        let full = build_mask_plan(1, &ranking, 4, 1.0, MaskStrategy::HardToEasy, &mut rng).unwrap();
        let all = apply_mask(&m, &full, &token).unwrap();
        assert!((0..4).all(|i| all.row(i) == token.data()));
        let last = build_mask_plan(1, &ranking, 4, 0.25, MaskStrategy::EasyToHard, &mut rng).unwrap();
        let out = apply_mask(&m, &last, &token).unwrap();
        assert_eq!(&out.data()[..6], &m.data()[..6]);
        assert_eq!(out.row(3), token.data());
        assert!(apply_mask(&m, &last, &Tensor::vector(vec![0.0]).unwrap()).is_err());
    }

    fn ranking_from(seed: u64, n: usize) -> Vec<usize> {
        let mut r: Vec<usize> = (0..n).collect();
        Rng::new(seed).shuffle(&mut r);
        r
    }

    proptest! {
        #[test]
        fn ratio_monotone_and_clamped(sigma0 in 0.01f64..0.9, tau in 0.1f64..100.0, headroom in 0.0f64..1.0) {
            let sigma_max = sigma0 + (1.0 - sigma0) * headroom;
            let s = MaskSchedule { sigma0, tau, sigma_max, ..Default::default() };
            let mut prev = 0.0;
            for e in 1..=200 {
                let v = masking_ratio(e, &s).unwrap();
                prop_assert!(v >= prev && v <= sigma_max);
                prev = v;
            }
        }

        #[test]
        fn masked_count_is_floor(seed in any::<u64>(), n in 1usize..300, sigma in 0.0f64..=1.0) {
            let ranking = ranking_from(seed, n);
            for strategy in MaskStrategy::ALL {
                let plan = build_mask_plan(1, &ranking, n, sigma, strategy, &mut Rng::new(seed)).unwrap();
                let expected = (n as f64 * sigma).floor() as usize;
                prop_assert_eq!(plan.n_masked, expected);
                prop_assert_eq!(plan.masked_indices.len(), expected);
                let mut sorted = plan.masked_indices.clone();
                sorted.sort_unstable();
                sorted.dedup();
                prop_assert_eq!(sorted.len(), expected);
                prop_assert_eq!(plan.mask_flags.iter().filter(|&&f| f).count(), expected);
            }
        }

        #[test]
        fn ordered_strategies_are_complementary(seed in any::<u64>(), n in 1usize..200, sigma in 0.0f64..=1.0) {
            let ranking = ranking_from(seed, n);
            let mut rng = Rng::new(0);
            let h = build_mask_plan(1, &ranking, n, sigma, MaskStrategy::HardToEasy, &mut rng).unwrap();
            let e = build_mask_plan(1, &ranking, n, 1.0 - sigma, MaskStrategy::EasyToHard, &mut rng).unwrap();
            let overlap = h.mask_flags.iter().zip(&e.mask_flags).filter(|(a, b)| **a && **b).count();
            let covered = h.mask_flags.iter().zip(&e.mask_flags).filter(|(a, b)| **a || **b).count();
            prop_assert_eq!(overlap, 0);
            prop_assert!(covered + 1 >= n);
        }

        #[test]
        fn unmasked_rows_are_untouched(seed in any::<u64>(), sigma in 0.0f64..=1.0) {
            let mut rng = Rng::new(seed);
            let m = Tensor::matrix(16, 3, (0..48).map(|_| rng.normal(0.0, 1.0).unwrap()).collect()).unwrap();
            let plan = build_mask_plan(1, &ranking_from(seed, 16), 16, sigma, MaskStrategy::Random, &mut rng).unwrap();
            let out = apply_mask(&m, &plan, &Tensor::vector(vec![9.0; 3]).unwrap()).unwrap();
            for i in (0..16).filter(|&i| !plan.mask_flags[i]) {
                let a: Vec<u64> = m.row(i).iter().map(|x| x.to_bits()).collect();
                let b: Vec<u64> = out.row(i).iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(a, b);
            }
        }
    }
}
