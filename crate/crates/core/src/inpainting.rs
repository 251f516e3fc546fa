//! Masks, keyframes and the single-pass inpainting merge.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{reverse_step_sample, ActionSpec, NoiseSchedule, ReverseStepParams};
use crate::error::{check_len, Error, Result};
use crate::scalar::Scalar;

/// Binary pattern over the flattened action: `true` marks a known entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct Mask {
    bits: Vec<bool>,
}

impl TryFrom<Vec<u8>> for Mask {
    type Error = Error;

    fn try_from(raw: Vec<u8>) -> Result<Self> {
        if raw.iter().any(|&b| b > 1) {
            return Err(Error::InvalidMask("entries must be 0 or 1".into()));
        }
        Mask::new(raw.into_iter().map(|b| b == 1).collect())
    }
}

impl From<Mask> for Vec<u8> {
    fn from(m: Mask) -> Self {
        m.bits.into_iter().map(u8::from).collect()
    }
}

impl Mask {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if bits.iter().all(|&b| b) {
            return Err(Error::InvalidMask(
                "mask needs at least one unknown entry".into(),
            ));
        }
        Ok(Self { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_known(&self, k: usize) -> bool {
        self.bits[k]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn known_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn known_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| k)
    }

    /// `m * known + (1 - m) * unknown`, entry by entry.
    pub fn merge<T: Copy>(&self, known: &[T], unknown: &[T]) -> Vec<T> {
        self.bits
            .iter()
            .zip(known.iter().zip(unknown))
            .map(|(&b, (&k, &u))| if b { k } else { u })
            .collect()
    }

    /// Squared L2 distance between `a` and `target` over known entries.
    pub fn masked_sq_distance<T: Scalar>(&self, a: &[T], target: &[T]) -> T {
        self.known_indices().fold(T::zero(), |acc, k| {
            let r = a[k] - target[k];
            acc + r * r
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Position,
    Velocity,
    Joint,
}

impl std::fmt::Display for FrameKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FrameKind::Position => "position",
            FrameKind::Velocity => "velocity",
            FrameKind::Joint => "joint",
        })
    }
}

/// Coarse action-space target pinned by inpainting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    /// One action vector (length `action_dim`).
    pub value: Vec<f64>,
    pub kind: FrameKind,
    /// Restricts pinning to the flagged action components.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<bool>>,
    /// State-space point this keyframe was derived from; drives sub-task
    /// advancement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Vec<f64>>,
    /// Provider that produced the keyframe.
    #[serde(default)]
    pub source: String,
}

impl Keyframe {
    pub fn validate(&self, action_dim: usize) -> Result<()> {
        check_len("keyframe value", action_dim, self.value.len())?;
        if self.value.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidKeyframe("non-finite keyframe value".into()));
        }
        if let Some(c) = &self.components {
            check_len("keyframe component mask", action_dim, c.len())?;
            if !c.iter().any(|&b| b) {
                return Err(Error::InvalidKeyframe("component mask is all zero".into()));
            }
        }
        Ok(())
    }

    fn pins(&self, component: usize) -> bool {
        self.components.as_ref().is_none_or(|c| c[component])
    }
}

/// Receding-horizon lengths: observe `obs_len`, predict `pred_len`, execute
/// `exec_len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HorizonConfig {
    pub obs_len: usize,
    pub exec_len: usize,
    pub pred_len: usize,
}

impl HorizonConfig {
    /// One observation, one predicted and executed action.
    pub const SINGLE_SHOT: Self = Self {
        obs_len: 1,
        exec_len: 1,
        pred_len: 1,
    };

    pub fn new(obs_len: usize, exec_len: usize, pred_len: usize) -> Result<Self> {
        let h = Self {
            obs_len,
            exec_len,
            pred_len,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn is_single_shot(&self) -> bool {
        *self == Self::SINGLE_SHOT
    }

    /// Requires `pred_len > obs_len + exec_len - 1` so the keyframe region
    /// is non-empty.
    pub fn validate(&self) -> Result<()> {
        if self.obs_len == 0 || self.exec_len == 0 || self.pred_len == 0 {
            return Err(Error::InvalidHorizon("all lengths must be positive".into()));
        }
        if self.pred_len <= self.unknown_prefix() {
            return Err(Error::InvalidHorizon(format!(
                "pred_len {} must exceed obs_len + exec_len - 1 = {}",
                self.pred_len,
                self.unknown_prefix()
            )));
        }
        Ok(())
    }

    /// Number of leading prediction steps left unknown.
    pub fn unknown_prefix(&self) -> usize {
        self.obs_len + self.exec_len - 1
    }

    /// First prediction index that is executed.
    pub fn exec_offset(&self) -> usize {
        self.obs_len - 1
    }
}

/// Where a keyframe is written along the prediction horizon.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyframePlacement {
    /// Every step after the unknown prefix carries the keyframe.
    #[default]
    TailBroadcast,
    /// Only the final prediction step carries the keyframe.
    FinalStep,
}

/// Zeros on the first `obs_len + exec_len - 1` steps, ones afterwards.
pub fn build_horizon_mask(h: &HorizonConfig, action_dim: usize) -> Result<Mask> {
    h.validate()?;
    let bits = (0..h.pred_len)
        .flat_map(|t| std::iter::repeat_n(t >= h.unknown_prefix(), action_dim))
        .collect();
    Mask::new(bits)
}

/// Mask for conditioning on `kf`, combining horizon layout, placement and
/// the keyframe's component mask. Single-shot horizons use the component
/// mask alone.
pub fn keyframe_mask(
    h: &HorizonConfig,
    spec: &ActionSpec,
    kf: &Keyframe,
    placement: KeyframePlacement,
) -> Result<Mask> {
    kf.validate(spec.action_dim)?;
    check_len("horizon length", spec.horizon, h.pred_len)?;
    let steps: Vec<bool> = if h.is_single_shot() {
        vec![true]
    } else {
        let base = build_horizon_mask(h, 1)?;
        match placement {
            KeyframePlacement::TailBroadcast => base.bits,
            KeyframePlacement::FinalStep => (0..h.pred_len).map(|t| t + 1 == h.pred_len).collect(),
        }
    };
    let bits = steps
        .iter()
        .flat_map(|&on| (0..spec.action_dim).map(move |c| (on, c)))
        .map(|(on, c)| on && kf.pins(c))
        .collect();
    Mask::new(bits)
}

/// `a_0^known`: the keyframe written into every known slot, zero elsewhere.
pub fn broadcast_keyframe<T: Scalar>(kf: &Keyframe, mask: &Mask, spec: &ActionSpec) -> Result<Vec<T>> {
    check_len("keyframe value", spec.action_dim, kf.value.len())?;
    check_len("mask", spec.flat_dim(), mask.len())?;
    Ok((0..spec.flat_dim())
        .map(|k| {
            if mask.is_known(k) {
                T::c(kf.value[k % spec.action_dim])
            } else {
                T::zero()
            }
        })
        .collect())
}

/// Noised known part `a_{i-1}^known ~ N(sqrt(ab_{i-1}) a_0^known, (1 - ab_{i-1}) I)`
/// on known entries; unknown entries are zero. Draws one normal per known entry.
pub fn sample_known<T: Scalar, R: Rng + ?Sized>(
    a0_known: &[T],
    mask: &Mask,
    step: usize,
    sched: &NoiseSchedule<T>,
    rng: &mut R,
) -> Result<Vec<T>> {
    sched.check_step(step)?;
    check_len("known action", mask.len(), a0_known.len())?;
    let ab = sched.alpha_bar(step - 1);
    let (signal, noise) = (ab.sqrt(), (T::one() - ab).sqrt());
    Ok(a0_known
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            if mask.is_known(k) {
                signal * a + noise * T::standard_normal(rng)
            } else {
                T::zero()
            }
        })
        .collect())
}

/// Samples the unknown part from the reverse step and merges it with
/// `known_sample` under `mask`.
pub fn vanilla_inpaint_step<T: Scalar, R: Rng + ?Sized>(
    rp: &ReverseStepParams<T>,
    known_sample: &[T],
    mask: &Mask,
    rng: &mut R,
) -> Result<Vec<T>> {
    check_len("known sample", rp.dim(), known_sample.len())?;
    check_len("mask", rp.dim(), mask.len())?;
    let unknown = reverse_step_sample(rp, rng)?;
    Ok(mask.merge(known_sample, &unknown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ScheduleKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn kf(value: Vec<f64>) -> Keyframe {
        Keyframe {
            value,
            kind: FrameKind::Position,
            components: None,
            anchor: None,
            source: "test".into(),
        }
    }

    #[test]
    fn horizon_mask_layout() {
        let h = HorizonConfig::new(2, 3, 8).unwrap();
        let m = build_horizon_mask(&h, 1).unwrap();
        let v: Vec<u8> = m.into();
        assert_eq!(v, vec![0, 0, 0, 0, 1, 1, 1, 1]);

        let m = build_horizon_mask(&HorizonConfig::new(1, 1, 2).unwrap(), 1).unwrap();
        assert_eq!(m.bits(), &[false, true]);

        let m = build_horizon_mask(&HorizonConfig::new(1, 1, 2).unwrap(), 2).unwrap();
        assert_eq!(m.bits(), &[false, false, true, true]);
    }

    #[test]
    fn horizon_boundary_rejected() {
        assert!(HorizonConfig::new(2, 3, 4).is_err());
        assert!(HorizonConfig::new(0, 1, 4).is_err());
        assert!(build_horizon_mask(&HorizonConfig::SINGLE_SHOT, 3).is_err());
    }

    #[test]
    fn mask_requires_unknown_entry() {
        assert!(Mask::new(vec![true, true]).is_err());
        assert!(Mask::try_from(vec![0u8, 2]).is_err());
        assert!(serde_json::from_str::<Mask>("[1,1]").is_err());
        assert_eq!(serde_json::from_str::<Mask>("[0,1]").unwrap().known_count(), 1);
    }

    #[test]
    fn tail_broadcast_fills_every_known_step() {
        let h = HorizonConfig::new(1, 2, 4).unwrap();
        let spec = ActionSpec::new(2, 4).unwrap();
        let k = kf(vec![1.0, 2.0]);
        let m = keyframe_mask(&h, &spec, &k, KeyframePlacement::TailBroadcast).unwrap();
        let a: Vec<f64> = broadcast_keyframe(&k, &m, &spec).unwrap();
        assert_eq!(a, vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0, 2.0]);

        let m = keyframe_mask(&h, &spec, &k, KeyframePlacement::FinalStep).unwrap();
        let a: Vec<f64> = broadcast_keyframe(&k, &m, &spec).unwrap();
        assert_eq!(a, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn single_shot_component_mask_leaves_angle_unknown() {
        let spec = ActionSpec::new(3, 1).unwrap();
        let mut k = kf(vec![0.4, -0.2, 9.0]);
        k.components = Some(vec![true, true, false]);
        let m = keyframe_mask(&HorizonConfig::SINGLE_SHOT, &spec, &k, KeyframePlacement::default()).unwrap();
        assert_eq!(m.bits(), &[true, true, false]);
        let a: Vec<f64> = broadcast_keyframe(&k, &m, &spec).unwrap();
        assert_eq!(a, vec![0.4, -0.2, 0.0]);

        k.components = None;
        assert!(keyframe_mask(&HorizonConfig::SINGLE_SHOT, &spec, &k, KeyframePlacement::default()).is_err());
        k.components = Some(vec![false; 3]);
        assert!(k.validate(3).is_err());
    }

    #[test]
    fn zero_keyframe_broadcasts_to_zero() {
        let h = HorizonConfig::new(2, 2, 6).unwrap();
        let spec = ActionSpec::new(2, 6).unwrap();
        let k = kf(vec![0.0, 0.0]);
        let m = keyframe_mask(&h, &spec, &k, KeyframePlacement::TailBroadcast).unwrap();
        let a: Vec<f64> = broadcast_keyframe(&k, &m, &spec).unwrap();
        assert!(a.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn known_sample_at_last_step_is_exact() {
        let s = NoiseSchedule::<f64>::build(ScheduleKind::Linear, 10, 0.01, 0.2).unwrap();
        let m = Mask::new(vec![false, true, true]).unwrap();
        let a0 = [0.0, 1.5, -2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_known(&a0, &m, 1, &s, &mut rng).unwrap(), a0.to_vec());
        assert!(sample_known(&a0, &m, 0, &s, &mut rng).is_err());
    }

    #[test]
    fn known_sample_moments() {
        // ab_{i-1} = 0.81 at i = 3 under constant beta 0.1
        let s = NoiseSchedule::<f64>::build(ScheduleKind::Constant, 3, 0.1, 0.1).unwrap();
        let m = Mask::new(vec![true, false]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_known(&[1.0, 0.0], &m, 3, &s, &mut rng).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 0.9).abs() < 4.0 * (0.19 / n as f64).sqrt());
        assert!((var - 0.19).abs() < 4.0 * 0.19 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn vanilla_merge_identity() {
        let rp = ReverseStepParams::isotropic(vec![5.0, 6.0, 7.0], 1e-300, 4).unwrap();
        let m = Mask::new(vec![false, true, false]).unwrap();
        let known = [0.0, -1.0, 0.0];
        let out = vanilla_inpaint_step(&rp, &known, &m, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(out, vec![5.0, -1.0, 7.0]);
    }

    #[test]
    fn vanilla_step_is_seed_deterministic() {
        let rp = ReverseStepParams::isotropic(vec![0.0; 4], 0.5, 4).unwrap();
        let m = Mask::new(vec![false, true, false, true]).unwrap();
        let known = [0.0, 1.0, 0.0, 2.0];
        let a = vanilla_inpaint_step(&rp, &known, &m, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = vanilla_inpaint_step(&rp, &known, &m, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!((a[1], a[3]), (1.0, 2.0));
    }
}
