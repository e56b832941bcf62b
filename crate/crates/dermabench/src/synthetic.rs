//! Generated stand-in datasets with the archive layout and a realistic
//! class imbalance, for dry runs and tests without the real archives.

use dermabench_core::dataset::{Split, CHANNELS};
use dermabench_core::label::NUM_CLASSES;
use dermabench_core::{ClassLabel, DatasetBundle, DatasetDescriptor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::Result;

/// Class sizes of the 10,015-image source collection, in code order.
pub const SOURCE_CLASS_COUNTS: [usize; NUM_CLASSES] = [327, 514, 1099, 115, 1113, 6705, 142];

/// Mean lesion colour per class. Neighbouring classes overlap once jitter
/// and noise are added, so the task is learnable but not trivial.
const PALETTE: [[f32; 3]; NUM_CLASSES] = [
    [180.0, 95.0, 85.0],
    [200.0, 135.0, 140.0],
    [150.0, 110.0, 75.0],
    [165.0, 125.0, 105.0],
    [70.0, 45.0, 45.0],
    [115.0, 75.0, 55.0],
    [170.0, 45.0, 75.0],
];

/// Lesion radius as a fraction of the image side, per class.
const RADIUS: [f32; NUM_CLASSES] = [0.22, 0.30, 0.34, 0.18, 0.40, 0.26, 0.20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Content {
    /// Coloured lesions on a skin-tone background, plus noise.
    #[default]
    Lesions,
    /// All-zero pixels; only shapes and labels matter.
    Blank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub side: usize,
    /// (train, validation, test) sizes.
    pub counts: [usize; 3],
    pub seed: u64,
    #[serde(default)]
    pub content: Content,
}

/// Splits `total` across classes in proportion to [`SOURCE_CLASS_COUNTS`]
/// (largest remainder), giving every class at least one image when
/// `total ≥ 7`.
pub fn class_allocation(total: usize) -> [usize; NUM_CLASSES] {
    let sum: usize = SOURCE_CLASS_COUNTS.iter().sum();
    let mut out = [0usize; NUM_CLASSES];
    let mut rema = [(0.0f64, 0usize); NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        let exact = total as f64 * SOURCE_CLASS_COUNTS[c] as f64 / sum as f64;
        out[c] = exact.floor() as usize;
        rema[c] = (exact - exact.floor(), c);
    }
    let left = total - out.iter().sum::<usize>();
    rema.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, c) in rema.iter().cycle().take(left) {
        out[c] += 1;
    }
    if total >= NUM_CLASSES {
        for c in 0..NUM_CLASSES {
            if out[c] == 0 {
                let donor = (0..NUM_CLASSES).max_by_key(|&d| out[d]).expect("seven classes");
                out[donor] -= 1;
                out[c] += 1;
            }
        }
    }
    out
}

fn split(side: usize, n: usize, content: Content, rng: &mut ChaCha8Rng) -> Result<Split> {
    let alloc = class_allocation(n);
    let mut labels: Vec<ClassLabel> = ClassLabel::ALL
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, alloc[c.index()]))
        .collect();
    // Interleave classes so that order carries no signal.
    for i in (1..labels.len()).rev() {
        labels.swap(i, rng.random_range(0..=i));
    }
    let per = side * side * CHANNELS;
    let mut pixels = vec![0u8; n * per];
    if content == Content::Lesions {
        for (img, label) in pixels.chunks_exact_mut(per).zip(&labels) {
            paint(img, side, *label, rng);
        }
    }
    Ok(Split::new(side, pixels, labels)?)
}

fn paint(img: &mut [u8], side: usize, label: ClassLabel, rng: &mut ChaCha8Rng) {
    let c = label.index();
    let skin: [f32; 3] = {
        let t = rng.random_range(-20.0..20.0f32);
        [205.0 + t, 165.0 + t, 145.0 + t]
    };
    let mut lesion = PALETTE[c];
    for v in lesion.iter_mut() {
        *v += rng.random_range(-30.0..30.0f32);
    }
    let s = side as f32;
    let cx = s * (0.5 + rng.random_range(-0.12..0.12f32));
    let cy = s * (0.5 + rng.random_range(-0.12..0.12f32));
    let r = s * RADIUS[c] * rng.random_range(0.7..1.3f32);
    let aspect = rng.random_range(0.75..1.33f32);
    let mut noise = 0u64;
    for y in 0..side {
        for x in 0..side {
            let dx = (x as f32 + 0.5 - cx) / (r * aspect);
            let dy = (y as f32 + 0.5 - cy) / r * aspect;
            // soft edge over the outer fifth of the radius
            let d = (dx * dx + dy * dy).sqrt();
            let a = ((1.0 - d) * 5.0).clamp(0.0, 1.0);
            let base = (y * side + x) * CHANNELS;
            for ch in 0..CHANNELS {
                if noise < 256 {
                    noise = rng.random::<u64>() | (1 << 63);
                }
                let jitter = (noise & 0x1f) as f32 - 16.0;
                noise >>= 5;
                let v = skin[ch] * (1.0 - a) + lesion[ch] * a + jitter;
                img[base + ch] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
}

/// A synthetic bundle per `spec`, described as the `synthetic` dataset.
pub fn synthetic_bundle(spec: &SyntheticSpec) -> Result<DatasetBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [a, b, c] = spec.counts;
    let train = split(spec.side, a, spec.content, &mut rng)?;
    let validation = split(spec.side, b, spec.content, &mut rng)?;
    let test = split(spec.side, c, spec.content, &mut rng)?;
    Ok(DatasetBundle::new(
        DatasetDescriptor::synthetic(spec.side, spec.counts),
        train,
        validation,
        test,
    )?)
}

/// Splits with the sizes and resolution `descriptor` expects, for writing
/// fixture archives in place of a published dataset.
pub fn fixture_splits(descriptor: &DatasetDescriptor, counts: [usize; 3], seed: u64, content: Content) -> Result<[Split; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = descriptor.resolution;
    Ok([
        split(side, counts[0], content, &mut rng)?,
        split(side, counts[1], content, &mut rng)?,
        split(side, counts[2], content, &mut rng)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_sums_and_covers_every_class() {
        for total in [7, 100, 575, 1232, 8208, 10_015] {
            let a = class_allocation(total);
            assert_eq!(a.iter().sum::<usize>(), total);
            assert!(a.iter().all(|&n| n > 0), "{total}: {a:?}");
        }
        assert_eq!(class_allocation(10_015), SOURCE_CLASS_COUNTS);
    }

    #[test]
    fn generation_is_seeded() {
        let spec = SyntheticSpec {
            side: 8,
            counts: [70, 14, 14],
            seed: 5,
            content: Content::Lesions,
        };
        let a = synthetic_bundle(&spec).unwrap();
        assert_eq!(a, synthetic_bundle(&spec).unwrap());
        let b = synthetic_bundle(&SyntheticSpec { seed: 6, ..spec }).unwrap();
        assert_ne!(a, b);
    }
}
