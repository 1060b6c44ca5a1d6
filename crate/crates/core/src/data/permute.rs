use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::ImageDataset;
use crate::rng::substream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockPermutation {
    /// Every block stays put.
    Identity,
    /// An independent uniform shuffle per image, drawn from the `"permute"`
    /// sub-stream of this seed.
    Random(u64),
}

/// Moves the `block×block` tiles of one `[C, H, W]` image: output tile `t`
/// is input tile `perm[t]`, tiles numbered row-major. All channels move
/// together.
pub fn permute_blocks(image: &[f64], channels: usize, h: usize, w: usize, block: usize, perm: &[usize]) -> Result<Vec<f64>> {
    if block == 0 || h % block != 0 || w % block != 0 {
        return Err(Error::invalid(format!("{h}×{w} image is not divisible into {block}×{block} blocks")));
    }
    if image.len() != channels * h * w {
        return Err(Error::shape("permute_blocks", format!("{} values for {channels}×{h}×{w}", image.len())));
    }
    let (bh, bw) = (h / block, w / block);
    let mut seen = alloc::vec![false; bh * bw];
    if perm.len() != bh * bw || perm.iter().any(|&p| p >= seen.len() || core::mem::replace(&mut seen[p], true)) {
        return Err(Error::invalid(format!("not a permutation of {} blocks", bh * bw)));
    }
    let mut out = alloc::vec![0.0; image.len()];
    for c in 0..channels {
        let plane = c * h * w;
        for (t, &src) in perm.iter().enumerate() {
            let (ty, tx) = (t / bw * block, t % bw * block);
            let (sy, sx) = (src / bw * block, src % bw * block);
            for dy in 0..block {
                let d = plane + (ty + dy) * w + tx;
                let s = plane + (sy + dy) * w + sx;
                out[d..d + block].copy_from_slice(&image[s..s + block]);
            }
        }
    }
    Ok(out)
}

/// Splits each image into non-overlapping `block×block` tiles (16 tiles of
/// 8×8 on a 32×32 image) and shuffles them, one permutation per image.
pub fn block_permute(ds: &ImageDataset, block: usize, mode: BlockPermutation) -> Result<ImageDataset> {
    let (c, h, w) = (ds.channels(), ds.height(), ds.width());
    if block == 0 || h % block != 0 || w % block != 0 {
        return Err(Error::invalid(format!("{h}×{w} images are not divisible into {block}×{block} blocks")));
    }
    let tiles = (h / block) * (w / block);
    let mut rng = match mode {
        BlockPermutation::Random(seed) => Some(substream(seed, "permute")),
        BlockPermutation::Identity => None,
    };
    let mut images = ds.images.clone();
    let mut perm: Vec<usize> = (0..tiles).collect();
    for i in 0..ds.len() {
        if let Some(rng) = rng.as_mut() {
            perm.shuffle(rng);
        }
        let moved = permute_blocks(ds.images.item(i), c, h, w, block, &perm)?;
        images.item_mut(i).copy_from_slice(&moved);
    }
    ImageDataset::from_normalized(images, ds.labels.clone(), format!("{}-permuted", ds.name), ds.normalization.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Normalization;
    use crate::nn::normal_tensor;
    use crate::rng::substream;

    fn dataset(n: usize) -> ImageDataset {
        let px = normal_tensor(&[n, 3, 32, 32], 1.0, &mut substream(5, "px"));
        ImageDataset::from_normalized(px, alloc::vec![0; n], "d", Normalization::identity(3)).unwrap()
    }

    fn sorted(v: &[f64]) -> Vec<f64> {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn identity_leaves_images_unchanged() {
        let ds = dataset(3);
        assert_eq!(block_permute(&ds, 8, BlockPermutation::Identity).unwrap().images, ds.images);
    }

    #[test]
    fn random_permutation_moves_sixteen_blocks_and_keeps_pixels() {
        let ds = dataset(4);
        let p = block_permute(&ds, 8, BlockPermutation::Random(1)).unwrap();
        assert_ne!(p.images, ds.images);
        for i in 0..4 {
            for c in 0..3 {
                let r = c * 1024..(c + 1) * 1024;
                assert_eq!(sorted(&ds.images.item(i)[r.clone()]), sorted(&p.images.item(i)[r]));
            }
            // Every output tile is some input tile.
            let tile = |img: &[f64], t: usize| -> Vec<f64> {
                (0..8).flat_map(|dy| img[(t / 4 * 8 + dy) * 32 + t % 4 * 8..][..8].to_vec()).collect()
            };
            for t in 0..16 {
                let out = tile(p.images.item(i), t);
                assert!((0..16).any(|s| tile(ds.images.item(i), s) == out));
            }
        }
        assert_eq!(p, block_permute(&ds, 8, BlockPermutation::Random(1)).unwrap());
        assert_ne!(p, block_permute(&ds, 8, BlockPermutation::Random(2)).unwrap());
    }

    #[test]
    fn explicit_permutation() {
        // 1 channel 2×4 image, 2×2 blocks: tiles [0 1].
        let img = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        assert_eq!(permute_blocks(&img, 1, 2, 4, 2, &[1, 0]).unwrap(), alloc::vec![3.0, 4.0, 1.0, 2.0, 7.0, 8.0, 5.0, 6.0]);
        assert!(permute_blocks(&img, 1, 2, 4, 2, &[0, 0]).is_err());
        assert!(permute_blocks(&img, 1, 2, 4, 3, &[0]).is_err());
    }

    #[test]
    fn divisibility_is_checked() {
        assert!(block_permute(&dataset(1), 7, BlockPermutation::Identity).is_err());
    }
}
