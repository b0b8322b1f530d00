//! Training-time image augmentation: zero-pad, random crop, random mirror.

use rand::Rng;

use crate::error::Result;
use crate::tensor::Tensor;

/// Pads `image: [C, H, W]` by `pad` zeros on every side, crops a random
/// `H × W` window, and mirrors it horizontally with probability 1/2.
pub fn augment<R: Rng>(image: &Tensor, pad: usize, rng: &mut R) -> Result<Tensor> {
    let &[c, h, w] = image.shape() else {
        return Err(crate::Error::Rank { op: "augment", expected: 3, shape: image.shape().to_vec() });
    };
    let dy = rng.random_range(0..=2 * pad);
    let dx = rng.random_range(0..=2 * pad);
    let flip = rng.random_bool(0.5);
    let src = image.data();
    Ok(Tensor::from_fn(&[c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        let x = if flip { w - 1 - x } else { x };
        // Position in the padded canvas, shifted back into source coordinates.
        let (sy, sx) = ((y + dy) as isize - pad as isize, (x + dx) as isize - pad as isize);
        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
            0.0
        } else {
            src[(ch * h + sy as usize) * w + sx as usize]
        }
    }))
}
