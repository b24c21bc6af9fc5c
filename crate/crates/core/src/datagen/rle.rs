//! Uncompressed column-major run-length encoding, COCO style.
//!
//! Runs alternate background/foreground and always start with a (possibly
//! empty) background run.

use serde::{Deserialize, Serialize};

use super::mask::BinaryMask;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    /// `[height, width]`.
    pub size: [usize; 2],
    pub counts: Vec<u32>,
}

pub fn rle_encode(mask: &BinaryMask) -> Rle {
    let mut counts = Vec::new();
    let mut current = 0u8;
    let mut run = 0u32;
    for c in 0..mask.width {
        for r in 0..mask.height {
            let v = mask.data[r * mask.width + c].min(1);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    Rle {
        size: [mask.height, mask.width],
        counts,
    }
}

pub fn rle_decode(rle: &Rle, height: usize, width: usize) -> Result<BinaryMask> {
    let expected = (height * width) as u64;
    let got: u64 = rle.counts.iter().map(|&c| c as u64).sum();
    if got != expected || rle.size != [height, width] {
        return Err(Error::RleLength { got, expected });
    }
    let mut mask = BinaryMask::zeros(width, height);
    let mut pos = 0usize;
    for (i, &run) in rle.counts.iter().enumerate() {
        if i % 2 == 1 {
            for p in pos..pos + run as usize {
                let (c, r) = (p / height, p % height);
                mask.data[r * width + c] = 1;
            }
        }
        pos += run as usize;
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn trivial_masks() {
        let bg = BinaryMask::zeros(5, 3);
        assert_eq!(rle_encode(&bg).counts, vec![15]);
        let fg = BinaryMask::from_fn(5, 3, |_, _| true);
        assert_eq!(rle_encode(&fg).counts, vec![0, 15]);
    }

    #[test]
    fn column_major_order() {
        // 2×2, only (col 0,row 1) and (col 1,row 0) set → column-major bits 0,1,1,0
        let mut m = BinaryMask::zeros(2, 2);
        m.set(0, 1, true);
        m.set(1, 0, true);
        assert_eq!(rle_encode(&m).counts, vec![1, 2, 1]);
    }

    #[test]
    fn length_mismatch_rejected() {
        let rle = Rle {
            size: [2, 2],
            counts: vec![1, 2],
        };
        assert!(matches!(rle_decode(&rle, 2, 2), Err(Error::RleLength { .. })));
    }

    proptest! {
        #[test]
        fn round_trip(w in 1usize..24, h in 1usize..24, bits in proptest::collection::vec(any::<bool>(), 576)) {
            let m = BinaryMask::from_fn(w, h, |c, r| bits[r * 24 + c]);
            let rle = rle_encode(&m);
            prop_assert_eq!(rle_decode(&rle, h, w).unwrap(), m);
        }
    }
}
