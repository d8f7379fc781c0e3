use rand::Rng;

use super::DataError;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Augmentation {
    /// Quarter turn counter-clockwise; square patches only.
    Rot90,
    HFlip,
    VFlip,
}

impl Augmentation {
    pub const ALL: [Augmentation; 3] = [Self::Rot90, Self::HFlip, Self::VFlip];

    /// One of the three techniques, chosen uniformly.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::ALL[rng.random_range(0..Self::ALL.len())]
    }

    pub fn apply(self, t: &Tensor) -> Result<Tensor, DataError> {
        let (h, w, c) = (t.height(), t.width(), t.channels());
        Ok(match self {
            Self::Rot90 => {
                if h != w {
                    return Err(DataError::NotSquare { height: h, width: w });
                }
                Tensor::from_fn(h, w, c, |y, x, ch| t.get(x, w - 1 - y, ch))
            }
            Self::HFlip => Tensor::from_fn(h, w, c, |y, x, ch| t.get(y, w - 1 - x, ch)),
            Self::VFlip => Tensor::from_fn(h, w, c, |y, x, ch| t.get(h - 1 - y, x, ch)),
        })
    }
}
