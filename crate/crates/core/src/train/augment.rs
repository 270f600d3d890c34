//! The eight flip/rotation symmetries of the square, acting on the spatial
//! axes of NCHW tensors.

use crate::real::Real;
use crate::tensor::Tensor;

/// Bit 2: transpose, bit 0: horizontal flip, bit 1: vertical flip, applied
/// in that order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Augment(u8);

type Mat = [[i8; 2]; 2];

fn mul(a: Mat, b: Mat) -> Mat {
    let mut c = [[0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

impl Augment {
    pub const IDENTITY: Augment = Augment(0);

    pub fn all() -> impl Iterator<Item = Augment> {
        (0..8).map(Augment)
    }

    pub fn from_index(i: u8) -> Option<Self> {
        (i < 8).then_some(Augment(i))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn transposes(self) -> bool {
        self.0 & 4 != 0
    }

    /// Action on (row, column) offsets from the centre.
    fn matrix(self) -> Mat {
        let t = if self.transposes() { [[0, 1], [1, 0]] } else { [[1, 0], [0, 1]] };
        let h = [[1, 0], [0, if self.0 & 1 != 0 { -1 } else { 1 }]];
        let v = [[if self.0 & 2 != 0 { -1 } else { 1 }, 0], [0, 1]];
        mul(v, mul(h, t))
    }

    fn from_matrix(m: Mat) -> Self {
        Self::all().find(|a| a.matrix() == m).expect("dihedral group is closed")
    }

    /// The augmentation equal to applying `first`, then `self`.
    pub fn after(self, first: Augment) -> Augment {
        Self::from_matrix(mul(self.matrix(), first.matrix()))
    }

    pub fn inverse(self) -> Augment {
        Self::all()
            .find(|a| a.after(self) == Self::IDENTITY)
            .expect("every element has an inverse")
    }

    pub fn apply<E: Real>(self, t: &Tensor<E>) -> Tensor<E> {
        let [n, c, h, w] = t.shape();
        let (oh, ow) = if self.transposes() { (w, h) } else { (h, w) };
        let (hf, vf) = (self.0 & 1 != 0, self.0 & 2 != 0);
        Tensor::from_fn([n, c, oh, ow], |[b, ch, y, x]| {
            let y = if vf { oh - 1 - y } else { y };
            let x = if hf { ow - 1 - x } else { x };
            let (sy, sx) = if self.transposes() { (x, y) } else { (y, x) };
            t.at([b, ch, sy, sx])
        })
    }
}
