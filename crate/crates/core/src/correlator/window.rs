/// Pixel displacement `r2 - r1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Offset {
    pub dx: i32,
    pub dy: i32,
}

impl Offset {
    pub const ZERO: Offset = Offset { dx: 0, dy: 0 };

    pub const fn new(dx: i32, dy: i32) -> Self {
        Self { dx, dy }
    }

    /// Chebyshev length.
    pub fn radius(self) -> u32 {
        self.dx.unsigned_abs().max(self.dy.unsigned_abs())
    }
}

impl std::ops::Neg for Offset {
    type Output = Offset;

    fn neg(self) -> Offset {
        Offset::new(-self.dx, -self.dy)
    }
}

/// Square offset window `|d|_inf <= radius`.
///
/// Offsets are enumerated row by row (`dy` outer, `dx` inner). The upper
/// half (`dy > 0`, or `dy == 0` and `dx >= 0`) is exactly the tail of that
/// order starting at the zero offset, which is how symmetric quantities are
/// stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    radius: usize,
}

impl Window {
    pub fn new(radius: usize) -> Self {
        Self { radius }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn len(&self) -> usize {
        self.side() * self.side()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn half_len(&self) -> usize {
        self.len() / 2 + 1
    }

    pub fn contains(&self, off: Offset) -> bool {
        off.radius() as usize <= self.radius
    }

    pub fn index(&self, off: Offset) -> Option<usize> {
        if !self.contains(off) {
            return None;
        }
        let r = self.radius as i32;
        Some(((off.dy + r) * self.side() as i32 + off.dx + r) as usize)
    }

    pub fn offset(&self, index: usize) -> Offset {
        let r = self.radius as i32;
        let side = self.side();
        Offset::new((index % side) as i32 - r, (index / side) as i32 - r)
    }

    /// Index within the upper half, for offsets that belong to it.
    pub fn half_index(&self, off: Offset) -> Option<usize> {
        let center = self.len() / 2;
        self.index(off).and_then(|i| i.checked_sub(center))
    }

    pub fn offsets(&self) -> impl Iterator<Item = Offset> + '_ {
        (0..self.len()).map(|i| self.offset(i))
    }

    pub fn half_offsets(&self) -> impl Iterator<Item = Offset> + '_ {
        (self.len() / 2..self.len()).map(|i| self.offset(i))
    }
}
