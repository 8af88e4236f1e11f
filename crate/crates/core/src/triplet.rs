use std::fmt;

/// Factorized index of one subword: one codebook index per channel (R, G, B).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default)]
pub struct Triplet(pub [u16; 3]);

impl Triplet {
    pub fn new(r: u16, g: u16, b: u16) -> Self {
        Self([r, g, b])
    }

    pub fn r(self) -> u16 {
        self.0[0]
    }

    pub fn g(self) -> u16 {
        self.0[1]
    }

    pub fn b(self) -> u16 {
        self.0[2]
    }

    pub fn in_range(self, k: usize) -> bool {
        self.0.iter().all(|&c| (c as usize) < k)
    }

    /// Row-major position in the `K³` triplet space.
    pub fn flat_index(self, k: usize) -> usize {
        (self.0[0] as usize * k + self.0[1] as usize) * k + self.0[2] as usize
    }

    pub fn from_flat_index(i: usize, k: usize) -> Self {
        Self([(i / (k * k)) as u16, (i / k % k) as u16, (i % k) as u16])
    }
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.0[0], self.0[1], self.0[2])
    }
}

impl std::str::FromStr for Triplet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 3 {
            return Err(format!("expected r,g,b, found {s:?}"));
        }
        let mut out = [0u16; 3];
        for (slot, part) in out.iter_mut().zip(parts) {
            *slot = part
                .trim()
                .parse()
                .map_err(|_| format!("bad triplet component {part:?}"))?;
        }
        Ok(Self(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_index_round_trip() {
        for i in 0..16usize.pow(3) {
            let t = Triplet::from_flat_index(i, 16);
            assert_eq!(t.flat_index(16), i);
        }
        assert_eq!("96,42,127".parse::<Triplet>().unwrap(), Triplet::new(96, 42, 127));
        assert!("1,2".parse::<Triplet>().is_err());
    }
}
