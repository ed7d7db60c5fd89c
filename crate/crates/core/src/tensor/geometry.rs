use crate::error::{Error, Result};

/// Spatial padding of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PaddingMode {
    /// No padding: `OH = IH - KH + 1`.
    Valid,
    /// Zero padding keeping `OH = IH`; `(KH - 1) / 2` rows go before, the rest after.
    Same,
}

impl PaddingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PaddingMode::Valid => "valid",
            PaddingMode::Same => "same",
        }
    }
}

impl std::str::FromStr for PaddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valid" => Ok(PaddingMode::Valid),
            "same" | "same-zero" => Ok(PaddingMode::Same),
            other => Err(Error::domain(format!("unknown padding mode `{other}`"))),
        }
    }
}

/// Resolved shapes of one stride-1 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub ih: usize,
    pub iw: usize,
    pub ic: usize,
    pub kh: usize,
    pub kw: usize,
    pub oc: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn new(input: [usize; 4], kernel: [usize; 4], pad: PaddingMode) -> Result<Self> {
        let [batch, ih, iw, ic] = input;
        let [kh, kw, kic, oc] = kernel;
        if ic != kic {
            return Err(Error::shape(format!(
                "input has {ic} channels but kernel expects {kic}"
            )));
        }
        let (oh, ow, pad_top, pad_left) = match pad {
            PaddingMode::Valid => {
                if kh > ih || kw > iw {
                    return Err(Error::shape(format!(
                        "kernel {kh}x{kw} larger than input {ih}x{iw} under valid padding"
                    )));
                }
                (ih - kh + 1, iw - kw + 1, 0, 0)
            }
            PaddingMode::Same => (ih, iw, (kh - 1) / 2, (kw - 1) / 2),
        };
        Ok(Self {
            batch,
            ih,
            iw,
            ic,
            kh,
            kw,
            oc,
            oh,
            ow,
            pad_top,
            pad_left,
        })
    }

    pub fn output_dims(&self) -> [usize; 4] {
        [self.batch, self.oh, self.ow, self.oc]
    }

    pub fn input_dims(&self) -> [usize; 4] {
        [self.batch, self.ih, self.iw, self.ic]
    }

    pub fn kernel_dims(&self) -> [usize; 4] {
        [self.kh, self.kw, self.ic, self.oc]
    }

    /// Input row read by output row `oh` through kernel row `kh`, if inside the image.
    #[inline]
    pub fn in_row(&self, oh: usize, kh: usize) -> Option<usize> {
        (oh + kh).checked_sub(self.pad_top).filter(|&r| r < self.ih)
    }

    #[inline]
    pub fn in_col(&self, ow: usize, kw: usize) -> Option<usize> {
        (ow + kw).checked_sub(self.pad_left).filter(|&c| c < self.iw)
    }

    /// Dense multiply-accumulate count of the forward product; padded taps count.
    pub fn macs(&self) -> u64 {
        (self.batch * self.oh * self.ow * self.oc * self.kh * self.kw * self.ic) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_split() {
        let g = ConvGeometry::new([1, 5, 5, 1], [4, 4, 1, 1], PaddingMode::Same).unwrap();
        assert_eq!((g.oh, g.ow, g.pad_top, g.pad_left), (5, 5, 1, 1));
        let g = ConvGeometry::new([1, 5, 5, 1], [5, 5, 1, 1], PaddingMode::Same).unwrap();
        assert_eq!(g.pad_top, 2);
        assert_eq!(g.in_row(0, 0), None);
        assert_eq!(g.in_row(0, 2), Some(0));
        assert_eq!(g.in_row(4, 4), None);
    }

    #[test]
    fn valid_rejects_large_kernel() {
        assert!(ConvGeometry::new([1, 2, 2, 1], [3, 3, 1, 1], PaddingMode::Valid).is_err());
        assert!(ConvGeometry::new([1, 3, 3, 2], [3, 3, 1, 1], PaddingMode::Valid).is_err());
    }
}
