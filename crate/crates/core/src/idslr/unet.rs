//! Two-scale UNET shared by the denoiser and the segmentation network.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tape::{ConvSpec, NodeId, Tape};
use crate::error::{Error, Result};

/// conv3+ReLU x2 at `width`, 2x2 mean pool, conv3+ReLU x2 at `2 width`,
/// nearest upsample, skip concatenation, conv3+ReLU x2 at `width`, 1x1 conv.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnetArch {
    pub in_channels: usize,
    pub out_channels: usize,
    pub width: usize,
}

pub const DEFAULT_WIDTH: usize = 16;

impl UnetArch {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            width: DEFAULT_WIDTH,
        }
    }

    /// Layer specs relative to offset 0.
    pub fn layers(&self) -> [ConvSpec; 7] {
        let w = self.width;
        let shapes = [
            (self.in_channels, w, 3),
            (w, w, 3),
            (w, 2 * w, 3),
            (2 * w, 2 * w, 3),
            (3 * w, w, 3),
            (w, w, 3),
            (w, self.out_channels, 1),
        ];
        let mut offset = 0;
        shapes.map(|(cin, cout, k)| {
            let s = ConvSpec { offset, cin, cout, k };
            offset += s.len();
            s
        })
    }

    pub fn n_params(&self) -> usize {
        self.layers().iter().map(ConvSpec::len).sum()
    }

    /// Hex SHA-256 of the layer list; changes whenever a shape changes.
    pub fn signature(&self) -> String {
        let desc: Vec<String> = self
            .layers()
            .iter()
            .map(|l| format!("conv{}:{}->{}", l.k, l.cin, l.cout))
            .collect();
        let text = format!("unet2/avgpool/nearest/relu/{}", desc.join(","));
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// He-normal kernels and zero biases. With `zero_last` the 1x1 output
    /// layer starts at zero so the network output is exactly zero.
    pub fn init(&self, rng: &mut impl Rng, zero_last: bool) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params()];
        let layers = self.layers();
        for (i, l) in layers.iter().enumerate() {
            if zero_last && i == layers.len() - 1 {
                continue;
            }
            let fan_in = (l.cin * l.k * l.k) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            for v in &mut p[l.offset..l.offset + l.weight_len()] {
                *v = normal.sample(rng);
            }
        }
        p
    }

    pub fn check(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.width == 0 {
            return Err(Error::Config("UNET channel counts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Records the network on `tape` with parameters starting at `base`.
pub fn record_unet(tape: &mut Tape, x: NodeId, arch: &UnetArch, base: usize) -> Result<NodeId> {
    let l = arch.layers().map(|s| ConvSpec {
        offset: s.offset + base,
        ..s
    });
    let (h, w) = {
        let v = tape.value(x);
        (v.h, v.w)
    };
    let a = tape.conv(x, l[0])?;
    let a = tape.relu(a)?;
    let a = tape.conv(a, l[1])?;
    let skip = tape.relu(a)?;
    let d = tape.avg_pool(skip)?;
    let d = tape.conv(d, l[2])?;
    let d = tape.relu(d)?;
    let d = tape.conv(d, l[3])?;
    let d = tape.relu(d)?;
    let u = tape.upsample(d, h, w);
    let u = tape.concat(skip, u)?;
    let u = tape.conv(u, l[4])?;
    let u = tape.relu(u)?;
    let u = tape.conv(u, l[5])?;
    let u = tape.relu(u)?;
    tape.conv(u, l[6])
}
