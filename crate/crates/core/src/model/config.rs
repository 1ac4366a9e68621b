use std::fmt;
use std::str::FromStr;

use crate::attention::WindowKind;
use crate::config::{join, parse_list, parse_value, unknown_key, KvSection};
use crate::error::{Error, Result};

/// Network used by one pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RestorerKind {
    Mmt,
    Unet,
}

impl fmt::Display for RestorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RestorerKind::Mmt => "MMT",
            RestorerKind::Unet => "UNet",
        })
    }
}

impl FromStr for RestorerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mmt" => Ok(RestorerKind::Mmt),
            "unet" => Ok(RestorerKind::Unet),
            _ => Err(format!("expected MMT or UNet, got `{s}`")),
        }
    }
}

/// Attention kinds of the two blocks in a block pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttentionOrder {
    /// Micro attention only.
    Mic,
    /// Macro attention only.
    Mac,
    MicMac,
    MacMic,
}

impl AttentionOrder {
    pub const ALL: [AttentionOrder; 4] = [Self::Mic, Self::Mac, Self::MicMac, Self::MacMic];

    pub fn kinds(self) -> [WindowKind; 2] {
        use WindowKind::*;
        match self {
            Self::Mic => [Micro, Micro],
            Self::Mac => [Macro, Macro],
            Self::MicMac => [Micro, Macro],
            Self::MacMic => [Macro, Micro],
        }
    }
}

impl fmt::Display for AttentionOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mic => "Mic",
            Self::Mac => "Mac",
            Self::MicMac => "MicMac",
            Self::MacMic => "MacMic",
        })
    }
}

impl FromStr for AttentionOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "mic" => Ok(Self::Mic),
            "mac" => Ok(Self::Mac),
            "micmac" => Ok(Self::MicMac),
            "macmic" => Ok(Self::MacMic),
            _ => Err(format!("unknown attention order `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Base channel count `C`; encoder stages use `C`, `2C`, `4C`.
    pub channels: usize,
    /// Block pairs per encoder stage (mirrored in the decoder).
    pub depths: [usize; 3],
    /// Micro window `D`.
    pub micro_window: usize,
    /// Macro grid `G`.
    pub macro_grid: usize,
    pub head_dim: usize,
    /// Pyramid levels `N`, one restorer stage per level.
    pub levels: usize,
    /// Restorer of each stage, coarsest stage first.
    pub arrangement: Vec<RestorerKind>,
    pub laplacian: bool,
    pub order: AttentionOrder,
    pub output_projection: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            depths: [1, 1, 1],
            micro_window: 4,
            macro_grid: 4,
            head_dim: 8,
            levels: 4,
            arrangement: default_arrangement(4),
            laplacian: true,
            order: AttentionOrder::MacMic,
            output_projection: true,
        }
    }
}

/// Transformer restorers on every stage but the last, which is convolutional.
pub fn default_arrangement(levels: usize) -> Vec<RestorerKind> {
    (0..levels)
        .map(|s| if s + 1 == levels { RestorerKind::Unet } else { RestorerKind::Mmt })
        .collect()
}

impl ModelConfig {
    /// Input sides must be multiples of this: `N-1` pyramid halvings and two
    /// pooling steps inside each restorer.
    pub fn size_multiple(&self) -> usize {
        (1 << (self.levels - 1)) * 4
    }

    /// Spatial size handled by stage `s` (1-based, coarsest first).
    pub fn stage_size(&self, s: usize, h: usize, w: usize) -> (usize, usize) {
        let f = 1 << (self.levels - s);
        (h / f, w / f)
    }

    /// Checks that an `h×w` input runs through every stage.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let m = self.size_multiple();
        if !h.is_multiple_of(m) || !w.is_multiple_of(m) || h == 0 || w == 0 {
            return Err(Error::dim("mmht", format!("input {h}x{w} must be a multiple of {m}")));
        }
        for s in 1..=self.levels {
            if self.arrangement[s - 1] != RestorerKind::Mmt {
                continue;
            }
            let (sh, sw) = self.stage_size(s, h, w);
            for level in 0..3 {
                let (lh, lw) = (sh >> level, sw >> level);
                for size in [self.micro_window, self.macro_grid] {
                    let fitted = fit_window(size, lh, lw);
                    if lh % fitted != 0 || lw % fitted != 0 {
                        return Err(Error::dim(
                            "mmht",
                            format!("window {size} does not partition a {lh}x{lw} map in stage {s}"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Smallest size `>= h×w` accepted by [`ModelConfig::check_input`].
    pub fn padded_size(&self, h: usize, w: usize) -> (usize, usize) {
        let m = self.size_multiple();
        let round = |v: usize| v.div_ceil(m).max(1) * m;
        let (h0, w0) = (round(h), round(w));
        // Fewest added multiples of `m` first, taller before wider.
        for extra in 0.. {
            for a in (0..=extra).rev() {
                let (ph, pw) = (h0 + a * m, w0 + (extra - a) * m);
                if self.check_input(ph, pw).is_ok() {
                    return (ph, pw);
                }
            }
        }
        unreachable!("multiples of m times the window sides always fit")
    }
}

/// Window side used on an `h×w` map: windows larger than the map shrink to
/// the largest common divisor, which makes them global.
pub fn fit_window(size: usize, h: usize, w: usize) -> usize {
    if size > h || size > w {
        gcd(gcd(h, w), size)
    } else {
        size
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl KvSection for ModelConfig {
    const PREFIX: &'static str = "model";

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "C" => self.channels = parse_value(key, value)?,
            "depths" => {
                let d: Vec<usize> = parse_list(key, value)?;
                self.depths = d
                    .try_into()
                    .map_err(|_| Error::Config("`model.depths` needs three entries".into()))?;
            }
            "D" => self.micro_window = parse_value(key, value)?,
            "G" => self.macro_grid = parse_value(key, value)?,
            "head_dim" => self.head_dim = parse_value(key, value)?,
            "N" => {
                let n = parse_value(key, value)?;
                if n != self.levels && self.arrangement == default_arrangement(self.levels) {
                    self.arrangement = default_arrangement(n);
                }
                self.levels = n;
            }
            "arrangement" => self.arrangement = parse_list(key, value)?,
            "laplacian" => self.laplacian = parse_value(key, value)?,
            "order" => self.order = parse_value(key, value)?,
            "output_projection" => self.output_projection = parse_value(key, value)?,
            _ => return Err(unknown_key(Self::PREFIX, key)),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(String, String)> {
        vec![
            ("C".into(), self.channels.to_string()),
            ("depths".into(), join(&self.depths)),
            ("D".into(), self.micro_window.to_string()),
            ("G".into(), self.macro_grid.to_string()),
            ("head_dim".into(), self.head_dim.to_string()),
            ("N".into(), self.levels.to_string()),
            ("arrangement".into(), join(&self.arrangement)),
            ("laplacian".into(), self.laplacian.to_string()),
            ("order".into(), self.order.to_string()),
            ("output_projection".into(), self.output_projection.to_string()),
        ]
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.head_dim == 0 || !self.channels.is_multiple_of(self.head_dim) {
            return bad(format!("model.C = {} must be a positive multiple of model.head_dim = {}", self.channels, self.head_dim));
        }
        if self.depths.contains(&0) {
            return bad("model.depths must all be >= 1".into());
        }
        if !(2..=4).contains(&self.levels) {
            return bad(format!("model.N = {} must be in 2..=4", self.levels));
        }
        if self.arrangement.len() != self.levels {
            return bad(format!(
                "model.arrangement has {} entries for {} levels",
                self.arrangement.len(),
                self.levels
            ));
        }
        if self.micro_window == 0 || self.macro_grid == 0 {
            return bad("model.D and model.G must be >= 1".into());
        }
        Ok(())
    }
}
