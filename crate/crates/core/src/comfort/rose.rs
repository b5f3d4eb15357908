use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compass sectors in file order, clockwise from north. A sector names the
/// direction the wind blows from.
pub const SECTORS: [&str; 8] = ["N", "NE", "E", "SE", "S", "SW", "W", "NW"];

/// Sector whose wind enters from the left edge of the raster, the direction
/// every training sample was simulated for.
pub const TRAINING_SECTOR: usize = 6;

const SUM_TOLERANCE: f64 = 1e-6;

/// Counter-clockwise rotation, in degrees, that brings wind from `sector`
/// onto the left edge.
pub fn sector_rotation(sector: usize) -> i64 {
    (sector as i64 * 45 - 270).rem_euclid(360)
}

pub fn sector_index(name: &str) -> Result<usize> {
    SECTORS
        .iter()
        .position(|s| s.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::UnknownName {
            kind: "sector",
            name: name.to_string(),
        })
}

/// Eight-sector wind climate at the reference height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindRose {
    pub sectors: Vec<String>,
    /// Upper edge of each speed bin in m/s. The first bin starts at zero.
    pub bin_edges_ms: Vec<f64>,
    /// `freq[sector][bin]`, summing to one.
    pub freq: Vec<Vec<f64>>,
}

impl WindRose {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let rose: Self = serde_json::from_slice(bytes)?;
        rose.validate()?;
        Ok(rose)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sectors.len() != 8 || self.sectors.iter().zip(SECTORS).any(|(a, b)| !a.eq_ignore_ascii_case(b)) {
            return Err(Error::InvalidConfig(format!("wind rose sectors must be {SECTORS:?}, got {:?}", self.sectors)));
        }
        let edges = &self.bin_edges_ms;
        if edges.is_empty() || edges.iter().any(|e| !e.is_finite() || *e < 0.0) || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(format!("bin edges {edges:?} must be non-negative and strictly increasing")));
        }
        if self.freq.len() != 8 || self.freq.iter().any(|row| row.len() != edges.len()) {
            return Err(Error::UnnormalizedRose(format!("frequency table must be 8 x {}", edges.len())));
        }
        if self.freq.iter().flatten().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::UnnormalizedRose("negative or non-finite frequency".into()));
        }
        let total: f64 = self.freq.iter().flatten().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::UnnormalizedRose(format!("frequencies sum to {total}")));
        }
        Ok(())
    }

    /// Representative speed of each bin: its midpoint.
    pub fn bin_speeds(&self) -> Vec<f64> {
        let mut lower = 0.0;
        self.bin_edges_ms
            .iter()
            .map(|&upper| {
                let mid = 0.5 * (lower + upper);
                lower = upper;
                mid
            })
            .collect()
    }

    /// Whether any wind with non-zero speed comes from `sector`.
    pub fn sector_contributes(&self, sector: usize) -> bool {
        self.bin_speeds().iter().zip(&self.freq[sector]).any(|(&v, &f)| v > 0.0 && f > 0.0)
    }

    /// The rose as seen from geometry turned `quarter_turns` times
    /// counter-clockwise: wind from sector `s` now arrives from `s - 2k`.
    pub fn co_rotated(&self, quarter_turns: i64) -> Self {
        let mut out = self.clone();
        for s in 0..8 {
            let t = (s as i64 - 2 * quarter_turns).rem_euclid(8) as usize;
            out.freq[t] = self.freq[s].clone();
        }
        out
    }

    /// All wind from one sector at one bin.
    pub fn single(sector: usize, bin_edges_ms: Vec<f64>, bin: usize) -> Self {
        let mut freq = vec![vec![0.0; bin_edges_ms.len()]; 8];
        freq[sector][bin] = 1.0;
        Self {
            sectors: SECTORS.iter().map(|s| s.to_string()).collect(),
            bin_edges_ms,
            freq,
        }
    }

    /// Calm climate: every observation in a zero-speed bin.
    pub fn calm() -> Self {
        let mut rose = Self::single(0, vec![0.0, 2.0, 4.0], 0);
        for row in &mut rose.freq {
            row[0] = 0.125;
        }
        rose
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn west_is_the_identity() {
        assert_eq!(sector_rotation(TRAINING_SECTOR), 0);
        assert_eq!(sector_rotation(0), 90);
        assert_eq!(sector_rotation(2), 180);
        assert_eq!(sector_rotation(7), 45);
    }

    #[test]
    fn normalization_is_enforced() {
        let mut rose = WindRose::single(3, vec![2.0, 5.0], 1);
        rose.validate().unwrap();
        rose.freq[0][0] = 0.1;
        assert!(matches!(rose.validate(), Err(Error::UnnormalizedRose(_))));
        WindRose::calm().validate().unwrap();
    }

    #[test]
    fn co_rotation_moves_north_to_west() {
        let rose = WindRose::single(0, vec![3.0], 0).co_rotated(1);
        assert_eq!(rose.freq[6][0], 1.0);
        assert_eq!(rose.co_rotated(3), WindRose::single(0, vec![3.0], 0));
    }
}
