use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::FieldGrid;
use crate::render::rgb_png;

pub const CLASS_NAMES: [&str; 5] = ["sitting", "standing", "strolling", "business_walking", "uncomfortable"];
pub const NO_DATA: u8 = 255;

const CLASS_COLORS: [[u8; 3]; 5] = [[26, 150, 65], [166, 217, 106], [255, 255, 191], [253, 174, 97], [215, 25, 28]];
const NO_DATA_COLOR: [u8; 3] = [128, 128, 128];

/// Class boundaries in m/s and the tolerated exceedance probability.
/// Defaults follow the Lawson LDDC ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComfortCriteria {
    pub thresholds_ms: Vec<f64>,
    pub p_exc: f64,
}

impl Default for ComfortCriteria {
    fn default() -> Self {
        Self {
            thresholds_ms: vec![2.5, 4.0, 6.0, 8.0],
            p_exc: 0.05,
        }
    }
}

impl ComfortCriteria {
    pub fn validate(&self) -> Result<()> {
        let t = &self.thresholds_ms;
        if t.len() != CLASS_NAMES.len() - 1 || t.iter().any(|v| !(v.is_finite() && *v > 0.0)) || t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(format!("need 4 strictly increasing positive thresholds, got {t:?}")));
        }
        if !(self.p_exc > 0.0 && self.p_exc < 1.0) {
            return Err(Error::InvalidConfig(format!("p_exc {} outside (0, 1)", self.p_exc)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub class: u8,
    pub name: String,
    pub color: [u8; 3],
    /// Speed that may be exceeded at most `p_exc` of the time; absent for
    /// the last class.
    pub threshold_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    pub spec_hash: String,
    pub rose: super::WindRose,
    pub criteria: ComfortCriteria,
}

/// Per-pixel comfort class, `NO_DATA` on buildings and unresolved pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComfortMap {
    pub height: usize,
    pub width: usize,
    pub classes: Vec<u8>,
    pub legend: Vec<LegendEntry>,
    pub provenance: Option<Provenance>,
}

/// JSON sidecar written next to the PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComfortSidecar {
    pub height: usize,
    pub width: usize,
    /// Pixel count per class in legend order.
    pub histogram: Vec<usize>,
    pub no_data: usize,
    pub legend: Vec<LegendEntry>,
    pub provenance: Option<Provenance>,
}

pub fn legend(criteria: &ComfortCriteria) -> Vec<LegendEntry> {
    CLASS_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| LegendEntry {
            class: i as u8,
            name: name.to_string(),
            color: CLASS_COLORS[i],
            threshold_ms: criteria.thresholds_ms.get(i).copied(),
        })
        .collect()
}

impl ComfortMap {
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; CLASS_NAMES.len()];
        for &c in &self.classes {
            if let Some(slot) = h.get_mut(c as usize) {
                *slot += 1;
            }
        }
        h
    }

    pub fn no_data(&self) -> usize {
        self.classes.iter().filter(|&&c| c == NO_DATA).count()
    }

    pub fn sidecar(&self) -> ComfortSidecar {
        ComfortSidecar {
            height: self.height,
            width: self.width,
            histogram: self.histogram(),
            no_data: self.no_data(),
            legend: self.legend.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let rgb: Vec<u8> = self
            .classes
            .iter()
            .flat_map(|&c| CLASS_COLORS.get(c as usize).copied().unwrap_or(NO_DATA_COLOR))
            .collect();
        rgb_png(&rgb, self.height, self.width)
    }

    /// The map turned one quarter counter-clockwise.
    pub fn quarter_turned(&self) -> Self {
        let n = self.height;
        let mut out = self.clone();
        for r in 0..n {
            for c in 0..n {
                out.classes[r * n + c] = self.classes[c * n + (n - 1 - r)];
            }
        }
        out
    }
}

/// Assign classes from one exceedance map per class boundary. A pixel gets
/// the first class whose upper boundary is exceeded with probability at
/// most `p_exc`; `no_data` pixels are masked.
pub fn classify(exceedance: &[FieldGrid], criteria: &ComfortCriteria, no_data: Option<&[bool]>) -> Result<ComfortMap> {
    criteria.validate()?;
    if exceedance.len() != criteria.thresholds_ms.len() {
        return Err(Error::CriteriaShapeMismatch(format!(
            "{} exceedance maps for {} thresholds",
            exceedance.len(),
            criteria.thresholds_ms.len()
        )));
    }
    let (h, w) = (exceedance[0].height(), exceedance[0].width());
    if exceedance.iter().any(|e| e.height() != h || e.width() != w || e.channel_count() != 1)
        || no_data.is_some_and(|m| m.len() != h * w)
    {
        return Err(Error::CriteriaShapeMismatch("exceedance maps and mask differ in shape".into()));
    }
    // compare at the storage precision so a pixel exactly at p_exc stays inside
    let limit = criteria.p_exc as f32;
    let classes = (0..h * w)
        .map(|i| {
            if no_data.is_some_and(|m| m[i]) {
                return NO_DATA;
            }
            exceedance
                .iter()
                .position(|e| e.data()[i] <= limit)
                .unwrap_or(CLASS_NAMES.len() - 1) as u8
        })
        .collect();
    Ok(ComfortMap {
        height: h,
        width: w,
        classes,
        legend: legend(criteria),
        provenance: None,
    })
}
