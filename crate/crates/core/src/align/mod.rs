//! Spatial and photometric alignment of the ultra-wide view to the main
//! view: feature-based homography, dense pyramidal flow, forward-backward
//! confidence and composition into an aligned pair.

mod features;
mod flow;
mod homography;

pub use features::{detect_and_match, Correspondence};
pub use flow::{fb_confidence, pyramid_flow, warp_flow, FlowField, FlowParams};
pub use homography::{
    estimate_homography_dlt, estimate_homography_ransac, warp_homography, Homography,
    RansacParams, Warped,
};

use crate::imaging::{histogram_match, Image, ScalarMap};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default)]
pub struct AlignConfig {
    pub ransac: RansacParams,
    pub flow: FlowParams,
    /// Scaling threshold in the forward-backward confidence test; the
    /// round trip must return within 1/t pixels.
    pub conf_t: f64,
}

impl AlignConfig {
    pub fn with_seed(seed: u64) -> Self {
        AlignConfig {
            ransac: RansacParams {
                seed,
                ..Default::default()
            },
            flow: FlowParams::default(),
            conf_t: 1.0,
        }
    }
}

/// Result of aligning an ultra-wide image onto the main view.
#[derive(Clone, Debug)]
pub struct AlignedPair {
    pub main: Image,
    pub aligned_ultra: Image,
    /// Binary per-pixel confidence on the main grid: forward-backward
    /// consistent and warp-valid.
    pub confidence: ScalarMap,
    /// Estimated ultra -> main homography.
    pub homography: Homography,
    /// Flow on the main grid pointing into the homography-warped ultra
    /// image; this is the field used for the final warp.
    pub flow_main_to_ultra: FlowField,
    /// Reverse flow used by the consistency check.
    pub flow_ultra_to_main: FlowField,
}

/// Full alignment chain: homography warp, dense flow warp, histogram
/// matching, with a confidence mask from forward-backward consistency
/// intersected with warp validity.
pub fn align_pair(main: &Image, ultra: &Image, cfg: &AlignConfig) -> Result<AlignedPair> {
    if main.channels() != ultra.channels() {
        return Err(Error::Shape("align_pair: channel counts differ".into()));
    }
    let matches = detect_and_match(ultra, main);
    let homography = estimate_homography_ransac(&matches, &cfg.ransac)?;
    let coarse = warp_homography(ultra, &homography)?;

    let flow_main_to_ultra = pyramid_flow(main, &coarse.image, &cfg.flow)?;
    let flow_ultra_to_main = pyramid_flow(&coarse.image, main, &cfg.flow)?;
    let confidence = fb_confidence(&flow_main_to_ultra, &flow_ultra_to_main, cfg.conf_t)?;

    let warped = warp_flow(&coarse.image, &flow_main_to_ultra)?;
    // Validity of the homography warp carried through the flow warp.
    let coarse_valid_img = Image::from_clamped(
        main.height(),
        main.width(),
        1,
        crate::imaging::Encoding::Display,
        coarse.validity.data().to_vec(),
    )?;
    let valid_through_flow = warp_flow(&coarse_valid_img, &flow_main_to_ultra)?;

    let aligned = histogram_match(&warped.image, main)?;

    let mask: Vec<f64> = confidence
        .data()
        .iter()
        .zip(warped.validity.data())
        .zip(valid_through_flow.image.data())
        .map(|((&c, &v), &hv)| {
            if c > 0.5 && v > 0.5 && hv > 0.999 {
                1.0
            } else {
                0.0
            }
        })
        .collect();

    Ok(AlignedPair {
        main: main.clone(),
        aligned_ultra: aligned,
        confidence: ScalarMap::new(main.height(), main.width(), mask)?,
        homography,
        flow_main_to_ultra,
        flow_ultra_to_main,
    })
}
