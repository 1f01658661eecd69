//! Two-step sliding-window skeleton filter.
//!
//! Step one repairs missing points at the newest frame of the window: a point
//! that vanishes after being seen in every earlier window frame is held from
//! the previous frame, at most `rbar` consecutive times; once that budget is
//! exceeded the point is dropped from the whole window. A point that appears
//! after being absent from every earlier window frame is back-filled over the
//! window. Step two smooths each point over the window with a Gaussian kernel
//! renormalized over the present taps and emits the center frame.
//!
//! The replacement counter counts the current miss before it is tested, so a
//! point is held forward at most `rbar` times in a row and the counter never
//! exceeds `rbar + 1`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{KeypointFrame, VideoSample, POINTS_PER_FRAME};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    /// Window length K (odd).
    pub window: usize,
    /// Maximum consecutive hold-forward replacements.
    pub rbar: u32,
    /// Gaussian sigma in frames; `None` selects K/4.
    pub sigma: Option<f64>,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            window: 7,
            rbar: 7,
            sigma: None,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "filter window must be a positive odd number, got {}",
                self.window
            )));
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!("sigma must be > 0, got {s}")));
            }
        }
        Ok(())
    }

    pub fn effective_sigma(&self) -> f64 {
        self.sigma.unwrap_or(self.window as f64 / 4.0)
    }
}

/// Normalized Gaussian taps centered on the middle of a `window`-long kernel.
pub fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..window)
        .map(|j| {
            let d = j as f64 - c;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Sliding-window filter state for one video.
#[derive(Debug, Clone)]
pub struct SkeletonFilter {
    params: FilterParams,
    kernel: Vec<f64>,
    window: VecDeque<KeypointFrame>,
    counters: [u32; POINTS_PER_FRAME],
}

impl SkeletonFilter {
    pub fn new(params: FilterParams) -> Result<Self> {
        params.validate()?;
        Ok(SkeletonFilter {
            kernel: gaussian_kernel(params.window, params.effective_sigma()),
            window: VecDeque::with_capacity(params.window),
            counters: [0; POINTS_PER_FRAME],
            params,
        })
    }

    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    /// Replacement counter for flat point index `i` (body, left hand, right hand).
    pub fn counter(&self, i: usize) -> u32 {
        self.counters[i]
    }

    pub fn buffered(&self) -> usize {
        self.window.len()
    }

    /// Pushes the newest frame; returns the filtered center frame once the
    /// window is full.
    pub fn push_frame(&mut self, frame: KeypointFrame) -> Option<KeypointFrame> {
        if self.window.len() == self.params.window {
            self.window.pop_front();
        }
        self.window.push_back(frame);
        self.repair_newest();
        if self.window.len() == self.params.window {
            Some(self.smooth_center())
        } else {
            None
        }
    }

    fn repair_newest(&mut self) {
        let n = self.window.len();
        for i in 0..POINTS_PER_FRAME {
            if n < 2 {
                self.counters[i] = 0;
                continue;
            }
            let newest = self.window[n - 1].point(i);
            let prev = self.window.range(..n - 1);
            match newest {
                None => {
                    if prev.clone().all(|f| f.point(i).is_some()) {
                        self.counters[i] += 1;
                        if self.counters[i] <= self.params.rbar {
                            let held = self.window[n - 2].point(i);
                            *self.window[n - 1].point_mut(i) = held;
                        } else {
                            for f in self.window.range_mut(..n - 1) {
                                *f.point_mut(i) = None;
                            }
                            self.counters[i] = 0;
                        }
                    } else {
                        self.counters[i] = 0;
                    }
                }
                Some(p) => {
                    self.counters[i] = 0;
                    if prev.clone().all(|f| f.point(i).is_none()) {
                        for f in self.window.range_mut(..n - 1) {
                            *f.point_mut(i) = Some(p);
                        }
                    }
                }
            }
        }
    }

    fn smooth_center(&self) -> KeypointFrame {
        let c = self.params.window / 2;
        let mut out = self.window[c].clone();
        for i in 0..POINTS_PER_FRAME {
            let Some(center) = self.window[c].point(i) else {
                continue;
            };
            let (mut nx, mut ny, mut den) = (0.0, 0.0, 0.0);
            for (w, f) in self.kernel.iter().zip(self.window.iter()) {
                if let Some(p) = f.point(i) {
                    nx += w * (p.x - center.x);
                    ny += w * (p.y - center.y);
                    den += w;
                }
            }
            let slot = out.point_mut(i);
            *slot = Some(crate::model::Point2::new(center.x + nx / den, center.y + ny / den));
        }
        out
    }
}

/// Result of filtering a whole video.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredVideo {
    pub source_id: String,
    pub label: Option<u32>,
    pub frames: Vec<KeypointFrame>,
    /// Set when the input had fewer frames than the window.
    pub too_short: bool,
}

impl FilteredVideo {
    pub fn into_sample(self) -> Option<VideoSample> {
        VideoSample::new(self.source_id, self.label, self.frames).ok()
    }
}

/// Streams every frame of `sample` through a fresh filter.
pub fn filter_video(sample: &VideoSample, params: FilterParams) -> Result<FilteredVideo> {
    let mut filter = SkeletonFilter::new(params)?;
    let frames: Vec<KeypointFrame> = sample
        .frames
        .iter()
        .filter_map(|f| filter.push_frame(f.clone()))
        .collect();
    let too_short = sample.frames.len() < params.window;
    if too_short {
        log::warn!(
            "'{}' has {} frames, fewer than the filter window {}",
            sample.source_id,
            sample.frames.len(),
            params.window
        );
    }
    Ok(FilteredVideo {
        source_id: sample.source_id.clone(),
        label: sample.label,
        frames,
        too_short,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Point2;

    fn frame(k: u64, p: Option<Point2>) -> KeypointFrame {
        let mut f = KeypointFrame::empty(k, 30.0);
        for j in 0..8 {
            f.body[j] = Some(Point2::new(10.0 * j as f64, 20.0));
        }
        f.body[4] = p;
        f
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        for k in [1usize, 3, 5, 7, 9, 15] {
            let w = gaussian_kernel(k, k as f64 / 4.0);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-7);
            for j in 0..k {
                assert_eq!(w[j], w[k - 1 - j]);
            }
        }
    }

    #[test]
    fn rejects_even_window() {
        let p = FilterParams {
            window: 6,
            ..Default::default()
        };
        assert!(SkeletonFilter::new(p).is_err());
    }

    #[test]
    fn constant_joint_is_fixed_point() {
        let mut f = SkeletonFilter::new(FilterParams::default()).unwrap();
        let mut out = None;
        for k in 0..7 {
            out = f.push_frame(frame(k, Some(Point2::new(100.0, 50.0))));
        }
        let out = out.unwrap();
        assert_eq!(out.body[4], Some(Point2::new(100.0, 50.0)));
        assert_eq!(out.frame_index, 3);
    }

    #[test]
    fn newest_miss_is_held_from_previous_frame() {
        let mut f = SkeletonFilter::new(FilterParams::default()).unwrap();
        for k in 0..6 {
            f.push_frame(frame(k, Some(Point2::new(k as f64, 1.0))));
        }
        assert_eq!(f.counter(4), 0);
        f.push_frame(frame(6, None));
        assert_eq!(f.window[6].body[4], Some(Point2::new(5.0, 1.0)));
        assert_eq!(f.counter(4), 1);
    }

    #[test]
    fn late_appearance_backfills_window() {
        let mut f = SkeletonFilter::new(FilterParams::default()).unwrap();
        for k in 0..6 {
            f.push_frame(frame(k, None));
        }
        let out = f.push_frame(frame(6, Some(Point2::new(42.0, 7.0)))).unwrap();
        for w in &f.window {
            assert_eq!(w.body[4], Some(Point2::new(42.0, 7.0)));
        }
        assert_eq!(out.body[4], Some(Point2::new(42.0, 7.0)));
    }

    #[test]
    fn exhausted_budget_drops_point_from_window() {
        let params = FilterParams::default();
        let mut f = SkeletonFilter::new(params).unwrap();
        for k in 0..7 {
            f.push_frame(frame(k, Some(Point2::new(1.0, 1.0))));
        }
        for k in 7..14 {
            f.push_frame(frame(k, None));
            assert_eq!(f.counter(4), (k - 6) as u32);
            assert!(f.window.iter().all(|w| w.body[4].is_some()));
        }
        // counter would reach rbar + 1
        let out = f.push_frame(frame(14, None)).unwrap();
        assert_eq!(f.counter(4), 0);
        assert!(f.window.iter().all(|w| w.body[4].is_none()));
        assert!(out.body[4].is_none());
    }

    #[test]
    fn short_video_yields_empty_output_with_flag() {
        let frames: Vec<_> = (0..5).map(|k| frame(k, Some(Point2::new(0.0, 0.0)))).collect();
        let s = VideoSample::new("s", None, frames).unwrap();
        let out = filter_video(&s, FilterParams::default()).unwrap();
        assert!(out.too_short);
        assert!(out.frames.is_empty());
    }

    #[test]
    fn forty_clean_frames_give_thirty_four() {
        let frames: Vec<_> = (0..40).map(|k| frame(k, Some(Point2::new(k as f64, 0.0)))).collect();
        let s = VideoSample::new("s", None, frames).unwrap();
        let out = filter_video(&s, FilterParams::default()).unwrap();
        assert_eq!(out.frames.len(), 34);
        assert!(out.frames.iter().all(|f| f.body.iter().all(|j| j.is_some())));
    }
}
