//! Equal-length clip segmentation with one center key frame per clip.

use std::ops::Range;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClipError {
    #[error("cannot split {frames} frames into {clips} clips")]
    InsufficientFrames { frames: usize, clips: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipRange {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub key_frame: usize,
}

impl ClipRange {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn frames(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.frames().contains(&frame)
    }
}

/// Splits `[0, frames)` into `clips` contiguous ranges. The first
/// `frames % clips` ranges carry one extra frame; key frames sit at the lower
/// median of each range.
pub fn split_clips(frames: usize, clips: usize) -> Result<Vec<ClipRange>, ClipError> {
    if clips == 0 || frames < clips {
        return Err(ClipError::InsufficientFrames { frames, clips });
    }
    let base = frames / clips;
    let extra = frames % clips;
    let mut start = 0;
    Ok((0..clips)
        .map(|index| {
            let len = base + usize::from(index < extra);
            let clip = ClipRange { index, start, end: start + len, key_frame: start + len / 2 };
            start += len;
            clip
        })
        .collect())
}

/// Index of the clip containing `frame`.
pub fn clip_of(clips: &[ClipRange], frame: usize) -> Option<usize> {
    clips.iter().position(|c| c.contains(frame))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn divisible_case() {
        let clips = split_clips(80, 8).unwrap();
        let keys: Vec<_> = clips.iter().map(|c| c.key_frame).collect();
        assert_eq!(keys, vec![5, 15, 25, 35, 45, 55, 65, 75]);
        assert_eq!((clips[7].start, clips[7].end), (70, 80));
    }

    #[test]
    fn singleton_clips() {
        let clips = split_clips(8, 8).unwrap();
        assert!(clips.iter().enumerate().all(|(i, c)| c.key_frame == i && c.len() == 1));
    }

    #[test]
    fn remainder_goes_first() {
        // Hand enumeration: 13 = 5*2 + 3*1, key = start + len/2.
        let clips = split_clips(13, 8).unwrap();
        let lens: Vec<_> = clips.iter().map(|c| c.len()).collect();
        let keys: Vec<_> = clips.iter().map(|c| c.key_frame).collect();
        assert_eq!(lens, vec![2, 2, 2, 2, 2, 1, 1, 1]);
        assert_eq!(keys, vec![1, 3, 5, 7, 9, 10, 11, 12]);
    }

    #[test]
    fn too_few_frames() {
        assert_eq!(split_clips(7, 8), Err(ClipError::InsufficientFrames { frames: 7, clips: 8 }));
    }

    proptest! {
        #[test]
        fn partition(m in 1usize..40, extra in 0usize..400) {
            let t = m + extra;
            let clips = split_clips(t, m).unwrap();
            prop_assert_eq!(clips.len(), m);
            prop_assert_eq!(clips[0].start, 0);
            prop_assert_eq!(clips[m - 1].end, t);
            for w in clips.windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
                prop_assert!(w[0].len() >= w[1].len());
            }
            for c in &clips {
                prop_assert!(c.len() == t / m || c.len() == t.div_ceil(m));
                prop_assert!(c.contains(c.key_frame));
            }
        }
    }
}
