//! Camera motion compensation and the constant-velocity motion model.

mod ecc;
mod image;

pub use ecc::{ecc_align, EccConfig, EccError, EccResult};
pub use image::{GrayImage, ImageError, LUMA_WEIGHTS};

use crate::geometry::{clip_to_frame, warp_box, BoundingBox, Transform2D};
use crate::tracker::Track;

/// Warps every track's working box by `t` and clips it to the frame.
///
/// Returns the ids of tracks whose box left the frame entirely or could not
/// be warped; those keep the unclipped warp (or their old box) so the
/// regression score decides their fate.
pub fn apply_cmc(
    tracks: &mut [Track],
    t: &Transform2D,
    frame_size: Option<(f64, f64)>,
) -> Vec<u64> {
    let mut flagged = Vec::new();
    if t.is_identity() {
        return flagged;
    }
    for track in tracks {
        match warp_box(&track.position(), t) {
            Ok(w) => match frame_size {
                Some((fw, fh)) => match clip_to_frame(&w, fw, fh) {
                    Some(c) => track.set_position(c),
                    None => {
                        track.set_position(w);
                        flagged.push(track.id());
                    }
                },
                None => track.set_position(w),
            },
            Err(_) => flagged.push(track.id()),
        }
    }
    flagged
}

/// Working box shifted by the track's last center displacement.
pub fn cva_predict(track: &Track) -> BoundingBox {
    let b = track.position();
    match track.velocity() {
        Some((dx, dy)) => b.translated(dx, dy),
        None => b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Detection, FrameIndex};

    fn det(cx: f64, cy: f64) -> Detection {
        Detection::new(BoundingBox::from_center(cx, cy, 10.0, 20.0).unwrap(), 1.0).unwrap()
    }

    fn f(t: u32) -> FrameIndex {
        FrameIndex::new(t).unwrap()
    }

    #[test]
    fn cva_examples() {
        let mut t = Track::new(1, f(1), det(10., 10.), 10);
        assert_eq!(cva_predict(&t), det(10., 10.).bbox);
        t.append(f(2), det(13., 14.));
        let p = cva_predict(&t);
        assert_eq!(p.center(), (16.0, 18.0));
        assert_eq!((p.w, p.h), (10.0, 20.0));
        let mut s = Track::new(2, f(1), det(5., 5.), 10);
        s.append(f(2), det(5., 5.));
        assert_eq!(cva_predict(&s), det(5., 5.).bbox);
    }

    #[test]
    fn cmc_examples() {
        let mut tracks = vec![Track::new(1, f(1), det(50., 50.), 10)];
        let before = tracks.clone();
        assert!(apply_cmc(
            &mut tracks,
            &Transform2D::translation(0.0, 0.0),
            Some((100., 100.))
        )
        .is_empty());
        assert_eq!(tracks, before);

        apply_cmc(
            &mut tracks,
            &Transform2D::translation(5.0, 3.0),
            Some((100., 100.)),
        );
        assert_eq!(
            tracks[0].position(),
            before[0].position().translated(5.0, 3.0)
        );

        let flagged = apply_cmc(
            &mut tracks,
            &Transform2D::translation(500.0, 0.0),
            Some((100., 100.)),
        );
        assert_eq!(flagged, vec![1]);
    }
}
