//! Region proposals over all pyramid levels, region pooling, the detection loss and
//! mAP evaluation.

pub mod boxes;
pub mod map;
pub mod roi;
pub mod rpn;

use std::io::Write;

pub use boxes::{decode_delta, encode_delta, iou, nms, BBox};
pub use map::{mean_average_precision, Detection, GroundTruth, MapReport};
pub use roi::roi_level;
pub use rpn::{assign_anchors, propose, pyramid_anchors, AnchorLabel, ProposalConfig, RpnHead};

use crate::error::Result;

/// Write detections as `image_id,class,score,x1,y1,x2,y2` with a header line.
pub fn write_detections_csv<W: Write>(out: &mut W, detections: &[Detection], class_names: &[String]) -> Result<()> {
    writeln!(out, "image_id,class,score,x1,y1,x2,y2")?;
    for d in detections {
        let class = class_names.get(d.class).map(String::as_str).unwrap_or("?");
        writeln!(
            out,
            "{},{},{:.6},{:.3},{:.3},{:.3},{:.3}",
            d.image_id, class, d.score, d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2
        )?;
    }
    Ok(())
}
