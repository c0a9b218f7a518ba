//! File formats.
//!
//! Volumes are stored as one line of JSON header terminated by `\n`, followed
//! by the values as little-endian `f32` in storage order (joint, x, y, z):
//!
//! ```text
//! {"joints":17,"bins":[8,8,8],"mode":"metric","extents_mm":[2200.0,2200.0,2200.0]}\n<f32 LE × J·nx·ny·nz>
//! ```
//!
//! For 2.5D volumes the header additionally carries `crop_px` and `stride_px`,
//! and `extents_mm` is `[crop_w, crop_h, D]` with the first two in pixels.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::heatmap::{HeatmapGeometry, HeatmapMode, HeatmapVolume};
use crate::pose::Pose3D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub joints: usize,
    pub bins: [usize; 3],
    pub mode: String,
    pub extents_mm: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_px: Option<[u32; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride_px: Option<u32>,
}

impl VolumeHeader {
    pub fn for_volume(v: &HeatmapVolume) -> Self {
        let g = v.geometry();
        let (mode, extents_mm, crop_px, stride_px) = match g.mode() {
            HeatmapMode::Metric { extents_mm } => ("metric", extents_mm, None, None),
            HeatmapMode::Image25d { crop_px, stride_px, depth_mm } => (
                "image25d",
                [crop_px[0] as f64, crop_px[1] as f64, depth_mm],
                Some(crop_px),
                Some(stride_px),
            ),
        };
        Self { joints: v.joints(), bins: g.bins(), mode: mode.into(), extents_mm, crop_px, stride_px }
    }

    pub fn geometry(&self) -> Result<HeatmapGeometry> {
        match self.mode.as_str() {
            "metric" => HeatmapGeometry::metric(self.bins, self.extents_mm),
            "image25d" => {
                let crop = self.crop_px.ok_or_else(|| GeomError::Parse("image25d header needs crop_px".into()))?;
                let stride = self.stride_px.ok_or_else(|| GeomError::Parse("image25d header needs stride_px".into()))?;
                HeatmapGeometry::image25d(self.bins, crop, stride, self.extents_mm[2])
            }
            other => Err(GeomError::Parse(format!("unknown volume mode {other:?}"))),
        }
    }
}

pub fn write_volume(v: &HeatmapVolume, mut out: impl Write) -> Result<()> {
    serde_json::to_writer(&mut out, &VolumeHeader::for_volume(v))?;
    out.write_all(b"\n")?;
    for x in v.values() {
        out.write_all(&(*x as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Reads a volume and renormalizes each joint to absorb `f32` rounding.
pub fn read_volume(mut input: impl BufRead) -> Result<HeatmapVolume> {
    let mut line = Vec::new();
    input.read_until(b'\n', &mut line)?;
    let header: VolumeHeader = serde_json::from_slice(&line)?;
    let geometry = header.geometry()?;
    let per = geometry.bins_per_joint();
    let mut bytes = vec![0u8; header.joints * per * 4];
    input.read_exact(&mut bytes).map_err(|e| GeomError::Parse(format!("volume payload: {e}")))?;
    let mut values: Vec<f64> =
        bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    for chunk in values.chunks_mut(per) {
        let s: f64 = chunk.iter().sum();
        if s > 0.0 {
            chunk.iter_mut().for_each(|v| *v /= s);
        }
    }
    HeatmapVolume::new(values, header.joints, geometry)
}

/// Named sequence of poses, as consumed by evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSequence {
    pub name: String,
    pub poses: Vec<Pose3D>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    pub sequences: Vec<PoseSequence>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::{spatial_softmax, synthesize_gaussian_volume};
    use nalgebra::Vector3;

    #[test]
    fn volume_file_layout() {
        let g = HeatmapGeometry::metric([2, 2, 2], [100.0; 3]).unwrap();
        let v = spatial_softmax(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0], 1, g).unwrap();
        let mut buf = Vec::new();
        write_volume(&v, &mut buf).unwrap();
        let nl = buf.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&buf[..nl]).unwrap();
        assert_eq!(header["joints"], 1);
        assert_eq!(header["bins"], serde_json::json!([2, 2, 2]));
        assert_eq!(header["mode"], "metric");
        assert_eq!(buf.len() - nl - 1, 8 * 4);
        let first = f32::from_le_bytes(buf[nl + 1..nl + 5].try_into().unwrap());
        assert_eq!(first, v.values()[0] as f32);
    }

    #[test]
    fn volume_round_trip_both_modes() {
        for g in [HeatmapGeometry::default_metric(), HeatmapGeometry::default_image25d()] {
            let t = g.from_bin(&Vector3::new(3.2, 4.1, 3.7));
            let v = synthesize_gaussian_volume(&[t, t * 0.9], g, 1.0).unwrap();
            let mut buf = Vec::new();
            write_volume(&v, &mut buf).unwrap();
            let back = read_volume(&buf[..]).unwrap();
            assert_eq!(back.geometry(), v.geometry());
            for (a, b) in back.values().iter().zip(v.values()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn truncated_payload_is_a_parse_error() {
        let v = spatial_softmax(&[0.0; 512], 1, HeatmapGeometry::default_metric()).unwrap();
        let mut buf = Vec::new();
        write_volume(&v, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_volume(&buf[..]), Err(GeomError::Parse(_))));
    }
}
