//! Gaze file records: one JSON object per line, pixel or ray mode.

use super::{GazeMode, SessionError};
use crate::gaze::GazeSample;
use crate::geometry::{gaze_to_pixel, GazeRay, ImageDims, ScreenPose, WorldPoint};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::path::Path;

fn yes() -> bool {
    true
}

/// Gaze already expressed in layout pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PixelGazeRecord {
    pub t: f64,
    #[serde(default)]
    pub x: Option<f64>,
    #[serde(default)]
    pub y: Option<f64>,
    #[serde(default = "yes")]
    pub valid: bool,
}

/// World-space gaze ray; the direction must be a unit vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RayGazeRecord {
    pub t: f64,
    #[serde(default)]
    pub ox: Option<f64>,
    #[serde(default)]
    pub oy: Option<f64>,
    #[serde(default)]
    pub oz: Option<f64>,
    #[serde(default)]
    pub dx: Option<f64>,
    #[serde(default)]
    pub dy: Option<f64>,
    #[serde(default)]
    pub dz: Option<f64>,
    #[serde(default = "yes")]
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GazeRecord {
    Pixel(PixelGazeRecord),
    Ray(RayGazeRecord),
}

impl GazeRecord {
    pub fn t(&self) -> f64 {
        match self {
            GazeRecord::Pixel(r) => r.t,
            GazeRecord::Ray(r) => r.t,
        }
    }

    fn check(&self) -> Result<(), String> {
        if !self.t().is_finite() {
            return Err("t must be a finite number".into());
        }
        let coords: Vec<Option<f64>> = match self {
            GazeRecord::Pixel(r) if r.valid => vec![r.x, r.y],
            GazeRecord::Ray(r) if r.valid => vec![r.ox, r.oy, r.oz, r.dx, r.dy, r.dz],
            _ => return Ok(()),
        };
        if coords.iter().any(|c| !c.is_some_and(f64::is_finite)) {
            return Err("valid samples need finite coordinates".into());
        }
        if let GazeRecord::Ray(r) = self {
            let d = Vector3::new(r.dx.unwrap_or_default(), r.dy.unwrap_or_default(), r.dz.unwrap_or_default());
            GazeRay::new(WorldPoint::new(0.0, 0.0, 0.0), d, r.t).map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}

pub fn parse_gaze_line(line: &str, mode: GazeMode) -> Result<GazeRecord, String> {
    let record = match mode {
        GazeMode::Pixel => GazeRecord::Pixel(serde_json::from_str(line).map_err(|e| e.to_string())?),
        GazeMode::Ray => GazeRecord::Ray(serde_json::from_str(line).map_err(|e| e.to_string())?),
    };
    record.check()?;
    Ok(record)
}

/// Reads and validates a whole gaze file. Blank lines are skipped;
/// timestamps must be strictly increasing.
pub fn read_gaze_file(path: &Path, mode: GazeMode) -> Result<Vec<GazeRecord>, SessionError> {
    let text = std::fs::read_to_string(path).map_err(|e| SessionError::io(path, e))?;
    let mut records: Vec<GazeRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| SessionError::GazeInput { path: path.to_path_buf(), line: i + 1, message };
        let record = parse_gaze_line(line, mode).map_err(fail)?;
        if let Some(prev) = records.last() {
            if record.t() <= prev.t() {
                return Err(fail(format!("t {} does not increase (previous {})", record.t(), prev.t())));
            }
        }
        records.push(record);
    }
    Ok(records)
}

pub(crate) fn record_to_sample(record: &GazeRecord, geometry: Option<&(ScreenPose, ImageDims)>) -> Result<GazeSample, SessionError> {
    record.check().map_err(|m| SessionError::Config(format!("gaze record: {m}")))?;
    Ok(match *record {
        GazeRecord::Pixel(r) => match (r.valid, r.x, r.y) {
            (true, Some(x), Some(y)) => GazeSample::new(r.t, x, y),
            _ => GazeSample::invalid(r.t),
        },
        GazeRecord::Ray(r) => {
            if !r.valid {
                return Ok(GazeSample::invalid(r.t));
            }
            let (pose, dims) = geometry.ok_or_else(|| SessionError::Config("ray-mode gaze needs a screen pose".into()))?;
            let origin = WorldPoint::new(r.ox.unwrap_or_default(), r.oy.unwrap_or_default(), r.oz.unwrap_or_default());
            let dir = Vector3::new(r.dx.unwrap_or_default(), r.dy.unwrap_or_default(), r.dz.unwrap_or_default());
            let ray = GazeRay::new(origin, dir, r.t)?;
            match gaze_to_pixel(&ray, pose, *dims) {
                Some(p) => GazeSample { t: r.t, p, valid: true },
                None => GazeSample::invalid(r.t),
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pixel_to_screen_local, screen_local_to_world, PixelPoint};

    #[test]
    fn pixel_lines() {
        let r = parse_gaze_line(r#"{"t":10,"x":1.5,"y":2}"#, GazeMode::Pixel).unwrap();
        assert_eq!(r, GazeRecord::Pixel(PixelGazeRecord { t: 10.0, x: Some(1.5), y: Some(2.0), valid: true }));
        assert!(parse_gaze_line(r#"{"t":10,"valid":false}"#, GazeMode::Pixel).is_ok());
        assert!(parse_gaze_line(r#"{"t":10}"#, GazeMode::Pixel).is_err());
        assert!(parse_gaze_line(r#"{"t":10,"x":1,"y":2,"z":3}"#, GazeMode::Pixel).is_err());
        assert!(parse_gaze_line("not json", GazeMode::Pixel).is_err());
    }

    #[test]
    fn ray_lines() {
        let ok = r#"{"t":0,"ox":0,"oy":0,"oz":0,"dx":0,"dy":0,"dz":1}"#;
        assert!(parse_gaze_line(ok, GazeMode::Ray).is_ok());
        let long = r#"{"t":0,"ox":0,"oy":0,"oz":0,"dx":0,"dy":0,"dz":2}"#;
        assert!(parse_gaze_line(long, GazeMode::Ray).is_err());
    }

    #[test]
    fn ray_projects_to_aimed_pixel() {
        let pose = ScreenPose::frontal(WorldPoint::new(0.0, 0.0, 1.0), 0.4, 0.3).unwrap();
        let dims = ImageDims::new(800, 600).unwrap();
        let target = PixelPoint::new(123.0, 456.0);
        let w = screen_local_to_world(pixel_to_screen_local(target, &pose, dims), &pose);
        let d = Vector3::new(w.x, w.y, w.z).normalize();
        let rec = GazeRecord::Ray(RayGazeRecord {
            t: 5.0,
            ox: Some(0.0),
            oy: Some(0.0),
            oz: Some(0.0),
            dx: Some(d.x),
            dy: Some(d.y),
            dz: Some(d.z),
            valid: true,
        });
        let s = record_to_sample(&rec, Some(&(pose, dims))).unwrap();
        assert!(s.valid);
        assert!(s.p.distance(&target) < 1e-9);

        let away = GazeRecord::Ray(RayGazeRecord {
            dz: Some(-1.0),
            dx: Some(0.0),
            dy: Some(0.0),
            ..match rec {
                GazeRecord::Ray(r) => r,
                _ => unreachable!(),
            }
        });
        assert!(!record_to_sample(&away, Some(&(pose, dims))).unwrap().valid);
        assert!(record_to_sample(&rec, None).is_err());
    }

    #[test]
    fn file_rejects_non_increasing_time() {
        let dir = std::env::temp_dir().join(format!("sara-input-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("g.jsonl");
        std::fs::write(&p, "{\"t\":0,\"x\":1,\"y\":1}\n\n{\"t\":10,\"x\":1,\"y\":1}\n{\"t\":10,\"x\":1,\"y\":1}\n").unwrap();
        match read_gaze_file(&p, GazeMode::Pixel) {
            Err(SessionError::GazeInput { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "{\"t\":0,\"x\":1,\"y\":1}\n{\"t\":10,\"valid\":false}\n").unwrap();
        assert_eq!(read_gaze_file(&p, GazeMode::Pixel).unwrap().len(), 2);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
