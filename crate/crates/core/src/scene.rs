//! Sensor readings in, glyph scene out.
//!
//! Readings come from a line-delimited text file:
//!
//! ```text
//! # sensor_id,x_mm,y_mm,z_mm,window_start,value[,window_seconds]
//! usb-0001,640000,640000,12000,2019-05-01T12:00:00Z,21.5
//! ```
//!
//! Blank lines, `#` comments and a header line starting with `sensor_id`
//! are skipped. `window_seconds` defaults to one hour.

use crate::pyramid::PyramidSpec;
use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_WINDOW_SECONDS: f64 = 3600.0;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("no readings for sensor {sensor_id} in the hour starting {hour}")]
    NoData {
        sensor_id: String,
        hour: DateTime<Utc>,
    },
    #[error("colormap bounds must be finite with min < max (got {min}..{max})")]
    Colormap { min: f64, max: f64 },
    #[error("glyph pixel band must satisfy 0 < min <= max (got {min}..{max})")]
    GlyphBand { min: f64, max: f64 },
    #[error("malformed scene description: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x_mm: f64,
    pub y_mm: f64,
    pub z_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub sensor_id: String,
    pub position: Position,
    pub value: f64,
    pub window_start: DateTime<Utc>,
    pub window_seconds: f64,
}

/// A line that failed to parse or validate.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub readings: Vec<SensorReading>,
    pub rejected: Vec<RejectedLine>,
}

pub fn ingest_readings(path: &Path, world_side_mm: f64) -> Result<IngestReport, SceneError> {
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Read {
        path: path.display().to_string(),
        source,
    })?;
    Ok(parse_readings(&text, world_side_mm))
}

pub fn parse_readings(text: &str, world_side_mm: f64) -> IngestReport {
    let mut report = IngestReport::default();
    // (sensor_id, window_start) -> index into readings
    let mut seen: HashMap<(String, DateTime<Utc>), usize> = HashMap::new();
    let mut slots: Vec<Option<SensorReading>> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("sensor_id") {
            continue;
        }
        match parse_line(line, world_side_mm) {
            Ok(reading) => {
                let key = (reading.sensor_id.clone(), reading.window_start);
                if let Some(prev) = seen.insert(key, slots.len()) {
                    slots[prev] = None;
                }
                slots.push(Some(reading));
            }
            Err(reason) => {
                log::warn!("readings line {line_no}: {reason}");
                report.rejected.push(RejectedLine {
                    line: line_no,
                    reason,
                });
            }
        }
    }
    report.readings = slots.into_iter().flatten().collect();
    report
}

fn parse_line(line: &str, world_side_mm: f64) -> Result<SensorReading, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 6 && fields.len() != 7 {
        return Err(format!("expected 6 or 7 fields, found {}", fields.len()));
    }
    let sensor_id = fields[0];
    if sensor_id.is_empty() {
        return Err("empty sensor_id".into());
    }
    let num = |i: usize, name: &str| -> Result<f64, String> {
        let v: f64 = fields[i]
            .parse()
            .map_err(|_| format!("{name} is not a number: {:?}", fields[i]))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("{name} is not finite"))
        }
    };
    let x = num(1, "x_mm")?;
    let y = num(2, "y_mm")?;
    let z = num(3, "z_mm")?;
    for (name, v) in [("x_mm", x), ("y_mm", y)] {
        if !(0.0..=world_side_mm).contains(&v) {
            return Err(format!("{name} = {v} outside [0, {world_side_mm}]"));
        }
    }
    let window_start = DateTime::parse_from_rfc3339(fields[4])
        .map_err(|e| format!("bad timestamp {:?}: {e}", fields[4]))?
        .with_timezone(&Utc);
    let value = num(5, "value")?;
    let window_seconds = if fields.len() == 7 {
        num(6, "window_seconds")?
    } else {
        DEFAULT_WINDOW_SECONDS
    };
    if window_seconds <= 0.0 {
        return Err(format!(
            "window_seconds must be positive, got {window_seconds}"
        ));
    }
    Ok(SensorReading {
        sensor_id: sensor_id.to_string(),
        position: Position {
            x_mm: x,
            y_mm: y,
            z_mm: z,
        },
        value,
        window_start,
        window_seconds,
    })
}

/// Mean of the sensor's values whose window starts in `[hour, hour + 1h)`.
pub fn hourly_average(
    readings: &[SensorReading],
    sensor_id: &str,
    hour: DateTime<Utc>,
) -> Result<f64, SceneError> {
    let end = hour + Duration::hours(1);
    let (sum, n) = readings
        .iter()
        .filter(|r| r.sensor_id == sensor_id && r.window_start >= hour && r.window_start < end)
        .fold((0.0, 0usize), |(s, n), r| (s + r.value, n + 1));
    if n == 0 {
        return Err(SceneError::NoData {
            sensor_id: sensor_id.to_string(),
            hour,
        });
    }
    Ok(sum / n as f64)
}

pub type Rgb = [u8; 3];

/// Linear ramp between two endpoint colours.
///
/// Values outside `[min, max]` clamp to the endpoint colour. Channels are
/// interpolated independently and rounded half-up; with the default
/// endpoints red rises and blue falls monotonically with the value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Colormap {
    pub min: f64,
    pub max: f64,
    pub cold: Rgb,
    pub hot: Rgb,
}

impl Default for Colormap {
    fn default() -> Self {
        Self {
            min: 0.0,
            max: 30.0,
            cold: [32, 96, 224],
            hot: [224, 48, 32],
        }
    }
}

impl Colormap {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.min.is_finite() && self.max.is_finite() && self.min < self.max {
            Ok(())
        } else {
            Err(SceneError::Colormap {
                min: self.min,
                max: self.max,
            })
        }
    }

    pub fn is_clamped(&self, value: f64) -> bool {
        value < self.min || value > self.max
    }

    pub fn color(&self, value: f64) -> Rgb {
        let t = ((value - self.min) / (self.max - self.min)).clamp(0.0, 1.0);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let a = self.cold[c] as f64;
            let b = self.hot[c] as f64;
            out[c] = (a + t * (b - a) + 0.5).floor().clamp(0.0, 255.0) as u8;
        }
        out
    }
}

/// On-image glyph size policy: a glyph is drawn `target_px` across on each
/// rendered level, clamped into `[min_px, max_px]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlyphPolicy {
    pub target_px: f64,
    pub min_px: f64,
    pub max_px: f64,
}

impl Default for GlyphPolicy {
    fn default() -> Self {
        Self {
            target_px: 24.0,
            min_px: 8.0,
            max_px: 48.0,
        }
    }
}

impl GlyphPolicy {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.min_px > 0.0 && self.min_px <= self.max_px && self.target_px.is_finite() {
            Ok(())
        } else {
            Err(SceneError::GlyphBand {
                min: self.min_px,
                max: self.max_px,
            })
        }
    }

    pub fn radius_mm(&self, spec: &PyramidSpec, level: u32) -> f64 {
        let diameter_px = self.target_px.clamp(self.min_px, self.max_px);
        0.5 * diameter_px * spec.mm_per_px(level)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Glyph {
    pub sensor_id: String,
    pub position: Position,
    pub value: f64,
    pub color: Rgb,
    /// Rendered level -> disk radius in millimetres.
    pub radius_mm: BTreeMap<u32, f64>,
}

impl Glyph {
    /// Radius used when drawing `level`; derived levels never draw glyphs
    /// directly, so this falls back to the level's source rendered level.
    pub fn radius_at(&self, spec: &PyramidSpec, level: u32) -> Option<f64> {
        self.radius_mm
            .get(&level)
            .or_else(|| self.radius_mm.get(&spec.source_level(level)))
            .copied()
    }
}

/// Procedural ground plane and building blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Plane {
    pub seed: u64,
    /// City block pitch.
    pub block_mm: f64,
    /// Gap between neighbouring buildings.
    pub street_mm: f64,
    pub buildings: bool,
}

impl Default for Plane {
    fn default() -> Self {
        Self {
            seed: 0x7e5a_c0de,
            block_mm: 48_000.0,
            street_mm: 12_000.0,
            buildings: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub world_side_mm: f64,
    pub rendered_levels: Vec<u32>,
    pub colormap: Colormap,
    pub plane: Plane,
    /// Sorted by `sensor_id`; later glyphs draw over earlier ones.
    pub glyphs: Vec<Glyph>,
}

impl Scene {
    /// The `scene.desc` text form.
    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, SceneError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneOptions {
    pub scene_id: String,
    pub colormap: Colormap,
    pub glyphs: GlyphPolicy,
    pub plane: Plane,
    /// Average only this hour; when unset every reading of a sensor is averaged.
    pub hour: Option<DateTime<Utc>>,
}

impl Default for SceneOptions {
    fn default() -> Self {
        Self {
            scene_id: "city".into(),
            colormap: Colormap::default(),
            glyphs: GlyphPolicy::default(),
            plane: Plane::default(),
            hour: None,
        }
    }
}

pub fn build_scene(
    readings: &[SensorReading],
    spec: &PyramidSpec,
    opts: &SceneOptions,
) -> Result<Scene, SceneError> {
    opts.colormap.validate()?;
    opts.glyphs.validate()?;
    let rendered_levels = spec.rendered_levels();

    let mut by_sensor: BTreeMap<&str, Vec<&SensorReading>> = BTreeMap::new();
    for r in readings {
        by_sensor.entry(&r.sensor_id).or_default().push(r);
    }

    let mut glyphs = Vec::with_capacity(by_sensor.len());
    for (sensor_id, rs) in by_sensor {
        let value = match opts.hour {
            Some(hour) => {
                let owned: Vec<SensorReading> = rs.iter().map(|r| (*r).clone()).collect();
                match hourly_average(&owned, sensor_id, hour) {
                    Ok(v) => v,
                    Err(_) => continue,
                }
            }
            None => rs.iter().map(|r| r.value).sum::<f64>() / rs.len() as f64,
        };
        if opts.colormap.is_clamped(value) {
            log::warn!(
                "sensor {sensor_id}: value {value} outside colormap [{}, {}], clamped",
                opts.colormap.min,
                opts.colormap.max
            );
        }
        let radius_mm = rendered_levels
            .iter()
            .map(|&l| (l, opts.glyphs.radius_mm(spec, l)))
            .collect();
        glyphs.push(Glyph {
            sensor_id: sensor_id.to_string(),
            position: rs.last().expect("non-empty group").position,
            value,
            color: opts.colormap.color(value),
            radius_mm,
        });
    }

    Ok(Scene {
        scene_id: opts.scene_id.clone(),
        world_side_mm: spec.world_side_mm,
        rendered_levels,
        colormap: opts.colormap,
        plane: opts.plane,
        glyphs,
    })
}

/// Deterministic sensor layout for demos and tests: `count` sensors on a
/// jittered grid with smoothly varying temperatures.
pub fn synthetic_readings(count: usize, world_side_mm: f64, seed: u64) -> Vec<SensorReading> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let start = DateTime::parse_from_rfc3339("2019-05-01T12:00:00Z")
        .expect("valid literal")
        .with_timezone(&Utc);
    let per_side = (count as f64).sqrt().ceil().max(1.0) as usize;
    let pitch = world_side_mm / per_side as f64;
    (0..count)
        .map(|i| {
            let gx = (i % per_side) as f64;
            let gy = (i / per_side) as f64;
            let x = (gx + rng.random_range(0.2..0.8)) * pitch;
            let y = (gy + rng.random_range(0.2..0.8)) * pitch;
            let value = 12.0 + 10.0 * (x / world_side_mm) + rng.random_range(-2.0..2.0);
            SensorReading {
                sensor_id: format!("sensor-{i:04}"),
                position: Position {
                    x_mm: x,
                    y_mm: y,
                    z_mm: 0.0,
                },
                value,
                window_start: start,
                window_seconds: DEFAULT_WINDOW_SECONDS,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const W: f64 = 1.28e6;

    fn ts(s: &str) -> DateTime<Utc> {
        DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc)
    }

    #[test]
    fn empty_input() {
        let r = parse_readings("", W);
        assert!(r.readings.is_empty());
        assert!(r.rejected.is_empty());
    }

    #[test]
    fn keeps_order_of_good_rows() {
        let text = "sensor_id,x,y,z,t,v\n\
                    b,10,10,0,2019-05-01T12:00:00Z,18.5\n\
                    a,20,20,0,2019-05-01T12:00:00Z,19\n\
                    c,30,30,0,2019-05-01T12:10:00Z,20,600\n";
        let r = parse_readings(text, W);
        let ids: Vec<&str> = r.readings.iter().map(|r| r.sensor_id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "c"]);
        assert_eq!(r.readings[2].window_seconds, 600.0);
        assert_eq!(r.readings[0].window_seconds, 3600.0);
    }

    #[test]
    fn out_of_bounds_row_rejected_with_line_number() {
        let text = format!(
            "a,10,10,0,2019-05-01T12:00:00Z,18.5\n\
             b,{},10,0,2019-05-01T12:00:00Z,18.5\n\
             c,10,10,0,2019-05-01T12:00:00Z,18.5\n",
            W + 1.0
        );
        let r = parse_readings(&text, W);
        assert_eq!(r.readings.len(), 2);
        assert_eq!(r.rejected.len(), 1);
        assert_eq!(r.rejected[0].line, 2);
        assert!(r.rejected[0].reason.contains("x_mm"));
    }

    #[test]
    fn malformed_rows_rejected() {
        let text = "a,1,1,0,not-a-time,3\n\
                    a,1,1,0,2019-05-01T12:00:00Z\n\
                    a,1,1,0,2019-05-01T12:00:00Z,3,0\n\
                    a,x,1,0,2019-05-01T12:00:00Z,3\n";
        let r = parse_readings(text, W);
        assert!(r.readings.is_empty());
        assert_eq!(
            r.rejected.iter().map(|l| l.line).collect::<Vec<_>>(),
            [1, 2, 3, 4]
        );
    }

    #[test]
    fn duplicate_window_keeps_last() {
        let text = "a,1,1,0,2019-05-01T12:00:00Z,10\n\
                    b,1,1,0,2019-05-01T12:00:00Z,11\n\
                    a,1,1,0,2019-05-01T12:00:00Z,12\n";
        let r = parse_readings(text, W);
        assert_eq!(r.readings.len(), 2);
        assert_eq!(r.readings[0].sensor_id, "b");
        assert_eq!(r.readings[1].value, 12.0);
    }

    #[test]
    fn unreadable_file() {
        let err = ingest_readings(Path::new("/definitely/not/here.csv"), W).unwrap_err();
        assert!(matches!(err, SceneError::Read { .. }));
    }

    fn reading(id: &str, t: &str, v: f64) -> SensorReading {
        SensorReading {
            sensor_id: id.into(),
            position: Position {
                x_mm: 1.0,
                y_mm: 1.0,
                z_mm: 0.0,
            },
            value: v,
            window_start: ts(t),
            window_seconds: 3600.0,
        }
    }

    #[test]
    fn hourly_average_cases() {
        let hour = ts("2019-05-01T12:00:00Z");
        let one = [reading("a", "2019-05-01T12:00:00Z", 18.5)];
        assert_eq!(hourly_average(&one, "a", hour).unwrap(), 18.5);
        let two = [
            reading("a", "2019-05-01T12:05:00Z", 10.0),
            reading("a", "2019-05-01T12:59:59Z", 20.0),
            reading("a", "2019-05-01T13:00:00Z", 99.0),
            reading("b", "2019-05-01T12:30:00Z", 99.0),
        ];
        assert_eq!(hourly_average(&two, "a", hour).unwrap(), 15.0);
        assert!(matches!(
            hourly_average(&two, "c", hour),
            Err(SceneError::NoData { .. })
        ));
    }

    #[test]
    fn hourly_average_matches_independent_mean() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(24);
        let hour = ts("2019-05-01T00:00:00Z");
        let values: Vec<f64> = (0..24).map(|_| rng.random_range(-10.0..40.0)).collect();
        let readings: Vec<SensorReading> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let mut r = reading("s", "2019-05-01T00:00:00Z", v);
                r.window_start += Duration::seconds(i as i64 * 150);
                r
            })
            .collect();
        let oracle = values.iter().sum::<f64>() / values.len() as f64;
        assert!((hourly_average(&readings, "s", hour).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn colormap_midpoint_and_clamping() {
        let cm = Colormap::default();
        assert_eq!(cm.color(15.0), [128, 72, 128]);
        assert_eq!(cm.color(-5.0), cm.cold);
        assert_eq!(cm.color(45.0), cm.hot);
        assert!(Colormap {
            min: 1.0,
            max: 1.0,
            ..cm
        }
        .validate()
        .is_err());
        assert!(Colormap {
            min: f64::NAN,
            ..cm
        }
        .validate()
        .is_err());
    }

    #[test]
    fn colormap_is_monotone() {
        let cm = Colormap::default();
        let mut prev = cm.color(cm.min);
        for i in 1..=300 {
            let c = cm.color(i as f64 * 0.1);
            assert!(c[0] >= prev[0] && c[2] <= prev[2]);
            prev = c;
        }
    }

    #[test]
    fn empty_scene_has_plane_only() {
        let spec = PyramidSpec::terapixel();
        let scene = build_scene(&[], &spec, &SceneOptions::default()).unwrap();
        assert!(scene.glyphs.is_empty());
        assert_eq!(scene.rendered_levels, vec![12, 8, 4]);
    }

    #[test]
    fn close_sensors_stay_distinct_at_top_level() {
        let spec = PyramidSpec::terapixel();
        let readings = [
            reading("a", "2019-05-01T12:00:00Z", 20.0),
            SensorReading {
                position: Position {
                    x_mm: 101.0,
                    y_mm: 1.0,
                    z_mm: 0.0,
                },
                ..reading("b", "2019-05-01T12:00:00Z", 21.0)
            },
        ];
        let scene = build_scene(&readings, &spec, &SceneOptions::default()).unwrap();
        for g in &scene.glyphs {
            assert_eq!(g.radius_mm.len(), 3);
            let r = g.radius_mm[&12];
            assert!(r < 50.0, "radius {r} mm");
            // 24 px across on the level-12 image
            assert!((2.0 * r / spec.mm_per_px(12) - 24.0).abs() < 1e-9);
        }
    }

    #[test]
    fn scene_is_deterministic_and_sorted() {
        let spec = PyramidSpec::terapixel_like(6).unwrap();
        let mut readings = synthetic_readings(20, spec.world_side_mm, 3);
        readings.reverse();
        let a = build_scene(&readings, &spec, &SceneOptions::default()).unwrap();
        let b = build_scene(&readings, &spec, &SceneOptions::default()).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        assert!(a.glyphs.windows(2).all(|w| w[0].sensor_id < w[1].sensor_id));
        assert_eq!(Scene::from_text(&a.to_text()).unwrap(), a);
    }

    #[test]
    fn hour_filter_skips_silent_sensors() {
        let spec = PyramidSpec::terapixel_like(4).unwrap();
        let readings = [
            reading("a", "2019-05-01T12:10:00Z", 20.0),
            reading("b", "2019-05-01T14:10:00Z", 21.0),
        ];
        let opts = SceneOptions {
            hour: Some(ts("2019-05-01T12:00:00Z")),
            ..SceneOptions::default()
        };
        let scene = build_scene(&readings, &spec, &opts).unwrap();
        assert_eq!(scene.glyphs.len(), 1);
        assert_eq!(scene.glyphs[0].sensor_id, "a");
    }
}
