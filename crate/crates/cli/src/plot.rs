//! SVG rendering of a run directory: obstacles, bubbles, reference path and
//! the smoothed path coloured by speed.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::report::{RunReport, Scene};

const WIDTH: f64 = 900.0;
const MARGIN: f64 = 20.0;
const BAR: f64 = 70.0;

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct TrajectoryRow {
    pub k: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct BubbleRow {
    pub index: usize,
    pub center_x: f64,
    pub center_y: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct SpeedRow {
    pub k: usize,
    pub s: f64,
    pub speed: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error("{0}: {1}")]
    Csv(String, csv::Error),
    #[error("report.json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("report.json has no scene to draw")]
    NoScene,
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PlotError> {
    let name = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| PlotError::Csv(name.clone(), e))?;
    rdr.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| PlotError::Csv(name, e))
}

/// Five-stop approximation of the viridis map, `t ∈ [0, 1]`.
fn colour(t: f64) -> String {
    const STOPS: [[f64; 3]; 5] = [[68.0, 1.0, 84.0], [59.0, 82.0, 139.0], [33.0, 145.0, 140.0], [94.0, 201.0, 98.0], [253.0, 231.0, 37.0]];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let c: Vec<u8> = (0..3).map(|j| (STOPS[i][j] + f * (STOPS[i + 1][j] - STOPS[i][j])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

struct Frame {
    x0: f64,
    y1: f64,
    scale: f64,
}

impl Frame {
    fn x(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) * self.scale
    }

    fn y(&self, y: f64) -> f64 {
        MARGIN + (self.y1 - y) * self.scale
    }
}

fn points(f: &Frame, pts: impl Iterator<Item = (f64, f64)>) -> String {
    pts.map(|(x, y)| format!("{:.2},{:.2}", f.x(x), f.y(y))).collect::<Vec<_>>().join(" ")
}

/// Renders the scene. `speeds`, when given, must have one entry per
/// trajectory point.
pub fn render_svg(scene: &Scene, traj: &[TrajectoryRow], bubbles: &[BubbleRow], speeds: Option<&[f64]>) -> String {
    let [bx0, by0, bx1, by1] = scene.workspace.bounds;
    let scale = (WIDTH - 2.0 * MARGIN - BAR) / (bx1 - bx0);
    let f = Frame { x0: bx0, y1: by1, scale };
    let height = 2.0 * MARGIN + (by1 - by0) * scale;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.0} {height:.0}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#222" stroke-width="1"/>"##,
        f.x(bx0),
        f.y(by1),
        (bx1 - bx0) * scale,
        (by1 - by0) * scale
    );
    let _ = writeln!(s, r##"<g fill="#b9b9b9" stroke="#666" stroke-width="0.5">"##);
    for poly in &scene.workspace.obstacles {
        let _ = writeln!(s, r#"<polygon points="{}"/>"#, points(&f, poly.iter().map(|p| (p[0], p[1]))));
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r##"<g fill="#6fa8dc" fill-opacity="0.12" stroke="#6fa8dc" stroke-width="0.4">"##);
    for b in bubbles {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}"/>"#, f.x(b.center_x), f.y(b.center_y), b.radius * scale);
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#444" stroke-width="1" stroke-dasharray="4 3"/>"##,
        points(&f, scene.reference.iter().map(|p| (p[0], p[1])))
    );

    let range = speeds.map(|v| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    });
    match (speeds, range) {
        (Some(v), Some((lo, hi))) => {
            let span = hi - lo;
            let _ = writeln!(s, r#"<g stroke-width="2.2" stroke-linecap="round">"#);
            for w in traj.windows(2) {
                // a constant speed sits mid-scale
                let t = if span > 1e-9 { (0.5 * (v[w[0].k] + v[w[1].k]) - lo) / span } else { 0.5 };
                let _ = writeln!(
                    s,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}"/>"#,
                    f.x(w[0].x),
                    f.y(w[0].y),
                    f.x(w[1].x),
                    f.y(w[1].y),
                    colour(t)
                );
            }
            let _ = writeln!(s, "</g>");
            let (x, top, h) = (WIDTH - BAR + 10.0, MARGIN + 20.0, (height - 2.0 * MARGIN - 40.0).max(40.0));
            let _ = writeln!(s, r#"<defs><linearGradient id="speed" x1="0" y1="1" x2="0" y2="0">"#);
            for i in 0..=4 {
                let t = i as f64 / 4.0;
                let _ = writeln!(s, r#"<stop offset="{t:.2}" stop-color="{}"/>"#, colour(t));
            }
            let _ = writeln!(s, "</linearGradient></defs>");
            let _ = writeln!(s, r##"<rect x="{x:.2}" y="{top:.2}" width="14" height="{h:.2}" fill="url(#speed)" stroke="#222" stroke-width="0.5"/>"##);
            let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="11">"#);
            let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}">m/s</text>"#, top - 6.0);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{hi:.1}</text>"#, x + 18.0, top + 10.0);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{lo:.1}</text>"#, x + 18.0, top + h);
            let _ = writeln!(s, "</g>");
        }
        _ => {
            let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#d62728" stroke-width="2"/>"##, points(&f, traj.iter().map(|r| (r.x, r.y))));
        }
    }
    let _ = writeln!(s, "</svg>");
    s
}

/// Redraws `dir/plot.svg` from the artifacts in `dir`. Returns warnings
/// for optional inputs that were missing.
pub fn plot_dir(dir: &Path) -> Result<Vec<String>, PlotError> {
    let report_path = dir.join("report.json");
    let text = fs::read_to_string(&report_path).map_err(|e| PlotError::Io(report_path.display().to_string(), e))?;
    let report: RunReport = serde_json::from_str(&text)?;
    let scene = report.scene.ok_or(PlotError::NoScene)?;
    let traj: Vec<TrajectoryRow> = read_csv(&dir.join("trajectory.csv"))?;
    let mut warnings = Vec::new();
    let bubbles_path = dir.join("bubbles.csv");
    let bubbles: Vec<BubbleRow> = if bubbles_path.exists() {
        read_csv(&bubbles_path)?
    } else {
        warnings.push("bubbles.csv missing; drawing without bubbles".to_string());
        Vec::new()
    };
    let speed_path = dir.join("speed.csv");
    let speeds: Option<Vec<f64>> = if speed_path.exists() {
        let rows: Vec<SpeedRow> = read_csv(&speed_path)?;
        if rows.len() == traj.len() {
            Some(rows.iter().map(|r| r.speed).collect())
        } else {
            warnings.push(format!("speed.csv has {} rows for {} waypoints; drawing without speeds", rows.len(), traj.len()));
            None
        }
    } else {
        warnings.push("speed.csv missing; drawing without speed colours".to_string());
        None
    };
    let svg = render_svg(&scene, &traj, &bubbles, speeds.as_deref());
    let out = dir.join("plot.svg");
    fs::write(&out, svg).map_err(|e| PlotError::Io(out.display().to_string(), e))?;
    Ok(warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ces_core::scenarios::WorkspaceSpec;

    fn scene() -> Scene {
        Scene {
            workspace: WorkspaceSpec { bounds: [0.0, 0.0, 10.0, 5.0], obstacles: vec![vec![[4.0, 0.0], [6.0, 0.0], [6.0, 2.0], [4.0, 2.0]]] },
            reference: vec![[1.0, 3.0], [5.0, 3.5], [9.0, 3.0]],
            r_min_m: 1.0,
        }
    }

    fn traj() -> Vec<TrajectoryRow> {
        vec![TrajectoryRow { k: 0, x: 1.0, y: 3.0 }, TrajectoryRow { k: 1, x: 5.0, y: 3.2 }, TrajectoryRow { k: 2, x: 9.0, y: 3.0 }]
    }

    #[test]
    fn colour_map_ends() {
        assert_eq!(colour(0.0), "#440154");
        assert_eq!(colour(1.0), "#fde725");
        assert_eq!(colour(f64::NAN), "#440154");
    }

    #[test]
    fn svg_is_deterministic_and_complete() {
        let b = [BubbleRow { index: 1, center_x: 5.0, center_y: 3.2, radius: 1.2 }];
        let a = render_svg(&scene(), &traj(), &b, Some(&[0.0, 3.0, 0.0]));
        assert_eq!(a, render_svg(&scene(), &traj(), &b, Some(&[0.0, 3.0, 0.0])));
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert_eq!(a.matches("<polygon").count(), 1);
        assert_eq!(a.matches("<circle").count(), 1);
        assert_eq!(a.matches("<line ").count(), 2);
        assert!(a.contains("linearGradient"));
    }

    #[test]
    fn without_speeds_draws_a_plain_path() {
        let a = render_svg(&scene(), &traj(), &[], None);
        assert!(!a.contains("linearGradient"));
        assert_eq!(a.matches("<polyline").count(), 2);
    }
}
