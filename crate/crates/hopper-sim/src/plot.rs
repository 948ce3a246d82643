//! Self-contained SVG summary plots for a simulation trace: no plotting
//! dependency, just shapes. Output is an eight-panel figure (paths,
//! speeds, torques, forces, angles and the two torque-speed planes) plus
//! an optional stick-figure frame sequence.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::actuation::{operating_polygon, Joint};
use crate::kinematics::foot_in_hip;
use crate::model::RobotModel;
use crate::sim::SimTrace;

const PANEL_W: f64 = 560.0;
const PANEL_H: f64 = 300.0;
const MARGIN: f64 = 52.0;
/// Longest polyline we emit; longer series are stride-decimated.
const MAX_POINTS: usize = 4000;

const SERIES_COLORS: &[&str] = &["#1f6fb2", "#d1495b", "#2e8b57", "#8a5fbf"];
/// Stance-interval shading.
const STANCE_FILL: &str = "#f2b8b8";

pub fn render_summary(model: &RobotModel, trace: &SimTrace, path: &Path) -> io::Result<()> {
    let svg = summary_svg(model, trace);
    fs::write(path, svg)
}

/// Writes each panel as its own SVG file into `dir`: hip and foot paths,
/// hip tangential speed, joint torques, contact force, joint velocities,
/// joint angles, and the per-joint torque-speed planes.
pub fn render_plots(model: &RobotModel, trace: &SimTrace, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for (name, build) in PANELS {
        let panel = build(model, trace, 0, 0);
        fs::write(dir.join(format!("{name}.svg")), single_svg(panel))?;
    }
    Ok(())
}

/// Writes `count` stick-figure snapshots, equally spaced in time, into
/// `dir/frame_000.svg` and so on.
pub fn render_frames(
    model: &RobotModel,
    trace: &SimTrace,
    dir: &Path,
    count: usize,
) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    if trace.rows.is_empty() || count == 0 {
        return Ok(());
    }
    let n = trace.rows.len();
    for k in 0..count {
        let idx = (k * (n - 1)) / count.max(1).saturating_sub(1).max(1);
        let svg = frame_svg(model, trace, idx.min(n - 1));
        fs::write(dir.join(format!("frame_{k:03}.svg")), svg)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// panel assembly
// ---------------------------------------------------------------------------

type PanelBuilder = fn(&RobotModel, &SimTrace, usize, usize) -> Panel;

/// File stem and builder for every panel, in summary grid order.
const PANELS: [(&str, PanelBuilder); 8] = [
    ("sagittal_path", panel_path),
    ("hip_speed", panel_speed),
    ("joint_torques", panel_torques),
    ("contact_force", panel_force),
    ("joint_velocities", panel_velocities),
    ("joint_angles", panel_angles),
    ("torque_speed_hip", panel_ts_hip),
    ("torque_speed_knee", panel_ts_knee),
];

fn summary_svg(model: &RobotModel, trace: &SimTrace) -> String {
    let cols = 2usize;
    let rows = PANELS.len().div_ceil(cols);
    let width = cols as f64 * PANEL_W;
    let height = rows as f64 * PANEL_H;
    let mut body = String::new();
    let _ = write!(
        body,
        r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#
    );
    for (i, (_, build)) in PANELS.iter().enumerate() {
        build(model, trace, i % cols, i / cols).finish(&mut body);
    }
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"Helvetica,Arial,sans-serif\">\n{body}</svg>\n"
    )
}

fn single_svg(panel: Panel) -> String {
    let mut body = String::new();
    let _ = write!(
        body,
        r#"<rect x="0" y="0" width="{PANEL_W}" height="{PANEL_H}" fill="white"/>"#
    );
    panel.finish(&mut body);
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PANEL_W}\" height=\"{PANEL_H}\" \
         viewBox=\"0 0 {PANEL_W} {PANEL_H}\" font-family=\"Helvetica,Arial,sans-serif\">\n{body}</svg>\n"
    )
}

/// Sagittal hip and foot paths, azimuth unrolled to arc length.
fn panel_path(model: &RobotModel, trace: &SimTrace, col: usize, row: usize) -> Panel {
    let lb = model.gantry.boom_length;
    let hip: Vec<(f64, f64)> = trace
        .rows
        .iter()
        .map(|r| {
            (
                r.q[0] * lb,
                model.gantry.post_height + lb * r.q[1].sin(),
            )
        })
        .collect();
    let foot: Vec<(f64, f64)> = trace
        .rows
        .iter()
        .map(|r| {
            let p = foot_in_hip(model, r.q[2], r.q[3]);
            (r.q[0] * lb + p.x, r.foot[2])
        })
        .collect();
    let mut p = Panel::new(col, row, "sagittal path", "travel [m]", "height [m]");
    p.fit(hip.iter().chain(&foot));
    p.include_y(0.0);
    p.hline(0.0, "#999999");
    p.polyline(&hip, SERIES_COLORS[0], "hip");
    p.polyline(&foot, SERIES_COLORS[1], "foot");
    p
}

/// Hip tangential speed over time with stance shading.
fn panel_speed(model: &RobotModel, trace: &SimTrace, col: usize, row: usize) -> Panel {
    let lb = model.gantry.boom_length;
    let v: Vec<(f64, f64)> = trace
        .rows
        .iter()
        .map(|r| (r.t, r.qd[0] * lb * r.q[1].cos()))
        .collect();
    let mut p = Panel::new(col, row, "hip tangential speed", "t [s]", "v [m/s]");
    p.fit(v.iter());
    p.include_y(0.0);
    p.bands(&trace.stance_intervals());
    p.hline(0.0, "#999999");
    p.polyline(&v, SERIES_COLORS[0], "v_hip");
    p
}

fn panel_torques(_: &RobotModel, trace: &SimTrace, col: usize, row: usize) -> Panel {
    let hip: Vec<(f64, f64)> = trace.rows.iter().map(|r| (r.t, r.tau[0])).collect();
    let knee: Vec<(f64, f64)> = trace.rows.iter().map(|r| (r.t, r.tau[1])).collect();
    let mut p = Panel::new(col, row, "joint torques", "t [s]", "tau [N m]");
    p.fit(hip.iter().chain(&knee));
    p.bands(&trace.stance_intervals());
    p.hline(0.0, "#999999");
    p.polyline(&hip, SERIES_COLORS[0], "hip");
    p.polyline(&knee, SERIES_COLORS[1], "knee");
    p
}

fn panel_force(_: &RobotModel, trace: &SimTrace, col: usize, row: usize) -> Panel {
    let fz: Vec<(f64, f64)> = trace
        .rows
        .iter()
        .filter_map(|r| r.f_grf.map(|f| (r.t, f[1])))
        .collect();
    let mut p = Panel::new(col, row, "vertical contact force", "t [s]", "F_Z [N]");
    p.fit(fz.iter().chain([(0.0, 0.0)].iter()));
    p.bands(&trace.stance_intervals());
    p.hline(0.0, "#999999");
    p.scatter(&fz, SERIES_COLORS[2]);
    p
}

fn panel_velocities(_: &RobotModel, trace: &SimTrace, col: usize, row: usize) -> Panel {
    let hip: Vec<(f64, f64)> = trace.rows.iter().map(|r| (r.t, r.qd[2])).collect();
    let knee: Vec<(f64, f64)> = trace.rows.iter().map(|r| (r.t, r.qd[3])).collect();
    let mut p = Panel::new(col, row, "joint velocities", "t [s]", "thetadot [rad/s]");
    p.fit(hip.iter().chain(&knee));
    p.bands(&trace.stance_intervals());
    p.hline(0.0, "#999999");
    p.polyline(&hip, SERIES_COLORS[0], "hip");
    p.polyline(&knee, SERIES_COLORS[1], "knee");
    p
}

fn panel_angles(_: &RobotModel, trace: &SimTrace, col: usize, row: usize) -> Panel {
    let pitch: Vec<(f64, f64)> = trace.rows.iter().map(|r| (r.t, r.q[1])).collect();
    let hip: Vec<(f64, f64)> = trace.rows.iter().map(|r| (r.t, r.q[2])).collect();
    let knee: Vec<(f64, f64)> = trace.rows.iter().map(|r| (r.t, r.q[3])).collect();
    let mut p = Panel::new(col, row, "joint angles", "t [s]", "theta [rad]");
    p.fit(pitch.iter().chain(&hip).chain(&knee));
    p.bands(&trace.stance_intervals());
    p.hline(0.0, "#999999");
    p.polyline(&pitch, SERIES_COLORS[3], "pitch");
    p.polyline(&hip, SERIES_COLORS[0], "hip");
    p.polyline(&knee, SERIES_COLORS[1], "knee");
    p
}

/// Torque-speed samples over the feasible operating region outline.
fn panel_torque_speed(
    model: &RobotModel,
    trace: &SimTrace,
    col: usize,
    row: usize,
    joint: Joint,
) -> Panel {
    let (qd_idx, tau_idx, title) = match joint {
        Joint::Hip => (2, 0, "hip torque-speed"),
        Joint::Knee => (3, 1, "knee torque-speed"),
    };
    let poly = operating_polygon(&model.motor, joint);
    let mut outline: Vec<(f64, f64)> = poly.vertices().iter().map(|v| (v[1], v[0])).collect();
    outline.push(outline[0]);
    let pts: Vec<(f64, f64)> = trace
        .rows
        .iter()
        .map(|r| (r.qd[qd_idx], r.tau[tau_idx]))
        .collect();
    let mut p = Panel::new(col, row, title, "thetadot [rad/s]", "tau [N m]");
    p.fit(outline.iter().chain(&pts));
    p.polyline_dashed(&outline, "#444444");
    p.scatter(&pts, SERIES_COLORS[0]);
    p
}

fn panel_ts_hip(model: &RobotModel, trace: &SimTrace, col: usize, row: usize) -> Panel {
    panel_torque_speed(model, trace, col, row, Joint::Hip)
}

fn panel_ts_knee(model: &RobotModel, trace: &SimTrace, col: usize, row: usize) -> Panel {
    panel_torque_speed(model, trace, col, row, Joint::Knee)
}

fn frame_svg(model: &RobotModel, trace: &SimTrace, idx: usize) -> String {
    let row = &trace.rows[idx];
    let lb = model.gantry.boom_length;
    let x0 = row.q[0] * lb;
    let hip = (x0, model.gantry.post_height + lb * row.q[1].sin());
    // knee sits one thigh length down the chain; reuse the planar leg map
    let knee_off = {
        let l3 = model.leg.thigh_length;
        (l3 * row.q[2].sin(), -l3 * row.q[2].cos())
    };
    let knee = (hip.0 + knee_off.0, hip.1 + knee_off.1);
    let foot_p = foot_in_hip(model, row.q[2], row.q[3]);
    let foot = (hip.0 + foot_p.x, hip.1 + foot_p.y);

    let mut p = Panel::new(0, 0, &format!("t = {:.3} s ({})", row.t, row.phase), "travel [m]", "height [m]");
    let pts = [hip, knee, foot];
    p.fit(pts.iter());
    p.include_y(0.0);
    p.include_y(model.gantry.post_height + 0.05);
    p.pad_equal_aspect();
    p.hline(0.0, "#555555");
    p.polyline(&[hip, knee], "#1f6fb2", "");
    p.polyline(&[knee, foot], "#d1495b", "");
    p.circle(hip, 4.0, "#1f6fb2");
    p.circle(foot, 3.0, "#d1495b");
    let mut body = String::new();
    let _ = write!(
        body,
        r#"<rect x="0" y="0" width="{PANEL_W}" height="{PANEL_H}" fill="white"/>"#
    );
    p.finish(&mut body);
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PANEL_W}\" height=\"{PANEL_H}\" \
         viewBox=\"0 0 {PANEL_W} {PANEL_H}\" font-family=\"Helvetica,Arial,sans-serif\">\n{body}</svg>\n"
    )
}

// ---------------------------------------------------------------------------
// one panel: an axes box at a grid position plus data mapped into it
// ---------------------------------------------------------------------------

struct Panel {
    px: f64,
    py: f64,
    title: String,
    xlabel: String,
    ylabel: String,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
    shapes: String,
    legend: Vec<(String, &'static str)>,
}

impl Panel {
    fn new(col: usize, row: usize, title: &str, xlabel: &str, ylabel: &str) -> Self {
        Self {
            px: col as f64 * PANEL_W,
            py: row as f64 * PANEL_H,
            title: title.to_owned(),
            xlabel: xlabel.to_owned(),
            ylabel: ylabel.to_owned(),
            xmin: f64::INFINITY,
            xmax: f64::NEG_INFINITY,
            ymin: f64::INFINITY,
            ymax: f64::NEG_INFINITY,
            shapes: String::new(),
            legend: Vec::new(),
        }
    }

    fn fit<'a>(&mut self, pts: impl Iterator<Item = &'a (f64, f64)>) {
        for &(x, y) in pts {
            if x.is_finite() {
                self.xmin = self.xmin.min(x);
                self.xmax = self.xmax.max(x);
            }
            if y.is_finite() {
                self.ymin = self.ymin.min(y);
                self.ymax = self.ymax.max(y);
            }
        }
    }

    fn include_y(&mut self, y: f64) {
        self.ymin = self.ymin.min(y);
        self.ymax = self.ymax.max(y);
    }

    fn pad_equal_aspect(&mut self) {
        let (w, h) = (self.xmax - self.xmin, self.ymax - self.ymin);
        let plot_aspect = (PANEL_W - 2.0 * MARGIN) / (PANEL_H - 2.0 * MARGIN);
        if w / h.max(1e-12) < plot_aspect {
            let need = h * plot_aspect;
            let c = 0.5 * (self.xmin + self.xmax);
            self.xmin = c - need / 2.0;
            self.xmax = c + need / 2.0;
        } else {
            let need = w / plot_aspect;
            let c = 0.5 * (self.ymin + self.ymax);
            self.ymin = c - need / 2.0;
            self.ymax = c + need / 2.0;
        }
    }

    fn ranges(&self) -> (f64, f64, f64, f64) {
        let (mut xmin, mut xmax, mut ymin, mut ymax) =
            (self.xmin, self.xmax, self.ymin, self.ymax);
        if !xmin.is_finite() || !xmax.is_finite() {
            (xmin, xmax) = (0.0, 1.0);
        }
        if !ymin.is_finite() || !ymax.is_finite() {
            (ymin, ymax) = (0.0, 1.0);
        }
        if xmax - xmin < 1e-12 {
            xmin -= 0.5;
            xmax += 0.5;
        }
        if ymax - ymin < 1e-12 {
            ymin -= 0.5;
            ymax += 0.5;
        }
        let (dx, dy) = (0.04 * (xmax - xmin), 0.06 * (ymax - ymin));
        (xmin - dx, xmax + dx, ymin - dy, ymax + dy)
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let (xmin, xmax, ymin, ymax) = self.ranges();
        let fx = (x - xmin) / (xmax - xmin);
        let fy = (y - ymin) / (ymax - ymin);
        (
            self.px + MARGIN + fx * (PANEL_W - 2.0 * MARGIN),
            self.py + (PANEL_H - MARGIN) - fy * (PANEL_H - 2.0 * MARGIN),
        )
    }

    fn decimate(pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
        if pts.len() <= MAX_POINTS {
            return pts.to_vec();
        }
        let stride = pts.len().div_ceil(MAX_POINTS);
        let mut out: Vec<(f64, f64)> = pts.iter().step_by(stride).copied().collect();
        if let Some(last) = pts.last() {
            if out.last() != Some(last) {
                out.push(*last);
            }
        }
        out
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &'static str, label: &str) {
        if pts.is_empty() {
            return;
        }
        let mut d = String::new();
        for (x, y) in Self::decimate(pts) {
            let (px, py) = self.map(x, y);
            let _ = write!(d, "{px:.2},{py:.2} ");
        }
        let _ = write!(
            self.shapes,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.2"/>"#,
            d.trim_end()
        );
        if !label.is_empty() {
            self.legend.push((label.to_owned(), color));
        }
    }

    fn polyline_dashed(&mut self, pts: &[(f64, f64)], color: &'static str) {
        if pts.is_empty() {
            return;
        }
        let mut d = String::new();
        for &(x, y) in pts {
            let (px, py) = self.map(x, y);
            let _ = write!(d, "{px:.2},{py:.2} ");
        }
        let _ = write!(
            self.shapes,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1" stroke-dasharray="5 3"/>"#,
            d.trim_end()
        );
    }

    fn scatter(&mut self, pts: &[(f64, f64)], color: &'static str) {
        for (x, y) in Self::decimate(pts) {
            let (px, py) = self.map(x, y);
            let _ = write!(
                self.shapes,
                r#"<circle cx="{px:.2}" cy="{py:.2}" r="1.3" fill="{color}" fill-opacity="0.6"/>"#
            );
        }
    }

    fn circle(&mut self, p: (f64, f64), r: f64, color: &'static str) {
        let (px, py) = self.map(p.0, p.1);
        let _ = write!(
            self.shapes,
            r#"<circle cx="{px:.2}" cy="{py:.2}" r="{r}" fill="{color}"/>"#
        );
    }

    fn hline(&mut self, y: f64, color: &'static str) {
        let (xmin, xmax, _, _) = self.ranges();
        let (x0, py) = self.map(xmin, y);
        let (x1, _) = self.map(xmax, y);
        let _ = write!(
            self.shapes,
            r#"<line x1="{x0:.2}" y1="{py:.2}" x2="{x1:.2}" y2="{py:.2}" stroke="{color}" stroke-width="0.8"/>"#
        );
    }

    /// Light red vertical bands marking stance intervals on a time axis.
    fn bands(&mut self, spans: &[(f64, f64)]) {
        let (_, _, ymin, ymax) = self.ranges();
        for &(a, b) in spans {
            let (x0, y1) = self.map(a, ymin);
            let (x1, y0) = self.map(b, ymax);
            let w = (x1 - x0).max(0.5);
            let h = y1 - y0;
            let _ = write!(
                self.shapes,
                r#"<rect x="{x0:.2}" y="{y0:.2}" width="{w:.2}" height="{h:.2}" fill="{STANCE_FILL}" fill-opacity="0.45"/>"#
            );
        }
    }

    fn finish(self, out: &mut String) {
        let (xmin, xmax, ymin, ymax) = self.ranges();
        let (bx0, by1) = self.map(xmin, ymin);
        let (bx1, by0) = self.map(xmax, ymax);
        let _ = write!(
            out,
            r#"<rect x="{bx0:.2}" y="{by0:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black" stroke-width="1"/>"#,
            bx1 - bx0,
            by1 - by0
        );
        // ticks
        for k in 0..=4 {
            let x = xmin + (xmax - xmin) * k as f64 / 4.0;
            let (px, _) = self.map(x, ymin);
            let _ = write!(
                out,
                r#"<line x1="{px:.2}" y1="{by1:.2}" x2="{px:.2}" y2="{:.2}" stroke="black" stroke-width="0.8"/>"#,
                by1 + 4.0
            );
            let _ = write!(
                out,
                r#"<text x="{px:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
                by1 + 15.0,
                tick_label(x)
            );
        }
        for k in 0..=3 {
            let y = ymin + (ymax - ymin) * k as f64 / 3.0;
            let (_, py) = self.map(xmin, y);
            let _ = write!(
                out,
                r#"<line x1="{:.2}" y1="{py:.2}" x2="{bx0:.2}" y2="{py:.2}" stroke="black" stroke-width="0.8"/>"#,
                bx0 - 4.0
            );
            let _ = write!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
                bx0 - 6.0,
                py + 3.0,
                tick_label(y)
            );
        }
        // bands and data go above the frame but below the labels
        out.push_str(&self.shapes);
        let _ = write!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" font-weight="bold" text-anchor="middle">{}</text>"#,
            self.px + PANEL_W / 2.0,
            self.py + 16.0,
            xml_escape(&self.title)
        );
        let _ = write!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            self.px + PANEL_W / 2.0,
            self.py + PANEL_H - 8.0,
            xml_escape(&self.xlabel)
        );
        let _ = write!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
            self.px + 14.0,
            self.py + PANEL_H / 2.0,
            self.px + 14.0,
            self.py + PANEL_H / 2.0,
            xml_escape(&self.ylabel)
        );
        for (i, (label, color)) in self.legend.iter().enumerate() {
            let lx = self.px + PANEL_W - MARGIN - 70.0;
            let ly = self.py + 24.0 + 14.0 * i as f64;
            let _ = write!(
                out,
                r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
                lx + 18.0
            );
            let _ = write!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-size="10">{}</text>"#,
                lx + 22.0,
                ly + 3.0,
                xml_escape(label)
            );
        }
    }
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".to_owned();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_owned()
    } else {
        format!("{v:.1e}")
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
