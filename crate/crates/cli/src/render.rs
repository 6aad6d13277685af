//! Deterministic SVG renders of worlds, maps, trajectories and topological
//! graphs.
//!
//! One SVG unit is one grid cell; y grows upward in the world and downward
//! in SVG, so rows are flipped. Output depends only on the inputs.

use std::fmt::Write;

use navlab::explore::{explored_window, Window};
use navlab::mapping::{semantic_channel, MetricMap, EXPLORED, OBSTACLE, THRESHOLD};
use navlab::topo::{TopoGraph, NODE_RADIUS};
use navlab::world::{ContinuousPose, GridWorld};

const PALETTE: [&str; 8] = ["#e6194b", "#3cb44b", "#ffe119", "#4363d8", "#f58231", "#911eb4", "#46f0f0", "#f032e6"];
const OBSTACLE_FILL: &str = "#303030";
const EXPLORED_FILL: &str = "#dcecf7";
const PATH_STROKE: &str = "#d62728";

fn category_color(c: usize) -> &'static str {
    PALETTE[(c - 1) % PALETTE.len()]
}

/// Maps world meters to SVG units for a frame whose lower-left grid cell
/// is `(x0, y0)` and which is `rows` cells tall.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub cell: f64,
    /// World position of the lower-left corner of the frame.
    pub origin: (f64, f64),
    pub cols: usize,
    pub rows: usize,
}

impl Frame {
    pub fn for_world(world: &GridWorld) -> Self {
        Self {
            cell: world.cell_size(),
            origin: (0.0, 0.0),
            cols: world.width(),
            rows: world.height(),
        }
    }

    /// Marker and text size: a fixed fraction of the larger side.
    pub fn unit(&self) -> f64 {
        (self.cols.max(self.rows) as f64 / 50.0).max(1.0)
    }

    pub fn to_svg(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.origin.0) / self.cell, self.rows as f64 - (y - self.origin.1) / self.cell)
    }

    #[cfg(test)]
    pub fn to_world(&self, u: f64, v: f64) -> (f64, f64) {
        (self.origin.0 + u * self.cell, self.origin.1 + (self.rows as f64 - v) * self.cell)
    }
}

fn header(out: &mut String, frame: &Frame) {
    let (w, h) = (frame.cols as f64, frame.rows as f64 + 3.0 * frame.unit());
    let scale = (900.0 / w.max(h)).max(1.0);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {w} {h}" shape-rendering="crispEdges">"#,
        w * scale,
        h * scale
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
}

/// Horizontal runs of cells sharing a fill, one rect per run.
fn runs(out: &mut String, rows: usize, cols: usize, mut fill: impl FnMut(usize, usize) -> Option<&'static str>) {
    for r in 0..rows {
        let mut c = 0;
        while c < cols {
            let Some(f) = fill(c, r) else {
                c += 1;
                continue;
            };
            let start = c;
            while c < cols && fill(c, r) == Some(f) {
                c += 1;
            }
            let _ = writeln!(
                out,
                r#"<rect x="{start}" y="{}" width="{}" height="1" fill="{f}"/>"#,
                rows - 1 - r,
                c - start
            );
        }
    }
}

fn legend(out: &mut String, frame: &Frame, entries: &[(&str, &str)]) {
    let u = frame.unit();
    let y = frame.rows as f64 + 0.5 * u;
    let _ = writeln!(
        out,
        r#"<rect x="0" y="{}" width="{}" height="{}" fill="white"/>"#,
        frame.rows,
        frame.cols,
        3.0 * u
    );
    let _ = writeln!(out, r#"<g font-family="sans-serif" font-size="{:.2}">"#, 1.6 * u);
    let mut x = 0.5 * u;
    for (label, color) in entries {
        let _ = writeln!(out, r#"<rect x="{x}" y="{y}" width="{s:.2}" height="{s:.2}" fill="{color}" stroke="black" stroke-width="{:.2}"/>"#, 0.1 * u, s = 1.6 * u);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">{label}</text>"#, x + 2.0 * u, y + 1.4 * u);
        x += (3.0 + 0.95 * label.len() as f64) * u;
    }
    let _ = writeln!(out, "</g>");
}

fn trajectory(out: &mut String, frame: &Frame, poses: &[ContinuousPose]) {
    let Some(first) = poses.first() else { return };
    let mut points = String::new();
    for p in poses {
        let (u, v) = frame.to_svg(p.x, p.y);
        let _ = write!(points, "{u:.3},{v:.3} ");
    }
    let _ = writeln!(
        out,
        r#"<polyline id="trajectory" points="{}" fill="none" stroke="{PATH_STROKE}" stroke-width="{:.2}"/>"#,
        points.trim_end(),
        0.25 * frame.unit()
    );
    let (u, v) = frame.to_svg(first.x, first.y);
    let _ = writeln!(out, r#"<circle cx="{u:.3}" cy="{v:.3}" r="{:.2}" fill="{PATH_STROKE}"/>"#, 0.6 * frame.unit());
}

fn world_cells(out: &mut String, world: &GridWorld) {
    runs(out, world.height(), world.width(), |x, y| {
        if world.is_free(x, y) {
            None
        } else {
            match world.semantic(x, y) {
                0 => Some(OBSTACLE_FILL),
                c => Some(category_color(usize::from(c))),
            }
        }
    });
}

/// The world's obstacles and objects, optionally with a trajectory.
pub fn world_svg(world: &GridWorld, poses: &[ContinuousPose]) -> String {
    let frame = Frame::for_world(world);
    let mut out = String::new();
    header(&mut out, &frame);
    world_cells(&mut out, world);
    trajectory(&mut out, &frame, poses);
    let mut entries = vec![("obstacle", OBSTACLE_FILL)];
    let names: Vec<String> = (1..=usize::from(world.max_category())).map(|c| format!("object {c}")).collect();
    for (c, n) in names.iter().enumerate() {
        entries.push((n.as_str(), category_color(c + 1)));
    }
    if !poses.is_empty() {
        entries.push(("path", PATH_STROKE));
    }
    legend(&mut out, &frame, &entries);
    out.push_str("</svg>\n");
    out
}

/// Frame of a map window; map cell centers sit at integer grid coordinates.
pub fn map_frame(map: &MetricMap, win: Window) -> Frame {
    let (x, y) = map.cell_center(win.x0, win.y0);
    let r = map.resolution();
    Frame {
        cell: r,
        origin: (x - 0.5 * r, y - 0.5 * r),
        cols: win.width(),
        rows: win.height(),
    }
}

/// Map composite: explored space, obstacles and semantic labels over the
/// explored part of the map, with a trajectory overlay. An empty map gives a
/// blank canvas with the legend.
pub fn map_svg(map: &MetricMap, poses: &[ContinuousPose]) -> String {
    let n = map.size();
    let win = explored_window(map).map_or(Window::full(n), |w| w.grow(4, n));
    let frame = map_frame(map, win);
    let mut out = String::new();
    header(&mut out, &frame);
    runs(&mut out, win.height(), win.width(), |c, r| {
        let (i, j) = (win.x0 + c, win.y0 + r);
        if let Some(cat) = (1..=map.categories()).find(|k| map.get(semantic_channel(*k), i, j) >= THRESHOLD) {
            Some(category_color(cat))
        } else if map.get(OBSTACLE, i, j) >= THRESHOLD {
            Some(OBSTACLE_FILL)
        } else if map.get(EXPLORED, i, j) >= THRESHOLD {
            Some(EXPLORED_FILL)
        } else {
            None
        }
    });
    trajectory(&mut out, &frame, poses);
    let names: Vec<String> = (1..=map.categories()).map(|c| format!("object {c}")).collect();
    let mut entries = vec![("explored", EXPLORED_FILL), ("obstacle", OBSTACLE_FILL), ("path", PATH_STROKE)];
    for (c, name) in names.iter().enumerate() {
        entries.push((name.as_str(), category_color(c + 1)));
    }
    legend(&mut out, &frame, &entries);
    out.push_str("</svg>\n");
    out
}

/// Topological graph over its world: nodes with their radius, edges, and
/// ghosts dashed.
pub fn graph_svg(world: &GridWorld, graph: &TopoGraph) -> String {
    let frame = Frame::for_world(world);
    let u = frame.unit();
    let mut out = String::new();
    header(&mut out, &frame);
    world_cells(&mut out, world);
    for node in &graph.nodes {
        let (cx, cy) = frame.to_svg(node.pose.x, node.pose.y);
        let _ = writeln!(
            out,
            r##"<circle cx="{cx:.3}" cy="{cy:.3}" r="{:.3}" fill="#1f77b4" fill-opacity="0.06" stroke="#1f77b4" stroke-width="{:.2}"/>"##,
            NODE_RADIUS / world.cell_size(),
            0.1 * u
        );
    }
    for e in &graph.edges {
        let (a, b) = (graph.nodes[e.from].pose, graph.nodes[e.to].pose);
        let ((u0, v0), (u1, v1)) = (frame.to_svg(a.x, a.y), frame.to_svg(b.x, b.y));
        let _ = writeln!(
            out,
            r##"<line x1="{u0:.3}" y1="{v0:.3}" x2="{u1:.3}" y2="{v1:.3}" stroke="#1f77b4" stroke-width="{:.2}"/>"##,
            0.35 * u
        );
    }
    for g in &graph.ghosts {
        let parent = &graph.nodes[g.parent];
        let (gx, gy) = g.position(parent);
        let ((u0, v0), (u1, v1)) = (frame.to_svg(parent.pose.x, parent.pose.y), frame.to_svg(gx, gy));
        let _ = writeln!(
            out,
            r##"<line x1="{u0:.3}" y1="{v0:.3}" x2="{u1:.3}" y2="{v1:.3}" stroke="#7f7f7f" stroke-width="{:.2}" stroke-dasharray="{:.2},{:.2}"/>"##,
            0.2 * u,
            0.8 * u,
            0.8 * u
        );
        let _ = writeln!(
            out,
            r##"<circle cx="{u1:.3}" cy="{v1:.3}" r="{:.2}" fill="none" stroke="#7f7f7f" stroke-width="{:.2}" stroke-dasharray="{:.2},{:.2}"/>"##,
            0.6 * u,
            0.2 * u,
            0.4 * u,
            0.4 * u
        );
    }
    for node in &graph.nodes {
        let (cx, cy) = frame.to_svg(node.pose.x, node.pose.y);
        let fill = if graph.current == Some(node.id) { "#ff7f0e" } else { "#1f77b4" };
        let _ = writeln!(out, r#"<circle cx="{cx:.3}" cy="{cy:.3}" r="{:.2}" fill="{fill}"/>"#, 0.8 * u);
    }
    legend(
        &mut out,
        &frame,
        &[("obstacle", OBSTACLE_FILL), ("node", "#1f77b4"), ("current", "#ff7f0e"), ("ghost", "#7f7f7f")],
    );
    out.push_str("</svg>\n");
    out
}
