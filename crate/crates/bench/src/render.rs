//! Static SVG rendering of an executed trajectory and a planned horizon.

use std::fmt::Write;

use pipc_core::environment::Obstacle;

#[derive(Debug, Clone, PartialEq)]
pub struct Style {
    /// Pixels per metre.
    pub scale: f64,
    pub padding: f64,
    pub executed: String,
    pub horizon: String,
    pub obstacle: String,
    pub arena: String,
    pub start: String,
    pub goal: String,
    pub stroke_width: f64,
}

impl Default for Style {
    fn default() -> Self {
        Self {
            scale: 20.0,
            padding: 10.0,
            executed: "green".into(),
            horizon: "black".into(),
            obstacle: "#b03030".into(),
            arena: "#444444".into(),
            start: "#1f5fbf".into(),
            goal: "#d08000".into(),
            stroke_width: 2.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scene {
    pub arena: [f64; 2],
    pub obstacles: Vec<Obstacle>,
    pub executed: Vec<[f64; 2]>,
    pub horizon: Vec<[f64; 2]>,
    pub start: Option<[f64; 2]>,
    pub goal: Option<[f64; 2]>,
    pub robot_radius: f64,
}

/// World to pixel mapping with the y axis pointing up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Viewport {
    pub scale: f64,
    pub padding: f64,
    pub height: f64,
}

impl Viewport {
    pub fn new(style: &Style, arena: [f64; 2]) -> Self {
        Self { scale: style.scale, padding: style.padding, height: arena[1] }
    }

    pub fn to_px(&self, p: [f64; 2]) -> [f64; 2] {
        [self.padding + p[0] * self.scale, self.padding + (self.height - p[1]) * self.scale]
    }

    pub fn to_world(&self, q: [f64; 2]) -> [f64; 2] {
        [(q[0] - self.padding) / self.scale, self.height - (q[1] - self.padding) / self.scale]
    }
}

fn points_attr(vp: &Viewport, pts: &[[f64; 2]]) -> String {
    pts.iter()
        .map(|p| {
            let q = vp.to_px(*p);
            format!("{:.3},{:.3}", q[0], q[1])
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn render_svg(scene: &Scene, style: &Style) -> String {
    let vp = Viewport::new(style, scene.arena);
    let w = scene.arena[0] * style.scale + 2.0 * style.padding;
    let h = scene.arena[1] * style.scale + 2.0 * style.padding;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.3} {h:.3}" data-scale="{}" data-padding="{}" data-height="{}">"#,
        style.scale, style.padding, scene.arena[1]
    );
    let _ = writeln!(
        s,
        r#"  <rect id="arena" x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="white" stroke="{}" stroke-width="1"/>"#,
        style.padding,
        style.padding,
        scene.arena[0] * style.scale,
        scene.arena[1] * style.scale,
        style.arena
    );
    for o in &scene.obstacles {
        let corner = vp.to_px([o.center[0] - o.half_extent, o.center[1] + o.half_extent]);
        let side = 2.0 * o.half_extent * style.scale;
        let _ = writeln!(
            s,
            r#"  <rect class="obstacle" x="{:.3}" y="{:.3}" width="{side:.3}" height="{side:.3}" fill="{}" fill-opacity="0.6"/>"#,
            corner[0], corner[1], style.obstacle
        );
    }
    if !scene.executed.is_empty() {
        let _ = writeln!(
            s,
            r#"  <polyline id="executed" points="{}" fill="none" stroke="{}" stroke-width="{}"/>"#,
            points_attr(&vp, &scene.executed),
            style.executed,
            style.stroke_width
        );
    }
    if !scene.horizon.is_empty() {
        let _ = writeln!(
            s,
            r#"  <polyline id="horizon" points="{}" fill="none" stroke="{}" stroke-width="{}"/>"#,
            points_attr(&vp, &scene.horizon),
            style.horizon,
            style.stroke_width
        );
    }
    let r = scene.robot_radius.max(0.1) * style.scale;
    for (id, p, color) in [("start", scene.start, &style.start), ("goal", scene.goal, &style.goal)] {
        if let Some(p) = p {
            let q = vp.to_px(p);
            let _ = writeln!(s, r#"  <circle id="{id}" cx="{:.3}" cy="{:.3}" r="{r:.3}" fill="{color}"/>"#, q[0], q[1]);
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Reads back the world coordinates of the polyline with the given id.
pub fn parse_polyline(svg: &str, id: &str) -> Option<Vec<[f64; 2]>> {
    let attr = |tag: &str, name: &str| -> Option<f64> {
        let key = format!("{name}=\"");
        let start = tag.find(&key)? + key.len();
        tag[start..].split('"').next()?.parse().ok()
    };
    let root = &svg[svg.find("<svg")?..];
    let root = &root[..root.find('>')?];
    let vp = Viewport {
        scale: attr(root, "data-scale")?,
        padding: attr(root, "data-padding")?,
        height: attr(root, "data-height")?,
    };
    let marker = format!("id=\"{id}\"");
    let line = svg.lines().find(|l| l.contains("<polyline") && l.contains(&marker))?;
    let start = line.find("points=\"")? + "points=\"".len();
    let pts = line[start..].split('"').next()?;
    pts.split_whitespace()
        .map(|pair| {
            let (x, y) = pair.split_once(',')?;
            Some(vp.to_world([x.parse().ok()?, y.parse().ok()?]))
        })
        .collect()
}
