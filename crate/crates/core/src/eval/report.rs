use std::fmt::Write as _;
use std::path::Path;

use crate::detection::Detection;
use crate::error::Result;
use crate::features::Image;

/// Write a CSV file with a header row.
pub fn write_csv(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> crate::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io.into(),
        other => crate::Error::Data(format!("csv: {other:?}")),
    }
}

/// A named polyline for [`svg_curve`].
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Self-contained SVG line plot over `[0, x_max] x [0, 1]`.
pub fn svg_curve(title: &str, x_label: &str, y_label: &str, x_max: f64, series: &[Series]) -> String {
    let (w, h, m) = (480.0, 360.0, 50.0);
    let (pw, ph) = (w - 2.0 * m, h - 2.0 * m);
    let sx = |x: f64| m + pw * (x / x_max).clamp(0.0, 1.0);
    let sy = |y: f64| h - m - ph * y.clamp(0.0, 1.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.3}</text>"#,
            sx(f * x_max),
            h - m + 16.0,
            f * x_max
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.1}</text>"#, m - 6.0, sy(f) + 4.0, f);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            w - m - 120.0,
            m + 16.0 * (i as f64 + 1.0),
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// RGB copy of `image` with each detection's box in yellow, visible
/// landmarks in green and occluded landmarks in red.
pub fn render_overlay(image: &Image, detections: &[Detection]) -> Image {
    let mut out = image.to_rgb();
    let (w, h) = (out.width() as i64, out.height() as i64);
    let put = |out: &mut Image, x: i64, y: i64, rgb: [f32; 3]| {
        if x >= 0 && y >= 0 && x < w && y < h {
            for (c, v) in rgb.iter().enumerate() {
                out.set(x as usize, y as usize, c, *v);
            }
        }
    };
    for d in detections {
        let b = d.bbox;
        let (x0, y0, x1, y1) = (b.x0.round() as i64, b.y0.round() as i64, b.x1.round() as i64, b.y1.round() as i64);
        for x in x0..=x1 {
            put(&mut out, x, y0, [1.0, 1.0, 0.0]);
            put(&mut out, x, y1, [1.0, 1.0, 0.0]);
        }
        for y in y0..=y1 {
            put(&mut out, x0, y, [1.0, 1.0, 0.0]);
            put(&mut out, x1, y, [1.0, 1.0, 0.0]);
        }
        for (p, &occ) in d.landmarks.iter().zip(&d.occluded) {
            let rgb = if occ { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            let (cx, cy) = (p[0].round() as i64, p[1].round() as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    put(&mut out, cx + dx, cy + dy, rgb);
                }
            }
        }
    }
    out
}
