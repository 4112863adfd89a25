//! Minimal static SVG charts (line/point series, linear or log axes).

use crate::error::Result;
use std::path::Path;

struct Series {
    label: String,
    xs: Vec<f64>,
    ys: Vec<f64>,
    color: String,
    points: bool,
}

pub struct SvgPlot {
    title: String,
    xlabel: String,
    ylabel: String,
    xlog: bool,
    ylog: bool,
    series: Vec<Series>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 70.0;
const MR: f64 = 20.0;
const MT: f64 = 40.0;
const MB: f64 = 50.0;

impl SvgPlot {
    pub fn new(title: &str, xlabel: &str, ylabel: &str, xlog: bool, ylog: bool) -> SvgPlot {
        SvgPlot {
            title: title.into(),
            xlabel: xlabel.into(),
            ylabel: ylabel.into(),
            xlog,
            ylog,
            series: Vec::new(),
        }
    }

    pub fn add_series(&mut self, label: &str, xs: &[f64], ys: &[f64], color: &str, points: bool) {
        self.series.push(Series {
            label: label.into(),
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            color: color.into(),
            points,
        });
    }

    fn transform(v: f64, log: bool) -> f64 {
        if log {
            v.max(1e-300).log10()
        } else {
            v
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for s in &self.series {
            for (&x, &y) in s.xs.iter().zip(&s.ys) {
                xs.push(Self::transform(x, self.xlog));
                ys.push(Self::transform(y, self.ylog));
            }
        }
        let (mut x0, mut x1) = (
            xs.iter().cloned().fold(f64::INFINITY, f64::min),
            xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        let (mut y0, mut y1) = (
            ys.iter().cloned().fold(f64::INFINITY, f64::min),
            ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        if !x0.is_finite() || x1 - x0 < 1e-12 {
            x0 -= 0.5;
            x1 = x0 + 1.0;
        }
        if !y0.is_finite() || y1 - y0 < 1e-12 {
            y0 -= 0.5;
            y1 = y0 + 1.0;
        }
        let padx = 0.05 * (x1 - x0);
        let pady = 0.07 * (y1 - y0);
        let (x0, x1, y0, y1) = (x0 - padx, x1 + padx, y0 - pady, y1 + pady);
        let sx = |v: f64| ML + (Self::transform(v, self.xlog) - x0) / (x1 - x0) * (W - ML - MR);
        let sy = |v: f64| H - MB - (Self::transform(v, self.ylog) - y0) / (y1 - y0) * (H - MT - MB);
        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
             viewBox=\"0 0 {W} {H}\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" \
             font-family=\"sans-serif\">{}</text>\n",
            W / 2.0,
            xml(&self.title)
        ));
        // Axes box.
        out.push_str(&format!(
            "<rect x=\"{ML}\" y=\"{MT}\" width=\"{}\" height=\"{}\" fill=\"none\" \
             stroke=\"#333\"/>\n",
            W - ML - MR,
            H - MT - MB
        ));
        // Ticks: 5 per axis in transformed coordinates.
        for i in 0..=4 {
            let tx = x0 + (x1 - x0) * i as f64 / 4.0;
            let ty = y0 + (y1 - y0) * i as f64 / 4.0;
            let px = ML + (W - ML - MR) * i as f64 / 4.0;
            let py = H - MB - (H - MT - MB) * i as f64 / 4.0;
            let xv = if self.xlog { 10f64.powf(tx) } else { tx };
            let yv = if self.ylog { 10f64.powf(ty) } else { ty };
            out.push_str(&format!(
                "<line x1=\"{px}\" y1=\"{}\" x2=\"{px}\" y2=\"{}\" stroke=\"#333\"/>\n",
                H - MB,
                H - MB + 5.0
            ));
            out.push_str(&format!(
                "<text x=\"{px}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\" \
                 font-family=\"sans-serif\">{}</text>\n",
                H - MB + 18.0,
                fmt_tick(xv)
            ));
            out.push_str(&format!(
                "<line x1=\"{}\" y1=\"{py}\" x2=\"{ML}\" y2=\"{py}\" stroke=\"#333\"/>\n",
                ML - 5.0
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"11\" \
                 font-family=\"sans-serif\">{}</text>\n",
                ML - 8.0,
                py + 4.0,
                fmt_tick(yv)
            ));
        }
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" \
             font-family=\"sans-serif\">{}</text>\n",
            W / 2.0,
            H - 12.0,
            xml(&self.xlabel)
        ));
        out.push_str(&format!(
            "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" \
             font-family=\"sans-serif\" transform=\"rotate(-90 16 {})\">{}</text>\n",
            H / 2.0,
            H / 2.0,
            xml(&self.ylabel)
        ));
        // Series.
        for (si, s) in self.series.iter().enumerate() {
            let pts: Vec<String> = s
                .xs
                .iter()
                .zip(&s.ys)
                .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.7\"/>\n",
                pts.join(" "),
                s.color
            ));
            if s.points {
                for (&x, &y) in s.xs.iter().zip(&s.ys) {
                    out.push_str(&format!(
                        "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.2\" fill=\"{}\"/>\n",
                        sx(x),
                        sy(y),
                        s.color
                    ));
                }
            }
            // Legend entry.
            let ly = MT + 16.0 + 16.0 * si as f64;
            out.push_str(&format!(
                "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{}\" \
                 stroke-width=\"2\"/>\n",
                ML + 10.0,
                ML + 34.0,
                s.color
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-size=\"11\" font-family=\"sans-serif\">{}</text>\n",
                ML + 40.0,
                ly + 4.0,
                xml(&s.label)
            ));
        }
        out.push_str("</svg>\n");
        std::fs::write(path, out)?;
        Ok(())
    }
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 0.01 && v.abs() < 1000.0 {
        format!("{v:.3}")
    } else {
        format!("{v:.1e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_valid_svg() {
        let mut p = SvgPlot::new("t", "x", "y", true, true);
        p.add_series("a", &[0.5, 0.25, 0.125], &[0.1, 0.05, 0.02], "#1f6fb2", true);
        let dir = std::env::temp_dir().join("poreflow_plot_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.svg");
        p.write(&path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        assert!(body.starts_with("<svg"));
        assert!(body.contains("polyline"));
        assert!(body.ends_with("</svg>\n"));
    }
}
