//! Actual-vs-predicted density curves as text series and SVG charts.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph::{bin_center, discretize_pdf, PDF_BINS};

const DIRECTIONS: [&str; 2] = ["east", "west"];

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub id: String,
    /// Bin centers, s.
    pub t: Vec<f64>,
    /// Per direction (east, west).
    pub actual: [Vec<f64>; 2],
    pub predicted: [Vec<f64>; 2],
}

impl PlotSeries {
    pub fn new(id: String, mu: [f64; 2], sigma: [f64; 2], mu_pred: [f64; 2], sigma_pred: [f64; 2]) -> Self {
        Self {
            id,
            t: (0..PDF_BINS).map(bin_center).collect(),
            actual: [discretize_pdf(mu[0], sigma[0]), discretize_pdf(mu[1], sigma[1])],
            predicted: [discretize_pdf(mu_pred[0], sigma_pred[0]), discretize_pdf(mu_pred[1], sigma_pred[1])],
        }
    }

    /// Record id with anything outside `[A-Za-z0-9_-]` replaced.
    pub fn file_stem(&self) -> String {
        self.id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("# id {}\nt\tactual_east\tpredicted_east\tactual_west\tpredicted_west\n", self.id);
        for i in 0..self.t.len() {
            writeln!(
                out,
                "{}\t{:e}\t{:e}\t{:e}\t{:e}",
                self.t[i], self.actual[0][i], self.predicted[0][i], self.actual[1][i], self.predicted[1][i]
            )
            .unwrap();
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let id = lines
            .next()
            .and_then(|l| l.strip_prefix("# id "))
            .ok_or_else(|| Error::Data("plot file must start with '# id <record>'".into()))?
            .to_string();
        lines.next();
        let mut s = Self {
            id,
            t: Vec::new(),
            actual: [Vec::new(), Vec::new()],
            predicted: [Vec::new(), Vec::new()],
        };
        for (n, line) in lines.enumerate() {
            let v: Vec<f64> = line
                .split('\t')
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Data(format!("plot line {}: {e}", n + 3)))?;
            if v.len() != 5 {
                return Err(Error::Data(format!("plot line {}: expected 5 columns, got {}", n + 3, v.len())));
            }
            s.t.push(v[0]);
            s.actual[0].push(v[1]);
            s.predicted[0].push(v[2]);
            s.actual[1].push(v[3]);
            s.predicted[1].push(v[4]);
        }
        Ok(s)
    }

    /// Two stacked panels; actual in red, predicted in green.
    pub fn to_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 220.0;
        const PAD: f64 = 40.0;
        let t_max = self.t.last().copied().unwrap_or(1.0).max(1.0);
        let mut out = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"12\">\n\
<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
            2.0 * H
        );
        for d in 0..2 {
            let top = d as f64 * H;
            let y_max = self.actual[d]
                .iter()
                .chain(&self.predicted[d])
                .cloned()
                .fold(0.0, f64::max)
                .max(f64::MIN_POSITIVE);
            let px = |t: f64| PAD + t / t_max * (W - 2.0 * PAD);
            let py = |v: f64| top + H - PAD + -v / y_max * (H - 2.0 * PAD);
            writeln!(
                out,
                "<text x=\"{PAD}\" y=\"{}\">{} {}</text>",
                top + 20.0,
                xml_escape(&self.id),
                DIRECTIONS[d]
            )
            .unwrap();
            writeln!(
                out,
                "<line x1=\"{PAD}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>",
                top + H - PAD,
                W - PAD
            )
            .unwrap();
            writeln!(
                out,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{t_max} s</text>",
                W - PAD,
                top + H - PAD + 16.0
            )
            .unwrap();
            for (values, colour) in [(&self.actual[d], "red"), (&self.predicted[d], "green")] {
                let points: Vec<String> = self
                    .t
                    .iter()
                    .zip(values)
                    .map(|(t, v)| format!("{:.2},{:.2}", px(*t), py(*v)))
                    .collect();
                writeln!(
                    out,
                    "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" points=\"{}\"/>",
                    points.join(" ")
                )
                .unwrap();
            }
        }
        out.push_str("</svg>\n");
        out
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
