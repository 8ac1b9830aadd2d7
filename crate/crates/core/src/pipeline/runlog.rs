//! Evaluation log of a training run, its CSV form and the mAP chart.
//!
//! CSV columns, in this fixed order:
//!
//! ```text
//! epoch,detector,map,corloc,loss_weak,loss_strong,cp_inter,cp_inner,cl_inter,objectness,matched_pairs
//! ```
//!
//! Losses are means over the training steps of that epoch; `matched_pairs`
//! is the mean number of matched proposal pairs per step.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DetectorTag {
    /// Weak detector trained alone.
    IW,
    /// Weak detector of a collaborative run.
    ClW,
    /// Strong detector of a collaborative run.
    ClS,
    /// Strong detector trained on frozen weak pseudo labels.
    CsS,
}

impl DetectorTag {
    pub const ALL: [DetectorTag; 4] = [DetectorTag::IW, DetectorTag::ClW, DetectorTag::ClS, DetectorTag::CsS];

    pub fn as_str(&self) -> &'static str {
        match self {
            DetectorTag::IW => "I_W",
            DetectorTag::ClW => "CL_W",
            DetectorTag::ClS => "CL_S",
            DetectorTag::CsS => "CS_S",
        }
    }

    pub fn is_weak(&self) -> bool {
        matches!(self, DetectorTag::IW | DetectorTag::ClW)
    }
}

impl fmt::Display for DetectorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<DetectorTag> {
        DetectorTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown detector {s:?} (I_W, CL_W, CL_S, CS_S)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochLosses {
    pub loss_weak: f64,
    pub loss_strong: f64,
    pub cp_inter: f64,
    pub cp_inner: f64,
    pub cl_inter: f64,
    pub objectness: f64,
    pub matched_pairs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLogRow {
    pub epoch: u32,
    pub detector: DetectorTag,
    pub map: f64,
    pub corloc: f64,
    pub losses: EpochLosses,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub rows: Vec<RunLogRow>,
}

pub const RUNLOG_HEADER: &str =
    "epoch,detector,map,corloc,loss_weak,loss_strong,cp_inter,cp_inner,cl_inter,objectness,matched_pairs";

impl RunLog {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Appends a row, keeping epochs non-decreasing and one row per
    /// `(epoch, detector)`.
    pub fn push(&mut self, row: RunLogRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.epoch < last.epoch {
                return Err(Error::InvalidInput(format!("epoch {} logged after {}", row.epoch, last.epoch)));
            }
        }
        if self.rows.iter().any(|r| r.epoch == row.epoch && r.detector == row.detector) {
            return Err(Error::InvalidInput(format!("duplicate row for epoch {} {}", row.epoch, row.detector)));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn series(&self, tag: DetectorTag) -> Vec<(u32, f64)> {
        self.rows.iter().filter(|r| r.detector == tag).map(|r| (r.epoch, r.map)).collect()
    }

    pub fn tags(&self) -> Vec<DetectorTag> {
        let mut t: Vec<DetectorTag> = self.rows.iter().map(|r| r.detector).collect();
        t.sort();
        t.dedup();
        t
    }

    pub fn final_map(&self, tag: DetectorTag) -> Option<f64> {
        self.series(tag).last().map(|&(_, m)| m)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(RUNLOG_HEADER);
        out.push('\n');
        for r in &self.rows {
            let l = &r.losses;
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3}\n",
                r.epoch,
                r.detector,
                r.map,
                r.corloc,
                l.loss_weak,
                l.loss_strong,
                l.cp_inter,
                l.cp_inner,
                l.cl_inter,
                l.objectness,
                l.matched_pairs
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<RunLog> {
        let mut lines = text.lines();
        if lines.next() != Some(RUNLOG_HEADER) {
            return Err(Error::Format("run log must start with its header row".into()));
        }
        let mut log = RunLog::default();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let bad = || Error::Format(format!("run log line {}", n + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 11 {
                return Err(bad());
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            log.push(RunLogRow {
                epoch: f[0].parse().map_err(|_| bad())?,
                detector: f[1].parse().map_err(|_| bad())?,
                map: num(2)?,
                corloc: num(3)?,
                losses: EpochLosses {
                    loss_weak: num(4)?,
                    loss_strong: num(5)?,
                    cp_inter: num(6)?,
                    cp_inner: num(7)?,
                    cl_inter: num(8)?,
                    objectness: num(9)?,
                    matched_pairs: num(10)?,
                },
            })?;
        }
        Ok(log)
    }
}

const SVG_W: f64 = 480.0;
const SVG_H: f64 = 320.0;
const MARGIN: f64 = 48.0;

fn tag_color(t: DetectorTag) -> &'static str {
    match t {
        DetectorTag::IW => "#7f7f7f",
        DetectorTag::ClW => "#1f77b4",
        DetectorTag::ClS => "#d62728",
        DetectorTag::CsS => "#2ca02c",
    }
}

/// Epoch range of the x axis.
fn x_range(log: &RunLog) -> (f64, f64) {
    let lo = log.rows.iter().map(|r| r.epoch).min().unwrap_or(0) as f64;
    let hi = log.rows.iter().map(|r| r.epoch).max().unwrap_or(1) as f64;
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 1.0, lo + 1.0)
    }
}

fn to_px(epoch: f64, map: f64, xr: (f64, f64)) -> (f64, f64) {
    let x = MARGIN + (epoch - xr.0) / (xr.1 - xr.0) * (SVG_W - 2.0 * MARGIN);
    let y = SVG_H - MARGIN - map * (SVG_H - 2.0 * MARGIN);
    (x, y)
}

/// Line chart of mAP (0 to 1) against epoch, one polyline per detector.
pub fn render_svg(log: &RunLog) -> String {
    let xr = x_range(log);
    let (x0, y0) = to_px(xr.0, 0.0, xr);
    let (x1, y1) = to_px(xr.1, 1.0, xr);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" data-epochs=\"{} {}\">\n",
        xr.0, xr.1
    );
    s.push_str(&format!(
        "<path d=\"M{x0} {y1} L{x0} {y0} L{x1} {y0}\" stroke=\"black\" fill=\"none\"/>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">epoch</text>\n\
         <text x=\"12\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">mAP</text>\n",
        (x0 + x1) / 2.0,
        SVG_H - 12.0,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    ));
    for (k, tag) in log.tags().into_iter().enumerate() {
        let pts: Vec<String> = log
            .series(tag)
            .iter()
            .map(|&(e, m)| {
                let (x, y) = to_px(e as f64, m, xr);
                format!("{x:.6},{y:.6}")
            })
            .collect();
        s.push_str(&format!(
            "<polyline data-tag=\"{tag}\" points=\"{}\" stroke=\"{}\" fill=\"none\" stroke-width=\"2\"/>\n",
            pts.join(" "),
            tag_color(tag)
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{}\">{tag}</text>\n",
            x1 - 40.0,
            y1 + 14.0 * (k as f64 + 1.0),
            tag_color(tag)
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Recover `(epoch, mAP)` series from a chart written by [`render_svg`].
pub fn parse_svg(svg: &str) -> Result<Vec<(DetectorTag, Vec<(f64, f64)>)>> {
    let bad = |m: &str| Error::Format(format!("chart: {m}"));
    let attr = |s: &str, name: &str| -> Option<String> {
        let start = s.find(&format!("{name}=\""))? + name.len() + 2;
        let len = s[start..].find('"')?;
        Some(s[start..start + len].to_string())
    };
    let epochs = attr(svg, "data-epochs").ok_or_else(|| bad("missing epoch range"))?;
    let r: Vec<f64> = epochs.split(' ').map(|v| v.parse().map_err(|_| bad("epoch range"))).collect::<Result<_>>()?;
    if r.len() != 2 {
        return Err(bad("epoch range"));
    }
    let xr = (r[0], r[1]);
    let mut out = Vec::new();
    for line in svg.lines().filter(|l| l.starts_with("<polyline")) {
        let tag: DetectorTag = attr(line, "data-tag").ok_or_else(|| bad("polyline without tag"))?.parse()?;
        let mut series = Vec::new();
        for pt in attr(line, "points").ok_or_else(|| bad("polyline without points"))?.split_whitespace() {
            let (xs, ys) = pt.split_once(',').ok_or_else(|| bad("point"))?;
            let x: f64 = xs.parse().map_err(|_| bad("point"))?;
            let y: f64 = ys.parse().map_err(|_| bad("point"))?;
            let epoch = xr.0 + (x - MARGIN) / (SVG_W - 2.0 * MARGIN) * (xr.1 - xr.0);
            let map = (SVG_H - MARGIN - y) / (SVG_H - 2.0 * MARGIN);
            series.push((epoch, map));
        }
        out.push((tag, series));
    }
    Ok(out)
}

/// Write `runlog.csv` and, when there is anything to draw, `map.svg` into
/// `dir`. Returns whether the chart was written.
pub fn emit_plots(log: &RunLog, dir: &Path) -> Result<bool> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("runlog.csv"), log.to_csv())?;
    if log.is_empty() {
        log::warn!("run log is empty; no chart written");
        return Ok(false);
    }
    std::fs::write(dir.join("map.svg"), render_svg(log))?;
    Ok(true)
}
