use std::fs;
use std::path::{Path, PathBuf};

use sourcebias::storage;
use sourcebias::ScoreDistribution;

/// Files written by one command run. On failure everything registered here is
/// removed, along with the output directory if this run created it.
pub struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: &Path) -> std::io::Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            files: Vec::new(),
        })
    }

    /// Registers `name` inside the output directory and returns its path.
    pub fn file(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.files
    }

    pub fn discard(self) {
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

/// Runs `body` against a fresh output set, cleaning up if it fails.
pub fn with_outputs<T>(
    dir: &Path,
    body: impl FnOnce(&mut Outputs) -> crate::CliResult<T>,
) -> crate::CliResult<T> {
    let mut out = Outputs::new(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    match body(&mut out) {
        Ok(v) => {
            for f in out.written() {
                eprintln!("wrote {}", f.display());
            }
            Ok(v)
        }
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 56.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 40.0;

/// Side-by-side bars of real and generated counts per score bin.
pub fn histogram_svg(dist: &ScoreDistribution, title: &str) -> String {
    let bins = dist.bins();
    let max = dist
        .counts_real
        .iter()
        .chain(&dist.counts_generated)
        .copied()
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let bin_w = plot_w / bins.max(1) as f64;
    let base = TOP + plot_h;

    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    );
    s += &format!("<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n");
    s += &format!(
        "<text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    );
    for (i, (r, g)) in dist.counts_real.iter().zip(&dist.counts_generated).enumerate() {
        let x = LEFT + i as f64 * bin_w;
        for (k, (count, colour)) in [(r, "#4477aa"), (g, "#ee7733")].into_iter().enumerate() {
            let h = *count as f64 / max * plot_h;
            s += &format!(
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{colour}\"/>\n",
                x + k as f64 * bin_w / 2.0,
                base - h,
                bin_w / 2.0,
                h
            );
        }
    }
    s += &format!(
        "<line x1=\"{LEFT}\" y1=\"{base}\" x2=\"{}\" y2=\"{base}\" stroke=\"black\"/>\n",
        WIDTH - RIGHT
    );
    s += &format!("<line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{base}\" stroke=\"black\"/>\n");
    let label = |x: f64, y: f64, anchor: &str, text: String| {
        format!(
            "<text x=\"{x:.2}\" y=\"{y:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"{anchor}\">{text}</text>\n"
        )
    };
    if let (Some(lo), Some(hi)) = (dist.edges.first(), dist.edges.last()) {
        s += &label(LEFT, base + 16.0, "start", storage::fmt_float(*lo));
        s += &label(WIDTH - RIGHT, base + 16.0, "end", storage::fmt_float(*hi));
    }
    s += &label(LEFT + plot_w / 2.0, base + 32.0, "middle", "score".into());
    s += &label(LEFT - 6.0, TOP + 4.0, "end", (max as u64).to_string());
    s += &label(LEFT - 6.0, base, "end", "0".into());
    let legend_x = WIDTH - RIGHT - 120.0;
    for (k, (name, colour)) in [("real", "#4477aa"), ("generated", "#ee7733")].into_iter().enumerate() {
        let y = TOP + 4.0 + k as f64 * 16.0;
        s += &format!("<rect x=\"{legend_x}\" y=\"{y}\" width=\"10\" height=\"10\" fill=\"{colour}\"/>\n");
        s += &label(legend_x + 16.0, y + 9.0, "start", name.into());
    }
    s += "</svg>\n";
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_has_two_bars_per_bin() {
        let dist = sourcebias::bias::histogram(&[0.1, 0.2, 0.9], &[0.5, 0.6], 4).unwrap();
        let svg = histogram_svg(&dist, "a < b");
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        // background, 2 per bin, 2 legend swatches
        assert_eq!(svg.matches("<rect").count(), 1 + 2 * 4 + 2);
        assert!(svg.contains("a &lt; b"));
    }

    #[test]
    fn failed_run_removes_its_files() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("fresh");
        let res: crate::CliResult<()> = with_outputs(&dir, |out| {
            fs::write(out.file("a.txt"), "x")?;
            Err("boom".into())
        });
        assert!(res.is_err());
        assert!(!dir.exists());

        let keep = tmp.path().join("keep");
        fs::create_dir(&keep).unwrap();
        fs::write(keep.join("other.txt"), "y").unwrap();
        let _ = with_outputs(&keep, |out| -> crate::CliResult<()> {
            fs::write(out.file("a.txt"), "x")?;
            Err("boom".into())
        });
        assert!(keep.join("other.txt").exists());
        assert!(!keep.join("a.txt").exists());
    }
}
