use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};

use crate::data::{MultimodalSample, Sentiment};
use crate::dec::{soft_assign, ClusterState};
use crate::error::{Error, Result};
use crate::model::EncoderStack;
use crate::pipeline::latents_of;

use super::tsne::{silhouette, tsne, TsneConfig};

pub const LATENTS_FILE: &str = "latents.csv";
pub const PROJECTION_FILE: &str = "projection.csv";
pub const PLOT_FILE: &str = "projection.svg";

/// Latent codes of a sample set with their labels and hard cluster assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentExport {
    pub ids: Vec<String>,
    /// Ground-truth class, regardless of the label mask.
    pub labels: Vec<Option<Sentiment>>,
    pub clusters: Option<Vec<usize>>,
    pub z: Array2<f64>,
}

impl LatentExport {
    pub fn compute(
        stack: &EncoderStack,
        samples: &[&MultimodalSample],
        cluster: Option<&ClusterState>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("no samples to export".into()));
        }
        let z = latents_of(stack, samples)?;
        let clusters = match cluster {
            Some(state) => {
                let q = soft_assign(&z, state)?;
                Some(
                    q.axis_iter(Axis(0))
                        .map(|r| {
                            r.iter()
                                .enumerate()
                                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| {
                                    if v > best.1 {
                                        (j, v)
                                    } else {
                                        best
                                    }
                                })
                                .0
                        })
                        .collect(),
                )
            }
            None => None,
        };
        Ok(LatentExport {
            ids: samples.iter().map(|s| s.sample_id.clone()).collect(),
            labels: samples.iter().map(|s| s.true_label()).collect(),
            clusters,
            z,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Header `sample_id,label,cluster,z0..`; missing values are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id,label,cluster");
        for c in 0..self.z.ncols() {
            let _ = write!(out, ",z{c}");
        }
        out.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            out.push_str(id);
            out.push(',');
            out.push_str(&label_cell(self.labels[i]));
            out.push(',');
            if let Some(c) = &self.clusters {
                out.push_str(&c[i].to_string());
            }
            for v in self.z.row(i) {
                let _ = write!(out, ",{v:e}");
            }
            out.push('\n');
        }
        out
    }

    /// Silhouette of the latents under the ground-truth classes.
    pub fn label_silhouette(&self) -> Result<f64> {
        let (rows, labels) = self.labeled_rows();
        silhouette(&self.z.select(Axis(0), &rows), &labels)
    }

    fn labeled_rows(&self) -> (Vec<usize>, Vec<usize>) {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|l| (i, l.index())))
            .unzip()
    }
}

fn label_cell(l: Option<Sentiment>) -> String {
    l.map(|l| l.index().to_string()).unwrap_or_default()
}

/// Files written by [`export_latents`].
#[derive(Debug, Clone)]
pub struct ExportSummary {
    pub rows: usize,
    pub latents: PathBuf,
    pub projection: Option<PathBuf>,
    pub plot: Option<PathBuf>,
    pub silhouette: Option<f64>,
}

/// Writes the latent matrix and, with `projection`, a 2-D t-SNE of the
/// first `max_points` rows (0 = all) as coordinates and an SVG scatter plot.
pub fn export_latents(
    export: &LatentExport,
    out_dir: &Path,
    projection: Option<&TsneConfig>,
    max_points: usize,
) -> Result<ExportSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let latents = out_dir.join(LATENTS_FILE);
    std::fs::write(&latents, export.to_csv()).map_err(|e| Error::io(&latents, e))?;
    let silhouette = export.label_silhouette().ok();
    let mut summary = ExportSummary {
        rows: export.len(),
        latents,
        projection: None,
        plot: None,
        silhouette,
    };
    if let Some(cfg) = projection {
        let n = if max_points == 0 {
            export.len()
        } else {
            max_points.min(export.len())
        };
        let y = tsne(&export.z.slice(ndarray::s![..n, ..]).to_owned(), cfg)?;
        let mut csv = String::from("sample_id,label,cluster,x,y\n");
        for i in 0..n {
            let cluster = export
                .clusters
                .as_ref()
                .map(|c| c[i].to_string())
                .unwrap_or_default();
            let _ = writeln!(
                csv,
                "{},{},{},{:e},{:e}",
                export.ids[i],
                label_cell(export.labels[i]),
                cluster,
                y[[i, 0]],
                y[[i, 1]]
            );
        }
        let p = out_dir.join(PROJECTION_FILE);
        std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
        let svg = scatter_svg(&y, &export.labels[..n]);
        let s = out_dir.join(PLOT_FILE);
        std::fs::write(&s, svg).map_err(|e| Error::io(&s, e))?;
        summary.projection = Some(p);
        summary.plot = Some(s);
    }
    Ok(summary)
}

/// Scatter plot coloured by class; unlabeled points are grey.
pub fn scatter_svg(y: &Array2<f64>, labels: &[Option<Sentiment>]) -> String {
    const SIZE: f64 = 480.0;
    const PAD: f64 = 20.0;
    let range = |c: usize| {
        let col = y.column(c);
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, (hi - lo).max(1e-12))
    };
    let (x0, xs) = range(0);
    let (y0, ys) = range(1);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{w}\" viewBox=\"0 0 {w} {w}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        w = SIZE + 2.0 * PAD
    );
    for (i, l) in labels.iter().enumerate() {
        let colour = match l {
            Some(Sentiment::Positive) => "#d62728",
            Some(Sentiment::Negative) => "#1f77b4",
            None => "#999999",
        };
        let _ = writeln!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{colour}\" fill-opacity=\"0.7\"/>",
            PAD + SIZE * (y[[i, 0]] - x0) / xs,
            PAD + SIZE * (1.0 - (y[[i, 1]] - y0) / ys)
        );
    }
    out.push_str(
        "<text x=\"24\" y=\"16\" font-size=\"12\" fill=\"#1f77b4\">negative</text>\n\
         <text x=\"90\" y=\"16\" font-size=\"12\" fill=\"#d62728\">positive</text>\n</svg>\n",
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> LatentExport {
        LatentExport {
            ids: (0..4).map(|i| format!("s{i}")).collect(),
            labels: vec![
                Some(Sentiment::Negative),
                Some(Sentiment::Positive),
                None,
                Some(Sentiment::Positive),
            ],
            clusters: Some(vec![0, 1, 1, 1]),
            z: array![[0.0, 0.5], [3.0, 1.0], [2.5, 2.0], [3.5, 1.5]],
        }
    }

    #[test]
    fn csv_has_header_and_one_row_per_sample() {
        let csv = toy().to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "sample_id,label,cluster,z0,z1");
        assert_eq!(lines.len(), 5);
        assert!(lines[3].starts_with("s2,,1,"));
    }

    #[test]
    fn writes_projection_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TsneConfig {
            iterations: 50,
            ..TsneConfig::default()
        };
        let s = export_latents(&toy(), dir.path(), Some(&cfg), 0).unwrap();
        assert_eq!(s.rows, 4);
        let proj = std::fs::read_to_string(s.projection.unwrap()).unwrap();
        assert_eq!(proj.lines().count(), 5);
        let svg = std::fs::read_to_string(s.plot.unwrap()).unwrap();
        assert_eq!(svg.matches("<circle").count(), 4);
    }

    #[test]
    fn projection_needs_three_points() {
        let mut e = toy();
        e.ids.truncate(2);
        e.labels.truncate(2);
        e.clusters = None;
        e.z = e.z.slice(ndarray::s![..2, ..]).to_owned();
        let dir = tempfile::tempdir().unwrap();
        assert!(export_latents(&e, dir.path(), Some(&TsneConfig::default()), 0).is_err());
        assert!(export_latents(&e, dir.path(), None, 0).is_ok());
    }
}
