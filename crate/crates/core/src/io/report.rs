//! CSV tables and standalone SVG charts for a saliency bundle.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::Tensor;
use crate::error::IoError;
use crate::explain::{feature_ranking, GroupSaliency, SaliencyBundle};
use crate::recording::Label;
use crate::trainer::MetricsTable;

use super::{matrix_csv, write_json};

/// Paths written by [`write_report`], in creation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportFiles {
    pub files: Vec<PathBuf>,
}

struct Writer<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, contents: &str) -> Result<(), IoError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(IoError::io(&path))?;
        self.files.push(path);
        Ok(())
    }
}

fn check_unit(values: &[f64], what: &str) -> Result<(), IoError> {
    match values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(IoError::InvalidReport(format!("{what} saliency {v} outside [0, 1]"))),
        None => Ok(()),
    }
}

fn validate(bundle: &SaliencyBundle) -> Result<(), IoError> {
    for g in &bundle.groups {
        if g.feature.len() != bundle.feature_names.len() || g.node.len() != bundle.channel_names.len() {
            return Err(IoError::InvalidReport(format!("{} profile has the wrong length", g.label)));
        }
        let n = bundle.channel_names.len();
        if g.edge.shape() != (n, n) || g.attention.iter().any(|a| a.shape() != (n, n)) {
            return Err(IoError::InvalidReport(format!("{} matrices are not {n}x{n}", g.label)));
        }
        check_unit(&g.feature, "feature")?;
        check_unit(&g.node, "channel")?;
        check_unit(g.edge.data(), "edge")?;
    }
    Ok(())
}

/// Writes every table and chart for `bundle` (and `metrics` when given)
/// into `out_dir`. Output depends only on the inputs.
pub fn write_report(
    bundle: &SaliencyBundle,
    metrics: Option<&MetricsTable>,
    out_dir: &Path,
) -> Result<ReportFiles, IoError> {
    validate(bundle)?;
    fs::create_dir_all(out_dir).map_err(IoError::io(out_dir))?;
    let mut w = Writer {
        dir: out_dir,
        files: Vec::new(),
    };
    if let Some(m) = metrics {
        w.put("metrics.csv", &m.to_csv())?;
    }
    let channels = &bundle.channel_names;
    let mut notes = Vec::new();
    for label in Label::ALL {
        let tag = label.name().to_lowercase();
        let Some(g) = bundle.group(label) else {
            notes.push(format!("{label} group omitted: no explained graphs carry this label."));
            continue;
        };
        w.put(&format!("features_{tag}.csv"), &feature_csv(bundle, g))?;
        w.put(&format!("features_{tag}.svg"), &bar_chart(
            &format!("{label} feature saliency"),
            &feature_ranking(&g.feature).iter().map(|&i| (bundle.feature_names[i].clone(), g.feature[i])).collect::<Vec<_>>(),
        ))?;
        w.put(&format!("channels_{tag}.csv"), &channel_csv(channels, &g.node))?;
        w.put(&format!("channels_{tag}.svg"), &bar_chart(
            &format!("{label} channel saliency"),
            &channels.iter().cloned().zip(g.node.iter().copied()).collect::<Vec<_>>(),
        ))?;
        w.put(&format!("edges_{tag}.csv"), &edge_csv(channels, &g.edge))?;
        w.put(&format!("edges_{tag}.svg"), &heatmap(&format!("{label} edge saliency"), &g.edge, channels, Scale::Unit))?;
        for (l, a) in g.attention.iter().enumerate() {
            w.put(&format!("attention_{tag}_layer{l}.csv"), &matrix_csv(a, channels, channels))?;
            w.put(
                &format!("attention_{tag}_layer{l}.svg"),
                &heatmap(&format!("{label} mean attention, layer {l}"), a, channels, Scale::Unit),
            )?;
        }
    }
    let mut scales = Vec::new();
    for (l, d) in bundle.attention_difference.iter().enumerate() {
        let bound = symmetric_bound(d);
        scales.push(serde_json::json!({ "layer": l, "vmin": -bound, "vmax": bound }));
        w.put(&format!("attention_diff_layer{l}.csv"), &matrix_csv(d, channels, channels))?;
        w.put(
            &format!("attention_diff_layer{l}.svg"),
            &heatmap(&format!("attention difference HC - MDD, layer {l}"), d, channels, Scale::Symmetric(bound)),
        )?;
    }
    if bundle.attention_difference.is_empty() {
        notes.push("Attention difference omitted: it needs both groups.".to_string());
    }
    let summary = serde_json::json!({
        "groups": bundle.groups.iter().map(|g| serde_json::json!({
            "label": g.label,
            "n_graphs": g.n_graphs,
            "top_features": feature_ranking(&g.feature).iter().take(5).map(|&i| bundle.feature_names[i].clone()).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
        "n_explained": bundle.n_explained,
        "n_faithful": bundle.n_faithful,
        "attention_difference_scale": scales,
        "notes": notes,
    });
    let summary_path = out_dir.join("summary.json");
    write_json(&summary_path, &summary)?;
    w.files.push(summary_path);
    Ok(ReportFiles { files: w.files })
}

fn feature_csv(bundle: &SaliencyBundle, g: &GroupSaliency) -> String {
    let mut out = String::from("rank,feature,saliency\n");
    for (rank, &i) in feature_ranking(&g.feature).iter().enumerate() {
        let _ = writeln!(out, "{},{},{:.6}", rank + 1, bundle.feature_names[i], g.feature[i]);
    }
    out
}

fn channel_csv(channels: &[String], node: &[f64]) -> String {
    let mut out = String::from("channel,saliency\n");
    for (c, v) in channels.iter().zip(node) {
        let _ = writeln!(out, "{c},{v:.6}");
    }
    out
}

/// Upper triangle, one row per channel pair.
fn edge_csv(channels: &[String], edge: &Tensor) -> String {
    let mut out = String::from("channel_i,channel_j,saliency\n");
    for i in 0..channels.len() {
        for j in i + 1..channels.len() {
            let _ = writeln!(out, "{},{},{:.6}", channels[i], channels[j], edge.get(i, j));
        }
    }
    out
}

fn symmetric_bound(m: &Tensor) -> f64 {
    let b = m.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if b > 0.0 {
        b
    } else {
        1.0
    }
}

#[derive(Clone, Copy)]
enum Scale {
    Unit,
    Symmetric(f64),
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// White to dark blue on [0, 1]; blue-white-red on [-b, b].
fn colour(v: f64, scale: Scale) -> String {
    let lerp = |a: f64, b: f64, t: f64| (a + (b - a) * t).round() as u8;
    match scale {
        Scale::Unit => {
            let t = v.clamp(0.0, 1.0);
            format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0, t), lerp(255.0, 48.0, t), lerp(255.0, 107.0, t))
        }
        Scale::Symmetric(b) => {
            let t = (v / b).clamp(-1.0, 1.0);
            if t >= 0.0 {
                format!("#{:02x}{:02x}{:02x}", lerp(255.0, 178.0, t), lerp(255.0, 24.0, t), lerp(255.0, 43.0, t))
            } else {
                let t = -t;
                format!("#{:02x}{:02x}{:02x}", lerp(255.0, 33.0, t), lerp(255.0, 102.0, t), lerp(255.0, 172.0, t))
            }
        }
    }
}

fn bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let (left, row, width) = (120.0, 22.0, 360.0);
    let height = 40.0 + row * bars.len() as f64 + 10.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="sans-serif" font-size="12">"#,
        left + width + 70.0
    );
    let _ = writeln!(s, r#"<text x="10" y="20" font-size="14">{}</text>"#, escape(title));
    for (k, (name, v)) in bars.iter().enumerate() {
        let y = 34.0 + row * k as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 6.0, y + 14.0, escape(name));
        let _ = writeln!(
            s,
            r#"<rect x="{left}" y="{y}" width="{:.2}" height="{}" fill="{}"/>"#,
            width * v.clamp(0.0, 1.0),
            row - 4.0,
            colour(0.35 + 0.65 * v.clamp(0.0, 1.0), Scale::Unit)
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}">{v:.3}</text>"#, left + width * v.clamp(0.0, 1.0) + 4.0, y + 14.0);
    }
    s.push_str("</svg>\n");
    s
}

fn heatmap(title: &str, m: &Tensor, names: &[String], scale: Scale) -> String {
    let (left, top, cell) = (50.0, 60.0, 22.0);
    let n = names.len();
    let size = cell * n as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="10">"#,
        left + size + 90.0,
        top + size + 20.0
    );
    let _ = writeln!(s, r#"<text x="10" y="20" font-size="14">{}</text>"#, escape(title));
    for (k, name) in names.iter().enumerate() {
        let c = left + cell * k as f64 + cell / 2.0;
        let _ = writeln!(s, r#"<text x="{c}" y="{}" text-anchor="middle">{}</text>"#, top - 6.0, escape(name));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 4.0, top + cell * k as f64 + 15.0, escape(name));
    }
    for i in 0..n {
        for j in 0..n {
            let v = m.get(i, j);
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="{}"><title>{} - {}: {v:.4}</title></rect>"#,
                left + cell * j as f64,
                top + cell * i as f64,
                colour(v, scale),
                escape(&names[i]),
                escape(&names[j])
            );
        }
    }
    let (lo, hi) = match scale {
        Scale::Unit => (0.0, 1.0),
        Scale::Symmetric(b) => (-b, b),
    };
    let x = left + size + 16.0;
    for k in 0..20 {
        let v = hi - (hi - lo) * k as f64 / 19.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{:.2}" width="14" height="{:.2}" fill="{}"/>"#,
            top + size * k as f64 / 20.0,
            size / 20.0 + 0.5,
            colour(v, scale)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}">{hi:.3}</text>"#, x + 18.0, top + 8.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}">{lo:.3}</text>"#, x + 18.0, top + size);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recording::CHANNELS;

    fn group(label: Label, fill: f64) -> GroupSaliency {
        GroupSaliency {
            label,
            n_graphs: 3,
            feature: (0..14).map(|i| (i as f64 * 0.07 + fill).min(1.0)).collect(),
            node: vec![fill; 19],
            edge: Tensor::filled(19, 19, fill),
            attention: vec![Tensor::filled(19, 19, 0.1), Tensor::filled(19, 19, 0.2)],
        }
    }

    fn bundle(groups: Vec<GroupSaliency>) -> SaliencyBundle {
        let attention_difference = if groups.len() == 2 {
            vec![Tensor::zeros(19, 19), Tensor::filled(19, 19, 0.05)]
        } else {
            Vec::new()
        };
        SaliencyBundle {
            feature_names: crate::features::Feature::ALL.iter().map(|f| f.name().to_string()).collect(),
            channel_names: CHANNELS.iter().map(|s| s.to_string()).collect(),
            groups,
            attention_difference,
            n_explained: 6,
            n_faithful: 6,
        }
    }

    fn lines(path: &Path) -> usize {
        fs::read_to_string(path).unwrap().lines().count()
    }

    #[test]
    fn table_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let b = bundle(vec![group(Label::Hc, 0.2), group(Label::Mdd, 0.4)]);
        write_report(&b, None, dir.path()).unwrap();
        assert_eq!(lines(&dir.path().join("features_hc.csv")), 15);
        assert_eq!(lines(&dir.path().join("channels_mdd.csv")), 20);
        assert_eq!(lines(&dir.path().join("edges_hc.csv")), 172);
        assert!(dir.path().join("attention_diff_layer1.svg").exists());
    }

    #[test]
    fn output_is_byte_identical_across_runs() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let bundle = bundle(vec![group(Label::Hc, 0.2), group(Label::Mdd, 0.4)]);
        let fa = write_report(&bundle, None, a.path()).unwrap();
        write_report(&bundle, None, b.path()).unwrap();
        for f in fa.files {
            let name = f.file_name().unwrap();
            assert_eq!(fs::read(&f).unwrap(), fs::read(b.path().join(name)).unwrap());
        }
    }

    #[test]
    fn missing_group_is_stated() {
        let dir = tempfile::tempdir().unwrap();
        write_report(&bundle(vec![group(Label::Hc, 0.3)]), None, dir.path()).unwrap();
        assert!(dir.path().join("features_hc.csv").exists());
        assert!(!dir.path().join("features_mdd.csv").exists());
        let summary = fs::read_to_string(dir.path().join("summary.json")).unwrap();
        assert!(summary.contains("MDD group omitted"));
    }

    #[test]
    fn out_of_range_saliency_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = group(Label::Hc, 0.3);
        g.node[4] = 1.5;
        assert!(matches!(
            write_report(&bundle(vec![g]), None, dir.path()),
            Err(IoError::InvalidReport(_))
        ));
    }
}
