//! Test-set RMSE, mean-prediction baselines and per-subject reports.

use std::fmt::Write as _;

use crate::data::{Split, FRAME_PIXELS};
use crate::error::{Error, Result};
use crate::models::{Direction, Model, SubjectModels};
use crate::nn::{Scalar, Tensor};
use crate::pipeline::{PreparedDataset, PreparedUtterance, PIXEL_SCALE};

pub fn rmse_slices(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions vs {} targets", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("rmse of empty sets".into()));
    }
    let sse: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Root mean squared elementwise difference; shapes must match exactly.
pub fn rmse<S: Scalar>(pred: &Tensor<S>, truth: &Tensor<S>) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs truth {:?}", pred.shape(), truth.shape())));
    }
    let p: Vec<f64> = pred.data().iter().map(|v| v.to_f64()).collect();
    let t: Vec<f64> = truth.data().iter().map(|v| v.to_f64()).collect();
    rmse_slices(&p, &t)
}

/// Elementwise mean of equally sized items.
pub fn mean_item(items: &[&[f64]]) -> Result<Vec<f64>> {
    let first = items.first().ok_or_else(|| Error::InvalidInput("mean of an empty set".into()))?;
    let mut mean = vec![0.0; first.len()];
    for item in items {
        if item.len() != mean.len() {
            return Err(Error::Shape(format!("item of length {} among items of length {}", item.len(), mean.len())));
        }
        mean.iter_mut().zip(item.iter()).for_each(|(m, v)| *m += v);
    }
    let n = items.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// RMSE of predicting the training mean item (frame or feature vector) for every test item.
pub fn mean_baseline(train: &[&[f64]], test: &[&[f64]]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidInput("baseline needs a non-empty test set".into()));
    }
    let mean = mean_item(train)?;
    let mut sse = 0.0;
    for item in test {
        if item.len() != mean.len() {
            return Err(Error::Shape(format!("test item of length {} vs mean of length {}", item.len(), mean.len())));
        }
        sse += item.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok((sse / (test.len() * mean.len()) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectResult {
    pub subject: String,
    pub direction: Direction,
    pub model_rmse: f64,
    pub baseline_rmse: f64,
    /// Video-to-EEG only: RMSE after dividing each component by its training std.
    pub model_rmse_std: Option<f64>,
    pub baseline_rmse_std: Option<f64>,
    /// Number of scalar test values pooled into the RMSE.
    pub elements: usize,
}

impl SubjectResult {
    pub fn improvement(&self) -> f64 {
        1.0 - self.model_rmse / self.baseline_rmse
    }
}

/// RMSE pooled over every test element of the given results.
pub fn pooled_rmse(results: &[&SubjectResult]) -> (f64, f64) {
    let n: usize = results.iter().map(|r| r.elements).sum();
    let pool = |f: fn(&SubjectResult) -> f64| {
        (results.iter().map(|r| f(r).powi(2) * r.elements as f64).sum::<f64>() / n as f64).sqrt()
    };
    (pool(|r| r.model_rmse), pool(|r| r.baseline_rmse))
}

const CSV_HEADER: &str = "subject,direction,model_rmse,baseline_rmse,model_rmse_std,baseline_rmse_std,elements";

pub fn report_csv(results: &[SubjectResult]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    let mut out = format!("{CSV_HEADER}\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{:e},{:e},{},{},{}",
            r.subject,
            r.direction,
            r.model_rmse,
            r.baseline_rmse,
            opt(r.model_rmse_std),
            opt(r.baseline_rmse_std),
            r.elements
        );
    }
    out
}

pub fn parse_report_csv(text: &str) -> Result<Vec<SubjectResult>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::format("report CSV", "header", format!("expected {CSV_HEADER:?}")));
    }
    let bad = |row: usize, what: &str| Error::format("report CSV", format!("row {row}"), what.to_string());
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let row = i + 1;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(row, "expected 7 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(row, "malformed number"));
            let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
            Ok(SubjectResult {
                subject: f[0].to_string(),
                direction: f[1].parse().map_err(|_| bad(row, "unknown direction"))?,
                model_rmse: num(f[2])?,
                baseline_rmse: num(f[3])?,
                model_rmse_std: opt(f[4])?,
                baseline_rmse_std: opt(f[5])?,
                elements: f[6].parse().map_err(|_| bad(row, "malformed element count"))?,
            })
        })
        .collect()
}

/// Grouped bar chart: one group per subject, model and baseline bars side by
/// side, one panel per direction.
pub fn report_svg(results: &[SubjectResult]) -> String {
    let (bar, gap, panel_h, top) = (14.0, 12.0, 180.0, 30.0);
    let mut subjects: Vec<&str> = Vec::new();
    for r in results {
        if !subjects.contains(&r.subject.as_str()) {
            subjects.push(&r.subject);
        }
    }
    let dirs: Vec<Direction> = [Direction::Eeg2Video, Direction::Video2Eeg]
        .into_iter()
        .filter(|d| results.iter().any(|r| r.direction == *d))
        .collect();
    let width = 60.0 + subjects.len() as f64 * (2.0 * bar + gap) + 20.0;
    let height = top + dirs.len() as f64 * (panel_h + 50.0) + 30.0;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" font-family=\"sans-serif\" font-size=\"10\">\n"
    );
    let _ = writeln!(svg, "<text x=\"10\" y=\"18\" font-size=\"13\">Test RMSE per subject</text>");
    for (pi, dir) in dirs.iter().enumerate() {
        let y0 = top + pi as f64 * (panel_h + 50.0);
        let base = y0 + panel_h;
        let rows: Vec<&SubjectResult> = results.iter().filter(|r| r.direction == *dir).collect();
        let max = rows
            .iter()
            .flat_map(|r| [r.model_rmse, r.baseline_rmse])
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let _ = writeln!(svg, "<text x=\"10\" y=\"{:.1}\">{dir}</text>", y0 + 12.0);
        let _ = writeln!(
            svg,
            "<line x1=\"55\" y1=\"{base:.1}\" x2=\"{:.1}\" y2=\"{base:.1}\" stroke=\"black\"/>",
            width - 10.0
        );
        for (si, s) in subjects.iter().enumerate() {
            let x = 60.0 + si as f64 * (2.0 * bar + gap);
            for (k, (value, color)) in rows
                .iter()
                .filter(|r| r.subject == *s)
                .flat_map(|r| [(r.model_rmse, "#3b6ea5"), (r.baseline_rmse, "#b0b0b0")])
                .enumerate()
            {
                let h = value / max * (panel_h - 20.0);
                let _ = writeln!(
                    svg,
                    "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{bar:.1}\" height=\"{h:.1}\" fill=\"{color}\"><title>{s} {dir}: {value:.4}</title></rect>",
                    x + k as f64 * bar,
                    base - h
                );
            }
            let _ = writeln!(svg, "<text x=\"{x:.1}\" y=\"{:.1}\">{s}</text>", base + 14.0);
        }
    }
    let ly = height - 12.0;
    let _ = writeln!(svg, "<rect x=\"10\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"#3b6ea5\"/><text x=\"24\" y=\"{ly:.1}\">model</text>", ly - 9.0);
    let _ = writeln!(svg, "<rect x=\"70\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"#b0b0b0\"/><text x=\"84\" y=\"{ly:.1}\">training mean</text>", ly - 9.0);
    svg.push_str("</svg>\n");
    svg
}

/// Predicted pixels in 0..=255 for a whole utterance, `[T * 100 * 100]`.
pub fn predict_frames(model: &Model, u: &PreparedUtterance) -> Result<Vec<f64>> {
    let (x, _) = u.full_tensors(Direction::Eeg2Video)?;
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    let pred = model.predict(&x.reshape(&shape)?)?;
    Ok(pred
        .data()
        .iter()
        .map(|&v| (v as f64 * PIXEL_SCALE as f64).clamp(0.0, 255.0))
        .collect())
}

/// Predicted reduced features for a whole utterance, `[T * dim]`.
pub fn predict_features(model: &Model, u: &PreparedUtterance) -> Result<Vec<f64>> {
    let (x, _) = u.full_tensors(Direction::Video2Eeg)?;
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    let pred = model.predict(&x.reshape(&shape)?)?;
    Ok(pred.data().iter().map(|&v| v as f64).collect())
}

fn frame_items(u: &PreparedUtterance) -> Vec<Vec<f64>> {
    u.frames.chunks_exact(FRAME_PIXELS).map(|f| f.iter().map(|&p| p as f64).collect()).collect()
}

/// Per-subject test RMSE for a trained model against the subject's
/// training-mean baseline. Video-to-EEG also reports both in
/// per-component standardized units.
pub fn evaluate(ds: &PreparedDataset, models: &SubjectModels) -> Result<Vec<SubjectResult>> {
    let mut out = Vec::new();
    for subject in ds.subjects() {
        let of = |split| ds.in_split(split).filter(|u| u.subject == subject).collect::<Vec<_>>();
        let (train, test) = (of(Split::Train), of(Split::Test));
        if test.is_empty() {
            continue;
        }
        let model = models.for_subject(&subject)?;
        let result = match model.direction {
            Direction::Eeg2Video => {
                let train_items: Vec<Vec<f64>> = train.iter().flat_map(|u| frame_items(u)).collect();
                let test_items: Vec<Vec<f64>> = test.iter().flat_map(|u| frame_items(u)).collect();
                let mut pred = Vec::new();
                for u in &test {
                    pred.extend(predict_frames(model, u)?);
                }
                let truth: Vec<f64> = test_items.concat();
                SubjectResult {
                    subject: subject.clone(),
                    direction: model.direction,
                    model_rmse: rmse_slices(&pred, &truth)?,
                    baseline_rmse: mean_baseline(&refs(&train_items), &refs(&test_items))?,
                    model_rmse_std: None,
                    baseline_rmse_std: None,
                    elements: truth.len(),
                }
            }
            Direction::Video2Eeg => {
                let dim = ds.config.kpca_dim;
                let rows = |us: &[&PreparedUtterance]| -> Vec<Vec<f64>> {
                    us.iter().flat_map(|u| u.reduced.chunks_exact(dim).map(<[f64]>::to_vec)).collect()
                };
                let (train_rows, test_rows) = (rows(&train), rows(&test));
                let mean = mean_item(&refs(&train_rows))?;
                let std: Vec<f64> = (0..dim)
                    .map(|j| {
                        let var = train_rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>()
                            / train_rows.len() as f64;
                        if var > 0.0 {
                            var.sqrt()
                        } else {
                            1.0
                        }
                    })
                    .collect();
                let mut pred = Vec::new();
                for u in &test {
                    pred.extend(predict_features(model, u)?);
                }
                let truth: Vec<f64> = test_rows.concat();
                let scale = |v: &[f64]| -> Vec<f64> { v.iter().enumerate().map(|(i, x)| x / std[i % dim]).collect() };
                let baseline_pred: Vec<f64> = test_rows.iter().flat_map(|_| mean.iter().copied()).collect();
                SubjectResult {
                    subject: subject.clone(),
                    direction: model.direction,
                    model_rmse: rmse_slices(&pred, &truth)?,
                    baseline_rmse: rmse_slices(&baseline_pred, &truth)?,
                    model_rmse_std: Some(rmse_slices(&scale(&pred), &scale(&truth))?),
                    baseline_rmse_std: Some(rmse_slices(&scale(&baseline_pred), &scale(&truth))?),
                    elements: truth.len(),
                }
            }
        };
        out.push(result);
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("no subject has test utterances".into()));
    }
    Ok(out)
}

fn refs(items: &[Vec<f64>]) -> Vec<&[f64]> {
    items.iter().map(Vec::as_slice).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse_slices(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_relative_eq!(rmse_slices(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(rmse_slices(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 3.5355339, epsilon = 1e-7);
        let a = Tensor::<f64>::new(&[2], vec![0.0, 0.0]).unwrap();
        let b = Tensor::<f64>::new(&[1, 2], vec![3.0, 4.0]).unwrap();
        assert!(rmse(&a, &b).is_err());
    }

    #[test]
    fn baseline_examples() {
        let train: Vec<&[f64]> = vec![&[5.0, 5.0], &[5.0, 5.0]];
        assert_eq!(mean_baseline(&train, &[&[5.0, 5.0]]).unwrap(), 0.0);
        let train: Vec<&[f64]> = vec![&[0.0], &[2.0]];
        assert_relative_eq!(mean_baseline(&train, &[&[1.5], &[0.5]]).unwrap(), 0.5, epsilon = 1e-15);
        assert!(mean_baseline(&[], &[&[1.0]]).is_err());
        assert!(mean_baseline(&train, &[]).is_err());
    }

    #[test]
    fn baseline_matches_brute_force() {
        let train: Vec<Vec<f64>> = (0..5).map(|i| (0..3).map(|j| ((i * 3 + j) as f64).sin()).collect()).collect();
        let test: Vec<Vec<f64>> = (0..4).map(|i| (0..3).map(|j| ((i * 7 + j) as f64).cos()).collect()).collect();
        let mut sse = 0.0;
        for t in &test {
            for j in 0..3 {
                let m = train.iter().map(|r| r[j]).sum::<f64>() / 5.0;
                sse += (t[j] - m).powi(2);
            }
        }
        let expected = (sse / 12.0).sqrt();
        assert_relative_eq!(mean_baseline(&refs(&train), &refs(&test)).unwrap(), expected, epsilon = 1e-14);
    }

    fn results() -> Vec<SubjectResult> {
        (1..=7)
            .flat_map(|s| {
                [Direction::Eeg2Video, Direction::Video2Eeg].map(|d| SubjectResult {
                    subject: format!("s{s:02}"),
                    direction: d,
                    model_rmse: 10.0 + s as f64 / 3.0,
                    baseline_rmse: 20.0 + s as f64,
                    model_rmse_std: (d == Direction::Video2Eeg).then_some(0.1 * s as f64),
                    baseline_rmse_std: (d == Direction::Video2Eeg).then_some(1.0),
                    elements: 100 * s,
                })
            })
            .collect()
    }

    #[test]
    fn report_csv_round_trip() {
        let r = results();
        let csv = report_csv(&r);
        assert_eq!(csv.lines().count(), 15);
        assert_eq!(parse_report_csv(&csv).unwrap(), r);
        assert!(parse_report_csv("nope\n").unwrap_err().is_format());
    }

    #[test]
    fn svg_has_a_bar_per_value() {
        let svg = report_svg(&results());
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<rect").count(), 28 + 2);
    }

    #[test]
    fn pooled_weights_by_elements() {
        let r = results();
        let e2v: Vec<&SubjectResult> = r.iter().filter(|r| r.direction == Direction::Eeg2Video).take(1).collect();
        let (m, b) = pooled_rmse(&e2v);
        assert_relative_eq!(m, e2v[0].model_rmse, epsilon = 1e-12);
        assert_relative_eq!(b, e2v[0].baseline_rmse, epsilon = 1e-12);
    }
}
