//! SVG charts of results tables and of the analytic endorsement curve.

use std::collections::BTreeMap;
use std::path::Path;

use plotters::coord::Shift;
use plotters::prelude::*;

use super::HarnessError;
use crate::endorsing::endorsement_probability;

/// A results table loaded as text cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.iter().map(str::to_owned).collect();
        let rows = reader
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_owned).collect()))
            .collect::<Result<_, _>>()?;
        Ok(Self { headers, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize, HarnessError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::UnknownColumn(name.to_owned()))
    }
}

/// One curve: group label and `(x, mean y)` points sorted by x.
pub type Series = (String, Vec<(f64, f64)>);

/// Averages `y` per `(group, x)`; rows with a non-numeric cell are skipped.
pub fn series(
    table: &Table,
    x: &str,
    y: &str,
    group: &[String],
) -> Result<Vec<Series>, HarnessError> {
    let xi = table.column(x)?;
    let yi = table.column(y)?;
    let gi: Vec<usize> = group
        .iter()
        .map(|g| table.column(g))
        .collect::<Result<_, _>>()?;
    let mut acc: BTreeMap<String, BTreeMap<i64, (f64, f64, u32)>> = BTreeMap::new();
    for row in &table.rows {
        let (Some(xv), Some(yv)) = (parse_cell(&row[xi]), parse_cell(&row[yi])) else {
            continue;
        };
        let label = gi
            .iter()
            .map(|&i| format!("{}={}", table.headers[i], row[i]))
            .collect::<Vec<_>>()
            .join(", ");
        // x values are bucketed at 1e-9 resolution so equal floats merge
        let key = (xv * 1e9).round() as i64;
        let slot = acc
            .entry(label)
            .or_default()
            .entry(key)
            .or_insert((xv, 0.0, 0));
        slot.1 += yv;
        slot.2 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(label, pts)| {
            (
                label,
                pts.into_values()
                    .map(|(x, sum, n)| (x, sum / f64::from(n)))
                    .collect(),
            )
        })
        .collect())
}

fn parse_cell(cell: &str) -> Option<f64> {
    match cell {
        "true" => Some(1.0),
        "false" => Some(0.0),
        other => other.parse().ok(),
    }
}

fn padded_range(values: impl Iterator<Item = f64>) -> std::ops::Range<f64> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        return 0.0..1.0;
    }
    let pad = if hi > lo {
        (hi - lo) * 0.05
    } else {
        lo.abs().max(1.0) * 0.5
    };
    (lo - pad)..(hi + pad)
}

fn draw_panel<DB: DrawingBackend>(
    area: &DrawingArea<DB, Shift>,
    title: &str,
    x_label: &str,
    y_label: &str,
    curves: &[Series],
) -> Result<(), HarnessError>
where
    DB::ErrorType: 'static,
{
    let xr = padded_range(curves.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let yr = padded_range(curves.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(50)
        .build_cartesian_2d(xr, yr)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(plot_err)?;
    for (i, (label, points)) in curves.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(
                points.iter().copied(),
                color.stroke_width(2),
            ))
            .map_err(plot_err)?
            .label(label.clone())
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2))
            });
        chart
            .draw_series(points.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(plot_err)?;
    }
    if curves.iter().any(|(l, _)| !l.is_empty()) {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    Ok(())
}

fn plot_err<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Plot(e.to_string())
}

/// Draws `y` against `x` with one curve per group; with several `ys` the
/// panels are laid out on a grid of up to three columns.
pub fn plot_table(
    table: &Table,
    x: &str,
    ys: &[String],
    group: &[String],
    out: &Path,
) -> Result<(), HarnessError> {
    if ys.is_empty() {
        return Err(HarnessError::Plot("no y column given".into()));
    }
    let all: Vec<Vec<Series>> = ys
        .iter()
        .map(|y| series(table, x, y, group))
        .collect::<Result<_, _>>()?;
    let cols = ys.len().min(3);
    let rows = ys.len().div_ceil(cols);
    let root = SVGBackend::new(out, (520 * cols as u32, 400 * rows as u32)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let areas = root.split_evenly((rows, cols));
    for ((y, curves), area) in ys.iter().zip(&all).zip(&areas) {
        draw_panel(area, &format!("{y} vs {x}"), x, y, curves)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// `Y(X)` curves of [`endorsement_probability`] for each sabotage level.
pub fn theory_series(n: u32, q: u32, b_values: &[u32], steps: u32) -> Vec<Series> {
    b_values
        .iter()
        .map(|&b| {
            let pts = (0..=steps)
                .map(|i| {
                    let x = f64::from(i) / f64::from(steps);
                    (x, endorsement_probability(n, b.min(n), q, x))
                })
                .collect();
            (format!("b={b}"), pts)
        })
        .collect()
}

pub fn plot_endorsement_theory(
    n: u32,
    q: u32,
    b_values: &[u32],
    out: &Path,
) -> Result<(), HarnessError> {
    if q == 0 || q > n {
        return Err(HarnessError::invalid("q", format!("must lie in 1..={n}")));
    }
    if let Some(b) = b_values.iter().find(|b| **b > n) {
        return Err(HarnessError::invalid("b", format!("{b} exceeds n = {n}")));
    }
    let curves = theory_series(n, q, b_values, 100);
    let root = SVGBackend::new(out, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    draw_panel(
        &root,
        &format!("endorsement probability, n={n}, q={q}"),
        "X",
        "Y",
        &curves,
    )?;
    root.present().map_err(plot_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Table {
        Table {
            headers: vec!["x".into(), "y".into(), "g".into()],
            rows: vec![
                vec!["0".into(), "1".into(), "a".into()],
                vec!["0".into(), "3".into(), "a".into()],
                vec!["1".into(), "".into(), "a".into()],
                vec!["1".into(), "5".into(), "b".into()],
            ],
        }
    }

    #[test]
    fn series_average_and_group() {
        let s = series(&table(), "x", "y", &["g".into()]).unwrap();
        assert_eq!(
            s,
            vec![
                ("g=a".into(), vec![(0.0, 2.0)]),
                ("g=b".into(), vec![(1.0, 5.0)])
            ]
        );
        assert!(matches!(
            series(&table(), "x", "nope", &[]),
            Err(HarnessError::UnknownColumn(_))
        ));
    }

    #[test]
    fn theory_curves_are_ordered() {
        let s = theory_series(20, 10, &[0, 2, 5, 11], 50);
        assert_eq!(*s[0].1.last().unwrap(), (1.0, 1.0));
        for w in s.windows(2) {
            for (a, b) in w[0].1.iter().zip(&w[1].1) {
                assert!(b.1 <= a.1 + 1e-12);
            }
        }
        assert!(s[3].1.iter().all(|p| p.1 == 0.0));
    }

    #[test]
    fn charts_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.svg");
        plot_table(&table(), "x", &["y".into()], &["g".into()], &p).unwrap();
        let svg = std::fs::read_to_string(&p).unwrap();
        assert!(svg.starts_with("<svg"));
        let p = dir.path().join("theory.svg");
        plot_endorsement_theory(20, 10, &[0, 5], &p).unwrap();
        assert!(std::fs::metadata(&p).unwrap().len() > 0);
    }
}
