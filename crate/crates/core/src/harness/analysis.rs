//! Statistics over sweep CSVs: order-statistic summaries, rank correlation,
//! the energy-ordering check and long-format plot data.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use super::HarnessError;

/// Linear-interpolation quantile of sorted data, `q` in [0, 1].
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Panics on empty input.
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of nothing");
    quantile_sorted(&sorted_copy(xs), 0.5)
}

/// Interquartile range, Q3 - Q1 with linear interpolation. Panics on empty
/// input.
pub fn iqr(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "IQR of nothing");
    let s = sorted_copy(xs);
    quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25)
}

/// Kendall rank correlation with the tie correction (tau-b). Returns 0 when
/// either series is constant.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "paired series");
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i].total_cmp(&x[j]) as i64;
            let dy = y[i].total_cmp(&y[j]) as i64;
            match (dx, dy) {
                (0, 0) => {}
                (0, _) => tie_x += 1,
                (_, 0) => tie_y += 1,
                _ if dx == dy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = ((concordant + discordant + tie_x) * (concordant + discordant + tie_y)) as f64;
    if n0 == 0.0 {
        0.0
    } else {
        (concordant - discordant) as f64 / n0.sqrt()
    }
}

/// A CSV held as strings, addressed by column name.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read<R: Read>(input: R) -> Result<Table, HarnessError> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()?;
        Ok(Table { headers, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize, HarnessError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::UnknownColumn(name.to_string()))
    }

    fn number(&self, row: usize, col: usize) -> Result<f64, HarnessError> {
        let cell = &self.rows[row][col];
        cell.trim().parse().map_err(|_| {
            HarnessError::Csv(format!(
                "row {}: column {:?} holds {cell:?}, not a number",
                row + 1,
                self.headers[col]
            ))
        })
    }
}

/// One adjacent comparison of the expected chain at one interarrival.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCheck {
    pub interarrival_s: f64,
    pub lower: String,
    pub higher: String,
    pub lower_median: f64,
    pub higher_median: f64,
    pub lower_iqr: f64,
    pub higher_iqr: f64,
}

impl PairCheck {
    pub fn ordered(&self) -> bool {
        self.lower_median < self.higher_median
    }

    /// The gap beats the seed-to-seed spread of both sides.
    pub fn separated(&self) -> bool {
        self.higher_median - self.lower_median > self.lower_iqr.max(self.higher_iqr)
    }

    pub fn pass(&self) -> bool {
        self.ordered() && self.separated()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingReport {
    pub checks: Vec<PairCheck>,
}

impl OrderingReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(PairCheck::pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PairCheck> {
        self.checks.iter().filter(|c| !c.pass())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for c in &self.checks {
            let verdict = match (c.ordered(), c.separated()) {
                (true, true) => "PASS",
                (false, _) => "FAIL (inverted)",
                (true, false) => "FAIL (gap within seed spread)",
            };
            writeln!(
                out,
                "interarrival {} s: {} {:.3} (IQR {:.3}) < {} {:.3} (IQR {:.3}): {verdict}",
                c.interarrival_s,
                c.lower,
                c.lower_median,
                c.lower_iqr,
                c.higher,
                c.higher_median,
                c.higher_iqr
            )?;
        }
        writeln!(out, "{}", if self.pass() { "PASS" } else { "FAIL" })
    }
}

/// Compares per-protocol median `avg_node_energy_mj` against `expected`
/// (lowest first) at every interarrival present in the table.
pub fn check_ordering(table: &Table, expected: &[&str]) -> Result<OrderingReport, HarnessError> {
    if expected.len() < 2 {
        return Err(HarnessError::Invalid("the expected order needs at least two protocols".into()));
    }
    let p = table.column("protocol")?;
    let x = table.column("interarrival_s")?;
    let y = table.column("avg_node_energy_mj")?;
    // Keyed by the interarrival's bit pattern so equal values group exactly.
    let mut samples: BTreeMap<(u64, String), Vec<f64>> = BTreeMap::new();
    let mut xs: BTreeSet<u64> = BTreeSet::new();
    for i in 0..table.rows.len() {
        let xv = table.number(i, x)?;
        xs.insert(xv.to_bits());
        samples
            .entry((xv.to_bits(), table.rows[i][p].clone()))
            .or_default()
            .push(table.number(i, y)?);
    }
    let mut xs: Vec<f64> = xs.into_iter().map(f64::from_bits).collect();
    xs.sort_by(f64::total_cmp);
    if xs.is_empty() {
        return Err(HarnessError::MissingData("the table has no rows".into()));
    }
    let mut checks = Vec::new();
    for &xv in &xs {
        let stats = |name: &str| -> Result<(f64, f64), HarnessError> {
            let v = samples.get(&(xv.to_bits(), name.to_string())).ok_or_else(|| {
                HarnessError::MissingData(format!("no {name} rows at interarrival {xv} s"))
            })?;
            Ok((median(v), iqr(v)))
        };
        for pair in expected.windows(2) {
            let (lm, li) = stats(pair[0])?;
            let (hm, hi) = stats(pair[1])?;
            checks.push(PairCheck {
                interarrival_s: xv,
                lower: pair[0].to_string(),
                higher: pair[1].to_string(),
                lower_median: lm,
                higher_median: hm,
                lower_iqr: li,
                higher_iqr: hi,
            });
        }
    }
    Ok(OrderingReport { checks })
}

/// One plot point: the spread of `y` over the rows sharing (group, x).
#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub group: String,
    pub x: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

/// Long-format summary, ordered by group then x.
pub fn emit_plot_data(table: &Table, x: &str, y: &str, group: &str) -> Result<Vec<PlotPoint>, HarnessError> {
    let (xc, yc, gc) = (table.column(x)?, table.column(y)?, table.column(group)?);
    let mut cells: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
    for i in 0..table.rows.len() {
        let xv = table.number(i, xc)?;
        cells
            .entry((table.rows[i][gc].clone(), xv.to_bits()))
            .or_default()
            .push(table.number(i, yc)?);
    }
    let mut points: Vec<PlotPoint> = cells
        .into_iter()
        .map(|((g, xb), v)| PlotPoint {
            group: g,
            x: f64::from_bits(xb),
            median: median(&v),
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            n: v.len(),
        })
        .collect();
    points.sort_by(|a, b| a.group.cmp(&b.group).then(a.x.total_cmp(&b.x)));
    Ok(points)
}

/// Writes plot points with headers derived from the source column names.
pub fn write_plot_csv<W: Write>(
    points: &[PlotPoint],
    x: &str,
    y: &str,
    group: &str,
    out: W,
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        group.to_string(),
        x.to_string(),
        format!("median_{y}"),
        format!("min_{y}"),
        format!("max_{y}"),
        "n".to_string(),
    ])?;
    for p in points {
        w.write_record([
            p.group.clone(),
            p.x.to_string(),
            p.median.to_string(),
            p.min.to_string(),
            p.max.to_string(),
            p.n.to_string(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(csv_text: &str) -> Table {
        Table::read(csv_text.as_bytes()).unwrap()
    }

    #[test]
    fn order_statistics() {
        assert_eq!(median(&[3.0]), 3.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[5.0, 1.0, 3.0]), 3.0);
        // Quartiles of 1..=5 are 2 and 4.
        assert_eq!(iqr(&[5.0, 4.0, 3.0, 2.0, 1.0]), 2.0);
        assert_eq!(iqr(&[7.0]), 0.0);
    }

    #[test]
    fn kendall_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&x, &[10.0, 20.0, 30.0, 40.0]), 1.0);
        assert_eq!(kendall_tau(&x, &[4.0, 3.0, 2.0, 1.0]), -1.0);
        assert_eq!(kendall_tau(&x, &[1.0, 1.0, 1.0, 1.0]), 0.0);
        // One swapped pair of six: (5 - 1) / 6.
        assert!((kendall_tau(&x, &[1.0, 3.0, 2.0, 4.0]) - 4.0 / 6.0).abs() < 1e-12);
        // A plateau: pairs tied in y drop out of the y denominator.
        let t = kendall_tau(&x, &[0.5, 0.9, 1.0, 1.0]);
        assert!((t - 5.0 / 30f64.sqrt()).abs() < 1e-12);
    }

    fn chain_csv(values: &[(&str, f64)]) -> String {
        let mut s = String::from("protocol,interarrival_s,seed,avg_node_energy_mj\n");
        for (p, v) in values {
            s.push_str(&format!("{p},1,1,{v}\n"));
        }
        s
    }

    #[test]
    fn chain_in_order_passes() {
        let names = ["xmac", "wisemac", "bmac+", "bmac", "dmac", "tmac", "smac"];
        let rows: Vec<(&str, f64)> = names.iter().zip(5..).map(|(n, v)| (*n, v as f64)).collect();
        let r = check_ordering(&table(&chain_csv(&rows)), &names).unwrap();
        assert_eq!(r.checks.len(), 6);
        assert!(r.pass());
    }

    #[test]
    fn one_inversion_names_the_pair() {
        let names = ["a", "b", "c"];
        let r = check_ordering(&table(&chain_csv(&[("a", 1.0), ("b", 3.0), ("c", 2.0)])), &names).unwrap();
        assert!(!r.pass());
        let bad: Vec<_> = r.failures().map(|c| (c.lower.as_str(), c.higher.as_str())).collect();
        assert_eq!(bad, vec![("b", "c")]);
        let mut out = Vec::new();
        r.write_to(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("b 3.000") && text.contains("FAIL (inverted)"));
        assert!(text.trim_end().ends_with("FAIL"));
    }

    #[test]
    fn overlapping_spread_fails() {
        let csv_text = "protocol,interarrival_s,avg_node_energy_mj\n\
                        a,1,1\na,1,2\na,1,9\na,1,10\nb,1,7\nb,1,7\nb,1,7\n";
        let r = check_ordering(&table(csv_text), &["a", "b"]).unwrap();
        assert!(r.checks[0].ordered());
        assert!(!r.checks[0].separated());
    }

    #[test]
    fn missing_protocol_is_a_configuration_error() {
        let err = check_ordering(&table(&chain_csv(&[("a", 1.0)])), &["a", "b"]).unwrap_err();
        assert!(matches!(err, HarnessError::MissingData(_)));
    }

    #[test]
    fn plot_data_groups_and_summarizes() {
        let csv_text = "protocol,interarrival_s,y\nsmac,10,3\nsmac,1,1\nsmac,1,5\nsmac,1,2\ntmac,1,7\n";
        let pts = emit_plot_data(&table(csv_text), "interarrival_s", "y", "protocol").unwrap();
        assert_eq!(pts.len(), 3);
        assert_eq!((pts[0].x, pts[0].median, pts[0].min, pts[0].max, pts[0].n), (1.0, 2.0, 1.0, 5.0, 3));
        assert_eq!((pts[1].x, pts[1].median), (10.0, 3.0));
        assert_eq!(pts[2].group, "tmac");
        let err = emit_plot_data(&table(csv_text), "interarrival_s", "energy", "protocol").unwrap_err();
        assert_eq!(err, HarnessError::UnknownColumn("energy".into()));
    }

    #[test]
    fn single_row_in_single_row_out() {
        let pts = emit_plot_data(&table("g,x,y\nk,2,4.5\n"), "x", "y", "g").unwrap();
        assert_eq!(pts, vec![PlotPoint { group: "k".into(), x: 2.0, median: 4.5, min: 4.5, max: 4.5, n: 1 }]);
    }
}
