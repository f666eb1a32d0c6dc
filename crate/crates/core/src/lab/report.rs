use std::fmt;

/// One table cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::Int(i64::from(v))
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_owned())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

impl fmt::Display for Cell {
    /// Floats use 17 significant digits so they parse back bit for bit.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Float(v) if v.is_nan() => f.write_str("NaN"),
            Cell::Float(v) if v.is_infinite() => f.write_str(if *v > 0.0 { "inf" } else { "-inf" }),
            Cell::Float(v) => write!(f, "{v:.16e}"),
            Cell::Text(s) => f.write_str(s),
            Cell::Bool(b) => f.write_str(if *b { "true" } else { "false" }),
            Cell::Empty => Ok(()),
        }
    }
}

/// Rectangular table with a fixed header.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_owned(),
            columns: columns.iter().map(|c| (*c).to_owned()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width differs from header of {}",
            self.name
        );
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Outcome of an experiment's built-in acceptance check.
#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

/// Tables produced by one experiment plus the configuration that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config: Vec<(String, String)>,
    pub tables: Vec<Table>,
    pub notes: Vec<String>,
    pub verdict: Option<Verdict>,
}

impl ExperimentReport {
    pub fn new(experiment: &str) -> Self {
        Self {
            experiment: experiment.to_owned(),
            config: Vec::new(),
            tables: Vec::new(),
            notes: Vec::new(),
            verdict: None,
        }
    }

    pub fn echo(&mut self, key: &str, value: impl fmt::Display) {
        self.config.push((key.to_owned(), value.to_string()));
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

/// Mean and standard error of a Bernoulli count.
pub fn proportion(hits: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let p = hits as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

/// Least-squares line `y = a + b x` with the standard error of `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_se: f64,
    pub r2: f64,
    pub n: usize,
}

pub fn ols(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let slope_se = if n > 2 {
        (sse / (nf - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { f64::NAN };
    Some(LineFit {
        intercept,
        slope,
        slope_se,
        r2,
        n,
    })
}

/// Least-squares line through the origin `y = b x`. `r2` is the centered
/// coefficient of determination `1 - SSE / sum (y - mean y)^2`.
pub fn ols_through_origin(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / sxx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a).powi(2)).sum();
    let my = y.iter().sum::<f64>() / n as f64;
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    Some(LineFit {
        intercept: 0.0,
        slope,
        slope_se: (sse / (n as f64 - 1.0) / sxx).sqrt(),
        r2: if syy > 0.0 { 1.0 - sse / syy } else { f64::NAN },
        n,
    })
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Fisher-z confidence interval of a correlation at the normal quantile `z`.
pub fn correlation_ci(r: f64, n: usize, z: f64) -> (f64, f64) {
    if n <= 3 {
        return (-1.0, 1.0);
    }
    let f = r.clamp(-0.999_999_999, 0.999_999_999).atanh();
    let se = 1.0 / (n as f64 - 3.0).sqrt();
    ((f - z * se).tanh(), (f + z * se).tanh())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let s = Cell::Float(v).to_string();
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(Cell::Float(0.1).to_string(), "1.0000000000000001e-1");
        assert_eq!(Cell::Empty.to_string(), "");
    }

    #[test]
    fn fits() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let f = ols(&x, &y).unwrap();
        assert_abs_diff_eq!(f.slope, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.intercept, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.r2, 1.0, epsilon = 1e-14);
        let g = ols_through_origin(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert_abs_diff_eq!(g.slope, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.r2, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(pearson(&x, &y).unwrap(), 1.0, epsilon = 1e-14);
        assert!(pearson(&x, &[1.0; 4]).is_none());
        let (lo, hi) = correlation_ci(0.5, 30, 1.96);
        assert!(lo < 0.5 && 0.5 < hi);
    }
}
