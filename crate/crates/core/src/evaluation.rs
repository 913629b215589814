//! Angle errors, summary metrics, per-category tables and heatmaps.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};

pub const DEFAULT_SUBSET: usize = 5000;
pub const DEFAULT_PGP_ALPHAS: [f64; 4] = [5.0, 10.0, 20.0, 30.0];

/// Angle in degrees between two lines, ignoring orientation.
pub fn unoriented_angle_error(estimate: &Vec3, gt: &Vec3) -> Result<f64> {
    let (a, b) = (estimate.norm(), gt.norm());
    if a == 0.0 || b == 0.0 || !a.is_finite() || !b.is_finite() {
        return Err(Error::invalid(
            "angle error needs two nonzero finite directions",
        ));
    }
    // atan2 keeps full precision for nearly parallel inputs, where acos
    // of the cosine would not.
    let (u, v) = (estimate / a, gt / b);
    Ok(u.cross(&v).norm().atan2(u.dot(&v).abs()).to_degrees())
}

pub fn rmse(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::invalid("rmse of an empty error list"));
    }
    Ok((errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}

/// Percentage of errors strictly below `alpha` degrees.
pub fn pgp_alpha(errors: &[f64], alpha: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::invalid("pgp of an empty error list"));
    }
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!(
            "pgp threshold {alpha} must be positive"
        )));
    }
    Ok(100.0 * errors.iter().filter(|&&e| e < alpha).count() as f64 / errors.len() as f64)
}

/// Which evaluation points of a cloud to use.
#[derive(Debug, Clone, PartialEq)]
pub enum Subset {
    /// `min(size, N)` points drawn without replacement from a seeded stream.
    Seeded { size: usize, seed: u64 },
    /// Given indices, used as they are.
    Indices(Vec<usize>),
}

impl Default for Subset {
    fn default() -> Self {
        Subset::Seeded {
            size: DEFAULT_SUBSET,
            seed: 0,
        }
    }
}

impl Subset {
    /// Sorted evaluation indices for a cloud of `n` points.
    pub fn resolve(&self, n: usize) -> Result<Vec<usize>> {
        match self {
            Subset::Seeded { size, seed } => {
                if *size >= n {
                    return Ok((0..n).collect());
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut idx = rand::seq::index::sample(&mut rng, n, *size).into_vec();
                idx.sort_unstable();
                Ok(idx)
            }
            Subset::Indices(idx) => {
                if idx.is_empty() {
                    return Err(Error::invalid("evaluation index list is empty"));
                }
                if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
                    return Err(Error::invalid(format!(
                        "evaluation index {bad} outside a cloud of {n} points"
                    )));
                }
                Ok(idx.clone())
            }
        }
    }
}

/// Error statistics for one cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub name: String,
    pub category: String,
    pub eval_indices: Vec<usize>,
    pub per_point_errors: Vec<f64>,
    pub rmse: f64,
    /// `(alpha, percentage)` pairs in ascending alpha.
    pub pgp: Vec<(f64, f64)>,
}

impl EvalReport {
    pub fn from_errors(name: &str, eval_indices: Vec<usize>, errors: Vec<f64>) -> Result<Self> {
        let pgp = DEFAULT_PGP_ALPHAS
            .iter()
            .map(|&a| Ok((a, pgp_alpha(&errors, a)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalReport {
            name: name.to_string(),
            category: category_of(name),
            rmse: rmse(&errors)?,
            eval_indices,
            per_point_errors: errors,
            pgp,
        })
    }

    /// Per-point CSV: `index,err_deg`.
    pub fn points_csv(&self) -> String {
        let mut out = String::from("index,err_deg\n");
        for (i, e) in self.eval_indices.iter().zip(&self.per_point_errors) {
            let _ = writeln!(out, "{i},{e}");
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("shape,category,points,rmse_deg");
        for (a, _) in &self.pgp {
            let _ = write!(out, ",pgp{a}");
        }
        let _ = write!(
            out,
            "\n{},{},{},{}",
            self.name,
            self.category,
            self.per_point_errors.len(),
            self.rmse
        );
        for (_, p) in &self.pgp {
            let _ = write!(out, ",{p}");
        }
        out.push('\n');
        out
    }
}

/// Compares full-cloud estimates with the cloud's ground truth on a subset.
pub fn evaluate_normals(
    cloud: &PointCloud,
    estimates: &[Vec3],
    subset: &Subset,
) -> Result<EvalReport> {
    if estimates.len() != cloud.len() {
        return Err(Error::invalid(format!(
            "{} estimates for {} points",
            estimates.len(),
            cloud.len()
        )));
    }
    let idx = subset.resolve(cloud.len())?;
    let picked: Vec<Vec3> = idx.iter().map(|&i| estimates[i]).collect();
    evaluate_subset(cloud, idx, &picked)
}

/// Runs `estimator` on the evaluation subset only and scores it.
pub fn evaluate_cloud(
    cloud: &PointCloud,
    estimator: impl Fn(&[usize]) -> Result<Vec<Vec3>>,
    subset: &Subset,
) -> Result<EvalReport> {
    if cloud.gt_normals().is_none() {
        return Err(Error::invalid(format!(
            "cloud '{}' has no ground-truth normals",
            cloud.name()
        )));
    }
    let idx = subset.resolve(cloud.len())?;
    let estimates = estimator(&idx)?;
    if estimates.len() != idx.len() {
        return Err(Error::invalid(
            "estimator returned the wrong number of normals",
        ));
    }
    evaluate_subset(cloud, idx, &estimates)
}

fn evaluate_subset(cloud: &PointCloud, idx: Vec<usize>, estimates: &[Vec3]) -> Result<EvalReport> {
    let gt = cloud.gt_normals().ok_or_else(|| {
        Error::invalid(format!(
            "cloud '{}' has no ground-truth normals",
            cloud.name()
        ))
    })?;
    let errors = idx
        .iter()
        .zip(estimates)
        .map(|(&i, e)| unoriented_angle_error(e, &gt[i]))
        .collect::<Result<Vec<f64>>>()?;
    EvalReport::from_errors(cloud.name(), idx, errors)
}

/// Category label from a shape name's augmentation suffix:
/// `_noise_white_<sigma>`, `_ddist_minmax` (gradient) and
/// `_ddist_minmax_layers` (stripes). Anything else is `none`.
pub fn category_of(name: &str) -> String {
    if name.ends_with("_ddist_minmax_layers") {
        return "stripes".into();
    }
    if name.ends_with("_ddist_minmax") {
        return "gradient".into();
    }
    if let Some(pos) = name.rfind("_noise_white_") {
        let level = &name[pos + "_noise_white_".len()..];
        if let Ok(sigma) = level.parse::<f64>() {
            return format!("noise_{sigma}");
        }
    }
    "none".into()
}

/// File-name suffix that [`category_of`] maps back to the augmentation.
pub fn category_suffix(noise_sigma: f64, density: crate::synth::DensityMode) -> String {
    use crate::synth::DensityMode;
    let mut s = String::new();
    if noise_sigma > 0.0 {
        let _ = write!(s, "_noise_white_{noise_sigma:.2e}");
    }
    match density {
        DensityMode::None => {}
        DensityMode::Gradient => s.push_str("_ddist_minmax"),
        DensityMode::Stripes => s.push_str("_ddist_minmax_layers"),
    }
    s
}

fn category_rank(label: &str) -> (u8, f64) {
    match label {
        "none" => (0, 0.0),
        "gradient" => (2, 0.0),
        "stripes" => (3, 0.0),
        other => (
            1,
            other
                .trim_start_matches("noise_")
                .parse()
                .unwrap_or(f64::INFINITY),
        ),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryRow {
    pub category: String,
    pub shapes: usize,
    /// Mean of the per-shape RMSEs in this category.
    pub rmse: f64,
    pub pgp: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryTable {
    pub rows: Vec<CategoryRow>,
    /// Unweighted mean over the category rows.
    pub average: CategoryRow,
}

impl CategoryTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,shapes,rmse_deg");
        for (a, _) in &self.average.pgp {
            let _ = write!(out, ",pgp{a}");
        }
        out.push('\n');
        for row in self.rows.iter().chain(std::iter::once(&self.average)) {
            let _ = write!(out, "{},{},{}", row.category, row.shapes, row.rmse);
            for (_, p) in &row.pgp {
                let _ = write!(out, ",{p}");
            }
            out.push('\n');
        }
        out
    }
}

/// `(shape count, rmse, pgp pairs)` feeding one averaged row.
type RowPart<'a> = (usize, f64, &'a [(f64, f64)]);

fn mean_row(label: &str, rows: &[RowPart]) -> CategoryRow {
    let n = rows.len() as f64;
    let alphas: Vec<f64> = rows[0].2.iter().map(|(a, _)| *a).collect();
    CategoryRow {
        category: label.to_string(),
        shapes: rows.iter().map(|r| r.0).sum(),
        rmse: rows.iter().map(|r| r.1).sum::<f64>() / n,
        pgp: alphas
            .iter()
            .enumerate()
            .map(|(i, &a)| (a, rows.iter().map(|r| r.2[i].1).sum::<f64>() / n))
            .collect(),
    }
}

/// Groups reports by category in the order none, noise (ascending sigma),
/// gradient, stripes, and appends the average row.
pub fn aggregate_categories(reports: &[EvalReport]) -> Result<CategoryTable> {
    if reports.is_empty() {
        return Err(Error::invalid("no reports to aggregate"));
    }
    let mut labels: Vec<&str> = reports.iter().map(|r| r.category.as_str()).collect();
    labels.sort_by(|a, b| {
        let (ra, rb) = (category_rank(a), category_rank(b));
        ra.0.cmp(&rb.0).then(ra.1.total_cmp(&rb.1)).then(a.cmp(b))
    });
    labels.dedup();
    let rows: Vec<CategoryRow> = labels
        .iter()
        .map(|label| {
            let members: Vec<RowPart> = reports
                .iter()
                .filter(|r| r.category == *label)
                .map(|r| (1, r.rmse, r.pgp.as_slice()))
                .collect();
            mean_row(label, &members)
        })
        .collect();
    let summary: Vec<RowPart> = rows
        .iter()
        .map(|r| (r.shapes, r.rmse, r.pgp.as_slice()))
        .collect();
    let average = mean_row("average", &summary);
    Ok(CategoryTable { rows, average })
}

/// Three-band error class: below 5 degrees, 5 to 10, above 10.
pub fn error_band(err_deg: f64) -> &'static str {
    if err_deg < 5.0 {
        "blue"
    } else if err_deg <= 10.0 {
        "green"
    } else {
        "red"
    }
}

/// Error mapped linearly from `[0, 90]` degrees to `[0, 1]`.
pub fn colormap_value(err_deg: f64) -> f64 {
    (err_deg / 90.0).clamp(0.0, 1.0)
}

/// Blue to cyan to yellow to red ramp.
fn ramp(t: f64) -> [u8; 3] {
    let stops = [
        (0.0, [0.0, 0.0, 1.0]),
        (1.0 / 3.0, [0.0, 1.0, 1.0]),
        (2.0 / 3.0, [1.0, 1.0, 0.0]),
        (1.0, [1.0, 0.0, 0.0]),
    ];
    let mut out = [0u8; 3];
    for w in stops.windows(2) {
        let ((t0, c0), (t1, c1)) = (w[0], w[1]);
        if t <= t1 {
            let s = (t - t0) / (t1 - t0);
            for i in 0..3 {
                out[i] = ((c0[i] + s * (c1[i] - c0[i])) * 255.0).round() as u8;
            }
            return out;
        }
    }
    [255, 0, 0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapFormat {
    Csv,
    Ply,
}

impl std::str::FromStr for HeatmapFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(HeatmapFormat::Csv),
            "ply" => Ok(HeatmapFormat::Ply),
            other => Err(Error::invalid(format!(
                "unknown heatmap format '{other}' (csv, ply)"
            ))),
        }
    }
}

pub fn heatmap_text(points: &[Vec3], errors: &[f64], format: HeatmapFormat) -> Result<String> {
    if points.len() != errors.len() {
        return Err(Error::invalid(format!(
            "{} errors for {} points",
            errors.len(),
            points.len()
        )));
    }
    let mut out = String::new();
    match format {
        HeatmapFormat::Csv => {
            out.push_str("x,y,z,err_deg,band\n");
            for (p, e) in points.iter().zip(errors) {
                let _ = writeln!(out, "{},{},{},{},{}", p.x, p.y, p.z, e, error_band(*e));
            }
        }
        HeatmapFormat::Ply => {
            let _ = write!(
                out,
                "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
                 property uchar red\nproperty uchar green\nproperty uchar blue\nproperty double err_deg\nproperty uchar band\nend_header\n",
                points.len()
            );
            for (p, e) in points.iter().zip(errors) {
                let [r, g, b] = ramp(colormap_value(*e));
                let band = match error_band(*e) {
                    "blue" => 0,
                    "green" => 1,
                    _ => 2,
                };
                let _ = writeln!(out, "{} {} {} {r} {g} {b} {e} {band}", p.x, p.y, p.z);
            }
        }
    }
    Ok(out)
}

pub fn export_heatmap(
    points: &[Vec3],
    errors: &[f64],
    path: &Path,
    format: HeatmapFormat,
) -> Result<()> {
    let text = heatmap_text(points, errors, format)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
