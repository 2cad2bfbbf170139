//! Fusion quality metrics.
//!
//! Values computed on the 0–255 scale (EN, MI, SD, SF, AG, VIF) expect
//! inputs in `[0, 1]`.

use std::fmt;

use crate::error::{Error, Result};
use crate::losses::{ssim, SsimConfig};
use crate::task::Task;
use crate::tensor::{Scalar, Separable, Tensor};

/// Noise variance of the visual channel in VIF, on the 0–255 scale.
pub const VIF_NOISE_VAR: f64 = 2.0;
pub const VIF_SIGMA: f64 = 3.4;
pub const VIF_RADIUS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    En,
    Mi,
    Sd,
    Sf,
    Vif,
    Ag,
    Scd,
    Psnr,
    Ssim,
}

impl Metric {
    /// Report column order.
    pub const ALL: [Metric; 9] = [
        Metric::En,
        Metric::Mi,
        Metric::Sd,
        Metric::Sf,
        Metric::Vif,
        Metric::Ag,
        Metric::Scd,
        Metric::Psnr,
        Metric::Ssim,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Metric::En => "EN",
            Metric::Mi => "MI",
            Metric::Sd => "SD",
            Metric::Sf => "SF",
            Metric::Vif => "VIF(single-scale)",
            Metric::Ag => "AG",
            Metric::Scd => "SCD",
            Metric::Psnr => "PSNR",
            Metric::Ssim => "SSIM",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

fn levels<T: Scalar>(x: &Tensor<T>) -> Vec<usize> {
    x.data()
        .iter()
        .map(|v| (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as usize)
        .collect()
}

fn entropy_of(counts: &[u64], total: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum()
}

/// Shannon entropy in bits of the 256-level histogram.
pub fn entropy<T: Scalar>(x: &Tensor<T>) -> f64 {
    let mut hist = [0u64; 256];
    for q in levels(x) {
        hist[q] += 1;
    }
    entropy_of(&hist, x.numel() as f64)
}

fn pair_information<T: Scalar>(a: &Tensor<T>, f: &Tensor<T>) -> f64 {
    let (qa, qf) = (levels(a), levels(f));
    let mut joint = vec![0u64; 256 * 256];
    let (mut ha, mut hf) = ([0u64; 256], [0u64; 256]);
    for (&x, &y) in qa.iter().zip(&qf) {
        joint[x * 256 + y] += 1;
        ha[x] += 1;
        hf[y] += 1;
    }
    let n = qa.len() as f64;
    (entropy_of(&ha, n) + entropy_of(&hf, n) - entropy_of(&joint, n)).max(0.0)
}

fn same_shapes<T: Scalar>(xs: &[&Tensor<T>], op: &'static str) -> Result<()> {
    for x in &xs[1..] {
        if x.shape() != xs[0].shape() {
            return Err(Error::shapes(op, xs[0].shape(), x.shape()));
        }
    }
    Ok(())
}

/// `MI(a, f) + MI(b, f)` in bits.
pub fn mutual_information<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, fused: &Tensor<T>) -> Result<f64> {
    same_shapes(&[a, b, fused], "mutual_information")?;
    Ok(pair_information(a, fused) + pair_information(b, fused))
}

/// Population standard deviation, ×255.
pub fn std_dev<T: Scalar>(x: &Tensor<T>) -> f64 {
    let n = x.numel() as f64;
    let mean = x.data().iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let var = x.data().iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
    255.0 * var.sqrt()
}

/// `√(RF² + CF²)` from RMS forward differences along rows and columns, ×255.
pub fn spatial_frequency<T: Scalar>(x: &Tensor<T>) -> f64 {
    let s = x.shape();
    let (mut row, mut col, mut nr, mut nc) = (0.0, 0.0, 0usize, 0usize);
    for n in 0..s.n {
        for c in 0..s.c {
            let p = x.plane(n, c);
            for y in 0..s.h {
                for xx in 0..s.w {
                    let v = p[y * s.w + xx].as_f64();
                    if xx + 1 < s.w {
                        row += (p[y * s.w + xx + 1].as_f64() - v).powi(2);
                        nr += 1;
                    }
                    if y + 1 < s.h {
                        col += (p[(y + 1) * s.w + xx].as_f64() - v).powi(2);
                        nc += 1;
                    }
                }
            }
        }
    }
    let rf = if nr > 0 { row / nr as f64 } else { 0.0 };
    let cf = if nc > 0 { col / nc as f64 } else { 0.0 };
    255.0 * (rf + cf).sqrt()
}

/// Mean of `√((dx² + dy²)/2)` over 2×2 cells, ×255, where `dx` and `dy`
/// average the cell's two horizontal and two vertical differences.
pub fn avg_gradient<T: Scalar>(x: &Tensor<T>) -> f64 {
    let s = x.shape();
    if s.h < 2 || s.w < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for n in 0..s.n {
        for c in 0..s.c {
            let p = x.plane(n, c);
            let at = |y: usize, xx: usize| p[y * s.w + xx].as_f64();
            for y in 0..s.h - 1 {
                for xx in 0..s.w - 1 {
                    let dx = 0.5 * ((at(y, xx + 1) - at(y, xx)) + (at(y + 1, xx + 1) - at(y + 1, xx)));
                    let dy = 0.5 * ((at(y + 1, xx) - at(y, xx)) + (at(y + 1, xx + 1) - at(y, xx + 1)));
                    total += ((dx * dx + dy * dy) / 2.0).sqrt();
                }
            }
        }
    }
    255.0 * total / (s.planes() * (s.h - 1) * (s.w - 1)) as f64
}

/// Pixel-domain single-scale VIF of `dist` against `reference`.
///
/// Local statistics use a Gaussian window (σ 3.4, radius 8, replicate
/// border) on the 0–255 scale. With gain `g = σ_rd/σ_r²` and residual
/// variance `σ_v² = σ_d² − g·σ_rd`, the score is
/// `Σ log(1 + g²σ_r²/(σ_v² + σ_n²)) / Σ log(1 + σ_r²/σ_n²)`, with the usual
/// clamps for flat regions and negative gains. A flat reference scores 0.
pub fn vif_single<T: Scalar>(reference: &Tensor<T>, dist: &Tensor<T>) -> Result<f64> {
    same_shapes(&[reference, dist], "vif")?;
    let s = reference.shape();
    let r: Tensor<f64> = reference.cast::<f64>().scale(255.0);
    let d: Tensor<f64> = dist.cast::<f64>().scale(255.0);
    let win = Separable::gaussian(s.h, s.w, VIF_SIGMA, VIF_RADIUS);
    let mr = win.apply(&r)?;
    let md = win.apply(&d)?;
    let mrr = win.apply(&r.mul(&r)?)?;
    let mdd = win.apply(&d.mul(&d)?)?;
    let mrd = win.apply(&r.mul(&d)?)?;
    const TINY: f64 = 1e-10;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..r.numel() {
        let (ur, ud) = (mr.data()[i], md.data()[i]);
        let mut vr = (mrr.data()[i] - ur * ur).max(0.0);
        let vd = (mdd.data()[i] - ud * ud).max(0.0);
        let cov = mrd.data()[i] - ur * ud;
        let mut g = cov / (vr + TINY);
        let mut sv = vd - g * cov;
        if vr < TINY {
            g = 0.0;
            sv = vd;
            vr = 0.0;
        }
        if vd < TINY {
            g = 0.0;
            sv = 0.0;
        }
        if g < 0.0 {
            sv = vd;
            g = 0.0;
        }
        let sv = sv.max(TINY);
        num += (1.0 + g * g * vr / (sv + VIF_NOISE_VAR)).log10();
        den += (1.0 + vr / VIF_NOISE_VAR).log10();
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// `VIF(a, f) + VIF(b, f)`.
pub fn vif_fusion<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, fused: &Tensor<T>) -> Result<f64> {
    Ok(vif_single(a, fused)? + vif_single(b, fused)?)
}

/// Pearson correlation; 0 when either argument has no variance.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// `r(f − b, a) + r(f − a, b)`.
pub fn scd<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, fused: &Tensor<T>) -> Result<f64> {
    same_shapes(&[a, b, fused], "scd")?;
    let v = |t: &Tensor<T>| t.data().iter().map(|x| x.as_f64()).collect::<Vec<_>>();
    let (va, vb, vf) = (v(a), v(b), v(fused));
    let fb: Vec<f64> = vf.iter().zip(&vb).map(|(f, b)| f - b).collect();
    let fa: Vec<f64> = vf.iter().zip(&va).map(|(f, a)| f - a).collect();
    Ok(correlation(&fb, &va) + correlation(&fa, &vb))
}

/// Peak-1 PSNR per channel, averaged over channels; `+∞` for a channel
/// that matches exactly.
pub fn psnr<T: Scalar>(reference: &Tensor<T>, test: &Tensor<T>) -> Result<f64> {
    same_shapes(&[reference, test], "psnr")?;
    let s = reference.shape();
    let mut total = 0.0;
    for c in 0..s.c {
        let mut se = 0.0;
        for n in 0..s.n {
            for (a, b) in reference.plane(n, c).iter().zip(test.plane(n, c)) {
                se += (a.as_f64() - b.as_f64()).powi(2);
            }
        }
        let m = se / (s.n * s.plane()) as f64;
        total += if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() };
    }
    Ok(total / s.c as f64)
}

/// SSIM per channel, averaged over channels.
pub fn ssim_metric<T: Scalar>(reference: &Tensor<T>, test: &Tensor<T>) -> Result<f64> {
    same_shapes(&[reference, test], "ssim")?;
    let cfg = SsimConfig::default();
    let c = reference.shape().c;
    let mut total = 0.0;
    for ch in 0..c {
        total += ssim(&reference.channel(ch), &test.channel(ch), &cfg)?;
    }
    Ok(total / c as f64)
}

/// Where the evaluated images came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Provenance {
    pub sources: Vec<String>,
    pub fused: String,
    /// Seconds since the Unix epoch.
    pub timestamp: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    values: Vec<(Metric, f64)>,
    pub provenance: Provenance,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, m: Metric, v: f64) {
        match self.values.iter_mut().find(|(k, _)| *k == m) {
            Some(e) => e.1 = v,
            None => {
                self.values.push((m, v));
                self.values.sort_by_key(|(k, _)| *k);
            }
        }
    }

    pub fn get(&self, m: Metric) -> Option<f64> {
        self.values.iter().find(|(k, _)| *k == m).map(|e| e.1)
    }

    pub fn metrics(&self) -> Vec<Metric> {
        self.values.iter().map(|e| e.0).collect()
    }

    pub fn values(&self) -> &[(Metric, f64)] {
        &self.values
    }

    /// One JSON object; metrics keep the report column order and an
    /// infinite PSNR is written as `"inf"`.
    pub fn to_json(&self) -> String {
        let metrics: Vec<String> = self
            .values
            .iter()
            .map(|(m, v)| format!("{}:{}", json_str(m.label()), json_num(*v)))
            .collect();
        let sources: Vec<String> = self.provenance.sources.iter().map(|s| json_str(s)).collect();
        let ts = self.provenance.timestamp.map_or("null".to_string(), |t| t.to_string());
        format!(
            "{{\"metrics\":{{{}}},\"provenance\":{{\"sources\":[{}],\"fused\":{},\"timestamp\":{}}}}}",
            metrics.join(","),
            sources.join(","),
            json_str(&self.provenance.fused),
            ts
        )
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialise")
}

fn json_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v > 0.0 {
        "\"inf\"".into()
    } else if v < 0.0 {
        "\"-inf\"".into()
    } else {
        "\"nan\"".into()
    }
}

fn csv_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v > 0.0 {
        "inf".into()
    } else if v < 0.0 {
        "-inf".into()
    } else {
        "nan".into()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// CSV with a `fused` column followed by every metric present in any
/// report, in column order. Missing values are left empty.
pub fn reports_to_csv(reports: &[MetricReport]) -> String {
    let cols: Vec<Metric> = Metric::ALL
        .into_iter()
        .filter(|m| reports.iter().any(|r| r.get(*m).is_some()))
        .collect();
    let mut out = String::from("fused");
    for m in &cols {
        out.push(',');
        out.push_str(m.label());
    }
    out.push('\n');
    for r in reports {
        out.push_str(&csv_field(&r.provenance.fused));
        for m in &cols {
            out.push(',');
            if let Some(v) = r.get(*m) {
                out.push_str(&csv_num(v));
            }
        }
        out.push('\n');
    }
    out
}

/// JSON array of [`MetricReport::to_json`] objects.
pub fn reports_to_json(reports: &[MetricReport]) -> String {
    let items: Vec<String> = reports.iter().map(MetricReport::to_json).collect();
    format!("[{}]\n", items.join(","))
}

/// Task-appropriate metrics.
///
/// * `ivf`: two sources and the fused image; EN, MI, SD, SF, VIF, AG, SCD.
/// * `mef`: any number of sources and the fused image; EN, SD, SF, AG.
/// * `mmf`: one reference and the test image; PSNR, SSIM.
///
/// Multi-channel IVF/MEF inputs are reduced to BT.601 luma first.
pub fn evaluate_all<T: Scalar>(task: Task, inputs: &[Tensor<T>], output: &Tensor<T>) -> Result<MetricReport> {
    let mut r = MetricReport::new();
    match task {
        Task::Ivf | Task::Mef => {
            if task == Task::Ivf && inputs.len() != 2 {
                return Err(Error::InvalidArgument(format!(
                    "ivf evaluation needs 2 sources, got {}",
                    inputs.len()
                )));
            }
            if inputs.is_empty() {
                return Err(Error::InvalidArgument(
                    "mef evaluation needs at least one source".into(),
                ));
            }
            let f = luma(output);
            let srcs: Vec<_> = inputs.iter().map(luma).collect();
            r.insert(Metric::En, entropy(&f));
            r.insert(Metric::Sd, std_dev(&f));
            r.insert(Metric::Sf, spatial_frequency(&f));
            r.insert(Metric::Ag, avg_gradient(&f));
            if task == Task::Ivf {
                r.insert(Metric::Mi, mutual_information(&srcs[0], &srcs[1], &f)?);
                r.insert(Metric::Vif, vif_fusion(&srcs[0], &srcs[1], &f)?);
                r.insert(Metric::Scd, scd(&srcs[0], &srcs[1], &f)?);
            } else {
                for s in &srcs {
                    same_shapes(&[s, &f], "mef evaluation")?;
                }
            }
        }
        Task::Mmf => {
            let [reference] = inputs else {
                return Err(Error::InvalidArgument(format!(
                    "mmf evaluation needs one reference, got {}",
                    inputs.len()
                )));
            };
            r.insert(Metric::Psnr, psnr(reference, output)?);
            r.insert(Metric::Ssim, ssim_metric(reference, output)?);
        }
    }
    Ok(r)
}

fn luma<T: Scalar>(x: &Tensor<T>) -> Tensor<f64> {
    let s = x.shape();
    if s.c != 3 {
        return x.cast();
    }
    Tensor::from_fn(s.with_c(1), |n, _, y, xx| {
        0.299 * x.at(n, 0, y, xx).as_f64() + 0.587 * x.at(n, 1, y, xx).as_f64() + 0.114 * x.at(n, 2, y, xx).as_f64()
    })
}
