//! Realizations from mean/covariance-factor trajectories, scoring against a
//! reference series, and plot-ready dumps (CSV, text matrices, PGM).

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::calibration::AnomalySeries;
use crate::error::{Error, Result};
use crate::exec;
use crate::grid::{Field, RegionMask};
use crate::linalg::LowRankFactor;
use crate::path_sim::path_rng;

/// Marginal sampling request: at every step `X = m + Z z` with a fresh
/// standard normal `z` per realization and step.
#[derive(Debug, Clone)]
pub struct RealizationRequest<'a> {
    pub means: &'a [DVector<f64>],
    pub factors: &'a [LowRankFactor],
    pub seed: u64,
    pub count: usize,
    /// Force `z = 0` (returns the mean trajectory); for testing.
    pub zero_draws: bool,
}

pub fn sample_realizations(req: &RealizationRequest<'_>) -> Result<Vec<Vec<DVector<f64>>>> {
    if req.count == 0 {
        return Err(Error::arg("at least one realization required"));
    }
    if req.means.len() != req.factors.len() {
        return Err(Error::dim(format!(
            "{} mean steps but {} factor steps",
            req.means.len(),
            req.factors.len()
        )));
    }
    for (m, z) in req.means.iter().zip(req.factors) {
        if m.len() != z.dim() {
            return Err(Error::dim("mean length differs from factor rows"));
        }
    }
    Ok(exec::map_indexed(req.count, |r| {
        let mut rng = path_rng(req.seed, r as u64);
        req.means
            .iter()
            .zip(req.factors)
            .map(|(m, z)| {
                if req.zero_draws || z.rank() == 0 {
                    return m.clone();
                }
                let draw = DVector::from_fn(z.rank(), |_, _| rng.sample::<f64, _>(StandardNormal));
                m + z.factor() * draw
            })
            .collect()
    }))
}

/// Per-step comparison of an ensemble against reference data on a region.
///
/// `err_mean` is the regional mean of `err(t) = (1/n) sum_k (X(t) - X_k(t))`
/// (reference minus simulation); `rel_l2` is `||err(t)|| / ||X(t)||` over the
/// region. `mc_se` is the standard error of `err_mean` from the spread of
/// the per-member regional differences, and `pred_se = sd sqrt(1 + 1/n)` the
/// spread expected when the reference is itself one draw of the simulated
/// process.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub times: Vec<f64>,
    pub err_mean: Vec<f64>,
    pub rel_l2: Vec<f64>,
    pub mc_se: Vec<f64>,
    pub pred_se: Vec<f64>,
    /// `err(t)` on the region nodes (mask order).
    pub err: Vec<DVector<f64>>,
    pub n: usize,
    pub region: (f64, f64, f64, f64),
}

/// Score simulated trajectories (all sampled at `times`, absolute days)
/// against the reference; each simulation time is matched to the nearest
/// reference time, which must lie within half a simulation step.
pub fn score_against_reference(
    sims: &[Vec<DVector<f64>>],
    times: &[f64],
    reference: &AnomalySeries,
    mask: &RegionMask,
) -> Result<ErrorReport> {
    reference.grid().same_as(mask.grid())?;
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    if sims.is_empty() {
        return Err(Error::arg("no simulations to score"));
    }
    for s in sims {
        if s.len() != times.len() {
            return Err(Error::dim("every simulation must have one state per time"));
        }
        if s.iter().any(|x| x.len() != reference.grid().len()) {
            return Err(Error::dim("simulation state length differs from reference grid"));
        }
    }
    let tol = if times.len() > 1 {
        0.5 * (times[1] - times[0]).abs()
    } else {
        0.5 * reference.dt()
    };
    let ref_times = reference.times();
    let mut ref_index = Vec::with_capacity(times.len());
    for &t in times {
        let pos = ref_times.partition_point(|&r| r < t);
        let cands = [pos.saturating_sub(1), pos.min(ref_times.len() - 1)];
        let best = cands
            .into_iter()
            .min_by(|&a, &b| (ref_times[a] - t).abs().total_cmp(&(ref_times[b] - t).abs()))
            .expect("two candidates");
        if (ref_times[best] - t).abs() > tol * (1.0 + 1e-9) {
            return Err(Error::TimeMisaligned { sim: t, tol });
        }
        ref_index.push(best);
    }

    let n = sims.len();
    let idx = mask.indices();
    let rows = exec::map_indexed(times.len(), |k| {
        let rcol = reference.data().column(ref_index[k]);
        let xref = DVector::from_iterator(idx.len(), idx.iter().map(|&i| rcol[i]));
        let mut err = DVector::zeros(idx.len());
        let mut member = Vec::with_capacity(n);
        for s in sims {
            let d = DVector::from_iterator(idx.len(), idx.iter().map(|&i| s[k][i]));
            let diff = &xref - d;
            member.push(diff.mean());
            err += diff;
        }
        err /= n as f64;
        let err_mean = err.mean();
        let sd = if n > 1 {
            (member.iter().map(|d| (d - err_mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let rn = xref.norm();
        let en = err.norm();
        let rel = if rn > 0.0 {
            en / rn
        } else if en == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        (
            err_mean,
            rel,
            sd / (n as f64).sqrt(),
            sd * (1.0 + 1.0 / n as f64).sqrt(),
            err,
        )
    });
    let mut rep = ErrorReport {
        times: times.to_vec(),
        err_mean: Vec::with_capacity(rows.len()),
        rel_l2: Vec::with_capacity(rows.len()),
        mc_se: Vec::with_capacity(rows.len()),
        pred_se: Vec::with_capacity(rows.len()),
        err: Vec::with_capacity(rows.len()),
        n,
        region: mask.bounds(),
    };
    for (e, r, se, pse, err) in rows {
        rep.err_mean.push(e);
        rep.rel_l2.push(r);
        rep.mc_se.push(se);
        rep.pred_se.push(pse);
        rep.err.push(err);
    }
    Ok(rep)
}

impl ErrorReport {
    /// `time_days,err_mean_degC,rel_l2`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time_days,err_mean_degC,rel_l2\n");
        for k in 0..self.times.len() {
            let _ = writeln!(s, "{},{:e},{:e}", self.times[k], self.err_mean[k], self.rel_l2[k]);
        }
        s
    }

    /// The CSV columns plus standard errors and ensemble size.
    pub fn to_summary_csv(&self) -> String {
        let mut s = String::from("time_days,err_mean_degC,rel_l2,mc_se_degC,pred_se_degC,n\n");
        for k in 0..self.times.len() {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{}",
                self.times[k], self.err_mean[k], self.rel_l2[k], self.mc_se[k], self.pred_se[k], self.n
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_summary_csv())?;
        Ok(())
    }

    /// Fraction of steps with `|err_mean| <= k * pred_se`.
    pub fn fraction_within(&self, k: f64) -> f64 {
        let hits = self
            .err_mean
            .iter()
            .zip(&self.pred_se)
            .filter(|(e, s)| e.abs() <= k * **s)
            .count();
        hits as f64 / self.times.len().max(1) as f64
    }
}

/// Plain-text matrix, one line per latitude row from north to south.
pub fn heatmap_text(field: &Field) -> String {
    let g = field.grid();
    let mut s = String::new();
    for j in (0..g.ny()).rev() {
        let row: Vec<String> = (0..g.nx()).map(|i| format!("{:e}", field.at(i, j))).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_heatmap_text(field: &Field, path: &Path) -> Result<()> {
    std::fs::write(path, heatmap_text(field))?;
    Ok(())
}

/// Binary 16-bit PGM (`P5`, maxval 65535, big-endian), north row first. The
/// header comment records the linear scaling
/// `value = lo + (hi - lo) * pixel / 65535`.
pub fn heatmap_pgm(field: &Field) -> Vec<u8> {
    let g = field.grid();
    let v = field.values();
    let lo = v.min();
    let hi = v.max();
    let span = hi - lo;
    let mut out = Vec::with_capacity(64 + 2 * g.len());
    let _ = write!(
        out,
        "P5\n# value = lo + (hi - lo) * pixel / 65535, lo = {lo:e}, hi = {hi:e}\n{} {}\n65535\n",
        g.nx(),
        g.ny()
    );
    for j in (0..g.ny()).rev() {
        for i in 0..g.nx() {
            let p = if span > 0.0 {
                ((field.at(i, j) - lo) / span * 65535.0).round() as u16
            } else {
                0
            };
            out.extend_from_slice(&p.to_be_bytes());
        }
    }
    out
}

pub fn write_heatmap_pgm(field: &Field, path: &Path) -> Result<()> {
    std::fs::write(path, heatmap_pgm(field))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use nalgebra::DMatrix;

    fn setup() -> (Grid, AnomalySeries, Vec<f64>) {
        let g = Grid::new(3, 2, 0.0, 2.0, 0.0, 1.0).unwrap();
        let data = DMatrix::from_fn(6, 4, |i, k| (i as f64) * 0.5 - k as f64);
        let times = vec![10.0, 11.0, 12.0, 13.0];
        (g, AnomalySeries::new(g, times.clone(), data).unwrap(), times)
    }

    fn reference_paths(series: &AnomalySeries) -> Vec<DVector<f64>> {
        (0..series.len()).map(|k| series.data().column(k).into_owned()).collect()
    }

    #[test]
    fn identical_simulation_scores_zero() {
        let (g, series, times) = setup();
        let sims = vec![reference_paths(&series)];
        let rep = score_against_reference(&sims, &times, &series, &RegionMask::whole(g)).unwrap();
        assert!(rep.err_mean.iter().all(|e| *e == 0.0));
        assert!(rep.rel_l2.iter().all(|e| *e == 0.0));
    }

    #[test]
    fn offset_sign_and_cancellation() {
        let (g, series, times) = setup();
        let base = reference_paths(&series);
        let plus: Vec<_> = base.iter().map(|x| x.add_scalar(1.0)).collect();
        let minus: Vec<_> = base.iter().map(|x| x.add_scalar(-1.0)).collect();
        let mask = RegionMask::whole(g);
        let rep = score_against_reference(&[plus.clone()], &times, &series, &mask).unwrap();
        assert!(rep.err_mean.iter().all(|e| (*e + 1.0).abs() < 1e-14));
        let rep = score_against_reference(&[plus, minus], &times, &series, &mask).unwrap();
        assert!(rep.err_mean.iter().all(|e| e.abs() < 1e-14));
        assert!(rep.rel_l2.iter().all(|e| e.abs() < 1e-14));
    }

    #[test]
    fn misaligned_times_rejected() {
        let (g, series, _) = setup();
        let sims = vec![vec![DVector::zeros(6); 2]];
        let r = score_against_reference(&sims, &[10.0, 10.4], &series, &RegionMask::whole(g));
        assert!(matches!(r, Err(Error::TimeMisaligned { .. })));
    }

    #[test]
    fn zero_draws_return_the_mean() {
        let means = vec![DVector::from_element(2, 1.0), DVector::from_element(2, -1.0)];
        let factors = vec![
            LowRankFactor::new(DMatrix::identity(2, 2)).unwrap(),
            LowRankFactor::empty(2),
        ];
        let mut req = RealizationRequest {
            means: &means,
            factors: &factors,
            seed: 1,
            count: 3,
            zero_draws: true,
        };
        let r = sample_realizations(&req).unwrap();
        assert!(r.iter().all(|p| p == &means));
        req.zero_draws = false;
        let r = sample_realizations(&req).unwrap();
        assert_ne!(r[0][0], means[0]);
        assert_eq!(r[0][1], means[1]);
    }

    #[test]
    fn csv_columns_and_pgm_layout() {
        let (g, series, times) = setup();
        let rep = score_against_reference(&[reference_paths(&series)], &times, &series, &RegionMask::whole(g))
            .unwrap();
        let csv = rep.to_csv();
        assert_eq!(csv.lines().next(), Some("time_days,err_mean_degC,rel_l2"));
        assert_eq!(csv.lines().count(), 5);
        let f = series.snapshot(0);
        let pgm = heatmap_pgm(&f);
        let header_end = pgm.windows(6).position(|w| w == b"65535\n").unwrap() + 6;
        assert_eq!(pgm.len() - header_end, 2 * 6);
        // north-west node first: node (0, 1), value 1.5 on the range [0, 2.5]
        assert_eq!(&pgm[header_end..header_end + 2], &39321u16.to_be_bytes());
        // north-east node (2, 1) holds the maximum
        assert_eq!(&pgm[header_end + 4..header_end + 6], &[0xff, 0xff]);
        assert_eq!(heatmap_text(&f).lines().count(), 2);
    }
}
