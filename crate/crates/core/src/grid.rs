//! Rectangular lon-lat grids, fields on them, region masks, the upwind
//! transport operator and Crank–Nicolson stepping.
//!
//! Node ordering is latitude-major: node `(i, j)` with longitude index `i`
//! (west to east) and latitude index `j` (south to north) has flat index
//! `j * nx + i`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, LinearSolver, Operator};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    nx: usize,
    ny: usize,
    lon_min: f64,
    lon_max: f64,
    lat_min: f64,
    lat_max: f64,
}

impl Grid {
    pub fn new(
        nx: usize,
        ny: usize,
        lon_min: f64,
        lon_max: f64,
        lat_min: f64,
        lat_max: f64,
    ) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::arg(format!("grid needs nx, ny >= 2 (got {nx}x{ny})")));
        }
        if ![lon_min, lon_max, lat_min, lat_max].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("grid bounds".into()));
        }
        if !(lon_max > lon_min) || !(lat_max > lat_min) {
            return Err(Error::arg("grid bounds must satisfy max > min"));
        }
        Ok(Self {
            nx,
            ny,
            lon_min,
            lon_max,
            lat_min,
            lat_max,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn lon_min(&self) -> f64 {
        self.lon_min
    }
    pub fn lon_max(&self) -> f64 {
        self.lon_max
    }
    pub fn lat_min(&self) -> f64 {
        self.lat_min
    }
    pub fn lat_max(&self) -> f64 {
        self.lat_max
    }
    pub fn dx(&self) -> f64 {
        (self.lon_max - self.lon_min) / (self.nx - 1) as f64
    }
    pub fn dy(&self) -> f64 {
        (self.lat_max - self.lat_min) / (self.ny - 1) as f64
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn lon(&self, i: usize) -> f64 {
        self.lon_min + i as f64 * self.dx()
    }

    pub fn lat(&self, j: usize) -> f64 {
        self.lat_min + j as f64 * self.dy()
    }

    /// `(lon, lat)` of every node in flat order.
    pub fn coordinates(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.push((self.lon(i), self.lat(j)));
            }
        }
        out
    }

    /// Trapezoidal cell weights (square degrees).
    pub fn cell_weights(&self) -> Vec<f64> {
        let (dx, dy) = (self.dx(), self.dy());
        let mut w = Vec::with_capacity(self.len());
        for j in 0..self.ny {
            let wy = if j == 0 || j == self.ny - 1 { 0.5 } else { 1.0 };
            for i in 0..self.nx {
                let wx = if i == 0 || i == self.nx - 1 { 0.5 } else { 1.0 };
                w.push(wx * wy * dx * dy);
            }
        }
        w
    }

    pub fn same_as(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "{}x{} [{}, {}]x[{}, {}] vs {}x{} [{}, {}]x[{}, {}]",
                self.nx,
                self.ny,
                self.lon_min,
                self.lon_max,
                self.lat_min,
                self.lat_max,
                other.nx,
                other.ny,
                other.lon_min,
                other.lon_max,
                other.lat_min,
                other.lat_max
            )));
        }
        Ok(())
    }
}

/// Scalar field on a grid, flat latitude-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: DVector<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: DVector<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::dim(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field value at node {k}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: DVector::zeros(grid.len()),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }
    pub fn into_values(self) -> DVector<f64> {
        self.values
    }
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }
}

/// Currents in degrees per day.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    grid: Grid,
    u_east: DVector<f64>,
    v_north: DVector<f64>,
}

impl VelocityField {
    pub fn new(grid: Grid, u_east: DVector<f64>, v_north: DVector<f64>) -> Result<Self> {
        if u_east.len() != grid.len() || v_north.len() != grid.len() {
            return Err(Error::dim("velocity components must match the grid size"));
        }
        if u_east.iter().chain(v_north.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("velocity component".into()));
        }
        Ok(Self {
            grid,
            u_east,
            v_north,
        })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            u_east: DVector::zeros(grid.len()),
            v_north: DVector::zeros(grid.len()),
        }
    }

    /// Currents given in m/s, converted with a spherical Earth of radius
    /// 6371 km; the zonal component is scaled by `1/cos(lat)`.
    pub fn from_meters_per_second(
        grid: Grid,
        u_ms: &DVector<f64>,
        v_ms: &DVector<f64>,
    ) -> Result<Self> {
        if u_ms.len() != grid.len() || v_ms.len() != grid.len() {
            return Err(Error::dim("velocity components must match the grid size"));
        }
        let mut u = DVector::zeros(grid.len());
        let mut v = DVector::zeros(grid.len());
        for j in 0..grid.ny() {
            let (zonal, meridional) = meters_per_second_to_degrees_per_day(grid.lat(j))?;
            for i in 0..grid.nx() {
                let k = grid.index(i, j);
                u[k] = u_ms[k] * zonal;
                v[k] = v_ms[k] * meridional;
            }
        }
        Self::new(grid, u, v)
    }

    pub fn to_meters_per_second(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        let g = self.grid;
        let mut u = DVector::zeros(g.len());
        let mut v = DVector::zeros(g.len());
        for j in 0..g.ny() {
            let (zonal, meridional) = meters_per_second_to_degrees_per_day(g.lat(j))?;
            for i in 0..g.nx() {
                let k = g.index(i, j);
                u[k] = self.u_east[k] / zonal;
                v[k] = self.v_north[k] / meridional;
            }
        }
        Ok((u, v))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn u_east(&self) -> &DVector<f64> {
        &self.u_east
    }
    pub fn v_north(&self) -> &DVector<f64> {
        &self.v_north
    }

    /// Largest `|u|/dx + |v|/dy` over the grid (per day).
    pub fn max_courant_rate(&self) -> f64 {
        let (dx, dy) = (self.grid.dx(), self.grid.dy());
        self.u_east
            .iter()
            .zip(self.v_north.iter())
            .map(|(u, v)| u.abs() / dx + v.abs() / dy)
            .fold(0.0, f64::max)
    }
}

/// Factors `(zonal, meridional)` converting m/s to degrees/day at `lat`.
pub fn meters_per_second_to_degrees_per_day(lat_deg: f64) -> Result<(f64, f64)> {
    let meridional = SECONDS_PER_DAY / EARTH_RADIUS_M * 180.0 / std::f64::consts::PI;
    let c = lat_deg.to_radians().cos();
    if c <= 1e-6 {
        return Err(Error::arg(format!("zonal conversion undefined at latitude {lat_deg}")));
    }
    Ok((meridional / c, meridional))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryRule {
    /// Zero anomaly enters through every boundary.
    #[default]
    ZeroInflowDirichlet,
    /// Periodic in longitude; zero-gradient walls in latitude.
    PeriodicLongitude,
}

impl std::str::FromStr for BoundaryRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero-inflow" | "zero-inflow-dirichlet" | "dirichlet" => {
                Ok(BoundaryRule::ZeroInflowDirichlet)
            }
            "periodic" | "periodic-in-longitude" | "periodic-longitude" => {
                Ok(BoundaryRule::PeriodicLongitude)
            }
            other => Err(Error::arg(format!("unknown boundary rule '{other}'"))),
        }
    }
}

/// First-order upwind discretization of the advection operator
/// `X -> -(u . grad) X`, the upwind side picked per node from the sign of
/// the local velocity. With zero velocity the operator is exactly zero.
pub fn assemble_transport_operator(
    grid: &Grid,
    vel: &VelocityField,
    bc: BoundaryRule,
) -> Result<CsrMatrix> {
    grid.same_as(vel.grid())?;
    if !vel.u_east.iter().chain(vel.v_north.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("velocity".into()));
    }
    let (nx, ny) = (grid.nx(), grid.ny());
    let (dx, dy) = (grid.dx(), grid.dy());
    let mut trip = Vec::with_capacity(5 * grid.len());
    for j in 0..ny {
        for i in 0..nx {
            let k = grid.index(i, j);
            let u = vel.u_east[k];
            let v = vel.v_north[k];
            if u != 0.0 {
                let rate = u.abs() / dx;
                let upwind = if u > 0.0 {
                    if i > 0 {
                        Some(i - 1)
                    } else if bc == BoundaryRule::PeriodicLongitude {
                        Some(nx - 1)
                    } else {
                        None
                    }
                } else if i + 1 < nx {
                    Some(i + 1)
                } else if bc == BoundaryRule::PeriodicLongitude {
                    Some(0)
                } else {
                    None
                };
                trip.push((k, k, -rate));
                if let Some(iu) = upwind {
                    trip.push((k, grid.index(iu, j), rate));
                }
            }
            if v != 0.0 {
                let rate = v.abs() / dy;
                let upwind = if v > 0.0 {
                    (j > 0).then(|| j - 1)
                } else {
                    (j + 1 < ny).then_some(j + 1)
                };
                match upwind {
                    Some(ju) => {
                        trip.push((k, k, -rate));
                        trip.push((k, grid.index(i, ju), rate));
                    }
                    None => {
                        if bc == BoundaryRule::ZeroInflowDirichlet {
                            trip.push((k, k, -rate));
                        }
                        // zero-gradient wall: inflow value equals the node value
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(grid.len(), grid.len(), &trip)
}

/// Factorized Crank–Nicolson propagator for `x' = A x`:
/// `(I - h/2 A) x_{n+1} = (I + h/2 A) x_n`.
#[derive(Debug, Clone)]
pub struct CrankNicolson {
    explicit: Operator,
    solver: LinearSolver,
    h: f64,
}

impl CrankNicolson {
    pub fn new(a: &Operator, h: f64) -> Result<Self> {
        a.check_square()?;
        if !h.is_finite() || h == 0.0 {
            return Err(Error::arg("Crank-Nicolson step must be finite and nonzero"));
        }
        let implicit = a.scale_add_identity(-0.5 * h, 1.0);
        let explicit = a.scale_add_identity(0.5 * h, 1.0);
        let solver = LinearSolver::factor(&implicit)?;
        Ok(Self {
            explicit,
            solver,
            h,
        })
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.explicit.dim()
    }

    pub fn step(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut rhs = self.explicit.apply(x);
        self.solver.solve_in_place(&mut rhs);
        rhs
    }

    /// Step with an additional source: `(I - h/2 A) x' = (I + h/2 A) x + h f`.
    pub fn step_forced(&self, x: &DVector<f64>, f: &DVector<f64>) -> DVector<f64> {
        let mut rhs = self.explicit.apply(x);
        rhs.axpy(self.h, f, 1.0);
        self.solver.solve_in_place(&mut rhs);
        rhs
    }

    /// Solve `(I - h/2 A) y = rhs` with the stored factorization.
    pub fn solve_implicit(&self, rhs: &mut DVector<f64>) {
        self.solver.solve_in_place(rhs);
    }

    pub fn apply_explicit(&self, x: &DVector<f64>) -> DVector<f64> {
        self.explicit.apply(x)
    }
}

/// One Crank–Nicolson step of `x' = A x`.
pub fn crank_nicolson_step(a: &Operator, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    if !(h > 0.0) {
        return Err(Error::arg("Crank-Nicolson step must be positive"));
    }
    if x.len() != a.dim() {
        return Err(Error::dim("state length differs from operator size"));
    }
    Ok(CrankNicolson::new(a, h)?.step(x))
}

/// Lon-lat box and the grid nodes inside it (inclusive bounds), stored in
/// flat-index order (south to north, west to east).
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    grid: Grid,
    lon_lo: f64,
    lon_hi: f64,
    lat_lo: f64,
    lat_hi: f64,
    indices: Vec<usize>,
}

impl RegionMask {
    pub fn new(grid: Grid, lon_lo: f64, lon_hi: f64, lat_lo: f64, lat_hi: f64) -> Self {
        let eps = 1e-9 * (grid.dx().max(grid.dy()));
        let mut indices = Vec::new();
        for j in 0..grid.ny() {
            let lat = grid.lat(j);
            if lat < lat_lo - eps || lat > lat_hi + eps {
                continue;
            }
            for i in 0..grid.nx() {
                let lon = grid.lon(i);
                if lon >= lon_lo - eps && lon <= lon_hi + eps {
                    indices.push(grid.index(i, j));
                }
            }
        }
        Self {
            grid,
            lon_lo,
            lon_hi,
            lat_lo,
            lat_hi,
            indices,
        }
    }

    pub fn whole(grid: Grid) -> Self {
        Self::new(grid, grid.lon_min, grid.lon_max, grid.lat_min, grid.lat_max)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (self.lon_lo, self.lon_hi, self.lat_lo, self.lat_hi)
    }
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn restrict(&self, values: &DVector<f64>) -> Result<DVector<f64>> {
        if values.len() != self.grid.len() {
            return Err(Error::dim("vector length differs from mask grid"));
        }
        if self.indices.is_empty() {
            return Err(Error::EmptyMask);
        }
        Ok(DVector::from_iterator(
            self.indices.len(),
            self.indices.iter().map(|&k| values[k]),
        ))
    }
}

pub fn restrict_to_region(field: &Field, mask: &RegionMask) -> Result<DVector<f64>> {
    field.grid().same_as(mask.grid())?;
    mask.restrict(field.values())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(n: usize) -> Grid {
        Grid::new(n, n, 0.0, (n - 1) as f64, 0.0, (n - 1) as f64).unwrap()
    }

    #[test]
    fn zero_velocity_gives_zero_operator() {
        let g = unit_grid(4);
        let a = assemble_transport_operator(&g, &VelocityField::zeros(g), BoundaryRule::default())
            .unwrap();
        assert_eq!(a.nnz(), 0);
    }

    #[test]
    fn eastward_flow_is_upwinded_from_the_west() {
        let g = unit_grid(3);
        let vel = VelocityField::new(g, DVector::from_element(9, 1.0), DVector::zeros(9)).unwrap();
        let a = assemble_transport_operator(&g, &vel, BoundaryRule::ZeroInflowDirichlet).unwrap();
        let c = g.index(1, 1);
        assert_eq!(a.get(c, c), -1.0);
        assert_eq!(a.get(c, g.index(0, 1)), 1.0);
        assert_eq!(a.row(c).0.len(), 2);
        // western boundary node: inflow dropped
        let w = g.index(0, 1);
        assert_eq!(a.get(w, w), -1.0);
        assert_eq!(a.row(w).0.len(), 1);
    }

    #[test]
    fn westward_and_southward_flow() {
        let g = unit_grid(3);
        let vel =
            VelocityField::new(g, DVector::from_element(9, -2.0), DVector::from_element(9, -0.5))
                .unwrap();
        let a = assemble_transport_operator(&g, &vel, BoundaryRule::ZeroInflowDirichlet).unwrap();
        let c = g.index(1, 1);
        assert_eq!(a.get(c, c), -2.5);
        assert_eq!(a.get(c, g.index(2, 1)), 2.0);
        assert_eq!(a.get(c, g.index(1, 2)), 0.5);
        assert!(a.max_row_nnz() <= 5);
    }

    #[test]
    fn periodic_rows_sum_to_zero() {
        let g = Grid::new(6, 4, 0.0, 5.0, -1.5, 1.5).unwrap();
        let vel =
            VelocityField::new(g, DVector::from_element(24, 0.7), DVector::from_element(24, -0.3))
                .unwrap();
        let a = assemble_transport_operator(&g, &vel, BoundaryRule::PeriodicLongitude).unwrap();
        for s in a.row_sums() {
            assert!(s.abs() < 1e-15);
        }
    }

    #[test]
    fn grid_mismatch_rejected() {
        let g = unit_grid(3);
        let other = unit_grid(4);
        assert!(matches!(
            assemble_transport_operator(&g, &VelocityField::zeros(other), BoundaryRule::default()),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn scalar_crank_nicolson_ratio() {
        let a = Operator::Dense(nalgebra::DMatrix::from_element(1, 1, -1.0));
        let x = crank_nicolson_step(&a, &DVector::from_element(1, 1.0), 0.1).unwrap();
        assert!((x[0] - 0.95 / 1.05).abs() < 1e-15);
    }

    #[test]
    fn crank_nicolson_zero_operator_is_identity() {
        let a = Operator::Sparse(CsrMatrix::zeros(3, 3));
        let x = DVector::from_vec(vec![1.0, -2.0, 3.5]);
        assert_eq!(crank_nicolson_step(&a, &x, 0.3).unwrap(), x);
    }

    #[test]
    fn region_mask_order_and_errors() {
        let g = unit_grid(4);
        let f = Field::new(g, DVector::from_fn(16, |k, _| k as f64)).unwrap();
        let corner = RegionMask::new(g, 0.0, 1.0, 0.0, 1.0);
        let v = restrict_to_region(&f, &corner).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 1.0, 4.0, 5.0]);
        let all = restrict_to_region(&f, &RegionMask::whole(g)).unwrap();
        assert_eq!(&all, f.values());
        let outside = RegionMask::new(g, 10.0, 12.0, 10.0, 12.0);
        assert!(matches!(restrict_to_region(&f, &outside), Err(Error::EmptyMask)));
    }

    #[test]
    fn unit_conversion_at_equator() {
        let (z, m) = meters_per_second_to_degrees_per_day(0.0).unwrap();
        let expected = 86400.0 / 6_371_000.0 * 180.0 / std::f64::consts::PI;
        assert!((z - expected).abs() < 1e-12 && (m - expected).abs() < 1e-12);
        let (z60, _) = meters_per_second_to_degrees_per_day(60.0).unwrap();
        assert!((z60 - 2.0 * expected).abs() < 1e-9);
    }
}
