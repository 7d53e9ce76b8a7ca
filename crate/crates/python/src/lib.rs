//! Python bindings. Points are passed as sequences of `(x, y, z)` tuples and
//! poses as `(x, y, z, yaw, pitch, roll)` tuples with angles in radians.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use lidarloc::geometry::{pose_to_transform, transform_to_pose, Pose, Vec3};
use lidarloc::io::{generate_world, CityLayout, SyntheticWorld};
use lidarloc::pipeline::{
    match_global, metrics_from_trace, s2m_task, MapArtifacts, Pipeline, PipelineConfig, RunReport, S2mOutcome,
    StepOutput,
};
use lidarloc::pointcloud::{voxel_downsample, PointCloud};
use lidarloc::rpe::{gicp_align, RelativePose};

type PyPose = (f64, f64, f64, f64, f64, f64);

fn err(e: lidarloc::Error) -> PyErr {
    match e {
        lidarloc::Error::InvalidArgument(_) | lidarloc::Error::Format { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn cloud(points: Vec<(f64, f64, f64)>) -> PointCloud {
    PointCloud::new(points.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect())
}

fn points(c: &PointCloud) -> Vec<(f64, f64, f64)> {
    c.points.iter().map(|p| (p[0], p[1], p[2])).collect()
}

fn pose(p: PyPose) -> Pose {
    Pose::from_xyz_ypr(p.0, p.1, p.2, p.3, p.4, p.5)
}

fn tuple(p: &Pose) -> PyPose {
    (p.p[0], p.p[1], p.p[2], p.zeta[0], p.zeta[1], p.zeta[2])
}

/// Localization parameters. Built from TOML text; unspecified keys keep
/// their defaults.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: PipelineConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(text) => PipelineConfig::from_toml_str(text).map_err(err)?,
            None => PipelineConfig::default(),
        };
        Ok(Self { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    #[getter]
    fn n_particles(&self) -> usize {
        self.inner.n_particles
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn grid_delta(&self) -> f64 {
        self.inner.grid_delta
    }

    #[getter]
    fn sim_s2m_latency(&self) -> u64 {
        self.inner.sim_s2m_latency
    }

    fn __repr__(&self) -> String {
        format!("Config(n_particles={}, seed={}, grid_delta={})", self.inner.n_particles, self.inner.seed, self.inner.grid_delta)
    }
}

/// A point cloud map with its distance grid and match pyramid.
#[pyclass(name = "Map", frozen)]
struct PyMap {
    art: Arc<MapArtifacts>,
    cfg: PipelineConfig,
}

#[pymethods]
impl PyMap {
    #[new]
    #[pyo3(signature = (points, config = None))]
    fn new(py: Python<'_>, points: Vec<(f64, f64, f64)>, config: Option<PyConfig>) -> PyResult<Self> {
        let cfg = config.map(|c| c.inner).unwrap_or_default();
        let map = cloud(points);
        let art = py.detach(|| MapArtifacts::build(&map, &cfg)).map_err(err)?;
        Ok(Self { art: Arc::new(art), cfg })
    }

    fn __len__(&self) -> usize {
        self.art.map.len()
    }

    /// Approximate distance from a point to the map, capped at `d_max`.
    fn lookup(&self, x: f64, y: f64, z: f64) -> f64 {
        self.art.grid.lookup(&Vec3::new(x, y, z))
    }

    /// Log-likelihood of a sensor-frame scan seen from `pose`.
    fn log_likelihood(&self, scan: Vec<(f64, f64, f64)>, pose: PyPose) -> f64 {
        self.art.grid.log_likelihood_with(&pose_to_transform(&self::pose(pose)), &cloud(scan).points)
    }

    /// Matches a scan against the whole map; `None` when no pose was found.
    fn match_global(&self, py: Python<'_>, scan: Vec<(f64, f64, f64)>) -> PyResult<Option<PyPose>> {
        let scan = voxel_downsample(&cloud(scan), &Vec3::repeat(self.cfg.voxel_res), 0).map_err(err)?;
        Ok(match py.detach(|| match_global(&self.art, &self.cfg, &scan)) {
            S2mOutcome::Matched { refined, .. } => Some(tuple(&refined)),
            S2mOutcome::Failed(_) => None,
        })
    }

    /// Matches a scan in the configured window around `seed`.
    fn match_around(&self, py: Python<'_>, seed: PyPose, scan: Vec<(f64, f64, f64)>) -> PyResult<Option<PyPose>> {
        let scan = voxel_downsample(&cloud(scan), &Vec3::repeat(self.cfg.voxel_res), 0).map_err(err)?;
        let seed = pose(seed);
        Ok(match py.detach(|| s2m_task(&self.art, &self.cfg, &seed, &scan)) {
            S2mOutcome::Matched { refined, .. } => Some(tuple(&refined)),
            S2mOutcome::Failed(_) => None,
        })
    }
}

/// The particle filter with delayed scan-to-map corrections.
#[pyclass(name = "Localizer", unsendable)]
struct PyLocalizer {
    inner: Pipeline,
}

fn step_dict<'py>(py: Python<'py>, out: &StepOutput) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("step", out.step)?;
    d.set_item("pose", tuple(&out.estimate.mean_state.pose()))?;
    d.set_item("pos_std", out.estimate.pos_std)?;
    d.set_item("ess", out.ess)?;
    let events: Vec<String> =
        out.events.iter().map(|e| format!("{e:?}")).collect();
    d.set_item("events", events)?;
    Ok(d)
}

#[pymethods]
impl PyLocalizer {
    #[new]
    #[pyo3(signature = (map, config = None, live = false))]
    fn new(map: &PyMap, config: Option<PyConfig>, live: bool) -> PyResult<Self> {
        let cfg = config.map(|c| c.inner).unwrap_or_else(|| map.cfg.clone());
        let inner = if live { Pipeline::new_live(map.art.clone(), cfg) } else { Pipeline::new(map.art.clone(), cfg) };
        Ok(Self { inner: inner.map_err(err)? })
    }

    /// Processes one sensor-frame scan and returns the step summary.
    fn step<'py>(&mut self, py: Python<'py>, scan: Vec<(f64, f64, f64)>) -> PyResult<Bound<'py, PyDict>> {
        let out = self.inner.step(&cloud(scan)).map_err(err)?;
        step_dict(py, &out)
    }

    /// Like `step`, with the motion since the previous scan supplied as a pose.
    fn step_with_relative<'py>(
        &mut self,
        py: Python<'py>,
        scan: Vec<(f64, f64, f64)>,
        relative: PyPose,
    ) -> PyResult<Bound<'py, PyDict>> {
        let rel = RelativePose::exact(pose_to_transform(&pose(relative)));
        let out = self.inner.step_with_relative(&cloud(scan), rel).map_err(err)?;
        step_dict(py, &out)
    }

    /// Weighted particle poses as `(pose, weight)` pairs.
    fn particles(&self) -> Vec<(PyPose, f64)> {
        let ps = self.inner.particles();
        ps.states.iter().zip(ps.weights()).map(|(s, w)| (tuple(&s.pose()), w)).collect()
    }

    #[getter]
    fn localized(&self) -> bool {
        self.inner.monitor().localized
    }
}

/// Generates a synthetic city. Returns a dict with `map` (points), `scans`
/// (sensor-frame point lists) and `truth` (poses).
#[pyfunction]
#[pyo3(signature = (extent = 200.0, steps = 30, seed = 0, density = None))]
fn generate_city<'py>(
    py: Python<'py>,
    extent: f64,
    steps: usize,
    seed: u64,
    density: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let layout = CityLayout { extent, steps, ..CityLayout::default() };
    let mut world = SyntheticWorld::city(&layout, seed).map_err(err)?;
    if let Some(d) = density {
        world.density = d;
    }
    let gen = py.detach(|| generate_world(&world, seed)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("map", points(&gen.map))?;
    d.set_item("scans", gen.scans.iter().map(points).collect::<Vec<_>>())?;
    d.set_item("truth", gen.truth.iter().map(tuple).collect::<Vec<_>>())?;
    Ok(d)
}

/// Aligns `source` onto `target`. Returns the pose of the source frame in the
/// target frame and whether the solver converged.
#[pyfunction]
#[pyo3(signature = (source, target, init = None, config = None))]
fn align(
    source: Vec<(f64, f64, f64)>,
    target: Vec<(f64, f64, f64)>,
    init: Option<PyPose>,
    config: Option<PyConfig>,
) -> PyResult<(PyPose, bool)> {
    let cfg = config.map(|c| c.inner).unwrap_or_default().rpe_gicp();
    let init = pose_to_transform(&init.map(pose).unwrap_or_default());
    let rel = gicp_align(&cloud(source), &cloud(target), &init, &cfg).map_err(err)?;
    Ok((tuple(&transform_to_pose(&rel.t).pose), rel.converged))
}

/// Metrics of an NDJSON run report, recomputed from its step records.
#[pyfunction]
fn report_metrics<'py>(py: Python<'py>, ndjson: &str) -> PyResult<Bound<'py, PyDict>> {
    let report = RunReport::from_ndjson(ndjson).map_err(err)?;
    let m = metrics_from_trace(&report.steps);
    let d = PyDict::new(py);
    d.set_item("a", m.a)?;
    d.set_item("b", m.b)?;
    d.set_item("c", m.c)?;
    d.set_item("d", m.d)?;
    d.set_item("e", m.e)?;
    d.set_item("resets", m.resets)?;
    d.set_item("post_loc_error", m.post_loc_error)?;
    Ok(d)
}

#[pymodule]
fn pylidarloc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyMap>()?;
    m.add_class::<PyLocalizer>()?;
    m.add_function(wrap_pyfunction!(generate_city, m)?)?;
    m.add_function(wrap_pyfunction!(align, m)?)?;
    m.add_function(wrap_pyfunction!(report_metrics, m)?)?;
    Ok(())
}
