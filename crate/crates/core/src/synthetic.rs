//! Parametric shape families with known generating factors.
//!
//! Every mesh is the same subdivided icosahedron pushed through a factor-dependent map, so
//! all subjects share connectivity and vertex `k` is the ground-truth correspondence of
//! vertex `k` in every other subject.

use std::collections::HashMap;
use std::fmt::Write as _;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::geom::{self, Point3};
use crate::mesh::{Cohort, Split, SurfaceMesh};
use crate::random::{derive_seed, normal, rng_from_seed, uniform};
use crate::{Error, Result, Scalar};

const STREAM_FACTORS: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_SPLIT: u64 = 3;
const STREAM_SHUFFLE: u64 = 4;
const STREAM_GROUPS: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Superellipsoid,
    BumpedEllipsoid,
}

/// Inclusive sampling range per factor; `(v, v)` pins the factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorRanges {
    pub scale_x: (f64, f64),
    pub scale_y: (f64, f64),
    pub scale_z: (f64, f64),
    /// Superellipsoid exponent applied to each unit-sphere coordinate; 1 gives an ellipsoid.
    pub exponent: (f64, f64),
}

impl Default for FactorRanges {
    fn default() -> Self {
        Self { scale_x: (1.0, 1.0), scale_y: (1.0, 1.0), scale_z: (1.0, 1.0), exponent: (1.0, 1.0) }
    }
}

impl FactorRanges {
    fn named(&self) -> [(&'static str, (f64, f64)); 4] {
        [("scale_x", self.scale_x), ("scale_y", self.scale_y), ("scale_z", self.scale_z), ("exponent", self.exponent)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpSpec {
    /// Direction on the unit sphere; normalised on use.
    pub center: [f64; 3],
    /// Chord distance on the unit sphere beyond which the bump is zero.
    pub radius: f64,
    pub amplitude_range: (f64, f64),
}

impl BumpSpec {
    fn unit_center(&self) -> [f64; 3] {
        geom::scale(self.center, 1.0 / geom::norm(self.center))
    }

    /// Gaussian profile with standard deviation `radius / 3`, truncated at `radius`.
    pub fn weight(&self, u: [f64; 3]) -> f64 {
        let d = geom::dist(u, self.unit_center());
        if d > self.radius {
            return 0.0;
        }
        let s = self.radius / 3.0;
        (-(d * d) / (2.0 * s * s)).exp()
    }

    pub fn contains(&self, u: [f64; 3]) -> bool {
        geom::dist(u, self.unit_center()) <= self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseRegion {
    #[default]
    Everywhere,
    /// Only vertices inside the bump radius are perturbed.
    BumpOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub family: ShapeFamily,
    pub n_shapes: usize,
    pub factor_ranges: FactorRanges,
    pub bump: Option<BumpSpec>,
    /// Vertex noise std in mesh units.
    pub noise_sigma: f64,
    /// When set, each subject draws its own noise std from this range instead.
    pub noise_sigma_range: Option<(f64, f64)>,
    pub noise_region: NoiseRegion,
    pub subdivision: usize,
    /// Train, validation and test fractions.
    pub split_fractions: [f64; 3],
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            family: ShapeFamily::Superellipsoid,
            n_shapes: 40,
            factor_ranges: FactorRanges {
                scale_x: (0.8, 1.2),
                scale_y: (0.8, 1.2),
                scale_z: (0.8, 1.2),
                exponent: (1.0, 1.0),
            },
            bump: None,
            noise_sigma: 0.0,
            noise_sigma_range: None,
            noise_region: NoiseRegion::Everywhere,
            subdivision: 3,
            split_fractions: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_shapes == 0 {
            return Err(Error::invalid("cohort spec: n_shapes must be >= 1"));
        }
        for (name, (lo, hi)) in self.factor_ranges.named() {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi || lo <= 0.0 {
                return Err(Error::invalid(format!(
                    "cohort spec: {name} range ({lo}, {hi}) must be positive with min <= max"
                )));
            }
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid("cohort spec: noise_sigma must be >= 0"));
        }
        if let Some((lo, hi)) = self.noise_sigma_range {
            if !(lo >= 0.0) || !hi.is_finite() || lo > hi {
                return Err(Error::invalid("cohort spec: noise_sigma_range must satisfy 0 <= min <= max"));
            }
        }
        match (&self.bump, self.family) {
            (None, ShapeFamily::BumpedEllipsoid) => {
                return Err(Error::invalid("cohort spec: bumped_ellipsoid needs a bump"));
            }
            (Some(b), _) => {
                if !(b.radius > 0.0) || !b.radius.is_finite() {
                    return Err(Error::invalid("cohort spec: bump radius must be positive"));
                }
                if !(geom::norm(b.center) > 0.0) || !b.center.iter().all(|c| c.is_finite()) {
                    return Err(Error::invalid("cohort spec: bump center must be a non-zero direction"));
                }
                let (lo, hi) = b.amplitude_range;
                if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                    return Err(Error::invalid("cohort spec: bump amplitude range must satisfy min <= max"));
                }
            }
            _ => {}
        }
        if self.noise_region == NoiseRegion::BumpOnly && self.bump.is_none() {
            return Err(Error::invalid("cohort spec: bump_only noise needs a bump"));
        }
        let f = self.split_fractions;
        if f.iter().any(|&x| !(x >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("cohort spec: split fractions must be non-negative and sum to 1"));
        }
        Ok(())
    }

    fn uses_bump(&self) -> bool {
        self.family == ShapeFamily::BumpedEllipsoid && self.bump.is_some()
    }
}

/// Ground-truth generating factors, one row per shape.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTable {
    pub subject_ids: Vec<String>,
    pub names: Vec<String>,
    /// `n_shapes × names.len()`
    pub values: Array2<f64>,
    /// Names of factors whose range is non-degenerate.
    pub free: Vec<String>,
    pub amplitude_range: Option<(f64, f64)>,
}

impl FactorTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.names.iter().position(|n| n == name)?;
        Some(self.values.column(c).to_vec())
    }

    /// Number of shape factors (noise excluded) that actually vary.
    pub fn free_factor_count(&self) -> usize {
        self.free.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("subject_id");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (i, id) in self.subject_ids.iter().enumerate() {
            out.push_str(id);
            for v in self.values.row(i) {
                write!(out, ",{v}").expect("write to string");
            }
            out.push('\n');
        }
        out
    }
}

/// Unit icosphere: a regular icosahedron subdivided `level` times with vertices pushed onto
/// the sphere. Level `l` has `10·4^l + 2` vertices.
pub fn icosphere(level: usize) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<[f64; 3]> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|&v| geom::scale(v, 1.0 / geom::norm(v)))
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<[f64; 3]>| -> usize {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                let m = geom::scale(geom::add(verts[a], verts[b]), 0.5);
                verts.push(geom::scale(m, 1.0 / geom::norm(m)));
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts, faces)
}

fn spow(x: f64, e: f64) -> f64 {
    if e == 1.0 {
        x
    } else {
        x.signum() * x.abs().powf(e)
    }
}

/// Maps a unit-sphere point through the shape factors.
fn shape_point(u: [f64; 3], scales: [f64; 3], exponent: f64, bump: Option<(&BumpSpec, f64)>) -> [f64; 3] {
    let mut p = [scales[0] * spow(u[0], exponent), scales[1] * spow(u[1], exponent), scales[2] * spow(u[2], exponent)];
    if let Some((b, amp)) = bump {
        if amp != 0.0 {
            let w = b.weight(u);
            if w > 0.0 {
                p = geom::add(p, geom::scale(u, amp * w));
            }
        }
    }
    p
}

fn assign_splits(n: usize, fractions: [f64; 3], seed: u64) -> Vec<Split> {
    let n_val = (fractions[1] * n as f64).round() as usize;
    let n_test = (fractions[2] * n as f64).round() as usize;
    let (n_val, n_test) = if n_val + n_test >= n {
        // keep at least one training shape
        let n_test = n_test.min(n - 1);
        (n_val.min(n - 1 - n_test), n_test)
    } else {
        (n_val, n_test)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(seed, STREAM_SPLIT, 0)));
    let mut splits = vec![Split::Train; n];
    for &i in &order[..n_val] {
        splits[i] = Split::Val;
    }
    for &i in &order[n_val..n_val + n_test] {
        splits[i] = Split::Test;
    }
    splits
}

/// Generates the cohort and its factor table. Deterministic in `spec.seed`.
pub fn generate_cohort<T: Scalar>(spec: &CohortSpec) -> Result<(Cohort<T>, FactorTable)> {
    spec.validate()?;
    let (sphere, faces) = icosphere(spec.subdivision);
    let bumped = spec.uses_bump();
    let mut names: Vec<String> = spec.factor_ranges.named().iter().map(|(n, _)| n.to_string()).collect();
    let mut free: Vec<String> =
        spec.factor_ranges.named().iter().filter(|(_, (lo, hi))| hi > lo).map(|(n, _)| n.to_string()).collect();
    if bumped {
        names.push("bump_amplitude".into());
        let (lo, hi) = spec.bump.as_ref().map(|b| b.amplitude_range).unwrap_or_default();
        if hi > lo {
            free.push("bump_amplitude".into());
        }
    }
    names.push("noise_sigma".into());
    let mut values = Array2::zeros((spec.n_shapes, names.len()));
    let mut meshes = Vec::with_capacity(spec.n_shapes);
    let mut ids = Vec::with_capacity(spec.n_shapes);
    let fr = &spec.factor_ranges;
    for i in 0..spec.n_shapes {
        let mut rng = rng_from_seed(derive_seed(spec.seed, STREAM_FACTORS, i as u64));
        let scales: [f64; 3] = [
            uniform(&mut rng, fr.scale_x.0, fr.scale_x.1),
            uniform(&mut rng, fr.scale_y.0, fr.scale_y.1),
            uniform(&mut rng, fr.scale_z.0, fr.scale_z.1),
        ];
        let exponent: f64 = uniform(&mut rng, fr.exponent.0, fr.exponent.1);
        let mut row = vec![scales[0], scales[1], scales[2], exponent];
        let bump = if bumped {
            let b = spec.bump.as_ref().expect("validated");
            let amp: f64 = uniform(&mut rng, b.amplitude_range.0, b.amplitude_range.1);
            row.push(amp);
            Some((b, amp))
        } else {
            None
        };
        let noise = match spec.noise_sigma_range {
            Some((lo, hi)) => uniform(&mut rng, lo, hi),
            None => spec.noise_sigma,
        };
        row.push(noise);
        values.row_mut(i).assign(&ndarray::Array1::from(row));

        let mut noise_rng = rng_from_seed(derive_seed(spec.seed, STREAM_NOISE, i as u64));
        let vertices: Vec<Point3<T>> = sphere
            .iter()
            .map(|&u| {
                let mut p = shape_point(u, scales, exponent, bump);
                let perturb = match spec.noise_region {
                    NoiseRegion::Everywhere => true,
                    NoiseRegion::BumpOnly => spec.bump.as_ref().is_some_and(|b| b.contains(u)),
                };
                if noise > 0.0 && perturb {
                    for c in &mut p {
                        *c += noise * normal::<f64, _>(&mut noise_rng);
                    }
                }
                [T::lit(p[0]), T::lit(p[1]), T::lit(p[2])]
            })
            .collect();
        let id = format!("shape_{i:03}");
        meshes.push(SurfaceMesh::new(vertices, faces.clone(), id.clone())?);
        ids.push(id);
    }
    let splits = assign_splits(spec.n_shapes, spec.split_fractions, spec.seed);
    let cohort = Cohort::new(meshes, splits)?;
    let amplitude_range = if bumped { spec.bump.as_ref().map(|b| b.amplitude_range) } else { None };
    Ok((cohort, FactorTable { subject_ids: ids, names, values, free, amplitude_range }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Control,
    Pathology,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Control => "control",
            Group::Pathology => "pathology",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupRule {
    /// Pathology iff the bump amplitude exceeds the midpoint of the amplitude range.
    BumpAmplitudeThreshold,
}

pub fn assign_groups(table: &FactorTable, rule: GroupRule) -> Result<Vec<Group>> {
    match rule {
        GroupRule::BumpAmplitudeThreshold => {
            let amps = table
                .column("bump_amplitude")
                .ok_or_else(|| Error::invalid("assign_groups: factor table has no bump_amplitude column"))?;
            let (lo, hi) = table
                .amplitude_range
                .ok_or_else(|| Error::invalid("assign_groups: factor table has no amplitude range"))?;
            let threshold = 0.5 * (lo + hi);
            Ok(threshold_groups(&amps, threshold))
        }
    }
}

/// `pathology` iff `amplitude > threshold`.
pub fn threshold_groups(amplitudes: &[f64], threshold: f64) -> Vec<Group> {
    amplitudes.iter().map(|&a| if a > threshold { Group::Pathology } else { Group::Control }).collect()
}

/// Bumped cohort with exactly `n_control` controls at the lowest amplitude of the range
/// followed by `n_pathology` subjects drawn above the range midpoint. Labels agree with
/// [`GroupRule::BumpAmplitudeThreshold`] and are written into the cohort.
pub fn generate_two_group_cohort<T: Scalar>(
    spec: &CohortSpec,
    n_control: usize,
    n_pathology: usize,
) -> Result<(Cohort<T>, FactorTable, Vec<Group>)> {
    let bump = spec
        .bump
        .as_ref()
        .filter(|_| spec.uses_bump())
        .ok_or_else(|| Error::invalid("two-group cohort: spec needs the bumped_ellipsoid family and a bump"))?;
    if n_control == 0 || n_pathology == 0 {
        return Err(Error::invalid("two-group cohort: both groups need at least one subject"));
    }
    let (lo, hi) = bump.amplitude_range;
    if !(hi > lo) {
        return Err(Error::invalid("two-group cohort: amplitude_range must be non-degenerate"));
    }
    let part = |n: usize, range: (f64, f64), seed: u64| {
        let mut s = spec.clone();
        s.n_shapes = n;
        s.seed = seed;
        s.bump = Some(BumpSpec { amplitude_range: range, ..bump.clone() });
        generate_cohort::<T>(&s)
    };
    let (control, ct) = part(n_control, (lo, lo), derive_seed(spec.seed, STREAM_GROUPS, 0))?;
    let (pathology, pt) = part(n_pathology, (0.5 * (lo + hi), hi), derive_seed(spec.seed, STREAM_GROUPS, 1))?;
    let n = n_control + n_pathology;
    let ids: Vec<String> = (0..n).map(|i| format!("shape_{i:03}")).collect();
    let mut meshes = control.meshes;
    meshes.extend(pathology.meshes);
    for (m, id) in meshes.iter_mut().zip(&ids) {
        m.subject_id = id.clone();
    }
    let mut values = Array2::zeros((n, ct.names.len()));
    values.slice_mut(ndarray::s![..n_control, ..]).assign(&ct.values);
    values.slice_mut(ndarray::s![n_control.., ..]).assign(&pt.values);
    let mut free: Vec<String> = ct.free.clone();
    free.push("bump_amplitude".into());
    let table = FactorTable { subject_ids: ids, names: ct.names, values, free, amplitude_range: Some((lo, hi)) };
    let groups: Vec<Group> = std::iter::repeat_n(Group::Control, n_control)
        .chain(std::iter::repeat_n(Group::Pathology, n_pathology))
        .collect();
    let mut cohort = Cohort::new(meshes, assign_splits(n, spec.split_fractions, spec.seed))?;
    label_cohort(&mut cohort, &groups)?;
    Ok((cohort, table, groups))
}

/// Writes group labels into the cohort.
pub fn label_cohort<T: Scalar>(cohort: &mut Cohort<T>, groups: &[Group]) -> Result<()> {
    if groups.len() != cohort.len() {
        return Err(Error::invalid("label_cohort: one group per mesh required"));
    }
    cohort.group_labels = groups.iter().map(|g| Some(g.as_str().to_string())).collect();
    Ok(())
}

/// Randomly reorders a mesh's vertices. Returns the mesh and `perm`, where new vertex `i`
/// is old vertex `perm[i]`.
pub fn shuffle_vertices<T: Scalar>(mesh: &SurfaceMesh<T>, seed: u64) -> Result<(SurfaceMesh<T>, Vec<usize>)> {
    let mut perm: Vec<usize> = (0..mesh.num_vertices()).collect();
    perm.shuffle(&mut rng_from_seed(derive_seed(seed, STREAM_SHUFFLE, 0)));
    Ok((mesh.permuted(&perm)?, perm))
}
