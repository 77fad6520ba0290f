//! Multi-scale structure analysis, clause checkers for the inverse theorems,
//! the energy-flattening experiments and the discretized FUP evaluator.
//!
//! Checkers never search: they take witnesses and evaluate each clause as a
//! predicate. The searching lives in [`analyze_structure`].

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, AffineFlat};
use crate::grid::{DyadicCube, GridSet, Uniformity};
use crate::measures::{GridMeasure, Weight};
use crate::sumsets::{self, EnergyResult};
use crate::uniformize;

pub const STRUCTURE_SCHEMA: &str = "structure-report/1";

/// Comparison slack for clauses that involve irrational powers of two.
const LOG_TOL: f64 = 1e-12;

/// Structure of one cube `I` of `D_{sL}(A)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeStructure {
    pub cube: DyadicCube,
    pub children: usize,
    /// Certified `D_L` of the child set.
    pub dimension: usize,
    /// `k_s`-flat fitted to `A ∩ I`, in global coordinates.
    pub flat: AffineFlat,
    /// Largest distance from `A ∩ I` to `flat`, in global units.
    pub slack: f64,
    /// `slack <= (sqrt(d)+1) 2^{-(s+1)L}`.
    pub contained: bool,
    /// `slack <= 2^{-(s+1)L}`.
    pub contained_strict: bool,
    /// The `(d - k_s)`-dimensional subspace minimizing the projected covering number.
    pub projection_subspace: AffineFlat,
    /// `|pi_W (A ∩ I)|_{2^{-(s+1)L}}`, measured after renormalizing `I` to the unit cube.
    pub projection_covering: usize,
    /// `R_s / (2^{(k_s - delta) L} |pi_W (A ∩ I)|)`.
    pub saturation_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleStructure {
    pub scale: u32,
    pub k: usize,
    pub branching: u64,
    /// `log2 R_s >= L (k_s - delta)`.
    pub branching_ok: bool,
    pub contained: bool,
    pub contained_strict: bool,
    /// Minimum of the per-cube saturation ratios.
    pub saturation_ratio: f64,
    pub cubes: Vec<CubeStructure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub schema: String,
    pub dim: usize,
    #[serde(rename = "L")]
    pub block: u32,
    #[serde(rename = "S")]
    pub scales: u32,
    pub delta: f64,
    pub net_res: usize,
    pub branching: Vec<u64>,
    pub dimensions: Vec<usize>,
    /// Smallest `delta` for which every `log2 R_s >= L (k_s - delta)`.
    pub delta_achieved: f64,
    pub per_scale: Vec<ScaleStructure>,
}

fn uniform_profile(a: &GridSet, block: u32) -> Result<Vec<u64>> {
    match a.uniformity(block)? {
        Uniformity::Uniform(p) => Ok(p.branching),
        Uniformity::NotUniform(v) => Err(Error::NotUniform(v)),
    }
}

fn cubes_at(a: &GridSet, level: u32) -> Result<Vec<DyadicCube>> {
    Ok(a.cubes(level)?
        .into_iter()
        .map(|coords| DyadicCube { level, coords })
        .collect())
}

/// Maps a flat of the renormalized cube back to global coordinates.
fn globalize(flat: &AffineFlat, cube: &DyadicCube) -> AffineFlat {
    let side = cube.side();
    AffineFlat {
        frame: flat.frame.clone(),
        offset: cube
            .corner()
            .iter()
            .zip(&flat.offset)
            .map(|(c, o)| c + side * o)
            .collect(),
    }
}

/// Per scale, `k_s` is the largest certified `D_L` over the child sets of the
/// level-`sL` cubes; each cube then gets a `k_s`-flat fit and the best
/// `(d - k_s)`-dimensional projection found on the Grassmannian net.
pub fn analyze_structure(a: &GridSet, block: u32, delta: f64, net_res: usize) -> Result<StructureReport> {
    if a.is_empty() {
        return Err(Error::EmptySet);
    }
    let branching = uniform_profile(a, block)?;
    let scales = branching.len() as u32;
    let d = a.dim();
    let threshold = geometry::slab_threshold(d, block);
    let strict = (-(block as f64)).exp2();

    let mut per_scale = Vec::with_capacity(scales as usize);
    for s in 0..scales {
        let cubes = cubes_at(a, s * block)?;
        let dims: Vec<(usize, usize)> = cubes
            .par_iter()
            .map(|cube| {
                let kids = a.children_set(cube, block)?;
                Ok((kids.len(), geometry::min_dimension(&kids, block)?.0))
            })
            .collect::<Result<_>>()?;
        let k = dims.iter().map(|&(_, j)| j).max().unwrap_or(0);
        let r = branching[s as usize];
        let scale_factor = ((k as f64 - delta) * block as f64).exp2();
        let entries: Vec<CubeStructure> = cubes
            .par_iter()
            .zip(&dims)
            .map(|(cube, &(children, dimension))| {
                let local = a.renormalize(cube)?;
                let fit = geometry::fit_flat(&local, k)?;
                let proj = geometry::grassmannian_inf_covering(&local, k, block, net_res)?;
                Ok(CubeStructure {
                    cube: cube.clone(),
                    children,
                    dimension,
                    flat: globalize(&fit.flat, cube),
                    slack: fit.slack * cube.side(),
                    contained: fit.slack <= threshold + LOG_TOL,
                    contained_strict: fit.slack <= strict + LOG_TOL,
                    projection_subspace: proj.minimizer,
                    projection_covering: proj.value,
                    saturation_ratio: r as f64 / (scale_factor * proj.value as f64),
                })
            })
            .collect::<Result<_>>()?;
        per_scale.push(ScaleStructure {
            scale: s,
            k,
            branching: r,
            branching_ok: branching_bound_holds(r, k, block, delta),
            contained: entries.iter().all(|c| c.contained),
            contained_strict: entries.iter().all(|c| c.contained_strict),
            saturation_ratio: entries.iter().map(|c| c.saturation_ratio).fold(f64::INFINITY, f64::min),
            cubes: entries,
        });
    }
    let dimensions: Vec<usize> = per_scale.iter().map(|s| s.k).collect();
    let delta_achieved = per_scale
        .iter()
        .map(|s| (s.k as f64 - (s.branching as f64).log2() / block as f64).max(0.0))
        .fold(0.0, f64::max);
    Ok(StructureReport {
        schema: STRUCTURE_SCHEMA.to_string(),
        dim: d,
        block,
        scales,
        delta,
        net_res,
        branching,
        dimensions,
        delta_achieved,
        per_scale,
    })
}

/// `log2 R >= L (k - delta)`.
fn branching_bound_holds(r: u64, k: usize, block: u32, delta: f64) -> bool {
    (r as f64).log2() >= block as f64 * (k as f64 - delta) - LOG_TOL
}

/// One evaluated clause.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub id: String,
    pub passed: bool,
    pub detail: String,
}

/// Per-clause outcomes, in evaluation order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    pub clauses: Vec<Clause>,
}

impl Ledger {
    fn push(&mut self, id: &str, passed: bool, detail: impl Into<String>) {
        self.clauses.push(Clause {
            id: id.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&Clause> {
        self.clauses.iter().find(|c| !c.passed)
    }

    pub fn get(&self, id: &str) -> Option<&Clause> {
        self.clauses.iter().find(|c| c.id == id)
    }
}

/// `|A'| >= 2^{-delta m} |A|`, compared in logarithms.
fn size_bound_holds(kept: usize, total: usize, m: u32, delta: f64) -> bool {
    kept > 0 && (kept as f64).log2() - (total as f64).log2() + delta * m as f64 >= -LOG_TOL
}

/// Clauses (i)-(iii) of the sumset inverse theorem for `A'` and its report.
/// `original_len` is `|A|` for the set `A'` was extracted from.
pub fn check_theorem2(a_prime: &GridSet, original_len: usize, delta: f64, report: &StructureReport) -> Result<Ledger> {
    let block = report.block;
    let mut ledger = Ledger::default();

    let profile = match a_prime.uniformity(block) {
        Ok(Uniformity::Uniform(p)) => Some(p),
        Ok(Uniformity::NotUniform(v)) => {
            ledger.push("T2.i", false, format!("not uniform: {v}"));
            None
        }
        Err(e) => {
            ledger.push("T2.i", false, e.to_string());
            None
        }
    };
    if let Some(p) = &profile {
        let same = p.branching == report.branching;
        ledger.push(
            "T2.i",
            same,
            format!("branching {:?}, report {:?}", p.branching, report.branching),
        );
    }

    let m = a_prime.scale_exp();
    ledger.push(
        "T2.ii",
        size_bound_holds(a_prime.len(), original_len, m, delta),
        format!("|A'| = {}, |A| = {original_len}, 2^(-delta m) = 2^{}", a_prime.len(), -delta * m as f64),
    );

    let mut failure: Option<String> = None;
    for sc in &report.per_scale {
        if !branching_bound_holds(sc.branching, sc.k, block, delta) {
            failure = Some(format!(
                "scale {}: log2 R = {:.6} < L (k - delta) = {:.6}",
                sc.scale,
                (sc.branching as f64).log2(),
                block as f64 * (sc.k as f64 - delta)
            ));
            break;
        }
        let expected: Vec<DyadicCube> = cubes_at(a_prime, sc.scale * block)?;
        let listed: Vec<&DyadicCube> = sc.cubes.iter().map(|c| &c.cube).collect();
        if expected.iter().collect::<Vec<_>>() != listed {
            failure = Some(format!("scale {}: report cubes do not match the set", sc.scale));
            break;
        }
        if let Some(c) = sc.cubes.iter().find(|c| !c.contained) {
            failure = Some(format!(
                "scale {}: cube {} lies {:.3e} from its {}-flat",
                sc.scale, c.cube, c.slack, sc.k
            ));
            break;
        }
    }
    if report.per_scale.len() != report.scales as usize {
        failure.get_or_insert_with(|| "report is missing scales".into());
    }
    ledger.push(
        "T2.iii",
        failure.is_none(),
        failure.unwrap_or_else(|| format!("k = {:?}", report.dimensions)),
    );
    Ok(ledger)
}

/// A flat attached to a cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeWitness {
    pub cube: DyadicCube,
    pub flat: AffineFlat,
}

/// Witness data for the measure inverse theorem's conclusions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Witness {
    #[serde(rename = "L")]
    pub block: u32,
    pub delta: f64,
    pub q: f64,
    /// `k_s` for `s` in `[S]`.
    pub dimensions: Vec<usize>,
    /// `W_I`, linear of dimension `d - k_s`, for each cube of `A`.
    pub saturating: Vec<CubeWitness>,
    /// `V_I`, affine of dimension `k_s`, for each cube of `B`.
    pub containing: Vec<CubeWitness>,
    /// Translations in units of `2^{-m}/3`; zero when absent.
    #[serde(default)]
    pub shift_a: Option<Vec<i64>>,
    #[serde(default)]
    pub shift_b: Option<Vec<i64>>,
}

fn check_support<W: Weight>(mu: &GridMeasure<W>, a: &GridSet, name: &str) -> Result<()> {
    if mu.dim() != a.dim() || mu.scale_exp() != a.scale_exp() {
        return Err(Error::SupportViolation(format!("{name} and its measure live on different lattices")));
    }
    if let Some(p) = a.points().iter().find(|p| mu.get(p).is_none()) {
        return Err(Error::SupportViolation(format!("{name} contains {p:?} outside the support")));
    }
    Ok(())
}

/// `mu(x) <= 2 mu(y)` on `a`, exact in the weight type.
fn doubling_clause<W: Weight>(mu: &GridMeasure<W>, a: &GridSet) -> (bool, String) {
    let mut weights = a.points().iter().map(|p| (p, mu.get(p).expect("support checked")));
    let Some(first) = weights.next() else {
        return (false, "empty set".into());
    };
    let (mut hi, mut lo) = (first, first);
    for (p, w) in weights {
        if *w > *hi.1 {
            hi = (p, w);
        }
        if *w < *lo.1 {
            lo = (p, w);
        }
    }
    let ok = hi.1.clone() <= lo.1.clone() + lo.1.clone();
    let detail = format!(
        "max {:?} at {:?}, min {:?} at {:?}",
        hi.1.to_f64_lossy(),
        hi.0,
        lo.1.to_f64_lossy(),
        lo.0
    );
    (ok, detail)
}

fn uniform_clause(a: &GridSet, block: u32, scales: usize) -> (bool, String, Option<Vec<u64>>) {
    match a.uniformity(block) {
        Ok(Uniformity::Uniform(p)) if p.branching.len() == scales => {
            (true, format!("R = {:?}", p.branching), Some(p.branching))
        }
        Ok(Uniformity::Uniform(p)) => (false, format!("{} scales, expected {scales}", p.branching.len()), None),
        Ok(Uniformity::NotUniform(v)) => (false, v.to_string(), None),
        Err(e) => (false, e.to_string(), None),
    }
}

fn witness_map(ws: &[CubeWitness]) -> BTreeMap<&DyadicCube, &AffineFlat> {
    ws.iter().map(|w| (&w.cube, &w.flat)).collect()
}

fn saturation_clause(a: &GridSet, branching: &[u64], w: &Theorem1Witness) -> Result<(bool, String)> {
    let map = witness_map(&w.saturating);
    let d = a.dim();
    for (s, (&k, &r)) in w.dimensions.iter().zip(branching).enumerate() {
        for cube in cubes_at(a, s as u32 * w.block)? {
            let Some(flat) = map.get(&cube) else {
                return Ok((false, format!("no witness for {cube}")));
            };
            if flat.dim_k() != d - k || flat.ambient_dim() != d {
                return Ok((false, format!("witness for {cube} has dimension {}", flat.dim_k())));
            }
            let cover = geometry::projection_covering(&a.renormalize(&cube)?, flat, w.block)?;
            let lhs = (r as f64).log2();
            let rhs = (k as f64 - w.delta) * w.block as f64 + (cover as f64).log2();
            if lhs < rhs - LOG_TOL {
                return Ok((false, format!("{cube}: R = {r} < 2^(({k} - delta) L) * {cover}")));
            }
        }
    }
    Ok((true, "every cube has a saturating subspace".into()))
}

fn containment_clause(b: &GridSet, w: &Theorem1Witness) -> Result<(bool, String)> {
    let map = witness_map(&w.containing);
    let d = b.dim();
    let m = b.scale_exp();
    for (s, &k) in w.dimensions.iter().enumerate() {
        let level = s as u32 * w.block;
        let child = level + w.block;
        let side = (-(child as f64)).exp2();
        let radius = (d as f64).sqrt() * side;
        for cube in cubes_at(b, level)? {
            let Some(flat) = map.get(&cube) else {
                return Ok((false, format!("no witness for {cube}")));
            };
            if flat.dim_k() != k || flat.ambient_dim() != d {
                return Ok((false, format!("witness for {cube} has dimension {}", flat.dim_k())));
            }
            let inside = b.filter(|p| cube.contains(p, m));
            for j in inside.cubes(child)? {
                let lo: Vec<f64> = j.iter().map(|&c| c as f64 * side).collect();
                let hi: Vec<f64> = lo.iter().map(|x| x + side).collect();
                let dist = geometry::box_flat_distance(&lo, &hi, flat);
                if dist > radius + LOG_TOL {
                    return Ok((false, format!("{cube}: child {j:?} is {dist:.3e} from its flat")));
                }
            }
        }
    }
    Ok((true, "every child cube meets the flat's neighbourhood".into()))
}

/// Clauses A1-A4, B1-B4 and C of the measure inverse theorem, evaluated on
/// `A ⊆ supp mu`, `B ⊆ supp nu` with the supplied witnesses.
pub fn check_theorem1_conclusions<W: Weight>(
    mu: &GridMeasure<W>,
    nu: &GridMeasure<W>,
    a: &GridSet,
    b: &GridSet,
    w: &Theorem1Witness,
) -> Result<Ledger> {
    check_support(mu, a, "A")?;
    check_support(nu, b, "B")?;
    let m = a.scale_exp();
    let scales = w.dimensions.len();
    let mut ledger = Ledger::default();

    let full = mu.lq_norm(w.q)?;
    let part = mu.restrict(a).lq_norm(w.q)?;
    let a1 = part.log2() - full.log2() + w.delta * m as f64 >= -LOG_TOL;
    ledger.push("A1", a1, format!("|mu|_A|_q = {part:.6e}, |mu|_q = {full:.6e}"));
    let (a2, detail) = doubling_clause(mu, a);
    ledger.push("A2", a2, detail);
    let (a3, detail, profile_a) = uniform_clause(a, w.block, scales);
    ledger.push("A3", a3, detail);
    match profile_a {
        Some(r) => {
            let (ok, detail) = saturation_clause(a, &r, w)?;
            ledger.push("A4", ok, detail);
        }
        None => ledger.push("A4", false, "A is not uniform"),
    }

    let total = nu.mass().to_f64_lossy();
    let on_b = nu.restrict(b).mass().to_f64_lossy();
    let b1 = on_b > 0.0 && on_b.log2() - total.log2() + w.delta * m as f64 >= -LOG_TOL;
    ledger.push("B1", b1, format!("nu(B) = {on_b:.6e} of {total:.6e}"));
    let (b2, detail) = doubling_clause(nu, b);
    ledger.push("B2", b2, detail);
    let (b3, detail, _) = uniform_clause(b, w.block, scales);
    ledger.push("B3", b3, detail);
    let (b4, detail) = containment_clause(b, w)?;
    ledger.push("B4", b4, detail);

    let zero = vec![0i64; a.dim()];
    let ca = uniformize::verify_centering(a, w.shift_a.as_deref().unwrap_or(&zero), w.block)?;
    let cb = uniformize::verify_centering(b, w.shift_b.as_deref().unwrap_or(&zero), w.block)?;
    ledger.push("C", ca && cb, format!("A centred: {ca}, B centred: {cb}"));
    Ok(ledger)
}

/// Empirical run of the energy corollary: large energy should force a
/// structured subset. A miss is reported, never asserted as a refutation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyExperiment {
    pub empirical: bool,
    pub energy: EnergyResult,
    pub sigma: f64,
    pub above_threshold: bool,
    pub subset_size: Option<usize>,
    pub structure: Option<StructureReport>,
    pub ledger: Option<Ledger>,
    pub witness_found: bool,
}

pub fn energy_structure_experiment(
    x: &GridSet,
    block: u32,
    delta: f64,
    sigma: f64,
    net_res: usize,
) -> Result<EnergyExperiment> {
    let energy = sumsets::additive_energy(x)?;
    let above = energy.sigma_star <= sigma + LOG_TOL;
    let mut out = EnergyExperiment {
        empirical: true,
        energy,
        sigma,
        above_threshold: above,
        subset_size: None,
        structure: None,
        ledger: None,
        witness_found: false,
    };
    if !above {
        return Ok(out);
    }
    let sub = uniformize::uniform_subset_subspace(x, block)?.subset;
    let report = analyze_structure(&sub, block, delta, net_res)?;
    let ledger = check_theorem2(&sub, x.len(), delta, &report)?;
    out.subset_size = Some(sub.len());
    out.witness_found = ledger.passed();
    out.structure = Some(report);
    out.ledger = Some(ledger);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatteningReport {
    pub porosity: geometry::PorosityReport,
    /// `log2 |X| >= (k - 1 + lambda) m`.
    pub size_hypothesis: bool,
    pub required_log_size: f64,
    pub hypotheses_met: bool,
    pub energy: Option<EnergyResult>,
    pub sigma_star: Option<f64>,
}

/// Porosity between `2^{-m}` and 1, the size hypothesis, and the measured `sigma*`.
/// Skips the energy when the set is not porous.
pub fn flattening_check(x: &GridSet, k: usize, rho: f64, lambda: f64, net_res: usize) -> Result<FlatteningReport> {
    if x.is_empty() {
        return Err(Error::EmptySet);
    }
    let m = x.scale_exp();
    let porosity = geometry::porosity_check(x, k, rho, (-(m as f64)).exp2(), net_res)?;
    let required = (k as f64 - 1.0 + lambda) * m as f64;
    let size_ok = (x.len() as f64).log2() >= required - LOG_TOL;
    let energy = if porosity.porous {
        Some(sumsets::additive_energy(x)?)
    } else {
        None
    };
    Ok(FlatteningReport {
        hypotheses_met: porosity.porous && size_ok,
        porosity,
        size_hypothesis: size_ok,
        required_log_size: required,
        sigma_star: energy.as_ref().map(|e| e.sigma_star),
        energy,
    })
}

/// Largest number of matrix entries `fup_norm` will build.
pub const FUP_ENTRY_CAP: usize = 1 << 24;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FupKernel {
    /// Kernel sampled at cube centres times the cell volume.
    #[default]
    Midpoint,
    /// Exact integration over the `Y` cells (sinc factors), `X` sampled at centres.
    Sinc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FupResult {
    pub dim: usize,
    pub h_exp: u32,
    pub h: f64,
    pub x_count: usize,
    pub y_count: usize,
    pub norm: f64,
    pub trivial_bound: f64,
    /// `log(norm) / log(h)`.
    pub beta_measured: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_formula: Option<f64>,
    pub kernel: FupKernel,
    pub iterations: usize,
}

impl FupResult {
    pub const CSV_HEADER: &'static str =
        "d,h_exp,h,x_count,y_count,norm,trivial_bound,beta_measured,beta_formula,kernel,iterations";

    pub fn csv_row(&self) -> String {
        let kernel = match self.kernel {
            FupKernel::Midpoint => "midpoint",
            FupKernel::Sinc => "sinc",
        };
        format!(
            "{},{},{:e},{},{},{:.16e},{:.16e},{:.16e},{},{},{}",
            self.dim,
            self.h_exp,
            self.h,
            self.x_count,
            self.y_count,
            self.norm,
            self.trivial_bound,
            self.beta_measured,
            self.beta_formula.map(|b| format!("{b:.16e}")).unwrap_or_default(),
            kernel,
            self.iterations
        )
    }
}

/// Row-major complex matrix.
#[derive(Clone, Debug)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl DenseMatrix {
    fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.data
            .par_chunks(self.cols)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn apply_adjoint(&self, u: &[Complex64]) -> Vec<Complex64> {
        (0..self.cols)
            .into_par_iter()
            .map(|j| (0..self.rows).map(|i| self.data[i * self.cols + j].conj() * u[i]).sum())
            .collect()
    }
}

/// The discretized `1_X F_h 1_Y` on cells of side `h = 2^{-m}`:
/// `M[j, l] = (2 pi h)^{-d/2} h^d e^{i x_j . y_l / h}` over cell centres.
pub fn fup_matrix(x: &GridSet, y: &GridSet, kernel: FupKernel) -> Result<DenseMatrix> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch(x.dim(), y.dim()));
    }
    if x.scale_exp() != y.scale_exp() {
        return Err(Error::ScaleMismatch(x.scale_exp(), y.scale_exp()));
    }
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptySet);
    }
    let entries = x.len().saturating_mul(y.len());
    if entries > FUP_ENTRY_CAP {
        return Err(Error::SizeCap(format!("{entries} matrix entries exceed {FUP_ENTRY_CAP}")));
    }
    let d = x.dim() as i32;
    let h = (-(x.scale_exp() as f64)).exp2();
    let amp = (2.0 * std::f64::consts::PI * h).powf(-(d as f64) / 2.0) * h.powi(d);
    let centre = |p: &[i64]| -> Vec<f64> { p.iter().map(|&c| (c as f64 + 0.5) * h).collect() };
    let ys: Vec<Vec<f64>> = y.points().iter().map(|p| centre(p)).collect();
    let data: Vec<Complex64> = x
        .points()
        .par_iter()
        .flat_map_iter(|p| {
            let xj = centre(p);
            let damp: f64 = match kernel {
                FupKernel::Midpoint => 1.0,
                FupKernel::Sinc => xj.iter().map(|&t| sinc(t / 2.0)).product(),
            };
            ys.iter()
                .map(move |yl| {
                    let phase: f64 = xj.iter().zip(yl).map(|(a, b)| a * b).sum::<f64>() / h;
                    Complex64::from_polar(amp * damp, phase)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(DenseMatrix {
        rows: x.len(),
        cols: y.len(),
        data,
    })
}

fn sinc(t: f64) -> f64 {
    if t.abs() < 1e-8 {
        1.0 - t * t / 6.0
    } else {
        t.sin() / t
    }
}

fn norm2(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest singular value by power iteration on `M* M`, stopped when the
/// estimate changes by less than `rel_tol` relative. Returns the value and the
/// number of iterations.
pub fn largest_singular_value(m: &DenseMatrix, seed: u64, rel_tol: f64, max_iter: usize) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<Complex64> = (0..m.cols)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let n = norm2(&v);
    v.iter_mut().for_each(|z| *z /= n);
    let mut estimate = 0.0;
    for it in 1..=max_iter {
        let w = m.apply_adjoint(&m.apply(&v));
        let wn = norm2(&w);
        if wn == 0.0 {
            return (0.0, it);
        }
        let next = wn.sqrt();
        v = w.into_iter().map(|z| z / wn).collect();
        if (next - estimate).abs() <= rel_tol * next {
            return (next, it);
        }
        estimate = next;
    }
    (estimate, max_iter)
}

/// `||1_X F_h 1_Y||` for `h = 2^{-m}`, with the trivial bound
/// `min{1, h^{d/2} |X|^{1/2} |Y|^{1/2}}`. `sigma` fills in `beta_formula`.
pub fn fup_norm(x: &GridSet, y: &GridSet, kernel: FupKernel, sigma: Option<f64>, seed: u64) -> Result<FupResult> {
    let matrix = fup_matrix(x, y, kernel)?;
    let (norm, iterations) = largest_singular_value(&matrix, seed, 1e-8, 1_000_000);
    let d = x.dim();
    let m = x.scale_exp();
    let h = (-(m as f64)).exp2();
    let trivial = (h.powf(d as f64 / 2.0) * (x.len() as f64).sqrt() * (y.len() as f64).sqrt()).min(1.0);
    let beta_formula = sigma.map(|s| fup_beta(h, x.len(), y.len(), s, d)).transpose()?;
    Ok(FupResult {
        dim: d,
        h_exp: m,
        h,
        x_count: x.len(),
        y_count: y.len(),
        norm,
        trivial_bound: trivial,
        beta_measured: norm.log2() / h.log2(),
        beta_formula,
        kernel,
        iterations,
    })
}

/// `beta = 3/8 (d - log(|X| |Y|) / log(1/h)) + sigma / 8`. Negative values mean
/// no gain over the trivial bound and are returned as is.
pub fn fup_beta(h: f64, x_count: usize, y_count: usize, sigma: f64, d: usize) -> Result<f64> {
    if !(h > 0.0 && h < 1.0) || x_count == 0 || y_count == 0 {
        return Err(Error::InvalidParameter("need h in (0,1) and positive counts".into()));
    }
    let ratio = ((x_count as f64).ln() + (y_count as f64).ln()) / (1.0 / h).ln();
    Ok(0.375 * (d as f64 - ratio) + sigma / 8.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uniformize::center_by_translation;
    use proptest::prelude::*;

    fn line(m: u32, row: i64) -> GridSet {
        GridSet::new(2, m, (0..1i64 << m).map(|i| vec![i, row])).unwrap()
    }

    #[test]
    fn full_lattice_has_full_dimension() {
        // At L = 2 the slab threshold exceeds half the cube, so even a full
        // child grid certifies as a point; L = 3 is the first honest block.
        let full = GridSet::full(2, 6).unwrap();
        assert_eq!(analyze_structure(&full, 2, 0.2, 16).unwrap().dimensions, vec![0, 0, 0]);
        let r = analyze_structure(&full, 3, 0.2, 16).unwrap();
        assert_eq!(r.dimensions, vec![2, 2]);
        assert!(r.per_scale.iter().all(|s| s.saturation_ratio >= 1.0));
        assert!(check_theorem2(&full, full.len(), 0.2, &r).unwrap().passed());
    }

    #[test]
    fn singleton_has_dimension_zero() {
        let one = GridSet::new(2, 6, vec![vec![9, 40]]).unwrap();
        let r = analyze_structure(&one, 2, 0.2, 8).unwrap();
        assert_eq!(r.dimensions, vec![0, 0, 0]);
        assert_eq!(r.delta_achieved, 0.0);
    }

    #[test]
    fn line_recovers_one() {
        let a = line(6, 17);
        let r = analyze_structure(&a, 3, 0.2, 16).unwrap();
        assert_eq!(r.dimensions, vec![1, 1]);
        let ledger = check_theorem2(&a, a.len(), 0.2, &r).unwrap();
        assert!(ledger.passed(), "{ledger:?}");
        // The witness subspace for a horizontal line is the vertical axis.
        let w = &r.per_scale[1].cubes[0].projection_subspace;
        assert!(w.frame[0][0].abs() < 1e-12);
        assert_eq!(r.per_scale[1].cubes[0].projection_covering, 1);
    }

    #[test]
    fn parallel_lines_recover_one_below_top() {
        let mut pts: Vec<Vec<i64>> = (0..64).map(|i| vec![i, 5]).collect();
        pts.extend((0..64).map(|i| vec![i, 53]));
        let a = GridSet::new(2, 6, pts).unwrap();
        let r = analyze_structure(&a, 3, 0.2, 16).unwrap();
        assert_eq!(&r.dimensions[1..], &[1]);
    }

    #[test]
    fn inflated_dimension_fails_iii() {
        let a = line(6, 17);
        let mut r = analyze_structure(&a, 3, 0.2, 16).unwrap();
        r.per_scale[0].k = 2;
        let ledger = check_theorem2(&a, a.len(), 0.2, &r).unwrap();
        assert_eq!(ledger.first_failure().unwrap().id, "T2.iii");
        // With delta = d the bound is vacuous.
        assert!(check_theorem2(&a, a.len(), 2.0, &r).unwrap().get("T2.iii").unwrap().passed);
    }

    #[test]
    fn size_clause() {
        let a = line(6, 17);
        let r = analyze_structure(&a, 3, 0.2, 16).unwrap();
        // 64 of 4096 points is 2^{-6} = 2^{-m}: needs delta >= 1.
        assert!(!check_theorem2(&a, 4096, 0.2, &r).unwrap().get("T2.ii").unwrap().passed);
        assert!(check_theorem2(&a, 4096, 1.0, &r).unwrap().get("T2.ii").unwrap().passed);
    }

    fn line_witness(a: &GridSet, block: u32) -> Theorem1Witness {
        let r = analyze_structure(a, block, 0.2, 16).unwrap();
        let mut saturating = Vec::new();
        let mut containing = Vec::new();
        for sc in &r.per_scale {
            for c in &sc.cubes {
                saturating.push(CubeWitness {
                    cube: c.cube.clone(),
                    flat: c.projection_subspace.clone(),
                });
                containing.push(CubeWitness {
                    cube: c.cube.clone(),
                    flat: c.flat.clone(),
                });
            }
        }
        Theorem1Witness {
            block,
            delta: 0.2,
            q: 2.0,
            dimensions: r.dimensions,
            saturating,
            containing,
            shift_a: None,
            shift_b: None,
        }
    }

    #[test]
    fn theorem1_on_a_line() {
        // Row 32 is 1/2, so 2^{-6} (32 + y) is centred after shifting by y.
        let a = line(6, 32);
        let mu = GridMeasure::<f64>::uniform(&a).unwrap();
        let mut w = line_witness(&a, 3);
        let ledger = check_theorem1_conclusions(&mu, &mu, &a, &a, &w).unwrap();
        for id in ["A1", "A2", "A3", "A4", "B1", "B2", "B3", "B4"] {
            assert!(ledger.get(id).unwrap().passed, "{id}: {ledger:?}");
        }
        // Horizontal coordinates cover all of [0,1) so C fails.
        assert!(!ledger.get("C").unwrap().passed);
        w.containing.iter_mut().for_each(|c| c.flat.offset[1] += 0.5);
        let ledger = check_theorem1_conclusions(&mu, &mu, &a, &a, &w).unwrap();
        assert!(!ledger.get("B4").unwrap().passed);
    }

    #[test]
    fn a2_detects_ratio_three() {
        let a = GridSet::new(1, 2, vec![vec![0], vec![1]]).unwrap();
        let mu = GridMeasure::new(1, 2, vec![(vec![0], 0.75), (vec![1], 0.25)]).unwrap();
        let (ok, detail) = doubling_clause(&mu, &a);
        assert!(!ok);
        assert!(detail.contains("[0]") && detail.contains("[1]"));
        let nu = GridMeasure::new(1, 2, vec![(vec![0], 2.0 / 3.0), (vec![1], 1.0 / 3.0)]).unwrap();
        assert!(doubling_clause(&nu, &a).0);
    }

    #[test]
    fn support_violation() {
        let a = GridSet::new(1, 2, vec![vec![0], vec![3]]).unwrap();
        let mu = GridMeasure::new(1, 2, vec![(vec![0], 1.0)]).unwrap();
        let w = Theorem1Witness {
            block: 1,
            delta: 0.1,
            q: 2.0,
            dimensions: vec![0, 0],
            saturating: vec![],
            containing: vec![],
            shift_a: None,
            shift_b: None,
        };
        assert!(matches!(
            check_theorem1_conclusions(&mu, &mu, &a, &a, &w),
            Err(Error::SupportViolation(_))
        ));
    }

    #[test]
    fn centred_sets_pass_c() {
        let pts: Vec<Vec<i64>> = (22..43).map(|i| vec![i]).collect();
        let a = GridSet::new(1, 6, pts).unwrap();
        let c = center_by_translation(&a, 3).unwrap();
        let sub = uniformize::uniform_subset(&c.subset, 3).unwrap().subset;
        let mu = GridMeasure::<f64>::uniform(&sub).unwrap();
        let mut w = line_witness(&sub, 3);
        w.shift_a = Some(c.shift_units.clone());
        w.shift_b = Some(c.shift_units);
        let ledger = check_theorem1_conclusions(&mu, &mu, &sub, &sub, &w).unwrap();
        assert!(ledger.get("C").unwrap().passed);
    }

    #[test]
    fn energy_experiment_on_ap() {
        let ap = GridSet::full(1, 6).unwrap();
        let e = energy_structure_experiment(&ap, 3, 0.25, 0.5, 8).unwrap();
        let n = 64u128;
        assert_eq!(e.energy.quadruples, (2 * n * n * n + n) / 3);
        assert!(e.above_threshold && e.witness_found);
        assert_eq!(e.structure.unwrap().dimensions, vec![1, 1]);
    }

    #[test]
    fn energy_experiment_short_circuits() {
        let sparse = GridSet::new(2, 6, vec![vec![1, 2], vec![40, 7], vec![13, 60], vec![55, 33]]).unwrap();
        let e = energy_structure_experiment(&sparse, 2, 0.25, 0.05, 8).unwrap();
        assert!(!e.above_threshold);
        assert!(e.structure.is_none());
        assert_eq!(e.energy.quadruples, sumsets::additive_energy(&sparse).unwrap().quadruples);
    }

    #[test]
    fn flattening_examples() {
        let full = GridSet::full(1, 6).unwrap();
        let r = flattening_check(&full, 1, 0.25, 0.5, 8).unwrap();
        assert!(!r.porosity.porous && !r.hypotheses_met && r.energy.is_none());
        // A point is a 0-flat: 1-porous, but far too small.
        let point = GridSet::new(1, 6, vec![vec![20]]).unwrap();
        let r = flattening_check(&point, 1, 0.25, 0.5, 8).unwrap();
        assert!(r.porosity.porous && !r.size_hypothesis);
    }

    #[test]
    fn fup_singletons_are_rank_one() {
        for m in [4u32, 8] {
            let x = GridSet::new(1, m, vec![vec![3]]).unwrap();
            let y = GridSet::new(1, m, vec![vec![11]]).unwrap();
            let r = fup_norm(&x, &y, FupKernel::Midpoint, None, 1).unwrap();
            let h = (-(m as f64)).exp2();
            let exact = (2.0 * std::f64::consts::PI * h).powf(-0.5) * h;
            assert!((r.norm - exact).abs() < 1e-10 * exact);
        }
    }

    #[test]
    fn fup_full_grid_near_one() {
        let full = GridSet::full(1, 6).unwrap();
        let r = fup_norm(&full, &full, FupKernel::Midpoint, None, 3).unwrap();
        assert!(r.norm <= 1.05 * r.trivial_bound, "{}", r.norm);
        let s = fup_norm(&full, &full, FupKernel::Sinc, None, 3).unwrap();
        assert!(s.norm <= r.norm + 1e-12);
    }

    fn svd_oracle(m: &DenseMatrix) -> f64 {
        let mat = nalgebra::DMatrix::from_row_slice(m.rows, m.cols, &m.data);
        mat.singular_values().iter().cloned().fold(0.0, f64::max)
    }

    #[test]
    fn fup_beta_examples() {
        let h = 2f64.powi(-8);
        assert!((fup_beta(h, 16, 16, 0.4, 1).unwrap() - 0.05).abs() < 1e-12);
        assert!(fup_beta(h, 16, 16, 0.0, 1).unwrap().abs() < 1e-12);
        let r = fup_beta(h, 1 << 12, 1 << 12, 0.4, 2).unwrap();
        assert!((r + 0.325).abs() < 1e-12);
        assert!(fup_beta(1.5, 1, 1, 0.0, 1).is_err());
    }

    #[test]
    fn csv_row_has_all_columns() {
        let x = GridSet::new(1, 4, vec![vec![1], vec![2]]).unwrap();
        let r = fup_norm(&x, &x, FupKernel::Midpoint, Some(0.1), 0).unwrap();
        let cols = FupResult::CSV_HEADER.split(',').count();
        assert_eq!(r.csv_row().split(',').count(), cols);
    }

    fn arb_pair() -> impl Strategy<Value = (GridSet, GridSet)> {
        let pts = || proptest::collection::vec(0i64..64, 1..40);
        (pts(), pts()).prop_map(|(a, b)| {
            (
                GridSet::new(1, 6, a.into_iter().map(|p| vec![p])).unwrap(),
                GridSet::new(1, 6, b.into_iter().map(|p| vec![p])).unwrap(),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn power_iteration_matches_svd((x, y) in arb_pair(), seed in 0u64..100) {
            let m = fup_matrix(&x, &y, FupKernel::Midpoint).unwrap();
            let (s, _) = largest_singular_value(&m, seed, 1e-13, 1_000_000);
            let oracle = svd_oracle(&m);
            prop_assert!((s - oracle).abs() <= 1e-6 * oracle.max(1e-300), "{} vs {}", s, oracle);
        }

        #[test]
        fn fup_bounds_and_symmetry((x, y) in arb_pair()) {
            let a = fup_norm(&x, &y, FupKernel::Midpoint, None, 0).unwrap();
            let b = fup_norm(&y, &x, FupKernel::Midpoint, None, 0).unwrap();
            prop_assert!(a.norm <= 1.0 + 1e-6);
            prop_assert!(a.norm <= 1.05 * a.trivial_bound);
            prop_assert!((a.norm - b.norm).abs() <= 1e-6 * a.norm);
        }

        #[test]
        fn uniformized_pipeline_report_is_consistent(
            pts in proptest::collection::vec(proptest::collection::vec(0i64..64, 2), 1..60)
        ) {
            let a = GridSet::new(2, 6, pts).unwrap();
            let u = uniformize::uniform_subset(&a, 2).unwrap().subset;
            let r = analyze_structure(&u, 2, 0.25, 8).unwrap();
            prop_assert!(r.dimensions.iter().all(|&k| k <= 2));
            let ledger = check_theorem2(&u, u.len(), 0.25, &r).unwrap();
            prop_assert!(ledger.get("T2.i").unwrap().passed);
            prop_assert!(ledger.get("T2.ii").unwrap().passed);
            for sc in &r.per_scale {
                prop_assert_eq!(sc.cubes.len(), u.cubes(sc.scale * 2).unwrap().len());
            }
        }
    }
}
