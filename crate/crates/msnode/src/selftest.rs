//! Oracle suites for the shooting operators, runnable from the command line.
//!
//! The four matrix-free products are taken from an [`OperatorTable`] so that a
//! deliberately broken implementation can be substituted and must be caught.
//! Cases run smallest `(m·n, m)` first and each suite stops at its first
//! failing case, which is then the smallest one that fails.

use std::fmt;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use msnode_core::linalg::{norm2, norm_inf, DenseMatrix};
use msnode_core::loss::{lagrangian_grads, total_loss};
use msnode_core::network::{init_params, NetworkSpec, NeuralDynamics};
use msnode_core::shooting::{
    assemble_columns, assemble_gx_dense, cg_solve, condensed_step, direct_step, jacobians_by_vjp, CgOptions,
    Linearization, ShootingGrid, ShootingVariables, DEFAULT_DENSE_CAP,
};
use msnode_core::systems::MeasurementSet;
use msnode_core::Result;

pub type Lin<'a> = Linearization<'a, NeuralDynamics>;
pub type ForwardOp = fn(&Lin<'_>, &[f64]) -> Result<Vec<f64>>;
pub type ReverseOp = fn(&mut Lin<'_>, &[f64]) -> Result<Vec<f64>>;

/// The operator implementations under test.
#[derive(Clone, Copy)]
pub struct OperatorTable {
    pub gx_v: ForwardOp,
    pub gp_v: ForwardOp,
    pub vt_gx: ReverseOp,
    pub vt_gp: ReverseOp,
}

impl Default for OperatorTable {
    fn default() -> Self {
        OperatorTable {
            gx_v: |l, v| l.gx_v(v),
            gp_v: |l, v| l.gp_v(v),
            vt_gx: |l, w| l.vt_gx(w),
            vt_gp: |l, w| l.vt_gp(w),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub m: usize,
    pub n: usize,
    pub hidden: Vec<usize>,
    pub time_input: bool,
    pub seed: u64,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "m={} n={} hidden={:?} time_input={} seed={}",
            self.m, self.n, self.hidden, self.time_input, self.seed
        )
    }
}

/// Cases ordered smallest first.
pub fn default_cases() -> Vec<Case> {
    let mut cases = Vec::new();
    let mut seed = 1;
    for m in [1, 2, 3, 5] {
        for n in [1, 2, 3] {
            for (hidden, time_input) in [(vec![4], false), (vec![3, 5], true)] {
                cases.push(Case {
                    m,
                    n,
                    hidden,
                    time_input,
                    seed,
                });
                seed += 1;
            }
        }
    }
    cases.sort_by_key(|c| (c.m * c.n, c.m));
    cases
}

/// A random multiple-shooting problem with two measurements per interval.
pub struct Instance {
    pub f: NeuralDynamics,
    pub grid: ShootingGrid,
    pub vars: ShootingVariables,
    pub data: MeasurementSet,
    rng: ChaCha8Rng,
}

impl Instance {
    pub fn new(case: &Case) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
        let (m, n) = (case.m, case.n);
        let spec = NetworkSpec::new(n, case.hidden.clone()).with_time_input(case.time_input);
        let f = NeuralDynamics::new(spec.clone())?;
        let mut params = init_params(&spec, case.seed).values;
        for p in &mut params {
            *p *= 1.0 + 0.5 * rng.random_range(-1.0..1.0);
        }
        let samples = 2 * m + 1;
        let times: Vec<f64> = (0..samples).map(|i| 0.1 * i as f64).collect();
        let grid = ShootingGrid::split(&times, m, 3)?;
        let values: Vec<f64> = (0..samples * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let data = MeasurementSet::new(times, values, n)?;
        let states = (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let multipliers = (0..m * n).map(|_| rng.random_range(-0.5..0.5)).collect();
        let vars = ShootingVariables::new(m, n, states, multipliers, params)?;
        Ok(Instance {
            f,
            grid,
            vars,
            data,
            rng,
        })
    }

    pub fn random_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.rng.random_range(-1.0..1.0)).collect()
    }

    pub fn linearize(&self) -> Result<Lin<'_>> {
        Linearization::new(&self.f, &self.grid, &self.vars)
    }

    pub fn anchor(&self) -> &[f64] {
        self.data.row(0)
    }
}

/// `‖a - b‖∞ / max(‖b‖∞, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    diff / norm_inf(b).max(floor)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
pub struct Failure {
    /// The operator or quantity that disagreed.
    pub operator: String,
    pub case: Case,
    pub detail: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.operator, self.case, self.detail)
    }
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases_run: usize,
    pub elapsed: Duration,
    pub failure: Option<Failure>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct SelftestReport {
    pub suites: Vec<SuiteResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }

    pub fn first_failure(&self) -> Option<&Failure> {
        self.suites.iter().find_map(|s| s.failure.as_ref())
    }
}

/// Outcome of one check on one case: `Err((operator, detail))` on mismatch.
type Check = std::result::Result<(), (String, String)>;

fn compare(op: &str, got: &[f64], want: &[f64], tol: f64) -> Check {
    let e = rel_err(got, want, 1e-12);
    if e <= tol {
        Ok(())
    } else {
        Err((op.into(), format!("relative error {e:.3e} exceeds {tol:.0e}")))
    }
}

fn lift<T>(op: &str, r: Result<T>) -> std::result::Result<T, (String, String)> {
    r.map_err(|e| (op.to_string(), e.to_string()))
}

/// Products against dense Jacobians assembled from reverse sweeps.
fn check_operators(table: &OperatorTable, inst: &mut Instance) -> Check {
    let (mn, p) = (inst.vars.states.len(), inst.vars.params.len());
    let vx = inst.random_vec(mn);
    let vp = inst.random_vec(p);
    let w = inst.random_vec(mn);
    let mut lin = lift("linearization", inst.linearize())?;
    let jac = lift("dense jacobians", jacobians_by_vjp(&mut lin, DEFAULT_DENSE_CAP))?;
    compare("gx_v", &lift("gx_v", (table.gx_v)(&lin, &vx))?, &jac.gx.matvec(&vx), 1e-10)?;
    compare("gp_v", &lift("gp_v", (table.gp_v)(&lin, &vp))?, &jac.gp.matvec(&vp), 1e-10)?;
    compare("vt_gx", &lift("vt_gx", (table.vt_gx)(&mut lin, &w))?, &jac.gx.matvec_t(&w), 1e-10)?;
    compare("vt_gp", &lift("vt_gp", (table.vt_gp)(&mut lin, &w))?, &jac.gp.matvec_t(&w), 1e-10)?;
    let gx = lift("assemble_gx_dense", assemble_gx_dense(&lin, DEFAULT_DENSE_CAP))?;
    compare("assemble_gx_dense", gx.as_slice(), jac.gx.as_slice(), 1e-10)?;
    let naive = lift("assemble_columns", assemble_columns(mn, mn, |v| lin.gx_v(v)))?;
    compare("assemble_gx_dense", gx.as_slice(), naive.as_slice(), 1e-12)
}

/// `⟨w, A v⟩ = ⟨Aᵀ w, v⟩` for both Jacobians.
fn check_transpose(table: &OperatorTable, inst: &mut Instance) -> Check {
    let (mn, p) = (inst.vars.states.len(), inst.vars.params.len());
    let vx = inst.random_vec(mn);
    let vp = inst.random_vec(p);
    let w = inst.random_vec(mn);
    let mut lin = lift("linearization", inst.linearize())?;
    let pairs: [(&str, Vec<f64>, Vec<f64>, &[f64]); 2] = [
        (
            "gx_v/vt_gx",
            lift("gx_v", (table.gx_v)(&lin, &vx))?,
            lift("vt_gx", (table.vt_gx)(&mut lin, &w))?,
            &vx,
        ),
        (
            "gp_v/vt_gp",
            lift("gp_v", (table.gp_v)(&lin, &vp))?,
            lift("vt_gp", (table.vt_gp)(&mut lin, &w))?,
            &vp,
        ),
    ];
    for (op, av, atw, v) in pairs {
        let (a, b) = (dot(&w, &av), dot(&atw, v));
        let scale = (norm2(&w) * norm2(&av)).max(norm2(&atw) * norm2(v)).max(1e-300);
        let e = (a - b).abs() / scale;
        if e > 1e-12 {
            return Err((op.into(), format!("transpose identity off by {e:.3e}")));
        }
    }
    Ok(())
}

/// Central differences of the constraints and of the Lagrangian.
fn check_finite_differences(table: &OperatorTable, inst: &mut Instance) -> Check {
    const H: f64 = 1e-5;
    const TOL: f64 = 1e-5;
    let (mn, p) = (inst.vars.states.len(), inst.vars.params.len());
    let vx = inst.random_vec(mn);
    let vp = inst.random_vec(p);
    let anchor = inst.anchor().to_vec();
    let base = inst.vars.clone();

    let eval = |inst: &mut Instance, dx: &[f64], dp: &[f64], s: f64| -> Result<(Vec<f64>, f64)> {
        inst.vars = base.clone();
        for (x, d) in inst.vars.states.iter_mut().zip(dx) {
            *x += s * d;
        }
        for (x, d) in inst.vars.params.iter_mut().zip(dp) {
            *x += s * d;
        }
        let lin = inst.linearize()?;
        let g = lin.residual(&anchor)?.g;
        let phi = total_loss(&inst.f, &inst.grid, &inst.vars, &inst.data)?;
        let lagrangian = phi + dot(&inst.vars.multipliers, &g);
        Ok((g, lagrangian))
    };
    let zx = vec![0.0; mn];
    let zp = vec![0.0; p];
    let fd = |inst: &mut Instance, dx: &[f64], dp: &[f64]| -> Result<(Vec<f64>, f64)> {
        let (gp, lp) = eval(inst, dx, dp, H)?;
        let (gm, lm) = eval(inst, dx, dp, -H)?;
        inst.vars = base.clone();
        let dg = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * H)).collect();
        Ok((dg, (lp - lm) / (2.0 * H)))
    };
    let (fd_gx, fd_lx) = lift("finite differences", fd(inst, &vx, &zp))?;
    let (fd_gp, fd_lp) = lift("finite differences", fd(inst, &zx, &vp))?;

    let w = inst.random_vec(mn);
    let mut lin = lift("linearization", inst.linearize())?;
    compare("gx_v", &lift("gx_v", (table.gx_v)(&lin, &vx))?, &fd_gx, TOL)?;
    compare("gp_v", &lift("gp_v", (table.gp_v)(&lin, &vp))?, &fd_gp, TOL)?;
    // Reverse products through the directional derivative of wᵀG.
    let wx = dot(&lift("vt_gx", (table.vt_gx)(&mut lin, &w))?, &vx);
    compare("vt_gx", &[wx], &[dot(&w, &fd_gx)], TOL)?;
    let wp = dot(&lift("vt_gp", (table.vt_gp)(&mut lin, &w))?, &vp);
    compare("vt_gp", &[wp], &[dot(&w, &fd_gp)], TOL)?;

    let grads = lift("lagrangian_grads", lagrangian_grads(&mut lin, &inst.data))?;
    compare("lagrangian gradient (states)", &[dot(&grads.l_x, &vx)], &[fd_lx], TOL)?;
    compare("lagrangian gradient (parameters)", &[dot(&grads.l_p, &vp)], &[fd_lp], TOL)
}

/// CG on the Schur system built from the table against a Cholesky solve,
/// and the full condensed step against the direct step.
fn check_condensing(table: &OperatorTable, inst: &mut Instance) -> Check {
    let mn = inst.vars.states.len();
    let rhs = inst.random_vec(mn);
    let anchor = inst.anchor().to_vec();
    let data = inst.data.clone();
    let mut lin = lift("linearization", inst.linearize())?;
    let jac = lift("dense jacobians", jacobians_by_vjp(&mut lin, DEFAULT_DENSE_CAP))?;
    let mut schur: DenseMatrix = jac.gx.gram();
    schur.add_assign(&jac.gp.gram());
    let direct = lift("cholesky", schur.cholesky_solve(&rhs))?;

    let apply = |v: &[f64]| -> Result<Vec<f64>> {
        let a = (table.vt_gx)(&mut lin, v)?;
        let b = (table.vt_gp)(&mut lin, v)?;
        let mut out = (table.gx_v)(&lin, &a)?;
        for (o, t) in out.iter_mut().zip((table.gp_v)(&lin, &b)?) {
            *o += t;
        }
        Ok(out)
    };
    let cg = lift("schur_hvp", cg_solve(apply, &rhs, 1e-13, 10 * mn))?;
    compare("schur_hvp", &cg.solution, &direct, 1e-8)?;

    let g = lift("residual", lin.residual(&anchor))?.g;
    let grads = lift("lagrangian_grads", lagrangian_grads(&mut lin, &data))?;
    let opts = CgOptions {
        tol: 1e-12,
        ..CgOptions::default()
    };
    let cond = lift("condensed_step", condensed_step(&mut lin, &g, &grads.l_x, &grads.l_p, opts))?;
    let dir = lift("direct_step", direct_step(&jac, &g, &grads.l_x, &grads.l_p))?;
    compare("condensed_step", &cond.dx, &dir.dx, 1e-8)?;
    compare("condensed_step", &cond.dp, &dir.dp, 1e-8)?;
    let defect = jac.defect(&cond, &g);
    let bound = 10.0 * opts.tol * norm_inf(&g);
    if defect > bound.max(1e-13) {
        return Err((
            "condensed_step".into(),
            format!("linearized defect {defect:.3e} exceeds {bound:.3e}"),
        ));
    }
    Ok(())
}

type SuiteFn = fn(&OperatorTable, &mut Instance) -> Check;

pub const SUITES: &[(&str, SuiteFn)] = &[
    ("operators", check_operators),
    ("transpose", check_transpose),
    ("finite-differences", check_finite_differences),
    ("condensing", check_condensing),
];

pub fn run_suite(name: &'static str, check: SuiteFn, table: &OperatorTable, cases: &[Case]) -> SuiteResult {
    let start = Instant::now();
    let mut failure = None;
    let mut cases_run = 0;
    for case in cases {
        cases_run += 1;
        let outcome = match Instance::new(case) {
            Ok(mut inst) => check(table, &mut inst),
            Err(e) => Err(("instance".into(), e.to_string())),
        };
        if let Err((operator, detail)) = outcome {
            failure = Some(Failure {
                operator,
                case: case.clone(),
                detail,
            });
            break;
        }
    }
    SuiteResult {
        name,
        cases_run,
        elapsed: start.elapsed(),
        failure,
    }
}

pub fn run(table: &OperatorTable, cases: &[Case]) -> SelftestReport {
    SelftestReport {
        suites: SUITES
            .iter()
            .map(|(name, check)| run_suite(name, *check, table, cases))
            .collect(),
    }
}
