use std::fs;
use std::io::Write as _;
use std::path::Path;

use gitstab::balancer::{balance_with, isotropy_check, BalanceOptions, BalanceStatus};
use gitstab::classifier::{classify_sampled, classify_with, flat_direction, numerical_cross_check, ClassifyOptions, StabilityVerdict, VerdictKind, Witness};
use gitstab::io::{parse_matrix, parse_measure};
use gitstab::kempf_ness::{
    axiom_residuals_with, big_lambda, kn_function, limit_horizon, maximal_weight, morse_bott, numerical_limit_weight, AxiomInstance,
};
use gitstab::linalg::{default_group_tol, gram_schmidt, TracelessSym};
use gitstab::measures::{support_flats, AtomicMeasure, SupportFlat};
use gitstab::random::{random_direction, random_orthogonal, random_special_linear};
use gitstab::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::report::{digest, matrix, num, opt, RunReport};

pub const EXIT_PARSE: i32 = 10;
pub const EXIT_DIMENSION: i32 = 11;
pub const EXIT_GUARD: i32 = 12;
pub const EXIT_ZERO_DIRECTION: i32 = 13;
pub const EXIT_AXIOM: i32 = 14;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::DimensionMismatch { .. } => EXIT_DIMENSION,
            Error::TooManyAtoms { .. } => EXIT_GUARD,
            Error::ZeroDirection => EXIT_ZERO_DIRECTION,
            _ => EXIT_PARSE,
        };
        Self { code, message: e.to_string() }
    }
}

pub type Outcome = Result<(RunReport, i32), CliError>;

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError { code: EXIT_PARSE, message: format!("{}: {e}", path.display()) })
}

fn load(path: &Path, exact: bool) -> Result<(String, AtomicMeasure), CliError> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| CliError { code: EXIT_PARSE, message: e.to_string() })?;
    Ok((digest(&bytes), parse_measure(&text, exact)?))
}

fn flat_json(f: &SupportFlat) -> Value {
    json!({
        "dim": f.dim,
        "mass": num(f.mass),
        "exact_mass": f.exact_mass.as_ref().map(|m| m.to_string()),
        "atoms": f.atom_indices,
        "basis": matrix(&f.basis),
    })
}

fn kind_name(k: VerdictKind) -> &'static str {
    match k {
        VerdictKind::Stable => "Stable",
        VerdictKind::PolystableNotStable => "PolystableNotStable",
        VerdictKind::SemistableNotPolystable => "SemistableNotPolystable",
        VerdictKind::Unstable => "Unstable",
    }
}

fn verdict_json(v: &StabilityVerdict) -> Value {
    let witness = match &v.witness {
        Witness::Stable { margin, exact_margin } => {
            json!({"type": "stable", "margin": opt(*margin), "exact_margin": exact_margin.as_ref().map(|m| m.to_string())})
        }
        Witness::Unstable { flat, direction, weight } => {
            json!({"type": "destabilizing_flat", "flat": flat_json(flat), "direction": matrix(direction.xi().matrix()), "weight": num(*weight)})
        }
        Witness::Polystable { pieces } => json!({
            "type": "splitting",
            "pieces": pieces.iter().map(|p| json!({"flat": flat_json(&p.flat), "verdict": verdict_json(&p.verdict)})).collect::<Vec<_>>(),
        }),
        Witness::Semistable { tight_flat } => json!({"type": "tight_flat", "flat": flat_json(tight_flat)}),
    };
    json!({
        "kind": kind_name(v.kind),
        "witness": witness,
        "exact": v.exact,
        "needs_exact_mode": v.needs_exact_mode,
        "certified": v.certified(),
    })
}

pub struct ClassifyArgs<'a> {
    pub file: &'a Path,
    pub exact: bool,
    pub tol: Option<f64>,
    pub samples: Option<usize>,
    pub seed: u64,
}

pub fn classify(args: ClassifyArgs) -> Outcome {
    let (input_digest, nu) = load(args.file, args.exact)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut opts = ClassifyOptions::default();
    if let Some(t) = args.tol {
        opts.equality_tol = t;
    }
    let (verdict, sampled) = match classify_with(&nu, &opts) {
        Ok(v) => (v, Value::Null),
        Err(Error::TooManyAtoms { .. }) if args.samples.is_some() => {
            let s = classify_sampled(&nu, args.samples.unwrap_or(0), &mut rng)?;
            let info = json!({"samples": s.samples, "flats_examined": s.flats_examined});
            (s.verdict, info)
        }
        Err(e) => return Err(e.into()),
    };
    let cross = numerical_cross_check(&nu, &verdict, args.samples.unwrap_or(200), &mut rng)?;
    let flats = match support_flats(&nu) {
        Ok(flats) => Value::Array(
            flats
                .iter()
                .map(|f| {
                    let threshold = f.dim as f64 / nu.n_plus_1() as f64;
                    json!({"dim": f.dim, "mass": num(f.mass), "threshold": num(threshold), "slack": num(threshold - f.mass), "atoms": f.atom_indices})
                })
                .collect(),
        ),
        Err(_) => Value::Null,
    };
    let code = match verdict.kind {
        VerdictKind::Stable => 0,
        VerdictKind::PolystableNotStable => 1,
        VerdictKind::SemistableNotPolystable => 2,
        VerdictKind::Unstable => 3,
    };
    let report = RunReport {
        command: "classify",
        input_digest,
        result: verdict_json(&verdict),
        diagnostics: json!({
            "cross_check": serde_json::to_value(&cross).unwrap_or(Value::Null),
            "flats": flats,
            "sampled": sampled,
            "seed": args.seed,
            "equality_tol": num(opts.equality_tol),
        }),
        anchors: json!({
            "verdict": "mass of each proper flat against dim/(n+1); equality cases split into stable pieces",
            "cross_check": "sign of the maximal weight over random, flat-derived and torus directions",
        }),
    };
    Ok((report, code))
}

pub struct BalanceArgs<'a> {
    pub file: &'a Path,
    pub exact: bool,
    pub tol: f64,
    pub max_iter: usize,
    pub trace: Option<&'a Path>,
}

pub fn balance(args: BalanceArgs) -> Outcome {
    let (input_digest, nu) = load(args.file, args.exact)?;
    let opts = BalanceOptions { tol: args.tol, max_iter: args.max_iter, record_trace: args.trace.is_some(), ..BalanceOptions::default() };
    let r = balance_with(&nu, &opts)?;
    if let Some(path) = args.trace {
        let mut out = String::new();
        for e in &r.trace {
            let line = json!({"iteration": e.iteration, "psi": num(e.psi), "residual": num(e.residual), "step": num(e.step)});
            out.push_str(&crate::report::canonical(&line));
            out.push('\n');
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| CliError { code: EXIT_PARSE, message: format!("{}: {e}", path.display()) })?;
    }
    let isotropy = isotropy_check(&nu, &r.g).ok();
    let (status, code) = match r.status {
        BalanceStatus::Converged => ("Converged", 0),
        BalanceStatus::Diverged => ("Diverged", 4),
        BalanceStatus::MaxIterations => ("MaxIterations", 5),
    };
    let report = RunReport {
        command: "balance",
        input_digest,
        result: json!({
            "status": status,
            "g": matrix(r.g.matrix()),
            "residual": num(r.residual),
            "iterations": r.iterations,
            "escape_direction": r.escape_direction.as_ref().map(|d| matrix(d.matrix())),
        }),
        diagnostics: json!({
            "psi": num(r.psi),
            "xi_norm": num(r.xi_norm),
            "isotropy": opt(isotropy),
            "tol": num(args.tol),
            "max_iter": args.max_iter,
        }),
        anchors: json!({
            "residual": "|grad_f(g_* nu)|_F for grad_f(nu) = sum_i w_i mu(x_i)",
            "g": "descent g <- exp(-eta grad_f) g on the Kempf-Ness function",
            "isotropy": "|sum_i w_i y_i y_i^T - Id/(n+1)|_F for y_i = g x_i / |g x_i|",
        }),
    };
    Ok((report, code))
}

pub struct WeightArgs<'a> {
    pub file: &'a Path,
    pub exact: bool,
    pub xi: &'a str,
}

fn load_direction(spectrum: &str, nu: &AtomicMeasure, warnings: &mut Vec<String>) -> Result<TracelessSym, CliError> {
    if let Some(list) = spectrum.strip_prefix("flat:") {
        let indices: Vec<usize> = list
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError { code: EXIT_PARSE, message: format!("bad flat index list {list:?}: {e}") })?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= nu.len()) {
            return Err(CliError { code: EXIT_PARSE, message: format!("atom index {bad} out of range ({} atoms)", nu.len()) });
        }
        let coords: Vec<_> = indices.iter().map(|&i| nu.atoms()[i].point.coords()).collect();
        let (basis, _) = gram_schmidt(&coords, 1e-9);
        return Ok(flat_direction(&basis)?.into_inner());
    }
    let bytes = read(Path::new(spectrum))?;
    let text = String::from_utf8(bytes).map_err(|e| CliError { code: EXIT_PARSE, message: e.to_string() })?;
    let m = parse_matrix(&text)?;
    if m.nrows() != nu.n_plus_1() {
        return Err(Error::DimensionMismatch { expected: nu.n_plus_1(), got: m.nrows() }.into());
    }
    let (xi, adjustment) = TracelessSym::project(m);
    if adjustment > 1e-8 {
        warnings.push(format!("xi was symmetrized and made traceless (adjustment {adjustment:.3e})"));
    }
    Ok(xi)
}

pub fn weight(args: WeightArgs) -> Outcome {
    let (input_digest, nu) = load(args.file, args.exact)?;
    let mut warnings = Vec::new();
    let xi = load_direction(args.xi, &nu, &mut warnings)?;
    let lambda = big_lambda(&nu, &xi)?;
    let unit_weight = maximal_weight(&nu, &xi)?;
    let table = morse_bott(&nu, &xi, default_group_tol(&xi))?;
    let dims = table.spectrum.dims();
    let rows: Vec<Value> = (0..dims.len())
        .map(|j| {
            json!({
                "lambda": num(table.spectrum.eigs[j]),
                "dim": dims[j],
                "critical_value": num(table.critical_values[j]),
                "mass": num(table.unstable_masses[j]),
            })
        })
        .collect();
    let horizon = limit_horizon(&xi)?;
    let limit = numerical_limit_weight(&nu, &xi, horizon)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let report = RunReport {
        command: "weight",
        input_digest,
        result: json!({
            "lambda": num(lambda),
            "maximal_weight": num(unit_weight),
            "table": rows,
            "xi": matrix(xi.matrix()),
        }),
        diagnostics: json!({
            "numerical_limit": {"t": num(horizon), "slope": num(limit), "delta": num((limit - unit_weight).abs())},
            "warnings": warnings,
        }),
        anchors: json!({
            "lambda": "1/2 sum_j lambda_j nu(W_j) for the eigenvalues lambda_j of xi",
            "table": "eigenvalue groups of xi, critical values lambda_j/2, masses nu(W_j) of the unstable manifolds",
            "maximal_weight": "lambda for xi/|xi|_F, the asymptotic slope of Psi(nu, exp(t xi/|xi|))",
        }),
    };
    Ok((report, 0))
}

pub struct ValidateArgs<'a> {
    pub file: &'a Path,
    pub exact: bool,
    pub samples: usize,
    pub seed: u64,
    pub break_cocycle: bool,
}

/// `Psi` rescaled by a factor depending on the measure: still zero at the
/// identity and K-invariant, but no longer a cocycle.
fn broken_psi(nu: &AtomicMeasure, g: &gitstab::SpecialLinear) -> gitstab::Result<f64> {
    let skew: f64 = nu.atoms().iter().map(|a| a.weight * a.point.coords()[0].powi(2)).sum();
    Ok(kn_function(nu, g)? * (1.0 - 0.1 * skew))
}

pub fn validate(args: ValidateArgs) -> Outcome {
    let (input_digest, nu) = load(args.file, args.exact)?;
    let nu = nu.to_float();
    let n = nu.n_plus_1();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut worst: Vec<(&'static str, &'static str, f64, f64)> = Vec::new();
    let mut failure = Value::Null;
    for i in 0..args.samples {
        let inst = AxiomInstance {
            g: random_special_linear(n, 1.5, &mut rng),
            h: random_special_linear(n, 1.5, &mut rng),
            k: random_orthogonal(n, &mut rng),
            xi: random_direction(n, &mut rng),
            t_grid: AxiomInstance::grid(2.0, 41),
        };
        let report = if args.break_cocycle { axiom_residuals_with(&nu, &inst, &broken_psi)? } else { axiom_residuals_with(&nu, &inst, &kn_function)? };
        for r in &report.residuals {
            match worst.iter_mut().find(|w| w.1 == r.check) {
                Some(w) => w.2 = w.2.max(r.residual),
                None => worst.push((r.axiom, r.check, r.residual, r.bound)),
            }
        }
        if let Some(f) = report.first_failure() {
            failure = json!({
                "instance": i,
                "axiom": f.axiom,
                "check": f.check,
                "residual": num(f.residual),
                "bound": num(f.bound),
                "g": matrix(inst.g.matrix()),
                "h": matrix(inst.h.matrix()),
                "k": matrix(inst.k.matrix()),
                "xi": matrix(inst.xi.matrix()),
                "t_grid": inst.t_grid.iter().map(|&t| num(t)).collect::<Vec<_>>(),
            });
            break;
        }
    }
    let passed = failure.is_null();
    let axioms: Vec<Value> = worst
        .iter()
        .map(|(a, c, r, b)| json!({"axiom": a, "check": c, "max_residual": num(*r), "bound": num(*b), "passed": r <= b}))
        .collect();
    let report = RunReport {
        command: "validate",
        input_digest,
        result: json!({"passed": passed, "axioms": axioms, "failure": failure}),
        diagnostics: json!({"samples": args.samples, "seed": args.seed, "break_cocycle": args.break_cocycle}),
        anchors: json!({
            "P1": "Psi(nu, Id) = 0",
            "P2": "Psi(nu, k g) = Psi(nu, g) for orthogonal k",
            "P3": "t -> Psi(nu, exp(t xi)) convex, and flat exactly when exp(t xi) fixes every atom",
            "P4": "Psi(nu, g) + Psi(g_* nu, h) = Psi(nu, h g)",
            "P5": "d/dt Psi(nu, exp(t xi)) at 0 equals <grad_f(nu), xi>",
            "P6": "|d/dt Psi(nu, exp(t xi))| <= 1/2 max |eig(xi)|",
        }),
    };
    Ok((report, if passed { 0 } else { EXIT_AXIOM }))
}
