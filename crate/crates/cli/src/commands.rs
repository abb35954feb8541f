use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use confdim_core::covers::{
    grid_annulus, lattes_model, quasipacking_check, refine, verify_covering_scaling,
    verify_growth_bound,
};
use confdim_core::modulus::{
    beurling_check, modulus_with, verify_monotonicity, verify_subadditivity, CombCurve, Cover,
    CurveFamily, Init, ModulusResult, SolverOptions,
};
use confdim_core::multicurve::{
    detect_levy_cycles, leading_eigenvalue, q_of_map, q_of_multicurve, QKind, QResult,
};

use crate::args::{
    GrowthArgs, ModulusArgs, PackArgs, PropsArgs, QGammaArgs, QMapArgs, ScalingArgs,
};
use crate::emit::{Cell, Report, Table};
use crate::schema::{self, Source};
use crate::{CliError, Status};

pub type Outcome = (Report, Status);

fn kind_name(kind: &QKind) -> &'static str {
    match kind {
        QKind::Finite(_) => "finite",
        QKind::Zero => "zero",
        QKind::LevyObstructed => "levy_obstructed",
    }
}

fn q_fields(r: &QResult, obj: &mut Map<String, Value>) {
    obj.insert("kind".into(), kind_name(&r.kind).into());
    if let Some(q) = r.q() {
        obj.insert("q".into(), q.into());
    }
    obj.insert("achieved_lambda".into(), r.achieved_lambda.into());
    obj.insert("iterations".into(), r.iterations.into());
}

pub fn q_gamma(a: &QGammaArgs) -> Result<Outcome, CliError> {
    let spec = schema::load_multicurve(&a.input)?;
    let r = q_of_multicurve(&spec, a.tol)?;
    let mut obj = Map::new();
    q_fields(&r, &mut obj);
    let cycles = detect_levy_cycles(&spec);
    if !cycles.is_empty() {
        let named: Vec<Vec<&str>> = cycles
            .iter()
            .map(|c| c.iter().map(|&k| spec.curves()[k].as_str()).collect())
            .collect();
        obj.insert("levy_cycles".into(), json!(named));
    }

    let table = match a.exponents.values() {
        Some(qs) => {
            let mut t = Table::new(&["q", "lambda"]);
            let mut samples = Vec::with_capacity(qs.len());
            for q in qs {
                let lambda = leading_eigenvalue(&spec, q, a.tol)?;
                t.push(vec![q.into(), lambda.into()]);
                samples.push(json!({"q": q, "lambda": lambda}));
            }
            obj.insert("lambda".into(), Value::Array(samples));
            t
        }
        None => {
            let mut t = Table::new(&["kind", "q", "achieved_lambda", "iterations"]);
            t.push(vec![
                kind_name(&r.kind).into(),
                r.q().into(),
                r.achieved_lambda.into(),
                r.iterations.into(),
            ]);
            t
        }
    };
    let status = if r.kind == QKind::LevyObstructed {
        Status::Levy
    } else {
        Status::Ok
    };
    Ok((
        Report {
            json: Value::Object(obj),
            table,
        },
        status,
    ))
}

pub fn q_map(a: &QMapArgs) -> Result<Outcome, CliError> {
    let catalog = schema::load_catalog(&a.input)?;
    let specs: Vec<_> = catalog.iter().map(|(_, s)| s.clone()).collect();
    let report = q_of_map(&specs, a.tol)?;

    let mut t = Table::new(&[
        "index",
        "source",
        "kind",
        "q",
        "achieved_lambda",
        "iterations",
    ]);
    let mut entries = Vec::with_capacity(specs.len());
    for (k, ((source, spec), r)) in catalog.iter().zip(&report.results).enumerate() {
        let source = match source {
            Source::Inline => "inline".to_string(),
            Source::File(p) => p.display().to_string(),
        };
        let mut obj = Map::new();
        obj.insert("index".into(), k.into());
        obj.insert("source".into(), source.clone().into());
        obj.insert("curves".into(), json!(spec.curves()));
        q_fields(r, &mut obj);
        entries.push(Value::Object(obj));
        t.push(vec![
            k.into(),
            Cell::Text(source),
            kind_name(&r.kind).into(),
            r.q().into(),
            r.achieved_lambda.into(),
            r.iterations.into(),
        ]);
    }
    t.push(vec![
        Cell::Text("overall".into()),
        Cell::Empty,
        "conformal_dimension_lower_bound".into(),
        report.overall.into(),
        Cell::Empty,
        Cell::Empty,
    ]);
    let json = json!({
        "conformal_dimension_lower_bound": report.overall,
        "levy_obstructed": report.levy_obstructed,
        "multicurves": entries,
    });
    let status = if report.has_levy() {
        Status::Levy
    } else {
        Status::Ok
    };
    Ok((Report { json, table: t }, status))
}

fn curve_sets(curves: &[CombCurve]) -> Value {
    json!(curves.iter().map(|c| c.indices()).collect::<Vec<_>>())
}

fn modulus_json(q: f64, r: &ModulusResult) -> Map<String, Value> {
    let mut obj = Map::new();
    obj.insert("q".into(), q.into());
    obj.insert("value".into(), r.value.into());
    obj.insert("lower_bound".into(), r.lower_bound.into());
    obj.insert("min_length".into(), r.min_length.into());
    obj.insert("optimizer".into(), json!(r.optimizer.values()));
    let cert = r.certificate.as_ref().map_or(Value::Null, |c| {
        json!({
            "active_curves": curve_sets(&c.active_curves),
            "multipliers": c.multipliers,
            "kkt_residual": c.kkt_residual,
        })
    });
    obj.insert("certificate".into(), cert);
    obj.insert("constraints".into(), r.constraints.len().into());
    obj.insert("rounds".into(), r.rounds.into());
    obj.insert("newton_steps".into(), r.newton_steps.into());
    obj
}

pub fn modulus(a: &ModulusArgs) -> Result<Outcome, CliError> {
    let qs = a
        .exponents
        .values()
        .ok_or_else(|| CliError::Usage("modulus needs --q or --q-grid".into()))?;
    let input = schema::load_family(&a.input)?;
    let opts = SolverOptions {
        tol: a.tol,
        init: a.seed.map_or(Init::Uniform, Init::Seeded),
    };
    let single = qs.len() == 1;
    let mut t = if single {
        Table::new(&["piece", "weight"])
    } else {
        Table::new(&["q", "piece", "weight"])
    };
    let mut results = Vec::with_capacity(qs.len());
    for q in qs {
        let r = modulus_with(&input.cover, &input.family, q, opts)?;
        for (piece, &w) in r.optimizer.values().iter().enumerate() {
            if single {
                t.push(vec![piece.into(), w.into()]);
            } else {
                t.push(vec![q.into(), piece.into(), w.into()]);
            }
        }
        results.push(modulus_json(q, &r));
    }
    let json = if single {
        let mut obj = Map::new();
        obj.insert("family".into(), input.description);
        obj.extend(results.pop().expect("one exponent"));
        Value::Object(obj)
    } else {
        json!({"family": input.description, "results": results})
    };
    Ok((Report { json, table: t }, Status::Ok))
}

fn suite(name: &str, cases: Vec<Value>, table: Table, pass: bool) -> Outcome {
    let json = json!({"suite": name, "pass": pass, "cases": cases});
    (
        Report { json, table },
        if pass { Status::Ok } else { Status::Failed },
    )
}

pub fn scaling_check(a: &ScalingArgs) -> Result<Outcome, CliError> {
    let qs = a.exponents.values().unwrap_or_else(|| vec![2.0]);
    let mut t = Table::new(&[
        "circumference",
        "height",
        "degree",
        "q",
        "base",
        "cover",
        "ratio",
        "expected",
        "rel_error",
        "pass",
    ]);
    let mut cases = Vec::new();
    let mut all = true;
    for &c in &a.circumference {
        for &h in &a.height {
            let annulus = grid_annulus(c, h).map_err(|e| CliError::Usage(e.to_string()))?;
            for &d in &a.degree {
                for &q in &qs {
                    let r = verify_covering_scaling(&annulus, d, q, a.tol)?;
                    all &= r.pass;
                    t.push(vec![
                        c.into(),
                        h.into(),
                        d.into(),
                        q.into(),
                        r.base.into(),
                        r.cover.into(),
                        r.ratio.into(),
                        r.expected.into(),
                        r.rel_error.into(),
                        r.pass.into(),
                    ]);
                    cases.push(serde_json::to_value(&r).expect("report serializes"));
                }
            }
        }
    }
    Ok(suite("scaling-check", cases, t, all))
}

pub fn growth_check(a: &GrowthArgs) -> Result<Outcome, CliError> {
    let qs = a.exponents.values().unwrap_or_else(|| vec![2.0]);
    let model = lattes_model(a.levels)?;
    let mut t = Table::new(&[
        "q",
        "n",
        "level",
        "annuli",
        "left",
        "right",
        "scaling_error",
        "pass",
    ]);
    let mut cases = Vec::new();
    let mut all = true;
    for q in qs {
        let r = verify_growth_bound(&model.dynamics, &model.spec, q, a.levels, a.tol)?;
        all &= r.pass;
        for row in &r.rows {
            t.push(vec![
                q.into(),
                row.n.into(),
                row.level.into(),
                row.annuli.into(),
                row.left.into(),
                row.right.into(),
                row.scaling_error.into(),
                row.pass.into(),
            ]);
        }
        cases.push(serde_json::to_value(&r).expect("report serializes"));
    }
    Ok(suite("growth-check", cases, t, all))
}

/// Uniformity means the same `K` at every level.
const PACK_SPREAD: f64 = 1e-12;

pub fn pack_check(a: &PackArgs) -> Result<Outcome, CliError> {
    let mut cover =
        grid_annulus(a.circumference, a.height).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut t = Table::new(&["level", "pieces", "k", "conflict", "pass"]);
    let mut cases = Vec::new();
    let mut all = true;
    let mut k0 = None;
    for level in 0..=a.levels {
        if level > 0 {
            cover = refine(&cover, 2)?;
        }
        let r = quasipacking_check(&cover);
        let k0 = *k0.get_or_insert(r.k);
        let pass = r.pass && (r.k - k0).abs() <= PACK_SPREAD;
        all &= pass;
        let conflict = r.conflict.map(|(x, y)| format!("{x}-{y}"));
        t.push(vec![
            level.into(),
            cover.pieces().into(),
            r.k.into(),
            conflict.clone().map_or(Cell::Empty, Cell::Text),
            pass.into(),
        ]);
        cases.push(json!({
            "level": level,
            "pieces": cover.pieces(),
            "k": r.k,
            "conflict": r.conflict,
            "pass": pass,
        }));
    }
    Ok(suite("pack-check", cases, t, all))
}

fn random_family(n: usize, rng: &mut ChaCha8Rng) -> Vec<CombCurve> {
    let k = rng.gen_range(1..=3);
    let mut out: Vec<CombCurve> = Vec::with_capacity(k);
    while out.len() < k {
        let mut set: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.4)).collect();
        if set.is_empty() {
            set.push(rng.gen_range(0..n));
        }
        let c = CombCurve::new(set, n).expect("indices in range");
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

pub fn props(a: &PropsArgs) -> Result<Outcome, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut t = Table::new(&["case", "pieces", "q", "property", "lhs", "rhs", "pass"]);
    let mut cases = Vec::new();
    let mut all = true;
    let mut row = |t: &mut Table,
                   case: usize,
                   n: usize,
                   q: f64,
                   name: &str,
                   lhs: f64,
                   rhs: f64,
                   pass: bool| {
        all &= pass;
        t.push(vec![
            case.into(),
            n.into(),
            q.into(),
            name.into(),
            lhs.into(),
            rhs.into(),
            pass.into(),
        ]);
        json!({"property": name, "lhs": lhs, "rhs": rhs, "pass": pass})
    };
    for case in 0..a.cases {
        let n = rng.gen_range(4..=10);
        let q = rng.gen_range(1.2..4.0);
        let cover = Cover::new(n).expect("n > 0");
        let f1 = random_family(n, &mut rng);
        let f2 = random_family(n, &mut rng);
        let mut union = f1.clone();
        union.extend(f2.iter().filter(|c| !f1.contains(c)).cloned());

        let mono = verify_monotonicity(&cover, &f1, &union, q, a.tol)?;
        let sub = verify_subadditivity(&cover, &[f1.clone(), f2.clone()], q, a.tol)?;
        let opt = modulus_with(
            &cover,
            &CurveFamily::Explicit(union.clone()),
            q,
            SolverOptions {
                tol: a.tol,
                init: Init::Uniform,
            },
        )?;
        let cert = beurling_check(&cover, &union, &opt.optimizer, q, a.tol)?;

        let checks = vec![
            row(
                &mut t,
                case,
                n,
                q,
                "monotonicity",
                mono.smaller,
                mono.larger,
                mono.holds,
            ),
            row(
                &mut t,
                case,
                n,
                q,
                "subadditivity",
                sub.union_modulus,
                sub.sum,
                sub.subadditive && sub.additive_when_disjoint,
            ),
            row(
                &mut t,
                case,
                n,
                q,
                "optimality",
                cert.residual,
                a.tol,
                cert.success,
            ),
        ];
        cases.push(json!({
            "case": case,
            "pieces": n,
            "q": q,
            "families": [curve_sets(&f1), curve_sets(&f2)],
            "supports_disjoint": sub.supports_disjoint,
            "checks": checks,
        }));
    }
    Ok(suite("props", cases, t, all))
}
