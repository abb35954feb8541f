//! Versioned JSON inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

use confdim_core::covers::{grid_annulus, EssentialCycles};
use confdim_core::modulus::{CombCurve, Cover, CurveFamily};
use confdim_core::multicurve::{ComponentClass, MulticurveSpec, PreimageComponent};

use crate::CliError;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MulticurveDoc {
    #[allow(dead_code)]
    schema_version: u64,
    curves: Vec<String>,
    #[serde(default)]
    map_degree: Option<u32>,
    preimages: BTreeMap<String, Vec<ComponentDoc>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentDoc {
    degree: u32,
    class: ClassDoc,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ClassDoc {
    Essential(String),
    Peripheral,
    Inessential,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogDoc {
    #[allow(dead_code)]
    schema_version: u64,
    multicurves: Vec<Value>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilyDoc {
    #[allow(dead_code)]
    schema_version: u64,
    #[serde(default)]
    pieces: Option<usize>,
    #[serde(default)]
    curves: Option<Vec<Vec<usize>>>,
    family: FamilyKind,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum FamilyKind {
    Named(String),
    Oracle {
        oracle: String,
        circumference: usize,
        height: usize,
    },
}

/// Where a catalog entry came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Inline,
    File(PathBuf),
}

pub struct FamilyInput {
    pub cover: Cover,
    pub family: CurveFamily,
    pub description: Value,
}

fn schema(origin: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Schema(format!("{origin}: {msg}"))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn check_version(v: &Value, origin: &str) -> Result<(), CliError> {
    match v.get("schema_version") {
        None => Err(schema(origin, "missing field `schema_version`")),
        Some(Value::Number(n)) if n.as_u64() == Some(SCHEMA_VERSION) => Ok(()),
        Some(other) => Err(schema(
            origin,
            format!("unsupported schema_version {other}, expected {SCHEMA_VERSION}"),
        )),
    }
}

/// Parses text in two passes so that syntax errors keep their line and
/// column, and an unknown version is reported before any field error.
fn parse_text<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T, CliError> {
    let raw: Value = serde_json::from_str(text).map_err(|e| schema(origin, e))?;
    if !raw.is_object() {
        return Err(schema(origin, "top level must be an object"));
    }
    check_version(&raw, origin)?;
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| located(origin, e))
}

fn located(origin: &str, e: serde_path_to_error::Error<serde_json::Error>) -> CliError {
    let path = e.path().to_string();
    if path == "." {
        schema(origin, e.into_inner())
    } else {
        schema(origin, format!("{path}: {}", e.into_inner()))
    }
}

fn parse_value<T: DeserializeOwned>(v: Value, origin: &str) -> Result<T, CliError> {
    if !v.is_object() {
        return Err(schema(origin, "expected an object"));
    }
    check_version(&v, origin)?;
    serde_path_to_error::deserialize(v).map_err(|e| located(origin, e))
}

fn build_multicurve(doc: MulticurveDoc, origin: &str) -> Result<MulticurveSpec, CliError> {
    let index = |label: &str| {
        doc.curves
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| schema(origin, format!("unknown curve label `{label}`")))
    };
    if let Some(extra) = doc.preimages.keys().find(|k| !doc.curves.contains(k)) {
        return Err(schema(
            origin,
            format!("preimages: unknown curve label `{extra}`"),
        ));
    }
    let mut preimages = Vec::with_capacity(doc.curves.len());
    for label in &doc.curves {
        let comps = doc
            .preimages
            .get(label)
            .ok_or_else(|| schema(origin, format!("preimages: missing entry for `{label}`")))?;
        let mut out = Vec::with_capacity(comps.len());
        for c in comps {
            let class = match &c.class {
                ClassDoc::Essential(target) => ComponentClass::Essential(index(target)?),
                ClassDoc::Peripheral => ComponentClass::Peripheral,
                ClassDoc::Inessential => ComponentClass::Inessential,
            };
            out.push(PreimageComponent {
                degree: c.degree,
                class,
            });
        }
        preimages.push(out);
    }
    MulticurveSpec::new(doc.curves.clone(), doc.map_degree, preimages)
        .map_err(|e| schema(origin, e))
}

pub fn load_multicurve(path: &Path) -> Result<MulticurveSpec, CliError> {
    let origin = path.display().to_string();
    let doc = parse_text(&read(path)?, &origin)?;
    build_multicurve(doc, &origin)
}

/// Catalog entries are inline objects or paths relative to the catalog file.
pub fn load_catalog(path: &Path) -> Result<Vec<(Source, MulticurveSpec)>, CliError> {
    let origin = path.display().to_string();
    let doc: CatalogDoc = parse_text(&read(path)?, &origin)?;
    if doc.multicurves.is_empty() {
        return Err(CliError::EmptyCatalog);
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    doc.multicurves
        .into_iter()
        .enumerate()
        .map(|(k, entry)| match entry {
            Value::String(rel) => {
                let file = dir.join(&rel);
                Ok((Source::File(PathBuf::from(rel)), load_multicurve(&file)?))
            }
            obj => {
                let at = format!("{origin}: multicurves[{k}]");
                let doc = parse_value(obj, &at)?;
                Ok((Source::Inline, build_multicurve(doc, &at)?))
            }
        })
        .collect()
}

pub fn load_family(path: &Path) -> Result<FamilyInput, CliError> {
    let origin = path.display().to_string();
    let doc: FamilyDoc = parse_text(&read(path)?, &origin)?;
    match doc.family {
        FamilyKind::Named(name) if name == "explicit" => {
            let n = doc
                .pieces
                .ok_or_else(|| schema(&origin, "explicit family needs `pieces`"))?;
            let sets = doc
                .curves
                .ok_or_else(|| schema(&origin, "explicit family needs `curves`"))?;
            let cover = Cover::new(n).map_err(|e| schema(&origin, e))?;
            let curves = sets
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    CombCurve::new(s.iter().copied(), n)
                        .map_err(|e| schema(&origin, format!("curves[{k}]: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if curves.is_empty() {
                return Err(schema(&origin, "curves: family is empty"));
            }
            Ok(FamilyInput {
                cover,
                family: CurveFamily::Explicit(curves),
                description: serde_json::json!({"kind": "explicit", "pieces": n, "curves": sets.len()}),
            })
        }
        FamilyKind::Named(other) => Err(schema(&origin, format!("family: unknown kind `{other}`"))),
        FamilyKind::Oracle {
            oracle,
            circumference,
            height,
        } => {
            if oracle != "annulus" {
                return Err(schema(
                    &origin,
                    format!("family: unknown oracle `{oracle}`"),
                ));
            }
            if doc.curves.is_some() {
                return Err(schema(&origin, "oracle family takes no `curves`"));
            }
            let annulus = grid_annulus(circumference, height).map_err(|e| schema(&origin, e))?;
            if let Some(n) = doc.pieces.filter(|&n| n != annulus.pieces()) {
                return Err(schema(
                    &origin,
                    format!("pieces is {n}, annulus has {}", annulus.pieces()),
                ));
            }
            let oracle = EssentialCycles::new(&annulus).map_err(|e| schema(&origin, e))?;
            Ok(FamilyInput {
                cover: annulus.cover(),
                family: CurveFamily::Oracle(Box::new(oracle)),
                description: serde_json::json!({
                    "kind": "annulus",
                    "circumference": circumference,
                    "height": height,
                    "pieces": annulus.pieces(),
                }),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mc(text: &str) -> Result<MulticurveSpec, CliError> {
        let doc = parse_text(text, "t")?;
        build_multicurve(doc, "t")
    }

    #[test]
    fn documented_example_parses() {
        let spec = mc(r#"{ "schema_version": 1,
            "curves": ["g1", "g2"],
            "map_degree": 4,
            "preimages": {
              "g1": [ {"degree": 2, "class": {"essential": "g1"}},
                      {"degree": 2, "class": "peripheral"} ],
              "g2": [ {"degree": 4, "class": "inessential"} ] } }"#)
        .unwrap();
        assert_eq!(spec.len(), 2);
        assert_eq!(spec.preimages(0)[0], PreimageComponent::essential(2, 0));
        assert_eq!(spec.preimages(1)[0], PreimageComponent::inessential(4));
    }

    #[test]
    fn version_is_checked_first() {
        let err = mc(r#"{"schema_version": 2, "bogus": true}"#).unwrap_err();
        assert!(
            err.to_string().contains("unsupported schema_version 2"),
            "{err}"
        );
        let err = mc(r#"{"curves": []}"#).unwrap_err();
        assert!(err.to_string().contains("schema_version"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = mc("{\n  \"schema_version\": 1,\n  \"curves\": [\"a\",]\n}").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn labels_must_resolve() {
        let err = mc(r#"{"schema_version": 1, "curves": ["a"],
            "preimages": {"a": [{"degree": 2, "class": {"essential": "b"}}]}}"#)
        .unwrap_err();
        assert!(err.to_string().contains("`b`"), "{err}");
        let err = mc(r#"{"schema_version": 1, "curves": ["a"], "preimages": {}}"#).unwrap_err();
        assert!(err.to_string().contains("missing entry"), "{err}");
    }

    #[test]
    fn unknown_fields_rejected() {
        let err = mc(r#"{"schema_version": 1, "curves": ["a"], "extra": 1,
            "preimages": {"a": [{"degree": 2, "class": "peripheral"}]}}"#)
        .unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
    }
}
