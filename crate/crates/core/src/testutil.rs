//! Shared model fixtures for unit tests.

use crate::dist::Distribution;
use crate::expr::Expr;
use crate::scm::{Assignment, CausalModel, Domain, StructuralLaw};
use crate::tabular::Tabular;
use crate::value::Value;

pub fn assignment(pairs: &[(&str, f64)]) -> Assignment {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), Value::num(*v)))
        .collect()
}

fn law(target: &str, expr: Expr) -> StructuralLaw {
    StructuralLaw {
        target: target.to_string(),
        expr,
    }
}

/// X := U_X, Y := X + U_Y, Z := X + Y + U_Z over the real line.
pub fn chain_model() -> CausalModel {
    CausalModel::new(
        vec![
            ("U_X".to_string(), Domain::RealLine),
            ("U_Y".to_string(), Domain::RealLine),
            ("U_Z".to_string(), Domain::RealLine),
        ],
        vec![
            ("X".to_string(), Domain::RealLine),
            ("Y".to_string(), Domain::RealLine),
            ("Z".to_string(), Domain::RealLine),
        ],
        vec![
            law("X", Expr::var("U_X")),
            law("Y", Expr::add(Expr::var("X"), Expr::var("U_Y"))),
            law(
                "Z",
                Expr::add(
                    Expr::add(Expr::var("X"), Expr::var("Y")),
                    Expr::var("U_Z"),
                ),
            ),
        ],
    )
    .unwrap()
}

pub fn standard_chain_prior() -> Distribution {
    Distribution::Gaussian(crate::gaussian::Gaussian::standard(vec![
        "U_X".to_string(),
        "U_Y".to_string(),
        "U_Z".to_string(),
    ]))
}

/// Court order U, captain C:=U, riflemen A:=C, B:=C, prisoner P:=A|B.
pub fn firing_squad(theta: f64) -> (CausalModel, Distribution) {
    let bool_dom = || Domain::Finite(vec![Value::num(0.0), Value::num(1.0)]);
    let model = CausalModel::new(
        vec![("U".to_string(), bool_dom())],
        vec![
            ("C".to_string(), bool_dom()),
            ("A".to_string(), bool_dom()),
            ("B".to_string(), bool_dom()),
            ("P".to_string(), bool_dom()),
        ],
        vec![
            law("C", Expr::var("U")),
            law("A", Expr::var("C")),
            law("B", Expr::var("C")),
            law("P", Expr::or(Expr::var("A"), Expr::var("B"))),
        ],
    )
    .unwrap();
    let prior = Distribution::Tabular(
        Tabular::new(
            vec!["U".to_string()],
            vec![
                (vec![Value::num(0.0)], 1.0 - theta),
                (vec![Value::num(1.0)], theta),
            ],
        )
        .unwrap(),
    );
    (model, prior)
}

/// X := U_X, Y := X — deterministic copy, for counterlegal antecedents.
pub fn copy_model() -> CausalModel {
    CausalModel::new(
        vec![("U_X".to_string(), Domain::RealLine)],
        vec![
            ("X".to_string(), Domain::RealLine),
            ("Y".to_string(), Domain::RealLine),
        ],
        vec![law("X", Expr::var("U_X")), law("Y", Expr::var("X"))],
    )
    .unwrap()
}
