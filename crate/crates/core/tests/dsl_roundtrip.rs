//! Printing a parsed expression and parsing it again gives the same tree.

use proptest::prelude::*;

use dtstab::dsl::{parse_expression, parse_number, Dims, Env, Expr};

fn leaf() -> impl Strategy<Value = String> {
    prop_oneof![
        (0u32..1000).prop_map(|v| v.to_string()),
        (0.0f64..1e6).prop_map(|v| format!("{v:?}")),
        Just("t".to_string()),
        Just("x1".to_string()),
        Just("x2".to_string()),
        Just("d1".to_string()),
        Just("u1".to_string()),
        Just("pi".to_string()),
        Just("e".to_string()),
    ]
}

fn expr_text() -> impl Strategy<Value = String> {
    leaf().prop_recursive(4, 48, 3, |inner| {
        prop_oneof![
            (
                inner.clone(),
                inner.clone(),
                prop::sample::select(vec!["+", "-", "*", "/", "^"])
            )
                .prop_map(|(a, b, op)| format!("({a}){op}({b})")),
            (
                inner.clone(),
                inner.clone(),
                prop::sample::select(vec!["+", "-", "*"])
            )
                .prop_map(|(a, b, op)| format!("{a}{op}{b}")),
            inner.clone().prop_map(|a| format!("-{a}")),
            (
                prop::sample::select(vec!["exp", "log", "abs", "sqrt", "sign"]),
                inner.clone()
            )
                .prop_map(|(f, a)| format!("{f}({a})")),
            (
                prop::sample::select(vec!["min", "max", "pow"]),
                inner.clone(),
                inner
            )
                .prop_map(|(f, a, b)| format!("{f}({a}, {b})")),
        ]
    })
}

fn dims() -> Dims {
    Dims::new(2, 1, 1)
}

proptest! {
    #[test]
    fn print_then_parse_is_identity(text in expr_text()) {
        let e = parse_expression(&text, &dims()).unwrap();
        let printed = e.to_string();
        let back = parse_expression(&printed, &dims()).unwrap();
        prop_assert_eq!(&back, &e, "printed as {}", printed);
        prop_assert_eq!(back.to_string(), printed);
    }

    #[test]
    fn reparsed_tree_evaluates_identically(text in expr_text(), t in 0u32..50, x1 in -10.0f64..10.0, x2 in -10.0f64..10.0) {
        let e = parse_expression(&text, &dims()).unwrap();
        let back = parse_expression(&e.to_string(), &dims()).unwrap();
        let (x, d, u) = ([x1, x2], [0.5], [-1.0]);
        let env = Env::new(f64::from(t), &x, &d, &u);
        match (e.eval(&env), back.eval(&env)) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.to_bits(), b.to_bits()),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn literals_round_trip(v in prop::num::f64::POSITIVE | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL) {
        let printed = Expr::num(v).to_string();
        prop_assert_eq!(parse_number(&printed).unwrap().to_bits(), v.to_bits());
    }
}
