mod common;

use proptest::prelude::*;

use offload_core::cpu::execute;
use offload_core::ir::{
    parse_program, parse_program_json, print_program, validate, AffineExpr, ArrayAccess, BinOp, Expr, KernelFunction, Loop,
    Node, Param, Program, ScalarType, Stmt,
};
use offload_core::ir::Direction;

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (-5i64..5).prop_map(Expr::Int),
        prop::num::f64::NORMAL.prop_map(Expr::Float),
        Just(Expr::Float(-0.0)),
        Just(Expr::var("x")),
        (-3i64..3, -2i64..3).prop_map(|(c, k)| {
            let mut a = AffineExpr::constant(c);
            a.add_term("i", k);
            Expr::Load(ArrayAccess::affine("A", vec![a]))
        }),
    ]
}

const OPS: [BinOp; 12] = [
    BinOp::Add,
    BinOp::Sub,
    BinOp::Mul,
    BinOp::Div,
    BinOp::Min,
    BinOp::Max,
    BinOp::Lt,
    BinOp::Le,
    BinOp::Gt,
    BinOp::Ge,
    BinOp::Eq,
    BinOp::Ne,
];

fn expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(4, 32, 3, |inner| {
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (0..OPS.len(), inner.clone(), inner.clone()).prop_map(|(o, a, b)| Expr::bin(OPS[o], a, b)),
            (inner.clone(), inner.clone(), inner).prop_map(|(c, a, b)| Expr::select(c, a, b)),
        ]
    })
}

fn wrap(e: Expr) -> Program {
    let body = Node::Loop(Loop {
        index: "i".into(),
        lower: AffineExpr::constant(0),
        upper: AffineExpr::var("n"),
        step: 1,
        locals: vec![],
        body: vec![Node::Stmt(Stmt::store(ArrayAccess::affine("A", vec![AffineExpr::var("i")]), e))],
    });
    Program {
        functions: vec![KernelFunction {
            name: "f".into(),
            params: vec![
                Param::scalar("n", ScalarType::Int),
                Param::scalar("x", ScalarType::Float),
                Param::array("A", ScalarType::Float, Direction::InOut, vec![AffineExpr::var("n")]),
            ],
            locals: vec![],
            body: vec![body],
        }],
        entry: Some("f".into()),
        ..Default::default()
    }
}

fn programs_equal(a: &Program, b: &Program) -> bool {
    // Float literals compare by bit pattern so that -0.0 and NaN payloads count.
    format!("{a:?}") == format!("{b:?}")
}

proptest! {
    #[test]
    fn expression_round_trip(e in expr()) {
        let p = wrap(e);
        let text = print_program(&p);
        let back = parse_program(&text).map_err(|err| TestCaseError::fail(format!("{err}\n{text}")))?;
        prop_assert!(programs_equal(&p, &back), "{}", text);
    }

    #[test]
    fn kernel_text_and_json_round_trip(seed in any::<u64>()) {
        let g = common::random_kernel(seed);
        let p = parse_program(&g.source).unwrap();
        let text = print_program(&p);
        prop_assert_eq!(&parse_program(&text).unwrap(), &p);
        let json = serde_json::to_string(&p).unwrap();
        prop_assert_eq!(&parse_program_json(&json).unwrap(), &p);
    }

    #[test]
    fn validated_kernels_execute(seed in any::<u64>()) {
        let g = common::random_kernel(seed);
        let p = parse_program(&g.source).unwrap();
        prop_assert!(validate(&p).is_valid(), "{}", validate(&p));
        prop_assert!(execute(&g.function, &g.args(seed)).is_ok());
    }
}

#[test]
fn negative_literals_keep_their_form() {
    for e in [Expr::Float(-1.5), Expr::Neg(Box::new(Expr::Float(1.5))), Expr::Int(-3), Expr::Neg(Box::new(Expr::Int(3)))] {
        let p = wrap(e);
        let back = parse_program(&print_program(&p)).unwrap();
        assert!(programs_equal(&p, &back), "{}", print_program(&p));
    }
}
