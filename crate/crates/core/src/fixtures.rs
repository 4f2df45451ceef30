//! Hand-built functions used across tests, the acceptance suite and demos.

use crate::pcode::{Arch, FunctionMeta, Opcode, PCodeFunction, PCodeOp, Varnode};

pub fn meta() -> FunctionMeta {
    FunctionMeta {
        project: "fixture".into(),
        optimization: "O0".into(),
        obfuscation: "none".into(),
    }
}

/// Two-block miniature: arithmetic, a load feeding a call and a store
/// through a register, then a return.
pub fn two_block() -> PCodeFunction {
    let b0 = vec![
        PCodeOp::new(
            0,
            Opcode::IntSub,
            Some(Varnode::unique(0x100, 8)),
            vec![Varnode::register(0x20, 8), Varnode::constant(0x10, 8)],
        ),
        PCodeOp::new(
            1,
            Opcode::Load,
            Some(Varnode::register(0, 8)),
            vec![Varnode::unique(0x100, 8)],
        ),
        PCodeOp::new(2, Opcode::Branch, None, vec![Varnode::ram(0x401000, 8)]),
    ];
    let b1 = vec![
        PCodeOp::new(
            0,
            Opcode::Call,
            None,
            vec![Varnode::library("memcpy", 0x8), Varnode::register(0, 8)],
        ),
        PCodeOp::new(
            1,
            Opcode::Store,
            None,
            vec![
                Varnode::constant(0x1b1, 8),
                Varnode::register(0x20, 8),
                Varnode::register(0, 8),
            ],
        ),
        PCodeOp::new(2, Opcode::Return, None, vec![Varnode::constant(0, 8)]),
    ];
    PCodeFunction::from_blocks("mini", Arch::X86, meta(), vec![(b0, vec![1]), (b1, vec![])])
        .unwrap()
}

/// Seven-block CFG of the motivating example, one RETURN/BRANCH per block.
pub fn motivating() -> PCodeFunction {
    let succ = motivating_cfg();
    let blocks = succ
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let term = match s.len() {
                0 => PCodeOp::new(1, Opcode::Return, None, vec![Varnode::constant(0, 8)]),
                1 => PCodeOp::new(1, Opcode::Branch, None, vec![Varnode::ram(0x1000 + i as u64, 8)]),
                _ => PCodeOp::new(
                    1,
                    Opcode::CBranch,
                    None,
                    vec![Varnode::ram(0x1000 + i as u64, 8), Varnode::register(0x206, 1)],
                ),
            };
            let body = PCodeOp::new(
                0,
                Opcode::IntAdd,
                Some(Varnode::register(0, 8)),
                vec![Varnode::register(0, 8), Varnode::constant(i as u64, 8)],
            );
            (vec![body, term], s)
        })
        .collect();
    PCodeFunction::from_blocks("motivating", Arch::X86, meta(), blocks).unwrap()
}


/// CFG matching the motivating example: v0 dominates v1, v2, v6 and v2
/// dominates v3, v4, v5; v6 post-dominates v0, v1, v5 and v5
/// post-dominates v2, v3, v4. Successor order makes reverse postorder
/// the identity, so the numbering survives [`PCodeFunction::assemble`].
///
/// [`PCodeFunction::assemble`]: crate::pcode::PCodeFunction::assemble
pub fn motivating_cfg() -> Vec<Vec<usize>> {
    vec![
        vec![2, 1],
        vec![6],
        vec![4, 3],
        vec![5],
        vec![5],
        vec![6],
        vec![],
    ]
}
