//! Seeded random functions and graph-level obfuscation transforms.
//!
//! The transforms imitate the shape of compiler-level obfuscation on the
//! lifted representation: `sub` rewrites arithmetic into longer equivalent
//! sequences, `bcf` guards blocks with opaque predicates that always take the
//! original path, and `fla` routes every transfer through a dispatcher block.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index::sample, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pcode::{
    Arch, FunctionMeta, Opcode, PCodeFunction, PCodeOp, RawBlock, Space, Varnode,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObfMode {
    Sub,
    Bcf,
    Fla,
    All,
}

impl ObfMode {
    pub const ALL: [ObfMode; 4] = [ObfMode::Sub, ObfMode::Bcf, ObfMode::Fla, ObfMode::All];

    pub fn tag(self) -> &'static str {
        match self {
            ObfMode::Sub => "sub",
            ObfMode::Bcf => "bcf",
            ObfMode::Fla => "fla",
            ObfMode::All => "all",
        }
    }
}

impl fmt::Display for ObfMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ObfMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObfMode::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown obfuscation mode `{s}`")))
    }
}

/// Obfuscation tag of unmodified functions.
pub const ORIGINAL_TAG: &str = "none";

/// Shape of generated functions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub min_blocks: usize,
    pub max_blocks: usize,
    /// Non-terminator ops per block.
    pub min_ops: usize,
    pub max_ops: usize,
    pub arch: Arch,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            min_blocks: 3,
            max_blocks: 12,
            min_ops: 2,
            max_ops: 7,
            arch: Arch::X86,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_blocks == 0 || self.min_blocks > self.max_blocks || self.min_ops > self.max_ops {
            return Err(Error::InvalidArgument(format!("bad synthetic function shape: {self:?}")));
        }
        Ok(())
    }
}

const LIBRARY: [&str; 8] = [
    "memcpy", "strlen", "malloc", "free", "printf", "memset", "strcmp", "fopen",
];

fn registers(arch: Arch) -> Vec<Varnode> {
    let base = match arch {
        Arch::X86 => 0,
        Arch::Arm => 0x4000,
    };
    (0..8).map(|i| Varnode::register(base + 8 * i, 8)).collect()
}

fn flag(arch: Arch) -> Varnode {
    match arch {
        Arch::X86 => Varnode::register(0x206, 1),
        Arch::Arm => Varnode::register(0x100, 1),
    }
}

const RAM_BASE: u64 = 0x401000;

/// Hands out unique-space temporaries above every offset already in use.
struct Fresh(u64);

impl Fresh {
    fn above(f: &PCodeFunction) -> Self {
        let max = f
            .blocks()
            .iter()
            .flat_map(|b| &b.ops)
            .flat_map(|op| op.output.iter().chain(&op.inputs))
            .filter(|v| v.space == Space::Unique)
            .map(|v| v.offset + u64::from(v.size))
            .max()
            .unwrap_or(0);
        Fresh((max + 0xff) & !0xff)
    }

    fn next(&mut self, size: u32) -> Varnode {
        let v = Varnode::unique(self.0, size);
        self.0 += 0x10;
        v
    }
}

fn renumber(ops: &mut [PCodeOp]) {
    for (i, op) in ops.iter_mut().enumerate() {
        op.seq = i as u32;
    }
}

fn op(opcode: Opcode, output: Option<Varnode>, inputs: Vec<Varnode>) -> PCodeOp {
    PCodeOp::new(0, opcode, output, inputs)
}

fn random_body(rng: &mut impl Rng, arch: Arch, count: usize, fresh: &mut Fresh) -> Vec<PCodeOp> {
    let regs = registers(arch);
    let mut recent: Vec<Varnode> = Vec::new();
    let mut ops = Vec::with_capacity(count);
    let pick_value = |rng: &mut dyn rand::RngCore, recent: &[Varnode]| -> Varnode {
        if !recent.is_empty() && rng.gen_bool(0.6) {
            recent[rng.gen_range(0..recent.len())].clone()
        } else {
            regs[rng.gen_range(0..regs.len())].clone()
        }
    };
    for _ in 0..count {
        let r = rng.gen_range(0..100);
        let o = if r < 45 {
            let opcode = *[
                Opcode::IntAdd,
                Opcode::IntSub,
                Opcode::IntXor,
                Opcode::IntAnd,
                Opcode::IntOr,
                Opcode::IntMult,
                Opcode::IntLeft,
            ]
            .choose(rng)
            .expect("non-empty");
            let a = pick_value(rng, &recent);
            let b = if rng.gen_bool(0.5) {
                Varnode::constant(rng.gen_range(1..64), 8)
            } else {
                pick_value(rng, &recent)
            };
            let out = if rng.gen_bool(0.5) {
                fresh.next(8)
            } else {
                regs[rng.gen_range(0..regs.len())].clone()
            };
            op(opcode, Some(out), vec![a, b])
        } else if r < 60 {
            let out = fresh.next(8);
            op(
                Opcode::Load,
                Some(out),
                vec![Varnode::constant(0x1b1, 8), pick_value(rng, &recent)],
            )
        } else if r < 72 {
            op(
                Opcode::Store,
                None,
                vec![
                    Varnode::constant(0x1b1, 8),
                    regs[rng.gen_range(0..regs.len())].clone(),
                    pick_value(rng, &recent),
                ],
            )
        } else if r < 85 {
            let src = if rng.gen_bool(0.5) {
                Varnode::constant(rng.gen_range(0..256), 8)
            } else {
                pick_value(rng, &recent)
            };
            op(Opcode::Copy, Some(regs[rng.gen_range(0..regs.len())].clone()), vec![src])
        } else {
            let sym = LIBRARY[rng.gen_range(0..LIBRARY.len())];
            op(
                Opcode::Call,
                None,
                vec![Varnode::library(sym, 0x1000 + 8 * rng.gen_range(0..64)), pick_value(rng, &recent)],
            )
        };
        if let Some(out) = &o.output {
            recent.push(out.clone());
        }
        ops.push(o);
    }
    ops
}

fn terminator(rng: &mut impl Rng, arch: Arch, block: usize, succ: usize) -> Vec<PCodeOp> {
    let target = Varnode::ram(RAM_BASE + 0x10 * block as u64, 8);
    match succ {
        0 => vec![op(Opcode::Return, None, vec![Varnode::constant(0, 8)])],
        1 => vec![op(Opcode::Branch, None, vec![target])],
        _ => {
            let regs = registers(arch);
            let cmp = *[Opcode::IntLess, Opcode::IntEqual, Opcode::IntSLess]
                .choose(rng)
                .expect("non-empty");
            vec![
                op(
                    cmp,
                    Some(flag(arch)),
                    vec![
                        regs[rng.gen_range(0..regs.len())].clone(),
                        Varnode::constant(rng.gen_range(0..32), 8),
                    ],
                ),
                op(Opcode::CBranch, None, vec![target, flag(arch)]),
            ]
        }
    }
}

/// A random function with a chain backbone plus forward branches and loops,
/// so every block is reachable and the last block returns.
pub fn random_function(
    name: impl Into<String>,
    meta: FunctionMeta,
    spec: &SynthSpec,
    rng: &mut impl Rng,
) -> Result<PCodeFunction> {
    spec.validate()?;
    let n = rng.gen_range(spec.min_blocks..=spec.max_blocks);
    let mut fresh = Fresh(0);
    let mut blocks = Vec::with_capacity(n);
    for i in 0..n {
        let succ: Vec<usize> = if i + 1 == n {
            vec![]
        } else {
            let r = rng.gen_range(0..100);
            if r < 30 && i + 2 < n {
                vec![rng.gen_range(i + 2..n), i + 1]
            } else if r < 42 {
                vec![i + 1, rng.gen_range(0..=i)]
            } else {
                vec![i + 1]
            }
        };
        let count = rng.gen_range(spec.min_ops..=spec.max_ops);
        let mut ops = random_body(rng, spec.arch, count, &mut fresh);
        ops.extend(terminator(rng, spec.arch, i, succ.len()));
        renumber(&mut ops);
        blocks.push((ops, succ));
    }
    PCodeFunction::from_blocks(name, spec.arch, meta, blocks)
}

fn with_tag(f: &PCodeFunction, mode: ObfMode) -> FunctionMeta {
    FunctionMeta {
        obfuscation: mode.tag().to_string(),
        ..f.meta.clone()
    }
}

fn dense(f: &PCodeFunction) -> Vec<(Vec<PCodeOp>, Vec<usize>)> {
    f.blocks()
        .iter()
        .map(|b| (b.ops.clone(), b.successors.clone()))
        .collect()
}

fn assemble(
    f: &PCodeFunction,
    mode: ObfMode,
    entry: usize,
    blocks: Vec<(Vec<PCodeOp>, Vec<usize>)>,
) -> PCodeFunction {
    let raw = blocks
        .into_iter()
        .enumerate()
        .map(|(i, (mut ops, succ))| {
            renumber(&mut ops);
            RawBlock {
                id: i as i64,
                ops,
                successors: succ.into_iter().map(|s| s as i64).collect(),
            }
        })
        .collect();
    PCodeFunction::assemble(f.name.clone(), f.arch, with_tag(f, mode), entry as i64, raw)
        .expect("transforms keep functions well formed")
        .function
}

fn all_ones(size: u32) -> u64 {
    if size >= 8 {
        u64::MAX
    } else {
        (1u64 << (8 * size)) - 1
    }
}

/// `x + y` becomes `x - (-y)`, `x - y` becomes `x + y * -1`, and
/// `x ^ y` becomes `(x | y) & ~(x & y)`.
fn substitute(f: &PCodeFunction) -> PCodeFunction {
    let mut fresh = Fresh::above(f);
    let blocks = dense(f)
        .into_iter()
        .map(|(ops, succ)| {
            let mut out = Vec::with_capacity(ops.len() * 2);
            for o in ops {
                let (Some(dst), [a, b]) = (o.output.clone(), o.inputs.as_slice()) else {
                    out.push(o);
                    continue;
                };
                match o.opcode {
                    Opcode::IntAdd => {
                        let t = fresh.next(b.size);
                        out.push(op(Opcode::Int2Comp, Some(t.clone()), vec![b.clone()]));
                        out.push(op(Opcode::IntSub, Some(dst), vec![a.clone(), t]));
                    }
                    Opcode::IntSub => {
                        let t = fresh.next(b.size);
                        let minus_one = Varnode::constant(all_ones(b.size), b.size);
                        out.push(op(Opcode::IntMult, Some(t.clone()), vec![b.clone(), minus_one]));
                        out.push(op(Opcode::IntAdd, Some(dst), vec![a.clone(), t]));
                    }
                    Opcode::IntXor => {
                        let (t1, t2, t3) = (fresh.next(a.size), fresh.next(a.size), fresh.next(a.size));
                        out.push(op(Opcode::IntOr, Some(t1.clone()), vec![a.clone(), b.clone()]));
                        out.push(op(Opcode::IntAnd, Some(t2.clone()), vec![a.clone(), b.clone()]));
                        out.push(op(Opcode::IntNegate, Some(t3.clone()), vec![t2]));
                        out.push(op(Opcode::IntAnd, Some(dst), vec![t1, t3]));
                    }
                    _ => out.push(o),
                }
            }
            (out, succ)
        })
        .collect();
    assemble(f, ObfMode::Sub, 0, blocks)
}

/// Guards randomly chosen blocks with an opaque predicate `x*(x+1) even`
/// whose false arm is a junk block. Adds between 1 and n blocks.
fn bogus_flow(f: &PCodeFunction, rng: &mut impl Rng) -> PCodeFunction {
    let mut fresh = Fresh::above(f);
    let mut blocks = dense(f);
    let n = blocks.len();
    let flag = flag(f.arch);
    let guard = |fresh: &mut Fresh, target: usize| {
        let x = fresh.next(4);
        let x1 = fresh.next(4);
        let prod = fresh.next(4);
        let low = fresh.next(4);
        vec![
            op(
                Opcode::Load,
                Some(x.clone()),
                vec![Varnode::constant(0x1b1, 8), Varnode::ram(0x60_0000 + 8 * target as u64, 8)],
            ),
            op(Opcode::IntAdd, Some(x1.clone()), vec![x.clone(), Varnode::constant(1, 4)]),
            op(Opcode::IntMult, Some(prod.clone()), vec![x, x1]),
            op(Opcode::IntAnd, Some(low.clone()), vec![prod, Varnode::constant(1, 4)]),
            op(Opcode::IntEqual, Some(flag.clone()), vec![low, Varnode::constant(0, 4)]),
        ]
    };
    let branch_to = |b: usize| Varnode::ram(RAM_BASE + 0x10 * b as u64, 8);

    let mut entry = 0;
    if n == 1 {
        let mut ops = guard(&mut fresh, 0);
        ops.push(op(Opcode::Branch, None, vec![branch_to(0)]));
        blocks.push((ops, vec![0]));
        return assemble(f, ObfMode::Bcf, 1, blocks);
    }
    let k = rng.gen_range(1..=n / 2);
    let mut chosen: Vec<usize> = sample(rng, n, k).into_vec();
    chosen.sort_unstable();
    for &b in &chosen {
        let p = blocks.len();
        let j = p + 1;
        for (_, succ) in blocks.iter_mut().take(n) {
            for s in succ.iter_mut() {
                if *s == b {
                    *s = p;
                }
            }
        }
        if b == entry {
            entry = p;
        }
        let mut pred = guard(&mut fresh, b);
        pred.push(op(Opcode::CBranch, None, vec![branch_to(b), flag.clone()]));
        let mut junk: Vec<PCodeOp> = blocks[b]
            .0
            .iter()
            .filter(|o| !o.opcode.is_terminator())
            .take(3)
            .cloned()
            .collect();
        junk.push(op(Opcode::Branch, None, vec![branch_to(b)]));
        blocks.push((pred, vec![b, j]));
        blocks.push((junk, vec![b]));
    }
    assemble(f, ObfMode::Bcf, entry, blocks)
}

/// Replaces every transfer with a state update and a jump to a dispatcher,
/// which in turn can reach every block that originally had a predecessor.
fn flatten(f: &PCodeFunction, rng: &mut impl Rng) -> PCodeFunction {
    let mut fresh = Fresh::above(f);
    let n = f.block_count();
    let dispatcher = n;
    let state = Varnode::stack(0x7fe0, 4);
    let case: Vec<u64> = (0..n).map(|_| u64::from(rng.gen::<u32>())).collect();
    let mut has_pred = vec![false; n];
    for b in f.blocks() {
        for &s in &b.successors {
            has_pred[s] = true;
        }
    }
    let mut blocks: Vec<(Vec<PCodeOp>, Vec<usize>)> = Vec::with_capacity(n + 1);
    for b in f.blocks() {
        if b.successors.is_empty() {
            blocks.push((b.ops.clone(), vec![]));
            continue;
        }
        let mut ops = b.ops.clone();
        let last = ops.pop().expect("blocks are non-empty");
        let cond = (last.opcode == Opcode::CBranch && b.successors.len() == 2)
            .then(|| last.inputs.get(1).cloned())
            .flatten();
        if !last.opcode.is_terminator() {
            ops.push(last.clone());
        }
        let next = Varnode::constant(case[b.successors[0]], 4);
        match cond {
            Some(c) => {
                // state = zext(c) * (case_t - case_f) + case_f
                let (z, m, s) = (fresh.next(4), fresh.next(4), fresh.next(4));
                let t = case[b.successors[0]];
                let e = case[b.successors[1]];
                let delta = t.wrapping_sub(e) & 0xffff_ffff;
                ops.push(op(Opcode::IntZext, Some(z.clone()), vec![c]));
                ops.push(op(Opcode::IntMult, Some(m.clone()), vec![z, Varnode::constant(delta, 4)]));
                ops.push(op(Opcode::IntAdd, Some(s.clone()), vec![m, Varnode::constant(e, 4)]));
                ops.push(op(Opcode::Copy, Some(state.clone()), vec![s]));
            }
            None if b.successors.len() > 1 => {
                let sel = last.inputs.first().cloned().unwrap_or_else(|| next.clone());
                ops.push(op(Opcode::Copy, Some(state.clone()), vec![sel]));
            }
            None => ops.push(op(Opcode::Copy, Some(state.clone()), vec![next])),
        }
        ops.push(op(
            Opcode::Branch,
            None,
            vec![Varnode::ram(RAM_BASE + 0x10 * dispatcher as u64, 8)],
        ));
        blocks.push((ops, vec![dispatcher]));
    }
    let targets: Vec<usize> = (0..n).filter(|&b| has_pred[b]).collect();
    if targets.is_empty() {
        // Nothing to dispatch to: a single returning block.
        let mut out = f.clone();
        out.meta = with_tag(f, ObfMode::Fla);
        return out;
    }
    let sw = fresh.next(4);
    blocks.push((
        vec![
            op(Opcode::Copy, Some(sw.clone()), vec![state]),
            op(Opcode::BranchInd, None, vec![sw]),
        ],
        targets,
    ));
    assemble(f, ObfMode::Fla, 0, blocks)
}

/// Applies one obfuscation; `All` is `sub(bcf(fla(f)))`. The group identity
/// (project and name) is preserved and the obfuscation tag updated.
pub fn synth_obfuscate(f: &PCodeFunction, mode: ObfMode, seed: u64) -> PCodeFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        ObfMode::Sub => substitute(f),
        ObfMode::Bcf => bogus_flow(f, &mut rng),
        ObfMode::Fla => flatten(f, &mut rng),
        ObfMode::All => {
            let flat = flatten(f, &mut rng);
            let bogus = bogus_flow(&flat, &mut rng);
            let mut out = substitute(&bogus);
            out.meta.obfuscation = ObfMode::All.tag().to_string();
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub groups: usize,
    pub variants: Vec<ObfMode>,
    pub project: String,
    pub function: SynthSpec,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            groups: 200,
            variants: ObfMode::ALL.to_vec(),
            project: "synth".into(),
            function: SynthSpec::default(),
        }
    }
}

/// One original plus one variant per requested mode for every group, in
/// group order. Each group draws from its own stream, so a group's functions
/// do not depend on how many groups are generated.
pub fn synth_corpus(spec: &CorpusSpec, seed: u64) -> Result<Vec<PCodeFunction>> {
    if spec.groups == 0 {
        return Err(Error::InvalidArgument("corpus needs at least one group".into()));
    }
    spec.function.validate()?;
    let mut out = Vec::with_capacity(spec.groups * (1 + spec.variants.len()));
    for g in 0..spec.groups {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(g as u64);
        let meta = FunctionMeta {
            project: spec.project.clone(),
            optimization: "O0".into(),
            obfuscation: ORIGINAL_TAG.into(),
        };
        let f = random_function(format!("fn_{g:05}"), meta, &spec.function, &mut rng)?;
        for &mode in &spec.variants {
            out.push(synth_obfuscate(&f, mode, rng.gen()));
        }
        out.insert(out.len() - spec.variants.len(), f);
    }
    Ok(out)
}
