use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

macro_rules! opcodes {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// A P-Code operation mnemonic.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        #[allow(non_camel_case_types)]
        pub enum Opcode {
            $($variant),+
        }

        impl Opcode {
            pub const ALL: &'static [Opcode] = &[$(Opcode::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(Opcode::$variant => $name),+
                }
            }
        }

        impl FromStr for Opcode {
            type Err = UnknownOpcode;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok(Opcode::$variant),)+
                    other => Err(UnknownOpcode(other.to_string())),
                }
            }
        }
    };
}

opcodes! {
    Copy => "COPY",
    Load => "LOAD",
    Store => "STORE",
    Branch => "BRANCH",
    CBranch => "CBRANCH",
    BranchInd => "BRANCHIND",
    Call => "CALL",
    CallInd => "CALLIND",
    CallOther => "CALLOTHER",
    Return => "RETURN",
    IntEqual => "INT_EQUAL",
    IntNotEqual => "INT_NOTEQUAL",
    IntSLess => "INT_SLESS",
    IntSLessEqual => "INT_SLESSEQUAL",
    IntLess => "INT_LESS",
    IntLessEqual => "INT_LESSEQUAL",
    IntZext => "INT_ZEXT",
    IntSext => "INT_SEXT",
    IntAdd => "INT_ADD",
    IntSub => "INT_SUB",
    IntCarry => "INT_CARRY",
    IntSCarry => "INT_SCARRY",
    IntSBorrow => "INT_SBORROW",
    Int2Comp => "INT_2COMP",
    IntNegate => "INT_NEGATE",
    IntXor => "INT_XOR",
    IntAnd => "INT_AND",
    IntOr => "INT_OR",
    IntLeft => "INT_LEFT",
    IntRight => "INT_RIGHT",
    IntSRight => "INT_SRIGHT",
    IntMult => "INT_MULT",
    IntDiv => "INT_DIV",
    IntSDiv => "INT_SDIV",
    IntRem => "INT_REM",
    IntSRem => "INT_SREM",
    BoolNegate => "BOOL_NEGATE",
    BoolXor => "BOOL_XOR",
    BoolAnd => "BOOL_AND",
    BoolOr => "BOOL_OR",
    FloatEqual => "FLOAT_EQUAL",
    FloatNotEqual => "FLOAT_NOTEQUAL",
    FloatLess => "FLOAT_LESS",
    FloatLessEqual => "FLOAT_LESSEQUAL",
    FloatNan => "FLOAT_NAN",
    FloatAdd => "FLOAT_ADD",
    FloatDiv => "FLOAT_DIV",
    FloatMult => "FLOAT_MULT",
    FloatSub => "FLOAT_SUB",
    FloatNeg => "FLOAT_NEG",
    FloatAbs => "FLOAT_ABS",
    FloatSqrt => "FLOAT_SQRT",
    FloatInt2Float => "FLOAT_INT2FLOAT",
    FloatFloat2Float => "FLOAT_FLOAT2FLOAT",
    FloatTrunc => "FLOAT_TRUNC",
    FloatCeil => "FLOAT_CEIL",
    FloatFloor => "FLOAT_FLOOR",
    FloatRound => "FLOAT_ROUND",
    MultiEqual => "MULTIEQUAL",
    Indirect => "INDIRECT",
    Piece => "PIECE",
    SubPiece => "SUBPIECE",
    Cast => "CAST",
    PtrAdd => "PTRADD",
    PtrSub => "PTRSUB",
    SegmentOp => "SEGMENTOP",
    CPoolRef => "CPOOLREF",
    New => "NEW",
    Insert => "INSERT",
    Extract => "EXTRACT",
    PopCount => "POPCOUNT",
    LzCount => "LZCOUNT",
    Unimplemented => "UNIMPLEMENTED",
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownOpcode(pub String);

impl fmt::Display for UnknownOpcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown P-Code mnemonic `{}`", self.0)
    }
}

impl std::error::Error for UnknownOpcode {}

impl Opcode {
    /// Operations that take part in the per-block memory ordering chain.
    pub fn is_memory_chain(self) -> bool {
        matches!(
            self,
            Opcode::Load | Opcode::Store | Opcode::Call | Opcode::CallInd | Opcode::CallOther
        )
    }

    /// Chain members that may write memory (everything except LOAD).
    pub fn is_memory_barrier(self) -> bool {
        self.is_memory_chain() && self != Opcode::Load
    }

    pub fn is_terminator(self) -> bool {
        matches!(
            self,
            Opcode::Branch | Opcode::CBranch | Opcode::BranchInd | Opcode::Return
        )
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Opcode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Opcode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
