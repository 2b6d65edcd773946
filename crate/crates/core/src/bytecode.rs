//! Linear EVM disassembler and the token-backing opcode heuristic.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

pub const OP_CALLVALUE: u8 = 0x34;
pub const OP_CALL: u8 = 0xf1;
pub const OP_PUSH4: u8 = 0x63;
/// `transferFrom(address,address,uint256)`.
pub const TRANSFER_FROM_SELECTOR: [u8; 4] = [0x23, 0xb8, 0x72, 0xdd];

/// Mnemonic for a defined opcode, `None` for unassigned bytes.
pub fn mnemonic(op: u8) -> Option<&'static str> {
    const PUSH: [&str; 33] = [
        "PUSH0", "PUSH1", "PUSH2", "PUSH3", "PUSH4", "PUSH5", "PUSH6", "PUSH7", "PUSH8", "PUSH9", "PUSH10", "PUSH11",
        "PUSH12", "PUSH13", "PUSH14", "PUSH15", "PUSH16", "PUSH17", "PUSH18", "PUSH19", "PUSH20", "PUSH21", "PUSH22",
        "PUSH23", "PUSH24", "PUSH25", "PUSH26", "PUSH27", "PUSH28", "PUSH29", "PUSH30", "PUSH31", "PUSH32",
    ];
    const DUP: [&str; 16] = [
        "DUP1", "DUP2", "DUP3", "DUP4", "DUP5", "DUP6", "DUP7", "DUP8", "DUP9", "DUP10", "DUP11", "DUP12", "DUP13",
        "DUP14", "DUP15", "DUP16",
    ];
    const SWAP: [&str; 16] = [
        "SWAP1", "SWAP2", "SWAP3", "SWAP4", "SWAP5", "SWAP6", "SWAP7", "SWAP8", "SWAP9", "SWAP10", "SWAP11", "SWAP12",
        "SWAP13", "SWAP14", "SWAP15", "SWAP16",
    ];
    const LOG: [&str; 5] = ["LOG0", "LOG1", "LOG2", "LOG3", "LOG4"];
    Some(match op {
        0x00 => "STOP",
        0x01 => "ADD",
        0x02 => "MUL",
        0x03 => "SUB",
        0x04 => "DIV",
        0x05 => "SDIV",
        0x06 => "MOD",
        0x07 => "SMOD",
        0x08 => "ADDMOD",
        0x09 => "MULMOD",
        0x0a => "EXP",
        0x0b => "SIGNEXTEND",
        0x10 => "LT",
        0x11 => "GT",
        0x12 => "SLT",
        0x13 => "SGT",
        0x14 => "EQ",
        0x15 => "ISZERO",
        0x16 => "AND",
        0x17 => "OR",
        0x18 => "XOR",
        0x19 => "NOT",
        0x1a => "BYTE",
        0x1b => "SHL",
        0x1c => "SHR",
        0x1d => "SAR",
        0x20 => "KECCAK256",
        0x30 => "ADDRESS",
        0x31 => "BALANCE",
        0x32 => "ORIGIN",
        0x33 => "CALLER",
        0x34 => "CALLVALUE",
        0x35 => "CALLDATALOAD",
        0x36 => "CALLDATASIZE",
        0x37 => "CALLDATACOPY",
        0x38 => "CODESIZE",
        0x39 => "CODECOPY",
        0x3a => "GASPRICE",
        0x3b => "EXTCODESIZE",
        0x3c => "EXTCODECOPY",
        0x3d => "RETURNDATASIZE",
        0x3e => "RETURNDATACOPY",
        0x3f => "EXTCODEHASH",
        0x40 => "BLOCKHASH",
        0x41 => "COINBASE",
        0x42 => "TIMESTAMP",
        0x43 => "NUMBER",
        0x44 => "PREVRANDAO",
        0x45 => "GASLIMIT",
        0x46 => "CHAINID",
        0x47 => "SELFBALANCE",
        0x48 => "BASEFEE",
        0x49 => "BLOBHASH",
        0x4a => "BLOBBASEFEE",
        0x50 => "POP",
        0x51 => "MLOAD",
        0x52 => "MSTORE",
        0x53 => "MSTORE8",
        0x54 => "SLOAD",
        0x55 => "SSTORE",
        0x56 => "JUMP",
        0x57 => "JUMPI",
        0x58 => "PC",
        0x59 => "MSIZE",
        0x5a => "GAS",
        0x5b => "JUMPDEST",
        0x5c => "TLOAD",
        0x5d => "TSTORE",
        0x5e => "MCOPY",
        0x5f..=0x7f => PUSH[(op - 0x5f) as usize],
        0x80..=0x8f => DUP[(op - 0x80) as usize],
        0x90..=0x9f => SWAP[(op - 0x90) as usize],
        0xa0..=0xa4 => LOG[(op - 0xa0) as usize],
        0xf0 => "CREATE",
        0xf1 => "CALL",
        0xf2 => "CALLCODE",
        0xf3 => "RETURN",
        0xf4 => "DELEGATECALL",
        0xf5 => "CREATE2",
        0xfa => "STATICCALL",
        0xfd => "REVERT",
        0xfe => "INVALID",
        0xff => "SELFDESTRUCT",
        _ => return None,
    })
}

/// Immediate byte count of a PUSH opcode, 0 otherwise.
pub fn push_width(op: u8) -> usize {
    match op {
        0x60..=0x7f => (op - 0x5f) as usize,
        _ => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Instruction {
    pub offset: usize,
    pub opcode: u8,
    /// `INVALID` for unassigned bytes; the raw byte is kept in `opcode`.
    pub mnemonic: &'static str,
    pub immediate: Vec<u8>,
}

impl Instruction {
    pub fn len(&self) -> usize {
        1 + self.immediate.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:06x} {}", self.offset, self.mnemonic)?;
        if !self.immediate.is_empty() {
            write!(f, " 0x")?;
            for b in &self.immediate {
                write!(f, "{b:02x}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct OpcodeStream(pub Vec<Instruction>);

impl OpcodeStream {
    pub fn instructions(&self) -> &[Instruction] {
        &self.0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.0.iter().map(Instruction::len).sum());
        for ins in &self.0 {
            out.push(ins.opcode);
            out.extend_from_slice(&ins.immediate);
        }
        out
    }
}

pub fn disassemble(code: &[u8]) -> Result<OpcodeStream> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < code.len() {
        let op = code[i];
        let width = push_width(op);
        if i + 1 + width > code.len() {
            return Err(Error::TruncatedPush { offset: i, width });
        }
        out.push(Instruction {
            offset: i,
            opcode: op,
            mnemonic: mnemonic(op).unwrap_or("INVALID"),
            immediate: code[i + 1..i + 1 + width].to_vec(),
        });
        i += 1 + width;
    }
    Ok(OpcodeStream(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    DerivativeTokenBacked,
    DerivativeNativeBacked,
    Undetermined,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::DerivativeTokenBacked => "DerivativeTokenBacked",
            Verdict::DerivativeNativeBacked => "DerivativeNativeBacked",
            Verdict::Undetermined => "Undetermined",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Pattern {
    TransferFromSelector,
    Call,
    CallValue,
}

impl Pattern {
    pub fn name(self) -> &'static str {
        match self {
            Pattern::TransferFromSelector => "PUSH4 transferFrom",
            Pattern::Call => "CALL",
            Pattern::CallValue => "CALLVALUE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TokenClassification {
    pub verdict: Verdict,
    /// Every matched `(offset, pattern)`, in stream order.
    pub evidence: Vec<(usize, Pattern)>,
}

/// Token-backed when the `transferFrom` selector and a `CALL` both appear,
/// else native-backed when `CALLVALUE` appears.
pub fn classify_bytecode(stream: &OpcodeStream) -> TokenClassification {
    let mut evidence = Vec::new();
    for ins in stream.instructions() {
        let pattern = match ins.opcode {
            OP_PUSH4 if ins.immediate == TRANSFER_FROM_SELECTOR => Pattern::TransferFromSelector,
            OP_CALL => Pattern::Call,
            OP_CALLVALUE => Pattern::CallValue,
            _ => continue,
        };
        evidence.push((ins.offset, pattern));
    }
    let has = |p: Pattern| evidence.iter().any(|(_, q)| *q == p);
    let verdict = if has(Pattern::TransferFromSelector) && has(Pattern::Call) {
        Verdict::DerivativeTokenBacked
    } else if has(Pattern::CallValue) {
        Verdict::DerivativeNativeBacked
    } else {
        Verdict::Undetermined
    };
    TokenClassification { verdict, evidence }
}
