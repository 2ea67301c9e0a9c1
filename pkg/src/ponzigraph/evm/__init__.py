"""Minimal deterministic EVM: opcode vocabulary, assembler, interpreter."""

from .assembler import AssemblyError, Bytecode, Instr, assemble, disassemble, format_program
from .interp import (
    Account,
    ExecutionTrace,
    FrameEnv,
    MachineState,
    Step,
    StorageWrite,
    TxEnv,
    World,
    execute_transaction,
)
from .opcodes import INVALID, OpcodeInfo, VOCABULARY_SIZE, by_mnemonic, by_value, opcode_vocabulary

__all__ = [
    "Account",
    "AssemblyError",
    "Bytecode",
    "ExecutionTrace",
    "FrameEnv",
    "INVALID",
    "Instr",
    "MachineState",
    "OpcodeInfo",
    "Step",
    "StorageWrite",
    "TxEnv",
    "VOCABULARY_SIZE",
    "World",
    "assemble",
    "by_mnemonic",
    "by_value",
    "disassemble",
    "execute_transaction",
    "format_program",
    "opcode_vocabulary",
]
