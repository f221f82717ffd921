"""Mini-IR for GPU kernels: instructions, basic blocks, CFGs and a parser.

The text format is line oriented::

    .shared A 64            # scratchpad variable A, 64 bytes
    entry:
        ld.global r2, [r5]
        st.shared A[16], r1
        bra.cond r7, body, done
    body: @loopdepth 1
        ld.shared r3, A[0]
        bra entry
    done:
        exit

The first block is the entry. A block without a terminator falls through to
the next block in program order.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional


class Op(enum.Enum):
    ADD = "add"
    MOV = "mov"
    LD_GLOBAL = "ld.global"
    ST_GLOBAL = "st.global"
    LD_SHARED = "ld.shared"
    ST_SHARED = "st.shared"
    BAR_SYNC = "bar.sync"
    BRA = "bra"
    BRA_COND = "bra.cond"
    RELSSP = "relssp"
    EXIT = "exit"


TERMINATORS = frozenset({Op.BRA, Op.BRA_COND, Op.EXIT})
SHARED_OPS = frozenset({Op.LD_SHARED, Op.ST_SHARED})

# Labels starting with '$' are reserved for blocks created by normalization.
SYNTHETIC_PREFIX = "$"


class KernelError(Exception):
    """Base class for IR construction errors."""


class KernelSyntaxError(KernelError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class UndeclaredVariableError(KernelSyntaxError):
    pass


class UnknownLabelError(KernelSyntaxError):
    pass


class DuplicateLabelError(KernelSyntaxError):
    pass


class InvalidKernelError(KernelError):
    """Raised when a parsed kernel violates a structural CFG invariant."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


@dataclass(frozen=True)
class ScratchpadVar:
    name: str
    size_bytes: int

    def __post_init__(self):
        if self.size_bytes <= 0:
            raise ValueError(f"scratchpad variable {self.name} must have positive size")


@dataclass(frozen=True)
class Instruction:
    op: Op
    dest: Optional[str] = None
    srcs: tuple[str, ...] = ()
    var: Optional[str] = None
    offset: int = 0
    targets: tuple[str, ...] = ()

    @property
    def is_terminator(self) -> bool:
        return self.op in TERMINATORS

    @property
    def is_shared_access(self) -> bool:
        return self.op in SHARED_OPS

    def registers_read(self) -> tuple[str, ...]:
        return self.srcs

    def __str__(self) -> str:
        op = self.op
        if op in (Op.ADD, Op.MOV):
            return f"{op.value} {', '.join((self.dest,) + self.srcs)}"
        if op is Op.LD_GLOBAL:
            return f"ld.global {self.dest}, [{self.srcs[0]}]"
        if op is Op.ST_GLOBAL:
            return f"st.global [{self.srcs[0]}], {self.srcs[1]}"
        if op is Op.LD_SHARED:
            return f"ld.shared {self.dest}, {self.var}[{self.offset}]"
        if op is Op.ST_SHARED:
            return f"st.shared {self.var}[{self.offset}], {self.srcs[0]}"
        if op is Op.BRA:
            return f"bra {self.targets[0]}"
        if op is Op.BRA_COND:
            return f"bra.cond {self.srcs[0]}, {self.targets[0]}, {self.targets[1]}"
        return op.value


def bra(target: str) -> Instruction:
    return Instruction(Op.BRA, targets=(target,))


RELSSP = Instruction(Op.RELSSP)


@dataclass(frozen=True)
class BasicBlock:
    label: str
    instrs: tuple[Instruction, ...] = ()
    loop_depth: int = 0

    @property
    def terminator(self) -> Optional[Instruction]:
        if self.instrs and self.instrs[-1].is_terminator:
            return self.instrs[-1]
        return None

    @property
    def is_synthetic(self) -> bool:
        return self.label.startswith(SYNTHETIC_PREFIX)

    def accesses(self) -> set[str]:
        """Scratchpad variables read or written in this block."""
        return {i.var for i in self.instrs if i.is_shared_access}

    def body(self) -> tuple[Instruction, ...]:
        """Instructions before the terminator."""
        return self.instrs[:-1] if self.terminator is not None else self.instrs


@dataclass(frozen=True)
class KernelCFG:
    """A kernel as an ordered list of basic blocks.

    Successor edges are derived from terminators; a block without one falls
    through to the next block in order, so block order is significant.
    """

    blocks: tuple[BasicBlock, ...]
    variables: tuple[ScratchpadVar, ...] = ()
    name: str = "kernel"
    _succ: dict = field(init=False, repr=False, compare=False)
    _pred: dict = field(init=False, repr=False, compare=False)
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {b.label: i for i, b in enumerate(self.blocks)}
        succ: dict[str, tuple[str, ...]] = {}
        for i, b in enumerate(self.blocks):
            term = b.terminator
            if term is None:
                succ[b.label] = (self.blocks[i + 1].label,) if i + 1 < len(self.blocks) else ()
            else:
                succ[b.label] = tuple(dict.fromkeys(term.targets))
        pred: dict[str, list[str]] = {b.label: [] for b in self.blocks}
        for b in self.blocks:
            for s in succ[b.label]:
                if s in pred and b.label not in pred[s]:
                    pred[s].append(b.label)
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_succ", succ)
        object.__setattr__(self, "_pred", {k: tuple(v) for k, v in pred.items()})

    # -- structure ---------------------------------------------------------

    @property
    def labels(self) -> list[str]:
        return [b.label for b in self.blocks]

    @property
    def entry(self) -> str:
        return self.blocks[0].label

    def exits(self) -> list[str]:
        return [b.label for b in self.blocks if b.terminator is not None and b.terminator.op is Op.EXIT]

    @property
    def exit(self) -> str:
        exits = self.exits()
        if len(exits) != 1:
            raise InvalidKernelError([f"kernel has {len(exits)} exit blocks, expected exactly one"])
        return exits[0]

    def block(self, label: str) -> BasicBlock:
        return self.blocks[self._index[label]]

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def __iter__(self) -> Iterator[BasicBlock]:
        return iter(self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    def succs(self, label: str) -> tuple[str, ...]:
        return self._succ[label]

    def preds(self, label: str) -> tuple[str, ...]:
        return self._pred[label]

    def edges(self) -> list[tuple[str, str]]:
        return [(b.label, s) for b in self.blocks for s in self._succ[b.label]]

    def var(self, name: str) -> ScratchpadVar:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    @property
    def var_names(self) -> list[str]:
        return [v.name for v in self.variables]

    @property
    def scratchpad_bytes(self) -> int:
        return sum(v.size_bytes for v in self.variables)

    def reachable_from(self, start: str, reverse: bool = False) -> set[str]:
        step = self.preds if reverse else self.succs
        seen = {start}
        stack = [start]
        while stack:
            for n in step(stack.pop()):
                if n not in seen:
                    seen.add(n)
                    stack.append(n)
        return seen

    def postorder(self, reverse_graph: bool = False) -> list[str]:
        """Postorder from the entry (or from the exit on the reverse graph)."""
        root = self.exit if reverse_graph else self.entry
        step = self.preds if reverse_graph else self.succs
        out: list[str] = []
        seen = {root}
        stack = [(root, iter(step(root)))]
        while stack:
            node, it = stack[-1]
            for n in it:
                if n not in seen:
                    seen.add(n)
                    stack.append((n, iter(step(n))))
                    break
            else:
                stack.pop()
                out.append(node)
        return out

    def reverse_postorder(self) -> list[str]:
        return list(reversed(self.postorder()))

    # -- rebuilding ---------------------------------------------------------

    def with_blocks(self, blocks: Iterable[BasicBlock]) -> "KernelCFG":
        return KernelCFG(tuple(blocks), self.variables, self.name)

    def replace_block(self, block: BasicBlock) -> "KernelCFG":
        return self.with_blocks(block if b.label == block.label else b for b in self.blocks)

    def instruction_count(self) -> int:
        return sum(len(b.instrs) for b in self.blocks)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_IDENT = r"[A-Za-z_%$][\w.$]*"
_REG = re.compile(rf"^{_IDENT}$")
_LABEL_LINE = re.compile(rf"^(?P<label>{_IDENT})\s*:\s*(?P<rest>.*)$")
_LOOPDEPTH = re.compile(r"^@loopdepth\s+(?P<k>\d+)$")
_SHARED_DECL = re.compile(rf"^\.shared\s+(?P<name>{_IDENT})\s+(?P<size>\d+)$")
_KERNEL_DECL = re.compile(rf"^\.kernel\s+(?P<name>{_IDENT})$")
_SHARED_REF = re.compile(rf"^(?P<var>{_IDENT})\[(?P<off>\d+)\]$")
_GLOBAL_REF = re.compile(rf"^\[\s*(?P<reg>{_IDENT})\s*\]$")

_MNEMONICS = {op.value: op for op in Op}


def _split_operands(text: str) -> list[str]:
    return [p.strip() for p in text.split(",")] if text.strip() else []


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.name = "kernel"
        self.variables: dict[str, ScratchpadVar] = {}
        self.blocks: list[tuple[str, int, int, list[tuple[Instruction, int, int]]]] = []
        self.label_pos: dict[str, tuple[int, int]] = {}

    def error(self, cls, msg, line, col):
        raise cls(msg, line, col)

    def parse(self) -> KernelCFG:
        for lineno, raw in enumerate(self.text.splitlines(), start=1):
            line = raw.split("#", 1)[0].rstrip()
            stripped = line.strip()
            if not stripped:
                continue
            col = len(line) - len(line.lstrip()) + 1
            if stripped.startswith(".shared"):
                self._declare(stripped, lineno, col)
                continue
            if stripped.startswith(".kernel"):
                m = _KERNEL_DECL.match(stripped)
                if not m:
                    self.error(KernelSyntaxError, "malformed .kernel directive", lineno, col)
                self.name = m["name"]
                continue
            m = _LABEL_LINE.match(stripped)
            if m:
                self._open_block(m["label"], m["rest"].strip(), lineno, col)
                continue
            if not self.blocks:
                self.error(KernelSyntaxError, "instruction outside of any block", lineno, col)
            self.blocks[-1][3].append((self._instruction(stripped, lineno, col), lineno, col))
        if not self.blocks:
            raise KernelSyntaxError("kernel has no blocks", 1, 1)
        return self._finish()

    def _declare(self, stripped, lineno, col):
        m = _SHARED_DECL.match(stripped)
        if not m:
            self.error(KernelSyntaxError, "malformed .shared declaration, expected `.shared <name> <bytes>`", lineno, col)
        name, size = m["name"], int(m["size"])
        if name in self.variables:
            self.error(KernelSyntaxError, f"duplicate scratchpad variable {name}", lineno, col)
        if size <= 0:
            self.error(KernelSyntaxError, f"scratchpad variable {name} must have positive size", lineno, col)
        self.variables[name] = ScratchpadVar(name, size)

    def _open_block(self, label, rest, lineno, col):
        if label in self.label_pos:
            first = self.label_pos[label][0]
            self.error(DuplicateLabelError, f"duplicate label {label} (first defined on line {first})", lineno, col)
        depth = 0
        if rest:
            m = _LOOPDEPTH.match(rest)
            if not m:
                self.error(KernelSyntaxError, f"unexpected text after label: {rest!r}", lineno, col + len(label) + 1)
            depth = int(m["k"])
        self.label_pos[label] = (lineno, col)
        self.blocks.append((label, depth, lineno, []))

    def _reg(self, tok, lineno, col):
        if not _REG.match(tok):
            self.error(KernelSyntaxError, f"expected a register, got {tok!r}", lineno, col)
        return tok

    def _instruction(self, stripped, lineno, col) -> Instruction:
        parts = stripped.split(None, 1)
        mnemonic = parts[0]
        operands = _split_operands(parts[1]) if len(parts) > 1 else []
        op = _MNEMONICS.get(mnemonic)
        if op is None:
            self.error(KernelSyntaxError, f"unknown instruction {mnemonic!r}", lineno, col)
        ocol = col + len(mnemonic) + 1

        def arity(n):
            if len(operands) != n:
                self.error(KernelSyntaxError, f"{mnemonic} expects {n} operand(s), got {len(operands)}", lineno, ocol)

        if op is Op.ADD:
            arity(3)
            d, a, b = (self._reg(t, lineno, ocol) for t in operands)
            return Instruction(op, dest=d, srcs=(a, b))
        if op is Op.MOV:
            arity(2)
            d, a = (self._reg(t, lineno, ocol) for t in operands)
            return Instruction(op, dest=d, srcs=(a,))
        if op is Op.LD_GLOBAL:
            arity(2)
            m = _GLOBAL_REF.match(operands[1])
            if not m:
                self.error(KernelSyntaxError, "ld.global expects `[reg]` address", lineno, ocol)
            return Instruction(op, dest=self._reg(operands[0], lineno, ocol), srcs=(m["reg"],))
        if op is Op.ST_GLOBAL:
            arity(2)
            m = _GLOBAL_REF.match(operands[0])
            if not m:
                self.error(KernelSyntaxError, "st.global expects `[reg]` address", lineno, ocol)
            return Instruction(op, srcs=(m["reg"], self._reg(operands[1], lineno, ocol)))
        if op in SHARED_OPS:
            arity(2)
            ref, other = (operands[1], operands[0]) if op is Op.LD_SHARED else (operands[0], operands[1])
            m = _SHARED_REF.match(ref)
            if not m:
                self.error(KernelSyntaxError, f"{mnemonic} expects `VAR[offset]`", lineno, ocol)
            var, off = m["var"], int(m["off"])
            if var not in self.variables:
                self.error(UndeclaredVariableError, f"undeclared scratchpad variable {var}", lineno, ocol)
            if off >= self.variables[var].size_bytes:
                self.error(KernelSyntaxError, f"offset {off} out of range for {var} ({self.variables[var].size_bytes} bytes)", lineno, ocol)
            reg = self._reg(other, lineno, ocol)
            if op is Op.LD_SHARED:
                return Instruction(op, dest=reg, var=var, offset=off)
            return Instruction(op, srcs=(reg,), var=var, offset=off)
        if op is Op.BRA:
            arity(1)
            return Instruction(op, targets=(operands[0],))
        if op is Op.BRA_COND:
            arity(3)
            return Instruction(op, srcs=(self._reg(operands[0], lineno, ocol),), targets=(operands[1], operands[2]))
        arity(0)
        return Instruction(op)

    def _finish(self) -> KernelCFG:
        blocks = []
        for label, depth, lineno, instrs in self.blocks:
            for k, (ins, iline, icol) in enumerate(instrs):
                if ins.is_terminator and k != len(instrs) - 1:
                    self.error(KernelSyntaxError, f"{ins.op.value} must be the last instruction of block {label}", iline, icol)
                for t in ins.targets:
                    if t not in self.label_pos:
                        self.error(UnknownLabelError, f"unknown label {t}", iline, icol)
            blocks.append(BasicBlock(label, tuple(i for i, _, _ in instrs), depth))
        last = blocks[-1]
        if last.terminator is None:
            lineno = self.blocks[-1][2]
            self.error(KernelSyntaxError, f"last block {last.label} falls off the end of the kernel", lineno, 1)
        return KernelCFG(tuple(blocks), tuple(self.variables.values()), self.name)


def parse_kernel(text: str, *, check: bool = True) -> KernelCFG:
    """Parse mini-IR source into a KernelCFG.

    With ``check`` (the default) the result must also pass
    :func:`validate_cfg`; otherwise :class:`InvalidKernelError` is raised.
    Pass ``check=False`` for kernels that still need normalization, e.g.
    ones with several ``exit`` blocks.
    """
    cfg = _Parser(text).parse()
    if check:
        diags = validate_cfg(cfg)
        if diags:
            raise InvalidKernelError(diags)
    return cfg


def format_kernel(cfg: KernelCFG) -> str:
    lines = []
    if cfg.name != "kernel":
        lines.append(f".kernel {cfg.name}")
    for v in cfg.variables:
        lines.append(f".shared {v.name} {v.size_bytes}")
    for b in cfg.blocks:
        header = f"{b.label}:"
        if b.loop_depth:
            header += f" @loopdepth {b.loop_depth}"
        lines.append(header)
        lines.extend(f"    {ins}" for ins in b.instrs)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    block: Optional[str]
    kind: str
    message: str

    def __str__(self):
        where = f"{self.block}: " if self.block else ""
        return f"{where}{self.kind}: {self.message}"


def validate_cfg(cfg: KernelCFG) -> list[Diagnostic]:
    """Check the structural invariants of a kernel; never raises."""
    diags: list[Diagnostic] = []
    seen: set[str] = set()
    for b in cfg.blocks:
        if b.label in seen:
            diags.append(Diagnostic(b.label, "duplicate label", f"label {b.label} defined twice"))
        seen.add(b.label)
    if diags:
        return diags

    declared = {v.name: v for v in cfg.variables}
    if len(declared) != len(cfg.variables):
        diags.append(Diagnostic(None, "duplicate variable", "scratchpad variable names must be unique"))
    for b in cfg.blocks:
        if b.loop_depth < 0:
            diags.append(Diagnostic(b.label, "bad loop depth", "loop depth must be non-negative"))
        for k, ins in enumerate(b.instrs):
            if ins.is_terminator and k != len(b.instrs) - 1:
                diags.append(Diagnostic(b.label, "internal branch", f"{ins.op.value} before end of block"))
            for t in ins.targets:
                if t not in cfg:
                    diags.append(Diagnostic(b.label, "unknown label", f"branch to undefined label {t}"))
            if ins.is_shared_access:
                if ins.var not in declared:
                    diags.append(Diagnostic(b.label, "undeclared variable", f"access to undeclared {ins.var}"))
                elif ins.offset >= declared[ins.var].size_bytes:
                    diags.append(Diagnostic(b.label, "offset out of range", f"{ins.var}[{ins.offset}]"))
    if cfg.blocks[-1].terminator is None:
        diags.append(Diagnostic(cfg.blocks[-1].label, "falls off end", "last block has no terminator"))
    if diags:
        return diags

    exits = cfg.exits()
    if not exits:
        diags.append(Diagnostic(None, "no exit", "kernel has no exit block"))
        return diags
    if len(exits) > 1:
        for e in exits:
            diags.append(Diagnostic(e, "multiple exits", f"one of {len(exits)} exit blocks"))
    reachable = cfg.reachable_from(cfg.entry)
    for b in cfg.blocks:
        if b.label not in reachable:
            diags.append(Diagnostic(b.label, "unreachable block", "not reachable from entry"))
    reaches_exit: set[str] = set()
    for e in exits:
        reaches_exit |= cfg.reachable_from(e, reverse=True)
    for b in cfg.blocks:
        if b.label in reachable and b.label not in reaches_exit:
            diags.append(Diagnostic(b.label, "no path to exit", "exit not reachable from this block"))
    return diags


def retarget(ins: Instruction, old: str, new: str) -> Instruction:
    return replace(ins, targets=tuple(new if t == old else t for t in ins.targets))
