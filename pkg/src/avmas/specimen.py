"""Parser, validator and offspring renderer for the specimen language.

A specimen file looks like::

    specimen klez-analog payload 0 16
    PAYLOAD:0123456789abcdef
    # comment
    regset HKLM\\Run\\svc "%SYSROOT%/svc.exe"
    repeat 3 {
      replicate %SYSROOT%/drop.exe mutate xorkey
    }

The header names the specimen and the payload region, as a byte offset and
length within the raw bytes that follow ``PAYLOAD:``. The whole source text
is the specimen body that replicates and gets fingerprinted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Protocol, Union

from avmas.signature import Digest, digest_bytes
from avmas.virtual_env import unknown_placeholders

MAX_REPEAT = 10_000
MAX_SLEEP_MS = 3_600_000
MAX_DEPTH = 8

KEYWORDS = ("replicate", "write", "delete", "regset", "regdel", "spawn", "exit", "sleep", "repeat")
MUTATIONS = ("none", "randbytes", "xorkey")


@dataclass(frozen=True)
class Span:
    line: int
    column: int

    def __str__(self) -> str:
        return f"{self.line}:{self.column}"


def _span() -> Span | None:
    return field(default=None, compare=False, repr=False)  # type: ignore[return-value]


# -- mutation strategies ----------------------------------------------------


@dataclass(frozen=True)
class NoMutation:
    def __str__(self) -> str:
        return "none"


@dataclass(frozen=True)
class RandBytes:
    count: int

    def __str__(self) -> str:
        return f"randbytes {self.count}"


@dataclass(frozen=True)
class XorKey:
    def __str__(self) -> str:
        return "xorkey"


MutationStrategy = Union[NoMutation, RandBytes, XorKey]


# -- instructions ------------------------------------------------------------


@dataclass(frozen=True)
class Replicate:
    path: str
    mutation: MutationStrategy
    span: Span | None = _span()


@dataclass(frozen=True)
class WriteFile:
    path: str
    data: bytes
    span: Span | None = _span()


@dataclass(frozen=True)
class DeleteFile:
    path: str
    span: Span | None = _span()


@dataclass(frozen=True)
class RegSet:
    key: str
    value: str
    span: Span | None = _span()


@dataclass(frozen=True)
class RegDelete:
    key: str
    span: Span | None = _span()


@dataclass(frozen=True)
class Spawn:
    name: str
    span: Span | None = _span()


@dataclass(frozen=True)
class ExitProc:
    """Terminate a process started by this specimen.

    ``ref`` is ``"last"`` (most recent live child) or a 1-based spawn ordinal.
    """

    ref: int | str
    span: Span | None = _span()


@dataclass(frozen=True)
class Sleep:
    ms: int
    span: Span | None = _span()


@dataclass(frozen=True)
class Repeat:
    count: int
    body: tuple["Instruction", ...]
    span: Span | None = _span()


Instruction = Union[Replicate, WriteFile, DeleteFile, RegSet, RegDelete, Spawn, ExitProc, Sleep, Repeat]


@dataclass(frozen=True)
class SpecimenProgram:
    source_text: str
    name: str
    payload_offset: int
    payload_length: int
    # byte index in source_bytes where the PAYLOAD: line content starts
    payload_base: int
    instructions: tuple[Instruction, ...]

    @cached_property
    def source_bytes(self) -> bytes:
        return self.source_text.encode("utf-8")

    @property
    def payload_start(self) -> int:
        return self.payload_base + self.payload_offset

    @property
    def payload(self) -> bytes:
        return self.source_bytes[self.payload_start:self.payload_start + self.payload_length]

    @cached_property
    def specimen_id(self) -> Digest:
        return digest_bytes(self.source_bytes)


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    message: str
    span: Span | None = None

    def __str__(self) -> str:
        where = f"{self.span}: " if self.span else ""
        return f"{where}{self.severity}: {self.message}"


# -- errors ------------------------------------------------------------------


class SpecimenError(Exception):
    pass


class SpecimenSyntaxError(SpecimenError):
    def __init__(self, message: str, line: int, column: int, expected: frozenset[str] = frozenset()) -> None:
        self.line = line
        self.column = column
        self.expected = frozenset(expected)
        detail = f"; expected one of: {', '.join(sorted(self.expected))}" if self.expected else ""
        super().__init__(f"{line}:{column}: {message}{detail}")


class MissingHeaderError(SpecimenSyntaxError):
    pass


class PayloadBoundsError(SpecimenError):
    pass


class SpecimenValidationError(SpecimenError):
    def __init__(self, diagnostics: list[Diagnostic]) -> None:
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


class MutationError(SpecimenError, ValueError):
    pass


# -- tokenizer ---------------------------------------------------------------

_ESCAPES = {"\\": b"\\", '"': b'"', "n": b"\n", "r": b"\r", "t": b"\t"}


@dataclass(frozen=True)
class _Token:
    text: str
    column: int
    data: bytes | None = None  # decoded contents of a quoted token


def _tokenize(line: str, lineno: int) -> list[_Token]:
    tokens: list[_Token] = []
    i, n = 0, len(line)
    while i < n:
        if line[i].isspace():
            i += 1
            continue
        start = i
        if line[i] != '"':
            while i < n and not line[i].isspace():
                i += 1
            tokens.append(_Token(line[start:i], start + 1))
            continue
        out = bytearray()
        i += 1
        while True:
            if i >= n:
                raise SpecimenSyntaxError("unterminated string", lineno, start + 1, frozenset({'"'}))
            ch = line[i]
            if ch == '"':
                i += 1
                break
            if ch != "\\":
                out += ch.encode("utf-8")
                i += 1
                continue
            esc = line[i + 1:i + 2]
            if esc in _ESCAPES:
                out += _ESCAPES[esc]
                i += 2
            elif esc == "x" and len(line[i + 2:i + 4]) == 2 and all(c in "0123456789abcdefABCDEF" for c in line[i + 2:i + 4]):
                out.append(int(line[i + 2:i + 4], 16))
                i += 4
            else:
                raise SpecimenSyntaxError("bad escape sequence", lineno, i + 1, frozenset({"\\\\", '\\"', "\\n", "\\r", "\\t", "\\xHH"}))
        tokens.append(_Token(line[start:i], start + 1, bytes(out)))
    return tokens


def quote(data: bytes) -> str:
    parts = []
    for b in data:
        if b == 0x5C:
            parts.append("\\\\")
        elif b == 0x22:
            parts.append('\\"')
        elif 0x20 <= b < 0x7F:
            parts.append(chr(b))
        else:
            parts.append(f"\\x{b:02x}")
    return '"' + "".join(parts) + '"'


# -- parser ------------------------------------------------------------------


def _int_token(tok: _Token | None, lineno: int, what: str, end_col: int) -> int:
    if tok is None:
        raise SpecimenSyntaxError(f"missing {what}", lineno, end_col, frozenset({"<integer>"}))
    if not tok.text.isdigit() or not tok.text.isascii():
        raise SpecimenSyntaxError(f"bad {what} {tok.text!r}", lineno, tok.column, frozenset({"<integer>"}))
    return int(tok.text)


def _bare(tok: _Token | None, lineno: int, what: str, end_col: int) -> str:
    if tok is None:
        raise SpecimenSyntaxError(f"missing {what}", lineno, end_col, frozenset({f"<{what}>"}))
    if tok.data is not None:
        raise SpecimenSyntaxError(f"{what} must not be quoted", lineno, tok.column, frozenset({f"<{what}>"}))
    return tok.text


def _quoted(tok: _Token | None, lineno: int, what: str, end_col: int) -> bytes:
    if tok is None or tok.data is None:
        col = tok.column if tok else end_col
        raise SpecimenSyntaxError(f"expected quoted {what}", lineno, col, frozenset({'"'}))
    return tok.data


def _parse_line(tokens: list[_Token], lineno: int, line_len: int, cursor: Iterator[tuple[int, str]], depth: int) -> Instruction:
    head = tokens[0]
    kw = head.text
    span = Span(lineno, head.column)
    args = tokens[1:]
    end_col = line_len + 1

    def arg(i: int) -> _Token | None:
        return args[i] if i < len(args) else None

    def finish(used: int) -> None:
        if len(args) > used:
            extra = args[used]
            raise SpecimenSyntaxError(f"unexpected token {extra.text!r}", lineno, extra.column, frozenset({"<end of line>"}))

    if kw == "replicate":
        path = _bare(arg(0), lineno, "path", end_col)
        word = arg(1)
        if word is None or word.text != "mutate":
            raise SpecimenSyntaxError("expected mutation clause", lineno, word.column if word else end_col, frozenset({"mutate"}))
        kind = arg(2)
        if kind is None or kind.text not in MUTATIONS:
            raise SpecimenSyntaxError("unknown mutation", lineno, kind.column if kind else end_col, frozenset(MUTATIONS))
        if kind.text == "randbytes":
            count = _int_token(arg(3), lineno, "byte count", end_col)
            finish(4)
            return Replicate(path, RandBytes(count), span)
        finish(3)
        return Replicate(path, NoMutation() if kind.text == "none" else XorKey(), span)
    if kw == "write":
        path = _bare(arg(0), lineno, "path", end_col)
        data = _quoted(arg(1), lineno, "literal", end_col)
        finish(2)
        return WriteFile(path, data, span)
    if kw == "delete":
        path = _bare(arg(0), lineno, "path", end_col)
        finish(1)
        return DeleteFile(path, span)
    if kw == "regset":
        key = _bare(arg(0), lineno, "key", end_col)
        raw = _quoted(arg(1), lineno, "value", end_col)
        try:
            value = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise SpecimenSyntaxError("registry value is not valid UTF-8", lineno, args[1].column) from None
        finish(2)
        return RegSet(key, value, span)
    if kw == "regdel":
        key = _bare(arg(0), lineno, "key", end_col)
        finish(1)
        return RegDelete(key, span)
    if kw == "spawn":
        name = _bare(arg(0), lineno, "name", end_col)
        finish(1)
        return Spawn(name, span)
    if kw == "exit":
        tok = arg(0)
        if tok is not None and tok.text == "last":
            finish(1)
            return ExitProc("last", span)
        if tok is None or not (tok.text.isdigit() and tok.text.isascii()):
            raise SpecimenSyntaxError("bad process reference", lineno, tok.column if tok else end_col,
                                      frozenset({"last", "<integer>"}))
        finish(1)
        return ExitProc(int(tok.text), span)
    if kw == "sleep":
        ms = _int_token(arg(0), lineno, "duration", end_col)
        finish(1)
        return Sleep(ms, span)
    if kw == "repeat":
        count = _int_token(arg(0), lineno, "repeat count", end_col)
        brace = arg(1)
        if brace is None or brace.text != "{":
            raise SpecimenSyntaxError("expected block opener", lineno, brace.column if brace else end_col, frozenset({"{"}))
        finish(2)
        body = _parse_block(cursor, depth + 1, opener=span)
        return Repeat(count, tuple(body), span)
    raise SpecimenSyntaxError(f"unknown instruction {kw!r}", lineno, head.column, frozenset(KEYWORDS))


def _parse_block(cursor: Iterator[tuple[int, str]], depth: int, opener: Span | None) -> list[Instruction]:
    body: list[Instruction] = []
    last_line = opener.line if opener else 0
    for lineno, line in cursor:
        last_line = lineno
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = _tokenize(line, lineno)
        if tokens[0].text == "}":
            if opener is None:
                raise SpecimenSyntaxError("unmatched '}'", lineno, tokens[0].column, frozenset(KEYWORDS))
            if len(tokens) > 1:
                raise SpecimenSyntaxError("unexpected token after '}'", lineno, tokens[1].column, frozenset({"<end of line>"}))
            return body
        body.append(_parse_line(tokens, lineno, len(line), cursor, depth))
    if opener is not None:
        raise SpecimenSyntaxError(f"block opened at {opener} is never closed", last_line + 1, 1, frozenset({"}"}))
    return body


def _split_lines(source: str) -> list[str]:
    lines = source.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [ln[:-1] if ln.endswith("\r") else ln for ln in lines]


def parse(source_text: str, *, check: bool = True) -> SpecimenProgram:
    """Parse specimen source.

    Syntax problems, a missing header and an out-of-range payload region
    always raise. With ``check`` (the default) the result of ``validate`` is
    enforced too.
    """
    lines = _split_lines(source_text)
    header = _tokenize(lines[0], 1) if lines else []
    if len(header) != 5 or header[0].text != "specimen" or header[2].text != "payload":
        raise MissingHeaderError("missing 'specimen <name> payload <offset> <length>' header", 1, 1, frozenset({"specimen"}))
    name = header[1].text
    offset = _int_token(header[3], 1, "payload offset", 0)
    length = _int_token(header[4], 1, "payload length", 0)
    if len(lines) < 2 or not lines[1].startswith("PAYLOAD:"):
        raise SpecimenSyntaxError("missing payload line", 2, 1, frozenset({"PAYLOAD:"}))

    # byte position of the payload text: header line + its terminator + "PAYLOAD:"
    first_newline = source_text.index("\n")
    base = len(source_text[:first_newline + 1].encode("utf-8")) + len(b"PAYLOAD:")
    payload_line = lines[1][len("PAYLOAD:"):].encode("utf-8")
    if offset + length > len(payload_line):
        raise PayloadBoundsError(
            f"payload region [{offset}, {offset + length}) exceeds the {len(payload_line)}-byte payload line"
        )

    cursor = iter([(i + 1, text) for i, text in enumerate(lines) if i >= 2])
    body = _parse_block(cursor, 0, opener=None)
    program = SpecimenProgram(source_text, name, offset, length, base, tuple(body))
    if check:
        errors = [d for d in validate(program) if d.severity == "error"]
        if errors:
            raise SpecimenValidationError(errors)
    return program


def serialize(program: SpecimenProgram) -> str:
    # the source text is the specimen body; re-rendering would change its digest
    return program.source_text


def _format_body(instructions: tuple[Instruction, ...] | list[Instruction], indent: int) -> list[str]:
    pad = "  " * indent
    out = []
    for ins in instructions:
        if isinstance(ins, Replicate):
            out.append(f"{pad}replicate {ins.path} mutate {ins.mutation}")
        elif isinstance(ins, WriteFile):
            out.append(f"{pad}write {ins.path} {quote(ins.data)}")
        elif isinstance(ins, DeleteFile):
            out.append(f"{pad}delete {ins.path}")
        elif isinstance(ins, RegSet):
            out.append(f"{pad}regset {ins.key} {quote(ins.value.encode('utf-8'))}")
        elif isinstance(ins, RegDelete):
            out.append(f"{pad}regdel {ins.key}")
        elif isinstance(ins, Spawn):
            out.append(f"{pad}spawn {ins.name}")
        elif isinstance(ins, ExitProc):
            out.append(f"{pad}exit {ins.ref}")
        elif isinstance(ins, Sleep):
            out.append(f"{pad}sleep {ins.ms}")
        elif isinstance(ins, Repeat):
            out.append(f"{pad}repeat {ins.count} {{")
            out.extend(_format_body(ins.body, indent + 1))
            out.append(f"{pad}}}")
        else:
            raise TypeError(f"not an instruction: {ins!r}")
    return out


def format_source(name: str, payload: str, offset: int, length: int, instructions) -> str:
    """Render an instruction tree as canonical specimen source."""
    lines = [f"specimen {name} payload {offset} {length}", f"PAYLOAD:{payload}"]
    lines += _format_body(tuple(instructions), 0)
    return "\n".join(lines) + "\n"


# -- validation --------------------------------------------------------------


def _template_problems(template: str) -> list[str]:
    problems = [f"unknown placeholder {p}" for p in unknown_placeholders(template)]
    if not problems and not (template.startswith("/") or template.startswith("%SYSROOT%")):
        problems.append(f"path template {template!r} is not absolute")
    if ".." in template.replace("\\", "/").split("/"):
        problems.append(f"path template {template!r} contains '..'")
    return problems


def validate(program: SpecimenProgram) -> list[Diagnostic]:
    diags: list[Diagnostic] = []

    def err(message: str, span: Span | None) -> None:
        diags.append(Diagnostic("error", message, span))

    if not program.instructions:
        err("specimen has no instructions", None)
    line_end = program.source_bytes.find(b"\n", program.payload_base)
    if line_end < 0:
        line_end = len(program.source_bytes)
    if program.source_bytes[line_end - 1:line_end] == b"\r":
        line_end -= 1
    if program.payload_offset < 0 or program.payload_length < 0 or program.payload_start + program.payload_length > line_end:
        err("payload region out of bounds", Span(1, 1))

    def walk(items, depth: int) -> None:
        for ins in items:
            if isinstance(ins, (Replicate, WriteFile, DeleteFile)):
                for problem in _template_problems(ins.path):
                    err(problem, ins.span)
            if isinstance(ins, Replicate) and isinstance(ins.mutation, RandBytes):
                k = ins.mutation.count
                if not 1 <= k <= program.payload_length:
                    err(f"randbytes count {k} outside [1, {program.payload_length}]", ins.span)
            elif isinstance(ins, (RegSet, RegDelete)):
                if not ins.key:
                    err("empty registry key", ins.span)
                texts = [ins.key] + ([ins.value] if isinstance(ins, RegSet) else [])
                for text in texts:
                    for p in unknown_placeholders(text):
                        err(f"unknown placeholder {p}", ins.span)
            elif isinstance(ins, Spawn) and not ins.name:
                err("empty process name", ins.span)
            elif isinstance(ins, ExitProc) and ins.ref != "last" and not (isinstance(ins.ref, int) and ins.ref >= 1):
                err(f"process ordinal must be >= 1, got {ins.ref!r}", ins.span)
            elif isinstance(ins, Sleep) and not 0 <= ins.ms <= MAX_SLEEP_MS:
                err(f"sleep {ins.ms} outside [0, {MAX_SLEEP_MS}]", ins.span)
            elif isinstance(ins, Repeat):
                if not 1 <= ins.count <= MAX_REPEAT:
                    err(f"repeat count {ins.count} outside [1, {MAX_REPEAT}]", ins.span)
                if depth + 1 > MAX_DEPTH:
                    err(f"repeat nesting depth {depth + 1} exceeds {MAX_DEPTH}", ins.span)
                    continue
                if not ins.body:
                    err("empty repeat block", ins.span)
                walk(ins.body, depth + 1)

    walk(program.instructions, 0)
    return diags


# -- offspring ---------------------------------------------------------------


class ByteSource(Protocol):
    def next_u64(self) -> int: ...

    def next_byte(self) -> int: ...


def render_offspring(program: SpecimenProgram, strategy: MutationStrategy, prng: ByteSource) -> bytes:
    """Produce the bytes a replication writes. Only the payload region changes."""
    body = program.source_bytes
    start, length = program.payload_start, program.payload_length
    if isinstance(strategy, NoMutation):
        return body
    if isinstance(strategy, RandBytes):
        k = strategy.count
        if not 1 <= k <= length:
            raise MutationError(f"randbytes {k} does not fit a {length}-byte payload")
        order = list(range(length))
        for i in range(k):
            j = i + prng.next_u64() % (length - i)
            order[i], order[j] = order[j], order[i]
        out = bytearray(body)
        for pos in order[:k]:
            out[start + pos] = prng.next_byte()
        return bytes(out)
    if isinstance(strategy, XorKey):
        key = prng.next_byte()
        mutated = bytes(b ^ key for b in body[start:start + length])
        return body[:start] + bytes([key]) + mutated + body[start + length:]
    raise MutationError(f"unknown mutation strategy {strategy!r}")
