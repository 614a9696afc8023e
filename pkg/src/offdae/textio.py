"""Plain-text formats for MDPs, datasets, fit reports, checkpoints and configs.

MDP files are ``key value...`` lines.  Scalars are single tokens; tables are
flattened row-major after their key:

    num_states 4
    num_actions 2
    discount 1
    initial_dist 0.9 0.1 0 0
    terminal 0 0 0 1
    action_mask 1 0 1 0 1 1 1 1
    reward ...            # S*A values, index s*A + a
    transition ...        # S*A*S values, index (s*A + a)*S + s'

Dataset files hold one trajectory per line, ``s a r s a r ... s_final T``
with ``T`` for a terminal ending and ``X`` for a truncated one.  A line may
start with ``@w`` to give the trajectory weight ``w``.  ``#`` starts a
comment everywhere.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .mdp import Dataset, FiniteMdp, Trajectory

__all__ = [
    "fmt",
    "dump_mdp",
    "load_mdp",
    "dump_dataset",
    "load_dataset",
    "fit_report_rows",
    "dump_fit_report",
    "dump_checkpoint",
    "load_checkpoint",
    "parse_kv",
    "write_csv",
    "read_csv",
]


def fmt(x) -> str:
    """Float formatting used in every output file (17 significant digits)."""
    return format(float(x), ".17g")


def _strip(line: str) -> str:
    return line.split("#", 1)[0].strip()


def _kv_tokens(text: str) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip(raw)
        if not line:
            continue
        key, *vals = line.split()
        if key in out:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        out[key] = vals
    return out


def dump_mdp(mdp: FiniteMdp) -> str:
    def row(key, values):
        return key + " " + " ".join(fmt(v) for v in np.ravel(values))

    lines = [
        "# offdae finite MDP",
        f"name {mdp.name}" if mdp.name else "",
        f"num_states {mdp.num_states}",
        f"num_actions {mdp.num_actions}",
        f"discount {fmt(mdp.discount)}",
        row("initial_dist", mdp.initial_dist),
        "terminal " + " ".join(str(int(t)) for t in mdp.terminal),
        "action_mask " + " ".join(str(int(m)) for m in np.ravel(mdp.action_mask)),
        row("reward", mdp.reward),
        row("transition", mdp.transition),
    ]
    return "\n".join(line for line in lines if line) + "\n"


def load_mdp(text: str) -> FiniteMdp:
    kv = _kv_tokens(text)
    required = ("num_states", "num_actions", "discount", "initial_dist", "terminal", "reward", "transition")
    missing = [k for k in required if k not in kv]
    if missing:
        raise ConfigurationError(f"MDP file is missing {missing}")
    try:
        S = int(kv["num_states"][0])
        A = int(kv["num_actions"][0])

        def table(key, shape, kind=float):
            vals = np.array([kind(float(v)) for v in kv[key]])
            if vals.size != int(np.prod(shape)):
                raise ConfigurationError(f"{key} needs {int(np.prod(shape))} values, got {vals.size}")
            return vals.reshape(shape)

        mask = table("action_mask", (S, A), bool) if "action_mask" in kv else None
        return FiniteMdp(
            transition=table("transition", (S, A, S)),
            reward=table("reward", (S, A)),
            discount=float(kv["discount"][0]),
            initial_dist=table("initial_dist", (S,)),
            terminal=table("terminal", (S,), bool),
            action_mask=mask,
            name=kv.get("name", [""])[0],
        )
    except (ValueError, IndexError) as exc:
        raise ConfigurationError(f"malformed MDP file: {exc}") from exc


def dump_dataset(data: Dataset) -> str:
    lines = []
    for traj, w in data:
        toks = [f"@{fmt(w)}"] if data.weights is not None else []
        for s, a, r in traj.steps:
            toks += [str(s), str(a), fmt(r)]
        toks += [str(traj.final_state), "X" if traj.truncated else "T"]
        lines.append(" ".join(toks))
    return "\n".join(lines) + "\n"


def load_dataset(text: str) -> Dataset:
    trajs, weights, any_weight = [], [], False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip(raw)
        if not line:
            continue
        toks = line.split()
        w = 1.0
        if toks[0].startswith("@"):
            w = float(toks[0][1:])
            any_weight = True
            toks = toks[1:]
        if len(toks) < 2 or toks[-1] not in ("T", "X") or (len(toks) - 2) % 3:
            raise ConfigurationError(f"line {lineno}: expected 's a r ... s_final T|X'")
        try:
            body = toks[:-2]
            steps = tuple((int(body[i]), int(body[i + 1]), float(body[i + 2])) for i in range(0, len(body), 3))
            trajs.append(Trajectory(steps, int(toks[-2]), toks[-1] == "X"))
        except ValueError as exc:
            raise ConfigurationError(f"line {lineno}: {exc}") from exc
        weights.append(w)
    return Dataset(tuple(trajs), tuple(weights) if any_weight else None)


def fit_report_rows(report) -> list[list[str]]:
    """``entity,index,value`` rows; absent entries are written as ``nan``."""
    rows = [["entity", "index", "value"]]
    T = report.tables
    for s, v in enumerate(T.V):
        rows.append(["V", str(s), fmt(v)])
    for (s, a), v in np.ndenumerate(T.A):
        rows.append(["A", f"{s}:{a}", fmt(v)])
    if T.B is not None:
        for (s, a, s2), v in T.B.items():
            rows.append(["B", f"{s}:{a}:{s2}", fmt(v)])
    rows.append(["objective", "", fmt(report.objective_value)])
    rows.append(["rank", "", str(report.design_rank)])
    rows.append(["unique", "", str(int(report.unique))])
    return rows


def dump_fit_report(report) -> str:
    return _csv_text(fit_report_rows(report))


def _csv_text(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def write_csv(path, header: list[str], rows: list[list]) -> None:
    """Write a CSV with a header row; floats use :func:`fmt`."""
    def cell(x):
        if isinstance(x, (float, np.floating)):
            return fmt(x)
        return str(x)

    text = _csv_text([header] + [[cell(x) for x in row] for row in rows])
    Path(path).write_text(text)


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigurationError(f"{path} is empty")
    return rows[0], rows[1:]


_CKPT_TABLES = ("logits", "V", "A", "B", "logits_ema", "V_ema", "A_ema", "B_ema", "counts")


def dump_checkpoint(agent) -> str:
    """Agent tables and step counter; the replay buffer is not stored."""
    S, A = agent.logits.shape
    lines = ["# offdae agent checkpoint", f"num_states {S}", f"num_actions {A}", f"steps {agent.steps}"]
    lines.append("mask " + " ".join(str(int(m)) for m in np.ravel(agent.mask)))
    for name in _CKPT_TABLES:
        lines.append(name + " " + " ".join(fmt(v) for v in np.ravel(getattr(agent, name))))
    return "\n".join(lines) + "\n"


def load_checkpoint(text: str, buffer_capacity: int = 10_000):
    from .actor_critic import AgentState, ReplayBuffer

    kv = _kv_tokens(text)
    try:
        S, A = int(kv["num_states"][0]), int(kv["num_actions"][0])
        shapes = {"logits": (S, A), "V": (S,), "A": (S, A), "B": (S, A, S), "counts": (S, A, S)}
        tables = {}
        for name in _CKPT_TABLES:
            shape = shapes[name.replace("_ema", "")]
            tables[name] = np.array([float(v) for v in kv[name]]).reshape(shape)
        mask = np.array([bool(int(v)) for v in kv["mask"]]).reshape(S, A)
        steps = int(kv["steps"][0])
    except (KeyError, ValueError, IndexError) as exc:
        raise ConfigurationError(f"malformed checkpoint: {exc}") from exc
    return AgentState(mask=mask, buffer=ReplayBuffer(buffer_capacity), steps=steps, **tables)


def parse_kv(text: str) -> dict[str, str]:
    """``key = value`` or ``key value`` lines; ``#`` comments; last value wins."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip(raw)
        if not line:
            continue
        if "=" in line:
            key, _, value = line.partition("=")
        else:
            key, _, value = line.partition(" ")
        key, value = key.strip(), value.strip()
        if not key or not value:
            raise ConfigurationError(f"config line {lineno}: expected 'key = value'")
        out[key] = value
    return out
