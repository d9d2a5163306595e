"""Benchmark systems: a calibrated 1D heat generator and Matrix Market I/O."""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse

from ._validation import as_matrix
from .exceptions import InvalidInputError, MatrixMarketError
from .lti import LtiSystem

_FORMATS = ("coordinate", "array")
_FIELDS = ("real", "integer", "double")
_SYMMETRIES = ("general", "symmetric")


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    source: str
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.source not in ("generated_heat", "files"):
            raise InvalidInputError(f"unknown benchmark source {self.source!r}")


def heat_output_index(d, output_fraction):
    """Grid node nearest ``output_fraction`` on the interior grid ``x_j = j / (d + 1)``.

    Ties go to the smaller index.
    """
    x = output_fraction * (d + 1)
    node = math.ceil(x - 0.5)
    return int(min(max(node, 1), d)) - 1


def heat_kappa(d, target_abscissa):
    """Diffusivity that puts the top Dirichlet eigenvalue at ``target_abscissa``."""
    top = 4.0 * (d + 1) ** 2 * math.sin(math.pi / (2 * (d + 1))) ** 2
    return -target_abscissa / top


def heat_eigenvalues(d, kappa):
    j = np.arange(1, d + 1)
    return -4.0 * kappa * (d + 1) ** 2 * np.sin(j * np.pi / (2 * (d + 1))) ** 2


def gen_heat(d=200, output_fraction=2.0 / 3.0, target_abscissa=-0.1, noise_std=1.0):
    """Central-difference heat equation on (0, 1) with zero Dirichlet ends.

    ``A = kappa (d+1)^2 tridiag(1, -2, 1)`` with ``kappa`` calibrated so the
    spectral abscissa equals ``target_abscissa``; ``C`` samples one node and
    ``B = I``.
    """
    d = int(d)
    if d < 3:
        raise InvalidInputError(f"heat generator needs d >= 3, got {d}")
    if not target_abscissa < 0:
        raise InvalidInputError("target_abscissa must be negative")
    if not 0 < output_fraction < 1:
        raise InvalidInputError("output_fraction must lie in (0, 1)")
    kappa = heat_kappa(d, target_abscissa)
    scale = kappa * (d + 1) ** 2
    A = scale * (np.diag(np.full(d, -2.0)) + np.diag(np.ones(d - 1), 1)
                 + np.diag(np.ones(d - 1), -1))
    C = np.zeros((1, d))
    C[0, heat_output_index(d, output_fraction)] = 1.0
    return LtiSystem(A, C, np.array([[noise_std ** 2]]), np.eye(d))


# -- Matrix Market ------------------------------------------------------------

def _fail(path, line, msg):
    raise MatrixMarketError(f"{path}:{line}: {msg}")


def _validate_mm(path):
    """Line-level check so parse errors point at the offending line."""
    with open(path, encoding="ascii", errors="replace") as fh:
        lines = fh.read().splitlines()
    if not lines:
        _fail(path, 1, "empty file")
    banner = lines[0].split()
    if len(banner) != 5 or banner[0].lower() != "%%matrixmarket" or banner[1].lower() != "matrix":
        _fail(path, 1, "missing '%%MatrixMarket matrix <format> <field> <symmetry>' banner")
    fmt, fld, sym = (b.lower() for b in banner[2:])
    if fmt not in _FORMATS:
        _fail(path, 1, f"unsupported format {fmt!r}")
    if fld not in _FIELDS:
        _fail(path, 1, f"unsupported field {fld!r} (real matrices only)")
    if sym not in _SYMMETRIES:
        _fail(path, 1, f"unsupported symmetry {sym!r}")
    body = [(i + 1, ln.split()) for i, ln in enumerate(lines[1:], start=1)
            if ln.strip() and not ln.lstrip().startswith("%")]
    if not body:
        _fail(path, len(lines), "missing size line")
    size_line, size = body[0]
    want = 3 if fmt == "coordinate" else 2
    try:
        dims = [int(v) for v in size]
    except ValueError:
        _fail(path, size_line, f"size line must hold {want} integers")
    if len(dims) != want or min(dims) < 0:
        _fail(path, size_line, f"size line must hold {want} nonnegative integers")
    rows, cols = dims[:2]
    if sym == "symmetric" and rows != cols:
        _fail(path, size_line, "symmetric matrix must be square")
    if fmt == "coordinate":
        expected = dims[2]
    elif sym == "symmetric":
        expected = rows * (rows + 1) // 2
    else:
        expected = rows * cols
    entries = body[1:]
    for lineno, tok in entries:
        n_tok = 3 if fmt == "coordinate" else 1
        if len(tok) != n_tok:
            _fail(path, lineno, f"expected {n_tok} fields, found {len(tok)}")
        try:
            vals = [float(t) for t in tok]
        except ValueError:
            _fail(path, lineno, f"non-numeric entry {' '.join(tok)!r}")
        if not all(math.isfinite(v) for v in vals):
            _fail(path, lineno, "non-finite entry")
        if fmt == "coordinate":
            i, j = int(vals[0]), int(vals[1])
            if vals[0] != i or vals[1] != j or not (1 <= i <= rows and 1 <= j <= cols):
                _fail(path, lineno, f"index ({tok[0]}, {tok[1]}) outside {rows}x{cols}")
            if sym == "symmetric" and j > i:
                _fail(path, lineno, "symmetric storage holds the lower triangle only")
    if len(entries) != expected:
        where = entries[-1][0] if entries else size_line
        _fail(path, where, f"expected {expected} entries, found {len(entries)}")


def read_matrix_market(path):
    """Dense matrix from a real Matrix Market file; duplicate coordinates are summed."""
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"no such file: {path}")
    _validate_mm(path)
    try:
        M = scipy.io.mmread(str(path))
    except (ValueError, OSError) as exc:
        raise MatrixMarketError(f"{path}: {exc}") from exc
    if scipy.sparse.issparse(M):
        M = M.tocsr()  # CSR conversion sums duplicate entries
        M = M.toarray()
    return np.asarray(M, dtype=float)


def write_matrix_market(path, M, comment=""):
    """Array-format, general, 17 significant digits (round-trips doubles exactly)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    scipy.io.mmwrite(str(path), M, comment=comment, field="real", precision=17,
                     symmetry="general")
    return Path(path)


def _variance(token):
    token = token.strip()
    for suffix in ("^2", "**2", "\u00b2"):
        if token.endswith(suffix):
            return float(token[: -len(suffix)]) ** 2
    return float(token)


def parse_noise_spec(spec, k=None):
    """Noise covariance from a file path, a matrix, or an inline diagonal list.

    Inline strings look like ``"diag(0.0025^2, 5e-4^2, 2.5e-7)"`` or a plain
    comma-separated list of variances.  A trailing ``^2``, ``**2`` or ``\u00b2``
    squares a standard deviation.
    """
    if isinstance(spec, (str, Path)) and Path(str(spec)).is_file():
        N = read_matrix_market(spec)
    elif isinstance(spec, str):
        text = spec.strip()
        if text.lower().startswith("diag(") and text.endswith(")"):
            text = text[5:-1]
        try:
            vals = [_variance(v) for v in text.replace(";", ",").split(",") if v.strip()]
        except ValueError as exc:
            raise InvalidInputError(f"cannot parse noise covariance {spec!r}") from exc
        if not vals:
            raise InvalidInputError("empty noise covariance list")
        N = np.diag(vals)
    else:
        N = np.asarray(spec, dtype=float)
        if N.ndim == 1:
            N = np.diag(N)
    N = as_matrix(N, "noise_cov")
    if k is not None and N.shape != (k, k):
        raise InvalidInputError(f"noise covariance has shape {N.shape}, expected {(k, k)}")
    return N


def load_system(A_path, C_path, noise=None, B_path=None):
    """Read ``A``, ``C`` (and ``B``) from Matrix Market files.

    ``noise`` is a file path, an inline diagonal list or an array; identity
    when omitted.
    """
    A = read_matrix_market(A_path)
    C = read_matrix_market(C_path)
    B = read_matrix_market(B_path) if B_path is not None else None
    if A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"{A_path}: A must be square, got {A.shape}")
    if C.shape[1] != A.shape[0]:
        raise InvalidInputError(f"{C_path}: C has {C.shape[1]} columns, A is {A.shape[0]}x{A.shape[0]}")
    if B is not None and B.shape[0] != A.shape[0]:
        raise InvalidInputError(f"{B_path}: B has {B.shape[0]} rows, A is {A.shape[0]}x{A.shape[0]}")
    N = np.eye(C.shape[0]) if noise is None else parse_noise_spec(noise, C.shape[0])
    return LtiSystem(A, C, N, B)


def export_system(sys, out_dir, manifest=None, include_noise=True):
    """Write ``A.mtx``, ``B.mtx`` (if present), ``C.mtx``, ``noise_cov.mtx`` and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"A": "A.mtx", "C": "C.mtx"}
    if include_noise:
        files["noise_cov"] = "noise_cov.mtx"
    if sys.B is not None:
        files["B"] = "B.mtx"
    for name, fname in files.items():
        write_matrix_market(out / fname, getattr(sys, name))
    info = {"files": files, "d": sys.d, "k": sys.k,
            "spectral_abscissa": float(sys.spectral_abscissa())}
    if manifest:
        info.update(manifest)
    (out / "manifest.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return {name: out / fname for name, fname in files.items()}


def load_exported(out_dir, noise=None):
    """Inverse of :func:`export_system`; ``noise`` overrides ``noise_cov.mtx``."""
    out = Path(out_dir)
    if not (out / "A.mtx").is_file():
        raise InvalidInputError(f"{out}: no A.mtx found")
    B = out / "B.mtx"
    N = out / "noise_cov.mtx"
    if noise is None and N.is_file():
        noise = N
    return load_system(out / "A.mtx", out / "C.mtx", noise, B if B.is_file() else None)


def export_reduction(reduction, out_dir, manifest=None):
    """Write the balancing bases, reduced operators and Hankel values."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mats = {"T_r": reduction.T_r, "S_r": reduction.S_r,
            "hankel_values": reduction.hankel_values[:, None]}
    for name in ("A_r", "C_r", "B_r"):
        if getattr(reduction, name) is not None:
            mats[name] = getattr(reduction, name)
    for name, M in mats.items():
        write_matrix_market(out / f"{name}.mtx", M)
    info = {"pencil": reduction.pencil, "r": reduction.r,
            "hankel_values": reduction.hankel_values.tolist(),
            "hankel_spectrum": reduction.hankel_spectrum.tolist(),
            "reduced_abscissa": reduction.reduced_abscissa, "ties": reduction.ties,
            "files": {name: f"{name}.mtx" for name in mats}}
    if manifest:
        info.update(manifest)
    (out / "manifest.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return {name: out / f"{name}.mtx" for name in mats}
