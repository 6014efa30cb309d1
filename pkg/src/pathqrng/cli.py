"""Command-line workflows, on-disk formats, and MZI calibration fitting.

Formats owned here:

* chip configuration: versioned YAML with power coefficients (converted to
  amplitudes at load), phase errors, spectrum, loss;
* event files: TSV with a ``# key=value`` header block, one record per
  line as ``timestamp_ns<TAB>channel``;
* correlation grids: TSV long format (phi, theta, E, stderr);
* result documents: JSON with a ``kind`` discriminator.

Every writer is canonical (sorted keys, repr floats) so write -> read ->
write round-trips byte-identically, and all writes go through a
temp-then-rename so readers never see partial files.

Exit codes: 0 success, 2 validation error, 3 numerical non-convergence.
Errors are mirrored to stderr as one-line JSON records.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml
from scipy import optimize

from .bell import ChiResult, CorrelationGrid, best_combination_search, chi_alpha_ideal
from .certify import (CertificationResult, CorrectionEstimate, PhaseErrorSet,
                      certification_result, e_chi, e_p)
from .chip import ChipConfig, GenerationSetting, RotationSetting, broadband_probabilities
from .events import (EventStream, bin_and_resolve, raw_bits, simulate_events,
                     toeplitz_extract, windowed_traces)
from .optics import LossModel, MmiParams, WavelengthSpectrum
from .qmath import CHANNELS

CONFIG_DIR_ENV = "PATHQRNG_CONFIG_DIR"

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NONCONVERGENCE = 3


class ValidationError(ValueError):
    """Bad input data, files, or flags; maps to exit code 2."""


class CalibrationError(RuntimeError):
    """Degenerate or non-convergent calibration fit; maps to exit code 3."""


class ConvergenceError(RuntimeError):
    """A numerical search did not converge; maps to exit code 3."""


# ---------------------------------------------------------------------------
# calibration fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationFit:
    """Fringe fit of one MZI output port against heater electrical power.

    The model is I = a cos^2(b W + d) + c for port 1 and the sin^2
    counterpart for port 2; the phase-power relation is then the linear map
    phase(W) = b W + d.  ``stderr`` holds the per-parameter standard errors
    from the fit covariance when it is finite (a noiseless fit has none).
    """

    a: float
    b: float
    c: float
    d: float
    residual_rms: float
    port: int
    stderr: tuple[float, float, float, float] | None = None

    def __post_init__(self) -> None:
        if self.port not in (1, 2):
            raise ValueError("port must be 1 or 2")
        if self.b == 0.0:
            raise ValueError("b = 0 is not a usable phase-power relation")

    def phase(self, power_w: float) -> float:
        return self.b * power_w + self.d


def _fringe_model(port: int):
    if port == 1:
        return lambda w, a, b, c, d: a * np.cos(b * w + d) ** 2 + c
    return lambda w, a, b, c, d: a * np.sin(b * w + d) ** 2 + c


def fit_mzi_calibration(samples: Sequence[tuple[float, float]], port: int = 1) -> CalibrationFit:
    """Least-squares fringe fit of (heater power, intensity) samples.

    Needs at least 8 samples spanning at least half a fringe.  The fringe
    frequency is located by a coarse scan (linear least squares in the
    in-phase/quadrature amplitudes at each trial frequency), then all four
    parameters are refined together.  Raises :class:`CalibrationError` on
    constant data or a non-convergent refinement.
    """
    if port not in (1, 2):
        raise ValidationError("port must be 1 or 2")
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValidationError("samples must be (power, intensity) pairs")
    if arr.shape[0] < 8:
        raise ValidationError(f"need >= 8 samples, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("samples must be finite")
    w, inten = arr[:, 0], arr[:, 1]
    span = float(np.ptp(w))
    if span <= 0.0:
        raise CalibrationError("all samples at the same power; no fringe to fit")
    if np.ptp(inten) <= 1e-12 * max(1.0, float(np.abs(inten).max())):
        raise CalibrationError("constant intensity data; no fringe to fit")

    # coarse frequency scan: I ~ off + P cos(omega w) + Q sin(omega w),
    # linear in (off, P, Q); omega = 2b
    gaps = np.diff(np.sort(w))
    min_gap = float(gaps[gaps > 0].min())
    omegas = np.linspace(math.pi / span, math.pi / min_gap, 2048)
    best = None
    for omega in omegas:
        design = np.column_stack([np.ones_like(w), np.cos(omega * w), np.sin(omega * w)])
        coef, res, rank, _ = np.linalg.lstsq(design, inten, rcond=None)
        rss = float(res[0]) if res.size else float(np.sum((design @ coef - inten) ** 2))
        if best is None or rss < best[0]:
            best = (rss, omega, coef)
    _, omega0, (off0, p0c, q0c) = best
    amp0 = math.hypot(p0c, q0c)
    psi0 = math.atan2(-q0c, p0c)
    # port 1: a cos^2 = a/2 cos(2bW + 2d) + a/2;  port 2 flips the cosine sign
    a0 = 2.0 * amp0
    b0 = omega0 / 2.0
    c0 = off0 - amp0
    d0 = psi0 / 2.0 if port == 1 else (psi0 - math.pi) / 2.0

    model = _fringe_model(port)
    try:
        popt, pcov = optimize.curve_fit(model, w, inten, p0=(a0, b0, c0, d0), maxfev=20000)
    except RuntimeError as exc:
        raise CalibrationError(f"fringe fit did not converge: {exc}") from exc
    a, b, c, d = (float(v) for v in popt)
    if a < 0.0:  # a cos^2 + c = |a| cos^2(. - pi/2) + (c - |a|), same for sin^2
        a, c, d = -a, c + a, d - math.pi / 2.0
    if b < 0.0:  # both models are even under (b, d) -> (-b, -d)
        b, d = -b, -d
    d = d % math.pi
    if abs(b) * span < math.pi / 2.0:
        raise CalibrationError("samples span less than half a fringe; fit underdetermined")
    residual = float(np.sqrt(np.mean((model(w, a, b, c, d) - inten) ** 2)))
    with np.errstate(invalid="ignore"):
        perr = np.sqrt(np.diag(pcov))
    stderr = tuple(float(v) for v in perr) if np.all(np.isfinite(perr)) else None
    return CalibrationFit(a, b, c, d, residual, port, stderr)


# ---------------------------------------------------------------------------
# atomic writes and the chip configuration format
# ---------------------------------------------------------------------------

def _atomic_write(path: Path | str, data: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _require_keys(section: Mapping[str, Any], allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ValidationError(f"unknown keys {sorted(unknown)} in {where}")


def _mmi_doc(section: Mapping[str, Any] | None, where: str) -> dict[str, Any]:
    if section is None:
        section = {}
    _require_keys(section, {"t_power", "r_power", "table"}, where)
    doc = {"t_power": float(section.get("t_power", 0.5)),
           "r_power": float(section.get("r_power", 0.5))}
    if "table" in section:
        doc["table"] = [[float(v) for v in row] for row in section["table"]]
    return doc


def _mmi_from_doc(doc: Mapping[str, Any]) -> MmiParams:
    table = None
    if "table" in doc:
        table = tuple((row[0], math.sqrt(row[1]), math.sqrt(row[2])) for row in doc["table"])
    return MmiParams.from_power(doc["t_power"], doc["r_power"], table)


_SPECTRUM_KEYS = {
    "single": {"kind", "center_nm"},
    "gaussian": {"kind", "center_nm", "fwhm_nm", "points", "span_nm"},
    "table": {"kind", "nodes"},
}


def _spectrum_from_doc(doc: Mapping[str, Any]) -> WavelengthSpectrum:
    kind = doc["kind"]
    if kind == "single":
        return WavelengthSpectrum.single(doc["center_nm"])
    if kind == "gaussian":
        return WavelengthSpectrum.gaussian(doc["center_nm"], doc["fwhm_nm"],
                                           int(doc["points"]), tuple(doc["span_nm"]))
    if kind == "table":
        return WavelengthSpectrum(tuple((float(wl), float(wt)) for wl, wt in doc["nodes"]))
    raise ValidationError(f"unknown spectrum kind {kind!r}")


@dataclass(frozen=True)
class ChipDocument:
    """A parsed configuration: physical objects plus the normalized document.

    ``doc`` is the canonical dictionary the file format round-trips
    through; physical parameters live in ``config`` and ``errors``.
    """

    config: ChipConfig
    errors: PhaseErrorSet
    doc: dict[str, Any]


def _normalize_config_doc(raw: Mapping[str, Any]) -> dict[str, Any]:
    _require_keys(raw, {"version", "chip", "errors"}, "config root")
    if raw.get("version") != 1:
        raise ValidationError(f"unsupported config version {raw.get('version')!r}")
    chip = raw.get("chip") or {}
    _require_keys(chip, {"generation_mmi", "mzi_mmis", "generation", "loss", "spectrum",
                         "phase_dispersion"}, "chip section")
    mz = chip.get("mzi_mmis") or {}
    _require_keys(mz, {"phi_u", "phi_d", "theta_f", "theta_n"}, "mzi_mmis")
    gen = chip.get("generation") or {}
    _require_keys(gen, {"xi", "comp_far", "comp_near"}, "generation")
    loss = chip.get("loss") or {}
    _require_keys(loss, {"gamma", "crossing_transmission"}, "loss")
    spect = chip.get("spectrum") or {"kind": "single", "center_nm": 730.0}
    kind = spect.get("kind", "single")
    if kind not in _SPECTRUM_KEYS:
        raise ValidationError(f"unknown spectrum kind {kind!r}")
    _require_keys(spect, _SPECTRUM_KEYS[kind], "spectrum")
    err = raw.get("errors") or {}
    _require_keys(err, {"dphi", "dtheta"}, "errors")

    spect_doc: dict[str, Any] = {"kind": kind}
    if kind == "single":
        spect_doc["center_nm"] = float(spect.get("center_nm", 730.0))
    elif kind == "gaussian":
        spect_doc.update(center_nm=float(spect.get("center_nm", 730.0)),
                         fwhm_nm=float(spect.get("fwhm_nm", 20.0)),
                         points=int(spect.get("points", 21)),
                         span_nm=[float(v) for v in spect.get("span_nm", (720.0, 740.0))])
    else:
        spect_doc["nodes"] = [[float(a), float(b)] for a, b in spect["nodes"]]

    def errs(key: str) -> list[float]:
        vals = [float(v) for v in err.get(key, (0.0, 0.0, 0.0, 0.0))]
        if len(vals) != 4:
            raise ValidationError(f"errors.{key} needs exactly 4 entries")
        return vals

    return {
        "version": 1,
        "chip": {
            "generation_mmi": _mmi_doc(chip.get("generation_mmi"), "generation_mmi"),
            "mzi_mmis": {k: _mmi_doc(mz.get(k), f"mzi_mmis.{k}")
                         for k in ("phi_u", "phi_d", "theta_f", "theta_n")},
            "generation": {"xi": float(gen.get("xi", -math.pi / 2.0)),
                           "comp_far": float(gen.get("comp_far", 0.0)),
                           "comp_near": float(gen.get("comp_near", 0.0))},
            "loss": {"gamma": float(loss.get("gamma", 1.0)),
                     "crossing_transmission": float(loss.get("crossing_transmission", 1.0))},
            "spectrum": spect_doc,
            "phase_dispersion": bool(chip.get("phase_dispersion", False)),
        },
        "errors": {"dphi": errs("dphi"), "dtheta": errs("dtheta")},
    }


def _document_to_objects(doc: Mapping[str, Any]) -> tuple[ChipConfig, PhaseErrorSet]:
    chip = doc["chip"]
    mz = chip["mzi_mmis"]
    try:
        config = ChipConfig(
            generation_mmi=_mmi_from_doc(chip["generation_mmi"]),
            mzi_mmis=tuple(_mmi_from_doc(mz[k])
                           for k in ("phi_u", "phi_d", "theta_f", "theta_n")),
            generation=GenerationSetting(**chip["generation"]),
            loss=LossModel(**chip["loss"]),
            spectrum=_spectrum_from_doc(chip["spectrum"]),
            phase_dispersion=chip["phase_dispersion"],
        )
        errors = PhaseErrorSet(tuple(doc["errors"]["dphi"]), tuple(doc["errors"]["dtheta"]))
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    return config, errors


def load_chip_config(path: Path | str) -> ChipDocument:
    """Parse, validate, and normalize a chip configuration file."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ValidationError(f"malformed config: {exc}") from exc
    if not isinstance(raw, Mapping):
        raise ValidationError("config root must be a mapping")
    doc = _normalize_config_doc(raw)
    config, errors = _document_to_objects(doc)
    return ChipDocument(config, errors, doc)


def dump_chip_config(doc: Mapping[str, Any]) -> str:
    """Canonical YAML emission of a normalized configuration document."""
    return yaml.safe_dump(_normalize_config_doc(doc), sort_keys=True,
                          default_flow_style=False)


def write_chip_config(doc: Mapping[str, Any], path: Path | str) -> None:
    _atomic_write(path, dump_chip_config(doc))


def _resolve_config_path(value: str) -> Path:
    p = Path(value)
    if p.exists():
        return p
    env_dir = os.environ.get(CONFIG_DIR_ENV)
    if env_dir and (Path(env_dir) / value).exists():
        return Path(env_dir) / value
    raise ValidationError(f"config file {value!r} not found"
                          + (f" (also tried ${CONFIG_DIR_ENV})" if env_dir else ""))


# ---------------------------------------------------------------------------
# event and grid files
# ---------------------------------------------------------------------------

_EVENT_MAGIC = "# pathqrng-events v1"
_GRID_MAGIC = "# pathqrng-grid v1"


def write_event_file(stream: EventStream, path: Path | str) -> None:
    lines = [_EVENT_MAGIC,
             f"# phi={stream.phi!r}",
             f"# theta={stream.theta!r}",
             f"# duration_s={stream.duration_s!r}",
             f"# bin_width_us={stream.bin_width_us!r}",
             f"# seed={stream.seed}"]
    if stream.rate_hz is not None:
        lines.append(f"# rate_hz={stream.rate_hz!r}")
    lines.append("timestamp_ns\tchannel")
    labels = np.asarray(CHANNELS)
    lines.extend(f"{int(t)}\t{labels[c]}" for t, c in zip(stream.timestamps_ns, stream.channels))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_event_file(path: Path | str) -> EventStream:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != _EVENT_MAGIC:
        raise ValidationError(f"{path}: not a pathqrng event file")
    meta: dict[str, str] = {}
    body_start = None
    for i, line in enumerate(text[1:], start=1):
        if line.startswith("# "):
            key, _, value = line[2:].partition("=")
            meta[key] = value
        elif line == "timestamp_ns\tchannel":
            body_start = i + 1
            break
        else:
            raise ValidationError(f"{path}: unexpected header line {line!r}")
    if body_start is None:
        raise ValidationError(f"{path}: missing column header")
    required = {"phi", "theta", "duration_s", "bin_width_us", "seed"}
    if not required <= set(meta):
        raise ValidationError(f"{path}: missing meta fields {sorted(required - set(meta))}")
    rows = [line for line in text[body_start:] if line]
    ts = np.empty(len(rows), dtype=np.int64)
    ch = np.empty(len(rows), dtype=np.uint8)
    index = {c: i for i, c in enumerate(CHANNELS)}
    try:
        for k, line in enumerate(rows):
            t_str, c_str = line.split("\t")
            ts[k] = int(t_str)
            ch[k] = index[c_str]
    except (ValueError, KeyError) as exc:
        raise ValidationError(f"{path}: malformed record {line!r}") from exc
    try:
        return EventStream(
            ts, ch, phi=float(meta["phi"]), theta=float(meta["theta"]),
            duration_s=float(meta["duration_s"]), bin_width_us=float(meta["bin_width_us"]),
            seed=int(meta["seed"]),
            rate_hz=float(meta["rate_hz"]) if "rate_hz" in meta else None)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def write_grid_file(grid: CorrelationGrid, path: Path | str) -> None:
    lines = [_GRID_MAGIC, "phi\ttheta\te\tstderr"]
    for i, phi in enumerate(grid.phi_values):
        for j, theta in enumerate(grid.theta_values):
            se = float("nan") if grid.stderr is None else float(grid.stderr[i, j])
            lines.append(f"{float(phi)!r}\t{float(theta)!r}\t{float(grid.e[i, j])!r}\t{se!r}")
    _atomic_write(path, "\n".join(lines) + "\n")


def read_grid_file(path: Path | str) -> CorrelationGrid:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != _GRID_MAGIC:
        raise ValidationError(f"{path}: not a pathqrng grid file")
    if len(text) < 2 or text[1] != "phi\ttheta\te\tstderr":
        raise ValidationError(f"{path}: missing column header")
    cells: dict[tuple[float, float], tuple[float, float]] = {}
    for line in text[2:]:
        if not line:
            continue
        try:
            p_str, t_str, e_str, s_str = line.split("\t")
            key = (float(p_str), float(t_str))
        except ValueError as exc:
            raise ValidationError(f"{path}: malformed row {line!r}") from exc
        if key in cells:
            raise ValidationError(f"{path}: duplicate cell phi={key[0]} theta={key[1]}")
        cells[key] = (float(e_str), float(s_str))
    phis = sorted({k[0] for k in cells})
    thetas = sorted({k[1] for k in cells})
    e = np.full((len(phis), len(thetas)), np.nan)
    se = np.full((len(phis), len(thetas)), np.nan)
    for (p, t), (ev, sv) in cells.items():
        e[phis.index(p), thetas.index(t)] = ev
        se[phis.index(p), thetas.index(t)] = sv
    stderr = None if np.all(np.isnan(se)) else se
    try:
        return CorrelationGrid(tuple(phis), tuple(thetas), e, stderr)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# JSON result documents
# ---------------------------------------------------------------------------

def _dump_json(doc: Mapping[str, Any]) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def write_json_doc(doc: Mapping[str, Any], path: Path | str) -> None:
    if "kind" not in doc:
        raise ValidationError("result documents need a 'kind' field")
    _atomic_write(path, _dump_json(doc))


def read_json_doc(path: Path | str) -> dict[str, Any]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON: {exc}") from exc
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ValidationError(f"{path}: not a result document (no 'kind')")
    return doc


def chi_result_doc(result: ChiResult) -> dict[str, Any]:
    a = [float(v) for v in result.angles]
    return {"kind": "chi-result", "chi": float(result.chi), "stderr": float(result.stderr),
            "sign": result.sign,
            "angles": {"phi": a[0], "phi_prime": a[1], "theta": a[2], "theta_prime": a[3]}}


def correction_doc(term: str, est: CorrectionEstimate) -> dict[str, Any]:
    return {"kind": "correction-estimate", "term": term, "value": est.value,
            "converged": est.converged, "starts": est.starts, "probes": est.probes,
            "seed": est.seed, "angles": list(est.angles), "probe_best": est.probe_best}


def certification_doc(result: CertificationResult,
                      e_chi_est: CorrectionEstimate | None = None,
                      e_p_est: CorrectionEstimate | None = None) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "kind": "certification", "chi_real": result.chi_real, "e_chi": result.e_chi,
        "e_p": result.e_p, "p_guess": result.p_guess, "h_min_bits": result.h_min_bits,
        "h_min_percent": result.h_min_percent, "certified_rate_hz": result.certified_rate_hz,
    }
    if e_chi_est is not None:
        doc["e_chi_estimate"] = correction_doc("e_chi", e_chi_est)
    if e_p_est is not None:
        doc["e_p_estimate"] = correction_doc("e_p", e_p_est)
    return doc


def calibration_doc(fit: CalibrationFit) -> dict[str, Any]:
    return {"kind": "mzi-calibration", "a": fit.a, "b": fit.b, "c": fit.c, "d": fit.d,
            "residual_rms": fit.residual_rms, "port": fit.port,
            "stderr": list(fit.stderr) if fit.stderr is not None else None}


# ---------------------------------------------------------------------------
# subcommand helpers
# ---------------------------------------------------------------------------

def _parse_angle_pairs(text: str) -> list[tuple[float, float]]:
    pairs = []
    for chunk in text.split(","):
        phi_str, sep, theta_str = chunk.partition(":")
        if not sep:
            raise ValidationError(f"bad angle pair {chunk!r}; expected phi:theta")
        try:
            pairs.append((float(phi_str), float(theta_str)))
        except ValueError as exc:
            raise ValidationError(f"bad angle pair {chunk!r}: {exc}") from exc
    return pairs


def _scan_schedule(step: float) -> list[tuple[float, float]]:
    """The measurement scan: phi in [-2, 2], theta in [-2, 0]."""
    if step <= 0.0:
        raise ValidationError("scan step must be positive")
    n_phi = int(round(4.0 / step)) + 1
    n_theta = int(round(2.0 / step)) + 1
    phis = np.linspace(-2.0, 2.0, n_phi)
    thetas = np.linspace(-2.0, 0.0, n_theta)
    return [(float(p), float(t)) for p in phis for t in thetas]


def _load_optional_config(path_value: str | None) -> ChipDocument:
    if path_value is None:
        zero = (0.0, 0.0, 0.0, 0.0)
        return ChipDocument(ChipConfig.balanced(), PhaseErrorSet(zero, zero),
                            _normalize_config_doc({"version": 1}))
    return load_chip_config(_resolve_config_path(path_value))


def _stream_correlation(stream: EventStream) -> tuple[float, float, int]:
    """(E, binomial stderr, N) from a stream's raw record counts."""
    counts = np.bincount(stream.channels, minlength=4).astype(float)
    n = int(counts.sum())
    if n == 0:
        raise ValidationError("event stream holds no records")
    p = counts / n
    e = p[0] + p[3] - p[1] - p[2]
    stderr = math.sqrt(max(1.0 - e * e, 0.0) / n)
    return float(e), stderr, n


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_simulate(args: argparse.Namespace) -> int:
    chipdoc = _load_optional_config(args.config)
    if (args.angles is None) == (not args.scan):
        raise ValidationError("exactly one of --angles or --scan is required")
    pairs = _parse_angle_pairs(args.angles) if args.angles else _scan_schedule(args.scan_step)
    out = Path(args.out)
    seeds = np.random.SeedSequence(args.seed).generate_state(len(pairs))
    for i, (phi, theta) in enumerate(pairs):
        setting = RotationSetting.from_angles(phi, theta, chipdoc.errors.dphi,
                                              chipdoc.errors.dtheta)
        dist = broadband_probabilities(chipdoc.config, setting)
        try:
            stream = simulate_events(dist, args.rate_hz, args.duration_s, args.bin_us,
                                     seed=int(seeds[i]), phi=phi, theta=theta)
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc
        write_event_file(stream, out / f"events_{i:04d}.tsv")
    print(f"simulated {len(pairs)} angle pairs -> {out} "
          f"({args.rate_hz:g} Hz x {args.duration_s:g} s each, master seed {args.seed})")
    return EXIT_OK


def _cmd_bell_scan(args: argparse.Namespace) -> int:
    files = sorted(Path(args.events).glob("*.tsv"))
    if not files:
        raise ValidationError(f"no event files under {args.events}")
    cells: dict[tuple[float, float], tuple[float, float]] = {}
    for f in files:
        stream = read_event_file(f)
        key = (stream.phi, stream.theta)
        if key in cells:
            raise ValidationError(f"duplicate angle pair {key} in {f}")
        e, se, _ = _stream_correlation(stream)
        cells[key] = (e, se)
    phis = tuple(sorted({k[0] for k in cells}))
    thetas = tuple(sorted({k[1] for k in cells}))
    e = np.full((len(phis), len(thetas)), np.nan)
    se = np.full((len(phis), len(thetas)), np.nan)
    for (p, t), (ev, sv) in cells.items():
        e[phis.index(p), thetas.index(t)] = ev
        se[phis.index(p), thetas.index(t)] = sv
    try:
        grid = CorrelationGrid(phis, thetas, e, se)
        best_max, best_min = best_combination_search(grid)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    out = Path(args.out)
    write_grid_file(grid, out / "grid.tsv")
    write_json_doc(chi_result_doc(best_max), out / "chi_max.json")
    write_json_doc(chi_result_doc(best_min), out / "chi_min.json")
    print(f"grid {len(phis)} phi x {len(thetas)} theta from {len(files)} files -> {out}")
    for r in (best_max, best_min):
        a = r.angles
        print(f"chi_{r.sign} = {r.chi:+.6f} +- {r.stderr:.6f} at "
              f"phi={a[0]:+.4f} phi'={a[1]:+.4f} theta={a[2]:+.4f} theta'={a[3]:+.4f}")
    return EXIT_OK


def _cmd_certify(args: argparse.Namespace) -> int:
    if (args.chi is None) == (args.chi_file is None):
        raise ValidationError("exactly one of --chi or --chi-file is required")
    if args.chi is not None:
        chi_value = args.chi
    else:
        doc = read_json_doc(args.chi_file)
        if doc["kind"] != "chi-result":
            raise ValidationError(f"{args.chi_file}: expected a chi-result document")
        chi_value = float(doc["chi"])

    ec_est = ep_est = None
    if args.e_chi is not None and args.e_p is not None:
        ec_val, ep_val = args.e_chi, args.e_p
    else:
        chipdoc = _load_optional_config(args.config)
        ec_est = e_chi(chipdoc.errors, chipdoc.config.mzi_mmis, starts=args.starts,
                       probes=args.probes, seed=args.opt_seed)
        ep_est = e_p(chipdoc.errors, chipdoc.config.mzi_mmis, starts=args.starts,
                     probes=args.probes, seed=args.opt_seed)
        ec_val, ep_val = ec_est.value, ep_est.value

    try:
        result = certification_result(chi_value, ec_val, ep_val, args.rate_hz)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    write_json_doc(certification_doc(result, ec_est, ep_est), args.out)
    _print_certification(result)
    print(f"wrote {args.out}")
    if (ec_est is not None and not ec_est.converged) or \
            (ep_est is not None and not ep_est.converged):
        raise ConvergenceError("correction-term search did not converge; "
                               "increase --starts")
    return EXIT_OK


def _print_certification(result: CertificationResult) -> None:
    print(f"chi_real = {result.chi_real:.6f}, e_chi = {result.e_chi:.6f}, "
          f"e_p = {result.e_p:.6f}")
    if result.h_min_bits == 0.0:
        print("no certified entropy: the corrected violation does not beat "
              "the classical bound 2")
        return
    print(f"guessing probability <= {result.p_guess:.6f}")
    print(f"min-entropy {result.h_min_bits:.6f} bits/event ({result.h_min_percent:.2f} %)")
    if result.certified_rate_hz is not None:
        print(f"certified rate {result.certified_rate_hz:.1f} bits/s")


def _cmd_analyze(args: argparse.Namespace) -> int:
    streams = [read_event_file(f) for f in args.events]
    try:
        trace = windowed_traces(streams, args.window_ms / 1000.0, args.confidence)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    header = ["window", "t_mid_s"]
    for s in range(1, 5):
        header += [f"p{s}_{c.lower()}" for c in CHANNELS]
    header += [f"e{s}" for s in range(1, 5)] + ["chi"]
    lines = [",".join(header)]
    es = (trace.probabilities[:, :, 0] + trace.probabilities[:, :, 3]
          - trace.probabilities[:, :, 1] - trace.probabilities[:, :, 2])
    for w in range(trace.n_windows):
        row = [str(w), repr((w + 0.5) * trace.window_s)]
        for s in range(4):
            row += [repr(float(v)) for v in trace.probabilities[s, w]]
        row += [repr(float(es[s, w])) for s in range(4)]
        row.append(repr(float(trace.chi_values[w])))
        lines.append(",".join(row))
    _atomic_write(args.out, "\n".join(lines) + "\n")
    print(f"{trace.n_windows} windows of {trace.window_s * 1000:g} ms -> {args.out}")
    print(f"chi mean {trace.chi_mean:+.6f}, {trace.confidence * 100:g}% CI "
          f"[{trace.ci_low:+.6f}, {trace.ci_high:+.6f}]")
    return EXIT_OK


def _cmd_extract(args: argparse.Namespace) -> int:
    stream = read_event_file(args.events)
    try:
        outcomes = bin_and_resolve(stream, tie_seed=args.tie_seed, mode=args.tie_mode)
        bits = raw_bits(outcomes)
        extracted = toeplitz_extract(bits, args.h_min, security_eps=args.eps, seed=args.seed)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    _atomic_write(args.out, extracted + "\n")
    print(f"{len(stream)} records -> {outcomes.size} outcomes -> {len(bits)} raw bits "
          f"-> {len(extracted)} extracted bits ({args.out})")
    return EXIT_OK


def _cmd_calibrate(args: argparse.Namespace) -> int:
    rows = []
    for line in Path(args.samples).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", "\t").split()
        if len(parts) != 2:
            raise ValidationError(f"{args.samples}: malformed sample line {line!r}")
        rows.append((float(parts[0]), float(parts[1])))
    fit = fit_mzi_calibration(rows, args.port)
    doc = calibration_doc(fit)
    if args.out:
        write_json_doc(doc, args.out)
        print(f"wrote {args.out}")
    print(f"port {fit.port}: I = {fit.a:.6g} * "
          f"{'cos' if fit.port == 1 else 'sin'}^2({fit.b:.6g} W + {fit.d:.6g}) + {fit.c:.6g}"
          f"  (residual rms {fit.residual_rms:.3g})")
    return EXIT_OK


_ALPHA_CURVE_POINTS = 181


def _write_chi_alpha_curve(path: Path) -> None:
    alphas = np.linspace(0.0, math.pi / 2.0, _ALPHA_CURVE_POINTS)
    lines = ["alpha,chi"]
    lines += [f"{repr(float(a))},{repr(chi_alpha_ideal(float(a)))}" for a in alphas]
    _atomic_write(path, "\n".join(lines) + "\n")


def _cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.result)
    plots = Path(args.plots_dir) if args.plots_dir else None
    if path.suffix == ".tsv":
        grid = read_grid_file(path)
        finite = np.isfinite(grid.e)
        print(f"correlation grid: {len(grid.phi_values)} phi x "
              f"{len(grid.theta_values)} theta, {int(finite.sum())} cells")
        print(f"E range [{np.nanmin(grid.e):+.6f}, {np.nanmax(grid.e):+.6f}]")
        if plots:
            lines = ["phi,theta,e,stderr"]
            for i, p in enumerate(grid.phi_values):
                for j, t in enumerate(grid.theta_values):
                    se = float("nan") if grid.stderr is None else float(grid.stderr[i, j])
                    lines.append(f"{float(p)!r},{float(t)!r},{float(grid.e[i, j])!r},{se!r}")
            _atomic_write(plots / "e_surface.csv", "\n".join(lines) + "\n")
            print(f"wrote {plots / 'e_surface.csv'}")
        return EXIT_OK

    doc = read_json_doc(path)
    kind = doc["kind"]
    if kind == "chi-result":
        a = doc["angles"]
        print(f"chi_{doc['sign']} = {doc['chi']:+.6f} +- {doc['stderr']:.6f}")
        print(f"angles: phi={a['phi']:+.4f} phi'={a['phi_prime']:+.4f} "
              f"theta={a['theta']:+.4f} theta'={a['theta_prime']:+.4f}")
        if plots:
            _write_chi_alpha_curve(plots / "chi_alpha_curve.csv")
            print(f"wrote {plots / 'chi_alpha_curve.csv'}")
    elif kind == "certification":
        result = CertificationResult(
            doc["chi_real"], doc["e_chi"], doc["e_p"], doc["p_guess"],
            doc["h_min_bits"], doc["h_min_percent"], doc["certified_rate_hz"])
        _print_certification(result)
        if plots:
            _write_chi_alpha_curve(plots / "chi_alpha_curve.csv")
            xs = np.linspace(2.0, 2.0 * math.sqrt(2.0), 200)
            lines = ["x,p_guess_bound"]
            lines += [f"{repr(float(x))},{repr(0.5 + 0.5 * math.sqrt(max(2.0 - x * x / 4.0, 0.0)))}"
                      for x in xs]
            _atomic_write(plots / "guessing_bound.csv", "\n".join(lines) + "\n")
            print(f"wrote {plots / 'chi_alpha_curve.csv'} and {plots / 'guessing_bound.csv'}")
    elif kind == "mzi-calibration":
        print(f"port {doc['port']}: a={doc['a']:.6g} b={doc['b']:.6g} "
              f"c={doc['c']:.6g} d={doc['d']:.6g} (residual rms {doc['residual_rms']:.3g})")
    elif kind == "correction-estimate":
        print(f"{doc['term']} = {doc['value']:.6f} (converged={doc['converged']}, "
              f"starts={doc['starts']}, probes={doc['probes']}, seed={doc['seed']})")
    else:
        raise ValidationError(f"{path}: no report for document kind {kind!r}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and entry point
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        _emit_error_record("usage", self.prog, message)
        raise SystemExit(EXIT_VALIDATION)


def _emit_error_record(error: str, subcommand: str, message: str) -> None:
    print(json.dumps({"error": error, "subcommand": subcommand, "message": message},
                     sort_keys=True), file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pathqrng", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate event files for angle pairs")
    p.add_argument("--config", help=f"chip config (also looked up in ${CONFIG_DIR_ENV})")
    p.add_argument("--angles", help="comma-separated phi:theta pairs, radians")
    p.add_argument("--scan", action="store_true", help="full measurement scan instead")
    p.add_argument("--scan-step", type=float, default=0.1)
    p.add_argument("--rate-hz", type=float, default=120_000.0)
    p.add_argument("--duration-s", type=float, default=1.0)
    p.add_argument("--bin-us", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0, help="master seed for all pairs")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("bell-scan", help="correlation grid and best Bell combination")
    p.add_argument("--events", required=True, help="directory of event files")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("certify", help="min-entropy certification from a violation")
    p.add_argument("--chi", type=float, help="measured Bell value")
    p.add_argument("--chi-file", help="chi-result JSON instead of --chi")
    p.add_argument("--config", help="chip config carrying the phase error set")
    p.add_argument("--e-chi", type=float, help="precomputed CHSH correction")
    p.add_argument("--e-p", type=float, help="precomputed probability correction")
    p.add_argument("--starts", type=int, default=64)
    p.add_argument("--probes", type=int, default=100_000)
    p.add_argument("--opt-seed", type=int, default=20240)
    p.add_argument("--rate-hz", type=float, help="event rate for the certified bit rate")
    p.add_argument("--out", required=True, help="certification JSON path")

    p = sub.add_parser("analyze", help="windowed probability and Bell traces")
    p.add_argument("--events", nargs=4, required=True, metavar="FILE",
                   help="four event files in CHSH setting order")
    p.add_argument("--window-ms", type=float, default=50.0)
    p.add_argument("--confidence", type=float, default=0.99)
    p.add_argument("--out", required=True, help="trace CSV path")

    p = sub.add_parser("extract", help="tie-resolve, collect raw bits, Toeplitz-extract")
    p.add_argument("--events", required=True, help="event file")
    p.add_argument("--h-min", type=float, required=True, help="certified bits per event")
    p.add_argument("--eps", type=float, default=2.0 ** -32, help="security parameter")
    p.add_argument("--tie-seed", type=int, default=0)
    p.add_argument("--tie-mode", choices=("fired", "uniform4"), default="fired")
    p.add_argument("--seed", type=int, default=0, help="Toeplitz seed")
    p.add_argument("--out", required=True, help="extracted bit file")

    p = sub.add_parser("calibrate", help="fit the MZI phase-power relation")
    p.add_argument("--samples", required=True, help="TSV/CSV of power, intensity")
    p.add_argument("--port", type=int, choices=(1, 2), default=1)
    p.add_argument("--out", help="calibration JSON path (default: print only)")

    p = sub.add_parser("report", help="human summary and plot CSVs from a result file")
    p.add_argument("--result", required=True, help="JSON document or grid TSV")
    p.add_argument("--plots-dir", help="directory for plot-ready CSVs")
    return parser


_HANDLERS = {
    "simulate": _cmd_simulate,
    "bell-scan": _cmd_bell_scan,
    "certify": _cmd_certify,
    "analyze": _cmd_analyze,
    "extract": _cmd_extract,
    "calibrate": _cmd_calibrate,
    "report": _cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handler = _HANDLERS[args.command]
    try:
        return handler(args)
    except (ValidationError, OSError) as exc:
        _emit_error_record(type(exc).__name__, args.command, str(exc))
        return EXIT_VALIDATION
    except ValueError as exc:
        _emit_error_record(type(exc).__name__, args.command, str(exc))
        return EXIT_VALIDATION
    except (CalibrationError, ConvergenceError) as exc:
        _emit_error_record(type(exc).__name__, args.command, str(exc))
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    raise SystemExit(main())
