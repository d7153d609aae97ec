"""Protocol states, Bell-state analyzer, and the heralded pipelines.

The Bell analyzer is a central polarizing beam splitter (transmits H,
reflects V) feeding two diagonal-basis analyzers (transmit |+>, reflect
|->) with four number-resolved detectors D1..D4.  A stage is accepted
only on the paired two-detector coincidences D1&D3 / D2&D4 (same class)
or D1&D4 / D2&D3 (cross class); the cross class needs a phase flip on
one memory qubit's d arm, which is computed here from the engine rather
than assumed.

The three pipelines (local entanglement, elementary link, swap) compose
the state constructors with loss channels and the analyzer, and report
accept probability plus the corrected fidelity of the post-selected
memory state.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import ProtocolParams
from .fock import (
    FockError,
    ModeId,
    ModeRegistry,
    PureState,
    WeightedEnsemble,
)
from .rates import fiber_transmission

SQRT_HALF = 1.0 / math.sqrt(2.0)

DETECTORS = ("D1", "D2", "D3", "D4")


class OpticsError(FockError):
    """Raised when a pipeline input does not match its contract."""


class BsmOutcome(Enum):
    """Heralding classification of a detection pattern."""

    ACCEPT_SAME = "accept_same"    # D1&D3 or D2&D4
    ACCEPT_CROSS = "accept_cross"  # D1&D4 or D2&D3
    REJECT = "reject"


_SAME_PAIRS = (frozenset({"D1", "D3"}), frozenset({"D2", "D4"}))
_CROSS_PAIRS = (frozenset({"D1", "D4"}), frozenset({"D2", "D3"}))


@dataclass(frozen=True)
class DetectionPattern:
    """Number-resolved click counts at the four detectors."""

    counts: tuple[int, int, int, int]

    @property
    def clicks(self) -> dict[str, int]:
        return dict(zip(DETECTORS, self.counts))

    def total(self) -> int:
        return sum(self.counts)

    def name(self) -> str:
        clicked = [f"{d}x{c}" if c > 1 else d for d, c in zip(DETECTORS, self.counts) if c > 0]
        return "&".join(clicked) if clicked else "none"


def classify(pattern: DetectionPattern) -> BsmOutcome:
    """Exactly one click at each of two paired detectors accepts;
    everything else (wrong total, double clicks, unpaired detectors)
    rejects."""
    if pattern.total() != 2:
        return BsmOutcome.REJECT
    clicked = frozenset(d for d, c in zip(DETECTORS, pattern.counts) if c > 0)
    if len(clicked) != 2:
        return BsmOutcome.REJECT
    if clicked in _SAME_PAIRS:
        return BsmOutcome.ACCEPT_SAME
    if clicked in _CROSS_PAIRS:
        return BsmOutcome.ACCEPT_CROSS
    return BsmOutcome.REJECT


class BsmNetwork:
    """Mode map of the four-detector Bell analyzer.

    Input modes are the H/V polarizations of two paths; the composed
    PBS + diagonal-analyzer map sends creation operators to the detector
    modes (D1, D2, D3, D4) = (c+, c-, d+, d-), where arm c collects
    transmitted-H / reflected-V light and arm d the complement.
    """

    def __init__(self, paths: tuple[str, str] = ("a", "b")):
        self.paths = paths
        self.input_modes = (
            ModeId.photon(paths[0], "H"),
            ModeId.photon(paths[0], "V"),
            ModeId.photon(paths[1], "H"),
            ModeId.photon(paths[1], "V"),
        )
        # Columns: input modes (aH, aV, bH, bV); rows: detectors D1..D4.
        #   aH -> cH -> (D1 + D2)/sqrt2        aV -> dV -> (D3 - D4)/sqrt2
        #   bH -> dH -> (D3 + D4)/sqrt2        bV -> cV -> (D1 - D2)/sqrt2
        self.unitary = SQRT_HALF * np.array([
            [1.0, 0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0, -1.0],
            [0.0, 1.0, 1.0, 0.0],
            [0.0, -1.0, 1.0, 0.0],
        ], dtype=complex)

    def apply(self, ens: WeightedEnsemble) -> WeightedEnsemble:
        """Apply the analyzer map; afterwards the four path modes carry
        the detector-mode occupations in D1..D4 order."""
        return WeightedEnsemble(
            [(w, s.apply_linear_map(self.input_modes, self.unitary)) for w, s in ens.branches]
        )


@dataclass(frozen=True)
class BsmResult:
    """One recorded detection pattern with its probability and the
    conditional memory state (photonic modes already measured out)."""

    pattern: DetectionPattern
    probability: float
    memory: WeightedEnsemble


def apply_bsm(
    photons: WeightedEnsemble,
    eta_d: float,
    p_d: float = 0.0,
    paths: tuple[str, str] = ("a", "b"),
) -> list[BsmResult]:
    """Run the Bell analyzer: mode map, detector loss, number-resolved
    measurement of all four detectors, then optional dark counts.

    With probability ``p_d`` each detector independently adds one phantom
    click to its recorded count; the conditional memory of a recorded
    pattern is then the probability-weighted mixture over the compatible
    real patterns.  Pattern probabilities sum to 1.
    """
    net = BsmNetwork(paths)
    ens = net.apply(photons)
    for mode in net.input_modes:
        ens = ens.apply_loss(mode, eta_d)

    partial: list[tuple[tuple[int, ...], float, WeightedEnsemble]] = [((), 1.0, ens)]
    for mode in net.input_modes:
        grown = []
        for counts, prob, state in partial:
            for mo in state.measure_number(mode):
                grown.append((counts + (mo.outcome,), prob * mo.probability, mo.state))
        partial = grown

    if p_d == 0.0:
        return [
            BsmResult(DetectionPattern(counts), prob, memory)
            for counts, prob, memory in sorted(partial, key=lambda t: t[0])
        ]

    # Convolve with independent phantom clicks.
    recorded: dict[tuple[int, ...], list] = {}
    totals: dict[tuple[int, ...], float] = {}
    for counts, prob, memory in partial:
        for phantom in np.ndindex(2, 2, 2, 2):
            weight = prob * math.prod(p_d if f else (1.0 - p_d) for f in phantom)
            if weight <= 0.0:
                continue
            rec = tuple(c + f for c, f in zip(counts, phantom))
            totals[rec] = totals.get(rec, 0.0) + weight
            recorded.setdefault(rec, []).extend((weight * w, s) for w, s in memory.branches)
    return [
        BsmResult(DetectionPattern(rec), totals[rec], WeightedEnsemble(recorded[rec]))
        for rec in sorted(recorded)
    ]


# ---------------------------------------------------------------------------
# Protocol state constructors
# ---------------------------------------------------------------------------

def input_mode_registry(site: str) -> ModeRegistry:
    return ModeRegistry((ModeId.photon(f"{site}.u_in"), ModeId.photon(f"{site}.d_in")))


def input_photon_state(phi: float, site: str = "L") -> PureState:
    """Split-photon input state (|0>_u|1>_d + e^{i phi} |1>_u|0>_d)/sqrt2
    over the two path modes feeding one node's ensembles."""
    registry = input_mode_registry(site)
    return PureState(registry, {
        (0, 1): SQRT_HALF,
        (1, 0): SQRT_HALF * cmath.exp(1j * phi),
    })


def memory_registry(site: str, species: str = "T") -> ModeRegistry:
    return ModeRegistry((
        ModeId.ensemble(site, "u", species),
        ModeId.ensemble(site, "d", species),
    ))


def store_to_memory(photon: PureState, eta_p: float, eta_s: float, site: str = "L") -> WeightedEnsemble:
    """Coherent absorption of the split photon into the two ensembles.

    The one-photon component maps onto (T_u^dag + e^{i phi} T_d^dag)/sqrt2
    (the d-path amplitude feeds the u ensemble term and vice versa, which
    keeps the unknown channel phase on the d arm); imperfect emission and
    storage leave a vacuum branch of weight 1 - eta_p eta_s.
    """
    if len(photon.registry) != 2:
        raise OpticsError("input photon state must live on exactly two path modes")
    amp_u = photon.amplitude((1, 0))
    amp_d = photon.amplitude((0, 1))
    residual = sum(abs(a) for occ, a in photon.amps.items() if occ not in ((1, 0), (0, 1)))
    if residual > 1e-12:
        raise OpticsError("input must be a one-photon two-path state")
    nrm = math.hypot(abs(amp_u), abs(amp_d))
    if abs(nrm - 1.0) > 1e-8:
        raise OpticsError("input photon state must be normalized")

    registry = memory_registry(site, "T")
    stored = PureState(registry, {(1, 0): amp_d / nrm, (0, 1): amp_u / nrm})
    weight = eta_p * eta_s
    branches = [(1.0 - weight, PureState.vacuum(registry)), (weight, stored)]
    return WeightedEnsemble(branches)


def retrieve_t_to_s(
    memory: WeightedEnsemble,
    eta_e1: float,
    site_paths: dict[str, str],
) -> WeightedEnsemble:
    """Convert T excitations to S excitations plus anti-Stokes photons.

    For every site in ``site_paths``, T(u) -> S(u) with an H photon on
    the site's path and T(d) -> S(d) with a V photon; each new photon
    then passes a transmissivity-``eta_e1`` loss channel.
    """
    conversions = []
    for site, path in site_paths.items():
        for arm, pol in (("u", "H"), ("d", "V")):
            t_mode = ModeId.ensemble(site, arm, "T")
            if t_mode not in memory.registry:
                raise OpticsError(f"memory has no T mode for site {site!r} arm {arm!r}")
            conversions.append((t_mode, ModeId.ensemble(site, arm, "S"), ModeId.photon(path, pol)))

    substitution = {t: s for t, s, _ in conversions}
    photon_modes = tuple(p for _, _, p in conversions)
    new_registry = ModeRegistry(
        tuple(substitution.get(m, m) for m in memory.registry) + photon_modes
    )
    t_idx = [memory.registry.index(t) for t, _, _ in conversions]

    branches = []
    for w, state in memory.branches:
        amps = {}
        for occ, amp in state.amps.items():
            emitted = tuple(occ[i] for i in t_idx)
            if any(o > 1 for o in emitted):
                raise OpticsError("conversion supports at most one excitation per T mode")
            amps[occ + emitted] = amp
        branches.append((w, PureState(new_registry, amps, state.d_max)))
    ens = WeightedEnsemble(branches)
    for mode in photon_modes:
        ens = ens.apply_loss(mode, eta_e1)
    return ens


def retrieve_s_to_photon(
    memory: WeightedEnsemble,
    eta_e2: float,
    site_paths: dict[str, str],
) -> WeightedEnsemble:
    """Convert the named sites' S excitations into photons (H from the u
    ensemble, V from the d ensemble) with a transmissivity-``eta_e2``
    loss channel; the S modes leave the registry."""
    conversions = []
    for site, path in site_paths.items():
        for arm, pol in (("u", "H"), ("d", "V")):
            s_mode = ModeId.ensemble(site, arm, "S")
            if s_mode not in memory.registry:
                raise OpticsError(f"memory has no S mode for site {site!r} arm {arm!r}")
            conversions.append((s_mode, ModeId.photon(path, pol)))

    s_idx = [memory.registry.index(s) for s, _ in conversions]
    s_set = set(s_idx)
    keep_idx = [i for i in range(len(memory.registry)) if i not in s_set]
    photon_modes = tuple(p for _, p in conversions)
    new_registry = ModeRegistry(
        tuple(memory.registry.modes[i] for i in keep_idx) + photon_modes
    )

    branches = []
    for w, state in memory.branches:
        amps = {}
        for occ, amp in state.amps.items():
            emitted = tuple(occ[i] for i in s_idx)
            if any(o > 1 for o in emitted):
                raise OpticsError("retrieval supports at most one excitation per S mode")
            kept = tuple(occ[i] for i in keep_idx)
            amps[kept + emitted] = amp
        branches.append((w, PureState(new_registry, amps, state.d_max)))
    ens = WeightedEnsemble(branches)
    for mode in photon_modes:
        ens = ens.apply_loss(mode, eta_e2)
    return ens


def pme_state(registry: ModeRegistry, site_a: str, site_b: str) -> PureState:
    """Polarization maximally entangled target
    (S_au^dag S_bu^dag + S_ad^dag S_bd^dag)|vac>/sqrt2 on the registry."""
    n = len(registry)
    occ_u, occ_d = [0] * n, [0] * n
    for occ, arm in ((occ_u, "u"), (occ_d, "d")):
        occ[registry.index(ModeId.ensemble(site_a, arm, "S"))] = 1
        occ[registry.index(ModeId.ensemble(site_b, arm, "S"))] = 1
    return PureState(registry, {tuple(occ_u): SQRT_HALF, tuple(occ_d): SQRT_HALF})


# ---------------------------------------------------------------------------
# Outcome-conditioned correction and fidelity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Correction:
    """Local correction that maximized the fidelity: a phase on one
    qubit's d arm, classified as identity / z_flip when it is 0 / pi."""

    kind: str
    phase: float

    def describe(self) -> str:
        if self.kind == "phase":
            return f"phase({self.phase:.6f})"
        return self.kind


def _classify_phase(alpha: float) -> Correction:
    rot = cmath.exp(1j * alpha)
    if abs(rot - 1.0) < 1e-6:
        return Correction("identity", 0.0)
    if abs(rot + 1.0) < 1e-6:
        return Correction("z_flip", math.pi)
    return Correction("phase", alpha % (2.0 * math.pi))


def corrected_fidelity(
    memory: WeightedEnsemble,
    outcome: BsmOutcome,
    target: PureState,
    d_mode: ModeId | None = None,
) -> tuple[float, Correction]:
    """Fidelity to ``target`` maximized over a free phase on one qubit's
    d arm (which subsumes the discrete identity / Z-flip correction set).

    For a phase alpha on ``d_mode``, F(alpha) = sum_b w_b |c0_b +
    e^{i alpha} c1_b|^2 with c_n the target overlap restricted to d-arm
    occupation n; the maximum and its maximizer are closed-form.
    """
    if outcome is BsmOutcome.REJECT:
        raise OpticsError("corrected_fidelity is undefined for rejected patterns")
    if target.registry != memory.registry:
        raise OpticsError("target registry differs from memory registry")
    if d_mode is None:
        candidates = [m for m in memory.registry if m.kind == "ensemble" and m.tags[1] == "d"]
        if not candidates:
            raise OpticsError("memory registry has no d-arm ensemble mode")
        d_mode = candidates[0]
    d_idx = memory.registry.index(d_mode)

    base = 0.0
    z = 0.0 + 0.0j
    for w, state in memory.branches:
        c0 = 0.0 + 0.0j
        c1 = 0.0 + 0.0j
        for occ, t_amp in target.amps.items():
            m_amp = state.amps.get(occ)
            if m_amp is None:
                continue
            if occ[d_idx] == 0:
                c0 += t_amp.conjugate() * m_amp
            elif occ[d_idx] == 1:
                c1 += t_amp.conjugate() * m_amp
            else:
                raise OpticsError("free-phase correction expects d-arm occupation <= 1 in the target")
        base += w * (abs(c0) ** 2 + abs(c1) ** 2)
        z += w * c1 * c0.conjugate()

    if abs(z) < 1e-300:
        return base, Correction("identity", 0.0)
    alpha = -cmath.phase(z)
    return base + 2.0 * abs(z), _classify_phase(alpha)


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PatternReport:
    """Per-pattern record inside a pipeline report."""

    pattern: DetectionPattern
    probability: float
    outcome: BsmOutcome
    fidelity: float | None
    correction: Correction | None


@dataclass(frozen=True)
class PipelineReport:
    """Aggregate of one heralded stage.

    ``fidelity`` is the minimum corrected fidelity over accepting
    patterns, ``correction`` a compact summary of the per-pattern
    corrections, ``branch_count`` the branch count of the photonic
    ensemble entering the detectors.
    """

    accept_prob: float
    fidelity: float
    correction: str
    branch_count: int
    patterns: tuple[PatternReport, ...]

    def to_record(self) -> dict:
        return {
            "accept_prob": self.accept_prob,
            "fidelity": self.fidelity,
            "correction": self.correction,
            "branch_count": self.branch_count,
        }


def _heralded_report(results: list[BsmResult], target: PureState, branch_count: int) -> PipelineReport:
    accept_prob = 0.0
    fidelities = []
    corrections = []
    reports = []
    for res in results:
        outcome = classify(res.pattern)
        if outcome is BsmOutcome.REJECT:
            reports.append(PatternReport(res.pattern, res.probability, outcome, None, None))
            continue
        fid, corr = corrected_fidelity(res.memory, outcome, target)
        accept_prob += res.probability
        fidelities.append(fid)
        corrections.append(f"{res.pattern.name()}:{corr.describe()}")
        reports.append(PatternReport(res.pattern, res.probability, outcome, fid, corr))
    return PipelineReport(
        accept_prob=accept_prob,
        fidelity=min(fidelities) if fidelities else 0.0,
        correction="; ".join(corrections) if corrections else "none",
        branch_count=branch_count,
        patterns=tuple(reports),
    )


def local_entanglement_pipeline(
    params: ProtocolParams,
    phi_l: float = 0.0,
    phi_r: float = 0.0,
) -> PipelineReport:
    """Local entanglement between the two memory qubits of one node.

    Split-photon storage at sites L and R, T -> S conversion with
    anti-Stokes emission, and the Bell analyzer on the two photons;
    dark counts are excluded here (they are handled analytically in the
    rates layer).  The conditional memory is compared against the
    four-S-mode target state.
    """
    mem_l = store_to_memory(input_photon_state(phi_l, "L"), params.eta_p, params.eta_s, "L")
    mem_r = store_to_memory(input_photon_state(phi_r, "R"), params.eta_p, params.eta_s, "R")
    ens = mem_l.tensor(mem_r)
    ens = retrieve_t_to_s(ens, params.eta_e1, {"L": "a", "R": "b"})
    branch_count = ens.branch_count
    results = apply_bsm(ens, params.eta_d, p_d=0.0)
    target = pme_state(results[0].memory.registry, "L", "R")
    return _heralded_report(results, target, branch_count)


def link_pipeline(params: ProtocolParams) -> PipelineReport:
    """Elementary-link generation between nodes A and B.

    Both nodes hold ideal local target states; the inner qubits A_R and
    B_L are retrieved to light, each photon crosses half the link
    (transmission exp(-L_0 / (2 L_att))), and the analyzer heralds the
    outer-qubit pair A_L--B_R.
    """
    pme_a = WeightedEnsemble.from_pure(
        pme_state(ModeRegistry(memory_registry("A_L", "S").modes + memory_registry("A_R", "S").modes), "A_L", "A_R")
    )
    pme_b = WeightedEnsemble.from_pure(
        pme_state(ModeRegistry(memory_registry("B_L", "S").modes + memory_registry("B_R", "S").modes), "B_L", "B_R")
    )
    ens = pme_a.tensor(pme_b)
    ens = retrieve_s_to_photon(ens, params.eta_e2, {"A_R": "a", "B_L": "b"})
    eta_t = fiber_transmission(params.l0, params.L_att)
    for path, pol in (("a", "H"), ("a", "V"), ("b", "H"), ("b", "V")):
        ens = ens.apply_loss(ModeId.photon(path, pol), eta_t)
    branch_count = ens.branch_count
    results = apply_bsm(ens, params.eta_d, p_d=0.0)
    target = pme_state(results[0].memory.registry, "A_L", "B_R")
    return _heralded_report(results, target, branch_count)


def filtering_accept_probabilities(params: ProtocolParams) -> dict[str, float]:
    """Accept probability contributed by each spurious memory component.

    The vacuum, the single-excitation components, and the two-excitation
    components with both photons on the same polarization class produce
    no paired two-detector coincidence, so each probability is zero (no
    dark counts here); the returned map makes that checkable per
    component.
    """
    registry = ModeRegistry(memory_registry("L", "T").modes + memory_registry("R", "T").modes)
    components = {
        "vacuum": (0, 0, 0, 0),
        "single_L_u": (1, 0, 0, 0),
        "single_R_d": (0, 0, 0, 1),
        "double_Lu_Rd": (1, 0, 0, 1),
        "double_Ld_Ru": (0, 1, 1, 0),
    }
    out = {}
    for name, occupation in components.items():
        ens = WeightedEnsemble.from_pure(PureState(registry, {occupation: 1.0}))
        ens = retrieve_t_to_s(ens, params.eta_e1, {"L": "a", "R": "b"})
        results = apply_bsm(ens, params.eta_d, p_d=0.0)
        out[name] = sum(
            res.probability for res in results if classify(res.pattern) is not BsmOutcome.REJECT
        )
    return out


def swap_pipeline(params: ProtocolParams) -> PipelineReport:
    """Entanglement swap at middle node B, connecting A--B and B--C pairs
    into an A--C pair over doubled distance (no fiber loss: the photons
    are detected locally at B)."""
    pme_ab = WeightedEnsemble.from_pure(
        pme_state(ModeRegistry(memory_registry("A", "S").modes + memory_registry("B_L", "S").modes), "A", "B_L")
    )
    pme_bc = WeightedEnsemble.from_pure(
        pme_state(ModeRegistry(memory_registry("B_R", "S").modes + memory_registry("C", "S").modes), "B_R", "C")
    )
    ens = pme_ab.tensor(pme_bc)
    ens = retrieve_s_to_photon(ens, params.eta_e2, {"B_L": "a", "B_R": "b"})
    branch_count = ens.branch_count
    results = apply_bsm(ens, params.eta_d, p_d=0.0)
    target = pme_state(results[0].memory.registry, "A", "C")
    return _heralded_report(results, target, branch_count)
