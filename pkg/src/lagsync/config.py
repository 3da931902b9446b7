"""Experiment configuration: a sectioned JSON file, strictly validated.

Sections mirror the package's modules (plant, topology, gains, delays,
disturbance, integrator, certify, tuner, output).  Unknown sections or keys
are rejected with field-level messages; cross-checks cover dimensions,
positivity, gain coverage of the graph and leader reachability.  Agent ids
in the file are 1-based (edge key "4,2" means agent 4 listens to agent 2);
everything is 0-based in code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

import numpy as np

from .delays import DelayProfileSet
from .plant import CompanionPlant, DisturbanceModel, disturbance_bound
from .protocol import GainSet
from .sim import PROTOCOL_KINDS
from .topology import DirectedTopology, leader_globally_reachable


class ConfigError(ValueError):
    """Invalid experiment configuration, with the offending field named."""


def _require(section, raw, key, kind, where):
    if key not in raw:
        raise ConfigError(f"{where}: missing required key '{key}'")
    val = raw[key]
    if kind is float:
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise ConfigError(f"{where}.{key}: expected a number, got {type(val).__name__}")
        return float(val)
    if kind is int:
        if not isinstance(val, int) or isinstance(val, bool):
            raise ConfigError(f"{where}.{key}: expected an integer, got {type(val).__name__}")
        return int(val)
    if kind is str:
        if not isinstance(val, str):
            raise ConfigError(f"{where}.{key}: expected a string, got {type(val).__name__}")
        return val
    if kind is bool:
        if not isinstance(val, bool):
            raise ConfigError(f"{where}.{key}: expected a boolean, got {type(val).__name__}")
        return val
    if kind is list:
        if not isinstance(val, list):
            raise ConfigError(f"{where}.{key}: expected a list, got {type(val).__name__}")
        return val
    if kind is dict:
        if not isinstance(val, dict):
            raise ConfigError(f"{where}.{key}: expected an object, got {type(val).__name__}")
        return val
    raise AssertionError(kind)


def _optional(section, raw, key, kind, default, where):
    if key not in raw:
        return default
    return _require(section, raw, key, kind, where)


def _reject_unknown(raw, allowed, where):
    unknown = set(raw) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")


@dataclass(frozen=True)
class ExperimentConfig:
    plant: dict
    topology: dict
    gains: dict
    delays: dict
    disturbance: dict = field(default_factory=lambda: {"kind": "zero"})
    protocol_kind: str = "linear-only"
    initial: dict = field(default_factory=dict)
    integrator: dict = field(default_factory=dict)
    certify: dict = field(default_factory=dict)
    tuner: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    SECTIONS = (
        "plant",
        "topology",
        "gains",
        "delays",
        "disturbance",
        "protocol_kind",
        "initial",
        "integrator",
        "certify",
        "tuner",
        "output",
    )

    @staticmethod
    def from_dict(raw):
        if not isinstance(raw, dict):
            raise ConfigError("config root must be an object")
        _reject_unknown(raw, ExperimentConfig.SECTIONS, "config")
        for req in ("plant", "topology", "gains", "delays"):
            if req not in raw:
                raise ConfigError(f"config: missing required section '{req}'")
        cfg = ExperimentConfig(
            plant=dict(raw["plant"]),
            topology=dict(raw["topology"]),
            gains=dict(raw["gains"]),
            delays=dict(raw["delays"]),
            disturbance=dict(raw.get("disturbance", {"kind": "zero"})),
            protocol_kind=raw.get("protocol_kind", "linear-only"),
            initial=dict(raw.get("initial", {})),
            integrator=dict(raw.get("integrator", {})),
            certify=dict(raw.get("certify", {})),
            tuner=dict(raw.get("tuner", {})),
            output=dict(raw.get("output", {})),
        )
        cfg.validate()
        return cfg

    @staticmethod
    def load(path):
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return ExperimentConfig.from_dict(raw)

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        return json.loads(json.dumps(out))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    # -- section accessors ---------------------------------------------------

    def validate(self):
        plant = self.build_plant()
        topology = self.build_topology()
        n = plant.order

        _reject_unknown(
            self.gains,
            ("follower", "pin", "rho", "t_filter", "filter_scaling"),
            "gains",
        )
        follower = _require("gains", self.gains, "follower", dict, "gains")
        pin = _require("gains", self.gains, "pin", dict, "gains")
        edges = set(topology.edges())
        declared = set()
        for key, vec in follower.items():
            try:
                i_s, j_s = key.split(",")
                e = (int(i_s) - 1, int(j_s) - 1)
            except ValueError as exc:
                raise ConfigError(
                    f"gains.follower: key {key!r} is not an 'i,j' agent pair"
                ) from exc
            if e not in edges:
                raise ConfigError(f"gains.follower[{key!r}]: no edge for that pair in the adjacency")
            if not isinstance(vec, list) or len(vec) != n:
                raise ConfigError(f"gains.follower[{key!r}]: expected a length-{n} vector")
            declared.add(e)
        if declared != edges:
            missing = sorted((i + 1, j + 1) for (i, j) in edges - declared)
            raise ConfigError(f"gains.follower: missing gain(s) for edge(s) {missing}")
        pins = set(topology.pinned_agents())
        declared_pins = set()
        for key, vec in pin.items():
            try:
                i = int(key) - 1
            except ValueError as exc:
                raise ConfigError(f"gains.pin: key {key!r} is not an agent id") from exc
            if i not in pins:
                raise ConfigError(f"gains.pin[{key!r}]: agent is not pinned")
            if not isinstance(vec, list) or len(vec) != n:
                raise ConfigError(f"gains.pin[{key!r}]: expected a length-{n} vector")
            declared_pins.add(i)
        if declared_pins != pins:
            missing = sorted(i + 1 for i in pins - declared_pins)
            raise ConfigError(f"gains.pin: missing gain(s) for pinned agent(s) {missing}")

        if self.protocol_kind not in PROTOCOL_KINDS:
            raise ConfigError(
                f"protocol_kind: {self.protocol_kind!r} is not one of {PROTOCOL_KINDS}"
            )

        _reject_unknown(
            self.delays, ("tau_star", "slope_bound", "resample_dt", "seed"), "delays"
        )
        tau_star = _require("delays", self.delays, "tau_star", float, "delays")
        if not tau_star > 0.0:
            raise ConfigError("delays.tau_star: must be positive")
        slope = _optional("delays", self.delays, "slope_bound", float, 0.99, "delays")
        if not 0.0 <= slope <= 1.0:
            raise ConfigError("delays.slope_bound: must lie in [0, 1]")
        resample = _optional("delays", self.delays, "resample_dt", float, 0.5, "delays")
        if not resample > 0.0:
            raise ConfigError("delays.resample_dt: must be positive")
        _optional("delays", self.delays, "seed", int, 0, "delays")

        disturbance = self.build_disturbance()
        gains = self.build_gains()
        if self.protocol_kind != "linear-only" and not gains.rho > disturbance_bound(disturbance):
            raise ConfigError(
                f"gains.rho: switching protocols need rho > disturbance bound "
                f"({gains.rho} <= {disturbance_bound(disturbance)})"
            )

        _reject_unknown(self.initial, ("followers", "leader"), "initial")
        if self.initial:
            followers = _require("initial", self.initial, "followers", list, "initial")
            leader = _require("initial", self.initial, "leader", list, "initial")
            arr = np.asarray(followers, dtype=float)
            if arr.shape != (topology.n_agents, n):
                raise ConfigError(
                    f"initial.followers: expected shape ({topology.n_agents}, {n}), got {arr.shape}"
                )
            if np.asarray(leader, dtype=float).shape != (n,):
                raise ConfigError(f"initial.leader: expected a length-{n} vector")

        _reject_unknown(self.integrator, ("step", "horizon"), "integrator")
        step = _optional("integrator", self.integrator, "step", float, 1e-3, "integrator")
        if not step > 0.0:
            raise ConfigError("integrator.step: must be positive")
        horizon = _optional("integrator", self.integrator, "horizon", float, 40.0, "integrator")
        if horizon < 0.0:
            raise ConfigError("integrator.horizon: must be nonnegative")

        _reject_unknown(
            self.certify,
            ("margin", "search_budget", "slope_bound", "pin_core_third"),
            "certify",
        )
        margin = _optional("certify", self.certify, "margin", float, 1e-8, "certify")
        if not margin > 0.0:
            raise ConfigError("certify.margin: must be positive")
        cert_slope = _optional("certify", self.certify, "slope_bound", float, 0.9, "certify")
        if not 0.0 <= cert_slope < 1.0:
            raise ConfigError("certify.slope_bound: must lie in [0, 1)")
        _optional("certify", self.certify, "search_budget", int, 6000, "certify")
        _optional("certify", self.certify, "pin_core_third", bool, False, "certify")

        _reject_unknown(
            self.tuner,
            (
                "tau_seed",
                "outer_budget",
                "inner_budget",
                "search_budget",
                "margin",
                "slope_bound",
                "gain_lower",
                "gain_upper",
                "seed",
            ),
            "tuner",
        )
        _reject_unknown(self.output, ("directory",), "output")

        if not leader_globally_reachable(topology):
            raise ConfigError(
                "topology: the leader does not reach every agent through the information flow"
            )

    def build_plant(self):
        _reject_unknown(self.plant, ("a_coeffs", "b_gain"), "plant")
        a = _require("plant", self.plant, "a_coeffs", list, "plant")
        b = _require("plant", self.plant, "b_gain", float, "plant")
        try:
            return CompanionPlant(a_coeffs=np.asarray(a, dtype=float), b_gain=b)
        except ValueError as exc:
            raise ConfigError(f"plant: {exc}") from exc

    def build_topology(self):
        _reject_unknown(self.topology, ("adjacency", "pinning"), "topology")
        adj = _require("topology", self.topology, "adjacency", list, "topology")
        pin = _require("topology", self.topology, "pinning", list, "topology")
        try:
            return DirectedTopology(
                adjacency=np.asarray(adj, dtype=float), pinning=np.asarray(pin, dtype=float)
            )
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"topology: {exc}") from exc

    def build_gains(self):
        follower = {
            tuple(int(s) - 1 for s in key.split(",")): np.asarray(vec, dtype=float)
            for key, vec in self.gains["follower"].items()
        }
        pin = {
            int(key) - 1: np.asarray(vec, dtype=float)
            for key, vec in self.gains["pin"].items()
        }
        disturbance = self.build_disturbance()
        gamma = disturbance_bound(disturbance)
        rho_default = 1.1 * gamma if gamma > 0.0 else 1.0
        rho = _optional("gains", self.gains, "rho", float, rho_default, "gains")
        t_filter = _optional("gains", self.gains, "t_filter", float, 0.01, "gains")
        try:
            return GainSet(k_follower=follower, k_pin=pin, rho=rho, t_filter=t_filter)
        except ValueError as exc:
            raise ConfigError(f"gains: {exc}") from exc

    @property
    def filter_scaling(self):
        val = self.gains.get("filter_scaling", "consistent")
        if val not in ("consistent", "gain-scaled"):
            raise ConfigError("gains.filter_scaling: must be 'consistent' or 'gain-scaled'")
        return val

    def build_disturbance(self):
        raw = self.disturbance
        kind = _require("disturbance", raw, "kind", str, "disturbance")
        try:
            if kind == "zero":
                _reject_unknown(raw, ("kind",), "disturbance")
                return DisturbanceModel.zero()
            if kind == "biased-sinusoid":
                _reject_unknown(
                    raw, ("kind", "offsets", "amplitudes", "frequencies", "bound"), "disturbance"
                )
                return DisturbanceModel.biased_sinusoid(
                    raw["offsets"],
                    raw["amplitudes"],
                    raw["frequencies"],
                    bound=raw.get("bound"),
                )
            if kind == "biased-sinusoid-ranges":
                _reject_unknown(
                    raw,
                    ("kind", "offset_range", "amplitude_range", "frequency_range", "seed"),
                    "disturbance",
                )
                n_agents = len(self.topology["pinning"])
                return DisturbanceModel.from_ranges(
                    n_agents,
                    raw["offset_range"],
                    raw["amplitude_range"],
                    raw["frequency_range"],
                    seed=raw.get("seed", 0),
                )
            if kind == "samples":
                _reject_unknown(raw, ("kind", "times", "values", "bound"), "disturbance")
                return DisturbanceModel.from_samples(raw["times"], raw["values"], raw["bound"])
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"disturbance: {exc}") from exc
        raise ConfigError(f"disturbance.kind: unknown kind {kind!r}")

    def build_initial_states(self):
        if not self.initial:
            raise ConfigError("initial: section required for simulation (followers, leader)")
        return (
            np.asarray(self.initial["followers"], dtype=float),
            np.asarray(self.initial["leader"], dtype=float),
        )

    def build_profiles(self, horizon=None):
        topo = self.build_topology()
        h = self.integrator.get("horizon", 40.0) if horizon is None else horizon
        return DelayProfileSet.generate(
            topo,
            self.delays["tau_star"],
            self.delays.get("slope_bound", 0.99),
            self.delays.get("resample_dt", 0.5),
            h,
            self.delays.get("seed", 0),
        )

    def integrator_params(self):
        return (
            self.integrator.get("step", 1e-3),
            self.integrator.get("horizon", 40.0),
        )

    def certify_params(self):
        return {
            "epsilon": self.certify.get("margin", 1e-8),
            "budget": self.certify.get("search_budget", 6000),
            "d_pin": self.certify.get("slope_bound", 0.9),
            "d_chan": self.certify.get("slope_bound", 0.9),
            "pin_core_third": self.certify.get("pin_core_third", False),
        }

    def tune_config(self):
        from .tuner import TuneConfig

        t = self.tuner
        return TuneConfig(
            tau_seed=t.get("tau_seed", 0.05),
            outer_budget=t.get("outer_budget", 3),
            inner_budget=t.get("inner_budget", 8),
            search_budget=t.get("search_budget", 6000),
            margin=t.get("margin", 1e-8),
            slope_bound=t.get("slope_bound", self.certify.get("slope_bound", 0.9)),
            gain_lower=t.get("gain_lower", 1e-4),
            gain_upper=t.get("gain_upper", 100.0),
            seed=t.get("seed", 0),
        )

    def with_master_seed(self, seed):
        """Derive fresh delay/disturbance seeds from one master seed."""
        children = np.random.SeedSequence(seed).generate_state(2)
        delays = dict(self.delays)
        delays["seed"] = int(children[0])
        disturbance = dict(self.disturbance)
        if disturbance.get("kind") == "biased-sinusoid-ranges":
            disturbance["seed"] = int(children[1])
        return ExperimentConfig(
            plant=self.plant,
            topology=self.topology,
            gains=self.gains,
            delays=delays,
            disturbance=disturbance,
            protocol_kind=self.protocol_kind,
            initial=self.initial,
            integrator=self.integrator,
            certify=self.certify,
            tuner=self.tuner,
            output=self.output,
        )
