"""Network scenarios: geometry, tilt-independent gains, user clusters, file I/O."""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field, fields
from functools import cached_property
from pathlib import Path

import numpy as np

SCHEMA = "scenario.v1"

UNITS = {
    "position": "m",
    "azimuth": "deg",
    "gain": "dB",
    "elevation": "deg",
    "tilt": "deg",
    "noise": "W",
    "power": "dBm",
    "threshold": "dB",
    "gamma": "dB",
}


class ScenarioError(ValueError):
    """Invalid scenario content or parameters."""


class ScenarioFileError(ScenarioError):
    """Unreadable, malformed or mismatched scenario file."""


def dbm_to_w(x):
    return 10.0 ** ((np.asarray(x, dtype=float) - 30.0) / 10.0)


def w_to_dbm(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float)) + 30.0


def db_to_lin(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def lin_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


def _frozen(a, dtype=float, ndim=None, name="array"):
    arr = np.array(a, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ScenarioError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AntennaParams:
    """3GPP-style sector antenna and site geometry."""

    theta_3db_v: float = 10.0
    am_v_db: float = 20.0
    phi_3db_h: float = 70.0
    am_h_db: float = 25.0
    gain_dbi: float = 15.0
    bs_height_m: float = 32.0
    ue_height_m: float = 1.5


@dataclass(frozen=True, eq=False)
class Scenario:
    """Immutable network description.

    Values are held in the units they are stored with on disk (see ``UNITS``),
    so that a save/load round trip is bit exact. Linear-scale views are
    exposed as properties.
    """

    bs_xy: np.ndarray
    azimuth_deg: np.ndarray
    user_xy: np.ndarray
    gain_db: np.ndarray
    elevation_deg: np.ndarray
    tilt_grid_deg: np.ndarray
    noise_dl_w: np.ndarray
    noise_ul_w: np.ndarray
    p_max_total_dbm: float
    p_max_per_bs_dbm: np.ndarray
    sinr_threshold_db: float = -6.5
    antenna: AntennaParams = field(default_factory=AntennaParams)

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("bs_xy", _frozen(self.bs_xy, ndim=2, name="bs_xy"))
        set_("azimuth_deg", _frozen(self.azimuth_deg, ndim=1, name="azimuth_deg"))
        set_("user_xy", _frozen(self.user_xy, ndim=2, name="user_xy"))
        set_("gain_db", _frozen(self.gain_db, ndim=2, name="gain_db"))
        set_("elevation_deg", _frozen(self.elevation_deg, ndim=2, name="elevation_deg"))
        set_("tilt_grid_deg", _frozen(self.tilt_grid_deg, ndim=1, name="tilt_grid_deg"))
        set_("noise_dl_w", _frozen(self.noise_dl_w, ndim=1, name="noise_dl_w"))
        set_("noise_ul_w", _frozen(self.noise_ul_w, ndim=1, name="noise_ul_w"))
        set_("p_max_per_bs_dbm", _frozen(self.p_max_per_bs_dbm, ndim=1, name="p_max_per_bs_dbm"))
        set_("p_max_total_dbm", float(self.p_max_total_dbm))
        set_("sinr_threshold_db", float(self.sinr_threshold_db))
        self._validate()

    def _validate(self):
        n, k = self.n_bs, self.n_users
        if n < 1 or k < 1:
            raise ScenarioError("scenario needs at least one BS and one user")
        expect = {
            "bs_xy": (n, 2), "azimuth_deg": (n,), "user_xy": (k, 2),
            "gain_db": (n, k), "elevation_deg": (n, k),
            "noise_dl_w": (k,), "noise_ul_w": (k,), "p_max_per_bs_dbm": (n,),
        }
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise ScenarioError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (np.ndarray, float)) and not np.all(np.isfinite(v)):
                raise ScenarioError(f"{f.name} contains non-finite values")
        if np.any(self.noise_dl_w <= 0) or np.any(self.noise_ul_w <= 0):
            raise ScenarioError("noise powers must be strictly positive")
        grid = self.tilt_grid_deg
        if grid.size == 0 or np.any(np.diff(grid) <= 0):
            raise ScenarioError("tilt grid must be non-empty and strictly increasing")

    @property
    def n_bs(self) -> int:
        return self.gain_db.shape[0]

    @property
    def n_users(self) -> int:
        return self.gain_db.shape[1]

    @property
    def pathloss_gain(self) -> np.ndarray:
        return db_to_lin(self.gain_db)

    @property
    def p_max_total(self) -> float:
        return float(dbm_to_w(self.p_max_total_dbm))

    @property
    def p_max_per_bs(self) -> np.ndarray:
        return dbm_to_w(self.p_max_per_bs_dbm)

    @property
    def sinr_threshold(self) -> float:
        return float(db_to_lin(self.sinr_threshold_db))

    @property
    def reference_tilt_index(self) -> int:
        """Index of the median tilt (lower median for even grids)."""
        return (self.tilt_grid_deg.size - 1) // 2

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray):
                if a.shape != b.shape or not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ClusterMap:
    """User clusters with their initial serving BS and utility targets."""

    membership: np.ndarray
    home_bs: np.ndarray
    gamma_db: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "membership", _frozen(self.membership, dtype=np.int64, ndim=1, name="membership"))
        object.__setattr__(self, "home_bs", _frozen(self.home_bs, dtype=np.int64, ndim=1, name="home_bs"))
        gamma = np.broadcast_to(np.asarray(self.gamma_db, dtype=float), self.home_bs.shape)
        object.__setattr__(self, "gamma_db", _frozen(gamma, name="gamma_db"))
        c = self.home_bs.size
        if c == 0:
            raise ScenarioError("cluster map has no clusters")
        if self.membership.min() < 0 or self.membership.max() >= c:
            raise ScenarioError("membership refers to a non-existent cluster")
        if np.any(np.bincount(self.membership, minlength=c) == 0):
            raise ScenarioError("every cluster must contain at least one user")
        if np.any(self.home_bs < 0):
            raise ScenarioError("home BS indices must be nonnegative")
        if not np.all(np.isfinite(self.gamma_db)):
            raise ScenarioError("gamma must be finite in dB")

    @property
    def n_clusters(self) -> int:
        return self.home_bs.size

    @property
    def n_users(self) -> int:
        return self.membership.size

    @cached_property
    def sizes(self) -> np.ndarray:
        return _frozen(np.bincount(self.membership, minlength=self.n_clusters), dtype=np.int64)

    @cached_property
    def alpha(self) -> np.ndarray:
        """Intra-cluster sharing factors, 1/|K_c| for each user."""
        return _frozen(1.0 / self.sizes[self.membership])

    @cached_property
    def gamma(self) -> np.ndarray:
        return _frozen(db_to_lin(self.gamma_db))

    @cached_property
    def A(self) -> np.ndarray:
        """C x K binary cluster/user matrix."""
        a = np.zeros((self.n_clusters, self.n_users))
        a[self.membership, np.arange(self.n_users)] = 1.0
        return _frozen(a)

    @cached_property
    def order(self):
        """(ptr, idx): user indices grouped by cluster and per-cluster offsets."""
        idx = np.argsort(self.membership, kind="stable")
        ptr = np.concatenate(([0], np.cumsum(self.sizes)))
        return _frozen(ptr, dtype=np.int64), _frozen(idx, dtype=np.int64)

    def validate_against(self, s: Scenario):
        if self.n_users != s.n_users:
            raise ScenarioError(f"cluster map covers {self.n_users} users, scenario has {s.n_users}")
        if self.home_bs.max() >= s.n_bs:
            raise ScenarioError("home BS index out of range for scenario")

    def __eq__(self, other):
        if not isinstance(other, ClusterMap):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n))
                   for n in ("membership", "home_bs", "gamma_db"))

    __hash__ = None


@dataclass(frozen=True)
class GeneratorParams:
    isd_m: float = 500.0
    bs_power_dbm: float = 46.0
    tilt_grid_deg: tuple = (0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0)
    bandwidth_hz: float = 10e6
    ue_noise_figure_db: float = 9.0
    bs_noise_figure_db: float = 5.0
    min_distance_m: float = 35.0
    shadowing_std_db: float = 0.0
    sinr_threshold_db: float = -6.5
    sector_azimuths_deg: tuple = (30.0, 150.0, 270.0)
    antenna: AntennaParams = field(default_factory=AntennaParams)


def hex_sites(n_sites, isd_m):
    """First ``n_sites`` points of a hexagonal lattice, ordered by ring then angle."""
    rings = 0
    while 1 + 3 * rings * (rings + 1) < n_sites:
        rings += 1
    pts = []
    for q in range(-rings, rings + 1):
        for r in range(-rings, rings + 1):
            ring = (abs(q) + abs(r) + abs(q + r)) // 2
            if ring > rings:
                continue
            x = isd_m * (q + r / 2.0)
            y = isd_m * (r * math.sqrt(3.0) / 2.0)
            ang = math.atan2(y, x) % (2 * math.pi) if ring else 0.0
            pts.append((ring, round(ang, 9), x, y))
    pts.sort()
    return np.array([(x, y) for _, _, x, y in pts[:n_sites]])


def _sample_users(rng, sites, n_users, isd_m, min_distance_m):
    radius = isd_m / math.sqrt(3.0)
    out = np.empty((n_users, 2))
    filled = 0
    while filled < n_users:
        m = 2 * (n_users - filled) + 16
        site = rng.integers(0, len(sites), size=m)
        xy = rng.uniform(-radius, radius, size=(m, 2))
        # Voronoi cell of the lattice: edges normal to 0/60/120 deg at isd/2
        ax, ay = np.abs(xy[:, 0]), np.abs(xy[:, 1])
        inside = (ax <= isd_m / 2.0) & (ax + math.sqrt(3.0) * ay <= isd_m)
        inside &= np.hypot(xy[:, 0], xy[:, 1]) >= min_distance_m
        pts = sites[site[inside]] + xy[inside]
        take = min(len(pts), n_users - filled)
        out[filled:filled + take] = pts[:take]
        filled += take
    return out


def generate_hex_scenario(n_sites: int, users_per_bs: int, seed: int,
                          params: GeneratorParams | None = None) -> Scenario:
    """Tri-sectored hexagonal layout with uniformly dropped users.

    ``N = 3 * n_sites`` sectors and ``K = N * users_per_bs`` users. The gain
    matrix folds pathloss, horizontal sector pattern, antenna gain and optional
    log-normal shadowing; the vertical (tilt) pattern is applied later from
    ``elevation_deg``.
    """
    from .coupling import horizontal_pattern_db, pathloss_db

    if int(n_sites) != n_sites or n_sites < 1:
        raise ScenarioError(f"n_sites must be a positive integer, got {n_sites!r}")
    if int(users_per_bs) != users_per_bs or users_per_bs < 1:
        raise ScenarioError(f"users_per_bs must be a positive integer, got {users_per_bs!r}")
    prm = params or GeneratorParams()
    rng = np.random.default_rng(seed)

    sites = hex_sites(int(n_sites), prm.isd_m)
    n_sec = len(prm.sector_azimuths_deg)
    bs_xy = np.repeat(sites, n_sec, axis=0)
    azimuth = np.tile(np.asarray(prm.sector_azimuths_deg, dtype=float), len(sites))
    n_bs = len(bs_xy)
    n_users = n_bs * int(users_per_bs)
    user_xy = _sample_users(rng, sites, n_users, prm.isd_m, prm.min_distance_m)

    dx = user_xy[None, :, 0] - bs_xy[:, None, 0]
    dy = user_xy[None, :, 1] - bs_xy[:, None, 1]
    dist = np.maximum(np.hypot(dx, dy), prm.min_distance_m)
    bearing = np.degrees(np.arctan2(dy, dx))
    # azimuths are compass-free: measured counter-clockwise from +x
    phi = (bearing - azimuth[:, None] + 180.0) % 360.0 - 180.0
    gain_db = -pathloss_db(dist) + horizontal_pattern_db(phi, prm.antenna) + prm.antenna.gain_dbi
    if prm.shadowing_std_db > 0:
        shadow = rng.normal(0.0, prm.shadowing_std_db, size=(len(sites), n_users))
        gain_db = gain_db + np.repeat(shadow, n_sec, axis=0)
    dh = prm.antenna.bs_height_m - prm.antenna.ue_height_m
    elevation = np.degrees(np.arctan2(dh, dist))

    thermal_dbm = -174.0 + 10.0 * math.log10(prm.bandwidth_hz)
    noise_dl = np.full(n_users, float(dbm_to_w(thermal_dbm + prm.ue_noise_figure_db)))
    noise_ul = np.full(n_users, float(dbm_to_w(thermal_dbm + prm.bs_noise_figure_db)))
    per_bs = np.full(n_bs, prm.bs_power_dbm)
    total = prm.bs_power_dbm + 10.0 * math.log10(n_bs)

    return Scenario(
        bs_xy=bs_xy, azimuth_deg=azimuth, user_xy=user_xy, gain_db=gain_db,
        elevation_deg=elevation, tilt_grid_deg=np.asarray(prm.tilt_grid_deg, dtype=float),
        noise_dl_w=noise_dl, noise_ul_w=noise_ul, p_max_total_dbm=total,
        p_max_per_bs_dbm=per_bs, sinr_threshold_db=prm.sinr_threshold_db, antenna=prm.antenna,
    )


def cluster_users(s: Scenario, clusters_per_bs: int = 3, gamma_db=None) -> ClusterMap:
    """Strongest-BS attachment followed by SINR-proxy quantile splitting.

    The proxy for user k is ``P_home g_home / (sum_{n != home} P_n g_n + noise)``
    at the reference (median) tilt. Within each BS the users are split into
    ``clusters_per_bs`` quantile groups of the proxy; equal proxies always land
    in the same group, empty groups are dropped.
    """
    from .coupling import tilt_gain_table

    if int(clusters_per_bs) != clusters_per_bs or clusters_per_bs < 1:
        raise ScenarioError(f"clusters_per_bs must be a positive integer, got {clusters_per_bs!r}")
    m = int(clusters_per_bs)
    H = tilt_gain_table(s)[s.reference_tilt_index]
    home = np.argmax(H, axis=0)
    rx = H * s.p_max_per_bs[:, None]
    serving = rx[home, np.arange(s.n_users)]
    proxy = serving / (rx.sum(axis=0) - serving + s.noise_dl_w)

    membership = np.empty(s.n_users, dtype=np.int64)
    home_bs = []
    for n in range(s.n_bs):
        users = np.flatnonzero(home == n)
        if users.size == 0:
            continue
        vals = proxy[users]
        groups = min(m, users.size)
        cuts = np.quantile(vals, np.arange(1, groups) / groups)
        label = np.searchsorted(cuts, vals, side="right")
        for g in np.unique(label):
            membership[users[label == g]] = len(home_bs)
            home_bs.append(n)
    if gamma_db is None:
        gamma_db = s.sinr_threshold_db
    return ClusterMap(membership=membership, home_bs=np.array(home_bs, dtype=np.int64), gamma_db=gamma_db)


def t2_fixture():
    """Canonical two-BS / two-user instance.

    Serving gains 1, cross gains 0.1, noise 0.1 W, total power 2 W, a single
    tilt at boresight for every link and singleton clusters with target 1.
    Its balanced level is 5.
    """
    s = Scenario(
        bs_xy=[[0.0, 0.0], [100.0, 0.0]],
        azimuth_deg=[0.0, 180.0],
        user_xy=[[10.0, 0.0], [90.0, 0.0]],
        gain_db=[[0.0, -10.0], [-10.0, 0.0]],
        elevation_deg=np.full((2, 2), 6.0),
        tilt_grid_deg=[6.0],
        noise_dl_w=[0.1, 0.1],
        noise_ul_w=[0.1, 0.1],
        p_max_total_dbm=float(w_to_dbm(2.0)),
        p_max_per_bs_dbm=[30.0, 30.0],
        sinr_threshold_db=-6.5,
    )
    cm = ClusterMap(membership=[0, 1], home_bs=[0, 1], gamma_db=[0.0, 0.0])
    return s, cm


def random_instance(rng, n_bs, n_clusters, n_users=None, n_tilts=4, gamma_db=0.0):
    """Small unstructured instance for property and oracle checks.

    Gains are log-uniform in [-30, 0] dB, elevations uniform in [0, 20] deg,
    noise log-uniform in [1e-3, 1e-1] W, total power 1 W per cluster. Every
    cluster gets at least one user and a random home BS.
    """
    n_users = n_clusters if n_users is None else n_users
    if n_users < n_clusters:
        raise ScenarioError("need at least one user per cluster")
    s = Scenario(
        bs_xy=rng.uniform(0, 1000, (n_bs, 2)),
        azimuth_deg=rng.uniform(0, 360, n_bs),
        user_xy=rng.uniform(0, 1000, (n_users, 2)),
        gain_db=rng.uniform(-30.0, 0.0, (n_bs, n_users)),
        elevation_deg=rng.uniform(0.0, 20.0, (n_bs, n_users)),
        tilt_grid_deg=np.sort(rng.choice(np.arange(0.0, 21.0), n_tilts, replace=False)),
        noise_dl_w=10.0 ** rng.uniform(-3, -1, n_users),
        noise_ul_w=10.0 ** rng.uniform(-3, -1, n_users),
        p_max_total_dbm=float(w_to_dbm(float(n_clusters))),
        p_max_per_bs_dbm=np.full(n_bs, float(w_to_dbm(float(n_clusters) / n_bs))),
    )
    membership = np.concatenate([np.arange(n_clusters), rng.integers(0, n_clusters, n_users - n_clusters)])
    rng.shuffle(membership)
    cm = ClusterMap(membership=membership, home_bs=rng.integers(0, n_bs, n_clusters), gamma_db=gamma_db)
    return s, cm


# -- file I/O ----------------------------------------------------------------

def _scenario_payload(s: Scenario) -> dict:
    return {
        "n_bs": s.n_bs,
        "n_users": s.n_users,
        "bs_xy": s.bs_xy.tolist(),
        "azimuth_deg": s.azimuth_deg.tolist(),
        "user_xy": s.user_xy.tolist(),
        "gain_db": s.gain_db.tolist(),
        "elevation_deg": s.elevation_deg.tolist(),
        "tilt_grid_deg": s.tilt_grid_deg.tolist(),
        "noise_dl_w": s.noise_dl_w.tolist(),
        "noise_ul_w": s.noise_ul_w.tolist(),
        "p_max_total_dbm": s.p_max_total_dbm,
        "p_max_per_bs_dbm": s.p_max_per_bs_dbm.tolist(),
        "sinr_threshold_db": s.sinr_threshold_db,
        "antenna": {f.name: getattr(s.antenna, f.name) for f in fields(AntennaParams)},
    }


def _clusters_payload(cm: ClusterMap) -> dict:
    return {
        "n_clusters": cm.n_clusters,
        "membership": cm.membership.tolist(),
        "home_bs": cm.home_bs.tolist(),
        "gamma_db": cm.gamma_db.tolist(),
    }


def dumps_scenario(s: Scenario, clusters: ClusterMap | None = None) -> str:
    doc = {
        "schema": SCHEMA,
        "units": UNITS,
        "scenario": _scenario_payload(s),
        "clusters": None if clusters is None else _clusters_payload(clusters),
    }
    return json.dumps(doc, indent=1, allow_nan=False)


def atomic_write_text(path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_scenario(s: Scenario, path, clusters: ClusterMap | None = None):
    if clusters is not None:
        clusters.validate_against(s)
    atomic_write_text(path, dumps_scenario(s, clusters))


def read_scenario_file(path):
    """Parse a ``scenario.v1`` file into ``(Scenario, ClusterMap | None)``."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioFileError(f"{path}: malformed JSON ({exc})") from exc
    except OSError as exc:
        raise ScenarioFileError(f"{path}: cannot read ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("schema") != SCHEMA:
        found = doc.get("schema") if isinstance(doc, dict) else type(doc).__name__
        raise ScenarioFileError(f"{path}: expected schema {SCHEMA!r}, found {found!r}")
    if doc.get("units") != UNITS:
        raise ScenarioFileError(f"{path}: unit declaration does not match {SCHEMA}")
    try:
        sc = doc["scenario"]
        s = Scenario(
            bs_xy=sc["bs_xy"], azimuth_deg=sc["azimuth_deg"], user_xy=sc["user_xy"],
            gain_db=sc["gain_db"], elevation_deg=sc["elevation_deg"],
            tilt_grid_deg=sc["tilt_grid_deg"], noise_dl_w=sc["noise_dl_w"],
            noise_ul_w=sc["noise_ul_w"], p_max_total_dbm=sc["p_max_total_dbm"],
            p_max_per_bs_dbm=sc["p_max_per_bs_dbm"], sinr_threshold_db=sc["sinr_threshold_db"],
            antenna=AntennaParams(**sc["antenna"]),
        )
        if sc.get("n_bs") != s.n_bs or sc.get("n_users") != s.n_users:
            raise ScenarioError("declared counts do not match array shapes")
        cm = None
        if doc.get("clusters") is not None:
            cl = doc["clusters"]
            cm = ClusterMap(membership=cl["membership"], home_bs=cl["home_bs"], gamma_db=cl["gamma_db"])
            if cl.get("n_clusters") != cm.n_clusters:
                raise ScenarioError("declared cluster count does not match")
            cm.validate_against(s)
    except (KeyError, TypeError) as exc:
        raise ScenarioFileError(f"{path}: missing or mistyped field ({exc})") from exc
    except ScenarioError as exc:
        raise ScenarioFileError(f"{path}: {exc}") from exc
    return s, cm


def load_scenario(path) -> Scenario:
    return read_scenario_file(path)[0]


def load_clusters(path) -> ClusterMap | None:
    return read_scenario_file(path)[1]
