"""Benchmark environments and a seeded random MDP generator."""

from dataclasses import dataclass, field

import numpy as np

from .mdp import DETERMINISTIC, UNIFORM, Mdp

TAXI_MAP = (
    "+---------+",
    "|R: | : :G|",
    "| : | : : |",
    "| : : : : |",
    "| | : | : |",
    "|Y| : |B: |",
    "+---------+",
)
TAXI_LANDMARKS = ((0, 0), (0, 4), (4, 0), (4, 3))
TAXI_ACTIONS = ("south", "north", "east", "west", "pickup", "dropoff")
IN_TAXI = 4


def _check_prob(name, x):
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x}")


def make_three_state(delta):
    """Three-state domain whose middle state becomes unreachable at ``delta = 0``.

    States ``s0, s1, s2``; one action in s0 and s1, two in s2.  Rewards are
    uniform around their means with width 1/5, narrowed where the mean sits
    closer than 1/10 to the boundary of ``[0, 1]`` (s0 is then deterministic).
    """
    _check_prob("delta", delta)
    P = np.zeros((3, 2, 3))
    P[0, 0] = [0.0, delta, 1.0 - delta]
    P[1, 0] = [1.0, 0.0, 0.0]
    P[2, 0] = [1.0 - delta, delta, 0.0]
    P[2, 1] = [0.0, 0.0, 1.0]
    R = np.array([[0.0, 0.0], [1 / 3, 0.0], [2 / 3, 2 / 3]])
    width = np.minimum(0.2, 2 * np.minimum(R, 1.0 - R))
    kind = np.where(width > 0, UNIFORM, DETERMINISTIC)
    return Mdp(P, R, [1, 1, 2], kind, width, r_max=1.0, initial_state=0,
               name=f"three_state(delta={delta})", labels=("s0", "s1", "s2"))


def make_two_state_family(eps):
    """Two-state family where ``eps`` is the chance of moving from x to y.

    Actions ``b`` (index 0) and ``d`` (index 1).  For ``eps > 0`` state y is an
    absorbing reward-1 state under ``b``; for ``eps = 0`` both actions in y lead
    back to x and y is never reached.
    """
    _check_prob("eps", eps)
    x, y = 0, 1
    P = np.zeros((2, 2, 2))
    R = np.zeros((2, 2))
    P[x, 0] = [1.0 - eps, eps]
    P[x, 1] = [1.0, 0.0]
    R[x, 1] = 0.5
    if eps > 0:
        P[y, 0] = [0.0, 1.0]
        P[y, 1] = [1.0, 0.0]
        R[y, 0] = 1.0
    else:
        P[y, 0] = [1.0, 0.0]
        P[y, 1] = [1.0, 0.0]
        R[y, 0] = 1.0
    return Mdp(P, R, [2, 2], r_max=1.0, initial_state=x,
               name=f"two_state(eps={eps})", labels=("x", "y"))


def make_bias_toy(theta):
    """Single-policy chain x <-> y that switches state with probability ``theta``."""
    _check_prob("theta", theta)
    P = np.zeros((2, 1, 2))
    P[0, 0] = [1.0 - theta, theta]
    P[1, 0] = [theta, 1.0 - theta]
    R = np.array([[0.0], [1.0]])
    return Mdp(P, R, [1, 1], r_max=1.0, initial_state=0,
               name=f"bias_toy(theta={theta})", labels=("x", "y"))


# ---------------------------------------------------------------------------
# taxi


def _taxi_walls():
    """``east[r, c]`` is True when a wall blocks moving east from (r, c)."""
    east = np.zeros((5, 5), dtype=bool)
    for r in range(5):
        row = TAXI_MAP[r + 1]
        for c in range(5):
            east[r, c] = row[2 * c + 2] == "|"
    return east


def taxi_encode(row, col, passenger, dest):
    return ((row * 5 + col) * 5 + passenger) * 4 + dest


def taxi_decode(i):
    dest = i % 4
    i //= 4
    passenger = i % 5
    cell = i // 5
    return cell // 5, cell % 5, passenger, dest


def taxi_step(row, col, passenger, dest, action, east_wall=None):
    """Deterministic part of one taxi move.

    Returns ``(row, col, passenger, dest, raw_reward, delivered)``; the
    passenger and destination of a delivered trip are resampled by the caller.
    """
    east_wall = _taxi_walls() if east_wall is None else east_wall
    reward = -1.0
    delivered = False
    if action == 0:
        row = min(row + 1, 4)
    elif action == 1:
        row = max(row - 1, 0)
    elif action == 2:
        if not east_wall[row, col]:
            col = min(col + 1, 4)
    elif action == 3:
        if col > 0 and not east_wall[row, col - 1]:
            col -= 1
    elif action == 4:
        if passenger < IN_TAXI and (row, col) == TAXI_LANDMARKS[passenger]:
            passenger = IN_TAXI
        else:
            reward = -10.0
    else:
        here = (row, col)
        if passenger == IN_TAXI and here == TAXI_LANDMARKS[dest]:
            reward = 20.0
            delivered = True
        elif passenger == IN_TAXI and here in TAXI_LANDMARKS:
            passenger = TAXI_LANDMARKS.index(here)
        else:
            reward = -10.0
    return row, col, passenger, dest, reward, delivered


def make_taxi(misspecified=True, start=(2, 2, 0, 1)):
    """Continuing 5x5 taxi with rewards rescaled by ``(r + 10) / 30``.

    After a delivery a new (passenger, destination) pair with distinct
    landmarks is drawn uniformly; the taxi keeps its cell.  With
    ``misspecified`` the 100 states whose waiting passenger already sits at
    the destination are kept in the state space even though no transition
    ever enters them.
    """
    east = _taxi_walls()
    fresh = [(p, d) for p in range(4) for d in range(4) if p != d]
    n_full = 500
    P = np.zeros((n_full, 6, n_full))
    R = np.zeros((n_full, 6))
    for i in range(n_full):
        row, col, passenger, dest = taxi_decode(i)
        for a in range(6):
            r2, c2, p2, d2, reward, delivered = taxi_step(row, col, passenger, dest, a, east)
            R[i, a] = (reward + 10.0) / 30.0
            if delivered:
                for p, d in fresh:
                    P[i, a, taxi_encode(r2, c2, p, d)] += 1.0 / len(fresh)
            else:
                P[i, a, taxi_encode(r2, c2, p2, d2)] = 1.0
    s1 = taxi_encode(*start)
    if misspecified:
        keep = np.arange(n_full)
        labels = tuple(taxi_decode(i) for i in keep)
        return Mdp(P, R, np.full(n_full, 6), r_max=1.0, initial_state=s1,
                   name="taxi(misspecified=True)", labels=labels)
    keep = np.array([i for i in range(n_full)
                     if taxi_decode(i)[2] != taxi_decode(i)[3]])
    new_index = np.full(n_full, -1)
    new_index[keep] = np.arange(keep.size)
    if new_index[s1] < 0:
        raise ValueError("start state must have passenger != destination")
    P = P[np.ix_(keep, np.arange(6), keep)]
    return Mdp(P, R[keep], np.full(keep.size, 6), r_max=1.0,
               initial_state=int(new_index[s1]), name="taxi(misspecified=False)",
               labels=tuple(taxi_decode(i) for i in keep))


# ---------------------------------------------------------------------------
# random instances


def make_random_weakly_communicating(S, A, n_transient=0, seed=0, connectivity=0.3,
                                     max_support=3, deterministic_rewards=True):
    """Seeded random MDP with a planted communicating core.

    The core of ``S - n_transient`` states is strongly connected through a
    random Hamiltonian cycle; every pair also gets a few random extra
    successors inside the core (each candidate kept with probability
    ``connectivity``, at most ``max_support`` in total).  Transient states
    can move anywhere but are never entered from the core.  State labels are
    shuffled, so the partition is not visible from the indices.
    """
    if S < 1 or A < 1 or not 0 <= n_transient < S:
        raise ValueError("need S >= 1, A >= 1 and 0 <= n_transient < S")
    rng = np.random.default_rng(seed)
    C = S - n_transient
    P = np.zeros((S, A, S))
    cycle = rng.permutation(C)
    for i in range(C):
        s = cycle[i]
        nxt = cycle[(i + 1) % C]
        carrier = rng.integers(A)
        for a in range(A):
            succ = set()
            if a == carrier:
                succ.add(int(nxt))
            extra = [int(x) for x in rng.permutation(C) if rng.random() < connectivity]
            for x in extra:
                if len(succ) >= max_support:
                    break
                succ.add(x)
            if not succ:
                succ.add(int(rng.integers(C)))
            succ = sorted(succ)
            w = rng.random(len(succ)) + 0.1
            P[s, a, succ] = w / w.sum()
    for s in range(C, S):
        for a in range(A):
            k = int(rng.integers(1, min(max_support, S) + 1))
            succ = rng.choice(S, size=k, replace=False)
            w = rng.random(k) + 0.1
            P[s, a, succ] = w / w.sum()
    R = rng.random((S, A))
    kind = np.zeros((S, A), dtype=np.int64) if deterministic_rewards else np.ones((S, A), dtype=np.int64)
    # renormalize rows exactly after the division
    P /= P.sum(axis=-1, keepdims=True)

    perm = rng.permutation(S)  # old index -> new index
    Pn = np.zeros_like(P)
    Rn = np.zeros_like(R)
    Pn[perm] = P[:, :, np.argsort(perm)]
    Rn[perm] = R
    kn = np.zeros_like(kind)
    kn[perm] = kind
    return Mdp(Pn, Rn, np.full(S, A), kn, r_max=1.0, initial_state=int(perm[0]),
               name=f"random(S={S},A={A},n_transient={n_transient},seed={seed})")


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class EnvSpec:
    """Environment name plus keyword parameters, e.g. ``three_state:delta=0.005``."""

    kind: str
    params: dict = field(default_factory=dict)

    def build(self):
        return make_env(self)

    def __str__(self):
        if not self.params:
            return self.kind
        args = ",".join(f"{k}={v}" for k, v in self.params.items())
        return f"{self.kind}:{args}"


_PARAMS = {
    "three_state": {"delta": float},
    "two_state": {"eps": float},
    "bias_toy": {"theta": float},
    "taxi": {"misspecified": lambda x: str(x).lower() in ("1", "true", "yes")},
    "random": {"S": int, "A": int, "n_transient": int, "seed": int, "connectivity": float},
}
_ALIASES = {"two_state_family": "two_state", "random_weakly_communicating": "random"}


def parse_env_spec(text):
    """Parse ``kind[:key=value,...]`` into an :class:`EnvSpec`."""
    kind, _, rest = text.strip().partition(":")
    kind = _ALIASES.get(kind.strip(), kind.strip())
    if kind not in _PARAMS:
        raise ValueError(f"unknown environment {kind!r}; choose from {sorted(_PARAMS)}")
    params = {}
    for item in filter(None, (x.strip() for x in rest.split(","))):
        key, eq, value = item.partition("=")
        key = key.strip()
        if not eq or key not in _PARAMS[kind]:
            raise ValueError(f"bad parameter {item!r} for {kind}")
        params[key] = _PARAMS[kind][key](value.strip())
    return EnvSpec(kind, params)


def make_env(spec):
    """Build the MDP described by an :class:`EnvSpec` or a spec string."""
    if isinstance(spec, str):
        spec = parse_env_spec(spec)
    p = spec.params
    if spec.kind == "three_state":
        return make_three_state(p.get("delta", 0.0))
    if spec.kind == "two_state":
        return make_two_state_family(p.get("eps", 0.0))
    if spec.kind == "bias_toy":
        return make_bias_toy(p.get("theta", 0.5))
    if spec.kind == "taxi":
        return make_taxi(p.get("misspecified", True))
    if spec.kind == "random":
        return make_random_weakly_communicating(
            p.get("S", 4), p.get("A", 2), p.get("n_transient", 0), p.get("seed", 0),
            p.get("connectivity", 0.3))
    raise ValueError(f"unknown environment {spec.kind!r}")
