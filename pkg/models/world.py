# models/world.py
import math

from utils.errors import ValidationError


class SyntheticWorld:
    """Logistic main-effects plus pairwise-interaction model of hint success.

    P(correct | S) = sigmoid(base + sum_{i in S} w_i + sum_{i<j in S} w_ij)
    """

    def __init__(self, problem_id, n_kps, base, main_effects, pair_effects=None, seed=0,
                 planted_pairs=None):
        if len(main_effects) != n_kps:
            raise ValidationError(f"World {problem_id}: {len(main_effects)} main effects for {n_kps} KPs")
        pairs = {}
        for (i, j), weight in (pair_effects or {}).items():
            i, j = min(i, j), max(i, j)
            if i == j or i < 0 or j >= n_kps:
                raise ValidationError(f"World {problem_id}: invalid pair ({i}, {j})")
            pairs[(i, j)] = float(weight)
        self.problem_id = problem_id
        self.n_kps = n_kps
        self.base = float(base)
        self.main_effects = [float(w) for w in main_effects]
        self.pair_effects = pairs
        self.seed = seed
        self.planted_pairs = sorted(tuple(sorted(p)) for p in (planted_pairs or []))

    def logit(self, config):
        indices = config.kp_indices
        value = self.base
        for i in indices:
            value += self.main_effects[i]
        for a, i in enumerate(indices):
            for j in indices[a + 1:]:
                value += self.pair_effects.get((i, j), 0.0)
        return value

    def probability(self, config):
        z = self.logit(config)
        if z >= 0:
            return 1.0 / (1.0 + math.exp(-z))
        e = math.exp(z)
        return e / (1.0 + e)

    def to_record(self):
        return {
            "problem_id": self.problem_id,
            "n_kps": self.n_kps,
            "base": self.base,
            "main_effects": self.main_effects,
            "pair_effects": [[i, j, w] for (i, j), w in sorted(self.pair_effects.items())],
            "planted_pairs": [list(p) for p in self.planted_pairs],
            "seed": self.seed,
        }

    @classmethod
    def from_record(cls, record):
        return cls(
            problem_id=str(record["problem_id"]),
            n_kps=int(record["n_kps"]),
            base=record["base"],
            main_effects=record["main_effects"],
            pair_effects={(int(i), int(j)): w for i, j, w in record.get("pair_effects", [])},
            seed=int(record.get("seed", 0)),
            planted_pairs=[tuple(p) for p in record.get("planted_pairs", [])],
        )

    def __repr__(self):
        return f"SyntheticWorld({self.problem_id!r}, n_kps={self.n_kps})"
