# services/synth_service.py
import hashlib
import itertools
import logging
import math
import os

import numpy as np

from models.configuration import Configuration
from models.problem import KnowledgePoint, Problem
from models.world import SyntheticWorld
from utils.errors import CapExceededError, ValidationError
from utils.file_utils import iter_jsonl, write_jsonl

WORLDS_FILE = "worlds.jsonl"


class EffectDistributions:
    """Parameters of the random population drawn by generate_benchmark."""

    def __init__(self, base_mean=-1.5, base_std=1.0, effect_mean=0.6, effect_std=0.4,
                 effect_floor=0.2, pair_gap_low=0.5, pair_gap_high=1.5):
        if effect_floor <= 0:
            raise ValidationError("effect_floor must be positive so paired KPs stay in the positive regime")
        if pair_gap_low < 0 or pair_gap_high < pair_gap_low:
            raise ValidationError("pair gap range must satisfy 0 <= low <= high")
        self.base_mean = base_mean
        self.base_std = base_std
        self.effect_mean = effect_mean
        self.effect_std = effect_std
        self.effect_floor = effect_floor
        self.pair_gap_low = pair_gap_low
        self.pair_gap_high = pair_gap_high

    @classmethod
    def from_dict(cls, values):
        return cls(**(values or {}))


def true_probability(world, config):
    return world.probability(config)


def _stream(seed, problem_id, config, run):
    # One Philox stream per (seed, problem, config, run); sample s reads the s-th uniform.
    # config=None gives the run's shared stream used by paired sampling.
    config_key = "*" if config is None else config.key
    digest = hashlib.blake2b(f"{seed}|{problem_id}|{config_key}|{run}".encode("utf-8"), digest_size=16).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))


def sample_rollouts(world, config, runs, samples_per_run, exact=False, paired=False):
    """Per-run correct counts for config.

    exact=True reports round(p * samples_per_run) for every run instead of sampling.
    paired=True draws run r's uniforms from one stream shared by every configuration of the
    problem, like decoding with a fixed seed per run: counts are then monotone in p and
    configurations with equal p get equal counts.
    """
    p = true_probability(world, config)
    if exact:
        return [int(round(p * samples_per_run))] * runs
    counts = []
    for run in range(runs):
        stream = _stream(world.seed, world.problem_id, None if paired else config, run)
        uniforms = stream.random(samples_per_run)
        counts.append(int(np.count_nonzero(uniforms < p)))
    return counts


def all_subsets(n_kps):
    for size in range(n_kps + 1):
        for combo in itertools.combinations(range(n_kps), size):
            yield Configuration(combo)


def ground_truth_best(world, cap=12):
    if world.n_kps > cap:
        raise CapExceededError(f"World {world.problem_id} KP count", cap, world.n_kps)
    return min(all_subsets(world.n_kps), key=lambda c: (-true_probability(world, c), c.sort_key()))


class SyntheticProvider:
    """Generating provider backed by SyntheticWorld objects keyed by problem id."""
    generates = True

    def __init__(self, worlds, exact=False, paired=False):
        self.worlds = worlds
        self.exact = exact
        self.paired = paired

    def evaluate(self, request):
        world = self.worlds.get(request.problem_id)
        if world is None:
            raise ValidationError(f"No synthetic world for problem {request.problem_id}")
        if not request.config.is_subset_of(world.n_kps):
            raise ValidationError(f"Configuration {request.config} outside world {request.problem_id}")
        logging.debug(f"SAMPLE synth {request}")
        return sample_rollouts(world, request.config, request.runs, request.samples_per_run, self.exact,
                               self.paired)


class ThresholdPromptProvider:
    """Prompt-level provider: accuracy jumps once the hint carries `critical_tokens` tokens.

    Used for critical-segment sweeps; the hint is read back from the `## Hint` section of the prompt.
    """

    def __init__(self, critical_tokens, low=0.1, high=0.7, exact=True, seed=0):
        self.critical_tokens = critical_tokens
        self.low = low
        self.high = high
        self.exact = exact
        self.seed = seed

    def hint_tokens(self, prompt):
        marker = "## Hint\n"
        start = prompt.find(marker)
        if start < 0:
            return 0
        body = prompt[start + len(marker):]
        end = body.find("\n\nPlease reason step by step")
        if end >= 0:
            body = body[:end]
        return len(body.split())

    def evaluate_prompt(self, problem, prompt, runs, samples_per_run):
        p = self.high if self.hint_tokens(prompt) >= self.critical_tokens else self.low
        if self.exact:
            return [int(round(p * samples_per_run))] * runs
        counts = []
        for run in range(runs):
            digest = hashlib.blake2b(f"{self.seed}|{problem.id}|{prompt}|{run}".encode("utf-8"),
                                     digest_size=16).digest()
            rng = np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))
            counts.append(int(np.count_nonzero(rng.random(samples_per_run) < p)))
        return counts


class Benchmark:
    def __init__(self, problems, kps, worlds):
        self.problems = problems
        self.kps = kps
        self.worlds = worlds

    def write(self, data_dir, header=None):
        os.makedirs(data_dir, exist_ok=True)
        write_jsonl(os.path.join(data_dir, "problems.jsonl"), [p.to_record() for p in self.problems], header=header)
        write_jsonl(
            os.path.join(data_dir, "kps.jsonl"),
            [kp.to_record() for p in self.problems for kp in self.kps[p.id]],
            header=header,
        )
        save_worlds(os.path.join(data_dir, WORLDS_FILE), self.worlds, header=header)


def generate_benchmark(n_problems, n_kps, paradox_fraction=0.3, zero_fraction=0.3, seed=0, effects=None):
    """Reproducible synthetic population.

    Each KP is zero-effect with probability zero_fraction, else has a positive main effect.
    paradox_fraction of the positive KPs are grouped into disjoint pairs whose interaction
    w_ab = -(w_a + w_b) - gap makes joint removal worse than either single removal.
    """
    if not 0 <= paradox_fraction <= 1 or not 0 <= zero_fraction <= 1:
        raise ValidationError("paradox_fraction and zero_fraction must lie in [0, 1]")
    if n_problems < 0 or n_kps < 0:
        raise ValidationError("n_problems and n_kps must be non-negative")
    effects = effects or EffectDistributions()
    rng = np.random.default_rng(seed)
    problems, kps, worlds = [], {}, {}
    width = max(4, len(str(n_problems)))
    for index in range(n_problems):
        problem_id = f"synth-{index:0{width}d}"
        base = float(rng.normal(effects.base_mean, effects.base_std))
        main_effects = []
        for _ in range(n_kps):
            if rng.random() < zero_fraction:
                main_effects.append(0.0)
            else:
                # Folded at the floor rather than clipped, so no two effects coincide.
                spread = float(rng.normal(effects.effect_mean - effects.effect_floor, effects.effect_std))
                main_effects.append(effects.effect_floor + abs(spread))
        positive = [i for i, w in enumerate(main_effects) if w > 0]
        order = [int(i) for i in rng.permutation(positive)]
        # Expected pair count is paradox_fraction * |positive| / 2; the fractional part is drawn.
        wanted = paradox_fraction * len(order) / 2
        n_pairs = int(math.floor(wanted)) + int(rng.random() < wanted - math.floor(wanted))
        n_paired = 2 * min(n_pairs, len(order) // 2)
        pair_effects, planted = {}, []
        for a, b in zip(order[0:n_paired:2], order[1:n_paired:2]):
            gap = float(rng.uniform(effects.pair_gap_low, effects.pair_gap_high))
            pair = (min(a, b), max(a, b))
            pair_effects[pair] = -(main_effects[a] + main_effects[b]) - gap
            planted.append(pair)
        world_seed = int(rng.integers(0, 2 ** 31 - 1))
        worlds[problem_id] = SyntheticWorld(problem_id, n_kps, base, main_effects, pair_effects,
                                            seed=world_seed, planted_pairs=planted)
        problems.append(Problem(problem_id, f"Synthetic problem {index}", gold_answer="0",
                                reference_solution=f"Synthetic reference solution {index}"))
        kps[problem_id] = [
            KnowledgePoint(problem_id, i, f"Synthetic knowledge point {i}", f"Effect weight {main_effects[i]:.6f}",
                           status="verified")
            for i in range(n_kps)
        ]
    logging.info(f"Generated synthetic benchmark: {n_problems} problems x {n_kps} KPs (seed {seed})")
    return Benchmark(problems, kps, worlds)


def save_worlds(path, worlds, header=None):
    write_jsonl(path, [worlds[pid].to_record() for pid in sorted(worlds)], header=header)


def load_worlds(path):
    worlds = {}
    try:
        for line_number, record in iter_jsonl(path):
            try:
                world = SyntheticWorld.from_record(record)
            except (KeyError, TypeError, ValueError) as e:
                raise ValidationError(f"{path} line {line_number}: {e}") from e
            worlds[world.problem_id] = world
    except ValueError as e:
        raise ValidationError(f"{path}: {e}") from e
    return worlds
