# models/analysis.py


class ParadoxReport:
    """Joint-removal vs single-removal comparison over size-m subsets of K⁺."""

    def __init__(self, m, pairs_examined, counted, gap_sum, details, per_problem_rates,
                 too_small=None, sampled=None, failures=None):
        self.m = m
        self.pairs_examined = pairs_examined
        self.counted = counted
        # None when no pair was examined / counted.
        self.p_m = counted / pairs_examined if pairs_examined else None
        self.delta_m = float(gap_sum / counted) if counted else None
        self.per_problem_details = details
        self.per_problem_rates = per_problem_rates
        self.too_small = sorted(too_small or [])
        self.sampled = sorted(sampled or [])
        self.failures = list(failures or [])

    def to_record(self):
        return {
            "kind": "paradox",
            "m": self.m,
            "pairs_examined": self.pairs_examined,
            "counted": self.counted,
            "p_m": self.p_m,
            "delta_m": self.delta_m,
            "per_problem_rates": dict(sorted(self.per_problem_rates.items())),
            "too_small": self.too_small,
            "sampled": self.sampled,
            "failures": self.failures,
        }

    def detail_records(self):
        return [
            {
                "kind": "paradox_pair",
                "problem_id": problem_id,
                "subset": list(subset),
                "a_joint": a_joint,
                "a_single_mean": a_single,
                "counted": counted,
            }
            for problem_id, subset, a_joint, a_single, counted in self.per_problem_details
        ]


class BucketReport:
    def __init__(self, bucket_edges, per_bucket):
        self.bucket_edges = list(bucket_edges)
        self.per_bucket = per_bucket

    @property
    def total(self):
        return sum(bucket["n"] for bucket in self.per_bucket)

    def to_records(self):
        return [dict(kind="bucket", **bucket) for bucket in self.per_bucket]
