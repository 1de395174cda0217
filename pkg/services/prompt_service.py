# services/prompt_service.py
import functools
import math
import os
import re
from fractions import Fraction

from utils.errors import ValidationError

TEMPLATE_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "templates")

# Only these placeholders are substituted; every other brace in a template is literal text.
PLACEHOLDERS = {
    "extract_kp": ("question", "solution"),
    "leakage_check": ("question", "knowledge"),
    "augmented_prompt": ("statement", "hint"),
}

HINT_HEADER = "## Hint"
KP_LABEL = "**Knowledge Point**: "
CONSIDERATIONS_LABEL = "**Key Considerations**: "
_ITEM_RE = re.compile(r"^(\d+)\. \*\*Knowledge Point\*\*: ?(.*)$")


@functools.lru_cache(maxsize=None)
def load_template(name):
    if name not in PLACEHOLDERS:
        raise ValidationError(f"Unknown prompt template '{name}'")
    with open(os.path.join(TEMPLATE_DIR, f"{name}.txt"), "r", encoding="utf-8") as f:
        text = f.read()
    return text[:-1] if text.endswith("\n") else text


def render_template(name, template=None, **values):
    declared = PLACEHOLDERS[name]
    unexpected = set(values) - set(declared)
    if unexpected:
        raise ValidationError(f"Template '{name}' has no placeholder(s) {sorted(unexpected)}")
    text = load_template(name) if template is None else template
    # One pass, so placeholder text inside a substituted value stays literal.
    pattern = re.compile("|".join(re.escape("{" + key + "}") for key in declared))

    def substitute(match):
        value = values.get(match.group(0)[1:-1])
        return "" if value is None else str(value)

    return pattern.sub(substitute, text)


def emit_hint_block(kps):
    """`## Hint` block for the given KPs in order; "" for no KPs."""
    kps = list(kps)
    if not kps:
        return ""
    lines = [HINT_HEADER]
    for number, kp in enumerate(kps, 1):
        if not kp.is_final:
            raise ValidationError(f"KP {kp.problem_id}#{kp.index} has status '{kp.status}', not verified/revised")
        lines.append(f"{number}. {KP_LABEL}{kp.knowledge}")
        lines.append(f"{CONSIDERATIONS_LABEL}{kp.considerations}")
    return "\n".join(lines)


def parse_hint_block(text):
    """Inverse of emit_hint_block: [(knowledge, considerations), ...]."""
    if not text:
        return []
    lines = text.split("\n")
    if lines[0] != HINT_HEADER:
        raise ValidationError("Hint block must start with '## Hint'")
    items = []
    field = None
    for line in lines[1:]:
        match = _ITEM_RE.match(line)
        if match and int(match.group(1)) == len(items) + 1 and (field is None or field == "considerations"):
            items.append([match.group(2), None])
            field = "knowledge"
        elif field == "knowledge" and line.startswith(CONSIDERATIONS_LABEL):
            items[-1][1] = line[len(CONSIDERATIONS_LABEL):]
            field = "considerations"
        elif field == "knowledge":
            items[-1][0] += "\n" + line
        elif field == "considerations":
            items[-1][1] += "\n" + line
        else:
            raise ValidationError(f"Unexpected line in hint block: {line!r}")
    for number, (_, considerations) in enumerate(items, 1):
        if considerations is None:
            raise ValidationError(f"Hint item {number} has no Key Considerations line")
    return [tuple(item) for item in items]


def emit_prompt(problem, hint_block=""):
    """Augmented training prompt; the hint section disappears entirely when hint_block is empty."""
    statement = problem.statement if hasattr(problem, "statement") else str(problem)
    template = load_template("augmented_prompt")
    if not hint_block:
        template = template.replace("{hint}\n\n", "")
    return render_template("augmented_prompt", template=template, statement=statement, hint=hint_block)


def prefix_token_count(ratio, total_tokens):
    """ceil(r/100 * T) computed exactly, so 30% of 10 tokens is 3 and not 4."""
    ratio = Fraction(str(ratio)) if isinstance(ratio, float) else Fraction(ratio)
    if ratio < 0 or ratio > 100:
        raise ValidationError(f"prefix ratio must lie in [0, 100], got {ratio}")
    return math.ceil(ratio * total_tokens / 100)


def build_prefix_hint(solution, ratio):
    """(hint text, tokens used) for the first r% whitespace tokens of a reference solution."""
    tokens = solution.split()
    count = prefix_token_count(ratio, len(tokens))
    if count == 0:
        return "", 0
    return f"{HINT_HEADER}\n" + " ".join(tokens[:count]), count
