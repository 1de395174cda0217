# utils/answer_matching.py
import logging
import re
from fractions import Fraction

from math_verify import ExprExtractionConfig, LatexExtractionConfig, parse, verify

_BOXED_MARKERS = ("\\boxed{", "\\fbox{")
_FRAC_RE = re.compile(r"^(-?)\\frac\{(-?\d+)\}\{(-?\d+)\}$")
_SLASH_RE = re.compile(r"^(-?\d+)/(-?\d+)$")
_DECIMAL_RE = re.compile(r"^-?(\d+\.?\d*|\.\d+)$")
_THOUSANDS_RE = re.compile(r"^-?\d{1,3}(,\d{3})+$")

_EXTRACTION = [LatexExtractionConfig(), ExprExtractionConfig()]


def extract_boxed(text):
    """Content of the last balanced \\boxed{...} in text, or None."""
    if not text:
        return None
    start = -1
    marker_len = 0
    for marker in _BOXED_MARKERS:
        position = text.rfind(marker)
        if position > start:
            start, marker_len = position, len(marker)
    if start < 0:
        return None
    depth = 1
    i = start + marker_len
    begin = i
    while i < len(text):
        ch = text[i]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[begin:i]
        i += 1
    return None


def normalize_answer(answer):
    if answer is None:
        return None
    text = str(answer).strip()
    text = text.strip("$").strip()
    for token in ("\\left", "\\right", "\\!", "\\,", "\\;", "\\ "):
        text = text.replace(token, "")
    text = text.replace("\\dfrac", "\\frac").replace("\\tfrac", "\\frac")
    text = re.sub(r"\s+", "", text)
    if text.startswith("\\text{") and text.endswith("}"):
        text = text[len("\\text{"):-1]
    return text


def parse_number(text):
    """Exact rational value of an integer, decimal, a/b or \\frac{a}{b}; None otherwise."""
    if not text:
        return None
    if _THOUSANDS_RE.match(text):
        text = text.replace(",", "")
    match = _FRAC_RE.match(text)
    if match:
        sign, num, den = match.groups()
        if int(den) == 0:
            return None
        value = Fraction(int(num), int(den))
        return -value if sign else value
    match = _SLASH_RE.match(text)
    if match:
        num, den = match.groups()
        if int(den) == 0:
            return None
        return Fraction(int(num), int(den))
    if _DECIMAL_RE.match(text):
        return Fraction(text)
    return None


def symbolic_match(predicted, gold):
    """math_verify equivalence of two answer strings (e.g. \\sqrt{8} vs 2\\sqrt{2})."""
    try:
        # Timeouts off: matching runs inside worker threads, where signal-based alarms are unavailable.
        gold_parsed = parse(f"${gold}$", extraction_config=_EXTRACTION, parsing_timeout=None)
        answer_parsed = parse(f"${predicted}$", extraction_config=_EXTRACTION, parsing_timeout=None)
        if not gold_parsed or not answer_parsed:
            return False
        return bool(verify(gold_parsed, answer_parsed, timeout_seconds=None))
    except Exception as e:
        logging.debug(f"math_verify could not compare {predicted!r} with {gold!r}: {e}")
        return False


def answers_match(predicted, gold):
    left = normalize_answer(predicted)
    right = normalize_answer(gold)
    if left is None or right is None or left == "":
        return False
    if left == right:
        return True
    left_value = parse_number(left)
    right_value = parse_number(right)
    if left_value is not None and right_value is not None:
        return left_value == right_value
    return symbolic_match(left, right)


def boxed_answer_matches(response, gold):
    """Default answer predicate on the final \\boxed{} content: normalized exact match first, then math_verify."""
    return answers_match(extract_boxed(response), gold)
