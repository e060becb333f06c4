"""Curated chain-of-thought style answers with the selection each one must
yield. Every answer ends with a final list the generator wrote itself, so
the expected indices follow from that list: drop values outside the
presented window, drop repeats, keep the first `requested`. The status is
exact when nothing was dropped and the count matches, deficient when too
few remain, repaired otherwise; no list at all is failed.

Run from this directory: python3 gen_parser_cases.py > parser_cases.jsonl
"""
import json
import random

rng = random.Random(7)

OPENERS = [
    "Let me think step by step about which instances would help the classifier most.",
    "I'll go through the candidates and weigh how informative each one is.",
    "To pick a useful batch I compare the instances on ambiguity, topic coverage and redundancy.",
    "Sure! Here is my reasoning before the final answer.",
]
CLOSERS = [
    "That completes my analysis.",
    "These choices balance difficulty and diversity.",
    "I avoided near-duplicates of each other.",
    "",
]
LABELS = [
    "Selected indices: ",
    "Final answer: ",
    "**Selected indices:** ",
    "My selection: ",
    "Answer - ",
]
REASONS = [
    "ambiguous sentiment with sarcasm",
    "rare topic that nothing else covers",
    "long text mixing two themes",
    "short and typical of the pool",
    "likely near the decision boundary",
]


def prose(window):
    """Reasoning lines that mention indices, counts, decimals and glued digits."""
    lines = [rng.choice(OPENERS), ""]
    for n in range(rng.randint(2, 6)):
        i = rng.choice(window)
        kind = rng.randrange(6)
        if kind == 0:
            lines.append(f"{n + 1}. Index {i}: {rng.choice(REASONS)}, maybe worth it.")
        elif kind == 1:
            lines.append(f"Instance {i} has confidence around 0.{rng.randint(10, 99)} and covers topic{rng.randint(1, 9)}.")
        elif kind == 2:
            j = rng.choice(window)
            lines.append(f"Index {i} and index {j} look similar, so I will keep only one of them.")
        elif kind == 3:
            lines.append(f"- #{i} - {rng.choice(REASONS)}.")
        elif kind == 4:
            lines.append(f"About {rng.randint(2, 9)} of these are near-duplicates of {i}, for example the 2nd one.")
        else:
            lines.append(f"Step {n + 1}: compare item {i} against the rest of the batch.")
    lines.append("That is all I need to consider.")
    return "\n".join(lines)


def expected(final, window, requested):
    allowed = set(window)
    seen, kept, dropped = set(), [], False
    for v in final:
        if v in allowed and v not in seen:
            seen.add(v)
            kept.append(v)
        else:
            dropped = True
    if len(kept) > requested:
        kept, dropped = kept[:requested], True
    if len(kept) < requested:
        status = "deficient"
    elif dropped:
        status = "repaired"
    else:
        status = "exact"
    return kept, status


def render_list(values, style):
    text = [str(v) for v in values]
    if style == "comma":
        return ", ".join(text)
    if style == "and":
        return ", ".join(text[:-1]) + " and " + text[-1] if len(text) > 1 else text[0]
    if style == "brackets":
        return "[" + ", ".join(text) + "]"
    if style == "json":
        return '{"selected": [' + ", ".join(text) + "]}"
    if style == "semicolon":
        return "; ".join(text)
    raise ValueError(style)


def final_block(values):
    shape = rng.randrange(5)
    if shape == 0:
        body = "\n".join(f"{n + 1}. Index {v}" for n, v in enumerate(values))
        return "Final selection:\n" + body
    if shape == 1:
        body = "\n".join(f"- Index {v}: {rng.choice(REASONS)}" for v in values)
        return "Here is my final selection with reasons:\n" + body
    style = rng.choice(["comma", "and", "brackets", "json", "semicolon"])
    return rng.choice(LABELS) + render_list(values, style)


def case(n, family):
    start = rng.choice([0, 0, 17, 150, 1200])
    size = rng.choice([10, 20, 50, 100, 200])
    window = list(range(start, start + size))
    requested = rng.randint(1, min(size, 32)) if family != "single" else 1
    picks = rng.sample(window, requested)

    if family == "refusal":
        response = "I'm sorry, but I can't help with selecting instances for this request."
        return {"id": n, "family": family, "response": response, "window": [start, size],
                "requested": requested, "indices": [], "status": "failed"}

    final = list(picks)
    if family == "duplicates" and requested >= 1:
        final.insert(rng.randrange(len(final) + 1), rng.choice(final))
    elif family == "out_of_window":
        final.insert(rng.randrange(len(final) + 1), start + size + rng.randint(0, 500))
    elif family == "too_many":
        extra = [v for v in window if v not in final][: rng.randint(1, 3)]
        final += extra
    elif family == "too_few" and requested >= 2:
        final = final[: rng.randint(1, requested - 1)] if requested > 2 else final[:1]

    if family == "single" or len(final) == 1:
        # A lone integer is only unambiguous as the very last number.
        block = rng.choice(["Selected index: ", "Final answer: "]) + str(final[0])
        closer = ""
    else:
        block = final_block(final)
        closer = rng.choice(CLOSERS)
    response = prose(window) + "\n\n" + block
    if closer:
        response += "\n\n" + closer
    indices, status = expected(final, window, requested)
    return {"id": n, "family": family, "response": response, "window": [start, size],
            "requested": requested, "indices": indices, "status": status}


FAMILIES = ["clean"] * 8 + ["duplicates", "out_of_window", "too_many", "too_few", "single", "refusal"]
for n in range(200):
    print(json.dumps(case(n, FAMILIES[n % len(FAMILIES)])))
