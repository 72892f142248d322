"""Character-level alphabet shared by the corpus and the model.

The vocabulary has 64 symbols. Ids 0..62 map one-to-one onto printable
characters; id 63 is the end-of-sequence marker and has no character.
"""

from __future__ import annotations

CHARS = " abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ.,?!':;-()"

VOCAB_SIZE = 64
EOS_ID = 63

assert len(CHARS) == VOCAB_SIZE - 1

_CHAR_TO_ID = {ch: i for i, ch in enumerate(CHARS)}


def encode(text: str) -> list[int]:
    """Map text to token ids; unknown characters are an error, not a skip."""
    try:
        return [_CHAR_TO_ID[ch] for ch in text]
    except KeyError as exc:
        raise ValueError(f"character {exc.args[0]!r} is not in the alphabet") from None


def decode(ids) -> str:
    """Map token ids back to text. The end marker renders as nothing."""
    out = []
    for i in ids:
        i = int(i)
        if i == EOS_ID:
            continue
        if not 0 <= i < len(CHARS):
            raise ValueError(f"token id {i} out of range for the alphabet")
        out.append(CHARS[i])
    return "".join(out)
