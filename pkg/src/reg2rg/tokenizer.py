"""Word-level tokenizer over the closed report lexicon, with byte fallback.

Text is segmented into pieces: slot markers like ``[3]``, words (letters,
optionally hyphenated), digit runs, single whitespace characters, and single
punctuation characters. Pieces found in the vocabulary map to one id each;
anything else is emitted as UTF-8 byte tokens, so encode/decode round-trips
any string exactly.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
SEP_ID = 3  # decodes to a single newline; doubles as the section separator
_N_SPECIAL = 4
_N_BYTES = 256

_PIECE_RE = re.compile(r"\[\d+\]|[A-Za-z]+(?:-[A-Za-z]+)*|\d+|\s|[^\sA-Za-z0-9]")


def split_pieces(text: str) -> list[str]:
    return _PIECE_RE.findall(text)


class Tokenizer:
    def __init__(self, pieces: list[str]):
        self._piece_to_id: dict[str, int] = {}
        self._id_to_piece: dict[int, str] = {}
        next_id = _N_SPECIAL + _N_BYTES
        for p in pieces:
            if p == "\n" or p in self._piece_to_id:
                continue
            self._piece_to_id[p] = next_id
            self._id_to_piece[next_id] = p
            next_id += 1
        self.vocab_size = next_id

    @classmethod
    def build(cls, corpus: list[str]) -> "Tokenizer":
        """Collect every piece occurring in the corpus, in sorted order."""
        seen = set()
        for text in corpus:
            seen.update(split_pieces(text))
        return cls(sorted(seen))

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for piece in split_pieces(text):
            if piece == "\n":
                ids.append(SEP_ID)
            elif piece in self._piece_to_id:
                ids.append(self._piece_to_id[piece])
            else:
                ids.extend(_N_SPECIAL + b for b in piece.encode("utf-8"))
        return ids

    def decode(self, ids) -> str:
        out: list[str] = []
        byte_buf = bytearray()

        def flush():
            if byte_buf:
                out.append(byte_buf.decode("utf-8", errors="replace"))
                byte_buf.clear()

        for i in ids:
            i = int(i)
            if _N_SPECIAL <= i < _N_SPECIAL + _N_BYTES:
                byte_buf.append(i - _N_SPECIAL)
                continue
            flush()
            if i == SEP_ID:
                out.append("\n")
            elif i in self._id_to_piece:
                out.append(self._id_to_piece[i])
            # PAD/BOS/EOS and out-of-range ids decode to nothing
        flush()
        return "".join(out)

    def save(self, path) -> None:
        payload = {"version": 1, "pieces": self._piece_to_id}
        Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Tokenizer":
        payload = json.loads(Path(path).read_text())
        tok = cls([])
        tok._piece_to_id = {p: int(i) for p, i in payload["pieces"].items()}
        tok._id_to_piece = {i: p for p, i in tok._piece_to_id.items()}
        tok.vocab_size = max(tok._piece_to_id.values(), default=_N_SPECIAL + _N_BYTES - 1) + 1
        return tok
