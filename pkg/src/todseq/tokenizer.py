"""Word-level tokenizer with atomic segment tokens."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

UNK = "<unk>"
PAD = "<pad>"

CONTEXT = "<|context|>"
END_CONTEXT = "<|endofcontext|>"
USER = "<|user|>"
SYSTEM = "<|system|>"
BELIEF = "<|belief|>"
END_BELIEF = "<|endofbelief|>"
DB = "<|db|>"
END_DB = "<|endofdb|>"
ACTION = "<|action|>"
END_ACTION = "<|endofaction|>"
RESPONSE = "<|response|>"
END_RESPONSE = "<|endofresponse|>"

SEGMENT_TOKENS = [
    CONTEXT, END_CONTEXT, USER, SYSTEM, BELIEF, END_BELIEF,
    DB, END_DB, ACTION, END_ACTION, RESPONSE, END_RESPONSE,
]
DEFAULT_SPECIALS = SEGMENT_TOKENS + [PAD]

MAX_SEQUENCE_LENGTH = 1024


@dataclass(frozen=True)
class Vocab:
    id_to_token: tuple[str, ...]
    specials: tuple[str, ...] = ()
    token_to_id: dict[str, int] = field(init=False, compare=False, repr=False)
    _splitter: re.Pattern | None = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        mapping = {}
        for i, tok in enumerate(self.id_to_token):
            if tok in mapping:
                raise ValueError(f"duplicate token {tok!r} in vocabulary")
            mapping[tok] = i
        if UNK not in mapping:
            raise ValueError("vocabulary has no <unk> entry")
        object.__setattr__(self, "token_to_id", mapping)
        # longest first so that overlapping specials match greedily
        specials = sorted(set(self.specials), key=len, reverse=True)
        pattern = re.compile("(" + "|".join(map(re.escape, specials)) + ")") if specials else None
        object.__setattr__(self, "_splitter", pattern)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __getitem__(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    @property
    def special_ids(self) -> dict[str, int]:
        out = {UNK: self.unk_id}
        out.update({s: self.token_to_id[s] for s in self.specials})
        return out

    def tokenize(self, text: str) -> list[str]:
        if self._splitter is None:
            return text.split()
        words: list[str] = []
        for piece in self._splitter.split(text):
            if piece in self.token_to_id and piece in self.specials:
                words.append(piece)
            else:
                words.extend(piece.split())
        return words

    def save(self, path: str | Path) -> None:
        """One token per line; the line number is the id.  Specials are marked by a header line."""
        lines = ["#specials " + " ".join(self.specials)] + list(self.id_to_token)
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines or not lines[0].startswith("#specials"):
            raise ValueError(f"{path}: missing '#specials' header line")
        specials = tuple(lines[0].split()[1:])
        return cls(tuple(lines[1:]), specials)


def build_vocab(corpus_texts: list[str], special_tokens: list[str] | None = None) -> Vocab:
    """Specials first (after <unk>), then corpus words in order of first occurrence."""
    if not corpus_texts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    specials = [s for s in dict.fromkeys(special_tokens or []) if s != UNK]
    tokens = [UNK] + specials
    seen = set(tokens)
    probe = Vocab(tuple(tokens), tuple(specials))
    for text in corpus_texts:
        for word in probe.tokenize(text):
            if word not in seen:
                seen.add(word)
                tokens.append(word)
    return Vocab(tuple(tokens), tuple(specials))


def encode(vocab: Vocab, text: str, max_len: int = MAX_SEQUENCE_LENGTH) -> list[int]:
    ids = [vocab[w] for w in vocab.tokenize(text)]
    return ids[:max_len]


def decode(vocab: Vocab, ids) -> str:
    n = len(vocab)
    words = []
    for i in ids:
        i = int(i)
        if not 0 <= i < n:
            raise ValueError(f"token id {i} out of range for vocabulary of size {n}")
        words.append(vocab.id_to_token[i])
    return " ".join(words)
