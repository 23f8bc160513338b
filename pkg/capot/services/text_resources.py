from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Optional

from ..errors import DataError

logger = logging.getLogger(__name__)

RESOURCE_DIR = Path(__file__).resolve().parent.parent / "resources"

VOWELS = frozenset("aeiou")
KEYBOARD_ROWS = ("1234567890", "qwertyuiop", "asdfghjkl", "zxcvbnm")

# Row pairs and the column offsets (lower column minus upper column) that touch.
_ROW_CONTACTS = (
    (0, 1, (-1, 0)),
    (1, 2, (-1, 0, 1)),
    (2, 3, (-1, 0)),
)


class PorterStemmer:
    """Classic Porter (1980) suffix stripper, steps 1a through 5b.

    Operates on lowercase ASCII words; words of one or two letters are
    returned untouched.
    """

    def __init__(self) -> None:
        m_gt_0: Callable[[str], bool] = lambda stem: self._measure(stem) > 0
        m_gt_1: Callable[[str], bool] = lambda stem: self._measure(stem) > 1

        self._step2_rules = self._longest_first(
            [
                ("ational", "ate", m_gt_0),
                ("tional", "tion", m_gt_0),
                ("enci", "ence", m_gt_0),
                ("anci", "ance", m_gt_0),
                ("izer", "ize", m_gt_0),
                ("abli", "able", m_gt_0),
                ("alli", "al", m_gt_0),
                ("entli", "ent", m_gt_0),
                ("eli", "e", m_gt_0),
                ("ousli", "ous", m_gt_0),
                ("ization", "ize", m_gt_0),
                ("ation", "ate", m_gt_0),
                ("ator", "ate", m_gt_0),
                ("alism", "al", m_gt_0),
                ("iveness", "ive", m_gt_0),
                ("fulness", "ful", m_gt_0),
                ("ousness", "ous", m_gt_0),
                ("aliti", "al", m_gt_0),
                ("iviti", "ive", m_gt_0),
                ("biliti", "ble", m_gt_0),
            ]
        )
        self._step3_rules = self._longest_first(
            [
                ("icate", "ic", m_gt_0),
                ("ative", "", m_gt_0),
                ("alize", "al", m_gt_0),
                ("iciti", "ic", m_gt_0),
                ("ical", "ic", m_gt_0),
                ("ful", "", m_gt_0),
                ("ness", "", m_gt_0),
            ]
        )
        self._step4_rules = self._longest_first(
            [
                ("al", "", m_gt_1),
                ("ance", "", m_gt_1),
                ("ence", "", m_gt_1),
                ("er", "", m_gt_1),
                ("ic", "", m_gt_1),
                ("able", "", m_gt_1),
                ("ible", "", m_gt_1),
                ("ant", "", m_gt_1),
                ("ement", "", m_gt_1),
                ("ment", "", m_gt_1),
                ("ent", "", m_gt_1),
                ("ion", "", lambda stem: m_gt_1(stem) and stem[-1:] in ("s", "t")),
                ("ou", "", m_gt_1),
                ("ism", "", m_gt_1),
                ("ate", "", m_gt_1),
                ("iti", "", m_gt_1),
                ("ous", "", m_gt_1),
                ("ive", "", m_gt_1),
                ("ize", "", m_gt_1),
            ]
        )

    @staticmethod
    def _longest_first(rules):
        return sorted(rules, key=lambda rule: len(rule[0]), reverse=True)

    def _is_consonant(self, word: str, i: int) -> bool:
        letter = word[i]
        if letter in VOWELS:
            return False
        if letter == "y":
            return i == 0 or not self._is_consonant(word, i - 1)
        return True

    def _measure(self, stem: str) -> int:
        """Number of VC sequences in the [C](VC)^m[V] decomposition."""
        form = "".join("c" if self._is_consonant(stem, i) else "v" for i in range(len(stem)))
        collapsed = []
        for kind in form:
            if not collapsed or collapsed[-1] != kind:
                collapsed.append(kind)
        return "".join(collapsed).count("vc")

    def _has_vowel(self, stem: str) -> bool:
        return any(not self._is_consonant(stem, i) for i in range(len(stem)))

    def _ends_double_consonant(self, word: str) -> bool:
        return len(word) >= 2 and word[-1] == word[-2] and self._is_consonant(word, len(word) - 1)

    def _ends_cvc(self, word: str) -> bool:
        if len(word) < 3:
            return False
        return (
            self._is_consonant(word, len(word) - 3)
            and not self._is_consonant(word, len(word) - 2)
            and self._is_consonant(word, len(word) - 1)
            and word[-1] not in "wxy"
        )

    def _apply_first_matching(self, word: str, rules) -> str:
        # Only the longest matching suffix is considered; a failed condition ends the step.
        for suffix, replacement, condition in rules:
            if word.endswith(suffix):
                stem = word[: len(word) - len(suffix)]
                return stem + replacement if condition(stem) else word
        return word

    def _step1a(self, word: str) -> str:
        if word.endswith("sses"):
            return word[:-2]
        if word.endswith("ies"):
            return word[:-2]
        if word.endswith("ss"):
            return word
        if word.endswith("s"):
            return word[:-1]
        return word

    def _step1b(self, word: str) -> str:
        if word.endswith("eed"):
            stem = word[:-3]
            return word[:-1] if self._measure(stem) > 0 else word

        for suffix in ("ed", "ing"):
            if word.endswith(suffix):
                stem = word[: len(word) - len(suffix)]
                if not self._has_vowel(stem):
                    return word
                return self._step1b_tidy(stem)
        return word

    def _step1b_tidy(self, stem: str) -> str:
        if stem.endswith(("at", "bl", "iz")):
            return stem + "e"
        if self._ends_double_consonant(stem) and stem[-1] not in "lsz":
            return stem[:-1]
        if self._measure(stem) == 1 and self._ends_cvc(stem):
            return stem + "e"
        return stem

    def _step1c(self, word: str) -> str:
        if word.endswith("y") and self._has_vowel(word[:-1]):
            return word[:-1] + "i"
        return word

    def _step5a(self, word: str) -> str:
        if not word.endswith("e"):
            return word
        stem = word[:-1]
        measure = self._measure(stem)
        if measure > 1 or (measure == 1 and not self._ends_cvc(stem)):
            return stem
        return word

    def _step5b(self, word: str) -> str:
        if self._measure(word) > 1 and self._ends_double_consonant(word) and word.endswith("l"):
            return word[:-1]
        return word

    def stem(self, word: str) -> str:
        if len(word) <= 2:
            return word
        word = self._step1a(word)
        word = self._step1b(word)
        word = self._step1c(word)
        word = self._apply_first_matching(word, self._step2_rules)
        word = self._apply_first_matching(word, self._step3_rules)
        word = self._apply_first_matching(word, self._step4_rules)
        word = self._step5a(word)
        word = self._step5b(word)
        return word


@dataclass(frozen=True)
class LemmaTable:
    exceptions: dict[str, str]
    suffix_rules: tuple[tuple[str, str], ...]

    def lemmatize(self, word: str) -> str:
        if word in self.exceptions:
            return self.exceptions[word]
        while True:
            reduced = self._apply_rules(word)
            if reduced == word:
                break
            word = reduced
        return self.exceptions.get(word, word)

    def _apply_rules(self, word: str) -> str:
        for suffix, replacement in self.suffix_rules:
            if not word.endswith(suffix):
                continue
            stem = word[: len(word) - len(suffix)]
            candidate = stem + replacement
            if len(candidate) < 3 or not any(ch in "aeiouy" for ch in candidate):
                return word
            if suffix == "s" and stem[-1] in "sui":
                return word
            if suffix in ("ing", "ed"):
                if suffix == "ed" and stem.endswith("e"):
                    return word
                return _tidy_verb_stem(candidate)
            return candidate
        return word


def _tidy_verb_stem(stem: str) -> str:
    if len(stem) >= 4 and stem[-1] == stem[-2] and stem[-1] not in "aeiouylsz":
        return stem[:-1]
    if (
        len(stem) == 3
        and stem[0] not in "aeiou"
        and stem[1] in "aeiou"
        and stem[2] not in "aeiouwxy"
    ):
        return stem + "e"
    return stem


@dataclass(frozen=True)
class SynonymLexicon:
    entries: dict[str, tuple[str, ...]]

    def lookup(self, token: str) -> list[str]:
        return list(self.entries.get(token.lower(), ()))


@dataclass(frozen=True)
class KeyboardMap:
    adjacency: dict[str, tuple[str, ...]]

    def neighbors(self, char: str) -> list[str]:
        return list(self.adjacency.get(char.lower(), ()))


@dataclass(frozen=True)
class DeterminerList:
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class ResourcePaths:
    synonyms: Optional[str] = None
    lemmas: Optional[str] = None
    lemma_rules: Optional[str] = None
    determiners: Optional[str] = None
    stopwords: Optional[str] = None
    keyboard: Optional[str] = None

    def is_default(self) -> bool:
        return all(value is None for value in vars(self).values())


@dataclass(frozen=True)
class TextResources:
    """Immutable bundle of every lexical resource the noising functions read."""

    lemmas: LemmaTable
    synonyms: SynonymLexicon
    keyboard: KeyboardMap
    determiners: DeterminerList
    stopwords: frozenset[str]
    stemmer: PorterStemmer = field(default_factory=PorterStemmer, compare=False)

    def stem(self, token: str) -> str:
        if not _is_ascii_word(token):
            return token
        return match_case(token, self.stemmer.stem(token.lower()))

    def lemmatize(self, token: str) -> str:
        if not _is_ascii_word(token):
            return token
        return match_case(token, self.lemmas.lemmatize(token.lower()))

    def synonyms_of(self, token: str) -> list[str]:
        return self.synonyms.lookup(token)

    def keyboard_neighbors(self, char: str) -> list[str]:
        return self.keyboard.neighbors(char)

    def is_stopword(self, token: str) -> bool:
        return token.lower() in self.stopwords


def _is_ascii_word(token: str) -> bool:
    return bool(token) and token.isascii() and token.isalpha()


def match_case(original: str, lowered: str) -> str:
    if original.islower():
        return lowered
    if original.isupper() and len(original) > 1:
        return lowered.upper()
    if original[0].isupper():
        return lowered[:1].upper() + lowered[1:]
    return lowered


def _read_lines(path: Path) -> Iterable[tuple[int, str]]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read resource file {path}: {exc}") from exc
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        yield number, line


def _check_token(token: str, path: Path, number: int) -> str:
    if not token or token != token.lower() or any(ch.isspace() for ch in token):
        raise DataError(f"{path.name}:{number}: tokens must be lowercase without whitespace: {token!r}")
    return token


def _split_pair(line: str, path: Path, number: int) -> tuple[str, str]:
    parts = line.split("\t")
    if len(parts) != 2:
        raise DataError(f"{path.name}:{number}: expected two TAB-separated fields")
    return parts[0].strip(), parts[1].strip()


def load_synonyms(path: Path) -> SynonymLexicon:
    entries: dict[str, tuple[str, ...]] = {}
    for number, line in _read_lines(path):
        token, raw_synonyms = _split_pair(line, path, number)
        _check_token(token, path, number)
        synonyms: list[str] = []
        for candidate in raw_synonyms.split(","):
            candidate = candidate.strip()
            if not candidate or candidate == token or candidate in synonyms:
                continue
            synonyms.append(_check_token(candidate, path, number))
        if not synonyms:
            raise DataError(f"{path.name}:{number}: {token!r} has no synonyms other than itself")
        entries[token] = tuple(synonyms)
    return SynonymLexicon(entries)


def load_lemma_table(exceptions_path: Path, rules_path: Path) -> LemmaTable:
    exceptions: dict[str, str] = {}
    for number, line in _read_lines(exceptions_path):
        form, lemma = _split_pair(line, exceptions_path, number)
        exceptions[_check_token(form, exceptions_path, number)] = _check_token(lemma, exceptions_path, number)

    rules: list[tuple[str, str]] = []
    for number, line in _read_lines(rules_path):
        parts = line.split("\t")
        if len(parts) > 2 or not parts[0].strip():
            raise DataError(f"{rules_path.name}:{number}: expected suffix TAB replacement")
        replacement = parts[1].strip() if len(parts) == 2 else ""
        rules.append((parts[0].strip(), replacement))

    for form, lemma in exceptions.items():
        if exceptions.get(lemma, lemma) != lemma:
            raise DataError(f"lemma {lemma!r} of {form!r} is itself mapped to {exceptions[lemma]!r}")
    return LemmaTable(exceptions=exceptions, suffix_rules=tuple(rules))


def load_word_list(path: Path) -> tuple[str, ...]:
    words: list[str] = []
    for number, line in _read_lines(path):
        word = _check_token(line.strip(), path, number)
        if word not in words:
            words.append(word)
    if not words:
        raise DataError(f"{path.name}: word list is empty")
    return tuple(words)


def qwerty_adjacency() -> dict[str, tuple[str, ...]]:
    pairs: set[tuple[str, str]] = set()
    for row in KEYBOARD_ROWS:
        for left, right in zip(row, row[1:]):
            pairs.add((left, right))
    for upper_index, lower_index, offsets in _ROW_CONTACTS:
        upper, lower = KEYBOARD_ROWS[upper_index], KEYBOARD_ROWS[lower_index]
        for column, key in enumerate(upper):
            for offset in offsets:
                target = column + offset
                if 0 <= target < len(lower):
                    pairs.add((key, lower[target]))
    return _symmetrise(pairs)


def load_keyboard(path: Path) -> dict[str, tuple[str, ...]]:
    pairs: set[tuple[str, str]] = set()
    for number, line in _read_lines(path):
        char, neighbors = _split_pair(line, path, number)
        if len(char) != 1:
            raise DataError(f"{path.name}:{number}: expected a single character, got {char!r}")
        for neighbor in neighbors.replace(",", ""):
            if neighbor != char and not neighbor.isspace():
                pairs.add((char.lower(), neighbor.lower()))
    return _symmetrise(pairs)


def _symmetrise(pairs: set[tuple[str, str]]) -> dict[str, tuple[str, ...]]:
    adjacency: dict[str, set[str]] = {}
    for first, second in pairs:
        adjacency.setdefault(first, set()).add(second)
        adjacency.setdefault(second, set()).add(first)
    return {char: tuple(sorted(neighbors)) for char, neighbors in sorted(adjacency.items())}


def load_resources(paths: Optional[ResourcePaths] = None) -> TextResources:
    paths = paths or ResourcePaths()
    if paths.is_default():
        return _default_resources()
    return _build_resources(paths)


@lru_cache(maxsize=1)
def _default_resources() -> TextResources:
    return _build_resources(ResourcePaths())


def _build_resources(paths: ResourcePaths) -> TextResources:
    def resolve(override: Optional[str], filename: str) -> Path:
        return Path(override) if override else RESOURCE_DIR / filename

    lemmas = load_lemma_table(resolve(paths.lemmas, "lemmas.tsv"), resolve(paths.lemma_rules, "lemma_rules.tsv"))
    synonyms = load_synonyms(resolve(paths.synonyms, "synonyms.tsv"))
    keyboard = load_keyboard(Path(paths.keyboard)) if paths.keyboard else qwerty_adjacency()
    determiners = DeterminerList(load_word_list(resolve(paths.determiners, "determiners.txt")))
    stopwords = frozenset(load_word_list(resolve(paths.stopwords, "stopwords.txt")))

    logger.debug(
        "Loaded text resources: %d synonyms, %d lemma exceptions, %d determiners",
        len(synonyms.entries),
        len(lemmas.exceptions),
        len(determiners.tokens),
    )
    return TextResources(
        lemmas=lemmas,
        synonyms=synonyms,
        keyboard=KeyboardMap(keyboard),
        determiners=determiners,
        stopwords=stopwords,
    )


def stem(token: str) -> str:
    return _default_resources().stem(token)


def lemmatize(token: str) -> str:
    return _default_resources().lemmatize(token)


def synonyms_of(token: str) -> list[str]:
    return _default_resources().synonyms_of(token)


def keyboard_neighbors(char: str) -> list[str]:
    return _default_resources().keyboard_neighbors(char)


WORD_CORE = re.compile(r"^(\W*)(\w+)(\W*)$")


def split_core(token: str) -> Optional[tuple[str, str, str]]:
    """(leading punctuation, word core, trailing punctuation), or None when the token has no single core."""
    match = WORD_CORE.match(token)
    return (match.group(1), match.group(2), match.group(3)) if match else None


def map_word_cores(text: str, transform: Callable[[str], str]) -> str:
    """Apply `transform` to the core of every whitespace token, keeping separators and punctuation."""
    parts = re.split(r"(\s+)", text)
    for index in range(0, len(parts), 2):
        pieces = split_core(parts[index]) if parts[index] else None
        if pieces is None:
            continue
        leading, core, trailing = pieces
        parts[index] = leading + transform(core) + trailing
    return "".join(parts)
