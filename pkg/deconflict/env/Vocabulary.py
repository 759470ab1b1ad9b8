"""Vocabulary module: The fixed toy vocabulary and its synonym groups.

Class
-----
Vocabulary
    Token table with verb and colour concepts, each carrying two or more
    surface tokens, plus filler tokens.
"""

# Third-party imports
import numpy as np

# Local imports
from deconflict.exceptions import VocabularyError

class Vocabulary:
    """Token table for instructions.

    An instruction is a bag of tokens: one verb token, one colour token and
    optionally filler tokens. The policy sums token embeddings, so token
    order never changes its output.

    Attributes
    ----------
    COLORS: list
        colour concept names, indexed by colour id
    RGB: dict
        colour concept name -> RGB triple used by the renderer
    SYNONYMS: dict
        concept name -> list of surface tokens, canonical token first
    FILLERS: list
        tokens that carry no concept
    tokens: list
        every surface token, indexed by token id

    Methods
    -------
    token_id(token)
        return the integer id of a surface token
    concept_of(token)
        return the concept a surface token belongs to
    bag(tokens)
        return the token-count vector of an instruction
    """

    VERB = "go"
    COLORS = ["red", "green", "blue", "yellow", "purple", "cyan"]
    RGB = {
        "red": (1.0, 0.0, 0.0),
        "green": (0.0, 1.0, 0.0),
        "blue": (0.0, 0.0, 1.0),
        "yellow": (1.0, 1.0, 0.0),
        "purple": (1.0, 0.0, 1.0),
        "cyan": (0.0, 1.0, 1.0),
    }
    SYNONYMS = {
        "go": ["go", "move", "head"],
        "red": ["red", "crimson"],
        "green": ["green", "lime"],
        "blue": ["blue", "azure"],
        "yellow": ["yellow", "gold"],
        "purple": ["purple", "violet"],
        "cyan": ["cyan", "teal"],
    }
    FILLERS = ["please"]

    def __init__(self, synonyms=None):
        """
        Parameters
        ----------
        synonyms: dict
            optional replacement for SYNONYMS (concept -> surface tokens)
        """

        self.synonyms = synonyms if synonyms is not None else self.SYNONYMS
        self.tokens = []
        self._concept = {}
        for concept, surface in self.synonyms.items():
            for token in surface:
                self.tokens.append(token)
                self._concept[token] = concept
        for token in self.FILLERS:
            self.tokens.append(token)
            self._concept[token] = None
        self._ids = { token: i for i, token in enumerate(self.tokens) }

    def __len__(self):
        return len(self.tokens)

    def token_id(self, token):
        """Return the integer id of token."""

        try:
            return self._ids[token]
        except KeyError:
            raise VocabularyError(f"unknown token: {token!r}") from None

    def concept_of(self, token):
        """Return the concept of token (None for fillers)."""

        self.token_id(token)
        return self._concept[token]

    def canonical(self, concept):
        """Return the canonical surface token of concept."""

        return self.synonyms[concept][0]

    def synonym(self, token, rng=None):
        """Return a surface token of the same concept other than token.

        The first alternative is used when rng is None.
        """

        concept = self.concept_of(token)
        if concept is None:
            return token
        others = [t for t in self.synonyms[concept] if t != token]
        if not others:
            return token
        if rng is None:
            return others[0]
        return others[int(rng.integers(len(others)))]

    def surface(self, concept, rng):
        """Return a random surface token of concept."""

        options = self.synonyms[concept]
        return options[int(rng.integers(len(options)))]

    def bag(self, tokens):
        """Return the float64 token-count vector of tokens."""

        counts = np.zeros(len(self.tokens), dtype=np.float64)
        for token in tokens:
            counts[self.token_id(token)] += 1.0
        return counts

    def concepts(self, tokens):
        """Return the (verb concept, colour concept) pair of an instruction."""

        found = [self.concept_of(t) for t in tokens]
        found = [c for c in found if c is not None]
        verbs = [c for c in found if c not in self.COLORS]
        colors = [c for c in found if c in self.COLORS]
        return (verbs[0] if verbs else None, colors[0] if colors else None)
