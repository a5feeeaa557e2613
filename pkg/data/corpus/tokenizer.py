import re

TOKEN_RE = re.compile(r"\s*(?:(\d+\.?\d*)|(\w+)|(.))")
KEYWORDS = {"if", "else", "while", "return", "def"}


class Token:
    def __init__(self, kind, text, pos):
        self.kind = kind
        self.text = text
        self.pos = pos

    def __repr__(self):
        return f"Token({self.kind!r}, {self.text!r}, {self.pos})"


def tokenize(source):
    tokens = []
    pos = 0
    while pos < len(source):
        match = TOKEN_RE.match(source, pos)
        if match is None or match.end() == pos:
            break
        number, name, symbol = match.groups()
        if number:
            tokens.append(Token("number", number, match.start(1)))
        elif name:
            kind = "keyword" if name in KEYWORDS else "name"
            tokens.append(Token(kind, name, match.start(2)))
        elif symbol and not symbol.isspace():
            tokens.append(Token("op", symbol, match.start(3)))
        pos = match.end()
    return tokens


def count_kinds(tokens):
    counts = {}
    for token in tokens:
        counts[token.kind] = counts.get(token.kind, 0) + 1
    return counts
