import random
import shutil

import pytest
import yaml

from core_model import PixelPoint
from errors import ConfigurationError
from prompt_kit import (CUSTOM_PLACEHOLDER, FEEDBACK_TEMPLATES, SYSTEM_VARIANTS, ParseStatus, PromptKit,
                        extract_decision)

from conftest import PROJECT_ROOT

BASELINE_FEEDBACK = ("Your previous prediction was (310,475), shown as a red cross on the image. "
                     "This was not correct. Please predict the correct coordinate.")


def scan_pairs(text):
    """Independent scanner: every (a,b) / [a,b] pair of non-negative decimals, left to right"""
    def skip_spaces(i):
        while i < len(text) and text[i].isspace():
            i += 1
        return i

    def number(i):
        start = i
        while i < len(text) and '0' <= text[i] <= '9':
            i += 1
        if i == start:
            return None, start
        if i + 1 < len(text) and text[i] == '.' and '0' <= text[i + 1] <= '9':
            i += 1
            while i < len(text) and '0' <= text[i] <= '9':
                i += 1
        return float(text[start:i]), i

    pairs = []
    i = 0
    while i < len(text):
        if text[i] in '([':
            j = skip_spaces(i + 1)
            x, j = number(j)
            if x is not None:
                j = skip_spaces(j)
                if j < len(text) and text[j] == ',':
                    y, k = number(skip_spaces(j + 1))
                    if y is not None:
                        k = skip_spaces(k)
                        if k < len(text) and text[k] in ')]':
                            pairs.append((x, y))
                            i = k + 1
                            continue
        i += 1
    return pairs


HAND_WRITTEN_CASES = [
    "I think (100,200) but actually (310,475)",
    "the answer is (x,y)",
    "( 12.5 , 7 )",
    "(310,475)",
    "Final answer:\n(310, 475)",
    "[640, 360]",
    "no coordinates here",
    "",
    "(1,2)(3,4)(5,6)",
    "(-5, 10)",
    "(10, -5) then (7,8)",
    "(12.,3)",
    "(1.5.2,3)",
    "((1,2))",
    "[[3, 4]]",
    "(3, 4] mixed brackets",
    "coordinate: (0,0)",
    "(0.25,0.75)",
    "(   1   ,   2   )",
    "(1,2,3)",
    "(a,b) and (c,d)",
    "Step 1: (100,100). Step 2: refine to (105.5, 99.25).",
    "Last attempt: [310, 475]. New guess (300,470)",
    "(1 2)",
    "(1;2)",
]

FRAGMENTS = ['(x,y)', 'the cursor', '(', ')', ',', '[', ']', ' ', '\n', '-', '.', 'between', '12', '3.5',
             '0', '(7,', '8)', '[9 ,10]', '( 4 , 5 )', 'abc', '(1.25,2)', 'line 3']


def generated_cases(count=25, seed=20):
    rng = random.Random(seed)
    return [''.join(rng.choice(FRAGMENTS) for _ in range(rng.randint(1, 12))) for _ in range(count)]


PARSER_CORPUS = HAND_WRITTEN_CASES + generated_cases()


def test_parser_corpus_size():
    assert len(PARSER_CORPUS) == 50


@pytest.mark.parametrize('text', PARSER_CORPUS)
def test_last_match_agrees_with_scanner(text):
    outcome = extract_decision(text)
    pairs = scan_pairs(text)
    if not pairs:
        assert outcome.status is ParseStatus.PARSE_FAILURE
        assert outcome.point is None
    else:
        assert outcome.status is ParseStatus.PARSED
        assert (outcome.point.x, outcome.point.y) == pairs[-1]


def test_decision_examples():
    assert extract_decision("I think (100,200) but actually (310,475)").point == PixelPoint(310, 475)
    assert extract_decision("the answer is (x,y)").status is ParseStatus.PARSE_FAILURE
    outcome = extract_decision("( 12.5 , 7 )")
    assert outcome.point == PixelPoint(12.5, 7)
    assert outcome.matched_span == (0, 12)
    assert outcome.raw_text == "( 12.5 , 7 )"


def test_negative_pairs_are_not_matched():
    assert extract_decision("(-5, 10)").status is ParseStatus.PARSE_FAILURE


def test_pair_too_large_for_a_float_is_a_parse_failure():
    outcome = extract_decision("(" + "9" * 400 + ",5)")
    assert outcome.status is ParseStatus.PARSE_FAILURE
    assert outcome.point is None
    assert extract_decision("(" + "9" * 300 + ",5)").status is ParseStatus.PARSED


def test_appended_pair_always_wins():
    rng = random.Random(5)
    for text in PARSER_CORPUS:
        a, b = rng.randint(0, 2000), rng.randint(0, 2000)
        assert extract_decision(f"{text} ({a},{b})").point == PixelPoint(a, b)


def test_baseline_system_prompt(prompt_kit):
    assert "height 1344 and width 1344" in prompt_kit.render_system_prompt('baseline', 1344, 1344)


def test_minimal_system_prompt(prompt_kit):
    assert "800x600 screenshot" in prompt_kit.render_system_prompt('minimal', 800, 600)


@pytest.mark.parametrize('variant', [v for v in SYSTEM_VARIANTS if v != 'custom'])
def test_system_prompts_have_no_open_slots(prompt_kit, variant):
    text = prompt_kit.render_system_prompt(variant, 1344, 768)
    assert '{width}' not in text and '{height}' not in text
    template = prompt_kit.system_templates[variant]
    slots = template.count('{width}') * len('{width}') + template.count('{height}') * len('{height}')
    digits = template.count('{width}') * len('1344') + template.count('{height}') * len('768')
    assert len(text) == len(template) - slots + digits


def test_custom_prompt_requires_text(prompt_kit):
    with pytest.raises(ConfigurationError):
        prompt_kit.render_system_prompt('custom', 1344, 1344)
    with pytest.raises(ConfigurationError):
        prompt_kit.render_system_prompt('custom', 1344, 1344, custom_text='   ')
    text = prompt_kit.render_system_prompt('custom', 1344, 1344, custom_text='Find the caret.')
    assert 'Find the caret.' in text
    assert CUSTOM_PLACEHOLDER not in text


def test_unknown_variant(prompt_kit):
    with pytest.raises(ConfigurationError):
        prompt_kit.render_system_prompt('verbose', 10, 10)
    with pytest.raises(ConfigurationError):
        prompt_kit.render_feedback('harsh', 1, 2)


def test_baseline_feedback_verbatim(prompt_kit):
    assert prompt_kit.render_feedback('baseline', 310, 475) == BASELINE_FEEDBACK


def test_spatial_feedback(prompt_kit):
    text = prompt_kit.render_feedback('spatial', 0, 0)
    assert text.startswith("Your previous prediction (0,0) is marked with a red cross.")
    assert prompt_kit.render_feedback('spatial', 0, 0) == text


def test_feedback_rounds_half_away_from_zero(prompt_kit):
    assert '(311,476)' in prompt_kit.render_feedback('baseline', 310.5, 475.5)


def test_feedback_message_carries_last_attempt(prompt_kit):
    message = prompt_kit.render_feedback_message('baseline', 310, 475)
    assert message == BASELINE_FEEDBACK + "\nLast attempt: [310, 475]"


def test_checksums_match_shipped_files(prompt_kit):
    with open(PROJECT_ROOT / 'config' / 'prompts' / 'checksums.yaml', encoding='utf-8') as f:
        expected = yaml.safe_load(f)
    assert prompt_kit.checksums == expected
    assert set(prompt_kit.feedback_templates) == set(FEEDBACK_TEMPLATES)


def test_edited_template_fails_checksum(tmp_path):
    prompts = tmp_path / 'prompts'
    shutil.copytree(PROJECT_ROOT / 'config' / 'prompts', prompts)
    path = prompts / 'system' / 'minimal.txt'
    path.write_text(path.read_text(encoding='utf-8').replace('pixel', 'pixels'), encoding='utf-8')
    with pytest.raises(ConfigurationError, match='minimal'):
        PromptKit(prompts)
    assert PromptKit(prompts, verify_checksums=False).system_templates['minimal']
