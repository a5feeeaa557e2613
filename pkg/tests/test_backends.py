import base64
import json

import pytest
import requests

from backends import (ChatTurn, MockOracleBackend, MockOracleConfig, OpenAICompatibleBackend, TokenBucket,
                      build_backend, request_digest, validate_history)
from core_model import PixelPoint
from errors import (BackendAuthError, BackendTransportError, ConfigurationError, InvalidArgumentError,
                    TransientBackendError)
from prompt_kit import ParseStatus, extract_decision

PNG = b'\x89PNG fake image bytes'


def http_config(**overrides):
    config = {'kind': 'http', 'endpoint': 'http://127.0.0.1:9/v1', 'model': 'vision-model',
              'api_key_env': 'TEST_GROUNDING_KEY', 'request_timeout_s': 5, 'max_attempts': 4,
              'backoff_initial_s': 0.0}
    config.update(overrides)
    return config


def completion(status, text='(1,2)'):
    response = requests.Response()
    response.status_code = status
    body = {'choices': [{'message': {'role': 'assistant', 'content': text}}]} if status == 200 else {'error': 'x'}
    response._content = json.dumps(body).encode('utf-8')
    return response


def history(*user_texts):
    turns = [ChatTurn('system', 'You locate cursors.')]
    for index, text in enumerate(user_texts):
        if index:
            turns.append(ChatTurn('assistant', 'previous'))
        turns.append(ChatTurn('user', text, PNG))
    return turns


@pytest.fixture
def backend(monkeypatch):
    monkeypatch.setenv('TEST_GROUNDING_KEY', 'sk-secret-value')
    return OpenAICompatibleBackend(http_config())


def test_stub_echo(mocker, backend):
    post = mocker.patch.object(requests.Session, 'post', return_value=completion(200, '(1,2)'))
    assert backend.complete(history('Find it')) == '(1,2)'
    url = post.call_args.args[0]
    assert url == 'http://127.0.0.1:9/v1/chat/completions'
    assert post.call_args.kwargs['headers']['Authorization'] == 'Bearer sk-secret-value'


def test_rate_limited_twice_then_success(mocker, backend):
    post = mocker.patch.object(requests.Session, 'post',
                               side_effect=[completion(429), completion(429), completion(200, '(5,6)')])
    assert backend.complete(history('Find it')) == '(5,6)'
    assert post.call_count == 3


def test_exhausted_retries_raise_transport_error(mocker, backend):
    post = mocker.patch.object(requests.Session, 'post', return_value=completion(503))
    with pytest.raises(BackendTransportError):
        backend.complete(history('Find it'))
    assert post.call_count == 4


def test_connection_errors_are_retried(mocker, backend):
    mocker.patch.object(requests.Session, 'post',
                        side_effect=[requests.ConnectionError('refused'), completion(200, '(9,9)')])
    assert backend.complete(history('Find it')) == '(9,9)'


def test_auth_failure_is_fatal_and_not_retried(mocker, backend):
    post = mocker.patch.object(requests.Session, 'post', return_value=completion(401))
    with pytest.raises(BackendAuthError):
        backend.complete(history('Find it'))
    assert post.call_count == 1
    assert issubclass(BackendAuthError, ConfigurationError)


def test_one_image_per_user_turn(mocker, backend):
    post = mocker.patch.object(requests.Session, 'post', return_value=completion(200))
    backend.complete(history('first', 'second'))
    messages = post.call_args.kwargs['json']['messages']
    assert [m['role'] for m in messages] == ['system', 'user', 'assistant', 'user']
    for message in messages:
        if message['role'] == 'user':
            images = [part for part in message['content'] if part['type'] == 'image_url']
            assert len(images) == 1
            url = images[0]['image_url']['url']
            assert url.startswith('data:image/png;base64,')
            assert base64.b64decode(url.split(',', 1)[1]) == PNG
        else:
            assert isinstance(message['content'], str)


def test_credentials_stay_out_of_digest_and_identity(backend):
    digest = request_digest(history('Find it'), backend.model)
    assert 'sk-secret-value' not in digest
    assert 'sk-secret-value' not in json.dumps(backend.identity)


def test_digest_depends_on_image_bytes():
    a = [ChatTurn('system', 's'), ChatTurn('user', 'u', b'one')]
    b = [ChatTurn('system', 's'), ChatTurn('user', 'u', b'two')]
    assert request_digest(a) != request_digest(b)
    assert request_digest(a) == request_digest(list(a))


def test_missing_endpoint_is_configuration_error():
    with pytest.raises(ConfigurationError):
        OpenAICompatibleBackend(http_config(endpoint=None))


@pytest.mark.parametrize('turns', [
    [ChatTurn('user', 'no system')],
    [ChatTurn('system', 'a'), ChatTurn('system', 'b')],
    [ChatTurn('system', 'a', PNG)],
    [ChatTurn('system', 'a'), ChatTurn('assistant', 'b', PNG)],
])
def test_history_validation(turns):
    with pytest.raises(InvalidArgumentError):
        validate_history(turns)


def mock(kind, **kwargs):
    return MockOracleBackend(MockOracleConfig(kind=kind, **kwargs), {'s1': PixelPoint(100, 200)})


def test_perfect_oracle():
    assert extract_decision(mock('perfect').complete(history('go'), 's1')).point == PixelPoint(100, 200)


def test_constant_offset_every_turn():
    backend = mock('constant_offset', offset=(50.0, -10.0))
    for turns in (history('go'), history('go', 'again')):
        assert extract_decision(backend.complete(turns, 's1')).point == PixelPoint(150, 190)


def test_parse_breaker():
    outcome = extract_decision(mock('parse_breaker').complete(history('go'), 's1'))
    assert outcome.status is ParseStatus.PARSE_FAILURE


def test_seeded_noise_is_reproducible_and_turn_dependent():
    first = mock('seeded_noise', noise_sigma=(20.0, 10.0), seed=9)
    second = mock('seeded_noise', noise_sigma=(20.0, 10.0), seed=9)
    turns = history('go')
    assert first.complete(turns, 's1') == second.complete(turns, 's1')
    assert first.complete(turns, 's1') != first.complete(history('go', 'again'), 's1')
    assert first.complete(turns, 's1') != mock('seeded_noise', seed=10).complete(turns, 's1')


def test_feedback_aware_reads_only_the_feedback_text():
    backend = mock('feedback_aware', offset=(40.0, 0.0), convergence=0.5)
    errors = []
    point = extract_decision(backend.complete(history('go'), 's1')).point
    errors.append(point.x - 100)
    texts = ['go']
    for _ in range(4):
        texts.append(f"Your previous prediction was ({point.x:g},{point.y:g}).\nLast attempt: [{point.x:g}, {point.y:g}]")
        point = extract_decision(backend.complete(history(*texts), 's1')).point
        errors.append(point.x - 100)
    assert errors == [40, 20, 10, 5, 2.5]


def test_feedback_aware_without_coordinates_restarts_from_offset():
    backend = mock('feedback_aware', offset=(40.0, 0.0))
    point = extract_decision(backend.complete(history('go', 'no numbers here'), 's1')).point
    assert point == PixelPoint(140, 200)


def test_unknown_sample_is_rejected():
    with pytest.raises(InvalidArgumentError):
        mock('perfect').complete(history('go'), 'nope')


def test_mock_config_validation():
    with pytest.raises(ConfigurationError):
        MockOracleConfig(kind='oracle')
    with pytest.raises(ConfigurationError):
        MockOracleConfig(kind='feedback_aware', convergence=1.0)


def test_build_backend_selects_mock():
    backend = build_backend({'kind': 'mock', 'mock': {'kind': 'perfect'}}, seed=3, targets={})
    assert backend.identity == {'kind': 'mock', 'model': 'mock-perfect', 'seed': 3}


def test_token_bucket_allows_a_burst_then_waits(mocker):
    sleep = mocker.patch('backends.time.sleep')
    bucket = TokenBucket(rate=1000.0, capacity=2)
    bucket.acquire()
    bucket.acquire()
    assert sleep.call_count == 0


def test_transient_error_is_a_transport_error():
    assert issubclass(TransientBackendError, BackendTransportError)
