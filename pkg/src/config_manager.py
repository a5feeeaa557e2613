"""
Configuration Manager
Handles loading and managing configuration from YAML files and environment variables
"""

import copy
import os
import zlib
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv

from errors import ConfigurationError


DEFAULT_CONFIG: Dict[str, Any] = {
    'seed': 1234,
    'generator': {
        'corpus': [],
        'output_dir': 'data/datasets/default',
        'composition': {'character': 171, 'word': 48, 'line': 38},
    },
    'layout': {
        'image_width': 1344,
        'image_height': 1344,
        'origin_x': 72,
        'origin_y': 40,
        'char_width': 12,
        'line_height': 24,
        'gutter_width': 60,
        'caret_width': 2,
        'font_family': 'SynthMono 5x8',
        'font_size': 14,
        'theme': {
            'foreground': [212, 212, 212],
            'background': [30, 30, 30],
            'gutter_background': [37, 37, 38],
            'gutter_foreground': [133, 133, 133],
        },
    },
    'collector': {
        'host': '127.0.0.1',
        'port': 54321,
        'settle_delay_ms': 80,
        'request_timeout_ms': 3000,
        'eof_repeat_threshold': 3,
        'max_restarts': 1,
        'output_dir': 'data/collections',
        'window_geometry': [0, 0, 1344, 1344],
        'device_pixel_ratio': 1.0,
        'fault_rate': 0.0,
        'fault_seed': None,
    },
    'prompting': {
        'system_prompt': 'baseline_cot',
        'feedback_template': 'baseline',
        'custom_prompt': None,
    },
    'overlay': {
        'color': [255, 0, 0],
        'alpha': 0.6,
        'arm_fraction': 0.05,
        'stroke_width': 3,
    },
    'harness': {
        'dataset': 'data/datasets/default/samples.jsonl',
        'output_dir': 'runs/latest',
        'max_turns': 2,
        'tolerance_x': None,
        'tolerance_y': None,
        'parallelism': 4,
        'save_turn_images': False,
    },
    'backend': {
        'kind': 'http',
        'endpoint': None,
        'model': None,
        'api_key_env': 'GROUNDING_API_KEY',
        'request_timeout_s': 60,
        'max_attempts': 4,
        'backoff_initial_s': 0.5,
        'requests_per_second': None,
        'mock': {
            'kind': 'perfect',
            'offset': [40.0, 0.0],
            'noise_sigma': [20.0, 10.0],
            'convergence': 0.5,
        },
    },
    'logging': {
        'level': 'INFO',
        'file': 'logs/grounding.log',
        'max_file_size': '10 MB',
    },
}

# Keys that hold filesystem paths, resolved against the project root
PATH_KEYS = (
    'generator.output_dir',
    'collector.output_dir',
    'harness.dataset',
    'harness.output_dir',
    'logging.file',
)

MOCK_KINDS = ('perfect', 'constant_offset', 'seeded_noise', 'feedback_aware', 'parse_breaker')


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def derive_seed(seed: int, component: str) -> int:
    """
    Derive a component seed from the top-level run seed

    Args:
        seed: Top-level seed
        component: Component name ("generator", "collector", "mock", ...)

    Returns:
        A 32-bit seed that only depends on (seed, component)
    """
    return (int(seed) * 1_000_003 + zlib.crc32(component.encode('utf-8'))) % (2 ** 32)


class ConfigManager:
    """Manages application configuration"""

    def __init__(self, config_path: Optional[str] = None, project_root: Optional[Path] = None):
        """
        Initialize configuration manager

        Args:
            config_path: Path to configuration file (default: config/config.yaml)
            project_root: Directory relative paths are resolved against
        """
        self.project_root = Path(project_root) if project_root else Path(__file__).parent.parent

        # Load environment variables
        env_path = self.project_root / '.env'
        if env_path.exists():
            load_dotenv(env_path)

        if config_path is None:
            config_path = self.project_root / 'config' / 'config.yaml'

        self.config_path = Path(config_path)
        self.config = _deep_merge(DEFAULT_CONFIG, self._load_config())

        # Override with environment variables
        self._override_with_env_vars()

    def _load_config(self) -> Dict[str, Any]:
        """Load configuration from YAML file"""
        if not self.config_path.exists():
            return {}
        try:
            with open(self.config_path, 'r', encoding='utf-8') as f:
                return yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Invalid YAML in configuration file: {e}")

    def _override_with_env_vars(self):
        """Override configuration with environment variables"""
        if os.getenv('GROUNDING_ENDPOINT'):
            self.config['backend']['endpoint'] = os.getenv('GROUNDING_ENDPOINT')
        if os.getenv('GROUNDING_MODEL'):
            self.config['backend']['model'] = os.getenv('GROUNDING_MODEL')

    def apply_overrides(self, overrides: Dict[str, Any]):
        """
        Apply dotted-key overrides coming from the command line

        Args:
            overrides: Mapping like {"harness.max_turns": 3}; None values are ignored
        """
        for key, value in overrides.items():
            if value is None:
                continue
            node = self.config
            parts = key.split('.')
            for part in parts[:-1]:
                node = node.setdefault(part, {})
            node[parts[-1]] = value

    def resolve_path(self, value: Optional[str]) -> Optional[Path]:
        """Resolve a configured path against the project root"""
        if value is None:
            return None
        path = Path(value)
        return path if path.is_absolute() else self.project_root / path

    def get_generator_config(self) -> Dict[str, Any]:
        """Get dataset generator configuration"""
        generator_config = copy.deepcopy(self.config.get('generator', {}))
        generator_config['corpus'] = [str(self.resolve_path(p)) for p in generator_config.get('corpus', [])]
        generator_config['output_dir'] = str(self.resolve_path(generator_config['output_dir']))
        return generator_config

    def get_layout_config(self) -> Dict[str, Any]:
        """Get synthetic editor layout configuration"""
        return copy.deepcopy(self.config.get('layout', {}))

    def get_collector_config(self) -> Dict[str, Any]:
        """Get collector bridge configuration"""
        collector_config = copy.deepcopy(self.config.get('collector', {}))
        collector_config['output_dir'] = str(self.resolve_path(collector_config['output_dir']))
        return collector_config

    def get_prompting_config(self) -> Dict[str, Any]:
        """Get prompt selection"""
        return copy.deepcopy(self.config.get('prompting', {}))

    def get_overlay_config(self) -> Dict[str, Any]:
        """Get feedback overlay configuration"""
        return copy.deepcopy(self.config.get('overlay', {}))

    def get_harness_config(self) -> Dict[str, Any]:
        """Get evaluation harness configuration"""
        harness_config = copy.deepcopy(self.config.get('harness', {}))
        harness_config['dataset'] = str(self.resolve_path(harness_config['dataset']))
        harness_config['output_dir'] = str(self.resolve_path(harness_config['output_dir']))
        return harness_config

    def get_backend_config(self) -> Dict[str, Any]:
        """Get model backend configuration (the API key itself stays in the environment)"""
        return copy.deepcopy(self.config.get('backend', {}))

    def get_logging_config(self) -> Dict[str, Any]:
        """Get logging configuration"""
        log_config = copy.deepcopy(self.config.get('logging', {}))

        # Convert relative paths to absolute paths
        if log_config.get('file'):
            log_config['file'] = str(self.resolve_path(log_config['file']))
            Path(log_config['file']).parent.mkdir(parents=True, exist_ok=True)

        return log_config

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value by key"""
        keys = key.split('.')
        value = self.config

        for k in keys:
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default

        return value

    def resolved(self) -> Dict[str, Any]:
        """Fully resolved configuration, with path keys made absolute"""
        snapshot = copy.deepcopy(self.config)
        for key in PATH_KEYS:
            section, name = key.split('.')
            if snapshot.get(section, {}).get(name) is not None:
                snapshot[section][name] = str(self.resolve_path(snapshot[section][name]))
        return snapshot

    def validate_config(self, command: Optional[str] = None) -> bool:
        """
        Validate that the configuration needed by a command is present

        Args:
            command: One of generate, collect, eval, report; None checks everything

        Returns:
            True when valid

        Raises:
            ConfigurationError: listing every problem found
        """
        problems = []

        if command in (None, 'generate'):
            composition = self.get('generator.composition', {}) or {}
            for name, count in composition.items():
                if name not in ('character', 'word', 'line'):
                    problems.append(f"generator.composition.{name} is not a granularity")
                elif not isinstance(count, int) or count < 0:
                    problems.append(f"generator.composition.{name} must be a non-negative integer")

        if command in (None, 'collect'):
            for key in ('settle_delay_ms', 'request_timeout_ms'):
                if not self.get(f'collector.{key}') or self.get(f'collector.{key}') <= 0:
                    problems.append(f"collector.{key} must be > 0")
            if (self.get('collector.eof_repeat_threshold') or 0) < 2:
                problems.append("collector.eof_repeat_threshold must be >= 2")
            if (self.get('collector.device_pixel_ratio') or 0) <= 0:
                problems.append("collector.device_pixel_ratio must be > 0")

        if command in (None, 'eval'):
            if (self.get('harness.max_turns') or 0) < 1:
                problems.append("harness.max_turns must be >= 1")
            for key in ('tolerance_x', 'tolerance_y'):
                value = self.get(f'harness.{key}')
                if value is not None and value < 0:
                    problems.append(f"harness.{key} must be >= 0")
            if self.get('prompting.system_prompt') == 'custom' and not self.get('prompting.custom_prompt'):
                problems.append("prompting.custom_prompt is required for the custom system prompt")
            kind = self.get('backend.kind')
            if kind == 'http':
                for key in ('endpoint', 'model'):
                    if not self.get(f'backend.{key}'):
                        problems.append(f"backend.{key} is required for the http backend")
            elif kind == 'mock':
                if self.get('backend.mock.kind') not in MOCK_KINDS:
                    problems.append(f"backend.mock.kind must be one of {', '.join(MOCK_KINDS)}")
            else:
                problems.append("backend.kind must be 'http' or 'mock'")

        if problems:
            raise ConfigurationError(f"Invalid configuration: {'; '.join(problems)}")

        return True

    def save_config(self, output_path: Optional[str] = None):
        """Save current configuration to file"""
        if output_path is None:
            output_path = self.config_path

        with open(output_path, 'w', encoding='utf-8') as f:
            yaml.dump(self.config, f, default_flow_style=False, indent=2)
