#!/usr/bin/env python3
"""
Cursor Grounding Harness
Main entry point: generate, collect, eval and report subcommands
"""

import argparse
import asyncio
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from loguru import logger

# Add the src directory to the Python path
sys.path.append(str(Path(__file__).parent))

from backends import build_backend
from collector import CollectorConfig, run_collection
from config_manager import ConfigManager, derive_seed
from dataset_manager import file_checksum, read_samples
from errors import EmptyInputError, GroundingError
from feedback_loop import FeedbackLoop, HarnessConfig, default_tolerances, write_traces
from metrics import aggregate, write_metrics
from overlay import OverlaySpec
from prompt_kit import FEEDBACK_TEMPLATES, SYSTEM_VARIANTS, PromptKit
from report import (METRICS_NAME, TABLE_NAME, TRACES_NAME, RunManifest, compare_runs,
                    format_table, run_table)
from synth_editor import DatasetGenerator, EditorLayout, load_generator_layout

LOG_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level} | {name}:{function}:{line} | {message}"


class GroundingApp:
    """Main application class that ties the commands to one configuration"""

    def __init__(self, config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None):
        self.config = ConfigManager(config_path)
        self.config.apply_overrides(overrides or {})

        # Setup logging
        self._setup_logging()

    def _setup_logging(self):
        """Configure logging based on config settings"""
        log_config = self.config.get_logging_config()

        # Remove default handler
        logger.remove()

        # Add file handler
        logger.add(
            log_config['file'],
            level=log_config['level'],
            rotation=log_config['max_file_size'],
            format=LOG_FORMAT
        )

        # Add console handler
        logger.add(
            sys.stderr,
            level=log_config['level'],
            format="<green>{time:HH:mm:ss}</green> | <level>{level}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> | <level>{message}</level>"
        )

    def _add_run_log(self, output_dir: Path) -> int:
        """Per-run log file inside the artifact directory"""
        output_dir.mkdir(parents=True, exist_ok=True)
        return logger.add(output_dir / 'run.log', level=self.config.get('logging.level', 'INFO'),
                          format=LOG_FORMAT, mode='w')

    @property
    def seed(self) -> int:
        return int(self.config.get('seed', 0))

    def _layout(self) -> EditorLayout:
        return EditorLayout.from_config(self.config.get_layout_config())

    def generate(self) -> Path:
        """Render the corpus and write an eval dataset; returns the samples file"""
        self.config.validate_config('generate')
        generator_config = self.config.get_generator_config()
        output_dir = Path(generator_config['output_dir'])
        sink = self._add_run_log(output_dir)
        try:
            manifest = RunManifest(command='generate', config=self.config.resolved(), seed=self.seed)
            generator = DatasetGenerator(self._layout(), derive_seed(self.seed, 'generator'))
            dataset = generator.generate_dataset(generator_config['corpus'], generator_config['composition'],
                                                 output_dir)
            manifest.dataset_checksum = file_checksum(dataset.samples_path)
            manifest.finish()
            manifest.save(output_dir)
            logger.info(f"Dataset checksum {manifest.dataset_checksum}")
            return dataset.samples_path
        finally:
            logger.remove(sink)

    def collect(self) -> List:
        """Run the bridge traversal over the corpus; returns one result per file"""
        self.config.validate_config('collect')
        collector_config = self.config.get_collector_config()
        if collector_config.get('fault_seed') is None:
            collector_config['fault_seed'] = derive_seed(self.seed, 'collector')
        config = CollectorConfig.from_config(collector_config)
        output_dir = Path(config.output_dir)
        corpus = self.config.get_generator_config()['corpus']
        if not corpus:
            raise EmptyInputError("No corpus files configured for collection")

        sink = self._add_run_log(output_dir)
        try:
            manifest = RunManifest(command='collect', config=self.config.resolved(), seed=self.seed)
            results = asyncio.run(run_collection(config, self._layout(), corpus, output_dir))
            for result in results:
                if result.error:
                    logger.warning(f"{result.file_id}: not collected ({result.error})")
                    continue
                logger.info(f"{result.file_id}: {result.records_written}/{result.char_count + 1} stops, "
                            f"{len(result.skipped)} skipped ({result.timeouts} timeouts), "
                            f"truncated={result.truncated}, restarts={result.restarts}")
            manifest.finish()
            manifest.save(output_dir)
            return results
        finally:
            logger.remove(sink)

    def _harness_config(self, dataset_path: Path, output_dir: Path) -> HarnessConfig:
        harness = self.config.get_harness_config()
        prompting = self.config.get_prompting_config()
        tolerance_x, tolerance_y = harness.get('tolerance_x'), harness.get('tolerance_y')
        if tolerance_x is None or tolerance_y is None:
            layout = load_generator_layout(dataset_path) or self._layout()
            default_x, default_y = default_tolerances(layout)
            tolerance_x = default_x if tolerance_x is None else tolerance_x
            tolerance_y = default_y if tolerance_y is None else tolerance_y
            logger.info(f"Tolerances from layout: x={tolerance_x}, y={tolerance_y}")
        return HarnessConfig(
            max_turns=int(harness['max_turns']),
            tolerance_x=float(tolerance_x),
            tolerance_y=float(tolerance_y),
            system_prompt=prompting['system_prompt'],
            feedback_template=prompting['feedback_template'],
            custom_prompt=prompting.get('custom_prompt'),
            parallelism=int(harness['parallelism']),
            save_turn_images=bool(harness.get('save_turn_images')),
            output_dir=str(output_dir),
        )

    def eval(self) -> Path:
        """Run the feedback loop over the dataset; returns the run directory"""
        self.config.validate_config('eval')
        harness = self.config.get_harness_config()
        dataset_path = Path(harness['dataset'])
        output_dir = Path(harness['output_dir'])

        sink = self._add_run_log(output_dir)
        try:
            dataset = read_samples(dataset_path)
            if not dataset.samples:
                raise EmptyInputError(f"No samples in {dataset_path}")
            logger.info(f"Loaded {len(dataset.samples)} samples from {dataset_path}")

            harness_config = self._harness_config(dataset_path, output_dir)
            prompt_kit = PromptKit()
            targets = {sample.id: sample.pixel_target().center for sample in dataset.samples}
            backend = build_backend(self.config.get_backend_config(), derive_seed(self.seed, 'mock'), targets)

            manifest = RunManifest(
                command='eval',
                config=self.config.resolved(),
                seed=self.seed,
                dataset_checksum=file_checksum(dataset_path),
                prompt_checksums=prompt_kit.checksums,
                backend=backend.identity,
            )

            loop = FeedbackLoop(harness_config, backend, prompt_kit,
                                OverlaySpec.from_config(self.config.get_overlay_config()), dataset_path.parent)
            traces = loop.run(dataset.samples)
            write_traces(output_dir / TRACES_NAME, traces)

            summary = aggregate(traces, harness_config.max_turns)
            write_metrics(output_dir / METRICS_NAME, summary)
            table = format_table(run_table(summary, manifest))
            (output_dir / TABLE_NAME).write_text(table + '\n', encoding='utf-8')
            print(table)

            manifest.finish()
            manifest.save(output_dir)
            logger.info(f"Run written to {output_dir}")
            return output_dir
        finally:
            logger.remove(sink)

    def report(self, runs: List[str], final_only: bool = False, output: Optional[str] = None) -> str:
        """Merge runs into one comparison table"""
        table = format_table(compare_runs(runs, final_only))
        if output:
            Path(output).parent.mkdir(parents=True, exist_ok=True)
            Path(output).write_text(table + '\n', encoding='utf-8')
            logger.info(f"Report written to {output}")
        print(table)
        return table


def _composition(values: List[str]) -> Dict[str, int]:
    composition = {}
    for value in values:
        name, sep, count = value.partition('=')
        if not sep or not count.strip().isdigit():
            raise argparse.ArgumentTypeError(f"Expected granularity=count, got {value!r}")
        composition[name.strip()] = int(count)
    return composition


def _absolute(path: Optional[str]) -> Optional[str]:
    return str(Path(path).resolve()) if path else None


def build_parser() -> argparse.ArgumentParser:
    """Command-line surface"""
    parser = argparse.ArgumentParser(prog='grounding', description="Multi-turn cursor grounding harness")
    parser.add_argument('--config', help="Configuration file (default: config/config.yaml)")
    parser.add_argument('--log-level', help="Override logging.level")
    subparsers = parser.add_subparsers(dest='command', required=True)

    generate = subparsers.add_parser('generate', help="Generate a synthetic eval dataset")
    generate.add_argument('--corpus', nargs='+', help="Source files to render")
    generate.add_argument('--output', help="Dataset output directory")
    generate.add_argument('--composition', nargs='+', metavar='GRANULARITY=COUNT',
                          help="Samples per granularity, e.g. character=171 word=48 line=38")
    generate.add_argument('--seed', type=int, help="Top-level seed")

    collect = subparsers.add_parser('collect', help="Collect cursor positions over the bridge")
    collect.add_argument('--port', type=int, help="Bridge port (default 54321)")
    collect.add_argument('--delay', type=int, help="Settle delay in ms (default 80)")
    collect.add_argument('--timeout', type=int, help="Per-request timeout in ms (default 3000)")
    collect.add_argument('--corpus', nargs='+', help="Source files to traverse")
    collect.add_argument('--output', help="Collection output directory")
    collect.add_argument('--fault-seed', type=int, help="Seed for injected measurement faults")
    collect.add_argument('--fault-rate', type=float, help="Probability of an injected measurement fault")
    collect.add_argument('--seed', type=int, help="Top-level seed")

    evaluate = subparsers.add_parser('eval', help="Run the feedback loop against a backend")
    evaluate.add_argument('--dataset', help="Eval samples JSONL")
    evaluate.add_argument('--backend', choices=['http', 'mock'], help="Backend kind")
    evaluate.add_argument('--mock-kind', help="Mock oracle kind when --backend mock")
    evaluate.add_argument('--model', help="Model name sent to the endpoint")
    evaluate.add_argument('--endpoint', help="OpenAI-compatible base URL")
    evaluate.add_argument('--api-key-env', help="Environment variable holding the API key")
    evaluate.add_argument('--system-prompt', choices=SYSTEM_VARIANTS, help="System prompt variant")
    evaluate.add_argument('--custom-prompt', help="Text for the custom system prompt")
    evaluate.add_argument('--feedback-template', choices=FEEDBACK_TEMPLATES, help="Feedback template")
    evaluate.add_argument('--max-turns', type=int, help="Turns per sample (default 2)")
    evaluate.add_argument('--tolerances', nargs=2, type=float, metavar=('TX', 'TY'),
                          help="Hit tolerances in pixels (default: half a character cell)")
    evaluate.add_argument('--parallelism', type=int, help="Samples evaluated concurrently")
    evaluate.add_argument('--output-dir', help="Run output directory")
    evaluate.add_argument('--seed', type=int, help="Top-level seed")
    evaluate.add_argument('--save-turn-images', action='store_true', default=None,
                          help="Keep every image sent to the model")

    report = subparsers.add_parser('report', help="Merge runs into a comparison table")
    report.add_argument('runs', nargs='+', help="Run directories or traces files")
    report.add_argument('--final-only', action='store_true', help="Only the final turn of each run")
    report.add_argument('--output', help="Write the table to this file as well")

    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Dotted config overrides for the flags that were given"""
    overrides: Dict[str, Any] = {'logging.level': args.log_level, 'seed': getattr(args, 'seed', None)}
    corpus = getattr(args, 'corpus', None)
    if corpus:
        overrides['generator.corpus'] = [_absolute(p) for p in corpus]

    if args.command == 'generate':
        overrides['generator.output_dir'] = _absolute(args.output)
        if args.composition:
            overrides['generator.composition'] = _composition(args.composition)
    elif args.command == 'collect':
        overrides.update({
            'collector.port': args.port,
            'collector.settle_delay_ms': args.delay,
            'collector.request_timeout_ms': args.timeout,
            'collector.output_dir': _absolute(args.output),
            'collector.fault_seed': args.fault_seed,
            'collector.fault_rate': args.fault_rate,
        })
    elif args.command == 'eval':
        overrides.update({
            'harness.dataset': _absolute(args.dataset),
            'backend.kind': args.backend,
            'backend.mock.kind': args.mock_kind,
            'backend.model': args.model,
            'backend.endpoint': args.endpoint,
            'backend.api_key_env': args.api_key_env,
            'prompting.system_prompt': args.system_prompt,
            'prompting.custom_prompt': args.custom_prompt,
            'prompting.feedback_template': args.feedback_template,
            'harness.max_turns': args.max_turns,
            'harness.parallelism': args.parallelism,
            'harness.output_dir': _absolute(args.output_dir),
            'harness.save_turn_images': args.save_turn_images,
        })
        if args.tolerances:
            overrides['harness.tolerance_x'], overrides['harness.tolerance_y'] = args.tolerances
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        app = GroundingApp(args.config, overrides_from_args(args))
        if args.command == 'generate':
            app.generate()
        elif args.command == 'collect':
            app.collect()
        elif args.command == 'eval':
            app.eval()
        else:
            app.report(args.runs, args.final_only, args.output)
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return 130
    except argparse.ArgumentTypeError as e:
        logger.error(str(e))
        return 1
    except GroundingError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 1
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return 2

    return 0


if __name__ == "__main__":
    sys.exit(main())
