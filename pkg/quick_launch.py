#!/usr/bin/env python3
"""
Quick Launch - Cursor Grounding Harness
Offline demo: generate a dataset, evaluate it with the feedback-aware mock and print the report
"""

import sys
from pathlib import Path

# Add src to path
sys.path.append(str(Path(__file__).parent / 'src'))

QUICK_DIR = Path(__file__).parent / 'runs' / 'quick'


def run_demo(max_turns: int = 5) -> int:
    """Run generate -> eval -> report into runs/quick/"""
    from main import main as cli

    dataset_dir = QUICK_DIR / 'dataset'
    run_dir = QUICK_DIR / 'feedback_aware'

    print("🧪 Generating the synthetic dataset...")
    status = cli(['generate', '--output', str(dataset_dir)])
    if status != 0:
        return status

    print(f"\n🔁 Evaluating with the feedback-aware mock ({max_turns} turns)...")
    status = cli(['eval', '--backend', 'mock', '--mock-kind', 'feedback_aware',
                  '--dataset', str(dataset_dir / 'samples.jsonl'),
                  '--max-turns', str(max_turns), '--output-dir', str(run_dir)])
    if status != 0:
        return status

    print("\n📊 Report:")
    return cli(['report', str(run_dir), '--output', str(QUICK_DIR / 'report.txt')])


def main():
    """Main entry point"""
    print("⚡ Quick Launch - Cursor Grounding Harness")
    print("=" * 60)

    try:
        status = run_demo()
    except KeyboardInterrupt:
        print("\n\n👋 Cancelled by user")
        return 0

    if status == 0:
        print("\n" + "=" * 60)
        print(f"🎉 Done! Artifacts are in {QUICK_DIR}")
        print("=" * 60)
    else:
        print("❌ Demo failed, see logs/grounding.log")
    return status


if __name__ == "__main__":
    sys.exit(main())
