"""
Script to render the bundled synthetic suite to disk.
Run this locally to get a dataset directory usable with `python -m app.cli bench`.

Each spec in backend/app/data/suite/ becomes <out-dir>/<name>/ with img/,
groundtruth_rect.txt and attributes.txt.
"""
import sys
from pathlib import Path

# Add parent directory to path to import app modules
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.services.synthetic import bundled_suite, make_synthetic


def build_suite(out_dir: Path) -> bool:
    """Render every bundled spec into ``out_dir``"""
    specs = bundled_suite()
    print("=" * 60)
    print("Synthetic Suite Builder")
    print("=" * 60)
    print(f"Specs: {', '.join(s.name for s in specs)}")
    print(f"Output: {out_dir}")
    print("=" * 60)

    try:
        for spec in specs:
            seq = make_synthetic(spec, out_dir / spec.name)
            print(f"  {spec.name}: {len(seq)} frames, attributes={seq.attributes or ['none']}")
    except Exception as e:
        print(f"\nError rendering suite: {e}")
        return False

    print("=" * 60)
    print("Suite complete")
    print("=" * 60)
    return True


if __name__ == "__main__":
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("synthetic_suite")
    success = build_suite(target)
    sys.exit(0 if success else 1)
