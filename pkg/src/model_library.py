# FILE: src/model_library.py

from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from src.config import get_settings, status
from src.lift import HamiltonianSystem
from src.model_parser import ModelDoc, build_system, parse_model

REPO_ROOT = Path(__file__).resolve().parents[1]
MODEL_SUFFIX = '.phs'


def resolve_dir(path: Union[str, Path]) -> Path:
    """Relative settings paths are taken from the repository root"""
    path = Path(path)
    return path if path.is_absolute() else REPO_ROOT / path


class ModelLibrary:
    """Bundled `.phs` models, addressed by name ('kdv') or by file path"""

    def __init__(self, model_dir: Optional[Union[str, Path]] = None):
        self.model_dir = resolve_dir(model_dir or get_settings().model_dir)
        self._cache: Dict[Path, ModelDoc] = {}
        status(f"📚 Model library: {self.model_dir}")

    def names(self) -> List[str]:
        if not self.model_dir.is_dir():
            return []
        return sorted(p.stem for p in self.model_dir.glob(f'*{MODEL_SUFFIX}'))

    def path(self, ref: Union[str, Path]) -> Path:
        """
        Locate a model file

        Args:
            ref: bundled name ('kdv'), file name ('kdv.phs') or a path

        Returns:
            Path of an existing model file
        """
        candidate = Path(ref)
        if candidate.is_file():
            return candidate
        name = candidate.name if candidate.suffix == MODEL_SUFFIX else candidate.name + MODEL_SUFFIX
        bundled = self.model_dir / name
        if bundled.is_file():
            return bundled
        raise FileNotFoundError(
            f"No model '{ref}' (bundled models: {', '.join(self.names()) or 'none'})"
        )

    def load(self, ref: Union[str, Path]) -> ModelDoc:
        path = self.path(ref)
        if path not in self._cache:
            status(f"📖 Loading model {path}")
            self._cache[path] = parse_model(path.read_text(encoding='utf-8'))
            status(f"✅ Parsed '{self._cache[path].name}' with {self._cache[path].n} state(s)")
        return self._cache[path]

    def system(self, ref: Union[str, Path]) -> HamiltonianSystem:
        return build_system(self.load(ref))

    def summary(self) -> List[Dict[str, Any]]:
        rows = []
        for name in self.names():
            doc = self.load(name)
            rows.append({
                'name': doc.name,
                'file': f"{name}{MODEL_SUFFIX}",
                'n': doc.n,
                'states': list(doc.states),
                'dissipative': doc.is_dissipative,
                'boundary': doc.boundary,
                'domain': [str(doc.domain[0]), str(doc.domain[1])],
            })
        return rows


def load_model(ref: Union[str, Path], model_dir: Optional[Union[str, Path]] = None) -> ModelDoc:
    return ModelLibrary(model_dir).load(ref)
