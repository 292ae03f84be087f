# FILE: src/main.py

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from src.certificates import CHECKS, build_certificate, lift_document, port_summary, run_check, simulate_model
from src.config import get_settings, set_verbose, status
from src.excel_formatter import ExcelFormatter
from src.grid import BOUNDED, COMPOSED, DIRECT, PERIODIC, GridResolutionError
from src.model_library import ModelLibrary, resolve_dir
from src.model_parser import ModelError, print_model
from src.numerics import OPEN, ZERO_TRACE, IntegrationAborted, StabilityError

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


class UsageError(ValueError):
    """Invalid combination of command-line options"""


def _emit(payload: Dict[str, Any]):
    print(json.dumps(payload, indent=2, default=str))


def _diagnostic(kind: str, error: Exception) -> Dict[str, Any]:
    if isinstance(error, ModelError):
        return error.to_dict()
    return {'status': 'error', 'kind': kind, 'message': str(error)}


def _output_path(given: Optional[str], default_name: str) -> Path:
    if given:
        path = Path(given)
    else:
        path = resolve_dir(get_settings().output_dir) / default_name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def cmd_lift(args, library: ModelLibrary) -> int:
    doc = library.load(args.model)
    if args.dissipative and not doc.is_dissipative:
        raise UsageError(f"Model '{doc.name}' has no dissipation section")
    lifted_doc, summary = lift_document(doc)
    text = print_model(lifted_doc)
    if args.out:
        path = _output_path(args.out, f"{doc.name}_lifted.phs")
        path.write_text(text, encoding='utf-8')
        summary['lifted_model_file'] = str(path)
        status(f"💾 Lifted model written to {path}")
    summary['lifted_model'] = text
    summary['status'] = 'ok'
    _emit(summary)
    return EXIT_OK


def cmd_check(args, library: ModelLibrary) -> int:
    doc = library.load(args.model)
    options = {'numeric': not args.no_numeric} if args.suite == 'lift-consistency' else {}
    result = run_check(doc, args.suite, **options)
    _emit({'status': 'passed' if result.passed else 'failed', 'model': doc.name, **result.to_dict()})
    return EXIT_OK if result.passed else EXIT_FAILED


def cmd_ports(args, library: ModelLibrary) -> int:
    doc = library.load(args.model)
    _emit({'status': 'ok', **port_summary(doc)})
    return EXIT_OK


def cmd_simulate(args, library: ModelLibrary) -> int:
    doc = library.load(args.model)
    suffix = '_lifted' if args.lifted else ''
    csv_path = _output_path(args.out, f"{doc.name}{suffix}_trajectory.csv")
    try:
        result = simulate_model(doc, args.nx, args.dt, args.t_end, args.bc, args.lifted,
                                args.stencil_order, args.mode, args.record_every, args.closure)
    except IntegrationAborted as e:
        e.trajectory.to_frame().to_csv(csv_path, index=False)
        _emit({'status': 'aborted', 'kind': 'integration_aborted', 'message': str(e),
               'recorded_steps': len(e.trajectory.times), 'trajectory_csv': str(csv_path)})
        return EXIT_FAILED

    traj = result.trajectory
    traj.to_frame().to_csv(csv_path, index=False)
    energy_path = csv_path.with_name(csv_path.stem + '_energy.csv')
    traj.energy_frame().to_csv(energy_path, index=False)
    ports_path = csv_path.with_name(csv_path.stem + '_ports.csv')
    traj.ports_frame().to_csv(ports_path, index=False)
    status(f"💾 Trajectory written to {csv_path}")
    _emit({
        'status': 'ok',
        'trajectory_csv': str(csv_path),
        'energy_csv': str(energy_path),
        'ports_csv': str(ports_path),
        'balance': result.balance,
    })
    return EXIT_OK


def cmd_report(args, library: ModelLibrary) -> int:
    doc = library.load(args.model)
    certificate = build_certificate(doc, numeric=not args.no_numeric)
    if args.out:
        path = _output_path(args.out, f"{doc.name}_certificate.json")
        path.write_text(json.dumps(certificate, indent=2, default=str), encoding='utf-8')
        status(f"💾 Certificate written to {path}")
    if args.xlsx:
        path = _output_path(args.xlsx, f"{doc.name}_certificate.xlsx")
        ExcelFormatter().write_certificate(certificate, str(path))
        certificate['xlsx'] = str(path)
    _emit(certificate)
    return EXIT_OK if certificate['passed'] else EXIT_FAILED


def cmd_list(args, library: ModelLibrary) -> int:
    _emit({'status': 'ok', 'models': library.summary()})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='python -m src.main',
                                     description='Jet-space lifting of 1-D Hamiltonian PDE models')
    parser.add_argument('--verbose', action='store_true', help='progress lines on stderr')
    parser.add_argument('--model-dir', help='directory of bundled .phs models')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('lift', help='lift a model onto the jet space')
    p.add_argument('model')
    p.add_argument('--dissipative', action='store_true', help='require and lift the dissipative structure')
    p.add_argument('--out', help='write the lifted model text to this file')
    p.set_defaults(handler=cmd_lift)

    p = sub.add_parser('check', help='run one check suite')
    p.add_argument('model')
    p.add_argument('suite', choices=CHECKS)
    p.add_argument('--no-numeric', action='store_true', help='skip discrete trajectories in lift-consistency')
    p.set_defaults(handler=cmd_check)

    p = sub.add_parser('ports', help='boundary port matrices Q and W')
    p.add_argument('model')
    p.set_defaults(handler=cmd_ports)

    p = sub.add_parser('simulate', help='integrate the semi-discrete model')
    p.add_argument('model')
    p.add_argument('--nx', type=int, required=True)
    p.add_argument('--dt', type=float, required=True)
    p.add_argument('--t-end', type=float, required=True)
    p.add_argument('--bc', choices=(PERIODIC, BOUNDED), help='defaults to the model boundary kind')
    p.add_argument('--lifted', action='store_true')
    p.add_argument('--stencil-order', type=int, choices=(2, 4), default=2)
    p.add_argument('--mode', choices=(COMPOSED, DIRECT), help='derivative stencils')
    p.add_argument('--closure', choices=(OPEN, ZERO_TRACE))
    p.add_argument('--record-every', type=int, default=1)
    p.add_argument('--out', help='trajectory CSV path')
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser('report', help='full JSON certificate')
    p.add_argument('model')
    p.add_argument('--out', help='also write the certificate JSON to this file')
    p.add_argument('--xlsx', help='write a certificate workbook')
    p.add_argument('--no-numeric', action='store_true')
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser('list', help='bundled models')
    p.set_defaults(handler=cmd_list)
    return parser


def run_cli(argv: Optional[List[str]] = None) -> int:
    """
    Run one CLI command

    Returns:
        0 on success, 1 on a failed check or aborted run, 2 on usage, parse or semantic errors
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        code = e.code if isinstance(e.code, int) else EXIT_USAGE
        if code != EXIT_OK:
            _emit({'status': 'error', 'kind': 'usage', 'message': 'invalid command line'})
        return code

    if args.verbose:
        set_verbose(True)
    try:
        library = ModelLibrary(args.model_dir)
        return args.handler(args, library)
    except ModelError as e:
        status(f"❌ {e}")
        _emit(_diagnostic('model_error', e))
        return EXIT_USAGE
    except FileNotFoundError as e:
        _emit(_diagnostic('not_found', e))
        return EXIT_USAGE
    except StabilityError as e:
        _emit(_diagnostic('stability', e))
        return EXIT_USAGE
    except GridResolutionError as e:
        _emit(_diagnostic('grid_resolution', e))
        return EXIT_USAGE
    except ValueError as e:
        _emit(_diagnostic('invalid_input', e))
        return EXIT_USAGE
    finally:
        if args.verbose:
            set_verbose(False)


if __name__ == "__main__":
    sys.exit(run_cli(sys.argv[1:]))
