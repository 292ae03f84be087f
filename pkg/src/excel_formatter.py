# FILE: src/excel_formatter.py

import json
from typing import Any, Dict, List

from openpyxl import Workbook
from openpyxl.styles import Alignment, Font, PatternFill
from openpyxl.utils import get_column_letter

from src.config import status

HEADER_FONT = Font(bold=True, color="FFFFFF")
HEADER_FILL = PatternFill(start_color="366092", end_color="366092", fill_type="solid")
PASS_FILL = PatternFill(start_color="A8E6CF", end_color="A8E6CF", fill_type="solid")
FAIL_FILL = PatternFill(start_color="FF6B6B", end_color="FF6B6B", fill_type="solid")


class ExcelFormatter:
    """Write a model certificate as a workbook with Summary / Operators / Checks sheets"""

    def __init__(self):
        status("📊 Excel Formatter initialized")

    def write_certificate(self, certificate: Dict[str, Any], excel_file_path: str) -> str:
        """
        Args:
            certificate: dictionary produced by certificates.build_certificate
            excel_file_path: where to save the workbook

        Returns:
            the path written
        """
        wb = Workbook()
        summary_ws = wb.active
        summary_ws.title = "Summary"
        operators_ws = wb.create_sheet("Operators")
        checks_ws = wb.create_sheet("Checks")

        self._create_summary_sheet(summary_ws, certificate)
        self._create_operators_sheet(operators_ws, certificate)
        self._create_checks_sheet(checks_ws, certificate.get('checks', []))

        wb.save(excel_file_path)
        status(f"✅ Excel file saved: {excel_file_path}")
        return excel_file_path

    def _create_summary_sheet(self, ws, certificate: Dict[str, Any]):
        ws['A1'] = f"Certificate: {certificate.get('model', '')}"
        ws['A1'].font = Font(bold=True, size=16)
        ws.merge_cells('A1:D1')

        original = certificate.get('original', {})
        lifted = certificate.get('lifted', {})
        rows = [
            ("Generated At:", certificate.get('generated_at', '')),
            ("Report Version:", certificate.get('version', '')),
            ("Domain:", ', '.join(certificate.get('domain', []))),
            ("Dissipative:", 'yes' if certificate.get('dissipative') else 'no'),
            ("States:", ', '.join(original.get('states', []))),
            ("Hamiltonian:", original.get('hamiltonian', '')),
            ("Lifted States:", ', '.join(lifted.get('states', []))),
            ("Lifted Hamiltonian:", lifted.get('hamiltonian', '')),
            ("All Checks Passed:", 'yes' if certificate.get('passed') else 'no'),
        ]
        row = 3
        for label, value in rows:
            ws[f'A{row}'] = label
            ws[f'A{row}'].font = Font(bold=True)
            ws[f'B{row}'] = value
            row += 1
        ws[f'B{row - 1}'].fill = PASS_FILL if certificate.get('passed') else FAIL_FILL

        row += 1
        ws[f'A{row}'] = "Euler Derivatives"
        ws[f'A{row}'].font = HEADER_FONT
        ws[f'A{row}'].fill = HEADER_FILL
        row += 1
        for name, expr in zip(original.get('states', []), original.get('euler_derivatives', [])):
            ws[f'A{row}'] = f"delta_{name}"
            ws[f'B{row}'] = expr
            row += 1

        self._autosize(ws, 80)

    def _create_operators_sheet(self, ws, certificate: Dict[str, Any]):
        headers = ["Operator", "Order k", "Row", "Coefficients"]
        self._write_headers(ws, headers)

        operators = [
            ('J', certificate.get('original', {}).get('operator', {})),
            ('J lifted', certificate.get('lifted', {}).get('operator', {})),
        ]
        lift = certificate.get('lift', {})
        if 'G' in lift:
            operators.append(('G lifted', lift['G']))
            operators.append(('composite', lift['composite']))
        ports = certificate.get('ports', {})
        for label in ('original', 'lifted'):
            if ports.get(label, {}).get('Q'):
                operators.append((f'Q {label}', {'-': ports[label]['Q']}))

        row = 2
        for label, coeffs in operators:
            for k, matrix in coeffs.items():
                for i, matrix_row in enumerate(matrix, start=1):
                    ws.cell(row=row, column=1, value=label)
                    ws.cell(row=row, column=2, value=k)
                    ws.cell(row=row, column=3, value=i)
                    ws.cell(row=row, column=4, value='  '.join(matrix_row))
                    row += 1

        self._autosize(ws, 80)

    def _create_checks_sheet(self, ws, checks: List[Dict[str, Any]]):
        headers = ["Check", "Result", "Details"]
        self._write_headers(ws, headers)

        for row, check in enumerate(checks, 2):
            ws.cell(row=row, column=1, value=check.get('check', ''))
            ws.cell(row=row, column=2, value='passed' if check.get('passed') else 'failed')
            ws.cell(row=row, column=3, value=json.dumps(check.get('details', {}), default=str))
            fill = PASS_FILL if check.get('passed') else FAIL_FILL
            for col in range(1, len(headers) + 1):
                ws.cell(row=row, column=col).fill = fill

        self._autosize(ws, 100)

    def _write_headers(self, ws, headers: List[str]):
        for col, header in enumerate(headers, 1):
            cell = ws.cell(row=1, column=col, value=header)
            cell.font = HEADER_FONT
            cell.fill = HEADER_FILL
            cell.alignment = Alignment(horizontal="center")

    def _autosize(self, ws, limit: int):
        for column in ws.columns:
            column_letter = get_column_letter(column[0].column)
            max_length = max((len(str(cell.value)) for cell in column if cell.value is not None), default=0)
            ws.column_dimensions[column_letter].width = min(max_length + 2, limit)
