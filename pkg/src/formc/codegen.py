"""Code generation from compiled forms.

Three output formats share the same compiled data: straightline C99 with one
statement per element-tensor entry, a raw text format listing the reference
tensor values together with s-expressions for the geometry tensors, and
LaTeX for inspection.  All emitters are deterministic: identical inputs give
byte-identical text.

The generated C evaluates fastest when the map determinant is positive; the
runtime mesh loader guarantees that orientation.  Loops are fully unrolled:
element tensors stay small enough that straightline code is both the
simplest and the fastest form.
"""

from math import prod

import numpy as np

from .errors import FormSyntaxError
from .form_language import Index
from .tensor_representation import (
    CompiledForm,
    CompiledTerm,
    GeometryTensorExpr,
    contract_terms,
)

__all__ = [
    "emit_c",
    "emit_raw",
    "read_raw",
    "emit_latex",
    "count_code_lines",
    "RawCompiledForm",
]

RAW_HEADER = "formc-raw 1"


def _fmt(x):
    return "%.15e" % x


def _coeff_offsets(elements):
    offsets = []
    total = 0
    for el in elements:
        offsets.append(total)
        total += el.space_dim
    return offsets, total


def _g_name(k, alpha):
    return "G%d" % k + "".join("_%d" % a for a in alpha)


def _c_atom(atom, offsets):
    if atom[0] == "g":
        return "map->g%d%d" % (atom[1], atom[2])
    return "w[%d]" % (offsets[atom[1]] + atom[2])


def _c_geometry_expr(geometry, alpha, offsets):
    terms = geometry.terms_for(alpha)
    products = ["*".join(_c_atom(a, offsets) for a in t) for t in terms]
    if geometry.scalar == 1.0:
        prefix = ""
    elif geometry.scalar == -1.0:
        prefix = "-"
    else:
        prefix = _fmt(geometry.scalar) + "*"
    if len(products) == 1 and not products[0]:
        return prefix + "map->det"
    if len(products) == 1:
        return prefix + "map->det*" + products[0]
    return prefix + "map->det*(" + " + ".join(products) + ")"


def _block_terms(cf):
    """Per flat primary index: list of (value, G name) in emission order."""
    blocks = [[] for _ in range(cf.block_size)]
    for k, ct in enumerate(cf.terms):
        r = len(ct.primary_dims)
        for idx, v in ct.nonzeros:
            flat = int(np.ravel_multi_index(idx[:r], ct.primary_dims)) if r else 0
            blocks[flat].append((v, _g_name(k, idx[r:])))
    return blocks


def _join_terms(terms):
    if not terms:
        return "0.0"
    parts = []
    for j, (v, name) in enumerate(terms):
        mag = "%s*%s" % (_fmt(abs(v)), name)
        if j == 0:
            parts.append(("-" if v < 0 else "") + mag)
        else:
            parts.append((" - " if v < 0 else " + ") + mag)
    return "".join(parts)


def emit_c(cf, function_name="eval"):
    """C99 translation unit evaluating the element tensor of one form.

    The signature is ``void <name>(double block[], const affine_map_<d>d
    *map)`` with a trailing ``const double w[]`` argument when the form has
    coefficients; w holds the coefficient dofs slot after slot.  The map
    record carries det and the entries g{a}{b} = dX_a/dx_b of the inverse
    Jacobian, and det must be positive (cells positively oriented).
    """
    d = cf.cell.dim
    offsets, _ = _coeff_offsets(cf.coefficients)
    lines = []
    lines.append("/* Element tensor evaluation for form '%s': rank %d, %s. */"
                 % (cf.name, cf.arity, cf.cell.shape))
    lines.append("")
    lines.append("typedef struct {")
    lines.append("    double det;")
    for a in range(d):
        for b in range(d):
            lines.append("    double g%d%d;" % (a, b))
    lines.append("} affine_map_%dd;" % d)
    lines.append("")
    sig = "void %s(double block[], const affine_map_%dd *map" % (
        function_name, d)
    if cf.coefficients:
        sig += ", const double w[]"
    sig += ")"
    lines.append(sig)
    lines.append("{")
    for k, ct in enumerate(cf.terms):
        for alpha in ct.geometry.component_multiindices():
            lines.append("    const double %s = %s;" % (
                _g_name(k, alpha),
                _c_geometry_expr(ct.geometry, alpha, offsets),
            ))
    if any(ct.geometry.component_multiindices() for ct in cf.terms):
        lines.append("")
    for flat, terms in enumerate(_block_terms(cf)):
        lines.append("    block[%d] = %s;" % (flat, _join_terms(terms)))
    lines.append("}")
    return "\n".join(lines) + "\n"


def count_code_lines(cf):
    """Number of statement lines in the generated C."""
    geometry = sum(ct.geometry.n_components for ct in cf.terms)
    return geometry + cf.block_size


# --- raw format ----------------------------------------------------------------


def _sym(index, secondary_pos, aux_pos):
    if index.kind == "fixed":
        return str(index.value)
    if index.id in secondary_pos:
        return "s%d" % secondary_pos[index.id]
    return "b%d" % aux_pos[index.id]


def _geometry_sexpr(geometry):
    secondary_pos = {s.id: k for k, s in enumerate(geometry.secondary)}
    aux_pos = {a.id: k for k, a in enumerate(geometry.aux_g)}
    atoms = []
    for ref, x in geometry.transforms:
        atoms.append("(dXdx %s %s)" % (
            _sym(ref, secondary_pos, aux_pos),
            _sym(x, secondary_pos, aux_pos),
        ))
    for coeff, expansion in geometry.coeff_reads:
        atoms.append("(coeff %d %s)" % (
            coeff, _sym(expansion, secondary_pos, aux_pos)))
    parts = [repr(float(geometry.scalar)), "det"]
    if geometry.aux_g:
        inner = "(* %s)" % " ".join(atoms) if len(atoms) != 1 else atoms[0]
        for k in range(len(geometry.aux_g) - 1, -1, -1):
            inner = "(sum b%d %s)" % (k, inner)
        parts.append(inner)
    else:
        parts.extend(atoms)
    return "(* %s)" % " ".join(parts)


def emit_raw(cf):
    """Raw listing of the compiled form: every reference tensor nonzero plus
    the geometry tensor expressions, losslessly rereadable by read_raw."""
    lines = [RAW_HEADER]
    lines.append("form %s" % cf.name)
    lines.append("cell %s %d" % (cf.cell.shape, cf.cell.dim))
    lines.append("arity %d" % cf.arity)
    lines.append("primary" + "".join(" %d" % n for n in cf.primary_dims))
    lines.append("coefficients" + "".join(
        " %d" % el.space_dim for el in cf.coefficients))
    lines.append("monomials %d" % len(cf.terms))
    for k, ct in enumerate(cf.terms):
        lines.append("monomial %d" % k)
        lines.append("secondary" + "".join(
            " %d" % n for n in ct.secondary_dims))
        lines.append("geometry %s" % _geometry_sexpr(ct.geometry))
        lines.append("entries %d" % len(ct.nonzeros))
        for idx, v in ct.nonzeros:
            lines.append("%s %s" % (" ".join(str(i) for i in idx), repr(v)))
    lines.append("end")
    return "\n".join(lines) + "\n"


def _tokenize_sexpr(text):
    return text.replace("(", " ( ").replace(")", " ) ").split()


def _parse_sexpr(tokens, pos=0):
    if tokens[pos] != "(":
        return tokens[pos], pos + 1
    pos += 1
    out = []
    while tokens[pos] != ")":
        node, pos = _parse_sexpr(tokens, pos)
        out.append(node)
    return out, pos + 1


def _geometry_from_sexpr(node, secondary, dim):
    scalar = 1.0
    aux = {}
    transforms = []
    reads = []

    def resolve(tok):
        if tok.startswith("s"):
            return secondary[int(tok[1:])]
        if tok.startswith("b"):
            return aux[tok]
        return Index.fixed(int(tok))

    def walk(n):
        nonlocal scalar
        if isinstance(n, list):
            head = n[0]
            if head == "*":
                for child in n[1:]:
                    walk(child)
            elif head == "sum":
                aux[n[1]] = Index("auxiliary", range=dim)
                for child in n[2:]:
                    walk(child)
            elif head == "dXdx":
                transforms.append((resolve(n[1]), resolve(n[2])))
            elif head == "coeff":
                reads.append((int(n[1]), secondary[int(n[2][1:])]))
            else:
                raise FormSyntaxError("bad geometry operator %r" % (head,))
        elif n == "det":
            pass
        else:
            scalar *= float(n)

    walk(node)
    return GeometryTensorExpr(
        scalar, secondary, list(aux.values()), transforms, reads
    )


class RawCompiledForm:
    """Compiled form reconstructed from raw output.

    Contracts through the same routine as CompiledForm, so rereading emitted
    raw text reproduces element tensors bit for bit.
    """

    def __init__(self, name, cell_shape, dim, arity, primary_dims,
                 coefficient_dims, terms):
        self.name = name
        self.cell_shape = cell_shape
        self.dim = dim
        self.arity = arity
        self.primary_dims = tuple(primary_dims)
        self.coefficient_dims = tuple(coefficient_dims)
        self.terms = terms

    @property
    def block_size(self):
        return prod(self.primary_dims)

    def element_tensors(self, dets, gs, coeffs=()):
        return contract_terms(
            self.terms, self.primary_dims, self.dim, dets, gs, coeffs
        )

    def element_tensor(self, det, g, coeffs=()):
        return self.element_tensors([det], [g], coeffs)[0]


def read_raw(text):
    """Parse emit_raw output back into a contractible form."""
    lines = [ln for ln in text.splitlines()]
    if not lines or lines[0].strip() != RAW_HEADER:
        raise FormSyntaxError("not a raw form listing (missing %r header)"
                              % RAW_HEADER)
    fields = {}
    i = 1

    def take(keyword):
        nonlocal i
        if i >= len(lines):
            raise FormSyntaxError("unexpected end of raw listing, expected %r"
                                  % keyword, line=i + 1)
        parts = lines[i].split()
        if not parts or parts[0] != keyword:
            raise FormSyntaxError("expected %r at line %d" % (keyword, i + 1),
                                  line=i + 1)
        i += 1
        return parts[1:]

    fields["form"] = take("form")
    cell = take("cell")
    shape, dim = cell[0], int(cell[1])
    arity = int(take("arity")[0])
    primary_dims = [int(t) for t in take("primary")]
    coefficient_dims = [int(t) for t in take("coefficients")]
    n_monomials = int(take("monomials")[0])

    terms = []
    for k in range(n_monomials):
        mk = int(take("monomial")[0])
        if mk != k:
            raise FormSyntaxError("monomial %d out of order" % mk, line=i)
        secondary_dims = [int(t) for t in take("secondary")]
        secondary = [Index("secondary", range=n) for n in secondary_dims]
        geometry_line = take("geometry")
        sexpr, _ = _parse_sexpr(_tokenize_sexpr(" ".join(geometry_line)))
        geometry = _geometry_from_sexpr(sexpr, secondary, dim)
        n_entries = int(take("entries")[0])
        nonzeros = []
        for _ in range(n_entries):
            if i >= len(lines):
                raise FormSyntaxError("unexpected end of raw listing inside "
                                      "an entry table", line=i + 1)
            parts = lines[i].split()
            i += 1
            try:
                idx = tuple(int(t) for t in parts[:-1])
                nonzeros.append((idx, float(parts[-1])))
            except (ValueError, IndexError):
                raise FormSyntaxError("malformed entry line", line=i) from None
        terms.append(CompiledTerm(geometry, primary_dims, nonzeros))
    take("end")
    name = fields["form"][0] if fields["form"] else ""
    return RawCompiledForm(name, shape, dim, arity, primary_dims,
                           coefficient_dims, terms)


# --- LaTeX ----------------------------------------------------------------------


def _latex_sym(index, secondary_pos, aux_pos):
    if index.kind == "fixed":
        return str(index.value)
    if index.id in secondary_pos:
        return r"\alpha_{%d}" % (secondary_pos[index.id] + 1)
    return r"\beta_{%d}" % (aux_pos[index.id] + 1)


def _latex_geometry(geometry):
    secondary_pos = {s.id: k for k, s in enumerate(geometry.secondary)}
    aux_pos = {a.id: k for k, a in enumerate(geometry.aux_g)}
    lhs = "G_K"
    if geometry.rank:
        lhs = "G_K^{%s}" % " ".join(
            r"\alpha_{%d}" % (j + 1) for j in range(geometry.rank))
    parts = []
    if geometry.scalar != 1.0:
        parts.append(_fmt(geometry.scalar) + r" \,")
    parts.append(r"\det F_K'")
    if geometry.aux_g:
        parts.append(r"\sum_{%s}" % ", ".join(
            r"\beta_{%d}" % (j + 1) for j in range(len(geometry.aux_g))))
    for ref, x in geometry.transforms:
        parts.append(
            r"\frac{\partial X_{%s}}{\partial x_{%s}}" % (
                _latex_sym(ref, secondary_pos, aux_pos),
                _latex_sym(x, secondary_pos, aux_pos),
            ))
    for coeff, expansion in geometry.coeff_reads:
        parts.append(r"w^{(%d)}_{%s}" % (
            coeff, _latex_sym(expansion, secondary_pos, aux_pos)))
    return "%s = %s" % (lhs, " ".join(parts))


def emit_latex(cf):
    """LaTeX listing of the tensor representation for inspection."""
    lines = [
        r"\documentclass{article}",
        r"\begin{document}",
        r"\section*{Tensor representation of form %s}" % cf.name,
        "The element tensor is the sum over monomials of the contraction",
        "of each reference tensor $A^0$ with its geometry tensor $G_K$.",
    ]
    for k, ct in enumerate(cf.terms):
        lines.append(r"\subsection*{Monomial %d}" % k)
        lines.append(r"\[ %s \]" % _latex_geometry(ct.geometry))
        lines.append("Nonzero reference tensor entries:")
        lines.append(r"\begin{eqnarray*}")
        for idx, v in ct.nonzeros:
            lines.append(r"A^0_{%s} &=& %s \\" % (
                r"\,".join(str(i) for i in idx), _fmt(v)))
        lines.append(r"\end{eqnarray*}")
    lines.append(r"\end{document}")
    return "\n".join(lines) + "\n"
