"""Global numeric policy: every validation tolerance in one place.

All tolerances used by validators, the fluid-queue solver, and the model
builders are read from the module-level ``POLICY`` instance so that they can
be tightened or relaxed consistently without touching call sites.
"""

from dataclasses import dataclass


@dataclass
class NumericPolicy:
    # Phase-type / matrix-exponential distribution validation
    ph_prob_sum_tol: float = 1e-12      # |alpha·1 + mass0 - 1| for PH
    me_norm_tol: float = 1e-10          # |alpha·1 + mass0 - 1| for ME
    me_form_tol: float = 1e-9           # |-g A^-1 h + mass0 - 1| for raw forms
    nonneg_entry_tol: float = 1e-12     # slack allowed on sign constraints
    pdf_screen_tol: float = 1e-9        # allowed pdf dip below zero
    pdf_screen_points: int = 200        # grid size of the nonnegativity screen
    pdf_screen_span: float = 40.0       # grid reach in units of 1/|Re lambda_max|

    # Fluid-queue solver
    generator_row_tol: float = 1e-12    # |row sum| allowed for Q and Qtilde
    split_rtol: float = 1e-9            # eigenvalue classification, relative to |Q R^-1|
    block_zero_rtol: float = 1e-10      # lower-left block of the reduced matrix
    orthogonality_tol: float = 1e-12    # |P^T P - I|
    boundary_residual_tol: float = 1e-9 # residual of the boundary linear system
    mass_negativity_tol: float = 1e-12  # slack before a point mass counts as negative
    total_probability_tol: float = 1e-9


POLICY = NumericPolicy()
