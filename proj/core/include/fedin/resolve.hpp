#pragma once

#include "fedin/gradient.hpp"

namespace fedin {

// Resolution of the conflict between the IN-training gradient g_in and the
// local-training gradient g_local. The combined step direction z is chosen so
// that <z, g_local> >= 0: z is the closest point to g_in inside that
// halfspace. resolve_analytic() is the closed-form solution; resolve_simplified()
// is the cheap fixed-multiplier update actually used during training;
// projection_oracle() recomputes the projection by a generic halfspace
// formula over the flattened vectors and exists to cross-check the other two.

// Sum over all aligned entries of g1*g2 (the trace inner product).
double frobenius_inner(const GradientSet& g1, const GradientSet& g2);

// z = g_in if b >= 0, else g_in - (b/a) g_local, where a = <g_local,g_local>
// and b = <g_local,g_in>. a == 0 forces b == 0 and returns g_in.
GradientSet resolve_analytic(const GradientSet& g_in, const GradientSet& g_local);

// z = g_in + (lambda/2) g_local, elementwise. lambda must be >= 0.
GradientSet resolve_simplified(const GradientSet& g_in, const GradientSet& g_local,
                               double lambda);

// Independent check: projects g_in onto {z : <z, g_local> >= 0} by the
// generic point-to-halfspace formula over the concatenated vector.
GradientSet projection_oracle(const GradientSet& g_in, const GradientSet& g_local);

// ||g_in||^2 - 2<z,g_in> + ||z||^2 - lambda <g_local,z>
double lagrangian_value(const GradientSet& z, double lambda, const GradientSet& g_in,
                        const GradientSet& g_local);

// Dual objective g(lambda) = -(lambda^2/4) a - lambda b.
double dual_value(double lambda, const GradientSet& g_in, const GradientSet& g_local);

}  // namespace fedin
