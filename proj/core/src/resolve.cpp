#include "fedin/resolve.hpp"

#include <cmath>

#include "fedin/errors.hpp"

namespace fedin {

double frobenius_inner(const GradientSet& g1, const GradientSet& g2) {
    require_same_layout(g1, g2, "frobenius_inner");
    double acc = 0.0;
    for (int g = 0; g < 3; ++g) {
        const auto& a = g1.groups[g];
        const auto& b = g2.groups[g];
        for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    }
    return acc;
}

GradientSet resolve_analytic(const GradientSet& g_in, const GradientSet& g_local) {
    require_same_layout(g_in, g_local, "resolve_analytic");
    const double a = frobenius_inner(g_local, g_local);
    const double b = frobenius_inner(g_local, g_in);
    GradientSet z = g_in;
    if (a == 0.0 || b >= 0.0) return z;
    const double scale = b / a;
    for (int g = 0; g < 3; ++g) {
        auto& zg = z.groups[g];
        const auto& lg = g_local.groups[g];
        for (size_t i = 0; i < zg.size(); ++i) zg[i] -= scale * lg[i];
    }
    return z;
}

GradientSet resolve_simplified(const GradientSet& g_in, const GradientSet& g_local,
                               double lambda) {
    require_same_layout(g_in, g_local, "resolve_simplified");
    if (lambda < 0.0) {
        throw ValidationError("resolve_simplified: lambda must be nonnegative, got " +
                              std::to_string(lambda));
    }
    const double half = lambda / 2.0;
    GradientSet z = g_in;
    for (int g = 0; g < 3; ++g) {
        auto& zg = z.groups[g];
        const auto& lg = g_local.groups[g];
        for (size_t i = 0; i < zg.size(); ++i) zg[i] += half * lg[i];
    }
    return z;
}

GradientSet projection_oracle(const GradientSet& g_in, const GradientSet& g_local) {
    require_same_layout(g_in, g_local, "projection_oracle");
    const std::vector<double> point = g_in.flattened();
    const std::vector<double> normal = g_local.flattened();

    double nn = 0.0, pn = 0.0;
    for (size_t i = 0; i < normal.size(); ++i) nn += normal[i] * normal[i];
    for (size_t i = 0; i < normal.size(); ++i) pn += point[i] * normal[i];

    GradientSet z = g_in;
    if (nn == 0.0 || pn >= 0.0) return z;  // already inside the halfspace

    // Hyperplane projection: p - (<p,n>/<n,n>) n.
    const double t = pn / nn;
    size_t flat = 0;
    for (int g = 0; g < 3; ++g) {
        for (double& v : z.groups[g]) {
            v = point[flat] - t * normal[flat];
            ++flat;
        }
    }
    return z;
}

double lagrangian_value(const GradientSet& z, double lambda, const GradientSet& g_in,
                        const GradientSet& g_local) {
    require_same_layout(z, g_in, "lagrangian_value");
    require_same_layout(z, g_local, "lagrangian_value");
    const double in_sq = frobenius_inner(g_in, g_in);
    const double z_in = frobenius_inner(z, g_in);
    const double z_sq = frobenius_inner(z, z);
    const double local_z = frobenius_inner(g_local, z);
    return in_sq - 2.0 * z_in + z_sq - lambda * local_z;
}

double dual_value(double lambda, const GradientSet& g_in, const GradientSet& g_local) {
    const double a = frobenius_inner(g_local, g_local);
    const double b = frobenius_inner(g_local, g_in);
    return -(lambda * lambda / 4.0) * a - lambda * b;
}

}  // namespace fedin
