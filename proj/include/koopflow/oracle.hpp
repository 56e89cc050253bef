#pragma once

#include "koopflow/baselines.hpp"
#include "koopflow/diffeo_train.hpp"

#include <string>
#include <vector>

namespace koopflow {

/// One measured quantity against its tolerance (pass when value <= tolerance).
struct OracleCheck {
    std::string name;
    double value = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

OracleCheck make_check(std::string name, double value, double tolerance);

/// Central finite-difference Jacobian of f at x.
template <typename F>
Mat fd_jacobian(F&& f, const Vec& x, double h = 1e-5)
{
    const Vec f0 = f(x);
    Mat J(f0.size(), x.size());
    for (Index j = 0; j < x.size(); ++j) {
        Vec xp = x, xm = x;
        xp(j) += h;
        xm(j) -= h;
        J.col(j) = (f(xp) - f(xm)) / (2.0 * h);
    }
    return J;
}

/// |A - B|_F / max(|B|_F, floor).
double relative_error(const Mat& A, const Mat& B, double floor = 1e-12);

/// Adds scale * N(0, 1) to every parameter, so output layers are no longer zero.
void perturb_parameters(FlowModel& flow, Rng& rng, double scale);

/// Ex1 with the closed-form diffeomorphism: pointwise conjugacy residual, lifted-model
/// reconstruction error and eigenfunction evolution along RK4 trajectories.
std::vector<OracleCheck> exact_diffeo_checks(std::uint64_t seed = 1);

/// Round trip, analytic Jacobians and loss gradients against finite differences, and
/// the discrete-evolution identities of the lifted model.
std::vector<OracleCheck> kernel_checks(std::uint64_t seed = 1);

} // namespace koopflow
