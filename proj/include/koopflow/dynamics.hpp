#pragma once

#include "koopflow/core.hpp"

#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace koopflow {

/// Named vector field with real parameters. Registered names:
///   "ex1"    : (mu x1, lambda (x2 - x1^2))              params mu, lambda
///   "ex3"    : ((a + c sin^2 x2) x1, b x2)              params a, b, c
///   "linear" : A x with A given by params "a_<i>_<j>" (1-based), dim = sqrt(#params)
struct VectorFieldSpec {
    std::string name;
    std::map<std::string, double> params;
    Index dim = 2;

    double param(const std::string& key) const;
};

VectorFieldSpec make_ex1(double mu = -0.7, double lambda = -0.3);
VectorFieldSpec make_ex3(double a = -1.3, double b = -2.0, double c = 1.5);
VectorFieldSpec make_linear(const Mat& A);

/// Validates the name/params combination and fills in dim.
void validate(VectorFieldSpec& system);

struct DomainBox {
    Vec lo;
    Vec hi;

    Index dim() const { return lo.size(); }
    bool contains(const Vec& x, double tol = 0.0) const;
};

DomainBox make_box(const Vec& lo, const Vec& hi);
DomainBox symmetric_box(Index dim, double half_width);

struct Trajectory {
    double dt = 0.0;
    std::vector<Vec> states;
    std::vector<Vec> derivs;

    std::size_t size() const { return states.size(); }
};

struct TrajectoryDataset {
    std::vector<Trajectory> trajectories;
    VectorFieldSpec system;
    DomainBox box;
    std::uint64_t seed = 0;

    std::size_t pair_count() const;
    /// All states as columns (d x N), in trajectory order.
    Mat states_matrix() const;
    Mat derivs_matrix() const;
};

namespace detail {

template <typename Derived>
auto ex1_rhs(const Eigen::MatrixBase<Derived>& x, double mu, double lambda)
{
    using Scalar = typename Derived::Scalar;
    VectorX<Scalar> out(2);
    out(0) = Scalar(mu) * x(0);
    out(1) = Scalar(lambda) * (x(1) - x(0) * x(0));
    return out;
}

template <typename Derived>
auto ex3_rhs(const Eigen::MatrixBase<Derived>& x, double a, double b, double c)
{
    using Scalar = typename Derived::Scalar;
    using std::sin;
    VectorX<Scalar> out(2);
    const Scalar s = sin(x(1));
    out(0) = (Scalar(a) + Scalar(c) * s * s) * x(0);
    out(1) = Scalar(b) * x(1);
    return out;
}

Mat linear_matrix(const VectorFieldSpec& system);

} // namespace detail

/// Closed-form right-hand side f(x).
template <typename Derived>
VectorX<typename Derived::Scalar> eval_rhs(const VectorFieldSpec& system, const Eigen::MatrixBase<Derived>& x)
{
    using Scalar = typename Derived::Scalar;
    if (x.size() != system.dim)
        throw ConfigError("eval_rhs: state dimension " + std::to_string(x.size()) + " does not match system '" +
                          system.name + "' (" + std::to_string(system.dim) + ")");
    if (system.name == "ex1")
        return detail::ex1_rhs(x, system.param("mu"), system.param("lambda"));
    if (system.name == "ex3")
        return detail::ex3_rhs(x, system.param("a"), system.param("b"), system.param("c"));
    if (system.name == "linear")
        return detail::linear_matrix(system).template cast<Scalar>() * x;
    throw ConfigError("unknown system '" + system.name + "'");
}

/// Jacobian of f at the origin. Throws StabilityError unless it is Hurwitz.
Mat jacobian_linearization(const VectorFieldSpec& system);

/// Largest real part of the eigenvalues of a square matrix.
double spectral_abscissa(const Mat& M);

template <typename Scalar>
VectorX<Scalar> rk4_step(const VectorFieldSpec& system, const VectorX<Scalar>& x, Scalar dt)
{
    const VectorX<Scalar> k1 = eval_rhs(system, x);
    const VectorX<Scalar> k2 = eval_rhs(system, (x + Scalar(0.5) * dt * k1).eval());
    const VectorX<Scalar> k3 = eval_rhs(system, (x + Scalar(0.5) * dt * k2).eval());
    const VectorX<Scalar> k4 = eval_rhs(system, (x + dt * k3).eval());
    return x + dt / Scalar(6) * (k1 + Scalar(2) * k2 + Scalar(2) * k3 + k4);
}

/// Classical fixed-step RK4; states[0] = x0, steps+1 stored states.
Trajectory integrate(const VectorFieldSpec& system, const Vec& x0, double dt, int steps);

/// Terminal state only, for reference integrations with many steps.
Vec integrate_terminal(const VectorFieldSpec& system, const Vec& x0, double dt, long steps);

/// Uniform samples over the surface of the box; face picked proportional to its measure.
std::vector<Vec> boundary_starts(const DomainBox& box, int n_trajectories, std::uint64_t seed);

/// n uniform samples from the interior of the box, as columns (d x n).
Mat uniform_box_samples(const DomainBox& box, Index n, std::uint64_t seed);

/// per_dim^d lattice points including the bounds, first coordinate varying slowest.
std::vector<Vec> grid_starts(const DomainBox& box, int per_dim);

/// One trajectory per start. If max_pairs > 0 the dataset is truncated to exactly that many pairs.
TrajectoryDataset generate_dataset(const VectorFieldSpec& system, const DomainBox& box, const std::vector<Vec>& starts,
                                   double dt, int steps, std::size_t max_pairs = 0);

/// Known conjugacy of ex1 to its linearization: (x1, x2 - lambda/(lambda - 2 mu) x1^2).
template <typename Derived>
VectorX<typename Derived::Scalar> exact_diffeo_ex1(const Eigen::MatrixBase<Derived>& x, double mu, double lambda)
{
    using Scalar = typename Derived::Scalar;
    if (lambda == 2.0 * mu)
        throw ResonanceError("exact_diffeo_ex1: lambda == 2 mu is resonant");
    const Scalar k = Scalar(lambda / (lambda - 2.0 * mu));
    VectorX<Scalar> y(2);
    y(0) = x(0);
    y(1) = x(1) - k * x(0) * x(0);
    return y;
}

Mat exact_diffeo_ex1_jacobian(const Vec& x, double mu, double lambda);

} // namespace koopflow
