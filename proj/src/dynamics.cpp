#include "koopflow/dynamics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace koopflow {

double VectorFieldSpec::param(const std::string& key) const
{
    const auto it = params.find(key);
    if (it == params.end())
        throw ConfigError("system '" + name + "' is missing parameter '" + key + "'");
    return it->second;
}

VectorFieldSpec make_ex1(double mu, double lambda)
{
    VectorFieldSpec s{"ex1", {{"mu", mu}, {"lambda", lambda}}, 2};
    validate(s);
    return s;
}

VectorFieldSpec make_ex3(double a, double b, double c)
{
    VectorFieldSpec s{"ex3", {{"a", a}, {"b", b}, {"c", c}}, 2};
    validate(s);
    return s;
}

VectorFieldSpec make_linear(const Mat& A)
{
    if (A.rows() != A.cols() || A.rows() == 0)
        throw ConfigError("make_linear: A must be square and non-empty");
    VectorFieldSpec s{"linear", {}, A.rows()};
    for (Index i = 0; i < A.rows(); ++i)
        for (Index j = 0; j < A.cols(); ++j)
            s.params["a_" + std::to_string(i + 1) + "_" + std::to_string(j + 1)] = A(i, j);
    validate(s);
    return s;
}

namespace {

void require_params(const VectorFieldSpec& s, std::initializer_list<const char*> keys)
{
    if (s.params.size() != keys.size())
        throw ConfigError("system '" + s.name + "' expects exactly " + std::to_string(keys.size()) + " parameters");
    for (const char* k : keys)
        (void)s.param(k);
}

} // namespace

void validate(VectorFieldSpec& system)
{
    if (system.name == "ex1") {
        require_params(system, {"mu", "lambda"});
        system.dim = 2;
    } else if (system.name == "ex3") {
        require_params(system, {"a", "b", "c"});
        system.dim = 2;
    } else if (system.name == "linear") {
        const auto n = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(system.params.size()))));
        if (n == 0 || static_cast<std::size_t>(n * n) != system.params.size())
            throw ConfigError("linear system needs n*n parameters a_i_j");
        system.dim = n;
        (void)detail::linear_matrix(system);
    } else {
        throw ConfigError("unknown system '" + system.name + "'");
    }
    for (const auto& [k, v] : system.params)
        if (!std::isfinite(v))
            throw ConfigError("system parameter '" + k + "' is not finite");
}

Mat detail::linear_matrix(const VectorFieldSpec& system)
{
    const Index n = system.dim;
    Mat A(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j)
            A(i, j) = system.param("a_" + std::to_string(i + 1) + "_" + std::to_string(j + 1));
    return A;
}

bool DomainBox::contains(const Vec& x, double tol) const
{
    return ((x - lo).array() >= -tol).all() && ((hi - x).array() >= -tol).all();
}

DomainBox make_box(const Vec& lo, const Vec& hi)
{
    if (lo.size() != hi.size() || lo.size() == 0)
        throw ConfigError("box bounds must be non-empty and of equal dimension");
    if (!(lo.array() < hi.array()).all())
        throw ConfigError("box requires lo < hi component-wise");
    return DomainBox{lo, hi};
}

DomainBox symmetric_box(Index dim, double half_width)
{
    return make_box(Vec::Constant(dim, -half_width), Vec::Constant(dim, half_width));
}

std::size_t TrajectoryDataset::pair_count() const
{
    std::size_t n = 0;
    for (const auto& t : trajectories)
        n += t.size();
    return n;
}

Mat TrajectoryDataset::states_matrix() const
{
    Mat out(system.dim, static_cast<Index>(pair_count()));
    Index c = 0;
    for (const auto& t : trajectories)
        for (const auto& s : t.states)
            out.col(c++) = s;
    return out;
}

Mat TrajectoryDataset::derivs_matrix() const
{
    Mat out(system.dim, static_cast<Index>(pair_count()));
    Index c = 0;
    for (const auto& t : trajectories)
        for (const auto& s : t.derivs)
            out.col(c++) = s;
    return out;
}

Mat jacobian_linearization(const VectorFieldSpec& system)
{
    Mat A;
    if (system.name == "ex1")
        A = Eigen::Vector2d(system.param("mu"), system.param("lambda")).asDiagonal();
    else if (system.name == "ex3")
        A = Eigen::Vector2d(system.param("a"), system.param("b")).asDiagonal();
    else if (system.name == "linear")
        A = detail::linear_matrix(system);
    else
        throw ConfigError("unknown system '" + system.name + "'");

    const double abscissa = spectral_abscissa(A);
    if (!(abscissa < 0.0))
        throw StabilityError("linearization of '" + system.name + "' is not Hurwitz (spectral abscissa " +
                             std::to_string(abscissa) + ")");
    return A;
}

double spectral_abscissa(const Mat& M)
{
    if (M.size() == 0)
        return -std::numeric_limits<double>::infinity();
    Eigen::EigenSolver<Mat> es(M, false);
    if (es.info() != Eigen::Success)
        throw NumericalError("spectral_abscissa: eigenvalue computation failed");
    return es.eigenvalues().real().maxCoeff();
}

Trajectory integrate(const VectorFieldSpec& system, const Vec& x0, double dt, int steps)
{
    if (!(dt > 0.0))
        throw ConfigError("integrate: dt must be positive");
    if (steps < 1)
        throw ConfigError("integrate: steps must be >= 1");
    if (!x0.allFinite())
        throw ConfigError("integrate: initial state is not finite");

    Trajectory traj;
    traj.dt = dt;
    traj.states.reserve(static_cast<std::size_t>(steps) + 1);
    traj.derivs.reserve(static_cast<std::size_t>(steps) + 1);
    Vec x = x0;
    traj.states.push_back(x);
    traj.derivs.push_back(eval_rhs(system, x));
    for (int k = 0; k < steps; ++k) {
        x = rk4_step(system, x, dt);
        if (!x.allFinite())
            throw DivergenceError("integrate: non-finite state at step " + std::to_string(k + 1));
        traj.states.push_back(x);
        traj.derivs.push_back(eval_rhs(system, x));
    }
    return traj;
}

Vec integrate_terminal(const VectorFieldSpec& system, const Vec& x0, double dt, long steps)
{
    Vec x = x0;
    for (long k = 0; k < steps; ++k)
        x = rk4_step(system, x, dt);
    if (!x.allFinite())
        throw DivergenceError("integrate_terminal: non-finite state");
    return x;
}

std::vector<Vec> boundary_starts(const DomainBox& box, int n_trajectories, std::uint64_t seed)
{
    if (n_trajectories < 1)
        throw ConfigError("boundary_starts: need at least one trajectory");
    const Index d = box.dim();
    const Vec width = box.hi - box.lo;

    // 2d faces; face (j, side) has measure prod_{i != j} width_i (1 for d == 1).
    std::vector<double> cumulative;
    double total = 0.0;
    for (Index j = 0; j < d; ++j) {
        double m = 1.0;
        for (Index i = 0; i < d; ++i)
            if (i != j)
                m *= width(i);
        for (int side = 0; side < 2; ++side) {
            total += m;
            cumulative.push_back(total);
        }
    }

    Rng rng(seed);
    std::vector<Vec> out;
    out.reserve(static_cast<std::size_t>(n_trajectories));
    for (int n = 0; n < n_trajectories; ++n) {
        const double u = rng.uniform() * total;
        const auto face = static_cast<Index>(
            std::min<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin(),
                                  cumulative.size() - 1));
        const Index j = face / 2;
        Vec x(d);
        for (Index i = 0; i < d; ++i)
            x(i) = (i == j) ? (face % 2 == 0 ? box.lo(i) : box.hi(i)) : rng.uniform(box.lo(i), box.hi(i));
        out.push_back(std::move(x));
    }
    return out;
}

Mat uniform_box_samples(const DomainBox& box, Index n, std::uint64_t seed)
{
    if (n < 0)
        throw ConfigError("uniform_box_samples: n must be non-negative");
    Rng rng(seed);
    Mat out(box.dim(), n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < box.dim(); ++j)
            out(j, i) = rng.uniform(box.lo(j), box.hi(j));
    return out;
}

std::vector<Vec> grid_starts(const DomainBox& box, int per_dim)
{
    if (per_dim < 2)
        throw ConfigError("grid_starts: per_dim must be >= 2");
    const Index d = box.dim();
    std::size_t total = 1;
    for (Index i = 0; i < d; ++i)
        total *= static_cast<std::size_t>(per_dim);

    std::vector<Vec> out;
    out.reserve(total);
    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    for (std::size_t n = 0; n < total; ++n) {
        Vec x(d);
        for (Index i = 0; i < d; ++i) {
            const int k = idx[static_cast<std::size_t>(i)];
            // Endpoints exactly, interior by linear interpolation.
            x(i) = (k == per_dim - 1) ? box.hi(i)
                                      : box.lo(i) + (box.hi(i) - box.lo(i)) * static_cast<double>(k) / (per_dim - 1);
        }
        out.push_back(std::move(x));
        for (Index i = d - 1; i >= 0; --i) {
            if (++idx[static_cast<std::size_t>(i)] < per_dim)
                break;
            idx[static_cast<std::size_t>(i)] = 0;
        }
    }
    return out;
}

TrajectoryDataset generate_dataset(const VectorFieldSpec& system, const DomainBox& box, const std::vector<Vec>& starts,
                                   double dt, int steps, std::size_t max_pairs)
{
    if (starts.empty())
        throw ConfigError("generate_dataset: no start points");
    if (box.dim() != system.dim)
        throw ConfigError("generate_dataset: box dimension does not match system");
    TrajectoryDataset ds;
    ds.system = system;
    ds.box = box;
    ds.trajectories.reserve(starts.size());
    for (const auto& x0 : starts)
        ds.trajectories.push_back(integrate(system, x0, dt, steps));

    if (max_pairs > 0 && ds.pair_count() > max_pairs) {
        std::size_t excess = ds.pair_count() - max_pairs;
        while (excess > 0) {
            auto& last = ds.trajectories.back();
            const std::size_t drop = std::min(excess, last.size());
            last.states.resize(last.size() - drop);
            last.derivs.resize(last.derivs.size() - drop);
            excess -= drop;
            if (last.states.empty())
                ds.trajectories.pop_back();
        }
    }
    return ds;
}

Mat exact_diffeo_ex1_jacobian(const Vec& x, double mu, double lambda)
{
    if (lambda == 2.0 * mu)
        throw ResonanceError("exact_diffeo_ex1: lambda == 2 mu is resonant");
    const double k = lambda / (lambda - 2.0 * mu);
    Mat J(2, 2);
    J << 1.0, 0.0, -2.0 * k * x(0), 1.0;
    return J;
}

} // namespace koopflow
