#include "koopflow/eigenlib.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>

namespace koopflow {

PrincipalEigenpairs principal_eigenpairs(const Mat& A, double max_condition)
{
    if (A.rows() != A.cols() || A.rows() == 0)
        throw ConfigError("principal_eigenpairs: A must be square");
    Eigen::EigenSolver<Mat> es(A, true);
    if (es.info() != Eigen::Success)
        throw NumericalError("principal_eigenpairs: eigen decomposition failed");

    const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
    if ((es.eigenvalues().imag().array().abs() > 1e-12 * scale).any())
        throw UnsupportedSpectrumError("principal_eigenpairs: complex eigenvalues are not supported");

    PrincipalEigenpairs out;
    out.lambdas = es.eigenvalues().real();
    out.right_eigvecs = es.eigenvectors().real();
    for (Index j = 0; j < out.right_eigvecs.cols(); ++j) {
        auto v = out.right_eigvecs.col(j);
        v.normalize();
        Index k = 0;
        v.cwiseAbs().maxCoeff(&k);
        if (v(k) < 0)
            v = -v;
    }

    Eigen::JacobiSVD<Mat> svd(out.right_eigvecs);
    const auto& sv = svd.singularValues();
    const double cond = sv(sv.size() - 1) > 0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
    if (!(cond < max_condition))
        throw DiagonalizabilityError("principal_eigenpairs: A is defective or nearly so (eigenvector condition " +
                                     std::to_string(cond) + ")");

    out.adjoint_basis = out.right_eigvecs.transpose().partialPivLu().solve(Mat::Identity(A.rows(), A.cols()));
    return out;
}

MultiIndexLibrary enumerate_library(const Vec& principal_lambdas, const std::vector<int>& max_powers)
{
    const auto d = static_cast<Index>(max_powers.size());
    if (d != principal_lambdas.size())
        throw ConfigError("enumerate_library: need one max power per principal eigenvalue");
    Index D = 1;
    for (int p : max_powers) {
        if (p < 0)
            throw ConfigError("enumerate_library: max powers must be non-negative");
        D *= p + 1;
    }

    MultiIndexLibrary lib;
    lib.max_powers = max_powers;
    lib.indices.resize(D, d);
    lib.lambdas.resize(D);
    std::vector<int> m(static_cast<std::size_t>(d), 0);
    for (Index i = 0; i < D; ++i) {
        double lam = 0.0;
        for (Index j = 0; j < d; ++j) {
            lib.indices(i, j) = m[static_cast<std::size_t>(j)];
            lam += m[static_cast<std::size_t>(j)] * principal_lambdas(j);
        }
        lib.lambdas(i) = lam;
        for (Index j = d - 1; j >= 0; --j) {
            if (++m[static_cast<std::size_t>(j)] <= max_powers[static_cast<std::size_t>(j)])
                break;
            m[static_cast<std::size_t>(j)] = 0;
        }
    }
    return lib;
}

DiffeoMap flow_map(std::shared_ptr<const FlowModel> flow)
{
    return [flow = std::move(flow)](const Vec& x) { return flow->forward(x); };
}

DiffeoMap identity_map()
{
    return [](const Vec& x) { return x; };
}

DiffeoMap exact_ex1_map(double mu, double lambda)
{
    if (lambda == 2.0 * mu)
        throw ResonanceError("exact_ex1_map: lambda == 2 mu is resonant");
    return [mu, lambda](const Vec& x) { return exact_diffeo_ex1(x, mu, lambda); };
}

BoxScaling fit_box_scaling(const DiffeoMap& diffeo, const TrajectoryDataset& dataset, double margin)
{
    if (dataset.pair_count() == 0)
        throw DegenerateDataError("fit_box_scaling: empty dataset");
    return fit_box_scaling(diffeo, dataset.states_matrix(), margin);
}

BoxScaling fit_box_scaling(const DiffeoMap& diffeo, const Mat& states, double margin)
{
    if (states.cols() == 0)
        throw DegenerateDataError("fit_box_scaling: no states");
    Vec r = Vec::Zero(states.rows());
    for (Index i = 0; i < states.cols(); ++i)
        r = r.cwiseMax(diffeo(states.col(i)).cwiseAbs());
    if (!(r.array() > 0.0).all())
        throw DegenerateDataError("fit_box_scaling: zero radius in some dimension");
    return BoxScaling{margin * r};
}

EigenfunctionLibrary::EigenfunctionLibrary(PrincipalEigenpairs principal, MultiIndexLibrary library,
                                           BoxScaling scaling, DiffeoMap diffeo)
    : principal_(std::move(principal)), library_(std::move(library)), scaling_(std::move(scaling)),
      diffeo_(std::move(diffeo))
{
    if (library_.indices.cols() != principal_.lambdas.size() || scaling_.radius.size() != principal_.lambdas.size())
        throw ConfigError("EigenfunctionLibrary: inconsistent dimensions");
}

Vec EigenfunctionLibrary::principal_values(const Vec& x) const
{
    return principal_.adjoint_basis.transpose() * scaling_.apply(diffeo_(x));
}

Vec EigenfunctionLibrary::products(const Vec& c) const
{
    const Index d = dim();
    std::vector<Vec> powers(static_cast<std::size_t>(d));
    for (Index j = 0; j < d; ++j) {
        const int p = library_.max_powers[static_cast<std::size_t>(j)];
        Vec pw(p + 1);
        pw(0) = 1.0;
        for (int k = 1; k <= p; ++k)
            pw(k) = pw(k - 1) * c(j);
        powers[static_cast<std::size_t>(j)] = std::move(pw);
    }
    Vec z(lifted_dim());
    for (Index i = 0; i < lifted_dim(); ++i) {
        double v = 1.0;
        for (Index j = 0; j < d; ++j)
            v *= powers[static_cast<std::size_t>(j)](library_.indices(i, j));
        z(i) = v;
    }
    return z;
}

Vec EigenfunctionLibrary::lift(const Vec& x) const
{
    if (x.size() != dim())
        throw ConfigError("lift: state dimension mismatch");
    return products(principal_values(x));
}

Mat EigenfunctionLibrary::lift_all(const Mat& X) const
{
    Mat Z(lifted_dim(), X.cols());
    for (Index i = 0; i < X.cols(); ++i)
        Z.col(i) = lift(X.col(i));
    return Z;
}

bool EigenfunctionLibrary::extrapolating(const Vec& x, double threshold) const
{
    return (scaling_.apply(diffeo_(x)).array().abs() > threshold).any();
}

EigenfunctionLibrary build_eigenfunction_library(const Mat& A, const std::vector<int>& max_powers, DiffeoMap diffeo,
                                                 const TrajectoryDataset& dataset, double margin)
{
    if (dataset.pair_count() == 0)
        throw DegenerateDataError("fit_box_scaling: empty dataset");
    return build_eigenfunction_library(A, max_powers, std::move(diffeo), dataset.states_matrix(), margin);
}

EigenfunctionLibrary build_eigenfunction_library(const Mat& A, const std::vector<int>& max_powers, DiffeoMap diffeo,
                                                 const Mat& states, double margin)
{
    PrincipalEigenpairs principal = principal_eigenpairs(A);
    if ((principal.lambdas.array() >= 0.0).any())
        throw StabilityError("build_eigenfunction_library: principal eigenvalues must be negative");
    MultiIndexLibrary lib = enumerate_library(principal.lambdas, max_powers);
    BoxScaling scaling = fit_box_scaling(diffeo, states, margin);
    return EigenfunctionLibrary(std::move(principal), std::move(lib), std::move(scaling), std::move(diffeo));
}

} // namespace koopflow
