#include "koopflow/baselines.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace koopflow {

Index Dictionary::size() const
{
    if (kind == DictionaryKind::monomial)
        return exponents.rows();
    return 1 + dim + centers.cols();
}

std::string to_string(DictionaryKind kind)
{
    return kind == DictionaryKind::monomial ? "monomial" : "rbf";
}

Dictionary monomial_dictionary(Index dim, int max_degree, bool tensor, const Vec& scale)
{
    if (dim < 1 || max_degree < 0)
        throw ConfigError("monomial_dictionary: need dim >= 1 and max_degree >= 0");
    Dictionary dict;
    dict.kind = DictionaryKind::monomial;
    dict.dim = dim;
    dict.max_degree = max_degree;
    dict.tensor = tensor;
    dict.scale = scale.size() == 0 ? Vec::Ones(dim) : scale;
    if (dict.scale.size() != dim || !(dict.scale.array() > 0.0).all())
        throw ConfigError("monomial_dictionary: scale must be positive with one entry per dimension");

    std::vector<std::vector<int>> exps;
    std::vector<int> e(static_cast<std::size_t>(dim), 0);
    while (true) {
        const int total = std::accumulate(e.begin(), e.end(), 0);
        if (tensor || total <= max_degree)
            exps.push_back(e);
        Index j = dim - 1;
        for (; j >= 0; --j) {
            if (++e[static_cast<std::size_t>(j)] <= max_degree)
                break;
            e[static_cast<std::size_t>(j)] = 0;
        }
        if (j < 0)
            break;
    }
    std::stable_sort(exps.begin(), exps.end(), [](const auto& a, const auto& b) {
        const int ta = std::accumulate(a.begin(), a.end(), 0);
        const int tb = std::accumulate(b.begin(), b.end(), 0);
        if (ta != tb)
            return ta < tb;
        return a > b;
    });
    dict.exponents.resize(static_cast<Index>(exps.size()), dim);
    for (std::size_t i = 0; i < exps.size(); ++i)
        for (Index j = 0; j < dim; ++j)
            dict.exponents(static_cast<Index>(i), j) = exps[i][static_cast<std::size_t>(j)];
    return dict;
}

Dictionary rbf_dictionary(const Mat& centers, double gamma)
{
    if (centers.rows() < 1 || !(gamma > 0.0))
        throw ConfigError("rbf_dictionary: need non-empty centers and gamma > 0");
    Dictionary dict;
    dict.kind = DictionaryKind::rbf;
    dict.dim = centers.rows();
    dict.centers = centers;
    dict.gamma = gamma;
    return dict;
}

Dictionary rbf_from_data(const TrajectoryDataset& dataset, Index lifted_dim, std::uint64_t seed)
{
    const Index d = dataset.system.dim;
    const Index n_centers = lifted_dim - 1 - d;
    if (n_centers < 1)
        throw ConfigError("rbf_from_data: lifted dimension too small for any centers");
    const Mat X = dataset.states_matrix();
    if (X.cols() < n_centers)
        throw DegenerateDataError("rbf_from_data: fewer states than requested centers");

    std::vector<Index> idx(static_cast<std::size_t>(X.cols()));
    std::iota(idx.begin(), idx.end(), Index{0});
    Rng rng(seed);
    for (Index i = 0; i < n_centers; ++i) {
        const auto pick = static_cast<std::size_t>(i) + rng.below(idx.size() - static_cast<std::size_t>(i));
        std::swap(idx[static_cast<std::size_t>(i)], idx[pick]);
    }
    Mat centers(d, n_centers);
    for (Index i = 0; i < n_centers; ++i)
        centers.col(i) = X.col(idx[static_cast<std::size_t>(i)]);

    std::vector<double> dists;
    for (Index i = 0; i < n_centers; ++i)
        for (Index j = i + 1; j < n_centers; ++j)
            dists.push_back((centers.col(i) - centers.col(j)).norm());
    double median = 1.0;
    if (!dists.empty()) {
        std::nth_element(dists.begin(), dists.begin() + static_cast<long>(dists.size() / 2), dists.end());
        median = dists[dists.size() / 2];
    }
    if (!(median > 0.0))
        median = 1.0;
    return rbf_dictionary(centers, 1.0 / (2.0 * median * median));
}

Vec dict_eval(const Dictionary& dict, const Vec& x)
{
    if (x.size() != dict.dim)
        throw ConfigError("dict_eval: dimension mismatch");
    Vec out(dict.size());
    if (dict.kind == DictionaryKind::monomial) {
        const Vec u = x.cwiseQuotient(dict.scale);
        for (Index i = 0; i < dict.exponents.rows(); ++i) {
            double v = 1.0;
            for (Index j = 0; j < dict.dim; ++j)
                for (int k = 0; k < dict.exponents(i, j); ++k)
                    v *= u(j);
            out(i) = v;
        }
        return out;
    }
    out(0) = 1.0;
    out.segment(1, dict.dim) = x;
    for (Index c = 0; c < dict.centers.cols(); ++c)
        out(1 + dict.dim + c) = std::exp(-dict.gamma * (x - dict.centers.col(c)).squaredNorm());
    return out;
}

Mat dict_grad(const Dictionary& dict, const Vec& x)
{
    if (x.size() != dict.dim)
        throw ConfigError("dict_grad: dimension mismatch");
    Mat G = Mat::Zero(dict.size(), dict.dim);
    if (dict.kind == DictionaryKind::monomial) {
        const Vec u = x.cwiseQuotient(dict.scale);
        for (Index i = 0; i < dict.exponents.rows(); ++i) {
            for (Index j = 0; j < dict.dim; ++j) {
                const int ej = dict.exponents(i, j);
                if (ej == 0)
                    continue;
                double v = static_cast<double>(ej) / dict.scale(j);
                for (Index l = 0; l < dict.dim; ++l) {
                    const int p = l == j ? ej - 1 : dict.exponents(i, l);
                    for (int k = 0; k < p; ++k)
                        v *= u(l);
                }
                G(i, j) = v;
            }
        }
        return G;
    }
    G.block(1, 0, dict.dim, dict.dim).setIdentity();
    for (Index c = 0; c < dict.centers.cols(); ++c) {
        const Vec diff = x - dict.centers.col(c);
        const double e = std::exp(-dict.gamma * diff.squaredNorm());
        G.row(1 + dict.dim + c) = (-2.0 * dict.gamma * e) * diff.transpose();
    }
    return G;
}

GeneratorEdmdModel fit_generator_edmd(const TrajectoryDataset& dataset, const Dictionary& dict, double ridge)
{
    const std::size_t n = dataset.pair_count();
    if (n == 0)
        throw DegenerateDataError("fit_generator_edmd: empty dataset");
    if (dict.dim != dataset.system.dim)
        throw ConfigError("fit_generator_edmd: dictionary dimension does not match the system");

    const Mat X = dataset.states_matrix();
    const Mat Xdot = dataset.derivs_matrix();
    Mat Psi(dict.size(), X.cols());
    Mat PsiDot(dict.size(), X.cols());
    for (Index i = 0; i < X.cols(); ++i) {
        Psi.col(i) = dict_eval(dict, X.col(i));
        PsiDot.col(i) = dict_grad(dict, X.col(i)) * Xdot.col(i);
    }
    GeneratorEdmdModel m;
    m.dict = dict;
    m.L = fit_reconstruction(PsiDot, Psi, ridge, 1e-12, &m.fit_generator);
    m.C = fit_reconstruction(X, Psi, ridge, 1e-12, &m.fit_reconstruction);
    return m;
}

Mat expm(const Mat& M)
{
    if (M.rows() != M.cols())
        throw ConfigError("expm: matrix must be square");
    return M.exp();
}

Mat predict_edmd(const GeneratorEdmdModel& model, const Vec& x0, double dt, int k_steps)
{
    if (!(dt > 0.0) || k_steps < 0)
        throw ConfigError("predict_edmd: need dt > 0 and k_steps >= 0");
    const Mat E = expm(model.L * dt);
    Vec psi = dict_eval(model.dict, x0);
    Mat out(model.C.rows(), k_steps + 1);
    for (int k = 0; k <= k_steps; ++k) {
        out.col(k) = model.C * psi;
        psi = E * psi;
    }
    return out;
}

} // namespace koopflow
