#pragma once

#include "koopflow/kefmd.hpp"

#include <string>

namespace koopflow {

enum class DictionaryKind { monomial, rbf };

/// Fixed lifting dictionary for generator EDMD.
///
/// monomial: prod_j (x_j / scale_j)^{e_j}, either all exponents of total
///           degree <= max_degree or (tensor) every e_j <= max_degree.
///           Ordered by total degree, then by descending leading exponents.
/// rbf:      constant, the d linear coordinates, then exp(-gamma |x - c_i|^2).
struct Dictionary {
    DictionaryKind kind = DictionaryKind::monomial;
    Index dim = 0;

    int max_degree = 0;
    bool tensor = false;
    Vec scale;
    Eigen::MatrixXi exponents; // size x dim

    Mat centers; // dim x n_centers
    double gamma = 1.0;

    Index size() const;
};

Dictionary monomial_dictionary(Index dim, int max_degree, bool tensor = false, const Vec& scale = Vec());
Dictionary rbf_dictionary(const Mat& centers, double gamma);

/// Centers drawn uniformly without replacement from the dataset states so the
/// dictionary has lifted_dim elements; gamma = 1 / (2 m^2) with m the median
/// pairwise center distance.
Dictionary rbf_from_data(const TrajectoryDataset& dataset, Index lifted_dim, std::uint64_t seed);

Vec dict_eval(const Dictionary& dict, const Vec& x);
/// Jacobian of dict_eval, size x dim.
Mat dict_grad(const Dictionary& dict, const Vec& x);

std::string to_string(DictionaryKind kind);

struct GeneratorEdmdModel {
    Mat L; // generator matrix, size x size
    Mat C; // reconstruction, dim x size
    Dictionary dict;
    LeastSquaresInfo fit_generator;
    LeastSquaresInfo fit_reconstruction;
};

/// L from psi_dot_i = grad psi(x_i) xdot_i ~ L psi(x_i); C from x_i ~ C psi(x_i); both ridge least squares.
GeneratorEdmdModel fit_generator_edmd(const TrajectoryDataset& dataset, const Dictionary& dict, double ridge = 1e-8);

/// Matrix exponential (scaling and squaring with Pade approximants).
Mat expm(const Mat& M);

/// Columns x_k = C expm(L dt)^k psi(x0), k = 0..k_steps.
Mat predict_edmd(const GeneratorEdmdModel& model, const Vec& x0, double dt, int k_steps);

} // namespace koopflow
