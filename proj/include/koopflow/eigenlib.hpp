#pragma once

#include "koopflow/coupling_flow.hpp"
#include "koopflow/dynamics.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace koopflow {

/// Eigenpairs of the linearization: A v_j = lambda_j v_j, and the adjoint
/// basis W with <v_i, w_j> = delta_ij, so phi_j(y) = <y, w_j> satisfies
/// grad(phi_j) . (A y) = lambda_j phi_j(y).
struct PrincipalEigenpairs {
    Vec lambdas;
    Mat right_eigvecs; // columns v_j, unit length, largest-magnitude entry positive
    Mat adjoint_basis; // columns w_j
};

/// Throws UnsupportedSpectrumError for complex eigenvalues and DiagonalizabilityError
/// when the eigenvector matrix is (near) singular.
PrincipalEigenpairs principal_eigenpairs(const Mat& A, double max_condition = 1e8);

/// Multi-indices 0 <= m_j <= p_j in lexicographic order (first coordinate
/// slowest) and their eigenvalues sum_j m_j lambda_j.
struct MultiIndexLibrary {
    std::vector<int> max_powers;
    Eigen::MatrixXi indices; // D x d
    Vec lambdas;             // D

    Index size() const { return indices.rows(); }
};

MultiIndexLibrary enumerate_library(const Vec& principal_lambdas, const std::vector<int>& max_powers);

/// Diagonal map g(y) = y / r onto the unit cube.
struct BoxScaling {
    Vec radius;

    Vec apply(const Vec& y) const { return y.cwiseQuotient(radius); }
};

using DiffeoMap = std::function<Vec(const Vec&)>;

DiffeoMap flow_map(std::shared_ptr<const FlowModel> flow);
DiffeoMap identity_map();
DiffeoMap exact_ex1_map(double mu, double lambda);

/// r_j = margin * max_i |d(x_i)_j| over the dataset states.
BoxScaling fit_box_scaling(const DiffeoMap& diffeo, const TrajectoryDataset& dataset, double margin = 1.05);
/// Same over the columns of a d x N state matrix.
BoxScaling fit_box_scaling(const DiffeoMap& diffeo, const Mat& states, double margin = 1.05);

/// Composed eigenfunctions phi_m(x) = prod_j <g(d(x)), w_j>^{m_j}.
class EigenfunctionLibrary {
public:
    EigenfunctionLibrary(PrincipalEigenpairs principal, MultiIndexLibrary library, BoxScaling scaling, DiffeoMap diffeo);

    Index dim() const { return principal_.lambdas.size(); }
    Index lifted_dim() const { return library_.size(); }
    const PrincipalEigenpairs& principal() const { return principal_; }
    const MultiIndexLibrary& library() const { return library_; }
    const BoxScaling& scaling() const { return scaling_; }
    const Vec& lambdas() const { return library_.lambdas; }
    const DiffeoMap& diffeo() const { return diffeo_; }

    /// Principal eigenfunction values <g(d(x)), w_j>.
    Vec principal_values(const Vec& x) const;
    Vec lift(const Vec& x) const;
    /// Columns of X lifted to columns of the result (D x N).
    Mat lift_all(const Mat& X) const;
    /// True when |g(d(x))_j| exceeds the extrapolation threshold for some j.
    bool extrapolating(const Vec& x, double threshold = 1.5) const;

    /// Library of products from principal values c.
    Vec products(const Vec& c) const;

private:
    PrincipalEigenpairs principal_;
    MultiIndexLibrary library_;
    BoxScaling scaling_;
    DiffeoMap diffeo_;
};

/// Everything downstream of the learned diffeomorphism: principal pairs of A,
/// the product library, and box scaling fitted on the dataset.
EigenfunctionLibrary build_eigenfunction_library(const Mat& A, const std::vector<int>& max_powers, DiffeoMap diffeo,
                                                 const TrajectoryDataset& dataset, double margin = 1.05);
/// Scaling fitted on the columns of a d x N state matrix instead.
EigenfunctionLibrary build_eigenfunction_library(const Mat& A, const std::vector<int>& max_powers, DiffeoMap diffeo,
                                                 const Mat& states, double margin = 1.05);

} // namespace koopflow
