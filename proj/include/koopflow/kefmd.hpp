#pragma once

#include "koopflow/eigenlib.hpp"

#include <memory>

namespace koopflow {

struct LeastSquaresInfo {
    Index rank = 0;
    Index unknowns = 0;
    bool rank_deficient = false; // effective rank below the state dimension
    double residual_rms = 0.0;
};

/// V minimizing sum |x_i - V z_i|^2 via an SVD pseudoinverse with relative
/// cutoff; an optional ridge term adds ridge * |V|^2. X is d x N, Z is D x N.
Mat fit_reconstruction(const Mat& X, const Mat& Z, double ridge = 0.0, double cutoff = 1e-10,
                       LeastSquaresInfo* info = nullptr);

/// Element-wise exp(lambda_i dt).
Vec discretize(const Vec& lambdas, double dt);

/// Lifted LTI realization: z0 = phi(x0), z' = Lambda z, x = V z.
struct LiftedLtiModel {
    Vec lambdas;          // diag(Lambda)
    Vec lambdas_discrete; // diag(Lambda_d) = exp(Lambda dt)
    Mat V;                // d x D
    double dt = 0.0;
    std::shared_ptr<const EigenfunctionLibrary> lift;
    LeastSquaresInfo fit;

    Index lifted_dim() const { return lambdas.size(); }
};

LiftedLtiModel build_kefmd(std::shared_ptr<const EigenfunctionLibrary> lift, const TrajectoryDataset& dataset,
                           double dt, double ridge = 0.0);
/// V fitted on the columns of a d x N state matrix.
LiftedLtiModel build_kefmd(std::shared_ptr<const EigenfunctionLibrary> lift, const Mat& states, double dt,
                           double ridge = 0.0);

/// Columns x_k = V Lambda_d^k z0 for k = 0..k_steps. The lift is evaluated once.
Mat predict_trajectory(const LiftedLtiModel& model, const Vec& x0, int k_steps);

/// Same evolution from a given lifted state.
Mat evolve_lifted(const LiftedLtiModel& model, const Vec& z0, int k_steps);

/// V Lambda phi(x).
Vec predict_derivative(const LiftedLtiModel& model, const Vec& x);

/// Fitted coefficients of the constant eigenfunction (column of V for the all-zero index).
Vec constant_mode(const LiftedLtiModel& model);

} // namespace koopflow
