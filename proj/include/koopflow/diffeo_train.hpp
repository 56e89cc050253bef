#pragma once

#include "koopflow/coupling_flow.hpp"
#include "koopflow/dynamics.hpp"

#include <functional>
#include <string>

namespace koopflow {

enum class ResidualForm {
    inverse_jacobian, // |xdot - J(x)^-1 A d(x)|^2
    premultiplied,    // |J(x) xdot - A d(x)|^2, same zero set
};

ResidualForm parse_residual_form(const std::string& s);
std::string to_string(ResidualForm form);

struct LossWeights {
    double conjugacy = 1.0;
    double jacobian_at_origin = 1.0;
    double origin_fixed = 1.0;
    /// > 0: conjugacy residual of sample i weighted by 1 / (|xdot_i|^2 + eps).
    double relative_eps = 0.0;
};

struct LossBreakdown {
    double conjugacy = 0.0;
    double jacobian_at_origin = 0.0;
    double origin_fixed = 0.0;
    double total = 0.0;
};

/// Loss from already-evaluated map values: d(x), J(x) at the sample and d(0), J(0) at the origin.
LossBreakdown loss_terms(const Vec& d_x, const Mat& J_x, const Vec& d_0, const Mat& J_0, const Mat& A, const Vec& xdot,
                         ResidualForm form, const LossWeights& weights = {});

LossBreakdown loss_terms(const FlowModel& flow, const Mat& A, const Vec& x, const Vec& xdot, ResidualForm form,
                         const LossWeights& weights = {});

struct BatchEvaluation {
    LossBreakdown loss; // conjugacy averaged over the batch, origin terms once
    Vec gradient;       // d(total)/d(flow parameters)
};

/// Loss over a batch (columns of X, Xdot) and its exact parameter gradient.
BatchEvaluation batch_loss_gradient(const FlowModel& flow, const Mat& A, const Mat& X, const Mat& Xdot,
                                    ResidualForm form, const LossWeights& weights = {});

struct TrainConfig {
    int batch_size = 64;
    int epochs = 200;
    double lr = 1e-3;
    /// Learning rate reached at the last epoch by cosine decay; <= 0 keeps lr constant.
    double lr_final = 0.0;
    std::uint64_t seed = 0;
    ResidualForm residual_form = ResidualForm::premultiplied;
    LossWeights loss_weights;
    /// Stop when the best loss improved by less than plateau_tol (relative) over this many epochs; 0 disables.
    int plateau_patience = 0;
    double plateau_tol = 1e-5;
};

void validate(const TrainConfig& cfg);

struct EpochLoss {
    int epoch = 0;
    LossBreakdown mean;
};

struct TrainResult {
    FlowModel flow;
    std::vector<EpochLoss> history;
    bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochLoss&, const FlowModel&)>;

/// Mini-batch Adam on the conjugacy loss with a seeded permutation per epoch.
TrainResult train(FlowModel flow, const TrajectoryDataset& dataset, const Mat& A, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

} // namespace koopflow
