#include "koopflow/diffeo_train.hpp"

#include <Eigen/LU>

#include <cmath>
#include <numbers>
#include <numeric>

namespace koopflow {

ResidualForm parse_residual_form(const std::string& s)
{
    if (s == "premultiplied")
        return ResidualForm::premultiplied;
    if (s == "inverse_jacobian")
        return ResidualForm::inverse_jacobian;
    throw ConfigError("unknown residual form '" + s + "'");
}

std::string to_string(ResidualForm form)
{
    return form == ResidualForm::premultiplied ? "premultiplied" : "inverse_jacobian";
}

namespace {

void finish(LossBreakdown& l, const LossWeights& w)
{
    l.total = w.conjugacy * l.conjugacy + w.jacobian_at_origin * l.jacobian_at_origin + w.origin_fixed * l.origin_fixed;
}

// Pivot ratio of the LU factors; Eigen's rcond() is unreliable on exactly singular input.
bool singular(const Eigen::PartialPivLU<Mat>& lu)
{
    const Vec piv = lu.matrixLU().diagonal().cwiseAbs();
    return !(piv.minCoeff() > 1e-14 * piv.maxCoeff());
}

Vec conjugacy_residual(const Vec& d_x, const Mat& J_x, const Mat& A, const Vec& xdot, ResidualForm form)
{
    if (form == ResidualForm::premultiplied)
        return J_x * xdot - A * d_x;
    Eigen::PartialPivLU<Mat> lu(J_x);
    if (singular(lu))
        throw NumericalError("conjugacy residual: flow Jacobian is singular to machine precision");
    return xdot - lu.solve(A * d_x);
}

} // namespace

LossBreakdown loss_terms(const Vec& d_x, const Mat& J_x, const Vec& d_0, const Mat& J_0, const Mat& A, const Vec& xdot,
                         ResidualForm form, const LossWeights& weights)
{
    LossBreakdown l;
    l.conjugacy = conjugacy_residual(d_x, J_x, A, xdot, form).squaredNorm();
    l.jacobian_at_origin = (J_0 - Mat::Identity(J_0.rows(), J_0.cols())).squaredNorm();
    l.origin_fixed = d_0.squaredNorm();
    finish(l, weights);
    return l;
}

LossBreakdown loss_terms(const FlowModel& flow, const Mat& A, const Vec& x, const Vec& xdot, ResidualForm form,
                         const LossWeights& weights)
{
    const Vec zero = Vec::Zero(flow.dim());
    return loss_terms(flow.forward(x), flow.jacobian(x), flow.forward(zero), flow.jacobian(zero), A, xdot, form,
                      weights);
}

BatchEvaluation batch_loss_gradient(const FlowModel& flow, const Mat& A, const Mat& X, const Mat& Xdot,
                                    ResidualForm form, const LossWeights& weights)
{
    const Index d = flow.dim();
    const Index B = X.cols();
    if (X.rows() != d || Xdot.rows() != d || Xdot.cols() != B || B == 0)
        throw ConfigError("batch_loss_gradient: batch shape mismatch");

    BatchEvaluation out;
    out.gradient = Vec::Zero(flow.parameter_count());
    std::span<double> grad(out.gradient.data(), static_cast<std::size_t>(out.gradient.size()));
    const double inv_b = 1.0 / static_cast<double>(B);

    // Conjugacy term over the batch.
    {
        const Index tangents = form == ResidualForm::premultiplied ? 1 : d;
        Mat dual(d, B * (tangents + 1));
        dual.leftCols(B) = X;
        if (form == ResidualForm::premultiplied) {
            dual.rightCols(B) = Xdot;
        } else {
            for (Index j = 0; j < d; ++j) {
                dual.middleCols(B * (j + 1), B).setZero();
                dual.middleCols(B * (j + 1), B).row(j).setOnes();
            }
        }
        FlowTape tape;
        const Mat y = flow.forward_dual(dual, B, &tape);
        Mat g = Mat::Zero(d, y.cols());
        double sum = 0.0;

        if (form == ResidualForm::premultiplied) {
            Mat R = y.rightCols(B) - A * y.leftCols(B);
            for (Index i = 0; i < B; ++i) {
                if (!R.col(i).allFinite())
                    throw NumericalError("non-finite conjugacy residual at batch index " + std::to_string(i));
                if (weights.relative_eps > 0.0)
                    R.col(i) /= std::sqrt(Xdot.col(i).squaredNorm() + weights.relative_eps);
            }
            sum = R.squaredNorm();
            Mat gR = (2.0 * weights.conjugacy * inv_b) * R;
            if (weights.relative_eps > 0.0)
                for (Index i = 0; i < B; ++i)
                    gR.col(i) /= std::sqrt(Xdot.col(i).squaredNorm() + weights.relative_eps);
            g.rightCols(B) = gR;
            g.leftCols(B) = -A.transpose() * gR;
        } else {
            for (Index i = 0; i < B; ++i) {
                Mat J(d, d);
                for (Index j = 0; j < d; ++j)
                    J.col(j) = y.col(B * (j + 1) + i);
                Eigen::PartialPivLU<Mat> lu(J);
                if (singular(lu))
                    throw NumericalError("flow Jacobian singular at batch index " + std::to_string(i));
                const Vec u = lu.solve(A * y.col(i));
                const Vec r = Xdot.col(i) - u;
                if (!r.allFinite())
                    throw NumericalError("non-finite conjugacy residual at batch index " + std::to_string(i));
                const double wi = weights.relative_eps > 0.0 ? 1.0 / (Xdot.col(i).squaredNorm() + weights.relative_eps) : 1.0;
                sum += wi * r.squaredNorm();
                // d|r|^2 with r = xdot - J^-1 A y
                const Vec gu = -(2.0 * weights.conjugacy * inv_b * wi) * r;
                const Vec q = lu.transpose().solve(gu);
                g.col(i) = A.transpose() * q;
                const Mat gJ = -q * u.transpose();
                for (Index j = 0; j < d; ++j)
                    g.col(B * (j + 1) + i) = gJ.col(j);
            }
        }
        out.loss.conjugacy = sum * inv_b;
        flow.backward_dual(g, tape, grad);
    }

    // Boundary terms at the origin, once per batch.
    {
        Mat dual(d, d + 1);
        dual.col(0).setZero();
        dual.rightCols(d).setIdentity();
        FlowTape tape;
        const Mat y = flow.forward_dual(dual, 1, &tape);
        const Vec d0 = y.col(0);
        const Mat J0m = y.rightCols(d) - Mat::Identity(d, d);
        out.loss.origin_fixed = d0.squaredNorm();
        out.loss.jacobian_at_origin = J0m.squaredNorm();
        Mat g(d, d + 1);
        g.col(0) = 2.0 * weights.origin_fixed * d0;
        g.rightCols(d) = 2.0 * weights.jacobian_at_origin * J0m;
        flow.backward_dual(g, tape, grad);
    }

    finish(out.loss, weights);
    if (!out.gradient.allFinite())
        throw NumericalError("non-finite loss gradient");
    return out;
}

void validate(const TrainConfig& cfg)
{
    if (cfg.batch_size < 1)
        throw ConfigError("batch_size must be >= 1");
    if (cfg.epochs < 0)
        throw ConfigError("epochs must be >= 0");
    if (!(cfg.lr > 0.0))
        throw ConfigError("lr must be positive");
    const auto& w = cfg.loss_weights;
    if (w.conjugacy < 0 || w.jacobian_at_origin < 0 || w.origin_fixed < 0)
        throw ConfigError("loss weights must be non-negative");
    if (cfg.plateau_patience < 0)
        throw ConfigError("plateau_patience must be >= 0");
}

TrainResult train(FlowModel flow, const TrajectoryDataset& dataset, const Mat& A, const TrainConfig& cfg,
                  const EpochCallback& on_epoch)
{
    validate(cfg);
    const Mat X = dataset.states_matrix();
    const Mat Xdot = dataset.derivs_matrix();
    const Index N = X.cols();
    if (N == 0)
        throw ConfigError("train: empty dataset");
    if (spectral_abscissa(A) >= 0.0)
        throw StabilityError("train: linearization is not Hurwitz");

    TrainResult result;
    Rng rng(cfg.seed);
    Vec params = flow.parameters();
    AdamState adam;
    AdamConfig adam_cfg;
    std::vector<Index> order(static_cast<std::size_t>(N));
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> best_history;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        adam_cfg.lr = cfg.lr;
        if (cfg.lr_final > 0.0 && cfg.epochs > 1) {
            const double p = static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
            adam_cfg.lr = cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + std::cos(std::numbers::pi * p));
        }

        std::iota(order.begin(), order.end(), Index{0});
        for (std::size_t i = order.size() - 1; i > 0; --i)
            std::swap(order[i], order[rng.below(i + 1)]);

        LossBreakdown acc;
        int batches = 0;
        for (Index start = 0; start < N; start += cfg.batch_size) {
            const Index B = std::min<Index>(cfg.batch_size, N - start);
            Mat xb(X.rows(), B), xdb(X.rows(), B);
            for (Index i = 0; i < B; ++i) {
                xb.col(i) = X.col(order[static_cast<std::size_t>(start + i)]);
                xdb.col(i) = Xdot.col(order[static_cast<std::size_t>(start + i)]);
            }
            BatchEvaluation ev;
            try {
                ev = batch_loss_gradient(flow, A, xb, xdb, cfg.residual_form, cfg.loss_weights);
            } catch (const NumericalError& e) {
                throw NumericalError("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batches) + ": " + e.what());
            }
            if (!std::isfinite(ev.loss.total))
                throw NumericalError("training aborted: non-finite loss at epoch " + std::to_string(epoch) +
                                     ", batch " + std::to_string(batches));
            adam_step(params, ev.gradient, adam, adam_cfg);
            flow.set_parameters(params);
            acc.conjugacy += ev.loss.conjugacy;
            acc.jacobian_at_origin += ev.loss.jacobian_at_origin;
            acc.origin_fixed += ev.loss.origin_fixed;
            acc.total += ev.loss.total;
            ++batches;
        }
        EpochLoss el{epoch, {acc.conjugacy / batches, acc.jacobian_at_origin / batches, acc.origin_fixed / batches,
                             acc.total / batches}};
        result.history.push_back(el);
        if (on_epoch)
            on_epoch(el, flow);

        best = std::min(best, el.mean.total);
        best_history.push_back(best);
        if (cfg.plateau_patience > 0 && static_cast<int>(best_history.size()) > cfg.plateau_patience) {
            const double before = best_history[best_history.size() - 1 - static_cast<std::size_t>(cfg.plateau_patience)];
            if (before - best <= cfg.plateau_tol * std::abs(before)) {
                result.stopped_early = true;
                break;
            }
        }
    }
    result.flow = std::move(flow);
    return result;
}

} // namespace koopflow
