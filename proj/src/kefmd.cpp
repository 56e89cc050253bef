#include "koopflow/kefmd.hpp"

#include <Eigen/SVD>

#include <cmath>

namespace koopflow {

Mat fit_reconstruction(const Mat& X, const Mat& Z, double ridge, double cutoff, LeastSquaresInfo* info)
{
    if (X.cols() != Z.cols())
        throw ConfigError("fit_reconstruction: X and Z have different sample counts");
    if (X.cols() == 0)
        throw DegenerateDataError("fit_reconstruction: no samples");
    if (ridge < 0.0)
        throw ConfigError("fit_reconstruction: ridge must be non-negative");

    const Index D = Z.rows();
    // Solve Z^T V^T = X^T in the least-squares sense, optionally stacked with sqrt(ridge) I.
    Mat lhs = Z.transpose();
    Mat rhs = X.transpose();
    if (ridge > 0.0) {
        Mat l2(lhs.rows() + D, D);
        l2 << lhs, std::sqrt(ridge) * Mat::Identity(D, D);
        Mat r2(rhs.rows() + D, rhs.cols());
        r2 << rhs, Mat::Zero(D, rhs.cols());
        lhs = std::move(l2);
        rhs = std::move(r2);
    }
    Eigen::BDCSVD<Mat> svd(lhs, Eigen::ComputeThinU | Eigen::ComputeThinV);
    svd.setThreshold(cutoff);
    const Mat V = svd.solve(rhs).transpose();

    LeastSquaresInfo li;
    li.rank = svd.rank();
    li.unknowns = D;
    li.rank_deficient = li.rank < X.rows();
    li.residual_rms = std::sqrt((X - V * Z).squaredNorm() / static_cast<double>(X.size()));
    if (info)
        *info = li;
    return V;
}

Vec discretize(const Vec& lambdas, double dt)
{
    if (!(dt > 0.0))
        throw ConfigError("discretize: dt must be positive");
    return lambdas.unaryExpr([dt](double l) { return std::exp(l * dt); });
}

LiftedLtiModel build_kefmd(std::shared_ptr<const EigenfunctionLibrary> lift, const TrajectoryDataset& dataset,
                           double dt, double ridge)
{
    return build_kefmd(std::move(lift), dataset.states_matrix(), dt, ridge);
}

LiftedLtiModel build_kefmd(std::shared_ptr<const EigenfunctionLibrary> lift, const Mat& states, double dt,
                           double ridge)
{
    if (!lift)
        throw ConfigError("build_kefmd: missing eigenfunction library");
    LiftedLtiModel m;
    m.lambdas = lift->lambdas();
    m.lambdas_discrete = discretize(m.lambdas, dt);
    m.dt = dt;
    const Mat& X = states;
    const Mat Z = lift->lift_all(X);
    m.V = fit_reconstruction(X, Z, ridge, 1e-10, &m.fit);
    m.lift = std::move(lift);
    return m;
}

Mat evolve_lifted(const LiftedLtiModel& model, const Vec& z0, int k_steps)
{
    if (k_steps < 0)
        throw ConfigError("predict: k_steps must be non-negative");
    Mat out(model.V.rows(), k_steps + 1);
    Vec z = z0;
    for (int k = 0; k <= k_steps; ++k) {
        out.col(k) = model.V * z;
        z = z.cwiseProduct(model.lambdas_discrete);
    }
    return out;
}

Mat predict_trajectory(const LiftedLtiModel& model, const Vec& x0, int k_steps)
{
    return evolve_lifted(model, model.lift->lift(x0), k_steps);
}

Vec predict_derivative(const LiftedLtiModel& model, const Vec& x)
{
    return model.V * model.lambdas.cwiseProduct(model.lift->lift(x));
}

Vec constant_mode(const LiftedLtiModel& model)
{
    const auto& idx = model.lift->library().indices;
    for (Index i = 0; i < idx.rows(); ++i)
        if ((idx.row(i).array() == 0).all())
            return model.V.col(i);
    return Vec::Zero(model.V.rows());
}

} // namespace koopflow
