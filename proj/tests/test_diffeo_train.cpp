#include "koopflow/diffeo_train.hpp"
#include "koopflow/oracle.hpp"

#include <doctest.h>

#include <cmath>

using namespace koopflow;

namespace {

Vec v2(double a, double b)
{
    Vec x(2);
    x << a, b;
    return x;
}

const FlowArchitecture kSmall{2, 3, {24, 24}, 5.0};

Mat linear_A()
{
    Mat A(2, 2);
    A << -1.0, 0.4, 0.0, -0.5;
    return A;
}

TrajectoryDataset small_dataset(const VectorFieldSpec& sys, int n_traj, int steps, double dt, std::uint64_t seed = 0)
{
    const auto box = symmetric_box(2, 5.0);
    return generate_dataset(sys, box, boundary_starts(box, n_traj, seed), dt, steps);
}

double sup_error_vs_exact(const FlowModel& flow, int n)
{
    double worst = 0.0;
    for (const auto& x : grid_starts(symmetric_box(2, 5.0), n))
        worst = std::max(worst, (flow.forward(x) - exact_diffeo_ex1(x, -0.7, -0.3)).cwiseAbs().maxCoeff());
    return worst;
}

} // namespace

TEST_CASE("residual form names")
{
    CHECK(parse_residual_form("premultiplied") == ResidualForm::premultiplied);
    CHECK(parse_residual_form("inverse_jacobian") == ResidualForm::inverse_jacobian);
    CHECK(to_string(ResidualForm::inverse_jacobian) == "inverse_jacobian");
    CHECK_THROWS_AS(parse_residual_form("inverse"), ConfigError);
}

TEST_CASE("loss_terms")
{
    const FlowModel id = FlowModel::identity_initialized(FlowArchitecture{}, 0);
    SUBCASE("identity flow on linear data is exactly zero")
    {
        const auto sys = make_linear(linear_A());
        Rng rng(1);
        for (int i = 0; i < 50; ++i) {
            const Vec x = v2(rng.uniform(-5, 5), rng.uniform(-5, 5));
            for (auto form : {ResidualForm::inverse_jacobian, ResidualForm::premultiplied}) {
                const auto l = loss_terms(id, linear_A(), x, eval_rhs(sys, x), form);
                CHECK(l.total == 0.0);
            }
        }
    }
    SUBCASE("identity flow on ex1 at (2, 1)")
    {
        const auto sys = make_ex1(-0.7, -0.3);
        const Mat A = jacobian_linearization(sys);
        for (auto form : {ResidualForm::inverse_jacobian, ResidualForm::premultiplied}) {
            const auto l = loss_terms(id, A, v2(2, 1), eval_rhs(sys, v2(2, 1)), form);
            CHECK(l.conjugacy == doctest::Approx(1.44).epsilon(1e-14));
            CHECK(l.jacobian_at_origin == 0.0);
            CHECK(l.origin_fixed == 0.0);
            CHECK(l.total == l.conjugacy);
        }
    }
    SUBCASE("exact ex1 diffeomorphism has zero residual in both forms")
    {
        const auto sys = make_ex1(-0.7, -0.3);
        const Mat A = jacobian_linearization(sys);
        const Vec zero = Vec::Zero(2);
        Rng rng(2);
        for (int i = 0; i < 200; ++i) {
            const Vec x = v2(rng.uniform(-5, 5), rng.uniform(-5, 5));
            const Vec d = exact_diffeo_ex1(x, -0.7, -0.3);
            const Mat J = exact_diffeo_ex1_jacobian(x, -0.7, -0.3);
            const Mat J0 = exact_diffeo_ex1_jacobian(zero, -0.7, -0.3);
            for (auto form : {ResidualForm::inverse_jacobian, ResidualForm::premultiplied}) {
                const auto l = loss_terms(d, J, exact_diffeo_ex1(zero, -0.7, -0.3), J0, A, eval_rhs(sys, x), form);
                CHECK(std::sqrt(l.conjugacy) <= 1e-12);
                CHECK(l.jacobian_at_origin == 0.0);
                CHECK(l.origin_fixed == 0.0);
            }
        }
    }
    SUBCASE("boundary terms: squared Frobenius and squared Euclidean norms")
    {
        Mat J0(2, 2);
        J0 << 1.5, 0.2, -0.1, 1.0;
        const auto l = loss_terms(v2(0, 0), Mat::Identity(2, 2), v2(0.3, -0.4), J0, -Mat::Identity(2, 2), v2(0, 0),
                                  ResidualForm::premultiplied, LossWeights{2.0, 3.0, 5.0, 0.0});
        CHECK(l.jacobian_at_origin == doctest::Approx(0.25 + 0.04 + 0.01).epsilon(1e-14));
        CHECK(l.origin_fixed == doctest::Approx(0.25).epsilon(1e-14));
        CHECK(l.total == doctest::Approx(3.0 * 0.30 + 5.0 * 0.25).epsilon(1e-14));
    }
    SUBCASE("singular Jacobian in the inverse form")
    {
        Mat J = Mat::Zero(2, 2);
        J(0, 0) = 1.0;
        CHECK_THROWS_AS(loss_terms(v2(1, 1), J, v2(0, 0), Mat::Identity(2, 2), -Mat::Identity(2, 2), v2(1, 1),
                                   ResidualForm::inverse_jacobian),
                        NumericalError);
        CHECK_NOTHROW(loss_terms(v2(1, 1), J, v2(0, 0), Mat::Identity(2, 2), -Mat::Identity(2, 2), v2(1, 1),
                                 ResidualForm::premultiplied));
    }
}

TEST_CASE("zero sets of the two residual forms coincide")
{
    // Flows with a known zero residual: a constructed shear conjugating a quadratic system.
    // d(x) = (x1, x2 + k x1^2) conjugates xdot = (a x1, b (x2 + k x1^2) - 2 k a x1^2) to diag(a, b).
    const double a = -0.9, b = -0.4, k = 0.3;
    Mat A = Mat::Zero(2, 2);
    A.diagonal() << a, b;
    Rng rng(4);
    for (int i = 0; i < 200; ++i) {
        const Vec x = v2(rng.uniform(-5, 5), rng.uniform(-5, 5));
        const Vec d = v2(x(0), x(1) + k * x(0) * x(0));
        Mat J(2, 2);
        J << 1, 0, 2 * k * x(0), 1;
        const Vec xdot = v2(a * x(0), b * d(1) - 2 * k * a * x(0) * x(0));
        const auto pre = loss_terms(d, J, Vec::Zero(2), Mat::Identity(2, 2), A, xdot, ResidualForm::premultiplied);
        const auto inv = loss_terms(d, J, Vec::Zero(2), Mat::Identity(2, 2), A, xdot, ResidualForm::inverse_jacobian);
        CHECK(pre.conjugacy <= 1e-24);
        CHECK(inv.conjugacy <= 1e-24);
    }
}

TEST_CASE("batch_loss_gradient")
{
    const auto sys = make_ex1();
    const Mat A = jacobian_linearization(sys);
    const auto ds = small_dataset(sys, 3, 20, 0.065);
    const Mat X = ds.states_matrix().leftCols(12);
    const Mat Xd = ds.derivs_matrix().leftCols(12);
    FlowModel flow = FlowModel::identity_initialized(kSmall, 3);
    Rng rng(5);
    perturb_parameters(flow, rng, 0.02);

    SUBCASE("batch mean equals the mean of pointwise losses")
    {
        for (auto form : {ResidualForm::inverse_jacobian, ResidualForm::premultiplied}) {
            const auto ev = batch_loss_gradient(flow, A, X, Xd, form);
            double conj = 0.0;
            LossBreakdown last;
            for (Index i = 0; i < X.cols(); ++i) {
                last = loss_terms(flow, A, X.col(i), Xd.col(i), form);
                conj += last.conjugacy / static_cast<double>(X.cols());
            }
            CHECK(ev.loss.conjugacy == doctest::Approx(conj).epsilon(1e-12));
            CHECK(ev.loss.jacobian_at_origin == doctest::Approx(last.jacobian_at_origin).epsilon(1e-12));
            CHECK(ev.loss.origin_fixed == doctest::Approx(last.origin_fixed).epsilon(1e-12));
            CHECK(ev.loss.conjugacy >= 0.0);
            CHECK(ev.loss.jacobian_at_origin > 0.0);
        }
    }
    SUBCASE("relative weighting divides each residual by |xdot|^2 + eps")
    {
        LossWeights w;
        w.relative_eps = 0.01;
        for (auto form : {ResidualForm::inverse_jacobian, ResidualForm::premultiplied}) {
            const auto ev = batch_loss_gradient(flow, A, X, Xd, form, w);
            double conj = 0.0;
            for (Index i = 0; i < X.cols(); ++i)
                conj += loss_terms(flow, A, X.col(i), Xd.col(i), form).conjugacy /
                        (Xd.col(i).squaredNorm() + 0.01) / static_cast<double>(X.cols());
            CHECK(ev.loss.conjugacy == doctest::Approx(conj).epsilon(1e-12));
        }
    }
    SUBCASE("gradient matches finite differences of the full loss")
    {
        for (auto form : {ResidualForm::inverse_jacobian, ResidualForm::premultiplied}) {
            for (double eps : {0.0, 0.01}) {
                LossWeights w{1.0, 0.7, 1.3, eps};
                const auto ev = batch_loss_gradient(flow, A, X, Xd, form, w);
                const Vec p = flow.parameters();
                FlowModel probe = flow;
                Vec fd(60), an(60);
                Rng pick(6);
                for (int s = 0; s < 60; ++s) {
                    const auto i = static_cast<Index>(pick.below(static_cast<std::uint64_t>(p.size())));
                    Vec q = p;
                    q(i) += 1e-6;
                    probe.set_parameters(q);
                    const double lp = batch_loss_gradient(probe, A, X, Xd, form, w).loss.total;
                    q(i) -= 2e-6;
                    probe.set_parameters(q);
                    fd(s) = (lp - batch_loss_gradient(probe, A, X, Xd, form, w).loss.total) / 2e-6;
                    an(s) = ev.gradient(i);
                }
                CHECK(relative_error(an, fd) < 1e-4);
            }
        }
    }
    SUBCASE("identity flow on linear data has exactly zero gradient")
    {
        const auto lin = make_linear(linear_A());
        const auto lds = small_dataset(lin, 2, 10, 0.1);
        const FlowModel id = FlowModel::identity_initialized(kSmall, 1);
        for (auto form : {ResidualForm::inverse_jacobian, ResidualForm::premultiplied}) {
            const auto ev = batch_loss_gradient(id, linear_A(), lds.states_matrix(), lds.derivs_matrix(), form);
            CHECK(ev.loss.total == 0.0);
            CHECK(ev.gradient.isZero(0.0));
        }
    }
    SUBCASE("non-finite residual reports the batch index")
    {
        Mat bad = Xd;
        bad(1, 2) = std::nan("");
        CHECK_THROWS_WITH_AS(batch_loss_gradient(flow, A, X, bad, ResidualForm::inverse_jacobian),
                             doctest::Contains("batch index 2"), NumericalError);
        CHECK_THROWS_AS(batch_loss_gradient(flow, A, X, Xd.leftCols(3), ResidualForm::premultiplied), ConfigError);
    }
}

TEST_CASE("train")
{
    SUBCASE("linear system keeps the identity")
    {
        const auto lin = make_linear(linear_A());
        const auto ds = small_dataset(lin, 4, 49, 0.1);
        TrainConfig cfg;
        cfg.epochs = 3;
        cfg.seed = 2;
        for (auto form : {ResidualForm::inverse_jacobian, ResidualForm::premultiplied}) {
            cfg.residual_form = form;
            const auto res = train(FlowModel::identity_initialized(kSmall, 7), ds, linear_A(), cfg);
            CHECK(res.history.size() == 3);
            for (const auto& e : res.history)
                CHECK(e.mean.total <= 1e-20);
            double worst = 0.0;
            for (const auto& x : grid_starts(symmetric_box(2, 5.0), 20))
                worst = std::max(worst, (res.flow.forward(x) - x).norm());
            CHECK(worst <= 1e-6);
        }
    }
    SUBCASE("zero epochs returns the flow unchanged")
    {
        const auto ds = small_dataset(make_ex1(), 2, 10, 0.065);
        TrainConfig cfg;
        cfg.epochs = 0;
        FlowModel flow = FlowModel::identity_initialized(kSmall, 1);
        Rng rng(1);
        perturb_parameters(flow, rng, 0.01);
        const auto res = train(flow, ds, jacobian_linearization(make_ex1()), cfg);
        CHECK(res.history.empty());
        CHECK(res.flow.parameters() == flow.parameters());
    }
    SUBCASE("invalid configuration and inputs")
    {
        const auto ds = small_dataset(make_ex1(), 2, 10, 0.065);
        const Mat A = jacobian_linearization(make_ex1());
        const auto flow = FlowModel::identity_initialized(kSmall, 1);
        TrainConfig cfg;
        cfg.batch_size = 0;
        CHECK_THROWS_AS(train(flow, ds, A, cfg), ConfigError);
        cfg = {};
        cfg.lr = 0.0;
        CHECK_THROWS_AS(train(flow, ds, A, cfg), ConfigError);
        cfg = {};
        cfg.loss_weights.conjugacy = -1.0;
        CHECK_THROWS_AS(train(flow, ds, A, cfg), ConfigError);
        cfg = {};
        CHECK_THROWS_AS(train(flow, TrajectoryDataset{{}, make_ex1(), symmetric_box(2, 5.0), 0}, A, cfg), ConfigError);
        CHECK_THROWS_AS(train(flow, ds, Mat::Identity(2, 2), cfg), StabilityError);
    }
}

TEST_CASE("training on ex1 approaches the exact diffeomorphism")
{
    const auto sys = make_ex1();
    const Mat A = jacobian_linearization(sys);
    const auto ds = small_dataset(sys, 12, 99, 0.13, 3);

    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.lr = 3e-3;
    cfg.lr_final = 1e-4;
    cfg.seed = 4;
    cfg.residual_form = ResidualForm::inverse_jacobian;
    cfg.loss_weights.relative_eps = 1e-2;

    std::vector<double> sup;
    std::vector<double> total;
    auto run = [&](const FlowArchitecture& arch, bool record) {
        return train(FlowModel::identity_initialized(arch, 5), ds, A, cfg, [&](const EpochLoss& e, const FlowModel& f) {
            if (!record)
                return;
            total.push_back(e.mean.total);
            if (e.epoch % 10 == 0 || e.epoch == cfg.epochs - 1)
                sup.push_back(sup_error_vs_exact(f, 20));
        });
    };
    const auto narrow = run(FlowArchitecture{2, 4, {16, 16}, 5.0}, false);
    const auto wide = run(FlowArchitecture{2, 4, {32, 32}, 5.0}, true);

    const double initial = sup_error_vs_exact(FlowModel::identity_initialized(kSmall, 0), 20);
    CHECK(initial == doctest::Approx(25.0 * 3.0 / 11.0));
    CHECK(sup.back() < 0.2 * initial);
    CHECK(sup.back() < sup.front());

    // Running minimum of the epoch loss never increases, and the loss actually falls.
    double best = total.front();
    for (double t : total) {
        CHECK(std::min(best, t) <= best);
        best = std::min(best, t);
    }
    CHECK(best < 0.1 * total.front());

    // Doubling the width does not make the converged sup-error worse.
    CHECK(sup_error_vs_exact(wide.flow, 20) <= 1.1 * sup_error_vs_exact(narrow.flow, 20));
}

TEST_CASE("training is deterministic under a seed")
{
    const auto sys = make_ex1();
    const auto ds = small_dataset(sys, 3, 30, 0.065);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 9;
    const Mat A = jacobian_linearization(sys);
    const auto r1 = train(FlowModel::identity_initialized(kSmall, 3), ds, A, cfg);
    const auto r2 = train(FlowModel::identity_initialized(kSmall, 3), ds, A, cfg);
    CHECK(r1.flow.parameters() == r2.flow.parameters());
    REQUIRE(r1.history.size() == r2.history.size());
    for (std::size_t i = 0; i < r1.history.size(); ++i)
        CHECK(r1.history[i].mean.total == r2.history[i].mean.total);
    cfg.seed = 10;
    CHECK(train(FlowModel::identity_initialized(kSmall, 3), ds, A, cfg).flow.parameters() != r1.flow.parameters());
}

TEST_CASE("plateau stopping")
{
    const auto lin = make_linear(linear_A());
    const auto ds = small_dataset(lin, 2, 20, 0.1);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.plateau_patience = 3;
    const auto res = train(FlowModel::identity_initialized(kSmall, 1), ds, linear_A(), cfg);
    CHECK(res.stopped_early);
    CHECK(res.history.size() == 4);
}
